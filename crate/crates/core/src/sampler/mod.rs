//! Training-pair sampling over an annotated corpus, emitted as a manifest.
//!
//! Positive pairs take two frames of one instance less than
//! [`MAX_FRAME_GAP`] frames apart (or the same still twice). Negative pairs
//! take distinct instances of the same or of different categories. The
//! search side of every pair carries a drawn augmentation.

pub mod augment;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use augment::{
    apply_augmentation, augment, draw_augmentation, format_log, parse_log, AugOp, AugmentConfig,
    MotionBlurConfig, RgbImage,
};

use crate::embedding::BBox;
use crate::error::{Result, TrackError};

/// Positive video pairs satisfy `|frame_a - frame_b| < MAX_FRAME_GAP`.
pub const MAX_FRAME_GAP: u32 = 100;

/// File looked up when the corpus path is a directory.
pub const CORPUS_FILE: &str = "corpus.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemKind {
    VideoFrame,
    StillImage,
}

impl ItemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemKind::VideoFrame => "video_frame",
            ItemKind::StillImage => "still_image",
        }
    }
}

/// One corpus line: a single box of a single instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub item: String,
    pub kind: ItemKind,
    pub category: String,
    /// Set for video frames only.
    pub video: Option<(String, u32)>,
    pub instance: String,
    pub bbox: BBox,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    annotations: Vec<Annotation>,
}

fn field_err(line: usize, msg: impl fmt::Display) -> TrackError {
    TrackError::arg(format!("corpus line {line}: {msg}"))
}

fn parse_bbox(s: &str) -> Result<BBox> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| TrackError::arg(format!("bad box {s:?}")))?;
    if v.len() != 4 {
        return Err(TrackError::arg(format!("box needs 4 values, got {s:?}")));
    }
    BBox::new(v[0], v[1], v[2], v[3])
}

fn fmt_bbox(b: &BBox) -> String {
    format!("{},{},{},{}", b.cx, b.cy, b.w, b.h)
}

impl Corpus {
    pub fn new(annotations: Vec<Annotation>) -> Result<Self> {
        let mut items: BTreeMap<&str, &Annotation> = BTreeMap::new();
        for a in &annotations {
            if a.item.is_empty() || a.instance.is_empty() || a.category.is_empty() {
                return Err(TrackError::arg(format!("item {:?}: empty identifier", a.item)));
            }
            if (a.kind == ItemKind::VideoFrame) != a.video.is_some() {
                return Err(TrackError::arg(format!(
                    "item {:?}: video id and frame number go with video frames only",
                    a.item
                )));
            }
            if let Some(first) = items.insert(&a.item, a) {
                if first.kind != a.kind || first.video != a.video || first.payload != a.payload {
                    return Err(TrackError::arg(format!("item {:?}: inconsistent lines", a.item)));
                }
            }
        }
        Ok(Self { annotations })
    }

    /// Tab-separated lines:
    /// `item kind category video frame instance cx,cy,w,h payload`, with `-`
    /// for the video fields of stills. Blank and `#` lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut annotations = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 8 {
                return Err(field_err(n, format!("expected 8 tab-separated fields, got {}", f.len())));
            }
            let kind = match f[1] {
                "video_frame" => ItemKind::VideoFrame,
                "still_image" => ItemKind::StillImage,
                k => return Err(field_err(n, format!("unknown kind {k:?}"))),
            };
            let video = match kind {
                ItemKind::VideoFrame => {
                    let frame = f[4]
                        .parse()
                        .map_err(|_| field_err(n, format!("bad frame number {:?}", f[4])))?;
                    Some((f[3].to_string(), frame))
                }
                ItemKind::StillImage => None,
            };
            annotations.push(Annotation {
                item: f[0].to_string(),
                kind,
                category: f[2].to_string(),
                video,
                instance: f[5].to_string(),
                bbox: parse_bbox(f[6]).map_err(|e| field_err(n, e))?,
                payload: f[7].to_string(),
            });
        }
        Self::new(annotations)
    }

    /// Reads a manifest file, or `corpus.tsv` inside a directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut path: PathBuf = path.as_ref().into();
        if path.is_dir() {
            path.push(CORPUS_FILE);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| TrackError::io(&path, e))?;
        Self::parse(&text)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for a in &self.annotations {
            let (video, frame) = match &a.video {
                Some((v, f)) => (v.clone(), f.to_string()),
                None => ("-".into(), "-".into()),
            };
            s.push_str(&format!(
                "{}\t{}\t{}\t{video}\t{frame}\t{}\t{}\t{}\n",
                a.item,
                a.kind.as_str(),
                a.category,
                a.instance,
                fmt_bbox(&a.bbox),
                a.payload
            ));
        }
        s
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    /// The annotation a pair side points at.
    pub fn resolve(&self, r: &BoxRef) -> Option<&Annotation> {
        self.annotations.iter().find(|a| a.item == r.item && a.bbox == r.bbox)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairLabel {
    Positive,
    NegativeSameCategory,
    NegativeDifferentCategory,
}

impl PairLabel {
    pub const ALL: [PairLabel; 3] = [
        PairLabel::Positive,
        PairLabel::NegativeSameCategory,
        PairLabel::NegativeDifferentCategory,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PairLabel::Positive => "positive",
            PairLabel::NegativeSameCategory => "negative_same_category",
            PairLabel::NegativeDifferentCategory => "negative_different_category",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxRef {
    pub item: String,
    pub bbox: BBox,
}

impl BoxRef {
    fn of(a: &Annotation) -> Self {
        Self {
            item: a.item.clone(),
            bbox: a.bbox,
        }
    }
}

impl fmt::Display for BoxRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.item, fmt_bbox(&self.bbox))
    }
}

impl BoxRef {
    pub fn parse(s: &str) -> Result<Self> {
        let (item, b) = s
            .rsplit_once(':')
            .ok_or_else(|| TrackError::arg(format!("expected item:box, got {s:?}")))?;
        Ok(Self {
            item: item.to_string(),
            bbox: parse_bbox(b)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub label: PairLabel,
    pub exemplar: BoxRef,
    /// Refers to the unaugmented box; `augmentation` says how it moved.
    pub search: BoxRef,
    pub augmentation: Vec<AugOp>,
}

impl PairRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            self.label.as_str(),
            self.exemplar,
            self.search,
            format_log(&self.augmentation)
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(TrackError::arg(format!("expected 4 tab-separated fields, got {}", f.len())));
        }
        Ok(Self {
            label: PairLabel::parse(f[0]).ok_or_else(|| TrackError::arg(format!("unknown label {:?}", f[0])))?,
            exemplar: BoxRef::parse(f[1])?,
            search: BoxRef::parse(f[2])?,
            augmentation: parse_log(f[3])?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Relative draw weights for positive, same-category and
    /// different-category pairs.
    pub ratio: [u32; 3],
    pub augment: AugmentConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            ratio: [2, 1, 1],
            augment: AugmentConfig::default(),
        }
    }
}

fn frame_gap(a: &Annotation, b: &Annotation) -> Option<u32> {
    match (&a.video, &b.video) {
        (Some((va, fa)), Some((vb, fb))) if va == vb => Some(fa.abs_diff(*fb)),
        _ => None,
    }
}

fn positive_partners<'a>(corpus: &'a Corpus, a: &Annotation) -> Vec<&'a Annotation> {
    match a.kind {
        ItemKind::StillImage => Vec::new(),
        ItemKind::VideoFrame => corpus
            .annotations
            .iter()
            .filter(|b| {
                b.instance == a.instance
                    && b.item != a.item
                    && frame_gap(a, b).is_some_and(|g| g < MAX_FRAME_GAP)
            })
            .collect(),
    }
}

fn pick<'a, R: Rng + ?Sized>(v: &[&'a Annotation], rng: &mut R) -> &'a Annotation {
    v.choose(rng).expect("non-empty")
}

fn empty_corpus() -> TrackError {
    TrackError::arg("corpus has no annotations")
}

fn with_search_aug<R: Rng + ?Sized>(
    label: PairLabel,
    ex: &Annotation,
    se: &Annotation,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> PairRecord {
    PairRecord {
        label,
        exemplar: BoxRef::of(ex),
        search: BoxRef::of(se),
        augmentation: draw_augmentation(cfg, rng),
    }
}

/// A video frame pairs with another frame of its instance when one exists
/// within the gap, and with itself otherwise; a still pairs with itself.
pub fn positive_pair<R: Rng + ?Sized>(corpus: &Corpus, cfg: &AugmentConfig, rng: &mut R) -> Result<PairRecord> {
    let all: Vec<&Annotation> = corpus.annotations.iter().collect();
    if all.is_empty() {
        return Err(empty_corpus());
    }
    let ex = pick(&all, rng);
    let partners = positive_partners(corpus, ex);
    let se = if partners.is_empty() { ex } else { pick(&partners, rng) };
    Ok(with_search_aug(PairLabel::Positive, ex, se, cfg, rng))
}

pub fn negative_pair<R: Rng + ?Sized>(
    corpus: &Corpus,
    same_category: bool,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<PairRecord> {
    if corpus.is_empty() {
        return Err(empty_corpus());
    }
    let partners = |a: &Annotation| -> Vec<&Annotation> {
        corpus
            .annotations
            .iter()
            .filter(|b| {
                if same_category {
                    b.category == a.category && b.instance != a.instance
                } else {
                    b.category != a.category
                }
            })
            .collect()
    };
    let anchors: Vec<&Annotation> = corpus
        .annotations
        .iter()
        .filter(|a| !partners(a).is_empty())
        .collect();
    if anchors.is_empty() {
        let (label, need) = if same_category {
            (PairLabel::NegativeSameCategory, "two instances of one category")
        } else {
            (PairLabel::NegativeDifferentCategory, "two categories")
        };
        return Err(TrackError::arg(format!("{} pairs need {need}", label.as_str())));
    }
    let ex = pick(&anchors, rng);
    let se = pick(&partners(ex), rng);
    let label = if same_category {
        PairLabel::NegativeSameCategory
    } else {
        PairLabel::NegativeDifferentCategory
    };
    Ok(with_search_aug(label, ex, se, cfg, rng))
}

pub fn sample_positive_pair(corpus: &Corpus, cfg: &AugmentConfig, seed: u64) -> Result<PairRecord> {
    positive_pair(corpus, cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_negative_pair(corpus: &Corpus, same_category: bool, cfg: &AugmentConfig, seed: u64) -> Result<PairRecord> {
    negative_pair(corpus, same_category, cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Draws `count` pairs. Pair `i` uses stream `i` of the seeded generator, so
/// any subrange can be drawn independently with the same result.
pub fn sample_pairs(corpus: &Corpus, count: usize, cfg: &SamplerConfig, seed: u64) -> Result<Vec<PairRecord>> {
    cfg.augment.validate()?;
    let total: u32 = cfg.ratio.iter().sum();
    if total == 0 {
        return Err(TrackError::arg("pair ratio is all zero"));
    }
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut r = rng.gen_range(0..total);
            let label = PairLabel::ALL
                .into_iter()
                .zip(cfg.ratio)
                .find(|&(_, w)| {
                    if r < w {
                        true
                    } else {
                        r -= w;
                        false
                    }
                })
                .map(|(l, _)| l)
                .expect("r < total");
            match label {
                PairLabel::Positive => positive_pair(corpus, &cfg.augment, &mut rng),
                PairLabel::NegativeSameCategory => negative_pair(corpus, true, &cfg.augment, &mut rng),
                PairLabel::NegativeDifferentCategory => negative_pair(corpus, false, &cfg.augment, &mut rng),
            }
        })
        .collect()
}

/// Checks both sides resolve and that instance and category relations
/// match the label.
pub fn validate_pair(corpus: &Corpus, r: &PairRecord) -> Result<()> {
    let bad = |msg: &str| Err(TrackError::arg(format!("{} pair {} / {}: {msg}", r.label.as_str(), r.exemplar, r.search)));
    let (Some(a), Some(b)) = (corpus.resolve(&r.exemplar), corpus.resolve(&r.search)) else {
        return bad("box not in corpus");
    };
    match r.label {
        PairLabel::Positive => {
            if a.instance != b.instance {
                return bad("instances differ");
            }
            if a.item != b.item && !frame_gap(a, b).is_some_and(|g| g < MAX_FRAME_GAP) {
                return bad("frames too far apart");
            }
        }
        PairLabel::NegativeSameCategory => {
            if a.category != b.category || a.instance == b.instance {
                return bad("need same category, distinct instances");
            }
        }
        PairLabel::NegativeDifferentCategory => {
            if a.category == b.category || a.instance == b.instance {
                return bad("need different categories");
            }
        }
    }
    Ok(())
}

pub fn manifest_to_string(records: &[PairRecord]) -> String {
    records.iter().map(|r| r.to_line() + "\n").collect()
}

pub fn emit_manifest(records: &[PairRecord], path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    std::fs::write(path, manifest_to_string(records)).map_err(|e| TrackError::io(path, e))?;
    Ok(records.len())
}

pub fn parse_manifest(text: &str) -> Result<Vec<PairRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| PairRecord::parse_line(l).map_err(|e| TrackError::arg(format!("manifest line {}: {e}", i + 1))))
        .collect()
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PairRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| TrackError::io(path, e))?;
    parse_manifest(&text)
}

/// Per-label counts, for summaries.
pub fn label_counts(records: &[PairRecord]) -> BTreeMap<&'static str, usize> {
    let mut m = BTreeMap::new();
    for r in records {
        *m.entry(r.label.as_str()).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn video(item: &str, cat: &str, vid: &str, frame: u32, inst: &str) -> Annotation {
        Annotation {
            item: item.into(),
            kind: ItemKind::VideoFrame,
            category: cat.into(),
            video: Some((vid.into(), frame)),
            instance: inst.into(),
            bbox: BBox::new(50.0, 40.0, 20.0, 10.0).unwrap(),
            payload: format!("{item}.png"),
        }
    }

    fn still(item: &str, cat: &str, inst: &str) -> Annotation {
        Annotation {
            item: item.into(),
            kind: ItemKind::StillImage,
            category: cat.into(),
            video: None,
            instance: inst.into(),
            bbox: BBox::new(30.0, 30.0, 12.0, 12.0).unwrap(),
            payload: format!("{item}.jpg"),
        }
    }

    #[test]
    fn corpus_tsv_roundtrip() {
        let c = Corpus::new(vec![video("v0f3", "car", "v0", 3, "car1"), still("s1", "dog", "dog1")]).unwrap();
        let text = c.to_tsv();
        assert!(text.contains("s1\tstill_image\tdog\t-\t-\tdog1\t30,30,12,12\ts1.jpg\n"));
        assert_eq!(Corpus::parse(&text).unwrap(), c);
        assert!(Corpus::parse("a\tvideo_frame\tc\tv\tx\ti\t1,1,1,1\tp").is_err());
        assert!(Corpus::parse("a\tstill_image\tc\t-\t-\ti\t1,1,1\tp").is_err());
        assert!(Corpus::parse("# only a comment\n").unwrap().is_empty());
    }

    #[test]
    fn single_still_pairs_with_itself() {
        let c = Corpus::new(vec![still("s", "dog", "d")]).unwrap();
        let p = sample_positive_pair(&c, &AugmentConfig::default(), 1).unwrap();
        assert_eq!(p.exemplar, p.search);
        assert!(p.augmentation.len() >= 2);
        validate_pair(&c, &p).unwrap();
    }

    #[test]
    fn frame_gap_respected() {
        let c = Corpus::new(vec![
            video("f0", "car", "v", 0, "c"),
            video("f50", "car", "v", 50, "c"),
            video("f150", "car", "v", 150, "c"),
        ])
        .unwrap();
        for seed in 0..500 {
            let p = sample_positive_pair(&c, &AugmentConfig::default(), seed).unwrap();
            let pair = (p.exemplar.item.as_str(), p.search.item.as_str());
            assert!(pair != ("f0", "f150") && pair != ("f150", "f0"), "{pair:?}");
            validate_pair(&c, &p).unwrap();
        }
    }

    #[test]
    fn negative_modes() {
        let two = Corpus::new(vec![still("a", "cat", "a1"), still("b", "dog", "b1")]).unwrap();
        let p = sample_negative_pair(&two, false, &AugmentConfig::default(), 3).unwrap();
        let cats: BTreeSet<_> = [&p.exemplar.item, &p.search.item].into_iter().collect();
        assert_eq!(cats.len(), 2);
        let err = sample_negative_pair(&two, true, &AugmentConfig::default(), 3).unwrap_err();
        assert!(err.to_string().contains("negative_same_category"));
        let one = Corpus::new(vec![still("a", "cat", "a1")]).unwrap();
        assert!(sample_negative_pair(&one, false, &AugmentConfig::default(), 0).is_err());
        assert!(sample_positive_pair(&Corpus::default(), &AugmentConfig::default(), 0).is_err());
    }

    #[test]
    fn validator_catches_mislabels() {
        let c = Corpus::new(vec![still("a", "cat", "a1"), still("b", "cat", "b1"), still("d", "dog", "d1")]).unwrap();
        let r = |label, e: &str, s: &str| PairRecord {
            label,
            exemplar: BoxRef::of(c.annotations.iter().find(|a| a.item == e).unwrap()),
            search: BoxRef::of(c.annotations.iter().find(|a| a.item == s).unwrap()),
            augmentation: vec![],
        };
        assert!(validate_pair(&c, &r(PairLabel::Positive, "a", "b")).is_err());
        assert!(validate_pair(&c, &r(PairLabel::NegativeSameCategory, "a", "d")).is_err());
        assert!(validate_pair(&c, &r(PairLabel::NegativeDifferentCategory, "a", "b")).is_err());
        validate_pair(&c, &r(PairLabel::NegativeSameCategory, "a", "b")).unwrap();
        validate_pair(&c, &r(PairLabel::NegativeDifferentCategory, "b", "d")).unwrap();
        let mut missing = r(PairLabel::Positive, "a", "a");
        missing.search.bbox.cx += 1.0;
        assert!(validate_pair(&c, &missing).is_err());
    }

    #[test]
    fn manifest_lines() {
        let c = Corpus::new(vec![
            video("v:0", "car", "v", 0, "c1"),
            video("v:1", "car", "v", 1, "c2"),
            still("s", "dog", "d"),
        ])
        .unwrap();
        let cfg = AugmentConfig::default();
        let recs = vec![
            sample_positive_pair(&c, &cfg, 0).unwrap(),
            sample_negative_pair(&c, true, &cfg, 0).unwrap(),
            sample_negative_pair(&c, false, &cfg, 0).unwrap(),
        ];
        let text = manifest_to_string(&recs);
        let labels: BTreeSet<_> = text.lines().map(|l| l.split('\t').next().unwrap()).collect();
        assert_eq!(labels.len(), 3);
        assert_eq!(parse_manifest(&text).unwrap(), recs);
        assert_eq!(manifest_to_string(&[]), "");
    }

    #[test]
    fn ratio_and_streams() {
        let c = Corpus::new(vec![
            still("a", "cat", "a1"),
            still("b", "cat", "b1"),
            still("d", "dog", "d1"),
        ])
        .unwrap();
        let cfg = SamplerConfig::default();
        let all = sample_pairs(&c, 4000, &cfg, 11).unwrap();
        let counts = label_counts(&all);
        let pos = counts["positive"] as f64 / 4000.0;
        assert!((pos - 0.5).abs() < 0.04, "{pos}");
        // stream i does not depend on how many pairs precede it
        assert_eq!(sample_pairs(&c, 10, &cfg, 11).unwrap()[..], all[..10]);
        let only_pos = SamplerConfig {
            ratio: [1, 0, 0],
            ..cfg.clone()
        };
        assert!(sample_pairs(&c, 50, &only_pos, 1).unwrap().iter().all(|r| r.label == PairLabel::Positive));
        assert!(sample_pairs(&c, 1, &SamplerConfig { ratio: [0; 3], ..cfg }, 1).is_err());
    }
}
