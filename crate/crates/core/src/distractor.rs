//! Distractor-aware re-ranking and incremental template learning.
//!
//! Re-ranking scores a candidate `p` as
//! `f(z, p) - alpha_hat * sum_i(alpha_i * f(d_i, p)) / sum_i(alpha_i)`.
//! Correlation is linear, so the same ranking comes from correlating `p`
//! once against the composite `z - alpha_hat * sum_i(alpha_i * d_i) / sum_i(alpha_i)`.
//! [`rerank_direct`] evaluates the first form and [`rerank_factored`] the
//! second; [`CompositeTemplates`] accumulates the composite across frames
//! with weights from [`beta_weight`].

use crate::corr::{correlate_aligned, linear_combine, FeatureMap};
use crate::error::{Result, TrackError};
use crate::proposals::{rank_order, Proposal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RerankConfig {
    /// Overall influence of the distractor term.
    pub alpha_hat: f64,
    /// Weight given to every collected distractor.
    pub default_alpha: f64,
    /// Similarity a non-target proposal needs to count as a distractor.
    pub distractor_threshold: f64,
    /// Learning rate behind the per-frame template weights.
    pub eta: f64,
    pub bias: f64,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            alpha_hat: 0.5,
            default_alpha: 1.0,
            distractor_threshold: 0.2,
            eta: 0.01,
            bias: 0.0,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_hat >= 0.0) || !(self.default_alpha >= 0.0) {
            return Err(TrackError::arg("alpha weights must be non-negative"));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(TrackError::arg(format!("eta {} outside (0, 1)", self.eta)));
        }
        if !self.bias.is_finite() || !self.distractor_threshold.is_finite() {
            return Err(TrackError::arg("bias and threshold must be finite"));
        }
        Ok(())
    }
}

/// Weighted distractor embeddings collected in one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistractorSet {
    entries: Vec<(FeatureMap, f64)>,
}

impl DistractorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, embedding: FeatureMap, alpha: f64) -> Result<()> {
        if !(alpha >= 0.0) {
            return Err(TrackError::arg(format!("distractor weight {alpha} must be >= 0")));
        }
        if let Some((first, _)) = self.entries.first() {
            if !first.same_dims(&embedding) {
                return Err(TrackError::dim(format!(
                    "distractor dims {:?} vs {:?}",
                    embedding.dims(),
                    first.dims()
                )));
            }
        }
        self.entries.push((embedding, alpha));
        Ok(())
    }

    /// Distractors from proposals whose embeddings have been filled.
    pub fn from_proposals<'a>(proposals: impl IntoIterator<Item = &'a Proposal>, alpha: f64) -> Result<Self> {
        let mut set = Self::new();
        for p in proposals {
            let emb = p
                .embedding
                .clone()
                .ok_or_else(|| TrackError::arg("distractor proposal has no embedding"))?;
            set.push(emb, alpha)?;
        }
        Ok(set)
    }

    pub fn entries(&self) -> &[(FeatureMap, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn alpha_sum(&self) -> f64 {
        self.entries.iter().map(|(_, a)| a).sum()
    }

    /// True when the set contributes a distractor term (non-empty, positive weight).
    pub fn is_active(&self) -> bool {
        self.alpha_sum() > 0.0
    }

    /// `sum_i alpha_i * d_i`, or `None` for an empty set.
    pub fn weighted_sum(&self) -> Option<FeatureMap> {
        if self.entries.is_empty() {
            return None;
        }
        let terms: Vec<(&FeatureMap, f64)> = self.entries.iter().map(|(m, a)| (m, *a)).collect();
        Some(linear_combine(&terms).expect("entries share dims"))
    }

    fn check_against(&self, exemplar: &FeatureMap) -> Result<()> {
        match self.entries.first() {
            Some((d, _)) if !d.same_dims(exemplar) => Err(TrackError::dim(format!(
                "distractor dims {:?} vs exemplar {:?}",
                d.dims(),
                exemplar.dims()
            ))),
            _ => Ok(()),
        }
    }
}

/// Highest-scoring survivor becomes the target; every other survivor with
/// `score > h` is a distractor.
pub fn select_target_and_distractors(mut survivors: Vec<Proposal>, h: f64) -> Result<(Proposal, Vec<Proposal>)> {
    if survivors.is_empty() {
        return Err(TrackError::NoCandidates);
    }
    survivors.sort_by(rank_order);
    let target = survivors.remove(0);
    let distractors = survivors.into_iter().filter(|p| p.score > h).collect();
    Ok((target, distractors))
}

/// Result of a re-ranking pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Reranked {
    /// Index into the candidate list.
    pub best: usize,
    /// One score per candidate, in input order.
    pub scores: Vec<f64>,
}

fn candidate_embeddings<'a>(candidates: &'a [Proposal], exemplar: &FeatureMap) -> Result<Vec<&'a FeatureMap>> {
    if candidates.is_empty() {
        return Err(TrackError::NoCandidates);
    }
    candidates
        .iter()
        .map(|p| {
            let e = p
                .embedding
                .as_ref()
                .ok_or_else(|| TrackError::arg("candidate proposal has no embedding"))?;
            if !e.same_dims(exemplar) {
                return Err(TrackError::dim(format!(
                    "candidate dims {:?} vs exemplar {:?}",
                    e.dims(),
                    exemplar.dims()
                )));
            }
            Ok(e)
        })
        .collect()
}

/// Argmax with ties going to the lower cell index.
fn pick_best(candidates: &[Proposal], scores: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..scores.len() {
        let better = scores[i] > scores[best]
            || (scores[i] == scores[best] && candidates[i].cell < candidates[best].cell);
        if better {
            best = i;
        }
    }
    best
}

/// Scores every candidate against the exemplar and each distractor
/// separately: `n + 1` correlations per candidate.
pub fn rerank_direct(
    exemplar: &FeatureMap,
    distractors: &DistractorSet,
    candidates: &[Proposal],
    cfg: &RerankConfig,
) -> Result<Reranked> {
    distractors.check_against(exemplar)?;
    let embs = candidate_embeddings(candidates, exemplar)?;
    let alpha_sum = distractors.alpha_sum();
    let mut scores = Vec::with_capacity(embs.len());
    for p in embs {
        let mut s = correlate_aligned(exemplar, p, cfg.bias)?;
        if alpha_sum > 0.0 {
            let mut acc = 0.0;
            for (d, alpha) in distractors.entries() {
                acc += alpha * correlate_aligned(d, p, cfg.bias)?;
            }
            s -= cfg.alpha_hat * acc / alpha_sum;
        }
        scores.push(s);
    }
    Ok(Reranked {
        best: pick_best(candidates, &scores),
        scores,
    })
}

/// The composite template of the factored form, built once per distractor
/// set and then correlated once per candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredQuery {
    composite: FeatureMap,
    bias: f64,
}

impl FactoredQuery {
    /// With an active distractor set the bias only adds the constant
    /// `b * (1 - alpha_hat)` to every candidate, so it is dropped; without
    /// one the score is the plain biased similarity.
    pub fn build(exemplar: &FeatureMap, distractors: &DistractorSet, cfg: &RerankConfig) -> Result<Self> {
        distractors.check_against(exemplar)?;
        let alpha_sum = distractors.alpha_sum();
        if alpha_sum > 0.0 {
            let mut terms: Vec<(&FeatureMap, f64)> = Vec::with_capacity(distractors.len() + 1);
            terms.push((exemplar, 1.0));
            let scale = cfg.alpha_hat / alpha_sum;
            terms.extend(distractors.entries().iter().map(|(d, a)| (d, -scale * a)));
            Ok(Self {
                composite: linear_combine(&terms)?,
                bias: 0.0,
            })
        } else {
            Ok(Self {
                composite: exemplar.clone(),
                bias: cfg.bias,
            })
        }
    }

    /// Factored query over accumulated templates plus the current frame's
    /// distractors. The bias is dropped whenever any distractor weight is
    /// involved, as in [`FactoredQuery::build`].
    pub fn from_templates(ct: &CompositeTemplates, current: &DistractorSet, cfg: &RerankConfig) -> Result<Self> {
        let active = ct.has_distractors() || current.is_active();
        Ok(Self {
            composite: ct.query_with(current, cfg)?,
            bias: if active { 0.0 } else { cfg.bias },
        })
    }

    pub fn composite(&self) -> &FeatureMap {
        &self.composite
    }

    pub fn score_one(&self, embedding: &FeatureMap) -> Result<f64> {
        correlate_aligned(&self.composite, embedding, self.bias)
    }

    /// One correlation per candidate, independent of the distractor count.
    pub fn score(&self, candidates: &[Proposal]) -> Result<Reranked> {
        let embs = candidate_embeddings(candidates, &self.composite)?;
        let scores = embs
            .into_iter()
            .map(|p| self.score_one(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Reranked {
            best: pick_best(candidates, &scores),
            scores,
        })
    }
}

/// Factored re-ranking. Scores equal [`rerank_direct`]'s minus
/// `b * (1 - alpha_hat)` when distractors are present, and match exactly
/// otherwise; the argmax is the same either way.
pub fn rerank_factored(
    exemplar: &FeatureMap,
    distractors: &DistractorSet,
    candidates: &[Proposal],
    cfg: &RerankConfig,
) -> Result<Reranked> {
    FactoredQuery::build(exemplar, distractors, cfg)?.score(candidates)
}

/// Template weight of frame `t`: `sum_{i=0}^{t-1} r^i` with `r = eta / (1 - eta)`.
pub fn beta_weight(t: u64, eta: f64) -> Result<f64> {
    if t < 1 {
        return Err(TrackError::arg("frame index t must be >= 1"));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(TrackError::arg(format!("eta {eta} outside (0, 1)")));
    }
    let r = eta / (1.0 - eta);
    if t == 1 {
        return Ok(1.0);
    }
    if (1.0 - r).abs() < 1e-6 {
        // Geometric closed form is ill-conditioned next to r = 1.
        let mut sum = 0.0;
        let mut term = 1.0;
        for _ in 0..t {
            sum += term;
            term *= r;
        }
        return Ok(sum);
    }
    let exp = i32::try_from(t).unwrap_or(i32::MAX);
    Ok((1.0 - r.powi(exp)) / (1.0 - r))
}

/// Running weighted sums behind the incrementally learned query.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeTemplates {
    target_num: FeatureMap,
    beta_sum: f64,
    distractor_num: FeatureMap,
    distractor_den: f64,
    frames: u64,
}

impl CompositeTemplates {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            target_num: FeatureMap::zeros(width, height, channels),
            beta_sum: 0.0,
            distractor_num: FeatureMap::zeros(width, height, channels),
            distractor_den: 0.0,
            frames: 0,
        }
    }

    pub fn like(template: &FeatureMap) -> Self {
        let (w, h, c) = template.dims();
        Self::new(w, h, c)
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn beta_sum(&self) -> f64 {
        self.beta_sum
    }

    pub fn distractor_den(&self) -> f64 {
        self.distractor_den
    }

    pub fn target_num(&self) -> &FeatureMap {
        &self.target_num
    }

    pub fn distractor_num(&self) -> &FeatureMap {
        &self.distractor_num
    }

    /// Absorbs one confident frame.
    pub fn update(&mut self, target: &FeatureMap, distractors: &DistractorSet, cfg: &RerankConfig) -> Result<()> {
        if !target.same_dims(&self.target_num) {
            return Err(TrackError::dim(format!(
                "target dims {:?} vs templates {:?}",
                target.dims(),
                self.target_num.dims()
            )));
        }
        distractors.check_against(target)?;
        let beta = beta_weight(self.frames + 1, cfg.eta)?;
        self.frames += 1;
        self.beta_sum += beta;
        for (acc, v) in self.target_num.data_mut().iter_mut().zip(target.data()) {
            *acc += beta * v;
        }
        if let Some(sum) = distractors.weighted_sum() {
            let scale = beta * cfg.alpha_hat;
            for (acc, v) in self.distractor_num.data_mut().iter_mut().zip(sum.data()) {
                *acc += scale * v;
            }
            self.distractor_den += beta * distractors.alpha_sum();
        }
        Ok(())
    }

    /// Beta-weighted average of the absorbed target templates.
    pub fn target_template(&self) -> Result<FeatureMap> {
        if self.frames == 0 {
            return Err(TrackError::Uninitialized);
        }
        linear_combine(&[(&self.target_num, 1.0 / self.beta_sum)])
    }

    /// Target average minus the weighted distractor average; the second
    /// term is zero while no distractor weight has been absorbed.
    pub fn query(&self) -> Result<FeatureMap> {
        if self.frames == 0 {
            return Err(TrackError::Uninitialized);
        }
        if self.distractor_den > 0.0 {
            linear_combine(&[
                (&self.target_num, 1.0 / self.beta_sum),
                (&self.distractor_num, -1.0 / self.distractor_den),
            ])
        } else {
            self.target_template()
        }
    }
}

impl CompositeTemplates {
    /// Query with `current` counted as the next frame's distractors; the
    /// target average is left as it is.
    pub fn query_with(&self, current: &DistractorSet, cfg: &RerankConfig) -> Result<FeatureMap> {
        if self.frames == 0 {
            return Err(TrackError::Uninitialized);
        }
        current.check_against(&self.target_num)?;
        let Some(sum) = current.weighted_sum() else {
            return self.query();
        };
        let beta = beta_weight(self.frames + 1, cfg.eta)?;
        let den = self.distractor_den + beta * current.alpha_sum();
        if !(den > 0.0) {
            return self.query();
        }
        linear_combine(&[
            (&self.target_num, 1.0 / self.beta_sum),
            (&self.distractor_num, -1.0 / den),
            (&sum, -beta * cfg.alpha_hat / den),
        ])
    }

    /// True once any distractor weight has been absorbed.
    pub fn has_distractors(&self) -> bool {
        self.distractor_den > 0.0
    }
}

/// Functional form of [`CompositeTemplates::update`].
pub fn update_templates(
    ct: &CompositeTemplates,
    z_t: &FeatureMap,
    distractors: &DistractorSet,
    cfg: &RerankConfig,
) -> Result<CompositeTemplates> {
    let mut next = ct.clone();
    next.update(z_t, distractors, cfg)?;
    Ok(next)
}

pub fn composite_query(ct: &CompositeTemplates) -> Result<FeatureMap> {
    ct.query()
}

/// Maps raw correlation scores into `[0, 1]`.
///
/// A raw score is first divided by a reference score and the ratio is
/// passed through a logistic curve rescaled so that ratio 0 maps to 0 and
/// ratio 1 maps to exactly 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    reference: f64,
    steepness: f64,
}

impl Calibration {
    pub fn new(reference: f64, steepness: f64) -> Result<Self> {
        if !(reference > 0.0) || !reference.is_finite() {
            return Err(TrackError::arg(format!(
                "calibration reference must be positive, got {reference}"
            )));
        }
        if !(steepness > 0.0) {
            return Err(TrackError::arg("calibration steepness must be positive"));
        }
        Ok(Self { reference, steepness })
    }

    /// Calibration whose reference is the exemplar's similarity to itself.
    pub fn from_exemplar(exemplar: &FeatureMap, bias: f64, steepness: f64) -> Result<Self> {
        Self::new(correlate_aligned(exemplar, exemplar, bias)?, steepness)
    }

    pub fn reference(&self) -> f64 {
        self.reference
    }

    pub fn steepness(&self) -> f64 {
        self.steepness
    }

    pub fn calibrate(&self, raw: f64) -> f64 {
        squash(raw / self.reference, self.steepness)
    }
}

/// Rescaled logistic: 0 at ratio 0, exactly 1 at ratio 1, clamped to `[0, 1]`.
pub fn squash(ratio: f64, steepness: f64) -> f64 {
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    let lo = sigmoid(-steepness / 2.0);
    let hi = sigmoid(steepness / 2.0);
    if ratio.is_nan() {
        return 0.0;
    }
    ((sigmoid(steepness * (ratio - 0.5)) - lo) / (hi - lo)).clamp(0.0, 1.0)
}
