mod common;

use common::{nms_oracle, proposal, random_map, rel_close, xcorr_oracle};
use datrack::corr::{correlate_aligned, linear_combine, xcorr};
use datrack::distractor::{
    beta_weight, rerank_direct, rerank_factored, update_templates, CompositeTemplates, DistractorSet, RerankConfig,
};
use datrack::embedding::{crop_and_resize, read_dafm_from, write_dafm_to, BBox, DafmRecord};
use datrack::harness::metrics::success_curve;
use datrack::harness::persist::{trajectory_from_csv, trajectory_to_csv};
use datrack::harness::run::{Trajectory, TrajectoryEntry};
use datrack::longterm::{search_size, update_mode, LongTermConfig, TrackerState};
use datrack::proposals::{iou, nms, rank_order, top_k, Proposal};
use datrack::sampler::{draw_augmentation, format_log, parse_log, AugOp, AugmentConfig};
use datrack::{Extent, FeatureMap, Mode};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..200.0f64, 0.0..200.0f64, 1.0..60.0f64, 1.0..60.0f64).prop_map(|(cx, cy, w, h)| BBox { cx, cy, w, h })
}

fn proposals(max: usize) -> impl Strategy<Value = Vec<Proposal>> {
    // coarse scores so ties occur
    prop::collection::vec((bbox(), 0..20u32), 0..max).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (b, s))| proposal(b, s as f64 / 20.0, i))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn xcorr_matches_nested_loops(seed in any::<u64>(), tw in 1..5usize, th in 1..5usize, ex in 0..6usize, ey in 0..6usize, c in 1..5usize, bias in -1.0..1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_map(&mut rng, tw, th, c);
        let s = random_map(&mut rng, tw + ex, th + ey, c);
        let r = xcorr(&t, &s, bias).unwrap();
        prop_assert_eq!((r.width(), r.height()), (ex + 1, ey + 1));
        for (a, b) in r.values().iter().zip(xcorr_oracle(&t, &s, bias)) {
            prop_assert!(rel_close(*a, b, 1e-9));
        }
    }

    #[test]
    fn xcorr_is_linear_in_template(seed in any::<u64>(), k in -2.0..2.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_map(&mut rng, 3, 2, 3);
        let b = random_map(&mut rng, 3, 2, 3);
        let s = random_map(&mut rng, 7, 5, 3);
        let mix = linear_combine(&[(&a, k), (&b, 1.0)]).unwrap();
        let ra = xcorr(&a, &s, 0.0).unwrap();
        let rb = xcorr(&b, &s, 0.0).unwrap();
        let rm = xcorr(&mix, &s, 0.0).unwrap();
        for i in 0..rm.values().len() {
            prop_assert!(rel_close(rm.values()[i], k * ra.values()[i] + rb.values()[i], 1e-9));
        }
    }

    #[test]
    fn nms_matches_pairwise_oracle(props in proposals(80), thr in 0.0..1.0f64) {
        let expected = nms_oracle(&props, thr);
        let kept = nms(props.clone(), thr);
        let cells: Vec<_> = kept.iter().map(|p| p.cell).collect();
        prop_assert_eq!(&cells, &expected);
        for (i, a) in kept.iter().enumerate() {
            prop_assert!(props.contains(a));
            for b in &kept[i + 1..] {
                prop_assert!(iou(&a.bbox, &b.bbox) <= thr);
            }
        }
    }

    #[test]
    fn nms_ignores_input_order(props in proposals(60), thr in 0.1..0.9f64, seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = props.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(nms(props, thr), nms(shuffled, thr));
    }

    #[test]
    fn top_k_is_sorted_prefix(props in proposals(40), k in 1..20usize) {
        let mut sorted = props.clone();
        sorted.sort_by(rank_order);
        sorted.truncate(k);
        prop_assert_eq!(top_k(props, k), sorted);
    }

    #[test]
    fn iou_bounds_and_symmetry(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn beta_loop_and_closed_form(t in 1..400u64, eta in 0.001..0.45f64) {
        let r = eta / (1.0 - eta);
        let looped: f64 = (0..t).map(|i| r.powi(i as i32)).sum();
        let closed = (1.0 - r.powi(t as i32)) / (1.0 - r);
        let got = beta_weight(t, eta).unwrap();
        prop_assert!(rel_close(got, looped, 1e-12));
        prop_assert!(rel_close(got, closed, 1e-12));
    }

    #[test]
    fn factored_rerank_shifts_by_constant(seed in any::<u64>(), n in 0..8usize, m in 1..10usize, bias in -1.0..1.0f64, alpha_hat in 0.0..1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ex = random_map(&mut rng, 3, 3, 4);
        let mut ds = DistractorSet::new();
        for _ in 0..n {
            ds.push(random_map(&mut rng, 3, 3, 4), rand::Rng::gen_range(&mut rng, 0.1..2.0)).unwrap();
        }
        let cands: Vec<Proposal> = (0..m)
            .map(|i| {
                let mut p = proposal(BBox { cx: i as f64, cy: 0.0, w: 1.0, h: 1.0 }, 0.0, i);
                p.embedding = Some(random_map(&mut rng, 3, 3, 4));
                p
            })
            .collect();
        let cfg = RerankConfig { bias, alpha_hat, ..RerankConfig::default() };
        let d = rerank_direct(&ex, &ds, &cands, &cfg).unwrap();
        let f = rerank_factored(&ex, &ds, &cands, &cfg).unwrap();
        let shift = if n > 0 { bias * (1.0 - alpha_hat) } else { 0.0 };
        for (a, b) in d.scores.iter().zip(&f.scores) {
            prop_assert!((a - b - shift).abs() < 1e-9);
        }
    }

    #[test]
    fn templates_match_batch_sum(seed in any::<u64>(), frames in 1..30usize, eta in 0.01..0.5f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = RerankConfig { eta, ..RerankConfig::default() };
        let mut ct = CompositeTemplates::new(2, 2, 3);
        let mut history = Vec::new();
        for _ in 0..frames {
            let z = random_map(&mut rng, 2, 2, 3);
            let mut ds = DistractorSet::new();
            for _ in 0..rand::Rng::gen_range(&mut rng, 0..3) {
                ds.push(random_map(&mut rng, 2, 2, 3), rand::Rng::gen_range(&mut rng, 0.5..1.5)).unwrap();
            }
            ct = update_templates(&ct, &z, &ds, &cfg).unwrap();
            history.push((z, ds));
        }
        let q = ct.query().unwrap();
        for i in 0..q.data().len() {
            let (mut tn, mut td, mut dn, mut dd) = (0.0, 0.0, 0.0, 0.0);
            for (t, (z, ds)) in history.iter().enumerate() {
                let beta = beta_weight(t as u64 + 1, eta).unwrap();
                tn += beta * z.data()[i];
                td += beta;
                for (d, a) in ds.entries() {
                    dn += beta * cfg.alpha_hat * a * d.data()[i];
                    dd += beta * a;
                }
            }
            let want = tn / td - if dd > 0.0 { dn / dd } else { 0.0 };
            prop_assert!(rel_close(q.data()[i], want, 1e-9));
        }
    }

    #[test]
    fn crop_is_linear(seed in any::<u64>(), k in -2.0..2.0f64, x0 in 0.0..3.0f64, y0 in 0.0..3.0f64, w in 1.0..5.0f64, h in 1.0..5.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_map(&mut rng, 8, 8, 2);
        let b = random_map(&mut rng, 8, 8, 2);
        let mix = linear_combine(&[(&a, k), (&b, 1.0)]).unwrap();
        let bb = BBox::from_corners(x0, y0, x0 + w, y0 + h).unwrap();
        let ca = crop_and_resize(&a, &bb, 3, 3).unwrap();
        let cb = crop_and_resize(&b, &bb, 3, 3).unwrap();
        let cm = crop_and_resize(&mix, &bb, 3, 3).unwrap();
        for i in 0..cm.data().len() {
            prop_assert!((cm.data()[i] - (k * ca.data()[i] + cb.data()[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn modes_switch_only_at_thresholds(scores in prop::collection::vec(0.0..1.0f64, 1..60)) {
        let cfg = LongTermConfig { max_size: Some(2000), ..LongTermConfig::default() };
        let mut st = TrackerState::new((0.0, 0.0), (10.0, 10.0), CompositeTemplates::new(1, 1, 1));
        for s in scores {
            let before = st.mode;
            update_mode(&mut st, s, (1.0, 1.0), &cfg);
            match (before, st.mode) {
                (Mode::ShortTerm, Mode::Failure) => prop_assert!(s < cfg.enter_threshold),
                (Mode::ShortTerm, Mode::ShortTerm) => prop_assert!(s >= cfg.enter_threshold),
                (Mode::Failure, Mode::ShortTerm) => prop_assert!(s >= cfg.leave_threshold),
                (Mode::Failure, Mode::Failure) => prop_assert!(s < cfg.leave_threshold),
            }
            let size = search_size(&st, &cfg, Extent::new(4000.0, 4000.0), 8.0);
            match st.mode {
                Mode::ShortTerm => prop_assert_eq!(size, 255),
                Mode::Failure => prop_assert!(size >= 767),
            }
        }
    }

    #[test]
    fn success_auc_drops_with_degradation(ious in prop::collection::vec(0.0..1.0f64, 1..50), k in 0.0..1.0f64) {
        let auc = |v: &[f64]| success_curve(v).iter().sum::<f64>();
        let worse: Vec<f64> = ious.iter().map(|v| v * k).collect();
        prop_assert!(auc(&worse) <= auc(&ious) + 1e-12);
    }

    #[test]
    fn trajectory_csv_roundtrip(entries in prop::collection::vec((prop::option::of(bbox()), -2.0..2.0f64, any::<bool>()), 0..30)) {
        let traj = Trajectory {
            entries: entries
                .into_iter()
                .map(|(bbox, score, fail)| TrajectoryEntry {
                    bbox,
                    score,
                    mode: if fail { Mode::Failure } else { Mode::ShortTerm },
                })
                .collect(),
        };
        prop_assert_eq!(trajectory_from_csv(&trajectory_to_csv(&traj)).unwrap(), traj);
    }

    #[test]
    fn dafm_roundtrip(seed in any::<u64>(), n in 0..5usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs: Vec<DafmRecord> = (0..n)
            .map(|i| {
                // f32-exact values survive the narrowing
                let m = random_map(&mut rng, 1 + i, 2, 3);
                let data = m.data().iter().map(|v| *v as f32 as f64).collect();
                DafmRecord { frame_id: i as u32 * 3, map: FeatureMap::new(1 + i, 2, 3, data).unwrap() }
            })
            .collect();
        let mut buf = Vec::new();
        write_dafm_to(&mut buf, &recs).unwrap();
        prop_assert_eq!(read_dafm_from(&buf[..]).unwrap(), recs);
        if buf.len() > 6 {
            let cut = &buf[..buf.len() - 1];
            let truncated = matches!(read_dafm_from(cut), Err(datrack::TrackError::Format { .. }));
            prop_assert!(truncated);
        }
    }

    #[test]
    fn augmentation_stays_in_range(seed in any::<u64>()) {
        let cfg = AugmentConfig::default();
        let ops = draw_augmentation(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        for op in &ops {
            match *op {
                AugOp::Translate { dx, dy } => prop_assert!(dx.abs() <= 12.0 && dy.abs() <= 12.0),
                AugOp::Resize { factor } => prop_assert!((0.85..=1.15).contains(&factor)),
                AugOp::MotionBlur { length, angle } => {
                    prop_assert!([3, 5, 7, 9].contains(&length));
                    prop_assert!((0.0..std::f64::consts::PI).contains(&angle));
                }
                AugOp::Grayscale => {}
            }
        }
        prop_assert_eq!(parse_log(&format_log(&ops)).unwrap(), ops);
    }
}

#[test]
fn aligned_correlation_is_single_cell_xcorr() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_map(&mut rng, 4, 3, 2);
    let b = random_map(&mut rng, 4, 3, 2);
    let r = xcorr(&a, &b, 0.25).unwrap();
    assert_eq!(r.values().len(), 1);
    assert!((r.values()[0] - correlate_aligned(&a, &b, 0.25).unwrap()).abs() < 1e-12);
}
