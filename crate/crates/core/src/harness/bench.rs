//! Timing of direct versus factored re-ranking.

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corr::FeatureMap;
use crate::distractor::{rerank_direct, DistractorSet, FactoredQuery, RerankConfig};
use crate::embedding::BBox;
use crate::error::{Result, TrackError};
use crate::proposals::{Cell, Proposal};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub channels: usize,
    pub exemplar: usize,
    pub candidates: usize,
    /// Timed repetitions per `n`; the median is reported.
    pub repetitions: usize,
    pub warmup: usize,
    /// Each repetition runs enough passes to take at least this long.
    pub min_rep_ns: u64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            exemplar: 6,
            candidates: 16,
            repetitions: 31,
            warmup: 3,
            min_rep_ns: 200_000,
            seed: 7,
        }
    }
}

/// Median nanoseconds per scoring pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub direct_ns: f64,
    pub factored_ns: f64,
    /// Building the composite once per distractor set.
    pub factored_build_ns: f64,
}

fn random_map(rng: &mut ChaCha8Rng, cfg: &BenchConfig) -> FeatureMap {
    let len = cfg.exemplar * cfg.exemplar * cfg.channels;
    let data = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureMap::new(cfg.exemplar, cfg.exemplar, cfg.channels, data).expect("valid dims")
}

struct Instance {
    exemplar: FeatureMap,
    distractors: DistractorSet,
    query: FactoredQuery,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Passes per repetition so one repetition lasts at least `min_ns`.
fn calibrate(min_ns: u64, mut f: impl FnMut()) -> usize {
    let mut passes = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..passes {
            f();
        }
        if t.elapsed().as_nanos() as u64 >= min_ns || passes >= 1 << 20 {
            return passes;
        }
        passes *= 2;
    }
}

fn time_per_pass(passes: usize, mut f: impl FnMut()) -> f64 {
    let t = Instant::now();
    for _ in 0..passes {
        f();
    }
    t.elapsed().as_nanos() as f64 / passes as f64
}

/// Times one scoring pass over the same candidates for each distractor
/// count. Repetitions cycle through all `n` so drift hits every row alike.
pub fn bench_rerank(n_values: &[usize], cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if n_values.is_empty() || cfg.repetitions == 0 || cfg.candidates == 0 {
        return Err(TrackError::arg("bench needs n values, repetitions and candidates"));
    }
    let rerank = RerankConfig {
        bias: 0.5,
        ..RerankConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let candidates: Vec<Proposal> = (0..cfg.candidates)
        .map(|i| {
            let mut p = Proposal::new(
                BBox {
                    cx: i as f64,
                    cy: 0.0,
                    w: 1.0,
                    h: 1.0,
                },
                0.0,
                Cell {
                    row: 0,
                    col: i,
                    anchor: 0,
                },
            );
            p.embedding = Some(random_map(&mut rng, cfg));
            p
        })
        .collect();
    let exemplar = random_map(&mut rng, cfg);
    let mut instances = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let mut distractors = DistractorSet::new();
        for _ in 0..n {
            distractors.push(random_map(&mut rng, cfg), rng.gen_range(0.5..1.5))?;
        }
        let query = FactoredQuery::build(&exemplar, &distractors, &rerank)?;
        instances.push(Instance {
            exemplar: exemplar.clone(),
            distractors,
            query,
        });
    }

    let mut passes = Vec::with_capacity(instances.len());
    for inst in &instances {
        let direct = calibrate(cfg.min_rep_ns, || {
            black_box(rerank_direct(&inst.exemplar, &inst.distractors, &candidates, &rerank).unwrap());
        });
        let factored = calibrate(cfg.min_rep_ns, || {
            black_box(inst.query.score(&candidates).unwrap());
        });
        let build = calibrate(cfg.min_rep_ns, || {
            black_box(FactoredQuery::build(&inst.exemplar, &inst.distractors, &rerank).unwrap());
        });
        passes.push((direct, factored, build));
    }

    let mut samples = vec![(Vec::new(), Vec::new(), Vec::new()); instances.len()];
    for rep in 0..cfg.warmup + cfg.repetitions {
        for (i, inst) in instances.iter().enumerate() {
            let (pd, pf, pb) = passes[i];
            let d = time_per_pass(pd, || {
                black_box(rerank_direct(&inst.exemplar, &inst.distractors, &candidates, &rerank).unwrap());
            });
            let f = time_per_pass(pf, || {
                black_box(inst.query.score(&candidates).unwrap());
            });
            let b = time_per_pass(pb, || {
                black_box(FactoredQuery::build(&inst.exemplar, &inst.distractors, &rerank).unwrap());
            });
            if rep >= cfg.warmup {
                samples[i].0.push(d);
                samples[i].1.push(f);
                samples[i].2.push(b);
            }
        }
    }
    Ok(n_values
        .iter()
        .zip(samples)
        .map(|(&n, (d, f, b))| BenchRow {
            n,
            direct_ns: median(d),
            factored_ns: median(f),
            factored_build_ns: median(b),
        })
        .collect())
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("n,direct_ns,factored_ns,factored_build_ns\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.1},{:.1},{:.1}\n",
            r.n, r.direct_ns, r.factored_ns, r.factored_build_ns
        ));
    }
    out
}
