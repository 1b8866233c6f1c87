use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use datrack::harness::bench::{bench_csv, bench_rerank, BenchConfig};
use datrack::harness::config::EngineConfig;
use datrack::harness::metrics::{eval_reset_based, eval_success_precision};
use datrack::harness::persist::{
    gt_path, load_sequence, read_gt, read_trajectory, write_report, write_sequence, write_trajectory,
};
use datrack::harness::run::{run_tracker, EngineTracker, ReplayTracker};
use datrack::harness::scenario::{gen_scenario, preset_spec_with, Preset, PresetParams};
use datrack::sampler::{emit_manifest, label_counts, sample_pairs, validate_pair, Corpus, SamplerConfig};
use datrack::{BBox, Extent, Frame};

#[derive(Parser)]
#[command(name = "datrack", version, about = "Distractor-aware Siamese tracking")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Track a DAFM feature sequence and write the trajectory CSV.
    Track {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Ground truth CSV; defaults to `<seq>.gt.csv`.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Initial box `cx,cy,w,h` on the first frame, instead of ground truth.
        #[arg(long)]
        init: Option<String>,
    },
    /// Generate a synthetic scenario as a DAFM sequence plus `<out>.gt.csv`.
    Synth {
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        frames: Option<u32>,
    },
    /// Score a trajectory against ground truth.
    Eval {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Reset protocol. Re-runs the tracker on `--seq` when given,
        /// otherwise replays the recorded trajectory.
        #[arg(long)]
        reset_based: bool,
        #[arg(long)]
        seq: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report CSV with summary rows and per-frame IoU.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw training pairs from a corpus manifest.
    SamplePairs {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Positive : same-category : different-category weights.
        #[arg(long, default_value = "2:1:1")]
        ratio: String,
    },
    /// Time direct and factored re-ranking against the distractor count.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "1,4,16,64")]
        n: Vec<usize>,
        #[arg(long, default_value_t = 31)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default configuration as key=value lines.
    Defaults,
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig> {
    match path {
        Some(p) => EngineConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(EngineConfig::default()),
    }
}

fn parse_box(s: &str) -> Result<BBox> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad box {s:?}"))?;
    if v.len() != 4 {
        bail!("box needs cx,cy,w,h, got {s:?}");
    }
    Ok(BBox::new(v[0], v[1], v[2], v[3])?)
}

fn parse_ratio(s: &str) -> Result<[u32; 3]> {
    let v: Vec<u32> = s
        .split(':')
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad ratio {s:?}"))?;
    v.try_into().map_err(|_| anyhow::anyhow!("ratio needs three parts, got {s:?}"))
}

fn track(seq: &Path, config: Option<&Path>, out: &Path, gt: Option<&Path>, init: Option<&str>) -> Result<()> {
    let cfg = load_config(config)?;
    let loaded = load_sequence(seq, cfg.geometry).with_context(|| format!("loading {}", seq.display()))?;
    let mut gt = match (init, gt) {
        (Some(b), _) => {
            let mut g = vec![None; loaded.frames.len()];
            if let Some(first) = g.first_mut() {
                *first = Some(parse_box(b)?);
            }
            g
        }
        (None, Some(p)) => read_gt(p)?,
        (None, None) => {
            let p = gt_path(seq);
            read_gt(&p).with_context(|| format!("no --init and no ground truth at {}", p.display()))?
        }
    };
    if gt.len() != loaded.frames.len() {
        bail!("{} frames but {} ground-truth rows", loaded.frames.len(), gt.len());
    }
    // only the first labelled frame is used
    if let Some(first) = gt.iter().position(Option::is_some) {
        for g in &mut gt[first + 1..] {
            *g = None;
        }
    }
    let mut tracker = EngineTracker::new(loaded.provider, cfg.tracker);
    let traj = run_tracker(&loaded.frames, &gt, &mut tracker)?;
    write_trajectory(out, &traj)?;
    let tracked = traj.entries.iter().filter(|e| e.bbox.is_some()).count();
    println!("tracked {tracked}/{} frames -> {}", traj.len(), out.display());
    Ok(())
}

fn synth(preset: &str, seed: u64, out: &Path, frames: Option<u32>) -> Result<()> {
    let Some(preset) = Preset::parse(preset) else {
        bail!("unknown preset {preset:?} (crossing, outview, clutter)");
    };
    let mut params = PresetParams::default();
    if let Some(n) = frames {
        params.frame_count = n;
    }
    let seq = gen_scenario(&preset_spec_with(preset, seed, &params))?;
    let n = write_sequence(out, &seq, EngineConfig::default().geometry)?;
    println!(
        "wrote {n} frames to {} and ground truth to {}",
        out.display(),
        gt_path(out).display()
    );
    Ok(())
}

fn eval(traj: &Path, gt: &Path, reset_based: bool, seq: Option<&Path>, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let traj = read_trajectory(traj)?;
    let gt = read_gt(gt)?;
    let report = eval_success_precision(&traj, &gt)?;
    println!("success_auc {:.4}", report.success_auc);
    println!("precision_at_20 {:.4}", report.precision_at_20);
    println!("overlap_precision {:.4}", report.overlap_precision);
    println!("mean_overlap {:.4}", report.mean_overlap);
    let mut report = report;
    if reset_based {
        let r = match seq {
            Some(seq) => {
                let cfg = load_config(config)?;
                let loaded = load_sequence(seq, cfg.geometry)?;
                let mut t = EngineTracker::new(loaded.provider, cfg.tracker);
                eval_reset_based(&loaded.frames, &gt, &mut t)?
            }
            None => {
                let frames: Vec<Frame> = (0..gt.len() as u32)
                    .map(|i| Frame::precomputed(i, Extent::new(1.0, 1.0)))
                    .collect();
                eval_reset_based(&frames, &gt, &mut ReplayTracker::new(traj))?
            }
        };
        println!("accuracy {:.4}", r.accuracy);
        println!("failures {}", r.failures);
        report.failures = r.failures;
    }
    if let Some(out) = out {
        write_report(out, &report)?;
    }
    Ok(())
}

fn sample(corpus: &Path, seed: u64, count: usize, out: &Path, ratio: &str) -> Result<()> {
    let corpus = Corpus::load(corpus)?;
    let cfg = SamplerConfig {
        ratio: parse_ratio(ratio)?,
        ..SamplerConfig::default()
    };
    let records = sample_pairs(&corpus, count, &cfg, seed)?;
    for r in &records {
        validate_pair(&corpus, r)?;
    }
    let n = emit_manifest(&records, out)?;
    let counts = label_counts(&records);
    let summary: Vec<String> = counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("wrote {n} pairs to {} ({})", out.display(), summary.join(" "));
    Ok(())
}

fn bench(n: &[usize], reps: usize, out: Option<&Path>) -> Result<()> {
    let cfg = BenchConfig {
        repetitions: reps,
        ..BenchConfig::default()
    };
    let csv = bench_csv(&bench_rerank(n, &cfg)?);
    match out {
        Some(p) => std::fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Track {
            seq,
            config,
            out,
            gt,
            init,
        } => track(&seq, config.as_deref(), &out, gt.as_deref(), init.as_deref()),
        Cmd::Synth {
            preset,
            seed,
            out,
            frames,
        } => synth(&preset, seed, &out, frames),
        Cmd::Eval {
            traj,
            gt,
            reset_based,
            seq,
            config,
            out,
        } => eval(&traj, &gt, reset_based, seq.as_deref(), config.as_deref(), out.as_deref()),
        Cmd::SamplePairs {
            corpus,
            seed,
            count,
            out,
            ratio,
        } => sample(&corpus, seed, count, &out, &ratio),
        Cmd::Bench { n, reps, out } => bench(&n, reps, out.as_deref()),
        Cmd::Defaults => {
            print!("{}", EngineConfig::default().to_kv());
            Ok(())
        }
    }
}
