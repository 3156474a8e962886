use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use flowtrack::association::{MotionMode, TrackerConfig};
use flowtrack::fgmp::{read_mpn_dataset, train_mpn, write_mpn_dataset, MotionPredictionNet, TrainConfig};
use flowtrack::metrics::{evaluate, sequence_mra, EvalReport, MraMode, DEFAULT_EVAL_IOU};
use flowtrack::mot_io::{read_mot_csv, read_seqinfo, write_mot_csv, RecordKind};
use flowtrack::pipeline::{evaluate_scene, track_sequence};
use flowtrack::synthetic::{
    generate_benchmark_scene, generate_feature_fixture, generate_mpn_dataset, read_flow_dir, scene_mra_level,
    write_feature_fixture, write_scene_dir, BenchmarkShape, MraLevel,
};

#[derive(Parser)]
#[command(name = "flowtrack", version, about = "Flow-guided multi-object tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track one sequence and write a result CSV.
    Track(TrackArgs),
    /// Score a result CSV against ground truth.
    Eval(EvalArgs),
    /// Mean relative acceleration of every ground-truth object.
    Mra(MraArgs),
    /// Generate a synthetic scene directory.
    Synth(SynthArgs),
    /// Train the motion predictor on a crop dataset.
    TrainMpn(TrainArgs),
    /// Track a batch of generated scenes with several motion models.
    Benchmark(BenchmarkArgs),
}

#[derive(clap::Args)]
struct TrackArgs {
    #[arg(long)]
    dets: PathBuf,
    /// Directory of `{frame:06}.flo` files.
    #[arg(long)]
    flow_dir: Option<PathBuf>,
    /// The sequence's `seqinfo.txt`.
    #[arg(long)]
    seq: PathBuf,
    /// kf, fgmp, meanflow or identity. Overrides `motion_mode` in the config.
    #[arg(long)]
    motion: Option<MotionMode>,
    #[arg(long)]
    mpn: Option<PathBuf>,
    /// Tracker settings as key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    res: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EVAL_IOU)]
    iou: f32,
    #[arg(long, default_value = "clear")]
    mode: String,
    /// Where to write the key=value report. Defaults to `<res>.eval.txt`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(clap::Args)]
struct MraArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value = "absolute")]
    mode: MraMode,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// low or high.
    #[arg(long, default_value = "high")]
    mra_level: MraLevel,
    #[arg(long, default_value_t = 100)]
    frames: u32,
    #[arg(long, default_value_t = 12)]
    objects: usize,
    /// Also write stride 8/16/32 feature fixtures for frames 1 and 2.
    #[arg(long)]
    features: bool,
    /// Also write this many motion-predictor training crops to `<out>/mpn`.
    #[arg(long, default_value_t = 0)]
    mpn_samples: usize,
    /// Gaussian noise added to the training crops, flow pixels.
    #[arg(long, default_value_t = 0.0)]
    flow_noise: f32,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f32,
    #[arg(long, default_value_t = 0.9)]
    momentum: f32,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Epochs at the end whose weights are averaged.
    #[arg(long, default_value_t = 50)]
    average_epochs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct BenchmarkArgs {
    #[arg(long, default_value = "high")]
    mra_level: MraLevel,
    #[arg(long, default_value_t = 20)]
    scenes: u64,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    #[arg(long, default_value_t = 100)]
    frames: u32,
    #[arg(long, default_value_t = 12)]
    objects: usize,
    /// Comma-separated motion models.
    #[arg(long, default_value = "kf,meanflow,fgmp", value_delimiter = ',')]
    motion: Vec<MotionMode>,
    #[arg(long)]
    mpn: Option<PathBuf>,
    /// Worker threads; scenes run in parallel, each one serially.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Track(a) => cmd_track(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Mra(a) => cmd_mra(a),
        Command::Synth(a) => cmd_synth(a),
        Command::TrainMpn(a) => cmd_train_mpn(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn usage_error(msg: &str) -> ! {
    Cli::command().error(ErrorKind::MissingRequiredArgument, msg).exit()
}

fn load_mpn(path: &Path) -> Result<MotionPredictionNet<f32>> {
    MotionPredictionNet::load(path).with_context(|| format!("loading motion predictor {}", path.display()))
}

fn cmd_track(a: TrackArgs) -> Result<()> {
    let mut config = TrackerConfig::default();
    if let Some(p) = &a.config {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        config.apply_key_values(&text).with_context(|| format!("config {}", p.display()))?;
    }
    if let Some(m) = a.motion {
        config.motion_mode = m;
    }
    let mode = config.motion_mode;
    if mode == MotionMode::Fgmp && a.mpn.is_none() {
        usage_error("--motion fgmp requires --mpn WEIGHTS");
    }
    if matches!(mode, MotionMode::Fgmp | MotionMode::MeanOfFlow) && a.flow_dir.is_none() {
        usage_error("flow-guided motion requires --flow-dir DIR");
    }

    let meta = read_seqinfo(&a.seq).with_context(|| format!("reading {}", a.seq.display()))?;
    let dets = read_mot_csv(&a.dets, RecordKind::Det)?;
    let flows = match (&a.flow_dir, mode) {
        (Some(dir), MotionMode::Fgmp | MotionMode::MeanOfFlow) => read_flow_dir(dir, meta.frame_count)?,
        _ => Vec::new(),
    };
    let mpn = match (&a.mpn, mode) {
        (Some(p), MotionMode::Fgmp) => Some(load_mpn(p)?),
        _ => None,
    };

    let run = track_sequence(&meta, &dets, &flows, config, mpn)?;
    let records = run.records();
    write_mot_csv(&records, &a.out, RecordKind::Result)?;
    let ids: std::collections::BTreeSet<i64> = records.iter().map(|r| r.id).collect();
    println!(
        "{}: {} frames, {} boxes, {} tracks, motion {mode}",
        meta.name,
        run.frames,
        records.len(),
        ids.len()
    );
    println!(
        "tracking loop {:.3} ms, {:.1} FPS (file I/O excluded)",
        run.loop_time.as_secs_f64() * 1e3,
        run.fps()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    if a.mode != "clear" {
        bail!("unsupported evaluation mode {:?} (only clear)", a.mode);
    }
    let gt = read_mot_csv(&a.gt, RecordKind::Gt)?;
    let res = read_mot_csv(&a.res, RecordKind::Result)?;
    let report = evaluate(&gt, &res, a.iou)?;
    print!("{}", report.table());
    let path = a.report.unwrap_or_else(|| {
        let mut p = a.res.clone().into_os_string();
        p.push(".eval.txt");
        p.into()
    });
    fs::write(&path, report.to_key_values()).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_mra(a: MraArgs) -> Result<()> {
    let gt = read_mot_csv(&a.gt, RecordKind::Gt)?;
    let (per_object, mean) = sequence_mra(&gt, a.mode);
    println!("{:>8} {:>10}", "id", "MRA");
    for (id, m) in &per_object {
        println!("{id:>8} {m:>10.4}");
    }
    match mean {
        Some(m) => println!("{:>8} {m:>10.4}", "mean"),
        None => eprintln!("warning: no trajectory has three consecutive frames"),
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let shape = BenchmarkShape { frame_count: a.frames, objects: a.objects, ..Default::default() };
    let (spec, scene) = generate_benchmark_scene(a.seed, a.mra_level, &shape)?;
    write_scene_dir(&scene, &a.out)?;
    if a.features {
        write_feature_fixture(&generate_feature_fixture(&spec, 2, 4)?, &a.out)?;
    }
    if a.mpn_samples > 0 {
        let data = generate_mpn_dataset(&scene, a.mpn_samples, a.flow_noise, a.seed)?;
        write_mpn_dataset(&a.out.join("mpn"), &data)?;
    }
    println!(
        "{}: {} frames, {} objects, MRA {:.4}",
        scene.meta.name,
        scene.meta.frame_count,
        spec.objects.len(),
        scene_mra_level(&scene)
    );
    Ok(())
}

fn cmd_train_mpn(a: TrainArgs) -> Result<()> {
    let data = read_mpn_dataset(&a.data)?;
    if data.is_empty() {
        bail!("no training samples in {}", a.data.display());
    }
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        momentum: a.momentum,
        batch_size: a.batch,
        seed: a.seed,
        average_epochs: a.average_epochs,
    };
    let mut net = MotionPredictionNet::new(&mut ChaCha8Rng::seed_from_u64(a.seed));
    let report = train_mpn(&mut net, &data, &cfg)?;
    net.save(&a.out)?;
    let first = report.loss_curve.first().copied().unwrap_or(f32::NAN);
    println!(
        "{} samples, {} epochs: L1 {first:.4} after the first epoch, {:.4} final",
        data.len(),
        a.epochs,
        report.final_loss
    );
    Ok(())
}

fn cmd_benchmark(a: BenchmarkArgs) -> Result<()> {
    if a.motion.contains(&MotionMode::Fgmp) && a.mpn.is_none() {
        usage_error("fgmp in --motion requires --mpn WEIGHTS");
    }
    let mpn = a.mpn.as_deref().map(load_mpn).transpose()?;
    let shape = BenchmarkShape { frame_count: a.frames, objects: a.objects, ..Default::default() };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.jobs.max(1)).build()?;
    let seeds: Vec<u64> = (a.first_seed..a.first_seed + a.scenes).collect();
    let rows: Vec<(u64, f64, Vec<(EvalReport, f64)>)> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| -> Result<_> {
                let (_, scene) = generate_benchmark_scene(seed, a.mra_level, &shape)?;
                let mut per_mode = Vec::new();
                for &mode in &a.motion {
                    let cfg = TrackerConfig { motion_mode: mode, ..Default::default() };
                    let (r, run) = evaluate_scene(&scene, cfg, mpn.clone())?;
                    per_mode.push((r, run.fps()));
                }
                Ok((seed, scene_mra_level(&scene), per_mode))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut header = format!("{:>6} {:>7}", "seed", "MRA");
    for m in &a.motion {
        header += &format!(" {:>17}", format!("{m} MOTA/IDF1"));
    }
    println!("{header}");
    for (seed, mra, per_mode) in &rows {
        let mut line = format!("{seed:>6} {mra:>7.4}");
        for (r, _) in per_mode {
            line += &format!(" {:>17}", format!("{:.4}/{:.4}", r.mota, r.idf1));
        }
        println!("{line}");
    }
    let n = rows.len() as f64;
    for (k, m) in a.motion.iter().enumerate() {
        let mota = rows.iter().map(|r| r.2[k].0.mota).sum::<f64>() / n;
        let idf1 = rows.iter().map(|r| r.2[k].0.idf1).sum::<f64>() / n;
        let fps = rows.iter().map(|r| r.2[k].1).sum::<f64>() / n;
        println!("{m:>10}: MOTA {mota:.4} IDF1 {idf1:.4} loop {fps:.0} FPS");
    }
    Ok(())
}
