//! Command-line front end: score scenes, evaluate detections, sweep
//! parameter grids, run timing benchmarks and generate synthetic scenes.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for unreadable or
//! inconsistent input data, 3 for numeric failures (singular systems,
//! degenerate scenes, refused problem sizes).

use clap::{Args, Parser, Subcommand};
use rxd::bench::{csv_report, log_log_slope, rank_sweep, scaling_sweep, set_math_parallelism};
use rxd::detect::{DetectorKind, DetectorSpec, ScoreField, SigmaSpec};
use rxd::eval::{detection_map, evaluate, grid_search, roc_points};
use rxd::io::{
    load_pgm, load_scene, load_scores_bsq, load_scores_csv, save_bsq, save_matrix_csv, save_pgm,
    save_run_record, save_scores_bsq, save_scores_csv, ImageFormat, RunRecord,
};
use rxd::kernel::Kernel;
use rxd::synth::{synth_scene, BackgroundModel, SceneSpec};
use rxd::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "rxd",
    version,
    about = "Global anomaly detection for multiband images"
)]
struct Cli {
    /// Worker threads for linear algebra and blocked scoring (1 = fully
    /// sequential, reproducible timing).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a detector on a scene and write per-pixel anomaly scores.
    Detect(DetectArgs),
    /// Evaluate saved scores against a ground-truth mask.
    Eval(EvalArgs),
    /// Sweep kernel widths and ranks, reporting AUC per cell.
    Gridsearch(GridArgs),
    /// Timing sweeps over problem size or rank.
    Bench(BenchArgs),
    /// Generate a synthetic scene with planted anomalies.
    Synth(SynthArgs),
}

// ----------------------------------------------------------------- parsers

fn parse_kind(s: &str) -> Result<DetectorKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_sigma(s: &str) -> Result<SigmaSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_format(s: &str) -> Result<ImageFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_background(s: &str) -> Result<BackgroundModel, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// "HxW", e.g. "100x120".
fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("bad dimension {v:?} in {s:?}"))
    };
    Ok((parse(h)?, parse(w)?))
}

// ----------------------------------------------------------------- shared args

#[derive(Args)]
struct DetectorArgs {
    /// Detector: rx, krx, srx, rrx, orx, nrx (lrx is an alias for nrx).
    #[arg(long, default_value = "rx", value_parser = parse_kind)]
    detector: DetectorKind,

    /// Kernel width: a positive number, or "median" for the median
    /// pairwise-distance heuristic.
    #[arg(long, default_value = "median", value_parser = parse_sigma)]
    sigma: SigmaSpec,

    /// Subsample size (srx), landmark count (nrx) or frequency count
    /// (rrx/orx).
    #[arg(long)]
    rank: Option<usize>,

    /// Explicit ridge regularization; omitted, a small multiple of the
    /// system's mean diagonal is used.
    #[arg(long)]
    ridge: Option<f64>,

    /// Eigenvalue cutoff for the landmark detector's pseudoinverse.
    #[arg(long)]
    pinv_tol: Option<f64>,

    /// Disable feature-space centering (diagnostics only).
    #[arg(long)]
    no_centering: bool,

    /// Seed for subsampling, feature draws and the median-width sample.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Dense-kernel pixel cap; krx refuses larger backgrounds unless this
    /// is raised.
    #[arg(long)]
    max_gram: Option<usize>,

    /// Test pixels scored per block.
    #[arg(long)]
    block_size: Option<usize>,
}

impl DetectorArgs {
    fn spec(&self) -> DetectorSpec {
        let mut spec = DetectorSpec::new(self.detector);
        spec.sigma = self.sigma;
        spec.rank = self.rank;
        spec.ridge = self.ridge;
        spec.pinv_tol = self.pinv_tol;
        spec.centering = !self.no_centering;
        spec.seed = self.seed;
        if let Some(cap) = self.max_gram {
            spec.max_gram = cap;
        }
        if let Some(block) = self.block_size {
            spec.block_size = block;
        }
        spec
    }
}

#[derive(Args)]
struct ImageArgs {
    /// Scene image file.
    #[arg(long)]
    image: PathBuf,

    /// Image encoding.
    #[arg(long, default_value = "bsq", value_parser = parse_format)]
    format: ImageFormat,

    /// Raster shape as HxW; required for CSV images that should keep a
    /// shape, authoritative header must agree for BSQ.
    #[arg(long, value_parser = parse_dims)]
    dims: Option<(usize, usize)>,

    /// Ground-truth mask (PGM; nonzero = anomaly).
    #[arg(long)]
    mask: Option<PathBuf>,
}

// ----------------------------------------------------------------- commands

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    input: ImageArgs,

    #[command(flatten)]
    detector: DetectorArgs,

    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,

    /// Also write a binary detection map at this score threshold.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Score file written by `detect`.
    #[arg(long)]
    scores: PathBuf,

    /// Score file encoding.
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: ImageFormat,

    /// Ground-truth mask (PGM; nonzero = anomaly).
    #[arg(long)]
    mask: PathBuf,

    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    input: ImageArgs,

    #[command(flatten)]
    detector: DetectorArgs,

    /// Kernel widths to sweep (comma separated). Defaults to multiples
    /// 0.25, 0.5, 1, 2 of the median heuristic.
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,

    /// Ranks to sweep (comma separated). Defaults to 50,100,200,400
    /// capped at the scene size.
    #[arg(long, value_delimiter = ',')]
    ranks: Option<Vec<usize>>,

    /// Number of seeds (0..N) averaged per cell.
    #[arg(long, default_value_t = 20)]
    seeds: u64,

    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::ValueEnum, Clone, Copy, PartialEq, Eq)]
enum SweepKind {
    Scaling,
    Rank,
}

#[derive(Args)]
struct BenchArgs {
    /// What to sweep: problem size at fixed rank, or rank on one scene.
    #[arg(long, value_enum, default_value_t = SweepKind::Scaling)]
    sweep: SweepKind,

    #[command(flatten)]
    detector: DetectorArgs,

    /// Training sizes for the scaling sweep.
    #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000,8000")]
    sizes: Vec<usize>,

    /// Ranks for the rank sweep.
    #[arg(long, value_delimiter = ',', default_value = "50,100,200,400,500")]
    ranks: Vec<usize>,

    /// Bands for generated scenes.
    #[arg(long, default_value_t = 20)]
    bands: usize,

    /// Number of seeds (0..N) for the rank sweep.
    #[arg(long, default_value_t = 3)]
    seeds: u64,

    /// Timed repeats per configuration (after one untimed warm-up).
    #[arg(long, default_value_t = 1)]
    repeats: usize,

    /// Scene for the rank sweep; a mixture scene is generated when omitted.
    #[arg(long)]
    image: Option<PathBuf>,

    /// Image encoding for --image.
    #[arg(long, default_value = "bsq", value_parser = parse_format)]
    format: ImageFormat,

    /// Ground-truth mask for AUC columns in the rank sweep.
    #[arg(long)]
    mask: Option<PathBuf>,

    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    height: usize,

    #[arg(long, default_value_t = 100)]
    width: usize,

    #[arg(long, default_value_t = 20)]
    bands: usize,

    /// Fraction of anomalous pixels, in (0, 0.1].
    #[arg(long, default_value_t = 0.01)]
    fraction: f64,

    /// Anomaly-to-background separation in background standard deviations.
    #[arg(long, default_value_t = 8.0)]
    separation: f64,

    /// Background distribution: "none" (single Gaussian) or "mixture".
    #[arg(long, default_value = "none", value_parser = parse_background)]
    background: BackgroundModel,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Scene encoding to write.
    #[arg(long, default_value = "bsq", value_parser = parse_format)]
    format: ImageFormat,

    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

// ----------------------------------------------------------------- helpers

fn ensure_dir(dir: &Path) -> rxd::Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> rxd::Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn resolved_sigma(kernel: Option<Kernel>) -> Option<f64> {
    match kernel {
        Some(Kernel::Rbf { sigma }) => Some(sigma),
        _ => None,
    }
}

fn load_input(input: &ImageArgs) -> rxd::Result<rxd::synth::SceneBundle> {
    load_scene(
        &input.image,
        input.format,
        input.dims,
        input.mask.as_deref(),
    )
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

// ----------------------------------------------------------------- runners

fn run_detect(args: &DetectArgs) -> rxd::Result<()> {
    let scene = load_input(&args.input)?;
    let spec = args.detector.spec();

    let t0 = Instant::now();
    let model = spec.fit(&scene.image)?;
    let fit_s = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let scores = model.score(&scene.image)?;
    let score_s = t1.elapsed().as_secs_f64();

    ensure_dir(&args.out)?;
    save_scores_csv(&args.out.join("scores.csv"), &scores)?;
    save_scores_bsq(&args.out.join("scores.bsq"), &scores)?;
    if let Some(threshold) = args.threshold {
        let map = detection_map(scores.scores(), threshold);
        save_pgm(&args.out.join("map.pgm"), &map, scores.shape())?;
    }

    let mut record = RunRecord::new("detect");
    record.detector = Some(spec);
    record.resolved_sigma = resolved_sigma(model.kernel());
    record
        .inputs
        .insert("image".into(), path_string(&args.input.image));
    record
        .inputs
        .insert("format".into(), args.input.format.to_string());
    if let Some(mask) = &args.input.mask {
        record.inputs.insert("mask".into(), path_string(mask));
    }
    save_run_record(&args.out.join("run.json"), &record)?;

    let mut line = format!(
        "{}: scored {} pixels in {score_s:.3}s (fit {fit_s:.3}s)",
        model.kind(),
        scores.len(),
    );
    if let Some(truth) = &scene.truth {
        let auc = rxd::eval::roc_auc(scores.scores(), truth)?;
        line.push_str(&format!(", auc {auc:.4}"));
    }
    println!("{line}");
    println!("wrote {}", path_string(&args.out));
    Ok(())
}

fn run_eval(args: &EvalArgs) -> rxd::Result<()> {
    let scores: ScoreField = match args.format {
        ImageFormat::Csv => load_scores_csv(&args.scores)?,
        ImageFormat::Bsq => load_scores_bsq(&args.scores)?,
    };
    let mask = load_pgm(&args.mask)?;
    if mask.len() != scores.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} scores", mask.len()),
            got: format!("{}", scores.len()),
        });
    }

    let summary = evaluate(scores.scores(), &mask)?;
    let points = roc_points(scores.scores(), &mask)?;

    ensure_dir(&args.out)?;
    let mut roc = String::from("threshold,fpr,tpr\n");
    for p in &points {
        let t = if p.threshold.is_finite() {
            format!("{:.9e}", p.threshold)
        } else {
            "inf".to_string()
        };
        roc.push_str(&format!("{t},{:.9e},{:.9e}\n", p.fpr, p.tpr));
    }
    write_text(&args.out.join("roc.csv"), &roc)?;
    let json = serde_json::to_string_pretty(&summary)
        .expect("summary serializes") + "\n";
    write_text(&args.out.join("eval.json"), &json)?;
    let map = detection_map(scores.scores(), summary.threshold.threshold);
    save_pgm(
        &args.out.join("map.pgm"),
        &map,
        scores.shape().or(mask.shape()),
    )?;

    println!(
        "auc {:.4}, threshold {:.6} (tpr {:.3}, fpr {:.3}), {} of {} flagged",
        summary.auc,
        summary.threshold.threshold,
        summary.threshold.tpr,
        summary.threshold.fpr,
        summary.detections,
        summary.anomalous + summary.background,
    );
    println!("wrote {}", path_string(&args.out));
    Ok(())
}

fn run_gridsearch(args: &GridArgs) -> rxd::Result<()> {
    let scene = load_input(&args.input)?;
    let truth = scene.truth.as_ref().ok_or_else(|| {
        Error::InvalidData("grid search needs a ground-truth mask (--mask)".into())
    })?;
    let spec = args.detector.spec();

    let sigmas: Vec<f64> = match (&args.sigmas, spec.kind.uses_kernel()) {
        (_, false) => Vec::new(),
        (Some(list), true) => list.clone(),
        (None, true) => {
            let med = SigmaSpec::Median.resolve(&scene.image, spec.median_sample, spec.seed)?;
            [0.25, 0.5, 1.0, 2.0].iter().map(|m| m * med).collect()
        }
    };
    let ranks: Vec<usize> = match (&args.ranks, spec.kind.uses_rank()) {
        (_, false) => Vec::new(),
        (Some(list), true) => list.clone(),
        (None, true) => {
            let defaults: Vec<usize> = [50usize, 100, 200, 400]
                .iter()
                .copied()
                .filter(|&r| r <= scene.image.n())
                .collect();
            if defaults.is_empty() {
                vec![scene.image.n().div_ceil(2)]
            } else {
                defaults
            }
        }
    };
    let seeds: Vec<u64> = (0..args.seeds.max(1)).collect();

    let report = grid_search(&spec, &scene.image, truth, &sigmas, &ranks, &seeds)?;

    ensure_dir(&args.out)?;
    let mut csv = String::from("sigma,rank,mean_auc,failures\n");
    for p in &report.points {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            p.sigma.map(|s| format!("{s:.9e}")).unwrap_or_default(),
            p.rank.map(|r| r.to_string()).unwrap_or_default(),
            p.mean_auc.map(|a| format!("{a:.6}")).unwrap_or_default(),
            p.failures
        ));
    }
    write_text(&args.out.join("grid.csv"), &csv)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_text(&args.out.join("grid.json"), &json)?;

    match report.best_point() {
        Some(best) => println!(
            "best: sigma {} rank {} mean auc {:.4} over {} seeds",
            best.sigma.map(|s| format!("{s:.4}")).unwrap_or_else(|| "-".into()),
            best.rank.map(|r| r.to_string()).unwrap_or_else(|| "-".into()),
            best.mean_auc.unwrap_or(f64::NAN),
            report.seeds.len(),
        ),
        None => println!("no grid cell succeeded"),
    }
    println!("wrote {}", path_string(&args.out));
    Ok(())
}

fn run_bench(args: &BenchArgs) -> rxd::Result<()> {
    let spec = args.detector.spec();
    let records = match args.sweep {
        SweepKind::Scaling => {
            let recs = scaling_sweep(
                &spec,
                &args.sizes,
                args.bands,
                args.detector.seed,
                args.repeats.max(1),
            )?;
            let ns: Vec<f64> = recs.iter().map(|r| r.n as f64).collect();
            let times: Vec<f64> = recs.iter().map(|r| r.score_seconds).collect();
            match log_log_slope(&ns, &times) {
                Ok(slope) => println!("{}: score-time scaling exponent {slope:.2}", spec.kind),
                Err(e) => log::warn!("no scaling exponent: {e}"),
            }
            recs
        }
        SweepKind::Rank => {
            let (image, truth);
            match &args.image {
                Some(path) => {
                    let scene =
                        load_scene(path, args.format, None, args.mask.as_deref())?;
                    image = scene.image;
                    truth = scene.truth;
                }
                None => {
                    let scene = synth_scene(&SceneSpec {
                        height: 100,
                        width: 100,
                        bands: args.bands,
                        fraction: 0.01,
                        separation: 12.0,
                        background: BackgroundModel::Mixture,
                        seed: args.detector.seed,
                    })?;
                    image = scene.image;
                    truth = scene.truth;
                }
            }
            let seeds: Vec<u64> = (0..args.seeds.max(1)).collect();
            rank_sweep(
                &spec,
                &args.ranks,
                &image,
                truth.as_ref(),
                &seeds,
                args.repeats.max(1),
            )?
        }
    };

    ensure_dir(&args.out)?;
    write_text(&args.out.join("bench.csv"), &csv_report(&records))?;
    println!("wrote {} records to {}", records.len(), path_string(&args.out));
    Ok(())
}

fn run_synth(args: &SynthArgs) -> rxd::Result<()> {
    let spec = SceneSpec {
        height: args.height,
        width: args.width,
        bands: args.bands,
        fraction: args.fraction,
        separation: args.separation,
        background: args.background,
        seed: args.seed,
    };
    let scene = synth_scene(&spec)?;
    ensure_dir(&args.out)?;

    let image_path = match args.format {
        ImageFormat::Bsq => {
            let path = args.out.join("scene.bsq");
            save_bsq(
                &path,
                scene.image.values(),
                scene.image.shape().expect("synthetic scenes have shapes"),
            )?;
            path
        }
        ImageFormat::Csv => {
            let path = args.out.join("scene.csv");
            save_matrix_csv(&path, scene.image.values())?;
            path
        }
    };
    let truth = scene.truth.as_ref().expect("synthetic scenes have truth");
    save_pgm(&args.out.join("mask.pgm"), truth.labels(), truth.shape())?;

    let mut record = RunRecord::new("synth");
    record.scene = Some(spec);
    record
        .inputs
        .insert("image".into(), path_string(&image_path));
    save_run_record(&args.out.join("run.json"), &record)?;

    println!(
        "{} scene: {} pixels, {} anomalous; wrote {}",
        args.background,
        scene.image.n(),
        truth.anomaly_count(),
        path_string(&args.out),
    );
    Ok(())
}

// ----------------------------------------------------------------- entry

fn run(cli: &Cli) -> rxd::Result<()> {
    match &cli.command {
        Command::Detect(args) => run_detect(args),
        Command::Eval(args) => run_eval(args),
        Command::Gridsearch(args) => run_gridsearch(args),
        Command::Bench(args) => run_bench(args),
        Command::Synth(args) => run_synth(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let threads = cli.threads.max(1);
    set_math_parallelism(threads);
    // The global pool can only be sized once; a failure just means a pool
    // already exists, which only affects timing, not results.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 3 })
        }
    }
}
