//! Command line entry point: synth, train, encode, classify, report,
//! gradcheck. Every artifact-producing run writes a manifest with the
//! resolved configuration so outputs can be reproduced bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use blvae::analysis::{
    analyze_cloud, encode_cloud, mode_map, CaseReport, LatentCloud, Thresholds,
};
use blvae::pipeline::{
    load_checkpoint, load_record_pmts, save_checkpoint, save_record_pmts, train, write_atomic,
    Checkpoint, TrainConfig,
};
use blvae::synth::{generate_case, paper_grid, OperatingPoint, PressureRecord};
use blvae::{model, Error, Result};

const SEED_ENV_VAR: &str = "BLVAE_SEED";
const PMTS_FORMAT_VERSION: u16 = 1;
const CHECKPOINT_FORMAT_VERSION: u16 = 1;

#[derive(Parser)]
#[command(
    name = "blvae",
    version,
    about = "Bi-LSTM VAE latent-space mode analysis of multichannel pressure signals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset (one PMTS file per case)
    Synth(SynthArgs),
    /// Train a model on a dataset directory, write checkpoint + history CSV
    Train(TrainArgs),
    /// Encode records into per-case latent clouds (CSV)
    Encode(EncodeArgs),
    /// Classify cases and write the mode-map CSV + SVG
    Classify(ClassifyArgs),
    /// Encode, classify, and summarize everything into one directory
    Report(ReportArgs),
    /// Verify analytic gradients against central finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for case files and the manifest
    #[arg(long, default_value = "data")]
    out: PathBuf,
    /// Named operating grid; "paper" is the 23-case Q-phi grid
    #[arg(long)]
    grid: Option<String>,
    /// Additional operating point as "Q,PHI"; repeatable
    #[arg(long = "case", value_name = "Q,PHI")]
    cases: Vec<String>,
    /// Record duration in seconds [default: 0.2]
    #[arg(long)]
    duration: Option<f64>,
    /// Sample rate in Hz [default: 5000]
    #[arg(long = "sample-rate", visible_alias = "rate")]
    rate: Option<f64>,
    /// Master seed; BLVAE_SEED overrides the config file [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Config file with key = value lines
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (or a single .pmts file)
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path; history CSV and manifest are siblings
    #[arg(long, default_value = "checkpoint.blvc")]
    out: PathBuf,
    /// Config file with key = value lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sliding window length in samples [default: 200]
    #[arg(long)]
    window_len: Option<usize>,
    /// Window stride in samples [default: 100]
    #[arg(long)]
    stride: Option<usize>,
    /// Per-case fraction of windows held out for validation [default: 0.2]
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Mini-batch size [default: 32]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// KL weight [default: 0.001]
    #[arg(long)]
    beta: Option<f64>,
    /// Epoch cap [default: 5000]
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Consecutive non-improving validation evaluations before stopping
    /// [default: 100]
    #[arg(long)]
    patience: Option<usize>,
    /// First encoder layer width per direction [default: 32]
    #[arg(long)]
    h1: Option<usize>,
    /// Second encoder layer width per direction [default: 16]
    #[arg(long)]
    h2: Option<usize>,
    /// Master seed; BLVAE_SEED overrides the config file [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EncodeArgs {
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory (or a single .pmts file)
    #[arg(long)]
    data: PathBuf,
    /// Output directory for per-case latent CSV files
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory (or a single .pmts file)
    #[arg(long)]
    data: PathBuf,
    /// Output directory for mode_map.csv and mode_map.svg
    #[arg(long)]
    out: PathBuf,
    /// Config file with key = value lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bimodality score at or above which a case is Mode III [default: 3]
    #[arg(long)]
    tau_bimodal: Option<f64>,
    /// Variance ratio at or below which a case is Mode I [default: 0.1]
    #[arg(long)]
    tau_ratio: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory (or a single .pmts file)
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the full report
    #[arg(long)]
    out: PathBuf,
    /// Config file with key = value lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bimodality score at or above which a case is Mode III [default: 3]
    #[arg(long)]
    tau_bimodal: Option<f64>,
    /// Variance ratio at or below which a case is Mode I [default: 0.1]
    #[arg(long)]
    tau_ratio: Option<f64>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// First seed of the checked range [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds [default: 10]
    #[arg(long)]
    count: Option<usize>,
    /// Finite-difference step [default: 1e-5]
    #[arg(long)]
    step: Option<f64>,
    /// Maximum acceptable relative error [default: 1e-4]
    #[arg(long)]
    tolerance: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Train(args) => run_train(args),
        Command::Encode(args) => run_encode(args),
        Command::Classify(args) => run_classify(args),
        Command::Report(args) => run_report(args),
        Command::Gradcheck(args) => run_gradcheck(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// key = value pairs from a config file; later sources remove entries as
/// they consume them so leftovers can be rejected.
fn load_config_file(path: Option<&Path>) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    let Some(path) = path else {
        return Ok(map);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{}:{}: expected key = value",
                path.display(),
                lineno + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn take<T: std::str::FromStr>(
    map: &mut BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>> {
    match map.remove(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("config key {key}: cannot parse {raw:?}"))),
    }
}

fn reject_leftovers(map: &BTreeMap<String, String>) -> Result<()> {
    if let Some(key) = map.keys().next() {
        return Err(Error::Config(format!("unknown config key {key:?}")));
    }
    Ok(())
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV_VAR) {
        Err(_) => Ok(None),
        Ok(raw) => raw
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV_VAR}: cannot parse {raw:?} as a seed"))),
    }
}

/// Precedence: defaults < config file < BLVAE_SEED (seed only) < flags.
fn resolve_seed(file: Option<u64>, flag: Option<u64>, fallback: u64) -> Result<u64> {
    Ok(flag
        .or(env_seed()?)
        .or(file)
        .unwrap_or(fallback))
}

fn write_manifest(path: &Path, command: &str, entries: &[(String, String)]) -> Result<()> {
    let mut text = format!("command = {command}\n");
    for (key, value) in entries {
        let _ = writeln!(text, "{key} = {value}");
    }
    write_atomic(path, text.as_bytes())
}

fn load_dataset(path: &Path) -> Result<Vec<PressureRecord>> {
    if path.is_file() {
        return Ok(vec![load_record_pmts(path)?]);
    }
    if !path.is_dir() {
        return Err(Error::Data(format!(
            "dataset not found: {}",
            path.display()
        )));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "pmts"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!(
            "dataset not found: no .pmts files in {}",
            path.display()
        )));
    }
    files.iter().map(|p| load_record_pmts(p)).collect()
}

fn parse_operating_point(raw: &str) -> Result<OperatingPoint> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    let usage = || Error::Usage(format!("--case expects \"Q,PHI\", got {raw:?}"));
    if parts.len() != 2 {
        return Err(usage());
    }
    let q: f64 = parts[0].parse().map_err(|_| usage())?;
    let phi: f64 = parts[1].parse().map_err(|_| usage())?;
    Ok(OperatingPoint::new(q, phi))
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let mut file = load_config_file(args.config.as_deref())?;
    let duration = args
        .duration
        .or(take(&mut file, "duration")?)
        .unwrap_or(0.2);
    let rate = args.rate.or(take(&mut file, "sample_rate")?).unwrap_or(5000.0);
    let seed = resolve_seed(take(&mut file, "seed")?, args.seed, 0)?;
    let grid = args.grid.or(take(&mut file, "grid")?);
    reject_leftovers(&file)?;

    let mut points = Vec::new();
    match grid.as_deref() {
        Some("paper") => points.extend(paper_grid()),
        Some(other) => {
            return Err(Error::Usage(format!(
                "unknown grid {other:?}; the only named grid is \"paper\""
            )))
        }
        None => {}
    }
    for raw in &args.cases {
        points.push(parse_operating_point(raw)?);
    }
    if points.is_empty() {
        return Err(Error::Usage(
            "no cases selected; pass --grid paper or --case Q,PHI".into(),
        ));
    }

    std::fs::create_dir_all(&args.out)?;
    let mut case_ids = Vec::new();
    for op in &points {
        let rec = generate_case(*op, duration, rate, seed)?;
        save_record_pmts(&rec, &args.out.join(format!("{}.pmts", rec.case_id)))?;
        case_ids.push(rec.case_id);
    }

    let entries = vec![
        ("cases".into(), case_ids.join(" ")),
        ("duration".into(), format!("{duration}")),
        ("format.pmts".into(), PMTS_FORMAT_VERSION.to_string()),
        ("sample_rate".into(), format!("{rate}")),
        ("seed".into(), seed.to_string()),
    ];
    write_manifest(&args.out.join("manifest.txt"), "synth", &entries)?;
    println!("wrote {} cases to {}", case_ids.len(), args.out.display());
    Ok(())
}

fn resolved_train_config(
    args: &TrainArgs,
    file: &mut BTreeMap<String, String>,
) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        window_len: args
            .window_len
            .or(take(file, "window_len")?)
            .unwrap_or(d.window_len),
        stride: args.stride.or(take(file, "stride")?).unwrap_or(d.stride),
        val_fraction: args
            .val_fraction
            .or(take(file, "val_fraction")?)
            .unwrap_or(d.val_fraction),
        batch_size: args
            .batch_size
            .or(take(file, "batch_size")?)
            .unwrap_or(d.batch_size),
        learning_rate: args
            .learning_rate
            .or(take(file, "learning_rate")?)
            .unwrap_or(d.learning_rate),
        beta: args.beta.or(take(file, "beta")?).unwrap_or(d.beta),
        adam_beta1: take(file, "adam_beta1")?.unwrap_or(d.adam_beta1),
        adam_beta2: take(file, "adam_beta2")?.unwrap_or(d.adam_beta2),
        adam_eps: take(file, "adam_eps")?.unwrap_or(d.adam_eps),
        max_epochs: args
            .max_epochs
            .or(take(file, "max_epochs")?)
            .unwrap_or(d.max_epochs),
        patience: args
            .patience
            .or(take(file, "patience")?)
            .unwrap_or(d.patience),
        h1: args.h1.or(take(file, "h1")?).unwrap_or(d.h1),
        h2: args.h2.or(take(file, "h2")?).unwrap_or(d.h2),
        seed: resolve_seed(take(file, "seed")?, args.seed, d.seed)?,
    };
    Ok(cfg)
}

fn train_config_entries(cfg: &TrainConfig) -> Vec<(String, String)> {
    vec![
        ("adam_beta1".into(), format!("{}", cfg.adam_beta1)),
        ("adam_beta2".into(), format!("{}", cfg.adam_beta2)),
        ("adam_eps".into(), format!("{:e}", cfg.adam_eps)),
        ("batch_size".into(), cfg.batch_size.to_string()),
        ("beta".into(), format!("{}", cfg.beta)),
        ("h1".into(), cfg.h1.to_string()),
        ("h2".into(), cfg.h2.to_string()),
        ("learning_rate".into(), format!("{}", cfg.learning_rate)),
        ("max_epochs".into(), cfg.max_epochs.to_string()),
        ("patience".into(), cfg.patience.to_string()),
        ("seed".into(), cfg.seed.to_string()),
        ("stride".into(), cfg.stride.to_string()),
        ("val_fraction".into(), format!("{}", cfg.val_fraction)),
        ("window_len".into(), cfg.window_len.to_string()),
    ]
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut file = load_config_file(args.config.as_deref())?;
    let cfg = resolved_train_config(&args, &mut file)?;
    reject_leftovers(&file)?;

    let records = load_dataset(&args.data)?;
    let ckpt = train(&records, &cfg)?;
    save_checkpoint(&ckpt, &args.out)?;

    let mut history = String::from("epoch,train_loss,val_loss\n");
    for (i, e) in ckpt.history.iter().enumerate() {
        let _ = writeln!(history, "{i},{:.9e},{:.9e}", e.train_loss, e.val_loss);
    }
    let history_path = args.out.with_extension("history.csv");
    write_atomic(&history_path, history.as_bytes())?;

    let mut entries = train_config_entries(&cfg);
    entries.push((
        "format.blvc".into(),
        CHECKPOINT_FORMAT_VERSION.to_string(),
    ));
    entries.push(("data".into(), args.data.display().to_string()));
    entries.push(("epochs_run".into(), ckpt.history.len().to_string()));
    entries.sort();
    write_manifest(&args.out.with_extension("manifest.txt"), "train", &entries)?;

    let best = ckpt
        .history
        .iter()
        .map(|e| e.val_loss)
        .fold(f64::INFINITY, f64::min);
    println!(
        "trained {} epochs on {} cases; best validation loss {best:.6}",
        ckpt.history.len(),
        records.len()
    );
    println!("checkpoint: {}", args.out.display());
    println!("history: {}", history_path.display());
    Ok(())
}

fn latent_csv(cloud: &LatentCloud) -> String {
    let mut out = String::from("window_index,z1,z2\n");
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = writeln!(out, "{i},{:.17e},{:.17e}", p.z1, p.z2);
    }
    out
}

fn run_encode(args: EncodeArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let records = load_dataset(&args.data)?;
    std::fs::create_dir_all(&args.out)?;
    let mut case_ids = Vec::new();
    for rec in &records {
        let cloud = encode_cloud(&ckpt, rec)?;
        let path = args.out.join(format!("{}.latent.csv", cloud.case_id));
        write_atomic(&path, latent_csv(&cloud).as_bytes())?;
        case_ids.push(cloud.case_id);
    }
    let entries = vec![
        ("cases".into(), case_ids.join(" ")),
        ("checkpoint".into(), args.checkpoint.display().to_string()),
        ("data".into(), args.data.display().to_string()),
    ];
    write_manifest(&args.out.join("manifest.txt"), "encode", &entries)?;
    println!("encoded {} cases to {}", case_ids.len(), args.out.display());
    Ok(())
}

fn resolved_thresholds(
    flag_bimodal: Option<f64>,
    flag_ratio: Option<f64>,
    file: &mut BTreeMap<String, String>,
) -> Result<Thresholds> {
    let d = Thresholds::default();
    let t = Thresholds {
        tau_bimodal: flag_bimodal
            .or(take(file, "tau_bimodal")?)
            .unwrap_or(d.tau_bimodal),
        tau_ratio: flag_ratio
            .or(take(file, "tau_ratio")?)
            .unwrap_or(d.tau_ratio),
    };
    t.validate()?;
    Ok(t)
}

fn analyze_dataset(
    ckpt: &Checkpoint,
    records: &[PressureRecord],
    thresholds: &Thresholds,
) -> Result<Vec<(CaseReport, LatentCloud)>> {
    records
        .iter()
        .map(|rec| {
            let cloud = encode_cloud(ckpt, rec)?;
            let analysis = analyze_cloud(&cloud, thresholds)?;
            let report = CaseReport {
                case_id: cloud.case_id.clone(),
                operating_point: cloud.operating_point,
                diagnostics: analysis.diagnostics,
                label: analysis.label,
                truth: rec.label,
            };
            Ok((report, cloud))
        })
        .collect()
}

fn threshold_entries(t: &Thresholds) -> Vec<(String, String)> {
    vec![
        ("tau_bimodal".into(), format!("{}", t.tau_bimodal)),
        ("tau_ratio".into(), format!("{}", t.tau_ratio)),
    ]
}

fn run_classify(args: ClassifyArgs) -> Result<()> {
    let mut file = load_config_file(args.config.as_deref())?;
    let thresholds = resolved_thresholds(args.tau_bimodal, args.tau_ratio, &mut file)?;
    reject_leftovers(&file)?;

    let ckpt = load_checkpoint(&args.checkpoint)?;
    let records = load_dataset(&args.data)?;
    let analyzed = analyze_dataset(&ckpt, &records, &thresholds)?;
    let reports: Vec<CaseReport> = analyzed.iter().map(|(r, _)| r.clone()).collect();
    let map = mode_map(&reports)?;

    std::fs::create_dir_all(&args.out)?;
    write_atomic(&args.out.join("mode_map.csv"), map.csv.as_bytes())?;
    write_atomic(&args.out.join("mode_map.svg"), map.svg.as_bytes())?;
    let mut entries = threshold_entries(&thresholds);
    entries.push(("checkpoint".into(), args.checkpoint.display().to_string()));
    entries.push(("data".into(), args.data.display().to_string()));
    entries.sort();
    write_manifest(&args.out.join("manifest.txt"), "classify", &entries)?;
    println!("{}", map.summary);
    println!("mode map: {}", args.out.join("mode_map.csv").display());
    Ok(())
}

fn run_report(args: ReportArgs) -> Result<()> {
    let mut file = load_config_file(args.config.as_deref())?;
    let thresholds = resolved_thresholds(args.tau_bimodal, args.tau_ratio, &mut file)?;
    reject_leftovers(&file)?;

    let ckpt = load_checkpoint(&args.checkpoint)?;
    let records = load_dataset(&args.data)?;
    let analyzed = analyze_dataset(&ckpt, &records, &thresholds)?;
    let reports: Vec<CaseReport> = analyzed.iter().map(|(r, _)| r.clone()).collect();
    let map = mode_map(&reports)?;

    std::fs::create_dir_all(&args.out)?;
    for (_, cloud) in &analyzed {
        let path = args.out.join(format!("{}.latent.csv", cloud.case_id));
        write_atomic(&path, latent_csv(cloud).as_bytes())?;
    }
    write_atomic(&args.out.join("mode_map.csv"), map.csv.as_bytes())?;
    write_atomic(&args.out.join("mode_map.svg"), map.svg.as_bytes())?;

    let mut summary = String::new();
    let _ = writeln!(summary, "checkpoint: {}", args.checkpoint.display());
    let _ = writeln!(
        summary,
        "model: h1={} h2={} window={} stride={} beta={} lr={} seed={}",
        ckpt.dims.h1,
        ckpt.dims.h2,
        ckpt.window_len,
        ckpt.stride,
        ckpt.beta,
        ckpt.learning_rate,
        ckpt.seed
    );
    if let Some(last) = ckpt.history.last() {
        let best = ckpt
            .history
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        let _ = writeln!(
            summary,
            "training: {} epochs, final val {:.6}, best val {best:.6}",
            ckpt.history.len(),
            last.val_loss
        );
    }
    let _ = writeln!(summary, "{}", map.summary);
    let _ = writeln!(summary);
    let _ = writeln!(
        summary,
        "{:<16} {:>6} {:>5}  {:>5} {:>5}  {:>9} {:>9}",
        "case", "Q", "phi", "label", "truth", "ratio", "bimod"
    );
    for (r, _) in &analyzed {
        let _ = writeln!(
            summary,
            "{:<16} {:>6} {:>5}  {:>5} {:>5}  {:>9.4} {:>9.3}",
            r.case_id,
            r.operating_point.q,
            r.operating_point.phi,
            r.label.to_string(),
            r.truth.map(|t| t.to_string()).unwrap_or_default(),
            r.diagnostics.variance_ratio,
            r.diagnostics.bimodality_score
        );
    }
    write_atomic(&args.out.join("summary.txt"), summary.as_bytes())?;

    let mut entries = threshold_entries(&thresholds);
    entries.push(("checkpoint".into(), args.checkpoint.display().to_string()));
    entries.push(("data".into(), args.data.display().to_string()));
    entries.push((
        "cases".into(),
        analyzed
            .iter()
            .map(|(r, _)| r.case_id.as_str())
            .collect::<Vec<_>>()
            .join(" "),
    ));
    entries.sort();
    write_manifest(&args.out.join("manifest.txt"), "report", &entries)?;
    print!("{summary}");
    Ok(())
}

fn run_gradcheck(args: GradcheckArgs) -> Result<()> {
    let seed = resolve_seed(None, args.seed, 0)?;
    let count = args.count.unwrap_or(10);
    let step = args.step.unwrap_or(1e-5);
    let tolerance = args.tolerance.unwrap_or(1e-4);
    if !(tolerance > 0.0) || !tolerance.is_finite() {
        return Err(Error::Usage(format!(
            "--tolerance must be positive, got {tolerance}"
        )));
    }
    let report = model::gradient_check_suite(seed, count, step)?;
    for s in &report.per_seed {
        println!("seed {:>4}  max relative error {:.3e}", s.seed, s.max_rel);
    }
    println!(
        "gradcheck over {} seeds (h = {:.1e}): max relative error {:.3e}",
        report.per_seed.len(),
        report.step,
        report.max_rel
    );
    if report.max_rel >= tolerance {
        return Err(Error::Numeric(format!(
            "gradient check failed: {:.3e} >= {tolerance:.1e}",
            report.max_rel
        )));
    }
    Ok(())
}
