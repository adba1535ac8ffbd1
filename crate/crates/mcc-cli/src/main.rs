//! Experiment driver for budget-aware multi-modal classifier chains.
//!
//! Subcommands:
//! - `run`: k-fold cross-validation of one algorithm on one dataset.
//! - `compare`: merge completed runs into a single markdown table.
//! - `gen`: write a deterministic synthetic dataset (CSV + schema sidecar).
//! - `partition`: rank features by information gain and regroup them into
//!   contiguous modality blocks.
//!
//! Exit codes: 0 success, 2 configuration/usage errors, 1 anything else
//! (including training aborts).

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use mcc::dataset::{
    load_matrix, permute_columns, partition_by_info_gain, DataFormat, ModalitySchema,
    MultiModalDataset, SchemaSpec,
};
use mcc::experiment::{compare, run_experiment, Algorithm, ExperimentConfig};
use mcc::synth;
use mcc::Error;

#[derive(Parser)]
#[command(name = "mcc", version, about = "Budget-aware multi-modal classifier chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Cross-validate one algorithm on a dataset and write all artifacts.
    Run(RunArgs),
    /// Merge finished runs into one comparison table.
    Compare(CompareArgs),
    /// Generate a synthetic dataset with a known modality structure.
    Gen(GenArgs),
    /// Regroup feature columns into modalities by information gain.
    Partition(PartitionArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Algorithm: mcc, br, cc or ecc.
    #[arg(long)]
    algo: String,
    /// Data file (CSV or ARFF).
    #[arg(long)]
    data: PathBuf,
    /// Schema sidecar; defaults to `<data stem>.schema.json`.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Force the data format instead of inferring from the extension.
    #[arg(long)]
    format: Option<String>,
    /// JSON config file; values in it override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Hidden width of the recurrent cell.
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Training epochs per chain stage.
    #[arg(long, default_value_t = 200)]
    iters: usize,
    /// Cost budget; omitted means no truncation.
    #[arg(long)]
    cth: Option<f64>,
    /// Confidence threshold for early stopping, in (0.5, 1].
    #[arg(long, default_value_t = 0.9)]
    ath: f64,
    /// Regularization trade-off.
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 0.95)]
    rho: f64,
    #[arg(long, default_value_t = 1e-8)]
    epsilon: f64,
    /// Neighbors consulted by the modality teacher.
    #[arg(long, default_value_t = 5)]
    knn: usize,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    /// Global gradient clip norm.
    #[arg(long, default_value_t = 5.0)]
    clip: f64,
    /// Extraction cost of the label-history modality.
    #[arg(long, default_value_t = 0.1)]
    history_cost: f64,
    /// Ensemble size for ecc.
    #[arg(long, default_value_t = 10)]
    ecc_chains: usize,
    /// Fold workers; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Drop the history modality's share from cost-average.
    #[arg(long, default_value_t = false)]
    exclude_history_cost: bool,
    /// Write per-stage checkpoints for every fold, not just fold 0.
    #[arg(long, default_value_t = false)]
    save_all_params: bool,
    /// L2 strength of the baseline logistic learner.
    #[arg(long, default_value_t = 1e-3)]
    baseline_l2: f64,
    #[arg(long, default_value_t = 500)]
    baseline_epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    baseline_lr: f64,
    /// Output directory for all artifacts.
    #[arg(long)]
    out: PathBuf,
}

/// JSON override file: any present key replaces the flag-derived value.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigOverride {
    data: Option<PathBuf>,
    schema: Option<PathBuf>,
    format: Option<DataFormat>,
    algo: Option<Algorithm>,
    folds: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    hidden: Option<usize>,
    batch: Option<usize>,
    iters: Option<usize>,
    cth: Option<f64>,
    ath: Option<f64>,
    lambda: Option<f64>,
    rho: Option<f64>,
    epsilon: Option<f64>,
    knn: Option<usize>,
    margin: Option<f64>,
    clip: Option<f64>,
    history_cost: Option<f64>,
    ecc_chains: Option<usize>,
    workers: Option<usize>,
    include_history_cost: Option<bool>,
    save_all_params: Option<bool>,
    baseline_l2: Option<f64>,
    baseline_epochs: Option<usize>,
    baseline_lr: Option<f64>,
}

#[derive(Args)]
struct CompareArgs {
    /// Completed run directories.
    dirs: Vec<PathBuf>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// Preset: emotions-like or scene-like.
    #[arg(long)]
    preset: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Override the preset's instance count.
    #[arg(long)]
    instances: Option<usize>,
    /// Output CSV path; the schema sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PartitionArgs {
    /// Input data file (CSV or ARFF), labels in the trailing columns.
    #[arg(long)]
    data: PathBuf,
    /// Number of trailing label columns.
    #[arg(long)]
    labels: usize,
    /// Target modality sizes, e.g. 32,32,8.
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    /// Per-modality extraction costs; defaults to 1.0 each.
    #[arg(long, value_delimiter = ',')]
    costs: Option<Vec<f64>>,
    /// Output CSV path; the schema sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
}

fn parse_format(s: &str) -> Result<DataFormat, Error> {
    match s.to_ascii_lowercase().as_str() {
        "csv" => Ok(DataFormat::Csv),
        "arff" => Ok(DataFormat::Arff),
        other => Err(Error::Argument(format!(
            "unknown format {other:?} (expected csv or arff)"
        ))),
    }
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let algo: Algorithm = args.algo.parse()?;
    let mut cfg = ExperimentConfig::new(args.data.clone(), algo, args.out.clone());
    cfg.schema = args.schema.clone();
    cfg.format = match &args.format {
        Some(f) => Some(parse_format(f)?),
        None => None,
    };
    cfg.folds = args.folds;
    cfg.seed = args.seed;
    cfg.train.hidden = args.hidden;
    cfg.train.batch = args.batch;
    cfg.train.iters = args.iters;
    cfg.train.cth = args.cth;
    cfg.train.ath = args.ath;
    cfg.train.lambda = args.lambda;
    cfg.train.rho = args.rho;
    cfg.train.epsilon = args.epsilon;
    cfg.train.knn = args.knn;
    cfg.train.margin = args.margin;
    cfg.train.clip = args.clip;
    cfg.train.history_cost = args.history_cost;
    cfg.train.seed = args.seed;
    cfg.ecc_chains = args.ecc_chains;
    cfg.workers = args.workers;
    cfg.include_history_cost = !args.exclude_history_cost;
    cfg.save_all_params = args.save_all_params;
    cfg.baseline.l2 = args.baseline_l2;
    cfg.baseline.epochs = args.baseline_epochs;
    cfg.baseline.learning_rate = args.baseline_lr;

    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Argument(format!("config {}: {e}", path.display())))?;
        // Either a full resolved config (as written next to results) or a
        // flat subset of the run options.
        if let Ok(full) = serde_json::from_str::<ExperimentConfig>(&text) {
            cfg = full;
        } else {
            let over: ConfigOverride = serde_json::from_str(&text)
                .map_err(|e| Error::Argument(format!("config {}: {e}", path.display())))?;
            apply_override(&mut cfg, over);
        }
    }
    Ok(cfg)
}

fn apply_override(cfg: &mut ExperimentConfig, over: ConfigOverride) {
    macro_rules! set {
        ($field:expr, $value:expr) => {
            if let Some(v) = $value {
                $field = v;
            }
        };
    }
    set!(cfg.data, over.data);
    if over.schema.is_some() {
        cfg.schema = over.schema;
    }
    if over.format.is_some() {
        cfg.format = over.format;
    }
    set!(cfg.algo, over.algo);
    set!(cfg.folds, over.folds);
    set!(cfg.out, over.out);
    set!(cfg.train.hidden, over.hidden);
    set!(cfg.train.batch, over.batch);
    set!(cfg.train.iters, over.iters);
    if over.cth.is_some() {
        cfg.train.cth = over.cth;
    }
    set!(cfg.train.ath, over.ath);
    set!(cfg.train.lambda, over.lambda);
    set!(cfg.train.rho, over.rho);
    set!(cfg.train.epsilon, over.epsilon);
    set!(cfg.train.knn, over.knn);
    set!(cfg.train.margin, over.margin);
    set!(cfg.train.clip, over.clip);
    set!(cfg.train.history_cost, over.history_cost);
    set!(cfg.ecc_chains, over.ecc_chains);
    set!(cfg.workers, over.workers);
    set!(cfg.include_history_cost, over.include_history_cost);
    set!(cfg.save_all_params, over.save_all_params);
    set!(cfg.baseline.l2, over.baseline_l2);
    set!(cfg.baseline.epochs, over.baseline_epochs);
    set!(cfg.baseline.learning_rate, over.baseline_lr);
    if let Some(seed) = over.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Error> {
    let cfg = build_config(&args)?;
    let outcome = run_experiment(&cfg)?;
    println!(
        "| algorithm | micro_f1 | hamming_loss | subset_accuracy | cost_average |\n\
         |---|---|---|---|---|\n\
         | {} | {} | {} | {} | {} |",
        cfg.algo,
        outcome.report.micro_f1,
        outcome.report.hamming_loss,
        outcome.report.subset_accuracy,
        outcome.report.cost_average
    );
    println!("artifacts: {}", outcome.out_dir.display());
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), Error> {
    let table = compare(&args.dirs)?;
    match &args.out {
        Some(path) => fs::write(path, &table).map_err(|e| Error::io(path, e))?,
        None => print!("{table}"),
    }
    Ok(())
}

fn cmd_gen(args: GenArgs) -> Result<(), Error> {
    let mut spec = match args.preset.as_str() {
        "emotions-like" => synth::emotions_like(args.seed),
        "scene-like" => synth::scene_like(args.seed),
        other => {
            return Err(Error::Argument(format!(
                "unknown preset {other:?} (expected emotions-like or scene-like)"
            )))
        }
    };
    if let Some(n) = args.instances {
        spec.instances = n;
    }
    let ds = synth::generate(&spec)?;
    write_dataset_with_sidecar(&ds, &args.out)?;
    println!(
        "wrote {} instances, {} features in {} modalities, {} labels to {}",
        ds.n_instances(),
        ds.x.ncols(),
        ds.schema.modality_count(),
        ds.n_labels(),
        args.out.display()
    );
    Ok(())
}

fn cmd_partition(args: PartitionArgs) -> Result<(), Error> {
    let format = DataFormat::from_path(&args.data);
    let (x, y, names) = load_matrix(&args.data, format, args.labels)?;
    let (perm, _) = partition_by_info_gain(x.view(), y.view(), &args.dims)?;
    let permuted = permute_columns(x.view(), &perm);
    let costs = args.costs.clone().unwrap_or_else(|| vec![1.0; args.dims.len()]);
    let schema = ModalitySchema::new(args.dims.clone(), costs)?;
    let ds = MultiModalDataset::new(permuted, y, schema, names)?;
    write_dataset_with_sidecar(&ds, &args.out)?;
    println!(
        "partitioned {} columns into {:?}; wrote {}",
        ds.x.ncols(),
        args.dims,
        args.out.display()
    );
    Ok(())
}

fn write_dataset_with_sidecar(ds: &MultiModalDataset, out: &std::path::Path) -> Result<(), Error> {
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    ds.write_csv(out)?;
    let sidecar = mcc::experiment::default_schema_path(out);
    SchemaSpec::new(
        ds.schema.dims().to_vec(),
        ds.schema.costs().to_vec(),
        ds.n_labels(),
    )
    .to_json_file(&sidecar)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Gen(args) => cmd_gen(args),
        Command::Partition(args) => cmd_partition(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Argument(_) | Error::Schema(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
