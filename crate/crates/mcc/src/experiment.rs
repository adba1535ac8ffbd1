//! Cross-validated experiment driver.
//!
//! One run loads a dataset, splits it into folds, trains the chosen
//! algorithm per fold (folds in parallel up to a worker limit, merged in
//! fold order), aggregates metrics, and writes every artifact needed to
//! reproduce the run into the output directory. Re-running from the written
//! config reproduces the metric files byte for byte.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{train_br, train_cc, train_ecc, BaselineConfig, BaselineModel};
use crate::chain::{order_labels, ChainPlan};
use crate::dataset::{
    load_dataset, make_folds, DataFormat, MultiModalDataset, SchemaSpec, Standardizer,
};
use crate::error::{Error, Result};
use crate::inference::{cost_average, predict_chain, PredictionTrace, StopRule};
use crate::metrics::{cv_aggregate, hamming_loss, micro_f1, subset_accuracy, FoldMetrics,
    MetricReport};
use crate::training::{train_mcc, EpochLog, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Mcc,
    Br,
    Cc,
    Ecc,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Algorithm::Mcc => "mcc",
            Algorithm::Br => "br",
            Algorithm::Cc => "cc",
            Algorithm::Ecc => "ecc",
        };
        write!(f, "{name}")
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcc" => Ok(Algorithm::Mcc),
            "br" => Ok(Algorithm::Br),
            "cc" => Ok(Algorithm::Cc),
            "ecc" => Ok(Algorithm::Ecc),
            other => Err(Error::Argument(format!(
                "unknown algorithm {other:?} (expected mcc, br, cc or ecc)"
            ))),
        }
    }
}

/// Fully resolved experiment description; a copy is written next to the
/// results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: PathBuf,
    /// Schema sidecar; defaults to `<data stem>.schema.json` next to the
    /// data file.
    pub schema: Option<PathBuf>,
    /// Data format; defaults to the file extension.
    pub format: Option<DataFormat>,
    pub algo: Algorithm,
    pub folds: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    /// Ensemble size for ECC.
    pub ecc_chains: usize,
    /// Fold workers; 0 means all available cores.
    pub workers: usize,
    /// Whether the label-history modality's cost counts toward
    /// cost-average.
    pub include_history_cost: bool,
    /// Write per-stage parameter checkpoints for every fold (fold 0 is
    /// always written).
    pub save_all_params: bool,
}

impl ExperimentConfig {
    pub fn new(data: PathBuf, algo: Algorithm, out: PathBuf) -> Self {
        ExperimentConfig {
            data,
            schema: None,
            format: None,
            algo,
            folds: 10,
            seed: 7,
            out,
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
            ecc_chains: 10,
            workers: 0,
            include_history_cost: true,
            save_all_params: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Argument("need at least 2 folds".into()));
        }
        if self.ecc_chains == 0 {
            return Err(Error::Argument("ecc needs at least one chain".into()));
        }
        self.train.validate()
    }

    fn schema_path(&self) -> PathBuf {
        match &self.schema {
            Some(p) => p.clone(),
            None => default_schema_path(&self.data),
        }
    }
}

/// `foo.csv` -> `foo.schema.json` in the same directory.
pub fn default_schema_path(data: &Path) -> PathBuf {
    let stem = data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    data.with_file_name(format!("{stem}.schema.json"))
}

struct FoldArtifacts {
    metrics: FoldMetrics,
    plan: Option<ChainPlan>,
    traces: Option<Vec<(usize, usize, PredictionTrace)>>,
    logs: Option<Vec<(usize, Vec<EpochLog>)>>,
    checkpoints: Option<Vec<(usize, Vec<u8>)>>,
}

pub struct ExperimentOutcome {
    pub report: MetricReport,
    pub per_fold: Vec<FoldMetrics>,
    pub out_dir: PathBuf,
}

fn fold_seed(base: u64, fold: usize) -> u64 {
    base.wrapping_add((fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn run_fold(
    cfg: &ExperimentConfig,
    data: &MultiModalDataset,
    train_idx: &[usize],
    test_idx: &[usize],
    fold: usize,
    save_checkpoints: bool,
) -> Result<FoldArtifacts> {
    let train_raw = data.subset(train_idx);
    let test_raw = data.subset(test_idx);
    let scaler = Standardizer::fit(train_raw.x.view());
    let train = train_raw.with_features(scaler.transform(train_raw.x.view()))?;
    let test = test_raw.with_features(scaler.transform(test_raw.x.view()))?;

    let seed = fold_seed(cfg.seed, fold);
    match cfg.algo {
        Algorithm::Mcc => {
            let train_cfg = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let train = Arc::new(train);
            let test = Arc::new(test);
            let model = train_mcc(&train, &train_cfg)?;
            let rule = StopRule::new(train_cfg.cth, train_cfg.ath);
            let (z, traces) = predict_chain(&model.stages, &model.plan, &test, &rule)?;
            let all: Vec<&PredictionTrace> = traces.iter().flatten().collect();
            let metrics = FoldMetrics {
                micro_f1: micro_f1(z.view(), test.y.view())?,
                hamming_loss: hamming_loss(z.view(), test.y.view())?,
                subset_accuracy: subset_accuracy(z.view(), test.y.view())?,
                cost_average: cost_average(all, cfg.include_history_cost)?,
            };
            let mut flat_traces = Vec::new();
            for (stage_idx, stage_traces) in traces.into_iter().enumerate() {
                for (i, t) in stage_traces.into_iter().enumerate() {
                    flat_traces.push((test_idx[i], stage_idx + 1, t));
                }
            }
            let logs = model
                .stages
                .iter()
                .map(|s| (s.stage, s.log.clone()))
                .collect();
            let checkpoints = if save_checkpoints {
                let mut out = Vec::new();
                for s in &model.stages {
                    let mut buf = Vec::new();
                    s.params
                        .write_text(&mut buf)
                        .map_err(|e| Error::io(&cfg.out, e))?;
                    out.push((s.stage, buf));
                }
                Some(out)
            } else {
                None
            };
            Ok(FoldArtifacts {
                metrics,
                plan: Some(model.plan),
                traces: Some(flat_traces),
                logs: Some(logs),
                checkpoints,
            })
        }
        Algorithm::Br | Algorithm::Cc | Algorithm::Ecc => {
            let model = match cfg.algo {
                Algorithm::Br => BaselineModel::Br(train_br(&train, &cfg.baseline)?),
                Algorithm::Cc => {
                    let plan = order_labels(train.y.view(), cfg.train.history_cost)?;
                    BaselineModel::Cc(train_cc(&train, &plan.tau, &cfg.baseline)?)
                }
                Algorithm::Ecc => {
                    BaselineModel::Ecc(train_ecc(&train, cfg.ecc_chains, seed, &cfg.baseline)?)
                }
                Algorithm::Mcc => unreachable!(),
            };
            let z = crate::baselines::predict_with(&model, test.x.view());
            let metrics = FoldMetrics {
                micro_f1: micro_f1(z.view(), test.y.view())?,
                hamming_loss: hamming_loss(z.view(), test.y.view())?,
                subset_accuracy: subset_accuracy(z.view(), test.y.view())?,
                // Baselines always consume every modality.
                cost_average: data.schema.total_cost(),
            };
            Ok(FoldArtifacts {
                metrics,
                plan: None,
                traces: None,
                logs: None,
                checkpoints: None,
            })
        }
    }
}

/// Run k-fold cross-validation and write all artifacts. Exit-code mapping
/// for CLI callers: `Error::Argument`/`Error::Schema` are usage errors.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let spec = SchemaSpec::from_json_file(&cfg.schema_path())?;
    let format = cfg.format.unwrap_or_else(|| DataFormat::from_path(&cfg.data));
    let data = load_dataset(&cfg.data, format, &spec)?;
    let folds = make_folds(data.n_instances(), cfg.folds, cfg.seed)?;

    let workers = if cfg.workers == 0 {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    } else {
        cfg.workers
    }
    .min(cfg.folds)
    .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Argument(format!("worker pool: {e}")))?;

    let artifacts: Vec<FoldArtifacts> = pool.install(|| {
        (0..cfg.folds)
            .into_par_iter()
            .map(|f| {
                let train_idx = folds.train_indices(f);
                let test_idx = folds.test_indices(f);
                let save = cfg.save_all_params || f == 0;
                run_fold(cfg, &data, &train_idx, &test_idx, f, save)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let per_fold: Vec<FoldMetrics> = artifacts.iter().map(|a| a.metrics).collect();
    let report = cv_aggregate(&per_fold)?;
    write_artifacts(cfg, &artifacts, &per_fold, &report)?;

    Ok(ExperimentOutcome {
        report,
        per_fold,
        out_dir: cfg.out.clone(),
    })
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn write_artifacts(
    cfg: &ExperimentConfig,
    artifacts: &[FoldArtifacts],
    per_fold: &[FoldMetrics],
    report: &MetricReport,
) -> Result<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;

    let config_json = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::Validation(format!("serialize config: {e}")))?;
    write_file(&cfg.out.join("config.json"), &config_json)?;

    let mut folds_csv = String::from("fold,micro_f1,hamming_loss,subset_accuracy,cost_average\n");
    for (f, m) in per_fold.iter().enumerate() {
        folds_csv.push_str(&format!(
            "{f},{},{},{},{}\n",
            m.micro_f1, m.hamming_loss, m.subset_accuracy, m.cost_average
        ));
    }
    write_file(&cfg.out.join("folds.csv"), &folds_csv)?;

    let mut metrics_csv = String::from("algo,metric,mean,std\n");
    for (name, s) in [
        ("micro_f1", report.micro_f1),
        ("hamming_loss", report.hamming_loss),
        ("subset_accuracy", report.subset_accuracy),
        ("cost_average", report.cost_average),
    ] {
        metrics_csv.push_str(&format!("{},{name},{},{}\n", cfg.algo, s.mean, s.std));
    }
    write_file(&cfg.out.join("metrics.csv"), &metrics_csv)?;

    let metrics_md = format!(
        "| algorithm | micro_f1 | hamming_loss | subset_accuracy | cost_average |\n\
         |---|---|---|---|---|\n\
         | {} | {} | {} | {} | {} |\n",
        cfg.algo, report.micro_f1, report.hamming_loss, report.subset_accuracy,
        report.cost_average
    );
    write_file(&cfg.out.join("metrics.md"), &metrics_md)?;

    if cfg.algo == Algorithm::Mcc {
        let plans: Vec<&ChainPlan> = artifacts.iter().filter_map(|a| a.plan.as_ref()).collect();
        let plans_json = serde_json::to_string_pretty(&plans)
            .map_err(|e| Error::Validation(format!("serialize plans: {e}")))?;
        write_file(&cfg.out.join("chain_plans.json"), &plans_json)?;

        let mut traces_csv =
            String::from("fold,instance,stage,sequence,cost,confidence,label\n");
        for (f, a) in artifacts.iter().enumerate() {
            if let Some(traces) = &a.traces {
                for (instance, stage, t) in traces {
                    let seq: Vec<String> = t.sequence.iter().map(|m| m.to_string()).collect();
                    let conf = t.confidences.last().copied().unwrap_or(0.5);
                    traces_csv.push_str(&format!(
                        "{f},{instance},{stage},{},{},{conf},{}\n",
                        seq.join("|"),
                        t.cost(),
                        t.label
                    ));
                }
            }
        }
        write_file(&cfg.out.join("traces.csv"), &traces_csv)?;

        let mut log_csv = String::from("fold,stage,epoch,mean_loss,mean_extracted,mean_confidence\n");
        for (f, a) in artifacts.iter().enumerate() {
            if let Some(logs) = &a.logs {
                for (stage, entries) in logs {
                    for e in entries {
                        log_csv.push_str(&format!(
                            "{f},{stage},{},{},{},{}\n",
                            e.epoch, e.mean_loss, e.mean_extracted, e.mean_confidence
                        ));
                    }
                }
            }
        }
        write_file(&cfg.out.join("training_log.csv"), &log_csv)?;

        let ckpt_dir = cfg.out.join("checkpoints");
        fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
        for (f, a) in artifacts.iter().enumerate() {
            if let Some(checkpoints) = &a.checkpoints {
                for (stage, bytes) in checkpoints {
                    let path = ckpt_dir.join(format!("fold{f}_stage{stage}.txt"));
                    let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                    file.write_all(bytes).map_err(|e| Error::io(&path, e))?;
                }
            }
        }
    }
    Ok(())
}

/// Merge completed runs into one markdown table, bolding the best value
/// per metric column.
pub fn compare(dirs: &[PathBuf]) -> Result<String> {
    if dirs.is_empty() {
        return Err(Error::Argument("compare needs at least one run".into()));
    }
    #[derive(Clone)]
    struct Row {
        algo: String,
        dir: String,
        values: [(f64, f64); 4], // (mean, std) per metric column
    }
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for dir in dirs {
        let metrics_path = dir.join("metrics.csv");
        let config_path = dir.join("config.json");
        if !metrics_path.exists() || !config_path.exists() {
            missing.push(dir.display().to_string());
            continue;
        }
        let text = fs::read_to_string(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        let mut values = [(f64::NAN, f64::NAN); 4];
        let mut algo = String::new();
        for line in text.lines().skip(1) {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                continue;
            }
            algo = parts[0].to_string();
            let mean: f64 = parts[2].parse().map_err(|_| Error::Parse {
                line: 0,
                message: format!("bad mean in {}", metrics_path.display()),
            })?;
            let std: f64 = parts[3].parse().map_err(|_| Error::Parse {
                line: 0,
                message: format!("bad std in {}", metrics_path.display()),
            })?;
            let idx = match parts[1] {
                "micro_f1" => 0,
                "hamming_loss" => 1,
                "subset_accuracy" => 2,
                "cost_average" => 3,
                _ => continue,
            };
            values[idx] = (mean, std);
        }
        rows.push(Row {
            algo,
            dir: dir.display().to_string(),
            values,
        });
    }
    if !missing.is_empty() {
        return Err(Error::Argument(format!(
            "missing run artifacts in: {}",
            missing.join(", ")
        )));
    }

    // Column direction: larger is better for f1/subset, smaller for
    // hamming/cost.
    let higher_better = [true, false, false, true];
    let best: Vec<f64> = (0..4)
        .map(|c| {
            let means = rows.iter().map(|r| r.values[c].0);
            if higher_better[c] {
                means.fold(f64::NEG_INFINITY, f64::max)
            } else {
                means.fold(f64::INFINITY, f64::min)
            }
        })
        .collect();

    let mut out = String::from(
        "| algorithm | micro_f1 | hamming_loss | subset_accuracy | cost_average | run |\n\
         |---|---|---|---|---|---|\n",
    );
    for row in &rows {
        out.push_str(&format!("| {} |", row.algo));
        for (c, &best_v) in best.iter().enumerate() {
            let (mean, std) = row.values[c];
            let cell = format!("{mean:.3}\u{b1}{std:.3}");
            if mean == best_v {
                out.push_str(&format!(" **{cell}** |"));
            } else {
                out.push_str(&format!(" {cell} |"));
            }
        }
        out.push_str(&format!(" {} |\n", row.dir));
    }
    Ok(out)
}
