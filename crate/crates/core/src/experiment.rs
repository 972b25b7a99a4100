//! Two-phase experiment: tune on one fold, then train repeatedly on every
//! fold and report checkpoint statistics against the plain SVM.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convolution::{transform_dataset, FilterBank};
use crate::data_io::{load_dataset, normalize, split_folds, Dataset, Format};
use crate::error::{CsvmError, Result};
use crate::oa::{build_l9, tune, LevelTable, OaDesign, RuntimeSource, TuneReport};
use crate::rng::derive_seed;
use crate::sso::{train, Fitness, FitnessMode, SsoParams, TrainedModel};
use crate::svm::{accuracy, train_svc, SvmConfig};

/// How per-fold accuracy is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Train and score on the fold itself.
    #[default]
    Transductive,
    /// Train on 80% of the fold, score on the rest.
    Holdout,
    /// Train on the other folds, score on this one.
    Split,
}

impl std::str::FromStr for Mode {
    type Err = CsvmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transductive" => Ok(Mode::Transductive),
            "holdout" => Ok(Mode::Holdout),
            "split" => Ok(Mode::Split),
            other => Err(CsvmError::param(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignChoice {
    #[default]
    Canonical,
    Published,
}

impl DesignChoice {
    pub fn design(self) -> OaDesign {
        match self {
            DesignChoice::Canonical => build_l9(),
            DesignChoice::Published => OaDesign::published(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningConfig {
    /// 0-based fold the trials run on.
    pub fold: usize,
    pub reps: usize,
    pub checkpoints: Vec<usize>,
    pub design: DesignChoice,
    pub levels: LevelTable,
    pub runtime_source: RuntimeSource,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            fold: 0,
            reps: 15,
            checkpoints: vec![25, 50, 75],
            design: DesignChoice::Canonical,
            levels: LevelTable::default(),
            runtime_source: RuntimeSource::Work,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub folds: usize,
    pub reps: usize,
    pub checkpoints: Vec<usize>,
    pub seed: u64,
    pub mode: Mode,
    /// Used for the baseline and for every SSO fitness evaluation.
    pub svm: SvmConfig,
    /// Fixed optimizer parameters; skips tuning when present.
    pub params: Option<SsoParams>,
    pub tuning: TuningConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            folds: 10,
            reps: 15,
            checkpoints: vec![25, 50, 75, 100],
            seed: 0,
            mode: Mode::Transductive,
            svm: SvmConfig::default(),
            params: None,
            tuning: TuningConfig::default(),
        }
    }
}

fn check_checkpoints(cps: &[usize]) -> Result<()> {
    if cps.is_empty() || cps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CsvmError::param(format!("checkpoints {cps:?} must be nonempty and strictly increasing")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        check_checkpoints(&self.checkpoints)?;
        if self.reps == 0 {
            return Err(CsvmError::param("reps must be at least 1"));
        }
        if self.params.is_none() {
            check_checkpoints(&self.tuning.checkpoints)?;
            if self.tuning.reps == 0 {
                return Err(CsvmError::param("tuning reps must be at least 1"));
            }
            if self.tuning.fold >= self.folds {
                return Err(CsvmError::param(format!("tuning fold {} is not below fold count {}", self.tuning.fold, self.folds)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub avg: f64,
    pub max: f64,
    pub min: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for one sample.
    pub stdev: f64,
}

type StatRow = (&'static str, f64, fn(&Summary) -> f64);

pub fn summarize(samples: &[f64]) -> Result<Summary> {
    if samples.is_empty() {
        return Err(CsvmError::EmptyInput);
    }
    let n = samples.len() as f64;
    let avg = samples.iter().sum::<f64>() / n;
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let stdev = if samples.len() < 2 {
        0.0
    } else {
        (samples.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(Summary { avg, max, min, stdev })
}

/// Gain over the baseline as a percentage of the remaining headroom, for the
/// average and the best fitness. `None` when the baseline is already perfect.
pub fn mpi_metrics(f_svm: f64, avg: f64, max: f64) -> Result<(Option<f64>, Option<f64>)> {
    if !(0.0..=1.0).contains(&f_svm) {
        return Err(CsvmError::param(format!("baseline accuracy {f_svm} outside [0, 1]")));
    }
    if f_svm == 1.0 {
        return Ok((None, None));
    }
    let mpi = |x: f64| 100.0 * (x - f_svm) / (1.0 - f_svm);
    Ok((Some(mpi(avg)), Some(mpi(max))))
}

fn sso_mode(mode: Mode) -> FitnessMode {
    match mode {
        Mode::Holdout => FitnessMode::Holdout,
        Mode::Transductive | Mode::Split => FitnessMode::Transductive,
    }
}

/// Plain SVM accuracy on a fold under `mode`. For split mode pass the other
/// folds as `rest`.
pub fn baseline_svm(fold: &Dataset, rest: Option<&Dataset>, svm: &SvmConfig, mode: Mode, holdout_seed: u64) -> Result<f64> {
    match mode {
        Mode::Split => {
            let rest = rest.ok_or_else(|| CsvmError::param("split mode needs the training folds"))?;
            accuracy(&train_svc(rest, svm)?, fold)
        }
        _ => {
            let params = SsoParams { svm: svm.clone(), fitness_mode: sso_mode(mode), holdout_seed, ..SsoParams::default() };
            Fitness::new(fold, &params)?.baseline()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointReport {
    pub generation: usize,
    pub stats: Summary,
    pub mpi_avg: Option<f64>,
    pub mpi_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    /// 0-based.
    pub fold: usize,
    pub n_records: usize,
    pub baseline: f64,
    pub checkpoints: Vec<CheckpointReport>,
    /// `fitness[rep][checkpoint]`.
    pub fitness: Vec<Vec<f64>>,
    /// Bank of the best repetition at the last checkpoint.
    pub best_bank: FilterBank,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSummary {
    pub selected_try: usize,
    pub n_gen: usize,
    pub report: TuneReport,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub n_records: usize,
    pub n_att: usize,
    pub config: ExperimentConfig,
    pub tuning: Option<TuningSummary>,
    /// Optimizer parameters used for every fold.
    pub params: SsoParams,
    pub fold_sizes: Vec<usize>,
    pub folds: Vec<FoldReport>,
    pub wall_seconds: f64,
}

fn millis(t: Instant) -> f64 {
    (t.elapsed().as_secs_f64() * 1000.0).round() / 1000.0
}

impl RunReport {
    /// Copy with every wall-clock field zeroed.
    pub fn without_wall_clock(&self) -> RunReport {
        let mut r = self.clone();
        r.wall_seconds = 0.0;
        for f in &mut r.folds {
            f.wall_seconds = 0.0;
        }
        if let Some(t) = &mut r.tuning {
            t.wall_seconds = 0.0;
            for s in &mut t.report.stats {
                for c in &mut s.checkpoints {
                    c.runtime_seconds = 0.0;
                }
            }
        }
        r
    }

    /// Violated report invariants, as messages.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for f in &self.folds {
            for c in &f.checkpoints {
                let s = c.stats;
                if !(s.min <= s.avg + 1e-12 && s.avg <= s.max + 1e-12 && s.stdev >= 0.0) {
                    out.push(format!("fold {} checkpoint {}: summary out of order {s:?}", f.fold + 1, c.generation));
                }
            }
            if self.config.mode != Mode::Split {
                for w in f.checkpoints.windows(2) {
                    if w[1].stats.max < w[0].stats.max || w[1].stats.avg < w[0].stats.avg - 1e-12 {
                        out.push(format!("fold {}: fitness fell between checkpoints {} and {}", f.fold + 1, w[0].generation, w[1].generation));
                    }
                }
            }
        }
        out
    }

    /// Appendix-style table: four summary rows per fold.
    pub fn appendix_csv(&self) -> String {
        let mut out = String::from("fold,index,SVM");
        for g in &self.config.checkpoints {
            out.push_str(&format!(",F{g}"));
        }
        out.push('\n');
        for f in &self.folds {
            let rows: [StatRow; 4] = [
                ("AVG", f.baseline, |s| s.avg),
                ("MAX", f.baseline, |s| s.max),
                ("MIN", f.baseline, |s| s.min),
                ("STDEV", 0.0, |s| s.stdev),
            ];
            for (name, svm, pick) in rows {
                out.push_str(&format!("{},{name},{}", f.fold + 1, 100.0 * svm));
                for c in &f.checkpoints {
                    out.push_str(&format!(",{}", 100.0 * pick(&c.stats)));
                }
                out.push('\n');
            }
        }
        out
    }

    /// One row per fold, checkpoint and repetition.
    pub fn long_csv(&self) -> String {
        let mut out = String::from("fold,checkpoint,repetition,fitness\n");
        for f in &self.folds {
            for (ci, g) in self.config.checkpoints.iter().enumerate() {
                for (r, row) in f.fitness.iter().enumerate() {
                    out.push_str(&format!("{},{g},{},{}\n", f.fold + 1, r + 1, row[ci]));
                }
            }
        }
        out
    }

    /// MPI per fold and checkpoint; `*` marks a perfect baseline.
    pub fn mpi_csv(&self) -> String {
        let mut out = String::from("fold,checkpoint,mpi_avg,mpi_max\n");
        let cell = |v: Option<f64>| v.map_or_else(|| "*".to_string(), |x| x.to_string());
        for f in &self.folds {
            for c in &f.checkpoints {
                out.push_str(&format!("{},{},{},{}\n", f.fold + 1, c.generation, cell(c.mpi_avg), cell(c.mpi_max)));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSource {
    pub path: PathBuf,
    pub format: Format,
    pub label_column: Option<usize>,
}

impl DataSource {
    /// Load and normalize.
    pub fn load(&self) -> Result<Dataset> {
        Ok(normalize(&load_dataset(&self.path, self.format, self.label_column)?))
    }
}

pub fn run_experiment(source: &DataSource, config: &ExperimentConfig) -> Result<RunReport> {
    run_on_dataset(&source.load()?, config)
}

/// Tune on the configured fold of an already-split dataset.
pub fn tune_on(data: &Dataset, config: &ExperimentConfig) -> Result<TuningSummary> {
    let start = Instant::now();
    let plan = split_folds(data, config.folds, derive_seed(config.seed, &[0]))?;
    let fold = plan.fold(data, config.tuning.fold);
    let base = SsoParams {
        svm: config.svm.clone(),
        fitness_mode: sso_mode(config.mode),
        holdout_seed: derive_seed(config.seed, &[2, config.tuning.fold as u64]),
        ..SsoParams::default()
    };
    let t = &config.tuning;
    let report = tune(&fold, &t.design.design(), &t.levels, &base, t.reps, &t.checkpoints, derive_seed(config.seed, &[1]), t.runtime_source)?;
    Ok(TuningSummary { selected_try: report.selected_try, n_gen: report.params.n_gen, report, wall_seconds: millis(start) })
}

pub fn run_on_dataset(data: &Dataset, config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let start = Instant::now();
    let plan = split_folds(data, config.folds, derive_seed(config.seed, &[0]))?;

    let (tuning, chosen) = match &config.params {
        Some(p) => (None, p.clone()),
        None => {
            let t = tune_on(data, config)?;
            let p = t.report.params.clone();
            (Some(t), p)
        }
    };
    let n_gen = *config.checkpoints.last().expect("validated");
    let params = SsoParams { n_gen, svm: config.svm.clone(), fitness_mode: sso_mode(config.mode), ..chosen };
    params.validate(data.n_att)?;

    let folds = (0..config.folds)
        .into_par_iter()
        .map(|j| run_fold(data, &plan, j, &params, config))
        .collect::<Result<Vec<_>>>()?;

    Ok(RunReport {
        dataset: data.name.clone(),
        n_records: data.len(),
        n_att: data.n_att,
        config: config.clone(),
        tuning,
        params,
        fold_sizes: plan.fold_sizes(),
        folds,
        wall_seconds: millis(start),
    })
}

fn run_fold(data: &Dataset, plan: &crate::data_io::FoldPlan, j: usize, params: &SsoParams, config: &ExperimentConfig) -> Result<FoldReport> {
    let start = Instant::now();
    let fold = plan.fold(data, j);
    let holdout_seed = derive_seed(config.seed, &[2, j as u64]);
    let params = SsoParams { holdout_seed, ..params.clone() };
    let rest = (config.mode == Mode::Split).then(|| plan.complement(data, j));
    let baseline = baseline_svm(&fold, rest.as_ref(), &config.svm, config.mode, holdout_seed)?;
    let train_set = rest.as_ref().unwrap_or(&fold);

    let runs = (0..config.reps)
        .into_par_iter()
        .map(|r| {
            let model = train(train_set, &params, derive_seed(config.seed, &[3, j as u64, r as u64]), &config.checkpoints)?;
            let fitness = match &rest {
                Some(rest) => split_scores(&model, rest, &fold, &config.svm)?,
                None => model.checkpoints.iter().map(|c| c.fitness).collect(),
            };
            Ok((fitness, model))
        })
        .collect::<Result<Vec<_>>>()?;

    let checkpoints = config
        .checkpoints
        .iter()
        .enumerate()
        .map(|(ci, &generation)| {
            let column: Vec<f64> = runs.iter().map(|(f, _)| f[ci]).collect();
            let stats = summarize(&column)?;
            let (mpi_avg, mpi_max) = mpi_metrics(baseline, stats.avg, stats.max)?;
            Ok(CheckpointReport { generation, stats, mpi_avg, mpi_max })
        })
        .collect::<Result<Vec<_>>>()?;

    let last = config.checkpoints.len() - 1;
    let mut best = 0;
    for (r, (f, _)) in runs.iter().enumerate() {
        if f[last] > runs[best].0[last] {
            best = r;
        }
    }
    let best_bank = runs[best].1.bank.clone();
    let fitness = runs.into_iter().map(|(f, _)| f).collect();
    Ok(FoldReport { fold: j, n_records: fold.len(), baseline, checkpoints, fitness, best_bank, wall_seconds: millis(start) })
}

/// Accuracy on `test` of each checkpoint's bank, with the SVM retrained on
/// the transformed `train`.
fn split_scores(model: &TrainedModel, train: &Dataset, test: &Dataset, svm: &SvmConfig) -> Result<Vec<f64>> {
    model
        .checkpoints
        .iter()
        .map(|c| {
            let tr = transform_dataset(train, &c.bank, c.depth)?;
            let te = transform_dataset(test, &c.bank, c.depth)?;
            accuracy(&train_svc(&tr, svm)?, &te)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emit {
    Csv,
    Json,
    #[default]
    Both,
}

impl std::str::FromStr for Emit {
    type Err = CsvmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Emit::Csv),
            "json" => Ok(Emit::Json),
            "both" => Ok(Emit::Both),
            other => Err(CsvmError::param(format!("unknown emit format {other:?}"))),
        }
    }
}

/// Write the report files into `dir`, returning the paths written.
pub fn emit_report(report: &RunReport, emit: Emit, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files: Vec<(&str, String)> = Vec::new();
    if matches!(emit, Emit::Csv | Emit::Both) {
        files.push(("folds.csv", report.appendix_csv()));
        files.push(("fitness_long.csv", report.long_csv()));
        files.push(("mpi.csv", report.mpi_csv()));
        if let Some(t) = &report.tuning {
            files.push(("tune.csv", t.report.to_csv()));
        }
    }
    if matches!(emit, Emit::Json | Emit::Both) {
        files.push(("report.json", report.to_json()));
    }
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
