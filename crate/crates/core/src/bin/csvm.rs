use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use csvm::convolution::{transform_dataset, FilterBank};
use csvm::data_io::{split_folds, Format};
use csvm::experiment::{
    baseline_svm, emit_report, run_on_dataset, tune_on, DataSource, DesignChoice, Emit, ExperimentConfig, Mode,
    TuningConfig,
};
use csvm::oa::RuntimeSource;
use csvm::rng::derive_seed;
use csvm::sso::{SsoParams, TrainedModel};
use csvm::svm::SvmConfig;
use csvm::CsvmError;

#[derive(Parser)]
#[command(name = "csvm", version, about = "Convolutional SVM with swarm-trained filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the orthogonal-array trials on one fold and save the winning parameters.
    Tune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tuning: TuningArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Tune (unless --params is given), then train on every fold and report.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tuning: TuningArgs,
        #[arg(long, default_value_t = 15)]
        reps: usize,
        #[arg(long, value_delimiter = ',', default_value = "25,50,75,100")]
        checkpoints: Vec<usize>,
        /// Optimizer parameters as JSON, e.g. the params.json written by `tune`.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value = "both")]
        emit: Emit,
    },
    /// Plain SVM accuracy on every fold.
    Baseline {
        #[command(flatten)]
        common: Common,
    },
    /// Apply a saved filter bank to a dataset and write the result as CSV.
    Transform {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "csv")]
        format: Format,
        #[arg(long)]
        label_column: Option<usize>,
        /// Filter bank JSON (list of rows) or a trained model JSON.
        #[arg(long)]
        bank: PathBuf,
        /// Number of leading filters to apply; defaults to all of them.
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "csv")]
    format: Format,
    /// 0-based label column for CSV input; defaults to the last column.
    #[arg(long)]
    label_column: Option<usize>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "transductive")]
    mode: Mode,
    /// SVM box constraint.
    #[arg(long, default_value_t = 1.0)]
    svm_c: f64,
}

#[derive(Args)]
struct TuningArgs {
    /// 1-based fold used for tuning.
    #[arg(long, default_value_t = 1)]
    tune_fold: usize,
    #[arg(long, default_value_t = 15)]
    tune_reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "25,50,75")]
    tune_checkpoints: Vec<usize>,
    #[arg(long, default_value = "canonical", value_parser = parse_design)]
    design: DesignChoice,
    /// Runtime compared by the second selection rule: work or wall.
    #[arg(long, default_value = "work", value_parser = parse_runtime)]
    runtime: RuntimeSource,
}

fn parse_design(s: &str) -> Result<DesignChoice, String> {
    match s {
        "canonical" => Ok(DesignChoice::Canonical),
        "published" => Ok(DesignChoice::Published),
        _ => Err(format!("expected canonical or published, got {s:?}")),
    }
}

fn parse_runtime(s: &str) -> Result<RuntimeSource, String> {
    match s {
        "work" => Ok(RuntimeSource::Work),
        "wall" => Ok(RuntimeSource::Wall),
        _ => Err(format!("expected work or wall, got {s:?}")),
    }
}

impl Common {
    fn source(&self) -> DataSource {
        DataSource { path: self.dataset.clone(), format: self.format, label_column: self.label_column }
    }

    fn config(&self, tuning: Option<&TuningArgs>) -> Result<ExperimentConfig, CsvmError> {
        let mut cfg = ExperimentConfig {
            folds: self.folds,
            seed: self.seed,
            mode: self.mode,
            svm: SvmConfig { c: self.svm_c, ..SvmConfig::default() },
            ..ExperimentConfig::default()
        };
        if let Some(t) = tuning {
            if t.tune_fold == 0 {
                return Err(CsvmError::InvalidParameter("--tune-fold is 1-based".into()));
            }
            cfg.tuning = TuningConfig {
                fold: t.tune_fold - 1,
                reps: t.tune_reps,
                checkpoints: t.tune_checkpoints.clone(),
                design: t.design,
                runtime_source: t.runtime,
                ..TuningConfig::default()
            };
        }
        Ok(cfg)
    }
}

fn execute(command: Command) -> Result<(), CsvmError> {
    match command {
        Command::Tune { common, tuning, out } => {
            let data = common.source().load()?;
            let cfg = common.config(Some(&tuning))?;
            cfg.validate()?;
            let t = tune_on(&data, &cfg)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("tune.csv"), t.report.to_csv())?;
            fs::write(out.join("params.json"), serde_json::to_string_pretty(&t.report.params)?)?;
            fs::write(out.join("tune.json"), serde_json::to_string_pretty(&t)?)?;
            println!("selected try {} with n_gen {}", t.selected_try, t.n_gen);
            println!("{}", serde_json::to_string(&t.report.params)?);
        }
        Command::Run { common, tuning, reps, checkpoints, params, out, emit } => {
            let data = common.source().load()?;
            let mut cfg = common.config(Some(&tuning))?;
            cfg.reps = reps;
            cfg.checkpoints = checkpoints;
            if let Some(p) = params {
                cfg.params = Some(serde_json::from_str::<SsoParams>(&fs::read_to_string(p)?)?);
            }
            let report = run_on_dataset(&data, &cfg)?;
            for path in emit_report(&report, emit, &out)? {
                println!("wrote {}", path.display());
            }
            for f in &report.folds {
                let last = f.checkpoints.last().expect("at least one checkpoint");
                println!(
                    "fold {:>2}: svm {:.4}  avg {:.4}  max {:.4}",
                    f.fold + 1,
                    f.baseline,
                    last.stats.avg,
                    last.stats.max
                );
            }
            for v in report.invariant_violations() {
                eprintln!("warning: {v}");
            }
        }
        Command::Baseline { common } => {
            let data = common.source().load()?;
            let cfg = common.config(None)?;
            let plan = split_folds(&data, cfg.folds, derive_seed(cfg.seed, &[0]))?;
            println!("fold,records,svm");
            let mut total = 0.0;
            for j in 0..cfg.folds {
                let fold = plan.fold(&data, j);
                let rest = (cfg.mode == Mode::Split).then(|| plan.complement(&data, j));
                let acc = baseline_svm(&fold, rest.as_ref(), &cfg.svm, cfg.mode, derive_seed(cfg.seed, &[2, j as u64]))?;
                total += acc;
                println!("{},{},{}", j + 1, fold.len(), acc);
            }
            println!("mean,,{}", total / cfg.folds as f64);
        }
        Command::Transform { dataset, format, label_column, bank, depth, out } => {
            let data = DataSource { path: dataset, format, label_column }.load()?;
            let text = fs::read_to_string(&bank)?;
            let bank = match FilterBank::from_json(&text) {
                Ok(b) => b,
                Err(_) => TrainedModel::from_json(&text)?.bank,
            };
            let depth = depth.unwrap_or(bank.n_filter());
            fs::write(&out, transform_dataset(&data, &bank, depth)?.to_csv())?;
        }
    }
    Ok(())
}

fn exit_code(err: &CsvmError) -> u8 {
    if err.is_data_error() {
        2
    } else {
        match err {
            CsvmError::InvalidParameter(_)
            | CsvmError::FilterTooLong { .. }
            | CsvmError::DepthOutOfRange { .. }
            | CsvmError::InvalidFoldCount { .. } => 1,
            _ => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
