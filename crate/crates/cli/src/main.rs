use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use jmpose_core::checkpoint;
use jmpose_core::dataset::{load_samples, select_challenging_subset, select_clean_subset, Sample, SyntheticDataSpec};
use jmpose_core::eval::evaluate;
use jmpose_core::flow::FlowProviderKind;
use jmpose_core::gradcheck;
use jmpose_core::mi::{calibration_csv, gaussian_calibration, CalibrationConfig};
use jmpose_core::model::{ModelConfig, Variant};
use jmpose_core::train::{ablate, ExperimentConfig, Trainer};
use jmpose_core::{Error, Result};

mod plot;

#[derive(Parser)]
#[command(name = "jmpose", version, about = "Joint-motion mutual learning for video pose estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    Oracle,
    Blockmatch,
    File,
}

impl From<Provider> for FlowProviderKind {
    fn from(p: Provider) -> Self {
        match p {
            Provider::Oracle => FlowProviderKind::Oracle,
            Provider::Blockmatch => FlowProviderKind::BlockMatch,
            Provider::File => FlowProviderKind::File,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Subset {
    All,
    Clean,
    Challenging,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic clip dataset described by a TOML spec.
    GenerateData {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; the checkpoint is rewritten after every epoch.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Metrics JSONL (defaults to the checkpoint path with a .jsonl extension).
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, value_enum)]
        flow_provider: Option<Provider>,
    },
    /// Evaluate a checkpoint on a clip directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        subset: Subset,
        #[arg(long, default_value_t = 0.2)]
        tau: f64,
        #[arg(long, value_enum)]
        flow_provider: Option<Provider>,
    },
    /// Train and evaluate one architecture variant.
    Ablate {
        #[arg(long)]
        variant: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        flow_provider: Option<Provider>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value = "all")]
        module: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Calibrate the information bounds on correlated Gaussians.
    MiBench {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,0.9")]
        rho: Vec<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Plot loss and mAP curves from metrics files.
    Plot {
        #[arg(long, num_args = 1.., required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numerical(_) => 3,
        _ => 1,
    }
}

fn load_config(path: &Path, provider: Option<Provider>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(p) = provider {
        cfg.flow_provider = p.into();
    }
    // relative data paths are taken from the config file's directory
    let base = path.parent().unwrap_or(Path::new("."));
    for d in [&mut cfg.data.train_dir, &mut cfg.data.val_dir].into_iter().flatten() {
        if d.is_relative() {
            *d = base.join(&*d);
        }
    }
    Ok(cfg)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenerateData { spec, out } => {
            let spec = match spec {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                    toml::from_str::<SyntheticDataSpec>(&text).map_err(|e| Error::Config(e.to_string()))?
                }
                None => SyntheticDataSpec::default(),
            };
            let n = spec.write(&out)?;
            println!("wrote {n} clips to {}", out.display());
        }
        Command::Train { config, out, metrics, resume, flow_provider } => {
            let cfg = load_config(&config, flow_provider)?;
            let mut trainer = match resume {
                Some(p) => {
                    let mut t = checkpoint::load(&p)?;
                    if t.config.model != cfg.model || t.config.variant != cfg.variant || t.config.seed != cfg.seed {
                        return Err(Error::Config("the resumed checkpoint was trained with a different model, variant or seed".into()));
                    }
                    t.config = cfg;
                    t
                }
                None => Trainer::new(cfg)?,
            };
            let train = trainer.config.data.load_train(trainer.config.flow_provider)?;
            let val = trainer.config.data.load_val(trainer.config.flow_provider)?;
            let metrics = metrics.unwrap_or_else(|| out.with_extension("jsonl"));
            let mut sink = fs::OpenOptions::new().create(true).append(true).open(&metrics)?;
            let result = trainer.run(&train, &val, |m, t| {
                writeln!(sink, "{}", serde_json::to_string(m)?)?;
                checkpoint::save(t, &out)
            });
            if let Err(Error::Numerical(dump)) = &result {
                let path = out.with_extension("nan.json");
                fs::write(&path, dump)?;
                eprintln!("diagnostic dump written to {}", path.display());
            }
            result?;
            checkpoint::save(&trainer, &out)?;
            println!("checkpoint {} (epoch {})", out.display(), trainer.epoch);
        }
        Command::Eval { ckpt, data, subset, tau, flow_provider } => {
            let t = checkpoint::load(&ckpt)?;
            let kind = flow_provider.map(Into::into).unwrap_or(t.config.flow_provider);
            let samples = load_samples(&data, kind, ModelConfig::STRIDE)?;
            let (view, label): (Vec<&Sample>, &str) = match subset {
                Subset::All => (samples.iter().collect(), "all"),
                Subset::Clean => (select_clean_subset(&samples), "clean"),
                Subset::Challenging => (select_challenging_subset(&samples), "challenging"),
            };
            let report = evaluate(&t.model, &view, tau, label)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Ablate { variant, config, out, flow_provider } => {
            let variant: Variant = variant.parse()?;
            let cfg = load_config(&config, flow_provider)?;
            let train = cfg.data.load_train(cfg.flow_provider)?;
            let val = cfg.data.load_val(cfg.flow_provider)?;
            let report = ablate(&cfg, variant, &train, &val)?;
            let text = serde_json::to_string_pretty(&report)?;
            if let Some(p) = out {
                fs::write(p, &text)?;
            }
            println!("{text}");
        }
        Command::Gradcheck { module, seed } => {
            let results = gradcheck::run(&module, seed)?;
            let mut failed = 0;
            for r in &results {
                println!("{:<7} {:<32} rel_err {:.3e} {}", r.module, r.wrt, r.rel_error, if r.passed { "ok" } else { "FAIL" });
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                return Err(Error::Numerical(format!("{failed} gradient checks exceed {:e}", gradcheck::TOLERANCE)));
            }
        }
        Command::MiBench { out, rho, steps } => {
            let mut cfg = CalibrationConfig::default();
            if let Some(s) = steps {
                cfg.steps = s;
            }
            let rows = gaussian_calibration(&rho, &cfg)?;
            let csv = calibration_csv(&rows);
            File::create(&out)?.write_all(csv.as_bytes())?;
            print!("{csv}");
        }
        Command::Plot { metrics, out } => {
            let runs = metrics.iter().map(|p| plot::read_metrics(p)).collect::<Result<Vec<_>>>()?;
            plot::render(&runs, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
