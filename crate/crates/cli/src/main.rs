use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lragnn_core::pipeline::{
    self, generate_synthetic, AgeDistribution, Dataset, GradcheckPreset, PipelineConfig, SyntheticSpec,
};
use lragnn_core::{Error, Result};

#[derive(Parser)]
#[command(name = "lragnn", about = "Graph-based facial age estimation with a reinforcement-learned grid policy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic JSONL dataset with a controllable age imbalance.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 12)]
        nodes: usize,
        #[arg(long, default_value_t = 16)]
        features: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Decade holding most samples.
        #[arg(long, default_value_t = 2)]
        major_group: usize,
        /// Decade holding the rest.
        #[arg(long, default_value_t = 6)]
        minor_group: usize,
        /// Majority-to-minority ratio; 1 gives a balanced pair.
        #[arg(long, default_value_t = 9.0)]
        ratio: f64,
        /// Draw ages uniformly from [0, 99] instead.
        #[arg(long)]
        uniform: bool,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        /// Annotation σ attached to every record.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Train the full model and write a run directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Finite-difference gradient check of the whole model.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train ablated variants with one seed and tabulate them.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated variant names; defaults to all of them.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Input(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            samples,
            nodes,
            features,
            seed,
            major_group,
            minor_group,
            ratio,
            uniform,
            noise,
            sigma,
        } => {
            let distribution = if uniform {
                AgeDistribution::Uniform { min: 0, max: 99 }
            } else {
                AgeDistribution::two_groups(major_group, minor_group, ratio, 1.0)
            };
            let spec = SyntheticSpec {
                n_samples: samples,
                nodes,
                feature_width: features,
                distribution,
                noise,
                sigma,
                seed,
                ..SyntheticSpec::default()
            };
            let data = generate_synthetic(&spec)?;
            data.save(&out)?;
            println!("wrote {} samples to {}", data.len(), out.display());
        }
        Command::Train { config, data, out, seed } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let outcome = pipeline::run_train(&cfg, &data, &out)?;
            print!("{}", pipeline::report::render_run_report(&cfg, &outcome));
            println!("run directory: {}", out.display());
        }
        Command::Eval {
            config,
            checkpoint,
            data,
            out,
            seed,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let evaluation = pipeline::run_eval(&cfg, &checkpoint, &data)?;
            pipeline::report::write_eval(&out, &evaluation.metrics, &evaluation.predictions)?;
            print!("{}", evaluation.metrics.render_text());
        }
        Command::Gradcheck { seed, tolerance, out } => {
            let preset = GradcheckPreset {
                seed,
                tolerance,
                ..GradcheckPreset::default()
            };
            let report = pipeline::run_gradcheck(&preset)?;
            for p in &report.params {
                println!("{:<28} rel {:.3e}  abs {:.3e}", p.name, p.max_relative, p.max_absolute);
            }
            println!(
                "checked {} scalars, max relative error {:.3e}, tolerance {:.1e}",
                report.checked_scalars,
                report.max_relative(),
                tolerance
            );
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("gradcheck.json"), json(&report)?)?;
            }
            if !report.pass {
                let worst = report.worst().map_or(String::new(), |w| w.name.clone());
                return Err(Error::CheckFailed(format!(
                    "max relative error {:.3e} exceeds {tolerance:.1e} (worst parameter {worst})",
                    report.max_relative()
                )));
            }
            println!("gradcheck passed");
        }
        Command::Ablate {
            config,
            data,
            out,
            seed,
            variants,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let dataset = Dataset::load(&data)?;
            let variants: Vec<String> = if variants.is_empty() {
                pipeline::VARIANTS.iter().map(|v| v.to_string()).collect()
            } else {
                variants
            };
            let report = pipeline::run_ablation(&cfg, &dataset, &variants)?;
            std::fs::create_dir_all(&out)?;
            let table = report.render_table();
            std::fs::write(out.join("ablation.txt"), &table)?;
            std::fs::write(out.join("ablation.json"), json(&report)?)?;
            std::fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Ingestion { .. } => 3,
        Error::Numeric(_) => 4,
        Error::CheckFailed(_) => 5,
        Error::Compatibility(_) => 6,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
