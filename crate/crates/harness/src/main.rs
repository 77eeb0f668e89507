use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use taskdn::dataset::{build_dataset, DatasetManifest};
use taskdn::{crossval, evaluate, models, report, Config, HarnessError, Result};

#[derive(Subcommand)]
enum Command {
    /// Simulate the studies and write volumes plus manifest.
    Dataset(Opts),
    /// Train the fold models for the selected dose levels and lambdas.
    Train(Opts),
    /// Train over the lambda grid and select lambda on the validation studies.
    Crossval(Opts),
    /// Score the test set with every method.
    Evaluate(Opts),
    /// Write the markdown summary and figure/table CSVs.
    Report(Opts),
}

#[derive(clap::Args)]
struct Opts {
    #[arg(long)]
    config: PathBuf,
    /// Restrict to one configured dose level.
    #[arg(long)]
    dose: Option<f64>,
    /// Lambda to train or evaluate (default: whole grid / selected value).
    #[arg(long)]
    lambda: Option<f64>,
    /// Output directory (default: `out_dir` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Parser)]
#[command(name = "taskdn", version, about = "Task-specific low-dose SPECT denoising experiments")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

fn run(args: Args) -> Result<()> {
    let (Command::Dataset(opts) | Command::Train(opts) | Command::Crossval(opts) | Command::Evaluate(opts) | Command::Report(opts)) =
        &args.command;
    let Opts { config, dose, lambda, out } = opts;
    let (dose, lambda) = (*dose, *lambda);
    let cfg = Config::load(config)?;
    let out = cfg.out_dir(out.as_deref());
    let doses = cfg.doses(dose)?;
    if let Some(l) = lambda {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(HarnessError::Config(format!("lambda must be nonnegative, got {l}")));
        }
    }
    match args.command {
        Command::Dataset(_) => {
            std::fs::create_dir_all(&out)?;
            let m = build_dataset(&cfg, &out)?;
            println!("{} studies, {} samples written to {}", m.studies.len(), m.samples.len(), out.display());
        }
        Command::Train(_) => {
            let m = DatasetManifest::load(&out)?;
            let lambdas = lambda.map_or_else(|| cfg.study.lambda_grid.clone(), |l| vec![l]);
            for &d in &doses {
                for &l in &lambdas {
                    models::train_fold_models(&cfg, &out, &m, d, l)?;
                    println!("trained dose {d}, lambda {l}: {}", models::model_dir(&out, d, l).display());
                }
            }
        }
        Command::Crossval(_) => {
            let m = DatasetManifest::load(&out)?;
            for &d in &doses {
                let s = crossval::run_crossval(&cfg, &out, &m, d)?;
                for r in &s.lambdas {
                    println!("dose {d} lambda {}: mean validation AUC {:.4}", r.lambda, r.mean_auc);
                }
                println!("dose {d}: selected lambda {}", s.selected_lambda);
            }
        }
        Command::Evaluate(_) => {
            let m = DatasetManifest::load(&out)?;
            for &d in &doses {
                let e = evaluate::run_evaluate(&cfg, &out, &m, d, lambda)?;
                for r in &e.auc {
                    println!("dose {d} {} {}: AUC {:.3} [{:.3}, {:.3}]", r.wall, r.method.as_str(), r.auc, r.ci_low, r.ci_high);
                }
            }
        }
        Command::Report(_) => {
            let f = report::write_report(&out, &doses)?;
            println!("{}", f.summary.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
