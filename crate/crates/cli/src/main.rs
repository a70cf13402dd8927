use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bridgeseg::harness::ablate::{self, Axis};
use bridgeseg::harness::{check, checkpoint, dataset, train};
use bridgeseg::harness::dataset::Dataset;
use bridgeseg::petzoo::{compare_methods, count_params, methods_to_text};
use bridgeseg::{Config, Error, Etris, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bridgeseg", version, about = "Bridged frozen dual encoder for referring segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic referring-segmentation dataset.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 17)]
        max_len: usize,
    },
    /// Train a model and write checkpoints plus a JSON-lines log.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a dataset and write a JSON metric report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Print the trainable-parameter ledger and the method comparison.
    Params {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check analytic gradients of every primitive and of the full loss against finite differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Probe every entry instead of a spread subset per parameter.
        #[arg(long)]
        full: bool,
    },
    /// Sweep one Bridger axis and print a CSV of held-out metrics.
    Ablate {
        #[arg(long)]
        axis: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated seeds; metrics are the median across them.
        #[arg(long, default_value = "42")]
        seeds: String,
        /// Also write the CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|_| Error::input(format!("invalid seed {t:?}"))))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { n, seed, out, size, max_len } => {
            let m = dataset::write(&out, n, seed, size, max_len)?;
            println!("wrote {} samples to {} (grammar {})", m.count, out.display(), m.grammar_sha256);
        }
        Command::Train { data, config, out } => {
            let config = load_config(config.as_deref())?;
            let ds = Dataset::load(&data)?;
            let (train_set, val_set) = ds.split(config.train.val_fraction);
            let mut model = Etris::new(&config.model)?;
            let outcome = train::train(&mut model, &config, &train_set, val_set.as_ref(), Some(&out))?;
            if let Some(last) = outcome.log.last() {
                println!("epochs {} final loss {:.6} final oiou {:.6} best oiou {:.6}", last.epoch, last.loss, last.oiou, outcome.best_oiou);
            }
        }
        Command::Eval { ckpt, data, report } => {
            let (model, _) = checkpoint::load(&ckpt)?;
            let ds = Dataset::load(&data)?;
            let r = train::evaluate(&model, &ds)?;
            let text = serde_json::to_string_pretty(&r).map_err(Error::from)?;
            std::fs::write(&report, format!("{text}\n"))?;
            println!("{text}");
        }
        Command::Params { config } => {
            let config = load_config(config.as_deref())?;
            let model = Etris::new(&config.model)?;
            print!("{}", count_params(&model.store)?.to_text());
            println!();
            print!("{}", methods_to_text(&compare_methods(&config.model)?));
        }
        Command::Gradcheck { config, full } => {
            let config = load_config(config.as_deref())?;
            let prims = check::check_primitives()?;
            let worst = prims.iter().map(|p| p.report.max_rel_err()).fold(0.0, f64::max);
            let mut ok = prims.iter().all(|p| p.report.passed());
            println!("{:<8} {} ops={} max_rel_err={worst:.3e}", "ops", if ok { "PASS" } else { "FAIL" }, prims.len());
            for p in prims.iter().filter(|p| !p.report.passed()) {
                println!("  {} rel_err={:.3e}", p.variant, p.report.max_rel_err());
            }
            for v in check::check_all(&config.model, full)? {
                let r = &v.report;
                let probed: usize = r.params.iter().map(|p| p.checked).sum();
                println!(
                    "{:<8} {} params={} entries={} max_rel_err={:.3e}",
                    v.variant,
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.params.len(),
                    probed,
                    r.max_rel_err()
                );
                for f in r.failures() {
                    println!("  {} rel_err={:.3e} analytic={:.6e} numeric={:.6e}", f.name, f.max_rel_err, f.analytic, f.numeric);
                }
                ok &= r.passed();
            }
            if !ok {
                return Err(Error::numerical("gradient check failed"));
            }
        }
        Command::Ablate { axis, data, config, seeds, out } => {
            let axis: Axis = axis.parse()?;
            let config = load_config(config.as_deref())?;
            let ds = Dataset::load(&data)?;
            let rows = ablate::run(axis, &config, &ds, &parse_seeds(&seeds)?)?;
            let csv = ablate::to_csv(&rows)?;
            if let Some(p) = out {
                std::fs::write(p, &csv)?;
            }
            print!("{csv}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
