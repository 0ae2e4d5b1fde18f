use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dalkit::data::{load_tabular, LabeledSet, Tabular};
use dalkit::harness::{
    self, accuracy, export_alpha_trace, export_histograms, grid_search_lambda, load_domains, load_model, read_report,
    run_experiment_with, write_run_outputs, ChannelSampling, ExperimentConfig, Variant,
};
use dalkit::Error;

#[derive(Parser)]
#[command(name = "dalkit", version, about = "Train and evaluate DA-layer networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML experiment config.
    config: PathBuf,
    /// Override a config key, e.g. `--set loss.lambda=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
}

impl ConfigArgs {
    fn load(&self) -> dalkit::Result<ExperimentConfig> {
        let mut sets = self.set.clone();
        if let Some(v) = self.variant {
            sets.push(format!("variant=\"{}\"", variant_key(v)));
        }
        if let Some(s) = &self.seeds {
            let list: Vec<String> = s.iter().map(u64::to_string).collect();
            sets.push(format!("seeds=[{}]", list.join(",")));
        }
        if let Some(e) = self.epochs {
            sets.push(format!("epochs={e}"));
        }
        if let Some(l) = self.lambda {
            sets.push(format!("loss.lambda={l:?}"));
        }
        ExperimentConfig::load(&self.config, &sets)
    }
}

fn variant_key(v: Variant) -> &'static str {
    match v {
        Variant::Source => "source",
        Variant::Entropy => "entropy",
        Variant::AutodialFixed => "autodial_fixed",
        Variant::Autodial => "autodial",
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Clone, Copy, ValueEnum)]
enum Domain {
    Source,
    Target,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write metrics, traces and models.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory; defaults to `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick lambda by held-out source accuracy.
    Gridsearch {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        #[arg(long, default_value_t = harness::DEFAULT_HOLDOUT)]
        holdout: f64,
        /// Also write the table as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the alpha trace of one seed from a saved report.
    ExportAlpha {
        /// `report.json` written by `run`.
        report: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Histograms of features after a DA-layer, over whole source and target sets.
    ExportHist {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// DA-layer index, 0-based.
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = 30)]
        bins: usize,
        /// Number of randomly sampled channels.
        #[arg(long, default_value_t = 4)]
        channels: usize,
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy of a saved model on a labeled CSV file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// CSV with features and a trailing integer label column.
        #[arg(long)]
        data: PathBuf,
        /// Which DA path the rows take.
        #[arg(long, value_enum, default_value_t = Domain::Target)]
        domain: Domain,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Spec(_) => 1,
        Error::Data(_)
        | Error::Parse { .. }
        | Error::Format(_)
        | Error::Io { .. }
        | Error::Layout(_)
        | Error::Dimension(_) => 2,
        _ => 3,
    }
}

fn labeled(path: &Path) -> dalkit::Result<LabeledSet> {
    match load_tabular(path, true)? {
        Tabular::Labeled(s) => Ok(s),
        Tabular::Unlabeled(_) => unreachable!("labeled parse"),
    }
}

fn run(cmd: Command) -> dalkit::Result<()> {
    match cmd {
        Command::Run { cfg, out } => {
            let cfg = cfg.load()?;
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(variant_key(cfg.variant)));
            let (report, models) = run_experiment_with(&cfg, &harness::no_hook)?;
            write_run_outputs(&dir, &cfg, &report, &models)?;
            for r in &report.runs {
                println!(
                    "seed {}: target {:.4} source {:.4}",
                    r.seed, r.target_accuracy, r.source_accuracy
                );
            }
            println!(
                "{}: target accuracy {:.4} ± {:.4} over {} seeds",
                report.variant,
                report.target_accuracy.mean,
                report.target_accuracy.std,
                report.runs.len()
            );
            println!("outputs in {}", dir.display());
        }
        Command::Gridsearch {
            cfg,
            lambdas,
            holdout,
            out,
        } => {
            let cfg = cfg.load()?;
            let result = grid_search_lambda(&cfg, &lambdas, holdout)?;
            let mut csv = String::from("lambda,score\n");
            for s in &result.table {
                csv.push_str(&format!("{},{}\n", s.lambda, s.score));
            }
            print!("{csv}");
            println!("chosen lambda {}", result.chosen);
            if let Some(p) = out {
                std::fs::write(&p, csv).map_err(|e| Error::Io { path: p, source: e })?;
            }
        }
        Command::ExportAlpha { report, seed, out } => {
            let report = read_report(&report)?;
            let seed = match seed {
                Some(s) => s,
                None => report
                    .runs
                    .first()
                    .map(|r| r.seed)
                    .ok_or_else(|| Error::Data("report has no runs".into()))?,
            };
            export_alpha_trace(&report, seed, &out)?;
            println!("alpha trace for seed {seed} written to {}", out.display());
        }
        Command::ExportHist {
            model,
            cfg,
            layer,
            bins,
            channels,
            sample_seed,
            out,
        } => {
            let net = load_model(&model)?;
            let (source, target) = load_domains(&cfg.load()?)?;
            let sampling = ChannelSampling {
                count: channels,
                seed: sample_seed,
            };
            let hists = export_histograms(&net, &source.features, &target.features, layer, bins, sampling, &out)?;
            println!(
                "{} channel histograms (sampling seed {sample_seed}) written to {}",
                hists.len(),
                out.display()
            );
        }
        Command::Eval { model, data, domain } => {
            let net = load_model(&model)?;
            if !net.is_frozen() {
                return Err(Error::State("model is not frozen; evaluate a model written by `run`".into()));
            }
            let set = labeled(&data)?;
            let acc = accuracy(&net, &set, matches!(domain, Domain::Source))?;
            println!("accuracy {acc:.6} on {} samples", set.len());
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
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
