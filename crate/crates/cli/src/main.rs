use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use spw::experiment::{self, MethodEvaluation, RunConfig};

#[derive(Parser)]
#[command(name = "spw", version, about = "Search-based preference weighting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write expert, behaviour and preference data for every seed.
    Generate(Common),
    /// Train the configured method on previously generated data.
    Train(Common),
    /// Evaluate trained checkpoints and write metric tables.
    Evaluate(Common),
    /// Sweep SPW over the temperature grid on shared data.
    AblateTau(Common),
    /// Run every method of `compare.methods` on shared data.
    Compare(Common),
    /// Print the resolved configuration.
    Config(Common),
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    /// Number of training preferences.
    #[arg(long)]
    prefs: Option<usize>,
    /// Seed list `0,1,2` or range `0..5`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any config key, e.g. `--set train.epochs=50`. `--train.epochs 50` is
    /// accepted as shorthand.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut overrides = Vec::new();
        let mut push = |k: &str, v: String| overrides.push((k.to_string(), v));
        if let Some(v) = &self.task {
            push("task", v.clone());
        }
        if let Some(v) = &self.method {
            push("method", v.clone());
        }
        if let Some(v) = &self.tau {
            push("tau", v.clone());
        }
        if let Some(v) = self.prefs {
            push("data.n_preferences", v.to_string());
        }
        if let Some(v) = &self.seeds {
            push("seeds", v.clone());
        }
        if let Some(v) = &self.out {
            push("out", v.display().to_string());
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            overrides.push((k.to_string(), v.to_string()));
        }
        Ok(RunConfig::resolve(self.config.as_deref(), &overrides)?)
    }
}

/// Rewrites `--dotted.key value` and `--dotted.key=value` into `--set`.
fn expand_dotted(args: impl Iterator<Item = String>) -> Vec<String> {
    let mut out = Vec::new();
    let mut args = args.peekable();
    while let Some(a) = args.next() {
        match a.strip_prefix("--").filter(|k| k.contains('.')) {
            Some(k) if k.contains('=') => out.extend(["--set".to_string(), k.to_string()]),
            Some(k) => {
                let v = args.next().unwrap_or_default();
                out.extend(["--set".to_string(), format!("{k}={v}")]);
            }
            None => out.push(a),
        }
    }
    out
}

fn print_summary(ev: &MethodEvaluation) {
    let show = |m: &str| ev.mean(m).map_or("n/a".into(), |x| format!("{x:.3}"));
    println!(
        "{:<12} success {}  kl {}  spearman {}  accuracy {}",
        ev.label,
        show("success_rate"),
        show("kl_gt"),
        show("spearman"),
        show("preference_accuracy")
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = c.resolve()?;
            for p in experiment::generate(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Train(c) => {
            let cfg = c.resolve()?;
            for p in experiment::train(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Evaluate(c) => print_summary(&experiment::evaluate(&c.resolve()?)?),
        Command::AblateTau(c) => {
            for row in experiment::ablate_tau(&c.resolve()?)? {
                print_summary(&row.evaluation);
            }
        }
        Command::Compare(c) => {
            for ev in experiment::compare(&c.resolve()?)? {
                print_summary(&ev);
            }
        }
        Command::Config(c) => print!("{}", c.resolve()?.to_config_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse_from(expand_dotted(std::env::args()));
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_flags_become_overrides() {
        let args = ["spw", "train", "--train.epochs", "5", "--task.size=7", "--tau", "inf"].map(String::from);
        assert_eq!(
            expand_dotted(args.into_iter()),
            ["spw", "train", "--set", "train.epochs=5", "--set", "task.size=7", "--tau", "inf"]
        );
    }
}
