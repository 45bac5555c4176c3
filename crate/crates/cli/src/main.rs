use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use frontlab::scenario::{self, ScenarioConfig};

/// Reaction-diffusion front experiments.
#[derive(Parser)]
#[command(name = "frontlab", version)]
struct Cli {
    /// Output root (overrides FRONTLAB_OUTPUT_ROOT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a JSON scenario config.
    Run { config: PathBuf },
    /// Run one or more preset experiments (E1..E10, P5).
    Preset {
        #[arg(required = true)]
        ids: Vec<String>,
    },
    /// List presets with their theorem tags and last runtimes.
    List,
    /// Write plot-ready CSV and a plotting script (lag, envelope, flattening, profile).
    Plot { dir: PathBuf, kind: String },
    /// Re-check invariants on stored artifacts.
    Verify { dir: PathBuf },
    /// Print the config of a preset as JSON.
    Show { id: String },
}

fn print_verdicts(vs: &[frontlab::analysis::Verdict]) -> bool {
    let mut ok = true;
    for v in vs {
        ok &= v.pass;
        println!(
            "{} {:<28} {:<32} measured {:.6} expected {:.6} ± {:.3e} ({:?})",
            if v.pass { "PASS" } else { "FAIL" },
            v.scenario,
            v.theorem.split(" | ").next().unwrap_or(""),
            v.measured,
            v.expected,
            v.tolerance,
            v.relation
        );
    }
    ok
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    let root = cli.out.clone().unwrap_or_else(scenario::output_root);
    match cli.cmd {
        Cmd::Run { config } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg = ScenarioConfig::from_json(&text)?;
            let dir = cfg.output.clone().unwrap_or_else(|| root.join(&cfg.name));
            let out = scenario::run_scenario(&cfg, &dir)?;
            let ok = print_verdicts(&out.verdicts);
            println!("artifacts: {} ({:.1}s)", out.dir.display(), out.wall_seconds);
            Ok(ok)
        }
        Cmd::Preset { ids } => {
            let mut ok = true;
            for id in ids {
                let rep = scenario::run_preset(&id, &root)?;
                ok &= print_verdicts(&rep.verdicts);
                println!("{}: {:.1}s -> {}", rep.id, rep.wall_seconds, root.join(&rep.id).display());
            }
            Ok(ok)
        }
        Cmd::List => {
            for p in scenario::list_presets(Some(&root)) {
                let opt = if p.optional { " (optional)" } else { "" };
                println!("{:<4} {:>8}  budget {:>4.0} min  {}{}", p.id, p.runtime, p.budget_minutes, p.theorem, opt);
            }
            Ok(true)
        }
        Cmd::Plot { dir, kind } => {
            let path = scenario::emit_plot_data(&dir, &kind)?;
            println!("{}", path.display());
            Ok(true)
        }
        Cmd::Verify { dir } => {
            let rep = scenario::verify(&dir)?;
            for i in &rep.issues {
                println!("ISSUE {i}");
            }
            println!("{} runs, {} checks, {} issues", rep.runs, rep.checks, rep.issues.len());
            Ok(rep.ok())
        }
        Cmd::Show { id } => {
            let plan = scenario::preset_plan(&id)?;
            println!("{}", serde_json::to_string_pretty(&plan.configs)?);
            Ok(true)
        }
    }
}
