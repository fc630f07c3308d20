//! Command-line driver for posterior sampling experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use abm_mcmc::experiment::{run_experiment, ExperimentConfig, ModelConfig};
use anyhow::Context;
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Catmouse,
    Predprey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// 16x16 grid, 8 steps, 4 chains, 1e5 burn-in, 1e6 samples.
    Desk,
    /// 32x32 grid, 16 steps, 4 chains, 1e6 burn-in, 1e7 samples.
    Full,
}

/// Sample agent-based model trajectories conditioned on observations.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Args {
    #[arg(long, value_enum, default_value = "predprey")]
    model: ModelKind,
    /// Starting configuration; individual flags override it.
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Grid width and height.
    #[arg(long, num_args = 2, value_names = ["W", "H"])]
    grid: Option<Vec<usize>>,
    /// Number of timesteps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    /// Post-burn-in steps per chain.
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long)]
    burnin: Option<u64>,
    /// Boltzmann temperature of the constraint factors.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per (timestep, cell, species) observation probability.
    #[arg(long)]
    obs_prob: Option<f64>,
    /// Observation CSV (`t,x,y,species,count`) used instead of generating one.
    #[arg(long)]
    obs_file: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Bound every trajectory count by one (default unless --count-cap is set).
    #[arg(long)]
    fermionic: bool,
    /// Per-variable count bound used instead of the Fermionic bound.
    #[arg(long)]
    count_cap: Option<i64>,
}

fn config(args: &Args) -> anyhow::Result<ExperimentConfig> {
    let mut c = match (args.model, args.preset) {
        (ModelKind::Catmouse, _) => ExperimentConfig::cat_mouse(),
        (ModelKind::Predprey, Preset::Desk) => ExperimentConfig::desk(),
        (ModelKind::Predprey, Preset::Full) => ExperimentConfig::full(),
    };
    if let ModelConfig::PredatorPrey(p) = &mut c.model {
        if let Some(g) = &args.grid {
            p.grid_width = g[0];
            p.grid_height = g[1];
        }
        if let Some(n) = args.steps {
            p.steps = n;
        }
        if let Some(q) = args.obs_prob {
            p.obs_prob = q;
        }
    } else if args.grid.is_some() || args.steps.is_some() || args.obs_prob.is_some() {
        anyhow::bail!("--grid, --steps and --obs-prob apply to the predator-prey model only");
    }
    if let Some(v) = args.chains {
        c.chains = v;
    }
    if let Some(v) = args.samples {
        c.chain.samples = v;
    }
    if let Some(v) = args.burnin {
        c.chain.burn_in = v;
    }
    if let Some(v) = args.tau {
        c.chain.tau = v;
    }
    if let Some(v) = args.seed {
        c.chain.seed = v;
    }
    c.obs_file = args.obs_file.clone();
    c.out_dir = args.out.clone();
    c.count_cap = args.count_cap;
    c.fermionic = args.fermionic || args.count_cap.is_none();
    Ok(c)
}

fn run(args: &Args) -> anyhow::Result<()> {
    let config = config(args)?;
    let report = run_experiment(&config).context("experiment failed")?;
    println!(
        "observations {}  basis {} basic / {} non-basic  lift density {:.3e}",
        report.observations, report.reduction.basic, report.reduction.nonbasic, report.reduction.lift_density
    );
    for s in &report.chains {
        println!(
            "chain {}: acceptance {:.3}  infeasible {:.3}  {:.1} feasible samples/s",
            s.chain, s.acceptance_rate, s.infeasible_fraction, s.feasible_samples_per_second
        );
    }
    let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.5}"));
    for s in &report.diagnostics.statistics {
        println!(
            "{}: R-hat {}  effective samples {} ({} per sequence)",
            s.name,
            fmt(s.r_hat),
            fmt(s.effective_samples),
            fmt(s.effective_samples_per_sequence)
        );
    }
    println!("artifacts written to {}", config.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
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

    fn parse(argv: &[&str]) -> ExperimentConfig {
        config(&Args::parse_from(std::iter::once("abm-mcmc").chain(argv.iter().copied()))).unwrap()
    }

    #[test]
    fn flags_override_preset() {
        let c = parse(&["--grid", "8", "6", "--steps", "3", "--tau", "0.2", "--chains", "2", "--seed", "9"]);
        let ModelConfig::PredatorPrey(p) = &c.model else { panic!("wrong model") };
        assert_eq!((p.grid_width, p.grid_height, p.steps), (8, 6, 3));
        assert_eq!((c.chain.tau, c.chains, c.chain.seed), (0.2, 2, 9));
        assert!(c.fermionic);
    }

    #[test]
    fn full_preset_and_count_cap() {
        let c = parse(&["--preset", "full", "--count-cap", "3"]);
        assert_eq!(c.chain.samples, 10_000_000);
        assert!(!c.fermionic);
        assert_eq!(c.count_cap, Some(3));
    }

    #[test]
    fn grid_flags_rejected_for_cat_mouse() {
        let args = Args::parse_from(["abm-mcmc", "--model", "catmouse", "--grid", "2", "2"]);
        assert!(config(&args).is_err());
    }
}
