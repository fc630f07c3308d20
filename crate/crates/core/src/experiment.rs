//! End-to-end experiment: model, observations, support polyhedron, basis,
//! calibrated target, parallel chains, diagnostics and artifacts.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abm::{AbmSpec, BoundaryConditions, Observation, Trajectory};
use crate::basis::{reduce, ReductionReport};
use crate::density::{calibrate_multinomial, Target, DEFAULT_LOG_RATE_FLOOR, DEFAULT_PRIOR_SAMPLES};
use crate::diagnostics::{diagnose, DiagnosticsReport, OccupancyExpectation, Region, RegionSet};
use crate::error::{Error, Result};
use crate::models::predator_prey::{self, Grid, PredatorPreyParams};
use crate::models::cat_mouse;
use crate::sampler::{run_chain, ChainConfig, ChainStats, FinalStatistics};
use crate::support::{assemble, SupportOptions};
use crate::{Polyhedron, Rational};

/// Generator streams reserved for non-chain randomness.
const OBSERVATION_STREAM: u64 = u64::MAX;
const CALIBRATION_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    /// Two-square cat and mouse, two timesteps, left-cat observation.
    CatMouse,
    PredatorPrey(PredatorPreyParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub chains: usize,
    /// Per-chain settings; `chain` is overwritten with the chain index.
    pub chain: ChainConfig,
    pub fermionic: bool,
    /// Per-variable cap used instead of the Fermionic bound.
    pub count_cap: Option<i64>,
    /// Read observations from this CSV instead of generating them.
    pub obs_file: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Summary-statistic regions; nested corner squares when absent.
    pub regions: Option<Vec<Region>>,
    pub calibration_samples: usize,
    /// Autocorrelation lags reported; powers of two when absent.
    pub lags: Option<Vec<usize>>,
}

impl ExperimentConfig {
    /// 16×16 grid, 8 timesteps, 4 chains of 10⁵ burn-in and 10⁶ samples.
    pub fn desk() -> Self {
        ExperimentConfig {
            model: ModelConfig::PredatorPrey(PredatorPreyParams {
                grid_width: 16,
                grid_height: 16,
                steps: 8,
                ..PredatorPreyParams::default()
            }),
            chains: 4,
            chain: ChainConfig { burn_in: 100_000, samples: 1_000_000, ..ChainConfig::default() },
            fermionic: true,
            count_cap: None,
            obs_file: None,
            out_dir: PathBuf::from("out"),
            regions: None,
            calibration_samples: DEFAULT_PRIOR_SAMPLES,
            lags: None,
        }
    }

    /// 32×32 grid, 16 timesteps, 4 chains of 10⁶ burn-in and 10⁷ samples.
    pub fn full() -> Self {
        ExperimentConfig {
            model: ModelConfig::PredatorPrey(PredatorPreyParams::default()),
            chain: ChainConfig { burn_in: 1_000_000, samples: 10_000_000, ..ChainConfig::default() },
            ..Self::desk()
        }
    }

    /// Small cat and mouse run for smoke tests.
    pub fn cat_mouse() -> Self {
        ExperimentConfig {
            model: ModelConfig::CatMouse,
            chain: ChainConfig { tau: 1.0, burn_in: 1000, samples: 20_000, ..ChainConfig::default() },
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::Config("at least one chain is required".into()));
        }
        if !self.fermionic && self.count_cap.is_none() {
            return Err(Error::Config("either the Fermionic bound or a count cap is required".into()));
        }
        if let ModelConfig::PredatorPrey(p) = &self.model {
            p.validate()?;
        }
        self.chain.validate()
    }
}

/// Model plus everything needed to label its states.
struct Model {
    spec: AbmSpec,
    bc: BoundaryConditions,
    steps: usize,
    grid: Option<Grid>,
}

impl Model {
    fn build(config: &ModelConfig) -> Result<Self> {
        Ok(match config {
            ModelConfig::CatMouse => Model { spec: cat_mouse::spec(), bc: cat_mouse::boundary(), steps: 2, grid: None },
            ModelConfig::PredatorPrey(p) => {
                let (spec, bc, grid) = predator_prey::build(p)?;
                Model { spec, bc, steps: p.steps, grid: Some(grid) }
            }
        })
    }

    fn statistics(&self, regions: Option<&[Region]>) -> Result<FinalStatistics> {
        match self.grid {
            Some(g) => {
                let set = match regions {
                    Some(r) => RegionSet::new(g.width, g.height, r.to_vec())?,
                    None => RegionSet::nested_corner(g.width, g.height, 4),
                };
                Ok(set.statistics(|x, y| g.states_in_cell(x, y)))
            }
            None => Ok(FinalStatistics {
                names: ["left_cat", "right_cat", "left_mouse", "right_mouse"].map(String::from).to_vec(),
                weights: (0..4).map(|s| vec![(s, 1.0)]).collect(),
            }),
        }
    }
}

/// Everything an experiment produced, also written to the output directory.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub observations: usize,
    pub reduction: ReductionReport,
    pub chains: Vec<ChainStats>,
    pub diagnostics: DiagnosticsReport,
    pub occupancy: OccupancyExpectation,
    /// Summary-statistic traces per chain, `traces[c][s]`.
    #[serde(skip)]
    pub traces: Vec<Vec<Vec<f64>>>,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(create(dir, name)?, value)?;
    Ok(())
}

/// Observations as `t,state,count` for models without a grid.
fn write_state_observations(dir: &Path, observations: &[Observation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, "observations.csv")?);
    w.write_record(["t", "states", "count"])?;
    for o in observations {
        let states: Vec<String> = o.states.iter().map(usize::to_string).collect();
        w.write_record([o.time.to_string(), states.join(" "), o.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn observations(config: &ExperimentConfig, model: &Model, dir: &Path) -> Result<Vec<Observation>> {
    let grid = model.grid;
    let obs = match (&config.obs_file, &config.model, grid) {
        (Some(path), _, Some(g)) => predator_prey::read_observations(&g, File::open(path)?)?,
        (Some(_), _, None) => return Err(Error::Config("observation files are only read for grid models".into())),
        (None, ModelConfig::PredatorPrey(p), Some(_)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.chain.seed);
            rng.set_stream(OBSERVATION_STREAM);
            let (real, obs) = predator_prey::generate_observations(
                &model.spec,
                &model.bc,
                model.steps,
                p.obs_prob,
                &mut rng,
                config.fermionic,
                predator_prey::DEFAULT_RETRY_CAP,
            )?;
            real.write_csv(create(dir, "t_real.csv")?)?;
            obs
        }
        _ => cat_mouse::left_cat_observation(),
    };
    match grid {
        Some(g) => predator_prey::write_observations(&g, &obs, create(dir, "observations.csv")?)?,
        None => write_state_observations(dir, &obs)?,
    }
    Ok(obs)
}

/// Runs the full pipeline and writes every artifact into `config.out_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate().map_err(|e| e.at("config"))?;
    let dir = config.out_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| Error::from(e).at("output"))?;
    write_json(dir, "config.json", config).map_err(|e| e.at("output"))?;

    let model = Model::build(&config.model).map_err(|e| e.at("model"))?;
    let stats = model.statistics(config.regions.as_deref()).map_err(|e| e.at("model"))?;
    let obs = observations(config, &model, dir).map_err(|e| e.at("observations"))?;

    let options = SupportOptions { fermionic: config.fermionic, count_cap: config.count_cap };
    let poly: Polyhedron =
        assemble(&model.spec, &model.bc, &obs, model.steps, options).map_err(|e| e.at("support"))?;
    let red = reduce::<Rational>(&poly).map_err(|e| e.at("basis"))?;
    let reduction = red.report();
    write_json(dir, "reduction.json", &reduction).map_err(|e| e.at("output"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.chain.seed);
    rng.set_stream(CALIBRATION_STREAM);
    let rates = calibrate_multinomial(
        &model.spec,
        &model.bc,
        model.steps,
        config.calibration_samples,
        DEFAULT_LOG_RATE_FLOOR,
        &mut rng,
    )
    .map_err(|e| e.at("calibration"))?;
    rates.write_csv(create(dir, "log_rates.csv")?).map_err(|e| e.at("output"))?;
    let target = Target::new(&model.spec, &model.bc, &obs, &poly, &red, &rates, config.chain.tau)
        .map_err(|e| e.at("target"))?;

    let outputs = thread::scope(|s| {
        let handles: Vec<_> = (0..config.chains)
            .map(|c| {
                let chain_config = ChainConfig { chain: c as u64, ..config.chain.clone() };
                let (target, stats) = (&target, &stats);
                s.spawn(move || run_chain(target, &chain_config, stats, &mut |_| {}))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect::<Result<Vec<_>>>()
    })
    .map_err(|e| e.at("sampling"))?;

    let traces: Vec<Vec<Vec<f64>>> = outputs.iter().map(|o| o.traces.clone()).collect();
    let diagnostics = diagnose(&stats.names, &traces, config.lags.as_deref());
    let parts: Vec<OccupancyExpectation> = outputs
        .iter()
        .map(|o| OccupancyExpectation { mean: o.occupancy_mean.clone(), samples: o.stats.recorded_samples })
        .collect();
    let occupancy = OccupancyExpectation::combine(&parts).map_err(|e| e.at("diagnostics"))?;

    let write = || -> Result<()> {
        let mut w = csv::Writer::from_writer(create(dir, "traces.csv")?);
        let mut header = vec!["chain".to_string(), "step".to_string()];
        header.extend(stats.names.iter().cloned());
        w.write_record(&header)?;
        for (c, o) in outputs.iter().enumerate() {
            for (k, step) in o.steps.iter().enumerate() {
                let mut row = vec![c.to_string(), step.to_string()];
                row.extend(o.traces.iter().map(|t| t[k].to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        for o in &outputs {
            write_json(dir, &format!("stats_chain{}.json", o.stats.chain), &o.stats)?;
        }
        diagnostics.write_json(create(dir, "diagnostics.json")?)?;
        diagnostics.write_autocorrelation_csv(create(dir, "autocorrelation.csv")?)?;
        match model.grid {
            Some(g) => occupancy.write_csv(create(dir, "occupancy.csv")?, &["x", "y", "species"], |s| {
                let (sp, x, y) = g.locate(s);
                vec![x.to_string(), y.to_string(), Grid::species_name(sp).to_string()]
            })?,
            None => occupancy.write_csv(create(dir, "occupancy.csv")?, &["state"], |s| vec![s.to_string()])?,
        }
        Ok(())
    };
    write().map_err(|e| e.at("output"))?;

    let report = ExperimentReport {
        observations: obs.len(),
        reduction,
        chains: outputs.into_iter().map(|o| o.stats).collect(),
        diagnostics,
        occupancy,
        traces,
    };
    write_json(dir, "report.json", &report).map_err(|e| e.at("output"))?;
    Ok(report)
}

/// Reads a trajectory CSV written by an experiment.
pub fn read_trajectory(path: &Path, spec: &AbmSpec, steps: usize) -> Result<Trajectory> {
    Trajectory::read_csv(File::open(path)?, steps, spec.num_states(), spec.num_actions())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke(dir: &Path) -> ExperimentConfig {
        ExperimentConfig { out_dir: dir.to_path_buf(), chains: 2, calibration_samples: 500, ..ExperimentConfig::cat_mouse() }
    }

    #[test]
    fn cat_mouse_smoke_writes_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let report = run_experiment(&smoke(tmp.path())).unwrap();
        for name in [
            "config.json",
            "observations.csv",
            "reduction.json",
            "log_rates.csv",
            "traces.csv",
            "stats_chain0.json",
            "stats_chain1.json",
            "diagnostics.json",
            "autocorrelation.csv",
            "occupancy.csv",
            "report.json",
        ] {
            assert!(tmp.path().join(name).exists(), "{name} missing");
        }
        assert_eq!(report.diagnostics.statistics.len(), 4);
        // the left cat statistic varies, so its diagnostics are defined
        assert!(report.diagnostics.statistics[0].r_hat.is_some());
        assert_eq!(report.chains.len(), 2);
    }

    #[test]
    fn seeded_runs_repeat() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run_experiment(&smoke(a.path())).unwrap();
        let rb = run_experiment(&smoke(b.path())).unwrap();
        assert_eq!(ra.traces, rb.traces);
        assert_eq!(ra.diagnostics, rb.diagnostics);
        let read = |p: &Path| fs::read(p.join("traces.csv")).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
    }

    #[test]
    fn predator_prey_pipeline_runs() {
        let tmp = tempfile::tempdir().unwrap();
        let config = ExperimentConfig {
            model: ModelConfig::PredatorPrey(PredatorPreyParams { grid_width: 6, grid_height: 6, steps: 3, ..Default::default() }),
            chains: 2,
            chain: ChainConfig { burn_in: 1000, samples: 4000, seed: 5, ..ChainConfig::default() },
            out_dir: tmp.path().to_path_buf(),
            calibration_samples: 500,
            ..ExperimentConfig::desk()
        };
        let report = run_experiment(&config).unwrap();
        assert!(tmp.path().join("t_real.csv").exists());
        let header = fs::read_to_string(tmp.path().join("observations.csv")).unwrap();
        assert!(header.starts_with("t,x,y,species,count"));
        assert_eq!(report.occupancy.mean.len(), 72);
        let names: Vec<&str> = report.diagnostics.statistics.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["stat1", "stat2", "stat3", "stat4"]);
        // observations read back reproduce the generated ones
        let again = ExperimentConfig { obs_file: Some(tmp.path().join("observations.csv")), out_dir: tmp.path().join("again"), ..config };
        assert_eq!(run_experiment(&again).unwrap().observations, report.observations);
    }

    #[test]
    fn invalid_configs_are_stage_tagged() {
        let tmp = tempfile::tempdir().unwrap();
        let config = ExperimentConfig { chains: 0, ..smoke(tmp.path()) };
        let err = run_experiment(&config).unwrap_err();
        assert!(err.to_string().starts_with("config:"), "{err}");
    }
}
