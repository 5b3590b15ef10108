//! SNR sweep over independently generated scenes.
//!
//! Trial `t` always uses the scene seeded from `(master, SCENE, t)`, so every
//! SNR level sees the same scenes; noise and random starts get their own
//! streams keyed by `(snr index, trial)`.

use crate::bounds;
use crate::model;
use crate::scenegen::{self, GeneratedScene, SceneConfig};
use crate::seed;
use crate::solver::{self, SolverConfig};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

const TAG_SCENE: u64 = 1;
const TAG_NOISE_MS: u64 = 2;
const TAG_NOISE_HS: u64 = 3;
const TAG_SOLVER: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    /// dB; `"inf"` for noiseless.
    #[serde(with = "crate::real::vector")]
    pub snr_db: Vec<f64>,
    pub trials: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::invalid("experiment config", "trials must be >= 1"));
        }
        if self.snr_db.is_empty() {
            return Err(Error::invalid("experiment config", "SNR list is empty"));
        }
        if let Some(s) = self
            .snr_db
            .iter()
            .find(|s| s.is_nan() || **s == f64::NEG_INFINITY)
        {
            return Err(Error::invalid("experiment config", format!("bad SNR {s}")));
        }
        self.scene.validate()?;
        self.solver.validate()
    }
}

/// One row of the results table. Failed trials carry `NaN` metrics and the
/// error message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub snr_db: f64,
    pub trial: usize,
    pub mse: f64,
    pub max_pixel_error: f64,
    pub bound_max: f64,
    pub objective: f64,
    pub iters: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrSummary {
    #[serde(with = "crate::real::scalar")]
    pub snr_db: f64,
    #[serde(with = "crate::real::scalar")]
    pub mean_mse: f64,
    pub succeeded: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub trials: usize,
    pub master_seed: u64,
    pub per_snr: Vec<SnrSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub records: Vec<TrialRecord>,
    pub summary: ExperimentSummary,
}

struct PreparedScene {
    generated: GeneratedScene,
    bound_max: f64,
}

fn prepare(config: &ExperimentConfig, trial: usize) -> Result<PreparedScene> {
    let scene_cfg = SceneConfig {
        seed: seed::derive(config.master_seed, TAG_SCENE, trial as u64),
        ..config.scene.clone()
    };
    let (f, g) = scene_cfg.operators()?;
    let generated = scenegen::generate_scene(&scene_cfg, &f, &g)?;
    let bound_max = if scene_cfg.endmembers <= bounds::ENUMERATION_GUARD {
        bounds::certify(
            &generated.scene.endmembers,
            &generated.scene.abundances,
            &f,
            &g,
        )?
        .max_bound()
    } else {
        f64::NAN
    };
    Ok(PreparedScene {
        generated,
        bound_max,
    })
}

fn run_trial(
    config: &ExperimentConfig,
    prepared: &PreparedScene,
    snr_index: usize,
    trial: usize,
) -> Result<TrialRecord> {
    let snr = config.snr_db[snr_index];
    let (f, g) = config.scene.operators()?;
    let scene = &prepared.generated.scene;
    let obs = model::observe(scene, &f, &g)?;
    let key = (snr_index * config.trials + trial) as u64;
    let ym = scenegen::add_noise(
        &obs.ms,
        snr,
        seed::derive(config.master_seed, TAG_NOISE_MS, key),
    )?;
    let yh = scenegen::add_noise(
        &obs.hs,
        snr,
        seed::derive(config.master_seed, TAG_NOISE_HS, key),
    )?;
    let solver_cfg = SolverConfig {
        seed: seed::derive(config.master_seed, TAG_SOLVER, key),
        ..config.solver.clone()
    };
    let sol = solver::solve_cosmf(&ym, &yh, &f, &g, config.scene.endmembers, &solver_cfg)?;
    let x = sol.image();
    let diff = &scene.image - &x;
    let max_pixel_error = diff.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    Ok(TrialRecord {
        snr_db: snr,
        trial,
        mse: scenegen::mse(&scene.image, &x)?,
        max_pixel_error,
        bound_max: prepared.bound_max,
        objective: sol.objective(),
        iters: sol.iterations,
        error: None,
    })
}

fn failed(snr_db: f64, trial: usize, err: &Error) -> TrialRecord {
    log::warn!("trial {trial} at {snr_db} dB failed: {err}");
    TrialRecord {
        snr_db,
        trial,
        mse: f64::NAN,
        max_pixel_error: f64::NAN,
        bound_max: f64::NAN,
        objective: f64::NAN,
        iters: 0,
        error: Some(err.to_string()),
    }
}

/// Runs the sweep; records are ordered by (SNR position, trial). Writes
/// `results.csv` and `summary.json` when `out_dir` is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResults> {
    config.validate()?;
    let scenes: Vec<Result<PreparedScene>> = (0..config.trials)
        .into_par_iter()
        .map(|t| prepare(config, t))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..config.snr_db.len())
        .flat_map(|s| (0..config.trials).map(move |t| (s, t)))
        .collect();
    let records: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(s, t)| {
            let snr = config.snr_db[s];
            let out = scenes[t]
                .as_ref()
                .map_err(|e| Error::Format(format!("scene generation failed: {e}")))
                .and_then(|p| run_trial(config, p, s, t));
            out.unwrap_or_else(|e| failed(snr, t, &e))
        })
        .collect();
    let per_snr = config
        .snr_db
        .iter()
        .enumerate()
        .map(|(s, &snr)| {
            let rows = &records[s * config.trials..(s + 1) * config.trials];
            let ok: Vec<f64> = rows
                .iter()
                .filter(|r| r.error.is_none())
                .map(|r| r.mse)
                .collect();
            SnrSummary {
                snr_db: snr,
                mean_mse: if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().sum::<f64>() / ok.len() as f64
                },
                succeeded: ok.len(),
                failed: rows.len() - ok.len(),
            }
        })
        .collect();
    let results = ExperimentResults {
        records,
        summary: ExperimentSummary {
            trials: config.trials,
            master_seed: config.master_seed,
            per_snr,
        },
    };
    if let Some(dir) = &config.out_dir {
        write_results(dir, &results)?;
    }
    Ok(results)
}

pub fn records_to_csv(records: &[TrialRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(e.to_string())))
        .collect()
}

pub fn write_results(dir: impl AsRef<Path>, results: &ExperimentResults) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("results.csv"), records_to_csv(&results.records)?)?;
    crate::io::write_json(dir.join("summary.json"), &results.summary)
}
