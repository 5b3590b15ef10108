//! `hsr`: command-line front end for scene generation, solving and the
//! recovery-bound checks.
//!
//! Exit status: 0 on success, 1 when inputs fail validation or a computation
//! errors, 2 on usage errors.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hsr_core::bounds;
use hsr_core::counterexample;
use hsr_core::experiment::{self, ExperimentConfig};
use hsr_core::io;
use hsr_core::model::{
    self, AbundanceMatrix, EndmemberMatrix, Scene, SpatialResponse, SpectralResponse,
};
use hsr_core::scenegen::{self, SceneConfig};
use hsr_core::solver::{self, InitMode, SolverConfig};
use hsr_core::DMatrix;
use serde_json::json;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "hsr",
    version,
    about = "Hyperspectral super-resolution by coupled structured matrix factorization"
)]
struct Cli {
    /// JSON config (scene config for `generate`, solver config for `solve`,
    /// experiment config for `experiment`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed overriding the one in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with its operators.
    Generate,
    /// Compute (optionally noisy) MS and HS observations of a scene.
    Observe {
        #[command(flatten)]
        scene: SceneFiles,
        /// Target SNR in dB; `inf` for noiseless.
        #[arg(long, default_value = "inf")]
        snr: f64,
    },
    /// Fit endmembers and abundances to a pair of observations.
    Solve {
        #[command(flatten)]
        obs: ObservationFiles,
        /// Number of endmembers.
        #[arg(long)]
        n: usize,
        /// Starting endmembers (with --s0; implies init = provided).
        #[arg(long, requires = "s0")]
        a0: Option<PathBuf>,
        /// Starting abundances.
        #[arg(long, requires = "a0")]
        s0: Option<PathBuf>,
    },
    /// Compute the recovery certificate of a ground-truth scene.
    Certify {
        #[command(flatten)]
        scene: SceneFiles,
    },
    /// Relate a fit to the ground truth and check the abundance inequalities.
    Align {
        #[command(flatten)]
        scene: SceneFiles,
        /// Fitted endmembers.
        #[arg(long)]
        a: PathBuf,
        /// Fitted abundances.
        #[arg(long)]
        s: PathBuf,
    },
    /// Evaluate the three-pixel instance whose error meets the bound scale.
    Counterexample {
        #[arg(long, default_value_t = 0.1)]
        rho: f64,
        #[arg(long, default_value_t = 0.0)]
        alpha1: f64,
    },
    /// Compare the analytic dominance probability with Monte Carlo.
    Lemma1 {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
    /// Run an SNR sweep and write results.csv and summary.json.
    Experiment,
}

/// Ground-truth scene files; `--scene DIR` supplies defaults for any not given.
#[derive(Args)]
struct SceneFiles {
    /// Directory holding A_bar.csv, S_bar.csv, F.csv and G.json.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    a_bar: Option<PathBuf>,
    #[arg(long)]
    s_bar: Option<PathBuf>,
    #[arg(long)]
    f: Option<PathBuf>,
    #[arg(long)]
    g: Option<PathBuf>,
}

/// Observation files; `--scene DIR` supplies defaults for any not given.
#[derive(Args)]
struct ObservationFiles {
    /// Directory holding Y_M.csv, Y_H.csv, F.csv and G.json.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    ym: Option<PathBuf>,
    #[arg(long)]
    yh: Option<PathBuf>,
    #[arg(long)]
    f: Option<PathBuf>,
    #[arg(long)]
    g: Option<PathBuf>,
}

/// Marks errors that should exit with the usage status.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn resolve(
    explicit: &Option<PathBuf>,
    dir: &Option<PathBuf>,
    name: &str,
    flag: &str,
) -> Result<PathBuf> {
    match (explicit, dir) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(d)) => Ok(d.join(name)),
        (None, None) => Err(Usage(format!("missing --{flag} (or --scene DIR)")).into()),
    }
}

fn read(path: &Path) -> Result<DMatrix<f64>> {
    io::read_matrix(path).with_context(|| format!("reading {}", path.display()))
}

fn read_g(path: &Path) -> Result<SpatialResponse> {
    io::read_spatial_response(path).with_context(|| format!("reading {}", path.display()))
}

struct RawScene {
    a: DMatrix<f64>,
    s: DMatrix<f64>,
    f: DMatrix<f64>,
    g: SpatialResponse,
}

impl SceneFiles {
    fn load(&self) -> Result<RawScene> {
        let d = &self.scene;
        Ok(RawScene {
            a: read(&resolve(&self.a_bar, d, "A_bar.csv", "a-bar")?)?,
            s: read(&resolve(&self.s_bar, d, "S_bar.csv", "s-bar")?)?,
            f: read(&resolve(&self.f, d, "F.csv", "f")?)?,
            g: read_g(&resolve(&self.g, d, "G.json", "g")?)?,
        })
    }
}

impl RawScene {
    /// Validates every model invariant, listing all violations on failure.
    fn validated(self) -> Result<(Scene, SpectralResponse, SpatialResponse)> {
        let report = model::validate_model(&self.a, &self.s, &self.f, &self.g);
        if !report.is_valid() {
            let lines: Vec<String> = report.violations.iter().map(|v| format!("  {v}")).collect();
            bail!("model validation failed:\n{}", lines.join("\n"));
        }
        let scene = Scene::new(EndmemberMatrix::new(self.a)?, AbundanceMatrix::new(self.s)?)?;
        Ok((scene, SpectralResponse::new(self.f)?, self.g))
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // a closed pipe (e.g. `| head`) is not an error
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn out_dir(out: &Option<PathBuf>) -> Result<Option<&Path>> {
    match out {
        Some(d) => {
            fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
            Ok(Some(d.as_path()))
        }
        None => Ok(None),
    }
}

fn require_out(out: &Option<PathBuf>) -> Result<&Path> {
    out_dir(out)?.ok_or_else(|| Usage("this subcommand needs --out DIR".into()).into())
}

fn write_instance(
    dir: &Path,
    a: &DMatrix<f64>,
    s: &DMatrix<f64>,
    f: &DMatrix<f64>,
    g: &SpatialResponse,
) -> Result<()> {
    io::write_matrix(dir.join("A_bar.csv"), a)?;
    io::write_matrix(dir.join("S_bar.csv"), s)?;
    io::write_matrix(dir.join("F.csv"), f)?;
    io::write_spatial_response(dir.join("G.json"), g)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate => {
            let dir = require_out(&cli.out)?;
            let mut cfg: SceneConfig = match &cli.config {
                Some(p) => io::read_json(p).with_context(|| format!("reading {}", p.display()))?,
                None => SceneConfig::desk(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let (f, g) = cfg.operators()?;
            let gen = scenegen::generate_scene(&cfg, &f, &g)?;
            let scene = &gen.scene;
            write_instance(
                dir,
                scene.endmembers.matrix(),
                scene.abundances.matrix(),
                f.matrix(),
                &g,
            )?;
            io::write_matrix(dir.join("X.csv"), &scene.image)?;
            io::write_json(dir.join("scene_config.json"), &cfg)?;
            io::write_json(dir.join("scene.json"), &gen.sidecar)?;
            print_json(&gen.sidecar)?;
        }
        Command::Observe { scene, snr } => {
            let dir = require_out(&cli.out)?;
            let (sc, f, g) = scene.load()?.validated()?;
            let obs = model::observe(&sc, &f, &g)?;
            let seed = cli.seed.unwrap_or(0);
            let ym = scenegen::add_noise(&obs.ms, snr, seed)?;
            let yh = scenegen::add_noise(&obs.hs, snr, seed.wrapping_add(1))?;
            io::write_matrix(dir.join("Y_M.csv"), &ym)?;
            io::write_matrix(dir.join("Y_H.csv"), &yh)?;
            print_json(&json!({
                "ms_shape": [ym.nrows(), ym.ncols()],
                "hs_shape": [yh.nrows(), yh.ncols()],
                "snr_db": hsr_core::real::encode(snr).map_or(json!(snr), |t| json!(t)),
            }))?;
        }
        Command::Solve { obs, n, a0, s0 } => {
            let d = &obs.scene;
            let ym = read(&resolve(&obs.ym, d, "Y_M.csv", "ym")?)?;
            let yh = read(&resolve(&obs.yh, d, "Y_H.csv", "yh")?)?;
            let f = SpectralResponse::new(read(&resolve(&obs.f, d, "F.csv", "f")?)?)?;
            let g = read_g(&resolve(&obs.g, d, "G.json", "g")?)?;
            let mut cfg: SolverConfig = match &cli.config {
                Some(p) => io::read_json(p).with_context(|| format!("reading {}", p.display()))?,
                None => SolverConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let sol = match (a0, s0) {
                (Some(a0), Some(s0)) => {
                    cfg.init = InitMode::Provided;
                    let a0 = EndmemberMatrix::new(read(&a0)?)?;
                    let s0 = AbundanceMatrix::new(read(&s0)?)?;
                    solver::solve_cosmf_from(&ym, &yh, &f, &g, a0, s0, &cfg)?
                }
                _ => solver::solve_cosmf(&ym, &yh, &f, &g, n, &cfg)?,
            };
            let meta = json!({
                "iterations": sol.iterations,
                "termination": sol.termination,
                "objective": sol.objective(),
                "trace": sol.trace,
                "config": cfg,
            });
            if let Some(dir) = out_dir(&cli.out)? {
                io::write_matrix(dir.join("A.csv"), sol.a.matrix())?;
                io::write_matrix(dir.join("S.csv"), sol.s.matrix())?;
                io::write_json(dir.join("solution.json"), &meta)?;
            }
            print_json(&json!({
                "iterations": sol.iterations,
                "termination": sol.termination,
                "objective": sol.objective(),
            }))?;
        }
        Command::Certify { scene } => {
            let (sc, f, g) = scene.load()?.validated()?;
            let cert = bounds::certify(&sc.endmembers, &sc.abundances, &f, &g)?;
            if let Some(dir) = out_dir(&cli.out)? {
                io::write_json(dir.join("certificate.json"), &cert)?;
            }
            print_json(&cert)?;
        }
        Command::Align { scene, a, s } => {
            let (sc, f, g) = scene.load()?.validated()?;
            let a = EndmemberMatrix::new(read(&a)?)?;
            let s = AbundanceMatrix::new(read(&s)?)?;
            let cert = bounds::certify(&sc.endmembers, &sc.abundances, &f, &g)?;
            let sp_bar = model::decimate_abundances(&sc.abundances, &g)?;
            let sp = model::decimate_abundances(&s, &g)?;
            let alignment = bounds::extract_alignment(
                &sc.endmembers,
                &a,
                sp_bar.matrix(),
                sp.matrix(),
                cert.k,
            )?;
            let prop1 = bounds::verify_proposition1(&sc, &a, &s, &alignment, &cert)?;
            let report = json!({ "alignment": alignment, "proposition1": prop1 });
            if let Some(dir) = out_dir(&cli.out)? {
                io::write_json(dir.join("alignment.json"), &report)?;
            }
            print_json(&report)?;
        }
        Command::Counterexample { rho, alpha1 } => {
            let inst = counterexample::build_counterexample(rho)?;
            let report = counterexample::verify_counterexample(&inst, alpha1)?;
            if let Some(dir) = out_dir(&cli.out)? {
                write_instance(
                    dir,
                    inst.a_bar.matrix(),
                    inst.s_bar.matrix(),
                    inst.f.matrix(),
                    &inst.g,
                )?;
                io::write_matrix(dir.join("Y_M.csv"), &inst.y_ms())?;
                io::write_matrix(dir.join("Y_H.csv"), &inst.y_hs())?;
                io::write_json(dir.join("counterexample.json"), &report)?;
            }
            print_json(&report)?;
        }
        Command::Lemma1 { n, m, trials } => {
            let report = bounds::lemma1_monte_carlo(n, m, trials, cli.seed.unwrap_or(0))?;
            if let Some(dir) = out_dir(&cli.out)? {
                io::write_json(dir.join("lemma1.json"), &report)?;
            }
            print_json(&report)?;
        }
        Command::Experiment => {
            let path = cli
                .config
                .as_ref()
                .ok_or_else(|| Usage("experiment needs --config FILE".into()))?;
            let mut cfg: ExperimentConfig =
                io::read_json(path).with_context(|| format!("reading {}", path.display()))?;
            if let Some(s) = cli.seed {
                cfg.master_seed = s;
            }
            if let Some(o) = &cli.out {
                cfg.out_dir = Some(o.clone());
            }
            let results = experiment::run_experiment(&cfg)?;
            print_json(&results.summary)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
