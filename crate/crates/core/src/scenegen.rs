//! Synthetic scenes that satisfy the recovery assumptions by construction,
//! plus the blur/downsample and band-averaging operators, noise, and MSE.

use crate::bounds::{self, ENUMERATION_GUARD, RANK_TOL};
use crate::linalg::{self, Combinations};
use crate::model::{
    AbundanceMatrix, EndmemberMatrix, Scene, SpatialResponse, SpectralResponse, Window,
};
use crate::seed;
use crate::{Error, Result};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Uniform,
    Gaussian,
}

/// How the endmember matrix is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndmemberSampling {
    /// i.i.d. uniform entries, rejected until the dominance condition holds.
    Uniform,
    /// Uniform entries with one planted dominance row per endmember.
    Planted,
    /// `Uniform` when the analytic dominance probability is at least
    /// [`AUTO_UNIFORM_THRESHOLD`], `Planted` otherwise.
    Auto,
}

pub const AUTO_UNIFORM_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    #[serde(rename = "M")]
    pub bands: usize,
    #[serde(rename = "M_m")]
    pub ms_bands: usize,
    #[serde(rename = "N")]
    pub endmembers: usize,
    pub width: usize,
    pub height: usize,
    pub factor: usize,
    pub k_max: usize,
    pub kernel: KernelKind,
    pub kernel_size: usize,
    #[serde(default = "default_variance")]
    pub kernel_variance: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sampling")]
    pub sampling: EndmemberSampling,
    #[serde(default = "default_max_draws")]
    pub max_draws: usize,
}

fn default_variance() -> f64 {
    1.0
}

fn default_sampling() -> EndmemberSampling {
    EndmemberSampling::Auto
}

fn default_max_draws() -> usize {
    100_000
}

impl SceneConfig {
    /// 16x16 image, factor 2, 3x3 Gaussian (variance 1), M = 50, M_m = 6, N = 6.
    pub fn desk() -> Self {
        SceneConfig {
            bands: 50,
            ms_bands: 6,
            endmembers: 6,
            width: 16,
            height: 16,
            factor: 2,
            k_max: 3,
            kernel: KernelKind::Gaussian,
            kernel_size: 3,
            kernel_variance: 1.0,
            seed: 0,
            sampling: EndmemberSampling::Auto,
            max_draws: default_max_draws(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: &str| Err(Error::invalid("scene config", d));
        if self.ms_bands == 0 || self.ms_bands >= self.bands {
            return bad("need 1 <= M_m < M");
        }
        if self.endmembers < 2 {
            return bad("need N >= 2");
        }
        if self.k_max < 1 {
            return bad("need k_max >= 1");
        }
        if self.factor < 1
            || !self.width.is_multiple_of(self.factor)
            || !self.height.is_multiple_of(self.factor)
        {
            return bad("factor must divide width and height");
        }
        if self.width == 0 || self.height == 0 {
            return bad("empty image");
        }
        if self.max_draws < 1 {
            return bad("max_draws must be >= 1");
        }
        Ok(())
    }

    pub fn sr_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn hs_pixels(&self) -> usize {
        (self.width / self.factor) * (self.height / self.factor)
    }

    pub fn operators(&self) -> Result<(SpectralResponse, SpatialResponse)> {
        self.validate()?;
        let f = build_spectral_response(self.bands, self.ms_bands)?;
        let g = build_spatial_response(
            self.width,
            self.height,
            self.kernel,
            self.kernel_size,
            self.kernel_variance,
            self.factor,
        )?;
        Ok((f, g))
    }
}

/// Window per `d x d` cell, in row-major cell order. Along each axis the
/// footprint is `size` pixels starting at `x0 + floor((d - size) / 2)`,
/// clipped to the image; weights are kernel values renormalized to sum 1.
pub fn build_spatial_response(
    width: usize,
    height: usize,
    kind: KernelKind,
    size: usize,
    variance: f64,
    factor: usize,
) -> Result<SpatialResponse> {
    if factor == 0
        || width == 0
        || height == 0
        || !width.is_multiple_of(factor)
        || !height.is_multiple_of(factor)
    {
        return Err(Error::invalid(
            "spatial response",
            format!("factor {factor} must divide {width}x{height}"),
        ));
    }
    if size < factor {
        return Err(Error::Coverage(format!(
            "kernel size {size} is smaller than the factor {factor}"
        )));
    }
    if kind == KernelKind::Gaussian && !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::invalid("spatial response", "variance must be > 0"));
    }
    let (cw, ch) = (width / factor, height / factor);
    let shift = (factor as i64 - size as i64).div_euclid(2);
    let center = (size as f64 - 1.0) / 2.0;
    let mut windows = Vec::with_capacity(cw * ch);
    for by in 0..ch {
        for bx in 0..cw {
            let sx = (bx * factor) as i64 + shift;
            let sy = (by * factor) as i64 + shift;
            let mut pixels = Vec::new();
            let mut weights = Vec::new();
            for ky in 0..size as i64 {
                let y = sy + ky;
                if y < 0 || y >= height as i64 {
                    continue;
                }
                for kx in 0..size as i64 {
                    let x = sx + kx;
                    if x < 0 || x >= width as i64 {
                        continue;
                    }
                    let w = match kind {
                        KernelKind::Uniform => 1.0,
                        KernelKind::Gaussian => {
                            let dx = kx as f64 - center;
                            let dy = ky as f64 - center;
                            (-(dx * dx + dy * dy) / (2.0 * variance)).exp()
                        }
                    };
                    pixels.push(y as usize * width + x as usize);
                    weights.push(w);
                }
            }
            let z: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= z);
            // last weight absorbs the rounding so the in-order sum is exactly 1
            let k = weights.len() - 1;
            let head: f64 = weights[..k].iter().sum();
            weights[k] = 1.0 - head;
            windows.push(Window { pixels, weights });
        }
    }
    SpatialResponse::new(width * height, windows)
}

/// Averages of contiguous band blocks, larger blocks first.
pub fn build_spectral_response(bands: usize, ms_bands: usize) -> Result<SpectralResponse> {
    if ms_bands == 0 || ms_bands >= bands {
        return Err(Error::invalid(
            "spectral response",
            format!("need 1 <= M_m < M, got M_m = {ms_bands}, M = {bands}"),
        ));
    }
    let (base, extra) = (bands / ms_bands, bands % ms_bands);
    let mut f = DMatrix::zeros(ms_bands, bands);
    let mut start = 0;
    for r in 0..ms_bands {
        let len = base + usize::from(r < extra);
        for c in start..start + len {
            f[(r, c)] = 1.0 / len as f64;
        }
        start += len;
    }
    SpectralResponse::new(f)
}

/// Everything needed to reproduce or audit a generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSidecar {
    pub seed: u64,
    /// Window used as the pure pixel of endmember `t`.
    pub pure_windows: Vec<usize>,
    /// Support shared by all mixed pixels (overlapping windows only).
    pub background_support: Vec<usize>,
    /// Support of each window's decimated abundance column.
    pub window_supports: Vec<Vec<usize>>,
    /// Kruskal rank of the decimated endmembers, when small enough to enumerate.
    pub k: Option<usize>,
    #[serde(with = "crate::real::scalar")]
    pub epsilon: f64,
    pub sampling: EndmemberSampling,
    pub draws: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub scene: Scene,
    pub sidecar: SceneSidecar,
}

/// Whether every `k`-column subset of `a` has full column rank.
fn all_subsets_independent(a: &DMatrix<f64>, k: usize) -> bool {
    if k > a.nrows() || k > a.ncols() {
        return false;
    }
    let thr = RANK_TOL * linalg::sigma_max(a);
    Combinations::new(a.ncols(), k)
        .all(|cols| linalg::sigma_min(&linalg::select_columns(a, &cols)) > thr)
}

fn sample_endmembers(
    config: &SceneConfig,
    f: &SpectralResponse,
    rng: &mut impl Rng,
) -> Result<(EndmemberMatrix, EndmemberSampling, usize)> {
    let (m, n) = (config.bands, config.endmembers);
    let predicted = bounds::lemma1_probability(n, m);
    let mode = match config.sampling {
        EndmemberSampling::Auto if predicted >= AUTO_UNIFORM_THRESHOLD => {
            EndmemberSampling::Uniform
        }
        EndmemberSampling::Auto => EndmemberSampling::Planted,
        other => other,
    };
    if mode == EndmemberSampling::Planted && n > m {
        return Err(Error::Layout(format!(
            "cannot plant {n} dominance rows in {m} bands"
        )));
    }
    let nf = n as f64;
    let delta = 0.45 / (4.0 * nf);
    let mut accepted_dominance = 0;
    for draw in 1..=config.max_draws {
        let mut a = DMatrix::from_fn(m, n, |_, _| rng.random::<f64>());
        if mode == EndmemberSampling::Planted {
            let mut rows: Vec<usize> = (0..m).collect();
            rows.shuffle(rng);
            for (i, &r) in rows.iter().take(n).enumerate() {
                for j in 0..n {
                    a[(r, j)] = if j == i {
                        rng.random::<f64>() * 0.1 / nf
                    } else {
                        1.0 - delta * rng.random::<f64>()
                    };
                }
            }
        }
        if !bounds::dominance_holds(&a) {
            continue;
        }
        accepted_dominance += 1;
        if linalg::rank(&a, RANK_TOL) < n {
            continue;
        }
        let a_prime = f.matrix() * &a;
        if !all_subsets_independent(&a_prime, config.k_max) {
            continue;
        }
        return Ok((EndmemberMatrix::new(a)?, mode, draw));
    }
    Err(Error::RejectionBudget {
        draws: config.max_draws,
        acceptance_rate: accepted_dominance as f64 / config.max_draws as f64,
        predicted,
    })
}

const PLACEMENT_ATTEMPTS: usize = 64;

/// Greedy placement in a random order; a window qualifies when none of the
/// windows it touches is touched by an earlier pick.
fn place_pure_windows(touching: &[Vec<usize>], n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..touching.len()).collect();
    order.shuffle(rng);
    let mut blocked = vec![false; touching.len()];
    let mut picks = Vec::with_capacity(n);
    for c in order {
        if picks.len() == n {
            break;
        }
        if touching[c].iter().any(|&w| blocked[w]) {
            continue;
        }
        for &w in &touching[c] {
            blocked[w] = true;
        }
        picks.push(c);
    }
    picks
}

fn flat_dirichlet(rng: &mut impl Rng, support: &[usize], n: usize) -> Vec<f64> {
    let mut col = vec![0.0; n];
    let draws: Vec<f64> = support.iter().map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    for (&k, d) in support.iter().zip(draws) {
        col[k] = d / total;
    }
    col
}

/// Generates a scene for the operators `(f, g)`.
///
/// Each endmember gets one pure window whose footprint is entirely that
/// material; pure windows are spaced so that no window touches two of them.
/// With overlapping windows every other pixel is a flat-Dirichlet mixture on
/// a shared background support of size `k_max - 1`, so a window column has at
/// most `k_max` nonzeros. When the windows partition the image each window is
/// its own region with a random support of size `k_max`.
pub fn generate_scene(
    config: &SceneConfig,
    f: &SpectralResponse,
    g: &SpatialResponse,
) -> Result<GeneratedScene> {
    config.validate()?;
    let n = config.endmembers;
    if f.sr_bands() != config.bands || f.ms_bands() != config.ms_bands {
        return Err(Error::dims(
            "generate_scene",
            "F does not match the config bands",
        ));
    }
    if g.sr_pixels() != config.sr_pixels() {
        return Err(Error::dims(
            "generate_scene",
            "G does not match the config image size",
        ));
    }
    let lh = g.hs_pixels();
    if n + n > lh {
        return Err(Error::Layout(format!(
            "N = {n} needs N <= L_h - N with L_h = {lh}"
        )));
    }
    let k_cap = n.min(config.ms_bands);
    if config.k_max > k_cap {
        return Err(Error::SparsityTooLarge {
            k_max: config.k_max,
            k: k_cap,
        });
    }
    let partition = g.is_partition();
    if !partition && config.k_max < 2 {
        return Err(Error::Layout(
            "overlapping windows need k_max >= 2 to mix background pixels".into(),
        ));
    }

    let mut rng = seed::rng(config.seed);
    let (a_bar, sampling, draws) = sample_endmembers(config, f, &mut rng)?;

    // windows touching each window, through shared pixels
    let coverage = g.coverage();
    let touching: Vec<Vec<usize>> = g
        .windows()
        .iter()
        .map(|w| {
            let mut t: Vec<usize> = w
                .pixels
                .iter()
                .flat_map(|&p| coverage[p].iter().map(|&(i, _)| i))
                .collect();
            t.sort_unstable();
            t.dedup();
            t
        })
        .collect();
    let mut pure_windows = Vec::new();
    for _ in 0..PLACEMENT_ATTEMPTS {
        pure_windows = place_pure_windows(&touching, n, &mut rng);
        if pure_windows.len() == n {
            break;
        }
    }
    if pure_windows.len() < n {
        return Err(Error::Layout(format!(
            "only {} of {n} pure windows fit without sharing a neighbouring window",
            pure_windows.len()
        )));
    }

    let l = g.sr_pixels();
    let mut assigned: Vec<Option<Vec<f64>>> = vec![None; l];
    for (t, &w) in pure_windows.iter().enumerate() {
        for &p in &g.windows()[w].pixels {
            let mut e = vec![0.0; n];
            e[t] = 1.0;
            assigned[p] = Some(e);
        }
    }
    let mut all: Vec<usize> = (0..n).collect();
    let background_support = if partition {
        Vec::new()
    } else {
        all.shuffle(&mut rng);
        let mut b = all[..config.k_max - 1].to_vec();
        b.sort_unstable();
        b
    };
    if partition {
        for (i, w) in g.windows().iter().enumerate() {
            if pure_windows.contains(&i) {
                continue;
            }
            all.shuffle(&mut rng);
            let mut sup = all[..config.k_max].to_vec();
            sup.sort_unstable();
            for &p in &w.pixels {
                assigned[p] = Some(flat_dirichlet(&mut rng, &sup, n));
            }
        }
    } else {
        for slot in assigned.iter_mut().filter(|s| s.is_none()) {
            *slot = Some(flat_dirichlet(&mut rng, &background_support, n));
        }
    }
    let mut s = DMatrix::zeros(n, l);
    for (j, col) in assigned.into_iter().enumerate() {
        let col = col.expect("every pixel is covered by some window");
        s.column_mut(j).copy_from_slice(&col);
    }
    let s_bar = AbundanceMatrix::new(s)?;
    let scene = Scene::new(a_bar, s_bar)?;

    let sp = crate::model::decimate_abundances(&scene.abundances, g)?;
    let window_supports = sp
        .matrix()
        .column_iter()
        .map(|c| crate::model::support(c.iter().copied(), bounds::SUPPORT_TOL))
        .collect();
    let a_prime = f.matrix() * scene.endmembers.matrix();
    let k = if n <= ENUMERATION_GUARD {
        Some(bounds::kruskal_rank(&a_prime, RANK_TOL)?)
    } else {
        None
    };
    let epsilon = bounds::epsilon_of(&scene.endmembers)?;
    Ok(GeneratedScene {
        scene,
        sidecar: SceneSidecar {
            seed: config.seed,
            pure_windows,
            background_support,
            window_supports,
            k,
            epsilon,
            sampling,
            draws,
        },
    })
}

/// `Y + E` with i.i.d. Gaussian `E` rescaled so the Frobenius SNR is exactly
/// `snr_db`. `+inf` returns `Y` unchanged.
pub fn add_noise(y: &DMatrix<f64>, snr_db: f64, seed: u64) -> Result<DMatrix<f64>> {
    if snr_db == f64::INFINITY {
        return Ok(y.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::invalid("snr", format!("{snr_db} dB")));
    }
    let signal = y.norm_squared();
    if signal == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let mut rng = seed::rng(seed);
    let e = DMatrix::from_fn(y.nrows(), y.ncols(), |_, _| {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    });
    let scale = (signal / (e.norm_squared() * 10f64.powf(snr_db / 10.0))).sqrt();
    Ok(y + e * scale)
}

/// Per-element mean squared error `||X - X_est||_F^2 / (M L)`.
pub fn mse(x_true: &DMatrix<f64>, x_est: &DMatrix<f64>) -> Result<f64> {
    if x_true.shape() != x_est.shape() {
        return Err(Error::dims(
            "mse",
            format!("{:?} vs {:?}", x_true.shape(), x_est.shape()),
        ));
    }
    if x_true.is_empty() {
        return Err(Error::invalid("mse", "empty matrices"));
    }
    Ok((x_true - x_est).norm_squared() / x_true.len() as f64)
}
