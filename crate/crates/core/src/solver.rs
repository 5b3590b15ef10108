//! Alternating projected-gradient solver for
//!
//! ```text
//! min_{A in [0,1]^{M x N}, S in U^{N x L}}  ||Y_M - F A S||_F^2 + ||Y_H - A S G||_F^2
//! ```
//!
//! Each outer iteration takes a few projected gradient steps on `A` (box
//! projection) and then on `S` (per-column simplex projection). Step sizes
//! come from block Lipschitz bounds, optionally relaxed by backtracking, and
//! any step that would raise the objective is discarded, so the objective
//! trace never increases.

use crate::linalg;
use crate::model::{AbundanceMatrix, EndmemberMatrix, SpatialResponse, SpectralResponse};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Always step with `1 / L` from the block Lipschitz bound.
    Fixed,
    /// Start from half the last accepted curvature and double until the
    /// sufficient-decrease test passes (never beyond the Lipschitz bound).
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Successive projection on `Y_H` for `A`, support-restricted least
    /// squares on `Y_M` for `S`.
    PurePixel,
    /// Uniform `A`, flat-Dirichlet columns of `S`.
    Random,
    /// Caller supplies `(A, S)` through [`solve_cosmf_from`].
    Provided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_outer_iterations: usize,
    pub inner_steps: usize,
    pub relative_tolerance: f64,
    pub step_rule: StepRule,
    pub init: InitMode,
    /// Entries of the estimated HS abundances above this value form the
    /// support used to restrict the initial least-squares fit.
    pub support_threshold: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_outer_iterations: 5000,
            inner_steps: 3,
            relative_tolerance: 1e-10,
            step_rule: StepRule::Backtracking,
            init: InitMode::PurePixel,
            support_threshold: 1e-6,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iterations < 1 || self.inner_steps < 1 {
            return Err(Error::invalid(
                "solver config",
                "iteration caps must be >= 1",
            ));
        }
        if !(self.relative_tolerance > 0.0) || !(self.support_threshold > 0.0) {
            return Err(Error::invalid("solver config", "tolerances must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Relative objective decrease over one outer iteration fell below tolerance.
    Converged,
    /// Objective fell to rounding level relative to the data.
    ExactFit,
    /// Outer iteration cap reached.
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub a: EndmemberMatrix,
    pub s: AbundanceMatrix,
    /// Objective at the starting point followed by one entry per outer iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

impl Solution {
    pub fn objective(&self) -> f64 {
        *self
            .trace
            .last()
            .expect("trace holds the initial objective")
    }

    pub fn image(&self) -> DMatrix<f64> {
        self.a.matrix() * self.s.matrix()
    }
}

fn check_dims(
    a: &DMatrix<f64>,
    s: &DMatrix<f64>,
    ym: &DMatrix<f64>,
    yh: &DMatrix<f64>,
    f: &SpectralResponse,
    g: &SpatialResponse,
) -> Result<()> {
    check_obs_dims(ym, yh, f, g)?;
    if a.nrows() != f.sr_bands() || a.ncols() != s.nrows() || s.ncols() != g.sr_pixels() {
        return Err(Error::dims(
            "objective",
            format!(
                "A is {}x{}, S is {}x{}; expected {}xN and Nx{}",
                a.nrows(),
                a.ncols(),
                s.nrows(),
                s.ncols(),
                f.sr_bands(),
                g.sr_pixels()
            ),
        ));
    }
    Ok(())
}

fn check_obs_dims(
    ym: &DMatrix<f64>,
    yh: &DMatrix<f64>,
    f: &SpectralResponse,
    g: &SpatialResponse,
) -> Result<()> {
    if ym.shape() != (f.ms_bands(), g.sr_pixels()) {
        return Err(Error::dims(
            "solver",
            format!(
                "Y_M is {}x{}, expected {}x{}",
                ym.nrows(),
                ym.ncols(),
                f.ms_bands(),
                g.sr_pixels()
            ),
        ));
    }
    if yh.shape() != (f.sr_bands(), g.hs_pixels()) {
        return Err(Error::dims(
            "solver",
            format!(
                "Y_H is {}x{}, expected {}x{}",
                yh.nrows(),
                yh.ncols(),
                f.sr_bands(),
                g.hs_pixels()
            ),
        ));
    }
    Ok(())
}

/// `||Y_M - F A S||_F^2 + ||Y_H - A S G||_F^2`.
pub fn objective(
    a: &DMatrix<f64>,
    s: &DMatrix<f64>,
    ym: &DMatrix<f64>,
    yh: &DMatrix<f64>,
    f: &SpectralResponse,
    g: &SpatialResponse,
) -> Result<f64> {
    check_dims(a, s, ym, yh, f, g)?;
    let x = a * s;
    let rm = ym - f.matrix() * &x;
    let rh = yh - g.apply(&x);
    Ok(rm.norm_squared() + rh.norm_squared())
}

/// Block gradients `(d/dA, d/dS)` of the objective.
pub fn gradients(
    a: &DMatrix<f64>,
    s: &DMatrix<f64>,
    ym: &DMatrix<f64>,
    yh: &DMatrix<f64>,
    f: &SpectralResponse,
    g: &SpatialResponse,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dims(a, s, ym, yh, f, g)?;
    let p = Problem::new(ym, yh, f, g);
    Ok((p.grad_a(a, s), p.grad_s(a, s)))
}

/// Euclidean projection onto the unit simplex (sort-based threshold).
pub fn project_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::invalid("project_simplex", "empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("project_simplex", "non-finite entry"));
    }
    let mut out = v.to_vec();
    project_simplex_in_place(&mut out);
    Ok(out)
}

fn project_simplex_in_place(v: &mut [f64]) {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
    // renormalize away rounding so column sums are exactly representable
    let sum: f64 = v.iter().sum();
    if sum > 0.0 && (sum - 1.0).abs() > 0.0 {
        let (imax, _) =
            v.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |b, (i, &x)| if x > b.1 { (i, x) } else { b },
            );
        v[imax] += 1.0 - sum;
        if v[imax] < 0.0 {
            v[imax] = 0.0;
        }
    }
}

fn project_columns(s: &mut DMatrix<f64>) {
    for mut col in s.column_iter_mut() {
        project_simplex_in_place(col.as_mut_slice());
    }
}

fn project_box(a: &mut DMatrix<f64>) {
    a.apply(|x| *x = x.clamp(0.0, 1.0));
}

/// Column indices picked by successive projection: repeatedly take the
/// column with the largest residual norm (lowest index on ties) and project
/// the residual onto its orthogonal complement.
pub fn spa_select(y: &DMatrix<f64>, n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > y.ncols() || n > y.nrows() {
        return Err(Error::invalid(
            "spa",
            format!(
                "cannot pick {n} columns from a {}x{} matrix",
                y.nrows(),
                y.ncols()
            ),
        ));
    }
    let mut r = y.clone();
    let first_max = r.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let floor = 1e-10 * first_max;
    let mut picks = Vec::with_capacity(n);
    for t in 0..n {
        let (best, norm) = r.column_iter().map(|c| c.norm()).enumerate().fold(
            (0, f64::NEG_INFINITY),
            |b, (i, v)| if v > b.1 { (i, v) } else { b },
        );
        if !(norm > floor) {
            return Err(Error::RankCollapse {
                picked: t,
                wanted: n,
            });
        }
        let u: DVector<f64> = r.column(best) / norm;
        let coeffs = u.transpose() * &r;
        r -= &u * coeffs;
        picks.push(best);
    }
    Ok(picks)
}

/// Endmembers from pure HS pixels, clipped to `[0, 1]`.
pub fn spa_initialize(yh: &DMatrix<f64>, n: usize) -> Result<EndmemberMatrix> {
    let picks = spa_select(yh, n)?;
    EndmemberMatrix::clamped(linalg::select_columns(yh, &picks))
}

/// Initial abundances for fixed endmembers.
///
/// HS abundances are estimated by least squares on `Y_H`; for each SR pixel
/// the support of its heaviest covering window restricts a least-squares fit
/// of the MS pixel against `F A`, falling back to the unrestricted fit when
/// the restricted columns are rank deficient. Each column is then projected
/// onto the simplex.
pub fn init_abundances(
    a: &EndmemberMatrix,
    ym: &DMatrix<f64>,
    yh: &DMatrix<f64>,
    f: &SpectralResponse,
    g: &SpatialResponse,
    support_threshold: f64,
) -> Result<AbundanceMatrix> {
    check_obs_dims(ym, yh, f, g)?;
    let n = a.count();
    let a_prime = f.matrix() * a.matrix();
    let s_hs = linalg::pinv(a.matrix(), 1e-12)? * yh;
    let supports: Vec<Vec<usize>> = s_hs
        .column_iter()
        .map(|c| {
            let sup: Vec<usize> = (0..n).filter(|&k| c[k] > support_threshold).collect();
            if sup.is_empty() {
                (0..n).collect()
            } else {
                sup
            }
        })
        .collect();
    let coverage = g.coverage();
    let full: Vec<usize> = (0..n).collect();
    let mut solvers: HashMap<Vec<usize>, Option<DMatrix<f64>>> = HashMap::new();
    let full_pinv = linalg::pinv(&a_prime, 1e-12)?;
    let mut s = DMatrix::zeros(n, g.sr_pixels());
    for (j, cov) in coverage.iter().enumerate() {
        let best = cov
            .iter()
            .fold(None, |b: Option<(usize, f64)>, &(i, w)| match b {
                Some((_, bw)) if bw >= w => b,
                _ => Some((i, w)),
            });
        let sup = best.map_or(&full, |(i, _)| &supports[i]);
        let restricted = solvers
            .entry(sup.clone())
            .or_insert_with(|| {
                let sub = linalg::select_columns(&a_prime, sup);
                (linalg::rank(&sub, 1e-9) == sup.len())
                    .then(|| linalg::pinv(&sub, 1e-12).ok())
                    .flatten()
            })
            .as_ref();
        let y = ym.column(j);
        let mut col = vec![0.0; n];
        match restricted {
            Some(p) => {
                let coef = p * y;
                for (k, &idx) in sup.iter().enumerate() {
                    col[idx] = coef[k];
                }
            }
            None => {
                let coef = &full_pinv * y;
                col.copy_from_slice(coef.as_slice());
            }
        }
        if col.iter().any(|x| !x.is_finite()) {
            col.fill(1.0 / n as f64);
        }
        project_simplex_in_place(&mut col);
        s.column_mut(j).copy_from_slice(&col);
    }
    AbundanceMatrix::new(s)
}

fn random_start(
    m: usize,
    n: usize,
    l: usize,
    seed: u64,
) -> Result<(EndmemberMatrix, AbundanceMatrix)> {
    let mut rng = crate::seed::rng(seed);
    let a = DMatrix::from_fn(m, n, |_, _| rng.random::<f64>());
    let mut s = DMatrix::from_fn(n, l, |_, _| Exp1.sample(&mut rng));
    for mut c in s.column_iter_mut() {
        let t: f64 = c.sum();
        c /= t;
        project_simplex_in_place(c.as_mut_slice());
    }
    Ok((EndmemberMatrix::new(a)?, AbundanceMatrix::new(s)?))
}

/// Observations plus cached operator constants.
struct Problem<'a> {
    ym: &'a DMatrix<f64>,
    yh: &'a DMatrix<f64>,
    f: &'a DMatrix<f64>,
    g: &'a SpatialResponse,
    lambda_ftf: f64,
    lambda_gtg: f64,
}

impl<'a> Problem<'a> {
    fn new(
        ym: &'a DMatrix<f64>,
        yh: &'a DMatrix<f64>,
        f: &'a SpectralResponse,
        g: &'a SpatialResponse,
    ) -> Self {
        let fm = f.matrix();
        Problem {
            ym,
            yh,
            f: fm,
            g,
            lambda_ftf: linalg::lambda_max_psd(&(fm * fm.transpose())),
            lambda_gtg: linalg::inf_norm(&g.gram()),
        }
    }

    fn value(&self, a: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
        let a_prime = self.f * a;
        let sp = self.g.apply(s);
        self.value_parts(&a_prime, a, s, &sp)
    }

    fn value_parts(
        &self,
        a_prime: &DMatrix<f64>,
        a: &DMatrix<f64>,
        s: &DMatrix<f64>,
        sp: &DMatrix<f64>,
    ) -> f64 {
        (self.ym - a_prime * s).norm_squared() + (self.yh - a * sp).norm_squared()
    }

    fn grad_a(&self, a: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
        let sp = self.g.apply(s);
        let rm = self.ym - (self.f * a) * s;
        let rh = self.yh - a * &sp;
        (self.f.transpose() * rm * s.transpose() + rh * sp.transpose()) * -2.0
    }

    fn grad_s(&self, a: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
        let a_prime = self.f * a;
        let rm = self.ym - &a_prime * s;
        let rh = self.yh - a * self.g.apply(s);
        (a_prime.transpose() * rm + self.g.apply_transpose(&(a.transpose() * rh))) * -2.0
    }

    fn lipschitz_a(&self, s: &DMatrix<f64>) -> f64 {
        let sp = self.g.apply(s);
        let sst = linalg::lambda_max_psd(&(s * s.transpose()));
        let spt = linalg::lambda_max_psd(&(&sp * sp.transpose()));
        2.0 * (sst * self.lambda_ftf + spt)
    }

    fn lipschitz_s(&self, a: &DMatrix<f64>) -> f64 {
        let a_prime = self.f * a;
        let apa = linalg::lambda_max_psd(&(a_prime.transpose() * &a_prime));
        let ata = linalg::lambda_max_psd(&(a.transpose() * a));
        2.0 * (apa + ata * self.lambda_gtg)
    }
}

/// One projected gradient step on a block. Returns the new objective; the
/// block is left unchanged when the step would not decrease it.
#[allow(clippy::too_many_arguments)]
fn block_step(
    x: &mut DMatrix<f64>,
    fx: f64,
    grad: &DMatrix<f64>,
    l_upper: f64,
    l_est: &mut f64,
    rule: StepRule,
    project: fn(&mut DMatrix<f64>),
    eval: &dyn Fn(&DMatrix<f64>) -> f64,
) -> f64 {
    let l_upper = l_upper.max(f64::MIN_POSITIVE);
    let mut l = match rule {
        StepRule::Fixed => l_upper,
        StepRule::Backtracking => l_est.clamp(l_upper * 1e-6, l_upper),
    };
    loop {
        let mut cand = &*x - grad / l;
        project(&mut cand);
        let d = &cand - &*x;
        let f_new = eval(&cand);
        let model = fx + grad.dot(&d) + 0.5 * l * d.norm_squared();
        if f_new <= model || l >= l_upper {
            *l_est = l / 2.0;
            if f_new <= fx {
                *x = cand;
                return f_new;
            }
            return fx;
        }
        l = (2.0 * l).min(l_upper);
    }
}

/// Solves from the initialization selected by `config.init`.
pub fn solve_cosmf(
    ym: &DMatrix<f64>,
    yh: &DMatrix<f64>,
    f: &SpectralResponse,
    g: &SpatialResponse,
    n: usize,
    config: &SolverConfig,
) -> Result<Solution> {
    config.validate()?;
    check_obs_dims(ym, yh, f, g)?;
    let (a0, s0) = match config.init {
        InitMode::PurePixel => {
            let a0 = spa_initialize(yh, n)?;
            let s0 = init_abundances(&a0, ym, yh, f, g, config.support_threshold)?;
            (a0, s0)
        }
        InitMode::Random => random_start(f.sr_bands(), n, g.sr_pixels(), config.seed)?,
        InitMode::Provided => {
            return Err(Error::invalid(
                "solver config",
                "init = provided requires solve_cosmf_from",
            ))
        }
    };
    solve_cosmf_from(ym, yh, f, g, a0, s0, config)
}

/// Solves from a caller-supplied feasible starting point.
pub fn solve_cosmf_from(
    ym: &DMatrix<f64>,
    yh: &DMatrix<f64>,
    f: &SpectralResponse,
    g: &SpatialResponse,
    a0: EndmemberMatrix,
    s0: AbundanceMatrix,
    config: &SolverConfig,
) -> Result<Solution> {
    config.validate()?;
    let mut a = a0.into_matrix();
    let mut s = s0.into_matrix();
    check_dims(&a, &s, ym, yh, f, g)?;
    let p = Problem::new(ym, yh, f, g);

    let mut fx = p.value(&a, &s);
    if !fx.is_finite() {
        return Err(Error::NonFinite(0));
    }
    // residual entries at unit roundoff of the data
    let floor = 100.0 * f64::EPSILON * f64::EPSILON * (ym.norm_squared() + yh.norm_squared());
    let mut trace = vec![fx];
    let mut l_a = f64::INFINITY;
    let mut l_s = f64::INFINITY;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    for it in 1..=config.max_outer_iterations {
        if fx <= floor {
            termination = Termination::ExactFit;
            break;
        }
        iterations = it;
        let f_start = fx;

        let sp = p.g.apply(&s);
        let la_upper = p.lipschitz_a(&s);
        for _ in 0..config.inner_steps {
            let grad = p.grad_a(&a, &s);
            let eval = |cand: &DMatrix<f64>| p.value_parts(&(p.f * cand), cand, &s, &sp);
            fx = block_step(
                &mut a,
                fx,
                &grad,
                la_upper,
                &mut l_a,
                config.step_rule,
                project_box,
                &eval,
            );
        }

        let a_prime = p.f * &a;
        let ls_upper = p.lipschitz_s(&a);
        for _ in 0..config.inner_steps {
            let grad = p.grad_s(&a, &s);
            let eval = |cand: &DMatrix<f64>| p.value_parts(&a_prime, &a, cand, &p.g.apply(cand));
            fx = block_step(
                &mut s,
                fx,
                &grad,
                ls_upper,
                &mut l_s,
                config.step_rule,
                project_columns,
                &eval,
            );
        }

        if !fx.is_finite() {
            return Err(Error::NonFinite(it));
        }
        trace.push(fx);
        if fx <= floor {
            termination = Termination::ExactFit;
            break;
        }
        if f_start - fx <= config.relative_tolerance * f_start {
            termination = Termination::Converged;
            break;
        }
    }

    Ok(Solution {
        a: EndmemberMatrix::new(a)?,
        s: AbundanceMatrix::new(s)?,
        trace,
        iterations,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Window;
    use approx::assert_relative_eq;

    #[test]
    fn simplex_examples() {
        assert_eq!(project_simplex(&[0.5, 0.5]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        let p = project_simplex(&[0.4, 0.2]).unwrap();
        assert_relative_eq!(p[0], 0.6, epsilon = 1e-15);
        assert_relative_eq!(p[1], 0.4, epsilon = 1e-15);
        assert!(project_simplex(&[]).is_err());
        assert!(project_simplex(&[f64::NAN]).is_err());
    }

    #[test]
    fn simplex_matches_grid_oracle() {
        // brute force over a fine grid of the 2-simplex
        let v = [0.4, 0.2];
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=100_000 {
            let t = k as f64 / 100_000.0;
            let d = (t - v[0]).powi(2) + (1.0 - t - v[1]).powi(2);
            if d < best.0 {
                best = (d, t);
            }
        }
        let p = project_simplex(&v).unwrap();
        assert!((p[0] - best.1).abs() <= 1e-5);
    }

    #[test]
    fn toy_objective() {
        // 1x1: F = 1, G = single window on one pixel is not decimating but
        // fine for arithmetic; Y_M = 2, Y_H = 3, A = 1, S = 1.
        let f = SpectralResponse::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let g = SpatialResponse::identity(1);
        let one = DMatrix::from_element(1, 1, 1.0);
        let v = objective(
            &one,
            &one,
            &DMatrix::from_element(1, 1, 2.0),
            &DMatrix::from_element(1, 1, 3.0),
            &f,
            &g,
        )
        .unwrap();
        assert_eq!(v, 5.0);
    }

    #[test]
    fn spa_single_pick_is_max_norm() {
        let y = DMatrix::from_row_slice(2, 3, &[0.1, 0.9, 0.5, 0.2, 0.1, 0.6]);
        assert_eq!(spa_select(&y, 1).unwrap(), vec![1]);
    }

    #[test]
    fn spa_recovers_pure_columns() {
        let mut rng = crate::seed::rng(2);
        let a = DMatrix::from_fn(10, 4, |_, _| rng.random::<f64>());
        // every column pure, plus duplicates
        let cols = [2usize, 0, 3, 1, 2, 0];
        let y = linalg::select_columns(&a, &cols);
        let a0 = spa_initialize(&y, 4).unwrap();
        let mut found: Vec<usize> = (0..4)
            .map(|k| {
                (0..4)
                    .find(|&t| (a0.matrix().column(k) - a.column(t)).norm() < 1e-12)
                    .unwrap()
            })
            .collect();
        found.sort();
        assert_eq!(found, vec![0, 1, 2, 3]);
    }

    #[test]
    fn spa_rank_collapse() {
        let y = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert!(matches!(
            spa_select(&y, 2),
            Err(Error::RankCollapse {
                picked: 1,
                wanted: 2
            })
        ));
    }

    fn small_problem(
        seed: u64,
    ) -> (
        DMatrix<f64>,
        DMatrix<f64>,
        SpectralResponse,
        SpatialResponse,
    ) {
        let mut rng = crate::seed::rng(seed);
        let f = SpectralResponse::new(DMatrix::from_fn(2, 5, |_, _| rng.random::<f64>())).unwrap();
        let windows = vec![
            Window {
                pixels: vec![0, 1, 2],
                weights: vec![0.2, 0.5, 0.3],
            },
            Window {
                pixels: vec![2, 3, 4, 5],
                weights: vec![0.1, 0.4, 0.4, 0.1],
            },
        ];
        let g = SpatialResponse::new(6, windows).unwrap();
        let ym = DMatrix::from_fn(2, 6, |_, _| rng.random::<f64>());
        let yh = DMatrix::from_fn(5, 2, |_, _| rng.random::<f64>());
        (ym, yh, f, g)
    }

    #[test]
    fn gradients_match_central_differences() {
        for seed in 0..10 {
            let (ym, yh, f, g) = small_problem(seed);
            let (a, s) = random_start(5, 3, 6, seed + 100).unwrap();
            let (a, s) = (a.into_matrix(), s.into_matrix());
            let (ga, gs) = gradients(&a, &s, &ym, &yh, &f, &g).unwrap();
            let h = 1e-6;
            let obj =
                |a: &DMatrix<f64>, s: &DMatrix<f64>| objective(a, s, &ym, &yh, &f, &g).unwrap();
            let mut fd_a = DMatrix::zeros(5, 3);
            for i in 0..a.len() {
                let (mut p, mut m) = (a.clone(), a.clone());
                p[i] += h;
                m[i] -= h;
                fd_a[i] = (obj(&p, &s) - obj(&m, &s)) / (2.0 * h);
            }
            let mut fd_s = DMatrix::zeros(3, 6);
            for i in 0..s.len() {
                let (mut p, mut m) = (s.clone(), s.clone());
                p[i] += h;
                m[i] -= h;
                fd_s[i] = (obj(&a, &p) - obj(&a, &m)) / (2.0 * h);
            }
            assert!((&ga - &fd_a).norm() / fd_a.norm() < 1e-5, "seed {seed}");
            assert!((&gs - &fd_s).norm() / fd_s.norm() < 1e-5, "seed {seed}");
        }
    }

    #[test]
    fn trace_is_monotone_and_iterates_feasible() {
        let (ym, yh, f, g) = small_problem(7);
        for rule in [StepRule::Fixed, StepRule::Backtracking] {
            let cfg = SolverConfig {
                init: InitMode::Random,
                max_outer_iterations: 200,
                step_rule: rule,
                seed: 3,
                ..SolverConfig::default()
            };
            let sol = solve_cosmf(&ym, &yh, &f, &g, 3, &cfg).unwrap();
            assert!(sol.trace.windows(2).all(|w| w[1] <= w[0]));
            assert!(sol.trace.last().unwrap() < &sol.trace[0]);
        }
    }

    #[test]
    fn warm_start_at_optimum_stops_at_once() {
        let (_, _, f, g) = small_problem(1);
        let (a, s) = random_start(5, 3, 6, 9).unwrap();
        let x = a.matrix() * s.matrix();
        let ym = f.matrix() * &x;
        let yh = g.apply(&x);
        let sol = solve_cosmf_from(&ym, &yh, &f, &g, a, s, &SolverConfig::default()).unwrap();
        assert!(sol.iterations <= 1);
        assert!(sol.objective() < 1e-28);
        assert_ne!(sol.termination, Termination::MaxIterations);
    }

    #[test]
    fn provided_mode_requires_explicit_start() {
        let (ym, yh, f, g) = small_problem(1);
        let cfg = SolverConfig {
            init: InitMode::Provided,
            ..SolverConfig::default()
        };
        assert!(solve_cosmf(&ym, &yh, &f, &g, 3, &cfg).is_err());
    }

    #[test]
    fn non_finite_input_is_an_error() {
        let (mut ym, yh, f, g) = small_problem(1);
        ym[(0, 0)] = f64::NAN;
        let (a, s) = random_start(5, 3, 6, 9).unwrap();
        assert!(matches!(
            solve_cosmf_from(&ym, &yh, &f, &g, a, s, &SolverConfig::default()),
            Err(Error::NonFinite(0))
        ));
    }

    #[test]
    fn config_validation() {
        let bad = SolverConfig {
            relative_tolerance: 0.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let cfg: SolverConfig = serde_json::from_str(r#"{"max_outer_iterations": 10}"#).unwrap();
        assert_eq!(cfg.max_outer_iterations, 10);
        assert_eq!(cfg.step_rule, StepRule::Backtracking);
    }
}
