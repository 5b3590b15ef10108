//! A three-material scene on which exact recovery fails.
//!
//! Two endmembers share a fraction `rho` of each other's signature and the MS
//! sensor has a single band summing all SR bands. A one-parameter family of
//! abundance matrices then fits both observations exactly with `A = I`, while
//! the reconstruction error at the first pixel is `sqrt(2) |alpha_1|`. The
//! worst member of the family reaches `sqrt(2) rho`.

use crate::bounds;
use crate::model::{AbundanceMatrix, EndmemberMatrix, SpatialResponse, SpectralResponse, Window};
use crate::solver;
use crate::{Error, Result};
use nalgebra::DMatrix;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleInstance {
    pub rho: f64,
    pub a_bar: EndmemberMatrix,
    pub s_bar: AbundanceMatrix,
    pub f: SpectralResponse,
    pub g: SpatialResponse,
}

impl CounterexampleInstance {
    pub fn y_ms(&self) -> DMatrix<f64> {
        self.f.matrix() * self.a_bar.matrix() * self.s_bar.matrix()
    }

    pub fn y_hs(&self) -> DMatrix<f64> {
        self.g.apply(&(self.a_bar.matrix() * self.s_bar.matrix()))
    }
}

pub fn build_counterexample(rho: f64) -> Result<CounterexampleInstance> {
    if !(0.0..0.5).contains(&rho) {
        return Err(Error::invalid("rho", format!("{rho} is outside [0, 0.5)")));
    }
    #[rustfmt::skip]
    let a_bar = DMatrix::from_row_slice(3, 3, &[
        1.0 - rho, rho,       0.0,
        rho,       1.0 - rho, 0.0,
        0.0,       0.0,       1.0,
    ]);
    #[rustfmt::skip]
    let s_bar = DMatrix::from_row_slice(3, 6, &[
        1.0, 1.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0, 1.0, 1.0,
    ]);
    let windows = (0..3)
        .map(|i| Window {
            pixels: vec![2 * i, 2 * i + 1],
            weights: vec![0.5, 0.5],
        })
        .collect();
    Ok(CounterexampleInstance {
        rho,
        a_bar: EndmemberMatrix::new(a_bar)?,
        s_bar: AbundanceMatrix::new(s_bar)?,
        f: SpectralResponse::new(DMatrix::from_element(1, 3, 1.0))?,
        g: SpatialResponse::new(6, windows)?,
    })
}

/// The exact-fit family: `A = I` and abundances shifted by `alpha_1` on the
/// first window and `alpha_2` on the second. Both shifts must lie in
/// `[-rho, rho]`; values outside are rejected, not clipped.
pub fn feasible_family(
    inst: &CounterexampleInstance,
    alpha1: f64,
    alpha2: f64,
) -> Result<(EndmemberMatrix, AbundanceMatrix)> {
    let rho = inst.rho;
    for (name, a) in [("alpha1", alpha1), ("alpha2", alpha2)] {
        if !(a >= -rho && a <= rho) {
            return Err(Error::invalid(
                "alpha",
                format!("{name} = {a} is outside [-{rho}, {rho}]"),
            ));
        }
    }
    #[rustfmt::skip]
    let s = DMatrix::from_row_slice(3, 6, &[
        1.0 - rho + alpha1, 1.0 - rho - alpha1, rho + alpha2,       rho - alpha2,       0.0, 0.0,
        rho - alpha1,       rho + alpha1,       1.0 - rho - alpha2, 1.0 - rho + alpha2, 0.0, 0.0,
        0.0,                0.0,                0.0,                0.0,                1.0, 1.0,
    ]);
    Ok((
        EndmemberMatrix::new(DMatrix::identity(3, 3))?,
        AbundanceMatrix::new(s)?,
    ))
}

/// `||A_bar s_bar_1 - A s_1||_2` for a family member.
pub fn first_pixel_error(
    inst: &CounterexampleInstance,
    a: &EndmemberMatrix,
    s: &AbundanceMatrix,
) -> f64 {
    let truth = inst.a_bar.matrix() * inst.s_bar.matrix().column(0);
    let fit = a.matrix() * s.matrix().column(0);
    (truth - fit).norm()
}

/// `n` evenly spaced points from `-rho` to `rho`, endpoints exact.
pub fn alpha_grid(rho: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![0.0];
    }
    (0..n)
        .map(|k| rho * (2.0 * k as f64 / (n - 1) as f64 - 1.0))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub alpha1: f64,
    pub error: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterexampleReport {
    pub rho: f64,
    pub alpha1: f64,
    pub error: f64,
    pub expected_error: f64,
    pub objective: f64,
    pub identity_pass: bool,
    pub feasible: bool,
    pub grid: Vec<GridPoint>,
    pub grid_sup: f64,
    pub expected_sup: f64,
    pub sup_pass: bool,
    pub bound: f64,
    pub bound_pass: bool,
}

impl CounterexampleReport {
    pub fn all_pass(&self) -> bool {
        self.identity_pass && self.feasible && self.sup_pass && self.bound_pass
    }
}

pub const GRID_POINTS: usize = 21;
const EXACT_TOL: f64 = 1e-12;

fn family_objective(
    inst: &CounterexampleInstance,
    a: &EndmemberMatrix,
    s: &AbundanceMatrix,
) -> Result<f64> {
    solver::objective(
        a.matrix(),
        s.matrix(),
        &inst.y_ms(),
        &inst.y_hs(),
        &inst.f,
        &inst.g,
    )
}

/// Checks the error identity at `alpha1`, feasibility and the supremum over
/// the grid, and compares against the certified bound.
pub fn verify_counterexample(
    inst: &CounterexampleInstance,
    alpha1: f64,
) -> Result<CounterexampleReport> {
    let (a, s) = feasible_family(inst, alpha1, 0.0)?;
    let error = first_pixel_error(inst, &a, &s);
    let expected_error = 2f64.sqrt() * alpha1.abs();
    let objective = family_objective(inst, &a, &s)?;

    let mut grid = Vec::with_capacity(GRID_POINTS);
    let mut feasible = objective < EXACT_TOL;
    for alpha in alpha_grid(inst.rho, GRID_POINTS) {
        let (a, s) = feasible_family(inst, alpha, 0.0)?;
        let obj = family_objective(inst, &a, &s)?;
        feasible &= obj < EXACT_TOL;
        grid.push(GridPoint {
            alpha1: alpha,
            error: first_pixel_error(inst, &a, &s),
            objective: obj,
        });
    }
    let grid_sup = grid.iter().map(|p| p.error).fold(0.0, f64::max);
    let expected_sup = 2f64.sqrt() * inst.rho;

    let cert = bounds::certify(&inst.a_bar, &inst.s_bar, &inst.f, &inst.g)?;
    let bound = cert.per_pixel_bound[0];

    Ok(CounterexampleReport {
        rho: inst.rho,
        alpha1,
        error,
        expected_error,
        objective,
        identity_pass: (error - expected_error).abs() <= EXACT_TOL,
        feasible,
        grid,
        grid_sup,
        expected_sup,
        sup_pass: (grid_sup - expected_sup).abs() <= EXACT_TOL,
        bound,
        bound_pass: error <= bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfacePoint {
    pub alpha1: f64,
    pub alpha2: f64,
    pub error: f64,
    pub objective: f64,
}

/// First-pixel error over a square `(alpha1, alpha2)` grid.
pub fn error_surface(inst: &CounterexampleInstance, points: usize) -> Result<Vec<SurfacePoint>> {
    let grid = alpha_grid(inst.rho, points);
    let mut out = Vec::with_capacity(grid.len() * grid.len());
    for &a1 in &grid {
        for &a2 in &grid {
            let (a, s) = feasible_family(inst, a1, a2)?;
            out.push(SurfacePoint {
                alpha1: a1,
                alpha2: a2,
                error: first_pixel_error(inst, &a, &s),
                objective: family_objective(inst, &a, &s)?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn construction() {
        let i0 = build_counterexample(0.0).unwrap();
        assert_eq!(i0.a_bar.matrix(), &DMatrix::identity(3, 3));
        let i = build_counterexample(0.25).unwrap();
        assert_eq!(
            i.a_bar
                .matrix()
                .column(0)
                .iter()
                .copied()
                .collect::<Vec<_>>(),
            vec![0.75, 0.25, 0.0]
        );
        assert!(build_counterexample(0.5).is_err());
        assert!(build_counterexample(-0.1).is_err());
    }

    #[test]
    fn family_at_zero_shift() {
        let inst = build_counterexample(0.3).unwrap();
        let (a, s) = feasible_family(&inst, 0.0, 0.0).unwrap();
        let s = s.matrix();
        assert_relative_eq!(s[(0, 0)], 0.7);
        assert_relative_eq!(s[(1, 0)], 0.3);
        assert_relative_eq!(s[(0, 2)], 0.3);
        assert_relative_eq!(s[(1, 2)], 0.7);
        let obj =
            solver::objective(a.matrix(), s, &inst.y_ms(), &inst.y_hs(), &inst.f, &inst.g).unwrap();
        assert!(obj < 1e-24);
    }

    #[test]
    fn extreme_shift_is_a_vertex() {
        let inst = build_counterexample(0.25).unwrap();
        let (a, s) = feasible_family(&inst, 0.25, 0.0).unwrap();
        assert_eq!(
            s.matrix().column(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 0.0, 0.0]
        );
        assert!(family_objective(&inst, &a, &s).unwrap() < 1e-24);
    }

    #[test]
    fn shift_out_of_range_is_rejected() {
        let inst = build_counterexample(0.1).unwrap();
        assert!(feasible_family(&inst, 0.11, 0.0).is_err());
        assert!(feasible_family(&inst, 0.0, -0.2).is_err());
    }

    #[test]
    fn report_values() {
        let inst = build_counterexample(0.25).unwrap();
        let r = verify_counterexample(&inst, 0.25).unwrap();
        assert_relative_eq!(r.error, 0.353553, epsilon = 1e-6);
        assert!(r.all_pass());

        let inst = build_counterexample(0.1).unwrap();
        let r = verify_counterexample(&inst, 0.05).unwrap();
        assert_relative_eq!(r.error, 0.070711, epsilon = 1e-6);
        assert_relative_eq!(r.bound, 2.7994, epsilon = 1e-4);
        assert!(r.bound_pass);

        let inst = build_counterexample(0.0).unwrap();
        let r = verify_counterexample(&inst, 0.0).unwrap();
        assert_eq!(r.error, 0.0);
        assert_eq!(r.grid_sup, 0.0);
    }

    #[test]
    fn error_ignores_second_shift() {
        let inst = build_counterexample(0.35).unwrap();
        let surface = error_surface(&inst, 9).unwrap();
        for row in surface.chunks(9) {
            let e0 = row[0].error;
            assert!(row.iter().all(|p| p.error == e0));
            assert!(row.iter().all(|p| p.objective < 1e-24));
        }
    }
}
