//! Recovery certificate and the checks behind it.
//!
//! For a scene `(A, S)` observed through `(F, G)`, the reconstruction error of
//! any exact CoSMF fit at SR pixel `j` is bounded by
//!
//! ```text
//! eps * sigma_max(A) * sqrt(1 + kappa^2) * (4 + 2 / gamma_j) * C
//! ```
//!
//! where `K = krank(F A)`, `eps` measures spectral dominance between
//! endmembers, `kappa` is a worst-case subset conditioning of `F A`, `C`
//! depends only on `(N, K)` and `gamma_j` is the largest blur weight on pixel
//! `j`. This module computes every factor, checks the four scene assumptions,
//! and verifies the intermediate inequalities on concrete fits.

use crate::linalg::{self, Combinations};
use crate::model::{
    self, AbundanceMatrix, EndmemberMatrix, Scene, SpatialResponse, SpectralResponse, SIMPLEX_TOL,
};
use crate::real;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Largest column count accepted by the subset enumerations.
pub const ENUMERATION_GUARD: usize = 20;

/// Relative singular-value threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-9;

/// Entries at or below this magnitude are outside the support.
pub const SUPPORT_TOL: f64 = 1e-9;

/// Max-abs deviation allowed between a column of `S'` and a unit vector.
pub const PURE_TOL: f64 = 1e-6;

fn guard(n: usize) -> Result<()> {
    if n > ENUMERATION_GUARD {
        Err(Error::GuardExceeded {
            n,
            limit: ENUMERATION_GUARD,
        })
    } else {
        Ok(())
    }
}

/// Kruskal rank: the largest `K` such that every `K`-column subset has
/// `sigma_min > tol * sigma_max(A')`.
pub fn kruskal_rank(a_prime: &DMatrix<f64>, tol: f64) -> Result<usize> {
    let n = a_prime.ncols();
    if n == 0 {
        return Err(Error::invalid("kruskal_rank", "matrix has no columns"));
    }
    guard(n)?;
    let top = linalg::sigma_max(a_prime);
    if top == 0.0 {
        return Ok(0);
    }
    let threshold = tol * top;
    let max_k = n.min(a_prime.nrows());
    for k in 1..=max_k {
        for cols in Combinations::new(n, k) {
            let sub = linalg::select_columns(a_prime, &cols);
            // k <= rows here, so the k-th singular value is the smallest
            if linalg::sigma_min(&sub) <= threshold {
                return Ok(k - 1);
            }
        }
    }
    Ok(max_k)
}

/// Spectral-dominance constant; `+inf` when some endmember has no band below `1/N`.
pub fn epsilon_of(a_bar: &EndmemberMatrix) -> Result<f64> {
    let a = a_bar.matrix();
    let n = a.ncols();
    if n < 2 {
        return Err(Error::invalid(
            "epsilon_of",
            "needs at least two endmembers",
        ));
    }
    let inv_n = 1.0 / n as f64;
    let mut eps = 0.0f64;
    for i in 0..n {
        let eligible: Vec<usize> = (0..a.nrows()).filter(|&k| a[(k, i)] < inv_n).collect();
        if eligible.is_empty() {
            return Ok(f64::INFINITY);
        }
        for j in (0..n).filter(|&j| j != i) {
            let e_ji = eligible
                .iter()
                .map(|&k| (1.0 - a[(k, j)]) / (1.0 - n as f64 * a[(k, i)]))
                .fold(f64::INFINITY, f64::min);
            eps = eps.max(e_ji);
        }
    }
    Ok(eps)
}

/// `max_J sigma_max(A'_{J^c}) / sigma_min(A'_J)` over nonempty `J`.
///
/// `sigma_min` of an `m x k` block is its `min(m, k)`-th singular value and
/// `sigma_max` of an empty block is 0. A zero `sigma_min` gives `+inf`.
pub fn kappa_of(a_prime: &DMatrix<f64>) -> Result<f64> {
    let n = a_prime.ncols();
    if n == 0 {
        return Err(Error::invalid("kappa_of", "matrix has no columns"));
    }
    guard(n)?;
    let floor = RANK_TOL * linalg::sigma_max(a_prime);
    let mut kappa = 0.0f64;
    for size in 1..=n {
        for j in Combinations::new(n, size) {
            let comp = linalg::complement(n, &j);
            let num = linalg::sigma_max(&linalg::select_columns(a_prime, &comp));
            if num == 0.0 {
                continue;
            }
            let den = linalg::sigma_min(&linalg::select_columns(a_prime, &j));
            if den <= floor {
                return Ok(f64::INFINITY);
            }
            kappa = kappa.max(num / den);
        }
    }
    Ok(kappa)
}

/// `N/2` when `K >= N/2`, else `sqrt(K (N - K))`.
pub fn c_of(n: usize, k: usize) -> Result<f64> {
    if n < 2 || k < 1 || k > n {
        return Err(Error::invalid(
            "c_of",
            format!("need N >= 2 and 1 <= K <= N, got N = {n}, K = {k}"),
        ));
    }
    let (nf, kf) = (n as f64, k as f64);
    Ok(if 2 * k >= n {
        nf / 2.0
    } else {
        (kf * (nf - kf)).sqrt()
    })
}

/// Largest window weight on each SR pixel.
pub fn gamma_of(g: &SpatialResponse) -> Result<Vec<f64>> {
    g.coverage()
        .iter()
        .enumerate()
        .map(|(j, ws)| {
            ws.iter()
                .map(|&(_, w)| w)
                .fold(None, |m: Option<f64>, w| Some(m.map_or(w, |m| m.max(w))))
                .ok_or_else(|| Error::Coverage(format!("SR pixel {j} is not covered")))
        })
        .collect()
}

/// Pass/fail of one assumption plus a short witness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Full column rank of the endmembers and full row rank of `S'`.
    pub full_rank: Check,
    /// Every column of `S'` has at most `K` nonzeros.
    pub sparsity: Check,
    /// `S'` contains an identity submatrix.
    pub pure_pixels: Check,
    /// Every endmember has a band below `1/N` and `eps < 1/(4N)`.
    pub dominance: Check,
    pub k: usize,
    pub worst_sparsity: usize,
    pub worst_sparsity_column: Option<usize>,
    /// HS pixel used as the pure pixel of each endmember, when found.
    pub pure_pixel_indices: Vec<Option<usize>>,
    #[serde(with = "real::scalar")]
    pub epsilon: f64,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.full_rank.pass && self.sparsity.pass && self.pure_pixels.pass && self.dominance.pass
    }
}

/// Tolerances used by [`check_assumptions`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rank: f64,
    pub support: f64,
    pub pure: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rank: RANK_TOL,
            support: SUPPORT_TOL,
            pure: PURE_TOL,
        }
    }
}

pub fn check_assumptions(
    a_bar: &EndmemberMatrix,
    s_bar: &AbundanceMatrix,
    f: &SpectralResponse,
    g: &SpatialResponse,
    tol: Tolerances,
) -> Result<AssumptionReport> {
    let a = a_bar.matrix();
    let n = a.ncols();
    let sp = model::decimate_abundances(s_bar, g)?;
    let sp = sp.matrix();
    let a_prime = model::spectral_decimate(f, a)?;
    let k = kruskal_rank(&a_prime, tol.rank)?;

    let rank_a = linalg::rank(a, tol.rank);
    let rank_sp = linalg::rank(sp, tol.rank);
    let full_rank = Check {
        pass: rank_a == n && rank_sp == n,
        detail: format!("rank(A) = {rank_a}, rank(S') = {rank_sp}, N = {n}"),
    };

    let mut worst = 0;
    let mut worst_col = None;
    for (i, col) in sp.column_iter().enumerate() {
        let nnz = col.iter().filter(|x| x.abs() > tol.support).count();
        if nnz > worst {
            worst = nnz;
            worst_col = Some(i);
        }
    }
    let sparsity = Check {
        pass: worst <= k,
        detail: match worst_col {
            Some(i) if worst > k => format!("column {i} of S' has {worst} nonzeros > K = {k}"),
            _ => format!("max ||s'_i||_0 = {worst} <= K = {k}"),
        },
    };

    let mut pure_idx = Vec::with_capacity(n);
    for t in 0..n {
        let best = sp
            .column_iter()
            .enumerate()
            .map(|(i, col)| {
                let dev = col
                    .iter()
                    .enumerate()
                    .map(|(r, &x)| (x - if r == t { 1.0 } else { 0.0 }).abs())
                    .fold(0.0, f64::max);
                (i, dev)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1));
        pure_idx.push(best.filter(|&(_, d)| d <= tol.pure).map(|(i, _)| i));
    }
    let missing: Vec<usize> = (0..n).filter(|&t| pure_idx[t].is_none()).collect();
    let pure_pixels = Check {
        pass: missing.is_empty(),
        detail: if missing.is_empty() {
            format!(
                "pure HS pixels {:?}",
                pure_idx.iter().flatten().collect::<Vec<_>>()
            )
        } else {
            format!("no pure HS pixel for endmembers {missing:?}")
        },
    };

    let (epsilon, dominance) = if n < 2 {
        (
            0.0,
            Check {
                pass: true,
                detail: "single endmember".into(),
            },
        )
    } else {
        let eps = epsilon_of(a_bar)?;
        let limit = 1.0 / (4.0 * n as f64);
        let detail = if eps.is_infinite() {
            "some endmember has no band below 1/N".to_string()
        } else {
            format!("eps = {eps:.6}, limit 1/(4N) = {limit:.6}")
        };
        (
            eps,
            Check {
                pass: eps < limit,
                detail,
            },
        )
    };

    Ok(AssumptionReport {
        full_rank,
        sparsity,
        pure_pixels,
        dominance,
        k,
        worst_sparsity: worst,
        worst_sparsity_column: worst_col,
        pure_pixel_indices: pure_idx,
        epsilon,
    })
}

/// Every factor of the per-pixel recovery bound for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub k: usize,
    #[serde(with = "real::scalar")]
    pub epsilon: f64,
    #[serde(with = "real::scalar")]
    pub kappa: f64,
    pub c: f64,
    pub gamma: Vec<f64>,
    pub sigma_max_a: f64,
    #[serde(with = "real::vector")]
    pub per_pixel_bound: Vec<f64>,
    pub assumptions: AssumptionReport,
}

impl Certificate {
    pub fn max_bound(&self) -> f64 {
        self.per_pixel_bound.iter().copied().fold(0.0, f64::max)
    }
}

/// Per-pixel bound from its factors.
pub fn pixel_bound(epsilon: f64, sigma_max_a: f64, kappa: f64, c: f64, gamma: f64) -> f64 {
    if epsilon == 0.0 {
        return 0.0;
    }
    epsilon * sigma_max_a * (1.0 + kappa * kappa).sqrt() * (4.0 + 2.0 / gamma) * c
}

pub fn certify(
    a_bar: &EndmemberMatrix,
    s_bar: &AbundanceMatrix,
    f: &SpectralResponse,
    g: &SpatialResponse,
) -> Result<Certificate> {
    let n = a_bar.count();
    if n < 2 {
        return Err(Error::invalid("certify", "needs at least two endmembers"));
    }
    let assumptions = check_assumptions(a_bar, s_bar, f, g, Tolerances::default())?;
    let a_prime = model::spectral_decimate(f, a_bar.matrix())?;
    let k = assumptions.k;
    let epsilon = epsilon_of(a_bar)?;
    let kappa = kappa_of(&a_prime)?;
    // K = 0 only for an all-zero A'; C is then taken at K = 1.
    let c = c_of(n, k.max(1))?;
    let gamma = gamma_of(g)?;
    let sigma_max_a = linalg::sigma_max(a_bar.matrix());
    let per_pixel_bound = gamma
        .iter()
        .map(|&gj| pixel_bound(epsilon, sigma_max_a, kappa, c, gj))
        .collect();
    Ok(Certificate {
        k,
        epsilon,
        kappa,
        c,
        gamma,
        sigma_max_a,
        per_pixel_bound,
        assumptions,
    })
}

/// `1 - N(N-1) exp(-M / (8 N^2))`, unclamped.
pub fn lemma1_probability_raw(n: usize, m: usize) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    1.0 - nf * (nf - 1.0) * (-mf / (8.0 * nf * nf)).exp()
}

/// The analytic dominance probability bound clamped into `[0, 1]`.
pub fn lemma1_probability(n: usize, m: usize) -> f64 {
    lemma1_probability_raw(n, m).clamp(0.0, 1.0)
}

/// Whether an `M x N` matrix satisfies the dominance assumption.
pub fn dominance_holds(a: &DMatrix<f64>) -> bool {
    let n = a.ncols();
    if n < 2 {
        let inv = 1.0 / n.max(1) as f64;
        return (0..n).all(|i| a.column(i).iter().any(|&x| x < inv));
    }
    match EndmemberMatrix::new(a.clone()).and_then(|a| epsilon_of(&a)) {
        Ok(eps) => eps < 1.0 / (4.0 * n as f64),
        Err(_) => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub n: usize,
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
    pub analytic: f64,
    pub analytic_raw: f64,
    pub successes: usize,
    pub empirical: f64,
    /// Binomial standard deviation of the empirical rate at the analytic rate.
    pub sigma: f64,
    /// `empirical >= analytic - 3 sigma`.
    pub pass: bool,
}

/// Fraction of i.i.d. uniform `M x N` draws satisfying the dominance assumption.
pub fn lemma1_monte_carlo(n: usize, m: usize, trials: usize, seed: u64) -> Result<Lemma1Report> {
    if n == 0 || m == 0 || trials == 0 {
        return Err(Error::invalid("lemma1", "N, M and trials must be >= 1"));
    }
    let mut rng = crate::seed::rng(seed);
    let mut successes = 0;
    for _ in 0..trials {
        let a = DMatrix::from_fn(m, n, |_, _| rng.random::<f64>());
        if dominance_holds(&a) {
            successes += 1;
        }
    }
    let analytic = lemma1_probability(n, m);
    let empirical = successes as f64 / trials as f64;
    let sigma = (analytic * (1.0 - analytic) / trials as f64).sqrt();
    Ok(Lemma1Report {
        n,
        m,
        trials,
        seed,
        analytic,
        analytic_raw: lemma1_probability_raw(n, m),
        successes,
        empirical,
        sigma,
        pass: empirical >= analytic - 3.0 * sigma,
    })
}

/// `min_i min(c_i, d_i)` for a strictly column- and row-diagonally-dominant
/// square matrix, where `c_i` and `d_i` are the diagonal magnitude minus the
/// off-diagonal column and row sums. `None` when some margin is not positive.
pub fn varah_lower_bound(b: &DMatrix<f64>) -> Result<Option<f64>> {
    if !b.is_square() {
        return Err(Error::invalid(
            "varah_lower_bound",
            format!("matrix is {}x{}, not square", b.nrows(), b.ncols()),
        ));
    }
    let n = b.nrows();
    let mut bound = f64::INFINITY;
    for i in 0..n {
        let diag = b[(i, i)].abs();
        let col_off: f64 = (0..n).filter(|&k| k != i).map(|k| b[(k, i)].abs()).sum();
        let row_off: f64 = (0..n).filter(|&k| k != i).map(|k| b[(i, k)].abs()).sum();
        let (c, d) = (diag - col_off, diag - row_off);
        if !(c > 0.0 && d > 0.0) {
            return Ok(None);
        }
        bound = bound.min(c.min(d));
    }
    Ok(if n == 0 { None } else { Some(bound) })
}

/// How the row permutation of `R` was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationMethod {
    PartialPivoting,
    Hungarian,
}

/// `R` relating a fit to the ground truth (`A = A_bar R^{-1}`, `S' = R S_bar'`)
/// and its diagonal-dominance diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub r: Vec<Vec<f64>>,
    pub r_inv: Vec<Vec<f64>>,
    /// Row `i` of `R~` is row `permutation[i]` of `R`.
    pub permutation: Vec<usize>,
    pub method: PermutationMethod,
    pub r_tilde: Vec<Vec<f64>>,
    pub rho: f64,
    #[serde(with = "real::scalar")]
    pub beta: f64,
    pub sigma_min_r_tilde: f64,
    #[serde(with = "real::scalar")]
    pub epsilon: f64,
    pub k: usize,
    /// Largest distance of `R` from the column-simplex set (0 when inside).
    pub fact1_margin: f64,
    pub fact1_pass: bool,
    /// `epsilon - max off-diagonal of R~`; nonnegative when the condition holds.
    #[serde(with = "real::scalar")]
    pub prop2_margin: f64,
    pub prop2_pass: bool,
    /// `max |S' - R S_bar'|`, the consistency of the fitted HS abundances.
    pub s_prime_residual: f64,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_of(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

impl AlignmentReport {
    pub fn r_matrix(&self) -> DMatrix<f64> {
        matrix_of(&self.r)
    }

    pub fn r_inv_matrix(&self) -> DMatrix<f64> {
        matrix_of(&self.r_inv)
    }

    pub fn r_tilde_matrix(&self) -> DMatrix<f64> {
        matrix_of(&self.r_tilde)
    }
}

/// Row order from partial pivoting: position `i` takes the remaining row with
/// the largest entry in column `i` (lowest index on ties).
pub fn partial_pivoting_order(r: &DMatrix<f64>) -> Vec<usize> {
    let n = r.nrows();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(n);
    for col in 0..n {
        let (pos, _) =
            remaining
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (pos, &row)| {
                    if r[(row, col)] > best.1 {
                        (pos, r[(row, col)])
                    } else {
                        best
                    }
                });
        order.push(remaining.remove(pos));
    }
    order
}

/// Row order maximizing the trace of the permuted matrix (Hungarian method).
pub fn max_diagonal_order(r: &DMatrix<f64>) -> Vec<usize> {
    let n = r.nrows();
    if n == 0 {
        return Vec::new();
    }
    // Minimize cost[pos][row] = -r[row, pos]; 1-based potentials formulation.
    let cost = |pos: usize, row: usize| -r[(row, pos)];
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut order = vec![0; n];
    for j in 1..=n {
        order[p[j] - 1] = j - 1;
    }
    order
}

fn permute_rows(r: &DMatrix<f64>, order: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(r.nrows(), r.ncols(), |i, j| r[(order[i], j)])
}

fn max_off_diagonal(m: &DMatrix<f64>) -> f64 {
    let mut out = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j {
                out = out.max(m[(i, j)].abs());
            }
        }
    }
    out
}

/// Distance of a square matrix from the column-simplex set: the worst of
/// negative entries, entries above one, and column-sum deviations.
pub fn column_simplex_violation(r: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for col in r.column_iter() {
        for &x in col.iter() {
            worst = worst.max(-x).max(x - 1.0);
        }
        worst = worst.max((col.sum() - 1.0).abs());
    }
    worst
}

/// `min sigma_min(R~[I, I])` over index sets with `N - K <= |I| <= N - 1`
/// (and `|I| >= 1`). `+inf` when the range is empty.
pub fn beta_of(r_tilde: &DMatrix<f64>, k: usize) -> Result<f64> {
    let n = r_tilde.nrows();
    guard(n)?;
    let lo = n.saturating_sub(k).max(1);
    let mut beta = f64::INFINITY;
    for size in lo..n {
        for set in Combinations::new(n, size) {
            let sub = linalg::submatrix(r_tilde, &set, &set);
            beta = beta.min(linalg::sigma_min(&sub));
        }
    }
    Ok(beta)
}

/// Recovers `R` from a fit and finds a row permutation making it nearly diagonal.
pub fn extract_alignment(
    a_bar: &EndmemberMatrix,
    a: &EndmemberMatrix,
    s_prime_bar: &DMatrix<f64>,
    s_prime: &DMatrix<f64>,
    k: usize,
) -> Result<AlignmentReport> {
    let ab = a_bar.matrix();
    let n = ab.ncols();
    if a.bands() != a_bar.bands() || a.count() != n {
        return Err(Error::dims(
            "extract_alignment",
            format!(
                "A_bar is {}x{}, A is {}x{}",
                a_bar.bands(),
                n,
                a.bands(),
                a.count()
            ),
        ));
    }
    if s_prime_bar.shape() != s_prime.shape() || s_prime.nrows() != n {
        return Err(Error::dims(
            "extract_alignment",
            "S_bar' and S' must both be N x L_h",
        ));
    }
    if linalg::rank(ab, RANK_TOL) < n {
        return Err(Error::Singular("A_bar lacks full column rank".into()));
    }
    let r_inv = linalg::pinv(ab, RANK_TOL)? * a.matrix();
    let top = linalg::sigma_max(&r_inv);
    if linalg::sigma_min(&r_inv) <= RANK_TOL * top {
        return Err(Error::Singular("R^{-1} = pinv(A_bar) A".into()));
    }
    let r = r_inv
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("R^{-1} = pinv(A_bar) A".into()))?;
    let epsilon = if n >= 2 { epsilon_of(a_bar)? } else { 0.0 };

    let pivot = partial_pivoting_order(&r);
    let mut order = pivot.clone();
    let mut method = PermutationMethod::PartialPivoting;
    let mut r_tilde = permute_rows(&r, &order);
    if max_off_diagonal(&r_tilde) > epsilon {
        let hung = max_diagonal_order(&r);
        let alt = permute_rows(&r, &hung);
        if max_off_diagonal(&alt) < max_off_diagonal(&r_tilde) {
            order = hung;
            r_tilde = alt;
            method = PermutationMethod::Hungarian;
        }
    }
    let rho = max_off_diagonal(&r_tilde);
    let beta = beta_of(&r_tilde, k)?;
    let sigma_min_r_tilde = linalg::sigma_min(&r_tilde);
    let fact1_margin = column_simplex_violation(&r);
    let residual = (s_prime - &r * s_prime_bar).abs().max();

    Ok(AlignmentReport {
        r: rows_of(&r),
        r_inv: rows_of(&r_inv),
        permutation: order,
        method,
        r_tilde: rows_of(&r_tilde),
        rho,
        beta,
        sigma_min_r_tilde,
        epsilon,
        k,
        fact1_margin,
        fact1_pass: fact1_margin <= 1e-6,
        prop2_margin: epsilon - rho,
        prop2_pass: rho <= epsilon,
        s_prime_residual: residual,
    })
}

/// Both sides of the per-pixel abundance inequality and of the final chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelCheck {
    pub pixel: usize,
    pub lhs: f64,
    #[serde(with = "real::scalar")]
    pub rhs: f64,
    pub pass: bool,
    pub image_error: f64,
    pub chain_bound: f64,
    pub chain_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposition1Report {
    /// False when `beta <= 0`; the per-pixel checks are then empty.
    pub applicable: bool,
    pub reason: Option<String>,
    pub pixels: Vec<PixelCheck>,
    pub all_pass: bool,
    /// Smallest `rhs - lhs` over pixels.
    #[serde(with = "real::scalar")]
    pub min_slack: f64,
}

/// Tolerance added to the right-hand sides.
pub const PROP1_SLACK: f64 = 1e-9;

/// Evaluates `||s_j - R^{-1} s_hat_j|| <= sqrt(1+kappa^2) (rho C / beta) (1/sigma_min(R~) + 1/gamma_j)`
/// and `||A s_j - A_hat s_hat_j|| <= sigma_max(A) ||s_j - R^{-1} s_hat_j||` at every pixel.
pub fn verify_proposition1(
    scene: &Scene,
    a: &EndmemberMatrix,
    s: &AbundanceMatrix,
    alignment: &AlignmentReport,
    certificate: &Certificate,
) -> Result<Proposition1Report> {
    let n = scene.endmembers.count();
    if n < 2 {
        return Err(Error::invalid("verify_proposition1", "needs N >= 2"));
    }
    if s.pixels() != scene.abundances.pixels() || certificate.gamma.len() != s.pixels() {
        return Err(Error::dims(
            "verify_proposition1",
            "solution, scene and certificate disagree on the pixel count",
        ));
    }
    if !(alignment.beta > 0.0) {
        return Ok(Proposition1Report {
            applicable: false,
            reason: Some(format!(
                "hypothesis violated: beta = {} is not positive",
                alignment.beta
            )),
            pixels: Vec::new(),
            all_pass: false,
            min_slack: f64::NAN,
        });
    }
    let r_inv = alignment.r_inv_matrix();
    let factor =
        (1.0 + certificate.kappa.powi(2)).sqrt() * alignment.rho * certificate.c / alignment.beta;
    let ab = scene.endmembers.matrix();
    let mut pixels = Vec::with_capacity(s.pixels());
    let mut min_slack = f64::INFINITY;
    for j in 0..s.pixels() {
        let s_true: DVector<f64> = scene.abundances.matrix().column(j).into_owned();
        let s_fit: DVector<f64> = s.matrix().column(j).into_owned();
        let lhs = (&s_true - &r_inv * &s_fit).norm();
        let rhs = if factor == 0.0 {
            0.0
        } else {
            factor * (1.0 / alignment.sigma_min_r_tilde + 1.0 / certificate.gamma[j])
        };
        let image_error = (ab * &s_true - a.matrix() * &s_fit).norm();
        let chain_bound = certificate.sigma_max_a * lhs;
        min_slack = min_slack.min(rhs - lhs);
        pixels.push(PixelCheck {
            pixel: j,
            lhs,
            rhs,
            pass: lhs <= rhs + PROP1_SLACK,
            image_error,
            chain_bound,
            chain_pass: image_error <= chain_bound + PROP1_SLACK,
        });
    }
    let all_pass = pixels.iter().all(|p| p.pass && p.chain_pass);
    Ok(Proposition1Report {
        applicable: true,
        reason: None,
        pixels,
        all_pass,
        min_slack,
    })
}

/// Every column of `r` lies in the unit simplex within `SIMPLEX_TOL`.
pub fn in_column_simplex(r: &DMatrix<f64>) -> bool {
    column_simplex_violation(r) <= SIMPLEX_TOL
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counterexample::build_counterexample;
    use approx::assert_relative_eq;

    fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn krank_examples() {
        assert_eq!(kruskal_rank(&DMatrix::identity(3, 3), RANK_TOL).unwrap(), 3);
        assert_eq!(
            kruskal_rank(&m(2, 3, &[1., 0., 1., 0., 1., 1.]), RANK_TOL).unwrap(),
            2
        );
        assert_eq!(kruskal_rank(&m(1, 3, &[1., 1., 1.]), RANK_TOL).unwrap(), 1);
        // two parallel columns
        assert_eq!(
            kruskal_rank(&m(3, 3, &[1., 2., 0., 1., 2., 0., 0., 0., 1.]), RANK_TOL).unwrap(),
            1
        );
        assert!(matches!(
            kruskal_rank(&DMatrix::identity(2, 21), RANK_TOL),
            Err(Error::GuardExceeded { .. })
        ));
    }

    #[test]
    fn krank_brute_force_pairs() {
        // oracle: a pair is dependent iff the 2x2 determinant vanishes
        let a = m(2, 4, &[1., 0., 2., 1., 0., 1., 0., 1.]);
        let mut any_dep = false;
        for i in 0..4 {
            for j in i + 1..4 {
                let det = a[(0, i)] * a[(1, j)] - a[(0, j)] * a[(1, i)];
                any_dep |= det.abs() < 1e-12;
            }
        }
        assert!(any_dep); // columns 0 and 2 are parallel
        assert_eq!(kruskal_rank(&a, RANK_TOL).unwrap(), 1);
    }

    #[test]
    fn epsilon_examples() {
        let id = EndmemberMatrix::new(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(epsilon_of(&id).unwrap(), 0.0);
        let a = EndmemberMatrix::new(m(2, 2, &[0.95, 0.05, 0.05, 0.95])).unwrap();
        assert_relative_eq!(epsilon_of(&a).unwrap(), 0.05 / 0.9, epsilon = 1e-15);
        let ce = build_counterexample(0.1).unwrap();
        assert_relative_eq!(epsilon_of(&ce.a_bar).unwrap(), 0.1 / 0.7, epsilon = 1e-15);
        let dense = EndmemberMatrix::new(DMatrix::from_element(3, 2, 0.9)).unwrap();
        assert_eq!(epsilon_of(&dense).unwrap(), f64::INFINITY);
    }

    #[test]
    fn epsilon_permutation_invariant() {
        let mut rng = crate::seed::rng(4);
        let a = DMatrix::from_fn(8, 4, |_, _| rng.random::<f64>() * 0.6);
        let perm = [2, 0, 3, 1];
        let ap = linalg::select_columns(&a, &perm);
        let e1 = epsilon_of(&EndmemberMatrix::new(a).unwrap()).unwrap();
        let e2 = epsilon_of(&EndmemberMatrix::new(ap).unwrap()).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn kappa_examples() {
        assert_relative_eq!(
            kappa_of(&DMatrix::identity(2, 2)).unwrap(),
            1.0,
            epsilon = 1e-14
        );
        assert_relative_eq!(
            kappa_of(&m(2, 2, &[2., 0., 0., 1.])).unwrap(),
            2.0,
            epsilon = 1e-14
        );
        assert_relative_eq!(
            kappa_of(&m(1, 3, &[1., 1., 1.])).unwrap(),
            2f64.sqrt(),
            epsilon = 1e-14
        );
        assert_eq!(
            kappa_of(&m(2, 2, &[1., 0., 0., 0.])).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn c_examples() {
        assert_eq!(c_of(30, 15).unwrap(), 15.0);
        assert_relative_eq!(c_of(4, 1).unwrap(), 3f64.sqrt(), epsilon = 1e-15);
        assert_eq!(c_of(2, 1).unwrap(), 1.0);
        assert!(c_of(1, 1).is_err());
        assert!(c_of(4, 5).is_err());
    }

    #[test]
    fn c_dominates_subset_term() {
        for n in 2..=12usize {
            for k in 1..=n {
                let worst = (1..=k)
                    .map(|j| ((j * (n - j)) as f64).sqrt())
                    .fold(0.0, f64::max);
                assert!(worst <= c_of(n, k).unwrap() + 1e-12, "N={n} K={k}");
            }
        }
    }

    #[test]
    fn gamma_examples() {
        let ce = build_counterexample(0.2).unwrap();
        assert!(gamma_of(&ce.g).unwrap().iter().all(|&g| g == 0.5));
        assert!(gamma_of(&SpatialResponse::identity(4))
            .unwrap()
            .iter()
            .all(|&g| g == 1.0));
        let g = SpatialResponse::new(
            2,
            vec![
                model::Window {
                    pixels: vec![0, 1],
                    weights: vec![0.7, 0.3],
                },
                model::Window {
                    pixels: vec![1, 0],
                    weights: vec![0.6, 0.4],
                },
            ],
        )
        .unwrap();
        assert_eq!(gamma_of(&g).unwrap(), vec![0.7, 0.6]);
        let gap = SpatialResponse::from_parts_unchecked(
            2,
            vec![model::Window {
                pixels: vec![0],
                weights: vec![1.0],
            }],
        );
        assert!(matches!(gamma_of(&gap), Err(Error::Coverage(_))));
    }

    #[test]
    fn certificate_of_counterexample() {
        let ce = build_counterexample(0.1).unwrap();
        let cert = certify(&ce.a_bar, &ce.s_bar, &ce.f, &ce.g).unwrap();
        assert_eq!(cert.k, 1);
        assert_relative_eq!(cert.epsilon, 1.0 / 7.0, epsilon = 1e-15);
        assert_relative_eq!(cert.kappa, 2f64.sqrt(), epsilon = 1e-13);
        assert_relative_eq!(cert.c, 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(cert.sigma_max_a, 1.0, epsilon = 1e-13);
        let expected = (1.0 / 7.0) * 3f64.sqrt() * 8.0 * 2f64.sqrt();
        assert_relative_eq!(expected, 2.7994, epsilon = 1e-4);
        for &b in &cert.per_pixel_bound {
            assert_relative_eq!(b, expected, max_relative = 1e-12);
        }
        let rep = &cert.assumptions;
        assert!(rep.full_rank.pass && rep.sparsity.pass && rep.pure_pixels.pass);
        assert!(!rep.dominance.pass); // 1/7 > 1/12
    }

    #[test]
    fn zero_epsilon_gives_zero_bound() {
        let ce = build_counterexample(0.0).unwrap();
        let cert = certify(&ce.a_bar, &ce.s_bar, &ce.f, &ce.g).unwrap();
        assert_eq!(cert.epsilon, 0.0);
        assert!(cert.per_pixel_bound.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn dense_column_breaks_sparsity() {
        let ce = build_counterexample(0.1).unwrap();
        let mut s = ce.s_bar.matrix().clone();
        for r in 0..3 {
            s[(r, 2)] = 1.0 / 3.0;
        }
        let s = AbundanceMatrix::new(s).unwrap();
        let rep = check_assumptions(&ce.a_bar, &s, &ce.f, &ce.g, Tolerances::default()).unwrap();
        assert!(!rep.sparsity.pass);
        assert_eq!(rep.worst_sparsity_column, Some(1));
        assert!(rep.sparsity.detail.contains("column 1"));
    }

    #[test]
    fn lemma1_analytic() {
        assert_eq!(lemma1_probability(1, 10), 1.0);
        assert_relative_eq!(
            lemma1_probability(2, 64),
            1.0 - 2.0 * (-2.0f64).exp(),
            epsilon = 1e-15
        );
        assert_relative_eq!(lemma1_probability(2, 64), 0.72933, epsilon = 1e-5);
        assert!(lemma1_probability_raw(6, 50) < 0.0);
        assert_eq!(lemma1_probability(6, 50), 0.0);
    }

    #[test]
    fn lemma1_single_endmember_always_succeeds() {
        let r = lemma1_monte_carlo(1, 5, 200, 1).unwrap();
        assert_eq!(r.successes, 200);
    }

    #[test]
    fn varah_examples() {
        assert_eq!(
            varah_lower_bound(&DMatrix::identity(3, 3)).unwrap(),
            Some(1.0)
        );
        let b = m(2, 2, &[1.0, 0.1, 0.1, 1.0]);
        let bound = varah_lower_bound(&b).unwrap().unwrap();
        assert_relative_eq!(bound, 0.9, epsilon = 1e-15);
        assert_relative_eq!(linalg::sigma_min(&b), 0.9, epsilon = 1e-14);
        assert_eq!(
            varah_lower_bound(&m(2, 2, &[1., 2., 0., 1.])).unwrap(),
            None
        );
        assert!(varah_lower_bound(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn varah_is_a_lower_bound() {
        let mut rng = crate::seed::rng(21);
        for _ in 0..200 {
            let n = rng.random_range(1..6);
            let mut b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.2..0.2));
            for i in 0..n {
                b[(i, i)] = rng.random_range(1.0..2.0) * if rng.random() { 1.0 } else { -1.0 };
            }
            if let Some(lb) = varah_lower_bound(&b).unwrap() {
                assert!(linalg::sigma_min(&b) >= lb - 1e-12);
            }
        }
    }

    #[test]
    fn pivoting_and_hungarian_agree_on_permuted_identity() {
        let order = [2usize, 0, 1];
        let r = DMatrix::from_fn(3, 3, |i, j| if order[j] == i { 1.0 } else { 0.0 });
        let p = partial_pivoting_order(&r);
        let h = max_diagonal_order(&r);
        assert_eq!(p, h);
        assert_eq!(permute_rows(&r, &p), DMatrix::identity(3, 3));
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = crate::seed::rng(8);
        for _ in 0..50 {
            let n = rng.random_range(1..6);
            let r = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>());
            let h = max_diagonal_order(&r);
            let trace = |ord: &[usize]| (0..n).map(|i| r[(ord[i], i)]).sum::<f64>();
            let mut best = f64::NEG_INFINITY;
            permutations(n, &mut |ord| best = best.max(trace(ord)));
            assert_relative_eq!(trace(&h), best, epsilon = 1e-12);
        }
    }

    fn permutations(n: usize, f: &mut dyn FnMut(&[usize])) {
        fn rec(cur: &mut Vec<usize>, used: &mut Vec<bool>, n: usize, f: &mut dyn FnMut(&[usize])) {
            if cur.len() == n {
                f(cur);
                return;
            }
            for i in 0..n {
                if !used[i] {
                    used[i] = true;
                    cur.push(i);
                    rec(cur, used, n, f);
                    cur.pop();
                    used[i] = false;
                }
            }
        }
        rec(&mut Vec::new(), &mut vec![false; n], n, f);
    }

    #[test]
    fn alignment_of_ground_truth_and_permutation() {
        let mut rng = crate::seed::rng(31);
        let a = DMatrix::from_fn(6, 3, |_, _| rng.random::<f64>());
        let ab = EndmemberMatrix::new(a.clone()).unwrap();
        let sp = DMatrix::from_fn(3, 5, |_, _| 1.0 / 3.0);
        let rep = extract_alignment(&ab, &ab, &sp, &sp, 2).unwrap();
        assert!((rep.r_matrix() - DMatrix::identity(3, 3)).abs().max() < 1e-12);
        assert!(rep.rho < 1e-12);
        assert_eq!(rep.permutation, vec![0, 1, 2]);

        // A = A_bar Pi^T
        let perm = [1usize, 2, 0];
        let ap = EndmemberMatrix::new(linalg::select_columns(&a, &perm)).unwrap();
        let rep = extract_alignment(&ab, &ap, &sp, &sp, 2).unwrap();
        assert!((rep.r_tilde_matrix() - DMatrix::identity(3, 3)).abs().max() < 1e-12);
        assert!(rep.rho < 1e-12);
        assert!(rep.fact1_pass);
    }

    #[test]
    fn beta_ranges() {
        let r = DMatrix::identity(4, 4);
        assert_eq!(beta_of(&r, 4).unwrap(), 1.0);
        assert_eq!(beta_of(&r, 1).unwrap(), 1.0);
        let r = m(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        assert_relative_eq!(beta_of(&r, 1).unwrap(), 0.9, epsilon = 1e-15);
    }
}
