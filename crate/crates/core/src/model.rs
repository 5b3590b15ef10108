//! Domain types of the linear mixture model and the two forward observation
//! operators.
//!
//! The super-resolution image `X = A S` is observed twice: spectrally
//! aggregated by the multispectral sensor (`Y_M = F X`) and spatially blurred
//! and downsampled by the hyperspectral sensor (`Y_H = X G`). `G` is stored as
//! one weighted window of SR pixels per HS pixel rather than as a dense
//! `L x L_h` matrix.

use crate::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Absolute tolerance on simplex column sums and nonnegativity.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// `M x N` endmember signatures with every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix(DMatrix<f64>);

impl EndmemberMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::invalid("endmember matrix", "empty"));
        }
        if let Some((i, x)) = entries
            .iter()
            .enumerate()
            .find(|(_, x)| !(0.0..=1.0).contains(*x))
        {
            let (r, c) = (i % entries.nrows(), i / entries.nrows());
            return Err(Error::invalid(
                "endmember matrix",
                format!("entry ({r}, {c}) = {x} outside [0, 1]"),
            ));
        }
        Ok(EndmemberMatrix(entries))
    }

    /// Clamps every entry into `[0, 1]`. NaN becomes 0.
    pub fn clamped(mut entries: DMatrix<f64>) -> Result<Self> {
        entries.apply(|x| *x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) });
        Self::new(entries)
    }

    pub fn bands(&self) -> usize {
        self.0.nrows()
    }

    pub fn count(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// `N x L` abundances; each column lies in the unit simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMatrix(DMatrix<f64>);

impl AbundanceMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 {
            return Err(Error::invalid("abundance matrix", "no endmember rows"));
        }
        for (c, col) in entries.column_iter().enumerate() {
            if let Some((r, x)) = col.iter().enumerate().find(|(_, x)| !(**x >= -SIMPLEX_TOL)) {
                return Err(Error::invalid(
                    "abundance matrix",
                    format!("entry ({r}, {c}) = {x} is negative"),
                ));
            }
            let sum = col.sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::invalid(
                    "abundance matrix",
                    format!("column {c} sums to {sum}"),
                ));
            }
        }
        Ok(AbundanceMatrix(entries))
    }

    pub fn endmembers(&self) -> usize {
        self.0.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// `M_m x M` nonnegative band-aggregation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResponse(DMatrix<f64>);

impl SpectralResponse {
    /// Checks nonnegativity and that each row has a positive weight. The
    /// `M_m < M` requirement is reported by [`validate_model`] instead so that
    /// the identity response stays constructible.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::invalid("spectral response", "empty"));
        }
        for (r, row) in entries.row_iter().enumerate() {
            if row.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::invalid(
                    "spectral response",
                    format!("row {r} has a negative or non-finite weight"),
                ));
            }
            if !row.iter().any(|x| *x > 0.0) {
                return Err(Error::invalid(
                    "spectral response",
                    format!("row {r} has no positive weight"),
                ));
            }
        }
        Ok(SpectralResponse(entries))
    }

    pub fn ms_bands(&self) -> usize {
        self.0.nrows()
    }

    pub fn sr_bands(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// One HS pixel's footprint: SR pixel indices (0-based) and their weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub pixels: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Spatial blur-and-downsample response as explicit windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialResponse {
    #[serde(rename = "L")]
    sr_pixels: usize,
    #[serde(rename = "Lh")]
    hs_pixels: usize,
    windows: Vec<Window>,
}

impl SpatialResponse {
    /// Validated constructor: positive weights summing to one, indices in
    /// range, and every SR pixel covered by at least one window.
    pub fn new(sr_pixels: usize, windows: Vec<Window>) -> Result<Self> {
        let g = Self::from_parts_unchecked(sr_pixels, windows);
        let structural: Vec<Violation> = g
            .violations()
            .into_iter()
            .filter(|v| !matches!(v, Violation::SpatialNotDecimating { .. }))
            .collect();
        match structural.first() {
            None => Ok(g),
            Some(v) => Err(Error::invalid("spatial response", v.to_string())),
        }
    }

    /// No validation. Meant for constructing deliberately broken responses
    /// to feed [`validate_model`].
    pub fn from_parts_unchecked(sr_pixels: usize, windows: Vec<Window>) -> Self {
        SpatialResponse {
            sr_pixels,
            hs_pixels: windows.len(),
            windows,
        }
    }

    /// `L_i = {i}` with unit weight.
    pub fn identity(pixels: usize) -> Self {
        let windows = (0..pixels)
            .map(|i| Window {
                pixels: vec![i],
                weights: vec![1.0],
            })
            .collect();
        Self::from_parts_unchecked(pixels, windows)
    }

    pub fn sr_pixels(&self) -> usize {
        self.sr_pixels
    }

    pub fn hs_pixels(&self) -> usize {
        self.hs_pixels
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    /// Every structural problem with the windows, including `L_h >= L`.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.hs_pixels != self.windows.len() {
            out.push(Violation::Dimension {
                detail: format!(
                    "Lh = {} but {} windows listed",
                    self.hs_pixels,
                    self.windows.len()
                ),
            });
        }
        let mut covered = vec![false; self.sr_pixels];
        for (i, w) in self.windows.iter().enumerate() {
            if w.pixels.is_empty() || w.pixels.len() != w.weights.len() {
                out.push(Violation::WindowShape {
                    window: i,
                    pixels: w.pixels.len(),
                    weights: w.weights.len(),
                });
                continue;
            }
            let mut seen = std::collections::HashSet::new();
            for &p in &w.pixels {
                if p >= self.sr_pixels {
                    out.push(Violation::WindowPixelOutOfRange {
                        window: i,
                        pixel: p,
                    });
                } else {
                    covered[p] = true;
                }
                if !seen.insert(p) {
                    out.push(Violation::WindowDuplicatePixel {
                        window: i,
                        pixel: p,
                    });
                }
            }
            for (pos, &g) in w.weights.iter().enumerate() {
                if !(g > 0.0) {
                    out.push(Violation::WindowWeightNonPositive {
                        window: i,
                        position: pos,
                        value: g,
                    });
                }
            }
            let sum: f64 = w.weights.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                out.push(Violation::WindowWeightSum { window: i, sum });
            }
        }
        for (p, c) in covered.iter().enumerate() {
            if !c {
                out.push(Violation::Uncovered { pixel: p });
            }
        }
        if self.hs_pixels >= self.sr_pixels {
            out.push(Violation::SpatialNotDecimating {
                hs_pixels: self.hs_pixels,
                sr_pixels: self.sr_pixels,
            });
        }
        out
    }

    /// `X G`: column `i` is the weighted sum of the columns of `x` in window `i`.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        debug_assert_eq!(x.ncols(), self.sr_pixels);
        let m = x.nrows();
        let src = x.as_slice();
        let mut out = DMatrix::zeros(m, self.hs_pixels);
        {
            let dst = out.as_mut_slice();
            for (i, w) in self.windows.iter().enumerate() {
                let acc = &mut dst[i * m..(i + 1) * m];
                for (&p, &g) in w.pixels.iter().zip(&w.weights) {
                    let col = &src[p * m..(p + 1) * m];
                    for (a, v) in acc.iter_mut().zip(col) {
                        *a += g * v;
                    }
                }
            }
        }
        out
    }

    /// `Y G^T`: scatters each HS column back onto its window.
    pub fn apply_transpose(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        debug_assert_eq!(y.ncols(), self.hs_pixels);
        let m = y.nrows();
        let src = y.as_slice();
        let mut out = DMatrix::zeros(m, self.sr_pixels);
        {
            let dst = out.as_mut_slice();
            for (i, w) in self.windows.iter().enumerate() {
                let col = &src[i * m..(i + 1) * m];
                for (&p, &g) in w.pixels.iter().zip(&w.weights) {
                    let acc = &mut dst[p * m..(p + 1) * m];
                    for (a, v) in acc.iter_mut().zip(col) {
                        *a += g * v;
                    }
                }
            }
        }
        out
    }

    /// Dense `L x L_h` matrix with `g_ji` at `(j, i)`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.sr_pixels, self.hs_pixels);
        for (i, w) in self.windows.iter().enumerate() {
            for (&p, &v) in w.pixels.iter().zip(&w.weights) {
                g[(p, i)] += v;
            }
        }
        g
    }

    /// `G^T G` as a dense `L_h x L_h` matrix.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut weight_of: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.sr_pixels];
        for (i, w) in self.windows.iter().enumerate() {
            for (&p, &v) in w.pixels.iter().zip(&w.weights) {
                weight_of[p].push((i, v));
            }
        }
        let mut out = DMatrix::zeros(self.hs_pixels, self.hs_pixels);
        for entries in &weight_of {
            for &(a, va) in entries {
                for &(b, vb) in entries {
                    out[(a, b)] += va * vb;
                }
            }
        }
        out
    }

    /// For every SR pixel, the windows covering it with the corresponding weight.
    pub fn coverage(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.sr_pixels];
        for (i, w) in self.windows.iter().enumerate() {
            for (&p, &v) in w.pixels.iter().zip(&w.weights) {
                if p < self.sr_pixels {
                    out[p].push((i, v));
                }
            }
        }
        out
    }

    /// True when no SR pixel belongs to more than one window.
    pub fn is_partition(&self) -> bool {
        self.coverage().iter().all(|c| c.len() <= 1)
    }
}

/// Ground truth: endmembers, abundances and the SR image they generate.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub endmembers: EndmemberMatrix,
    pub abundances: AbundanceMatrix,
    pub image: DMatrix<f64>,
}

impl Scene {
    pub fn new(endmembers: EndmemberMatrix, abundances: AbundanceMatrix) -> Result<Self> {
        let image = reconstruct(&endmembers, &abundances)?;
        Ok(Scene {
            endmembers,
            abundances,
            image,
        })
    }
}

/// The multispectral image `Y_M` (`M_m x L`) and hyperspectral image `Y_H` (`M x L_h`).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedPair {
    pub ms: DMatrix<f64>,
    pub hs: DMatrix<f64>,
}

impl ObservedPair {
    pub fn new(
        ms: DMatrix<f64>,
        hs: DMatrix<f64>,
        f: &SpectralResponse,
        g: &SpatialResponse,
    ) -> Result<Self> {
        if ms.nrows() != f.ms_bands() || ms.ncols() != g.sr_pixels() {
            return Err(Error::dims(
                "observed pair",
                format!(
                    "Y_M is {}x{}, expected {}x{}",
                    ms.nrows(),
                    ms.ncols(),
                    f.ms_bands(),
                    g.sr_pixels()
                ),
            ));
        }
        if hs.nrows() != f.sr_bands() || hs.ncols() != g.hs_pixels() {
            return Err(Error::dims(
                "observed pair",
                format!(
                    "Y_H is {}x{}, expected {}x{}",
                    hs.nrows(),
                    hs.ncols(),
                    f.sr_bands(),
                    g.hs_pixels()
                ),
            ));
        }
        Ok(ObservedPair { ms, hs })
    }
}

/// `X = A S`.
pub fn reconstruct(a: &EndmemberMatrix, s: &AbundanceMatrix) -> Result<DMatrix<f64>> {
    if a.count() != s.endmembers() {
        return Err(Error::dims(
            "reconstruct",
            format!("A has {} columns, S has {} rows", a.count(), s.endmembers()),
        ));
    }
    Ok(a.matrix() * s.matrix())
}

/// `F X`. Gives `Y_M` for the SR image and `A' = F A` for endmembers.
pub fn spectral_decimate(f: &SpectralResponse, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if f.sr_bands() != x.nrows() {
        return Err(Error::dims(
            "spectral_decimate",
            format!("F has {} columns, X has {} rows", f.sr_bands(), x.nrows()),
        ));
    }
    Ok(f.matrix() * x)
}

/// `X G`.
pub fn spatial_decimate(x: &DMatrix<f64>, g: &SpatialResponse) -> Result<DMatrix<f64>> {
    if x.ncols() != g.sr_pixels() {
        return Err(Error::dims(
            "spatial_decimate",
            format!("X has {} columns, G expects {}", x.ncols(), g.sr_pixels()),
        ));
    }
    Ok(g.apply(x))
}

/// `S' = S G`, the abundance matrix of the HS image.
pub fn decimate_abundances(s: &AbundanceMatrix, g: &SpatialResponse) -> Result<AbundanceMatrix> {
    let sp = spatial_decimate(s.matrix(), g)?;
    AbundanceMatrix::new(sp)
}

/// Noiseless observation of a scene.
pub fn observe(scene: &Scene, f: &SpectralResponse, g: &SpatialResponse) -> Result<ObservedPair> {
    let ms = spectral_decimate(f, &scene.image)?;
    let hs = spatial_decimate(&scene.image, g)?;
    ObservedPair::new(ms, hs, f, g)
}

/// Support of a vector: indices with `|x| > tol`.
pub fn support(x: impl IntoIterator<Item = f64>, tol: f64) -> Vec<usize> {
    x.into_iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > tol)
        .map(|(i, _)| i)
        .collect()
}

/// One broken invariant found by [`validate_model`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Dimension {
        detail: String,
    },
    EndmemberOutOfBox {
        row: usize,
        col: usize,
        value: f64,
    },
    AbundanceNegative {
        row: usize,
        col: usize,
        value: f64,
    },
    AbundanceSum {
        col: usize,
        sum: f64,
    },
    SpectralNegative {
        row: usize,
        col: usize,
        value: f64,
    },
    SpectralZeroRow {
        row: usize,
    },
    SpectralNotDecimating {
        ms_bands: usize,
        sr_bands: usize,
    },
    WindowShape {
        window: usize,
        pixels: usize,
        weights: usize,
    },
    WindowPixelOutOfRange {
        window: usize,
        pixel: usize,
    },
    WindowDuplicatePixel {
        window: usize,
        pixel: usize,
    },
    WindowWeightNonPositive {
        window: usize,
        position: usize,
        value: f64,
    },
    WindowWeightSum {
        window: usize,
        sum: f64,
    },
    Uncovered {
        pixel: usize,
    },
    SpatialNotDecimating {
        hs_pixels: usize,
        sr_pixels: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            Dimension { detail } => write!(f, "dimension mismatch: {detail}"),
            EndmemberOutOfBox { row, col, value } => {
                write!(f, "A[{row},{col}] = {value} outside [0, 1]")
            }
            AbundanceNegative { row, col, value } => write!(f, "S[{row},{col}] = {value} < 0"),
            AbundanceSum { col, sum } => write!(f, "column {col} of S sums to {sum}, not 1"),
            SpectralNegative { row, col, value } => write!(f, "F[{row},{col}] = {value} < 0"),
            SpectralZeroRow { row } => write!(f, "row {row} of F has no positive weight"),
            SpectralNotDecimating { ms_bands, sr_bands } => {
                write!(
                    f,
                    "F has {ms_bands} MS bands, not fewer than {sr_bands} SR bands"
                )
            }
            WindowShape {
                window,
                pixels,
                weights,
            } => write!(
                f,
                "window {window} has {pixels} pixels and {weights} weights"
            ),
            WindowPixelOutOfRange { window, pixel } => {
                write!(
                    f,
                    "window {window} references SR pixel {pixel} out of range"
                )
            }
            WindowDuplicatePixel { window, pixel } => {
                write!(f, "window {window} lists SR pixel {pixel} twice")
            }
            WindowWeightNonPositive {
                window,
                position,
                value,
            } => write!(
                f,
                "g_i > 0 violated: window {window} weight #{position} = {value}"
            ),
            WindowWeightSum { window, sum } => {
                write!(f, "window {window} weights sum to {sum}, not 1")
            }
            Uncovered { pixel } => write!(f, "SR pixel {pixel} is not covered by any window"),
            SpatialNotDecimating {
                hs_pixels,
                sr_pixels,
            } => write!(
                f,
                "G has {hs_pixels} HS pixels, not fewer than {sr_pixels} SR pixels"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every model invariant on raw inputs and lists what is broken.
pub fn validate_model(
    a: &DMatrix<f64>,
    s: &DMatrix<f64>,
    f: &DMatrix<f64>,
    g: &SpatialResponse,
) -> ValidationReport {
    let mut v = Vec::new();
    for ((r, c), x) in indexed(a) {
        if !(0.0..=1.0).contains(&x) {
            v.push(Violation::EndmemberOutOfBox {
                row: r,
                col: c,
                value: x,
            });
        }
    }
    for ((r, c), x) in indexed(s) {
        if !(x >= -SIMPLEX_TOL) {
            v.push(Violation::AbundanceNegative {
                row: r,
                col: c,
                value: x,
            });
        }
    }
    for (c, col) in s.column_iter().enumerate() {
        let sum = col.sum();
        if !((sum - 1.0).abs() <= SIMPLEX_TOL) {
            v.push(Violation::AbundanceSum { col: c, sum });
        }
    }
    for ((r, c), x) in indexed(f) {
        if !(x >= 0.0) {
            v.push(Violation::SpectralNegative {
                row: r,
                col: c,
                value: x,
            });
        }
    }
    for (r, row) in f.row_iter().enumerate() {
        if !row.iter().any(|x| *x > 0.0) {
            v.push(Violation::SpectralZeroRow { row: r });
        }
    }
    if f.nrows() >= f.ncols() {
        v.push(Violation::SpectralNotDecimating {
            ms_bands: f.nrows(),
            sr_bands: f.ncols(),
        });
    }
    if a.ncols() != s.nrows() {
        v.push(Violation::Dimension {
            detail: format!("A has {} columns, S has {} rows", a.ncols(), s.nrows()),
        });
    }
    if f.ncols() != a.nrows() {
        v.push(Violation::Dimension {
            detail: format!("F has {} columns, A has {} rows", f.ncols(), a.nrows()),
        });
    }
    if s.ncols() != g.sr_pixels() {
        v.push(Violation::Dimension {
            detail: format!("S has {} columns, G expects {}", s.ncols(), g.sr_pixels()),
        });
    }
    v.extend(g.violations());
    ValidationReport { violations: v }
}

fn indexed(m: &DMatrix<f64>) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
    let rows = m.nrows();
    m.iter()
        .enumerate()
        .map(move |(i, &x)| ((i % rows.max(1), i / rows.max(1)), x))
}
