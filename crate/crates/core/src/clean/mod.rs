//! Foreground removal: per-row polynomial subtraction, SVD mode removal and
//! FastICA component subtraction.

mod ica;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use thiserror::Error;

use crate::cube::{CubeError, SpectralCube};
use crate::linalg::{from_dmatrix, to_dmatrix};
use crate::restore::legendre_basis;

pub use ica::{fastica, remove_ica_components, whiten, Contrast, IcaOptions, IcaResult, Whitening};

#[derive(Debug, Error)]
pub enum CleanError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite input")]
    NonFinite,
    #[error("decomposition failed: {0}")]
    Decomposition(String),
    #[error(transparent)]
    Cube(#[from] CubeError),
}

pub type Result<T, E = CleanError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CleanMethod {
    Polyfit,
    Svd,
    Ica,
}

impl CleanMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            CleanMethod::Polyfit => "polyfit",
            CleanMethod::Svd => "svd",
            CleanMethod::Ica => "ica",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CleanResult {
    pub residual: SpectralCube,
    pub removed_component_count: usize,
    pub method: CleanMethod,
    /// Singular values for SVD, source kurtoses for ICA, empty for polyfit.
    pub diagnostics: Vec<f64>,
}

fn check_finite(data: ArrayView2<'_, f64>) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CleanError::NonFinite)
    }
}

/// Orthonormal basis (columns) of polynomials up to `order` in normalised
/// channel index.
fn poly_projector(n_channels: usize, order: usize) -> Array2<f64> {
    let b = to_dmatrix(legendre_basis(n_channels, order).view());
    from_dmatrix(&b.qr().q())
}

/// Subtracts from each row its least-squares polynomial of `order` in
/// normalised channel index.
pub fn polyfit_residual(data: ArrayView2<'_, f64>, order: usize) -> Result<Array2<f64>> {
    let n = data.ncols();
    if order >= n {
        return Err(CleanError::InvalidParameter(format!("order {order} needs more than {n} channels")));
    }
    check_finite(data)?;
    let q = poly_projector(n, order);
    let fit = data.dot(&q).dot(&q.t());
    Ok(&data - &fit)
}

pub fn remove_polyfit(cube: &SpectralCube, order: usize) -> Result<CleanResult> {
    let residual = polyfit_residual(cube.data().view(), order)?;
    Ok(CleanResult {
        residual: cube.with_data(residual)?,
        removed_component_count: order + 1,
        method: CleanMethod::Polyfit,
        diagnostics: Vec::new(),
    })
}

/// Thin SVD `M = U diag(σ) Vᵀ` with σ non-increasing and the
/// largest-magnitude entry of every left vector positive.
#[derive(Debug, Clone)]
pub struct SvdDecomposition {
    pub u: Array2<f64>,
    pub singular_values: Array1<f64>,
    pub v: Array2<f64>,
}

impl SvdDecomposition {
    pub fn rank_bound(&self) -> usize {
        self.singular_values.len()
    }

    /// `Σ_{i<k} σ_i u_i v_iᵀ`.
    pub fn leading(&self, k: usize) -> Array2<f64> {
        let us = &self.u.slice(ndarray::s![.., ..k]) * &self.singular_values.slice(ndarray::s![..k]);
        us.dot(&self.v.slice(ndarray::s![.., ..k]).t())
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        self.leading(self.rank_bound())
    }
}

pub fn svd_decompose(data: ArrayView2<'_, f64>) -> Result<SvdDecomposition> {
    check_finite(data)?;
    let (m, n) = data.dim();
    if m == 0 || n == 0 {
        return Err(CleanError::InvalidParameter("empty matrix".into()));
    }
    // nalgebra handles wide matrices by transposing internally; decompose the
    // tall orientation and swap roles to keep one code path.
    let tall = m >= n;
    let mat: DMatrix<f64> = if tall { to_dmatrix(data) } else { to_dmatrix(data.t()) };
    let svd = mat
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| CleanError::Decomposition("SVD did not converge".into()))?;
    let (Some(u), Some(vt)) = (svd.u, svd.v_t) else {
        return Err(CleanError::Decomposition("SVD vectors missing".into()));
    };
    let p = svd.singular_values.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let (left, right) = if tall { (u, vt.transpose()) } else { (vt.transpose(), u) };
    let mut uo = Array2::<f64>::zeros((m, p));
    let mut vo = Array2::<f64>::zeros((n, p));
    let mut s = Array1::<f64>::zeros(p);
    for (j, &k) in order.iter().enumerate() {
        s[j] = svd.singular_values[k];
        let col = left.column(k);
        let pivot = col.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..m {
            uo[[i, j]] = sign * left[(i, k)];
        }
        for i in 0..n {
            vo[[i, j]] = sign * right[(i, k)];
        }
    }
    Ok(SvdDecomposition { u: uo, singular_values: s, v: vo })
}

/// Data minus its `k` leading SVD modes. With `center`, channel means are
/// removed before decomposing and not restored.
pub fn svd_residual(data: ArrayView2<'_, f64>, k: usize, center: bool) -> Result<(Array2<f64>, SvdDecomposition)> {
    let x = if center {
        let means = data.mean_axis(Axis(0)).ok_or_else(|| CleanError::InvalidParameter("empty matrix".into()))?;
        &data - &means
    } else {
        data.to_owned()
    };
    let dec = svd_decompose(x.view())?;
    if k > dec.rank_bound() {
        return Err(CleanError::InvalidParameter(format!("k = {k} exceeds min(m, n) = {}", dec.rank_bound())));
    }
    let residual = if k == 0 { x } else { &x - &dec.leading(k) };
    Ok((residual, dec))
}

pub fn remove_svd_modes(cube: &SpectralCube, k: usize) -> Result<CleanResult> {
    remove_svd_modes_with(cube, k, false)
}

pub fn remove_svd_modes_with(cube: &SpectralCube, k: usize, center: bool) -> Result<CleanResult> {
    let (residual, dec) = svd_residual(cube.data().view(), k, center)?;
    Ok(CleanResult {
        residual: cube.with_data(residual)?,
        removed_component_count: k,
        method: CleanMethod::Svd,
        diagnostics: dec.singular_values.to_vec(),
    })
}

/// Excess kurtosis with plain moment estimators: `E y⁴ - 3 (E y²)²`.
pub fn kurtosis(samples: &[f64]) -> Result<f64> {
    if samples.len() < 4 {
        return Err(CleanError::InvalidParameter("kurtosis needs at least 4 samples".into()));
    }
    let n = samples.len() as f64;
    let (m2, m4) = samples.iter().fold((0.0, 0.0), |(a, b), &y| {
        let y2 = y * y;
        (a + y2, b + y2 * y2)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    Ok(m4 - 3.0 * m2 * m2)
}
