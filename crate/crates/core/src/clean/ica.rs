use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

use super::{check_finite, kurtosis, CleanError, CleanMethod, CleanResult, Result};
use crate::cube::SpectralCube;
use crate::linalg::symmetric_eigen_desc;
use crate::rng::keyed_rng;

/// Eigenvalues at or below this fraction of the largest are dropped.
const WHITEN_CUTOFF: f64 = 1e-12;

/// Channel-space whitening of a `measurements × channels` matrix.
#[derive(Debug, Clone)]
pub struct Whitening {
    /// `measurements × d`, unit covariance; columns ordered by decreasing
    /// variance of the direction they came from.
    pub whitened: Array2<f64>,
    /// `d × channels` matrix `Λ^{-1/2} Eᵀ`.
    pub matrix: Array2<f64>,
    pub means: Array1<f64>,
    /// Retained covariance eigenvalues, decreasing.
    pub eigenvalues: Array1<f64>,
    pub eigenvectors: Array2<f64>,
    /// Number of directions dropped as numerically null.
    pub dropped: usize,
}

pub fn whiten(data: ArrayView2<'_, f64>) -> Result<Whitening> {
    let (m, n) = data.dim();
    if n < 2 || m < 2 {
        return Err(CleanError::InvalidParameter("whitening needs at least two channels and two measurements".into()));
    }
    check_finite(data)?;
    let means = data.mean_axis(Axis(0)).expect("nonempty");
    let xc = &data - &means;
    let cov = xc.t().dot(&xc) / m as f64;
    let (vals, vecs) = symmetric_eigen_desc(cov.view());
    let lmax = vals[0];
    if !(lmax > 0.0) {
        return Err(CleanError::InvalidParameter("data has no variance".into()));
    }
    let d = vals.iter().take_while(|&&l| l > WHITEN_CUTOFF * lmax).count();
    let dropped = n - d;
    if dropped > 0 {
        log::debug!("whitening: dropped {dropped} null directions");
    }
    let e = vecs.slice(s![.., ..d]).to_owned();
    let lam = vals.slice(s![..d]).to_owned();
    let mut matrix = e.t().to_owned();
    for (mut row, &l) in matrix.rows_mut().into_iter().zip(lam.iter()) {
        row.mapv_inplace(|v| v / l.sqrt());
    }
    let whitened = xc.dot(&matrix.t());
    Ok(Whitening { whitened, matrix, means, eigenvalues: lam, eigenvectors: e, dropped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contrast {
    /// `g(u) = u³`, the kurtosis contrast.
    Cubic,
    /// `g(u) = tanh(u)`.
    LogCosh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcaOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub contrast: Contrast,
}

impl Default for IcaOptions {
    fn default() -> Self {
        IcaOptions { tol: 1e-4, max_iter: 200, seed: 0, contrast: Contrast::Cubic }
    }
}

/// Separated components. Measurements (rows) are the samples and channels the
/// observed variables, so each centred row satisfies `x ≈ A s`.
#[derive(Debug, Clone)]
pub struct IcaResult {
    /// `channels × n`; column `j` is the spectrum of component `j`.
    pub mixing: Array2<f64>,
    /// `measurements × n`, unit variance.
    pub sources: Array2<f64>,
    /// `n × channels`; `s = unmixing · (x - means)`.
    pub unmixing: Array2<f64>,
    /// `n × channels` whitening restricted to the leading `n` directions.
    pub whitening: Array2<f64>,
    pub means: Array1<f64>,
    pub kurtoses: Vec<f64>,
    pub n_iterations: usize,
    pub converged: bool,
}

impl IcaResult {
    /// `S Aᵀ`: the centred data projected onto the separated subspace.
    pub fn reconstruction(&self) -> Array2<f64> {
        self.sources.dot(&self.mixing.t())
    }
}

/// `(W Wᵀ)^{-1/2} W`.
fn decorrelate(w: &Array2<f64>) -> Array2<f64> {
    let (vals, vecs) = symmetric_eigen_desc(w.dot(&w.t()).view());
    let mut scaled = vecs.clone();
    for (mut col, &l) in scaled.columns_mut().into_iter().zip(vals.iter()) {
        col.mapv_inplace(|v| v / l.max(f64::MIN_POSITIVE).sqrt());
    }
    scaled.dot(&vecs.t()).dot(w)
}

/// Symmetric fixed-point FastICA on the leading `n_components` whitened
/// directions of `data` (`measurements × channels`).
///
/// Components are ordered by decreasing |kurtosis| and signed so that the
/// largest-magnitude entry of each mixing column is positive.
pub fn fastica(data: ArrayView2<'_, f64>, n_components: usize, opts: &IcaOptions) -> Result<IcaResult> {
    let wh = whiten(data)?;
    let d = wh.whitened.ncols();
    if n_components == 0 || n_components > d {
        return Err(CleanError::InvalidParameter(format!(
            "n_components = {n_components} must lie in [1, {d}] (whitened dimension)"
        )));
    }
    let n = n_components;
    let m = wh.whitened.nrows() as f64;
    let z = wh.whitened.slice(s![.., ..n]).to_owned();

    let mut rng = keyed_rng(opts.seed, 0, 0);
    let init = Array2::from_shape_fn((n, n), |_| StandardNormal.sample(&mut rng));
    let mut w = decorrelate(&init);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        iterations = it;
        let y = z.dot(&w.t());
        let (g, gp) = match opts.contrast {
            Contrast::Cubic => (y.mapv(|u| u * u * u), y.mapv(|u| 3.0 * u * u)),
            Contrast::LogCosh => {
                let t = y.mapv(f64::tanh);
                let tp = t.mapv(|v| 1.0 - v * v);
                (t, tp)
            }
        };
        let gp_mean = gp.mean_axis(Axis(0)).expect("nonempty");
        let mut next = g.t().dot(&z) / m;
        for (mut row, (wrow, &c)) in next.rows_mut().into_iter().zip(w.rows().into_iter().zip(gp_mean.iter())) {
            row.scaled_add(-c, &wrow);
        }
        let next = decorrelate(&next);
        let lim = next
            .rows()
            .into_iter()
            .zip(w.rows())
            .map(|(a, b)| (1.0 - a.dot(&b).abs()).abs())
            .fold(0.0, f64::max);
        w = next;
        if lim < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("fastica did not converge in {} iterations", opts.max_iter);
    }

    let kn = wh.matrix.slice(s![..n, ..]).to_owned();
    let mut sources = z.dot(&w.t());
    let mut unmixing = w.dot(&kn);
    // pseudo-inverse of the reduced whitening is E_n Λ_n^{1/2}
    let mut en_scaled = wh.eigenvectors.slice(s![.., ..n]).to_owned();
    for (mut col, &l) in en_scaled.columns_mut().into_iter().zip(wh.eigenvalues.iter()) {
        col.mapv_inplace(|v| v * l.sqrt());
    }
    let mut mixing = en_scaled.dot(&w.t());

    let kurt: Vec<f64> = sources.columns().into_iter().map(|c| kurtosis(&c.to_vec())).collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| kurt[b].abs().total_cmp(&kurt[a].abs()));
    let (s0, a0, u0) = (sources.clone(), mixing.clone(), unmixing.clone());
    for (j, &k) in order.iter().enumerate() {
        let col = a0.column(k);
        let pivot = col.iter().copied().fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        sources.column_mut(j).assign(&(&s0.column(k) * sign));
        mixing.column_mut(j).assign(&(&a0.column(k) * sign));
        unmixing.row_mut(j).assign(&(&u0.row(k) * sign));
    }
    let kurtoses = order.iter().map(|&k| kurt[k]).collect();
    Ok(IcaResult {
        mixing,
        sources,
        unmixing,
        whitening: kn,
        means: wh.means,
        kurtoses,
        n_iterations: iterations,
        converged,
    })
}

/// Subtracts the `n_components` separated components. The residual is the
/// centred data minus the reconstruction; channel means are added back only
/// when `restore_means` is set.
pub fn remove_ica_components(
    cube: &SpectralCube,
    n_components: usize,
    opts: &IcaOptions,
    restore_means: bool,
) -> Result<(CleanResult, Option<IcaResult>)> {
    if n_components == 0 {
        let result = CleanResult {
            residual: cube.clone(),
            removed_component_count: 0,
            method: CleanMethod::Ica,
            diagnostics: Vec::new(),
        };
        return Ok((result, None));
    }
    let data = cube.data();
    let ica = fastica(data.view(), n_components, opts)?;
    let mut residual = data - &ica.means - ica.reconstruction();
    if restore_means {
        residual += &ica.means;
    }
    let result = CleanResult {
        residual: cube.with_data(residual)?,
        removed_component_count: n_components,
        method: CleanMethod::Ica,
        diagnostics: ica.kurtoses.clone(),
    };
    Ok((result, Some(ica)))
}
