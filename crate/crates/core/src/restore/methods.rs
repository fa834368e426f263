use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView1, ArrayView2};

use super::{check_input, RestoreError, Result};
use crate::cube::Mask;
use crate::linalg::symmetric_eigen_desc;

/// Fills each masked cell with the mean of the unmasked cells in its row.
/// Rows with nothing unmasked take the global unmasked mean; a fully masked
/// input becomes all zeros.
pub fn mean_fill_restore(data: ArrayView2<'_, f64>, mask: &Mask) -> Result<Array2<f64>> {
    check_input(data, mask)?;
    let flags = mask.flags();
    let mut out = data.to_owned();
    if mask.is_empty() {
        return Ok(out);
    }
    let (mut gsum, mut gn) = (0.0, 0usize);
    let row_means: Vec<Option<f64>> = data
        .rows()
        .into_iter()
        .zip(flags.rows())
        .map(|(row, f)| {
            let (s, n) = row.iter().zip(f).filter(|(_, &m)| !m).fold((0.0, 0usize), |(s, n), (&v, _)| (s + v, n + 1));
            gsum += s;
            gn += n;
            (n > 0).then(|| s / n as f64)
        })
        .collect();
    let global = if gn == 0 {
        log::warn!("mean fill: every cell is masked; filling with zeros");
        0.0
    } else {
        gsum / gn as f64
    };
    for ((mut row, f), mean) in out.rows_mut().into_iter().zip(flags.rows()).zip(row_means) {
        let fill = mean.unwrap_or(global);
        for (v, &m) in row.iter_mut().zip(f) {
            if m {
                *v = fill;
            }
        }
    }
    Ok(out)
}

/// Legendre polynomials `P_0..P_order` evaluated at the channel indices
/// mapped linearly onto `[-1, 1]`; shape `(n_channels, order + 1)`.
pub fn legendre_basis(n_channels: usize, order: usize) -> Array2<f64> {
    let mut b = Array2::<f64>::zeros((n_channels, order + 1));
    for c in 0..n_channels {
        let x = if n_channels > 1 { 2.0 * c as f64 / (n_channels - 1) as f64 - 1.0 } else { 0.0 };
        b[[c, 0]] = 1.0;
        if order >= 1 {
            b[[c, 1]] = x;
        }
        for k in 2..=order {
            let kf = k as f64;
            b[[c, k]] = ((2.0 * kf - 1.0) * x * b[[c, k - 1]] - (kf - 1.0) * b[[c, k - 2]]) / kf;
        }
    }
    b
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolyReport {
    /// Rows with too few unmasked cells for the fit, filled by row mean.
    pub fallback_rows: Vec<usize>,
}

/// Least-squares coefficients of `basis` columns fitted to `y` at the
/// listed channels, or `None` when the normal matrix is singular.
pub(crate) fn fit_polynomial(basis: &Array2<f64>, y: ArrayView1<'_, f64>, channels: &[usize]) -> Option<DVector<f64>> {
    let k = basis.ncols();
    let mut ata = DMatrix::<f64>::zeros(k, k);
    let mut aty = DVector::<f64>::zeros(k);
    for &c in channels {
        for i in 0..k {
            aty[i] += basis[[c, i]] * y[c];
            for j in 0..k {
                ata[(i, j)] += basis[[c, i]] * basis[[c, j]];
            }
        }
    }
    ata.cholesky().map(|ch| ch.solve(&aty))
}

/// Fits a polynomial of `order` in normalised channel index to the
/// unmasked cells of each row and evaluates it at the masked cells.
pub fn spectral_poly_restore(data: ArrayView2<'_, f64>, mask: &Mask, order: usize) -> Result<(Array2<f64>, PolyReport)> {
    check_input(data, mask)?;
    let mut out = data.to_owned();
    let mut report = PolyReport::default();
    if mask.is_empty() {
        return Ok((out, report));
    }
    let n = data.ncols();
    let k = order + 1;
    let basis = legendre_basis(n, order);
    let fallback = mean_fill_restore(data, mask)?;
    let flags = mask.flags();
    for (r, mut row) in out.rows_mut().into_iter().enumerate() {
        let f = flags.row(r);
        if !f.iter().any(|&m| m) {
            continue;
        }
        let observed: Vec<usize> = (0..n).filter(|&c| !f[c]).collect();
        let coef = if observed.len() >= k { fit_polynomial(&basis, data.row(r), &observed) } else { None };
        match coef {
            Some(coef) => {
                for c in 0..n {
                    if f[c] {
                        row[c] = (0..k).map(|i| basis[[c, i]] * coef[i]).sum();
                    }
                }
            }
            None => {
                report.fallback_rows.push(r);
                row.assign(&fallback.row(r));
            }
        }
    }
    Ok((out, report))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LowRankReport {
    pub iterations: usize,
    pub converged: bool,
    /// RMS change of the masked cells in the last iteration.
    pub last_change: f64,
}

/// Iterative low-rank completion: starting from the mean fill, repeatedly
/// project onto the top `rank` singular directions and copy the projection
/// into the masked cells, until the masked-cell RMS change drops below
/// `tol` times the data RMS.
pub fn low_rank_restore(
    data: ArrayView2<'_, f64>,
    mask: &Mask,
    rank: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(Array2<f64>, LowRankReport)> {
    check_input(data, mask)?;
    let (rows, cols) = data.dim();
    if rank == 0 || rank > rows.min(cols) {
        return Err(RestoreError::InvalidParameter(format!(
            "rank {rank} must lie in [1, {}]",
            rows.min(cols)
        )));
    }
    let mut report = LowRankReport { converged: true, ..Default::default() };
    if mask.is_empty() {
        return Ok((data.to_owned(), report));
    }
    let mut x = mean_fill_restore(data, mask)?;
    let flags = mask.flags();
    let masked = mask.count() as f64;
    let scale = (data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64).sqrt();
    report.converged = false;
    for it in 0..max_iter {
        // truncated reconstruction through the smaller Gram matrix
        let approx = if cols <= rows {
            let (_, v) = symmetric_eigen_desc(x.t().dot(&x).view());
            let vr = v.slice(ndarray::s![.., ..rank]).to_owned();
            x.dot(&vr).dot(&vr.t())
        } else {
            let (_, u) = symmetric_eigen_desc(x.dot(&x.t()).view());
            let ur = u.slice(ndarray::s![.., ..rank]).to_owned();
            ur.dot(&ur.t().dot(&x))
        };
        let mut sq = 0.0;
        for ((idx, v), &f) in x.indexed_iter_mut().zip(flags.iter()) {
            if f {
                let d = approx[idx] - *v;
                sq += d * d;
                *v = approx[idx];
            }
        }
        report.iterations = it + 1;
        report.last_change = (sq / masked).sqrt();
        if !report.last_change.is_finite() {
            return Err(RestoreError::InvalidParameter("low-rank iteration diverged".into()));
        }
        if report.last_change <= tol * scale {
            report.converged = true;
            break;
        }
    }
    Ok((x, report))
}
