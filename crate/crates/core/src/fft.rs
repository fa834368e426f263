//! Two-dimensional FFTs on square or rectangular grids.

use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

fn transform_lanes(data: &mut Array2<Complex64>, axis: Axis, inverse: bool, planner: &mut FftPlanner<f64>) {
    let len = data.len_of(axis);
    let fft = if inverse { planner.plan_fft_inverse(len) } else { planner.plan_fft_forward(len) };
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for mut lane in data.lanes_mut(axis) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        fft.process(&mut buf);
        for (v, b) in lane.iter_mut().zip(buf.iter()) {
            *v = *b;
        }
    }
}

/// Unnormalised forward DFT: `F[k] = Σ_x f[x] exp(-2πi k·x / N)`.
pub fn fft2(data: &mut Array2<Complex64>) {
    let mut planner = FftPlanner::new();
    transform_lanes(data, Axis(1), false, &mut planner);
    transform_lanes(data, Axis(0), false, &mut planner);
}

/// Inverse DFT including the `1/(ny·nx)` factor.
pub fn ifft2(data: &mut Array2<Complex64>) {
    let mut planner = FftPlanner::new();
    transform_lanes(data, Axis(1), true, &mut planner);
    transform_lanes(data, Axis(0), true, &mut planner);
    let scale = 1.0 / data.len() as f64;
    data.mapv_inplace(|v| v * scale);
}

/// Signed frequency index of DFT bin `k` on a length-`n` axis.
pub fn signed_index(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Flat-sky multipole `l = 2π|u|` of bin `(ky, kx)` for pixels of side
/// `pixel_size` radians, with `u` in cycles per radian.
pub fn multipole(ky: usize, kx: usize, ny: usize, nx: usize, pixel_size: f64) -> f64 {
    let uy = signed_index(ky, ny) as f64 / (ny as f64 * pixel_size);
    let ux = signed_index(kx, nx) as f64 / (nx as f64 * pixel_size);
    2.0 * std::f64::consts::PI * (ux * ux + uy * uy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_parseval() {
        let n = 8;
        let orig = Array2::from_shape_fn((n, n), |(i, j)| Complex64::new((i * 3 + j) as f64 % 5.0 - 2.0, 0.0));
        let mut f = orig.clone();
        fft2(&mut f);
        let energy_x: f64 = orig.iter().map(|v| v.norm_sqr()).sum();
        let energy_k: f64 = f.iter().map(|v| v.norm_sqr()).sum();
        assert!((energy_k - (n * n) as f64 * energy_x).abs() < 1e-9 * energy_k);
        ifft2(&mut f);
        for (a, b) in f.iter().zip(orig.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn signed_indices() {
        let idx: Vec<i64> = (0..6).map(|k| signed_index(k, 6)).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, -2, -1]);
        assert_eq!(multipole(0, 0, 4, 4, 0.01), 0.0);
    }
}
