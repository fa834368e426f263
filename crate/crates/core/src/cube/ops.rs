use ndarray::Array2;

use super::{CubeError, FrequencyAxis, Mask, Result, SpectralCube};

/// Averages every `factor` adjacent channels into one, ignoring flagged
/// cells. A group with no unflagged cell becomes `0.0` and stays flagged.
///
/// Trailing channels that do not fill a whole group are dropped.
pub fn downsample_channels(cube: &SpectralCube, mask: &Mask, factor: usize) -> Result<(SpectralCube, Mask)> {
    if factor < 1 {
        return Err(CubeError::InvalidArgument("downsampling factor must be at least 1".into()));
    }
    mask.check_congruent(cube.data().dim())?;
    let n_in = cube.n_channels();
    let n_out = n_in / factor;
    if n_out == 0 {
        return Err(CubeError::InvalidArgument(format!(
            "factor {factor} exceeds the channel count {n_in}"
        )));
    }
    if n_in % factor != 0 {
        log::warn!(
            "downsampling {n_in} channels by {factor}: dropping {} trailing channels",
            n_in % factor
        );
    }
    let rows = cube.n_rows();
    let data = cube.data();
    let flags = mask.flags();
    let mut out = Array2::<f64>::zeros((rows, n_out));
    let mut out_flags = Array2::from_elem((rows, n_out), false);
    for r in 0..rows {
        for g in 0..n_out {
            let mut sum = 0.0;
            let mut count = 0usize;
            for c in g * factor..(g + 1) * factor {
                if !flags[[r, c]] {
                    sum += data[[r, c]];
                    count += 1;
                }
            }
            if count == 0 {
                out_flags[[r, g]] = true;
            } else {
                out[[r, g]] = sum / count as f64;
            }
        }
    }
    let axis = cube.axis();
    let out_axis = FrequencyAxis::new(axis.start(), axis.channel_width() * factor as f64, n_out)?;
    Ok((SpectralCube::new(out, out_axis, cube.sky_grid())?, Mask::new(out_flags)))
}

/// Replaces every cell of each fully flagged channel with the mean of the
/// unflagged cells of its row. Rows with nothing unflagged get zero.
///
/// Partially flagged channels are left alone.
pub fn fill_empty_channels(cube: &SpectralCube, mask: &Mask) -> Result<SpectralCube> {
    mask.check_congruent(cube.data().dim())?;
    let empty = mask.fully_masked_channels();
    if empty.is_empty() {
        return Ok(cube.clone());
    }
    let flags = mask.flags();
    let mut data = cube.data().clone();
    let mut degenerate = 0usize;
    for (r, mut row) in data.rows_mut().into_iter().enumerate() {
        let (sum, n) = row
            .iter()
            .zip(flags.row(r))
            .filter(|(_, &f)| !f)
            .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v, n + 1));
        let fill = if n == 0 {
            degenerate += 1;
            0.0
        } else {
            sum / n as f64
        };
        for &c in &empty {
            row[c] = fill;
        }
    }
    if degenerate > 0 {
        log::warn!("{degenerate} rows have no unflagged cells; their empty channels were set to zero");
    }
    cube.with_data(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn cube(data: Array2<f64>) -> SpectralCube {
        let axis = FrequencyAxis::new(800e6, 1e4, data.ncols()).unwrap();
        SpectralCube::new(data, axis, None).unwrap()
    }

    #[test]
    fn paper_channel_count() {
        let c = cube(Array2::zeros((2, 1080)));
        let (d, m) = downsample_channels(&c, &Mask::empty(2, 1080), 20).unwrap();
        assert_eq!(d.n_channels(), 54);
        assert_eq!(m.dim(), (2, 54));
        assert!((d.axis().channel_width() - 2e5).abs() < 1e-9);
    }

    #[test]
    fn constant_cube_stays_constant() {
        let c = cube(Array2::from_elem((3, 8), 5.0));
        let (d, m) = downsample_channels(&c, &Mask::empty(3, 8), 2).unwrap();
        assert!(d.data().iter().all(|&v| v == 5.0));
        assert!(m.is_empty());
    }

    #[test]
    fn masked_mean_skips_flagged_cells() {
        let c = cube(array![[1.0, 3.0]]);
        let mask = Mask::new(array![[true, false]]);
        let (d, m) = downsample_channels(&c, &mask, 2).unwrap();
        assert_eq!(d.data()[[0, 0]], 3.0);
        assert!(!m.get(0, 0));
    }

    #[test]
    fn empty_group_stays_flagged() {
        let c = cube(array![[1.0, 3.0, 4.0, 6.0]]);
        let mask = Mask::new(array![[true, true, false, false]]);
        let (d, m) = downsample_channels(&c, &mask, 2).unwrap();
        assert!(m.get(0, 0));
        assert_eq!(d.data()[[0, 1]], 5.0);
    }

    #[test]
    fn remainder_channels_dropped() {
        let c = cube(Array2::from_shape_fn((1, 7), |(_, j)| j as f64));
        let (d, _) = downsample_channels(&c, &Mask::empty(1, 7), 3).unwrap();
        assert_eq!(d.data(), &array![[1.0, 4.0]]);
        assert!(downsample_channels(&c, &Mask::empty(1, 7), 0).is_err());
    }

    #[test]
    fn fill_without_empty_channels_is_identity() {
        let c = cube(array![[1.0, 2.0], [3.0, 4.0]]);
        let mask = Mask::new(array![[true, false], [false, false]]);
        assert_eq!(fill_empty_channels(&c, &mask).unwrap(), c);
    }

    #[test]
    fn fill_uses_row_means() {
        let c = cube(array![[1.0, 99.0], [3.0, -7.0]]);
        let mask = Mask::new(array![[false, true], [false, true]]);
        let filled = fill_empty_channels(&c, &mask).unwrap();
        assert_eq!(filled.data(), &array![[1.0, 1.0], [3.0, 3.0]]);
    }

    #[test]
    fn fully_masked_cube_fills_zero() {
        let c = cube(array![[1.0, 2.0], [3.0, 4.0]]);
        let filled = fill_empty_channels(&c, &Mask::full(2, 2)).unwrap();
        assert!(filled.data().iter().all(|&v| v == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn factor_one_without_mask_is_identity(rows in 1usize..5, cols in 1usize..9, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let c = cube(Array2::from_shape_fn((rows, cols), |_| rng.random_range(-10.0..10.0)));
            let (d, m) = downsample_channels(&c, &Mask::empty(rows, cols), 1).unwrap();
            prop_assert_eq!(d.data(), c.data());
            prop_assert!(m.is_empty());
        }

        #[test]
        fn fill_touches_only_empty_channels(
            rows in 1usize..5,
            cols in 1usize..9,
            seed in any::<u64>(),
            density in 0.0f64..1.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let c = cube(Array2::from_shape_fn((rows, cols), |_| rng.random_range(-10.0..10.0)));
            let mask = Mask::new(Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() < density));
            let filled = fill_empty_channels(&c, &mask).unwrap();
            let empty = mask.fully_masked_channels();
            for ((r, ch), &v) in filled.data().indexed_iter() {
                if !empty.contains(&ch) {
                    prop_assert_eq!(v.to_bits(), c.data()[[r, ch]].to_bits());
                }
            }
        }

        #[test]
        fn downsampled_flags_mark_only_empty_groups(
            rows in 1usize..5,
            groups in 1usize..5,
            factor in 1usize..4,
            seed in any::<u64>(),
            density in 0.0f64..1.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cols = groups * factor;
            let c = cube(Array2::zeros((rows, cols)));
            let mask = Mask::new(Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() < density));
            let (_, m) = downsample_channels(&c, &mask, factor).unwrap();
            for r in 0..rows {
                for g in 0..groups {
                    let all = (g * factor..(g + 1) * factor).all(|ch| mask.get(r, ch));
                    prop_assert_eq!(m.get(r, g), all);
                }
            }
        }
    }
}
