//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use imbench::clean::{fastica, remove_polyfit, svd_residual, IcaOptions};
use imbench::cube::{FrequencyAxis, Mask, SpectralCube};
use imbench::evaluate::{angular_power_spectrum, cm_cu, psnr_from_mse, ssim, Psnr};
use imbench::multipole;
use imbench::skysim::{foreground_cl, generate_correlated_field, ForegroundModel, SkyPatchSpec};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
}

fn rms(a: &Array2<f64>) -> f64 {
    (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn pivots() -> Outcome {
    let table = [
        (ForegroundModel::synchrotron(), 700.0),
        (ForegroundModel::point_sources(), 57.0),
        (ForegroundModel::galactic_free_free(), 0.088),
        (ForegroundModel::extragalactic_free_free(), 0.014),
    ];
    let worst = table
        .iter()
        .map(|(m, a)| (foreground_cl(m, 1000.0, 130e6, 130e6).unwrap() - a).abs() / a)
        .fold(0.0, f64::max);
    outcome(worst <= 1e-12, format!("max relative error {worst:.1e}"))
}

fn field_calibration() -> Outcome {
    let spec = SkyPatchSpec {
        ra_range: (20.0, 28.0),
        dec_range: (25.0, 33.0),
        n_pix: 64,
        axis: FrequencyAxis::from_band(800e6, 820e6, 8).unwrap(),
    };
    let model = ForegroundModel::synchrotron();
    let dtheta = spec.pixel_size();
    let top = PI / dtheta / 2.0;
    let edges: Vec<f64> = (0..=5).map(|i| 200.0 + i as f64 * (top - 200.0) / 5.0).collect();
    let nb = edges.len() - 1;
    let nu = spec.axis.frequencies();

    // model averaged over the modes of each bin
    let mut mode_ls = vec![Vec::new(); nb];
    for ky in 0..64 {
        for kx in 0..64 {
            let l = multipole(ky, kx, 64, 64, dtheta);
            if let Some(b) = (0..nb).find(|&b| l >= edges[b] && l < edges[b + 1]) {
                mode_ls[b].push(l);
            }
        }
    }
    let expected: Vec<Vec<f64>> = nu
        .iter()
        .map(|&f| {
            mode_ls.iter().map(|ls| ls.iter().map(|&l| foreground_cl(&model, l, f, f).unwrap()).sum::<f64>() / ls.len() as f64).collect()
        })
        .collect();

    let realizations = 50;
    let mut samples = vec![vec![Vec::new(); nb]; nu.len()];
    for r in 0..realizations {
        let cube = generate_correlated_field(&spec, &model, 7000 + r).unwrap();
        for (c, per_bin) in samples.iter_mut().enumerate() {
            let est = angular_power_spectrum(cube.channel_map(c).unwrap().view(), dtheta, &edges).unwrap();
            assert_eq!(est.cl_values.len(), nb);
            for (b, v) in est.cl_values.iter().enumerate() {
                per_bin[b].push(*v);
            }
        }
    }
    let mut worst: f64 = 0.0;
    for (c, per_bin) in samples.iter().enumerate() {
        for (b, xs) in per_bin.iter().enumerate() {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let se = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
            worst = worst.max((mean - expected[c][b]).abs() / se);
        }
    }
    outcome(worst <= 3.0, format!("worst deviation {worst:.2} standard errors over {} channel-bins", nu.len() * nb))
}

fn polyfit_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 64;
    let axis = FrequencyAxis::from_band(800e6, 820e6, n).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let coef = gaussian(200, 3, &mut rng) * 100.0;
        let data = Array2::from_shape_fn((200, n), |(r, c)| {
            let x = axis.frequency(c) / 1e6 - 810.0;
            coef[[r, 0]] + coef[[r, 1]] * x + coef[[r, 2]] * x * x
        });
        let cube = SpectralCube::new(data.clone(), axis, None).unwrap();
        let residual = remove_polyfit(&cube, 2).unwrap().residual;
        worst = worst.max(rms(residual.data()) / rms(&data));
    }
    outcome(worst < 1e-10, format!("worst residual/input RMS {worst:.1e}"))
}

fn eckart_young() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x = gaussian(50, 30, &mut rng);
        let sigma = nalgebra::DMatrix::from_fn(50, 30, |i, j| x[[i, j]]).singular_values();
        let mut s: Vec<f64> = sigma.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        for k in [0, 1, 5, 29] {
            let (res, _) = svd_residual(x.view(), k, false).unwrap();
            let energy = res.iter().map(|v| v * v).sum::<f64>();
            let tail = s[k..].iter().map(|v| v * v).sum::<f64>();
            worst = worst.max((energy - tail).abs() / tail);
        }
    }
    outcome(worst <= 1e-8, format!("worst relative energy error {worst:.1e}"))
}

fn ica_recovery() -> Outcome {
    let trials = 50;
    let mut good = 0;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + t);
        let sources = Array2::from_shape_fn((1000, 4), |(_, j)| {
            if j % 2 == 0 {
                rng.random_range(-1.0..1.0)
            } else {
                let u: f64 = rng.random_range(-0.5..0.5);
                -u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        });
        let mixing = gaussian(4, 4, &mut rng);
        let data = sources.dot(&mixing.t());
        let Ok(found) = fastica(data.view(), 4, &IcaOptions { seed: t, ..IcaOptions::default() }) else {
            continue;
        };
        let r: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| pearson(&sources.column(i).to_vec(), &found.sources.column(j).to_vec()).abs()).collect())
            .collect();
        let mut best: f64 = 0.0;
        for p in permutations(4) {
            best = best.max(p.iter().enumerate().map(|(i, &j)| r[i][j]).sum::<f64>() / 4.0);
        }
        if best > 0.95 {
            good += 1;
        }
    }
    outcome(good * 10 >= trials * 9, format!("{good}/{trials} trials above 0.95"))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..n {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn metric_fixed_points() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = gaussian(40, 30, &mut rng);
    let s = ssim(x.view(), x.view(), 8.0, 0.01, 0.03).unwrap();
    let p = psnr_from_mse(9.0, 3.0);
    let mut mask = Mask::empty(40, 30);
    mask.flags_mut().slice_mut(ndarray::s![5..20, 3..9]).fill(true);
    let affine = x.mapv(|v| 2.5 * v + 7.0);
    let ratio = cm_cu(affine.view(), x.view(), &mask).unwrap();

    let n = 128;
    let dtheta = 1e-3;
    let sigma = 2.0;
    let edges: Vec<f64> = (0..=12).map(|i| 2.0 * PI / (n as f64 * dtheta) * 1.5f64.powi(i)).collect();
    let mut sums: Vec<f64> = Vec::new();
    let mut counts = Vec::new();
    for seed in 0..20 {
        let map = gaussian(n, n, &mut ChaCha8Rng::seed_from_u64(100 + seed)) * sigma;
        let est = angular_power_spectrum(map.view(), dtheta, &edges).unwrap();
        if sums.is_empty() {
            sums = vec![0.0; est.cl_values.len()];
            counts = est.mode_counts.clone();
        }
        for (s, v) in sums.iter_mut().zip(&est.cl_values) {
            *s += v / 20.0;
        }
    }
    let white = sigma * sigma * dtheta * dtheta;
    let mut worst: f64 = 0.0;
    let mut bins = 0;
    for (mean, &count) in sums.iter().zip(&counts) {
        if count >= 100 {
            worst = worst.max((mean / white - 1.0).abs());
            bins += 1;
        }
    }
    let pass = s == 1.0 && p == Psnr::Db(0.0) && (ratio - 1.0).abs() < 1e-12 && bins > 0 && worst < 0.05;
    outcome(
        pass,
        format!("ssim {s}, psnr {p} dB, cm/cu {ratio:.15}, white-noise Cl off by at most {:.2}% over {bins} bins", 100.0 * worst),
    )
}

/// Rows of a report CSV, skipping the config-hash comment.
fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut rd = csv::Reader::from_reader(body.as_bytes());
    let headers = rd.headers().unwrap().clone();
    rd.records().map(|r| headers.iter().zip(r.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect()).collect()
}

fn patch_column(rows: &[BTreeMap<String, String>], dataset: &str, column: &str) -> Vec<(f64, f64)> {
    rows.iter()
        .filter(|r| r["dataset"] == dataset)
        .map(|r| (r["masked_fraction"].parse().unwrap(), r[column].parse().unwrap()))
        .collect()
}

fn fig5_trend(out: &Path) -> Outcome {
    let rows = read_csv(&out.join("reports/patch_metrics.csv"));
    let restored = patch_column(&rows, "d", "polyfit_rms");
    let baseline = patch_column(&rows, "baseline", "polyfit_rms");
    let in_bin = |s: &[(f64, f64)], lo: f64, hi: f64, last: bool| -> Vec<f64> {
        s.iter().filter(|(f, _)| *f >= lo && (*f < hi || (last && *f <= hi))).map(|p| p.1).collect()
    };
    let mut bad = Vec::new();
    let mut checked = 0;
    for i in 0..8 {
        let (lo, hi) = (i as f64 * 0.05, (i + 1) as f64 * 0.05);
        let (r, b) = (in_bin(&restored, lo, hi, i == 7), in_bin(&baseline, lo, hi, i == 7));
        if r.len() >= 10 && b.len() >= 10 {
            checked += 1;
            if median(r) > median(b) {
                bad.push(format!("[{lo:.2},{hi:.2})"));
            }
        }
    }
    let gap = |lo: f64, hi: f64, last: bool| {
        let b = median(in_bin(&baseline, lo, hi, last));
        (b - median(in_bin(&restored, lo, hi, last))) / b
    };
    let (low, high) = (gap(0.0, 0.1, false), gap(0.3, 0.4, true));
    let pass = checked > 0 && bad.is_empty() && high > low;
    outcome(pass, format!("{checked} bins checked, violations {bad:?}; normalised gap {low:.4} at 0-0.1, {high:.4} at 0.3-0.4"))
}

fn fig6_trend(out: &Path) -> Outcome {
    let rows = read_csv(&out.join("reports/patch_metrics.csv"));
    let mut bad = Vec::new();
    let mut fewest = usize::MAX;
    for k in 1..=20 {
        let col = format!("svd_rms_k{k}");
        let med: BTreeMap<&str, f64> = ["a", "b", "c", "d"]
            .iter()
            .map(|&ds| {
                let v: Vec<f64> = patch_column(&rows, ds, &col).into_iter().map(|p| p.1).collect();
                fewest = fewest.min(v.len());
                (ds, median(v))
            })
            .collect();
        if !(med["a"] >= med["b"] && med["b"] >= med["d"] && med["a"] >= med["c"] && med["c"] >= med["d"]) {
            bad.push(k);
        }
    }
    outcome(bad.is_empty() && fewest >= 20, format!("{fewest} patches per dataset, ordering broken at k = {bad:?}"))
}

fn fig9_trend(out: &Path) -> Outcome {
    let rows = read_csv(&out.join("reports/summary.csv"));
    let delta = |method: &str, variant: &str| -> f64 {
        let r = rows.iter().find(|r| r["method"] == method && r["variant"] == variant).expect("summary row");
        r["delta_log_cl"].parse().unwrap()
    };
    let mut pass = true;
    let mut detail = Vec::new();
    for method in ["svd", "ica"] {
        let (with, without) = (delta(method, "d"), delta(method, "a"));
        pass &= with < without;
        detail.push(format!("{method} {with:.4} vs {without:.4}"));
    }
    outcome(pass, detail.join(", "))
}

fn run_all(cfg: &Path, out: &Path) -> Duration {
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_imbench"))
        .args(["run-all", "--profile", "desk", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    assert!(status.success(), "run-all failed: {status}");
    start.elapsed()
}

fn report(n: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome, extra: Duration) -> bool {
    let start = Instant::now();
    let o = f();
    let elapsed = start.elapsed() + extra;
    let pass = o.pass && elapsed <= budget;
    println!(
        "criterion {n:>2} {} {name}: {} [{:.1} s, budget {} s]",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    pass
}

fn main() {
    // `cargo test` passes harness flags; a name filter that excludes this
    // target should skip it
    if std::env::args().skip(1).any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let secs = Duration::from_secs;
    let mut ok = true;
    ok &= report(1, "foreground pivots", secs(1), pivots, Duration::ZERO);
    ok &= report(2, "field calibration", secs(60), field_calibration, Duration::ZERO);
    ok &= report(3, "polyfit exactness", secs(1), polyfit_exactness, Duration::ZERO);
    ok &= report(4, "SVD Eckart-Young", secs(10), eckart_young, Duration::ZERO);
    ok &= report(5, "FastICA recovery", secs(30), ica_recovery, Duration::ZERO);
    ok &= report(6, "metric fixed points", secs(30), metric_fixed_points, Duration::ZERO);

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("desk.toml");
    fs::write(&cfg, "run.seed = 42\n").unwrap();
    let (first, second) = (dir.path().join("first"), dir.path().join("second"));
    let t1 = run_all(&cfg, &first);
    ok &= report(7, "masked-fraction trend after polyfit", secs(300), || fig5_trend(&first), t1);
    ok &= report(8, "SVD mode ordering across datasets", secs(300), || fig6_trend(&first), t1);
    ok &= report(9, "residual spectra closer to HI with restoration", secs(600), || fig9_trend(&first), t1);
    let t2 = run_all(&cfg, &second);
    ok &= report(
        10,
        "determinism",
        secs(600),
        || {
            let same = fs::read(first.join("manifest.json")).unwrap() == fs::read(second.join("manifest.json")).unwrap();
            outcome(same, if same { "manifests byte-identical" } else { "manifests differ" })
        },
        t1 + t2,
    );
    if !ok {
        std::process::exit(1);
    }
}
