//! Runs the `imbench` binary on a small configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use imbench::cube::{read_cube, read_mask, write_cube};
use imbench_cli::manifest::{sha256_file, RunManifest};

const TINY: &str = "\
run.seed = 5
sky.n_pix = 32
sky.n_channels = 48
eval.patch_size = 16
clean.svd_modes = [0, 1, 2, 4]
clean.ica_components = 2
";

fn config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, format!("{TINY}{extra}")).unwrap();
    path
}

fn imbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imbench")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn run(sub: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    imbench(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn validate_config_prints_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let o = imbench(&["validate-config", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let hash = text.trim().strip_prefix("ok config_hash=").unwrap();
    assert_eq!(hash.len(), 64);

    let o = imbench(&["validate-config", "--config", cfg.to_str().unwrap(), "--seed", "6"]);
    assert_ne!(String::from_utf8(o.stdout).unwrap().trim(), text.trim());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for body in ["run.seed = 1\nsky.colour = 3\n", "sky.n_pix = 32\n", "run.seed = 1\nsky.dec_min = 60.0\n", "not toml ["] {
        let cfg = dir.path().join("bad.toml");
        fs::write(&cfg, body).unwrap();
        let o = imbench(&["validate-config", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code(&o), 2, "{body}");
    }
    let o = imbench(&["validate-config", "--config", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    // usage errors share the config exit code
    assert_eq!(code(&imbench(&["simulate"])), 2);
}

#[test]
fn missing_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let out = dir.path().join("out");
    let o = run("restore", &cfg, &out, &[]);
    assert_eq!(code(&o), 3);
    let m = RunManifest::load(&out).unwrap().unwrap();
    assert_eq!(m.stages.len(), 1);
    assert!(!m.stages[0].ok);
}

#[test]
fn external_restorer_that_touches_unflagged_cells_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let bad = dir.path().join("restored.imc");
    let cfg = config(dir.path(), &format!("restore.restorer = \"external\"\nrestore.external_path = {:?}\n", bad.to_str().unwrap()));
    assert_eq!(code(&run("simulate", &cfg, &out, &[])), 0);
    assert_eq!(code(&run("contaminate", &cfg, &out, &[])), 0);

    let cube = read_cube(out.join("contaminate/contaminated.imc")).unwrap();
    let (mask, _) = read_mask(out.join("contaminate/detected.imm")).unwrap();
    let (r, c) = mask.flags().indexed_iter().find(|(_, &f)| !f).unwrap().0;
    let mut data = cube.data().clone();
    data[[r, c]] += 1.0;
    write_cube(&cube.with_data(data).unwrap(), &bad).unwrap();
    let o = run("restore", &cfg, &out, &[]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("restore/rejections.csv")).unwrap();
    assert!(report.contains(&format!("{r}:{c}")), "{report}");

    // an external cube that only changes flagged cells is accepted
    write_cube(&cube, &bad).unwrap();
    assert_eq!(code(&run("restore", &cfg, &out, &[])), 0);
}

#[test]
fn run_all_is_deterministic_and_creates_nested_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let one = dir.path().join("a/b/one");
    let two = dir.path().join("two");
    assert_eq!(code(&run("run-all", &cfg, &one, &[])), 0);
    assert_eq!(code(&run("run-all", &cfg, &two, &["--threads", "1"])), 0);
    let m1 = fs::read(one.join("manifest.json")).unwrap();
    assert_eq!(m1, fs::read(two.join("manifest.json")).unwrap());

    let m = RunManifest::load(&one).unwrap().unwrap();
    assert!(m.stages.iter().all(|s| s.ok));
    assert!(m.verify(&one).unwrap().is_empty());
    for name in ["sky/total.imc", "contaminate/detected.imm", "restore/baseline/variant_d.imc", "reports/summary.csv"] {
        assert!(m.artifacts.iter().any(|a| a.path == name), "{name}");
    }
    for a in &m.artifacts {
        if a.path.ends_with(".csv") {
            let text = fs::read_to_string(one.join(&a.path)).unwrap();
            assert!(text.starts_with(&format!("# config_hash={}", m.config_hash)), "{}", a.path);
        }
    }

    // variant a is the contaminated cube itself
    assert_eq!(
        sha256_file(&one.join("restore/spectral_poly/variant_a.imc")).unwrap(),
        sha256_file(&one.join("contaminate/contaminated.imc")).unwrap()
    );
}

#[test]
fn stages_run_separately_match_run_all() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let all = dir.path().join("all");
    let split = dir.path().join("split");
    assert_eq!(code(&run("run-all", &cfg, &all, &[])), 0);
    for stage in ["simulate", "contaminate", "restore", "clean-eval"] {
        assert_eq!(code(&run(stage, &cfg, &split, &[])), 0, "{stage}");
    }
    assert_eq!(fs::read(all.join("manifest.json")).unwrap(), fs::read(split.join("manifest.json")).unwrap());
}

#[test]
fn restorer_choice_changes_variant_d() {
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for restorer in ["spectral_poly", "mean_fill"] {
        let sub = dir.path().join(restorer);
        fs::create_dir(&sub).unwrap();
        let cfg = config(&sub, &format!("restore.restorer = \"{restorer}\"\n"));
        let out = sub.join("out");
        for stage in ["simulate", "contaminate", "restore"] {
            assert_eq!(code(&run(stage, &cfg, &out, &[])), 0, "{restorer} {stage}");
        }
        outs.push(out);
    }
    let d = |out: &Path, restorer: &str| sha256_file(&out.join(format!("restore/{restorer}/variant_d.imc"))).unwrap();
    assert_ne!(d(&outs[0], "spectral_poly"), d(&outs[1], "mean_fill"));
    // the mean-fill baseline does not depend on the chosen restorer
    assert_eq!(d(&outs[0], "baseline"), d(&outs[1], "baseline"));
    assert_eq!(d(&outs[1], "mean_fill"), d(&outs[1], "baseline"));
}

#[test]
fn clean_cube_is_barely_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "rfi.broadband_rate = 0.0\nrfi.narrowband_channel_prob = 0.0\nrfi.outlier_rate = 0.0\n");
    let out = dir.path().join("out");
    assert_eq!(code(&run("simulate", &cfg, &out, &[])), 0);
    assert_eq!(code(&run("contaminate", &cfg, &out, &[])), 0);
    let (truth, _) = read_mask(out.join("contaminate/truth.imm")).unwrap();
    let (detected, _) = read_mask(out.join("contaminate/detected.imm")).unwrap();
    assert!(truth.is_empty());
    assert!(detected.masked_fraction() < 0.02, "{}", detected.masked_fraction());
    assert_eq!(
        sha256_file(&out.join("contaminate/contaminated.imc")).unwrap(),
        sha256_file(&out.join("sky/total.imc")).unwrap()
    );
}
