use std::path::Path;
use std::process::{Command, Output};

use physmri::fusion::GaussianFactor;
use physmri::qmap::BRAIN2D_TISSUES;
use physmri::{PropertyMap, Volume};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_physmri")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["phantom", "--preset", "brain2d", "--dims", "32x24", "--out", "p.pvol"]);
    assert_eq!(code(&run(d, &["phantom", "--preset", "brain2d"])), 2);
    let se_with_ti =
        ["synth", "--props", "p.pvol", "--seq", "se", "--te", "0.08", "--tr", "4", "--ti", "1", "--out", "x.pvol"];
    assert_eq!(code(&run(d, &se_with_ti)), 2);
    let flair_no_ti = ["synth", "--props", "p.pvol", "--seq", "flair", "--te", "0.1", "--tr", "9", "--out", "x.pvol"];
    assert_eq!(code(&run(d, &flair_no_ti)), 2);
    let te_after_tr = ["synth", "--props", "p.pvol", "--seq", "se", "--te", "5", "--tr", "4", "--out", "x.pvol"];
    assert_eq!(code(&run(d, &te_after_tr)), 2);
    let millis = ["synth", "--props", "p.pvol", "--seq", "se", "--te", "80", "--tr", "4000", "--out", "x.pvol"];
    assert_eq!(code(&run(d, &millis)), 2);
    assert_eq!(code(&run(d, &["fit", "--out", "f.pvol"])), 2);
    let missing = ["synth", "--props", "nope.pvol", "--seq", "se", "--te", "0.08", "--tr", "4", "--out", "x.pvol"];
    assert_eq!(code(&run(d, &missing)), 2);
    assert!(!d.join("x.pvol").exists());
}

#[test]
fn flair_nulls_fluid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["phantom", "--preset", "brain2d", "--dims", "64x48", "--out", "p.pvol"]);
    let ti = format!("{}", BRAIN2D_TISSUES.fluid.t1 * std::f64::consts::LN_2);
    ok(
        d,
        &["synth", "--props", "p.pvol", "--seq", "flair", "--te", "0.1", "--tr", "90", "--ti", &ti, "--out", "f.pvol"],
    );
    let props = PropertyMap::load(d.join("p.pvol")).unwrap();
    let img = Volume::load(d.join("f.pvol")).unwrap();
    let (mut fluid, mut tissue) = (0.0f64, f64::INFINITY);
    for (i, &s) in img.data().iter().enumerate() {
        let (pd, t1, _) = props.voxel(i);
        if t1 == BRAIN2D_TISSUES.fluid.t1 {
            fluid = fluid.max(s.abs());
        } else if pd > 0.0 {
            tissue = tissue.min(s.abs());
        }
    }
    assert!(fluid < 0.05 * tissue, "fluid {fluid}, tissue {tissue}");
}

#[test]
fn fuse_two_experts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    GaussianFactor::new(vec![0.0], vec![1.0]).unwrap().save(d.join("a.gauss")).unwrap();
    GaussianFactor::new(vec![2.0], vec![1.0]).unwrap().save(d.join("b.gauss")).unwrap();
    let stdout = ok(d, &["fuse", "a.gauss", "b.gauss", "--out", "ab.gauss"]);
    assert!(stdout.contains("fused 2 of 2"));
    let fused = GaussianFactor::load(d.join("ab.gauss")).unwrap();
    assert_eq!(fused.mean(), &[1.0]);
    assert_eq!(fused.variance(), &[0.5]);
    ok(d, &["fuse", "a.gauss", "b.gauss", "--keep", "1,0", "--out", "a2.gauss"]);
    let a = GaussianFactor::load(d.join("a2.gauss")).unwrap();
    assert_eq!((a.mean(), a.variance()), (&[0.0][..], &[1.0][..]));
    assert_eq!(code(&run(d, &["fuse", "a.gauss", "b.gauss", "--keep", "0,0", "--out", "z.gauss"])), 2);
}

#[test]
fn metrics_on_identical_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["phantom", "--preset", "brain2d", "--dims", "200x180", "--out", "p.pvol"]);
    ok(d, &["synth", "--props", "p.pvol", "--seq", "se", "--te", "0.08", "--tr", "4", "--out", "s.pvol"]);
    let stdout = ok(d, &["metrics", "--a", "s.pvol", "--b", "s.pvol", "--out", "m.json"]);
    assert!(stdout.contains("MSE=0\n"), "{stdout}");
    assert!(stdout.contains("PSNR=inf\n"), "{stdout}");
    assert!(stdout.contains("MS-SSIM=1\n"), "{stdout}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    assert_eq!(report["mse"], 0.0);
    assert_eq!(report["ms_ssim"], 1.0);
    assert_eq!(report["psnr_infinite"], true);
}

#[test]
fn fit_and_validate_recover_reference_medians() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["phantom", "--preset", "brain2d", "--dims", "48x40", "--out", "p.pvol"]);
    ok(
        d,
        &[
            "synth", "--props", "p.pvol", "--seq", "mprage", "--te", "0.003", "--tr", "2.3", "--ti", "0.9", "--out",
            "m.pvol",
        ],
    );
    ok(d, &["synth", "--props", "p.pvol", "--seq", "se", "--te", "0.08", "--tr", "4", "--out", "s.pvol"]);
    ok(
        d,
        &["synth", "--props", "p.pvol", "--seq", "flair", "--te", "0.1", "--tr", "9", "--ti", "2.4", "--out", "f.pvol"],
    );
    let inputs = ["m.pvol:mprage,0.003,2.3,0.9", "s.pvol:se,0.08,4", "f.pvol:flair,0.1,9,2.4"];
    let mut args = vec!["fit", "--lambda", "1e-10", "--strict", "--out", "fit.pvol", "--inputs"];
    args.extend(inputs);
    ok(d, &args);
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("fit.pvol.json")).unwrap()).unwrap();
    assert_eq!(diag["voxels"], 48 * 40);
    assert!(diag["convergence_rate"].as_f64().unwrap() > 0.99);

    ok(d, &["validate", "--props", "fit.pvol", "--out", "report.csv"]);
    let csv = std::fs::read_to_string(d.join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("label,channel,median_fit,median_ref,abs_diff"));
    let mut checked = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f[0] == "all" {
            continue;
        }
        let fit: f64 = f[2].parse().unwrap();
        let reference: f64 = f[3].parse().unwrap();
        assert!((fit - reference).abs() <= 0.01 * reference, "{line}");
        checked += 1;
    }
    assert_eq!(checked, 4);
    for ch in ["t1", "t2"] {
        let hist = std::fs::read_to_string(d.join(format!("report_{ch}.csv"))).unwrap();
        assert!(hist.starts_with("bin_center,count\n"));
    }
}

#[test]
fn strict_fit_flags_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    Volume::scalar([2, 1, 1], "signal", vec![0.4, 0.5]).unwrap().save(d.join("s.pvol")).unwrap();
    let args = ["fit", "--inputs", "s.pvol:se,0.08,4", "--max-iterations", "1", "--strict", "--out", "fit.pvol"];
    assert_eq!(code(&run(d, &args)), 3);
    assert!(d.join("fit.pvol").exists());
}

#[test]
fn diffusion_commands_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["diffuse", "mixture", "--count", "64", "--seed", "1", "--out", "data.latn"]);
    let args = [
        "diffuse",
        "train",
        "--data",
        "data.latn",
        "--epochs",
        "2",
        "--hidden",
        "8,8",
        "--steps",
        "50",
        "--beta-end",
        "0.2",
        "--out",
        "model.mlp",
    ];
    ok(d, &args);
    let loss = std::fs::read_to_string(d.join("model.mlp.loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);
    ok(d, &["diffuse", "sample", "--model", "model.mlp", "--count", "10", "--seed", "4", "--out", "s.latn"]);
    let set = physmri::diffusion::LatentSet::load(d.join("s.latn")).unwrap();
    assert_eq!((set.count(), set.dim()), (10, 2));
}
