use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const KRONECKER: &str = "[model]\nkind = \"flat\"\nid = \"kronecker\"\nspan = [[1, \"sqrt(2)\"]]\n";

fn run(args: &[&str], config: &str, dir: &Path) -> Output {
    let path = dir.join("config.toml");
    fs::write(&path, config).unwrap();
    let out = dir.join("out");
    Command::new(env!("CARGO_BIN_EXE_adiabatic"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir.join("out"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    v.sort();
    v
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(str::to_string)
        .collect()
}

fn spectrum_file(dir: &Path) -> PathBuf {
    files(dir)
        .into_iter()
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("spectrum_"))
        .unwrap()
}

#[test]
fn minimal_flat_config_starts_with_the_zero_mode() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("h_schedule = [1.0]\n{KRONECKER}");
    let out = run(&["spectrum"], &config, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let spectra: Vec<_> = files(dir.path())
        .into_iter()
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("spectrum_"))
        .collect();
    assert_eq!(spectra.len(), 1);
    assert_eq!(data_rows(&spectra[0])[0], "0.0000000000000000e0,1");
}

#[test]
fn kronecker_multiplicities_add_up_to_the_box_count() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("h_schedule = [0.05]\n{KRONECKER}[spectrum]\nlambda_max = 100.0\n");
    let out = run(&["spectrum"], &config, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let total: u64 = data_rows(&spectrum_file(dir.path()))
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().parse::<u64>().unwrap())
        .sum();

    // brute-force count over a box, direction (1, √2)/√3
    let h: f64 = 0.05;
    let r = (10.0 / (2.0 * PI * h)).ceil() as i64 + 1;
    let mut oracle = 0;
    for a in -r..=r {
        for b in -r..=r {
            let along = (a as f64 + b as f64 * 2f64.sqrt()) / 3f64.sqrt();
            let rest = (a * a + b * b) as f64 - along * along;
            if 4.0 * PI * PI * (along * along + h * h * rest) <= 100.0 {
                oracle += 1;
            }
        }
    }
    assert_eq!(total, oracle);
}

#[test]
fn zero_scale_is_rejected_by_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["spectrum"], &format!("h_schedule = [0.0]\n{KRONECKER}"), dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("h_schedule[0]"), "{err}");
}

#[test]
fn x_dependent_transverse_metric_fails_verify() {
    let dir = tempfile::tempdir().unwrap();
    let config =
        "[model]\nkind = \"fibered\"\nid = \"twisted\"\na = \"1\"\nb = \"1 + 0.2*cos(2*pi*x)\"\nnx = 8\nny = 8\n";
    let out = run(&["verify"], config, dir.path());
    assert_eq!(out.status.code(), Some(12));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("not bundle-like"), "{table}");
}

#[test]
fn two_point_schedule_surfaces_insufficient_data() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("h_schedule = [0.2, 0.1]\n{KRONECKER}");
    let out = run(&["verify"], &config, dir.path());
    assert_eq!(out.status.code(), Some(13));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("insufficient data"), "{table}");
}

#[test]
fn outputs_are_deterministic_and_carry_provenance() {
    let config = "seed = 3\nh_schedule = [0.4, 0.2, 0.1]\nlambda_grid = { start = 0.0, stop = 80.0, count = 5 }\n\
     [model]\nkind = \"fibered\"\nid = \"varying\"\n\
     a = \"1 + 0.3*cos(2*pi*x)*cos(2*pi*y)\"\nb = \"1 + 0.5*sin(2*pi*y)*sin(2*pi*y)\"\nnx = 16\nny = 16\n\
     [sweep]\ncount = 30\n[branches]\ncount = 3\n[heat]\ncount = 30\n";
    let sha = hex::encode(Sha256::digest(config.as_bytes()));
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for cmd in ["spectrum", "sweep", "heat", "branches"] {
        let one = run(&[cmd, "--workers", "1"], config, a.path());
        assert!(one.status.success(), "{cmd}: {}", String::from_utf8_lossy(&one.stderr));
        let many = run(&[cmd, "--workers", "4"], config, b.path());
        assert!(many.status.success());
    }
    let fa = files(a.path());
    let fb = files(b.path());
    assert_eq!(fa.len(), fb.len());
    assert!(fa.len() >= 9);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        let text = fs::read_to_string(x).unwrap();
        assert_eq!(text, fs::read_to_string(y).unwrap(), "{}", x.display());
        assert!(text.contains(&sha), "{}", x.display());
        assert!(text.contains(adiabatic_cli::TOOL), "{}", x.display());
    }
}

#[test]
fn sweep_on_the_fibration_has_no_flagged_cells() {
    let dir = tempfile::tempdir().unwrap();
    let config = "lambda_grid = [-5.0, 10.0, 50.0]\n[model]\nkind = \"flat\"\nid = \"axis\"\nspan = [[1, 0]]\n";
    let out = run(&["sweep"], config, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sweep = files(dir.path())
        .into_iter()
        .find(|p| p.extension().unwrap() == "csv")
        .unwrap();
    let rows = data_rows(&sweep);
    assert_eq!(rows.len(), 4 * 3);
    assert!(rows.iter().all(|r| r.split(',').nth(5) == Some("false")));
    // below the spectrum the count is zero
    assert_eq!(rows[0].split(',').nth(2), Some("0"));
}
