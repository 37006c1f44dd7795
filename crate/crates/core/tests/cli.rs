use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use aet_core::mesh::{GammaPreset, Mesh};

fn aet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aet")).current_dir(dir).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

const SMALL: &str = "[geometry]\ntarget_h = 0.12\n[gamma]\npreset = \"medium\"\n[sigma]\ncase = 2\n[noise]\nalpha_percent = 5.0\n";

#[test]
fn forward_then_reconstruct_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "c.toml", SMALL);
    assert!(aet(d, &["--config", "c.toml", "--out", "run", "-q", "run"]).status.success());
    assert!(aet(d, &["--config", "c.toml", "--out", "fw", "-q", "forward"]).status.success());
    assert!(aet(d, &["--config", "c.toml", "--out", "rc", "-q", "reconstruct", "--data", "fw"]).status.success());
    for f in ["results.csv", "fields.csv", "fields.vtk"] {
        assert_eq!(fs::read(d.join("run").join(f)).unwrap(), fs::read(d.join("rc").join(f)).unwrap(), "{f}");
    }
    for f in ["data.csv", "meta.toml", "recon_mesh.txt"] {
        assert_eq!(fs::read(d.join("run").join(f)).unwrap(), fs::read(d.join("fw").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_flag_changes_noisy_results() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "c.toml", SMALL);
    assert!(aet(d, &["--config", "c.toml", "--out", "a", "-q", "run"]).status.success());
    assert!(aet(d, &["--config", "c.toml", "--out", "b", "-q", "--seed", "51", "run"]).status.success());
    let a = fs::read_to_string(d.join("a/results.csv")).unwrap();
    let b = fs::read_to_string(d.join("b/results.csv")).unwrap();
    assert_ne!(a, b);
    assert!(b.lines().nth(1).unwrap().contains(",51,"));
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "empty_arc.toml", "gamma.arcs = [[1.0, 1.0]]\n");
    write(d, "unknown.toml", "[geometry]\nmesh_size = 0.1\n");
    for cfg in ["empty_arc.toml", "unknown.toml", "missing.toml"] {
        let out = aet(d, &["--config", cfg, "run"]);
        assert_eq!(out.status.code(), Some(1), "{cfg}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    }
    let out = aet(d, &["--config", "unknown.toml", "run"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("geometry.mesh_size"));
    assert_eq!(aet(d, &["--no-such-flag", "run"]).status.code(), Some(1));
    assert_eq!(aet(d, &["reconstruct", "--data", "nowhere"]).status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "c.toml", "geometry.target_h = 0.2\nsolver.max_iter = 2\nsolver.method = \"pcg\"\n");
    let out = aet(d, &["--config", "c.toml", "run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("converge"));
}

#[test]
fn export_mesh_writes_tagged_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "c.toml", "geometry.target_h = 0.1\ngamma.preset = \"small\"\n");
    let out = aet(d, &["--config", "c.toml", "--out", "m", "export-mesh"]);
    assert!(out.status.success());
    let mesh = Mesh::read_text(std::io::BufReader::new(fs::File::open(d.join("m/mesh.txt")).unwrap())).unwrap();
    let measure = GammaPreset::Small.spec().measure();
    assert!((mesh.dirichlet_length() - measure).abs() < 0.1);
    let vtk = fs::read_to_string(d.join("m/mesh.vtk")).unwrap();
    assert!(vtk.contains("SCALARS dirichlet double 1"));
}

#[test]
fn external_data_without_meta_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "c.toml", "geometry.target_h = 0.2\n");
    assert!(aet(d, &["--config", "c.toml", "--out", "fw", "-q", "forward"]).status.success());
    fs::remove_file(d.join("fw/meta.toml")).unwrap();
    assert_eq!(aet(d, &["--out", "rc", "reconstruct", "--data", "fw"]).status.code(), Some(1));
}
