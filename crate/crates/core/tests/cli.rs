use cutoff_wave::cli::{ExperimentManifest, CliError};
use std::fs;
use std::path::Path;
use std::process::Command;

const BASE: &str = r#"
command = "eig"
seed = 17
output_dir = "OUT"
m = 3
theta = 0.25
temperature1 = 1.0
temperature2 = 2.0
nonlinearity = "tanh"
gamma = 0.5
coupling_scale = 0.3
amplitude_ratio = 0.7
phase_offset = 0.7
"#;

fn manifest(dir: &Path, extra: &str) -> String {
    format!("{}{extra}", BASE.replace("OUT", dir.to_str().unwrap()))
}

fn run_bin(dir: &Path, manifest_text: &str, args: &[&str]) -> std::process::Output {
    let path = dir.join("manifest.toml");
    fs::write(&path, manifest_text).unwrap();
    Command::new(env!("CARGO_BIN_EXE_cutoff-wave"))
        .args(args)
        .arg("--manifest")
        .arg(&path)
        .output()
        .unwrap()
}

#[test]
fn manifest_round_trips_and_hash_is_stable() {
    let m = ExperimentManifest::from_toml(&manifest(Path::new("/tmp/x"), "")).unwrap();
    let again = ExperimentManifest::from_toml(&m.to_toml()).unwrap();
    assert_eq!(m, again);
    assert_eq!(m.hash(), again.hash());
    assert_eq!(m.hash().len(), 16);
    let other = ExperimentManifest::from_toml(&manifest(Path::new("/tmp/x"), "h = 0.02\n")).unwrap();
    assert_ne!(m.hash(), other.hash());
}

#[test]
fn physics_fields_are_required() {
    let text = manifest(Path::new("/tmp/x"), "").replace("phase_offset = 0.7\n", "");
    assert!(matches!(ExperimentManifest::from_toml(&text), Err(CliError::Parse(_))));
}

#[test]
fn bad_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        manifest(dir.path(), "unknown_field = 1\n"),
        manifest(dir.path(), "").replace("theta = 0.25", "theta = 0.6"),
        manifest(dir.path(), "").replace("nonlinearity = \"tanh\"", "nonlinearity = \"zero\""),
        manifest(dir.path(), "h = -0.1\n").replace("command = \"eig\"", "command = \"simulate\""),
    ];
    for text in cases {
        let out = run_bin(dir.path(), &text, &["eig"]);
        assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn artifacts_carry_the_manifest_hash_and_rerun_identically() {
    let dir = tempfile::tempdir().unwrap();
    let text = manifest(dir.path(), "t_sample = 20.0\nn_ensemble = 4\nt_burn = 1.0\nh = 0.02\n");
    let first = run_bin(dir.path(), &text, &["simulate"]);
    assert!(first.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&first.stderr));
    let mut m = ExperimentManifest::from_toml(&text).unwrap();
    m.command = cutoff_wave::cli::Command::Simulate;
    let out_dir = cutoff_wave::cli::output_dir_for(&m);
    assert!(out_dir.join("manifest.toml").exists());
    let csvs: Vec<_> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    assert!(!csvs.is_empty());
    let snapshot: Vec<Vec<u8>> = csvs.iter().map(|p| fs::read(p).unwrap()).collect();
    for bytes in &snapshot {
        let head = String::from_utf8_lossy(bytes).lines().next().unwrap().to_string();
        assert_eq!(head, format!("# manifest {} seed 17", m.hash()));
    }
    let second = run_bin(dir.path(), &text, &["simulate"]);
    assert_eq!(first.status.code(), second.status.code());
    for (p, bytes) in csvs.iter().zip(&snapshot) {
        assert_eq!(&fs::read(p).unwrap(), bytes, "{}", p.display());
    }
}

#[test]
fn eig_command_passes_on_a_small_cutoff() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_bin(dir.path(), &manifest(dir.path(), ""), &["eig"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().count() >= 2 && stdout.lines().all(|l| l.starts_with('{')));
}

#[test]
fn sweep_writes_plateau_table() {
    let dir = tempfile::tempdir().unwrap();
    let text = manifest(dir.path(), "m_sweep = [8, 16, 32, 64]\n")
        .replace("nonlinearity = \"tanh\"", "nonlinearity = \"zero\"")
        .replace("gamma = 0.5", "gamma = 0.0");
    let out = run_bin(dir.path(), &text, &["sweep"]);
    assert!(out.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&out.stderr));
    let mut m = ExperimentManifest::from_toml(&text).unwrap();
    m.command = cutoff_wave::cli::Command::Sweep;
    let table = fs::read_to_string(cutoff_wave::cli::output_dir_for(&m).join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    // Hash line, header, one row per cutoff.
    assert_eq!(lines.len(), 2 + 4, "{table}");
    for name in ["s1", "s2", "s3"] {
        assert!(lines[1].to_lowercase().contains(name), "{}", lines[1]);
    }
}
