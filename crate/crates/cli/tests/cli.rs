//! End-to-end checks of the command surface: artifacts, exit codes and the
//! CSV/JSON formats, on deliberately tiny scenarios.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_abatement"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("abatement-cli-{tag}-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn tiny_config(dir: &Path, tax_section: &str) -> PathBuf {
    let text = format!(
        r#"{{
  "name": "tiny",
  "model": {{
    "econ": {{
      "discount_rate": 0.02, "depreciation": 0.05, "noise_vol": 0.05,
      "transaction_cost": 0.5, "horizon": 5.0, "max_output": 4.0,
      "fixed_output": 4.0
    }},
    "tech": {{ "kind": "filter", "input_coeff": 1.25, "input_cost": 1.0,
               "base_emission": 1.5, "abatement_slope": 0.5 }},
    "price": {{ "kind": "constant", "price": 5.0 }}
  }},
  "tax": {tax_section},
  "grid": {{ "x_min": -1.0, "x_max": 10.0, "n_x": 41, "n_t": 60 }},
  "sim": {{ "n_paths": 64, "n_steps": 40, "seed": 3, "checkpoints": [2.0, 5.0] }}
}}"#
    );
    let path = dir.join("tiny.json");
    fs::write(&path, text).unwrap();
    path
}

const CHAIN: &str = r#"{ "chain": { "states": [0.0, 0.2], "generator": [-0.25, 0.25, 0.0, 0.0], "initial_state": 0 } }"#;

#[test]
fn solve_writes_grid_policy_and_manifest() {
    let dir = tmp_dir("solve");
    let cfg = tiny_config(&dir, CHAIN);
    let out = bin()
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for file in ["tiny.grid.bin", "tiny.policy.csv", "tiny.manifest.json"] {
        assert!(dir.join(file).exists(), "missing {file}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("tiny.manifest.json")).unwrap()).unwrap();
    for key in [
        "config_hash",
        "seed",
        "library_version",
        "value_lipschitz",
        "control_cap",
        "grid_convergence",
    ] {
        assert!(manifest.get(key).is_some(), "manifest lacks {key}");
    }
    // the reported control cap follows from the reported Lipschitz bound
    let l_v = manifest["value_lipschitz"].as_f64().unwrap();
    let cap = manifest["control_cap"].as_f64().unwrap();
    let kappa = manifest["config"]["model"]["econ"]["transaction_cost"]
        .as_f64()
        .unwrap();
    let expect = 1.1 * (((l_v - 1.0).max(0.0)) / (2.0 * kappa)).max(1e-6);
    assert!(
        (cap - expect).abs() <= 1e-9 * expect,
        "cap {cap} vs {expect}"
    );
    let header = fs::read_to_string(dir.join("tiny.policy.csv")).unwrap();
    assert!(header.starts_with("t,x,y,tau_state,value,gamma,q\n"));
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn simulate_writes_ensemble_and_stats() {
    let dir = tmp_dir("simulate");
    let cfg = tiny_config(&dir, CHAIN);
    let out = bin()
        .args(["simulate", "--retain", "3", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let ensemble = fs::read_to_string(dir.join("tiny.ensemble.csv")).unwrap();
    assert!(ensemble.starts_with("path_id,t,x,y,tau,gamma,q,cum_emissions,cum_profit\n"));
    // three retained paths, 41 step times each
    assert_eq!(ensemble.lines().count(), 1 + 3 * 41);
    assert!(ensemble.ends_with('\n'));
    let stats = fs::read_to_string(dir.join("tiny.stats-investment.csv")).unwrap();
    assert!(stats.starts_with("variant,t2_q05,t2_mean,t2_q95,t2_benchmark,t5_q05,"));
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn table_emissions_has_kappa_rows_and_benchmark_column() {
    let dir = tmp_dir("table");
    let cfg = tiny_config(&dir, CHAIN);
    let out = bin()
        .args(["table", "emissions", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.join("tiny.table-emissions.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("kappa=0.2,"));
    assert!(lines[2].starts_with("kappa=0.5,"));
    // benchmark cells populated
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cells.len(), 9);
    assert!(!cells[4].is_empty() && !cells[8].is_empty());
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn figure_writes_svg_with_csv_sidecar_matching_series() {
    let dir = tmp_dir("figure");
    let cfg = tiny_config(&dir, CHAIN);
    let out = bin()
        .args(["figure", "single_traj", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let svg = fs::read_to_string(dir.join("single_traj.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.ends_with("</svg>"));
    let csv = fs::read_to_string(dir.join("single_traj.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "t,x_kappa_0.2,x_kappa_0.5,tau");
    assert_eq!(csv.lines().count(), 1 + 41);
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn empty_checkpoints_skip_the_svg() {
    let dir = tmp_dir("nocsvg");
    let text = fs::read_to_string(tiny_config(&dir, CHAIN)).unwrap();
    let text = text.replace("\"checkpoints\": [2.0, 5.0]", "\"checkpoints\": []");
    let cfg = dir.join("tiny2.json");
    fs::write(&cfg, text).unwrap();
    let out = bin()
        .args(["figure", "single_traj", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.join("single_traj.csv").exists());
    assert!(!dir.join("single_traj.svg").exists());
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn benchmark_reports_constants() {
    let dir = tmp_dir("bench");
    let out = bin()
        .args(["benchmark", "--preset", "filter_tax_increase"])
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("b = 0.0197"), "{stdout}");
    let manifest: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.join("filter_tax_increase.benchmark.json")).unwrap(),
    )
    .unwrap();
    let b = manifest["benchmark_slope"].as_f64().unwrap();
    assert!((b - 0.0197).abs() < 1e-4);
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_tax_section_exits_with_validation_code() {
    let dir = tmp_dir("notax");
    let text = r#"{ "model": {}, "sim": {} }"#;
    let cfg = dir.join("broken.json");
    fs::write(&cfg, text).unwrap();
    let out = bin()
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn degenerate_diffusion_exits_with_precondition_code() {
    let dir = tmp_dir("sigma0");
    let text = fs::read_to_string(tiny_config(&dir, CHAIN)).unwrap();
    let text = text.replace("\"noise_vol\": 0.05", "\"noise_vol\": 0.0");
    let cfg = dir.join("tiny3.json");
    fs::write(&cfg, text).unwrap();
    let out = bin()
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("viscosity"), "{stderr}");
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_figure_and_preset_are_validation_failures() {
    let dir = tmp_dir("unknown");
    let out = bin()
        .args(["figure", "nope", "--preset", "filter_tax_increase"])
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin()
        .args(["solve", "--preset", "nope"])
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn out_dir_falls_back_to_environment_variable() {
    let dir = tmp_dir("envout");
    let out = bin()
        .args(["benchmark", "--preset", "filter_tax_reversal"])
        .env("ABATEMENT_OUT", &dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.join("filter_tax_reversal.benchmark.json").exists());
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn seed_and_paths_overrides_reach_the_manifest() {
    let dir = tmp_dir("override");
    let cfg = tiny_config(&dir, CHAIN);
    let out = bin()
        .args(["simulate", "--seed", "99", "--paths", "16", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("tiny.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"].as_u64(), Some(99));
    assert_eq!(manifest["config"]["sim"]["n_paths"].as_u64(), Some(16));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("simulated 16 paths"));
    fs::remove_dir_all(&dir).ok();
}
