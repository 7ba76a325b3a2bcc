use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const REFERENCE: &str = r#"
seed = 5

[model]
heating = 1.0
cooling = 1.1
comfort_levels = [50.0, 100.0]
wind = { two_state = [0.04, 0.04] }
comfort = { two_state = [0.02, 0.02] }

[solver]
curve_intervals = 100

[simulate]
loads = 20
jumps = 5000

[cftp]
samples = 50

[heuristic]
loads = 10
jumps = 3000
max_level = 1
max_steps_per_level = 6

[hjb]
grid_step = 10.0
horizon = 20.0
loads = 4
sim_horizon = 50.0

[compare]
loads = [5]
jumps = 3000
"#;

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("experiment.toml");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_zpolicy"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .output()
        .unwrap()
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn distribution_reports_conservation() {
    let dir = scratch("distribution");
    let out = dir.join("out");
    let o = run(&dir, REFERENCE, &["distribution", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("conservation.json")).unwrap()).unwrap();
    let r = &report["result"];
    assert!(r["max_flux_residual"].as_f64().unwrap() <= 1e-8);
    assert!((r["total_mass"].as_f64().unwrap() - 1.0).abs() <= 1e-8);
    assert_eq!(report["provenance"]["seed"], 5);
    assert!(out.join("density.csv").exists() && out.join("masses.csv").exists());
}

#[test]
fn set_point_out_of_range_is_a_computation_failure() {
    let dir = scratch("bad_z");
    let config = format!("{REFERENCE}\n[distribution]\nz = 150.0\n");
    let o = run(&dir, &config, &["distribution", "--out", dir.join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("InvalidSetPoint"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = scratch("usage");
    let out = dir.join("out");
    let unknown = REFERENCE.replace("[solver]", "[solver]\ntolerance = 1.0");
    assert_eq!(run(&dir, &unknown, &["curves", "--out", out.to_str().unwrap()]).status.code(), Some(1));
    let o = Command::new(env!("CARGO_BIN_EXE_zpolicy")).arg("curves").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = Command::new(env!("CARGO_BIN_EXE_zpolicy")).arg("plot").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn three_wind_states_give_six_density_states() {
    let dir = scratch("ternary");
    let out = dir.join("out");
    let config = REFERENCE.replace("{ two_state = [0.04, 0.04] }", "{ birth_death = { up = [0.04, 0.04], down = [0.04, 0.04] } }");
    let o = run(&dir, &config, &["distribution", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let states: BTreeSet<String> = data_rows(&out.join("density.csv")).into_iter().map(|r| r[1].clone()).collect();
    assert_eq!(states.len(), 6);
}

#[test]
fn three_comfort_levels_record_halving_brackets() {
    let dir = scratch("three_level");
    let out = dir.join("out");
    let config = REFERENCE
        .replace("[50.0, 100.0]", "[40.0, 70.0, 100.0]")
        .replace("{ two_state = [0.02, 0.02] }", "{ birth_death = { up = [0.02, 0.02], down = [0.02, 0.02] } }")
        .replace("[model]", "[model]\ncost_model = \"paper\"");
    let o = run(&dir, &config, &["optimize", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let widths: Vec<f64> = data_rows(&out.join("fixed_point.csv"))
        .iter()
        .map(|r| r[5].parse::<f64>().unwrap() - r[4].parse::<f64>().unwrap())
        .collect();
    assert!(!widths.is_empty());
    for w in widths.windows(2) {
        assert!(w[1] <= w[0] / 2.0 + 1e-15, "{w:?}");
    }
}

#[test]
fn zero_discomfort_weight_still_optimizes() {
    let dir = scratch("gamma0");
    let out = dir.join("out");
    let config = REFERENCE.replace("[solver]", "[solver]\ngamma = 0.0");
    let o = run(&dir, &config, &["optimize", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let u: Vec<f64> = data_rows(&out.join("u_star.csv"))
        .iter()
        .filter(|r| r[2] == "node")
        .map(|r| r[1].parse().unwrap())
        .collect();
    assert!(u.windows(2).all(|w| w[0] <= w[1]));
    assert!(u.iter().all(|x| (0.0..=1.0).contains(x)));
}

#[test]
fn seed_flag_overrides_and_is_recorded() {
    let dir = scratch("seed");
    let out = dir.join("out");
    let o = run(&dir, REFERENCE, &["simulate", "--seed", "11", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("simulate.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["provenance"]["seed"], 11);
    assert_eq!(report["provenance"]["config_sha256"].as_str().unwrap().len(), 64);
    assert!(report["result"]["analytic"]["total"].as_f64().unwrap() > 0.0);
}

#[test]
fn hjb_emits_surfaces() {
    let dir = scratch("hjb");
    let out = dir.join("out");
    let o = run(&dir, REFERENCE, &["hjb", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let n = 11;
    assert_eq!(data_rows(&out.join("values.csv")).len(), 4 * n * n);
    assert_eq!(data_rows(&out.join("policy.csv")).len(), 4 * n * n);
}
