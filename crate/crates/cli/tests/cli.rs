use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ftlnet"));
    cmd.env_remove("FTLNET_SEED");
    cmd
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

const TINY: &str = r#"
name = "tiny"
t_final = 20.0
[network]
roads = [{ id = 1, length = 40.0 }, { id = 3, length = 40.0 }, { id = 4, length = 40.0 }]
junctions = [{ id = 0, inc = [1], out = [3, 4] }]
[[turning]]
from = 1
to = 3
p = 0.5
[[turning]]
from = 1
to = 4
p = 0.5
[[initial]]
road = 1
density = 0.5
[micro]
ell_n = 1.0
dt = 0.2
seed = 3
[macro]
cells_per_road = 4
dt = 2.0
[convergence]
seeds = 3
ladder = [{ ell_n = 2.0, dt = 0.5 }, { ell_n = 1.0, dt = 0.2 }]
"#;

fn tiny(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, text).unwrap();
    path
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn validate_shipped_configs() {
    for name in ["merge.toml", "diverge.toml", "cross2x2.toml"] {
        let out = ok(bin().arg("validate").arg("--config").arg(shipped(name)).output().unwrap());
        assert!(out.ends_with("ok\n"), "{out}");
    }
}

#[test]
fn invalid_config_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), &TINY.replace("p = 0.5\n[[turning]]", "p = 0.6\n[[turning]]"));
    let out = bin().args(["run-macro", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error"), "{err}");

    let out = bin().args(["validate", "--config", "/nonexistent.toml"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn run_macro_writes_profile_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), &TINY.replace("t_final = 20.0", "t_final = 0.0"));
    let out_dir = dir.path().join("macro");
    ok(bin().args(["run-macro", "--config"]).arg(&cfg).arg("--out").arg(&out_dir).output().unwrap());
    let csv = fs::read_to_string(out_dir.join("macro_profile.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("road_id,cell_index,x_left,density"));
    assert_eq!(lines.next(), Some("1,0,0,0.5"));
    assert_eq!(lines.next(), Some("1,1,10,0.5"));
    assert_eq!(csv.lines().count(), 1 + 3 * 4);
    assert!(csv.ends_with("\n4,3,30,0\n"));
    assert!(out_dir.join("macro_summary.json").exists());
}

#[test]
fn run_micro_with_trajectories_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), TINY);
    let out_dir = dir.path().join("micro");
    let stdout = ok(bin()
        .args(["run-micro", "--trajectories", "--snapshots", "5,10", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap());
    assert!(stdout.starts_with("vehicles 20 "), "{stdout}");
    for f in ["micro_profile.csv", "micro_summary.json", "trajectories.csv", "micro_profile_t5.csv", "micro_profile_t10.csv"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let traj = fs::read_to_string(out_dir.join("trajectories.csv")).unwrap();
    assert_eq!(traj.lines().next(), Some("step,time,label,path_id,path_coordinate,active"));
    // first vehicle sits at x = 2 on road 1, on whichever path it drew
    let first = traj.lines().nth(1).unwrap();
    assert!(first.starts_with("0,0,0,") && first.ends_with(",2,1"), "{first}");
}

#[test]
fn seed_comes_from_flag_or_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), TINY);
    let summary = |out: &Path| fs::read_to_string(out.join("micro_summary.json")).unwrap();

    let a = dir.path().join("a");
    ok(bin().args(["run-micro", "--seed", "11", "--config"]).arg(&cfg).arg("--out").arg(&a).output().unwrap());
    assert!(summary(&a).contains("\"seed\": 11"));

    let b = dir.path().join("b");
    ok(bin().env("FTLNET_SEED", "12").args(["run-micro", "--config"]).arg(&cfg).arg("--out").arg(&b).output().unwrap());
    assert!(summary(&b).contains("\"seed\": 12"));

    let c = dir.path().join("c");
    ok(bin().args(["run-micro", "--config"]).arg(&cfg).arg("--out").arg(&c).output().unwrap());
    assert!(summary(&c).contains("\"seed\": 3"));
}

#[test]
fn compare_writes_l1_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), TINY);
    let out_dir = dir.path().join("cmp");
    let stdout = ok(bin().args(["compare", "--config"]).arg(&cfg).arg("--out").arg(&out_dir).output().unwrap());
    let csv = fs::read_to_string(out_dir.join("l1.csv")).unwrap();
    assert_eq!(csv, stdout);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "road_id,L1");
    assert_eq!(lines.len(), 1 + 3 + 1);
    assert!(lines[4].starts_with("total,"));
    let sum: f64 = lines[1..4].iter().map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    let total: f64 = lines[4][6..].parse().unwrap();
    assert!((sum - total).abs() <= 1e-9 * total.max(1.0));
}

#[test]
fn converge_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), TINY);
    let out_dir = dir.path().join("conv");
    let mut tables = Vec::new();
    for exec in ["sequential", "parallel"] {
        let stdout = ok(bin()
            .args(["converge", "--execution", exec, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap());
        let lines: Vec<&str> = stdout.lines().collect();
        assert_eq!(lines[0], "ell_n,dt,seeds,mean_L1,std_L1");
        assert!(lines[1].starts_with("2,0.5,3,"));
        assert!(lines[2].starts_with("1,0.2,3,"));
        assert_eq!(fs::read_to_string(out_dir.join("convergence.csv")).unwrap(), stdout);
        tables.push(stdout);
    }
    assert_eq!(tables[0], tables[1]);
}
