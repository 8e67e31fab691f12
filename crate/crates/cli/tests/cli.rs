use std::path::Path;
use std::process::{Command, Output};

fn efc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_efc")).args(args).output().expect("spawn efc")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn malformed_arguments_exit_one() {
    assert_eq!(code(&efc(&[])), 1);
    assert_eq!(code(&efc(&["run", "three_bus_tiny"])), 1);
    assert_eq!(code(&efc(&["run", "three_bus_tiny", "--out", "x", "--law", "central"])), 1);
    assert_eq!(code(&efc(&["--help"])), 0);
}

#[test]
fn bad_scenarios_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let empty = write(dir.path(), "empty.toml", "");
    let broken = write(dir.path(), "broken.toml", "name = \"x\"\n[integration\n");
    let invalid = write(
        dir.path(),
        "invalid.toml",
        "name = \"x\"\n[integration]\nt_end = 1.0\ndt = 0.01\n[[bus]]\nid = 1\nkind = \"passive\"\np_in = 0.0\n",
    );
    for path in [&empty, &broken, &invalid] {
        let o = efc(&["run", path, "--out", out]);
        assert_eq!(code(&o), 1, "{path}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(code(&efc(&["run", "no_such_scenario", "--out", out])), 1);
    assert_eq!(code(&efc(&["run", "three_bus_tiny", "--out", out, "--t-end", "-3"])), 1);
    assert_eq!(code(&efc(&["oracle", &invalid, "--out", out])), 1);
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = efc(&["run", "three_bus_tiny", "--out", out.to_str().unwrap(), "--t-end", "20", "--law", "semi", "--dead-zone", "off"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["plant.csv", "controller.csv", "lyapunov.csv", "limits.csv", "report.toml", "plot_frequency.py"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report = std::fs::read_to_string(out.join("report.toml")).unwrap();
    assert!(report.contains("law_mode = \"semi\""));
}

#[test]
fn constraints_toggle_reaches_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = efc(&["run", "three_bus_tiny", "--out", out.to_str().unwrap(), "--t-end", "5", "--constraints", "off"]);
    assert_eq!(code(&o), 0);
    let report = std::fs::read_to_string(out.join("report.toml")).unwrap();
    assert!(report.contains("constraints = false"));
}

#[test]
fn oracle_writes_solution() {
    let dir = tempfile::tempdir().unwrap();
    let o = efc(&["oracle", "three_bus_tiny", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(dir.path().join("oracle.toml")).unwrap();
    assert!(text.contains("active_set = [\"3_2:upper\"]"), "{text}");
}

#[test]
fn plot_without_render_writes_scripts() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&efc(&["plot", dir.path().to_str().unwrap(), "--no-render"])), 1);
    std::fs::write(dir.path().join("plant.csv"), "time,f_bus1\n").unwrap();
    assert_eq!(code(&efc(&["plot", dir.path().to_str().unwrap()])), 0);
    assert!(!dir.path().join("plot_frequency.py").exists());
}

#[test]
fn check_passes_on_the_small_scenario() {
    let o = efc(&["check", "three_bus_tiny"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with('[')).count(), 11);
    assert!(!stdout.contains("[FAIL]"));
}

#[test]
fn plot_renders_when_matplotlib_is_available() {
    let has_mpl = Command::new("python3").args(["-c", "import matplotlib"]).status().is_ok_and(|s| s.success());
    if !has_mpl {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&efc(&["run", "three_bus_tiny", "--out", out, "--t-end", "10"])), 0);
    let o = efc(&["plot", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for png in ["frequency.png", "lcc_power.png", "line_flows.png", "allocation.png"] {
        assert!(dir.path().join(png).exists(), "{png}");
    }
}
