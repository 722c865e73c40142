use std::path::PathBuf;
use std::process::{Command, Output};

fn mars(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mars"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mars-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn abstract_csv_lists_both_modes() {
    let o = mars(&["abstract", "--grid", "2x2", "--format", "csv"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# mars-abstract v1 digest="));
    assert!(lines[1].starts_with("mode,yaw,c_vz"));
    assert!(lines[2].starts_with("equal,"));
    assert!(lines[3].starts_with("unequal,"));
}

#[test]
fn simulate_csv_is_byte_identical_across_runs() {
    let args = [
        "simulate",
        "--grid",
        "2x1",
        "--duration",
        "0.2",
        "--format",
        "csv",
        "--seed",
        "3",
        "--jitter",
        "0.01",
    ];
    let a = mars(&args);
    let b = mars(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# mars-sim csv v1"));
    let header = lines.next().unwrap();
    assert!(header.starts_with("t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz,F,Mx,My,Mz,f_1,"));
    assert!(header.ends_with("f_8,alloc_feasible,alloc_iters"));
    // duration / dt + 1 rows
    assert_eq!(lines.count(), 101);
}

#[test]
fn out_directory_receives_report() {
    let dir = scratch("out");
    let o = mars(&[
        "simulate",
        "--scenario",
        "hover",
        "--duration",
        "0.1",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let report = std::fs::read_to_string(dir.join("simulate.txt")).unwrap();
    assert!(report.contains("mean abs position error"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn allocate_reports_feasible_forces() {
    let o = mars(&[
        "allocate",
        "--grid",
        "2x1",
        "--wrench",
        "30,0.5,-0.2,0.05",
        "--format",
        "csv",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("# mars-allocate v1 feasible=1"));
    let forces: f64 = text
        .lines()
        .skip(2)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((forces - 30.0).abs() < 1e-8);
}

#[test]
fn exit_codes() {
    // infeasible wrench
    assert_eq!(mars(&["allocate", "--wrench", "100,0,0,0"]).status.code(), Some(4));
    // validation
    assert_eq!(mars(&["allocate", "--wrench", "1,2"]).status.code(), Some(2));
    assert_eq!(mars(&["abstract", "--grid", "0x2"]).status.code(), Some(2));
    assert_eq!(mars(&["magnets", "--per-layer", "3"]).status.code(), Some(2));
    let dir = scratch("badcfg");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bad.json");
    std::fs::write(&cfg, r#"{"units": []}"#).unwrap();
    assert_eq!(
        mars(&["abstract", "--config", cfg.to_str().unwrap()]).status.code(),
        Some(2)
    );
    std::fs::write(&cfg, "not json").unwrap();
    assert_eq!(
        mars(&["abstract", "--config", cfg.to_str().unwrap()]).status.code(),
        Some(2)
    );
    let _ = std::fs::remove_dir_all(&dir);
    // unreachable magnet target
    assert_eq!(
        mars(&["magnets", "--layers", "1", "--target", "1e9"]).status.code(),
        Some(4)
    );
}

#[test]
fn magnets_history_is_nondecreasing() {
    let o = mars(&["magnets", "--layers", "4", "--format", "csv", "--seed", "2"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let history: Vec<f64> = text
        .split("# mars-magnets v1 history")
        .nth(1)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(history.len(), 4);
    assert!(history.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(
        o.stdout,
        mars(&["magnets", "--layers", "4", "--format", "csv", "--seed", "2"]).stdout
    );
}

#[test]
fn bench_emits_one_row_per_size() {
    let o = mars(&["bench", "--sizes", "1,3", "--solves", "20", "--format", "csv"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "n_units,n_rotors,solves,median_ms,p95_ms,max_ms,infeasible");
    assert!(rows[1].starts_with("1,4,20,"));
    assert!(rows[2].starts_with("3,12,20,"));
}

#[test]
fn config_file_with_controller_section() {
    let dir = scratch("cfg");
    std::fs::create_dir_all(&dir).unwrap();
    let arm = 0.1625;
    let rotor =
        |x: f64, y: f64, s: i8| format!(r#"{{"offset":[{x},{y},0],"spin_sign":{s},"f_min":0,"f_max":7,"c_z":0.06}}"#);
    let unit = |px: f64| {
        format!(
            r#"{{"mass":1.5,"position":[{px},0,0],"rotors":[{},{},{},{}]}}"#,
            rotor(arm, arm, -1),
            rotor(-arm, -arm, -1),
            rotor(arm, -arm, 1),
            rotor(-arm, arm, 1)
        )
    };
    let doc = format!(
        r#"{{"units":[{},{}],"payload":{{"mass":0.6,"position":[0,0,-0.1]}},"controller":{{"settings":{{"horizon":10}}}}}}"#,
        unit(-0.325),
        unit(0.325)
    );
    let cfg = dir.join("pair.json");
    std::fs::write(&cfg, doc).unwrap();
    let o = mars(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--scenario",
        "hover",
        "--duration",
        "0.1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::write(&cfg, r#"{"units":[],"controller":{"settings":{"horizon":0}}}"#).unwrap();
    assert_eq!(
        mars(&["simulate", "--config", cfg.to_str().unwrap()]).status.code(),
        Some(2)
    );
    let _ = std::fs::remove_dir_all(&dir);
}
