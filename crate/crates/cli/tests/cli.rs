use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

struct Work {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Work {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Work { _dir: dir, root }
    }

    fn p(&self, name: &str) -> String {
        self.root.join(name).to_string_lossy().into_owned()
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_pitlane"))
            .args(args)
            .current_dir(&self.root)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }

    /// Synthetic data, fitted component models and charge tables.
    fn prepared() -> Self {
        let w = Work::new();
        w.ok(&["write-synthetic", "--out", &w.p("data")]);
        w.ok(&[
            "fit-models",
            "--motor-map", &w.p("data/motor_map.csv"),
            "--inverter", &w.p("data/inverter.csv"),
            "--charge-loss", &w.p("data/charge_loss.csv"),
            "--config", &w.p("data/vehicle.toml"),
            "-o", &w.p("fits.json"),
        ]);
        w.ok(&[
            "charge-tables",
            "--config", &w.p("data/vehicle.toml"),
            "--fits", &w.p("fits.json"),
            "-o", &w.p("tables.json"),
        ]);
        w
    }

    fn model_args(&self) -> Vec<String> {
        [
            "--config", "data/vehicle.toml",
            "--fits", "fits.json",
            "--tables", "tables.json",
            "--track", "data/track.csv",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {text}"))
}

/// A map sampled from a known stint surface and final-stint curve, so the
/// race commands run without the long sweep.
fn surface_map(path: &Path, t_max: f64) {
    let q = [[330.0, 11.0, -300.0], [11.0, 0.62, -7.0], [-300.0, -7.0, 900.0]];
    let d = [1.8, 101.5, 12.0];
    let mut s = String::from("n_laps,t_charge,final,t_stint,valid,status\n");
    for n in 1..=7 {
        for f in [0.05, 0.1, 0.2, 0.35, 0.6, 1.0] {
            let t = f * t_max;
            let y = [1.0, t, n as f64];
            let mut v = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    v += y[i] * q[i][j] * y[j];
                }
            }
            s.push_str(&format!("{n},{t:?},false,{:?},true,Optimal\n", v / t));
        }
        let nf = n as f64;
        let tf = d[0] * nf * nf + d[1] * nf + d[2];
        s.push_str(&format!("{n},{t_max:?},true,{tf:?},true,Optimal\n"));
    }
    std::fs::write(path, s).unwrap();
}

#[test]
fn pipeline_commands_write_their_outputs() {
    let w = Work::prepared();
    for f in ["data/vehicle.toml", "data/track.csv", "fits.json", "tables.json"] {
        assert!(w.root.join(f).is_file(), "{f}");
    }
    let tables: Value = serde_json::from_slice(&read(w.root.join("tables.json"))).unwrap();
    assert!(tables["t_charge_max"].as_f64().unwrap() > 0.0);
    let manifest: Value = serde_json::from_slice(&read(w.root.join("fits.json.manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "fit-models");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 1);
}

#[test]
fn stint_solve_is_byte_identical_on_rerun() {
    let w = Work::prepared();
    let mut args = vec!["solve-stint".to_string(), "--laps".into(), "1".into(), "--charge".into(), "60".into()];
    args.extend(w.model_args());
    let run = |out: &str| {
        let mut a = args.clone();
        a.extend(["-o".to_string(), out.to_string()]);
        let a: Vec<&str> = a.iter().map(String::as_str).collect();
        w.ok(&a);
    };
    run("a.csv");
    run("b.csv");
    assert_eq!(read(w.root.join("a.csv")), read(w.root.join("b.csv")));
    assert_eq!(read(w.root.join("a.json")), read(w.root.join("b.json")));
    let summary: Value = serde_json::from_slice(&read(w.root.join("a.json"))).unwrap();
    assert_eq!(summary["n_laps"], 1);
    assert!(summary["trusted"].as_bool().unwrap());

    let mut sim = vec!["simulate", "--stint", "a.csv", "-o", "sim.json"];
    sim.extend(["--config", "data/vehicle.toml", "--fits", "fits.json", "--track", "data/track.csv"]);
    w.ok(&sim);
    let r: Value = serde_json::from_slice(&read(w.root.join("sim.json"))).unwrap();
    assert!(r["energy_drift"].as_f64().unwrap().abs() < 0.03);
}

#[test]
fn race_from_a_fitted_map() {
    let w = Work::prepared();
    let tables: Value = serde_json::from_slice(&read(w.root.join("tables.json"))).unwrap();
    surface_map(&w.root.join("map.csv"), tables["t_charge_max"].as_f64().unwrap());
    w.ok(&["fit-map", "--map", "map.csv", "--fits", "fits.json", "-o", "fits_map.json"]);
    let fits: Value = serde_json::from_slice(&read(w.root.join("fits_map.json"))).unwrap();
    assert!(fits["q_s"].is_object() && fits["d_s_f"].is_object());

    let race = |hours: &str, out: &str| {
        let a = [
            "solve-race", "--config", "data/vehicle.toml", "--fits", "fits_map.json",
            "--tables", "tables.json", "--track", "data/track.csv", "--map", "map.csv",
            "--race-hours", hours, "-o", out,
        ];
        w.run(&a)
    };
    for out in ["r1.json", "r2.json"] {
        let o = race("1", out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(read(w.root.join("r1.json")), read(w.root.join("r2.json")));
    let s: Value = serde_json::from_slice(&read(w.root.join("r1.json"))).unwrap();
    assert_eq!(s["status"], "optimal");
    assert!(s["total_laps"].as_f64().unwrap() > 1.0);

    // 36 s is too short for even a single final lap
    let o = race("0.01", "short.json");
    assert!(!o.status.success());
    assert_eq!(error_json(&o)["error"], "infeasible");
}

#[test]
fn errors_are_reported_as_json() {
    let w = Work::new();
    let o = w.run(&["charge-tables", "--config", "missing.toml", "--fits", "missing.json", "-o", "t.json"]);
    assert!(!o.status.success());
    let e = error_json(&o);
    assert_eq!(e["error"], "io");
    assert!(e["message"].as_str().unwrap().len() > 0);

    let o = w.run(&["solve-stint", "--laps", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "usage");

    let o = w.run(&["solve-race", "--race-hours=-1", "-o", "r.json"]);
    assert!(!o.status.success());
    assert_eq!(error_json(&o)["error"], "argument");
}
