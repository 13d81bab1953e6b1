use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use levyfp::measure::{MeasureCurve, Snapshot};
use levyfp::sde::{StableNormalization, StableOracle, StableParams};
use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn levyfp(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levyfp"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn example_kernel_check_exits_zero() {
    let tmp = TempDir::new().unwrap();
    let o = levyfp(&["check"], &configs().join("example_i.toml"), tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = json(&tmp.path().join("check.json"));
    assert_eq!(report["report"]["condition"]["violated"], false);
    assert_eq!(report["report"]["condition"]["unbounded_trend"], false);
    assert_eq!(report["config"]["kernel"]["alpha"], 1.0);
    assert!(tmp.path().join("config.toml").exists());
}

#[test]
fn cubic_drift_check_exits_one_with_trend_flag() {
    let tmp = TempDir::new().unwrap();
    let o = levyfp(&["check"], &configs().join("cubic_drift.toml"), tmp.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let report = json(&tmp.path().join("check.json"));
    assert_eq!(report["report"]["condition"]["unbounded_trend"], true);
    assert!(stderr(&o).contains("unbounded trend"));
}

#[test]
fn empty_config_is_a_parse_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "empty.toml", "");
    let o = levyfp(&["check"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dim"), "{}", stderr(&o));
}

#[test]
fn unknown_key_reports_its_line() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "typo.toml", "dim = 1\n\n[kernel]\nfamily = \"none\"\nkapa = \"1\"\n");
    let o = levyfp(&["check"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("kapa") && err.contains("line 5"), "{err}");
}

#[test]
fn static_zero_system_has_zero_residual() {
    let tmp = TempDir::new().unwrap();
    let curve = "time,kind,x1,value\n0,particle,0.5,0.5\n0,particle,-1,0.5\n1,particle,0.5,0.5\n1,particle,-1,0.5\n";
    write(tmp.path(), "curve.csv", curve);
    let cfg = write(tmp.path(), "zero.toml", "dim = 1\n\n[residual]\ncurve = \"curve.csv\"\n");
    let o = levyfp(&["residual"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = json(&tmp.path().join("out/residual.json"));
    assert_eq!(report["report"]["max_relative"], 0.0);
    let csv = fs::read_to_string(tmp.path().join("out/residual.csv")).unwrap();
    assert!(csv.starts_with("function,t=0,t=1\n"));
}

#[test]
fn stable_flight_oracle_curve_has_small_residual() {
    let tmp = TempDir::new().unwrap();
    let params = StableParams::new(1.5, 1, StableNormalization::LevyMeasure).unwrap();
    let times: Vec<f64> = (0..=10).map(|k| 0.05 * k as f64).collect();
    let snaps = times
        .iter()
        .map(|&t| Snapshot::Grid(StableOracle::at_time(&params, t, 0.25).unwrap().grid_density(0.1, 20.0).unwrap()))
        .collect();
    let curve = MeasureCurve::new(times, snaps).unwrap();
    curve.write_csv(fs::File::create(tmp.path().join("oracle.csv")).unwrap()).unwrap();
    let cfg = write(
        tmp.path(),
        "oracle.toml",
        "dim = 1\n\n[kernel]\nfamily = \"stable_like\"\nalpha = 1.5\n\n[residual]\ncurve = \"oracle.csv\"\ntimes = [0.25, 0.5]\n",
    );
    let o = levyfp(&["residual"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = json(&tmp.path().join("out/residual.json"));
    assert!(report["report"]["max_relative"].as_f64().unwrap() < 1e-2);
}

#[test]
fn missing_curve_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "missing.toml", "dim = 1\n\n[residual]\ncurve = \"nowhere.csv\"\n");
    let o = levyfp(&["residual"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.csv"), "{}", stderr(&o));
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn fixed_seed_gives_identical_bytes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "sim.toml",
        "dim = 1\n\n[kernel]\nfamily = \"stable_like\"\nalpha = 1.2\nkappa = \"1 + 0.5 * exp(-x1^2)\"\n\n\
         [coefficients]\ndiffusion = [\"0.5\"]\ndrift = [\"-x1\"]\n\n\
         [simulate]\nparticles = 500\nt_end = 0.5\nsteps = 5\njumps = \"kernel\"\n\
         init = { kind = \"gaussian\", mean = [0.0], variance = 1.0 }\nmoment = {}\n",
    );
    let a = levyfp(&["simulate", "--seed", "11"], &cfg, &tmp.path().join("a"));
    let b = levyfp(&["simulate", "--seed", "11", "--threads", "1"], &cfg, &tmp.path().join("b"));
    let c = levyfp(&["simulate", "--seed", "12"], &cfg, &tmp.path().join("c"));
    for o in [&a, &b, &c] {
        assert_eq!(o.status.code(), Some(0), "{}", stderr(o));
    }
    let (fa, fb, fc) = (read_dir_sorted(&tmp.path().join("a")), read_dir_sorted(&tmp.path().join("b")), read_dir_sorted(&tmp.path().join("c")));
    assert_eq!(fa.iter().map(|f| &f.0).collect::<Vec<_>>(), ["config.toml", "marginals.csv", "simulate.json"]);
    assert_eq!(fa, fb);
    assert_ne!(fa[1], fc[1]);
    // the emitted config reproduces the run
    let d = levyfp(&["simulate"], &tmp.path().join("a/config.toml"), &tmp.path().join("d"));
    assert_eq!(d.status.code(), Some(0), "{}", stderr(&d));
    assert_eq!(fa, read_dir_sorted(&tmp.path().join("d")));
}

#[test]
fn stable_flight_audits_pass() {
    let tmp = TempDir::new().unwrap();
    let o = levyfp(&["simulate"], &configs().join("stable_flight.toml"), tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = json(&tmp.path().join("simulate.json"));
    assert!(report["report"]["ks"]["p_value"].as_f64().unwrap() >= 0.01);
    assert_eq!(report["report"]["martingale"]["passed"], true);
    assert_eq!(report["report"]["exits"], 0);
}

#[test]
fn alpha_outside_range_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "alpha.toml", "dim = 1\n\n[kernel]\nfamily = \"stable_like\"\nalpha = 2.5\n");
    let o = levyfp(&["simulate"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alpha"), "{}", stderr(&o));
}

#[test]
fn constant_initial_density_is_stationary() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "flat.toml",
        "dim = 1\n\n[fpme]\nm = 2.0\nalpha = 1.0\nwidth = 16.0\nnodes = 64\ntimes = [0.1, 0.2]\n\
         init = { kind = \"expression\", expr = \"1\" }\n",
    );
    let o = levyfp(&["fpme"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("out/fpme.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let u: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((u - 1.0 / 16.0).abs() < 1e-12, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 3 * 64);
}

#[test]
fn porous_medium_exponent_must_exceed_one() {
    let tmp = TempDir::new().unwrap();
    let text = fs::read_to_string(configs().join("porous_medium.toml")).unwrap().replace("m = 2.0", "m = 1.0");
    let cfg = write(tmp.path(), "m1.toml", &text);
    let o = levyfp(&["fpme"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("porous media exponent"), "{}", stderr(&o));
}

#[test]
fn headline_experiment_report() {
    let tmp = TempDir::new().unwrap();
    let text = fs::read_to_string(configs().join("ddsde.toml"))
        .unwrap()
        .replace("particles = 100000", "particles = 20000")
        .replace("residual_spacing = 0.01\n", "");
    let cfg = write(tmp.path(), "ddsde.toml", &text);
    let o = levyfp(&["ddsde"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = json(&tmp.path().join("out/ddsde.json"));
    let l1: Vec<f64> = report["report"]["l1_distances"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(l1.len(), 3);
    assert!(l1.iter().all(|&d| d < 0.1), "{l1:?}");
    assert_eq!(report["report"]["config"]["m"], 2.0);
    assert!(tmp.path().join("out/particles.csv").exists());
    assert!(tmp.path().join("out/fpme.csv").exists());
}
