use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sbstab_core::model::{validate_spec, Nonlinearity, ProblemSpec};
use sbstab_core::spectral::Spectrum;

const BASELINE: &str = r#"
[problem]
grid_points = 200
nonlinearity = { kind = "fisher", a = 15.0 }

[synthesis]
rho = 1.0
period = 0.2

[simulation]
horizon = 50
initial = { kind = "random", seed = 7, amplitude = 0.01, norm = "sobolev" }
"#;

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new(config: &str) -> Run {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.toml"), config).unwrap();
        Run { dir }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn exec(&self, args: &[&str], out: &str) -> Output {
        Command::new(env!("CARGO_BIN_EXE_sbstab"))
            .args(args)
            .arg("--config")
            .arg(self.dir.path().join("run.toml"))
            .arg("--out")
            .arg(self.out(out))
            .output()
            .unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let text = read(path);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn synthesize_baseline() {
    let run = Run::new(BASELINE);
    let o = run.exec(&["synthesize"], "s");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("unstable modes: 1"));
    let gains: serde_json::Value = serde_json::from_str(&read(&run.out("s/gains.json"))).unwrap();
    for key in ["T", "gammas", "lambdas", "boundary_flux", "gain_row", "condition_number", "continuous_gain_row"] {
        assert!(gains.get(key).is_some(), "missing {key}");
    }
    assert_eq!(gains["gain_row"].as_array().unwrap().len(), 1);
    let report: serde_json::Value = serde_json::from_str(&read(&run.out("s/verification.json"))).unwrap();
    assert!(report["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
    assert_eq!(csv_column(&run.out("s/spectrum.csv"), "lambda").len(), 200);
    let meta: serde_json::Value = serde_json::from_str(&read(&run.out("s/run.json"))).unwrap();
    assert_eq!(meta["config"]["problem"]["substeps_per_hold"], 64);
    assert_eq!(meta["config"]["synthesis"]["gammas"], "auto");
}

#[test]
fn rho_on_eigenvalue_is_a_validation_error() {
    let p = validate_spec(&ProblemSpec::new(200, Nonlinearity::Fisher { a: 15.0 }, 0.2, 1.0)).unwrap();
    let lambda2 = Spectrum::laplacian(&p).unwrap().lambda(1) - 15.0;
    let exact = Spectrum::compute(&p).unwrap().lambda(1);
    assert!((lambda2 - exact).abs() < 1e-9);
    let run = Run::new(&BASELINE.replace("rho = 1.0", &format!("rho = {exact:.17e}")));
    let o = run.exec(&["synthesize"], "s");
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn short_gamma_list_is_a_validation_error() {
    let cfg = BASELINE
        .replace("a = 15.0", "a = 95.0")
        .replace("period = 0.2", "period = 0.2\ngammas = [2.0]");
    let o = Run::new(&cfg).exec(&["synthesize"], "s");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("gamma"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_rejected() {
    let o = Run::new(&format!("{BASELINE}\n[output]\nstride = 3\n")).exec(&["synthesize"], "s");
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_baseline_decays() {
    let run = Run::new(BASELINE);
    let o = run.exec(&["simulate", "--expect-decay"], "m");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let norms = csv_column(&run.out("m/trajectory.csv"), "l2_norm");
    let tail = &norms[norms.len() - 80..];
    assert!(tail.windows(2).all(|w| w[1] < w[0]));
    assert!(norms.last().unwrap() < &(norms[0] * 1e-6));
    let times = csv_column(&run.out("m/trajectory.csv"), "t");
    assert!((times.last().unwrap() - 10.0).abs() < 1e-12);
}

#[test]
fn simulate_open_loop_records_growth() {
    let run = Run::new(BASELINE);
    let o = run.exec(&["simulate", "--open-loop"], "m");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let norms = csv_column(&run.out("m/open_loop.csv"), "l2_norm");
    assert!(norms.last().unwrap() > &(norms[0] * 1e3));
    let summary: serde_json::Value = serde_json::from_str(&read(&run.out("m/summary.json"))).unwrap();
    assert_eq!(summary[1]["kind"], "open-loop");
}

#[test]
fn simulate_zero_initial_condition_is_flat() {
    let run = Run::new(&BASELINE.replace(
        r#"initial = { kind = "random", seed = 7, amplitude = 0.01, norm = "sobolev" }"#,
        r#"initial = { kind = "zero" }"#,
    ));
    let o = run.exec(&["simulate"], "m");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(csv_column(&run.out("m/trajectory.csv"), "l2_norm").iter().all(|n| *n == 0.0));
    assert!(csv_column(&run.out("m/trajectory.csv"), "sob_norm").iter().all(|n| *n == 0.0));
}

#[test]
fn expected_decay_failure_exits_4() {
    let run = Run::new(&BASELINE.replace("amplitude = 0.01", "amplitude = 50.0"));
    let plain = run.exec(&["simulate"], "a");
    assert_eq!(code(&plain), 0);
    let strict = run.exec(&["simulate", "--expect-decay"], "b");
    assert_eq!(code(&strict), 4);
}

#[test]
fn initial_condition_from_file() {
    let run = Run::new(&BASELINE.replace(
        r#"initial = { kind = "random", seed = 7, amplitude = 0.01, norm = "sobolev" }"#,
        r#"initial = { kind = "file", path = "y0.txt" }"#,
    ));
    let values: Vec<String> = (1..=200)
        .map(|j| {
            let x = j as f64 / 201.0;
            format!("{}", 0.01 * (std::f64::consts::PI * x).sin())
        })
        .collect();
    std::fs::write(run.dir.path().join("y0.txt"), values.join("\n")).unwrap();
    let o = run.exec(&["simulate", "--expect-decay"], "m");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn verify_baseline_passes() {
    let run = Run::new(BASELINE);
    let o = run.exec(&["verify"], "v");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(stdout.lines().all(|l| l.starts_with("PASS")));
    let report: serde_json::Value = serde_json::from_str(&read(&run.out("v/verification.json"))).unwrap();
    assert!(report["rates"].as_array().unwrap().len() >= 2);
}

#[test]
fn verify_with_sub_roundoff_tolerance_exits_5() {
    let run = Run::new(&format!("{BASELINE}\n[verify.tolerances]\nidentity = 1e-16\n"));
    let o = run.exec(&["verify"], "v");
    assert_eq!(code(&o), 5);
    assert!(stderr(&o).contains("synthesis.closed_loop_identity"));
}

#[test]
fn verify_without_unstable_modes_warns() {
    let run = Run::new(&BASELINE.replace("kind = \"fisher\", a = 15.0", "kind = \"linear-only\", a = -2.0"));
    let o = run.exec(&["verify"], "v");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn period_sweep_rates_are_positive() {
    let cfg = r#"
[problem]
grid_points = 800
nonlinearity = { kind = "linear-only", a = 15.0 }

[synthesis]
rho = 1.0
period = 0.2

[simulation]
initial = { kind = "random", seed = 3, amplitude = 1.0 }

[sweep]
periods = [0.05, 0.2, 1.0, 2.0]
"#;
    let run = Run::new(cfg);
    let o = run.exec(&["sweep", "--axis", "T"], "w");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rates = csv_column(&run.out("w/sweep.csv"), "rate");
    assert_eq!(rates.len(), 4);
    assert!(rates.iter().all(|r| *r > 0.0), "{rates:?}");
}

#[test]
fn amplitude_sweep_reports_basin_edge() {
    let run = Run::new(&format!("{BASELINE}\n[sweep]\namplitudes = [0.01, 0.1, 50.0]\nbisection_steps = 8\n"));
    let o = run.exec(&["sweep", "--axis", "amplitude"], "a");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("basin edge"));
    let basin: serde_json::Value = serde_json::from_str(&read(&run.out("a/basin.json"))).unwrap();
    assert!(basin["bracket"].is_array());
}

#[test]
fn empty_sweep_axis_exits_2() {
    let run = Run::new(&format!("{BASELINE}\n[sweep]\ngamma_firsts = []\n"));
    let o = run.exec(&["sweep", "--axis", "gamma"], "g");
    assert_eq!(code(&o), 2);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let run = Run::new(BASELINE);
    for (cmd, files) in [
        (vec!["synthesize"], vec!["gains.json", "spectrum.csv", "verification.json", "lifts.csv", "run.json"]),
        (vec!["simulate", "--open-loop"], vec!["trajectory.csv", "open_loop.csv", "summary.json"]),
    ] {
        assert_eq!(code(&run.exec(&cmd, "a")), 0);
        assert_eq!(code(&run.exec(&cmd, "b")), 0);
        for f in files {
            assert_eq!(
                std::fs::read(run.out("a").join(f)).unwrap(),
                std::fs::read(run.out("b").join(f)).unwrap(),
                "{f}"
            );
        }
    }
}
