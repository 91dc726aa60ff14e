use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lossnet"))
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

/// Data rows of a CSV written by the tool: header comment and column row dropped.
fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .split("\r\n")
        .filter(|l| !l.is_empty())
        .skip(2)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p
}

const TOY_MODEL: &str = r#""model": {"capacity": 1, "size": [1], "alpha": [0.3], "gamma": [4], "delta": [0.05]}"#;

#[test]
fn two_class_example_has_three_equilibria() {
    let dir = TempDir::new().unwrap();
    let o = run("equilibria", &shipped("two_class.json"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let eq = rows(&dir.path().join("equilibria.csv"));
    assert_eq!(eq.len(), 3);
    let kinds: Vec<&str> = eq.iter().map(|r| r.last().unwrap().as_str()).collect();
    assert_eq!(kinds, ["local-min", "saddle", "local-min"]);
    for f in ["h_curve.csv", "h_curve.svg", "phi_grid.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(rows(&dir.path().join("h_curve.csv")).len(), 2000);
    assert_eq!(rows(&dir.path().join("phi_grid.csv")).len(), 3600);
    let svg = fs::read_to_string(dir.path().join("h_curve.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 3);
}

#[test]
fn larger_departure_rate_leaves_one_equilibrium() {
    let dir = TempDir::new().unwrap();
    let o = run("equilibria", &shipped("two_class_delta_0.1.json"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(rows(&dir.path().join("equilibria.csv")).len(), 1);
}

#[test]
fn toy_equilibrium_matches_bisection() {
    let (a, g, d) = (0.3, 4.0, 0.05);
    let f = |x: f64| a * (1.0 - x) - (d + g * x) * x;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    let dir = TempDir::new().unwrap();
    let o = run("equilibria", &shipped("toy.json"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    let eq = rows(&dir.path().join("equilibria.csv"));
    assert_eq!(eq.len(), 1);
    let rho: f64 = eq[0][1].parse().unwrap();
    assert!((rho - x / (1.0 - x)).abs() < 1e-9, "{rho}");
    assert!(!dir.path().join("h_curve.svg").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for cmd in ["equilibria", "simulate", "exit-times", "ode"] {
        assert_eq!(
            run(cmd, &shipped("toy.json"), a.path(), &[]).status.code(),
            Some(0),
            "{cmd}"
        );
        assert_eq!(
            run(cmd, &shipped("toy.json"), b.path(), &[]).status.code(),
            Some(0),
            "{cmd}"
        );
    }
    let mut names: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 4);
    for n in names {
        assert_eq!(
            fs::read(a.path().join(&n)).unwrap(),
            fs::read(b.path().join(&n)).unwrap(),
            "{n:?}"
        );
    }
}

#[test]
fn header_carries_version_and_config_hash() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    run("simulate", &shipped("toy.json"), a.path(), &[]);
    run("simulate", &shipped("toy.json"), b.path(), &["--seed", "99"]);
    let ta = fs::read_to_string(a.path().join("trajectory.csv")).unwrap();
    let tb = fs::read_to_string(b.path().join("trajectory.csv")).unwrap();
    let ha = ta.lines().next().unwrap();
    let hb = tb.lines().next().unwrap();
    assert!(ha.starts_with(&format!("# lossnet {} config-sha256=", env!("CARGO_PKG_VERSION"))));
    assert_ne!(ha, hb, "seed override must change the hash");
    assert_ne!(
        ta.lines().nth(50),
        tb.lines().nth(50),
        "seed override must change the path"
    );
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "bad.json", &format!("{{{TOY_MODEL}, \"seeed\": 3}}"));
    let out = dir.path().join("out");
    let o = run("equilibria", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeed"));
    assert!(!out.exists());
    let missing = run("equilibria", &dir.path().join("nope.json"), &out, &[]);
    assert_eq!(missing.status.code(), Some(2));
    let invalid = write_config(
        dir.path(),
        "neg.json",
        r#"{"model": {"capacity": 1, "size": [1], "alpha": [-0.3], "gamma": [4], "delta": [0.05]}}"#,
    );
    assert_eq!(run("equilibria", &invalid, &out, &[]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3_without_files() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("pairs.csv"), "0.5,0.5,0,0\r\n0.5,0.5,-1e300,1e300\r\n").unwrap();
    let cfg = write_config(
        dir.path(),
        "rate.json",
        &format!("{{{TOY_MODEL}, \"rate\": {{\"input\": \"pairs.csv\"}}}}"),
    );
    let out = dir.path().join("out");
    let o = run("rate", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("rate.csv").exists());
}

#[test]
fn rate_command_reads_pairs() {
    let dir = TempDir::new().unwrap();
    let o = run("rate", &shipped("toy.json"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&dir.path().join("rate.csv"));
    assert_eq!(r.len(), 4);
    for row in &r {
        let l: f64 = row[1].parse().unwrap();
        assert!(l >= 0.0 && row[2] == "true");
    }
}

#[test]
fn censored_only_run_exits_4() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &format!(
            r#"{{{TOY_MODEL}, "simulation": {{"n": 20, "horizon": 5, "replicas": 3}},
               "exit": {{"domain": "everything"}}}}"#
        ),
    );
    let o = run("exit-times", &cfg, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(4));
    let r = rows(&dir.path().join("exit_times.csv"));
    assert_eq!(r.len(), 3);
    assert!(r
        .iter()
        .all(|row| row[2] == "true" && row[1].parse::<f64>().unwrap() == 5.0));
}

/// Minimum-weight spanning arborescences by exhaustive parent maps.
fn brute_force_j(phi: &[Vec<f64>]) -> Vec<f64> {
    let k = phi.len();
    let mut w = vec![f64::INFINITY; k];
    for root in 0..k {
        for code in 0..k.pow(k as u32) {
            let parent: Vec<usize> = (0..k).map(|i| code / k.pow(i as u32) % k).collect();
            if parent[root] != root || (0..k).any(|i| i != root && parent[i] == i) {
                continue;
            }
            let reaches = (0..k).all(|s| (0..k).fold(s, |n, _| parent[n]) == root);
            if reaches {
                let c: f64 = (0..k).filter(|&i| i != root).map(|i| phi[i][parent[i]]).sum();
                w[root] = w[root].min(c);
            }
        }
    }
    let m = w.iter().copied().fold(f64::INFINITY, f64::min);
    w.iter().map(|v| v - m).collect()
}

#[test]
fn tree_with_injected_matrix_matches_enumeration() {
    let phi = vec![vec![0.0, 3.0, 7.0], vec![0.0, 0.0, 2.0], vec![5.0, 1.0, 0.0]];
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "t.json",
        &format!("{{{TOY_MODEL}, \"tree\": {{\"phi\": {}}}}}", serde_json_matrix(&phi)),
    );
    let o = run("tree", &cfg, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let got: Vec<f64> = rows(&dir.path().join("J.csv"))
        .iter()
        .map(|r| r[1].parse().unwrap())
        .collect();
    assert_eq!(got, brute_force_j(&phi));
    let bad = write_config(
        dir.path(),
        "b.json",
        &format!("{{{TOY_MODEL}, \"tree\": {{\"phi\": [[1.0]]}}}}"),
    );
    assert_eq!(run("tree", &bad, dir.path(), &[]).status.code(), Some(2));
}

fn serde_json_matrix(m: &[Vec<f64>]) -> String {
    let rows: Vec<String> = m
        .iter()
        .map(|r| format!("[{}]", r.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")))
        .collect();
    format!("[{}]", rows.join(","))
}

#[test]
fn toy_pipeline_reports_zero_j_and_exit_rate() {
    let dir = TempDir::new().unwrap();
    let o = run("pipeline", &shipped("toy.json"), dir.path(), &["--threads", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let j = rows(&dir.path().join("J.csv"));
    assert_eq!(j.len(), 1);
    assert_eq!(j[0][1].parse::<f64>().unwrap(), 0.0);
    let u = rows(&dir.path().join("U.csv"));
    assert_eq!(u.len(), 1);
    // One-dimensional oracle: the cheaper end of the interval x* +- .15.
    let (a, g, d) = (0.3f64, 4.0f64, 0.05f64);
    let f = |x: f64| a * (1.0 - x) - (d + g * x) * x;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let xs = 0.5 * (lo + hi);
    let integral = |b: f64| {
        let n = 2000;
        let h = (b - xs) / n as f64;
        let q = |u: f64| ((d + g * u) * u / (a * (1.0 - u))).ln();
        (0..=n)
            .map(|i| {
                q(xs + i as f64 * h)
                    * if i == 0 || i == n {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    }
            })
            .sum::<f64>()
            * h
            / 3.0
    };
    let oracle = integral(xs + 0.15).min(integral(xs - 0.15));
    let got: f64 = u[0][1].parse().unwrap();
    assert!((got - oracle).abs() / oracle < 0.02, "{got} vs {oracle}");
    let opt = rows(&dir.path().join("optimizer.csv"));
    assert!(opt.iter().any(|r| r[0] == "exit"));
}

#[test]
fn missing_block_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "m.json", &format!("{{{TOY_MODEL}}}"));
    for cmd in ["ode", "rate", "action", "simulate"] {
        assert_eq!(run(cmd, &cfg, dir.path(), &[]).status.code(), Some(2), "{cmd}");
    }
}
