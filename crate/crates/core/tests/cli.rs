use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_merton-eq");

const BASE: &str = r#"
[market]
r = 0.05
sigma = 0.2
mu = 0.07

[utility]
p = 0.5

[grid]
horizon = 1.0
n_steps = 200
"#;

const EXPONENTIAL: &str = r#"
[discount]
kind = "exponential"
rho = 0.1
"#;

const HYPERBOLIC: &str = r#"
[discount]
kind = "hyperbolic"
k = 1.0
gamma = 1.0
"#;

fn config(dir: &Path, name: &str, parts: &[&str]) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, parts.concat()).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn run_in(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        cmd,
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

fn last_row(csv: &str) -> Vec<f64> {
    csv.lines()
        .last()
        .unwrap()
        .split(',')
        .map(|s| s.parse().unwrap())
        .collect()
}

#[test]
fn exponential_solve_ends_at_one() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(
        tmp.path(),
        "c.toml",
        &[BASE, EXPONENTIAL, "[solver]\nmethod = \"picard\"\n"],
    );
    let out = tmp.path().join("out");
    let o = run_in("solve", &cfg, &out, &[]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    for f in ["lambda.csv", "bounds.csv", "residuals.csv", "manifest.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let lambda = read(&out, "lambda.csv");
    assert_eq!(lambda.lines().count(), 202);
    let last = last_row(&lambda);
    assert_eq!(last[0], 1.0);
    assert_eq!(last[1], 1.0);
    assert_eq!(last[3], 1.0);
}

#[test]
fn reruns_and_manifest_reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(
        tmp.path(),
        "c.toml",
        &[
            BASE,
            HYPERBOLIC,
            "[solver]\nmethod = \"picard\"\n[sim]\nn_paths = 2000\nseed = 3\n",
        ],
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    for cmd in ["solve", "simulate"] {
        assert_eq!(run_in(cmd, &cfg, &a, &[]).status.code(), Some(0));
        assert_eq!(run_in(cmd, &cfg, &b, &[]).status.code(), Some(0));
        let manifest = a.join("manifest.toml");
        assert_eq!(run_in(cmd, &manifest, &c, &[]).status.code(), Some(0));
        for dir in [&b, &c] {
            for f in fs::read_dir(&a).unwrap() {
                let name = f.unwrap().file_name();
                let name = name.to_str().unwrap();
                assert_eq!(read(&a, name), read(dir, name), "{cmd}: {name}");
            }
        }
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(
        tmp.path(),
        "c.toml",
        &[
            BASE,
            EXPONENTIAL,
            "[solver]\nmethod = \"picard\"\n[sim]\nn_paths = 5000\nseed = 9\n",
        ],
    );
    let one = tmp.path().join("one");
    let four = tmp.path().join("four");
    assert_eq!(
        run_in("simulate", &cfg, &one, &["--threads", "1"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        run_in("simulate", &cfg, &four, &["--threads", "4"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(read(&one, "simulation.csv"), read(&four, "simulation.csv"));
    assert_eq!(read(&one, "manifest.toml"), read(&four, "manifest.toml"));
}

#[test]
fn seed_flag_overrides_and_is_recorded() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(
        tmp.path(),
        "c.toml",
        &[
            BASE,
            EXPONENTIAL,
            "[solver]\nmethod = \"picard\"\n[sim]\nn_paths = 1000\nseed = 1\n",
        ],
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_in("simulate", &cfg, &a, &[]);
    run_in("simulate", &cfg, &b, &["--seed", "2"]);
    assert_ne!(read(&a, "simulation.csv"), read(&b, "simulation.csv"));
    assert!(read(&b, "manifest.toml").contains("seed = 2"));
}

#[test]
fn mixture_method_records_fit_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(
        tmp.path(),
        "c.toml",
        &[BASE, HYPERBOLIC, "[solver]\nmethod = \"picard\"\n"],
    );
    let out = tmp.path().join("out");
    let o = run_in("solve", &cfg, &out, &["--method", "mixture"]);
    assert_eq!(o.status.code(), Some(0));
    let manifest: toml::Table = read(&out, "manifest.toml").parse().unwrap();
    let diag = manifest["diagnostics"].as_table().unwrap();
    let err = diag["fit_sup_error"].as_float().unwrap();
    assert!(err > 0.0 && err < 1e-2, "{err}");
    assert_eq!(diag["method"].as_str(), Some("mixture"));
    assert_eq!(manifest["solver"]["method"].as_str(), Some("mixture"));
}

#[test]
fn config_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let typo = config(
        tmp.path(),
        "typo.toml",
        &[
            BASE,
            EXPONENTIAL,
            "[solver]\nmethod = \"picard\"\ntoll = 1e-9\n",
        ],
    );
    let good = config(
        tmp.path(),
        "good.toml",
        &[BASE, EXPONENTIAL, "[solver]\nmethod = \"picard\"\n"],
    );
    let terminal_picard = config(
        tmp.path(),
        "tp.toml",
        &[
            BASE,
            EXPONENTIAL,
            "[solver]\nmethod = \"picard\"\nproblem = \"terminal_only\"\n",
        ],
    );
    let bad_grid = config(
        tmp.path(),
        "g.toml",
        &[
            &BASE.replace("n_steps = 200", "n_steps = 1"),
            EXPONENTIAL,
            "[solver]\nmethod = \"picard\"\n",
        ],
    );
    assert_eq!(run_in("solve", &typo, &out, &[]).status.code(), Some(2));
    assert_eq!(
        run_in("solve", &good, &out, &["--method", "newton"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run_in("simulate", &good, &out, &[]).status.code(), Some(2));
    assert_eq!(
        run_in("solve", &good, &out, &["--seed", "4"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run_in("solve", &terminal_picard, &out, &[]).status.code(),
        Some(2)
    );
    assert_eq!(run_in("solve", &bad_grid, &out, &[]).status.code(), Some(2));
    assert_eq!(
        run_in("solve", &tmp.path().join("missing.toml"), &out, &[])
            .status
            .code(),
        Some(2)
    );
    assert!(!out.exists());
}

#[test]
fn nonconvergence_exits_3_after_writing_diagnostics() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(
        tmp.path(),
        "c.toml",
        &[
            BASE,
            HYPERBOLIC,
            "[solver]\nmethod = \"picard\"\nmax_iter = 2\n",
        ],
    );
    let out = tmp.path().join("out");
    let o = run_in("solve", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(3));
    let manifest: toml::Table = read(&out, "manifest.toml").parse().unwrap();
    assert_eq!(manifest["diagnostics"]["converged"].as_bool(), Some(false));
    assert!(read(&out, "residuals.csv").starts_with("diagnostic,value\n"));
}

const TERMINAL: &str = "[solver]\nmethod = \"closed_form\"\nproblem = \"terminal_only\"\n[sim]\nn_paths = 4000\nseed = 5\n";

#[test]
fn verify_negative_control_exits_4() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(
        tmp.path(),
        "c.toml",
        &[
            &BASE.replace("n_steps = 200", "n_steps = 1000"),
            HYPERBOLIC,
            TERMINAL,
            "[verify]\nchecks = [\"value_identity\", \"duality\"]\n",
        ],
    );
    let good = tmp.path().join("good");
    let bad = tmp.path().join("bad");
    assert_eq!(run_in("verify", &cfg, &good, &[]).status.code(), Some(0));
    let o = run_in("verify", &cfg, &bad, &["--perturb-lambda", "1.2"]);
    assert_eq!(o.status.code(), Some(4));
    let table = read(&bad, "verification.csv");
    let row = table
        .lines()
        .find(|l| l.starts_with("value_identity,"))
        .unwrap();
    assert!(row.ends_with(",false"), "{row}");
    assert!(read(&good, "verification.csv")
        .lines()
        .skip(1)
        .all(|l| l.ends_with(",true")));
}

#[test]
fn empty_check_list_writes_header_only() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(
        tmp.path(),
        "c.toml",
        &[BASE, HYPERBOLIC, TERMINAL, "[verify]\nchecks = []\n"],
    );
    let out = tmp.path().join("out");
    assert_eq!(run_in("verify", &cfg, &out, &[]).status.code(), Some(0));
    assert_eq!(
        read(&out, "verification.csv"),
        "check,statistic,threshold,pass\n"
    );
}

#[test]
fn terminal_checks_rejected_for_consumption_problem() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(
        tmp.path(),
        "c.toml",
        &[BASE, EXPONENTIAL, "[solver]\nmethod = \"picard\"\n[sim]\nn_paths = 1000\nseed = 1\n[verify]\nchecks = [\"martingale\"]\n"],
    );
    assert_eq!(
        run_in("verify", &cfg, &tmp.path().join("o"), &[])
            .status
            .code(),
        Some(2)
    );
}

fn compare_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn compare_single_identical_and_mixed() {
    let tmp = TempDir::new().unwrap();
    let solver = "[solver]\nmethod = \"picard\"\n";
    let single = config(
        tmp.path(),
        "single.toml",
        &[BASE, EXPONENTIAL, solver, "[compare]\ndiscounts = [{ kind = \"exponential\", rho = 0.1 }]\nprobe_times = [0.0, 0.5]\n"],
    );
    let twins = config(
        tmp.path(),
        "twins.toml",
        &[
            BASE,
            EXPONENTIAL,
            solver,
            "[compare]\ndiscounts = [{ kind = \"hyperbolic\", k = 1.0, gamma = 1.0 }, { kind = \"hyperbolic\", k = 1.0, gamma = 1.0 }]\n",
        ],
    );
    let mixed = config(
        tmp.path(),
        "mixed.toml",
        &[
            BASE,
            EXPONENTIAL,
            solver,
            "[compare]\ndiscounts = [{ kind = \"exponential\", rho = 0.1 }, { kind = \"hyperbolic\", k = 1.0, gamma = 1.0 }]\nprobe_times = [0.0, 0.5]\n",
        ],
    );

    let out = tmp.path().join("single");
    assert_eq!(run_in("compare", &single, &out, &[]).status.code(), Some(0));
    let rows = compare_rows(&read(&out, "compare.csv"));
    assert_eq!(rows.len(), 201);
    let incons = compare_rows(&read(&out, "inconsistency.csv"));
    assert_eq!(incons.len(), 2);
    for r in &incons {
        assert!(r[5].parse::<f64>().unwrap() < 1e-5);
    }

    let out = tmp.path().join("twins");
    assert_eq!(run_in("compare", &twins, &out, &[]).status.code(), Some(0));
    let rows = compare_rows(&read(&out, "compare.csv"));
    let (a, b) = rows.split_at(201);
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x[1..], y[1..]);
    }

    let out = tmp.path().join("mixed");
    assert_eq!(run_in("compare", &mixed, &out, &[]).status.code(), Some(0));
    let rows = compare_rows(&read(&out, "compare.csv"));
    let ends: Vec<&Vec<String>> = rows
        .iter()
        .filter(|r| r[1].parse::<f64>().unwrap() == 1.0)
        .collect();
    assert_eq!(ends.len(), 2);
    for r in ends {
        assert_eq!(r[2].parse::<f64>().unwrap(), 1.0);
    }
    let incons = compare_rows(&read(&out, "inconsistency.csv"));
    let hyper_gap = incons
        .iter()
        .filter(|r| r[0].starts_with("hyperbolic"))
        .map(|r| r[5].parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert!(hyper_gap > 1e-3, "{hyper_gap}");
}

#[test]
fn compare_keeps_going_when_one_spec_fails() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(
        tmp.path(),
        "c.toml",
        &[
            BASE,
            EXPONENTIAL,
            "[solver]\nmethod = \"closed_form\"\n",
            "[compare]\ndiscounts = [{ kind = \"exponential\", rho = 0.1 }, { kind = \"hyperbolic\", k = 1.0, gamma = 1.0 }]\n",
        ],
    );
    let out = tmp.path().join("out");
    let o = run_in("compare", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let manifest: toml::Table = read(&out, "manifest.toml").parse().unwrap();
    let specs = manifest["diagnostics"]["specs"].as_array().unwrap();
    assert_eq!(specs[0]["status"].as_str(), Some("ok"));
    assert_eq!(specs[1]["status"].as_str(), Some("failed"));
    let rows = compare_rows(&read(&out, "compare.csv"));
    assert!(rows.iter().all(|r| r[0].starts_with("exponential")));
    assert_eq!(rows.len(), 201);
}
