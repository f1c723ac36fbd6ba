use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use clap::CommandFactory;
use onestep::cli::{parse_args, Cli, ERRORS_HEADER, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, SUMMARY_HEADER};

fn onestep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onestep"))
        .args(args)
        .env_remove("ONESTEP_SEED")
        .output()
        .unwrap()
}

fn help_flags(sub: &str) -> BTreeSet<String> {
    let out = onestep(&[sub, "--help"]);
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let text = String::from_utf8(out.stdout).unwrap();
    text.split(|c: char| c.is_whitespace() || c == ',' || c == '[' || c == ']' || c == '<')
        .filter(|t| t.starts_with("--") && t.len() > 2)
        .map(|t| t.trim_end_matches(|c: char| !c.is_alphanumeric()).to_string())
        .collect()
}

fn sample_value(flag: &str) -> Option<&'static str> {
    Some(match flag {
        "--model" => "gamma",
        "--theta" => "2,1",
        "--n" => "200",
        "--r" => "0.7",
        "--c" => "3",
        "--seed" => "3",
        "--tol-mle" => "1e-8",
        "--max-iter-mle" => "50",
        "--init" => "moments",
        "--burn-in" => "0.1",
        "--step-guard" => "off",
        "--B" => "2",
        "--estimators" => "sgd",
        "--out" => "x",
        "--threads" => "2",
        "--estimator" => "mle",
        "--data" => "obs.txt",
        "--no-timing" | "--help" | "--version" => return None,
        other => panic!("no sample value for {other}"),
    })
}

#[test]
fn every_flag_in_help_is_accepted_and_vice_versa() {
    let cmd = Cli::command();
    for sub in ["experiment", "fit"] {
        let shown = help_flags(sub);
        let declared: BTreeSet<String> = cmd
            .find_subcommand(sub)
            .unwrap()
            .get_arguments()
            .filter_map(|a| a.get_long().map(|l| format!("--{l}")))
            .chain(["--help".to_string()])
            .collect();
        assert_eq!(shown, declared, "{sub}");
        for flag in &shown {
            if flag == "--help" {
                continue;
            }
            let mut argv = vec!["onestep".to_string(), sub.to_string(), flag.clone()];
            if let Some(v) = sample_value(flag) {
                argv.push(v.to_string());
            }
            parse_args(&argv).unwrap_or_else(|e| panic!("{argv:?}: {}", e.message));
        }
    }
}

#[test]
fn usage_error_exit_code() {
    assert_eq!(onestep(&["experiment", "--r", "1.5"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(onestep(&["experiment", "--unknown"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(onestep(&[]).status.code(), Some(EXIT_USAGE));
    assert_eq!(onestep(&["--help"]).status.code(), Some(EXIT_OK));
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn csv_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = onestep(&[
        "experiment", "--n", "300", "--B", "2", "--estimators", "sgd", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&o.stderr));

    let errors = read(&dir.path().join("run.errors.csv"));
    let lines: Vec<&str> = errors.lines().collect();
    assert_eq!(lines[0], ERRORS_HEADER);
    assert_eq!(lines.len() - 1, 2 * 2);
    assert!(!errors.contains('\r'));
    for line in &lines[1..] {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 6);
        assert_eq!(cols[1], "sgd");
        let raw: f64 = cols[3].parse().unwrap();
        let sqrt_n: f64 = cols[4].parse().unwrap();
        let n_r2: f64 = cols[5].parse().unwrap();
        assert!((sqrt_n - raw * 300f64.sqrt()).abs() <= 1e-12 * (1.0 + sqrt_n.abs()));
        assert!((n_r2 - raw * 300f64.powf(0.3)).abs() <= 1e-12 * (1.0 + n_r2.abs()));
        // 17 significant digits.
        assert_eq!(cols[3].split('e').next().unwrap().trim_start_matches('-').len(), 18);
    }

    let summary = read(&dir.path().join("run.summary.csv"));
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], SUMMARY_HEADER);
    assert_eq!(lines.len() - 1, 4);
    assert!(lines[1].starts_with("sgd,0,0,"));
}

#[test]
fn empty_estimator_set_gives_header_only_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty");
    let o = onestep(&["experiment", "--n", "50", "--B", "3", "--estimators", "none", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    assert_eq!(read(&dir.path().join("empty.summary.csv")), format!("{SUMMARY_HEADER}\n"));
    assert_eq!(read(&dir.path().join("empty.errors.csv")), format!("{ERRORS_HEADER}\n"));
}

#[test]
fn reruns_are_byte_identical_without_timing() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = onestep(&[
            "experiment", "--n", "400", "--B", "6", "--seed", "9", "--no-timing", "--threads", "2", "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(EXIT_OK));
        (
            std::fs::read(dir.path().join(format!("{name}.errors.csv"))).unwrap(),
            std::fs::read(dir.path().join(format!("{name}.summary.csv"))).unwrap(),
        )
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    assert!(String::from_utf8(a.1).unwrap().lines().skip(1).all(|l| l.split(',').nth(6) == Some("NA")));
}

#[test]
fn stdout_table_follows_column_order() {
    let o = onestep(&["experiment", "--n", "300", "--B", "2", "--estimators", "adsgd,avsgd,ossgd,sgd,mle"]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    let text = String::from_utf8(o.stdout).unwrap();
    let header = text.lines().find(|l| l.contains("MLE")).unwrap();
    let names: Vec<&str> = header.split_whitespace().collect();
    assert_eq!(names, ["MLE", "SGD", "OSSGD", "AVSGD", "ADSGD"]);
    let banner = text.lines().next().unwrap();
    assert!(banner.starts_with("# experiment --model gamma --theta 2,1"));
}

#[test]
fn seed_can_come_from_environment() {
    let with_env = |seed: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_onestep"))
            .args(["experiment", "--n", "100", "--B", "1", "--estimators", "sgd"])
            .env("ONESTEP_SEED", seed)
            .output()
            .unwrap();
        String::from_utf8(o.stdout).unwrap()
    };
    assert!(with_env("123").contains("--seed 123"));
    let o = Command::new(env!("CARGO_BIN_EXE_onestep"))
        .args(["experiment", "--n", "100", "--B", "1", "--estimators", "sgd", "--seed", "5"])
        .env("ONESTEP_SEED", "123")
        .output()
        .unwrap();
    assert!(String::from_utf8(o.stdout).unwrap().contains("--seed 5"));
}

#[test]
fn fit_subcommand() {
    let o = onestep(&["fit", "--model", "exponential", "--theta", "2", "--n", "100", "--estimator", "ossgd"]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("estimator  ossgd"));

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("obs.txt");
    std::fs::write(&data, "1\n3\n").unwrap();
    let o = onestep(&["fit", "--model", "exponential", "--estimator", "mle", "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    assert!(String::from_utf8(o.stdout).unwrap().contains("estimate   (0.5)"));

    std::fs::write(&data, "1\n-3\n").unwrap();
    let o = onestep(&["fit", "--model", "exponential", "--estimator", "mle", "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_RUNTIME));
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let o = onestep(&["experiment", "--n", "50", "--B", "1", "--estimators", "sgd", "--out", "/nonexistent/dir/x"]);
    assert_eq!(o.status.code(), Some(EXIT_RUNTIME));
}

#[test]
fn selftest_exits_zero() {
    let o = onestep(&["selftest"]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 8);
    assert!(!text.contains("FAIL"));
}
