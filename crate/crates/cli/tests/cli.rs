use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const RAW_HEADER: &str = "side_info,pattern,procedure,n_train,seed,test_accuracy,main_loss,side_loss,wall_ms,failed";
const AGGREGATE_HEADER: &str = "side_info,pattern,procedure,n_train,mean_accuracy,stderr,n_seeds";

fn sideinfo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sideinfo"))
        .args(args)
        .env_remove("SIDEINFO_WORKERS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn lines(p: &Path) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().map(str::to_string).collect()
}

/// Raw CSV rows without the wall-clock column.
fn without_timing(p: &Path) -> Vec<String> {
    lines(p)
        .into_iter()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(8);
            f.join(",")
        })
        .collect()
}

/// Cheap settings so the sweeps finish in seconds.
const FAST: [&str; 4] = ["--epochs", "10", "--test-length", "2000"];

#[test]
fn sweep_row_counts_follow_the_grid() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "sweep");
    let mut args = vec![
        "sweep",
        "--side-info",
        "relative",
        "--patterns",
        "pairwise-transform",
        "--procedures",
        "decoupled,simultaneous",
        "--n",
        "50,200",
        "--seeds",
        "10",
        "--out",
        &out,
    ];
    args.extend(FAST);
    let run = sideinfo(&args);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let raw = lines(&dir.path().join("sweep/raw.csv"));
    let agg = lines(&dir.path().join("sweep/aggregate.csv"));
    assert_eq!(raw.len(), 1 + 40);
    assert_eq!(agg.len(), 1 + 4);
    assert!(agg[1..].iter().all(|l| l.ends_with(",10")), "{agg:?}");
}

#[test]
fn minimal_sweep_writes_schema_conformant_csv() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "min");
    let mut args = vec![
        "sweep",
        "--side-info",
        "direct",
        "--patterns",
        "direct",
        "--procedures",
        "simultaneous",
        "--seeds",
        "1",
        "--n",
        "25",
        "--out",
        &out,
    ];
    args.extend(FAST);
    let run = sideinfo(&args);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let raw = lines(&dir.path().join("min/raw.csv"));
    assert_eq!(raw[0], RAW_HEADER);
    assert_eq!(raw.len(), 2);
    let f: Vec<&str> = raw[1].split(',').collect();
    assert_eq!(&f[..5], ["direct", "direct", "simultaneous", "25", "0"]);
    let acc: f64 = f[5].parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    f[6].parse::<f64>().unwrap();
    f[7].parse::<f64>().unwrap();
    f[8].parse::<u64>().unwrap();
    assert_eq!(f[9], "false");
    let agg = lines(&dir.path().join("min/aggregate.csv"));
    assert_eq!(agg[0], AGGREGATE_HEADER);
    assert_eq!(agg.len(), 2);
    let meta: toml::Table = toml::from_str(&fs::read_to_string(dir.path().join("min/metadata.toml")).unwrap()).unwrap();
    assert_eq!(meta["run"]["command"].as_str(), Some("sweep"));
    assert_eq!(meta["config"]["epochs"].as_integer(), Some(10));
}

#[test]
fn default_sweep_includes_baselines_unless_patterns_are_named() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "b");
    let mut args = vec![
        "sweep",
        "--side-info",
        "direct",
        "--procedures",
        "simultaneous",
        "--seeds",
        "1",
        "--n",
        "25",
        "--out",
        &out,
    ];
    args.extend(FAST);
    assert_eq!(code(&sideinfo(&args)), 0);
    let raw = lines(&dir.path().join("b/raw.csv"));
    assert!(raw.iter().any(|l| l.contains(",logreg,none,")), "{raw:?}");
    assert!(raw.iter().any(|l| l.contains(",pca-logreg,none,")));
    assert!(raw.iter().any(|l| l.contains(",sfa-logreg,none,")));
    assert!(raw.iter().any(|l| l.starts_with("direct,direct,simultaneous,")));
}

#[test]
fn sweeps_are_deterministic_across_worker_counts() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str, workers: &str| {
        let out = path(&dir, name);
        let mut args = vec![
            "sweep",
            "--side-info",
            "direct,embedded",
            "--patterns",
            "direct,multi-view-corr",
            "--procedures",
            "simultaneous,decoupled",
            "--allow",
            "embedded:direct",
            "--seeds",
            "2",
            "--n",
            "25",
            "--workers",
            workers,
            "--out",
            &out,
        ];
        args.extend(FAST);
        let r = sideinfo(&args);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    };
    run("one", "1");
    run("three", "3");
    assert_eq!(
        without_timing(&dir.path().join("one/raw.csv")),
        without_timing(&dir.path().join("three/raw.csv"))
    );
    assert_eq!(
        fs::read(dir.path().join("one/aggregate.csv")).unwrap(),
        fs::read(dir.path().join("three/aggregate.csv")).unwrap()
    );
}

#[test]
fn invalid_combination_is_named_and_exits_one() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "bad");
    let run = sideinfo(&[
        "sweep",
        "--side-info",
        "direct",
        "--patterns",
        "multi-view-pred",
        "--out",
        &out,
    ]);
    assert_eq!(code(&run), 1);
    let err = String::from_utf8_lossy(&run.stderr);
    assert!(err.contains("multi-view-pred") && err.contains("direct"), "{err}");
}

#[test]
fn unknown_flags_and_config_keys_exit_one() {
    assert_eq!(code(&sideinfo(&["sweep", "--no-such-flag"])), 1);
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("c.toml");
    fs::write(&config, "epochs = 5\nlearning_rat = 0.1\n").unwrap();
    let run = sideinfo(&["sweep", "--config", config.to_str().unwrap(), "--out", &path(&dir, "x")]);
    assert_eq!(code(&run), 1);
    assert!(String::from_utf8_lossy(&run.stderr).contains("learning_rat"));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&sideinfo(&["--help"])), 0);
    let v = sideinfo(&["--version"]);
    assert_eq!(code(&v), 0);
    assert!(stdout(&v).starts_with("sideinfo "));
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("c.toml");
    fs::write(&config, "epochs = 5\nseed = 3\nn_train = 30\ntest_length = 1000\n").unwrap();
    let out = path(&dir, "t.csv");
    let run = sideinfo(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--epochs",
        "2",
        "--out",
        &out,
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let meta: toml::Table = toml::from_str(&fs::read_to_string(format!("{out}.meta.toml")).unwrap()).unwrap();
    let config = meta["config"].as_table().unwrap();
    assert_eq!(config["epochs"].as_integer(), Some(2));
    assert_eq!(config["seed"].as_integer(), Some(3));
    assert_eq!(config["n_train"].as_integer(), Some(30));
    let raw = lines(Path::new(&out));
    assert_eq!(raw[0], RAW_HEADER);
    assert!(raw[1].starts_with("direct,direct,simultaneous,30,3,"));
}

#[test]
fn sidecar_echo_is_deterministic_and_reusable() {
    let dir = TempDir::new().unwrap();
    let a = path(&dir, "a.csv");
    let b = path(&dir, "b.csv");
    let c = path(&dir, "c.csv");
    let args = |out: &str| {
        let mut v = vec![
            "train".to_string(),
            "--side-info".into(),
            "embedded".into(),
            "--pattern".into(),
            "multi-view-corr".into(),
            "--procedure".into(),
            "decoupled".into(),
            "--phi".into(),
            "mlp".into(),
            "--hidden".into(),
            "4".into(),
            "--sigma".into(),
            "margin:2".into(),
            "--out".into(),
            out.to_string(),
        ];
        v.extend(FAST.iter().map(|s| s.to_string()));
        v
    };
    for out in [&a, &b] {
        let argv = args(out);
        let r = sideinfo(&argv.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    }
    let config_of = |out: &str| {
        let meta: toml::Table = toml::from_str(&fs::read_to_string(format!("{out}.meta.toml")).unwrap()).unwrap();
        let mut config = meta["config"].as_table().unwrap().clone();
        config.remove("out");
        toml::to_string(&config).unwrap()
    };
    assert_eq!(config_of(&a), config_of(&b));
    assert_eq!(without_timing(Path::new(&a)), without_timing(Path::new(&b)));

    // feeding the sidecar back reproduces the run
    let meta = format!("{a}.meta.toml");
    let r = sideinfo(&["train", "--config", &meta, "--out", &c]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(config_of(&a), config_of(&c));
    assert_eq!(without_timing(Path::new(&a)), without_timing(Path::new(&c)));
}

#[test]
fn strict_turns_cell_failures_into_exit_two() {
    // a learning rate this large overflows the parameters, which is recorded as a failed cell
    let dir = TempDir::new().unwrap();
    let mut args = vec![
        "sweep",
        "--side-info",
        "direct",
        "--patterns",
        "direct",
        "--procedures",
        "simultaneous",
        "--seeds",
        "1",
        "--n",
        "25",
        "--learning-rate",
        "1e100",
        "--phi-init",
        "scaled-uniform",
    ];
    args.extend(FAST);
    let lenient = path(&dir, "lenient");
    let mut a = args.clone();
    a.extend(["--out", &lenient]);
    let r = sideinfo(&a);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let raw = lines(&dir.path().join("lenient/raw.csv"));
    assert!(raw[1].ends_with(",true"), "{raw:?}");

    let strict = path(&dir, "strict");
    let mut s = args.clone();
    s.extend(["--out", &strict, "--strict"]);
    assert_eq!(code(&sideinfo(&s)), 2);
    assert!(dir.path().join("strict/raw.csv").exists());
}

#[test]
fn generate_writes_every_channel() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "traj.csv");
    let run = sideinfo(&[
        "generate", "--length", "20", "--d", "3", "--e", "2", "--seed", "4", "--out", &out,
    ]);
    assert_eq!(code(&run), 0);
    let rows = lines(Path::new(&out));
    assert_eq!(rows[0], "t,s,y,x0,x1,x2,z_direct,z_embedded0,z_embedded1,z_relative");
    assert_eq!(rows.len(), 21);
    assert!(rows[1].ends_with(','), "no relative step before t=1");
    assert!(!rows[2].ends_with(','));
    let again = path(&dir, "again.csv");
    sideinfo(&[
        "generate", "--length", "20", "--d", "3", "--e", "2", "--seed", "4", "--out", &again,
    ]);
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn gradcheck_filters_to_a_single_combination() {
    let run = sideinfo(&[
        "gradcheck",
        "--only",
        "pairwise-sim",
        "--sigma",
        "margin",
        "--family",
        "linear",
    ]);
    assert_eq!(code(&run), 0);
    let text = stdout(&run);
    let rows: Vec<&str> = text.lines().filter(|l| l.starts_with("pairwise-sim")).collect();
    assert_eq!(rows.len(), 1, "{text}");
    assert!(rows[0].ends_with("PASS"));
    assert!(text.contains("1 combinations"), "{text}");
    assert_eq!(
        text,
        stdout(&sideinfo(&[
            "gradcheck",
            "--only",
            "pairwise-sim",
            "--sigma",
            "margin",
            "--family",
            "linear"
        ]))
    );
}

#[test]
fn gradcheck_full_catalogue_passes() {
    let run = sideinfo(&["gradcheck", "--draws", "5"]);
    assert_eq!(code(&run), 0, "{}", stdout(&run));
    assert!(stdout(&run).contains("all pass"));
}

#[test]
fn gradcheck_rejects_unknown_filters() {
    assert_eq!(code(&sideinfo(&["gradcheck", "--only", "nonsense"])), 1);
    assert_eq!(code(&sideinfo(&["gradcheck", "--family", "tree"])), 1);
    assert_eq!(code(&sideinfo(&["gradcheck", "--tolerance", "0"])), 1);
}

#[test]
fn oracle_check_runs_selected_suites() {
    let run = sideinfo(&["oracle-check", "--suite", "cca"]);
    assert_eq!(code(&run), 0, "{}", stdout(&run));
    let text = stdout(&run);
    assert!(text.contains("cca: PASS"));
    assert!(!text.contains("sfa"));
    let all = sideinfo(&["oracle-check"]);
    assert_eq!(code(&all), 0, "{}", stdout(&all));
    for suite in ["cca", "sfa", "pca", "losses"] {
        assert!(stdout(&all).contains(&format!("{suite}: PASS")), "{suite}");
    }
}

#[test]
fn oracle_check_rejects_bad_thresholds() {
    assert_eq!(code(&sideinfo(&["oracle-check", "--tolerance", "-1"])), 1);
    assert_eq!(code(&sideinfo(&["oracle-check", "--suite", "nope"])), 1);
    assert_eq!(code(&sideinfo(&["oracle-check", "--min-alignment", "1.5"])), 1);
    // an unreachable but valid bar is a failed check, not a usage error
    assert_eq!(
        code(&sideinfo(&[
            "oracle-check",
            "--suite",
            "cca",
            "--min-alignment",
            "0.99999999"
        ])),
        2
    );
}
