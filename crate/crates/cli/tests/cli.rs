use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_aoi-rl"));
    c.env_remove("AOI_RL_THREADS");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn gain(stdout: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("gain "))
        .expect("gain line")
        .parse()
        .unwrap()
}

fn config_text(sources: &[(f64, u32, u32)], packet_mbits: f64) -> String {
    let mut s = format!(
        "tx_power_dbm = 37.0\nharvest_efficiency = 0.5\nnoise_power_dbm = -95.0\npacket_mbits = {packet_mbits}\n\
         bandwidth_mhz = 1.0\nreference_gain = 0.2\npath_loss_exponent = 2.0\n"
    );
    let w = 1.0 / sources.len() as f64;
    for &(d, quanta, levels) in sources {
        s += &format!(
            "\n[[sources]]\ndistance_m = {d}\nbattery_capacity_mj = 0.3\nbattery_quanta = {quanta}\naoi_cap = {levels}\n\
             weight = {w}\nlevels_downlink = {levels}\nlevels_uplink = {levels}\n"
        );
    }
    s
}

#[test]
fn degenerate_config_gain_is_its_stage_cost() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, config_text(&[(25.0, 1, 1)], 12.0)).unwrap();
    let out = ok(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("s").to_str().unwrap(),
    ]);
    assert!(out.contains("states 2"), "{out}");
    assert!((gain(&out) - 1.0).abs() < 1e-12);
}

#[test]
fn solve_writes_policy_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("single-source-4.toml");
    let out = ok(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!((gain(&out) - 9.0 / 7.0).abs() < 1e-8);
    let policy = std::fs::read_to_string(dir.path().join("policy.csv")).unwrap();
    assert_eq!(policy.lines().count(), 257);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn single_value_sweep_matches_solve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("single-source-10.toml");
    let cfg = cfg.to_str().unwrap();
    let solved = gain(&ok(&[
        "solve",
        "--config",
        cfg,
        "--out",
        dir.path().join("s").to_str().unwrap(),
    ]));
    let sweep_dir = dir.path().join("w");
    ok(&[
        "sweep",
        "--config",
        cfg,
        "--vary",
        "packet_bits",
        "--values",
        "12",
        "--out",
        sweep_dir.to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(sweep_dir.join("sweep.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "packet_mbits");
    assert_eq!(row[3].parse::<f64>().unwrap(), solved);
}

#[test]
fn same_seed_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("single-source-4.toml");
    let cfg = cfg.to_str().unwrap();
    for (agent, slots, files) in [
        ("tabular", "20000", &["trace.csv", "policy.csv", "manifest.json"][..]),
        ("dqn", "600", &["trace.csv", "checkpoint.json", "manifest.json"][..]),
    ] {
        let outs: Vec<PathBuf> = ["a", "b"]
            .iter()
            .map(|r| dir.path().join(format!("{agent}-{r}")))
            .collect();
        for o in &outs {
            ok(&[
                "train",
                "--config",
                cfg,
                "--agent",
                agent,
                "--seed",
                "7",
                "--slots",
                slots,
                "--hidden",
                "8",
                "--out",
                o.to_str().unwrap(),
            ]);
        }
        for f in files {
            let a = std::fs::read(outs[0].join(f)).unwrap();
            let b = std::fs::read(outs[1].join(f)).unwrap();
            assert!(!a.is_empty());
            assert_eq!(a, b, "{agent} {f} differs between runs");
        }
    }
    let other = dir.path().join("other");
    ok(&[
        "train",
        "--config",
        cfg,
        "--agent",
        "tabular",
        "--seed",
        "8",
        "--slots",
        "20000",
        "--out",
        other.to_str().unwrap(),
    ]);
    assert_ne!(
        std::fs::read(other.join("trace.csv")).unwrap(),
        std::fs::read(dir.path().join("tabular-a/trace.csv")).unwrap()
    );
}

#[test]
fn verify_fails_only_on_exact_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("single-source-4.toml");
    let cfg = cfg.to_str().unwrap();
    ok(&["solve", "--config", cfg, "--out", dir.path().to_str().unwrap()]);
    let policy = dir.path().join("policy.csv");
    let out = ok(&["verify", "--config", cfg, "--policy", policy.to_str().unwrap()]);
    assert!(!out.contains("FAILED"));

    // Switch one state to harvesting while the state one age lower transmits.
    let text = std::fs::read_to_string(&policy).unwrap();
    let rows: Vec<Vec<String>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    let target = rows
        .iter()
        .position(|r| {
            let a: u32 = r[1].parse().unwrap();
            r[4] == "T1"
                && rows.iter().any(|q| {
                    q[0] == r[0] && q[2] == r[2] && q[3] == r[3] && q[1] == (a + 1).to_string() && q[4] == "T1"
                })
        })
        .expect("some transmitting state below the age cap");
    let a: u32 = rows[target][1].parse().unwrap();
    let mut tampered: Vec<String> = vec![text.lines().next().unwrap().to_string()];
    for r in &rows {
        let mut r = r.clone();
        let t = &rows[target];
        if r[0] == t[0] && r[2] == t[2] && r[3] == t[3] && r[1] == (a + 1).to_string() {
            r[4] = "H".into();
        }
        tampered.push(r.join(","));
    }
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, tampered.join("\n") + "\n").unwrap();
    let report = dir.path().join("violations.csv");
    let out = run(&[
        "verify",
        "--config",
        cfg,
        "--policy",
        bad.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stdout));
    let report = std::fs::read_to_string(report).unwrap();
    assert!(report.starts_with("check,severity,state,compared_state,expected,found"));
    assert!(report.lines().count() > 1);

    ok(&[
        "verify",
        "--config",
        cfg,
        "--policy",
        bad.to_str().unwrap(),
        "--advisory",
    ]);
}

#[test]
fn learned_checkpoints_are_advisory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("single-source-4.toml");
    let cfg = cfg.to_str().unwrap();
    ok(&[
        "train",
        "--config",
        cfg,
        "--agent",
        "dqn",
        "--slots",
        "300",
        "--hidden",
        "4",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let ck = dir.path().join("checkpoint.json");
    ok(&["verify", "--config", cfg, "--checkpoint", ck.to_str().unwrap()]);
    let out = ok(&[
        "simulate",
        "--config",
        cfg,
        "--checkpoint",
        ck.to_str().unwrap(),
        "--slots",
        "1000",
    ]);
    assert!(out.starts_with("average weighted age "));

    let two = configs().join("two-source.toml");
    let out = run(&[
        "verify",
        "--config",
        two.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}

#[test]
fn oversized_state_space_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("big.toml");
    std::fs::write(&cfg, config_text(&[(25.0, 9, 10), (40.0, 9, 10), (20.0, 9, 10)], 12.0)).unwrap();
    let out = run(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("s").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("1000000000000"), "{err}");
}

#[test]
fn thread_count_must_be_positive() {
    let cfg = configs().join("single-source-4.toml");
    let out = bin()
        .env("AOI_RL_THREADS", "0")
        .args(["simulate", "--config", cfg.to_str().unwrap(), "--slots", "10"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = bin()
        .env("AOI_RL_THREADS", "1")
        .args(["simulate", "--config", cfg.to_str().unwrap(), "--slots", "10"])
        .output()
        .unwrap();
    assert!(out.status.success());
}
