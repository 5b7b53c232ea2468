use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str, file: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
        .join(file)
        .display()
        .to_string()
}

fn dmac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmac"))
        .args(args)
        .env_remove("DMAC_CACHE_DIR")
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn tiny_config() -> Vec<String> {
    vec![
        "--channel".into(),
        fixture("tiny", "channel.json"),
        "--ensemble".into(),
        fixture("tiny", "ensemble.json"),
        "--region".into(),
        fixture("tiny", "region.json"),
        "--margin".into(),
        fixture("tiny", "margin.json"),
    ]
}

fn with(base: &[String], extra: &[&str]) -> Vec<String> {
    base.iter()
        .cloned()
        .chain(extra.iter().map(|s| s.to_string()))
        .collect()
}

fn run(args: &[String]) -> Output {
    dmac(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(dmac(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(dmac(&[]).status.code(), Some(2));
    assert_eq!(
        dmac(&[
            "region",
            "sweep",
            "--channel",
            "x.json",
            "--r",
            "0,0",
            "--axis",
            "1",
            "--start",
            "0",
            "--stop",
            "1",
            "--steps",
            "0"
        ])
        .status
        .code(),
        Some(2)
    );
    let bad_mode = with(&tiny_config(), &["--N", "2", "--mode", "eq7"]);
    assert_eq!(
        run(&with(
            &["oracle".into()],
            &bad_mode.iter().map(String::as_str).collect::<Vec<_>>()
        ))
        .status
        .code(),
        Some(2)
    );
    let missing = dmac(&["validate", "--channel", "/nonexistent/channel.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn help_lists_subcommands() {
    let out = dmac(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in [
        "validate", "region", "exponent", "gep", "simulate", "oracle", "gaussian",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn adder_rate_point_is_member() {
    let out = dmac(&[
        "region",
        "check",
        "--channel",
        &fixture("adder", "channel.json"),
        "--r",
        "0.3,0.3",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["member"], true);
    assert_eq!(v["closure"]["member"], true);
}

#[test]
fn rates_in_bits_are_converted() {
    let ch = fixture("adder", "channel.json");
    let bits = stdout_json(&dmac(&[
        "region",
        "check",
        "--channel",
        &ch,
        "--r",
        "1,0.25",
        "--units",
        "bits",
    ]));
    let nats = stdout_json(&dmac(&[
        "region",
        "check",
        "--channel",
        &ch,
        "--r",
        "0.6931471805599453,0.17328679513998632",
    ]));
    assert_eq!(bits["rates"], nats["rates"]);
    assert_eq!(bits["member"], false);
}

#[test]
fn ensemble_vector_check() {
    let args = [
        "region",
        "check",
        "--channel",
        &fixture("adder", "channel.json"),
        "--ensemble",
        &fixture("adder", "ensemble.json"),
    ];
    let low = stdout_json(&dmac(&[&args[..], &["--g", "0,0", "--subset", "1"]].concat()));
    assert_eq!(low["member"], true);
    assert_eq!(low["in_cd_subset"]["member"], true);
    let high = stdout_json(&dmac(&[&args[..], &["--g", "1,1"]].concat()));
    assert_eq!(high["member"], false);
    let out = dmac(&[&args[..], &["--g", "5,0"]].concat());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gaussian_point_outside() {
    let out = dmac(&["gaussian", "--K", "2", "--P", "1,1", "--N0", "1", "--r", "0.3,0.3"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["member"], false);
    let inside = dmac(&["gaussian", "--K", "2", "--P", "1,1", "--N0", "1", "--r", "0.2,0.2"]);
    assert_eq!(stdout_json(&inside)["member"], true);
    assert_eq!(
        dmac(&["gaussian", "--K", "2", "--P", "1", "--N0", "1", "--r", "0.2,0.2"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn one_point_sweep() {
    let out = dmac(&[
        "region",
        "sweep",
        "--channel",
        &fixture("adder", "channel.json"),
        "--r",
        "0.3,0.3",
        "--axis",
        "1",
        "--start",
        "0.2",
        "--stop",
        "0.9",
        "--steps",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("rate,r1,r2,in_cd_all"));
    assert!(lines[1].starts_with("0.2,0.2,0.3,true"));
}

#[test]
fn sweep_has_single_transition() {
    let out = dmac(&[
        "region",
        "sweep",
        "--channel",
        &fixture("adder", "channel.json"),
        "--r",
        "0,0.3",
        "--axis",
        "1",
        "--start",
        "0",
        "--stop",
        "1",
        "--steps",
        "41",
    ]);
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    let members: Vec<bool> = rdr.records().map(|r| r.unwrap()[3].parse().unwrap()).collect();
    assert_eq!(members.len(), 41);
    assert!(members[0] && !members[40]);
    assert_eq!(members.windows(2).filter(|w| w[0] != w[1]).count(), 1);
}

#[test]
fn malformed_json_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.json",
        "{\n  \"K\": 1,\n  \"input_alphabets\": [2]\n  \"output_alphabet\": 2\n}\n",
    );
    let out = dmac(&["validate", "--channel", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json:4:3"), "{err}");
}

#[test]
fn invalid_channel_is_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"K": 1, "input_alphabets": [2], "output_alphabet": 2, "transition": [[0.5, 0.6], [0.5, 0.5]]}"#;
    let bad = write(dir.path(), "rows.json", text);
    let out = dmac(&["validate", "--channel", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout_json(&out)["valid"], false);
    let typed = write(dir.path(), "typed.json", r#"{"K": "one"}"#);
    assert_eq!(
        dmac(&["validate", "--channel", typed.to_str().unwrap()]).status.code(),
        Some(1)
    );
    let ok = dmac(&[
        "validate",
        "--channel",
        &fixture("jammed_adder", "channel.json"),
        "--ensemble",
        &fixture("jammed_adder", "ensemble.json"),
    ]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(stdout_json(&ok)["ensemble_valid"], true);
}

#[test]
fn bound_does_not_grow_with_n() {
    let out = run(&with(
        &[["gep".to_string()].as_slice(), tiny_config().as_slice()].concat(),
        &["--n-sweep", "20:100:20"],
    ));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    let bounds: Vec<f64> = rdr.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
    assert_eq!(bounds.len(), 5);
    assert!(bounds.windows(2).all(|w| w[1] <= w[0]), "{bounds:?}");
}

#[test]
fn gep_single_decoder_and_partition() {
    let base = [["gep".to_string()].as_slice(), tiny_config().as_slice()].concat();
    let single = stdout_json(&run(&with(&base, &["--N", "40", "--decode-set", "1,2"])));
    assert_eq!(single["N"], 40);
    let part = stdout_json(&run(&with(&base, &["--N", "40", "--strategy", "greedy"])));
    assert_eq!(part["strategy"], "greedy");
    assert!(part["total"].as_f64().unwrap() <= single["total"].as_f64().unwrap() + 1e-12);
}

#[test]
fn exponent_command() {
    let out = dmac(&[
        "exponent",
        "--channel",
        &fixture("bsc", "channel.json"),
        "--ensemble",
        &fixture("bsc", "ensemble.json"),
        "--kind",
        "mD",
        "--decode-set",
        "1",
        "--g",
        "0",
        "--g-tilde",
        "0",
        "--alpha",
        "0,0",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert!((v["report"]["value"].as_f64().unwrap() - 1.25f64.ln()).abs() < 1e-6);
    let bad = dmac(&[
        "exponent",
        "--channel",
        &fixture("bsc", "channel.json"),
        "--ensemble",
        &fixture("bsc", "ensemble.json"),
        "--kind",
        "mX",
        "--decode-set",
        "1",
        "--g",
        "0",
        "--g-tilde",
        "0",
        "--alpha",
        "0,0",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn simulate_writes_csv_with_twelve_digits() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("sim.csv");
    let args = with(
        &[["simulate".to_string()].as_slice(), tiny_config().as_slice()].concat(),
        &[
            "--N",
            "4",
            "--trials",
            "300",
            "--seed",
            "9",
            "--mode",
            "eq6,joint-margin",
            "--csv",
            csv_path.to_str().unwrap(),
            "--with-oracle",
        ],
    );
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert_eq!(report["modes"][0]["mode"], "missed-collision");
    assert!(report["analytic_bound"].as_f64().is_some());
    let mut rdr = csv::Reader::from_path(&csv_path).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>()[..3],
        ["g", "zone", "mode"]
    );
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let digits = rec[5].trim_start_matches("0.").trim_start_matches('0').replace('.', "");
        assert!(digits.len() <= 12, "{}", &rec[5]);
        assert!(!rec[9].is_empty());
    }
}

#[test]
fn manifest_replays() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("oracle.json");
    let manifest = dir.path().join("run.json");
    let args = with(
        &[["oracle".to_string()].as_slice(), tiny_config().as_slice()].concat(),
        &[
            "--N",
            "2",
            "--seed",
            "4",
            "--tune",
            "exact",
            "--out",
            out_path.to_str().unwrap(),
            "--manifest",
            manifest.to_str().unwrap(),
        ],
    );
    assert_eq!(run(&args).status.code(), Some(0));
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["seeds"]["seed"], 4);
    assert!(m["config"]["channel"].is_object());
    assert_eq!(m["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(m["wall_clock_seconds"].as_f64().unwrap() >= 0.0);

    let replay = dmac(&["replay", manifest.to_str().unwrap()]);
    assert_eq!(replay.status.code(), Some(0));
    assert_eq!(stdout_json(&replay)["reproduced"], true);

    let mut tampered = m.clone();
    tampered["outputs"][0]["sha256"] = Value::String("0".repeat(64));
    let t = write(dir.path(), "tampered.json", &tampered.to_string());
    let replay = dmac(&["replay", t.to_str().unwrap()]);
    assert_eq!(replay.status.code(), Some(1));
    assert_eq!(stdout_json(&replay)["reproduced"], false);
}

#[test]
fn tuned_policy_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let policy = dir.path().join("policy.json");
    let base = tiny_config();
    let tune = run(&with(
        &[["tune".to_string()].as_slice(), base.as_slice()].concat(),
        &["--N", "2", "--out", policy.to_str().unwrap()],
    ));
    assert_eq!(tune.status.code(), Some(0));
    let oracle = |extra: &[&str]| {
        stdout_json(&run(&with(
            &[["oracle".to_string()].as_slice(), base.as_slice()].concat(),
            extra,
        )))
    };
    let from_file = oracle(&["--N", "2", "--policy", policy.to_str().unwrap()]);
    let inline = oracle(&["--N", "2", "--tune", "exact"]);
    assert_eq!(from_file, inline);
}

#[test]
fn oracle_limit_is_domain_error() {
    let args = with(
        &[["oracle".to_string()].as_slice(), tiny_config().as_slice()].concat(),
        &["--N", "6", "--max-terms", "10"],
    );
    assert_eq!(run(&args).status.code(), Some(1));
}

#[test]
fn cache_dir_persists_exponents() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let args = with(
        &[["gep".to_string()].as_slice(), tiny_config().as_slice()].concat(),
        &["--N", "30"],
    );
    let go = || {
        Command::new(env!("CARGO_BIN_EXE_dmac"))
            .args(&args)
            .env("DMAC_CACHE_DIR", &cache)
            .output()
            .unwrap()
    };
    let first = go();
    assert_eq!(first.status.code(), Some(0));
    let files: Vec<_> = std::fs::read_dir(&cache)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(files.len(), 1);
    assert!(files[0].starts_with("exponents-") && files[0].ends_with(".json"));
    assert_eq!(go().stdout, first.stdout);
    assert_eq!(run(&args).stdout, first.stdout);
}

#[test]
fn oracle_averages_over_seeds() {
    let base = [["oracle".to_string()].as_slice(), tiny_config().as_slice()].concat();
    let out = run(&with(
        &base,
        &["--N", "2", "--tune", "exact", "--codebook-seeds", "0,1,2,3"],
    ));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["seeds"], serde_json::json!([0, 1, 2, 3]));
    let spread = &v["gep"][0]["worst_case"];
    assert!(spread["min"].as_f64().unwrap() <= spread["mean"].as_f64().unwrap());
    assert!(spread["mean"].as_f64().unwrap() <= spread["max"].as_f64().unwrap());
    let conflict = run(&with(
        &base,
        &["--N", "2", "--codebook-seed", "1", "--codebook-seeds", "0,1"],
    ));
    assert_eq!(conflict.status.code(), Some(2));
}
