use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;

const EXAMPLE_FRAMES: &str = "\
1481492683.285052 0x0208 000 0x8 0x00 0x00 0x32 0x00 0x0e 0x32 0xfe 0x3c
1497323915.123844 0x018e 000 0x8 0x03 0x03 0x00 0x00 0x00 0x00 0x07 0x3f
1497323915.112910 0x00f1 000 0x6 0x28 0x00 0x00 0x40 0x00 0x00
";

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn canlift<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_canlift"))
        .args(args)
        .env_remove("CANLIFT_THREADS")
        .output()
        .unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn ok<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> String {
    let r = canlift(args);
    assert_eq!(r.code, 0, "stderr: {}", r.stderr);
    r.stdout
}

fn p(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

/// signal -> candidate, from a synth ground-truth manifest.
fn truth(dir: &Path) -> BTreeMap<String, String> {
    fs::read_to_string(dir.join("truth.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].to_string())
        })
        .collect()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth".to_string(), "--out".into(), p(dir)];
    args.extend(extra.iter().map(|s| s.to_string()));
    ok(&args);
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let r = canlift::<&str>(&[]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("Usage"));
    assert!(r.stdout.is_empty());
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(canlift(&["ids", "x.log", "--bogus"]).code, 1);
    assert_eq!(canlift(&["frobnicate"]).code, 1);
    assert_eq!(canlift(&["find-clutch", "x.log", "--velocity", "0410:1-3"]).code, 1);
    assert_eq!(canlift(&["features", "x.log", "--spec", "full20"]).code, 1);
    assert_eq!(canlift(&["--help"]).code, 0);
}

#[test]
fn data_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let r = canlift(&["ids", &p(&dir.path().join("missing.log"))]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("missing.log"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "window_s = \"long\"\n").unwrap();
    assert_eq!(canlift(&["config", "dump", "--config", &p(&bad)]).code, 2);
}

#[test]
fn ids_lists_the_three_example_frames() {
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("t1.log");
    fs::write(&log, EXAMPLE_FRAMES).unwrap();
    assert_eq!(ok(&["ids", &p(&log)]), "can_id,frames,dlc\n00f1,1,6\n018e,1,8\n0208,1,8\n");

    let lines: Vec<Value> = ok(&["ids", "--json", &p(&log)]).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2]["can_id"], "0208");
    assert_eq!(lines[2]["table"], "ids");
    assert_eq!(lines[0]["dlc"], 6);
}

#[test]
fn malformed_lines_are_skipped_unless_strict() {
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("t1.log");
    fs::write(&log, format!("{EXAMPLE_FRAMES}garbage line\n")).unwrap();
    let r = canlift(&["ids", &p(&log)]);
    assert_eq!(r.code, 0);
    assert_eq!(r.stdout.lines().count(), 4);
    assert!(r.stderr.contains("skipped 1 malformed line"), "{}", r.stderr);

    let r = canlift(&["ids", "--strict", &p(&log)]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("line 4"), "{}", r.stderr);
}

#[test]
fn config_dump_round_trips_to_the_same_hash() {
    let dir = TempDir::new().unwrap();
    let hash = ok(&["config", "hash"]);
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, ok(&["config", "dump"])).unwrap();
    assert_eq!(ok(&["config", "hash", "--config", &p(&cfg)]), hash);

    let text = fs::read_to_string(&cfg).unwrap().replace("min_variation = 7", "min_variation = 9");
    fs::write(&cfg, text).unwrap();
    assert_ne!(ok(&["config", "hash", "--config", &p(&cfg)]), hash);
}

#[test]
fn single_drive_tools() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), &["--seed", "7", "--duration", "600"]);
    let t = truth(dir.path());
    let log = p(&dir.path().join("drive.log"));
    let gps = p(&dir.path().join("gps.csv"));

    // decompose: every span listed, signals kept, constants dropped
    let manifest = ok(&["decompose", &log]);
    let rows: BTreeMap<&str, Vec<&str>> =
        manifest.lines().skip(1).map(|l| (l.split(',').next().unwrap(), l.split(',').collect())).collect();
    for s in ["velocity", "rpm", "accelerator"] {
        assert_eq!(rows[t[s].as_str()][3], "kept", "{s}");
    }
    assert!(rows.values().any(|r| r[3] == "dropped:variation"));
    assert!(rows.values().any(|r| r[3] == "dropped:counter"));
    let le = ok(&["decompose", "--little-endian", &log]);
    assert!(le.lines().count() > manifest.lines().count());
    assert!(le.contains("le,"));

    // bits: 8 rows per payload byte
    let bits = ok(&["bits", &log, "--id", &t["velocity"][..4]]);
    assert!(matches!(bits.lines().count() - 1, 8 | 16 | 24 | 32 | 40 | 48 | 56 | 64));

    // features: fixed column order
    let feats = ok(&["features", &log, "--spec", "reid11", "--candidate", &t["velocity"]]);
    let header: Vec<&str> = feats.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 3 + 11);
    assert_eq!(&header[..4], &["candidate", "t_start", "t_end", "count_above_mean"]);
    assert!(feats.lines().skip(1).all(|l| l.split(',').count() == 14));

    let ranking = ok(&["find-velocity", &log, &gps, "--top", "3"]);
    let first: Vec<&str> = ranking.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[..2], ["1", t["velocity"].as_str()]);
    assert_eq!(ranking.lines().count(), 4);

    let pedals = ok(&["find-pedals", &log, "--top", "1"]);
    let first: Vec<&str> = pedals.lines().nth(1).unwrap().split(',').collect();
    let mut got = [first[1], first[2]];
    let mut want = [t["accelerator"].as_str(), t["brake"].as_str()];
    got.sort();
    want.sort();
    assert_eq!(got, want);

    let clutch = ok(&["find-clutch", &log, "--velocity", &t["velocity"], "--top", "1"]);
    let first: Vec<&str> = clutch.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[1..3], [t["rpm"].as_str(), t["clutch"].as_str()]);

    // reports are byte-identical across runs and thread counts
    let again = canlift(&["find-velocity", &log, &gps, "--top", "3", "--threads", "1"]);
    assert_eq!(again.code, 0);
    assert_eq!(again.stdout, ranking);
}

#[test]
fn synth_is_deterministic_and_its_scenario_reproduces_the_drive() {
    let dir = TempDir::new().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    synth(&a, &["--seed", "3", "--duration", "30", "--style", "aggressive"]);
    synth(&b, &["--seed", "3", "--duration", "30", "--style", "aggressive"]);
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    for f in ["drive.log", "gps.csv", "truth.csv", "scenario.toml"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    synth(&c, &["--scenario", &p(&a.join("scenario.toml"))]);
    assert_eq!(read(&a, "drive.log"), read(&c, "drive.log"));

    // every generated line parses strictly
    assert_eq!(canlift(&["ids", "--strict", &p(&a.join("drive.log"))]).code, 0);
    assert_eq!(canlift(&["synth", "--out", &p(&c), "--style", "reckless"]).code, 1);
}

#[test]
fn train_and_match_across_cars() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), &["--pair", "--seed", "20240601", "--duration", "1800"]);
    let (base, target) = (dir.path().join("base"), dir.path().join("target"));
    let (tb, tt) = (truth(&base), truth(&target));
    let model = p(&dir.path().join("m.cmf"));
    for signal in ["rpm", "velocity", "accelerator"] {
        let trained = ok(&["train", "--base", &p(&base.join("drive.log")), "--signal", signal, "--truth", &tb[signal], "--out", &model]);
        assert!(trained.starts_with("signal,trees,"));
        let report = ok(&["match", "--model", &model, "--target", &p(&target.join("drive.log")), "--truth", &tt[signal]]);
        let mut lines = report.lines();
        assert_eq!(lines.next(), Some("sensor,rank,precision,recall,gap"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[..2], [signal, "1"], "{report}");
        assert!(row[2..].iter().all(|v| v.split('.').nth(1).is_some_and(|d| d.len() == 4)));
        assert_eq!(lines.next(), Some(""));
        assert_eq!(lines.next(), Some("rank,candidate,votes,windows,vote_fraction"));
        assert!(lines.next().unwrap().starts_with(&format!("1,{},", tt[signal])));
    }

    // a model refuses logs prepared under another configuration
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "min_variation = 9\n").unwrap();
    let r = canlift(&["match", "--model", &model, "--target", &p(&target.join("drive.log")), "--config", &p(&cfg)]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("hash mismatch"), "{}", r.stderr);

    let r = canlift(&["train", "--base", &p(&base.join("drive.log")), "--signal", "x", "--truth", "07ff:0", "--out", &model]);
    assert_eq!(r.code, 2);
}

#[test]
fn reid_over_a_directory_of_drivers() {
    let dir = TempDir::new().unwrap();
    let drives = dir.path().join("drives");
    let mut t = BTreeMap::new();
    for (style, seeds) in [("smooth", [11, 12]), ("aggressive", [21, 22])] {
        for seed in seeds {
            let out = dir.path().join(format!("{style}-{seed}"));
            synth(&out, &["--seed", &seed.to_string(), "--layout-seed", "99", "--duration", "400", "--style", style]);
            t = truth(&out);
            fs::create_dir_all(drives.join(style)).unwrap();
            fs::copy(out.join("drive.log"), drives.join(style).join(format!("{seed}.log"))).unwrap();
        }
    }
    let signals = format!("acc={},brake={},velo={},rpm={}", t["accelerator"], t["brake"], t["velocity"], t["rpm"]);
    let report = ok(&["reid", "--signals", &signals, "--drives", &p(&drives), "--folds", "5", "--seed", "1", "--json"]);
    let lines: Vec<Value> = report.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let drivers: Vec<&Value> = lines.iter().filter(|l| l["table"] == "drivers").collect();
    assert_eq!(drivers.len(), 2);
    assert!(drivers.iter().all(|d| d["drives"] == 2 && d["samples"].as_u64().unwrap() > 100));
    let pair = lines.iter().find(|l| l["table"] == "pairs").unwrap();
    assert!(pair["precision"].as_f64().unwrap() > 0.8, "{report}");
    let summary = lines.iter().find(|l| l["table"] == "summary").unwrap();
    assert_eq!(summary["pairs"], 1);

    let r = canlift(&["reid", "--signals", "acc", "--drives", &p(&drives)]);
    assert_eq!(r.code, 1);
    // top-level logs are one driver each
    let r = canlift(&["reid", "--signals", &signals, "--drives", &p(&drives.join("smooth")), "--folds", "5"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("\n11,12,"), "{}", r.stdout);
    let lone = dir.path().join("lone");
    fs::create_dir_all(&lone).unwrap();
    fs::copy(drives.join("smooth").join("11.log"), lone.join("11.log")).unwrap();
    let r = canlift(&["reid", "--signals", &signals, "--drives", &p(&lone)]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("need at least two"), "{}", r.stderr);
}
