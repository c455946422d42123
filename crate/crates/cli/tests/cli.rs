use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_indoor-poi"));
    cmd.env_remove("POI_STORE");
    cmd
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        bin()
            .current_dir(self.dir.path())
            .arg("--store")
            .arg(self.path("store"))
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn simulate(&self, scenario: &str, seed: &str) {
        self.ok(&["simulate", "--scenario", scenario, "--seed", seed, "--out", "sim"]);
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn files_in(dir: &Path) -> BTreeSet<String> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect()
}

#[test]
fn simulate_office_day_writes_one_user() {
    let ws = Workspace::new();
    ws.simulate("office-day", "1");
    assert_eq!(
        files_in(&ws.path("sim")),
        ["alice.scan.gz", "truth.csv"].map(String::from).into()
    );
    let truth = fs::read_to_string(ws.path("sim/truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 7);
    assert!(truth.contains("alice,2024-03-04,Meeting,11:58,14:57"));
}

#[test]
fn simulate_mall_writes_eleven_users() {
    let ws = Workspace::new();
    ws.simulate("mall-11-users", "1");
    let scans = files_in(&ws.path("sim"))
        .into_iter()
        .filter(|f| f.ends_with(".scan.gz"))
        .count();
    assert_eq!(scans, 11);
}

#[test]
fn simulate_is_byte_identical_per_seed() {
    let a = Workspace::new();
    let b = Workspace::new();
    a.simulate("office-3day", "42");
    b.simulate("office-3day", "42");
    for f in ["bob.scan.gz", "truth.csv"] {
        assert_eq!(
            fs::read(a.path("sim").join(f)).unwrap(),
            fs::read(b.path("sim").join(f)).unwrap()
        );
    }
    let c = Workspace::new();
    c.simulate("office-3day", "43");
    assert_ne!(
        fs::read(a.path("sim/bob.scan.gz")).unwrap(),
        fs::read(c.path("sim/bob.scan.gz")).unwrap()
    );
}

#[test]
fn simulate_rejects_bad_scenario() {
    let ws = Workspace::new();
    fs::write(ws.path("bad.toml"), "[scenario]\nname = \"x\"\n").unwrap();
    let out = ws.run(&["simulate", "--scenario", "bad.toml"]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&ws.run(&["simulate", "--scenario", "missing.toml"])), 2);
}

#[test]
fn ingest_reports_and_dedups() {
    let ws = Workspace::new();
    ws.simulate("office-day", "1");
    let first = ws.ok(&["ingest", "sim/alice.scan.gz"]);
    assert!(first.contains("user alice, 260 scans"), "{first}");
    assert!(first.contains("0 rows skipped"), "{first}");
    let again = ws.ok(&["ingest", "sim/alice.scan.gz"]);
    assert!(again.contains(" 0 rows added"), "{again}");
}

#[test]
fn ingest_plain_scan_with_user_flag() {
    let ws = Workspace::new();
    fs::write(
        ws.path("log.scan"),
        "{\"t\":600,\"dev\":\"d\",\"aps\":[[\"02:00:00:00:00:01\",-50]]}\n",
    )
    .unwrap();
    let out = ws.ok(&["ingest", "--user", "zoe", "log.scan"]);
    assert!(out.contains("user zoe, 1 scans, 1 rows added"), "{out}");
}

#[test]
fn ingest_corrupt_gzip_exits_2() {
    let ws = Workspace::new();
    fs::write(ws.path("bad.scan.gz"), b"\x1f\x8b\x08garbage").unwrap();
    let out = ws.run(&["ingest", "bad.scan.gz"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("corrupt gzip stream"), "{}", stderr(&out));
}

#[test]
fn ingest_malformed_line_exits_2_with_line_number() {
    let ws = Workspace::new();
    fs::write(
        ws.path("u.scan"),
        "{\"t\":600,\"dev\":\"d\",\"aps\":[[\"02:00:00:00:00:01\",-50]]}\n{\"t\":900,\"dev\":\"d\",\"aps\":[[\"zz\",-50]]}\n",
    )
    .unwrap();
    let out = ws.run(&["ingest", "u.scan"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
    assert_eq!(code(&ws.run(&["ingest", "notes.txt"])), 2);
}

fn office_day(ws: &Workspace) {
    ws.simulate("office-day", "5");
    ws.ok(&["ingest", "sim/alice.scan.gz"]);
}

#[test]
fn extract_office_day_matches_itinerary() {
    let ws = Workspace::new();
    office_day(&ws);
    let csv = ws.ok(&[
        "extract",
        "--user",
        "alice",
        "--day",
        "2024-03-04",
        "--truth",
        "sim/truth.csv",
    ]);
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6, "{csv}");
    let labels: Vec<&str> = rows.iter().map(|r| r[3]).collect();
    assert_eq!(labels, ["Home", "Office", "Meeting", "Canteen", "Office", "Home"]);
    let ids: BTreeSet<&str> = rows.iter().map(|r| r[2]).collect();
    assert_eq!(ids.len(), 4);
}

#[test]
fn extract_is_idempotent() {
    let ws = Workspace::new();
    office_day(&ws);
    let args = ["extract", "--user", "alice", "--day", "2024-03-04"];
    let first = ws.ok(&args);
    let second = ws.ok(&args);
    assert_eq!(first, second);
    let out = ws.run(&["extract", "--user", "alice", "--day", "2024-03-04", "--epsilon", "0.6"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("already extracted"), "{}", stderr(&out));
}

#[test]
fn extract_empty_day_gives_header_only() {
    let ws = Workspace::new();
    office_day(&ws);
    let csv = ws.ok(&["extract", "--user", "alice", "--day", "2024-03-05"]);
    assert_eq!(csv, "user,date,poi_id,label,start,end\n");
}

#[test]
fn extract_unknown_user_exits_3() {
    let ws = Workspace::new();
    office_day(&ws);
    let out = ws.run(&["extract", "--user", "nobody", "--day", "2024-03-04"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("unknown user"));
}

#[test]
fn extract_bad_flags_exit_2() {
    let ws = Workspace::new();
    office_day(&ws);
    assert_eq!(code(&ws.run(&["extract", "--user", "alice", "--day", "March 4"])), 2);
    assert_eq!(
        code(&ws.run(&["extract", "--user", "alice", "--day", "2024-03-04", "--epsilon", "1.5"])),
        2
    );
    assert_eq!(code(&ws.run(&["extract", "--user", "alice"])), 2);
}

#[test]
fn store_path_from_environment_and_config() {
    let ws = Workspace::new();
    ws.simulate("office-day", "1");
    let env_store = ws.path("env-store");
    let out = bin()
        .current_dir(ws.dir.path())
        .env("POI_STORE", &env_store)
        .args(["ingest", "sim/alice.scan.gz"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(env_store.join("raw.db").exists());

    fs::write(ws.path("poi.toml"), "store = \"cfg-store\"\n").unwrap();
    let out = bin()
        .current_dir(ws.dir.path())
        .args(["--config", "poi.toml", "ingest", "sim/alice.scan.gz"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(ws.path("cfg-store/raw.db").exists());

    fs::write(ws.path("bad.toml"), "epsilon = \"high\"\n").unwrap();
    let out = bin()
        .current_dir(ws.dir.path())
        .args(["--config", "bad.toml", "ingest", "sim/alice.scan.gz"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn score_end_to_end_day() {
    let ws = Workspace::new();
    office_day(&ws);
    ws.ok(&["extract", "--user", "alice", "--day", "2024-03-04", "-o", "summary.csv"]);
    let report = ws.ok(&["score", "--summary", "summary.csv", "--truth", "sim/truth.csv"]);
    let metrics: BTreeMap<&str, f64> = report
        .lines()
        .map(|l| {
            let (k, v) = l.split_once(',').unwrap();
            (k, v.parse().unwrap())
        })
        .collect();
    assert_eq!(metrics["poi_identity_accuracy"], 1.0);
    assert!(metrics["boundary_error_max_min"] <= 5.0);
    assert_eq!(metrics["splits"], 0.0);
    assert_eq!(metrics["merges"], 0.0);
}

#[test]
fn score_truth_against_itself() {
    let ws = Workspace::new();
    ws.simulate("office-day", "1");
    let truth = fs::read_to_string(ws.path("sim/truth.csv")).unwrap();
    let ids = [("Home", 1), ("Office", 2), ("Meeting", 3), ("Canteen", 4)];
    let mut summary = String::from("user,date,poi_id,label,start,end\n");
    for line in truth.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let id = ids.iter().find(|(l, _)| *l == f[2]).unwrap().1;
        summary.push_str(&format!("{},{},{id},,{},{}\n", f[0], f[1], f[3], f[4]));
    }
    fs::write(ws.path("summary.csv"), summary).unwrap();
    let report = ws.ok(&["score", "--summary", "summary.csv", "--truth", "sim/truth.csv"]);
    assert!(report.contains("boundary_error_mean_min,0.00"), "{report}");
    assert!(report.contains("poi_identity_accuracy,1.0000"), "{report}");
}

#[test]
fn score_parse_failure_exits_2() {
    let ws = Workspace::new();
    fs::write(
        ws.path("s.csv"),
        "user,date,poi_id,label,start,end\nu,2024-03-04,one,,09:00,10:00\n",
    )
    .unwrap();
    fs::write(ws.path("t.csv"), "user,date,label,start,end\n").unwrap();
    let out = ws.run(&["score", "--summary", "s.csv", "--truth", "t.csv"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn communities_need_two_poi() {
    let ws = Workspace::new();
    fs::write(
        ws.path("solo.scan"),
        (0..8)
            .map(|i| {
                format!(
                    "{{\"t\":{},\"dev\":\"d\",\"aps\":[[\"02:00:00:00:00:01\",-50]]}}\n",
                    600 + 300 * i
                )
            })
            .collect::<String>(),
    )
    .unwrap();
    ws.ok(&["ingest", "solo.scan"]);
    ws.ok(&["extract", "--user", "solo", "--day", "1970-01-01"]);
    let out = ws.run(&["communities", "-o", "out"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("at least 2 nodes"), "{}", stderr(&out));
}

#[test]
fn communities_recover_mall_zones() {
    let ws = Workspace::new();
    ws.simulate("mall-11-users", "3");
    let files: Vec<String> = (1..=11).map(|u| format!("sim/shopper-{u:02}.scan.gz")).collect();
    let mut args = vec!["ingest"];
    args.extend(files.iter().map(String::as_str));
    ws.ok(&args);
    for u in 1..=11 {
        let user = format!("shopper-{u:02}");
        ws.ok(&[
            "extract",
            "--user",
            &user,
            "--day",
            "2024-03-09",
            "--truth",
            "sim/truth.csv",
        ]);
    }
    let summary = ws.ok(&[
        "communities",
        "--threshold",
        "0.2",
        "-o",
        "out",
        "--graph-out",
        "graph.txt",
    ]);
    assert!(summary.starts_with("41 POI, 820 pairs scored"), "{summary}");

    let sweep = fs::read_to_string(ws.path("out/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 5, "{sweep}");
    assert!(sweep.starts_with("threshold,edges,communities,modularity\n0.2,"));

    let communities = fs::read_to_string(ws.path("out/communities.csv")).unwrap();
    let mut zones: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for line in communities.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let zone = f[2].split('-').next().unwrap();
        zones.entry(f[3]).or_default().insert(zone);
    }
    assert_eq!(zones.len(), 3, "{communities}");
    let distinct: BTreeSet<&str> = zones.values().flatten().copied().collect();
    assert!(zones.values().all(|z| z.len() == 1), "{zones:?}");
    assert_eq!(distinct.len(), 3);
    assert!(fs::read_to_string(ws.path("graph.txt")).unwrap().lines().count() > 0);
}
