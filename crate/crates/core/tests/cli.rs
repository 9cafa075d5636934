//! End-to-end runs of the `bftprob` binary.

use bftprob::cli::manifest::RunManifest;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn bftprob(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bftprob"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

#[test]
fn model_writes_sorted_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(dir.path(), "m.csv");
    let out = bftprob(&[
        "model",
        "--protocol",
        "bft-smart",
        "-f",
        "1",
        "--pl",
        "0.1",
        "--output",
        &csv,
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("success="));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("protocol,n,f,c,p_l,p_c,phase,k,prob"));
    let keys: Vec<(String, u64)> = lines
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            (cols[6].to_string(), cols[7].parse().unwrap())
        })
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert!(text
        .lines()
        .skip(1)
        .all(|l| !l.split(',').skip(4).any(|c| c.contains('e'))));
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(format!("{csv}.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest.subcommand, "model");
    assert_eq!(manifest.params["n"], 4);
    assert!(manifest.params.get("threads").is_none());
}

#[test]
fn json_mirrors_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, json) = (path(dir.path(), "a.csv"), path(dir.path(), "a.json"));
    let base = [
        "model",
        "--protocol",
        "zyzzyva",
        "-f",
        "1",
        "--pl",
        "0.2",
        "--pc",
        "0.1",
    ];
    assert_eq!(
        code(&bftprob(&[&base[..], &["--output", &csv]].concat())),
        0
    );
    assert_eq!(
        code(&bftprob(
            &[&base[..], &["--output", &json, "--format", "json"]].concat()
        )),
        0
    );
    let rows: Vec<serde_json::Value> =
        serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.len(), text.lines().count() - 1);
    let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(rows[0]["phase"], first[6]);
    assert_eq!(rows[0]["prob"].to_string(), first[8]);
}

#[test]
fn simulate_is_reproducible_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str, threads: &str| {
        let (out, log) = (
            path(dir.path(), &format!("{tag}.csv")),
            path(dir.path(), &format!("{tag}.log")),
        );
        let o = bftprob(&[
            "--threads",
            threads,
            "simulate",
            "--protocol",
            "pbft",
            "-n",
            "7",
            "-f",
            "2",
            "--pl",
            "0.1",
            "--pc",
            "0.02",
            "--requests",
            "3000",
            "--seed",
            "11",
            "--output",
            &out,
            "--log",
            &log,
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        (
            std::fs::read(&out).unwrap(),
            std::fs::read(&log).unwrap(),
            o.stdout,
        )
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "3"));
    let log = String::from_utf8(a.1).unwrap();
    assert_eq!(
        log.lines().next(),
        Some("request_id,replica,phase_reached,crash_phase,path")
    );
    assert_eq!(log.lines().count(), 1 + 3000 * 7);

    let manifest = path(dir.path(), "a.csv.manifest.json");
    let replay = bftprob(&["replay", &manifest]);
    assert_eq!(code(&replay), 0);
    assert_eq!(stdout(&replay), "stdout match\noutput match\nlog match\n");

    let mut m: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m.seed, Some(11));
    m.outputs[1].sha256 = "0".repeat(64);
    std::fs::write(&manifest, serde_json::to_vec(&m).unwrap()).unwrap();
    assert_eq!(code(&bftprob(&["replay", &manifest])), 3);
}

#[test]
fn argument_errors_exit_two() {
    for args in [
        &[
            "simulate",
            "--protocol",
            "pbft",
            "-f",
            "1",
            "--requests",
            "0",
            "--seed",
            "1",
        ][..],
        &[
            "simulate",
            "--protocol",
            "pbft",
            "-f",
            "1",
            "--requests",
            "10",
        ],
        &[
            "model",
            "--protocol",
            "sbft",
            "-n",
            "5",
            "-f",
            "1",
            "-c",
            "1",
        ],
        &["model", "--protocol", "pbft", "-n", "3", "-f", "1"],
        &["model", "--protocol", "pbft", "-f", "1", "--pc", "-0.1"],
        &[
            "analyze",
            "gradient",
            "--protocol",
            "pbft",
            "-n",
            "4",
            "--step",
            "0",
        ],
        &[
            "analyze",
            "boundary",
            "-n",
            "4",
            "-f",
            "1",
            "--expected",
            "1",
        ],
        &["model", "--bogus"],
    ] {
        let out = bftprob(args);
        assert_eq!(code(&out), 2, "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    let err = bftprob(&[
        "model",
        "--protocol",
        "sbft",
        "-n",
        "5",
        "-f",
        "1",
        "-c",
        "1",
    ]);
    assert!(String::from_utf8_lossy(&err.stderr).contains("n must equal 3f+2c+1"));
}

#[test]
fn config_file_merges_without_silent_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "run.json");
    std::fs::write(&cfg, r#"{"protocol": "pbft", "f": 1, "pl": 0.1}"#).unwrap();
    let from_file = bftprob(&["model", "--config", &cfg]);
    let from_flags = bftprob(&["model", "--protocol", "pbft", "-f", "1", "--pl", "0.1"]);
    assert_eq!(code(&from_file), 0);
    assert_eq!(from_file.stdout, from_flags.stdout);
    assert_eq!(
        code(&bftprob(&["model", "--config", &cfg, "--pc", "0.05"])),
        0
    );
    let clash = bftprob(&["model", "--config", &cfg, "--pl", "0.2"]);
    assert_eq!(code(&clash), 2);
    assert!(String::from_utf8_lossy(&clash.stderr).contains("conflicts"));
    std::fs::write(&cfg, r#"{"protocol": "pbft", "f": 1, "typo": 3}"#).unwrap();
    assert_eq!(code(&bftprob(&["model", "--config", &cfg])), 2);
}

#[test]
fn validate_exit_status_tracks_coverage() {
    let trivial = bftprob(&[
        "validate",
        "--protocol",
        "pbft",
        "-f",
        "1",
        "--seed",
        "3",
        "--requests",
        "200",
    ]);
    assert_eq!(code(&trivial), 0);
    assert!(stdout(&trivial).starts_with("coverage=1.0000000000000000\n"));
    let sweep = [
        "validate",
        "--protocol",
        "pbft",
        "-n",
        "10",
        "-f",
        "3",
        "--pl",
        "0,0.05,0.1,0.15,0.2,0.25,0.3",
        "--seed",
        "8",
    ];
    assert_eq!(code(&bftprob(&sweep)), 0);
    let broken = bftprob(&[&sweep[..], &["--model-quorum-shift", "1"]].concat());
    assert_eq!(code(&broken), 3);
}

#[test]
fn analyze_modes() {
    let out = stdout(&bftprob(&[
        "analyze", "timeout", "--mu", "100", "--sigma", "10", "--rate", "0.1",
    ]));
    assert!(
        out.contains("paper_convention=87.18") && out.contains("(112.82)"),
        "{out}"
    );
    assert_eq!(
        stdout(&bftprob(&[
            "analyze",
            "asymptote",
            "--p",
            "0.2",
            "--q",
            "0.6667"
        ])),
        "limit=1\n"
    );
    assert!(stdout(&bftprob(&[
        "analyze",
        "boundary",
        "-n",
        "25",
        "-f",
        "8",
        "--expected",
        "25"
    ]))
    .starts_with("boundary=0.135"));
    let chained = stdout(&bftprob(&["analyze", "boundary", "-n", "25", "-f", "8"]));
    assert!(
        chained.contains("prepare=0.0926") && chained.contains("boundary=0.0895"),
        "{chained}"
    );

    let dir = tempfile::tempdir().unwrap();
    let grid = path(dir.path(), "g.csv");
    let out = bftprob(&[
        "analyze",
        "gradient",
        "--protocol",
        "pbft",
        "-n",
        "10,40",
        "--pl",
        "0.05,0.15",
        "--pc",
        "0,0.02",
        "--output",
        &grid,
    ]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&grid).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("protocol,n,p_c,p_l,step,value,d_p_c,d_p_l")
    );
    assert_eq!(text.lines().count(), 1 + 8);
    let sweep = path(dir.path(), "s.csv");
    let out = bftprob(&[
        "analyze",
        "sweep",
        "--protocol",
        "pbft",
        "-n",
        "4,7",
        "--pl",
        "0,1",
        "--metric",
        "reach",
        "--output",
        &sweep,
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        std::fs::read_to_string(&sweep).unwrap().lines().count(),
        1 + 4
    );
}

#[test]
fn five_thousand_request_campaign_is_fast() {
    let start = Instant::now();
    let out = bftprob(&[
        "simulate",
        "--protocol",
        "pbft",
        "-n",
        "10",
        "-f",
        "3",
        "--pl",
        "0.1",
        "--requests",
        "5000",
        "--seed",
        "1",
    ]);
    assert_eq!(code(&out), 0);
    assert!(start.elapsed() < Duration::from_secs(10));
}
