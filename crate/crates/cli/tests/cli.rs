use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const WORKED: [u64; 11] = [0, 2, 1, 1, 3, 4, 1, 3, 0, 3, 0];

fn hmem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmem"))
        .args(args)
        .output()
        .expect("run hmem")
}

fn ok(args: &[&str]) -> String {
    let out = hmem(args);
    assert!(
        out.status.success(),
        "hmem {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&ok(args)).unwrap()
}

fn write_trace(dir: &Path, name: &str, pages: &[u64]) -> PathBuf {
    let path = dir.join(name);
    let body: String = pages
        .iter()
        .map(|p| format!("R 0x{:x}\n", p << 12))
        .collect();
    fs::write(&path, body).unwrap();
    path
}

fn zipf_trace(dir: &Path) -> PathBuf {
    let path = dir.join("zipf.trace");
    ok(&[
        "gen",
        "--accesses",
        "20000",
        "--pages",
        "800",
        "--alpha",
        "1.0",
        "--write-ratio",
        "0.3",
        "--seed",
        "7",
        "--out",
        path.to_str().unwrap(),
    ]);
    path
}

#[test]
fn worked_example_estimate_conserves_requests() {
    let dir = tempfile::tempdir().unwrap();
    let t = write_trace(dir.path(), "t.trace", &WORKED);
    let r = json(&[
        "estimate",
        "--trace",
        t.to_str().unwrap(),
        "--dram-pages",
        "2",
        "--nvm-pages",
        "2",
        "--policy",
        "two-lru",
        "--threshold",
        "1",
    ]);
    let h = r["hit_ratio"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&h));
    let total: f64 = ["r_dram", "w_dram", "r_nvm", "w_nvm", "miss"]
        .iter()
        .map(|k| r[k].as_f64().unwrap())
        .sum();
    assert!((total - 11.0).abs() < 1e-9, "{total}");
    assert_eq!(r["total_requests"], 11);
    assert!(r["fingerprint"].as_str().unwrap().len() >= 16);
}

#[test]
fn estimate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let t = zipf_trace(dir.path());
    let args = [
        "estimate",
        "--trace",
        t.to_str().unwrap(),
        "--dram-pages",
        "80",
        "--nvm-pages",
        "160",
    ];
    assert_eq!(ok(&args), ok(&args));
    let mut csv = args.to_vec();
    csv.extend(["--format", "csv"]);
    assert_eq!(ok(&csv), ok(&csv));
}

#[test]
fn warm_cache_needs_fewer_evaluations_and_same_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let t = zipf_trace(dir.path());
    let cache = dir.path().join("cache");
    let base = [
        "estimate",
        "--trace",
        t.to_str().unwrap(),
        "--dram-pages",
        "80",
        "--nvm-pages",
        "160",
    ];
    let mut cached = base.to_vec();
    cached.extend(["--cache-dir", cache.to_str().unwrap()]);
    let stats = |c: &Path| json(&["cache-stats", "--cache-dir", c.to_str().unwrap()]);

    let cold = ok(&cached);
    let after_cold = stats(&cache);
    let cold_evals = after_cold["lifetime"]["evaluations"].as_u64().unwrap();
    assert!(cold_evals > 0);
    assert_eq!(after_cold["runs"], 1);

    let warm = ok(&cached);
    let after_warm = stats(&cache);
    let warm_evals = after_warm["lifetime"]["evaluations"].as_u64().unwrap() - cold_evals;
    assert!(warm_evals < cold_evals, "{warm_evals} vs {cold_evals}");
    assert!(after_warm["lifetime"]["hits"].as_u64().unwrap() >= 1);

    let mut uncached = base.to_vec();
    uncached.push("--no-cache");
    assert_eq!(cold, warm);
    assert_eq!(cold, ok(&uncached));
}

#[test]
fn exact_route_also_caches() {
    let dir = tempfile::tempdir().unwrap();
    let t = write_trace(dir.path(), "t.trace", &WORKED);
    let cache = dir.path().join("cache");
    let args = [
        "estimate",
        "--trace",
        t.to_str().unwrap(),
        "--dram-pages",
        "2",
        "--nvm-pages",
        "2",
        "--route",
        "exact",
        "--cache-dir",
        cache.to_str().unwrap(),
    ];
    assert_eq!(ok(&args), ok(&args));
    let s = json(&["cache-stats", "--cache-dir", cache.to_str().unwrap()]);
    assert_eq!(s["runs"], 2);
    assert!(s["entries"].as_u64().unwrap() >= 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let t = write_trace(dir.path(), "t.trace", &WORKED);
    let t = t.to_str().unwrap();
    let code = |args: &[&str]| hmem(args).status.code().unwrap();

    // Usage: unknown flag, missing geometry, no input, bad p_mig.
    assert_eq!(code(&["estimate", "--bogus"]), 2);
    assert_eq!(code(&["estimate", "--trace", t, "--dram-pages", "2"]), 2);
    assert_eq!(
        code(&["estimate", "--dram-pages", "2", "--nvm-pages", "2"]),
        2
    );
    assert_eq!(
        code(&[
            "estimate",
            "--trace",
            t,
            "--dram-pages",
            "2",
            "--nvm-pages",
            "2",
            "--p-mig",
            "1.5"
        ]),
        2
    );

    // Input: missing file, malformed trace, empty trace.
    assert_eq!(
        code(&[
            "estimate",
            "--trace",
            "/nonexistent",
            "--dram-pages",
            "2",
            "--nvm-pages",
            "2"
        ]),
        3
    );
    let bad = dir.path().join("bad.trace");
    fs::write(&bad, "R 0x10\nX nonsense\n").unwrap();
    assert_eq!(code(&["profile", "--trace", bad.to_str().unwrap()]), 3);
    let empty = dir.path().join("empty.trace");
    fs::write(&empty, "# nothing\n").unwrap();
    assert_eq!(code(&["profile", "--trace", empty.to_str().unwrap()]), 3);
    assert_eq!(
        code(&["cache-stats", "--cache-dir", "/nonexistent/cache"]),
        3
    );

    assert_eq!(code(&["profile", "--trace", t]), 0);
}

#[test]
fn profile_roundtrips_through_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let t = zipf_trace(dir.path());
    let prof = dir.path().join("p.json");
    ok(&[
        "profile",
        "--trace",
        t.to_str().unwrap(),
        "--profile-out",
        prof.to_str().unwrap(),
    ]);
    let geo = ["--dram-pages", "80", "--nvm-pages", "160"];
    let mut from_trace = vec!["estimate", "--trace", t.to_str().unwrap()];
    from_trace.extend(geo);
    let mut from_profile = vec!["estimate", "--profile-in", prof.to_str().unwrap()];
    from_profile.extend(geo);
    assert_eq!(ok(&from_trace), ok(&from_profile));
}

#[test]
fn threshold_sweep_logs_table_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let t = zipf_trace(dir.path());
    let csv = ok(&[
        "sweep",
        "--trace",
        t.to_str().unwrap(),
        "--thresholds",
        "1,4,8,16",
        "--dram-pages",
        "80",
        "--nvm-pages",
        "160",
        "--jobs",
        "3",
    ]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("parameter,"));
    let p_migs: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(p_migs, vec![0.16, 0.13, 0.08, 0.05]);
    for l in &lines[1..] {
        let hit: f64 = l.split(',').nth(6).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&hit));
    }
}

#[test]
fn single_point_sweep_matches_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let t = zipf_trace(dir.path());
    let t = t.to_str().unwrap();
    let est = json(&[
        "estimate",
        "--trace",
        t,
        "--dram-pages",
        "80",
        "--nvm-pages",
        "160",
        "--threshold",
        "8",
    ]);
    let sweep = json(&[
        "sweep",
        "--trace",
        t,
        "--thresholds",
        "8",
        "--dram-pages",
        "80",
        "--nvm-pages",
        "160",
        "--format",
        "json",
    ]);
    let rows = sweep.as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["report"], est);
}

#[test]
fn size_sweep_rows_and_simulation_timing() {
    let dir = tempfile::tempdir().unwrap();
    let t = zipf_trace(dir.path());
    let rows = json(&[
        "sweep",
        "--trace",
        t.to_str().unwrap(),
        "--sizes",
        "10:10,10:20",
        "--simulate",
        "--format",
        "json",
        "--jobs",
        "2",
    ]);
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["parameter"], "size=10:10");
    assert!(rows[0]["report"]["nvm_pages"].as_u64() < rows[1]["report"]["nvm_pages"].as_u64());
    for r in rows {
        assert!(r["wall_ms"].as_f64().unwrap() >= 0.0);
        assert!(r["sim_wall_ms"].as_f64().unwrap() >= 0.0);
        let est = r["report"]["hit_ratio"].as_f64().unwrap();
        let sim = r["simulated_hit_ratio"].as_f64().unwrap();
        assert!((est - sim).abs() < 0.1, "{est} vs {sim}");
    }
}

fn comparison(v: &Value, metric: &str) -> Value {
    v["rows"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["metric"] == metric)
        .unwrap_or_else(|| panic!("no {metric} row"))
        .clone()
}

#[test]
fn compare_all_miss_trace() {
    let dir = tempfile::tempdir().unwrap();
    let pages: Vec<u64> = (0..500).collect();
    let t = write_trace(dir.path(), "t.trace", &pages);
    let v = json(&[
        "compare",
        "--trace",
        t.to_str().unwrap(),
        "--dram-pages",
        "10",
        "--nvm-pages",
        "20",
    ]);
    assert_eq!(v["estimate"]["hit_ratio"], 0.0);
    assert_eq!(v["simulation"]["hit_ratio"], 0.0);
}

#[test]
fn compare_single_level_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let t = zipf_trace(dir.path());
    let v = json(&[
        "compare",
        "--trace",
        t.to_str().unwrap(),
        "--dram-pages",
        "120",
        "--nvm-pages",
        "0",
    ]);
    let hit = comparison(&v, "hit_ratio");
    assert!(hit["rel_error"].as_f64().unwrap().abs() < 1e-9, "{hit}");
    assert!(comparison(&v, "p_hitdram_given_hit")["estimated"].is_number());
}

#[test]
fn compare_zipf_two_lru_populates_errors() {
    let dir = tempfile::tempdir().unwrap();
    let t = zipf_trace(dir.path());
    let csv = ok(&[
        "compare",
        "--trace",
        t.to_str().unwrap(),
        "--dram-pages",
        "80",
        "--nvm-pages",
        "160",
        "--format",
        "csv",
    ]);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "metric,estimated,simulated,rel_error,abs_error"
    );
    let hit = lines.find(|l| l.starts_with("hit_ratio,")).unwrap();
    let rel: f64 = hit.split(',').nth(3).unwrap().parse().unwrap();
    assert!(rel.is_finite());
}

#[test]
fn custom_policy_file() {
    let dir = tempfile::tempdir().unwrap();
    let t = zipf_trace(dir.path());
    let pol = dir.path().join("pol.json");
    fs::write(
        &pol,
        r#"{"name":"two-lru","dram_eviction":"lru-deterministic","nvm_eviction":"lru-deterministic",
            "threshold":4,"fault_destination":"dram"}"#,
    )
    .unwrap();
    let t = t.to_str().unwrap();
    let geo = ["--dram-pages", "80", "--nvm-pages", "160"];
    let mut custom = vec!["estimate", "--trace", t, "--policy", pol.to_str().unwrap()];
    custom.extend(geo);
    let mut builtin = vec!["estimate", "--trace", t];
    builtin.extend(geo);
    let a: Value = serde_json::from_str(&ok(&custom)).unwrap();
    let b: Value = serde_json::from_str(&ok(&builtin)).unwrap();
    assert_eq!(a["hit_ratio"], b["hit_ratio"]);
}
