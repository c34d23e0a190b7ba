use std::path::Path;
use std::process::{Command, Output};

use rand::Rng;
use serde_json::Value;

fn lfi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfi")).args(args).current_dir(dir).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> (String, String) {
    let out = lfi(dir, args);
    let (stdout, stderr) = (String::from_utf8(out.stdout).unwrap(), String::from_utf8(out.stderr).unwrap());
    assert!(out.status.success(), "lfi {args:?} failed:\n{stderr}");
    (stdout, stderr)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_ratings(dir: &Path, name: &str, rows: &[(String, String, f64)]) {
    let mut csv = String::from("user,item,rating\n");
    for (u, i, r) in rows {
        csv.push_str(&format!("{u},{i},{r}\n"));
    }
    std::fs::write(dir.join(name), csv).unwrap();
}

fn write_items(dir: &Path, name: &str, items: &[(String, Vec<(&str, String)>)]) {
    let mut out = String::new();
    for (id, attrs) in items {
        let mut map = serde_json::Map::new();
        for (k, v) in attrs {
            map.entry(k.to_string()).or_insert_with(|| Value::Array(vec![])).as_array_mut().unwrap().push(Value::String(v.clone()));
        }
        out.push_str(&serde_json::json!({"item_id": id, "attributes": map}).to_string());
        out.push('\n');
    }
    std::fs::write(dir.join(name), out).unwrap();
}

/// 64 items named by six binary attributes; ratings are dense and random.
fn coded_world(dir: &Path) {
    let mut g = lfi::rng::seeded(1);
    let items: Vec<_> = (0..64)
        .map(|i| (format!("m{i}"), (0..6).map(|b| (["b0", "b1", "b2", "b3", "b4", "b5"][b], (i >> b & 1).to_string())).collect()))
        .collect();
    write_items(dir, "items.jsonl", &items);
    let rows: Vec<_> = (0..20)
        .flat_map(|u| (0..64).map(move |i| (format!("u{u}"), format!("m{i}"))))
        .map(|(u, i)| (u, i, f64::from(g.gen_range(1..=5))))
        .collect();
    write_ratings(dir, "ratings.csv", &rows);
}

/// Ratings move only with `tag=a`; four other tags are noise.
fn one_feature_world(dir: &Path) {
    let mut g = lfi::rng::seeded(2);
    let tags = ["a", "b", "c", "d", "e"];
    let items: Vec<(String, Vec<(&str, String)>)> = (0..60)
        .map(|i| {
            let held: Vec<_> = tags.iter().filter(|_| g.gen_bool(0.5)).map(|t| ("tag", t.to_string())).collect();
            (format!("m{i}"), held)
        })
        .collect();
    let mut rows = Vec::new();
    for u in 0..30 {
        let s = if u % 2 == 0 { 1.0 } else { -1.0 };
        for (id, held) in &items {
            let a = if held.iter().any(|(_, t)| t == "a") { 1.0 } else { 0.0 };
            rows.push((format!("u{u}"), id.clone(), 3.0 + s * 1.5 * a));
        }
    }
    write_items(dir, "items.jsonl", &items);
    write_ratings(dir, "ratings.csv", &rows);
}

#[test]
fn train_round_trips_a_tiny_model() {
    let dir = tempfile::tempdir().unwrap();
    let rows = [("u1", "i1", 4.0), ("u1", "i2", 2.0), ("u2", "i1", 5.0)].map(|(u, i, r)| (u.to_string(), i.to_string(), r));
    write_ratings(dir.path(), "r.csv", &rows);
    let (stdout, _) = ok(dir.path(), &["train", "--ratings", "r.csv", "--rank", "2", "--out", "m.json"]);
    assert!(stdout.contains("training RMSE"), "{stdout}");
    let model = lfi::als::load_model(dir.path().join("m.json")).unwrap();
    assert_eq!(model.user_ids.ids(), ["u1", "u2"]);
    lfi::als::save_model(&model, dir.path().join("again.json")).unwrap();
    assert_eq!(std::fs::read(dir.path().join("m.json")).unwrap(), std::fs::read(dir.path().join("again.json")).unwrap());
    assert_eq!(lfi::als::load_model(dir.path().join("again.json")).unwrap(), model);
}

#[test]
fn train_reads_a_config_file_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    coded_world(dir.path());
    std::fs::write(dir.path().join("t.toml"), "ratings = \"ratings.csv\"\nrank = 2\niters = 3\nout = \"m.json\"\n").unwrap();
    ok(dir.path(), &["train", "--config", "t.toml", "--rank", "4"]);
    assert_eq!(lfi::als::load_model(dir.path().join("m.json")).unwrap().rank, 4);
}

#[test]
fn missing_ratings_file_is_an_io_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = lfi(dir.path(), &["train", "--ratings", "absent.csv", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
    assert!(out.stdout.is_empty());
}

#[test]
fn rank_zero_fails_validation_before_reading_input() {
    let dir = tempfile::tempdir().unwrap();
    // the ratings file does not exist, so any read would exit 3 instead
    let out = lfi(dir.path(), &["train", "--ratings", "absent.csv", "--rank", "0", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rank"));
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn deep_tree_on_identity_metadata_reproduces_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    coded_world(dir.path());
    ok(dir.path(), &["train", "--ratings", "ratings.csv", "--rank", "3", "--out", "m.json"]);
    let (stdout, _) = ok(
        dir.path(),
        &[
            "shadow", "--model", "m.json", "--metadata", "items.jsonl", "--kind", "tree", "--depth", "6", "--split", "1.0", "--out",
            "s.json", "--report", "rep.json",
        ],
    );
    let report = json(&dir.path().join("rep.json"));
    assert!(report["observational_mae"].as_f64().unwrap() < 0.05, "{report}");
    assert_eq!(report["measured_on"], "train-set");
    assert!(stdout.contains("train-set"), "{stdout}");
}

#[test]
fn tree_flags_on_a_linear_shadow_are_ignored_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    coded_world(dir.path());
    ok(dir.path(), &["train", "--ratings", "ratings.csv", "--rank", "2", "--out", "m.json"]);
    let base = ["shadow", "--model", "m.json", "--metadata", "items.jsonl", "--kind", "linear"];
    let (_, stderr) = ok(dir.path(), &[&base[..], &["--depth", "3", "--bins", "4", "--out", "a.json"]].concat());
    assert!(stderr.contains("--depth") && stderr.contains("--bins"), "{stderr}");
    let (_, stderr) = ok(dir.path(), &[&base[..], &["--out", "b.json"]].concat());
    assert!(!stderr.contains("ignored"), "{stderr}");
    assert_eq!(std::fs::read(dir.path().join("a.json")).unwrap(), std::fs::read(dir.path().join("b.json")).unwrap());
}

fn explain_setup(dir: &Path) {
    one_feature_world(dir);
    ok(dir, &["train", "--ratings", "ratings.csv", "--rank", "2", "--lambda", "0.01", "--out", "m.json"]);
    ok(dir, &["shadow", "--model", "m.json", "--metadata", "items.jsonl", "--kind", "linear", "--split", "1.0", "--out", "s.json"]);
}

#[test]
fn explain_ranks_the_relevant_feature_first_and_draws_every_bar() {
    let dir = tempfile::tempdir().unwrap();
    explain_setup(dir.path());
    let args = ["explain", "--shadow", "s.json", "--metadata", "items.jsonl", "--user", "u3", "--item", "m7"];
    ok(dir.path(), &[&args[..], &["--top-k", "50", "--svg", "chart.svg", "--out", "e.json"]].concat());
    let report = json(&dir.path().join("e.json"));
    let influences = report["report"]["influences"].as_array().unwrap();
    assert_eq!(influences[0]["feature"], "tag=a");
    // five tags, so a top-k of 50 lists each once
    assert_eq!(influences.len(), 5);
    assert_eq!(report["user_id"], "u3");
    let svg = std::fs::read_to_string(dir.path().join("chart.svg")).unwrap();
    assert_eq!(svg.matches("class=\"bar\"").count(), 5);

    ok(dir.path(), &[&args[..], &["--top-k", "2", "--svg", "two.svg"]].concat());
    assert_eq!(std::fs::read_to_string(dir.path().join("two.svg")).unwrap().matches("class=\"bar\"").count(), 2);
}

#[test]
fn explain_over_all_items_and_by_sampling() {
    let dir = tempfile::tempdir().unwrap();
    explain_setup(dir.path());
    let base = ["explain", "--shadow", "s.json", "--metadata", "items.jsonl", "--user", "u0", "--user-aggregate"];
    ok(dir.path(), &[&base[..], &["--aggregation", "mean-absolute", "--out", "agg.json"]].concat());
    assert_eq!(json(&dir.path().join("agg.json"))["report"]["influences"][0]["feature"], "tag=a");
    ok(dir.path(), &[&base[..], &["--estimator", "monte-carlo", "--samples", "2000", "--out", "mc.json"]].concat());
    assert_eq!(json(&dir.path().join("mc.json"))["report"]["influences"].as_array().unwrap().len(), 5);
}

#[test]
fn unknown_user_lists_nearest_ids() {
    let dir = tempfile::tempdir().unwrap();
    explain_setup(dir.path());
    let out = lfi(dir.path(), &["explain", "--shadow", "s.json", "--metadata", "items.jsonl", "--user", "u300", "--item", "m1"]);
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("u300") && stderr.contains("u30"), "{stderr}");
}

#[test]
fn one_cell_sweep_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    coded_world(dir.path());
    std::fs::write(
        dir.path().join("grid.toml"),
        "[grid]\nranks = [2]\nlambdas = [0.1]\nkinds = [\"tree\"]\ndepths = [3]\nbins = [8]\n\n[settings]\nmax_iterations = 5\n",
    )
    .unwrap();
    let (stdout, _) = ok(
        dir.path(),
        &["sweep", "--ratings", "ratings.csv", "--metadata", "items.jsonl", "--grid", "grid.toml", "--out", "rows.jsonl"],
    );
    let text = std::fs::read_to_string(dir.path().join("rows.jsonl")).unwrap();
    let rows: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0]["mean_latent_mae"].is_f64() && rows[0]["observational_mae"].is_f64());
    assert!(stdout.contains("tree(depth=3, bins=8)"), "{stdout}");
}

#[test]
fn synth_without_signal_shows_no_separation() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--delta", "0", "--repetitions", "4", "--out", "null.jsonl"]);
    let text = std::fs::read_to_string(dir.path().join("null.jsonl")).unwrap();
    let summary: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(summary["record"], "summary");
    for key in ["true_vs_semi_random", "semi_random_vs_random", "true_vs_random"] {
        let p = summary[key]["p"].as_f64().unwrap_or(1.0);
        assert!(p > 0.01, "{key}: {}", summary[key]);
    }
    let means = &summary["means"];
    assert!((means["true_mean"].as_f64().unwrap() - means["random_mean"].as_f64().unwrap()).abs() < 0.2, "{means}");
    assert_eq!(text.lines().filter(|l| l.contains("\"record\":\"repetition\"")).count(), 4);
}

#[test]
fn zero_threads_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lfi(dir.path(), &["--threads", "0", "synth"]).status.code(), Some(2));
}
