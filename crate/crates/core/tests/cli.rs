mod common;

use std::process::{Command, Output};

use common::fixture_root;

fn gemrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gemrec"))
        .args(args)
        .env_remove("GEMREC_DATA_ROOT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn root() -> String {
    fixture_root().to_str().unwrap().to_string()
}

#[test]
fn ingest_prints_summary() {
    let o = gemrec(&["ingest", "--root", &root()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "models=12 prompts=6 images=72 dim=16\n");

    let o = Command::new(env!("CARGO_BIN_EXE_gemrec"))
        .args(["ingest", "--json"])
        .env("GEMREC_DATA_ROOT", root())
        .output()
        .unwrap();
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["images"], 72);
}

#[test]
fn usage_and_data_errors() {
    let o = gemrec(&["bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    let o = gemrec(&["ingest"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[bad_request]"));

    let o = gemrec(&["prerank", "--root", &root(), "--prompt", "999"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[prompt_not_found]"));

    let o = gemrec(&["serve", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    for flag in ["--port", "--seed", "--lambda", "--nsfw-threshold", "--min-pool", "--model", "--assets"] {
        assert!(stdout(&o).contains(flag), "{flag}");
    }
}

#[test]
fn prerank_with_accuracy_only_follows_clip_order() {
    let o = gemrec(&["prerank", "--root", &root(), "--prompt", "1", "--lambda", "1,0,0", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&o.stdout).unwrap();
    let catalog = common::mini();
    let order: Vec<u64> = rows.iter().map(|r| r["model_id"].as_u64().unwrap()).collect();
    let clip = |m: u64| catalog.image_for(m as u32, 1).unwrap().clip_score_raw;
    assert!(order.windows(2).all(|w| clip(w[0]) >= clip(w[1])));

    let text = stdout(&gemrec(&["prerank", "--root", &root(), "--prompt", "1"]));
    assert!(text.starts_with("rank\tmodel_id\tq_accuracy\tq_distinctiveness\tq_popularity\tgre_score\n"));
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut seen = Vec::new();
    for run in 0..2 {
        let csv = dir.path().join(format!("h{run}.csv"));
        let layout = dir.path().join(format!("l{run}.json"));
        let prefs = dir.path().join(format!("p{run}.jsonl"));
        let model = dir.path().join(format!("m{run}.bin"));
        let r = root();
        let outs = [
            gemrec(&["prerank", "--root", &r, "--prompt", "2"]),
            gemrec(&["heatmap", "--root", &r, "--prompt", "2", "--out", csv.to_str().unwrap()]),
            gemrec(&["layout", "--root", &r, "--prompt", "2", "--seed", "3", "--out", layout.to_str().unwrap()]),
            gemrec(&["simulate", "--root", &r, "--prompt", "2", "--users", "6", "--beta", "5", "--seed", "1", "--out", prefs.to_str().unwrap()]),
            gemrec(&["train", "--preferences", prefs.to_str().unwrap(), "--epochs", "30", "--out", model.to_str().unwrap()]),
        ];
        for o in &outs {
            assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        }
        let files: Vec<Vec<u8>> = [&csv, &layout, &prefs, &model].iter().map(|p| std::fs::read(p).unwrap()).collect();
        seen.push((outs.iter().map(stdout).collect::<Vec<_>>(), files));
    }
    assert_eq!(seen[0], seen[1]);

    let csv = String::from_utf8(seen[0].1[0].clone()).unwrap();
    assert!(csv.starts_with("model_id,"));
    assert_eq!(csv.lines().count(), 12 + 2);
    assert!(csv.lines().last().unwrap().starts_with("APS="));
    let layout: serde_json::Value = serde_json::from_slice(&seen[0].1[1]).unwrap();
    assert_eq!(layout["prompt_id"], 2);
    assert_eq!(layout["points"].as_array().unwrap().len(), 12);
    assert_eq!(layout["z_order"].as_array().unwrap().len(), 12);
    assert!(layout["kl_final"].is_number());
}

#[test]
fn simulate_train_rank_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let prefs = dir.path().join("prefs.jsonl");
    let model = dir.path().join("model.bin");
    let o = gemrec(&[
        "simulate", "--root", &root(), "--prompt", "1", "--users", "8", "--mode", "battle", "--out",
        prefs.to_str().unwrap(),
    ]);
    assert_eq!(stdout(&o), "sessions=8 battle=8 dragsort=0 preferences=56\n");
    let o = gemrec(&["train", "--preferences", prefs.to_str().unwrap(), "--out", model.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(&std::fs::read(&model).unwrap()[..9], b"GEMRECBPR");

    let o = gemrec(&["rank", "--model", model.to_str().unwrap(), "--user", "sim-user-0003", "--top", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("# user=sim-user-0003 source=bpr\n"));
    assert_eq!(text.lines().count(), 2 + 3);

    let o = gemrec(&["rank", "--model", model.to_str().unwrap(), "--user", "stranger"]);
    assert_eq!(o.status.code(), Some(2));
    let o = gemrec(&["rank", "--root", &root(), "--model", model.to_str().unwrap(), "--user", "stranger", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["source"], "gre_prior");
}
