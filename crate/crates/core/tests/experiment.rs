use std::fs;
use std::path::Path;

use opcd::bench::{
    list_checkpoints, read_metrics, run_experiment, summarize, ExperimentConfig, RunMode, RunStatus, METRICS_FILE,
    SUMMARY_FILE,
};

fn tiny(dir: &Path, overrides: &[&str]) -> ExperimentConfig {
    let mut o: Vec<String> = [
        "model.layers=1",
        "model.embed_dim=16",
        "model.heads=2",
        "pretrain.max_steps=10",
        "pretrain.min_steps=0",
        "pretrain.eval_every=5",
        "pretrain.eval_n=10",
        "pretrain.threshold=0.0",
        "pretrain.chance_margin=1.0",
        "distill.steps=6",
        "distill.batch_size=2",
        "eval_every=2",
        "eval_n=12",
        "ood_eval_n=12",
        "checkpoint_interval=2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    o.push(format!("output_dir={:?}", dir.display().to_string()));
    o.extend(overrides.iter().map(|s| s.to_string()));
    ExperimentConfig::from_toml("", &o).unwrap()
}

#[test]
fn zero_steps_writes_only_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_experiment(&tiny(dir.path(), &["distill.steps=0"])).unwrap();
    assert_eq!(s.error, None);
    assert_eq!((s.status, s.steps_completed), (RunStatus::Completed, 0));
    let rs = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(rs.len(), 1);
    assert_eq!(rs[0].step, 0);
    assert!(rs[0].eval_accuracy_in_distribution.is_some());
    assert!(list_checkpoints(dir.path()).unwrap().is_empty());
}

#[test]
fn identical_configs_give_identical_metrics() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ta = tiny(a.path(), &[]);
    run_experiment(&ta).unwrap();
    let teacher = format!("teacher_checkpoint={:?}", a.path().join("teacher.ckpt").display().to_string());
    let tb = tiny(b.path(), &[&teacher]);
    let sb = run_experiment(&tb).unwrap();
    assert_eq!(sb.steps_completed, 6);
    assert!(fs::read(a.path().join(METRICS_FILE)).unwrap() == fs::read(b.path().join(METRICS_FILE)).unwrap());
    let steps: Vec<usize> = list_checkpoints(b.path()).unwrap().into_iter().map(|(s, _)| s).collect();
    assert_eq!(steps, [2, 4, 6]);
}

#[test]
fn resume_continues_bit_exactly() {
    for mode in [RunMode::Opcd, RunMode::OffPolicy] {
        let mode = format!("mode={}", serde_json::to_string(&mode).unwrap());
        let (full, cut) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_experiment(&tiny(full.path(), &[&mode])).unwrap();
        let stopped = run_experiment(&tiny(cut.path(), &[&mode, "stop_after=3"])).unwrap();
        assert_eq!((stopped.status, stopped.steps_completed), (RunStatus::Stopped, 3));
        // step 3 was recorded but only step 2 was checkpointed
        let resumed = run_experiment(&tiny(cut.path(), &[&mode, "resume=true"])).unwrap();
        assert_eq!((resumed.status, resumed.steps_completed), (RunStatus::Completed, 6));
        let read = |d: &Path| fs::read_to_string(d.join(METRICS_FILE)).unwrap();
        assert!(read(full.path()) == read(cut.path()), "resumed metrics differ");
    }
}

#[test]
fn summary_matches_the_metrics_file() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_experiment(&tiny(dir.path(), &["distill.teacher_mode=\"self-shared\""])).unwrap();
    let stored: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    let recomputed = summarize(&read_metrics(&dir.path().join(METRICS_FILE)).unwrap());
    assert_eq!(serde_json::to_value(&recomputed).unwrap(), stored["metrics"]);
    assert_eq!(s.metrics, recomputed);
}

#[test]
fn bad_inputs_fail_with_a_stage() {
    let dir = tempfile::tempdir().unwrap();
    let long = format!("context_text={:?}", "1 ".repeat(60));
    let s = run_experiment(&tiny(dir.path(), &[&long])).unwrap();
    assert_eq!((s.status, s.failed_stage.as_deref()), (RunStatus::Failed, Some("context")));
    assert!(tiny(dir.path(), &[]).validate().is_ok());
    assert!(ExperimentConfig::from_toml("", &["teacher_checkpoint=\"/nonexistent\"".into()]).is_err());
    assert!(ExperimentConfig::from_toml("", &["mode=\"off-policy\"".into(), "distill.teacher_mode=\"self-shared\"".into()]).is_err());
}
