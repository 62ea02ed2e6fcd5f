use opcd::bench::{append_record, parse_metrics, read_metrics, summarize, truncate_metrics, MetricRecord, REQUIRED_FIELDS};

const FIXTURE: &str = include_str!("data/metrics_fixture.jsonl");

fn record(step: usize, acc: f64) -> MetricRecord {
    MetricRecord { step, loss: Some(1.0), eval_accuracy_in_distribution: Some(acc), ..Default::default() }
}

#[test]
fn fixture_parses_with_extras() {
    let rs = parse_metrics(FIXTURE).unwrap();
    assert_eq!(rs.iter().map(|r| r.step).collect::<Vec<_>>(), [0, 1, 2]);
    assert_eq!(rs[2].rollout_len_min, Some(2));
    assert_eq!(rs[1].extra["grad_norm"], 4.0);
    assert!(rs[0].loss.is_none());
    let s = summarize(&rs);
    assert_eq!((s.baseline_in_distribution, s.final_in_distribution, s.final_ood), (Some(0.12), Some(0.75), Some(0.85)));
    assert_eq!((s.final_loss, s.max_loss, s.skipped_steps), (Some(1.25), Some(2.5), 0));
}

#[test]
fn every_required_field_is_enforced() {
    let lines: Vec<&str> = FIXTURE.lines().collect();
    for field in REQUIRED_FIELDS {
        let mut v: serde_json::Value = serde_json::from_str(lines[2]).unwrap();
        v.as_object_mut().unwrap().remove(field);
        let text = format!("{}\n{}\n{v}\n", lines[0], lines[1]);
        let e = parse_metrics(&text).unwrap_err();
        assert_eq!((e.line, e.field.as_str()), (3, field));
    }
}

#[test]
fn bad_values_are_rejected() {
    let base: serde_json::Value = serde_json::from_str(FIXTURE.lines().next().unwrap()).unwrap();
    for (field, value) in [
        ("step", serde_json::json!(null)),
        ("step", serde_json::json!(1.5)),
        ("rollout_len_max", serde_json::json!(-1)),
        ("loss", serde_json::json!("nan")),
        ("eval_accuracy_ood", serde_json::json!(1.01)),
        ("eval_accuracy_in_distribution", serde_json::json!(-0.1)),
    ] {
        let mut v = base.clone();
        v[field] = value;
        let e = parse_metrics(&v.to_string()).unwrap_err();
        assert_eq!((e.line, e.field.as_str()), (1, field), "{e}");
    }
    assert_eq!(parse_metrics("[1, 2]").unwrap_err().line, 1);
    let dup = format!("{}\n{}\n", FIXTURE.lines().nth(1).unwrap(), FIXTURE.lines().nth(1).unwrap());
    assert_eq!(parse_metrics(&dup).unwrap_err().line, 2);
    assert!(parse_metrics("").unwrap().is_empty());
    assert_eq!(parse_metrics("\n\n").unwrap().len(), 0);
}

#[test]
fn append_then_truncate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.jsonl");
    for (step, acc) in [(0, 0.1), (1, 0.4), (2, 0.8), (3, 0.6)] {
        append_record(&path, &record(step, acc)).unwrap();
    }
    let all = read_metrics(&path).unwrap();
    assert_eq!(summarize(&all).best.unwrap().step, 2);
    truncate_metrics(&path, 1).unwrap();
    let kept = read_metrics(&path).unwrap();
    assert_eq!(kept, all[..2].to_vec());
    truncate_metrics(&dir.path().join("absent.jsonl"), 5).unwrap();
    assert!(read_metrics(&dir.path().join("absent.jsonl")).unwrap().is_empty());
}
