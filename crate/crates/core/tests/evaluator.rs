use std::time::{Duration, Instant};

use gevo_core::bundled::toy_tree;
use gevo_core::evaluator::{EvalConfig, Evaluator, ExitStatus, InvalidReason};
use gevo_core::genome::{parse_seed, CodeBlock, Genome, Provenance};
use gevo_core::moea::{Direction, Objective, ObjectiveSpec};

fn spec() -> ObjectiveSpec {
    ObjectiveSpec::new(vec![
        Objective::new("fit_error", Direction::Minimize),
        Objective::new("complexity_count", Direction::Minimize),
    ])
    .unwrap()
}

fn sh(script: &str) -> Vec<String> {
    vec!["sh".into(), "-c".into(), script.into()]
}

fn evaluator(command: Vec<String>, timeout: Duration, max_concurrent: usize) -> Evaluator {
    let template = parse_seed(&toy_tree()).unwrap();
    Evaluator::new(
        template,
        EvalConfig {
            command,
            timeout,
            objective_spec: spec(),
            max_concurrent,
            cache_path: None,
        },
    )
    .unwrap()
}

fn seed() -> Genome {
    parse_seed(&toy_tree()).unwrap().seed_genome()
}

fn variant(c2: &str) -> Genome {
    seed()
        .with_block(CodeBlock::new("quadratic", &format!("c2 = {c2}\n"), Provenance::Seed, 0))
        .unwrap()
}

#[test]
fn timeout_kills_process_group() {
    // A backgrounded grandchild keeps the pipes open unless the whole group dies.
    let ev = evaluator(sh("sleep 1000 & sleep 1000"), Duration::from_secs(1), 1);
    let start = Instant::now();
    let rec = ev.evaluate(&seed()).unwrap();
    assert!(start.elapsed() < Duration::from_secs(6), "took {:?}", start.elapsed());
    assert_eq!(rec.exit_status, ExitStatus::Timeout);
    assert_eq!(rec.reason, Some(InvalidReason::Timeout));
    assert!(!rec.fitness.is_valid());
}

#[test]
fn only_last_metrics_line_counts() {
    let script = r#"echo 'GE_METRICS: {"objectives":{"fit_error":9,"complexity_count":9}}'
echo noise
echo 'GE_METRICS: {"objectives":{"fit_error":0.5,"complexity_count":2}}'
echo trailing"#;
    let rec = evaluator(sh(script), Duration::from_secs(10), 1).evaluate(&seed()).unwrap();
    assert_eq!(rec.fitness.get("fit_error"), Some(0.5));
    assert_eq!(rec.fitness.get("complexity_count"), Some(2.0));
    assert!(rec.stdout_tail.ends_with("trailing\n"));
}

#[test]
fn broken_last_line_is_malformed_even_after_a_good_one() {
    let script = r#"echo 'GE_METRICS: {"objectives":{"fit_error":1,"complexity_count":1}}'
echo 'GE_METRICS: not json'"#;
    let rec = evaluator(sh(script), Duration::from_secs(10), 1).evaluate(&seed()).unwrap();
    assert_eq!(rec.reason, Some(InvalidReason::MalformedMetrics));
}

#[test]
fn cache_hit_is_identical_and_launch_free() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.ndjson");
    let template = parse_seed(&toy_tree()).unwrap();
    let cfg = EvalConfig {
        command: vec![env!("CARGO_BIN_EXE_gevo-toy-eval").into(), "{workdir}".into()],
        timeout: Duration::from_secs(10),
        objective_spec: spec(),
        max_concurrent: 1,
        cache_path: Some(cache.clone()),
    };
    let ev = Evaluator::new(template.clone(), cfg.clone()).unwrap();
    let first = ev.evaluate(&seed()).unwrap();
    assert!(!first.cache_hit);
    assert_eq!(first.fitness.get("fit_error"), Some(1.3394669475803256));
    let second = ev.evaluate(&seed()).unwrap();
    assert_eq!(ev.launches(), 1);
    assert!(second.cache_hit);
    assert_eq!(second.fitness, first.fitness);
    assert_eq!(second.stdout_tail, first.stdout_tail);

    // The persisted cache survives a restart.
    let reopened = Evaluator::new(template, cfg).unwrap();
    let third = reopened.evaluate(&seed()).unwrap();
    assert_eq!(reopened.launches(), 0);
    assert!(third.cache_hit);
    assert_eq!(third.fitness, first.fitness);
}

#[test]
fn nonzero_exit_and_missing_metrics_are_invalid() {
    let rec = evaluator(
        sh(r#"echo 'GE_METRICS: {"objectives":{"fit_error":1,"complexity_count":1}}'; exit 3"#),
        Duration::from_secs(10),
        1,
    )
    .evaluate(&seed())
    .unwrap();
    assert_eq!(rec.exit_status, ExitStatus::Code(3));
    assert_eq!(rec.reason, Some(InvalidReason::NonzeroExit));
    assert!(!rec.fitness.is_valid());

    let rec = evaluator(sh("echo hello"), Duration::from_secs(10), 1).evaluate(&seed()).unwrap();
    assert_eq!(rec.reason, Some(InvalidReason::NoMetrics));

    let rec = evaluator(
        sh(r#"echo 'GE_METRICS: {"objectives":{"fit_error":1}}'"#),
        Duration::from_secs(10),
        1,
    )
    .evaluate(&seed())
    .unwrap();
    assert_eq!(rec.reason, Some(InvalidReason::MissingObjective));
}

#[test]
fn toy_target_breaking_block_is_invalid() {
    let ev = evaluator(
        vec![env!("CARGO_BIN_EXE_gevo-toy-eval").into(), "{workdir}".into()],
        Duration::from_secs(10),
        1,
    );
    let rec = ev.evaluate(&variant("banana")).unwrap();
    assert_eq!(rec.exit_status, ExitStatus::Code(1));
    assert_eq!(rec.reason, Some(InvalidReason::NonzeroExit));
    assert!(rec.stderr_tail.contains("not a number"));
}

#[test]
fn workdir_and_genome_id_are_exposed() {
    let ev = evaluator(
        sh(r#"test -f "$PWD/pipeline.toy" && echo "GE_METRICS: {\"objectives\":{\"fit_error\":1,\"complexity_count\":${#GE_GENOME_ID}}}""#),
        Duration::from_secs(10),
        1,
    );
    let rec = ev.evaluate(&seed()).unwrap();
    assert_eq!(rec.fitness.get("complexity_count"), Some(64.0));
}

#[test]
fn batch_respects_concurrency_and_dedups() {
    let ev = evaluator(
        sh(r#"sleep 0.2; echo 'GE_METRICS: {"objectives":{"fit_error":1,"complexity_count":1}}'"#),
        Duration::from_secs(10),
        2,
    );
    let genomes: Vec<Genome> = ["-0.1", "-0.2", "-0.3", "-0.4", "-0.2", "-0.1"]
        .iter()
        .map(|c| variant(c))
        .collect();
    let recs = ev.evaluate_batch(&genomes).unwrap();
    assert_eq!(recs.len(), 6);
    for (g, r) in genomes.iter().zip(&recs) {
        assert_eq!(&r.genome_id, g.id());
    }
    assert_eq!(ev.launches(), 4);
    assert!(ev.peak_live() <= 2, "peak {}", ev.peak_live());
    assert!(ev.evaluate_batch(&[]).unwrap().is_empty());
}
