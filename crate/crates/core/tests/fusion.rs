mod common;

use std::thread;
use std::time::Duration;

use edugrid::fusion::{
    FusionError, HealEvent, HealPolicy, Instance, JobMode, SampleStatus, TopologyConfig,
};
use edugrid::marf::stage_executors;
use edugrid::tier::{Configuration, TierIdentity};
use edugrid::transport::TransportKind;

use common::*;

fn boot(t: &TopologyConfig) -> std::sync::Arc<Instance> {
    Instance::boot(t, stage_executors(), Configuration::new()).expect("instance boots")
}

#[test]
fn oracle_classifies_both_speakers() {
    let r = oracle(&classify_job());
    for (id, s) in &r.results {
        assert_eq!(s.subject_id.as_deref(), Some(expected_speaker(id)), "{id}");
    }
}

#[test]
fn classify_matches_oracle_on_every_topology() {
    let spec = classify_job();
    let expected = oracle(&spec).canonical_json();
    for t in [
        TopologyConfig::single_node(TransportKind::Local),
        TopologyConfig::spread(TransportKind::Local, 2),
        TopologyConfig::spread(TransportKind::Tcp, 2),
    ] {
        let inst = boot(&t);
        let r = inst.run_job(&spec).unwrap();
        assert_eq!(
            r.canonical_json(),
            expected,
            "{} nodes over {}",
            t.nodes.len(),
            t.transport_kind
        );
        inst.shutdown();
    }
}

#[test]
fn training_matches_oracle_and_feeds_classification() {
    let inst = boot(&TopologyConfig::spread(TransportKind::Local, 2));
    let train = training_job();
    let r = inst.run_job(&train).unwrap();
    assert_eq!(r.canonical_json(), oracle(&train).canonical_json());
    assert_eq!(inst.model(), r.model.clone().unwrap());

    let mut classify = classify_job();
    classify.model = None;
    let c = inst.run_job(&classify).unwrap();
    assert_eq!(c.canonical_json(), oracle(&classify_job()).canonical_json());
    inst.shutdown();
}

#[test]
fn resubmission_is_served_from_cache() {
    let inst = boot(&TopologyConfig::single_node(TransportKind::Local));
    let spec = classify_job();
    let first = inst.run_job(&spec).unwrap();
    let before = inst.executor_invocations();
    let again = inst.run_job(&spec).unwrap();
    assert_eq!(inst.executor_invocations(), before);
    assert_eq!(again.canonical_json(), first.canonical_json());
    let stats = again.stats.unwrap();
    assert_eq!((stats.cache_hits, stats.demands_executed), (16, 0));
    inst.shutdown();
}

#[test]
fn corrupt_sample_fails_alone() {
    let inst = boot(&TopologyConfig::spread(TransportKind::Local, 2));
    let mut spec = classify_job();
    spec.samples[1].wav_base64 = Some(b"RIFF this is not audio".to_vec());
    let r = inst.run_job(&spec).unwrap();
    assert_eq!(r.canonical_json(), oracle(&spec).canonical_json());
    let failures = r.failures();
    assert_eq!(failures.len(), 1);
    assert_eq!((failures[0].0, failures[0].1), ("a2", "load"));
    assert!(!failures[0].2.is_empty());
    assert_eq!(
        r.results
            .values()
            .filter(|s| s.status == SampleStatus::Ok)
            .count(),
        3
    );
    inst.shutdown();
}

#[test]
fn different_filters_do_not_share_cache() {
    let inst = boot(&TopologyConfig::single_node(TransportKind::Local));
    let spec = classify_job();
    inst.run_job(&spec).unwrap();
    let mut other = spec.clone();
    other.pipeline.low_hz = Some(150.0);
    let r = inst.run_job(&other).unwrap();
    // only the load stage is shared
    assert_eq!(r.stats.unwrap().cache_hits, 4);
    inst.shutdown();
}

#[test]
fn concurrent_jobs_on_one_instance() {
    let inst = boot(&TopologyConfig::spread(TransportKind::Local, 2));
    let spec = classify_job();
    let mut train = training_job();
    train.samples.truncate(2);
    let expected = (
        oracle(&spec).canonical_json(),
        oracle(&train).canonical_json(),
    );
    thread::scope(|s| {
        let a = s.spawn(|| inst.run_job(&spec).unwrap());
        let b = s.spawn(|| inst.run_job(&train).unwrap());
        assert_eq!(a.join().unwrap().canonical_json(), expected.0);
        assert_eq!(b.join().unwrap().canonical_json(), expected.1);
    });
    inst.shutdown();
}

#[test]
fn killing_the_only_worker_without_replacement_stalls() {
    let mut t = TopologyConfig::spread(TransportKind::Local, 1);
    t.replace_nodes = false;
    let inst = boot(&t);
    inst.start_monitor(HealPolicy::new(200, false));
    inst.inject_fault("n1").unwrap();
    let mut spec = classify_job();
    spec.deadline_ms = 1_000;
    match inst.run_job(&spec) {
        Err(FusionError::JobStalled(partial)) => {
            assert!(partial.stalled);
            assert_eq!(partial.results.len(), 4);
            assert!(partial
                .results
                .values()
                .all(|r| r.status == SampleStatus::Stalled));
            assert!(partial.stats.is_some());
        }
        other => panic!("expected a stall, got {other:?}"),
    }
    thread::sleep(Duration::from_millis(300));
    let events = inst.events();
    assert!(events.contains(&HealEvent::NodeDead {
        node_id: "n1".into()
    }));
    assert!(!events
        .iter()
        .any(|e| matches!(e, HealEvent::Reroute { .. })));
    inst.shutdown();
}

#[test]
fn losing_every_worker_host_is_unsatisfiable() {
    let inst = boot(&TopologyConfig::spread(TransportKind::Local, 1));
    inst.inject_fault("n1").unwrap();
    let events = inst.heal_once(&HealPolicy::new(1000, true));
    assert!(events.contains(&HealEvent::Unsatisfiable {
        identity: TierIdentity::Dwt
    }));
    inst.shutdown();
}

#[test]
fn no_faults_no_heal_events() {
    let inst = boot(&TopologyConfig::spread(TransportKind::Local, 2));
    inst.start_monitor(HealPolicy::new(2_000, true));
    inst.run_job(&classify_job()).unwrap();
    thread::sleep(Duration::from_millis(100));
    assert!(inst.events().is_empty());
    inst.shutdown();
}

#[test]
fn worker_killed_mid_job_is_healed() {
    let mut t = TopologyConfig::spread(TransportKind::Tcp, 2);
    t.lease_ms = 300;
    let inst = Instance::boot(&t, slow_executors(30), Configuration::new()).unwrap();
    inst.start_monitor(HealPolicy::new(300, true));
    let spec = classify_job();
    let expected = oracle(&spec).canonical_json();
    let r = thread::scope(|s| {
        let job = s.spawn(|| inst.run_job(&spec));
        thread::sleep(Duration::from_millis(100));
        inst.inject_fault("n1").unwrap();
        job.join().unwrap()
    })
    .unwrap();
    assert_eq!(r.canonical_json(), expected);
    thread::sleep(Duration::from_millis(200));
    assert!(inst
        .events()
        .iter()
        .any(|e| matches!(e, HealEvent::Reroute { .. })));
    assert_eq!(r.mode, JobMode::Classify);
    inst.shutdown();
}
