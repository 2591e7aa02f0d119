//! Acceptance suite. Runs each criterion in turn, prints one PASS/FAIL
//! line per criterion and exits non-zero if any failed.

mod common;

use std::borrow::Cow;
use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use edugrid::demand::{
    route_destination, Context, Demand, DemandKind, DemandSignature, DemandState, DemandType,
    Destination,
};
use edugrid::diag;
use edugrid::fusion::{HealEvent, HealPolicy, Instance, TopologyConfig};
use edugrid::marf::{fft, stage_executors, to_complex, ComplexMatrix, Direction, Matrix};
use edugrid::store::{DemandStore, StoreError};
use edugrid::tier::{
    decode_error_record, Configuration, ExecutorRegistry, Node, StageInput, StagePayload,
    TierIdentity,
};
use edugrid::transport::{self, Endpoint, FailureKind, Role, TransportKind, TransportOptions};

use common::*;

type Outcome = Result<String, String>;

/// Name, check and time limit.
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

// 1. routing table fidelity

struct UnknownKind;
impl DemandKind for UnknownKind {}

fn routing() -> Outcome {
    let cases = [
        (
            DemandType::System,
            Some("dwt-7"),
            Destination::TierId("dwt-7".into()),
        ),
        (DemandType::Procedural, None, Destination::Dwt),
        (DemandType::Intensional, None, Destination::Dgt),
        (DemandType::Resource, None, Destination::AnyDest),
    ];
    check(
        cases.len() == DemandType::ALL.len(),
        "table does not cover every demand type",
    )?;
    for (dtype, tier, want) in cases {
        let d = Demand::new(
            dtype,
            Context::new().with("k", "v"),
            vec![1],
            tier.map(str::to_owned),
        )
        .map_err(|e| e.to_string())?;
        check(
            route_destination(&d) == want,
            format!("{dtype:?} routed to {}", route_destination(&d)),
        )?;
        check(
            dtype.destination(tier) == want,
            format!("{dtype:?} kind routing"),
        )?;
    }
    check(
        UnknownKind.destination(None) == Destination::Dwt,
        "unknown kind not treated as procedural",
    )?;
    check(
        UnknownKind.destination(Some("x")) == Destination::Dwt,
        "unknown kind honoured a tier id",
    )?;
    Ok("4 demand types and an unknown kind routed as specified".into())
}

// 2. FFT against an O(n^2) DFT

fn fft_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0xF0F7);
    let (mut worst_dft, mut worst_trip, mut worst_parseval) = (0f64, 0f64, 0f64);
    for _ in 0..200 {
        let n = 1usize << rng.gen_range(1..=10);
        let re: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let im: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (fr, fi) = fft(&re, &im, Direction::Forward).map_err(|e| e.to_string())?;
        let (dr, di) = naive_dft(&re, &im);
        worst_dft = worst_dft
            .max(max_abs_diff(&fr, &dr))
            .max(max_abs_diff(&fi, &di));
        let (br, bi) = fft(&fr, &fi, Direction::Inverse).map_err(|e| e.to_string())?;
        worst_trip = worst_trip
            .max(max_abs_diff(&br, &re))
            .max(max_abs_diff(&bi, &im));
        let time: f64 = re.iter().zip(&im).map(|(a, b)| a * a + b * b).sum();
        let freq: f64 = fr.iter().zip(&fi).map(|(a, b)| a * a + b * b).sum::<f64>() / n as f64;
        worst_parseval = worst_parseval.max((time - freq).abs() / time);
    }
    check(
        worst_dft <= 1e-9,
        format!("max abs error vs DFT {worst_dft:e} > 1e-9"),
    )?;
    check(
        worst_trip <= 1e-10,
        format!("round-trip error {worst_trip:e} > 1e-10"),
    )?;
    check(
        worst_parseval <= 1e-6,
        format!("Parseval relative error {worst_parseval:e} > 1e-6"),
    )?;
    Ok(format!("200 inputs; dft err {worst_dft:.2e}, round trip {worst_trip:.2e}, parseval {worst_parseval:.2e}"))
}

// 3. topology transparency

fn boot(t: &TopologyConfig, executors: ExecutorRegistry) -> Result<Arc<Instance>, String> {
    Instance::boot(t, executors, Configuration::new()).map_err(|e| e.to_string())
}

fn transparency() -> Outcome {
    let spec = classify_job();
    let expected = oracle(&spec).canonical_json();
    for (id, s) in &oracle(&spec).results {
        check(
            s.subject_id.as_deref() == Some(expected_speaker(id)),
            format!("oracle misclassified {id}"),
        )?;
    }
    let topologies = [
        (
            "single-node LOCAL",
            TopologyConfig::single_node(TransportKind::Local),
        ),
        (
            "3-node LOCAL",
            TopologyConfig::spread(TransportKind::Local, 2),
        ),
        ("3-node TCP", TopologyConfig::spread(TransportKind::Tcp, 2)),
    ];
    for (name, t) in topologies {
        let inst = boot(&t, stage_executors())?;
        let r = inst.run_job(&spec);
        inst.shutdown();
        let r = r.map_err(|e| format!("{name}: {e}"))?;
        check(
            r.canonical_json() == expected,
            format!("{name} result differs from the oracle"),
        )?;
    }
    Ok("oracle, single-node LOCAL, 3-node LOCAL and 3-node TCP results byte-identical".into())
}

// 4. self-optimization

fn caching() -> Outcome {
    let inst = boot(
        &TopologyConfig::spread(TransportKind::Local, 2),
        stage_executors(),
    )?;
    let spec = classify_job();
    let run = || inst.run_job(&spec).map_err(|e| e.to_string());
    let first = run()?;
    let before = inst.executor_invocations();
    let second = run()?;
    let after = inst.executor_invocations();
    inst.shutdown();
    let delta: u64 = after
        .iter()
        .map(|(k, v)| v - before.get(k).copied().unwrap_or(0))
        .sum();
    let stats = second.stats.ok_or("no stats")?;
    let demands = (spec.samples.len() * 4) as u64;
    check(delta == 0, format!("{delta} new executor invocations"))?;
    check(
        stats.cache_hits == demands,
        format!("cacheHits {} != {demands}", stats.cache_hits),
    )?;
    check(
        second.canonical_json() == first.canonical_json(),
        "resubmitted result differs",
    )?;
    Ok(format!(
        "0 new invocations, cacheHits {}/{demands}",
        stats.cache_hits
    ))
}

// 5. self-healing

fn healing() -> Outcome {
    let spec = classify_job();
    let expected = oracle(&spec).canonical_json();
    let mut rng = StdRng::seed_from_u64(0x5EA1);
    let mut reroutes = 0;
    for trial in 0..20 {
        let kind = if trial % 2 == 0 {
            TransportKind::Local
        } else {
            TransportKind::Tcp
        };
        let mut t = TopologyConfig::spread(kind, 2);
        t.lease_ms = 300;
        let inst = boot(&t, slow_executors(40))?;
        inst.start_monitor(HealPolicy::new(t.lease_ms, true));
        let kill_after = rng.gen_range(20..250);
        let victim = if rng.gen_bool(0.5) { "n1" } else { "n2" };
        let (result, mid_job) = thread::scope(|s| {
            let job = s.spawn(|| inst.run_job(&spec));
            thread::sleep(Duration::from_millis(kill_after));
            let mid_job = !job.is_finished();
            let fault = inst.inject_fault(victim);
            (
                job.join()
                    .expect("job thread")
                    .map_err(|e| e.to_string())
                    .and_then(|r| fault.map(|()| r).map_err(|e| e.to_string())),
                mid_job,
            )
        });
        // give the monitor a moment to report the death if the job beat it
        let deadline = Instant::now() + Duration::from_secs(2);
        while !inst
            .events()
            .iter()
            .any(|e| matches!(e, HealEvent::Reroute { .. }))
            && Instant::now() < deadline
        {
            thread::sleep(Duration::from_millis(20));
        }
        let events = inst.events();
        inst.shutdown();
        let r =
            result.map_err(|e| format!("trial {trial} (kill {victim} at {kill_after} ms): {e}"))?;
        check(
            mid_job,
            format!("trial {trial}: job finished before the kill at {kill_after} ms"),
        )?;
        check(
            r.canonical_json() == expected,
            format!("trial {trial}: result differs from the no-fault run"),
        )?;
        let stats = r.stats.ok_or("no stats")?;
        check(
            stats.elapsed_ms < 30_000,
            format!("trial {trial}: took {} ms", stats.elapsed_ms),
        )?;
        let n = events
            .iter()
            .filter(|e| {
                matches!(
                    e,
                    HealEvent::Reroute {
                        identity: TierIdentity::Dwt,
                        ..
                    }
                )
            })
            .count();
        check(n >= 1, format!("trial {trial}: no reroute event"))?;
        reroutes += n;
    }
    Ok(format!(
        "20 randomized kills healed, {reroutes} reroute events, results equal the no-fault run"
    ))
}

// 6. linearizable take

fn stress() -> Outcome {
    let mut executors = ExecutorRegistry::new();
    executors.register("echo", Arc::new(|_p: &[u8], i: &[u8]| Ok(i.to_vec())));
    let node = Node::new(
        "stress",
        TransportKind::Local,
        Configuration::new(),
        executors.clone(),
    );
    let bus = format!("acceptance-stress-{}", std::process::id());
    let ep = node
        .serve(
            &Endpoint::local(bus).map_err(|e| e.to_string())?,
            TransportOptions::default(),
        )
        .map_err(|e| e.to_string())?;
    let cfg = Configuration::new().with("store.endpoint", ep.to_string());
    node.start_tier(TierIdentity::Dst, "dst-0", &cfg)
        .map_err(|e| e.to_string())?;
    for i in 0..8 {
        node.start_tier(TierIdentity::Dwt, &format!("dwt-{i}"), &cfg)
            .map_err(|e| e.to_string())?;
    }
    let store = node.store().ok_or("no store")?;
    let diags = diag::reported_count();
    let sigs: Vec<DemandSignature> = (0..1000u32)
        .map(|i| {
            let payload = StagePayload {
                params: Vec::new(),
                input: StageInput::Inline(i.to_le_bytes().to_vec()),
            };
            let d = Demand::procedural(
                Context::new()
                    .with("stage", "echo")
                    .with_num("i", u64::from(i)),
                payload.to_bytes(),
            );
            let sig = d.signature();
            store.write(d);
            sig
        })
        .collect();
    let mut wrong = 0;
    for (i, sig) in sigs.iter().enumerate() {
        match store.get_result(*sig, 30_000) {
            Ok(r) if r == (i as u32).to_le_bytes() => {}
            _ => wrong += 1,
        }
    }
    let computed = sigs
        .iter()
        .filter(|s| store.state_of(**s) == Some(DemandState::Computed))
        .count();
    let invocations = executors.invocations("echo");
    let stats = store.stats();
    node.shutdown();
    check(
        wrong == 0,
        format!("{wrong} demands with a wrong or missing result"),
    )?;
    check(computed == 1000, format!("{computed} demands COMPUTED"))?;
    check(
        invocations == 1000,
        format!("{invocations} executor invocations"),
    )?;
    check(
        stats.computed == 1000,
        format!("store counts {} computed", stats.computed),
    )?;
    let extra = diag::reported_count() - diags;
    check(
        extra == 0,
        format!("{extra} diagnostics (result conflicts or failures) during the run"),
    )?;
    Ok("1000 demands, 8 workers: 1000 invocations, all COMPUTED once, no conflicts".into())
}

// 7. serialization

fn random_demand(rng: &mut StdRng) -> Demand {
    let dtype = DemandType::ALL[rng.gen_range(0..4)];
    let mut ctx = Context::new();
    for _ in 0..rng.gen_range(0..5) {
        ctx.insert(
            format!("d{}", rng.gen_range(0..10)),
            format!("t{}", rng.gen::<u32>()),
        );
    }
    let payload: Vec<u8> = (0..rng.gen_range(0..64)).map(|_| rng.gen()).collect();
    let tier = (dtype == DemandType::System).then(|| format!("tier-{}", rng.gen_range(0..5)));
    let mut d = Demand::new(dtype, ctx, payload, tier).expect("valid demand");
    let mut now = rng.gen_range(0..1_000_000u64);
    for _ in 0..rng.gen_range(0..4) {
        now += rng.gen_range(0..100);
        d.record_access(format!("t{}", rng.gen_range(0..3)), now)
            .expect("monotonic");
    }
    match rng.gen_range(0..4) {
        0 => {}
        1 => d.claim().unwrap(),
        2 => {
            d.claim().unwrap();
            d.release().unwrap();
        }
        _ => {
            d.claim().unwrap();
            let result: Vec<u8> = (0..rng.gen_range(0..32)).map(|_| rng.gen()).collect();
            d.store_result(result).unwrap();
        }
    }
    d
}

fn serialization() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0xDE3A);
    for i in 0..1000 {
        let d = random_demand(&mut rng);
        let back = Demand::from_bytes(&d.to_bytes()).map_err(|e| format!("demand {i}: {e}"))?;
        check(
            back.is_identical(&d),
            format!("demand {i} changed in a round trip"),
        )?;
        let recomputed = DemandSignature::of(d.dtype(), d.context(), d.payload());
        check(
            back.signature() == recomputed,
            format!("demand {i} signature unstable"),
        )?;
        check(
            back.to_bytes() == d.to_bytes(),
            format!("demand {i} re-encodes differently"),
        )?;
    }
    Ok("1000 random demands round-trip with equal fields and stable signatures".into())
}

// 8. refactored-design invariants

fn design_invariants() -> Outcome {
    let real = Matrix::row(vec![1.0, -2.0, 3.5]);
    let promoted = to_complex(&real);
    check(
        matches!(promoted, Cow::Owned(_)),
        "real matrix was not promoted",
    )?;
    check(
        promoted.re() == real.re() && promoted.im().iter().all(|v| *v == 0.0),
        "promotion changed values",
    )?;
    let complex = ComplexMatrix::new(Matrix::row(vec![1.0, 2.0]), vec![0.5, -0.5]);
    let same = to_complex(&complex);
    check(
        matches!(same, Cow::Borrowed(b) if std::ptr::eq(b, &complex)),
        "complex matrix was copied",
    )?;

    let mut silent = Vec::new();
    let mut expect_diag = |name: &str, inject: &dyn Fn()| {
        let before = diag::reported_count();
        inject();
        let until = Instant::now() + Duration::from_secs(2);
        while diag::reported_count() == before && Instant::now() < until {
            thread::sleep(Duration::from_millis(5));
        }
        if diag::reported_count() == before {
            silent.push(name.to_owned());
        }
    };
    for kind in [TransportKind::Local, TransportKind::Tcp] {
        let endpoint = |tag: &str| match kind {
            TransportKind::Local => {
                Endpoint::local(format!("acceptance-{tag}-{}", std::process::id())).unwrap()
            }
            TransportKind::Tcp => Endpoint::tcp("127.0.0.1", 0).unwrap(),
        };
        let pair = |tag: &str| {
            let server = transport::open_transport(kind, &endpoint(tag), Role::Server).unwrap();
            let client =
                transport::open_transport(kind, &server.local_endpoint(), Role::Client).unwrap();
            client.send_frame(b"hello").unwrap();
            assert_eq!(server.recv_frame(2000).unwrap(), b"hello");
            (server, client)
        };
        expect_diag(&format!("{kind} peer abort"), &|| {
            let (server, client) = pair("abort");
            client.abort();
            let _ = server.recv_frame(500);
        });
        expect_diag(&format!("{kind} malformed frame"), &|| {
            let (server, client) = pair("malformed");
            client.send_frame(&[0x7A, 0x00, 0x01]).unwrap();
            let _ = server.recv_message(2000);
        });
        // a registered handler takes the report instead, with a detail
        let seen: Arc<Mutex<Vec<(FailureKind, String)>>> = Arc::default();
        let (server, client) = pair("handled");
        let sink = seen.clone();
        server.set_exception_handler(Arc::new(move |k, d| sink.lock().push((k, d.to_owned()))));
        client.abort();
        let _ = server.recv_frame(500);
        let until = Instant::now() + Duration::from_secs(2);
        while seen.lock().is_empty() && Instant::now() < until {
            thread::sleep(Duration::from_millis(5));
        }
        let got = seen.lock().clone();
        check(
            got.iter()
                .any(|(k, d)| *k == FailureKind::Disconnected && !d.is_empty()),
            format!("{kind} handler got {got:?}"),
        )?;
    }

    // store failures are returned, never dropped
    let store = DemandStore::new();
    let d = Demand::procedural(Context::new().with("stage", "x"), vec![1]);
    let sig = d.signature();
    check(
        matches!(
            store.put_result(sig, vec![1]),
            Err(StoreError::UnknownDemand(_))
        ),
        "put on unknown demand",
    )?;
    store.write(d);
    let _ = store
        .take_pending("t", &Destination::Dwt, 100)
        .map_err(|e| e.to_string())?;
    store.put_result(sig, vec![1]).map_err(|e| e.to_string())?;
    check(
        matches!(
            store.put_result(sig, vec![2]),
            Err(StoreError::ResultConflict(_))
        ),
        "conflicting put",
    )?;
    check(
        matches!(
            store.get_result(DemandSignature(42), 10),
            Err(StoreError::TimeoutExpired)
        ),
        "get on a never-written demand",
    )?;

    // a failing stage reports and leaves an error record with its reason
    let inst = boot(
        &TopologyConfig::single_node(TransportKind::Local),
        stage_executors(),
    )?;
    let mut spec = classify_job();
    spec.samples.truncate(1);
    spec.samples[0].wav_base64 = Some(b"not a wav".to_vec());
    let before = diag::reported_count();
    let r = inst.run_job(&spec).map_err(|e| e.to_string())?;
    inst.shutdown();
    let failures = r.failures();
    check(
        failures.len() == 1 && !failures[0].2.is_empty(),
        "stage failure without detail",
    )?;
    check(
        diag::reported_count() > before,
        "stage failure produced no diagnostic",
    )?;
    check(
        decode_error_record(&edugrid::tier::error_record("")).is_some_and(|d| !d.is_empty()),
        "empty error record",
    )?;

    check(
        silent.is_empty(),
        format!("silent failure paths: {silent:?}"),
    )?;
    Ok("to_complex promotes reals and borrows complex; 4 transport and 4 store/stage failure paths reported".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("routing table fidelity", routing, Duration::from_secs(1)),
        (
            "FFT oracle equivalence",
            fft_oracle,
            Duration::from_secs(30),
        ),
        (
            "topology transparency",
            transparency,
            Duration::from_secs(60),
        ),
        ("self-optimization", caching, Duration::from_secs(10)),
        ("self-healing", healing, Duration::from_secs(300)),
        ("linearizable take", stress, Duration::from_secs(60)),
        ("serialization", serialization, Duration::from_secs(5)),
        (
            "matrix promotion and failure reporting",
            design_invariants,
            Duration::from_secs(5),
        ),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|m| {
            if elapsed <= limit {
                Ok(m)
            } else {
                Err(format!("{m}; but took {elapsed:.2?}, limit {limit:?}"))
            }
        });
        match outcome {
            Ok(m) => println!("PASS criterion {}: {name}: {m} [{elapsed:.2?}]", i + 1),
            Err(m) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {m} [{elapsed:.2?}]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
