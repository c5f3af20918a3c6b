//! Acceptance suite: one test per shipped claim, each printing a PASS/FAIL
//! line. Everything runs against the simulated control plane on virtual
//! time; run with `cargo test -p ofprint --test acceptance -- --nocapture`
//! to see the per-criterion lines.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use ofprint::cli::{cmd_build_db, cmd_scan, BuildDbInvocation, ScanConfig, ScanInvocation};
use ofprint::fusion::{combine, Technique, TechniqueEvidence};
use ofprint::packet::{classify_capture, detect_arp_rebroadcast, estimate_interval, parse_lldp};
use ofprint::signatures::{match_timeouts, ControllerId, SignatureDb};
use ofprint::simnet::{
    audit_flow_discipline, run_scenario, LinkModel, NoiseProfile, ScenarioConfig, SimTransport,
};
use ofprint::timing::{ProbeSchedule, TimingOptions, TimingSession};
use ofprint::transport::{CapturedFrame, ProbeTransport};
use ofprint::units::{Timeout, Timestamp};
use ofprint::wire::{build_ethernet, LldpFrameSpec, MacAddr, ETHERTYPE_BDDP, ETHERTYPE_LLDP};

use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestError, TestRunner};

fn report(criterion: &str, name: &str, pass: bool, detail: &str) -> bool {
    println!(
        "[acceptance] criterion {criterion} ({name}): {}{}{}",
        if pass { "PASS" } else { "FAIL" },
        if detail.is_empty() { "" } else { ": " },
        detail
    );
    pass
}

fn shipped() -> SignatureDb {
    SignatureDb::shipped()
}

fn sim(config: &ScenarioConfig, seed: u64) -> SimTransport {
    run_scenario(config, seed, &shipped()).expect("valid scenario")
}

const FIVE_MODELS: [&str; 5] = [
    "opendaylight-lithium-helium",
    "floodlight",
    "pox",
    "ryu",
    "beacon",
];

const SIX_MODELS: [&str; 6] = [
    "opendaylight-lithium-helium",
    "opendaylight-hydrogen",
    "floodlight",
    "pox",
    "ryu",
    "beacon",
];

/// Criterion 1: idle-timeout inference over {5,10,...,30} s x 10 noisy
/// runs errs (deviation > 1 s) at most twice in 60 trials; hard-timeout
/// inference over {10,20,...,60} s x 10 noisy runs errs (deviation beyond
/// one keep-alive wait, the method's resolution) zero times. Under 60 s of
/// wall clock.
#[test]
fn criterion_1_timeout_inference_error_rates() {
    let started = Instant::now();

    let mut idle_errors = 0u32;
    let mut idle_trials = 0u32;
    for value in [5u64, 10, 15, 20, 25, 30] {
        for run in 0..10u64 {
            idle_trials += 1;
            let config = ScenarioConfig::builtin("pox", NoiseProfile::Noisy)
                .with_idle_timeout(Timeout::from_secs_f64(value as f64));
            let mut transport = sim(&config, 0xC10_000 + value * 100 + run);
            let target = transport.default_target();
            let mut session = TimingSession::new(
                &mut transport,
                target,
                ProbeSchedule::default(),
                TimingOptions::default(),
            );
            let deviation = (|| -> Result<f64, ofprint::timing::TimingError> {
                let baseline = session.measure_baseline()?;
                let estimate = session.infer_idle_timeout(&baseline)?;
                Ok(match estimate.idle_timeout.as_duration() {
                    Some(d) => (d.as_secs_f64() - value as f64).abs(),
                    None => f64::INFINITY,
                })
            })();
            match deviation {
                Ok(dev) if dev <= 1.0 => {}
                Ok(_) | Err(_) => idle_errors += 1,
            }
        }
    }

    let keepalive_wait = 5.0; // idle stays at POX's 10 s, so wait = idle/2
    let mut hard_errors = 0u32;
    let mut hard_trials = 0u32;
    for value in [10u64, 20, 30, 40, 50, 60] {
        for run in 0..10u64 {
            hard_trials += 1;
            let config = ScenarioConfig::builtin("pox", NoiseProfile::Noisy)
                .with_hard_timeout(Timeout::from_secs_f64(value as f64));
            let mut transport = sim(&config, 0xC1_4000 + value * 100 + run);
            let target = transport.default_target();
            let mut session = TimingSession::new(
                &mut transport,
                target,
                ProbeSchedule::default(),
                TimingOptions::default(),
            );
            let deviation = (|| -> Result<f64, ofprint::timing::TimingError> {
                let baseline = session.measure_baseline()?;
                let idle = session.infer_idle_timeout(&baseline)?;
                let hard = session.infer_hard_timeout(&baseline, &idle)?;
                Ok(match hard.as_duration() {
                    Some(d) => (d.as_secs_f64() - value as f64).abs(),
                    None => f64::INFINITY,
                })
            })();
            match deviation {
                Ok(dev) if dev <= keepalive_wait => {}
                Ok(_) | Err(_) => hard_errors += 1,
            }
        }
    }

    let elapsed = started.elapsed();
    let pass = idle_errors <= 2 && hard_errors == 0 && elapsed < Duration::from_secs(60);
    let detail = format!(
        "idle {idle_errors}/{idle_trials} errors (allowed 2), hard {hard_errors}/{hard_trials} errors (allowed 0), wall {elapsed:.2?}"
    );
    assert!(report("1", "timeout inference accuracy", pass, &detail), "{detail}");
}

/// Criterion 2: both timeout algorithms recover the shipped defaults for
/// all five controllers (0 meaning infinite) within one step, and the
/// recovered values map back to the expected candidate sets.
#[test]
fn criterion_2_default_timeout_recovery() {
    let db = shipped();
    let step = ProbeSchedule::default().step.as_secs_f64();
    let mut failures = Vec::new();

    for (i, model) in FIVE_MODELS.iter().enumerate() {
        let config = ScenarioConfig::builtin(model, NoiseProfile::Default);
        let mut transport = sim(&config, 0xC2_000 + i as u64);
        let target = transport.default_target();
        let mut session = TimingSession::new(
            &mut transport,
            target,
            ProbeSchedule::default(),
            TimingOptions::default(),
        );
        let baseline = session.measure_baseline().expect("baseline");
        let mut estimate = session.infer_idle_timeout(&baseline).expect("idle");
        let hard = session.infer_hard_timeout(&baseline, &estimate).expect("hard");
        estimate.hard_timeout = Some(hard);

        let expected = &db.get_by_name(model).unwrap().timeouts;
        let idle_ok = match (expected.idle, estimate.idle_timeout) {
            (Timeout::Infinite, Timeout::Infinite) => true,
            (Timeout::Finite(want), Timeout::Finite(got)) => {
                (got.as_secs_f64() - want.as_secs_f64()).abs() <= step
            }
            _ => false,
        };
        let hard_ok = match (expected.hard, hard) {
            (Timeout::Infinite, Timeout::Infinite) => true,
            (Timeout::Finite(want), Timeout::Finite(got)) => {
                (got.as_secs_f64() - want.as_secs_f64()).abs() <= step
            }
            _ => false,
        };
        if !idle_ok || !hard_ok {
            failures.push(format!(
                "{model}: idle {} (want {}), hard {} (want {})",
                estimate.idle_timeout, expected.idle, hard, expected.hard
            ));
            continue;
        }

        let set = match_timeouts(&estimate, db.signatures(), Duration::from_secs(1));
        let got: Vec<&str> = set.iter().map(|id| id.as_str()).collect();
        let want: Vec<&str> = match *model {
            "pox" => vec!["pox"],
            "floodlight" | "beacon" => vec!["beacon", "floodlight"],
            _ => vec![
                "opendaylight-hydrogen",
                "opendaylight-lithium-helium",
                "ryu",
            ],
        };
        if got != want {
            failures.push(format!("{model}: candidates {got:?}, want {want:?}"));
        }
    }

    let pass = failures.is_empty();
    let detail = if pass {
        "all 5 models recovered and matched".to_string()
    } else {
        failures.join("; ")
    };
    assert!(report("2", "default timeout table recovery", pass, &detail), "{detail}");
}

/// Criterion 3: build-db over the five models on the minimal-latency
/// topology reproduces each adjusted processing time within 0.3 ms of the
/// configured ground truth.
#[test]
fn criterion_3_processing_time_database_recovery() {
    let reference = shipped();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("measured.json");
    let inv = BuildDbInvocation {
        db_path: None,
        targets: FIVE_MODELS.iter().map(|m| format!("{m}:minimal")).collect(),
        out: out.clone(),
        seed: 0xC3,
        n: Some(100),
    };
    let code = cmd_build_db(&inv).expect("build-db");
    let rebuilt = SignatureDb::load(&out).expect("written db");

    let mut failures = Vec::new();
    if code != 0 {
        failures.push(format!("exit code {code}"));
    }
    for model in FIVE_MODELS {
        let want = reference.get_by_name(model).unwrap().processing;
        let got = rebuilt.get_by_name(model).unwrap().processing;
        if (got.t_p_adjusted_ms - want.t_p_adjusted_ms).abs() > 0.3 {
            failures.push(format!(
                "{model}: adjusted {:.3} ms vs ground truth {:.3} ms",
                got.t_p_adjusted_ms, want.t_p_adjusted_ms
            ));
        }
    }

    let pass = failures.is_empty();
    let detail = if pass {
        "all 5 adjusted times within 0.3 ms".to_string()
    } else {
        failures.join("; ")
    };
    assert!(report("3", "processing-time database recovery", pass, &detail), "{detail}");
}

/// Criterion 4: processing-time fingerprinting alone cannot separate
/// Beacon from Floodlight (both flagged ambiguous), while POX is unique.
#[test]
fn criterion_4_processing_time_ambiguity() {
    let db = shipped();
    let mut failures = Vec::new();

    let fingerprint = |model: &str, seed: u64| {
        let config = ScenarioConfig::builtin(model, NoiseProfile::Default);
        let mut transport = sim(&config, seed);
        let target = transport.default_target();
        let mut session = TimingSession::new(
            &mut transport,
            target,
            ProbeSchedule::default(),
            TimingOptions::default(),
        );
        let baseline = session.measure_baseline().expect("baseline");
        let (_, matches) = session
            .fingerprint_by_processing_time(&baseline, Timeout::Infinite, db.signatures(), 1.0)
            .expect("fingerprint");
        matches
    };

    let beacon = fingerprint("beacon", 0xC4_01);
    let beacon_ids: BTreeSet<&str> = beacon.iter().map(|m| m.id.as_str()).collect();
    if beacon_ids != BTreeSet::from(["beacon", "floodlight"]) {
        failures.push(format!("beacon candidates {beacon_ids:?}"));
    } else if !beacon.iter().all(|m| m.ambiguous) {
        failures.push("beacon/floodlight not flagged ambiguous".to_string());
    }

    let pox = fingerprint("pox", 0xC4_02);
    if pox.len() != 1 || pox[0].id.as_str() != "pox" || pox[0].ambiguous {
        failures.push(format!("pox candidates {pox:?}"));
    }

    let pass = failures.is_empty();
    let detail = if pass {
        "beacon ambiguous with floodlight; pox unique".to_string()
    } else {
        failures.join("; ")
    };
    assert!(report("4", "processing-time ambiguity", pass, &detail), "{detail}");
}

/// Criterion 5: ten virtual minutes of discovery traffic classify every
/// shipped profile correctly across 20 seeds, with no misclassification.
#[test]
fn criterion_5_lldp_classification() {
    let db = shipped();
    let mut failures = Vec::new();
    for model in SIX_MODELS {
        for seed in 0..20u64 {
            let config = ScenarioConfig::builtin(model, NoiseProfile::Default);
            let mut transport = sim(&config, 0xC5_000 + seed);
            let frames = transport
                .capture_frames(&[ETHERTYPE_LLDP, ETHERTYPE_BDDP], Duration::from_secs(600))
                .expect("capture");
            let result = classify_capture(&frames, db.signatures());
            let got: Vec<&str> = result.candidates.iter().map(|c| c.as_str()).collect();
            if got != vec![model] {
                failures.push(format!("{model} seed {seed}: candidates {got:?}"));
            }
        }
    }
    let pass = failures.is_empty();
    let detail = if pass {
        "6 profiles x 20 seeds, zero misclassification".to_string()
    } else {
        failures.join("; ")
    };
    assert!(report("5", "LLDP profile classification", pass, &detail), "{detail}");
}

/// Criterion 6: the ARP detector fires on Hydrogen and never on anything
/// else, across 20 seeds per model.
#[test]
fn criterion_6_arp_rebroadcast_detector() {
    let mut failures = Vec::new();
    for model in SIX_MODELS {
        let expected = model == "opendaylight-hydrogen";
        for seed in 0..20u64 {
            let config = ScenarioConfig::builtin(model, NoiseProfile::Default);
            let mut transport = sim(&config, 0xC6_000 + seed);
            let (info, frames) = transport
                .send_arp_probe("10.0.0.250".parse().unwrap(), Duration::from_secs(1))
                .expect("arp probe");
            let got = detect_arp_rebroadcast(&frames, &info, None);
            if got != expected {
                failures.push(format!("{model} seed {seed}: detector said {got}"));
            }
        }
    }
    let pass = failures.is_empty();
    let detail = if pass {
        "hydrogen true, all others false, 20 seeds each".to_string()
    } else {
        failures.join("; ")
    };
    assert!(report("6", "ARP rebroadcast detector", pass, &detail), "{detail}");
}

/// Criterion 7: a full scan decides the correct controller for every
/// shipped model in at least 19 of 20 seeded noisy runs, Hydrogen via the
/// ARP tie-breaker.
#[test]
fn criterion_7_fusion_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();
    for model in SIX_MODELS {
        let mut correct = 0u32;
        for seed in 0..20u64 {
            let out = dir.path().join(format!("{model}-{seed}.json"));
            let inv = ScanInvocation {
                db_path: None,
                sim: Some(format!("{model}:noisy")),
                live: None,
                live_target: None,
                seed: 0xC7_000 + seed,
                out: Some(out.clone()),
                config: ScanConfig::default(),
            };
            let code = cmd_scan(&inv).expect("scan");
            let report: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
            let decided = report["verdict"]["decided"].as_bool().unwrap();
            let top = report["verdict"]["ranking"][0]["id"].as_str().unwrap_or("");
            if code == 0 && decided && top == model {
                correct += 1;
            }
        }
        if correct < 19 {
            failures.push(format!("{model}: {correct}/20 decided correctly"));
        } else {
            println!("[acceptance]   criterion 7 detail: {model} {correct}/20");
        }
    }
    let pass = failures.is_empty();
    let detail = if pass {
        "all models decided in >= 19/20 noisy runs".to_string()
    } else {
        failures.join("; ")
    };
    assert!(report("7", "fusion end-to-end", pass, &detail), "{detail}");
}

// ---------------------------------------------------------------------
// Criterion 8: property suites, >= 100 cases each.
// ---------------------------------------------------------------------

fn pt_config() -> PtConfig {
    PtConfig {
        cases: 128,
        failure_persistence: None,
        ..PtConfig::default()
    }
}

fn pt_detail<T: std::fmt::Debug>(result: &Result<(), TestError<T>>) -> String {
    match result {
        Ok(()) => "128 cases".to_string(),
        Err(e) => format!("{e}"),
    }
}

/// Drive a scenario with a fixed probe/capture/ARP script and return its
/// full event trace.
fn scripted_trace(model: &str, seed: u64, gaps_ms: &[u32]) -> Vec<ofprint::simnet::TraceEvent> {
    let config = ScenarioConfig::builtin(model, NoiseProfile::Noisy);
    let mut transport = sim(&config, seed);
    transport.net_mut().set_trace(true);
    let target = transport.default_target();
    for (i, gap) in gaps_ms.iter().enumerate() {
        let probe = if i % 3 == 2 { target } else { target.plain() };
        let _ = transport.send_probe(&probe).unwrap();
        transport.wait(Duration::from_millis(*gap as u64));
    }
    let _ = transport
        .capture_frames(&[ETHERTYPE_LLDP, ETHERTYPE_BDDP], Duration::from_secs(8))
        .unwrap();
    let _ = transport
        .send_arp_probe("10.0.0.250".parse().unwrap(), Duration::from_secs(1))
        .unwrap();
    transport.net_mut().trace().to_vec()
}

#[test]
fn criterion_8a_simnet_determinism() {
    let mut runner = TestRunner::new(pt_config());
    let strategy = (
        proptest::sample::select(SIX_MODELS.to_vec()),
        any::<u64>(),
        proptest::collection::vec(1u32..20_000, 1..12),
    );
    let result = runner.run(&strategy, |(model, seed, gaps)| {
        let a = scripted_trace(model, seed, &gaps);
        let b = scripted_trace(model, seed, &gaps);
        prop_assert_eq!(a, b);
        Ok(())
    });
    let pass = result.is_ok();
    let detail = pt_detail(&result);
    assert!(report("8a", "simnet determinism", pass, &detail), "{detail}");
}

#[test]
fn criterion_8b_flow_expiry_audit() {
    let mut runner = TestRunner::new(pt_config());
    let strategy = (
        proptest::sample::select(SIX_MODELS.to_vec()),
        any::<u64>(),
        proptest::collection::vec(1u32..40_000, 1..16),
    );
    let result = runner.run(&strategy, |(model, seed, gaps)| {
        let trace = scripted_trace(model, seed, &gaps);
        prop_assert!(audit_flow_discipline(&trace).is_ok());
        Ok(())
    });
    let pass = result.is_ok();
    let detail = pt_detail(&result);
    assert!(report("8b", "flow-expiry audit", pass, &detail), "{detail}");
}

prop_compose! {
    fn arb_lldp_spec()(
        chassis in proptest::collection::vec(any::<u8>(), 1..9),
        port in proptest::collection::vec(any::<u8>(), 1..9),
        ttl in any::<u16>(),
        name in proptest::option::of("[a-zA-Z0-9:|._-]{1,24}"),
        desc in proptest::option::of("[a-zA-Z0-9:|._-]{1,24}"),
        extras in proptest::collection::vec(
            (proptest::sample::select(vec![4u8, 7, 8, 127]), proptest::collection::vec(any::<u8>(), 0..8)),
            0..4
        ),
    ) -> LldpFrameSpec {
        LldpFrameSpec {
            chassis_id: chassis,
            port_id: port,
            ttl,
            system_name: name,
            system_description: desc,
            extra_tlvs: extras,
        }
    }
}

#[test]
fn criterion_8c_lldp_round_trip() {
    let mut runner = TestRunner::new(pt_config());
    let result = runner.run(&arb_lldp_spec(), |spec| {
        let raw = build_ethernet(
            MacAddr::LLDP_MULTICAST,
            MacAddr([2, 0, 0, 0, 0, 9]),
            ETHERTYPE_LLDP,
            &spec.encode(),
        );
        let frame = CapturedFrame::new(raw, Timestamp::from_micros(55)).unwrap();
        let obs = parse_lldp(&frame).unwrap();
        prop_assert_eq!(&obs.chassis_id, &spec.chassis_id);
        prop_assert_eq!(&obs.port_id, &spec.port_id);
        prop_assert_eq!(obs.ttl_s, spec.ttl);
        prop_assert_eq!(&obs.system_name, &spec.system_name);
        prop_assert_eq!(&obs.system_description, &spec.system_description);
        prop_assert_eq!(obs.unknown_tlv_count as usize, spec.extra_tlvs.len());
        Ok(())
    });
    let pass = result.is_ok();
    let detail = pt_detail(&result);
    assert!(report("8c", "LLDP serialize/parse round trip", pass, &detail), "{detail}");
}

#[test]
fn criterion_8d_interval_shift_invariance() {
    let mut runner = TestRunner::new(pt_config());
    let strategy = (
        proptest::collection::vec(1_000u64..2_000_000_000, 2..24),
        0u64..1_000_000_000_000,
    );
    let spec = LldpFrameSpec {
        chassis_id: vec![4, 1, 2, 3, 4, 5, 6],
        port_id: vec![7, b'p', b'1'],
        ttl: 120,
        system_name: None,
        system_description: None,
        extra_tlvs: vec![],
    };
    let result = runner.run(&strategy, |(gaps_us, shift_us)| {
        let observe = |offset_us: u64| {
            let mut at = offset_us;
            let mut obs = Vec::new();
            for gap in std::iter::once(&0u64).chain(gaps_us.iter()) {
                at += gap;
                let raw = build_ethernet(
                    MacAddr::LLDP_MULTICAST,
                    MacAddr([2, 0, 0, 0, 0, 9]),
                    ETHERTYPE_LLDP,
                    &spec.encode(),
                );
                let frame = CapturedFrame::new(raw, Timestamp::from_micros(at)).unwrap();
                obs.push(parse_lldp(&frame).unwrap());
            }
            obs
        };
        let base = observe(0);
        let shifted = observe(shift_us);
        let key = base[0].group_key();
        let a = estimate_interval(&base, &key).unwrap();
        let b = estimate_interval(&shifted, &key).unwrap();
        prop_assert_eq!(a, b);
        Ok(())
    });
    let pass = result.is_ok();
    let detail = pt_detail(&result);
    assert!(report("8d", "interval shift invariance", pass, &detail), "{detail}");
}

prop_compose! {
    fn arb_evidence()(
        technique in proptest::sample::select(vec![
            Technique::Lldp,
            Technique::Timeout,
            Technique::ProcessingTime,
            Technique::Arp,
        ]),
        confidence in proptest::sample::select(vec![0.5f64, 0.7, 0.9, 1.0]),
        members in proptest::collection::btree_set(0usize..6, 0..6),
    ) -> TechniqueEvidence {
        let ids = members
            .into_iter()
            .map(|i| ControllerId::new(SIX_MODELS[i]).unwrap());
        TechniqueEvidence::uniform(technique, confidence, ids)
    }
}

#[test]
fn criterion_8e_fusion_order_independence() {
    let db = shipped();
    let mut runner = TestRunner::new(pt_config());
    let strategy = proptest::collection::vec(arb_evidence(), 1..6)
        .prop_flat_map(|evidence| {
            let len = evidence.len();
            (Just(evidence), proptest::sample::Index::arbitrary(), Just(len))
        });
    let result = runner.run(&strategy, |(evidence, rotate_at, len)| {
        let mut permuted = evidence.clone();
        permuted.rotate_left(rotate_at.index(len));
        permuted.reverse();
        let a = combine(&evidence, db.signatures());
        let b = combine(&permuted, db.signatures());
        prop_assert_eq!(a.ranking, b.ranking);
        prop_assert_eq!(a.decided, b.decided);
        Ok(())
    });
    let pass = result.is_ok();
    let detail = pt_detail(&result);
    assert!(report("8e", "fusion order independence", pass, &detail), "{detail}");
}

/// Companion check to 8b with a script that exercises both expiry paths
/// deterministically on a tight link.
#[test]
fn criterion_8_supplement_expiry_paths_audited() {
    let config = ScenarioConfig::builtin("pox", NoiseProfile::Default).with_link(LinkModel {
        one_way_latency_ms: 1.0,
        jitter_ms: 0.0,
        loss_rate: 0.0,
    });
    let mut transport = sim(&config, 99);
    transport.net_mut().set_trace(true);
    let target = transport.default_target().plain();
    // Idle expiry path, then a hard expiry under keepalives.
    transport.send_probe(&target).unwrap();
    transport.wait(Duration::from_secs(11));
    transport.send_probe(&target).unwrap();
    for _ in 0..8 {
        transport.wait(Duration::from_secs(5));
        transport.send_probe(&target).unwrap();
    }
    let ok = audit_flow_discipline(transport.net().trace()).is_ok();
    assert!(report("8", "expiry-path audit supplement", ok, ""), "audit failed");
}
