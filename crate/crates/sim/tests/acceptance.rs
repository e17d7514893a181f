//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (run with `cargo test --test acceptance -- --nocapture` to see
//! them). Tolerances and runtime budgets are pinned here, not configurable.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use fedchain_core::attestation::{
    encrypt_quote, generate_quote, EnclaveRegistry, IasService, Quote, QuotingRegistry,
    VerdictReason,
};
use fedchain_core::crypto::{encrypt, sign, IasKeyPair, SigningKeyPair, SymmetricKey};
use fedchain_core::digest::sha256;
use fedchain_core::enclave::{
    enclave_measurement, make_report, AggregationEntry, AggregationInput, AttestationReport,
    Enclave, EnclaveIdentity,
};
use fedchain_core::params::{
    accuracy, canonical_serialize, local_train, loss_and_grad, Dataset, HyperParams, ModelSpec,
    ParameterVector,
};
use fedchain_sim::{run_simulation, timing_sweep, write_metrics, SimConfig};

fn pass(n: u32, name: &str) {
    println!("ACCEPTANCE {n} ({name}): PASS");
}

fn rng_f64(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    let unit = rng.next_u64() as f64 / u64::MAX as f64;
    lo + unit * (hi - lo)
}

fn config(v: serde_json::Value) -> SimConfig {
    SimConfig::from_json_str(&v.to_string()).expect("test config is valid")
}

fn baseline_config(rounds: u64, nodes: u32, faults: serde_json::Value) -> SimConfig {
    config(serde_json::json!({
        "clusters": 4,
        "nodes": nodes,
        "rounds": rounds,
        "model": {"kind": "logistic", "layer_dims": [2, 2]},
        "hyperparams": {"learning_rate": 0.5, "batch_size": 16, "local_epochs": 2, "seed": 42},
        "data": {"source": "synthetic", "per_cluster": 50, "dim": 2, "test_rows": 200},
        "faults": faults,
        "master_seed": 11
    }))
}

/// Criterion 1: across 1,000 random instances, the in-enclave aggregation
/// equals a naive coordinate-first re-evaluation of the weighted average
/// within 1e-12 per coordinate, in under five seconds.
#[test]
fn criterion_1_fedavg_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(0xFEDA);

    let att_key = SigningKeyPair::generate(&mut rng, "oracle-enclave");
    let mut enclave = Enclave::new(0, 1, att_key);
    let mut keys = Vec::new();
    for c in 0..5u32 {
        let mut key_bytes = [0u8; 32];
        rng.fill_bytes(&mut key_bytes);
        let key = SymmetricKey::new(key_bytes, c);
        enclave.install_cluster_key(c, key.clone());
        keys.push(key);
    }

    for instance in 0..1000u64 {
        let p = (rng.next_u64() % 5 + 1) as usize;
        let width = (rng.next_u64() % 5 + 1) as usize;
        let spec = ModelSpec::mlp(vec![1, width]).unwrap();
        let len = spec.param_count();
        assert!(len <= 10);

        let mut plain: Vec<Vec<f64>> = Vec::with_capacity(p);
        let mut sizes = Vec::with_capacity(p);
        let mut entries = Vec::with_capacity(p);
        for c in 0..p {
            let values: Vec<f64> = (0..len).map(|_| rng_f64(&mut rng, -10.0, 10.0)).collect();
            let model = ParameterVector::new(&spec, values.clone()).unwrap();
            let ct = encrypt(&canonical_serialize(&model), &keys[c], instance);
            let size = rng.next_u64() % 20 + 1;
            plain.push(values);
            sizes.push(size);
            entries.push(AggregationEntry {
                cluster_id: c as u32,
                ciphertext: ct,
                dataset_size: size,
            });
        }

        let outcome =
            enclave.aggregate(&AggregationInput { round: instance, entries }).unwrap();

        // Independent oracle: coordinate-first naive loop.
        let total: u64 = sizes.iter().sum();
        for k in 0..len {
            let mut expect = 0.0f64;
            for (values, &size) in plain.iter().zip(&sizes) {
                expect += (size as f64 / total as f64) * values[k];
            }
            let got = outcome.global_model.values()[k];
            assert!(
                (got - expect).abs() <= 1e-12,
                "instance {instance} coordinate {k}: {got} vs {expect}"
            );
        }
    }

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    pass(1, "fedavg oracle equivalence, 1000 instances");
}

/// Criterion 2: ten fault-free rounds at p=4, n=5 leave all five chains
/// byte-identical, with a unanimous tally every round.
#[test]
fn criterion_2_cross_node_agreement() {
    let start = Instant::now();
    let out = run_simulation(&baseline_config(10, 5, serde_json::json!([]))).unwrap();

    let dump0 = out.chains[0].dump();
    for (j, chain) in out.chains.iter().enumerate() {
        assert_eq!(chain.dump(), dump0, "node {j} chain dump differs");
    }
    assert_eq!(out.metrics.len(), 10);
    for m in &out.metrics {
        assert_eq!(m.consensus.decision, "committed", "round {}", m.round);
        assert_eq!(m.consensus.tally.len(), 1, "round {}", m.round);
        let count = *m.consensus.tally.values().next().unwrap();
        assert_eq!(count, 5, "round {} tally {:?}", m.round, m.consensus.tally);
    }

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    pass(2, "cross-node agreement, 10 unanimous rounds, identical dumps");
}

/// Criterion 3: two corrupted aggregators out of five cannot move a commit
/// (the honest hash wins every round, bit-identical to the fault-free run),
/// and two out of four force a tie that aborts every round.
#[test]
fn criterion_3_fault_tolerance_majority() {
    let start = Instant::now();

    let honest = run_simulation(&baseline_config(5, 5, serde_json::json!([]))).unwrap();
    let faulty = run_simulation(&baseline_config(
        5,
        5,
        serde_json::json!([
            {"kind": "corrupt-aggregator", "node": 2, "rounds": "all"},
            {"kind": "corrupt-aggregator", "node": 4, "rounds": "all"}
        ]),
    ))
    .unwrap();

    assert_eq!(faulty.corrupted_node_count, 2);
    assert_eq!(honest.committed_hashes, faulty.committed_hashes);
    assert!(faulty.committed_hashes.iter().all(|h| h.is_some()));
    for m in &faulty.metrics {
        assert_eq!(m.consensus.decision, "committed", "round {}", m.round);
        let counts: Vec<u32> = m.consensus.tally.values().copied().collect();
        assert!(counts.contains(&3), "round {} tally {:?}", m.round, m.consensus.tally);
    }
    // Corrupted nodes' chains still adopt every committed block.
    for (j, chain) in faulty.chains.iter().enumerate() {
        assert_eq!(chain.height(), 5, "node {j}");
        assert!(chain.verify().is_ok(), "node {j}");
    }
    let honest_bits: Vec<u64> =
        honest.final_model.values().iter().map(|v| v.to_bits()).collect();
    let faulty_bits: Vec<u64> =
        faulty.final_model.values().iter().map(|v| v.to_bits()).collect();
    assert_eq!(honest_bits, faulty_bits, "committed models must match bitwise");

    let tied = run_simulation(&baseline_config(
        5,
        4,
        serde_json::json!([
            {"kind": "corrupt-aggregator", "node": 1, "rounds": "all"},
            {"kind": "corrupt-aggregator", "node": 3, "rounds": "all"}
        ]),
    ))
    .unwrap();
    assert!(tied.committed_hashes.iter().all(|h| h.is_none()));
    for m in &tied.metrics {
        assert_eq!(m.consensus.decision, "aborted", "round {}", m.round);
        assert_eq!(m.consensus.abort_reason.as_deref(), Some("no-majority"));
        assert_eq!(m.chain_height, 0);
    }

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    pass(3, "majority rule: 2/5 corrupt commits honest hash, 2/4 ties abort");
}

struct EvidenceFixture {
    ias: IasService,
    att_keys: Vec<SigningKeyPair>,
    quote_keys: Vec<SigningKeyPair>,
    rogue: SigningKeyPair,
    model: ParameterVector,
    rng: ChaCha20Rng,
}

impl EvidenceFixture {
    fn new() -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(0xA77E57);
        let ias_keys = IasKeyPair::generate(&mut rng);
        let mut enclave_registry = EnclaveRegistry::new(enclave_measurement(), 1);
        let mut quoting_registry = QuotingRegistry::new();
        let mut att_keys = Vec::new();
        let mut quote_keys = Vec::new();
        for node in 0..3u32 {
            let ak = SigningKeyPair::generate(&mut rng, &format!("enclave-{node}"));
            let qk = SigningKeyPair::generate(&mut rng, &format!("quoting-{node}"));
            enclave_registry.register(node, ak.public_bytes());
            quoting_registry.register(node, qk.public_bytes());
            att_keys.push(ak);
            quote_keys.push(qk);
        }
        let rogue = SigningKeyPair::generate(&mut rng, "rogue");
        let spec = ModelSpec::logistic(2, 2).unwrap();
        let model = ParameterVector::new(&spec, vec![0.25, -0.5, 0.75, -1.0, 0.0, 1.0]).unwrap();
        Self {
            ias: IasService::new(ias_keys, enclave_registry, quoting_registry),
            att_keys,
            quote_keys,
            rogue,
            model,
            rng,
        }
    }

    fn identity(&self, node: u32, svn: u32) -> EnclaveIdentity {
        EnclaveIdentity { measurement: enclave_measurement(), svn, node_id: node }
    }

    fn honest_report(&self, node: u32) -> AttestationReport {
        make_report(&self.model, 1, &self.identity(node, 1), &self.att_keys[node as usize])
    }

    fn verify_quote(&mut self, quote: &Quote) -> Option<VerdictReason> {
        let eq = encrypt_quote(quote, &self.ias.public_key(), &mut self.rng);
        let verdict = self.ias.verify(&eq);
        assert!(!verdict.valid || verdict.reason.is_none());
        verdict.reason
    }
}

/// Criterion 4: every evidence-chain mutation is rejected with exactly its
/// designated reason; none ever yields a valid verdict.
#[test]
fn criterion_4_attestation_soundness() {
    let mut f = EvidenceFixture::new();

    // Honest pipeline sanity: valid end to end.
    let honest = generate_quote(&f.honest_report(0), &f.quote_keys[0], 0, f.ias.enclave_registry())
        .unwrap();
    assert_eq!(f.verify_quote(&honest), None);

    let mut rejected = 0u32;

    // Flip the report's model hash (quote signed over the tampered bytes).
    let mut report = f.honest_report(0);
    let mut h = *report.model_hash.as_bytes();
    h[0] ^= 0x01;
    report.model_hash = fedchain_core::digest::Hash32::from_bytes(h);
    let quote = Quote {
        signature: sign(&report.to_bytes(), &f.quote_keys[0]).to_vec(),
        report,
        quoting_node: 0,
    };
    assert_eq!(f.verify_quote(&quote), Some(VerdictReason::BadReportSig));
    rejected += 1;

    // Forge the report key: signed by an unregistered key.
    let forged = make_report(&f.model, 1, &f.identity(1, 1), &f.rogue);
    let quote = Quote {
        signature: sign(&forged.to_bytes(), &f.quote_keys[1]).to_vec(),
        report: forged,
        quoting_node: 1,
    };
    assert_eq!(f.verify_quote(&quote), Some(VerdictReason::BadReportSig));
    rejected += 1;

    // Forge the quote key.
    let report = f.honest_report(2);
    let quote = Quote {
        signature: sign(&report.to_bytes(), &f.rogue).to_vec(),
        report,
        quoting_node: 2,
    };
    assert_eq!(f.verify_quote(&quote), Some(VerdictReason::BadQuoteSig));
    rejected += 1;

    // Truncate the encrypted quote.
    let quote =
        generate_quote(&f.honest_report(0), &f.quote_keys[0], 0, f.ias.enclave_registry()).unwrap();
    let mut eq = encrypt_quote(&quote, &f.ias.public_key(), &mut f.rng);
    eq.blob.truncate(eq.blob.len() - 5);
    let verdict = f.ias.verify(&eq);
    assert!(!verdict.valid);
    assert_eq!(verdict.reason, Some(VerdictReason::Undecryptable));
    rejected += 1;

    // Stale security version.
    let stale = make_report(&f.model, 1, &f.identity(1, 0), &f.att_keys[1]);
    let quote =
        generate_quote(&stale, &f.quote_keys[1], 1, f.ias.enclave_registry()).unwrap();
    assert_eq!(f.verify_quote(&quote), Some(VerdictReason::StaleSvn));
    rejected += 1;

    // Foreign measurement.
    let foreign_identity =
        EnclaveIdentity { measurement: sha256(b"foreign build"), svn: 1, node_id: 2 };
    let foreign = make_report(&f.model, 1, &foreign_identity, &f.att_keys[2]);
    let quote =
        generate_quote(&foreign, &f.quote_keys[2], 2, f.ias.enclave_registry()).unwrap();
    assert_eq!(f.verify_quote(&quote), Some(VerdictReason::UnknownEnclave));
    rejected += 1;

    assert_eq!(rejected, 6, "all mutation cases rejected");
    pass(4, "attestation soundness: 6/6 mutations rejected with exact reasons");
}

/// Criterion 5: twenty rounds of federated training on seeded synthetic
/// blobs reach at least 95% test accuracy and land within two points of a
/// centralized baseline trained with identical hyperparameters.
#[test]
fn criterion_5_end_to_end_learning() {
    let start = Instant::now();
    let cfg = baseline_config(20, 5, serde_json::json!([]));
    let out = run_simulation(&cfg).unwrap();

    let fl_acc = out.metrics.last().unwrap().global_test_accuracy;
    assert!(fl_acc >= 0.95, "federated accuracy {fl_acc}");

    // Centralized oracle: pool all training data, same learning rate,
    // batch size, and total epoch count (rounds x local epochs).
    let spec = ModelSpec::logistic(2, 2).unwrap();
    let pooled = Dataset::pooled(&out.train_datasets).unwrap();
    let hp = HyperParams::new(0.5, 16, 20 * 2, 42).unwrap();
    let trained = local_train(&out.initial_model, &spec, &pooled, &hp).unwrap();
    let central_acc = accuracy(&trained, &spec, &out.test_set).unwrap();

    let gap = (fl_acc - central_acc).abs() * 100.0;
    assert!(
        gap <= 2.0,
        "federated {fl_acc} vs centralized {central_acc}: gap {gap:.2} points"
    );

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    pass(5, "end-to-end learning beats 95% and tracks the centralized oracle");
}

/// Criterion 6: 50 random single-bit mutations of a 10-block chain dump are
/// all detected by the verify-chain command, each named with the mutated
/// height, via a nonzero exit.
#[test]
fn criterion_6_tamper_evidence() {
    let out = run_simulation(&baseline_config(9, 5, serde_json::json!([]))).unwrap();
    assert_eq!(out.chains[0].blocks().len(), 10);
    let dump = out.chains[0].dump();

    // Block boundaries: (start of length prefix, end, height).
    let mut spans = Vec::new();
    let mut pos = 16usize;
    for height in 0..10u64 {
        let len =
            u64::from_le_bytes(dump[pos..pos + 8].try_into().unwrap()) as usize;
        spans.push((pos, pos + 8 + len, height));
        pos += 8 + len;
    }
    assert_eq!(pos, dump.len());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mutated.bin");
    let exe = env!("CARGO_BIN_EXE_fedchain");
    let mut rng = ChaCha20Rng::seed_from_u64(0x7A3B);
    let mut detected = 0u32;

    for case in 0..50 {
        let offset = 16 + (rng.next_u64() as usize) % (dump.len() - 16);
        let bit = (rng.next_u64() % 8) as u8;
        let height = spans
            .iter()
            .find(|(s, e, _)| *s <= offset && offset < *e)
            .map(|(_, _, h)| *h)
            .expect("offset maps to a block");

        let mut mutated = dump.clone();
        mutated[offset] ^= 1 << bit;
        std::fs::write(&path, &mutated).unwrap();

        let output = std::process::Command::new(exe)
            .arg("verify-chain")
            .arg(&path)
            .output()
            .unwrap();
        assert!(
            !output.status.success(),
            "case {case}: mutation at offset {offset} bit {bit} went undetected"
        );
        let stderr = String::from_utf8_lossy(&output.stderr);
        assert!(
            stderr.contains(&format!("height {height}")) || stderr.contains(&format!("block {height}")),
            "case {case}: expected height {height} in: {stderr}"
        );
        detected += 1;
    }

    assert_eq!(detected, 50, "50/50 detection");
    pass(6, "tamper evidence: 50/50 single-bit mutations detected and located");
}

/// Criterion 7: over 200 random model/batch pairs, analytic gradients match
/// central finite differences to 1e-4 relative error per coordinate.
#[test]
fn criterion_7_gradient_correctness() {
    const STEP: f64 = 1e-5;
    let mut rng = ChaCha20Rng::seed_from_u64(0x6AAD);
    let mut checked = 0u32;

    while checked < 200 {
        let logistic = rng.next_u64() % 2 == 0;
        let d = (rng.next_u64() % 6 + 1) as usize;
        let c = (rng.next_u64() % 3 + 2) as usize;
        let spec = if logistic {
            ModelSpec::logistic(d, c).unwrap()
        } else {
            ModelSpec::mlp(vec![d, (rng.next_u64() % 4 + 1) as usize, c]).unwrap()
        };
        let n = (rng.next_u64() % 8 + 1) as usize;
        let values: Vec<f64> =
            (0..spec.param_count()).map(|_| rng_f64(&mut rng, -1.0, 1.0)).collect();
        let features: Vec<f64> = (0..n * d).map(|_| rng_f64(&mut rng, -1.0, 1.0)).collect();
        let labels: Vec<u32> = (0..n).map(|_| (rng.next_u64() % c as u64) as u32).collect();
        let batch = Dataset::new(features, labels, d, 0).unwrap();

        // Finite differences cannot see across a ReLU corner; skip cases
        // with a hidden pre-activation within an order of the step.
        if !logistic {
            let dims = spec.layer_dims();
            let (d0, h) = (dims[0], dims[1]);
            let mut too_close = false;
            for s in 0..batch.len() {
                for j in 0..h {
                    let mut z = values[d0 * h + j];
                    for (i, &xi) in batch.row(s).iter().enumerate() {
                        z += xi * values[i * h + j];
                    }
                    too_close |= z.abs() <= 10.0 * STEP;
                }
            }
            if too_close {
                continue;
            }
        }

        let model = ParameterVector::new(&spec, values.clone()).unwrap();
        let (_, analytic) = loss_and_grad(&model, &spec, &batch).unwrap();
        for k in 0..values.len() {
            let mut plus = values.clone();
            plus[k] += STEP;
            let mut minus = values.clone();
            minus[k] -= STEP;
            let lp = loss_and_grad(&ParameterVector::new(&spec, plus).unwrap(), &spec, &batch)
                .unwrap()
                .0;
            let lm = loss_and_grad(&ParameterVector::new(&spec, minus).unwrap(), &spec, &batch)
                .unwrap()
                .0;
            let numeric = (lp - lm) / (2.0 * STEP);
            let a = analytic.values()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            assert!(rel <= 1e-4, "case {checked} coordinate {k}: {a} vs {numeric}");
        }
        checked += 1;
    }

    pass(7, "gradient correctness: 200/200 pairs within 1e-4 of finite differences");
}

/// Criterion 8: mean aggregation time is non-decreasing across 2 to 40
/// simulated edge devices, with at most one inversion tolerated for noise.
/// Absolute values are reported, not asserted.
#[test]
fn criterion_8_scaling_trend() {
    let spec = ModelSpec::mlp(vec![64, 128, 10]).unwrap();
    let rows = timing_sweep(&[2, 10, 20, 30, 40], &spec, 0x5CA1E, 7).unwrap();

    println!("devices  mean_aggregation_us");
    for row in &rows {
        println!("{:>7}  {:>19.1}", row.devices, row.mean_duration_micros);
    }
    assert!(rows.iter().all(|r| r.mean_duration_micros > 0.0));
    let inversions = rows
        .windows(2)
        .filter(|w| w[1].mean_duration_micros < w[0].mean_duration_micros)
        .count();
    assert!(inversions <= 1, "{inversions} inversions in {rows:?}");

    pass(8, "scaling trend: aggregation time non-decreasing in device count");
}

/// Criterion 9: repeated runs with equal seeds produce byte-identical
/// metrics streams and chain dumps, for both clean and faulty scenarios.
#[test]
fn criterion_9_whole_run_determinism() {
    let scenarios = [
        baseline_config(10, 5, serde_json::json!([])),
        baseline_config(
            5,
            5,
            serde_json::json!([
                {"kind": "corrupt-aggregator", "node": 2, "rounds": "all"},
                {"kind": "silent", "node": 1, "rounds": [2]}
            ]),
        ),
    ];

    for (i, cfg) in scenarios.iter().enumerate() {
        let a = run_simulation(cfg).unwrap();
        let b = run_simulation(cfg).unwrap();

        let mut metrics_a = Vec::new();
        write_metrics(&mut metrics_a, &a.metrics).unwrap();
        let mut metrics_b = Vec::new();
        write_metrics(&mut metrics_b, &b.metrics).unwrap();
        assert_eq!(metrics_a, metrics_b, "scenario {i}: metrics streams differ");

        let dumps_a: Vec<Vec<u8>> = a.chains.iter().map(|c| c.dump()).collect();
        let dumps_b: Vec<Vec<u8>> = b.chains.iter().map(|c| c.dump()).collect();
        assert_eq!(dumps_a, dumps_b, "scenario {i}: chain dumps differ");
    }

    pass(9, "whole-run determinism: metrics and dumps byte-identical");
}

/// The tally map keyed by hash hex is the shape downstream tooling parses;
/// pin it once here so the schema does not drift silently.
#[test]
fn metrics_schema_spot_check() {
    let out = run_simulation(&baseline_config(1, 3, serde_json::json!([]))).unwrap();
    let mut buf = Vec::new();
    write_metrics(&mut buf, &out.metrics).unwrap();
    let line = String::from_utf8(buf).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["round"], 1);
    let tally: BTreeMap<String, u32> =
        serde_json::from_value(v["consensus"]["tally"].clone()).unwrap();
    assert_eq!(tally.values().sum::<u32>(), 3);
}
