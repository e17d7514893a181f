//! Independent oracles for the numeric core: central finite differences
//! against the analytic gradient, and a naive re-evaluation of the weighted
//! model average. Both oracles live here, outside the implementation paths
//! they check.

use fedchain_core::enclave::fedavg;
use fedchain_core::params::{loss_and_grad, Dataset, ModelKind, ModelSpec, ParameterVector};
use proptest::prelude::*;

const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

/// Loss at a displaced parameter vector.
fn loss_at(values: &[f64], spec: &ModelSpec, batch: &Dataset) -> f64 {
    let model = ParameterVector::new(spec, values.to_vec()).unwrap();
    loss_and_grad(&model, spec, batch).unwrap().0
}

/// Central finite differences, one coordinate at a time.
fn numeric_grad(values: &[f64], spec: &ModelSpec, batch: &Dataset) -> Vec<f64> {
    (0..values.len())
        .map(|k| {
            let mut plus = values.to_vec();
            plus[k] += FD_STEP;
            let mut minus = values.to_vec();
            minus[k] -= FD_STEP;
            (loss_at(&plus, spec, batch) - loss_at(&minus, spec, batch)) / (2.0 * FD_STEP)
        })
        .collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn assert_grad_matches(values: &[f64], spec: &ModelSpec, batch: &Dataset) {
    let model = ParameterVector::new(spec, values.to_vec()).unwrap();
    let (_, analytic) = loss_and_grad(&model, spec, batch).unwrap();
    let numeric = numeric_grad(values, spec, batch);
    for (k, (a, n)) in analytic.values().iter().zip(&numeric).enumerate() {
        assert!(
            rel_err(*a, *n) <= GRAD_TOL,
            "coordinate {k}: analytic {a} vs numeric {n}"
        );
    }
}

/// Hidden-layer pre-activations of a one-hidden-layer network, recomputed
/// here from the flat layout so kink-adjacent cases can be skipped: finite
/// differences are meaningless within a step of a ReLU corner.
fn min_abs_hidden_preactivation(values: &[f64], spec: &ModelSpec, batch: &Dataset) -> f64 {
    let dims = spec.layer_dims();
    if dims.len() != 3 {
        return f64::INFINITY;
    }
    let (d, h) = (dims[0], dims[1]);
    let mut min_abs = f64::INFINITY;
    for s in 0..batch.len() {
        let x = batch.row(s);
        for j in 0..h {
            let mut z = values[d * h + j];
            for (i, &xi) in x.iter().enumerate() {
                z += xi * values[i * h + j];
            }
            min_abs = min_abs.min(z.abs());
        }
    }
    min_abs
}

#[derive(Debug, Clone)]
struct GradCase {
    spec: ModelSpec,
    values: Vec<f64>,
    features: Vec<f64>,
    labels: Vec<u32>,
    dim: usize,
}

fn grad_case_strategy() -> impl Strategy<Value = GradCase> {
    let arch = prop_oneof![
        (1usize..=6, 2usize..=4).prop_map(|(d, c)| (ModelKind::Logistic, vec![d, c])),
        (1usize..=4, 1usize..=4, 2usize..=3).prop_map(|(d, h, c)| (ModelKind::Mlp, vec![d, h, c])),
    ];
    (arch, 1usize..=8).prop_flat_map(|((kind, dims), n)| {
        let spec = ModelSpec::new(kind, dims.clone()).unwrap();
        let d = dims[0];
        let classes = *dims.last().unwrap() as u32;
        let params = spec.param_count();
        (
            Just(spec),
            prop::collection::vec(-1.0f64..1.0, params),
            prop::collection::vec(-1.0f64..1.0, n * d),
            prop::collection::vec(0u32..classes, n),
        )
            .prop_map(move |(spec, values, features, labels)| GradCase {
                spec,
                values,
                features,
                labels,
                dim: d,
            })
    })
}

proptest! {
    #[test]
    fn analytic_gradient_matches_finite_differences(case in grad_case_strategy()) {
        let batch = Dataset::new(case.features, case.labels, case.dim, 0).unwrap();
        prop_assume!(min_abs_hidden_preactivation(&case.values, &case.spec, &batch) > 10.0 * FD_STEP);
        assert_grad_matches(&case.values, &case.spec, &batch);
    }

    /// Weighted average recomputed coordinate-first with explicit division,
    /// a separate path from the vector-accumulating implementation.
    #[test]
    fn fedavg_matches_naive_reevaluation(
        models in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 10), 1..=5),
        raw_sizes in prop::collection::vec(1u64..=20, 5),
    ) {
        let count = models.len();
        let sizes = &raw_sizes[..count];
        let len = models[0].len();
        let spec = ModelSpec::mlp(vec![1, 2, 2]).unwrap();
        assert_eq!(spec.param_count(), 10, "fixture shape");
        let pvs: Vec<ParameterVector> =
            models.iter().map(|v| ParameterVector::new(&spec, v.clone()).unwrap()).collect();
        let out = fedavg(&pvs, sizes).unwrap();

        let total: u64 = sizes.iter().sum();
        for k in 0..len {
            let mut acc = 0.0f64;
            for (m, &s) in models.iter().zip(sizes) {
                acc += (s as f64 / total as f64) * m[k];
            }
            assert!((out.values()[k] - acc).abs() <= 1e-12, "coordinate {k}");
        }
    }
}

/// Serialization round-trip over arbitrary finite values.
proptest! {
    #[test]
    fn canonical_round_trip_preserves_bits(
        width in 1usize..32,
        pool in prop::collection::vec(-1.0e12f64..1.0e12, 64),
    ) {
        use fedchain_core::params::{canonical_deserialize, canonical_serialize};
        // A single linear layer [1, width] holds exactly 2 * width values.
        let spec = ModelSpec::mlp(vec![1, width]).unwrap();
        let values: Vec<f64> = pool.into_iter().take(spec.param_count()).collect();
        let model = ParameterVector::new(&spec, values).unwrap();
        let back = canonical_deserialize(&canonical_serialize(&model)).unwrap();
        let got: Vec<u64> = back.values().iter().map(|v| v.to_bits()).collect();
        let want: Vec<u64> = model.values().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(got, want);
        prop_assert_eq!(back.spec_digest(), model.spec_digest());
    }
}

/// Deterministic sweep in the spirit of the property above, covering both
/// architectures with a frozen seed so reruns are stable.
#[test]
fn gradient_check_seeded_sweep() {
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    let mut rng = ChaCha20Rng::seed_from_u64(20_240_501);
    for case in 0..50 {
        let logistic = case % 2 == 0;
        let d = rng.gen_range(1..=6);
        let c = rng.gen_range(2..=4);
        let spec = if logistic {
            ModelSpec::logistic(d, c).unwrap()
        } else {
            ModelSpec::mlp(vec![d, rng.gen_range(1..=4), c]).unwrap()
        };
        let n = rng.gen_range(1..=8);
        let values: Vec<f64> = (0..spec.param_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let features: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels: Vec<u32> = (0..n).map(|_| rng.gen_range(0..c as u32)).collect();
        let batch = Dataset::new(features, labels, d, 0).unwrap();
        if min_abs_hidden_preactivation(&values, &spec, &batch) <= 10.0 * FD_STEP {
            continue;
        }
        assert_grad_matches(&values, &spec, &batch);
    }
}
