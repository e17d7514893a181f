//! Seeded initialization, cross-entropy loss with analytic gradients, and
//! minibatch gradient-descent local training.
//!
//! Gradient accumulation walks samples in batch order and coordinates in
//! layer order, single-threaded, so the same inputs always produce the same
//! bits. Cross-node hash agreement depends on that.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{Dataset, HyperParams, ModelSpec, ParameterVector, ParamsError};

const INIT_WEIGHT_RANGE: f64 = 0.05;

/// Draws weights uniformly from [-0.05, 0.05] with a seeded generator;
/// biases start at exactly zero.
pub fn init_model(spec: &ModelSpec, seed: u64) -> ParameterVector {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(spec.param_count());
    for w in spec.layer_dims().windows(2) {
        let (d_in, d_out) = (w[0], w[1]);
        for _ in 0..d_in * d_out {
            values.push(rng.gen_range(-INIT_WEIGHT_RANGE..=INIT_WEIGHT_RANGE));
        }
        for _ in 0..d_out {
            values.push(0.0);
        }
    }
    ParameterVector::new(spec, values).expect("init draws are finite and counted")
}

/// Per-layer views into the flat parameter vector.
struct LayerView {
    w_start: usize,
    b_start: usize,
    d_in: usize,
    d_out: usize,
}

fn layer_views(spec: &ModelSpec) -> Vec<LayerView> {
    let mut views = Vec::new();
    let mut offset = 0;
    for w in spec.layer_dims().windows(2) {
        let (d_in, d_out) = (w[0], w[1]);
        views.push(LayerView { w_start: offset, b_start: offset + d_in * d_out, d_in, d_out });
        offset += d_in * d_out + d_out;
    }
    views
}

/// z = W^T x + b for one layer; W is row-major with rows indexed by input.
fn affine(values: &[f64], view: &LayerView, x: &[f64], out: &mut [f64]) {
    for j in 0..view.d_out {
        out[j] = values[view.b_start + j];
    }
    for i in 0..view.d_in {
        let xi = x[i];
        let row = &values[view.w_start + i * view.d_out..view.w_start + (i + 1) * view.d_out];
        for j in 0..view.d_out {
            out[j] += xi * row[j];
        }
    }
}

/// Shifted softmax probabilities and the log-sum-exp of the logits.
fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= sum;
    }
    (probs, max + sum.ln())
}

fn check_batch(spec: &ModelSpec, model: &ParameterVector, batch: &Dataset) -> Result<(), ParamsError> {
    if model.spec_digest() != spec.digest() {
        return Err(ParamsError::SpecDigestMismatch);
    }
    if model.len() != spec.param_count() {
        return Err(ParamsError::LengthMismatch { expected: spec.param_count(), got: model.len() });
    }
    if batch.dim() != spec.input_dim() {
        return Err(ParamsError::DimensionMismatch(format!(
            "batch dim {} vs model input dim {}",
            batch.dim(),
            spec.input_dim()
        )));
    }
    if let Some(&bad) = batch.labels().iter().find(|&&l| l as usize >= spec.class_count()) {
        return Err(ParamsError::InvalidDataset(format!(
            "label {bad} out of range for {} classes",
            spec.class_count()
        )));
    }
    Ok(())
}

/// Mean cross-entropy over the batch and its analytic gradient.
pub fn loss_and_grad(
    model: &ParameterVector,
    spec: &ModelSpec,
    batch: &Dataset,
) -> Result<(f64, ParameterVector), ParamsError> {
    check_batch(spec, model, batch)?;
    let views = layer_views(spec);
    let values = model.values();
    let mut grad = vec![0.0f64; values.len()];
    let mut loss_sum = 0.0f64;

    for s in 0..batch.len() {
        let x = batch.row(s);
        let y = batch.label(s) as usize;

        // Forward pass, keeping each layer's input and pre-activation.
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(views.len());
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(views.len());
        let mut act = x.to_vec();
        for (l, view) in views.iter().enumerate() {
            inputs.push(act.clone());
            let mut z = vec![0.0f64; view.d_out];
            affine(values, view, &act, &mut z);
            if l + 1 < views.len() {
                act = z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
            } else {
                act = z.clone();
            }
            pre.push(z);
        }

        let logits = pre.last().expect("at least one layer");
        let (probs, lse) = softmax(logits);
        loss_sum += lse - logits[y];

        // Backward pass: delta starts as softmax - onehot.
        let mut delta: Vec<f64> = probs;
        delta[y] -= 1.0;
        for (l, view) in views.iter().enumerate().rev() {
            let a_in = &inputs[l];
            for i in 0..view.d_in {
                let ai = a_in[i];
                for j in 0..view.d_out {
                    grad[view.w_start + i * view.d_out + j] += ai * delta[j];
                }
            }
            for j in 0..view.d_out {
                grad[view.b_start + j] += delta[j];
            }
            if l > 0 {
                let z_prev = &pre[l - 1];
                let mut next = vec![0.0f64; view.d_in];
                for i in 0..view.d_in {
                    if z_prev[i] > 0.0 {
                        let row =
                            &values[view.w_start + i * view.d_out..view.w_start + (i + 1) * view.d_out];
                        let mut acc = 0.0;
                        for j in 0..view.d_out {
                            acc += row[j] * delta[j];
                        }
                        next[i] = acc;
                    }
                }
                delta = next;
            }
        }
    }

    let inv_n = 1.0 / batch.len() as f64;
    for g in grad.iter_mut() {
        *g *= inv_n;
    }
    let grad = ParameterVector::from_parts(model.spec_digest(), grad)?;
    Ok((loss_sum * inv_n, grad))
}

/// Runs `local_epochs` of minibatch gradient descent from `global`.
///
/// Per epoch a permutation drawn from `hp.seed` decides batch membership;
/// within a batch samples are visited in ascending dataset order. That makes
/// one full-batch step bit-identical to `w - lr * grad(w)` over the dataset
/// in its stored order.
pub fn local_train(
    global: &ParameterVector,
    spec: &ModelSpec,
    data: &Dataset,
    hp: &HyperParams,
) -> Result<ParameterVector, ParamsError> {
    check_batch(spec, global, data)?;
    let n = data.len();
    let batch_size = hp.batch_size.min(n);
    let mut rng = ChaCha20Rng::seed_from_u64(hp.seed);
    let mut weights = global.values().to_vec();
    let mut step = 0usize;

    for _ in 0..hp.local_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        // Fisher-Yates from the epoch stream.
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(batch_size) {
            let mut idx = chunk.to_vec();
            idx.sort_unstable();
            let batch = data.subset(&idx)?;
            let current = ParameterVector::from_parts(global.spec_digest(), weights.clone())
                .map_err(|_| ParamsError::Diverged { step })?;
            let (_, grad) = match loss_and_grad(&current, spec, &batch) {
                Ok(v) => v,
                Err(ParamsError::NonFiniteValue) => return Err(ParamsError::Diverged { step }),
                Err(e) => return Err(e),
            };
            for (w, g) in weights.iter_mut().zip(grad.values()) {
                *w -= hp.learning_rate * g;
            }
            if weights.iter().any(|w| !w.is_finite()) {
                return Err(ParamsError::Diverged { step });
            }
            step += 1;
        }
    }

    ParameterVector::from_parts(global.spec_digest(), weights)
}

/// Predicted class per row (argmax of the logits; ties take the lower index).
fn predict(model: &ParameterVector, spec: &ModelSpec, x: &[f64]) -> usize {
    let views = layer_views(spec);
    let values = model.values();
    let mut act = x.to_vec();
    for (l, view) in views.iter().enumerate() {
        let mut z = vec![0.0f64; view.d_out];
        affine(values, view, &act, &mut z);
        if l + 1 < views.len() {
            act = z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        } else {
            act = z;
        }
    }
    let mut best = 0;
    for (j, &v) in act.iter().enumerate() {
        if v > act[best] {
            best = j;
        }
    }
    best
}

/// Fraction of rows whose argmax prediction matches the label.
pub fn accuracy(model: &ParameterVector, spec: &ModelSpec, data: &Dataset) -> Result<f64, ParamsError> {
    check_batch(spec, model, data)?;
    let mut hits = 0usize;
    for i in 0..data.len() {
        if predict(model, spec, data.row(i)) == data.label(i) as usize {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Mean loss and accuracy in one pass over `data`.
pub fn evaluate(
    model: &ParameterVector,
    spec: &ModelSpec,
    data: &Dataset,
) -> Result<(f64, f64), ParamsError> {
    let (loss, _) = loss_and_grad(model, spec, data)?;
    let acc = accuracy(model, spec, data)?;
    Ok((loss, acc))
}
