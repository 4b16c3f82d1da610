//! Central finite differences as an independent oracle for analytic gradients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sugd_core::autograd::{Tape, Tensor, Var};
use sugd_core::model::{Example, ModelState};

/// Embeddings start at std 0.02, so layer-norm inputs are small and curved;
/// 1e-5 keeps truncation error well below the tolerance.
pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// `‖a − n‖ / max(‖a‖ + ‖n‖, 1e-8)`.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / (na + nn).max(1e-8)
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    Tensor::randn(shape, std, rng)
}

/// Builds `Σ w ⊙ op(inputs)` with fixed random `w`, so every output element
/// contributes to the scalar being differentiated.
fn scalarize(tape: &mut Tape<'_>, out: Var, weights: &Tensor) -> Var {
    let w = tape.leaf(weights.clone(), false);
    let prod = tape.mul(out, w).expect("weights match output shape");
    tape.sum(prod)
}

/// Largest relative error over all inputs of `op` between backward and
/// central differences.
pub fn check_op<F>(rng: &mut ChaCha8Rng, inputs: &[Tensor], op: F) -> f64
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Var,
{
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = op(&mut tape, &vars);
        tape.value(out).shape().to_vec()
    };
    let weights = randn(rng, &out_shape, 1.0);
    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = op(&mut tape, &vars);
        let loss = scalarize(&mut tape, out, &weights);
        tape.value(loss).item()
    };
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = op(&mut tape, &vars);
        let loss = scalarize(&mut tape, out, &weights);
        let grads = tape.backward(loss).expect("scalar loss");
        vars.iter()
            .map(|&v| grads.wrt(v).expect("input requires grad").data().to_vec())
            .collect()
    };
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            *slot = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
        }
        worst = worst.max(rel_err(&analytic[i], &numeric));
    }
    worst
}

fn batch_loss(state: &ModelState, batch: &[Example], weights: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let vars = state.bind(&mut tape, false);
    let terms: Vec<(Var, f64)> = batch
        .iter()
        .zip(weights)
        .map(|(ex, &w)| {
            (
                state
                    .example_loss(&mut tape, &vars, ex)
                    .expect("valid example"),
                w,
            )
        })
        .collect();
    let loss = tape.combine(&terms).expect("scalar terms");
    tape.value(loss).item()
}

/// Relative error of the gradient of `Σ wᵢ·loss(exampleᵢ)` for every
/// trainable tensor, probing up to `probes` random coordinates per tensor.
pub fn check_model(
    state: &ModelState,
    batch: &[Example],
    weights: &[f64],
    probes: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let analytic = {
        let mut tape = Tape::new();
        let vars = state.bind(&mut tape, true);
        let terms: Vec<(Var, f64)> = batch
            .iter()
            .zip(weights)
            .map(|(ex, &w)| (state.example_loss(&mut tape, &vars, ex).unwrap(), w))
            .collect();
        let loss = tape.combine(&terms).unwrap();
        tape.backward(loss).unwrap().into_param_grads()
    };
    let mut worst: f64 = 0.0;
    for (id, grad) in analytic {
        let name = state.params()[id].name.clone();
        let coords: Vec<usize> = if grad.len() <= probes {
            (0..grad.len()).collect()
        } else {
            (0..probes)
                .map(|_| rng.random_range(0..grad.len()))
                .collect()
        };
        let mut a = Vec::with_capacity(coords.len());
        let mut n = Vec::with_capacity(coords.len());
        for &c in &coords {
            let mut plus = state.clone();
            plus.param_data_mut(&name).unwrap()[c] += STEP;
            let mut minus = state.clone();
            minus.param_data_mut(&name).unwrap()[c] -= STEP;
            n.push(
                (batch_loss(&plus, batch, weights) - batch_loss(&minus, batch, weights))
                    / (2.0 * STEP),
            );
            a.push(grad.data()[c]);
        }
        worst = worst.max(rel_err(&a, &n));
    }
    worst
}

fn away_from_zero(mut t: Tensor) -> Tensor {
    for x in t.data_mut() {
        *x = x.signum() * (x.abs() + 0.05);
    }
    t
}

/// One random instance of every tape op; returns `(op, worst relative error)`.
pub fn op_trial(rng: &mut ChaCha8Rng) -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let (m, k, n) = (
        rng.random_range(1..5),
        rng.random_range(1..5),
        rng.random_range(1..5),
    );
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = randn(rng, &if ta { [k, m] } else { [m, k] }, 1.0);
        let b = randn(rng, &if tb { [n, k] } else { [k, n] }, 1.0);
        out.push((
            "matmul",
            check_op(rng, &[a, b], |t, v| t.matmul_t(v[0], v[1], ta, tb).unwrap()),
        ));
    }
    let x = randn(rng, &[m, k], 1.0);
    let y = randn(rng, &[m, k], 1.0);
    let bias = randn(rng, &[k], 1.0);
    out.push((
        "add",
        check_op(rng, &[x.clone(), y.clone()], |t, v| {
            t.add(v[0], v[1]).unwrap()
        }),
    ));
    out.push((
        "add_bias",
        check_op(rng, &[x.clone(), bias.clone()], |t, v| {
            t.add_bias(v[0], v[1]).unwrap()
        }),
    ));
    out.push((
        "mul",
        check_op(rng, &[x.clone(), y.clone()], |t, v| {
            t.mul(v[0], v[1]).unwrap()
        }),
    ));
    let c: f64 = rng.random_range(-2.0..2.0);
    out.push((
        "scale",
        check_op(rng, std::slice::from_ref(&x), |t, v| t.scale(v[0], c)),
    ));
    let wide = randn(rng, &[m, k], 2.0);
    out.push(("gelu", check_op(rng, &[wide], |t, v| t.gelu(v[0]))));
    out.push((
        "relu",
        check_op(rng, &[away_from_zero(x.clone())], |t, v| t.relu(v[0])),
    ));
    out.push((
        "sum",
        check_op(rng, std::slice::from_ref(&x), |t, v| t.sum(v[0])),
    ));
    let table = randn(rng, &[5, k], 1.0);
    let ids: Vec<usize> = (0..m + 2).map(|_| rng.random_range(0..5)).collect();
    out.push((
        "embed",
        check_op(rng, &[table], |t, v| t.embed(v[0], &ids).unwrap()),
    ));
    let d = rng.random_range(2..6);
    let xs = randn(rng, &[m, d], 1.5);
    let g = randn(rng, &[d], 1.0);
    let b = randn(rng, &[d], 1.0);
    out.push((
        "layernorm",
        check_op(rng, &[xs, g, b], |t, v| {
            t.layernorm(v[0], v[1], v[2], 1e-5).unwrap()
        }),
    ));
    let heads = rng.random_range(1..3);
    let dh = rng.random_range(1..4);
    let seq = rng.random_range(1..6);
    let q = randn(rng, &[seq, heads * dh], 1.0);
    let kk = randn(rng, &[seq, heads * dh], 1.0);
    let vv = randn(rng, &[seq, heads * dh], 1.0);
    out.push((
        "causal_attention",
        check_op(rng, &[q, kk, vv], |t, v| {
            t.causal_attention(v[0], v[1], v[2], heads).unwrap()
        }),
    ));
    let vocab = rng.random_range(2..7);
    let rows = rng.random_range(1..5);
    let mut targets: Vec<Option<usize>> = (0..rows)
        .map(|_| rng.random_bool(0.7).then(|| rng.random_range(0..vocab)))
        .collect();
    targets[0] = Some(rng.random_range(0..vocab));
    let logits = randn(rng, &[rows, vocab], 2.0);
    out.push((
        "cross_entropy",
        check_op(rng, &[logits], |t, v| {
            t.cross_entropy(v[0], &targets).unwrap()
        }),
    ));
    let (w1, w2): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    let s1 = randn(rng, &[], 1.0);
    let s2 = randn(rng, &[], 1.0);
    out.push((
        "combine",
        check_op(rng, &[s1, s2], |t, v| {
            t.combine(&[(v[0], w1), (v[1], w2)]).unwrap()
        }),
    ));
    out
}

/// Full language-model loss under a random architecture and regime.
pub fn lm_trial(rng: &mut ChaCha8Rng) -> f64 {
    use sugd_core::model::{LoraTarget, ModelConfig};
    let heads = rng.random_range(1..3);
    let config = ModelConfig {
        vocab_size: rng.random_range(5..12),
        // d_model >= 4: layer norm over two features is degenerate (outputs ±1).
        d_model: heads * rng.random_range(4 / heads..5),
        n_layers: rng.random_range(1..3),
        n_heads: heads,
        d_ff: rng.random_range(3..9),
        max_seq_len: 10,
        seed: rng.random(),
    };
    let mut state = ModelState::init(config.clone()).unwrap();
    match rng.random_range(0..3) {
        0 => {}
        1 => {
            state
                .attach_lora(
                    1,
                    2.0,
                    &[LoraTarget::Q, LoraTarget::V, LoraTarget::FfOut],
                    rng.random(),
                )
                .unwrap();
            // Non-zero B so the gradient reaches A as well.
            for name in state.lora_param_names() {
                if name.ends_with("lora_b") {
                    for x in state.param_data_mut(&name).unwrap() {
                        *x = rng.random_range(-0.5..0.5);
                    }
                }
            }
        }
        _ => state.freeze_except_last_k(1).unwrap(),
    }
    let v = config.vocab_size;
    let batch: Vec<Example> = (0..2)
        .map(|_| Example {
            input: (0..rng.random_range(1..4))
                .map(|_| rng.random_range(0..v))
                .collect(),
            output: (0..rng.random_range(1..4))
                .map(|_| rng.random_range(0..v))
                .collect(),
        })
        .collect();
    let weights = [-1.0, 1.0];
    check_model(&state, &batch, &weights, 6, rng)
}
