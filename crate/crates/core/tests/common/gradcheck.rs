//! Reverse-mode gradients against central differences. Every check
//! returns the worst relative error over its instances.

use fairlm::memory::MemoryModule;
use fairlm::model::{decode_step_attention, decode_step_fair, AttentionHead, Graph, KeySource, Variant};
use fairlm::numerics::{lstm_step, LstmVars, Rng, Tape, Tensor, Var};
use fairlm::parallel::Execution;

use super::{central_diff, random, random_batch, random_memory, rel_err, sample_coords, tiny_model};

const COORDS: usize = 24;

/// Compares the gradient of `f` w.r.t. each input with central
/// differences. `f` builds a scalar on a fresh tape from leaves holding
/// `inputs` and returns it.
fn check_leaves(inputs: &mut [Tensor], rng: &mut Rng, f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |inputs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars);
        (tape, vars, out)
    };
    let (tape, vars, out) = eval(inputs);
    let grads = tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..inputs.len() {
        let analytic = grads.get(vars[k]);
        let coords = sample_coords(inputs[k].len(), COORDS, rng);
        let a: Vec<f64> = coords.iter().map(|&i| analytic.data()[i]).collect();
        let mut x = inputs[k].clone();
        let n = central_diff(&mut x, &coords, |x| {
            let mut all = inputs.to_vec();
            all[k] = x.clone();
            let (tape, _, out) = eval(&all);
            tape.value(out).item()
        });
        worst = worst.max(rel_err(&a, &n));
    }
    worst
}

/// Random linear functional of `x`, so every output entry matters.
fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let len = tape.value(x).len();
    let mut rng = Rng::new(seed);
    let w = (0..len).map(|_| rng.unit() * 2.0 - 1.0).collect();
    let y = tape.mul_const(x, w).unwrap();
    tape.sum(y)
}

pub fn lstm_step_error(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..instances {
        let mut rng = Rng::new(100 + s);
        let (b, input, h) = (3, 5, 4);
        let mut inputs = vec![
            random(&[b, input], 1.0, &mut rng),
            random(&[b, h], 1.0, &mut rng),
            random(&[b, h], 1.0, &mut rng),
            random(&[input, 4 * h], 0.7, &mut rng),
            random(&[h, 4 * h], 0.7, &mut rng),
            random(&[4 * h], 0.7, &mut rng),
        ];
        let err = check_leaves(&mut inputs, &mut rng, |tape, v| {
            let p = LstmVars { w_x: v[3], w_h: v[4], bias: v[5] };
            let (h, c) = lstm_step(tape, v[0], v[1], v[2], &p).unwrap();
            let both = tape.concat_cols(&[h, c]).unwrap();
            project(tape, both, s)
        });
        worst = worst.max(err);
    }
    worst
}

pub fn decode_step_fair_error(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..instances {
        let mut rng = Rng::new(200 + s);
        let (b, d, v, m) = (3, 8, 20, 24);
        let memory = random_memory(m, d, &mut rng);
        let mut inputs = vec![
            random(&[b, d], 1.0, &mut rng),
            memory.keys().clone(),
            random(&[d, v], 0.5, &mut rng),
        ];
        let err = check_leaves(&mut inputs, &mut rng, |tape, vars| {
            let q = tape.normalize_rows(vars[0]);
            let step = decode_step_fair(tape, q, &memory, KeySource::Full(vars[1]), vars[2], 2, Execution::Sequential)
                .unwrap();
            project(tape, step.logits, s)
        });
        worst = worst.max(err);
    }
    worst
}

pub fn decode_step_attention_error(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..instances {
        let mut rng = Rng::new(300 + s);
        let (b, t, d, v) = (3, 4, 8, 20);
        let lengths = vec![4, 2, 1];
        let mut inputs = vec![
            random(&[b, d], 1.0, &mut rng),
            random(&[b * t, d], 1.0, &mut rng),
            random(&[2 * d, d], 0.5, &mut rng),
            random(&[d], 0.5, &mut rng),
            random(&[d, v], 0.5, &mut rng),
            random(&[v], 0.5, &mut rng),
        ];
        let err = check_leaves(&mut inputs, &mut rng, |tape, vars| {
            let head = AttentionHead { comb_w: vars[2], comb_b: vars[3], out_w: vars[4], out_b: vars[5] };
            let step = decode_step_attention(tape, vars[0], vars[1], &lengths, &head).unwrap();
            project(tape, step.logits, s)
        });
        worst = worst.max(err);
    }
    worst
}

/// Gradient of a random functional of `h_enco` w.r.t. every encoder
/// parameter (embedding, both biLSTM layers, projection).
pub fn encode_error(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..instances {
        let mut rng = Rng::new(400 + s);
        let mut model = tiny_model(Variant::Seq2Seq, 400 + s);
        let sources: Vec<Vec<u32>> = (0..3)
            .map(|_| (0..1 + rng.below(4)).map(|_| 4 + rng.below(16) as u32).collect())
            .collect();
        fn eval<'m>(model: &'m fairlm::model::Model, sources: &[Vec<u32>], s: u64) -> (Graph<'m>, Var) {
            let mut g = Graph::new(model, Execution::Sequential);
            let refs: Vec<&[u32]> = sources.iter().map(Vec::as_slice).collect();
            let enc = g.encode(&refs).unwrap();
            let out = project(&mut g.tape, enc.h_enco, s);
            (g, out)
        }
        let (g, out) = eval(&model, &sources, s);
        let grads = g.tape.backward(out).unwrap();
        let vars = g.param_vars().to_vec();
        let names: Vec<String> = model.params().names().to_vec();
        for (k, name) in names.iter().enumerate() {
            if !(name.starts_with("embedding") || name.starts_with("encoder")) {
                continue;
            }
            let analytic = grads.get(vars[k]);
            let coords = sample_coords(analytic.len(), COORDS, &mut rng);
            let a: Vec<f64> = coords.iter().map(|&i| analytic.data()[i]).collect();
            let mut x = model.params().tensors()[k].clone();
            let n = central_diff(&mut x, &coords, |x| {
                model.params_mut().tensors_mut()[k] = x.clone();
                let (g, out) = eval(&model, &sources, s);
                g.tape.value(out).item()
            });
            model.params_mut().tensors_mut()[k] = x;
            worst = worst.max(rel_err(&a, &n));
        }
    }
    worst
}

/// Full teacher-forced batch loss for one variant, including the dense
/// memory-key gradient for the Fair Region model.
pub fn loss_error(variant: Variant, instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..instances {
        let mut rng = Rng::new(500 + s);
        let mut model = tiny_model(variant, 500 + s);
        let batch = random_batch(20, 3, &mut rng);
        let g = model.batch_gradients(&batch, None, Execution::Sequential).unwrap();
        for k in 0..model.params().len() {
            let coords = sample_coords(g.params[k].len(), COORDS, &mut rng);
            let a: Vec<f64> = coords.iter().map(|&i| g.params[k].data()[i]).collect();
            let mut x = model.params().tensors()[k].clone();
            let n = central_diff(&mut x, &coords, |x| {
                model.params_mut().tensors_mut()[k] = x.clone();
                model.loss(&batch).unwrap()
            });
            model.params_mut().tensors_mut()[k] = x;
            worst = worst.max(rel_err(&a, &n));
        }
        if let Some(kg) = &g.keys {
            let coords = sample_coords(kg.len(), 64, &mut rng);
            let a: Vec<f64> = coords.iter().map(|&i| kg.data()[i]).collect();
            let mut x = model.memory().unwrap().keys().clone();
            let n = central_diff(&mut x, &coords, |x| {
                *model.memory_mut().unwrap().keys_mut() = x.clone();
                model.loss(&batch).unwrap()
            });
            *model.memory_mut().unwrap().keys_mut() = x;
            worst = worst.max(rel_err(&a, &n));
        }
    }
    worst
}

/// Rows of the dense key gradient that are nonzero outside the Fair
/// Regions used by the step. Returns `(violations, rows touched)`.
pub fn key_gradient_locality(instances: u64) -> (usize, usize) {
    let mut violations = 0;
    let mut touched = 0;
    for s in 0..instances {
        let mut rng = Rng::new(600 + s);
        let (b, d, v, m) = (4, 8, 20, 60);
        let memory: MemoryModule = random_memory(m, d, &mut rng);
        let mut tape = Tape::new();
        let h = tape.leaf(random(&[b, d], 1.0, &mut rng));
        let keys = tape.leaf(memory.keys().clone());
        let w = tape.leaf(random(&[d, v], 0.5, &mut rng));
        let q = tape.normalize_rows(h);
        let step = decode_step_fair(&mut tape, q, &memory, KeySource::Full(keys), w, 3, Execution::Sequential).unwrap();
        let loss = project(&mut tape, step.logits, s);
        let grads = tape.backward(loss).unwrap();
        let kg = grads.get(keys);
        let allowed: std::collections::HashSet<usize> = step.regions.iter().flat_map(|r| r.indices()).collect();
        for i in 0..m {
            let nonzero = kg.row(i).iter().any(|&x| x != 0.0);
            if nonzero {
                touched += 1;
                if !allowed.contains(&i) {
                    violations += 1;
                }
            }
        }
    }
    (violations, touched)
}
