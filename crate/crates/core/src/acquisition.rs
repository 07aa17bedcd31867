//! The two knowledge-acquisition modules: an LSTM cell each, a bank of
//! expert heads each, and a softmax gate combining the experts.
//!
//! The question module consumes `4d` interaction encodings and projects into
//! the question space (`n` outputs); the concept module consumes `3d`
//! encodings and projects into the concept space (`M` outputs). Every expert
//! owns an independent parameter set; the gate turns the hidden state into a
//! convex combination over experts. The candidate gate uses the logistic
//! activation by default with tanh available as a config switch.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{xavier_uniform, ParamStore};
use crate::tensor::{Real, Tensor};

/// Activation for the candidate cell update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateActivation {
    Sigmoid,
    Tanh,
}

impl Default for CandidateActivation {
    fn default() -> Self {
        CandidateActivation::Sigmoid
    }
}

const GATE_NAMES: [&str; 4] = ["input", "forget", "output", "candidate"];

/// Graph handles for one LSTM cell (four input maps, four recurrent maps,
/// four biases).
#[derive(Debug, Clone, Copy)]
pub struct LstmCellVars {
    pub w: [Var; 4],
    pub u: [Var; 4],
    pub b: [Var; 4],
}

pub fn init_lstm_cell<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    input_dim: usize,
    hidden_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    for gate in GATE_NAMES {
        store.insert(
            &format!("{prefix}.{gate}.w"),
            xavier_uniform(hidden_dim, input_dim, rng),
            true,
        )?;
        store.insert(
            &format!("{prefix}.{gate}.u"),
            xavier_uniform(hidden_dim, hidden_dim, rng),
            true,
        )?;
        store.insert(
            &format!("{prefix}.{gate}.b"),
            Tensor::zeros(hidden_dim, 1),
            true,
        )?;
    }
    Ok(())
}

pub fn register_lstm_cell<T: Real>(
    graph: &mut Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
) -> Result<LstmCellVars> {
    let mut w = [Var(0); 4];
    let mut u = [Var(0); 4];
    let mut b = [Var(0); 4];
    for (i, gate) in GATE_NAMES.iter().enumerate() {
        for (slot, kind) in [(&mut w, "w"), (&mut u, "u"), (&mut b, "b")] {
            let name = format!("{prefix}.{gate}.{kind}");
            let param = store.get(&name)?;
            slot[i] = graph.param(&name, param.tensor.clone(), param.trainable);
        }
    }
    Ok(LstmCellVars { w, u, b })
}

/// One recurrent update over a batch of columns. `x` is `(input_dim, B)`;
/// `h_prev` and `c_prev` are `(d, B)` (zeros at the first step).
pub fn lstm_step<T: Real>(
    graph: &mut Graph<T>,
    cell: LstmCellVars,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    candidate: CandidateActivation,
) -> Result<(Var, Var)> {
    let pre = |graph: &mut Graph<T>, i: usize| -> Result<Var> {
        let wx = graph.matmul(cell.w[i], x)?;
        let uh = graph.matmul(cell.u[i], h_prev)?;
        let lin = graph.add(wx, uh)?;
        graph.add_col_vec(lin, cell.b[i])
    };
    let input_pre = pre(graph, 0)?;
    let input_gate = graph.sigmoid(input_pre)?;
    let forget_pre = pre(graph, 1)?;
    let forget_gate = graph.sigmoid(forget_pre)?;
    let output_pre = pre(graph, 2)?;
    let output_gate = graph.sigmoid(output_pre)?;
    let cand_pre = pre(graph, 3)?;
    let cand = match candidate {
        CandidateActivation::Sigmoid => graph.sigmoid(cand_pre)?,
        CandidateActivation::Tanh => graph.tanh(cand_pre)?,
    };
    let keep = graph.mul(forget_gate, c_prev)?;
    let write = graph.mul(input_gate, cand)?;
    let c = graph.add(keep, write)?;
    let c_tanh = graph.tanh(c)?;
    let h = graph.mul(output_gate, c_tanh)?;
    Ok((h, c))
}

/// Graph handles for one expert head.
#[derive(Debug, Clone, Copy)]
pub struct ExpertHeadVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub scale: Var,
}

pub fn init_expert_head<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    hidden_dim: usize,
    out_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    store.insert(
        &format!("{prefix}.w1"),
        xavier_uniform(hidden_dim, hidden_dim, rng),
        true,
    )?;
    store.insert(&format!("{prefix}.b1"), Tensor::zeros(hidden_dim, 1), true)?;
    store.insert(
        &format!("{prefix}.w2"),
        xavier_uniform(out_dim, hidden_dim, rng),
        true,
    )?;
    store.insert(&format!("{prefix}.b2"), Tensor::zeros(out_dim, 1), true)?;
    // the output scale follows the matrix rule; starting it symmetric around
    // zero lets per-entry acquisition scores carry either sign from step one
    store.insert(
        &format!("{prefix}.scale"),
        xavier_uniform(out_dim, 1, rng),
        true,
    )?;
    Ok(())
}

pub fn register_expert_head<T: Real>(
    graph: &mut Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
) -> Result<ExpertHeadVars> {
    let mut get = |suffix: &str| -> Result<Var> {
        let name = format!("{prefix}.{suffix}");
        let param = store.get(&name)?;
        Ok(graph.param(&name, param.tensor.clone(), param.trainable))
    };
    Ok(ExpertHeadVars {
        w1: get("w1")?,
        b1: get("b1")?,
        w2: get("w2")?,
        b2: get("b2")?,
        scale: get("scale")?,
    })
}

/// Inner projection `relu(w1 . h + b1)`, shared by the full and gathered
/// output paths. `h` is `(d, B)`.
pub fn expert_inner<T: Real>(graph: &mut Graph<T>, head: ExpertHeadVars, h: Var) -> Result<Var> {
    let lin = graph.matmul(head.w1, h)?;
    let lin = graph.add_col_vec(lin, head.b1)?;
    graph.relu(lin)
}

/// Full-space expert output `scale ⊙ relu(w2 . relu(w1 . h + b1) + b2)`,
/// shape `(out, B)`.
pub fn expert_head<T: Real>(graph: &mut Graph<T>, head: ExpertHeadVars, h: Var) -> Result<Var> {
    let inner = expert_inner(graph, head, h)?;
    let lin = graph.matmul(head.w2, inner)?;
    let lin = graph.add_col_vec(lin, head.b2)?;
    let act = graph.relu(lin)?;
    graph.mul_col_vec(act, head.scale)
}

/// Gate handles: a linear map to one logit per expert plus softmax.
#[derive(Debug, Clone, Copy)]
pub struct GateVars {
    pub weight: Var,
    pub bias: Var,
}

pub fn init_gate<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    experts: usize,
    hidden_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    store.insert(
        &format!("{prefix}.weight"),
        xavier_uniform(experts, hidden_dim, rng),
        true,
    )?;
    store.insert(&format!("{prefix}.bias"), Tensor::zeros(experts, 1), true)?;
    Ok(())
}

pub fn register_gate<T: Real>(
    graph: &mut Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
) -> Result<GateVars> {
    let weight_name = format!("{prefix}.weight");
    let bias_name = format!("{prefix}.bias");
    let weight = store.get(&weight_name)?;
    let bias = store.get(&bias_name)?;
    Ok(GateVars {
        weight: graph.param(&weight_name, weight.tensor.clone(), weight.trainable),
        bias: graph.param(&bias_name, bias.tensor.clone(), bias.trainable),
    })
}

/// Expert weights on the simplex, shape `(E, B)`.
pub fn gate_weights<T: Real>(graph: &mut Graph<T>, gate: GateVars, h: Var) -> Result<Var> {
    let logits = graph.matmul(gate.weight, h)?;
    let logits = graph.add_col_vec(logits, gate.bias)?;
    graph.softmax_cols(logits)
}

/// One acquisition module: cell + experts + optional gate (absent means a
/// single ungated expert).
#[derive(Debug, Clone)]
pub struct ModuleVars {
    pub cell: LstmCellVars,
    pub experts: Vec<ExpertHeadVars>,
    pub gate: Option<GateVars>,
}

pub fn init_module<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    input_dim: usize,
    hidden_dim: usize,
    out_dim: usize,
    experts: usize,
    gated: bool,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if experts == 0 {
        return Err(Error::data("expert count must be at least 1"));
    }
    init_lstm_cell(store, &format!("{prefix}.cell"), input_dim, hidden_dim, rng)?;
    for e in 0..experts {
        init_expert_head(store, &format!("{prefix}.expert{e}"), hidden_dim, out_dim, rng)?;
    }
    if gated {
        init_gate(store, &format!("{prefix}.gate"), experts, hidden_dim, rng)?;
    }
    Ok(())
}

pub fn register_module<T: Real>(
    graph: &mut Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    experts: usize,
    gated: bool,
) -> Result<ModuleVars> {
    let cell = register_lstm_cell(graph, store, &format!("{prefix}.cell"))?;
    let experts = (0..experts)
        .map(|e| register_expert_head(graph, store, &format!("{prefix}.expert{e}")))
        .collect::<Result<Vec<_>>>()?;
    let gate = if gated {
        Some(register_gate(graph, store, &format!("{prefix}.gate"))?)
    } else {
        None
    };
    Ok(ModuleVars {
        cell,
        experts,
        gate,
    })
}

/// Gate-weighted sum of full-space expert outputs for a hidden state `(d,B)`;
/// returns `(out, B)`.
pub fn combined_acquisition<T: Real>(
    graph: &mut Graph<T>,
    module: &ModuleVars,
    h: Var,
) -> Result<Var> {
    let outputs = module
        .experts
        .iter()
        .map(|head| expert_head(graph, *head, h))
        .collect::<Result<Vec<_>>>()?;
    match &module.gate {
        None => {
            let mut acc = outputs[0];
            for out in &outputs[1..] {
                acc = graph.add(acc, *out)?;
            }
            if outputs.len() > 1 {
                acc = graph.affine(acc, T::from_f64(1.0 / outputs.len() as f64), T::zero())?;
            }
            Ok(acc)
        }
        Some(gate) => {
            let weights = gate_weights(graph, *gate, h)?;
            let mut acc: Option<Var> = None;
            for (e, out) in outputs.iter().enumerate() {
                let row = graph.gather_rows(weights, &[e])?;
                let weighted = graph.mul_row_vec(*out, row)?;
                acc = Some(match acc {
                    None => weighted,
                    Some(a) => graph.add(a, weighted)?,
                });
            }
            Ok(acc.expect("at least one expert"))
        }
    }
}

/// Run the module over a window of encoded inputs (each `(input_dim, B)`),
/// producing the hidden state and the combined acquisition state per step.
pub fn module_forward<T: Real>(
    graph: &mut Graph<T>,
    module: &ModuleVars,
    inputs: &[Var],
    hidden_dim: usize,
    candidate: CandidateActivation,
) -> Result<Vec<(Var, Var)>> {
    if inputs.is_empty() {
        return Err(Error::data("module_forward: no input steps"));
    }
    let batch = graph.shape(inputs[0]).1;
    let mut h = graph.constant(Tensor::zeros(hidden_dim, batch));
    let mut c = graph.constant(Tensor::zeros(hidden_dim, batch));
    let mut states = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let (h_next, c_next) = lstm_step(graph, module.cell, x, h, c, candidate)?;
        h = h_next;
        c = c_next;
        let combined = combined_acquisition(graph, module, h)?;
        states.push((h, combined));
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn zero_cell(graph: &mut Graph<f64>, input_dim: usize, d: usize) -> LstmCellVars {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        init_lstm_cell(&mut store, "cell", input_dim, d, &mut rng).unwrap();
        // overwrite with zeros
        for name in store.trainable_names() {
            let shape = store.tensor(&name).unwrap().shape();
            store
                .set_values(&name, Tensor::zeros(shape.0, shape.1))
                .unwrap();
        }
        register_lstm_cell(graph, &store, "cell").unwrap()
    }

    #[test]
    fn zero_weight_cell_analytic_step() {
        let mut g = Graph::new();
        let cell = zero_cell(&mut g, 3, 2);
        let x = g.constant(Tensor::ones(3, 1));
        let h0 = g.constant(Tensor::zeros(2, 1));
        let c0 = g.constant(Tensor::zeros(2, 1));
        let (h, c) = lstm_step(&mut g, cell, x, h0, c0, CandidateActivation::Sigmoid).unwrap();
        // all gates sigmoid(0)=0.5; c = 0.5*0 + 0.5*0.5 = 0.25; h = 0.5*tanh(0.25)
        for v in g.value(c).iter() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        let expect_h = 0.5 * 0.25f64.tanh();
        for v in g.value(h).iter() {
            assert!((v - expect_h).abs() < 1e-12, "h={v}, expected {expect_h}");
        }
        assert!((expect_h - 0.12245).abs() < 1e-4);
    }

    #[test]
    fn zero_weight_cell_carries_memory() {
        let mut g = Graph::new();
        let cell = zero_cell(&mut g, 3, 2);
        let x = g.constant(Tensor::zeros(3, 1));
        let h0 = g.constant(Tensor::zeros(2, 1));
        let c1 = g.constant(Tensor::ones(2, 1));
        let (_, c) = lstm_step(&mut g, cell, x, h0, c1, CandidateActivation::Sigmoid).unwrap();
        for v in g.value(c).iter() {
            assert!((v - 0.75).abs() < 1e-12); // 0.5*1 + 0.5*0.5
        }
    }

    /// Scalar LSTM written independently of the graph, for the trace oracle.
    struct ScalarLstm {
        w: [Vec<Vec<f64>>; 4],
        u: [Vec<Vec<f64>>; 4],
        b: [Vec<f64>; 4],
    }

    impl ScalarLstm {
        fn step(
            &self,
            x: &[f64],
            h: &[f64],
            c: &[f64],
            tanh_candidate: bool,
        ) -> (Vec<f64>, Vec<f64>) {
            let d = h.len();
            let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
            let pre = |gate: usize, row: usize| -> f64 {
                let mut acc = self.b[gate][row];
                for (j, xv) in x.iter().enumerate() {
                    acc += self.w[gate][row][j] * xv;
                }
                for (j, hv) in h.iter().enumerate() {
                    acc += self.u[gate][row][j] * hv;
                }
                acc
            };
            let mut h_next = vec![0.0; d];
            let mut c_next = vec![0.0; d];
            for r in 0..d {
                let i = sig(pre(0, r));
                let f = sig(pre(1, r));
                let o = sig(pre(2, r));
                let raw = pre(3, r);
                let cand = if tanh_candidate { raw.tanh() } else { sig(raw) };
                c_next[r] = f * c[r] + i * cand;
                h_next[r] = o * c_next[r].tanh();
            }
            (h_next, c_next)
        }
    }

    #[test]
    fn random_cell_matches_scalar_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (input_dim, d, steps) = (5, 3, 6);
        let mut store = ParamStore::<f64>::new();
        init_lstm_cell(&mut store, "cell", input_dim, d, &mut rng).unwrap();

        let grab = |name: &str| -> Vec<Vec<f64>> {
            let t = store.tensor(name).unwrap();
            (0..t.rows())
                .map(|r| (0..t.cols()).map(|c| t.get(r, c)).collect())
                .collect()
        };
        let gate_mats = |kind: &str| -> [Vec<Vec<f64>>; 4] {
            ["input", "forget", "output", "candidate"]
                .map(|gatename| grab(&format!("cell.{gatename}.{kind}")))
        };
        let scalar = ScalarLstm {
            w: gate_mats("w"),
            u: gate_mats("u"),
            b: gate_mats("b").map(|m| m.into_iter().map(|row| row[0]).collect()),
        };

        for tanh_candidate in [false, true] {
            let candidate = if tanh_candidate {
                CandidateActivation::Tanh
            } else {
                CandidateActivation::Sigmoid
            };
            let mut g = Graph::new();
            let cell = register_lstm_cell(&mut g, &store, "cell").unwrap();
            let mut h = g.constant(Tensor::zeros(d, 1));
            let mut c = g.constant(Tensor::zeros(d, 1));
            let mut h_ref = vec![0.0; d];
            let mut c_ref = vec![0.0; d];
            for _ in 0..steps {
                let x: Vec<f64> = (0..input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let xv = g.constant(Tensor::col(&x));
                let (h2, c2) = lstm_step(&mut g, cell, xv, h, c, candidate).unwrap();
                h = h2;
                c = c2;
                let (h2r, c2r) = scalar.step(&x, &h_ref, &c_ref, tanh_candidate);
                h_ref = h2r;
                c_ref = c2r;
                let hv = g.value(h).to_vec();
                for (a, b) in hv.iter().zip(h_ref.iter()) {
                    assert!((a - b).abs() < 1e-6, "hidden state diverged");
                }
            }
        }
    }

    #[test]
    fn zero_parameter_expert_outputs_zero() {
        let mut g = Graph::new();
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        init_expert_head(&mut store, "e", 3, 4, &mut rng).unwrap();
        for name in store.trainable_names() {
            let shape = store.tensor(&name).unwrap().shape();
            store
                .set_values(&name, Tensor::zeros(shape.0, shape.1))
                .unwrap();
        }
        let head = register_expert_head(&mut g, &store, "e").unwrap();
        let h = g.constant(Tensor::ones(3, 2));
        let out = expert_head(&mut g, head, h).unwrap();
        assert!(g.value(out).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unit_scale_passes_inner_relu_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        init_expert_head(&mut store, "e", 4, 6, &mut rng).unwrap();
        // with a unit scale the output is exactly relu(w2 relu(w1 h + b1) + b2)
        store.set_values("e.scale", Tensor::ones(6, 1)).unwrap();
        let mut g = Graph::new();
        let head = register_expert_head(&mut g, &store, "e").unwrap();
        let h = g.constant(Tensor::from_vec(4, 1, vec![0.3, -0.2, 0.9, 0.1]).unwrap());
        let out = expert_head(&mut g, head, h).unwrap();
        let inner = expert_inner(&mut g, head, h).unwrap();
        let lin = g.matmul(head.w2, inner).unwrap();
        let lin = g.add_col_vec(lin, head.b2).unwrap();
        let manual = g.relu(lin).unwrap();
        let diff = g.value(out).max_abs_diff(g.value(manual));
        assert!(diff < 1e-15);
    }

    #[test]
    fn expert_head_matches_brute_force_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (d, out_dim) = (3, 5);
        let mut store = ParamStore::<f64>::new();
        init_expert_head(&mut store, "e", d, out_dim, &mut rng).unwrap();
        // randomize biases and scale too
        for suffix in ["b1", "b2", "scale"] {
            let name = format!("e.{suffix}");
            let shape = store.tensor(&name).unwrap().shape();
            let vals: Vec<f64> = (0..shape.0 * shape.1).map(|_| rng.gen_range(-1.0..1.0)).collect();
            store
                .set_values(&name, Tensor::from_vec(shape.0, shape.1, vals).unwrap())
                .unwrap();
        }
        let h: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut g = Graph::new();
        let head = register_expert_head(&mut g, &store, "e").unwrap();
        let hv = g.constant(Tensor::col(&h));
        let got = expert_head(&mut g, head, hv).unwrap();
        let got = g.value(got).to_vec();

        let mat = |name: &str| store.tensor(name).unwrap().clone();
        let (w1, b1, w2, b2, scale) = (mat("e.w1"), mat("e.b1"), mat("e.w2"), mat("e.b2"), mat("e.scale"));
        let mut inner = vec![0.0; d];
        for r in 0..d {
            let mut acc = b1.get(r, 0);
            for c in 0..d {
                acc += w1.get(r, c) * h[c];
            }
            inner[r] = acc.max(0.0);
        }
        for r in 0..out_dim {
            let mut acc = b2.get(r, 0);
            for c in 0..d {
                acc += w2.get(r, c) * inner[c];
            }
            let expect = scale.get(r, 0) * acc.max(0.0);
            assert!((got[r] - expect).abs() < 1e-6, "row {r}");
        }
    }

    #[test]
    fn single_expert_gate_is_exactly_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        init_gate(&mut store, "g", 1, 3, &mut rng).unwrap();
        let mut g = Graph::new();
        let gate = register_gate(&mut g, &store, "g").unwrap();
        let h = g.constant(Tensor::from_vec(3, 2, vec![0.5, -1.0, 2.0, 0.1, 0.2, 0.3]).unwrap());
        let w = gate_weights(&mut g, gate, h).unwrap();
        assert!(g.value(w).iter().all(|v| *v == 1.0));
    }

    #[test]
    fn zero_gate_params_are_uniform() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        init_gate(&mut store, "g", 3, 2, &mut rng).unwrap();
        for name in ["g.weight", "g.bias"] {
            let shape = store.tensor(name).unwrap().shape();
            store
                .set_values(name, Tensor::zeros(shape.0, shape.1))
                .unwrap();
        }
        let mut g = Graph::new();
        let gate = register_gate(&mut g, &store, "g").unwrap();
        let h = g.constant(Tensor::ones(2, 1));
        let w = gate_weights(&mut g, gate, h).unwrap();
        for v in g.value(w).iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    fn random_module(
        prefix: &str,
        input_dim: usize,
        d: usize,
        out: usize,
        experts: usize,
        seed: u64,
    ) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_module(&mut store, prefix, input_dim, d, out, experts, true, &mut rng).unwrap();
        store
    }

    #[test]
    fn identical_experts_make_gating_irrelevant() {
        let (input_dim, d, out) = (4, 3, 5);
        let mut store = random_module("m", input_dim, d, out, 2, 17);
        // copy expert0 onto expert1
        for suffix in ["w1", "b1", "w2", "b2", "scale"] {
            let src = store.tensor(&format!("m.expert0.{suffix}")).unwrap().clone();
            store.set_values(&format!("m.expert1.{suffix}"), src).unwrap();
        }
        let mut g = Graph::new();
        let module = register_module(&mut g, &store, "m", 2, true).unwrap();
        let h = g.constant(Tensor::from_vec(d, 1, vec![0.4, -0.3, 0.8]).unwrap());
        let combined = combined_acquisition(&mut g, &module, h).unwrap();
        let solo = expert_head(&mut g, module.experts[0], h).unwrap();
        let diff = g.value(combined).max_abs_diff(g.value(solo));
        assert!(diff < 1e-12, "convex combination of equal experts: {diff}");
    }

    #[test]
    fn combined_state_matches_brute_force_convex_combination() {
        let (input_dim, d, out, experts) = (4, 3, 6, 3);
        let store = random_module("m", input_dim, d, out, experts, 23);
        let mut g = Graph::new();
        let module = register_module(&mut g, &store, "m", experts, true).unwrap();
        let h = g.constant(Tensor::from_vec(d, 1, vec![0.4, -0.3, 0.8]).unwrap());
        let combined = combined_acquisition(&mut g, &module, h).unwrap();
        let weights = gate_weights(&mut g, module.gate.unwrap(), h).unwrap();
        let wv = g.value(weights).to_vec();
        let per_expert: Vec<Vec<f64>> = (0..experts)
            .map(|e| {
                let o = expert_head(&mut g, module.experts[e], h).unwrap();
                g.value(o).to_vec()
            })
            .collect();
        let got = g.value(combined).to_vec();
        for r in 0..out {
            let brute: f64 = (0..experts).map(|e| wv[e] * per_expert[e][r]).sum();
            assert!((got[r] - brute).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_parameter_module_outputs_zero_states() {
        let mut store = random_module("m", 3, 2, 4, 1, 1);
        for name in store.trainable_names() {
            if name.contains("expert") {
                let shape = store.tensor(&name).unwrap().shape();
                store
                    .set_values(&name, Tensor::zeros(shape.0, shape.1))
                    .unwrap();
            }
        }
        let mut g = Graph::new();
        let module = register_module(&mut g, &store, "m", 1, true).unwrap();
        let inputs: Vec<Var> = (0..4).map(|_| g.constant(Tensor::ones(3, 1))).collect();
        let states = module_forward(&mut g, &module, &inputs, 2, CandidateActivation::Sigmoid)
            .unwrap();
        for (_, acq) in states {
            assert!(g.value(acq).iter().all(|v| *v == 0.0));
        }
    }
}
