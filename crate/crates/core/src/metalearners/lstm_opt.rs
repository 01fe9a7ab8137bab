//! Coordinate-wise two-layer LSTM optimizer whose cell state is the base
//! model's parameter vector.
//!
//! Every parameter coordinate is one row of a batch that shares the LSTM
//! weights φ. For coordinate `j` the input is the preprocessed gradient and
//! loss, the two stacked LSTM layers advance that row's recurrent state, and
//! a gate head produces
//!
//! ```text
//! f_t = σ(w_f · [h2_t, θ_{t-1}, f_{t-1}] + b_f)
//! i_t = σ(w_i · [h2_t, θ_{t-1}, i_{t-1}] + b_i)
//! θ_t = f_t ⊙ θ_{t-1} - i_t ⊙ ∇_t
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::MetaOptimizer;
use super::task::AdaptTask;
use crate::diffcore::{concat, grad, DiffNode, Tensor};
use crate::error::{Error, Result};
use crate::learner::{LayoutEntry, ParamVector};

/// Features per coordinate: two for the gradient, two for the loss.
pub const INPUT_FEATURES: usize = 4;
pub const DEFAULT_HIDDEN: usize = 20;
pub const DEFAULT_PREPROCESS_P: f64 = 10.0;
pub const FORGET_BIAS_INIT: f64 = 5.0;
pub const INPUT_BIAS_INIT: f64 = -5.0;

/// `(ln|v| / p, sign v)` when `|v| >= e^-p`, else `(-1, e^p v)`.
pub fn preprocess(v: f64, p: f64) -> (f64, f64) {
    if v.abs() >= (-p).exp() {
        (v.abs().ln() / p, if v > 0.0 { 1.0 } else { -1.0 })
    } else {
        (-1.0, p.exp() * v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmOptState {
    pub hidden: usize,
    pub preprocess_p: f64,
    /// Keep the gradient inputs attached to the graph during meta-training.
    pub second_order: bool,
    /// Shared LSTM weights, gate head and learned initial recurrent state.
    pub phi: ParamVector,
    /// Learned initial cell state, i.e. the base model's starting θ.
    pub init_cell: ParamVector,
    /// Updates the concatenation `[φ, init_cell]`.
    pub outer: MetaOptimizer,
}

pub fn phi_layout(hidden: usize) -> Vec<LayoutEntry> {
    let h = hidden;
    let entries: [(&str, Vec<usize>); 12] = [
        ("l1.w", vec![INPUT_FEATURES + h, 4 * h]),
        ("l1.b", vec![4 * h]),
        ("l2.w", vec![2 * h, 4 * h]),
        ("l2.b", vec![4 * h]),
        ("head.wf", vec![h + 2]),
        ("head.wi", vec![h + 2]),
        ("head.bf", vec![1]),
        ("head.bi", vec![1]),
        ("init.h1", vec![h]),
        ("init.c1", vec![h]),
        ("init.h2", vec![h]),
        ("init.c2", vec![h]),
    ];
    let mut offset = 0;
    entries
        .into_iter()
        .map(|(name, shape)| {
            let e = LayoutEntry { name: name.to_string(), shape, offset };
            offset += e.size();
            e
        })
        .collect()
}

impl LstmOptState {
    /// LSTM weights uniform in `±1/√H`, gate-head weights in `±0.01`,
    /// `b_f = 5`, `b_i = -5`, zero initial recurrent state.
    pub fn new(hidden: usize, init_cell: ParamVector, seed: u64, outer: MetaOptimizer) -> Self {
        let layout = phi_layout(hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lstm_limit = 1.0 / (hidden as f64).sqrt();
        let mut data = Vec::new();
        for e in &layout {
            let n = e.size();
            match e.name.as_str() {
                "l1.w" | "l2.w" => data.extend((0..n).map(|_| rng.random_range(-lstm_limit..=lstm_limit))),
                "head.wf" | "head.wi" => data.extend((0..n).map(|_| rng.random_range(-0.01..=0.01))),
                "head.bf" => data.push(FORGET_BIAS_INIT),
                "head.bi" => data.push(INPUT_BIAS_INIT),
                _ => data.extend(std::iter::repeat_n(0.0, n)),
            }
        }
        let phi = ParamVector::new(data, layout).expect("phi layout is contiguous");
        LstmOptState { hidden, preprocess_p: DEFAULT_PREPROCESS_P, second_order: false, phi, init_cell, outer }
    }

    /// Weights as constants, for adaptation without meta-gradients.
    pub fn constant_weights(&self) -> Result<LstmWeights> {
        LstmWeights::from_flat(&DiffNode::constant(self.phi.to_tensor()), self.hidden)
    }

    /// Zero head weights with fixed gate biases, so `f` and `i` are constant.
    pub fn force_gates(&mut self, forget: f64, input: f64) {
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let layout = self.phi.layout().to_vec();
        let data = self.phi.data_mut();
        for e in &layout {
            let seg = &mut data[e.offset..e.offset + e.size()];
            match e.name.as_str() {
                "head.wf" | "head.wi" => seg.fill(0.0),
                "head.bf" => seg[0] = logit(forget),
                "head.bi" => seg[0] = logit(input),
                _ => {}
            }
        }
    }
}

/// φ split into its named pieces, as graph nodes.
#[derive(Debug, Clone)]
pub struct LstmWeights {
    pub hidden: usize,
    l1_w: DiffNode,
    l1_b: DiffNode,
    l2_w: DiffNode,
    l2_b: DiffNode,
    wf: DiffNode,
    wi: DiffNode,
    bf: DiffNode,
    bi: DiffNode,
    init: [DiffNode; 4],
}

impl LstmWeights {
    pub fn from_flat(phi: &DiffNode, hidden: usize) -> Result<Self> {
        let layout = phi_layout(hidden);
        let total: usize = layout.iter().map(LayoutEntry::size).sum();
        if phi.value().len() != total {
            return Err(Error::shape("lstm_weights", format!("{} values, layout needs {}", phi.value().len(), total)));
        }
        let flat = phi.reshape(&[total])?;
        let mut parts = Vec::with_capacity(layout.len());
        for e in &layout {
            let seg = flat.slice(0, e.offset, e.offset + e.size())?;
            // Gate-head weight vectors become columns for the matmul.
            let shape = if e.name.starts_with("head.w") { vec![e.size(), 1] } else { e.shape.clone() };
            parts.push(seg.reshape(&shape)?);
        }
        let mut it = parts.into_iter();
        let mut next = || it.next().expect("layout has 12 entries");
        Ok(LstmWeights {
            hidden,
            l1_w: next(),
            l1_b: next(),
            l2_w: next(),
            l2_b: next(),
            wf: next(),
            wi: next(),
            bf: next(),
            bi: next(),
            init: [next(), next(), next(), next()],
        })
    }
}

/// Per-coordinate recurrent state; rows are parameter coordinates.
#[derive(Debug, Clone)]
pub struct LstmRecurrent {
    pub h1: DiffNode,
    pub c1: DiffNode,
    pub h2: DiffNode,
    pub c2: DiffNode,
    pub f_prev: DiffNode,
    pub i_prev: DiffNode,
    /// `[P, 1]` column holding θ.
    pub cell: DiffNode,
}

impl LstmRecurrent {
    /// Learned initial hidden state broadcast to every coordinate, previous
    /// gates zero, and `cell` (flat `[P]`) as θ_0.
    pub fn initial(w: &LstmWeights, cell: &DiffNode) -> Result<Self> {
        let p = cell.value().len();
        let h = w.hidden;
        let expand = |n: &DiffNode| n.broadcast_to(&[p, h]);
        Ok(LstmRecurrent {
            h1: expand(&w.init[0])?,
            c1: expand(&w.init[1])?,
            h2: expand(&w.init[2])?,
            c2: expand(&w.init[3])?,
            f_prev: DiffNode::constant(Tensor::zeros(&[p, 1])),
            i_prev: DiffNode::constant(Tensor::zeros(&[p, 1])),
            cell: cell.reshape(&[p, 1])?,
        })
    }

    /// θ as a flat `[P]` node.
    pub fn theta(&self) -> Result<DiffNode> {
        let p = self.cell.value().len();
        self.cell.reshape(&[p])
    }
}

/// Differentiable version of [`preprocess`] applied to a `[P, 1]` column.
fn preprocess_column(g: &DiffNode, p: f64) -> Result<DiffNode> {
    let threshold = (-p).exp();
    let vals = g.value();
    let big: Vec<f64> = vals.data().iter().map(|v| if v.abs() >= threshold { 1.0 } else { 0.0 }).collect();
    let rows = big.len();
    let col = |data: Vec<f64>| DiffNode::constant(Tensor::new(vec![rows, 1], data).expect("column"));
    let sign = col(vals.data().iter().map(|&v| if v > 0.0 { 1.0 } else { -1.0 }).collect());
    let mask = col(big.clone());
    let not_big = col(big.iter().map(|m| 1.0 - m).collect());

    // |v| on the large branch, 1 elsewhere so the log stays finite.
    let safe_abs = g.mul(&sign)?.mul(&mask)?.add(&not_big)?;
    let log_part = safe_abs.ln()?.scale(1.0 / p)?.mul(&mask)?.sub(&not_big)?;
    let sign_part = sign.mul(&mask)?.add(&g.mul(&not_big)?.scale(p.exp())?)?;
    concat(&[log_part, sign_part], 1)
}

fn lstm_layer(x: &DiffNode, h: &DiffNode, c: &DiffNode, w: &DiffNode, b: &DiffNode, hidden: usize) -> Result<(DiffNode, DiffNode)> {
    let z = concat(&[x.clone(), h.clone()], 1)?.matmul(w)?.add_row(b)?;
    let gate = |k: usize| z.slice(1, k * hidden, (k + 1) * hidden);
    let i = gate(0)?.sigmoid()?;
    let f = gate(1)?.sigmoid()?;
    let o = gate(2)?.sigmoid()?;
    let g = gate(3)?.tanh()?;
    let c_next = f.mul(c)?.add(&i.mul(&g)?)?;
    let h_next = o.mul(&c_next.tanh()?)?;
    Ok((h_next, c_next))
}

/// One optimizer step: consumes the current scalar loss and gradient (flat
/// `[P]`) and returns the advanced recurrent state whose `cell` is the new θ.
pub fn lstm_opt_step(w: &LstmWeights, state: &LstmRecurrent, loss: &DiffNode, grad: &DiffNode, p: f64) -> Result<LstmRecurrent> {
    let rows = state.cell.value().len();
    if grad.value().len() != rows {
        return Err(Error::shape("lstm_opt_step", format!("gradient of {} for a cell of {}", grad.value().len(), rows)));
    }
    let gcol = grad.reshape(&[rows, 1])?;
    let loss_feats = preprocess_column(&loss.reshape(&[1, 1])?, p)?.broadcast_to(&[rows, 2])?;
    let x = concat(&[preprocess_column(&gcol, p)?, loss_feats], 1)?;

    let h = w.hidden;
    let (h1, c1) = lstm_layer(&x, &state.h1, &state.c1, &w.l1_w, &w.l1_b, h)?;
    let (h2, c2) = lstm_layer(&h1, &state.h2, &state.c2, &w.l2_w, &w.l2_b, h)?;

    let gate_err = |e: Error| match e {
        Error::NonFinite { .. } => Error::NonFinite { op: "lstm_gate" },
        other => other,
    };
    let f_pre = concat(&[h2.clone(), state.cell.clone(), state.f_prev.clone()], 1)?
        .matmul(&w.wf)
        .and_then(|z| z.add_row(&w.bf))
        .map_err(gate_err)?;
    let i_pre = concat(&[h2.clone(), state.cell.clone(), state.i_prev.clone()], 1)?
        .matmul(&w.wi)
        .and_then(|z| z.add_row(&w.bi))
        .map_err(gate_err)?;
    let f = f_pre.sigmoid()?;
    let i = i_pre.sigmoid()?;
    let cell = f.mul(&state.cell)?.sub(&i.mul(&gcol)?)?;
    Ok(LstmRecurrent { h1, c1, h2, c2, f_prev: f, i_prev: i, cell })
}

/// Runs `steps` optimizer steps from `init_cell` on the task's support set and
/// returns every iterate of θ (flat), the starting point included.
///
/// Unless `second_order` is set, the gradient fed to the optimizer is taken on
/// a detached copy of θ, so meta-gradients flow only through the cell
/// recurrence.
pub fn learned_adapt<T: AdaptTask + ?Sized>(
    w: &LstmWeights,
    init_cell: &DiffNode,
    task: &T,
    steps: usize,
    p: f64,
    second_order: bool,
) -> Result<(Vec<DiffNode>, Vec<f64>)> {
    let mut state = LstmRecurrent::initial(w, init_cell)?;
    let mut trajectory = vec![state.theta()?];
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let theta = state.theta()?;
        let probe = if second_order && theta.requires_grad() { theta } else { theta.detach_variable() };
        let loss = task.support_loss(&probe).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFiniteLoss { step },
            other => other,
        })?;
        if !loss.item().is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let g = grad(&loss, std::slice::from_ref(&probe), second_order)?.get(&probe).expect("wrt entry").clone();
        losses.push(loss.item());
        state = lstm_opt_step(w, &state, &loss, &g, p)?;
        trajectory.push(state.theta()?);
    }
    Ok((trajectory, losses))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preprocess_branches() {
        assert_eq!(preprocess(1.0, 10.0), (0.0, 1.0));
        assert_eq!(preprocess(0.0, 10.0), (-1.0, 0.0));
        let (a, b) = preprocess(-(-5.0f64).exp(), 10.0);
        assert!((a + 0.5).abs() < 1e-15);
        assert_eq!(b, -1.0);
        let (a, b) = preprocess(1e-6, 10.0);
        assert_eq!(a, -1.0);
        assert!((b - 10f64.exp() * 1e-6).abs() < 1e-15);
    }

    #[test]
    fn column_preprocess_matches_scalar() {
        let vals = vec![1.0, 0.0, -(-5.0f64).exp(), 1e-6, -3.2];
        let g = DiffNode::constant(Tensor::new(vec![5, 1], vals.clone()).unwrap());
        let out = preprocess_column(&g, 10.0).unwrap();
        for (r, &v) in vals.iter().enumerate() {
            let (a, b) = preprocess(v, 10.0);
            assert!((out.value().data()[2 * r] - a).abs() < 1e-15);
            assert!((out.value().data()[2 * r + 1] - b).abs() < 1e-15);
        }
    }

    #[test]
    fn layout_sizes() {
        let h = 20;
        let total: usize = phi_layout(h).iter().map(LayoutEntry::size).sum();
        assert_eq!(total, (4 + h) * 4 * h + 4 * h + 2 * h * 4 * h + 4 * h + 2 * (h + 2) + 2 + 4 * h);
    }

    #[test]
    fn untrained_gates_take_small_steps() {
        let cell = ParamVector::from_flat(vec![0.5, -0.5, 2.0]);
        let opt = LstmOptState::new(DEFAULT_HIDDEN, cell.clone(), 1, MetaOptimizer::adam(1e-3));
        let w = opt.constant_weights().unwrap();
        let state = LstmRecurrent::initial(&w, &cell.to_variable()).unwrap();
        let g = DiffNode::constant(Tensor::vector(vec![1.0, 1.0, 1.0]));
        let next = lstm_opt_step(&w, &state, &DiffNode::scalar(1.0), &g, 10.0).unwrap();
        let f = next.f_prev.value().data()[0];
        let i = next.i_prev.value().data()[0];
        assert!((f - 0.993).abs() < 2e-3, "{f}");
        assert!((i - 0.0067).abs() < 2e-3, "{i}");
    }

    #[test]
    fn forced_identity_gates_keep_theta() {
        let cell = ParamVector::from_flat(vec![0.25, -1.0]);
        let mut opt = LstmOptState::new(4, cell.clone(), 2, MetaOptimizer::adam(1e-3));
        opt.force_gates(0.5, 0.5);
        // f = 1, i = 0 exactly are not reachable through a logistic; drive the
        // biases to the saturation limit instead.
        let layout = opt.phi.layout().to_vec();
        for e in &layout {
            if e.name == "head.bf" {
                opt.phi.data_mut()[e.offset] = 800.0;
            }
            if e.name == "head.bi" {
                opt.phi.data_mut()[e.offset] = -800.0;
            }
        }
        let w = opt.constant_weights().unwrap();
        let state = LstmRecurrent::initial(&w, &cell.to_variable()).unwrap();
        let g = DiffNode::constant(Tensor::vector(vec![3.0, -2.0]));
        let next = lstm_opt_step(&w, &state, &DiffNode::scalar(0.7), &g, 10.0).unwrap();
        assert_eq!(next.theta().unwrap().value().data(), cell.data());
    }

    #[test]
    fn gradient_length_must_match_cell() {
        let cell = ParamVector::from_flat(vec![0.0; 3]);
        let opt = LstmOptState::new(3, cell.clone(), 0, MetaOptimizer::adam(1e-3));
        let w = opt.constant_weights().unwrap();
        let state = LstmRecurrent::initial(&w, &cell.to_variable()).unwrap();
        let g = DiffNode::constant(Tensor::vector(vec![1.0; 2]));
        assert!(lstm_opt_step(&w, &state, &DiffNode::scalar(1.0), &g, 10.0).is_err());
    }
}
