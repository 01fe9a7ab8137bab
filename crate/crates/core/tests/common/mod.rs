#![allow(dead_code)]

use metastress::diffcore::{DiffNode, Tensor};
use metastress::learner::{Activation, MlpSpec, ParamVector};
use metastress::metalearners::AdaptTask;
use metastress::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Random tanh MLP with at most `max_params` parameters.
pub fn random_spec(rng: &mut ChaCha8Rng, max_params: usize) -> MlpSpec {
    loop {
        let input = rng.random_range(2..8);
        let depth = rng.random_range(0..3);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..12)).collect();
        let classes = rng.random_range(2..6);
        let spec = MlpSpec::new(input, hidden, classes, Activation::Tanh);
        if spec.num_params() <= max_params {
            return spec;
        }
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, spec: &MlpSpec, rows: usize) -> (Tensor, Vec<usize>) {
    let x = Tensor::new(vec![rows, spec.input_dim], uniform_vec(rng, rows * spec.input_dim, -1.0, 1.0)).unwrap();
    let y = (0..rows).map(|_| rng.random_range(0..spec.num_classes)).collect();
    (x, y)
}

/// Smooth non-quadratic task with coupled coordinates:
/// `L(θ) = Σ (tanh(c_j θ_j) - t_j)^2 + κ θ_0 θ_last`.
#[derive(Debug, Clone)]
pub struct TanhTask {
    pub scale: Vec<f64>,
    pub support: Vec<f64>,
    pub query: Vec<f64>,
    pub coupling: f64,
    pub id: u64,
}

impl TanhTask {
    pub fn random(rng: &mut ChaCha8Rng, dim: usize, id: u64) -> Self {
        TanhTask {
            scale: uniform_vec(rng, dim, 0.5, 2.0),
            support: uniform_vec(rng, dim, -0.8, 0.8),
            query: uniform_vec(rng, dim, -0.8, 0.8),
            coupling: rng.random_range(-0.5..0.5),
            id,
        }
    }

    fn loss(&self, theta: &DiffNode, target: &[f64]) -> Result<DiffNode> {
        let n = self.scale.len();
        let z = theta.mul(&DiffNode::constant(Tensor::vector(self.scale.clone())))?.tanh()?;
        let d = z.sub(&DiffNode::constant(Tensor::vector(target.to_vec())))?;
        let fit = d.mul(&d)?.sum()?;
        let first = theta.slice(0, 0, 1)?;
        let last = theta.slice(0, n - 1, n)?;
        fit.add(&first.mul(&last)?.sum()?.scale(self.coupling)?)
    }

    pub fn loss_value(&self, theta: &[f64], query: bool) -> f64 {
        let target = if query { &self.query } else { &self.support };
        let n = theta.len();
        let mut acc = 0.0;
        for j in 0..n {
            let d = (self.scale[j] * theta[j]).tanh() - target[j];
            acc += d * d;
        }
        acc + self.coupling * theta[0] * theta[n - 1]
    }
}

impl AdaptTask for TanhTask {
    fn support_loss(&self, params: &DiffNode) -> Result<DiffNode> {
        self.loss(params, &self.support)
    }
    fn query_loss(&self, params: &DiffNode) -> Result<DiffNode> {
        self.loss(params, &self.query)
    }
    fn task_id(&self) -> u64 {
        self.id
    }
}

pub fn flat(v: Vec<f64>) -> ParamVector {
    ParamVector::from_flat(v)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar re-implementation of the coordinate-wise two-layer LSTM optimizer,
/// used as an independent oracle.
pub struct ReferenceLstm<'a> {
    pub phi: &'a ParamVector,
    pub hidden: usize,
    pub p: f64,
}

#[derive(Clone)]
pub struct CoordState {
    pub h1: Vec<f64>,
    pub c1: Vec<f64>,
    pub h2: Vec<f64>,
    pub c2: Vec<f64>,
    pub f: f64,
    pub i: f64,
    pub theta: f64,
}

impl<'a> ReferenceLstm<'a> {
    fn seg(&self, name: &str) -> &[f64] {
        self.phi.segment(name).expect("phi segment")
    }

    pub fn initial(&self, theta: f64) -> CoordState {
        CoordState {
            h1: self.seg("init.h1").to_vec(),
            c1: self.seg("init.c1").to_vec(),
            h2: self.seg("init.h2").to_vec(),
            c2: self.seg("init.c2").to_vec(),
            f: 0.0,
            i: 0.0,
            theta,
        }
    }

    pub fn preprocess(&self, v: f64) -> [f64; 2] {
        if v.abs() >= (-self.p).exp() {
            [v.abs().ln() / self.p, v.signum()]
        } else {
            [-1.0, self.p.exp() * v]
        }
    }

    fn layer(&self, x: &[f64], h: &[f64], c: &[f64], w: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let input: Vec<f64> = x.iter().chain(h).copied().collect();
        let mut z = b.to_vec();
        for (r, &v) in input.iter().enumerate() {
            for col in 0..4 * hd {
                z[col] += v * w[r * 4 * hd + col];
            }
        }
        let mut h_next = vec![0.0; hd];
        let mut c_next = vec![0.0; hd];
        for k in 0..hd {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[hd + k]);
            let o = sigmoid(z[2 * hd + k]);
            let g = z[3 * hd + k].tanh();
            c_next[k] = f * c[k] + i * g;
            h_next[k] = o * c_next[k].tanh();
        }
        (h_next, c_next)
    }

    pub fn step(&self, s: &CoordState, loss: f64, grad: f64) -> CoordState {
        let [g0, g1] = self.preprocess(grad);
        let [l0, l1] = self.preprocess(loss);
        let x = [g0, g1, l0, l1];
        let (h1, c1) = self.layer(&x, &s.h1, &s.c1, self.seg("l1.w"), self.seg("l1.b"));
        let (h2, c2) = self.layer(&h1, &s.h2, &s.c2, self.seg("l2.w"), self.seg("l2.b"));
        let head = |w: &[f64], b: f64, prev: f64| {
            let mut z = b;
            for k in 0..self.hidden {
                z += w[k] * h2[k];
            }
            z += w[self.hidden] * s.theta + w[self.hidden + 1] * prev;
            sigmoid(z)
        };
        let f = head(self.seg("head.wf"), self.seg("head.bf")[0], s.f);
        let i = head(self.seg("head.wi"), self.seg("head.bi")[0], s.i);
        CoordState { h1, c1, h2, c2, f, i, theta: f * s.theta - i * grad }
    }
}
