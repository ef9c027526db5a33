//! Nash heads: value, Nash action, and the coefficients of the quadratic
//! advantage, decoded from a network's raw output row.
//!
//! Raw layout for `N` agents (`d = 2 (N - 1)`):
//! `[V | mu_nu, mu_p | l11, l21, l22 | P12 (2 x d) | P22 (d x d) | Psi (d)]`.
//!
//! Advantage coefficients are parametrised in units where a trade-rate
//! deviation is measured relative to the trade bound, then rescaled back to
//! raw action units, so `P11 = L L^T` holds for the reported `L`.

use serde::{Deserialize, Serialize};

use super::mlp::{sigmoid, softplus};
use crate::market::JointAction;

/// Floor added to the softplus diagonal of the Cholesky factor.
pub const CHOL_JITTER: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadLayout {
    n_agents: usize,
}

impl HeadLayout {
    pub fn new(n_agents: usize) -> Self {
        Self { n_agents }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    /// Length of the stacked action deviation of the other agents.
    pub fn others_dim(&self) -> usize {
        2 * (self.n_agents - 1)
    }

    pub fn output_dim(&self) -> usize {
        let d = self.others_dim();
        6 + 2 * d + d * d + d
    }

    fn p12_offset(&self) -> usize {
        6
    }

    fn p22_offset(&self) -> usize {
        6 + 2 * self.others_dim()
    }

    fn psi_offset(&self) -> usize {
        let d = self.others_dim();
        6 + 2 * d + d * d
    }
}

/// Output scales for one agent class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadScales {
    pub value: f64,
    pub advantage: f64,
    pub trade_bound: f64,
}

impl HeadScales {
    /// Per-component action scale: trade rates relative to the bound.
    fn action_scale(&self, component: usize) -> f64 {
        if component % 2 == 0 {
            1.0 / self.trade_bound
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashHeads {
    pub value: f64,
    /// `(trade rate, generation probability)` at the Nash point.
    pub mu: [f64; 2],
    /// Lower-triangular factor of `P11`.
    pub chol: [[f64; 2]; 2],
    /// `2 x d`, row-major.
    pub p12: Vec<f64>,
    /// `d x d` symmetric, row-major.
    pub p22: Vec<f64>,
    pub psi: Vec<f64>,
}

impl NashHeads {
    pub fn p11(&self) -> [[f64; 2]; 2] {
        let l = &self.chol;
        [
            [l[0][0] * l[0][0], l[0][0] * l[1][0]],
            [l[1][0] * l[0][0], l[1][0] * l[1][0] + l[1][1] * l[1][1]],
        ]
    }

    pub fn others_dim(&self) -> usize {
        self.psi.len()
    }
}

/// Gradient of a scalar with respect to every head quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadsGrad {
    pub value: f64,
    pub mu: [f64; 2],
    /// Only the lower triangle is used.
    pub chol: [[f64; 2]; 2],
    pub p12: Vec<f64>,
    pub p22: Vec<f64>,
    pub psi: Vec<f64>,
}

impl HeadsGrad {
    pub fn zeros(d: usize) -> Self {
        Self {
            value: 0.0,
            mu: [0.0; 2],
            chol: [[0.0; 2]; 2],
            p12: vec![0.0; 2 * d],
            p22: vec![0.0; d * d],
            psi: vec![0.0; d],
        }
    }

    pub fn scale(&mut self, w: f64) {
        self.value *= w;
        self.mu.iter_mut().for_each(|x| *x *= w);
        self.chol.iter_mut().flatten().for_each(|x| *x *= w);
        for x in self.p12.iter_mut().chain(&mut self.p22).chain(&mut self.psi) {
            *x *= w;
        }
    }
}

pub fn decode(raw: &[f64], layout: HeadLayout, scales: &HeadScales) -> NashHeads {
    debug_assert_eq!(raw.len(), layout.output_dim());
    let d = layout.others_dim();
    let sa = scales.advantage;
    let root = sa.sqrt();
    let own = [scales.action_scale(0), scales.action_scale(1)];
    let l11 = softplus(raw[3]) + CHOL_JITTER;
    let l22 = softplus(raw[5]) + CHOL_JITTER;
    let chol = [[root * own[0] * l11, 0.0], [root * own[1] * raw[4], root * own[1] * l22]];

    let p12_raw = &raw[layout.p12_offset()..layout.p22_offset()];
    let p12 = (0..2 * d)
        .map(|idx| {
            let (r, c) = (idx / d, idx % d);
            sa * own[r] * scales.action_scale(c) * p12_raw[idx]
        })
        .collect();
    let p22_raw = &raw[layout.p22_offset()..layout.psi_offset()];
    let p22 = (0..d * d)
        .map(|idx| {
            let (r, c) = (idx / d, idx % d);
            let sym = 0.5 * (p22_raw[r * d + c] + p22_raw[c * d + r]);
            sa * scales.action_scale(r) * scales.action_scale(c) * sym
        })
        .collect();
    let psi = raw[layout.psi_offset()..]
        .iter()
        .enumerate()
        .map(|(c, &x)| sa * scales.action_scale(c) * x)
        .collect();

    NashHeads {
        value: scales.value * raw[0],
        mu: [scales.trade_bound * raw[1].tanh(), sigmoid(raw[2])],
        chol,
        p12,
        p22,
        psi,
    }
}

/// Chain `grad` (w.r.t. decoded heads) back to the raw output row; accumulates into `out`.
pub fn backprop(raw: &[f64], layout: HeadLayout, scales: &HeadScales, grad: &HeadsGrad, out: &mut [f64]) {
    let d = layout.others_dim();
    let sa = scales.advantage;
    let root = sa.sqrt();
    let own = [scales.action_scale(0), scales.action_scale(1)];

    out[0] += grad.value * scales.value;
    let t = raw[1].tanh();
    out[1] += grad.mu[0] * scales.trade_bound * (1.0 - t * t);
    let s = sigmoid(raw[2]);
    out[2] += grad.mu[1] * s * (1.0 - s);
    out[3] += grad.chol[0][0] * root * own[0] * sigmoid(raw[3]);
    out[4] += grad.chol[1][0] * root * own[1];
    out[5] += grad.chol[1][1] * root * own[1] * sigmoid(raw[5]);

    let base = layout.p12_offset();
    for idx in 0..2 * d {
        let (r, c) = (idx / d, idx % d);
        out[base + idx] += grad.p12[idx] * sa * own[r] * scales.action_scale(c);
    }
    let base = layout.p22_offset();
    for r in 0..d {
        for c in 0..d {
            let g = 0.5 * (grad.p22[r * d + c] + grad.p22[c * d + r]);
            out[base + r * d + c] += g * sa * scales.action_scale(r) * scales.action_scale(c);
        }
    }
    let base = layout.psi_offset();
    for c in 0..d {
        out[base + c] += grad.psi[c] * sa * scales.action_scale(c);
    }
}

/// [`backprop`] restricted to a gradient on the Nash actions.
pub fn backprop_mu(raw: &[f64], scales: &HeadScales, grad_mu: [f64; 2], out: &mut [f64]) {
    let t = raw[1].tanh();
    out[1] += grad_mu[0] * scales.trade_bound * (1.0 - t * t);
    let s = sigmoid(raw[2]);
    out[2] += grad_mu[1] * s * (1.0 - s);
}

/// Deviation of agent `i` and of the others (ascending order) from the Nash actions.
fn deviations(heads_all: &[NashHeads], action: &JointAction, agent: usize) -> ([f64; 2], Vec<f64>) {
    let own = action.agent(agent);
    let mu = heads_all[agent].mu;
    let dev_own = [own[0] - mu[0], own[1] - mu[1]];
    let mut dev_others = Vec::with_capacity(2 * (heads_all.len() - 1));
    for (j, h) in heads_all.iter().enumerate() {
        if j != agent {
            let a = action.agent(j);
            dev_others.push(a[0] - h.mu[0]);
            dev_others.push(a[1] - h.mu[1]);
        }
    }
    (dev_own, dev_others)
}

/// `A_i = -dev^T P dev + dev_others^T Psi`.
pub fn advantage(heads_all: &[NashHeads], action: &JointAction, agent: usize) -> f64 {
    let h = &heads_all[agent];
    let (u, w) = deviations(heads_all, action, agent);
    let d = w.len();
    let p11 = h.p11();
    let mut quad = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            quad += u[r] * p11[r][c] * u[c];
        }
    }
    for r in 0..2 {
        for c in 0..d {
            quad += 2.0 * u[r] * h.p12[r * d + c] * w[c];
        }
    }
    for r in 0..d {
        for c in 0..d {
            quad += w[r] * h.p22[r * d + c] * w[c];
        }
    }
    let linear: f64 = w.iter().zip(&h.psi).map(|(a, b)| a * b).sum();
    -quad + linear
}

pub fn q_value(heads_all: &[NashHeads], action: &JointAction, agent: usize) -> f64 {
    heads_all[agent].value + advantage(heads_all, action, agent)
}

/// Advantage together with its gradient.
///
/// `own` holds the gradient w.r.t. agent `i`'s heads (its value entry is left
/// at zero); `others_mu[j']` is the gradient w.r.t. the Nash action of the
/// `j'`-th other agent in ascending order.
pub struct AdvantageGrad {
    pub value: f64,
    pub own: HeadsGrad,
    pub others_mu: Vec<[f64; 2]>,
}

pub fn advantage_with_grad(heads_all: &[NashHeads], action: &JointAction, agent: usize) -> AdvantageGrad {
    let h = &heads_all[agent];
    let (u, w) = deviations(heads_all, action, agent);
    let d = w.len();
    let p11 = h.p11();

    // P11 u + P12 w and P12^T u + P22 w.
    let mut pu = [0.0; 2];
    for r in 0..2 {
        pu[r] = p11[r][0] * u[0] + p11[r][1] * u[1];
        for c in 0..d {
            pu[r] += h.p12[r * d + c] * w[c];
        }
    }
    let mut pw = vec![0.0; d];
    for (c, pwc) in pw.iter_mut().enumerate() {
        let mut acc = h.p12[c] * u[0] + h.p12[d + c] * u[1];
        for r in 0..d {
            acc += h.p22[c * d + r] * w[r];
        }
        *pwc = acc;
    }
    let quad = u[0] * pu[0] + u[1] * pu[1] + w.iter().zip(&pw).map(|(a, b)| a * b).sum::<f64>();
    let linear: f64 = w.iter().zip(&h.psi).map(|(a, b)| a * b).sum();

    let mut own = HeadsGrad::zeros(d);
    // dA/dP11 = -u u^T (symmetric), dA/dL = 2 (dA/dP11) L.
    let l = &h.chol;
    let g = [[-u[0] * u[0], -u[0] * u[1]], [-u[1] * u[0], -u[1] * u[1]]];
    own.chol[0][0] = 2.0 * (g[0][0] * l[0][0] + g[0][1] * l[1][0]);
    own.chol[1][0] = 2.0 * (g[1][0] * l[0][0] + g[1][1] * l[1][0]);
    own.chol[1][1] = 2.0 * g[1][1] * l[1][1];
    for r in 0..2 {
        for c in 0..d {
            own.p12[r * d + c] = -2.0 * u[r] * w[c];
        }
    }
    for r in 0..d {
        for c in 0..d {
            own.p22[r * d + c] = -w[r] * w[c];
        }
    }
    own.psi.copy_from_slice(&w);
    own.mu = [2.0 * pu[0], 2.0 * pu[1]];

    let others_mu = (0..d / 2)
        .map(|j| {
            [
                2.0 * pw[2 * j] - h.psi[2 * j],
                2.0 * pw[2 * j + 1] - h.psi[2 * j + 1],
            ]
        })
        .collect();

    AdvantageGrad {
        value: -quad + linear,
        own,
        others_mu,
    }
}
