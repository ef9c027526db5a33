//! Nash-DQN training loop.
//!
//! Each epoch samples a batch of states, acts with the current Nash heads plus
//! clipped Gaussian exploration, observes one transition per state, and takes
//! an Adam step on the Nash-Bellman regression loss plus a soft market
//! clearing penalty on the aggregate Nash trade rate. Target networks track
//! the online networks through soft updates.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::market::{JointAction, Market, MarketState};
use crate::nets::heads::{advantage_with_grad, backprop, backprop_mu};
use crate::nets::linalg::Matrix;
use crate::nets::model::BatchForward;
use crate::nets::{adam_step, soft_update, AdamState, Checkpoint, NashModel, NetConfig};
use crate::store::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Decay the learning rate every this many epochs.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub lr_floor: f64,
    pub gamma: f64,
    /// Soft target update rate `phi_V`.
    pub target_update_rate: f64,
    /// Smoothing `phi_L` of the clearing weight.
    pub clearing_update_rate: f64,
    /// Initial clearing weight `varphi_0`.
    pub initial_clearing_weight: f64,
    pub max_clearing_weight: f64,
    /// Penalise the aggregate Nash trade rate. Ignored with a single agent.
    pub market_clearing: bool,
    /// Exploration scale `c_nu` on trade rates.
    pub explore_trade: f64,
    /// Exploration scale `c_p` on generation probabilities.
    pub explore_gen: f64,
    pub eps_start: f64,
    pub eps_min: f64,
    /// Fraction of the epochs over which `eps` decays linearly.
    pub eps_decay_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults used by the presets; exploration on trade rates scales with the bound.
    pub fn with_trade_bound(trade_bound: f64) -> Self {
        Self {
            epochs: 20_000,
            batch_size: 256,
            lr: 1e-3,
            lr_decay_every: 25,
            lr_decay_factor: 0.99,
            lr_floor: 1e-5,
            gamma: 1.0,
            target_update_rate: 0.05,
            clearing_update_rate: 0.25,
            initial_clearing_weight: 50.0,
            max_clearing_weight: 1e6,
            market_clearing: true,
            explore_trade: 0.5 * trade_bound,
            explore_gen: 0.5,
            eps_start: 1.0,
            eps_min: 0.02,
            eps_decay_fraction: 0.8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        for (name, v) in [
            ("target_update_rate", self.target_update_rate),
            ("clearing_update_rate", self.clearing_update_rate),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !(self.initial_clearing_weight > 0.0 && self.initial_clearing_weight.is_finite()) {
            return bad(format!(
                "initial_clearing_weight must be positive, got {}",
                self.initial_clearing_weight
            ));
        }
        if !(self.max_clearing_weight >= self.initial_clearing_weight) {
            return bad(format!(
                "max_clearing_weight ({}) must be at least initial_clearing_weight ({})",
                self.max_clearing_weight, self.initial_clearing_weight
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.lr_floor < 0.0 {
            return bad("learning rate must be positive".into());
        }
        if self.lr_decay_every == 0 || !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr_decay_every must be >= 1 and lr_decay_factor in (0, 1]".into());
        }
        if self.explore_trade < 0.0 || self.explore_gen < 0.0 {
            return bad("exploration scales must be nonnegative".into());
        }
        if !(self.eps_start >= self.eps_min && self.eps_min >= 0.0) {
            return bad("need eps_start >= eps_min >= 0".into());
        }
        if !(self.eps_decay_fraction > 0.0 && self.eps_decay_fraction <= 1.0) {
            return bad("eps_decay_fraction must lie in (0, 1]".into());
        }
        Ok(())
    }

    /// Exploration level at `epoch` (0-based): linear decay, then flat.
    pub fn epsilon(&self, epoch: usize) -> f64 {
        let horizon = self.eps_decay_fraction * self.epochs as f64;
        if horizon <= 0.0 {
            return self.eps_min;
        }
        let frac = (epoch as f64 / horizon).min(1.0);
        (self.eps_start - (self.eps_start - self.eps_min) * frac).max(self.eps_min)
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let decays = (epoch / self.lr_decay_every) as i32;
        (self.lr * self.lr_decay_factor.powi(decays)).max(self.lr_floor)
    }
}

/// Per-epoch losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub q_loss: f64,
    /// Unweighted clearing loss.
    pub clearing_loss: f64,
    pub total: f64,
    /// Clearing weight used for this epoch.
    pub varphi: f64,
    pub lr: f64,
    pub eps: f64,
}

/// `(state, action, reward, next state)` tuples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Vec<MarketState>,
    pub actions: Vec<JointAction>,
    pub rewards: Vec<Vec<f64>>,
    pub next_states: Vec<MarketState>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Losses of a batch and their gradients w.r.t. each class network.
#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub q_loss: f64,
    pub clearing_loss: f64,
    pub total: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Clipped Gaussian exploration around `action`.
pub fn apply_exploration<R: Rng + ?Sized>(
    action: &JointAction,
    eps: f64,
    explore_trade: f64,
    explore_gen: f64,
    trade_bound: f64,
    rng: &mut R,
) -> JointAction {
    let mut out = action.clone();
    for i in 0..action.len() {
        let z_nu: f64 = rng.sample(StandardNormal);
        let z_p: f64 = rng.sample(StandardNormal);
        out.trade_rates[i] = (action.trade_rates[i] + explore_trade * eps * z_nu).clamp(-trade_bound, trade_bound);
        out.gen_probs[i] = (action.gen_probs[i] + explore_gen * eps * z_p).clamp(0.0, 1.0);
    }
    out
}

/// Soft update of the clearing weight so both loss terms share a magnitude.
///
/// `weighted_clearing` is the clearing loss already multiplied by `varphi`.
pub fn update_clearing_weight(varphi: f64, q_loss: f64, weighted_clearing: f64, rate: f64, max: f64) -> f64 {
    if weighted_clearing < 1e-12 {
        return varphi;
    }
    ((1.0 - rate) * varphi + rate * varphi * q_loss / (2.0 * weighted_clearing)).min(max)
}

/// Target values `gamma`-free: zero at terminal next states.
pub fn target_values(target: &NashModel, next_states: &[MarketState]) -> Vec<Vec<f64>> {
    let n = target.market().num_agents();
    let live: Vec<usize> = (0..next_states.len())
        .filter(|&m| !target.market().is_terminal(&next_states[m]))
        .collect();
    let live_states: Vec<MarketState> = live.iter().map(|&m| next_states[m].clone()).collect();
    let mut out = vec![vec![0.0; n]; next_states.len()];
    for (values, &m) in target.values(&live_states).into_iter().zip(&live) {
        out[m] = values;
    }
    out
}

/// Loss and gradient for a batch whose online forward pass is already available.
pub(crate) fn loss_from_forward(
    online: &NashModel,
    fwd: &BatchForward,
    tilde_values: &[Vec<f64>],
    batch: &Batch,
    gamma: f64,
    varphi: f64,
    clearing: bool,
) -> LossAndGrad {
    let market = online.market();
    let n = market.num_agents();
    let layout = online.layout();
    let batch_size = batch.len();
    let inv_m = 1.0 / batch_size as f64;
    let mut d_out: Vec<Matrix> = market
        .classes()
        .iter()
        .map(|c| Matrix::zeros(batch_size * c.population, layout.output_dim()))
        .collect();
    let rows: Vec<(usize, usize)> = (0..n).map(|i| online.row_index(0, i)).collect();
    let locate = |m: usize, i: usize| {
        let (class, slot) = rows[i];
        (class, m * market.classes()[class].population + slot)
    };

    let mut q_sum = 0.0;
    let mut clear_sum = 0.0;
    let mut mu_grad = vec![[0.0f64; 2]; n];
    for m in 0..batch_size {
        let heads = &fwd.heads[m];
        mu_grad.iter_mut().for_each(|g| *g = [0.0; 2]);
        if clearing {
            let s: f64 = heads.iter().map(|h| h.mu[0]).sum();
            clear_sum += s * s;
            for g in mu_grad.iter_mut() {
                g[0] += varphi * 2.0 * s * inv_m;
            }
        }
        for i in 0..n {
            let adv = advantage_with_grad(heads, &batch.actions[m], i);
            let residual = heads[i].value + adv.value - batch.rewards[m][i] - gamma * tilde_values[m][i];
            q_sum += residual * residual;
            let w = 2.0 * residual * inv_m;
            let mut own = adv.own;
            own.scale(w);
            own.value = w;
            own.mu[0] += mu_grad[i][0];
            own.mu[1] += mu_grad[i][1];
            mu_grad[i] = [0.0; 2];
            let (class, row) = locate(m, i);
            let raw = fwd.caches[class].output().row(row);
            backprop(raw, layout, online.scales(class), &own, d_out[class].row_mut(row));
            for (slot, j) in (0..n).filter(|&j| j != i).enumerate() {
                let g = adv.others_mu[slot];
                if j < i {
                    // Agent j's row was already flushed; push straight through.
                    let (cj, rj) = locate(m, j);
                    let raw_j = fwd.caches[cj].output().row(rj);
                    backprop_mu(raw_j, online.scales(cj), [w * g[0], w * g[1]], d_out[cj].row_mut(rj));
                } else {
                    mu_grad[j][0] += w * g[0];
                    mu_grad[j][1] += w * g[1];
                }
            }
        }
    }
    let q_loss = q_sum * inv_m;
    let clearing_loss = clear_sum * inv_m;
    let grads = online.backward(fwd, &d_out);
    LossAndGrad {
        q_loss,
        clearing_loss,
        total: q_loss + varphi * clearing_loss,
        grads,
    }
}

/// Total loss (regression plus weighted clearing) and its gradient.
pub fn total_loss(
    online: &NashModel,
    target: &NashModel,
    batch: &Batch,
    gamma: f64,
    varphi: f64,
) -> LossAndGrad {
    let fwd = online.forward_batch(&batch.states);
    let tilde = target_values(target, &batch.next_states);
    let clearing = online.market().num_agents() > 1;
    loss_from_forward(online, &fwd, &tilde, batch, gamma, varphi, clearing)
}

/// Stateful trainer; one call to [`Trainer::run_epoch`] is one iteration.
pub struct Trainer {
    cfg: TrainConfig,
    online: NashModel,
    target: NashModel,
    adam: Vec<AdamState>,
    varphi: f64,
    rng: ChaCha8Rng,
    epoch: usize,
    history: Vec<LossReport>,
}

/// Largest absolute parameter tolerated before training is declared diverged.
const PARAM_LIMIT: f64 = 1e6;

impl Trainer {
    pub fn new(market: Market, net: NetConfig, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let online = NashModel::new(market, net)?;
        let target = online.clone();
        let adam = online
            .nets()
            .iter()
            .map(|n| AdamState::new(n.num_params(), cfg.lr))
            .collect();
        Ok(Self {
            varphi: cfg.initial_clearing_weight,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            online,
            target,
            adam,
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn online(&self) -> &NashModel {
        &self.online
    }

    pub fn target(&self) -> &NashModel {
        &self.target
    }

    pub fn clearing_weight(&self) -> f64 {
        self.varphi
    }

    pub fn history(&self) -> &[LossReport] {
        &self.history
    }

    pub fn epochs_completed(&self) -> usize {
        self.epoch
    }

    /// Build a batch with the current policy and exploration level.
    fn collect_batch(&mut self, eps: f64) -> Result<(BatchForward, Batch), TrainError> {
        let market = self.online.market();
        let states = market.sample_states(self.cfg.batch_size, &mut self.rng);
        let fwd = self.online.forward_batch(&states);
        let bound = market.config().trade_bound;
        let mut actions = Vec::with_capacity(states.len());
        let mut rewards = Vec::with_capacity(states.len());
        let mut next_states = Vec::with_capacity(states.len());
        for (state, nash) in states.iter().zip(fwd.nash_actions()) {
            let action = apply_exploration(
                &nash,
                eps,
                self.cfg.explore_trade,
                self.cfg.explore_gen,
                bound,
                &mut self.rng,
            );
            let out = market.step_with_rng(state, &action, &mut self.rng)?;
            actions.push(action);
            rewards.push(out.rewards);
            next_states.push(out.next_state);
        }
        Ok((
            fwd,
            Batch {
                states,
                actions,
                rewards,
                next_states,
            },
        ))
    }

    pub fn run_epoch(&mut self) -> Result<LossReport, TrainError> {
        let epoch = self.epoch;
        let eps = self.cfg.epsilon(epoch);
        let lr = self.cfg.learning_rate(epoch);
        let (fwd, batch) = self.collect_batch(eps)?;
        let tilde = target_values(&self.target, &batch.next_states);
        let clearing = self.cfg.market_clearing && self.online.market().num_agents() > 1;
        let loss = loss_from_forward(&self.online, &fwd, &tilde, &batch, self.cfg.gamma, self.varphi, clearing);
        if !(loss.total.is_finite()) {
            return Err(TrainError::Diverged {
                epoch,
                reason: format!("non-finite loss (q = {}, clearing = {})", loss.q_loss, loss.clearing_loss),
            });
        }
        for ((net, grad), opt) in self.online.nets_mut().iter_mut().zip(&loss.grads).zip(&mut self.adam) {
            opt.lr = lr;
            adam_step(net.params_mut(), grad, opt).map_err(|e| TrainError::Diverged {
                epoch,
                reason: e.to_string(),
            })?;
        }
        if let Some(bad) = self
            .online
            .nets()
            .iter()
            .flat_map(|n| n.params())
            .find(|p| !(p.abs() <= PARAM_LIMIT))
        {
            return Err(TrainError::Diverged {
                epoch,
                reason: format!("parameter magnitude {bad} exceeds {PARAM_LIMIT}"),
            });
        }
        for (t, o) in self.target.nets_mut().iter_mut().zip(self.online.nets()) {
            soft_update(t.params_mut(), o.params(), self.cfg.target_update_rate)?;
        }
        let report = LossReport {
            epoch,
            q_loss: loss.q_loss,
            clearing_loss: loss.clearing_loss,
            total: loss.total,
            varphi: self.varphi,
            lr,
            eps,
        };
        self.varphi = update_clearing_weight(
            self.varphi,
            loss.q_loss,
            self.varphi * loss.clearing_loss,
            self.cfg.clearing_update_rate,
            self.cfg.max_clearing_weight,
        );
        self.epoch += 1;
        self.history.push(report);
        Ok(report)
    }

    /// Run the remaining epochs; `progress` sees every report.
    pub fn run<F: FnMut(&LossReport)>(&mut self, mut progress: F) -> Result<(), TrainError> {
        while self.epoch < self.cfg.epochs {
            let report = self.run_epoch()?;
            progress(&report);
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            online: self.online.clone(),
            target: self.target.clone(),
            train_seed: self.cfg.seed,
            epochs_completed: self.epoch,
            clearing_weight: self.varphi,
        }
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<LossReport>,
}

/// Train from scratch for `cfg.epochs` epochs.
pub fn train(market: Market, net: NetConfig, cfg: TrainConfig) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(market, net, cfg)?;
    trainer.run(|_| {})?;
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        history: trainer.history,
    })
}

/// Loss history as CSV: `epoch,q_loss,clearing_loss,varphi,lr,eps`.
pub fn loss_csv(history: &[LossReport], meta: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {meta}\n"));
    out.push_str("epoch,q_loss,clearing_loss,varphi,lr,eps\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.q_loss, r.clearing_loss, r.varphi, r.lr, r.eps
        ));
    }
    out
}

pub fn write_loss_csv(history: &[LossReport], meta: &str, path: &Path) -> std::io::Result<()> {
    let mut buf = Vec::new();
    buf.write_all(loss_csv(history, meta).as_bytes())?;
    write_atomic(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{AgentClass, MarketConfig};
    use crate::nets::{grad_check, nash_action_of, Activation};
    use crate::presets;

    fn tiny_net(seed: u64) -> NetConfig {
        NetConfig {
            hidden_layers: 2,
            nodes_per_layer: 12,
            activation: Activation::Silu,
            seed,
        }
    }

    #[test]
    fn exploration_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = JointAction {
            trade_rates: vec![40.0, -3.0],
            gen_probs: vec![0.5, 0.0],
        };
        assert_eq!(apply_exploration(&a, 0.0, 20.0, 0.5, 40.0, &mut rng), a);
        let huge = apply_exploration(&a, 1e9, 20.0, 0.5, 40.0, &mut rng);
        for i in 0..2 {
            assert_eq!(huge.trade_rates[i].abs(), 40.0);
            assert!(huge.gen_probs[i] == 0.0 || huge.gen_probs[i] == 1.0);
        }
    }

    #[test]
    fn exploration_std_matches_clipped_normal() {
        // p = 0.5 with noise sd 0.5 clipped to [0, 1]: X = clip(0.5 + 0.5 Z).
        // With Y = 0.5 Z clipped to [-0.5, 0.5] (c = 1 in Z units):
        // Var(Y) = 0.25 * [ (2 Phi(1) - 1) - 2 phi(1) + 2 (1 - Phi(1)) ].
        let phi1 = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let cdf1 = 0.841_344_746_068_542_9;
        let var = 0.25 * ((2.0 * cdf1 - 1.0) - 2.0 * phi1 + 2.0 * (1.0 - cdf1));
        let sd = var.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws = 100_000;
        let base = JointAction {
            trade_rates: vec![0.0],
            gen_probs: vec![0.5],
        };
        let xs: Vec<f64> = (0..draws)
            .map(|_| apply_exploration(&base, 1.0, 0.0, 0.5, 40.0, &mut rng).gen_probs[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / draws as f64;
        let sample_var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / draws as f64;
        let se_var = ((m4 - sample_var * sample_var) / draws as f64).sqrt();
        let se_sd = se_var / (2.0 * sd);
        assert!((sample_var.sqrt() - sd).abs() < 3.0 * se_sd, "sd {} vs {sd}", sample_var.sqrt());
    }

    #[test]
    fn clearing_weight_examples() {
        let inf = f64::INFINITY;
        assert!((update_clearing_weight(50.0, 100.0, 25.0, 0.25, inf) - 62.5).abs() < 1e-12);
        assert_eq!(update_clearing_weight(50.0, 80.0, 40.0, 0.25, inf), 50.0);
        assert_eq!(update_clearing_weight(50.0, 80.0, 3.0, 0.0, inf), 50.0);
        assert_eq!(update_clearing_weight(50.0, 80.0, 0.0, 0.25, inf), 50.0);
        assert_eq!(update_clearing_weight(50.0, 100.0, 25.0, 0.25, 60.0), 60.0);
    }

    #[test]
    fn schedules_are_monotone() {
        let cfg = TrainConfig {
            epochs: 1000,
            ..TrainConfig::with_trade_bound(40.0)
        };
        assert_eq!(cfg.epsilon(0), 1.0);
        assert!((cfg.epsilon(400) - (1.0 - 0.98 * 0.5)).abs() < 1e-12);
        assert!((cfg.epsilon(800) - 0.02).abs() < 1e-12);
        assert!((cfg.epsilon(999) - 0.02).abs() < 1e-12);
        for e in 1..1000 {
            assert!(cfg.epsilon(e) <= cfg.epsilon(e - 1));
        }
        assert_eq!(cfg.learning_rate(24), 1e-3);
        assert!((cfg.learning_rate(25) - 0.99e-3).abs() < 1e-18);
        let long = TrainConfig {
            lr_decay_factor: 0.5,
            ..cfg
        };
        assert_eq!(long.learning_rate(10_000), 1e-5);
    }

    /// Heads forced into a chosen state by hand: residual loss arithmetic.
    #[test]
    fn loss_arithmetic_examples() {
        let market = presets::four_agent().market().unwrap();
        let model = NashModel::new(market.clone(), tiny_net(3)).unwrap();
        let state = market.initial_state();
        let heads = model.eval_all_heads(&state).unwrap();
        let nash = nash_action_of(&heads);
        let fwd = model.forward_batch(std::slice::from_ref(&state));
        let mut terminal = state.clone();
        terminal.time_index = market.num_steps();
        // Rewards chosen so the residual is one for every agent.
        let rewards: Vec<f64> = heads.iter().map(|h| h.value - 1.0).collect();
        let batch = Batch {
            states: vec![state.clone()],
            actions: vec![nash.clone()],
            rewards: vec![rewards],
            next_states: vec![terminal.clone()],
        };
        let tilde = vec![vec![0.0; 4]];
        let out = loss_from_forward(&model, &fwd, &tilde, &batch, 1.0, 50.0, false);
        assert!((out.q_loss - 4.0).abs() < 1e-9);
        assert_eq!(out.total, out.q_loss);

        // Perfect fit: zero loss.
        let exact: Vec<f64> = heads.iter().map(|h| h.value).collect();
        let batch = Batch {
            rewards: vec![exact],
            ..batch
        };
        let out = loss_from_forward(&model, &fwd, &tilde, &batch, 1.0, 50.0, false);
        assert!(out.q_loss < 1e-18);

        // Clearing term alone: sum of trade rates (1, 2, -1, 0) gives 4; weighted by 50.
        let s: f64 = nash.trade_rates.iter().sum();
        let out = loss_from_forward(&model, &fwd, &tilde, &batch, 1.0, 50.0, true);
        assert!((out.clearing_loss - s * s).abs() < 1e-9);
        assert!((out.total - out.q_loss - 50.0 * s * s).abs() < 1e-9);
    }

    fn frozen_batch(market: &Market, model: &NashModel, seed: u64, size: usize) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states = market.sample_states(size, &mut rng);
        let mut batch = Batch {
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
        };
        for (s, nash) in states.iter().zip(model.nash_actions(&states)) {
            let a = apply_exploration(&nash, 1.0, 20.0, 0.5, market.config().trade_bound, &mut rng);
            let out = market.step_with_rng(s, &a, &mut rng).unwrap();
            batch.states.push(s.clone());
            batch.actions.push(a);
            batch.rewards.push(out.rewards);
            batch.next_states.push(out.next_state);
        }
        batch
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        for preset in [presets::four_agent(), presets::eight_agent()] {
            let market = preset.market().unwrap();
            let online = NashModel::new(market.clone(), tiny_net(11)).unwrap();
            let mut target = NashModel::new(market.clone(), tiny_net(12)).unwrap();
            // Keep target values finite but distinct from the online ones.
            target.nets_mut()[0].params_mut()[0] += 0.1;
            let batch = frozen_batch(&market, &online, 5, 16);
            let out = total_loss(&online, &target, &batch, 1.0, 7.0);
            let analytic: Vec<f64> = out.grads.concat();
            let params = online.flat_params();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let indices: Vec<usize> = (0..200).map(|_| rng.random_range(0..params.len())).collect();
            let mut probe = online.clone();
            let report = grad_check(&params, &analytic, &indices, 1e-5, |p| {
                probe.set_flat_params(p).unwrap();
                total_loss(&probe, &target, &batch, 1.0, 7.0).total
            });
            assert!(report.max_rel_error < 1e-4, "{report:?}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let market = presets::four_agent().market().unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 16,
            seed: 3,
            ..TrainConfig::with_trade_bound(40.0)
        };
        let a = train(market.clone(), tiny_net(1), cfg.clone()).unwrap();
        let b = train(market, tiny_net(1), cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        for r in &a.history {
            assert!(r.varphi > 0.0);
            assert!(r.q_loss >= 0.0 && r.clearing_loss >= 0.0);
            assert!((r.total - r.q_loss - r.varphi * r.clearing_loss).abs() <= 1e-9 * r.total.abs().max(1.0));
        }
    }

    #[test]
    fn target_distance_shrinks_with_frozen_online() {
        let market = presets::four_agent().market().unwrap();
        let online = NashModel::new(market.clone(), tiny_net(1)).unwrap();
        let mut target = NashModel::new(market, tiny_net(2)).unwrap();
        let dist = |t: &NashModel| -> f64 {
            t.flat_params()
                .iter()
                .zip(online.flat_params())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let mut prev = dist(&target);
        for _ in 0..10 {
            for (t, o) in target.nets_mut().iter_mut().zip(online.nets()) {
                soft_update(t.params_mut(), o.params(), 0.05).unwrap();
            }
            let d = dist(&target);
            assert!((d - 0.95 * prev).abs() < 1e-9 * prev);
            prev = d;
        }
    }

    #[test]
    fn single_agent_toy_converges() {
        let cfg = MarketConfig {
            compliance_dates: vec![1.0],
            steps_per_period: vec![4],
            penalty: 50.0,
            friction: 2.0,
            price_impact: 0.5,
            volatility: 0.5,
            initial_price: 50.0,
            trade_bound: 10.0,
            trade_cost_dt: Default::default(),
            compliance_reset: Default::default(),
        };
        let market = Market::new(cfg, vec![AgentClass::new("solo", 1, 5.0, 1.0, 200.0)]).unwrap();
        let train_cfg = TrainConfig {
            epochs: 2000,
            batch_size: 64,
            seed: 2,
            lr_decay_factor: 1.0,
            ..TrainConfig::with_trade_bound(10.0)
        };
        let out = train(market, tiny_net(4), train_cfg).unwrap();
        let median = |xs: &mut Vec<f64>| {
            xs.sort_by(f64::total_cmp);
            xs[xs.len() / 2]
        };
        let mut first: Vec<f64> = out.history[..100].iter().map(|r| r.q_loss).collect();
        let mut last: Vec<f64> = out.history[1900..].iter().map(|r| r.q_loss).collect();
        let (a, b) = (median(&mut first), median(&mut last));
        assert!(b < 0.1 * a, "first {a}, last {b}");
    }
}
