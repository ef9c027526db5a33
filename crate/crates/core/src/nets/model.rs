use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::FeatureEncoder;
use super::heads::{decode, HeadLayout, HeadScales, NashHeads};
use super::linalg::Matrix;
use super::mlp::{param_count, Activation, ForwardCache, Mlp};
use crate::error::NetError;
use crate::market::{JointAction, Market, MarketState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub hidden_layers: usize,
    pub nodes_per_layer: usize,
    #[serde(default)]
    pub activation: Activation,
    pub seed: u64,
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.hidden_layers == 0 || self.nodes_per_layer == 0 {
            return Err(NetError::InvalidConfig(format!(
                "need at least one hidden layer and one node, got {} x {}",
                self.hidden_layers, self.nodes_per_layer
            )));
        }
        Ok(())
    }

    fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(self.nodes_per_layer, self.hidden_layers));
        sizes.push(output);
        sizes
    }
}

/// One network per agent class; agents of a class share parameters and are
/// fed own-first features.
#[derive(Debug, Clone, PartialEq)]
pub struct NashModel {
    market: Market,
    net: NetConfig,
    layout: HeadLayout,
    encoder: FeatureEncoder,
    scales: Vec<HeadScales>,
    nets: Vec<Mlp>,
}

/// Output of a batched forward pass over a list of states.
pub struct BatchForward {
    pub(crate) caches: Vec<ForwardCache>,
    /// `heads[m][i]` for state `m` and agent `i`.
    pub heads: Vec<Vec<NashHeads>>,
}

impl BatchForward {
    pub fn nash_actions(&self) -> Vec<JointAction> {
        self.heads.iter().map(|h| nash_action_of(h)).collect()
    }
}

pub fn nash_action_of(heads: &[NashHeads]) -> JointAction {
    JointAction {
        trade_rates: heads.iter().map(|h| h.mu[0]).collect(),
        gen_probs: heads.iter().map(|h| h.mu[1]).collect(),
    }
}

fn class_scales(market: &Market, class: usize) -> HeadScales {
    let cfg = market.config();
    let periods = cfg.num_periods() as f64;
    let class = &market.classes()[class];
    HeadScales {
        value: (periods * cfg.penalty * class.requirement).max(1.0),
        advantage: (periods * cfg.penalty).max(1.0),
        trade_bound: cfg.trade_bound,
    }
}

impl NashModel {
    /// Fresh model with parameters drawn from `net.seed`.
    pub fn new(market: Market, net: NetConfig) -> Result<Self, NetError> {
        net.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(net.seed);
        let layout = HeadLayout::new(market.num_agents());
        let encoder = FeatureEncoder::new(&market);
        let sizes = net.sizes(encoder.dim(), layout.output_dim());
        let nets = (0..market.classes().len())
            .map(|_| Mlp::new(&sizes, net.activation, &mut rng))
            .collect();
        let scales = (0..market.classes().len()).map(|c| class_scales(&market, c)).collect();
        Ok(Self {
            market,
            net,
            layout,
            encoder,
            scales,
            nets,
        })
    }

    /// Rebuild a model from per-class parameter vectors.
    pub fn from_params(market: Market, net: NetConfig, params: Vec<Vec<f64>>) -> Result<Self, NetError> {
        net.validate()?;
        let layout = HeadLayout::new(market.num_agents());
        let encoder = FeatureEncoder::new(&market);
        let sizes = net.sizes(encoder.dim(), layout.output_dim());
        if params.len() != market.classes().len() {
            return Err(NetError::ShapeMismatch {
                expected: market.classes().len(),
                got: params.len(),
            });
        }
        let expected = param_count(&sizes);
        let nets = params
            .into_iter()
            .map(|p| {
                let got = p.len();
                Mlp::from_params(&sizes, net.activation, p).ok_or(NetError::ShapeMismatch { expected, got })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let scales = (0..market.classes().len()).map(|c| class_scales(&market, c)).collect();
        Ok(Self {
            market,
            net,
            layout,
            encoder,
            scales,
            nets,
        })
    }

    pub fn market(&self) -> &Market {
        &self.market
    }

    pub fn net_config(&self) -> &NetConfig {
        &self.net
    }

    pub fn layout(&self) -> HeadLayout {
        self.layout
    }

    pub fn encoder(&self) -> &FeatureEncoder {
        &self.encoder
    }

    pub fn scales(&self, class: usize) -> &HeadScales {
        &self.scales[class]
    }

    pub fn nets(&self) -> &[Mlp] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [Mlp] {
        &mut self.nets
    }

    pub fn num_params(&self) -> usize {
        self.nets.iter().map(Mlp::num_params).sum()
    }

    pub fn check_finite(&self) -> Result<(), NetError> {
        let mut offset = 0;
        for net in &self.nets {
            if let Some(i) = net.params().iter().position(|p| !p.is_finite()) {
                return Err(NetError::NonFiniteParameter(offset + i));
            }
            offset += net.num_params();
        }
        Ok(())
    }

    fn check_state(&self, state: &MarketState) -> Result<(), NetError> {
        let n = self.market.num_agents();
        if state.inventories.len() != n {
            return Err(crate::error::MarketError::DimensionMismatch {
                expected: n,
                got: state.inventories.len(),
            }
            .into());
        }
        Ok(())
    }

    /// Features for every (state, agent-in-class) pair, state-major.
    fn class_inputs(&self, agents: &[usize], states: &[MarketState]) -> Matrix {
        let dim = self.encoder.dim();
        let mut input = Matrix::zeros(states.len() * agents.len(), dim);
        for (m, s) in states.iter().enumerate() {
            for (slot, &i) in agents.iter().enumerate() {
                self.encoder.encode_into(s, i, input.row_mut(m * agents.len() + slot));
            }
        }
        input
    }

    pub fn eval_heads(&self, state: &MarketState, agent: usize) -> Result<NashHeads, NetError> {
        self.check_finite()?;
        self.check_state(state)?;
        let class = self.market.class_of(agent);
        let input = Matrix::from_vec(1, self.encoder.dim(), self.encoder.encode(state, agent));
        let out = self.nets[class].predict(&input);
        Ok(decode(out.row(0), self.layout, &self.scales[class]))
    }

    pub fn eval_all_heads(&self, state: &MarketState) -> Result<Vec<NashHeads>, NetError> {
        self.check_finite()?;
        self.check_state(state)?;
        Ok(self.heads_batch(std::slice::from_ref(state)).remove(0))
    }

    /// Heads for every state and agent without keeping activations.
    pub fn heads_batch(&self, states: &[MarketState]) -> Vec<Vec<NashHeads>> {
        let n = self.market.num_agents();
        let mut heads: Vec<Vec<Option<NashHeads>>> = vec![vec![None; n]; states.len()];
        for class in 0..self.nets.len() {
            let agents = self.market.agents_in_class(class);
            let out = self.nets[class].predict(&self.class_inputs(&agents, states));
            for m in 0..states.len() {
                for (slot, &i) in agents.iter().enumerate() {
                    let raw = out.row(m * agents.len() + slot);
                    heads[m][i] = Some(decode(raw, self.layout, &self.scales[class]));
                }
            }
        }
        heads
            .into_iter()
            .map(|row| row.into_iter().map(|h| h.expect("every agent belongs to a class")).collect())
            .collect()
    }

    pub fn nash_actions(&self, states: &[MarketState]) -> Vec<JointAction> {
        self.heads_batch(states).iter().map(|h| nash_action_of(h)).collect()
    }

    /// Value heads only, `values[m][i]`.
    pub fn values(&self, states: &[MarketState]) -> Vec<Vec<f64>> {
        let n = self.market.num_agents();
        let mut values = vec![vec![0.0; n]; states.len()];
        for class in 0..self.nets.len() {
            let agents = self.market.agents_in_class(class);
            let out = self.nets[class].predict(&self.class_inputs(&agents, states));
            let scale = self.scales[class].value;
            for (m, row) in values.iter_mut().enumerate() {
                for (slot, &i) in agents.iter().enumerate() {
                    row[i] = scale * out.row(m * agents.len() + slot)[0];
                }
            }
        }
        values
    }

    /// Forward pass keeping activations for [`NashModel::backward`].
    pub fn forward_batch(&self, states: &[MarketState]) -> BatchForward {
        let n = self.market.num_agents();
        let mut heads: Vec<Vec<Option<NashHeads>>> = vec![vec![None; n]; states.len()];
        let mut caches = Vec::with_capacity(self.nets.len());
        for class in 0..self.nets.len() {
            let agents = self.market.agents_in_class(class);
            let cache = self.nets[class].forward(&self.class_inputs(&agents, states));
            for m in 0..states.len() {
                for (slot, &i) in agents.iter().enumerate() {
                    let raw = cache.output().row(m * agents.len() + slot);
                    heads[m][i] = Some(decode(raw, self.layout, &self.scales[class]));
                }
            }
            caches.push(cache);
        }
        BatchForward {
            caches,
            heads: heads
                .into_iter()
                .map(|row| row.into_iter().map(|h| h.expect("every agent belongs to a class")).collect())
                .collect(),
        }
    }

    pub(crate) fn row_index(&self, m: usize, agent: usize) -> (usize, usize) {
        let class = self.market.class_of(agent);
        let pop = self.market.classes()[class].population;
        let slot = (0..agent).filter(|&j| self.market.class_of(j) == class).count();
        (class, m * pop + slot)
    }

    /// Back-propagate per-class output gradients (rows laid out as in the forward pass).
    pub(crate) fn backward(&self, fwd: &BatchForward, d_out: &[Matrix]) -> Vec<Vec<f64>> {
        self.nets
            .iter()
            .zip(&fwd.caches)
            .zip(d_out)
            .map(|((net, cache), d)| {
                let mut g = vec![0.0; net.num_params()];
                net.backward(cache, d, &mut g);
                g
            })
            .collect()
    }

    /// Flattened parameters of every class network.
    pub fn flat_params(&self) -> Vec<f64> {
        self.nets.iter().flat_map(|n| n.params().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), NetError> {
        if flat.len() != self.num_params() {
            return Err(NetError::ShapeMismatch {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for net in &mut self.nets {
            let len = net.num_params();
            net.params_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::heads::advantage;
    use crate::presets;
    use rand::Rng;

    fn small_model(preset: &crate::config::ExperimentConfig) -> NashModel {
        let market = preset.market().unwrap();
        NashModel::new(
            market,
            NetConfig {
                hidden_layers: 2,
                nodes_per_layer: 16,
                activation: Activation::Silu,
                seed: 4,
            },
        )
        .unwrap()
    }

    #[test]
    fn heads_satisfy_invariants_on_random_states() {
        let model = small_model(&presets::four_agent());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let states = model.market().sample_states(64, &mut rng);
        let nu_bar = model.market().config().trade_bound;
        for (s, heads) in states.iter().zip(model.heads_batch(&states)) {
            let nash = nash_action_of(&heads);
            for (i, h) in heads.iter().enumerate() {
                assert!(h.mu[0].abs() <= nu_bar);
                assert!(h.mu[1] > 0.0 && h.mu[1] < 1.0);
                assert!(h.chol[0][0] > 0.0 && h.chol[1][1] > 0.0);
                assert!(advantage(&heads, &nash, i).abs() < 1e-9);
                let single = model.eval_heads(s, i).unwrap();
                assert!((single.value - h.value).abs() < 1e-9 * (1.0 + h.value.abs()));
            }
        }
    }

    #[test]
    fn own_action_grid_search_recovers_mu() {
        let model = small_model(&presets::four_agent());
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let nu_bar = model.market().config().trade_bound;
        for s in model.market().sample_states(10, &mut rng) {
            let heads = model.eval_all_heads(&s).unwrap();
            let nash = nash_action_of(&heads);
            let i = rng.random_range(0..4);
            let mut best = f64::NEG_INFINITY;
            for a in 0..=400 {
                for b in 0..=100 {
                    let mut act = nash.clone();
                    act.trade_rates[i] = -nu_bar + 2.0 * nu_bar * a as f64 / 400.0;
                    act.gen_probs[i] = b as f64 / 100.0;
                    best = best.max(advantage(&heads, &act, i));
                }
            }
            // Max over the box is attained at mu (A = 0); grid can only approach it.
            assert!(best <= 1e-12);
            let p11 = heads[i].p11();
            let cell = (2.0 * nu_bar / 400.0f64).max(0.01);
            assert!(best > -(p11[0][0] + p11[1][1]) * cell * cell - 1e-6);
        }
    }

    #[test]
    fn shared_class_is_permutation_symmetric() {
        let model = small_model(&presets::eight_agent());
        let mut s = model.market().initial_state();
        s.inventories = vec![3.0, 3.0, 5.0, 1.0, 2.0, 2.0, 7.0, 7.0];
        let heads = model.eval_all_heads(&s).unwrap();
        for (a, b) in [(0, 1), (4, 5), (6, 7)] {
            assert_eq!(heads[a], heads[b]);
        }
    }

    #[test]
    fn non_finite_params_are_rejected() {
        let mut model = small_model(&presets::four_agent());
        model.nets_mut()[1].params_mut()[3] = f64::NAN;
        let s = model.market().initial_state();
        assert!(matches!(model.eval_heads(&s, 0), Err(NetError::NonFiniteParameter(_))));
    }
}
