use crate::market::{Market, MarketState};

/// Encodes a market state from one agent's point of view.
///
/// Layout: `[t / T_L, (T_l - t) / (T_l - T_{l-1}), S / p, X_i / R_i, X_j / R_j ...]`
/// with the other agents in ascending index order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEncoder {
    horizon: f64,
    price_scale: f64,
    inventory_scale: Vec<f64>,
    period_bounds: Vec<(f64, f64)>,
    step_period: Vec<usize>,
    times: Vec<f64>,
}

impl FeatureEncoder {
    pub fn new(market: &Market) -> Self {
        let cfg = market.config();
        let scale_or_one = |v: f64| if v > 0.0 { v } else { 1.0 };
        let mut start = 0.0;
        let period_bounds = cfg
            .compliance_dates
            .iter()
            .map(|&end| {
                let b = (start, end);
                start = end;
                b
            })
            .collect();
        Self {
            horizon: cfg.horizon(),
            price_scale: scale_or_one(cfg.penalty),
            inventory_scale: (0..market.num_agents())
                .map(|i| scale_or_one(market.agent_class(i).requirement))
                .collect(),
            period_bounds,
            step_period: (0..market.num_steps())
                .map(|k| market.grid().period_of_step(k))
                .collect(),
            times: market.grid().times().to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        3 + self.inventory_scale.len()
    }

    pub fn encode_into(&self, state: &MarketState, agent: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        let k = state.time_index;
        let t = self.times[k.min(self.times.len() - 1)];
        let to_next = match self.step_period.get(k) {
            Some(&l) => {
                let (lo, hi) = self.period_bounds[l];
                (hi - t) / (hi - lo)
            }
            None => 0.0,
        };
        out[0] = t / self.horizon;
        out[1] = to_next;
        out[2] = state.price / self.price_scale;
        out[3] = state.inventories[agent] / self.inventory_scale[agent];
        let mut slot = 4;
        for (j, (&x, &r)) in state.inventories.iter().zip(&self.inventory_scale).enumerate() {
            if j != agent {
                out[slot] = x / r;
                slot += 1;
            }
        }
    }

    pub fn encode(&self, state: &MarketState, agent: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.encode_into(state, agent, &mut out);
        out
    }
}
