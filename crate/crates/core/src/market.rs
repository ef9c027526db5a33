//! Discrete-time offset-credit market.
//!
//! The market holds `N` regulated agents grouped into classes. Each step an
//! agent picks a trade rate and a generation probability; inventories move by
//! the realised generation plus `rate * dt`, and the price follows a Brownian
//! bridge pinned to the penalty at every compliance date, shifted down by the
//! price impact of generated credits.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::MarketError;

/// Whether trading costs in the per-step reward are scaled by the step size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TradeCostDt {
    /// `(S nu + kappa/2 nu^2) dt`, consistent with the inventory update.
    #[default]
    Scaled,
    /// `S nu + kappa/2 nu^2` with no step-size factor.
    Unscaled,
}

/// What happens to inventories on a compliance date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ComplianceReset {
    /// Inventories persist; penalties are telescoped over every step.
    #[default]
    None,
    /// Requirement is submitted: `X <- (X - R)+` and the penalty is charged
    /// directly on the compliance date.
    Consume,
}

/// Global market parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    /// Compliance dates `T_1 < ... < T_L` in years (`T_0 = 0` implicit).
    pub compliance_dates: Vec<f64>,
    /// Grid steps per compliance period.
    pub steps_per_period: Vec<usize>,
    /// Penalty per missing credit.
    pub penalty: f64,
    /// Quadratic trading friction `kappa`.
    pub friction: f64,
    /// Price drop per generated credit `eta`.
    pub price_impact: f64,
    /// Bridge volatility `sigma`.
    pub volatility: f64,
    pub initial_price: f64,
    /// Bound on absolute trade rates.
    pub trade_bound: f64,
    #[serde(default)]
    pub trade_cost_dt: TradeCostDt,
    #[serde(default)]
    pub compliance_reset: ComplianceReset,
}

impl MarketConfig {
    pub fn num_periods(&self) -> usize {
        self.compliance_dates.len()
    }

    pub fn num_steps(&self) -> usize {
        self.steps_per_period.iter().sum()
    }

    pub fn horizon(&self) -> f64 {
        self.compliance_dates.last().copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        let bad = |msg: String| Err(MarketError::InvalidConfig(msg));
        let periods = self.num_periods();
        if periods == 0 {
            return bad("at least one compliance date is required".into());
        }
        if self.steps_per_period.len() != periods {
            return bad(format!(
                "steps_per_period has {} entries for {} compliance dates",
                self.steps_per_period.len(),
                periods
            ));
        }
        let mut prev = 0.0;
        for (l, (&date, &steps)) in self
            .compliance_dates
            .iter()
            .zip(&self.steps_per_period)
            .enumerate()
        {
            if !date.is_finite() || date <= prev {
                return bad(format!("compliance date {} ({date}) must exceed {prev}", l + 1));
            }
            if steps == 0 {
                return bad(format!("period {} has zero steps", l + 1));
            }
            prev = date;
        }
        for (name, value) in [
            ("penalty", self.penalty),
            ("friction", self.friction),
            ("price_impact", self.price_impact),
            ("volatility", self.volatility),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative, got {value}"));
            }
        }
        if !self.initial_price.is_finite() {
            return bad("initial_price must be finite".into());
        }
        if !(self.trade_bound.is_finite() && self.trade_bound > 0.0) {
            return bad(format!("trade_bound must be positive, got {}", self.trade_bound));
        }
        Ok(())
    }
}

/// Per-class agent parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentClass {
    pub label: String,
    pub population: usize,
    /// Credits owed on every compliance date.
    pub requirement: f64,
    /// Credits produced per generation event.
    pub gen_size: f64,
    /// Cost per generation event.
    pub gen_cost: f64,
}

impl AgentClass {
    pub fn new(label: &str, population: usize, requirement: f64, gen_size: f64, gen_cost: f64) -> Self {
        Self {
            label: label.to_string(),
            population,
            requirement,
            gen_size,
            gen_cost,
        }
    }

    fn validate(&self) -> Result<(), MarketError> {
        if self.population == 0 {
            return Err(MarketError::InvalidConfig(format!(
                "class {} has zero population",
                self.label
            )));
        }
        for (name, value) in [
            ("requirement", self.requirement),
            ("gen_size", self.gen_size),
            ("gen_cost", self.gen_cost),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(MarketError::InvalidConfig(format!(
                    "class {}: {name} must be finite and nonnegative, got {value}",
                    self.label
                )));
            }
        }
        Ok(())
    }
}

/// MDP state: grid index, price, and every agent's inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketState {
    pub time_index: usize,
    pub price: f64,
    pub inventories: Vec<f64>,
}

/// Trade rates and generation probabilities for all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAction {
    pub trade_rates: Vec<f64>,
    pub gen_probs: Vec<f64>,
}

impl JointAction {
    pub fn idle(n: usize) -> Self {
        Self {
            trade_rates: vec![0.0; n],
            gen_probs: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.trade_rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trade_rates.is_empty()
    }

    /// Agent `i`'s action as `(trade rate, generation probability)`.
    pub fn agent(&self, i: usize) -> [f64; 2] {
        [self.trade_rates[i], self.gen_probs[i]]
    }
}

/// Exogenous randomness for one step: the price shock and one uniform per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct StepNoise {
    pub z: f64,
    pub uniforms: Vec<f64>,
}

impl StepNoise {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Self {
        let z = rng.sample(StandardNormal);
        let uniforms = (0..n).map(|_| rng.random::<f64>()).collect();
        Self { z, uniforms }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionOutcome {
    pub next_state: MarketState,
    pub rewards: Vec<f64>,
    pub gen_flags: Vec<bool>,
    pub noise: StepNoise,
}

/// Time grid: equal spacing inside each period, compliance dates on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    /// Period (0-based) containing `[t_k, t_{k+1})`, one entry per step.
    step_period: Vec<usize>,
    /// `true` at grid points that are compliance dates.
    compliance: Vec<bool>,
}

impl TimeGrid {
    fn new(cfg: &MarketConfig) -> Self {
        let k_total = cfg.num_steps();
        let mut times = Vec::with_capacity(k_total + 1);
        let mut step_period = Vec::with_capacity(k_total);
        let mut compliance = vec![false; k_total + 1];
        times.push(0.0);
        let mut start = 0.0;
        for (l, (&end, &steps)) in cfg
            .compliance_dates
            .iter()
            .zip(&cfg.steps_per_period)
            .enumerate()
        {
            let dt = (end - start) / steps as f64;
            for j in 1..=steps {
                let t = if j == steps { end } else { start + j as f64 * dt };
                times.push(t);
                step_period.push(l);
            }
            compliance[times.len() - 1] = true;
            start = end;
        }
        Self {
            times,
            step_period,
            compliance,
        }
    }

    pub fn num_steps(&self) -> usize {
        self.step_period.len()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    /// Period index of step `k` (the period whose end is the next compliance date).
    pub fn period_of_step(&self, k: usize) -> usize {
        self.step_period[k]
    }

    pub fn is_compliance_date(&self, k: usize) -> bool {
        self.compliance[k]
    }
}

/// Validated market: configuration, classes expanded to agents, and the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    cfg: MarketConfig,
    classes: Vec<AgentClass>,
    agent_class: Vec<usize>,
    grid: TimeGrid,
}

impl Market {
    pub fn new(cfg: MarketConfig, classes: Vec<AgentClass>) -> Result<Self, MarketError> {
        cfg.validate()?;
        if classes.is_empty() {
            return Err(MarketError::InvalidConfig("at least one agent class is required".into()));
        }
        for class in &classes {
            class.validate()?;
        }
        let agent_class = classes
            .iter()
            .enumerate()
            .flat_map(|(c, class)| std::iter::repeat_n(c, class.population))
            .collect();
        let grid = TimeGrid::new(&cfg);
        Ok(Self {
            cfg,
            classes,
            agent_class,
            grid,
        })
    }

    pub fn config(&self) -> &MarketConfig {
        &self.cfg
    }

    pub fn classes(&self) -> &[AgentClass] {
        &self.classes
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn num_agents(&self) -> usize {
        self.agent_class.len()
    }

    pub fn num_steps(&self) -> usize {
        self.grid.num_steps()
    }

    pub fn class_of(&self, agent: usize) -> usize {
        self.agent_class[agent]
    }

    pub fn agent_class(&self, agent: usize) -> &AgentClass {
        &self.classes[self.agent_class[agent]]
    }

    /// Agents belonging to class `c`, in ascending order.
    pub fn agents_in_class(&self, c: usize) -> Vec<usize> {
        (0..self.num_agents())
            .filter(|&i| self.agent_class[i] == c)
            .collect()
    }

    /// Cost of total inaction from inventory `x0`: `L p (R - x0)+`.
    pub fn benchmark(&self, agent: usize, x0: f64) -> f64 {
        -(self.cfg.num_periods() as f64) * penalty_cost(x0, self.agent_class(agent).requirement, self.cfg.penalty)
    }

    pub fn initial_state(&self) -> MarketState {
        MarketState {
            time_index: 0,
            price: self.cfg.initial_price,
            inventories: vec![0.0; self.num_agents()],
        }
    }

    pub fn is_terminal(&self, state: &MarketState) -> bool {
        state.time_index >= self.num_steps()
    }

    /// Number of compliance periods still open at step `k`: `L - #{T_l <= t_k}`.
    pub fn compliance_multiplier(&self, k: usize) -> Result<f64, MarketError> {
        if k >= self.num_steps() {
            return Err(MarketError::IndexOutOfRange {
                index: k,
                num_steps: self.num_steps(),
            });
        }
        Ok((self.cfg.num_periods() - self.grid.period_of_step(k)) as f64)
    }

    /// Next compliance date strictly after `t_k`.
    pub fn next_compliance_date(&self, k: usize) -> f64 {
        self.cfg.compliance_dates[self.grid.period_of_step(k)]
    }

    /// One step of the pinned bridge with generation impact.
    pub fn price_step(&self, price: f64, k: usize, gen_flags: &[bool], z: f64) -> f64 {
        let p = self.cfg.penalty;
        if self.grid.is_compliance_date(k + 1) {
            return p;
        }
        let t = self.grid.time(k);
        let t_next = self.grid.time(k + 1);
        let dt = t_next - t;
        let end = self.next_compliance_date(k);
        let impact: f64 = gen_flags
            .iter()
            .enumerate()
            .filter(|(_, &g)| g)
            .map(|(n, _)| self.agent_class(n).gen_size)
            .sum();
        let remaining = end - t;
        let shifted = price - self.cfg.price_impact * impact;
        shifted * (end - t_next) / remaining
            + p * dt / remaining
            + self.cfg.volatility * (dt * (end - t_next) / remaining).sqrt() * z
    }

    fn check_action(&self, action: &JointAction) -> Result<(), MarketError> {
        let n = self.num_agents();
        if action.trade_rates.len() != n || action.gen_probs.len() != n {
            return Err(MarketError::DimensionMismatch {
                expected: n,
                got: action.trade_rates.len().min(action.gen_probs.len()),
            });
        }
        let bound = self.cfg.trade_bound * (1.0 + 1e-12);
        for i in 0..n {
            let nu = action.trade_rates[i];
            if !(nu.is_finite() && nu.abs() <= bound) {
                return Err(MarketError::InvalidAction {
                    agent: i,
                    reason: format!("trade rate {nu} exceeds bound {}", self.cfg.trade_bound),
                });
            }
            let prob = action.gen_probs[i];
            if !(0.0..=1.0).contains(&prob) {
                return Err(MarketError::InvalidAction {
                    agent: i,
                    reason: format!("generation probability {prob} outside [0, 1]"),
                });
            }
        }
        Ok(())
    }

    fn trade_cost(&self, price: f64, nu: f64, dt: f64) -> f64 {
        let cost = price * nu + 0.5 * self.cfg.friction * nu * nu;
        match self.cfg.trade_cost_dt {
            TradeCostDt::Scaled => cost * dt,
            TradeCostDt::Unscaled => cost,
        }
    }

    /// Next inventory and reward of agent `i` for a realised generation outcome.
    ///
    /// Performs no validation; `k` must be a non-terminal index.
    pub fn agent_transition(&self, i: usize, k: usize, price: f64, x: f64, nu: f64, generated: bool) -> (f64, f64) {
        let ac = self.agent_class(i);
        let dt = self.grid.dt(k);
        let penalty = self.cfg.penalty;
        let x_next = x + if generated { ac.gen_size } else { 0.0 } + nu * dt;
        let running = self.trade_cost(price, nu, dt) + if generated { ac.gen_cost } else { 0.0 };
        match self.cfg.compliance_reset {
            ComplianceReset::None => {
                let multiplier = (self.cfg.num_periods() - self.grid.period_of_step(k)) as f64;
                let g = partial_penalty(x, x_next, ac.requirement, penalty);
                (x_next, -multiplier * g - running)
            }
            ComplianceReset::Consume if self.grid.is_compliance_date(k + 1) => (
                (x_next - ac.requirement).max(0.0),
                -penalty_cost(x_next, ac.requirement, penalty) - running,
            ),
            ComplianceReset::Consume => (x_next, -running),
        }
    }

    /// Advance one step with explicit noise.
    pub fn step(
        &self,
        state: &MarketState,
        action: &JointAction,
        noise: StepNoise,
    ) -> Result<TransitionOutcome, MarketError> {
        let n = self.num_agents();
        let k = state.time_index;
        if k >= self.num_steps() {
            return Err(MarketError::TerminalState(k));
        }
        if state.inventories.len() != n {
            return Err(MarketError::DimensionMismatch {
                expected: n,
                got: state.inventories.len(),
            });
        }
        if noise.uniforms.len() != n {
            return Err(MarketError::DimensionMismatch {
                expected: n,
                got: noise.uniforms.len(),
            });
        }
        self.check_action(action)?;

        let gen_flags: Vec<bool> = action
            .gen_probs
            .iter()
            .zip(&noise.uniforms)
            .map(|(&p, &u)| p > u)
            .collect();
        let price_next = self.price_step(state.price, k, &gen_flags, noise.z);
        let mut inventories = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        for i in 0..n {
            let (x_next, reward) =
                self.agent_transition(i, k, state.price, state.inventories[i], action.trade_rates[i], gen_flags[i]);
            inventories.push(x_next);
            rewards.push(reward);
        }

        Ok(TransitionOutcome {
            next_state: MarketState {
                time_index: k + 1,
                price: price_next,
                inventories,
            },
            rewards,
            gen_flags,
            noise,
        })
    }

    /// Advance one step drawing `Z` and the uniforms from `rng`.
    pub fn step_with_rng<R: Rng + ?Sized>(
        &self,
        state: &MarketState,
        action: &JointAction,
        rng: &mut R,
    ) -> Result<TransitionOutcome, MarketError> {
        let noise = StepNoise::draw(rng, self.num_agents());
        self.step(state, action, noise)
    }

    /// Random non-terminal training states.
    ///
    /// Grid index uniform on `0..K`, price uniform on `[max(0, p - 4 sigma), p + 4 sigma]`,
    /// inventory of agent `i` uniform on `[0, 1.5 R_i L]`.
    pub fn sample_states<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<MarketState> {
        let p = self.cfg.penalty;
        let band = 4.0 * self.cfg.volatility;
        let lo = (p - band).max(0.0);
        let hi = p + band;
        let periods = self.cfg.num_periods() as f64;
        let caps: Vec<f64> = (0..self.num_agents())
            .map(|i| 1.5 * self.agent_class(i).requirement * periods)
            .collect();
        (0..batch_size)
            .map(|_| {
                let time_index = rng.random_range(0..self.num_steps());
                let price = lo + (hi - lo) * rng.random::<f64>();
                let inventories = caps.iter().map(|&cap| cap * rng.random::<f64>()).collect();
                MarketState {
                    time_index,
                    price,
                    inventories,
                }
            })
            .collect()
    }
}

/// Compliance penalty `p (R - x)+`.
pub fn penalty_cost(x: f64, requirement: f64, penalty: f64) -> f64 {
    penalty * (requirement - x).max(0.0)
}

/// Change in the compliance penalty between consecutive inventories.
pub fn partial_penalty(x: f64, x_next: f64, requirement: f64, penalty: f64) -> f64 {
    penalty * ((requirement - x_next).max(0.0) - (requirement - x).max(0.0))
}
