//! Ground-truth validators on small discretised games.
//!
//! Value functions live on a tensor grid of price times inventories and are
//! computed by backward induction. Price noise is integrated with
//! Gauss-Hermite quadrature and generation outcomes are enumerated exactly;
//! off-grid next states are read by multilinear interpolation.

pub mod grid;
pub mod quadrature;

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::config::OracleConfig;
use crate::error::{NetError, OracleError};
use crate::evaluation::Policy;
use crate::market::{JointAction, Market, MarketState};

pub use grid::{Axis, StateGrid};
pub use quadrature::GaussHermite;

/// Discretised game: state grid, action grid, and quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteGame {
    market: Market,
    grid: StateGrid,
    trade_grid: Vec<f64>,
    quadrature: GaussHermite,
    budget: usize,
}

/// Generation outcomes are enumerated as bitmasks, so the agent count stays small.
pub const MAX_AGENTS: usize = 4;

impl DiscreteGame {
    pub fn new(
        market: Market,
        grid: StateGrid,
        trade_nodes: usize,
        quadrature_nodes: usize,
        budget: usize,
    ) -> Result<Self, OracleError> {
        let n = market.num_agents();
        if n > MAX_AGENTS {
            return Err(OracleError::InvalidGame(format!("at most {MAX_AGENTS} agents, got {n}")));
        }
        if grid.inventories.len() != n {
            return Err(OracleError::InvalidGame(format!(
                "grid has {} inventory axes for {n} agents",
                grid.inventories.len()
            )));
        }
        if trade_nodes % 2 == 0 || quadrature_nodes == 0 {
            return Err(OracleError::InvalidGame(
                "trade grid must have an odd number of nodes and quadrature at least one".into(),
            ));
        }
        let bound = market.config().trade_bound;
        let trade_grid = if trade_nodes == 1 {
            vec![0.0]
        } else {
            let half = (trade_nodes / 2) as f64;
            (0..trade_nodes).map(|j| bound * (j as f64 - half) / half).collect()
        };
        Ok(Self {
            market,
            grid,
            trade_grid,
            quadrature: GaussHermite::new(quadrature_nodes),
            budget,
        })
    }

    /// Grid from an [`OracleConfig`]: prices on `p +- 4 sigma`, inventories on
    /// the configured range or one derived from the largest requirement.
    pub fn from_config(market: Market, cfg: &OracleConfig) -> Result<Self, OracleError> {
        let c = market.config();
        let band = (4.0 * c.volatility).max(1.0);
        let price = Axis::new((c.penalty - band).max(0.0), c.penalty + band, cfg.price_nodes)?;
        let [lo, hi] = match cfg.inventory_range {
            Some(range) => range,
            None => {
                let periods = c.num_periods() as f64;
                let need = (0..market.num_agents())
                    .map(|i| market.agent_class(i).requirement * periods)
                    .fold(1.0f64, f64::max);
                // Keep zero on a node: a fifth of the nodes sit below it.
                let below = (cfg.inventory_nodes - 1) / 5;
                let step = 1.5 * need / (cfg.inventory_nodes - 1 - below) as f64;
                [-(below as f64) * step, 1.5 * need]
            }
        };
        let axis = Axis::new(lo, hi, cfg.inventory_nodes)?;
        let grid = StateGrid::new(price, vec![axis; market.num_agents()]);
        Self::new(market, grid, cfg.trade_nodes, cfg.quadrature_nodes, cfg.budget)
    }

    pub fn market(&self) -> &Market {
        &self.market
    }

    pub fn grid(&self) -> &StateGrid {
        &self.grid
    }

    pub fn trade_grid(&self) -> &[f64] {
        &self.trade_grid
    }

    pub fn quadrature(&self) -> &GaussHermite {
        &self.quadrature
    }

    /// Grid actions per agent: trade nodes times generate or not.
    pub fn actions_per_agent(&self) -> usize {
        2 * self.trade_grid.len()
    }

    /// Action `a` as `(trade rate, generation probability)`; gen varies fastest.
    pub fn grid_action(&self, a: usize) -> [f64; 2] {
        [self.trade_grid[a / 2], (a % 2) as f64]
    }

    /// Index of the do-nothing action.
    pub fn idle_action(&self) -> usize {
        2 * (self.trade_grid.len() / 2)
    }

    /// Same ranges at twice the resolution in every grid.
    pub fn refined(&self) -> Self {
        let t = self.trade_grid.len();
        let trade_nodes = if t == 1 { 1 } else { 2 * (t - 1) + 1 };
        Self::new(
            self.market.clone(),
            self.grid.refined(),
            trade_nodes,
            self.quadrature.len(),
            self.budget,
        )
        .expect("refining a valid grid stays valid")
    }

    fn node_state(&self, k: usize, node: usize) -> MarketState {
        let inv = self.grid.inv_size();
        let mut inventories = vec![0.0; self.market.num_agents()];
        self.grid.inventory_point(node % inv, &mut inventories);
        MarketState {
            time_index: k,
            price: self.grid.price.value(node / inv),
            inventories,
        }
    }

    fn nearest_node(&self, state: &MarketState) -> usize {
        self.grid.price.nearest(state.price) * self.grid.inv_size() + self.grid.nearest_inventory_index(&state.inventories)
    }
}

/// Expected continuation for one price node: `tables[mask][t]` over the
/// inventory grid, already averaged over the price noise.
struct Continuation {
    tables: Vec<Vec<Vec<f64>>>,
}

impl Continuation {
    fn build(setup: &DiscreteGame, k: usize, price: f64, next: Option<&[Vec<f64>]>, ntab: usize) -> Self {
        let n = setup.market.num_agents();
        let inv = setup.grid.inv_size();
        let masks = 1usize << n;
        let Some(next) = next else {
            return Self {
                tables: vec![vec![vec![0.0; inv]; ntab]; masks],
            };
        };
        let mut flags = vec![false; n];
        let tables = (0..masks)
            .map(|mask| {
                for (i, f) in flags.iter_mut().enumerate() {
                    *f = mask >> i & 1 == 1;
                }
                let cells: Vec<(usize, f64, f64)> = setup
                    .quadrature
                    .nodes
                    .iter()
                    .zip(&setup.quadrature.weights)
                    .map(|(&z, &w)| {
                        let (j, frac) = setup.grid.price.locate(setup.market.price_step(price, k, &flags, z));
                        (j, frac, w)
                    })
                    .collect();
                next.iter()
                    .map(|table| {
                        let mut out = vec![0.0; inv];
                        for &(j, frac, w) in &cells {
                            let lo = &table[j * inv..(j + 1) * inv];
                            let hi = &table[(j + 1) * inv..(j + 2) * inv];
                            for (o, (a, b)) in out.iter_mut().zip(lo.iter().zip(hi)) {
                                *o += w * ((1.0 - frac) * a + frac * b);
                            }
                        }
                        out
                    })
                    .collect()
            })
            .collect();
        Self { tables }
    }
}

/// One state node during a backward sweep.
pub struct NodeCtx<'a> {
    setup: &'a DiscreteGame,
    cont: &'a Continuation,
    table_agents: &'a [usize],
    pub k: usize,
    pub node: usize,
    pub price: f64,
    pub inventories: &'a [f64],
    /// Action of the evaluated policy at this node, when there is one.
    pub policy_action: Option<&'a JointAction>,
}

impl NodeCtx<'_> {
    /// Expected reward plus continuation of every table's agent under `action`.
    pub fn q(&self, action: &JointAction, out: &mut [f64]) {
        let n = self.setup.market.num_agents();
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut x_next = [0.0f64; MAX_AGENTS];
        let mut rewards = [0.0f64; MAX_AGENTS];
        for mask in 0..1usize << n {
            let mut prob = 1.0;
            for i in 0..n {
                let p = action.gen_probs[i].clamp(0.0, 1.0);
                prob *= if mask >> i & 1 == 1 { p } else { 1.0 - p };
            }
            if prob == 0.0 {
                continue;
            }
            for i in 0..n {
                let (x, r) = self.setup.market.agent_transition(
                    i,
                    self.k,
                    self.price,
                    self.inventories[i],
                    action.trade_rates[i],
                    mask >> i & 1 == 1,
                );
                x_next[i] = x;
                rewards[i] = r;
            }
            for (t, &agent) in self.table_agents.iter().enumerate() {
                let cont = self.setup.grid.interp_inventory(&self.cont.tables[mask][t], &x_next[..n]);
                out[t] += prob * (rewards[agent] + cont);
            }
        }
    }
}

/// Values of a backward sweep: `values[k - k0][t][node]`, plus one `u32` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub k0: usize,
    pub values: Vec<Vec<Vec<f64>>>,
    pub aux: Vec<Vec<u32>>,
}

impl Sweep {
    /// Interpolated value of table `t` at a state on stage `k0`.
    pub fn value_at(&self, setup: &DiscreteGame, t: usize, state: &MarketState) -> f64 {
        setup.grid.interp(&self.values[0][t], state.price, &state.inventories)
    }
}

/// Policy actions at every node of every stage from `k0`.
pub fn policy_on_grid<P: Policy + ?Sized>(
    setup: &DiscreteGame,
    policy: &P,
    k0: usize,
) -> Result<Vec<Vec<JointAction>>, NetError> {
    (k0..setup.market.num_steps())
        .map(|k| {
            let states: Vec<MarketState> = (0..setup.grid.size()).map(|node| setup.node_state(k, node)).collect();
            policy.actions(&states)
        })
        .collect()
}

fn sweep<F>(
    setup: &DiscreteGame,
    k0: usize,
    table_agents: &[usize],
    actions: Option<&[Vec<JointAction>]>,
    solve: F,
) -> Result<Sweep, OracleError>
where
    F: Fn(&NodeCtx) -> Result<(Vec<f64>, u32), OracleError> + Sync,
{
    let steps = setup.market.num_steps();
    if k0 >= steps {
        return Err(OracleError::InvalidGame(format!("no decisions left at k = {k0}")));
    }
    let ntab = table_agents.len();
    let inv = setup.grid.inv_size();
    let n = setup.market.num_agents();
    let mut values: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut aux: Vec<Vec<u32>> = Vec::new();
    let mut next: Option<Vec<Vec<f64>>> = None;
    for k in (k0..steps).rev() {
        let stage_actions = actions.map(|a| &a[k - k0]);
        let rows = (0..setup.grid.price.n)
            .into_par_iter()
            .map(|j| {
                let price = setup.grid.price.value(j);
                let cont = Continuation::build(setup, k, price, next.as_deref(), ntab);
                let mut x = vec![0.0; n];
                let mut row_vals = vec![vec![0.0; inv]; ntab];
                let mut row_aux = vec![0u32; inv];
                for idx in 0..inv {
                    setup.grid.inventory_point(idx, &mut x);
                    let node = j * inv + idx;
                    let ctx = NodeCtx {
                        setup,
                        cont: &cont,
                        table_agents,
                        k,
                        node,
                        price,
                        inventories: &x,
                        policy_action: stage_actions.map(|a| &a[node]),
                    };
                    let (v, a) = solve(&ctx)?;
                    for t in 0..ntab {
                        row_vals[t][idx] = v[t];
                    }
                    row_aux[idx] = a;
                }
                Ok((row_vals, row_aux))
            })
            .collect::<Result<Vec<_>, OracleError>>()?;
        let mut stage = vec![Vec::with_capacity(setup.grid.size()); ntab];
        let mut stage_aux = Vec::with_capacity(setup.grid.size());
        for (row_vals, row_aux) in rows {
            for (t, v) in row_vals.into_iter().enumerate() {
                stage[t].extend(v);
            }
            stage_aux.extend(row_aux);
        }
        values.push(stage.clone());
        aux.push(stage_aux);
        next = Some(stage);
    }
    values.reverse();
    aux.reverse();
    Ok(Sweep { k0, values, aux })
}

fn tie_tolerance(v: f64) -> f64 {
    1e-9 * (1.0 + v.abs())
}

fn decode_profile(profile: usize, n: usize, a_count: usize, out: &mut [usize]) {
    let mut rest = profile;
    for i in (0..n).rev() {
        out[i] = rest % a_count;
        rest /= a_count;
    }
}

fn encode_profile(actions: &[usize], a_count: usize) -> usize {
    actions.iter().fold(0, |acc, &a| acc * a_count + a)
}

fn joint_action(setup: &DiscreteGame, actions: &[usize]) -> JointAction {
    JointAction {
        trade_rates: actions.iter().map(|&a| setup.grid_action(a)[0]).collect(),
        gen_probs: actions.iter().map(|&a| setup.grid_action(a)[1]).collect(),
    }
}

/// Payoff tensor over every grid profile at a node: `payoff[profile * n + i]`.
fn payoff_tensor(setup: &DiscreteGame, ctx: &NodeCtx) -> Vec<f64> {
    let n = setup.market.num_agents();
    let a_count = setup.actions_per_agent();
    let profiles = a_count.pow(n as u32);
    let mut payoff = vec![0.0; profiles * n];
    let mut acts = vec![0usize; n];
    for prof in 0..profiles {
        decode_profile(prof, n, a_count, &mut acts);
        ctx.q(&joint_action(setup, &acts), &mut payoff[prof * n..(prof + 1) * n]);
    }
    payoff
}

/// Lowest-index best response of agent `i` to `profile`.
fn best_response(payoff: &[f64], profile: &[usize], i: usize, a_count: usize) -> (usize, f64) {
    let n = profile.len();
    let mut acts = profile.to_vec();
    let mut best = (0, f64::NEG_INFINITY);
    for a in 0..a_count {
        acts[i] = a;
        let v = payoff[encode_profile(&acts, a_count) * n + i];
        if v > best.1 + tie_tolerance(best.1) || best.1 == f64::NEG_INFINITY {
            best = (a, v);
        }
    }
    best
}

fn is_equilibrium(payoff: &[f64], profile: &[usize], a_count: usize) -> bool {
    let n = profile.len();
    let prof = encode_profile(profile, a_count);
    (0..n).all(|i| {
        let own = payoff[prof * n + i];
        best_response(payoff, profile, i, a_count).1 <= own + tie_tolerance(own)
    })
}

/// Every pure equilibrium, in lexicographic order.
fn all_equilibria(payoff: &[f64], n: usize, a_count: usize) -> Vec<Vec<usize>> {
    let mut acts = vec![0usize; n];
    (0..a_count.pow(n as u32))
        .filter_map(|prof| {
            decode_profile(prof, n, a_count, &mut acts);
            is_equilibrium(payoff, &acts, a_count).then(|| acts.clone())
        })
        .collect()
}

/// Jacobi best-response iteration from the idle profile; `None` on a cycle.
fn iterate_best_responses(payoff: &[f64], n: usize, a_count: usize, start: usize) -> Option<Vec<usize>> {
    let mut current = vec![start; n];
    let mut seen = vec![encode_profile(&current, a_count)];
    loop {
        let next: Vec<usize> = (0..n).map(|i| best_response(payoff, &current, i, a_count).0).collect();
        if next == current {
            return Some(current);
        }
        let code = encode_profile(&next, a_count);
        if seen.contains(&code) {
            return None;
        }
        seen.push(code);
        current = next;
    }
}

/// Symmetric equilibria first, then lexicographic order.
fn select_equilibrium(equilibria: &[Vec<usize>]) -> Option<&Vec<usize>> {
    equilibria
        .iter()
        .find(|e| e.windows(2).all(|w| w[0] == w[1]))
        .or_else(|| equilibria.first())
}

/// Grid Nash equilibrium in feedback form from `state.time_index` onwards.
#[derive(Debug, Clone, PartialEq)]
pub struct NashSolution {
    pub setup: DiscreteGame,
    pub sweep: Sweep,
    /// Equilibrium values at the query state.
    pub root_values: Vec<f64>,
    /// Every pure grid equilibrium of the stage game at the query state's node.
    pub root_equilibria: Vec<JointAction>,
    /// Nodes where best-response iteration cycled and enumeration was used.
    pub cycled_nodes: usize,
}

impl NashSolution {
    pub fn profile_at(&self, k: usize, node: usize) -> JointAction {
        let n = self.setup.market.num_agents();
        let a_count = self.setup.actions_per_agent();
        let kk = k.clamp(self.sweep.k0, self.setup.market.num_steps() - 1) - self.sweep.k0;
        let mut acts = vec![0; n];
        decode_profile(self.sweep.aux[kk][node] as usize, n, a_count, &mut acts);
        joint_action(&self.setup, &acts)
    }
}

impl Policy for NashSolution {
    fn num_agents(&self) -> usize {
        self.setup.market.num_agents()
    }

    fn actions(&self, states: &[MarketState]) -> Result<Vec<JointAction>, NetError> {
        Ok(states
            .iter()
            .map(|s| self.profile_at(s.time_index, self.setup.nearest_node(s)))
            .collect())
    }
}

fn check_budget(setup: &DiscreteGame) -> Result<(), OracleError> {
    let n = setup.market.num_agents() as u32;
    let needed = setup.actions_per_agent().checked_pow(n).unwrap_or(usize::MAX);
    if needed > setup.budget {
        return Err(OracleError::BudgetExceeded {
            needed,
            budget: setup.budget,
        });
    }
    Ok(())
}

/// Backward induction with a pure grid Nash equilibrium at every node.
pub fn brute_force_nash(setup: &DiscreteGame, state: &MarketState) -> Result<NashSolution, OracleError> {
    check_budget(setup)?;
    let n = setup.market.num_agents();
    let a_count = setup.actions_per_agent();
    let agents: Vec<usize> = (0..n).collect();
    let idle = setup.idle_action();
    let cycled = AtomicUsize::new(0);
    let sweep = sweep(setup, state.time_index, &agents, None, |ctx| {
        let payoff = payoff_tensor(setup, ctx);
        let chosen = match iterate_best_responses(&payoff, n, a_count, idle) {
            Some(p) => p,
            None => {
                cycled.fetch_add(1, Ordering::Relaxed);
                select_equilibrium(&all_equilibria(&payoff, n, a_count))
                    .cloned()
                    .ok_or(OracleError::NoPureNash {
                        stage: ctx.k,
                        node: ctx.node,
                    })?
            }
        };
        let prof = encode_profile(&chosen, a_count);
        Ok((payoff[prof * n..(prof + 1) * n].to_vec(), prof as u32))
    })?;
    let root_values = (0..n).map(|t| sweep.value_at(setup, t, state)).collect();

    // Re-solve the stage game at the query node to list every equilibrium.
    let root_node = setup.nearest_node(state);
    let root_state = setup.node_state(state.time_index, root_node);
    let next = sweep.values.get(1).map(|v| v.as_slice());
    let cont = Continuation::build(setup, state.time_index, root_state.price, next, n);
    let ctx = NodeCtx {
        setup,
        cont: &cont,
        table_agents: &agents,
        k: state.time_index,
        node: root_node,
        price: root_state.price,
        inventories: &root_state.inventories,
        policy_action: None,
    };
    let payoff = payoff_tensor(setup, &ctx);
    let root_equilibria = all_equilibria(&payoff, n, a_count)
        .iter()
        .map(|e| joint_action(setup, e))
        .collect();
    Ok(NashSolution {
        setup: setup.clone(),
        sweep,
        root_values,
        root_equilibria,
        cycled_nodes: cycled.into_inner(),
    })
}

/// Values of every agent when all follow `policy`.
pub fn evaluate_policy<P: Policy + ?Sized>(
    setup: &DiscreteGame,
    policy: &P,
    state: &MarketState,
) -> Result<Vec<f64>, OracleError> {
    let actions = policy_on_grid(setup, policy, state.time_index).map_err(|e| OracleError::InvalidGame(e.to_string()))?;
    let sweep = evaluate_sweep(setup, &actions, state.time_index)?;
    Ok((0..setup.market.num_agents()).map(|t| sweep.value_at(setup, t, state)).collect())
}

fn evaluate_sweep(setup: &DiscreteGame, actions: &[Vec<JointAction>], k0: usize) -> Result<Sweep, OracleError> {
    let n = setup.market.num_agents();
    let agents: Vec<usize> = (0..n).collect();
    sweep(setup, k0, &agents, Some(actions), |ctx| {
        let mut v = vec![0.0; n];
        ctx.q(ctx.policy_action.expect("policy actions supplied"), &mut v);
        Ok((v, 0))
    })
}

fn best_response_sweep(
    setup: &DiscreteGame,
    actions: &[Vec<JointAction>],
    k0: usize,
    agent: usize,
) -> Result<Sweep, OracleError> {
    let a_count = setup.actions_per_agent();
    sweep(setup, k0, &[agent], Some(actions), |ctx| {
        let base = ctx.policy_action.expect("policy actions supplied");
        let mut trial = base.clone();
        let mut v = [0.0];
        ctx.q(base, &mut v);
        let mut best = (v[0], a_count as u32);
        for a in 0..a_count {
            let [nu, p] = setup.grid_action(a);
            trial.trade_rates[agent] = nu;
            trial.gen_probs[agent] = p;
            ctx.q(&trial, &mut v);
            if v[0] > best.0 + tie_tolerance(best.0) {
                best = (v[0], a as u32);
            }
        }
        Ok((vec![best.0], best.1))
    })
}

/// Policy and best-response values at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ExploitabilityReport {
    pub state: MarketState,
    /// Policy action at the state.
    pub action: JointAction,
    pub policy_values: Vec<f64>,
    pub best_response_values: Vec<f64>,
    /// `best_response_values - policy_values`, per agent.
    pub exploitability: Vec<f64>,
}

/// Gain each agent could make by deviating unilaterally from `policy`.
///
/// The deviating agent may use any grid action or keep the policy's own
/// action at every node, so the gain is never negative.
pub fn exploitability<P: Policy + ?Sized>(
    policy: &P,
    setup: &DiscreteGame,
    state: &MarketState,
) -> Result<ExploitabilityReport, OracleError> {
    let n = setup.market.num_agents();
    if policy.num_agents() != n {
        return Err(OracleError::InvalidGame(format!(
            "policy has {} agents, game has {n}",
            policy.num_agents()
        )));
    }
    let k0 = state.time_index;
    let actions = policy_on_grid(setup, policy, k0).map_err(|e| OracleError::InvalidGame(e.to_string()))?;
    let eval = evaluate_sweep(setup, &actions, k0)?;
    let policy_values: Vec<f64> = (0..n).map(|t| eval.value_at(setup, t, state)).collect();
    let best_response_values: Vec<f64> = (0..n)
        .map(|i| best_response_sweep(setup, &actions, k0, i).map(|s| s.value_at(setup, 0, state)))
        .collect::<Result<_, _>>()?;
    let exploitability = best_response_values
        .iter()
        .zip(&policy_values)
        .map(|(b, p)| b - p)
        .collect();
    let action = policy
        .actions(std::slice::from_ref(state))
        .map_err(|e| OracleError::InvalidGame(e.to_string()))?
        .remove(0);
    Ok(ExploitabilityReport {
        state: state.clone(),
        action,
        policy_values,
        best_response_values,
        exploitability,
    })
}

/// Single-agent dynamic programme with a grid refinement check.
#[derive(Debug, Clone, PartialEq)]
pub struct DpSolution {
    /// Optimal value at the query state in per-step reward units.
    pub value: f64,
    /// Same quantity on the 2x refined grids.
    pub refined_value: f64,
    pub solution: NashSolution,
}

impl DpSolution {
    /// Greedy policy on the base grid.
    pub fn policy(&self) -> &NashSolution {
        &self.solution
    }
}

pub fn single_agent_dp(setup: &DiscreteGame, state: &MarketState, tolerance: f64) -> Result<DpSolution, OracleError> {
    if setup.market.num_agents() != 1 {
        return Err(OracleError::InvalidGame(format!(
            "dynamic programme needs one agent, got {}",
            setup.market.num_agents()
        )));
    }
    let solution = brute_force_nash(setup, state)?;
    let refined = brute_force_nash(&setup.refined(), state)?;
    let value = solution.root_values[0];
    let refined_value = refined.root_values[0];
    let delta = (refined_value - value).abs();
    if delta > tolerance {
        return Err(OracleError::GridTooCoarse { delta, tolerance });
    }
    Ok(DpSolution {
        value,
        refined_value,
        solution,
    })
}

/// Exploitability report as CSV, one row per agent.
pub fn report_csv(report: &ExploitabilityReport, meta_line: &str) -> String {
    let mut out = format!("# {meta_line}\n");
    out.push_str(
        "agent,time_index,price,inventories,trade_rate,gen_prob,policy_value,best_response_value,exploitability\n",
    );
    let inv: Vec<String> = report.state.inventories.iter().map(|x| x.to_string()).collect();
    for i in 0..report.policy_values.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            i + 1,
            report.state.time_index,
            report.state.price,
            inv.join(";"),
            report.action.trade_rates[i],
            report.action.gen_probs[i],
            report.policy_values[i],
            report.best_response_values[i],
            report.exploitability[i]
        );
    }
    out
}
