//! Monte-Carlo evaluation of trained policies and CSV reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, NetError};
use crate::market::{ComplianceReset, JointAction, Market, MarketState, StepNoise};
use crate::nets::{nash_action_of, NashModel};
use crate::stats;
use crate::store;

/// How generation is decided when rolling out a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// Generate iff `p > U` with `U` uniform.
    #[default]
    Stochastic,
    /// Generate iff `p > 0.5`.
    Threshold,
}

/// Feedback policy for all agents at once.
pub trait Policy: Sync {
    fn num_agents(&self) -> usize;

    /// The market the policy was built for, when it has one.
    fn market(&self) -> Option<&Market> {
        None
    }

    fn actions(&self, states: &[MarketState]) -> Result<Vec<JointAction>, NetError>;
}

impl Policy for NashModel {
    fn num_agents(&self) -> usize {
        NashModel::market(self).num_agents()
    }

    fn market(&self) -> Option<&Market> {
        Some(NashModel::market(self))
    }

    fn actions(&self, states: &[MarketState]) -> Result<Vec<JointAction>, NetError> {
        self.check_finite()?;
        Ok(self.heads_batch(states).iter().map(|h| nash_action_of(h)).collect())
    }
}

/// The same joint action in every state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantPolicy {
    pub action: JointAction,
}

impl Policy for ConstantPolicy {
    fn num_agents(&self) -> usize {
        self.action.len()
    }

    fn actions(&self, states: &[MarketState]) -> Result<Vec<JointAction>, NetError> {
        Ok(vec![self.action.clone(); states.len()])
    }
}

/// Per-path, per-step records; every array is path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub num_paths: usize,
    pub num_agents: usize,
    pub num_steps: usize,
    pub seed: u64,
    /// Grid times `t_0..=t_K`.
    pub times: Vec<f64>,
    /// `num_paths x (K + 1)`.
    pub prices: Vec<f64>,
    /// `num_paths x (K + 1) x N`.
    pub inventories: Vec<f64>,
    /// `num_paths x K x N` for the remaining arrays.
    pub trade_rates: Vec<f64>,
    pub gen_probs: Vec<f64>,
    pub gen_flags: Vec<bool>,
    pub rewards: Vec<f64>,
}

impl PathEnsemble {
    pub fn price(&self, path: usize, k: usize) -> f64 {
        self.prices[path * (self.num_steps + 1) + k]
    }

    pub fn inventory(&self, path: usize, k: usize, agent: usize) -> f64 {
        self.inventories[(path * (self.num_steps + 1) + k) * self.num_agents + agent]
    }

    fn step_index(&self, path: usize, k: usize, agent: usize) -> usize {
        (path * self.num_steps + k) * self.num_agents + agent
    }

    pub fn trade_rate(&self, path: usize, k: usize, agent: usize) -> f64 {
        self.trade_rates[self.step_index(path, k, agent)]
    }

    pub fn gen_prob(&self, path: usize, k: usize, agent: usize) -> f64 {
        self.gen_probs[self.step_index(path, k, agent)]
    }

    pub fn generated(&self, path: usize, k: usize, agent: usize) -> bool {
        self.gen_flags[self.step_index(path, k, agent)]
    }

    pub fn reward(&self, path: usize, k: usize, agent: usize) -> f64 {
        self.rewards[self.step_index(path, k, agent)]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::json!({
            "kind": "ocnash-paths",
            "num_paths": self.num_paths,
            "num_agents": self.num_agents,
            "num_steps": self.num_steps,
            "seed": self.seed,
            "times": self.times,
        });
        let mut payload = Vec::with_capacity(self.prices.len() + self.inventories.len() + 4 * self.rewards.len());
        payload.extend_from_slice(&self.prices);
        payload.extend_from_slice(&self.inventories);
        payload.extend_from_slice(&self.trade_rates);
        payload.extend_from_slice(&self.gen_probs);
        payload.extend(self.gen_flags.iter().map(|&g| if g { 1.0 } else { 0.0 }));
        payload.extend_from_slice(&self.rewards);
        store::encode(&header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EvalError> {
        let (header, payload) = store::decode(bytes).map_err(|e| EvalError::Format(e.to_string()))?;
        if header["kind"] != "ocnash-paths" {
            return Err(EvalError::Format("not a path ensemble".into()));
        }
        let field = |name: &str| {
            header[name]
                .as_u64()
                .ok_or_else(|| EvalError::Format(format!("missing {name}")))
        };
        let num_paths = field("num_paths")? as usize;
        let num_agents = field("num_agents")? as usize;
        let num_steps = field("num_steps")? as usize;
        let seed = field("seed")?;
        let times: Vec<f64> =
            serde_json::from_value(header["times"].clone()).map_err(|e| EvalError::Format(e.to_string()))?;
        let sizes = [
            num_paths * (num_steps + 1),
            num_paths * (num_steps + 1) * num_agents,
            num_paths * num_steps * num_agents,
            num_paths * num_steps * num_agents,
            num_paths * num_steps * num_agents,
            num_paths * num_steps * num_agents,
        ];
        if payload.len() != sizes.iter().sum::<usize>() || times.len() != num_steps + 1 {
            return Err(EvalError::Format("payload size does not match header".into()));
        }
        let mut rest = payload.as_slice();
        let mut parts = Vec::new();
        for len in sizes {
            let (head, tail) = rest.split_at(len);
            parts.push(head.to_vec());
            rest = tail;
        }
        let rewards = parts.pop().unwrap();
        let gen_flags = parts.pop().unwrap().into_iter().map(|g| g != 0.0).collect();
        let gen_probs = parts.pop().unwrap();
        let trade_rates = parts.pop().unwrap();
        let inventories = parts.pop().unwrap();
        let prices = parts.pop().unwrap();
        Ok(Self {
            num_paths,
            num_agents,
            num_steps,
            seed,
            times,
            prices,
            inventories,
            trade_rates,
            gen_probs,
            gen_flags,
            rewards,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        Ok(store::write_atomic(path, &self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Paths simulated together per policy call.
const CHUNK: usize = 500;

struct ChunkRecord {
    prices: Vec<f64>,
    inventories: Vec<f64>,
    trade_rates: Vec<f64>,
    gen_probs: Vec<f64>,
    gen_flags: Vec<bool>,
    rewards: Vec<f64>,
}

/// RNG for one path; streams are independent of how paths are batched.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn simulate_chunk<P: Policy + ?Sized>(
    market: &Market,
    policy: &P,
    paths: std::ops::Range<usize>,
    seed: u64,
    mode: GenerationMode,
) -> Result<ChunkRecord, EvalError> {
    let n = market.num_agents();
    let steps = market.num_steps();
    let count = paths.len();
    let mut rngs: Vec<ChaCha8Rng> = paths.clone().map(|p| path_rng(seed, p)).collect();
    let mut states = vec![market.initial_state(); count];
    let mut rec = ChunkRecord {
        prices: vec![0.0; count * (steps + 1)],
        inventories: vec![0.0; count * (steps + 1) * n],
        trade_rates: vec![0.0; count * steps * n],
        gen_probs: vec![0.0; count * steps * n],
        gen_flags: vec![false; count * steps * n],
        rewards: vec![0.0; count * steps * n],
    };
    let record_state = |rec: &mut ChunkRecord, m: usize, s: &MarketState| {
        let k = s.time_index;
        rec.prices[m * (steps + 1) + k] = s.price;
        let base = (m * (steps + 1) + k) * n;
        rec.inventories[base..base + n].copy_from_slice(&s.inventories);
    };
    for (m, s) in states.iter().enumerate() {
        record_state(&mut rec, m, s);
    }
    for k in 0..steps {
        let actions = policy.actions(&states)?;
        for m in 0..count {
            let mut noise = StepNoise::draw(&mut rngs[m], n);
            if mode == GenerationMode::Threshold {
                noise.uniforms.iter_mut().for_each(|u| *u = 0.5);
            }
            let out = market.step(&states[m], &actions[m], noise)?;
            let base = (m * steps + k) * n;
            rec.trade_rates[base..base + n].copy_from_slice(&actions[m].trade_rates);
            rec.gen_probs[base..base + n].copy_from_slice(&actions[m].gen_probs);
            rec.gen_flags[base..base + n].copy_from_slice(&out.gen_flags);
            rec.rewards[base..base + n].copy_from_slice(&out.rewards);
            states[m] = out.next_state;
            record_state(&mut rec, m, &states[m]);
        }
    }
    Ok(rec)
}

/// Roll out `policy` without exploration over `num_paths` paths.
pub fn simulate_paths<P: Policy + ?Sized>(
    market: &Market,
    policy: &P,
    num_paths: usize,
    seed: u64,
    mode: GenerationMode,
) -> Result<PathEnsemble, EvalError> {
    if policy.num_agents() != market.num_agents() {
        return Err(EvalError::Mismatch(format!(
            "policy has {} agents, market has {}",
            policy.num_agents(),
            market.num_agents()
        )));
    }
    if let Some(own) = policy.market() {
        if own.config() != market.config() || own.classes() != market.classes() {
            return Err(EvalError::Mismatch("checkpoint was trained on a different market".into()));
        }
    }
    if num_paths == 0 {
        return Err(EvalError::Empty);
    }
    let ranges: Vec<std::ops::Range<usize>> = (0..num_paths)
        .step_by(CHUNK)
        .map(|start| start..(start + CHUNK).min(num_paths))
        .collect();
    let chunks = ranges
        .into_par_iter()
        .map(|r| simulate_chunk(market, policy, r, seed, mode))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = PathEnsemble {
        num_paths,
        num_agents: market.num_agents(),
        num_steps: market.num_steps(),
        seed,
        times: market.grid().times().to_vec(),
        prices: Vec::new(),
        inventories: Vec::new(),
        trade_rates: Vec::new(),
        gen_probs: Vec::new(),
        gen_flags: Vec::new(),
        rewards: Vec::new(),
    };
    for c in chunks {
        out.prices.extend(c.prices);
        out.inventories.extend(c.inventories);
        out.trade_rates.extend(c.trade_rates);
        out.gen_probs.extend(c.gen_probs);
        out.gen_flags.extend(c.gen_flags);
        out.rewards.extend(c.rewards);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub agent: usize,
    pub label: String,
    pub mean_pnl: f64,
    /// Mean of the lowest 5% of terminal P&Ls.
    pub tail_expectation: f64,
    /// Mean of `sum nu dt`.
    pub mean_traded: f64,
    pub mean_generated: f64,
    /// P&L of total inaction.
    pub benchmark: f64,
}

fn check_shape(ensemble: &PathEnsemble, market: &Market) -> Result<(), EvalError> {
    if ensemble.num_paths == 0 {
        return Err(EvalError::Empty);
    }
    if ensemble.num_agents != market.num_agents() || ensemble.num_steps != market.num_steps() {
        return Err(EvalError::Mismatch(format!(
            "ensemble is {} agents x {} steps, market is {} x {}",
            ensemble.num_agents,
            ensemble.num_steps,
            market.num_agents(),
            market.num_steps()
        )));
    }
    Ok(())
}

/// Terminal P&L of every path for `agent`.
///
/// With persistent inventories the per-step rewards telescope the penalties
/// relative to the starting shortfall, so the starting penalty is added back.
pub fn terminal_pnls(ensemble: &PathEnsemble, market: &Market, agent: usize) -> Vec<f64> {
    (0..ensemble.num_paths)
        .map(|path| {
            let offset = match market.config().compliance_reset {
                ComplianceReset::None => market.benchmark(agent, ensemble.inventory(path, 0, agent)),
                ComplianceReset::Consume => 0.0,
            };
            offset + stats::sum((0..ensemble.num_steps).map(|k| ensemble.reward(path, k, agent)))
        })
        .collect()
}

pub fn metrics(ensemble: &PathEnsemble, market: &Market) -> Result<Vec<AgentMetrics>, EvalError> {
    check_shape(ensemble, market)?;
    let dts: Vec<f64> = (0..ensemble.num_steps).map(|k| market.grid().dt(k)).collect();
    Ok((0..ensemble.num_agents)
        .map(|i| {
            let ac = market.agent_class(i);
            let pnl = terminal_pnls(ensemble, market, i);
            let traded: Vec<f64> = (0..ensemble.num_paths)
                .map(|p| stats::sum((0..ensemble.num_steps).map(|k| ensemble.trade_rate(p, k, i) * dts[k])))
                .collect();
            let generated: Vec<f64> = (0..ensemble.num_paths)
                .map(|p| {
                    let events = (0..ensemble.num_steps).filter(|&k| ensemble.generated(p, k, i)).count();
                    events as f64 * ac.gen_size
                })
                .collect();
            AgentMetrics {
                agent: i,
                label: ac.label.clone(),
                mean_pnl: stats::mean(&pnl),
                tail_expectation: stats::tail_mean(&pnl, 0.05),
                mean_traded: stats::mean(&traded),
                mean_generated: stats::mean(&generated),
                benchmark: market.benchmark(i, ensemble.inventory(0, 0, i)),
            }
        })
        .collect())
}

/// Inventories net of the requirement submitted on each compliance date.
pub fn display_inventories(ensemble: &PathEnsemble, market: &Market) -> Vec<f64> {
    let n = ensemble.num_agents;
    let steps = ensemble.num_steps;
    let mut out = vec![0.0; ensemble.inventories.len()];
    for p in 0..ensemble.num_paths {
        for i in 0..n {
            let requirement = market.agent_class(i).requirement;
            let mut submitted = 0.0;
            for k in 0..=steps {
                let mut shown = ensemble.inventory(p, k, i) - submitted;
                if k > 0 && market.grid().is_compliance_date(k) {
                    let drop = shown.min(requirement).max(0.0);
                    submitted += drop;
                    shown -= drop;
                }
                out[(p * (steps + 1) + k) * n + i] = shown;
            }
        }
    }
    out
}

/// Metadata written as the first line of every CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvMeta {
    pub config_hash: String,
    pub seed: u64,
}

impl CsvMeta {
    fn line(&self) -> String {
        format!("# config_hash={} seed={}\n", self.config_hash, self.seed)
    }
}

fn band(values: &[f64]) -> (f64, f64, f64) {
    let sorted = stats::sorted(values);
    (
        stats::mean(values),
        stats::quantile_sorted(&sorted, 0.05),
        stats::quantile_sorted(&sorted, 0.95),
    )
}

fn inventory_band_csv(ensemble: &PathEnsemble, inventories: &[f64], meta: &CsvMeta) -> String {
    let n = ensemble.num_agents;
    let steps = ensemble.num_steps;
    let mut out = meta.line();
    out.push_str("time,agent,mean,q05,q95\n");
    for k in 0..=steps {
        for i in 0..n {
            let xs: Vec<f64> = (0..ensemble.num_paths)
                .map(|p| inventories[(p * (steps + 1) + k) * n + i])
                .collect();
            let (m, lo, hi) = band(&xs);
            let _ = writeln!(out, "{},{},{},{},{}", ensemble.times[k], i + 1, m, lo, hi);
        }
    }
    out
}

/// CSV report files keyed by name.
pub fn render_csv(
    ensemble: &PathEnsemble,
    metrics: &[AgentMetrics],
    market: &Market,
    meta: &CsvMeta,
    display_submissions: bool,
) -> Result<Vec<(String, String)>, EvalError> {
    check_shape(ensemble, market)?;
    let n = ensemble.num_agents;
    let steps = ensemble.num_steps;
    let mut files = Vec::new();

    let mut price = meta.line();
    price.push_str("time,mean,q05,q95\n");
    for k in 0..=steps {
        let xs: Vec<f64> = (0..ensemble.num_paths).map(|p| ensemble.price(p, k)).collect();
        let (m, lo, hi) = band(&xs);
        let _ = writeln!(price, "{},{},{},{}", ensemble.times[k], m, lo, hi);
    }
    files.push(("price_bands.csv".to_string(), price));
    files.push((
        "inventory_bands.csv".to_string(),
        inventory_band_csv(ensemble, &ensemble.inventories, meta),
    ));
    if display_submissions {
        let shown = display_inventories(ensemble, market);
        files.push((
            "inventory_display_bands.csv".to_string(),
            inventory_band_csv(ensemble, &shown, meta),
        ));
    }

    let mut actions = meta.line();
    actions.push_str("time,agent,mean_trade_rate,mean_gen_prob\n");
    for k in 0..steps {
        for i in 0..n {
            let nu: Vec<f64> = (0..ensemble.num_paths).map(|p| ensemble.trade_rate(p, k, i)).collect();
            let pg: Vec<f64> = (0..ensemble.num_paths).map(|p| ensemble.gen_prob(p, k, i)).collect();
            let _ = writeln!(
                actions,
                "{},{},{},{}",
                ensemble.times[k],
                i + 1,
                stats::mean(&nu),
                stats::mean(&pg)
            );
        }
    }
    files.push(("actions.csv".to_string(), actions));

    let pnls: Vec<Vec<f64>> = (0..n).map(|i| terminal_pnls(ensemble, market, i)).collect();
    let mut hist = meta.line();
    hist.push_str("path");
    for i in 0..n {
        let _ = write!(hist, ",agent{}", i + 1);
    }
    hist.push('\n');
    for p in 0..ensemble.num_paths {
        hist.push_str(&p.to_string());
        for pnl in &pnls {
            let _ = write!(hist, ",{}", pnl[p]);
        }
        hist.push('\n');
    }
    files.push(("pnl_hist.csv".to_string(), hist));

    let mut summary = meta.line();
    summary.push_str("agent,label,mean_pnl,tail_expectation,mean_traded,mean_generated,benchmark\n");
    for m in metrics {
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{}",
            m.agent + 1,
            m.label,
            m.mean_pnl,
            m.tail_expectation,
            m.mean_traded,
            m.mean_generated,
            m.benchmark
        );
    }
    files.push(("summary.csv".to_string(), summary));
    Ok(files)
}

/// Write the CSV reports into `out_dir`; returns the written paths.
pub fn emit_csv(
    ensemble: &PathEnsemble,
    metrics: &[AgentMetrics],
    market: &Market,
    meta: &CsvMeta,
    display_submissions: bool,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, EvalError> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (name, text) in render_csv(ensemble, metrics, market, meta, display_submissions)? {
        let path = out_dir.join(name);
        store::write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
