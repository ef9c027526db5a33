//! Python bindings: presets, the market simulator, training and evaluation.

use std::path::PathBuf;

use ::ocnash as core;
use core::evaluation::{self, GenerationMode};
use core::{Checkpoint, ExperimentConfig, JointAction, MarketState};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

type StateTuple = (usize, f64, Vec<f64>);

fn to_state((time_index, price, inventories): StateTuple) -> MarketState {
    MarketState {
        time_index,
        price,
        inventories,
    }
}

fn from_state(s: &MarketState) -> StateTuple {
    (s.time_index, s.price, s.inventories.clone())
}

/// Names of the built-in presets.
#[pyfunction]
fn presets() -> Vec<&'static str> {
    core::presets::NAMES.to_vec()
}

/// TOML text of a preset with optional `section.field=value` overrides.
#[pyfunction]
#[pyo3(signature = (name, overrides = Vec::new()))]
fn preset_toml(name: &str, overrides: Vec<String>) -> PyResult<String> {
    let cfg = ExperimentConfig::resolve::<String>(None, Some(name), &overrides).map_err(value_err)?;
    Ok(cfg.to_toml_string())
}

#[pyclass(name = "Market", module = "ocnash")]
struct PyMarket {
    inner: core::Market,
}

#[pymethods]
impl PyMarket {
    #[new]
    fn new(config_toml: &str) -> PyResult<Self> {
        let cfg = ExperimentConfig::from_toml_str(config_toml).map_err(value_err)?;
        Ok(Self {
            inner: cfg.market().map_err(value_err)?,
        })
    }

    #[getter]
    fn num_agents(&self) -> usize {
        self.inner.num_agents()
    }

    #[getter]
    fn num_steps(&self) -> usize {
        self.inner.num_steps()
    }

    #[pyo3(signature = (agent, x0 = 0.0))]
    fn benchmark(&self, agent: usize, x0: f64) -> PyResult<f64> {
        if agent >= self.inner.num_agents() {
            return Err(value_err(format!("no agent {agent}")));
        }
        Ok(self.inner.benchmark(agent, x0))
    }

    /// `(time_index, price, inventories)` at the start.
    fn initial_state(&self) -> StateTuple {
        from_state(&self.inner.initial_state())
    }

    /// One transition with explicit noise; returns `(next_state, rewards, gen_flags)`.
    fn step(
        &self,
        state: StateTuple,
        trade_rates: Vec<f64>,
        gen_probs: Vec<f64>,
        z: f64,
        uniforms: Vec<f64>,
    ) -> PyResult<(StateTuple, Vec<f64>, Vec<bool>)> {
        let out = self
            .inner
            .step(
                &to_state(state),
                &JointAction { trade_rates, gen_probs },
                core::market::StepNoise { z, uniforms },
            )
            .map_err(value_err)?;
        Ok((from_state(&out.next_state), out.rewards, out.gen_flags))
    }
}

#[pyclass(name = "Model", module = "ocnash")]
struct PyModel {
    ckpt: Checkpoint,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = Checkpoint::load(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self { ckpt })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.ckpt.save(&path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn epochs_completed(&self) -> usize {
        self.ckpt.epochs_completed
    }

    /// Nash action `(trade_rates, gen_probs)` at a state.
    fn nash_action(&self, state: StateTuple) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let state = to_state(state);
        check_state(&self.ckpt, &state)?;
        let a = self.ckpt.online.nash_actions(std::slice::from_ref(&state)).remove(0);
        Ok((a.trade_rates, a.gen_probs))
    }

    /// Per-agent value estimates at a state.
    fn values(&self, state: StateTuple) -> PyResult<Vec<f64>> {
        let state = to_state(state);
        check_state(&self.ckpt, &state)?;
        Ok(self.ckpt.online.values(std::slice::from_ref(&state)).remove(0))
    }

    /// Simulate paths and return one metrics dict per agent.
    #[pyo3(signature = (num_paths, seed, threshold = false))]
    fn evaluate<'py>(&self, py: Python<'py>, num_paths: usize, seed: u64, threshold: bool) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let mode = if threshold {
            GenerationMode::Threshold
        } else {
            GenerationMode::Stochastic
        };
        let market = self.ckpt.online.market().clone();
        let ens = evaluation::simulate_paths(&market, &self.ckpt.online, num_paths, seed, mode).map_err(value_err)?;
        let metrics = evaluation::metrics(&ens, &market).map_err(value_err)?;
        metrics
            .into_iter()
            .map(|m| {
                let d = PyDict::new(py);
                d.set_item("agent", m.agent)?;
                d.set_item("label", m.label)?;
                d.set_item("mean_pnl", m.mean_pnl)?;
                d.set_item("tail_expectation", m.tail_expectation)?;
                d.set_item("mean_traded", m.mean_traded)?;
                d.set_item("mean_generated", m.mean_generated)?;
                d.set_item("benchmark", m.benchmark)?;
                Ok(d)
            })
            .collect()
    }
}

fn check_state(ckpt: &Checkpoint, state: &MarketState) -> PyResult<()> {
    let market = ckpt.online.market();
    if state.inventories.len() != market.num_agents() || state.time_index >= market.num_steps() {
        return Err(value_err("state does not fit the model's market"));
    }
    Ok(())
}

/// Train from a TOML config; returns the final model.
#[pyfunction]
fn train(py: Python<'_>, config_toml: &str) -> PyResult<PyModel> {
    let cfg = ExperimentConfig::from_toml_str(config_toml).map_err(value_err)?;
    let market = cfg.market().map_err(value_err)?;
    let outcome = py
        .detach(|| core::trainer::train(market, cfg.net.clone(), cfg.train.clone()))
        .map_err(value_err)?;
    Ok(PyModel {
        ckpt: outcome.checkpoint,
    })
}

#[pymodule]
fn ocnash(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(preset_toml, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<PyMarket>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
