//! Built-in experiment configurations.

use crate::config::{EvalConfig, ExperimentConfig, OracleConfig};
use crate::market::{AgentClass, ComplianceReset, MarketConfig, TradeCostDt};
use crate::nets::{Activation, NetConfig};
use crate::trainer::TrainConfig;

pub const NAMES: [&str; 4] = ["four_agent", "eight_agent", "single_agent", "duopoly"];

/// Largest trade rate used by the multi-period presets.
pub const TRADE_BOUND: f64 = 40.0;

fn two_period_market(friction: f64, price_impact: f64) -> MarketConfig {
    MarketConfig {
        compliance_dates: vec![1.0, 2.0],
        steps_per_period: vec![24, 24],
        penalty: 50.0,
        friction,
        price_impact,
        volatility: 3.0,
        initial_price: 50.0,
        trade_bound: TRADE_BOUND,
        trade_cost_dt: TradeCostDt::Scaled,
        compliance_reset: ComplianceReset::None,
    }
}

fn net(layers: usize, nodes: usize) -> NetConfig {
    NetConfig {
        hidden_layers: layers,
        nodes_per_layer: nodes,
        activation: Activation::Silu,
        seed: 0,
    }
}

pub fn four_agent() -> ExperimentConfig {
    ExperimentConfig {
        preset: "four_agent".into(),
        market: two_period_market(2.0, 0.5),
        classes: vec![
            AgentClass::new("One", 1, 25.0, 2.0, 100.0),
            AgentClass::new("Two", 1, 25.0, 1.5, 75.0),
            AgentClass::new("Three", 1, 25.0, 1.0, 50.0),
            AgentClass::new("Four", 1, 25.0, 0.5, 25.0),
        ],
        net: net(5, 200),
        train: TrainConfig {
            lr: 1e-3,
            initial_clearing_weight: 50.0,
            ..TrainConfig::with_trade_bound(TRADE_BOUND)
        },
        eval: EvalConfig::default(),
        oracle: OracleConfig::default(),
    }
}

pub fn eight_agent() -> ExperimentConfig {
    ExperimentConfig {
        preset: "eight_agent".into(),
        market: two_period_market(5.0, 0.1),
        classes: vec![
            AgentClass::new("A", 2, 40.0, 3.0, 150.0),
            AgentClass::new("B", 1, 30.0, 2.5, 125.0),
            AgentClass::new("C", 1, 30.0, 2.0, 100.0),
            AgentClass::new("D", 2, 20.0, 1.5, 75.0),
            AgentClass::new("E", 2, 10.0, 1.0, 50.0),
        ],
        net: net(9, 200),
        train: TrainConfig {
            lr: 3e-3,
            initial_clearing_weight: 1000.0,
            ..TrainConfig::with_trade_bound(TRADE_BOUND)
        },
        eval: EvalConfig::default(),
        oracle: OracleConfig::default(),
    }
}

/// Agent Four of the four-agent market trading alone.
pub fn single_agent() -> ExperimentConfig {
    let mut cfg = four_agent();
    cfg.preset = "single_agent".into();
    cfg.classes = vec![AgentClass::new("Four", 1, 25.0, 0.5, 25.0)];
    cfg.oracle = OracleConfig {
        price_nodes: 21,
        inventory_nodes: 121,
        inventory_range: Some([-5.0, 55.0]),
        ..OracleConfig::default()
    };
    cfg
}

/// Two agents, one period of four steps; small enough for brute-force Nash.
pub fn duopoly() -> ExperimentConfig {
    ExperimentConfig {
        preset: "duopoly".into(),
        market: MarketConfig {
            compliance_dates: vec![1.0],
            steps_per_period: vec![4],
            trade_bound: 8.0,
            ..two_period_market(2.0, 0.5)
        },
        classes: vec![
            AgentClass::new("Big", 1, 8.0, 2.0, 60.0),
            AgentClass::new("Small", 1, 4.0, 1.0, 30.0),
        ],
        net: net(3, 64),
        train: TrainConfig {
            epochs: 4000,
            batch_size: 128,
            market_clearing: false,
            ..TrainConfig::with_trade_bound(8.0)
        },
        eval: EvalConfig::default(),
        oracle: OracleConfig {
            price_nodes: 41,
            inventory_nodes: 41,
            trade_nodes: 9,
            inventory_range: Some([-4.0, 16.0]),
            ..OracleConfig::default()
        },
    }
}

pub fn by_name(name: &str) -> Option<ExperimentConfig> {
    match name {
        "four_agent" => Some(four_agent()),
        "eight_agent" => Some(eight_agent()),
        "single_agent" => Some(single_agent()),
        "duopoly" => Some(duopoly()),
        _ => None,
    }
}
