use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{NashModel, NetConfig};
use crate::error::NetError;
use crate::market::{AgentClass, Market, MarketConfig};
use crate::store;

const KIND: &str = "ocnash-checkpoint";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    market: MarketConfig,
    classes: Vec<AgentClass>,
    net: NetConfig,
    train_seed: u64,
    epochs_completed: usize,
    clearing_weight: f64,
    class_param_counts: Vec<usize>,
}

/// Online and target parameters plus everything needed to rebuild them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub online: NashModel,
    pub target: NashModel,
    pub train_seed: u64,
    pub epochs_completed: usize,
    pub clearing_weight: f64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: KIND.to_string(),
            market: self.online.market().config().clone(),
            classes: self.online.market().classes().to_vec(),
            net: self.online.net_config().clone(),
            train_seed: self.train_seed,
            epochs_completed: self.epochs_completed,
            clearing_weight: self.clearing_weight,
            class_param_counts: self.online.nets().iter().map(|n| n.num_params()).collect(),
        };
        let mut payload = self.online.flat_params();
        payload.extend(self.target.flat_params());
        store::encode(&serde_json::to_value(header).expect("header serialises"), &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetError> {
        let (header, payload) = store::decode(bytes).map_err(|e| match e {
            store::StoreError::Io(io) => NetError::Io(io),
            store::StoreError::Format(msg) => NetError::Format(msg),
        })?;
        let header: Header = serde_json::from_value(header).map_err(|e| NetError::Format(e.to_string()))?;
        if header.kind != KIND {
            return Err(NetError::Format(format!("not a checkpoint: {}", header.kind)));
        }
        let total: usize = header.class_param_counts.iter().sum();
        if payload.len() != 2 * total {
            return Err(NetError::ShapeMismatch {
                expected: 2 * total,
                got: payload.len(),
            });
        }
        let split = |data: &[f64]| {
            let mut offset = 0;
            header
                .class_param_counts
                .iter()
                .map(|&len| {
                    let p = data[offset..offset + len].to_vec();
                    offset += len;
                    p
                })
                .collect::<Vec<_>>()
        };
        let market = Market::new(header.market.clone(), header.classes.clone())?;
        let online = NashModel::from_params(market.clone(), header.net.clone(), split(&payload[..total]))?;
        let target = NashModel::from_params(market, header.net.clone(), split(&payload[total..]))?;
        Ok(Self {
            online,
            target,
            train_seed: header.train_seed,
            epochs_completed: header.epochs_completed,
            clearing_weight: header.clearing_weight,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        Ok(store::write_atomic(path, &self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::mlp::Activation;
    use crate::presets;

    #[test]
    fn roundtrip_is_bit_exact() {
        let market = presets::eight_agent().market().unwrap();
        let net = NetConfig {
            hidden_layers: 2,
            nodes_per_layer: 8,
            activation: Activation::Tanh,
            seed: 99,
        };
        let online = NashModel::new(market.clone(), net.clone()).unwrap();
        let mut target = online.clone();
        target.nets_mut()[2].params_mut()[0] = 1.0 / 3.0;
        let ckpt = Checkpoint {
            online,
            target,
            train_seed: 5,
            epochs_completed: 17,
            clearing_weight: 62.5,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), ckpt.to_bytes());
    }

    #[test]
    fn rejects_other_containers() {
        let bytes = store::encode(&serde_json::json!({"kind": "paths"}), &[]);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
