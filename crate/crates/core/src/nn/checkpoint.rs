use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, LayerShape, NetworkParams};
use crate::rng::StreamPosition;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Versioned JSON container for a network, its optimiser and RNG position.
///
/// `meta` is opaque to this module; agents store their kind, config and
/// environment there. A second parameter vector with the same shapes can be
/// carried in `target_values` (DQN/QRDQN target network).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub format_version: u32,
    pub layer_shapes: Vec<LayerShape>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub target_values: Option<Vec<f64>>,
    #[serde(default)]
    pub adam: Option<AdamState>,
    #[serde(default)]
    pub rng: Option<StreamPosition>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl NetworkCheckpoint {
    pub fn new(params: &NetworkParams) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            layer_shapes: params.layer_shapes.clone(),
            values: params.values.clone(),
            target_values: None,
            adam: None,
            rng: None,
            meta: serde_json::Value::Null,
        }
    }

    pub fn params(&self) -> NetworkParams {
        NetworkParams {
            layer_shapes: self.layer_shapes.clone(),
            values: self.values.clone(),
        }
    }

    pub fn target_params(&self) -> Option<NetworkParams> {
        self.target_values.as_ref().map(|v| NetworkParams {
            layer_shapes: self.layer_shapes.clone(),
            values: v.clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Checkpoint(m));
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return bad(format!(
                "unsupported format_version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                self.format_version
            ));
        }
        if self.layer_shapes.is_empty() {
            return bad("no layers".into());
        }
        for w in self.layer_shapes.windows(2) {
            if w[0].outputs != w[1].inputs {
                return bad("layer widths do not chain".into());
            }
        }
        let n: usize = self.layer_shapes.iter().map(LayerShape::n_params).sum();
        if self.values.len() != n {
            return bad(format!("values has {} entries, shapes need {n}", self.values.len()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter".into());
        }
        if let Some(t) = &self.target_values {
            if t.len() != n {
                return bad("target_values length".into());
            }
        }
        if let Some(a) = &self.adam {
            if a.m.len() != n || a.v.len() != n {
                return bad("adam moment length".into());
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("parse: {e}")))?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, AdamConfig};
    use crate::nn::network::shapes_for;
    use crate::RngStream;

    #[test]
    fn roundtrip_is_exact() {
        let mut stream = RngStream::new(4);
        let p = init_params(shapes_for(&[2, 5, 3]), &mut stream);
        let mut ck = NetworkCheckpoint::new(&p);
        ck.adam = Some(AdamState::new(p.n_params(), AdamConfig::default()));
        ck.rng = Some(stream.position());
        ck.target_values = Some(p.values.iter().map(|v| v / 3.0).collect());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = NetworkCheckpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params(), p);
    }

    #[test]
    fn rejects_wrong_version_and_length() {
        let p = NetworkParams::from_widths(&[1, 2]);
        let mut ck = NetworkCheckpoint::new(&p);
        ck.format_version = 99;
        assert!(ck.validate().is_err());
        let mut ck = NetworkCheckpoint::new(&p);
        ck.values.pop();
        assert_eq!(ck.validate().unwrap_err().kind(), "checkpoint");
    }
}
