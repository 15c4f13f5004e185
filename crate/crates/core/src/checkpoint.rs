//! Model files (`.esn`): a JSON document
//!
//! ```text
//! {
//!   "format": "exsplinet-v1",
//!   "config": { "inputs": …, "outputs": …, "trees": …,
//!               "inner_counts": […], "outer_counts": […],
//!               "inner_degrees": […], "outer_degrees": […] },
//!   "frozen": [bool per (t, ℓ)],
//!   "inner_raw": [raw u in (t, ℓ, d, n) order],
//!   "outer": [w in (o, t, m_1, …, m_L) order],
//!   "meta": { "feature_names": […], "class_names": […],
//!             "normalization": { "min": […], "max": […] } }
//! }
//! ```
//!
//! Weights are written with 17 significant digits, so a save/load round
//! trip reproduces every parameter bit for bit. `meta` is optional.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::dataio::MinMax;
use crate::error::{Error, Result};
use crate::model::{ExSpliNet, InnerWeights, ModelConfig};

pub const FORMAT: &str = "exsplinet-v1";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointMeta {
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub normalization: Option<MinMax>,
}

impl CheckpointMeta {
    fn is_empty(&self) -> bool {
        self.feature_names.is_empty() && self.class_names.is_empty() && self.normalization.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ExSpliNet,
    pub meta: CheckpointMeta,
}

#[derive(Serialize)]
struct Out<'a> {
    format: &'a str,
    config: &'a ModelConfig,
    frozen: &'a [bool],
    inner_raw: Box<RawValue>,
    outer: Box<RawValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<&'a CheckpointMeta>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct In {
    #[allow(dead_code)]
    format: String,
    config: ModelConfig,
    frozen: Vec<bool>,
    inner_raw: Vec<f64>,
    outer: Vec<f64>,
    #[serde(default)]
    meta: Option<CheckpointMeta>,
}

#[derive(Deserialize)]
struct Header {
    format: Option<String>,
}

fn float_array(what: &str, xs: &[f64]) -> Result<Box<RawValue>> {
    let mut s = String::with_capacity(xs.len() * 24 + 2);
    s.push('[');
    for (i, x) in xs.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("{what}[{i}]")));
        }
        if i > 0 {
            s.push(',');
        }
        s.push_str(&format!("{x:.16e}"));
    }
    s.push(']');
    RawValue::from_string(s).map_err(|e| Error::Format(e.to_string()))
}

/// Serializes a model and optional metadata to the checkpoint document.
pub fn to_string(model: &ExSpliNet, meta: &CheckpointMeta) -> Result<String> {
    let inner_len = model.layout().inner_len();
    let out = Out {
        format: FORMAT,
        config: model.config(),
        frozen: model.frozen(),
        inner_raw: float_array("inner_raw", &model.params()[..inner_len])?,
        outer: float_array("outer", &model.params()[inner_len..])?,
        meta: (!meta.is_empty()).then_some(meta),
    };
    let mut s = serde_json::to_string_pretty(&out).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn from_str(text: &str) -> Result<Checkpoint> {
    let header: Header =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("not a checkpoint: {e}")))?;
    match header.format.as_deref() {
        Some(FORMAT) => {}
        found => {
            return Err(Error::VersionMismatch {
                found: found.unwrap_or("<missing>").to_string(),
                expected: FORMAT.to_string(),
            })
        }
    }
    let doc: In = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let model = ExSpliNet::from_parts(
        doc.config,
        InnerWeights {
            raw: doc.inner_raw,
            frozen: doc.frozen,
        },
        doc.outer,
    )?;
    let meta = doc.meta.unwrap_or_default();
    if let Some(n) = &meta.normalization {
        let d = model.config().inputs;
        if n.min.len() != d || n.max.len() != d {
            return Err(Error::shape(
                format!("normalization for {d} inputs"),
                format!("{} min / {} max values", n.min.len(), n.max.len()),
            ));
        }
    }
    Ok(Checkpoint { model, meta })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &ExSpliNet, meta: &CheckpointMeta) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_string(model, meta)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_identity;

    fn model() -> ExSpliNet {
        ExSpliNet::init_random(ModelConfig::uniform(2, 2, 3, 2, 4, 3, 2, 1), 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let meta = CheckpointMeta {
            feature_names: vec!["a".into(), "b".into()],
            class_names: vec!["p".into(), "q".into()],
            normalization: Some(MinMax {
                min: vec![0.1, -3.0],
                max: vec![1.0 / 3.0, 7.0],
            }),
        };
        let text = to_string(&m, &meta).unwrap();
        let back = from_str(&text).unwrap();
        assert_eq!(back.meta, meta);
        let a: Vec<u64> = m.params().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u64> = back.model.params().iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(to_string(&back.model, &back.meta).unwrap(), text);
    }

    #[test]
    fn frozen_blocks_survive() {
        let cfg = ModelConfig::uniform(2, 1, 1, 2, 5, 4, 3, 3);
        let m = model_with(&cfg);
        let back = from_str(&to_string(&m, &CheckpointMeta::default()).unwrap()).unwrap();
        assert_eq!(back.model, m);
        assert!(back.model.is_frozen(0, 0));
        assert!(!to_string(&m, &CheckpointMeta::default()).unwrap().contains("meta"));
    }

    fn model_with(cfg: &ModelConfig) -> ExSpliNet {
        ExSpliNet::init_random(cfg.clone(), 0)
            .unwrap()
            .with_inner(init_identity(cfg).unwrap())
            .unwrap()
    }

    #[test]
    fn version_and_schema_errors() {
        let text = to_string(&model(), &CheckpointMeta::default()).unwrap();
        let old = text.replace("exsplinet-v1", "exsplinet-v0");
        assert!(matches!(from_str(&old), Err(Error::VersionMismatch { .. })));
        let extra = text.replacen('{', "{\"extra\": 1,", 1);
        assert!(matches!(from_str(&extra), Err(Error::Format(_))));
        let short = text.replacen("\"outer\": [", "\"outer\": [1.0,", 1);
        assert!(matches!(from_str(&short), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn non_finite_weights_are_refused() {
        let mut m = model();
        let n = m.param_count();
        m.update_params(|p| p[n - 1] = f64::NAN).unwrap();
        assert!(matches!(to_string(&m, &CheckpointMeta::default()), Err(Error::NonFinite(_))));
    }
}
