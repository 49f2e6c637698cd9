//! Self-describing JSON model files.
//!
//! Parameters are stored as named flat arrays next to the architecture tag
//! and dims. `serde_json` prints shortest round-trip decimals, so a
//! save/load cycle is value-exact for `f64`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, ModelDims, ModelParams, MultiModelParams, SingleModelParams, SurfaceModel, VanillaModelParams};
use crate::error::{Error, Result};
use crate::Scalar;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub arch: String,
    pub dims: Option<ModelDims>,
    pub params: BTreeMap<String, Vec<f64>>,
    pub eps_smile: Option<f64>,
    #[serde(default)]
    pub training_meta: serde_json::Value,
}

impl ModelFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        Ok(file)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    /// Fetches a named array and checks its length.
    pub fn array(&self, name: &str, expected: usize) -> Result<&[f64]> {
        let values = self
            .params
            .get(name)
            .ok_or_else(|| Error::Parse(format!("missing parameter array `{name}`")))?;
        if values.len() != expected {
            return Err(Error::Parse(format!(
                "parameter array `{name}` has length {}, expected {expected}",
                values.len()
            )));
        }
        Ok(values)
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        Ok(self.array(name, 1)?[0])
    }
}

fn to_f64s<T: Scalar>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.as_f64()).collect()
}

fn from_f64s<T: Scalar>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::lit(x)).collect()
}

impl<T: Scalar> SurfaceModel<T> {
    pub fn to_file(&self, training_meta: serde_json::Value) -> ModelFile {
        let mut params = BTreeMap::new();
        match &self.params {
            ModelParams::Single(p) => insert_single(&mut params, std::slice::from_ref(p)),
            ModelParams::Multi(p) => {
                insert_single(&mut params, &p.experts);
                params.insert("w_dot".into(), to_f64s(&p.w_dot));
                params.insert("b_dot".into(), to_f64s(&p.b_dot));
                params.insert("w_ddot".into(), to_f64s(&p.w_ddot));
                params.insert("b_ddot".into(), to_f64s(&p.b_ddot));
            }
            ModelParams::Vanilla(p) => {
                params.insert("w1".into(), to_f64s(&p.w1));
                params.insert("w2".into(), to_f64s(&p.w2));
                params.insert("b".into(), to_f64s(&p.b));
                params.insert("w_hat".into(), to_f64s(&p.w_hat));
                params.insert("b_hat".into(), vec![p.b_hat.as_f64()]);
            }
        }
        ModelFile {
            schema_version: SCHEMA_VERSION,
            arch: self.arch().tag().to_string(),
            dims: Some(self.dims()),
            params,
            eps_smile: Some(self.smile_eps.as_f64()),
            training_meta,
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        let arch: Architecture = file.arch.parse()?;
        let dims = file.dims.ok_or_else(|| Error::Parse("missing field `dims`".into()))?;
        dims.validate_for(arch).map_err(|e| Error::Parse(e.to_string()))?;
        let eps = file.eps_smile.ok_or_else(|| Error::Parse("missing field `eps_smile`".into()))?;
        let (i, j, k) = (dims.experts, dims.hidden, dims.gate_hidden);
        let params = match arch {
            Architecture::Single => ModelParams::Single(read_single(file, 1, j)?.remove(0)),
            Architecture::Multi => ModelParams::Multi(MultiModelParams {
                experts: read_single(file, i, j)?,
                w_dot: from_f64s(file.array("w_dot", 2 * k)?),
                b_dot: from_f64s(file.array("b_dot", k)?),
                w_ddot: from_f64s(file.array("w_ddot", k * i)?),
                b_ddot: from_f64s(file.array("b_ddot", i)?),
            }),
            Architecture::Vanilla => ModelParams::Vanilla(VanillaModelParams {
                w1: from_f64s(file.array("w1", j)?),
                w2: from_f64s(file.array("w2", j)?),
                b: from_f64s(file.array("b", j)?),
                w_hat: from_f64s(file.array("w_hat", j)?),
                b_hat: T::lit(file.scalar("b_hat")?),
            }),
        };
        SurfaceModel::with_smile_eps(params, T::lit(eps)).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self, training_meta: serde_json::Value) -> String {
        self.to_file(training_meta).to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(&ModelFile::from_json(text)?)
    }
}

/// Expert arrays are stored expert-major: `w_bar` holds `I × J` values.
fn insert_single<T: Scalar>(params: &mut BTreeMap<String, Vec<f64>>, experts: &[SingleModelParams<T>]) {
    let cat = |f: fn(&SingleModelParams<T>) -> &Vec<T>| -> Vec<f64> {
        experts.iter().flat_map(|e| f(e).iter().map(|x| x.as_f64())).collect()
    };
    params.insert("w_bar".into(), cat(|e| &e.w_bar));
    params.insert("b_bar".into(), cat(|e| &e.b_bar));
    params.insert("w_tilde".into(), cat(|e| &e.w_tilde));
    params.insert("b_tilde".into(), cat(|e| &e.b_tilde));
    params.insert("w_hat".into(), cat(|e| &e.w_hat));
    params.insert("b_hat".into(), experts.iter().map(|e| e.b_hat.as_f64()).collect());
}

fn read_single<T: Scalar>(file: &ModelFile, experts: usize, hidden: usize) -> Result<Vec<SingleModelParams<T>>> {
    let w_bar = file.array("w_bar", experts * hidden)?;
    let b_bar = file.array("b_bar", experts * hidden)?;
    let w_tilde = file.array("w_tilde", experts * hidden)?;
    let b_tilde = file.array("b_tilde", experts * hidden)?;
    let w_hat = file.array("w_hat", experts * hidden)?;
    let b_hat = file.array("b_hat", experts)?;
    Ok((0..experts)
        .map(|i| {
            let r = i * hidden..(i + 1) * hidden;
            SingleModelParams {
                w_bar: from_f64s(&w_bar[r.clone()]),
                b_bar: from_f64s(&b_bar[r.clone()]),
                w_tilde: from_f64s(&w_tilde[r.clone()]),
                b_tilde: from_f64s(&b_tilde[r.clone()]),
                w_hat: from_f64s(&w_hat[r]),
                b_hat: T::lit(b_hat[i]),
            }
        })
        .collect())
}
