//! JSON checkpoint: `{version: 1, shapes: {name: [..]}, arrays: {name: [..]}}`
//! with arrays flattened row-major.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::ModelParams;
use crate::error::{Error, Result};
use crate::num::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub shapes: BTreeMap<String, Vec<usize>>,
    pub arrays: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn from_params<T: Scalar>(params: &ModelParams<T>) -> Self {
        let mut shapes = BTreeMap::new();
        let mut arrays = BTreeMap::new();
        for ((name, shape, _), (_, data)) in ModelParams::<T>::layout().into_iter().zip(params.tensors()) {
            shapes.insert(name.to_string(), shape);
            arrays.insert(name.to_string(), data.iter().map(|v| v.f64()).collect());
        }
        Checkpoint {
            version: CHECKPOINT_VERSION,
            shapes,
            arrays,
        }
    }

    pub fn to_params<T: Scalar>(&self) -> Result<ModelParams<T>> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::domain(format!("unsupported checkpoint version {}", self.version)));
        }
        let mut params = ModelParams::<T>::zeros();
        for ((name, shape, _), (_, dst)) in ModelParams::<T>::layout().into_iter().zip(params.tensors_mut()) {
            let got = self
                .shapes
                .get(name)
                .ok_or_else(|| Error::domain(format!("checkpoint is missing shape for {name}")))?;
            if *got != shape {
                return Err(Error::domain(format!("{name}: expected shape {shape:?}, found {got:?}")));
            }
            let data = self
                .arrays
                .get(name)
                .ok_or_else(|| Error::domain(format!("checkpoint is missing array {name}")))?;
            if data.len() != dst.len() {
                return Err(Error::domain(format!(
                    "{name}: expected {} values, found {}",
                    dst.len(),
                    data.len()
                )));
            }
            for (d, &s) in dst.iter_mut().zip(data) {
                *d = T::of(s);
            }
        }
        if !params.is_finite() {
            return Err(Error::domain("checkpoint contains non-finite values"));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn save_params<T: Scalar>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    Checkpoint::from_params(params).save(path)
}

pub fn load_params<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    Checkpoint::load(path)?.to_params()
}
