//! Self-describing JSON container for a [`ParamStore`].
//!
//! Floats are written with shortest round-trip formatting and parsed exactly,
//! so a save/load cycle reproduces every bit.

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

/// Serializable image of every parameter, optimizer moment and buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreSnapshot {
    pub format_version: u32,
    pub params: Vec<ParamRecord>,
    pub buffers: Vec<NamedArray>,
}

impl StoreSnapshot {
    pub fn capture(store: &ParamStore) -> Self {
        let params = store
            .ids()
            .map(|id| {
                let p = store.get(id);
                ParamRecord {
                    name: store.name(id).to_string(),
                    shape: p.value.shape().to_vec(),
                    value: p.value.data().to_vec(),
                    first_moment: p.first_moment.data().to_vec(),
                    second_moment: p.second_moment.data().to_vec(),
                    step_count: p.step_count,
                }
            })
            .collect();
        let buffers = store
            .buffer_ids()
            .map(|id| NamedArray {
                name: store.buffer_name(id).to_string(),
                shape: store.buffer(id).shape().to_vec(),
                data: store.buffer(id).data().to_vec(),
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            params,
            buffers,
        }
    }

    /// Writes the snapshot into a store built for the same architecture.
    /// Names and shapes must match one-for-one.
    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint format version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.params.len() != store.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (id, rec) in store.ids().zip(&self.params) {
            if store.name(id) != rec.name || store.value(id).shape() != rec.shape.as_slice() {
                return Err(Error::Data(format!(
                    "checkpoint parameter `{}` {:?} does not match model parameter `{}` {:?}",
                    rec.name,
                    rec.shape,
                    store.name(id),
                    store.value(id).shape()
                )));
            }
            let p = store.get_mut(id);
            p.value = Tensor::new(rec.shape.clone(), rec.value.clone())?;
            p.first_moment = Tensor::new(rec.shape.clone(), rec.first_moment.clone())?;
            p.second_moment = Tensor::new(rec.shape.clone(), rec.second_moment.clone())?;
            p.step_count = rec.step_count;
        }
        let ids: Vec<_> = store.buffer_ids().collect();
        if ids.len() != self.buffers.len() {
            return Err(Error::Data("buffer count mismatch".into()));
        }
        for (id, rec) in ids.into_iter().zip(&self.buffers) {
            if store.buffer_name(id) != rec.name || store.buffer(id).shape() != rec.shape.as_slice() {
                return Err(Error::Data(format!("buffer `{}` does not match", rec.name)));
            }
            *store.buffer_mut(id) = Tensor::new(rec.shape.clone(), rec.data.clone())?;
        }
        Ok(())
    }
}
