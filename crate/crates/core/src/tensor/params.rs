//! Trainable parameter storage, graph binding and weight checkpoints.
//!
//! Checkpoint layout: one line of compact JSON (the shape manifest) followed
//! by `\n` and the concatenated tensor data as little-endian `f64`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{sgd_step, Graph, Gradients, SgdConfig, SgdState, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Every trainable tensor of one network instance.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
    names: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    tensors: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

const FORMAT: &str = "f64-le";

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.tensors.push(tensor.with_requires_grad(true));
        self.names.push(name.into());
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Replaces the values of `id`, keeping its shape.
    pub fn set_values(&mut self, id: ParamId, values: &[f64]) -> Result<()> {
        let t = &mut self.tensors[id.0];
        if values.len() != t.numel() {
            return Err(Error::shape("param", format!("{} values for {} elements", values.len(), t.numel())));
        }
        t.data_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Number of trainable scalars.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        for t in &self.tensors {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(Error::shape(
                "assign_flat",
                format!("{} values for {} parameters", flat.len(), self.numel()),
            ));
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// SGD over all tensors, reporting non-finite gradients by parameter name.
    pub fn sgd_step(&mut self, grads: &[Vec<f64>], lr: f64, cfg: &SgdConfig, state: &mut SgdState) -> Result<()> {
        sgd_step(&mut self.tensors, grads, lr, cfg, state).map_err(|e| match e {
            Error::Numeric(msg) => {
                let name = msg
                    .split('#')
                    .nth(1)
                    .and_then(|s| s.split_whitespace().next())
                    .and_then(|s| s.parse::<usize>().ok())
                    .and_then(|i| self.names.get(i).cloned())
                    .unwrap_or_default();
                Error::Numeric(format!("{msg} ({name})"))
            }
            other => other,
        })
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let manifest = Manifest {
            format: FORMAT.to_string(),
            tensors: self
                .tensors
                .iter()
                .zip(&self.names)
                .map(|(t, n)| ManifestEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let mut bytes = serde_json::to_vec(&manifest)?;
        bytes.push(b'\n');
        for t in &self.tensors {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    /// Loads values into an already-built store; names and shapes must match.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let split = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason: "missing manifest terminator".into(),
        })?;
        let manifest: Manifest = serde_json::from_slice(&bytes[..split])?;
        let format_err = |offset: usize, reason: String| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            reason,
        };
        if manifest.format != FORMAT || manifest.tensors.len() != self.tensors.len() {
            return Err(format_err(0, "manifest does not match this network".into()));
        }
        let mut offset = split + 1;
        for (entry, t) in manifest.tensors.iter().zip(&mut self.tensors) {
            if entry.shape != t.shape() {
                return Err(format_err(
                    offset,
                    format!("tensor {} has shape {:?}, expected {:?}", entry.name, entry.shape, t.shape()),
                ));
            }
            let need = t.numel() * 8;
            if bytes.len() < offset + need {
                return Err(format_err(offset, format!("expected {need} bytes, file ends early")));
            }
            for (v, chunk) in t.data_mut().iter_mut().zip(bytes[offset..offset + need].chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
            offset += need;
        }
        if offset != bytes.len() {
            return Err(format_err(offset, "trailing bytes after last tensor".into()));
        }
        Ok(())
    }
}

/// A graph plus lazily created leaves for the parameters it touches.
pub struct Session<'s> {
    pub graph: Graph,
    store: &'s ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'s> Session<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bound: vec![None; store.len()],
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.graph.leaf(self.store.get(id).clone(), true);
        self.bound[id.0] = Some(v);
        v
    }

    /// Gradients for every stored parameter, zeros where unused.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<Vec<f64>> {
        self.bound
            .iter()
            .enumerate()
            .map(|(i, b)| match b {
                Some(v) => grads.get_or_zeros(*v),
                None => vec![0.0; self.store.tensors[i].numel()],
            })
            .collect()
    }
}
