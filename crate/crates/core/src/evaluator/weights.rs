//! In-memory weight store and its on-disk form: one flat little-endian `f64`
//! file per tensor plus a JSON manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use immunecs_nn::{LayerState, NamedTensor, NetworkSpec, NetworkState};
use serde::{Deserialize, Serialize};

use super::WeightHandle;
use crate::error::DataError;

pub const MANIFEST: &str = "manifest.json";

/// A trained network: its decoded spec and best-epoch parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredNetwork {
    pub spec: NetworkSpec,
    pub state: NetworkState,
}

#[derive(Debug, Default)]
pub struct WeightStore {
    entries: BTreeMap<WeightHandle, StoredNetwork>,
    next: WeightHandle,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, network: StoredNetwork) -> WeightHandle {
        let handle = self.next;
        self.next += 1;
        self.entries.insert(handle, network);
        handle
    }

    pub fn get(&self, handle: WeightHandle) -> Option<&StoredNetwork> {
        self.entries.get(&handle)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    /// `stem`, `head` or the zero-based hidden-layer position.
    part: String,
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    spec: NetworkSpec,
    tensors: Vec<TensorEntry>,
}

impl StoredNetwork {
    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir)?;
        let mut tensors = Vec::new();
        let parts = std::iter::once(("stem".to_string(), &self.state.stem))
            .chain(self.state.nodes.iter().enumerate().map(|(i, s)| (i.to_string(), s)))
            .chain(std::iter::once(("head".to_string(), &self.state.head)));
        for (part, layer) in parts {
            for t in &layer.tensors {
                let file = format!("{part}.{}.bin", t.name);
                let bytes: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
                fs::write(dir.join(&file), bytes)?;
                tensors.push(TensorEntry {
                    part: part.clone(),
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    file,
                });
            }
        }
        let manifest = Manifest {
            spec: self.spec.clone(),
            tensors,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(dir.join(MANIFEST), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let path = dir.join(MANIFEST);
        let format = |message: String| DataError::Format {
            path: path.clone(),
            message,
        };
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)
            .map_err(|e| format(e.to_string()))?;
        let mut state = NetworkState {
            stem: LayerState::default(),
            nodes: vec![LayerState::default(); manifest.spec.layers.len()],
            head: LayerState::default(),
        };
        for entry in manifest.tensors {
            let bytes = fs::read(dir.join(&entry.file))?;
            let len: usize = entry.shape.iter().product();
            if bytes.len() != 8 * len {
                return Err(format(format!(
                    "{} holds {} bytes, shape {:?} needs {}",
                    entry.file,
                    bytes.len(),
                    entry.shape,
                    8 * len
                )));
            }
            let data = bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            let tensor = NamedTensor {
                name: entry.name,
                shape: entry.shape,
                data,
            };
            let layer = match entry.part.as_str() {
                "stem" => &mut state.stem,
                "head" => &mut state.head,
                p => {
                    let i: usize = p.parse().map_err(|_| format(format!("unknown part `{p}`")))?;
                    state
                        .nodes
                        .get_mut(i)
                        .ok_or_else(|| format(format!("layer {i} beyond network depth")))?
                }
            };
            layer.tensors.push(tensor);
        }
        Ok(Self {
            spec: manifest.spec,
            state,
        })
    }
}
