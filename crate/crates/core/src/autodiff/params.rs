//! Named parameter tensors and their JSON container.

use super::tape::{Tape, Tensor};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Name → tensor map of every learnable quantity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Param>,
}

#[derive(Serialize, Deserialize)]
struct ParamDoc {
    shape: Vec<usize>,
    values: Vec<String>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::contract("ParameterStore::insert", format!("duplicate parameter `{name}`")));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::contract(
                "ParameterStore::insert",
                format!("`{name}`: shape {shape:?} needs {n} values, got {}", values.len()),
            ));
        }
        self.params.insert(
            name,
            Param {
                shape: shape.to_vec(),
                values,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.values.len()).sum()
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &Tape) -> Result<Bound> {
        let mut tensors = HashMap::with_capacity(self.params.len());
        for (name, p) in &self.params {
            tensors.insert(name.clone(), tape.leaf(name, p.values.clone(), &p.shape)?);
        }
        Ok(Bound { tensors })
    }

    /// Decimal strings round-trip `f64` exactly.
    pub fn to_json(&self) -> serde_json::Value {
        let doc: BTreeMap<&String, ParamDoc> = self
            .params
            .iter()
            .map(|(k, p)| {
                (
                    k,
                    ParamDoc {
                        shape: p.shape.clone(),
                        values: p.values.iter().map(|v| format!("{v:?}")).collect(),
                    },
                )
            })
            .collect();
        serde_json::to_value(doc).expect("parameter documents serialize")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let doc: BTreeMap<String, ParamDoc> = serde_json::from_value(value.clone())?;
        let mut store = Self::new();
        for (name, p) in doc {
            let values = p
                .values
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Data(format!("parameter `{name}`: bad value `{s}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            store.insert(name, &p.shape, values)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&serde_json::from_str(&text)?)
    }
}

/// Parameters materialized on one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    tensors: HashMap<String, Tensor>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::contract("Bound::get", format!("no parameter named `{name}`")))
    }
}
