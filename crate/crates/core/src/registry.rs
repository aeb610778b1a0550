//! Built-in models addressed by name, as used by configuration files.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{make_cubic_chain, make_duffing, make_van_der_pol, Excitation, SecondOrderModel};

pub const MODEL_NAMES: [&str; 3] = ["duffing", "cubic_chain", "van_der_pol"];

/// A named model with scalar parameters and its excitation list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub forcing: Vec<Excitation>,
}

/// Accepted parameters and their defaults.
fn defaults(name: &str) -> Option<&'static [(&'static str, f64)]> {
    Some(match name {
        "duffing" => &[("k", 1.0), ("c", 0.1), ("alpha", 1.0)],
        // drive < 0 selects the middle node
        "cubic_chain" => &[("n", 3.0), ("k", 1.0), ("c", 0.01), ("alpha", 0.5), ("drive", -1.0)],
        "van_der_pol" => &[("mu", 0.2), ("k", 1.0), ("alpha", 0.0)],
        _ => return None,
    })
}

impl ModelSpec {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            params: BTreeMap::new(),
            forcing: Vec::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn with_forcing(mut self, forcing: &[Excitation]) -> Self {
        self.forcing = forcing.to_vec();
        self
    }

    /// Parameter value, falling back to the model default.
    pub fn param(&self, key: &str) -> Result<f64> {
        let table = defaults(&self.name).ok_or_else(|| self.unknown())?;
        let default = table
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Config(format!("model '{}' has no parameter '{key}'", self.name)))?;
        Ok(self.params.get(key).copied().unwrap_or(default))
    }

    fn unknown(&self) -> Error {
        Error::Config(format!(
            "unknown model '{}' (available: {})",
            self.name,
            MODEL_NAMES.join(", ")
        ))
    }

    /// Reject unknown names and parameters.
    pub fn validate(&self) -> Result<()> {
        let table = defaults(&self.name).ok_or_else(|| self.unknown())?;
        for key in self.params.keys() {
            if !table.iter().any(|(k, _)| k == key) {
                let known: Vec<_> = table.iter().map(|(k, _)| *k).collect();
                return Err(Error::Config(format!(
                    "model '{}' has no parameter '{key}' (known: {})",
                    self.name,
                    known.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Every parameter with defaults filled in.
    pub fn resolved_params(&self) -> Result<BTreeMap<String, f64>> {
        self.validate()?;
        defaults(&self.name)
            .unwrap()
            .iter()
            .map(|(k, _)| Ok((k.to_string(), self.param(k)?)))
            .collect()
    }

    pub fn build(&self) -> Result<SecondOrderModel> {
        self.validate()?;
        let p = |k: &str| self.param(k);
        match self.name.as_str() {
            "duffing" => make_duffing(p("k")?, p("c")?, p("alpha")?, &self.forcing),
            "cubic_chain" => {
                let n = p("n")?;
                if !(n >= 1.0 && n.fract() == 0.0) {
                    return Err(Error::InvalidModel(format!("chain length must be a positive integer, got {n}")));
                }
                let drive = p("drive")?;
                let dof = (drive >= 0.0).then_some(drive as usize);
                make_cubic_chain(n as usize, p("k")?, p("c")?, p("alpha")?, &self.forcing, dof)
            }
            "van_der_pol" => make_van_der_pol(p("mu")?, p("k")?, p("alpha")?, &self.forcing),
            _ => Err(self.unknown()),
        }
    }

    /// The model with `key` overridden by `value`; used for continuation
    /// in a model parameter.
    pub fn build_with(&self, key: &str, value: f64) -> Result<SecondOrderModel> {
        self.clone().with_param(key, value).build()
    }
}
