//! Versioned JSON for solved values and policies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Action, MdpSpec, MdpState, Solution, ValueFunction, Variant};
use crate::error::{Error, Result};

pub const POLICY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub value: f64,
    pub action: String,
}

/// Decision states keyed by `"vf,vb,va,e,i,m,l"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub version: u32,
    pub k: u32,
    pub horizon: u32,
    pub variant: Variant,
    pub states: BTreeMap<String, PolicyEntry>,
}

impl PolicyFile {
    pub fn from_solution(spec: &MdpSpec, sol: &Solution) -> PolicyFile {
        let states = spec
            .decision_states()
            .map(|(i, s)| {
                let action = sol.policy[i].map(|a| a.as_str()).unwrap_or("WAIT").to_string();
                (s.key(), PolicyEntry { value: sol.values.u[i], action })
            })
            .collect();
        PolicyFile { version: POLICY_VERSION, k: spec.k, horizon: spec.horizon, variant: spec.variant, states }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<PolicyFile> {
        let f: PolicyFile = serde_json::from_str(text)?;
        if f.version != POLICY_VERSION {
            return Err(Error::Version(f.version));
        }
        for key in f.states.keys() {
            MdpState::from_key(key)?;
        }
        Ok(f)
    }

    pub fn get(&self, s: &MdpState) -> Result<&PolicyEntry> {
        self.states.get(&s.key()).ok_or_else(|| Error::MissingState(s.key()))
    }

    pub fn action(&self, s: &MdpState) -> Result<Action> {
        let entry = self.get(s)?;
        entry.action.parse()
    }

    /// Rebuild a solution over `spec` from the stored decision values.
    /// Chance nodes take their expectation over the stored values.
    pub fn to_solution(&self, spec: &MdpSpec) -> Result<Solution> {
        if (self.k, self.horizon, self.variant) != (spec.k, spec.horizon, spec.variant) {
            return Err(Error::InvalidArgument(format!(
                "policy is for k={}, horizon={}, {} but the model gives k={}, horizon={}, {}",
                self.k, self.horizon, self.variant, spec.k, spec.horizon, spec.variant
            )));
        }
        let n = spec.len();
        let mut u = vec![0.0; n];
        let mut policy = vec![None; n];
        for (i, s) in spec.decision_states() {
            u[i] = self.get(s)?.value;
            policy[i] = Some(self.action(s)?);
        }
        let chance: Vec<usize> = (0..n).filter(|&i| spec.nodes[i].is_chance()).collect();
        for &i in &chance {
            if let Some(row) = spec.kernel.rows_of(i).first() {
                u[i] = spec.kernel.q_value(row, &u);
                policy[i] = Some(row.action);
            }
        }
        let residual = spec.kernel.bellman_residual(&u);
        Ok(Solution { values: ValueFunction { u, sweeps: 0, updates: 0, residual }, policy })
    }
}
