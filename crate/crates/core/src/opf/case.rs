//! Network case schema and validation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_base_mva() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: u32,
}

/// Generator with cost `a p² + b p` (`p` in MW).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: u32,
    pub a: f64,
    pub b: f64,
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
}

/// Series admittance `g + j·b_susceptance` in per unit on the case base,
/// apparent-power limit `k_max` in MVA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub from: u32,
    pub to: u32,
    pub g: f64,
    pub b_susceptance: f64,
    pub k_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltageLimits {
    pub vmin: f64,
    pub vmax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub bus: u32,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCase {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// System base in MVA for the per-unit admittances.
    #[serde(default = "default_base_mva")]
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub lines: Vec<Line>,
    pub voltage: VoltageLimits,
    pub loads: Vec<Load>,
}

fn finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidCase(format!("{what} is not finite")))
    }
}

fn ordered(what: &str, lo: f64, hi: f64) -> Result<()> {
    finite(what, lo)?;
    finite(what, hi)?;
    if lo < hi {
        Ok(())
    } else {
        Err(Error::InvalidCase(format!("{what}: lower limit {lo} must be below upper limit {hi}")))
    }
}

impl NetworkCase {
    pub fn from_json(text: &str) -> Result<Self> {
        let case: NetworkCase = serde_json::from_str(text).map_err(|e| Error::InvalidCase(e.to_string()))?;
        case.validate()?;
        Ok(case)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidCase(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Position of each bus id in `buses`.
    pub fn bus_index(&self) -> BTreeMap<u32, usize> {
        self.buses.iter().enumerate().map(|(k, b)| (b.id, k)).collect()
    }

    /// Checks references, limits and connectivity. Limits must be strictly
    /// ordered so the relaxation has an interior.
    pub fn validate(&self) -> Result<()> {
        if self.buses.is_empty() {
            return Err(Error::InvalidCase("case has no buses".into()));
        }
        if !(self.base_mva > 0.0) || !self.base_mva.is_finite() {
            return Err(Error::InvalidCase("base_mva must be positive".into()));
        }
        let index = self.bus_index();
        if index.len() != self.buses.len() {
            return Err(Error::InvalidCase("duplicate bus id".into()));
        }
        let known = |id: u32, what: &str| {
            if index.contains_key(&id) {
                Ok(())
            } else {
                Err(Error::InvalidCase(format!("{what} refers to unknown bus {id}")))
            }
        };
        let v = self.voltage;
        if !(v.vmin > 0.0) {
            return Err(Error::InvalidCase("vmin must be positive".into()));
        }
        ordered("voltage", v.vmin, v.vmax)?;
        for (k, g) in self.generators.iter().enumerate() {
            known(g.bus, "generator")?;
            finite("generator cost", g.a)?;
            finite("generator cost", g.b)?;
            if g.a < 0.0 {
                return Err(Error::InvalidCase(format!("generator {k}: quadratic cost must be non-negative")));
            }
            ordered(&format!("generator {k} active power"), g.pmin, g.pmax)?;
            ordered(&format!("generator {k} reactive power"), g.qmin, g.qmax)?;
        }
        let mut pairs = BTreeSet::new();
        for (k, l) in self.lines.iter().enumerate() {
            known(l.from, "line")?;
            known(l.to, "line")?;
            if l.from == l.to {
                return Err(Error::InvalidCase(format!("line {k} is a self-loop")));
            }
            if !pairs.insert((l.from.min(l.to), l.from.max(l.to))) {
                return Err(Error::InvalidCase(format!("line {k} duplicates a bus pair")));
            }
            finite("line admittance", l.g)?;
            finite("line admittance", l.b_susceptance)?;
            if l.g == 0.0 && l.b_susceptance == 0.0 {
                return Err(Error::InvalidCase(format!("line {k} has zero admittance")));
            }
            if !(l.k_max > 0.0) || !l.k_max.is_finite() {
                return Err(Error::InvalidCase(format!("line {k}: k_max must be positive")));
            }
        }
        for l in &self.loads {
            known(l.bus, "load")?;
            finite("load", l.p)?;
            finite("load", l.q)?;
        }
        if !self.is_connected() {
            return Err(Error::DisconnectedNetwork);
        }
        Ok(())
    }

    pub fn is_connected(&self) -> bool {
        let index = self.bus_index();
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            if let (Some(&i), Some(&j)) = (index.get(&l.from), index.get(&l.to)) {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serializes")
    }
}
