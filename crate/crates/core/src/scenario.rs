//! TOML scenario files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::DesignConfig;
use crate::error::{Error, Result};
use crate::network::{Network, Population};
use crate::response::PriceVector;
use crate::sim::SimConfig;

/// The reference five-arc scenario shipped with the crate.
pub const PAPER_SEC6: &str = include_str!("../scenarios/paper_sec6.toml");

fn default_seed() -> u64 {
    42
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Master seed; every random stream of a run derives from it.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Prices used when none are given on the command line.
    #[serde(default)]
    pub prices: Option<Vec<i64>>,
    /// Initial Karma for chain and aggregate evaluations; defaults to `p_1`.
    #[serde(default)]
    pub k0: Option<i64>,
    pub network: Network,
    pub population: Population,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default)]
    pub sim: SimConfig,
}

impl Scenario {
    /// Every invariant violation, each with its field path.
    pub fn problems(&self) -> Vec<String> {
        let n = self.network.free_flow.len();
        let mut out = self.network.problems("network");
        out.extend(self.population.problems("population"));
        out.extend(self.design.problems("design", n));
        out.extend(self.sim.problems("sim"));
        if let Some(p) = &self.prices {
            if p.len() != n {
                out.push(format!("prices: length {} != n = {n}", p.len()));
            }
        }
        if let Some(k0) = self.k0 {
            if k0 < 0 {
                out.push(format!("k0: Karma cannot be negative, got {k0}"));
            }
        }
        out
    }

    pub fn default_prices(&self) -> Option<PriceVector> {
        self.prices.clone().map(PriceVector)
    }

    /// The design configuration with the master seed applied.
    pub fn design_config(&self, seed: u64) -> DesignConfig {
        DesignConfig {
            seed,
            ..self.design.clone()
        }
    }
}

/// Parses and validates scenario text. `origin` names the source in errors.
pub fn parse_scenario(text: &str, origin: &str) -> Result<Scenario> {
    if text.trim().is_empty() {
        return Err(Error::Parse {
            context: origin.to_string(),
            message: "file is empty".into(),
        });
    }
    let scenario: Scenario = toml::from_str(text).map_err(|e| Error::Parse {
        context: match e.span() {
            Some(span) => {
                let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
                format!("{origin}, line {line}")
            }
            None => origin.to_string(),
        },
        message: e.message().to_string(),
    })?;
    let problems = scenario.problems();
    if problems.is_empty() {
        Ok(scenario)
    } else {
        Err(Error::Validation(problems))
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text, &path.display().to_string())
}
