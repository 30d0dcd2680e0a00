//! Parallel-arc network, flows and the user population.
//!
//! Discomfort follows the Bureau of Public Roads form
//! `d_j(x_j) = d0_j * (1 + alpha * (x_j / kappa_j)^beta)` and the societal
//! cost of an arc is `c_j(x_j) = c0_j * d_j(x_j)`, so `C(x) = sum_j c_j(x_j) x_j`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n` parallel arcs between one origin and one destination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    /// Free-flow discomfort per arc.
    #[serde(rename = "d0")]
    pub free_flow: Vec<f64>,
    /// Capacity per arc.
    #[serde(rename = "kappa")]
    pub capacity: Vec<f64>,
    pub alpha: f64,
    pub beta: u32,
    /// Societal weight per arc.
    #[serde(rename = "c0")]
    pub societal_weight: Vec<f64>,
}

impl Network {
    pub fn new(
        free_flow: Vec<f64>,
        capacity: Vec<f64>,
        alpha: f64,
        beta: u32,
        societal_weight: Vec<f64>,
    ) -> Result<Self> {
        let net = Network {
            free_flow,
            capacity,
            alpha,
            beta,
            societal_weight,
        };
        let problems = net.problems("network");
        if problems.is_empty() {
            Ok(net)
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Collects every invariant violation, prefixed with `path`.
    pub fn problems(&self, path: &str) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.free_flow.len();
        if n < 2 {
            out.push(format!("{path}.d0: need at least 2 arcs, got {n}"));
        }
        for (name, v) in [
            ("d0", &self.free_flow),
            ("kappa", &self.capacity),
            ("c0", &self.societal_weight),
        ] {
            if v.len() != n {
                out.push(format!("{path}.{name}: length {} != n = {n}", v.len()));
            }
            if let Some(bad) = v.iter().find(|&&e| !(e > 0.0 && e.is_finite())) {
                out.push(format!("{path}.{name}: entries must be positive, found {bad}"));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            out.push(format!("{path}.alpha: must be >= 0, got {}", self.alpha));
        }
        if self.beta < 1 {
            out.push(format!("{path}.beta: must be >= 1"));
        }
        out
    }

    pub fn n(&self) -> usize {
        self.free_flow.len()
    }

    /// Discomfort of arc `j` at flow `xj`.
    #[inline]
    pub fn arc_discomfort(&self, j: usize, xj: f64) -> f64 {
        let ratio = xj / self.capacity[j];
        self.free_flow[j] * (1.0 + self.alpha * ratio.powi(self.beta as i32))
    }

    /// Derivative of the societal arc cost `c0_j d_j(x) x` with respect to `x`.
    #[inline]
    pub fn arc_marginal_cost(&self, j: usize, xj: f64) -> f64 {
        let ratio = xj / self.capacity[j];
        let b = self.beta as i32;
        self.societal_weight[j]
            * self.free_flow[j]
            * (1.0 + self.alpha * (b + 1) as f64 * ratio.powi(b))
    }

    pub fn discomfort(&self, x: &FlowVector) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(x.0
            .iter()
            .enumerate()
            .map(|(j, &xj)| self.arc_discomfort(j, xj))
            .collect())
    }

    pub fn societal_cost(&self, x: &FlowVector) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.cost_unchecked(&x.0))
    }

    pub(crate) fn cost_unchecked(&self, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(j, &xj)| self.societal_weight[j] * self.arc_discomfort(j, xj) * xj)
            .sum()
    }

    fn check_dim(&self, x: &FlowVector) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::invalid(format!(
                "flow vector has {} entries, network has {} arcs",
                x.len(),
                self.n()
            )));
        }
        Ok(())
    }
}

/// Fraction of the population on each arc.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowVector(pub Vec<f64>);

impl FlowVector {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        let f = FlowVector(x);
        f.validate()?;
        Ok(f)
    }

    pub fn zeros(n: usize) -> Self {
        FlowVector(vec![0.0; n])
    }

    pub fn validate(&self) -> Result<()> {
        const SLACK: f64 = 1e-12;
        if let Some(v) = self.0.iter().find(|&&v| !(-SLACK..=1.0 + SLACK).contains(&v)) {
            return Err(Error::invalid(format!("flow entry {v} outside [0, 1]")));
        }
        let total = self.total();
        if total > 1.0 + 1e-9 {
            return Err(Error::invalid(format!("flows sum to {total} > 1")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Daily sensitivity (urgency) distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SensitivityDist {
    Uniform { min: f64, max: f64 },
}

impl SensitivityDist {
    pub fn min(&self) -> f64 {
        match *self {
            SensitivityDist::Uniform { min, .. } => min,
        }
    }

    pub fn max(&self) -> f64 {
        match *self {
            SensitivityDist::Uniform { max, .. } => max,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            SensitivityDist::Uniform { min, max } => 0.5 * (min + max),
        }
    }

    /// Probability mass of `[lo, hi]`.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        match *self {
            SensitivityDist::Uniform { min, max } => {
                let lo = lo.max(min);
                let hi = hi.min(max);
                if hi <= lo {
                    0.0
                } else {
                    (hi - lo) / (max - min)
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            SensitivityDist::Uniform { min, max } => min + (max - min) * rng.random::<f64>(),
        }
    }

    pub fn bounds(&self) -> SensitivityBounds {
        SensitivityBounds {
            min: self.min(),
            max: self.max(),
            mean: self.mean(),
        }
    }

    fn problems(&self, path: &str) -> Vec<String> {
        let mut out = Vec::new();
        match *self {
            SensitivityDist::Uniform { min, max } => {
                if !(min >= 0.0 && min.is_finite() && max.is_finite()) {
                    out.push(format!("{path}: bounds must be finite with min >= 0"));
                } else if max <= min {
                    out.push(format!("{path}: max ({max}) must exceed min ({min})"));
                }
                if self.mean() <= 0.0 {
                    out.push(format!("{path}: mean sensitivity must be positive"));
                }
            }
        }
        out
    }
}

/// Support bounds and mean of the sensitivity distribution, as used by the
/// best-response thresholds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensitivityBounds {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// How the reference-Karma distribution is configured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KrefSpec {
    /// Discrete uniform over `{0} ∪ {p_j : p_j > 0}`.
    PriceLevels,
    Explicit { support: Vec<i64>, weights: Vec<f64> },
}

/// A resolved discrete reference-Karma distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct KrefDist {
    pub support: Vec<i64>,
    pub weights: Vec<f64>,
}

impl KrefSpec {
    pub fn resolve(&self, prices: &[i64]) -> KrefDist {
        match self {
            KrefSpec::PriceLevels => {
                let mut support: Vec<i64> = std::iter::once(0)
                    .chain(prices.iter().copied().filter(|&p| p > 0))
                    .collect();
                support.sort_unstable();
                support.dedup();
                let w = 1.0 / support.len() as f64;
                KrefDist {
                    weights: vec![w; support.len()],
                    support,
                }
            }
            KrefSpec::Explicit { support, weights } => KrefDist {
                support: support.clone(),
                weights: weights.clone(),
            },
        }
    }

    fn problems(&self, path: &str) -> Vec<String> {
        let mut out = Vec::new();
        if let KrefSpec::Explicit { support, weights } = self {
            if support.is_empty() {
                out.push(format!("{path}.support: must not be empty"));
            }
            if support.len() != weights.len() {
                out.push(format!(
                    "{path}.weights: length {} != support length {}",
                    weights.len(),
                    support.len()
                ));
            }
            if support.iter().any(|&k| k < 0) {
                out.push(format!("{path}.support: values must be nonnegative"));
            }
            if weights.iter().any(|&w| !(w >= 0.0)) {
                out.push(format!("{path}.weights: must be nonnegative"));
            }
            let sum: f64 = weights.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                out.push(format!("{path}.weights: sum to {sum}, expected 1"));
            }
        }
        out
    }
}

/// The traveling population's behavioural parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Population {
    pub p_home: f64,
    /// Planning horizon `T`.
    pub horizon: u32,
    pub sensitivity: SensitivityDist,
    pub kref: KrefSpec,
}

impl Population {
    pub fn p_go(&self) -> f64 {
        1.0 - self.p_home
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems("population");
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn problems(&self, path: &str) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.p_home) {
            out.push(format!("{path}.p_home: must lie in [0, 1], got {}", self.p_home));
        }
        if self.horizon < 1 {
            out.push(format!("{path}.horizon: must be >= 1"));
        }
        out.extend(self.sensitivity.problems(&format!("{path}.sensitivity")));
        out.extend(self.kref.problems(&format!("{path}.kref")));
        out
    }
}
