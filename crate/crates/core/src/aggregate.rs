//! Steady-state aggregate flows over the reference-Karma distribution.
//!
//! `x = P_go * sum_r theta(r) * P_sel(r) * pi_inf(k0, r)`, every chain built at
//! the same frozen discomforts.

use serde::Serialize;

use crate::chain::{ChainInputs, KarmaChain};
use crate::error::{Error, Result};
use crate::network::{FlowVector, Network, Population};
use crate::response::{check_strict_order, PriceVector};

pub const DEFAULT_DAMPING: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KrefContribution {
    pub k_ref: i64,
    pub weight: f64,
    /// `P_sel * pi_inf` for this reference level; sums to one.
    pub arc_shares: Vec<f64>,
    pub states: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateResult {
    pub flows: FlowVector,
    /// Ascending in `k_ref`.
    pub per_kref: Vec<KrefContribution>,
    pub cost: f64,
}

/// Aggregate flows with every user's decisions evaluated at `x_eval`.
/// `k0` defaults to the largest price.
pub fn steady_state_flows(
    p: &PriceVector,
    x_eval: &FlowVector,
    net: &Network,
    population: &Population,
    k0: Option<i64>,
) -> Result<AggregateResult> {
    if p.len() != net.n() {
        return Err(Error::invalid(format!(
            "price vector has {} entries, network has {} arcs",
            p.len(),
            net.n()
        )));
    }
    let d = net.discomfort(x_eval)?;
    let flows = flows_for_discomfort(p, &d, population, k0)?;
    let cost = net.societal_cost(&flows.flows)?;
    Ok(AggregateResult {
        flows: flows.flows,
        per_kref: flows.per_kref,
        cost,
    })
}

pub(crate) struct Flows {
    pub flows: FlowVector,
    pub per_kref: Vec<KrefContribution>,
}

/// Core of [`steady_state_flows`] for a precomputed discomfort vector.
pub(crate) fn flows_for_discomfort(
    p: &PriceVector,
    d: &[f64],
    population: &Population,
    k0: Option<i64>,
) -> Result<Flows> {
    check_strict_order(d, &p.0)?;
    let k0 = k0.unwrap_or_else(|| p.max());
    let mut theta = population.kref.resolve(&p.0);
    let mut order: Vec<usize> = (0..theta.support.len()).collect();
    order.sort_by_key(|&i| theta.support[i]);
    theta.support = order.iter().map(|&i| theta.support[i]).collect();
    theta.weights = order.iter().map(|&i| theta.weights[i]).collect();
    let total_weight: f64 = theta.weights.iter().sum();
    if theta.support.is_empty() || !(total_weight > 0.0) {
        return Err(Error::invalid("reference-Karma distribution is empty"));
    }

    let p_go = population.p_go();
    let mut flows = vec![0.0; d.len()];
    let mut per_kref = Vec::with_capacity(theta.support.len());
    for (&k_ref, &w) in theta.support.iter().zip(&theta.weights) {
        let weight = w / total_weight;
        let inputs = ChainInputs {
            discomfort: d,
            prices: &p.0,
            k_ref,
            horizon: population.horizon,
            p_home: population.p_home,
            sensitivity: &population.sensitivity,
        };
        let chain = KarmaChain::build(&inputs, k0)?;
        let shares = chain.arc_shares();
        for (f, s) in flows.iter_mut().zip(&shares) {
            *f += p_go * weight * s;
        }
        per_kref.push(KrefContribution {
            k_ref,
            weight,
            arc_shares: shares,
            states: chain.states.len(),
            residual: chain.residual,
        });
    }
    Ok(Flows {
        flows: FlowVector(flows),
        per_kref,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FixedPoint {
    pub flows: FlowVector,
    pub cost: f64,
    pub iterations: usize,
    /// `||flows(p, x) - x||_inf` at the returned iterate.
    pub residual: f64,
}

/// Damped iteration `x <- (1 - lambda) x + lambda flows(p, x)` from `x_init`.
#[allow(clippy::too_many_arguments)]
pub fn damped_fixed_point(
    p: &PriceVector,
    net: &Network,
    population: &Population,
    k0: Option<i64>,
    x_init: &FlowVector,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPoint> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::invalid(format!("damping {lambda} outside (0, 1]")));
    }
    let mut x = x_init.clone();
    let mut residual = f64::INFINITY;
    for it in 0..max_iter {
        let next = steady_state_flows(p, &x, net, population, k0)?.flows;
        residual = next
            .0
            .iter()
            .zip(&x.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual <= tol {
            let cost = net.societal_cost(&x)?;
            return Ok(FixedPoint {
                flows: x,
                cost,
                iterations: it,
                residual,
            });
        }
        for (xi, ni) in x.0.iter_mut().zip(&next.0) {
            *xi = (1.0 - lambda) * *xi + lambda * ni;
        }
    }
    Err(Error::Convergence {
        what: "aggregate fixed point",
        iterations: max_iter,
        residual,
    })
}
