//! Brute-force best response by exhaustive LP vertex enumeration.
//!
//! For every affordable arc choice the remaining problem is a linear program
//! over the simplex with one budget row, whose optimum sits on a vertex with at
//! most two nonzero entries. Enumerating every `e_i` within budget and every
//! two-point mix on the budget hyperplane therefore finds the exact optimum,
//! with no ordering or reduction assumptions. Kept independent of the closed
//! form so the two can be cross-checked.

use super::{check_feasible, BestResponseSolution, PriceVector, UserContext, OBJECTIVE_TOL};
use crate::error::{Error, Result};
use crate::network::{FlowVector, Network, SensitivityBounds};

pub fn oracle_best_response(
    ctx: &UserContext,
    p: &PriceVector,
    x: &FlowVector,
    net: &Network,
    sens: &SensitivityBounds,
) -> Result<BestResponseSolution> {
    let d = net.discomfort(x)?;
    oracle_for_discomfort(ctx, p, &d, sens)
}

pub fn oracle_for_discomfort(
    ctx: &UserContext,
    p: &PriceVector,
    d: &[f64],
    sens: &SensitivityBounds,
) -> Result<BestResponseSolution> {
    let n = d.len();
    if p.len() != n {
        return Err(Error::invalid("price vector length differs from arc count"));
    }
    check_feasible(ctx, &p.0)?;
    let t = ctx.horizon as i64;

    let mut per_arc: Vec<Option<(f64, Vec<f64>)>> = Vec::with_capacity(n);
    for j in 0..n {
        if p.0[j] > ctx.karma {
            per_arc.push(None);
            continue;
        }
        // T p'ybar <= budget
        let budget = ctx.karma - ctx.k_ref - p.0[j];
        per_arc.push(cheapest_plan(d, &p.0, t, budget).map(|(cost, y)| {
            let obj = ctx.sensitivity * d[j] + t as f64 * sens.mean * cost;
            (obj, y)
        }));
    }

    let best = per_arc
        .iter()
        .flatten()
        .map(|(o, _)| *o)
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::Infeasible {
            karma: ctx.karma,
            required: super::feasibility_threshold(ctx.k_ref, &p.0, ctx.horizon),
        });
    }
    let slack = OBJECTIVE_TOL * best.abs().max(1.0);
    let optimal_arcs: Vec<usize> = (0..n)
        .filter(|&j| per_arc[j].as_ref().is_some_and(|(o, _)| *o <= best + slack))
        .collect();
    let arc = optimal_arcs[0];
    let (objective, future_plan) = per_arc[arc].clone().unwrap();
    Ok(BestResponseSolution {
        arc,
        future_plan,
        objective,
        optimal_arcs,
    })
}

/// `min d'y` over the simplex subject to `T p'y <= budget`, by vertex enumeration.
pub(crate) fn cheapest_plan(d: &[f64], p: &[i64], t: i64, budget: i64) -> Option<(f64, Vec<f64>)> {
    let n = d.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut offer = |cost: f64, y: Vec<f64>| {
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, y));
        }
    };
    for i in 0..n {
        if t * p[i] <= budget {
            let mut y = vec![0.0; n];
            y[i] = 1.0;
            offer(d[i], y);
        }
    }
    for a in 0..n {
        for i in 0..n {
            if p[i] == p[a] {
                continue;
            }
            // weight on i such that T (w p_i + (1 - w) p_a) = budget
            let w = (budget - t * p[a]) as f64 / (t * (p[i] - p[a])) as f64;
            if !(0.0..=1.0).contains(&w) {
                continue;
            }
            let mut y = vec![0.0; n];
            y[i] += w;
            y[a] += 1.0 - w;
            offer(d[a] + w * (d[i] - d[a]), y);
        }
    }
    best
}
