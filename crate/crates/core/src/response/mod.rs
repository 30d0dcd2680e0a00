//! A traveling user's daily route choice.
//!
//! The user picks one arc today and plans a fractional mix `ybar` for the next
//! `T` days, minimizing `s * d_j + T * s_mean * d'ybar` subject to the Karma
//! budget `k - p_j - T p'ybar >= k_ref` and `p_j <= k`.
//!
//! The closed form works on the arcs that survive [`reduce_arcs`]: there the
//! discomforts strictly increase and prices strictly decrease, the optimal plan
//! for each arc has at most two nonzero entries, and the arc choice is a
//! partition of the normalized sensitivity `s / s_mean` into intervals
//! `[gamma_j, gamma_{j-1}]`.

pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{FlowVector, Network, SensitivityBounds, SensitivityDist};

/// Tolerance for comparing discomforts and thresholds.
pub const THRESHOLD_TOL: f64 = 1e-12;
/// Tolerance for comparing objective values.
pub const OBJECTIVE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UserContext {
    pub karma: i64,
    pub k_ref: i64,
    pub sensitivity: f64,
    pub horizon: u32,
}

/// Integer arc prices. Negative entries are rewards.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceVector(pub Vec<i64>);

impl PriceVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> i64 {
        self.0.iter().copied().min().unwrap_or(0)
    }

    pub fn max(&self) -> i64 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    /// `p_1 > ... > p_n`, `p_1 > 0`, `p_n < 0`.
    pub fn is_design_ordered(&self) -> bool {
        self.0.windows(2).all(|w| w[0] > w[1])
            && self.0.first().is_some_and(|&p| p > 0)
            && self.0.last().is_some_and(|&p| p < 0)
    }

    /// Parses a comma-separated list such as `79,63,39,13,-45`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: std::result::Result<Vec<i64>, _> =
            s.split(',').map(|t| t.trim().parse::<i64>()).collect();
        match parts {
            Ok(v) if !v.is_empty() => Ok(PriceVector(v)),
            Ok(_) => Err(Error::Parse {
                context: "prices".into(),
                message: "empty price list".into(),
            }),
            Err(e) => Err(Error::Parse {
                context: "prices".into(),
                message: format!("{e} in {s:?}"),
            }),
        }
    }
}

impl std::fmt::Display for PriceVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(i64::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// Smallest Karma level for which the user problem is feasible:
/// `max(0, k_ref + (T + 1) min_j p_j)`.
pub fn feasibility_threshold(k_ref: i64, prices: &[i64], horizon: u32) -> i64 {
    let pmin = prices.iter().copied().min().unwrap_or(0);
    0.max(k_ref + pmin * (horizon as i64 + 1))
}

pub fn is_feasible(ctx: &UserContext, p: &PriceVector) -> bool {
    ctx.karma >= feasibility_threshold(ctx.k_ref, &p.0, ctx.horizon)
}

fn check_feasible(ctx: &UserContext, prices: &[i64]) -> Result<()> {
    let required = feasibility_threshold(ctx.k_ref, prices, ctx.horizon);
    if ctx.karma < required {
        return Err(Error::Infeasible {
            karma: ctx.karma,
            required,
        });
    }
    Ok(())
}

/// Partition of the arcs into dominated, discomfort-duplicate, and kept arcs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArcReduction {
    /// Arcs beaten by another arc with lower-or-equal price and strictly lower discomfort.
    pub unreasonable: Vec<usize>,
    /// Arcs sharing their discomfort with a cheaper (or equally priced, lower-index) arc.
    pub duplicates: Vec<usize>,
    /// Surviving arcs ordered by increasing discomfort (hence decreasing price).
    pub kept: Vec<usize>,
}

pub fn reduce_arcs(d: &[f64], p: &[i64]) -> ArcReduction {
    let n = d.len();
    let same = |a: f64, b: f64| (a - b).abs() <= THRESHOLD_TOL;
    let mut unreasonable = Vec::new();
    let mut duplicates = Vec::new();
    let mut kept = Vec::new();
    for j in 0..n {
        if (0..n).any(|i| p[i] <= p[j] && d[i] < d[j] && !same(d[i], d[j])) {
            unreasonable.push(j);
        } else if (0..n)
            .any(|i| i != j && same(d[i], d[j]) && (p[i] < p[j] || (p[i] == p[j] && i < j)))
        {
            duplicates.push(j);
        } else {
            kept.push(j);
        }
    }
    kept.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    ArcReduction {
        unreasonable,
        duplicates,
        kept,
    }
}

/// Closed-form thresholds for strictly ordered arcs.
///
/// All vectors are indexed by position among the ordered arcs (0-based), so
/// arc `j` here is arc `j + 1` in one-based notation and `gamma[j]` is
/// `gamma_j` with `gamma[0]` the top of the range.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdTable {
    /// Saturated thresholds `gamma_0 >= gamma_1 >= ... >= gamma_m`.
    pub gamma: Vec<f64>,
    /// Upper crossing `min_{i<j} gamma_{i,j}`.
    pub gamma_upper: Vec<f64>,
    /// Lower crossing `max_{i>j} gamma_{j,i}`.
    pub gamma_lower: Vec<f64>,
    /// Optimal future plan per arc; `None` when the arc is unaffordable.
    pub future_plans: Vec<Option<Vec<f64>>>,
    /// `d' ybar_j`, infinite for unaffordable arcs.
    pub future_cost: Vec<f64>,
    pub admissible: Vec<bool>,
}

impl ThresholdTable {
    pub fn len(&self) -> usize {
        self.admissible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.admissible.is_empty()
    }

    /// Lowest-index admissible arc whose crossing interval contains `sigma`.
    pub fn select(&self, sigma: f64) -> Option<usize> {
        (0..self.len()).find(|&j| {
            self.admissible[j]
                && self.gamma_lower[j] <= sigma + THRESHOLD_TOL
                && sigma <= self.gamma_upper[j] + THRESHOLD_TOL
        })
    }
}

/// Builds the threshold table for arcs already in strict order
/// (`d` increasing, `p` decreasing).
///
/// `lo` and `hi` are the saturation bounds on `s / s_mean`.
pub fn threshold_table(
    d: &[f64],
    p: &[i64],
    karma: i64,
    k_ref: i64,
    horizon: u32,
    lo: f64,
    hi: f64,
) -> ThresholdTable {
    let m = d.len();
    let t = horizon as i64;
    let tf = horizon as f64;
    // k(j1, j2) = k_ref + p_j1 + T p_j2
    let level = |j1: usize, j2: usize| k_ref + p[j1] + t * p[j2];

    let mut future_plans = Vec::with_capacity(m);
    let mut future_cost = Vec::with_capacity(m);
    for j in 0..m {
        let plan = if karma < p[j] || karma < level(j, m - 1) {
            None
        } else if karma >= level(j, 0) {
            let mut e = vec![0.0; m];
            e[0] = 1.0;
            Some(e)
        } else {
            best_two_point_plan(d, p, karma, j, &level, tf)
        };
        future_cost.push(match &plan {
            Some(y) => dot(d, y),
            None => f64::INFINITY,
        });
        future_plans.push(plan);
    }

    // gamma_{i,j} for i < j: above it arc i beats arc j.
    let crossing = |i: usize, j: usize| -> f64 {
        if future_plans[i].is_none() {
            f64::INFINITY
        } else {
            tf * (future_cost[i] - future_cost[j]) / (d[j] - d[i])
        }
    };

    let mut gamma_upper = vec![f64::INFINITY; m];
    let mut gamma_lower = vec![f64::NEG_INFINITY; m];
    for j in 0..m {
        for i in 0..j {
            gamma_upper[j] = gamma_upper[j].min(crossing(i, j));
        }
        for i in j + 1..m {
            gamma_lower[j] = gamma_lower[j].max(crossing(j, i));
        }
    }
    let admissible: Vec<bool> = (0..m)
        .map(|j| future_plans[j].is_some() && gamma_upper[j] + THRESHOLD_TOL >= gamma_lower[j])
        .collect();

    let mut gamma = vec![0.0; m + 1];
    gamma[m] = lo;
    for j in (1..m).rev() {
        gamma[j] = if admissible[j] {
            gamma_upper[j].clamp(lo, hi)
        } else {
            gamma[j + 1]
        };
        // rounding can leave a negative-width interval
        gamma[j] = gamma[j].max(gamma[j + 1]);
    }
    gamma[0] = hi;

    ThresholdTable {
        gamma,
        gamma_upper,
        gamma_lower,
        future_plans,
        future_cost,
        admissible,
    }
}

/// Cheapest plan on the budget hyperplane for a fixed choice `j` when `e_1` is
/// out of reach: for each anchor `a`, pair it with the partner `i` that has the
/// steepest discomfort-per-Karma trade-off among those whose level window
/// contains `k`, then keep the cheapest anchor.
fn best_two_point_plan(
    d: &[f64],
    p: &[i64],
    karma: i64,
    j: usize,
    level: &impl Fn(usize, usize) -> i64,
    tf: f64,
) -> Option<Vec<f64>> {
    let m = d.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for a in 0..m {
        let ka = level(j, a);
        let mut partner: Option<(usize, f64)> = None;
        for i in (0..m).filter(|&i| i != a) {
            let ki = level(j, i);
            if karma < ka.min(ki) || karma > ka.max(ki) {
                continue;
            }
            let slope = (d[i] - d[a]) / (p[a] - p[i]) as f64;
            if partner.is_none_or(|(_, s)| slope < s - THRESHOLD_TOL) {
                partner = Some((i, slope));
            }
        }
        let Some((jh, _)) = partner else { continue };
        let denom = tf * (p[a] - p[jh]) as f64;
        let mut y = vec![0.0; m];
        y[a] = (karma - level(j, jh)) as f64 / denom;
        y[jh] = -((karma - ka) as f64) / denom;
        let cost = dot(d, &y);
        if best.as_ref().is_none_or(|(c, _)| cost < c - THRESHOLD_TOL) {
            best = Some((cost, y));
        }
    }
    best.map(|(_, y)| y)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A traveling user's optimal decision.
#[derive(Clone, Debug, PartialEq)]
pub struct BestResponseSolution {
    /// Chosen arc (0-based, original numbering). Lowest index among optima.
    pub arc: usize,
    /// Future plan over the original arcs.
    pub future_plan: Vec<f64>,
    /// `s d_arc + T s_mean d' future_plan`.
    pub objective: f64,
    /// Every arc attaining the optimum, ascending.
    pub optimal_arcs: Vec<usize>,
}

/// Best response at flows `x`.
pub fn best_response(
    ctx: &UserContext,
    p: &PriceVector,
    x: &FlowVector,
    net: &Network,
    sens: &SensitivityBounds,
) -> Result<BestResponseSolution> {
    if p.len() != net.n() {
        return Err(Error::invalid("price vector length differs from arc count"));
    }
    let d = net.discomfort(x)?;
    best_response_for_discomfort(ctx, p, &d, sens)
}

/// Best response for an explicit discomfort vector in any arc order.
pub fn best_response_for_discomfort(
    ctx: &UserContext,
    p: &PriceVector,
    d: &[f64],
    sens: &SensitivityBounds,
) -> Result<BestResponseSolution> {
    if p.len() != d.len() {
        return Err(Error::invalid("price vector length differs from arc count"));
    }
    check_feasible(ctx, &p.0)?;
    let reduction = reduce_arcs(d, &p.0);
    let kd: Vec<f64> = reduction.kept.iter().map(|&j| d[j]).collect();
    let kp: Vec<i64> = reduction.kept.iter().map(|&j| p.0[j]).collect();
    let table = threshold_table(
        &kd,
        &kp,
        ctx.karma,
        ctx.k_ref,
        ctx.horizon,
        f64::NEG_INFINITY,
        f64::INFINITY,
    );

    let sigma = ctx.sensitivity / sens.mean;
    let tf = ctx.horizon as f64;
    let objective_of = |q: usize| sens.mean * (sigma * kd[q] + tf * table.future_cost[q]);
    let chosen = match table.select(sigma) {
        Some(q) => q,
        // Only reachable through rounding at an interval edge.
        None => (0..kd.len())
            .filter(|&q| table.future_plans[q].is_some())
            .min_by(|&a, &b| objective_of(a).total_cmp(&objective_of(b)))
            .ok_or(Error::Infeasible {
                karma: ctx.karma,
                required: feasibility_threshold(ctx.k_ref, &p.0, ctx.horizon),
            })?,
    };
    let objective = objective_of(chosen);
    let slack = OBJECTIVE_TOL * objective.abs().max(1.0);

    // (original arc, position of the kept arc whose plan it uses)
    let mut optimal: Vec<(usize, usize)> = Vec::new();
    for (q, &orig) in reduction.kept.iter().enumerate() {
        let Some(plan) = &table.future_plans[q] else { continue };
        if objective_of(q) > objective + slack {
            continue;
        }
        optimal.push((orig, q));
        // Duplicates of an optimal arc are optimal too while its plan stays affordable.
        let spend: f64 = kp.iter().zip(plan).map(|(&pi, &yi)| pi as f64 * yi).sum();
        for &e in &reduction.duplicates {
            if (d[e] - kd[q]).abs() <= THRESHOLD_TOL
                && ctx.karma >= p.0[e]
                && (ctx.karma - p.0[e] - ctx.k_ref) as f64 - tf * spend >= -OBJECTIVE_TOL
            {
                optimal.push((e, q));
            }
        }
    }
    optimal.sort_unstable();
    optimal.dedup_by_key(|e| e.0);
    let (arc, q) = optimal
        .first()
        .copied()
        .unwrap_or((reduction.kept[chosen], chosen));

    let plan = table.future_plans[q].as_ref().unwrap();
    let mut future_plan = vec![0.0; d.len()];
    for (pos, &orig) in reduction.kept.iter().enumerate() {
        future_plan[orig] = plan[pos];
    }
    Ok(BestResponseSolution {
        arc,
        future_plan,
        objective: objective_of(q),
        optimal_arcs: optimal.into_iter().map(|e| e.0).collect(),
    })
}

/// Checks that discomforts strictly increase and prices strictly decrease in arc order.
pub fn check_strict_order(d: &[f64], p: &[i64]) -> Result<()> {
    for j in 1..d.len() {
        if !(d[j] > d[j - 1] + THRESHOLD_TOL) {
            return Err(Error::Ordering(format!(
                "discomfort of arc {} ({}) does not exceed arc {} ({}); reduce arcs first",
                j + 1,
                d[j],
                j,
                d[j - 1]
            )));
        }
        if p[j] >= p[j - 1] {
            return Err(Error::Ordering(format!(
                "price of arc {} ({}) is not below arc {} ({}); reduce arcs first",
                j + 1,
                p[j],
                j,
                p[j - 1]
            )));
        }
    }
    Ok(())
}

/// Probability that a traveling user at Karma `karma` picks each arc, when the
/// sensitivity follows `dist`.
pub fn choice_probability(
    karma: i64,
    k_ref: i64,
    p: &PriceVector,
    x: &FlowVector,
    net: &Network,
    horizon: u32,
    dist: &SensitivityDist,
) -> Result<Vec<f64>> {
    let d = net.discomfort(x)?;
    check_strict_order(&d, &p.0)?;
    check_feasible(
        &UserContext {
            karma,
            k_ref,
            sensitivity: 0.0,
            horizon,
        },
        &p.0,
    )?;
    Ok(choice_probability_ordered(&d, &p.0, karma, k_ref, horizon, dist))
}

/// [`choice_probability`] without validation, for callers that checked order
/// and feasibility once up front.
pub fn choice_probability_ordered(
    d: &[f64],
    p: &[i64],
    karma: i64,
    k_ref: i64,
    horizon: u32,
    dist: &SensitivityDist,
) -> Vec<f64> {
    let mean = dist.mean();
    let table = threshold_table(
        d,
        p,
        karma,
        k_ref,
        horizon,
        dist.min() / mean,
        dist.max() / mean,
    );
    probabilities_from_table(&table, dist)
}

pub fn probabilities_from_table(table: &ThresholdTable, dist: &SensitivityDist) -> Vec<f64> {
    let mean = dist.mean();
    (0..table.len())
        .map(|j| {
            if table.admissible[j] {
                dist.mass(table.gamma[j + 1] * mean, table.gamma[j] * mean)
            } else {
                0.0
            }
        })
        .collect()
}
