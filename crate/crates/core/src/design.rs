//! Integer price design by a genetic algorithm.
//!
//! Minimizes the societal cost of the steady-state aggregate at the system
//! optimum subject to `p' w = 0` (with `w` the quantized optimal flows in
//! integer units), strictly decreasing prices, `p_1 > 0` and `p_n < 0`. Every
//! candidate is repaired onto the feasible set before it is evaluated.

use std::collections::{HashMap, HashSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::flows_for_discomfort;
use crate::error::{Error, Result};
use crate::network::{FlowVector, Network, Population};
use crate::optimum::quantized_weights;
use crate::response::PriceVector;
use crate::rng::{stream, Stream};

const MUTATION_STEPS: [i64; 3] = [1, 2, 5];
const DUPLICATE_RETRIES: usize = 4;
/// Largest L1 perturbation tried when fixing the divisibility of the balance.
const MAX_PERTURBATION: i64 = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub price_bound: i64,
    pub population_size: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub elite_count: usize,
    pub tournament_size: usize,
    pub subopt_stop: f64,
    /// Decimals used to quantize the optimal flows for the balance constraint.
    pub decimals: u32,
    /// Set from the run's master seed, not from configuration.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            price_bound: 100,
            population_size: 64,
            generations: 300,
            mutation_rate: 0.15,
            crossover_rate: 0.8,
            elite_count: 4,
            tournament_size: 3,
            subopt_stop: 0.005,
            decimals: 3,
            seed: 42,
        }
    }
}

impl DesignConfig {
    pub fn problems(&self, path: &str, n: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.price_bound < n as i64 {
            out.push(format!(
                "{path}.price_bound: {} leaves no room for {n} strictly ordered prices",
                self.price_bound
            ));
        }
        if self.population_size < 2 {
            out.push(format!("{path}.population_size: must be at least 2"));
        }
        if self.elite_count >= self.population_size {
            out.push(format!("{path}.elite_count: must be below population_size"));
        }
        if self.tournament_size == 0 {
            out.push(format!("{path}.tournament_size: must be positive"));
        }
        for (name, v) in [
            ("mutation_rate", self.mutation_rate),
            ("crossover_rate", self.crossover_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!("{path}.{name}: {v} outside [0, 1]"));
            }
        }
        if !(self.subopt_stop >= 0.0) {
            out.push(format!("{path}.subopt_stop: must be nonnegative"));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub p_star: PriceVector,
    pub achieved_cost: f64,
    pub optimum_cost: f64,
    pub relative_subopt: f64,
    /// Distinct price vectors whose objective was computed.
    pub evaluations: usize,
    pub generations_run: usize,
    /// Best cost after each generation.
    pub history: Vec<f64>,
    pub met_target: bool,
}

/// Balance-constraint coefficients and bounds shared by every repair.
#[derive(Clone, Debug)]
pub struct Repairer {
    weights: Vec<i64>,
    bound: i64,
    /// Index whose price absorbs the balance residual.
    pivot: usize,
    /// Perturbations of the non-pivot arcs, by increasing L1 norm.
    perturbations: Vec<Vec<i64>>,
}

impl Repairer {
    pub fn new(weights: &[i64], bound: i64) -> Result<Self> {
        let n = weights.len();
        if n < 2 {
            return Err(Error::NoFeasiblePrices("fewer than two arcs".into()));
        }
        if weights.iter().any(|&w| w < 0) {
            return Err(Error::invalid("balance weights must be nonnegative"));
        }
        let pivot = (0..n).rev().find(|&j| weights[j] > 0).ok_or_else(|| {
            Error::NoFeasiblePrices("quantized optimal flows are all zero".into())
        })?;
        if pivot == 0 {
            return Err(Error::NoFeasiblePrices(
                "only the first arc carries flow, so p_1 > 0 cannot balance".into(),
            ));
        }
        let free: Vec<usize> = (0..n).filter(|&j| j != pivot && weights[j] > 0).collect();
        let mut perturbations = vec![vec![0; n]];
        for l1 in 1..=MAX_PERTURBATION {
            let mut level = Vec::new();
            compositions(&free, l1, &mut vec![0; n], 0, &mut level);
            perturbations.extend(level);
        }
        Ok(Repairer {
            weights: weights.to_vec(),
            bound,
            pivot,
            perturbations,
        })
    }

    pub fn weights(&self) -> &[i64] {
        &self.weights
    }

    pub fn is_feasible(&self, p: &[i64]) -> bool {
        p.len() == self.weights.len()
            && p.windows(2).all(|w| w[0] > w[1])
            && p[0] > 0
            && *p.last().unwrap() < 0
            && p.iter().all(|v| v.abs() <= self.bound)
            && p.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<i64>() == 0
    }

    /// Maps an arbitrary integer vector onto the feasible set, or `None`.
    pub fn repair(&self, raw: &[i64]) -> Option<PriceVector> {
        if raw.len() != self.weights.len() {
            return None;
        }
        if self.is_feasible(raw) {
            return Some(PriceVector(raw.to_vec()));
        }
        let mut p = raw.to_vec();
        p.sort_unstable_by(|a, b| b.cmp(a));
        for j in 1..p.len() {
            if p[j] >= p[j - 1] {
                p[j] = p[j - 1] - 1;
            }
        }
        // Two common shifts inside 0 < p_1 <= bound: the smallest one, and the
        // one that best zeroes the balance.
        let clamp = |s: i64| s.max(1 - p[0]).min(self.bound - p[0]);
        let total_w: i64 = self.weights.iter().sum();
        let balance: i64 = p.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
        let ideal = (-(balance as f64) / total_w as f64).round() as i64;
        let mut shifts = vec![clamp(0), clamp(ideal)];
        shifts.dedup();
        let bases: Vec<Vec<i64>> = shifts
            .into_iter()
            .map(|s| p.iter().map(|v| v + s).collect::<Vec<i64>>())
            .filter(|b| b[0] > 0)
            .collect();
        for d in &self.perturbations {
            for base in &bases {
                let cand: Vec<i64> = base.iter().zip(d).map(|(a, b)| a + b).collect();
                if let Some(fixed) = self.settle_pivot(cand) {
                    return Some(PriceVector(fixed));
                }
            }
        }
        None
    }

    /// Solves the balance for the pivot and re-sorts the tail behind it.
    fn settle_pivot(&self, mut p: Vec<i64>) -> Option<Vec<i64>> {
        let a = self.pivot;
        let rest: i64 = (0..p.len())
            .filter(|&j| j != a)
            .map(|j| self.weights[j] * p[j])
            .sum();
        if rest % self.weights[a] != 0 {
            return None;
        }
        p[a] = -rest / self.weights[a];
        for j in a + 1..p.len() {
            p[j] = p[j].min(p[j - 1] - 1);
        }
        self.is_feasible(&p).then_some(p)
    }
}

/// All `d` supported on `free` with `sum |d_j| = l1`, appended in a fixed order.
fn compositions(free: &[usize], l1: i64, cur: &mut Vec<i64>, from: usize, out: &mut Vec<Vec<i64>>) {
    if l1 == 0 {
        out.push(cur.clone());
        return;
    }
    if from >= free.len() {
        return;
    }
    let j = free[from];
    // arc j left untouched
    compositions(free, l1, cur, from + 1, out);
    for m in 1..=l1 {
        for sign in [1, -1] {
            cur[j] = sign * m;
            compositions(free, l1 - m, cur, from + 1, out);
        }
    }
    cur[j] = 0;
}

/// One-shot repair against quantized optimal flows.
pub fn repair_candidate(raw: &[i64], x_star_quant: &FlowVector, decimals: u32, bound: i64) -> Option<PriceVector> {
    let w = quantized_weights(x_star_quant, decimals);
    Repairer::new(&w, bound).ok()?.repair(raw)
}

/// Objective wrapper with a cache keyed by price vector.
struct Objective<'a> {
    discomfort: Vec<f64>,
    population: &'a Population,
    net: &'a Network,
    optimum_cost: f64,
    cache: HashMap<PriceVector, f64>,
}

impl Objective<'_> {
    fn cost(&mut self, p: &PriceVector) -> f64 {
        if let Some(&c) = self.cache.get(p) {
            return c;
        }
        let c = flows_for_discomfort(p, &self.discomfort, self.population, None)
            .ok()
            .and_then(|f| self.net.societal_cost(&f.flows).ok())
            .unwrap_or(f64::INFINITY);
        self.cache.insert(p.clone(), c);
        c
    }

    fn subopt(&self, c: f64) -> f64 {
        (c - self.optimum_cost) / self.optimum_cost
    }
}

/// Runs the GA. `x_star` fixes the discomforts at which users are evaluated.
pub fn design_prices(
    net: &Network,
    x_star: &FlowVector,
    x_star_quant: &FlowVector,
    population: &Population,
    cfg: &DesignConfig,
) -> Result<DesignResult> {
    let n = net.n();
    let problems = cfg.problems("design", n);
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    if x_star.len() != n || x_star_quant.len() != n {
        return Err(Error::invalid("optimal flows do not match the arc count"));
    }
    let weights = quantized_weights(x_star_quant, cfg.decimals);
    let repairer = Repairer::new(&weights, cfg.price_bound)?;
    let discomfort = net.discomfort(x_star)?;
    crate::response::check_strict_order(&discomfort, &(0..n as i64).rev().collect::<Vec<_>>())?;
    let optimum_cost = net.societal_cost(x_star)?;
    let mut objective = Objective {
        discomfort,
        population,
        net,
        optimum_cost,
        cache: HashMap::new(),
    };
    let mut rng = stream(cfg.seed, Stream::Design);

    let mut pop = initial_population(&repairer, cfg, n, &mut rng)?;
    let mut history = Vec::with_capacity(cfg.generations);
    let mut best: Option<(PriceVector, f64)> = None;
    let mut generations_run = 0;

    for _ in 0..cfg.generations.max(1) {
        generations_run += 1;
        let mut scored: Vec<(PriceVector, f64)> = pop
            .iter()
            .map(|p| (p.clone(), objective.cost(p)))
            .collect();
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        if best.as_ref().is_none_or(|b| scored[0].1 < b.1) {
            best = Some(scored[0].clone());
        }
        let best_cost = best.as_ref().unwrap().1;
        history.push(best_cost);
        if objective.subopt(best_cost) <= cfg.subopt_stop {
            break;
        }
        pop = next_generation(&scored, &repairer, cfg, &mut rng);
    }

    let (p_star, achieved_cost) = best.unwrap();
    if !achieved_cost.is_finite() {
        return Err(Error::NoFeasiblePrices(
            "no candidate produced a finite steady-state cost".into(),
        ));
    }
    let relative_subopt = objective.subopt(achieved_cost);
    Ok(DesignResult {
        p_star,
        achieved_cost,
        optimum_cost,
        relative_subopt,
        evaluations: objective.cache.len(),
        generations_run,
        history,
        met_target: relative_subopt <= cfg.subopt_stop,
    })
}

fn initial_population(
    repairer: &Repairer,
    cfg: &DesignConfig,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PriceVector>> {
    let b = cfg.price_bound;
    let mut pop = Vec::with_capacity(cfg.population_size);
    let max_attempts = 1000 * cfg.population_size;
    for _ in 0..max_attempts {
        if pop.len() == cfg.population_size {
            break;
        }
        let raw: Vec<i64> = (0..n).map(|_| rng.random_range(-b..=b)).collect();
        if let Some(p) = repairer.repair(&raw) {
            pop.push(p);
        }
    }
    if pop.is_empty() {
        return Err(Error::NoFeasiblePrices(format!(
            "no integer prices within +/-{b} satisfy the balance with weights {:?}",
            repairer.weights()
        )));
    }
    // Pad by cloning if feasible vectors are rare.
    let mut i = 0;
    while pop.len() < cfg.population_size {
        pop.push(pop[i].clone());
        i += 1;
    }
    Ok(pop)
}

fn tournament<'a>(scored: &'a [(PriceVector, f64)], size: usize, rng: &mut ChaCha8Rng) -> &'a PriceVector {
    // `scored` is sorted, so the lowest sampled index wins.
    let winner = (0..size)
        .map(|_| rng.random_range(0..scored.len()))
        .min()
        .unwrap();
    &scored[winner].0
}

fn next_generation(
    scored: &[(PriceVector, f64)],
    repairer: &Repairer,
    cfg: &DesignConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<PriceVector> {
    let mut next: Vec<PriceVector> = scored
        .iter()
        .take(cfg.elite_count)
        .map(|(p, _)| p.clone())
        .collect();
    let mut members: HashSet<PriceVector> = next.iter().cloned().collect();
    while next.len() < cfg.population_size {
        let a = tournament(scored, cfg.tournament_size, rng);
        let b = tournament(scored, cfg.tournament_size, rng);
        let mut child: Vec<i64> = if rng.random::<f64>() < cfg.crossover_rate {
            a.0.iter()
                .zip(&b.0)
                .map(|(&x, &y)| if rng.random::<bool>() { x } else { y })
                .collect()
        } else {
            a.0.clone()
        };
        let mut offspring = None;
        for _ in 0..DUPLICATE_RETRIES {
            mutate(&mut child, cfg.mutation_rate, rng);
            match repairer.repair(&child) {
                Some(p) if !members.contains(&p) => {
                    offspring = Some(p);
                    break;
                }
                _ => {}
            }
        }
        // A converged population breeds clones; replace them by immigrants.
        let offspring = offspring
            .or_else(|| random_feasible(repairer, cfg.price_bound, a.len(), rng))
            .unwrap_or_else(|| a.clone());
        members.insert(offspring.clone());
        next.push(offspring);
    }
    next
}

fn mutate(child: &mut [i64], rate: f64, rng: &mut ChaCha8Rng) {
    for g in child.iter_mut() {
        if rng.random::<f64>() < rate {
            let step = *MUTATION_STEPS.choose(rng).unwrap();
            *g += if rng.random::<bool>() { step } else { -step };
        }
    }
}

fn random_feasible(repairer: &Repairer, bound: i64, n: usize, rng: &mut ChaCha8Rng) -> Option<PriceVector> {
    (0..100).find_map(|_| {
        let raw: Vec<i64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        repairer.repair(&raw)
    })
}
