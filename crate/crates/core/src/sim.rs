//! Agent-based repeated routing game.
//!
//! Each day every agent stays home with probability `P_home`, draws a fresh
//! sensitivity, and travelers settle into a finite-population equilibrium by
//! sequential best responses. Karma is then debited or credited.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{FlowVector, KrefDist, Network, Population, SensitivityBounds};
use crate::response::oracle::cheapest_plan;
use crate::response::{
    best_response_for_discomfort, feasibility_threshold, PriceVector, UserContext, OBJECTIVE_TOL,
};
use crate::rng::{stream, Stream};

pub const DEFAULT_MAX_SWEEPS: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub karma: i64,
    pub k_ref: i64,
    pub sensitivity: f64,
    pub traveling: bool,
}

/// Initial Karma distribution. Multiples are of the largest price.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KarmaInit {
    /// Uniform over the integers `low * p_1 ..= high * p_1`.
    PriceMultiples { low: i64, high: i64 },
    /// Equal mass on `low * p_1` and `high * p_1`.
    TwoPointMultiples { low: i64, high: i64 },
    /// Uniform over the integers `min ..= max`.
    Range { min: i64, max: i64 },
    Delta { value: i64 },
}

impl Default for KarmaInit {
    fn default() -> Self {
        KarmaInit::PriceMultiples { low: 25, high: 50 }
    }
}

impl KarmaInit {
    pub fn problems(&self, path: &str) -> Vec<String> {
        let bad_pair = |lo: i64, hi: i64| lo < 0 || hi < lo;
        match *self {
            KarmaInit::PriceMultiples { low, high } | KarmaInit::TwoPointMultiples { low, high }
                if bad_pair(low, high) =>
            {
                vec![format!("{path}: need 0 <= low <= high, got {low}, {high}")]
            }
            KarmaInit::Range { min, max } if bad_pair(min, max) => {
                vec![format!("{path}: need 0 <= min <= max, got {min}, {max}")]
            }
            KarmaInit::Delta { value } if value < 0 => {
                vec![format!("{path}.value: Karma cannot be negative")]
            }
            _ => Vec::new(),
        }
    }

    fn sample(&self, p1: i64, rng: &mut ChaCha8Rng) -> i64 {
        match *self {
            KarmaInit::PriceMultiples { low, high } => rng.random_range(low * p1..=high * p1),
            KarmaInit::TwoPointMultiples { low, high } => {
                if rng.random::<bool>() {
                    low * p1
                } else {
                    high * p1
                }
            }
            KarmaInit::Range { min, max } => rng.random_range(min..=max),
            KarmaInit::Delta { value } => value,
        }
    }
}

/// `M` agents with Karma and reference levels drawn from their own streams.
pub fn init_population(
    m: usize,
    karma_init: &KarmaInit,
    kref: &KrefDist,
    p: &PriceVector,
    seed: u64,
) -> Result<Vec<Agent>> {
    if m == 0 {
        return Err(Error::invalid("population needs at least one agent"));
    }
    let problems = karma_init.problems("sim.karma_init");
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let p1 = p.max().max(0);
    let mut karma_rng = stream(seed, Stream::KarmaInit);
    let mut kref_rng = stream(seed, Stream::KrefInit);
    let pick = WeightedIndex::new(&kref.weights)
        .map_err(|e| Error::invalid(format!("reference-Karma weights: {e}")))?;
    Ok((0..m)
        .map(|_| Agent {
            karma: karma_init.sample(p1, &mut karma_rng),
            k_ref: kref.support[pick.sample(&mut kref_rng)],
            sensitivity: 0.0,
            traveling: false,
        })
        .collect())
}

/// Counts of agents per `(karma, k_ref)` pair.
pub fn karma_histogram(agents: &[Agent]) -> BTreeMap<(i64, i64), usize> {
    let mut h = BTreeMap::new();
    for a in agents {
        *h.entry((a.karma, a.k_ref)).or_insert(0) += 1;
    }
    h
}

/// Outcome of one day's equilibrium search.
#[derive(Clone, Debug, PartialEq)]
pub struct Equilibrium {
    /// Arc per agent; `None` for agents at home.
    pub arcs: Vec<Option<usize>>,
    pub counts: Vec<usize>,
    pub sweeps: usize,
    /// True if the post-hoc deviation scan found no improving traveler.
    pub converged: bool,
}

impl Equilibrium {
    pub fn flows(&self, m: usize) -> FlowVector {
        FlowVector(self.counts.iter().map(|&c| c as f64 / m as f64).collect())
    }
}

fn discomfort_at(net: &Network, counts: &[usize], m: usize) -> Vec<f64> {
    counts
        .iter()
        .enumerate()
        .map(|(j, &c)| net.arc_discomfort(j, c as f64 / m as f64))
        .collect()
}

fn respond(agent: &Agent, p: &PriceVector, d: &[f64], sens: &SensitivityBounds, horizon: u32) -> Result<Vec<usize>> {
    let ctx = UserContext {
        karma: agent.karma,
        k_ref: agent.k_ref,
        sensitivity: agent.sensitivity,
        horizon,
    };
    Ok(best_response_for_discomfort(&ctx, p, d, sens)?.optimal_arcs)
}

/// Current arc flows, with cached discomforts.
struct Load<'a> {
    net: &'a Network,
    counts: Vec<usize>,
    d: Vec<f64>,
    m: usize,
}

impl<'a> Load<'a> {
    fn new(net: &'a Network, counts: Vec<usize>, m: usize) -> Self {
        let d = discomfort_at(net, &counts, m);
        Load { net, counts, d, m }
    }

    fn at(&self, j: usize, count: usize) -> f64 {
        self.net.arc_discomfort(j, count as f64 / self.m as f64)
    }

    fn shift(&mut self, from: usize, to: usize) {
        self.counts[from] -= 1;
        self.counts[to] += 1;
        self.d[from] = self.at(from, self.counts[from]);
        self.d[to] = self.at(to, self.counts[to]);
    }

    /// Objective of every arc for a traveler currently on `cur`, each judged
    /// at the flows that result from moving there. `INFINITY` if unaffordable.
    fn arc_objectives(&self, a: &Agent, cur: usize, p: &PriceVector, s_mean: f64, horizon: u32) -> Vec<f64> {
        let t = horizon as i64;
        let mut dj = self.d.clone();
        (0..self.d.len())
            .map(|j| {
                if p.0[j] > a.karma {
                    return f64::INFINITY;
                }
                if j != cur {
                    dj[cur] = self.at(cur, self.counts[cur] - 1);
                    dj[j] = self.at(j, self.counts[j] + 1);
                }
                let budget = a.karma - a.k_ref - p.0[j];
                let obj = cheapest_plan(&dj, &p.0, t, budget)
                    .map_or(f64::INFINITY, |(f, _)| a.sensitivity * dj[j] + t as f64 * s_mean * f);
                dj[cur] = self.d[cur];
                dj[j] = self.d[j];
                obj
            })
            .collect()
    }
}

/// Arcs whose objective ties the best one within the objective tolerance.
fn optimal_set(obj: &[f64]) -> Vec<usize> {
    let best = obj.iter().copied().fold(f64::INFINITY, f64::min);
    let slack = OBJECTIVE_TOL * best.abs().max(1.0);
    (0..obj.len()).filter(|&j| obj[j] <= best + slack).collect()
}

/// Sequential best-response sweeps in random order until no traveler can
/// gain by switching arcs on their own. A switch is judged at the flows it
/// produces, as in a finite-player Nash equilibrium. Travelers start from
/// their best response to `previous_flows`.
#[allow(clippy::too_many_arguments)]
pub fn daily_equilibrium(
    agents: &[Agent],
    p: &PriceVector,
    net: &Network,
    population: &Population,
    previous_flows: &FlowVector,
    max_sweeps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Equilibrium> {
    let n = net.n();
    let m = agents.len();
    let sens = population.sensitivity.bounds();
    let horizon = population.horizon;

    let d_prev = net.discomfort(previous_flows)?;
    let mut arcs: Vec<Option<usize>> = vec![None; m];
    let mut counts = vec![0usize; n];
    for (i, a) in agents.iter().enumerate() {
        if a.traveling {
            let j = respond(a, p, &d_prev, &sens, horizon)?[0];
            arcs[i] = Some(j);
            counts[j] += 1;
        }
    }

    let mut order: Vec<usize> = (0..m).filter(|&i| agents[i].traveling).collect();
    let mut load = Load::new(net, counts, m);
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        order.shuffle(rng);
        let mut moved = false;
        for &i in &order {
            let cur = arcs[i].unwrap();
            let obj = load.arc_objectives(&agents[i], cur, p, sens.mean, horizon);
            let best = optimal_set(&obj);
            if best.is_empty() {
                return Err(Error::Infeasible {
                    karma: agents[i].karma,
                    required: feasibility_threshold(agents[i].k_ref, &p.0, horizon),
                });
            }
            if !best.contains(&cur) {
                load.shift(cur, best[0]);
                arcs[i] = Some(best[0]);
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }

    let converged = deviation_free_load(agents, &arcs, p, &load, sens.mean, horizon);
    Ok(Equilibrium {
        arcs,
        counts: load.counts,
        sweeps,
        converged,
    })
}

fn deviation_free_load(agents: &[Agent], arcs: &[Option<usize>], p: &PriceVector, load: &Load, s_mean: f64, horizon: u32) -> bool {
    agents.iter().zip(arcs).all(|(a, arc)| match *arc {
        Some(j) => optimal_set(&load.arc_objectives(a, j, p, s_mean, horizon)).contains(&j),
        None => true,
    })
}

/// Post-hoc certificate: no traveler gains by a unilateral switch.
pub fn deviation_free(
    agents: &[Agent],
    arcs: &[Option<usize>],
    p: &PriceVector,
    net: &Network,
    population: &Population,
) -> bool {
    let mut counts = vec![0usize; net.n()];
    for j in arcs.iter().flatten() {
        counts[*j] += 1;
    }
    let load = Load::new(net, counts, agents.len());
    deviation_free_load(agents, arcs, p, &load, population.sensitivity.mean(), population.horizon)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DayMetrics {
    pub rel_cost: f64,
    pub dbar_literal: f64,
    pub dbar_interpreted: f64,
    pub sbar_dev: f64,
}

/// Cost gap, both discomfort-deviation variants and the sensitivity deviation.
///
/// The urgency-unaware baseline gives today's travelers the arc counts of the
/// optimum (largest-remainder rounding of `x* / P_go`) in random order and is
/// charged the discomfort of its own flows.
#[allow(clippy::too_many_arguments)]
pub fn metrics_day(
    agents: &[Agent],
    eq: &Equilibrium,
    net: &Network,
    x_star: &FlowVector,
    optimum_cost: f64,
    s_mean: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DayMetrics> {
    let m = agents.len();
    let flows = eq.flows(m);
    let d = net.discomfort(&flows)?;
    let rel_cost = (net.societal_cost(&flows)? - optimum_cost) / optimum_cost;

    let mut travelers: Vec<usize> = Vec::new();
    let (mut lit_num, mut lit_den, mut mech) = (0.0, 0.0, 0.0);
    for (i, (a, arc)) in agents.iter().zip(&eq.arcs).enumerate() {
        if let Some(j) = *arc {
            travelers.push(i);
            lit_num += a.sensitivity * d[j] + s_mean * d[j];
            lit_den += s_mean * d[j];
            mech += a.sensitivity * d[j];
        }
    }

    let counts = proportional_counts(&x_star.0, travelers.len());
    travelers.shuffle(rng);
    let d_rand = discomfort_at(net, &counts, m);
    let mut baseline = 0.0;
    let mut slots = travelers.iter();
    for (j, &c) in counts.iter().enumerate() {
        for &i in slots.by_ref().take(c) {
            baseline += agents[i].sensitivity * d_rand[j];
        }
    }

    let sbar_dev = agents
        .iter()
        .map(|a| (a.sensitivity - s_mean) / s_mean)
        .sum::<f64>()
        / m as f64;
    Ok(DayMetrics {
        rel_cost,
        dbar_literal: lit_num / lit_den,
        dbar_interpreted: mech / baseline - 1.0,
        sbar_dev,
    })
}

/// Integer counts summing to `total`, proportional to `shares`, by largest remainder.
pub fn proportional_counts(shares: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    if total == 0 || !(sum > 0.0) {
        return vec![0; shares.len()];
    }
    let exact: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &j in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[j] += 1;
        rest -= 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Number of agents `M`.
    pub agents: usize,
    pub days: usize,
    pub karma_init: KarmaInit,
    pub max_sweeps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            agents: 1000,
            days: 600,
            karma_init: KarmaInit::default(),
            max_sweeps: DEFAULT_MAX_SWEEPS,
        }
    }
}

impl SimConfig {
    pub fn problems(&self, path: &str) -> Vec<String> {
        let mut out = self.karma_init.problems(&format!("{path}.karma_init"));
        if self.agents == 0 {
            out.push(format!("{path}.agents: must be at least 1"));
        }
        if self.max_sweeps == 0 {
            out.push(format!("{path}.max_sweeps: must be at least 1"));
        }
        out
    }
}

/// One simulated day. Karma statistics refer to the start of the day.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DayRecord {
    pub day: usize,
    pub flows: Vec<f64>,
    pub counts: Vec<usize>,
    pub travelers: usize,
    pub karma_total: i64,
    pub k_mean: f64,
    pub k_std: f64,
    pub rel_cost: f64,
    pub dbar_literal: f64,
    pub dbar_interpreted: f64,
    pub sbar_dev: f64,
    pub converged: bool,
    pub sweeps: usize,
    pub min_karma: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimTrace {
    pub prices: PriceVector,
    pub optimum_cost: f64,
    pub days: Vec<DayRecord>,
}

/// Mutable simulation state; advance with [`Simulation::step_day`].
pub struct Simulation<'a> {
    pub agents: Vec<Agent>,
    pub prices: PriceVector,
    pub previous_flows: FlowVector,
    pub day: usize,
    net: &'a Network,
    population: &'a Population,
    x_star: FlowVector,
    optimum_cost: f64,
    max_sweeps: usize,
    travel_rng: ChaCha8Rng,
    sens_rng: ChaCha8Rng,
    sweep_rng: ChaCha8Rng,
    alloc_rng: ChaCha8Rng,
}

impl<'a> Simulation<'a> {
    pub fn new(
        net: &'a Network,
        population: &'a Population,
        x_star: &FlowVector,
        p: &PriceVector,
        cfg: &SimConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut problems = cfg.problems("sim");
        if p.len() != net.n() {
            problems.push(format!(
                "prices: {} entries for {} arcs",
                p.len(),
                net.n()
            ));
        }
        if x_star.len() != net.n() {
            problems.push("x_star: wrong length".into());
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        let kref = population.kref.resolve(&p.0);
        let agents = init_population(cfg.agents, &cfg.karma_init, &kref, p, seed)?;
        let n = net.n();
        Ok(Simulation {
            agents,
            prices: p.clone(),
            previous_flows: FlowVector(vec![population.p_go() / n as f64; n]),
            day: 0,
            net,
            population,
            x_star: x_star.clone(),
            optimum_cost: net.societal_cost(x_star)?,
            max_sweeps: cfg.max_sweeps,
            travel_rng: stream(seed, Stream::Travel),
            sens_rng: stream(seed, Stream::Sensitivity),
            sweep_rng: stream(seed, Stream::SweepOrder),
            alloc_rng: stream(seed, Stream::RandomAllocation),
        })
    }

    pub fn step_day(&mut self) -> Result<DayRecord> {
        let m = self.agents.len();
        let p_go = self.population.p_go();
        for a in self.agents.iter_mut() {
            a.traveling = self.travel_rng.random::<f64>() < p_go;
            a.sensitivity = self.population.sensitivity.sample(&mut self.sens_rng);
        }
        let karma_total: i64 = self.agents.iter().map(|a| a.karma).sum();
        let k_mean = karma_total as f64 / m as f64;
        let k_var = self
            .agents
            .iter()
            .map(|a| (a.karma as f64 - k_mean).powi(2))
            .sum::<f64>()
            / m as f64;

        let eq = daily_equilibrium(
            &self.agents,
            &self.prices,
            self.net,
            self.population,
            &self.previous_flows,
            self.max_sweeps,
            &mut self.sweep_rng,
        )?;
        let metrics = metrics_day(
            &self.agents,
            &eq,
            self.net,
            &self.x_star,
            self.optimum_cost,
            self.population.sensitivity.mean(),
            &mut self.alloc_rng,
        )?;

        let mut delta = 0i64;
        for (a, arc) in self.agents.iter_mut().zip(&eq.arcs) {
            if let Some(j) = *arc {
                a.karma -= self.prices.0[j];
                delta -= self.prices.0[j];
            }
        }
        let expected: i64 = -self
            .prices
            .0
            .iter()
            .zip(&eq.counts)
            .map(|(p, &c)| p * c as i64)
            .sum::<i64>();
        debug_assert_eq!(delta, expected);
        let min_karma = self.agents.iter().map(|a| a.karma).min().unwrap_or(0);
        if min_karma < 0 {
            return Err(Error::invalid(format!(
                "day {}: an agent's Karma fell to {min_karma}",
                self.day
            )));
        }

        let flows = eq.flows(m);
        let record = DayRecord {
            day: self.day,
            flows: flows.0.clone(),
            counts: eq.counts.clone(),
            travelers: eq.counts.iter().sum(),
            karma_total,
            k_mean,
            k_std: k_var.sqrt(),
            rel_cost: metrics.rel_cost,
            dbar_literal: metrics.dbar_literal,
            dbar_interpreted: metrics.dbar_interpreted,
            sbar_dev: metrics.sbar_dev,
            converged: eq.converged,
            sweeps: eq.sweeps,
            min_karma,
        };
        self.previous_flows = flows;
        self.day += 1;
        Ok(record)
    }
}

pub fn run_simulation(
    net: &Network,
    population: &Population,
    x_star: &FlowVector,
    p: &PriceVector,
    cfg: &SimConfig,
    seed: u64,
) -> Result<SimTrace> {
    let mut sim = Simulation::new(net, population, x_star, p, cfg, seed)?;
    let days = (0..cfg.days)
        .map(|_| sim.step_day())
        .collect::<Result<Vec<_>>>()?;
    Ok(SimTrace {
        prices: p.clone(),
        optimum_cost: sim.optimum_cost,
        days,
    })
}
