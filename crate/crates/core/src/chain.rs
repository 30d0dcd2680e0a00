//! Per-user Karma Markov chain at fixed flows.
//!
//! With discomforts frozen, a user's Karma moves from `k` to `k - p_j` with
//! probability `P_go * P(j | k)` and stays put with probability `P_home`. The
//! reachable levels from `k0` form a finite chain; its column-stochastic
//! transition matrix is stored sparsely (at most `n + 1` entries per column).

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::network::{FlowVector, Network, Population, SensitivityDist};
use crate::response::{
    check_strict_order, choice_probability_ordered, feasibility_threshold, PriceVector,
};

pub const DEFAULT_STATE_CAP: usize = 1_000_000;
pub const DEFAULT_MAX_POWER_ITER: usize = 1_000_000;
/// Stop once successive iterates differ by at most this much.
pub const CHANGE_TOL: f64 = 1e-12;
/// ... or once `||A v - v||_inf` is at most this much.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Everything the chain needs about one user class at fixed flows.
#[derive(Clone, Debug)]
pub struct ChainInputs<'a> {
    /// Discomforts at the frozen flows, strictly increasing.
    pub discomfort: &'a [f64],
    /// Prices, strictly decreasing.
    pub prices: &'a [i64],
    pub k_ref: i64,
    pub horizon: u32,
    pub p_home: f64,
    pub sensitivity: &'a SensitivityDist,
}

impl ChainInputs<'_> {
    fn choice(&self, karma: i64) -> Result<Vec<f64>> {
        let required = feasibility_threshold(self.k_ref, self.prices, self.horizon);
        if karma < required {
            return Err(Error::Infeasible { karma, required });
        }
        Ok(choice_probability_ordered(
            self.discomfort,
            self.prices,
            karma,
            self.k_ref,
            self.horizon,
            self.sensitivity,
        ))
    }

    /// `k_ref + (T + 1) max_j p_j - min_j p_j`.
    pub fn attractive_upper(&self) -> i64 {
        let max = *self.prices.iter().max().unwrap();
        let min = *self.prices.iter().min().unwrap();
        self.k_ref + (self.horizon as i64 + 1) * max - min
    }
}

/// Column-compressed square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    pub dim: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn column(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_ptr[c]..self.col_ptr[c + 1];
        self.row_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn column_sum(&self, c: usize) -> f64 {
        self.column(c).map(|(_, v)| v).sum()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.column(c).find(|&(i, _)| i == r).map_or(0.0, |(_, v)| v)
    }

    /// `out = A v`
    pub fn mul_into(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (c, &vc) in v.iter().enumerate() {
            if vc == 0.0 {
                continue;
            }
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                out[self.row_idx[k]] += self.values[k] * vc;
            }
        }
    }

    pub fn identity(dim: usize) -> Self {
        SparseMatrix {
            dim,
            col_ptr: (0..=dim).collect(),
            row_idx: (0..dim).collect(),
            values: vec![1.0; dim],
        }
    }
}

/// Choice probabilities keyed by Karma level.
type ChoiceMap = HashMap<i64, Vec<f64>>;

/// Reachable Karma levels from `k0`, sorted ascending, together with the
/// choice probabilities at each level.
fn explore(inputs: &ChainInputs, k0: i64, cap: usize) -> Result<(Vec<i64>, ChoiceMap)> {
    let mut probs: HashMap<i64, Vec<f64>> = HashMap::new();
    let mut queue = VecDeque::from([k0]);
    probs.insert(k0, inputs.choice(k0)?);
    while let Some(k) = queue.pop_front() {
        let row = probs[&k].clone();
        for (j, &q) in row.iter().enumerate() {
            if q <= 0.0 {
                continue;
            }
            let next = k - inputs.prices[j];
            if probs.contains_key(&next) {
                continue;
            }
            if probs.len() >= cap {
                return Err(Error::StateExplosion { cap });
            }
            probs.insert(next, inputs.choice(next)?);
            queue.push_back(next);
        }
    }
    let mut states: Vec<i64> = probs.keys().copied().collect();
    states.sort_unstable();
    Ok((states, probs))
}

pub fn enumerate_states_with(inputs: &ChainInputs, k0: i64, cap: usize) -> Result<Vec<i64>> {
    explore(inputs, k0, cap).map(|(s, _)| s)
}

fn assemble(
    inputs: &ChainInputs,
    states: &[i64],
    probs: &HashMap<i64, Vec<f64>>,
) -> Result<SparseMatrix> {
    let index: HashMap<i64, usize> = states.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let p_go = 1.0 - inputs.p_home;
    let mut col_ptr = Vec::with_capacity(states.len() + 1);
    let mut row_idx = Vec::new();
    let mut values = Vec::new();
    col_ptr.push(0);
    for (c, &k) in states.iter().enumerate() {
        let mut entries: Vec<(usize, f64)> = vec![(c, inputs.p_home)];
        for (j, &q) in probs[&k].iter().enumerate() {
            if q <= 0.0 {
                continue;
            }
            let next = k - inputs.prices[j];
            let r = *index.get(&next).ok_or_else(|| {
                Error::invalid(format!("state list not closed: {k} -> {next} missing"))
            })?;
            match entries.iter_mut().find(|e| e.0 == r) {
                Some(e) => e.1 += p_go * q,
                None => entries.push((r, p_go * q)),
            }
        }
        entries.sort_unstable_by_key(|e| e.0);
        for (r, v) in entries {
            row_idx.push(r);
            values.push(v);
        }
        col_ptr.push(row_idx.len());
    }
    Ok(SparseMatrix {
        dim: states.len(),
        col_ptr,
        row_idx,
        values,
    })
}

pub fn transition_matrix_with(inputs: &ChainInputs, states: &[i64]) -> Result<SparseMatrix> {
    let probs = states
        .iter()
        .map(|&k| inputs.choice(k).map(|p| (k, p)))
        .collect::<Result<HashMap<_, _>>>()?;
    assemble(inputs, states, &probs)
}

/// Column `v` holds the arc probabilities at `states[v]`.
pub fn arc_selection_with(inputs: &ChainInputs, states: &[i64]) -> Result<Vec<Vec<f64>>> {
    states.iter().map(|&k| inputs.choice(k)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stationary {
    pub pi: Vec<f64>,
    pub residual: f64,
    /// Power iterations used; zero when the direct solve was accepted.
    pub iterations: usize,
}

/// Same limit as [`stationary_distribution`], computed directly when possible.
///
/// With a single closed class and a lazy diagonal every start converges to that
/// class's stationary vector, which a banded state-reduction solve gives
/// exactly. The answer is accepted only if its residual meets the tolerance;
/// otherwise, or with several closed classes, the power iteration runs.
pub fn stationary_limit(a: &SparseMatrix, k0_index: usize, lazy: bool) -> Result<Stationary> {
    if lazy && k0_index < a.dim {
        let classes = closed_classes(a);
        if classes.len() == 1 {
            if let Some(local) = gth_banded(a, &classes[0]) {
                let mut pi = vec![0.0; a.dim];
                for (&i, v) in classes[0].iter().zip(local) {
                    pi[i] = v;
                }
                let residual = residual_inf(a, &pi);
                if residual <= RESIDUAL_TOL {
                    return Ok(Stationary {
                        pi,
                        residual,
                        iterations: 0,
                    });
                }
            }
        }
    }
    stationary_distribution(a, k0_index)
}

/// `||A v - v||_inf`
pub fn residual_inf(a: &SparseMatrix, v: &[f64]) -> f64 {
    let mut out = vec![0.0; a.dim];
    a.mul_into(v, &mut out);
    out.iter().zip(v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Closed communicating classes, each as ascending state indices.
pub fn closed_classes(a: &SparseMatrix) -> Vec<Vec<usize>> {
    let n = a.dim;
    // Kosaraju, iteratively. Edge v -> u whenever A[u][v] > 0.
    let succ = |v: usize| a.column(v).filter(move |&(u, w)| w > 0.0 && u != v).map(|(u, _)| u);
    let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
    for v in 0..n {
        for u in succ(v) {
            pred[u].push(v);
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut stack = vec![(root, succ(root).collect::<Vec<_>>(), 0usize)];
        while let Some((v, next, pos)) = stack.last_mut() {
            if *pos < next.len() {
                let u = next[*pos];
                *pos += 1;
                if !seen[u] {
                    seen[u] = true;
                    let nu = succ(u).collect();
                    stack.push((u, nu, 0));
                }
            } else {
                order.push(*v);
                stack.pop();
            }
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut ncomp = 0;
    for &root in order.iter().rev() {
        if comp[root] != usize::MAX {
            continue;
        }
        let mut stack = vec![root];
        comp[root] = ncomp;
        while let Some(v) = stack.pop() {
            for &u in &pred[v] {
                if comp[u] == usize::MAX {
                    comp[u] = ncomp;
                    stack.push(u);
                }
            }
        }
        ncomp += 1;
    }
    let mut closed = vec![true; ncomp];
    for v in 0..n {
        if succ(v).any(|u| comp[u] != comp[v]) {
            closed[comp[v]] = false;
        }
    }
    let mut classes: Vec<Vec<usize>> = vec![Vec::new(); ncomp];
    for v in 0..n {
        if closed[comp[v]] {
            classes[comp[v]].push(v);
        }
    }
    classes.retain(|c| !c.is_empty());
    classes.sort_by_key(|c| c[0]);
    classes
}

/// Grassmann-Taksar-Heyman state reduction on an irreducible class, exploiting
/// the band structure of Karma transitions. `None` if the class is not
/// irreducible after all (a zero pivot).
fn gth_banded(a: &SparseMatrix, class: &[usize]) -> Option<Vec<f64>> {
    let m = class.len();
    if m == 1 {
        return Some(vec![1.0]);
    }
    let mut local = vec![usize::MAX; a.dim];
    for (l, &g) in class.iter().enumerate() {
        local[g] = l;
    }
    // Row-stochastic view: p[i][j] = A[j][i], probability of moving i -> j.
    let (mut lo, mut hi) = (0usize, 0usize);
    for (i, &g) in class.iter().enumerate() {
        for (u, _) in a.column(g) {
            let j = local[u];
            if j == usize::MAX {
                return None;
            }
            lo = lo.max(i.saturating_sub(j));
            hi = hi.max(j.saturating_sub(i));
        }
    }
    let width = lo + hi + 1;
    let mut band = vec![0.0; m * width];
    // entry (i, j) lives at i * width + (j + lo - i)
    let at = |i: usize, j: usize| i * width + j + lo - i;
    for (i, &g) in class.iter().enumerate() {
        for (u, w) in a.column(g) {
            band[at(i, local[u])] += w;
        }
    }
    for k in (1..m).rev() {
        let j0 = k.saturating_sub(lo);
        let s: f64 = (j0..k).map(|j| band[at(k, j)]).sum();
        if !(s > 0.0) {
            return None;
        }
        let i0 = k.saturating_sub(hi);
        for i in i0..k {
            let f = band[at(i, k)] / s;
            band[at(i, k)] = f;
            if f == 0.0 {
                continue;
            }
            for j in j0..k {
                let pkj = band[at(k, j)];
                if pkj != 0.0 {
                    band[at(i, j)] += f * pkj;
                }
            }
        }
    }
    let mut pi = vec![0.0; m];
    pi[0] = 1.0;
    for k in 1..m {
        let i0 = k.saturating_sub(hi);
        pi[k] = (i0..k).map(|i| pi[i] * band[at(i, k)]).sum();
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= total);
    Some(pi)
}

/// Limit of the power iteration started from all mass on `k0_index`.
pub fn stationary_distribution(a: &SparseMatrix, k0_index: usize) -> Result<Stationary> {
    stationary_with_cap(a, k0_index, DEFAULT_MAX_POWER_ITER)
}

pub fn stationary_with_cap(a: &SparseMatrix, k0_index: usize, max_iter: usize) -> Result<Stationary> {
    if k0_index >= a.dim {
        return Err(Error::invalid(format!(
            "initial index {k0_index} out of range for {} states",
            a.dim
        )));
    }
    let mut v = vec![0.0; a.dim];
    v[k0_index] = 1.0;
    power_iterate(a, v, max_iter)
}

pub fn power_iterate(a: &SparseMatrix, mut v: Vec<f64>, max_iter: usize) -> Result<Stationary> {
    let mut next = vec![0.0; a.dim];
    let mut residual = f64::INFINITY;
    for it in 0..max_iter {
        a.mul_into(&v, &mut next);
        residual = v
            .iter()
            .zip(&next)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        if residual <= CHANGE_TOL.max(RESIDUAL_TOL) {
            return Ok(Stationary {
                pi: v,
                residual,
                iterations: it,
            });
        }
        std::mem::swap(&mut v, &mut next);
    }
    Err(Error::Convergence {
        what: "stationary distribution",
        iterations: max_iter,
        residual,
    })
}

/// A fully built chain for one reference level.
#[derive(Clone, Debug)]
pub struct KarmaChain {
    pub k0: i64,
    pub k_ref: i64,
    /// Reachable Karma levels, ascending.
    pub states: Vec<i64>,
    pub transition: SparseMatrix,
    pub pi_inf: Vec<f64>,
    /// Column `v` is the arc distribution at `states[v]` (an `n x |K|` matrix).
    pub selection: Vec<Vec<f64>>,
    pub residual: f64,
    pub iterations: usize,
    pub attractive_upper: i64,
}

impl KarmaChain {
    pub fn build(inputs: &ChainInputs, k0: i64) -> Result<Self> {
        Self::build_with_cap(inputs, k0, DEFAULT_STATE_CAP)
    }

    pub fn build_with_cap(inputs: &ChainInputs, k0: i64, cap: usize) -> Result<Self> {
        check_strict_order(inputs.discomfort, inputs.prices)?;
        let (states, probs) = explore(inputs, k0, cap)?;
        let transition = assemble(inputs, &states, &probs)?;
        let k0_index = states.binary_search(&k0).expect("k0 is reachable");
        let st = stationary_limit(&transition, k0_index, inputs.p_home > 0.0)?;
        let selection = states.iter().map(|k| probs[k].clone()).collect();
        Ok(KarmaChain {
            k0,
            k_ref: inputs.k_ref,
            states,
            transition,
            pi_inf: st.pi,
            selection,
            residual: st.residual,
            iterations: st.iterations,
            attractive_upper: inputs.attractive_upper(),
        })
    }

    /// Convenience constructor from flows, mirroring the aggregate layer.
    pub fn from_flows(
        k0: i64,
        k_ref: i64,
        p: &PriceVector,
        x: &FlowVector,
        net: &Network,
        population: &Population,
    ) -> Result<Self> {
        let d = net.discomfort(x)?;
        let inputs = ChainInputs {
            discomfort: &d,
            prices: &p.0,
            k_ref,
            horizon: population.horizon,
            p_home: population.p_home,
            sensitivity: &population.sensitivity,
        };
        Self::build(&inputs, k0)
    }

    /// `P_sel * pi_inf`: stationary arc shares of a traveling user.
    pub fn arc_shares(&self) -> Vec<f64> {
        let n = self.selection.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n];
        for (col, &w) in self.selection.iter().zip(&self.pi_inf) {
            for (o, &q) in out.iter_mut().zip(col) {
                *o += q * w;
            }
        }
        out
    }

    /// Stationary mass on levels above the attractive bound.
    pub fn mass_above_attractive(&self) -> f64 {
        self.states
            .iter()
            .zip(&self.pi_inf)
            .filter(|(&k, _)| k > self.attractive_upper)
            .map(|(_, &w)| w)
            .sum()
    }
}

/// Reachable states for a user class described by flows and population.
pub fn enumerate_states(
    k0: i64,
    k_ref: i64,
    p: &PriceVector,
    x: &FlowVector,
    net: &Network,
    population: &Population,
) -> Result<Vec<i64>> {
    let d = net.discomfort(x)?;
    check_strict_order(&d, &p.0)?;
    let inputs = ChainInputs {
        discomfort: &d,
        prices: &p.0,
        k_ref,
        horizon: population.horizon,
        p_home: population.p_home,
        sensitivity: &population.sensitivity,
    };
    enumerate_states_with(&inputs, k0, DEFAULT_STATE_CAP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::KrefSpec;

    const U02: SensitivityDist = SensitivityDist::Uniform { min: 0.0, max: 2.0 };

    fn reference_d() -> Vec<f64> {
        let net = Network::new(
            vec![0.5001, 0.5734, 0.7085, 0.6512, 0.8602],
            vec![0.0923, 0.1863, 0.3968, 0.3456, 0.5388],
            0.15,
            4,
            vec![0.7096, 0.8426, 0.9391, 0.6022, 0.5137],
        )
        .unwrap();
        net.discomfort(&FlowVector(vec![0.0877, 0.1309, 0.0, 0.3053, 0.4261]))
            .unwrap()
    }

    const P_STAR: [i64; 5] = [79, 63, 39, 13, -45];

    fn reference_inputs(d: &[f64], k_ref: i64) -> ChainInputs<'_> {
        ChainInputs {
            discomfort: d,
            prices: &P_STAR,
            k_ref,
            horizon: 4,
            p_home: 0.05,
            sensitivity: &U02,
        }
    }

    /// Breadth-first closure written independently of `explore`.
    fn reference_closure(inputs: &ChainInputs, k0: i64) -> Vec<i64> {
        let mut seen = std::collections::BTreeSet::from([k0]);
        let mut frontier = vec![k0];
        while !frontier.is_empty() {
            let mut next_frontier = Vec::new();
            for k in frontier {
                let probs = choice_probability_ordered(
                    inputs.discomfort,
                    inputs.prices,
                    k,
                    inputs.k_ref,
                    inputs.horizon,
                    inputs.sensitivity,
                );
                for (j, q) in probs.into_iter().enumerate() {
                    let nk = k - inputs.prices[j];
                    if q > 0.0 && seen.insert(nk) {
                        next_frontier.push(nk);
                    }
                }
            }
            frontier = next_frontier;
        }
        seen.into_iter().collect()
    }

    #[test]
    fn budget_forces_first_move() {
        let d = [1.0, 2.0];
        let inputs = ChainInputs {
            discomfort: &d,
            prices: &[1, -1],
            k_ref: 0,
            horizon: 1,
            p_home: 0.1,
            sensitivity: &U02,
        };
        let states = enumerate_states_with(&inputs, 0, DEFAULT_STATE_CAP).unwrap();
        assert!(states.contains(&1));
        assert!(states.iter().all(|&k| k >= 0 && k <= inputs.attractive_upper()));
        let choice = inputs.choice(0).unwrap();
        assert_eq!(choice, vec![0.0, 1.0]);
    }

    #[test]
    fn reference_states_bounded_and_match_reference() {
        let d = reference_d();
        for k_ref in [0, 13, 39, 63, 79] {
            let inputs = reference_inputs(&d, k_ref);
            let states = enumerate_states_with(&inputs, 79, DEFAULT_STATE_CAP).unwrap();
            assert_eq!(states, reference_closure(&inputs, 79));
            let upper = inputs.attractive_upper().max(79);
            assert!(states.iter().all(|&k| (0..=upper).contains(&k)));
        }
        assert_eq!(reference_inputs(&d, 0).attractive_upper(), 440);
        assert_eq!(reference_inputs(&d, 79).attractive_upper(), 519);
        let states = enumerate_states_with(&reference_inputs(&d, 0), 79, DEFAULT_STATE_CAP).unwrap();
        assert!(states.iter().all(|&k| (0..=519).contains(&k)));
    }

    #[test]
    fn levels_above_bound_only_fall() {
        let d = reference_d();
        let inputs = reference_inputs(&d, 0);
        let k0 = 2000;
        let chain = KarmaChain::build(&inputs, k0).unwrap();
        for (c, &k) in chain.states.iter().enumerate() {
            if k <= chain.attractive_upper {
                continue;
            }
            for (r, v) in chain.transition.column(c) {
                if r != c && v > 0.0 {
                    assert!(chain.states[r] < k);
                }
            }
        }
        assert!(chain.mass_above_attractive() <= 1e-10);
    }

    #[test]
    fn chain_invariants_reference() {
        let d = reference_d();
        for k_ref in [0, 13, 39, 63, 79] {
            let chain = KarmaChain::build(&reference_inputs(&d, k_ref), 79).unwrap();
            let a = &chain.transition;
            for c in 0..a.dim {
                assert!((a.column_sum(c) - 1.0).abs() <= 1e-12);
                assert!(a.get(c, c) >= 0.05 - 1e-15);
                assert!(a.column(c).count() <= 6);
                let off: f64 = a.column(c).filter(|&(r, _)| r != c).map(|(_, v)| v).sum();
                let sel = &chain.selection[c];
                assert!((sel.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                // no zero-price arc here, so all traveling mass leaves the diagonal
                assert!((off - 0.95 * sel.iter().sum::<f64>()).abs() <= 1e-12);
            }
            assert!((chain.pi_inf.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(chain.pi_inf.iter().all(|&w| w >= 0.0));
            assert!(chain.residual <= 1e-10);
            let mut out = vec![0.0; a.dim];
            a.mul_into(&chain.pi_inf, &mut out);
            let res = out
                .iter()
                .zip(&chain.pi_inf)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(res <= 1e-10);
            assert!(chain.mass_above_attractive() <= 1e-10);
        }
    }

    #[test]
    fn interior_column_of_symmetric_walk() {
        let d = [1.0, 2.0];
        let inputs = ChainInputs {
            discomfort: &d,
            prices: &[1, -1],
            k_ref: 0,
            horizon: 1,
            p_home: 0.2,
            sensitivity: &U02,
        };
        // k = 1: arc 1 leaves budget 0, so its plan is (e_1 + e_2) / 2 with cost 1.5;
        // arc 2 plans e_1 with cost 1. Arc 1 wins for sigma >= 0.5, i.e. s >= 0.5.
        let probs = inputs.choice(1).unwrap();
        assert!((probs[0] - 0.75).abs() < 1e-15 && (probs[1] - 0.25).abs() < 1e-15);
        let states = enumerate_states_with(&inputs, 1, DEFAULT_STATE_CAP).unwrap();
        let a = transition_matrix_with(&inputs, &states).unwrap();
        let c = states.binary_search(&1).unwrap();
        let r_down = states.binary_search(&0).unwrap();
        let r_up = states.binary_search(&2).unwrap();
        assert!((a.get(c, c) - 0.2).abs() < 1e-15);
        assert!((a.get(r_down, c) - 0.6).abs() < 1e-15);
        assert!((a.get(r_up, c) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn nobody_travels_gives_identity() {
        let d = reference_d();
        let mut inputs = reference_inputs(&d, 0);
        inputs.p_home = 1.0;
        let states = enumerate_states_with(&inputs, 79, DEFAULT_STATE_CAP).unwrap();
        let a = transition_matrix_with(&inputs, &states).unwrap();
        for c in 0..a.dim {
            assert_eq!(a.get(c, c), 1.0);
            assert_eq!(a.column_sum(c), 1.0);
        }
        let st = stationary_distribution(&SparseMatrix::identity(4), 2).unwrap();
        assert_eq!(st.pi, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn birth_death_matches_detailed_balance() {
        // 3 states, up-rate u, down-rate w, lazy diagonal.
        let (u, w) = (0.3, 0.2);
        let a = SparseMatrix {
            dim: 3,
            col_ptr: vec![0, 2, 5, 7],
            row_idx: vec![0, 1, 0, 1, 2, 1, 2],
            values: vec![1.0 - u, u, w, 1.0 - u - w, u, w, 1.0 - w],
        };
        // pi_{i+1} / pi_i = u / w
        let r = u / w;
        let z = 1.0 + r + r * r;
        let expected = [1.0 / z, r / z, r * r / z];
        let st = stationary_distribution(&a, 0).unwrap();
        for (x, y) in st.pi.iter().zip(expected) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
        assert!(st.residual <= 1e-10);
    }

    #[test]
    fn direct_solve_matches_power_iteration() {
        let d = reference_d();
        let mut prices = vec![P_STAR.to_vec(), vec![60, 59, 58, 57, -99], vec![20, 15, 10, 2, -12]];
        prices.push(vec![90, 40, 30, 4, -6]);
        for p in &prices {
            for k_ref in [0, p[0]] {
                let inputs = ChainInputs {
                    discomfort: &d,
                    prices: p,
                    k_ref,
                    horizon: 4,
                    p_home: 0.05,
                    sensitivity: &U02,
                };
                let chain = KarmaChain::build(&inputs, p[0]).unwrap();
                assert_eq!(chain.iterations, 0, "direct solve not accepted for {p:?}");
                let k0_index = chain.states.binary_search(&p[0]).unwrap();
                let power = stationary_distribution(&chain.transition, k0_index).unwrap();
                let diff = chain
                    .pi_inf
                    .iter()
                    .zip(&power.pi)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                assert!(diff <= 1e-7, "{p:?} k_ref {k_ref}: {diff}");
                assert!(chain.residual <= 1e-10);
            }
        }
    }

    #[test]
    fn two_closed_classes_use_the_initial_state() {
        // states 0..3: {0, 1} and {2, 3} are separate closed classes
        let a = SparseMatrix {
            dim: 4,
            col_ptr: vec![0, 2, 4, 6, 8],
            row_idx: vec![0, 1, 0, 1, 2, 3, 2, 3],
            values: vec![0.5, 0.5, 0.3, 0.7, 0.6, 0.4, 0.2, 0.8],
        };
        assert_eq!(closed_classes(&a), vec![vec![0, 1], vec![2, 3]]);
        let st = stationary_limit(&a, 3, true).unwrap();
        assert!(st.iterations > 0);
        assert!(st.pi[0] == 0.0 && st.pi[1] == 0.0);
        // pi_2 * 0.4 = pi_3 * 0.2
        assert!((st.pi[2] - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn transient_states_get_no_mass() {
        // 0 -> 1 one way, {1, 2} closed
        let a = SparseMatrix {
            dim: 3,
            col_ptr: vec![0, 2, 4, 6],
            row_idx: vec![0, 1, 1, 2, 1, 2],
            values: vec![0.5, 0.5, 0.5, 0.5, 0.25, 0.75],
        };
        assert_eq!(closed_classes(&a), vec![vec![1, 2]]);
        let st = stationary_limit(&a, 0, true).unwrap();
        assert_eq!(st.iterations, 0);
        assert_eq!(st.pi[0], 0.0);
        let power = stationary_distribution(&a, 0).unwrap();
        assert!((st.pi[1] - power.pi[1]).abs() < 1e-9);
    }

    #[test]
    fn iteration_cap_is_a_convergence_error() {
        let a = SparseMatrix {
            dim: 2,
            col_ptr: vec![0, 2, 4],
            row_idx: vec![0, 1, 0, 1],
            values: vec![0.5, 0.5, 0.5, 0.5],
        };
        assert!(stationary_with_cap(&a, 0, 1).is_err());
        assert!(stationary_with_cap(&a, 0, 10).is_ok());
    }

    #[test]
    fn state_cap_is_enforced() {
        let d = reference_d();
        let err = KarmaChain::build_with_cap(&reference_inputs(&d, 0), 79, 10).unwrap_err();
        assert!(matches!(err, Error::StateExplosion { cap: 10 }));
    }

    #[test]
    fn unordered_inputs_are_rejected() {
        let d = [2.0, 1.0];
        let inputs = ChainInputs {
            discomfort: &d,
            prices: &[1, -1],
            k_ref: 0,
            horizon: 1,
            p_home: 0.1,
            sensitivity: &U02,
        };
        assert!(matches!(KarmaChain::build(&inputs, 0), Err(Error::Ordering(_))));
    }

    #[test]
    fn conservation_of_probability() {
        use rand::{Rng, SeedableRng};
        let d = reference_d();
        let chain = KarmaChain::build(&reference_inputs(&d, 39), 79).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut v: Vec<f64> = (0..chain.states.len()).map(|_| rng.random::<f64>()).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        let mut out = vec![0.0; v.len()];
        chain.transition.mul_into(&v, &mut out);
        assert!((out.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn from_flows_matches_direct_build() {
        let net = Network::new(
            vec![0.5001, 0.5734, 0.7085, 0.6512, 0.8602],
            vec![0.0923, 0.1863, 0.3968, 0.3456, 0.5388],
            0.15,
            4,
            vec![0.7096, 0.8426, 0.9391, 0.6022, 0.5137],
        )
        .unwrap();
        let pop = Population {
            p_home: 0.05,
            horizon: 4,
            sensitivity: U02,
            kref: KrefSpec::PriceLevels,
        };
        let x = FlowVector(vec![0.0877, 0.1309, 0.0, 0.3053, 0.4261]);
        let a = KarmaChain::from_flows(79, 0, &PriceVector(P_STAR.to_vec()), &x, &net, &pop).unwrap();
        let d = reference_d();
        let b = KarmaChain::build(&reference_inputs(&d, 0), 79).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.pi_inf, b.pi_inf);
    }
}
