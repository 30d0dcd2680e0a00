//! System-optimal flows: minimize `C(x)` over `{x in [0,1]^n : 1'x = P_go}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{FlowVector, Network};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100_000;
pub const DEFAULT_DECIMALS: u32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimumResult {
    pub x_star: FlowVector,
    pub x_star_quant: FlowVector,
    /// `d(x*)`, reported alongside the flows.
    pub discomfort: Vec<f64>,
    pub cost: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Projected gradient descent with backtracking, started from the uniform split.
pub fn solve_system_optimum(net: &Network, p_go: f64, tol: f64) -> Result<OptimumResult> {
    let start = vec![p_go / net.n() as f64; net.n()];
    solve_from(net, p_go, tol, DEFAULT_MAX_ITER, start)
}

/// As [`solve_system_optimum`] but from an arbitrary initial iterate, which is
/// projected onto the feasible set first.
pub fn solve_from(
    net: &Network,
    p_go: f64,
    tol: f64,
    max_iter: usize,
    start: Vec<f64>,
) -> Result<OptimumResult> {
    let n = net.n();
    if !(p_go > 0.0 && p_go <= 1.0) || p_go > n as f64 {
        return Err(Error::invalid(format!("P_go = {p_go} outside (0, 1]")));
    }
    if start.len() != n {
        return Err(Error::invalid("initial iterate has wrong dimension"));
    }

    let mut x = project_capped_simplex(&start, p_go);
    let mut g = gradient(net, &x);
    let mut step = 1.0;
    let mut residual = kkt_residual(&x, &g, p_go);
    let mut iterations = 0;

    while residual > tol {
        if iterations >= max_iter {
            return Err(Error::Convergence {
                what: "system optimum",
                iterations,
                residual,
            });
        }
        iterations += 1;
        let mut t = step;
        loop {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - t * gi).collect();
            let cand = project_capped_simplex(&trial, p_go);
            let gc = gradient(net, &cand);
            // Local Lipschitz test on gradient differences; unlike an Armijo test on
            // cost differences it stays meaningful once C(x) stalls at rounding level.
            let (curv, sq) = cand
                .iter()
                .zip(&x)
                .zip(gc.iter().zip(&g))
                .fold((0.0, 0.0), |(c, s), ((ci, xi), (gci, gi))| {
                    let dx = ci - xi;
                    (c + (gci - gi) * dx, s + dx * dx)
                });
            if curv <= sq / t || t < 1e-14 {
                x = cand;
                g = gc;
                break;
            }
            t *= 0.5;
        }
        step = (t * 2.0).min(1e3);
        residual = kkt_residual(&x, &g, p_go);
    }

    let x_star = FlowVector(x);
    Ok(OptimumResult {
        x_star_quant: quantize_flows(&x_star, DEFAULT_DECIMALS),
        discomfort: net.discomfort(&x_star)?,
        cost: net.cost_unchecked(&x_star.0),
        kkt_residual: residual,
        iterations,
        x_star,
    })
}

fn gradient(net: &Network, x: &[f64]) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(j, &xj)| net.arc_marginal_cost(j, xj))
        .collect()
}

/// Scale-free first-order certificate.
///
/// The multiplier is the flow-weighted mean marginal cost; loaded arcs are
/// charged their flow-weighted deviation from it, empty arcs any shortfall
/// below it, saturated arcs any excess above it.
pub fn kkt_residual(x: &[f64], grad: &[f64], p_go: f64) -> f64 {
    let total: f64 = x.iter().sum();
    if total <= 0.0 {
        return f64::INFINITY;
    }
    let mu = x.iter().zip(grad).map(|(a, b)| a * b).sum::<f64>() / total;
    let scale = mu.abs().max(f64::MIN_POSITIVE);
    x.iter()
        .zip(grad)
        .map(|(&xj, &gj)| {
            if xj >= 1.0 {
                (gj - mu).max(0.0)
            } else {
                (xj / p_go) * (gj - mu).abs() + (mu - gj).max(0.0)
            }
        })
        .fold(0.0, f64::max)
        / scale
}

/// Euclidean projection onto `{x : 1'x = total, 0 <= x <= 1}` by bisection on the shift.
pub fn project_capped_simplex(y: &[f64], total: f64) -> Vec<f64> {
    let shifted_sum = |tau: f64| -> f64 { y.iter().map(|v| (v - tau).clamp(0.0, 1.0)).sum() };
    let hi_y = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo_y = y.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (lo_y - 1.0, hi_y);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if shifted_sum(mid) > total {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    let tau = 0.5 * (lo + hi);
    let mut x: Vec<f64> = y.iter().map(|v| (v - tau).clamp(0.0, 1.0)).collect();
    // Push the leftover rounding error into the largest interior coordinate.
    let err = total - x.iter().sum::<f64>();
    if let Some(j) = (0..x.len())
        .filter(|&j| x[j] > 0.0 && x[j] < 1.0)
        .max_by(|&a, &b| x[a].total_cmp(&x[b]))
    {
        x[j] = (x[j] + err).clamp(0.0, 1.0);
    }
    x
}

/// Rounds each component half away from zero to `decimals` places.
pub fn quantize_flows(x: &FlowVector, decimals: u32) -> FlowVector {
    if decimals > 15 {
        return x.clone();
    }
    let scale = 10f64.powi(decimals as i32);
    FlowVector(x.0.iter().map(|v| (v * scale).round() / scale).collect())
}

/// Integer weights `round(x_quant * 10^decimals)`, the coefficients of the
/// zero-net-Karma constraint.
pub fn quantized_weights(x_quant: &FlowVector, decimals: u32) -> Vec<i64> {
    let scale = 10f64.powi(decimals.min(15) as i32);
    x_quant.0.iter().map(|v| (v * scale).round() as i64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_net() -> Network {
        Network::new(
            vec![0.5001, 0.5734, 0.7085, 0.6512, 0.8602],
            vec![0.0923, 0.1863, 0.3968, 0.3456, 0.5388],
            0.15,
            4,
            vec![0.7096, 0.8426, 0.9391, 0.6022, 0.5137],
        )
        .unwrap()
    }

    #[test]
    fn reproduces_reported_optimum() {
        let r = solve_system_optimum(&reference_net(), 0.95, DEFAULT_TOL).unwrap();
        let expected = [0.0877, 0.1309, 0.0000, 0.3053, 0.4261];
        for (a, b) in r.x_star.0.iter().zip(expected) {
            assert!((a - b).abs() < 1e-3, "{:?}", r.x_star);
        }
        assert!((r.x_star.total() - 0.95).abs() < 1e-9);
        assert!(r.kkt_residual <= DEFAULT_TOL);
        assert_eq!(r.x_star_quant.0, vec![0.088, 0.131, 0.0, 0.305, 0.426]);
    }

    #[test]
    fn identical_arcs_split_evenly() {
        let net = Network::new(vec![1.0; 4], vec![0.3; 4], 0.15, 4, vec![1.0; 4]).unwrap();
        let r = solve_system_optimum(&net, 0.8, DEFAULT_TOL).unwrap();
        for v in &r.x_star.0 {
            assert!((v - 0.2).abs() < 1e-9);
        }
    }

    #[test]
    fn two_arcs_match_grid_search() {
        let net = Network::new(vec![1.0, 2.0], vec![0.5, 0.5], 0.15, 4, vec![1.0, 1.0]).unwrap();
        let p_go = 0.9;
        let steps = 900_000;
        let (best_x1, _) = (0..=steps)
            .map(|i| {
                let x1 = p_go * i as f64 / steps as f64;
                (x1, net.cost_unchecked(&[x1, p_go - x1]))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let r = solve_system_optimum(&net, p_go, DEFAULT_TOL).unwrap();
        assert!((r.x_star.0[0] - best_x1).abs() < 2e-6, "{} vs {best_x1}", r.x_star.0[0]);
    }

    #[test]
    fn independent_of_start() {
        let net = reference_net();
        let a = solve_from(&net, 0.95, 1e-10, DEFAULT_MAX_ITER, vec![0.19; 5]).unwrap();
        let b = solve_from(&net, 0.95, 1e-10, DEFAULT_MAX_ITER, vec![0.95, 0.0, 0.0, 0.0, 0.0])
            .unwrap();
        for (u, v) in a.x_star.0.iter().zip(&b.x_star.0) {
            assert!((u - v).abs() < 2e-9, "{u} vs {v}");
        }
    }

    #[test]
    fn beats_random_feasible_points() {
        use rand::{Rng, SeedableRng};
        let net = reference_net();
        let r = solve_system_optimum(&net, 0.95, DEFAULT_TOL).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut accepted = 0;
        while accepted < 1000 {
            let raw: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            let x: Vec<f64> = raw.iter().map(|v| v * 0.95 / s).collect();
            if x.iter().any(|&v| v > 1.0) {
                continue;
            }
            accepted += 1;
            assert!(r.cost <= net.cost_unchecked(&x) + 1e-12);
        }
    }

    #[test]
    fn rejects_bad_demand() {
        assert!(matches!(
            solve_system_optimum(&reference_net(), 1.5, DEFAULT_TOL),
            Err(Error::Validation(_))
        ));
        assert!(solve_system_optimum(&reference_net(), 0.0, DEFAULT_TOL).is_err());
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let err = solve_from(&reference_net(), 0.95, 1e-15, 3, vec![0.95, 0.0, 0.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Convergence { iterations: 3, .. }));
    }

    #[test]
    fn quantization_rules() {
        let x = FlowVector(vec![0.0877, 0.1309, 0.0, 0.3053, 0.4261]);
        assert_eq!(quantize_flows(&x, 3).0, vec![0.088, 0.131, 0.0, 0.305, 0.426]);
        assert_eq!(quantize_flows(&FlowVector(vec![0.5, 0.5]), 0).0, vec![1.0, 1.0]);
        let q = quantize_flows(&x, 12);
        assert!(q.0.iter().zip(&x.0).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(quantized_weights(&quantize_flows(&x, 3), 3), vec![88, 131, 0, 305, 426]);
    }

    #[test]
    fn projection_lands_on_constraint() {
        let x = project_capped_simplex(&[3.0, -1.0, 0.2, 0.7], 0.9);
        assert!((x.iter().sum::<f64>() - 0.9).abs() < 1e-12);
        assert!(x.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
