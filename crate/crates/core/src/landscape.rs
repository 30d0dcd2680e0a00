//! The (Karma, sensitivity) decision landscape of a single user class.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::SensitivityBounds;
use crate::response::oracle::oracle_for_discomfort;
use crate::response::{best_response_for_discomfort, feasibility_threshold, PriceVector, UserContext};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LandscapePoint {
    pub k: i64,
    pub s: f64,
    /// Closed-form choice, 0-based.
    pub arc: usize,
    /// Whether the brute-force oracle also finds `arc` optimal.
    pub oracle_agrees: bool,
}

/// Inclusive Karma range from the feasibility threshold to
/// `k_ref + (T + 1) max p - min p`.
pub fn karma_range(p: &PriceVector, k_ref: i64, horizon: u32) -> (i64, i64) {
    let lo = feasibility_threshold(k_ref, &p.0, horizon);
    let hi = k_ref + (horizon as i64 + 1) * p.max() - p.min();
    (lo, hi.max(lo))
}

/// Evaluates the best response on an `nk` x `ns` grid: Karma levels evenly
/// spaced (rounded) over `karma_range`, sensitivities evenly spaced over the
/// support including both ends.
pub fn decision_landscape(
    d: &[f64],
    p: &PriceVector,
    k_ref: i64,
    horizon: u32,
    sens: &SensitivityBounds,
    nk: usize,
    ns: usize,
) -> Result<Vec<LandscapePoint>> {
    if nk < 2 || ns < 2 {
        return Err(Error::invalid("landscape grid needs at least 2 points per axis"));
    }
    let (lo, hi) = karma_range(p, k_ref, horizon);
    let mut out = Vec::with_capacity(nk * ns);
    for i in 0..nk {
        let k = lo + ((hi - lo) as f64 * i as f64 / (nk - 1) as f64).round() as i64;
        for l in 0..ns {
            let s = sens.min + (sens.max - sens.min) * l as f64 / (ns - 1) as f64;
            let ctx = UserContext {
                karma: k,
                k_ref,
                sensitivity: s,
                horizon,
            };
            let arc = best_response_for_discomfort(&ctx, p, d, sens)?.arc;
            let oracle = oracle_for_discomfort(&ctx, p, d, sens)?;
            out.push(LandscapePoint {
                k,
                s,
                arc,
                oracle_agrees: oracle.optimal_arcs.contains(&arc),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_arc_grid_agrees_and_shows_both_choices() {
        let d = [1.0, 2.0];
        let p = PriceVector(vec![3, -1]);
        let sens = SensitivityBounds { min: 0.0, max: 2.0, mean: 1.0 };
        let grid = decision_landscape(&d, &p, 0, 2, &sens, 30, 30).unwrap();
        assert_eq!(grid.len(), 900);
        assert!(grid.iter().all(|g| g.oracle_agrees));
        assert!(grid.iter().any(|g| g.arc == 0));
        assert!(grid.iter().any(|g| g.arc == 1));
        assert_eq!(grid[0].k, 0);
        assert_eq!(grid.last().unwrap().k, 10);
    }

    #[test]
    fn rejects_degenerate_grid() {
        let sens = SensitivityBounds { min: 0.0, max: 2.0, mean: 1.0 };
        assert!(decision_landscape(&[1.0, 2.0], &PriceVector(vec![1, 0]), 0, 2, &sens, 1, 5).is_err());
    }
}
