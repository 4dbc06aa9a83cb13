//! Error measures against a known source set.

use serde::{Deserialize, Serialize};

/// Minimum-cost matching of `estimate` to `truth` by squared distance.
///
/// Entry `i` is the estimate index assigned to truth source `i`. When the
/// counts differ only `min(m, m̂)` pairs are matched.
pub fn assign(truth: &[[f64; 2]], estimate: &[[f64; 2]]) -> Vec<Option<usize>> {
    let (m, n) = (truth.len(), estimate.len());
    if m == 0 || n == 0 {
        return vec![None; m];
    }
    if m > n {
        // Match estimates to truth and invert.
        let inv = assign(estimate, truth);
        let mut out = vec![None; m];
        for (e, t) in inv.iter().enumerate() {
            if let Some(t) = t {
                out[*t] = Some(e);
            }
        }
        return out;
    }
    assert!(n <= 20, "assignment over more than 20 estimates");
    let cost = |i: usize, j: usize| {
        let dx = truth[i][0] - estimate[j][0];
        let dy = truth[i][1] - estimate[j][1];
        dx * dx + dy * dy
    };
    // best[i][mask]: cheapest matching of truth 0..i onto the estimates in mask.
    let full = 1usize << n;
    let mut best = vec![vec![f64::INFINITY; full]; m + 1];
    let mut from = vec![vec![usize::MAX; full]; m + 1];
    best[0][0] = 0.0;
    for i in 0..m {
        for mask in 0..full {
            let c = best[i][mask];
            if !c.is_finite() {
                continue;
            }
            for j in 0..n {
                if mask & (1 << j) == 0 {
                    let next = mask | (1 << j);
                    let v = c + cost(i, j);
                    if v < best[i + 1][next] {
                        best[i + 1][next] = v;
                        from[i + 1][next] = j;
                    }
                }
            }
        }
    }
    let mut mask = (0..full)
        .filter(|mk| mk.count_ones() as usize == m)
        .min_by(|a, b| best[m][*a].total_cmp(&best[m][*b]))
        .unwrap();
    let mut out = vec![None; m];
    for i in (1..=m).rev() {
        let j = from[i][mask];
        out[i - 1] = Some(j);
        mask &= !(1 << j);
    }
    out
}

/// `‖S - Ŝ‖₂ / ‖S‖₂` over the matched pairs; unmatched truth counts in full.
pub fn position_error(truth: &[[f64; 2]], estimate: &[[f64; 2]]) -> f64 {
    let pairs = assign(truth, estimate);
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, p) in pairs.iter().enumerate() {
        let s = truth[i];
        den += s[0] * s[0] + s[1] * s[1];
        num += match p {
            Some(j) => {
                let e = estimate[*j];
                (s[0] - e[0]).powi(2) + (s[1] - e[1]).powi(2)
            }
            None => s[0] * s[0] + s[1] * s[1],
        };
    }
    (num / den).sqrt()
}

/// Largest distance between matched pairs.
pub fn max_position_distance(truth: &[[f64; 2]], estimate: &[[f64; 2]]) -> f64 {
    assign(truth, estimate)
        .iter()
        .enumerate()
        .map(|(i, p)| match p {
            Some(j) => (truth[i][0] - estimate[*j][0]).hypot(truth[i][1] - estimate[*j][1]),
            None => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

/// `‖a - b‖ / ‖a‖` in the Euclidean norm.
pub fn relative_l2(truth: &[f64], estimate: &[f64]) -> f64 {
    let num: f64 = truth.iter().zip(estimate).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = truth.iter().map(|a| a * a).sum();
    (num / den).sqrt()
}

/// Relative `L²(0, T*)` error of a sampled intensity (trapezoid on uniform samples).
pub fn intensity_l2_error(truth: &[f64], estimate: &[f64]) -> f64 {
    let n = truth.len();
    let w = |i: usize| if i == 0 || i + 1 == n { 0.5 } else { 1.0 };
    let num: f64 = (0..n).map(|i| w(i) * (truth[i] - estimate[i]).powi(2)).sum();
    let den: f64 = (0..n).map(|i| w(i) * truth[i] * truth[i]).sum();
    (num / den).sqrt()
}

/// Errors of one inversion against the truth.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub m_true: usize,
    pub m_estimated: usize,
    pub position_error: f64,
    pub max_position_distance: f64,
    pub lambda0_error: f64,
    /// Per truth source, `None` when unmatched or not reconstructed.
    pub ifourier_errors: Vec<Option<f64>>,
    pub approx_errors: Vec<Option<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_recovers_permutation() {
        let t = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let e = [[0.1, 9.9], [0.2, -0.1], [9.8, 0.3]];
        assert_eq!(assign(&t, &e), vec![Some(1), Some(2), Some(0)]);
    }

    #[test]
    fn assignment_beats_greedy() {
        let t = [[0.0, 0.0], [1.0, 0.0]];
        let e = [[0.4, 0.0], [-2.0, 0.0]];
        assert_eq!(assign(&t, &e), vec![Some(1), Some(0)]);
    }

    #[test]
    fn more_truth_than_estimates() {
        let t = [[0.0, 0.0], [5.0, 5.0], [9.0, 9.0]];
        let e = [[8.9, 9.0]];
        assert_eq!(assign(&t, &e), vec![None, None, Some(0)]);
        assert!(position_error(&t, &e) > 0.3);
    }

    #[test]
    fn exact_estimate_has_zero_errors() {
        let t = [[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(position_error(&t, &[[3.0, 4.0], [1.0, 2.0]]), 0.0);
        assert_eq!(intensity_l2_error(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
    }
}
