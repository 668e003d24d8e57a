//! Run metrics and the small amount of statistics the summaries need.

use serde::{Deserialize, Serialize};

use crate::agent::DECISION_DT;

/// First time `t` (seconds from the start of `diffs`) such that every value
/// in `[t, t + window_s]` is within `max(tolerance, 2)`. `diffs[k]` is the
/// largest |link difference| among active relays at decision tick `k`.
pub fn convergence_detector(diffs: &[f64], tolerance: f64, window_s: f64) -> Option<f64> {
    let band = tolerance.max(2.0);
    let need = (window_s / DECISION_DT).round() as usize + 1;
    let mut run = 0usize;
    for (k, d) in diffs.iter().enumerate() {
        if *d <= band {
            run += 1;
            if run >= need {
                return Some((k + 1 - run) as f64 * DECISION_DT);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// One chain link at one decision tick, counted from the head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkTrace {
    pub head_side: usize,
    pub base_side: usize,
    pub true_q: f64,
    pub raw_q: Option<f64>,
    pub filtered_q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub time_s: f64,
    pub links: Vec<LinkTrace>,
    /// Largest |true link difference| over active relays (0 with no relays).
    pub max_true_diff: f64,
    /// Chain member abscissae, head first.
    pub abscissae: Vec<(usize, f64)>,
}

impl TickRecord {
    pub fn min_true_quality(&self) -> Option<f64> {
        self.links.iter().map(|l| l.true_q).reduce(f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub tick: u64,
    pub agent: usize,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub convergence_time: Option<f64>,
    /// Mean over the reported relays of their abscissa variance, m².
    pub position_variance: f64,
    pub per_agent_variance: Vec<(usize, f64)>,
    pub launches: Vec<(f64, usize)>,
    pub faults: Vec<Fault>,
    pub trace: Vec<TickRecord>,
}

impl Metrics {
    pub fn min_true_quality_trace(&self) -> Vec<(f64, Option<f64>)> {
        self.trace
            .iter()
            .map(|r| (r.time_s, r.min_true_quality()))
            .collect()
    }

    pub fn converged(&self) -> bool {
        self.convergence_time.is_some()
    }

    /// Final true link qualities, head first.
    pub fn final_link_qualities(&self) -> Vec<f64> {
        self.trace
            .last()
            .map(|r| r.links.iter().map(|l| l.true_q).collect())
            .unwrap_or_default()
    }

    /// Final abscissae, head first.
    pub fn final_abscissae(&self) -> Vec<f64> {
        self.trace
            .last()
            .map(|r| r.abscissae.iter().map(|(_, x)| *x).collect())
            .unwrap_or_default()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

/// Linear-interpolated quantile of unsorted data.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

pub fn iqr(xs: &[f64]) -> (f64, f64) {
    (quantile(xs, 0.25), quantile(xs, 0.75))
}

fn std_normal_cdf(z: f64) -> f64 {
    // Abramowitz-Stegun 7.1.26 on erf, |error| < 1.5e-7
    let x = z.abs() / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let erf = 1.0 - poly * (-x * x).exp();
    if z >= 0.0 {
        0.5 * (1.0 + erf)
    } else {
        0.5 * (1.0 - erf)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSum {
    /// Mann-Whitney U of the first sample.
    pub u: f64,
    pub z: f64,
    /// One-sided p-value for "first sample tends to be smaller".
    pub p_less: f64,
}

/// Wilcoxon rank-sum / Mann-Whitney U test, normal approximation with tie
/// correction and continuity correction.
pub fn rank_sum_test(a: &[f64], b: &[f64]) -> RankSum {
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;
    let mut all: Vec<(f64, usize)> = a
        .iter()
        .map(|&x| (x, 0))
        .chain(b.iter().map(|&x| (x, 1)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let mut ranks = vec![0.0; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for r in ranks.iter_mut().take(j + 1).skip(i) {
            *r = avg;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let r1: f64 = all
        .iter()
        .zip(&ranks)
        .filter(|((_, g), _)| *g == 0)
        .map(|(_, r)| r)
        .sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let mu = n1 * n2 / 2.0;
    let nn = n1 + n2;
    let var = n1 * n2 / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
    if var <= 0.0 {
        return RankSum { u, z: 0.0, p_less: 0.5 };
    }
    let z = (u - mu + 0.5) / var.sqrt();
    RankSum {
        u,
        z,
        p_less: std_normal_cdf(z),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn detector_examples() {
        assert_eq!(convergence_detector(&[0.0; 40], 0.0, 5.0), Some(0.0));
        assert_eq!(convergence_detector(&[9.0; 400], 0.0, 5.0), None);
        let mut trace = vec![6.0; 60];
        trace.extend(vec![1.0; 40]);
        assert_eq!(convergence_detector(&trace, 0.5, 5.0), Some(12.0));
    }

    #[test]
    fn detector_needs_full_window() {
        let mut trace = vec![6.0; 60];
        trace.extend(vec![1.0; 25]);
        assert_eq!(convergence_detector(&trace, 0.5, 5.0), None);
        trace.push(1.0);
        assert_eq!(convergence_detector(&trace, 0.5, 5.0), Some(12.0));
    }

    #[test]
    fn detector_band_floor_and_tolerance() {
        let trace = vec![4.0; 40];
        assert_eq!(convergence_detector(&trace, 0.0, 5.0), None);
        assert_eq!(convergence_detector(&trace, 5.0, 5.0), Some(0.0));
    }

    #[test]
    fn quantiles() {
        let xs = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(median(&xs), 3.0);
        assert_eq!(iqr(&xs), (2.0, 4.0));
        assert_eq!(median(&[1.0, 2.0]), 1.5);
        assert_abs_diff_eq!(variance(&[1.0, 3.0]), 1.0);
    }

    #[test]
    fn normal_cdf_values() {
        assert_abs_diff_eq!(std_normal_cdf(0.0), 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(std_normal_cdf(-1.644_853_6), 0.05, epsilon = 1e-6);
        assert_abs_diff_eq!(std_normal_cdf(1.959_964), 0.975, epsilon = 1e-6);
    }

    #[test]
    fn rank_sum_against_exact_u() {
        // U counts pairs (a_i > b_j) + ties / 2
        let a = [1.0, 2.0, 4.0, 4.0, 7.0];
        let b = [3.0, 4.0, 5.0, 8.0, 9.0, 10.0];
        let brute: f64 = a
            .iter()
            .flat_map(|x| b.iter().map(move |y| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 }))
            .sum();
        assert_abs_diff_eq!(rank_sum_test(&a, &b).u, brute);
    }

    #[test]
    fn rank_sum_separates_shifted_samples() {
        let a: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..30).map(|i| i as f64 + 20.0).collect();
        assert!(rank_sum_test(&a, &b).p_less < 1e-4);
        assert!(rank_sum_test(&b, &a).p_less > 0.99);
        let same = rank_sum_test(&a, &a);
        assert!(same.p_less > 0.4 && same.p_less < 0.6);
    }
}
