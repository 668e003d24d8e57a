//! Scalar Kalman filter over a link's quality, driven by the rate at which
//! the two endpoints separate.
//!
//! Process model: `r[k] = r[k-1] + a * u[k] + w`, `w ~ N(0, q)`.
//! Measurement:   `z[k] = r[k] + v`, `v ~ N(0, r)`.
//!
//! `u > 0` means the endpoints are moving apart; with `a < 0` the predicted
//! quality drops while they separate.

use serde::{Deserialize, Serialize};

use crate::error::{CalibrationError, ParamError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanParams {
    /// Control gain, quality units per (m/s) per decision tick.
    pub a: f64,
    /// Process noise variance.
    pub q: f64,
    /// Measurement noise variance.
    pub r: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            a: -0.5,
            q: 0.05,
            r: 3.0,
        }
    }
}

impl KalmanParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        if !self.a.is_finite() {
            return Err(ParamError::invalid("kalman.a", "must be finite"));
        }
        if !(self.q >= 0.0 && self.q.is_finite()) {
            return Err(ParamError::invalid("kalman.q", format!("must be >= 0, got {}", self.q)));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(ParamError::invalid("kalman.r", format!("must be > 0, got {}", self.r)));
        }
        Ok(())
    }

    /// Fixed point of the a-priori variance recursion under a measurement
    /// every step.
    pub fn steady_state_prior_variance(&self) -> f64 {
        (self.q + (self.q * self.q + 4.0 * self.q * self.r).sqrt()) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkEstimate {
    pub r_hat: f64,
    pub p_var: f64,
    pub last_tick: u64,
}

impl LinkEstimate {
    /// Seeds an estimate from a first measurement, trusting it as much as
    /// the measurement noise allows.
    pub fn from_measurement(z: f64, tick: u64, params: &KalmanParams) -> Self {
        Self {
            r_hat: z,
            p_var: params.r,
            last_tick: tick,
        }
    }

    pub fn predict(&self, u: f64, params: &KalmanParams) -> Self {
        Self {
            r_hat: self.r_hat + params.a * u,
            p_var: self.p_var + params.q,
            last_tick: self.last_tick,
        }
    }

    pub fn correct(&self, z: f64, params: &KalmanParams) -> Self {
        let k = self.p_var / (self.p_var + params.r);
        Self {
            r_hat: self.r_hat + k * (z - self.r_hat),
            p_var: (1.0 - k) * self.p_var,
            last_tick: self.last_tick,
        }
    }

    /// One filter iteration: always predict, correct only when a packet
    /// arrived. A missed packet leaves the variance grown by `q`.
    pub fn step(&self, u: f64, measurement: Option<f64>, tick: u64, params: &KalmanParams) -> Self {
        let prior = self.predict(u, params);
        let mut post = match measurement {
            Some(z) => prior.correct(z, params),
            None => prior,
        };
        post.last_tick = tick;
        post
    }

    pub fn gain(&self, params: &KalmanParams) -> f64 {
        self.p_var / (self.p_var + params.r)
    }
}

/// One row of a separation log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationRow {
    pub tick: u64,
    /// Separation rate over the tick ending at `tick`, m/s.
    pub separation_rate: f64,
    /// Measured quality, absent when the packet was lost.
    pub quality: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub a: f64,
    pub residual_rms: f64,
    pub samples: usize,
}

/// Least-squares fit of the control gain.
///
/// Under the process model the quality level follows the cumulative
/// separation `U[k] = sum(u[..=k])` as `z[k] = z0 + a * U[k] + noise`, so `a`
/// is the slope of a straight-line fit of delivered measurements against
/// `U`. Lost packets still advance `U`.
pub fn calibrate_a(rows: &[CalibrationRow]) -> Result<Calibration, CalibrationError> {
    if rows.is_empty() {
        return Err(CalibrationError::Empty);
    }
    let mut pts = Vec::new();
    let mut cum = 0.0;
    for row in rows {
        cum += row.separation_rate;
        if let Some(z) = row.quality {
            pts.push((cum, z));
        }
    }
    if pts.len() < 2 {
        return Err(CalibrationError::Degenerate);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    if sxx < 1e-12 {
        return Err(CalibrationError::Degenerate);
    }
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let a = sxy / sxx;
    let sse: f64 = pts.iter().map(|(x, y)| (y - my - a * (x - mx)).powi(2)).sum();
    Ok(Calibration {
        a,
        residual_rms: (sse / n).sqrt(),
        samples: pts.len(),
    })
}

/// Parses a separation log: CSV with header `tick,separation_rate,quality`;
/// an empty quality field marks a lost packet.
pub fn parse_calibration_log(text: &str) -> Result<Vec<CalibrationRow>, CalibrationError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(CalibrationError::Empty)?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let idx = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| CalibrationError::Malformed {
                line: 1,
                message: format!("missing column `{name}`"),
            })
    };
    let (it, iu, iq) = (idx("tick")?, idx("separation_rate")?, idx("quality")?);
    let mut rows = Vec::new();
    for (n, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |message: String| CalibrationError::Malformed {
            line: n + 1,
            message,
        };
        let get = |i: usize| f.get(i).copied().ok_or_else(|| bad(format!("missing field {}", i + 1)));
        let tick = get(it)?
            .parse()
            .map_err(|e| bad(format!("tick: {e}")))?;
        let separation_rate = get(iu)?
            .parse()
            .map_err(|e| bad(format!("separation_rate: {e}")))?;
        let q = get(iq)?;
        let quality = if q.is_empty() {
            None
        } else {
            Some(q.parse().map_err(|e| bad(format!("quality: {e}")))?)
        };
        rows.push(CalibrationRow {
            tick,
            separation_rate,
            quality,
        });
    }
    if rows.is_empty() {
        return Err(CalibrationError::Empty);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn est(r_hat: f64, p_var: f64) -> LinkEstimate {
        LinkEstimate {
            r_hat,
            p_var,
            last_tick: 0,
        }
    }

    #[test]
    fn predict_without_motion_or_noise_is_identity() {
        let p = KalmanParams { q: 0.0, ..KalmanParams::default() };
        let e = est(-12.0, 0.7);
        assert_eq!(e.predict(0.0, &p), e);
    }

    #[test]
    fn predict_example() {
        let p = KalmanParams { a: -0.5, q: 0.05, r: 3.0 };
        let e = est(-30.0, 1.0).predict(2.0, &p);
        assert_abs_diff_eq!(e.r_hat, -31.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.p_var, 1.05, epsilon = 1e-12);
        // closing speed raises the prediction
        let e = est(-30.0, 1.0).predict(-2.0, &p);
        assert_abs_diff_eq!(e.r_hat, -29.0, epsilon = 1e-12);
    }

    #[test]
    fn correct_example() {
        let p = KalmanParams { a: 0.0, q: 0.0, r: 1.0 };
        let e = est(0.0, 1.0);
        assert_abs_diff_eq!(e.gain(&p), 0.5);
        let c = e.correct(2.0, &p);
        assert_abs_diff_eq!(c.r_hat, 1.0);
        assert_abs_diff_eq!(c.p_var, 0.5);
    }

    #[test]
    fn huge_measurement_noise_ignores_measurement() {
        let p = KalmanParams { a: 0.0, q: 0.0, r: 1e9 };
        let c = est(-5.0, 1.0).correct(100.0, &p);
        assert!((c.r_hat + 5.0).abs() < 1e-6);
    }

    #[test]
    fn zero_innovation_still_shrinks_variance() {
        let p = KalmanParams::default();
        let e = est(-5.0, 2.0);
        let k = e.gain(&p);
        let c = e.correct(-5.0, &p);
        assert_eq!(c.r_hat, -5.0);
        assert_abs_diff_eq!(c.p_var, (1.0 - k) * 2.0, epsilon = 1e-12);
        assert!(k > 0.0 && k < 1.0);
    }

    #[test]
    fn missed_packets_only_grow_variance() {
        let p = KalmanParams { q: 0.05, ..KalmanParams::default() };
        let mut e = est(-8.0, 0.4);
        for t in 1..=5 {
            e = e.step(0.0, None, t, &p);
        }
        assert_eq!(e.r_hat, -8.0);
        assert_abs_diff_eq!(e.p_var, 0.65, epsilon = 1e-12);
        assert_eq!(e.last_tick, 5);
    }

    #[test]
    fn step_with_measurement_is_predict_then_correct() {
        let p = KalmanParams::default();
        let e = est(-8.0, 0.4);
        let s = e.step(0.3, Some(-9.0), 1, &p);
        let manual = e.predict(0.3, &p).correct(-9.0, &p);
        assert_eq!(s.r_hat, manual.r_hat);
        assert_eq!(s.p_var, manual.p_var);
    }

    #[test]
    fn variance_decreases_without_process_noise() {
        let p = KalmanParams { q: 0.0, ..KalmanParams::default() };
        let mut e = est(0.0, 3.0);
        for t in 0..200 {
            let next = e.step(0.0, Some(0.0), t, &p);
            assert!(next.p_var < e.p_var);
            e = next;
        }
        assert!(e.p_var < 0.02);
    }

    #[test]
    fn validation() {
        assert!(KalmanParams::default().validate().is_ok());
        assert!(KalmanParams { r: 0.0, ..Default::default() }.validate().is_err());
        assert!(KalmanParams { q: -1.0, ..Default::default() }.validate().is_err());
    }

    fn synthetic(a_true: f64, u: f64, n: usize) -> Vec<CalibrationRow> {
        (0..n)
            .map(|k| CalibrationRow {
                tick: k as u64,
                separation_rate: u,
                quality: Some(-5.0 + a_true * u * k as f64),
            })
            .collect()
    }

    #[test]
    fn calibration_recovers_exact_gain() {
        let fit = calibrate_a(&synthetic(-0.5, 0.8, 300)).unwrap();
        assert_abs_diff_eq!(fit.a, -0.5, epsilon = 1e-6);
        assert!(fit.residual_rms < 1e-9);
    }

    #[test]
    fn calibration_bridges_lost_packets() {
        let mut rows = synthetic(-0.5, 0.8, 300);
        for r in rows.iter_mut().skip(3).step_by(4) {
            r.quality = None;
        }
        let fit = calibrate_a(&rows).unwrap();
        assert_abs_diff_eq!(fit.a, -0.5, epsilon = 1e-6);
    }

    #[test]
    fn stationary_log_is_degenerate() {
        let rows = synthetic(-0.5, 0.0, 100);
        assert_eq!(calibrate_a(&rows), Err(CalibrationError::Degenerate));
        assert_eq!(calibrate_a(&[]), Err(CalibrationError::Empty));
    }

    #[test]
    fn parse_log() {
        let rows = parse_calibration_log("tick,separation_rate,quality\n0,0.5,-3.0\n1,0.5,\n2,0.5,-3.5\n").unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].quality, None);
        let err = parse_calibration_log("tick,separation_rate,quality\n0,x,1\n").unwrap_err();
        assert!(matches!(err, CalibrationError::Malformed { line: 2, .. }));
        assert!(parse_calibration_log("tick,quality\n").is_err());
    }
}
