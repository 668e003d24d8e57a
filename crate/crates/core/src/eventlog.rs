//! Reading back the per-tick CSV event log.

use std::collections::BTreeMap;

use crate::agent::DECISION_DT;
use crate::engine::CSV_HEADER;
use crate::error::CalibrationError;
use crate::estimator::CalibrationRow;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub tick: u64,
    pub time_s: f64,
    pub agent_id: usize,
    pub mode: String,
    pub x_abscissa: f64,
    pub y_offset: f64,
    pub link_id: Option<String>,
    pub true_q: Option<f64>,
    pub raw_q: Option<f64>,
    pub filtered_q: Option<f64>,
    pub velocity: Option<f64>,
    pub event: Option<String>,
}

impl LogRow {
    pub fn is_event(&self) -> bool {
        self.event.is_some()
    }
}

pub fn is_event_log(text: &str) -> bool {
    text.lines().next().map(str::trim) == Some(CSV_HEADER)
}

pub fn parse_event_log(text: &str) -> Result<Vec<LogRow>, CalibrationError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        Some(_) => {
            return Err(CalibrationError::Malformed {
                line: 1,
                message: format!("expected header `{CSV_HEADER}`"),
            })
        }
        None => return Err(CalibrationError::Empty),
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| CalibrationError::Malformed { line: n + 1, message };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(bad(format!("expected 12 fields, found {}", f.len())));
        }
        let num = |i: usize, name: &str| -> Result<f64, CalibrationError> {
            f[i].parse().map_err(|e| bad(format!("{name}: {e}")))
        };
        let opt = |i: usize, name: &str| -> Result<Option<f64>, CalibrationError> {
            if f[i].is_empty() {
                Ok(None)
            } else {
                num(i, name).map(Some)
            }
        };
        let text = |i: usize| (!f[i].is_empty()).then(|| f[i].to_string());
        rows.push(LogRow {
            tick: f[0].parse().map_err(|e| bad(format!("tick: {e}")))?,
            time_s: num(1, "time_s")?,
            agent_id: f[2].parse().map_err(|e| bad(format!("agent_id: {e}")))?,
            mode: f[3].to_string(),
            x_abscissa: num(4, "x_abscissa")?,
            y_offset: num(5, "y_offset")?,
            link_id: text(6),
            true_q: opt(7, "true_q")?,
            raw_q: opt(8, "raw_q")?,
            filtered_q: opt(9, "filtered_q")?,
            velocity: opt(10, "velocity")?,
            event: text(11),
        });
    }
    if rows.is_empty() {
        return Err(CalibrationError::Empty);
    }
    Ok(rows)
}

/// Separation-rate / quality rows for one link (`"h-b"`, default: the first
/// link in the log). A packet at tick `k` is measured from the positions
/// logged at `k - 1`, so the rate is the separation change up to there.
pub fn calibration_rows(rows: &[LogRow], link: Option<&str>) -> Result<Vec<CalibrationRow>, CalibrationError> {
    let link = match link {
        Some(l) => l.to_string(),
        None => rows
            .iter()
            .find_map(|r| r.link_id.clone())
            .ok_or(CalibrationError::Empty)?,
    };
    let (h, b) = link
        .split_once('-')
        .and_then(|(h, b)| Some((h.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
        .ok_or_else(|| CalibrationError::Malformed {
            line: 0,
            message: format!("bad link id `{link}`"),
        })?;

    // tick -> (head-side abscissa, base-side abscissa, raw quality)
    let mut ticks: BTreeMap<u64, (Option<f64>, Option<f64>, Option<f64>, bool)> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.is_event()) {
        let e = ticks.entry(r.tick).or_default();
        if r.agent_id == h && r.link_id.as_deref() == Some(link.as_str()) {
            e.0 = Some(r.x_abscissa);
            e.2 = r.raw_q;
            e.3 = true;
        } else if r.agent_id == b {
            e.1 = Some(r.x_abscissa);
        }
    }
    let sep: Vec<(u64, Option<f64>, Option<f64>, bool)> = ticks
        .into_iter()
        .map(|(t, (xh, xb, q, on))| (t, xh.zip(xb).map(|(a, b)| a - b), q, on))
        .collect();
    let mut out = Vec::new();
    for w in sep.windows(3) {
        let (t, _, q, on) = w[2];
        if !on {
            continue;
        }
        let (Some(s1), Some(s0)) = (w[1].1, w[0].1) else { continue };
        if w[1].0 + 1 != t || w[0].0 + 2 != t {
            continue;
        }
        out.push(CalibrationRow {
            tick: t,
            separation_rate: (s1 - s0) / DECISION_DT,
            quality: q,
        });
    }
    if out.is_empty() {
        return Err(CalibrationError::Empty);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run_scenario;
    use crate::scenario::{ScenarioConfig, Variant};

    #[test]
    fn round_trips_a_run_log() {
        let cfg = ScenarioConfig::bundled("fig3_variants").unwrap();
        let out = run_scenario(&cfg, Variant::K, 3).unwrap();
        let rows = parse_event_log(&out.event_log).unwrap();
        let last = rows.iter().map(|r| r.tick).max().unwrap();
        assert_eq!(last, 600);
        assert!(rows.iter().any(|r| r.event.as_deref().is_some_and(|e| e.starts_with("launch:"))));
        let cal = calibration_rows(&rows, None).unwrap();
        // head to base is the first link, until the first launch
        assert!(cal.len() > 50, "{}", cal.len());
        assert!(cal.iter().all(|r| r.tick >= 2));
    }

    #[test]
    fn rejects_foreign_csv() {
        assert!(parse_event_log("a,b\n1,2\n").is_err());
        assert!(!is_event_log("tick,separation_rate,quality\n"));
    }
}
