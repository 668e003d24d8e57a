//! Exhaustive maximin placement on an abscissa grid.
//!
//! Finds relay abscissae between a fixed base (0) and a fixed head that
//! maximize the weakest noiseless link. The search is exact over the grid:
//! a max-min dynamic program over "best chain of j links ending at grid
//! point k" visits every ordered placement implicitly. Among all optimal
//! placements the one with the smallest strongest link is returned, which
//! makes the answer the most equal one.

use crate::error::OracleError;
use crate::geometry::Environment;
use crate::radio::{true_quality, RadioParams};

pub const GRID_RESOLUTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// Chain abscissae, head first, base (0) last.
    pub positions: Vec<f64>,
    /// Link qualities, head side first.
    pub link_qualities: Vec<f64>,
    /// The optimal weakest-link quality.
    pub value: f64,
    pub resolution: f64,
}

impl OracleSolution {
    pub fn spread(&self) -> f64 {
        let max = self.link_qualities.iter().copied().fold(f64::MIN, f64::max);
        max - self.value
    }
}

/// Dense table of noiseless qualities between grid points.
struct QualityTable {
    k: usize,
    q: Vec<f64>,
}

impl QualityTable {
    fn build(env: &Environment, radio: &RadioParams, k: usize, res: f64) -> Self {
        let pts: Vec<_> = (0..=k)
            .map(|i| env.centerline.point_at(i as f64 * res))
            .collect();
        let mut q = vec![f64::NEG_INFINITY; (k + 1) * (k + 1)];
        for a in 0..=k {
            for b in a + 1..=k {
                q[a * (k + 1) + b] = true_quality(env, pts[a], pts[b], radio);
            }
        }
        Self { k, q }
    }

    fn get(&self, a: usize, b: usize) -> f64 {
        self.q[a * (self.k + 1) + b]
    }
}

/// Optimal placement of `links - 1` relays with the head at `head_abscissa`.
pub fn maximin_oracle(
    env: &Environment,
    radio: &RadioParams,
    head_abscissa: f64,
    links: usize,
) -> Result<OracleSolution, OracleError> {
    maximin_oracle_with_resolution(env, radio, head_abscissa, links, GRID_RESOLUTION)
}

pub fn maximin_oracle_with_resolution(
    env: &Environment,
    radio: &RadioParams,
    head_abscissa: f64,
    links: usize,
    resolution: f64,
) -> Result<OracleSolution, OracleError> {
    if links < 2 {
        return Err(OracleError::TooFewLinks(links));
    }
    let k = (head_abscissa / resolution).round() as usize;
    if k < links {
        return Err(OracleError::Infeasible {
            head: head_abscissa,
            relays: links - 1,
            resolution,
        });
    }
    let table = QualityTable::build(env, radio, k, resolution);

    // best[j][p]: max over chains of j links from the base (grid 0) to p of
    // their weakest link.
    let ninf = f64::NEG_INFINITY;
    let mut best = vec![vec![ninf; k + 1]; links + 1];
    for p in 1..=k {
        best[1][p] = table.get(0, p);
    }
    for j in 2..=links {
        for p in j..=k {
            let mut v = ninf;
            for m in j - 1..p {
                v = v.max(best[j - 1][m].min(table.get(m, p)));
            }
            best[j][p] = v;
        }
    }
    let value = best[links][k];

    // Second pass: among chains whose every link is >= value, minimize the
    // strongest link, and keep back-pointers.
    let inf = f64::INFINITY;
    let ok = |a: usize, b: usize| table.get(a, b) >= value;
    let mut top = vec![vec![inf; k + 1]; links + 1];
    let mut from = vec![vec![usize::MAX; k + 1]; links + 1];
    for p in 1..=k {
        if ok(0, p) {
            top[1][p] = table.get(0, p);
            from[1][p] = 0;
        }
    }
    for j in 2..=links {
        for p in j..=k {
            for m in j - 1..p {
                if top[j - 1][m].is_finite() && ok(m, p) {
                    let v = top[j - 1][m].max(table.get(m, p));
                    if v < top[j][p] {
                        top[j][p] = v;
                        from[j][p] = m;
                    }
                }
            }
        }
    }
    let mut idx = vec![k];
    let mut p = k;
    for j in (1..=links).rev() {
        p = from[j][p];
        idx.push(p);
    }
    debug_assert_eq!(*idx.last().unwrap(), 0);
    let positions: Vec<f64> = idx.iter().map(|&i| i as f64 * resolution).collect();
    let link_qualities = idx.windows(2).map(|w| table.get(w[1], w[0])).collect();
    Ok(OracleSolution {
        positions,
        link_qualities,
        value,
        resolution,
    })
}
