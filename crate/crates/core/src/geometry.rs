//! Planar tunnel environments: wall segments, a centerline parameterized by
//! arc length, diagonal range sensing and line-of-sight obstruction counts.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use crate::error::GeometryError;

/// Maximum range of the time-of-flight sensors, meters.
pub const SENSOR_RANGE: f64 = 2.0;
/// Full opening angle of each sensor cone.
pub const SENSOR_CONE: f64 = 27.0 * PI / 180.0;
/// Length along a wall over which a grazing line of sight ramps from clear to
/// fully obstructed.
pub const SHADOW_RAMP: f64 = 1.0;

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Counter-clockwise quarter turn.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

/// Wraps an angle to (-pi, pi].
/// Orders two points so pairwise queries do not depend on argument order.
fn ordered(a: Vec2, b: Vec2) -> (Vec2, Vec2) {
    if (a.x, a.y) <= (b.x, b.y) {
        (a, b)
    } else {
        (b, a)
    }
}

pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub const fn new(a: Vec2, b: Vec2) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    /// Distance along the ray `origin + t * dir` (unit `dir`) to this segment.
    pub fn ray_hit(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        let e = self.b - self.a;
        let denom = dir.cross(e);
        if denom.abs() < EPS {
            return None;
        }
        let w = self.a - origin;
        let t = w.cross(e) / denom;
        let u = w.cross(dir) / denom;
        (t >= 0.0 && (-EPS..=1.0 + EPS).contains(&u)).then_some(t)
    }

    /// Intersection of the open segment `(p1, p2)` with this (closed) segment.
    /// Returns the parameter along this segment, in [0, 1].
    fn crossing_param(&self, p1: Vec2, p2: Vec2) -> Option<f64> {
        let d = p2 - p1;
        let e = self.b - self.a;
        let denom = d.cross(e);
        let w = self.a - p1;
        if denom.abs() < EPS {
            // Parallel. Collinear overlap counts as a crossing.
            if w.cross(d).abs() > EPS * d.norm().max(1.0) {
                return None;
            }
            let len2 = d.dot(d);
            let ta = (self.a - p1).dot(d) / len2;
            let tb = (self.b - p1).dot(d) / len2;
            let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
            return (hi > 0.0 && lo < 1.0).then_some(0.0);
        }
        let t = w.cross(e) / denom;
        let u = w.cross(d) / denom;
        (t > EPS && t < 1.0 - EPS && (-EPS..=1.0 + EPS).contains(&u)).then_some(u.clamp(0.0, 1.0))
    }

    fn closest_param(&self, p: Vec2) -> f64 {
        let e = self.b - self.a;
        let len2 = e.dot(e);
        if len2 < EPS {
            return 0.0;
        }
        ((p - self.a).dot(e) / len2).clamp(0.0, 1.0)
    }

    pub fn point_at(&self, u: f64) -> Vec2 {
        self.a + (self.b - self.a) * u
    }
}

/// Planar position and heading; heading is kept in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    heading: f64,
}

impl Pose {
    pub fn new(position: Vec2, heading: f64) -> Self {
        Self {
            position,
            heading: wrap_angle(heading),
        }
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn set_heading(&mut self, heading: f64) {
        self.heading = wrap_angle(heading);
    }

    /// Integrates body-frame velocities (forward, left, yaw rate) over `dt`.
    pub fn integrate(&mut self, forward: f64, lateral: f64, yaw_rate: f64, dt: f64) {
        let fwd = Vec2::from_angle(self.heading);
        self.position = self.position + (fwd * forward + fwd.perp() * lateral) * dt;
        self.set_heading(self.heading + yaw_rate * dt);
    }
}

/// The four diagonal range sensors. Values are clamped to the sensor range;
/// a reading at the clamp is flagged as max-range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeReadings {
    pub d_nw: f64,
    pub d_ne: f64,
    pub d_sw: f64,
    pub d_se: f64,
}

impl RangeReadings {
    pub fn new(d_nw: f64, d_ne: f64, d_sw: f64, d_se: f64) -> Self {
        let c = |d: f64| d.clamp(0.0, SENSOR_RANGE);
        Self {
            d_nw: c(d_nw),
            d_ne: c(d_ne),
            d_sw: c(d_sw),
            d_se: c(d_se),
        }
    }

    pub fn is_max(d: f64) -> bool {
        d >= SENSOR_RANGE
    }

    pub fn max_range_flags(&self) -> [bool; 4] {
        [self.d_nw, self.d_ne, self.d_sw, self.d_se].map(Self::is_max)
    }
}

/// Arc-length parameterized polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Centerline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Centerline {
    pub fn new(points: Vec<Vec2>) -> Result<Self, GeometryError> {
        if points.len() < 2 {
            return Err(GeometryError::CenterlineTooShort(points.len()));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += w[0].distance(w[1]);
            cumulative.push(acc);
        }
        if acc <= 0.0 {
            return Err(GeometryError::ZeroLengthCenterline);
        }
        Ok(Self { points, cumulative })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn segments(&self) -> impl Iterator<Item = (Segment, f64)> + '_ {
        self.points
            .windows(2)
            .zip(&self.cumulative)
            .map(|(w, &s0)| (Segment::new(w[0], w[1]), s0))
    }

    /// Closest centerline point: (arc length, lateral distance).
    pub fn project(&self, p: Vec2) -> (f64, f64) {
        let mut best = (0.0, f64::INFINITY);
        for (seg, s0) in self.segments() {
            let u = seg.closest_param(p);
            let d = seg.point_at(u).distance(p);
            if d < best.1 - 1e-9 {
                best = (s0 + u * seg.length(), d);
            }
        }
        best
    }

    /// Point at arc length `s`, clamped to the polyline.
    pub fn point_at(&self, s: f64) -> Vec2 {
        self.frame_at(s).0
    }

    /// Point and unit tangent at arc length `s`.
    pub fn frame_at(&self, s: f64) -> (Vec2, Vec2) {
        let s = s.clamp(0.0, self.length());
        let mut last = None;
        for (seg, s0) in self.segments() {
            let len = seg.length();
            if len <= 0.0 {
                continue;
            }
            let tangent = (seg.b - seg.a) * (1.0 / len);
            if s <= s0 + len {
                return (seg.point_at((s - s0) / len), tangent);
            }
            last = Some((seg.b, tangent));
        }
        last.expect("centerline has positive length")
    }

    /// Tangent heading at arc length `s`.
    pub fn heading_at(&self, s: f64) -> f64 {
        let t = self.frame_at(s).1;
        t.y.atan2(t.x)
    }

    /// Arc lengths of the interior vertices (the corners).
    pub fn corner_abscissae(&self) -> Vec<f64> {
        self.cumulative[1..self.cumulative.len() - 1].to_vec()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub name: String,
    pub walls: Vec<Segment>,
    pub centerline: Centerline,
    pub spawn: Pose,
}

impl Environment {
    pub fn new(
        name: impl Into<String>,
        walls: Vec<Segment>,
        centerline: Vec<Vec2>,
        spawn: Pose,
    ) -> Result<Self, GeometryError> {
        let centerline = Centerline::new(centerline)?;
        if let Some(i) = walls.iter().position(|w| w.length() <= 0.0) {
            return Err(GeometryError::DegenerateWall(i));
        }
        let (_, off) = centerline.project(spawn.position);
        if off >= SENSOR_RANGE {
            return Err(GeometryError::SpawnOffCenterline(off));
        }
        Ok(Self {
            name: name.into(),
            walls,
            centerline,
            spawn,
        })
    }

    pub fn bounding_box(&self) -> (Vec2, Vec2) {
        let pts = self
            .walls
            .iter()
            .flat_map(|w| [w.a, w.b])
            .chain(self.centerline.points().iter().copied());
        pts.fold(
            (
                Vec2::new(f64::INFINITY, f64::INFINITY),
                Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
            ),
            |(lo, hi), p| {
                (
                    Vec2::new(lo.x.min(p.x), lo.y.min(p.y)),
                    Vec2::new(hi.x.max(p.x), hi.y.max(p.y)),
                )
            },
        )
    }

    /// Nearest wall hit along a ray, unclamped.
    pub fn ray_distance(&self, origin: Vec2, direction: f64) -> f64 {
        let dir = Vec2::from_angle(direction);
        self.walls
            .iter()
            .filter_map(|w| w.ray_hit(origin, dir))
            .fold(f64::INFINITY, f64::min)
    }

    /// Minimum distance over three rays fanned across the sensor cone.
    fn cone_distance(&self, origin: Vec2, direction: f64) -> f64 {
        let half = SENSOR_CONE / 2.0;
        [direction - half, direction, direction + half]
            .into_iter()
            .map(|a| self.ray_distance(origin, a))
            .fold(f64::INFINITY, f64::min)
    }

    /// Diagonal range readings at ±45° and ±135° from the heading.
    pub fn raycast_ranges(&self, pose: &Pose) -> RangeReadings {
        let h = pose.heading();
        let q = PI / 4.0;
        let p = pose.position;
        RangeReadings::new(
            self.cone_distance(p, h + q),
            self.cone_distance(p, h - q),
            self.cone_distance(p, h + 3.0 * q),
            self.cone_distance(p, h - 3.0 * q),
        )
    }

    /// Number of walls intersected by the open segment between two points.
    /// Touching a wall endpoint counts.
    pub fn wall_crossings(&self, p1: Vec2, p2: Vec2) -> usize {
        let (p1, p2) = ordered(p1, p2);
        self.walls
            .iter()
            .filter(|w| w.crossing_param(p1, p2).is_some())
            .count()
    }

    /// Crossing count weighted by how far from the wall's nearest endpoint
    /// each crossing lies; a crossing within `SHADOW_RAMP` of an endpoint
    /// counts fractionally. Makes obstruction continuous as a line of sight
    /// sweeps past a corner.
    pub fn obstruction(&self, p1: Vec2, p2: Vec2) -> f64 {
        let (p1, p2) = ordered(p1, p2);
        self.walls
            .iter()
            .filter_map(|w| {
                let u = w.crossing_param(p1, p2)?;
                let len = w.length();
                let from_tip = (u.min(1.0 - u) * len).max(0.0);
                Some((from_tip / SHADOW_RAMP).min(1.0))
            })
            .sum()
    }

    /// Whether the straight path from `p1` to `p2` passes through any wall.
    pub fn blocked(&self, p1: Vec2, p2: Vec2) -> bool {
        if p1.distance(p2) < EPS {
            return false;
        }
        self.wall_crossings(p1, p2) > 0
    }

    /// Curvilinear abscissa of `p`, measured from the start of the centerline.
    pub fn arc_position(&self, p: Vec2) -> Result<f64, GeometryError> {
        let (s, off) = self.centerline.project(p);
        if off > SENSOR_RANGE {
            return Err(GeometryError::OffCenterline { distance: off });
        }
        Ok(s)
    }

    /// Lateral offset from the centerline, positive to the left of travel.
    pub fn lateral_offset(&self, p: Vec2) -> f64 {
        let (s, off) = self.centerline.project(p);
        let (c, t) = self.centerline.frame_at(s);
        if t.cross(p - c) >= 0.0 {
            off
        } else {
            -off
        }
    }

    /// Pose on the centerline at abscissa `s`, heading along the tunnel.
    pub fn pose_at(&self, s: f64) -> Pose {
        let (p, t) = self.centerline.frame_at(s);
        Pose::new(p, t.y.atan2(t.x))
    }

    /// Shortest distance from `p` to any wall.
    pub fn wall_clearance(&self, p: Vec2) -> f64 {
        self.walls
            .iter()
            .map(|w| w.point_at(w.closest_param(p)).distance(p))
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn corridor() -> Environment {
        // 2 m wide, 30 m long, capped at both ends
        let walls = vec![
            Segment::new(Vec2::new(-1.0, -1.0), Vec2::new(31.0, -1.0)),
            Segment::new(Vec2::new(-1.0, 1.0), Vec2::new(31.0, 1.0)),
            Segment::new(Vec2::new(-1.0, -1.0), Vec2::new(-1.0, 1.0)),
            Segment::new(Vec2::new(31.0, -1.0), Vec2::new(31.0, 1.0)),
        ];
        Environment::new(
            "corridor",
            walls,
            vec![Vec2::new(0.0, 0.0), Vec2::new(30.0, 0.0)],
            Pose::new(Vec2::new(1.0, 0.0), 0.0),
        )
        .unwrap()
    }

    #[test]
    fn heading_wraps() {
        let p = Pose::new(Vec2::default(), 3.0 * PI);
        assert_abs_diff_eq!(p.heading(), PI, epsilon = 1e-12);
        let p = Pose::new(Vec2::default(), -PI);
        assert_abs_diff_eq!(p.heading(), PI, epsilon = 1e-12);
    }

    #[test]
    fn centered_readings_are_symmetric() {
        let env = corridor();
        let r = env.raycast_ranges(&Pose::new(Vec2::new(10.0, 0.0), 0.0));
        assert_abs_diff_eq!(r.d_nw, r.d_ne, epsilon = 1e-9);
        assert_abs_diff_eq!(r.d_sw, r.d_se, epsilon = 1e-9);
    }

    #[test]
    fn diagonal_center_ray_hits_at_sqrt2() {
        let env = corridor();
        let d = env.ray_distance(Vec2::new(10.0, 0.0), PI / 4.0);
        assert_abs_diff_eq!(d, 2f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn open_area_reads_max_range() {
        let env = Environment::new(
            "open",
            vec![Segment::new(Vec2::new(100.0, 100.0), Vec2::new(101.0, 100.0))],
            vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0)],
            Pose::default(),
        )
        .unwrap();
        let r = env.raycast_ranges(&Pose::new(Vec2::new(5.0, 0.0), 0.3));
        assert_eq!(r.max_range_flags(), [true; 4]);
        assert_eq!(r.d_nw, SENSOR_RANGE);
    }

    #[test]
    fn crossings_and_symmetry() {
        let mut env = corridor();
        let a = Vec2::new(2.0, 0.0);
        let b = Vec2::new(8.0, 0.3);
        assert_eq!(env.wall_crossings(a, b), 0);
        env.walls
            .push(Segment::new(Vec2::new(5.0, -1.0), Vec2::new(5.0, 1.0)));
        assert_eq!(env.wall_crossings(a, b), 1);
        assert_eq!(env.wall_crossings(b, a), 1);
        // crossing at y = 0.15 on a 2 m wall, 0.85 m from its nearer tip
        assert_abs_diff_eq!(env.obstruction(a, b), 0.85, epsilon = 1e-12);
        assert_eq!(env.obstruction(a, b), env.obstruction(b, a));
    }

    #[test]
    fn touching_endpoint_counts() {
        let env = Environment::new(
            "tip",
            vec![Segment::new(Vec2::new(0.0, 0.0), Vec2::new(0.0, 5.0))],
            vec![Vec2::new(-3.0, -3.0), Vec2::new(3.0, -3.0)],
            Pose::new(Vec2::new(0.0, -3.0), 0.0),
        )
        .unwrap();
        assert_eq!(env.wall_crossings(Vec2::new(-1.0, -1.0), Vec2::new(1.0, 1.0)), 1);
        // grazing the tip carries no obstruction weight
        assert!(env.obstruction(Vec2::new(-1.0, -1.0), Vec2::new(1.0, 1.0)) < 1e-9);
    }

    #[test]
    fn obstruction_ramps_from_tip() {
        let env = Environment::new(
            "tip",
            vec![Segment::new(Vec2::new(0.0, 0.0), Vec2::new(0.0, 5.0))],
            vec![Vec2::new(-3.0, -3.0), Vec2::new(3.0, -3.0)],
            Pose::new(Vec2::new(0.0, -3.0), 0.0),
        )
        .unwrap();
        let w = env.obstruction(Vec2::new(-1.0, 0.5), Vec2::new(1.0, 0.5));
        assert_abs_diff_eq!(w, 0.5, epsilon = 1e-9);
        let w = env.obstruction(Vec2::new(-1.0, 2.5), Vec2::new(1.0, 2.5));
        assert_abs_diff_eq!(w, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn arc_position_on_l_centerline() {
        let env = Environment::new(
            "l",
            vec![],
            vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)],
            Pose::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(env.arc_position(Vec2::new(0.0, 0.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(env.arc_position(Vec2::new(10.0, 0.0)).unwrap(), 10.0);
        assert_abs_diff_eq!(env.arc_position(Vec2::new(10.0, 10.0)).unwrap(), 20.0);
        assert_abs_diff_eq!(env.arc_position(Vec2::new(9.5, 4.0)).unwrap(), 14.0);
    }

    #[test]
    fn arc_position_rejects_far_points() {
        let env = corridor();
        assert!(matches!(
            env.arc_position(Vec2::new(5.0, 2.5)),
            Err(GeometryError::OffCenterline { .. })
        ));
    }

    #[test]
    fn lateral_offset_sign() {
        let env = corridor();
        assert_abs_diff_eq!(env.lateral_offset(Vec2::new(3.0, 0.4)), 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(env.lateral_offset(Vec2::new(3.0, -0.4)), -0.4, epsilon = 1e-12);
    }

    #[test]
    fn invalid_environments() {
        assert!(Centerline::new(vec![Vec2::default()]).is_err());
        assert!(Centerline::new(vec![Vec2::default(), Vec2::default()]).is_err());
        let r = Environment::new(
            "bad",
            vec![Segment::new(Vec2::default(), Vec2::default())],
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)],
            Pose::default(),
        );
        assert!(matches!(r, Err(GeometryError::DegenerateWall(0))));
        let r = Environment::new(
            "bad",
            vec![],
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)],
            Pose::new(Vec2::new(0.0, 5.0), 0.0),
        );
        assert!(matches!(r, Err(GeometryError::SpawnOffCenterline(_))));
    }
}
