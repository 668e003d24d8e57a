//! Per-UAV control: link equalization, corridor centering and the
//! launch/retreat mode machine.
//!
//! Chain indices run from the head (0) to the base (n). "Base side" is the
//! neighbor with the next higher index, "head side" the next lower one.
//! Positive forward velocity points toward the head.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::ParamError;
use crate::estimator::LinkEstimate;
use crate::geometry::{Pose, RangeReadings, SENSOR_CONE};

/// Decision period, seconds.
pub const DECISION_DT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentMode {
    Base,
    Idle,
    TakingOff,
    Relaying,
    Retreating,
    Head,
}

impl AgentMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AgentMode::Base => "base",
            AgentMode::Idle => "idle",
            AgentMode::TakingOff => "taking_off",
            AgentMode::Relaying => "relaying",
            AgentMode::Retreating => "retreating",
            AgentMode::Head => "head",
        }
    }

    /// Part of the radio chain (linked to neighbors).
    pub fn in_chain(&self) -> bool {
        !matches!(self, AgentMode::Idle | AgentMode::TakingOff)
    }

    pub fn is_relay(&self) -> bool {
        matches!(self, AgentMode::Relaying | AgentMode::Retreating)
    }
}

impl fmt::Display for AgentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyParams {
    /// Tolerance band on the link difference, quality units.
    pub tolerance: f64,
    pub v_max: f64,
    /// Speed per unit of link difference, (m/s) per quality unit.
    pub k_v: f64,
    /// Centering (lateral) gain, 1/s.
    pub c_t: f64,
    /// Yaw gain, rad/(m s).
    pub c_r: f64,
    /// Wall-following distance, as read by a diagonal sensor, meters.
    pub wall_distance: f64,
    pub invalid_wall_ratio: f64,
    pub s_min: f64,
    pub launch_margin: f64,
    /// Missed decision ticks before a link counts as lost.
    pub link_timeout_ticks: u32,
    /// Decision ticks from launch until a relay is airborne.
    pub takeoff_ticks: u32,
}

/// What a diagonal cone reads 1 m from a parallel wall when aligned with
/// it: the outer edge ray hits first.
pub fn centered_wall_reading() -> f64 {
    1.0 / (std::f64::consts::FRAC_PI_4 + SENSOR_CONE / 2.0).sin()
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            tolerance: 0.5,
            v_max: 0.5,
            k_v: 0.05,
            c_t: 0.5,
            c_r: 1.5,
            wall_distance: centered_wall_reading(),
            invalid_wall_ratio: 0.4,
            s_min: -18.0,
            launch_margin: 5.0,
            link_timeout_ticks: 10,
            takeoff_ticks: 5,
        }
    }
}

impl PolicyParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let check = |ok: bool, name: &'static str, why: &str| {
            if ok {
                Ok(())
            } else {
                Err(ParamError::invalid(name, why.to_string()))
            }
        };
        check(self.tolerance >= 0.0, "policy.tolerance", "must be >= 0")?;
        check(self.v_max > 0.0, "policy.v_max", "must be > 0")?;
        check(self.k_v > 0.0, "policy.k_v", "must be > 0")?;
        check(self.c_t > 0.0 && self.c_r > 0.0, "policy.c_t/c_r", "gains must be > 0")?;
        check(
            self.wall_distance > 0.0 && self.wall_distance < 2.0,
            "policy.wall_distance",
            "must be in (0, 2)",
        )?;
        check(
            self.invalid_wall_ratio > 0.0 && self.invalid_wall_ratio < 1.0,
            "policy.invalid_wall_ratio",
            "must be in (0, 1)",
        )?;
        check(self.launch_margin >= 0.0, "policy.launch_margin", "must be >= 0")?;
        check(self.link_timeout_ticks > 0, "policy.link_timeout_ticks", "must be > 0")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainDecision {
    pub forward_velocity: f64,
    pub r_diff: f64,
    pub acted: bool,
}

/// Speed law: proportional to the link difference, capped at `v_max`.
pub fn speed(r_b: f64, r_f: f64, params: &PolicyParams) -> f64 {
    (params.k_v * (r_b - r_f).abs()).min(params.v_max)
}

/// Moves toward the neighbor on the weaker link, or holds when the two
/// links agree within the tolerance.
pub fn decide_motion(r_b: f64, r_f: f64, params: &PolicyParams) -> ChainDecision {
    let r_diff = r_b - r_f;
    let v = speed(r_b, r_f, params);
    let forward_velocity = if r_diff > params.tolerance {
        v
    } else if r_diff < -params.tolerance {
        -v
    } else {
        0.0
    };
    ChainDecision {
        forward_velocity,
        r_diff,
        acted: forward_velocity != 0.0,
    }
}

/// Displacement that degrades a link of quality `quality` by `s_d / 3`
/// under the log-distance model with attenuation `alpha`.
pub fn epsilon_bound(s_d: f64, quality: f64, alpha: f64) -> Result<f64, ParamError> {
    if !(alpha > 0.0) {
        return Err(ParamError::invalid("alpha", format!("must be > 0, got {alpha}")));
    }
    let d_hat = 10f64.powf(-quality / (10.0 * alpha));
    Ok(d_hat * (10f64.powf(s_d / (30.0 * alpha)) - 1.0))
}

/// Lateral velocity (positive left) and yaw rate (positive counter-clockwise).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NavCommand {
    pub lateral: f64,
    pub yaw_rate: f64,
}

/// Two-wall centering.
pub fn centering_command(r: &RangeReadings, params: &PolicyParams) -> NavCommand {
    NavCommand {
        lateral: params.c_t * (r.d_nw - r.d_ne),
        yaw_rate: params.c_r * (r.d_nw - r.d_sw) + params.c_r * (r.d_se - r.d_ne),
    }
}

fn side_valid(front: f64, rear: f64, ratio: f64) -> bool {
    if RangeReadings::is_max(front) || RangeReadings::is_max(rear) {
        return false;
    }
    let m = front.min(rear);
    m > 0.0 && (front - rear).abs() / m <= ratio
}

/// (left valid, right valid).
pub fn wall_validity(r: &RangeReadings, params: &PolicyParams) -> (bool, bool) {
    (
        side_valid(r.d_nw, r.d_sw, params.invalid_wall_ratio),
        side_valid(r.d_ne, r.d_se, params.invalid_wall_ratio),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Follows one wall at the preset distance.
pub fn wall_follow_command(r: &RangeReadings, side: Side, params: &PolicyParams) -> NavCommand {
    match side {
        Side::Left => NavCommand {
            lateral: params.c_t * (r.d_nw - params.wall_distance),
            yaw_rate: 2.0 * params.c_r * (r.d_nw - r.d_sw),
        },
        Side::Right => NavCommand {
            lateral: params.c_t * (params.wall_distance - r.d_ne),
            yaw_rate: 2.0 * params.c_r * (r.d_se - r.d_ne),
        },
    }
}

/// No usable wall: slide and turn toward the more open front diagonal.
/// Zero in open space, where both front readings are at max range.
pub fn open_side_command(r: &RangeReadings, params: &PolicyParams) -> NavCommand {
    let gap = r.d_nw - r.d_ne;
    NavCommand {
        lateral: params.c_t * gap,
        yaw_rate: 2.0 * params.c_r * gap,
    }
}

/// Picks centering, single-wall following, or straight flight from the
/// validity of each side.
pub fn navigation_command(r: &RangeReadings, params: &PolicyParams) -> NavCommand {
    match wall_validity(r, params) {
        (true, true) => centering_command(r, params),
        (true, false) => wall_follow_command(r, Side::Left, params),
        (false, true) => wall_follow_command(r, Side::Right, params),
        (false, false) => open_side_command(r, params),
    }
}

/// Navigation for the current direction of travel. Backing up runs the
/// same controller in the frame turned by half a turn: the rear diagonals
/// become the front ones and left swaps with right.
pub fn directed_navigation_command(r: &RangeReadings, forward: f64, params: &PolicyParams) -> NavCommand {
    if forward >= 0.0 {
        return navigation_command(r, params);
    }
    let rev = RangeReadings::new(r.d_se, r.d_sw, r.d_ne, r.d_nw);
    let c = navigation_command(&rev, params);
    NavCommand {
        lateral: -c.lateral,
        yaw_rate: c.yaw_rate,
    }
}

/// Health of the link toward the base-side neighbor. `missed_ticks` counts
/// decision ticks since the last delivered packet (or since joining).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UplinkStatus {
    pub filtered: Option<f64>,
    pub missed_ticks: u32,
}

impl UplinkStatus {
    pub fn lost(&self, params: &PolicyParams) -> bool {
        self.missed_ticks >= params.link_timeout_ticks
    }

    pub fn weak(&self, params: &PolicyParams) -> bool {
        self.lost(params) || self.filtered.is_some_and(|q| q < params.s_min)
    }

    pub fn recovered(&self, params: &PolicyParams) -> bool {
        !self.lost(params)
            && self
                .filtered
                .is_some_and(|q| q >= params.s_min + params.launch_margin)
    }
}

/// What the mode machine sees on one decision tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionInput {
    pub launch_commanded: bool,
    /// Ticks spent in `TakingOff` so far.
    pub takeoff_elapsed: u32,
    pub uplink: UplinkStatus,
}

pub fn transition(mode: AgentMode, input: &TransitionInput, params: &PolicyParams) -> AgentMode {
    match mode {
        AgentMode::Idle if input.launch_commanded => AgentMode::TakingOff,
        AgentMode::TakingOff if input.takeoff_elapsed >= params.takeoff_ticks => AgentMode::Relaying,
        AgentMode::Relaying if input.uplink.weak(params) => AgentMode::Retreating,
        AgentMode::Retreating if input.uplink.recovered(params) => AgentMode::Relaying,
        m => m,
    }
}

/// The head's velocity given the pilot's request: forward motion is
/// suppressed while the uplink is weak, and the head backs off toward the
/// base once the uplink is lost.
pub fn head_velocity(pilot: f64, uplink: &UplinkStatus, params: &PolicyParams) -> f64 {
    if uplink.lost(params) {
        -pilot.abs().max(0.2).min(params.v_max)
    } else if uplink.weak(params) {
        pilot.min(0.0)
    } else {
        pilot
    }
}

/// Velocity of a relay in the given mode.
pub fn relay_velocity(
    mode: AgentMode,
    r_b: Option<f64>,
    r_f: Option<f64>,
    params: &PolicyParams,
) -> ChainDecision {
    match (mode, r_b, r_f) {
        (AgentMode::Retreating, _, _) => ChainDecision {
            forward_velocity: -params.v_max,
            r_diff: r_b.zip(r_f).map_or(0.0, |(b, f)| b - f),
            acted: true,
        },
        (AgentMode::Relaying, Some(b), Some(f)) => decide_motion(b, f, params),
        _ => ChainDecision {
            forward_velocity: 0.0,
            r_diff: 0.0,
            acted: false,
        },
    }
}

/// One synchronous round of the equalization rule over a whole chain of
/// abscissae (index 0 = head, last = base; both ends fixed), using the
/// noiseless link quality `quality(near, far)`.
pub fn synchronous_round<F>(positions: &[f64], quality: F, params: &PolicyParams, dt: f64) -> Vec<f64>
where
    F: Fn(f64, f64) -> f64,
{
    let n = positions.len();
    let mut next = positions.to_vec();
    for i in 1..n.saturating_sub(1) {
        let r_f = quality(positions[i], positions[i - 1]);
        let r_b = quality(positions[i + 1], positions[i]);
        next[i] += decide_motion(r_b, r_f, params).forward_velocity * dt;
    }
    next
}

/// Runtime state of one UAV.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: usize,
    pub mode: AgentMode,
    pub pose: Pose,
    pub abscissa: f64,
    /// Abscissa rate over the last decision tick (optic-flow ground speed).
    pub ground_speed: f64,
    /// Commanded forward velocity for the current tick.
    pub forward_velocity: f64,
    pub nav: NavCommand,
    pub r_diff: f64,
    pub base_link: Option<LinkEstimate>,
    pub head_link: Option<LinkEstimate>,
    pub base_raw: Option<f64>,
    pub head_raw: Option<f64>,
    pub base_missed: u32,
    pub head_missed: u32,
    pub takeoff_elapsed: u32,
}

impl AgentState {
    pub fn new(id: usize, mode: AgentMode, pose: Pose, abscissa: f64) -> Self {
        Self {
            id,
            mode,
            pose,
            abscissa,
            ground_speed: 0.0,
            forward_velocity: 0.0,
            nav: NavCommand::default(),
            r_diff: 0.0,
            base_link: None,
            head_link: None,
            base_raw: None,
            head_raw: None,
            base_missed: 0,
            head_missed: 0,
            takeoff_elapsed: 0,
        }
    }

    pub fn uplink(&self) -> UplinkStatus {
        UplinkStatus {
            filtered: self.base_link.map(|e| e.r_hat),
            missed_ticks: self.base_missed,
        }
    }

    /// Forgets both link histories (neighbors changed).
    pub fn reset_links(&mut self) {
        self.base_link = None;
        self.head_link = None;
        self.base_raw = None;
        self.head_raw = None;
        self.base_missed = 0;
        self.head_missed = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p() -> PolicyParams {
        PolicyParams::default()
    }

    #[test]
    fn equal_links_hold() {
        let d = decide_motion(-7.0, -7.0, &p());
        assert_eq!(d.forward_velocity, 0.0);
        assert!(!d.acted);
    }

    #[test]
    fn tolerance_band_holds() {
        let params = PolicyParams { tolerance: 5.0, ..p() };
        let d = decide_motion(-10.0, -6.0, &params);
        assert_eq!(d.forward_velocity, 0.0);
        assert_eq!(d.r_diff, -4.0);
    }

    #[test]
    fn linear_signal_step_moves_exactly_a_third() {
        // s = -distance; head side link -6, base side link -12
        let dt = DECISION_DT;
        let params = PolicyParams {
            tolerance: 0.0,
            k_v: 1.0 / (3.0 * dt),
            v_max: f64::INFINITY,
            ..p()
        };
        let (head, me, base) = (18.0, 12.0, 0.0);
        let d = decide_motion(-(me - base), -(head - me), &params);
        assert!(d.forward_velocity < 0.0, "moves toward the base");
        let me2 = me + d.forward_velocity * dt;
        assert_abs_diff_eq!(-(head - me2), -8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(-(me2 - base), -10.0, epsilon = 1e-12);
    }

    #[test]
    fn speed_is_capped() {
        let d = decide_motion(0.0, -100.0, &p());
        assert_eq!(d.forward_velocity, p().v_max);
    }

    #[test]
    fn epsilon_examples() {
        assert_eq!(epsilon_bound(0.0, -20.0, 2.0).unwrap(), 0.0);
        let e = epsilon_bound(6.0, -20.0, 2.0).unwrap();
        assert_abs_diff_eq!(e, 10.0 * (10f64.powf(0.1) - 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(e, 2.589, epsilon = 1e-3);
        assert!(epsilon_bound(6.0, -20.0, 4.0).unwrap() < e);
        assert!(epsilon_bound(1.0, -20.0, 0.0).is_err());
    }

    #[test]
    fn centering_examples() {
        let params = PolicyParams { c_t: 1.0, c_r: 1.0, ..p() };
        let sym = RangeReadings::new(1.2, 1.2, 1.2, 1.2);
        assert_eq!(centering_command(&sym, &params), NavCommand::default());
        let r = RangeReadings::new(1.0, 0.6, 1.0, 0.6);
        let c = centering_command(&r, &params);
        assert_abs_diff_eq!(c.lateral, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(c.yaw_rate, 0.0, epsilon = 1e-12);
        let r = RangeReadings::new(1.0, 1.1, 0.8, 1.1);
        let c = centering_command(&r, &PolicyParams { c_r: 0.7, ..params });
        assert_abs_diff_eq!(c.yaw_rate, 0.2 * 0.7, epsilon = 1e-12);
    }

    #[test]
    fn wall_validity_examples() {
        let r = RangeReadings::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(wall_validity(&r, &p()), (true, true));
        let r = RangeReadings::new(2.0, 1.0, 0.9, 1.0);
        assert_eq!(wall_validity(&r, &p()), (false, true));
        let r = RangeReadings::new(1.0, 1.0, 0.65, 1.0);
        assert!((1.0f64 - 0.65).abs() / 0.65 > 0.4);
        assert_eq!(wall_validity(&r, &p()), (false, true));
        // right side mirrors
        let r = RangeReadings::new(1.0, 0.65, 1.0, 1.0);
        assert_eq!(wall_validity(&r, &p()), (true, false));
    }

    #[test]
    fn wall_follow_examples() {
        let params = PolicyParams { c_t: 1.0, c_r: 1.0, wall_distance: 1.0, ..p() };
        let r = RangeReadings::new(1.0, 2.0, 1.0, 2.0);
        let c = wall_follow_command(&r, Side::Left, &params);
        assert_eq!(c.lateral, 0.0);
        assert_eq!(c.yaw_rate, 0.0);
        let r = RangeReadings::new(1.3, 2.0, 1.3, 2.0);
        assert_abs_diff_eq!(wall_follow_command(&r, Side::Left, &params).lateral, 0.3, epsilon = 1e-12);
        let r = RangeReadings::new(2.0, 1.3, 2.0, 1.3);
        assert_abs_diff_eq!(wall_follow_command(&r, Side::Right, &params).lateral, -0.3, epsilon = 1e-12);
        // navigation dispatch
        assert_eq!(
            navigation_command(&RangeReadings::new(2.0, 1.3, 2.0, 1.3), &params),
            wall_follow_command(&RangeReadings::new(2.0, 1.3, 2.0, 1.3), Side::Right, &params)
        );
        assert_eq!(
            navigation_command(&RangeReadings::new(2.0, 2.0, 2.0, 2.0), &params),
            NavCommand::default()
        );
    }

    fn healthy(q: f64) -> TransitionInput {
        TransitionInput {
            launch_commanded: false,
            takeoff_elapsed: 0,
            uplink: UplinkStatus { filtered: Some(q), missed_ticks: 0 },
        }
    }

    #[test]
    fn transitions() {
        let params = p();
        for m in [AgentMode::Base, AgentMode::Idle, AgentMode::Relaying, AgentMode::Head] {
            assert_eq!(transition(m, &healthy(-5.0), &params), m);
        }
        let weak = healthy(params.s_min - 0.1);
        assert_eq!(transition(AgentMode::Relaying, &weak, &params), AgentMode::Retreating);
        let d = relay_velocity(AgentMode::Retreating, Some(-20.0), Some(-3.0), &params);
        assert!(d.forward_velocity < 0.0);

        let mut stale = healthy(-5.0);
        stale.uplink.missed_ticks = 10;
        assert_eq!(transition(AgentMode::Relaying, &stale, &params), AgentMode::Retreating);
        stale.uplink.missed_ticks = 9;
        assert_eq!(transition(AgentMode::Relaying, &stale, &params), AgentMode::Relaying);

        // hysteresis on recovery
        let mid = healthy(params.s_min + params.launch_margin / 2.0);
        assert_eq!(transition(AgentMode::Retreating, &mid, &params), AgentMode::Retreating);
        let ok = healthy(params.s_min + params.launch_margin);
        assert_eq!(transition(AgentMode::Retreating, &ok, &params), AgentMode::Relaying);

        let mut launch = healthy(-5.0);
        launch.launch_commanded = true;
        assert_eq!(transition(AgentMode::Idle, &launch, &params), AgentMode::TakingOff);
        let mut up = healthy(-5.0);
        up.takeoff_elapsed = params.takeoff_ticks;
        assert_eq!(transition(AgentMode::TakingOff, &up, &params), AgentMode::Relaying);
        up.takeoff_elapsed = params.takeoff_ticks - 1;
        assert_eq!(transition(AgentMode::TakingOff, &up, &params), AgentMode::TakingOff);
    }

    #[test]
    fn head_clamps_forward_on_weak_uplink() {
        let params = p();
        let ok = UplinkStatus { filtered: Some(-5.0), missed_ticks: 0 };
        assert_eq!(head_velocity(0.2, &ok, &params), 0.2);
        let weak = UplinkStatus { filtered: Some(params.s_min - 1.0), missed_ticks: 0 };
        assert_eq!(head_velocity(0.2, &weak, &params), 0.0);
        assert_eq!(head_velocity(-0.2, &weak, &params), -0.2);
        let lost = UplinkStatus { filtered: Some(-5.0), missed_ticks: 10 };
        assert!(head_velocity(0.2, &lost, &params) < 0.0);
    }

    #[test]
    fn round_keeps_ends_fixed() {
        let params = PolicyParams { tolerance: 0.0, ..p() };
        let next = synchronous_round(&[30.0, 4.0, 2.0, 0.0], |a, b| -(b - a), &params, DECISION_DT);
        assert_eq!(next[0], 30.0);
        assert_eq!(next[3], 0.0);
        assert!(next[1] > 4.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn antisymmetric(b in -60.0f64..0.0, f in -60.0f64..0.0, t in 0.0f64..6.0) {
                let params = PolicyParams { tolerance: t, ..PolicyParams::default() };
                let x = decide_motion(b, f, &params);
                let y = decide_motion(f, b, &params);
                prop_assert_eq!(x.forward_velocity, -y.forward_velocity);
            }

            #[test]
            fn fixed_point_iff_within_tolerance(b in -60.0f64..0.0, f in -60.0f64..0.0, t in 0.0f64..6.0) {
                let params = PolicyParams { tolerance: t, ..PolicyParams::default() };
                let d = decide_motion(b, f, &params);
                prop_assert_eq!(d.forward_velocity == 0.0, (b - f).abs() <= t);
                prop_assert!(d.forward_velocity.abs() <= params.v_max);
            }
        }
    }
}
