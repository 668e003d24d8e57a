//! Log-distance path loss with wall shadowing, and a lossy packet channel.
//!
//! Link quality is the negated RSSI, so larger is better and quality falls
//! off with distance: `s = -10 * alpha * log10(d)`. The attenuation factor
//! `alpha` starts at `alpha_base` for a clear line of sight and rises by one
//! per obstructing wall up to `alpha_max`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::ParamError;
use crate::geometry::{Environment, Vec2};

/// Distances below this are treated as a near-collision and clamped.
pub const MIN_LINK_DISTANCE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    pub alpha_base: f64,
    pub alpha_max: f64,
    /// Variance of the additive Gaussian measurement noise, dB².
    pub noise_variance: f64,
    pub packet_loss_prob: f64,
    /// Packets only get through on links strictly better than this.
    pub s_min: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            alpha_base: 2.0,
            alpha_max: 6.0,
            noise_variance: 3.0,
            packet_loss_prob: 0.2,
            s_min: -18.0,
        }
    }
}

impl RadioParams {
    pub fn noiseless() -> Self {
        Self {
            noise_variance: 0.0,
            packet_loss_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if !(2.0..=6.0).contains(&self.alpha_base)
            || !(self.alpha_base..=6.0).contains(&self.alpha_max)
        {
            return Err(ParamError::invalid(
                "alpha",
                format!(
                    "need 2 <= alpha_base <= alpha_max <= 6, got {} / {}",
                    self.alpha_base, self.alpha_max
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.packet_loss_prob) {
            return Err(ParamError::invalid(
                "packet_loss_prob",
                format!("must be in [0, 1), got {}", self.packet_loss_prob),
            ));
        }
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return Err(ParamError::invalid(
                "noise_variance",
                format!("must be finite and >= 0, got {}", self.noise_variance),
            ));
        }
        if !self.s_min.is_finite() {
            return Err(ParamError::invalid("s_min", "must be finite"));
        }
        Ok(())
    }
}

/// One delivered packet's measured quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioSample {
    pub src: usize,
    pub dst: usize,
    pub quality: f64,
    pub tick: u64,
}

/// Attenuation factor between two points.
pub fn attenuation_factor(env: &Environment, p1: Vec2, p2: Vec2, params: &RadioParams) -> f64 {
    (params.alpha_base + env.obstruction(p1, p2)).min(params.alpha_max)
}

/// Quality for a given attenuation factor and distance, with the
/// near-collision clamp applied.
pub fn quality_at(alpha: f64, distance: f64) -> f64 {
    -10.0 * alpha * distance.max(MIN_LINK_DISTANCE).log10()
}

/// Noiseless link quality.
pub fn true_quality(env: &Environment, p1: Vec2, p2: Vec2, params: &RadioParams) -> f64 {
    let d = p1.distance(p2);
    if d < MIN_LINK_DISTANCE {
        log::debug!("near-collision: link distance {d:.3} m clamped");
    }
    quality_at(attenuation_factor(env, p1, p2, params), d)
}

/// Adds Gaussian noise of the configured variance to a true quality.
pub fn add_noise<R: Rng + ?Sized>(quality: f64, params: &RadioParams, rng: &mut R) -> f64 {
    if params.noise_variance == 0.0 {
        return quality;
    }
    let normal = Normal::new(0.0, params.noise_variance.sqrt()).expect("finite variance");
    quality + normal.sample(rng)
}

/// One noisy quality measurement.
pub fn sample_quality<R: Rng + ?Sized>(
    env: &Environment,
    p1: Vec2,
    p2: Vec2,
    params: &RadioParams,
    rng: &mut R,
) -> f64 {
    add_noise(true_quality(env, p1, p2, params), params, rng)
}

/// Whether a packet on a link of the given quality gets through. Always
/// consumes exactly one draw so the stream stays aligned across gating.
pub fn try_transmit<R: Rng + ?Sized>(quality: f64, params: &RadioParams, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    quality > params.s_min && u >= params.packet_loss_prob
}
