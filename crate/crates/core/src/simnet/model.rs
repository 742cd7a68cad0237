use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Time;

/// How the adversary picks a delay inside the bound it is allowed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayPolicy {
    /// Every message takes exactly δ.
    #[default]
    Max,
    /// Uniform in `[1, δ]`.
    Uniform,
    /// Every message takes one time unit.
    Min,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NetworkModel {
    Synchronous {
        delta: Time,
        #[serde(default)]
        delay: DelayPolicy,
    },
    PartiallySynchronous {
        delta: Time,
        gst: Time,
        #[serde(default)]
        delay: DelayPolicy,
    },
    Asynchronous {
        delta: Time,
    },
}

/// Pareto shape for pre-GST and asynchronous delays.
const TAIL_SHAPE: f64 = 1.5;

impl NetworkModel {
    pub fn synchronous(delta: Time, delay: DelayPolicy) -> Self {
        NetworkModel::Synchronous { delta, delay }
    }

    pub fn partially_synchronous(delta: Time, gst: Time) -> Self {
        NetworkModel::PartiallySynchronous {
            delta,
            gst,
            delay: DelayPolicy::Max,
        }
    }

    pub fn asynchronous(delta: Time) -> Self {
        NetworkModel::Asynchronous { delta }
    }

    /// The nominal bound δ. Only a guarantee in the synchronous model and
    /// after GST.
    pub fn delta(&self) -> Time {
        match *self {
            NetworkModel::Synchronous { delta, .. }
            | NetworkModel::PartiallySynchronous { delta, .. }
            | NetworkModel::Asynchronous { delta } => delta,
        }
    }

    pub fn gst(&self) -> Time {
        match *self {
            NetworkModel::PartiallySynchronous { gst, .. } => gst,
            _ => 0,
        }
    }

    pub fn is_synchronous(&self) -> bool {
        matches!(self, NetworkModel::Synchronous { .. })
    }

    fn bounded<R: Rng + ?Sized>(rng: &mut R, delta: Time, policy: DelayPolicy) -> Time {
        match policy {
            DelayPolicy::Max => delta,
            DelayPolicy::Min => 1,
            DelayPolicy::Uniform => rng.gen_range(1..=delta),
        }
    }

    fn heavy<R: Rng + ?Sized>(rng: &mut R, delta: Time, cap: Time) -> Time {
        let u: f64 = 1.0 - rng.gen::<f64>();
        let d = (delta as f64 * u.powf(-1.0 / TAIL_SHAPE)).ceil();
        let d = if d.is_finite() && d < cap as f64 {
            d as Time
        } else {
            cap
        };
        d.clamp(1, cap.max(1))
    }

    /// Delay for a message sent at `now`; always at least one unit.
    pub fn draw_delay<R: Rng + ?Sized>(&self, rng: &mut R, now: Time, time_limit: Time) -> Time {
        match *self {
            NetworkModel::Synchronous { delta, delay } => Self::bounded(rng, delta, delay),
            NetworkModel::PartiallySynchronous { delta, gst, delay } => {
                if now >= gst {
                    Self::bounded(rng, delta, delay)
                } else {
                    Self::heavy(rng, delta, gst + delta - now)
                }
            }
            NetworkModel::Asynchronous { delta } => Self::heavy(rng, delta, time_limit.saturating_sub(now)),
        }
    }
}
