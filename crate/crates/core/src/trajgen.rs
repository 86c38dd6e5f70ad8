//! Minimum-jerk trajectory generation.
//!
//! Each axis follows the unique quintic polynomial that satisfies the six
//! position/velocity/acceleration boundary conditions; among all C²
//! curves with those boundary values the quintic minimizes the integral
//! of squared jerk. Trajectories are sampled on a fixed step `dt` and the
//! closest-point query is an argmin over the discrete sample set.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One sampled point of a desired trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajSample {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub acc: Vector3<f64>,
}

/// Time-indexed desired trajectory with fixed sample step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub samples: Vec<TrajSample>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        (self.samples.len().saturating_sub(1)) as f64 * self.dt
    }
}

/// Quintic coefficients for one axis: p(t) = Σ c_i t^i.
#[derive(Clone, Copy, Debug)]
pub struct Quintic {
    pub c: [f64; 6],
}

impl Quintic {
    /// Solve the six boundary conditions (p, v, a at t = 0 and t = T) in
    /// closed form.
    pub fn solve(p0: f64, v0: f64, a0: f64, p1: f64, v1: f64, a1: f64, t_total: f64) -> Self {
        let t = t_total;
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let t5 = t4 * t;
        let c0 = p0;
        let c1 = v0;
        let c2 = a0 / 2.0;
        let c3 = (20.0 * (p1 - p0) - (8.0 * v1 + 12.0 * v0) * t - (3.0 * a0 - a1) * t2) / (2.0 * t3);
        let c4 = (30.0 * (p0 - p1) + (14.0 * v1 + 16.0 * v0) * t + (3.0 * a0 - 2.0 * a1) * t2) / (2.0 * t4);
        let c5 = (12.0 * (p1 - p0) - 6.0 * (v1 + v0) * t - (a0 - a1) * t2) / (2.0 * t5);
        Quintic { c: [c0, c1, c2, c3, c4, c5] }
    }

    pub fn pos(&self, t: f64) -> f64 {
        let c = &self.c;
        ((((c[5] * t + c[4]) * t + c[3]) * t + c[2]) * t + c[1]) * t + c[0]
    }

    pub fn vel(&self, t: f64) -> f64 {
        let c = &self.c;
        (((5.0 * c[5] * t + 4.0 * c[4]) * t + 3.0 * c[3]) * t + 2.0 * c[2]) * t + c[1]
    }

    pub fn acc(&self, t: f64) -> f64 {
        let c = &self.c;
        ((20.0 * c[5] * t + 12.0 * c[4]) * t + 6.0 * c[3]) * t + 2.0 * c[2]
    }

    pub fn jerk(&self, t: f64) -> f64 {
        let c = &self.c;
        (60.0 * c[5] * t + 24.0 * c[4]) * t + 6.0 * c[3]
    }
}

/// Minimum-jerk segment between full boundary states.
///
/// `t_total` is snapped to the nearest positive multiple of `dt` so the
/// final sample lands exactly on the boundary state.
pub fn min_jerk_segment(
    p0: Vector3<f64>,
    v0: Vector3<f64>,
    a0: Vector3<f64>,
    p1: Vector3<f64>,
    v1: Vector3<f64>,
    a1: Vector3<f64>,
    t_total: f64,
    dt: f64,
) -> Result<Trajectory> {
    if t_total <= 0.0 || dt <= 0.0 {
        return Err(Error::Trajectory(format!(
            "segment duration {t_total} and dt {dt} must be positive"
        )));
    }
    if dt > t_total {
        return Err(Error::Trajectory(format!("dt {dt} exceeds segment duration {t_total}")));
    }
    let n = (t_total / dt).round().max(1.0) as usize;
    let t_snap = n as f64 * dt;
    let axes: Vec<Quintic> = (0..3)
        .map(|i| Quintic::solve(p0[i], v0[i], a0[i], p1[i], v1[i], a1[i], t_snap))
        .collect();
    let samples = (0..=n)
        .map(|k| {
            let t = k as f64 * dt;
            TrajSample {
                pos: Vector3::from_fn(|i, _| axes[i].pos(t)),
                vel: Vector3::from_fn(|i, _| axes[i].vel(t)),
                acc: Vector3::from_fn(|i, _| axes[i].acc(t)),
            }
        })
        .collect();
    Ok(Trajectory { dt, samples })
}

/// A waypoint with a speed hint used to derive boundary velocities and
/// segment durations.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Waypoint {
    pub pos: Vector3<f64>,
    pub speed: f64,
}

/// Boundary velocity at each waypoint: the speed hint along the local
/// path direction (central direction at interior waypoints).
fn waypoint_velocities(waypoints: &[Waypoint]) -> Vec<Vector3<f64>> {
    let n = waypoints.len();
    (0..n)
        .map(|i| {
            let dir = if i == 0 {
                waypoints[1].pos - waypoints[0].pos
            } else if i == n - 1 {
                waypoints[n - 1].pos - waypoints[n - 2].pos
            } else {
                waypoints[i + 1].pos - waypoints[i - 1].pos
            };
            let norm = dir.norm();
            if norm < 1e-12 {
                Vector3::zeros()
            } else {
                dir / norm * waypoints[i].speed
            }
        })
        .collect()
}

/// Segment durations from path length over mean endpoint speed:
/// `T = len / v̄`. Zero-speed endpoints fall back to the other endpoint's
/// hint, or 1 m/s if both rest.
pub fn auto_segment_durations(waypoints: &[Waypoint]) -> Vec<f64> {
    waypoints
        .windows(2)
        .map(|w| {
            let len = (w[1].pos - w[0].pos).norm().max(1e-6);
            let speeds: Vec<f64> = w.iter().map(|wp| wp.speed).filter(|s| *s > 0.0).collect();
            let v_bar = if speeds.is_empty() {
                1.0
            } else {
                speeds.iter().sum::<f64>() / speeds.len() as f64
            };
            len / v_bar
        })
        .collect()
}

/// Concatenated minimum-jerk segments through the waypoints, C² at the
/// junctions (shared boundary velocity, zero boundary acceleration).
pub fn multi_waypoint(waypoints: &[Waypoint], seg_t: &[f64], dt: f64) -> Result<Trajectory> {
    if waypoints.len() < 2 {
        return Err(Error::Trajectory("need at least 2 waypoints".into()));
    }
    if seg_t.len() != waypoints.len() - 1 {
        return Err(Error::Trajectory(format!(
            "{} segment durations for {} waypoints",
            seg_t.len(),
            waypoints.len()
        )));
    }
    let vels = waypoint_velocities(waypoints);
    let mut samples: Vec<TrajSample> = Vec::new();
    for (i, &t_seg) in seg_t.iter().enumerate() {
        let seg = min_jerk_segment(
            waypoints[i].pos,
            vels[i],
            Vector3::zeros(),
            waypoints[i + 1].pos,
            vels[i + 1],
            Vector3::zeros(),
            t_seg,
            dt,
        )?;
        // drop the duplicated junction sample
        let skip = usize::from(!samples.is_empty());
        samples.extend(seg.samples.into_iter().skip(skip));
    }
    Ok(Trajectory { dt, samples })
}

/// Index and position of the sampled trajectory point closest to `p`;
/// ties break toward the smallest index.
pub fn closest_point_on_traj(traj: &Trajectory, p: &Vector3<f64>) -> (usize, Vector3<f64>) {
    assert!(!traj.is_empty(), "closest point on an empty trajectory");
    let mut best = (0usize, f64::INFINITY);
    for (i, s) in traj.samples.iter().enumerate() {
        let d = (p - s.pos).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    (best.0, traj.samples[best.0].pos)
}
