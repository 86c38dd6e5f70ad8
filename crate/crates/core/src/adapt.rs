//! Online stage: K-sample fine-tuning of the meta-trained predictor,
//! next-position prediction, PID-style reference correction, runtime
//! validation of the predictor, and k-means data pruning with
//! relearning.
//!
//! The adaptive loop never touches the vehicle controller; it only
//! replaces the reference fed to it. With all correction gains zero the
//! loop reproduces the uncorrected baseline run bit for bit.

use nalgebra::{DVector, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mlp::{self, MlpParams, Sample, TaskDataset};
use crate::sim::{
    desired_reference, make_sample, ControllerGains, FaultSpec, QuadParams, QuadState, RunLog,
    SimTiming, Simulator,
};
use crate::trajgen::{closest_point_on_traj, Trajectory};
use crate::{Error, Result};

/// Gains of the PID-style reference-correction rule.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CorrectionGains {
    pub kappa_p: f64,
    pub kappa_d: f64,
    pub kappa_i: f64,
}

impl Default for CorrectionGains {
    /// Tuned once on a training fault; acceptance runs use the untouched
    /// test faults.
    fn default() -> Self {
        CorrectionGains { kappa_p: 0.8, kappa_d: 0.3, kappa_i: 0.05 }
    }
}

impl CorrectionGains {
    pub fn zero() -> Self {
        CorrectionGains { kappa_p: 0.0, kappa_d: 0.0, kappa_i: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kappa_p < 0.0 || self.kappa_d < 0.0 || self.kappa_i < 0.0 {
            return Err(Error::BadConfig("correction gains must be non-negative".into()));
        }
        Ok(())
    }
}

/// Configuration of the online adaptation loop.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdaptConfig {
    /// Warm-up sample count K (also the pruned relearning set size).
    pub k_samples: usize,
    /// Validation threshold δ on the one-step prediction error [m].
    pub delta: f64,
    pub gains: CorrectionGains,
    /// Inner fine-tuning step size.
    pub alpha: f64,
    pub inner_steps: usize,
    /// Oldest history entries beyond this count are discarded before
    /// pruning.
    pub history_cap: usize,
    pub seed: u64,
    /// Correction applied per axis; z can be masked out as in the
    /// roll-bias experiments.
    #[serde(default = "default_axis_mask")]
    pub axis_mask: [bool; 3],
    /// Norm clamp on the deviation integrator [m].
    #[serde(default = "default_integrator_limit")]
    pub integrator_limit: f64,
    /// Relearn from the meta-trained anchor rather than the drifted
    /// current parameters.
    #[serde(default = "default_true")]
    pub readapt_from_meta: bool,
}

fn default_axis_mask() -> [bool; 3] {
    [true; 3]
}

fn default_integrator_limit() -> f64 {
    2.0
}

fn default_true() -> bool {
    true
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            k_samples: 20,
            delta: 0.02,
            gains: CorrectionGains::default(),
            alpha: 0.01,
            inner_steps: 5,
            history_cap: 500,
            seed: 0,
            axis_mask: [true; 3],
            integrator_limit: 2.0,
            readapt_from_meta: true,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_samples < 1 {
            return Err(Error::BadConfig("K must be >= 1".into()));
        }
        if self.delta <= 0.0 {
            return Err(Error::BadConfig("delta must be positive".into()));
        }
        if self.history_cap < self.k_samples {
            return Err(Error::BadConfig("history_cap must be >= K".into()));
        }
        self.gains.validate()
    }
}

/// One step of runtime history: the applied reference for step k+1 and
/// the realized states around it.
#[derive(Clone, Copy, Debug)]
pub struct HistoryEntry {
    pub ref_pos: Vector3<f64>,
    pub ref_vel: Vector3<f64>,
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub next_pos: Vector3<f64>,
}

impl HistoryEntry {
    /// Model input: relative applied reference.
    pub fn input(&self) -> DVector<f64> {
        DVector::from_iterator(
            6,
            (self.ref_pos - self.pos).iter().chain((self.ref_vel - self.vel).iter()).copied(),
        )
    }

    /// Model target: realized next-position displacement.
    pub fn target(&self) -> DVector<f64> {
        DVector::from_iterator(3, (self.next_pos - self.pos).iter().copied())
    }
}

/// History of applied references and realized states.
#[derive(Clone, Debug, Default)]
pub struct OnlineHistory {
    pub entries: Vec<HistoryEntry>,
}

impl OnlineHistory {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drop the oldest entries so at most `cap` remain.
    pub fn cap(&mut self, cap: usize) {
        if self.entries.len() > cap {
            self.entries.drain(..self.entries.len() - cap);
        }
    }
}

/// Runtime adaptation bookkeeping carried across steps.
#[derive(Clone, Debug)]
pub struct AdaptState {
    /// Fine-tuned parameters θ*.
    pub params: MlpParams,
    /// Actual deviations d(0..k) from the desired path.
    pub deviation_history: Vec<Vector3<f64>>,
    /// Running Σ d(t), norm-clamped.
    pub integrator: Vector3<f64>,
    pub last_correction: Vector3<f64>,
    /// Validity flag s of the last validation.
    pub validity: bool,
    pub relearn_count: usize,
}

/// Fine-tune the meta-trained parameters on the first K history
/// samples.
pub fn initial_adapt(
    theta_meta: &MlpParams,
    history: &OnlineHistory,
    k_samples: usize,
    alpha: f64,
    inner_steps: usize,
) -> Result<MlpParams> {
    if history.len() < k_samples {
        return Err(Error::WarmupIncomplete { needed: k_samples, have: history.len() });
    }
    if inner_steps == 0 {
        return Ok(theta_meta.clone());
    }
    let mut ds = TaskDataset::new("warmup");
    for e in &history.entries[..k_samples] {
        ds.samples.push(Sample { input: e.input(), target: e.target() });
    }
    mlp::adapt(theta_meta, &ds, alpha, inner_steps)
}

/// Next-position prediction from the relative desired state.
pub fn predict_next(
    params: &MlpParams,
    p: &Vector3<f64>,
    v: &Vector3<f64>,
    ref_p_next: &Vector3<f64>,
    ref_v_next: &Vector3<f64>,
) -> Vector3<f64> {
    let input = DVector::from_iterator(
        6,
        (ref_p_next - p).iter().chain((ref_v_next - v).iter()).copied(),
    );
    let out = mlp::forward(params, &input);
    Vector3::new(out[0], out[1], out[2]) + p
}

/// Predicted deviation: vector from the predicted position back to the
/// closest desired-trajectory sample.
pub fn predicted_deviation(traj: &Trajectory, p_pred: &Vector3<f64>) -> Vector3<f64> {
    let (_, closest) = closest_point_on_traj(traj, p_pred);
    closest - p_pred
}

/// PID-based correction vector from the predicted deviation, the latest
/// observed deviation, and the deviation integral.
pub fn correction(
    gains: &CorrectionGains,
    d_pred: &Vector3<f64>,
    last_dev: Option<&Vector3<f64>>,
    integrator: &Vector3<f64>,
) -> Vector3<f64> {
    let last = last_dev.copied().unwrap_or_else(Vector3::zeros);
    gains.kappa_p * d_pred
        + gains.kappa_d * (d_pred - last)
        + gains.kappa_i * (integrator + d_pred)
}

/// Applied reference for step k+1: desired point shifted by the
/// correction, with finite-difference reference velocity.
pub fn updated_reference(
    traj: &Trajectory,
    k: usize,
    c: &Vector3<f64>,
    prev_ref: &Vector3<f64>,
    dt: f64,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    if k + 1 >= traj.len() {
        return Err(Error::Trajectory(format!(
            "reference index {} out of range (len {})",
            k + 1,
            traj.len()
        )));
    }
    let r = traj.samples[k + 1].pos + c;
    let r_v = (r - prev_ref) / dt;
    Ok((r, r_v))
}

/// Validity flag s: 1 (true) unless the one-step prediction under the
/// applied reference misses the realized position by more than δ
/// (strict inequality).
pub fn validate(
    params: &MlpParams,
    p: &Vector3<f64>,
    v: &Vector3<f64>,
    r_next: &Vector3<f64>,
    r_v_next: &Vector3<f64>,
    p_actual_next: &Vector3<f64>,
    delta: f64,
) -> bool {
    let pred = predict_next(params, p, v, r_next, r_v_next);
    (pred - p_actual_next).norm() <= delta
}

/// Lloyd k-means with seeded k-means++ initialization. Stops on an
/// assignment fixpoint or after 100 iterations; an emptied cluster is
/// reseeded to the point farthest from its centroid.
pub fn kmeans(points: &[DVector<f64>], k: usize, seed: u64) -> Vec<DVector<f64>> {
    assert!(!points.is_empty() && k >= 1 && k <= points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = points[0].len();

    // k-means++ seeding
    let mut centroids: Vec<DVector<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())].clone());
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|c| (p - c).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..points.len())
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centroids.push(points[next].clone());
    }

    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = (0usize, f64::INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let d = (p - c).norm_squared();
                if d < best.1 {
                    best = (j, d);
                }
            }
            if assignment[i] != best.0 {
                assignment[i] = best.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![DVector::<f64>::zeros(dim); k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            sums[assignment[i]] += p;
            counts[assignment[i]] += 1;
        }
        for j in 0..k {
            if counts[j] == 0 {
                // reseed to the point farthest from this centroid
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| {
                        let da = (*a - &centroids[j]).norm_squared();
                        let db = (*b - &centroids[j]).norm_squared();
                        da.partial_cmp(&db).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                centroids[j] = points[far].clone();
            } else {
                centroids[j] = &sums[j] / counts[j] as f64;
            }
        }
    }
    centroids
}

/// Index of the point nearest to `c` among `points`, skipping `used`
/// indices; ties break toward the smallest index.
fn nearest_unused(points: &[DVector<f64>], c: &DVector<f64>, used: &[bool]) -> usize {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        if used[i] {
            continue;
        }
        let d = (p - c).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Select K representative history samples: cluster the model inputs,
/// then take the history column nearest to each centroid, substituting
/// the next-nearest column when a column is already taken.
pub fn prune_history(hist: &OnlineHistory, k_samples: usize, seed: u64) -> Result<TaskDataset> {
    if hist.len() < k_samples {
        return Err(Error::WarmupIncomplete { needed: k_samples, have: hist.len() });
    }
    let inputs: Vec<DVector<f64>> = hist.entries.iter().map(|e| e.input()).collect();
    let centroids = kmeans(&inputs, k_samples, seed);
    let mut used = vec![false; inputs.len()];
    let mut ds = TaskDataset::new("pruned");
    for c in &centroids {
        let i = nearest_unused(&inputs, c, &used);
        used[i] = true;
        ds.samples.push(Sample {
            input: inputs[i].clone(),
            target: hist.entries[i].target(),
        });
    }
    Ok(ds)
}

/// Per-step record of the adaptive loop.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TraceStep {
    pub k: usize,
    /// Validity flag (1 = model valid).
    pub s: u8,
    pub relearn: bool,
    /// One-step prediction error under the applied reference [m].
    pub pred_err: f64,
    pub deviation: Vector3<f64>,
    pub correction: Vector3<f64>,
}

/// Trace of the whole adaptive run.
#[derive(Clone, Debug, Default)]
pub struct AdaptTrace {
    pub steps: Vec<TraceStep>,
    pub relearn_count: usize,
}

fn apply_mask(c: Vector3<f64>, mask: &[bool; 3]) -> Vector3<f64> {
    Vector3::new(
        if mask[0] { c.x } else { 0.0 },
        if mask[1] { c.y } else { 0.0 },
        if mask[2] { c.z } else { 0.0 },
    )
}

fn actual_deviation(traj: &Trajectory, p: &Vector3<f64>) -> Vector3<f64> {
    let (_, closest) = closest_point_on_traj(traj, p);
    closest - p
}

/// The full online loop: warm-up on the unmodified reference, initial
/// K-sample fine-tuning, then per-step prediction, reference
/// correction, validation, and k-means relearning whenever the model is
/// invalidated.
pub fn run_adaptive_tracking(
    theta_meta: &MlpParams,
    traj: &Trajectory,
    fault: FaultSpec,
    params: &QuadParams,
    ctrl_gains: &ControllerGains,
    timing: SimTiming,
    cfg: &AdaptConfig,
) -> Result<(RunLog, AdaptTrace)> {
    cfg.validate()?;
    if traj.len() <= cfg.k_samples + 1 {
        return Err(Error::Trajectory(format!(
            "trajectory of {} steps too short for K = {}",
            traj.len(),
            cfg.k_samples
        )));
    }
    let initial = QuadState::at_rest(traj.samples[0].pos);
    let mut sim = Simulator::new(params, ctrl_gains, fault, timing, initial)?;
    let mut log = RunLog::default();
    let mut trace = AdaptTrace::default();
    let mut history = OnlineHistory::default();

    let mut state = AdaptState {
        params: theta_meta.clone(),
        deviation_history: vec![actual_deviation(traj, &sim.state.position)],
        integrator: actual_deviation(traj, &sim.state.position),
        last_correction: Vector3::zeros(),
        validity: true,
        relearn_count: 0,
    };

    log.samples.push(make_sample(0, &sim, traj, &traj.samples[0].pos, &Vector3::zeros()));

    // warm-up: fly the unmodified desired reference for K steps
    for k in 0..cfg.k_samples {
        let (rp, rv) = desired_reference(traj, k + 1);
        let (p, v) = (sim.state.position, sim.state.velocity);
        sim.step(&rp, &rv)?;
        history.entries.push(HistoryEntry {
            ref_pos: rp,
            ref_vel: rv,
            pos: p,
            vel: v,
            next_pos: sim.state.position,
        });
        let dev = actual_deviation(traj, &sim.state.position);
        state.deviation_history.push(dev);
        state.integrator = clamp_norm(state.integrator + dev, cfg.integrator_limit);
        log.samples.push(make_sample(k + 1, &sim, traj, &rp, &rv));
        trace.steps.push(TraceStep {
            k: k + 1,
            s: 1,
            relearn: false,
            pred_err: 0.0,
            deviation: dev,
            correction: Vector3::zeros(),
        });
    }

    state.params = initial_adapt(theta_meta, &history, cfg.k_samples, cfg.alpha, cfg.inner_steps)?;

    let mut prev_ref = traj.samples[cfg.k_samples].pos;
    for k in cfg.k_samples..traj.len() - 1 {
        let (p, v) = (sim.state.position, sim.state.velocity);

        // predict against the desired trajectory and derive the correction
        let p_pred = predict_next(&state.params, &p, &v, &traj.samples[k + 1].pos, &traj.samples[k + 1].vel);
        let d_pred = predicted_deviation(traj, &p_pred);
        let c_raw = correction(
            &cfg.gains,
            &d_pred,
            state.deviation_history.last(),
            &state.integrator,
        );
        let c = apply_mask(c_raw, &cfg.axis_mask);
        state.last_correction = c;
        let (rp, rv) = updated_reference(traj, k, &c, &prev_ref, traj.dt)?;

        // predict under the applied reference, then realize the step
        let p_pred_ref = predict_next(&state.params, &p, &v, &rp, &rv);
        sim.step(&rp, &rv)?;
        let p_next = sim.state.position;
        let pred_err = (p_pred_ref - p_next).norm();
        state.validity = pred_err <= cfg.delta;

        history.entries.push(HistoryEntry {
            ref_pos: rp,
            ref_vel: rv,
            pos: p,
            vel: v,
            next_pos: p_next,
        });
        let dev = actual_deviation(traj, &p_next);
        state.deviation_history.push(dev);
        state.integrator = clamp_norm(state.integrator + dev, cfg.integrator_limit);
        log.samples.push(make_sample(k + 1, &sim, traj, &rp, &rv));

        let mut relearn = false;
        if !state.validity {
            history.cap(cfg.history_cap);
            let pruned = prune_history(&history, cfg.k_samples, cfg.seed.wrapping_add(k as u64))?;
            let anchor = if cfg.readapt_from_meta { theta_meta } else { &state.params };
            state.params = mlp::adapt(anchor, &pruned, cfg.alpha, cfg.inner_steps)?;
            state.relearn_count += 1;
            relearn = true;
        }
        trace.steps.push(TraceStep {
            k: k + 1,
            s: u8::from(state.validity),
            relearn,
            pred_err,
            deviation: dev,
            correction: c,
        });
        prev_ref = rp;
    }
    trace.relearn_count = state.relearn_count;
    Ok((log, trace))
}

fn clamp_norm(v: Vector3<f64>, limit: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > limit && n > 0.0 {
        v * (limit / n)
    } else {
        v
    }
}
