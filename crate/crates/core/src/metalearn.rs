//! Meta-training across the fault task set.
//!
//! Builds per-fault datasets from closed-loop simulation logs (training
//! pair: relative desired position/velocity in, next-position
//! displacement out), then runs the MAML outer loop: per-task inner
//! adaptation followed by an outer step on the summed second-order
//! meta-gradients.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mlp::{self, MlpParams, Sample, TaskDataset};
use crate::sim::{
    simulate_tracking, ControllerGains, FaultSpec, QuadParams, QuadState, RunLog, SimTiming,
};
use crate::trajgen::Trajectory;
use crate::{Error, Result};

/// Outer-loop optimizer choice. Plain gradient descent is the default
/// and matches the meta-update rule exactly; Adam is available for
/// faster convergence on hard task families.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum OuterOpt {
    Sgd,
    Adam,
}

/// Hyperparameters of the meta-training loop. Fields omitted from a
/// config file fall back to the defaults below.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    /// Inner (adaptation) step size α.
    pub alpha: f64,
    /// Outer (meta) step size β.
    pub beta: f64,
    pub inner_steps: usize,
    pub meta_iterations: usize,
    pub support_batch: usize,
    pub query_batch: usize,
    pub seed: u64,
    #[serde(default = "default_outer_opt")]
    pub outer_opt: OuterOpt,
    /// Use the full second-order meta-gradient (FOMAML when false).
    #[serde(default = "default_true")]
    pub second_order: bool,
    /// Network layer sizes, input first.
    pub topology: Vec<usize>,
}

fn default_outer_opt() -> OuterOpt {
    OuterOpt::Sgd
}

fn default_true() -> bool {
    true
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            alpha: 0.01,
            beta: 0.001,
            inner_steps: 1,
            meta_iterations: 10_000,
            support_batch: 20,
            query_batch: 20,
            seed: 0,
            outer_opt: OuterOpt::Sgd,
            second_order: true,
            topology: vec![6, 40, 40, 3],
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(Error::BadConfig("alpha and beta must be positive".into()));
        }
        if self.inner_steps < 1 {
            return Err(Error::BadConfig("inner_steps must be >= 1".into()));
        }
        if self.support_batch < 1 || self.query_batch < 1 {
            return Err(Error::BadConfig("batch sizes must be >= 1".into()));
        }
        if self.topology.len() < 2 {
            return Err(Error::BadConfig("topology needs at least two layers".into()));
        }
        Ok(())
    }
}

/// The meta-learning task set: one dataset per fault condition.
#[derive(Clone, Debug, Default)]
pub struct FaultTaskSet {
    pub tasks: Vec<(FaultSpec, TaskDataset)>,
    /// (fault index, trajectory index, reason) for skipped runs.
    pub skips: Vec<(usize, usize, String)>,
}

impl FaultTaskSet {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.len() < 2 {
            return Err(Error::BadConfig("task set needs at least 2 tasks".into()));
        }
        if self.tasks.iter().any(|(_, d)| d.is_empty()) {
            return Err(Error::EmptyDataset);
        }
        Ok(())
    }
}

/// Training pairs from a closed-loop run log:
/// input `[p_des(k+1); v_des(k+1)] − [p(k); v(k)]`, target
/// `p(k+1) − p(k)`, one pair per consecutive sample pair.
pub fn build_dataset(run: &RunLog, fault_id: impl Into<String>) -> Result<TaskDataset> {
    if run.samples.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "run too short for training pairs: {} samples",
            run.samples.len()
        )));
    }
    let mut ds = TaskDataset::new(fault_id);
    for w in run.samples.windows(2) {
        let (cur, next) = (&w[0], &w[1]);
        let input = DVector::from_iterator(
            6,
            (next.des_pos - cur.state.position)
                .iter()
                .chain((next.des_vel - cur.state.velocity).iter())
                .copied(),
        );
        let target = DVector::from_iterator(
            3,
            (next.state.position - cur.state.position).iter().copied(),
        );
        ds.samples.push(Sample { input, target });
    }
    Ok(ds)
}

/// Fly every trajectory under every fault and pool the resulting pairs
/// per fault. Diverging (fault, trajectory) runs are skipped and
/// recorded in the corpus metadata.
pub fn generate_training_corpus(
    faults: &[(String, FaultSpec)],
    trajectories: &[Trajectory],
    params: &QuadParams,
    gains: &ControllerGains,
    timing: SimTiming,
) -> Result<FaultTaskSet> {
    if faults.is_empty() || trajectories.is_empty() {
        return Err(Error::BadConfig("need at least one fault and one trajectory".into()));
    }
    let mut set = FaultTaskSet::default();
    for (fi, (name, fault)) in faults.iter().enumerate() {
        let mut ds = TaskDataset::new(name.clone());
        for (ti, traj) in trajectories.iter().enumerate() {
            let initial = QuadState::at_rest(traj.samples[0].pos);
            match simulate_tracking(initial, traj, *fault, params, gains, timing) {
                Ok(log) => {
                    ds.samples.extend(build_dataset(&log, name.clone())?.samples);
                }
                Err(e) => set.skips.push((fi, ti, e.to_string())),
            }
        }
        set.tasks.push((*fault, ds));
    }
    Ok(set)
}

/// One row of the meta-training trace.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Mean over tasks of the post-adaptation query loss.
    pub query_loss: f64,
}

/// Sample disjoint support and query index sets from one task.
fn split_batches(
    len: usize,
    support: usize,
    query: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if len < support + query {
        return Err(Error::BadConfig(format!(
            "task dataset of {len} samples cannot supply disjoint {support}+{query} batches"
        )));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    let sup = idx[..support].to_vec();
    let qry = idx[support..support + query].to_vec();
    Ok((sup, qry))
}

fn subset(ds: &TaskDataset, idx: &[usize]) -> TaskDataset {
    TaskDataset {
        samples: idx.iter().map(|&i| ds.samples[i].clone()).collect(),
        fault_id: ds.fault_id.clone(),
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl AdamState {
    fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, grad: &[f64], beta: f64) -> Vec<f64> {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t as i32);
        let bc2 = 1.0 - B2.powi(self.t as i32);
        grad.iter()
            .enumerate()
            .map(|(i, g)| {
                self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
                self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
                -beta * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + EPS)
            })
            .collect()
    }
}

/// MAML outer loop over the task set. Deterministic given the config
/// seed; task meta-gradients are reduced in task order.
pub fn meta_train(corpus: &FaultTaskSet, cfg: &MetaConfig) -> Result<(MlpParams, Vec<TraceRow>)> {
    cfg.validate()?;
    corpus.validate()?;
    let mut theta = MlpParams::init(&cfg.topology, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut trace = Vec::with_capacity(cfg.meta_iterations);
    let mut adam = AdamState::new(theta.flatten().len());
    let topo = theta.topology();

    for iteration in 0..cfg.meta_iterations {
        let mut total = MlpParams::zeros(&topo);
        let mut query_loss_sum = 0.0;
        for (_, ds) in &corpus.tasks {
            let (sup_idx, qry_idx) =
                split_batches(ds.len(), cfg.support_batch, cfg.query_batch, &mut rng)?;
            let sup = subset(ds, &sup_idx);
            let qry = subset(ds, &qry_idx);
            let mg = mlp::meta_grad(&theta, &sup, &qry, cfg.alpha, cfg.inner_steps, cfg.second_order)?;
            total.add_scaled(1.0, &mg);
            let adapted = mlp::adapt(&theta, &sup, cfg.alpha, cfg.inner_steps)?;
            query_loss_sum += mlp::loss(&adapted, &qry)?;
        }
        let mean_query_loss = query_loss_sum / corpus.tasks.len() as f64;
        if !mean_query_loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration });
        }
        trace.push(TraceRow { iteration, query_loss: mean_query_loss });

        match cfg.outer_opt {
            OuterOpt::Sgd => theta.add_scaled(-cfg.beta, &total),
            OuterOpt::Adam => {
                let delta = adam.step(&total.flatten(), cfg.beta);
                let delta = MlpParams::from_flat(&topo, &delta)?;
                theta.add_scaled(1.0, &delta);
            }
        }
        if !theta.all_finite() {
            return Err(Error::NonFiniteLoss { iteration });
        }
    }
    Ok((theta, trace))
}

/// Synthetic sinusoid-regression task family used as the standard
/// meta-learning sanity check: `y = A sin(x + φ)` with task-specific
/// amplitude and phase.
pub struct SinusoidTask {
    pub amplitude: f64,
    pub phase: f64,
}

impl SinusoidTask {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        use rand::Rng;
        SinusoidTask {
            amplitude: rng.gen_range(0.1..5.0),
            phase: rng.gen_range(0.0..std::f64::consts::PI),
        }
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> TaskDataset {
        use rand::Rng;
        let mut ds = TaskDataset::new("sinusoid");
        for _ in 0..n {
            let x = rng.gen_range(-5.0..5.0);
            ds.samples.push(Sample {
                input: DVector::from_vec(vec![x]),
                target: DVector::from_vec(vec![self.amplitude * (x + self.phase).sin()]),
            });
        }
        ds
    }
}

/// Meta-train on freshly sampled sinusoid tasks (task set resampled
/// each call from the seed) and return the checkpoint.
pub fn meta_train_sinusoid(cfg: &MetaConfig, n_tasks: usize, samples_per_task: usize) -> Result<(MlpParams, Vec<TraceRow>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut corpus = FaultTaskSet::default();
    for _ in 0..n_tasks {
        let task = SinusoidTask::random(&mut rng);
        corpus.tasks.push((FaultSpec::nominal(), task.sample(samples_per_task, &mut rng)));
    }
    meta_train(&corpus, cfg)
}
