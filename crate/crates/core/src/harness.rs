//! Experiment orchestration: scenario configs, corpus generation,
//! meta-training, closed-loop evaluation with baseline/adapted arms,
//! metric reports, and SVG plot emission.
//!
//! CSVs are the ground truth of every run; plots are pure views over
//! them. Every command is reproducible from config + seed alone and the
//! outputs embed the config hash.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::{run_adaptive_tracking, AdaptConfig, AdaptTrace};
use crate::metalearn::{
    generate_training_corpus, meta_train, FaultTaskSet, MetaConfig, TraceRow,
};
use crate::mlp::{Checkpoint, MlpParams, Sample, TaskDataset};
use crate::sim::{
    simulate_tracking, ControllerGains, FaultSpec, QuadParams, QuadState, RunLog, SimTiming,
};
use crate::trajgen::{auto_segment_durations, multi_waypoint, Trajectory, Waypoint};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// config types

/// Waypoint list plus optional explicit segment durations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub waypoints: Vec<WaypointSpec>,
    #[serde(default)]
    pub segment_durations: Option<Vec<f64>>,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_dt() -> f64 {
    0.02
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WaypointSpec {
    pub pos: [f64; 3],
    pub speed: f64,
}

impl TrajectorySpec {
    pub fn build(&self) -> Result<Trajectory> {
        self.build_scaled(1.0)
    }

    /// Build with every waypoint speed hint multiplied by `scale`
    /// (segment durations shrink accordingly).
    pub fn build_scaled(&self, scale: f64) -> Result<Trajectory> {
        let wps: Vec<Waypoint> = self
            .waypoints
            .iter()
            .map(|w| Waypoint {
                pos: Vector3::new(w.pos[0], w.pos[1], w.pos[2]),
                speed: w.speed * scale,
            })
            .collect();
        let seg_t = match &self.segment_durations {
            Some(t) => t.iter().map(|t| t / scale).collect(),
            None => auto_segment_durations(&wps),
        };
        multi_waypoint(&wps, &seg_t, self.dt)
    }
}

/// A named fault, as listed in the fault table of a corpus config.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NamedFault {
    pub name: String,
    #[serde(flatten)]
    pub fault: FaultSpec,
}

/// Config for `generate-corpus`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub faults: Vec<NamedFault>,
    pub trajectories: Vec<TrajectorySpec>,
    /// Each trajectory is flown once per speed scale.
    #[serde(default = "default_speed_scales")]
    pub speed_scales: Vec<f64>,
    #[serde(default)]
    pub quad: QuadParams,
    #[serde(default)]
    pub gains: ControllerGains,
    #[serde(default)]
    pub timing: SimTiming,
}

fn default_speed_scales() -> Vec<f64> {
    vec![1.0]
}

/// Config for `evaluate`: one scenario, two arms.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub fault: NamedFault,
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub adapt: AdaptConfig,
    #[serde(default)]
    pub quad: QuadParams,
    #[serde(default)]
    pub gains: ControllerGains,
    #[serde(default)]
    pub timing: SimTiming,
}

/// Config for `suite`: a list of scenarios evaluated with one checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub scenarios: Vec<Scenario>,
}

/// Deviation metrics of one scenario, both arms over identical step
/// ranges.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub config_sha256: String,
    /// Post-warm-up averages (primary comparison window).
    pub average_deviation_baseline: f64,
    pub average_deviation_adapted: f64,
    /// Whole-run averages (secondary).
    pub average_deviation_baseline_all: f64,
    pub average_deviation_adapted_all: f64,
    pub max_deviation_baseline: f64,
    pub max_deviation_adapted: f64,
    pub relearn_count: usize,
    /// First step of the averaging window (= K + 1).
    pub window_start: usize,
    pub steps: usize,
}

// ---------------------------------------------------------------------------
// helpers

/// SHA-256 of a canonical JSON serialization, hex encoded.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::BadConfig(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// The simulated fault table: four single-rotor training faults plus
/// the nominal task.
pub fn training_faults() -> Vec<NamedFault> {
    vec![
        NamedFault { name: "nominal".into(), fault: FaultSpec::nominal() },
        NamedFault { name: "F1".into(), fault: FaultSpec::rotor(1, 0.6) },
        NamedFault { name: "F2".into(), fault: FaultSpec::rotor(1, 0.8) },
        NamedFault { name: "F3".into(), fault: FaultSpec::rotor(2, 0.6) },
        NamedFault { name: "F4".into(), fault: FaultSpec::rotor(2, 0.8) },
    ]
}

/// Held-out test faults: one inside the training bounds, one outside.
pub fn test_faults() -> Vec<NamedFault> {
    vec![
        NamedFault { name: "F1star".into(), fault: FaultSpec::rotor(2, 0.7) },
        NamedFault { name: "F2star".into(), fault: FaultSpec::rotor(4, 0.6) },
    ]
}

/// The slalom evaluation path: start [0,0,1] m, goal [8,0,1] m.
pub fn slalom_spec(speed: f64) -> TrajectorySpec {
    TrajectorySpec {
        waypoints: vec![
            WaypointSpec { pos: [0.0, 0.0, 1.0], speed: 0.0 },
            WaypointSpec { pos: [3.0, 1.0, 1.0], speed },
            WaypointSpec { pos: [5.0, -1.0, 1.0], speed },
            WaypointSpec { pos: [8.0, 0.0, 1.0], speed: 0.0 },
        ],
        segment_durations: None,
        dt: 0.02,
    }
}

/// Default corpus: the training fault table flown over four goal
/// trajectories at three speed scales.
pub fn default_corpus_config() -> CorpusConfig {
    let goals: [[f64; 3]; 4] = [
        [8.0, 0.0, 1.0],
        [6.0, 3.0, 1.5],
        [4.0, -3.0, 1.0],
        [7.0, 2.0, 0.8],
    ];
    let trajectories = goals
        .iter()
        .map(|g| TrajectorySpec {
            waypoints: vec![
                WaypointSpec { pos: [0.0, 0.0, 1.0], speed: 0.0 },
                WaypointSpec {
                    pos: [g[0] * 0.4, g[1] * 0.6, 1.0 + (g[2] - 1.0) * 0.5],
                    speed: 1.0,
                },
                WaypointSpec { pos: *g, speed: 0.0 },
            ],
            segment_durations: None,
            dt: 0.02,
        })
        .collect();
    CorpusConfig {
        faults: training_faults(),
        trajectories,
        speed_scales: vec![0.35, 0.5, 0.65],
        quad: QuadParams::default(),
        gains: ControllerGains::default(),
        timing: SimTiming::default(),
    }
}

// ---------------------------------------------------------------------------
// CSV emission

pub fn write_runlog_csv(path: &Path, log: &RunLog) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "k", "t", "px", "py", "pz", "vx", "vy", "vz", "ref_x", "ref_y", "ref_z", "des_x",
        "des_y", "des_z", "deviation",
    ])?;
    for s in &log.samples {
        w.write_record([
            s.k.to_string(),
            s.t.to_string(),
            s.state.position.x.to_string(),
            s.state.position.y.to_string(),
            s.state.position.z.to_string(),
            s.state.velocity.x.to_string(),
            s.state.velocity.y.to_string(),
            s.state.velocity.z.to_string(),
            s.ref_pos.x.to_string(),
            s.ref_pos.y.to_string(),
            s.ref_pos.z.to_string(),
            s.des_pos.x.to_string(),
            s.des_pos.y.to_string(),
            s.des_pos.z.to_string(),
            s.deviation.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(path: &Path, trace: &AdaptTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "k", "s", "relearn", "pred_err", "dev_x", "dev_y", "dev_z", "corr_x", "corr_y", "corr_z",
    ])?;
    for s in &trace.steps {
        w.write_record([
            s.k.to_string(),
            s.s.to_string(),
            u8::from(s.relearn).to_string(),
            s.pred_err.to_string(),
            s.deviation.x.to_string(),
            s.deviation.y.to_string(),
            s.deviation.z.to_string(),
            s.correction.x.to_string(),
            s.correction.y.to_string(),
            s.correction.z.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_dataset_csv(path: &Path, ds: &TaskDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x0", "x1", "x2", "x3", "x4", "x5", "y0", "y1", "y2"])?;
    for s in &ds.samples {
        let row: Vec<String> =
            s.input.iter().chain(s.target.iter()).map(|v| v.to_string()).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_dataset_csv(path: &Path, fault_id: &str) -> Result<TaskDataset> {
    let mut r = csv::Reader::from_path(path)?;
    let mut ds = TaskDataset::new(fault_id);
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| Error::BadConfig(format!("bad csv value: {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() != 9 {
            return Err(Error::BadConfig(format!("dataset row has {} columns", vals.len())));
        }
        ds.samples.push(Sample {
            input: nalgebra::DVector::from_vec(vals[..6].to_vec()),
            target: nalgebra::DVector::from_vec(vals[6..].to_vec()),
        });
    }
    Ok(ds)
}

fn write_meta_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "query_loss"])?;
    for row in trace {
        w.write_record([row.iteration.to_string(), row.query_loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// SVG plotting (simple polyline renderer; CSVs remain the ground truth)

pub mod svg {
    /// One labelled series of 2-D points.
    pub struct Series<'a> {
        pub label: &'a str,
        pub color: &'a str,
        pub points: Vec<(f64, f64)>,
    }

    pub fn plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
        let (w, h) = (640.0, 480.0);
        let margin = 56.0;
        let mut min_x = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for s in series {
            for (x, y) in &s.points {
                min_x = min_x.min(*x);
                max_x = max_x.max(*x);
                min_y = min_y.min(*y);
                max_y = max_y.max(*y);
            }
        }
        if !min_x.is_finite() {
            min_x = 0.0;
            max_x = 1.0;
            min_y = 0.0;
            max_y = 1.0;
        }
        let pad = |lo: &mut f64, hi: &mut f64| {
            if (*hi - *lo).abs() < 1e-12 {
                *lo -= 0.5;
                *hi += 0.5;
            }
        };
        pad(&mut min_x, &mut max_x);
        pad(&mut min_y, &mut max_y);
        let sx = (w - 2.0 * margin) / (max_x - min_x);
        let sy = (h - 2.0 * margin) / (max_y - min_y);
        let tx = |x: f64| margin + (x - min_x) * sx;
        let ty = |y: f64| h - margin - (y - min_y) * sy;

        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
        ));
        out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        out.push_str(&format!(
            "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n",
            w / 2.0
        ));
        // axes
        out.push_str(&format!(
            "<line x1=\"{margin}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
            h - margin,
            w - margin,
            h - margin
        ));
        out.push_str(&format!(
            "<line x1=\"{margin}\" y1=\"{margin}\" x2=\"{margin}\" y2=\"{}\" stroke=\"black\"/>\n",
            h - margin
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{x_label}</text>\n",
            w / 2.0,
            h - 16.0
        ));
        out.push_str(&format!(
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 {})\">{y_label}</text>\n",
            h / 2.0,
            h / 2.0
        ));
        for (lo, hi, n, vertical) in [(min_x, max_x, 5, false), (min_y, max_y, 5, true)] {
            for i in 0..=n {
                let v = lo + (hi - lo) * i as f64 / n as f64;
                if vertical {
                    out.push_str(&format!(
                        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"10\">{v:.3}</text>\n",
                        margin - 6.0,
                        ty(v) + 3.0
                    ));
                } else {
                    out.push_str(&format!(
                        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{v:.2}</text>\n",
                        tx(v),
                        h - margin + 16.0
                    ));
                }
            }
        }
        for (i, s) in series.iter().enumerate() {
            let pts: Vec<String> =
                s.points.iter().map(|(x, y)| format!("{:.2},{:.2}", tx(*x), ty(*y))).collect();
            out.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                s.color,
                pts.join(" ")
            ));
            let ly = margin + 16.0 * i as f64;
            out.push_str(&format!(
                "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                w - margin - 120.0,
                w - margin - 96.0,
                s.color
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-size=\"11\">{}</text>\n",
                w - margin - 90.0,
                ly + 4.0,
                s.label
            ));
        }
        out.push_str("</svg>\n");
        out
    }
}

// ---------------------------------------------------------------------------
// commands

#[derive(Serialize, Deserialize, Debug)]
pub struct CorpusManifest {
    pub config_sha256: String,
    pub seed: u64,
    pub faults: Vec<NamedFault>,
    pub trajectory_count: usize,
    pub task_files: Vec<String>,
    pub sample_counts: Vec<usize>,
    pub skips: Vec<(usize, usize, String)>,
}

/// `generate-corpus`: fly the fault table over the configured
/// trajectories and persist one CSV dataset per task plus a manifest.
pub fn cli_generate_corpus(config: &CorpusConfig, seed: u64, out_dir: &Path) -> Result<CorpusManifest> {
    if config.trajectories.is_empty() {
        return Err(Error::BadConfig("corpus config has no trajectories".into()));
    }
    if config.faults.is_empty() {
        return Err(Error::BadConfig("corpus config has no faults".into()));
    }
    let mut trajectories = Vec::new();
    for spec in &config.trajectories {
        for scale in &config.speed_scales {
            trajectories.push(spec.build_scaled(*scale)?);
        }
    }
    let faults: Vec<(String, FaultSpec)> =
        config.faults.iter().map(|f| (f.name.clone(), f.fault)).collect();
    let set = generate_training_corpus(
        &faults,
        &trajectories,
        &config.quad,
        &config.gains,
        config.timing,
    )?;

    fs::create_dir_all(out_dir)?;
    let mut task_files = Vec::new();
    let mut sample_counts = Vec::new();
    for (nf, (_, ds)) in config.faults.iter().zip(&set.tasks) {
        let file = format!("task_{}.csv", nf.name);
        write_dataset_csv(&out_dir.join(&file), ds)?;
        task_files.push(file);
        sample_counts.push(ds.len());
    }
    let manifest = CorpusManifest {
        config_sha256: config_hash(config),
        seed,
        faults: config.faults.clone(),
        trajectory_count: trajectories.len(),
        task_files,
        sample_counts,
        skips: set.skips.clone(),
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Load a corpus directory written by [`cli_generate_corpus`].
pub fn load_corpus(dir: &Path) -> Result<FaultTaskSet> {
    let manifest: CorpusManifest = read_json(&dir.join("manifest.json"))?;
    let mut set = FaultTaskSet { skips: manifest.skips.clone(), ..Default::default() };
    for (nf, file) in manifest.faults.iter().zip(&manifest.task_files) {
        let ds = read_dataset_csv(&dir.join(file), &nf.name)?;
        set.tasks.push((nf.fault, ds));
    }
    Ok(set)
}

/// `meta-train`: run the MAML outer loop on a corpus directory and
/// write the checkpoint plus the per-iteration trace CSV.
pub fn cli_meta_train(
    corpus_dir: &Path,
    cfg: &MetaConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<PathBuf> {
    let corpus = load_corpus(corpus_dir)?;
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    let (theta, trace) = meta_train(&corpus, &cfg)?;
    fs::create_dir_all(out_dir)?;
    let ckpt_path = out_dir.join("checkpoint.json");
    Checkpoint::from_params(&theta, seed).save(&ckpt_path)?;
    write_meta_trace_csv(&out_dir.join("meta_trace.csv"), &trace)?;
    write_json(
        &out_dir.join("meta_config.json"),
        &serde_json::json!({ "config_sha256": config_hash(&cfg), "config": cfg }),
    )?;
    Ok(ckpt_path)
}

/// Outcome of one scenario evaluation.
pub struct Evaluation {
    pub report: MetricsReport,
    pub baseline: RunLog,
    pub adapted: RunLog,
    pub trace: AdaptTrace,
}

/// Run both arms of a scenario: baseline (no reference correction) and
/// adapted (full online loop), on identical plant, gains, and seed.
pub fn evaluate_scenario(scenario: &Scenario, theta_meta: &MlpParams, seed: u64) -> Result<Evaluation> {
    let traj = scenario.trajectory.build()?;
    let mut adapt_cfg = scenario.adapt.clone();
    adapt_cfg.seed = seed;
    let initial = QuadState::at_rest(traj.samples[0].pos);
    let baseline = simulate_tracking(
        initial,
        &traj,
        scenario.fault.fault,
        &scenario.quad,
        &scenario.gains,
        scenario.timing,
    )
    .map_err(|e| Error::InvalidInput(format!("baseline arm: {e}")))?;
    let (adapted, trace) = run_adaptive_tracking(
        theta_meta,
        &traj,
        scenario.fault.fault,
        &scenario.quad,
        &scenario.gains,
        scenario.timing,
        &adapt_cfg,
    )
    .map_err(|e| Error::InvalidInput(format!("adapted arm: {e}")))?;

    let window_start = adapt_cfg.k_samples + 1;
    let report = MetricsReport {
        scenario: scenario.name.clone(),
        config_sha256: config_hash(scenario),
        average_deviation_baseline: baseline.mean_deviation_from(window_start),
        average_deviation_adapted: adapted.mean_deviation_from(window_start),
        average_deviation_baseline_all: baseline.mean_deviation(),
        average_deviation_adapted_all: adapted.mean_deviation(),
        max_deviation_baseline: baseline.max_deviation(),
        max_deviation_adapted: adapted.max_deviation(),
        relearn_count: trace.relearn_count,
        window_start,
        steps: baseline.samples.len(),
    };
    Ok(Evaluation { report, baseline, adapted, trace })
}

/// `evaluate`: run a scenario and write CSVs, report JSON, and the two
/// SVG plots (overlayed paths, deviation over time).
pub fn cli_evaluate(
    scenario: &Scenario,
    checkpoint: &Path,
    seed: u64,
    out_dir: &Path,
) -> Result<MetricsReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let theta = ckpt.to_params()?;
    let eval = evaluate_scenario(scenario, &theta, seed)?;
    fs::create_dir_all(out_dir)?;
    write_runlog_csv(&out_dir.join("runlog_baseline.csv"), &eval.baseline)?;
    write_runlog_csv(&out_dir.join("runlog_adapted.csv"), &eval.adapted)?;
    write_trace_csv(&out_dir.join("adapt_trace.csv"), &eval.trace)?;
    write_json(&out_dir.join("report.json"), &eval.report)?;

    let traj = scenario.trajectory.build()?;
    let path_series = [
        svg::Series {
            label: "desired",
            color: "black",
            points: traj.samples.iter().map(|s| (s.pos.x, s.pos.y)).collect(),
        },
        svg::Series {
            label: "baseline",
            color: "red",
            points: eval.baseline.samples.iter().map(|s| (s.state.position.x, s.state.position.y)).collect(),
        },
        svg::Series {
            label: "adapted",
            color: "green",
            points: eval.adapted.samples.iter().map(|s| (s.state.position.x, s.state.position.y)).collect(),
        },
        svg::Series {
            label: "reference",
            color: "magenta",
            points: eval.adapted.samples.iter().map(|s| (s.ref_pos.x, s.ref_pos.y)).collect(),
        },
    ];
    fs::write(
        out_dir.join("plot_path.svg"),
        svg::plot(&format!("{} paths", scenario.name), "x [m]", "y [m]", &path_series),
    )?;
    let dev_series = [
        svg::Series {
            label: "baseline",
            color: "red",
            points: eval.baseline.samples.iter().map(|s| (s.t, s.deviation)).collect(),
        },
        svg::Series {
            label: "adapted",
            color: "green",
            points: eval.adapted.samples.iter().map(|s| (s.t, s.deviation)).collect(),
        },
    ];
    fs::write(
        out_dir.join("plot_deviation.svg"),
        svg::plot(
            &format!("{} deviation over time", scenario.name),
            "t [s]",
            "deviation [m]",
            &dev_series,
        ),
    )?;
    Ok(eval.report)
}

/// `suite`: evaluate every scenario (in parallel, per-scenario output
/// directories) and write a summary table.
pub fn cli_suite(
    suite: &SuiteConfig,
    checkpoint: &Path,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<MetricsReport>> {
    if suite.scenarios.is_empty() {
        return Err(Error::BadConfig("suite has no scenarios".into()));
    }
    fs::create_dir_all(out_dir)?;
    let reports: Vec<MetricsReport> = suite
        .scenarios
        .par_iter()
        .map(|scenario| cli_evaluate(scenario, checkpoint, seed, &out_dir.join(&scenario.name)))
        .collect::<Result<_>>()?;

    let mut w = csv::Writer::from_path(out_dir.join("summary.csv"))?;
    w.write_record([
        "scenario",
        "baseline_avg_dev",
        "adapted_avg_dev",
        "ratio",
        "relearn_count",
    ])?;
    for r in &reports {
        w.write_record([
            r.scenario.clone(),
            r.average_deviation_baseline.to_string(),
            r.average_deviation_adapted.to_string(),
            (r.average_deviation_adapted / r.average_deviation_baseline).to_string(),
            r.relearn_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(reports)
}
