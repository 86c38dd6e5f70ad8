//! 12-state quadrotor dynamics with a fixed cascaded PID controller and
//! actuator-fault injection between controller output and plant input.
//!
//! The controller is the "baseline" the rest of the pipeline treats as a
//! black box: position PID producing a desired acceleration, converted to
//! a thrust magnitude and roll/pitch commands, an attitude PID producing
//! torques, and a mixer solving for the four rotor thrusts. Faults scale
//! the commanded rotor thrusts (multiplicative effectiveness) and may
//! bias the commanded roll angle.
//!
//! Geometry: cross ("X") configuration, body x forward / y left / z up.
//! Rotor 1 front-right, 2 front-left, 3 back-left, 4 back-right; rotors
//! 1 and 3 spin opposite to 2 and 4.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::trajgen::{closest_point_on_traj, Trajectory};
use crate::{Error, Result};

/// 12-dimensional vehicle state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadState {
    /// World-frame position [m].
    pub position: Vector3<f64>,
    /// World-frame velocity [m/s].
    pub velocity: Vector3<f64>,
    /// ZYX Euler attitude [rad]: roll, pitch, yaw.
    pub attitude: Vector3<f64>,
    /// Body-frame angular rate [rad/s].
    pub angular_rate: Vector3<f64>,
}

impl QuadState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        QuadState {
            position,
            velocity: Vector3::zeros(),
            attitude: Vector3::zeros(),
            angular_rate: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.attitude.iter().all(|v| v.is_finite())
            && self.angular_rate.iter().all(|v| v.is_finite())
    }

    /// Valid iff finite and away from the ±π/2 gimbal-lock abort bound.
    pub fn is_valid(&self) -> bool {
        self.is_finite()
            && self.attitude.x.abs() < std::f64::consts::FRAC_PI_2
            && self.attitude.y.abs() < std::f64::consts::FRAC_PI_2
    }
}

/// Physical plant parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QuadParams {
    pub mass: f64,
    pub arm_length: f64,
    pub inertia_diag: Vector3<f64>,
    pub thrust_coeff: f64,
    pub drag_torque_coeff: f64,
    pub gravity: f64,
    pub max_rotor_thrust: f64,
}

impl Default for QuadParams {
    /// Hummingbird-like defaults.
    fn default() -> Self {
        QuadParams {
            mass: 0.5,
            arm_length: 0.17,
            inertia_diag: Vector3::new(4.9e-3, 4.9e-3, 8.8e-3),
            thrust_coeff: 6.1e-6,
            drag_torque_coeff: 1.5e-7,
            gravity: 9.81,
            max_rotor_thrust: 4.0,
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<()> {
        let positive = self.mass > 0.0
            && self.arm_length > 0.0
            && self.inertia_diag.iter().all(|v| *v > 0.0)
            && self.thrust_coeff > 0.0
            && self.drag_torque_coeff > 0.0
            && self.gravity > 0.0
            && self.max_rotor_thrust > 0.0;
        if !positive {
            return Err(Error::BadConfig("quad params must be strictly positive".into()));
        }
        if self.max_rotor_thrust <= self.mass * self.gravity / 4.0 {
            return Err(Error::BadConfig("hover infeasible: max_rotor_thrust too small".into()));
        }
        Ok(())
    }

    pub fn hover_thrust_per_rotor(&self) -> f64 {
        self.mass * self.gravity / 4.0
    }
}

/// Per-rotor thrust-effectiveness multipliers plus an attitude-command
/// bias; one fault defines one meta-learning task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub rotor_effectiveness: [f64; 4],
    #[serde(default)]
    pub roll_bias: f64,
}

impl FaultSpec {
    pub fn nominal() -> Self {
        FaultSpec { rotor_effectiveness: [1.0; 4], roll_bias: 0.0 }
    }

    /// Reduced effectiveness on a single rotor (1-based index).
    pub fn rotor(rotor: usize, effectiveness: f64) -> Self {
        let mut eff = [1.0; 4];
        eff[rotor - 1] = effectiveness;
        FaultSpec { rotor_effectiveness: eff, roll_bias: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotor_effectiveness.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::BadConfig("rotor effectiveness must be in [0,1]".into()));
        }
        if self.roll_bias.abs() >= std::f64::consts::FRAC_PI_6 {
            return Err(Error::BadConfig("|roll_bias| must be < pi/6".into()));
        }
        Ok(())
    }
}

/// Commanded (pre-fault) rotor thrusts [N].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlCommand {
    pub rotor_thrusts: [f64; 4],
}

/// PID gains for the cascaded controller; scalar per loop, applied on
/// all axes (z position uses its own pair since thrust authority differs
/// from lateral authority).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ControllerGains {
    pub pos_kp: f64,
    pub pos_kd: f64,
    pub pos_ki: f64,
    pub z_kp: f64,
    pub z_kd: f64,
    pub z_ki: f64,
    pub att_kp: f64,
    pub att_kd: f64,
    pub att_ki: f64,
    pub yaw_kp: f64,
    pub yaw_kd: f64,
    /// Limit on commanded roll/pitch [rad].
    pub max_tilt: f64,
    /// Norm clamp on the position integrator [m·s].
    pub pos_int_limit: f64,
}

impl Default for ControllerGains {
    /// Tuned once on the nominal plant for minimum-jerk tracking; frozen.
    fn default() -> Self {
        ControllerGains {
            pos_kp: 16.0,
            pos_kd: 8.0,
            pos_ki: 0.0,
            z_kp: 24.0,
            z_kd: 10.4,
            z_ki: 0.0,
            att_kp: 400.0,
            att_kd: 40.0,
            att_ki: 0.0,
            yaw_kp: 40.0,
            yaw_kd: 12.0,
            max_tilt: 0.5,
            pos_int_limit: 1.0,
        }
    }
}

/// Integrator memory of the discrete PID loops (trapezoidal rule).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ControllerMemory {
    pub pos_int: Vector3<f64>,
    pub att_int: Vector3<f64>,
    pub prev_pos_err: Option<Vector3<f64>>,
    pub prev_att_err: Option<Vector3<f64>>,
}

fn clamp_norm(v: Vector3<f64>, limit: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > limit && n > 0.0 {
        v * (limit / n)
    } else {
        v
    }
}

/// One evaluation of the cascaded position → attitude → mixer controller.
///
/// `roll_bias` models a commanded-attitude fault and is added to the
/// commanded roll angle before the attitude loop.
pub fn controller_step(
    state: &QuadState,
    ref_pos: &Vector3<f64>,
    ref_vel: &Vector3<f64>,
    gains: &ControllerGains,
    params: &QuadParams,
    mem: &ControllerMemory,
    roll_bias: f64,
    dt: f64,
) -> Result<(ControlCommand, ControllerMemory)> {
    if !state.is_finite() || !ref_pos.iter().chain(ref_vel.iter()).all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite state or reference".into()));
    }
    let mut mem_out = *mem;

    // position loop -> desired acceleration
    let pos_err = ref_pos - state.position;
    let vel_err = ref_vel - state.velocity;
    // trapezoidal integration of the position error
    let trap = match mem.prev_pos_err {
        Some(prev) => (prev + pos_err) * (0.5 * dt),
        None => pos_err * dt,
    };
    mem_out.pos_int = clamp_norm(mem.pos_int + trap, gains.pos_int_limit);
    mem_out.prev_pos_err = Some(pos_err);

    let acc_des = Vector3::new(
        gains.pos_kp * pos_err.x + gains.pos_kd * vel_err.x + gains.pos_ki * mem_out.pos_int.x,
        gains.pos_kp * pos_err.y + gains.pos_kd * vel_err.y + gains.pos_ki * mem_out.pos_int.y,
        gains.z_kp * pos_err.z + gains.z_kd * vel_err.z + gains.z_ki * mem_out.pos_int.z,
    );

    // thrust magnitude along body z
    let (phi, theta, psi) = (state.attitude.x, state.attitude.y, state.attitude.z);
    let tilt = (phi.cos() * theta.cos()).max(0.5);
    let total_thrust = (params.mass * (params.gravity + acc_des.z) / tilt).max(0.0);

    // small-angle inversion of the lateral dynamics in the yaw frame
    let g = params.gravity;
    let roll_cmd = ((acc_des.x * psi.sin() - acc_des.y * psi.cos()) / g)
        .clamp(-gains.max_tilt, gains.max_tilt)
        + roll_bias;
    let pitch_cmd =
        ((acc_des.x * psi.cos() + acc_des.y * psi.sin()) / g).clamp(-gains.max_tilt, gains.max_tilt);

    // attitude loop -> body torques
    let att_err = Vector3::new(roll_cmd - phi, pitch_cmd - theta, -psi);
    let att_trap = match mem.prev_att_err {
        Some(prev) => (prev + att_err) * (0.5 * dt),
        None => att_err * dt,
    };
    mem_out.att_int = clamp_norm(mem.att_int + att_trap, 0.5);
    mem_out.prev_att_err = Some(att_err);

    let omega = state.angular_rate;
    let torque = Vector3::new(
        params.inertia_diag.x
            * (gains.att_kp * att_err.x - gains.att_kd * omega.x + gains.att_ki * mem_out.att_int.x),
        params.inertia_diag.y
            * (gains.att_kp * att_err.y - gains.att_kd * omega.y + gains.att_ki * mem_out.att_int.y),
        params.inertia_diag.z * (gains.yaw_kp * att_err.z - gains.yaw_kd * omega.z),
    );

    // mixer: invert thrust/torque map of the X configuration
    let d = params.arm_length / std::f64::consts::SQRT_2;
    let c = params.drag_torque_coeff / params.thrust_coeff;
    let quarter = total_thrust / 4.0;
    let (tx, ty, tz) = (torque.x / (4.0 * d), torque.y / (4.0 * d), torque.z / (4.0 * c));
    let raw = [
        quarter - tx - ty + tz,
        quarter + tx - ty - tz,
        quarter + tx + ty + tz,
        quarter - tx + ty - tz,
    ];
    let rotor_thrusts = raw.map(|t| t.clamp(0.0, params.max_rotor_thrust));
    Ok((ControlCommand { rotor_thrusts }, mem_out))
}

/// Multiplicative actuator fault on the commanded rotor thrusts.
pub fn apply_fault(cmd: &ControlCommand, fault: &FaultSpec) -> [f64; 4] {
    [
        fault.rotor_effectiveness[0] * cmd.rotor_thrusts[0],
        fault.rotor_effectiveness[1] * cmd.rotor_thrusts[1],
        fault.rotor_effectiveness[2] * cmd.rotor_thrusts[2],
        fault.rotor_effectiveness[3] * cmd.rotor_thrusts[3],
    ]
}

/// Time derivative of the 12-state under fixed rotor thrusts.
fn dynamics(state: &QuadState, thrusts: &[f64; 4], params: &QuadParams) -> QuadState {
    let (phi, theta, psi) = (state.attitude.x, state.attitude.y, state.attitude.z);
    let (sp, cp) = (phi.sin(), phi.cos());
    let (st, ct) = (theta.sin(), theta.cos());
    let (ss, cs) = (psi.sin(), psi.cos());

    let total: f64 = thrusts.iter().sum();
    // third column of R_zyx: body z axis in world frame
    let body_z = Vector3::new(cs * st * cp + ss * sp, ss * st * cp - cs * sp, ct * cp);
    let accel = body_z * (total / params.mass) - Vector3::new(0.0, 0.0, params.gravity);

    // torques from rotor geometry (X config, 1 FR, 2 FL, 3 BL, 4 BR)
    let d = params.arm_length / std::f64::consts::SQRT_2;
    let c = params.drag_torque_coeff / params.thrust_coeff;
    let torque = Vector3::new(
        d * (-thrusts[0] + thrusts[1] + thrusts[2] - thrusts[3]),
        d * (-thrusts[0] - thrusts[1] + thrusts[2] + thrusts[3]),
        c * (thrusts[0] - thrusts[1] + thrusts[2] - thrusts[3]),
    );

    let i = params.inertia_diag;
    let w = state.angular_rate;
    let ang_acc = Vector3::new(
        (torque.x - (i.z - i.y) * w.y * w.z) / i.x,
        (torque.y - (i.x - i.z) * w.x * w.z) / i.y,
        (torque.z - (i.y - i.x) * w.x * w.y) / i.z,
    );

    // ZYX Euler kinematics
    let tt = st / ct;
    let att_dot = Vector3::new(
        w.x + sp * tt * w.y + cp * tt * w.z,
        cp * w.y - sp * w.z,
        sp / ct * w.y + cp / ct * w.z,
    );

    QuadState {
        position: state.velocity,
        velocity: accel,
        attitude: att_dot,
        angular_rate: ang_acc,
    }
}

fn state_axpy(a: &QuadState, s: f64, b: &QuadState) -> QuadState {
    QuadState {
        position: a.position + s * b.position,
        velocity: a.velocity + s * b.velocity,
        attitude: a.attitude + s * b.attitude,
        angular_rate: a.angular_rate + s * b.angular_rate,
    }
}

/// One fixed-step RK4 integration of the plant.
pub fn plant_step(
    state: &QuadState,
    actual_thrusts: &[f64; 4],
    params: &QuadParams,
    dt: f64,
) -> Result<QuadState> {
    if dt <= 0.0 {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    if actual_thrusts.iter().any(|t| *t < 0.0 || !t.is_finite()) {
        return Err(Error::InvalidInput("thrusts must be non-negative and finite".into()));
    }
    let k1 = dynamics(state, actual_thrusts, params);
    let k2 = dynamics(&state_axpy(state, dt / 2.0, &k1), actual_thrusts, params);
    let k3 = dynamics(&state_axpy(state, dt / 2.0, &k2), actual_thrusts, params);
    let k4 = dynamics(&state_axpy(state, dt, &k3), actual_thrusts, params);
    let mut out = *state;
    out = state_axpy(&out, dt / 6.0, &k1);
    out = state_axpy(&out, dt / 3.0, &k2);
    out = state_axpy(&out, dt / 3.0, &k3);
    out = state_axpy(&out, dt / 6.0, &k4);
    if !out.is_valid() {
        return Err(Error::Diverged {
            step: 0,
            detail: format!("attitude {:?}, finite={}", out.attitude, out.is_finite()),
        });
    }
    Ok(out)
}

/// Timing of the closed loop: reference updates every `ref_dt` (Δk),
/// controller and plant run at the faster `ctrl_dt` substep.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SimTiming {
    pub ctrl_dt: f64,
    pub ref_dt: f64,
}

impl Default for SimTiming {
    fn default() -> Self {
        SimTiming { ctrl_dt: 1e-3, ref_dt: 0.02 }
    }
}

impl SimTiming {
    pub fn substeps(&self) -> Result<usize> {
        let ratio = self.ref_dt / self.ctrl_dt;
        let n = ratio.round();
        if self.ctrl_dt <= 0.0 || self.ref_dt <= 0.0 || (ratio - n).abs() > 1e-9 || n < 1.0 {
            return Err(Error::BadConfig(format!(
                "controller step {} must evenly divide reference step {}",
                self.ctrl_dt, self.ref_dt
            )));
        }
        Ok(n as usize)
    }
}

/// One per-Δk record of a closed-loop run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSample {
    pub k: usize,
    pub t: f64,
    pub state: QuadState,
    /// Reference actually applied to the controller at this step.
    pub ref_pos: Vector3<f64>,
    pub ref_vel: Vector3<f64>,
    /// Desired trajectory point for this step.
    pub des_pos: Vector3<f64>,
    pub des_vel: Vector3<f64>,
    /// Distance to the closest desired-trajectory sample.
    pub deviation: f64,
}

/// Per-Δk log of one closed-loop run.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunLog {
    pub samples: Vec<RunSample>,
}

impl RunLog {
    /// Mean closest-point deviation over steps `from..`.
    pub fn mean_deviation_from(&self, from: usize) -> f64 {
        let tail: Vec<f64> =
            self.samples.iter().skip(from).map(|s| s.deviation).collect();
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    pub fn mean_deviation(&self) -> f64 {
        self.mean_deviation_from(0)
    }

    pub fn max_deviation(&self) -> f64 {
        self.samples.iter().map(|s| s.deviation).fold(0.0, f64::max)
    }
}

/// Closed-loop stepper: advances the faulty plant by one reference step
/// (Δk) at a time so callers can inject their own reference source.
pub struct Simulator<'a> {
    pub params: &'a QuadParams,
    pub gains: &'a ControllerGains,
    pub fault: FaultSpec,
    pub timing: SimTiming,
    pub state: QuadState,
    mem: ControllerMemory,
    substeps: usize,
    step_index: usize,
}

impl<'a> Simulator<'a> {
    pub fn new(
        params: &'a QuadParams,
        gains: &'a ControllerGains,
        fault: FaultSpec,
        timing: SimTiming,
        initial: QuadState,
    ) -> Result<Self> {
        params.validate()?;
        fault.validate()?;
        if !initial.is_valid() {
            return Err(Error::InvalidInput("initial state invalid".into()));
        }
        let substeps = timing.substeps()?;
        Ok(Simulator {
            params,
            gains,
            fault,
            timing,
            state: initial,
            mem: ControllerMemory::default(),
            substeps,
            step_index: 0,
        })
    }

    /// Advance one Δk with the given applied reference held constant
    /// over the inner control substeps.
    pub fn step(&mut self, ref_pos: &Vector3<f64>, ref_vel: &Vector3<f64>) -> Result<()> {
        for _ in 0..self.substeps {
            let (cmd, mem) = controller_step(
                &self.state,
                ref_pos,
                ref_vel,
                self.gains,
                self.params,
                &self.mem,
                self.fault.roll_bias,
                self.timing.ctrl_dt,
            )?;
            self.mem = mem;
            let actual = apply_fault(&cmd, &self.fault);
            self.state =
                plant_step(&self.state, &actual, self.params, self.timing.ctrl_dt).map_err(
                    |e| match e {
                        Error::Diverged { detail, .. } => {
                            Error::Diverged { step: self.step_index, detail }
                        }
                        other => other,
                    },
                )?;
        }
        self.step_index += 1;
        Ok(())
    }
}

/// Reference fed to the controller at step k+1: the desired trajectory
/// point with finite-difference velocity, matching the form the runtime
/// reference updater produces so that a zero correction is bit-identical
/// to this baseline.
pub fn desired_reference(traj: &Trajectory, next_k: usize) -> (Vector3<f64>, Vector3<f64>) {
    let p = traj.samples[next_k].pos;
    let prev = traj.samples[next_k.saturating_sub(1)].pos;
    let v = if next_k == 0 { Vector3::zeros() } else { (p - prev) / traj.dt };
    (p, v)
}

/// Closed-loop tracking of a desired trajectory with no reference
/// correction. Logs one sample per Δk.
pub fn simulate_tracking(
    initial: QuadState,
    traj: &Trajectory,
    fault: FaultSpec,
    params: &QuadParams,
    gains: &ControllerGains,
    timing: SimTiming,
) -> Result<RunLog> {
    if traj.len() < 2 {
        return Err(Error::Trajectory("trajectory must have at least 2 samples".into()));
    }
    let mut sim = Simulator::new(params, gains, fault, timing, initial)?;
    let mut log = RunLog::default();
    log.samples.push(make_sample(0, &sim, traj, &traj.samples[0].pos, &Vector3::zeros()));
    for k in 0..traj.len() - 1 {
        let (rp, rv) = desired_reference(traj, k + 1);
        sim.step(&rp, &rv)?;
        log.samples.push(make_sample(k + 1, &sim, traj, &rp, &rv));
    }
    Ok(log)
}

pub(crate) fn make_sample(
    k: usize,
    sim: &Simulator,
    traj: &Trajectory,
    ref_pos: &Vector3<f64>,
    ref_vel: &Vector3<f64>,
) -> RunSample {
    let (_, closest) = closest_point_on_traj(traj, &sim.state.position);
    RunSample {
        k,
        t: k as f64 * sim.timing.ref_dt,
        state: sim.state,
        ref_pos: *ref_pos,
        ref_vel: *ref_vel,
        des_pos: traj.samples[k.min(traj.len() - 1)].pos,
        des_vel: traj.samples[k.min(traj.len() - 1)].vel,
        deviation: (sim.state.position - closest).norm(),
    }
}
