//! Fixed-step simulation of coupled companion-form agents.
//!
//! Each agent is a chain of integrators with a scalar drift (and optional
//! input factor) in the last equation. The network couples the agents through
//! a [`ControllerSpec`]; integral-augmented controllers get their iterated
//! integrals integrated alongside the plant as a per-agent cascade, never by
//! quadrature of stored samples. Instrumentation records states, controls,
//! the disagreement norm, and (on demand) the quadratic energy along the run.

use crate::control::{evaluate_control, ControlError, ControllerSpec};
use crate::lyapunov::LyapunovPack;
use crate::matrixcore::project_disagreement;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// States with any coordinate beyond this magnitude abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

/// Input factors at or below this magnitude are a singularity.
pub const G_FACTOR_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("input factor vanished at t = {t:.6} on agent {agent}")]
    SingularDecoupling { t: f64, agent: usize },
    #[error("state diverged at t = {t:.6} on agent {agent}")]
    Diverged { t: f64, agent: usize },
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    InvalidDimensions(String),
    #[error("order must be at least 1, got {0}")]
    InvalidOrder(usize),
    #[error(transparent)]
    Control(#[from] ControlError),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// One agent's open-loop dynamics in companion form: n−1 pure integrations
/// and a scalar drift f(t, x) plus input factor g(t, x) in the last
/// equation.
#[derive(Clone)]
pub struct AgentDynamics {
    pub order: usize,
    pub drift: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
    pub g_factor: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for AgentDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgentDynamics")
            .field("order", &self.order)
            .finish_non_exhaustive()
    }
}

impl AgentDynamics {
    /// Companion plant with unit input factor.
    pub fn new(order: usize, drift: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        AgentDynamics {
            order,
            drift: Arc::new(drift),
            g_factor: Arc::new(|_, _| 1.0),
        }
    }

    /// Companion plant with a state-dependent input factor.
    pub fn with_g(
        order: usize,
        drift: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        AgentDynamics {
            order,
            drift: Arc::new(drift),
            g_factor: Arc::new(g),
        }
    }
}

/// Van der Pol oscillator in companion form:
/// f(t, x) = −x₁ + μ(1 − |x₁|)·x₂.
pub fn van_der_pol(mu: f64) -> AgentDynamics {
    AgentDynamics::new(2, move |_, x| -x[0] + mu * (1.0 - x[0].abs()) * x[1])
}

/// Pure chain of n integrators (zero drift).
pub fn integrator_chain(order: usize) -> Result<AgentDynamics> {
    if order < 1 {
        return Err(SimError::InvalidOrder(order));
    }
    Ok(AgentDynamics::new(order, |_, _| 0.0))
}

/// Companion plant with linear drift f(x) = Σ coeffs[k]·x_{k+1} (the last
/// row of a companion matrix).
pub fn linear_companion(coeffs: Vec<f64>) -> Result<AgentDynamics> {
    if coeffs.is_empty() {
        return Err(SimError::InvalidOrder(0));
    }
    let order = coeffs.len();
    Ok(AgentDynamics::new(order, move |_, x| {
        coeffs.iter().zip(x).map(|(c, v)| c * v).sum()
    }))
}

/// The marginally stable oscillator pair used by the disturbance-rejection
/// scenarios: purely imaginary eigenvalues ±3i, not in companion form, so it
/// exercises the canonical transform.
pub fn linear_oscillator() -> (crate::matrixcore::DenseMatrix, Vec<f64>) {
    let a = crate::matrixcore::DenseMatrix::from_rows(&[vec![4.0, 5.0], vec![-5.0, -4.0]])
        .expect("static matrix");
    (a, vec![1.0, 1.0])
}

/// The oscillator pair rewritten in its companion coordinates, where the
/// coupling design lives. Returns the companion dynamics, the drift constant
/// carried by the transform, and the companion coefficients themselves.
pub fn oscillator_companion() -> (AgentDynamics, f64, Vec<f64>) {
    let (a, b) = linear_oscillator();
    let tr = crate::control::linear_canonical_transform(&a, &b).expect("controllable pair");
    let t = tr.matrix.clone().expect("linear transform carries its matrix");
    let tat = t.mul(&a).mul(&t.inverse().expect("invertible by construction"));
    let coeffs: Vec<f64> = (0..2).map(|j| tat.get(1, j)).collect();
    let dynamics = linear_companion(coeffs.clone()).expect("order 2");
    (dynamics, tr.lipschitz_w, coeffs)
}

/// Names of the built-in models, for front-end catalogs.
pub fn builtin_models() -> &'static [&'static str] {
    &["van-der-pol", "linear-oscillator", "integrator-chain"]
}

/// Additive signal on the last companion equation of one agent.
#[derive(Clone)]
pub enum Disturbance {
    None,
    /// 0 before `onset`, `magnitude` from `onset` on.
    Step { magnitude: f64, onset: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Disturbance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Disturbance::None => write!(f, "None"),
            Disturbance::Step { magnitude, onset } => f
                .debug_struct("Step")
                .field("magnitude", magnitude)
                .field("onset", onset)
                .finish(),
            Disturbance::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Disturbance {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Disturbance::None => 0.0,
            Disturbance::Step { magnitude, onset } => {
                if t >= *onset {
                    *magnitude
                } else {
                    0.0
                }
            }
            Disturbance::Custom(f) => f(t),
        }
    }
}

/// Serializable disturbance description for scenario files; expanded to
/// per-agent [`Disturbance`] signals. Custom signals exist only in the API.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceSpec {
    None,
    Step {
        magnitude: f64,
        onset: f64,
        target_agent: usize,
    },
}

/// Expand disturbance descriptions into one signal per agent.
pub fn expand_disturbances(specs: &[DisturbanceSpec], agents: usize) -> Result<Vec<Disturbance>> {
    let mut out = vec![Disturbance::None; agents];
    for spec in specs {
        match spec {
            DisturbanceSpec::None => {}
            DisturbanceSpec::Step {
                magnitude,
                onset,
                target_agent,
            } => {
                if *target_agent >= agents {
                    return Err(SimError::InvalidConfig(format!(
                        "disturbance targets agent {target_agent}, network has {agents}"
                    )));
                }
                out[*target_agent] = Disturbance::Step {
                    magnitude: *magnitude,
                    onset: *onset,
                };
            }
        }
    }
    Ok(out)
}

/// A complete closed-loop setup: identical agents, one controller, initial
/// plant states (integral states always start at zero), per-agent
/// disturbances, and the time grid.
#[derive(Debug, Clone)]
pub struct NetworkScenario {
    pub agents: usize,
    pub dynamics: AgentDynamics,
    pub controller: ControllerSpec,
    pub initial_states: Vec<Vec<f64>>,
    /// One entry per agent, or empty for no disturbances anywhere.
    pub disturbances: Vec<Disturbance>,
    pub t_end: f64,
    pub dt: f64,
    /// Seed that generated any randomized fields; kept so a run can be
    /// rebuilt from its summary.
    pub seed: u64,
}

/// Uniform random plant states in a per-coordinate box. With `zero_mean`,
/// the per-order network mean is subtracted afterwards, which pins the
/// consensus trajectory at the origin for drift-free plants.
pub fn random_initial_states(
    agents: usize,
    order: usize,
    lo: &[f64],
    hi: &[f64],
    zero_mean: bool,
    seed: u64,
) -> Vec<Vec<f64>> {
    assert_eq!(lo.len(), order);
    assert_eq!(hi.len(), order);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states: Vec<Vec<f64>> = (0..agents)
        .map(|_| {
            (0..order)
                .map(|k| {
                    if hi[k] > lo[k] {
                        rng.random_range(lo[k]..hi[k])
                    } else {
                        lo[k]
                    }
                })
                .collect()
        })
        .collect();
    if zero_mean {
        for k in 0..order {
            let mean: f64 = states.iter().map(|row| row[k]).sum::<f64>() / agents as f64;
            for row in states.iter_mut() {
                row[k] -= mean;
            }
        }
    }
    states
}

/// Sampled closed-loop run: times, flat state/integral/control storage, the
/// disagreement norm per sample, and the energy trace once attached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub agents: usize,
    pub order: usize,
    pub integral_degree: usize,
    states: Vec<f64>,
    integrals: Vec<f64>,
    controls: Vec<f64>,
    pub error_norm: Vec<f64>,
    pub lyapunov: Option<Vec<f64>>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// x_k of one agent at one sample (k is 1-based).
    pub fn state(&self, sample: usize, agent: usize, k: usize) -> f64 {
        self.states[(sample * self.agents + agent) * self.order + (k - 1)]
    }

    /// All plant states at one sample, agents × order.
    pub fn states_at(&self, sample: usize) -> Vec<Vec<f64>> {
        (0..self.agents)
            .map(|i| (1..=self.order).map(|k| self.state(sample, i, k)).collect())
            .collect()
    }

    /// m-times-iterated integral state of one agent (m is 1-based).
    pub fn integral(&self, sample: usize, agent: usize, m: usize) -> f64 {
        self.integrals[(sample * self.agents + agent) * self.integral_degree + (m - 1)]
    }

    /// All integral states at one sample, agents × degree.
    pub fn integrals_at(&self, sample: usize) -> Vec<Vec<f64>> {
        (0..self.agents)
            .map(|i| {
                (1..=self.integral_degree)
                    .map(|m| self.integral(sample, i, m))
                    .collect()
            })
            .collect()
    }

    /// Physical control input applied to one agent at one sample.
    pub fn control(&self, sample: usize, agent: usize) -> f64 {
        self.controls[sample * self.agents + agent]
    }

    pub fn final_error(&self) -> f64 {
        *self.error_norm.last().expect("record has samples")
    }
}

fn stack_error_norm(states: &[Vec<f64>], agents: usize, order: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..order {
        let mean: f64 = states.iter().map(|row| row[k]).sum::<f64>() / agents as f64;
        for row in states {
            let d = row[k] - mean;
            total += d * d;
        }
    }
    total.sqrt()
}

struct StepContext<'a> {
    sc: &'a NetworkScenario,
    order: usize,
    degree: usize,
    width: usize,
}

impl<'a> StepContext<'a> {
    /// Split the flat network state into per-agent plant rows and integral
    /// rows.
    fn split(&self, y: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut states = Vec::with_capacity(self.sc.agents);
        let mut integrals = Vec::with_capacity(self.sc.agents);
        for i in 0..self.sc.agents {
            let base = i * self.width;
            integrals.push(y[base..base + self.degree].to_vec());
            states.push(y[base + self.degree..base + self.width].to_vec());
        }
        (states, integrals)
    }

    /// Companion-coordinates control for every agent at the given stage
    /// state.
    fn controls(&self, t: f64, states: &[Vec<f64>], integrals: &[Vec<f64>]) -> Result<Vec<f64>> {
        (0..self.sc.agents)
            .map(|agent| {
                evaluate_control(&self.sc.controller, states, integrals, agent).map_err(|e| {
                    match e {
                        ControlError::SingularDecoupling { .. } => {
                            SimError::SingularDecoupling { t, agent }
                        }
                        other => SimError::Control(other),
                    }
                })
            })
            .collect()
    }

    /// Time derivative of the flat network state.
    fn deriv(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        let (states, integrals) = self.split(y);
        let u = self.controls(t, &states, &integrals)?;
        for i in 0..self.sc.agents {
            let base = i * self.width;
            let x = &states[i];
            // Integral cascade: the first integrator feeds on the first
            // companion coordinate, each deeper one on the previous.
            if self.degree > 0 {
                let z1 = match &self.sc.controller.transform {
                    Some(tr) => (tr.forward)(x)[0],
                    None => x[0],
                };
                out[base] = z1;
                for m in 1..self.degree {
                    out[base + m] = y[base + m - 1];
                }
            }
            for k in 0..self.order - 1 {
                out[base + self.degree + k] = x[k + 1];
            }
            let d = self
                .sc
                .disturbances
                .get(i)
                .map(|dist| dist.at(t))
                .unwrap_or(0.0);
            out[base + self.degree + self.order - 1] =
                (self.sc.dynamics.drift)(t, x) + u[i] + d;
        }
        Ok(())
    }
}

/// Integrate the closed loop with the classical 4th-order fixed-step scheme,
/// re-evaluating the control at every stage. Records samples at every step
/// start plus the final time: plant states, integral states, physical
/// controls (companion control divided by the input factor), and the
/// disagreement norm. Aborts on vanishing input factors and on states
/// leaving the ±1e9 box.
pub fn simulate(sc: &NetworkScenario) -> Result<TrajectoryRecord> {
    let order = sc.dynamics.order;
    let degree = sc.controller.integral_degree;
    if sc.agents == 0 {
        return Err(SimError::InvalidConfig("no agents".into()));
    }
    if sc.controller.order != order {
        return Err(SimError::InvalidDimensions(format!(
            "controller order {} does not match plant order {order}",
            sc.controller.order
        )));
    }
    if sc.controller.agents() != sc.agents {
        return Err(SimError::InvalidDimensions(format!(
            "controller couples {} agents, scenario has {}",
            sc.controller.agents(),
            sc.agents
        )));
    }
    if sc.initial_states.len() != sc.agents
        || sc.initial_states.iter().any(|row| row.len() != order)
    {
        return Err(SimError::InvalidDimensions(format!(
            "initial states must be {}x{order}",
            sc.agents
        )));
    }
    if !sc.disturbances.is_empty() && sc.disturbances.len() != sc.agents {
        return Err(SimError::InvalidConfig(format!(
            "need one disturbance per agent or none, got {}",
            sc.disturbances.len()
        )));
    }
    if !(sc.dt > 0.0) || !sc.dt.is_finite() {
        return Err(SimError::InvalidConfig(format!("dt must be positive, got {}", sc.dt)));
    }
    if !(sc.t_end >= sc.dt) || !sc.t_end.is_finite() {
        return Err(SimError::InvalidConfig(format!(
            "t_end must be at least one step, got {}",
            sc.t_end
        )));
    }

    let ctx = StepContext {
        sc,
        order,
        degree,
        width: order + degree,
    };
    let dim = sc.agents * ctx.width;
    let steps = (sc.t_end / sc.dt).round().max(1.0) as usize;

    let mut y = vec![0.0; dim];
    for (i, row) in sc.initial_states.iter().enumerate() {
        y[i * ctx.width + degree..(i + 1) * ctx.width].copy_from_slice(row);
    }

    let mut rec = TrajectoryRecord {
        times: Vec::with_capacity(steps + 1),
        agents: sc.agents,
        order,
        integral_degree: degree,
        states: Vec::with_capacity((steps + 1) * sc.agents * order),
        integrals: Vec::with_capacity((steps + 1) * sc.agents * degree),
        controls: Vec::with_capacity((steps + 1) * sc.agents),
        error_norm: Vec::with_capacity(steps + 1),
        lyapunov: None,
    };

    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut stage = vec![0.0; dim];

    for step in 0..=steps {
        let t = step as f64 * sc.dt;

        let (states, integrals) = ctx.split(&y);
        let u_tilde = ctx.controls(t, &states, &integrals)?;
        for (agent, (x, ut)) in states.iter().zip(&u_tilde).enumerate() {
            let g = (sc.dynamics.g_factor)(t, x);
            if !(g.abs() > G_FACTOR_TOL) {
                return Err(SimError::SingularDecoupling { t, agent });
            }
            rec.controls.push(ut / g);
        }
        rec.times.push(t);
        for row in &states {
            rec.states.extend_from_slice(row);
        }
        for q in &integrals {
            rec.integrals.extend_from_slice(q);
        }
        rec.error_norm.push(stack_error_norm(&states, sc.agents, order));

        if step == steps {
            break;
        }

        let h = sc.dt;
        ctx.deriv(t, &y, &mut k1)?;
        for i in 0..dim {
            stage[i] = y[i] + 0.5 * h * k1[i];
        }
        ctx.deriv(t + 0.5 * h, &stage, &mut k2)?;
        for i in 0..dim {
            stage[i] = y[i] + 0.5 * h * k2[i];
        }
        ctx.deriv(t + 0.5 * h, &stage, &mut k3)?;
        for i in 0..dim {
            stage[i] = y[i] + h * k3[i];
        }
        ctx.deriv(t + h, &stage, &mut k4)?;
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }

        for (idx, v) in y.iter().enumerate() {
            if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
                return Err(SimError::Diverged {
                    t: t + h,
                    agent: idx / ctx.width,
                });
            }
        }
    }

    Ok(rec)
}

/// Energy V = ½ eᵀM̃e along a recorded run. The pack may cover the plant
/// stack (order n) or, for integral-augmented controllers, the augmented
/// stack of order n+h whose leading coordinates are the integral states
/// deepest-first. The energy-decrease guarantee assumes no disturbances;
/// the trace itself is computed either way.
pub fn lyapunov_trace(rec: &TrajectoryRecord, pack: &LyapunovPack) -> Result<Vec<f64>> {
    let n = rec.order;
    let h = rec.integral_degree;
    let agents = rec.agents;
    let dim = pack.m_tilde.dim();
    let augmented = if dim == n * agents {
        false
    } else if h > 0 && dim == (n + h) * agents {
        true
    } else {
        return Err(SimError::InvalidDimensions(format!(
            "energy matrices are {dim}x{dim}; plant stack is {}, augmented stack is {}",
            n * agents,
            (n + h) * agents
        )));
    };
    let stack_order = if augmented { n + h } else { n };

    let mut trace = Vec::with_capacity(rec.len());
    let mut y = vec![0.0; stack_order * agents];
    for sample in 0..rec.len() {
        for agent in 0..agents {
            if augmented {
                // Augmented companion coordinates: deepest integral first,
                // then the shallower ones, then the plant chain.
                for m in 0..h {
                    y[m * agents + agent] = rec.integral(sample, agent, h - m);
                }
                for k in 0..n {
                    y[(h + k) * agents + agent] = rec.state(sample, agent, k + 1);
                }
            } else {
                for k in 0..n {
                    y[k * agents + agent] = rec.state(sample, agent, k + 1);
                }
            }
        }
        let e = project_disagreement(&y, stack_order, agents)
            .map_err(|_| SimError::InvalidDimensions("stack projection failed".into()))?;
        trace.push(pack.energy(&e));
    }
    Ok(trace)
}

/// Monotonicity check for an energy trace: the worst forward difference per
/// unit time must not exceed 1e-6 of the trace's peak.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MonotonicityVerdict {
    pub pass: bool,
    pub worst_rate: f64,
    pub tolerance: f64,
}

pub fn nonincreasing_verdict(values: &[f64], dt: f64) -> MonotonicityVerdict {
    let peak = values.iter().copied().fold(0.0f64, f64::max);
    let tolerance = 1e-6 * peak;
    let worst_rate = values
        .windows(2)
        .map(|w| (w[1] - w[0]) / dt)
        .fold(f64::NEG_INFINITY, f64::max);
    MonotonicityVerdict {
        pass: worst_rate <= tolerance,
        worst_rate,
        tolerance,
    }
}

/// Long-format CSV of the plant states: `t,agent,order,value`, one row per
/// (sample, agent, coordinate). Samples are decimated by `stride` (≥ 1); the
/// final sample is always included.
pub fn trajectory_csv(rec: &TrajectoryRecord, stride: usize) -> String {
    let stride = stride.max(1);
    let mut out = String::from("t,agent,order,value\n");
    let mut sample = 0;
    loop {
        for agent in 0..rec.agents {
            for k in 1..=rec.order {
                let v = rec.state(sample, agent, k);
                out.push_str(&format!("{},{agent},{k},{v}\n", rec.times[sample]));
            }
        }
        if sample == rec.len() - 1 {
            break;
        }
        sample = (sample + stride).min(rec.len() - 1);
    }
    out
}

/// Summary CSV `t,error_norm,V` with the same decimation rule; the V column
/// is empty when no energy trace is attached.
pub fn summary_csv(rec: &TrajectoryRecord, stride: usize) -> String {
    let stride = stride.max(1);
    let mut out = String::from("t,error_norm,V\n");
    let mut sample = 0;
    loop {
        let v = match &rec.lyapunov {
            Some(trace) => format!("{}", trace[sample]),
            None => String::new(),
        };
        out.push_str(&format!(
            "{},{},{v}\n",
            rec.times[sample], rec.error_norm[sample]
        ));
        if sample == rec.len() - 1 {
            break;
        }
        sample = (sample + stride).min(rec.len() - 1);
    }
    out
}

pub mod presets;
