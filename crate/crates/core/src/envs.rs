//! Analytic benchmark systems with closed-form ground-truth costs, and a
//! demonstration generator that optimizes a controller against the true
//! cost and samples from it.
//!
//! State layouts:
//! - point mass / navigation: `[px, py, vx, vy]`, actions are accelerations;
//! - two-link reacher: `[θ1, θ2, ω1, ω2, ex, ey, ėx, ėy]` where `e` is the
//!   end-effector position, actions are joint torques.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::polopt::{self, ExactOptConfig, Plant, StepCost};
use crate::trajmath::{ControllerStep, CostExpansion, LinearGaussianController, Trajectory};

pub const DEFAULT_HORIZON: usize = 100;
pub const DEFAULT_DT: f64 = 0.05;
pub const DEFAULT_NOISE_STD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: [f64; 2],
    pub height: f64,
    pub width: f64,
}

impl Bump {
    fn value(&self, p: &Vector2<f64>) -> f64 {
        let d = p - Vector2::from(self.center);
        self.height * (-d.norm_squared() / (self.width * self.width)).exp()
    }
}

/// Closed-form per-step ground-truth cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "form")]
pub enum GroundTruthCost {
    /// `Σ_i w_i (x_i - x*_i)² + Σ bumps(p) + w_u ‖u‖²` with `p = x[0..2]`.
    Quadratic {
        target: Vec<f64>,
        weights: Vec<f64>,
        action_weight: f64,
        #[serde(default)]
        bumps: Vec<Bump>,
    },
    /// `w d² + v log(d² + α) + w_u ‖u‖²` with `d` the distance from the
    /// end effector `x[4..6]` to `target`.
    Reacher {
        target: [f64; 2],
        w: f64,
        v: f64,
        alpha: f64,
        action_weight: f64,
    },
}

impl GroundTruthCost {
    pub fn action_weight(&self) -> f64 {
        match self {
            Self::Quadratic { action_weight, .. } | Self::Reacher { action_weight, .. } => *action_weight,
        }
    }

    /// Cost of the state alone (no action term).
    pub fn state_cost(&self, x: &DVector<f64>) -> f64 {
        match self {
            Self::Quadratic {
                target, weights, bumps, ..
            } => {
                let quad: f64 = (0..target.len()).map(|i| weights[i] * (x[i] - target[i]).powi(2)).sum();
                let p = Vector2::new(x[0], x[1]);
                quad + bumps.iter().map(|b| b.value(&p)).sum::<f64>()
            }
            Self::Reacher { target, w, v, alpha, .. } => {
                let d2 = (x[4] - target[0]).powi(2) + (x[5] - target[1]).powi(2);
                w * d2 + v * (d2 + alpha).ln()
            }
        }
    }

    /// Gradient and exact Hessian of the state cost.
    pub fn state_derivatives(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = x.len();
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        match self {
            Self::Quadratic {
                target, weights, bumps, ..
            } => {
                for i in 0..target.len() {
                    g[i] = 2.0 * weights[i] * (x[i] - target[i]);
                    h[(i, i)] = 2.0 * weights[i];
                }
                let p = Vector2::new(x[0], x[1]);
                for b in bumps {
                    let d = p - Vector2::from(b.center);
                    let w2 = b.width * b.width;
                    let e = b.value(&p);
                    let gb = -2.0 * e / w2 * d;
                    let hb = (d * d.transpose() * (4.0 / (w2 * w2)) - Matrix2::identity() * (2.0 / w2)) * e;
                    for i in 0..2 {
                        g[i] += gb[i];
                        for j in 0..2 {
                            h[(i, j)] += hb[(i, j)];
                        }
                    }
                }
            }
            Self::Reacher { target, w, v, alpha, .. } => {
                let d = Vector2::new(x[4] - target[0], x[5] - target[1]);
                let s = d.norm_squared() + alpha;
                let a = w + v / s;
                let gd = 2.0 * a * d;
                let hd = Matrix2::identity() * (2.0 * a) - d * d.transpose() * (4.0 * v / (s * s));
                for i in 0..2 {
                    g[4 + i] = gd[i];
                    for j in 0..2 {
                        h[(4 + i, 4 + j)] = hd[(i, j)];
                    }
                }
            }
        }
        (g, h)
    }

    /// Expansion with the exact Hessian (may be indefinite).
    pub fn expand_exact(&self, x: &DVector<f64>, u: &DVector<f64>) -> CostExpansion {
        let (cx, cxx) = self.state_derivatives(x);
        let wu = self.action_weight();
        CostExpansion {
            x: x.clone(),
            u: u.clone(),
            c: self.cost(x, u),
            cx,
            cu: u * (2.0 * wu),
            cxx,
            cuu: DMatrix::identity(u.len(), u.len()) * (2.0 * wu),
            cux: DMatrix::zeros(u.len(), x.len()),
        }
    }
}

impl StepCost for GroundTruthCost {
    fn cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.state_cost(x) + self.action_weight() * u.norm_squared()
    }

    /// Expansion with the state Hessian projected onto the PSD cone.
    fn expand(&self, x: &DVector<f64>, u: &DVector<f64>) -> CostExpansion {
        let mut e = self.expand_exact(x, u);
        e.cxx = linalg::psd_projection(&e.cxx);
        e
    }
}

/// Parameters of the planar two-link arm (point masses at link ends).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmParams {
    pub lengths: [f64; 2],
    pub masses: [f64; 2],
    pub gravity: f64,
    pub damping: f64,
    pub substeps: usize,
    /// Per-joint torque saturation.
    pub max_torque: f64,
    /// Per-joint speed saturation.
    pub max_speed: f64,
}

impl Default for ArmParams {
    fn default() -> Self {
        Self {
            lengths: [0.5, 0.5],
            masses: [1.0, 1.0],
            gravity: 0.0,
            damping: 0.5,
            substeps: 4,
            max_torque: 20.0,
            max_speed: 20.0,
        }
    }
}

impl ArmParams {
    pub fn end_effector(&self, q: &Vector2<f64>) -> Vector2<f64> {
        let [l1, l2] = self.lengths;
        Vector2::new(
            l1 * q[0].cos() + l2 * (q[0] + q[1]).cos(),
            l1 * q[0].sin() + l2 * (q[0] + q[1]).sin(),
        )
    }

    pub fn jacobian(&self, q: &Vector2<f64>) -> Matrix2<f64> {
        let [l1, l2] = self.lengths;
        let (s1, c1) = q[0].sin_cos();
        let (s12, c12) = (q[0] + q[1]).sin_cos();
        Matrix2::new(-l1 * s1 - l2 * s12, -l2 * s12, l1 * c1 + l2 * c12, l2 * c12)
    }

    fn acceleration(&self, q: &Vector2<f64>, w: &Vector2<f64>, tau: &Vector2<f64>) -> Vector2<f64> {
        let [l1, l2] = self.lengths;
        let [m1, m2] = self.masses;
        let c2 = q[1].cos();
        let h = m2 * l1 * l2 * q[1].sin();
        let m11 = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2.0 * m2 * l1 * l2 * c2;
        let m12 = m2 * l2 * l2 + m2 * l1 * l2 * c2;
        let m22 = m2 * l2 * l2;
        let coriolis = Vector2::new(-h * (2.0 * w[0] * w[1] + w[1] * w[1]), h * w[0] * w[0]);
        let g = self.gravity;
        let grav = Vector2::new(
            (m1 + m2) * g * l1 * q[0].cos() + m2 * g * l2 * (q[0] + q[1]).cos(),
            m2 * g * l2 * (q[0] + q[1]).cos(),
        );
        let mass = Matrix2::new(m11, m12, m12, m22);
        let rhs = tau - coriolis - grav - w * self.damping;
        mass.lu().solve(&rhs).unwrap_or_else(Vector2::zeros)
    }

    /// Full 8-dimensional state for joint angles and velocities.
    pub fn state(&self, q: Vector2<f64>, w: Vector2<f64>) -> DVector<f64> {
        let e = self.end_effector(&q);
        let ev = self.jacobian(&q) * w;
        DVector::from_vec(vec![q[0], q[1], w[0], w[1], e[0], e[1], ev[0], ev[1]])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "model")]
pub enum Dynamics {
    /// Double integrator in the plane.
    PointMass,
    /// Two-link arm integrated with semi-implicit Euler substeps.
    TwoLinkArm(ArmParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub name: String,
    pub dynamics: Dynamics,
    pub cost: GroundTruthCost,
    pub horizon: usize,
    pub dt: f64,
    pub noise_std: f64,
    pub init_mean: Vec<f64>,
    pub init_std: Vec<f64>,
}

impl EnvSpec {
    pub fn point_mass(goal: [f64; 2], action_weight: f64) -> Self {
        Self {
            name: "point-mass".into(),
            dynamics: Dynamics::PointMass,
            cost: GroundTruthCost::Quadratic {
                target: vec![goal[0], goal[1], 0.0, 0.0],
                weights: vec![1.0, 1.0, 0.1, 0.1],
                action_weight,
                bumps: Vec::new(),
            },
            horizon: DEFAULT_HORIZON,
            dt: DEFAULT_DT,
            noise_std: DEFAULT_NOISE_STD,
            init_mean: vec![0.0; 4],
            init_std: vec![1e-2, 1e-2, 1e-3, 1e-3],
        }
    }

    /// Point mass with three obstacle bumps between the start and the goal.
    pub fn nav2d() -> Self {
        let mut env = Self::point_mass([1.0, 1.0], 0.1);
        env.name = "nav2d".into();
        env.cost = GroundTruthCost::Quadratic {
            target: vec![1.0, 1.0, 0.0, 0.0],
            weights: vec![1.0, 1.0, 0.05, 0.05],
            action_weight: 0.1,
            bumps: vec![
                Bump {
                    center: [0.5, 0.5],
                    height: 3.0,
                    width: 0.2,
                },
                Bump {
                    center: [0.15, 0.75],
                    height: 2.0,
                    width: 0.15,
                },
                Bump {
                    center: [0.8, 0.25],
                    height: 2.0,
                    width: 0.15,
                },
            ],
        };
        env
    }

    pub fn reacher() -> Self {
        let arm = ArmParams::default();
        let init = arm.state(Vector2::new(-0.5, 1.2), Vector2::zeros());
        Self {
            name: "reacher".into(),
            dynamics: Dynamics::TwoLinkArm(arm),
            cost: GroundTruthCost::Reacher {
                target: [0.3, 0.6],
                w: 2.0,
                v: 0.2,
                alpha: 1e-2,
                action_weight: 0.1,
            },
            horizon: DEFAULT_HORIZON,
            dt: DEFAULT_DT,
            noise_std: DEFAULT_NOISE_STD,
            init_mean: init.iter().copied().collect(),
            init_std: vec![1e-3; 8],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "point-mass" | "pointmass" => {
                let mut env = Self::point_mass([0.0, 0.0], 1.0);
                env.init_mean = vec![1.0, 0.0, 0.0, 0.0];
                Ok(env)
            }
            "nav2d" => Ok(Self::nav2d()),
            "reacher" => Ok(Self::reacher()),
            other => Err(Error::Config(format!(
                "unknown environment '{other}' (expected point-mass, nav2d or reacher)"
            ))),
        }
    }

    pub fn d_x(&self) -> usize {
        self.init_mean.len()
    }

    pub fn d_u(&self) -> usize {
        2
    }

    /// State components the learned cost sees by default.
    pub fn cost_inputs(&self) -> Vec<usize> {
        match self.dynamics {
            Dynamics::PointMass => vec![0, 1, 2, 3],
            Dynamics::TwoLinkArm(_) => vec![4, 5, 6, 7],
        }
    }

    /// Copy of the environment started from `state` (same spread).
    pub fn with_initial_state(&self, state: &DVector<f64>) -> Self {
        let mut env = self.clone();
        env.init_mean = state.iter().copied().collect();
        env
    }

    /// Initial states spread around the default start.
    pub fn initial_conditions(&self, n: usize) -> Vec<DVector<f64>> {
        (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / n.max(1) as f64;
                let r = if n == 1 { 0.0 } else { 0.2 };
                match &self.dynamics {
                    Dynamics::PointMass => {
                        let mut x = DVector::from_vec(self.init_mean.clone());
                        x[0] += r * a.cos();
                        x[1] += r * a.sin();
                        x
                    }
                    Dynamics::TwoLinkArm(arm) => {
                        let q = Vector2::new(self.init_mean[0] + 2.0 * r * a.cos(), self.init_mean[1] + r * a.sin());
                        arm.state(q, Vector2::zeros())
                    }
                }
            })
            .collect()
    }

    /// Goal in the space `distance_to_goal` measures.
    pub fn goal_position(&self) -> [f64; 2] {
        match &self.cost {
            GroundTruthCost::Quadratic { target, .. } => [target[0], target[1]],
            GroundTruthCost::Reacher { target, .. } => *target,
        }
    }

    pub fn distance_to_goal(&self, x: &DVector<f64>) -> f64 {
        match &self.cost {
            GroundTruthCost::Quadratic { target, .. } => ((x[0] - target[0]).powi(2) + (x[1] - target[1]).powi(2)).sqrt(),
            GroundTruthCost::Reacher { target, .. } => ((x[4] - target[0]).powi(2) + (x[5] - target[1]).powi(2)).sqrt(),
        }
    }

    fn deterministic_step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let dt = self.dt;
        match &self.dynamics {
            Dynamics::PointMass => DVector::from_vec(vec![
                x[0] + dt * x[2] + 0.5 * dt * dt * u[0],
                x[1] + dt * x[3] + 0.5 * dt * dt * u[1],
                x[2] + dt * u[0],
                x[3] + dt * u[1],
            ]),
            Dynamics::TwoLinkArm(arm) => {
                let mut q = Vector2::new(x[0], x[1]);
                let mut w = Vector2::new(x[2], x[3]);
                let tau = Vector2::new(u[0], u[1]).map(|v| v.clamp(-arm.max_torque, arm.max_torque));
                let h = dt / arm.substeps.max(1) as f64;
                for _ in 0..arm.substeps.max(1) {
                    w += arm.acceleration(&q, &w, &tau) * h;
                    w = w.map(|v| v.clamp(-arm.max_speed, arm.max_speed));
                    q += w * h;
                }
                arm.state(q, w)
            }
        }
    }
}

fn check_finite(x: &DVector<f64>, u: &DVector<f64>) -> Result<()> {
    if x.iter().chain(u.iter()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("environment step input".into()))
    }
}

/// One noisy transition.
pub fn env_step<R: rand::Rng + ?Sized>(
    env: &EnvSpec,
    x: &DVector<f64>,
    u: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let next = env.step_mean(x, u)?;
    if env.noise_std == 0.0 {
        return Ok(next);
    }
    Ok(next + linalg::standard_normal(env.d_x(), rng) * env.noise_std)
}

pub fn ground_truth_cost(env: &EnvSpec, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    check_finite(x, u)?;
    Ok(env.cost.cost(x, u))
}

impl Plant for EnvSpec {
    fn state_dim(&self) -> usize {
        self.d_x()
    }

    fn action_dim(&self) -> usize {
        self.d_u()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn initial_mean(&self) -> DVector<f64> {
        DVector::from_vec(self.init_mean.clone())
    }

    fn initial_cov(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(self.d_x(), self.init_std.iter().map(|s| s * s)))
    }

    fn process_noise_cov(&self) -> DMatrix<f64> {
        DMatrix::identity(self.d_x(), self.d_x()) * self.noise_std.powi(2)
    }

    fn step_mean(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_finite(x, u)?;
        if x.len() != self.d_x() || u.len() != self.d_u() {
            return Err(Error::dims(0, format!("state {} / action {} for {}", x.len(), u.len(), self.name)));
        }
        let next = self.deterministic_step(x, u);
        if next.iter().all(|v| v.is_finite()) {
            Ok(next)
        } else {
            Err(Error::NonFinite(format!("{} step produced a non-finite state", self.name)))
        }
    }

    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_finite(x, u)?;
        let dt = self.dt;
        match self.dynamics {
            Dynamics::PointMass => {
                let mut fx = DMatrix::identity(4, 4);
                fx[(0, 2)] = dt;
                fx[(1, 3)] = dt;
                let mut fu = DMatrix::zeros(4, 2);
                fu[(0, 0)] = 0.5 * dt * dt;
                fu[(1, 1)] = 0.5 * dt * dt;
                fu[(2, 0)] = dt;
                fu[(3, 1)] = dt;
                Ok((fx, fu))
            }
            Dynamics::TwoLinkArm(_) => {
                let h = 1e-6;
                let mut fx = DMatrix::zeros(8, 8);
                let mut fu = DMatrix::zeros(8, 2);
                for i in 0..8 {
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[i] += h;
                    xm[i] -= h;
                    fx.set_column(i, &((self.deterministic_step(&xp, u) - self.deterministic_step(&xm, u)) / (2.0 * h)));
                }
                for i in 0..2 {
                    let (mut up, mut um) = (u.clone(), u.clone());
                    up[i] += h;
                    um[i] -= h;
                    fu.set_column(i, &((self.deterministic_step(x, &up) - self.deterministic_step(x, &um)) / (2.0 * h)));
                }
                Ok((fx, fu))
            }
        }
    }
}

/// Zero-gain controller with isotropic action noise.
pub fn initial_controller(env: &EnvSpec, variance: f64) -> Result<LinearGaussianController> {
    LinearGaussianController::isotropic(env.horizon, env.d_x(), env.d_u(), variance)
}

/// Demonstrations and the controllers that produced them.
#[derive(Debug, Clone)]
pub struct DemoSet {
    pub demos: Vec<Trajectory>,
    /// Initial-condition index of each demo.
    pub conditions: Vec<usize>,
    /// Optimized controller per initial condition.
    pub controllers: Vec<LinearGaussianController>,
    pub initial_states: Vec<DVector<f64>>,
}

impl DemoSet {
    pub fn for_condition(&self, c: usize) -> Vec<Trajectory> {
        self.demos
            .iter()
            .zip(&self.conditions)
            .filter(|(_, &k)| k == c)
            .map(|(d, _)| d.clone())
            .collect()
    }
}

/// Optimizes a controller against the ground-truth cost from each initial
/// condition, then samples `n_demos` trajectories assigned round-robin to
/// the conditions. `action_noise_scale` multiplies the action covariance of
/// the sampled demos (1 gives the maximum-entropy distribution, 0 replays
/// mean actions).
pub fn generate_demos<R: rand::Rng + ?Sized>(
    env: &EnvSpec,
    initial_conditions: &[DVector<f64>],
    n_demos: usize,
    action_noise_scale: f64,
    rng: &mut R,
) -> Result<DemoSet> {
    if n_demos == 0 || initial_conditions.is_empty() {
        return Err(Error::InvalidArgument(
            "demo generation needs at least one demo and one initial condition".into(),
        ));
    }
    if n_demos < initial_conditions.len() {
        return Err(Error::InvalidArgument(format!(
            "{n_demos} demos cannot cover {} initial conditions",
            initial_conditions.len()
        )));
    }
    let mut controllers = Vec::with_capacity(initial_conditions.len());
    for x0 in initial_conditions {
        let local = env.with_initial_state(x0);
        let run = polopt::optimize_exact(&local, &env.cost, &initial_controller(env, 1.0)?, &ExactOptConfig::default())?;
        controllers.push(run.controller);
    }
    let mut demos = Vec::with_capacity(n_demos);
    let mut conditions = Vec::with_capacity(n_demos);
    for i in 0..n_demos {
        let c = i % initial_conditions.len();
        let local = env.with_initial_state(&initial_conditions[c]);
        let ctrl = scale_covariance(&controllers[c], action_noise_scale)?;
        demos.push(rollout_scaled(&local, &ctrl, action_noise_scale, rng)?);
        conditions.push(c);
    }
    Ok(DemoSet {
        demos,
        conditions,
        controllers,
        initial_states: initial_conditions.to_vec(),
    })
}

fn scale_covariance(ctrl: &LinearGaussianController, scale: f64) -> Result<LinearGaussianController> {
    if scale == 1.0 || scale == 0.0 {
        return Ok(ctrl.clone());
    }
    LinearGaussianController::new(
        ctrl.steps()
            .iter()
            .map(|s| ControllerStep {
                gain: s.gain.clone(),
                offset: s.offset.clone(),
                cov: &s.cov * scale,
            })
            .collect(),
    )
}

fn rollout_scaled<R: rand::Rng + ?Sized>(
    env: &EnvSpec,
    ctrl: &LinearGaussianController,
    scale: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    if scale > 0.0 {
        return polopt::rollout_plant(env, ctrl, rng);
    }
    let mut x = linalg::sample_gaussian(&env.initial_mean(), &linalg::psd_sqrt(&env.initial_cov()), rng);
    let (mut xs, mut us) = (Vec::new(), Vec::new());
    for t in 0..env.horizon {
        let u = ctrl.mean_action(t, &x);
        if t + 1 < env.horizon {
            let next = env_step(env, &x, &u, rng)?;
            xs.push(std::mem::replace(&mut x, next));
        } else {
            xs.push(x.clone());
        }
        us.push(u);
    }
    Trajectory::new(xs, us)
}

/// Metadata written next to a demo directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoManifest {
    pub env: String,
    pub seed: u64,
    pub horizon: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub files: Vec<String>,
    pub conditions: Vec<usize>,
}

pub const DEMO_MANIFEST: &str = "manifest.json";

/// Writes `demo_###.csv` files and `manifest.json` into `dir`.
pub fn write_demos(dir: &Path, env: &EnvSpec, seed: u64, set: &DemoSet) -> Result<DemoManifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(set.demos.len());
    for (i, d) in set.demos.iter().enumerate() {
        let name = format!("demo_{i:03}.csv");
        d.write_csv(dir.join(&name))?;
        files.push(name);
    }
    let manifest = DemoManifest {
        env: env.name.clone(),
        seed,
        horizon: env.horizon,
        state_dim: env.d_x(),
        action_dim: env.d_u(),
        files,
        conditions: set.conditions.clone(),
    };
    std::fs::write(dir.join(DEMO_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads a demo directory written by [`write_demos`].
pub fn read_demos(dir: &Path) -> Result<(DemoManifest, Vec<Trajectory>)> {
    let manifest: DemoManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(DEMO_MANIFEST))?)?;
    let demos = manifest
        .files
        .iter()
        .map(|f| Trajectory::read_csv(PathBuf::from(dir).join(f)))
        .collect::<Result<Vec<_>>>()?;
    for (f, d) in manifest.files.iter().zip(&demos) {
        if d.horizon() != manifest.horizon || d.state_dim() != manifest.state_dim || d.action_dim() != manifest.action_dim {
            return Err(Error::Parse(format!("{f} does not match the manifest dimensions")));
        }
    }
    Ok((manifest, demos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn quiet(mut env: EnvSpec) -> EnvSpec {
        env.noise_std = 0.0;
        env.init_std = vec![0.0; env.d_x()];
        env
    }

    fn fd_gradient(cost: &GroundTruthCost, x: &DVector<f64>) -> DVector<f64> {
        let h = 1e-6;
        DVector::from_fn(x.len(), |i, _| {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            (cost.state_cost(&xp) - cost.state_cost(&xm)) / (2.0 * h)
        })
    }

    #[test]
    fn point_mass_at_rest_stays_put() {
        let env = quiet(EnvSpec::point_mass([1.0, 1.0], 0.1));
        let x = DVector::from_vec(vec![0.3, -0.2, 0.0, 0.0]);
        let next = env_step(&env, &x, &DVector::zeros(2), &mut substream(0, "t")).unwrap();
        assert_eq!(next, x);
        assert_eq!(env.d_x(), 4);
        assert_eq!(env.d_u(), 2);
    }

    #[test]
    fn arm_without_torque_or_gravity_is_at_equilibrium() {
        let env = quiet(EnvSpec::reacher());
        let x0 = DVector::from_vec(env.init_mean.clone());
        let mut x = x0.clone();
        for _ in 0..50 {
            x = env_step(&env, &x, &DVector::zeros(2), &mut substream(0, "t")).unwrap();
        }
        assert_eq!(x.len(), 8);
        for i in 0..8 {
            assert_relative_eq!(x[i], x0[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn end_effector_matches_forward_kinematics() {
        let arm = ArmParams::default();
        let s = arm.state(Vector2::new(0.0, std::f64::consts::FRAC_PI_2), Vector2::new(1.0, 0.0));
        assert_relative_eq!(s[4], 0.5, epsilon = 1e-12);
        assert_relative_eq!(s[5], 0.5, epsilon = 1e-12);
        // rotating the whole arm at 1 rad/s about the base
        assert_relative_eq!(s[6], -0.5, epsilon = 1e-12);
        assert_relative_eq!(s[7], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn step_rejects_non_finite_and_wrong_sizes() {
        let env = EnvSpec::nav2d();
        let mut rng = substream(0, "t");
        let bad = DVector::from_vec(vec![f64::NAN, 0.0, 0.0, 0.0]);
        assert!(matches!(env_step(&env, &bad, &DVector::zeros(2), &mut rng), Err(Error::NonFinite(_))));
        assert!(env_step(&env, &DVector::zeros(3), &DVector::zeros(2), &mut rng).is_err());
        assert!(ground_truth_cost(&env, &DVector::zeros(4), &DVector::from_element(2, f64::INFINITY)).is_err());
    }

    #[test]
    fn cost_at_goal() {
        let env = EnvSpec::point_mass([1.0, -1.0], 0.3);
        let goal = DVector::from_vec(vec![1.0, -1.0, 0.0, 0.0]);
        assert_eq!(ground_truth_cost(&env, &goal, &DVector::zeros(2)).unwrap(), 0.0);

        let reacher = EnvSpec::reacher();
        let mut x = DVector::zeros(8);
        x[4] = 0.3;
        x[5] = 0.6;
        assert_relative_eq!(ground_truth_cost(&reacher, &x, &DVector::zeros(2)).unwrap(), 0.2 * 1e-2f64.ln());
    }

    #[test]
    fn reacher_cost_example() {
        let cost = GroundTruthCost::Reacher {
            target: [0.0, 0.0],
            w: 1.0,
            v: 1.0,
            alpha: 1e-5,
            action_weight: 0.0,
        };
        let mut x = DVector::zeros(8);
        x[4] = 0.06;
        x[5] = 0.08;
        let c = cost.cost(&x, &DVector::zeros(2));
        assert_relative_eq!(c, 0.01 + 0.01001f64.ln(), epsilon = 1e-12);
        assert!((c - -4.594).abs() < 1e-3);
    }

    #[test]
    fn bumps_decay() {
        let env = EnvSpec::nav2d();
        let GroundTruthCost::Quadratic { bumps, .. } = &env.cost else {
            unreachable!()
        };
        for b in bumps {
            let c = Vector2::from(b.center);
            assert!(b.value(&c) > 0.0);
            assert!(b.value(&(c + Vector2::new(5.0 * b.width, 0.0))) < 1e-6);
        }
        // the straight line to the goal passes through the central bump
        let mid = DVector::from_vec(vec![0.5, 0.5, 0.0, 0.0]);
        let side = DVector::from_vec(vec![0.7, 0.7, 0.0, 0.0]);
        assert!(env.cost.state_cost(&mid) > env.cost.state_cost(&side));
    }

    #[test]
    fn ground_truth_gradients_match_finite_differences() {
        let mut rng = substream(4, "fd");
        for env in [EnvSpec::nav2d(), EnvSpec::reacher(), EnvSpec::point_mass([0.2, 0.1], 1.0)] {
            for _ in 0..20 {
                let x = DVector::from_vec(env.init_mean.clone()) + linalg::standard_normal(env.d_x(), &mut rng) * 0.3;
                let (g, h) = env.cost.state_derivatives(&x);
                let fd = fd_gradient(&env.cost, &x);
                assert!((&g - &fd).norm() <= 1e-5 * fd.norm().max(1e-3), "{}: {g} vs {fd}", env.name);
                let e = 1e-5;
                for i in 0..x.len() {
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[i] += e;
                    xm[i] -= e;
                    let col = (env.cost.state_derivatives(&xp).0 - env.cost.state_derivatives(&xm).0) / (2.0 * e);
                    assert!((h.column(i) - &col).norm() <= 1e-4 * (1.0 + col.norm()));
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn bounded_inputs_keep_states_finite(
            env_idx in 0usize..3,
            actions in prop::collection::vec(-10.0f64..10.0, 2 * DEFAULT_HORIZON),
            seed in any::<u64>(),
        ) {
            let env = [EnvSpec::point_mass([0.0, 0.0], 1.0), EnvSpec::nav2d(), EnvSpec::reacher()][env_idx].clone();
            let mut rng = substream(seed, "finite");
            let mut x = DVector::from_vec(env.init_mean.clone());
            for u in actions.chunks(2) {
                let u = DVector::from_column_slice(u);
                x = env_step(&env, &x, &u, &mut rng).unwrap();
                prop_assert!(x.iter().all(|v| v.is_finite()));
                prop_assert!(ground_truth_cost(&env, &x, &u).unwrap().is_finite());
            }
        }
    }

    /// Deterministic LQR in goal-relative coordinates by a textbook Riccati recursion.
    fn riccati_path(env: &EnvSpec, x0: &DVector<f64>) -> Vec<DVector<f64>> {
        let GroundTruthCost::Quadratic {
            target,
            weights,
            action_weight,
            ..
        } = &env.cost
        else {
            unreachable!()
        };
        let dt = env.dt;
        let a = DMatrix::from_row_slice(4, 4, &[1.0, 0.0, dt, 0.0, 0.0, 1.0, 0.0, dt, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(4, 2, &[0.5 * dt * dt, 0.0, 0.0, 0.5 * dt * dt, dt, 0.0, 0.0, dt]);
        let w = DMatrix::from_diagonal(&DVector::from_vec(weights.clone()));
        let r = DMatrix::identity(2, 2) * *action_weight;
        let mut p = w.clone();
        let mut gains = vec![DMatrix::zeros(2, 4); env.horizon];
        for t in (0..env.horizon - 1).rev() {
            let quu = &r + b.transpose() * &p * &b;
            let k = -quu.try_inverse().unwrap() * b.transpose() * &p * &a;
            p = &w + a.transpose() * &p * &a + a.transpose() * &p * &b * &k;
            gains[t] = k;
        }
        let goal = DVector::from_vec(target.clone());
        let mut z = x0 - &goal;
        let mut path = Vec::new();
        for k in &gains {
            path.push(&z + &goal);
            z = &a * &z + &b * (k * &z);
        }
        path
    }

    #[test]
    fn noise_free_demo_matches_lqr() {
        let env = quiet(EnvSpec::point_mass([1.0, 0.5], 0.1));
        let x0 = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0]);
        let set = generate_demos(&env, &[x0.clone()], 1, 0.0, &mut substream(0, "demos")).unwrap();
        let oracle = riccati_path(&env, &x0);
        for (x, y) in set.demos[0].states().iter().zip(&oracle) {
            assert!((x - y).amax() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn demos_are_near_optimal() {
        let env = EnvSpec::nav2d();
        let starts = env.initial_conditions(2);
        let set = generate_demos(&env, &starts, 20, 1.0, &mut substream(1, "demos")).unwrap();
        let path_cost = |t: &Trajectory| -> f64 {
            t.states().iter().zip(t.actions()).map(|(x, u)| env.cost.cost(x, u)).sum()
        };
        let demo_cost = set.demos.iter().map(path_cost).sum::<f64>() / set.demos.len() as f64;
        let mut rng = substream(1, "eval");
        let mut direct = 0.0;
        let n = 400;
        for i in 0..n {
            let c = i % starts.len();
            let local = env.with_initial_state(&starts[c]);
            direct += path_cost(&polopt::rollout_plant(&local, &set.controllers[c], &mut rng).unwrap());
        }
        direct /= n as f64;
        assert!(demo_cost <= 1.05 * direct, "{demo_cost} vs {direct}");
    }

    #[test]
    fn demo_generation_contract() {
        let env = EnvSpec::point_mass([0.0, 0.0], 1.0);
        let mut rng = substream(0, "demos");
        assert!(generate_demos(&env, &[], 3, 1.0, &mut rng).is_err());
        assert!(generate_demos(&env, &env.initial_conditions(4), 3, 1.0, &mut rng).is_err());
        let set = generate_demos(&env, &env.initial_conditions(3), 7, 1.0, &mut rng).unwrap();
        assert_eq!(set.conditions, vec![0, 1, 2, 0, 1, 2, 0]);
        assert_eq!(set.for_condition(1).len(), 2);
        assert!(set.demos.iter().all(|d| d.horizon() == env.horizon));
    }

    #[test]
    fn demo_directory_round_trip() {
        let env = EnvSpec::nav2d();
        let set = generate_demos(&env, &env.initial_conditions(2), 4, 1.0, &mut substream(2, "demos")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let written = write_demos(dir.path(), &env, 2, &set).unwrap();
        let (manifest, demos) = read_demos(dir.path()).unwrap();
        assert_eq!(manifest, written);
        assert_eq!(manifest.files.len(), 4);
        assert_eq!(demos, set.demos);
    }

    #[test]
    fn initial_conditions_and_lookup() {
        let env = EnvSpec::by_name("point-mass").unwrap();
        let starts = env.initial_conditions(4);
        for s in &starts {
            assert_relative_eq!(((s[0] - 1.0).powi(2) + s[1].powi(2)).sqrt(), 0.2, epsilon = 1e-12);
        }
        assert_eq!(env.initial_conditions(1)[0], DVector::from_vec(env.init_mean.clone()));
        assert!(EnvSpec::by_name("cartpole").is_err());
        assert_eq!(EnvSpec::by_name("reacher").unwrap().goal_position(), [0.3, 0.6]);
    }
}
