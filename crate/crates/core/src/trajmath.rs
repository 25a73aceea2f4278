//! Trajectories, time-varying linear-Gaussian controllers and dynamics, and
//! the closed-form Gaussian computations built on them: forward marginals,
//! trajectory log-densities, trajectory KL divergence and the Gaussian fit
//! to a set of demonstrations.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, GaussianFactor, COV_FLOOR};

/// Ridge coefficient for the per-timestep demo regression, relative to the
/// average per-dimension state variance.
pub const DEMO_RIDGE: f64 = 1e-4;

/// A fixed-horizon sequence of states and the actions taken in them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<DVector<f64>>,
    actions: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(states: Vec<DVector<f64>>, actions: Vec<DVector<f64>>) -> Result<Self> {
        if states.len() != actions.len() {
            return Err(Error::InvalidArgument(format!(
                "trajectory has {} states but {} actions",
                states.len(),
                actions.len()
            )));
        }
        if states.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "trajectory horizon must be at least 2, got {}",
                states.len()
            )));
        }
        let (dx, du) = (states[0].len(), actions[0].len());
        for (t, (x, u)) in states.iter().zip(&actions).enumerate() {
            if x.len() != dx || u.len() != du {
                return Err(Error::dims(t, format!("expected dx={dx}, du={du}, got {}, {}", x.len(), u.len())));
            }
            if !x.iter().chain(u.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("trajectory entry at timestep {t}")));
            }
        }
        Ok(Self { states, actions })
    }

    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn action_dim(&self) -> usize {
        self.actions[0].len()
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn actions(&self) -> &[DVector<f64>] {
        &self.actions
    }

    pub fn final_state(&self) -> &DVector<f64> {
        &self.states[self.states.len() - 1]
    }

    /// Serializes as CSV with header `t,x0..,u0..`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 0..self.state_dim() {
            let _ = write!(out, ",x{i}");
        }
        for i in 0..self.action_dim() {
            let _ = write!(out, ",u{i}");
        }
        out.push('\n');
        for (t, (x, u)) in self.states.iter().zip(&self.actions).enumerate() {
            let _ = write!(out, "{t}");
            for v in x.iter().chain(u.iter()) {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trajectory CSV".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") {
            return Err(Error::Parse(format!("trajectory CSV header must start with `t`: {header}")));
        }
        let dx = cols.iter().filter(|c| c.starts_with('x')).count();
        let du = cols.iter().filter(|c| c.starts_with('u')).count();
        let expected: Vec<String> = std::iter::once("t".to_string())
            .chain((0..dx).map(|i| format!("x{i}")))
            .chain((0..du).map(|i| format!("u{i}")))
            .collect();
        if cols != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Parse(format!("malformed trajectory CSV header: {header}")));
        }
        let mut states = Vec::new();
        let mut actions = Vec::new();
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 1 + dx + du {
                return Err(Error::Parse(format!("row {row}: expected {} fields, got {}", 1 + dx + du, fields.len())));
            }
            let t: usize = fields[0]
                .parse()
                .map_err(|e| Error::Parse(format!("row {row}: bad time index: {e}")))?;
            if t != row {
                return Err(Error::Parse(format!("row {row}: time index {t} out of order")));
            }
            let values = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| Error::Parse(format!("row {row}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            states.push(DVector::from_column_slice(&values[..dx]));
            actions.push(DVector::from_column_slice(&values[dx..]));
        }
        Trajectory::new(states, actions)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// One timestep of `q(u_t | x_t) = N(K_t x_t + k_t, Σ_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerStep {
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Time-varying linear-Gaussian controller. Immutable once built: the
/// covariance factorizations used for density evaluation are cached.
#[derive(Debug, Clone)]
pub struct LinearGaussianController {
    steps: Vec<ControllerStep>,
    factors: Vec<GaussianFactor>,
}

impl PartialEq for LinearGaussianController {
    fn eq(&self, other: &Self) -> bool {
        self.steps == other.steps
    }
}

impl LinearGaussianController {
    pub fn new(steps: Vec<ControllerStep>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidArgument("controller needs at least one timestep".into()));
        }
        let (du, dx) = steps[0].gain.shape();
        let mut factors = Vec::with_capacity(steps.len());
        for (t, s) in steps.iter().enumerate() {
            if s.gain.shape() != (du, dx) || s.offset.len() != du || s.cov.shape() != (du, du) {
                return Err(Error::dims(t, "controller step shapes disagree"));
            }
            if !s.gain.iter().chain(s.offset.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("controller parameters at timestep {t}")));
            }
            let factor = GaussianFactor::new(&s.cov).ok_or_else(|| Error::NotPositiveDefinite {
                step: t,
                what: "controller covariance".into(),
            })?;
            factors.push(factor);
        }
        Ok(Self { steps, factors })
    }

    /// Zero-gain, zero-offset controller with isotropic covariance.
    pub fn isotropic(horizon: usize, dx: usize, du: usize, variance: f64) -> Result<Self> {
        let step = ControllerStep {
            gain: DMatrix::zeros(du, dx),
            offset: DVector::zeros(du),
            cov: DMatrix::identity(du, du) * variance,
        };
        Self::new(vec![step; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn state_dim(&self) -> usize {
        self.steps[0].gain.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.steps[0].gain.nrows()
    }

    pub fn steps(&self) -> &[ControllerStep] {
        &self.steps
    }

    pub fn step(&self, t: usize) -> &ControllerStep {
        &self.steps[t]
    }

    pub fn mean_action(&self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.steps[t].gain * x + &self.steps[t].offset
    }

    pub(crate) fn factor(&self, t: usize) -> &GaussianFactor {
        &self.factors[t]
    }

    /// `log q(u | x)` at timestep `t`.
    pub fn log_prob(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.factors[t].log_pdf_residual(&(u - self.mean_action(t, x)))
    }

    /// Same gains and offsets with every covariance replaced.
    pub fn with_covariance(&self, cov: &DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.steps
                .iter()
                .map(|s| ControllerStep {
                    cov: cov.clone(),
                    ..s.clone()
                })
                .collect(),
        )
    }

    /// Average of `tr(Σ_t) / d_u` over timesteps.
    pub fn mean_action_variance(&self) -> f64 {
        let du = self.action_dim() as f64;
        self.steps.iter().map(|s| s.cov.trace() / du).sum::<f64>() / self.horizon() as f64
    }

    /// Conditional entropy `Σ_t H(u_t | x_t)`.
    pub fn entropy(&self) -> f64 {
        let du = self.action_dim() as f64;
        let c = du * (1.0 + (2.0 * std::f64::consts::PI).ln());
        self.factors.iter().map(|f| 0.5 * (c + f.log_det())).sum()
    }
}

/// One transition `x_{t+1} ~ N(A_t x_t + B_t u_t + f_t, N_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsStep {
    pub fx: DMatrix<f64>,
    pub fu: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub noise: DMatrix<f64>,
}

impl DynamicsStep {
    pub fn mean_next(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.fx * x + &self.fu * u + &self.offset
    }
}

/// Time-varying linear-Gaussian dynamics over a horizon of `steps.len() + 1`
/// states, with a Gaussian initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianDynamics {
    pub steps: Vec<DynamicsStep>,
    pub init_mean: DVector<f64>,
    pub init_cov: DMatrix<f64>,
}

impl LinearGaussianDynamics {
    /// Time-invariant dynamics repeated over `horizon` states.
    pub fn stationary(
        horizon: usize,
        step: DynamicsStep,
        init_mean: DVector<f64>,
        init_cov: DMatrix<f64>,
    ) -> Self {
        Self {
            steps: vec![step; horizon.saturating_sub(1)],
            init_mean,
            init_cov,
        }
    }

    pub fn horizon(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn state_dim(&self) -> usize {
        self.init_mean.len()
    }

    pub fn action_dim(&self) -> usize {
        self.steps.first().map_or(0, |s| s.fu.ncols())
    }

    fn check_against(&self, ctrl: &LinearGaussianController) -> Result<()> {
        let dx = self.state_dim();
        if self.init_cov.shape() != (dx, dx) {
            return Err(Error::dims(0, "initial covariance shape"));
        }
        if self.horizon() != ctrl.horizon() {
            return Err(Error::dims(
                self.horizon().min(ctrl.horizon()),
                format!("dynamics horizon {} vs controller horizon {}", self.horizon(), ctrl.horizon()),
            ));
        }
        if ctrl.state_dim() != dx {
            return Err(Error::dims(0, format!("controller state dim {} vs dynamics {dx}", ctrl.state_dim())));
        }
        for (t, s) in self.steps.iter().enumerate() {
            if s.fx.shape() != (dx, dx)
                || s.fu.shape() != (dx, ctrl.action_dim())
                || s.offset.len() != dx
                || s.noise.shape() != (dx, dx)
            {
                return Err(Error::dims(t, "dynamics step shapes disagree with controller"));
            }
        }
        Ok(())
    }
}

/// Gaussian marginal over `(x_t, u_t)` at one timestep.
#[derive(Debug, Clone)]
pub struct StepMarginal {
    pub state_mean: DVector<f64>,
    pub state_cov: DMatrix<f64>,
    pub action_mean: DVector<f64>,
    pub action_cov: DMatrix<f64>,
    /// `Cov(u_t, x_t)`, shape `d_u × d_x`.
    pub cross_cov: DMatrix<f64>,
}

impl StepMarginal {
    pub fn joint_mean(&self) -> DVector<f64> {
        let (dx, du) = (self.state_mean.len(), self.action_mean.len());
        let mut m = DVector::zeros(dx + du);
        m.rows_mut(0, dx).copy_from(&self.state_mean);
        m.rows_mut(dx, du).copy_from(&self.action_mean);
        m
    }

    pub fn joint_cov(&self) -> DMatrix<f64> {
        let (dx, du) = (self.state_mean.len(), self.action_mean.len());
        let mut c = DMatrix::zeros(dx + du, dx + du);
        c.view_mut((0, 0), (dx, dx)).copy_from(&self.state_cov);
        c.view_mut((dx, 0), (du, dx)).copy_from(&self.cross_cov);
        c.view_mut((0, dx), (dx, du)).copy_from(&self.cross_cov.transpose());
        c.view_mut((dx, dx), (du, du)).copy_from(&self.action_cov);
        c
    }
}

/// Trajectory distribution induced by running a controller under dynamics.
#[derive(Debug, Clone)]
pub struct GaussianTrajDist {
    pub dynamics: LinearGaussianDynamics,
    pub controller: LinearGaussianController,
}

impl GaussianTrajDist {
    pub fn new(dynamics: LinearGaussianDynamics, controller: LinearGaussianController) -> Result<Self> {
        dynamics.check_against(&controller)?;
        Ok(Self { dynamics, controller })
    }

    pub fn marginals(&self) -> Result<Vec<StepMarginal>> {
        forward_marginals(self)
    }
}

/// Exact per-step Gaussian marginals by forward propagation of mean and covariance.
pub fn forward_marginals(dist: &GaussianTrajDist) -> Result<Vec<StepMarginal>> {
    let dyn_ = &dist.dynamics;
    let ctrl = &dist.controller;
    dyn_.check_against(ctrl)?;
    let dx = dyn_.state_dim();
    let mut mean = dyn_.init_mean.clone();
    let mut cov = linalg::symmetrize(&dyn_.init_cov);
    let mut out = Vec::with_capacity(ctrl.horizon());
    for t in 0..ctrl.horizon() {
        let s = ctrl.step(t);
        let action_mean = &s.gain * &mean + &s.offset;
        let cross_cov = &s.gain * &cov;
        let action_cov = linalg::symmetrize(&(&cross_cov * s.gain.transpose() + &s.cov));
        if !cov.iter().chain(action_cov.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("marginal covariance at timestep {t}")));
        }
        let marginal = StepMarginal {
            state_mean: mean.clone(),
            state_cov: cov.clone(),
            action_mean,
            action_cov,
            cross_cov,
        };
        if let Some(d) = dyn_.steps.get(t) {
            let mut f = DMatrix::zeros(dx, dx + ctrl.action_dim());
            f.view_mut((0, 0), (dx, dx)).copy_from(&d.fx);
            f.view_mut((0, dx), (dx, ctrl.action_dim())).copy_from(&d.fu);
            mean = &f * marginal.joint_mean() + &d.offset;
            cov = linalg::symmetrize(&(&f * marginal.joint_cov() * f.transpose() + &d.noise));
        }
        out.push(marginal);
    }
    Ok(out)
}

/// Samples one trajectory from `q(x_1) Π q(u_t|x_t) q(x_{t+1}|x_t,u_t)`.
pub fn rollout_lgc<R: rand::Rng + ?Sized>(
    dynamics: &LinearGaussianDynamics,
    ctrl: &LinearGaussianController,
    rng: &mut R,
) -> Result<Trajectory> {
    dynamics.check_against(ctrl)?;
    let action_sqrt: Vec<_> = ctrl.steps().iter().map(|s| linalg::psd_sqrt(&s.cov)).collect();
    let noise_sqrt: Vec<_> = dynamics.steps.iter().map(|s| linalg::psd_sqrt(&s.noise)).collect();
    let mut x = linalg::sample_gaussian(&dynamics.init_mean, &linalg::psd_sqrt(&dynamics.init_cov), rng);
    let mut states = Vec::with_capacity(ctrl.horizon());
    let mut actions = Vec::with_capacity(ctrl.horizon());
    for t in 0..ctrl.horizon() {
        let u = linalg::sample_gaussian(&ctrl.mean_action(t, &x), &action_sqrt[t], rng);
        let next = dynamics.steps.get(t).map(|d| {
            let m = d.mean_next(&x, &u);
            linalg::sample_gaussian(&m, &noise_sqrt[t], rng)
        });
        states.push(x.clone());
        actions.push(u);
        if let Some(n) = next {
            x = n;
        }
    }
    Trajectory::new(states, actions)
}

/// `Σ_t log N(u_t; K_t x_t + k_t, Σ_t)`: the action-conditional part of the
/// trajectory density. Dynamics factors are shared by every proposal and
/// the target, so importance weights never need them.
pub fn traj_log_density(ctrl: &LinearGaussianController, traj: &Trajectory) -> Result<f64> {
    if traj.horizon() != ctrl.horizon() {
        return Err(Error::dims(
            traj.horizon().min(ctrl.horizon()),
            format!("trajectory horizon {} vs controller horizon {}", traj.horizon(), ctrl.horizon()),
        ));
    }
    if traj.state_dim() != ctrl.state_dim() || traj.action_dim() != ctrl.action_dim() {
        return Err(Error::dims(0, "trajectory and controller dimensions differ"));
    }
    Ok(traj
        .states()
        .iter()
        .zip(traj.actions())
        .enumerate()
        .map(|(t, (x, u))| ctrl.log_prob(t, x, u))
        .sum())
}

/// Per-timestep `E_{x_t ~ p}[KL(p(u_t|x_t) ‖ q(u_t|x_t))]`.
pub fn kl_traj_steps(p: &GaussianTrajDist, q_ctrl: &LinearGaussianController) -> Result<Vec<f64>> {
    if q_ctrl.horizon() != p.controller.horizon()
        || q_ctrl.state_dim() != p.controller.state_dim()
        || q_ctrl.action_dim() != p.controller.action_dim()
    {
        return Err(Error::dims(0, "KL between controllers of different shape"));
    }
    let marginals = forward_marginals(p)?;
    let du = q_ctrl.action_dim() as f64;
    let mut out = Vec::with_capacity(marginals.len());
    for (t, m) in marginals.iter().enumerate() {
        let ps = p.controller.step(t);
        let qs = q_ctrl.step(t);
        let qf = q_ctrl.factor(t);
        let pf = p.controller.factor(t);
        let prec = qf.precision();
        let dgain = &qs.gain - &ps.gain;
        let dmean = &dgain * &m.state_mean + (&qs.offset - &ps.offset);
        let trace_term = (&prec * &ps.cov).trace() + (&prec * &dgain * &m.state_cov * dgain.transpose()).trace();
        let kl = 0.5 * (trace_term + qf.mahalanobis(&dmean) - du + qf.log_det() - pf.log_det());
        out.push(kl.max(0.0));
    }
    Ok(out)
}

/// KL divergence between the trajectory distribution `p` and the one induced
/// by `q_ctrl` under the same dynamics, in closed form.
pub fn kl_traj(p: &GaussianTrajDist, q_ctrl: &LinearGaussianController) -> Result<f64> {
    Ok(kl_traj_steps(p, q_ctrl)?.iter().sum())
}

/// Fits a single time-varying Gaussian trajectory distribution to
/// time-aligned demonstrations: per-step ridge regression of `u_t` on `x_t`
/// for the controller and of `x_{t+1}` on `(x_t, u_t)` for the dynamics.
pub fn fit_demo_distribution(demos: &[Trajectory]) -> Result<GaussianTrajDist> {
    if demos.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "demo distribution fit needs at least 2 demos, got {}",
            demos.len()
        )));
    }
    let horizon = demos[0].horizon();
    let (dx, du) = (demos[0].state_dim(), demos[0].action_dim());
    for (i, d) in demos.iter().enumerate() {
        if d.horizon() != horizon || d.state_dim() != dx || d.action_dim() != du {
            return Err(Error::dims(0, format!("demo {i} differs in horizon or dimensions")));
        }
    }
    let mut steps = Vec::with_capacity(horizon);
    let mut dyn_steps = Vec::with_capacity(horizon - 1);
    for t in 0..horizon {
        let xs: Vec<_> = demos.iter().map(|d| d.states()[t].clone()).collect();
        let us: Vec<_> = demos.iter().map(|d| d.actions()[t].clone()).collect();
        let (_, xcov) = linalg::mean_and_cov(&xs);
        let scale = (xcov.trace() / dx as f64).max(1e-12);
        let fit = linalg::affine_regression(&xs, &us, DEMO_RIDGE * scale)?;
        steps.push(ControllerStep {
            gain: fit.weight,
            offset: fit.bias,
            cov: linalg::add_diagonal(&fit.residual_cov, COV_FLOOR),
        });
        if t + 1 < horizon {
            let zs: Vec<_> = demos
                .iter()
                .map(|d| concat(&d.states()[t], &d.actions()[t]))
                .collect();
            let next: Vec<_> = demos.iter().map(|d| d.states()[t + 1].clone()).collect();
            let (_, zcov) = linalg::mean_and_cov(&zs);
            let zscale = (zcov.trace() / (dx + du) as f64).max(1e-12);
            let fit = linalg::affine_regression(&zs, &next, DEMO_RIDGE * zscale)?;
            dyn_steps.push(DynamicsStep {
                fx: fit.weight.columns(0, dx).into_owned(),
                fu: fit.weight.columns(dx, du).into_owned(),
                offset: fit.bias,
                noise: linalg::add_diagonal(&fit.residual_cov, COV_FLOOR),
            });
        }
    }
    let firsts: Vec<_> = demos.iter().map(|d| d.states()[0].clone()).collect();
    let (init_mean, init_cov) = linalg::mean_and_cov(&firsts);
    GaussianTrajDist::new(
        LinearGaussianDynamics {
            steps: dyn_steps,
            init_mean,
            init_cov: linalg::add_diagonal(&init_cov, COV_FLOOR),
        },
        LinearGaussianController::new(steps)?,
    )
}

pub(crate) fn concat(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(x.len() + u.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), u.len()).copy_from(u);
    z
}

/// Second-order expansion of a per-step cost around `(x, u)`:
/// `c(x+δx, u+δu) ≈ c + c_xᵀδx + c_uᵀδu + ½δxᵀC_xxδx + ½δuᵀC_uuδu + δuᵀC_uxδx`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostExpansion {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub c: f64,
    pub cx: DVector<f64>,
    pub cu: DVector<f64>,
    pub cxx: DMatrix<f64>,
    pub cuu: DMatrix<f64>,
    pub cux: DMatrix<f64>,
}

impl CostExpansion {
    /// Joint Hessian over `z = [x; u]`.
    pub fn hessian(&self) -> DMatrix<f64> {
        let (dx, du) = (self.x.len(), self.u.len());
        let mut h = DMatrix::zeros(dx + du, dx + du);
        h.view_mut((0, 0), (dx, dx)).copy_from(&self.cxx);
        h.view_mut((dx, dx), (du, du)).copy_from(&self.cuu);
        h.view_mut((dx, 0), (du, dx)).copy_from(&self.cux);
        h.view_mut((0, dx), (dx, du)).copy_from(&self.cux.transpose());
        h
    }

    pub fn gradient(&self) -> DVector<f64> {
        concat(&self.cx, &self.cu)
    }

    /// `E[c]` of the quadratic model under a Gaussian over `(x, u)`.
    pub fn expected(&self, marginal: &StepMarginal) -> f64 {
        let h = self.hessian();
        let d = marginal.joint_mean() - concat(&self.x, &self.u);
        self.c + self.gradient().dot(&d) + 0.5 * (d.dot(&(&h * &d)) + (&h * marginal.joint_cov()).trace())
    }
}

/// Serializable form of a controller.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ControllerFile {
    pub format: String,
    pub version: u32,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Per timestep: row-major gain, offset, row-major covariance.
    pub gains: Vec<Vec<f64>>,
    pub offsets: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
}

const CONTROLLER_FORMAT: &str = "gcl-lg-controller";

impl LinearGaussianController {
    pub fn to_file(&self) -> ControllerFile {
        let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
        ControllerFile {
            format: CONTROLLER_FORMAT.into(),
            version: 1,
            state_dim: self.state_dim(),
            action_dim: self.action_dim(),
            gains: self.steps.iter().map(|s| row_major(&s.gain)).collect(),
            offsets: self.steps.iter().map(|s| s.offset.as_slice().to_vec()).collect(),
            covariances: self.steps.iter().map(|s| row_major(&s.cov)).collect(),
        }
    }

    pub fn from_file(file: &ControllerFile) -> Result<Self> {
        if file.format != CONTROLLER_FORMAT || file.version != 1 {
            return Err(Error::Parse(format!(
                "unsupported controller file {} v{}",
                file.format, file.version
            )));
        }
        let (dx, du) = (file.state_dim, file.action_dim);
        if file.offsets.len() != file.gains.len() || file.covariances.len() != file.gains.len() {
            return Err(Error::Parse("controller file step counts disagree".into()));
        }
        let mut steps = Vec::with_capacity(file.gains.len());
        for (t, ((g, k), c)) in file.gains.iter().zip(&file.offsets).zip(&file.covariances).enumerate() {
            if g.len() != du * dx || k.len() != du || c.len() != du * du {
                return Err(Error::dims(t, "controller file array lengths"));
            }
            steps.push(ControllerStep {
                gain: DMatrix::from_row_slice(du, dx, g),
                offset: DVector::from_column_slice(k),
                cov: DMatrix::from_row_slice(du, du, c),
            });
        }
        Self::new(steps)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: ControllerFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_file(&file)
    }
}
