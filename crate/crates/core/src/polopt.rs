//! Policy optimization for time-varying linear-Gaussian controllers under
//! known or fitted linear-Gaussian dynamics: per-timestep dynamics
//! regression (optionally with a GMM prior), the maximum-entropy LQR
//! backward pass, the KL-constrained update solved through its dual, and
//! step-size adaptation.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, COV_FLOOR};
use crate::trajmath::{
    concat, forward_marginals, kl_traj, ControllerStep, CostExpansion, DynamicsStep, GaussianTrajDist,
    LinearGaussianController, LinearGaussianDynamics, StepMarginal, Trajectory,
};

pub const MIN_EPSILON: f64 = 1e-4;
pub const MAX_EPSILON: f64 = 1e2;
const MAX_BRACKET_EXPANSIONS: usize = 50;
const MAX_BISECTIONS: usize = 200;
const MAX_LEVENBERG: f64 = 1e12;

/// A per-step cost that can be evaluated and quadratized.
pub trait StepCost {
    fn cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64;
    fn expand(&self, x: &DVector<f64>, u: &DVector<f64>) -> CostExpansion;

    fn expand_along(&self, states: &[DVector<f64>], actions: &[DVector<f64>]) -> Vec<CostExpansion> {
        states.iter().zip(actions).map(|(x, u)| self.expand(x, u)).collect()
    }

    fn traj_cost(&self, traj: &Trajectory) -> f64 {
        traj.states()
            .iter()
            .zip(traj.actions())
            .map(|(x, u)| self.cost(x, u))
            .sum()
    }
}

/// A simulated system with a deterministic step plus Gaussian process noise.
pub trait Plant {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn initial_mean(&self) -> DVector<f64>;
    fn initial_cov(&self) -> DMatrix<f64>;
    fn process_noise_cov(&self) -> DMatrix<f64>;
    fn step_mean(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
    /// Jacobians `(∂f/∂x, ∂f/∂u)` of the deterministic step.
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)>;
}

/// Samples one trajectory by running `ctrl` on `plant`.
pub fn rollout_plant<P: Plant + ?Sized, R: rand::Rng + ?Sized>(
    plant: &P,
    ctrl: &LinearGaussianController,
    rng: &mut R,
) -> Result<Trajectory> {
    check_plant(plant, ctrl)?;
    let noise_sqrt = linalg::psd_sqrt(&plant.process_noise_cov());
    let action_sqrt: Vec<_> = ctrl.steps().iter().map(|s| linalg::psd_sqrt(&s.cov)).collect();
    let mut x = linalg::sample_gaussian(&plant.initial_mean(), &linalg::psd_sqrt(&plant.initial_cov()), rng);
    let (mut states, mut actions) = (Vec::new(), Vec::new());
    for t in 0..ctrl.horizon() {
        let u = linalg::sample_gaussian(&ctrl.mean_action(t, &x), &action_sqrt[t], rng);
        if t + 1 < ctrl.horizon() {
            let next = plant.step_mean(&x, &u)?;
            let next = linalg::sample_gaussian(&next, &noise_sqrt, rng);
            states.push(std::mem::replace(&mut x, next));
        } else {
            states.push(x.clone());
        }
        actions.push(u);
    }
    Trajectory::new(states, actions)
}

pub fn rollout_many<P: Plant + ?Sized, R: rand::Rng + ?Sized>(
    plant: &P,
    ctrl: &LinearGaussianController,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    (0..n).map(|_| rollout_plant(plant, ctrl, rng)).collect()
}

fn check_plant<P: Plant + ?Sized>(plant: &P, ctrl: &LinearGaussianController) -> Result<()> {
    if ctrl.horizon() != plant.horizon() || ctrl.state_dim() != plant.state_dim() || ctrl.action_dim() != plant.action_dim() {
        return Err(Error::dims(
            0,
            format!(
                "controller (T={}, dx={}, du={}) does not fit plant (T={}, dx={}, du={})",
                ctrl.horizon(),
                ctrl.state_dim(),
                ctrl.action_dim(),
                plant.horizon(),
                plant.state_dim(),
                plant.action_dim()
            ),
        ));
    }
    Ok(())
}

/// Linearizes the plant along the noise-free mean path of `ctrl`.
/// Returns the dynamics and the nominal states/actions.
pub fn linearize_along<P: Plant + ?Sized>(
    plant: &P,
    ctrl: &LinearGaussianController,
) -> Result<(LinearGaussianDynamics, Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    check_plant(plant, ctrl)?;
    let noise = plant.process_noise_cov();
    let mut x = plant.initial_mean();
    let (mut xs, mut us, mut steps) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..ctrl.horizon() {
        let u = ctrl.mean_action(t, &x);
        if t + 1 < ctrl.horizon() {
            let (fx, fu) = plant.jacobians(&x, &u)?;
            let next = plant.step_mean(&x, &u)?;
            let offset = &next - &fx * &x - &fu * &u;
            steps.push(DynamicsStep {
                fx,
                fu,
                offset,
                noise: noise.clone(),
            });
            xs.push(std::mem::replace(&mut x, next));
        } else {
            xs.push(x.clone());
        }
        us.push(u);
    }
    Ok((
        LinearGaussianDynamics {
            steps,
            init_mean: plant.initial_mean(),
            init_cov: plant.initial_cov(),
        },
        xs,
        us,
    ))
}

/// `Σ_t E[c_t]` of the quadratic cost model under the marginals.
pub fn expected_model_cost(marginals: &[StepMarginal], expansions: &[CostExpansion]) -> f64 {
    marginals.iter().zip(expansions).map(|(m, e)| e.expected(m)).sum()
}

/// Maximum-entropy objective `E[c] - H` of `ctrl` under a quadratic cost model.
pub fn model_objective(
    dynamics: &LinearGaussianDynamics,
    ctrl: &LinearGaussianController,
    expansions: &[CostExpansion],
) -> Result<f64> {
    let marginals = forward_marginals(&GaussianTrajDist::new(dynamics.clone(), ctrl.clone())?)?;
    Ok(expected_model_cost(&marginals, expansions) - ctrl.entropy())
}

/// Sample estimate of `E[c] - H` for trajectories drawn from `ctrl`.
pub fn sample_objective(cost: &dyn StepCost, samples: &[Trajectory], ctrl: &LinearGaussianController) -> f64 {
    let mean = samples.iter().map(|s| cost.traj_cost(s)).sum::<f64>() / samples.len() as f64;
    mean - ctrl.entropy()
}

// ---------------------------------------------------------------------------
// Gaussian mixture prior

/// Gaussian mixture over `(x_t, u_t, x_{t+1})` tuples, used as a
/// normal-inverse-Wishart prior for the per-timestep dynamics regression.
#[derive(Debug, Clone)]
pub struct GmmPrior {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    /// Effective number of prior samples (`m` and `n0`).
    pub strength: f64,
    /// Total log-likelihood after each EM iteration.
    pub log_likelihood_trace: Vec<f64>,
    factors: Vec<linalg::GaussianFactor>,
}

pub const GMM_MAX_ITERATIONS: usize = 100;
pub const GMM_TOLERANCE: f64 = 1e-6;

/// Default component count: one per 40 tuples, capped at 20.
pub fn default_gmm_components(n_tuples: usize) -> usize {
    (n_tuples / 40).clamp(1, 20)
}

/// EM for a full-covariance mixture, initialized deterministically by
/// farthest-point selection from the point nearest the data mean.
pub fn fit_gmm(tuples: &[DVector<f64>], k: usize, prior_strength: f64) -> Result<GmmPrior> {
    if k == 0 || k > tuples.len() {
        return Err(Error::InsufficientData(format!(
            "GMM with {k} components needs at least {k} tuples, got {}",
            tuples.len()
        )));
    }
    let n = tuples.len();
    let d = tuples[0].len();
    let (mean, cov) = linalg::mean_and_cov(tuples);
    let base_cov = linalg::add_diagonal(&cov, COV_FLOOR);

    let mut centers = vec![nearest(tuples, &mean)];
    let mut min_dist: Vec<f64> = tuples.iter().map(|p| (p - &tuples[centers[0]]).norm_squared()).collect();
    while centers.len() < k {
        let next = (0..n)
            .max_by(|&a, &b| min_dist[a].total_cmp(&min_dist[b]).then(b.cmp(&a)))
            .expect("nonempty");
        centers.push(next);
        for (i, p) in tuples.iter().enumerate() {
            min_dist[i] = min_dist[i].min((p - &tuples[next]).norm_squared());
        }
    }
    let mut means: Vec<_> = centers.iter().map(|&i| tuples[i].clone()).collect();
    let mut covs = vec![base_cov.clone(); k];
    let mut weights = vec![1.0 / k as f64; k];
    let mut trace = Vec::new();
    let mut resp = DMatrix::zeros(n, k);

    for _ in 0..GMM_MAX_ITERATIONS {
        let factors = covs
            .iter()
            .map(|c| linalg::GaussianFactor::new(c))
            .collect::<Option<Vec<_>>>()
            .ok_or(Error::NotPositiveDefinite {
                step: 0,
                what: "GMM component covariance".into(),
            })?;
        let mut ll = 0.0;
        let mut row = vec![0.0; k];
        for (i, p) in tuples.iter().enumerate() {
            for j in 0..k {
                row[j] = weights[j].ln() + factors[j].log_pdf_residual(&(p - &means[j]));
            }
            let lse = linalg::log_sum_exp(&row);
            ll += lse;
            for j in 0..k {
                resp[(i, j)] = (row[j] - lse).exp();
            }
        }
        let done = trace
            .last()
            .is_some_and(|prev: &f64| ((ll - prev) / n as f64).abs() < GMM_TOLERANCE);
        trace.push(ll);
        if done {
            break;
        }
        for j in 0..k {
            let nk: f64 = resp.column(j).sum();
            if nk < 1e-10 {
                continue;
            }
            let mu = tuples
                .iter()
                .enumerate()
                .fold(DVector::zeros(d), |acc, (i, p)| acc + p * resp[(i, j)])
                / nk;
            let mut c = DMatrix::zeros(d, d);
            for (i, p) in tuples.iter().enumerate() {
                let dp = p - &mu;
                c += &dp * dp.transpose() * resp[(i, j)];
            }
            weights[j] = nk / n as f64;
            covs[j] = linalg::add_diagonal(&linalg::symmetrize(&(c / nk)), COV_FLOOR);
            means[j] = mu;
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
    }
    let factors = covs
        .iter()
        .map(|c| linalg::GaussianFactor::new(c))
        .collect::<Option<Vec<_>>>()
        .ok_or(Error::NotPositiveDefinite {
            step: 0,
            what: "GMM component covariance".into(),
        })?;
    Ok(GmmPrior {
        weights,
        means,
        covs,
        strength: prior_strength,
        log_likelihood_trace: trace,
        factors,
    })
}

fn nearest(points: &[DVector<f64>], target: &DVector<f64>) -> usize {
    (0..points.len())
        .min_by(|&a, &b| {
            (&points[a] - target)
                .norm_squared()
                .total_cmp(&(&points[b] - target).norm_squared())
        })
        .expect("nonempty")
}

impl GmmPrior {
    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Moment-matched Gaussian `(μ₀, Σ₀)` of the mixture with component
    /// weights set to the average responsibility of `points`.
    pub fn moments_for(&self, points: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
        let k = self.weights.len();
        let mut avg = vec![0.0; k];
        let mut row = vec![0.0; k];
        for p in points {
            for j in 0..k {
                row[j] = self.weights[j].ln() + self.factors[j].log_pdf_residual(&(p - &self.means[j]));
            }
            let lse = linalg::log_sum_exp(&row);
            for j in 0..k {
                avg[j] += (row[j] - lse).exp() / points.len() as f64;
            }
        }
        let d = self.dim();
        let mu0 = (0..k).fold(DVector::zeros(d), |acc, j| acc + &self.means[j] * avg[j]);
        let mut sigma0 = DMatrix::zeros(d, d);
        for j in 0..k {
            let dm = &self.means[j] - &mu0;
            sigma0 += (&self.covs[j] + &dm * dm.transpose()) * avg[j];
        }
        (mu0, linalg::symmetrize(&sigma0))
    }
}

// ---------------------------------------------------------------------------
// Dynamics fitting

/// Per-timestep linear-Gaussian regression of `x_{t+1}` on `(x_t, u_t)`.
///
/// With a prior, the joint Gaussian over the timestep's tuples is the
/// normal-inverse-Wishart MAP estimate with the mixture moments as prior;
/// otherwise a ridge regression with coefficient `ridge`. Either way the
/// affine term is fit from the empirical mean, so in-sample residuals have
/// zero mean.
pub fn fit_dynamics(samples: &[Trajectory], prior: Option<&GmmPrior>, ridge: f64) -> Result<LinearGaussianDynamics> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "dynamics fit needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let horizon = samples[0].horizon();
    let (dx, du) = (samples[0].state_dim(), samples[0].action_dim());
    if samples.iter().any(|s| s.horizon() != horizon || s.state_dim() != dx || s.action_dim() != du) {
        return Err(Error::dims(0, "samples differ in horizon or dimensions"));
    }
    let dz = dx + du;
    let mut steps = Vec::with_capacity(horizon - 1);
    for t in 0..horizon - 1 {
        let zs: Vec<_> = samples.iter().map(|s| concat(&s.states()[t], &s.actions()[t])).collect();
        let ys: Vec<_> = samples.iter().map(|s| s.states()[t + 1].clone()).collect();
        let step = match prior {
            None => {
                let fit = linalg::affine_regression(&zs, &ys, ridge)?;
                DynamicsStep {
                    fx: fit.weight.columns(0, dx).into_owned(),
                    fu: fit.weight.columns(dx, du).into_owned(),
                    offset: fit.bias,
                    noise: linalg::add_diagonal(&fit.residual_cov, COV_FLOOR),
                }
            }
            Some(gmm) => {
                let pts: Vec<_> = zs.iter().zip(&ys).map(|(z, y)| concat(z, y)).collect();
                let (mun, empsig) = linalg::mean_and_cov(&pts);
                let (mu0, sigma0) = gmm.moments_for(&pts);
                let nf = pts.len() as f64;
                let m = gmm.strength;
                let n0 = gmm.strength;
                let dm = &mun - &mu0;
                let sigma = (&empsig * nf + &sigma0 * m + &dm * dm.transpose() * (nf * m / (nf + m))) / (nf + n0);
                let sigma = linalg::symmetrize(&sigma);
                let szz = linalg::add_diagonal(&sigma.view((0, 0), (dz, dz)).into_owned(), ridge.max(COV_FLOOR));
                let syz = sigma.view((dz, 0), (dx, dz)).into_owned();
                let chol = nalgebra::Cholesky::new(szz.clone()).ok_or(Error::NotPositiveDefinite {
                    step: t,
                    what: "conditioned dynamics covariance".into(),
                })?;
                let f = chol.solve(&syz.transpose()).transpose();
                let offset = mun.rows(dz, dx) - &f * mun.rows(0, dz);
                let noise = sigma.view((dz, dz), (dx, dx)) - &f * &szz * f.transpose();
                DynamicsStep {
                    fx: f.columns(0, dx).into_owned(),
                    fu: f.columns(dx, du).into_owned(),
                    offset,
                    noise: linalg::add_diagonal(&linalg::psd_projection(&noise), COV_FLOOR),
                }
            }
        };
        steps.push(step);
    }
    let firsts: Vec<_> = samples.iter().map(|s| s.states()[0].clone()).collect();
    let (init_mean, init_cov) = linalg::mean_and_cov(&firsts);
    Ok(LinearGaussianDynamics {
        steps,
        init_mean,
        init_cov: linalg::add_diagonal(&init_cov, COV_FLOOR),
    })
}

/// Mean squared one-step prediction error of `dynamics` on `samples`.
pub fn dynamics_mse(dynamics: &LinearGaussianDynamics, samples: &[Trajectory]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in samples {
        for (t, d) in dynamics.steps.iter().enumerate() {
            let pred = d.mean_next(&s.states()[t], &s.actions()[t]);
            total += (pred - &s.states()[t + 1]).norm_squared();
            count += s.state_dim();
        }
    }
    total / count.max(1) as f64
}

// ---------------------------------------------------------------------------
// Maximum-entropy LQR

/// How the action covariance of an LQR solution is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "variance")]
pub enum CovarianceMode {
    /// `Σ_t = Q_uu⁻¹`, the optimum of `E[c] - H`.
    MaxEnt,
    /// `Σ_t = σ² I` regardless of the cost.
    Fixed(f64),
}

/// Quadratic in absolute coordinates: `½ zᵀ H z + gᵀ z`, `z = [x; u]`.
#[derive(Debug, Clone)]
struct AbsQuad {
    h: DMatrix<f64>,
    g: DVector<f64>,
}

impl AbsQuad {
    fn from_expansion(e: &CostExpansion) -> Self {
        let h = linalg::symmetrize(&e.hessian());
        let g = e.gradient() - &h * concat(&e.x, &e.u);
        Self { h, g }
    }

    /// `-log q(u|x)` of a linear-Gaussian conditional, up to a constant.
    fn from_conditional(step: &ControllerStep, precision: &DMatrix<f64>) -> Self {
        let (du, dx) = step.gain.shape();
        let pk = precision * &step.gain;
        let mut h = DMatrix::zeros(dx + du, dx + du);
        h.view_mut((0, 0), (dx, dx)).copy_from(&(step.gain.transpose() * &pk));
        h.view_mut((dx, 0), (du, dx)).copy_from(&(-&pk));
        h.view_mut((0, dx), (dx, du)).copy_from(&(-pk.transpose()));
        h.view_mut((dx, dx), (du, du)).copy_from(precision);
        let pkk = precision * &step.offset;
        let g = concat(&(step.gain.transpose() * &pkk), &(-pkk));
        Self { h, g }
    }

    fn blend(cost: &Self, other: &Self, eta: f64) -> Self {
        let s = 1.0 / (1.0 + eta);
        Self {
            h: (&cost.h + &other.h * eta) * s,
            g: (&cost.g + &other.g * eta) * s,
        }
    }
}

fn lqr_backward(
    dynamics: &LinearGaussianDynamics,
    quads: &[AbsQuad],
    mode: CovarianceMode,
) -> Result<LinearGaussianController> {
    let horizon = quads.len();
    if dynamics.horizon() != horizon {
        return Err(Error::dims(
            horizon.min(dynamics.horizon()),
            format!("{} cost expansions for dynamics horizon {}", horizon, dynamics.horizon()),
        ));
    }
    let dx = dynamics.state_dim();
    let du = quads[0].g.len() - dx;
    let mut vxx = DMatrix::<f64>::zeros(dx, dx);
    let mut vx = DVector::<f64>::zeros(dx);
    let mut steps = Vec::with_capacity(horizon);
    for t in (0..horizon).rev() {
        let mut qh = quads[t].h.clone();
        let mut qg = quads[t].g.clone();
        if qh.shape() != (dx + du, dx + du) {
            return Err(Error::dims(t, "cost expansion shape"));
        }
        if let Some(d) = dynamics.steps.get(t) {
            let mut f = DMatrix::zeros(dx, dx + du);
            f.view_mut((0, 0), (dx, dx)).copy_from(&d.fx);
            f.view_mut((0, dx), (dx, du)).copy_from(&d.fu);
            qh += f.transpose() * &vxx * &f;
            qg += f.transpose() * (&vxx * &d.offset + &vx);
        }
        let qh = linalg::symmetrize(&qh);
        let qxx = qh.view((0, 0), (dx, dx)).into_owned();
        let qux = qh.view((dx, 0), (du, dx)).into_owned();
        let quu = qh.view((dx, dx), (du, du)).into_owned();
        let qx = qg.rows(0, dx).into_owned();
        let qu = qg.rows(dx, du).into_owned();
        let quu_inv = regularized_inverse(&quu, t)?;
        let gain = -&quu_inv * &qux;
        let offset = -&quu_inv * &qu;
        let cov = match mode {
            CovarianceMode::MaxEnt => quu_inv,
            CovarianceMode::Fixed(v) => DMatrix::identity(du, du) * v,
        };
        vxx = linalg::symmetrize(
            &(&qxx + gain.transpose() * &quu * &gain + gain.transpose() * &qux + qux.transpose() * &gain),
        );
        vx = &qx + gain.transpose() * &quu * &offset + gain.transpose() * &qu + qux.transpose() * &offset;
        if !vxx.iter().chain(vx.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("value function at timestep {t}")));
        }
        steps.push(ControllerStep { gain, offset, cov });
    }
    steps.reverse();
    LinearGaussianController::new(steps)
}

/// `(Q_uu + μI)⁻¹` with `μ` escalated ×10 from 1e-8 until the matrix is PD.
fn regularized_inverse(quu: &DMatrix<f64>, step: usize) -> Result<DMatrix<f64>> {
    if let Some(inv) = linalg::spd_inverse(quu) {
        return Ok(inv);
    }
    let mut mu = 1e-8;
    while mu <= MAX_LEVENBERG {
        if let Some(inv) = linalg::spd_inverse(&linalg::add_diagonal(quu, mu)) {
            debug!("Q_uu regularized with mu={mu:e} at timestep {step}");
            return Ok(inv);
        }
        mu *= 10.0;
    }
    Err(Error::NotPositiveDefinite {
        step,
        what: format!("Q_uu after Levenberg regularization up to {MAX_LEVENBERG:e}"),
    })
}

/// LQR backward pass on the quadratized cost. Gains are the classical
/// `K = -Q_uu⁻¹Q_ux`, `k = -Q_uu⁻¹q_u`; with [`CovarianceMode::MaxEnt`]
/// the action covariance is `Q_uu⁻¹`.
pub fn maxent_lqr_backward(
    dynamics: &LinearGaussianDynamics,
    expansions: &[CostExpansion],
    mode: CovarianceMode,
) -> Result<LinearGaussianController> {
    let quads: Vec<_> = expansions.iter().map(AbsQuad::from_expansion).collect();
    lqr_backward(dynamics, &quads, mode)
}

/// Result of a KL-constrained controller update.
#[derive(Debug, Clone)]
pub struct KlStep {
    pub controller: LinearGaussianController,
    /// Dual variable; zero when the constraint is slack.
    pub eta: f64,
    /// Achieved `KL(new ‖ prev)` under the model dynamics.
    pub kl: f64,
}

/// Minimizes `E[c] - H` subject to `KL(q ‖ q_prev) ≤ ε` through the dual:
/// the LQR pass runs on `(c - η log q_prev)/(1 + η)` and `η` is bracketed
/// by ×10 expansion then bisected until the achieved KL lies within
/// `[0.9ε, 1.1ε]`. An `η` whose backward pass breaks down is treated like
/// one whose KL is too large. With [`CovarianceMode::Fixed`] the dual search runs on
/// the maximum-entropy solution and the covariance is replaced afterwards.
pub fn kl_constrained_update(
    prev: &LinearGaussianController,
    dynamics: &LinearGaussianDynamics,
    expansions: &[CostExpansion],
    epsilon: f64,
    mode: CovarianceMode,
) -> Result<KlStep> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("KL step must be positive, got {epsilon}")));
    }
    let cost: Vec<_> = expansions.iter().map(AbsQuad::from_expansion).collect();
    let entropy_terms: Vec<_> = (0..prev.horizon())
        .map(|t| AbsQuad::from_conditional(prev.step(t), &prev.factor(t).precision()))
        .collect();
    let solve = |eta: f64| -> Result<(LinearGaussianController, f64)> {
        let quads: Vec<_> = cost
            .iter()
            .zip(&entropy_terms)
            .map(|(c, e)| AbsQuad::blend(c, e, eta))
            .collect();
        let ctrl = lqr_backward(dynamics, &quads, CovarianceMode::MaxEnt)?;
        let kl = kl_traj(&GaussianTrajDist::new(dynamics.clone(), ctrl.clone())?, prev)?;
        Ok((ctrl, kl))
    };
    let (lo_band, hi_band) = (0.9 * epsilon, 1.1 * epsilon);
    let finish = |ctrl: LinearGaussianController, eta: f64, kl: f64| -> Result<KlStep> {
        let controller = match mode {
            CovarianceMode::MaxEnt => ctrl,
            CovarianceMode::Fixed(v) => ctrl.with_covariance(&(DMatrix::identity(ctrl.action_dim(), ctrl.action_dim()) * v))?,
        };
        Ok(KlStep { controller, eta, kl })
    };

    // a backward pass that breaks down counts as a step that is too large
    let attempt = |eta: f64| -> Result<Option<(LinearGaussianController, f64)>> {
        match solve(eta) {
            Ok(found) => Ok(Some(found)),
            Err(Error::NotPositiveDefinite { .. } | Error::NonFinite(_)) => {
                debug!("backward pass failed at eta={eta:e}");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    };
    let within = |found: &Option<(LinearGaussianController, f64)>| found.as_ref().is_some_and(|f| f.1 <= hi_band);

    let free = attempt(0.0)?;
    if let Some((ctrl0, kl0)) = free.filter(|f| f.1 <= hi_band) {
        return finish(ctrl0, 0.0, kl0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut found = attempt(hi)?;
    let mut expansions_used = 0;
    while !within(&found) {
        expansions_used += 1;
        if expansions_used > MAX_BRACKET_EXPANSIONS {
            return Err(Error::DualSearch(format!(
                "no η ≤ {hi:e} brings KL below {hi_band:e} (last {:?})",
                found.map(|f| f.1)
            )));
        }
        lo = hi;
        hi *= 10.0;
        found = attempt(hi)?;
    }
    let mut upper = found.expect("bracket ends on a solved step");
    if upper.1 >= lo_band {
        return finish(upper.0, hi, upper.1);
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        match attempt(mid)? {
            Some((ctrl, kl)) if (lo_band..=hi_band).contains(&kl) => return finish(ctrl, mid, kl),
            Some((ctrl, kl)) if kl < lo_band => {
                hi = mid;
                upper = (ctrl, kl);
            }
            _ => lo = mid,
        }
    }
    warn!("dual bisection stopped at eta={hi:e} with KL {:e} (target {epsilon:e})", upper.1);
    finish(upper.0, hi, upper.1)
}

// ---------------------------------------------------------------------------
// Step size adaptation

/// Trust-region state carried between policy updates.
#[derive(Debug, Clone)]
pub struct StepState {
    pub epsilon: f64,
    pub previous: Option<LinearGaussianController>,
    pub predicted_improvement: f64,
    pub actual_improvement: f64,
}

impl StepState {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon: epsilon.clamp(MIN_EPSILON, MAX_EPSILON),
            previous: None,
            predicted_improvement: 0.0,
            actual_improvement: 0.0,
        }
    }
}

/// New KL step from the last update's improvements, both measured with the
/// cost that produced the update: halve when the objective got worse,
/// double when at least half the predicted improvement was realized.
pub fn adapt_step(state: &StepState) -> f64 {
    let eps = state.epsilon;
    let next = if state.actual_improvement < 0.0 {
        eps * 0.5
    } else if state.actual_improvement >= 0.5 * state.predicted_improvement {
        eps * 2.0
    } else {
        eps
    };
    next.clamp(MIN_EPSILON, MAX_EPSILON)
}

// ---------------------------------------------------------------------------
// Drivers

/// Where the dynamics for an update come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DynamicsSource {
    /// Regression on the current samples.
    #[default]
    Fitted,
    /// Linearization of the simulator along the mean path.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoloptConfig {
    pub initial_epsilon: f64,
    pub dynamics: DynamicsSource,
    pub use_gmm_prior: bool,
    pub gmm_strength: f64,
    /// Cap on tuples used per GMM refit (strided subsample).
    pub gmm_max_points: usize,
    pub ridge: f64,
    pub covariance: CovarianceMode,
}

impl Default for PoloptConfig {
    fn default() -> Self {
        Self {
            initial_epsilon: 1.0,
            dynamics: DynamicsSource::Fitted,
            use_gmm_prior: true,
            gmm_strength: 1.0,
            gmm_max_points: 500,
            ridge: 1e-6,
            covariance: CovarianceMode::MaxEnt,
        }
    }
}

/// One row of the per-iteration policy diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PoloptDiagnostics {
    pub iter: usize,
    pub expected_cost: f64,
    pub kl_step: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub dynamics_mse: f64,
}

pub fn diagnostics_csv(rows: &[PoloptDiagnostics]) -> String {
    let mut out = String::from("iter,expected_cost,kl_step,eta,epsilon,dynamics_mse\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.iter, r.expected_cost, r.kl_step, r.eta, r.epsilon, r.dynamics_mse
        ));
    }
    out
}

/// Outcome of one sample-based policy update.
#[derive(Debug, Clone)]
pub struct PolicyUpdate {
    pub controller: LinearGaussianController,
    /// Model objective of the previous controller minus that of the new one.
    pub predicted_improvement: f64,
    pub diagnostics: PoloptDiagnostics,
}

/// Iterative policy optimizer: fit (or linearize) dynamics around the
/// current controller, quadratize the cost at the mean path, take a
/// KL-constrained step, and adapt the step from realized improvements.
#[derive(Debug, Clone)]
pub struct PolicyLearner {
    pub config: PoloptConfig,
    pub step: StepState,
    tuples: Vec<DVector<f64>>,
    iter: usize,
}

impl PolicyLearner {
    pub fn new(config: PoloptConfig) -> Self {
        let step = StepState::new(config.initial_epsilon);
        Self {
            config,
            step,
            tuples: Vec::new(),
            iter: 0,
        }
    }

    /// Adds interaction tuples `(x_t, u_t, x_{t+1})` for the global prior.
    pub fn record(&mut self, samples: &[Trajectory]) {
        for s in samples {
            for t in 0..s.horizon() - 1 {
                self.tuples.push(concat(&concat(&s.states()[t], &s.actions()[t]), &s.states()[t + 1]));
            }
        }
    }

    pub fn num_tuples(&self) -> usize {
        self.tuples.len()
    }

    fn prior(&self) -> Result<Option<GmmPrior>> {
        if !self.config.use_gmm_prior || self.tuples.is_empty() {
            return Ok(None);
        }
        let stride = self.tuples.len().div_ceil(self.config.gmm_max_points.max(1));
        let pts: Vec<_> = self.tuples.iter().step_by(stride.max(1)).cloned().collect();
        let k = default_gmm_components(pts.len()).min(pts.len());
        fit_gmm(&pts, k, self.config.gmm_strength).map(Some)
    }

    /// Model dynamics and nominal path for `ctrl`.
    pub fn model<P: Plant + ?Sized>(
        &self,
        plant: &P,
        ctrl: &LinearGaussianController,
        samples: &[Trajectory],
    ) -> Result<(LinearGaussianDynamics, Vec<DVector<f64>>, Vec<DVector<f64>>, f64)> {
        match self.config.dynamics {
            DynamicsSource::Exact => {
                let (d, xs, us) = linearize_along(plant, ctrl)?;
                let mse = if samples.is_empty() { 0.0 } else { dynamics_mse(&d, samples) };
                Ok((d, xs, us, mse))
            }
            DynamicsSource::Fitted => {
                let prior = self.prior()?;
                let d = fit_dynamics(samples, prior.as_ref(), self.config.ridge)?;
                let mse = dynamics_mse(&d, samples);
                let marg = forward_marginals(&GaussianTrajDist::new(d.clone(), ctrl.clone())?)?;
                let xs = marg.iter().map(|m| m.state_mean.clone()).collect();
                let us = marg.iter().map(|m| m.action_mean.clone()).collect();
                Ok((d, xs, us, mse))
            }
        }
    }

    /// One KL-constrained update of `ctrl` against `cost` using `samples`
    /// drawn from `ctrl`.
    pub fn update<P: Plant + ?Sized>(
        &mut self,
        plant: &P,
        ctrl: &LinearGaussianController,
        samples: &[Trajectory],
        cost: &dyn StepCost,
    ) -> Result<PolicyUpdate> {
        let (dynamics, xs, us, mse) = self.model(plant, ctrl, samples)?;
        let expansions = cost.expand_along(&xs, &us);
        let before = model_objective(&dynamics, ctrl, &expansions)?;
        let step = kl_constrained_update(ctrl, &dynamics, &expansions, self.step.epsilon, self.config.covariance)?;
        let after = model_objective(&dynamics, &step.controller, &expansions)?;
        let marg = forward_marginals(&GaussianTrajDist::new(dynamics, step.controller.clone())?)?;
        let diagnostics = PoloptDiagnostics {
            iter: self.iter,
            expected_cost: expected_model_cost(&marg, &expansions),
            kl_step: step.kl,
            eta: step.eta,
            epsilon: self.step.epsilon,
            dynamics_mse: mse,
        };
        self.iter += 1;
        self.step.previous = Some(ctrl.clone());
        self.step.predicted_improvement = before - after;
        if !(before.is_finite() && after.is_finite()) {
            return Err(Error::Divergence {
                message: "non-finite model objective".into(),
                trace: vec![before, after],
            });
        }
        Ok(PolicyUpdate {
            controller: step.controller,
            predicted_improvement: before - after,
            diagnostics,
        })
    }

    /// Records the realized improvement of the last update and adapts ε.
    pub fn adapt(&mut self, actual_improvement: f64) -> f64 {
        self.step.actual_improvement = actual_improvement;
        self.step.epsilon = adapt_step(&self.step);
        self.step.epsilon
    }
}

/// Result of optimizing a policy to convergence.
#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub controller: LinearGaussianController,
    /// Model objective `E[c] - H` at each iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactOptConfig {
    pub max_iterations: usize,
    pub initial_epsilon: f64,
    /// Relative objective change treated as converged.
    pub tolerance: f64,
    pub covariance: CovarianceMode,
}

impl Default for ExactOptConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            initial_epsilon: 1.0,
            tolerance: 1e-9,
            covariance: CovarianceMode::MaxEnt,
        }
    }
}

/// `Σ_t E[c(x_t, u_t)]` by symmetric sigma points on each step marginal.
/// Exact for quadratic costs and independent of any expansion point.
pub fn sigma_point_cost(cost: &dyn StepCost, marginals: &[StepMarginal]) -> f64 {
    let mut total = 0.0;
    for m in marginals {
        let mean = m.joint_mean();
        let n = mean.len();
        let dx = m.state_mean.len();
        let root = linalg::psd_sqrt(&m.joint_cov()) * (n as f64).sqrt();
        let mut acc = 0.0;
        for i in 0..n {
            for sign in [1.0, -1.0] {
                let z = &mean + root.column(i) * sign;
                acc += cost.cost(&z.rows(0, dx).into_owned(), &z.rows(dx, n - dx).into_owned());
            }
        }
        total += acc / (2 * n) as f64;
    }
    total
}

/// Optimizes a controller against `cost` using exact linearizations of the
/// plant along the mean path. Every step is taken; the step size adapts to
/// the realized change of `E[c] - H` and the best controller seen is
/// returned.
pub fn optimize_exact<P: Plant + ?Sized>(
    plant: &P,
    cost: &dyn StepCost,
    init: &LinearGaussianController,
    config: &ExactOptConfig,
) -> Result<PolicyRun> {
    let evaluate = |ctrl: &LinearGaussianController| -> Result<(f64, LinearGaussianDynamics, Vec<CostExpansion>)> {
        let (dynamics, xs, us) = linearize_along(plant, ctrl)?;
        let expansions = cost.expand_along(&xs, &us);
        let marginals = forward_marginals(&GaussianTrajDist::new(dynamics.clone(), ctrl.clone())?)?;
        let obj = sigma_point_cost(cost, &marginals) - ctrl.entropy();
        Ok((obj, dynamics, expansions))
    };
    let mut ctrl = init.clone();
    let mut state = StepState::new(config.initial_epsilon);
    let (mut obj, mut dynamics, mut expansions) = evaluate(&ctrl)?;
    let mut trace = vec![obj];
    let mut best = (obj, ctrl.clone());
    let mut converged = false;
    for _ in 0..config.max_iterations {
        if !obj.is_finite() {
            return Err(Error::Divergence {
                message: "non-finite objective".into(),
                trace,
            });
        }
        let step = match kl_constrained_update(&ctrl, &dynamics, &expansions, state.epsilon, config.covariance) {
            Ok(s) => s,
            Err(e) => {
                return Err(Error::Divergence {
                    message: format!("policy update failed: {e}"),
                    trace,
                })
            }
        };
        let predicted = model_objective(&dynamics, &ctrl, &expansions)?
            - model_objective(&dynamics, &step.controller, &expansions)?;
        let (new_obj, new_dyn, new_exp) = match evaluate(&step.controller) {
            Ok(e) if e.0.is_finite() => e,
            // Rejected: the candidate left the simulator's finite range.
            _ => {
                if state.epsilon <= MIN_EPSILON {
                    break;
                }
                state.epsilon = (state.epsilon * 0.5).max(MIN_EPSILON);
                continue;
            }
        };
        let actual = obj - new_obj;
        state.predicted_improvement = predicted;
        state.actual_improvement = actual;
        state.epsilon = adapt_step(&state);
        ctrl = step.controller;
        obj = new_obj;
        dynamics = new_dyn;
        expansions = new_exp;
        trace.push(obj);
        if obj < best.0 {
            best = (obj, ctrl.clone());
        }
        if step.eta == 0.0 && actual.abs() <= config.tolerance * (1.0 + obj.abs()) {
            converged = true;
            break;
        }
    }
    Ok(PolicyRun {
        controller: best.1,
        trace,
        converged,
    })
}
