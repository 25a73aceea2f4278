//! Guided cost learning: alternate IOC updates of the cost network on all
//! samples gathered so far with KL-constrained policy updates against the
//! current cost. Also the fixed-proposal baseline and the reoptimization
//! protocol used to evaluate learned costs.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::costmodel::CostNetwork;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::ioc::{self, Adam, IocConfig, LossBreakdown, SampleSet};
use crate::polopt::{
    self, CovarianceMode, ExactOptConfig, Plant, PolicyLearner, PoloptConfig, PoloptDiagnostics, StepCost,
};
use crate::rng::substream;
use crate::trajmath::{fit_demo_distribution, kl_traj, GaussianTrajDist, LinearGaussianController, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Zero-gain, zero-offset controller with isotropic noise.
    #[default]
    Random,
    /// Linear-Gaussian controller regressed on the demonstrations.
    DemoFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkInit {
    #[default]
    Identity,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub init: NetworkInit,
    /// Defaults to two layers of width `2 d_in`.
    pub hidden_widths: Option<Vec<usize>>,
    /// Defaults to `2 d_in`.
    pub feature_dim: Option<usize>,
    /// Weight of the `‖u‖²` term; defaults to the environment's action weight.
    pub torque_weight: Option<f64>,
    /// State components fed to the network; defaults per environment.
    pub inputs: Option<Vec<usize>>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            init: NetworkInit::Identity,
            hidden_widths: None,
            feature_dim: None,
            torque_weight: None,
            inputs: None,
        }
    }
}

impl NetworkConfig {
    pub fn build<R: rand::Rng + ?Sized>(&self, env: &EnvSpec, rng: &mut R) -> Result<CostNetwork> {
        let inputs = self.inputs.clone().unwrap_or_else(|| env.cost_inputs());
        let d_in = inputs.len();
        let widths = self.hidden_widths.clone().unwrap_or_else(|| vec![2 * d_in; 2]);
        let features = self.feature_dim.unwrap_or(2 * d_in);
        let torque_weight = self.torque_weight.unwrap_or_else(|| env.cost.action_weight());
        match self.init {
            NetworkInit::Identity => {
                CostNetwork::init_identity_padded(env.d_x(), inputs, &widths, features, torque_weight, 1e-3, rng)
            }
            NetworkInit::Random => CostNetwork::random(env.d_x(), inputs, &widths, features, torque_weight, rng),
        }
    }
}

/// Which density the demonstrations are attributed to in the fusion weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DemoWeights {
    /// Single Gaussian trajectory distribution fit to the demos.
    #[default]
    Empirical,
    /// The true demo-generating controller, supplied through [`Oracle`].
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GclConfig {
    pub init: InitMode,
    /// Action variance of the random initial controller.
    pub init_variance: f64,
    pub iterations: usize,
    pub samples_per_iteration: usize,
    pub ioc: IocConfig,
    pub polopt: PoloptConfig,
    pub network: NetworkConfig,
    pub use_importance_weights: bool,
    pub use_maxent: bool,
    /// Action variance used when the maximum-entropy term is disabled.
    pub fixed_variance: f64,
    pub use_lcr: bool,
    pub use_mono: bool,
    pub demo_weights: DemoWeights,
    pub seed: u64,
}

impl Default for GclConfig {
    fn default() -> Self {
        Self {
            init: InitMode::Random,
            init_variance: 1.0,
            iterations: 20,
            samples_per_iteration: 5,
            ioc: IocConfig::default(),
            polopt: PoloptConfig::default(),
            network: NetworkConfig::default(),
            use_importance_weights: true,
            use_maxent: true,
            fixed_variance: 1e-4,
            use_lcr: true,
            use_mono: true,
            demo_weights: DemoWeights::Empirical,
            seed: 0,
        }
    }
}

impl GclConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.samples_per_iteration == 0 {
            return Err(Error::Config(
                "iterations and samples_per_iteration must be at least 1".into(),
            ));
        }
        if self.samples_per_iteration < 2 && self.polopt.dynamics == polopt::DynamicsSource::Fitted {
            return Err(Error::Config("fitted dynamics need at least 2 samples per iteration".into()));
        }
        Ok(())
    }

    pub fn effective_ioc(&self) -> IocConfig {
        let mut ioc = self.ioc.clone();
        ioc.importance_weights = self.use_importance_weights;
        if !self.use_lcr {
            ioc.regularization.lambda_lcr = 0.0;
        }
        if !self.use_mono {
            ioc.regularization.lambda_mono = 0.0;
        }
        ioc
    }

    pub fn effective_polopt(&self) -> PoloptConfig {
        let mut p = self.polopt.clone();
        p.covariance = if self.use_maxent {
            CovarianceMode::MaxEnt
        } else {
            CovarianceMode::Fixed(self.fixed_variance)
        };
        p
    }
}

/// Privileged information available in synthetic experiments.
#[derive(Debug, Clone, Default)]
pub struct Oracle {
    /// True demo-generating controller, for [`DemoWeights::GroundTruth`].
    pub demo_controller: Option<LinearGaussianController>,
    /// Distribution to report `KL(learned ‖ truth)` against.
    pub truth: Option<LinearGaussianController>,
}

/// One row of the per-iteration report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportRow {
    pub iter: usize,
    /// Mean minibatch loss over the iteration's IOC steps.
    pub ioc_loss: f64,
    pub kl_to_truth: Option<f64>,
    pub gt_cost_mean: f64,
    pub distance_to_goal: f64,
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("iter,ioc_loss,kl_to_truth,gt_cost_mean,distance_to_goal\n");
    for r in rows {
        let kl = r.kl_to_truth.map(|v| format!("{v:.16e}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{:.16e},{},{:.16e},{:.16e}\n",
            r.iter, r.ioc_loss, kl, r.gt_cost_mean, r.distance_to_goal
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct GclOutcome {
    pub cost: CostNetwork,
    pub controller: LinearGaussianController,
    pub report: Vec<ReportRow>,
    pub loss_trace: Vec<LossBreakdown>,
    pub diagnostics: Vec<PoloptDiagnostics>,
    /// Cost network after each iteration's IOC update.
    pub cost_history: Vec<CostNetwork>,
    /// Final `KL(learned ‖ truth)` under the true dynamics, if a truth was given.
    pub kl_to_truth: Option<f64>,
    pub samples: SampleSet,
}

/// `KL(p_ctrl ‖ p_truth)` with both controllers run on the plant's
/// dynamics linearized along `ctrl`'s mean path.
pub fn kl_under_plant<P: Plant + ?Sized>(
    plant: &P,
    ctrl: &LinearGaussianController,
    truth: &LinearGaussianController,
) -> Result<f64> {
    let (dynamics, _, _) = polopt::linearize_along(plant, ctrl)?;
    kl_traj(&GaussianTrajDist::new(dynamics, ctrl.clone())?, truth)
}

fn mean_final_distance(env: &EnvSpec, trajs: &[Trajectory]) -> f64 {
    trajs.iter().map(|t| env.distance_to_goal(t.final_state())).sum::<f64>() / trajs.len() as f64
}

fn mean_gt_cost(env: &EnvSpec, trajs: &[Trajectory]) -> f64 {
    trajs.iter().map(|t| env.cost.traj_cost(t)).sum::<f64>() / trajs.len() as f64
}

fn initial_policy(env: &EnvSpec, demos: &[Trajectory], cfg: &GclConfig) -> Result<LinearGaussianController> {
    match cfg.init {
        InitMode::Random => LinearGaussianController::isotropic(env.horizon, env.d_x(), env.d_u(), cfg.init_variance),
        InitMode::DemoFit => Ok(fit_demo_distribution(demos)?.controller),
    }
}

fn demo_proposal(demos: &[Trajectory], cfg: &GclConfig, oracle: &Oracle) -> Result<LinearGaussianController> {
    match cfg.demo_weights {
        DemoWeights::Empirical => Ok(fit_demo_distribution(demos)?.controller),
        DemoWeights::GroundTruth => oracle
            .demo_controller
            .clone()
            .ok_or_else(|| Error::Config("ground-truth demo weights need the true demo controller".into())),
    }
}

/// Runs guided cost learning on `env` from `demos`.
pub fn guided_cost_learning(env: &EnvSpec, demos: &[Trajectory], cfg: &GclConfig, oracle: &Oracle) -> Result<GclOutcome> {
    cfg.validate()?;
    if demos.is_empty() {
        return Err(Error::InsufficientData("guided cost learning needs demonstrations".into()));
    }
    let mut init_rng = substream(cfg.seed, "init");
    let mut rollout_rng = substream(cfg.seed, "rollouts");
    let mut batch_rng = substream(cfg.seed, "batching");

    let mut net = cfg.network.build(env, &mut init_rng)?;
    let mut ctrl = initial_policy(env, demos, cfg)?;
    let ioc_cfg = cfg.effective_ioc();
    let mut adam = Adam::new(net.num_params(), ioc_cfg.learning_rate);
    let mut learner = PolicyLearner::new(cfg.effective_polopt());

    let mut set = SampleSet::new();
    let demo_source = set.add_proposal(demo_proposal(demos, cfg, oracle)?)?;
    set.add_demos(demo_source, demos.iter().cloned())?;

    let mut report = Vec::with_capacity(cfg.iterations);
    let mut loss_trace = Vec::new();
    let mut diagnostics = Vec::new();
    let mut cost_history = Vec::with_capacity(cfg.iterations);
    let mut pending: Option<(CostNetwork, Vec<Trajectory>, LinearGaussianController)> = None;

    for iter in 0..cfg.iterations {
        let fail = |e: Error, trace: &[LossBreakdown]| Error::Divergence {
            message: format!("iteration {iter}: {e}"),
            trace: trace.iter().map(|l| l.loss).collect(),
        };
        let samples = polopt::rollout_many(env, &ctrl, cfg.samples_per_iteration, &mut rollout_rng)
            .map_err(|e| fail(e, &loss_trace))?;
        if let Some((prev_cost, prev_samples, prev_ctrl)) = pending.take() {
            let actual = polopt::sample_objective(&prev_cost, &prev_samples, &prev_ctrl)
                - polopt::sample_objective(&prev_cost, &samples, &ctrl);
            learner.adapt(actual);
        }
        let source = set.add_proposal(ctrl.clone()).map_err(|e| fail(e, &loss_trace))?;
        set.add_samples(source, samples.iter().cloned())
            .map_err(|e| fail(e, &loss_trace))?;
        learner.record(&samples);

        let losses = ioc::ioc_update(&mut net, &set, &ioc_cfg, &mut adam, &mut batch_rng)
            .map_err(|e| fail(e, &loss_trace))?;
        let ioc_loss = if losses.is_empty() {
            f64::NAN
        } else {
            losses.iter().map(|l| l.loss).sum::<f64>() / losses.len() as f64
        };
        loss_trace.extend_from_slice(&losses);
        cost_history.push(net.clone());

        let kl_to_truth = match &oracle.truth {
            Some(truth) => Some(kl_under_plant(env, &ctrl, truth).map_err(|e| fail(e, &loss_trace))?),
            None => None,
        };
        report.push(ReportRow {
            iter,
            ioc_loss,
            kl_to_truth,
            gt_cost_mean: mean_gt_cost(env, &samples),
            distance_to_goal: mean_final_distance(env, &samples),
        });

        let update = learner
            .update(env, &ctrl, &samples, &net)
            .map_err(|e| fail(e, &loss_trace))?;
        diagnostics.push(update.diagnostics.clone());
        pending = Some((net.clone(), samples, ctrl));
        ctrl = update.controller;
    }

    let kl_to_truth = match &oracle.truth {
        Some(truth) => Some(kl_under_plant(env, &ctrl, truth)?),
        None => None,
    };
    Ok(GclOutcome {
        cost: net,
        controller: ctrl,
        report,
        loss_trace,
        diagnostics,
        cost_history,
        kl_to_truth,
        samples: set,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Proposal {
    #[default]
    Random,
    DemoFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub proposal: Proposal,
    pub use_importance_weights: bool,
    pub n_samples: usize,
    /// Total IOC gradient steps on the fixed pools.
    pub ioc_iterations: usize,
    pub init_variance: f64,
    pub ioc: IocConfig,
    pub network: NetworkConfig,
    /// Rollouts used to measure the reoptimized controller.
    pub eval_rollouts: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            proposal: Proposal::Random,
            use_importance_weights: true,
            n_samples: 20,
            ioc_iterations: 2000,
            init_variance: 1.0,
            ioc: IocConfig::default(),
            network: NetworkConfig::default(),
            eval_rollouts: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub cost: CostNetwork,
    pub loss_trace: Vec<LossBreakdown>,
    /// Controller reoptimized against the learned cost.
    pub controller: LinearGaussianController,
    pub distance_to_goal: f64,
}

/// IOC with all background samples drawn once from a fixed proposal,
/// followed by reoptimizing a fresh policy against the learned cost.
pub fn baseline_irl(env: &EnvSpec, demos: &[Trajectory], cfg: &BaselineConfig) -> Result<BaselineOutcome> {
    if demos.is_empty() || cfg.n_samples == 0 || cfg.eval_rollouts == 0 {
        return Err(Error::InsufficientData("baseline needs demos and at least one sample".into()));
    }
    let mut init_rng = substream(cfg.seed, "init");
    let mut rollout_rng = substream(cfg.seed, "rollouts");
    let mut batch_rng = substream(cfg.seed, "batching");
    let mut eval_rng = substream(cfg.seed, "eval");
    let mut net = cfg.network.build(env, &mut init_rng)?;
    let demo_fit = fit_demo_distribution(demos)?.controller;
    let proposal = match cfg.proposal {
        Proposal::Random => LinearGaussianController::isotropic(env.horizon, env.d_x(), env.d_u(), cfg.init_variance)?,
        Proposal::DemoFit => demo_fit.clone(),
    };
    let mut set = SampleSet::new();
    let demo_source = set.add_proposal(demo_fit)?;
    set.add_demos(demo_source, demos.iter().cloned())?;
    let source = set.add_proposal(proposal.clone())?;
    set.add_samples(source, polopt::rollout_many(env, &proposal, cfg.n_samples, &mut rollout_rng)?)?;

    let mut ioc_cfg = cfg.ioc.clone();
    ioc_cfg.iterations = cfg.ioc_iterations;
    ioc_cfg.importance_weights = cfg.use_importance_weights;
    let mut adam = Adam::new(net.num_params(), ioc_cfg.learning_rate);
    let loss_trace = ioc::ioc_update(&mut net, &set, &ioc_cfg, &mut adam, &mut batch_rng)?;
    let controller = reoptimize(env, &net, &env.initial_mean())?;
    let distance_to_goal = evaluate_distance(env, &controller, &env.initial_mean(), cfg.eval_rollouts, &mut eval_rng)?;
    Ok(BaselineOutcome {
        cost: net,
        loss_trace,
        controller,
        distance_to_goal,
    })
}

/// Optimizes a fresh controller against `cost` from `start` using the
/// simulator's linearization.
pub fn reoptimize(env: &EnvSpec, cost: &dyn StepCost, start: &DVector<f64>) -> Result<LinearGaussianController> {
    let local = env.with_initial_state(start);
    let init = LinearGaussianController::isotropic(env.horizon, env.d_x(), env.d_u(), 1.0)?;
    Ok(polopt::optimize_exact(&local, cost, &init, &ExactOptConfig::default())?.controller)
}

/// Mean final distance-to-goal of `n` rollouts of `ctrl` from `start`.
pub fn evaluate_distance<R: rand::Rng + ?Sized>(
    env: &EnvSpec,
    ctrl: &LinearGaussianController,
    start: &DVector<f64>,
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    let local = env.with_initial_state(start);
    let trajs = polopt::rollout_many(&local, ctrl, n, rng)?;
    Ok(mean_final_distance(env, &trajs))
}
