//! Sample-based maximum-entropy IOC: fusion importance weights over all
//! proposal distributions, the loss and its gradient, and the minibatch
//! inner loop that fits the cost network.

use std::sync::Arc;

use nalgebra::DVector;
use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::costmodel::{lcr_penalty, mono_penalty, CostNetwork};
use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::trajmath::{traj_log_density, LinearGaussianController, Trajectory};

#[derive(Debug, Clone)]
struct Entry {
    traj: Arc<Trajectory>,
    source: usize,
    is_demo: bool,
    /// `log q_κ(τ)` for every registered proposal, in registration order.
    log_q: Vec<f64>,
}

/// Every trajectory seen so far together with the proposal that produced
/// it and its cached density under each registered proposal.
#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    proposals: Vec<Arc<LinearGaussianController>>,
    entries: Vec<Entry>,
}

impl SampleSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a proposal and returns its index. Densities of existing
    /// trajectories under it are computed immediately.
    pub fn add_proposal(&mut self, ctrl: LinearGaussianController) -> Result<usize> {
        for e in &mut self.entries {
            e.log_q.push(traj_log_density(&ctrl, &e.traj)?);
        }
        self.proposals.push(Arc::new(ctrl));
        Ok(self.proposals.len() - 1)
    }

    fn push(&mut self, source: usize, traj: Trajectory, is_demo: bool) -> Result<()> {
        if source >= self.proposals.len() {
            return Err(Error::InvalidArgument(format!(
                "proposal {source} is not registered ({} proposals)",
                self.proposals.len()
            )));
        }
        let log_q = self
            .proposals
            .iter()
            .map(|q| traj_log_density(q, &traj))
            .collect::<Result<Vec<_>>>()?;
        self.entries.push(Entry {
            traj: Arc::new(traj),
            source,
            is_demo,
            log_q,
        });
        Ok(())
    }

    pub fn add_samples(&mut self, source: usize, trajs: impl IntoIterator<Item = Trajectory>) -> Result<()> {
        trajs.into_iter().try_for_each(|t| self.push(source, t, false))
    }

    /// Adds demonstrations attributed to `source` (normally the fitted demo
    /// distribution).
    pub fn add_demos(&mut self, source: usize, trajs: impl IntoIterator<Item = Trajectory>) -> Result<()> {
        trajs.into_iter().try_for_each(|t| self.push(source, t, true))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_proposals(&self) -> usize {
        self.proposals.len()
    }

    pub fn proposal(&self, k: usize) -> &LinearGaussianController {
        &self.proposals[k]
    }

    pub fn trajectory(&self, j: usize) -> &Trajectory {
        &self.entries[j].traj
    }

    pub fn source(&self, j: usize) -> usize {
        self.entries[j].source
    }

    pub fn is_demo(&self, j: usize) -> bool {
        self.entries[j].is_demo
    }

    pub fn demo_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.entries[j].is_demo).collect()
    }

    pub fn sample_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| !self.entries[j].is_demo).collect()
    }

    /// `log z_j = -log((1/k) Σ_κ q_κ(τ_j))` for the given entries.
    pub fn fusion_log_weights_of(&self, indices: &[usize]) -> Result<Vec<f64>> {
        if self.proposals.is_empty() {
            return Err(Error::InvalidArgument("no proposal distributions registered".into()));
        }
        let ln_k = (self.proposals.len() as f64).ln();
        Ok(indices
            .iter()
            .map(|&j| ln_k - log_sum_exp(&self.entries[j].log_q))
            .collect())
    }

    pub fn fusion_log_weights(&self) -> Result<Vec<f64>> {
        self.fusion_log_weights_of(&(0..self.len()).collect::<Vec<_>>())
    }
}

/// A background trajectory with its log importance weight.
#[derive(Debug, Clone, Copy)]
pub struct WeightedSample<'a> {
    pub traj: &'a Trajectory,
    pub log_weight: f64,
}

/// Components of the IOC loss; regularizer entries include their `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss: f64,
    pub demo_term: f64,
    pub log_z_term: f64,
    pub reg_lcr: f64,
    pub reg_mono: f64,
}

/// Regularization weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Regularization {
    pub lambda_lcr: f64,
    pub lambda_mono: f64,
    pub mono_margin: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Self {
            lambda_lcr: 10.0,
            lambda_mono: 1.0,
            mono_margin: 1.0,
        }
    }
}

impl Regularization {
    pub fn none() -> Self {
        Self {
            lambda_lcr: 0.0,
            lambda_mono: 0.0,
            ..Self::default()
        }
    }
}

/// Softmax of `log z_j - c_j`: the normalized weights `w_j / Z`.
pub fn sample_softmax(costs: &[f64], log_weights: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> = costs.iter().zip(log_weights).map(|(c, lz)| lz - c).collect();
    let lse = log_sum_exp(&logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

/// Loss and parameter gradient in one pass.
pub fn ioc_loss_and_gradient(
    net: &CostNetwork,
    demos: &[&Trajectory],
    samples: &[WeightedSample],
    reg: &Regularization,
) -> Result<(LossBreakdown, DVector<f64>)> {
    if demos.is_empty() || samples.is_empty() {
        return Err(Error::InsufficientData(format!(
            "IOC loss needs demos and samples, got {} and {}",
            demos.len(),
            samples.len()
        )));
    }
    let n = demos.len() as f64;
    let demo_costs: Vec<Vec<f64>> = demos.iter().map(|d| net.step_costs(d)).collect();
    let sample_costs: Vec<Vec<f64>> = samples.iter().map(|s| net.step_costs(s.traj)).collect();
    let sample_totals: Vec<f64> = sample_costs.iter().map(|c| c.iter().sum()).collect();
    let log_weights: Vec<f64> = samples.iter().map(|s| s.log_weight).collect();

    let demo_term = demo_costs.iter().map(|c| c.iter().sum::<f64>()).sum::<f64>() / n;
    let logits: Vec<f64> = sample_totals.iter().zip(&log_weights).map(|(c, lz)| lz - c).collect();
    let log_z_term = log_sum_exp(&logits) - (samples.len() as f64).ln();
    let softmax = sample_softmax(&sample_totals, &log_weights);

    let mut breakdown = LossBreakdown {
        demo_term,
        log_z_term,
        ..Default::default()
    };
    let mut grad = DVector::zeros(net.num_params());
    let torque = |t: &Trajectory| -> Vec<f64> { t.actions().iter().map(|u| net.torque_weight * u.norm_squared()).collect() };

    let mut accumulate = |traj: &Trajectory, step_costs: &[f64], weight: f64, mono: bool| -> Result<()> {
        let state_costs: Vec<f64> = step_costs.iter().zip(torque(traj)).map(|(c, tq)| c - tq).collect();
        let mut upstream = vec![weight; traj.horizon()];
        if reg.lambda_lcr != 0.0 {
            let (v, g) = lcr_penalty(&state_costs)?;
            breakdown.reg_lcr += reg.lambda_lcr * v;
            upstream.iter_mut().zip(&g).for_each(|(u, g)| *u += reg.lambda_lcr * g);
        }
        if mono && reg.lambda_mono != 0.0 {
            let (v, g) = mono_penalty(&state_costs, reg.mono_margin);
            breakdown.reg_mono += reg.lambda_mono * v;
            upstream.iter_mut().zip(&g).for_each(|(u, g)| *u += reg.lambda_mono * g);
        }
        if upstream.iter().any(|u| *u != 0.0) {
            grad += net.state_cost_vjp(traj.states(), &upstream);
        }
        Ok(())
    };
    for (d, c) in demos.iter().zip(&demo_costs) {
        accumulate(d, c, 1.0 / n, true)?;
    }
    for ((s, c), w) in samples.iter().zip(&sample_costs).zip(&softmax) {
        accumulate(s.traj, c, -w, false)?;
    }
    breakdown.loss = breakdown.demo_term + breakdown.log_z_term + breakdown.reg_lcr + breakdown.reg_mono;
    if !breakdown.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("IOC loss or gradient".into()));
    }
    Ok((breakdown, grad))
}

pub fn ioc_loss(
    net: &CostNetwork,
    demos: &[&Trajectory],
    samples: &[WeightedSample],
    reg: &Regularization,
) -> Result<LossBreakdown> {
    ioc_loss_and_gradient(net, demos, samples, reg).map(|(l, _)| l)
}

pub fn ioc_gradient(
    net: &CostNetwork,
    demos: &[&Trajectory],
    samples: &[WeightedSample],
    reg: &Regularization,
) -> Result<DVector<f64>> {
    ioc_loss_and_gradient(net, demos, samples, reg).map(|(_, g)| g)
}

/// Adam without learning-rate decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: DVector<f64>,
    v: DVector<f64>,
    t: i32,
}

impl Adam {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: DVector::zeros(num_params),
            v: DVector::zeros(num_params),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut DVector<f64>, grad: &DVector<f64>) {
        self.t += 1;
        self.m = &self.m * self.beta1 + grad * (1.0 - self.beta1);
        self.v = &self.v * self.beta2 + grad.component_mul(grad) * (1.0 - self.beta2);
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.learning_rate * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IocConfig {
    /// Gradient steps per call of [`ioc_update`].
    pub iterations: usize,
    pub demo_batch: usize,
    pub sample_batch: usize,
    pub learning_rate: f64,
    pub regularization: Regularization,
    /// Union the demo batch into the background batch.
    pub append_demos: bool,
    /// Use fusion importance weights; otherwise `z_j = 1`.
    pub importance_weights: bool,
}

impl Default for IocConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            demo_batch: 5,
            sample_batch: 10,
            learning_rate: 1e-3,
            regularization: Regularization::default(),
            append_demos: true,
            importance_weights: true,
        }
    }
}

fn minibatch<R: rand::Rng + ?Sized>(pool: &[usize], size: usize, rng: &mut R) -> Vec<usize> {
    if size >= pool.len() {
        return pool.to_vec();
    }
    let mut picked: Vec<usize> = sample_indices(rng, pool.len(), size).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    picked
}

/// Loss and gradient for explicit demo and background entries of `set`.
pub fn batch_loss_and_gradient(
    net: &CostNetwork,
    set: &SampleSet,
    demo_idx: &[usize],
    sample_idx: &[usize],
    config: &IocConfig,
) -> Result<(LossBreakdown, DVector<f64>)> {
    let mut background = sample_idx.to_vec();
    if config.append_demos {
        background.extend_from_slice(demo_idx);
    }
    let log_w = if config.importance_weights {
        set.fusion_log_weights_of(&background)?
    } else {
        vec![0.0; background.len()]
    };
    let demos: Vec<&Trajectory> = demo_idx.iter().map(|&j| set.trajectory(j)).collect();
    let samples: Vec<WeightedSample> = background
        .iter()
        .zip(&log_w)
        .map(|(&j, &lw)| WeightedSample {
            traj: set.trajectory(j),
            log_weight: lw,
        })
        .collect();
    ioc_loss_and_gradient(net, &demos, &samples, &config.regularization)
}

/// Runs `config.iterations` minibatch steps on `net`, returning the loss of
/// each batch before its step.
pub fn ioc_update<R: rand::Rng + ?Sized>(
    net: &mut CostNetwork,
    set: &SampleSet,
    config: &IocConfig,
    optimizer: &mut Adam,
    rng: &mut R,
) -> Result<Vec<LossBreakdown>> {
    if config.iterations == 0 {
        return Ok(Vec::new());
    }
    let demo_pool = set.demo_indices();
    let sample_pool = set.sample_indices();
    if demo_pool.is_empty() || (sample_pool.is_empty() && !config.append_demos) {
        return Err(Error::InsufficientData(format!(
            "IOC update needs demos and samples, have {} and {}",
            demo_pool.len(),
            sample_pool.len()
        )));
    }
    let mut trace = Vec::with_capacity(config.iterations);
    let mut params = net.params();
    for _ in 0..config.iterations {
        let demo_idx = minibatch(&demo_pool, config.demo_batch, rng);
        let sample_idx = minibatch(&sample_pool, config.sample_batch, rng);
        let (loss, grad) = batch_loss_and_gradient(net, set, &demo_idx, &sample_idx, config)?;
        trace.push(loss);
        optimizer.step(&mut params, &grad);
        net.set_params(&params)?;
    }
    Ok(trace)
}

pub fn loss_trace_csv(trace: &[LossBreakdown]) -> String {
    let mut out = String::from("iter,loss,demo_term,logZ_term,reg_lcr,reg_mono\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!(
            "{i},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            l.loss, l.demo_term, l.log_z_term, l.reg_lcr, l.reg_mono
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{generate_demos, initial_controller, EnvSpec};
    use crate::linalg;
    use crate::polopt::rollout_many;
    use crate::rng::substream;
    use crate::trajmath::ControllerStep;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Cost network whose state cost is the constant `‖b‖²`.
    fn constant_net(b2: f64, torque_weight: f64) -> CostNetwork {
        let mut net = CostNetwork::init_identity(1, vec![0], &[2], 1, torque_weight).unwrap();
        net.head_a.fill(0.0);
        net.head_b[0] = b2.sqrt();
        net
    }

    /// Two-step trajectory whose torque cost under `w_u = 1` is `c`.
    fn costed(c: f64) -> Trajectory {
        Trajectory::new(
            vec![DVector::zeros(1); 2],
            vec![DVector::from_element(1, c.sqrt()), DVector::zeros(1)],
        )
        .unwrap()
    }

    fn gaussian(horizon: usize, mean: f64, var: f64) -> LinearGaussianController {
        LinearGaussianController::new(vec![
            ControllerStep {
                gain: DMatrix::zeros(1, 1),
                offset: DVector::from_element(1, mean),
                cov: DMatrix::from_element(1, 1, var),
            };
            horizon
        ])
        .unwrap()
    }

    fn small_instance() -> (CostNetwork, Vec<Trajectory>, Vec<Trajectory>) {
        let mut rng = substream(0, "init");
        let mut net = CostNetwork::random(3, vec![0, 1, 2], &[6], 4, 0.1, &mut rng).unwrap();
        let p = net.params() + linalg::standard_normal(net.num_params(), &mut rng) * 0.2;
        net.set_params(&p).unwrap();
        let traj = |rng: &mut crate::rng::Rng, scale: f64| {
            Trajectory::new(
                (0..6).map(|_| linalg::standard_normal(3, rng) * scale).collect(),
                (0..6).map(|_| linalg::standard_normal(2, rng)).collect(),
            )
            .unwrap()
        };
        let demos = (0..3).map(|_| traj(&mut rng, 0.5)).collect();
        let samples = (0..4).map(|_| traj(&mut rng, 1.0)).collect();
        (net, demos, samples)
    }

    #[test]
    fn loss_example() {
        let net = constant_net(0.0, 1.0);
        let demo = costed(2.0);
        let (s1, s3) = (costed(1.0), costed(3.0));
        let samples = [
            WeightedSample { traj: &s1, log_weight: 0.0 },
            WeightedSample { traj: &s3, log_weight: 0.0 },
        ];
        let l = ioc_loss(&net, &[&demo], &samples, &Regularization::none()).unwrap();
        let expected = 2.0 + (0.5 * ((-1.0f64).exp() + (-3.0f64).exp())).ln();
        assert_relative_eq!(l.loss, expected, epsilon = 1e-12);
        assert!((l.loss - 0.4338).abs() < 1e-4);
        assert_eq!((l.reg_lcr, l.reg_mono), (0.0, 0.0));
    }

    #[test]
    fn fusion_weight_examples() {
        // two-step unit-dimensional proposals evaluated at their mean
        let at_density = |p: f64| gaussian(2, 0.0, 1.0 / (2.0 * PI * p));
        let traj = Trajectory::new(vec![DVector::zeros(1); 2], vec![DVector::zeros(1); 2]).unwrap();

        let mut single = SampleSet::new();
        let k = single.add_proposal(at_density(0.2)).unwrap();
        single.add_samples(k, [traj.clone()]).unwrap();
        assert_relative_eq!(single.fusion_log_weights().unwrap()[0], -(0.2f64.ln()), epsilon = 1e-12);

        let mut set = SampleSet::new();
        set.add_proposal(at_density(0.2)).unwrap();
        set.add_samples(0, [traj.clone()]).unwrap();
        set.add_proposal(at_density(0.3)).unwrap();
        assert_relative_eq!(set.fusion_log_weights().unwrap()[0].exp(), 4.0, epsilon = 1e-12);

        assert!(SampleSet::new().fusion_log_weights_of(&[]).is_err());
        assert!(SampleSet::new().add_samples(0, [traj]).is_err());
    }

    #[test]
    fn fusion_estimator_is_consistent() {
        // ∫ exp(-(u0² + u1²)/2) du over the plane is 2π
        let f = |t: &Trajectory| (-0.5 * t.actions().iter().map(|u| u[0] * u[0]).sum::<f64>()).exp();
        let states = vec![DVector::zeros(1); 2];
        let mut set = SampleSet::new();
        let mut rng = substream(9, "fusion");
        let proposals = [gaussian(2, 0.0, 4.0), gaussian(2, 0.5, 1.0)];
        for q in &proposals {
            set.add_proposal(q.clone()).unwrap();
        }
        let n = 100_000;
        for (k, q) in proposals.iter().enumerate() {
            let sd = q.step(0).cov[(0, 0)].sqrt();
            let mean = q.step(0).offset[0];
            let trajs = (0..n / 2).map(|_| {
                let us = (0..2).map(|_| DVector::from_element(1, mean + sd * linalg::standard_normal(1, &mut rng)[0])).collect();
                Trajectory::new(states.clone(), us).unwrap()
            });
            set.add_samples(k, trajs.collect::<Vec<_>>()).unwrap();
        }
        let log_z = set.fusion_log_weights().unwrap();
        let estimate = (0..set.len()).map(|j| log_z[j].exp() * f(set.trajectory(j))).sum::<f64>() / n as f64;
        assert!((estimate / (2.0 * PI) - 1.0).abs() < 0.01, "{estimate}");
    }

    #[test]
    fn unregularized_loss_is_shift_invariant() {
        let (mut net, demos, samples) = small_instance();
        net.head_a.fill(0.0);
        net.head_b.fill(0.0);
        let demo_refs: Vec<&Trajectory> = demos.iter().collect();
        let weighted: Vec<WeightedSample> = samples
            .iter()
            .enumerate()
            .map(|(j, t)| WeightedSample { traj: t, log_weight: 0.3 * j as f64 })
            .collect();
        let base = ioc_loss(&net, &demo_refs, &weighted, &Regularization::none()).unwrap();
        net.head_b[1] = 3.0;
        let shifted = ioc_loss(&net, &demo_refs, &weighted, &Regularization::none()).unwrap();
        assert_relative_eq!(shifted.demo_term - base.demo_term, 6.0 * 9.0, epsilon = 1e-8);
        assert_relative_eq!(shifted.loss, base.loss, epsilon = 1e-8);
    }

    #[test]
    fn gradient_self_cancels() {
        let (net, demos, _) = small_instance();
        let s = [WeightedSample { traj: &demos[0], log_weight: 0.0 }];
        let g = ioc_gradient(&net, &[&demos[0]], &s, &Regularization::none()).unwrap();
        assert!(g.amax() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (net, demos, samples) = small_instance();
        let demo_refs: Vec<&Trajectory> = demos.iter().collect();
        let weighted: Vec<WeightedSample> = samples
            .iter()
            .chain(&demos)
            .enumerate()
            .map(|(j, t)| WeightedSample { traj: t, log_weight: -0.5 * j as f64 })
            .collect();
        let reg = Regularization {
            lambda_lcr: 0.7,
            lambda_mono: 0.4,
            mono_margin: 0.05,
        };
        let (_, g) = ioc_loss_and_gradient(&net, &demo_refs, &weighted, &reg).unwrap();
        let p0 = net.params();
        let mut probe = net.clone();
        let h = 1e-6;
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] += h;
            probe.set_params(&p).unwrap();
            let up = ioc_loss(&probe, &demo_refs, &weighted, &reg).unwrap().loss;
            p[i] -= 2.0 * h;
            probe.set_params(&p).unwrap();
            let down = ioc_loss(&probe, &demo_refs, &weighted, &reg).unwrap().loss;
            let fd = (up - down) / (2.0 * h);
            assert!((g[i] - fd).abs() / fd.abs().max(g[i].abs()).max(1e-4) < 1e-4, "param {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn large_costs_stay_finite() {
        let net = constant_net(1e4, 0.0);
        let traj = Trajectory::new(vec![DVector::zeros(1); 100], vec![DVector::zeros(1); 100]).unwrap();
        let s = [WeightedSample { traj: &traj, log_weight: 0.0 }; 3];
        let l = ioc_loss(&net, &[&traj], &s, &Regularization::default()).unwrap();
        assert!(l.loss.is_finite());
        assert_relative_eq!(l.log_z_term, -1e6, max_relative = 1e-12);
    }

    fn pooled_set() -> (CostNetwork, SampleSet) {
        let (net, demos, samples) = small_instance();
        let mut set = SampleSet::new();
        set.add_proposal(LinearGaussianController::isotropic(6, 3, 2, 1.0).unwrap()).unwrap();
        set.add_demos(0, demos).unwrap();
        set.add_samples(0, samples).unwrap();
        (net, set)
    }

    #[test]
    fn zero_iterations_leave_parameters() {
        let (mut net, set) = pooled_set();
        let before = net.params();
        let cfg = IocConfig {
            iterations: 0,
            ..IocConfig::default()
        };
        let trace = ioc_update(&mut net, &set, &cfg, &mut Adam::new(before.len(), 1e-3), &mut substream(0, "b")).unwrap();
        assert!(trace.is_empty());
        assert_eq!(net.params(), before);
    }

    #[test]
    fn full_batch_matches_direct_gradient() {
        let (net, set) = pooled_set();
        let cfg = IocConfig {
            demo_batch: 100,
            sample_batch: 100,
            ..IocConfig::default()
        };
        let (lb, gb) = batch_loss_and_gradient(&net, &set, &set.demo_indices(), &set.sample_indices(), &cfg).unwrap();
        let demos: Vec<&Trajectory> = set.demo_indices().iter().map(|&j| set.trajectory(j)).collect();
        let background: Vec<usize> = set.sample_indices().into_iter().chain(set.demo_indices()).collect();
        let log_z = set.fusion_log_weights_of(&background).unwrap();
        let samples: Vec<WeightedSample> = background
            .iter()
            .zip(&log_z)
            .map(|(&j, &lw)| WeightedSample { traj: set.trajectory(j), log_weight: lw })
            .collect();
        let (l, g) = ioc_loss_and_gradient(&net, &demos, &samples, &cfg.regularization).unwrap();
        assert_eq!(lb, l);
        assert_eq!(gb, g);
        let mut trained = net.clone();
        let trace = ioc_update(&mut trained, &set, &IocConfig { iterations: 1, ..cfg }, &mut Adam::new(net.num_params(), 1e-3), &mut substream(0, "b")).unwrap();
        assert_eq!(trace[0], l);
    }

    #[test]
    fn demo_append_keeps_loss_bounded() {
        // one demo at the origin, background samples far away
        let make = |x: f64| Trajectory::new(vec![DVector::from_element(1, x); 5], vec![DVector::zeros(1); 5]).unwrap();
        let mut set = SampleSet::new();
        set.add_proposal(gaussian(5, 0.0, 1.0)).unwrap();
        set.add_demos(0, [make(0.0)]).unwrap();
        set.add_samples(0, (0..10).map(|i| make(3.0 + 0.1 * i as f64))).unwrap();
        let net = CostNetwork::init_identity(1, vec![0], &[2], 1, 0.0).unwrap();
        let run = |append: bool| {
            let cfg = IocConfig {
                iterations: 500,
                learning_rate: 0.05,
                regularization: Regularization::none(),
                append_demos: append,
                importance_weights: false,
                ..IocConfig::default()
            };
            let mut n = net.clone();
            let mut adam = Adam::new(n.num_params(), cfg.learning_rate);
            ioc_update(&mut n, &set, &cfg, &mut adam, &mut substream(1, "b"))
                .unwrap()
                .iter()
                .map(|l| l.loss)
                .collect::<Vec<_>>()
        };
        let without = run(false);
        assert!(without.last().unwrap() < &-100.0, "{:?}", without.last());
        assert!(without[250] > *without.last().unwrap());
        // with the single demo among the M = 11 background entries, loss ≥ -ln M
        let with = run(true);
        let bound = -(11.0f64).ln();
        assert!(with.iter().all(|&l| l >= bound - 1e-9), "{:?}", with.iter().cloned().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn loss_trends_down_on_point_mass() {
        let env = EnvSpec::by_name("point-mass").unwrap();
        let mut rng = substream(3, "demos");
        let demos = generate_demos(&env, &env.initial_conditions(1), 10, 1.0, &mut rng).unwrap();
        let init = initial_controller(&env, 1.0).unwrap();
        let samples = rollout_many(&env, &init, 20, &mut substream(3, "rollouts")).unwrap();
        let mut set = SampleSet::new();
        let fit = crate::trajmath::fit_demo_distribution(&demos.demos).unwrap();
        let d = set.add_proposal(fit.controller).unwrap();
        set.add_demos(d, demos.demos).unwrap();
        let s = set.add_proposal(init).unwrap();
        set.add_samples(s, samples).unwrap();
        let mut net = CostNetwork::init_identity(4, vec![0, 1, 2, 3], &[8, 8], 4, env.cost.action_weight()).unwrap();
        let cfg = IocConfig {
            learning_rate: 1e-2,
            ..IocConfig::default()
        };
        let mut adam = Adam::new(net.num_params(), cfg.learning_rate);
        let trace = ioc_update(&mut net, &set, &cfg, &mut adam, &mut substream(3, "batching")).unwrap();
        let mean = |s: &[LossBreakdown]| s.iter().map(|l| l.loss).sum::<f64>() / s.len() as f64;
        assert!(mean(&trace[90..]) < mean(&trace[..10]), "{} vs {}", mean(&trace[90..]), mean(&trace[..10]));
    }

    #[test]
    fn loss_csv_layout() {
        let csv = loss_trace_csv(&[LossBreakdown::default(); 2]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iter,loss,demo_term,logZ_term,reg_lcr,reg_mono");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1,"));
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(
            pairs in prop::collection::vec((-1e4f64..1e4, -50.0f64..50.0), 1..40),
        ) {
            let (costs, log_w): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let w = sample_softmax(&costs, &log_w);
            prop_assert!(w.iter().all(|&v| v >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
