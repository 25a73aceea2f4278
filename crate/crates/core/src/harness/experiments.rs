//! The experiment registry. Each experiment returns its results in memory;
//! writing them out is the caller's business.

use std::path::PathBuf;

use nalgebra::DVector;
use rand::RngCore;

use super::config::{start_state, DemoSource, EnvParams, ExperimentConfig};
use crate::envs::{generate_demos, read_demos, DemoSet, EnvSpec};
use crate::error::{Error, Result};
use crate::gcl::{
    baseline_irl, evaluate_distance, guided_cost_learning, BaselineConfig, DemoWeights, GclConfig, GclOutcome, InitMode, Oracle,
    Proposal,
};
use crate::rng::{indexed_substream, substream};
use crate::trajmath::{fit_demo_distribution, Trajectory};

pub const CONSISTENCY_VARIANTS: [&str; 4] = ["full", "empirical-iw", "no-maxent", "no-iw"];
pub const ABLATION_VARIANTS: [&str; 3] = ["full", "no-lcr", "no-mono"];

/// Runs `f` on every item on its own thread, keeping input order.
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = items.iter().map(|item| scope.spawn(|| f(item))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    })
}

/// Seed of the `index`-th job of a named family.
pub fn job_seed(seed: u64, family: &str, index: u64) -> u64 {
    indexed_substream(seed, family, index).next_u64()
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

pub fn mean_final_distance(env: &EnvSpec, trajs: &[Trajectory]) -> f64 {
    mean(trajs.iter().map(|t| env.distance_to_goal(t.final_state())))
}

#[derive(Debug, Clone)]
pub struct DemoData {
    pub demos: Vec<Trajectory>,
    /// Present when the demos were generated, with their true controllers.
    pub generated: Option<DemoSet>,
    pub loaded_from: Option<PathBuf>,
}

/// Generates demos from `starts` or loads them, per the config.
pub fn obtain_demos(cfg: &ExperimentConfig, env: &EnvSpec, starts: &[DVector<f64>]) -> Result<DemoData> {
    match cfg.demos.source {
        DemoSource::Generate => {
            let mut rng = substream(cfg.seed, "demos");
            let set = generate_demos(env, starts, cfg.demos.count, cfg.demos.noise_scale, &mut rng)?;
            Ok(DemoData {
                demos: set.demos.clone(),
                generated: Some(set),
                loaded_from: None,
            })
        }
        DemoSource::Load => {
            let path = cfg
                .demos
                .path
                .clone()
                .ok_or_else(|| Error::Config("demos.path is required to load demos".into()))?;
            let (manifest, demos) = read_demos(&path)?;
            if manifest.state_dim != env.d_x() || manifest.action_dim != env.d_u() {
                return Err(Error::Config(format!(
                    "demos in {} are {}x{} but {} needs {}x{}",
                    path.display(),
                    manifest.state_dim,
                    manifest.action_dim,
                    env.name,
                    env.d_x(),
                    env.d_u()
                )));
            }
            if demos.is_empty() {
                return Err(Error::Config(format!("{} holds no demos", path.display())));
            }
            Ok(DemoData {
                demos,
                generated: None,
                loaded_from: Some(path),
            })
        }
    }
}

/// `n` starts evenly spaced on the circle through the env's default start,
/// centred on its goal.
pub fn circle_starts(env: &EnvSpec, n: usize) -> Vec<DVector<f64>> {
    let goal = env.goal_position();
    let (dx, dy) = (env.init_mean[0] - goal[0], env.init_mean[1] - goal[1]);
    let radius = dx.hypot(dy);
    let phase = dy.atan2(dx);
    (0..n)
        .map(|k| {
            let a = phase + std::f64::consts::TAU * k as f64 / n as f64;
            let mut x = DVector::from_vec(env.init_mean.clone());
            x[0] = goal[0] + radius * a.cos();
            x[1] = goal[1] + radius * a.sin();
            x
        })
        .collect()
}

pub fn consistency_variant(base: &GclConfig, variant: &str) -> Result<GclConfig> {
    let mut cfg = base.clone();
    cfg.demo_weights = DemoWeights::Empirical;
    match variant {
        "full" => cfg.demo_weights = DemoWeights::GroundTruth,
        "empirical-iw" => {}
        "no-maxent" => cfg.use_maxent = false,
        "no-iw" => cfg.use_importance_weights = false,
        other => return Err(Error::Config(format!("unknown consistency variant '{other}'"))),
    }
    Ok(cfg)
}

pub fn ablation_variant(base: &GclConfig, variant: &str) -> Result<GclConfig> {
    let mut cfg = base.clone();
    match variant {
        "full" => {}
        "no-lcr" => cfg.use_lcr = false,
        "no-mono" => cfg.use_mono = false,
        other => return Err(Error::Config(format!("unknown ablation variant '{other}'"))),
    }
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct ConsistencyRun {
    pub variant: &'static str,
    pub condition: usize,
    pub outcome: GclOutcome,
}

#[derive(Debug, Clone)]
pub struct ConsistencyResult {
    pub demos: DemoSet,
    pub runs: Vec<ConsistencyRun>,
}

impl ConsistencyResult {
    fn of(&self, variant: &str) -> impl Iterator<Item = &ConsistencyRun> + '_ {
        let variant = variant.to_string();
        self.runs.iter().filter(move |r| r.variant == variant)
    }

    /// `KL(learned ‖ truth)` averaged over initial conditions.
    pub fn final_kl(&self, variant: &str) -> f64 {
        mean(self.of(variant).map(|r| r.outcome.kl_to_truth.unwrap_or(f64::NAN)))
    }

    pub fn mean_action_variance(&self, variant: &str) -> f64 {
        mean(self.of(variant).map(|r| r.outcome.controller.mean_action_variance()))
    }

    /// Per-iteration KL averaged over conditions.
    pub fn kl_curve(&self, variant: &str) -> Vec<f64> {
        let runs: Vec<_> = self.of(variant).collect();
        let len = runs.iter().map(|r| r.outcome.report.len()).min().unwrap_or(0);
        (0..len)
            .map(|i| mean(runs.iter().map(|r| r.outcome.report[i].kl_to_truth.unwrap_or(f64::NAN))))
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("variant,final_kl\n");
        for v in CONSISTENCY_VARIANTS {
            out.push_str(&format!("{v},{:.16e}\n", self.final_kl(v)));
        }
        out
    }
}

/// Learns from demos drawn from known distributions and measures how close
/// each variant's final controller comes to the true one, separately per
/// initial condition.
pub fn consistency(cfg: &ExperimentConfig) -> Result<ConsistencyResult> {
    let env = cfg.env.build()?;
    let starts = circle_starts(&env, cfg.demos.conditions);
    let data = obtain_demos(cfg, &env, &starts)?;
    let set = data
        .generated
        .ok_or_else(|| Error::Config("the consistency experiment needs generated demos".into()))?;
    let jobs: Vec<(&'static str, usize)> = CONSISTENCY_VARIANTS
        .iter()
        .flat_map(|&v| (0..starts.len()).map(move |c| (v, c)))
        .collect();
    let runs = par_map(&jobs, |&(variant, c)| {
        let mut gcl = consistency_variant(&cfg.gcl, variant)?;
        gcl.seed = job_seed(cfg.seed, "consistency", c as u64);
        let truth = set.controllers[c].clone();
        let oracle = Oracle {
            demo_controller: Some(truth.clone()),
            truth: Some(truth),
        };
        let local = env.with_initial_state(&starts[c]);
        let outcome = guided_cost_learning(&local, &set.for_condition(c), &gcl, &oracle)?;
        Ok(ConsistencyRun {
            variant,
            condition: c,
            outcome,
        })
    })?;
    Ok(ConsistencyResult { demos: set, runs })
}

#[derive(Debug, Clone)]
pub struct NavRun {
    pub start: DVector<f64>,
    pub outcome: GclOutcome,
    pub gcl_distance: f64,
    /// Distance reached by the controller fit to the demos.
    pub init_distance: f64,
}

#[derive(Debug, Clone)]
pub struct NavResult {
    pub demos: DemoData,
    pub demo_distance: f64,
    pub runs: Vec<NavRun>,
}

impl NavResult {
    pub fn mean_gcl_distance(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.gcl_distance))
    }

    pub fn mean_init_distance(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.init_distance))
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("start_x,start_y,gcl_distance,init_distance,demo_distance\n");
        for r in &self.runs {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.start[0], r.start[1], r.gcl_distance, r.init_distance, self.demo_distance
            ));
        }
        out
    }
}

/// Trains from demos gathered at the training starts, then runs guided cost
/// learning afresh from each held-out start.
pub fn nav2d(cfg: &ExperimentConfig) -> Result<NavResult> {
    let env = cfg.env.build()?;
    let demos = obtain_demos(cfg, &env, &env.initial_conditions(cfg.demos.conditions))?;
    let demo_fit = fit_demo_distribution(&demos.demos)?.controller;
    let starts = cfg
        .eval
        .test_starts
        .iter()
        .map(|s| start_state(&env, s))
        .collect::<Result<Vec<_>>>()?;
    let indexed: Vec<(usize, DVector<f64>)> = starts.into_iter().enumerate().collect();
    let runs = par_map(&indexed, |(k, start)| {
        let seed = job_seed(cfg.seed, "nav2d", *k as u64);
        let mut gcl = cfg.gcl.clone();
        gcl.seed = seed;
        let outcome = guided_cost_learning(&env.with_initial_state(start), &demos.demos, &gcl, &Oracle::default())?;
        let gcl_distance = evaluate_distance(&env, &outcome.controller, start, cfg.eval.rollouts, &mut substream(seed, "eval"))?;
        let init_distance = evaluate_distance(&env, &demo_fit, start, cfg.eval.rollouts, &mut substream(seed, "eval"))?;
        Ok(NavRun {
            start: start.clone(),
            outcome,
            gcl_distance,
            init_distance,
        })
    })?;
    Ok(NavResult {
        demo_distance: mean_final_distance(&env, &demos.demos),
        demos,
        runs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineRow {
    pub proposal: Proposal,
    pub n_samples: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct ReacherResult {
    pub demos: DemoData,
    pub demo_distance: f64,
    pub gcl: GclOutcome,
    pub gcl_distance: f64,
    pub baselines: Vec<BaselineRow>,
}

impl ReacherResult {
    pub fn baseline_curve(&self, proposal: Proposal) -> Vec<(usize, f64)> {
        self.baselines
            .iter()
            .filter(|b| b.proposal == proposal)
            .map(|b| (b.n_samples, b.distance))
            .collect()
    }

    /// Samples drawn by GCL so far against the distance of that iteration's
    /// samples.
    pub fn gcl_curve(&self, samples_per_iteration: usize) -> Vec<(usize, f64)> {
        self.gcl
            .report
            .iter()
            .map(|r| ((r.iter + 1) * samples_per_iteration, r.distance_to_goal))
            .collect()
    }

    pub fn baselines_csv(&self) -> String {
        let mut out = String::from("proposal,n_samples,distance\n");
        for b in &self.baselines {
            let name = match b.proposal {
                Proposal::Random => "random",
                Proposal::DemoFit => "demo-fit",
            };
            out.push_str(&format!("{name},{},{:.16e}\n", b.n_samples, b.distance));
        }
        out
    }
}

/// Guided cost learning on the arm next to fixed-proposal baselines at
/// increasing background sample counts.
pub fn reacher(cfg: &ExperimentConfig) -> Result<ReacherResult> {
    let env = cfg.env.build()?;
    let demos = obtain_demos(cfg, &env, &env.initial_conditions(cfg.demos.conditions))?;
    let start = DVector::from_vec(env.init_mean.clone());
    let base_seed = job_seed(cfg.seed, "baseline", 0);
    let jobs: Vec<Option<(Proposal, usize)>> = std::iter::once(None)
        .chain(
            [Proposal::Random, Proposal::DemoFit]
                .into_iter()
                .flat_map(|p| cfg.eval.baseline_samples.iter().map(move |&n| Some((p, n)))),
        )
        .collect();
    enum Done {
        Gcl(Box<GclOutcome>, f64),
        Base(BaselineRow),
    }
    let done = par_map(&jobs, |job| match job {
        None => {
            let mut gcl = cfg.gcl.clone();
            gcl.seed = job_seed(cfg.seed, "reacher", 0);
            let out = guided_cost_learning(&env, &demos.demos, &gcl, &Oracle::default())?;
            let d = evaluate_distance(&env, &out.controller, &start, cfg.eval.rollouts, &mut substream(gcl.seed, "eval"))?;
            Ok(Done::Gcl(Box::new(out), d))
        }
        Some((proposal, n)) => {
            let bc = BaselineConfig {
                proposal: *proposal,
                use_importance_weights: true,
                n_samples: *n,
                init_variance: cfg.gcl.init_variance,
                ioc: cfg.gcl.effective_ioc(),
                network: cfg.gcl.network.clone(),
                eval_rollouts: cfg.eval.rollouts,
                seed: base_seed,
                ..BaselineConfig::default()
            };
            let out = baseline_irl(&env, &demos.demos, &bc)?;
            Ok(Done::Base(BaselineRow {
                proposal: *proposal,
                n_samples: *n,
                distance: out.distance_to_goal,
            }))
        }
    })?;
    let mut gcl = None;
    let mut baselines = Vec::new();
    for d in done {
        match d {
            Done::Gcl(out, dist) => gcl = Some((*out, dist)),
            Done::Base(row) => baselines.push(row),
        }
    }
    let (gcl, gcl_distance) = gcl.expect("the GCL job is always scheduled");
    Ok(ReacherResult {
        demo_distance: mean_final_distance(&env, &demos.demos),
        demos,
        gcl,
        gcl_distance,
        baselines,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub env: String,
    pub init: InitMode,
    pub seed: usize,
    pub variant: &'static str,
    /// `None` when guided cost learning diverged.
    pub distance: Option<f64>,
}

pub fn init_name(init: InitMode) -> &'static str {
    match init {
        InitMode::Random => "random",
        InitMode::DemoFit => "demo-fit",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
}

impl AblationResult {
    /// Distinct `(env, init)` settings in row order.
    pub fn configurations(&self) -> Vec<(String, InitMode)> {
        let mut out: Vec<(String, InitMode)> = Vec::new();
        for r in &self.rows {
            if !out.iter().any(|(e, i)| *e == r.env && *i == r.init) {
                out.push((r.env.clone(), r.init));
            }
        }
        out
    }

    pub fn distance(&self, env: &str, init: InitMode, seed: usize, variant: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.env == env && r.init == init && r.seed == seed && r.variant == variant)
            .and_then(|r| r.distance)
    }

    /// Seeds of one setting on which every variant finished.
    pub fn complete_seeds(&self, env: &str, init: InitMode) -> Vec<usize> {
        let mut seeds: Vec<usize> = self
            .rows
            .iter()
            .filter(|r| r.env == env && r.init == init)
            .map(|r| r.seed)
            .collect();
        seeds.sort_unstable();
        seeds.dedup();
        seeds.retain(|&s| ABLATION_VARIANTS.iter().all(|v| self.distance(env, init, s, v).is_some()));
        seeds
    }

    /// Complete seeds of one setting where `variant` ends farther from the
    /// goal than the full method.
    pub fn degraded_seeds(&self, env: &str, init: InitMode, variant: &str) -> usize {
        self.complete_seeds(env, init)
            .into_iter()
            .filter(|&s| self.distance(env, init, s, variant) > self.distance(env, init, s, "full"))
            .count()
    }

    /// Mean over the complete seeds of one setting.
    pub fn mean_distance(&self, env: &str, init: InitMode, variant: &str) -> f64 {
        mean(
            self.complete_seeds(env, init)
                .into_iter()
                .filter_map(|s| self.distance(env, init, s, variant)),
        )
    }

    /// Settings whose seed-averaged distance is worse without the regularizer.
    pub fn degraded_configurations(&self, variant: &str) -> usize {
        self.configurations()
            .iter()
            .filter(|(env, init)| self.mean_distance(env, *init, variant) > self.mean_distance(env, *init, "full"))
            .count()
    }

    pub fn table_csv(&self) -> String {
        let mut out = String::from("env,init,seed,variant,distance\n");
        for r in &self.rows {
            let d = r.distance.map_or_else(|| "diverged".to_string(), |d| format!("{d:.16e}"));
            out.push_str(&format!("{},{},{},{},{d}\n", r.env, init_name(r.init), r.seed, r.variant));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("env,init,variant,mean_distance,seeds_worse_than_full,seeds_compared\n");
        for (env, init) in self.configurations() {
            let compared = self.complete_seeds(&env, init).len();
            for v in ABLATION_VARIANTS {
                let worse = if v == "full" { 0 } else { self.degraded_seeds(&env, init, v) };
                out.push_str(&format!(
                    "{env},{},{v},{:.16e},{worse},{compared}\n",
                    init_name(init),
                    self.mean_distance(&env, init, v)
                ));
            }
        }
        out
    }
}

/// Guided cost learning with and without each regularizer on every
/// configured environment, initialization and seed. Runs that diverge are
/// recorded without a distance.
pub fn ablate_reg(cfg: &ExperimentConfig) -> Result<AblationResult> {
    let mut demo_sets = Vec::new();
    for (e, name) in cfg.eval.ablation_envs.iter().enumerate() {
        let env = EnvParams {
            name: name.clone(),
            horizon: cfg.env.horizon,
            start: None,
            noise_std: cfg.env.noise_std,
        }
        .build()?;
        let mut rng = substream(job_seed(cfg.seed, "ablate-demos", e as u64), "demos");
        let set = generate_demos(
            &env,
            &env.initial_conditions(cfg.demos.conditions),
            cfg.demos.count,
            cfg.demos.noise_scale,
            &mut rng,
        )?;
        demo_sets.push((env, set.demos));
    }
    let mut jobs: Vec<(usize, InitMode, usize, &'static str)> = Vec::new();
    for e in 0..demo_sets.len() {
        for &init in &cfg.eval.ablation_inits {
            for s in 0..cfg.eval.ablation_seeds {
                for v in ABLATION_VARIANTS {
                    jobs.push((e, init, s, v));
                }
            }
        }
    }
    let rows = par_map(&jobs, |&(e, init, s, variant)| {
        let (env, demos) = &demo_sets[e];
        let mut gcl = ablation_variant(&cfg.gcl, variant)?;
        gcl.init = init;
        gcl.seed = job_seed(cfg.seed, "ablate", s as u64);
        let distance = match guided_cost_learning(env, demos, &gcl, &Oracle::default()) {
            Ok(out) => {
                let start = DVector::from_vec(env.init_mean.clone());
                let eval_rng = &mut substream(gcl.seed, "eval");
                Some(evaluate_distance(env, &out.controller, &start, cfg.eval.rollouts, eval_rng)?)
            }
            Err(e @ Error::Divergence { .. }) => {
                log::warn!("{} {} seed {s} {variant}: {e}", env.name, init_name(init));
                None
            }
            Err(e) => return Err(e),
        };
        Ok(AblationRow {
            env: env.name.clone(),
            init,
            seed: s,
            variant,
            distance,
        })
    })?;
    Ok(AblationResult { rows })
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub demos: DemoData,
    pub demo_distance: f64,
    pub outcome: GclOutcome,
    pub final_distance: f64,
}

/// A single guided cost learning run on the configured environment.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainResult> {
    let env = cfg.env.build()?;
    let demos = obtain_demos(cfg, &env, &env.initial_conditions(cfg.demos.conditions))?;
    let oracle = Oracle {
        demo_controller: demos
            .generated
            .as_ref()
            .filter(|s| s.controllers.len() == 1)
            .map(|s| s.controllers[0].clone()),
        truth: None,
    };
    let mut gcl = cfg.gcl.clone();
    gcl.seed = job_seed(cfg.seed, "train", 0);
    let outcome = guided_cost_learning(&env, &demos.demos, &gcl, &oracle)?;
    let start = DVector::from_vec(env.init_mean.clone());
    let final_distance = evaluate_distance(&env, &outcome.controller, &start, cfg.eval.rollouts, &mut substream(gcl.seed, "eval"))?;
    Ok(TrainResult {
        demo_distance: mean_final_distance(&env, &demos.demos),
        demos,
        outcome,
        final_distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentKind;

    #[test]
    fn circle_starts_share_the_goal_distance() {
        let env = EnvSpec::by_name("point-mass").unwrap();
        let starts = circle_starts(&env, 4);
        assert_eq!(starts.len(), 4);
        assert!((starts[0][0] - 1.0).abs() < 1e-12 && starts[0][1].abs() < 1e-12);
        assert!((starts[1][1] - 1.0).abs() < 1e-12);
        for s in &starts {
            assert!((env.distance_to_goal(s) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn variants_toggle_one_switch() {
        let base = GclConfig::default();
        assert_eq!(consistency_variant(&base, "full").unwrap().demo_weights, DemoWeights::GroundTruth);
        let e = consistency_variant(&base, "empirical-iw").unwrap();
        assert_eq!(e.demo_weights, DemoWeights::Empirical);
        assert!(e.use_maxent && e.use_importance_weights);
        assert!(!consistency_variant(&base, "no-maxent").unwrap().use_maxent);
        assert!(!consistency_variant(&base, "no-iw").unwrap().use_importance_weights);
        assert!(!ablation_variant(&base, "no-lcr").unwrap().use_lcr);
        assert!(!ablation_variant(&base, "no-mono").unwrap().use_mono);
        assert!(consistency_variant(&base, "bogus").is_err());
        assert!(ablation_variant(&base, "bogus").is_err());
    }

    #[test]
    fn job_seeds_differ_by_family_and_index() {
        assert_ne!(job_seed(0, "a", 0), job_seed(0, "a", 1));
        assert_ne!(job_seed(0, "a", 0), job_seed(0, "b", 0));
        assert_eq!(job_seed(3, "a", 2), job_seed(3, "a", 2));
    }

    #[test]
    fn par_map_keeps_order_and_errors() {
        let out = par_map(&[1, 2, 3], |&x| Ok(x * 10)).unwrap();
        assert_eq!(out, vec![10, 20, 30]);
        let err = par_map(&[1, 2], |&x| if x == 2 { Err(Error::Config("no".into())) } else { Ok(x) });
        assert!(err.is_err());
    }

    #[test]
    fn ablation_bookkeeping() {
        let row = |seed, variant, distance: f64| AblationRow {
            env: "nav2d".into(),
            init: InitMode::Random,
            seed,
            variant,
            distance: Some(distance).filter(|d| d.is_finite()),
        };
        let r = AblationResult {
            rows: vec![
                row(0, "full", 1.0),
                row(0, "no-lcr", 2.0),
                row(0, "no-mono", 0.5),
                row(1, "full", 1.0),
                row(1, "no-lcr", 3.0),
                row(1, "no-mono", 1.5),
                row(2, "full", f64::NAN),
                row(2, "no-lcr", 9.0),
                row(2, "no-mono", 9.0),
            ],
        };
        let random = InitMode::Random;
        assert_eq!(r.complete_seeds("nav2d", random), vec![0, 1]);
        assert!(r.table_csv().contains("nav2d,random,2,full,diverged"));
        assert_eq!(r.degraded_seeds("nav2d", random, "no-lcr"), 2);
        assert_eq!(r.degraded_seeds("nav2d", random, "no-mono"), 1);
        assert_eq!(r.mean_distance("nav2d", random, "no-lcr"), 2.5);
        assert_eq!(r.configurations(), vec![("nav2d".to_string(), random)]);
        assert_eq!(r.degraded_configurations("no-lcr"), 1);
        assert_eq!(r.degraded_configurations("no-mono"), 0);
        assert_eq!(r.summary_csv().lines().count(), 4);
    }

    #[test]
    fn tiny_train_run() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Train);
        cfg.env = EnvParams::named("point-mass");
        cfg.env.horizon = Some(10);
        cfg.demos.count = 4;
        cfg.demos.conditions = 2;
        cfg.gcl.iterations = 2;
        cfg.gcl.ioc.iterations = 5;
        cfg.eval.rollouts = 2;
        let a = train(&cfg).unwrap();
        assert_eq!(a.outcome.report.len(), 2);
        assert_eq!(a.demos.demos.len(), 4);
        assert!(a.final_distance.is_finite());
        let b = train(&cfg).unwrap();
        assert_eq!(a.final_distance, b.final_distance);
    }
}
