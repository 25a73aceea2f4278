//! Experiment configuration files.
//!
//! A config is TOML with one table per concern. Keys that are left out take
//! the preset value of the chosen experiment, so the shortest valid file is
//! `experiment = "nav2d"`. Unknown keys are rejected with their line and
//! column.
//!
//! ```toml
//! experiment = "nav2d"      # train | consistency | nav2d | reacher | ablate-reg
//! seed = 0
//! output_dir = "runs/nav2d" # relative paths resolve under $GCL_OUTPUT_ROOT when set
//! plots = true
//!
//! [env]
//! name = "nav2d"            # point-mass | nav2d | reacher
//! # horizon = 100
//! # start = [0.1, 0.1]      # position, joint angles, or a full state
//!
//! [demos]
//! source = "generate"       # generate | load
//! count = 40
//! conditions = 4
//! noise_scale = 1.0
//! # path = "demos"          # directory written by `gcl gen-demos`
//!
//! [gcl]                     # iterations, samples_per_iteration, ablation flags
//! [gcl.ioc]                 # inner IOC steps, batch sizes, learning rate
//! [gcl.polopt]              # dynamics fitting and step-size settings
//! [gcl.network]             # cost network shape
//!
//! [eval]
//! rollouts = 20
//! test_starts = [[0.1, 0.1], [-0.1, 0.1], [-0.1, -0.1], [0.1, -0.1]]
//! baseline_samples = [20, 40, 60, 80, 100]
//! ablation_seeds = 4
//! ablation_envs = ["reacher", "nav2d"]
//! ablation_inits = ["random", "demo-fit"]
//! ```

use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::envs::{Dynamics, EnvSpec};
use crate::error::{Error, Result};
use crate::gcl::{GclConfig, InitMode};
use crate::polopt::DynamicsSource;

/// Overrides the directory relative output paths resolve against.
pub const OUTPUT_ROOT_VAR: &str = "GCL_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Single guided cost learning run.
    #[default]
    Train,
    /// Point-mass recovery of known demo distributions, with ablations.
    Consistency,
    /// Obstacle navigation evaluated from held-out starts.
    Nav2d,
    /// Two-link arm: GCL against fixed-proposal baselines.
    Reacher,
    /// Regularizer ablation on several environments.
    AblateReg,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::Train,
        ExperimentKind::Consistency,
        ExperimentKind::Nav2d,
        ExperimentKind::Reacher,
        ExperimentKind::AblateReg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::Consistency => "consistency",
            ExperimentKind::Nav2d => "nav2d",
            ExperimentKind::Reacher => "reacher",
            ExperimentKind::AblateReg => "ablate-reg",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvParams {
    pub name: String,
    pub horizon: Option<usize>,
    pub start: Option<Vec<f64>>,
    pub noise_std: Option<f64>,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            name: "nav2d".into(),
            horizon: None,
            start: None,
            noise_std: None,
        }
    }
}

impl EnvParams {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    pub fn build(&self) -> Result<EnvSpec> {
        let mut env = EnvSpec::by_name(&self.name)?;
        if let Some(h) = self.horizon {
            if h < 2 {
                return Err(Error::Config(format!("env.horizon must be at least 2, got {h}")));
            }
            env.horizon = h;
        }
        if let Some(s) = self.noise_std {
            if !(s >= 0.0) {
                return Err(Error::Config(format!("env.noise_std must be non-negative, got {s}")));
            }
            env.noise_std = s;
        }
        if let Some(start) = &self.start {
            env = env.with_initial_state(&start_state(&env, start)?);
        }
        Ok(env)
    }
}

/// Expands a user-supplied start: a full state, or two numbers read as the
/// position of a point mass or the joint angles of an arm at rest.
pub fn start_state(env: &EnvSpec, values: &[f64]) -> Result<DVector<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("start contains a non-finite value".into()));
    }
    if values.len() == env.d_x() {
        return Ok(DVector::from_column_slice(values));
    }
    if values.len() != 2 {
        return Err(Error::Config(format!(
            "start for {} needs 2 or {} values, got {}",
            env.name,
            env.d_x(),
            values.len()
        )));
    }
    Ok(match &env.dynamics {
        Dynamics::PointMass => DVector::from_vec(vec![values[0], values[1], 0.0, 0.0]),
        Dynamics::TwoLinkArm(arm) => arm.state(Vector2::new(values[0], values[1]), Vector2::zeros()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DemoSource {
    #[default]
    Generate,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub source: DemoSource,
    pub count: usize,
    /// Number of initial conditions the generated demos are spread over.
    pub conditions: usize,
    /// Multiplies the action covariance of generated demos.
    pub noise_scale: f64,
    pub path: Option<PathBuf>,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            source: DemoSource::Generate,
            count: 40,
            conditions: 4,
            noise_scale: 1.0,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Rollouts per distance-to-goal estimate.
    pub rollouts: usize,
    /// Held-out starts for the navigation experiment.
    pub test_starts: Vec<Vec<f64>>,
    /// Background sample counts for the fixed-proposal baselines.
    pub baseline_samples: Vec<usize>,
    pub ablation_seeds: usize,
    pub ablation_envs: Vec<String>,
    /// Policy initializations crossed with the ablation environments.
    pub ablation_inits: Vec<InitMode>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rollouts: 20,
            test_starts: vec![vec![0.1, 0.1], vec![-0.1, 0.1], vec![-0.1, -0.1], vec![0.1, -0.1]],
            baseline_samples: vec![20, 40, 60, 80, 100],
            ablation_seeds: 4,
            ablation_envs: vec!["reacher".into(), "nav2d".into()],
            ablation_inits: vec![InitMode::Random, InitMode::DemoFit],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub plots: bool,
    pub env: EnvParams,
    pub demos: DemoConfig,
    pub gcl: GclConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(ExperimentKind::Train)
    }
}

impl ExperimentConfig {
    /// Settings each experiment starts from before the file is applied.
    pub fn preset(kind: ExperimentKind) -> Self {
        let mut cfg = Self {
            experiment: kind,
            seed: 0,
            output_dir: PathBuf::from("runs").join(kind.name()),
            plots: true,
            env: EnvParams::default(),
            demos: DemoConfig::default(),
            gcl: GclConfig::default(),
            eval: EvalConfig::default(),
        };
        match kind {
            ExperimentKind::Train => {}
            ExperimentKind::Consistency => {
                cfg.env = EnvParams::named("point-mass");
                cfg.gcl.polopt.dynamics = DynamicsSource::Exact;
            }
            ExperimentKind::Nav2d => {
                cfg.gcl.network.hidden_widths = Some(vec![40, 40]);
                cfg.gcl.network.feature_dim = Some(20);
            }
            ExperimentKind::Reacher | ExperimentKind::AblateReg => {
                cfg.env = EnvParams::named("reacher");
                cfg.demos.count = 20;
            }
        }
        cfg
    }

    /// Parses a config, resolving relative demo paths against `base_dir`.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        // Strict pass over the file alone, for line-level diagnostics.
        toml::from_str::<Self>(text).map_err(|e| Error::Config(e.to_string()))?;
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let kind = match user.get("experiment") {
            Some(v) => ExperimentKind::deserialize(v.clone()).map_err(|e| Error::Config(format!("experiment: {e}")))?,
            None => ExperimentKind::default(),
        };
        let mut merged = match toml::Value::try_from(Self::preset(kind)) {
            Ok(toml::Value::Table(t)) => t,
            _ => return Err(Error::Config("preset does not serialize to a table".into())),
        };
        merge(&mut merged, user);
        let mut cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let (Some(base), Some(path)) = (base_dir, cfg.demos.path.as_mut()) {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent())
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let env = self.env.build()?;
        self.gcl.validate()?;
        let d = &self.demos;
        if d.conditions == 0 || d.count < d.conditions {
            return Err(Error::Config(format!(
                "demos.count ({}) must be at least demos.conditions ({}) and both positive",
                d.count, d.conditions
            )));
        }
        if !(d.noise_scale >= 0.0) {
            return Err(Error::Config("demos.noise_scale must be non-negative".into()));
        }
        if d.source == DemoSource::Load {
            match &d.path {
                None => return Err(Error::Config("demos.path is required when demos.source = \"load\"".into())),
                Some(p) if !p.is_dir() => {
                    return Err(Error::Config(format!("demos.path {} does not exist", p.display())))
                }
                Some(_) => {}
            }
            if matches!(self.experiment, ExperimentKind::Consistency | ExperimentKind::AblateReg) {
                return Err(Error::Config(format!(
                    "the {} experiment generates its own demos",
                    self.experiment.name()
                )));
            }
        }
        if self.eval.rollouts == 0 {
            return Err(Error::Config("eval.rollouts must be positive".into()));
        }
        for s in &self.eval.test_starts {
            start_state(&env, s)?;
        }
        if self.eval.baseline_samples.contains(&0) {
            return Err(Error::Config("eval.baseline_samples entries must be positive".into()));
        }
        for name in &self.eval.ablation_envs {
            EnvSpec::by_name(name)?;
        }
        if self.experiment == ExperimentKind::AblateReg && self.eval.ablation_inits.is_empty() {
            return Err(Error::Config("eval.ablation_inits must not be empty".into()));
        }
        Ok(())
    }

    /// Output directory after applying the output-root override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_file_takes_preset() {
        let cfg = ExperimentConfig::parse("experiment = \"nav2d\"\n", None).unwrap();
        assert_eq!(cfg, ExperimentConfig::preset(ExperimentKind::Nav2d));
        let cfg = ExperimentConfig::parse("", None).unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::Train);
    }

    #[test]
    fn file_values_override_preset() {
        let text = "experiment = \"consistency\"\nseed = 9\n[gcl]\niterations = 3\n[gcl.ioc]\nlearning_rate = 0.01\n";
        let cfg = ExperimentConfig::parse(text, None).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.gcl.iterations, 3);
        assert_eq!(cfg.gcl.ioc.learning_rate, 0.01);
        // untouched preset values survive
        assert_eq!(cfg.gcl.polopt.dynamics, DynamicsSource::Exact);
        assert_eq!(cfg.env.name, "point-mass");
    }

    #[test]
    fn unknown_key_reports_location() {
        let text = "experiment = \"nav2d\"\n\n[gcl]\niteratons = 3\n";
        let msg = ExperimentConfig::parse(text, None).unwrap_err().to_string();
        assert!(msg.contains("iteratons"), "{msg}");
        assert!(msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "experiment = \"warp\"",
            "[gcl]\niterations = 0",
            "[gcl]\nsamples_per_iteration = 0",
            "[demos]\ncount = 2\nconditions = 4",
            "[env]\nname = \"cartpole\"",
            "[env]\nstart = [1.0, 2.0, 3.0]",
            "[demos]\nsource = \"load\"",
            "[demos]\nsource = \"load\"\npath = \"/definitely/not/here\"",
            "[eval]\nrollouts = 0",
        ] {
            assert!(matches!(ExperimentConfig::parse(text, None), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn load_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("demos")).unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, "[demos]\nsource = \"load\"\npath = \"demos\"\n").unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.demos.path.unwrap(), dir.path().join("demos"));
        let missing = dir.path().join("nope.toml");
        assert!(matches!(ExperimentConfig::load(missing), Err(Error::Config(_))));
    }

    #[test]
    fn start_expansion() {
        let nav = EnvSpec::nav2d();
        assert_eq!(start_state(&nav, &[0.3, 0.4]).unwrap().as_slice(), &[0.3, 0.4, 0.0, 0.0]);
        let reacher = EnvSpec::reacher();
        let x = start_state(&reacher, &[0.0, 0.0]).unwrap();
        assert_eq!(x.len(), 8);
        assert!((x[4] - 1.0).abs() < 1e-12 && x[5].abs() < 1e-12);
        assert!(start_state(&nav, &[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn every_preset_round_trips() {
        for kind in ExperimentKind::ALL {
            let cfg = ExperimentConfig::preset(kind);
            let text = cfg.to_toml_string().unwrap();
            assert_eq!(ExperimentConfig::parse(&text, None).unwrap(), cfg, "{text}");
            assert_eq!(kind.name().parse::<ExperimentKind>().unwrap(), kind);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn parse_serialize_parse_is_identity(
            kind in prop::sample::select(ExperimentKind::ALL.to_vec()),
            seed in 0u64..1_000_000,
            iterations in 1usize..50,
            lr in 1e-5f64..1e-1,
            lcr in 0.0f64..100.0,
            use_mono in any::<bool>(),
            widths in prop::option::of(prop::collection::vec(1usize..64, 1..4)),
            rollouts in 1usize..100,
        ) {
            let text = format!(
                "experiment = \"{}\"\nseed = {seed}\n[gcl]\niterations = {iterations}\nuse_mono = {use_mono}\n\
                 [gcl.ioc]\nlearning_rate = {lr:e}\n[gcl.ioc.regularization]\nlambda_lcr = {lcr:e}\n\
                 [eval]\nrollouts = {rollouts}\n",
                kind.name()
            );
            let mut text = text;
            if let Some(w) = &widths {
                text.push_str(&format!("[gcl.network]\nhidden_widths = {w:?}\n"));
            }
            let first = ExperimentConfig::parse(&text, None).unwrap();
            let second = ExperimentConfig::parse(&first.to_toml_string().unwrap(), None).unwrap();
            prop_assert_eq!(first, second);
        }
    }
}
