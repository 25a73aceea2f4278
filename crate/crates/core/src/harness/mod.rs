//! Config-driven experiment runner: resolves a config, runs the selected
//! experiment, and writes CSV reports, checkpoints, demo files, SVG plots and
//! a manifest into the output directory.

pub mod config;
pub mod experiments;
pub mod plot;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{ExperimentConfig, ExperimentKind, OUTPUT_ROOT_VAR};
use experiments::{ABLATION_VARIANTS, CONSISTENCY_VARIANTS};
use plot::{LinePlot, Series};

use crate::envs::{write_demos, DemoSet};
use crate::error::{Error, Result};
use crate::gcl::{report_csv, GclOutcome, Proposal};
use crate::ioc::loss_trace_csv;
use crate::polopt::diagnostics_csv;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite(_)
        | Error::NotPositiveDefinite { .. }
        | Error::Divergence { .. }
        | Error::DualSearch(_)
        | Error::DimensionMismatch { .. } => EXIT_NUMERICAL,
        Error::InsufficientData(_)
        | Error::InvalidArgument(_)
        | Error::Parse(_)
        | Error::Config(_)
        | Error::Io(_)
        | Error::Json(_) => EXIT_CONFIG,
    }
}

/// Git-style object hash (`blob <len>\0<bytes>`) with SHA-256.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

/// Hash over named blob hashes, independent of listing order.
pub fn tree_hash(entries: &[HashedFile]) -> String {
    let mut sorted: Vec<&HashedFile> = entries.iter().collect();
    sorted.sort_by(|a, b| a.path.cmp(&b.path));
    let mut h = Sha256::new();
    for e in sorted {
        h.update(e.path.as_bytes());
        h.update([0]);
        h.update(e.hash.as_bytes());
        h.update(b"\n");
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedFile {
    pub path: String,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub version: String,
    pub seed: u64,
    /// Fully resolved config as TOML.
    pub config: String,
    /// Tree hash over `inputs`.
    pub input_hash: String,
    pub inputs: Vec<HashedFile>,
    pub artifacts: Vec<HashedFile>,
}

pub const RUN_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    /// Human-readable result lines.
    pub lines: Vec<String>,
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<HashedFile>,
    plots: bool,
}

impl Artifacts {
    fn write(&mut self, rel: &str, contents: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents)?;
        self.written.push(HashedFile {
            path: rel.into(),
            hash: blob_hash(contents),
        });
        Ok(())
    }

    fn plot(&mut self, rel: &str, plot: LinePlot) -> Result<()> {
        if self.plots {
            self.write(rel, plot.to_svg().as_bytes())?;
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        self.write(rel, serde_json::to_string_pretty(value)?.as_bytes())
    }

    fn demos(&mut self, cfg: &ExperimentConfig, env: &crate::envs::EnvSpec, set: &DemoSet) -> Result<()> {
        let dir = self.dir.join("demos");
        let manifest = write_demos(&dir, env, cfg.seed, set)?;
        for f in manifest.files.iter().chain(std::iter::once(&crate::envs::DEMO_MANIFEST.to_string())) {
            let bytes = std::fs::read(dir.join(f))?;
            self.written.push(HashedFile {
                path: format!("demos/{f}"),
                hash: blob_hash(&bytes),
            });
        }
        Ok(())
    }

    /// Report, loss trace, diagnostics, checkpoints and curves of one run.
    fn gcl_run(&mut self, prefix: &str, out: &GclOutcome) -> Result<()> {
        self.write(&format!("{prefix}report.csv"), report_csv(&out.report).as_bytes())?;
        self.write(&format!("{prefix}loss.csv"), loss_trace_csv(&out.loss_trace).as_bytes())?;
        self.write(&format!("{prefix}diagnostics.csv"), diagnostics_csv(&out.diagnostics).as_bytes())?;
        self.json(&format!("{prefix}cost.json"), &out.cost.to_checkpoint())?;
        self.json(&format!("{prefix}controller.json"), &out.controller.to_file())?;
        let losses: Vec<f64> = out.report.iter().map(|r| r.ioc_loss).collect();
        let dist: Vec<f64> = out.report.iter().map(|r| r.distance_to_goal).collect();
        self.plot(
            &format!("{prefix}loss.svg"),
            LinePlot::new("IOC loss", "iteration", "mean loss").with(Series::indexed("loss", &losses)),
        )?;
        self.plot(
            &format!("{prefix}distance.svg"),
            LinePlot::new("Distance to goal", "iteration", "mean final distance")
                .with(Series::indexed("samples", &dist)),
        )
    }
}

fn input_files(cfg: &ExperimentConfig, config_text: &str) -> Result<Vec<HashedFile>> {
    let mut inputs = vec![HashedFile {
        path: "config.toml".into(),
        hash: blob_hash(config_text.as_bytes()),
    }];
    if let (config::DemoSource::Load, Some(dir)) = (cfg.demos.source, &cfg.demos.path) {
        let mut names: Vec<String> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        for name in names {
            inputs.push(HashedFile {
                hash: blob_hash(&std::fs::read(dir.join(&name))?),
                path: format!("demos/{name}"),
            });
        }
    }
    Ok(inputs)
}

/// Loads `path` and runs the experiment it describes.
pub fn run_experiment_file(path: impl AsRef<Path>) -> Result<RunSummary> {
    run_experiment(&ExperimentConfig::load(path)?)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = cfg.resolved_output_dir();
    std::fs::create_dir_all(&dir)?;
    let config_text = cfg.to_toml_string()?;
    let inputs = input_files(cfg, &config_text)?;
    let mut art = Artifacts {
        dir: dir.clone(),
        written: Vec::new(),
        plots: cfg.plots,
    };
    art.write("config.toml", config_text.as_bytes())?;
    let env = cfg.env.build()?;
    let mut lines = Vec::new();

    match cfg.experiment {
        ExperimentKind::Train => {
            let r = experiments::train(cfg)?;
            if let Some(set) = &r.demos.generated {
                art.demos(cfg, &env, set)?;
            }
            art.gcl_run("", &r.outcome)?;
            lines.push(format!("demo mean final distance {:.4}", r.demo_distance));
            lines.push(format!("learned controller final distance {:.4}", r.final_distance));
        }
        ExperimentKind::Consistency => {
            let r = experiments::consistency(cfg)?;
            art.demos(cfg, &env, &r.demos)?;
            art.write("summary.csv", r.summary_csv().as_bytes())?;
            let mut plot = LinePlot::new("KL to true distribution", "iteration", "KL");
            for run in &r.runs {
                art.gcl_run(&format!("{}/condition_{}/", run.variant, run.condition), &run.outcome)?;
            }
            for v in CONSISTENCY_VARIANTS {
                plot = plot.with(Series::indexed(v, &r.kl_curve(v)));
                lines.push(format!(
                    "{v:<13} final KL {:>10.3}  mean action variance {:.4}",
                    r.final_kl(v),
                    r.mean_action_variance(v)
                ));
            }
            art.plot("kl.svg", plot)?;
        }
        ExperimentKind::Nav2d => {
            let r = experiments::nav2d(cfg)?;
            if let Some(set) = &r.demos.generated {
                art.demos(cfg, &env, set)?;
            }
            art.write("summary.csv", r.summary_csv().as_bytes())?;
            let mut plot = LinePlot::new("Distance to goal per held-out start", "iteration", "mean final distance");
            for (k, run) in r.runs.iter().enumerate() {
                art.gcl_run(&format!("start_{k}/"), &run.outcome)?;
                let dist: Vec<f64> = run.outcome.report.iter().map(|x| x.distance_to_goal).collect();
                plot = plot.with(Series::indexed(format!("start {k}"), &dist));
                lines.push(format!(
                    "start ({:+.2}, {:+.2}): gcl {:.4}  demo-fit {:.4}",
                    run.start[0], run.start[1], run.gcl_distance, run.init_distance
                ));
            }
            art.plot("distance.svg", plot)?;
            lines.push(format!(
                "mean: gcl {:.4}  demo-fit {:.4}  demos {:.4}",
                r.mean_gcl_distance(),
                r.mean_init_distance(),
                r.demo_distance
            ));
        }
        ExperimentKind::Reacher => {
            let r = experiments::reacher(cfg)?;
            if let Some(set) = &r.demos.generated {
                art.demos(cfg, &env, set)?;
            }
            art.gcl_run("gcl/", &r.gcl)?;
            art.write("baselines.csv", r.baselines_csv().as_bytes())?;
            let as_f = |c: Vec<(usize, f64)>| c.into_iter().map(|(n, d)| (n as f64, d)).collect::<Vec<_>>();
            art.plot(
                "sample_complexity.svg",
                LinePlot::new("Distance vs. samples", "samples", "final distance")
                    .with(Series::new("gcl", as_f(r.gcl_curve(cfg.gcl.samples_per_iteration))))
                    .with(Series::new("fixed random", as_f(r.baseline_curve(Proposal::Random))))
                    .with(Series::new("fixed demo-fit", as_f(r.baseline_curve(Proposal::DemoFit)))),
            )?;
            lines.push(format!("gcl final distance {:.4} (demos {:.4})", r.gcl_distance, r.demo_distance));
            for b in &r.baselines {
                lines.push(format!("baseline {:?} n={:<4} distance {:.4}", b.proposal, b.n_samples, b.distance));
            }
        }
        ExperimentKind::AblateReg => {
            let r = experiments::ablate_reg(cfg)?;
            art.write("ablation.csv", r.table_csv().as_bytes())?;
            art.write("summary.csv", r.summary_csv().as_bytes())?;
            for (env, init) in r.configurations() {
                for v in ABLATION_VARIANTS {
                    lines.push(format!(
                        "{env:<8} {:<8} {v:<8} mean distance {:.4}",
                        experiments::init_name(init),
                        r.mean_distance(&env, init, v)
                    ));
                }
            }
        }
    }

    let mut artifacts = art.written;
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = RunManifest {
        experiment: cfg.experiment.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config: config_text,
        input_hash: tree_hash(&inputs),
        inputs,
        artifacts,
    };
    std::fs::write(dir.join(RUN_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunSummary { dir, manifest, lines })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git_sha256_objects() {
        // `git hash-object --object-format=sha256` of an empty file
        assert_eq!(
            blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
        assert_ne!(blob_hash(b"a"), blob_hash(b"b"));
    }

    #[test]
    fn tree_hash_ignores_listing_order() {
        let a = HashedFile {
            path: "a".into(),
            hash: blob_hash(b"1"),
        };
        let b = HashedFile {
            path: "b".into(),
            hash: blob_hash(b"2"),
        };
        assert_eq!(tree_hash(&[a.clone(), b.clone()]), tree_hash(&[b.clone(), a.clone()]));
        let renamed = HashedFile {
            path: "c".into(),
            ..b
        };
        assert_ne!(tree_hash(&[a.clone(), renamed]), tree_hash(&[a]));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::NonFinite("x".into())), EXIT_NUMERICAL);
        assert_eq!(
            exit_code(&Error::Divergence {
                message: "x".into(),
                trace: vec![]
            }),
            EXIT_NUMERICAL
        );
    }
}
