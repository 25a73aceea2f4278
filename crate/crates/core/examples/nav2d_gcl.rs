//! Learning a navigation cost around an obstacle and reusing it from
//! held-out starts.
//!
//! Runs a reduced configuration by default; pass `--full` for the preset.

use guided_cost::harness::config::{ExperimentConfig, ExperimentKind};
use guided_cost::harness::experiments::nav2d;

fn main() -> guided_cost::Result<()> {
    let mut cfg = ExperimentConfig::preset(ExperimentKind::Nav2d);
    if !std::env::args().any(|a| a == "--full") {
        cfg.gcl.iterations = 15;
        cfg.gcl.ioc.iterations = 50;
        cfg.eval.test_starts.truncate(2);
    }
    let result = nav2d(&cfg)?;
    for run in &result.runs {
        println!(
            "start ({:+.2}, {:+.2}): learned cost {:.4}, demo-fit controller {:.4}",
            run.start[0], run.start[1], run.gcl_distance, run.init_distance
        );
    }
    println!("demonstrations reach {:.4}", result.demo_distance);
    println!("mean over starts: learned {:.4}, demo-fit {:.4}", result.mean_gcl_distance(), result.mean_init_distance());
    Ok(())
}
