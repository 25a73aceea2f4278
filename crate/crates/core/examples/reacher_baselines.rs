//! Guided cost learning on the two-link arm against IOC with a fixed
//! sampling distribution and a growing number of background samples.
//!
//! Runs a reduced configuration by default; pass `--full` for the preset.

use guided_cost::gcl::Proposal;
use guided_cost::harness::config::{ExperimentConfig, ExperimentKind};
use guided_cost::harness::experiments::reacher;

fn main() -> guided_cost::Result<()> {
    let mut cfg = ExperimentConfig::preset(ExperimentKind::Reacher);
    if !std::env::args().any(|a| a == "--full") {
        cfg.gcl.iterations = 15;
        cfg.gcl.ioc.iterations = 50;
        cfg.eval.baseline_samples = vec![10, 40];
    }
    let samples = cfg.gcl.samples_per_iteration;
    let result = reacher(&cfg)?;
    for (name, proposal) in [("random", Proposal::Random), ("demo-fit", Proposal::DemoFit)] {
        for (n, d) in result.baseline_curve(proposal) {
            println!("{name:<9} proposal, {n:>4} samples: {d:.4}");
        }
    }
    for (n, d) in result.gcl_curve(samples) {
        println!("gcl after {n:>4} samples: {d:.4}");
    }
    println!("demonstrations {:.4}, re-optimized learned cost {:.4}", result.demo_distance, result.gcl_distance);
    Ok(())
}
