//! Recovering a known demo distribution on the point mass, next to the
//! ablations without the entropy term and without importance weights.
//!
//! Runs a reduced configuration by default; pass `--full` for the preset.

use guided_cost::harness::config::{ExperimentConfig, ExperimentKind};
use guided_cost::harness::experiments::consistency;

fn main() -> guided_cost::Result<()> {
    let mut cfg = ExperimentConfig::preset(ExperimentKind::Consistency);
    if !std::env::args().any(|a| a == "--full") {
        cfg.env.horizon = Some(30);
        cfg.demos.count = 20;
        cfg.demos.conditions = 2;
        cfg.gcl.iterations = 8;
        cfg.gcl.ioc.iterations = 40;
    }
    let result = consistency(&cfg)?;
    println!("{:<14} {:>14} {:>16}", "variant", "KL to truth", "action variance");
    for variant in ["full", "empirical-iw", "no-maxent", "no-iw"] {
        println!("{variant:<14} {:>14.4} {:>16.4}", result.final_kl(variant), result.mean_action_variance(variant));
    }
    println!("KL per iteration, empirical-iw: {:?}", result.kl_curve("empirical-iw").iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>());
    Ok(())
}
