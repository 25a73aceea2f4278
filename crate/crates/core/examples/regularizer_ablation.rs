//! Dropping either cost regularizer on the navigation and arm tasks, from
//! random and demo-fit initial controllers.
//!
//! Runs a reduced configuration by default; pass `--full` for the preset.

use guided_cost::harness::config::{ExperimentConfig, ExperimentKind};
use guided_cost::harness::experiments::{ablate_reg, init_name};

fn main() -> guided_cost::Result<()> {
    let mut cfg = ExperimentConfig::preset(ExperimentKind::AblateReg);
    if !std::env::args().any(|a| a == "--full") {
        cfg.eval.ablation_seeds = 1;
        cfg.eval.ablation_envs = vec!["nav2d".into()];
        cfg.gcl.iterations = 5;
        cfg.gcl.ioc.iterations = 40;
    }
    let result = ablate_reg(&cfg)?;
    println!("{:<8} {:<9} {:>8} {:>8} {:>8}", "env", "init", "full", "no-lcr", "no-mono");
    for (env, init) in result.configurations() {
        let d = |v| result.mean_distance(&env, init, v);
        println!("{env:<8} {:<9} {:>8.4} {:>8.4} {:>8.4}", init_name(init), d("full"), d("no-lcr"), d("no-mono"));
    }
    Ok(())
}
