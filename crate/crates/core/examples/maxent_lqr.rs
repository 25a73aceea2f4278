//! Maximum-entropy trajectory optimization against the ground-truth
//! navigation cost with exact linearizations, and the effect of the cost
//! scale on the optimal action covariance.

use guided_cost::envs::{initial_controller, EnvSpec};
use guided_cost::gcl::evaluate_distance;
use guided_cost::polopt::{optimize_exact, ExactOptConfig};
use guided_cost::rng::substream;
use nalgebra::DVector;

fn main() -> guided_cost::Result<()> {
    let env = EnvSpec::nav2d();
    let start = DVector::from_vec(env.init_mean.clone());
    let init = initial_controller(&env, 1.0)?;
    let run = optimize_exact(&env, &env.cost, &init, &ExactOptConfig::default())?;

    println!("objective E[c] - H per iteration:");
    for (i, v) in run.trace.iter().enumerate().step_by(5) {
        println!("  {i:>3}  {v:.3}");
    }
    println!("converged: {}", run.converged);
    let mut rng = substream(1, "eval");
    println!("initial controller distance {:.4}", evaluate_distance(&env, &init, &start, 50, &mut rng)?);
    println!("optimized controller distance {:.4}", evaluate_distance(&env, &run.controller, &start, 50, &mut rng)?);

    let t = env.horizon / 2;
    let cov = &run.controller.step(t).cov;
    println!("action covariance at t={t}: diag ({:.4}, {:.4})", cov[(0, 0)], cov[(1, 1)]);
    println!("mean action variance over the horizon {:.4}", run.controller.mean_action_variance());
    Ok(())
}
