//! Analytic marginals of a linear-Gaussian controller on linearized
//! dynamics, checked against Monte Carlo rollouts, plus the trajectory KL
//! between two controllers.

use guided_cost::envs::EnvSpec;
use guided_cost::polopt::linearize_along;
use guided_cost::rng::substream;
use guided_cost::trajmath::{forward_marginals, kl_traj, rollout_lgc, GaussianTrajDist, LinearGaussianController};
use nalgebra::{DMatrix, DVector};

fn main() -> guided_cost::Result<()> {
    let env = EnvSpec::by_name("point-mass")?;
    let ctrl = LinearGaussianController::isotropic(env.horizon, env.d_x(), env.d_u(), 0.5)?;
    let (dynamics, _, _) = linearize_along(&env, &ctrl)?;
    let dist = GaussianTrajDist::new(dynamics.clone(), ctrl.clone())?;
    let marginals = forward_marginals(&dist)?;

    let n = 4000;
    let mut rng = substream(0, "rollouts");
    let rollouts = (0..n)
        .map(|_| rollout_lgc(&dynamics, &ctrl, &mut rng))
        .collect::<guided_cost::Result<Vec<_>>>()?;

    println!("  t   analytic E[x]        sampled E[x]         analytic Var[x0]  sampled");
    for t in (0..env.horizon).step_by(env.horizon / 5) {
        let mean = rollouts.iter().fold(DVector::zeros(env.d_x()), |acc, r| acc + &r.states()[t]) / n as f64;
        let var = rollouts.iter().map(|r| (r.states()[t][0] - mean[0]).powi(2)).sum::<f64>() / (n - 1) as f64;
        let m = &marginals[t];
        println!(
            "{t:>3}   ({:+.3}, {:+.3})   ({:+.3}, {:+.3})   {:>14.4}  {:.4}",
            m.state_mean[0], m.state_mean[1], mean[0], mean[1], m.state_cov[(0, 0)], var
        );
    }

    let quieter = ctrl.with_covariance(&(DMatrix::identity(env.d_u(), env.d_u()) * 0.25))?;
    println!("KL(sigma2=0.5 || sigma2=0.5)  = {:.3e}", kl_traj(&dist, &ctrl)?);
    println!("KL(sigma2=0.5 || sigma2=0.25) = {:.4}", kl_traj(&dist, &quieter)?);

    let csv = rollouts[0].to_csv();
    println!("first rollout as CSV, {} lines; header: {}", csv.lines().count(), csv.lines().next().unwrap_or(""));
    Ok(())
}
