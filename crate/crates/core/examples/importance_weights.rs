//! Self-normalized estimate of a partition function from samples of two
//! proposals, with fusion importance weights and without.

use std::f64::consts::PI;

use guided_cost::ioc::SampleSet;
use guided_cost::linalg::standard_normal;
use guided_cost::rng::substream;
use guided_cost::trajmath::{ControllerStep, LinearGaussianController, Trajectory};
use nalgebra::{DMatrix, DVector};

fn proposal(mean: f64, var: f64) -> LinearGaussianController {
    let step = ControllerStep {
        gain: DMatrix::zeros(1, 1),
        offset: DVector::from_element(1, mean),
        cov: DMatrix::from_element(1, 1, var),
    };
    LinearGaussianController::new(vec![step; 2]).expect("valid controller")
}

fn main() -> guided_cost::Result<()> {
    // target exp(-(u0² + u1²)), whose integral is π
    let cost = |t: &Trajectory| t.actions().iter().map(|u| u[0] * u[0]).sum::<f64>();
    let proposals = [proposal(1.0, 2.0), proposal(-0.5, 0.5)];
    let mut set = SampleSet::new();
    let mut rng = substream(3, "samples");
    for q in &proposals {
        let k = set.add_proposal(q.clone())?;
        let (m, sd) = (q.step(0).offset[0], q.step(0).cov[(0, 0)].sqrt());
        let draws = (0..20_000)
            .map(|_| {
                let u = standard_normal(2, &mut rng) * sd + DVector::from_element(2, m);
                Trajectory::new(vec![DVector::zeros(1); 2], vec![u.rows(0, 1).into_owned(), u.rows(1, 1).into_owned()])
            })
            .collect::<guided_cost::Result<Vec<_>>>()?;
        set.add_samples(k, draws)?;
    }
    let log_z = set.fusion_log_weights()?;
    let n = set.len() as f64;
    let weighted = (0..set.len()).map(|j| (log_z[j] - cost(set.trajectory(j))).exp()).sum::<f64>() / n;
    let unweighted = (0..set.len()).map(|j| (-cost(set.trajectory(j))).exp()).sum::<f64>() / n;
    println!("analytic Z        {PI:.5}");
    println!("fusion-weighted   {weighted:.5}  ({:+.2}%)", 100.0 * (weighted / PI - 1.0));
    println!("unweighted        {unweighted:.5}  ({:+.2}%)", 100.0 * (unweighted / PI - 1.0));
    Ok(())
}
