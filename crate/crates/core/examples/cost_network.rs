//! The learnable cost: identity initialization, quadratic expansion,
//! the two regularizers and checkpoint round trip.

use guided_cost::costmodel::CostNetwork;
use guided_cost::rng::substream;
use guided_cost::trajmath::Trajectory;
use nalgebra::DVector;

fn main() -> guided_cost::Result<()> {
    let net = CostNetwork::init_identity(4, vec![0, 1, 2, 3], &[8, 8], 4, 0.01)?;
    let x = DVector::from_vec(vec![0.3, -0.2, 0.1, 0.0]);
    let u = DVector::from_vec(vec![1.0, 0.5]);
    println!("identity init: c(x, u) = {:.6}, |x|^2 + 0.01|u|^2 = {:.6}", net.cost_forward(&x, &u), x.norm_squared() + 0.01 * u.norm_squared());

    let e = net.quad_expansion(&x, &u);
    println!("gradient c_x = {:?}", e.cx.as_slice());
    println!("Gauss-Newton C_xx diagonal = {:?}", e.cxx.diagonal().as_slice());

    // a trajectory that approaches the origin and then drifts away
    let states: Vec<_> = (0..10)
        .map(|t| {
            let r = (t as f64 - 6.0).abs() * 0.3;
            DVector::from_vec(vec![r, 0.0, 0.0, 0.0])
        })
        .collect();
    let traj = Trajectory::new(states, vec![DVector::zeros(2); 10])?;
    println!("step costs {:?}", net.step_costs(&traj).iter().map(|c| format!("{c:.2}")).collect::<Vec<_>>());
    let (lcr, _) = net.reg_lcr(&traj)?;
    let (mono, _) = net.reg_mono(&traj, 0.1);
    println!("lcr penalty {lcr:.4}, mono penalty (margin 0.1) {mono:.4}");

    let mut rng = substream(2, "init");
    let random = CostNetwork::random(4, vec![0, 1], &[16], 3, 0.01, &mut rng)?;
    let path = std::env::temp_dir().join("guided_cost_example_cost.json");
    random.save(&path)?;
    let restored = CostNetwork::load(&path)?;
    println!(
        "checkpoint with {} parameters restored exactly: {}",
        random.num_params(),
        restored.params() == random.params()
    );
    std::fs::remove_file(&path)?;
    Ok(())
}
