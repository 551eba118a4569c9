//! Backprop against central finite differences on random actor and critic
//! networks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use transfer_ems::net::{actor_specs, critic_specs, NetworkParams};

const EPS: f64 = 1e-5;

/// Largest relative error over all parameters of `net` at input `x`, for the
/// scalar objective `w · output`.
fn check(net: &NetworkParams, x: &[f64], w: &[f64]) -> f64 {
    let objective = |n: &NetworkParams| n.forward(x).unwrap().iter().zip(w).map(|(o, w)| o * w).sum::<f64>();
    let (grads, _) = net.backward(x, w).unwrap();
    let analytic = grads.flatten();
    let base = net.flatten();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (i, &g) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[i] = base[i] + EPS;
        probe.set_flat(&p).unwrap();
        let up = objective(&probe);
        p[i] = base[i] - EPS;
        probe.set_flat(&p).unwrap();
        let down = objective(&probe);
        let numeric = (up - down) / (2.0 * EPS);
        worst = worst.max((g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-6));
    }
    worst
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cases = [vec![8], vec![16, 8], vec![64, 32]];
    for hidden in &cases {
        let actor = NetworkParams::init(&actor_specs(3, hidden), &mut rng).unwrap();
        let critic = NetworkParams::init(&critic_specs(3, 1, hidden), &mut rng).unwrap();
        let ea = check(&actor, &[0.2, -0.4, 0.1], &[1.0]);
        let ec = check(&critic, &[0.2, -0.4, 0.1, 0.7], &[1.0]);
        println!(
            "hidden {hidden:?}: actor {} params, max rel err {ea:.2e}; critic {} params, max rel err {ec:.2e}",
            actor.num_params(),
            critic.num_params()
        );
    }
}
