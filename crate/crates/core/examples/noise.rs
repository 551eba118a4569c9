//! Empirical behaviour of the exploration strategies: action-noise variance,
//! OU autocorrelation and the state consistency of parameter noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use transfer_ems::explore::{explore_action, perturb_actor, sample_action_noise, NoiseSpec, NoiseState};
use transfer_ems::net::{actor_specs, NetworkParams};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 200_000;

    for s2 in [0.02, 0.04, 0.06] {
        let spec = NoiseSpec::gaussian_action(s2);
        let mut st = NoiseState::default();
        let xs: Vec<f64> = (0..n).map(|_| sample_action_noise(&spec, &mut st, &mut rng)).collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        println!("Gaussian_AS({s2}): sample variance {var:.5}");
    }

    let spec = NoiseSpec::ou_action(0.09);
    let mut st = NoiseState::default();
    let xs: Vec<f64> = (0..n).map(|_| sample_action_noise(&spec, &mut st, &mut rng)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let c0: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    print!("OU_AS(0.09) autocorrelation:");
    for k in 1..=5 {
        let ck: f64 = xs.windows(k + 1).map(|w| (w[0] - mean) * (w[k] - mean)).sum();
        print!("  lag {k}: {:.3} (theory {:.3})", ck / c0, (1.0 - spec.ou_theta).powi(k as i32));
    }
    println!();

    let actor = NetworkParams::init(&actor_specs(3, &[64, 32]), &mut rng).unwrap();
    let spec = NoiseSpec::gaussian_param(0.03);
    let perturbed = perturb_actor(&actor, &spec, 0, &mut rng);
    let diff: Vec<f64> = perturbed.values().zip(actor.values()).map(|(a, b)| a - b).collect();
    let var = diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64;
    println!("Gaussian_PS(0.03): variance of the {}-parameter difference {var:.5}", diff.len());

    let s = [0.1, 0.3, -0.2];
    for spec in [NoiseSpec::gaussian_param(0.03), NoiseSpec::gaussian_action(0.06)] {
        let mut st = NoiseState::default();
        st.begin_episode(&spec, &actor, 0, &mut rng);
        let a = explore_action(&spec, &mut st, &actor, &s, &mut rng).value();
        let b = explore_action(&spec, &mut st, &actor, &s, &mut rng).value();
        println!("{spec}: same state twice -> {a:.5}, {b:.5}");
    }
}
