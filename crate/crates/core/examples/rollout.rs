//! Hand-written policies on a cycle, with a step trace written as CSV.
//!
//! ```text
//! cargo run --example rollout -- ece15 /tmp/trace.csv
//! ```

use std::sync::Arc;

use transfer_ems::cycles::builtin;
use transfer_ems::env::{rollout, Action, EpisodeLog, HevEnv, RewardParams, State};
use transfer_ems::powertrain::Powertrain;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let name = args.first().map(String::as_str).unwrap_or("udds-excerpt");
    let cycle = builtin::by_name(name).ok_or_else(|| format!("unknown cycle {name}"))?;
    let mut env = HevEnv::new(Arc::new(cycle), Arc::new(Powertrain::default()), RewardParams::default())?;

    let policies: Vec<(&str, Box<dyn Fn(&State) -> Action>)> = vec![
        ("engine off", Box::new(|_| Action::new(-1.0))),
        ("constant 5.6 kW", Box::new(|_| Action::new(-0.8))),
        ("soc hysteresis", Box::new(|s| Action::new(if s.soc < 0.6 { -0.85 } else { -1.0 }))),
    ];
    let mut best: Option<(&str, EpisodeLog)> = None;
    for (label, policy) in &policies {
        let log = rollout(&mut env, policy);
        let soc_end = log.records.last().map_or(0.6, |r| r.soc);
        println!(
            "{label:<16} return {:>10.2}  fuel {:>7.1} g  final soc {soc_end:.4}",
            log.total_return,
            log.total_fuel_g()
        );
        if best.as_ref().is_none_or(|(_, b)| log.total_return > b.total_return) {
            best = Some((*label, log));
        }
    }
    if let (Some(path), Some((label, log))) = (args.get(1), best) {
        log.write_csv(std::fs::File::create(path)?)?;
        println!("trace of `{label}` written to {path}");
    }
    Ok(())
}
