//! Desk-scale source training with a chosen exploration noise.
//!
//! ```text
//! cargo run --release --example train_source -- 'OU_AS(0.09)' 3
//! ```

use transfer_ems::runner::{resolve_config, run_train_source, Mode, Overrides, Profile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let noise = args.first().map(|s| s.parse()).transpose()?;
    let seed = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(1);
    let out = std::env::temp_dir().join(format!("transfer-ems-source-{seed}"));
    let flags = Overrides { profile: Some(Profile::Desk), seed: Some(seed), out: Some(out), noise, ..Overrides::default() };
    let cfg = resolve_config(Mode::TrainSource, None, &flags)?;
    println!("{} on {:?}, {} episodes", cfg.source_noise, cfg.source_cycles, cfg.source.episodes);

    let run = run_train_source(&cfg)?;
    for (k, chunk) in run.curve.chunks(10).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!("episodes {:>3}-{:<3} mean return {mean:>10.2}", 10 * k, 10 * k + chunk.len() - 1);
    }
    println!("checkpoint: {}", run.checkpoint.display());
    Ok(())
}
