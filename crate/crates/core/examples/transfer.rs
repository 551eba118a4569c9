//! Train a source network, then adapt to the target cycle twice: from
//! scratch and from the transferred weights. Prints both learning-curve
//! summaries.
//!
//! ```text
//! cargo run --release --example transfer -- 2
//! ```

use transfer_ems::runner::{resolve_config, run_train_source, run_train_target, Mode, Overrides, Profile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1);
    let root = std::env::temp_dir().join(format!("transfer-ems-transfer-{seed}"));
    let flags = |out: &str| Overrides {
        profile: Some(Profile::Desk),
        seed: Some(seed),
        out: Some(root.join(out)),
        ..Overrides::default()
    };

    let source = run_train_source(&resolve_config(Mode::TrainSource, None, &flags("source"))?)?;
    println!("source: {} episodes, last return {:.2}", source.curve.len(), source.curve.last().unwrap_or(&f64::NAN));

    let scratch = run_train_target(&resolve_config(Mode::TrainTarget, None, &flags("scratch"))?)?;
    let transferred = run_train_target(&resolve_config(
        Mode::TrainTarget,
        None,
        &Overrides { checkpoint: Some(source.checkpoint.clone()), ..flags("transferred") },
    )?)?;

    println!("{:<12} {:>10} {:>10} {:>6}", "init", "JP", "AP", "TT");
    for run in [&scratch, &transferred] {
        let r = &run.report;
        println!("{:<12} {:>10.2} {:>10.2} {:>6}", run.source_init, r.jumpstart, r.asymptotic, r.time_to_threshold);
    }
    println!("runs under {}", root.display());
    Ok(())
}
