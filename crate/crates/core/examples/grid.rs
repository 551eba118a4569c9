//! The source-init by target-noise adaptation grid at desk scale.
//!
//! Takes a while: four source trainings and 25 target runs.
//!
//! ```text
//! cargo run --release --example grid -- 1
//! ```

use transfer_ems::runner::{resolve_config, run_grid, Mode, Overrides, Profile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1);
    let out = std::env::temp_dir().join(format!("transfer-ems-grid-{seed}"));
    let flags = Overrides { profile: Some(Profile::Desk), seed: Some(seed), out: Some(out), ..Overrides::default() };
    let summary = run_grid(&resolve_config(Mode::Grid, None, &flags)?)?;

    let mut targets: Vec<&str> = Vec::new();
    for row in &summary.rows {
        if !targets.contains(&row.target_noise.as_str()) {
            targets.push(&row.target_noise);
        }
    }
    for target in targets {
        println!("target noise {target}");
        for row in summary.rows.iter().filter(|r| r.target_noise == target) {
            match &row.result {
                Ok(r) => println!(
                    "  {:<12} JP {:>9.2}  AP {:>8.2}  TT {:>3}",
                    row.source_init, r.jumpstart, r.asymptotic, r.time_to_threshold
                ),
                Err(e) => println!("  {:<12} failed: {e}", row.source_init),
            }
        }
    }
    println!("summary: {}", summary.path.display());
    Ok(())
}
