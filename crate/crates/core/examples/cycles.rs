//! Summary statistics of the bundled driving cycles, or of a cycle file.
//!
//! ```text
//! cargo run --example cycles
//! cargo run --example cycles -- my_cycle.csv kmph
//! ```

use transfer_ems::cycles::{builtin, cycle_stats, load_cycle, synth_trapezoid, DrivingCycle, SpeedUnit};

fn print_row(c: &DrivingCycle) {
    let s = cycle_stats(c);
    println!(
        "{:<14} {:>6} {:>8.0} {:>9.3} {:>8.1} {:>8.1}",
        c.name(),
        c.len(),
        s.duration,
        s.distance / 1000.0,
        s.v_max * 3.6,
        s.v_mean * 3.6
    );
    for w in c.warnings() {
        println!("    warning: {w}");
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    println!("{:<14} {:>6} {:>8} {:>9} {:>8} {:>8}", "cycle", "n", "T [s]", "d [km]", "vmax", "vmean");
    if let Some(path) = args.first() {
        let unit: SpeedUnit = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(SpeedUnit::Mps);
        print_row(&load_cycle(path, unit)?);
        return Ok(());
    }
    for name in builtin::NAMES {
        print_row(&builtin::by_name(name).expect("listed builtin"));
    }
    // a custom profile: 15 m/s in 10 s, held 30 s, braking over 12 s
    print_row(&synth_trapezoid(15.0, 10.0, 30.0, 12.0, 1.0)?);
    Ok(())
}
