//! Wheel demand, battery electrics and one step of the power split at a few
//! operating points.

use transfer_ems::powertrain::{
    battery_current, demand_force, demand_power, engine_fuel_rate, step_powertrain, BatteryState, Powertrain,
};

fn main() {
    let pt = Powertrain::default();
    let veh = &pt.vehicle;

    println!("{:>7} {:>6} {:>10} {:>10}", "v [m/s]", "a", "F [N]", "P [kW]");
    for (v, a) in [(0.0, 0.0), (10.0, 0.0), (10.0, 1.0), (20.0, 0.5), (30.0, 0.0), (15.0, -1.5)] {
        println!("{v:>7.1} {a:>6.1} {:>10.1} {:>10.2}", demand_force(veh, v, a), demand_power(veh, v, a) / 1e3);
    }

    println!("\nbattery: Voc = {} V, R0 = {} ohm", pt.battery.open_circuit_voltage, pt.battery.internal_resistance);
    for p in [-20e3, -5e3, 0.0, 5e3, 20e3, 40e3] {
        let i = battery_current(&pt.battery, p).expect("below the power limit");
        println!("  P = {:>6.1} kW  ->  I = {i:>8.3} A", p / 1e3);
    }

    println!("\nengine map:");
    for p in [0.0, 5e3, 20e3, 40e3, 56e3] {
        let (rate, _) = engine_fuel_rate(&pt.engine_map, p, veh.engine_max_power, pt.driveline.lower_heating_value);
        println!("  {:>5.1} kW  eff {:.3}  fuel {rate:.3} g/s", p / 1e3, pt.engine_map.eval(p));
    }

    println!("\none step at 15 m/s, 0.5 m/s^2 from SoC 0.6:");
    for p_eng in [0.0, 10e3, 20e3, 40e3] {
        let r = step_powertrain(&pt, BatteryState::new(0.6), 15.0, 0.5, p_eng, 1.0);
        println!(
            "  engine {:>4.0} kW: demand {:>5.1} kW, battery {:>6.2} kW, fuel {:.3} g, elec {:.3} g, soc {:.6}",
            p_eng / 1e3,
            r.p_req / 1e3,
            r.p_batt / 1e3,
            r.fuel_g,
            r.elec_g,
            r.soc
        );
    }
}
