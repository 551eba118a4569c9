//! Power-split hybrid model: road-load demand, planetary kinematics,
//! engine fuel rate from an efficiency map and an equivalent-circuit
//! battery.
//!
//! Energy flow is resolved by power balance at the wheels: whatever the
//! engine does not supply is drawn from (or returned to) the battery through
//! the motor/generator efficiency, subject to actuator limits. Commands the
//! hardware cannot honour are clipped and flagged, never rejected, because a
//! learning agent issues infeasible commands all the time.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PowertrainError {
    #[error("battery power {requested:.1} W exceeds the deliverable maximum {max:.1} W")]
    PowerLimit { requested: f64, max: f64 },
    #[error("efficiency map line {line}: {reason}")]
    Map { line: usize, reason: String },
    #[error("cannot read efficiency map {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Vehicle and driveline constants of the Prius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// Curb weight, kg.
    pub mass: f64,
    pub gravity: f64,
    pub rolling_coeff: f64,
    /// Air density, kg/m³.
    pub air_density: f64,
    /// Frontal area, m².
    pub frontal_area: f64,
    pub drag_coeff: f64,
    pub wheel_radius: f64,
    pub final_drive_ratio: f64,
    /// Planetary characteristic parameter (ring-to-sun tooth ratio).
    pub planetary_ratio: f64,
    pub engine_max_power: f64,
    pub engine_max_torque: f64,
    pub motor_max_power: f64,
    pub motor_max_torque: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1449.0,
            gravity: 9.81,
            rolling_coeff: 0.013,
            air_density: 1.225,
            frontal_area: 2.23,
            drag_coeff: 0.26,
            wheel_radius: 0.287,
            final_drive_ratio: 3.93,
            planetary_ratio: 2.6,
            engine_max_power: 56e3,
            engine_max_torque: 120.0,
            motor_max_power: 50e3,
            motor_max_torque: 400.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), PowertrainError> {
        let fields = [
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("rolling_coeff", self.rolling_coeff),
            ("air_density", self.air_density),
            ("frontal_area", self.frontal_area),
            ("drag_coeff", self.drag_coeff),
            ("wheel_radius", self.wheel_radius),
            ("final_drive_ratio", self.final_drive_ratio),
            ("planetary_ratio", self.planetary_ratio),
            ("engine_max_power", self.engine_max_power),
            ("engine_max_torque", self.engine_max_torque),
            ("motor_max_power", self.motor_max_power),
            ("motor_max_torque", self.motor_max_torque),
        ];
        match fields.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            Some((name, v)) => Err(PowertrainError::Parameter(format!("{name} must be positive, got {v}"))),
            None => Ok(()),
        }
    }
}

/// Equivalent-circuit battery pack (no thermal or ageing effects).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatteryParams {
    /// Nominal capacity, coulombs.
    pub capacity: f64,
    /// Charge at the start of an episode, coulombs.
    pub initial_charge: f64,
    /// Open-circuit voltage, V.
    pub open_circuit_voltage: f64,
    /// Internal resistance, Ω.
    pub internal_resistance: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        // 1.54 kWh at 237 V
        let capacity = 1.54e3 * 3600.0 / 237.0;
        Self {
            capacity,
            initial_charge: 0.6 * capacity,
            open_circuit_voltage: 237.0,
            internal_resistance: 0.3,
        }
    }
}

impl BatteryParams {
    pub fn validate(&self) -> Result<(), PowertrainError> {
        if !(self.capacity > 0.0) {
            return Err(PowertrainError::Parameter("battery capacity must be positive".into()));
        }
        if !(self.initial_charge > 0.0 && self.initial_charge <= self.capacity) {
            return Err(PowertrainError::Parameter("initial charge must lie in (0, capacity]".into()));
        }
        if !(self.open_circuit_voltage > 0.0 && self.internal_resistance > 0.0) {
            return Err(PowertrainError::Parameter("V_oc and R_0 must be positive".into()));
        }
        Ok(())
    }

    pub fn initial_soc(&self) -> f64 {
        self.initial_charge / self.capacity
    }

    /// Largest terminal power the circuit can deliver, `V_oc² / (4 R_0)`.
    pub fn max_discharge_power(&self) -> f64 {
        self.open_circuit_voltage * self.open_circuit_voltage / (4.0 * self.internal_resistance)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatteryState {
    pub soc: f64,
    /// Set when the last step hit a SoC bound.
    pub saturated: bool,
}

impl BatteryState {
    pub fn new(soc: f64) -> Self {
        Self { soc, saturated: false }
    }
}

/// Piecewise-linear efficiency curve over power, clamped at both ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyMap {
    power: Vec<f64>,
    efficiency: Vec<f64>,
}

const DEFAULT_ENGINE_MAP: &str = include_str!("../data/engine_map.csv");

impl EfficiencyMap {
    pub fn new(power: Vec<f64>, efficiency: Vec<f64>) -> Result<Self, PowertrainError> {
        if power.is_empty() || power.len() != efficiency.len() {
            return Err(PowertrainError::Map { line: 0, reason: "power and efficiency columns must be non-empty and equal length".into() });
        }
        for (k, w) in power.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(PowertrainError::Map { line: k + 3, reason: "power column must be strictly increasing".into() });
            }
        }
        if let Some(k) = efficiency.iter().position(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(PowertrainError::Map { line: k + 2, reason: format!("efficiency {} outside (0, 1]", efficiency[k]) });
        }
        Ok(Self { power, efficiency })
    }

    /// Constant efficiency at every power.
    pub fn flat(efficiency: f64) -> Self {
        Self::new(vec![0.0], vec![efficiency]).expect("flat efficiency in (0, 1]")
    }

    /// Synthetic Willans-style engine curve shipped with the crate.
    pub fn default_engine() -> Self {
        Self::parse(DEFAULT_ENGINE_MAP).expect("bundled engine map is valid")
    }

    /// Parses `power_w,efficiency` text.
    pub fn parse(text: &str) -> Result<Self, PowertrainError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let header = lines.next().map(|(_, l)| l.trim().to_ascii_lowercase());
        if header.as_deref() != Some("power_w,efficiency") {
            return Err(PowertrainError::Map { line: 1, reason: "expected header `power_w,efficiency`".into() });
        }
        let mut power = Vec::new();
        let mut efficiency = Vec::new();
        for (idx, line) in lines {
            let bad = |reason: String| PowertrainError::Map { line: idx + 1, reason };
            let (p, e) = line.split_once(',').ok_or_else(|| bad("expected two columns".into()))?;
            let p: f64 = p.trim().parse().map_err(|_| bad(format!("bad power `{}`", p.trim())))?;
            let e: f64 = e.trim().parse().map_err(|_| bad(format!("bad efficiency `{}`", e.trim())))?;
            power.push(p);
            efficiency.push(e);
        }
        Self::new(power, efficiency)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PowertrainError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PowertrainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn eval(&self, power: f64) -> f64 {
        let p = &self.power;
        let e = &self.efficiency;
        if power <= p[0] {
            return e[0];
        }
        let idx = p.partition_point(|&x| x <= power);
        if idx >= p.len() {
            return e[e.len() - 1];
        }
        let frac = (power - p[idx - 1]) / (p[idx] - p[idx - 1]);
        e[idx - 1] + frac * (e[idx] - e[idx - 1])
    }

    /// Arithmetic mean of the node efficiencies.
    pub fn mean_efficiency(&self) -> f64 {
        self.efficiency.iter().sum::<f64>() / self.efficiency.len() as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.power.iter().copied().zip(self.efficiency.iter().copied())
    }
}

/// Driveline and accounting settings not covered by the vehicle constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrivelineParams {
    /// Wheel-to-source efficiency in traction.
    pub transmission_efficiency: f64,
    /// Fraction of braking power recuperated at the wheels.
    pub regen_fraction: f64,
    /// Gasoline lower heating value, J/g.
    pub lower_heating_value: f64,
    /// Allow `elec_g` to go negative while charging.
    pub allow_negative_elec: bool,
}

impl Default for DrivelineParams {
    fn default() -> Self {
        Self {
            transmission_efficiency: 0.95,
            regen_fraction: 0.3,
            lower_heating_value: 42_600.0,
            allow_negative_elec: false,
        }
    }
}

/// Everything needed to advance the powertrain by one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Powertrain {
    pub vehicle: VehicleParams,
    pub battery: BatteryParams,
    pub driveline: DrivelineParams,
    pub engine_map: EfficiencyMap,
    pub motor_map: EfficiencyMap,
    pub generator_map: EfficiencyMap,
}

impl Default for Powertrain {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::default(),
            battery: BatteryParams::default(),
            driveline: DrivelineParams::default(),
            engine_map: EfficiencyMap::default_engine(),
            motor_map: EfficiencyMap::flat(0.9),
            generator_map: EfficiencyMap::flat(0.9),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    /// Engine fuel this step, g.
    pub fuel_g: f64,
    /// Battery energy this step as equivalent fuel mass, g.
    pub elec_g: f64,
    pub soc: f64,
    /// Power demanded at the power-split device, W.
    pub p_req: f64,
    /// Battery terminal power, W (positive = discharge).
    pub p_batt: f64,
    /// Mechanical power delivered by the motor/generator, W.
    pub p_motor: f64,
    /// Engine power actually applied, W.
    pub p_eng: f64,
    /// Some command or demand could not be honoured exactly.
    pub saturated: bool,
}

/// Longitudinal road load in N, no road grade. Rolling resistance acts only
/// while moving.
pub fn demand_force(p: &VehicleParams, v: f64, a: f64) -> f64 {
    let rolling = if v > 0.0 { p.mass * p.gravity * p.rolling_coeff } else { 0.0 };
    let aero = 0.5 * p.air_density * p.frontal_area * p.drag_coeff * v * v;
    rolling + aero + p.mass * a
}

/// Wheel power demand in W; negative while braking.
pub fn demand_power(p: &VehicleParams, v: f64, a: f64) -> f64 {
    demand_force(p, v, a) * v
}

/// Sun-gear speed from ring and carrier speeds (Willis relation).
pub fn planetary_speeds(p: &VehicleParams, w_ring: f64, w_carrier: f64) -> f64 {
    (1.0 + p.planetary_ratio) * w_carrier - p.planetary_ratio * w_ring
}

/// Pack current for a terminal power, positive when discharging.
///
/// Solves `P = I·V_oc − R_0·I²` for the smaller root. Evaluated as
/// `2P / (V_oc + √(V_oc² − 4 R_0 P))`, which is the same root without the
/// cancellation the textbook form suffers at small `P`.
pub fn battery_current(b: &BatteryParams, p_batt: f64) -> Result<f64, PowertrainError> {
    let voc = b.open_circuit_voltage;
    let disc = voc * voc - 4.0 * b.internal_resistance * p_batt;
    if disc < 0.0 {
        return Err(PowertrainError::PowerLimit { requested: p_batt, max: b.max_discharge_power() });
    }
    Ok(2.0 * p_batt / (voc + disc.sqrt()))
}

/// Coulomb-counting SoC update with clamping to [0, 1].
pub fn battery_step(b: &BatteryParams, s: BatteryState, p_batt: f64, dt: f64) -> Result<BatteryState, PowertrainError> {
    let current = battery_current(b, p_batt)?;
    Ok(apply_current(b, s, current, dt))
}

fn apply_current(b: &BatteryParams, s: BatteryState, current: f64, dt: f64) -> BatteryState {
    let soc = s.soc - current * dt / b.capacity;
    let clamped = soc.clamp(0.0, 1.0);
    BatteryState { soc: clamped, saturated: clamped != soc }
}

/// Engine fuel rate in g/s, with a flag when `p_eng` had to be clipped
/// into `[0, p_max]`.
pub fn engine_fuel_rate(map: &EfficiencyMap, p_eng: f64, p_max: f64, lhv: f64) -> (f64, bool) {
    let p = p_eng.clamp(0.0, p_max);
    let clipped = p != p_eng;
    if p == 0.0 {
        return (0.0, clipped);
    }
    (p / (map.eval(p) * lhv), clipped)
}

/// Advances the powertrain by `dt` seconds under an engine power command.
pub fn step_powertrain(pt: &Powertrain, s: BatteryState, v: f64, a: f64, p_eng_cmd: f64, dt: f64) -> StepResult {
    let veh = &pt.vehicle;
    let dl = &pt.driveline;
    let wheel = demand_power(veh, v, a);
    let p_req = if wheel >= 0.0 {
        wheel / dl.transmission_efficiency
    } else {
        (wheel * dl.regen_fraction).max(-veh.motor_max_power)
    };

    let (fuel_rate, mut saturated) =
        engine_fuel_rate(&pt.engine_map, p_eng_cmd, veh.engine_max_power, dl.lower_heating_value);
    let p_eng = p_eng_cmd.clamp(0.0, veh.engine_max_power);

    let motor_request = p_req - p_eng;
    let mut p_motor = motor_request.clamp(-veh.motor_max_power, veh.motor_max_power);
    saturated |= p_motor != motor_request;

    let mut p_batt = motor_to_battery(pt, p_motor);
    let p_batt_max = pt.battery.max_discharge_power();
    if p_batt > p_batt_max {
        p_batt = p_batt_max;
        p_motor = p_batt * pt.motor_map.eval(p_batt);
        saturated = true;
    }

    let battery = if dt == 0.0 {
        s
    } else {
        let current = battery_current(&pt.battery, p_batt).expect("terminal power within circuit limit");
        apply_current(&pt.battery, s, current, dt)
    };
    saturated |= battery.saturated;

    let elec_rate = p_batt / (pt.engine_map.mean_efficiency() * dl.lower_heating_value);
    let elec_rate = if dl.allow_negative_elec { elec_rate } else { elec_rate.max(0.0) };

    StepResult {
        fuel_g: fuel_rate * dt,
        elec_g: elec_rate * dt,
        soc: battery.soc,
        p_req,
        p_batt,
        p_motor,
        p_eng,
        saturated,
    }
}

/// Electrical power at the battery terminals for a mechanical motor power.
fn motor_to_battery(pt: &Powertrain, p_motor: f64) -> f64 {
    if p_motor >= 0.0 {
        p_motor / pt.motor_map.eval(p_motor)
    } else {
        p_motor * pt.generator_map.eval(-p_motor)
    }
}
