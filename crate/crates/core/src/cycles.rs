//! Driving cycles: loading, validation, resampling and the derived
//! per-step acceleration used by the environment state.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default sample period of standard cycle tabulations.
pub const DEFAULT_DT: f64 = 1.0;

const UNIFORM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CycleError {
    #[error("cannot read cycle file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid cycle: {0}")]
    Validation(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Unit of the speed column in a cycle file. Must be declared, never guessed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedUnit {
    Mps,
    Kmph,
}

impl SpeedUnit {
    pub fn to_mps(self, value: f64) -> f64 {
        match self {
            SpeedUnit::Mps => value,
            SpeedUnit::Kmph => value / 3.6,
        }
    }
}

impl FromStr for SpeedUnit {
    type Err = CycleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mps" => Ok(SpeedUnit::Mps),
            "kmph" => Ok(SpeedUnit::Kmph),
            other => Err(CycleError::Argument(format!(
                "unknown speed unit `{other}` (expected mps or kmph)"
            ))),
        }
    }
}

impl fmt::Display for SpeedUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpeedUnit::Mps => "mps",
            SpeedUnit::Kmph => "kmph",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CycleSample {
    /// Seconds from cycle start.
    pub t: f64,
    /// Vehicle speed, m/s.
    pub v: f64,
    /// Forward-difference acceleration, m/s².
    pub acc: f64,
}

/// A uniformly sampled speed trace.
///
/// `acc[k] = (v[k+1] - v[k]) / dt` for every sample but the last, whose
/// acceleration is zero. This aligns `acc[k]` with the transition the
/// environment takes from step `k` to `k + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DrivingCycle {
    name: String,
    dt: f64,
    samples: Vec<CycleSample>,
    warnings: Vec<String>,
}

impl DrivingCycle {
    /// Builds a cycle from uniformly spaced speeds (m/s) starting at t = 0.
    pub fn from_speeds(name: impl Into<String>, dt: f64, speeds: &[f64]) -> Result<Self, CycleError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(CycleError::Argument(format!("dt must be positive, got {dt}")));
        }
        if speeds.is_empty() {
            return Err(CycleError::Validation("cycle has no samples".into()));
        }
        for (k, &v) in speeds.iter().enumerate() {
            if !v.is_finite() {
                return Err(CycleError::Validation(format!("speed at sample {k} is not finite")));
            }
            if v < 0.0 {
                return Err(CycleError::Validation(format!("negative speed {v} at sample {k}")));
            }
        }
        let n = speeds.len();
        let samples = speeds
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let acc = if k + 1 < n { (speeds[k + 1] - v) / dt } else { 0.0 };
                CycleSample { t: k as f64 * dt, v, acc }
            })
            .collect();
        let mut warnings = Vec::new();
        if speeds[0] != 0.0 {
            warnings.push(format!("cycle does not start at rest (v0 = {} m/s)", speeds[0]));
        }
        Ok(Self { name: name.into(), dt, samples, warnings })
    }

    /// Builds a cycle from arbitrary `(t, v)` points, resampling onto a
    /// uniform grid of spacing `dt` if the points are not already uniform.
    pub fn from_points(name: impl Into<String>, points: &[(f64, f64)], dt: f64) -> Result<Self, CycleError> {
        let name = name.into();
        if points.is_empty() {
            return Err(CycleError::Validation("cycle has no samples".into()));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(CycleError::Validation(format!(
                    "time is not strictly increasing at t = {}",
                    w[1].0
                )));
            }
        }
        if let Some(&(t, v)) = points.iter().find(|p| p.1 < 0.0) {
            return Err(CycleError::Validation(format!("negative speed {v} at t = {t}")));
        }
        let speeds: Vec<f64> = match uniform_step(points) {
            Some(step) if (step - dt).abs() <= UNIFORM_TOL * dt.max(1.0) => {
                points.iter().map(|p| p.1).collect()
            }
            _ => {
                if !(dt > 0.0) {
                    return Err(CycleError::Argument(format!("dt must be positive, got {dt}")));
                }
                let t0 = points[0].0;
                let span = points[points.len() - 1].0 - t0;
                let n = (span / dt + UNIFORM_TOL).floor() as usize + 1;
                (0..n).map(|k| interpolate(points, t0 + k as f64 * dt)).collect()
            }
        };
        Self::from_speeds(name, dt, &speeds)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[CycleSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Non-fatal findings recorded while loading (e.g. not starting at rest).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.v).collect()
    }

    /// Linear-interpolation resample onto a new uniform step.
    pub fn resample(&self, dt: f64) -> Result<Self, CycleError> {
        let points: Vec<(f64, f64)> = self.samples.iter().map(|s| (s.t, s.v)).collect();
        let mut out = Self::from_points(self.name.clone(), &points, dt)?;
        out.warnings = self.warnings.clone();
        Ok(out)
    }

    /// Samples `[start, end)` as a new cycle whose clock restarts at zero.
    pub fn excerpt(&self, name: impl Into<String>, start: usize, end: usize) -> Result<Self, CycleError> {
        if start >= end || end > self.samples.len() {
            return Err(CycleError::Argument(format!(
                "excerpt [{start}, {end}) out of range for {} samples",
                self.samples.len()
            )));
        }
        let speeds: Vec<f64> = self.samples[start..end].iter().map(|s| s.v).collect();
        Self::from_speeds(name, self.dt, &speeds)
    }
}

fn uniform_step(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return Some(DEFAULT_DT);
    }
    let step = points[1].0 - points[0].0;
    points
        .windows(2)
        .all(|w| ((w[1].0 - w[0].0) - step).abs() <= UNIFORM_TOL * step.max(1.0))
        .then_some(step)
}

fn interpolate(points: &[(f64, f64)], t: f64) -> f64 {
    let idx = points.partition_point(|p| p.0 <= t);
    if idx == 0 {
        return points[0].1;
    }
    if idx >= points.len() {
        return points[points.len() - 1].1;
    }
    let (t0, v0) = points[idx - 1];
    let (t1, v1) = points[idx];
    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
}

/// Parses `time,speed` text (header required; LF or CRLF).
pub fn parse_cycle(name: &str, text: &str, unit: SpeedUnit, dt: f64) -> Result<DrivingCycle, CycleError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) => {
            let cols: Vec<String> = header.split(',').map(|c| c.trim().to_ascii_lowercase()).collect();
            if cols.len() < 2 || cols[0] != "time" || cols[1] != "speed" {
                return Err(CycleError::Parse {
                    line: 1,
                    reason: format!("expected header `time,speed`, found `{}`", header.trim()),
                });
            }
        }
        None => return Err(CycleError::Validation("cycle file is empty".into())),
    }
    let mut points = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let mut fields = line.split(',').map(str::trim);
        let mut num = |what: &str| -> Result<f64, CycleError> {
            let raw = fields.next().ok_or_else(|| CycleError::Parse {
                line: line_no,
                reason: format!("missing {what} column"),
            })?;
            raw.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| CycleError::Parse {
                line: line_no,
                reason: format!("{what} `{raw}` is not a number"),
            })
        };
        let t = num("time")?;
        let v = num("speed")?;
        if v < 0.0 {
            return Err(CycleError::Validation(format!("negative speed {v} at line {line_no}")));
        }
        if let Some(&(t_prev, _)) = points.last() {
            if !(t > t_prev) {
                return Err(CycleError::Validation(format!(
                    "time is not strictly increasing at line {line_no}"
                )));
            }
        }
        points.push((t, unit.to_mps(v)));
    }
    DrivingCycle::from_points(name, &points, dt)
}

/// Loads a cycle file at the default 1 s step.
pub fn load_cycle(path: impl AsRef<Path>, unit: SpeedUnit) -> Result<DrivingCycle, CycleError> {
    load_cycle_with_dt(path, unit, DEFAULT_DT)
}

pub fn load_cycle_with_dt(path: impl AsRef<Path>, unit: SpeedUnit, dt: f64) -> Result<DrivingCycle, CycleError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CycleError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cycle".into());
    parse_cycle(&name, &text, unit, dt)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CycleStats {
    pub duration: f64,
    /// Left Riemann sum over the `n - 1` steps the environment takes.
    pub distance: f64,
    pub v_max: f64,
    pub v_mean: f64,
}

pub fn cycle_stats(c: &DrivingCycle) -> CycleStats {
    let s = c.samples();
    let n = s.len();
    let distance: f64 = s[..n - 1].iter().map(|x| x.v * c.dt()).sum();
    let v_max = s.iter().map(|x| x.v).fold(0.0, f64::max);
    let v_mean = s.iter().map(|x| x.v).sum::<f64>() / n as f64;
    CycleStats { duration: s[n - 1].t - s[0].t, distance, v_max, v_mean }
}

/// Piecewise-linear 0 → `v_peak` → `v_peak` → 0 test cycle.
pub fn synth_trapezoid(v_peak: f64, t_rise: f64, t_hold: f64, t_fall: f64, dt: f64) -> Result<DrivingCycle, CycleError> {
    if !(dt > 0.0) {
        return Err(CycleError::Argument(format!("dt must be positive, got {dt}")));
    }
    if !(v_peak > 0.0) {
        return Err(CycleError::Argument(format!("v_peak must be positive, got {v_peak}")));
    }
    for (what, d) in [("t_rise", t_rise), ("t_hold", t_hold), ("t_fall", t_fall)] {
        if d < dt {
            return Err(CycleError::Argument(format!("{what} = {d} is shorter than dt = {dt}")));
        }
    }
    let points = [
        (0.0, 0.0),
        (t_rise, v_peak),
        (t_rise + t_hold, v_peak),
        (t_rise + t_hold + t_fall, 0.0),
    ];
    let total = t_rise + t_hold + t_fall;
    let n = (total / dt + UNIFORM_TOL).floor() as usize + 1;
    let speeds: Vec<f64> = (0..n).map(|k| interpolate(&points, k as f64 * dt)).collect();
    DrivingCycle::from_speeds(format!("trapezoid-{v_peak}"), dt, &speeds)
}

/// Standard cycles bundled with the crate, in m/s at 1 Hz.
pub mod builtin {
    use super::*;

    const UDDS: &str = include_str!("../data/udds.csv");
    const FTP75: &str = include_str!("../data/ftp75.csv");
    const NEDC: &str = include_str!("../data/nedc.csv");

    pub fn udds() -> DrivingCycle {
        parse_cycle("udds", UDDS, SpeedUnit::Mps, DEFAULT_DT).expect("bundled UDDS table is valid")
    }

    pub fn ftp75() -> DrivingCycle {
        parse_cycle("ftp75", FTP75, SpeedUnit::Mps, DEFAULT_DT).expect("bundled FTP-75 table is valid")
    }

    pub fn nedc() -> DrivingCycle {
        parse_cycle("nedc", NEDC, SpeedUnit::Mps, DEFAULT_DT).expect("bundled NEDC table is valid")
    }

    /// First UDDS hill (0–125 s), a short urban excerpt for desk-scale runs.
    pub fn udds_excerpt() -> DrivingCycle {
        udds().excerpt("udds-excerpt", 0, 126).expect("excerpt in range")
    }

    /// One ECE-15 elementary urban cycle (the first 195 s of NEDC).
    pub fn ece15() -> DrivingCycle {
        nedc().excerpt("ece15", 0, 196).expect("excerpt in range")
    }

    /// Desk-scale synthetic trapezoid.
    pub fn desk_trapezoid() -> DrivingCycle {
        synth_trapezoid(12.0, 8.0, 20.0, 8.0, DEFAULT_DT).expect("valid trapezoid")
    }

    /// Resolves a `builtin:<name>` reference.
    pub fn by_name(name: &str) -> Option<DrivingCycle> {
        Some(match name {
            "udds" => udds(),
            "ftp75" => ftp75(),
            "nedc" => nedc(),
            "udds-excerpt" => udds_excerpt(),
            "ece15" => ece15(),
            "trapezoid" => desk_trapezoid(),
            _ => return None,
        })
    }

    pub const NAMES: [&str; 6] = ["udds", "ftp75", "nedc", "udds-excerpt", "ece15", "trapezoid"];
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn parse(text: &str, unit: SpeedUnit) -> Result<DrivingCycle, CycleError> {
        parse_cycle("t", text, unit, DEFAULT_DT)
    }

    #[test]
    fn linear_ramp_forward_difference() {
        let c = parse("time,speed\n0,0\n1,1\n2,2\n", SpeedUnit::Mps).unwrap();
        let acc: Vec<f64> = c.samples().iter().map(|s| s.acc).collect();
        assert_eq!(acc, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn kmph_conversion() {
        let c = parse("time,speed\r\n0,0\r\n1,36\r\n", SpeedUnit::Kmph).unwrap();
        assert_eq!(c.speeds(), vec![0.0, 10.0]);
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse("time,speed\n0,0\n1,abc\n", SpeedUnit::Mps).unwrap_err();
        match err {
            CycleError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e:?}"),
        }
        assert!(matches!(parse("time,speed\n0,0\n1\n", SpeedUnit::Mps), Err(CycleError::Parse { line: 3, .. })));
    }

    #[test]
    fn rejects_negative_speed_and_nonmonotone_time() {
        assert!(matches!(parse("time,speed\n0,0\n1,-1\n", SpeedUnit::Mps), Err(CycleError::Validation(_))));
        assert!(matches!(parse("time,speed\n0,0\n2,1\n1,1\n", SpeedUnit::Mps), Err(CycleError::Validation(_))));
        assert!(matches!(parse("time,speed\n0,0\n0,1\n", SpeedUnit::Mps), Err(CycleError::Validation(_))));
    }

    #[test]
    fn missing_header_is_rejected() {
        assert!(matches!(parse("0,0\n1,1\n", SpeedUnit::Mps), Err(CycleError::Parse { line: 1, .. })));
    }

    #[test]
    fn nonuniform_input_is_resampled() {
        let c = parse("time,speed\n0,0\n2,4\n3,4\n", SpeedUnit::Mps).unwrap();
        assert_eq!(c.speeds(), vec![0.0, 2.0, 4.0, 4.0]);
        assert_eq!(c.dt(), 1.0);
    }

    #[test]
    fn warns_when_not_starting_at_rest() {
        let c = parse("time,speed\n0,3\n1,3\n", SpeedUnit::Mps).unwrap();
        assert_eq!(c.warnings().len(), 1);
        let c = parse("time,speed\n0,0\n1,3\n", SpeedUnit::Mps).unwrap();
        assert!(c.warnings().is_empty());
    }

    #[test]
    fn stats_constant_and_single_sample() {
        let c = DrivingCycle::from_speeds("c", 1.0, &[10.0; 11]).unwrap();
        let s = cycle_stats(&c);
        assert_eq!(s.distance, 100.0);
        assert_eq!(s.duration, 10.0);
        let one = DrivingCycle::from_speeds("one", 1.0, &[0.0]).unwrap();
        let s = cycle_stats(&one);
        assert_eq!((s.duration, s.distance), (0.0, 0.0));
    }

    #[test]
    fn trapezoid_shape_and_area() {
        let c = synth_trapezoid(10.0, 5.0, 10.0, 5.0, 1.0).unwrap();
        assert_eq!(c.len(), 21);
        let acc: Vec<f64> = c.samples().iter().map(|s| s.acc).collect();
        assert!(acc[..5].iter().all(|&a| a == 2.0));
        assert!(acc[5..15].iter().all(|&a| a == 0.0));
        assert!(acc[15..20].iter().all(|&a| a == -2.0));
        assert_eq!(acc[20], 0.0);
        // 0.5*5*10 + 10*10 + 0.5*5*10
        assert_abs_diff_eq!(cycle_stats(&c).distance, 150.0, epsilon = 1e-12);
    }

    #[test]
    fn trapezoid_argument_errors() {
        assert!(synth_trapezoid(0.0, 5.0, 10.0, 5.0, 1.0).is_err());
        assert!(synth_trapezoid(10.0, 5.0, 10.0, 5.0, 0.0).is_err());
        assert!(synth_trapezoid(10.0, 5.0, 10.0, 5.0, -1.0).is_err());
        assert!(synth_trapezoid(10.0, 0.5, 10.0, 5.0, 1.0).is_err());
    }

    #[test]
    fn bundled_udds_matches_published_table() {
        let c = builtin::udds();
        assert_eq!(c.len(), 1370);
        assert_abs_diff_eq!(cycle_stats(&c).v_max, 25.35, epsilon = 0.01);
        assert!(c.warnings().is_empty());
    }

    #[test]
    fn bundled_nedc_duration() {
        let s = cycle_stats(&builtin::nedc());
        assert_eq!(s.duration, 1180.0);
        // 120 km/h top speed of the extra-urban part
        assert_abs_diff_eq!(s.v_max, 120.0 / 3.6, epsilon = 1e-6);
        assert_eq!(cycle_stats(&builtin::ftp75()).duration, 1874.0);
    }

    #[test]
    fn resample_at_same_dt_is_identity() {
        for c in [builtin::udds(), builtin::nedc(), builtin::desk_trapezoid()] {
            assert_eq!(c.resample(c.dt()).unwrap().samples(), c.samples());
        }
    }

    #[test]
    fn every_builtin_resolves() {
        for name in builtin::NAMES {
            assert!(builtin::by_name(name).is_some(), "{name}");
        }
        assert!(builtin::by_name("wltp").is_none());
    }
}
