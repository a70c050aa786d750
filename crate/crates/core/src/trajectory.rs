//! Desired-trajectory generators (millimetres and seconds).

use std::path::PathBuf;

use crate::error::{Error, Result};

/// Converts an acceleration or jerk given per metre into per millimetre.
const MM_PER_M: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectorySpec {
    /// Sinusoid at `speed / wavelength` Hz after a rest of `dwell` seconds,
    /// faded in by a quintic smoothstep over `ramp_time`.
    SineScan {
        amplitude: f64,
        speed: f64,
        wavelength: f64,
        ramp_time: f64,
        dwell: f64,
    },
    /// Single-axis projection of a square outline followed by back-and-forth
    /// interior strokes, each move a jerk-limited rest-to-rest profile.
    /// Velocity in mm/s, acceleration in m/s^2, jerk in m/s^3.
    SquareLoop {
        side_length: f64,
        v_lim: f64,
        a_lim: f64,
        j_lim: f64,
        infill_strokes: usize,
        dwell: f64,
    },
    /// One sample per line (or first CSV column), linearly resampled from
    /// `sample_interval` to the controller rate.
    CustomSamples { file: PathBuf, sample_interval: f64 },
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("trajectory {name} must be positive, got {v}")))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "trajectory {name} must be non-negative, got {v}"
                )))
            }
        };
        match self {
            TrajectorySpec::SineScan {
                amplitude,
                speed,
                wavelength,
                ramp_time,
                dwell,
            } => {
                non_negative("amplitude", *amplitude)?;
                positive("speed", *speed)?;
                positive("wavelength", *wavelength)?;
                non_negative("ramp_time", *ramp_time)?;
                non_negative("dwell", *dwell)
            }
            TrajectorySpec::SquareLoop {
                side_length,
                v_lim,
                a_lim,
                j_lim,
                dwell,
                ..
            } => {
                positive("side_length", *side_length)?;
                positive("v_lim", *v_lim)?;
                positive("a_lim", *a_lim)?;
                positive("j_lim", *j_lim)?;
                non_negative("dwell", *dwell)
            }
            TrajectorySpec::CustomSamples {
                sample_interval, ..
            } => positive("sample_interval", *sample_interval),
        }
    }

    /// Peak magnitude the generator can reach (used for amplitude scaling).
    pub fn nominal_amplitude(&self) -> Option<f64> {
        match self {
            TrajectorySpec::SineScan { amplitude, .. } => Some(*amplitude),
            TrajectorySpec::SquareLoop { side_length, .. } => Some(*side_length),
            TrajectorySpec::CustomSamples { .. } => None,
        }
    }
}

/// `6x^5 - 15x^4 + 10x^3` on `[0, 1]`, clamped outside.
pub fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
}

/// Samples `steps` points at spacing `ts`.
pub fn generate_trajectory(spec: &TrajectorySpec, ts: f64, steps: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    if !(ts > 0.0) {
        return Err(Error::InvalidConfig("sampling interval must be positive".into()));
    }
    match spec {
        TrajectorySpec::SineScan {
            amplitude,
            speed,
            wavelength,
            ramp_time,
            dwell,
        } => {
            let f = speed / wavelength;
            Ok((0..steps)
                .map(|k| {
                    let t = k as f64 * ts - dwell;
                    if t <= 0.0 {
                        return 0.0;
                    }
                    let w = if *ramp_time > 0.0 {
                        smoothstep(t / ramp_time)
                    } else {
                        1.0
                    };
                    amplitude * w * (2.0 * std::f64::consts::PI * f * t).sin()
                })
                .collect())
        }
        TrajectorySpec::SquareLoop {
            side_length,
            v_lim,
            a_lim,
            j_lim,
            infill_strokes,
            dwell,
        } => square_loop(
            *side_length,
            *v_lim,
            a_lim * MM_PER_M,
            j_lim * MM_PER_M,
            *infill_strokes,
            *dwell,
            ts,
            steps,
        ),
        TrajectorySpec::CustomSamples {
            file,
            sample_interval,
        } => {
            let text = std::fs::read_to_string(file).map_err(|e| {
                Error::InvalidConfig(format!("cannot read trajectory file {}: {e}", file.display()))
            })?;
            let samples = parse_samples(&text)?;
            Ok(resample(&samples, *sample_interval, ts, steps))
        }
    }
}

fn parse_samples(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.split(',').next().unwrap_or("").trim();
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            // a non-numeric first line is a header
            _ if out.is_empty() && i == 0 => continue,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "trajectory file line {}: cannot parse {field:?}",
                    i + 1
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig("trajectory file has no samples".into()));
    }
    Ok(out)
}

/// Linear interpolation; holds the last sample past the end.
pub fn resample(samples: &[f64], from_dt: f64, to_dt: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|k| {
            let pos = k as f64 * to_dt / from_dt;
            let i = pos.floor() as usize;
            if i + 1 >= samples.len() {
                *samples.last().unwrap()
            } else {
                let frac = pos - i as f64;
                samples[i] + (samples[i + 1] - samples[i]) * frac
            }
        })
        .collect()
}

/// Rest-to-rest jerk-limited (double S) move described by constant-jerk
/// phases.
#[derive(Debug, Clone, PartialEq)]
pub struct JerkLimitedMove {
    distance: f64,
    /// (duration, jerk) for each phase.
    phases: Vec<(f64, f64)>,
}

impl JerkLimitedMove {
    /// Move of `distance >= 0` under velocity, acceleration and jerk limits.
    pub fn new(distance: f64, v: f64, a: f64, j: f64) -> Result<Self> {
        if !(v > 0.0 && a > 0.0 && j > 0.0) || !(v.is_finite() && a.is_finite() && j.is_finite())
        {
            return Err(Error::InvalidConfig(format!(
                "kinematic limits must be positive and finite (v {v}, a {a}, j {j})"
            )));
        }
        if !(distance >= 0.0 && distance.is_finite()) {
            return Err(Error::InvalidConfig(format!("invalid move distance {distance}")));
        }
        if distance == 0.0 {
            return Ok(Self {
                distance,
                phases: Vec::new(),
            });
        }
        // Acceleration phase reaching the velocity limit.
        let (mut tj, mut ta) = if v * j >= a * a {
            (a / j, a / j + v / a)
        } else {
            let tj = (v / j).sqrt();
            (tj, 2.0 * tj)
        };
        let mut tv = distance / v - ta;
        if tv < 0.0 {
            tv = 0.0;
            if distance >= 2.0 * a * a * a / (j * j) {
                tj = a / j;
                ta = tj / 2.0 + (tj * tj / 4.0 + distance / a).sqrt();
            } else {
                tj = (distance / (2.0 * j)).cbrt();
                ta = 2.0 * tj;
            }
        }
        let tc = ta - 2.0 * tj;
        let phases = vec![
            (tj, j),
            (tc, 0.0),
            (tj, -j),
            (tv, 0.0),
            (tj, -j),
            (tc, 0.0),
            (tj, j),
        ]
        .into_iter()
        .filter(|(d, _)| *d > 0.0)
        .collect();
        Ok(Self { distance, phases })
    }

    pub fn duration(&self) -> f64 {
        self.phases.iter().map(|(d, _)| d).sum()
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    /// Position, velocity and acceleration at time `t` (clamped to the move).
    pub fn evaluate(&self, t: f64) -> (f64, f64, f64) {
        let (mut p, mut v, mut a) = (0.0, 0.0, 0.0);
        let mut remaining = t.max(0.0);
        for &(d, jerk) in &self.phases {
            let h = remaining.min(d);
            p += v * h + a * h * h / 2.0 + jerk * h * h * h / 6.0;
            v += a * h + jerk * h * h / 2.0;
            a += jerk * h;
            remaining -= h;
            if remaining <= 0.0 {
                return (p, v, a);
            }
        }
        // Past the end: exactly at rest on the target.
        (self.distance, 0.0, 0.0)
    }
}

#[allow(clippy::too_many_arguments)]
fn square_loop(
    side: f64,
    v: f64,
    a: f64,
    j: f64,
    infill: usize,
    dwell: f64,
    ts: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let side_move = JerkLimitedMove::new(side, v, a, j)?;
    let step_len = side / (infill as f64 + 1.0);
    let step_move = JerkLimitedMove::new(step_len, v, a, j)?;
    // (start position, direction, move) or a hold of the given duration.
    enum Seg<'a> {
        Move(f64, f64, &'a JerkLimitedMove),
        Hold(f64, f64),
    }
    // outline: +x, hold while y moves, -x, hold while y returns; then
    // interior strokes separated by short perpendicular steps
    let mut cycle: Vec<Seg> = vec![
        Seg::Move(0.0, 1.0, &side_move),
        Seg::Hold(side, side_move.duration()),
        Seg::Move(side, -1.0, &side_move),
        Seg::Hold(0.0, side_move.duration()),
    ];
    let mut at = 0.0;
    for _ in 0..infill {
        let dir = if at == 0.0 { 1.0 } else { -1.0 };
        cycle.push(Seg::Move(at, dir, &side_move));
        at = if at == 0.0 { side } else { 0.0 };
        cycle.push(Seg::Hold(at, step_move.duration()));
    }
    if at != 0.0 {
        cycle.push(Seg::Move(at, -1.0, &side_move));
    }
    let cycle_time: f64 = cycle
        .iter()
        .map(|s| match s {
            Seg::Move(_, _, m) => m.duration(),
            Seg::Hold(_, d) => *d,
        })
        .sum();
    Ok((0..steps)
        .map(|k| {
            let t = k as f64 * ts - dwell;
            if t <= 0.0 {
                return 0.0;
            }
            let mut local = t % cycle_time;
            for seg in &cycle {
                match seg {
                    Seg::Move(start, dir, m) => {
                        if local < m.duration() {
                            return start + dir * m.evaluate(local).0;
                        }
                        local -= m.duration();
                    }
                    Seg::Hold(pos, d) => {
                        if local < *d {
                            return *pos;
                        }
                        local -= d;
                    }
                }
            }
            0.0
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothstep_endpoints() {
        assert_eq!(smoothstep(-1.0), 0.0);
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(0.5), 0.5);
        assert_eq!(smoothstep(1.0), 1.0);
        assert_eq!(smoothstep(2.0), 1.0);
    }

    #[test]
    fn move_reaches_target_within_limits() {
        for &(d, v, a, j) in &[
            (10.0, 60.0, 3000.0, 6.0e6),
            (10.0, 100.0, 10000.0, 5.0e6),
            (0.01, 60.0, 3000.0, 6.0e6),
            (1.0, 60.0, 3000.0, 1.0e4),
        ] {
            let m = JerkLimitedMove::new(d, v, a, j).unwrap();
            let (p, vel, acc) = m.evaluate(m.duration());
            assert!((p - d).abs() < 1e-9 * d.max(1.0), "{d} {v} {a} {j}: {p}");
            assert!(vel.abs() < 1e-9 && acc.abs() < 1e-6);
            let n = 2000;
            for i in 0..=n {
                let (_, vel, acc) = m.evaluate(m.duration() * i as f64 / n as f64);
                assert!(vel <= v * (1.0 + 1e-9) && vel >= -1e-9);
                assert!(acc.abs() <= a * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn rejects_bad_limits() {
        assert!(JerkLimitedMove::new(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(JerkLimitedMove::new(1.0, 1.0, -1.0, 1.0).is_err());
        let spec = TrajectorySpec::SquareLoop {
            side_length: 10.0,
            v_lim: 60.0,
            a_lim: 0.0,
            j_lim: 6000.0,
            infill_strokes: 0,
            dwell: 0.0,
        };
        assert!(generate_trajectory(&spec, 0.001, 10).is_err());
    }

    #[test]
    fn resample_linear() {
        assert_eq!(resample(&[0.0, 1.0], 2.0, 1.0, 4), vec![0.0, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn parses_header_and_columns() {
        assert_eq!(parse_samples("y\n1.0\n2.5, 7\n").unwrap(), vec![1.0, 2.5]);
        assert!(parse_samples("1\nx\n").is_err());
    }
}
