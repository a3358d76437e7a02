//! Arc-length parameterized reference paths: curvature, lane tube and speed
//! profile, plus the CSV file format and the bundled path library.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::PathError;

/// Reference path sampled on a strictly increasing arc-length grid.
///
/// Lateral sign convention: left of the centerline is negative, so
/// `lane_left <= 0 <= lane_right`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathGeometry {
    pub name: String,
    arc: Vec<f64>,
    curvature: Vec<f64>,
    speed: Vec<f64>,
    pub lane_left: f64,
    pub lane_right: f64,
    /// Extra longitudinal road slope on this path, added to the plant grade.
    pub grade: f64,
}

/// Path quantities at one arc-length position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub curvature: f64,
    pub lane_left: f64,
    pub lane_right: f64,
    pub speed_ref: f64,
    /// d(v_ref)/ds on the active segment, zero outside the grid.
    pub speed_slope: f64,
}

impl PathGeometry {
    pub fn new(
        name: impl Into<String>,
        arc: Vec<f64>,
        curvature: Vec<f64>,
        speed: Vec<f64>,
        lane_left: f64,
        lane_right: f64,
    ) -> Result<Self, PathError> {
        let path = Self {
            name: name.into(),
            arc,
            curvature,
            speed,
            lane_left,
            lane_right,
            grade: 0.0,
        };
        path.validate()?;
        Ok(path)
    }

    pub fn with_grade(mut self, grade: f64) -> Self {
        self.grade = grade;
        self
    }

    fn validate(&self) -> Result<(), PathError> {
        let n = self.arc.len();
        if n < 2 {
            return Err(PathError::TooShort(n));
        }
        if self.curvature.len() != n || self.speed.len() != n {
            return Err(PathError::LengthMismatch {
                arc: n,
                curvature: self.curvature.len(),
                speed: self.speed.len(),
            });
        }
        if self.arc[0] != 0.0 {
            return Err(PathError::NonZeroStart(self.arc[0]));
        }
        if let Some(i) = self.arc.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(PathError::NotIncreasing(i + 1));
        }
        if self.curvature.iter().any(|k| !k.is_finite()) {
            return Err(PathError::NonFinite("curvature"));
        }
        if self.speed.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(PathError::NegativeSpeed);
        }
        if self.speed[n - 1] != 0.0 {
            return Err(PathError::TerminalSpeed(self.speed[n - 1]));
        }
        if !(self.lane_left < self.lane_right) || self.lane_left > 0.0 || self.lane_right < 0.0 {
            return Err(PathError::Tube {
                left: self.lane_left,
                right: self.lane_right,
            });
        }
        if !self.grade.is_finite() {
            return Err(PathError::NonFinite("grade"));
        }
        Ok(())
    }

    pub fn total_length(&self) -> f64 {
        self.arc[self.arc.len() - 1]
    }

    pub fn arc_samples(&self) -> &[f64] {
        &self.arc
    }

    pub fn curvature_samples(&self) -> &[f64] {
        &self.curvature
    }

    pub fn speed_samples(&self) -> &[f64] {
        &self.speed
    }

    /// Largest absolute lateral bound, used by the divergence detector.
    pub fn tube_half_width(&self) -> f64 {
        self.lane_left.abs().max(self.lane_right)
    }

    /// Piecewise-linear lookup at `s`, clamped to `[0, s_max]`.
    pub fn eval(&self, s: f64) -> PathPoint {
        let s_max = self.total_length();
        let s = if s.is_nan() { 0.0 } else { s.clamp(0.0, s_max) };
        // index of the segment [arc[i], arc[i+1]] containing s
        let upper = self.arc.partition_point(|&a| a <= s);
        let i = upper.saturating_sub(1).min(self.arc.len() - 2);
        let (s0, s1) = (self.arc[i], self.arc[i + 1]);
        let t = (s - s0) / (s1 - s0);
        let lerp = |v: &[f64]| v[i] + t * (v[i + 1] - v[i]);
        PathPoint {
            curvature: lerp(&self.curvature),
            lane_left: self.lane_left,
            lane_right: self.lane_right,
            speed_ref: lerp(&self.speed),
            speed_slope: (self.speed[i + 1] - self.speed[i]) / (s1 - s0),
        }
    }

    /// Parses the `s,kappa,v_ref` CSV format with `w_l=`, `w_r=` (and optional
    /// `grade=`) metadata lines.
    pub fn from_csv_str(name: &str, text: &str) -> Result<Self, PathError> {
        let mut lane_left = None;
        let mut lane_right = None;
        let mut grade = 0.0;
        let mut header_seen = false;
        let (mut arc, mut curvature, mut speed) = (Vec::new(), Vec::new(), Vec::new());

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((key, value)) = line.split_once('=') {
                let value: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| PathError::Parse { line: lineno + 1, msg: format!("bad value for {key}") })?;
                match key.trim() {
                    "w_l" => lane_left = Some(value),
                    "w_r" => lane_right = Some(value),
                    "grade" => grade = value,
                    other => {
                        return Err(PathError::Parse {
                            line: lineno + 1,
                            msg: format!("unknown metadata key `{other}`"),
                        })
                    }
                }
                continue;
            }
            if !header_seen {
                let cols: Vec<&str> = line.split(',').map(str::trim).collect();
                if cols != ["s", "kappa", "v_ref"] {
                    return Err(PathError::Parse {
                        line: lineno + 1,
                        msg: "expected header `s,kappa,v_ref`".into(),
                    });
                }
                header_seen = true;
                continue;
            }
            let fields: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            match fields.as_deref() {
                Ok([s, k, v]) => {
                    arc.push(*s);
                    curvature.push(*k);
                    speed.push(*v);
                }
                _ => {
                    return Err(PathError::Parse {
                        line: lineno + 1,
                        msg: "expected three numeric columns".into(),
                    })
                }
            }
        }
        let lane_left = lane_left.ok_or(PathError::MissingMetadata("w_l"))?;
        let lane_right = lane_right.ok_or(PathError::MissingMetadata("w_r"))?;
        Ok(Self::new(name, arc, curvature, speed, lane_left, lane_right)?.with_grade(grade))
    }

    pub fn load(file: &Path) -> Result<Self, PathError> {
        let text = std::fs::read_to_string(file).map_err(|e| PathError::Io(file.display().to_string(), e))?;
        let name = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "path".to_string());
        Self::from_csv_str(&name, &text)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "w_l={}", self.lane_left);
        let _ = writeln!(out, "w_r={}", self.lane_right);
        if self.grade != 0.0 {
            let _ = writeln!(out, "grade={}", self.grade);
        }
        out.push_str("s,kappa,v_ref\n");
        for i in 0..self.arc.len() {
            let _ = writeln!(out, "{},{},{}", self.arc[i], self.curvature[i], self.speed[i]);
        }
        out
    }
}

/// Builds a path from a curvature function and a trapezoidal speed profile
/// (launch speed, cruise speed, stop at the end with bounded deceleration).
fn synthesize(
    name: &str,
    length: f64,
    cruise: f64,
    lane: f64,
    curvature: impl Fn(f64) -> f64,
) -> PathGeometry {
    const DS: f64 = 0.5;
    const LAUNCH: f64 = 1.0;
    const ACCEL: f64 = 0.4;
    const DECEL: f64 = 0.35;
    let n = (length / DS).round() as usize;
    let arc: Vec<f64> = (0..=n).map(|i| i as f64 * DS).collect();
    let s_max = arc[n];
    let speed = arc
        .iter()
        .map(|&s| {
            let up = (LAUNCH * LAUNCH + 2.0 * ACCEL * s).sqrt();
            let down = (2.0 * DECEL * (s_max - s)).max(0.0).sqrt();
            up.min(down).min(cruise)
        })
        .collect();
    let kappa = arc.iter().map(|&s| curvature(s)).collect();
    PathGeometry::new(name, arc, kappa, speed, -lane, lane).expect("bundled path is valid")
}

/// Smooth 0→1 ramp over `[a, b]`.
fn ramp(s: f64, a: f64, b: f64) -> f64 {
    let t = ((s - a) / (b - a)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Curvature plateau of height `k` on `[a, b]` with `edge`-long transitions.
fn arc_segment(s: f64, a: f64, b: f64, edge: f64, k: f64) -> f64 {
    k * ramp(s, a, a + edge) * (1.0 - ramp(s, b - edge, b))
}

/// The bundled library. Order matters: the first entry is the training path
/// used when path randomization is off, and the train/validate split takes a
/// prefix of this list.
pub fn bundled_paths() -> Vec<PathGeometry> {
    vec![
        synthesize("dynamic", 150.0, 3.5, 1.5, |s| {
            arc_segment(s, 15.0, 40.0, 5.0, 0.07)
                + arc_segment(s, 55.0, 75.0, 5.0, -0.09)
                + 0.03 * (2.0 * std::f64::consts::PI * s / 30.0).sin() * ramp(s, 80.0, 90.0)
                + arc_segment(s, 110.0, 130.0, 4.0, 0.06)
        }),
        synthesize("straight", 120.0, 3.0, 1.5, |_| 0.0),
        synthesize("constant_radius", 110.0, 3.0, 1.5, |s| arc_segment(s, 10.0, 100.0, 6.0, 0.05)),
        synthesize("s_curve", 120.0, 3.0, 1.5, |s| {
            arc_segment(s, 15.0, 50.0, 6.0, 0.06) + arc_segment(s, 55.0, 90.0, 6.0, -0.06)
        }),
        synthesize("uphill", 110.0, 3.0, 1.5, |s| arc_segment(s, 30.0, 70.0, 8.0, 0.03)).with_grade(0.04),
        synthesize("sinusoidal", 120.0, 3.0, 1.5, |s| {
            0.05 * (2.0 * std::f64::consts::PI * s / 40.0).sin() * ramp(s, 5.0, 15.0)
        }),
        synthesize("sharp_turn", 90.0, 2.5, 1.5, |s| arc_segment(s, 40.0, 52.0, 2.0, 0.15)),
        synthesize("chicane", 110.0, 3.0, 1.5, |s| {
            arc_segment(s, 30.0, 45.0, 3.0, 0.1) + arc_segment(s, 50.0, 65.0, 3.0, -0.1)
        }),
    ]
}
