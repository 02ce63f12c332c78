//! Vehicle state, unicycle rollout, global paths and the center-line frame.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this angular rate a step is integrated as a straight line.
pub const OMEGA_EPS: f64 = 1e-6;

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// Expresses a world point in this pose's body frame (x forward, y left).
    pub fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Inverse of [`VehicleState::to_local`].
    pub fn to_world(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }
}

/// Linear and angular velocity command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub v: f64,
    pub omega: f64,
}

impl Control {
    pub const ZERO: Control = Control { v: 0.0, omega: 0.0 };

    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }
}

/// Box constraints on the control channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlBounds {
    pub v_min: f64,
    pub v_max: f64,
    pub omega_max: f64,
}

impl Default for ControlBounds {
    fn default() -> Self {
        Self {
            v_min: 0.0,
            v_max: 8.0,
            omega_max: 1.0,
        }
    }
}

impl ControlBounds {
    pub fn clamp(&self, u: Control) -> Control {
        Control {
            v: u.v.clamp(self.v_min, self.v_max),
            omega: u.omega.clamp(-self.omega_max, self.omega_max),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_min <= self.v_max) || !(self.omega_max >= 0.0) {
            return Err(Error::Config(format!("inconsistent control bounds {self:?}")));
        }
        Ok(())
    }
}

/// A finite-horizon control plan with a fixed step length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSequence {
    pub controls: Vec<Control>,
    pub dt: f64,
}

impl ControlSequence {
    pub fn new(controls: Vec<Control>, dt: f64) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::invalid("control sequence must have at least one step"));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        Ok(Self { controls, dt })
    }

    pub fn constant(u: Control, horizon: usize, dt: f64) -> Self {
        Self {
            controls: vec![u; horizon],
            dt,
        }
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn clamped(mut self, bounds: &ControlBounds) -> Self {
        for u in &mut self.controls {
            *u = bounds.clamp(*u);
        }
        self
    }

    /// Interleaved `[v0, ω0, v1, ω1, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.controls.iter().flat_map(|u| [u.v, u.omega]).collect()
    }

    pub fn from_flat(flat: &[f64], dt: f64) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::invalid("flat control vector must have even length"));
        }
        let controls = flat
            .chunks_exact(2)
            .map(|c| Control::new(c[0], c[1]))
            .collect();
        Self::new(controls, dt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<VehicleState>,
}

impl Trajectory {
    pub fn last(&self) -> VehicleState {
        *self.states.last().expect("trajectory is never empty")
    }
}

/// One exact-arc unicycle step.
#[inline]
pub fn unicycle_step(s: VehicleState, u: Control, dt: f64) -> VehicleState {
    let (sin0, cos0) = s.theta.sin_cos();
    if u.omega.abs() > OMEGA_EPS {
        let th1 = s.theta + u.omega * dt;
        let (sin1, cos1) = th1.sin_cos();
        let r = u.v / u.omega;
        VehicleState {
            x: s.x + r * (sin1 - sin0),
            y: s.y - r * (cos1 - cos0),
            theta: wrap_angle(th1),
        }
    } else {
        VehicleState {
            x: s.x + u.v * dt * cos0,
            y: s.y + u.v * dt * sin0,
            theta: wrap_angle(s.theta + u.omega * dt),
        }
    }
}

/// Rolls a control slice out into `out` (cleared first), returning nothing.
/// Callers are responsible for finiteness; used on the scoring hot path.
pub(crate) fn rollout_into(
    start: VehicleState,
    controls: &[Control],
    dt: f64,
    out: &mut Vec<VehicleState>,
) {
    out.clear();
    out.reserve(controls.len() + 1);
    let mut s = start;
    out.push(s);
    for &u in controls {
        s = unicycle_step(s, u, dt);
        out.push(s);
    }
}

/// Integrates the unicycle model over the whole sequence; the result holds H+1
/// states starting with `start` itself.
pub fn rollout_unicycle(start: VehicleState, seq: &ControlSequence) -> Result<Trajectory> {
    if !(seq.dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    if let Some((i, u)) = seq
        .controls
        .iter()
        .enumerate()
        .find(|(_, u)| !u.v.is_finite() || !u.omega.is_finite())
    {
        return Err(Error::invalid(format!("non-finite control at step {i}: {u:?}")));
    }
    let mut states = Vec::new();
    rollout_into(start, &seq.controls, seq.dt, &mut states);
    Ok(Trajectory { states })
}

/// Arc length and signed lateral offset relative to a [`GlobalPath`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrenetCoord {
    pub s: f64,
    pub d: f64,
}

/// Closest-point projection onto a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub s: f64,
    pub d: f64,
    pub segment: usize,
    /// Position along the segment in [0, 1].
    pub t: f64,
    pub distance: f64,
}

/// Piecewise-linear reference path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalPath {
    waypoints: Vec<[f64; 2]>,
    cum_arclength: Vec<f64>,
}

impl GlobalPath {
    pub fn new(waypoints: Vec<[f64; 2]>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::invalid("a path needs at least two waypoints"));
        }
        let mut cum = Vec::with_capacity(waypoints.len());
        cum.push(0.0);
        for (i, w) in waypoints.windows(2).enumerate() {
            if !(w[0][0].is_finite() && w[0][1].is_finite() && w[1][0].is_finite() && w[1][1].is_finite()) {
                return Err(Error::invalid(format!("non-finite waypoint near index {i}")));
            }
            let len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            if len <= 0.0 {
                return Err(Error::invalid(format!(
                    "waypoints {i} and {} coincide",
                    i + 1
                )));
            }
            cum.push(cum[i] + len);
        }
        Ok(Self {
            waypoints,
            cum_arclength: cum,
        })
    }

    /// Straight segment from `a` to `b`.
    pub fn straight(a: [f64; 2], b: [f64; 2]) -> Result<Self> {
        Self::new(vec![a, b])
    }

    pub fn waypoints(&self) -> &[[f64; 2]] {
        &self.waypoints
    }

    pub fn cum_arclength(&self) -> &[f64] {
        &self.cum_arclength
    }

    pub fn length(&self) -> f64 {
        *self.cum_arclength.last().unwrap()
    }

    fn segment_dir(&self, i: usize) -> [f64; 2] {
        let a = self.waypoints[i];
        let b = self.waypoints[i + 1];
        let len = self.cum_arclength[i + 1] - self.cum_arclength[i];
        [(b[0] - a[0]) / len, (b[1] - a[1]) / len]
    }

    /// Segment containing arc length `s`; at an interior vertex the later
    /// segment is returned.
    fn segment_at(&self, s: f64) -> usize {
        let n = self.waypoints.len() - 1;
        let idx = self.cum_arclength.partition_point(|&c| c <= s);
        idx.saturating_sub(1).min(n - 1)
    }

    /// Point on the path at arc length `s` (clamped to the path) and the
    /// travel direction there.
    pub fn pose_at(&self, s: f64) -> VehicleState {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let dir = self.segment_dir(i);
        let a = self.waypoints[i];
        let ds = s - self.cum_arclength[i];
        VehicleState::new(a[0] + ds * dir[0], a[1] + ds * dir[1], dir[1].atan2(dir[0]))
    }

    /// Closest point on the polyline; ties go to the smaller arc length.
    pub fn project(&self, p: [f64; 2]) -> Projection {
        let mut best = Projection {
            s: 0.0,
            d: 0.0,
            segment: 0,
            t: 0.0,
            distance: f64::INFINITY,
        };
        for i in 0..self.waypoints.len() - 1 {
            let a = self.waypoints[i];
            let len = self.cum_arclength[i + 1] - self.cum_arclength[i];
            let dir = self.segment_dir(i);
            let rx = p[0] - a[0];
            let ry = p[1] - a[1];
            let along = (rx * dir[0] + ry * dir[1]).clamp(0.0, len);
            let qx = a[0] + along * dir[0];
            let qy = a[1] + along * dir[1];
            let ex = p[0] - qx;
            let ey = p[1] - qy;
            let dist = ex.hypot(ey);
            if dist < best.distance {
                let cross = dir[0] * ey - dir[1] * ex;
                best = Projection {
                    s: self.cum_arclength[i] + along,
                    d: if cross < 0.0 { -dist } else { dist },
                    segment: i,
                    t: along / len,
                    distance: dist,
                };
            }
        }
        best
    }

    /// Serializes as `x,y` lines with 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for w in &self.waypoints {
            let _ = writeln!(out, "{},{}", fmt_sig9(w[0]), fmt_sig9(w[1]));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut pts = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split(',');
            let mut next = || -> Result<f64> {
                it.next()
                    .and_then(|t| t.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::invalid(format!("bad path line {}: `{line}`", lineno + 1)))
            };
            let x = next()?;
            let y = next()?;
            pts.push([x, y]);
        }
        Self::new(pts)
    }
}

/// Formats with 9 significant digits in fixed notation.
pub(crate) fn fmt_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.8}");
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (8 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Projects a world point into center-line coordinates. Points beyond the path
/// ends clamp to the end points.
pub fn to_crf(point: [f64; 2], path: &GlobalPath) -> FrenetCoord {
    let p = path.project(point);
    FrenetCoord { s: p.s, d: p.d }
}

/// Maps center-line coordinates back to the world frame.
pub fn from_crf(f: FrenetCoord, path: &GlobalPath) -> Result<[f64; 2]> {
    let len = path.length();
    if !(f.s >= 0.0 && f.s <= len) || !f.d.is_finite() {
        return Err(Error::invalid(format!(
            "arc length {} outside [0, {len}]",
            f.s
        )));
    }
    let pose = path.pose_at(f.s);
    let (sin, cos) = pose.theta.sin_cos();
    Ok([pose.x - f.d * sin, pose.y + f.d * cos])
}

/// Expresses a world pose in the center-line frame: (s, d, heading relative
/// to the local path direction).
pub fn pose_to_crf(pose: VehicleState, path: &GlobalPath) -> VehicleState {
    let f = to_crf(pose.position(), path);
    let tangent = path.pose_at(f.s).theta;
    VehicleState::new(f.s, f.d, pose.theta - tangent)
}

/// Rotates a world-frame velocity into the local path frame at arc length `s`.
pub fn velocity_to_crf(v: [f64; 2], s: f64, path: &GlobalPath) -> [f64; 2] {
    let (sin, cos) = path.pose_at(s).theta.sin_cos();
    [cos * v[0] + sin * v[1], -sin * v[0] + cos * v[1]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn seq(u: Control, h: usize, dt: f64) -> ControlSequence {
        ControlSequence::constant(u, h, dt)
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        for k in -20..20 {
            let a = wrap_angle(0.37 * k as f64);
            assert!(a > -PI && a <= PI);
        }
    }

    #[test]
    fn straight_line_rollout() {
        let t = rollout_unicycle(VehicleState::new(0.0, 0.0, 0.0), &seq(Control::new(1.0, 0.0), 10, 0.1)).unwrap();
        assert_eq!(t.states.len(), 11);
        let f = t.last();
        assert_abs_diff_eq!(f.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.theta, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_controls_stay_put() {
        let start = VehicleState::new(1.5, -2.0, 0.3);
        let t = rollout_unicycle(start, &seq(Control::ZERO, 30, 0.1)).unwrap();
        assert!(t.states.iter().all(|s| *s == start));
    }

    #[test]
    fn rejects_non_finite_controls() {
        let mut s = seq(Control::new(1.0, 0.0), 5, 0.1);
        s.controls[3].omega = f64::NAN;
        assert!(matches!(
            rollout_unicycle(VehicleState::new(0.0, 0.0, 0.0), &s),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn crf_on_straight_path() {
        let path = GlobalPath::straight([0.0, 0.0], [10.0, 0.0]).unwrap();
        let f = to_crf([3.0, 2.0], &path);
        assert_abs_diff_eq!(f.s, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.d, 2.0, epsilon = 1e-12);
        let f = to_crf([5.0, 0.0], &path);
        assert_eq!((f.s, f.d), (5.0, 0.0));
        let p = from_crf(FrenetCoord { s: 3.0, d: 2.0 }, &path).unwrap();
        assert_abs_diff_eq!(p[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 2.0, epsilon = 1e-12);
        let p = from_crf(FrenetCoord { s: 7.25, d: 0.0 }, &path).unwrap();
        assert_eq!(p, [7.25, 0.0]);
    }

    #[test]
    fn from_crf_rejects_out_of_range() {
        let path = GlobalPath::straight([0.0, 0.0], [10.0, 0.0]).unwrap();
        assert!(from_crf(FrenetCoord { s: 10.5, d: 0.0 }, &path).is_err());
        assert!(from_crf(FrenetCoord { s: -0.1, d: 0.0 }, &path).is_err());
    }

    #[test]
    fn path_validation() {
        assert!(GlobalPath::new(vec![[0.0, 0.0]]).is_err());
        assert!(GlobalPath::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]]).is_err());
        let p = GlobalPath::new(vec![[0.0, 0.0], [3.0, 4.0], [3.0, 5.0]]).unwrap();
        assert_eq!(p.cum_arclength(), &[0.0, 5.0, 6.0]);
    }

    #[test]
    fn path_csv_roundtrip() {
        let p = GlobalPath::new(vec![[0.0, 0.0], [12.345678912, -3.0], [100.5, 1e-3]]).unwrap();
        let text = p.to_csv();
        assert!(text.starts_with("0.00000000,0.00000000\n12.3456789,-3.00000000\n"));
        let q = GlobalPath::from_csv(&text).unwrap();
        assert_eq!(q.waypoints().len(), 3);
        assert_abs_diff_eq!(q.waypoints()[1][0], 12.3456789, epsilon = 1e-12);
        assert_eq!(GlobalPath::from_csv(&q.to_csv()).unwrap(), q);
    }

    #[test]
    fn local_world_inverse() {
        let pose = VehicleState::new(3.0, -1.0, 0.7);
        let p = [5.5, 2.25];
        let q = pose.to_world(pose.to_local(p));
        assert_abs_diff_eq!(p[0], q[0], epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], q[1], epsilon = 1e-12);
    }
}
