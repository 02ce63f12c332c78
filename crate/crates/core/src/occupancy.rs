//! Bird's-eye-view occupancy grids, the spatio-temporal planner input and
//! obstacle extraction.
//!
//! Grids live in the ego frame (x forward, y left). Rows run from the far
//! front edge backwards and columns from the left edge rightwards, so cell
//! `(r, c)` covers `x ∈ [ox - (r+1)·res, ox - r·res]` and
//! `y ∈ [oy - (c+1)·res, oy - c·res]` where `(ox, oy)` is the front-left
//! corner stored in [`GridSpec::origin`].

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::GlobalPath;

/// Number of occupancy frames in a planner input.
pub const HISTORY_LEN: usize = 5;
/// Occupancy frames plus the rasterized path.
pub const STACK_CHANNELS: usize = HISTORY_LEN + 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    /// Meters per cell.
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    /// Front-left corner of cell (0, 0) in the ego frame.
    pub origin: [f64; 2],
}

impl Default for GridSpec {
    /// 64×64 cells at 0.5 m: 24 m ahead, 8 m behind, ±16 m lateral.
    fn default() -> Self {
        Self {
            resolution: 0.5,
            width: 64,
            height: 64,
            origin: [24.0, 16.0],
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0) || !self.resolution.is_finite() {
            return Err(Error::invalid(format!("grid resolution must be positive, got {}", self.resolution)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("grid dimensions must be non-zero"));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    /// Continuous (row, col) coordinates of an ego-frame point.
    #[inline]
    pub fn to_grid_coords(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (self.origin[0] - p[0]) / self.resolution,
            (self.origin[1] - p[1]) / self.resolution,
        ]
    }

    /// Cell containing an ego-frame point, if inside the grid.
    #[inline]
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let [a, b] = self.to_grid_coords(p);
        let (r, c) = (a.floor(), b.floor());
        if r >= 0.0 && c >= 0.0 && (r as usize) < self.height && (c as usize) < self.width {
            Some((r as usize, c as usize))
        } else {
            None
        }
    }

    #[inline]
    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.origin[0] - (row as f64 + 0.5) * self.resolution,
            self.origin[1] - (col as f64 + 0.5) * self.resolution,
        ]
    }

    /// Radius of the circle circumscribing one cell.
    pub fn cell_radius(&self) -> f64 {
        self.resolution * std::f64::consts::SQRT_2 / 2.0
    }
}

/// Binary occupancy, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    spec: GridSpec,
    cells: Vec<u8>,
}

impl OccupancyGrid {
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            cells: vec![0; spec.cells()],
            spec,
        }
    }

    pub fn from_cells(spec: GridSpec, cells: Vec<u8>) -> Result<Self> {
        spec.validate()?;
        if cells.len() != spec.cells() {
            return Err(Error::invalid(format!(
                "expected {} cells, got {}",
                spec.cells(),
                cells.len()
            )));
        }
        if cells.iter().any(|&c| c > 1) {
            return Err(Error::invalid("occupancy values must be 0 or 1"));
        }
        Ok(Self { spec, cells })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.spec.width + col] != 0
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, occupied: bool) {
        self.cells[row * self.spec.width + col] = occupied as u8;
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    pub fn iter_occupied(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.spec.width;
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .map(move |(i, _)| (i / w, i % w))
    }

    /// `OGRID v1` text encoding.
    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut out = String::with_capacity(s.cells() + s.height + 64);
        let _ = writeln!(
            out,
            "OGRID v1 {} {} {} {} {}",
            s.height, s.width, s.resolution, s.origin[0], s.origin[1]
        );
        for row in self.cells.chunks(s.width) {
            out.extend(row.iter().map(|&c| if c != 0 { '1' } else { '0' }));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut offset = 0u64;
        let mut lines = text.split_inclusive('\n');
        let header = lines.next().ok_or_else(|| Error::format(0, "empty grid file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 7 || fields[0] != "OGRID" {
            return Err(Error::format(0, "missing `OGRID` header"));
        }
        if fields[1] != "v1" {
            return Err(Error::format(6, format!("unsupported grid version `{}`", fields[1])));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| Error::format(0, format!("bad header field `{}`", fields[i])))
        };
        let height: usize = fields[2]
            .parse()
            .map_err(|_| Error::format(0, "bad grid height"))?;
        let width: usize = fields[3]
            .parse()
            .map_err(|_| Error::format(0, "bad grid width"))?;
        let spec = GridSpec {
            resolution: num(4)?,
            width,
            height,
            origin: [num(5)?, num(6)?],
        };
        spec.validate().map_err(|e| Error::format(0, e.to_string()))?;
        offset += header.len() as u64;
        let mut cells = Vec::with_capacity(spec.cells());
        for row in 0..height {
            let line = lines
                .next()
                .ok_or_else(|| Error::format(offset, format!("missing row {row}")))?;
            let body = line.strip_suffix('\n').unwrap_or(line);
            if body.len() != width {
                return Err(Error::format(
                    offset,
                    format!("row {row} has {} cells, expected {width}", body.len()),
                ));
            }
            for (i, b) in body.bytes().enumerate() {
                match b {
                    b'0' => cells.push(0),
                    b'1' => cells.push(1),
                    _ => {
                        return Err(Error::format(
                            offset + i as u64,
                            format!("invalid cell character {:?}", b as char),
                        ))
                    }
                }
            }
            offset += line.len() as u64;
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::format(offset, "trailing data after grid rows"));
        }
        Ok(Self { spec, cells })
    }
}

/// Five occupancy frames (oldest first) plus the rasterized global path.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStack {
    frames: Vec<OccupancyGrid>,
    path_channel: OccupancyGrid,
}

impl GridStack {
    pub fn frames(&self) -> &[OccupancyGrid] {
        &self.frames
    }

    pub fn path_channel(&self) -> &OccupancyGrid {
        &self.path_channel
    }

    pub fn spec(&self) -> &GridSpec {
        self.path_channel.spec()
    }

    /// Channel-major `6 × Hg × Wg` values in {0, 1}.
    pub fn to_values(&self) -> Vec<f64> {
        self.frames
            .iter()
            .chain(std::iter::once(&self.path_channel))
            .flat_map(|g| g.cells().iter().map(|&c| c as f64))
            .collect()
    }

    /// Inverse of [`GridStack::to_values`]; any non-zero value counts as occupied.
    pub fn from_values(spec: GridSpec, values: &[f64]) -> Result<Self> {
        let n = spec.cells();
        if values.len() != STACK_CHANNELS * n {
            return Err(Error::invalid(format!(
                "stack needs {} values, got {}",
                STACK_CHANNELS * n,
                values.len()
            )));
        }
        let mut grids: Vec<OccupancyGrid> = values
            .chunks(n)
            .map(|ch| OccupancyGrid {
                spec,
                cells: ch.iter().map(|&v| (v != 0.0) as u8).collect(),
            })
            .collect();
        let path_channel = grids.pop().unwrap();
        stack(grids, path_channel)
    }

    /// The same stack with every frame replaced by the newest one.
    pub fn replicate_newest(&self) -> Self {
        let newest = self.frames.last().unwrap().clone();
        Self {
            frames: vec![newest; HISTORY_LEN],
            path_channel: self.path_channel.clone(),
        }
    }
}

/// Assembles a planner input. Requires exactly five frames sharing one spec.
pub fn stack(history: Vec<OccupancyGrid>, path_channel: OccupancyGrid) -> Result<GridStack> {
    if history.len() != HISTORY_LEN {
        return Err(Error::invalid(format!(
            "stack needs {HISTORY_LEN} frames, got {}",
            history.len()
        )));
    }
    let spec = *path_channel.spec();
    if let Some(i) = history.iter().position(|g| *g.spec() != spec) {
        return Err(Error::invalid(format!("frame {i} has a mismatched grid spec")));
    }
    Ok(GridStack {
        frames: history,
        path_channel,
    })
}

/// Front-pads a short history by repeating its oldest frame; keeps only the
/// newest five when more are supplied.
pub fn pad_history(frames: &[OccupancyGrid]) -> Result<Vec<OccupancyGrid>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("history must contain at least one frame"))?;
    let tail = &frames[frames.len().saturating_sub(HISTORY_LEN)..];
    let mut out = Vec::with_capacity(HISTORY_LEN);
    for _ in tail.len()..HISTORY_LEN {
        out.push(first.clone());
    }
    out.extend(tail.iter().cloned());
    Ok(out)
}

/// A 3-D point with its road/not-road flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub p: [f64; 3],
    pub road: bool,
}

/// Marks every cell containing at least one non-road point.
pub fn downproject(points: &[LabeledPoint], spec: &GridSpec) -> OccupancyGrid {
    let mut grid = OccupancyGrid::empty(*spec);
    for pt in points.iter().filter(|p| !p.road) {
        if let Some((r, c)) = spec.cell_of([pt.p[0], pt.p[1]]) {
            grid.set(r, c, true);
        }
    }
    grid
}

/// Adds zero-mean Gaussian noise with standard deviation `sigma` to every
/// coordinate. Deterministic for a given seed.
pub fn perturb_points(points: &[LabeledPoint], sigma: f64, seed: u64) -> Result<Vec<LabeledPoint>> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(points.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(points
        .iter()
        .map(|pt| {
            let mut q = *pt;
            for v in &mut q.p {
                *v += normal.sample(&mut rng);
            }
            q
        })
        .collect())
}

/// Marks every cell the polyline passes through (supercover traversal).
/// The path is given in the grid's ego frame.
pub fn rasterize_path(path: &GlobalPath, spec: &GridSpec) -> OccupancyGrid {
    let mut grid = OccupancyGrid::empty(*spec);
    for w in path.waypoints().windows(2) {
        let a = spec.to_grid_coords(w[0]);
        let b = spec.to_grid_coords(w[1]);
        if let Some((a, b)) = clip_segment(a, b, spec.height as f64, spec.width as f64) {
            traverse_cells(a, b, |r, c| {
                if r >= 0 && c >= 0 && (r as usize) < spec.height && (c as usize) < spec.width {
                    grid.set(r as usize, c as usize, true);
                }
            });
        }
    }
    grid
}

/// Liang-Barsky clip of a segment in grid coordinates to `[0,h]×[0,w]`.
fn clip_segment(a: [f64; 2], b: [f64; 2], h: f64, w: f64) -> Option<([f64; 2], [f64; 2])> {
    let d = [b[0] - a[0], b[1] - a[1]];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let checks = [(-d[0], a[0]), (d[0], h - a[0]), (-d[1], a[1]), (d[1], w - a[1])];
    for (p, q) in checks {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return None;
            }
        }
    }
    Some((
        [a[0] + t0 * d[0], a[1] + t0 * d[1]],
        [a[0] + t1 * d[0], a[1] + t1 * d[1]],
    ))
}

/// Grid traversal from `a` to `b` (continuous cell coordinates). When the
/// segment passes exactly through a cell corner both side neighbors are
/// visited as well.
fn traverse_cells(a: [f64; 2], b: [f64; 2], mut visit: impl FnMut(i64, i64)) {
    let mut cell = [a[0].floor() as i64, a[1].floor() as i64];
    let end = [b[0].floor() as i64, b[1].floor() as i64];
    let d = [b[0] - a[0], b[1] - a[1]];
    let mut step = [0i64; 2];
    let mut t_max = [f64::INFINITY; 2];
    let mut t_delta = [f64::INFINITY; 2];
    for k in 0..2 {
        if d[k] > 0.0 {
            step[k] = 1;
            t_max[k] = ((cell[k] + 1) as f64 - a[k]) / d[k];
            t_delta[k] = 1.0 / d[k];
        } else if d[k] < 0.0 {
            step[k] = -1;
            t_max[k] = (a[k] - cell[k] as f64) / -d[k];
            t_delta[k] = -1.0 / d[k];
        }
    }
    visit(cell[0], cell[1]);
    let max_steps = (end[0] - cell[0]).abs() + (end[1] - cell[1]).abs() + 2;
    let mut n = 0;
    while cell != end && n < max_steps {
        n += 1;
        let t = t_max[0].min(t_max[1]);
        if t > 1.0 {
            break;
        }
        if (t_max[0] - t_max[1]).abs() < 1e-12 {
            visit(cell[0] + step[0], cell[1]);
            visit(cell[0], cell[1] + step[1]);
            cell[0] += step[0];
            cell[1] += step[1];
            t_max[0] += t_delta[0];
            t_max[1] += t_delta[1];
            n += 1;
        } else if t_max[0] < t_max[1] {
            cell[0] += step[0];
            t_max[0] += t_delta[0];
        } else {
            cell[1] += step[1];
            t_max[1] += t_delta[1];
        }
        visit(cell[0], cell[1]);
    }
}

/// One obstacle disc, optionally moving at constant velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
    /// Zero for static obstacles.
    pub velocity: [f64; 2],
}

impl Obstacle {
    pub fn fixed(center: [f64; 2], radius: f64) -> Self {
        Self {
            center,
            radius,
            velocity: [0.0, 0.0],
        }
    }

    pub fn is_static(&self) -> bool {
        self.velocity == [0.0, 0.0]
    }

    /// Center after `t` seconds of constant-velocity motion.
    #[inline]
    pub fn center_at(&self, t: f64) -> [f64; 2] {
        [
            self.center[0] + t * self.velocity[0],
            self.center[1] + t * self.velocity[1],
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSet {
    pub circles: Vec<Obstacle>,
}

impl ObstacleSet {
    pub fn new(circles: Vec<Obstacle>) -> Result<Self> {
        if let Some(o) = circles.iter().find(|o| !(o.radius > 0.0)) {
            return Err(Error::invalid(format!("obstacle radius must be positive: {o:?}")));
        }
        Ok(Self { circles })
    }

    pub fn len(&self) -> usize {
        self.circles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.circles.is_empty()
    }
}

/// One static circumscribing disc per occupied cell, in the grid's ego frame.
pub fn grid_to_obstacles(grid: &OccupancyGrid) -> ObstacleSet {
    let spec = grid.spec();
    let radius = spec.cell_radius();
    ObstacleSet {
        circles: grid
            .iter_occupied()
            .map(|(r, c)| Obstacle::fixed(spec.cell_center(r, c), radius))
            .collect(),
    }
}
