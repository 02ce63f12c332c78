//! Point-cloud road segmentation: synthetic labeled scenes, a RANSAC ground
//! plane baseline and a positional-encoding MLP classifier.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::fmt_sig9;
use crate::nn::{Dense, LionState, TrainConfig};
use crate::predictor::positional_encode_into;
use crate::weights;

pub const SEG_MAGIC: &[u8; 8] = b"NSMPCSEG";

/// Points per inference chunk.
const CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    /// `true` marks road points.
    pub labels: Option<Vec<bool>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, labels: Option<Vec<bool>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(Error::invalid(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.len()
                )));
            }
        }
        Ok(Self { points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps every point whose index passes `keep`.
    pub fn subset(&self, keep: impl Fn(usize) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        Self {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Random subset holding `fraction` of the points.
    pub fn downsample(&self, fraction: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<bool> = (0..self.len()).map(|_| rng.random_bool(fraction.clamp(0.0, 1.0))).collect();
        self.subset(|i| mask[i])
    }

    /// `x,y,z[,label]` lines, label as 0/1.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (i, p) in self.points.iter().enumerate() {
            let _ = write!(out, "{},{},{}", fmt_sig9(p[0]), fmt_sig9(p[1]), fmt_sig9(p[2]));
            if let Some(l) = &self.labels {
                let _ = write!(out, ",{}", l[i] as u8);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        let mut labeled = None;
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let start = offset;
            offset += line.len() as u64;
            let body = line.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = body.split(',').map(str::trim).collect();
            let has_label = match fields.len() {
                3 => false,
                4 => true,
                n => return Err(Error::format(start, format!("expected 3 or 4 fields, found {n}"))),
            };
            if *labeled.get_or_insert(has_label) != has_label {
                return Err(Error::format(start, "mixed labeled and unlabeled rows"));
            }
            let mut p = [0.0; 3];
            for (k, v) in p.iter_mut().enumerate() {
                *v = fields[k]
                    .parse()
                    .map_err(|_| Error::format(start, format!("bad coordinate `{}`", fields[k])))?;
            }
            points.push(p);
            if has_label {
                labels.push(match fields[3] {
                    "0" => false,
                    "1" => true,
                    other => return Err(Error::format(start, format!("bad label `{other}`"))),
                });
            }
        }
        Ok(Self {
            points,
            labels: (labeled == Some(true)).then_some(labels),
        })
    }
}

/// An axis-aligned box standing on the road surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    /// Footprint center (x, y), meters.
    pub center: [f64; 2],
    /// Extent along x, y, z, meters.
    pub size: [f64; 3],
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub road_length: f64,
    pub road_width: f64,
    /// Uphill grade along x, degrees.
    pub slope_deg: f64,
    pub road_points: usize,
    pub boxes: Vec<BoxSpec>,
    pub noise_std: f64,
}

impl Default for SceneSpec {
    /// A 40 m × 12 m road on a 2° grade with three obstacles.
    fn default() -> Self {
        Self {
            road_length: 40.0,
            road_width: 12.0,
            slope_deg: 2.0,
            road_points: 8000,
            boxes: vec![
                BoxSpec { center: [8.0, -2.0], size: [4.0, 2.0, 1.5], points: 700 },
                BoxSpec { center: [20.0, 3.0], size: [1.0, 1.0, 1.8], points: 500 },
                BoxSpec { center: [31.0, -1.0], size: [2.5, 2.5, 1.2], points: 700 },
            ],
            noise_std: 0.02,
        }
    }
}

impl SceneSpec {
    /// Road height at `(x, y)`.
    pub fn ground_z(&self, x: f64) -> f64 {
        x * self.slope_deg.to_radians().tan()
    }

    /// Same layout with every point count multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |n: usize| ((n as f64 * factor).round() as usize).max(1);
        Self {
            road_points: scale(self.road_points),
            boxes: self.boxes.iter().map(|b| BoxSpec { points: scale(b.points), ..*b }).collect(),
            ..self.clone()
        }
    }

    fn inside_footprint(&self, x: f64, y: f64) -> bool {
        self.boxes.iter().any(|b| {
            (x - b.center[0]).abs() <= b.size[0] / 2.0 && (y - b.center[1]).abs() <= b.size[1] / 2.0
        })
    }

    /// Distance from `p` to the closest box surface (sides and top).
    pub fn distance_to_boxes(&self, p: [f64; 3]) -> f64 {
        self.boxes
            .iter()
            .map(|b| {
                let base = self.ground_z(b.center[0]);
                let lo = [b.center[0] - b.size[0] / 2.0, b.center[1] - b.size[1] / 2.0, base];
                let hi = [b.center[0] + b.size[0] / 2.0, b.center[1] + b.size[1] / 2.0, base + b.size[2]];
                box_surface_distance(p, lo, hi)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn box_surface_distance(p: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> f64 {
    let mut outside = 0.0;
    let mut inside_gap = f64::INFINITY;
    for k in 0..3 {
        let d = (lo[k] - p[k]).max(p[k] - hi[k]);
        if d > 0.0 {
            outside += d * d;
        }
        inside_gap = inside_gap.min((p[k] - lo[k]).min(hi[k] - p[k]));
    }
    if outside > 0.0 {
        outside.sqrt()
    } else {
        inside_gap.max(0.0)
    }
}

/// Samples road points on the (sloped) road rectangle outside box footprints
/// and obstacle points on box sides and tops; labels are exact.
pub fn synth_scene(seed: u64, spec: &SceneSpec) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).expect("finite std");
    let jitter = |rng: &mut ChaCha8Rng, p: [f64; 3]| -> [f64; 3] {
        if spec.noise_std > 0.0 {
            [p[0] + noise.sample(rng), p[1] + noise.sample(rng), p[2] + noise.sample(rng)]
        } else {
            p
        }
    };
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut placed = 0;
    while placed < spec.road_points {
        let x = rng.random_range(0.0..spec.road_length);
        let y = rng.random_range(-spec.road_width / 2.0..spec.road_width / 2.0);
        if spec.inside_footprint(x, y) {
            continue;
        }
        points.push(jitter(&mut rng, [x, y, spec.ground_z(x)]));
        labels.push(true);
        placed += 1;
    }
    for b in &spec.boxes {
        let [sx, sy, sz] = b.size;
        let base = spec.ground_z(b.center[0]);
        let (x0, y0) = (b.center[0] - sx / 2.0, b.center[1] - sy / 2.0);
        // Faces: top, -x, +x, -y, +y; chosen proportionally to area.
        let areas = [sx * sy, sy * sz, sy * sz, sx * sz, sx * sz];
        let total: f64 = areas.iter().sum();
        for _ in 0..b.points {
            let mut pick = rng.random_range(0.0..total);
            let mut face = 0;
            while face < 4 && pick >= areas[face] {
                pick -= areas[face];
                face += 1;
            }
            let (u, v) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let p = match face {
                0 => [x0 + u * sx, y0 + v * sy, base + sz],
                1 => [x0, y0 + u * sy, base + v * sz],
                2 => [x0 + sx, y0 + u * sy, base + v * sz],
                3 => [x0 + u * sx, y0, base + v * sz],
                _ => [x0 + u * sx, y0 + sy, base + v * sz],
            };
            points.push(jitter(&mut rng, p));
            labels.push(false);
        }
    }
    PointCloud {
        points,
        labels: Some(labels),
    }
}

/// Plane `normal · p = offset` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl Plane {
    /// Plane through three points, or `None` when they are collinear.
    pub fn through(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> Option<Self> {
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let mut n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
        let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        let scale = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt() * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(norm > 1e-12 * scale.max(1e-300)) {
            return None;
        }
        let flip = if n[2] < 0.0 || (n[2] == 0.0 && (n[1] < 0.0 || (n[1] == 0.0 && n[0] < 0.0))) { -1.0 } else { 1.0 };
        for x in &mut n {
            *x *= flip / norm;
        }
        // Renormalize once more so the unit-length invariant holds tightly.
        let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        for x in &mut n {
            *x /= norm;
        }
        Some(Self {
            normal: n,
            offset: n[0] * a[0] + n[1] * a[1] + n[2] * a[2],
        })
    }

    pub fn distance(&self, p: [f64; 3]) -> f64 {
        (self.normal[0] * p[0] + self.normal[1] * p[1] + self.normal[2] * p[2] - self.offset).abs()
    }
}

/// Best-of-`iterations` three-point plane by inlier count; ties keep the
/// earlier hypothesis.
pub fn ransac_plane(cloud: &PointCloud, iterations: usize, threshold: f64, seed: u64) -> Result<(Plane, Vec<bool>)> {
    let n = cloud.len();
    if n < 3 {
        return Err(Error::invalid("RANSAC needs at least three points"));
    }
    if iterations == 0 {
        return Err(Error::invalid("RANSAC needs at least one iteration"));
    }
    let pts = &cloud.points;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Plane, usize)> = None;
    for _ in 0..iterations {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.random_range(0..n - 2);
        for lo in [i.min(j), i.max(j)] {
            if k >= lo {
                k += 1;
            }
        }
        let Some(plane) = Plane::through(pts[i], pts[j], pts[k]) else {
            continue;
        };
        let count = count_inliers(pts, &plane, threshold);
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((plane, count));
        }
    }
    let plane = match best {
        Some((p, _)) => p,
        None => {
            // Every sample was collinear; a valid triple may still exist.
            let a = pts[0];
            let far = (1..n).max_by(|&x, &y| dist2(pts[x], a).total_cmp(&dist2(pts[y], a))).unwrap();
            let plane = (1..n).find_map(|c| Plane::through(a, pts[far], pts[c]));
            plane.ok_or_else(|| Error::invalid("degenerate cloud: all points are collinear"))?
        }
    };
    let mask = pts.iter().map(|&p| plane.distance(p) <= threshold).collect();
    Ok((plane, mask))
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn count_inliers(pts: &[[f64; 3]], plane: &Plane, threshold: f64) -> usize {
    let [a, b, c] = plane.normal;
    let o = plane.offset;
    pts.iter()
        .map(|p| ((a * p[0] + b * p[1] + c * p[2] - o).abs() <= threshold) as usize)
        .sum()
}

/// Axis-aligned normalization box mapping coordinates to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl NormBounds {
    /// Bounding box of `points`, padded by 5% per axis.
    pub fn of(points: &[[f64; 3]]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("cannot bound an empty cloud"));
        }
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        for k in 0..3 {
            let pad = 0.05 * (max[k] - min[k]).max(1e-3);
            min[k] -= pad;
            max[k] += pad;
        }
        Ok(Self { min, max })
    }

    pub fn normalize(&self, p: [f64; 3]) -> [f64; 3] {
        let mut q = [0.0; 3];
        for k in 0..3 {
            q[k] = 2.0 * (p[k] - self.min[k]) / (self.max[k] - self.min[k]) - 1.0;
        }
        q
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SegHeader {
    kind: String,
    version: u32,
    frequencies: usize,
    widths: [usize; 2],
    bounds: NormBounds,
    param_count: usize,
}

/// Positional encoding followed by a 64-64-1 MLP with a sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegNet {
    frequencies: usize,
    widths: [usize; 2],
    bounds: NormBounds,
    layers: [Dense; 3],
    params: Vec<f64>,
    offsets: Vec<usize>,
}

struct SegCache {
    input: Vec<f64>,
    hidden: [Vec<f64>; 2],
    logits: Vec<f64>,
}

impl RoadSegNet {
    pub fn zeroed(frequencies: usize, bounds: NormBounds) -> Result<Self> {
        if frequencies == 0 {
            return Err(Error::invalid("at least one encoding frequency is required"));
        }
        let widths = [64, 64];
        let layers = [
            Dense { inputs: 2 * frequencies * 3, outputs: widths[0] },
            Dense { inputs: widths[0], outputs: widths[1] },
            Dense { inputs: widths[1], outputs: 1 },
        ];
        let mut offsets = vec![0];
        for d in &layers {
            let last = *offsets.last().unwrap();
            offsets.push(last + d.inputs * d.outputs);
            offsets.push(last + d.param_len());
        }
        let n = *offsets.last().unwrap();
        Ok(Self {
            frequencies,
            widths,
            bounds,
            layers,
            params: vec![0.0; n],
            offsets,
        })
    }

    pub fn new(frequencies: usize, bounds: NormBounds, seed: u64) -> Result<Self> {
        let mut net = Self::zeroed(frequencies, bounds)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, d) in net.layers.iter().enumerate() {
            let bound = (6.0 / d.inputs as f64).sqrt();
            for w in &mut net.params[net.offsets[2 * i]..net.offsets[2 * i + 1]] {
                *w = rng.random_range(-bound..bound) as f32 as f64;
            }
        }
        Ok(net)
    }

    pub fn frequencies(&self) -> usize {
        self.frequencies
    }

    pub fn bounds(&self) -> &NormBounds {
        &self.bounds
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn block(&self, i: usize) -> &[f64] {
        &self.params[self.offsets[i]..self.offsets[i + 1]]
    }

    fn encode(&self, points: &[[f64; 3]]) -> Vec<f64> {
        let mut out = Vec::with_capacity(points.len() * self.layers[0].inputs);
        for &p in points {
            positional_encode_into(&self.bounds.normalize(p), self.frequencies, &mut out);
        }
        out
    }

    fn forward_cached(&self, points: &[[f64; 3]]) -> SegCache {
        let batch = points.len();
        let input = self.encode(points);
        let mut hidden: [Vec<f64>; 2] = Default::default();
        for i in 0..2 {
            let d = self.layers[i];
            let x = if i == 0 { &input } else { &hidden[0] };
            let mut y = vec![0.0; batch * d.outputs];
            d.forward(self.block(2 * i), self.block(2 * i + 1), x, batch, &mut y);
            for v in &mut y {
                *v = v.max(0.0);
            }
            hidden[i] = y;
        }
        let mut logits = vec![0.0; batch];
        self.layers[2].forward(self.block(4), self.block(5), &hidden[1], batch, &mut logits);
        SegCache { input, hidden, logits }
    }

    /// Road probabilities in input order.
    pub fn forward(&self, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("point coordinates must be finite"));
        }
        Ok(points
            .par_chunks(CHUNK)
            .flat_map_iter(|chunk| self.forward_cached(chunk).logits.into_iter().map(sigmoid))
            .collect())
    }

    /// Mean binary cross-entropy over `points` and its parameter gradient.
    fn loss_and_grad(&self, points: &[[f64; 3]], labels: &[bool]) -> (f64, Vec<f64>) {
        let batch = points.len();
        let cache = self.forward_cached(points);
        let mut loss = 0.0;
        let mut dz = vec![0.0; batch];
        for ((g, &z), &y) in dz.iter_mut().zip(&cache.logits).zip(labels) {
            let t = y as u8 as f64;
            loss += softplus(z) - t * z;
            *g = (sigmoid(z) - t) / batch as f64;
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut dy = dz;
        for i in (0..3).rev() {
            let d = self.layers[i];
            let x = if i == 0 { &cache.input } else { &cache.hidden[i - 1] };
            let (a, m, b) = (self.offsets[2 * i], self.offsets[2 * i + 1], self.offsets[2 * i + 2]);
            let (gw, gb) = grads[a..b].split_at_mut(m - a);
            if i == 0 {
                d.backward(self.block(0), x, &dy, batch, gw, gb, None);
            } else {
                let mut dx = vec![0.0; batch * d.inputs];
                d.backward(self.block(2 * i), x, &dy, batch, gw, gb, Some(&mut dx));
                for (g, &h) in dx.iter_mut().zip(x.iter()) {
                    if h <= 0.0 {
                        *g = 0.0;
                    }
                }
                dy = dx;
            }
        }
        (loss / batch as f64, grads)
    }

    /// Mean binary cross-entropy over a labeled cloud.
    pub fn bce(&self, cloud: &PointCloud) -> Result<f64> {
        let labels = cloud.labels.as_ref().ok_or_else(|| Error::invalid("cloud has no labels"))?;
        let p = self.forward(&cloud.points)?;
        let eps = 1e-12;
        let total: f64 = p
            .iter()
            .zip(labels)
            .map(|(&q, &y)| if y { -(q.max(eps)).ln() } else { -((1.0 - q).max(eps)).ln() })
            .sum();
        Ok(total / p.len().max(1) as f64)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = SegHeader {
            kind: "roadseg_mlp".into(),
            version: 1,
            frequencies: self.frequencies,
            widths: self.widths,
            bounds: self.bounds,
            param_count: self.params.len(),
        };
        weights::encode(SEG_MAGIC, &header, &self.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, params): (SegHeader, _) = weights::decode(SEG_MAGIC, bytes, |h: &SegHeader| h.param_count)?;
        let mut net = Self::zeroed(h.frequencies, h.bounds).map_err(|e| Error::format(12, e.to_string()))?;
        if h.widths != net.widths || h.param_count != net.params.len() {
            return Err(Error::format(12, "header does not describe a supported architecture"));
        }
        net.params = params;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Per-point road probabilities; threshold at 0.5 for a hard label.
pub fn roadseg_forward(net: &RoadSegNet, cloud: &PointCloud) -> Result<Vec<f64>> {
    net.forward(&cloud.points)
}

/// Fraction of points whose thresholded prediction matches the label.
pub fn accuracy(probabilities: &[f64], labels: &[bool]) -> f64 {
    let hits = probabilities.iter().zip(labels).filter(|(&p, &y)| (p > 0.5) == y).count();
    hits as f64 / labels.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegTraining {
    pub net: RoadSegNet,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub curve: Vec<SegEpoch>,
}

/// Trains on the union of `clouds` with a 90/10 split; losses are mean
/// binary cross-entropy.
pub fn train_roadseg(clouds: &[PointCloud], frequencies: usize, cfg: &TrainConfig) -> Result<SegTraining> {
    cfg.validate()?;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for c in clouds {
        let l = c.labels.as_ref().ok_or_else(|| Error::invalid("training clouds must be labeled"))?;
        points.extend_from_slice(&c.points);
        labels.extend_from_slice(l);
    }
    if !labels.iter().any(|&l| l) || !labels.iter().any(|&l| !l) {
        return Err(Error::invalid("training data must contain both road and non-road points"));
    }
    let bounds = NormBounds::of(&points)?;
    let mut net = RoadSegNet::new(frequencies, bounds, cfg.rng_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x5EED);
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut rng);
    let n_val = points.len() / 10;
    let (val_idx, train_idx) = order.split_at(n_val);
    let gather = |idx: &[usize]| -> PointCloud {
        PointCloud {
            points: idx.iter().map(|&i| points[i]).collect(),
            labels: Some(idx.iter().map(|&i| labels[i]).collect()),
        }
    };
    let train = gather(train_idx);
    let val = gather(val_idx);
    let mut train_idx = train_idx.to_vec();
    let initial_loss = net.bce(&train)?;
    let mut state = LionState::new(net.param_count());
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut bp = Vec::with_capacity(cfg.batch_size);
    let mut bl = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in train_idx.chunks(cfg.batch_size) {
            bp.clear();
            bl.clear();
            bp.extend(chunk.iter().map(|&i| points[i]));
            bl.extend(chunk.iter().map(|&i| labels[i]));
            let (loss, grads) = net.loss_and_grad(&bp, &bl);
            state.step(&mut net.params, &grads, cfg);
            sum += loss;
            batches += 1;
        }
        curve.push(SegEpoch {
            epoch,
            train_loss: sum / batches.max(1) as f64,
            val_loss: if val.is_empty() { 0.0 } else { net.bce(&val)? },
        });
    }
    let final_loss = net.bce(&train)?;
    Ok(SegTraining {
        net,
        initial_loss,
        final_loss,
        curve,
    })
}
