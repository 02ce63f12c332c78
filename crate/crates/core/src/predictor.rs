//! Mean-control predictors: a pure-pursuit heuristic, an oracle running the
//! iterative planner, and a small spatio-temporal CNN trained to imitate the
//! oracle.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{unicycle_step, wrap_angle, Control, ControlBounds, ControlSequence, GlobalPath, VehicleState};
use crate::nn::{gemm, mse_with_grad, sgemm_rm, ConvGeometry, Dense, LionState, TrainConfig};
use crate::occupancy::{GridStack, STACK_CHANNELS};
use crate::sampler::{plan_iterative, PlanMode, PlanProblem, SamplerConfig};
use crate::weights;

pub const NET_MAGIC: &[u8; 8] = b"NSMPCNET";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Heuristic,
    Oracle,
    Learned,
}

/// Pure-pursuit path tracker parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeuristicParams {
    /// m/s
    pub cruise_speed: f64,
    /// Look-ahead distance along the path, meters.
    pub lookahead: f64,
    /// Angular rate per radian of heading error, 1/s.
    pub gain: f64,
    /// Spacing of the laterally shifted tracking candidates, meters.
    pub lateral_step: f64,
    /// Shifted candidates on each side of the center line.
    pub lateral_candidates: usize,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        Self {
            cruise_speed: 5.0,
            lookahead: 6.0,
            gain: 1.5,
            lateral_step: 1.5,
            lateral_candidates: 3,
        }
    }
}

/// Follows the path at cruise speed, steering towards a look-ahead point.
pub fn heuristic_mean(
    start: VehicleState,
    path: &GlobalPath,
    params: &HeuristicParams,
    horizon: usize,
    dt: f64,
    bounds: &ControlBounds,
) -> ControlSequence {
    offset_heuristic_mean(start, path, params, 0.0, horizon, dt, bounds)
}

/// Pure pursuit of the path shifted `offset` meters to its left.
pub fn offset_heuristic_mean(
    start: VehicleState,
    path: &GlobalPath,
    params: &HeuristicParams,
    offset: f64,
    horizon: usize,
    dt: f64,
    bounds: &ControlBounds,
) -> ControlSequence {
    let mut s = start;
    let mut controls = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let proj = path.project(s.position());
        let pose = path.pose_at(proj.s + params.lookahead);
        let (sin, cos) = pose.theta.sin_cos();
        let target = [pose.x - offset * sin, pose.y + offset * cos];
        let alpha = wrap_angle((target[1] - s.y).atan2(target[0] - s.x) - s.theta);
        let u = bounds.clamp(Control::new(params.cruise_speed, params.gain * alpha));
        controls.push(u);
        s = unicycle_step(s, u, dt);
    }
    ControlSequence { controls, dt }
}

/// Lateral offsets tried by [`candidate_mean`]: 0, +step, −step, +2·step, ...
pub fn candidate_offsets(params: &HeuristicParams) -> Vec<f64> {
    let mut out = vec![0.0];
    for k in 1..=params.lateral_candidates {
        let d = k as f64 * params.lateral_step;
        out.push(d);
        out.push(-d);
    }
    out
}

/// The first unblocked shifted pure-pursuit sequence in
/// [`candidate_offsets`] order, or the cheapest one when all are blocked.
pub fn candidate_mean(problem: &PlanProblem, path: &GlobalPath, params: &HeuristicParams, horizon: usize) -> ControlSequence {
    let mut best: Option<(f64, ControlSequence)> = None;
    for d in candidate_offsets(params) {
        let seq = offset_heuristic_mean(problem.start, path, params, d, horizon, problem.dt, &problem.bounds);
        let (_, cost) = problem.evaluate(&seq);
        if !cost.blocked {
            return seq;
        }
        if best.as_ref().is_none_or(|(c, _)| cost.total < *c) {
            best = Some((cost.total, seq));
        }
    }
    best.expect("at least one candidate").1
}

/// NeRF-style encoding: for every component `q`,
/// `sin(2^k π q), cos(2^k π q)` for `k = 0..L`.
pub fn positional_encode(p: &[f64], frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * frequencies * p.len());
    positional_encode_into(p, frequencies, &mut out);
    out
}

pub(crate) fn positional_encode_into(p: &[f64], frequencies: usize, out: &mut Vec<f64>) {
    for &q in p {
        let mut f = PI;
        for _ in 0..frequencies {
            let (s, c) = (f * q).sin_cos();
            out.push(s);
            out.push(c);
            f *= 2.0;
        }
    }
}

/// Architecture hyperparameters of [`SpatioTemporalNet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub grid_height: usize,
    pub grid_width: usize,
    pub horizon: usize,
    /// Stride along the frame (time) axis of both convolutions.
    pub temporal_stride: usize,
    pub conv_channels: [usize; 2],
    pub fc_widths: [usize; 3],
}

impl NetShape {
    pub fn new(grid_height: usize, grid_width: usize, horizon: usize) -> Self {
        Self {
            grid_height,
            grid_width,
            horizon,
            temporal_stride: 2,
            conv_channels: [8, 16],
            fc_widths: [256, 128, 64],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.grid_height == 0 || self.grid_width == 0 || self.temporal_stride == 0 {
            return Err(Error::invalid("network dimensions must be non-zero"));
        }
        self.conv_geometries().iter().try_for_each(|g| g.validate())
    }

    fn conv_geometries(&self) -> [ConvGeometry; 2] {
        let first = ConvGeometry {
            in_channels: 1,
            in_dims: [STACK_CHANNELS, self.grid_height, self.grid_width],
            out_channels: self.conv_channels[0],
            kernel: [3, 3, 3],
            stride: [self.temporal_stride, 2, 2],
            padding: [1, 1, 1],
        };
        let second = ConvGeometry {
            in_channels: self.conv_channels[0],
            in_dims: first.out_dims(),
            out_channels: self.conv_channels[1],
            kernel: [3, 3, 3],
            stride: [self.temporal_stride, 2, 2],
            padding: [1, 1, 1],
        };
        [first, second]
    }

    fn dense_layers(&self, flat: usize) -> [Dense; 4] {
        let [a, b, c] = self.fc_widths;
        [
            Dense { inputs: flat, outputs: a },
            Dense { inputs: a, outputs: b },
            Dense { inputs: b, outputs: c },
            Dense { inputs: c, outputs: 2 * self.horizon },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetHeader {
    kind: String,
    version: u32,
    shape: NetShape,
    layers: Vec<LayerDesc>,
    param_count: usize,
}

/// Two 3-D convolution blocks (3×3×3, stride 2 in space, ReLU) followed by
/// four fully-connected layers producing `H × 2` controls.
#[derive(Debug, Clone)]
pub struct SpatioTemporalNet {
    shape: NetShape,
    conv: [ConvGeometry; 2],
    dense: [Dense; 4],
    /// Every weight and bias in declaration order.
    params: Vec<f64>,
    /// Offsets of conv1.w, conv1.b, conv2.w, conv2.b, fc1.w, fc1.b, ...
    offsets: Vec<usize>,
    /// `f32` copy of `params` for single-sample inference. Parameters are
    /// always `f32`-representable, so the copy is exact.
    params_f32: OnceLock<Vec<f32>>,
}

impl PartialEq for SpatioTemporalNet {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.params == other.params
    }
}

/// Activations kept for the backward pass.
struct ForwardCache {
    batch: usize,
    cols: [Vec<f64>; 2],
    conv_out: [Vec<f64>; 2],
    /// Post-ReLU outputs of fc1..fc3, then the linear output.
    fc_out: [Vec<f64>; 4],
}

impl SpatioTemporalNet {
    /// He-uniform initialization with zero biases; values are rounded to
    /// `f32` so saved weights reload bit-exactly.
    pub fn new(shape: NetShape, seed: u64) -> Result<Self> {
        let mut net = Self::zeroed(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fans: Vec<usize> = net
            .conv
            .iter()
            .map(|g| g.patch_len())
            .chain(net.dense.iter().map(|d| d.inputs))
            .collect();
        for (layer, fan_in) in fans.into_iter().enumerate() {
            let bound = (6.0 / fan_in as f64).sqrt();
            let (a, b) = (net.offsets[2 * layer], net.offsets[2 * layer + 1]);
            for w in &mut net.params[a..b] {
                *w = rng.random_range(-bound..bound) as f32 as f64;
            }
        }
        Ok(net)
    }

    pub fn zeroed(shape: NetShape) -> Result<Self> {
        shape.validate()?;
        let conv = shape.conv_geometries();
        let dense = shape.dense_layers(conv[1].out_len());
        let mut offsets = vec![0];
        for g in &conv {
            let last = *offsets.last().unwrap();
            offsets.push(last + g.kernel_len());
            offsets.push(last + g.kernel_len() + g.out_channels);
        }
        for d in &dense {
            let last = *offsets.last().unwrap();
            offsets.push(last + d.inputs * d.outputs);
            offsets.push(last + d.param_len());
        }
        let n = *offsets.last().unwrap();
        Ok(Self {
            shape,
            conv,
            dense,
            params: vec![0.0; n],
            offsets,
            params_f32: OnceLock::new(),
        })
    }

    fn invalidate(&mut self) {
        self.params_f32 = OnceLock::new();
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.invalidate();
        &mut self.params
    }

    /// Parameter block `i` (weights at even, biases at odd indices).
    fn block(&self, i: usize) -> &[f64] {
        &self.params[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn layers(&self) -> Vec<LayerDesc> {
        let mut out = Vec::new();
        for (i, g) in self.conv.iter().enumerate() {
            let [kd, kh, kw] = g.kernel;
            out.push(LayerDesc {
                name: format!("conv{}.weight", i + 1),
                shape: vec![g.out_channels, g.in_channels, kd, kh, kw],
            });
            out.push(LayerDesc {
                name: format!("conv{}.bias", i + 1),
                shape: vec![g.out_channels],
            });
        }
        for (i, d) in self.dense.iter().enumerate() {
            out.push(LayerDesc {
                name: format!("fc{}.weight", i + 1),
                shape: vec![d.outputs, d.inputs],
            });
            out.push(LayerDesc {
                name: format!("fc{}.bias", i + 1),
                shape: vec![d.outputs],
            });
        }
        out
    }

    /// Zeroes the output weights and sets the output bias, so the net starts
    /// by predicting `bias` for every input.
    pub fn reset_output_layer(&mut self, bias: &[f64]) -> Result<()> {
        let i = self.offsets.len() - 2;
        let (w0, a, b) = (self.offsets[i - 1], self.offsets[i], self.offsets[i + 1]);
        if bias.len() != b - a {
            return Err(Error::invalid("output bias length mismatch"));
        }
        self.invalidate();
        self.params[w0..a].fill(0.0);
        for (p, v) in self.params[a..b].iter_mut().zip(bias) {
            *p = *v as f32 as f64;
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.conv[0].in_len()
    }

    fn check_stack(&self, stack: &GridStack) -> Result<()> {
        let s = stack.spec();
        if s.height != self.shape.grid_height || s.width != self.shape.grid_width {
            return Err(Error::invalid(format!(
                "stack is {}×{}, network expects {}×{}",
                s.height, s.width, self.shape.grid_height, self.shape.grid_width
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, inputs: &[&[f64]]) -> ForwardCache {
        let batch = inputs.len();
        let per_sample: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> =
            inputs.par_iter().map(|x| self.conv_forward(x)).collect();
        let mut cols = [Vec::new(), Vec::new()];
        let mut conv_out = [Vec::new(), Vec::new()];
        for (c1, a1, c2, a2) in per_sample {
            cols[0].extend_from_slice(&c1);
            conv_out[0].extend_from_slice(&a1);
            cols[1].extend_from_slice(&c2);
            conv_out[1].extend_from_slice(&a2);
        }
        let mut fc_out: [Vec<f64>; 4] = Default::default();
        for (i, d) in self.dense.iter().enumerate() {
            let x = if i == 0 { &conv_out[1] } else { &fc_out[i - 1] };
            let mut y = vec![0.0; batch * d.outputs];
            d.forward(self.block(4 + 2 * i), self.block(5 + 2 * i), x, batch, &mut y);
            if i < 3 {
                relu(&mut y);
            }
            fc_out[i] = y;
        }
        ForwardCache {
            batch,
            cols,
            conv_out,
            fc_out,
        }
    }

    /// Unclamped `2H` outputs, interleaved `(v, ω)` per step.
    pub fn forward_raw(&self, stack: &GridStack) -> Result<Vec<f64>> {
        self.check_stack(stack)?;
        let x = stack.to_values();
        Ok(self.forward_values(&x))
    }

    /// Both convolution blocks: (columns, activations) per block.
    fn conv_forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let [g1, g2] = self.conv;
        let mut cols1 = Vec::new();
        g1.im2col(x, &mut cols1);
        let mut a1 = vec![0.0; g1.out_len()];
        g1.forward_cols(self.block(0), Some(self.block(1)), &cols1, &mut a1);
        relu(&mut a1);
        let mut cols2 = Vec::new();
        g2.im2col(&a1, &mut cols2);
        let mut a2 = vec![0.0; g2.out_len()];
        g2.forward_cols(self.block(2), Some(self.block(3)), &cols2, &mut a2);
        relu(&mut a2);
        (cols1, a1, cols2, a2)
    }

    /// Single-sample inference in `f32` arithmetic.
    pub(crate) fn forward_values(&self, x: &[f64]) -> Vec<f64> {
        let p = self.params_f32.get_or_init(|| self.params.iter().map(|&w| w as f32).collect());
        let block = |i: usize| &p[self.offsets[i]..self.offsets[i + 1]];
        let mut h: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let mut cols = Vec::new();
        for (l, g) in self.conv.iter().enumerate() {
            g.im2col(&h, &mut cols);
            let positions = g.out_len() / g.out_channels;
            let mut out = Vec::with_capacity(g.out_len());
            for &b in block(2 * l + 1) {
                out.extend(std::iter::repeat_n(b, positions));
            }
            sgemm_rm(g.out_channels, g.patch_len(), positions, block(2 * l), &cols, &mut out);
            relu_f32(&mut out);
            h = out;
        }
        for (i, d) in self.dense.iter().enumerate() {
            let w = block(4 + 2 * i);
            let mut y: Vec<f32> = block(5 + 2 * i)
                .iter()
                .enumerate()
                .map(|(o, &b)| b + dot_f32(&w[o * d.inputs..(o + 1) * d.inputs], &h))
                .collect();
            if i < 3 {
                relu_f32(&mut y);
            }
            h = y;
        }
        h.into_iter().map(f64::from).collect()
    }

    /// ReLU on/off pattern for one input; used to detect kink crossings in
    /// gradient checks.
    pub fn activation_pattern(&self, stack: &GridStack) -> Result<Vec<bool>> {
        self.check_stack(stack)?;
        let x = stack.to_values();
        let c = self.forward_cached(&[&x]);
        Ok(c.conv_out
            .iter()
            .chain(&c.fc_out[..3])
            .flat_map(|v| v.iter().map(|&a| a > 0.0))
            .collect())
    }

    /// Gradient of the summed per-sample losses whose output gradients are
    /// `d_out` (batch-major), in parameter layout.
    fn backward(&self, cache: &ForwardCache, d_out: &[f64]) -> Vec<f64> {
        let batch = cache.batch;
        let mut grads = vec![0.0; self.params.len()];
        let mut dy = d_out.to_vec();
        for i in (0..4).rev() {
            let d = self.dense[i];
            let x = if i == 0 { &cache.conv_out[1] } else { &cache.fc_out[i - 1] };
            let mut dx = vec![0.0; batch * d.inputs];
            let (wa, wb, bb) = (self.offsets[4 + 2 * i], self.offsets[5 + 2 * i], self.offsets[6 + 2 * i]);
            let (gw, gb) = grads[wa..bb].split_at_mut(wb - wa);
            d.backward(self.block(4 + 2 * i), x, &dy, batch, gw, gb, Some(&mut dx));
            relu_backward(&mut dx, x);
            dy = dx;
        }
        // dy now holds gradients w.r.t. the (post-ReLU) conv2 outputs, masked.
        let [g1, g2] = self.conv;
        let (r1, p1) = (g1.patch_len(), g1.out_positions());
        let (r2, p2) = (g2.patch_len(), g2.out_positions());
        let per_sample: Vec<Vec<f64>> = (0..batch)
            .into_par_iter()
            .map(|b| {
                let mut local = vec![0.0; self.offsets[4]];
                let d2 = &dy[b * g2.out_len()..(b + 1) * g2.out_len()];
                let cols2 = &cache.cols[1][b * r2 * p2..(b + 1) * r2 * p2];
                {
                    let (k2, rest) = local[self.offsets[2]..self.offsets[4]].split_at_mut(g2.kernel_len());
                    gemm(g2.out_channels, p2, r2, 1.0, d2, p2, 1, cols2, 1, p2, 1.0, k2, r2, 1);
                    for (co, row) in d2.chunks_exact(p2).enumerate() {
                        rest[co] += row.iter().sum::<f64>();
                    }
                }
                let mut dcols2 = vec![0.0; r2 * p2];
                gemm(r2, g2.out_channels, p2, 1.0, self.block(2), 1, r2, d2, p2, 1, 0.0, &mut dcols2, p2, 1);
                let mut d1 = vec![0.0; g1.out_len()];
                g2.col2im(&dcols2, &mut d1);
                relu_backward(&mut d1, &cache.conv_out[0][b * g1.out_len()..(b + 1) * g1.out_len()]);
                let cols1 = &cache.cols[0][b * r1 * p1..(b + 1) * r1 * p1];
                let (k1, rest) = local[..self.offsets[2]].split_at_mut(g1.kernel_len());
                gemm(g1.out_channels, p1, r1, 1.0, &d1, p1, 1, cols1, 1, p1, 1.0, k1, r1, 1);
                for (co, row) in d1.chunks_exact(p1).enumerate() {
                    rest[co] += row.iter().sum::<f64>();
                }
                local
            })
            .collect();
        for local in per_sample {
            for (g, l) in grads.iter_mut().zip(&local) {
                *g += l;
            }
        }
        grads
    }

    /// Mean-squared-error loss against `target` (interleaved `(v, ω)`) and
    /// its gradient for every parameter.
    pub fn loss_and_grad(&self, stack: &GridStack, target: &ControlSequence) -> Result<(f64, Vec<f64>)> {
        self.check_stack(stack)?;
        let t = target.to_flat();
        if t.len() != 2 * self.shape.horizon {
            return Err(Error::invalid("target horizon does not match the network"));
        }
        let x = stack.to_values();
        Ok(self.batch_loss_grad(&[(&x, &t)]))
    }

    fn batch_loss_grad(&self, batch: &[(&[f64], &[f64])]) -> (f64, Vec<f64>) {
        let inputs: Vec<&[f64]> = batch.iter().map(|(x, _)| *x).collect();
        let cache = self.forward_cached(&inputs);
        let out_len = 2 * self.shape.horizon;
        let scale = 1.0 / batch.len() as f64;
        let mut d_out = vec![0.0; batch.len() * out_len];
        let mut loss = 0.0;
        for (b, (_, t)) in batch.iter().enumerate() {
            let y = &cache.fc_out[3][b * out_len..(b + 1) * out_len];
            let g = &mut d_out[b * out_len..(b + 1) * out_len];
            loss += mse_with_grad(y, t, g);
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
        (loss * scale, self.backward(&cache, &d_out))
    }

    /// One optimizer step on a mini-batch; returns the batch loss before the
    /// update.
    pub fn train_step(&mut self, batch: &[TrainSample], cfg: &TrainConfig, state: &mut LionState) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("training batch must not be empty"));
        }
        let n_in = self.input_len();
        let n_out = 2 * self.shape.horizon;
        if batch.iter().any(|s| s.input.len() != n_in || s.target.len() != n_out) {
            return Err(Error::invalid("training sample shape does not match the network"));
        }
        let pairs: Vec<(&[f64], &[f64])> = batch.iter().map(|s| (&s.input[..], &s.target[..])).collect();
        let (loss, grads) = self.batch_loss_grad(&pairs);
        self.invalidate();
        state.step(&mut self.params, &grads, cfg);
        Ok(loss)
    }

    pub fn eval_loss(&self, samples: &[TrainSample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let total: f64 = samples
            .chunks(16)
            .map(|chunk| {
                let inputs: Vec<&[f64]> = chunk.iter().map(|s| &s.input[..]).collect();
                let cache = self.forward_cached(&inputs);
                let out_len = 2 * self.shape.horizon;
                chunk
                    .iter()
                    .enumerate()
                    .map(|(b, s)| {
                        let y = &cache.fc_out[3][b * out_len..(b + 1) * out_len];
                        y.iter().zip(&s.target).map(|(a, t)| (a - t).powi(2)).sum::<f64>() / out_len as f64
                    })
                    .sum::<f64>()
            })
            .sum();
        total / samples.len() as f64
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = NetHeader {
            kind: "spatio_temporal".into(),
            version: 1,
            shape: self.shape,
            layers: self.layers(),
            param_count: self.params.len(),
        };
        weights::encode(NET_MAGIC, &header, &self.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, params): (NetHeader, _) = weights::decode(NET_MAGIC, bytes, |h: &NetHeader| h.param_count)?;
        let mut net = Self::zeroed(header.shape).map_err(|e| Error::format(12, e.to_string()))?;
        if header.layers != net.layers() || header.param_count != net.param_count() {
            return Err(Error::format(12, "layer table does not match the declared architecture"));
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

fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 16];
    let (ac, bc) = (a.chunks_exact(16), b.chunks_exact(16));
    let tail: f32 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for k in 0..16 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f32>() + tail
}

fn relu_f32(v: &mut [f32]) {
    for x in v {
        *x = x.max(0.0);
    }
}

#[inline]
fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zeroes gradients where the forward activation was clipped.
#[inline]
fn relu_backward(grad: &mut [f64], activation: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Network forward pass clamped to the control bounds.
pub fn net_forward(
    net: &SpatioTemporalNet,
    stack: &GridStack,
    bounds: &ControlBounds,
    dt: f64,
) -> Result<ControlSequence> {
    let raw = net.forward_raw(stack)?;
    Ok(ControlSequence::from_flat(&raw, dt)?.clamped(bounds))
}

/// A flattened stack with its interleaved control target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

impl TrainSample {
    pub fn new(stack: &GridStack, target: &ControlSequence) -> Self {
        Self {
            input: stack.to_values(),
            target: target.to_flat(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Deterministic 90/10 split followed by `cfg.epochs` shuffled passes.
/// The output layer starts at the mean training target, and the weights of
/// the epoch with the lowest validation loss are kept.
pub fn fit(net: &mut SpatioTemporalNet, samples: &[TrainSample], cfg: &TrainConfig) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if samples.len() >= 10 { samples.len() / 10 } else { 0 };
    let (val_idx, train_idx) = order.split_at(n_val);
    let val: Vec<TrainSample> = val_idx.iter().map(|&i| samples[i].clone()).collect();
    let mut train_idx = train_idx.to_vec();

    let out_len = samples[0].target.len();
    let mut mean_target = vec![0.0; out_len];
    for &i in &train_idx {
        for (m, t) in mean_target.iter_mut().zip(&samples[i].target) {
            *m += t / train_idx.len() as f64;
        }
    }
    net.reset_output_layer(&mean_target)?;

    let mut state = LionState::new(net.param_count());
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let batch: Vec<TrainSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            sum += net.train_step(&batch, cfg, &mut state)?;
            batches += 1;
        }
        let val_loss = net.eval_loss(&val);
        if !val.is_empty() && best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, net.params().to_vec()));
        }
        curve.push(EpochLoss {
            epoch,
            train_loss: sum / batches.max(1) as f64,
            val_loss,
        });
    }
    if let Some((_, params)) = best {
        net.params_mut().copy_from_slice(&params);
    }
    Ok(curve)
}

/// What a predictor may look at when producing a mean.
pub struct PredictorInputs<'a> {
    pub stack: Option<&'a GridStack>,
    pub path: &'a GlobalPath,
    pub problem: &'a PlanProblem,
    pub horizon: usize,
}

#[derive(Debug, Clone)]
pub enum Predictor {
    Heuristic(HeuristicParams),
    /// Runs MPPI from [`candidate_mean`] and returns its final mean.
    Oracle {
        heuristic: HeuristicParams,
        sampler: SamplerConfig,
    },
    Learned(Option<Arc<SpatioTemporalNet>>),
}

impl Predictor {
    pub fn kind(&self) -> PredictorKind {
        match self {
            Predictor::Heuristic(_) => PredictorKind::Heuristic,
            Predictor::Oracle { .. } => PredictorKind::Oracle,
            Predictor::Learned(_) => PredictorKind::Learned,
        }
    }

    pub fn predict_mean(&self, inputs: &PredictorInputs<'_>) -> Result<ControlSequence> {
        let p = inputs.problem;
        match self {
            Predictor::Heuristic(h) => Ok(heuristic_mean(p.start, inputs.path, h, inputs.horizon, p.dt, &p.bounds)),
            Predictor::Oracle { heuristic, sampler } => {
                let init = candidate_mean(p, inputs.path, heuristic, inputs.horizon);
                let cfg = sampler.for_mode(PlanMode::Mppi);
                Ok(plan_iterative(&init, p, &cfg, PlanMode::Mppi)?.mean_controls)
            }
            Predictor::Learned(net) => {
                let net = net
                    .as_ref()
                    .ok_or_else(|| Error::Config("learned predictor requires network weights".into()))?;
                let stack = inputs
                    .stack
                    .ok_or_else(|| Error::invalid("learned predictor requires a grid stack"))?;
                net_forward(net, stack, &p.bounds, p.dt)
            }
        }
    }
}
