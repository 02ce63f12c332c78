//! Minimal dense tensor math for the mean-control predictor: 3-D
//! convolution, fully-connected layers, reverse-mode gradients and the
//! sign-momentum optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tensor values must be finite"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// `C = alpha·A·B + beta·C` for strided row/column layouts.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserted extents keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Row-major `C = A·B + C` in `f32`.
pub(crate) fn sgemm_rm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the assertion covers every row-major access.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Shape bookkeeping for one 3-D convolution over `[C, D, H, W]` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_dims: [usize; 3],
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeometry {
    pub fn out_dims(&self) -> [usize; 3] {
        let mut o = [0; 3];
        for k in 0..3 {
            o[k] = (self.in_dims[k] + 2 * self.padding[k] - self.kernel[k]) / self.stride[k] + 1;
        }
        o
    }

    pub fn validate(&self) -> Result<()> {
        for k in 0..3 {
            if self.kernel[k] == 0 || self.stride[k] == 0 {
                return Err(Error::invalid("kernel and stride must be non-zero"));
            }
            if self.in_dims[k] + 2 * self.padding[k] < self.kernel[k] {
                return Err(Error::invalid(format!(
                    "kernel {:?} larger than padded input {:?}",
                    self.kernel, self.in_dims
                )));
            }
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("channel counts must be non-zero"));
        }
        Ok(())
    }

    /// Rows of the unfolded input: `C_in · kd · kh · kw`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    pub fn out_positions(&self) -> usize {
        self.out_dims().iter().product()
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.in_dims.iter().product::<usize>()
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.out_positions()
    }

    pub fn kernel_len(&self) -> usize {
        self.out_channels * self.patch_len()
    }

    /// Unfolds `input` into a `patch_len × out_positions` matrix.
    pub(crate) fn im2col<T: Copy + Default>(&self, input: &[T], cols: &mut Vec<T>) {
        let [d, h, w] = self.in_dims;
        let [od, oh, ow] = self.out_dims();
        let [kd, kh, kw] = self.kernel;
        let p = od * oh * ow;
        cols.clear();
        cols.resize(self.patch_len() * p, T::default());
        let mut row = 0;
        for c in 0..self.in_channels {
            let chan = &input[c * d * h * w..(c + 1) * d * h * w];
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        let dst = &mut cols[row * p..(row + 1) * p];
                        for z in 0..od {
                            let iz = (z * self.stride[0] + a) as isize - self.padding[0] as isize;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            for y in 0..oh {
                                let iy = (y * self.stride[1] + b) as isize - self.padding[1] as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let src = &chan[(iz as usize * h + iy as usize) * w..][..w];
                                let out = &mut dst[(z * oh + y) * ow..][..ow];
                                for (x, o) in out.iter_mut().enumerate() {
                                    let ix = (x * self.stride[2] + e) as isize - self.padding[2] as isize;
                                    if ix >= 0 && ix < w as isize {
                                        *o = src[ix as usize];
                                    }
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeometry::im2col`]: accumulates columns into `grad_in`.
    pub(crate) fn col2im(&self, cols: &[f64], grad_in: &mut [f64]) {
        let [d, h, w] = self.in_dims;
        let [od, oh, ow] = self.out_dims();
        let [kd, kh, kw] = self.kernel;
        let p = od * oh * ow;
        let mut row = 0;
        for c in 0..self.in_channels {
            let chan = &mut grad_in[c * d * h * w..(c + 1) * d * h * w];
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        let src = &cols[row * p..(row + 1) * p];
                        for z in 0..od {
                            let iz = (z * self.stride[0] + a) as isize - self.padding[0] as isize;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            for y in 0..oh {
                                let iy = (y * self.stride[1] + b) as isize - self.padding[1] as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let dst = &mut chan[(iz as usize * h + iy as usize) * w..][..w];
                                let s = &src[(z * oh + y) * ow..][..ow];
                                for (x, g) in s.iter().enumerate() {
                                    let ix = (x * self.stride[2] + e) as isize - self.padding[2] as isize;
                                    if ix >= 0 && ix < w as isize {
                                        dst[ix as usize] += g;
                                    }
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// `out = K · cols (+ bias)`; `out` is `C_out × positions`.
    pub(crate) fn forward_cols(&self, kernel: &[f64], bias: Option<&[f64]>, cols: &[f64], out: &mut [f64]) {
        let r = self.patch_len();
        let p = self.out_positions();
        match bias {
            Some(b) => {
                for (co, chunk) in out.chunks_exact_mut(p).enumerate() {
                    chunk.fill(b[co]);
                }
            }
            None => out.fill(0.0),
        }
        gemm(self.out_channels, r, p, 1.0, kernel, r, 1, cols, p, 1, 1.0, out, p, 1);
    }
}

/// Cross-correlation of a `[C_in, D, H, W]` input with a
/// `[C_out, C_in, kd, kh, kw]` kernel, zero padded.
pub fn conv3d_forward(input: &Tensor, kernel: &Tensor, stride: [usize; 3], padding: [usize; 3]) -> Result<Tensor> {
    if input.shape.len() != 4 || kernel.shape.len() != 5 {
        return Err(Error::invalid("conv3d expects a 4-D input and a 5-D kernel"));
    }
    if kernel.shape[1] != input.shape[0] {
        return Err(Error::invalid(format!(
            "kernel expects {} input channels, input has {}",
            kernel.shape[1], input.shape[0]
        )));
    }
    let g = ConvGeometry {
        in_channels: input.shape[0],
        in_dims: [input.shape[1], input.shape[2], input.shape[3]],
        out_channels: kernel.shape[0],
        kernel: [kernel.shape[2], kernel.shape[3], kernel.shape[4]],
        stride,
        padding,
    };
    g.validate()?;
    let mut cols = Vec::new();
    g.im2col(&input.data, &mut cols);
    let mut out = vec![0.0; g.out_len()];
    g.forward_cols(&kernel.data, None, &cols, &mut out);
    let [od, oh, ow] = g.out_dims();
    Ok(Tensor {
        shape: vec![g.out_channels, od, oh, ow],
        data: out,
    })
}

/// Fully-connected layer geometry; weights are `out × in`, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    /// `y[b] = W x[b] + bias` for a sample-major batch.
    pub(crate) fn forward(&self, w: &[f64], bias: &[f64], x: &[f64], batch: usize, y: &mut [f64]) {
        for row in y.chunks_exact_mut(self.outputs) {
            row.copy_from_slice(bias);
        }
        gemm(batch, self.inputs, self.outputs, 1.0, x, self.inputs, 1, w, 1, self.inputs, 1.0, y, self.outputs, 1);
    }

    /// Accumulates weight/bias gradients and optionally writes `dx`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward(
        &self,
        w: &[f64],
        x: &[f64],
        dy: &[f64],
        batch: usize,
        dw: &mut [f64],
        db: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        gemm(self.outputs, batch, self.inputs, 1.0, dy, 1, self.outputs, x, self.inputs, 1, 1.0, dw, self.inputs, 1);
        for row in dy.chunks_exact(self.outputs) {
            for (b, g) in db.iter_mut().zip(row) {
                *b += g;
            }
        }
        if let Some(dx) = dx {
            gemm(batch, self.outputs, self.inputs, 1.0, dy, self.outputs, 1, w, self.inputs, 1, 0.0, dx, self.inputs, 1);
        }
    }

    pub fn param_len(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// Mean squared error over all entries and its gradient `2(y − t)/n`.
pub fn mse_with_grad(y: &[f64], target: &[f64], grad: &mut [f64]) -> f64 {
    let n = y.len() as f64;
    let mut loss = 0.0;
    for ((g, a), t) in grad.iter_mut().zip(y).zip(target) {
        let e = a - t;
        loss += e * e;
        *g = 2.0 * e / n;
    }
    loss / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.99,
            batch_size: 16,
            epochs: 20,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sign-momentum (Lion) optimizer state: one momentum slot per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct LionState {
    pub momentum: Vec<f64>,
}

impl LionState {
    pub fn new(params: usize) -> Self {
        Self {
            momentum: vec![0.0; params],
        }
    }

    /// `u = sign(β1·m + (1−β1)·g); w ← w − lr·u; m ← β2·m + (1−β2)·g`.
    /// Updated weights are rounded to `f32` so they survive serialization
    /// exactly.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &TrainConfig) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.momentum.len());
        for ((w, &g), m) in params.iter_mut().zip(grads).zip(self.momentum.iter_mut()) {
            let u = sign(cfg.beta1 * *m + (1.0 - cfg.beta1) * g);
            *w = (*w - cfg.learning_rate * u) as f32 as f64;
            *m = cfg.beta2 * *m + (1.0 - cfg.beta2) * g;
        }
    }
}

/// Sign with `sign(0) = 0`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
