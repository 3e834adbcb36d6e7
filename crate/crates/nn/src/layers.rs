//! Layer kernels operating on flat, row-major batches.
//!
//! Images are stored channel-major (`[c][h][w]`) per sample. Every kernel runs
//! single-threaded with a fixed accumulation order.

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::scalar::{axpy, dot, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// ELU with unit alpha.
#[inline]
pub fn elu<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn elu_grad<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one()
    } else {
        x.exp()
    }
}

/// Fully connected layer. `kernel` is `inputs x outputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub inputs: usize,
    pub outputs: usize,
    pub kernel: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> Dense<F> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            kernel: vec![F::zero(); inputs * outputs],
            bias: vec![F::zero(); outputs],
        }
    }

    pub fn forward(&self, x: &[F], batch: usize, y: &mut [F]) {
        let (ni, no) = (self.inputs, self.outputs);
        debug_assert_eq!(x.len(), batch * ni);
        debug_assert_eq!(y.len(), batch * no);
        for (xb, yb) in x.chunks_exact(ni).zip(y.chunks_exact_mut(no)) {
            yb.copy_from_slice(&self.bias);
            for (i, &xi) in xb.iter().enumerate() {
                if xi != F::zero() {
                    axpy(yb, xi, &self.kernel[i * no..(i + 1) * no]);
                }
            }
        }
    }

    pub fn backward(
        &self,
        x: &[F],
        dy: &[F],
        batch: usize,
        dkernel: &mut [F],
        dbias: &mut [F],
        dx: Option<&mut [F]>,
    ) {
        let (ni, no) = (self.inputs, self.outputs);
        debug_assert_eq!(dy.len(), batch * no);
        for (xb, dyb) in x.chunks_exact(ni).zip(dy.chunks_exact(no)) {
            axpy(dbias, F::one(), dyb);
            for (i, &xi) in xb.iter().enumerate() {
                if xi != F::zero() {
                    axpy(&mut dkernel[i * no..(i + 1) * no], xi, dyb);
                }
            }
        }
        if let Some(dx) = dx {
            for (dxb, dyb) in dx.chunks_exact_mut(ni).zip(dy.chunks_exact(no)) {
                for (i, d) in dxb.iter_mut().enumerate() {
                    *d = dot(&self.kernel[i * no..(i + 1) * no], dyb);
                }
            }
        }
    }
}

/// 2-D cross-correlation, stride 1, zero "same" padding.
///
/// Even kernel extents pad one more cell after than before, so output
/// spatial dims always equal input dims. `kernel` is `[out][in][kh][kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<F> {
    pub input: ImageShape,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub kernel: Vec<F>,
    pub bias: Vec<F>,
}

/// Output columns `[x0, x1)` whose tap `k` lands inside a row of `len` after
/// padding `pad` on the leading side.
#[inline]
fn valid_span(len: usize, k: usize, pad: usize) -> (usize, usize) {
    let x0 = pad.saturating_sub(k);
    let x1 = (len + pad).saturating_sub(k).min(len);
    (x0, x1.max(x0))
}

impl<F: Scalar> Conv2d<F> {
    pub fn zeros(input: ImageShape, filters: usize, kernel_h: usize, kernel_w: usize) -> Result<Self> {
        if kernel_h == 0 || kernel_w == 0 || filters == 0 {
            return Err(NnError::Shape(format!(
                "conv2d needs positive filters and kernel extents, got {filters} x ({kernel_h},{kernel_w})"
            )));
        }
        if input.is_empty() {
            return Err(NnError::Shape("conv2d on an empty image".into()));
        }
        Ok(Self {
            input,
            filters,
            kernel_h,
            kernel_w,
            kernel: vec![F::zero(); filters * input.channels * kernel_h * kernel_w],
            bias: vec![F::zero(); filters],
        })
    }

    pub fn output_shape(&self) -> ImageShape {
        ImageShape {
            channels: self.filters,
            ..self.input
        }
    }

    fn pads(&self) -> (usize, usize) {
        ((self.kernel_h - 1) / 2, (self.kernel_w - 1) / 2)
    }

    #[inline]
    fn weight(&self, o: usize, c: usize, ky: usize, kx: usize) -> F {
        self.kernel[((o * self.input.channels + c) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    pub fn forward(&self, x: &[F], batch: usize, y: &mut [F]) {
        let ImageShape { channels, height: h, width: w } = self.input;
        let (pt, pl) = self.pads();
        let (in_len, out_len) = (self.input.len(), self.filters * h * w);
        for b in 0..batch {
            let xs = &x[b * in_len..(b + 1) * in_len];
            let ys = &mut y[b * out_len..(b + 1) * out_len];
            for o in 0..self.filters {
                let yo = &mut ys[o * h * w..(o + 1) * h * w];
                yo.fill(self.bias[o]);
                for c in 0..channels {
                    let xc = &xs[c * h * w..(c + 1) * h * w];
                    for ky in 0..self.kernel_h {
                        let (y0, y1) = valid_span(h, ky, pt);
                        for kx in 0..self.kernel_w {
                            let wgt = self.weight(o, c, ky, kx);
                            let (x0, x1) = valid_span(w, kx, pl);
                            if x0 >= x1 {
                                continue;
                            }
                            for row in y0..y1 {
                                let src = (row + ky - pt) * w + (x0 + kx - pl);
                                axpy(
                                    &mut yo[row * w + x0..row * w + x1],
                                    wgt,
                                    &xc[src..src + (x1 - x0)],
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn backward(
        &self,
        x: &[F],
        dy: &[F],
        batch: usize,
        dkernel: &mut [F],
        dbias: &mut [F],
        mut dx: Option<&mut [F]>,
    ) {
        let ImageShape { channels, height: h, width: w } = self.input;
        let (pt, pl) = self.pads();
        let (in_len, out_len) = (self.input.len(), self.filters * h * w);
        if let Some(dx) = dx.as_deref_mut() {
            dx.fill(F::zero());
        }
        for b in 0..batch {
            let xs = &x[b * in_len..(b + 1) * in_len];
            let dys = &dy[b * out_len..(b + 1) * out_len];
            for o in 0..self.filters {
                let dyo = &dys[o * h * w..(o + 1) * h * w];
                dbias[o] = dbias[o] + dyo.iter().fold(F::zero(), |a, &v| a + v);
                for c in 0..channels {
                    let xc = &xs[c * h * w..(c + 1) * h * w];
                    for ky in 0..self.kernel_h {
                        let (y0, y1) = valid_span(h, ky, pt);
                        for kx in 0..self.kernel_w {
                            let (x0, x1) = valid_span(w, kx, pl);
                            if x0 >= x1 {
                                continue;
                            }
                            let widx = ((o * channels + c) * self.kernel_h + ky) * self.kernel_w + kx;
                            let wgt = self.kernel[widx];
                            let mut acc = F::zero();
                            for row in y0..y1 {
                                let src = (row + ky - pt) * w + (x0 + kx - pl);
                                let g = &dyo[row * w + x0..row * w + x1];
                                acc = acc + dot(g, &xc[src..src + (x1 - x0)]);
                                if let Some(dx) = dx.as_deref_mut() {
                                    let off = b * in_len + c * h * w + src;
                                    axpy(&mut dx[off..off + (x1 - x0)], wgt, g);
                                }
                            }
                            dkernel[widx] = dkernel[widx] + acc;
                        }
                    }
                }
            }
        }
    }
}

/// Non-overlapping average pooling. Trailing partial windows are averaged
/// over the cells they actually cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AvgPool2d {
    pub input: ImageShape,
    pub pool_h: usize,
    pub pool_w: usize,
}

impl AvgPool2d {
    pub fn new(input: ImageShape, pool_h: usize, pool_w: usize) -> Result<Self> {
        if pool_h == 0 || pool_w == 0 {
            return Err(NnError::Shape("pool size must be at least (1,1)".into()));
        }
        Ok(Self { input, pool_h, pool_w })
    }

    pub fn output_shape(&self) -> ImageShape {
        ImageShape {
            channels: self.input.channels,
            height: self.input.height.div_ceil(self.pool_h),
            width: self.input.width.div_ceil(self.pool_w),
        }
    }

    pub fn forward<F: Scalar>(&self, x: &[F], batch: usize, y: &mut [F]) {
        let ImageShape { height: h, width: w, .. } = self.input;
        let out = self.output_shape();
        let planes = batch * self.input.channels;
        for p in 0..planes {
            let xp = &x[p * h * w..(p + 1) * h * w];
            let yp = &mut y[p * out.height * out.width..(p + 1) * out.height * out.width];
            for oy in 0..out.height {
                let (r0, r1) = (oy * self.pool_h, ((oy + 1) * self.pool_h).min(h));
                for ox in 0..out.width {
                    let (c0, c1) = (ox * self.pool_w, ((ox + 1) * self.pool_w).min(w));
                    let mut acc = F::zero();
                    for r in r0..r1 {
                        for &v in &xp[r * w + c0..r * w + c1] {
                            acc = acc + v;
                        }
                    }
                    yp[oy * out.width + ox] = acc / F::of(((r1 - r0) * (c1 - c0)) as f64);
                }
            }
        }
    }

    pub fn backward<F: Scalar>(&self, dy: &[F], batch: usize, dx: &mut [F]) {
        let ImageShape { height: h, width: w, .. } = self.input;
        let out = self.output_shape();
        let planes = batch * self.input.channels;
        for p in 0..planes {
            let dyp = &dy[p * out.height * out.width..(p + 1) * out.height * out.width];
            let dxp = &mut dx[p * h * w..(p + 1) * h * w];
            for oy in 0..out.height {
                let (r0, r1) = (oy * self.pool_h, ((oy + 1) * self.pool_h).min(h));
                for ox in 0..out.width {
                    let (c0, c1) = (ox * self.pool_w, ((ox + 1) * self.pool_w).min(w));
                    let g = dyp[oy * out.width + ox] / F::of(((r1 - r0) * (c1 - c0)) as f64);
                    for r in r0..r1 {
                        dxp[r * w + c0..r * w + c1].fill(g);
                    }
                }
            }
        }
    }
}

pub fn elu_forward<F: Scalar>(x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = elu(xi);
    }
}

pub fn elu_backward<F: Scalar>(x: &[F], dy: &[F], dx: &mut [F]) {
    for ((d, &xi), &g) in dx.iter_mut().zip(x).zip(dy) {
        *d = g * elu_grad(xi);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0f64), 0.0);
        assert_eq!(elu(1.0f64), 1.0);
        assert!((elu(-1.0f64) - (-0.632_120_558_828_557_7)).abs() < 1e-15);
    }

    #[test]
    fn identity_dense_is_passthrough() {
        let mut d = Dense::<f64>::zeros(3, 3);
        for i in 0..3 {
            d.kernel[i * 3 + i] = 1.0;
        }
        let x = [0.5, -2.0, 7.0, 1.0, 2.0, 3.0];
        let mut y = [0.0; 6];
        d.forward(&x, 2, &mut y);
        assert_eq!(y, x);
    }

    #[test]
    fn same_padding_keeps_spatial_dims() {
        let shape = ImageShape { channels: 3, height: 22, width: 122 };
        let conv = Conv2d::<f32>::zeros(shape, 9, 2, 3).unwrap();
        let out = conv.output_shape();
        assert_eq!((out.channels, out.height, out.width), (9, 22, 122));
        let x = vec![1.0f32; shape.len()];
        let mut y = vec![0.0f32; out.len()];
        conv.forward(&x, 1, &mut y);
    }

    #[test]
    fn ones_filter_on_constant_image() {
        let shape = ImageShape { channels: 1, height: 5, width: 6 };
        let mut conv = Conv2d::<f64>::zeros(shape, 1, 3, 3).unwrap();
        conv.kernel.fill(1.0);
        let x = vec![1.0; shape.len()];
        let mut y = vec![0.0; shape.len()];
        conv.forward(&x, 1, &mut y);
        for r in 0..5 {
            for c in 0..6 {
                let v = y[r * 6 + c];
                let interior = r > 0 && r < 4 && c > 0 && c < 5;
                if interior {
                    assert_eq!(v, 9.0);
                } else {
                    assert!(v < 9.0);
                }
            }
        }
        assert_eq!(y[0], 4.0);
        assert_eq!(y[1], 6.0);
    }

    #[test]
    fn even_kernel_pads_after() {
        // kernel (1,2): output[x] = w0*in[x] + w1*in[x+1]
        let shape = ImageShape { channels: 1, height: 1, width: 4 };
        let mut conv = Conv2d::<f64>::zeros(shape, 1, 1, 2).unwrap();
        conv.kernel.copy_from_slice(&[1.0, 10.0]);
        let mut y = vec![0.0; 4];
        conv.forward(&[1.0, 2.0, 3.0, 4.0], 1, &mut y);
        assert_eq!(y, vec![21.0, 32.0, 43.0, 4.0]);
    }

    #[test]
    fn pooling() {
        let shape = ImageShape { channels: 1, height: 2, width: 2 };
        let p = AvgPool2d::new(shape, 2, 2).unwrap();
        let mut y = [0.0f64];
        p.forward(&[1.0, 2.0, 3.0, 4.0], 1, &mut y);
        assert_eq!(y[0], 2.5);

        let id = AvgPool2d::new(shape, 1, 1).unwrap();
        let mut y = [0.0f64; 4];
        id.forward(&[1.0, 2.0, 3.0, 4.0], 1, &mut y);
        assert_eq!(y, [1.0, 2.0, 3.0, 4.0]);

        // 1x3 with pool 2: windows [1,2] and a partial [3]
        let shape = ImageShape { channels: 1, height: 1, width: 3 };
        let p = AvgPool2d::new(shape, 1, 2).unwrap();
        let mut y = [0.0f64; 2];
        p.forward(&[1.0, 2.0, 3.0], 1, &mut y);
        assert_eq!(y, [1.5, 3.0]);

        assert!(AvgPool2d::new(shape, 0, 1).is_err());
    }

    #[test]
    fn conv_rejects_zero_kernel() {
        let shape = ImageShape { channels: 1, height: 2, width: 2 };
        assert!(Conv2d::<f32>::zeros(shape, 1, 0, 2).is_err());
    }
}
