//! 2-D convolution and its transpose via im2col + GEMM.

use super::{Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Square-kernel convolution geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Extra rows/cols appended by the transposed convolution only.
    pub output_padding: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            output_padding: 0,
        }
    }

    /// `floor((n + 2p - k) / s) + 1`, or `None` when the kernel does not fit.
    pub fn conv_out(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        (padded >= self.kernel && self.stride > 0).then(|| (padded - self.kernel) / self.stride + 1)
    }

    /// `(n - 1) s - 2p + k + output_padding`.
    pub fn transpose_out(&self, n: usize) -> Option<usize> {
        ((n.max(1) - 1) * self.stride + self.kernel + self.output_padding).checked_sub(2 * self.padding)
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, g: ConvGeometry, ho: usize, wo: usize, col: &mut [T]) {
    let k = g.kernel;
    let plane = ho * wo;
    for ci in 0..c {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * plane..][..plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *d = if ix >= 0 && ix < w as isize {
                            src[ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into the image.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, g: ConvGeometry, ho: usize, wo: usize, x: &mut [T]) {
    let k = g.kernel;
    let plane = ho * wo;
    for ci in 0..c {
        let xc = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * plane..][..plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut xc[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn sum_bias_grad<T: Scalar>(g: &[T], b: usize, c: usize, s: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); c];
    for bi in 0..b {
        for (ci, acc) in gb.iter_mut().enumerate() {
            let base = (bi * c + ci) * s;
            *acc += g[base..base + s].iter().fold(T::zero(), |a, &v| a + v);
        }
    }
    gb
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], b: usize, s: usize) {
    let c = bias.len();
    for bi in 0..b {
        for (ci, &bv) in bias.iter().enumerate() {
            for v in &mut out[(bi * c + ci) * s..(bi * c + ci + 1) * s] {
                *v += bv;
            }
        }
    }
}

impl<T: Scalar> Var<T> {
    /// Cross-correlation of `[B, Cin, H, W]` with `weight: [Cout, Cin, k, k]`.
    pub fn conv2d(&self, weight: &Var<T>, bias: Option<&Var<T>>, g: ConvGeometry) -> Result<Var<T>> {
        let (xs, ws) = (self.shape(), weight.shape());
        let bad = || Error::shape("conv2d", &[xs, ws]);
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != g.kernel || ws[3] != g.kernel {
            return Err(bad());
        }
        if let Some(b) = bias {
            if b.shape() != [ws[0]] {
                return Err(Error::shape("conv2d", &[xs, ws, b.shape()]));
            }
        }
        let (b, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let cout = ws[0];
        let ho = g.conv_out(h).ok_or_else(bad)?;
        let wo = g.conv_out(w).ok_or_else(bad)?;
        let kk = cin * g.kernel * g.kernel;
        let plane = ho * wo;

        let mut out = vec![T::zero(); b * cout * plane];
        let mut col = vec![T::zero(); kk * plane];
        for bi in 0..b {
            im2col(
                &self.data()[bi * cin * h * w..][..cin * h * w],
                cin,
                h,
                w,
                g,
                ho,
                wo,
                &mut col,
            );
            T::gemm(
                cout,
                kk,
                plane,
                T::one(),
                weight.data(),
                (kk as isize, 1),
                &col,
                (plane as isize, 1),
                T::zero(),
                &mut out[bi * cout * plane..][..cout * plane],
                (plane as isize, 1),
            );
        }
        if let Some(bias) = bias {
            add_bias(&mut out, bias.data(), b, plane);
        }
        let value = Tensor::from_parts(vec![b, cout, ho, wo], out);
        let x = self.value().clone();
        let wv = weight.value().clone();
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Ok(Var::record(value, &inputs, move |gy, needs| {
            let mut gx = needs[0].then(|| vec![T::zero(); b * cin * h * w]);
            let mut gw = needs[1].then(|| vec![T::zero(); cout * kk]);
            let mut col = vec![T::zero(); kk * plane];
            for bi in 0..b {
                let gyb = &gy[bi * cout * plane..][..cout * plane];
                if let Some(gw) = gw.as_mut() {
                    im2col(
                        &x.data()[bi * cin * h * w..][..cin * h * w],
                        cin,
                        h,
                        w,
                        g,
                        ho,
                        wo,
                        &mut col,
                    );
                    // dW += dY col^T
                    T::gemm(
                        cout,
                        plane,
                        kk,
                        T::one(),
                        gyb,
                        (plane as isize, 1),
                        &col,
                        (1, plane as isize),
                        T::one(),
                        gw,
                        (kk as isize, 1),
                    );
                }
                if let Some(gx) = gx.as_mut() {
                    // dcol = W^T dY
                    T::gemm(
                        kk,
                        cout,
                        plane,
                        T::one(),
                        wv.data(),
                        (1, kk as isize),
                        gyb,
                        (plane as isize, 1),
                        T::zero(),
                        &mut col,
                        (plane as isize, 1),
                    );
                    col2im(&col, cin, h, w, g, ho, wo, &mut gx[bi * cin * h * w..][..cin * h * w]);
                }
            }
            let mut grads = vec![gx, gw];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| sum_bias_grad(gy, b, cout, plane)));
            }
            grads
        }))
    }

    /// Transposed convolution of `[B, Cin, H, W]` with
    /// `weight: [Cin, Cout, k, k]`; the shape adjoint of [`Var::conv2d`].
    pub fn conv_transpose2d(&self, weight: &Var<T>, bias: Option<&Var<T>>, g: ConvGeometry) -> Result<Var<T>> {
        let (xs, ws) = (self.shape(), weight.shape());
        let bad = || Error::shape("conv_transpose2d", &[xs, ws]);
        if xs.len() != 4
            || ws.len() != 4
            || ws[0] != xs[1]
            || ws[2] != g.kernel
            || ws[3] != g.kernel
            || g.output_padding >= g.stride.max(1)
        {
            return Err(bad());
        }
        if let Some(b) = bias {
            if b.shape() != [ws[1]] {
                return Err(Error::shape("conv_transpose2d", &[xs, ws, b.shape()]));
            }
        }
        let (b, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let cout = ws[1];
        let ho = g.transpose_out(h).ok_or_else(bad)?;
        let wo = g.transpose_out(w).ok_or_else(bad)?;
        if g.conv_out(ho) != Some(h) || g.conv_out(wo) != Some(w) {
            return Err(bad());
        }
        let kk = cout * g.kernel * g.kernel;
        let plane_in = h * w;
        let plane_out = ho * wo;

        let mut out = vec![T::zero(); b * cout * plane_out];
        let mut col = vec![T::zero(); kk * plane_in];
        for bi in 0..b {
            // col = W^T X_b, W viewed as [Cin, Cout k k]
            T::gemm(
                kk,
                cin,
                plane_in,
                T::one(),
                weight.data(),
                (1, kk as isize),
                &self.data()[bi * cin * plane_in..][..cin * plane_in],
                (plane_in as isize, 1),
                T::zero(),
                &mut col,
                (plane_in as isize, 1),
            );
            col2im(
                &col,
                cout,
                ho,
                wo,
                g,
                h,
                w,
                &mut out[bi * cout * plane_out..][..cout * plane_out],
            );
        }
        if let Some(bias) = bias {
            add_bias(&mut out, bias.data(), b, plane_out);
        }
        let value = Tensor::from_parts(vec![b, cout, ho, wo], out);
        let x = self.value().clone();
        let wv = weight.value().clone();
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Ok(Var::record(value, &inputs, move |gy, needs| {
            let mut gx = needs[0].then(|| vec![T::zero(); b * cin * plane_in]);
            let mut gw = needs[1].then(|| vec![T::zero(); cin * kk]);
            let mut col = vec![T::zero(); kk * plane_in];
            for bi in 0..b {
                im2col(
                    &gy[bi * cout * plane_out..][..cout * plane_out],
                    cout,
                    ho,
                    wo,
                    g,
                    h,
                    w,
                    &mut col,
                );
                if let Some(gx) = gx.as_mut() {
                    T::gemm(
                        cin,
                        kk,
                        plane_in,
                        T::one(),
                        wv.data(),
                        (kk as isize, 1),
                        &col,
                        (plane_in as isize, 1),
                        T::zero(),
                        &mut gx[bi * cin * plane_in..][..cin * plane_in],
                        (plane_in as isize, 1),
                    );
                }
                if let Some(gw) = gw.as_mut() {
                    T::gemm(
                        cin,
                        plane_in,
                        kk,
                        T::one(),
                        &x.data()[bi * cin * plane_in..][..cin * plane_in],
                        (plane_in as isize, 1),
                        &col,
                        (1, plane_in as isize),
                        T::one(),
                        gw,
                        (kk as isize, 1),
                    );
                }
            }
            let mut grads = vec![gx, gw];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| sum_bias_grad(gy, b, cout, plane_out)));
            }
            grads
        }))
    }
}
