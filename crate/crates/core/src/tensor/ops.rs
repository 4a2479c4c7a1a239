//! Elementwise, structural and channel-wise primitives.
//!
//! Channel-wise ops assume a channel-first layout `[B, C, ...]`, where all
//! trailing axes are flattened into one "spatial" extent `S`.

use std::sync::Arc;

use super::{numel, Scalar, Tensor, Var};
use crate::error::{Error, Result};

fn same_shape<T: Scalar>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, &[a.shape(), b.shape()]));
    }
    Ok(())
}

/// Splits `[B, C, ...]` into `(B, C, S)`.
pub(crate) fn bcs(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(op, &[shape]));
    }
    Ok((shape[0], shape[1], numel(&shape[2..])))
}

impl<T: Scalar> Var<T> {
    fn unary(&self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var<T> {
        let out: Vec<T> = self.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::from_parts(self.shape().to_vec(), out);
        let x = self.value().clone();
        let y = value.clone();
        Var::record(value, &[self], move |g, _| {
            let gx = g
                .iter()
                .zip(x.data().iter().zip(y.data()))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("add", self, other)?;
        let out = self.data().iter().zip(other.data()).map(|(&a, &b)| a + b).collect();
        let value = Tensor::from_parts(self.shape().to_vec(), out);
        Ok(Var::record(value, &[self, other], |g, needs| {
            vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())]
        }))
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("sub", self, other)?;
        let out = self.data().iter().zip(other.data()).map(|(&a, &b)| a - b).collect();
        let value = Tensor::from_parts(self.shape().to_vec(), out);
        Ok(Var::record(value, &[self, other], |g, needs| {
            vec![
                needs[0].then(|| g.to_vec()),
                needs[1].then(|| g.iter().map(|&v| -v).collect()),
            ]
        }))
    }

    /// Hadamard product.
    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("mul", self, other)?;
        let out = self.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect();
        let value = Tensor::from_parts(self.shape().to_vec(), out);
        let a = self.value().clone();
        let b = other.value().clone();
        Ok(Var::record(value, &[self, other], move |g, needs| {
            let ga = needs[0].then(|| g.iter().zip(b.data()).map(|(&g, &b)| g * b).collect());
            let gb = needs[1].then(|| g.iter().zip(a.data()).map(|(&g, &a)| g * a).collect());
            vec![ga, gb]
        }))
    }

    pub fn scale(&self, c: f64) -> Var<T> {
        let c = T::from_f64_lossy(c);
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Var<T> {
        let c = T::from_f64_lossy(c);
        self.unary(move |x| x + c, |_, _| T::one())
    }

    pub fn neg(&self) -> Var<T> {
        self.scale(-1.0)
    }

    /// `1 - x`, used for complementary masks.
    pub fn one_minus(&self) -> Var<T> {
        self.unary(|x| T::one() - x, |_, _| -T::one())
    }

    pub fn relu(&self) -> Var<T> {
        self.unary(
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<T> {
        let s = T::from_f64_lossy(slope);
        self.unary(
            move |x| if x > T::zero() { x } else { x * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    pub fn tanh(&self) -> Var<T> {
        self.unary(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Var<T> {
        self.unary(|x| T::one() / (T::one() + (-x).exp()), |_, y| y * (T::one() - y))
    }

    /// Absolute value; the subgradient at 0 is 0.
    pub fn abs(&self) -> Var<T> {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn square(&self) -> Var<T> {
        let two = T::from_f64_lossy(2.0);
        self.unary(|x| x * x, move |x, _| two * x)
    }

    /// Sum of all elements in index order.
    pub fn sum(&self) -> Var<T> {
        let total = self.data().iter().fold(T::zero(), |acc, &v| acc + v);
        let n = self.numel();
        Var::record(Tensor::scalar(total), &[self], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self) -> Var<T> {
        let n = self.numel();
        let inv = T::one() / T::from_usize(n.max(1)).expect("usize to float");
        let total = self.data().iter().fold(T::zero(), |acc, &v| acc + v);
        Var::record(Tensor::scalar(total * inv), &[self], move |g, _| {
            vec![Some(vec![g[0] * inv; n])]
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<T>> {
        let value = self.value().reshape(shape)?;
        Ok(Var::record(value, &[self], |g, _| vec![Some(g.to_vec())]))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Var<T>], axis: usize) -> Result<Var<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(Error::shape("concat", &[first.shape()]));
        }
        for p in parts {
            let ok = p.shape().len() == rank
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                let shapes: Vec<&[usize]> = parts.iter().map(|p| p.shape()).collect();
                return Err(Error::shape("concat", &shapes));
            }
        }
        let outer = numel(&first.shape()[..axis]);
        let inner = numel(&first.shape()[axis + 1..]);
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total / inner.max(1);
        if inner == 0 {
            shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        }
        let value = Tensor::from_parts(shape, out);
        Ok(Var::record(value, parts, move |g, needs| {
            let mut offset = 0;
            widths
                .iter()
                .zip(needs)
                .map(|(&w, &need)| {
                    let start = offset;
                    offset += w;
                    need.then(|| {
                        let mut gi = Vec::with_capacity(outer * w);
                        for o in 0..outer {
                            let base = o * total + start;
                            gi.extend_from_slice(&g[base..base + w]);
                        }
                        gi
                    })
                })
                .collect()
        }))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::InvalidArgument(format!(
                "slice axis {axis} [{start}, {}) of shape {shape:?}",
                start + len
            )));
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let full = shape[axis] * inner;
        let w = len * inner;
        let mut out = Vec::with_capacity(outer * w);
        for o in 0..outer {
            let base = o * full + start * inner;
            out.extend_from_slice(&self.data()[base..base + w]);
        }
        let mut new_shape = shape.to_vec();
        new_shape[axis] = len;
        let value = Tensor::from_parts(new_shape, out);
        let n = self.numel();
        Ok(Var::record(value, &[self], move |g, _| {
            let mut gx = vec![T::zero(); n];
            for o in 0..outer {
                let base = o * full + start * inner;
                gx[base..base + w].copy_from_slice(&g[o * w..(o + 1) * w]);
            }
            vec![Some(gx)]
        }))
    }

    /// Plain 2-D matrix product `[m, k] x [k, n]`.
    pub fn matmul(&self, other: &Var<T>) -> Result<Var<T>> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(Error::shape("matmul", &[a, b]));
        }
        let (m, k, n) = (a[0], a[1], b[1]);
        let mut out = vec![T::zero(); m * n];
        let row = |c: usize| (c as isize, 1isize);
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.data(),
            row(k),
            other.data(),
            row(n),
            T::zero(),
            &mut out,
            row(n),
        );
        let value = Tensor::from_parts(vec![m, n], out);
        let av = self.value().clone();
        let bv = other.value().clone();
        Ok(Var::record(value, &[self, other], move |g, needs| {
            // dA = G B^T, dB = A^T G
            let ga = needs[0].then(|| {
                let mut ga = vec![T::zero(); m * k];
                T::gemm(
                    m,
                    n,
                    k,
                    T::one(),
                    g,
                    row(n),
                    bv.data(),
                    (1, n as isize),
                    T::zero(),
                    &mut ga,
                    row(k),
                );
                ga
            });
            let gb = needs[1].then(|| {
                let mut gb = vec![T::zero(); k * n];
                T::gemm(
                    k,
                    m,
                    n,
                    T::one(),
                    av.data(),
                    (1, k as isize),
                    g,
                    row(n),
                    T::zero(),
                    &mut gb,
                    row(n),
                );
                gb
            });
            vec![ga, gb]
        }))
    }

    /// `x[b, c, s] + bias[c]`.
    pub fn add_channel_bias(&self, bias: &Var<T>) -> Result<Var<T>> {
        let (b, c, s) = bcs("add_channel_bias", self.shape())?;
        if bias.shape() != [c] {
            return Err(Error::shape("add_channel_bias", &[self.shape(), bias.shape()]));
        }
        let mut out = self.data().to_vec();
        for (i, v) in out.iter_mut().enumerate() {
            *v += bias.data()[(i / s) % c];
        }
        let value = Tensor::from_parts(self.shape().to_vec(), out);
        Ok(Var::record(value, &[self, bias], move |g, needs| {
            let gb = needs[1].then(|| {
                let mut gb = vec![T::zero(); c];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * s;
                        gb[ci] += g[base..base + s].iter().fold(T::zero(), |a, &v| a + v);
                    }
                }
                gb
            });
            vec![needs[0].then(|| g.to_vec()), gb]
        }))
    }

    /// `scale[., c] * x[b, c, s] + shift[., c]` where `scale` and `shift`
    /// are either `[C]` (shared) or `[B, C]` (per sample).
    pub fn channel_affine(&self, scale: &Var<T>, shift: &Var<T>) -> Result<Var<T>> {
        let (b, c, s) = bcs("channel_affine", self.shape())?;
        let per_sample = match (scale.shape(), shift.shape()) {
            (&[sc], &[sh]) if sc == c && sh == c => false,
            (&[sb, sc], &[hb, hc]) if sb == b && hb == b && sc == c && hc == c => true,
            _ => {
                return Err(Error::shape(
                    "channel_affine",
                    &[self.shape(), scale.shape(), shift.shape()],
                ))
            }
        };
        let pidx = move |bi: usize, ci: usize| if per_sample { bi * c + ci } else { ci };
        let mut out = vec![T::zero(); self.numel()];
        for bi in 0..b {
            for ci in 0..c {
                let (g, a) = (scale.data()[pidx(bi, ci)], shift.data()[pidx(bi, ci)]);
                let base = (bi * c + ci) * s;
                for k in base..base + s {
                    out[k] = g * self.data()[k] + a;
                }
            }
        }
        let value = Tensor::from_parts(self.shape().to_vec(), out);
        let x = self.value().clone();
        let sc = scale.value().clone();
        let pn = sc.numel();
        Ok(Var::record(value, &[self, scale, shift], move |g, needs| {
            let mut gx = needs[0].then(|| vec![T::zero(); b * c * s]);
            let mut gs = needs[1].then(|| vec![T::zero(); pn]);
            let mut gh = needs[2].then(|| vec![T::zero(); pn]);
            for bi in 0..b {
                for ci in 0..c {
                    let p = pidx(bi, ci);
                    let base = (bi * c + ci) * s;
                    let gslice = &g[base..base + s];
                    if let Some(gx) = gx.as_mut() {
                        let f = sc.data()[p];
                        for (o, &gv) in gx[base..base + s].iter_mut().zip(gslice) {
                            *o = gv * f;
                        }
                    }
                    if let Some(gs) = gs.as_mut() {
                        gs[p] += gslice
                            .iter()
                            .zip(&x.data()[base..base + s])
                            .fold(T::zero(), |acc, (&gv, &xv)| acc + gv * xv);
                    }
                    if let Some(gh) = gh.as_mut() {
                        gh[p] += gslice.iter().fold(T::zero(), |acc, &gv| acc + gv);
                    }
                }
            }
            vec![gx, gs, gh]
        }))
    }

    /// `x[b, c, s] * mask[b, 0, s]`, broadcasting a one-channel mask.
    pub fn mul_mask(&self, mask: &Var<T>) -> Result<Var<T>> {
        let (b, c, s) = bcs("mul_mask", self.shape())?;
        let (mb, mc, ms) = bcs("mul_mask", mask.shape())?;
        if (mb, mc, ms) != (b, 1, s) {
            return Err(Error::shape("mul_mask", &[self.shape(), mask.shape()]));
        }
        let mut out = vec![T::zero(); self.numel()];
        for bi in 0..b {
            let m = &mask.data()[bi * s..(bi + 1) * s];
            for ci in 0..c {
                let base = (bi * c + ci) * s;
                for (k, &mv) in m.iter().enumerate() {
                    out[base + k] = self.data()[base + k] * mv;
                }
            }
        }
        let value = Tensor::from_parts(self.shape().to_vec(), out);
        let x = self.value().clone();
        let mv = mask.value().clone();
        Ok(Var::record(value, &[self, mask], move |g, needs| {
            let gx = needs[0].then(|| {
                let mut gx = vec![T::zero(); b * c * s];
                for bi in 0..b {
                    let m = &mv.data()[bi * s..(bi + 1) * s];
                    for ci in 0..c {
                        let base = (bi * c + ci) * s;
                        for (k, &m) in m.iter().enumerate() {
                            gx[base + k] = g[base + k] * m;
                        }
                    }
                }
                gx
            });
            let gm = needs[1].then(|| {
                let mut gm = vec![T::zero(); b * s];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * s;
                        for k in 0..s {
                            gm[bi * s + k] += g[base + k] * x.data()[base + k];
                        }
                    }
                }
                gm
            });
            vec![gx, gm]
        }))
    }

    /// Mean over the spatial extent: `[B, C, ...] -> [B, C]`.
    pub fn global_avg_pool(&self) -> Result<Var<T>> {
        let (b, c, s) = bcs("global_avg_pool", self.shape())?;
        if s == 0 {
            return Err(Error::shape("global_avg_pool", &[self.shape()]));
        }
        let inv = T::one() / T::from_usize(s).expect("usize to float");
        let out = (0..b * c)
            .map(|i| self.data()[i * s..(i + 1) * s].iter().fold(T::zero(), |a, &v| a + v) * inv)
            .collect();
        let value = Tensor::from_parts(vec![b, c], out);
        Ok(Var::record(value, &[self], move |g, _| {
            let mut gx = vec![T::zero(); b * c * s];
            for (i, &gv) in g.iter().enumerate() {
                gx[i * s..(i + 1) * s].fill(gv * inv);
            }
            vec![Some(gx)]
        }))
    }

    /// Per-(sample, channel) normalization over the trailing axes:
    /// `(x - mean) / sqrt(var + eps)` with the biased variance.
    pub fn instance_norm(&self, eps: f64) -> Result<Var<T>> {
        let (b, c, s) = bcs("instance_norm", self.shape())?;
        if s == 0 {
            return Err(Error::shape("instance_norm", &[self.shape()]));
        }
        let sn = T::from_usize(s).expect("usize to float");
        let mut out = vec![T::zero(); self.numel()];
        let mut inv_std = vec![T::zero(); b * c];
        // Moments accumulate in f64 so that f32 outputs stay centred to
        // rounding level.
        for i in 0..b * c {
            let x = &self.data()[i * s..(i + 1) * s];
            let mu = x.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / s as f64;
            let var = x.iter().map(|v| (v.to_f64_lossy() - mu).powi(2)).sum::<f64>() / s as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = T::from_f64_lossy(inv);
            for (o, &v) in out[i * s..(i + 1) * s].iter_mut().zip(x) {
                *o = T::from_f64_lossy((v.to_f64_lossy() - mu) * inv);
            }
        }
        let value = Tensor::from_parts(self.shape().to_vec(), out);
        let y = value.clone();
        Ok(Var::record(value, &[self], move |g, _| {
            let mut gx = vec![T::zero(); b * c * s];
            for i in 0..b * c {
                let gs = &g[i * s..(i + 1) * s];
                let ys = &y.data()[i * s..(i + 1) * s];
                let sum_g = gs.iter().fold(T::zero(), |a, &v| a + v);
                let sum_gy = gs.iter().zip(ys).fold(T::zero(), |a, (&gv, &yv)| a + gv * yv);
                let inv = inv_std[i];
                for k in 0..s {
                    gx[i * s + k] = inv * (gs[k] - sum_g / sn - ys[k] * sum_gy / sn);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Per-sample channel mixing `y_b = W^T x_b` for `x: [B, Cin, S]`,
    /// `W: [Cin, Cout]` (the `X W` product written channel-first).
    pub fn channel_mix(&self, weight: &Var<T>) -> Result<Var<T>> {
        let (b, cin, s) = bcs("channel_mix", self.shape())?;
        let ws = weight.shape();
        if ws.len() != 2 || ws[0] != cin {
            return Err(Error::shape("channel_mix", &[self.shape(), ws]));
        }
        let cout = ws[1];
        let mut out = vec![T::zero(); b * cout * s];
        for bi in 0..b {
            T::gemm(
                cout,
                cin,
                s,
                T::one(),
                weight.data(),
                (1, cout as isize),
                &self.data()[bi * cin * s..(bi + 1) * cin * s],
                (s as isize, 1),
                T::zero(),
                &mut out[bi * cout * s..(bi + 1) * cout * s],
                (s as isize, 1),
            );
        }
        let mut shape = self.shape().to_vec();
        shape[1] = cout;
        let value = Tensor::from_parts(shape, out);
        let x = self.value().clone();
        let w = weight.value().clone();
        Ok(Var::record(value, &[self, weight], move |g, needs| {
            let gx = needs[0].then(|| {
                let mut gx = vec![T::zero(); b * cin * s];
                for bi in 0..b {
                    // dX_b = W dY_b
                    T::gemm(
                        cin,
                        cout,
                        s,
                        T::one(),
                        w.data(),
                        (cout as isize, 1),
                        &g[bi * cout * s..(bi + 1) * cout * s],
                        (s as isize, 1),
                        T::zero(),
                        &mut gx[bi * cin * s..(bi + 1) * cin * s],
                        (s as isize, 1),
                    );
                }
                gx
            });
            let gw = needs[1].then(|| {
                let mut gw = vec![T::zero(); cin * cout];
                for bi in 0..b {
                    // dW += X_b dY_b^T
                    T::gemm(
                        cin,
                        s,
                        cout,
                        T::one(),
                        &x.data()[bi * cin * s..(bi + 1) * cin * s],
                        (s as isize, 1),
                        &g[bi * cout * s..(bi + 1) * cout * s],
                        (1, s as isize),
                        T::one(),
                        &mut gw,
                        (cout as isize, 1),
                    );
                }
                gw
            });
            vec![gx, gw]
        }))
    }

    /// Applies a fixed linear map given by explicit `(out, in, weight)`
    /// triplets per sample; `x: [B, C, Nin] -> [B, C, Nout]`. Used by the
    /// sampling and rasterization operators whose weights are geometry,
    /// not parameters.
    pub(crate) fn fixed_linear(&self, op: &'static str, n_out: usize, maps: Arc<Vec<SparseMap>>) -> Result<Var<T>> {
        let (b, c, n_in) = bcs(op, self.shape())?;
        if maps.len() != b || maps.iter().any(|m| m.n_in != n_in || m.n_out != n_out) {
            return Err(Error::shape(op, &[self.shape()]));
        }
        let mut out = vec![T::zero(); b * c * n_out];
        for (bi, map) in maps.iter().enumerate() {
            for ci in 0..c {
                let xin = &self.data()[(bi * c + ci) * n_in..(bi * c + ci + 1) * n_in];
                let dst = &mut out[(bi * c + ci) * n_out..(bi * c + ci + 1) * n_out];
                map.apply(xin, dst);
            }
        }
        let mut shape = self.shape()[..2].to_vec();
        shape.push(n_out);
        let value = Tensor::from_parts(shape, out);
        Ok(Var::record(value, &[self], move |g, _| {
            let mut gx = vec![T::zero(); b * c * n_in];
            for (bi, map) in maps.iter().enumerate() {
                for ci in 0..c {
                    let gs = &g[(bi * c + ci) * n_out..(bi * c + ci + 1) * n_out];
                    let dst = &mut gx[(bi * c + ci) * n_in..(bi * c + ci + 1) * n_in];
                    map.apply_transpose(gs, dst);
                }
            }
            vec![Some(gx)]
        }))
    }
}

/// Sparse row-major linear map with f64 weights, in a fixed entry order.
#[derive(Clone, Debug, Default)]
pub struct SparseMap {
    pub n_in: usize,
    pub n_out: usize,
    /// `row_start[o]..row_start[o + 1]` indexes `cols`/`weights` for row `o`.
    pub row_start: Vec<usize>,
    pub cols: Vec<u32>,
    pub weights: Vec<f64>,
}

impl SparseMap {
    pub fn from_rows(n_in: usize, rows: impl IntoIterator<Item = Vec<(usize, f64)>>) -> Self {
        let mut map = SparseMap {
            n_in,
            row_start: vec![0],
            ..Default::default()
        };
        for row in rows {
            for (col, w) in row {
                debug_assert!(col < n_in);
                map.cols.push(col as u32);
                map.weights.push(w);
            }
            map.row_start.push(map.cols.len());
            map.n_out += 1;
        }
        map
    }

    pub fn row(&self, o: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_start[o]..self.row_start[o + 1];
        self.cols[r.clone()]
            .iter()
            .zip(&self.weights[r])
            .map(|(&c, &w)| (c as usize, w))
    }

    pub fn apply<T: Scalar>(&self, x: &[T], y: &mut [T]) {
        for (o, dst) in y.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (c, w) in self.row(o) {
                acc += T::from_f64_lossy(w) * x[c];
            }
            *dst = acc;
        }
    }

    /// `x += M^T y`, rows visited in increasing order.
    pub fn apply_transpose<T: Scalar>(&self, y: &[T], x: &mut [T]) {
        for (o, &gy) in y.iter().enumerate() {
            if gy == T::zero() {
                continue;
            }
            for (c, w) in self.row(o) {
                x[c] += T::from_f64_lossy(w) * gy;
            }
        }
    }
}
