use super::params::{Bound, ParamBuilder, ParamId};
use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, Scalar, Var};

/// Instance-norm epsilon used throughout the networks.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geometry: ConvGeometry,
}

impl Conv2d {
    /// Weight `[cout, cin, k, k]`, bias `[cout]` initialised to zero.
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        assert!(kernel % 2 == 1, "conv kernels are odd");
        b.scope(name, |b| Self {
            weight: b.uniform("weight", &[cout, cin, kernel, kernel], cin * kernel * kernel),
            bias: b.constant("bias", &[cout], 0.0),
            geometry: ConvGeometry::new(kernel, stride, padding),
        })
    }

    /// Stride-1 convolution preserving spatial size.
    pub fn same<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, cin: usize, cout: usize, kernel: usize) -> Self {
        Self::new(b, name, cin, cout, kernel, 1, kernel / 2)
    }

    /// 3x3 stride-2 convolution halving even spatial sizes.
    pub fn down<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, cin: usize, cout: usize) -> Self {
        Self::new(b, name, cin, cout, 3, 2, 1)
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        x.conv2d(p.var(self.weight), Some(p.var(self.bias)), self.geometry)
    }
}

/// Transposed convolution; weight layout `[cin, cout, k, k]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geometry: ConvGeometry,
}

impl ConvTranspose2d {
    /// 3x3 stride-2 upsampling that exactly inverts [`Conv2d::down`]'s shape.
    pub fn up<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, cin: usize, cout: usize) -> Self {
        b.scope(name, |b| Self {
            weight: b.uniform("weight", &[cin, cout, 3, 3], cin * 9),
            bias: b.constant("bias", &[cout], 0.0),
            geometry: ConvGeometry {
                kernel: 3,
                stride: 2,
                padding: 1,
                output_padding: 1,
            },
        })
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        x.conv_transpose2d(p.var(self.weight), Some(p.var(self.bias)), self.geometry)
    }
}

/// Per-(sample, channel) spatial normalization of `[B, C, H, W]`.
pub fn instance_norm_2d<T: Scalar>(x: &Var<T>, eps: f64) -> Result<Var<T>> {
    if x.shape().len() != 4 {
        return Err(Error::shape("instance_norm_2d", &[x.shape()]));
    }
    x.instance_norm(eps)
}

/// conv → instance norm → ReLU.
pub fn conv_in_relu<T: Scalar>(conv: &Conv2d, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
    Ok(instance_norm_2d(&conv.forward(p, x)?, NORM_EPS)?.relu())
}

/// Two 3x3 convolutions with instance norm and ReLU, plus identity skip.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResBlock {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, channels: usize) -> Self {
        b.scope(name, |b| Self {
            conv1: Conv2d::same(b, "conv1", channels, channels, 3),
            conv2: Conv2d::same(b, "conv2", channels, channels, 3),
        })
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let h = conv_in_relu(&self.conv1, p, x)?;
        let h = instance_norm_2d(&self.conv2.forward(p, &h)?, NORM_EPS)?;
        x.add(&h)
    }
}

/// Dense layer `y = x W + b` with `W: [din, dout]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, din: usize, dout: usize) -> Self {
        Self::with_bias(b, name, din, dout, 0.0)
    }

    /// Like [`Linear::new`] with every bias entry starting at `bias`.
    pub fn with_bias<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, din: usize, dout: usize, bias: f64) -> Self {
        b.scope(name, |b| Self {
            weight: b.uniform("weight", &[din, dout], din),
            bias: b.constant("bias", &[dout], bias),
        })
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        x.matmul(p.var(self.weight))?.add_channel_bias(p.var(self.bias))
    }
}

/// Affine + ReLU stack with a linear final layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [din, hidden..., dout]`.
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, dims: &[usize]) -> Self {
        Self::with_output_bias(b, name, dims, 0.0)
    }

    /// Like [`Mlp::new`] with the final layer's bias starting at `bias`.
    pub fn with_output_bias<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, dims: &[usize], bias: f64) -> Self {
        assert!(dims.len() >= 2);
        let last = dims.len() - 2;
        b.scope(name, |b| Self {
            layers: dims
                .windows(2)
                .enumerate()
                .map(|(i, d)| Linear::with_bias(b, &format!("fc{i}"), d[0], d[1], if i == last { bias } else { 0.0 }))
                .collect(),
        })
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(p, &h)?;
            if i + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        Ok(h)
    }
}

/// Per-channel modulation, each `[C]` or `[B, C]`.
#[derive(Clone)]
pub struct AdaInParams<T> {
    pub gamma: Var<T>,
    pub alpha: Var<T>,
}

/// `gamma_c (h - mu_c) / sqrt(var_c + eps) + alpha_c` over `h: [B, C, H, W]`.
pub fn adain<T: Scalar>(h: &Var<T>, params: &AdaInParams<T>, eps: f64) -> Result<Var<T>> {
    let c = h.shape().get(1).copied().unwrap_or(0);
    if params.gamma.shape().last() != Some(&c) || params.alpha.shape().last() != Some(&c) {
        return Err(Error::shape(
            "adain",
            &[h.shape(), params.gamma.shape(), params.alpha.shape()],
        ));
    }
    instance_norm_2d(h, eps)?.channel_affine(&params.gamma, &params.alpha)
}
