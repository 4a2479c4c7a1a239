//! Foreground, background and discriminator-free generator networks, and
//! the final fusion.
//!
//! The foreground network encodes the source foreground concatenated with
//! its coordinate map into four scales, moves each scale to the target pose
//! with a lifting-and-projection block, and decodes U-Net style with the
//! projected maps as skips. An appearance branch (ADCNet) modulates the
//! last decoder feature with AdaIN before the RGB and mask heads.

#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};

use crate::body::{BodyMesh, Camera};
use crate::error::{Error, Result};
use crate::graph::{LiftProjectGeometry, LpBlock, MeshGraph};
use crate::nn::{
    adain, conv_in_relu, AdaInParams, Bound, Conv2d, ConvTranspose2d, Mlp, ParamBuilder, ResBlock, NORM_EPS,
};
use crate::tensor::{Scalar, Var};

pub const NUM_SCALES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Encoder widths at full, 1/2, 1/4 and 1/8 resolution.
    pub fg_widths: [usize; NUM_SCALES],
    pub adcnet_width: usize,
    pub adcnet_hidden: usize,
    /// Background encoder widths at 1/2, 1/4, 1/8 resolution.
    pub bg_widths: [usize; 3],
    pub bg_res_blocks: usize,
    /// Lifting and projection only, no graph convolutions.
    pub disable_3dp: bool,
    /// No appearance branch; the decoder feature goes straight to the heads.
    pub disable_adcnet: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            fg_widths: [8, 16, 24, 32],
            adcnet_width: 16,
            adcnet_hidden: 32,
            bg_widths: [8, 16, 32],
            bg_res_blocks: 6,
            disable_3dp: false,
            disable_adcnet: false,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fg_widths.iter().chain(&self.bg_widths).any(|&w| w == 0)
            || self.adcnet_width == 0
            || self.adcnet_hidden == 0
        {
            return Err(Error::Config("network widths must be positive".into()));
        }
        Ok(())
    }
}

/// Global appearance code: stem conv, two residual blocks, average pool,
/// then one MLP each for the AdaIN scale and shift.
#[derive(Clone, Debug)]
pub struct Adcnet {
    pub stem: Conv2d,
    pub res: [ResBlock; 2],
    pub gamma: Mlp,
    pub alpha: Mlp,
}

impl Adcnet {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, width: usize, hidden: usize, out: usize) -> Self {
        b.scope("adcnet", |b| Self {
            stem: Conv2d::down(b, "stem", 3, width),
            res: [ResBlock::new(b, "res0", width), ResBlock::new(b, "res1", width)],
            // Scale starts near 1 so the block begins close to a plain
            // instance norm instead of scaling features towards zero.
            gamma: Mlp::with_output_bias(b, "gamma", &[width, hidden, out], 1.0),
            alpha: Mlp::new(b, "alpha", &[width, hidden, out]),
        })
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, image: &Var<T>) -> Result<AdaInParams<T>> {
        let mut h = self.stem.forward(p, image)?.relu();
        for r in &self.res {
            h = r.forward(p, &h)?;
        }
        let code = h.global_avg_pool()?;
        Ok(AdaInParams {
            gamma: self.gamma.forward(p, &code)?,
            alpha: self.alpha.forward(p, &code)?,
        })
    }
}

/// Per-sample geometry for all four scales.
#[derive(Clone, Debug)]
pub struct TransferGeometry {
    pub scales: Vec<LiftProjectGeometry>,
}

impl TransferGeometry {
    /// Geometry at full resolution `height x width` and the three halvings.
    pub fn new(
        source: &BodyMesh,
        source_cam: &Camera,
        target: &BodyMesh,
        target_cam: &Camera,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if !height.is_multiple_of(8) || !width.is_multiple_of(8) || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "resolution {height}x{width} is not a positive multiple of 8"
            )));
        }
        let scales = (0..NUM_SCALES)
            .map(|l| LiftProjectGeometry::new(source, source_cam, target, target_cam, height >> l, width >> l))
            .collect::<Result<_>>()?;
        Ok(Self { scales })
    }

    pub fn scale(&self, l: usize) -> &LiftProjectGeometry {
        &self.scales[l]
    }
}

#[derive(Clone, Debug)]
pub struct ForegroundGenerator {
    pub config: GeneratorConfig,
    pub stem: Conv2d,
    pub down: [Conv2d; 3],
    pub blocks: [LpBlock; NUM_SCALES],
    pub bottleneck: ResBlock,
    pub up: [ConvTranspose2d; 3],
    /// Merges the upsampled feature with the projected skip, per scale
    /// 2, 1, 0.
    pub merge: [Conv2d; 3],
    /// Residual refinement after merging at scales 2 and 1.
    pub refine: [ResBlock; 2],
    pub adcnet: Option<Adcnet>,
    pub head: Conv2d,
}

/// Foreground output: RGB in (-1, 1) and soft mask in (0, 1).
pub struct ForegroundOutput<T> {
    pub rgb: Var<T>,
    pub mask: Var<T>,
}

impl ForegroundGenerator {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, config: &GeneratorConfig) -> Self {
        let w = config.fg_widths;
        let process = !config.disable_3dp;
        b.scope("fg", |b| Self {
            config: config.clone(),
            stem: Conv2d::same(b, "stem", 6, w[0], 3),
            down: [
                Conv2d::down(b, "down0", w[0], w[1]),
                Conv2d::down(b, "down1", w[1], w[2]),
                Conv2d::down(b, "down2", w[2], w[3]),
            ],
            blocks: [
                LpBlock::new(b, "lpb0", w[0], process),
                LpBlock::new(b, "lpb1", w[1], process),
                LpBlock::new(b, "lpb2", w[2], process),
                LpBlock::new(b, "lpb3", w[3], process),
            ],
            bottleneck: ResBlock::new(b, "bottleneck", w[3]),
            up: [
                ConvTranspose2d::up(b, "up2", w[3], w[2]),
                ConvTranspose2d::up(b, "up1", w[2], w[1]),
                ConvTranspose2d::up(b, "up0", w[1], w[0]),
            ],
            merge: [
                Conv2d::same(b, "merge2", 2 * w[2], w[2], 3),
                Conv2d::same(b, "merge1", 2 * w[1], w[1], 3),
                Conv2d::same(b, "merge0", 2 * w[0], w[0], 3),
            ],
            refine: [ResBlock::new(b, "refine2", w[2]), ResBlock::new(b, "refine1", w[1])],
            adcnet: (!config.disable_adcnet).then(|| Adcnet::new(b, config.adcnet_width, config.adcnet_hidden, w[0])),
            head: Conv2d::same(b, "head", w[0], 4, 3),
        })
    }

    /// Encoder feature maps at the four scales.
    pub fn encode<T: Scalar>(&self, p: &Bound<T>, image: &Var<T>, coords: &Var<T>) -> Result<Vec<Var<T>>> {
        let x = Var::concat(&[image, coords], 1)?;
        let mut feats = vec![conv_in_relu(&self.stem, p, &x)?];
        for d in &self.down {
            let h = conv_in_relu(d, p, feats.last().unwrap())?;
            feats.push(h);
        }
        Ok(feats)
    }

    /// `image`, `coords`: `[B, 3, H, W]` source foreground and its
    /// coordinate map; one geometry per sample.
    pub fn forward<T: Scalar>(
        &self,
        p: &Bound<T>,
        graph: &MeshGraph,
        image: &Var<T>,
        coords: &Var<T>,
        geoms: &[&TransferGeometry],
    ) -> Result<ForegroundOutput<T>> {
        let s = image.shape();
        if s.len() != 4 || s[1] != 3 || coords.shape() != s || geoms.len() != s[0] {
            return Err(Error::shape("foreground", &[s, coords.shape(), &[geoms.len()]]));
        }
        if !s[2].is_multiple_of(8) || !s[3].is_multiple_of(8) {
            return Err(Error::InvalidArgument(format!(
                "foreground: resolution {}x{} is not divisible by 8",
                s[2], s[3]
            )));
        }
        let feats = self.encode(p, image, coords)?;
        let mut warped = Vec::with_capacity(NUM_SCALES);
        for (l, (f, block)) in feats.iter().zip(&self.blocks).enumerate() {
            let g: Vec<&LiftProjectGeometry> = geoms.iter().map(|t| t.scale(l)).collect();
            warped.push(block.forward(p, graph, f, &g)?);
        }
        let mut h = self.bottleneck.forward(p, &warped[3])?;
        for (k, l) in [2usize, 1, 0].into_iter().enumerate() {
            let u = self.up[k].forward(p, &h)?.relu();
            h = conv_in_relu(&self.merge[k], p, &Var::concat(&[&u, &warped[l]], 1)?)?;
            if k < 2 {
                h = self.refine[k].forward(p, &h)?;
            }
        }
        if let Some(adc) = &self.adcnet {
            h = adain(&h, &adc.forward(p, image)?, NORM_EPS)?;
        }
        let out = self.head.forward(p, &h)?;
        Ok(ForegroundOutput {
            rgb: out.slice(1, 0, 3)?.tanh(),
            mask: out.slice(1, 3, 1)?.sigmoid(),
        })
    }
}

/// Encoder / residual / decoder inpainting network.
#[derive(Clone, Debug)]
pub struct BackgroundGenerator {
    pub down: [Conv2d; 3],
    pub res: Vec<ResBlock>,
    pub up: [ConvTranspose2d; 3],
    pub head: Conv2d,
}

impl BackgroundGenerator {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, config: &GeneratorConfig) -> Self {
        let w = config.bg_widths;
        b.scope("bg", |b| Self {
            down: [
                Conv2d::down(b, "down0", 3, w[0]),
                Conv2d::down(b, "down1", w[0], w[1]),
                Conv2d::down(b, "down2", w[1], w[2]),
            ],
            res: (0..config.bg_res_blocks)
                .map(|i| ResBlock::new(b, &format!("res{i}"), w[2]))
                .collect(),
            up: [
                ConvTranspose2d::up(b, "up2", w[2], w[1]),
                ConvTranspose2d::up(b, "up1", w[1], w[0]),
                ConvTranspose2d::up(b, "up0", w[0], w[0]),
            ],
            head: Conv2d::same(b, "head", w[0], 3, 3),
        })
    }

    /// `[B, 3, H, W]` masked source to a full-frame background in (-1, 1).
    pub fn forward<T: Scalar>(&self, p: &Bound<T>, image: &Var<T>) -> Result<Var<T>> {
        let s = image.shape();
        if s.len() != 4 || s[1] != 3 || !s[2].is_multiple_of(8) || !s[3].is_multiple_of(8) {
            return Err(Error::shape("background", &[s]));
        }
        let mut h = image.clone();
        for d in &self.down {
            h = conv_in_relu(d, p, &h)?;
        }
        for r in &self.res {
            h = r.forward(p, &h)?;
        }
        for u in &self.up {
            h = crate::nn::instance_norm_2d(&u.forward(p, &h)?, NORM_EPS)?.relu();
        }
        Ok(self.head.forward(p, &h)?.tanh())
    }
}

/// `fg * mask + bg * (1 - mask)` with a one-channel mask broadcast over
/// colour channels. Mask values outside `[0, 1]` are an error.
pub fn fuse<T: Scalar>(fg: &Var<T>, bg: &Var<T>, mask: &Var<T>) -> Result<Var<T>> {
    if fg.shape() != bg.shape() {
        return Err(Error::shape("fuse", &[fg.shape(), bg.shape(), mask.shape()]));
    }
    if let Some(v) = mask.data().iter().find(|&&m| !(m >= T::zero() && m <= T::one())) {
        return Err(Error::InvalidArgument(format!("fuse: mask value {v} outside [0, 1]")));
    }
    fg.mul_mask(mask)?.add(&bg.mul_mask(&mask.one_minus())?)
}
