//! Training objectives: reconstruction, perceptual, least-squares
//! adversarial and mask losses, and the PatchGAN discriminator.
//!
//! Every norm is reduced by a mean over elements so that the loss weights
//! do not depend on resolution.


use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{instance_norm_2d, Bound, Conv2d, ParamBuilder, ParamStore, NORM_EPS};
use crate::tensor::{Scalar, Var};

const LEAK: f64 = 0.2;

fn same_shape<T: Scalar>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, &[a.shape(), b.shape()]));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn rec_loss<T: Scalar>(pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
    same_shape("rec_loss", pred, target)?;
    Ok(pred.sub(target)?.abs().mean())
}

/// Sum of squared differences between horizontally and vertically adjacent
/// pixels of `[B, 1, H, W]` (or any `[..., H, W]`).
pub fn total_variation<T: Scalar>(a: &Var<T>) -> Result<Var<T>> {
    let s = a.shape();
    if s.len() < 2 {
        return Err(Error::shape("total_variation", &[s]));
    }
    let (ya, xa) = (s.len() - 2, s.len() - 1);
    let (h, w) = (s[ya], s[xa]);
    let mut total: Option<Var<T>> = None;
    if w > 1 {
        let d = a.slice(xa, 1, w - 1)?.sub(&a.slice(xa, 0, w - 1)?)?;
        total = Some(d.square().sum());
    }
    if h > 1 {
        let d = a.slice(ya, 1, h - 1)?.sub(&a.slice(ya, 0, h - 1)?)?.square().sum();
        total = Some(match total {
            Some(t) => t.add(&d)?,
            None => d,
        });
    }
    Ok(total.unwrap_or_else(|| a.scale(0.0).sum()))
}

/// Squared error to the silhouette plus total variation, both divided by
/// the number of mask elements.
pub fn mask_loss<T: Scalar>(mask: &Var<T>, silhouette: &Var<T>) -> Result<Var<T>> {
    same_shape("mask_loss", mask, silhouette)?;
    let n = mask.numel().max(1) as f64;
    mask.sub(silhouette)?
        .square()
        .mean()
        .add(&total_variation(mask)?.scale(1.0 / n))
}

/// Discriminator objective: real scores pushed to `+1`, fake to `-1`.
pub fn lsgan_d_loss<T: Scalar>(real_score: &Var<T>, fake_score: &Var<T>) -> Result<Var<T>> {
    let r = real_score.add_scalar(-1.0).square().mean();
    let f = fake_score.add_scalar(1.0).square().mean();
    r.add(&f)
}

/// Generator objective: fake scores pushed to `0`.
pub fn lsgan_g_loss<T: Scalar>(fake_score: &Var<T>) -> Var<T> {
    fake_score.square().mean()
}

/// Frozen three-level convolutional feature pyramid used in place of a
/// pretrained classification backbone.
#[derive(Clone)]
pub struct PerceptualExtractor<T> {
    store: ParamStore<T>,
    levels: [Conv2d; 3],
}

pub const PERCEPTUAL_SEED: u64 = 0x5eed_9e7c;

impl<T: Scalar> PerceptualExtractor<T> {
    pub fn new() -> Self {
        let mut store = ParamStore::new();
        let mut b = ParamBuilder::new(&mut store, PERCEPTUAL_SEED);
        let levels = [
            Conv2d::same(&mut b, "perc0", 3, 8, 3),
            Conv2d::down(&mut b, "perc1", 8, 16),
            Conv2d::down(&mut b, "perc2", 16, 32),
        ];
        Self { store, levels }
    }

    pub fn features(&self, x: &Var<T>) -> Result<Vec<Var<T>>> {
        let p = self.store.bind(None);
        let mut out = Vec::with_capacity(3);
        let mut h = x.clone();
        for conv in &self.levels {
            h = conv.forward(&p, &h)?.leaky_relu(LEAK);
            out.push(h.clone());
        }
        Ok(out)
    }

    /// Sum over levels of the mean absolute feature difference.
    pub fn loss(&self, pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
        same_shape("perc_loss", pred, target)?;
        let fp = self.features(pred)?;
        let ft = self.features(target)?;
        let mut total = rec_loss(&fp[0], &ft[0])?;
        for (a, b) in fp.iter().zip(&ft).skip(1) {
            total = total.add(&rec_loss(a, b)?)?;
        }
        Ok(total)
    }
}

impl<T: Scalar> Default for PerceptualExtractor<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Fully convolutional patch critic on `concat(image, coordinate map)`;
/// four stride-2 convolutions then a one-channel head, so the score map
/// is `H/16 x W/16`.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator {
    pub down: [Conv2d; 4],
    pub head: Conv2d,
}

impl PatchDiscriminator {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, width: usize) -> Self {
        b.scope("disc", |b| Self {
            down: [
                Conv2d::down(b, "down0", 6, width),
                Conv2d::down(b, "down1", width, 2 * width),
                Conv2d::down(b, "down2", 2 * width, 4 * width),
                Conv2d::down(b, "down3", 4 * width, 8 * width),
            ],
            head: Conv2d::same(b, "head", 8 * width, 1, 3),
        })
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, image: &Var<T>, coords: &Var<T>) -> Result<Var<T>> {
        same_shape("discriminator", image, coords)?;
        let s = image.shape();
        if s.len() != 4 || s[1] != 3 || !s[2].is_multiple_of(16) || !s[3].is_multiple_of(16) {
            return Err(Error::shape("discriminator", &[s]));
        }
        let mut h = Var::concat(&[image, coords], 1)?;
        for (i, conv) in self.down.iter().enumerate() {
            h = conv.forward(p, &h)?;
            if i > 0 {
                h = instance_norm_2d(&h, NORM_EPS)?;
            }
            h = h.leaky_relu(LEAK);
        }
        self.head.forward(p, &h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub rec: f64,
    pub perc: f64,
    pub adv: f64,
    pub mask: f64,
    /// Kept for configuration compatibility; the face term is never
    /// computed, so this weight has no effect.
    pub face: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 10.0,
            perc: 10.0,
            adv: 1.0,
            mask: 1.0,
            face: 5.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.rec, self.perc, self.adv, self.mask, self.face];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }

    /// Weight actually applied to the face term.
    pub fn effective_face(&self) -> f64 {
        0.0
    }
}

/// Generator loss terms of one step.
pub struct GeneratorLosses<T> {
    pub rec: Var<T>,
    pub perc: Var<T>,
    pub adv: Var<T>,
    pub mask: Var<T>,
    pub face: Option<Var<T>>,
}

impl<T: Scalar> GeneratorLosses<T> {
    pub fn total(&self, w: &LossWeights) -> Result<Var<T>> {
        let mut t = self
            .rec
            .scale(w.rec)
            .add(&self.perc.scale(w.perc))?
            .add(&self.adv.scale(w.adv))?
            .add(&self.mask.scale(w.mask))?;
        if let Some(face) = &self.face {
            t = t.add(&face.scale(w.effective_face()))?;
        }
        Ok(t)
    }
}
