use std::sync::Arc;

use crate::body::{lbs, BodyMesh, BodyParams, BodyTemplate};
use crate::error::{Error, Result};
use crate::generators::{fuse, BackgroundGenerator, ForegroundGenerator, GeneratorConfig, TransferGeometry};
use crate::graph::MeshGraph;
use crate::losses::PatchDiscriminator;
use crate::nn::{Bound, ParamBuilder, ParamStore};
use crate::render::{render_coordinate_map, render_silhouette};
use crate::synth::dilate;
use crate::tensor::{Scalar, Tensor, Var};

/// Generator and discriminator with their parameters.
#[derive(Clone)]
pub struct LpNet {
    pub model: GeneratorConfig,
    pub template: Arc<BodyTemplate>,
    pub graph: MeshGraph,
    pub gen: ParamStore<f32>,
    pub fg: ForegroundGenerator,
    pub bg: BackgroundGenerator,
    pub disc_params: ParamStore<f32>,
    pub disc: PatchDiscriminator,
}

impl LpNet {
    pub fn new(template: Arc<BodyTemplate>, model: &GeneratorConfig, disc_width: usize, seed: u64) -> Result<Self> {
        model.validate()?;
        let graph = MeshGraph::build(&template.faces, template.num_vertices())?;
        let mut gen = ParamStore::new();
        let mut b = ParamBuilder::new(&mut gen, seed);
        let fg = ForegroundGenerator::new(&mut b, model);
        let bg = BackgroundGenerator::new(&mut b, model);
        let mut disc_params = ParamStore::new();
        let disc = PatchDiscriminator::new(
            &mut ParamBuilder::new(&mut disc_params, seed.wrapping_add(1)),
            disc_width,
        );
        Ok(Self {
            model: model.clone(),
            template,
            graph,
            gen,
            fg,
            bg,
            disc_params,
            disc,
        })
    }

    /// Generated images and masks for prepared pairs, batched.
    pub fn generate<T: Scalar>(&self, p: &Bound<T>, batch: &Batch<T>, which: Which) -> Result<Generated<T>> {
        let (fg_in, coords, geoms): (Var<T>, Var<T>, Vec<&TransferGeometry>) = match which {
            Which::Target => (
                batch.fg.clone(),
                batch.src_coords.clone(),
                batch.pairs.iter().map(|q| &q.to_target).collect(),
            ),
            Which::Both => (
                Var::concat(&[&batch.fg, &batch.fg], 0)?,
                Var::concat(&[&batch.src_coords, &batch.src_coords], 0)?,
                batch
                    .pairs
                    .iter()
                    .map(|q| &q.to_target)
                    .chain(batch.pairs.iter().map(|q| &q.to_source))
                    .collect(),
            ),
        };
        let out = self.fg.forward(p, &self.graph, &fg_in, &coords, &geoms)?;
        let background = self.bg.forward(p, &batch.bg)?;
        let b = batch.len();
        let (rgb_t, mask_t) = (out.rgb.slice(0, 0, b)?, out.mask.slice(0, 0, b)?);
        let target = fuse(&rgb_t, &background, &mask_t)?;
        let source = match which {
            Which::Target => None,
            Which::Both => {
                let (rgb_s, mask_s) = (out.rgb.slice(0, b, b)?, out.mask.slice(0, b, b)?);
                Some(fuse(&rgb_s, &background, &mask_s)?)
            }
        };
        Ok(Generated {
            target,
            target_mask: mask_t,
            target_fg: rgb_t,
            source,
            background,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    /// Only the transfer to the target pose.
    Target,
    /// Transfer to the target pose and reconstruction of the source pose.
    Both,
}

pub struct Generated<T> {
    pub target: Var<T>,
    pub target_mask: Var<T>,
    pub target_fg: Var<T>,
    pub source: Option<Var<T>>,
    pub background: Var<T>,
}

/// Network inputs of one source image and one target body.
#[derive(Clone, Debug)]
pub struct PreparedPair {
    pub height: usize,
    pub width: usize,
    /// Source image, `[3, H, W]` in `(-1, 1)`.
    pub source_image: Tensor<f64>,
    /// Source with everything outside the silhouette zeroed.
    pub fg: Tensor<f64>,
    /// Source with the one-pixel-dilated silhouette zeroed.
    pub bg: Tensor<f64>,
    pub src_coords: Tensor<f64>,
    pub tgt_coords: Tensor<f64>,
    /// Target silhouette, `[1, H, W]`.
    pub tgt_silhouette: Tensor<f64>,
    pub to_target: TransferGeometry,
    pub to_source: TransferGeometry,
    pub target_mesh: BodyMesh,
}

impl PreparedPair {
    /// `image`: `[3, H, W]` in `(-1, 1)`; `mask`: `{0, 1}` row-major.
    /// The target body uses the source shape with the target pose and
    /// camera.
    pub fn new(
        template: &BodyTemplate,
        image: &Tensor<f64>,
        mask: &[u8],
        source: &BodyParams,
        target: &BodyParams,
    ) -> Result<Self> {
        let s = image.shape();
        if s.len() != 3 || s[0] != 3 || mask.len() != s[1] * s[2] {
            return Err(Error::shape("prepare_pair", &[s, &[mask.len()]]));
        }
        let (h, w) = (s[1], s[2]);
        let src_mesh = lbs(template, source)?;
        let tgt_params = BodyParams {
            theta: target.theta.clone(),
            beta: source.beta.clone(),
            camera: target.camera,
        };
        let tgt_mesh = lbs(template, &tgt_params)?;
        let dil = dilate(mask, h, w, 1);
        let hw = h * w;
        let d = image.data();
        let mut fg = vec![0.0; 3 * hw];
        let mut bg = vec![0.0; 3 * hw];
        for c in 0..3 {
            for px in 0..hw {
                let v = d[c * hw + px];
                if mask[px] != 0 {
                    fg[c * hw + px] = v;
                }
                if dil[px] == 0 {
                    bg[c * hw + px] = v;
                }
            }
        }
        let sil = render_silhouette(&tgt_mesh, &target.camera, h, w)?;
        Ok(Self {
            height: h,
            width: w,
            source_image: image.clone(),
            fg: Tensor::from_parts(vec![3, h, w], fg),
            bg: Tensor::from_parts(vec![3, h, w], bg),
            src_coords: render_coordinate_map(&src_mesh, &source.camera, h, w)?,
            tgt_coords: render_coordinate_map(&tgt_mesh, &target.camera, h, w)?,
            tgt_silhouette: sil.reshape(&[1, h, w])?,
            to_target: TransferGeometry::new(&src_mesh, &source.camera, &tgt_mesh, &target.camera, h, w)?,
            to_source: TransferGeometry::new(&src_mesh, &source.camera, &src_mesh, &source.camera, h, w)?,
            target_mesh: tgt_mesh,
        })
    }
}

/// Stacks `[C, H, W]` tensors into `[B, C, H, W]`.
pub fn stack<T: Scalar>(items: &[&Tensor<f64>]) -> Result<Tensor<T>> {
    let first = items
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot stack zero tensors".into()))?
        .shape()
        .to_vec();
    let mut data = Vec::with_capacity(items.len() * items[0].numel());
    for t in items {
        if t.shape() != first.as_slice() {
            return Err(Error::shape("stack", &[&first, t.shape()]));
        }
        data.extend(t.data().iter().map(|&v| T::from_f64_lossy(v)));
    }
    let mut shape = vec![items.len()];
    shape.extend(first);
    Tensor::new(&shape, data)
}

/// Batched constant inputs.
pub struct Batch<'a, T> {
    pub pairs: Vec<&'a PreparedPair>,
    pub fg: Var<T>,
    pub bg: Var<T>,
    pub src_coords: Var<T>,
    pub tgt_coords: Var<T>,
    pub tgt_silhouette: Var<T>,
    pub source_image: Var<T>,
}

impl<'a, T: Scalar> Batch<'a, T> {
    pub fn new(pairs: Vec<&'a PreparedPair>) -> Result<Self> {
        let col = |f: fn(&PreparedPair) -> &Tensor<f64>| -> Result<Var<T>> {
            Ok(Var::constant(stack(&pairs.iter().map(|p| f(p)).collect::<Vec<_>>())?))
        };
        Ok(Self {
            fg: col(|p| &p.fg)?,
            bg: col(|p| &p.bg)?,
            src_coords: col(|p| &p.src_coords)?,
            tgt_coords: col(|p| &p.tgt_coords)?,
            tgt_silhouette: col(|p| &p.tgt_silhouette)?,
            source_image: col(|p| &p.source_image)?,
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}
