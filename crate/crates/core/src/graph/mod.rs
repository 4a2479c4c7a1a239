//! Mesh graph convolutions and the lifting-and-projection block.
//!
//! Mesh features use the layout `[B, C, N]`. A block lifts an image
//! feature map onto the source mesh by bilinear sampling at the projected
//! vertices, refines the vertex features with graph convolutions, and
//! rasterizes them with the target mesh.

#[cfg(test)]
mod tests;

use std::sync::Arc;

use crate::body::{BodyMesh, Camera};
use crate::error::{Error, Result};
use crate::nn::{bilinear_weights, Bound, ParamBuilder, ParamId, NORM_EPS};
use crate::render::{rasterize_var, RasterGeometry};
use crate::tensor::{Scalar, SparseMap, Tensor, Var};

/// Triangle adjacency with the row-normalized propagation operator
/// `D^-1 (A + I)`.
#[derive(Clone, Debug)]
pub struct MeshGraph {
    pub n: usize,
    /// Sorted neighbours of each vertex, self excluded.
    pub neighbors: Vec<Vec<u32>>,
    pub propagate: Arc<SparseMap>,
}

impl MeshGraph {
    pub fn build(faces: &[[u32; 3]], n: usize) -> Result<Self> {
        let mut neighbors: Vec<Vec<u32>> = vec![Vec::new(); n];
        for f in faces {
            if f.iter().any(|&i| i as usize >= n) {
                return Err(Error::InvalidArgument(format!("face {f:?} indexes past {n} vertices")));
            }
            for a in 0..3 {
                for b in 0..3 {
                    if f[a] != f[b] {
                        neighbors[f[a] as usize].push(f[b]);
                    }
                }
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        let propagate = SparseMap::from_rows(
            n,
            neighbors.iter().enumerate().map(|(i, list)| {
                let w = 1.0 / (list.len() + 1) as f64;
                let mut row: Vec<(usize, f64)> = list.iter().map(|&j| (j as usize, w)).collect();
                let at = row.partition_point(|&(j, _)| j < i);
                row.insert(at, (i, w));
                row
            }),
        );
        Ok(Self {
            n,
            neighbors,
            propagate: Arc::new(propagate),
        })
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&(b as u32)).is_ok()
    }

    /// `x: [B, C, N] -> [B, C, N]` with `D^-1 (A + I)` applied per channel.
    pub fn apply<T: Scalar>(&self, x: &Var<T>) -> Result<Var<T>> {
        let b = x.shape().first().copied().unwrap_or(0);
        x.fixed_linear("graph_propagate", self.n, Arc::new(vec![(*self.propagate).clone(); b]))
    }
}

/// Per-channel normalization across vertices, `[B, C, N]`.
pub fn mesh_instance_norm<T: Scalar>(x: &Var<T>, eps: f64) -> Result<Var<T>> {
    if x.shape().len() != 3 {
        return Err(Error::shape("mesh_instance_norm", &[x.shape()]));
    }
    x.instance_norm(eps)
}

/// `MeshIN(ReLU(Â X W))` with learned per-channel scale and shift.
#[derive(Clone, Debug)]
pub struct GraphConv {
    pub weight: ParamId,
    pub scale: ParamId,
    pub shift: ParamId,
}

impl GraphConv {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, cin: usize, cout: usize) -> Self {
        b.scope(name, |b| Self {
            weight: b.uniform("weight", &[cin, cout], cin),
            scale: b.constant("norm_scale", &[cout], 1.0),
            shift: b.constant("norm_shift", &[cout], 0.0),
        })
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, graph: &MeshGraph, x: &Var<T>) -> Result<Var<T>> {
        let h = graph.apply(&x.channel_mix(p.var(self.weight))?)?.relu();
        mesh_instance_norm(&h, NORM_EPS)?.channel_affine(p.var(self.scale), p.var(self.shift))
    }
}

/// Source and target geometry of one sample at one feature resolution.
#[derive(Clone, Debug)]
pub struct LiftProjectGeometry {
    pub height: usize,
    pub width: usize,
    /// Bilinear lifting operator from the source feature map to vertices.
    pub lift: SparseMap,
    /// Root-relative source and target vertices, row-major `[N, 3]`.
    pub source_rel: Vec<[f64; 3]>,
    pub target_rel: Vec<[f64; 3]>,
    pub target_raster: RasterGeometry,
}

impl LiftProjectGeometry {
    pub fn new(
        source: &BodyMesh,
        source_cam: &Camera,
        target: &BodyMesh,
        target_cam: &Camera,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if source.num_vertices() != target.num_vertices() {
            return Err(Error::InvalidArgument("source and target meshes differ in size".into()));
        }
        source_cam.validate()?;
        let pts = source.project(source_cam, height, width);
        Ok(Self {
            height,
            width,
            lift: bilinear_weights(&pts, height, width)?,
            source_rel: source.relative_vertices(),
            target_rel: target.relative_vertices(),
            target_raster: RasterGeometry::new(target, target_cam, height, width)?,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.source_rel.len()
    }
}

/// Samples `feat: [B, C, H, W]` at each sample's projected source
/// vertices, giving `[B, C, N]`. Vertices outside the frame read zero.
pub fn lift<T: Scalar>(feat: &Var<T>, geoms: &[&LiftProjectGeometry]) -> Result<Var<T>> {
    let s = feat.shape();
    if s.len() != 4 || s[0] != geoms.len() || geoms.iter().any(|g| g.height != s[2] || g.width != s[3]) {
        return Err(Error::shape("lift", &[s]));
    }
    let n = geoms.first().map_or(0, |g| g.n_vertices());
    if geoms.iter().any(|g| g.n_vertices() != n) {
        return Err(Error::InvalidArgument("lift: meshes differ in size".into()));
    }
    let flat = feat.reshape(&[s[0], s[1], s[2] * s[3]])?;
    flat.fixed_linear("lift", n, Arc::new(geoms.iter().map(|g| g.lift.clone()).collect()))
}

/// Rasterizes `[B, C, N]` with each sample's target geometry.
pub fn project<T: Scalar>(x: &Var<T>, geoms: &[&LiftProjectGeometry]) -> Result<Var<T>> {
    let rasters: Vec<&RasterGeometry> = geoms.iter().map(|g| &g.target_raster).collect();
    rasterize_var(x, &rasters)
}

fn coords<T: Scalar>(geoms: &[&LiftProjectGeometry], pick: impl Fn(&LiftProjectGeometry) -> &[[f64; 3]]) -> Var<T> {
    let n = geoms.first().map_or(0, |g| g.n_vertices());
    let mut data = Vec::with_capacity(geoms.len() * 3 * n);
    for g in geoms {
        let v = pick(g);
        for c in 0..3 {
            data.extend(v.iter().map(|p| T::from_f64_lossy(p[c])));
        }
    }
    Var::constant(Tensor::new(&[geoms.len(), 3, n], data).expect("coordinate block"))
}

/// Four graph convolutions, residual on all but the first; or, with 3D
/// processing disabled, a plain lift followed by projection.
#[derive(Clone, Debug)]
pub struct LpBlock {
    pub channels: usize,
    pub layers: Option<[GraphConv; 4]>,
}

impl LpBlock {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, channels: usize, process_3d: bool) -> Self {
        let layers = process_3d.then(|| {
            b.scope(name, |b| {
                [
                    GraphConv::new(b, "gc0", channels + 6, channels),
                    GraphConv::new(b, "gc1", channels, channels),
                    GraphConv::new(b, "gc2", channels, channels),
                    GraphConv::new(b, "gc3", channels, channels),
                ]
            })
        });
        Self { channels, layers }
    }

    /// Vertex-feature refinement `[B, C, N] -> [B, C, N]` given the lifted
    /// features; identity when 3D processing is disabled.
    pub fn process<T: Scalar>(
        &self,
        p: &Bound<T>,
        graph: &MeshGraph,
        lifted: &Var<T>,
        geoms: &[&LiftProjectGeometry],
    ) -> Result<Var<T>> {
        let Some(layers) = &self.layers else {
            return Ok(lifted.clone());
        };
        let vs = coords(geoms, |g| &g.source_rel);
        let vt = coords(geoms, |g| &g.target_rel);
        let x = Var::concat(&[&vs, &vt, lifted], 1)?;
        let mut h = layers[0].forward(p, graph, &x)?;
        for layer in &layers[1..] {
            h = h.add(&layer.forward(p, graph, &h)?)?;
        }
        Ok(h)
    }

    /// Source feature map `[B, C, H, W]` to target feature map of the same
    /// shape.
    pub fn forward<T: Scalar>(
        &self,
        p: &Bound<T>,
        graph: &MeshGraph,
        feat: &Var<T>,
        geoms: &[&LiftProjectGeometry],
    ) -> Result<Var<T>> {
        if feat.shape().get(1) != Some(&self.channels) {
            return Err(Error::shape("lp_block", &[feat.shape(), &[self.channels]]));
        }
        let lifted = lift(feat, geoms)?;
        let x = self.process(p, graph, &lifted, geoms)?;
        project(&x, geoms)
    }
}
