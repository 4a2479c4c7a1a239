//! Z-buffered triangle rasterizer, linear (and so exactly differentiable)
//! in per-vertex features.
//!
//! Pixel `(row i, col j)` is sampled at its center, which is the point
//! `(x = j, y = i)` in the pixel-index coordinates produced by
//! [`Camera::to_pixel`]. Depth is `-z`: the camera looks down `-z` at a
//! figure facing `+z`. Back faces are drawn; depth ties go to the lower face
//! index.

#[cfg(test)]
mod tests;

use std::sync::Arc;

use crate::body::{BodyMesh, Camera};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, SparseMap, Tensor, Var};

/// Triangles with less than this area (in squared pixels) are skipped.
const MIN_AREA: f64 = 1e-12;

/// Visibility and interpolation weights of one mesh under one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterGeometry {
    pub height: usize,
    pub width: usize,
    pub n_vertices: usize,
    /// Winning face per pixel, `-1` for background.
    pub face_id: Vec<i32>,
    /// Barycentric weights of the winning face's vertices.
    pub bary: Vec<[f64; 3]>,
    pub faces: Arc<Vec<[u32; 3]>>,
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

impl RasterGeometry {
    pub fn new(mesh: &BodyMesh, camera: &Camera, height: usize, width: usize) -> Result<Self> {
        camera.validate()?;
        let pts = mesh.project(camera, height, width);
        let depth: Vec<f64> = mesh.vertices.iter().map(|v| -v[2]).collect();
        Self::from_projected(&pts, &depth, mesh.faces.clone(), height, width)
    }

    /// Rasterizes already projected vertices (pixel-index coordinates).
    pub fn from_projected(
        pts: &[[f64; 2]],
        depth: &[f64],
        faces: Arc<Vec<[u32; 3]>>,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let n = pts.len();
        if depth.len() != n {
            return Err(Error::InvalidArgument("one depth per vertex required".into()));
        }
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i as usize >= n)) {
            return Err(Error::InvalidArgument(format!("face {f:?} indexes past {n} vertices")));
        }
        if pts.iter().flatten().chain(depth).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("projected vertices".into()));
        }
        let mut face_id = vec![-1i32; height * width];
        let mut bary = vec![[0.0; 3]; height * width];
        let mut zbuf = vec![f64::INFINITY; height * width];
        for (fi, f) in faces.iter().enumerate() {
            let p = f.map(|i| pts[i as usize]);
            let area = edge(p[0], p[1], p[2]);
            if area.abs() < MIN_AREA {
                continue;
            }
            let xmin = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min).ceil().max(0.0);
            let xmax = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max).floor();
            let ymin = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min).ceil().max(0.0);
            let ymax = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max).floor();
            if xmax < 0.0 || ymax < 0.0 {
                continue;
            }
            let xmax = xmax.min(width as f64 - 1.0);
            let ymax = ymax.min(height as f64 - 1.0);
            let sign = area.signum();
            let d = f.map(|i| depth[i as usize]);
            let mut y = ymin;
            while y <= ymax {
                let mut x = xmin;
                while x <= xmax {
                    let c = [x, y];
                    let e = [edge(p[1], p[2], c), edge(p[2], p[0], c), edge(p[0], p[1], c)];
                    if e.iter().all(|&v| v * sign >= 0.0) {
                        let s = e[0] + e[1] + e[2];
                        let w = [e[0] / s, e[1] / s, e[2] / s];
                        let z = w[0] * d[0] + w[1] * d[1] + w[2] * d[2];
                        let idx = y as usize * width + x as usize;
                        if z < zbuf[idx] {
                            zbuf[idx] = z;
                            face_id[idx] = fi as i32;
                            bary[idx] = w;
                        }
                    }
                    x += 1.0;
                }
                y += 1.0;
            }
        }
        Ok(Self {
            height,
            width,
            n_vertices: n,
            face_id,
            bary,
            faces,
        })
    }

    /// Hard `{0, 1}` coverage, row-major `[H, W]`.
    pub fn coverage(&self) -> Vec<f64> {
        self.face_id.iter().map(|&f| if f >= 0 { 1.0 } else { 0.0 }).collect()
    }

    pub fn covered_pixels(&self) -> usize {
        self.face_id.iter().filter(|&&f| f >= 0).count()
    }

    /// Pixel-from-vertex interpolation operator, `[H*W] x [N]`.
    pub fn sparse_map(&self) -> SparseMap {
        SparseMap::from_rows(
            self.n_vertices,
            self.face_id.iter().zip(&self.bary).map(|(&fi, w)| {
                if fi < 0 {
                    Vec::new()
                } else {
                    let f = self.faces[fi as usize];
                    (0..3).map(|k| (f[k] as usize, w[k])).collect()
                }
            }),
        )
    }

    /// Interpolates vertex features given row-major as `[N, C]`.
    pub fn shade(&self, features: &[f64], channels: usize) -> Result<RasterOutput> {
        if features.len() != self.n_vertices * channels {
            return Err(Error::shape(
                "rasterize",
                &[&[features.len()], &[self.n_vertices, channels]],
            ));
        }
        let hw = self.height * self.width;
        let mut map = vec![0.0; channels * hw];
        for (px, (&fi, w)) in self.face_id.iter().zip(&self.bary).enumerate() {
            if fi < 0 {
                continue;
            }
            let f = self.faces[fi as usize];
            for c in 0..channels {
                map[c * hw + px] = (0..3).map(|k| w[k] * features[f[k] as usize * channels + c]).sum();
            }
        }
        Ok(RasterOutput {
            features: Tensor::from_parts(vec![channels, self.height, self.width], map),
            coverage: Tensor::from_parts(vec![self.height, self.width], self.coverage()),
            face_id: self.face_id.clone(),
            bary: Tensor::from_parts(
                vec![3, self.height, self.width],
                (0..3).flat_map(|k| self.bary.iter().map(move |w| w[k])).collect(),
            ),
        })
    }
}

/// Rasterized features and visibility buffers.
#[derive(Clone, Debug)]
pub struct RasterOutput {
    /// `[C, H, W]`, zero where uncovered.
    pub features: Tensor<f64>,
    /// `[H, W]` in `{0, 1}`.
    pub coverage: Tensor<f64>,
    /// Row-major `[H, W]`, `-1` for background.
    pub face_id: Vec<i32>,
    /// `[3, H, W]`; zero where uncovered.
    pub bary: Tensor<f64>,
}

/// Rasterizes features `[N, C]` (row-major) of `mesh` seen through `camera`.
pub fn rasterize(
    features: &[f64],
    channels: usize,
    mesh: &BodyMesh,
    camera: &Camera,
    height: usize,
    width: usize,
) -> Result<RasterOutput> {
    if features.len() != mesh.num_vertices() * channels {
        return Err(Error::shape(
            "rasterize",
            &[&[features.len()], &[mesh.num_vertices(), channels]],
        ));
    }
    RasterGeometry::new(mesh, camera, height, width)?.shade(features, channels)
}

/// Differentiable batched rasterization of vertex features
/// `[B, C, N] -> [B, C, H, W]`, one geometry per sample. Gradients flow to
/// the features only.
pub fn rasterize_var<T: Scalar>(x: &Var<T>, geoms: &[&RasterGeometry]) -> Result<Var<T>> {
    let (h, w) = match geoms.first() {
        Some(g) => (g.height, g.width),
        None => return Err(Error::InvalidArgument("rasterize needs a geometry per sample".into())),
    };
    if geoms.iter().any(|g| g.height != h || g.width != w) || x.shape().first() != Some(&geoms.len()) {
        return Err(Error::shape("rasterize", &[x.shape()]));
    }
    let maps = Arc::new(geoms.iter().map(|g| g.sparse_map()).collect());
    let y = x.fixed_linear("rasterize", h * w, maps)?;
    let (b, c) = (x.shape()[0], x.shape()[1]);
    y.reshape(&[b, c, h, w])
}

/// Hard silhouette `[H, W]`.
pub fn render_silhouette(mesh: &BodyMesh, camera: &Camera, height: usize, width: usize) -> Result<Tensor<f64>> {
    let g = RasterGeometry::new(mesh, camera, height, width)?;
    Ok(Tensor::from_parts(vec![height, width], g.coverage()))
}

/// Root-relative vertex coordinates rasterized to `[3, H, W]`; zero on the
/// background.
pub fn render_coordinate_map(mesh: &BodyMesh, camera: &Camera, height: usize, width: usize) -> Result<Tensor<f64>> {
    let rel: Vec<f64> = mesh.relative_vertices().into_iter().flatten().collect();
    Ok(rasterize(&rel, 3, mesh, camera, height, width)?.features)
}
