//! WebAssembly bindings for the static page in `www/`.
//!
//! Images cross the boundary as RGBA bytes, row-major, ready for
//! `ImageData`. Poses are flat arrays of 24 axis-angle triples.

use std::sync::Arc;

use lpnet::body::{lbs, make_template, BodyParams, BodyTemplate, Camera, TemplateConfig, JOINT_NAMES, NUM_JOINTS};
use lpnet::graph::{lift, project, LiftProjectGeometry};
use lpnet::render::{render_coordinate_map, RasterGeometry};
use lpnet::synth::{make_background, render_sample, sample_pose, stream_rng, Figure, PoseLimits};
use lpnet::tensor::{Tensor, Var};
use wasm_bindgen::prelude::*;

fn js(e: lpnet::error::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn pose_from(flat: &[f64]) -> Result<Vec<[f64; 3]>, JsError> {
    if flat.len() != 3 * NUM_JOINTS {
        return Err(JsError::new(&format!(
            "pose needs {} values, got {}",
            3 * NUM_JOINTS,
            flat.len()
        )));
    }
    Ok(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// `[C, H, W]` signed or unit tensor to RGBA; gray images are broadcast.
fn rgba(img: &Tensor<f64>, signed: bool, mask: Option<&[bool]>) -> Vec<u8> {
    let s = img.shape();
    let (c, hw) = (s[0], s[1] * s[2]);
    let mut out = vec![255u8; 4 * hw];
    for p in 0..hw {
        for k in 0..3 {
            let v = img.data()[k.min(c - 1) * hw + p];
            let u = if signed { 0.5 * (v + 1.0) } else { v };
            out[4 * p + k] = (u.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        if mask.is_some_and(|m| !m[p]) {
            out[4 * p..4 * p + 3].copy_from_slice(&[24, 24, 28]);
        }
    }
    out
}

#[wasm_bindgen]
pub fn joint_names() -> Vec<String> {
    JOINT_NAMES.iter().map(|s| s.to_string()).collect()
}

#[wasm_bindgen]
pub struct Demo {
    template: Arc<BodyTemplate>,
    figure: Figure,
    background: Tensor<f64>,
    size: usize,
    camera: Camera,
}

#[wasm_bindgen]
impl Demo {
    /// A figure and background drawn from `seed`, rendered at `size` pixels.
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, seed: u64) -> Result<Demo, JsError> {
        if !(16..=256).contains(&size) {
            return Err(JsError::new("size must lie in 16..=256"));
        }
        let template = Arc::new(make_template(TemplateConfig::default()).map_err(js)?);
        let figure = Figure::generate(&template, seed, 0);
        Ok(Demo {
            background: make_background(seed, 0, size, size),
            figure,
            template,
            size,
            camera: Camera::new(0.9, 0.0, 0.08),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// A random pose within the dataset joint limits, scaled by `scale`.
    pub fn random_pose(&self, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = stream_rng(seed, "demo.pose", 0);
        sample_pose(&mut rng, &PoseLimits::standard().scaled(scale))
            .into_iter()
            .flatten()
            .collect()
    }

    fn params(&self, pose: &[f64]) -> Result<BodyParams, JsError> {
        Ok(BodyParams {
            theta: pose_from(pose)?,
            beta: self.figure.beta.clone(),
            camera: self.camera,
        })
    }

    /// The textured figure in `pose` over the background.
    pub fn render(&self, pose: &[f64]) -> Result<Vec<u8>, JsError> {
        let s = render_sample(&self.template, &self.figure, &self.params(pose)?, &self.background, 0).map_err(js)?;
        let hw = self.size * self.size;
        let mut out = vec![255u8; 4 * hw];
        for p in 0..hw {
            out[4 * p..4 * p + 3].copy_from_slice(&s.rgb[3 * p..3 * p + 3]);
        }
        Ok(out)
    }

    /// Root-relative body coordinates in `pose`, mapped to colour.
    pub fn coordinates(&self, pose: &[f64]) -> Result<Vec<u8>, JsError> {
        let params = self.params(pose)?;
        let mesh = lbs(&self.template, &params).map_err(js)?;
        let map = render_coordinate_map(&mesh, &params.camera, self.size, self.size).map_err(js)?;
        let g = RasterGeometry::new(&mesh, &params.camera, self.size, self.size).map_err(js)?;
        let covered: Vec<bool> = g.face_id.iter().map(|&f| f >= 0).collect();
        Ok(rgba(&map, true, Some(&covered)))
    }

    /// Renders the figure in `source`, lifts the pixels onto the mesh
    /// vertices and rasterizes them in `target`. Vertices hidden in the
    /// source pick up whatever covers them in the image.
    pub fn warp(&self, source: &[f64], target: &[f64]) -> Result<Vec<u8>, JsError> {
        let (sp, tp) = (self.params(source)?, self.params(target)?);
        let s = render_sample(&self.template, &self.figure, &sp, &self.background, 0).map_err(js)?;
        let sm = lbs(&self.template, &sp).map_err(js)?;
        let tm = lbs(&self.template, &tp).map_err(js)?;
        let n = self.size;
        let geo = LiftProjectGeometry::new(&sm, &sp.camera, &tm, &tp.camera, n, n).map_err(js)?;
        let img = s.image::<f64>().reshape(&[1, 3, n, n]).map_err(js)?;
        let verts = lift(&Var::constant(img), &[&geo]).map_err(js)?;
        let out = project(&verts, &[&geo]).map_err(js)?;
        let covered: Vec<bool> = geo.target_raster.face_id.iter().map(|&f| f >= 0).collect();
        let plane = out.value().reshape(&[3, n, n]).map_err(js)?;
        Ok(rgba(&plane, true, Some(&covered)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operations_produce_full_frames() {
        let d = Demo::new(32, 5).unwrap();
        let rest = vec![0.0; 72];
        let pose = d.random_pose(1, 1.0);
        assert_eq!(pose.len(), 72);
        for img in [
            d.render(&pose).unwrap(),
            d.coordinates(&pose).unwrap(),
            d.warp(&rest, &pose).unwrap(),
        ] {
            assert_eq!(img.len(), 4 * 32 * 32);
            assert!(img.chunks(4).all(|p| p[3] == 255));
        }
        assert_eq!(joint_names().len(), 24);
    }

    #[test]
    fn identity_warp_keeps_the_figure() {
        let d = Demo::new(48, 2).unwrap();
        let pose = d.random_pose(4, 0.5);
        let warped = d.warp(&pose, &pose).unwrap();
        let direct = d.render(&pose).unwrap();
        let coords = d.coordinates(&pose).unwrap();
        // Compare inside the silhouette only; the warp blurs by at most a
        // bilinear tap, so most body pixels stay close to the render.
        let inside: Vec<usize> = (0..48 * 48)
            .filter(|&p| coords[4 * p..4 * p + 3] != [24, 24, 28])
            .collect();
        assert!(inside.len() > 50);
        let close = inside
            .iter()
            .filter(|&&p| (0..3).all(|k| (warped[4 * p + k] as i32 - direct[4 * p + k] as i32).abs() <= 64))
            .count();
        assert!(close as f64 >= 0.8 * inside.len() as f64, "{close}/{}", inside.len());
    }
}
