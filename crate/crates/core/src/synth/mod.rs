//! Procedural training data: textured figures posed with the body model,
//! rendered over smooth procedural backgrounds.
//!
//! Every random quantity is drawn from a named stream derived from the
//! dataset seed, so any sample can be regenerated from its manifest record.

mod dataset;
pub mod image;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::body::{lbs, BodyMesh, BodyParams, BodyTemplate, Camera, TemplateConfig, NUM_JOINTS, NUM_SHAPE};
use crate::error::{Error, Result};
use crate::render::RasterGeometry;
use crate::tensor::Tensor;

pub use dataset::{eval_pairs, Dataset, Pair, PairMode, PairSampler, SampleRecord, Split};

/// Independent RNG for `(seed, stream name, index)`.
pub fn stream_rng(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    ChaCha8Rng::from_seed(digest.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub resolution: usize,
    pub num_figures: usize,
    pub num_backgrounds: usize,
    /// Training poses per (figure, background) sequence.
    pub train_poses: usize,
    /// Held-out poses per figure.
    pub test_poses: usize,
    /// Multiplier on the joint limits.
    pub pose_scale: f64,
    pub template: TemplateConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            num_figures: 4,
            num_backgrounds: 2,
            train_poses: 100,
            test_poses: 20,
            pose_scale: 1.0,
            template: TemplateConfig::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 16 || !self.resolution.is_multiple_of(16) {
            return Err(Error::Config(format!(
                "resolution must be a positive multiple of 16, got {}",
                self.resolution
            )));
        }
        if self.num_figures < 2 || self.num_backgrounds == 0 || self.train_poses < 2 || self.test_poses < 2 {
            return Err(Error::Config(
                "need at least 2 figures, 1 background and 2 poses per sequence".into(),
            ));
        }
        if !(self.pose_scale.is_finite() && self.pose_scale >= 0.0) {
            return Err(Error::Config("pose_scale must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Per-axis `[lo, hi]` bounds on each joint's axis-angle, radians.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseLimits {
    pub ranges: [[[f64; 2]; 3]; NUM_JOINTS],
}

impl PoseLimits {
    pub fn zero() -> Self {
        Self {
            ranges: [[[0.0; 2]; 3]; NUM_JOINTS],
        }
    }

    /// Anatomically plausible ranges; the root turns freely about the
    /// vertical axis.
    pub fn standard() -> Self {
        let sym = |a: f64| [-a, a];
        let mut r = [[[0.0; 2]; 3]; NUM_JOINTS];
        r[0] = [sym(0.15), sym(PI), sym(0.15)];
        for hip in [1, 2] {
            r[hip] = [[-1.0, 0.4], sym(0.3), sym(0.35)];
        }
        for spine in [3, 6, 9] {
            r[spine] = [sym(0.2), sym(0.2), sym(0.15)];
        }
        for knee in [4, 5] {
            r[knee] = [[0.0, 1.4], [0.0; 2], [0.0; 2]];
        }
        for ankle in [7, 8] {
            r[ankle] = [sym(0.3), sym(0.1), sym(0.1)];
        }
        r[12] = [sym(0.3), sym(0.3), sym(0.2)];
        r[15] = [sym(0.3), sym(0.4), sym(0.2)];
        for collar in [13, 14] {
            r[collar] = [sym(0.15), sym(0.15), sym(0.15)];
        }
        for shoulder in [16, 17] {
            r[shoulder] = [sym(0.8), sym(0.7), sym(0.8)];
        }
        for elbow in [18, 19] {
            r[elbow] = [sym(0.1), sym(1.2), sym(0.1)];
        }
        for wrist in [20, 21] {
            r[wrist] = [sym(0.3), sym(0.3), sym(0.3)];
        }
        Self { ranges: r }
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        for axis in out.ranges.iter_mut().flatten().flatten() {
            *axis *= k;
        }
        out
    }
}

/// Uniform draw within `limits`, one value per joint axis in order.
pub fn sample_pose(rng: &mut impl Rng, limits: &PoseLimits) -> Vec<[f64; 3]> {
    limits
        .ranges
        .iter()
        .map(|axes| axes.map(|[lo, hi]| lo + (hi - lo) * rng.random::<f64>()))
        .collect()
}

/// Camera jitter around a framing that keeps the figure inside the image.
pub fn sample_camera(rng: &mut impl Rng) -> Camera {
    let s = rng.random_range(0.8..0.95);
    Camera::new(s, rng.random_range(-0.1..0.1), 0.09 * s + rng.random_range(-0.05..0.05))
}

/// Per-vertex RGB in `[0, 1]`: a base colour per body part overlaid with a
/// part-specific stripe or checker pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct FigureAppearance {
    pub colors: Vec<[f64; 3]>,
}

fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    [0; 3].map(|_| rng.random_range(0.12..0.92))
}

impl FigureAppearance {
    pub fn generate(template: &BodyTemplate, rng: &mut impl Rng) -> Self {
        let parts = crate::body::PARTS.len();
        let styles: Vec<([f64; 3], [f64; 3], u32, u32)> = (0..parts)
            .map(|_| {
                let base = random_color(rng);
                let accent = random_color(rng);
                let pattern = rng.random_range(0..4u32);
                let period = rng.random_range(1..3u32);
                (base, accent, pattern, period)
            })
            .collect();
        let half = (template.config.ring_res / 2).max(1) as u32;
        let colors = (0..template.num_vertices())
            .map(|v| {
                let (base, accent, pattern, period) = styles[template.vertex_part[v] as usize];
                let ring = template.vertex_ring[v] / period;
                let around = template.vertex_around[v];
                let on = match pattern {
                    0 => false,
                    1 => ring % 2 == 1,
                    2 => (around / (half / 2).max(1)) % 2 == 1,
                    _ => (ring + around) % 2 == 1,
                };
                if on {
                    accent
                } else {
                    base
                }
            })
            .collect();
        Self { colors }
    }
}

/// One textured figure: fixed shape coefficients and appearance.
#[derive(Clone, Debug, PartialEq)]
pub struct Figure {
    pub id: usize,
    pub beta: Vec<f64>,
    pub appearance: FigureAppearance,
}

impl Figure {
    pub fn generate(template: &BodyTemplate, seed: u64, id: usize) -> Self {
        let mut rng = stream_rng(seed, "figure", id as u64);
        let beta = (0..NUM_SHAPE).map(|_| rng.random_range(-1.2..1.2)).collect();
        let appearance = FigureAppearance::generate(template, &mut rng);
        Self { id, beta, appearance }
    }
}

/// Smooth procedural background: a two-colour linear gradient with a few
/// soft blobs. Returned as `[3, H, W]` in `[0, 1]`.
pub fn make_background(seed: u64, id: usize, h: usize, w: usize) -> Tensor<f64> {
    let mut rng = stream_rng(seed, "background", id as u64);
    let c0 = random_color(&mut rng);
    let c1 = random_color(&mut rng);
    let angle = rng.random_range(0.0..2.0 * PI);
    let (dx, dy) = (angle.cos(), angle.sin());
    let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..3)
        .map(|_| {
            (
                [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
                rng.random_range(0.12..0.3),
                random_color(&mut rng),
            )
        })
        .collect();
    let mut data = vec![0.0; 3 * h * w];
    for i in 0..h {
        for j in 0..w {
            let (u, v) = ((j as f64 + 0.5) / w as f64, (i as f64 + 0.5) / h as f64);
            let t = (0.5 + 0.7 * ((u - 0.5) * dx + (v - 0.5) * dy)).clamp(0.0, 1.0);
            let mut c = [0.0; 3];
            for k in 0..3 {
                c[k] = c0[k] * (1.0 - t) + c1[k] * t;
            }
            for (p, r, col) in &blobs {
                let d2 = (u - p[0]).powi(2) + (v - p[1]).powi(2);
                let a = 0.6 * (-d2 / (2.0 * r * r)).exp();
                for k in 0..3 {
                    c[k] = c[k] * (1.0 - a) + col[k] * a;
                }
            }
            for k in 0..3 {
                data[k * h * w + i * w + j] = c[k];
            }
        }
    }
    Tensor::from_parts(vec![3, h, w], data)
}

/// A rendered frame. The image is stored exactly as written to disk: 8-bit
/// interleaved RGB, figure composited over the background wherever the
/// silhouette is set.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub height: usize,
    pub width: usize,
    pub rgb: Vec<u8>,
    /// `{0, 1}` row-major `[H, W]`.
    pub mask: Vec<u8>,
    pub params: BodyParams,
    pub figure_id: usize,
    pub background_id: usize,
}

impl SceneSample {
    /// `[3, H, W]` in `(-1, 1)`.
    pub fn image<T: crate::tensor::Scalar>(&self) -> Tensor<T> {
        image::from_bytes(3, self.height, self.width, &self.rgb).expect("sample image")
    }

    /// `[1, H, W]` in `{0, 1}`.
    pub fn mask_tensor<T: crate::tensor::Scalar>(&self) -> Tensor<T> {
        Tensor::from_parts(
            vec![1, self.height, self.width],
            self.mask.iter().map(|&m| T::from_f64_lossy(m as f64)).collect(),
        )
    }
}

fn unit_to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Renders `figure` in pose `params` over `background` (`[3, H, W]` in
/// `[0, 1]`).
pub fn render_sample(
    template: &BodyTemplate,
    figure: &Figure,
    params: &BodyParams,
    background: &Tensor<f64>,
    background_id: usize,
) -> Result<SceneSample> {
    let s = background.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape("render_sample", &[s]));
    }
    let (h, w) = (s[1], s[2]);
    let mesh = lbs(template, params)?;
    let geo = RasterGeometry::new(&mesh, &params.camera, h, w)?;
    let colors: Vec<f64> = figure.appearance.colors.iter().flatten().copied().collect();
    let fg = geo.shade(&colors, 3)?.features;
    let hw = h * w;
    let mut rgb = Vec::with_capacity(3 * hw);
    let mut mask = Vec::with_capacity(hw);
    for px in 0..hw {
        let covered = geo.face_id[px] >= 0;
        mask.push(covered as u8);
        let src = if covered { fg.data() } else { background.data() };
        for k in 0..3 {
            rgb.push(unit_to_byte(src[k * hw + px]));
        }
    }
    Ok(SceneSample {
        height: h,
        width: w,
        rgb,
        mask,
        params: params.clone(),
        figure_id: figure.id,
        background_id,
    })
}

/// Target mesh of a transfer: the source's shape in the target's pose.
pub fn transfer_mesh(template: &BodyTemplate, source: &BodyParams, target: &BodyParams) -> Result<BodyMesh> {
    lbs(
        template,
        &BodyParams {
            theta: target.theta.clone(),
            beta: source.beta.clone(),
            camera: target.camera,
        },
    )
}

/// 8-neighbourhood dilation of a `{0, 1}` mask by `radius` pixels.
pub fn dilate(mask: &[u8], h: usize, w: usize, radius: usize) -> Vec<u8> {
    let mut cur = mask.to_vec();
    for _ in 0..radius {
        let mut next = cur.clone();
        for i in 0..h {
            for j in 0..w {
                if cur[i * w + j] != 0 {
                    continue;
                }
                let hit = (i.saturating_sub(1)..(i + 2).min(h))
                    .any(|a| (j.saturating_sub(1)..(j + 2).min(w)).any(|b| cur[a * w + b] != 0));
                if hit {
                    next[i * w + j] = 1;
                }
            }
        }
        cur = next;
    }
    cur
}
