use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::skeleton::{node_parent, NUM_JOINTS, NUM_NODES, NUM_SHAPE, PARENTS, PARTS, REST_NODES};
use crate::binfile::{Section, SectionFile};
use crate::error::{Error, Result};

/// Fraction of each bone, measured from its parent joint, over which
/// skinning blends into the parent.
const BLEND_SPAN: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateConfig {
    /// Rings per body part, including both capped ends.
    pub n_rings: usize,
    /// Vertices per ring.
    pub ring_res: usize,
    pub seed: u64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            n_rings: 14,
            ring_res: 12,
            seed: 0,
        }
    }
}

impl TemplateConfig {
    /// Smallest template: 72 vertices.
    pub fn tiny() -> Self {
        Self {
            n_rings: 2,
            ring_res: 6,
            seed: 0,
        }
    }

    pub fn num_vertices(&self) -> usize {
        PARTS.len() * self.n_rings * self.ring_res
    }
}

/// Articulated rest mesh with skinning weights and a linear shape space.
///
/// All coordinates are exactly representable in `f32`, so the binary file
/// form round-trips losslessly.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyTemplate {
    pub rest_vertices: Vec<[f64; 3]>,
    pub faces: Arc<Vec<[u32; 3]>>,
    pub rest_joints: Vec<[f64; 3]>,
    pub parents: Vec<Option<usize>>,
    /// Row-major `[N, 24]`.
    pub skin_weights: Vec<f64>,
    /// `[10][N]` vertex offsets per unit of each shape coefficient.
    pub shape_basis: Vec<Vec<[f64; 3]>>,
    /// `[10][24]` joint offsets per unit of each shape coefficient.
    pub joint_shape_basis: Vec<Vec<[f64; 3]>>,
    /// Body part of each vertex (index into the part table).
    pub vertex_part: Vec<u32>,
    /// Ring index along the part and position around the ring.
    pub vertex_ring: Vec<u32>,
    pub vertex_around: Vec<u32>,
    pub config: TemplateConfig,
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scl(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    scl(a, 1.0 / dot(a, a).sqrt())
}

fn lerp(a: [f64; 3], b: [f64; 3], f: f64) -> [f64; 3] {
    add(scl(a, 1.0 - f), scl(b, f))
}

fn round32(x: f64) -> f64 {
    x as f32 as f64
}

fn round3(a: [f64; 3]) -> [f64; 3] {
    a.map(round32)
}

fn is_descendant_or_self(node: usize, ancestor: usize) -> bool {
    let mut n = Some(node);
    while let Some(i) = n {
        if i == ancestor {
            return true;
        }
        n = node_parent(i);
    }
    false
}

/// Rest proportions: node positions and per-part radii.
struct Proportions {
    nodes: [[f64; 3]; NUM_NODES],
    radii: Vec<Vec<f64>>,
}

impl Proportions {
    fn jittered(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes = REST_NODES;
        // Parents precede children, so one forward pass rebuilds the tree.
        for c in 1..NUM_NODES {
            let p = node_parent(c).unwrap();
            let k = 1.0 + rng.random_range(-0.05..0.05);
            nodes[c] = add(nodes[p], scl(sub(REST_NODES[c], REST_NODES[p]), k));
        }
        let radii = PARTS
            .iter()
            .map(|part| {
                part.radii
                    .iter()
                    .map(|r| r * (1.0 + rng.random_range(-0.06..0.06)))
                    .collect()
            })
            .collect();
        Self { nodes, radii }
    }

    fn zero_delta() -> Self {
        Self {
            nodes: [[0.0; 3]; NUM_NODES],
            radii: PARTS.iter().map(|p| vec![0.0; p.radii.len()]).collect(),
        }
    }
}

/// Per-unit offsets of one shape coefficient.
fn shape_delta(k: usize, base: &Proportions) -> Proportions {
    let mut d = Proportions::zero_delta();
    let stretch = |d: &mut Proportions, bones: &[usize], rate: f64| {
        for &c in bones {
            let p = node_parent(c).unwrap();
            let bone = sub(base.nodes[c], base.nodes[p]);
            for n in 0..NUM_NODES {
                if is_descendant_or_self(n, c) {
                    d.nodes[n] = add(d.nodes[n], scl(bone, rate));
                }
            }
        }
    };
    let thicken = |d: &mut Proportions, parts: &[usize], rate: f64| {
        for &p in parts {
            for (dr, r) in d.radii[p].iter_mut().zip(&base.radii[p]) {
                *dr += rate * r;
            }
        }
    };
    let all_bones: Vec<usize> = (1..NUM_NODES).collect();
    match k {
        0 => stretch(&mut d, &all_bones, 0.06),
        1 => thicken(&mut d, &[0, 1, 2, 3, 4, 5], 0.10),
        2 => stretch(&mut d, &[4, 5, 7, 8, 10, 11, 25, 26], 0.08),
        3 => stretch(&mut d, &[18, 19, 20, 21, 22, 23, 27, 28], 0.08),
        4 => stretch(&mut d, &[3, 6, 9, 12], 0.08),
        5 => thicken(&mut d, &[0], 0.12),
        6 => thicken(&mut d, &[2, 3, 4, 5], 0.12),
        7 => {
            stretch(&mut d, &[15, 24], 0.10);
            thicken(&mut d, &[1], 0.10);
        }
        8 => stretch(&mut d, &[13, 14, 16, 17], 0.15),
        9 => stretch(&mut d, &[1, 2], 0.20),
        _ => unreachable!(),
    }
    d
}

struct RingGeom {
    part: usize,
    ring: usize,
    seg: usize,
    frac: f64,
    u: [f64; 3],
    v: [f64; 3],
}

fn ring_layout(props: &Proportions, n_rings: usize) -> Vec<RingGeom> {
    let mut out = Vec::new();
    for (pi, part) in PARTS.iter().enumerate() {
        let pts: Vec<[f64; 3]> = part.chain.iter().map(|&n| props.nodes[n]).collect();
        let lens: Vec<f64> = pts
            .windows(2)
            .map(|w| dot(sub(w[1], w[0]), sub(w[1], w[0])).sqrt())
            .collect();
        let total: f64 = lens.iter().sum();
        let mut prev_u: Option<[f64; 3]> = None;
        for r in 0..n_rings {
            let target = total * r as f64 / (n_rings - 1) as f64;
            let mut seg = 0;
            let mut acc = 0.0;
            while seg + 1 < lens.len() && acc + lens[seg] < target {
                acc += lens[seg];
                seg += 1;
            }
            let frac = ((target - acc) / lens[seg]).clamp(0.0, 1.0);
            let d = normalize(sub(pts[seg + 1], pts[seg]));
            let seed_u = prev_u.unwrap_or(if d[2].abs() < 0.9 {
                [0.0, 0.0, 1.0]
            } else {
                [1.0, 0.0, 0.0]
            });
            let u = normalize(sub(seed_u, scl(d, dot(seed_u, d))));
            let v = cross(d, u);
            prev_u = Some(u);
            out.push(RingGeom {
                part: pi,
                ring: r,
                seg,
                frac,
                u,
                v,
            });
        }
    }
    out
}

/// Procedural humanoid built from capped tubes along the bone chains of
/// the 24-joint tree. Topology depends only on `n_rings` and `ring_res`;
/// `seed` perturbs bone lengths and radii.
pub fn make_template(config: TemplateConfig) -> Result<BodyTemplate> {
    if config.ring_res < 6 {
        return Err(Error::InvalidArgument(format!(
            "ring_res must be at least 6, got {}",
            config.ring_res
        )));
    }
    if config.n_rings < 2 {
        return Err(Error::InvalidArgument(format!(
            "n_rings must be at least 2, got {}",
            config.n_rings
        )));
    }
    let props = Proportions::jittered(config.seed);
    let deltas: Vec<Proportions> = (0..NUM_SHAPE).map(|k| shape_delta(k, &props)).collect();
    let rings = ring_layout(&props, config.n_rings);
    let res = config.ring_res;
    let n = rings.len() * res;

    let mut rest_vertices = Vec::with_capacity(n);
    let mut shape_basis = (0..NUM_SHAPE).map(|_| Vec::with_capacity(n)).collect::<Vec<_>>();
    let mut skin_weights = vec![0.0; n * NUM_JOINTS];
    let mut vertex_part = Vec::with_capacity(n);
    let mut vertex_ring = Vec::with_capacity(n);
    let mut vertex_around = Vec::with_capacity(n);

    for rg in &rings {
        let part = &PARTS[rg.part];
        let (a, b) = (part.chain[rg.seg], part.chain[rg.seg + 1]);
        let center_of = |p: &Proportions| lerp(p.nodes[a], p.nodes[b], rg.frac);
        let radius_of = |p: &Proportions| {
            let r = &p.radii[rg.part];
            r[rg.seg] * (1.0 - rg.frac) + r[rg.seg + 1] * rg.frac
        };
        let (w_own, w_parent) = match PARENTS[a] {
            Some(_) if rg.frac < BLEND_SPAN => {
                // 1 - w is exact in f32 for w in [0.5, 1], so rows sum to 1.
                let w = round32(0.5 + 0.5 * rg.frac / BLEND_SPAN);
                (w, 1.0 - w)
            }
            _ => (1.0, 0.0),
        };
        for k in 0..res {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / res as f64;
            let dir = add(scl(rg.u, phi.cos()), scl(rg.v, phi.sin()));
            let vi = rest_vertices.len();
            rest_vertices.push(round3(add(center_of(&props), scl(dir, radius_of(&props)))));
            for (basis, delta) in shape_basis.iter_mut().zip(&deltas) {
                basis.push(round3(add(center_of(delta), scl(dir, radius_of(delta)))));
            }
            skin_weights[vi * NUM_JOINTS + a] = w_own;
            if w_parent > 0.0 {
                skin_weights[vi * NUM_JOINTS + PARENTS[a].unwrap()] = w_parent;
            }
            vertex_part.push(rg.part as u32);
            vertex_ring.push(rg.ring as u32);
            vertex_around.push(k as u32);
        }
    }

    let mut faces = Vec::new();
    let nr = config.n_rings;
    for p in 0..PARTS.len() {
        let idx = |r: usize, k: usize| ((p * nr + r) * res + k % res) as u32;
        for r in 0..nr - 1 {
            for k in 0..res {
                faces.push([idx(r, k), idx(r, k + 1), idx(r + 1, k + 1)]);
                faces.push([idx(r, k), idx(r + 1, k + 1), idx(r + 1, k)]);
            }
        }
        for k in 1..res - 1 {
            faces.push([idx(0, 0), idx(0, k + 1), idx(0, k)]);
            faces.push([idx(nr - 1, 0), idx(nr - 1, k), idx(nr - 1, k + 1)]);
        }
    }

    let template = BodyTemplate {
        rest_vertices,
        faces: Arc::new(faces),
        rest_joints: props.nodes[..NUM_JOINTS].iter().map(|&p| round3(p)).collect(),
        parents: PARENTS.to_vec(),
        skin_weights,
        shape_basis,
        joint_shape_basis: deltas
            .iter()
            .map(|d| d.nodes[..NUM_JOINTS].iter().map(|&p| round3(p)).collect())
            .collect(),
        vertex_part,
        vertex_ring,
        vertex_around,
        config,
    };
    template.validate()?;
    Ok(template)
}

const MESH_MAGIC: [u8; 8] = *b"LPNMESH\0";
const MESH_VERSION: u32 = 1;

fn flat3(v: &[[f64; 3]]) -> Vec<f32> {
    v.iter().flatten().map(|&x| x as f32).collect()
}

fn unflat3(v: &[f32]) -> Vec<[f64; 3]> {
    v.chunks_exact(3)
        .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
        .collect()
}

impl BodyTemplate {
    pub fn num_vertices(&self) -> usize {
        self.rest_vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn skin_row(&self, v: usize) -> &[f64] {
        &self.skin_weights[v * NUM_JOINTS..(v + 1) * NUM_JOINTS]
    }

    /// Structural self-check of every template invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vertices();
        let bad = |m: String| Err(Error::Format(m));
        if self.rest_joints.len() != NUM_JOINTS || self.parents.len() != NUM_JOINTS {
            return bad("template must have 24 joints".into());
        }
        for (j, p) in self.parents.iter().enumerate() {
            if p.is_some_and(|p| p >= j) || (j == 0) != p.is_none() {
                return bad(format!("joint {j}: parent must precede it"));
            }
        }
        if self.skin_weights.len() != n * NUM_JOINTS
            || self.shape_basis.len() != NUM_SHAPE
            || self.joint_shape_basis.len() != NUM_SHAPE
            || self.shape_basis.iter().any(|b| b.len() != n)
            || self.joint_shape_basis.iter().any(|b| b.len() != NUM_JOINTS)
            || self.vertex_part.len() != n
            || self.vertex_ring.len() != n
            || self.vertex_around.len() != n
        {
            return bad("template arrays disagree on vertex count".into());
        }
        for v in 0..n {
            let row = self.skin_row(v);
            let nonzero = row.iter().filter(|&&w| w != 0.0).count();
            let sum: f64 = row.iter().sum();
            if nonzero == 0 || nonzero > 2 || (sum - 1.0).abs() > 1e-6 || row.iter().any(|&w| w < 0.0) {
                return bad(format!("vertex {v}: invalid skinning row"));
            }
        }
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i as usize >= n)) {
            return bad(format!("face {f:?} indexes past {n} vertices"));
        }
        let all = self
            .rest_vertices
            .iter()
            .chain(self.rest_joints.iter())
            .chain(self.shape_basis.iter().flatten())
            .chain(self.joint_shape_basis.iter().flatten());
        if all.flatten().any(|x| !x.is_finite()) {
            return bad("non-finite template coordinate".into());
        }
        Ok(())
    }

    pub fn to_section_file(&self) -> SectionFile {
        let n = self.num_vertices();
        let mut f = SectionFile::new(MESH_MAGIC, MESH_VERSION);
        f.push(Section::from_u32(
            "config",
            &[4],
            &[
                self.config.n_rings as u32,
                self.config.ring_res as u32,
                self.config.seed as u32,
                (self.config.seed >> 32) as u32,
            ],
        ));
        f.push(Section::from_f32("rest_vertices", &[n, 3], &flat3(&self.rest_vertices)));
        let faces: Vec<u32> = self.faces.iter().flatten().copied().collect();
        f.push(Section::from_u32("faces", &[self.num_faces(), 3], &faces));
        f.push(Section::from_f32(
            "rest_joints",
            &[NUM_JOINTS, 3],
            &flat3(&self.rest_joints),
        ));
        let parents: Vec<i32> = self.parents.iter().map(|p| p.map_or(-1, |p| p as i32)).collect();
        f.push(Section::from_i32("parents", &[NUM_JOINTS], &parents));
        let w: Vec<f32> = self.skin_weights.iter().map(|&x| x as f32).collect();
        f.push(Section::from_f32("skin_weights", &[n, NUM_JOINTS], &w));
        let s: Vec<f32> = self.shape_basis.iter().flat_map(|b| flat3(b)).collect();
        f.push(Section::from_f32("shape_basis", &[NUM_SHAPE, n, 3], &s));
        let sj: Vec<f32> = self.joint_shape_basis.iter().flat_map(|b| flat3(b)).collect();
        f.push(Section::from_f32("joint_shape_basis", &[NUM_SHAPE, NUM_JOINTS, 3], &sj));
        f.push(Section::from_u32("vertex_part", &[n], &self.vertex_part));
        f.push(Section::from_u32("vertex_ring", &[n], &self.vertex_ring));
        f.push(Section::from_u32("vertex_around", &[n], &self.vertex_around));
        f
    }

    pub fn from_section_file(f: &SectionFile) -> Result<Self> {
        let get = |name: &str, shape: &[usize]| -> Result<&Section> {
            let s = f.require(name)?;
            if s.shape != shape {
                return Err(Error::Format(format!(
                    "section `{name}` has shape {:?}, expected {shape:?}",
                    s.shape
                )));
            }
            Ok(s)
        };
        let rv = f.require("rest_vertices")?;
        let n = rv.shape.first().copied().unwrap_or(0);
        let nf = f.require("faces")?.shape.first().copied().unwrap_or(0);
        let cfg = get("config", &[4])?.to_u32()?;
        let config = TemplateConfig {
            n_rings: cfg[0] as usize,
            ring_res: cfg[1] as usize,
            seed: cfg[2] as u64 | (cfg[3] as u64) << 32,
        };
        let faces = get("faces", &[nf, 3])?
            .to_u32()?
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        let parents = get("parents", &[NUM_JOINTS])?
            .to_i32()?
            .into_iter()
            .map(|p| usize::try_from(p).ok())
            .collect();
        let basis = |name: &str, m: usize| -> Result<Vec<Vec<[f64; 3]>>> {
            let all = unflat3(&get(name, &[NUM_SHAPE, m, 3])?.to_f32()?);
            Ok(all.chunks(m.max(1)).map(|c| c.to_vec()).take(NUM_SHAPE).collect())
        };
        let t = BodyTemplate {
            rest_vertices: unflat3(&get("rest_vertices", &[n, 3])?.to_f32()?),
            faces: Arc::new(faces),
            rest_joints: unflat3(&get("rest_joints", &[NUM_JOINTS, 3])?.to_f32()?),
            parents,
            skin_weights: get("skin_weights", &[n, NUM_JOINTS])?
                .to_f32()?
                .into_iter()
                .map(f64::from)
                .collect(),
            shape_basis: basis("shape_basis", n)?,
            joint_shape_basis: basis("joint_shape_basis", NUM_JOINTS)?,
            vertex_part: get("vertex_part", &[n])?.to_u32()?,
            vertex_ring: get("vertex_ring", &[n])?.to_u32()?,
            vertex_around: get("vertex_around", &[n])?.to_u32()?,
            config,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_section_file().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_section_file(&SectionFile::load(path, MESH_MAGIC, MESH_VERSION)?)
    }
}
