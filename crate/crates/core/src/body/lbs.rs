use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::skeleton::{NUM_JOINTS, NUM_SHAPE};
use super::template::BodyTemplate;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

type Mat3 = [[f64; 3]; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

fn transpose(a: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

fn matvec(a: &Mat3, x: [f64; 3]) -> [f64; 3] {
    [
        a[0][0] * x[0] + a[0][1] * x[1] + a[0][2] * x[2],
        a[1][0] * x[0] + a[1][1] * x[1] + a[1][2] * x[2],
        a[2][0] * x[0] + a[2][1] * x[1] + a[2][2] * x[2],
    ]
}

fn skew(w: [f64; 3]) -> Mat3 {
    [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
}

fn axpy(acc: &mut Mat3, s: f64, m: &Mat3) {
    for i in 0..3 {
        for j in 0..3 {
            acc[i][j] += s * m[i][j];
        }
    }
}

/// Coefficients of `R = I + a K + b K^2` with `K = [w]x`, and the
/// derivatives `c = a'/|w|`, `d = b'/|w|` (series near zero).
fn rodrigues_coeffs(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    if t < 0.05 {
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0,
        )
    } else {
        let (s, c) = t.sin_cos();
        (
            s / t,
            (1.0 - c) / t2,
            (t * c - s) / (t2 * t),
            (t * s - 2.0 + 2.0 * c) / (t2 * t2),
        )
    }
}

/// Axis-angle to rotation matrix.
pub fn rodrigues(w: [f64; 3]) -> Mat3 {
    let (a, b, _, _) = rodrigues_coeffs((w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt());
    let k = skew(w);
    let mut r = IDENTITY;
    axpy(&mut r, a, &k);
    axpy(&mut r, b, &matmul(&k, &k));
    r
}

/// Rotation and its partial derivatives with respect to each component.
fn rodrigues_with_jacobian(w: [f64; 3]) -> (Mat3, [Mat3; 3]) {
    let (a, b, c, d) = rodrigues_coeffs((w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt());
    let k = skew(w);
    let k2 = matmul(&k, &k);
    let mut r = IDENTITY;
    axpy(&mut r, a, &k);
    axpy(&mut r, b, &k2);
    let mut dr = [[[0.0; 3]; 3]; 3];
    for (i, dri) in dr.iter_mut().enumerate() {
        let mut e = [0.0; 3];
        e[i] = 1.0;
        let ei = skew(e);
        axpy(dri, a, &ei);
        axpy(dri, b, &matmul(&ei, &k));
        axpy(dri, b, &matmul(&k, &ei));
        axpy(dri, c * w[i], &k);
        axpy(dri, d * w[i], &k2);
    }
    (r, dr)
}

/// Weak-perspective camera `(s, t_x, t_y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub s: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Camera {
    pub fn new(s: f64, tx: f64, ty: f64) -> Self {
        Self { s, tx, ty }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.s, self.tx, self.ty]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s.is_finite() && self.tx.is_finite() && self.ty.is_finite()) {
            return Err(Error::NonFinite("camera".into()));
        }
        if self.s <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "camera scale must be positive, got {}",
                self.s
            )));
        }
        Ok(())
    }

    pub fn to_ndc(&self, v: [f64; 3]) -> [f64; 2] {
        [self.s * v[0] + self.tx, self.s * v[1] + self.ty]
    }

    /// Pixel-index coordinates `(x = column, y = row)`: NDC `[-1, 1]^2` maps
    /// onto `[0, W-1] x [0, H-1]`, with NDC `y` pointing up and rows down.
    pub fn to_pixel(&self, v: [f64; 3], h: usize, w: usize) -> [f64; 2] {
        let [nx, ny] = self.to_ndc(v);
        [(nx + 1.0) * 0.5 * (w as f64 - 1.0), (1.0 - ny) * 0.5 * (h as f64 - 1.0)]
    }
}

/// Pose, shape and camera of one body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    /// Axis-angle per joint, radians.
    pub theta: Vec<[f64; 3]>,
    pub beta: Vec<f64>,
    pub camera: Camera,
}

impl BodyParams {
    pub fn rest(camera: Camera) -> Self {
        Self {
            theta: vec![[0.0; 3]; NUM_JOINTS],
            beta: vec![0.0; NUM_SHAPE],
            camera,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != NUM_JOINTS || self.beta.len() != NUM_SHAPE {
            return Err(Error::InvalidArgument(format!(
                "expected 24 joint rotations and 10 shape coefficients, got {} and {}",
                self.theta.len(),
                self.beta.len()
            )));
        }
        if self.theta.iter().flatten().chain(&self.beta).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("body parameters".into()));
        }
        self.camera.validate()
    }

    pub fn theta_tensor(&self) -> Tensor<f64> {
        Tensor::from_parts(vec![NUM_JOINTS, 3], self.theta.iter().flatten().copied().collect())
    }

    pub fn beta_tensor(&self) -> Tensor<f64> {
        Tensor::from_parts(vec![NUM_SHAPE], self.beta.clone())
    }
}

/// A posed body. Faces are shared with the template.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Arc<Vec<[u32; 3]>>,
    /// Root joint position (unchanged by posing).
    pub root: [f64; 3],
}

impl BodyMesh {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Vertices relative to the root joint.
    pub fn relative_vertices(&self) -> Vec<[f64; 3]> {
        self.vertices
            .iter()
            .map(|v| [v[0] - self.root[0], v[1] - self.root[1], v[2] - self.root[2]])
            .collect()
    }

    pub fn project(&self, camera: &Camera, h: usize, w: usize) -> Vec<[f64; 2]> {
        self.vertices.iter().map(|&v| camera.to_pixel(v, h, w)).collect()
    }
}

/// Forward pass state reused by the backward rule.
struct Posed {
    shaped: Vec<[f64; 3]>,
    joints: Vec<[f64; 3]>,
    rot: Vec<Mat3>,
    drot: Vec<[Mat3; 3]>,
    global: Vec<Mat3>,
    trans: Vec<[f64; 3]>,
    vertices: Vec<[f64; 3]>,
}

fn pose(t: &BodyTemplate, theta: &[f64], beta: &[f64]) -> Posed {
    let n = t.num_vertices();
    let mut shaped = t.rest_vertices.clone();
    let mut joints = t.rest_joints.clone();
    for (k, &b) in beta.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        for (v, s) in shaped.iter_mut().zip(&t.shape_basis[k]) {
            for c in 0..3 {
                v[c] += b * s[c];
            }
        }
        for (j, s) in joints.iter_mut().zip(&t.joint_shape_basis[k]) {
            for c in 0..3 {
                j[c] += b * s[c];
            }
        }
    }
    let mut rot = Vec::with_capacity(NUM_JOINTS);
    let mut drot = Vec::with_capacity(NUM_JOINTS);
    for j in 0..NUM_JOINTS {
        let (r, dr) = rodrigues_with_jacobian([theta[3 * j], theta[3 * j + 1], theta[3 * j + 2]]);
        rot.push(r);
        drot.push(dr);
    }
    let mut global = vec![IDENTITY; NUM_JOINTS];
    let mut trans = vec![[0.0; 3]; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        match t.parents[j] {
            None => {
                global[j] = rot[j];
                trans[j] = joints[j];
            }
            Some(p) => {
                global[j] = matmul(&global[p], &rot[j]);
                let bone = [
                    joints[j][0] - joints[p][0],
                    joints[j][1] - joints[p][1],
                    joints[j][2] - joints[p][2],
                ];
                let r = matvec(&global[p], bone);
                trans[j] = [r[0] + trans[p][0], r[1] + trans[p][1], r[2] + trans[p][2]];
            }
        }
    }
    // Each joint acts as x -> G x + (T - G J).
    let offsets: Vec<[f64; 3]> = (0..NUM_JOINTS)
        .map(|j| {
            let gj = matvec(&global[j], joints[j]);
            [trans[j][0] - gj[0], trans[j][1] - gj[1], trans[j][2] - gj[2]]
        })
        .collect();
    let mut vertices = vec![[0.0; 3]; n];
    for (v, out) in vertices.iter_mut().enumerate() {
        for (j, &w) in t.skin_row(v).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let x = matvec(&global[j], shaped[v]);
            for c in 0..3 {
                out[c] += w * (x[c] + offsets[j][c]);
            }
        }
    }
    Posed {
        shaped,
        joints,
        rot,
        drot,
        global,
        trans,
        vertices,
    }
}

fn backward(t: &BodyTemplate, p: &Posed, g: &[f64], needs: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let n = t.num_vertices();
    let mut g_global = vec![[[0.0; 3]; 3]; NUM_JOINTS];
    let mut g_off = vec![[0.0; 3]; NUM_JOINTS];
    let mut g_shaped = vec![[0.0; 3]; if needs[1] { n } else { 0 }];
    for v in 0..n {
        let gv = [g[3 * v], g[3 * v + 1], g[3 * v + 2]];
        for (j, &w) in t.skin_row(v).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for a in 0..3 {
                g_off[j][a] += w * gv[a];
                for b in 0..3 {
                    g_global[j][a][b] += w * gv[a] * p.shaped[v][b];
                }
            }
            if needs[1] {
                let back = matvec(&transpose(&p.global[j]), gv);
                for c in 0..3 {
                    g_shaped[v][c] += w * back[c];
                }
            }
        }
    }
    let mut g_trans = g_off.clone();
    let mut g_joints = vec![[0.0; 3]; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        // offset = T - G J
        let back = matvec(&transpose(&p.global[j]), g_off[j]);
        for a in 0..3 {
            g_joints[j][a] -= back[a];
            for b in 0..3 {
                g_global[j][a][b] -= g_off[j][a] * p.joints[j][b];
            }
        }
    }
    let mut g_rot = vec![[[0.0; 3]; 3]; NUM_JOINTS];
    for j in (0..NUM_JOINTS).rev() {
        match t.parents[j] {
            None => {
                g_rot[j] = g_global[j];
                for c in 0..3 {
                    g_joints[j][c] += g_trans[j][c];
                }
            }
            Some(par) => {
                let gp_t = transpose(&p.global[par]);
                let bone = [
                    p.joints[j][0] - p.joints[par][0],
                    p.joints[j][1] - p.joints[par][1],
                    p.joints[j][2] - p.joints[par][2],
                ];
                let back = matvec(&gp_t, g_trans[j]);
                for a in 0..3 {
                    g_joints[j][a] += back[a];
                    g_joints[par][a] -= back[a];
                    g_trans[par][a] += g_trans[j][a];
                    for b in 0..3 {
                        g_global[par][a][b] += g_trans[j][a] * bone[b];
                    }
                }
                // G_j = G_p R_j
                let from_child = matmul(&g_global[j], &transpose(&p.rot[j]));
                axpy(&mut g_global[par], 1.0, &from_child);
                g_rot[j] = matmul(&gp_t, &g_global[j]);
            }
        }
    }
    let mut g_theta = Vec::new();
    if needs[0] {
        g_theta = vec![0.0; NUM_JOINTS * 3];
        for j in 0..NUM_JOINTS {
            for c in 0..3 {
                let d = &p.drot[j][c];
                let mut s = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        s += g_rot[j][a][b] * d[a][b];
                    }
                }
                g_theta[3 * j + c] = s;
            }
        }
    }
    let mut g_beta = Vec::new();
    if needs[1] {
        g_beta = (0..NUM_SHAPE)
            .map(|k| {
                let sv: f64 = g_shaped
                    .iter()
                    .zip(&t.shape_basis[k])
                    .map(|(g, s)| g[0] * s[0] + g[1] * s[1] + g[2] * s[2])
                    .sum();
                let sj: f64 = g_joints
                    .iter()
                    .zip(&t.joint_shape_basis[k])
                    .map(|(g, s)| g[0] * s[0] + g[1] * s[1] + g[2] * s[2])
                    .sum();
                sv + sj
            })
            .collect();
    }
    (g_theta, g_beta)
}

/// Differentiable linear blend skinning: `theta: [24, 3]`, `beta: [10]`
/// to posed vertices `[N, 3]`.
pub fn lbs_var<T: Scalar>(template: &Arc<BodyTemplate>, theta: &Var<T>, beta: &Var<T>) -> Result<Var<T>> {
    if theta.shape() != [NUM_JOINTS, 3] || beta.shape() != [NUM_SHAPE] {
        return Err(Error::shape("lbs", &[theta.shape(), beta.shape()]));
    }
    let th: Vec<f64> = theta.data().iter().map(|x| x.to_f64_lossy()).collect();
    let be: Vec<f64> = beta.data().iter().map(|x| x.to_f64_lossy()).collect();
    if th.iter().chain(&be).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("lbs parameters".into()));
    }
    let posed = pose(template, &th, &be);
    let n = template.num_vertices();
    let out = posed.vertices.iter().flatten().map(|&x| T::from_f64_lossy(x)).collect();
    let value = Tensor::from_parts(vec![n, 3], out);
    let t = template.clone();
    Ok(Var::record(value, &[theta, beta], move |g, needs| {
        let g: Vec<f64> = g.iter().map(|x| x.to_f64_lossy()).collect();
        let (gt, gb) = backward(&t, &posed, &g, needs);
        let conv = |v: Vec<f64>| v.into_iter().map(T::from_f64_lossy).collect();
        vec![needs[0].then(|| conv(gt)), needs[1].then(|| conv(gb))]
    }))
}

/// Posed mesh `m(theta, beta)`.
pub fn lbs(template: &BodyTemplate, params: &BodyParams) -> Result<BodyMesh> {
    params.validate()?;
    let th: Vec<f64> = params.theta.iter().flatten().copied().collect();
    let posed = pose(template, &th, &params.beta);
    if posed.vertices.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("posed vertices".into()));
    }
    Ok(BodyMesh {
        vertices: posed.vertices,
        faces: template.faces.clone(),
        root: posed.trans[0],
    })
}

/// Posed joint positions (for pose sampling and visualization).
pub fn posed_joints(template: &BodyTemplate, params: &BodyParams) -> Result<Vec<[f64; 3]>> {
    params.validate()?;
    let th: Vec<f64> = params.theta.iter().flatten().copied().collect();
    Ok(pose(template, &th, &params.beta).trans)
}
