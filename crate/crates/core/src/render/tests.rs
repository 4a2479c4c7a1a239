use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::body::{lbs, make_template, BodyParams, TemplateConfig, NUM_JOINTS};
use crate::tensor::Tape;

fn flat_mesh(vertices: Vec<[f64; 3]>, faces: Vec<[u32; 3]>) -> BodyMesh {
    BodyMesh {
        vertices,
        faces: Arc::new(faces),
        root: [0.0; 3],
    }
}

/// Pixel-index coordinates to world points under the identity camera at
/// `size x size`.
fn world(x: f64, y: f64, z: f64, size: usize) -> [f64; 3] {
    let s = (size - 1) as f64;
    [2.0 * x / s - 1.0, 1.0 - 2.0 * y / s, z]
}

const ID: Camera = Camera {
    s: 1.0,
    tx: 0.0,
    ty: 0.0,
};

fn random_body(seed: u64, pose_scale: f64) -> (BodyMesh, Camera) {
    let t = make_template(TemplateConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = BodyParams {
        theta: (0..NUM_JOINTS)
            .map(|_| [0; 3].map(|_| rng.random_range(-pose_scale..pose_scale)))
            .collect(),
        beta: (0..10).map(|_| rng.random_range(-1.0..1.0)).collect(),
        camera: Camera::new(
            rng.random_range(0.8..1.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
        ),
    };
    (lbs(&t, &p).unwrap(), p.camera)
}

#[test]
fn background_is_zero() {
    let size = 8;
    let mesh = flat_mesh(
        vec![
            world(1.0, 1.0, 0.0, size),
            world(3.0, 1.0, 0.0, size),
            world(1.0, 3.0, 0.0, size),
        ],
        vec![[0, 1, 2]],
    );
    let out = rasterize(&[1.0, 2.0, 3.0], 1, &mesh, &ID, size, size).unwrap();
    assert_eq!(out.face_id[7 * size + 7], -1);
    assert_eq!(out.features.data()[7 * size + 7], 0.0);
    assert_eq!(out.coverage.data()[7 * size + 7], 0.0);
    assert_eq!(out.face_id[size + 1], 0);
}

#[test]
fn single_triangle_reads_barycentrics() {
    let size = 16;
    let p = [[1.3, 0.7], [14.2, 3.1], [4.4, 13.9]];
    let mesh = flat_mesh(
        p.iter().map(|q| world(q[0], q[1], 0.0, size)).collect(),
        vec![[0, 1, 2]],
    );
    let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let out = rasterize(&eye, 3, &mesh, &ID, size, size).unwrap();
    let hw = size * size;
    let mut covered = 0;
    for i in 0..size {
        for j in 0..size {
            // Solve c = p0 + u (p1 - p0) + v (p2 - p0) directly.
            let (ax, ay) = (p[1][0] - p[0][0], p[1][1] - p[0][1]);
            let (bx, by) = (p[2][0] - p[0][0], p[2][1] - p[0][1]);
            let (cx, cy) = (j as f64 - p[0][0], i as f64 - p[0][1]);
            let det = ax * by - ay * bx;
            let u = (cx * by - cy * bx) / det;
            let v = (ax * cy - ay * cx) / det;
            let w = [1.0 - u - v, u, v];
            let inside = w.iter().all(|&x| x >= 1e-9);
            let outside = w.iter().any(|&x| x <= -1e-9);
            let px = i * size + j;
            if inside {
                covered += 1;
                for k in 0..3 {
                    assert!((out.features.data()[k * hw + px] - w[k]).abs() < 1e-12);
                    assert_eq!(out.features.data()[k * hw + px], out.bary.data()[k * hw + px]);
                }
            } else if outside {
                assert_eq!(out.face_id[px], -1);
            }
        }
    }
    assert!(covered > 30);
}

#[test]
fn nearer_triangle_wins() {
    let size = 12;
    let far = [
        world(0.0, 0.0, -1.0, size),
        world(11.0, 0.0, -1.0, size),
        world(0.0, 11.0, -1.0, size),
    ];
    let near = [
        world(2.0, 2.0, 1.0, size),
        world(11.0, 2.0, 1.0, size),
        world(2.0, 11.0, 1.0, size),
    ];
    // Draw order must not matter.
    for near_first in [false, true] {
        let (v, feats, near_face) = if near_first {
            ([near, far].concat(), vec![5.0, 5.0, 5.0, 1.0, 2.0, 3.0], 0)
        } else {
            ([far, near].concat(), vec![1.0, 2.0, 3.0, 5.0, 5.0, 5.0], 1)
        };
        let mesh = flat_mesh(v, vec![[0, 1, 2], [3, 4, 5]]);
        let out = rasterize(&feats, 1, &mesh, &ID, size, size).unwrap();
        for i in 2..7 {
            for j in 2..7 {
                let px = i * size + j;
                assert_eq!(out.face_id[px], near_face);
                assert!((out.features.data()[px] - 5.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn depth_ties_go_to_lower_face() {
    let size = 8;
    let v = vec![
        world(0.0, 0.0, 0.0, size),
        world(7.0, 0.0, 0.0, size),
        world(0.0, 7.0, 0.0, size),
    ];
    let mesh = flat_mesh([v.clone(), v].concat(), vec![[3, 4, 5], [0, 1, 2]]);
    let out = rasterize(&[0.0; 6], 1, &mesh, &ID, size, size).unwrap();
    assert!(out.face_id.iter().all(|&f| f <= 0));
    assert!(out.face_id.contains(&0));
}

#[test]
fn empty_and_full_frame() {
    let mesh = flat_mesh(Vec::new(), Vec::new());
    assert!(render_silhouette(&mesh, &ID, 5, 7)
        .unwrap()
        .data()
        .iter()
        .all(|&x| x == 0.0));
    let full = flat_mesh(
        vec![[-1.5, -1.5, 0.0], [1.5, -1.5, 0.0], [1.5, 1.5, 0.0], [-1.5, 1.5, 0.0]],
        vec![[0, 1, 2], [0, 2, 3]],
    );
    assert!(render_silhouette(&full, &ID, 9, 6)
        .unwrap()
        .data()
        .iter()
        .all(|&x| x == 1.0));
}

#[test]
fn degenerate_triangles_are_skipped() {
    let mesh = flat_mesh(
        vec![[0.0, 0.0, 0.0], [0.5, 0.5, 0.0], [1.0, 1.0, 0.0]],
        vec![[0, 1, 2], [0, 0, 1]],
    );
    let out = rasterize(&[1.0; 3], 1, &mesh, &ID, 9, 9).unwrap();
    assert!(out.face_id.iter().all(|&f| f == -1));
}

#[test]
fn bad_inputs_error() {
    let mesh = flat_mesh(vec![[0.0; 3]; 3], vec![[0, 1, 3]]);
    assert!(rasterize(&[0.0; 3], 1, &mesh, &ID, 4, 4).is_err());
    let mesh = flat_mesh(vec![[0.0; 3]; 3], vec![[0, 1, 2]]);
    assert!(rasterize(&[0.0; 4], 1, &mesh, &ID, 4, 4).is_err());
    let nan = flat_mesh(vec![[f64::NAN, 0.0, 0.0]; 3], vec![[0, 1, 2]]);
    assert!(rasterize(&[0.0; 3], 1, &nan, &ID, 4, 4).is_err());
}

#[test]
fn coordinate_map_of_body() {
    let (mesh, cam) = random_body(4, 0.3);
    let (h, w) = (32, 32);
    let map = render_coordinate_map(&mesh, &cam, h, w).unwrap();
    let rel: Vec<f64> = mesh.relative_vertices().into_iter().flatten().collect();
    let direct = rasterize(&rel, 3, &mesh, &cam, h, w).unwrap();
    assert_eq!(map.data(), direct.features.data());
    let sil = render_silhouette(&mesh, &cam, h, w).unwrap();
    for px in 0..h * w {
        if sil.data()[px] == 0.0 {
            assert!((0..3).all(|c| map.data()[c * h * w + px] == 0.0));
        }
    }
    assert!(sil.data().iter().sum::<f64>() > 20.0);
}

#[test]
fn vertex_at_pixel_center_reads_its_coordinates() {
    let size = 9;
    let v = vec![
        world(4.0, 4.0, 0.3, size),
        world(8.0, 4.5, 0.1, size),
        world(3.0, 8.0, -0.2, size),
    ];
    let mesh = flat_mesh(v.clone(), vec![[0, 1, 2]]);
    let map = render_coordinate_map(&mesh, &ID, size, size).unwrap();
    let px = 4 * size + 4;
    for c in 0..3 {
        assert_eq!(map.data()[c * size * size + px], v[0][c]);
    }
}

#[test]
fn constant_features_are_reproduced() {
    let (mesh, cam) = random_body(8, 0.4);
    let feats: Vec<f64> = (0..mesh.num_vertices()).flat_map(|_| [2.5, -0.75]).collect();
    let out = rasterize(&feats, 2, &mesh, &cam, 24, 24).unwrap();
    let hw = 24 * 24;
    for px in 0..hw {
        if out.face_id[px] >= 0 {
            assert!((out.features.data()[px] - 2.5).abs() < 1e-12);
            assert!((out.features.data()[hw + px] + 0.75).abs() < 1e-12);
            let w: Vec<f64> = (0..3).map(|k| out.bary.data()[k * hw + px]).collect();
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn backward_is_adjoint_of_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for seed in 0..3 {
        let (mesh, cam) = random_body(seed, 0.5);
        let (h, w, c) = (32, 32, 4);
        let g = RasterGeometry::new(&mesh, &cam, h, w).unwrap();
        let n = mesh.num_vertices();
        let x: Vec<f64> = (0..c * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tape = Tape::new();
        let xv = tape.leaf(Tensor::from_f64(&[1, c, n], &x).unwrap());
        let uv = Var::constant(Tensor::from_f64(&[1, c, h, w], &u).unwrap());
        let y = rasterize_var(&xv, &[&g]).unwrap();
        let lhs: f64 = y.data().iter().zip(&u).map(|(a, b)| a * b).sum();
        let rtu = y.mul(&uv).unwrap().sum().backward().unwrap().get(&xv);
        let rhs: f64 = rtu.data().iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}

#[test]
fn batched_rasterization_matches_per_sample() {
    let (m0, c0) = random_body(1, 0.5);
    let (m1, c1) = random_body(2, 0.5);
    let g0 = RasterGeometry::new(&m0, &c0, 16, 16).unwrap();
    let g1 = RasterGeometry::new(&m1, &c1, 16, 16).unwrap();
    let n = m0.num_vertices();
    let x: Vec<f64> = (0..2 * 2 * n).map(|i| (i as f64 * 0.37).sin()).collect();
    let y = rasterize_var(
        &Var::constant(Tensor::<f64>::from_f64(&[2, 2, n], &x).unwrap()),
        &[&g0, &g1],
    )
    .unwrap();
    assert_eq!(y.shape(), &[2, 2, 16, 16]);
    for (b, g) in [&g0, &g1].iter().enumerate() {
        let feats: Vec<f64> = (0..n)
            .flat_map(|v| (0..2).map(move |c| (b, c, v)))
            .map(|(b, c, v)| x[(b * 2 + c) * n + v])
            .collect();
        let out = g.shade(&feats, 2).unwrap();
        assert_eq!(&y.data()[b * 512..(b + 1) * 512], out.features.data());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn rasterization_is_linear(seed in 0u64..500, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (mesh, cam) = random_body(seed % 7, 0.5);
        let g = RasterGeometry::new(&mesh, &cam, 20, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = mesh.num_vertices();
        let x: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (rx, ry, rm) = (g.shade(&x, 2).unwrap(), g.shade(&y, 2).unwrap(), g.shade(&mix, 2).unwrap());
        for i in 0..rm.features.numel() {
            let expect = a * rx.features.data()[i] + b * ry.features.data()[i];
            prop_assert!((rm.features.data()[i] - expect).abs() < 1e-12);
        }
    }
}
