use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::body::{lbs, make_template, BodyParams, BodyTemplate, TemplateConfig, NUM_JOINTS};
use crate::nn::{grad_check_param, ParamStore};
use crate::tensor::{grad_check, GradCheckOptions, Tape};

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_f64(shape, &(0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>()).unwrap()
}

fn posed(t: &BodyTemplate, rng: &mut ChaCha8Rng, scale: f64) -> (BodyMesh, Camera) {
    let p = BodyParams {
        theta: (0..NUM_JOINTS)
            .map(|_| [0; 3].map(|_| rng.random_range(-scale..scale)))
            .collect(),
        beta: (0..10).map(|_| rng.random_range(-1.0..1.0)).collect(),
        camera: Camera::new(0.9, 0.0, 0.05),
    };
    (lbs(t, &p).unwrap(), p.camera)
}

/// Dense `D^-1 (A + I)` recounted from the face list.
fn dense_operator(faces: &[[u32; 3]], n: usize) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for f in faces {
        for &i in f {
            for &j in f {
                a[i as usize][j as usize] = 1.0;
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
        let d: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= d);
    }
    a
}

#[test]
fn triangle_graphs() {
    let g = MeshGraph::build(&[[0, 1, 2]], 3).unwrap();
    for i in 0..3 {
        assert_eq!(g.degree(i), 2);
        let row: Vec<(usize, f64)> = g.propagate.row(i).collect();
        assert_eq!(row.len(), 3);
        assert!(row.iter().all(|&(_, w)| w == 1.0 / 3.0));
    }
    let g = MeshGraph::build(&[[0, 1, 2], [3, 4, 5]], 6).unwrap();
    for i in 0..3 {
        for j in 3..6 {
            assert!(!g.has_edge(i, j) && !g.has_edge(j, i));
        }
    }
    assert!(g.has_edge(4, 5) && g.has_edge(0, 2));
    assert!(MeshGraph::build(&[[0, 1, 3]], 3).is_err());
}

#[test]
fn template_graph_matches_face_recount() {
    let t = make_template(TemplateConfig::default()).unwrap();
    let n = t.num_vertices();
    let g = MeshGraph::build(&t.faces, n).unwrap();
    let dense = dense_operator(&t.faces, n);
    for i in 0..n {
        let deg = dense[i].iter().filter(|&&x| x > 0.0).count() - 1;
        assert_eq!(g.degree(i), deg);
        for j in 0..n {
            assert_eq!(g.has_edge(i, j), i != j && dense[i][j] > 0.0);
            assert_eq!(g.has_edge(i, j), g.has_edge(j, i));
        }
        let s: f64 = g.propagate.row(i).map(|(_, w)| w).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

fn store_with_layer(cin: usize, cout: usize, seed: u64) -> (ParamStore<f64>, GraphConv) {
    let mut store = ParamStore::new();
    let layer = GraphConv::new(&mut ParamBuilder::new(&mut store, seed), "gc", cin, cout);
    (store, layer)
}

#[test]
fn isolated_vertices_reduce_to_normalization() {
    let n = 7;
    let g = MeshGraph::build(&[], n).unwrap();
    let (mut store, layer) = store_with_layer(3, 3, 0);
    let eye = Tensor::from_f64(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    store.set(layer.weight, eye).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Var::constant(random_tensor(&mut rng, &[2, 3, n], 0.1, 2.0));
    let y = layer.forward(&store.bind(None), &g, &x).unwrap();
    let expect = mesh_instance_norm(&x, NORM_EPS).unwrap();
    assert!(y.value().max_abs_diff(expect.value()) < 1e-12);
}

#[test]
fn constant_input_normalizes_to_shift() {
    let t = make_template(TemplateConfig::tiny()).unwrap();
    let g = MeshGraph::build(&t.faces, t.num_vertices()).unwrap();
    let (mut store, layer) = store_with_layer(2, 4, 3);
    store
        .set(layer.shift, Tensor::from_f64(&[4], &[0.5, -1.0, 0.0, 2.0]).unwrap())
        .unwrap();
    let mut data = vec![0.0; 2 * 72];
    data[..72].fill(0.7);
    data[72..].fill(-1.3);
    let x = Var::constant(Tensor::from_f64(&[1, 2, 72], &data).unwrap());
    let y = layer.forward(&store.bind(None), &g, &x).unwrap();
    for c in 0..4 {
        let shift = [0.5, -1.0, 0.0, 2.0][c];
        assert!(y.data()[c * 72..(c + 1) * 72].iter().all(|&v| (v - shift).abs() < 1e-9));
    }
}

#[test]
fn graph_conv_matches_dense_oracle() {
    let t = make_template(TemplateConfig::tiny()).unwrap();
    let n = t.num_vertices();
    let g = MeshGraph::build(&t.faces, n).unwrap();
    let (mut store, layer) = store_with_layer(5, 4, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    store.set(layer.scale, random_tensor(&mut rng, &[4], 0.5, 1.5)).unwrap();
    store
        .set(layer.shift, random_tensor(&mut rng, &[4], -0.5, 0.5))
        .unwrap();
    let x = random_tensor(&mut rng, &[1, 5, n], -1.0, 1.0);
    let y = layer.forward(&store.bind(None), &g, &Var::constant(x.clone())).unwrap();

    let a = dense_operator(&t.faces, n);
    let w = store.get(layer.weight).data().to_vec();
    let (scale, shift) = (store.get(layer.scale).data(), store.get(layer.shift).data());
    for co in 0..4 {
        let xw: Vec<f64> = (0..n)
            .map(|v| (0..5).map(|ci| x.data()[ci * n + v] * w[ci * 4 + co]).sum())
            .collect();
        let h: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| a[i][j] * xw[j]).sum::<f64>().max(0.0))
            .collect();
        let mean = h.iter().sum::<f64>() / n as f64;
        let var = h.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        for i in 0..n {
            let expect = scale[co] * (h[i] - mean) / (var + NORM_EPS).sqrt() + shift[co];
            assert!((y.data()[co * n + i] - expect).abs() < 1e-10);
        }
    }
}

#[test]
fn mesh_norm_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Var::constant(random_tensor(&mut rng, &[2, 6, 72], -3.0, 5.0));
    let y = mesh_instance_norm(&x, NORM_EPS).unwrap();
    for row in y.data().chunks(72) {
        let mean = row.iter().sum::<f64>() / 72.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 72.0;
        assert!(mean.abs() <= 1e-6);
        assert!((var - 1.0).abs() <= 1e-4);
    }
    assert!(mesh_instance_norm(&Var::constant(Tensor::<f64>::zeros(&[2, 72])), NORM_EPS).is_err());
}

/// Relabels vertices: new vertex `k` is old vertex `perm[k]`.
fn permute_faces(faces: &[[u32; 3]], perm: &[usize]) -> Vec<[u32; 3]> {
    let mut inv = vec![0u32; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k as u32;
    }
    faces.iter().map(|f| f.map(|i| inv[i as usize])).collect()
}

fn permute_columns(x: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let n = perm.len();
    let data: Vec<f64> = x
        .data()
        .chunks(n)
        .flat_map(|row| perm.iter().map(|&p| row[p]).collect::<Vec<_>>())
        .collect();
    Tensor::from_f64(x.shape(), &data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn graph_conv_is_permutation_equivariant(seed in 0u64..10_000) {
        let t = make_template(TemplateConfig::tiny()).unwrap();
        let n = t.num_vertices();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let (store, layer) = store_with_layer(4, 3, seed);
        let p = store.bind(None);
        let x = random_tensor(&mut rng, &[2, 4, n], -1.0, 1.0);
        let g = MeshGraph::build(&t.faces, n).unwrap();
        let gp = MeshGraph::build(&permute_faces(&t.faces, &perm), n).unwrap();
        let y = layer.forward(&p, &g, &Var::constant(x.clone())).unwrap();
        let yp = layer.forward(&p, &gp, &Var::constant(permute_columns(&x, &perm))).unwrap();
        prop_assert!(yp.value().max_abs_diff(&permute_columns(y.value(), &perm)) <= 1e-6);
    }
}

fn block_store(channels: usize, process_3d: bool, seed: u64) -> (ParamStore<f64>, LpBlock) {
    let mut store = ParamStore::new();
    let block = LpBlock::new(&mut ParamBuilder::new(&mut store, seed), "lpb", channels, process_3d);
    (store, block)
}

#[test]
fn residual_layers_can_be_silenced() {
    let t = make_template(TemplateConfig::tiny()).unwrap();
    let g = MeshGraph::build(&t.faces, 72).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (src, cs) = posed(&t, &mut rng, 0.4);
    let (dst, ct) = posed(&t, &mut rng, 0.4);
    let geo = LiftProjectGeometry::new(&src, &cs, &dst, &ct, 12, 12).unwrap();
    let (mut store, block) = block_store(3, true, 5);
    let layers = block.layers.clone().unwrap();
    for l in &layers[1..] {
        store.set(l.weight, Tensor::zeros(store.get(l.weight).shape())).unwrap();
        store.set(l.scale, Tensor::zeros(store.get(l.scale).shape())).unwrap();
    }
    let p = store.bind(None);
    let feat = Var::constant(random_tensor(&mut rng, &[1, 3, 12, 12], -1.0, 1.0));
    let lifted = lift(&feat, &[&geo]).unwrap();
    let out = block.process(&p, &g, &lifted, &[&geo]).unwrap();
    let vs = coords(&[&geo], |g| &g.source_rel);
    let vt = coords(&[&geo], |g| &g.target_rel);
    let first = layers[0]
        .forward(&p, &g, &Var::concat(&[&vs, &vt, &lifted], 1).unwrap())
        .unwrap();
    assert_eq!(out.data(), first.data());
}

#[test]
fn lifting_constant_and_out_of_frame() {
    let t = make_template(TemplateConfig::tiny()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mesh, cam) = posed(&t, &mut rng, 0.2);
    let geo = LiftProjectGeometry::new(&mesh, &cam, &mesh, &cam, 16, 16).unwrap();
    let pts = mesh.project(&cam, 16, 16);
    assert!(pts
        .iter()
        .all(|p| p[0] >= 0.0 && p[0] <= 15.0 && p[1] >= 0.0 && p[1] <= 15.0));
    let feat = Var::constant(Tensor::<f64>::full(&[1, 2, 16, 16], 0.625));
    let m = lift(&feat, &[&geo]).unwrap();
    assert!(m.data().iter().all(|&v: &f64| (v - 0.625).abs() < 1e-15));

    let far = Camera::new(0.9, 3.5, 0.0);
    let geo = LiftProjectGeometry::new(&mesh, &far, &mesh, &cam, 16, 16).unwrap();
    let m = lift(&feat, &[&geo]).unwrap();
    assert!(m.data().iter().all(|&v| v == 0.0));
}

#[test]
fn disabled_block_is_lift_then_project() {
    let t = make_template(TemplateConfig::tiny()).unwrap();
    let g = MeshGraph::build(&t.faces, 72).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (src, cs) = posed(&t, &mut rng, 0.4);
    let (dst, ct) = posed(&t, &mut rng, 0.4);
    let geo = LiftProjectGeometry::new(&src, &cs, &dst, &ct, 16, 16).unwrap();
    let (store, block) = block_store(2, false, 0);
    assert!(store.is_empty());
    let feat = Var::constant(random_tensor(&mut rng, &[1, 2, 16, 16], -1.0, 1.0));
    let out = block.forward(&store.bind(None), &g, &feat, &[&geo]).unwrap();
    let expect = project(&lift(&feat, &[&geo]).unwrap(), &[&geo]).unwrap();
    assert_eq!(out.data(), expect.data());
    assert_eq!(out.shape(), &[1, 2, 16, 16]);
}

#[test]
fn block_gradients_match_finite_differences() {
    let t = make_template(TemplateConfig::tiny()).unwrap();
    let g = MeshGraph::build(&t.faces, 72).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (s0, c0) = posed(&t, &mut rng, 0.4);
    let (t0, d0) = posed(&t, &mut rng, 0.4);
    let (s1, c1) = posed(&t, &mut rng, 0.4);
    let (t1, d1) = posed(&t, &mut rng, 0.4);
    let g0 = LiftProjectGeometry::new(&s0, &c0, &t0, &d0, 10, 10).unwrap();
    let g1 = LiftProjectGeometry::new(&s1, &c1, &t1, &d1, 10, 10).unwrap();
    let geoms = [&g0, &g1];
    let (store, block) = block_store(2, true, 9);
    let feat = random_tensor(&mut rng, &[2, 2, 10, 10], -1.0, 1.0);
    let probe = Var::constant(random_tensor(&mut rng, &[2, 2, 10, 10], -1.0, 1.0));
    let loss = |p: &Bound<f64>, f: &Var<f64>| block.forward(p, &g, f, &geoms)?.mul(&probe).map(|v| v.sum());

    let base = store.bind(None);
    let r = grad_check(|f| loss(&base, f), &feat, &GradCheckOptions::default()).unwrap();
    assert!(r.passed(), "features: {r:?}");
    let fv = Var::constant(feat.clone());
    for (i, name) in store.names().iter().enumerate() {
        let r = grad_check_param(&store, ParamId(i), |p| loss(p, &fv), &GradCheckOptions::default()).unwrap();
        assert!(r.passed(), "{name}: {r:?}");
    }

    // The tape reaches every parameter.
    let tape = Tape::new();
    let p = store.bind(Some(&tape));
    let grads = loss(&p, &tape.leaf(feat)).unwrap().backward().unwrap();
    for v in p.vars() {
        assert!(grads.try_get(v).is_some());
    }
}

#[test]
fn self_round_trip_reproduces_smooth_maps() {
    let t = make_template(TemplateConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mesh, cam) = posed(&t, &mut rng, 0.3);
    let (h, w) = (32, 32);
    let geo = LiftProjectGeometry::new(&mesh, &cam, &mesh, &cam, h, w).unwrap();
    let data: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            (0.21 * x + 0.1).sin() * (0.17 * y - 0.3).cos()
        })
        .collect();
    let feat = Var::constant(Tensor::<f64>::from_f64(&[1, 1, h, w], &data).unwrap());
    let out = project(&lift(&feat, &[&geo]).unwrap(), &[&geo]).unwrap();
    let mut worst: f64 = 0.0;
    for px in 0..h * w {
        if geo.target_raster.face_id[px] >= 0 {
            worst = worst.max((out.data()[px] - data[px]).abs());
        }
    }
    assert!(worst < 0.1, "{worst}");
}
