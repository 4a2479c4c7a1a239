use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::body::{lbs, make_template, BodyParams, BodyTemplate, TemplateConfig, NUM_JOINTS};
use crate::nn::{grad_check_param, ParamId, ParamStore};
use crate::tensor::{grad_check, GradCheckOptions, Tape, Tensor};

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_f64(shape, &(0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>()).unwrap()
}

fn posed(t: &BodyTemplate, rng: &mut ChaCha8Rng) -> (BodyMesh, Camera) {
    let p = BodyParams {
        theta: (0..NUM_JOINTS)
            .map(|_| [0; 3].map(|_| rng.random_range(-0.4..0.4)))
            .collect(),
        beta: (0..10).map(|_| rng.random_range(-1.0..1.0)).collect(),
        camera: Camera::new(0.9, 0.0, 0.05),
    };
    (lbs(t, &p).unwrap(), p.camera)
}

fn small_config() -> GeneratorConfig {
    GeneratorConfig {
        fg_widths: [2, 2, 3, 3],
        adcnet_width: 2,
        adcnet_hidden: 3,
        bg_widths: [2, 2, 3],
        bg_res_blocks: 1,
        disable_3dp: false,
        disable_adcnet: false,
    }
}

struct Fixture {
    graph: MeshGraph,
    geoms: Vec<TransferGeometry>,
}

fn fixture(batch: usize, size: usize, seed: u64) -> Fixture {
    let t = make_template(TemplateConfig::tiny()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geoms = (0..batch)
        .map(|_| {
            let (s, cs) = posed(&t, &mut rng);
            let (d, cd) = posed(&t, &mut rng);
            TransferGeometry::new(&s, &cs, &d, &cd, size, size).unwrap()
        })
        .collect();
    Fixture {
        graph: MeshGraph::build(&t.faces, t.num_vertices()).unwrap(),
        geoms,
    }
}

#[test]
fn output_shapes_and_ranges() {
    let f = fixture(2, 16, 3);
    let mut store = ParamStore::<f64>::new();
    let mut b = ParamBuilder::new(&mut store, 1);
    let fg = ForegroundGenerator::new(&mut b, &GeneratorConfig::default());
    let bg = BackgroundGenerator::new(&mut b, &GeneratorConfig::default());
    let p = store.bind(None);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let img = Var::constant(random_tensor(&mut rng, &[2, 3, 16, 16], -1.0, 1.0));
    let crd = Var::constant(random_tensor(&mut rng, &[2, 3, 16, 16], -0.5, 0.5));
    let g: Vec<&TransferGeometry> = f.geoms.iter().collect();
    let out = fg.forward(&p, &f.graph, &img, &crd, &g).unwrap();
    assert_eq!(out.rgb.shape(), &[2, 3, 16, 16]);
    assert_eq!(out.mask.shape(), &[2, 1, 16, 16]);
    assert!(out.rgb.data().iter().all(|v| v.abs() < 1.0));
    assert!(out.mask.data().iter().all(|&v| v > 0.0 && v < 1.0));
    let back = bg.forward(&p, &img).unwrap();
    assert_eq!(back.shape(), &[2, 3, 16, 16]);
    assert!(fuse(&out.rgb, &back, &out.mask).is_ok());
}

#[test]
fn rejects_bad_inputs() {
    let f = fixture(1, 16, 3);
    let mut store = ParamStore::<f64>::new();
    let fg = ForegroundGenerator::new(&mut ParamBuilder::new(&mut store, 1), &small_config());
    let p = store.bind(None);
    let img = Var::constant(Tensor::zeros(&[1, 3, 12, 12]));
    assert!(fg.forward(&p, &f.graph, &img, &img, &[&f.geoms[0]]).is_err());
    let img = Var::constant(Tensor::zeros(&[1, 3, 16, 16]));
    assert!(fg.forward(&p, &f.graph, &img, &img, &[]).is_err());
    let t = make_template(TemplateConfig::tiny()).unwrap();
    let m = lbs(&t, &BodyParams::rest(Camera::new(1.0, 0.0, 0.0))).unwrap();
    assert!(TransferGeometry::new(&m, &Camera::new(1.0, 0.0, 0.0), &m, &Camera::new(1.0, 0.0, 0.0), 20, 20).is_err());
    assert!(GeneratorConfig {
        adcnet_width: 0,
        ..small_config()
    }
    .validate()
    .is_err());
}

#[test]
fn ablation_flags_remove_parameters() {
    let count = |cfg: &GeneratorConfig| {
        let mut store = ParamStore::<f64>::new();
        ForegroundGenerator::new(&mut ParamBuilder::new(&mut store, 0), cfg);
        store.names().to_vec()
    };
    let full = count(&small_config());
    assert!(full.iter().any(|n| n.starts_with("fg.lpb0.gc0")));
    assert!(full.iter().any(|n| n.starts_with("fg.adcnet")));
    let no3d = count(&GeneratorConfig {
        disable_3dp: true,
        ..small_config()
    });
    assert!(!no3d.iter().any(|n| n.contains(".lpb")));
    let noadc = count(&GeneratorConfig {
        disable_adcnet: true,
        ..small_config()
    });
    assert!(!noadc.iter().any(|n| n.contains("adcnet")));
    assert_eq!(full.len(), no3d.len() + 16 * 3);
}

#[test]
fn fuse_limits_are_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let fg = Var::constant(random_tensor(&mut rng, &[2, 3, 4, 5], -1.0, 1.0));
    let bg = Var::constant(random_tensor(&mut rng, &[2, 3, 4, 5], -1.0, 1.0));
    let m = |v: f64| Var::constant(Tensor::<f64>::full(&[2, 1, 4, 5], v));
    assert_eq!(fuse(&fg, &bg, &m(1.0)).unwrap().data(), fg.data());
    assert_eq!(fuse(&fg, &bg, &m(0.0)).unwrap().data(), bg.data());
    let half = fuse(&fg, &bg, &m(0.5)).unwrap();
    for ((&h, &a), &b) in half.data().iter().zip(fg.data()).zip(bg.data()) {
        assert_eq!(h, 0.5 * a + 0.5 * b);
    }
    assert!(fuse(&fg, &bg, &m(1.5)).is_err());
    assert!(fuse(&fg, &bg, &m(f64::NAN)).is_err());
}

#[test]
fn fuse_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let fg = random_tensor(&mut rng, &[1, 3, 3, 3], -1.0, 1.0);
    let bg = Var::constant(random_tensor(&mut rng, &[1, 3, 3, 3], -1.0, 1.0));
    let mask = Var::constant(random_tensor(&mut rng, &[1, 1, 3, 3], 0.1, 0.9));
    let probe = Var::constant(random_tensor(&mut rng, &[1, 3, 3, 3], -1.0, 1.0));
    let r = grad_check(
        |x| Ok(fuse(x, &bg, &mask)?.mul(&probe)?.sum()),
        &fg,
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(r.passed(), "{r:?}");
}

fn perturb(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    // Zero biases put ReLUs exactly on their kink; move off it.
    for v in store.values_mut() {
        let noise = random_tensor(rng, v.shape(), -0.1, 0.1);
        let data: Vec<f64> = v.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect();
        *v = Tensor::from_f64(v.shape(), &data).unwrap();
    }
}

fn check_all(store: &ParamStore<f64>, x: &Tensor<f64>, loss: impl Fn(&Bound<f64>, &Var<f64>) -> Result<Var<f64>>) {
    let opts = GradCheckOptions::default().sampled(24, 1);
    let base = store.bind(None);
    let r = grad_check(|v| loss(&base, v), x, &opts).unwrap();
    assert!(r.passed(), "input: {r:?}");
    let xv = Var::constant(x.clone());
    for (i, name) in store.names().iter().enumerate() {
        let r = grad_check_param(store, ParamId(i), |p| loss(p, &xv), &opts.clone().sampled(6, i as u64)).unwrap();
        assert!(r.passed(), "{name}: {r:?}");
    }
    let tape = Tape::new();
    let p = store.bind(Some(&tape));
    let grads = loss(&p, &tape.leaf(x.clone())).unwrap().backward().unwrap();
    for v in p.vars() {
        assert!(grads.try_get(v).is_some());
    }
}

#[test]
fn foreground_gradients_match_finite_differences() {
    let f = fixture(2, 16, 11);
    let g: Vec<&TransferGeometry> = f.geoms.iter().collect();
    let mut store = ParamStore::<f64>::new();
    let fg = ForegroundGenerator::new(&mut ParamBuilder::new(&mut store, 4), &small_config());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    perturb(&mut store, &mut rng);
    let img = random_tensor(&mut rng, &[2, 3, 16, 16], -1.0, 1.0);
    let crd = Var::constant(random_tensor(&mut rng, &[2, 3, 16, 16], -0.5, 0.5));
    let probe = Var::constant(random_tensor(&mut rng, &[2, 4, 16, 16], -1.0, 1.0));
    check_all(&store, &img, |p, x| {
        let o = fg.forward(p, &f.graph, x, &crd, &g)?;
        Ok(Var::concat(&[&o.rgb, &o.mask], 1)?.mul(&probe)?.sum())
    });
}

#[test]
fn background_gradients_match_finite_differences() {
    let mut store = ParamStore::<f64>::new();
    let bg = BackgroundGenerator::new(&mut ParamBuilder::new(&mut store, 6), &small_config());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    perturb(&mut store, &mut rng);
    let img = random_tensor(&mut rng, &[1, 3, 32, 32], -1.0, 1.0);
    let probe = Var::constant(random_tensor(&mut rng, &[1, 3, 32, 32], -1.0, 1.0));
    check_all(&store, &img, |p, x| Ok(bg.forward(p, x)?.mul(&probe)?.sum()));
}
