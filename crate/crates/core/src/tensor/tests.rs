use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = numel(shape);
    t64(shape, &(0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
}

/// Random values kept at least `gap` away from zero.
fn random_off_kink(shape: &[usize], seed: u64, gap: f64) -> Tensor<f64> {
    random(shape, seed).map(|v| if v.abs() < gap { v.signum() * gap + v } else { v })
}

/// `sum(f(x) * r)` with fixed random weights, so every output element
/// contributes a distinct coefficient.
fn weighted<F>(f: F, seed: u64) -> impl Fn(&Var<f64>) -> crate::Result<Var<f64>>
where
    F: Fn(&Var<f64>) -> crate::Result<Var<f64>>,
{
    move |x| {
        let y = f(x)?;
        let r = Var::constant(random(y.shape(), seed ^ 0x5eed));
        Ok(y.mul(&r)?.sum())
    }
}

#[test]
fn forward_examples() {
    let a = Var::constant(t64(&[2], &[1.0, 2.0]));
    let b = Var::constant(t64(&[2], &[3.0, 4.0]));
    assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);

    let eye = Var::constant(t64(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
    let m = Var::constant(random(&[3, 4], 1));
    assert_eq!(eye.matmul(&m).unwrap().data(), m.data());

    let r = Var::constant(t64(&[3], &[-1.0, 0.0, 2.0])).relu();
    assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn shape_errors_name_the_op() {
    let a = Var::constant(Tensor::<f64>::zeros(&[2]));
    let b = Var::constant(Tensor::<f64>::zeros(&[3]));
    match a.add(&b) {
        Err(Error::ShapeMismatch { op, shapes }) => {
            assert_eq!(op, "add");
            assert_eq!(shapes, vec![vec![2], vec![3]]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
    let m = Var::constant(Tensor::<f64>::zeros(&[2, 3]));
    assert!(matches!(m.matmul(&m), Err(Error::ShapeMismatch { op: "matmul", .. })));
}

#[test]
fn backward_examples() {
    let tape = Tape::new();
    let x = tape.leaf(t64(&[3], &[0.3, -2.0, 5.0]));
    let g = x.sum().backward().unwrap();
    assert_eq!(g.get(&x).data(), &[1.0, 1.0, 1.0]);

    let tape = Tape::new();
    let x = tape.leaf(t64(&[2], &[1.0, 2.0]));
    let unused = tape.leaf(t64(&[2], &[7.0, 7.0]));
    let g = x.mul(&x).unwrap().sum().backward().unwrap();
    assert_eq!(g.get(&x).data(), &[2.0, 4.0]);
    assert_eq!(g.get(&unused).data(), &[0.0, 0.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let tape = Tape::new();
    let x = tape.leaf(t64(&[2], &[1.0, 2.0]));
    assert!(matches!(x.relu().backward(), Err(Error::NonScalarLoss(_))));
}

#[test]
fn constants_are_not_recorded() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(t64(&[2], &[1.0, 2.0]));
    let c = Var::constant(t64(&[2], &[1.0, 1.0]));
    let before = tape.len();
    let cc = c.add(&c).unwrap();
    assert!(!cc.requires_grad());
    assert_eq!(tape.len(), before);
    let y = x.add(&cc).unwrap();
    assert!(y.requires_grad());
    assert_eq!(tape.len(), before + 1);
}

#[test]
fn grad_check_smooth_function_passes() {
    for seed in 0..3 {
        let x = random(&[7], seed);
        let report = grad_check(|x| Ok(x.tanh().sum()), &x, &GradCheckOptions::with_tol(1e-4)).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.excluded.is_empty());
    }
}

#[test]
fn grad_check_relu_away_from_zero_passes() {
    let x = random_off_kink(&[9], 4, 0.1);
    let report = grad_check(|x| Ok(x.relu().sum()), &x, &GradCheckOptions::default()).unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.checked, 9);
}

#[test]
fn grad_check_flags_kinks() {
    let x = t64(&[3], &[0.0, 1.0, -1.0]);
    let report = grad_check(|x| Ok(x.relu().sum()), &x, &GradCheckOptions::default()).unwrap();
    assert_eq!(report.excluded, vec![0]);
    assert_eq!(report.checked, 2);
    assert!(report.passed());
}

#[test]
fn grad_check_catches_wrong_gradient() {
    // A backward rule that is off by a factor of two must fail.
    let bad = |x: &Var<f64>| {
        let value = x.value().map(|v| v * v);
        let xv = x.value().clone();
        let y = Var::record(value, &[x], move |g, _| {
            vec![Some(g.iter().zip(xv.data()).map(|(g, x)| g * x).collect())]
        });
        Ok(y.sum())
    };
    let report = grad_check(bad, &t64(&[2], &[1.0, 2.0]), &GradCheckOptions::default()).unwrap();
    assert!(!report.passed());
}

#[test]
fn grad_check_rejects_non_finite() {
    let x = t64(&[1], &[0.0]);
    let r = grad_check(|x| Ok(x.scale(f64::INFINITY).sum()), &x, &GradCheckOptions::default());
    assert!(matches!(r, Err(Error::NonFinite(_))));
}

type Prim = Box<dyn Fn(&Var<f64>) -> crate::Result<Var<f64>>>;

/// Every primitive with a single differentiable input, over a [2, 3, 4]
/// input (spatial ops treat it as B=2, C=3, S=4).
fn primitives() -> Vec<(&'static str, Prim)> {
    let w23 = random(&[3, 5], 100);
    let bias = random(&[3], 101);
    let scale = random(&[2, 3], 102);
    let shift = random(&[2, 3], 103);
    let mask = random(&[2, 1, 4], 104);
    let other = random(&[2, 3, 4], 105);
    vec![
        (
            "add",
            Box::new(move |x: &Var<f64>| x.add(&Var::constant(other.clone()))),
        ),
        (
            "sub",
            Box::new({
                let o = random(&[2, 3, 4], 106);
                move |x: &Var<f64>| Var::constant(o.clone()).sub(x)
            }),
        ),
        ("mul", Box::new(|x: &Var<f64>| x.mul(&x.tanh()))),
        ("scale", Box::new(|x: &Var<f64>| Ok(x.scale(-2.5)))),
        ("add_scalar", Box::new(|x: &Var<f64>| Ok(x.add_scalar(0.7).square()))),
        ("one_minus", Box::new(|x: &Var<f64>| Ok(x.one_minus()))),
        ("relu", Box::new(|x: &Var<f64>| Ok(x.relu()))),
        ("leaky_relu", Box::new(|x: &Var<f64>| Ok(x.leaky_relu(0.2)))),
        ("tanh", Box::new(|x: &Var<f64>| Ok(x.tanh()))),
        ("sigmoid", Box::new(|x: &Var<f64>| Ok(x.sigmoid()))),
        ("abs", Box::new(|x: &Var<f64>| Ok(x.abs()))),
        ("square", Box::new(|x: &Var<f64>| Ok(x.square()))),
        ("mean", Box::new(|x: &Var<f64>| Ok(x.mean()))),
        ("reshape", Box::new(|x: &Var<f64>| x.reshape(&[6, 4]))),
        ("concat", Box::new(|x: &Var<f64>| Var::concat(&[x, &x.square()], 1))),
        ("slice", Box::new(|x: &Var<f64>| x.slice(1, 1, 2))),
        (
            "matmul",
            Box::new(move |x: &Var<f64>| x.reshape(&[8, 3])?.matmul(&Var::constant(w23.clone()))),
        ),
        (
            "add_channel_bias",
            Box::new(move |x: &Var<f64>| x.add_channel_bias(&Var::constant(bias.clone()))),
        ),
        (
            "channel_affine",
            Box::new(move |x: &Var<f64>| {
                x.channel_affine(&Var::constant(scale.clone()), &Var::constant(shift.clone()))
            }),
        ),
        (
            "mul_mask",
            Box::new(move |x: &Var<f64>| x.mul_mask(&Var::constant(mask.clone()))),
        ),
        ("global_avg_pool", Box::new(|x: &Var<f64>| x.global_avg_pool())),
        ("instance_norm", Box::new(|x: &Var<f64>| x.instance_norm(1e-5))),
        (
            "channel_mix",
            Box::new({
                let w = random(&[3, 2], 107);
                move |x: &Var<f64>| x.channel_mix(&Var::constant(w.clone()))
            }),
        ),
    ]
}

#[test]
fn every_primitive_passes_grad_check_at_ten_points() {
    for (name, f) in primitives() {
        let f = std::rc::Rc::new(f);
        for point in 0..10u64 {
            let x = random_off_kink(&[2, 3, 4], 1000 + point, 1e-3);
            let g = f.clone();
            let report = grad_check(weighted(move |x| g(x), point), &x, &GradCheckOptions::with_tol(1e-4)).unwrap();
            assert!(report.passed(), "{name} at point {point}: {report:?}");
        }
    }
}

#[test]
fn binary_ops_differentiate_both_sides() {
    let a0 = random(&[2, 3, 4], 1);
    let b0 = random(&[2, 3, 4], 2);
    for (name, op) in [
        ("mul", (|a: &Var<f64>, b: &Var<f64>| a.mul(b)) as fn(&_, &_) -> _),
        ("sub", |a, b| a.sub(b)),
        ("mul_mask", |a, b| a.mul_mask(&b.slice(1, 0, 1)?)),
        ("channel_affine", |a, b| {
            let s = b.global_avg_pool()?;
            a.channel_affine(&s, &s.square())
        }),
        ("channel_mix", |a, b| {
            a.channel_mix(&b.slice(0, 0, 1)?.reshape(&[3, 4])?)
        }),
        ("add_channel_bias", |a, b| {
            a.add_channel_bias(&b.slice(0, 0, 1)?.slice(2, 0, 1)?.reshape(&[3])?)
        }),
    ] {
        let a = a0.clone();
        let rep = grad_check(
            weighted(move |b| op(&Var::constant(a.clone()), b), 9),
            &b0,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(rep.passed(), "{name} rhs: {rep:?}");
    }
    let w = random(&[3, 5], 3);
    let rep = grad_check(
        weighted(move |w| Var::constant(random(&[8, 3], 4)).matmul(w), 5),
        &w,
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(rep.passed(), "matmul rhs: {rep:?}");
}

#[test]
fn backward_is_linear() {
    let x0 = random(&[2, 3, 4], 11);
    let (a, b) = (0.7, -1.3);
    let grad_of = |f: &dyn Fn(&Var<f64>) -> Var<f64>| {
        let tape = Tape::new();
        let x = tape.leaf(x0.clone());
        f(&x).backward().unwrap().get(&x)
    };
    let f = |x: &Var<f64>| x.tanh().square().sum();
    let g = |x: &Var<f64>| x.instance_norm(1e-5).unwrap().sigmoid().sum();
    let combo = grad_of(&|x| f(x).scale(a).add(&g(x).scale(b)).unwrap());
    let gf = grad_of(&f);
    let gg = grad_of(&g);
    for i in 0..combo.numel() {
        let expect = a * gf.data()[i] + b * gg.data()[i];
        assert!((combo.data()[i] - expect).abs() < 1e-12);
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let tape = Tape::new();
        let x = tape.leaf(random(&[2, 3, 4], 3).cast::<f32>());
        let y = x.instance_norm(1e-5).unwrap().tanh().mean();
        (y.data().to_vec(), y.backward().unwrap().get(&x).to_vec())
    };
    let (a, b) = (run(), run());
    assert_eq!(
        a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(
        a.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn adam_zero_gradient_leaves_params_unchanged() {
    let mut params = vec![random(&[4], 1)];
    let before = params[0].clone();
    let mut st = AdamState::new(AdamConfig::default(), &params);
    st.step(&mut params, &["w".into()], &[Tensor::zeros(&[4])], 0.1)
        .unwrap();
    assert_eq!(params[0], before);
    assert_eq!(st.step, 1);
}

#[test]
fn adam_first_step_moves_by_lr_against_gradient_sign() {
    let mut params = vec![t64(&[3], &[0.0, 0.0, 0.0])];
    let mut st = AdamState::new(AdamConfig::default(), &params);
    st.step(&mut params, &["w".into()], &[t64(&[3], &[2.0, -0.5, 1e-3])], 0.01)
        .unwrap();
    let expected = [-0.01, 0.01, -0.01];
    for (p, e) in params[0].data().iter().zip(expected) {
        assert!((p - e).abs() < 1e-7, "{p} vs {e}");
    }
}

#[test]
fn adam_minimizes_a_quadratic_like_the_scalar_oracle() {
    // Scalar Adam written out independently.
    let (mut xo, mut m, mut v) = (1.0f64, 0.0, 0.0);
    for t in 1..=100 {
        let g = 2.0 * xo;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        xo -= 0.1 * mh / (vh.sqrt() + 1e-8);
    }

    let mut params = vec![t64(&[1], &[1.0])];
    let mut st = AdamState::new(AdamConfig::default(), &params);
    for _ in 0..100 {
        let tape = Tape::new();
        let x = tape.leaf(params[0].clone());
        let grad = x.square().sum().backward().unwrap().get(&x);
        st.step(&mut params, &["x".into()], &[grad], 0.1).unwrap();
    }
    let x = params[0].data()[0];
    assert!(x.abs() < 0.05);
    assert!((x - xo).abs() < 1e-12, "{x} vs oracle {xo}");
}

#[test]
fn adam_rejects_non_finite_gradient_by_name() {
    let mut params = vec![t64(&[1], &[1.0])];
    let mut st = AdamState::new(AdamConfig::default(), &params);
    let err = st
        .step(&mut params, &["enc.w".into()], &[t64(&[1], &[f64::NAN])], 0.1)
        .unwrap_err();
    assert!(err.to_string().contains("enc.w"), "{err}");
    assert_eq!(st.step, 0);
}

proptest! {
    #[test]
    fn reshape_then_concat_slice_roundtrip(
        data in proptest::collection::vec(-10.0f64..10.0, 24),
        split in 1usize..4,
    ) {
        let x = Var::constant(t64(&[2, 4, 3], &data));
        let a = x.slice(1, 0, split).unwrap();
        let b = x.slice(1, split, 4 - split).unwrap();
        let back = Var::concat(&[&a, &b], 1).unwrap();
        prop_assert_eq!(back.data(), x.data());
    }
}
