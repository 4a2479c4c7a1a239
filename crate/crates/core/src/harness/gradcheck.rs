use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::body::{
    lbs, lbs_var, make_template, BodyMesh, BodyParams, BodyTemplate, Camera, TemplateConfig, NUM_JOINTS,
};
use crate::error::Result;
use crate::generators::{fuse, BackgroundGenerator, ForegroundGenerator, GeneratorConfig, TransferGeometry};
use crate::graph::{GraphConv, LiftProjectGeometry, LpBlock, MeshGraph};
use crate::losses::{lsgan_d_loss, lsgan_g_loss, mask_loss, rec_loss, PatchDiscriminator, PerceptualExtractor};
use crate::nn::{
    adain, bilinear_sample, grad_check_param, instance_norm_2d, AdaInParams, Bound, ParamBuilder, ParamId, ParamStore,
    NORM_EPS,
};
use crate::render::{rasterize_var, RasterGeometry};
use crate::tensor::{grad_check, ConvGeometry, GradCheckOptions, GradCheckReport, Tensor, Var};

/// Resolution of every suite.
pub const SIZE: usize = 16;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub excluded: usize,
    pub passed: bool,
}

struct Ctx {
    rng: ChaCha8Rng,
    template: Arc<BodyTemplate>,
    graph: MeshGraph,
    opts: GradCheckOptions,
    results: Vec<SuiteResult>,
}

impl Ctx {
    fn tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
        let n = shape.iter().product();
        let d: Vec<f64> = (0..n).map(|_| self.rng.random_range(lo..hi)).collect();
        Tensor::from_parts(shape.to_vec(), d)
    }

    fn constant(&mut self, shape: &[usize], lo: f64, hi: f64) -> Var<f64> {
        Var::constant(self.tensor(shape, lo, hi))
    }

    fn posed(&mut self) -> (BodyMesh, Camera) {
        let params = BodyParams {
            theta: (0..NUM_JOINTS)
                .map(|_| [0; 3].map(|_| self.rng.random_range(-0.4..0.4)))
                .collect(),
            beta: (0..10).map(|_| self.rng.random_range(-1.0..1.0)).collect(),
            camera: Camera::new(0.9, 0.0, 0.05),
        };
        (lbs(&self.template, &params).expect("valid pose"), params.camera)
    }

    fn record(&mut self, name: &str, reports: Vec<GradCheckReport>) {
        let max_rel_err = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
        self.results.push(SuiteResult {
            name: name.to_string(),
            max_rel_err,
            checked: reports.iter().map(|r| r.checked).sum(),
            excluded: reports.iter().map(|r| r.excluded.len()).sum(),
            passed: !reports.is_empty() && reports.iter().all(|r| r.passed()),
        });
    }

    /// Checks `loss` w.r.t. `input` and, sampled, every parameter.
    fn check_net(
        &mut self,
        name: &str,
        store: &ParamStore<f64>,
        input: &Tensor<f64>,
        per_param: usize,
        loss: impl Fn(&Bound<f64>, &Var<f64>) -> Result<Var<f64>>,
    ) -> Result<()> {
        let base = store.bind(None);
        let opts = self.opts.clone().sampled(64, 0);
        let mut reports = vec![grad_check(|x| loss(&base, x), input, &opts)?];
        let xv = Var::constant(input.clone());
        for i in 0..store.len() {
            let o = self.opts.clone().sampled(per_param, i as u64);
            reports.push(grad_check_param(store, ParamId(i), |p| loss(p, &xv), &o)?);
        }
        self.record(name, reports);
        Ok(())
    }
}

fn perturb(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for v in store.values_mut() {
        let d: Vec<f64> = v.data().iter().map(|&a| a + rng.random_range(-0.1..0.1)).collect();
        *v = Tensor::from_parts(v.shape().to_vec(), d);
    }
}

pub const SUITES: [&str; 17] = [
    "tensor.conv2d",
    "tensor.conv_transpose2d",
    "nn.instance_norm",
    "nn.adain",
    "nn.bilinear_sample",
    "body.lbs",
    "render.rasterize",
    "graph.graph_conv",
    "graph.lp_block",
    "generators.foreground",
    "generators.background",
    "generators.fuse",
    "losses.rec",
    "losses.perc",
    "losses.adversarial",
    "losses.mask",
    "losses.discriminator",
];

/// Runs every suite whose name starts with `scope` (`all` runs all).
pub fn run_gradcheck(scope: &str) -> Result<Vec<SuiteResult>> {
    let template = Arc::new(make_template(TemplateConfig::tiny())?);
    let graph = MeshGraph::build(&template.faces, template.num_vertices())?;
    let mut cx = Ctx {
        rng: ChaCha8Rng::seed_from_u64(2024),
        template,
        graph,
        opts: GradCheckOptions::default(),
        results: Vec::new(),
    };
    let want = |name: &str| scope == "all" || name.starts_with(scope);
    let opts = cx.opts.clone();
    let s = SIZE;

    if want("tensor.conv2d") {
        let x = cx.tensor(&[2, 3, s, s], -1.0, 1.0);
        let w = cx.tensor(&[4, 3, 3, 3], -0.5, 0.5);
        let b = cx.constant(&[4], -0.5, 0.5);
        let probe = cx.constant(&[2, 4, s / 2, s / 2], -1.0, 1.0);
        let g = ConvGeometry::new(3, 2, 1);
        let wv = Var::constant(w.clone());
        let xv = Var::constant(x.clone());
        let r1 = grad_check(|v| Ok(v.conv2d(&wv, Some(&b), g)?.mul(&probe)?.sum()), &x, &opts)?;
        let r2 = grad_check(|v| Ok(xv.conv2d(v, Some(&b), g)?.mul(&probe)?.sum()), &w, &opts)?;
        cx.record("tensor.conv2d", vec![r1, r2]);
    }
    if want("tensor.conv_transpose2d") {
        let x = cx.tensor(&[2, 4, s / 2, s / 2], -1.0, 1.0);
        let w = cx.tensor(&[4, 3, 3, 3], -0.5, 0.5);
        let b = cx.constant(&[3], -0.5, 0.5);
        let probe = cx.constant(&[2, 3, s, s], -1.0, 1.0);
        let g = ConvGeometry {
            kernel: 3,
            stride: 2,
            padding: 1,
            output_padding: 1,
        };
        let wv = Var::constant(w.clone());
        let xv = Var::constant(x.clone());
        let r1 = grad_check(
            |v| Ok(v.conv_transpose2d(&wv, Some(&b), g)?.mul(&probe)?.sum()),
            &x,
            &opts,
        )?;
        let r2 = grad_check(
            |v| Ok(xv.conv_transpose2d(v, Some(&b), g)?.mul(&probe)?.sum()),
            &w,
            &opts,
        )?;
        cx.record("tensor.conv_transpose2d", vec![r1, r2]);
    }
    if want("nn.instance_norm") {
        let x = cx.tensor(&[2, 3, s, s], -1.0, 1.0);
        let probe = cx.constant(&[2, 3, s, s], -1.0, 1.0);
        let r = grad_check(|v| Ok(instance_norm_2d(v, NORM_EPS)?.mul(&probe)?.sum()), &x, &opts)?;
        cx.record("nn.instance_norm", vec![r]);
    }
    if want("nn.adain") {
        let x = cx.tensor(&[2, 3, s, s], -1.0, 1.0);
        let gamma = cx.tensor(&[2, 3], 0.5, 1.5);
        let alpha = cx.tensor(&[2, 3], -0.5, 0.5);
        let probe = cx.constant(&[2, 3, s, s], -1.0, 1.0);
        let (gv, av, xv) = (
            Var::constant(gamma.clone()),
            Var::constant(alpha.clone()),
            Var::constant(x.clone()),
        );
        let f = |x: &Var<f64>, g: &Var<f64>, a: &Var<f64>| -> Result<Var<f64>> {
            let p = AdaInParams {
                gamma: g.clone(),
                alpha: a.clone(),
            };
            Ok(adain(x, &p, NORM_EPS)?.mul(&probe)?.sum())
        };
        let r1 = grad_check(|v| f(v, &gv, &av), &x, &opts)?;
        let r2 = grad_check(|v| f(&xv, v, &av), &gamma, &opts)?;
        let r3 = grad_check(|v| f(&xv, &gv, v), &alpha, &opts)?;
        cx.record("nn.adain", vec![r1, r2, r3]);
    }
    if want("nn.bilinear_sample") {
        let x = cx.tensor(&[2, 3, s, s], -1.0, 1.0);
        let pts: Vec<Vec<[f64; 2]>> = (0..2)
            .map(|_| {
                (0..40)
                    .map(|_| [cx.rng.random_range(-1.0..s as f64), cx.rng.random_range(-1.0..s as f64)])
                    .collect()
            })
            .collect();
        let probe = cx.constant(&[2, 3, 40], -1.0, 1.0);
        let r = grad_check(|v| Ok(bilinear_sample(v, &pts)?.mul(&probe)?.sum()), &x, &opts)?;
        cx.record("nn.bilinear_sample", vec![r]);
    }
    if want("body.lbs") {
        let theta = cx.tensor(&[NUM_JOINTS, 3], -0.5, 0.5);
        let beta = cx.tensor(&[10], -1.0, 1.0);
        let n = cx.template.num_vertices();
        let probe = cx.constant(&[n, 3], -1.0, 1.0);
        let t = cx.template.clone();
        let (tv, bv) = (Var::constant(theta.clone()), Var::constant(beta.clone()));
        let r1 = grad_check(|v| Ok(lbs_var(&t, v, &bv)?.mul(&probe)?.sum()), &theta, &opts)?;
        let r2 = grad_check(|v| Ok(lbs_var(&t, &tv, v)?.mul(&probe)?.sum()), &beta, &opts)?;
        cx.record("body.lbs", vec![r1, r2]);
    }
    if want("render.rasterize") {
        let (m0, c0) = cx.posed();
        let (m1, c1) = cx.posed();
        let g0 = RasterGeometry::new(&m0, &c0, s, s)?;
        let g1 = RasterGeometry::new(&m1, &c1, s, s)?;
        let n = cx.template.num_vertices();
        let x = cx.tensor(&[2, 3, n], -1.0, 1.0);
        let probe = cx.constant(&[2, 3, s, s], -1.0, 1.0);
        let r = grad_check(|v| Ok(rasterize_var(v, &[&g0, &g1])?.mul(&probe)?.sum()), &x, &opts)?;
        cx.record("render.rasterize", vec![r]);
    }
    if want("graph.graph_conv") {
        let n = cx.template.num_vertices();
        let mut store = ParamStore::new();
        let layer = GraphConv::new(&mut ParamBuilder::new(&mut store, 1), "gc", 3, 4);
        perturb(&mut store, &mut cx.rng);
        let x = cx.tensor(&[2, 3, n], -1.0, 1.0);
        let probe = cx.constant(&[2, 4, n], -1.0, 1.0);
        let graph = cx.graph.clone();
        cx.check_net("graph.graph_conv", &store, &x, 12, |p, v| {
            Ok(layer.forward(p, &graph, v)?.mul(&probe)?.sum())
        })?;
    }
    if want("graph.lp_block") {
        let (s0, c0) = cx.posed();
        let (t0, d0) = cx.posed();
        let (s1, c1) = cx.posed();
        let (t1, d1) = cx.posed();
        let g0 = LiftProjectGeometry::new(&s0, &c0, &t0, &d0, s, s)?;
        let g1 = LiftProjectGeometry::new(&s1, &c1, &t1, &d1, s, s)?;
        let mut store = ParamStore::new();
        let block = LpBlock::new(&mut ParamBuilder::new(&mut store, 2), "lpb", 3, true);
        perturb(&mut store, &mut cx.rng);
        let x = cx.tensor(&[2, 3, s, s], -1.0, 1.0);
        let probe = cx.constant(&[2, 3, s, s], -1.0, 1.0);
        let graph = cx.graph.clone();
        cx.check_net("graph.lp_block", &store, &x, 12, |p, v| {
            Ok(block.forward(p, &graph, v, &[&g0, &g1])?.mul(&probe)?.sum())
        })?;
    }
    let small = GeneratorConfig {
        fg_widths: [2, 2, 3, 3],
        adcnet_width: 2,
        adcnet_hidden: 3,
        bg_widths: [2, 2, 3],
        bg_res_blocks: 1,
        disable_3dp: false,
        disable_adcnet: false,
    };
    if want("generators.foreground") {
        let (s0, c0) = cx.posed();
        let (t0, d0) = cx.posed();
        let geo = TransferGeometry::new(&s0, &c0, &t0, &d0, s, s)?;
        let mut store = ParamStore::new();
        let fg = ForegroundGenerator::new(&mut ParamBuilder::new(&mut store, 3), &small);
        perturb(&mut store, &mut cx.rng);
        let x = cx.tensor(&[1, 3, s, s], -1.0, 1.0);
        let crd = cx.constant(&[1, 3, s, s], -0.5, 0.5);
        let probe = cx.constant(&[1, 4, s, s], -1.0, 1.0);
        let graph = cx.graph.clone();
        cx.check_net("generators.foreground", &store, &x, 4, |p, v| {
            let o = fg.forward(p, &graph, v, &crd, &[&geo])?;
            Ok(Var::concat(&[&o.rgb, &o.mask], 1)?.mul(&probe)?.sum())
        })?;
    }
    if want("generators.background") {
        // Instance norm over 2x2 maps is too curved for finite differences,
        // so this one network runs at twice the suite resolution.
        let mut store = ParamStore::new();
        let bg = BackgroundGenerator::new(&mut ParamBuilder::new(&mut store, 4), &small);
        perturb(&mut store, &mut cx.rng);
        let x = cx.tensor(&[1, 3, 2 * s, 2 * s], -1.0, 1.0);
        let probe = cx.constant(&[1, 3, 2 * s, 2 * s], -1.0, 1.0);
        cx.check_net("generators.background", &store, &x, 4, |p, v| {
            Ok(bg.forward(p, v)?.mul(&probe)?.sum())
        })?;
    }
    if want("generators.fuse") {
        let a = cx.tensor(&[2, 3, s, s], -1.0, 1.0);
        let b = cx.constant(&[2, 3, s, s], -1.0, 1.0);
        let m = cx.tensor(&[2, 1, s, s], 0.05, 0.95);
        let probe = cx.constant(&[2, 3, s, s], -1.0, 1.0);
        let (av, mv) = (Var::constant(a.clone()), Var::constant(m.clone()));
        let r1 = grad_check(|v| Ok(fuse(v, &b, &mv)?.mul(&probe)?.sum()), &a, &opts)?;
        let r2 = grad_check(|v| Ok(fuse(&av, &b, v)?.mul(&probe)?.sum()), &m, &opts)?;
        cx.record("generators.fuse", vec![r1, r2]);
    }
    if want("losses.rec") {
        let x = cx.tensor(&[2, 3, s, s], -1.0, 1.0);
        let y = cx.constant(&[2, 3, s, s], -1.0, 1.0);
        let r = grad_check(|v| rec_loss(v, &y), &x, &opts)?;
        cx.record("losses.rec", vec![r]);
    }
    if want("losses.perc") {
        let x = cx.tensor(&[2, 3, s, s], -1.0, 1.0);
        let y = cx.constant(&[2, 3, s, s], -1.0, 1.0);
        let ex = PerceptualExtractor::<f64>::new();
        let r = grad_check(|v| ex.loss(v, &y), &x, &opts)?;
        cx.record("losses.perc", vec![r]);
    }
    if want("losses.adversarial") {
        let a = cx.tensor(&[2, 1, 4, 4], -1.5, 1.5);
        let other = cx.constant(&[2, 1, 4, 4], -1.5, 1.5);
        let r1 = grad_check(|v| lsgan_d_loss(v, &other), &a, &opts)?;
        let r2 = grad_check(|v| lsgan_d_loss(&other, v), &a, &opts)?;
        let r3 = grad_check(|v| Ok(lsgan_g_loss(v)), &a, &opts)?;
        cx.record("losses.adversarial", vec![r1, r2, r3]);
    }
    if want("losses.mask") {
        let m = cx.tensor(&[2, 1, s, s], 0.0, 1.0);
        let sil = Var::constant(cx.tensor(&[2, 1, s, s], 0.0, 1.0).map(f64::round));
        let r = grad_check(|v| mask_loss(v, &sil), &m, &opts)?;
        cx.record("losses.mask", vec![r]);
    }
    if want("losses.discriminator") {
        let mut store = ParamStore::new();
        let d = PatchDiscriminator::new(&mut ParamBuilder::new(&mut store, 5), 2);
        perturb(&mut store, &mut cx.rng);
        let x = cx.tensor(&[2, 3, s, s], -1.0, 1.0);
        let crd = cx.constant(&[2, 3, s, s], -0.5, 0.5);
        cx.check_net("losses.discriminator", &store, &x, 12, |p, v| {
            Ok(lsgan_g_loss(&d.forward(p, v, &crd)?))
        })?;
    }
    Ok(cx.results)
}
