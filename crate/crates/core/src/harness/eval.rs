use std::path::Path;

use serde::Serialize;

use super::metrics::{l1, ssim};
use super::model::{Batch, LpNet, Which};
use super::train::prepare_pairs;
use crate::error::Result;
use crate::synth::image::{signed_to_unit, write_png};
use crate::synth::{eval_pairs, Dataset, Pair, Split};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub split: Split,
    pub pairs: usize,
    pub ssim: f64,
    pub l1: f64,
}

/// Generated target images for `pairs`, each `[3, H, W]` in `(-1, 1)`.
pub fn generate_targets(net: &LpNet, ds: &Dataset, pairs: &[Pair], batch_size: usize) -> Result<Vec<Tensor<f64>>> {
    let p = net.gen.bind(None);
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(batch_size.max(1)) {
        let prepared = prepare_pairs(ds, chunk)?;
        let batch = Batch::<f32>::new(prepared.iter().collect())?;
        let g = net.generate(&p, &batch, Which::Target)?;
        let s = g.target.shape().to_vec();
        let per = s[1] * s[2] * s[3];
        for b in 0..s[0] {
            let data: Vec<f64> = g.target.data()[b * per..(b + 1) * per]
                .iter()
                .map(|&v| v as f64)
                .collect();
            out.push(Tensor::from_parts(s[1..].to_vec(), data));
        }
    }
    Ok(out)
}

/// Self-transfer SSIM and l1 on `[0, 1]` images over the fixed evaluation
/// pairs of `split`.
pub fn evaluate(net: &LpNet, ds: &Dataset, split: Split, batch_size: usize) -> Result<EvalReport> {
    let pairs = eval_pairs(ds, split);
    let generated = generate_targets(net, ds, &pairs, batch_size)?;
    let (mut s_sum, mut l_sum) = (0.0, 0.0);
    for (pair, img) in pairs.iter().zip(&generated) {
        let truth: Tensor<f64> = ds.samples[pair.target].image();
        let a: Vec<f64> = img.data().iter().map(|&v| signed_to_unit(v)).collect();
        let b: Vec<f64> = truth.data().iter().map(|&v| signed_to_unit(v)).collect();
        let s = img.shape();
        s_sum += ssim(&a, &b, s[0], s[1], s[2])?;
        l_sum += l1(&a, &b)?;
    }
    let n = pairs.len().max(1) as f64;
    Ok(EvalReport {
        split,
        pairs: pairs.len(),
        ssim: s_sum / n,
        l1: l_sum / n,
    })
}

/// One row per pair: source | target body | output | ground truth (grey
/// when the pair has none). Returns `[3, rows * H, 4 * W]`.
pub fn transfer_grid(net: &LpNet, ds: &Dataset, pairs: &[Pair]) -> Result<Tensor<f64>> {
    let generated = generate_targets(net, ds, pairs, 4)?;
    let prepared = prepare_pairs(ds, pairs)?;
    let r = ds.config.resolution;
    let (gh, gw) = (pairs.len() * r, 4 * r);
    let mut grid = vec![0.0; 3 * gh * gw];
    for (row, ((pair, out), prep)) in pairs.iter().zip(&generated).zip(&prepared).enumerate() {
        let truth: Option<Tensor<f64>> = pair.has_ground_truth().then(|| ds.samples[pair.target].image());
        let body = prep.tgt_coords.map(|v| v.clamp(-1.0, 1.0));
        let source = &prep.source_image;
        let tiles: [Option<&Tensor<f64>>; 4] = [Some(source), Some(&body), Some(out), truth.as_ref()];
        for (col, tile) in tiles.iter().enumerate() {
            let Some(t) = tile else { continue };
            for c in 0..3 {
                for i in 0..r {
                    for j in 0..r {
                        grid[c * gh * gw + (row * r + i) * gw + col * r + j] = t.data()[c * r * r + i * r + j];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![3, gh, gw], grid))
}

pub fn write_transfer_grid(path: &Path, net: &LpNet, ds: &Dataset, pairs: &[Pair]) -> Result<()> {
    write_png(path, &transfer_grid(net, ds, pairs)?)
}
