//! Finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Pass threshold on the max relative error.
    pub tol: f64,
    /// Denominator floor of the relative error; below it the comparison is
    /// effectively absolute.
    pub floor: f64,
    /// Check at most this many coordinates, drawn with `seed`.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// A coordinate whose one-sided slopes disagree by more than this
    /// (relative) is treated as sitting on a kink and excluded.
    pub kink_tol: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-3,
            max_coords: None,
            seed: 0,
            kink_tol: 1e-2,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }

    pub fn sampled(mut self, max_coords: usize, seed: u64) -> Self {
        self.max_coords = Some(max_coords);
        self.seed = seed;
        self
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinate with the largest error.
    pub worst: Option<usize>,
    pub checked: usize,
    /// Coordinates skipped because the function is not differentiable there.
    pub excluded: Vec<usize>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol && self.checked > 0
    }
}

fn eval(f: &impl Fn(&Var<f64>) -> Result<Var<f64>>, x: Tensor<f64>) -> Result<f64> {
    let y = f(&Var::constant(x))?;
    if y.numel() != 1 {
        return Err(Error::NonScalarLoss(y.shape().to_vec()));
    }
    let v = y.data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    Ok(v)
}

/// Compares the tape gradient of the scalar function `f` at `input` with
/// central finite differences.
pub fn grad_check(
    f: impl Fn(&Var<f64>) -> Result<Var<f64>>,
    input: &Tensor<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let tape = Tape::new();
    let x = tape.leaf(input.clone());
    let y = f(&x)?;
    if !y.value().all_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    let analytic = y.backward()?.get(&x);
    if !analytic.all_finite() {
        return Err(Error::NonFinite("grad_check tape gradient".into()));
    }
    let f0 = y.data()[0];

    let n = input.numel();
    let coords: Vec<usize> = match opts.max_coords {
        Some(k) if k < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut idx = sample(&mut rng, n, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    };

    let h = opts.step;
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        excluded: Vec::new(),
        tol: opts.tol,
    };
    let base = input.to_vec();
    for i in coords {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let fp = eval(&f, Tensor::from_parts(input.shape().to_vec(), plus))?;
        let fm = eval(&f, Tensor::from_parts(input.shape().to_vec(), minus))?;
        let forward = (fp - f0) / h;
        let backward = (f0 - fm) / h;
        let scale = forward.abs().max(backward.abs()).max(opts.floor);
        if (forward - backward).abs() > opts.kink_tol * scale {
            report.excluded.push(i);
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        // A kink with a small derivative jump can pass the slope test; the
        // central difference at half the step then moves far more than the
        // O(h^2) expected on a smooth function.
        let mut half = base.clone();
        half[i] += h / 2.0;
        let fph = eval(&f, Tensor::from_parts(input.shape().to_vec(), half))?;
        let mut half = base.clone();
        half[i] -= h / 2.0;
        let fmh = eval(&f, Tensor::from_parts(input.shape().to_vec(), half))?;
        let numeric_half = (fph - fmh) / h;
        let roundoff = 100.0 * f64::EPSILON * f0.abs().max(1.0) / h;
        if (numeric - numeric_half).abs() > (0.1 * opts.tol * scale).max(roundoff) {
            report.excluded.push(i);
            continue;
        }
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        report.checked += 1;
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = err;
            report.worst = Some(i);
        }
    }
    Ok(report)
}
