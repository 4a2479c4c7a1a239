use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, SparseMap, Var};

/// Interpolation weights of `points` on an `h x w` grid.
///
/// Points are continuous pixel-index coordinates `(x, y)`: `(j, i)` lands
/// exactly on pixel row `i`, column `j`. Taps outside the grid are dropped,
/// which is zero padding.
pub fn bilinear_weights(points: &[[f64; 2]], h: usize, w: usize) -> Result<SparseMap> {
    let mut rows = Vec::with_capacity(points.len());
    for (i, &[x, y]) in points.iter().enumerate() {
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::NonFinite(format!("sampling point {i}")));
        }
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let mut row = Vec::with_capacity(4);
        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                let (px, py) = (x0 + dx, y0 + dy);
                let weight = wx * wy;
                if weight == 0.0 || px < 0.0 || py < 0.0 || px >= w as f64 || py >= h as f64 {
                    continue;
                }
                row.push((py as usize * w + px as usize, weight));
            }
        }
        rows.push(row);
    }
    Ok(SparseMap::from_rows(h * w, rows))
}

/// Samples `feat: [B, C, H, W]` at per-sample point lists, giving
/// `[B, C, N]` (one column per point). Differentiable in the feature map
/// only; the points are treated as constants.
pub fn bilinear_sample<T: Scalar>(feat: &Var<T>, points: &[Vec<[f64; 2]>]) -> Result<Var<T>> {
    let s = feat.shape();
    if s.len() != 4 || s[0] != points.len() {
        return Err(Error::shape("bilinear_sample", &[s, &[points.len()]]));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let n = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != n) {
        return Err(Error::InvalidArgument(
            "bilinear_sample: point lists differ in length".into(),
        ));
    }
    let maps = points
        .iter()
        .map(|p| bilinear_weights(p, h, w))
        .collect::<Result<Vec<_>>>()?;
    feat.reshape(&[b, c, h * w])?
        .fixed_linear("bilinear_sample", n, Arc::new(maps))
}
