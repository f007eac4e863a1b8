use crate::error::{Error, Result};
use crate::expfam::DensityGrid;

/// `(L1, Hellinger)` between two densities on the same grid, each
/// normalized by its trapezoid mass first.
pub fn compare_densities(g1: &DensityGrid, g2: &DensityGrid) -> Result<(f64, f64)> {
    if !g1.same_layout(g2) {
        return Err(Error::GridMismatch(format!(
            "{} nodes on {:?} vs {} nodes on {:?}",
            g1.len(),
            g1.bounds(),
            g2.len(),
            g2.bounds()
        )));
    }
    let (p1, p2) = (g1.normalized()?, g2.normalized()?);
    let n = p1.len();
    let dx = p1.spacing();
    let (mut l1, mut hell) = (0.0, 0.0);
    for (i, (a, b)) in p1.values().iter().zip(p2.values()).enumerate() {
        let w = if i == 0 || i == n - 1 { 0.5 * dx } else { dx };
        l1 += w * (a - b).abs();
        hell += w * (a.sqrt() - b.sqrt()).powi(2);
    }
    Ok((l1, hell.sqrt()))
}

/// Piecewise-constant histogram density `values` on equal bins of
/// `[lower, upper]`, sampled at the nodes of `like`.
pub fn histogram_on_grid(values: &[f64], lower: f64, upper: f64, like: &DensityGrid) -> Result<DensityGrid> {
    let bins = values.len();
    let width = (upper - lower) / bins as f64;
    let sampled = like
        .nodes()
        .iter()
        .map(|&x| {
            let b = ((x - lower) / width).floor();
            if x >= lower && x <= upper {
                values[(b as usize).min(bins - 1)]
            } else {
                0.0
            }
        })
        .collect();
    let (lo, hi) = like.bounds();
    DensityGrid::new(lo, hi, sampled)
}
