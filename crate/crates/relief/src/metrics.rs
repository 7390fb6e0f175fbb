//! Reconstruction quality measures: angular error, aligned depth error, and
//! the per-pixel reprojection error map.

use crate::energy::EnergyContext;
use crate::grid::NormalField;
use crate::par;

/// Mean angular error in degrees: mean_j arccos(clamp(⟨n_est, n_gt⟩, −1, 1)).
pub fn mean_angular_error(est: &NormalField, gt: &NormalField) -> f64 {
    assert_eq!(est.grid, gt.grid, "normal fields on different grids");
    let n = est.grid.n();
    let sum: f64 = est
        .n
        .iter()
        .zip(&gt.n)
        .map(|(a, b)| {
            let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            dot.clamp(-1.0, 1.0).acos()
        })
        .sum();
    (sum / n as f64).to_degrees()
}

/// Root-mean-square difference of two equal-length vectors.
pub fn rms(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (ss / a.len() as f64).sqrt()
}

/// RMS difference after removing each vector's mean; the natural depth metric
/// because the reconstruction fixes the additive depth constant arbitrarily.
pub fn rms_after_mean_alignment(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ma = a.iter().sum::<f64>() / a.len() as f64;
    let mb = b.iter().sum::<f64>() / b.len() as f64;
    let ss: f64 = a.iter().zip(b).map(|(x, y)| {
        let d = (x - ma) - (y - mb);
        d * d
    }).sum();
    (ss / a.len() as f64).sqrt()
}

/// Per-pixel value (1/2m)‖I_j − R_j(z, ρ)‖², so the map sums to f(z, ρ).
/// The map ignores any mask so that excluded regions remain inspectable.
pub fn reprojection_error_map(ctx: &EnergyContext<'_>, z: &[f64]) -> Vec<f64> {
    let n = ctx.n();
    let m = ctx.m() as f64;
    let mut out = vec![0.0; n];
    par::fill_blocks(&mut out, 1, |j, slot| {
        slot[0] = ctx.pixel_residual_sq(z, j) / (2.0 * m);
    });
    out
}

/// Mean of [`reprojection_error_map`] over all pixels.
pub fn mean_reprojection_error(ctx: &EnergyContext<'_>, z: &[f64]) -> f64 {
    let map = reprojection_error_map(ctx, z);
    map.iter().sum::<f64>() / map.len() as f64
}
