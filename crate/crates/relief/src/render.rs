//! Lambertian forward rendering, depth-to-normal conversion, and image noise.
//!
//! The irradiance model is I^i_j = ρ_j · s^i · w_j / σ_j with w_j = [−M_j z; 1]
//! and σ_j = √(1+‖M_j z‖²). The energy module subtracts the same per-pixel
//! shading expression ([`shade`]) from the observed intensities, so rendered
//! data re-evaluated at the true (z, ρ) has an exactly zero residual.

use crate::grid::{AlbedoMap, DepthMap, ImageStack, LightMatrix, NormalField};
use crate::operator::GradientOperator;
use crate::par;
use rand::SeedableRng;
use rand_distr::Distribution;

/// Shading of one pixel under one light: ρ · s·[−gu, −gv, 1] / σ.
///
/// Every consumer of the model routes through this one expression so that
/// residuals of self-rendered data cancel bit-exactly.
#[inline]
pub(crate) fn shade(s: &[f64; 3], gu: f64, gv: f64, sigma: f64, rho: f64) -> f64 {
    rho * (s[2] - s[0] * gu - s[1] * gv) / sigma
}

#[inline]
pub(crate) fn sigma_of(gu: f64, gv: f64) -> f64 {
    (1.0 + gu * gu + gv * gv).sqrt()
}

/// Unit normals n_j = [−M_j z, 1]ᵀ/σ_j from a depth map.
pub fn normals_from_depth(z: &DepthMap, op: &GradientOperator) -> NormalField {
    assert_eq!(z.grid, op.grid(), "depth and operator grids differ");
    let n = z.grid.n();
    let mut field = vec![[0.0; 3]; n];
    for (j, out) in field.iter_mut().enumerate() {
        let (gu, gv) = op.pixel_gradient(&z.z, j);
        let sigma = sigma_of(gu, gv);
        *out = [-gu / sigma, -gv / sigma, 1.0 / sigma];
    }
    NormalField { grid: z.grid, n: field }
}

/// Renders the m images of the Lambertian model at (z, ρ) under lights S.
///
/// `clamp_negative` zeroes negative intensities (physical sensor floor); the
/// energy is defined on the unclamped model, so the default callers pass false.
pub fn render_lambertian(
    z: &DepthMap,
    rho: &AlbedoMap,
    s: &LightMatrix,
    op: &GradientOperator,
    clamp_negative: bool,
) -> ImageStack {
    assert_eq!(z.grid, op.grid(), "depth and operator grids differ");
    assert_eq!(z.grid, rho.grid, "depth and albedo grids differ");
    let n = z.grid.n();
    let m = s.m();
    let rows = s.rows();
    let mut data = vec![0.0; n * m];
    par::fill_blocks(&mut data, m, |j, px| {
        let (gu, gv) = op.pixel_gradient(&z.z, j);
        let sigma = sigma_of(gu, gv);
        for (i, row) in rows.iter().enumerate() {
            let v = shade(row, gu, gv, sigma, rho.rho[j]);
            px[i] = if clamp_negative && v < 0.0 { 0.0 } else { v };
        }
    });
    ImageStack::from_pixel_major(z.grid, m, data).expect("rendered intensities are finite")
}

/// Adds i.i.d. zero-mean Gaussian noise with standard deviation
/// `sigma · max(intensities)`. Deterministic in `seed`; `sigma = 0` returns the
/// input bit-exactly. Intensities are not clamped afterwards.
pub fn add_gaussian_noise(images: &ImageStack, sigma: f64, seed: u64) -> ImageStack {
    assert!(sigma >= 0.0, "noise level must be nonnegative");
    if sigma == 0.0 {
        return images.clone();
    }
    let scale = sigma * images.max_intensity();
    let mut out = images.clone();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, scale).expect("finite std");
    for x in out.as_mut_slice() {
        *x += normal.sample(&mut rng);
    }
    out
}
