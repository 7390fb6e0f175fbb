//! Lipschitz bounds for the energy gradients over slope-capped depth maps.
//!
//! On the convex region { x : ‖M_j x‖₂ ≤ L^z_j for every pixel j } the
//! coefficient blocks, the residual, and both gradient maps of the
//! reprojection energy are Lipschitz. This module evaluates closed-form
//! constants for all of them from per-pixel slope caps, and provides a
//! randomized sampler that draws cap-respecting depth pairs to compare the
//! analytic constants against observed difference quotients.

use crate::energy::EnergyContext;
use crate::grid::{ImageStack, LightMatrix};
use crate::operator::GradientOperator;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-pixel slope caps L^z_j together with L̃^z_j = √(1 + (L^z_j)²), the
/// matching bound on the normalization σ_j.
#[derive(Clone, Debug)]
pub struct GradientCaps {
    lz: Vec<f64>,
    lz_tilde: Vec<f64>,
}

impl GradientCaps {
    pub fn new(lz: Vec<f64>) -> Result<Self> {
        if lz.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::NonFinite { what: "slope caps" });
        }
        let lz_tilde = lz.iter().map(|&l| (1.0 + l * l).sqrt()).collect();
        Ok(Self { lz, lz_tilde })
    }

    /// Uniform caps at `factor` times the largest slope of a reference depth
    /// map, so the reference sits strictly inside the capped region.
    pub fn uniform_from_reference(
        op: &GradientOperator,
        z_ref: &[f64],
        factor: f64,
    ) -> Result<Self> {
        let n = op.grid().n();
        let mut max_slope = 0.0f64;
        for j in 0..n {
            let (gu, gv) = op.pixel_gradient(z_ref, j);
            max_slope = max_slope.max((gu * gu + gv * gv).sqrt());
        }
        Self::new(vec![factor * max_slope; n])
    }

    pub fn lz(&self) -> &[f64] {
        &self.lz
    }

    pub fn lz_tilde(&self) -> &[f64] {
        &self.lz_tilde
    }

    pub fn len(&self) -> usize {
        self.lz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lz.is_empty()
    }

    /// Largest scale t ≤ 1 such that t·x satisfies every cap; applied to a
    /// candidate depth map this projects it into the capped region.
    pub fn admissible_scale(&self, op: &GradientOperator, x: &[f64]) -> f64 {
        let mut scale = 1.0f64;
        for j in 0..self.lz.len() {
            let (gu, gv) = op.pixel_gradient(x, j);
            let norm = (gu * gu + gv * gv).sqrt();
            if norm > 0.0 {
                scale = scale.min(self.lz[j] / norm);
            }
        }
        scale
    }
}

/// All closed-form constants for one problem instance.
#[derive(Clone, Debug)]
pub struct LipschitzReport {
    /// Per-pixel coefficient-block constants ρ_j ‖S_ℓ‖ L^z_j ‖M_j‖.
    pub l_a_j: Vec<f64>,
    /// Per-pixel residual constants ρ_j ‖S‖ ‖M_j‖ (L̃^z_j L^z_j + 1).
    pub l_f_j: Vec<f64>,
    /// Per-pixel constants for the σ-derivative block,
    /// ρ_j ‖S‖ ‖M_j‖² (3 L̃^z_j (L^z_j)² + L̃^z_j + L^z_j).
    pub l_p_j: Vec<f64>,
    /// max_j l_a_j; Lipschitz constant of the block-diagonal coefficients.
    pub l_a: f64,
    /// √(Σ_j l_f_j²); Lipschitz constant of the stacked residual.
    pub l_f: f64,
    /// √(Σ_j (‖I_j‖² + ρ_j² ‖S‖²)); bound on the residual norm itself.
    pub c_r: f64,
    /// Lipschitz constant of the frozen-coefficient gradient map.
    pub l_q: f64,
    /// Lipschitz constant of the full gradient map.
    pub l_grad_f: f64,
    /// ‖M‖₂ as computed by power iteration.
    pub op_norm: f64,
    pub s_norm: f64,
    pub s_left_norm: f64,
}

/// Evaluate every constant for the given observations, lights, albedo, and
/// slope caps.
pub fn lipschitz_report(
    images: &ImageStack,
    lights: &LightMatrix,
    op: &GradientOperator,
    rho: &[f64],
    caps: &GradientCaps,
) -> Result<LipschitzReport> {
    let grid = images.grid();
    if grid != op.grid() {
        return Err(Error::Dimension { context: "image grid vs operator grid".into() });
    }
    let n = grid.n();
    if rho.len() != n || caps.len() != n {
        return Err(Error::Dimension {
            context: format!("albedo {} / caps {} for {} pixels", rho.len(), caps.len(), n),
        });
    }
    if images.m() != lights.m() {
        return Err(Error::Dimension {
            context: format!("{} images but {} lights", images.m(), lights.m()),
        });
    }
    let s = lights.as_dmatrix();
    let s_norm = s.clone().svd(false, false).singular_values[0];
    let s_left_norm = lights.left_block().svd(false, false).singular_values[0];
    let op_norm = op.operator_norm();

    let mut l_a_j = vec![0.0; n];
    let mut l_f_j = vec![0.0; n];
    let mut l_p_j = vec![0.0; n];
    let mut c_r_sq = 0.0;
    let mut max_rho = 0.0f64;
    let mut cross_sq = 0.0;
    for j in 0..n {
        let mj = op.pixel_block_norm(j);
        let (lz, lt) = (caps.lz[j], caps.lz_tilde[j]);
        let rj = rho[j];
        l_a_j[j] = rj * s_left_norm * lz * mj;
        l_f_j[j] = rj * s_norm * mj * (lt * lz + 1.0);
        l_p_j[j] = rj * s_norm * mj * mj * (3.0 * lt * lz * lz + lt + lz);
        let img_sq: f64 = images.pixel(j).iter().map(|x| x * x).sum();
        c_r_sq += img_sq + rj * rj * s_norm * s_norm;
        max_rho = max_rho.max(rj);
        cross_sq += rj * rj * s_norm * s_norm * (lt * lz) * (lt * lz) * mj * mj;
    }
    let l_a = l_a_j.iter().cloned().fold(0.0f64, f64::max);
    let l_f = l_f_j.iter().map(|x| x * x).sum::<f64>().sqrt();
    let l_p = l_p_j.iter().map(|x| x * x).sum::<f64>().sqrt();
    let c_r = c_r_sq.sqrt();
    let m = images.m() as f64;
    let l_q = (c_r * l_a * op_norm + max_rho * s_left_norm * op_norm * l_f) / m;
    let l_grad_f = (c_r * (l_p + l_a * op_norm)
        + l_f * (max_rho * s_left_norm * op_norm + cross_sq.sqrt()))
        / m;
    Ok(LipschitzReport {
        l_a_j,
        l_f_j,
        l_p_j,
        l_a,
        l_f,
        c_r,
        l_q,
        l_grad_f,
        op_norm,
        s_norm,
        s_left_norm,
    })
}

/// Largest observed difference quotients over sampled cap-respecting pairs.
#[derive(Clone, Copy, Debug)]
pub struct EmpiricalQuotients {
    /// max ‖∇f(x) − ∇f(y)‖ / ‖x − y‖ over the sampled pairs.
    pub max_full: f64,
    /// max ‖q(x) − q(y)‖ / ‖x − y‖ over the sampled pairs.
    pub max_frozen: f64,
    pub pairs: usize,
}

/// Draw `pairs` random depth pairs, project each into the capped region, and
/// record the worst difference quotient for both gradient maps.
pub fn empirical_lipschitz(
    ctx: &EnergyContext,
    caps: &GradientCaps,
    pairs: usize,
    seed: u64,
) -> EmpiricalQuotients {
    let n = ctx.n();
    let op = *ctx.op();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scale = caps.admissible_scale(&op, &x);
        for xi in &mut x {
            *xi *= scale;
        }
        x
    };
    let mut max_full = 0.0f64;
    let mut max_frozen = 0.0f64;
    let mut counted = 0;
    for _ in 0..pairs {
        let x = draw(&mut rng);
        let y = draw(&mut rng);
        let dist_sq: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        let dist = dist_sq.sqrt();
        if dist == 0.0 {
            continue;
        }
        let (gx, gy) = (ctx.grad_f_exact(&x), ctx.grad_f_exact(&y));
        let (qx, qy) = (ctx.grad_f_approx(&x), ctx.grad_f_approx(&y));
        let dg: f64 = gx.iter().zip(&gy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let dq: f64 = qx.iter().zip(&qy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        max_full = max_full.max(dg / dist);
        max_frozen = max_frozen.max(dq / dist);
        counted += 1;
    }
    EmpiricalQuotients { max_full, max_frozen, pairs: counted }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::operator::build_gradient_operator;
    use crate::render::render_lambertian;
    use crate::scene::{cone_lights, make_scene, SceneKind, SceneParams};

    fn bump_case(size: usize, m: usize) -> (Grid, ImageStack, LightMatrix, Vec<f64>, Vec<f64>) {
        let grid = Grid::new(size, size).unwrap();
        let op = build_gradient_operator(grid);
        let scene = make_scene(grid, &SceneParams::default_for(SceneKind::GaussianBump)).unwrap();
        let lights = cone_lights(m, 30.0).unwrap();
        let images = render_lambertian(&scene.depth, &scene.albedo, &lights, &op, false);
        (grid, images, lights, scene.albedo.rho.clone(), scene.depth.z.clone())
    }

    #[test]
    fn caps_validate_and_derive_sigma_bound() {
        let caps = GradientCaps::new(vec![0.0, 3.0]).unwrap();
        assert_eq!(caps.lz_tilde()[0], 1.0);
        assert!((caps.lz_tilde()[1] - 10.0f64.sqrt()).abs() < 1e-15);
        assert!(GradientCaps::new(vec![-1.0]).is_err());
        assert!(GradientCaps::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn uniform_caps_cover_the_reference() {
        let (grid, _, _, _, z) = bump_case(8, 4);
        let op = build_gradient_operator(grid);
        let caps = GradientCaps::uniform_from_reference(&op, &z, 1.5).unwrap();
        // The reference itself is strictly admissible: scale 1 suffices.
        assert_eq!(caps.admissible_scale(&op, &z), 1.0);
        for j in 0..grid.n() {
            let (gu, gv) = op.pixel_gradient(&z, j);
            assert!((gu * gu + gv * gv).sqrt() <= caps.lz()[j]);
        }
    }

    #[test]
    fn admissible_scale_projects_into_the_region() {
        let grid = Grid::new(5, 5).unwrap();
        let op = build_gradient_operator(grid);
        let caps = GradientCaps::new(vec![0.3; 25]).unwrap();
        let steep: Vec<f64> = (0..25).map(|j| (j % 5) as f64 * 2.0).collect();
        let s = caps.admissible_scale(&op, &steep);
        assert!(s < 1.0);
        let projected: Vec<f64> = steep.iter().map(|x| x * s).collect();
        for j in 0..25 {
            let (gu, gv) = op.pixel_gradient(&projected, j);
            assert!((gu * gu + gv * gv).sqrt() <= 0.3 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_albedo_zeroes_every_constant() {
        let (grid, images, lights, _, z) = bump_case(6, 4);
        let op = build_gradient_operator(grid);
        let caps = GradientCaps::uniform_from_reference(&op, &z, 1.5).unwrap();
        let rho = vec![0.0; grid.n()];
        let report = lipschitz_report(&images, &lights, &op, &rho, &caps).unwrap();
        assert_eq!(report.l_a, 0.0);
        assert_eq!(report.l_f, 0.0);
        assert_eq!(report.l_q, 0.0);
        assert_eq!(report.l_grad_f, 0.0);
        // With no albedo the gradients vanish identically, so the sampled
        // quotients collapse to zero as well.
        let z0 = vec![0.0; grid.n()];
        let ctx = EnergyContext::new(&images, &lights, op, &rho, 1e-6, &z0, None).unwrap();
        let emp = empirical_lipschitz(&ctx, &caps, 20, 0);
        assert_eq!(emp.max_full, 0.0);
        assert_eq!(emp.max_frozen, 0.0);
    }

    #[test]
    fn zero_caps_reduce_the_formulas() {
        let (grid, images, lights, rho, _) = bump_case(4, 5);
        let op = build_gradient_operator(grid);
        let caps = GradientCaps::new(vec![0.0; grid.n()]).unwrap();
        let report = lipschitz_report(&images, &lights, &op, &rho, &caps).unwrap();
        // L^z = 0 forces L̃^z = 1: the coefficient constants vanish and the
        // residual constants collapse to ρ_j ‖S‖ ‖M_j‖.
        assert_eq!(report.l_a, 0.0);
        for j in 0..grid.n() {
            assert_eq!(report.l_a_j[j], 0.0);
            let expect = rho[j] * report.s_norm * op.pixel_block_norm(j);
            assert!((report.l_f_j[j] - expect).abs() <= 1e-15 * expect.max(1.0));
            let expect_p = rho[j] * report.s_norm * op.pixel_block_norm(j).powi(2);
            assert!((report.l_p_j[j] - expect_p).abs() <= 1e-15 * expect_p.max(1.0));
        }
    }

    #[test]
    fn report_matches_independent_scalar_evaluation() {
        let (grid, images, lights, rho, z) = bump_case(6, 5);
        let op = build_gradient_operator(grid);
        let caps = GradientCaps::uniform_from_reference(&op, &z, 1.5).unwrap();
        let report = lipschitz_report(&images, &lights, &op, &rho, &caps).unwrap();

        let sn = report.s_norm;
        let sln = report.s_left_norm;
        let mn = report.op_norm;
        let m = lights.m() as f64;
        let mut sum_f = 0.0;
        let mut sum_p = 0.0;
        let mut sum_cr = 0.0;
        let mut sum_cross = 0.0;
        let mut la = 0.0f64;
        let mut rho_max = 0.0f64;
        for j in 0..grid.n() {
            let mj = op.pixel_block_norm(j);
            let lz = caps.lz()[j];
            let lt = (1.0 + lz * lz).sqrt();
            la = la.max(rho[j] * sln * lz * mj);
            let lf = rho[j] * sn * mj * (lt * lz + 1.0);
            sum_f += lf * lf;
            let lp = rho[j] * sn * mj * mj * (3.0 * lt * lz * lz + lt + lz);
            sum_p += lp * lp;
            sum_cr += images.pixel(j).iter().map(|x| x * x).sum::<f64>() + rho[j].powi(2) * sn * sn;
            sum_cross += (rho[j] * sn * lt * lz * mj).powi(2);
            rho_max = rho_max.max(rho[j]);
        }
        let cr = sum_cr.sqrt();
        let lf = sum_f.sqrt();
        let lq = (cr * la * mn + rho_max * sln * mn * lf) / m;
        let lgrad = (cr * (sum_p.sqrt() + la * mn) + lf * (rho_max * sln * mn + sum_cross.sqrt())) / m;
        assert!((report.l_a - la).abs() <= 1e-12 * la.max(1.0));
        assert!((report.l_f - lf).abs() <= 1e-12 * lf.max(1.0));
        assert!((report.c_r - cr).abs() <= 1e-12 * cr.max(1.0));
        assert!((report.l_q - lq).abs() <= 1e-12 * lq.max(1.0));
        assert!((report.l_grad_f - lgrad).abs() <= 1e-12 * lgrad.max(1.0));
        assert!(report.l_grad_f >= report.l_q);
    }

    #[test]
    fn doubling_albedo_doubles_componentwise_constants() {
        let (grid, images, lights, rho, z) = bump_case(5, 4);
        let op = build_gradient_operator(grid);
        let caps = GradientCaps::uniform_from_reference(&op, &z, 1.5).unwrap();
        let doubled: Vec<f64> = rho.iter().map(|r| 2.0 * r).collect();
        let r1 = lipschitz_report(&images, &lights, &op, &rho, &caps).unwrap();
        let r2 = lipschitz_report(&images, &lights, &op, &doubled, &caps).unwrap();
        for j in 0..grid.n() {
            assert_eq!(r2.l_a_j[j], 2.0 * r1.l_a_j[j]);
            assert_eq!(r2.l_f_j[j], 2.0 * r1.l_f_j[j]);
            assert_eq!(r2.l_p_j[j], 2.0 * r1.l_p_j[j]);
        }
        assert_eq!(r2.l_a, 2.0 * r1.l_a);
        assert_eq!(r2.l_f, 2.0 * r1.l_f);
    }

    #[test]
    fn coefficient_blocks_respect_their_envelope() {
        let (grid, images, lights, rho, z) = bump_case(4, 4);
        let op = build_gradient_operator(grid);
        let caps = GradientCaps::uniform_from_reference(&op, &z, 1.5).unwrap();
        let report = lipschitz_report(&images, &lights, &op, &rho, &caps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mut x: Vec<f64> = (0..grid.n()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut y: Vec<f64> = (0..grid.n()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sx = caps.admissible_scale(&op, &x);
            let sy = caps.admissible_scale(&op, &y);
            x.iter_mut().for_each(|v| *v *= sx);
            y.iter_mut().for_each(|v| *v *= sy);
            let ax = crate::oracle::dense_coefficient_matrix(&lights, &rho, grid, &x).unwrap();
            let ay = crate::oracle::dense_coefficient_matrix(&lights, &rho, grid, &y).unwrap();
            // The spectral norm of a block-diagonal difference is the largest
            // per-block spectral norm.
            let diff = ax - ay;
            let mut block_max = 0.0f64;
            for j in 0..grid.n() {
                let block = diff
                    .view((j * lights.m(), 2 * j), (lights.m(), 2))
                    .clone_owned();
                block_max = block_max.max(block.svd(false, false).singular_values[0]);
            }
            let full = diff.clone().svd(false, false).singular_values[0];
            assert!((full - block_max).abs() <= 1e-12 * block_max.max(1.0));
            let dist: f64 =
                x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!(full <= report.l_a * dist * (1.0 + 1e-9) + 1e-15);
        }
    }

    #[test]
    fn sampled_quotients_stay_below_the_analytic_constants() {
        let (grid, images, lights, rho, z) = bump_case(8, 5);
        let op = build_gradient_operator(grid);
        let caps = GradientCaps::uniform_from_reference(&op, &z, 1.5).unwrap();
        let report = lipschitz_report(&images, &lights, &op, &rho, &caps).unwrap();
        let z0 = vec![0.0; grid.n()];
        let ctx = EnergyContext::new(&images, &lights, op, &rho, 1e-6, &z0, None).unwrap();
        let emp = empirical_lipschitz(&ctx, &caps, 100, 3);
        assert!(emp.pairs > 90);
        assert!(
            emp.max_full <= report.l_grad_f,
            "{} vs {}",
            emp.max_full,
            report.l_grad_f
        );
        assert!(
            emp.max_frozen <= report.l_q,
            "{} vs {}",
            emp.max_frozen,
            report.l_q
        );
    }

    #[test]
    fn sampling_is_deterministic_in_the_seed() {
        let (grid, images, lights, rho, z) = bump_case(5, 4);
        let op = build_gradient_operator(grid);
        let caps = GradientCaps::uniform_from_reference(&op, &z, 1.5).unwrap();
        let z0 = vec![0.0; grid.n()];
        let ctx = EnergyContext::new(&images, &lights, op, &rho, 1e-6, &z0, None).unwrap();
        let a = empirical_lipschitz(&ctx, &caps, 30, 11);
        let b = empirical_lipschitz(&ctx, &caps, 30, 11);
        assert_eq!(a.max_full, b.max_full);
        assert_eq!(a.max_frozen, b.max_frozen);
        let c = empirical_lipschitz(&ctx, &caps, 30, 12);
        assert_ne!(a.max_full, c.max_full);
    }
}
