//! Pointwise photometric stereo and least-squares normal integration.
//!
//! The two stages produce the solver's starting point: per-pixel normals and
//! albedo from the overdetermined Lambertian system I_j ≈ S m_j (with
//! m_j = ρ_j n_j), then a depth map from the estimated slopes by solving
//! MᵀM z = Mᵀp with conjugate gradient, the constant null direction pinned by
//! mean(z) = 0.

use crate::grid::{AlbedoMap, DepthMap, ImageStack, LightMatrix, NormalField};
use crate::operator::GradientOperator;
use crate::par;
use crate::{Error, Result};
use nalgebra::{Matrix3, Vector3};

/// Albedo below which a pixel counts as dark and falls back to the frontal
/// normal [0, 0, 1] with ρ = 0.
pub const DARK_PIXEL_ALBEDO: f64 = 1e-12;

/// Output of [`estimate_normals_albedo`].
#[derive(Clone, Debug)]
pub struct PointwisePsResult {
    pub normals: NormalField,
    pub albedo: AlbedoMap,
    /// Per-pixel least-squares residual norm ‖I_j − S m_j‖₂.
    pub residual: Vec<f64>,
}

/// Per-pixel normal/albedo estimation: solve (SᵀS) m_j = Sᵀ I_j, then split
/// m_j into direction and length.
pub fn estimate_normals_albedo(
    images: &ImageStack,
    lights: &LightMatrix,
) -> Result<PointwisePsResult> {
    if images.m() != lights.m() {
        return Err(Error::Dimension {
            context: format!("{} images but {} lights", images.m(), lights.m()),
        });
    }
    let grid = images.grid();
    let n = grid.n();
    let m = lights.m();
    let s = lights.as_dmatrix();
    let sts: Matrix3<f64> = Matrix3::from_iterator((s.transpose() * &s).iter().copied());
    let chol = sts.cholesky().ok_or(Error::CoplanarLights {
        sigma_min: 0.0,
        threshold: crate::grid::RANK_THRESHOLD,
    })?;
    let rows = lights.rows();

    // Pixel-major scratch: [n1, n2, n3, rho, residual] per pixel.
    let mut flat = vec![0.0; 5 * n];
    par::fill_blocks(&mut flat, 5, |j, out| {
        let ij = images.pixel(j);
        let mut rhs = Vector3::zeros();
        for (row, &intensity) in rows.iter().zip(ij) {
            rhs += Vector3::new(row[0], row[1], row[2]) * intensity;
        }
        let mj = chol.solve(&rhs);
        let rho = mj.norm();
        let mut res_sq = 0.0;
        for (row, &intensity) in rows.iter().zip(ij) {
            let pred = row[0] * mj[0] + row[1] * mj[1] + row[2] * mj[2];
            res_sq += (intensity - pred) * (intensity - pred);
        }
        if rho > DARK_PIXEL_ALBEDO {
            out[0] = mj[0] / rho;
            out[1] = mj[1] / rho;
            out[2] = mj[2] / rho;
            out[3] = rho;
        } else {
            out[0] = 0.0;
            out[1] = 0.0;
            out[2] = 1.0;
            out[3] = 0.0;
        }
        out[4] = res_sq.sqrt();
    });
    let _ = m;

    let mut normals = vec![[0.0; 3]; n];
    let mut rho = vec![0.0; n];
    let mut residual = vec![0.0; n];
    for j in 0..n {
        normals[j] = [flat[5 * j], flat[5 * j + 1], flat[5 * j + 2]];
        rho[j] = flat[5 * j + 3];
        residual[j] = flat[5 * j + 4];
    }
    Ok(PointwisePsResult {
        normals: NormalField::new(grid, normals)?,
        albedo: AlbedoMap::new(grid, rho)?,
        residual,
    })
}

/// Relative CG tolerance on ‖MᵀMz − Mᵀp‖ / ‖Mᵀp‖.
pub const CG_REL_TOL: f64 = 1e-10;

/// Least-squares integration of a normal field into a zero-mean depth map.
///
/// Converts normals to slopes p_j = [−n₁/n₃, −n₂/n₃] and runs conjugate
/// gradient on the normal equations, re-centering the iterate every step so
/// the constant null space of M cannot drift in.
pub fn integrate_normals(normals: &NormalField, op: &GradientOperator) -> Result<DepthMap> {
    if normals.grid != op.grid() {
        return Err(Error::Dimension { context: "normal field vs operator grid".into() });
    }
    let grid = normals.grid;
    let n = grid.n();
    let mut p = vec![0.0; 2 * n];
    for (j, nj) in normals.n.iter().enumerate() {
        if nj[2] <= 0.0 {
            return Err(Error::SteepNormal { pixel: j, nz: nj[2] });
        }
        // At far boundaries the operator row is zero, so the target slope
        // there must be zero as well or the system becomes inconsistent.
        p[2 * j] = if grid.right(j).is_some() { -nj[0] / nj[2] } else { 0.0 };
        p[2 * j + 1] = if grid.down(j).is_some() { -nj[1] / nj[2] } else { 0.0 };
    }

    let recenter = |v: &mut [f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        for x in v {
            *x -= mean;
        }
    };

    let mut b = op.adjoint_alloc(&p);
    recenter(&mut b);
    let b_norm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if b_norm == 0.0 {
        return DepthMap::new(grid, vec![0.0; n]);
    }

    let mut z = vec![0.0; n];
    let mut r = b.clone();
    let mut d = r.clone();
    let mut rs_old: f64 = r.iter().map(|x| x * x).sum();
    let mut y = vec![0.0; 2 * n];
    let mut ad = vec![0.0; n];
    let max_iters = 10 * n;
    for _ in 0..max_iters {
        if rs_old.sqrt() <= CG_REL_TOL * b_norm {
            recenter(&mut z);
            return DepthMap::new(grid, z);
        }
        op.apply(&d, &mut y);
        op.adjoint(&y, &mut ad);
        let dad: f64 = d.iter().zip(&ad).map(|(a, b)| a * b).sum();
        if dad <= 0.0 {
            // d is (numerically) in the null space; with re-centered iterates
            // this indicates convergence in the quotient space.
            break;
        }
        let alpha = rs_old / dad;
        for ((zi, di), (ri, adi)) in
            z.iter_mut().zip(&d).zip(r.iter_mut().zip(&ad))
        {
            *zi += alpha * di;
            *ri -= alpha * adi;
        }
        recenter(&mut z);
        let rs_new: f64 = r.iter().map(|x| x * x).sum();
        let beta = rs_new / rs_old;
        for (di, ri) in d.iter_mut().zip(&r) {
            *di = ri + beta * *di;
        }
        rs_old = rs_new;
    }
    let rel = rs_old.sqrt() / b_norm;
    if rel <= CG_REL_TOL {
        recenter(&mut z);
        return DepthMap::new(grid, z);
    }
    Err(Error::CgStall { rel_residual: rel, iters: max_iters })
}
