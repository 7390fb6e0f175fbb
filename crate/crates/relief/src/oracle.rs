//! Dense reference implementations used by the test suite.
//!
//! Everything in this module is deliberately written the slow way: the
//! difference operator is materialized as an explicit 2n×n matrix, the
//! shading coefficients as an explicit block-diagonal mn×2n matrix, and the
//! derivative of the coefficient matrix as the full column-major Jacobian
//! D[A] ∈ ℝ^{2mn²×n}, so that the production code paths share nothing with
//! the values checked against them. The σ-derivative block of the energy
//! gradient is assembled per the product rule as
//!
//!   P = ((Mz)ᵀ ⊗ 1_{mn}) D[A] − D[b]
//!
//! and the reference gradient is (AM + P)ᵀ(AMz − b)/m. A hard pixel-count
//! guard keeps these quadratic-size objects from being built on anything
//! larger than toy grids.

use crate::grid::{Grid, ImageStack, LightMatrix, NormalField};
use crate::operator::GradientOperator;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Largest pixel count any dense oracle accepts.
pub const ORACLE_MAX_PIXELS: usize = 64;

fn guard(n: usize) -> Result<()> {
    if n > ORACLE_MAX_PIXELS {
        return Err(Error::OracleGuard { n, max: ORACLE_MAX_PIXELS });
    }
    Ok(())
}

/// Forward-difference matrix built index by index from the grid layout,
/// independent of the operator module.
pub fn dense_difference_matrix(grid: Grid) -> DMatrix<f64> {
    let (w, h) = (grid.width(), grid.height());
    let n = grid.n();
    let mut m = DMatrix::zeros(2 * n, n);
    for v in 0..h {
        for u in 0..w {
            let j = v * w + u;
            if u + 1 < w {
                m[(2 * j, j)] = -1.0;
                m[(2 * j, j + 1)] = 1.0;
            }
            if v + 1 < h {
                m[(2 * j + 1, j)] = -1.0;
                m[(2 * j + 1, j + w)] = 1.0;
            }
        }
    }
    m
}

fn slopes(mdense: &DMatrix<f64>, z: &[f64]) -> Vec<(f64, f64, f64)> {
    let zv = DVector::from_column_slice(z);
    let g = mdense * zv;
    (0..z.len())
        .map(|j| {
            let (gu, gv) = (g[2 * j], g[2 * j + 1]);
            (gu, gv, (1.0 + gu * gu + gv * gv).sqrt())
        })
        .collect()
}

/// Block-diagonal coefficient matrix A ∈ ℝ^{mn×2n} with
/// A_j = −ρ_j/σ_j · S[:, 0..2].
pub fn dense_coefficient_matrix(
    lights: &LightMatrix,
    rho: &[f64],
    grid: Grid,
    z: &[f64],
) -> Result<DMatrix<f64>> {
    guard(grid.n())?;
    let n = grid.n();
    let m = lights.m();
    let mdense = dense_difference_matrix(grid);
    let sl = slopes(&mdense, z);
    let mut a = DMatrix::zeros(m * n, 2 * n);
    for j in 0..n {
        let (_, _, sigma) = sl[j];
        for (i, row) in lights.rows().iter().enumerate() {
            a[(j * m + i, 2 * j)] = -rho[j] * row[0] / sigma;
            a[(j * m + i, 2 * j + 1)] = -rho[j] * row[1] / sigma;
        }
    }
    Ok(a)
}

/// Stacked right-hand side b ∈ ℝ^{mn} with b_j = I_j − ρ_j/σ_j · S[:, 2].
pub fn dense_rhs(
    images: &ImageStack,
    lights: &LightMatrix,
    rho: &[f64],
    z: &[f64],
) -> Result<DVector<f64>> {
    let grid = images.grid();
    guard(grid.n())?;
    let n = grid.n();
    let m = lights.m();
    let mdense = dense_difference_matrix(grid);
    let sl = slopes(&mdense, z);
    let mut b = DVector::zeros(m * n);
    for j in 0..n {
        let (_, _, sigma) = sl[j];
        for (i, row) in lights.rows().iter().enumerate() {
            b[j * m + i] = images.at(i, j) - rho[j] * row[2] / sigma;
        }
    }
    Ok(b)
}

/// Column-major Jacobian D[A] ∈ ℝ^{2mn²×n}; entry (c·mn + r, k) holds
/// ∂A_{r,c}/∂z_k = ρ_j/σ_j³ · (g_jᵀ M_j e_k) · S_{i,t} for r = jm + i,
/// c = 2j + t.
pub fn dense_jacobian_a(
    lights: &LightMatrix,
    rho: &[f64],
    grid: Grid,
    z: &[f64],
) -> Result<DMatrix<f64>> {
    guard(grid.n())?;
    let n = grid.n();
    let m = lights.m();
    let mn = m * n;
    let mdense = dense_difference_matrix(grid);
    let sl = slopes(&mdense, z);
    let mut da = DMatrix::zeros(2 * mn * n, n);
    for j in 0..n {
        let (gu, gv, sigma) = sl[j];
        let scale = rho[j] / (sigma * sigma * sigma);
        for k in 0..n {
            let dot = gu * mdense[(2 * j, k)] + gv * mdense[(2 * j + 1, k)];
            if dot == 0.0 {
                continue;
            }
            for t in 0..2 {
                for (i, row) in lights.rows().iter().enumerate() {
                    let vec_row = (2 * j + t) * mn + j * m + i;
                    da[(vec_row, k)] = scale * dot * row[t];
                }
            }
        }
    }
    Ok(da)
}

/// Jacobian D[b] ∈ ℝ^{mn×n}; ∂b_{jm+i}/∂z_k = ρ_j/σ_j³ · (g_jᵀ M_j e_k) · S_{i,2}.
pub fn dense_jacobian_b(
    lights: &LightMatrix,
    rho: &[f64],
    grid: Grid,
    z: &[f64],
) -> Result<DMatrix<f64>> {
    guard(grid.n())?;
    let n = grid.n();
    let m = lights.m();
    let mdense = dense_difference_matrix(grid);
    let sl = slopes(&mdense, z);
    let mut db = DMatrix::zeros(m * n, n);
    for j in 0..n {
        let (gu, gv, sigma) = sl[j];
        let scale = rho[j] / (sigma * sigma * sigma);
        for k in 0..n {
            let dot = gu * mdense[(2 * j, k)] + gv * mdense[(2 * j + 1, k)];
            if dot == 0.0 {
                continue;
            }
            for (i, row) in lights.rows().iter().enumerate() {
                db[(j * m + i, k)] = scale * dot * row[2];
            }
        }
    }
    Ok(db)
}

/// Reference energy ‖AMz − b‖²/(2m).
pub fn dense_energy(
    images: &ImageStack,
    lights: &LightMatrix,
    rho: &[f64],
    z: &[f64],
) -> Result<f64> {
    let grid = images.grid();
    guard(grid.n())?;
    let mdense = dense_difference_matrix(grid);
    let a = dense_coefficient_matrix(lights, rho, grid, z)?;
    let b = dense_rhs(images, lights, rho, z)?;
    let r = &a * &mdense * DVector::from_column_slice(z) - b;
    Ok(r.norm_squared() / (2.0 * lights.m() as f64))
}

/// Reference full gradient (AM + P)ᵀ(AMz − b)/m with P assembled through the
/// Kronecker identity on D[A].
pub fn dense_full_gradient(
    images: &ImageStack,
    lights: &LightMatrix,
    rho: &[f64],
    z: &[f64],
) -> Result<Vec<f64>> {
    let grid = images.grid();
    guard(grid.n())?;
    let n = grid.n();
    let m = lights.m();
    let mn = m * n;
    let mdense = dense_difference_matrix(grid);
    let zv = DVector::from_column_slice(z);
    let a = dense_coefficient_matrix(lights, rho, grid, z)?;
    let b = dense_rhs(images, lights, rho, z)?;
    let am = &a * &mdense;
    let r = &am * &zv - b;
    let da = dense_jacobian_a(lights, rho, grid, z)?;
    let db = dense_jacobian_b(lights, rho, grid, z)?;
    let mz = &mdense * &zv;
    let mzt = DMatrix::from_fn(1, 2 * n, |_, c| mz[c]);
    let p = mzt.kronecker(&DMatrix::identity(mn, mn)) * da - db;
    let grad = (am + p).transpose() * r / m as f64;
    Ok(grad.iter().copied().collect())
}

/// Reference frozen-coefficient gradient (AM)ᵀ(AMz − b)/m.
pub fn dense_frozen_gradient(
    images: &ImageStack,
    lights: &LightMatrix,
    rho: &[f64],
    z: &[f64],
) -> Result<Vec<f64>> {
    let grid = images.grid();
    guard(grid.n())?;
    let mdense = dense_difference_matrix(grid);
    let a = dense_coefficient_matrix(lights, rho, grid, z)?;
    let b = dense_rhs(images, lights, rho, z)?;
    let am = &a * &mdense;
    let r = &am * DVector::from_column_slice(z) - b;
    let grad = am.transpose() * r / lights.m() as f64;
    Ok(grad.iter().copied().collect())
}

/// Central finite-difference gradient of an arbitrary scalar function.
pub fn central_difference_grad(
    f: impl Fn(&[f64]) -> f64,
    z: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    let mut work = z.to_vec();
    for k in 0..z.len() {
        work[k] = z[k] + h;
        let plus = f(&work);
        work[k] = z[k] - h;
        let minus = f(&work);
        work[k] = z[k];
        out[k] = (plus - minus) / (2.0 * h);
    }
    out
}

/// Minimum-norm least-squares integration min_z ‖Mz − p‖ via dense SVD; the
/// minimum-norm solution is orthogonal to the constant null space, so it is
/// automatically zero-mean.
pub fn dense_integration_solve(
    normals: &NormalField,
    op: &GradientOperator,
) -> Result<Vec<f64>> {
    let grid = normals.grid;
    guard(grid.n())?;
    if grid != op.grid() {
        return Err(Error::Dimension { context: "normal field vs operator grid".into() });
    }
    let n = grid.n();
    let mdense = dense_difference_matrix(grid);
    let mut p = DVector::zeros(2 * n);
    for (j, nj) in normals.n.iter().enumerate() {
        if nj[2] <= 0.0 {
            return Err(Error::SteepNormal { pixel: j, nz: nj[2] });
        }
        p[2 * j] = -nj[0] / nj[2];
        p[2 * j + 1] = -nj[1] / nj[2];
    }
    let svd = mdense.svd(true, true);
    let sol = svd
        .solve(&p, 1e-10)
        .map_err(|_| Error::NonFinite { what: "dense integration solve" })?;
    Ok(sol.iter().copied().collect())
}
