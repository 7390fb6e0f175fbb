//! Pixel grids and the value fields living on them.
//!
//! Pixels are indexed row-major: j = v·width + u with u the column (horizontal,
//! left to right) and v the row (vertical, top to bottom). All fields are flat
//! `Vec<f64>` in this order. Image stacks store the m intensities of one pixel
//! contiguously, which is the access pattern of every per-pixel solver loop.

use crate::{Error, Result};

/// Rectangular pixel grid; `n = width·height` pixels in row-major order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    width: usize,
    height: usize,
}

impl Grid {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension {
                context: format!("grid sides must be positive, got {width}x{height}"),
            });
        }
        Ok(Grid { width, height })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Pixel count n.
    pub fn n(&self) -> usize {
        self.width * self.height
    }

    /// Row-major index of column u, row v.
    pub fn index(&self, u: usize, v: usize) -> usize {
        debug_assert!(u < self.width && v < self.height);
        v * self.width + u
    }

    /// (u, v) coordinates of pixel j.
    pub fn uv(&self, j: usize) -> (usize, usize) {
        (j % self.width, j / self.width)
    }

    /// Right neighbor (u+1, v), if inside the grid.
    pub fn right(&self, j: usize) -> Option<usize> {
        if j % self.width + 1 < self.width {
            Some(j + 1)
        } else {
            None
        }
    }

    /// Down neighbor (u, v+1), if inside the grid.
    pub fn down(&self, j: usize) -> Option<usize> {
        if j / self.width + 1 < self.height {
            Some(j + self.width)
        } else {
            None
        }
    }
}

fn check_len(what: &'static str, len: usize, expected: usize) -> Result<()> {
    if len != expected {
        return Err(Error::Dimension {
            context: format!("{what}: length {len}, grid wants {expected}"),
        });
    }
    Ok(())
}

fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what });
    }
    Ok(())
}

/// Depth values z, one per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub grid: Grid,
    pub z: Vec<f64>,
}

impl DepthMap {
    pub fn new(grid: Grid, z: Vec<f64>) -> Result<Self> {
        check_len("depth map", z.len(), grid.n())?;
        check_finite("depth map", &z)?;
        Ok(DepthMap { grid, z })
    }

    pub fn zeros(grid: Grid) -> Self {
        DepthMap { grid, z: vec![0.0; grid.n()] }
    }
}

/// Per-pixel diffuse albedo ρ. Values must be finite; the solvers do not clamp
/// to [0, 1], so out-of-range values are representable and merely counted.
#[derive(Clone, Debug, PartialEq)]
pub struct AlbedoMap {
    pub grid: Grid,
    pub rho: Vec<f64>,
}

impl AlbedoMap {
    pub fn new(grid: Grid, rho: Vec<f64>) -> Result<Self> {
        check_len("albedo map", rho.len(), grid.n())?;
        check_finite("albedo map", &rho)?;
        Ok(AlbedoMap { grid, rho })
    }

    pub fn constant(grid: Grid, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.n()])
    }
}

/// Unit surface normals, one [n₁, n₂, n₃] triple per pixel with n₃ > 0.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalField {
    pub grid: Grid,
    pub n: Vec<[f64; 3]>,
}

impl NormalField {
    pub fn new(grid: Grid, n: Vec<[f64; 3]>) -> Result<Self> {
        check_len("normal field", n.len(), grid.n())?;
        if n.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: "normal field" });
        }
        Ok(NormalField { grid, n })
    }
}

/// Stack of m grayscale images over one grid.
///
/// Storage is pixel-major: the m intensities of pixel j are contiguous at
/// `data[j*m .. (j+1)*m]`, matching the per-pixel residual loops. Use
/// [`ImageStack::image_plane`] to extract one image in row-major pixel order.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageStack {
    grid: Grid,
    m: usize,
    data: Vec<f64>,
}

impl ImageStack {
    /// Builds from pixel-major data (`data[j*m + i]` is image i at pixel j).
    pub fn from_pixel_major(grid: Grid, m: usize, data: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(Error::Dimension { context: "image stack with m = 0".into() });
        }
        check_len("image stack", data.len(), grid.n() * m)?;
        check_finite("image stack", &data)?;
        Ok(ImageStack { grid, m, data })
    }

    /// Builds from m row-major image planes.
    pub fn from_planes(grid: Grid, planes: &[Vec<f64>]) -> Result<Self> {
        let m = planes.len();
        if m == 0 {
            return Err(Error::Dimension { context: "image stack with m = 0".into() });
        }
        for (i, p) in planes.iter().enumerate() {
            if p.len() != grid.n() {
                return Err(Error::Dimension {
                    context: format!("image {i}: {} pixels, grid wants {}", p.len(), grid.n()),
                });
            }
        }
        let n = grid.n();
        let mut data = vec![0.0; n * m];
        for (i, p) in planes.iter().enumerate() {
            for j in 0..n {
                data[j * m + i] = p[j];
            }
        }
        check_finite("image stack", &data)?;
        Ok(ImageStack { grid, m, data })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Image count m.
    pub fn m(&self) -> usize {
        self.m
    }

    /// The m intensities observed at pixel j.
    pub fn pixel(&self, j: usize) -> &[f64] {
        &self.data[j * self.m..(j + 1) * self.m]
    }

    pub fn pixel_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.m..(j + 1) * self.m]
    }

    /// Intensity of image i at pixel j.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.m + i]
    }

    /// Copies image i out as a row-major plane.
    pub fn image_plane(&self, i: usize) -> Vec<f64> {
        (0..self.grid.n()).map(|j| self.at(i, j)).collect()
    }

    /// Largest intensity in the stack (0 for an all-negative stack is not
    /// special-cased; callers scale noise by this value).
    pub fn max_intensity(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Known distant-light directions, one unit-ish row s^i = [sx, sy, sz] per image.
///
/// Construction rejects fewer than three lights and numerically coplanar sets;
/// the rank test compares the smallest singular value of S against
/// `RANK_THRESHOLD` times the largest.
#[derive(Clone, Debug, PartialEq)]
pub struct LightMatrix {
    rows: Vec<[f64; 3]>,
}

/// Relative singular-value threshold below which a light set counts as coplanar.
pub const RANK_THRESHOLD: f64 = 1e-10;

impl LightMatrix {
    pub fn new(rows: Vec<[f64; 3]>) -> Result<Self> {
        let m = rows.len();
        if m < 3 {
            return Err(Error::TooFewLights { m });
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: "light matrix" });
        }
        let s = nalgebra::DMatrix::from_fn(m, 3, |i, k| rows[i][k]);
        let sv = s.singular_values();
        let (smax, smin) = (sv[0], sv[2]);
        if smin <= RANK_THRESHOLD * smax {
            return Err(Error::CoplanarLights { sigma_min: smin, threshold: RANK_THRESHOLD });
        }
        Ok(LightMatrix { rows })
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[[f64; 3]] {
        &self.rows
    }

    /// Full m×3 matrix S.
    pub fn as_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.rows.len(), 3, |i, k| self.rows[i][k])
    }

    /// Left block S_ℓ (first two columns, multiplying −M_j z).
    pub fn left_block(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.rows.len(), 2, |i, k| self.rows[i][k])
    }

    /// Right column S_r (third column, multiplying the constant 1).
    pub fn right_column(&self) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_fn(self.rows.len(), |i, _| self.rows[i][2])
    }
}

/// Per-pixel mask; `false` removes the pixel from the reprojection data term
/// (its Tikhonov term and albedo are kept).
#[derive(Clone, Debug, PartialEq)]
pub struct PixelMask {
    pub grid: Grid,
    pub active: Vec<bool>,
}

impl PixelMask {
    pub fn new(grid: Grid, active: Vec<bool>) -> Result<Self> {
        check_len("pixel mask", active.len(), grid.n())?;
        Ok(PixelMask { grid, active })
    }

    pub fn all_active(grid: Grid) -> Self {
        PixelMask { grid, active: vec![true; grid.n()] }
    }

    pub fn is_active(&self, j: usize) -> bool {
        self.active[j]
    }
}
