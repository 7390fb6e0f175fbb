//! Synthetic ground-truth scenes and light rigs for tests and the CLI.
//!
//! All depth profiles are smooth with an analytically bounded gradient, so the
//! bounded-slope assumption behind the Lipschitz bounds holds by construction.
//! Coordinates are pixel-centered: the surface is evaluated at integer (u, v)
//! and radii are measured in pixels from the grid center.

use crate::grid::{AlbedoMap, DepthMap, Grid, LightMatrix};
use crate::{Error, Result};

/// Depth profile family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    /// Constant depth (level given by `amplitude`).
    Plane,
    /// z = amplitude · exp(−d²/(2σ²)) with σ = `sigma_frac` · half-extent.
    GaussianBump,
    /// Spherical cap meeting z = 0 at rim radius `radius_frac` · half-extent,
    /// with maximum surface slope `max_slope` at the rim.
    SphereCap,
}

/// Albedo pattern over the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlbedoSpec {
    Constant(f64),
    /// Checkerboard of `tile`×`tile` pixel squares alternating `low`/`high`.
    TwoTone { low: f64, high: f64, tile: usize },
}

/// Parameters for [`make_scene`]. `amplitude` is the peak height of the bump
/// (or the constant level of a plane); the cap height follows from its rim
/// radius and slope instead.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneParams {
    pub kind: SceneKind,
    pub amplitude: f64,
    /// Gaussian σ as a fraction of the half-extent (bump only), in (0, 2].
    pub sigma_frac: f64,
    /// Rim radius as a fraction of the half-extent (cap only), in (0, 1].
    pub radius_frac: f64,
    /// Target maximum slope of the cap surface, in (0, 10].
    pub max_slope: f64,
    pub albedo: AlbedoSpec,
}

impl SceneParams {
    /// Scene defaults used throughout the tests: modest slopes, albedo 0.9.
    pub fn default_for(kind: SceneKind) -> Self {
        SceneParams {
            kind,
            amplitude: match kind {
                SceneKind::Plane => 0.0,
                _ => 2.0,
            },
            sigma_frac: 0.25,
            radius_frac: 0.8,
            max_slope: 0.8,
            albedo: AlbedoSpec::Constant(0.9),
        }
    }

    pub fn with_albedo(mut self, albedo: AlbedoSpec) -> Self {
        self.albedo = albedo;
        self
    }
}

/// A ground-truth depth/albedo pair.
#[derive(Clone, Debug)]
pub struct Scene {
    pub depth: DepthMap,
    pub albedo: AlbedoMap,
}

/// Builds the ground-truth fields for `params` on `grid`.
pub fn make_scene(grid: Grid, params: &SceneParams) -> Result<Scene> {
    if !params.amplitude.is_finite() {
        return Err(Error::Scene { what: "amplitude must be finite".into() });
    }
    let (w, h) = (grid.width(), grid.height());
    let cu = (w as f64 - 1.0) / 2.0;
    let cv = (h as f64 - 1.0) / 2.0;
    // Half-extent of the smaller side; radius fractions are relative to it.
    // max(0.5) keeps 1-pixel-wide grids usable.
    let half = (((w.min(h)) as f64 - 1.0) / 2.0).max(0.5);

    let depth_at: Box<dyn Fn(f64, f64) -> f64> = match params.kind {
        SceneKind::Plane => {
            let level = params.amplitude;
            Box::new(move |_, _| level)
        }
        SceneKind::GaussianBump => {
            if !(params.sigma_frac > 0.0 && params.sigma_frac <= 2.0) {
                return Err(Error::Scene {
                    what: format!("sigma_frac {} outside (0, 2]", params.sigma_frac),
                });
            }
            let a = params.amplitude;
            let sigma = params.sigma_frac * half;
            Box::new(move |du, dv| a * (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp())
        }
        SceneKind::SphereCap => {
            if !(params.radius_frac > 0.0 && params.radius_frac <= 1.0) {
                return Err(Error::Scene {
                    what: format!("radius_frac {} outside (0, 1]", params.radius_frac),
                });
            }
            if !(params.max_slope > 0.0 && params.max_slope <= 10.0) {
                return Err(Error::Scene {
                    what: format!("max_slope {} outside (0, 10]", params.max_slope),
                });
            }
            let rc = params.radius_frac * half;
            let s = params.max_slope;
            // Sphere radius such that the surface slope d/dd [√(R²−d²)] at the
            // rim d = rc has magnitude s: R = rc·√(1+s²)/s.
            let r_sphere = rc * (1.0 + s * s).sqrt() / s;
            let base = (r_sphere * r_sphere - rc * rc).sqrt();
            Box::new(move |du, dv| {
                let d2 = du * du + dv * dv;
                if d2 < rc * rc {
                    (r_sphere * r_sphere - d2).sqrt() - base
                } else {
                    0.0
                }
            })
        }
    };

    let mut z = vec![0.0; grid.n()];
    for (j, zj) in z.iter_mut().enumerate() {
        let (u, v) = grid.uv(j);
        *zj = depth_at(u as f64 - cu, v as f64 - cv);
    }

    let rho = match params.albedo {
        AlbedoSpec::Constant(value) => {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::Scene { what: format!("albedo {value} must be ≥ 0") });
            }
            vec![value; grid.n()]
        }
        AlbedoSpec::TwoTone { low, high, tile } => {
            if tile == 0 {
                return Err(Error::Scene { what: "two-tone tile size must be positive".into() });
            }
            if !(low.is_finite() && high.is_finite() && low >= 0.0 && high >= 0.0) {
                return Err(Error::Scene { what: "two-tone albedos must be ≥ 0".into() });
            }
            (0..grid.n())
                .map(|j| {
                    let (u, v) = grid.uv(j);
                    if (u / tile + v / tile) % 2 == 0 {
                        low
                    } else {
                        high
                    }
                })
                .collect()
        }
    };

    Ok(Scene { depth: DepthMap::new(grid, z)?, albedo: AlbedoMap::new(grid, rho)? })
}

/// m light directions on a cone of the given polar angle (degrees) around the
/// viewing axis: s^i = [sinθ cosφ_i, sinθ sinφ_i, cosθ] with φ_i = 2πi/m.
/// Any m ≥ 3 with θ ∈ (0°, 90°) gives a rank-3 set.
pub fn cone_lights(m: usize, polar_deg: f64) -> Result<LightMatrix> {
    if !(polar_deg > 0.0 && polar_deg < 90.0) {
        return Err(Error::Scene { what: format!("cone polar angle {polar_deg} outside (0, 90)") });
    }
    let theta = polar_deg.to_radians();
    let (st, ct) = (theta.sin(), theta.cos());
    let rows = (0..m)
        .map(|i| {
            let phi = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
            [st * phi.cos(), st * phi.sin(), ct]
        })
        .collect();
    LightMatrix::new(rows)
}
