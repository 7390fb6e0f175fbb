//! Photometric-stereo depth reconstruction by global energy minimization.
//!
//! Given m ≥ 3 images of a static Lambertian surface under known, non-coplanar
//! distant lights, this crate estimates a depth map z and per-pixel albedo ρ by
//! minimizing the reprojection energy
//!
//! ```text
//! f(z, ρ) + g(z)  =  1/(2m) · Σ_j ‖I_j − ρ_j S [−M_j z; 1] / √(1+‖M_j z‖²)‖²
//!                    + λ/2 · ‖z − z₀‖²
//! ```
//!
//! where `M` is the forward-difference gradient operator, `S` the m×3 light
//! matrix, and z₀ a baseline depth obtained from pointwise photometric stereo
//! followed by least-squares normal integration.
//!
//! The minimization alternates an inertial proximal (heavy-ball forward-backward)
//! inner loop in z with a closed-form albedo update, following the structure
//!
//! * [`classic`]: pointwise normals/albedo and CG normal integration (the init),
//! * [`energy`]: f, g, the exact gradient ∇f and its cheap approximation q,
//! * [`ipiano`]: the inertial proximal solver with lazy backtracking,
//! * [`bounds`]: analytic Lipschitz constants for ∇f and q plus empirical probes,
//! * [`oracle`]: dense finite-difference and matrix-calculus cross-checks.
//!
//! All operations are deterministic; with the default `parallel` feature the
//! per-pixel loops run on rayon with a fixed chunked reduction order, so results
//! are bit-identical to the sequential build.

pub mod bounds;
pub mod classic;
pub mod energy;
pub mod grid;
pub mod ipiano;
pub mod metrics;
pub mod operator;
pub mod oracle;
pub(crate) mod par;
pub mod render;
pub mod scene;

pub use grid::{AlbedoMap, DepthMap, Grid, ImageStack, LightMatrix, NormalField, PixelMask};
pub use operator::{build_gradient_operator, GradientOperator};

/// Errors surfaced by construction, validation, and the solvers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two inputs that must share a shape do not.
    #[error("dimension mismatch: {context}")]
    Dimension { context: String },
    /// Fewer than three light directions.
    #[error("need at least 3 lights, got {m}")]
    TooFewLights { m: usize },
    /// The light matrix is numerically rank-deficient; three non-coplanar
    /// directions are required to invert the Lambertian model.
    #[error("coplanar light set: smallest singular value {sigma_min:.3e} (relative threshold {threshold:.1e})")]
    CoplanarLights { sigma_min: f64, threshold: f64 },
    /// A NaN or infinity where a finite value is required.
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    /// A solver configuration violates its invariants (d > c > 0, η > 1, μ ≥ 1, …).
    #[error("invalid config: {what}")]
    Config { what: String },
    /// Parameters of a synthetic scene outside their documented range.
    #[error("invalid scene parameters: {what}")]
    Scene { what: String },
    /// A normal field with a non-positive viewing-direction component cannot be
    /// converted to slopes for integration.
    #[error("normal at pixel {pixel} has non-positive z component {nz:.3e}")]
    SteepNormal { pixel: usize, nz: f64 },
    /// Conjugate gradient failed to reach its tolerance.
    #[error("conjugate gradient stalled at relative residual {rel_residual:.3e} after {iters} iterations")]
    CgStall { rel_residual: f64, iters: usize },
    /// Backtracking pushed the local Lipschitz estimate past any plausible
    /// value, which signals an inconsistent gradient.
    #[error("backtracking diverged: L exceeded {limit:.1e}")]
    BacktrackDiverged { limit: f64 },
    /// The dense oracle refuses grids past its cost guard.
    #[error("oracle guard: n = {n} exceeds the supported maximum {max}")]
    OracleGuard { n: usize, max: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by malformed input rather than solver failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::CgStall { .. } | Error::BacktrackDiverged { .. })
    }
}
