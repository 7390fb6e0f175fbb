//! Inertial proximal minimization of the reprojection energy with
//! interleaved albedo refreshes.
//!
//! The depth update is an inertial forward-backward scheme: from the two
//! most recent iterates it forms
//!
//!   z̃^{ℓ+1} = prox_{αg}( z̃^ℓ − α ∇f(z̃^ℓ) + β (z̃^ℓ − z̃^{ℓ−1}) )
//!
//! where the local smoothness constant L behind α is found by lazy
//! backtracking against the quadratic upper bound of f. The inertial weight
//! β either follows an adaptive rule that keeps the Lyapunov quantity
//! H_ℓ = F(z̃^ℓ) + δ_ℓ ‖z̃^ℓ − z̃^{ℓ−1}‖² on a descent, or stays fixed at
//! 1/2. After each inner loop the albedo is refreshed with its closed-form
//! per-pixel least-squares value and the outer loop repeats until the
//! combined objective stalls.

use crate::energy::{EnergyContext, GradientMode};
use crate::grid::{AlbedoMap, DepthMap, ImageStack, LightMatrix, PixelMask};
use crate::operator::{build_gradient_operator, GradientOperator};
use crate::par;
use crate::render::sigma_of;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Inertial weight selection rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaMode {
    /// β from the history of δ so that H_ℓ decreases monotonically.
    Adaptive,
    /// Fixed β = 1/2.
    Constant,
}

/// Backtracking aborts once the trial constant exceeds this value.
pub const BACKTRACK_LIMIT: f64 = 1e30;

/// Absolute tolerance on the quadratic bound test. Once the objective sits at
/// its floating-point noise floor no finite L can satisfy the strict
/// inequality (the margin shrinks as L grows), so acceptance concedes
/// rounding-level violations instead of inflating L without bound.
pub const BACKTRACK_ACCEPT_TOL: f64 = 1e-12;

/// Albedo denominators below this keep the previous albedo value.
pub const ALBEDO_DENOM_FLOOR: f64 = 1e-12;

/// All solver knobs, serializable as a flat JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Anchor weight λ in g(z) = λ/2 ‖z − z₀‖².
    pub lambda: f64,
    /// Strong-convexity margin c in the step-size rule; 0 < c < d.
    pub c: f64,
    /// Starting value of the Lyapunov weight δ at each inner loop.
    pub d: f64,
    /// Multiplier applied to L when the quadratic bound test fails.
    pub eta: f64,
    /// Divisor applied to L between iterations so it can drift back down.
    pub mu: f64,
    pub beta_mode: BetaMode,
    pub gradient_mode: GradientMode,
    pub inner_max_iters: usize,
    pub outer_max_iters: usize,
    /// Relative objective stall threshold for both loops.
    pub rel_tol: f64,
    /// Trial smoothness constant for the very first inner iteration.
    #[serde(rename = "L_init")]
    pub l_init: f64,
    /// Record ⟨q, ∇f⟩ at every inner iterate (costs one full gradient each).
    pub trace_descent: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-6,
            c: 0.01,
            d: 1.0,
            eta: 1.2,
            mu: 1.05,
            beta_mode: BetaMode::Adaptive,
            gradient_mode: GradientMode::Approx,
            inner_max_iters: 100,
            outer_max_iters: 500,
            rel_tol: 1e-8,
            l_init: 1.0,
            trace_descent: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let fin = |name: &str, v: f64| -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config { what: format!("{name} must be finite, got {v}") })
            }
        };
        for (name, v) in [
            ("lambda", self.lambda),
            ("c", self.c),
            ("d", self.d),
            ("eta", self.eta),
            ("mu", self.mu),
            ("rel_tol", self.rel_tol),
            ("L_init", self.l_init),
        ] {
            fin(name, v)?;
        }
        if !(self.c > 0.0 && self.d > self.c) {
            return Err(Error::Config {
                what: format!("need d > c > 0, got c = {}, d = {}", self.c, self.d),
            });
        }
        if self.eta <= 1.0 {
            return Err(Error::Config { what: format!("eta must exceed 1, got {}", self.eta) });
        }
        if self.mu < 1.0 {
            return Err(Error::Config { what: format!("mu must be at least 1, got {}", self.mu) });
        }
        if self.rel_tol <= 0.0 {
            return Err(Error::Config { what: format!("rel_tol must be positive, got {}", self.rel_tol) });
        }
        if self.lambda < 0.0 {
            return Err(Error::Config { what: format!("lambda must be non-negative, got {}", self.lambda) });
        }
        if self.l_init <= 0.0 {
            return Err(Error::Config { what: format!("L_init must be positive, got {}", self.l_init) });
        }
        if self.inner_max_iters == 0 || self.outer_max_iters == 0 {
            return Err(Error::Config { what: "iteration limits must be at least 1".into() });
        }
        Ok(())
    }
}

/// Proximal map of the anchor α λ/2 ‖x − z₀‖², written so that v = z₀ maps
/// to z₀ without rounding.
pub fn prox_anchor(v: &[f64], z0: &[f64], alpha_lambda: f64) -> Vec<f64> {
    let shrink = 1.0 + alpha_lambda;
    v.iter().zip(z0).map(|(&vi, &ai)| ai + (vi - ai) / shrink).collect()
}

/// |new − old| relative to |old|, floored so a zero baseline still yields a
/// finite ratio.
pub fn rel_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / old.abs().max(f64::EPSILON)
}

/// One row of the iteration trace. Rows with `l == None` are loop-exit
/// snapshots of the final iterate rather than performed steps.
#[derive(Clone, Debug)]
pub struct InnerRecord {
    pub outer: usize,
    pub inner: usize,
    /// F(z̃^ℓ) = f + g at the current iterate, before stepping.
    pub f_plus_g: f64,
    /// Accepted smoothness constant for the step out of this iterate.
    pub l: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    /// Lyapunov weight δ_ℓ = 1/α − L/2 − β/(2α).
    pub delta: f64,
    /// Guaranteed per-step decrease weight γ_ℓ = 1/α − L/2 − β/α.
    pub gamma: Option<f64>,
    /// ‖z̃^ℓ − z̃^{ℓ−1}‖², the squared step into this iterate.
    pub step_sq: f64,
    /// H_ℓ = f_plus_g + δ_ℓ · step_sq.
    pub h_delta: f64,
    /// Margin by which the accepted quadratic bound test held.
    pub backtrack_slack: Option<f64>,
    /// ⟨q, ∇f⟩ at this iterate when descent tracing is on.
    pub q_dot_gradf: Option<f64>,
}

/// Per-outer-iteration bookkeeping.
#[derive(Clone, Debug)]
pub struct OuterRecord {
    pub outer: usize,
    /// f + g after the albedo refresh, the value the stall test compares.
    pub objective_after_albedo: f64,
    pub inner_iters: usize,
    /// Pixels whose refreshed albedo landed outside [0, 1]. Values are kept
    /// as computed; this is a diagnostic, not a constraint.
    pub albedo_out_of_range: usize,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub depth: DepthMap,
    pub albedo: AlbedoMap,
    pub trace: Vec<InnerRecord>,
    pub outer: Vec<OuterRecord>,
    pub outer_iters: usize,
    pub converged: bool,
    pub final_objective: f64,
}

pub struct InnerOutcome {
    pub z: Vec<f64>,
    /// Trial constant the next inner loop should start from.
    pub l_next: f64,
    pub iters: usize,
    pub final_objective: f64,
}

struct AcceptedStep {
    l: f64,
    alpha: f64,
    beta: f64,
    z_new: Vec<f64>,
    f_new: f64,
    step_sq: f64,
    slack: f64,
}

/// Grow L until f(z⁺) ≤ f(z) + ⟨∇f, z⁺ − z⟩ + L/2 ‖z⁺ − z‖². The candidate
/// itself depends on L through α and (adaptively) β, so it is rebuilt for
/// every trial.
fn backtrack_step(
    ctx: &EnergyContext,
    z_cur: &[f64],
    z_prev: &[f64],
    grad: &[f64],
    f_cur: f64,
    delta_prev: f64,
    l_start: f64,
    config: &SolverConfig,
) -> Result<AcceptedStep> {
    let c = config.c;
    let mut l = l_start;
    loop {
        let half_l = c + 0.5 * l;
        let beta = match config.beta_mode {
            BetaMode::Adaptive => {
                let nu = (delta_prev + 0.5 * l) / half_l;
                (nu - 1.0) / (nu + c - 0.5)
            }
            BetaMode::Constant => 0.5,
        };
        let alpha = (1.0 - beta) / half_l;
        let v: Vec<f64> = z_cur
            .iter()
            .zip(z_prev)
            .zip(grad)
            .map(|((&zc, &zp), &g)| zc - alpha * g + beta * (zc - zp))
            .collect();
        let z_new = prox_anchor(&v, ctx.z0(), alpha * ctx.lambda());
        let mut dot = 0.0;
        let mut step_sq = 0.0;
        for (zn, (zc, g)) in z_new.iter().zip(z_cur.iter().zip(grad)) {
            let s = zn - zc;
            dot += g * s;
            step_sq += s * s;
        }
        let f_new = ctx.eval_f(&z_new);
        let bound = f_cur + dot + 0.5 * l * step_sq;
        if f_new <= bound + BACKTRACK_ACCEPT_TOL {
            return Ok(AcceptedStep { l, alpha, beta, z_new, f_new, step_sq, slack: bound - f_new });
        }
        l *= config.eta;
        if l > BACKTRACK_LIMIT {
            return Err(Error::BacktrackDiverged { limit: BACKTRACK_LIMIT });
        }
    }
}

/// Inner loop: minimize f + g in z at fixed albedo, starting from `z_start`,
/// with the backtracking state seeded by `l_start`. Appends one trace row per
/// iteration plus an exit snapshot.
pub fn ipiano_inner(
    ctx: &EnergyContext,
    z_start: &[f64],
    config: &SolverConfig,
    l_start: f64,
    outer: usize,
    trace: &mut Vec<InnerRecord>,
) -> Result<InnerOutcome> {
    let mut z_prev = z_start.to_vec();
    let mut z_cur = z_start.to_vec();
    let mut delta_prev = config.d;
    let mut l_trial = l_start;
    let mut f_cur = ctx.eval_f(&z_cur);
    let mut objective = f_cur + ctx.eval_g(&z_cur);
    let mut entry_step_sq = 0.0;
    let mut iters = 0;

    for ell in 0..config.inner_max_iters {
        let grad = ctx.grad_f(&z_cur, config.gradient_mode);
        let q_dot_gradf =
            config.trace_descent.then(|| ctx.descent_diagnostic(&z_cur));
        let step =
            backtrack_step(ctx, &z_cur, &z_prev, &grad, f_cur, delta_prev, l_trial, config)?;
        let inv_alpha = 1.0 / step.alpha;
        let delta = inv_alpha - 0.5 * step.l - 0.5 * step.beta * inv_alpha;
        let gamma = inv_alpha - 0.5 * step.l - step.beta * inv_alpha;
        trace.push(InnerRecord {
            outer,
            inner: ell,
            f_plus_g: objective,
            l: Some(step.l),
            alpha: Some(step.alpha),
            beta: Some(step.beta),
            delta,
            gamma: Some(gamma),
            step_sq: entry_step_sq,
            h_delta: objective + delta * entry_step_sq,
            backtrack_slack: Some(step.slack),
            q_dot_gradf,
        });
        iters = ell + 1;
        delta_prev = delta;
        entry_step_sq = step.step_sq;
        z_prev = std::mem::replace(&mut z_cur, step.z_new);
        f_cur = step.f_new;
        let objective_new = f_cur + ctx.eval_g(&z_cur);
        l_trial = step.l / config.mu;
        let stalled = rel_change(objective_new, objective) < config.rel_tol;
        objective = objective_new;
        if stalled {
            break;
        }
    }

    // Exit snapshot: δ continues its recursion under the adaptive rule (the
    // update is independent of L there); with constant β the would-be next δ
    // depends on an unknown L, so the last value is reused.
    let delta_exit = match config.beta_mode {
        BetaMode::Adaptive => config.c + (delta_prev - config.c) / (1.0 + 2.0 * config.c),
        BetaMode::Constant => delta_prev,
    };
    trace.push(InnerRecord {
        outer,
        inner: iters,
        f_plus_g: objective,
        l: None,
        alpha: None,
        beta: None,
        delta: delta_exit,
        gamma: None,
        step_sq: entry_step_sq,
        h_delta: objective + delta_exit * entry_step_sq,
        backtrack_slack: None,
        q_dot_gradf: None,
    });

    Ok(InnerOutcome { z: z_cur, l_next: l_trial, iters, final_objective: objective })
}

/// Closed-form per-pixel albedo refresh ρ_j = σ_j Σ_i I_ij d_ij / Σ_i d_ij²
/// with d_ij = ⟨s_i, w_j⟩. Pixels with a vanishing denominator, and masked
/// pixels, keep their previous value. Returns the new albedo and the number
/// of refreshed values outside [0, 1].
pub fn albedo_update(
    images: &ImageStack,
    lights: &LightMatrix,
    op: &GradientOperator,
    z: &[f64],
    rho_prev: &[f64],
    mask: Option<&PixelMask>,
) -> (Vec<f64>, usize) {
    let n = op.grid().n();
    let mut rho = vec![0.0; n];
    par::fill_blocks(&mut rho, 1, |j, out| {
        if mask.map_or(false, |m| !m.is_active(j)) {
            out[0] = rho_prev[j];
            return;
        }
        let (gu, gv) = op.pixel_gradient(z, j);
        let sigma = sigma_of(gu, gv);
        let mut num = 0.0;
        let mut den = 0.0;
        for (row, &obs) in lights.rows().iter().zip(images.pixel(j)) {
            let d = row[2] - row[0] * gu - row[1] * gv;
            num += obs * d;
            den += d * d;
        }
        out[0] = if den < ALBEDO_DENOM_FLOOR { rho_prev[j] } else { sigma * num / den };
    });
    let out_of_range = rho.iter().filter(|&&r| !(0.0..=1.0).contains(&r)).count();
    (rho, out_of_range)
}

/// Alternating minimization: inner inertial proximal loop in depth, then the
/// closed-form albedo refresh, until the combined objective stalls. The
/// anchor z₀ is pinned to the initial depth throughout, and the backtracking
/// constant carries across outer iterations.
pub fn alternating_solve(
    images: &ImageStack,
    lights: &LightMatrix,
    z_init: &DepthMap,
    rho_init: &AlbedoMap,
    config: &SolverConfig,
    mask: Option<&PixelMask>,
) -> Result<SolveResult> {
    config.validate()?;
    let grid = images.grid();
    if z_init.grid != grid || rho_init.grid != grid {
        return Err(Error::Dimension { context: "initialization grid vs image grid".into() });
    }
    let op = build_gradient_operator(grid);
    let z0 = z_init.z.clone();
    let mut z = z_init.z.clone();
    let mut rho = rho_init.rho.clone();
    let mut l_carry = config.l_init;
    let mut trace = Vec::new();
    let mut outer_records = Vec::new();
    let mut converged = false;

    let mut objective_prev = {
        let ctx = EnergyContext::new(images, lights, op, &rho, config.lambda, &z0, mask)?;
        ctx.eval_objective(&z)
    };
    let mut objective_final = objective_prev;
    let mut outer_iters = 0;

    for k in 0..config.outer_max_iters {
        let inner = {
            let ctx = EnergyContext::new(images, lights, op, &rho, config.lambda, &z0, mask)?;
            ipiano_inner(&ctx, &z, config, l_carry, k, &mut trace)?
        };
        z = inner.z;
        l_carry = inner.l_next;
        let (rho_new, out_of_range) = albedo_update(images, lights, &op, &z, &rho, mask);
        rho = rho_new;
        let objective = {
            let ctx = EnergyContext::new(images, lights, op, &rho, config.lambda, &z0, mask)?;
            ctx.eval_objective(&z)
        };
        outer_records.push(OuterRecord {
            outer: k,
            objective_after_albedo: objective,
            inner_iters: inner.iters,
            albedo_out_of_range: out_of_range,
        });
        outer_iters = k + 1;
        objective_final = objective;
        if rel_change(objective, objective_prev) < config.rel_tol {
            converged = true;
            break;
        }
        objective_prev = objective;
    }

    Ok(SolveResult {
        depth: DepthMap::new(grid, z)?,
        albedo: AlbedoMap::new(grid, rho)?,
        trace,
        outer: outer_records,
        outer_iters,
        converged,
        final_objective: objective_final,
    })
}
