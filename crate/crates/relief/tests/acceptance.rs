//! Acceptance suite: twelve numbered criteria covering gradient correctness,
//! prox and albedo optimality, the backtracking and descent contracts,
//! end-to-end reconstruction quality, runtime separation of the two gradient
//! evaluations, Lipschitz-bound validity, baseline exactness, and the
//! preconditions of the convergence theory.
//!
//! Each test prints one `PASS criterion N: …` line with the measured values
//! (visible under `--nocapture`) and asserts the stated tolerance.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relief::bounds::{empirical_lipschitz, lipschitz_report, GradientCaps};
use relief::classic::{estimate_normals_albedo, integrate_normals};
use relief::energy::{EnergyContext, GradientMode};
use relief::ipiano::{
    albedo_update, alternating_solve, prox_anchor, BetaMode, InnerRecord, SolverConfig,
};
use relief::metrics::{mean_angular_error, rms_after_mean_alignment};
use relief::oracle::central_difference_grad;
use relief::oracle::dense_full_gradient;
use relief::render::{add_gaussian_noise, normals_from_depth, render_lambertian};
use relief::scene::{cone_lights, make_scene, SceneKind, SceneParams};
use relief::{build_gradient_operator, AlbedoMap, DepthMap, Grid, ImageStack, LightMatrix};

/// Every tolerance the suite asserts, in one place.
mod tol {
    /// Criterion 1: exact gradient vs central differences, relative ℓ∞.
    pub const GRAD_FD_REL: f64 = 1e-5;
    /// Criterion 1: central-difference step.
    pub const GRAD_FD_STEP: f64 = 1e-6;
    /// Criterion 1: wall-clock budget in seconds for the ten scenes.
    pub const GRAD_FD_BUDGET_S: f64 = 30.0;
    /// Criterion 2: exact gradient vs dense assembly, relative ℓ∞.
    pub const ORACLE_REL: f64 = 1e-12;
    /// Criterion 3: prox stationarity identity, ℓ∞.
    pub const PROX_IDENTITY: f64 = 1e-14;
    /// Criterion 4: |∂f/∂ρ_j| after the closed-form update.
    pub const ALBEDO_GRAD: f64 = 1e-5;
    /// Criterion 4: central-difference step in ρ.
    pub const ALBEDO_FD_STEP: f64 = 1e-7;
    /// Criterion 4: noiseless albedo recovery, ℓ∞.
    pub const ALBEDO_RECOVERY: f64 = 1e-12;
    /// Criterion 5: minimum slack of an accepted backtracking pair.
    pub const BACKTRACK_SLACK: f64 = -1e-12;
    /// Criterion 6: allowed uphill drift of the H_δ sequence.
    pub const H_DELTA_DRIFT: f64 = 1e-10;
    /// Criterion 7: runs (out of 15 per scene kind) that must improve.
    pub const IMPROVED_RUNS_MIN: usize = 14;
    /// Criterion 7: wall-clock budget in seconds for all thirty runs.
    pub const E2E_BUDGET_S: f64 = 600.0;
    /// Criterion 8: drift of depth and albedo from a perfect-data start.
    pub const FIXED_POINT: f64 = 1e-12;
    /// Criterion 9: required speed ratio, exact over approximate.
    pub const SPEEDUP_MIN: f64 = 5.0;
    /// Criterion 11: classic baseline angular error, degrees.
    pub const CLASSIC_MAE_DEG: f64 = 1e-6;
    /// Criterion 11: integration RMS depth error after mean alignment.
    pub const CLASSIC_RMS: f64 = 1e-6;
}

fn rel_linf(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().map(|x| x.abs()).fold(0.0, f64::max);
    diff / scale.max(f64::MIN_POSITIVE)
}

/// Ground-truth scene with noisy rendered images.
struct Instance {
    grid: Grid,
    depth_gt: DepthMap,
    albedo_gt: AlbedoMap,
    lights: LightMatrix,
    images: ImageStack,
}

fn noisy_instance(kind: SceneKind, side: usize, m: usize, sigma: f64, seed: u64) -> Instance {
    let grid = Grid::new(side, side).unwrap();
    let scene = make_scene(grid, &SceneParams::default_for(kind)).unwrap();
    let lights = cone_lights(m, 30.0).unwrap();
    let op = build_gradient_operator(grid);
    let clean = render_lambertian(&scene.depth, &scene.albedo, &lights, &op, false);
    let images = if sigma > 0.0 { add_gaussian_noise(&clean, sigma, seed) } else { clean };
    Instance { grid, depth_gt: scene.depth, albedo_gt: scene.albedo, lights, images }
}

/// Fully random small instance: rough depth and albedo, images rendered from
/// a second random surface so residuals stay generic.
struct RandomInstance {
    images: ImageStack,
    lights: LightMatrix,
    z: Vec<f64>,
    rho: Vec<f64>,
    z0: Vec<f64>,
}

fn random_instance(width: usize, height: usize, m: usize, seed: u64) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::new(width, height).unwrap();
    let n = grid.n();
    let lights = cone_lights(m, 35.0).unwrap();
    let op = build_gradient_operator(grid);
    let z_src: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let rho_src: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..1.0)).collect();
    let src_depth = DepthMap::new(grid, z_src).unwrap();
    let src_albedo = AlbedoMap::new(grid, rho_src).unwrap();
    let clean = render_lambertian(&src_depth, &src_albedo, &lights, &op, false);
    let images = add_gaussian_noise(&clean, 0.02, seed.wrapping_add(1));
    let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let rho: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..1.0)).collect();
    let z0: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
    RandomInstance { images, lights, z, rho, z0 }
}

fn classic_init(inst: &Instance) -> (DepthMap, AlbedoMap) {
    let pointwise = estimate_normals_albedo(&inst.images, &inst.lights).unwrap();
    let op = build_gradient_operator(inst.grid);
    let z0 = integrate_normals(&pointwise.normals, &op).unwrap();
    (z0, pointwise.albedo)
}

#[test]
fn criterion_01_exact_gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let inst = random_instance(8, 8, 4, seed);
        let op = build_gradient_operator(inst.images.grid());
        let ctx = EnergyContext::new(
            &inst.images,
            &inst.lights,
            op,
            &inst.rho,
            1e-6,
            &inst.z0,
            None,
        )
        .unwrap();
        let exact = ctx.grad_f_exact(&inst.z);
        let fd = central_difference_grad(|w| ctx.eval_f(w), &inst.z, tol::GRAD_FD_STEP);
        worst = worst.max(rel_linf(&exact, &fd));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let ok = worst <= tol::GRAD_FD_REL && elapsed < tol::GRAD_FD_BUDGET_S;
    println!(
        "{} criterion 1: max relative l-inf error {worst:.3e} over 10 random 8x8 scenes \
         (tol {:.0e}), {elapsed:.2}s (budget {:.0}s)",
        if ok { "PASS" } else { "FAIL" },
        tol::GRAD_FD_REL,
        tol::GRAD_FD_BUDGET_S
    );
    assert!(worst <= tol::GRAD_FD_REL, "finite-difference mismatch {worst:.3e}");
    assert!(elapsed < tol::GRAD_FD_BUDGET_S, "took {elapsed:.1}s");
}

#[test]
fn criterion_02_exact_gradient_matches_dense_assembly_on_all_small_grids() {
    let mut worst = 0.0f64;
    let mut grids = 0;
    for width in 1..=8usize {
        for height in 1..=8usize {
            let seed = (width * 8 + height) as u64;
            let inst = random_instance(width, height, 4, seed);
            let op = build_gradient_operator(inst.images.grid());
            let ctx = EnergyContext::new(
                &inst.images,
                &inst.lights,
                op,
                &inst.rho,
                1e-6,
                &inst.z0,
                None,
            )
            .unwrap();
            let exact = ctx.grad_f_exact(&inst.z);
            let dense =
                dense_full_gradient(&inst.images, &inst.lights, &inst.rho, &inst.z).unwrap();
            worst = worst.max(rel_linf(&exact, &dense));
            grids += 1;
        }
    }
    let ok = worst <= tol::ORACLE_REL;
    println!(
        "{} criterion 2: max relative error {worst:.3e} between blockwise and dense gradients \
         over {grids} grids up to 8x8 (tol {:.0e})",
        if ok { "PASS" } else { "FAIL" },
        tol::ORACLE_REL
    );
    assert!(ok, "dense-oracle mismatch {worst:.3e}");
}

#[test]
fn criterion_03_prox_satisfies_its_stationarity_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=128);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let z0: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let alpha_lambda = 10f64.powf(rng.gen_range(-8.0..1.0));
        let out = prox_anchor(&v, &z0, alpha_lambda);
        for j in 0..n {
            let residual = (1.0 + alpha_lambda) * out[j] - v[j] - alpha_lambda * z0[j];
            worst = worst.max(residual.abs());
        }
    }
    let ok = worst <= tol::PROX_IDENTITY;
    println!(
        "{} criterion 3: max |(1+αλ)·prox − v − αλ·z0| = {worst:.3e} over 100 random \
         instances (tol {:.0e})",
        if ok { "PASS" } else { "FAIL" },
        tol::PROX_IDENTITY
    );
    assert!(ok, "prox stationarity violated by {worst:.3e}");
}

#[test]
fn criterion_04_albedo_update_is_stationary_and_recovers_truth() {
    // FD optimality at every pixel on random 16x16 instances
    let mut worst_grad = 0.0f64;
    for seed in [0, 1, 2] {
        let inst = random_instance(16, 16, 6, seed);
        let grid = inst.images.grid();
        let op = build_gradient_operator(grid);
        let (updated, _) =
            albedo_update(&inst.images, &inst.lights, &op, &inst.z, &inst.rho, None);
        let f_of = |rho: &[f64]| -> f64 {
            let ctx = EnergyContext::new(
                &inst.images,
                &inst.lights,
                op,
                rho,
                0.0,
                &inst.z0,
                None,
            )
            .unwrap();
            ctx.eval_f(&inst.z)
        };
        let mut probe = updated.clone();
        for j in 0..grid.n() {
            let kept = probe[j];
            probe[j] = kept + tol::ALBEDO_FD_STEP;
            let plus = f_of(&probe);
            probe[j] = kept - tol::ALBEDO_FD_STEP;
            let minus = f_of(&probe);
            probe[j] = kept;
            worst_grad = worst_grad.max(((plus - minus) / (2.0 * tol::ALBEDO_FD_STEP)).abs());
        }
    }

    // noiseless recovery at the true depth
    let inst = noisy_instance(SceneKind::SphereCap, 16, 8, 0.0, 0);
    let op = build_gradient_operator(inst.grid);
    let start = AlbedoMap::constant(inst.grid, 0.5).unwrap();
    let (recovered, _) =
        albedo_update(&inst.images, &inst.lights, &op, &inst.depth_gt.z, &start.rho, None);
    let recovery = recovered
        .iter()
        .zip(&inst.albedo_gt.rho)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let ok = worst_grad <= tol::ALBEDO_GRAD && recovery <= tol::ALBEDO_RECOVERY;
    println!(
        "{} criterion 4: max |df/drho_j| = {worst_grad:.3e} at every pixel of 3 random 16x16 \
         instances (tol {:.0e}); noiseless recovery error {recovery:.3e} (tol {:.0e})",
        if ok { "PASS" } else { "FAIL" },
        tol::ALBEDO_GRAD,
        tol::ALBEDO_RECOVERY
    );
    assert!(worst_grad <= tol::ALBEDO_GRAD, "albedo update not stationary: {worst_grad:.3e}");
    assert!(recovery <= tol::ALBEDO_RECOVERY, "albedo recovery off by {recovery:.3e}");
}

/// Shared trace checks: slack of accepted pairs and the δ schedule per inner
/// loop. Returns (min slack, was δ monotone and ≥ c).
fn check_backtracking_contract(trace: &[InnerRecord], c: f64) -> (f64, bool) {
    let mut min_slack = f64::INFINITY;
    let mut delta_ok = true;
    let mut prev: Option<(usize, f64)> = None;
    for row in trace {
        if let Some(slack) = row.backtrack_slack {
            min_slack = min_slack.min(slack);
        }
        if row.delta < c {
            delta_ok = false;
        }
        if let Some((outer, delta)) = prev {
            if outer == row.outer && row.delta > delta {
                delta_ok = false;
            }
        }
        prev = Some((row.outer, row.delta));
    }
    (min_slack, delta_ok)
}

#[test]
fn criterion_05_backtracking_and_delta_schedule_hold_in_a_full_run() {
    let inst = noisy_instance(SceneKind::SphereCap, 16, 8, 0.01, 0);
    let (z0, rho0) = classic_init(&inst);
    let mut min_slack = f64::INFINITY;
    let mut delta_ok = true;
    let mut rows = 0;
    for mode in [GradientMode::Approx, GradientMode::Exact] {
        let config = SolverConfig { gradient_mode: mode, ..SolverConfig::default() };
        let result =
            alternating_solve(&inst.images, &inst.lights, &z0, &rho0, &config, None).unwrap();
        let (slack, ok) = check_backtracking_contract(&result.trace, config.c);
        min_slack = min_slack.min(slack);
        delta_ok &= ok;
        rows += result.trace.len();
    }
    let ok = min_slack >= tol::BACKTRACK_SLACK && delta_ok;
    println!(
        "{} criterion 5: min accepted slack {min_slack:.3e} over {rows} trace rows in both \
         gradient modes (floor {:.0e}); adaptive delta nonincreasing and >= c: {delta_ok}",
        if ok { "PASS" } else { "FAIL" },
        tol::BACKTRACK_SLACK
    );
    assert!(min_slack >= tol::BACKTRACK_SLACK, "slack {min_slack:.3e} below floor");
    assert!(delta_ok, "delta schedule violated");
}

#[test]
fn criterion_06_h_delta_descends_with_the_exact_gradient() {
    let inst = noisy_instance(SceneKind::SphereCap, 16, 8, 0.01, 0);
    let (z0, rho0) = classic_init(&inst);
    let config =
        SolverConfig { gradient_mode: GradientMode::Exact, ..SolverConfig::default() };
    let result =
        alternating_solve(&inst.images, &inst.lights, &z0, &rho0, &config, None).unwrap();
    let mut worst_rise = f64::NEG_INFINITY;
    let mut pairs = 0;
    for pair in result.trace.windows(2) {
        if pair[0].outer == pair[1].outer {
            worst_rise = worst_rise.max(pair[1].h_delta - pair[0].h_delta);
            pairs += 1;
        }
    }
    let ok = worst_rise <= tol::H_DELTA_DRIFT;
    println!(
        "{} criterion 6: max H_delta rise {worst_rise:.3e} over {pairs} consecutive inner \
         pairs, 16x16 sigma 0.01 seed 0, exact gradient (tol {:.0e})",
        if ok { "PASS" } else { "FAIL" },
        tol::H_DELTA_DRIFT
    );
    assert!(ok, "H_delta rose by {worst_rise:.3e}");
}

#[test]
fn criterion_07_refinement_beats_the_pointwise_baseline_end_to_end() {
    let start = Instant::now();
    let mut all_objectives_fell = true;
    let mut report = String::new();
    let mut counts = Vec::new();
    for kind in [SceneKind::SphereCap, SceneKind::GaussianBump] {
        let mut improved = 0;
        let mut runs = 0;
        for sigma in [0.005, 0.01, 0.02] {
            for seed in 0..5u64 {
                let inst = noisy_instance(kind, 32, 8, sigma, seed);
                let pointwise =
                    estimate_normals_albedo(&inst.images, &inst.lights).unwrap();
                let op = build_gradient_operator(inst.grid);
                let z0 = integrate_normals(&pointwise.normals, &op).unwrap();
                let gt_normals = normals_from_depth(&inst.depth_gt, &op);
                let classic_mae = mean_angular_error(&pointwise.normals, &gt_normals);

                let config = SolverConfig::default();
                let init_ctx = EnergyContext::new(
                    &inst.images,
                    &inst.lights,
                    op,
                    &pointwise.albedo.rho,
                    config.lambda,
                    &z0.z,
                    None,
                )
                .unwrap();
                let initial_objective = init_ctx.eval_objective(&z0.z);
                let result = alternating_solve(
                    &inst.images,
                    &inst.lights,
                    &z0,
                    &pointwise.albedo,
                    &config,
                    None,
                )
                .unwrap();
                let refined_mae =
                    mean_angular_error(&normals_from_depth(&result.depth, &op), &gt_normals);
                if refined_mae <= classic_mae {
                    improved += 1;
                }
                if result.final_objective >= initial_objective {
                    all_objectives_fell = false;
                }
                runs += 1;
            }
        }
        report += &format!(" {kind:?}: {improved}/{runs} improved;");
        counts.push((kind, improved, runs));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let enough = counts.iter().all(|&(_, improved, _)| improved >= tol::IMPROVED_RUNS_MIN);
    let ok = enough && all_objectives_fell && elapsed < tol::E2E_BUDGET_S;
    println!(
        "{} criterion 7:{report} objective fell in all runs: {all_objectives_fell}; \
         {elapsed:.1}s (budget {:.0}s)",
        if ok { "PASS" } else { "FAIL" },
        tol::E2E_BUDGET_S
    );
    for (kind, improved, runs) in counts {
        assert!(
            improved >= tol::IMPROVED_RUNS_MIN,
            "{kind:?}: only {improved}/{runs} runs improved on the baseline"
        );
    }
    assert!(all_objectives_fell, "some run failed to lower f+g");
    assert!(elapsed < tol::E2E_BUDGET_S, "took {elapsed:.1}s");
}

#[test]
fn criterion_08_perfect_data_is_a_fixed_point_of_the_alternation() {
    let inst = noisy_instance(SceneKind::SphereCap, 16, 8, 0.0, 0);
    let mut worst_dz = 0.0f64;
    let mut worst_drho = 0.0f64;
    let mut max_outers = 0;
    for mode in [GradientMode::Approx, GradientMode::Exact] {
        let config = SolverConfig { gradient_mode: mode, ..SolverConfig::default() };
        let result = alternating_solve(
            &inst.images,
            &inst.lights,
            &inst.depth_gt,
            &inst.albedo_gt,
            &config,
            None,
        )
        .unwrap();
        worst_dz = worst_dz.max(
            result
                .depth
                .z
                .iter()
                .zip(&inst.depth_gt.z)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
        worst_drho = worst_drho.max(
            result
                .albedo
                .rho
                .iter()
                .zip(&inst.albedo_gt.rho)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
        max_outers = max_outers.max(result.outer_iters);
    }
    let ok = worst_dz <= tol::FIXED_POINT && worst_drho <= tol::FIXED_POINT && max_outers == 1;
    println!(
        "{} criterion 8: ground-truth start on noiseless data moved depth {worst_dz:.3e} and \
         albedo {worst_drho:.3e} (tol {:.0e}), {max_outers} outer iteration(s)",
        if ok { "PASS" } else { "FAIL" },
        tol::FIXED_POINT
    );
    assert!(worst_dz <= tol::FIXED_POINT, "depth drifted {worst_dz:.3e}");
    assert!(worst_drho <= tol::FIXED_POINT, "albedo drifted {worst_drho:.3e}");
    assert_eq!(max_outers, 1, "expected a single outer iteration");
}

#[test]
fn criterion_09_approximate_gradient_is_materially_faster() {
    let inst = noisy_instance(SceneKind::SphereCap, 64, 20, 0.01, 0);
    let op = build_gradient_operator(inst.grid);
    let ctx = EnergyContext::new(
        &inst.images,
        &inst.lights,
        op,
        &inst.albedo_gt.rho,
        1e-6,
        &inst.depth_gt.z,
        None,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z: Vec<f64> =
        inst.depth_gt.z.iter().map(|&v| v + rng.gen_range(-0.05..0.05)).collect();

    // warm both paths, then time 100 evaluations each
    let mut sink = 0.0;
    for _ in 0..3 {
        sink += ctx.grad_f_approx(&z)[0] + ctx.grad_f_exact(&z)[0];
    }
    let evals = 100;
    let t_approx = Instant::now();
    for _ in 0..evals {
        sink += ctx.grad_f_approx(&z)[0];
    }
    let approx_mean = t_approx.elapsed().as_secs_f64() / evals as f64;
    let t_exact = Instant::now();
    for _ in 0..evals {
        sink += ctx.grad_f_exact(&z)[0];
    }
    let exact_mean = t_exact.elapsed().as_secs_f64() / evals as f64;
    assert!(sink.is_finite());

    let ratio = exact_mean / approx_mean;
    let ok = ratio >= tol::SPEEDUP_MIN;
    println!(
        "{} criterion 9: 64x64, 20 images, mean over {evals} evaluations: approximate \
         {:.3e}s, exact {:.3e}s, speedup {ratio:.1}x (required {:.0}x)",
        if ok { "PASS" } else { "FAIL" },
        approx_mean,
        exact_mean,
        tol::SPEEDUP_MIN
    );
    assert!(ok, "speedup only {ratio:.2}x");
}

#[test]
fn criterion_10_sampled_quotients_stay_below_the_analytic_constants() {
    let mut worst_q = 0.0f64;
    let mut worst_grad = 0.0f64;
    let mut total_pairs = 0;
    let mut l_q = 0.0;
    let mut l_grad_f = 0.0;
    for seed in 0..10u64 {
        let inst = noisy_instance(SceneKind::SphereCap, 16, 8, 0.01, seed);
        let op = build_gradient_operator(inst.grid);
        let caps = GradientCaps::uniform_from_reference(&op, &inst.depth_gt.z, 1.5).unwrap();
        let report =
            lipschitz_report(&inst.images, &inst.lights, &op, &inst.albedo_gt.rho, &caps)
                .unwrap();
        let ctx = EnergyContext::new(
            &inst.images,
            &inst.lights,
            op,
            &inst.albedo_gt.rho,
            1e-6,
            &inst.depth_gt.z,
            None,
        )
        .unwrap();
        let emp = empirical_lipschitz(&ctx, &caps, 100, seed);
        worst_q = worst_q.max(emp.max_frozen / report.l_q);
        worst_grad = worst_grad.max(emp.max_full / report.l_grad_f);
        total_pairs += emp.pairs;
        l_q = report.l_q;
        l_grad_f = report.l_grad_f;
    }
    let ok = worst_q <= 1.0 && worst_grad <= 1.0 && total_pairs >= 1000;
    println!(
        "{} criterion 10: {total_pairs} capped difference quotients; worst fractions \
         {worst_q:.3} of L_q = {l_q:.3e} and {worst_grad:.3} of L_grad_f = {l_grad_f:.3e}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(worst_q <= 1.0, "a frozen-map quotient exceeded L_q by {worst_q:.3}x");
    assert!(worst_grad <= 1.0, "a gradient quotient exceeded L_grad_f by {worst_grad:.3}x");
    assert!(total_pairs >= 1000, "only {total_pairs} sampled pairs");
}

#[test]
fn criterion_11_classic_baseline_is_exact_on_noiseless_scenes() {
    let mut worst_mae = 0.0f64;
    let mut worst_rms = 0.0f64;
    for kind in [SceneKind::Plane, SceneKind::GaussianBump, SceneKind::SphereCap] {
        let inst = noisy_instance(kind, 24, 8, 0.0, 0);
        let op = build_gradient_operator(inst.grid);
        let pointwise = estimate_normals_albedo(&inst.images, &inst.lights).unwrap();
        let gt_normals = normals_from_depth(&inst.depth_gt, &op);
        worst_mae = worst_mae.max(mean_angular_error(&pointwise.normals, &gt_normals));
        let z = integrate_normals(&pointwise.normals, &op).unwrap();
        worst_rms = worst_rms.max(rms_after_mean_alignment(&z.z, &inst.depth_gt.z));
    }
    let ok = worst_mae <= tol::CLASSIC_MAE_DEG && worst_rms <= tol::CLASSIC_RMS;
    println!(
        "{} criterion 11: noiseless round trip over three scene kinds: MAE {worst_mae:.3e} \
         degrees (tol {:.0e}), aligned RMS depth error {worst_rms:.3e} (tol {:.0e})",
        if ok { "PASS" } else { "FAIL" },
        tol::CLASSIC_MAE_DEG,
        tol::CLASSIC_RMS
    );
    assert!(worst_mae <= tol::CLASSIC_MAE_DEG, "MAE {worst_mae:.3e}");
    assert!(worst_rms <= tol::CLASSIC_RMS, "RMS {worst_rms:.3e}");
}

#[test]
fn criterion_12_recorded_traces_respect_the_convergence_preconditions() {
    let inst = noisy_instance(SceneKind::GaussianBump, 16, 8, 0.01, 2);
    let (z0, rho0) = classic_init(&inst);
    let mut rows = 0;
    let mut min_objective = f64::INFINITY;
    let mut betas_ok = true;
    let mut alphas_ok = true;
    for beta_mode in [BetaMode::Adaptive, BetaMode::Constant] {
        for gradient_mode in [GradientMode::Approx, GradientMode::Exact] {
            let config = SolverConfig { beta_mode, gradient_mode, ..SolverConfig::default() };
            let result =
                alternating_solve(&inst.images, &inst.lights, &z0, &rho0, &config, None)
                    .unwrap();
            for row in &result.trace {
                min_objective = min_objective.min(row.f_plus_g);
                if let Some(beta) = row.beta {
                    betas_ok &= (0.0..1.0).contains(&beta);
                }
                if let Some(alpha) = row.alpha {
                    alphas_ok &= alpha > 0.0;
                }
                rows += 1;
            }
        }
    }
    let ok = min_objective >= 0.0 && betas_ok && alphas_ok;
    println!(
        "{} criterion 12: {rows} trace rows over four solver configurations: min f+g \
         {min_objective:.3e} (>= 0), every beta in [0,1): {betas_ok}, every alpha > 0: \
         {alphas_ok}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(min_objective >= 0.0, "objective went negative: {min_objective}");
    assert!(betas_ok, "a recorded beta left [0, 1)");
    assert!(alphas_ok, "a recorded alpha was not positive");
}
