use std::time::{Duration, Instant};

use gsot_core::data::{gen_synthetic, instance_from_samples, InstanceOptions};
use gsot_core::screening::upper_bound_pass;
use gsot_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synthetic(classes: usize, per_class: usize, normalize_cost: bool) -> ProblemInstance {
    let (s, t) = gen_synthetic(classes, per_class, 1).unwrap();
    instance_from_samples(&s, &t, InstanceOptions { normalize_cost, ..Default::default() }).unwrap()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn every_mode_follows_the_baseline_trajectory_bitwise() {
    for normalize in [false, true] {
        let inst = synthetic(6, 5, normalize);
        for (gamma, rho) in [(10.0, 0.4), (0.1, 0.8), (0.01, 0.2)] {
            let p = params_from_rho(gamma, rho).unwrap();
            let o = SolverOptions { max_outer_loops: 30, ..Default::default() };
            let base = solve_baseline(&inst, &p, &o).unwrap();
            for mode in [SolverMode::Fast, SolverMode::FastNoLowerBound, SolverMode::Audit] {
                let s = solve(&inst, &p, &o.with_mode(mode)).unwrap();
                assert_eq!(bits(&s.trace), bits(&base.trace), "{mode:?} gamma={gamma} rho={rho}");
                assert_eq!(bits(&s.state.alpha), bits(&base.state.alpha));
                assert_eq!(bits(&s.state.beta), bits(&base.state.beta));
                assert_eq!(bits(s.plan.plan.as_slice()), bits(base.plan.plan.as_slice()));
                assert_eq!(s.iterations, base.iterations);
                assert_eq!(s.termination, base.termination);
            }
        }
    }
}

#[test]
fn counters_account_for_every_block_of_every_call() {
    let inst = synthetic(5, 4, true);
    let blocks = (inst.num_groups() * inst.n()) as u64;
    let p = params_from_rho(0.1, 0.6).unwrap();
    for mode in [SolverMode::Baseline, SolverMode::Fast, SolverMode::FastNoLowerBound] {
        let s = solve(&inst, &p, &SolverOptions::default().with_mode(mode)).unwrap();
        let st = &s.stats;
        assert_eq!(st.blocks_in_active_set + st.blocks_skipped + st.blocks_unskipped, blocks * st.gradient_calls);
        assert_eq!(st.history.len() as u64, st.gradient_calls);
        for c in &st.history {
            assert_eq!(c.in_active + c.skipped + c.unskipped, blocks);
            assert_eq!(c.upper_bounds, c.skipped + c.unskipped);
        }
        match mode {
            SolverMode::Baseline => assert_eq!(st.upper_bounds_evaluated, 0),
            SolverMode::FastNoLowerBound => assert_eq!(st.blocks_in_active_set, 0),
            _ => assert!(st.blocks_skipped > 0),
        }
    }
}

#[test]
fn accepted_iterates_never_lower_the_objective() {
    let inst = synthetic(4, 5, false);
    let s = solve_fast(&inst, &params_from_rho(1.0, 0.5).unwrap(), &SolverOptions::default()).unwrap();
    assert!(s.trace.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(s.trace.len(), s.iterations + 1);
}

// With gamma <= 1 the plan is already class-block-diagonal at every rho, the
// sparsest a plan with no empty column can be, so the trend is checked where
// it is not saturated.
#[test]
fn group_sparsity_increases_with_rho() {
    let inst = synthetic(10, 10, true);
    for gamma in [1e3, 1e2, 1e1] {
        let sparsity: Vec<f64> = [0.2, 0.4, 0.6, 0.8]
            .iter()
            .map(|&rho| {
                let s = solve_fast(&inst, &params_from_rho(gamma, rho).unwrap(), &SolverOptions::default()).unwrap();
                assert!(s.converged);
                plan_diagnostics(&s.plan, &inst).unwrap().group_sparsity
            })
            .collect();
        assert!(sparsity.windows(2).all(|w| w[1] > w[0]), "gamma={gamma}: {sparsity:?}");
    }
}

#[test]
fn converged_plan_is_nearly_feasible() {
    let inst = synthetic(5, 5, true);
    let s = solve_fast(&inst, &params_from_rho(0.1, 0.5).unwrap(), &SolverOptions::default()).unwrap();
    assert!(s.converged);
    let d = plan_diagnostics(&s.plan, &inst).unwrap();
    // The marginal residuals are exactly the dual gradient.
    assert!(d.marginal_res_a <= 1e-6 && d.marginal_res_b <= 1e-6);
    assert!((d.mass - 1.0).abs() < 1e-5);
    assert!(d.group_sparsity > 0.0 && d.group_sparsity < 1.0);
}

fn pass_time_per_pair(classes: usize, per_class: usize) -> f64 {
    let inst = synthetic(classes, per_class, true);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut state = || DualState {
        alpha: (0..inst.m()).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        beta: (0..inst.n()).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    };
    let (old, now) = (state(), state());
    let snap = take_snapshot(&old, &inst, 0).unwrap();
    let pairs = inst.num_groups() * inst.n();
    let reps = (1_000_000 / pairs).max(1);
    let mut best = Duration::MAX;
    let mut sink = 0;
    for _ in 0..7 {
        let t0 = Instant::now();
        for _ in 0..reps {
            let d = BoundDeltas::new(&now.alpha, &now.beta, &snap, &inst.groups);
            sink += upper_bound_pass(&snap, &d, 0.05);
        }
        best = best.min(t0.elapsed() / reps as u32);
    }
    assert!(sink > 0 || pairs > 0);
    best.as_secs_f64() / pairs as f64
}

#[test]
fn bound_pass_cost_per_block_does_not_depend_on_group_size() {
    let base = pass_time_per_pair(8, 10);
    for g in [40, 160] {
        let r = pass_time_per_pair(8, g) / base;
        assert!(r <= 2.0, "g={g}: per-pair time ratio {r}");
    }
}

#[test]
fn audit_catches_an_upper_bound_lowered_by_a_tenth() {
    let inst = synthetic(10, 10, true);
    let p = params_from_rho(0.1, 0.8).unwrap();
    let cfg = ScreeningConfig { use_lower_bound: true, audit: true, upper_bound_shift: -0.1 };
    match solve_screened(&inst, &p, &SolverOptions::default(), cfg) {
        Err(Error::AuditViolation(v)) => assert_eq!(v.kind, ViolationKind::UnsafeSkip),
        other => panic!("expected an unsafe skip, got {:?}", other.map(|(s, r)| (s.objective, r))),
    }
    let clean = ScreeningConfig { upper_bound_shift: 0.0, ..cfg };
    let (_, report) = solve_screened(&inst, &p, &SolverOptions::default(), clean).unwrap();
    assert_eq!(report.violations, 0);
}
