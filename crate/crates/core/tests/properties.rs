use mvreins_core::beliefs::{ClaimDistribution, DistortionFunction, LikelihoodRatio, ReinsurerBelief};
use mvreins_core::hjb::solve_value_odes;
use mvreins_core::indemnity::{check_class_c, IndemnityFunction, Piecewise, Segment, SegmentKind};
use mvreins_core::objective::{lagrangian_g, lemma_l, objective_h, H_MULTIPLIER};
use mvreins_core::oracle::{discretize, oracle_solve, solve_qp, QpOptions};
use mvreins_core::partition::{classify_partition, MarketParams};
use mvreins_core::simulate::{estimate_objective, Schedule, SimConfig, Simulator};
use mvreins_core::solver::{
    solve_equilibrium, solve_exponential, solve_general, solve_homogeneous, solve_static, uniform_times, Method, Problem,
    SolveOptions,
};
use proptest::prelude::*;

fn market(gamma: f64, theta: f64, r: f64, premium_rate: f64) -> MarketParams {
    MarketParams { gamma, theta, r, horizon: 10.0, premium_rate, initial_surplus: 10.0 }
}

fn exponential_problem(p: f64, q: f64, mkt: MarketParams) -> Problem {
    let lr = LikelihoodRatio::exponential(p, q).unwrap();
    Problem::new(ClaimDistribution::exponential(p).unwrap(), ReinsurerBelief::from_lr(lr), mkt).unwrap()
}

fn grid(hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| hi * i as f64 / n as f64).collect()
}

/// Composite Simpson on `[0, hi]` with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, hi: f64, n: usize) -> f64 {
    let h = hi / n as f64;
    let mut s = f(0.0) + f(hi);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

/// Piecewise-linear member of class C with slopes in {0, 1}.
fn step_contract(t: f64, cuts: &[f64], full: &[bool]) -> IndemnityFunction {
    let mut bounds: Vec<f64> = cuts.to_vec();
    bounds.sort_by(f64::total_cmp);
    bounds.dedup();
    let mut edges = vec![0.0];
    edges.extend(bounds.into_iter().filter(|&c| c > 1e-6));
    edges.push(f64::INFINITY);
    let mut anchor = 0.0;
    let mut segments = Vec::new();
    for (i, w) in edges.windows(2).enumerate() {
        let kind = if full[i % full.len()] { SegmentKind::Full } else { SegmentKind::Flat };
        segments.push(Segment { lo: w[0], hi: w[1], kind, anchor, lambda: None });
        if kind == SegmentKind::Full && w[1].is_finite() {
            anchor += w[1] - w[0];
        }
    }
    IndemnityFunction::from_piecewise(Piecewise { t, segments, curve: None }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn survival_integrates_to_moments(scale in 0.2f64..5.0, shape in 1.0f64..3.0, atom in 0.0f64..0.5, weibull in any::<bool>()) {
        let base = if weibull { ClaimDistribution::weibull(scale, shape) } else { ClaimDistribution::exponential(scale) }.unwrap();
        let dist = if atom > 0.0 { base.with_atom_at_zero(atom).unwrap() } else { base };
        let hi = dist.tail_truncation();
        let first = simpson(|y| dist.survival(y), hi, 20_000);
        let second = simpson(|y| 2.0 * y * dist.survival(y), hi, 20_000);
        prop_assert!((first - dist.mean()).abs() <= 1e-6 * dist.mean().max(1.0));
        prop_assert!((second - dist.second_moment()).abs() <= 1e-6 * dist.second_moment().max(1.0));
    }

    #[test]
    fn exponential_ratio_slope_has_one_sign(p in 0.2f64..5.0, q in 0.2f64..5.0) {
        let lr = LikelihoodRatio::exponential(p, q).unwrap();
        let expected = (q - p).signum();
        for y in grid(30.0, 300) {
            let d = lr.derivative(y);
            let ok = if (q - p).abs() < 1e-12 { d == 0.0 } else { d.signum() == expected };
            prop_assert!(ok);
        }
    }

    #[test]
    fn flagged_distortions_are_midpoint_convex(exponent in 0.2f64..4.0, alpha in 0.01f64..0.99) {
        let us = grid(1.0, 200);
        let candidates = [
            DistortionFunction::identity(),
            DistortionFunction::power(exponent).unwrap(),
            DistortionFunction::expected_shortfall(alpha).unwrap(),
            DistortionFunction::value_at_risk(alpha).unwrap(),
        ];
        for g in candidates {
            prop_assert_eq!(g.eval(0.0), 0.0);
            prop_assert_eq!(g.eval(1.0), 1.0);
            prop_assert!(us.windows(2).all(|w| g.eval(w[0]) <= g.eval(w[1])));
            if !g.is_convex() {
                continue;
            }
            for (i, &u) in us.iter().enumerate() {
                for &v in us.iter().skip(i).step_by(7) {
                    prop_assert!(g.eval(0.5 * (u + v)) <= 0.5 * (g.eval(u) + g.eval(v)) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn expected_shortfall_dominates_value_at_risk(scale in 0.2f64..5.0, shape in 1.0f64..3.0, alpha in 0.001f64..0.999) {
        for dist in [ClaimDistribution::exponential(scale).unwrap(), ClaimDistribution::weibull(scale, shape).unwrap()] {
            prop_assert!(dist.es_alpha(alpha).unwrap() >= dist.var_alpha(alpha).unwrap());
        }
    }

    #[test]
    fn labels_move_towards_decreasing_as_time_advances(p in 0.3f64..3.0, q in 0.3f64..3.0, gamma in 0.1f64..2.0, theta in 0.05f64..1.0) {
        let mkt = market(gamma, theta, 0.1, 100.0);
        let lr = LikelihoodRatio::exponential(p, q).unwrap();
        let times = uniform_times(0.0, 10.0, 21);
        let partitions: Vec<_> = times.iter().map(|&t| classify_partition(&lr, &mkt, t, 60.0).unwrap()).collect();
        for part in &partitions {
            let iv = &part.intervals;
            prop_assert_eq!(iv[0].lo, 0.0);
            prop_assert!(iv.last().unwrap().hi.is_infinite());
            prop_assert!(iv.windows(2).all(|w| w[0].hi == w[1].lo && w[0].lo < w[0].hi));
        }
        for y in grid(60.0, 120) {
            let labels: Vec<u8> = partitions.iter().map(|p| p.label_at(y).label()).collect();
            // once decreasing (3), never back to moderate (2)
            prop_assert!(labels.windows(2).all(|w| !(w[0] == 3 && w[1] == 2)), "{:?}", labels);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solver_outputs_are_incentive_compatible(p in 0.3f64..3.0, q in 0.3f64..3.0, gamma in 0.1f64..2.0, theta in 0.05f64..1.0, t in 0.0f64..10.0) {
        let prob = exponential_problem(p, q, market(gamma, theta, 0.1, 4.0 * p));
        let opts = SolveOptions { residual_grid: 0, ..Default::default() };
        let sol = solve_static(&prob, Method::Auto, t, &opts).unwrap();
        prop_assert_eq!(check_class_c(|y| sol.indemnity.eval(y), &grid(prob.y_max, 10_000)), None);
    }

    #[test]
    fn objective_is_convex(theta in 0.05f64..1.0, gamma in 0.1f64..2.0, mu in 0.05f64..0.95, seed in any::<u64>()) {
        let prob = exponential_problem(1.5, 2.0, market(gamma, theta, 0.1, 4.0));
        let d = discretize(&prob, 5.0, 64).unwrap();
        let mut state = seed | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let q1: Vec<f64> = (0..64).map(|_| next()).collect();
        let q2: Vec<f64> = (0..64).map(|_| next()).collect();
        let mix: Vec<f64> = q1.iter().zip(&q2).map(|(a, b)| mu * a + (1.0 - mu) * b).collect();
        let (h1, h2, hm) = (d.evaluate(&q1, None), d.evaluate(&q2, None), d.evaluate(&mix, None));
        prop_assert!(hm < mu * h1 + (1.0 - mu) * h2);
    }

    #[test]
    fn lemma_derivative_identity(cut_a in 0.1f64..3.0, cut_b in 3.0f64..8.0, s in 0.2f64..10.0, lambda in 0.5f64..1.5) {
        let (p, q) = (1.5, 2.0);
        let mkt = market(0.5, 0.35, 0.1, 4.0);
        let prob = exponential_problem(p, q, mkt);
        let t = 5.0;
        let f = IndemnityFunction::layer(t, cut_a, cut_b).unwrap();
        let k = mkt.risk_weight(t);
        let h = 1e-5;
        let fd = (lemma_l(&prob, t, f.piecewise(), lambda, s + h).unwrap() - lemma_l(&prob, t, f.piecewise(), lambda, s - h).unwrap()) / (2.0 * h);
        let lr = prob.belief.lr().value(s);
        let exact = (lambda + k * s - k * f.eval(s) - mkt.loading() * lr) * prob.dist.density(s);
        prop_assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1e-3), "{} vs {}", fd, exact);
    }

    #[test]
    fn general_optimum_beats_random_contracts(cuts in prop::collection::vec(0.0f64..20.0, 1..6), full in prop::collection::vec(any::<bool>(), 1..6)) {
        let mkt = market(0.5, 0.35, 0.1, 4.0);
        let prob = exponential_problem(1.5, 2.0, mkt);
        let t = 5.0;
        let best = solve_general(&prob, t, &SolveOptions { residual_grid: 0, ..Default::default() }).unwrap();
        let other = step_contract(t, &cuts, &full);
        let g_best = lagrangian_g(&prob, t, best.indemnity.piecewise(), H_MULTIPLIER).unwrap();
        let g_other = lagrangian_g(&prob, t, other.piecewise(), H_MULTIPLIER).unwrap();
        prop_assert!(g_best <= g_other + 1e-9);
    }
}

#[test]
fn closed_form_and_general_paths_agree() {
    let cases = [(2.0, 1.0, 1.0, 0.35, 3.0), (0.5, 1.0, 0.1, 0.05, 1.0), (1.5, 2.0, 0.5, 0.35, 2.0)];
    for (p, q, gamma, theta, c) in cases {
        let mkt = market(gamma, theta, 0.1, c);
        let prob = exponential_problem(p, q, mkt);
        for t in [1.0, 5.0, 9.0] {
            let opts = SolveOptions { residual_grid: 0, ..Default::default() };
            let closed = solve_exponential(p, q, &mkt, t, &opts).unwrap();
            let general = solve_general(&prob, t, &opts).unwrap();
            assert!((closed.h - general.h).abs() <= 1e-6, "({p}, {q}) t={t}: {} vs {}", closed.h, general.h);
            for y in grid(prob.y_max, 2000) {
                assert!((closed.indemnity.eval(y) - general.indemnity.eval(y)).abs() <= 1e-3, "({p}, {q}) t={t} y={y}");
            }
        }
    }
}

#[test]
fn homogeneous_deductible_increases_in_time() {
    let mkt = market(1.0, 0.2, 0.1, 2.0);
    let ds: Vec<f64> = uniform_times(0.0, 10.0, 101).iter().map(|&t| solve_homogeneous(&mkt, t).0).collect();
    assert!(ds.windows(2).all(|w| w[1] > w[0]));
    let flat = market(1.0, 0.2, 0.0, 2.0);
    assert!(uniform_times(0.0, 10.0, 11).iter().all(|&t| solve_homogeneous(&flat, t).0 == 0.2));
}

#[test]
fn convex_distortion_deductible_increases_in_time() {
    let dist = ClaimDistribution::exponential(1.0).unwrap();
    let belief = ReinsurerBelief::from_distortion(&dist, DistortionFunction::power(1.5).unwrap()).unwrap();
    let prob = Problem::new(dist, belief, market(1.0, 0.2, 0.1, 3.0)).unwrap();
    let opts = SolveOptions { residual_grid: 0, ..Default::default() };
    let ds: Vec<f64> = uniform_times(0.0, 10.0, 21)
        .iter()
        .map(|&t| solve_static(&prob, Method::ConvexDistortion, t, &opts).unwrap().params.d.unwrap())
        .collect();
    assert!(ds.windows(2).all(|w| w[1] >= w[0]), "{ds:?}");
}

#[test]
fn oracle_refinement_is_monotone() {
    let prob = exponential_problem(1.5, 2.0, market(0.5, 0.35, 0.1, 2.0));
    let hs: Vec<f64> = [500, 1000, 2000].iter().map(|&n| oracle_solve(&prob, 5.0, n).unwrap().h).collect();
    assert!(hs[0] >= hs[1] - 1e-6 && hs[1] >= hs[2] - 1e-6, "{hs:?}");
    let sol = oracle_solve(&prob, 5.0, 500).unwrap();
    assert!(sol.marginal.slopes.iter().all(|&q| (0.0..=1.0).contains(&q)));
    assert_eq!(check_class_c(|y| sol.marginal.eval(y), &sol.marginal.grid), None);
}

#[test]
fn oracle_descent_is_monotone() {
    let prob = exponential_problem(2.0, 1.0, market(1.0, 0.35, 0.1, 3.0));
    let d = discretize(&prob, 5.0, 400).unwrap();
    let sol = solve_qp(&d, &QpOptions { record_trace: true, ..Default::default() }).unwrap();
    assert!(sol.converged);
    assert!(sol.trace.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn value_functions_vanish_at_maturity() {
    let prob = exponential_problem(2.0, 1.0, market(1.0, 0.35, 0.1, 3.0));
    let opts = SolveOptions { residual_grid: 0, ..Default::default() };
    let sol = solve_equilibrium(&prob, Method::Auto, &uniform_times(0.0, 10.0, 101), &opts).unwrap();
    let v = solve_value_odes(&sol, &prob.market).unwrap();
    assert_eq!(*v.big_m.last().unwrap(), 0.0);
    assert_eq!(*v.small_m.last().unwrap(), 0.0);
    assert_eq!(v.value(10.0, 7.0), 7.0);
    assert_eq!(v.expected_wealth(10.0, 7.0), 7.0);
}

#[test]
fn paths_do_not_depend_on_worker_split() {
    let prob = exponential_problem(2.0, 1.0, market(1.0, 0.35, 0.1, 3.0));
    let schedule = Schedule::constant(&prob, IndemnityFunction::excess_of_loss(0.0, 0.5)).unwrap();
    let sim = Simulator::new(&prob, schedule, 2.0).unwrap();
    let cfg = SimConfig { t0: 2.0, x0: 1.0, paths: 4000, seed: 99 };
    let serial: Vec<f64> = (0..4000).map(|i| sim.path(&cfg, i)).collect();
    let split: Vec<f64> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..4u64).map(|w| {
            let sim = &sim;
            s.spawn(move || (w * 1000..(w + 1) * 1000).rev().map(|i| (i, sim.path(&cfg, i))).collect::<Vec<_>>())
        }).collect();
        let mut all: Vec<(u64, f64)> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        all.sort_by_key(|p| p.0);
        all.into_iter().map(|p| p.1).collect()
    });
    assert_eq!(serial, split);
}

#[test]
fn no_cover_drift_matches_net_profit() {
    let dist = ClaimDistribution::exponential(1.0).unwrap();
    let mkt = market(1.0, 0.2, 0.0, 1.5);
    let prob = Problem::new(dist, ReinsurerBelief::homogeneous(), mkt).unwrap();
    let (t0, x0) = (4.0, 2.0);
    let sim = Simulator::new(&prob, Schedule::constant(&prob, IndemnityFunction::zero(0.0)).unwrap(), t0).unwrap();
    let cfg = SimConfig { t0, x0, paths: 200_000, seed: 5 };
    let gains: Vec<f64> = (0..cfg.paths as u64).map(|i| sim.path(&cfg, i) - x0).collect();
    let est = estimate_objective(&gains, 1.0).unwrap();
    let expected = (1.5 - 1.0) * (10.0 - t0);
    assert!((est.mean - expected).abs() <= 3.0 * est.se_mean, "{} vs {expected} (se {})", est.mean, est.se_mean);
}

#[test]
fn general_solution_reports_its_own_objective() {
    let prob = exponential_problem(1.5, 2.0, market(0.5, 0.35, 0.1, 2.0));
    let opts = SolveOptions { residual_grid: 0, ..Default::default() };
    let sol = solve_general(&prob, 5.0, &opts).unwrap();
    let h = objective_h(&prob, 5.0, sol.indemnity.piecewise()).unwrap();
    assert!((h - sol.h).abs() <= 1e-12);
}
