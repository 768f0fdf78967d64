use std::ops::ControlFlow;

use impdiff_core::estimators::{
    finite_state_implicit_gradient, gamma_ref, gamma_reward, FiniteStateProblem, RewardCovariance, RewardSpec,
};
use impdiff_core::optimizers::{
    run_implicit_finite_queue, run_implicit_infinite, run_nested_loop, ImplicitOptions, InitialDistribution,
    StepView, ThetaStep,
};
use impdiff_core::oracles::diffusion1d_theta_path;
use impdiff_core::potentials::{stationary_quadrature, MixturePotential, Potential, WeightParam};
use impdiff_core::samplers::{integrate_sde, DiffusionDrift, LangevinSampler};
use impdiff_core::{gaussian_ensemble, schedule_values, ParamVector, ParticleEnsemble, RngStream, StepSchedule};
use proptest::prelude::*;

fn ensemble(points: &[(f64, f64)]) -> ParticleEnsemble {
    let data: Vec<f64> = points.iter().flat_map(|&(a, b)| [a, b]).collect();
    ParticleEnsemble::new(2, data).unwrap()
}

fn bounded_reward() -> RewardSpec {
    RewardSpec::new(|x: &[f64]| (x[0] * 1.3 - x[1]).sin())
}

fn theta6() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0..4.0f64, 6)
}

fn cloud(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixture_gradients_match_central_differences(x in (-4.0..4.0f64, -4.0..4.0f64), theta in theta6()) {
        for weights in [WeightParam::Softmax, WeightParam::ShiftedLogistic { eta: 0.3 }] {
            let pot = MixturePotential::hexagon(2.0, weights).unwrap();
            let x = [x.0, x.1];
            let mut gx = [0.0; 2];
            let mut gt = [0.0; 6];
            pot.grad_x_into(&x, &theta, &mut gx);
            pot.grad_theta_into(&x, &theta, &mut gt);
            let h = 1e-5;
            for a in 0..2 {
                let (mut p, mut m) = (x, x);
                p[a] += h;
                m[a] -= h;
                let fd = (pot.value(&p, &theta) - pot.value(&m, &theta)) / (2.0 * h);
                prop_assert!((fd - gx[a]).abs() <= 1e-5 * (1.0 + gx[a].abs()), "x{a}: {fd} vs {}", gx[a]);
            }
            for j in 0..6 {
                let (mut p, mut m) = (theta.clone(), theta.clone());
                p[j] += h;
                m[j] -= h;
                let fd = (pot.value(&x, &p) - pot.value(&x, &m)) / (2.0 * h);
                prop_assert!((fd - gt[j]).abs() <= 1e-5 * (1.0 + gt[j].abs()), "θ{j}: {fd} vs {}", gt[j]);
            }
        }
    }

    #[test]
    fn estimates_are_bounded_for_shifted_logistic(
        eta in 0.05..0.9f64,
        theta in theta6(),
        a in cloud(2..40),
        b in cloud(1..40),
    ) {
        let pot = MixturePotential::hexagon(2.0, WeightParam::ShiftedLogistic { eta }).unwrap();
        let (ea, eb) = (ensemble(&a), ensemble(&b));
        let bound = 2.0 / eta + 1e-12;
        let g = gamma_reward(&ea, &theta, &pot, &bounded_reward()).unwrap();
        prop_assert!(g.iter().all(|v| v.abs() <= bound), "{g:?}");
        let g = gamma_ref(&ea, &eb, &theta, &pot).unwrap();
        prop_assert!(g.iter().all(|v| v.abs() <= bound), "{g:?}");
    }

    #[test]
    fn reward_covariance_ignores_constant_shift(theta in theta6(), a in cloud(2..50), c in -50.0..50.0f64) {
        let pot = MixturePotential::hexagon(2.0, WeightParam::Softmax).unwrap();
        let e = ensemble(&a);
        let base = gamma_reward(&e, &theta, &pot, &bounded_reward()).unwrap();
        let shifted = RewardSpec::new(move |x: &[f64]| (x[0] * 1.3 - x[1]).sin() + c);
        let moved = gamma_reward(&e, &theta, &pot, &shifted).unwrap();
        for (u, v) in base.iter().zip(&moved) {
            prop_assert!((u - v).abs() <= 1e-12, "{u} vs {v}");
        }
    }

    #[test]
    fn keyed_draws_do_not_depend_on_order(seed in any::<u64>(), n in 1usize..20) {
        let rng = RngStream::new(seed).with_experiment(3).with_step(9);
        let forward: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut out = vec![0.0; 3];
                rng.fill_particle_normal(i, false, &mut out);
                out
            })
            .collect();
        for i in (0..n).rev() {
            let mut out = vec![0.0; 3];
            rng.fill_particle_normal(i, false, &mut out);
            prop_assert_eq!(&out, &forward[i]);
        }
    }

    #[test]
    fn thm2_schedule_values(c1 in 0.01..5.0f64, offset in 1u64..100, k in 0u64..1_000_000) {
        let s = StepSchedule::new(impdiff_core::ScheduleKind::Thm2, c1, 1.0, offset).unwrap();
        let (g, e) = schedule_values(&s, k);
        let r = ((k + offset) as f64).sqrt();
        prop_assert!(g > 0.0 && e > 0.0 && e <= 1.0);
        prop_assert!((g - c1 / r).abs() <= 1e-15 * (c1 / r));
        prop_assert!((e - 1.0 / r).abs() <= 1e-15);
    }

    #[test]
    fn finite_state_stationary_is_interior(seed in any::<u64>(), theta in prop::collection::vec(-3.0..3.0f64, 3)) {
        let prob = FiniteStateProblem::random_smooth(5, 3, &RngStream::new(seed)).unwrap();
        let pi = prob.stationary(&theta).unwrap();
        prop_assert!(pi.iter().all(|p| *p > 0.0 && *p < 1.0));
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(finite_state_implicit_gradient(&prob, &theta).unwrap().len(), 3);
    }

    #[test]
    fn normalized_grid_has_unit_mass(theta in theta6()) {
        let pot = MixturePotential::hexagon(2.0, WeightParam::Softmax).unwrap();
        let g = stationary_quadrature(&pot, &ParamVector::new(theta).unwrap(), &[-7.0, -7.0], &[7.0, 7.0], 141).unwrap();
        prop_assert!((g.mass() - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn theta_path_solves_its_linear_system(theta0 in -2.0..2.0f64, target in -2.0..2.0f64, eta in 0.1..3.0f64, horizon in 1.0..6.0f64) {
        let path = diffusion1d_theta_path(theta0, target, eta, horizon).unwrap();
        for t in [horizon + 0.1, 1.5 * horizon, 2.0 * horizon] {
            let r = path.residual(t, 1e-5);
            prop_assert!(r[0].abs() < 1e-8 && r[1].abs() < 1e-8, "t={t}: {r:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn budget_accounting(k in 1u64..12, t in 1usize..6, m in 1usize..6, seed in any::<u64>()) {
        let pot = MixturePotential::hexagon(2.0, WeightParam::Softmax).unwrap();
        let sampler = LangevinSampler::new(pot.clone(), 0.05);
        let est = RewardCovariance { potential: pot, reward: bounded_reward() };
        let p0 = InitialDistribution::standard_normal(6, 2);
        let rng = RngStream::new(seed);
        let theta = [0.0; 6];
        let mut none = |_: &StepView<'_>| ControlFlow::Continue(());

        let tr = run_nested_loop(&theta, &p0, t, k, &sampler, &est, 0.1, &rng, &mut none).unwrap();
        prop_assert_eq!(tr.gradient_evaluations(), k * t as u64);
        let tr = run_implicit_infinite(&theta, &p0, k, &sampler, &est, ThetaStep::Constant { eta: 0.1 }, ImplicitOptions::default(), &rng, &mut none).unwrap();
        prop_assert_eq!(tr.gradient_evaluations(), k);
        let tr = run_implicit_finite_queue(&theta, &p0, m, k, &sampler, &est, 0.1, &rng, true, &mut none).unwrap();
        prop_assert_eq!(tr.gradient_evaluations(), k * m as u64);
        prop_assert_eq!(tr.parallel_depth(), k);
    }

    #[test]
    fn thm2_theta_moves_are_bounded(c1 in 0.01..0.5f64, eta in 0.1..0.9f64, seed in any::<u64>()) {
        let pot = MixturePotential::hexagon(2.0, WeightParam::ShiftedLogistic { eta }).unwrap();
        let sched = StepSchedule::new(impdiff_core::ScheduleKind::Thm2, c1, 1.0, 1).unwrap();
        let sampler = LangevinSampler::new(pot.clone(), c1);
        let est = RewardCovariance { potential: pot, reward: bounded_reward() };
        let p0 = InitialDistribution::standard_normal(20, 2);
        let mut prev = vec![0.5; 6];
        let mut ok = true;
        let mut obs = |v: &StepView<'_>| {
            let (g, e) = sched.values(v.k - 1);
            let step = prev.iter().zip(v.theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            ok &= step <= g * e * 2.0 / eta + 1e-12;
            prev = v.theta.to_vec();
            ControlFlow::Continue(())
        };
        run_implicit_infinite(&[0.5; 6], &p0, 30, &sampler, &est, ThetaStep::Schedule(sched), ImplicitOptions::default(), &RngStream::new(seed), &mut obs).unwrap();
        prop_assert!(ok);
    }

    #[test]
    fn sde_paths_replay_identically(seed in any::<u64>(), steps in 1usize..64) {
        let drift = DiffusionDrift::sde(2.0);
        let (term, paths) = integrate_sde(&drift, &[1.0], 3, steps, &RngStream::new(seed)).unwrap();
        for (i, p) in paths.iter().enumerate() {
            let a = p.replay(&drift, &[1.0]).unwrap();
            prop_assert_eq!(a.len(), steps + 1);
            prop_assert_eq!(&a, &p.replay(&drift, &[1.0]).unwrap());
            prop_assert_eq!(a[steps], term.point(i)[0]);
        }
    }
}

#[test]
fn gaussian_ensemble_is_reproducible() {
    let a = gaussian_ensemble(100, 2, &[0.0, 0.0], 1.0, &RngStream::new(5)).unwrap();
    let b = gaussian_ensemble(100, 2, &[0.0, 0.0], 1.0, &RngStream::new(5)).unwrap();
    assert_eq!(a, b);
}
