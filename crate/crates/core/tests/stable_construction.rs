use std::sync::Arc;

use ilbench_core::funclass::sample_hard_function;
use ilbench_core::instances::{
    make_stable_instance, InitBranch, InitState, Instance, Sign, StableInstance, StableParams, CLOSED_LOOP_EIISS, OPEN_LOOP_EIISS,
};
use ilbench_core::matkit::{challenging_pair, cross_instability, sample_unit_ball, PairIndex, Vector};
use ilbench_core::policies::{bc_learn, BcOptions, BcTemplate, Completion, ExpertPolicy, LinearPolicy};
use ilbench_core::rng::{seeded, stream};
use ilbench_core::simkit::{
    batch_init, compounding_probe, cost_risk, eiiss_check, expert_l2_risk, rollout, sample_dataset, traj_cost, EiissConfig,
    EvalConfig,
};
use nalgebra::Matrix2;
use rand::{Rng, RngCore};

fn instance(i: PairIndex) -> StableInstance {
    let g = sample_hard_function(2, 2, 0.25, &mut seeded(1)).unwrap();
    make_stable_instance(g, i, Sign::Plus, StableParams::default()).unwrap()
}

#[test]
fn expert_cost_vanishes_over_ten_thousand_rollouts() {
    let inst = Arc::new(instance(PairIndex::First));
    let expert = ExpertPolicy::new(inst.clone());
    let mut worst: f64 = 0.0;
    for i in 0..10_000 {
        let init = batch_init(inst.as_ref(), 3, i);
        let traj = rollout(&expert, inst.as_ref(), &init, 32, i as u64);
        worst = worst.max(traj_cost(inst.as_ref(), &traj));
    }
    assert!(worst <= 1e-12, "expert cost {worst}");
}

#[test]
fn linear_region_expert_stays_within_delta_ball() {
    let inst = Arc::new(instance(PairIndex::First));
    let expert = ExpertPolicy::new(inst.clone());
    let delta = inst.params.delta;
    let mut worst: f64 = 0.0;
    let mut seen = 0;
    for i in 0..10_000 {
        let init = batch_init(inst.as_ref(), 11, i);
        if init.is_regression() {
            continue;
        }
        seen += 1;
        let traj = rollout(&expert, inst.as_ref(), &init, 16, i as u64);
        for x in traj.states.iter().chain([&traj.terminal]) {
            worst = worst.max(x.norm() / delta);
        }
    }
    assert!(seen > 4500);
    assert!(worst <= inst.params.c_delta, "measured {worst}");
}

#[test]
fn per_step_cost_is_one_lipschitz_on_the_working_region() {
    let inst = instance(PairIndex::Second);
    let mut rng = seeded(21);
    let mut worst: f64 = 0.0;
    for trial in 0..200_000 {
        // alternate between the origin ball, the patch and the wider region
        let centre = if trial % 3 == 1 { inst.x_offset.clone() } else { Vector::zeros(4) };
        let radius = [2.2, 2.2, 4.0][trial % 3];
        let x = &centre + sample_unit_ball(4, &mut rng) * radius;
        let u = sample_unit_ball(4, &mut rng);
        let scale = 10f64.powf(rng.random_range(-4.0..-1.0));
        let dx = sample_unit_ball(4, &mut rng) * scale;
        let du = sample_unit_ball(4, &mut rng) * scale;
        let (x2, u2) = (&x + &dx, &u + &du);
        let gap = (dx.norm_squared() + du.norm_squared()).sqrt();
        let c1 = inst.cost(&x, &u, 1);
        assert!(c1 >= 0.0);
        worst = worst.max((c1 - inst.cost(&x2, &u2, 1)).abs() / gap);
    }
    assert!(worst <= 1.0, "Lipschitz ratio {worst}");
}

#[test]
fn linear_region_data_cannot_reveal_the_index() {
    let first = Arc::new(instance(PairIndex::First));
    let second = Arc::new(first.same_with(PairIndex::Second, Sign::Plus));
    let (e1, e2) = (ExpertPolicy::new(first.clone()), ExpertPolicy::new(second.clone()));
    let mut compared = 0;
    for i in 0..2000 {
        let init = batch_init(first.as_ref(), 5, i);
        if !matches!(init.branch, InitBranch::Linear { .. }) {
            continue;
        }
        compared += 1;
        let a = rollout(&e1, first.as_ref(), &init, 24, i as u64);
        let b = rollout(&e2, second.as_ref(), &init, 24, i as u64);
        assert_eq!(a.states, b.states);
        assert_eq!(a.inputs, b.inputs);
    }
    assert!(compared > 900);
}

#[test]
fn any_gain_matching_the_second_column_destabilizes_one_system() {
    let mut rng = seeded(8);
    for mu in [0.125, 0.25] {
        let pair = challenging_pair(mu).unwrap();
        for _ in 0..100 {
            let mut khat = pair.k1;
            khat[(0, 0)] = rng.random_range(-3.0..3.0);
            khat[(1, 0)] = rng.random_range(-3.0..3.0);
            for h in 1..=30u32 {
                let growth = cross_instability(&pair, &khat, h).unwrap();
                assert!(growth >= (1.0 + mu / 4.0).powi(h as i32) - 1e-12, "mu {mu} H {h}: {growth}");
            }
        }
        let wrong = Matrix2::new(0.0, 1.0, 0.0, 0.0);
        assert!(cross_instability(&pair, &wrong, 3).is_err());
    }
}

fn eiiss_base(inst: &StableInstance) -> impl Fn(&mut dyn RngCore) -> Vector + '_ {
    move |rng| inst.sample_init(rng).x1
}

#[test]
fn stable_open_and_closed_loops_pass_the_frozen_constants() {
    let inst = instance(PairIndex::First);
    let base = eiiss_base(&inst);
    let open = |x: &Vector, u: &Vector, t: usize| inst.step(x, u, t);
    let closed = |x: &Vector, u: &Vector, t: usize| inst.step(x, &(inst.expert_action(x, t) + u), t);
    let cfg = EiissConfig::default();
    let (c, rho) = OPEN_LOOP_EIISS;
    let r = eiiss_check(&open, &base, 4, c, rho, 40, 10_000, &cfg, 2024);
    assert!(r.pass, "open loop ratio {}", r.max_ratio);
    let (c, rho) = CLOSED_LOOP_EIISS;
    let r = eiiss_check(&closed, &base, 4, c, rho, 40, 10_000, &cfg, 2025);
    assert!(r.pass, "closed loop ratio {}", r.max_ratio);
}

#[test]
fn expert_probe_contracts_and_wrong_gain_compounds() {
    let inst = Arc::new(instance(PairIndex::Second));
    let expert = ExpertPolicy::new(inst.clone());
    let mut rng = stream(4, 0);
    let (c, rho) = CLOSED_LOOP_EIISS;
    for _ in 0..50 {
        let init = inst.sample_init(&mut rng);
        let probe = compounding_probe(&expert, inst.as_ref(), &init, 24, 1e-6, 0);
        for (t, g) in probe.gap.iter().enumerate() {
            assert!(g.abs() <= c * rho.powi(t as i32) + 1e-6, "t {t}: {g}");
        }
    }
    // the first system's gain under the second system's dynamics
    let wrong = LinearPolicy { gain: inst.kbar_of(PairIndex::First) };
    let mut x1 = Vector::zeros(4);
    x1[1] = 1e-8;
    let init = InitState::point(x1);
    let probe = compounding_probe(&wrong, inst.as_ref(), &init, 30, 1e-9, 0);
    for t in 1..=30 {
        let bound = 1.0625f64.powi(t as i32 - 1);
        assert!(probe.curve[t - 1] >= bound * (1.0 - 1e-9), "t {t}: {} < {bound}", probe.curve[t - 1]);
    }
}

#[test]
fn probe_is_symmetric_in_the_sign_of_the_offset() {
    let inst = Arc::new(instance(PairIndex::First));
    let wrong = LinearPolicy { gain: inst.kbar_of(PairIndex::Second) };
    let mut rng = stream(6, 0);
    for _ in 0..20 {
        let mut init = inst.sample_init(&mut rng);
        if init.is_regression() {
            continue;
        }
        init.x1 *= 1e-3;
        let up = compounding_probe(&wrong, inst.as_ref(), &init, 16, 1e-7, 1);
        let down = compounding_probe(&wrong, inst.as_ref(), &init, 16, -1e-7, 1);
        for (a, b) in up.curve.iter().zip(&down.curve) {
            assert!((a + b).abs() <= 1e-6 * a.abs().max(1.0));
        }
        let zero = compounding_probe(&wrong, inst.as_ref(), &init, 16, 0.0, 1);
        assert!(zero.curve.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn cloning_compounds_only_without_the_index() {
    let inst = instance(PairIndex::First);
    let data = sample_dataset(&inst, 256, 32, 3);
    let template = BcTemplate::from_instance(&inst);
    let cfg = EvalConfig::new(32, 1000, 5);
    let ratio = |completion| {
        let p = bc_learn(&data, &template, &BcOptions { completion }).unwrap();
        cost_risk(&p, &inst, &cfg).value / expert_l2_risk(&p, &inst, &cfg).value
    };
    let adversarial = ratio(Completion::Adversarial { truth: PairIndex::First });
    let oracle = ratio(Completion::AssumeIndex(PairIndex::First));
    assert!(adversarial >= 20.0, "adversarial ratio {adversarial}");
    assert!(oracle <= 5.0, "oracle ratio {oracle}");
}
