use proptest::prelude::*;

use ergo_hri::dula::{InputEncoder, InputVariant, MlpModel};
use ergo_hri::estimator::{DeviationSummary, Observation};
use ergo_hri::kinematics::{
    forward_kinematics, jacobian, pose_error, JointLimits, JointPosture, JointState, JointVector, SegmentLengths, Twist,
    NUM_JOINTS,
};
use ergo_hri::optimizer::{solve_online_gradient, GradientConfig, Objective, OnlineProblem, Quadratic};
use ergo_hri::rula::{grand_score, interpret, score_posture, LoadCategory, TaskContext};
use ergo_hri::simulator::advance;

fn posture() -> impl Strategy<Value = JointPosture> {
    let lim = JointLimits::default();
    let ranges: Vec<_> = (0..NUM_JOINTS).map(|j| lim.q_min[j]..=lim.q_max[j]).collect();
    ranges.prop_map(|v| JointPosture::from_slice(&v).unwrap())
}

fn context() -> impl Strategy<Value = TaskContext> {
    (0..4u8, -0.3..0.6f64, proptest::collection::vec(any::<bool>(), 11))
        .prop_map(|(load, neck, flags)| TaskContext::from_flags(LoadCategory::from_code(load).unwrap(), neck, &flags))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn worksheet_scores_stay_in_range(q in posture(), ctx in context()) {
        let a = score_posture(&q, &ctx);
        prop_assert!((1..=6).contains(&a.upper_arm));
        prop_assert!((1..=3).contains(&a.lower_arm));
        prop_assert!((1..=4).contains(&a.wrist));
        prop_assert!((1..=2).contains(&a.wrist_twist));
        prop_assert!((1..=6).contains(&a.neck));
        prop_assert!((1..=6).contains(&a.trunk));
        prop_assert!((1..=7).contains(&a.grand));
        prop_assert_eq!(a.action_level, interpret(a.grand).unwrap());
    }

    #[test]
    fn adding_a_risk_flag_never_lowers_the_grand_score(q in posture(), ctx in context(), which in 0..7usize) {
        let mut worse = ctx;
        match which {
            0 => worse.static_muscle_use = true,
            1 => worse.repetition = true,
            2 => worse.neck_twist_or_side_bend = true,
            3 => worse.shoulder_raised = true,
            4 => worse.arm_abducted_flag = true,
            5 => worse.working_across_midline = true,
            _ => worse.wrist_twist_extreme = true,
        }
        prop_assert!(grand_score(&q, &worse) >= grand_score(&q, &ctx));
    }

    #[test]
    fn jacobian_predicts_small_motions(q in posture(), dir in proptest::collection::vec(-1.0..1.0f64, NUM_JOINTS)) {
        let psi = SegmentLengths::default();
        let dq = JointVector::from_vec(dir) * 1e-4;
        let moved = JointPosture(q.0 + dq);
        let predicted = jacobian(&q, &psi) * dq;
        let actual = pose_error(&forward_kinematics(&moved, &psi), &forward_kinematics(&q, &psi));
        // Second-order remainder: |dq|² times a bounded curvature.
        prop_assert!((predicted - actual).norm() < 1e-7, "{}", (predicted - actual).norm());
    }

    #[test]
    fn advancing_keeps_joints_within_limits(q in posture(), rates in proptest::collection::vec(-20.0..20.0f64, NUM_JOINTS)) {
        let lim = JointLimits::default();
        let next = advance(&q, &JointVector::from_vec(rates), 0.05, &lim);
        prop_assert!(lim.contains(&next.q));
        for j in 0..NUM_JOINTS {
            // Rates are kept only where the step was taken in full.
            if next.qdot[j] != 0.0 {
                prop_assert!((next.q[j] - q[j] - next.qdot[j] * 0.05).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deviation_summary_is_ordered(values in proptest::collection::vec(0.0..3.0f64, 1..200)) {
        let s = DeviationSummary::from_samples(values.clone());
        prop_assert!(s.lower_quartile <= s.median && s.median <= s.upper_quartile && s.upper_quartile <= s.max);
        prop_assert_eq!(s.max, values.iter().cloned().fold(f64::MIN, f64::max));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn network_joint_gradient_matches_differences(seed in 0..1000u64, q in posture(), ctx in context()) {
        let model = MlpModel::initialized(InputEncoder::new(InputVariant::PostureAndContext, &JointLimits::default()), seed);
        let (value, grad) = model.score_and_joint_gradient(&q, &ctx);
        prop_assert!((value - model.score(&q, &ctx)).abs() < 1e-12);
        let h = 1e-6;
        for j in 0..NUM_JOINTS {
            let (mut qp, mut qm) = (q, q);
            qp[j] += h;
            qm[j] -= h;
            let (xp, xm) = (model.encode(&qp, &ctx), model.encode(&qm, &ctx));
            if model.activation_pattern(&xp) != model.activation_pattern(&xm) {
                continue;
            }
            let fd = (model.score(&qp, &ctx) - model.score(&qm, &ctx)) / (2.0 * h);
            prop_assert!((fd - grad[j]).abs() <= 1e-6 * (1.0 + fd.abs()), "joint {}: {} vs {}", j, fd, grad[j]);
        }
    }

    #[test]
    fn gradient_solutions_hold_the_hand_and_never_get_worse(q in posture(), target in posture()) {
        let psi = SegmentLengths::default();
        let lim = JointLimits::default();
        let z = Observation { time: 0.0, pose: forward_kinematics(&q, &psi), twist: Twist::zero() };
        let p = OnlineProblem::new(JointState::at_rest(q), z, psi, lim.clone());
        let obj = Quadratic { target };
        let start = obj.value(&q);
        let sol = solve_online_gradient(&p, &obj, &GradientConfig::default()).unwrap();
        prop_assert!(p.is_feasible(&sol.q), "violation {}", sol.violation);
        prop_assert!(lim.contains(&sol.q));
        prop_assert!(sol.value <= start + 1e-12);
    }
}
