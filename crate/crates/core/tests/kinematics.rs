use collocate_core::arm::{rollout, step, ArmSpec, State, TaskMeta};
use proptest::prelude::*;

fn arm(d: usize) -> ArmSpec {
    ArmSpec::new((0..d).map(|k| 1.0 - 0.2 * k as f64).collect()).unwrap()
}

fn meta() -> TaskMeta {
    TaskMeta { start_ee: [0.0; 3], goal_ee: [1.0, 0.5, 0.0], features: vec![] }
}

proptest! {
    #[test]
    fn jacobian_matches_central_differences(q in prop::collection::vec(-3.0..3.0f64, 3)) {
        let arm = arm(3);
        let j = arm.jacobian(&q).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            let (p, m) = (arm.fk_position(&qp).unwrap(), arm.fk_position(&qm).unwrap());
            for r in 0..2 {
                prop_assert!((j.row(r)[k] - (p[r] - m[r]) / (2.0 * h)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn curvature_term_is_time_derivative_of_jacobian(
        q in prop::collection::vec(-3.0..3.0f64, 2),
        qd in prop::collection::vec(-2.0..2.0f64, 2),
    ) {
        let arm = arm(2);
        let h = 1e-5;
        let shifted = |s: f64| -> Vec<f64> {
            let qs: Vec<f64> = q.iter().zip(&qd).map(|(a, b)| a + s * b).collect();
            arm.jacobian(&qs).unwrap().matvec(&qd)
        };
        let (p, m) = (shifted(h), shifted(-h));
        let jdqd = arm.jacobian_dot_qd(&q, &qd).unwrap();
        for r in 0..2 {
            prop_assert!((jdqd[r] - (p[r] - m[r]) / (2.0 * h)).abs() < 1e-6);
        }
        let v = arm.ee_velocity(&q, &qd).unwrap();
        let jv = arm.jacobian(&q).unwrap().matvec(&qd);
        prop_assert!((v[0] - jv[0]).abs() < 1e-14 && (v[1] - jv[1]).abs() < 1e-14);
    }

    #[test]
    fn step_is_exact_semi_explicit_euler(
        q in prop::collection::vec(-3.0..3.0f64, 2),
        qd in prop::collection::vec(-2.0..2.0f64, 2),
        a in prop::collection::vec(-5.0..5.0f64, 2),
    ) {
        let s = State::new(q.clone(), qd.clone());
        let n = step(&s, &a, 0.01).unwrap();
        for k in 0..2 {
            prop_assert_eq!(n.q[k], q[k] + qd[k] * 0.01);
            prop_assert_eq!(n.qd[k], qd[k] + a[k] * 0.01);
        }
    }

    #[test]
    fn next_state_gap_is_scaled_action_gap(
        q in prop::collection::vec(-3.0..3.0f64, 2),
        qd in prop::collection::vec(-2.0..2.0f64, 2),
        a in prop::collection::vec(-5.0..5.0f64, 2),
        b in prop::collection::vec(-5.0..5.0f64, 2),
    ) {
        let s = State::new(q, qd);
        let ts = 0.01;
        let gap = step(&s, &a, ts).unwrap().distance(&step(&s, &b, ts).unwrap());
        let da = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        prop_assert!((gap - ts * da).abs() < 1e-12);
    }
}

#[test]
fn rollout_records_consistent_trajectory() {
    let arm = arm(2);
    let mut ctrl = |t: usize, _: &State, _: &TaskMeta| vec![(t as f64 * 0.1).sin(), -0.5];
    let tr = rollout(&mut ctrl, State::rest(vec![0.3, -0.4]), &meta(), 50, 0.01).unwrap();
    assert_eq!(tr.horizon(), 50);
    assert!(tr.dynamics_residual().unwrap() < 1e-12);
    assert!(arm.fk(&tr.states[50].q).is_ok());
}

#[test]
fn step_rejects_bad_inputs() {
    let s = State::rest(vec![0.0, 0.0]);
    assert!(step(&s, &[1.0], 0.01).is_err());
    assert!(step(&s, &[f64::NAN, 0.0], 0.01).is_err());
    assert!(step(&s, &[0.0, 0.0], 0.0).is_err());
}
