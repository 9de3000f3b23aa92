mod common;

use common::qp_oracle;
use laneflex::vehicle::{
    build_reference_path, lateral_preview_control, plan_longitudinal, replan_longitudinal, step_dynamics,
    LongitudinalProblem, PreviewGains, VehicleParams, VehicleState,
};
use proptest::prelude::*;

fn arb_road() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((-1i32..=1, 1i32..=3), 1..6).prop_map(|steps| {
        let mut pts = vec![[0.0, 0.0]];
        let (mut x, mut y) = (0.0, 0.0);
        for (lane_step, cells) in steps {
            x += 3.5 * lane_step as f64;
            y += 17.5 * cells as f64;
            pts.push([x, y]);
        }
        pts
    })
}

proptest! {
    #[test]
    fn reference_passes_through_road_points(road in arb_road()) {
        let path = build_reference_path(&road, [0.0, 1.0]).unwrap();
        let st = path.road_point_stations();
        prop_assert_eq!(st.len(), road.len());
        for (s, q) in st.iter().zip(&road) {
            let (p, _) = path.point_at(*s);
            prop_assert!((p[0] - q[0]).hypot(p[1] - q[1]) <= 1e-6);
        }
        prop_assert!(st.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn end_tangents_follow_the_lane(road in arb_road()) {
        let path = build_reference_path(&road, [0.0, 1.0]).unwrap();
        for s in [0.0, path.length()] {
            let (_, t) = path.point_at(s);
            prop_assert!(t[0].abs() < 1e-9 && (t[1] - 1.0).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn schedules_match_the_qp_oracle(
        cells in prop::collection::vec(-1i32..=1, 1..=3),
        v0 in 9.0..11.0f64,
    ) {
        let p = VehicleParams::default();
        let mut segments: Vec<f64> = cells.iter().map(|c| 40.0 + 17.5 * *c as f64).collect();
        segments.push(40.0);
        let prob = LongitudinalProblem { v0, ..LongitudinalProblem::new(segments, 4.0, 0.01, 10.0, &p) };
        let s = plan_longitudinal(&prob).unwrap();
        let (oracle, _) = qp_oracle(&prob);
        prop_assert!(s.cost() <= oracle * 1.01 + 1e-9, "{} vs {}", s.cost(), oracle);
        prop_assert!(s.cost() >= oracle * 0.99 - 1e-9, "{} vs {}", s.cost(), oracle);
        prop_assert!(s.v.iter().all(|v| *v >= p.v_min - 1e-9 && *v <= p.v_max + 1e-9));
        prop_assert!(s.a.iter().all(|a| *a >= p.a_min - 1e-9 && *a <= p.a_max + 1e-9));
    }
}

#[test]
fn replanning_absorbs_a_shortfall() {
    let p = VehicleParams::default();
    let base = LongitudinalProblem::new(vec![40.0, 40.0], 4.0, 0.01, 10.0, &p);
    let s = replan_longitudinal(0.3, 9.9, &[40.0, 40.0], &base).unwrap();
    assert!((s.s[400] - 40.3).abs() < 1e-6);
    assert!((s.s[800] - 80.3).abs() < 1e-6);
    assert!((s.v[800] - 10.0).abs() < 1e-9);
    assert_eq!(s.v[0], 9.9);
}

#[test]
fn unreachable_waypoints_are_rejected() {
    let p = VehicleParams::default();
    // 90 m in 4 s would need more than the speed cap allows
    assert!(plan_longitudinal(&LongitudinalProblem::new(vec![90.0], 4.0, 0.01, 10.0, &p)).is_err());
    assert!(plan_longitudinal(&LongitudinalProblem::new(vec![40.0], 4.0, 0.03, 10.0, &p)).is_err());
}

#[test]
fn preview_steering_settles_on_a_straight_lane() {
    let p = VehicleParams::default();
    let g = PreviewGains::default();
    let path = build_reference_path(&[[0.0, 0.0], [0.0, 400.0]], [0.0, 1.0]).unwrap();
    let mut z = VehicleState { x: 0.5, y: 0.0, v: 10.0, theta: 0.0 };
    for _ in 0..500 {
        let delta = lateral_preview_control(&z, &path, &g, &p);
        z = step_dynamics(&z, 0.0, delta, 0.01, &p);
    }
    assert!(z.x.abs() < 0.05, "still {} m off after 5 s", z.x);
}

#[test]
fn constant_steering_turns_on_the_bicycle_radius() {
    let p = VehicleParams::default();
    let delta: f64 = 0.1;
    let radius = p.wheelbase / delta.tan();
    let mut z = VehicleState { x: 0.0, y: 0.0, v: 5.0, theta: 0.0 };
    let dt = 1e-4;
    let quarter = std::f64::consts::FRAC_PI_2 * radius / z.v;
    for _ in 0..(quarter / dt).round() as usize {
        z = step_dynamics(&z, 0.0, delta, dt, &p);
    }
    // a quarter circle turning toward +x from heading +y
    assert!((z.x - radius).abs() < 0.01 * radius, "{z:?}");
    assert!((z.y - radius).abs() < 0.01 * radius, "{z:?}");
    assert!((z.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-3);
}
