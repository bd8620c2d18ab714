use belief_risk::collision::{minkowski_sum, pose_collision_probability};
use belief_risk::engine::severity;
use belief_risk::trajectory::{Particle, TrajectorySample};
use belief_risk::*;
use proptest::prelude::*;

fn fp(l: f64, w: f64) -> Footprint {
    Footprint::new(l, w).unwrap()
}

/// Andrew's monotone chain, CCW, collinear points dropped.
fn hull(mut pts: Vec<Vec2>) -> Vec<Vec2> {
    pts.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap().then(a.y.partial_cmp(&b.y).unwrap()));
    let cross = |o: Vec2, a: Vec2, b: Vec2| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let mut lower: Vec<Vec2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 1e-9 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Vec2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 1e-9 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Separating-axis overlap test of two rectangles given as corner lists.
fn rectangles_overlap(a: &[Vec2], b: &[Vec2]) -> bool {
    let axes = [a[1] - a[0], a[2] - a[1], b[1] - b[0], b[2] - b[1]];
    axes.iter().all(|axis| {
        let proj = |pts: &[Vec2]| {
            pts.iter().map(|p| p.x * axis.x + p.y * axis.y).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
        };
        let ((alo, ahi), (blo, bhi)) = (proj(a), proj(b));
        ahi >= blo && bhi >= alo
    })
}

fn same_polygon(a: &[Vec2], b: &[Vec2]) -> bool {
    a.len() == b.len()
        && a.iter().all(|p| b.iter().any(|q| (*p - *q).norm() < 1e-9))
        && b.iter().all(|p| a.iter().any(|q| (*p - *q).norm() < 1e-9))
}

#[test]
fn minkowski_sum_matches_brute_force_hull_over_headings() {
    let ego = fp(4.5, 1.8);
    let opp = fp(4.0, 2.0);
    for k in 0..100 {
        let heading = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / 100.0;
        let a = ego.corners(0.0);
        let b: Vec<Vec2> = opp.corners(heading).iter().map(|v| -*v).collect();
        let sums: Vec<Vec2> = a.iter().flat_map(|p| b.iter().map(move |q| *p + *q)).collect();
        let expected = hull(sums);
        let got = minkowski_sum(&a, &b);
        assert!(same_polygon(&got, &expected), "heading {heading}: {got:?} vs {expected:?}");
        let region = build_collision_region(&ego, &opp, heading);
        assert!(same_polygon(region.polygon.vertices(), &expected));
    }
}

proptest! {
    #[test]
    fn region_membership_is_footprint_overlap(
        l1 in 1.0..6.0f64, w1 in 0.5..3.0f64, l2 in 1.0..6.0f64, w2 in 0.5..3.0f64,
        heading in -3.1..3.1f64, dx in -8.0..8.0f64, dy in -8.0..8.0f64,
    ) {
        let (ego, opp) = (fp(l1, w1), fp(l2, w2));
        let region = build_collision_region(&ego, &opp, heading);
        let d = Vec2::new(dx, dy);
        let opp_corners: Vec<Vec2> = opp.corners(heading).iter().map(|c| *c + d).collect();
        let overlap = rectangles_overlap(&ego.corners(0.0), &opp_corners);
        // skip points within rounding distance of the boundary
        let near_boundary = {
            let v = region.polygon.vertices();
            (0..v.len()).any(|i| {
                let (a, b) = (v[i], v[(i + 1) % v.len()]);
                let t = ((d - a).dot(b - a) / (b - a).dot(b - a)).clamp(0.0, 1.0);
                (d - a.lerp(b, t)).norm() < 1e-7
            })
        };
        if !near_boundary {
            prop_assert_eq!(region.contains(d), overlap);
        }
    }

    #[test]
    fn collision_probability_is_rotation_invariant(
        ex in -5.0..5.0f64, ey in -5.0..5.0f64, eh in -3.1..3.1f64,
        ox in -5.0..5.0f64, oy in -5.0..5.0f64, oh in -3.1..3.1f64,
        sxx in 0.05..2.0f64, syy in 0.05..2.0f64, rho in -0.8..0.8f64, rot in -3.1..3.1f64,
    ) {
        let cov = Covariance2::new(sxx, rho * (sxx * syy).sqrt(), syy).unwrap();
        let (fa, fb) = (fp(4.5, 1.8), fp(3.0, 1.5));
        let e = Pose2::new(ex, ey, eh).unwrap();
        let o = Pose2::new(ox, oy, oh).unwrap();
        let p = pose_collision_probability(&e, &fa, &o, &fb, &cov);
        let turn = |q: &Pose2| {
            let v = q.position().rotate(rot);
            Pose2::new(v.x, v.y, q.heading + rot).unwrap()
        };
        let q = pose_collision_probability(&turn(&e), &fa, &turn(&o), &fb, &cov.rotate(rot));
        prop_assert!((p - q).abs() < 1e-9, "{} vs {}", p, q);
        // swapping the roles of the two vehicles does not change the probability
        let swapped = pose_collision_probability(&o, &fb, &e, &fa, &cov);
        prop_assert!((p - swapped).abs() < 1e-9, "{} vs {}", p, swapped);
    }

    #[test]
    fn fusion_is_commutative_and_psd(
        a in 0.0..3.0f64, b in 0.0..3.0f64, r1 in -1.0..1.0f64,
        c in 0.0..3.0f64, d in 0.0..3.0f64, r2 in -1.0..1.0f64,
    ) {
        let x = Covariance2::new(a, r1 * (a * b).sqrt(), b).unwrap();
        let y = Covariance2::new(c, r2 * (c * d).sqrt(), d).unwrap();
        let s = fuse_covariances(&x, &y);
        prop_assert_eq!(s, fuse_covariances(&y, &x));
        prop_assert_eq!(s.to_matrix()[0][0], a + c);
        prop_assert!(s.eigenvalues().0 >= -1e-12);
    }
}

fn train(points: &[(f64, f64, f64, f64, f64)], footprint: Footprint) -> ParticleTrain {
    ParticleTrain {
        particles: points
            .iter()
            .map(|&(t, x, y, h, v)| Particle { t, pose: Pose2::new(x, y, h).unwrap(), speed: v })
            .collect(),
        footprint,
        rest_until: None,
    }
}

proptest! {
    #[test]
    fn severity_is_symmetric(
        n in 1usize..6, m in 1usize..6, dt_a in 0.2..0.6f64, dt_b in 0.2..0.6f64,
        x0 in -3.0..3.0f64, y0 in -3.0..3.0f64, h in -3.1..3.1f64, v in 0.0..12.0f64,
    ) {
        let a: Vec<_> = (0..n).map(|k| (k as f64 * dt_a, k as f64 * 2.0, 0.0, 0.0, 8.0)).collect();
        let b: Vec<_> = (0..m).map(|k| (k as f64 * dt_b, x0 + k as f64 * h.cos(), y0 + k as f64 * h.sin(), h, v)).collect();
        let (ta, tb) = (train(&a, fp(4.5, 1.8)), train(&b, fp(4.0, 1.7)));
        let ca = Covariance2::isotropic(0.4).unwrap();
        let cb = Covariance2::isotropic(0.3).unwrap();
        let s1 = severity(&ta, &tb, &ca, &cb, 13.9).value();
        let s2 = severity(&tb, &ta, &cb, &ca, 13.9).value();
        prop_assert!((s1 - s2).abs() < 1e-9, "{} vs {}", s1, s2);
        prop_assert!((0.0..=1.0).contains(&s1));
    }
}

fn straight(x0: f64, y: f64, heading: f64, speed: f64) -> Trajectory {
    let samples = (0..=30)
        .map(|k| {
            let t = k as f64 * 0.1;
            let x = x0 + heading.cos() * speed * t;
            let yy = y + heading.sin() * speed * t;
            TrajectorySample { t, pose: Pose2::new(x, yy, heading).unwrap(), speed }
        })
        .collect();
    Trajectory::new(samples, fp(4.5, 1.8))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn scenario_risk_is_linear_in_the_mixture(
        w in 0.05..0.95f64, x1 in 5.0..20.0f64, x2 in 5.0..20.0f64, y2 in -3.0..3.0f64, v2 in 0.0..10.0f64,
    ) {
        let params = EngineParams::default();
        let ego = straight(0.0, 0.0, 0.0, 8.0);
        let a = straight(x1, 0.5, std::f64::consts::PI, 6.0);
        let b = straight(x2, y2, 1.2, v2);
        let ec = Covariance2::isotropic(0.2).unwrap();
        let oc = Covariance2::isotropic(0.3).unwrap();
        let single = |t: &Trajectory| {
            scenario_risk(&ego, &TrajectoryDistribution::new(vec![(t.clone(), 1.0)]), &ec, &oc, &params).unwrap().value()
        };
        let mixed = scenario_risk(
            &ego,
            &TrajectoryDistribution::new(vec![(a.clone(), w), (b.clone(), 1.0 - w)]),
            &ec,
            &oc,
            &params,
        )
        .unwrap()
        .value();
        prop_assert!((mixed - (w * single(&a) + (1.0 - w) * single(&b))).abs() < 1e-12);
    }

    #[test]
    fn generated_scenarios_round_trip(kind in 0usize..4, seed in 0u64..1000) {
        let s = generate_scenario(ScenarioKind::ALL[kind], seed).unwrap();
        let text = serialize_scenario(&s).unwrap();
        let back = load_scenario(&text).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(serialize_scenario(&back).unwrap(), text);
    }
}

#[test]
fn generated_scenarios_evaluate_at_nominal_pose() {
    for kind in ScenarioKind::ALL {
        let s = generate_scenario(kind, 0).unwrap();
        let d = DegradationParams::latency_only(0.3).unwrap();
        let r = residual_risk(&s, &d, &s.ego.nominal_pose, &Covariance2::ZERO, &s.engine).unwrap();
        assert!(r.value() >= 0.0);
    }
}

#[test]
fn intersections_have_higher_baseline_than_straight_road() {
    let d = DegradationParams::latency_only(0.3).unwrap();
    let baseline = |k: ScenarioKind| {
        let s = generate_scenario(k, 0).unwrap();
        residual_risk(&s, &d, &s.ego.nominal_pose, &Covariance2::ZERO, &s.engine).unwrap().value()
    };
    let straight = baseline(ScenarioKind::StraightRoadA);
    assert!(baseline(ScenarioKind::TSection) > straight);
    assert!(baseline(ScenarioKind::ComplexIntersection) > straight);
}
