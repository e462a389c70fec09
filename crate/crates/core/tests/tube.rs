use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vtube::par::Parallelism;
use vtube::scenario::{desk_world, plan_scenario};
use vtube::temporal::{direct_lp, solve_lp, DEFAULT_T_MIN};
use vtube::tube::{build_tube, sample_theta, VirtualTube};
use vtube::Error;

fn tube() -> &'static VirtualTube {
    static TUBE: OnceLock<VirtualTube> = OnceLock::new();
    TUBE.get_or_init(|| {
        plan_scenario(&desk_world(0), Parallelism::Parallel)
            .unwrap()
            .0
    })
}

fn unit(k: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; k];
    e[i] = 1.0;
    e
}

#[test]
fn homotopy_between_two_trajectories_stays_in_the_corridor() {
    let tube = tube();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = sample_theta(&mut rng, 3);
    let b = sample_theta(&mut rng, 3);
    for i in 0..100 {
        let s = i as f64 / 99.0;
        let theta: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (1.0 - s) * x + s * y)
            .collect();
        let tr = tube.trajectory(&theta).unwrap();
        for j in 0..100 {
            let p = tr.eval(tr.total_time() * j as f64 / 99.0, 0).unwrap();
            assert!(
                tube.corridor.contains(&p, 1e-6),
                "left the corridor at s={s}, t-fraction {j}"
            );
        }
    }
}

#[test]
fn end_point_is_the_image_of_the_start_point() {
    let tube = tube();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let theta = sample_theta(&mut rng, 3);
        let tr = tube.trajectory(&theta).unwrap();
        let mapped = tube.terminals.map.apply(&tr.start());
        assert!((tr.end() - mapped).norm() < 1e-9);
    }
}

#[test]
fn total_time_is_within_epsilon_of_the_direct_optimum() {
    let tube = tube();
    let eps = tube.tree.epsilon;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..500 {
        let theta = sample_theta(&mut rng, 3);
        let approx = tube.trajectory(&theta).unwrap().total_time();
        let exact = solve_lp(&direct_lp(&tube.spatial, &theta, tube.v_max, DEFAULT_T_MIN).unwrap())
            .unwrap()
            .total;
        assert!(
            approx - exact >= -1e-7 && approx - exact <= eps + 1e-7,
            "{theta:?}: {approx} vs {exact}"
        );
    }
}

#[test]
fn vertices_reproduce_the_boundary_trajectories() {
    let tube = tube();
    for k in 0..3 {
        let e = unit(3, k);
        let tr = tube.trajectory(&e).unwrap();
        let boundary = &tube.spatial.boundaries[k].trajectory;
        for (a, b) in tr.segments().iter().zip(boundary.segments()) {
            for (p, q) in a.control_points().iter().zip(b.control_points()) {
                assert!((p - q).norm() < 1e-9);
            }
        }
        let direct =
            solve_lp(&direct_lp(&tube.spatial, &e, tube.v_max, DEFAULT_T_MIN).unwrap()).unwrap();
        for (x, y) in tr.durations().iter().zip(&direct.durations) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

#[test]
fn assignment_recovers_barycentric_weights() {
    let tube = tube();
    let corners = tube.boundary_starts();
    for k in 0..3 {
        let th = tube.assign_parameters(&[corners[k]]).unwrap();
        assert_eq!(th[0], unit(3, k));
    }
    let centroid = (corners[0] + corners[1] + corners[2]) / 3.0;
    let th = &tube.assign_parameters(&[centroid]).unwrap()[0];
    assert!(th.iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-12));

    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let w = sample_theta(&mut rng, 3);
        let p = corners[0] * w[0] + corners[1] * w[1] + corners[2] * w[2];
        let th = &tube.assign_parameters(&[p]).unwrap()[0];
        let back = corners[0] * th[0] + corners[1] * th[1] + corners[2] * th[2];
        assert!((back - p).norm() < 1e-9);
    }

    let outside = corners[0] + (corners[0] - centroid);
    match tube.assign_parameters(&[outside]) {
        Err(Error::Assignment { index: 0, distance }) => assert!(distance > 0.1),
        other => panic!("expected assignment error, got {other:?}"),
    }
}

#[test]
fn cross_section_hull_contains_interior_samples() {
    let tube = tube();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for q in 0..=40 {
        let s = q as f64 / 40.0;
        let cs = tube.cross_section(s).unwrap();
        for _ in 0..20 {
            let theta = sample_theta(&mut rng, 3);
            let p = tube.sample(&theta, s).unwrap();
            assert!(cs.hull_distance(&p) < 1e-6);
        }
    }
}

#[test]
fn metadata_matches_the_tree() {
    let tube = tube();
    let info = tube.info();
    assert_eq!(info.leaf_count, tube.tree.leaf_count());
    assert_eq!(info.k_c, 3);
    assert_eq!(info.segments, tube.spatial.segment_count());
}

#[test]
fn artifact_round_trips_and_detects_tampering() {
    let tube = tube();
    let json = tube.to_json();
    let back = VirtualTube::from_json(&json).unwrap();
    assert_eq!(&back, tube);
    assert_eq!(back.to_json(), json);

    let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
    v["tube"]["v_max"][0] = serde_json::json!(9.0);
    assert!(matches!(
        VirtualTube::from_json(&v.to_string()),
        Err(Error::Integrity(_))
    ));
    assert!(matches!(
        VirtualTube::from_json(&json[..json.len() / 2]),
        Err(Error::Integrity(_))
    ));
}

#[test]
fn tree_from_another_solution_is_rejected() {
    let a = tube();
    let b = plan_scenario(&desk_world(1), Parallelism::Parallel)
        .unwrap()
        .0;
    let err = build_tube(
        a.terminals.clone(),
        a.corridor.clone(),
        a.spatial.clone(),
        b.tree.clone(),
        a.v_max,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Assembly(_)));
    let mut orphan = a.tree.clone();
    orphan.source_hash = None;
    let err = build_tube(
        a.terminals.clone(),
        a.corridor.clone(),
        a.spatial.clone(),
        orphan,
        a.v_max,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Assembly(_)));
}

#[test]
fn off_simplex_parameters_are_rejected() {
    let tube = tube();
    assert!(matches!(
        tube.trajectory(&[0.5, 0.6, -0.1]),
        Err(Error::Domain(_))
    ));
    assert!(matches!(
        tube.trajectory(&[0.5, 0.5]),
        Err(Error::Domain(_))
    ));
}
