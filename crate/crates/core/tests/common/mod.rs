//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vtube::corridor::SphereCorridor;
use vtube::geometry::{Sphere, Vec3};
use vtube::lp::LinearProgram;
use vtube::spatial::{SpatialConfig, SpatialProblem};

/// Two-phase primal simplex on a dense tableau with Bland's rule.
/// Returns the optimal objective, or `None` when infeasible.
pub fn tableau_oracle(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_vars();
    let mi = lp.a_ub.nrows();
    let me = lp.a_eq.nrows();
    let m = mi + me;
    let nv = 2 * n + mi + m;
    let mut t = vec![vec![0.0; nv + 1]; m];
    for r in 0..m {
        let (row, rhs) = if r < mi {
            (lp.a_ub.row(r).into_owned(), lp.b_ub[r])
        } else {
            (lp.a_eq.row(r - mi).into_owned(), lp.b_eq[r - mi])
        };
        let s = if rhs < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[r][j] = s * row[j];
            t[r][n + j] = -s * row[j];
        }
        if r < mi {
            t[r][2 * n + r] = s;
        }
        t[r][2 * n + mi + r] = 1.0;
        t[r][nv] = s * rhs;
    }
    let mut basis: Vec<usize> = (0..m).map(|r| 2 * n + mi + r).collect();
    let pivot = |t: &mut Vec<Vec<f64>>, r: usize, c: usize| {
        let p = t[r][c];
        for v in t[r].iter_mut() {
            *v /= p;
        }
        for k in 0..t.len() {
            if k != r && t[k][c] != 0.0 {
                let f = t[k][c];
                for j in 0..=nv {
                    t[k][j] -= f * t[r][j];
                }
            }
        }
    };
    let optimise =
        |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, cost: &[f64], limit: usize| -> bool {
            loop {
                let reduced =
                    |j: usize| cost[j] - (0..m).map(|r| cost[basis[r]] * t[r][j]).sum::<f64>();
                let Some(q) = (0..limit).find(|&j| !basis.contains(&j) && reduced(j) < -1e-10)
                else {
                    return true;
                };
                let mut leave = None;
                for r in 0..m {
                    if t[r][q] > 1e-10 {
                        let ratio = t[r][nv] / t[r][q];
                        leave = match leave {
                            None => Some((r, ratio)),
                            Some((l, best))
                                if ratio < best - 1e-12
                                    || (ratio <= best + 1e-12 && basis[r] < basis[l]) =>
                            {
                                Some((r, ratio))
                            }
                            keep => keep,
                        };
                    }
                }
                let Some((r, _)) = leave else { return false };
                pivot(t, r, q);
                basis[r] = q;
            }
        };
    let mut c1 = vec![0.0; nv];
    for c in c1.iter_mut().skip(2 * n + mi) {
        *c = 1.0;
    }
    optimise(&mut t, &mut basis, &c1, nv);
    let art: f64 = (0..m)
        .filter(|&r| basis[r] >= 2 * n + mi)
        .map(|r| t[r][nv])
        .sum();
    if art > 1e-8 {
        return None;
    }
    for r in 0..m {
        if basis[r] >= 2 * n + mi {
            if let Some(c) = (0..2 * n + mi).find(|&j| t[r][j].abs() > 1e-9 && !basis.contains(&j))
            {
                pivot(&mut t, r, c);
                basis[r] = c;
            }
        }
    }
    let mut c2 = vec![0.0; nv];
    for j in 0..n {
        c2[j] = lp.c[j];
        c2[n + j] = -lp.c[j];
    }
    assert!(
        optimise(&mut t, &mut basis, &c2, 2 * n + mi),
        "oracle LP unbounded"
    );
    Some((0..m).map(|r| c2[basis[r]] * t[r][nv]).sum())
}

pub fn boxed(
    c: Vec<f64>,
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    eq: Vec<Vec<f64>>,
    eq_rhs: Vec<f64>,
    bound: f64,
) -> LinearProgram {
    let n = c.len();
    let mut ub_rows = rows;
    let mut ub_rhs = rhs;
    for i in 0..n {
        let mut r = vec![0.0; n];
        r[i] = 1.0;
        ub_rows.push(r.clone());
        ub_rhs.push(bound);
        r[i] = -1.0;
        ub_rows.push(r);
        ub_rhs.push(bound);
    }
    let a_ub = DMatrix::from_fn(ub_rows.len(), n, |i, j| ub_rows[i][j]);
    let a_eq = DMatrix::from_fn(eq.len(), n, |i, j| eq[i][j]);
    LinearProgram::new(
        DVector::from_vec(c),
        a_ub,
        DVector::from_vec(ub_rhs),
        a_eq,
        DVector::from_vec(eq_rhs),
    )
    .unwrap()
}

/// Random feasible LP inside the box `|x_i| ≤ 5`.
pub fn random_lp(seed: u64) -> LinearProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1usize..5);
    let mi = rng.random_range(0usize..8);
    let me = rng.random_range(0usize..3).min(n - 1);
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let row = |rng: &mut ChaCha8Rng| {
        (0..n)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect::<Vec<f64>>()
    };
    let dot = |r: &[f64]| r.iter().zip(&x0).map(|(a, b)| a * b).sum::<f64>();
    let mut rows = vec![];
    let mut rhs = vec![];
    for _ in 0..mi {
        let r = row(&mut rng);
        rhs.push(dot(&r) + rng.random_range(0.0..1.0));
        rows.push(r);
    }
    let mut eq = vec![];
    let mut eq_rhs = vec![];
    for _ in 0..me {
        let r = row(&mut rng);
        eq_rhs.push(dot(&r));
        eq.push(r);
    }
    let c = row(&mut rng);
    boxed(c, rows, rhs, eq, eq_rhs, 5.0)
}

pub fn line_problem(waypoints: &[f64], durations: &[f64], radius: f64) -> SpatialProblem {
    let m = durations.len();
    let centers: Vec<f64> = (0..m)
        .map(|i| 0.5 * (waypoints[i] + waypoints[i + 1]))
        .collect();
    let spheres = centers
        .iter()
        .map(|&x| Sphere::new(Vec3::new(x, 0.0, 0.0), radius))
        .collect();
    let corridor = SphereCorridor::new(spheres).unwrap();
    let path: Vec<Vec3> = waypoints.iter().map(|&x| Vec3::new(x, 0.0, 0.0)).collect();
    SpatialProblem::new(
        &corridor,
        vec![path],
        durations.to_vec(),
        SpatialConfig::default(),
    )
    .unwrap()
}

/// Minimum `∫ jerk²` for a scalar rest-to-rest motion through waypoints,
/// with jerk piecewise constant on `n` equal intervals, solved in closed
/// form as a least-norm problem and Richardson-extrapolated.
pub fn collocation_oracle(waypoints: &[(f64, f64)], total: f64, n: usize) -> f64 {
    let solve = |n: usize| {
        let h = total / n as f64;
        // constraints: a(T)=0, v(T)=0, x(t_w)=x_w for each waypoint after 0
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rhs = Vec::new();
        rows.push((0..n).map(|_| h).collect());
        rhs.push(0.0);
        rows.push((0..n).map(|i| h * (total - (i as f64 + 0.5) * h)).collect());
        rhs.push(0.0);
        for &(tw, xw) in &waypoints[1..] {
            let k = (tw / h).round() as usize;
            rows.push(
                (0..n)
                    .map(|i| {
                        if i < k {
                            let a = tw - i as f64 * h;
                            (a.powi(3) - (a - h).powi(3)) / 6.0
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            );
            rhs.push(xw - waypoints[0].1);
        }
        let c = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        let b = DVector::from_vec(rhs);
        let gram = &c * c.transpose();
        let y = gram.lu().solve(&b).unwrap();
        b.dot(&y) * h
    };
    let coarse = solve(n);
    let fine = solve(2 * n);
    (4.0 * fine - coarse) / 3.0
}
