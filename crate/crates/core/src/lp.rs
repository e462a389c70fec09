//! Dense linear programming.
//!
//! Problems have the form `min cᵀx  s.t.  A_ub x ≤ b_ub,  A_eq x = b_eq` with
//! free `x`. The solver runs the revised simplex method on the dual in
//! standard form, so the basis has one row per primal variable. The time
//! allocation problems solved here have few variables and many rows, which
//! keeps every basis factorization tiny.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub c: DVector<f64>,
    pub a_ub: DMatrix<f64>,
    pub b_ub: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
}

impl LinearProgram {
    pub fn new(
        c: DVector<f64>,
        a_ub: DMatrix<f64>,
        b_ub: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
    ) -> Result<Self> {
        let n = c.len();
        if a_ub.ncols() != n
            || a_eq.ncols() != n
            || a_ub.nrows() != b_ub.len()
            || a_eq.nrows() != b_eq.len()
        {
            return Err(Error::Assembly(format!(
                "LP dimensions disagree: c {n}, A_ub {}x{}, b_ub {}, A_eq {}x{}, b_eq {}",
                a_ub.nrows(),
                a_ub.ncols(),
                b_ub.len(),
                a_eq.nrows(),
                a_eq.ncols(),
                b_eq.len()
            )));
        }
        let finite = |s: &[f64]| s.iter().all(|v| v.is_finite());
        if !(finite(c.as_slice())
            && finite(a_ub.as_slice())
            && finite(b_ub.as_slice())
            && finite(a_eq.as_slice())
            && finite(b_eq.as_slice()))
        {
            return Err(Error::Assembly(
                "LP data contains non-finite entries".into(),
            ));
        }
        Ok(Self {
            c,
            a_ub,
            b_ub,
            a_eq,
            b_eq,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    /// Largest constraint violation at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let ub = (&self.a_ub * x - &self.b_ub)
            .iter()
            .fold(0.0f64, |m, v| m.max(*v));
        let eq = (&self.a_eq * x - &self.b_eq)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        ub.max(eq)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Nonnegative multipliers of the inequality rows.
    pub ineq_duals: DVector<f64>,
    pub eq_duals: DVector<f64>,
    pub iterations: usize,
}

impl LpSolution {
    /// Indices of inequality rows with a positive multiplier.
    pub fn active_set(&self) -> Vec<usize> {
        (0..self.ineq_duals.len())
            .filter(|&i| self.ineq_duals[i] > TOL)
            .collect()
    }
}

enum Outcome {
    Optimal,
    Unbounded(DVector<f64>),
}

struct Simplex {
    a: DMatrix<f64>,
    b: DVector<f64>,
    basis: Vec<usize>,
    iterations: usize,
    max_iterations: usize,
}

impl Simplex {
    fn basis_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.a.nrows(), self.basis.len(), |i, k| {
            self.a[(i, self.basis[k])]
        })
    }

    fn multipliers(&self, bm: &DMatrix<f64>, cost: &DVector<f64>) -> Result<DVector<f64>> {
        let cb = DVector::from_iterator(self.basis.len(), self.basis.iter().map(|&j| cost[j]));
        bm.transpose()
            .lu()
            .solve(&cb)
            .ok_or_else(|| Error::Internal("singular simplex basis".into()))
    }

    fn primal(&self, bm: &DMatrix<f64>) -> Result<DVector<f64>> {
        bm.clone()
            .lu()
            .solve(&self.b)
            .ok_or_else(|| Error::Internal("singular simplex basis".into()))
    }

    fn run(&mut self, cost: &DVector<f64>, allowed: usize) -> Result<Outcome> {
        let n = self.a.nrows();
        let mut degenerate = 0usize;
        let mut bland = false;
        let mut is_basic = vec![false; self.a.ncols()];
        for &j in &self.basis {
            is_basic[j] = true;
        }
        loop {
            if self.iterations >= self.max_iterations {
                return Err(Error::Internal(format!(
                    "simplex iteration cap {} reached",
                    self.max_iterations
                )));
            }
            self.iterations += 1;
            let bm = self.basis_matrix();
            let lu = bm.clone().lu();
            let y = lu
                .solve(&self.b)
                .ok_or_else(|| Error::Internal("singular simplex basis".into()))?;
            let pi = self.multipliers(&bm, cost)?;

            let mut entering = None;
            let mut best = -TOL;
            for j in 0..allowed {
                if is_basic[j] {
                    continue;
                }
                let scale = 1.0 + self.a.column(j).amax();
                let r = (cost[j] - self.a.column(j).dot(&pi)) / scale;
                if r < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = r;
                }
            }
            let Some(q) = entering else {
                return Ok(Outcome::Optimal);
            };

            let d = lu
                .solve(&self.a.column(q).into_owned())
                .ok_or_else(|| Error::Internal("singular simplex basis".into()))?;
            let mut leave: Option<usize> = None;
            let mut step = f64::INFINITY;
            for i in 0..n {
                if d[i] > TOL {
                    let ratio = y[i].max(0.0) / d[i];
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            ratio < step - TOL
                                || (ratio <= step + TOL && self.basis[i] < self.basis[l])
                        }
                    };
                    if better {
                        leave = Some(i);
                        step = step.min(ratio);
                    }
                }
            }
            let Some(l) = leave else {
                let mut ray = DVector::zeros(self.a.ncols());
                ray[q] = 1.0;
                for i in 0..n {
                    ray[self.basis[i]] = -d[i];
                }
                return Ok(Outcome::Unbounded(ray));
            };
            if step <= TOL {
                degenerate += 1;
                if degenerate > 2 * n + 10 {
                    bland = true;
                }
            } else {
                degenerate = 0;
            }
            is_basic[self.basis[l]] = false;
            is_basic[q] = true;
            self.basis[l] = q;
        }
    }
}

/// Solves the LP; infeasible problems return a Farkas certificate
/// `(λ, μ)` with `λ ≥ 0`, `A_ubᵀλ + A_eqᵀμ = 0` and `b_ubᵀλ + b_eqᵀμ < 0`.
pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    let n = lp.num_vars();
    let mi = lp.a_ub.nrows();
    let me = lp.a_eq.nrows();
    let cols = mi + 2 * me;
    if n == 0 {
        let x = DVector::zeros(0);
        if lp.max_violation(&x) > TOL {
            return Err(Error::LpInfeasible {
                certificate: vec![],
            });
        }
        return Ok(LpSolution {
            x,
            objective: 0.0,
            ineq_duals: DVector::zeros(mi),
            eq_duals: DVector::zeros(me),
            iterations: 0,
        });
    }

    // Dual in standard form: min wᵀy  s.t. [A_ubᵀ A_eqᵀ -A_eqᵀ] y = -c, y ≥ 0.
    let sign = DVector::from_iterator(n, lp.c.iter().map(|&ci| if -ci < 0.0 { -1.0 } else { 1.0 }));
    let mut a = DMatrix::zeros(n, cols + n);
    let mut w = DVector::zeros(cols + n);
    for i in 0..n {
        for j in 0..mi {
            a[(i, j)] = sign[i] * lp.a_ub[(j, i)];
        }
        for j in 0..me {
            a[(i, mi + j)] = sign[i] * lp.a_eq[(j, i)];
            a[(i, mi + me + j)] = -sign[i] * lp.a_eq[(j, i)];
        }
        a[(i, cols + i)] = 1.0;
    }
    for j in 0..mi {
        w[j] = lp.b_ub[j];
    }
    for j in 0..me {
        w[mi + j] = lp.b_eq[j];
        w[mi + me + j] = -lp.b_eq[j];
    }
    let b = DVector::from_iterator(n, (0..n).map(|i| -sign[i] * lp.c[i]));

    let mut sx = Simplex {
        a,
        b,
        basis: (cols..cols + n).collect(),
        iterations: 0,
        max_iterations: 50 * (cols + n) + 1000,
    };

    let mut phase1 = DVector::zeros(cols + n);
    phase1.rows_mut(cols, n).fill(1.0);
    match sx.run(&phase1, cols + n)? {
        Outcome::Optimal => {}
        Outcome::Unbounded(_) => return Err(Error::Internal("phase I cannot be unbounded".into())),
    }
    let bm = sx.basis_matrix();
    let y = sx.primal(&bm)?;
    let infeas: f64 = (0..n)
        .filter(|&i| sx.basis[i] >= cols)
        .map(|i| y[i].max(0.0))
        .sum();
    if infeas > 1e-8 * (1.0 + sx.b.amax()) {
        return Err(Error::Internal(
            "LP objective is unbounded below or the problem has no dual".into(),
        ));
    }
    drive_out_artificials(&mut sx, cols)?;

    match sx.run(&w, cols)? {
        Outcome::Optimal => {}
        Outcome::Unbounded(ray) => {
            let mut cert = Vec::with_capacity(mi + me);
            cert.extend((0..mi).map(|j| ray[j]));
            cert.extend((0..me).map(|j| ray[mi + j] - ray[mi + me + j]));
            return Err(Error::LpInfeasible { certificate: cert });
        }
    }

    let bm = sx.basis_matrix();
    let pi = sx.multipliers(&bm, &w)?;
    let x = pi.component_mul(&sign);
    let y = sx.primal(&bm)?;
    let mut full = DVector::zeros(cols + n);
    for (i, &j) in sx.basis.iter().enumerate() {
        full[j] = y[i].max(0.0);
    }
    let ineq_duals = full.rows(0, mi).into_owned();
    let eq_duals = DVector::from_iterator(me, (0..me).map(|j| full[mi + j] - full[mi + me + j]));

    let scale =
        1.0 + lp.b_ub.amax().max(lp.b_eq.amax()) + x.amax() * lp.a_ub.amax().max(lp.a_eq.amax());
    let viol = lp.max_violation(&x);
    if viol > 1e-7 * scale {
        return Err(Error::Internal(format!(
            "simplex returned a point violating constraints by {viol:e}"
        )));
    }
    Ok(LpSolution {
        objective: lp.c.dot(&x),
        x,
        ineq_duals,
        eq_duals,
        iterations: sx.iterations,
    })
}

/// Replaces artificial columns left in the basis at zero level. Rows where
/// no structural column has a nonzero entry are redundant; their artificial
/// stays basic at zero and never moves.
fn drive_out_artificials(sx: &mut Simplex, cols: usize) -> Result<()> {
    let n = sx.a.nrows();
    for i in 0..n {
        if sx.basis[i] < cols {
            continue;
        }
        let bm = sx.basis_matrix();
        let mut unit = DVector::zeros(n);
        unit[i] = 1.0;
        let row = bm
            .transpose()
            .lu()
            .solve(&unit)
            .ok_or_else(|| Error::Internal("singular simplex basis".into()))?;
        let mut best = (1e-9, None);
        for j in 0..cols {
            if sx.basis.contains(&j) {
                continue;
            }
            let v = sx.a.column(j).dot(&row).abs();
            if v > best.0 {
                best = (v, Some(j));
            }
        }
        if let Some(j) = best.1 {
            sx.basis[i] = j;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxed(
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

    #[test]
    fn small_textbook_problem() {
        // max 3x + 5y  s.t. x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18, x, y ≥ 0
        let lp = LinearProgram::new(
            DVector::from_vec(vec![-3.0, -5.0]),
            DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 0.0, 2.0, 3.0, 2.0, -1.0, 0.0, 0.0, -1.0]),
            DVector::from_vec(vec![4.0, 12.0, 18.0, 0.0, 0.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap();
        let s = solve(&lp).unwrap();
        assert!((s.objective + 36.0).abs() < 1e-9);
        assert!((&s.x - DVector::from_vec(vec![2.0, 6.0])).norm() < 1e-9);
        assert_eq!(s.active_set(), vec![1, 2]);
    }

    #[test]
    fn equality_constraints() {
        // min x + 2y + 3z  s.t. x + y + z = 1, x - y = 0, all ≥ 0
        let lp = LinearProgram::new(
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            -DMatrix::identity(3, 3),
            DVector::zeros(3),
            DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 1.0, -1.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let s = solve(&lp).unwrap();
        assert!((s.objective - 1.5).abs() < 1e-9);
    }

    #[test]
    fn infeasible_problem_yields_farkas_certificate() {
        // x ≤ 1, -x ≤ -2
        let lp = LinearProgram::new(
            DVector::from_vec(vec![1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![1.0, -2.0]),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
        )
        .unwrap();
        let Err(Error::LpInfeasible { certificate }) = solve(&lp) else {
            panic!("expected infeasibility");
        };
        let lam = DVector::from_vec(certificate);
        assert!(lam.iter().all(|&v| v >= 0.0));
        assert!((lp.a_ub.transpose() * &lam).norm() < 1e-12);
        assert!(lp.b_ub.dot(&lam) < 0.0);
    }

    #[test]
    fn dimension_mismatch_is_assembly_error() {
        let r = LinearProgram::new(
            DVector::zeros(2),
            DMatrix::zeros(1, 3),
            DVector::zeros(1),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        );
        assert!(matches!(r, Err(Error::Assembly(_))));
    }

    #[test]
    fn degenerate_vertex() {
        // many constraints through the optimum
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|k| {
                let a = k as f64 * 0.1;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let rhs: Vec<f64> = rows.iter().map(|r| r[0] + r[1]).collect();
        let lp = boxed(vec![-1.0, -1.0], rows, rhs, vec![], vec![], 10.0);
        let s = solve(&lp).unwrap();
        assert!((s.objective + 2.0).abs() < 1e-9);
    }
}
