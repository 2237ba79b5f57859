//! Small convex programs solved with Clarabel: minimum-norm points of
//! polyhedra and `ℓ1`/`ℓ∞` distances to affine sets.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT,
};

use crate::spaces::NormKind;

/// Dense rows → CSC.
fn csc(rows: &[Vec<f64>], ncols: usize) -> CscMatrix<f64> {
    let m = rows.len();
    let mut colptr = Vec::with_capacity(ncols + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for j in 0..ncols {
        for (i, r) in rows.iter().enumerate() {
            let v = r[j];
            if v != 0.0 {
                rowval.push(i);
                nzval.push(v);
            }
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(m, ncols, colptr, rowval, nzval)
}

fn settings() -> DefaultSettings<f64> {
    DefaultSettings {
        verbose: false,
        max_iter: 200,
        ..DefaultSettings::default()
    }
}

/// `min ½xᵀPx + qᵀx  s.t.  A x ≤ b`. Returns `None` on (near) infeasibility.
fn solve_ineq(p_diag: &[f64], q: &[f64], a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = q.len();
    let p = {
        let mut colptr = vec![0];
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        for (j, &d) in p_diag.iter().enumerate() {
            if d != 0.0 {
                rowval.push(j);
                nzval.push(d);
            }
            colptr.push(rowval.len());
        }
        CscMatrix::new(n, n, colptr, rowval, nzval)
    };
    let amat = csc(a, n);
    let cones: [SupportedConeT<f64>; 1] = [NonnegativeConeT(a.len())];
    let mut solver = DefaultSolver::new(&p, q, &amat, b, &cones, settings()).ok()?;
    solver.solve();
    match solver.solution.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => Some(solver.solution.x.clone()),
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => None,
        _ => {
            // Accept a stalled iterate only if it is feasible to 1e-7.
            let x = solver.solution.x.clone();
            let ok = a
                .iter()
                .zip(b)
                .all(|(r, &bi)| r.iter().zip(&x).map(|(u, v)| u * v).sum::<f64>() <= bi + 1e-7);
            ok.then_some(x)
        }
    }
}

/// `argmin ‖x‖_kind  s.t.  ⟨a_i, x⟩ ≤ b_i`.
pub(crate) fn min_norm_polyhedron(
    rows: &[Vec<f64>],
    rhs: &[f64],
    dim: usize,
    kind: NormKind,
) -> Option<Vec<f64>> {
    if rows.is_empty() {
        return Some(vec![0.0; dim]);
    }
    match kind {
        NormKind::Two => solve_ineq(&vec![1.0; dim], &vec![0.0; dim], rows, rhs),
        NormKind::Inf => {
            // vars (x, t): min t, ±x_i − t ≤ 0
            let nv = dim + 1;
            let mut a = Vec::with_capacity(rows.len() + 2 * dim);
            let mut b = Vec::with_capacity(a.capacity());
            for i in 0..dim {
                for s in [1.0, -1.0] {
                    let mut r = vec![0.0; nv];
                    r[i] = s;
                    r[dim] = -1.0;
                    a.push(r);
                    b.push(0.0);
                }
            }
            for (r, &bi) in rows.iter().zip(rhs) {
                let mut rr = r.clone();
                rr.push(0.0);
                a.push(rr);
                b.push(bi);
            }
            let mut q = vec![0.0; nv];
            q[dim] = 1.0;
            solve_ineq(&vec![0.0; nv], &q, &a, &b).map(|mut x| {
                x.truncate(dim);
                x
            })
        }
        NormKind::One => {
            // vars (x, s): min Σ s_i, ±x_i − s_i ≤ 0
            let nv = 2 * dim;
            let mut a = Vec::with_capacity(rows.len() + 2 * dim);
            let mut b = Vec::with_capacity(a.capacity());
            for i in 0..dim {
                for s in [1.0, -1.0] {
                    let mut r = vec![0.0; nv];
                    r[i] = s;
                    r[dim + i] = -1.0;
                    a.push(r);
                    b.push(0.0);
                }
            }
            for (r, &bi) in rows.iter().zip(rhs) {
                let mut rr = r.clone();
                rr.resize(nv, 0.0);
                a.push(rr);
                b.push(bi);
            }
            let mut q = vec![0.0; nv];
            q[dim..].iter_mut().for_each(|v| *v = 1.0);
            solve_ineq(&vec![0.0; nv], &q, &a, &b).map(|mut x| {
                x.truncate(dim);
                x
            })
        }
    }
}

/// `min_c ‖z − N c‖_kind` for `kind ∈ {1, ∞}` (columns of `N` given as
/// `basis`). Returns the minimizing residual norm.
pub(crate) fn affine_residual_norm(z: &[f64], basis: &[Vec<f64>], kind: NormKind) -> f64 {
    let n = z.len();
    let k = basis.len();
    if k == 0 {
        return kind.eval(z);
    }
    match kind {
        NormKind::Two => {
            let mut r = z.to_vec();
            for b in basis {
                let c: f64 = b.iter().zip(z).map(|(u, v)| u * v).sum();
                crate::linalg::axpy(&mut r, -c, b);
            }
            crate::linalg::euclid(&r)
        }
        NormKind::Inf => {
            // vars (c, t): min t, ±(z − N c)_i ≤ t
            let nv = k + 1;
            let mut a = Vec::new();
            let mut bb = Vec::new();
            for i in 0..n {
                for s in [1.0, -1.0] {
                    // s(z_i − Σ N_ij c_j) ≤ t  →  −s Σ N_ij c_j − t ≤ −s z_i
                    let mut r = vec![0.0; nv];
                    for j in 0..k {
                        r[j] = -s * basis[j][i];
                    }
                    r[k] = -1.0;
                    a.push(r);
                    bb.push(-s * z[i]);
                }
            }
            let mut q = vec![0.0; nv];
            q[k] = 1.0;
            match solve_ineq(&vec![0.0; nv], &q, &a, &bb) {
                Some(x) => residual(z, basis, &x[..k], kind),
                None => kind.eval(z),
            }
        }
        NormKind::One => {
            // vars (c, s): min Σ s, ±(z − N c)_i ≤ s_i
            let nv = k + n;
            let mut a = Vec::new();
            let mut bb = Vec::new();
            for i in 0..n {
                for s in [1.0, -1.0] {
                    let mut r = vec![0.0; nv];
                    for j in 0..k {
                        r[j] = -s * basis[j][i];
                    }
                    r[k + i] = -1.0;
                    a.push(r);
                    bb.push(-s * z[i]);
                }
            }
            let mut q = vec![0.0; nv];
            q[k..].iter_mut().for_each(|v| *v = 1.0);
            match solve_ineq(&vec![0.0; nv], &q, &a, &bb) {
                Some(x) => residual(z, basis, &x[..k], kind),
                None => kind.eval(z),
            }
        }
    }
}

fn residual(z: &[f64], basis: &[Vec<f64>], c: &[f64], kind: NormKind) -> f64 {
    let mut r = z.to_vec();
    for (b, &cj) in basis.iter().zip(c) {
        crate::linalg::axpy(&mut r, -cj, b);
    }
    kind.eval(&r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euclidean_projection_onto_halfspace() {
        // x1 + x2 ≥ 2  →  −x1 − x2 ≤ −2; closest point (1,1).
        let x = min_norm_polyhedron(&[vec![-1.0, -1.0]], &[-2.0], 2, NormKind::Two).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_system_is_reported() {
        let rows = vec![vec![1.0], vec![-1.0]];
        assert!(min_norm_polyhedron(&rows, &[-1.0, -1.0], 1, NormKind::Two).is_none());
    }

    #[test]
    fn polyhedral_objectives() {
        // x1 ≥ 1, x2 ≥ 1
        let rows = vec![vec![-1.0, 0.0], vec![0.0, -1.0]];
        let rhs = [-1.0, -1.0];
        let x = min_norm_polyhedron(&rows, &rhs, 2, NormKind::Inf).unwrap();
        assert!((NormKind::Inf.eval(&x) - 1.0).abs() < 1e-6);
        let x = min_norm_polyhedron(&rows, &rhs, 2, NormKind::One).unwrap();
        assert!((NormKind::One.eval(&x) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn affine_residuals() {
        let z = [1.0, 1.0];
        let basis = vec![vec![1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt()]];
        assert!((affine_residual_norm(&z, &basis, NormKind::Two) - 2f64.sqrt()).abs() < 1e-12);
        // min_c ‖(1−c, 1+c)‖_∞ = 1 at c = 0; ‖·‖_1 = 2.
        assert!((affine_residual_norm(&z, &basis, NormKind::Inf) - 1.0).abs() < 1e-6);
        assert!((affine_residual_norm(&z, &basis, NormKind::One) - 2.0).abs() < 1e-6);
    }
}
