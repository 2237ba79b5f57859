//! Reference computations the estimators are checked against. Everything
//! here is written out longhand and shares no numerical code with the
//! estimators beyond the mapping queries themselves.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mappings::{GraphPoint, MappingModel, SampledGraph};
use crate::moduli::RgSample;
use crate::spaces::ProductNormSpec;

/// Singular values of `A` (as many as `A` has rows, padded with zeros when
/// `A` is tall) and the singular pair attaining `σ_min = min_{‖y‖=1} ‖Aᵀy‖`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub values: Vec<f64>,
    /// Left singular vector (range space) for `σ_min`.
    pub u_min: Vec<f64>,
    /// Right singular vector (domain space) for `σ_min`.
    pub v_min: Vec<f64>,
}

impl SvdResult {
    pub fn sigma_min(&self) -> f64 {
        *self.values.last().unwrap_or(&0.0)
    }

    pub fn sigma_max(&self) -> f64 {
        *self.values.first().unwrap_or(&0.0)
    }
}

/// One-sided Jacobi SVD of `Aᵀ`, so the rotated columns live in the range
/// space of `A`.
pub fn sigma_min(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = (a.rows(), a.cols());
    // b = Aᵀ stored by columns: cols[j] is row j of A (length n).
    let mut cols: Vec<Vec<f64>> = (0..m).map(|j| a.row(j).to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            e
        })
        .collect();
    let mut converged = false;
    for _sweep in 0..200 {
        let mut rotated = false;
        for i in 0..m {
            for j in i + 1..m {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for k in 0..n {
                    alpha += cols[i][k] * cols[i][k];
                    beta += cols[j][k] * cols[j][k];
                    gamma += cols[i][k] * cols[j][k];
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..n {
                    let (p, q) = (cols[i][k], cols[j][k]);
                    cols[i][k] = c * p - s * q;
                    cols[j][k] = s * p + c * q;
                }
                for k in 0..m {
                    let (p, q) = (v[i][k], v[j][k]);
                    v[i][k] = c * p - s * q;
                    v[j][k] = s * p + c * q;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(200));
    }
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let values: Vec<f64> = order.iter().map(|&i| norms[i]).collect();
    let imin = *order.last().unwrap();
    let smin = norms[imin];
    let u_min = v[imin].clone();
    let v_min: Vec<f64> = if smin > 0.0 {
        cols[imin].iter().map(|x| x / smin).collect()
    } else {
        vec![0.0; n]
    };
    // Certify A v_min = σ_min u_min.
    let av = a.mul_vec(&v_min);
    let resid = av
        .iter()
        .zip(&u_min)
        .map(|(p, q)| (p - smin * q).powi(2))
        .sum::<f64>()
        .sqrt();
    if resid > 1e-10 * a.frobenius().max(1e-300) {
        return Err(Error::NoConvergence(200));
    }
    Ok(SvdResult {
        values,
        u_min,
        v_min,
    })
}

/// Smallest eigenvalue of the Gram matrix `A Aᵀ` (equal to `λ_min(AᵀA)` for
/// square `A`) by bisection on the characteristic polynomial, locating the
/// root through the inertia of `A Aᵀ − λI`.
pub fn lambda_min_gram(a: &Matrix) -> f64 {
    let m = a.rows();
    let mut g = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            g[i][j] = a.row(i).iter().zip(a.row(j)).map(|(p, q)| p * q).sum();
        }
    }
    let upper: f64 = (0..m).map(|i| g[i][i]).sum::<f64>() + 1.0;
    let (mut lo, mut hi) = (0.0f64, upper);
    if count_below(&g, 0.0) >= 1 {
        return 0.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(&g, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Number of eigenvalues of symmetric `g` strictly below `lambda` (signs of
/// the `LDLᵀ` pivots, Sylvester's law of inertia).
fn count_below(g: &[Vec<f64>], lambda: f64) -> usize {
    let m = g.len();
    let mut a: Vec<Vec<f64>> = g.to_vec();
    for (i, row) in a.iter_mut().enumerate() {
        row[i] -= lambda;
    }
    let mut neg = 0;
    for k in 0..m {
        let mut d = a[k][k];
        if d == 0.0 {
            d = -1e-300;
        }
        if d < 0.0 {
            neg += 1;
        }
        for i in k + 1..m {
            let l = a[i][k] / d;
            for j in k + 1..m {
                a[i][j] -= l * a[k][j];
            }
        }
    }
    neg
}

/// `inf d(y, F(x)) / d(x, F⁻¹(y))` over every `(x, y)` of the sample with
/// a positive, finite-or-infinite denominator. Each pair is evaluated from
/// scratch through `inverse_distance`.
pub fn brute_force_rg(f: &MappingModel, sample: &RgSample) -> f64 {
    let mut best = f64::INFINITY;
    for y in &sample.ys {
        for x in &sample.xs {
            let num = f.distance_to_image(x, y);
            if !num.is_finite() || num <= 0.0 {
                continue;
            }
            let den = f.inverse_distance(x, y);
            if den <= 0.0 {
                continue;
            }
            let ratio = if den.is_infinite() { 0.0 } else { num / den };
            if ratio < best {
                best = ratio;
            }
        }
    }
    best
}

/// Literal check of the ε-normal inequality for `w* = (wx, wy)` at `at`
/// against every sample point within `test_radius`.
pub fn brute_force_membership(
    sample: &SampledGraph,
    at: &GraphPoint,
    wx: &[f64],
    wy: &[f64],
    eps: f64,
    test_radius: f64,
    pair: &ProductNormSpec,
) -> bool {
    const ETA: f64 = 1e-9;
    for z in &sample.points {
        if z == at {
            continue;
        }
        let mut du = Vec::new();
        for i in 0..z.x.len() {
            du.push(z.x[i] - at.x[i]);
        }
        let mut dv = Vec::new();
        for i in 0..z.y.len() {
            dv.push(z.y[i] - at.y[i]);
        }
        let r = pair.left.p.eval(&du) + pair.right.p.eval(&dv);
        if r > test_radius || r == 0.0 {
            continue;
        }
        let mut pairing = 0.0;
        for i in 0..du.len() {
            pairing += wx[i] * du[i];
        }
        for i in 0..dv.len() {
            pairing += wy[i] * dv[i];
        }
        if pairing > (eps - ETA) * r {
            return false;
        }
    }
    true
}

/// Central differences, one coordinate at a time.
pub fn finite_difference_jacobian<F>(f: F, x: &[f64], h: f64) -> Matrix
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let m = f(x).len();
    let mut j = Matrix::zeros(m, n);
    let mut xp = x.to_vec();
    for c in 0..n {
        xp[c] = x[c] + h;
        let fp = f(&xp);
        xp[c] = x[c] - h;
        let fm = f(&xp);
        xp[c] = x[c];
        for r in 0..m {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn svd_of_diagonal() {
        let s = sigma_min(&Matrix::diag(&[2.0, 0.5])).unwrap();
        assert_eq!(s.values, vec![2.0, 0.5]);
        assert_eq!(s.sigma_min(), 0.5);
        assert!((s.v_min[0]).abs() < 1e-15 && (s.v_min[1].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn svd_of_identity() {
        for n in 1..6 {
            assert_eq!(sigma_min(&Matrix::identity(n)).unwrap().sigma_min(), 1.0);
        }
    }

    #[test]
    fn svd_of_tall_and_wide() {
        let tall = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(sigma_min(&tall).unwrap().sigma_min(), 0.0);
        let wide = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert!((sigma_min(&wide).unwrap().sigma_min() - 5.0).abs() < 1e-14);
    }

    #[test]
    fn svd_agrees_with_inertia_bisection() {
        let mut rng = crate::exec::rng(11, 0);
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let a = Matrix::from_rows(&rows).unwrap();
            let s = sigma_min(&a).unwrap().sigma_min();
            let l = lambda_min_gram(&a);
            assert!((s * s - l).abs() <= 1e-9, "{s} {l}");
        }
    }

    #[test]
    fn finite_differences_of_linear_and_square() {
        let a = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let j = finite_difference_jacobian(|x| a.mul_vec(x), &[0.3, -0.7], 1e-3);
        assert!(j.max_abs_diff(&a) < 1e-10);
        let j = finite_difference_jacobian(|x| vec![x[0] * x[0]], &[0.0], 1e-4);
        assert!(j[(0, 0)].abs() < 1e-9);
    }
}
