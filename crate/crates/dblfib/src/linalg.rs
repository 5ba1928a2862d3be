//! Small dense linear-algebra and differentiation helpers shared by the modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

pub type C64 = Complex64;

/// Full rank iff sigma_min / sigma_max exceeds this.
pub const RANK_RTOL: f64 = 1e-8;
/// Below this the matrix is declared rank deficient; between the two the verdict is inconclusive.
pub const RANK_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RankVerdict {
    Full,
    Deficient,
    Inconclusive,
}

/// Singular values in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// sigma_min / sigma_max where sigma_min is the min(rows, cols)-th singular value.
pub fn rank_margin(m: &DMatrix<f64>) -> f64 {
    let s = singular_values(m);
    if s.is_empty() || s[0] == 0.0 || !s[0].is_finite() {
        return 0.0;
    }
    s[s.len() - 1] / s[0]
}

pub fn rank_verdict(margin: f64) -> RankVerdict {
    if margin > RANK_RTOL {
        RankVerdict::Full
    } else if margin >= RANK_FLOOR {
        RankVerdict::Inconclusive
    } else {
        RankVerdict::Deficient
    }
}

/// Numerical rank with relative threshold.
pub fn numerical_rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    let s = singular_values(m);
    if s.is_empty() || s[0] == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rtol * s[0]).count()
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn null_space(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let ncols = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(ncols, ncols);
    }
    // Pad to a square matrix so the SVD returns a full right basis.
    let rows = m.nrows().max(ncols);
    let mut a = DMatrix::zeros(rows, ncols);
    a.view_mut((0, 0), (m.nrows(), ncols)).copy_from(m);
    let svd = a.svd(false, true);
    let vt = svd.v_t.unwrap();
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cols: Vec<DVector<f64>> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= rtol * smax.max(f64::MIN_POSITIVE))
        .map(|i| vt.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(ncols, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Minimum-norm least-squares solution of a x = b.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    svd.solve(b, 1e-14 * smax.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(xi, yi)| a * xi + yi).collect()
}

/// Central-difference step for coordinate value `x` and relative step `h`.
pub fn fd_step(x: f64, h: f64) -> f64 {
    h * x.abs().max(1.0)
}

/// Jacobian (rows = outputs) by central differences.
pub fn fd_jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let f0 = f(x);
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let hj = fd_step(x[j], h);
        xp[j] = x[j] + hj;
        let fp = f(&xp);
        xp[j] = x[j] - hj;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..f0.len() {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * hj);
        }
    }
    jac
}

pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|j| {
            let hj = fd_step(x[j], h);
            xp[j] = x[j] + hj;
            let fp = f(&xp);
            xp[j] = x[j] - hj;
            let fm = f(&xp);
            xp[j] = x[j];
            (fp - fm) / (2.0 * hj)
        })
        .collect()
}

/// Step for the four-point holomorphic derivative.
pub const HOLO_STEP: f64 = 1e-3;

/// Jacobian of a holomorphic map using the four-point circle stencil
/// f'(w) ~ [f(w+h) - f(w-h) - i f(w+ih) + i f(w-ih)] / 4h, error O(h^4).
pub fn holo_jacobian(f: &dyn Fn(&[C64]) -> Vec<C64>, w: &[C64]) -> DMatrix<C64> {
    let m = w.len();
    let mut cols: Vec<Vec<C64>> = Vec::with_capacity(m);
    let i = C64::new(0.0, 1.0);
    let mut wp = w.to_vec();
    for j in 0..m {
        let h = HOLO_STEP * w[j].norm().max(1.0);
        let mut eval = |d: C64| {
            wp[j] = w[j] + d;
            let v = f(&wp);
            wp[j] = w[j];
            v
        };
        let a = eval(C64::new(h, 0.0));
        let b = eval(C64::new(-h, 0.0));
        let c = eval(C64::new(0.0, h));
        let d = eval(C64::new(0.0, -h));
        cols.push(
            (0..a.len())
                .map(|k| (a[k] - b[k] - i * c[k] + i * d[k]) / (4.0 * h))
                .collect(),
        );
    }
    let rows = cols.first().map(|c| c.len()).unwrap_or(0);
    DMatrix::from_fn(rows, m, |r, c| cols[c][r])
}

pub fn holo_derivative(f: &dyn Fn(C64) -> C64, w: C64) -> C64 {
    let h = HOLO_STEP * w.norm().max(1.0);
    let i = C64::new(0.0, 1.0);
    (f(w + h) - f(w - h) - i * f(w + i * h) + i * f(w - i * h)) / (4.0 * h)
}

pub fn to_complex(x: &[f64]) -> Vec<C64> {
    x.iter().map(|&v| C64::new(v, 0.0)).collect()
}

pub fn cdot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Outcome of a complex Newton solve.
#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub root: Vec<C64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Newton iteration for a square holomorphic system with holomorphic-stencil Jacobians.
pub fn complex_newton(
    f: &dyn Fn(&[C64]) -> Vec<C64>,
    start: &[C64],
    tol: f64,
    max_iter: usize,
) -> NewtonOutcome {
    let mut w = start.to_vec();
    let mut r = f(&w);
    let mut res = cnorm(&r);
    for it in 0..max_iter {
        if res < tol {
            return NewtonOutcome { root: w, residual: res, iterations: it, converged: true };
        }
        let jac = holo_jacobian(f, &w);
        let rhs = DVector::from_iterator(r.len(), r.iter().map(|v| -v));
        let step = match jac.lu().solve(&rhs) {
            Some(s) => s,
            None => break,
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<C64> = w.iter().zip(step.iter()).map(|(a, b)| a + b * t).collect();
            let rt = f(&trial);
            let rn = cnorm(&rt);
            if rn.is_finite() && rn < res * (1.0 - 1e-4 * t) || rn < tol {
                w = trial;
                r = rt;
                res = rn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    NewtonOutcome { converged: res < tol, root: w, residual: res, iterations: max_iter }
}

pub fn cnorm(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Gauss-Newton / Levenberg-Marquardt on a real residual map. Returns (x, |r|).
pub fn levenberg_marquardt(
    f: &dyn Fn(&[f64]) -> Vec<f64>,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let mut x = start.to_vec();
    let mut r = f(&x);
    let mut cost = norm(&r);
    let mut mu = 1e-6;
    for _ in 0..max_iter {
        if cost < tol || !cost.is_finite() {
            break;
        }
        let j = fd_jacobian(f, &x, 1e-7);
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * DVector::from_column_slice(&r);
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            let scale = jtj.diagonal().amax().max(1e-12);
            for i in 0..a.nrows() {
                a[(i, i)] += mu * scale;
            }
            let step = match a.lu().solve(&(-&g)) {
                Some(s) => s,
                None => {
                    mu *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rt = f(&trial);
            let ct = norm(&rt);
            if ct.is_finite() && ct < cost {
                x = trial;
                r = rt;
                cost = ct;
                mu = (mu * 0.3).max(1e-12);
                improved = true;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (x, cost)
}
