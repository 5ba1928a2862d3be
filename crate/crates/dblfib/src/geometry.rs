//! Charts, scalar fields, bundle vector fields, adaptive flow integration,
//! exit times, Hamiltonian fields and Poisson brackets.

use crate::linalg::{dot, fd_gradient, fd_jacobian, norm};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VecFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type MatFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
pub type SymbolFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type SymbolGradFn = Arc<dyn Fn(&[f64], &[f64]) -> (Vec<f64>, Vec<f64>) + Send + Sync>;

/// Relative central-difference step for derivatives of user maps.
pub const FD_STEP: f64 = 1e-6;
/// Exit points are bisected until |rho| falls below this.
pub const BOUNDARY_TOL: f64 = 1e-10;
/// Normalized |grad rho . xdot| below this at an exit is a tangential exit.
pub const TANGENCY_TOL: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error("vector field produced a non-finite value at t = {t}")]
    NonFinite { t: f64 },
    #[error("tangential exit at t = {t} (normalized transversality {ratio:.3e})")]
    TangentialExit { t: f64, ratio: f64 },
    #[error("start point lies outside the domain (rho = {rho:.3e})")]
    StartOutside { rho: f64 },
    #[error("orbit trapped: no boundary exit before t = {horizon}")]
    Trapped { horizon: f64 },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
}

/// Coordinate box with optional boundary defining function, metric and symbol.
#[derive(Clone)]
pub struct ChartGeometry {
    pub dim_n: usize,
    pub bbox: Vec<(f64, f64)>,
    pub boundary_fn: Option<ScalarFn>,
    pub metric: Option<MatFn>,
    /// Number of negative eigenvalues expected of the metric (0 for Riemannian).
    pub negative_index: usize,
    pub symbol: Option<Symbol>,
}

impl std::fmt::Debug for ChartGeometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChartGeometry")
            .field("dim_n", &self.dim_n)
            .field("bbox", &self.bbox)
            .field("boundary_fn", &self.boundary_fn.is_some())
            .field("metric", &self.metric.is_some())
            .finish()
    }
}

impl ChartGeometry {
    pub fn new(bbox: Vec<(f64, f64)>) -> Result<Self, GeometryError> {
        if bbox.is_empty() {
            return Err(GeometryError::InvalidChart("empty box".into()));
        }
        for (i, (lo, hi)) in bbox.iter().enumerate() {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(GeometryError::InvalidChart(format!(
                    "axis {i} has non-positive extent [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { dim_n: bbox.len(), bbox, boundary_fn: None, metric: None, negative_index: 0, symbol: None })
    }

    /// Unit-radius style ball {|x - c|^2 - r^2 <= 0} with a box padded around it.
    pub fn ball(center: &[f64], radius: f64) -> Self {
        let c = center.to_vec();
        let pad = 1.25 * radius;
        let bbox = center.iter().map(|&ci| (ci - pad, ci + pad)).collect();
        let r2 = radius * radius;
        Self::new(bbox)
            .unwrap()
            .with_boundary(Arc::new(move |x: &[f64]| {
                x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() - r2
            }))
    }

    pub fn with_boundary(mut self, rho: ScalarFn) -> Self {
        self.boundary_fn = Some(rho);
        self
    }

    pub fn with_metric(mut self, g: MatFn, negative_index: usize) -> Self {
        self.metric = Some(g);
        self.negative_index = negative_index;
        self
    }

    pub fn with_symbol(mut self, p: Symbol) -> Self {
        self.symbol = Some(p);
        self
    }

    pub fn diameter(&self) -> f64 {
        self.bbox.iter().map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
    }

    pub fn in_box(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.bbox).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    /// Amount by which `x` lies outside the box (negative inside).
    pub fn box_excess(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.bbox)
            .map(|(v, (a, b))| (a - v).max(v - b))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Combined exit function: positive outside M or outside the box.
    pub fn exit_fn(&self, x: &[f64]) -> f64 {
        let b = self.box_excess(x);
        match &self.boundary_fn {
            Some(rho) => rho(x).max(b),
            None => b,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.exit_fn(x) <= 0.0
    }

    pub fn grad_exit(&self, x: &[f64]) -> Vec<f64> {
        let f = |y: &[f64]| self.exit_fn(y);
        fd_gradient(&f, x, FD_STEP)
    }

    /// Checks metric symmetry/signature and boundary transversality on random samples.
    pub fn validate(&self, samples: usize, seed: u64) -> Result<(), GeometryError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            self.bbox.iter().map(|(a, b)| rng.gen_range(*a..*b)).collect()
        };
        if let Some(g) = &self.metric {
            for _ in 0..samples {
                let x = draw(&mut rng);
                let m = g(&x);
                if m.nrows() != self.dim_n || m.ncols() != self.dim_n {
                    return Err(GeometryError::InvalidChart("metric has wrong shape".into()));
                }
                if (&m - m.transpose()).amax() > 1e-10 * m.amax().max(1.0) {
                    return Err(GeometryError::InvalidChart(format!("metric not symmetric at {x:?}")));
                }
                let eig = m.symmetric_eigen().eigenvalues;
                let scale = eig.amax().max(1e-300);
                if eig.iter().any(|e| e.abs() < 1e-12 * scale) {
                    return Err(GeometryError::InvalidChart(format!("metric degenerate at {x:?}")));
                }
                let neg = eig.iter().filter(|e| **e < 0.0).count();
                if neg != self.negative_index {
                    return Err(GeometryError::InvalidChart(format!(
                        "metric signature mismatch at {x:?}: {neg} negative eigenvalues"
                    )));
                }
            }
        }
        if let Some(rho) = &self.boundary_fn {
            for _ in 0..samples {
                let mut x = draw(&mut rng);
                for _ in 0..50 {
                    let r = rho(&x);
                    let f = |y: &[f64]| rho(y);
                    let g = fd_gradient(&f, &x, FD_STEP);
                    let g2 = dot(&g, &g);
                    if g2 < 1e-300 {
                        break;
                    }
                    for (xi, gi) in x.iter_mut().zip(&g) {
                        *xi -= r * gi / g2;
                    }
                    if r.abs() < 1e-12 {
                        break;
                    }
                }
                if rho(&x).abs() < 1e-9 && self.in_box(&x) {
                    let f = |y: &[f64]| rho(y);
                    let g = fd_gradient(&f, &x, FD_STEP);
                    if norm(&g) < 1e-8 {
                        return Err(GeometryError::InvalidChart(format!(
                            "boundary gradient vanishes at {x:?}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Scalar field on the chart; zero outside `support`. `interfaces` lists functions
/// whose zero sets carry the jumps of the field (empty for smooth fields).
#[derive(Clone)]
pub struct ScalarField {
    eval: ScalarFn,
    pub support: Vec<(f64, f64)>,
    pub interfaces: Vec<ScalarFn>,
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField")
            .field("support", &self.support)
            .field("interfaces", &self.interfaces.len())
            .finish()
    }
}

impl ScalarField {
    pub fn new(support: Vec<(f64, f64)>, eval: ScalarFn) -> Self {
        Self { eval, support, interfaces: Vec::new() }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(vec![(-1.0, 1.0); dim], Arc::new(|_: &[f64]| 0.0))
    }

    pub fn with_interface(mut self, g: ScalarFn) -> Self {
        self.interfaces.push(g);
        self
    }

    pub fn dim(&self) -> usize {
        self.support.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if x.iter().zip(&self.support).any(|(v, (a, b))| *v < *a || *v > *b) {
            return 0.0;
        }
        (self.eval)(x)
    }

    pub fn is_smooth(&self) -> bool {
        self.interfaces.is_empty()
    }

    /// Gaussian exp(-|x - c|^2 / (2 s^2)) truncated at 8.5 s (relative tail < 1e-15).
    pub fn gaussian(center: &[f64], sigma: f64) -> Self {
        let c = center.to_vec();
        let support = center.iter().map(|&ci| (ci - 8.5 * sigma, ci + 8.5 * sigma)).collect();
        let s2 = 2.0 * sigma * sigma;
        Self::new(
            support,
            Arc::new(move |x: &[f64]| {
                (-x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / s2).exp()
            }),
        )
    }

    /// Indicator of the ball |x - c| < r.
    pub fn ball_indicator(center: &[f64], r: f64) -> Self {
        let c = center.to_vec();
        let c2 = c.clone();
        let support = center.iter().map(|&ci| (ci - r, ci + r)).collect();
        let r2 = r * r;
        Self::new(
            support,
            Arc::new(move |x: &[f64]| {
                let d: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < r2 {
                    1.0
                } else {
                    0.0
                }
            }),
        )
        .with_interface(Arc::new(move |x: &[f64]| {
            x.iter().zip(&c2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() - r2
        }))
    }

    /// Indicator of the annulus r0 < |x| < r1 centred at the origin.
    pub fn annulus_indicator(dim: usize, r0: f64, r1: f64) -> Self {
        let support = vec![(-r1, r1); dim];
        let (a2, b2) = (r0 * r0, r1 * r1);
        Self::new(
            support,
            Arc::new(move |x: &[f64]| {
                let d: f64 = x.iter().map(|v| v * v).sum();
                if d > a2 && d < b2 {
                    1.0
                } else {
                    0.0
                }
            }),
        )
        .with_interface(Arc::new(move |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() - a2))
        .with_interface(Arc::new(move |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() - b2))
    }

    /// Smooth compactly supported bump exp(1 - 1/(1 - |x-c|^2/r^2)).
    pub fn bump(center: &[f64], r: f64) -> Self {
        let c = center.to_vec();
        let support = center.iter().map(|&ci| (ci - r, ci + r)).collect();
        Self::new(
            support,
            Arc::new(move |x: &[f64]| {
                let q: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (r * r);
                if q < 1.0 {
                    (1.0 - 1.0 / (1.0 - q)).exp()
                } else {
                    0.0
                }
            }),
        )
    }
}

/// Point of a bundle over the chart: base coordinates plus fiber coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BundlePoint {
    pub base: Vec<f64>,
    pub fiber: Vec<f64>,
}

impl BundlePoint {
    pub fn new(base: Vec<f64>, fiber: Vec<f64>) -> Self {
        Self { base, fiber }
    }

    pub fn state(&self) -> Vec<f64> {
        let mut s = self.base.clone();
        s.extend_from_slice(&self.fiber);
        s
    }

    pub fn from_state(state: &[f64], base_dim: usize) -> Self {
        Self { base: state[..base_dim].to_vec(), fiber: state[base_dim..].to_vec() }
    }
}

/// Scalar function p(x, xi) on the cotangent chart.
#[derive(Clone)]
pub struct Symbol {
    pub n: usize,
    f: SymbolFn,
    grad: Option<SymbolGradFn>,
    pub fd_step: f64,
    /// Degree of homogeneity in xi, when p is homogeneous.
    pub degree: Option<f64>,
}

impl std::fmt::Debug for Symbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Symbol")
            .field("n", &self.n)
            .field("analytic_grad", &self.grad.is_some())
            .field("degree", &self.degree)
            .finish()
    }
}

impl Symbol {
    pub fn new(n: usize, f: SymbolFn) -> Self {
        Self { n, f, grad: None, fd_step: FD_STEP, degree: None }
    }

    pub fn with_grad(mut self, g: SymbolGradFn) -> Self {
        self.grad = Some(g);
        self
    }

    pub fn homogeneous(mut self, degree: f64) -> Self {
        self.degree = Some(degree);
        self
    }

    pub fn has_analytic_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn eval(&self, x: &[f64], xi: &[f64]) -> f64 {
        (self.f)(x, xi)
    }

    /// (grad_x p, grad_xi p).
    pub fn grad(&self, x: &[f64], xi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        if let Some(g) = &self.grad {
            return g(x, xi);
        }
        let gx = fd_gradient(&|y: &[f64]| (self.f)(y, xi), x, self.fd_step);
        let gxi = fd_gradient(&|y: &[f64]| (self.f)(x, y), xi, self.fd_step);
        (gx, gxi)
    }

    pub fn grad_x(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        self.grad(x, xi).0
    }

    pub fn grad_xi(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        self.grad(x, xi).1
    }

    /// p = xi^T G xi with constant symmetric G.
    pub fn quadratic_form(g: DMatrix<f64>) -> Self {
        let n = g.nrows();
        let g1 = g.clone();
        let g2 = g;
        Self::new(
            n,
            Arc::new(move |_x: &[f64], xi: &[f64]| {
                let v = nalgebra::DVector::from_column_slice(xi);
                (v.transpose() * &g1 * &v)[(0, 0)]
            }),
        )
        .with_grad(Arc::new(move |x: &[f64], xi: &[f64]| {
            let v = nalgebra::DVector::from_column_slice(xi);
            let gx = vec![0.0; x.len()];
            let gxi = ((&g2 + g2.transpose()) * v).iter().copied().collect();
            (gx, gxi)
        }))
        .homogeneous(2.0)
    }

    /// p = |xi|^2 / 2, unit-speed Euclidean geodesics on {p = 1/2}.
    pub fn euclidean_half(n: usize) -> Self {
        Self::new(n, Arc::new(|_x: &[f64], xi: &[f64]| 0.5 * dot(xi, xi)))
            .with_grad(Arc::new(|x: &[f64], xi: &[f64]| (vec![0.0; x.len()], xi.to_vec())))
            .homogeneous(2.0)
    }

    /// p = |xi|^2 - 1 (Riemannian characteristic mode, flat metric).
    pub fn cosphere(n: usize) -> Self {
        Self::new(n, Arc::new(|_x: &[f64], xi: &[f64]| dot(xi, xi) - 1.0))
            .with_grad(Arc::new(|x: &[f64], xi: &[f64]| {
                (vec![0.0; x.len()], xi.iter().map(|v| 2.0 * v).collect())
            }))
    }

    /// p = -xi_0^2 + |xi'|^2 on R^{1+(n-1)}.
    pub fn minkowski(n: usize) -> Self {
        Self::new(
            n,
            Arc::new(|_x: &[f64], xi: &[f64]| -xi[0] * xi[0] + xi[1..].iter().map(|v| v * v).sum::<f64>()),
        )
        .with_grad(Arc::new(|x: &[f64], xi: &[f64]| {
            let mut g: Vec<f64> = xi.iter().map(|v| 2.0 * v).collect();
            g[0] = -g[0];
            (vec![0.0; x.len()], g)
        }))
        .homogeneous(2.0)
    }

    /// p = |xi|^2_g / 2 for the round unit sphere in stereographic coordinates,
    /// g = 4 / (1 + |x|^2)^2 * identity.
    pub fn sphere_stereographic(n: usize) -> Self {
        Self::new(
            n,
            Arc::new(|x: &[f64], xi: &[f64]| {
                let c = (1.0 + dot(x, x)).powi(2) / 4.0;
                0.5 * c * dot(xi, xi)
            }),
        )
        .with_grad(Arc::new(|x: &[f64], xi: &[f64]| {
            let q = 1.0 + dot(x, x);
            let xi2 = dot(xi, xi);
            let gx = x.iter().map(|v| 0.5 * xi2 * q * v).collect();
            let c = q * q / 4.0;
            let gxi = xi.iter().map(|v| c * v).collect();
            (gx, gxi)
        }))
        .homogeneous(2.0)
    }

    /// p = |xi|^2_g / 2 for a general metric (inverse by LU, x-derivatives by differences).
    pub fn from_metric(n: usize, metric: MatFn) -> Self {
        Self::new(
            n,
            Arc::new(move |x: &[f64], xi: &[f64]| {
                let g = metric(x);
                let v = nalgebra::DVector::from_column_slice(xi);
                let w = g.lu().solve(&v).unwrap_or_else(|| nalgebra::DVector::from_element(xi.len(), f64::NAN));
                0.5 * v.dot(&w)
            }),
        )
        .homogeneous(2.0)
    }
}

/// {a, b} = grad_xi a . grad_x b - grad_x a . grad_xi b.
pub fn poisson_bracket(a: &Symbol, b: &Symbol) -> Symbol {
    let (a1, b1) = (a.clone(), b.clone());
    let nested = !(a.has_analytic_grad() && b.has_analytic_grad());
    let mut s = Symbol::new(
        a.n,
        Arc::new(move |x: &[f64], xi: &[f64]| {
            let (ax, axi) = a1.grad(x, xi);
            let (bx, bxi) = b1.grad(x, xi);
            dot(&axi, &bx) - dot(&ax, &bxi)
        }),
    );
    // Differences of differenced quantities need a larger step to stay above round-off.
    s.fd_step = if nested { 1e-4 } else { FD_STEP };
    s
}

/// Symbol depending on x only, with an optional analytic gradient.
pub fn base_function(n: usize, f: ScalarFn, grad: Option<VecFn>) -> Symbol {
    let f1 = f.clone();
    let s = Symbol::new(n, Arc::new(move |x: &[f64], _xi: &[f64]| f1(x)));
    match grad {
        Some(g) => s.with_grad(Arc::new(move |x: &[f64], xi: &[f64]| (g(x), vec![0.0; xi.len()]))),
        None => {
            let f2 = f.clone();
            s.with_grad(Arc::new(move |x: &[f64], xi: &[f64]| {
                (fd_gradient(&|y: &[f64]| f2(y), x, FD_STEP), vec![0.0; xi.len()])
            }))
        }
    }
}

/// Vector field on a bundle state space; the first `base_dim` coordinates are the base.
#[derive(Clone)]
pub struct VectorField {
    pub dim: usize,
    pub base_dim: usize,
    f: VecFn,
    jac: Option<MatFn>,
}

impl std::fmt::Debug for VectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorField").field("dim", &self.dim).field("base_dim", &self.base_dim).finish()
    }
}

impl VectorField {
    pub fn new(dim: usize, base_dim: usize, f: VecFn) -> Self {
        Self { dim, base_dim, f, jac: None }
    }

    pub fn with_jacobian(mut self, j: MatFn) -> Self {
        self.jac = Some(j);
        self
    }

    pub fn eval(&self, y: &[f64]) -> Vec<f64> {
        (self.f)(y)
    }

    pub fn jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        match &self.jac {
            Some(j) => j(y),
            None => fd_jacobian(&|s: &[f64]| (self.f)(s), y, FD_STEP),
        }
    }

    pub fn negated(&self) -> Self {
        let f = self.f.clone();
        let jac = self.jac.clone().map(|j| -> MatFn { Arc::new(move |y: &[f64]| -j(y)) });
        Self {
            dim: self.dim,
            base_dim: self.base_dim,
            f: Arc::new(move |y: &[f64]| f(y).into_iter().map(|v| -v).collect()),
            jac,
        }
    }

    /// Augmented field (y, Phi) with Phi' = DY(y) Phi; Phi stored row-major after y.
    pub fn variational(&self) -> Self {
        let base = self.clone();
        let d = self.dim;
        Self::new(
            d + d * d,
            self.base_dim,
            Arc::new(move |s: &[f64]| {
                let y = &s[..d];
                let mut out = base.eval(y);
                let jy = base.jacobian(y);
                let phi = DMatrix::from_row_slice(d, d, &s[d..]);
                let prod = jy * phi;
                for i in 0..d {
                    for j in 0..d {
                        out.push(prod[(i, j)]);
                    }
                }
                out
            }),
        )
    }

    /// Horizontal velocity d pi (Y).
    pub fn base_velocity(&self, y: &[f64]) -> Vec<f64> {
        self.eval(y)[..self.base_dim].to_vec()
    }
}

/// H_p = (grad_xi p, -grad_x p) on the 2n-dimensional state (x, xi).
pub fn hamiltonian_vector_field(p: &Symbol) -> VectorField {
    let n = p.n;
    let p1 = p.clone();
    VectorField::new(
        2 * n,
        n,
        Arc::new(move |s: &[f64]| {
            let (gx, gxi) = p1.grad(&s[..n], &s[n..]);
            let mut out = gxi;
            out.extend(gx.into_iter().map(|v| -v));
            out
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub atol: f64,
    pub rtol: f64,
    /// Largest step; 0 means chart diameter / 16 divided by the start speed.
    pub max_step: f64,
    pub max_steps: usize,
    /// Fail on tangential exits.
    pub check_tangency: bool,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self { atol: 1e-9, rtol: 1e-9, max_step: 0.0, max_steps: 2_000_000, check_tangency: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitKind {
    Boundary,
    MaxTime,
}

// Dormand-Prince 5(4) tableau with the standard 4th-order continuous extension.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const P: [[f64; 4]; 7] = [
    [1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0, -12715105075.0 / 11282082432.0],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0, 87487479700.0 / 32700410799.0],
    [0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0, -10690763975.0 / 1880347072.0],
    [0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0, 701980252875.0 / 199316789632.0],
    [0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0, -1453857185.0 / 822651844.0],
    [0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0, 69997945.0 / 29380423.0],
];

/// One accepted step with its dense-output polynomial, expressed in physical time.
#[derive(Debug, Clone)]
struct Segment {
    t_lo: f64,
    t_hi: f64,
    t0: f64,
    h: f64,
    scale: f64,
    y0: Vec<f64>,
    q: Vec<[f64; 4]>,
}

impl Segment {
    fn eval(&self, t: f64) -> Vec<f64> {
        let s = (t - self.t0) / self.h;
        let pw = [s, s * s, s * s * s, s * s * s * s];
        self.y0
            .iter()
            .zip(&self.q)
            .map(|(y, q)| y + self.scale * (q[0] * pw[0] + q[1] * pw[1] + q[2] * pw[2] + q[3] * pw[3]))
            .collect()
    }
}

struct Branch {
    segments: Vec<Segment>,
    samples: Vec<(f64, Vec<f64>)>,
    end: f64,
    exit: ExitKind,
}

fn rms_err(err: &[f64], y0: &[f64], y1: &[f64], atol: f64, rtol: f64) -> f64 {
    let n = err.len() as f64;
    (err.iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Integrates `field` forward in its own time s from y0 up to s_max, stopping at
/// domain exit. Segments are reported in physical time t = sign * s.
fn integrate_branch(
    field: &VectorField,
    y0: &[f64],
    s_max: f64,
    sign: f64,
    chart: &ChartGeometry,
    opts: &IntegratorOptions,
) -> Result<Branch, GeometryError> {
    let n = field.base_dim;
    let d = y0.len();
    let mut samples = vec![(0.0, y0.to_vec())];
    let mut segments = Vec::new();
    let e_start = chart.exit_fn(&y0[..n]);
    if e_start > BOUNDARY_TOL {
        return Err(GeometryError::StartOutside { rho: e_start });
    }
    let f0 = field.eval(y0);
    if f0.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite { t: 0.0 });
    }
    if e_start.abs() <= BOUNDARY_TOL {
        let g = chart.grad_exit(&y0[..n]);
        if dot(&g, &f0[..n]) > 0.0 {
            return Ok(Branch { segments, samples, end: 0.0, exit: ExitKind::Boundary });
        }
    }
    let speed = norm(&f0[..n]).max(1e-12);
    let h_max = if opts.max_step > 0.0 { opts.max_step } else { chart.diameter() / 16.0 / speed };
    let mut h = {
        let sc: Vec<f64> = y0.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
        let d0 = (y0.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / d as f64).sqrt();
        let d1 = (f0.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / d as f64).sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0.min(h_max).min(s_max)
    };
    let mut s = 0.0;
    let mut y = y0.to_vec();
    let mut k1 = f0;
    let mut steps = 0;
    while s < s_max {
        steps += 1;
        if steps > opts.max_steps {
            return Err(GeometryError::StepUnderflow { t: sign * s });
        }
        if s + h > s_max {
            h = s_max - s;
        }
        let mut k: Vec<Vec<f64>> = vec![k1.clone()];
        for stage in 1..7 {
            let yi: Vec<f64> = (0..d)
                .map(|c| y[c] + h * (0..stage).map(|j| A[stage][j] * k[j][c]).sum::<f64>())
                .collect();
            let ki = field.eval(&yi);
            if ki.iter().any(|v| !v.is_finite()) {
                return Err(GeometryError::NonFinite { t: sign * (s + C[stage] * h) });
            }
            k.push(ki);
        }
        let y1: Vec<f64> = (0..d).map(|c| y[c] + h * (0..6).map(|j| A[6][j] * k[j][c]).sum::<f64>()).collect();
        let err: Vec<f64> = (0..d).map(|c| h * (0..7).map(|j| E[j] * k[j][c]).sum::<f64>()).collect();
        let en = rms_err(&err, &y, &y1, opts.atol, opts.rtol);
        if !en.is_finite() {
            return Err(GeometryError::NonFinite { t: sign * s });
        }
        if en > 1.0 {
            h *= (0.9 * en.powf(-0.2)).max(0.2);
            if h < 1e-14 * (1.0 + s.abs()) {
                return Err(GeometryError::StepUnderflow { t: sign * s });
            }
            continue;
        }
        let q: Vec<[f64; 4]> = (0..d)
            .map(|c| {
                let mut r = [0.0; 4];
                for (j, row) in P.iter().enumerate() {
                    for m in 0..4 {
                        r[m] += k[j][c] * row[m];
                    }
                }
                r
            })
            .collect();
        let seg_s = |t_s: f64| -> f64 { t_s };
        let mut seg = Segment {
            t_lo: 0.0,
            t_hi: 0.0,
            t0: sign * s,
            h: sign * h,
            scale: h,
            y0: y.clone(),
            q,
        };
        let s_new = s + h;
        let e1 = chart.exit_fn(&y1[..n]);
        if e1 > 0.0 {
            // Exit inside this step: bisect on the dense output.
            let ev = |sig: f64| chart.exit_fn(&seg.eval(seg.t0 + sig * seg.h)[..n]);
            let (mut lo, mut hi) = (0.0, 1.0);
            let mut sig = 1.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let em = ev(mid);
                sig = mid;
                if em.abs() < BOUNDARY_TOL {
                    break;
                }
                if em > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo < 1e-16 {
                    sig = lo;
                    break;
                }
            }
            let s_exit = seg_s(s + sig * h);
            let y_exit = seg.eval(seg.t0 + sig * seg.h);
            if opts.check_tangency {
                let g = chart.grad_exit(&y_exit[..n]);
                let v = field.eval(&y_exit);
                let ratio = dot(&g, &v[..n]).abs() / (norm(&g) * norm(&v[..n])).max(1e-300);
                if ratio < TANGENCY_TOL {
                    return Err(GeometryError::TangentialExit { t: sign * s_exit, ratio });
                }
            }
            let (a, b) = (sign * s, sign * s_exit);
            seg.t_lo = a.min(b);
            seg.t_hi = a.max(b);
            segments.push(seg);
            samples.push((sign * s_exit, y_exit));
            return Ok(Branch { segments, samples, end: s_exit, exit: ExitKind::Boundary });
        }
        let (a, b) = (sign * s, sign * s_new);
        seg.t_lo = a.min(b);
        seg.t_hi = a.max(b);
        segments.push(seg);
        s = s_new;
        y = y1;
        k1 = k[6].clone();
        samples.push((sign * s, y.clone()));
        h = (h * (0.9 * en.max(1e-10).powf(-0.2)).min(10.0)).min(h_max);
    }
    Ok(Branch { segments, samples, end: s_max, exit: ExitKind::MaxTime })
}

/// Integral curve sampled at accepted steps, with dense output on [-tau_minus, tau_plus].
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub base_dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub tau_minus: f64,
    pub tau_plus: f64,
    pub exit_minus: ExitKind,
    pub exit_plus: ExitKind,
    segments: Vec<Segment>,
}

impl Trajectory {
    fn from_branches(base_dim: usize, fwd: Branch, bwd: Option<Branch>) -> Self {
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut segments = Vec::new();
        let (tau_minus, exit_minus) = match bwd {
            Some(b) => {
                for (t, y) in b.samples.into_iter().skip(1).rev() {
                    times.push(t);
                    states.push(y);
                }
                let mut segs = b.segments;
                segs.reverse();
                segments.extend(segs);
                (b.end, b.exit)
            }
            None => (0.0, ExitKind::Boundary),
        };
        for (t, y) in fwd.samples {
            times.push(t);
            states.push(y);
        }
        segments.extend(fwd.segments);
        Self {
            base_dim,
            times,
            states,
            tau_minus,
            tau_plus: fwd.end,
            exit_minus,
            exit_plus: fwd.exit,
            segments,
        }
    }

    pub fn is_trapped(&self) -> bool {
        self.exit_minus == ExitKind::MaxTime || self.exit_plus == ExitKind::MaxTime
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    /// Dense-output state at time t (clamped to [-tau_minus, tau_plus]).
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        if self.segments.is_empty() {
            return self.states[0].clone();
        }
        let t = t.clamp(-self.tau_minus, self.tau_plus);
        let idx = self.segments.partition_point(|s| s.t_hi < t);
        let seg = &self.segments[idx.min(self.segments.len() - 1)];
        seg.eval(t)
    }

    pub fn base_at(&self, t: f64) -> Vec<f64> {
        self.state_at(t)[..self.base_dim].to_vec()
    }

    pub fn length(&self) -> f64 {
        self.tau_minus + self.tau_plus
    }
}

/// Forward integral curve from `start` up to `max_time` or domain exit.
pub fn flow_integrate(
    field: &VectorField,
    start: &BundlePoint,
    max_time: f64,
    chart: &ChartGeometry,
    opts: &IntegratorOptions,
) -> Result<Trajectory, GeometryError> {
    let y0 = start.state();
    let fwd = integrate_branch(field, &y0, max_time, 1.0, chart, opts)?;
    Ok(Trajectory::from_branches(field.base_dim, fwd, None))
}

/// Default trapping horizon: 1e3 * chart diameter / horizontal speed at the start.
pub fn default_horizon(field: &VectorField, y0: &[f64], chart: &ChartGeometry) -> f64 {
    let v = field.base_velocity(y0);
    1e3 * chart.diameter() / norm(&v).max(1e-12)
}

/// Maximally extended curve through `start` in both time directions.
pub fn maximal_trajectory(
    field: &VectorField,
    start: &[f64],
    chart: &ChartGeometry,
    opts: &IntegratorOptions,
    horizon: Option<f64>,
) -> Result<Trajectory, GeometryError> {
    let hz = horizon.unwrap_or_else(|| default_horizon(field, start, chart));
    let fwd = integrate_branch(field, start, hz, 1.0, chart, opts)?;
    let bwd = integrate_branch(&field.negated(), start, hz, -1.0, chart, opts)?;
    Ok(Trajectory::from_branches(field.base_dim, fwd, Some(bwd)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExitTimes {
    Finite { tau_minus: f64, tau_plus: f64 },
    Trapped { horizon: f64 },
}

/// Exit times (tau_-, tau_+) of the integral curve through `start`.
pub fn exit_time(
    field: &VectorField,
    start: &BundlePoint,
    chart: &ChartGeometry,
    opts: &IntegratorOptions,
) -> Result<ExitTimes, GeometryError> {
    let y0 = start.state();
    let hz = default_horizon(field, &y0, chart);
    let tr = maximal_trajectory(field, &y0, chart, opts, Some(hz))?;
    if tr.is_trapped() {
        return Ok(ExitTimes::Trapped { horizon: hz });
    }
    Ok(ExitTimes::Finite { tau_minus: tr.tau_minus, tau_plus: tr.tau_plus })
}
