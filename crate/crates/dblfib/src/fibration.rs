//! Incidence manifolds Z in graph form, defining-function form or generated by
//! ray families; conormal bundles, the maps A and B, and induced fiber measures.

use crate::geometry::{
    maximal_trajectory, ChartGeometry, GeometryError, IntegratorOptions, MatFn, ScalarFn, Trajectory,
    VecFn, VectorField, FD_STEP,
};
use crate::linalg::{fd_jacobian, norm, null_space, rank_margin, singular_values, sub, C64, RANK_RTOL};
use crate::quad::{self, Rule};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

/// (z, x') -> x''.
pub type PhiFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
/// (z, x') -> (phi_z, phi_x').
pub type PhiJacFn = Arc<dyn Fn(&[f64], &[f64]) -> (DMatrix<f64>, DMatrix<f64>) + Send + Sync>;
/// (x, z') -> b in R^k.
pub type BFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
/// (x, z') -> (b_x, b_z').
pub type BJacFn = Arc<dyn Fn(&[f64], &[f64]) -> (DMatrix<f64>, DMatrix<f64>) + Send + Sync>;
/// Holomorphic extension of b.
pub type BHoloFn = Arc<dyn Fn(&[C64], &[C64]) -> Vec<C64> + Send + Sync>;
/// (z, x) -> kappa.
pub type KappaFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type LocateFn = Arc<dyn Fn(&[f64]) -> Option<Vec<f64>> + Send + Sync>;

/// Tolerance for membership (z, x) in Z.
pub const ON_MANIFOLD_TOL: f64 = 1e-8;
/// Exponent of the smooth directional partition used by the codimension-one line scans.
const PARTITION_POWER: i32 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FibrationError {
    #[error("rank deficient at {at:?} (margin {margin:.3e})")]
    RankDeficient { at: Vec<f64>, margin: f64 },
    #[error("point is off the incidence manifold (residual {residual:.3e})")]
    OffManifold { residual: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("self-intersection of ray {z:?} at t = {t1} and t = {t2}")]
    SelfIntersection { z: Vec<f64>, t1: f64, t2: f64 },
    #[error("tangential intersection with the boundary on ray {z:?} at t = {t}")]
    TangentialIntersection { z: Vec<f64>, t: f64 },
    #[error("ray {z:?} is trapped")]
    Trapped { z: Vec<f64> },
    #[error("ray {z:?} has a singular point at t = {t}")]
    SingularPoint { z: Vec<f64>, t: f64 },
    #[error("not enough variations on ray {z:?} at t = {t} (margin {margin:.3e})")]
    InsufficientVariations { z: Vec<f64>, t: f64, margin: f64 },
    #[error("degenerate frame on the fiber")]
    DegenerateFrame,
    #[error("graph and defining forms disagree (residual {residual:.3e})")]
    Inconsistent { residual: f64 },
    #[error("no point of the level set found in the region")]
    EmptyLevelSet,
    #[error("missing representation: {0}")]
    MissingRepresentation(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Z = {x'' = phi(z, x')}.
#[derive(Clone)]
pub struct GraphForm {
    pub n: usize,
    pub big_n: usize,
    pub x1_idx: Vec<usize>,
    pub x2_idx: Vec<usize>,
    pub phi: PhiFn,
    pub jac: Option<PhiJacFn>,
    pub x1_box: Vec<(f64, f64)>,
}

impl GraphForm {
    pub fn k(&self) -> usize {
        self.x2_idx.len()
    }

    pub fn assemble(&self, x1: &[f64], x2: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (i, &j) in self.x1_idx.iter().enumerate() {
            x[j] = x1[i];
        }
        for (i, &j) in self.x2_idx.iter().enumerate() {
            x[j] = x2[i];
        }
        x
    }

    pub fn split(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (self.x1_idx.iter().map(|&j| x[j]).collect(), self.x2_idx.iter().map(|&j| x[j]).collect())
    }

    pub fn phi_jac(&self, z: &[f64], x1: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        if let Some(j) = &self.jac {
            return j(z, x1);
        }
        let pz = fd_jacobian(&|zz: &[f64]| (self.phi)(zz, x1), z, FD_STEP);
        let px = fd_jacobian(&|xx: &[f64]| (self.phi)(z, xx), x1, FD_STEP);
        (pz, px)
    }

    pub fn residual(&self, z: &[f64], x: &[f64]) -> f64 {
        let (x1, x2) = self.split(x);
        norm(&sub(&x2, &(self.phi)(z, &x1)))
    }

    /// Jet of the graph at (z, x): phi_z, phi_x' and d/dx'_j phi_z.
    pub fn jet(&self, z: &[f64], x: &[f64]) -> GraphJet {
        let (x1, _) = self.split(x);
        let (phi_z, phi_x1) = self.phi_jac(z, &x1);
        let dphi_z = (0..x1.len())
            .map(|j| {
                let h = 1e-5 * x1[j].abs().max(1.0);
                let mut xp = x1.clone();
                xp[j] += h;
                let (a, _) = self.phi_jac(z, &xp);
                xp[j] = x1[j] - h;
                let (b, _) = self.phi_jac(z, &xp);
                (a - b) / (2.0 * h)
            })
            .collect();
        GraphJet { x1_idx: self.x1_idx.clone(), x2_idx: self.x2_idx.clone(), phi_z, phi_x1, dphi_z }
    }
}

/// Local graph data at a point of Z.
#[derive(Debug, Clone)]
pub struct GraphJet {
    pub x1_idx: Vec<usize>,
    pub x2_idx: Vec<usize>,
    /// k x N.
    pub phi_z: DMatrix<f64>,
    /// k x n'.
    pub phi_x1: DMatrix<f64>,
    /// d/dx'_j of phi_z along the fiber, one k x N matrix per j.
    pub dphi_z: Vec<DMatrix<f64>>,
}

impl GraphJet {
    pub fn n(&self) -> usize {
        self.x1_idx.len() + self.x2_idx.len()
    }

    /// Columns spanning T_x G_z: (e', phi_x' e').
    pub fn tangent_basis(&self) -> DMatrix<f64> {
        let (n, n1) = (self.n(), self.x1_idx.len());
        let mut t = DMatrix::zeros(n, n1);
        for j in 0..n1 {
            t[(self.x1_idx[j], j)] = 1.0;
            for (r, &i) in self.x2_idx.iter().enumerate() {
                t[(i, j)] = self.phi_x1[(r, j)];
            }
        }
        t
    }

    /// Columns spanning N*_x G_z: (-phi_x'^T e_j, e_j).
    pub fn conormal_basis(&self) -> DMatrix<f64> {
        let (n, k) = (self.n(), self.x2_idx.len());
        let mut c = DMatrix::zeros(n, k);
        for j in 0..k {
            c[(self.x2_idx[j], j)] = 1.0;
            for (r, &i) in self.x1_idx.iter().enumerate() {
                c[(i, j)] = -self.phi_x1[(j, r)];
            }
        }
        c
    }

    pub fn eta2(&self, eta: &[f64]) -> Vec<f64> {
        self.x2_idx.iter().map(|&i| eta[i]).collect()
    }

    /// A(z, x) eta = -phi_z^T eta''.
    pub fn apply_a(&self, eta: &[f64]) -> Vec<f64> {
        let e2 = DVector::from_vec(self.eta2(eta));
        (-(self.phi_z.transpose() * e2)).iter().copied().collect()
    }

    /// B(z, x) zeta: inverse of A on its range.
    pub fn apply_b(&self, zeta: &[f64]) -> Vec<f64> {
        let m = -self.phi_z.transpose();
        let e2 = crate::linalg::lstsq(&m, &DVector::from_column_slice(zeta));
        let mut eta = vec![0.0; self.n()];
        for (j, &i) in self.x2_idx.iter().enumerate() {
            eta[i] = e2[j];
        }
        for (r, &i) in self.x1_idx.iter().enumerate() {
            eta[i] = -(0..self.x2_idx.len()).map(|j| self.phi_x1[(j, r)] * e2[j]).sum::<f64>();
        }
        eta
    }
}

/// Z = {z'' = b(x, z')}, z = (z', z'').
#[derive(Clone)]
pub struct DefiningForm {
    pub n: usize,
    pub big_n: usize,
    pub k: usize,
    pub b: BFn,
    pub jac: Option<BJacFn>,
    pub holo: Option<BHoloFn>,
}

impl DefiningForm {
    pub fn split_z<'a>(&self, z: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        z.split_at(self.big_n - self.k)
    }

    pub fn eval(&self, x: &[f64], z1: &[f64]) -> Vec<f64> {
        (self.b)(x, z1)
    }

    /// (b_x: k x n, b_z': k x (N - k)).
    pub fn jacobians(&self, x: &[f64], z1: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        if let Some(j) = &self.jac {
            return j(x, z1);
        }
        let bx = fd_jacobian(&|xx: &[f64]| (self.b)(xx, z1), x, FD_STEP);
        let bz = fd_jacobian(&|zz: &[f64]| (self.b)(x, zz), z1, FD_STEP);
        (bx, bz)
    }

    pub fn residual(&self, z: &[f64], x: &[f64]) -> f64 {
        let (z1, z2) = self.split_z(z);
        norm(&sub(&self.eval(x, z1), z2))
    }

    /// Coordinate split x = (x', x'') maximizing sigma_min of b_x''.
    pub fn best_split(&self, x: &[f64], z1: &[f64]) -> (Vec<usize>, Vec<usize>) {
        let (bx, _) = self.jacobians(x, z1);
        let mut best: Option<(f64, Vec<usize>)> = None;
        for combo in combinations(self.n, self.k) {
            let sub = DMatrix::from_fn(self.k, self.k, |r, c| bx[(r, combo[c])]);
            let s = singular_values(&sub);
            let smin = *s.last().unwrap_or(&0.0);
            if best.as_ref().map_or(true, |(b, _)| smin > *b) {
                best = Some((smin, combo));
            }
        }
        let x2 = best.unwrap().1;
        let x1 = (0..self.n).filter(|i| !x2.contains(i)).collect();
        (x1, x2)
    }

    /// Newton solve of b(x', x'') = z'' for x'' from a seed.
    pub fn solve_x2(&self, z: &[f64], x1: &[f64], seed2: &[f64], x1_idx: &[usize], x2_idx: &[usize]) -> Option<Vec<f64>> {
        let (z1, z2) = self.split_z(z);
        let mut x = vec![0.0; self.n];
        for (i, &j) in x1_idx.iter().enumerate() {
            x[j] = x1[i];
        }
        for (i, &j) in x2_idx.iter().enumerate() {
            x[j] = seed2[i];
        }
        for _ in 0..60 {
            let r = sub(&self.eval(&x, z1), z2);
            let rn = norm(&r);
            if !rn.is_finite() {
                return None;
            }
            if rn < 1e-14 * (1.0 + norm(z2)) {
                break;
            }
            let (bx, _) = self.jacobians(&x, z1);
            let sub_m = DMatrix::from_fn(self.k, self.k, |r_, c| bx[(r_, x2_idx[c])]);
            let step = sub_m.lu().solve(&DVector::from_vec(r))?;
            let mut sn = 0.0;
            for (i, &j) in x2_idx.iter().enumerate() {
                x[j] -= step[i];
                sn += step[i] * step[i];
            }
            if sn.sqrt() < 1e-15 * (1.0 + norm(&x)) {
                break;
            }
        }
        if self.residual(z, &x) > ON_MANIFOLD_TOL {
            return None;
        }
        Some(x2_idx.iter().map(|&j| x[j]).collect())
    }

    /// Jet of the local graph x'' = phi(z, x') through (z, x).
    pub fn jet(&self, z: &[f64], x: &[f64]) -> GraphJet {
        let (z1, _) = self.split_z(z);
        let (x1_idx, x2_idx) = self.best_split(x, z1);
        let jets = |xx: &[f64]| -> (DMatrix<f64>, DMatrix<f64>) {
            let (bx, bz1) = self.jacobians(xx, z1);
            let b2 = DMatrix::from_fn(self.k, self.k, |r, c| bx[(r, x2_idx[c])]);
            let b1 = DMatrix::from_fn(self.k, x1_idx.len(), |r, c| bx[(r, x1_idx[c])]);
            let inv = b2.try_inverse().unwrap_or_else(|| DMatrix::from_element(self.k, self.k, f64::NAN));
            let mut phi_z = DMatrix::zeros(self.k, self.big_n);
            let pz1 = -&inv * bz1;
            for r in 0..self.k {
                for c in 0..self.big_n - self.k {
                    phi_z[(r, c)] = pz1[(r, c)];
                }
                for c in 0..self.k {
                    phi_z[(r, self.big_n - self.k + c)] = inv[(r, c)];
                }
            }
            (phi_z, -inv * b1)
        };
        let (phi_z, phi_x1) = jets(x);
        let x2: Vec<f64> = x2_idx.iter().map(|&j| x[j]).collect();
        let dphi_z = (0..x1_idx.len())
            .map(|j| {
                let h = 1e-5 * x[x1_idx[j]].abs().max(1.0);
                let eval = |d: f64| {
                    let x1: Vec<f64> =
                        x1_idx.iter().enumerate().map(|(i, &c)| x[c] + if i == j { d } else { 0.0 }).collect();
                    let x2n = self.solve_x2(z, &x1, &x2, &x1_idx, &x2_idx).unwrap_or_else(|| x2.clone());
                    let mut xx = vec![0.0; self.n];
                    for (i, &c) in x1_idx.iter().enumerate() {
                        xx[c] = x1[i];
                    }
                    for (i, &c) in x2_idx.iter().enumerate() {
                        xx[c] = x2n[i];
                    }
                    jets(&xx).0
                };
                (eval(h) - eval(-h)) / (2.0 * h)
            })
            .collect();
        GraphJet { x1_idx, x2_idx, phi_z, phi_x1, dphi_z }
    }

    /// Graph form around (z0, x0) obtained by Newton continuation.
    pub fn to_graph(&self, z0: &[f64], x0: &[f64], x1_box: Vec<(f64, f64)>) -> GraphForm {
        let (z1, _) = self.split_z(z0);
        let (x1_idx, x2_idx) = self.best_split(x0, z1);
        let seed: Vec<f64> = x2_idx.iter().map(|&j| x0[j]).collect();
        let me = self.clone();
        let (a, b) = (x1_idx.clone(), x2_idx.clone());
        let phi: PhiFn = Arc::new(move |z: &[f64], x1: &[f64]| {
            me.solve_x2(z, x1, &seed, &a, &b).unwrap_or_else(|| vec![f64::NAN; b.len()])
        });
        GraphForm { n: self.n, big_n: self.big_n, x1_idx, x2_idx, phi, jac: None, x1_box }
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Curves x_z(t) = pi(Phi_t(param(z))) generated by a vector field on a bundle.
#[derive(Clone)]
pub struct RayFamily {
    pub field: VectorField,
    pub chart: ChartGeometry,
    pub param_dim: usize,
    pub param: VecFn,
    pub dparam: Option<MatFn>,
    pub locate: Option<LocateFn>,
    pub z_box: Vec<(f64, f64)>,
    pub opts: IntegratorOptions,
}

/// Ray with its variational matrix Phi(t) = dPhi_t along the orbit.
#[derive(Debug, Clone)]
pub struct VariationalRay {
    pub z: Vec<f64>,
    pub traj: Trajectory,
    pub state_dim: usize,
    pub base_dim: usize,
    pub dparam: DMatrix<f64>,
    field: VectorField,
}

impl VariationalRay {
    pub fn state(&self, t: f64) -> Vec<f64> {
        self.traj.state_at(t)[..self.state_dim].to_vec()
    }

    pub fn x(&self, t: f64) -> Vec<f64> {
        self.traj.state_at(t)[..self.base_dim].to_vec()
    }

    pub fn xdot(&self, t: f64) -> Vec<f64> {
        self.field.base_velocity(&self.state(t))
    }

    pub fn flow_jacobian(&self, t: f64) -> DMatrix<f64> {
        let s = self.traj.state_at(t);
        let d = self.state_dim;
        DMatrix::from_row_slice(d, d, &s[d..])
    }

    /// Psi_z(t) = d pi Phi(t) dparam: columns are the variation fields J_{e_i}(t).
    pub fn jacobi(&self, t: f64) -> DMatrix<f64> {
        let full = self.flow_jacobian(t) * &self.dparam;
        full.rows(0, self.base_dim).into_owned()
    }

    pub fn variation(&self, t: f64, w: &[f64]) -> Vec<f64> {
        (self.jacobi(t) * DVector::from_column_slice(w)).iter().copied().collect()
    }

    /// Psi_zt = d pi DY Phi(t) dparam.
    pub fn jacobi_dot(&self, t: f64) -> DMatrix<f64> {
        let y = self.state(t);
        let full = self.field.jacobian(&y) * self.flow_jacobian(t) * &self.dparam;
        full.rows(0, self.base_dim).into_owned()
    }

    /// Psi_tt = d pi DY Y.
    pub fn xddot(&self, t: f64) -> Vec<f64> {
        let y = self.state(t);
        let f = DVector::from_vec(self.field.eval(&y));
        (self.field.jacobian(&y) * f).rows(0, self.base_dim).iter().copied().collect()
    }

    pub fn tau_minus(&self) -> f64 {
        self.traj.tau_minus
    }

    pub fn tau_plus(&self) -> f64 {
        self.traj.tau_plus
    }

    /// Time at which the ray is closest to x (sampled then refined by Newton on (x(t)-x).xdot).
    pub fn time_of(&self, x: &[f64]) -> (f64, f64) {
        let (a, b) = (-self.tau_minus(), self.tau_plus());
        let m = 400;
        let mut best = (0.0, f64::INFINITY);
        for i in 0..=m {
            let t = a + (b - a) * i as f64 / m as f64;
            let d = norm(&sub(&self.x(t), x));
            if d < best.1 {
                best = (t, d);
            }
        }
        let mut t = best.0;
        for _ in 0..30 {
            let r = sub(&self.x(t), x);
            let v = self.xdot(t);
            let acc = self.xddot(t);
            let g = crate::linalg::dot(&r, &v);
            let gp = crate::linalg::dot(&v, &v) + crate::linalg::dot(&r, &acc);
            if gp.abs() < 1e-300 {
                break;
            }
            let dt = g / gp;
            t = (t - dt).clamp(a, b);
            if dt.abs() < 1e-14 {
                break;
            }
        }
        (t, norm(&sub(&self.x(t), x)))
    }

    /// Local graph jet at time t using x' = the coordinate of largest |xdot|.
    pub fn jet(&self, t: f64) -> GraphJet {
        let v = self.xdot(t);
        let n = self.base_dim;
        let j1 = (0..n).max_by(|&a, &b| v[a].abs().partial_cmp(&v[b].abs()).unwrap()).unwrap();
        let x2_idx: Vec<usize> = (0..n).filter(|&i| i != j1).collect();
        let psi_z = self.jacobi(t);
        let psi_zt = self.jacobi_dot(t);
        let acc = self.xddot(t);
        let big_n = psi_z.ncols();
        let k = n - 1;
        let p1t = v[j1];
        let mut phi_z = DMatrix::zeros(k, big_n);
        let mut dphi = DMatrix::zeros(k, big_n);
        let mut phi_x1 = DMatrix::zeros(k, 1);
        for (r, &i) in x2_idx.iter().enumerate() {
            phi_x1[(r, 0)] = v[i] / p1t;
            for c in 0..big_n {
                phi_z[(r, c)] = psi_z[(i, c)] - v[i] * psi_z[(j1, c)] / p1t;
                let ddt = psi_zt[(i, c)] - acc[i] * psi_z[(j1, c)] / p1t - v[i] * psi_zt[(j1, c)] / p1t
                    + v[i] * psi_z[(j1, c)] * acc[j1] / (p1t * p1t);
                dphi[(r, c)] = ddt / p1t;
            }
        }
        GraphJet { x1_idx: vec![j1], x2_idx, phi_z, phi_x1, dphi_z: vec![dphi] }
    }
}

impl RayFamily {
    pub fn base_dim(&self) -> usize {
        self.field.base_dim
    }

    pub fn start(&self, z: &[f64]) -> Vec<f64> {
        (self.param)(z)
    }

    pub fn dparam(&self, z: &[f64]) -> DMatrix<f64> {
        match &self.dparam {
            Some(d) => d(z),
            None => fd_jacobian(&|zz: &[f64]| (self.param)(zz), z, FD_STEP),
        }
    }

    pub fn trajectory(&self, z: &[f64]) -> Result<Trajectory, FibrationError> {
        let y0 = self.start(z);
        let tr = maximal_trajectory(&self.field, &y0, &self.chart, &self.opts, None).map_err(|e| self.wrap(z, e))?;
        if tr.is_trapped() {
            return Err(FibrationError::Trapped { z: z.to_vec() });
        }
        Ok(tr)
    }

    fn wrap(&self, z: &[f64], e: GeometryError) -> FibrationError {
        match e {
            GeometryError::TangentialExit { t, .. } => FibrationError::TangentialIntersection { z: z.to_vec(), t },
            other => FibrationError::Geometry(other),
        }
    }

    pub fn variational(&self, z: &[f64]) -> Result<VariationalRay, FibrationError> {
        let y0 = self.start(z);
        let d = y0.len();
        let mut s = y0.clone();
        for i in 0..d {
            for j in 0..d {
                s.push(if i == j { 1.0 } else { 0.0 });
            }
        }
        let aug = self.field.variational();
        let hz = crate::geometry::default_horizon(&self.field, &y0, &self.chart);
        let tr = maximal_trajectory(&aug, &s, &self.chart, &self.opts, Some(hz)).map_err(|e| self.wrap(z, e))?;
        if tr.is_trapped() {
            return Err(FibrationError::Trapped { z: z.to_vec() });
        }
        Ok(VariationalRay {
            z: z.to_vec(),
            traj: tr,
            state_dim: d,
            base_dim: self.field.base_dim,
            dparam: self.dparam(z),
            field: self.field.clone(),
        })
    }

    /// Checks no tangential intersections, no self-intersections, no singular points,
    /// nontrapping and (when dim G <= dim Xi - 2) enough variations on ray z.
    pub fn validate_ray(&self, z: &[f64]) -> Result<(), FibrationError> {
        let ray = self.variational(z)?;
        let (a, b) = (-ray.tau_minus(), ray.tau_plus());
        let m = 256;
        let ts: Vec<f64> = (0..=m).map(|i| a + (b - a) * i as f64 / m as f64).collect();
        let xs: Vec<Vec<f64>> = ts.iter().map(|&t| ray.x(t)).collect();
        let spacing = (b - a) / m as f64;
        let diam = self.chart.diameter();
        for (i, &t) in ts.iter().enumerate() {
            let v = ray.xdot(t);
            if norm(&v) < 1e-8 {
                return Err(FibrationError::SingularPoint { z: z.to_vec(), t });
            }
            for j in i + 1..ts.len() {
                if (ts[j] - t) > 10.0 * spacing && norm(&sub(&xs[i], &xs[j])) < 1e-6 * diam {
                    return Err(FibrationError::SelfIntersection { z: z.to_vec(), t1: t, t2: ts[j] });
                }
            }
        }
        // Self-crossings between samples: refine near-approaches by local minimization.
        for i in 0..ts.len() {
            for j in i + 1..ts.len() {
                if ts[j] - ts[i] <= 10.0 * spacing {
                    continue;
                }
                let d = norm(&sub(&xs[i], &xs[j]));
                let speed = norm(&ray.xdot(ts[i])).max(norm(&ray.xdot(ts[j])));
                if d < 2.0 * speed * spacing {
                    if let Some((t1, t2)) = refine_crossing(&ray, ts[i], ts[j], spacing, diam) {
                        return Err(FibrationError::SelfIntersection { z: z.to_vec(), t1, t2 });
                    }
                }
            }
        }
        let xi_dim = ray.state_dim - 1;
        if self.param_dim + 2 <= xi_dim {
            for &t in ts.iter().step_by(16) {
                let mut m = ray.jacobi(t);
                let v = ray.xdot(t);
                let c = m.ncols();
                m = m.insert_column(c, 0.0);
                for r in 0..v.len() {
                    m[(r, c)] = v[r];
                }
                let s = singular_values(&m);
                let n = self.base_dim();
                let margin = if s.len() >= n && s[0] > 0.0 { s[n - 1] / s[0] } else { 0.0 };
                if margin <= RANK_RTOL {
                    return Err(FibrationError::InsufficientVariations { z: z.to_vec(), t, margin });
                }
            }
        }
        Ok(())
    }
}

fn refine_crossing(ray: &VariationalRay, t1: f64, t2: f64, spacing: f64, diam: f64) -> Option<(f64, f64)> {
    let (mut a, mut b) = (t1, t2);
    for _ in 0..60 {
        let r = sub(&ray.x(a), &ray.x(b));
        let va = ray.xdot(a);
        let vb = ray.xdot(b);
        // Gauss-Newton on r(a, b) = x(a) - x(b).
        let j = DMatrix::from_fn(r.len(), 2, |i, c| if c == 0 { va[i] } else { -vb[i] });
        let step = crate::linalg::lstsq(&j, &DVector::from_vec(r.clone()));
        a -= step[0];
        b -= step[1];
        if !(a.is_finite() && b.is_finite()) || a < -ray.tau_minus() || b > ray.tau_plus() {
            return None;
        }
        if step.norm() < 1e-13 {
            break;
        }
    }
    let d = norm(&sub(&ray.x(a), &ray.x(b)));
    if d < 1e-6 * diam && (b - a).abs() > 10.0 * spacing {
        Some((a, b))
    } else {
        None
    }
}

/// Quadrature controls on the fibers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub per_unit: f64,
    pub rule: Rule,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { per_unit: 64.0, rule: Rule::GaussLegendre }
    }
}

#[derive(Clone)]
pub enum Representation {
    Graph(GraphForm),
    Defining(DefiningForm),
    Rays(RayFamily),
}

/// Double fibration with weight kappa and chart data.
#[derive(Clone)]
pub struct Fibration {
    pub n: usize,
    pub big_n: usize,
    pub k: usize,
    pub graph: Option<GraphForm>,
    pub defining: Option<DefiningForm>,
    pub rays: Option<RayFamily>,
    pub kappa: KappaFn,
    pub x_chart: ChartGeometry,
    pub z_box: Vec<(f64, f64)>,
}

impl std::fmt::Debug for Fibration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fibration")
            .field("n", &self.n)
            .field("big_n", &self.big_n)
            .field("k", &self.k)
            .field("graph", &self.graph.is_some())
            .field("defining", &self.defining.is_some())
            .field("rays", &self.rays.is_some())
            .finish()
    }
}

/// A point (z, zeta; x, eta) of the canonical relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalPoint {
    pub z: Vec<f64>,
    pub zeta: Vec<f64>,
    pub x: Vec<f64>,
    pub eta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ConormalFiber {
    pub tangent: DMatrix<f64>,
    pub conormal: DMatrix<f64>,
    /// N x k matrix acting on eta''.
    pub a: DMatrix<f64>,
    pub jet: GraphJet,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubmersionReport {
    pub margins: Vec<f64>,
    pub min_margin: f64,
    pub pass: bool,
}

fn unit_kappa() -> KappaFn {
    Arc::new(|_z: &[f64], _x: &[f64]| 1.0)
}

fn check_dims(n: usize, big_n: usize, k: usize) -> Result<(), FibrationError> {
    let n1 = n.checked_sub(k).unwrap_or(0);
    if k == 0 || n1 == 0 {
        return Err(FibrationError::DimensionMismatch(format!("need 1 <= k <= n - 1, got n = {n}, k = {k}")));
    }
    let dim_z = big_n + n1;
    if !(big_n + n > dim_z && dim_z > big_n && big_n >= n) {
        return Err(FibrationError::DimensionMismatch(format!(
            "dim G = {big_n}, dim X = {n}, dim Z = {dim_z} violate dim G + dim X > dim Z > dim G >= dim X"
        )));
    }
    Ok(())
}

impl Fibration {
    /// Defining-form fibration; b_x must be surjective on the samples.
    pub fn from_defining_function(
        b: DefiningForm,
        x_chart: ChartGeometry,
        z_box: Vec<(f64, f64)>,
        samples: &[(Vec<f64>, Vec<f64>)],
    ) -> Result<Self, FibrationError> {
        check_dims(b.n, b.big_n, b.k)?;
        for (x, z1) in samples {
            let (bx, _) = b.jacobians(x, z1);
            let margin = rank_margin(&bx);
            if margin <= RANK_RTOL {
                let mut at = x.clone();
                at.extend_from_slice(z1);
                return Err(FibrationError::RankDeficient { at, margin });
            }
        }
        Ok(Self {
            n: b.n,
            big_n: b.big_n,
            k: b.k,
            graph: None,
            defining: Some(b),
            rays: None,
            kappa: unit_kappa(),
            x_chart,
            z_box,
        })
    }

    pub fn from_graph(g: GraphForm, x_chart: ChartGeometry, z_box: Vec<(f64, f64)>) -> Result<Self, FibrationError> {
        check_dims(g.n, g.big_n, g.k())?;
        Ok(Self {
            n: g.n,
            big_n: g.big_n,
            k: g.k(),
            graph: Some(g),
            defining: None,
            rays: None,
            kappa: unit_kappa(),
            x_chart,
            z_box,
        })
    }

    /// Ray fibration; every sample ray is validated.
    pub fn from_ray_family(rays: RayFamily, samples: &[Vec<f64>]) -> Result<Self, FibrationError> {
        let n = rays.base_dim();
        check_dims(n, rays.param_dim, n - 1)?;
        for z in samples {
            rays.validate_ray(z)?;
        }
        Ok(Self {
            n,
            big_n: rays.param_dim,
            k: n - 1,
            graph: None,
            defining: None,
            x_chart: rays.chart.clone(),
            z_box: rays.z_box.clone(),
            rays: Some(rays),
            kappa: unit_kappa(),
        })
    }

    pub fn with_kappa(mut self, kappa: KappaFn) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_graph(mut self, g: GraphForm) -> Self {
        self.graph = Some(g);
        self
    }

    pub fn with_defining(mut self, b: DefiningForm) -> Self {
        self.defining = Some(b);
        self
    }

    pub fn n1(&self) -> usize {
        self.n - self.k
    }

    /// Residual of (z, x) in Z, using whichever representation is present.
    pub fn residual(&self, z: &[f64], x: &[f64]) -> Result<f64, FibrationError> {
        if let Some(b) = &self.defining {
            return Ok(b.residual(z, x));
        }
        if let Some(g) = &self.graph {
            return Ok(g.residual(z, x));
        }
        if let Some(r) = &self.rays {
            return Ok(r.variational(z)?.time_of(x).1);
        }
        Err(FibrationError::MissingRepresentation("any"))
    }

    /// Local graph jet at (z, x).
    pub fn jet(&self, z: &[f64], x: &[f64]) -> Result<GraphJet, FibrationError> {
        let res = self.residual(z, x)?;
        if res > ON_MANIFOLD_TOL.max(1e-7) {
            return Err(FibrationError::OffManifold { residual: res });
        }
        if let Some(g) = &self.graph {
            return Ok(g.jet(z, x));
        }
        if let Some(b) = &self.defining {
            return Ok(b.jet(z, x));
        }
        let ray = self.rays.as_ref().unwrap().variational(z)?;
        let (t, _) = ray.time_of(x);
        Ok(ray.jet(t))
    }

    /// Basis of T_x G_z, basis of N*_x G_z and the matrix of A(z, x) on eta''.
    pub fn conormal_fiber(&self, z: &[f64], x: &[f64]) -> Result<ConormalFiber, FibrationError> {
        let jet = self.jet(z, x)?;
        let tangent = jet.tangent_basis();
        if rank_margin(&tangent) <= RANK_RTOL {
            return Err(FibrationError::DegenerateFrame);
        }
        Ok(ConormalFiber { tangent, conormal: jet.conormal_basis(), a: -jet.phi_z.transpose(), jet })
    }

    /// Canonical point over (z, x) with eta = conormal_basis * eta2.
    pub fn canonical_point(&self, z: &[f64], x: &[f64], eta2: &[f64]) -> Result<CanonicalPoint, FibrationError> {
        let cf = self.conormal_fiber(z, x)?;
        let eta: Vec<f64> = (&cf.conormal * DVector::from_column_slice(eta2)).iter().copied().collect();
        let zeta = cf.jet.apply_a(&eta);
        Ok(CanonicalPoint { z: z.to_vec(), zeta, x: x.to_vec(), eta })
    }

    /// Rank of phi_z at sampled (z, x').
    pub fn submersion_check(&self, samples: &[(Vec<f64>, Vec<f64>)]) -> Result<SubmersionReport, FibrationError> {
        let mut margins = Vec::new();
        for (z, x) in samples {
            let jet = self.jet(z, x)?;
            let m = rank_margin(&jet.phi_z);
            if m <= RANK_RTOL {
                let mut at = z.clone();
                at.extend_from_slice(x);
                return Err(FibrationError::RankDeficient { at, margin: m });
            }
            margins.push(m);
        }
        let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(SubmersionReport { pass: true, min_margin, margins })
    }

    /// Quadrature nodes (x_q, w_q) on G_z for the Lebesgue-induced measure, restricted to
    /// `region`, with the fiber split where any of `interfaces` changes sign.
    pub fn induced_measure(
        &self,
        z: &[f64],
        q: &QuadratureSpec,
        region: Option<&[(f64, f64)]>,
        interfaces: &[ScalarFn],
    ) -> Result<Vec<(Vec<f64>, f64)>, FibrationError> {
        let region: Vec<(f64, f64)> = match region {
            Some(r) => r
                .iter()
                .zip(&self.x_chart.bbox)
                .map(|((a, b), (c, d))| (a.max(*c), b.min(*d)))
                .collect(),
            None => self.x_chart.bbox.clone(),
        };
        if region.iter().any(|(a, b)| b <= a) {
            return Ok(Vec::new());
        }
        if let Some(rays) = &self.rays {
            return ray_nodes(rays, z, q, interfaces);
        }
        if let Some(g) = &self.graph {
            return Ok(graph_nodes(g, z, q, &region, interfaces, &self.x_chart));
        }
        if let Some(b) = &self.defining {
            if b.k == 1 {
                return Ok(level_set_nodes_k1(b, z, q, &region, interfaces));
            }
            return level_set_nodes_newton(b, z, q, &region);
        }
        Err(FibrationError::MissingRepresentation("any"))
    }
}

fn tensor_nodes(boxes: &[(f64, f64)], q: &QuadratureSpec) -> Vec<(Vec<f64>, f64)> {
    let mut out = vec![(Vec::new(), 1.0)];
    for &(a, b) in boxes {
        let nd = quad::nodes(a, b, q.per_unit, 16, q.rule);
        let mut next = Vec::with_capacity(out.len() * nd.len());
        for (p, w) in &out {
            for (x, wx) in &nd {
                let mut p2 = p.clone();
                p2.push(*x);
                next.push((p2, w * wx));
            }
        }
        out = next;
    }
    out
}

fn ray_nodes(
    rays: &RayFamily,
    z: &[f64],
    q: &QuadratureSpec,
    interfaces: &[ScalarFn],
) -> Result<Vec<(Vec<f64>, f64)>, FibrationError> {
    let tr = rays.trajectory(z)?;
    let (a, b) = (-tr.tau_minus, tr.tau_plus);
    let mut breaks = Vec::new();
    let samples = ((b - a) * q.per_unit / 2.0).ceil().max(32.0) as usize;
    for g in interfaces {
        let h = |t: f64| g(&tr.base_at(t));
        breaks.extend(quad::sign_changes(&h, a, b, samples));
    }
    Ok(quad::split_nodes(a, b, &breaks, q.per_unit, 16, q.rule)
        .into_iter()
        .map(|(t, w)| (tr.base_at(t), w))
        .collect())
}

fn graph_nodes(
    g: &GraphForm,
    z: &[f64],
    q: &QuadratureSpec,
    region: &[(f64, f64)],
    interfaces: &[ScalarFn],
    chart: &ChartGeometry,
) -> Vec<(Vec<f64>, f64)> {
    let boxes: Vec<(f64, f64)> = g
        .x1_idx
        .iter()
        .zip(&g.x1_box)
        .map(|(&i, &(a, b))| (a.max(region[i].0), b.min(region[i].1)))
        .collect();
    if boxes.iter().any(|(a, b)| b <= a) {
        return Vec::new();
    }
    let m = boxes.len();
    let outer = tensor_nodes(&boxes[..m - 1], q);
    let (la, lb) = boxes[m - 1];
    let mut out = Vec::new();
    for (p, w) in outer {
        let point = |u: f64| {
            let mut x1 = p.clone();
            x1.push(u);
            let x2 = (g.phi)(z, &x1);
            g.assemble(&x1, &x2)
        };
        let mut breaks = Vec::new();
        let samples = ((lb - la) * q.per_unit / 2.0).ceil().max(32.0) as usize;
        for f in interfaces {
            breaks.extend(quad::sign_changes(&|u: f64| f(&point(u)), la, lb, samples));
        }
        for (u, wu) in quad::split_nodes(la, lb, &breaks, q.per_unit, 16, q.rule) {
            let x = point(u);
            if x.iter().all(|v| v.is_finite()) && chart.in_box(&x) {
                out.push((x, w * wu));
            }
        }
    }
    out
}

/// Roots of t -> b(x + t e_j) - s on [a, b] with x_j replaced by t.
fn line_roots(g: &dyn Fn(f64) -> f64, a: f64, b: f64, samples: usize) -> Vec<f64> {
    let n = samples.max(2);
    let h = (b - a) / n as f64;
    let mut roots = Vec::new();
    let mut t0 = a;
    let mut g0 = g(a);
    for i in 1..=n {
        let t1 = if i == n { b } else { a + i as f64 * h };
        let g1 = g(t1);
        if g0 == 0.0 {
            roots.push(t0);
        } else if g0 * g1 < 0.0 {
            roots.push(quad::illinois(g, t0, t1, g0, g1, 1e-15 * (1.0 + t0.abs())));
        }
        t0 = t1;
        g0 = g1;
    }
    roots
}

/// Codimension-one level set {b(x, z') = z''} by line scans along every axis, blended
/// with the smooth partition w_j = b_j^p / sum_i b_i^p. Along an axis-j line the delta
/// measure contributes w_j / |b_j| at each root.
fn level_set_nodes_k1(
    b: &DefiningForm,
    z: &[f64],
    q: &QuadratureSpec,
    region: &[(f64, f64)],
    interfaces: &[ScalarFn],
) -> Vec<(Vec<f64>, f64)> {
    let n = b.n;
    let (z1, z2) = b.split_z(z);
    let s = z2[0];
    let mut out = Vec::new();
    let grad = |x: &[f64]| -> Vec<f64> {
        let (bx, _) = b.jacobians(x, z1);
        bx.row(0).iter().copied().collect()
    };
    for j in 0..n {
        let others: Vec<usize> = (0..n).filter(|&i| i != j).collect();
        let oboxes: Vec<(f64, f64)> = others.iter().map(|&i| region[i]).collect();
        let m = oboxes.len();
        let outer = tensor_nodes(&oboxes[..m - 1], q);
        let (la, lb) = oboxes[m - 1];
        let (ja, jb) = region[j];
        let root_samples = ((jb - ja) * 4.0).ceil().max(16.0) as usize;
        for (p, w) in outer {
            let base = |u: f64| {
                let mut x = vec![0.0; n];
                for (c, &i) in others.iter().enumerate().take(m - 1) {
                    x[i] = p[c];
                }
                x[others[m - 1]] = u;
                x
            };
            let roots_at = |u: f64| -> Vec<Vec<f64>> {
                let x0 = base(u);
                let g = |t: f64| {
                    let mut x = x0.clone();
                    x[j] = t;
                    b.eval(&x, z1)[0] - s
                };
                line_roots(&g, ja, jb, root_samples)
                    .into_iter()
                    .map(|t| {
                        let mut x = x0.clone();
                        x[j] = t;
                        x
                    })
                    .collect()
            };
            let mut breaks = Vec::new();
            if !interfaces.is_empty() {
                let ns = ((lb - la) * q.per_unit).ceil().max(32.0) as usize;
                let h = (lb - la) / ns as f64;
                // Interface crossings of the tracked roots on [u0, u1], where both ends carry
                // the same number of roots.
                let crossings = |u0: f64, u1: f64, r0: &[Vec<f64>], r1: &[Vec<f64>], out: &mut Vec<f64>| {
                    for r in 0..r1.len() {
                        for f in interfaces {
                            let (f0, f1) = (f(&r0[r]), f(&r1[r]));
                            if f0 * f1 < 0.0 {
                                let gi = |u: f64| {
                                    let rs = roots_at(u);
                                    if rs.len() == r1.len() {
                                        f(&rs[r])
                                    } else {
                                        f0
                                    }
                                };
                                out.push(quad::illinois(&gi, u0, u1, f0, f1, 1e-14));
                            }
                        }
                    }
                };
                let mut prev = roots_at(la);
                for i in 1..=ns {
                    let u0 = la + (i - 1) as f64 * h;
                    let u1 = la + i as f64 * h;
                    let cur = roots_at(u1);
                    if cur.len() == prev.len() {
                        crossings(u0, u1, &prev, &cur, &mut breaks);
                    } else {
                        // A root leaves the region inside this step: split there too.
                        let (mut lo, mut hi) = (u0, u1);
                        for _ in 0..60 {
                            let mid = 0.5 * (lo + hi);
                            if roots_at(mid).len() == prev.len() {
                                lo = mid;
                            } else {
                                hi = mid;
                            }
                        }
                        breaks.push(0.5 * (lo + hi));
                        let (rl, rh) = (roots_at(lo), roots_at(hi));
                        if lo > u0 {
                            crossings(u0, lo, &prev, &rl, &mut breaks);
                        }
                        if rh.len() == cur.len() && hi < u1 {
                            crossings(hi, u1, &rh, &cur, &mut breaks);
                        }
                    }
                    prev = cur;
                }
            }
            for (u, wu) in quad::split_nodes(la, lb, &breaks, q.per_unit, 16, q.rule) {
                for x in roots_at(u) {
                    let gr = grad(&x);
                    let num = gr[j].powi(PARTITION_POWER);
                    let den: f64 = gr.iter().map(|v| v.powi(PARTITION_POWER)).sum();
                    if den <= 0.0 || gr[j] == 0.0 {
                        continue;
                    }
                    let wt = w * wu * num / den / gr[j].abs();
                    if wt > 0.0 {
                        out.push((x, wt));
                    }
                }
            }
        }
    }
    out
}

/// Higher-codimension level sets: single graph chart over x' found by Gauss-Newton seeding
/// and Newton continuation; weight 1 / |det b_x''|.
fn level_set_nodes_newton(
    b: &DefiningForm,
    z: &[f64],
    q: &QuadratureSpec,
    region: &[(f64, f64)],
) -> Result<Vec<(Vec<f64>, f64)>, FibrationError> {
    let (z1, z2) = b.split_z(z);
    let n = b.n;
    let mut seed: Option<Vec<f64>> = None;
    let starts = [0.5, 0.25, 0.75];
    'outer: for &fr in &starts {
        let mut x: Vec<f64> = region.iter().map(|(a, c)| a + fr * (c - a)).collect();
        for _ in 0..100 {
            let r = sub(&b.eval(&x, z1), z2);
            if norm(&r) < 1e-13 {
                if region.iter().zip(&x).all(|((a, c), v)| v >= a && v <= c) {
                    seed = Some(x);
                    break 'outer;
                }
                break;
            }
            let (bx, _) = b.jacobians(&x, z1);
            let step = crate::linalg::lstsq(&bx, &DVector::from_vec(r));
            for i in 0..n {
                x[i] -= step[i];
            }
        }
    }
    let x0 = seed.ok_or(FibrationError::EmptyLevelSet)?;
    let (x1_idx, x2_idx) = b.best_split(&x0, z1);
    let boxes: Vec<(f64, f64)> = x1_idx.iter().map(|&i| region[i]).collect();
    let mut out = Vec::new();
    let mut last: Vec<f64> = x2_idx.iter().map(|&i| x0[i]).collect();
    let seed2 = last.clone();
    for (x1, w) in tensor_nodes(&boxes, q) {
        let sol = b
            .solve_x2(z, &x1, &last, &x1_idx, &x2_idx)
            .or_else(|| b.solve_x2(z, &x1, &seed2, &x1_idx, &x2_idx));
        let Some(x2) = sol else { continue };
        let mut x = vec![0.0; n];
        for (i, &c) in x1_idx.iter().enumerate() {
            x[c] = x1[i];
        }
        for (i, &c) in x2_idx.iter().enumerate() {
            x[c] = x2[i];
        }
        if !region.iter().zip(&x).all(|((a, c), v)| v >= a && v <= c) {
            continue;
        }
        let (bx, _) = b.jacobians(&x, z1);
        let b2 = DMatrix::from_fn(b.k, b.k, |r, c| bx[(r, x2_idx[c])]);
        let det = b2.determinant().abs();
        if det > 0.0 {
            out.push((x, w / det));
        }
        last = x2;
    }
    Ok(out)
}

/// First return time of an integral curve to its start (period of a closed orbit).
pub fn orbit_period(field: &VectorField, start: &[f64], chart: &ChartGeometry, max_time: f64) -> Option<f64> {
    let opts = IntegratorOptions { check_tangency: false, ..Default::default() };
    let tr = crate::geometry::flow_integrate(
        field,
        &crate::geometry::BundlePoint::from_state(start, field.base_dim),
        max_time,
        chart,
        &opts,
    )
    .ok()?;
    let x0 = &start[..field.base_dim];
    let m = 4000;
    let dist = |t: f64| norm(&sub(&tr.base_at(t), x0));
    let h = tr.tau_plus / m as f64;
    let mut left = false;
    let scale = norm(&field.base_velocity(start)) * h;
    for i in 1..m {
        let t = i as f64 * h;
        if dist(t) > 100.0 * scale {
            left = true;
        }
        if left && dist(t) < dist(t - h) && dist(t) <= dist(t + h) {
            let mut a = t - h;
            let mut b = t + h;
            for _ in 0..100 {
                let m1 = a + (b - a) / 3.0;
                let m2 = b - (b - a) / 3.0;
                if dist(m1) < dist(m2) {
                    b = m2;
                } else {
                    a = m1;
                }
            }
            let tp = 0.5 * (a + b);
            if dist(tp) < 1e-6 {
                return Some(tp);
            }
        }
    }
    None
}

/// Orthonormal complement check: pairings <N*, T> of a conormal fiber.
pub fn pairing_defect(cf: &ConormalFiber) -> f64 {
    (cf.conormal.transpose() * &cf.tangent).amax()
}

/// Basis of the kernel of phi_z(y) used by injectivity tests.
pub fn kernel_of(m: &DMatrix<f64>) -> DMatrix<f64> {
    null_space(m, RANK_RTOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{hamiltonian_vector_field, Symbol};

    pub(crate) fn radon() -> DefiningForm {
        DefiningForm {
            n: 2,
            big_n: 2,
            k: 1,
            b: Arc::new(|x: &[f64], z1: &[f64]| vec![x[0] * z1[0].cos() + x[1] * z1[0].sin()]),
            jac: Some(Arc::new(|x: &[f64], z1: &[f64]| {
                let (c, s) = (z1[0].cos(), z1[0].sin());
                (
                    DMatrix::from_row_slice(1, 2, &[c, s]),
                    DMatrix::from_row_slice(1, 1, &[-x[0] * s + x[1] * c]),
                )
            })),
            holo: None,
        }
    }

    fn radon_fib() -> Fibration {
        Fibration::from_defining_function(
            radon(),
            ChartGeometry::new(vec![(-3.0, 3.0), (-3.0, 3.0)]).unwrap(),
            vec![(0.0, std::f64::consts::PI), (-2.0, 2.0)],
            &[(vec![0.1, 0.2], vec![0.3])],
        )
        .unwrap()
    }

    #[test]
    fn radon_conormal_is_theta() {
        let f = radon_fib();
        let a: f64 = 0.7;
        let x = [0.4, -0.3];
        let s = x[0] * a.cos() + x[1] * a.sin();
        let cf = f.conormal_fiber(&[a, s], &x).unwrap();
        let c: Vec<f64> = cf.conormal.column(0).iter().copied().collect();
        let cross = c[0] * a.sin() - c[1] * a.cos();
        assert!(cross.abs() < 1e-12);
        assert!(pairing_defect(&cf) < 1e-10);
    }

    #[test]
    fn radon_duality_and_dimensions() {
        let f = radon_fib();
        let a: f64 = 2.1;
        let x = [0.4, 0.9];
        let z = [a, x[0] * a.cos() + x[1] * a.sin()];
        let cp = f.canonical_point(&z, &x, &[1.3]).unwrap();
        let jet = f.jet(&z, &x).unwrap();
        let back = jet.apply_b(&cp.zeta);
        assert!(norm(&sub(&back, &cp.eta)) < 1e-8);
        // zeta = (-b_z' mu, mu) with eta = -b_x^T mu.
        let mu = -(cp.eta[0] * a.cos() + cp.eta[1] * a.sin());
        assert!((cp.zeta[1] - mu).abs() < 1e-10);
        assert!((cp.zeta[0] + mu * (-x[0] * a.sin() + x[1] * a.cos())).abs() < 1e-9);
    }

    #[test]
    fn degenerate_graph_fails_submersion() {
        let g = GraphForm {
            n: 2,
            big_n: 2,
            x1_idx: vec![0],
            x2_idx: vec![1],
            phi: Arc::new(|_z: &[f64], _x: &[f64]| vec![0.5]),
            jac: None,
            x1_box: vec![(-1.0, 1.0)],
        };
        let f = Fibration::from_graph(g, ChartGeometry::new(vec![(-1.0, 1.0); 2]).unwrap(), vec![(-1.0, 1.0); 2]).unwrap();
        let err = f.submersion_check(&[(vec![0.1, 0.2], vec![0.3, 0.5])]).unwrap_err();
        assert!(matches!(err, FibrationError::RankDeficient { .. }));
    }

    #[test]
    fn constant_b_is_rejected() {
        let b = DefiningForm {
            n: 2,
            big_n: 2,
            k: 1,
            b: Arc::new(|_x: &[f64], z1: &[f64]| vec![z1[0]]),
            jac: None,
            holo: None,
        };
        let err = Fibration::from_defining_function(
            b,
            ChartGeometry::new(vec![(-1.0, 1.0); 2]).unwrap(),
            vec![(-1.0, 1.0); 2],
            &[(vec![0.1, 0.2], vec![0.3])],
        )
        .unwrap_err();
        assert!(matches!(err, FibrationError::RankDeficient { .. }));
    }

    #[test]
    fn sphere_level_set_mass() {
        // {|x|^2 = r^2} in R^3 with the delta measure of b = |x|^2: total 4 pi r^2 / (2 r).
        let b = DefiningForm {
            n: 3,
            big_n: 3,
            k: 1,
            b: Arc::new(|x: &[f64], z1: &[f64]| {
                vec![(x[0] - z1[0]).powi(2) + (x[1] - z1[1]).powi(2) + x[2] * x[2]]
            }),
            jac: None,
            holo: None,
        };
        let f = Fibration::from_defining_function(
            b,
            ChartGeometry::new(vec![(-1.0, 1.0); 3]).unwrap(),
            vec![(-0.1, 0.1), (-0.1, 0.1), (0.0, 1.0)],
            &[(vec![0.3, 0.1, 0.2], vec![0.0, 0.0])],
        )
        .unwrap();
        let r: f64 = 0.7;
        let q = QuadratureSpec { per_unit: 24.0, rule: Rule::GaussLegendre };
        let nodes = f.induced_measure(&[0.0, 0.0, r * r], &q, None, &[]).unwrap();
        let total: f64 = nodes.iter().map(|(_, w)| w).sum();
        // Independent oracle: integrate 1/(2r) over the sphere in spherical coordinates.
        let gl = quad::nodes(0.0, std::f64::consts::PI, 8.0, 16, Rule::GaussLegendre);
        let oracle: f64 = gl.iter().map(|(th, w)| w * th.sin()).sum::<f64>() * 2.0 * std::f64::consts::PI * r * r
            / (2.0 * r);
        assert!((total - oracle).abs() / oracle < 1e-4, "{total} vs {oracle}");
        assert!(nodes.iter().all(|(_, w)| *w > 0.0));
    }

    #[test]
    fn codim_two_coordinate_line() {
        let b = DefiningForm {
            n: 3,
            big_n: 3,
            k: 2,
            b: Arc::new(|x: &[f64], _z1: &[f64]| vec![x[0], x[1]]),
            jac: None,
            holo: None,
        };
        let f = Fibration::from_defining_function(
            b,
            ChartGeometry::new(vec![(-1.0, 1.0); 3]).unwrap(),
            vec![(-1.0, 1.0); 3],
            &[(vec![0.1, 0.2, 0.3], vec![0.0])],
        )
        .unwrap();
        let nodes = f.induced_measure(&[0.0, 0.0, 0.0], &QuadratureSpec::default(), None, &[]).unwrap();
        let total: f64 = nodes.iter().map(|(_, w)| w).sum();
        assert!((total - 2.0).abs() < 1e-12);
        assert!(nodes.iter().all(|(x, _)| x[0].abs() < 1e-14 && x[1].abs() < 1e-14));
    }

    fn flat_disk_rays() -> RayFamily {
        let r = 1.0;
        let p = Symbol::euclidean_half(2);
        RayFamily {
            field: hamiltonian_vector_field(&p),
            chart: ChartGeometry::ball(&[0.0, 0.0], r),
            param_dim: 2,
            param: Arc::new(move |z: &[f64]| {
                let (a, s) = (z[0], z[1]);
                let (c, sn) = (a.cos(), a.sin());
                let h = (r * r - s * s).max(0.0).sqrt();
                vec![s * c + h * sn, s * sn - h * c, -sn, c]
            }),
            dparam: None,
            locate: None,
            z_box: vec![(0.0, 2.0 * std::f64::consts::PI), (-r, r)],
            opts: IntegratorOptions::default(),
        }
    }

    #[test]
    fn segment_measure_is_its_length() {
        let fib = Fibration::from_ray_family(flat_disk_rays(), &[vec![0.3, 0.2]]).unwrap();
        let nodes = fib.induced_measure(&[0.3, 0.6], &QuadratureSpec::default(), None, &[]).unwrap();
        let total: f64 = nodes.iter().map(|(_, w)| w).sum();
        assert!((total - 1.6).abs() < 1e-8);
    }

    #[test]
    fn ray_a_matches_pullback() {
        let fib = Fibration::from_ray_family(flat_disk_rays(), &[]).unwrap();
        let rays = fib.rays.clone().unwrap();
        let z = [0.9, 0.35];
        let ray = rays.variational(&z).unwrap();
        let t = 0.4;
        let x = ray.x(t);
        let cf = fib.conormal_fiber(&z, &x).unwrap();
        let eta: Vec<f64> = cf.conormal.column(0).iter().copied().collect();
        let graph_a = cf.jet.apply_a(&eta);
        let pull: Vec<f64> = (ray.jacobi(t).transpose() * DVector::from_vec(eta.clone())).iter().map(|v| -v).collect();
        assert!(norm(&sub(&graph_a, &pull)) < 1e-6, "{graph_a:?} {pull:?}");
    }

    #[test]
    fn circle_orbit_period() {
        let rot = VectorField::new(2, 2, Arc::new(|y: &[f64]| vec![-y[1], y[0]]));
        let chart = ChartGeometry::new(vec![(-2.0, 2.0); 2]).unwrap();
        let p = orbit_period(&rot, &[1.0, 0.0], &chart, 10.0).unwrap();
        assert!((p - 2.0 * std::f64::consts::PI).abs() < 1e-7);
    }

    #[test]
    fn figure_eight_self_intersection() {
        // Nodal cubic (tau^2 - 1, tau^3 - tau) crosses itself at the origin.
        let field = VectorField::new(3, 2, Arc::new(|y: &[f64]| vec![2.0 * y[2], 3.0 * y[2] * y[2] - 1.0, 1.0]));
        let rays = RayFamily {
            field,
            chart: ChartGeometry::new(vec![(-1.5, 3.0), (-3.0, 3.0)]).unwrap(),
            param_dim: 2,
            param: Arc::new(|z: &[f64]| vec![z[0] - 1.0, z[1], 0.0]),
            dparam: None,
            locate: None,
            z_box: vec![(-0.1, 0.1); 2],
            opts: IntegratorOptions::default(),
        };
        let err = Fibration::from_ray_family(rays, &[vec![0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, FibrationError::SelfIntersection { .. }), "{err:?}");
    }

    #[test]
    fn restricted_lines_have_enough_variations() {
        let p = Symbol::euclidean_half(3);
        let rays = RayFamily {
            field: hamiltonian_vector_field(&p),
            chart: ChartGeometry::ball(&[0.0, 0.0, 0.0], 2.0),
            param_dim: 3,
            param: Arc::new(|z: &[f64]| {
                let (c, s) = (z[1].cos(), z[1].sin());
                vec![-z[2] * s, z[2] * c, z[0], c, s, 0.0]
            }),
            dparam: None,
            locate: None,
            z_box: vec![(-1.0, 1.0), (0.0, 6.3), (-1.0, 1.0)],
            opts: IntegratorOptions::default(),
        };
        Fibration::from_ray_family(rays, &[vec![0.2, 0.5, 0.3], vec![-0.4, 2.0, -0.6]]).unwrap();
    }
}
