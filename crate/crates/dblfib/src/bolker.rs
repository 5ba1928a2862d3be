//! Bolker condition checks: variation fields, conjugate-pair scans, injectivity and
//! immersion tests on the canonical relation, PVS membership and pseudoconvexity.

use crate::fibration::{CanonicalPoint, Fibration, FibrationError, QuadratureSpec, RayFamily, VariationalRay};
use crate::geometry::{poisson_bracket, Symbol};
use crate::linalg::{
    dot, fd_jacobian, levenberg_marquardt, norm, null_space, rank_margin, rank_verdict, sub, RankVerdict,
    RANK_RTOL,
};
use crate::quad::Rule;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

/// Refined conjugacy / annihilation measures below this are flagged.
pub const CONJUGATE_TOL: f64 = 1e-6;
/// Default (t, s) samples per ray.
pub const SCAN_SAMPLES: usize = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BolkerError {
    #[error(transparent)]
    Fibration(#[from] FibrationError),
    #[error("PVS search found no feasible covector")]
    SearchFailed,
    #[error("no local representation available for this check")]
    Unsupported,
}

/// Samples of J_w(t) = d pi dPhi_t (w) along a ray.
#[derive(Debug, Clone, Serialize)]
pub struct VariationField {
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// Variation field from the variational equation.
pub fn variation_field(rays: &RayFamily, z: &[f64], w: &[f64], t_grid: &[f64]) -> Result<VariationField, BolkerError> {
    let ray = rays.variational(z)?;
    Ok(VariationField {
        z: z.to_vec(),
        w: w.to_vec(),
        times: t_grid.to_vec(),
        values: t_grid.iter().map(|&t| ray.variation(t, w)).collect(),
    })
}

/// Variation field by central differences of flows in z (step 1e-5 / |w|).
pub fn variation_field_fd(rays: &RayFamily, z: &[f64], w: &[f64], t_grid: &[f64]) -> Result<VariationField, BolkerError> {
    let wn = norm(w);
    if wn == 0.0 {
        return Ok(VariationField {
            z: z.to_vec(),
            w: w.to_vec(),
            times: t_grid.to_vec(),
            values: vec![vec![0.0; rays.base_dim()]; t_grid.len()],
        });
    }
    let h = 1e-5 / wn;
    let zp: Vec<f64> = z.iter().zip(w).map(|(a, b)| a + h * b).collect();
    let zm: Vec<f64> = z.iter().zip(w).map(|(a, b)| a - h * b).collect();
    let tp = rays.trajectory(&zp)?;
    let tm = rays.trajectory(&zm)?;
    Ok(VariationField {
        z: z.to_vec(),
        w: w.to_vec(),
        times: t_grid.to_vec(),
        values: t_grid
            .iter()
            .map(|&t| sub(&tp.base_at(t), &tm.base_at(t)).iter().map(|v| v / (2.0 * h)).collect())
            .collect(),
    })
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v).max(1e-300);
    v.iter().map(|a| a / n).collect()
}

fn perp_projector(v: &[f64]) -> DMatrix<f64> {
    let u = DVector::from_vec(unit(v));
    DMatrix::identity(v.len(), v.len()) - &u * u.transpose()
}

/// Variation matrix along a ray. For null bicharacteristics of a homogeneous symbol of
/// degree m the radial fiber scaling at the entry point is appended; it reparametrizes
/// the curve, giving the column (m - 1) (t + tau_minus) xdot(t).
pub struct RayVariations {
    pub ray: VariationalRay,
    radial_degree: Option<f64>,
}

impl RayVariations {
    pub fn new(rays: &RayFamily, z: &[f64]) -> Result<Self, BolkerError> {
        let ray = rays.variational(z)?;
        let radial_degree = rays.chart.symbol.as_ref().and_then(|p| {
            let st = ray.state(0.0);
            let (x, xi) = st.split_at(ray.base_dim);
            let scale = norm(&p.grad_xi(x, xi)) * norm(xi);
            p.degree.filter(|_| p.eval(x, xi).abs() <= 1e-8 * scale.max(1e-300))
        });
        Ok(Self { ray, radial_degree })
    }

    pub fn is_null(&self) -> bool {
        self.radial_degree.is_some()
    }

    pub fn jacobi(&self, t: f64) -> DMatrix<f64> {
        let j = self.ray.jacobi(t);
        match self.radial_degree {
            None => j,
            Some(m) => {
                let c = j.ncols();
                let v = self.ray.xdot(t);
                let mut out = j.insert_column(c, 0.0);
                for (i, vi) in v.iter().enumerate() {
                    out[(i, c)] = (m - 1.0) * (t + self.ray.tau_minus()) * vi;
                }
                out
            }
        }
    }

    /// Parameter directions w with J_w(s) parallel to xdot(s) (orthonormal columns).
    pub fn tangential(&self, s: f64) -> DMatrix<f64> {
        let m = perp_projector(&self.ray.xdot(s)) * self.jacobi(s);
        null_space(&m, 1e-9)
    }

    /// Conjugacy measure in [0, 1], zero iff x(t) and x(s) are conjugate: the normalized
    /// sigma_{n-1} of V_z(t, s) modulo xdot(t) (of V_z(t, s) itself for null rays,
    /// where V_z(t, s) should fill ker xi(t)).
    pub fn conjugacy_measure(&self, w_s: &DMatrix<f64>, t: f64) -> f64 {
        let n = self.ray.base_dim;
        let j = self.jacobi(t);
        let full = if self.is_null() { j } else { perp_projector(&self.ray.xdot(t)) * j };
        let scale = crate::linalg::singular_values(&full).first().copied().unwrap_or(0.0);
        if scale == 0.0 || w_s.ncols() == 0 {
            return 0.0;
        }
        let s = crate::linalg::singular_values(&(full * w_s));
        if s.len() < n - 1 {
            return 0.0;
        }
        s[n - 2] / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConjugatePair {
    pub s: f64,
    pub t: f64,
    pub margin: f64,
}

fn golden_min(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Z-conjugate pairs (s, t) on ray z over a `samples` x `samples` grid, refined by golden section.
pub fn conjugate_scan(rays: &RayFamily, z: &[f64], samples: usize) -> Result<Vec<ConjugatePair>, BolkerError> {
    let rv = RayVariations::new(rays, z)?;
    let (a, b) = (-rv.ray.tau_minus(), rv.ray.tau_plus());
    let h = (b - a) / (samples - 1) as f64;
    let grid: Vec<f64> = (0..samples).map(|i| a + i as f64 * h).collect();
    let rows: Vec<Vec<ConjugatePair>> = grid
        .par_iter()
        .map(|&s| {
            let w_s = rv.tangential(s);
            let m: Vec<f64> = grid.iter().map(|&t| rv.conjugacy_measure(&w_s, t)).collect();
            let mut out = Vec::new();
            for i in 1..samples - 1 {
                let t = grid[i];
                if (t - s).abs() <= 2.0 * h {
                    continue;
                }
                if m[i] <= m[i - 1] && m[i] <= m[i + 1] {
                    let f = |tt: f64| rv.conjugacy_measure(&w_s, tt);
                    let (tm, vm) = golden_min(&f, grid[i - 1], grid[i + 1], 60);
                    if vm < CONJUGATE_TOL {
                        out.push(ConjugatePair { s, t: tm, margin: vm });
                    }
                }
            }
            out
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct InjectivityResult {
    pub pass: bool,
    pub min_ratio: f64,
    pub witnesses: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImmersionResult {
    pub pass: bool,
    pub verdict: RankVerdict,
    pub margin: f64,
}

/// Annihilation ratio of V = jac * span(w) by eta: max over unit w of |eta(jac w)|,
/// normalized by |eta| and the scale sigma_1(jac) so collapsed variations count as annihilated.
fn annihilation(eta: &[f64], jac: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let scale = crate::linalg::singular_values(jac).first().copied().unwrap_or(0.0);
    if scale == 0.0 || w.ncols() == 0 {
        return 0.0;
    }
    let row = w.transpose() * (jac.transpose() * DVector::from_column_slice(eta));
    row.norm() / (norm(eta) * scale)
}

/// Orthonormal basis of the column space (drops numerically null directions).
#[cfg(test)]
fn orth_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, false);
    let u = svd.u.unwrap();
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cols: Vec<DVector<f64>> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-9 * smax.max(f64::MIN_POSITIVE))
        .map(|i| u.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(m.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

fn phi_z_with_split(fib: &Fibration, z: &[f64], y: &[f64], x2_idx: &[usize]) -> Result<DMatrix<f64>, BolkerError> {
    if let Some(g) = &fib.graph {
        let (y1, _) = g.split(y);
        return Ok(g.phi_jac(z, &y1).0);
    }
    let b = fib.defining.as_ref().ok_or(BolkerError::Unsupported)?;
    let (z1, _) = b.split_z(z);
    let (bx, bz1) = b.jacobians(y, z1);
    let k = b.k;
    let b2 = DMatrix::from_fn(k, k, |r, c| bx[(r, x2_idx[c])]);
    let inv = b2.try_inverse().ok_or(BolkerError::Unsupported)?;
    let mut phi_z = DMatrix::zeros(k, b.big_n);
    let pz1 = -&inv * bz1;
    for r in 0..k {
        for c in 0..b.big_n - k {
            phi_z[(r, c)] = pz1[(r, c)];
        }
        for c in 0..k {
            phi_z[(r, b.big_n - k + c)] = inv[(r, c)];
        }
    }
    Ok(phi_z)
}

/// No annihilation of V_z(x, y) by eta for sampled y in G_z away from x.
pub fn injectivity_check(fib: &Fibration, point: &CanonicalPoint) -> Result<InjectivityResult, BolkerError> {
    if let Some(rays) = &fib.rays {
        return ray_injectivity(rays, point);
    }
    let jet = fib.jet(&point.z, &point.x)?;
    let eta2 = jet.eta2(&point.eta);
    let q = QuadratureSpec { per_unit: 8.0, rule: Rule::Midpoint };
    let nodes = fib.induced_measure(&point.z, &q, None, &[])?;
    let diam = fib.x_chart.diameter();
    let mut min_ratio = f64::INFINITY;
    let mut witnesses = Vec::new();
    for (y, _) in nodes {
        if norm(&sub(&y, &point.x)) < 1e-3 * diam {
            continue;
        }
        let Ok(pz_y) = phi_z_with_split(fib, &point.z, &y, &jet.x2_idx) else { continue };
        let w = null_space(&pz_y, RANK_RTOL);
        if w.ncols() == 0 {
            continue;
        }
        // Normal displacement at x (in x'' coordinates) of variations keeping y fixed.
        let ratio = annihilation(&eta2, &jet.phi_z, &w);
        if ratio < min_ratio {
            min_ratio = ratio;
        }
        if ratio <= CONJUGATE_TOL {
            witnesses.push(y);
        }
    }
    Ok(InjectivityResult { pass: witnesses.is_empty(), min_ratio, witnesses })
}

fn ray_injectivity(rays: &RayFamily, point: &CanonicalPoint) -> Result<InjectivityResult, BolkerError> {
    let rv = RayVariations::new(rays, &point.z)?;
    let ray = &rv.ray;
    let (t0, _) = ray.time_of(&point.x);
    let (a, b) = (-ray.tau_minus(), ray.tau_plus());
    let m = SCAN_SAMPLES;
    let h = (b - a) / (m - 1) as f64;
    let ratio_at = |s: f64| -> f64 {
        let w = rv.tangential(s);
        annihilation(&point.eta, &rv.jacobi(t0), &w)
    };
    let grid: Vec<f64> = (0..m).map(|i| a + i as f64 * h).collect();
    let vals: Vec<f64> = grid.iter().map(|&s| ratio_at(s)).collect();
    let mut witnesses = Vec::new();
    let mut min_ratio = f64::INFINITY;
    for i in 0..m {
        if (grid[i] - t0).abs() <= 2.0 * h {
            continue;
        }
        let left = if i > 0 { vals[i - 1] } else { f64::INFINITY };
        let right = if i + 1 < m { vals[i + 1] } else { f64::INFINITY };
        let (s, v) = if vals[i] <= left && vals[i] <= right && i > 0 && i + 1 < m {
            golden_min(&ratio_at, grid[i - 1], grid[i + 1], 60)
        } else {
            (grid[i], vals[i])
        };
        min_ratio = min_ratio.min(v);
        if v <= CONJUGATE_TOL && (s - t0).abs() > 2.0 * h {
            witnesses.push(ray.x(s));
        }
    }
    Ok(InjectivityResult { pass: witnesses.is_empty(), min_ratio, witnesses })
}

/// Graph-form immersion matrix (phi_z^T, d/dx' (phi_z^T eta'')), N x n, with eta normalized.
pub fn graph_condition_matrix(fib: &Fibration, point: &CanonicalPoint) -> Result<DMatrix<f64>, BolkerError> {
    let jet = fib.jet(&point.z, &point.x)?;
    let en = norm(&point.eta);
    let eta2 = DVector::from_vec(jet.eta2(&point.eta).iter().map(|v| v / en).collect());
    let (k, n1, big_n) = (jet.x2_idx.len(), jet.x1_idx.len(), jet.phi_z.ncols());
    let mut m = DMatrix::zeros(big_n, k + n1);
    for r in 0..big_n {
        for c in 0..k {
            m[(r, c)] = jet.phi_z[(c, r)];
        }
    }
    for j in 0..n1 {
        let col = jet.dphi_z[j].transpose() * &eta2;
        for r in 0..big_n {
            m[(r, k + j)] = col[r];
        }
    }
    Ok(m)
}

/// Defining-form immersion matrix (b_x^T, d/dz' (b_x^T zeta'')), n x N, with zeta normalized.
pub fn defining_condition_matrix(fib: &Fibration, point: &CanonicalPoint) -> Result<DMatrix<f64>, BolkerError> {
    let b = fib.defining.as_ref().ok_or(BolkerError::Unsupported)?;
    let (z1, _) = b.split_z(&point.z);
    let zn = norm(&point.zeta);
    let zeta2 = DVector::from_vec(point.zeta[b.big_n - b.k..].iter().map(|v| v / zn).collect());
    let (bx, _) = b.jacobians(&point.x, z1);
    let g = |zz: &[f64]| -> Vec<f64> {
        let (bx, _) = b.jacobians(&point.x, zz);
        (bx.transpose() * &zeta2).iter().copied().collect()
    };
    let dz = fd_jacobian(&g, z1, 1e-5);
    let mut m = DMatrix::zeros(b.n, b.big_n);
    for r in 0..b.n {
        for c in 0..b.k {
            m[(r, c)] = bx[(c, r)];
        }
        for c in 0..b.big_n - b.k {
            m[(r, b.k + c)] = dz[(r, c)];
        }
    }
    Ok(m)
}

fn immersion_from(m: &DMatrix<f64>) -> ImmersionResult {
    let margin = rank_margin(m);
    let verdict = rank_verdict(margin);
    ImmersionResult { pass: verdict == RankVerdict::Full, verdict, margin }
}

/// Immersion test via the graph-form condition.
pub fn immersion_check(fib: &Fibration, point: &CanonicalPoint) -> Result<ImmersionResult, BolkerError> {
    Ok(immersion_from(&graph_condition_matrix(fib, point)?))
}

/// Immersion test via the defining-form condition.
pub fn immersion_check_defining(fib: &Fibration, point: &CanonicalPoint) -> Result<ImmersionResult, BolkerError> {
    Ok(immersion_from(&defining_condition_matrix(fib, point)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct PvsResult {
    pub member: bool,
    pub xi: Vec<f64>,
    pub residual: f64,
    pub angle: f64,
}

fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let c = (dot(a, b) / (norm(a) * norm(b)).max(1e-300)).abs().min(1.0);
    // asin of the sine is accurate near parallel vectors.
    let s2: f64 = {
        let ua = unit(a);
        let ub = unit(b);
        let sgn = if dot(&ua, &ub) < 0.0 { -1.0 } else { 1.0 };
        ua.iter().zip(&ub).map(|(x, y)| (x - sgn * y).powi(2)).sum::<f64>()
    };
    let _ = c;
    2.0 * (0.5 * s2.sqrt()).min(1.0).asin()
}

fn project_onto_characteristic(p: &Symbol, x: &[f64], xi0: &[f64]) -> Option<Vec<f64>> {
    let mut xi = xi0.to_vec();
    for _ in 0..60 {
        let v = p.eval(x, &xi);
        if v.abs() < 1e-13 {
            return Some(xi);
        }
        let g = p.grad_xi(x, &xi);
        let g2 = dot(&g, &g);
        if g2 < 1e-300 || !v.is_finite() {
            return None;
        }
        for (a, b) in xi.iter_mut().zip(&g) {
            *a -= v * b / g2;
        }
        if p.degree.is_some() {
            let n = norm(&xi);
            if n < 1e-12 {
                return None;
            }
            xi.iter_mut().for_each(|a| *a /= n);
        }
    }
    (p.eval(x, &xi).abs() < 1e-10).then_some(xi)
}

/// Is eta in PVS(x): exists xi in Xi_x with eta(Y^h(x, xi)) = 0 and eta not parallel to xi.
pub fn pvs_membership(p: &Symbol, x: &[f64], eta: &[f64], seed: u64) -> Result<PvsResult, BolkerError> {
    let n = p.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let en = norm(eta);
    let residual = |xi: &[f64]| -> Vec<f64> {
        let g = p.grad_xi(x, xi);
        let mut r = vec![p.eval(x, xi), dot(eta, &g) / (en * norm(&g).max(1e-300))];
        if p.degree.is_some() {
            r.push(dot(xi, xi) - 1.0);
        }
        r
    };
    let mut feasible = false;
    let mut best: Option<PvsResult> = None;
    for _ in 0..32 {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        while norm(&v) < 1e-3 {
            v = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        }
        let v = unit(&v);
        let Some(start) = project_onto_characteristic(p, x, &v) else { continue };
        feasible = true;
        let (xi, res) = levenberg_marquardt(&residual, &start, 1e-13, 200);
        let angle = angle_between(&xi, eta);
        let cand = PvsResult { member: res < 1e-8 && angle > 1e-4, xi, residual: res, angle };
        let better = match &best {
            None => true,
            Some(b) => (cand.member && !b.member) || (cand.member == b.member && cand.residual < b.residual),
        };
        if better {
            best = Some(cand);
        }
    }
    if !feasible {
        return Err(BolkerError::SearchFailed);
    }
    Ok(best.unwrap())
}

#[derive(Debug, Clone, Serialize)]
pub struct PseudoconvexityResult {
    pub pass: bool,
    pub min_margin: f64,
    pub samples: usize,
    pub empty_constraint_set: bool,
}

/// min {p, {p, F}} over a grid projected onto {p = {p, F} = 0} (|xi| = 1 when p is homogeneous).
pub fn pseudoconvexity_check(
    p: &Symbol,
    f: &Symbol,
    points: &[Vec<f64>],
    directions: usize,
    seed: u64,
) -> PseudoconvexityResult {
    let pf = poisson_bracket(p, f);
    let ppf = poisson_bracket(p, &pf);
    let n = p.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<Vec<f64>> = (0..directions)
        .map(|i| {
            if n == 2 {
                let a = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / directions as f64;
                vec![a.cos(), a.sin()]
            } else {
                let v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                unit(&v)
            }
        })
        .collect();
    let results: Vec<Option<f64>> = points
        .par_iter()
        .flat_map_iter(|x| {
            let (pf, ppf) = (&pf, &ppf);
            dirs.iter().map(move |d| {
                let res = |xi: &[f64]| -> Vec<f64> {
                    let mut r = vec![p.eval(x, xi), pf.eval(x, xi)];
                    if p.degree.is_some() {
                        r.push(dot(xi, xi) - 1.0);
                    }
                    r
                };
                let (xi, cost) = levenberg_marquardt(&res, d, 1e-11, 200);
                (cost < 1e-9).then(|| ppf.eval(x, &xi))
            })
        })
        .collect();
    let vals: Vec<f64> = results.into_iter().flatten().collect();
    if vals.is_empty() {
        return PseudoconvexityResult { pass: false, min_margin: f64::NAN, samples: 0, empty_constraint_set: true };
    }
    let min_margin = vals.iter().copied().fold(f64::INFINITY, f64::min);
    PseudoconvexityResult { pass: min_margin > 1e-8, min_margin, samples: vals.len(), empty_constraint_set: false }
}

#[derive(Debug, Clone, Serialize)]
pub struct ImmersionSummary {
    pub pass: bool,
    pub margin: f64,
    pub verdict: RankVerdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct InjectivitySummary {
    pub pass: bool,
    pub witnesses: Vec<Vec<f64>>,
}

/// Combined per-point report.
#[derive(Debug, Clone, Serialize)]
pub struct BolkerReport {
    pub point: CanonicalPoint,
    pub immersion: ImmersionSummary,
    pub injectivity: InjectivitySummary,
    pub pvs: Option<bool>,
    pub pseudoconvexity: Option<PseudoconvexityResult>,
}

pub fn bolker_report(
    fib: &Fibration,
    point: &CanonicalPoint,
    symbol: Option<&Symbol>,
    seed: u64,
) -> Result<BolkerReport, BolkerError> {
    let imm = immersion_check(fib, point)?;
    let inj = injectivity_check(fib, point)?;
    let pvs = match symbol {
        Some(p) => match pvs_membership(p, &point.x, &point.eta, seed) {
            Ok(r) => Some(r.member),
            Err(BolkerError::SearchFailed) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    Ok(BolkerReport {
        point: point.clone(),
        immersion: ImmersionSummary { pass: imm.pass, margin: imm.margin, verdict: imm.verdict },
        injectivity: InjectivitySummary { pass: inj.pass, witnesses: inj.witnesses },
        pvs,
        pseudoconvexity: None,
    })
}

// Sphere geodesics in the stereographic chart of the round unit sphere.

/// Geodesics from the origin: z = beta, xi = 2 (cos beta, sin beta) (unit speed).
pub fn sphere_origin_rays(beta_box: (f64, f64), radius: f64) -> RayFamily {
    use crate::geometry::{hamiltonian_vector_field, ChartGeometry, IntegratorOptions};
    use std::sync::Arc;
    let r2 = radius * radius;
    RayFamily {
        field: hamiltonian_vector_field(&Symbol::sphere_stereographic(2)),
        chart: ChartGeometry::new(vec![(-1.25 * radius, 1.25 * radius); 2])
            .unwrap()
            .with_boundary(Arc::new(move |x: &[f64]| x[0] * x[0] + x[1] * x[1] - r2)),
        param_dim: 1,
        param: Arc::new(|z: &[f64]| vec![0.0, 0.0, 2.0 * z[0].cos(), 2.0 * z[0].sin()]),
        dparam: Some(Arc::new(|z: &[f64]| {
            DMatrix::from_column_slice(4, 1, &[0.0, 0.0, -2.0 * z[0].sin(), 2.0 * z[0].cos()])
        })),
        locate: None,
        z_box: vec![beta_box],
        opts: IntegratorOptions::default(),
    }
}

/// Unit-speed geodesics entering the disk |x| < radius at angle alpha with
/// inward direction rotated by beta: z = (alpha, beta).
pub fn sphere_boundary_rays(radius: f64) -> RayFamily {
    use crate::geometry::{hamiltonian_vector_field, ChartGeometry, IntegratorOptions};
    use std::sync::Arc;
    let r = radius;
    let r2 = r * r;
    let speed = (1.0 + r2) / 2.0;
    let g = 4.0 / ((1.0 + r2) * (1.0 + r2));
    RayFamily {
        field: hamiltonian_vector_field(&Symbol::sphere_stereographic(2)),
        chart: ChartGeometry::new(vec![(-1.25 * r, 1.25 * r); 2])
            .unwrap()
            .with_boundary(Arc::new(move |x: &[f64]| x[0] * x[0] + x[1] * x[1] - r2)),
        param_dim: 2,
        param: Arc::new(move |z: &[f64]| {
            let (a, b) = (z[0], z[1]);
            let d = [-(a + b).cos(), -(a + b).sin()];
            vec![r * a.cos(), r * a.sin(), g * speed * d[0], g * speed * d[1]]
        }),
        dparam: None,
        locate: None,
        z_box: vec![(-std::f64::consts::PI, std::f64::consts::PI), (-1.2, 1.2)],
        opts: IntegratorOptions::default(),
    }
}

/// Riemannian norm of a tangent vector for the stereographic sphere metric.
pub fn sphere_norm(x: &[f64], v: &[f64]) -> f64 {
    2.0 / (1.0 + dot(x, x)) * norm(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::base_function;
    use crate::transforms::{flat_disk_rays, minkowski_light_rays, radon_fibration, FlatMode};
    use std::sync::Arc;

    #[test]
    fn flat_jacobi_field_is_linear() {
        let rays = flat_disk_rays(1.0, FlatMode::Geodesic);
        let z = [0.4, 0.2];
        let ts: Vec<f64> = (0..10).map(|i| 0.15 * i as f64).collect();
        let vf = variation_field(&rays, &z, &[1.0, 0.0], &ts).unwrap();
        let fd = variation_field_fd(&rays, &z, &[1.0, 0.0], &ts).unwrap();
        let ray = rays.variational(&z).unwrap();
        let j0 = &vf.values[0];
        let jd = sub(&vf.values[1], &vf.values[0]);
        for (i, v) in vf.values.iter().enumerate() {
            let expect: Vec<f64> = j0.iter().zip(&jd).map(|(a, b)| a + i as f64 * b).collect();
            assert!(norm(&sub(v, &expect)) < 1e-8);
            assert!(norm(&sub(v, &fd.values[i])) < 1e-5);
        }
        // Rotating the direction moves the line with J'(t) = -theta (perpendicular to xdot).
        let v = ray.xdot(0.3);
        assert!(dot(&jd, &v).abs() < 1e-10);
        let zero = variation_field(&rays, &z, &[0.0, 0.0], &ts).unwrap();
        assert!(zero.values.iter().all(|v| norm(v) == 0.0));
    }

    #[test]
    fn sphere_jacobi_field_is_sine() {
        let rays = sphere_origin_rays((-3.2, 3.2), 10.0);
        let ts: Vec<f64> = (0..20).map(|i| 0.14 * i as f64).collect();
        let vf = variation_field(&rays, &[0.3], &[1.0], &ts).unwrap();
        let ray = rays.variational(&[0.3]).unwrap();
        for (t, j) in ts.iter().zip(&vf.values) {
            let x = ray.x(*t);
            assert!((sphere_norm(&x, j) - t.sin().abs()).abs() < 1e-5, "t = {t}");
        }
    }

    #[test]
    fn flat_disk_has_no_conjugate_pairs() {
        let rays = flat_disk_rays(1.0, FlatMode::Geodesic);
        assert!(conjugate_scan(&rays, &[0.5, 0.1], 64).unwrap().is_empty());
    }

    #[test]
    fn sphere_conjugate_pairs_at_pi() {
        let rays = sphere_boundary_rays(10.0);
        let pairs = conjugate_scan(&rays, &[0.3, 0.1], 64).unwrap();
        assert!(!pairs.is_empty());
        let ray = rays.variational(&[0.3, 0.1]).unwrap();
        let h = ray.traj.length() / 63.0;
        for p in &pairs {
            assert!(((p.t - p.s).abs() - std::f64::consts::PI).abs() < h, "{p:?}");
        }
    }

    #[test]
    fn radon_bolker_checks_pass() {
        let fib = radon_fibration(3.0);
        let a: f64 = 0.8;
        let x = [0.3, -0.5];
        let z = [a, x[0] * a.cos() + x[1] * a.sin()];
        let cp = fib.canonical_point(&z, &x, &[1.0]).unwrap();
        let g = immersion_check(&fib, &cp).unwrap();
        let d = immersion_check_defining(&fib, &cp).unwrap();
        assert!(g.pass && d.pass);
        assert!(g.margin / d.margin < 10.0 && d.margin / g.margin < 10.0, "{} {}", g.margin, d.margin);
        let inj = injectivity_check(&fib, &cp).unwrap();
        assert!(inj.pass, "{:?}", inj.min_ratio);
        let mut scaled = cp.clone();
        scaled.eta.iter_mut().for_each(|v| *v *= 2.0);
        scaled.zeta.iter_mut().for_each(|v| *v *= 2.0);
        assert_eq!(injectivity_check(&fib, &scaled).unwrap().pass, inj.pass);
        assert_eq!(immersion_check(&fib, &scaled).unwrap().pass, g.pass);
    }

    #[test]
    fn antipodal_point_is_a_witness() {
        let rays = sphere_boundary_rays(10.0);
        let fib = crate::fibration::Fibration::from_ray_family(rays.clone(), &[]).unwrap();
        let z = [0.3, 0.0];
        let ray = rays.variational(&z).unwrap();
        let t0 = 1.0;
        let x = ray.x(t0);
        let v = ray.xdot(t0);
        let eta = vec![-v[1], v[0]];
        let zeta: Vec<f64> = (ray.jacobi(t0).transpose() * DVector::from_vec(eta.clone())).iter().map(|a| -a).collect();
        let cp = CanonicalPoint { z: z.to_vec(), zeta, x, eta };
        let res = injectivity_check(&fib, &cp).unwrap();
        assert!(!res.pass);
        let anti = ray.x(t0 + std::f64::consts::PI);
        assert!(res.witnesses.iter().any(|w| norm(&sub(w, &anti)) < 0.1), "{:?}", res.witnesses);
    }

    fn light_point(eta_kind: &str) -> (crate::fibration::Fibration, CanonicalPoint, Vec<f64>) {
        let rays = minkowski_light_rays(2.0, 10.0);
        let fib = crate::fibration::Fibration::from_ray_family(rays.clone(), &[]).unwrap();
        let z = [0.7, 0.2, 0.3];
        let ray = rays.variational(&z).unwrap();
        let t = 0.2;
        let st = ray.state(t);
        let x = st[..3].to_vec();
        let xi = st[3..].to_vec();
        let b = 0.7;
        let th_perp = [-(0.7f64).sin(), 0.7f64.cos()];
        let eta = match eta_kind {
            "parallel" => xi.clone(),
            _ => vec![xi[0], xi[1] + b * th_perp[0], xi[2] + b * th_perp[1]],
        };
        let zeta: Vec<f64> = (ray.jacobi(t).transpose() * DVector::from_vec(eta.clone())).iter().map(|a| -a).collect();
        (fib, CanonicalPoint { z: z.to_vec(), zeta, x, eta }, xi)
    }

    #[test]
    fn light_ray_dichotomy() {
        let (fib, cp, _) = light_point("parallel");
        assert!(!immersion_check(&fib, &cp).unwrap().pass);
        let (fib, cp, _) = light_point("spacelike");
        let r = immersion_check(&fib, &cp).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(injectivity_check(&fib, &cp).unwrap().pass);
    }

    #[test]
    fn null_rays_annihilate_their_variations() {
        let rays = minkowski_light_rays(2.0, 10.0);
        let z = [0.4, -0.1, 0.5];
        let rv = RayVariations::new(&rays, &z).unwrap();
        assert!(rv.is_null());
        let ray = &rv.ray;
        let w0 = rv.tangential(0.0);
        for &t in &[-0.3, 0.2, 0.6] {
            let st = ray.state(t);
            let j = rv.jacobi(t) * &w0;
            for c in 0..j.ncols() {
                let col: Vec<f64> = j.column(c).iter().copied().collect();
                assert!(dot(&st[3..], &col).abs() < 1e-6);
            }
            let v = ray.xdot(t);
            let span = orth_columns(&j);
            let resid = DVector::from_vec(v.clone()) - &span * (span.transpose() * DVector::from_vec(v.clone()));
            assert!(resid.norm() < 1e-6 * norm(&v));
        }
        assert!(conjugate_scan(&rays, &z, 32).unwrap().is_empty());
    }

    #[test]
    fn pvs_dichotomies() {
        let m = Symbol::minkowski(3);
        let x = [0.0, 0.3, 0.1];
        assert!(pvs_membership(&m, &x, &[0.2, 1.0, 0.3], 1).unwrap().member);
        assert!(!pvs_membership(&m, &x, &[1.0, 0.2, 0.3], 1).unwrap().member);
        let c = Symbol::cosphere(2);
        assert!(pvs_membership(&c, &[0.1, 0.2], &[0.3, -0.8], 1).unwrap().member);
        let empty = Symbol::new(2, Arc::new(|_x: &[f64], xi: &[f64]| dot(xi, xi) + 1.0));
        assert_eq!(pvs_membership(&empty, &[0.0, 0.0], &[1.0, 0.0], 1).unwrap_err(), BolkerError::SearchFailed);
    }

    #[test]
    fn pseudoconvexity_examples() {
        let p = Symbol::cosphere(2);
        let radial = base_function(2, Arc::new(|x: &[f64]| dot(x, x)), Some(Arc::new(|x: &[f64]| vec![2.0 * x[0], 2.0 * x[1]])));
        let pts: Vec<Vec<f64>> = (0..8).map(|i| {
            let a = i as f64 * 0.8;
            vec![0.7 * a.cos(), 0.7 * a.sin()]
        }).collect();
        let r = pseudoconvexity_check(&p, &radial, &pts, 8, 3);
        assert!(r.pass && (r.min_margin - 8.0).abs() < 1e-6, "{r:?}");
        let lin = base_function(2, Arc::new(|x: &[f64]| x[0]), Some(Arc::new(|_x: &[f64]| vec![1.0, 0.0])));
        assert!(!pseudoconvexity_check(&p, &lin, &pts, 8, 3).pass);
        let m = Symbol::minkowski(3);
        let spatial = base_function(
            3,
            Arc::new(|x: &[f64]| x[1] * x[1] + x[2] * x[2]),
            Some(Arc::new(|x: &[f64]| vec![0.0, 2.0 * x[1], 2.0 * x[2]])),
        );
        let pts3: Vec<Vec<f64>> = (0..6).map(|i| {
            let a = i as f64;
            vec![0.1 * a, 0.8 * a.cos(), 0.8 * a.sin()]
        }).collect();
        let r = pseudoconvexity_check(&m, &spatial, &pts3, 16, 4);
        assert!(r.pass && (r.min_margin - 4.0).abs() < 1e-6, "{r:?}");
    }
}
