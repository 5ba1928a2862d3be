//! Forward operators: generic double fibration transforms, ray transforms along
//! flows, null bicharacteristic transforms, codim-k Radon transforms, closed-form
//! Euclidean references and sinogram scans.

use crate::fibration::{
    DefiningForm, Fibration, FibrationError, KappaFn, QuadratureSpec, RayFamily,
};
use crate::geometry::{
    hamiltonian_vector_field, maximal_trajectory, ChartGeometry, IntegratorOptions, ScalarField, Symbol,
};
use crate::linalg::{dot, norm};
use crate::quad;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error(transparent)]
    Fibration(#[from] FibrationError),
    #[error("start point is not on the characteristic set (|p| = {residual:.3e})")]
    NotOnCharacteristic { residual: f64 },
    #[error("grad_xi p vanishes at the start point")]
    DegenerateSymbol,
    #[error("start point does not point into the domain")]
    NotInward,
    #[error("representation missing for transform kind {0:?}")]
    Unsupported(TransformKind),
}

impl From<crate::geometry::GeometryError> for TransformError {
    fn from(e: crate::geometry::GeometryError) -> Self {
        TransformError::Fibration(FibrationError::Geometry(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Generic,
    GeodesicXray,
    NullBichar,
    CodimKRadon,
    EuclideanRadon,
}

#[derive(Clone)]
pub struct TransformSpec {
    pub fibration: Fibration,
    pub kind: TransformKind,
    pub quadrature: QuadratureSpec,
}

impl TransformSpec {
    pub fn new(fibration: Fibration, kind: TransformKind) -> Self {
        Self { fibration, kind, quadrature: QuadratureSpec::default() }
    }
}

/// Rf(z) = sum_q w_q kappa(z, x_q) f(x_q) over the induced fiber measure.
pub fn forward(spec: &TransformSpec, f: &ScalarField, z: &[f64]) -> Result<f64, TransformError> {
    let fib = &spec.fibration;
    let nodes = fib.induced_measure(z, &spec.quadrature, Some(&f.support), &f.interfaces)?;
    Ok(nodes.iter().map(|(x, w)| w * (fib.kappa)(z, x) * f.eval(x)).sum())
}

/// Integral of kappa f along x_z(t) for t in [-tau_-, tau_+].
pub fn ray_forward(
    rays: &RayFamily,
    kappa: &KappaFn,
    f: &ScalarField,
    z: &[f64],
    q: &QuadratureSpec,
) -> Result<f64, TransformError> {
    let tr = rays.trajectory(z)?;
    let (a, b) = (-tr.tau_minus, tr.tau_plus);
    let mut breaks = Vec::new();
    let samples = ((b - a) * q.per_unit / 2.0).ceil().max(32.0) as usize;
    for g in &f.interfaces {
        breaks.extend(quad::sign_changes(&|t: f64| g(&tr.base_at(t)), a, b, samples));
    }
    Ok(quad::split_nodes(a, b, &breaks, q.per_unit, 16, q.rule)
        .into_iter()
        .map(|(t, w)| {
            let x = tr.base_at(t);
            w * kappa(z, &x) * f.eval(&x)
        })
        .sum())
}

/// Null bicharacteristic transform from a start point (x, xi) on {p = 0}.
pub fn null_bichar_forward(
    p: &Symbol,
    chart: &ChartGeometry,
    kappa: &KappaFn,
    f: &ScalarField,
    start: &[f64],
    q: &QuadratureSpec,
) -> Result<f64, TransformError> {
    let n = p.n;
    let (x, xi) = start.split_at(n);
    let pv = p.eval(x, xi);
    let (_, gxi) = p.grad(x, xi);
    let scale = norm(xi).max(1.0).powf(p.degree.unwrap_or(2.0));
    if pv.abs() > 1e-8 * scale {
        return Err(TransformError::NotOnCharacteristic { residual: pv.abs() });
    }
    if norm(&gxi) < 1e-12 * scale {
        return Err(TransformError::DegenerateSymbol);
    }
    let rho = chart.exit_fn(x);
    if rho.abs() < 1e-8 && dot(&chart.grad_exit(x), &gxi) >= 0.0 {
        return Err(TransformError::NotInward);
    }
    let field = hamiltonian_vector_field(p);
    let tr = maximal_trajectory(&field, start, chart, &IntegratorOptions::default(), None)?;
    if tr.is_trapped() {
        return Err(FibrationError::Trapped { z: start.to_vec() }.into());
    }
    let (a, b) = (-tr.tau_minus, tr.tau_plus);
    let mut breaks = Vec::new();
    let samples = ((b - a) * q.per_unit / 2.0).ceil().max(32.0) as usize;
    for g in &f.interfaces {
        breaks.extend(quad::sign_changes(&|t: f64| g(&tr.base_at(t)), a, b, samples));
    }
    Ok(quad::split_nodes(a, b, &breaks, q.per_unit, 16, q.rule)
        .into_iter()
        .map(|(t, w)| {
            let xt = tr.base_at(t);
            w * kappa(start, &xt) * f.eval(&xt)
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelSetIntegral {
    pub value: f64,
    pub empty_level_set: bool,
}

/// Codim-k transform over {b(x, theta) = s}; an empty level set gives 0 with a flag.
pub fn codim_k_forward(
    b: &DefiningForm,
    chart: &ChartGeometry,
    kappa: &KappaFn,
    f: &ScalarField,
    z: &[f64],
    q: &QuadratureSpec,
) -> Result<LevelSetIntegral, TransformError> {
    let fib = Fibration {
        n: b.n,
        big_n: b.big_n,
        k: b.k,
        graph: None,
        defining: Some(b.clone()),
        rays: None,
        kappa: kappa.clone(),
        x_chart: chart.clone(),
        z_box: Vec::new(),
    };
    match fib.induced_measure(z, q, Some(&f.support), &f.interfaces) {
        Ok(nodes) if nodes.is_empty() => Ok(LevelSetIntegral { value: 0.0, empty_level_set: true }),
        Ok(nodes) => Ok(LevelSetIntegral {
            value: nodes.iter().map(|(x, w)| w * kappa(z, x) * f.eval(x)).sum(),
            empty_level_set: false,
        }),
        Err(FibrationError::EmptyLevelSet) => Ok(LevelSetIntegral { value: 0.0, empty_level_set: true }),
        Err(e) => Err(e.into()),
    }
}

/// Evaluation of a transform on a parameter lattice.
#[derive(Debug, Clone, Serialize)]
pub struct Sinogram {
    pub axes: Vec<String>,
    pub grid: Vec<Vec<f64>>,
    /// Row-major over the axes.
    pub values: Vec<f64>,
    pub errors: Vec<(usize, String)>,
}

impl Sinogram {
    pub fn shape(&self) -> Vec<usize> {
        self.grid.iter().map(|g| g.len()).collect()
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        lattice_point(&self.grid, flat)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        let mut flat = 0;
        for (i, g) in idx.iter().zip(&self.grid) {
            flat = flat * g.len() + i;
        }
        self.values[flat]
    }
}

pub fn lattice_point(grid: &[Vec<f64>], mut flat: usize) -> Vec<f64> {
    let mut z = vec![0.0; grid.len()];
    for d in (0..grid.len()).rev() {
        let len = grid[d].len();
        z[d] = grid[d][flat % len];
        flat /= len;
    }
    z
}

/// Uniform lattice with `count` points on [a, b] (cell centres when `centred`).
pub fn linspace(a: f64, b: f64, count: usize, centred: bool) -> Vec<f64> {
    if centred {
        let h = (b - a) / count as f64;
        (0..count).map(|i| a + (i as f64 + 0.5) * h).collect()
    } else if count == 1 {
        vec![0.5 * (a + b)]
    } else {
        (0..count).map(|i| a + (b - a) * i as f64 / (count - 1) as f64).collect()
    }
}

/// Maps `eval` over the lattice in parallel; per-node failures are recorded as NaN.
pub fn sinogram_with<F>(axes: &[&str], grid: Vec<Vec<f64>>, eval: F) -> Sinogram
where
    F: Fn(&[f64]) -> Result<f64, TransformError> + Sync,
{
    let total: usize = grid.iter().map(|g| g.len()).product();
    let results: Vec<Result<f64, String>> = (0..total)
        .into_par_iter()
        .map(|i| eval(&lattice_point(&grid, i)).map_err(|e| e.to_string()))
        .collect();
    let mut values = Vec::with_capacity(total);
    let mut errors = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => values.push(v),
            Err(e) => {
                values.push(f64::NAN);
                errors.push((i, e));
            }
        }
    }
    Sinogram { axes: axes.iter().map(|s| s.to_string()).collect(), grid, values, errors }
}

pub fn sinogram(spec: &TransformSpec, f: &ScalarField, axes: &[&str], grid: Vec<Vec<f64>>) -> Sinogram {
    sinogram_with(axes, grid, |z| forward(spec, f, z))
}

// Closed-form Euclidean references in 2D, with theta = (cos alpha, sin alpha).

/// Radon transform of exp(-|x - c|^2 / (2 sigma^2)) on the line x.theta = s.
pub fn radon_gaussian(center: &[f64], sigma: f64, alpha: f64, s: f64) -> f64 {
    let d = s - center[0] * alpha.cos() - center[1] * alpha.sin();
    (2.0 * PI).sqrt() * sigma * (-d * d / (2.0 * sigma * sigma)).exp()
}

/// Chord length of the disk |x - c| < r cut by the line x.theta = s.
pub fn radon_disk(center: &[f64], r: f64, alpha: f64, s: f64) -> f64 {
    let d = s - center[0] * alpha.cos() - center[1] * alpha.sin();
    if d.abs() >= r {
        0.0
    } else {
        2.0 * (r * r - d * d).sqrt()
    }
}

// Standard fibrations and ray families.

/// b(x, alpha) = x . theta(alpha) on R^2 with z = (alpha, s).
pub fn radon_defining() -> DefiningForm {
    DefiningForm {
        n: 2,
        big_n: 2,
        k: 1,
        b: Arc::new(|x: &[f64], z1: &[f64]| vec![x[0] * z1[0].cos() + x[1] * z1[0].sin()]),
        jac: Some(Arc::new(|x: &[f64], z1: &[f64]| {
            let (c, s) = (z1[0].cos(), z1[0].sin());
            (DMatrix::from_row_slice(1, 2, &[c, s]), DMatrix::from_row_slice(1, 1, &[-x[0] * s + x[1] * c]))
        })),
        holo: Some(Arc::new(|x: &[crate::linalg::C64], z1: &[crate::linalg::C64]| {
            vec![x[0] * z1[0].cos() + x[1] * z1[0].sin()]
        })),
    }
}

/// 2D Radon fibration on the box [-half, half]^2.
pub fn radon_fibration(half: f64) -> Fibration {
    Fibration::from_defining_function(
        radon_defining(),
        ChartGeometry::new(vec![(-half, half); 2]).unwrap(),
        vec![(0.0, PI), (-half, half)],
        &[(vec![0.3, -0.2], vec![0.4])],
    )
    .expect("radon fibration")
}

/// Spheres b(x, c) = |x - c| in R^2 with z = (c1, c2, r).
pub fn spheres_defining() -> DefiningForm {
    DefiningForm {
        n: 2,
        big_n: 3,
        k: 1,
        b: Arc::new(|x: &[f64], c: &[f64]| vec![((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)).sqrt()]),
        jac: Some(Arc::new(|x: &[f64], c: &[f64]| {
            let d = [x[0] - c[0], x[1] - c[1]];
            let r = norm(&d).max(1e-300);
            (
                DMatrix::from_row_slice(1, 2, &[d[0] / r, d[1] / r]),
                DMatrix::from_row_slice(1, 2, &[-d[0] / r, -d[1] / r]),
            )
        })),
        holo: None,
    }
}

/// Which Hamiltonian generates the flat straight-line family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlatMode {
    /// p = |xi|^2 / 2, unit speed.
    Geodesic,
    /// p = |xi|^2 - 1, speed 2.
    Cosphere,
}

/// Straight lines in the disk |x| <= radius, z = (alpha, s) for the line x.theta = s,
/// entered at s theta - sqrt(R^2 - s^2) theta_perp and traversed along theta_perp.
pub fn flat_disk_rays(radius: f64, mode: FlatMode) -> RayFamily {
    let p = match mode {
        FlatMode::Geodesic => Symbol::euclidean_half(2),
        FlatMode::Cosphere => Symbol::cosphere(2),
    };
    let r = radius;
    RayFamily {
        field: hamiltonian_vector_field(&p),
        chart: ChartGeometry::ball(&[0.0, 0.0], r),
        param_dim: 2,
        param: Arc::new(move |z: &[f64]| {
            let (c, sn) = (z[0].cos(), z[0].sin());
            let s = z[1];
            let h = (r * r - s * s).max(0.0).sqrt();
            vec![s * c + h * sn, s * sn - h * c, -sn, c]
        }),
        dparam: Some(Arc::new(move |z: &[f64]| {
            let (c, sn) = (z[0].cos(), z[0].sin());
            let s = z[1];
            let h = (r * r - s * s).max(1e-300).sqrt();
            let dh = -s / h;
            DMatrix::from_row_slice(
                4,
                2,
                &[
                    -s * sn + h * c,
                    c + dh * sn,
                    s * c + h * sn,
                    sn - dh * c,
                    -c,
                    0.0,
                    -sn,
                    0.0,
                ],
            )
        })),
        locate: Some(Arc::new(|state: &[f64]| {
            let v = [state[2], state[3]];
            let vn = norm(&v);
            if vn == 0.0 {
                return None;
            }
            let a = (-v[0] / vn).atan2(v[1] / vn);
            let s = state[0] * a.cos() + state[1] * a.sin();
            Some(vec![a, s])
        })),
        z_box: vec![(-PI, PI), (-r, r)],
        opts: IntegratorOptions::default(),
    }
}

/// Null lines of Minkowski R^{1+2} in the cylinder |x_vec| <= radius, |t| <= t_half.
/// z = (beta, tau, s): the line through (tau, s theta_perp(beta)) with
/// xi = (-1, cos beta, sin beta), so xdot = (2, 2 theta).
pub fn minkowski_light_rays(radius: f64, t_half: f64) -> RayFamily {
    let r2 = radius * radius;
    let pad = 1.25 * radius;
    let chart = ChartGeometry::new(vec![(-t_half, t_half), (-pad, pad), (-pad, pad)])
        .unwrap()
        .with_boundary(Arc::new(move |x: &[f64]| x[1] * x[1] + x[2] * x[2] - r2))
        .with_metric(
            Arc::new(|_x: &[f64]| DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 1.0, 1.0]))),
            1,
        )
        .with_symbol(Symbol::minkowski(3));
    RayFamily {
        field: hamiltonian_vector_field(&Symbol::minkowski(3)),
        chart,
        param_dim: 3,
        param: Arc::new(|z: &[f64]| {
            let (c, s) = (z[0].cos(), z[0].sin());
            vec![z[1], -z[2] * s, z[2] * c, -1.0, c, s]
        }),
        dparam: Some(Arc::new(|z: &[f64]| {
            let (c, s) = (z[0].cos(), z[0].sin());
            DMatrix::from_row_slice(
                6,
                3,
                &[
                    0.0, 1.0, 0.0, //
                    -z[2] * c, 0.0, -s, //
                    -z[2] * s, 0.0, c, //
                    0.0, 0.0, 0.0, //
                    -s, 0.0, 0.0, //
                    c, 0.0, 0.0,
                ],
            )
        })),
        locate: Some(Arc::new(|state: &[f64]| {
            let xi0 = state[3];
            if xi0 >= 0.0 {
                return None;
            }
            let th = [state[4] / -xi0, state[5] / -xi0];
            let beta = th[1].atan2(th[0]);
            let (c, s) = (beta.cos(), beta.sin());
            let along = state[1] * c + state[2] * s;
            Some(vec![beta, state[0] - along, -state[1] * s + state[2] * c])
        })),
        z_box: vec![(-PI, PI), (-t_half / 2.0, t_half / 2.0), (-radius, radius)],
        opts: IntegratorOptions::default(),
    }
}
