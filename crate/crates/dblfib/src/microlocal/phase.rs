//! The stationary-phase pipeline for defining-form fibrations: the map chi, the kernel
//! K_lambda as an integral over the fiber coordinates zeta', complex critical points of
//! Psi(zeta'; x, v) = -z . v2 + i (z - v1)^2 / 2 and checks on the phase psi.

use super::fbi::WavePacketFamily;
use super::MicrolocalError;
use crate::fibration::{DefiningForm, Fibration};
use crate::linalg::{complex_newton, holo_jacobian, levenberg_marquardt, norm, sub, to_complex, C64};
use crate::quad::{nodes, Rule};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::PI;

/// Continuation steps from pi(chi(v)) to x.
pub const HOMOTOPY_STEPS: usize = 8;
/// Step for d_x psi by central differences.
pub const DX_STEP: f64 = 1e-6;

fn defining(fib: &Fibration) -> Result<&DefiningForm, MicrolocalError> {
    let b = fib.defining.as_ref().ok_or_else(|| MicrolocalError::ChartFailure("no defining form".into()))?;
    if b.holo.is_none() {
        return Err(MicrolocalError::ChartFailure("defining form has no holomorphic extension".into()));
    }
    Ok(b)
}

fn cx(v: &[f64]) -> Vec<C64> {
    to_complex(v)
}

/// z(zeta', x) = (zeta', b(x, zeta')) on the complexified fiber Z^x.
fn z_of(b: &DefiningForm, x: &[C64], zp: &[C64]) -> Vec<C64> {
    let mut z = zp.to_vec();
    z.extend((b.holo.as_ref().unwrap())(x, zp));
    z
}

/// Psi(zeta'; x, v).
pub fn big_psi(b: &DefiningForm, zp: &[C64], x: &[C64], v1: &[f64], v2: &[f64]) -> C64 {
    let z = z_of(b, x, zp);
    let i = C64::new(0.0, 1.0);
    let mut lin = C64::new(0.0, 0.0);
    let mut quad = C64::new(0.0, 0.0);
    for j in 0..z.len() {
        lin += z[j] * v2[j];
        let d = z[j] - v1[j];
        quad += d * d;
    }
    -lin + i * quad * 0.5
}

/// d Psi / d zeta' by the holomorphic stencil applied to b only.
fn grad_psi(b: &DefiningForm, zp: &[C64], x: &[C64], v1: &[f64], v2: &[f64]) -> Vec<C64> {
    let d1 = zp.len();
    let bz = holo_jacobian(&|w: &[C64]| (b.holo.as_ref().unwrap())(x, w), zp);
    let bv = (b.holo.as_ref().unwrap())(x, zp);
    let i = C64::new(0.0, 1.0);
    (0..d1)
        .map(|j| {
            let mut g = -v2[j] + i * (zp[j] - v1[j]);
            for r in 0..b.k {
                g += bz[(r, j)] * (-v2[d1 + r] + i * (bv[r] - v1[d1 + r]));
            }
            g
        })
        .collect()
}

/// chi(v) = pi_R(pi_L^{-1}(v)) = (x, eta): solves b(x, v1') = v1'' and
/// -b_{z'}(x, v1')^T mu = v2' with mu = v2'', then eta = -b_x^T mu.
pub fn chi_map(fib: &Fibration, v1: &[f64], v2: &[f64]) -> Result<(Vec<f64>, Vec<f64>), MicrolocalError> {
    let b = fib.defining.as_ref().ok_or_else(|| MicrolocalError::ChartFailure("no defining form".into()))?;
    let d1 = b.big_n - b.k;
    let (z1, z2) = v1.split_at(d1);
    let mu = DVector::from_column_slice(&v2[d1..]);
    if mu.norm() == 0.0 {
        return Err(MicrolocalError::NotInImage { residual: f64::INFINITY });
    }
    let resid = |x: &[f64]| -> Vec<f64> {
        let mut r = sub(&b.eval(x, z1), z2);
        let (_, bz) = b.jacobians(x, z1);
        let t = -(bz.transpose() * &mu);
        r.extend(t.iter().zip(&v2[..d1]).map(|(a, c)| a - c));
        r
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let bbox = &fib.x_chart.bbox;
    let mut best = (Vec::new(), f64::INFINITY);
    for k in 0..16 {
        let start: Vec<f64> = if k == 0 {
            bbox.iter().map(|(a, c)| 0.5 * (a + c)).collect()
        } else {
            bbox.iter().map(|(a, c)| a + (c - a) * rng.gen::<f64>()).collect()
        };
        let (x, r) = levenberg_marquardt(&resid, &start, 1e-14, 200);
        if r < best.1 {
            best = (x, r);
        }
        if best.1 < 1e-12 {
            break;
        }
    }
    if best.1 > 1e-10 {
        return Err(MicrolocalError::NotInImage { residual: best.1 });
    }
    let x = best.0;
    let (bx, _) = b.jacobians(&x, z1);
    let eta = (-(bx.transpose() * mu)).iter().copied().collect();
    Ok((x, eta))
}

/// Right inverse of chi: some v = (z, zeta) over (x, eta).
pub fn chi_plus(fib: &Fibration, x: &[f64], eta: &[f64]) -> Result<(Vec<f64>, Vec<f64>), MicrolocalError> {
    let pts = super::propagate_wavefront(fib, &[(x.to_vec(), eta.to_vec())])?;
    let p = pts.into_iter().next().ok_or(MicrolocalError::NotInImage { residual: f64::INFINITY })?;
    Ok((p.z, p.zeta))
}

fn pair(c: C64) -> [f64; 2] {
    [c.re, c.im]
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseDiagnostics {
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub x: Vec<f64>,
    /// pi(chi(v)) and the covector of chi(v).
    pub x0: Vec<f64>,
    pub eta0: Vec<f64>,
    /// Critical point as [re, im] pairs.
    pub zeta_c: Vec<[f64; 2]>,
    pub psi: [f64; 2],
    pub hessian_det: [f64; 2],
    pub newton_residual: f64,
    /// |z(zeta_c, x0) - v1| at the real critical point over x0.
    pub incidence_residual: f64,
    /// |psi(x0, v) + v1 . v2|.
    pub residual_1: f64,
    /// |d_x psi(x0, v) - eta0|.
    pub residual_2: f64,
    pub im_psi: f64,
    /// Im psi / |x - x0|^2 when x != x0.
    pub coercivity: Option<f64>,
}

struct Solver<'a> {
    b: &'a DefiningForm,
    v1: &'a [f64],
    v2: &'a [f64],
}

impl Solver<'_> {
    fn newton(&self, x: &[C64], start: &[C64]) -> Result<(Vec<C64>, f64), MicrolocalError> {
        let g = |w: &[C64]| grad_psi(self.b, w, x, self.v1, self.v2);
        let out = complex_newton(&g, start, 1e-13, 60);
        if !out.converged && out.residual > 1e-10 {
            return Err(MicrolocalError::NewtonDiverged { residual: out.residual });
        }
        Ok((out.root, out.residual))
    }

    /// Critical point at x, continued from (x0, zc0) along the straight segment.
    fn continue_to(&self, x0: &[f64], zc0: &[C64], x: &[C64]) -> Result<(Vec<C64>, f64), MicrolocalError> {
        let mut zc = zc0.to_vec();
        let mut res = 0.0;
        for s in 1..=HOMOTOPY_STEPS {
            let t = s as f64 / HOMOTOPY_STEPS as f64;
            let xs: Vec<C64> = x0.iter().zip(x).map(|(a, b)| C64::new(*a, 0.0) + (b - a) * t).collect();
            let (r, e) = self.newton(&xs, &zc)?;
            zc = r;
            res = e;
        }
        Ok((zc, res))
    }

    fn psi_at(&self, x: &[C64], zc: &[C64]) -> C64 {
        big_psi(self.b, zc, x, self.v1, self.v2)
    }
}

fn det(m: DMatrix<C64>) -> C64 {
    m.lu().determinant()
}

/// Critical point of zeta' -> Psi(zeta'; x, v) by complex Newton continued from the real
/// critical point over pi(chi(v)), with the checks of the phase properties.
pub fn critical_point_solve(fib: &Fibration, x: &[f64], v1: &[f64], v2: &[f64]) -> Result<PhaseDiagnostics, MicrolocalError> {
    let b = defining(fib)?;
    let d1 = b.big_n - b.k;
    let (x0, eta0) = chi_map(fib, v1, v2)?;
    let solver = Solver { b, v1, v2 };
    let x0c = cx(&x0);
    let (zc0, _) = solver.newton(&x0c, &cx(&v1[..d1]))?;
    let incidence = {
        let z = z_of(b, &x0c, &zc0);
        z.iter().zip(v1).map(|(a, c)| (a - c).norm_sqr()).sum::<f64>().sqrt()
    };
    let psi0 = solver.psi_at(&x0c, &zc0);
    let v12: f64 = v1.iter().zip(v2).map(|(a, c)| a * c).sum();
    let residual_1 = (psi0 + v12).norm();
    let mut dpsi = Vec::with_capacity(x0.len());
    for j in 0..x0.len() {
        let mut xp = x0c.clone();
        let mut xm = x0c.clone();
        xp[j] += DX_STEP;
        xm[j] -= DX_STEP;
        let (zp, _) = solver.newton(&xp, &zc0)?;
        let (zm, _) = solver.newton(&xm, &zc0)?;
        dpsi.push((solver.psi_at(&xp, &zp) - solver.psi_at(&xm, &zm)) / (2.0 * DX_STEP));
    }
    let residual_2 = dpsi.iter().zip(&eta0).map(|(d, e)| (d - e).norm_sqr()).sum::<f64>().sqrt();

    let xc = cx(x);
    let (zc, newton_residual) = if norm(&sub(x, &x0)) == 0.0 {
        let g = grad_psi(b, &zc0, &xc, v1, v2);
        (zc0.clone(), crate::linalg::cnorm(&g))
    } else {
        solver.continue_to(&x0, &zc0, &xc)?
    };
    let hess = holo_jacobian(&|w: &[C64]| grad_psi(b, w, &xc, v1, v2), &zc);
    let hd = det(hess);
    if hd.norm() < crate::linalg::RANK_FLOOR {
        return Err(MicrolocalError::HessianDegenerate { det: hd.norm() });
    }
    let psi = solver.psi_at(&xc, &zc);
    let dist = norm(&sub(x, &x0));
    Ok(PhaseDiagnostics {
        v1: v1.to_vec(),
        v2: v2.to_vec(),
        x: x.to_vec(),
        x0,
        eta0,
        zeta_c: zc.iter().map(|c| pair(*c)).collect(),
        psi: pair(psi),
        hessian_det: pair(hd),
        newton_residual,
        incidence_residual: incidence,
        residual_1,
        residual_2,
        im_psi: psi.im,
        coercivity: (dist > 0.0).then(|| psi.im / (dist * dist)),
    })
}

/// Distinct critical points reached by Newton from `starts` seeds in a complex ball of
/// radius `radius` around the real critical point over pi(chi(v)).
pub fn critical_point_multistart(
    fib: &Fibration,
    x: &[f64],
    v1: &[f64],
    v2: &[f64],
    starts: usize,
    radius: f64,
    seed: u64,
) -> Result<Vec<Vec<C64>>, MicrolocalError> {
    let b = defining(fib)?;
    let d1 = b.big_n - b.k;
    let solver = Solver { b, v1, v2 };
    let xc = cx(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut roots: Vec<Vec<C64>> = Vec::new();
    for _ in 0..starts {
        let s: Vec<C64> = (0..d1)
            .map(|j| {
                let (r, a) = (radius * rng.gen::<f64>().sqrt(), 2.0 * PI * rng.gen::<f64>());
                C64::new(v1[j], 0.0) + C64::from_polar(r, a)
            })
            .collect();
        let Ok((root, _)) = solver.newton(&xc, &s) else { continue };
        let close = |r: &Vec<C64>| r.iter().zip(&root).map(|(a, c)| (a - c).norm()).fold(0.0, f64::max) < 1e-8;
        if !roots.iter().any(close) {
            roots.push(root);
        }
    }
    Ok(roots)
}

/// K_lambda(x, v) = c_N lambda^{3N/4} int kappa(z, x) exp(i lambda Psi(zeta'; x, v)) dzeta'
/// over real zeta' in a window of 8 lambda^{-1/2} around v1'.
pub fn kernel_k_lambda(fib: &Fibration, x: &[f64], v1: &[f64], v2: &[f64], lambda: f64) -> Result<C64, MicrolocalError> {
    let b = defining(fib)?;
    let d1 = b.big_n - b.k;
    let half = 8.0 / lambda.sqrt();
    let (_, bz) = b.jacobians(x, &v1[..d1]);
    let slope = norm(v2) * (1.0 + bz.norm() + norm(x));
    let xc = cx(x);
    let axes: Vec<Vec<(f64, f64)>> = (0..d1)
        .map(|j| {
            let (a, c) = (v1[j] - half, v1[j] + half);
            let waves = (lambda * slope * (c - a) / (2.0 * PI)).ceil() as usize;
            let count = 40 + 4 * waves;
            nodes(a, c, count as f64 / (c - a), count, Rule::GaussLegendre)
        })
        .collect();
    let total: usize = axes.iter().map(|a| a.len()).product();
    let i = C64::new(0.0, 1.0);
    let mut sum = C64::new(0.0, 0.0);
    let mut zp = vec![0.0; d1];
    for k in 0..total {
        let mut f = k;
        let mut w = 1.0;
        for j in (0..d1).rev() {
            let (p, wj) = axes[j][f % axes[j].len()];
            zp[j] = p;
            w *= wj;
            f /= axes[j].len();
        }
        let mut z = zp.clone();
        z.extend(b.eval(x, &zp));
        let kappa = (fib.kappa)(&z, x);
        let psi = big_psi(b, &cx(&zp), &xc, v1, v2);
        sum += (i * lambda * psi).exp() * (w * kappa);
    }
    let n_big = b.big_n;
    Ok(sum * WavePacketFamily::new(n_big).amplitude(lambda))
}

/// Independent oracle for the 2D Radon kernel: the lattice sum over u of
/// <T m_u, M_v> conj(m_u(x)) with T m_u in closed form along lines, the s-integral of the
/// pairing in closed form and the alpha-integral by Gauss-Legendre.
pub fn radon_kernel_direct(x: &[f64], v1: &[f64], v2: &[f64], lambda: f64) -> C64 {
    let sl = lambda.sqrt();
    let h = 0.45 / sl;
    let fam = WavePacketFamily::new(2);
    let amp = fam.amplitude(lambda);
    let i = C64::new(0.0, 1.0);
    let th = |a: f64| [a.cos(), a.sin()];
    let u2c = {
        let t = th(v1[0]);
        [v2[1] * t[0], v2[1] * t[1]]
    };
    let lattice = |c: f64, r: f64| -> Vec<f64> {
        let m = (r / (h * sl)).ceil() as i64;
        (-m..=m).map(|k| c + k as f64 * h).collect()
    };
    let u1x = lattice(x[0], 6.5);
    let u1y = lattice(x[1], 6.5);
    let u2x = lattice(u2c[0], 9.0);
    let u2y = lattice(u2c[1], 9.0);
    let half = 8.0 / sl;
    let reach = norm(x) + 1.0 + norm(&u2c) * (norm(x) + 1.0) + norm(v2) * (1.0 + v1[1].abs());
    let waves = (lambda * reach * 2.0 * half / (2.0 * PI)).ceil() as usize;
    let count = 40 + 4 * waves;
    let alphas = nodes(v1[0] - half, v1[0] + half, count as f64 / (2.0 * half), count, Rule::GaussLegendre);
    let trig: Vec<(f64, [f64; 2], [f64; 2])> = alphas.iter().map(|&(a, _)| (a, th(a), [-a.sin(), a.cos()])).collect();
    let s_norm = (PI / lambda).sqrt() * (2.0 * PI / lambda).sqrt() * amp * amp;
    let mut total = C64::new(0.0, 0.0);
    for &a1 in &u1x {
        for &a2 in &u1y {
            let d2 = (a1 - x[0]).powi(2) + (a2 - x[1]).powi(2);
            let gx = (-0.5 * lambda * d2).exp();
            if gx < 1e-18 {
                continue;
            }
            for &p1 in &u2x {
                for &p2 in &u2y {
                    // conj(m_u(x)).
                    let mx = C64::from_polar(amp * gx, -lambda * (x[0] * p1 + x[1] * p2));
                    let mut acc = C64::new(0.0, 0.0);
                    for (k, (a, t, tp)) in trig.iter().enumerate() {
                        let w = alphas[k].1;
                        let ut = a1 * t[0] + a2 * t[1];
                        let utp = a1 * tp[0] + a2 * tp[1];
                        let pt = p1 * t[0] + p2 * t[1];
                        let ptp = p1 * tp[0] + p2 * tp[1];
                        let kk = ut - v1[1];
                        let mm = pt - v2[1];
                        let c = 0.5 * (ut + v1[1]);
                        let re = -0.5 * lambda * ptp * ptp - 0.25 * lambda * kk * kk - 0.25 * lambda * mm * mm
                            - 0.5 * lambda * (a - v1[0]).powi(2);
                        let ph = lambda * (utp * ptp + c * mm - a * v2[0]);
                        acc += C64::from_polar(w * re.exp(), ph);
                    }
                    total += mx * acc;
                }
            }
        }
    }
    let _ = i;
    total * s_norm * h.powi(4)
}
