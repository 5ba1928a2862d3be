//! Push-forward of wavefront points through the canonical relation: all (z, zeta) with
//! x in G_z, eta conormal to G_z at x and zeta = A(z, x) eta.

use super::MicrolocalError;
use crate::fibration::{CanonicalPoint, Fibration, RayFamily};
use crate::linalg::{dot, levenberg_marquardt, norm, sub};
use nalgebra::{DMatrix, DVector};

/// Grid samples per parameter axis for the incidence search.
fn samples_per_axis(dim: usize) -> usize {
    match dim {
        0 | 1 => 256,
        2 => 48,
        _ => 12,
    }
}

fn grid_points(bbox: &[(f64, f64)], m: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let axes: Vec<Vec<f64>> = bbox
        .iter()
        .map(|&(a, b)| (0..m).map(|i| a + (b - a) * (i as f64 + 0.5) / m as f64).collect())
        .collect();
    let total = m.pow(bbox.len() as u32);
    let h = bbox.iter().map(|(a, b)| (b - a) / m as f64).collect();
    ((0..total).map(|k| crate::transforms::lattice_point(&axes, k)).collect(), h)
}

fn dedupe(points: &mut Vec<CanonicalPoint>) {
    let mut out: Vec<CanonicalPoint> = Vec::new();
    for p in points.drain(..) {
        if !out.iter().any(|q| norm(&sub(&q.z, &p.z)) < 1e-6) {
            out.push(p);
        }
    }
    *points = out;
}

/// Distance of unit(eta) from the row space of m.
fn conormal_defect(m: &DMatrix<f64>, eta: &[f64]) -> Vec<f64> {
    let e = DVector::from_column_slice(eta) / norm(eta);
    let coef = crate::linalg::lstsq(&m.transpose(), &e);
    (m.transpose() * coef - e).iter().copied().collect()
}

fn in_box(z: &[f64], bbox: &[(f64, f64)]) -> bool {
    z.iter().zip(bbox).all(|(v, (a, b))| v >= a && v <= b)
}

fn propagate_defining(fib: &Fibration, x: &[f64], eta: &[f64]) -> Result<Vec<CanonicalPoint>, MicrolocalError> {
    let b = fib.defining.as_ref().unwrap();
    let d1 = b.big_n - b.k;
    let z1_box = &fib.z_box[..d1];
    let z2_box = &fib.z_box[d1..];
    let m = samples_per_axis(d1);
    let (pts, _) = grid_points(z1_box, m);
    let defect = |z1: &[f64]| -> Vec<f64> {
        let (bx, _) = b.jacobians(x, z1);
        conormal_defect(&bx, eta)
    };
    let mut incident = false;
    let vals: Vec<Option<f64>> = pts
        .iter()
        .map(|z1| {
            let z2 = b.eval(x, z1);
            if in_box(&z2, z2_box) {
                incident = true;
                Some(norm(&defect(z1)))
            } else {
                None
            }
        })
        .collect();
    if !incident {
        return Err(MicrolocalError::NoIncidence { x: x.to_vec() });
    }
    let mut out = Vec::new();
    for (i, z1) in pts.iter().enumerate() {
        let Some(v) = vals[i] else { continue };
        // Local minima over the grid neighbours (axis-aligned).
        let is_min = neighbours(i, d1, m).into_iter().all(|j| vals[j].map_or(true, |w| v <= w));
        if !is_min || v > 0.2 {
            continue;
        }
        let (z1r, res) = levenberg_marquardt(&|w: &[f64]| defect(w), z1, 1e-13, 100);
        if res > 1e-9 || !in_box(&z1r, z1_box) {
            continue;
        }
        let mut z = z1r.clone();
        z.extend(b.eval(x, &z1r));
        if !in_box(&z[d1..], z2_box) {
            continue;
        }
        let jet = fib.jet(&z, x)?;
        out.push(CanonicalPoint { zeta: jet.apply_a(eta), z, x: x.to_vec(), eta: eta.to_vec() });
    }
    dedupe(&mut out);
    Ok(out)
}

fn neighbours(flat: usize, dim: usize, m: usize) -> Vec<usize> {
    let mut idx = vec![0; dim];
    let mut f = flat;
    for d in (0..dim).rev() {
        idx[d] = f % m;
        f /= m;
    }
    let mut out = Vec::new();
    for d in 0..dim {
        for delta in [-1i64, 1] {
            let v = idx[d] as i64 + delta;
            if v < 0 || v >= m as i64 {
                continue;
            }
            let mut j = idx.clone();
            j[d] = v as usize;
            out.push(j.iter().fold(0, |acc, &k| acc * m + k));
        }
    }
    out
}

fn propagate_rays(fib: &Fibration, rays: &RayFamily, x: &[f64], eta: &[f64]) -> Result<Vec<CanonicalPoint>, MicrolocalError> {
    let m = samples_per_axis(rays.param_dim).min(48);
    let (pts, h) = grid_points(&rays.z_box, m);
    let cell = norm(&h);
    let dist: Vec<Option<f64>> = pts
        .iter()
        .map(|z| {
            let tr = rays.trajectory(z).ok()?;
            let (a, b) = (-tr.tau_minus, tr.tau_plus);
            let k = 200;
            (0..=k)
                .map(|i| norm(&sub(&tr.base_at(a + (b - a) * i as f64 / k as f64), x)))
                .min_by(|p, q| p.partial_cmp(q).unwrap())
        })
        .collect();
    let scale = fib.x_chart.diameter();
    if dist.iter().all(|d| d.map_or(true, |v| v > 2.0 * cell * scale)) {
        return Err(MicrolocalError::NoIncidence { x: x.to_vec() });
    }
    let en = norm(eta);
    let residual = |w: &[f64]| -> Vec<f64> {
        let (z, t) = w.split_at(rays.param_dim);
        let Ok(tr) = rays.trajectory(z) else { return vec![1e3; x.len() + 1] };
        let st = tr.state_at(t[0].clamp(-tr.tau_minus, tr.tau_plus));
        let v = rays.field.base_velocity(&st);
        let mut r = sub(&st[..x.len()], x);
        r.push(dot(eta, &v) / (en * norm(&v)));
        r
    };
    let mut out = Vec::new();
    let mut keys: Vec<Vec<f64>> = Vec::new();
    // A characteristic eta of a homogeneous symbol is its own ray covector; the tangency
    // root is then a double root that the least-squares search only resolves to sqrt(eps).
    let mut exact_keys: Vec<Vec<f64>> = Vec::new();
    if let (Some(locate), Some(p)) = (&rays.locate, &fib.x_chart.symbol) {
        if p.degree.is_some() && p.eval(x, eta).abs() < 1e-12 * en * en {
            for sg in [1.0, -1.0] {
                let mut st = x.to_vec();
                st.extend(eta.iter().map(|v| sg * v));
                let Some(z) = locate(&st) else { continue };
                if !in_box(&z, &rays.z_box) {
                    continue;
                }
                let Ok(ray) = rays.variational(&z) else { continue };
                let (t0, miss) = ray.time_of(x);
                if miss > 1e-9 {
                    continue;
                }
                let zeta = (-(ray.jacobi(t0).transpose() * DVector::from_column_slice(eta))).iter().copied().collect();
                let key: Vec<f64> = ray.x(0.0).into_iter().chain(ray.xdot(0.0)).collect();
                if exact_keys.iter().any(|k| norm(&sub(k, &key)) < 1e-6) {
                    continue;
                }
                exact_keys.push(key);
                out.push(CanonicalPoint { z, zeta, x: x.to_vec(), eta: eta.to_vec() });
            }
        }
    }
    for (i, z) in pts.iter().enumerate() {
        let Some(d) = dist[i] else { continue };
        if d > 2.0 * cell * scale {
            continue;
        }
        let is_min = neighbours(i, rays.param_dim, m).into_iter().all(|j| dist[j].map_or(true, |w| d <= w));
        if !is_min {
            continue;
        }
        let Ok(ray) = rays.variational(z) else { continue };
        let (t0, _) = ray.time_of(x);
        let mut w = z.clone();
        w.push(t0);
        let (wr, res) = levenberg_marquardt(&residual, &w, 1e-12, 100);
        if res > 1e-8 || !in_box(&wr[..rays.param_dim], &rays.z_box) {
            continue;
        }
        let zr = wr[..rays.param_dim].to_vec();
        let ray = rays.variational(&zr)?;
        let jac = ray.jacobi(wr[rays.param_dim]);
        let zeta = (-(jac.transpose() * DVector::from_column_slice(eta))).iter().copied().collect();
        // Distinct parameters may describe the same oriented ray (periodic angles).
        let key: Vec<f64> = ray.x(0.0).into_iter().chain(ray.xdot(0.0)).collect();
        if keys.iter().any(|k| norm(&sub(k, &key)) < 1e-6) || exact_keys.iter().any(|k| norm(&sub(k, &key)) < 1e-3) {
            continue;
        }
        keys.push(key);
        out.push(CanonicalPoint { z: zr, zeta, x: x.to_vec(), eta: eta.to_vec() });
    }
    Ok(out)
}

/// C o {(x, eta)}: every canonical point over each source covector.
pub fn propagate_wavefront(fib: &Fibration, sources: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<CanonicalPoint>, MicrolocalError> {
    let mut out = Vec::new();
    for (x, eta) in sources {
        let pts = if fib.defining.is_some() {
            propagate_defining(fib, x, eta)?
        } else if let Some(rays) = &fib.rays {
            propagate_rays(fib, rays, x, eta)?
        } else {
            return Err(MicrolocalError::ChartFailure("no defining form or ray family".into()));
        };
        out.extend(pts);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::{flat_disk_rays, radon_fibration, FlatMode};

    #[test]
    fn radon_line_through_conormal() {
        let fib = radon_fibration(3.0);
        let x = vec![0.3, 0.4];
        let a0: f64 = 0.6;
        let eta = vec![a0.cos(), a0.sin()];
        let out = propagate_wavefront(&fib, &[(x.clone(), eta.clone())]).unwrap();
        assert_eq!(out.len(), 1, "{out:?}");
        let p = &out[0];
        assert!((p.z[0] - a0).abs() < 1e-9);
        assert!((p.z[1] - (x[0] * a0.cos() + x[1] * a0.sin())).abs() < 1e-9);
        // zeta = (-b_alpha mu, mu) with eta = -mu theta.
        let mu = -1.0;
        let b_alpha = -x[0] * a0.sin() + x[1] * a0.cos();
        assert!((p.zeta[1] - mu).abs() < 1e-9 && (p.zeta[0] + b_alpha * mu).abs() < 1e-9, "{:?}", p.zeta);
    }

    #[test]
    fn flat_rays_find_both_orientations() {
        let rays = flat_disk_rays(1.0, FlatMode::Geodesic);
        let fib = Fibration::from_ray_family(rays, &[]).unwrap();
        let out = propagate_wavefront(&fib, &[(vec![0.6, 0.0], vec![1.0, 0.0])]).unwrap();
        assert_eq!(out.len(), 2, "{out:?}");
        for p in &out {
            assert!((p.z[1].abs() - 0.6).abs() < 1e-7, "{p:?}");
        }
    }

    #[test]
    fn restricted_complex_misses() {
        let mut fib = radon_fibration(3.0);
        fib.z_box = vec![(0.0, 0.5), (-3.0, 3.0)];
        let out = propagate_wavefront(&fib, &[(vec![0.1, 0.1], vec![0.0, 1.0])]).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn null_covector_finds_its_own_light_ray() {
        let fib = Fibration::from_ray_family(crate::transforms::minkowski_light_rays(1.0, 2.0), &[]).unwrap();
        let b: f64 = 0.7;
        let out = propagate_wavefront(&fib, &[(vec![0.1, 0.2, 0.3], vec![-1.0, b.cos(), b.sin()])]).unwrap();
        assert_eq!(out.len(), 1, "{out:?}");
        assert!((out[0].z[0] - b).abs() < 1e-12, "{:?}", out[0].z);
    }
}
