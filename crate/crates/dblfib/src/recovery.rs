//! Layer stripping over a foliation by level sets of F: certify that f vanishes on
//! successive shells {s < F <= s_max} from microlocal verdicts on the transform data.

use crate::bolker::{conjugate_scan, pseudoconvexity_check, pvs_membership, BolkerError, PseudoconvexityResult};
use crate::fibration::{Fibration, FibrationError, RayFamily};
use crate::geometry::{base_function, maximal_trajectory, ScalarFn, Symbol, VecFn};
use crate::linalg::{dot, fd_gradient, norm, C64};
use crate::microlocal::{decay_from, default_lambdas, pair_with_packet, propagate_wavefront, DetectorConfig, MicrolocalError, WfClass};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecoveryError {
    #[error(transparent)]
    Bolker(#[from] BolkerError),
    #[error(transparent)]
    Microlocal(#[from] MicrolocalError),
    #[error(transparent)]
    Fibration(#[from] FibrationError),
    #[error("no ray tangent to the level at x = {x:?} (defect {defect:.3e})")]
    NotTangent { x: Vec<f64>, defect: f64 },
    #[error("recovery needs a ray family")]
    NoRays,
}

pub type LevelSampler = Arc<dyn Fn(f64, usize) -> Vec<Vec<f64>> + Send + Sync>;

/// Level sets Gamma_s = F^{-1}(s) for s in (s_min, s_max].
#[derive(Clone)]
pub struct Foliation {
    pub dim: usize,
    pub f: ScalarFn,
    pub grad: Option<VecFn>,
    pub s_min: f64,
    pub s_max: f64,
    pub sampler: LevelSampler,
}

fn fibonacci_sphere(count: usize) -> Vec<[f64; 3]> {
    let g = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - y * y).sqrt();
            let a = g * i as f64;
            [r * a.cos(), y, r * a.sin()]
        })
        .collect()
}

impl Foliation {
    /// F = |x - c| in the plane.
    pub fn concentric_circles(center: [f64; 2], s_min: f64, s_max: f64) -> Self {
        let f: ScalarFn = Arc::new(move |x: &[f64]| ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt());
        let grad: VecFn = Arc::new(move |x: &[f64]| {
            let d = [x[0] - center[0], x[1] - center[1]];
            let r = norm(&d).max(1e-300);
            vec![d[0] / r, d[1] / r]
        });
        let sampler: LevelSampler = Arc::new(move |s: f64, m: usize| {
            (0..m)
                .map(|i| {
                    let a = 2.0 * PI * (i as f64 + 0.5) / m as f64;
                    vec![center[0] + s * a.cos(), center[1] + s * a.sin()]
                })
                .collect()
        });
        Self { dim: 2, f, grad: Some(grad), s_min, s_max, sampler }
    }

    /// F(x) = n . x, sampled on the segment of half-width `half` through s n.
    pub fn linear(normal: [f64; 2], s_min: f64, s_max: f64, half: f64) -> Self {
        let nn = norm(&normal);
        let n = [normal[0] / nn, normal[1] / nn];
        let f: ScalarFn = Arc::new(move |x: &[f64]| n[0] * x[0] + n[1] * x[1]);
        let grad: VecFn = Arc::new(move |_x: &[f64]| n.to_vec());
        let sampler: LevelSampler = Arc::new(move |s: f64, m: usize| {
            (0..m)
                .map(|i| {
                    let t = -half + 2.0 * half * (i as f64 + 0.5) / m as f64;
                    vec![s * n[0] - t * n[1], s * n[1] + t * n[0]]
                })
                .collect()
        });
        Self { dim: 2, f, grad: Some(grad), s_min, s_max, sampler }
    }

    /// F(t, x) = |x| on R^{1+2}, sampled at |t| <= t_half.
    pub fn spatial_radius(s_min: f64, s_max: f64, t_half: f64) -> Self {
        let f: ScalarFn = Arc::new(|x: &[f64]| (x[1] * x[1] + x[2] * x[2]).sqrt());
        let grad: VecFn = Arc::new(|x: &[f64]| {
            let r = (x[1] * x[1] + x[2] * x[2]).sqrt().max(1e-300);
            vec![0.0, x[1] / r, x[2] / r]
        });
        let sampler: LevelSampler = Arc::new(move |s: f64, m: usize| {
            let rows = (m as f64).sqrt().ceil() as usize;
            let cols = m.div_ceil(rows);
            (0..m)
                .map(|i| {
                    let t = -t_half + 2.0 * t_half * ((i / cols) as f64 + 0.5) / rows as f64;
                    let a = 2.0 * PI * ((i % cols) as f64 + 0.5) / cols as f64;
                    vec![t, s * a.cos(), s * a.sin()]
                })
                .collect()
        });
        Self { dim: 3, f, grad: Some(grad), s_min, s_max, sampler }
    }

    /// Levels of an arbitrary F that are star-shaped about `center`: points on Gamma_s are
    /// found by bisection along rays from the centre out to `reach`.
    pub fn star_shaped(dim: usize, f: ScalarFn, center: Vec<f64>, s_min: f64, s_max: f64, reach: f64) -> Self {
        let g = f.clone();
        let sampler: LevelSampler = Arc::new(move |s: f64, m: usize| {
            let dirs: Vec<Vec<f64>> = match dim {
                2 => (0..m)
                    .map(|i| {
                        let a = 2.0 * PI * (i as f64 + 0.5) / m as f64;
                        vec![a.cos(), a.sin()]
                    })
                    .collect(),
                _ => fibonacci_sphere(m).into_iter().map(|d| d[..dim.min(3)].to_vec()).collect(),
            };
            dirs.into_iter()
                .filter_map(|d| {
                    let at = |r: f64| g(&center.iter().zip(&d).map(|(c, v)| c + r * v).collect::<Vec<_>>()) - s;
                    let (mut lo, mut hi) = (0.0, reach);
                    let (flo, fhi) = (at(lo), at(hi));
                    if flo * fhi > 0.0 {
                        return None;
                    }
                    for _ in 0..80 {
                        let mid = 0.5 * (lo + hi);
                        if (at(mid) > 0.0) == (fhi > 0.0) {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    let r = 0.5 * (lo + hi);
                    Some(center.iter().zip(&d).map(|(c, v)| c + r * v).collect())
                })
                .collect()
        });
        Self { dim, f, grad: None, s_min, s_max, sampler }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    pub fn differential(&self, x: &[f64]) -> Vec<f64> {
        match &self.grad {
            Some(g) => g(x),
            None => fd_gradient(&|y: &[f64]| (self.f)(y), x, 1e-6),
        }
    }

    pub fn level(&self, s: f64, count: usize) -> Vec<Vec<f64>> {
        (self.sampler)(s, count)
    }

    pub fn symbol(&self) -> Symbol {
        base_function(self.dim, self.f.clone(), self.grad.clone())
    }

    /// Levels s_max - k (s_max - s_min) / count for k = 0..count.
    pub fn levels(&self, count: usize) -> Vec<f64> {
        (0..count).map(|k| self.s_max - k as f64 * (self.s_max - self.s_min) / count as f64).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelCheck {
    pub s: f64,
    pub points: usize,
    pub pvs_members: usize,
    pub gradient_ok: bool,
    pub nested: bool,
    pub pseudoconvexity: PseudoconvexityResult,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FoliationReport {
    pub pass: bool,
    pub levels: Vec<LevelCheck>,
}

/// PVS membership of dF and the bracket {p, {p, F}} at tangencies on sampled levels.
pub fn foliation_validate(fol: &Foliation, p: &Symbol, levels: usize, per_level: usize, seed: u64) -> FoliationReport {
    let fs = fol.symbol();
    let step = (fol.s_max - fol.s_min) / levels.max(1) as f64;
    let out: Vec<LevelCheck> = fol
        .levels(levels)
        .into_iter()
        .map(|s| {
            let pts = fol.level(s, per_level);
            let mut failures = Vec::new();
            let mut members = 0;
            let mut gradient_ok = true;
            let mut nested = true;
            for x in &pts {
                let d = fol.differential(x);
                let dn = norm(&d);
                if dn < 1e-10 {
                    gradient_ok = false;
                    failures.push(format!("dF vanishes at {x:?}"));
                    continue;
                }
                // F increases along its gradient across half a level step.
                let h = 0.5 * step / dn;
                let up: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + h * b).collect();
                if fol.value(&up) <= s {
                    nested = false;
                    failures.push(format!("levels not nested at {x:?}"));
                }
                match pvs_membership(p, x, &d, seed) {
                    Ok(r) if r.member => members += 1,
                    Ok(_) => failures.push(format!("dF not in PVS at {x:?}")),
                    Err(e) => failures.push(format!("PVS search at {x:?}: {e}")),
                }
            }
            let pc = pseudoconvexity_check(p, &fs, &pts, 16, seed);
            if !pc.pass {
                failures.push(format!("pseudoconvexity margin {:.3e}", pc.min_margin));
            }
            LevelCheck { s, points: pts.len(), pvs_members: members, gradient_ok, nested, pseudoconvexity: pc, failures }
        })
        .collect();
    FoliationReport { pass: out.iter().all(|l| l.failures.is_empty()), levels: out }
}

#[derive(Debug, Clone, Serialize)]
pub struct TangentRay {
    pub z: Vec<f64>,
    /// Covector over z paired with (x, dF(x)).
    pub zeta: Vec<f64>,
    pub t0: f64,
    /// Times around t0 with F(x_z(t)) <= s + delta.
    pub window: (f64, f64),
    pub xi: Vec<f64>,
    pub tangency: f64,
    pub conjugate_free: bool,
}

fn rays_of(fib: &Fibration) -> Result<&RayFamily, RecoveryError> {
    fib.rays.as_ref().ok_or(RecoveryError::NoRays)
}

/// Samples of the window scan and of the short-segment conjugacy check.
const WINDOW_SAMPLES: usize = 400;
const SEGMENT_SCAN: usize = 32;

/// Ray through x tangent to Gamma_s, from the PVS covector of dF(x) flowed back to the entry.
pub fn tangent_ray_at(fib: &Fibration, fol: &Foliation, p: &Symbol, s: f64, x: &[f64], delta: f64, seed: u64) -> Result<TangentRay, RecoveryError> {
    let rays = rays_of(fib)?;
    let eta = fol.differential(x);
    let pvs = pvs_membership(p, x, &eta, seed)?;
    if !pvs.member {
        return Err(BolkerError::SearchFailed.into());
    }
    let mut state = x.to_vec();
    state.extend(&pvs.xi);
    let z = match &rays.locate {
        Some(locate) => {
            let tr = maximal_trajectory(&rays.field, &state, &rays.chart, &rays.opts, None)
                .map_err(|e| FibrationError::Geometry(e))?;
            locate(&tr.state_at(-tr.tau_minus)).ok_or(RecoveryError::NotTangent { x: x.to_vec(), defect: f64::INFINITY })?
        }
        None => {
            let pts = propagate_wavefront(fib, &[(x.to_vec(), eta.clone())])?;
            pts.into_iter().next().ok_or(RecoveryError::NotTangent { x: x.to_vec(), defect: f64::INFINITY })?.z
        }
    };
    let ray = rays.variational(&z)?;
    let (t0, miss) = ray.time_of(x);
    let v = ray.xdot(t0);
    let tangency = dot(&eta, &v).abs() / (norm(&eta) * norm(&v));
    if tangency > 1e-8 || miss > 1e-7 {
        return Err(RecoveryError::NotTangent { x: x.to_vec(), defect: tangency.max(miss) });
    }
    let jac = ray.jacobi(t0);
    let zeta: Vec<f64> = (-(jac.transpose() * DVector::from_column_slice(&eta))).iter().copied().collect();
    let (a, b) = (-ray.tau_minus(), ray.tau_plus());
    let h = (b - a) / WINDOW_SAMPLES as f64;
    let inside = |t: f64| fol.value(&ray.x(t)) <= s + delta;
    let mut lo = t0;
    while lo - h >= a && inside(lo - h) {
        lo -= h;
    }
    let mut hi = t0;
    while hi + h <= b && inside(hi + h) {
        hi += h;
    }
    let conjugate_free = conjugate_scan(rays, &z, SEGMENT_SCAN)?
        .iter()
        .all(|c| !(c.s >= lo && c.s <= hi && c.t >= lo && c.t <= hi));
    Ok(TangentRay { z, zeta, t0, window: (lo, hi), xi: pvs.xi, tangency, conjugate_free })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StripConfig {
    pub detector: DetectorConfig,
    /// Initial level step.
    pub step: f64,
    pub points_per_level: usize,
    /// Smallest step as a fraction of s_max - s_min.
    pub step_floor: f64,
    /// Half-width of the local data window in units of the current step.
    pub window: f64,
    pub seed: u64,
}

impl Default for StripConfig {
    fn default() -> Self {
        Self { detector: DetectorConfig::default(), step: 0.05, points_per_level: 32, step_floor: 1e-3, window: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelRecord {
    pub s: f64,
    pub step: f64,
    pub verdicts: Vec<WfClass>,
    /// Smallest fitted epsilon_hat minus the regular threshold; null when every pairing
    /// was under the round-off floor.
    pub margin: Option<f64>,
    pub certified: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    pub levels: Vec<LevelRecord>,
    /// [s_low, s_max]: f vanishes where s_low < F <= s_max (null if nothing certified).
    pub certified_interval: Option<[f64; 2]>,
    pub stopping_level: Option<f64>,
    pub lambdas: Vec<f64>,
    /// The continuation step is a thresholded finite-lambda rule, not a proof.
    pub note: String,
}

fn level_verdicts(
    fib: &Fibration,
    fol: &Foliation,
    p: &Symbol,
    data: &(dyn Fn(&[f64]) -> f64 + Sync),
    s: f64,
    step: f64,
    cfg: &StripConfig,
    lambdas: &[f64],
) -> (Vec<WfClass>, Option<f64>) {
    let pts = fol.level(s, cfg.points_per_level);
    let w = cfg.window * step;
    let per_point: Vec<Vec<(WfClass, f64)>> = pts
        .par_iter()
        .map(|x| {
            let Ok(tr) = tangent_ray_at(fib, fol, p, s, x, step, cfg.seed) else {
                return vec![(WfClass::Inconclusive, f64::NAN); 2];
            };
            if !tr.conjugate_free {
                return vec![(WfClass::Inconclusive, f64::NAN); 2];
            }
            let zn = norm(&tr.zeta);
            [1.0, -1.0]
                .iter()
                .map(|&sg| {
                    let dir: Vec<f64> = tr.zeta.iter().map(|v| sg * v / zn).collect();
                    let g = |t: &[f64]| {
                        let z: Vec<f64> = tr.z.iter().zip(&dir).map(|(a, b)| a + t[0] * b).collect();
                        C64::new(data(&z), 0.0)
                    };
                    let est = decay_from(&|l| pair_with_packet(&g, &[(-w, w)], &[], &[0.0], &[1.0], l), lambdas, &cfg.detector);
                    (est.class, est.epsilon_hat)
                })
                .collect()
        })
        .collect();
    let flat: Vec<(WfClass, f64)> = per_point.into_iter().flatten().collect();
    let margin = flat
        .iter()
        .filter(|(_, e)| e.is_finite())
        .map(|(_, e)| e - cfg.detector.eps_reg)
        .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.min(e))));
    (flat.into_iter().map(|(c, _)| c).collect(), margin)
}

/// Descend from s_max: a level is certified when every tangent conormal verdict is regular
/// and the previous shell was certified. Inconclusive levels halve the step down to the
/// floor; a singular verdict stops the descent.
pub fn layer_strip(
    fib: &Fibration,
    fol: &Foliation,
    p: &Symbol,
    data: &(dyn Fn(&[f64]) -> f64 + Sync),
    cfg: &StripConfig,
) -> Result<RecoveryReport, RecoveryError> {
    rays_of(fib)?;
    let lambdas = default_lambdas();
    let floor = cfg.step_floor * (fol.s_max - fol.s_min);
    let mut step = cfg.step;
    let mut low = fol.s_max;
    let mut levels = Vec::new();
    let mut stop = None;
    while low > fol.s_min + 1e-12 {
        let s = (low - step).max(fol.s_min);
        let (verdicts, margin) = level_verdicts(fib, fol, p, data, s, step, cfg, &lambdas);
        let all_regular = verdicts.iter().all(|c| *c == WfClass::Regular);
        let any_singular = verdicts.iter().any(|c| *c == WfClass::Singular);
        levels.push(LevelRecord { s, step, verdicts, margin, certified: all_regular });
        if all_regular {
            log::debug!("level {s:.4} certified");
            low = s;
            continue;
        }
        if !any_singular && step / 2.0 >= floor {
            step /= 2.0;
            continue;
        }
        stop = Some(s);
        break;
    }
    Ok(RecoveryReport {
        levels,
        certified_interval: (low < fol.s_max).then_some([low, fol.s_max]),
        stopping_level: stop,
        lambdas,
        note: "shells are certified by a finite-lambda thresholded decay rule on local data".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fibration::QuadratureSpec;
    use crate::geometry::ScalarField;
    use crate::transforms::{flat_disk_rays, minkowski_light_rays, ray_forward, FlatMode};

    fn disk() -> Fibration {
        Fibration::from_ray_family(flat_disk_rays(1.0, FlatMode::Cosphere), &[]).unwrap()
    }

    #[test]
    fn circles_pass_linear_fails() {
        let p = Symbol::cosphere(2);
        let circles = Foliation::concentric_circles([0.0, 0.0], 0.1, 0.9);
        let r = foliation_validate(&circles, &p, 4, 8, 1);
        assert!(r.pass, "{:?}", r.levels.iter().map(|l| &l.failures).collect::<Vec<_>>());
        let lin = Foliation::linear([1.0, 0.0], -0.5, 0.5, 0.5);
        let r = foliation_validate(&lin, &p, 3, 6, 1);
        assert!(!r.pass && r.levels.iter().all(|l| !l.pseudoconvexity.pass));
        let mk = Foliation::spatial_radius(0.2, 0.8, 0.5);
        let r = foliation_validate(&mk, &Symbol::minkowski(3), 3, 9, 1);
        assert!(r.pass, "{:?}", r.levels.iter().map(|l| &l.failures).collect::<Vec<_>>());
    }

    #[test]
    fn tangent_line_of_a_circle() {
        let fib = disk();
        let fol = Foliation::concentric_circles([0.0, 0.0], 0.05, 1.0);
        let x = [0.0, 0.5];
        let t = tangent_ray_at(&fib, &fol, &Symbol::cosphere(2), 0.5, &x, 0.1, 3).unwrap();
        // The tangent line is x . theta = +-0.5 with theta = +-(0, 1).
        assert!((t.z[1].abs() - 0.5).abs() < 1e-9, "{t:?}");
        assert!((t.z[0].abs() - PI / 2.0).abs() < 1e-9, "{t:?}");
        assert!(t.conjugate_free && t.window.0 < t.t0 && t.t0 < t.window.1);
    }

    #[test]
    fn tangent_light_ray_has_spacelike_conormal() {
        let fib = Fibration::from_ray_family(minkowski_light_rays(1.0, 2.0), &[]).unwrap();
        let fol = Foliation::spatial_radius(0.1, 0.9, 0.5);
        let x = [0.1, 0.5, 0.0];
        let t = tangent_ray_at(&fib, &fol, &Symbol::minkowski(3), 0.5, &x, 0.1, 3).unwrap();
        assert!(t.tangency < 1e-8);
    }

    #[test]
    fn non_pvs_covector_fails() {
        let fib = Fibration::from_ray_family(minkowski_light_rays(1.0, 2.0), &[]).unwrap();
        // dF = dt is timelike, never in PVS.
        let fol = Foliation { grad: Some(Arc::new(|_x: &[f64]| vec![1.0, 0.0, 0.0])), ..Foliation::spatial_radius(0.1, 0.9, 0.5) };
        let r = tangent_ray_at(&fib, &fol, &Symbol::minkowski(3), 0.5, &[0.0, 0.5, 0.0], 0.1, 3);
        assert!(matches!(r, Err(RecoveryError::Bolker(BolkerError::SearchFailed))), "{r:?}");
    }

    fn data_for(f: ScalarField) -> impl Fn(&[f64]) -> f64 + Sync {
        let rays = flat_disk_rays(1.0, FlatMode::Cosphere);
        let kappa: crate::fibration::KappaFn = Arc::new(|_z: &[f64], _x: &[f64]| 1.0);
        move |z: &[f64]| {
            if z[1].abs() >= 1.0 {
                return 0.0;
            }
            ray_forward(&rays, &kappa, &f, z, &QuadratureSpec::default()).unwrap_or(0.0)
        }
    }

    #[test]
    fn zero_field_is_certified_everywhere() {
        let fib = disk();
        let fol = Foliation::concentric_circles([0.0, 0.0], 0.05, 1.0);
        let cfg = StripConfig { step: 0.1, points_per_level: 8, ..Default::default() };
        let data = |_z: &[f64]| 0.0;
        let rep = layer_strip(&fib, &fol, &Symbol::cosphere(2), &data, &cfg).unwrap();
        assert_eq!(rep.certified_interval, Some([0.05, 1.0]));
        assert!(rep.stopping_level.is_none());
    }

    #[test]
    fn annulus_stops_at_outer_radius() {
        let fib = disk();
        let fol = Foliation::concentric_circles([0.0, 0.0], 0.05, 1.0);
        let cfg = StripConfig { points_per_level: 8, ..Default::default() };
        let data = data_for(ScalarField::annulus_indicator(2, 0.4, 0.6));
        let rep = layer_strip(&fib, &fol, &Symbol::cosphere(2), &data, &cfg).unwrap();
        let [lo, _] = rep.certified_interval.unwrap();
        assert!(lo > 0.6 && lo <= 0.6 + cfg.step + 1e-9, "{rep:?}");
    }
}
