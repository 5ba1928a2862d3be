//! Gaussian wave packets, the FBI transform, its inversion, and the finite-lambda
//! decay-rate detector built on top of it.

use crate::geometry::{ScalarField, ScalarFn};
use crate::linalg::C64;
use crate::quad::{nodes, sign_changes, split_nodes, Rule};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;

/// Half-width of the integration window in units of lambda^{-1/2}.
pub const WINDOW: f64 = 8.0;
/// Noise floor as a multiple of eps * sum |terms|.
pub const FLOOR_FACTOR: f64 = 1024.0;

pub fn default_lambdas() -> Vec<f64> {
    (3..=10).map(|k| 2f64.powi(k)).collect()
}

/// Packets m_u^lambda(y) = lambda^{3n/4} c_n exp(i lambda y.u2 - lambda |y - u1|^2 / 2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WavePacketFamily {
    pub n: usize,
}

impl WavePacketFamily {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    pub fn c_n(&self) -> f64 {
        let n = self.n as f64;
        2f64.powf(-n / 2.0) * PI.powf(-0.75 * n)
    }

    pub fn amplitude(&self, lambda: f64) -> f64 {
        lambda.powf(0.75 * self.n as f64) * self.c_n()
    }

    pub fn packet(&self, u1: &[f64], u2: &[f64], lambda: f64, y: &[f64]) -> C64 {
        let mut phase = 0.0;
        let mut d2 = 0.0;
        for j in 0..self.n {
            phase += y[j] * u2[j];
            d2 += (y[j] - u1[j]).powi(2);
        }
        C64::from_polar(self.amplitude(lambda) * (-0.5 * lambda * d2).exp(), lambda * phase)
    }

    /// Closed form of the L^2 mass lambda^n 2^{-n} pi^{-n}.
    pub fn mass(&self, lambda: f64) -> f64 {
        (lambda / (2.0 * PI)).powi(self.n as i32)
    }
}

/// Value of a packet pairing together with sum |terms| (for the round-off floor).
#[derive(Debug, Clone, Copy)]
pub struct Pairing {
    pub value: C64,
    pub abs_sum: f64,
}

impl Pairing {
    pub fn floor(&self) -> f64 {
        FLOOR_FACTOR * f64::EPSILON * self.abs_sum
    }
}

fn axis_count(lambda: f64, u2: f64, len: f64) -> usize {
    let waves = (lambda * u2.abs() * len / (2.0 * PI)).ceil() as usize;
    40 + 4 * waves
}

fn axis_nodes(a: f64, b: f64, count: usize, breaks: &[f64]) -> Vec<(f64, f64)> {
    if b <= a {
        return Vec::new();
    }
    if breaks.is_empty() {
        nodes(a, b, count as f64 / (b - a), count, Rule::GaussLegendre)
    } else {
        split_nodes(a, b, breaks, count as f64 / (b - a), 16, Rule::GaussLegendre)
    }
}

/// Outer-axis nodes when inner lines end on an interface. Near a tangency the inner
/// endpoints move like sqrt(b - x), so each piece is mapped by x = p + (q - p)(3t^2 - 2t^3),
/// which makes those endpoints analytic in t. The endpoint phase lambda |u2| y(x) can sweep
/// the whole inner window within one piece, so pieces are sized by `reach` (outer length
/// plus inner window) rather than by their own length.
fn clustered_nodes(a: f64, b: f64, breaks: &[f64], lambda: f64, freq: f64, inner: f64) -> Vec<(f64, f64)> {
    if b <= a {
        return Vec::new();
    }
    let mut pts = vec![a];
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&t| t > a && t < b).collect();
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.extend(cuts);
    pts.push(b);
    let mut out = Vec::new();
    for w in pts.windows(2) {
        let len = w[1] - w[0];
        if len <= 1e-15 {
            continue;
        }
        let waves = lambda * freq * (len + inner) / (2.0 * PI);
        let m = 32 + (6.0 * waves).ceil() as usize;
        for (t, wt) in nodes(0.0, 1.0, m as f64, m, Rule::GaussLegendre) {
            out.push((w[0] + len * t * t * (3.0 - 2.0 * t), wt * len * 6.0 * t * (1.0 - t)));
        }
    }
    out
}

struct Integrator<'a> {
    g: &'a (dyn Fn(&[f64]) -> C64 + Sync),
    interfaces: &'a [ScalarFn],
    lo: Vec<f64>,
    hi: Vec<f64>,
    u1: &'a [f64],
    u2: &'a [f64],
    lambda: f64,
}

impl Integrator<'_> {
    fn n(&self) -> usize {
        self.lo.len()
    }

    fn count(&self, j: usize) -> usize {
        axis_count(self.lambda, self.u2[j], self.hi[j] - self.lo[j])
    }

    /// Interface crossings of the innermost line through `prefix`.
    fn inner_breaks(&self, prefix: &[f64]) -> Vec<f64> {
        let j = self.n() - 1;
        let mut out = Vec::new();
        for g in self.interfaces {
            let mut buf = prefix.to_vec();
            buf.push(0.0);
            let f = |t: f64| {
                let mut y = buf.clone();
                *y.last_mut().unwrap() = t;
                g(&y)
            };
            out.extend(sign_changes(&f, self.lo[j], self.hi[j], 64));
        }
        out
    }

    /// Outer-axis positions where the number of inner crossings changes (tangencies).
    fn outer_breaks(&self, prefix: &mut Vec<f64>) -> Vec<f64> {
        let j = prefix.len();
        if self.interfaces.is_empty() || j + 2 != self.n() {
            return Vec::new();
        }
        let count = |t: f64, prefix: &mut Vec<f64>| {
            prefix.push(t);
            let c = self.inner_breaks(prefix).len();
            prefix.pop();
            c
        };
        let m = 64;
        let (a, b) = (self.lo[j], self.hi[j]);
        let h = (b - a) / m as f64;
        let mut out = Vec::new();
        let mut t0 = a;
        let mut c0 = count(a, prefix);
        for i in 1..=m {
            let t1 = a + i as f64 * h;
            let c1 = count(t1, prefix);
            if c1 != c0 {
                let (mut lo, mut hi) = (t0, t1);
                for _ in 0..50 {
                    let mid = 0.5 * (lo + hi);
                    if count(mid, prefix) == c0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                out.push(0.5 * (lo + hi));
            }
            t0 = t1;
            c0 = c1;
        }
        out
    }

    fn run(&self, prefix: &mut Vec<f64>, weight: C64) -> (C64, f64) {
        let j = prefix.len();
        let breaks = if j + 1 == self.n() { self.inner_breaks(prefix) } else { self.outer_breaks(prefix) };
        let mut sum = C64::new(0.0, 0.0);
        let mut abs = 0.0;
        let pts = if j + 1 < self.n() && !self.interfaces.is_empty() {
            let freq = self.u2.iter().map(|v| v * v).sum::<f64>().sqrt();
            let inner: f64 = (j + 1..self.n()).map(|i| self.hi[i] - self.lo[i]).sum();
            clustered_nodes(self.lo[j], self.hi[j], &breaks, self.lambda, freq, inner)
        } else {
            axis_nodes(self.lo[j], self.hi[j], self.count(j), &breaks)
        };
        for (y, w) in pts {
            let d = y - self.u1[j];
            let factor = C64::from_polar(w * (-0.5 * self.lambda * d * d).exp(), -self.lambda * y * self.u2[j]);
            let wj = weight * factor;
            prefix.push(y);
            if j + 1 == self.n() {
                let term = (self.g)(prefix) * wj;
                sum += term;
                abs += term.norm();
            } else {
                let (s, a) = self.run(prefix, wj);
                sum += s;
                abs += a;
            }
            prefix.pop();
        }
        (sum, abs)
    }
}

/// Pairing <g, m_u^lambda> of a complex integrand supported in `support`, with the
/// innermost lines split at sign changes of `interfaces`.
pub fn pair_with_packet(
    g: &(dyn Fn(&[f64]) -> C64 + Sync),
    support: &[(f64, f64)],
    interfaces: &[ScalarFn],
    u1: &[f64],
    u2: &[f64],
    lambda: f64,
) -> Pairing {
    let n = u1.len();
    let half = WINDOW / lambda.sqrt();
    let lo: Vec<f64> = (0..n).map(|j| (u1[j] - half).max(support[j].0)).collect();
    let hi: Vec<f64> = (0..n).map(|j| (u1[j] + half).min(support[j].1)).collect();
    if lo.iter().zip(&hi).any(|(a, b)| b <= a) {
        return Pairing { value: C64::new(0.0, 0.0), abs_sum: 0.0 };
    }
    let it = Integrator { g, interfaces, lo, hi, u1, u2, lambda };
    let (s, a) = it.run(&mut Vec::with_capacity(n), C64::new(1.0, 0.0));
    let amp = WavePacketFamily::new(n).amplitude(lambda);
    Pairing { value: s * amp, abs_sum: a * amp }
}

/// (L^lambda f)(u) = int f(y) conj(m_u^lambda(y)) dy.
pub fn fbi_pairing(f: &ScalarField, u1: &[f64], u2: &[f64], lambda: f64) -> Pairing {
    let g = |y: &[f64]| C64::new(f.eval(y), 0.0);
    pair_with_packet(&g, &f.support, &f.interfaces, u1, u2, lambda)
}

pub fn fbi_transform(f: &ScalarField, u1: &[f64], u2: &[f64], lambda: f64) -> C64 {
    fbi_pairing(f, u1, u2, lambda).value
}

/// Regular phase-space lattice covering `u1_box` x `u2_box` with the given spacings.
#[derive(Debug, Clone)]
pub struct CoefficientGrid {
    pub lambda: f64,
    pub axes: Vec<Vec<f64>>,
    pub cell: f64,
    pub coeffs: Vec<C64>,
}

fn axis(a: f64, b: f64, h: f64) -> Vec<f64> {
    let m = ((b - a) / h).round() as usize;
    let h = (b - a) / m as f64;
    (0..=m).map(|i| a + i as f64 * h).collect()
}

/// FBI coefficients on a lattice with spacing <= 0.5 lambda^{-1/2} on every axis.
pub fn fbi_coefficients(f: &ScalarField, u1_box: &[(f64, f64)], u2_box: &[(f64, f64)], lambda: f64) -> CoefficientGrid {
    let h = 0.5 / lambda.sqrt();
    let axes: Vec<Vec<f64>> = u1_box.iter().chain(u2_box).map(|&(a, b)| axis(a, b, h)).collect();
    let cell: f64 = axes.iter().map(|v| v[1] - v[0]).product();
    let total: usize = axes.iter().map(|v| v.len()).product();
    let n = u1_box.len();
    let coeffs = (0..total)
        .into_par_iter()
        .map(|k| {
            let p = crate::transforms::lattice_point(&axes, k);
            fbi_transform(f, &p[..n], &p[n..], lambda)
        })
        .collect();
    CoefficientGrid { lambda, axes, cell, coeffs }
}

impl CoefficientGrid {
    pub fn n(&self) -> usize {
        self.axes.len() / 2
    }

    /// Riemann sum of sum |c|^2 du, the discrete Parseval energy.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.cell
    }

    /// Largest lattice spacing relative to lambda^{-1/2}.
    pub fn relative_spacing(&self) -> f64 {
        self.axes.iter().map(|v| v[1] - v[0]).fold(0.0, f64::max) * self.lambda.sqrt()
    }
}

/// Reconstruction f(y) = int (L f)(u) m_u(y) du on the given points (real part).
pub fn fbi_inverse(grid: &CoefficientGrid, points: &[Vec<f64>]) -> Vec<f64> {
    if grid.relative_spacing() > 0.5 + 1e-12 {
        log::warn!("GridTooCoarse: spacing {} lambda^-1/2 exceeds 0.5", grid.relative_spacing());
    }
    let n = grid.n();
    let fam = WavePacketFamily::new(n);
    points
        .par_iter()
        .map(|y| {
            let mut acc = C64::new(0.0, 0.0);
            for (k, c) in grid.coeffs.iter().enumerate() {
                if *c == C64::new(0.0, 0.0) {
                    continue;
                }
                let p = crate::transforms::lattice_point(&grid.axes, k);
                acc += c * fam.packet(&p[..n], &p[n..], grid.lambda, y);
            }
            (acc * grid.cell).re
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WfClass {
    Regular,
    Singular,
    Inconclusive,
}

impl WfClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            WfClass::Regular => "regular",
            WfClass::Singular => "singular",
            WfClass::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub eps_sing: f64,
    pub eps_reg: f64,
    pub max_residual: f64,
    /// The ladder stops once |L| falls this far below its largest value. Singular
    /// pairings decay polynomially and never come close; past it the quadrature error
    /// of a discontinuous integrand dominates what is left.
    pub dynamic_range: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { eps_sing: 0.01, eps_reg: 0.05, max_residual: 0.5, dynamic_range: 1e-10 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayEstimate {
    /// Fitted exponential rate in log|L| = c + a ln(lambda) - eps lambda.
    pub epsilon_hat: f64,
    /// Fitted power a.
    pub power: f64,
    /// RMS residual of the fit in log|L|.
    pub residual: f64,
    pub class: WfClass,
    /// True when fewer than three values cleared the round-off floor.
    pub below_floor: bool,
    pub used: usize,
}

/// Fit log|L| = c + a ln(lambda) - eps lambda by least squares.
pub fn fit_decay(lambdas: &[f64], values: &[f64]) -> (f64, f64, f64) {
    let m = lambdas.len();
    let a = DMatrix::from_fn(m, 3, |i, j| match j {
        0 => 1.0,
        1 => lambdas[i].ln(),
        _ => -lambdas[i],
    });
    let y = DVector::from_iterator(m, values.iter().map(|v| v.ln()));
    let sol = crate::linalg::lstsq(&a, &y);
    let r = &a * &sol - &y;
    let rms = (r.norm_squared() / m as f64).sqrt();
    (sol[2], sol[1], rms)
}

pub fn classify(eps: f64, residual: f64, cfg: &DetectorConfig) -> WfClass {
    if residual >= cfg.max_residual {
        WfClass::Inconclusive
    } else if eps < cfg.eps_sing {
        WfClass::Singular
    } else if eps > cfg.eps_reg {
        WfClass::Regular
    } else {
        WfClass::Inconclusive
    }
}

/// Decay estimate from pairings evaluated lazily along the lambda ladder; stops at the
/// first value under the round-off floor or outside the dynamic range.
pub fn decay_from(pair: &dyn Fn(f64) -> Pairing, lambdas: &[f64], cfg: &DetectorConfig) -> DecayEstimate {
    let mut used_l = Vec::new();
    let mut used_v = Vec::new();
    for &l in lambdas {
        let p = pair(l);
        let v = p.value.norm();
        let peak = used_v.iter().copied().fold(0.0, f64::max);
        if v <= p.floor() || v < 1e-300 || v < cfg.dynamic_range * peak {
            break;
        }
        used_l.push(l);
        used_v.push(v);
    }
    if used_l.len() < 3 {
        return DecayEstimate {
            epsilon_hat: f64::INFINITY,
            power: 0.0,
            residual: 0.0,
            class: WfClass::Regular,
            below_floor: true,
            used: used_l.len(),
        };
    }
    let (eps, power, residual) = fit_decay(&used_l, &used_v);
    DecayEstimate { epsilon_hat: eps, power, residual, class: classify(eps, residual, cfg), below_floor: false, used: used_l.len() }
}

pub fn decay_rate_estimate(
    f: &ScalarField,
    u1: &[f64],
    u2: &[f64],
    lambdas: &[f64],
    cfg: &DetectorConfig,
) -> DecayEstimate {
    decay_from(&|l| fbi_pairing(f, u1, u2, l), lambdas, cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct WavefrontNode {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub estimate: DecayEstimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct WavefrontReport {
    pub lambdas: Vec<f64>,
    pub config: DetectorConfig,
    pub nodes: Vec<WavefrontNode>,
}

impl WavefrontReport {
    pub fn singular(&self) -> impl Iterator<Item = &WavefrontNode> {
        self.nodes.iter().filter(|n| n.estimate.class == WfClass::Singular)
    }

    pub fn to_csv(&self) -> String {
        let n = self.nodes.first().map(|v| v.u1.len()).unwrap_or(0);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# eps_sing: {}; eps_reg: {}; max_residual: {}; dynamic_range: {}; lambdas: {}",
            self.config.eps_sing,
            self.config.eps_reg,
            self.config.max_residual,
            self.config.dynamic_range,
            self.lambdas.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" ")
        );
        let mut cols: Vec<String> = (1..=n).map(|i| format!("u1_{i}")).collect();
        cols.extend((1..=n).map(|i| format!("u2_{i}")));
        cols.extend(["epsilon_hat", "residual", "class"].map(String::from));
        let _ = writeln!(s, "{}", cols.join(","));
        for node in &self.nodes {
            let mut row: Vec<String> = node.u1.iter().chain(&node.u2).map(|v| format!("{v:.16e}")).collect();
            row.push(format!("{:.16e}", node.estimate.epsilon_hat));
            row.push(format!("{:.16e}", node.estimate.residual));
            row.push(node.estimate.class.as_str().to_string());
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }
}

/// Runs the detector at every phase-space node (parallel, order preserved).
pub fn wavefront_scan(f: &ScalarField, grid: &[(Vec<f64>, Vec<f64>)], lambdas: &[f64], cfg: &DetectorConfig) -> WavefrontReport {
    let nodes = grid
        .par_iter()
        .map(|(u1, u2)| WavefrontNode { u1: u1.clone(), u2: u2.clone(), estimate: decay_rate_estimate(f, u1, u2, lambdas, cfg) })
        .collect();
    WavefrontReport { lambdas: lambdas.to_vec(), config: *cfg, nodes }
}

/// Planar phase grid: lattice points of `bbox` at `spacing` times `directions` unit covectors.
pub fn planar_phase_grid(bbox: &[(f64, f64)], spacing: f64, directions: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let xs = axis(bbox[0].0, bbox[0].1, spacing);
    let ys = axis(bbox[1].0, bbox[1].1, spacing);
    let mut out = Vec::new();
    for &x in &xs {
        for &y in &ys {
            for k in 0..directions {
                let a = 2.0 * PI * k as f64 / directions as f64;
                out.push((vec![x, y], vec![a.cos(), a.sin()]));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn packet_self_pairing() {
        for n in 1..=2 {
            let fam = WavePacketFamily::new(n);
            let u1 = vec![0.3; n];
            let u2: Vec<f64> = (0..n).map(|j| 0.7 - 0.4 * j as f64).collect();
            for &l in &[8.0, 64.0] {
                let g = |y: &[f64]| fam.packet(&u1, &u2, l, y);
                let p = pair_with_packet(&g, &vec![(-5.0, 5.0); n], &[], &u1, &u2, l);
                let exact = fam.mass(l);
                assert!((p.value - exact).norm() / exact < 1e-10, "{} vs {exact}", p.value);
            }
        }
    }

    #[test]
    fn gaussian_overlap_closed_form() {
        let f = ScalarField::gaussian(&[0.0, 0.0], 1.0);
        let l: f64 = 16.0;
        let u1 = [0.2, -0.1];
        let fam = WavePacketFamily::new(2);
        let got = fbi_transform(&f, &u1, &[0.0, 0.0], l);
        // int exp(-|y|^2/2 - l |y - u1|^2 / 2) dy, completing the square.
        let a = 1.0 + l;
        let u2n: f64 = u1.iter().map(|v| v * v).sum();
        let exact = fam.amplitude(l) * (2.0 * PI / a) * (-(l * u2n) / (2.0 * a)).exp();
        assert!((got.re - exact).abs() / exact < 1e-8 && got.im.abs() < 1e-8 * exact);
        assert_eq!(fbi_transform(&ScalarField::zero(2), &u1, &[1.0, 0.0], l), C64::new(0.0, 0.0));
    }

    fn bump1(c: f64) -> ScalarField {
        ScalarField::new(
            vec![(c - 0.5, c + 0.5)],
            Arc::new(move |y: &[f64]| {
                let r2 = ((y[0] - c) / 0.5).powi(2);
                if r2 < 1.0 {
                    (1.0 - 1.0 / (1.0 - r2)).exp() * std::f64::consts::E
                } else {
                    0.0
                }
            }),
        )
    }

    #[test]
    fn inversion_and_parseval_in_one_dimension() {
        let l = 64.0;
        let f = bump1(0.1);
        let grid = fbi_coefficients(&f, &[(-1.2, 1.4)], &[(-1.2, 1.2)], l);
        let pts: Vec<Vec<f64>> = (0..81).map(|i| vec![-0.4 + i as f64 * 0.01]).collect();
        let rec = fbi_inverse(&grid, &pts);
        let (mut num, mut den) = (0.0, 0.0);
        for (p, r) in pts.iter().zip(&rec) {
            num += (r - f.eval(p)).powi(2);
            den += f.eval(p).powi(2);
        }
        assert!((num / den).sqrt() < 0.01, "{}", (num / den).sqrt());
        let norm2: f64 = (0..2000).map(|i| f.eval(&[-0.4 + (i as f64 + 0.5) * 0.0005]).powi(2) * 0.0005).sum();
        assert!((grid.energy() / norm2 - 1.0).abs() < 0.02, "{} {}", grid.energy(), norm2);
        // Translation covariance.
        let g2 = fbi_coefficients(&bump1(0.35), &[(-0.95, 1.65)], &[(-1.2, 1.2)], l);
        let shifted: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[0] + 0.25]).collect();
        let rec2 = fbi_inverse(&g2, &shifted);
        for (a, b) in rec.iter().zip(&rec2) {
            assert!((a - b).abs() < 1e-9);
        }
        let zero = fbi_coefficients(&ScalarField::zero(1), &[(-1.0, 1.0)], &[(-1.0, 1.0)], l);
        assert!(fbi_inverse(&zero, &pts).iter().all(|v| *v == 0.0));
    }

    fn half_plane() -> ScalarField {
        ScalarField::new(
            vec![(-8.5, 8.5); 2],
            Arc::new(|y: &[f64]| if y[0] < 0.0 { (-(y[0] * y[0] + y[1] * y[1]) / 2.0).exp() } else { 0.0 }),
        )
        .with_interface(Arc::new(|y: &[f64]| y[0]))
    }

    #[test]
    fn edge_detection() {
        let cfg = DetectorConfig::default();
        let ls = default_lambdas();
        let f = half_plane();
        let s = decay_rate_estimate(&f, &[0.0, 0.2], &[1.0, 0.0], &ls, &cfg);
        assert_eq!(s.class, WfClass::Singular, "{s:?}");
        let r = decay_rate_estimate(&f, &[0.0, 0.2], &[0.0, 1.0], &ls, &cfg);
        assert_eq!(r.class, WfClass::Regular, "{r:?}");
        let off = decay_rate_estimate(&f, &[-0.6, 0.0], &[1.0, 0.0], &ls, &cfg);
        assert_eq!(off.class, WfClass::Regular, "{off:?}");
        let g = ScalarField::gaussian(&[0.0, 0.0], 1.0);
        let e = decay_rate_estimate(&g, &[0.3, 0.1], &[0.6, -0.8], &ls, &cfg);
        assert_eq!(e.class, WfClass::Regular, "{e:?}");
    }

    #[test]
    fn bump_outside_support_decays_like_gaussian_tail() {
        let f = ScalarField::bump(&[0.0, 0.0], 0.3);
        let cfg = DetectorConfig::default();
        let e = decay_rate_estimate(&f, &[0.8, 0.0], &[1.0, 0.0], &default_lambdas(), &cfg);
        assert_eq!(e.class, WfClass::Regular);
        assert!(e.epsilon_hat >= 0.5f64.powi(2) / 4.0, "{e:?}");
    }

    #[test]
    fn csv_has_columns() {
        let f = ScalarField::gaussian(&[0.0, 0.0], 1.0);
        let rep = wavefront_scan(&f, &[(vec![0.0, 0.0], vec![1.0, 0.0])], &[8.0, 16.0, 32.0], &DetectorConfig::default());
        let csv = rep.to_csv();
        assert!(csv.lines().nth(1).unwrap() == "u1_1,u1_2,u2_1,u2_2,epsilon_hat,residual,class");
        assert_eq!(csv.lines().count(), 3);
    }
}
