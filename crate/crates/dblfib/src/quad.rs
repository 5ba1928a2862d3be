//! One-dimensional quadrature rules and interface-aware line splitting.

use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Panel order of the composite Gauss-Legendre rule.
pub const PANEL_ORDER: usize = 16;

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static GL: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    GL.get_or_init(|| gauss_legendre(PANEL_ORDER))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    #[default]
    GaussLegendre,
    Midpoint,
}

/// Nodes and weights on [a, b] with about `per_unit` nodes per unit length
/// (at least `min_nodes`).
pub fn nodes(a: f64, b: f64, per_unit: f64, min_nodes: usize, rule: Rule) -> Vec<(f64, f64)> {
    let len = b - a;
    if len <= 0.0 {
        return Vec::new();
    }
    let want = ((len * per_unit).ceil() as usize).max(min_nodes).max(1);
    match rule {
        Rule::Midpoint => {
            let h = len / want as f64;
            (0..want).map(|i| (a + (i as f64 + 0.5) * h, h)).collect()
        }
        Rule::GaussLegendre => {
            let panels = want.div_ceil(PANEL_ORDER);
            let (gx, gw) = gl16();
            let h = len / panels as f64;
            let mut out = Vec::with_capacity(panels * PANEL_ORDER);
            for p in 0..panels {
                let lo = a + p as f64 * h;
                for (x, w) in gx.iter().zip(gw) {
                    out.push((lo + 0.5 * h * (x + 1.0), 0.5 * h * w));
                }
            }
            out
        }
    }
}

/// Locate sign changes of `g` on [a, b] by sampling `samples` points and bisection.
pub fn sign_changes(g: &dyn Fn(f64) -> f64, a: f64, b: f64, samples: usize) -> Vec<f64> {
    let mut roots = Vec::new();
    let n = samples.max(2);
    let h = (b - a) / n as f64;
    let mut t0 = a;
    let mut g0 = g(a);
    for i in 1..=n {
        let t1 = if i == n { b } else { a + i as f64 * h };
        let g1 = g(t1);
        if g0 == 0.0 && i > 1 {
            roots.push(t0);
        } else if g0 * g1 < 0.0 {
            roots.push(bisect(g, t0, t1, g0));
        }
        t0 = t1;
        g0 = g1;
    }
    roots
}

pub fn bisect(g: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, glo: f64) -> f64 {
    let slo = glo.signum();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if gm.signum() == slo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Bracketed root refinement (Illinois variant of regula falsi).
pub fn illinois(g: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, mut ga: f64, mut gb: f64, tol: f64) -> f64 {
    let mut side = 0;
    for _ in 0..200 {
        let c = (a * gb - b * ga) / (gb - ga);
        let c = if c.is_finite() && c > a.min(b) && c < a.max(b) { c } else { 0.5 * (a + b) };
        let gc = g(c);
        if gc == 0.0 || (b - a).abs() < tol {
            return c;
        }
        if gc.signum() == gb.signum() {
            b = c;
            gb = gc;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            ga = gc;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        }
        if gc.abs() < 1e-15 {
            return c;
        }
    }
    0.5 * (a + b)
}

/// Nodes on [a, b] split at the given breakpoints so each piece is smooth.
pub fn split_nodes(
    a: f64,
    b: f64,
    breaks: &[f64],
    per_unit: f64,
    min_nodes: usize,
    rule: Rule,
) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&t| t > a && t < b).collect();
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut pts = vec![a];
    pts.extend(cuts);
    pts.push(b);
    let mut out = Vec::new();
    for w in pts.windows(2) {
        if w[1] - w[0] > 1e-15 {
            out.extend(nodes(w[0], w[1], per_unit, min_nodes, rule));
        }
    }
    out
}
