//! Scenario files: JSON with expression strings, validated before anything runs.

use super::io::GridData;
use crate::bolker::{sphere_boundary_rays, BolkerError};
use crate::expr::Expr;
use crate::fibration::{Fibration, QuadratureSpec, RayFamily};
use crate::geometry::{hamiltonian_vector_field, ChartGeometry, IntegratorOptions, ScalarField, ScalarFn, Symbol};
use crate::microlocal::DetectorConfig;
use crate::recovery::{Foliation, StripConfig};
use crate::transforms::{flat_disk_rays, linspace, minkowski_light_rays, radon_fibration, FlatMode, TransformKind};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("SchemaError: `{field}` (line {line}): {message}")]
pub struct SchemaError {
    pub field: String,
    pub line: usize,
    pub message: String,
}

impl SchemaError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self { field: field.to_string(), line: 0, message: message.into() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub geometry: GeometrySpec,
    pub transform: Option<TransformCfg>,
    pub field: Option<FieldSpec>,
    #[serde(default)]
    pub task: TaskSpec,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometrySpec {
    /// Euclidean plane, chart [-half, half]^2.
    Plane { half: f64 },
    /// Flat unit-speed disk |x| <= radius.
    Disk { radius: f64 },
    /// Round sphere in a stereographic chart, geodesics from the circle |x| = radius.
    Sphere { radius: f64 },
    /// Minkowski cylinder |x_vec| <= radius, |t| <= t_half.
    Minkowski { radius: f64, t_half: f64 },
    /// Symbol p(x, xi) over x1..xn, xi1..xin on a box, optional boundary function (< 0 inside).
    Custom {
        bbox: Vec<[f64; 2]>,
        symbol: String,
        boundary: Option<String>,
        homogeneous: Option<f64>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub count: usize,
    #[serde(default)]
    pub centred: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSpec {
    /// Start point and covector as expressions in z1..zN.
    pub x: Vec<String>,
    pub xi: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformCfg {
    pub kind: TransformKind,
    /// Weight kappa over z1..zN, x1..xn.
    pub kappa: Option<String>,
    #[serde(default)]
    pub grid: Vec<AxisSpec>,
    pub quadrature: Option<QuadratureSpec>,
    /// Ray start states for custom geometries.
    pub start: Option<StartSpec>,
    /// Hamiltonian mode on the disk: null_bichar uses |xi|^2 - 1 unless `unit_speed`.
    #[serde(default)]
    pub unit_speed: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Expr {
        expr: String,
        support: Vec<[f64; 2]>,
        #[serde(default)]
        interfaces: Vec<String>,
    },
    Gaussian { center: Vec<f64>, sigma: f64 },
    Disk { center: Vec<f64>, radius: f64 },
    Annulus { dim: usize, r0: f64, r1: f64 },
    Bump { center: Vec<f64>, radius: f64 },
    GridFile { path: PathBuf },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub forward: Option<ForwardTask>,
    pub bolker: Option<BolkerTask>,
    pub wavefront: Option<WavefrontTask>,
    pub phase_check: Option<PhaseTask>,
    pub recover: Option<RecoverTask>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardTask {
    /// Output file name inside --out.
    pub output: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probe {
    pub x: Vec<f64>,
    pub eta: Vec<f64>,
    /// When absent every z with (z, zeta; x, eta) in C is reported.
    pub z: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BolkerTask {
    #[serde(default)]
    pub probes: Vec<Probe>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavefrontTask {
    pub bbox: Vec<[f64; 2]>,
    pub spacing: f64,
    pub directions: usize,
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub detector: DetectorConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasePoint {
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub x: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseTask {
    #[serde(default)]
    pub points: Vec<PhasePoint>,
    /// Extra seeded points (x, alpha, mu) on the Radon model.
    #[serde(default)]
    pub random: usize,
    /// Displacement of x from pi(chi(v)) along eta for the seeded points.
    #[serde(default)]
    pub delta: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FoliationSpec {
    Circles { center: [f64; 2], s_min: f64, s_max: f64 },
    SpatialRadius { s_min: f64, s_max: f64, t_half: f64 },
    Star { expr: String, center: Vec<f64>, s_min: f64, s_max: f64, reach: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverTask {
    pub foliation: FoliationSpec,
    #[serde(default)]
    pub strip: StripConfig,
    /// Level count for foliation_validate.
    #[serde(default = "default_validate_levels")]
    pub validate_levels: usize,
}

fn default_validate_levels() -> usize {
    4
}

fn first_backticked(msg: &str) -> Option<String> {
    let a = msg.find('`')?;
    let b = msg[a + 1..].find('`')?;
    Some(msg[a + 1..a + 1 + b].to_string())
}

/// Parse and validate a scenario; `base` resolves relative file paths.
pub fn parse_scenario(text: &str, base: &Path) -> Result<Scenario, SchemaError> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| SchemaError { field: "<document>".into(), line: e.line(), message: e.to_string() })?;
    let obj = value.as_object().ok_or_else(|| SchemaError::new("<document>", "top level must be an object"))?;
    if !obj.contains_key("geometry") {
        return Err(SchemaError { field: "geometry".into(), line: 1, message: "missing required field".into() });
    }
    let sc: Scenario = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        SchemaError { field: first_backticked(&msg).unwrap_or_else(|| "<document>".into()), line: e.line(), message: msg }
    })?;
    check(&sc, base)?;
    Ok(sc)
}

fn positive(field: &str, v: f64) -> Result<(), SchemaError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SchemaError::new(field, format!("must be positive, got {v}")))
    }
}

fn check(sc: &Scenario, base: &Path) -> Result<(), SchemaError> {
    let n = match &sc.geometry {
        GeometrySpec::Plane { half } => {
            positive("geometry.half", *half)?;
            2
        }
        GeometrySpec::Disk { radius } | GeometrySpec::Sphere { radius } => {
            positive("geometry.radius", *radius)?;
            2
        }
        GeometrySpec::Minkowski { radius, t_half } => {
            positive("geometry.radius", *radius)?;
            positive("geometry.t_half", *t_half)?;
            3
        }
        GeometrySpec::Custom { bbox, symbol, boundary, .. } => {
            let n = bbox.len();
            parse_expr("geometry.symbol", symbol, &symbol_vars(n))?;
            if let Some(b) = boundary {
                parse_expr("geometry.boundary", b, &x_vars(n))?;
            }
            n
        }
    };
    if let Some(t) = &sc.transform {
        for (i, a) in t.grid.iter().enumerate() {
            if a.count == 0 || !(a.max >= a.min) {
                return Err(SchemaError::new(&format!("transform.grid[{i}]"), "needs count > 0 and max >= min"));
            }
        }
        let big_n = t.grid.len();
        if let Some(k) = &t.kappa {
            let mut vars = z_vars(big_n);
            vars.extend(x_vars(n));
            parse_expr("transform.kappa", k, &vars)?;
        }
        if let Some(q) = &t.quadrature {
            positive("transform.quadrature.per_unit", q.per_unit)?;
        }
        if let Some(s) = &t.start {
            if s.x.len() != n || s.xi.len() != n {
                return Err(SchemaError::new("transform.start", format!("needs {n} x and {n} xi expressions")));
            }
            for e in s.x.iter().chain(&s.xi) {
                parse_expr("transform.start", e, &z_vars(big_n))?;
            }
        }
        if matches!(sc.geometry, GeometrySpec::Custom { .. }) && t.start.is_none() {
            return Err(SchemaError::new("transform.start", "custom geometries need ray start expressions"));
        }
    }
    if let Some(f) = &sc.field {
        match f {
            FieldSpec::Expr { expr, support, interfaces } => {
                if support.len() != n {
                    return Err(SchemaError::new("field.support", format!("needs {n} intervals")));
                }
                parse_expr("field.expr", expr, &x_vars(n))?;
                for g in interfaces {
                    parse_expr("field.interfaces", g, &x_vars(n))?;
                }
            }
            FieldSpec::Gaussian { sigma, .. } => positive("field.sigma", *sigma)?,
            FieldSpec::Disk { radius, .. } | FieldSpec::Bump { radius, .. } => positive("field.radius", *radius)?,
            FieldSpec::Annulus { r0, r1, .. } => {
                positive("field.r0", *r0)?;
                positive("field.r1 - r0", r1 - r0)?;
            }
            FieldSpec::GridFile { path } => {
                let p = base.join(path);
                if !p.exists() {
                    return Err(SchemaError::new("field.path", format!("file {} does not exist", p.display())));
                }
            }
        }
    }
    if let Some(w) = &sc.task.wavefront {
        positive("task.wavefront.spacing", w.spacing)?;
        if w.directions == 0 {
            return Err(SchemaError::new("task.wavefront.directions", "must be positive"));
        }
        positive("task.wavefront.detector.eps_sing", w.detector.eps_sing)?;
        positive("task.wavefront.detector.eps_reg", w.detector.eps_reg)?;
        positive("task.wavefront.detector.max_residual", w.detector.max_residual)?;
        positive("task.wavefront.detector.dynamic_range", w.detector.dynamic_range)?;
    }
    if let Some(r) = &sc.task.recover {
        positive("task.recover.strip.step", r.strip.step)?;
        positive("task.recover.strip.step_floor", r.strip.step_floor)?;
        positive("task.recover.strip.window", r.strip.window)?;
        if let FoliationSpec::Star { expr, .. } = &r.foliation {
            parse_expr("task.recover.foliation.expr", expr, &x_vars(n))?;
        }
    }
    Ok(())
}

fn x_vars(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

fn z_vars(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("z{i}")).collect()
}

fn symbol_vars(n: usize) -> Vec<String> {
    let mut v = x_vars(n);
    v.extend((1..=n).map(|i| format!("xi{i}")));
    v
}

fn parse_expr(field: &str, src: &str, vars: &[String]) -> Result<Expr, SchemaError> {
    let names: Vec<&str> = vars.iter().map(|s| s.as_str()).collect();
    Expr::parse(src, &names).map_err(|e| SchemaError::new(field, e.to_string()))
}

/// Everything a task needs, assembled from a validated scenario.
pub struct Built {
    pub fibration: Fibration,
    pub kind: TransformKind,
    /// Characteristic symbol for PVS and pseudoconvexity checks.
    pub symbol: Option<Symbol>,
    pub quadrature: QuadratureSpec,
    pub axes: Vec<String>,
    pub grid: Vec<Vec<f64>>,
}

fn expr_fn(e: Expr) -> ScalarFn {
    Arc::new(move |x: &[f64]| e.eval(x))
}

pub fn build(sc: &Scenario) -> Result<Built, SchemaError> {
    let t = sc.transform.as_ref().ok_or_else(|| SchemaError::new("transform", "missing required field"))?;
    let axes = t.grid.iter().map(|a| a.name.clone()).collect();
    let grid: Vec<Vec<f64>> = t.grid.iter().map(|a| linspace(a.min, a.max, a.count, a.centred)).collect();
    let mismatch = |want: &str| SchemaError::new("transform.kind", format!("this geometry supports {want}"));
    let (fibration, symbol) = match &sc.geometry {
        GeometrySpec::Plane { half } => {
            if t.kind != TransformKind::EuclideanRadon {
                return Err(mismatch("euclidean_radon"));
            }
            (radon_fibration(*half), None)
        }
        GeometrySpec::Disk { radius } => {
            let mode = match t.kind {
                TransformKind::GeodesicXray => FlatMode::Geodesic,
                TransformKind::NullBichar if t.unit_speed => FlatMode::Geodesic,
                TransformKind::NullBichar => FlatMode::Cosphere,
                _ => return Err(mismatch("geodesic_xray or null_bichar")),
            };
            let fib = Fibration::from_ray_family(flat_disk_rays(*radius, mode), &[])
                .map_err(|e| SchemaError::new("geometry", e.to_string()))?;
            (fib, Some(Symbol::cosphere(2)))
        }
        GeometrySpec::Sphere { radius } => {
            if t.kind != TransformKind::GeodesicXray {
                return Err(mismatch("geodesic_xray"));
            }
            let fib = Fibration::from_ray_family(sphere_boundary_rays(*radius), &[])
                .map_err(|e| SchemaError::new("geometry", e.to_string()))?;
            (fib, Some(Symbol::sphere_stereographic(2)))
        }
        GeometrySpec::Minkowski { radius, t_half } => {
            if t.kind != TransformKind::NullBichar {
                return Err(mismatch("null_bichar"));
            }
            let fib = Fibration::from_ray_family(minkowski_light_rays(*radius, *t_half), &[])
                .map_err(|e| SchemaError::new("geometry", e.to_string()))?;
            (fib, Some(Symbol::minkowski(3)))
        }
        GeometrySpec::Custom { bbox, symbol, boundary, homogeneous } => {
            let n = bbox.len();
            let pe = parse_expr("geometry.symbol", symbol, &symbol_vars(n))?;
            let mut p = Symbol::new(
                n,
                Arc::new(move |x: &[f64], xi: &[f64]| {
                    let mut v = x.to_vec();
                    v.extend_from_slice(xi);
                    pe.eval(&v)
                }),
            );
            if let Some(d) = homogeneous {
                p = p.homogeneous(*d);
            }
            let mut chart = ChartGeometry::new(bbox.iter().map(|b| (b[0], b[1])).collect())
                .map_err(|e| SchemaError::new("geometry.bbox", e.to_string()))?
                .with_symbol(p.clone());
            if let Some(b) = boundary {
                chart = chart.with_boundary(expr_fn(parse_expr("geometry.boundary", b, &x_vars(n))?));
            }
            let start = t.start.as_ref().ok_or_else(|| SchemaError::new("transform.start", "missing required field"))?;
            let big_n = t.grid.len();
            let exprs: Vec<Expr> = start
                .x
                .iter()
                .chain(&start.xi)
                .map(|e| parse_expr("transform.start", e, &z_vars(big_n)))
                .collect::<Result<_, _>>()?;
            let rays = RayFamily {
                field: hamiltonian_vector_field(&p),
                chart,
                param_dim: big_n,
                param: Arc::new(move |z: &[f64]| exprs.iter().map(|e| e.eval(z)).collect()),
                dparam: None,
                locate: None,
                z_box: t.grid.iter().map(|a| (a.min, a.max)).collect(),
                opts: IntegratorOptions::default(),
            };
            let fib = Fibration::from_ray_family(rays, &[]).map_err(|e| SchemaError::new("geometry", e.to_string()))?;
            (fib, Some(p))
        }
    };
    let mut fibration = fibration;
    if let Some(k) = &t.kappa {
        let big_n = t.grid.len();
        let mut vars = z_vars(big_n);
        vars.extend(x_vars(fibration.n));
        let e = parse_expr("transform.kappa", k, &vars)?;
        fibration = fibration.with_kappa(Arc::new(move |z: &[f64], x: &[f64]| {
            let mut v = z.to_vec();
            v.extend_from_slice(x);
            e.eval(&v)
        }));
    }
    Ok(Built { fibration, kind: t.kind, symbol, quadrature: t.quadrature.unwrap_or_default(), axes, grid })
}

pub fn build_field(sc: &Scenario, base: &Path) -> Result<ScalarField, SchemaError> {
    let f = sc.field.as_ref().ok_or_else(|| SchemaError::new("field", "missing required field"))?;
    Ok(match f {
        FieldSpec::Expr { expr, support, interfaces } => {
            let n = support.len();
            let mut field = ScalarField::new(
                support.iter().map(|b| (b[0], b[1])).collect(),
                expr_fn(parse_expr("field.expr", expr, &x_vars(n))?),
            );
            for g in interfaces {
                field = field.with_interface(expr_fn(parse_expr("field.interfaces", g, &x_vars(n))?));
            }
            field
        }
        FieldSpec::Gaussian { center, sigma } => ScalarField::gaussian(center, *sigma),
        FieldSpec::Disk { center, radius } => ScalarField::ball_indicator(center, *radius),
        FieldSpec::Annulus { dim, r0, r1 } => ScalarField::annulus_indicator(*dim, *r0, *r1),
        FieldSpec::Bump { center, radius } => ScalarField::bump(center, *radius),
        FieldSpec::GridFile { path } => {
            let data = GridData::read(&base.join(path)).map_err(|e| SchemaError::new("field.path", e.to_string()))?;
            let support = data.coords.iter().map(|c| (c[0], c[c.len() - 1])).collect();
            ScalarField::new(support, Arc::new(move |x: &[f64]| data.interpolate(x)))
        }
    })
}

pub fn build_foliation(spec: &FoliationSpec) -> Result<Foliation, SchemaError> {
    Ok(match spec {
        FoliationSpec::Circles { center, s_min, s_max } => Foliation::concentric_circles(*center, *s_min, *s_max),
        FoliationSpec::SpatialRadius { s_min, s_max, t_half } => Foliation::spatial_radius(*s_min, *s_max, *t_half),
        FoliationSpec::Star { expr, center, s_min, s_max, reach } => {
            let n = center.len();
            let f = expr_fn(parse_expr("task.recover.foliation.expr", expr, &x_vars(n))?);
            Foliation::star_shaped(n, f, center.clone(), *s_min, *s_max, *reach)
        }
    })
}

impl From<BolkerError> for SchemaError {
    fn from(e: BolkerError) -> Self {
        SchemaError::new("geometry", e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_geometry_names_the_field() {
        let e = parse_scenario(r#"{"transform": {"kind": "euclidean_radon"}}"#, Path::new(".")).unwrap_err();
        assert_eq!(e.field, "geometry");
    }

    #[test]
    fn bad_expression_is_reported_with_its_field() {
        let text = r#"{"geometry": {"kind": "plane", "half": 9},
            "field": {"kind": "expr", "expr": "exp(-x1^2 -", "support": [[-1, 1], [-1, 1]]}}"#;
        let e = parse_scenario(text, Path::new(".")).unwrap_err();
        assert_eq!(e.field, "field.expr");
    }

    #[test]
    fn unknown_keys_and_missing_nested_fields() {
        let e = parse_scenario(r#"{"geometry": {"kind": "disk"}}"#, Path::new(".")).unwrap_err();
        assert_eq!(e.field, "radius", "{e}");
        let e = parse_scenario(r#"{"geometry": {"kind": "disk", "radius": 1}, "sed": 3}"#, Path::new(".")).unwrap_err();
        assert_eq!(e.field, "sed", "{e}");
        assert_eq!(e.line, 1);
    }

    #[test]
    fn expression_field_evaluates() {
        let text = r#"{"geometry": {"kind": "plane", "half": 9},
            "transform": {"kind": "euclidean_radon", "grid": [{"name": "alpha", "min": 0, "max": 3, "count": 2}]},
            "field": {"kind": "expr", "expr": "if(norm(x1, x2) < 1, 1, 0)", "support": [[-1, 1], [-1, 1]], "interfaces": ["x1^2 + x2^2 - 1"]}}"#;
        let sc = parse_scenario(text, Path::new(".")).unwrap();
        let f = build_field(&sc, Path::new(".")).unwrap();
        assert_eq!(f.eval(&[0.5, 0.5]), 1.0);
        assert_eq!(f.eval(&[0.9, 0.9]), 0.0);
        assert_eq!(f.interfaces.len(), 1);
        assert!(build(&sc).is_ok());
    }
}
