//! End-to-end acceptance checks. Each test prints one `criterion NN PASS|FAIL` line with the
//! measured quantities; run with `--nocapture` to see them.

use dblfib::bolker::{
    conjugate_scan, immersion_check, immersion_check_defining, injectivity_check, pvs_membership, sphere_boundary_rays,
    sphere_norm, sphere_origin_rays, variation_field,
};
use dblfib::cli::seeded_radon_points;
use dblfib::fibration::{CanonicalPoint, Fibration, KappaFn, QuadratureSpec};
use dblfib::geometry::{ChartGeometry, ScalarField, Symbol};
use dblfib::linalg::{norm, C64};
use dblfib::microlocal::{
    critical_point_solve, decay_rate_estimate, default_lambdas, fbi_coefficients, fbi_inverse, kernel_k_lambda,
    pair_with_packet, planar_phase_grid, propagate_wavefront, radon_kernel_direct, wavefront_scan, DetectorConfig,
    WavePacketFamily, WfClass,
};
use dblfib::recovery::{layer_strip, Foliation, StripConfig};
use dblfib::transforms::{
    flat_disk_rays, forward, linspace, minkowski_light_rays, null_bichar_forward, radon_fibration, radon_gaussian,
    ray_forward, sinogram, FlatMode, TransformKind, TransformSpec,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::sync::Arc;

fn verdict(n: u32, ok: bool, detail: String) {
    println!("criterion {n:02} {}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn unit_kappa() -> KappaFn {
    Arc::new(|_z: &[f64], _x: &[f64]| 1.0)
}

fn radon_grid() -> (Vec<f64>, Vec<f64>) {
    (linspace(0.0, PI, 64, true), linspace(-4.0, 4.0, 64, false))
}

#[test]
fn criterion_01_radon_forward_accuracy() {
    let spec = TransformSpec::new(radon_fibration(9.0), TransformKind::EuclideanRadon);
    let f = ScalarField::gaussian(&[0.0, 0.0], 1.0);
    let (alphas, ss) = radon_grid();
    let sino = sinogram(&spec, &f, &["alpha", "s"], vec![alphas.clone(), ss.clone()]);
    let mut worst = 0.0f64;
    let mut spread = 0.0f64;
    for (j, &s) in ss.iter().enumerate() {
        let exact = (2.0 * PI).sqrt() * (-s * s / 2.0).exp();
        let first = sino.get(&[0, j]);
        for i in 0..alphas.len() {
            let v = sino.get(&[i, j]);
            worst = worst.max((v - exact).abs() / exact);
            spread = spread.max((v - first).abs() / exact);
        }
    }
    verdict(
        1,
        worst < 1e-6 && spread < 1e-6,
        format!("64x64 grid, max relative error {worst:.2e}, max per-angle spread {spread:.2e} (tol 1e-6)"),
    );
}

#[test]
fn criterion_02_geodesic_and_hamiltonian_reductions() {
    let f = ScalarField::gaussian(&[0.0, 0.0], 1.0);
    let (alphas, ss) = radon_grid();
    let geo = flat_disk_rays(9.0, FlatMode::Geodesic);
    let cos = flat_disk_rays(9.0, FlatMode::Cosphere);
    let chart = ChartGeometry::ball(&[0.0, 0.0], 9.0);
    let p = Symbol::cosphere(2);
    // Bicharacteristics of |xi|^2 - 1 run at speed 2.
    let two: KappaFn = Arc::new(|_z: &[f64], _x: &[f64]| 2.0);
    let q = QuadratureSpec::default();
    let (mut worst_geo, mut worst_nb) = (0.0f64, 0.0f64);
    let mut count = 0;
    for &a in alphas.iter().step_by(4) {
        for &s in ss.iter().step_by(4) {
            let exact = radon_gaussian(&[0.0, 0.0], 1.0, a, s);
            let z = [a, s];
            let g = ray_forward(&geo, &unit_kappa(), &f, &z, &q).unwrap();
            let start = (cos.param)(&z);
            let nb = null_bichar_forward(&p, &chart, &two, &f, &start, &q).unwrap();
            worst_geo = worst_geo.max((g - exact).abs() / exact);
            worst_nb = worst_nb.max((nb - exact).abs() / exact);
            count += 1;
        }
    }
    verdict(
        2,
        worst_geo < 1e-6 && worst_nb < 1e-6,
        format!("{count} lines, geodesic X-ray {worst_geo:.2e}, null bicharacteristic (kappa = 2) {worst_nb:.2e} (tol 1e-6)"),
    );
}

fn light_probe(rays: &dblfib::fibration::RayFamily, z: &[f64], t: f64, eta_of: impl Fn(&[f64]) -> Vec<f64>) -> CanonicalPoint {
    let ray = rays.variational(z).unwrap();
    let st = ray.state(t);
    let eta = eta_of(&st[3..]);
    let zeta = (-(ray.jacobi(t).transpose() * DVector::from_vec(eta.clone()))).iter().copied().collect();
    CanonicalPoint { z: z.to_vec(), zeta, x: st[..3].to_vec(), eta }
}

#[test]
fn criterion_03_bolker_equivalence_and_light_ray_dichotomy() {
    let fib = radon_fibration(3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut agree, mut within, mut all_pass, mut worst_ratio) = (0, 0, 0, 1.0f64);
    let total = 60;
    for _ in 0..total {
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let a: f64 = rng.gen_range(0.1..PI - 0.1);
        let mu: f64 = rng.gen_range(0.3..2.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let z = [a, x[0] * a.cos() + x[1] * a.sin()];
        let cp = fib.canonical_point(&z, &x, &[mu]).unwrap();
        let g = immersion_check(&fib, &cp).unwrap();
        let d = immersion_check_defining(&fib, &cp).unwrap();
        let inj = injectivity_check(&fib, &cp).unwrap();
        agree += usize::from(g.verdict == d.verdict);
        let ratio = (g.margin / d.margin).max(d.margin / g.margin);
        worst_ratio = worst_ratio.max(ratio);
        within += usize::from(ratio <= 10.0);
        all_pass += usize::from(g.pass && d.pass && inj.pass);
    }
    let rays = minkowski_light_rays(1.0, 2.0);
    let lfib = Fibration::from_ray_family(rays.clone(), &[]).unwrap();
    let (mut par_ok, mut space_ok) = (0, 0);
    let probes = 20;
    for _ in 0..probes {
        let z = [rng.gen_range(-PI..PI), rng.gen_range(-0.4..0.4), rng.gen_range(-0.8..0.8)];
        let tr = rays.trajectory(&z).unwrap();
        let t = rng.gen_range(-tr.tau_minus + 0.1..tr.tau_plus - 0.1);
        let cp = light_probe(&rays, &z, t, |xi| xi.to_vec());
        let r = immersion_check(&lfib, &cp).unwrap();
        par_ok += usize::from(!r.pass);
        let b: f64 = rng.gen_range(0.2..2.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let th_perp = [-z[0].sin(), z[0].cos()];
        let cp = light_probe(&rays, &z, t, |xi| vec![xi[0], xi[1] + b * th_perp[0], xi[2] + b * th_perp[1]]);
        let r = immersion_check(&lfib, &cp).unwrap();
        let inj = injectivity_check(&lfib, &cp).unwrap();
        space_ok += usize::from(r.pass && inj.pass);
    }
    verdict(
        3,
        agree == total && within == total && all_pass == total && par_ok == probes && space_ok == probes,
        format!(
            "Radon: {agree}/{total} verdicts agree, {within}/{total} margins within 10x (worst {worst_ratio:.2}), \
             {all_pass}/{total} pass; light rays: {par_ok}/{probes} parallel probes fail, {space_ok}/{probes} spacelike pass"
        ),
    );
}

#[test]
fn criterion_04_conjugate_points() {
    let sphere = sphere_boundary_rays(10.0);
    let (mut flagged, mut off) = (0, 0);
    for z in [[0.3, 0.1], [1.5, -0.4], [-2.0, 0.6]] {
        let pairs = conjugate_scan(&sphere, &z, 128).unwrap();
        let h = sphere.variational(&z).unwrap().traj.length() / 127.0;
        flagged += pairs.len();
        off += pairs.iter().filter(|p| ((p.t - p.s).abs() - PI).abs() >= h).count();
        assert!(!pairs.is_empty(), "no pairs on ray {z:?}");
    }
    let flat = flat_disk_rays(1.0, FlatMode::Geodesic);
    let flat_pairs: usize = [[0.5, 0.1], [2.0, -0.7], [-1.0, 0.0]]
        .iter()
        .map(|z| conjugate_scan(&flat, z, 128).unwrap().len())
        .sum();
    let origin = sphere_origin_rays((-3.2, 3.2), 10.0);
    let ts: Vec<f64> = (0..=40).map(|i| 0.07 * i as f64).collect();
    let vf = variation_field(&origin, &[0.3], &[1.0], &ts).unwrap();
    let ray = origin.variational(&[0.3]).unwrap();
    let sine_err = ts
        .iter()
        .zip(&vf.values)
        .map(|(t, j)| (sphere_norm(&ray.x(*t), j) - t.sin().abs()).abs())
        .fold(0.0, f64::max);
    verdict(
        4,
        flagged > 0 && off == 0 && flat_pairs == 0 && sine_err < 1e-5,
        format!("sphere: {flagged} pairs flagged, {off} off |t-s| = pi by a grid step; flat disk: {flat_pairs} pairs; |J| vs |sin t| {sine_err:.2e}"),
    );
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
fn criterion_05_fbi_normalization_and_inversion() {
    let mut worst = 0.0f64;
    for n in 1..=2 {
        let fam = WavePacketFamily::new(n);
        let u1: Vec<f64> = (0..n).map(|j| 0.2 - 0.3 * j as f64).collect();
        let u2: Vec<f64> = (0..n).map(|j| 0.9 - 0.5 * j as f64).collect();
        for &l in &[8.0, 64.0, 512.0] {
            let g = |y: &[f64]| fam.packet(&u1, &u2, l, y);
            let p = pair_with_packet(&g, &vec![(-5.0, 5.0); n], &[], &u1, &u2, l);
            worst = worst.max((p.value - fam.mass(l)).norm() / fam.mass(l));
        }
    }
    let l = 64.0;
    let f = bump1(0.1);
    let grid = fbi_coefficients(&f, &[(-1.2, 1.4)], &[(-1.2, 1.2)], l);
    let pts: Vec<Vec<f64>> = (0..161).map(|i| vec![-0.5 + i as f64 * 0.00625]).collect();
    let rec = fbi_inverse(&grid, &pts);
    let (mut num, mut den) = (0.0, 0.0);
    for (p, r) in pts.iter().zip(&rec) {
        num += (r - f.eval(p)).powi(2);
        den += f.eval(p).powi(2);
    }
    let rel = (num / den).sqrt();
    verdict(
        5,
        worst < 1e-10 && rel < 0.01,
        format!("self-pairing error {worst:.2e} (tol 1e-10); bump round trip at lambda = 64 relative L2 {rel:.2e} (tol 1e-2)"),
    );
}

fn half_plane() -> ScalarField {
    ScalarField::new(
        vec![(-8.5, 8.5); 2],
        Arc::new(|y: &[f64]| if y[0] < 0.0 { (-(y[0] * y[0] + y[1] * y[1]) / 2.0).exp() } else { 0.0 }),
    )
    .with_interface(Arc::new(|y: &[f64]| y[0]))
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a: f64 = rng.gen_range(0.0..2.0 * PI);
    vec![a.cos(), a.sin()]
}

#[test]
fn criterion_06_singularity_detection() {
    let cfg = DetectorConfig::default();
    let ls = default_lambdas();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let edge = half_plane();
    let smooth = ScalarField::gaussian(&[0.0, 0.0], 1.0);
    // (field, u1, u2, singular label)
    let mut cases: Vec<(&ScalarField, Vec<f64>, Vec<f64>, bool)> = Vec::new();
    for i in 0..50 {
        let sg = if i % 2 == 0 { 1.0 } else { -1.0 };
        cases.push((&edge, vec![0.0, rng.gen_range(-1.0..1.0)], vec![sg, 0.0], true));
    }
    for i in 0..25 {
        let sg = if i % 2 == 0 { 1.0 } else { -1.0 };
        cases.push((&edge, vec![0.0, rng.gen_range(-1.0..1.0)], vec![0.0, sg], false));
    }
    for _ in 0..25 {
        let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let u1 = vec![side * rng.gen_range(0.5..1.0), rng.gen_range(-1.0..1.0)];
        cases.push((&edge, u1, random_unit(&mut rng), false));
    }
    for _ in 0..100 {
        let u1 = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        cases.push((&smooth, u1, random_unit(&mut rng), false));
    }
    let (mut correct, mut confident_errors, mut confident) = (0, 0, 0);
    for (f, u1, u2, label) in &cases {
        let e = decay_rate_estimate(f, u1, u2, &ls, &cfg);
        let want = if *label { WfClass::Singular } else { WfClass::Regular };
        correct += usize::from(e.class == want);
        if e.residual < 0.1 {
            confident += 1;
            if e.class != want && e.class != WfClass::Inconclusive {
                confident_errors += 1;
            }
        }
    }
    let acc = correct as f64 / cases.len() as f64;

    let r = 0.6;
    let disk = ScalarField::ball_indicator(&[0.0, 0.0], r);
    let spacing = 0.2;
    let dirs = 16;
    let rep = wavefront_scan(&disk, &planar_phase_grid(&[(-1.0, 1.0), (-1.0, 1.0)], spacing, dirs), &ls, &cfg);
    let step = 2.0 * PI / dirs as f64;
    let mut stray = 0;
    let mut hits = 0;
    for n in rep.singular() {
        hits += 1;
        let rho = norm(&n.u1);
        let normal_angle = if rho > 0.0 { (n.u2[0] * n.u1[0] + n.u2[1] * n.u1[1]).abs() / rho } else { 0.0 };
        let angle = normal_angle.clamp(-1.0, 1.0).acos();
        if (rho - r).abs() > spacing + 1e-9 || angle > step + 1e-9 {
            stray += 1;
        }
    }
    let on_grid = [[r, 0.0], [-r, 0.0], [0.0, r], [0.0, -r]];
    let covered = on_grid
        .iter()
        .filter(|p| {
            let outward = [p[0] / r, p[1] / r];
            [1.0, -1.0].iter().all(|sg| {
                rep.singular().any(|n| {
                    norm(&[n.u1[0] - p[0], n.u1[1] - p[1]]) < 1e-9
                        && norm(&[n.u2[0] - sg * outward[0], n.u2[1] - sg * outward[1]]) < 1e-9
                })
            })
        })
        .count();
    verdict(
        6,
        acc >= 0.9 && confident_errors == 0 && stray == 0 && hits > 0 && covered == on_grid.len(),
        format!(
            "benchmark accuracy {:.1}% over {} points, {confident_errors} errors among {confident} fits with residual < 0.1; \
             disk: {hits} singular nodes, {stray} off the circle conormals, {covered}/4 on-grid boundary points found with both normals",
            100.0 * acc,
            cases.len()
        ),
    );
}

#[test]
fn criterion_07_wavefront_propagation_through_radon() {
    let r = 0.6;
    let fib = radon_fibration(2.0);
    let spec = TransformSpec::new(fib.clone(), TransformKind::EuclideanRadon);
    let disk = ScalarField::ball_indicator(&[0.0, 0.0], r);
    let cfg = DetectorConfig::default();
    let ls = default_lambdas();
    let cell = 0.1;
    let s_nodes = linspace(-1.0, 1.0, 21, false);
    let (mut matched, mut stray, mut missed, mut predicted) = (0, 0, 0, 0);
    for &a in &[0.3, 1.2, 2.4] {
        let th = [f64::cos(a), f64::sin(a)];
        // Conormals of the circle along +-theta at both points r theta and -r theta.
        let sources: Vec<(Vec<f64>, Vec<f64>)> = [1.0, -1.0]
            .iter()
            .flat_map(|&p| [1.0, -1.0].map(|sg| (vec![p * r * th[0], p * r * th[1]], vec![sg * th[0], sg * th[1]])))
            .collect();
        let pred: Vec<f64> = propagate_wavefront(&fib, &sources)
            .unwrap()
            .into_iter()
            .filter(|c| (c.z[0] - a).abs() < 1e-6)
            .map(|c| c.z[1])
            .collect();
        predicted += pred.len();
        let spec = spec.clone();
        let disk = disk.clone();
        let slice = ScalarField::new(
            vec![(-1.5, 1.5)],
            Arc::new(move |s: &[f64]| forward(&spec, &disk, &[a, s[0]]).unwrap()),
        );
        let grid: Vec<(Vec<f64>, Vec<f64>)> =
            s_nodes.iter().flat_map(|&s| [1.0, -1.0].map(|d| (vec![s], vec![d]))).collect();
        let rep = wavefront_scan(&slice, &grid, &ls, &cfg);
        let found: Vec<f64> = rep.singular().map(|n| n.u1[0]).collect();
        for s in &found {
            if pred.iter().any(|p| (p - s).abs() <= cell + 1e-9) {
                matched += 1;
            } else {
                stray += 1;
            }
        }
        missed += pred.iter().filter(|p| !found.iter().any(|s| (*p - s).abs() <= cell + 1e-9)).count();
    }
    verdict(
        7,
        predicted > 0 && matched > 0 && stray == 0 && missed == 0,
        format!("3 sinogram slices: {predicted} predicted (alpha, +-r) points, {matched} detected nodes matched, {stray} stray, {missed} predictions missed"),
    );
}

#[test]
fn criterion_08_phase_pipeline() {
    let fib = radon_fibration(3.0);
    let seed = 8;
    let base = seeded_radon_points(20, 0.0, seed);
    let mut bad = Vec::new();
    let (mut w_inc, mut w_r1, mut w_r2, mut w_im, mut min_det) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, f64::INFINITY);
    for (i, (x, v1, v2)) in base.iter().enumerate() {
        match critical_point_solve(&fib, x, v1, v2) {
            Ok(d) => {
                let im = d.zeta_c.iter().map(|c| c[1].abs()).fold(0.0, f64::max);
                let det = (d.hessian_det[0].powi(2) + d.hessian_det[1].powi(2)).sqrt();
                w_inc = w_inc.max(d.incidence_residual);
                w_r1 = w_r1.max(d.residual_1);
                w_r2 = w_r2.max(d.residual_2);
                w_im = w_im.max(im);
                min_det = min_det.min(det);
            }
            Err(e) => bad.push(format!("{i}: {e}")),
        }
    }
    let deltas = [0.025, 0.05, 0.1];
    let mut cs = vec![Vec::new(); 20];
    for &dl in &deltas {
        for (i, (x, v1, v2)) in seeded_radon_points(20, dl, seed).iter().enumerate() {
            match critical_point_solve(&fib, x, v1, v2) {
                Ok(d) => cs[i].push(d.coercivity.unwrap_or(0.0)),
                Err(e) => bad.push(format!("{i} delta {dl}: {e}")),
            }
        }
    }
    let mut worst_spread = 1.0f64;
    let mut min_c = f64::INFINITY;
    for c in &cs {
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.iter().copied().fold(0.0, f64::max);
        min_c = min_c.min(lo);
        worst_spread = worst_spread.max(hi / lo);
    }
    let ok = bad.is_empty()
        && w_im < 1e-12
        && w_inc < 1e-9
        && w_r1 < 1e-9
        && w_r2 < 1e-6
        && min_det > 1e-6
        && min_c > 0.0
        && worst_spread <= 1.3;
    verdict(
        8,
        ok,
        format!(
            "20 points: max |Im zeta_c| {w_im:.1e}, incidence {w_inc:.1e}, |psi + v1.v2| {w_r1:.1e}, |d_x psi - eta| {w_r2:.1e}, \
             min |det Hess| {min_det:.2e}; 60 displaced: min c {min_c:.3}, worst max/min over delta {worst_spread:.3}; failures {bad:?}"
        ),
    );
}

#[test]
fn criterion_09_kernel_cross_validation() {
    let fib = radon_fibration(3.0);
    let cases = [
        ([0.1, -0.2], [0.7, 0.15 * 0.7f64.cos() - 0.1 * 0.7f64.sin()], 1.0),
        ([-0.25, 0.3], [2.1, -0.3 * 2.1f64.cos() + 0.25 * 2.1f64.sin()], -0.8),
    ];
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for (x, v1, mu) in cases {
        // v2 = (-b_alpha mu, mu) for the line through a point near x.
        let foot = [x[0] + 0.05, x[1] + 0.1];
        let th = [v1[0].cos(), v1[0].sin()];
        let v1 = [v1[0], foot[0] * th[0] + foot[1] * th[1]];
        let b_alpha = -foot[0] * th[1] + foot[1] * th[0];
        let v2 = [-b_alpha * mu, mu];
        for &l in &[8.0, 16.0, 32.0] {
            let k = kernel_k_lambda(&fib, &x, &v1, &v2, l).unwrap();
            let d: C64 = radon_kernel_direct(&x, &v1, &v2, l);
            let rel = (k - d).norm() / k.norm();
            worst = worst.max(rel);
            lines.push(format!("lambda {l}: {rel:.1e}"));
        }
    }
    verdict(9, worst < 1e-4, format!("max relative deviation {worst:.2e} (tol 1e-4); {}", lines.join(", ")));
}

fn disk_data(f: ScalarField) -> impl Fn(&[f64]) -> f64 + Sync {
    let rays = flat_disk_rays(1.0, FlatMode::Cosphere);
    let kappa = unit_kappa();
    move |z: &[f64]| {
        if z[1].abs() >= 1.0 {
            return 0.0;
        }
        ray_forward(&rays, &kappa, &f, z, &QuadratureSpec::default()).unwrap_or(0.0)
    }
}

#[test]
fn criterion_10_layer_stripping() {
    let fib = Fibration::from_ray_family(flat_disk_rays(1.0, FlatMode::Cosphere), &[]).unwrap();
    let fol = Foliation::concentric_circles([0.0, 0.0], 0.05, 1.0);
    let p = Symbol::cosphere(2);
    let cfg = StripConfig { points_per_level: 16, ..Default::default() };
    // (name, field, outermost level the field reaches)
    let suite: Vec<(&str, ScalarField, f64)> = vec![
        ("annulus 0.4-0.6", ScalarField::annulus_indicator(2, 0.4, 0.6), 0.6),
        ("zero", ScalarField::zero(2), 0.0),
        ("central bump 0.3", ScalarField::bump(&[0.0, 0.0], 0.3), 0.3),
        ("off-centre disk", ScalarField::ball_indicator(&[0.2, 0.1], 0.25), 0.05f64.sqrt() + 0.25),
    ];
    let mut false_cert = 0;
    let mut lines = Vec::new();
    let mut annulus_ok = false;
    for (name, f, reach) in suite {
        let data = disk_data(f);
        let rep = layer_strip(&fib, &fol, &p, &data, &cfg).unwrap();
        let lo = rep.certified_interval.map(|c| c[0]).unwrap_or(fol.s_max);
        if lo < reach - 1e-12 {
            false_cert += 1;
        }
        if name.starts_with("annulus") {
            annulus_ok = lo > 0.6 && lo <= 0.6 + cfg.step + 1e-9;
        }
        lines.push(format!("{name}: certified down to {lo:.4} (support reaches {reach:.4})"));
    }
    verdict(
        10,
        annulus_ok && false_cert == 0,
        format!("{false_cert} false certifications; {}", lines.join("; ")),
    );
}

#[test]
fn criterion_11_pvs_dichotomy() {
    let m = Symbol::minkowski(3);
    let x = [0.0, 0.3, 0.1];
    let rot: f64 = 0.4;
    let n = 64;
    let mut correct = 0;
    let mut spacelike = 0;
    for k in 0..n {
        let phi = 2.0 * PI * (k as f64 + 0.5) / n as f64;
        let eta = [phi.sin(), phi.cos() * rot.cos(), phi.cos() * rot.sin()];
        let is_space = -eta[0] * eta[0] + eta[1] * eta[1] + eta[2] * eta[2] > 0.0;
        spacelike += usize::from(is_space);
        let r = pvs_membership(&m, &x, &eta, k as u64).unwrap();
        correct += usize::from(r.member == is_space);
    }
    verdict(11, correct == n, format!("{correct}/{n} covectors classified ({spacelike} spacelike)"));
}
