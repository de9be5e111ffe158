//! Acceptance run: ten criteria, one PASS/FAIL line each. Exits nonzero if
//! any criterion fails.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reeblab::cli::{parse_scenario, run_scenario, Command};
use reeblab::cycles::{fried_check, fried_check_class, FriedConfig, FriedReport};
use reeblab::flow::{flow_to, variational_on_grid, Framing, StepControl};
use reeblab::geometry::{global_frame, Axis, StarShapedSystem, SurfacePoint, Vec4};
use reeblab::knots::{gauss_linking_integral, linking_computation, self_linking, ClosedCurve, LinkingClass};
use reeblab::orbits::{precise_control, PeriodicOrbit};
use reeblab::sections::{area_preservation, build_page, page_area, return_map, return_time_bounds, ChartPoint};
use reeblab::spectral::{convexity_check, cz_of_iterate, default_window, richardson_check, AsymptoticSpectrum, ConvexityConfig};

type Outcome = Result<(bool, String), String>;

fn sqrt2() -> f64 {
    2f64.sqrt()
}

fn e<E: std::fmt::Display>(x: E) -> String {
    x.to_string()
}

/// Conley-Zehnder index of the `k`-th iterate of an axis circle from the
/// closed-form linearized flow: the transverse coordinate turns `1 + T0/T0'`
/// times per period in the global frame, with `T0'` the other period.
fn cz_oracle(k: u32, own: f64, other: f64) -> i64 {
    2 * k as i64 + 2 * (k as f64 * own / other).floor() as i64 + 1
}

/// Exactly two eigenvalues per winding and winding monotone in ν.
fn structure_ok(spec: &AsymptoticSpectrum) -> bool {
    let mut entries: Vec<(f64, i64)> = spec.entries.iter().map(|e| (e.nu, e.wind)).collect();
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone = entries.windows(2).all(|w| w[1].1 >= w[0].1);
    let mut counts = std::collections::BTreeMap::new();
    for (_, w) in &entries {
        *counts.entry(*w).or_insert(0usize) += 1;
    }
    let consecutive = counts.keys().zip(counts.keys().skip(1)).all(|(a, b)| b - a == 1);
    monotone && consecutive && !counts.is_empty() && counts.values().all(|&c| c == 2)
}

fn criteria_1_and_2() -> (Outcome, Outcome) {
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let systems = [(1.0, sqrt2()), (1.0, golden), (2.0, 5f64.sqrt())];
    let started = Instant::now();
    let mut matches = 0;
    let mut mismatches = Vec::new();
    let mut structured = 0;
    let mut total = 0;
    for (a, b) in systems {
        let sys = match StarShapedSystem::split(a, b) {
            Ok(s) => s,
            Err(err) => return (Err(e(&err)), Err(e(err))),
        };
        for axis in [Axis::First, Axis::Second] {
            let orbit = match PeriodicOrbit::axis_orbit(&sys, axis) {
                Ok(o) => o,
                Err(err) => return (Err(e(&err)), Err(e(err))),
            };
            let (own, other) = match axis {
                Axis::First => (a, b),
                Axis::Second => (b, a),
            };
            for k in 1..=8u32 {
                total += 1;
                match cz_of_iterate(&sys, &orbit, k, Framing::Global, 512, 0.0) {
                    Ok((spec, cz)) => {
                        let expected = cz_oracle(k, own, other);
                        if cz.cz == expected {
                            matches += 1;
                        } else {
                            mismatches.push(format!("split({a},{b:.4}) {} k={k}: {} vs {expected}", orbit.id, cz.cz));
                        }
                        if structure_ok(&spec) {
                            structured += 1;
                        }
                    }
                    Err(err) => mismatches.push(format!("split({a},{b:.4}) {} k={k}: {err}", orbit.id)),
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let c1 = Ok((
        matches == 48 && total == 48 && secs < 120.0,
        format!("{matches}/{total} indices match 2k + 2⌊k·a/b⌋ + 1 at N = 512 in {secs:.1} s (budget 120 s){}", if mismatches.is_empty() { String::new() } else { format!("; {}", mismatches.join("; ")) }),
    ));
    let c2 = Ok((
        structured == total,
        format!("{structured}/{total} spectra have exactly two eigenvalues per winding, monotone in ν"),
    ));
    (c1, c2)
}

fn criterion_3() -> Outcome {
    let cfg = ConvexityConfig::default();
    let split = convexity_check(&StarShapedSystem::split(1.0, sqrt2()).map_err(e)?, 10.0, &cfg).map_err(e)?;
    let all_ge_3 = split.rows.iter().all(|r| r.cz >= 3);
    let hopf = convexity_check(&StarShapedSystem::hopf(), 4.0, &cfg).map_err(e)?;
    Ok((
        split.verdict && all_ge_3 && !split.rows.is_empty() && hopf.degenerate_flag,
        format!(
            "split(1,√2), C = 10: verdict {} over {} rows (CZ {:?}); Hopf degenerate flag {}",
            split.verdict,
            split.rows.len(),
            split.rows.iter().map(|r| r.cz).collect::<Vec<_>>(),
            hopf.degenerate_flag
        ),
    ))
}

fn hopf_fibers(sys: &StarShapedSystem) -> Result<(PeriodicOrbit, PeriodicOrbit), String> {
    let f1 = PeriodicOrbit::axis_orbit(sys, Axis::First).map_err(e)?;
    let p = SurfacePoint::project(sys, Vec4::new(0.6, 0.0, 0.0, 0.8)).map_err(e)?;
    let mut f2 = PeriodicOrbit::verified(sys, p, PI, &precise_control()).map_err(e)?;
    f2.id = "fiber".into();
    Ok((f1, f2))
}

fn criterion_4() -> Outcome {
    let sys = StarShapedSystem::hopf();
    let (f1, f2) = hopf_fibers(&sys)?;
    let c1 = ClosedCurve::from_orbit_with_gap(&sys, &f1, 1e-3).map_err(e)?;
    let c2 = ClosedCurve::from_orbit_with_gap(&sys, &f2, 1e-3).map_err(e)?;
    let lc = linking_computation(&c1, &c2, 0x11).map_err(e)?;
    let gauss = gauss_linking_integral(&c1, &c2);
    let sl = self_linking(&sys, &f1).map_err(e)?;
    Ok((
        lc.value == 1 && sl.value == -1 && (gauss - lc.value as f64).abs() <= 1e-3,
        format!(
            "Hopf fibers link {} (second projection {}), Gauss integral {gauss:.7}; self-linking {}",
            lc.value, lc.second_projection, sl.value
        ),
    ))
}

fn criterion_5(report: &FriedReport) -> Outcome {
    let r = &report.rotation_numbers;
    let v1 = 2.0 * PI * r[0].rho;
    let v2 = 2.0 * PI * r[1].rho;
    let d1 = (v1 - (1.0 + 1.0 / sqrt2())).abs();
    let d2 = (v2 - (1.0 + sqrt2())).abs();
    Ok((
        d1 <= 1e-5 && d2 <= 1e-5 && r[0].rho > 0.0 && r[1].rho > 0.0,
        format!("2πρ(γ₁) = {v1:.9} (error {d1:.1e}), 2πρ(γ₂) = {v2:.9} (error {d2:.1e})"),
    ))
}

fn criterion_6(report: &FriedReport, secs: f64) -> Outcome {
    let stats = &report.intersection;
    let t = stats.horizon;
    let exact = 1.0 / PI + 1.0 / (PI * sqrt2());
    let worst = stats.samples.iter().map(|s| (s.estimate - exact).abs()).fold(0.0, f64::max);
    let bound = report.return_time_bound.as_ref().ok_or("no page bound for split link")?;
    Ok((
        stats.samples.len() == 32 && stats.excluded.is_empty() && worst <= 2.0 / t && stats.min > bound.bound && secs < 300.0,
        format!(
            "{} samples at T = {t}: max |estimate − (1/π + 1/(π√2))| = {worst:.2e} (≤ 2/T = {:.1e}); min {:.8} > Σ 1/sup τ − 2/T = {:.8}; {secs:.1} s (budget 300 s)",
            stats.samples.len(),
            2.0 / t,
            stats.min,
            bound.bound
        ),
    ))
}

fn criterion_7(split_report: &FriedReport) -> Outcome {
    let hopf = StarShapedSystem::hopf();
    let (f1, f2) = hopf_fibers(&hopf)?;
    let small = FriedConfig {
        samples: 8,
        horizon: 400.0,
        seed: 2,
        ..FriedConfig::default()
    };
    let hopf_report = fried_check(&hopf, std::slice::from_ref(&f1), &small).map_err(e)?;
    let sys = StarShapedSystem::split(1.0, sqrt2()).map_err(e)?;
    let g1 = PeriodicOrbit::axis_orbit(&sys, Axis::First).map_err(e)?;
    let g2 = PeriodicOrbit::axis_orbit(&sys, Axis::Second).map_err(e)?;
    let reversed = LinkingClass::with_coefficients(&sys, &[(g1, 1, 1), (g2, 1, -1)]).map_err(e)?;
    let split_rev = fried_check_class(&sys, &reversed, &FriedConfig { horizon: 500.0, ..small }).map_err(e)?;
    let hopf_rev_class = LinkingClass::with_coefficients(&hopf, &[(f1, 1, 1), (f2, 1, -1)]).map_err(e)?;
    let hopf_rev = fried_check_class(&hopf, &hopf_rev_class, &small).map_err(e)?;
    Ok((
        split_report.verdict && hopf_report.verdict && !split_rev.verdict && !hopf_rev.verdict,
        format!(
            "split {{γ₁,γ₂}}: {}; Hopf fiber: {} (ρ = {:.8}, min estimate {:.8}); with reversed γ₂: {} (min ρ {:.4}); Hopf with reversed second fiber: {}",
            split_report.verdict,
            hopf_report.verdict,
            hopf_report.rotation_numbers[0].rho,
            hopf_report.intersection.min,
            split_rev.verdict,
            split_rev.rotation_numbers.iter().map(|r| r.rho).fold(f64::INFINITY, f64::min),
            hopf_rev.verdict
        ),
    ))
}

fn criterion_8() -> Outcome {
    let sys = StarShapedSystem::split(1.0, sqrt2()).map_err(e)?;
    let page = build_page(&sys, Axis::First, 0.0).map_err(e)?;
    let tau = PI * sqrt2();
    let bounds = return_time_bounds(&page, 8, 8).map_err(e)?;
    let near = return_map(&page, ChartPoint { rho: 1e-4, phi: 0.7 }).map_err(e)?;
    let area = page_area(&page).map_err(e)?;
    let min_period = (PI * 1.0f64).min(PI * sqrt2());
    let rel = |x: f64| (x - PI).abs() / PI;
    let time_ok = (bounds.inf - tau).abs() <= 1e-6 && (bounds.sup - tau).abs() <= 1e-6 && (near.tau - tau).abs() <= 1e-6;
    let area_ok = rel(area.quadrature) <= 1e-5 && rel(area.stokes) <= 1e-5 && (min_period - PI).abs() < 1e-15;
    Ok((
        time_ok && area_ok,
        format!(
            "return time in [{:.10}, {:.10}] over {} points incl. ρ = 1e-4 (π√2 = {tau:.10}); area: quadrature {:.9}, Stokes {:.9}, minimal period {min_period:.9}",
            bounds.inf, bounds.sup, bounds.grid_points, area.quadrature, area.stokes
        ),
    ))
}

fn criterion_9() -> Outcome {
    let sys = StarShapedSystem::split(1.0, sqrt2()).map_err(e)?;
    let page = build_page(&sys, Axis::First, 0.0).map_err(e)?;
    let mut rotation_err: f64 = 0.0;
    for rho in [1e-4, 0.3, 0.8, 1.15] {
        for phi in [0.0, 1.5, 3.0, 4.5] {
            let r = return_map(&page, ChartPoint { rho, phi }).map_err(e)?;
            let d = (r.point.phi - phi - 2.0 * PI * sqrt2()).rem_euclid(2.0 * PI);
            rotation_err = rotation_err.max(d.min(2.0 * PI - d));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut area_err: f64 = 0.0;
    for _ in 0..10 {
        let r0 = rng.gen_range(0.05..0.7);
        let r1 = r0 + rng.gen_range(0.05..0.4);
        let f0 = rng.gen_range(0.0..2.0 * PI);
        let f1 = f0 + rng.gen_range(0.2..1.5);
        area_err = area_err.max(area_preservation(&page, (r0, r1), (f0, f1)).map_err(e)?.relative_difference);
    }
    let hopf = StarShapedSystem::hopf();
    let hpage = build_page(&hopf, Axis::First, 0.0).map_err(e)?;
    let mut identity_err: f64 = 0.0;
    for rho in [1e-3, 0.4, 0.9] {
        for phi in [0.0, 2.0, 4.0] {
            let p = ChartPoint { rho, phi };
            let r = return_map(&hpage, p).map_err(e)?;
            identity_err = identity_err.max((r.z - hpage.chart(p)).norm());
        }
    }
    Ok((
        rotation_err <= 1e-6 && area_err <= 1e-4 && identity_err <= 1e-7,
        format!(
            "rotation by 2π√2 within {rotation_err:.1e}; 10 rectangles preserved within {area_err:.1e} relative; Hopf return map identity within {identity_err:.1e}"
        ),
    ))
}

fn criterion_10() -> Outcome {
    // variational equation vs central differences along tangent directions
    let sys = StarShapedSystem::perturbed_split(1.0, sqrt2(), 0.3).map_err(e)?;
    let ctl = StepControl::default();
    let z0 = SurfacePoint::project(&sys, Vec4::new(0.6, 0.1, -0.4, 0.5)).map_err(e)?;
    let t_end = 10.0;
    let (_, m) = variational_on_grid(&sys, &z0, &[t_end], &ctl).map_err(e)?[0];
    let f = global_frame(&sys, &z0).map_err(e)?;
    let h = 1e-6;
    let mut fd_err: f64 = 0.0;
    for v in [sys.reeb_vector(&z0.z), f.e1, f.e2] {
        let plus = flow_to(&sys, &SurfacePoint::project(&sys, z0.z + v * h).map_err(e)?, t_end, &ctl).map_err(e)?;
        let minus = flow_to(&sys, &SurfacePoint::project(&sys, z0.z - v * h).map_err(e)?, t_end, &ctl).map_err(e)?;
        fd_err = fd_err.max(((plus.z - minus.z) / (2.0 * h) - m * v).norm());
    }
    // eigenvalues at N and 2N
    let split = StarShapedSystem::split(1.0, sqrt2()).map_err(e)?;
    let g1 = PeriodicOrbit::axis_orbit(&split, Axis::First).map_err(e)?;
    let rich = richardson_check(&split, &g1, 1, Framing::Global, 512, default_window(0.0)).map_err(e)?;
    // byte-level determinism, in process and through the binary
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let cfg_path = root.join("../../configs/fried_hopf.toml");
    let text = std::fs::read_to_string(&cfg_path).map_err(e)?;
    let scenario = parse_scenario(&text).map_err(e)?;
    let a = run_scenario(Command::Fried, &scenario, Some(5), root).map_err(e)?.json();
    let b = run_scenario(Command::Fried, &scenario, Some(5), root).map_err(e)?.json();
    let tmp = std::env::temp_dir().join(format!("reeblab-acceptance-{}", std::process::id()));
    let mut files = Vec::new();
    for run in ["first", "second"] {
        let out = tmp.join(run);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_reeblab"))
            .args(["fried", "--config"])
            .arg(&cfg_path)
            .args(["--seed", "5", "--out"])
            .arg(&out)
            .output()
            .map_err(e)?
            .status;
        if !status.success() {
            return Err(format!("binary exited with {status}"));
        }
        files.push(std::fs::read(out.join("fried.json")).map_err(e)?);
    }
    let _ = std::fs::remove_dir_all(&tmp);
    let deterministic = a == b && files[0] == files[1] && files[0] == a.as_bytes();
    Ok((
        fd_err <= 1e-5 && rich.max_difference <= 1e-6 && deterministic,
        format!(
            "variational vs finite differences {fd_err:.1e}; Richardson N = 512 vs 1024 over {} eigenvalues {:.1e}; byte-identical outputs {deterministic}",
            rich.compared, rich.max_difference
        ),
    ))
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let (c1, c2) = criteria_1_and_2();
    results.push((1, "CZ index table", c1));
    results.push((2, "spectral structure", c2));
    results.push((3, "dynamical convexity", criterion_3()));
    results.push((4, "linking and self-linking", criterion_4()));

    let started = Instant::now();
    let split_report = StarShapedSystem::split(1.0, sqrt2()).map_err(e).and_then(|sys| {
        let link = [
            PeriodicOrbit::axis_orbit(&sys, Axis::First).map_err(e)?,
            PeriodicOrbit::axis_orbit(&sys, Axis::Second).map_err(e)?,
        ];
        let cfg = FriedConfig {
            samples: 32,
            horizon: 2000.0,
            seed: 7,
            ..FriedConfig::default()
        };
        fried_check(&sys, &link, &cfg).map_err(e)
    });
    let secs = started.elapsed().as_secs_f64();
    match &split_report {
        Ok(report) => {
            results.push((5, "rotation-number identity", criterion_5(report)));
            results.push((6, "Birkhoff intersection", criterion_6(report, secs)));
            results.push((7, "Fried certification", criterion_7(report)));
        }
        Err(err) => {
            for (n, name) in [(5, "rotation-number identity"), (6, "Birkhoff intersection"), (7, "Fried certification")] {
                results.push((n, name, Err(err.clone())));
            }
        }
    }
    results.push((8, "sections", criterion_8()));
    results.push((9, "return map properties", criterion_9()));
    results.push((10, "numerical hygiene", criterion_10()));

    let mut failed = 0;
    for (n, name, outcome) in &results {
        let (pass, detail) = match outcome {
            Ok((p, d)) => (*p, d.clone()),
            Err(err) => (false, format!("error: {err}")),
        };
        if !pass {
            failed += 1;
        }
        println!("criterion {n:>2} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
