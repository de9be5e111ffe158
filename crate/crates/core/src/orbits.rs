//! Periodic Reeb orbits: multiple-shooting search, primitive periods,
//! transverse monodromy and nondegeneracy.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ReebError, Result};
use crate::flow::{
    flow_to, integrate, integrate_on_grid, transverse_linearized, variational_on_grid, Framing,
    Mat2, StepControl,
};
use crate::geometry::{Axis, StarShapedSystem, SurfacePoint, Vec4};

/// A closed Reeb orbit `P = (x, T)` with `T = k·T0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub id: String,
    /// Set when the orbit is an axis circle of a split system.
    pub axis: Option<Axis>,
    pub marked_point: SurfacePoint,
    /// Primitive period.
    pub t0: f64,
    /// Covering multiplicity.
    pub k: u32,
    /// `Φ(k·T0)` in the global frame.
    pub monodromy: Mat2,
    /// `|φ^{T0}(x₀) − x₀|`.
    pub closure_error: f64,
}

impl PeriodicOrbit {
    pub fn period(&self) -> f64 {
        self.k as f64 * self.t0
    }

    /// The axis circle of a split system, marked at phase zero.
    pub fn axis_orbit(sys: &StarShapedSystem, axis: Axis) -> Result<Self> {
        let (a, b) = sys.split_params().ok_or(ReebError::NotSplitSystem)?;
        let z = SurfacePoint::new(sys, axis.point(a, b, 0.0))?;
        let mut orbit = Self::verified(sys, z, axis.period(a, b), &precise_control())?;
        orbit.id = axis.name().to_string();
        orbit.axis = Some(axis);
        Ok(orbit)
    }

    /// Wraps a candidate primitive orbit after checking closure.
    pub fn verified(
        sys: &StarShapedSystem,
        marked_point: SurfacePoint,
        t0: f64,
        ctl: &StepControl,
    ) -> Result<Self> {
        if !(t0 > 0.0) {
            return Err(ReebError::InvalidInput(format!("period must be positive, got {t0}")));
        }
        let end = flow_to(sys, &marked_point, t0, ctl)?;
        let closure_error = (end.z - marked_point.z).norm();
        let path = transverse_linearized(sys, &marked_point, t0, Framing::Global, 1, ctl)?;
        Ok(Self {
            id: String::new(),
            axis: None,
            marked_point,
            t0,
            k: 1,
            monodromy: *path.end(),
            closure_error,
        })
    }

    /// The `k`-fold cover, with its monodromy recomputed by integration.
    pub fn iterate(&self, sys: &StarShapedSystem, k: u32) -> Result<Self> {
        if k == 0 {
            return Err(ReebError::InvalidInput("covering multiplicity must be positive".into()));
        }
        let path = transverse_linearized(
            sys,
            &self.marked_point,
            k as f64 * self.t0,
            Framing::Global,
            1,
            &precise_control(),
        )?;
        Ok(Self {
            k,
            monodromy: *path.end(),
            ..self.clone()
        })
    }

    /// Primitive representative.
    pub fn primitive(&self, sys: &StarShapedSystem) -> Result<Self> {
        if self.k == 1 {
            Ok(self.clone())
        } else {
            self.iterate(sys, 1)
        }
    }

    /// `n` points `φ^{T0·i/n}(x₀)`, `i = 0..n` (closed: the last equals the first
    /// up to closure error).
    pub fn trace(&self, sys: &StarShapedSystem, n: usize) -> Result<Vec<Vec4>> {
        let grid: Vec<f64> = (0..=n).map(|i| self.t0 * i as f64 / n as f64).collect();
        Ok(integrate_on_grid(sys, &self.marked_point, &grid, &precise_control())?
            .into_iter()
            .map(|p| p.z)
            .collect())
    }
}

/// Step control used for orbit closure and monodromy.
pub fn precise_control() -> StepControl {
    StepControl {
        tol: 1e-12,
        ..StepControl::default()
    }
}

/// Parameters of [`find_periodic_orbits`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbitSearchConfig {
    /// Number of intervals in the angle `ψ` with `|z₀| ∝ cos ψ`, `|z₁| ∝ sin ψ`.
    pub n_psi: usize,
    /// Number of relative phases `arg z₁ − arg z₀`.
    pub n_phase: usize,
    /// Period guesses kept per seed.
    pub max_guesses: usize,
    /// Relative return distance below which a local minimum becomes a guess.
    pub scan_threshold: f64,
    pub dedup_tol: f64,
    pub orbit_tol: f64,
    /// Random seeds used by the degenerate-family probe.
    pub probe_samples: usize,
    pub seed: u64,
    pub newton_max_iter: usize,
    /// Target length of one shooting segment.
    pub segment_time: f64,
}

impl Default for OrbitSearchConfig {
    fn default() -> Self {
        Self {
            n_psi: 6,
            n_phase: 4,
            max_guesses: 4,
            scan_threshold: 0.3,
            dedup_tol: 1e-6,
            orbit_tol: 1e-9,
            probe_samples: 20,
            seed: 0,
            newton_max_iter: 40,
            segment_time: 2.0,
        }
    }
}

/// A seed whose Newton iteration did not produce an orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed_index: usize,
    pub period_guess: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSearch {
    pub action_cap: f64,
    /// Primitive orbits sorted by `(T0, marked point)`.
    pub orbits: Vec<PeriodicOrbit>,
    /// Set when almost every probed point lies on a periodic orbit with
    /// identity-like monodromy.
    pub degenerate_family: bool,
    pub failures: Vec<SeedFailure>,
    pub seeds_tried: usize,
    /// The search is best-effort except where closed forms are known.
    pub note: String,
}

fn seed_grid(sys: &StarShapedSystem, cfg: &OrbitSearchConfig) -> Vec<SurfacePoint> {
    let mut seeds = Vec::new();
    for i in 0..=cfg.n_psi {
        let psi = 0.5 * PI * i as f64 / cfg.n_psi.max(1) as f64;
        let phases = if i == 0 || i == cfg.n_psi { 1 } else { cfg.n_phase.max(1) };
        for j in 0..phases {
            let dphi = 2.0 * PI * j as f64 / phases as f64;
            let z0 = Complex64::new(psi.cos(), 0.0);
            let z1 = Complex64::from_polar(psi.sin(), dphi);
            let z = Vec4::new(z0.re, z0.im, z1.re, z1.im);
            // cos(π/2) is not exactly zero
            let z = z.map(|c| if c.abs() < 1e-15 { 0.0 } else { c });
            if let Ok(p) = SurfacePoint::project(sys, z) {
                seeds.push(p);
            }
        }
    }
    seeds
}

/// Times in `(0, horizon]` where the return distance has a local minimum
/// below the threshold, after having first risen above it. Sorted by time.
fn period_guesses(
    sys: &StarShapedSystem,
    seed: &SurfacePoint,
    horizon: f64,
    cfg: &OrbitSearchConfig,
) -> Result<Vec<f64>> {
    let traj = integrate(sys, seed, horizon, &StepControl::default())?;
    let dt = 0.01;
    let n = (horizon / dt).ceil() as usize;
    let threshold = cfg.scan_threshold * seed.z.norm();
    let d: Vec<f64> = (0..=n)
        .map(|i| (traj.interpolate(horizon * i as f64 / n as f64) - seed.z).norm())
        .collect();
    let mut left = false;
    let mut out = Vec::new();
    for i in 1..=n {
        if d[i] > threshold {
            left = true;
            continue;
        }
        let next = if i < n { d[i + 1] } else { f64::INFINITY };
        if left && d[i] <= d[i - 1] && d[i] <= next {
            out.push(horizon * i as f64 / n as f64);
            left = false;
        }
    }
    let mut by_distance: Vec<(f64, f64)> = out
        .iter()
        .map(|t| (*t, d[(t / horizon * n as f64).round() as usize]))
        .collect();
    by_distance.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.total_cmp(&y.0)));
    by_distance.truncate(cfg.max_guesses);
    let mut times: Vec<f64> = by_distance.into_iter().map(|x| x.0).collect();
    times.sort_by(f64::total_cmp);
    Ok(times)
}

/// Multiple-shooting Gauss-Newton for a closed orbit through (near) `seed`
/// with period near `t_guess`. Returns the converged point and period.
pub fn shoot(
    sys: &StarShapedSystem,
    seed: &SurfacePoint,
    t_guess: f64,
    cfg: &OrbitSearchConfig,
) -> Result<(SurfacePoint, f64)> {
    let ctl = precise_control();
    let m = ((t_guess / cfg.segment_time).ceil() as usize).max(1);
    let t_min = 1e-3;
    let t_max = 10.0 * t_guess.max(1.0);
    let grid: Vec<f64> = (0..m).map(|i| t_guess * i as f64 / m as f64).collect();
    let mut pts: Vec<Vec4> = integrate_on_grid(sys, seed, &grid, &ctl)?
        .into_iter()
        .map(|p| p.z)
        .collect();
    let mut period = t_guess;
    let x_seed = sys.reeb_vector(&seed.z);
    let n_unknown = 4 * m + 1;
    let n_rows = 5 * m + 1;

    let residual = |pts: &[Vec4], period: f64| -> Result<DVector<f64>> {
        let tau = period / m as f64;
        let mut r = DVector::zeros(n_rows);
        for i in 0..m {
            let end = flow_to(sys, &SurfacePoint { z: pts[i], residual: 0.0 }, tau, &ctl)?;
            let d = end.z - pts[(i + 1) % m];
            r.rows_mut(4 * i, 4).copy_from(&d);
            r[4 * m + 1 + i] = sys.h(&pts[i]) - 1.0;
        }
        r[4 * m] = x_seed.dot(&(pts[0] - seed.z));
        Ok(r)
    };

    let mut r = residual(&pts, period)?;
    for _ in 0..cfg.newton_max_iter {
        if r.amax() < 1e-11 {
            return Ok((SurfacePoint::project(sys, pts[0])?, period));
        }
        let tau = period / m as f64;
        let mut jac = DMatrix::zeros(n_rows, n_unknown);
        for i in 0..m {
            let sol = variational_on_grid(
                sys,
                &SurfacePoint { z: pts[i], residual: 0.0 },
                &[tau],
                &ctl,
            )?;
            let (end, dphi) = sol[0];
            jac.view_mut((4 * i, 4 * i), (4, 4)).copy_from(&dphi);
            let next = (i + 1) % m;
            for c in 0..4 {
                jac[(4 * i + c, 4 * next + c)] -= 1.0;
            }
            let x_end = sys.reeb_vector(&end) / m as f64;
            jac.view_mut((4 * i, 4 * m), (4, 1)).copy_from(&x_end);
            let g = sys.grad(&pts[i]);
            for c in 0..4 {
                jac[(4 * m + 1 + i, 4 * i + c)] = g[c];
            }
        }
        for c in 0..4 {
            jac[(4 * m, c)] = x_seed[c];
        }
        let svd = jac.svd(true, true);
        let cutoff = 1e-10 * svd.singular_values.max();
        let step = svd
            .solve(&(-&r), cutoff)
            .map_err(|e| ReebError::NewtonDivergence(e.to_string()))?;

        let r_norm = r.norm();
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..10 {
            let trial_period = period + lambda * step[4 * m];
            if trial_period > t_min && trial_period < t_max {
                let trial: Vec<Vec4> = (0..m)
                    .map(|i| {
                        let z = pts[i] + step.rows(4 * i, 4) * lambda;
                        sys.radial_project(&z)
                    })
                    .collect();
                let r_trial = residual(&trial, trial_period)?;
                if r_trial.norm() < r_norm {
                    pts = trial;
                    period = trial_period;
                    r = r_trial;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            if r.amax() < 1e-9 {
                return Ok((SurfacePoint::project(sys, pts[0])?, period));
            }
            return Err(ReebError::NewtonDivergence(format!(
                "no descent step (residual {:.3e}, period {period:.6})",
                r.amax()
            )));
        }
    }
    if r.amax() < 1e-9 {
        return Ok((SurfacePoint::project(sys, pts[0])?, period));
    }
    Err(ReebError::NewtonDivergence(format!(
        "no convergence after {} iterations (residual {:.3e})",
        cfg.newton_max_iter,
        r.amax()
    )))
}

/// Smallest `T/j` that still closes up; refines it by shooting.
fn primitive_period(
    sys: &StarShapedSystem,
    z: &SurfacePoint,
    period: f64,
    cfg: &OrbitSearchConfig,
) -> Result<(SurfacePoint, f64)> {
    let ctl = precise_control();
    let j_max = ((period / 0.05).floor() as usize).clamp(1, 64);
    let scale = z.z.norm();
    for j in (2..=j_max).rev() {
        let end = flow_to(sys, z, period / j as f64, &ctl)?;
        if (end.z - z.z).norm() < 1e-6 * scale {
            return shoot(sys, z, period / j as f64, cfg);
        }
    }
    Ok((*z, period))
}

fn identity_like(m: &Mat2) -> bool {
    (m - Mat2::identity()).amax() < 1e-6
}

/// Distance from `p` to the closed orbit through `q` of period `t0`.
pub fn distance_to_orbit(sys: &StarShapedSystem, p: &Vec4, q: &SurfacePoint, t0: f64) -> Result<f64> {
    let n = 64;
    let ctl = precise_control();
    let grid: Vec<f64> = (0..n).map(|i| t0 * i as f64 / n as f64).collect();
    let pts = integrate_on_grid(sys, q, &grid, &ctl)?;
    let (i_best, _) = pts
        .iter()
        .enumerate()
        .map(|(i, s)| (i, (s.z - p).norm()))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("nonempty trace");
    // Newton on t ↦ ⟨φ^t(q) − p, X⟩ from the nearest sample.
    let mut t = grid[i_best];
    let mut best = (pts[i_best].z - p).norm();
    for _ in 0..20 {
        let s = flow_to(sys, q, t.rem_euclid(t0), &ctl)?;
        let x = sys.reeb_vector(&s.z);
        let d = s.z - p;
        best = best.min(d.norm());
        let f = d.dot(&x);
        let df = x.dot(&x) + d.dot(&(sys.reeb_jacobian(&s.z) * x));
        if df <= 0.0 {
            break;
        }
        let dt = f / df;
        t -= dt.clamp(-t0 / n as f64, t0 / n as f64);
        if dt.abs() < 1e-14 {
            break;
        }
    }
    Ok(best)
}

fn label_axis(sys: &StarShapedSystem, orbit: &mut PeriodicOrbit) {
    if let Some((a, b)) = sys.split_params() {
        for axis in [Axis::First, Axis::Second] {
            let c = axis.vanishing_coordinate();
            let off = orbit.marked_point.z[2 * c].hypot(orbit.marked_point.z[2 * c + 1]);
            if off < 1e-6 && (orbit.t0 - axis.period(a, b)).abs() < 1e-6 {
                orbit.axis = Some(axis);
            }
        }
    }
}

fn candidate(
    sys: &StarShapedSystem,
    seed: &SurfacePoint,
    guess: f64,
    cfg: &OrbitSearchConfig,
) -> Result<PeriodicOrbit> {
    let (z, period) = shoot(sys, seed, guess, cfg)?;
    let (z, t0) = primitive_period(sys, &z, period, cfg)?;
    let orbit = PeriodicOrbit::verified(sys, z, t0, &precise_control())?;
    if orbit.closure_error > cfg.orbit_tol {
        return Err(ReebError::NewtonDivergence(format!(
            "closure error {:.3e} above tolerance",
            orbit.closure_error
        )));
    }
    Ok(orbit)
}

/// Searches for primitive periodic orbits with `T0 ≤ action_cap`.
pub fn find_periodic_orbits(
    sys: &StarShapedSystem,
    action_cap: f64,
    cfg: &OrbitSearchConfig,
) -> Result<OrbitSearch> {
    if !(action_cap > 0.0) {
        return Err(ReebError::InvalidInput(format!(
            "action cap must be positive, got {action_cap}"
        )));
    }
    let seeds = seed_grid(sys, cfg);
    let horizon = action_cap * 1.05;
    let outcomes: Vec<Vec<(f64, Result<PeriodicOrbit>)>> = seeds
        .par_iter()
        .map(|seed| match period_guesses(sys, seed, horizon, cfg) {
            Ok(guesses) => guesses
                .into_iter()
                .map(|g| (g, candidate(sys, seed, g, cfg)))
                .collect(),
            Err(e) => vec![(0.0, Err(e))],
        })
        .collect();

    let mut orbits: Vec<PeriodicOrbit> = Vec::new();
    let mut failures = Vec::new();
    for (seed_index, outcome) in outcomes.into_iter().enumerate() {
        for (guess, res) in outcome {
            match res {
                Ok(orbit) => {
                    if orbit.t0 > action_cap {
                        continue;
                    }
                    let mut duplicate = false;
                    for known in &orbits {
                        if (known.t0 - orbit.t0).abs() <= 1e-6 * known.t0
                            && distance_to_orbit(sys, &orbit.marked_point.z, &known.marked_point, known.t0)?
                                < cfg.dedup_tol
                        {
                            duplicate = true;
                            break;
                        }
                    }
                    if !duplicate {
                        orbits.push(orbit);
                    }
                }
                Err(e) => failures.push(SeedFailure {
                    seed_index,
                    period_guess: guess,
                    reason: e.to_string(),
                }),
            }
        }
    }

    let mut degenerate_family = false;
    if let Some(rep) = orbits.iter().find(|o| identity_like(&o.monodromy)).cloned() {
        degenerate_family = probe_degenerate_family(sys, rep.t0, cfg)?;
        if degenerate_family {
            orbits.retain(|o| !identity_like(&o.monodromy) || *o == rep);
        }
    }

    for o in orbits.iter_mut() {
        label_axis(sys, o);
    }
    orbits.sort_by(|x, y| {
        x.t0.total_cmp(&y.t0).then_with(|| {
            x.marked_point
                .z
                .iter()
                .zip(y.marked_point.z.iter())
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    for (i, o) in orbits.iter_mut().enumerate() {
        o.id = match o.axis {
            Some(axis) => axis.name().to_string(),
            None => format!("orbit{i}"),
        };
    }
    let note = match sys.split_params() {
        Some(_) => "split system: results cross-checked against the closed-form flow".to_string(),
        None => format!(
            "best-effort multiple-shooting search from {} seeds; orbits outside the seed basins may be missed",
            seeds.len()
        ),
    };
    Ok(OrbitSearch {
        action_cap,
        orbits,
        degenerate_family,
        failures,
        seeds_tried: seeds.len(),
        note,
    })
}

/// Uniform random point of the unit sphere pushed radially onto Σ.
pub fn random_surface_point(sys: &StarShapedSystem, rng: &mut ChaCha8Rng) -> SurfacePoint {
    loop {
        let v = Vec4::from_fn(|_, _| StandardNormal.sample(rng));
        if v.norm() > 1e-3 {
            return SurfacePoint::project(sys, v).expect("nonzero direction");
        }
    }
}

/// True when at least 90% of random points close up at `t0` with
/// identity-like monodromy.
fn probe_degenerate_family(sys: &StarShapedSystem, t0: f64, cfg: &OrbitSearchConfig) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f0b17);
    let points: Vec<SurfacePoint> = (0..cfg.probe_samples)
        .map(|_| random_surface_point(sys, &mut rng))
        .collect();
    let hits = points
        .par_iter()
        .filter(|p| {
            shoot(sys, p, t0, cfg)
                .and_then(|(z, t)| PeriodicOrbit::verified(sys, z, t, &precise_control()))
                .map(|o| o.closure_error <= cfg.orbit_tol && identity_like(&o.monodromy))
                .unwrap_or(false)
        })
        .count();
    Ok(hits as f64 >= 0.9 * cfg.probe_samples as f64)
}

/// `Φ(k·T0)` in the given framing. For framings that close up over `T0`, the
/// result is checked against the `k`-th power of `Φ(T0)`.
pub fn monodromy(
    sys: &StarShapedSystem,
    orbit: &PeriodicOrbit,
    k: u32,
    framing: Framing,
) -> Result<Mat2> {
    if k == 0 {
        return Err(ReebError::InvalidInput("covering multiplicity must be positive".into()));
    }
    let ctl = precise_control();
    let total = transverse_linearized(sys, &orbit.marked_point, k as f64 * orbit.t0, framing, 1, &ctl)?;
    let m_k = *total.end();
    if k > 1 && matches!(framing, Framing::Global | Framing::Axis { .. }) {
        let one = transverse_linearized(sys, &orbit.marked_point, orbit.t0, framing, 1, &ctl)?;
        let power = one.end().pow(k);
        let defect = (power - m_k).amax();
        if defect > 1e-6 * (1.0 + m_k.amax()) {
            return Err(ReebError::InvalidInput(format!(
                "monodromy of the {k}-fold cover differs from the {k}-th power by {defect:.3e}"
            )));
        }
    }
    Ok(m_k)
}

/// Smallest distance from an eigenvalue of `m` to 1.
pub fn eigen_gap_to_one(m: &Mat2) -> f64 {
    let tr = m.trace();
    let det = m.determinant();
    let disc = Complex64::new(tr * tr - 4.0 * det, 0.0).sqrt();
    let l1 = (tr + disc) / 2.0;
    let l2 = (tr - disc) / 2.0;
    (l1 - 1.0).norm().min((l2 - 1.0).norm())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NondegeneracyRow {
    pub k: u32,
    pub eigen_gap: f64,
    pub nondegenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NondegeneracyReport {
    pub rows: Vec<NondegeneracyRow>,
    pub verdict: bool,
}

/// Checks `1 ∉ spec Φ(k·T0)` with margin `ndg_tol` for all `k·T0 ≤ cap`.
pub fn nondegenerate_up_to(
    sys: &StarShapedSystem,
    orbit: &PeriodicOrbit,
    cap: f64,
    ndg_tol: f64,
) -> Result<NondegeneracyReport> {
    let k_max = (cap / orbit.t0 + 1e-12).floor() as u32;
    let one = transverse_linearized(sys, &orbit.marked_point, orbit.t0, Framing::Global, 1, &precise_control())?;
    let one = *one.end();
    let mut power = Mat2::identity();
    let mut rows = Vec::new();
    for k in 1..=k_max {
        power *= one;
        let gap = eigen_gap_to_one(&power);
        rows.push(NondegeneracyRow {
            k,
            eigen_gap: gap,
            nondegenerate: gap > ndg_tol,
        });
    }
    let verdict = rows.iter().all(|r| r.nondegenerate);
    Ok(NondegeneracyReport { rows, verdict })
}
