//! Asymptotic cycles of a link of periodic orbits: rotation numbers of the
//! components, page crossing counts, Birkhoff estimates of the intersection
//! number with the linking class, and the certification that combines them.

use std::f64::consts::PI;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ReebError, Result};
use crate::flow::{flow_to, integrate, Framing, StepControl, Trajectory};
use crate::geometry::{Axis, StarShapedSystem, SurfacePoint, Vec4};
use crate::knots::{close_pair, linking_matrix, self_linking, ClosedCurve, LinkingClass};
use crate::orbits::{random_surface_point, PeriodicOrbit};
use crate::sections::{build_page, return_time_bounds, SectionPage};
use crate::spectral::rotation_alpha;

/// Smallest admissible flow derivative of the page coordinate at a crossing.
pub const CROSS_TOL: f64 = 1e-6;

/// Rotation number of one link component with the pieces it is made of.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationNumber {
    pub orbit_id: String,
    /// `ρ^y(γ)`.
    pub rho: f64,
    /// Spread of `ρ` across the three frame computations.
    pub error: f64,
    /// `Σ_{j≠i} cⱼ sⱼ ℓᵢⱼ`.
    pub linking_sum: i64,
    pub self_linking: i64,
    /// Transverse rotation per period in the frame of the zero-linking pushoff.
    pub disk_slope: f64,
    /// `|2πρ − (Σ ℓ + lim (θ/2π)/(t/T))|` with the limit taken in the global
    /// frame and shifted by the self-linking number.
    pub identity_defect: f64,
    /// `|ρ − ρ_twisted|` for a tube frame with one extra turn.
    pub frame_defect: f64,
}

/// `ρ^y(γᵢ)` for the `index`-th component of `y`:
/// `2πρ = Σ_{j≠i} cⱼ sⱼ ℓᵢⱼ + cᵢ sᵢ·lim (θ/2π)/(t/Tᵢ)`, where `θ` is the
/// transverse angle in the frame of the zero-linking pushoff.
pub fn rotation_number(sys: &StarShapedSystem, y: &LinkingClass, index: usize) -> Result<RotationNumber> {
    if index >= y.components.len() {
        return Err(ReebError::InvalidInput(format!(
            "component {index} out of range for a {}-component link",
            y.components.len()
        )));
    }
    let lk = linking_matrix(y)?;
    rotation_with_matrix(sys, y, index, &lk)
}

fn rotation_with_matrix(sys: &StarShapedSystem, y: &LinkingClass, i: usize, lk: &[Vec<i64>]) -> Result<RotationNumber> {
    let orbit = &y.orbits[i];
    let comp = &y.components[i];
    let period = orbit.t0;
    let linking_sum: i64 = y
        .components
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(j, c)| c.coefficient * c.orientation * lk[i][j])
        .sum();
    let sl = self_linking(sys, orbit)?.value;
    let weight = (comp.coefficient * comp.orientation) as f64;

    // the zero-linking pushoff frame is the global frame turned −sl times
    let disk = Framing::Twisted { turns: -sl, period };
    let disk_slope = rotation_alpha(sys, orbit, disk)?;
    let two_pi_rho = linking_sum as f64 + weight * disk_slope;

    let global_slope = rotation_alpha(sys, orbit, Framing::Global)?;
    let identity = linking_sum as f64 + weight * (global_slope + sl as f64);

    // one more turn of the tube frame moves one unit from the angular term
    // into the longitudinal term
    let twisted = Framing::Twisted { turns: -sl + 1, period };
    let twisted_slope = rotation_alpha(sys, orbit, twisted)?;
    let twisted_rho = linking_sum as f64 + weight + weight * twisted_slope;

    let rho = two_pi_rho / (2.0 * PI);
    let identity_defect = (two_pi_rho - identity).abs();
    let frame_defect = (two_pi_rho - twisted_rho).abs() / (2.0 * PI);
    Ok(RotationNumber {
        orbit_id: comp.orbit_id.clone(),
        rho,
        error: identity_defect.max(2.0 * PI * frame_defect) / (2.0 * PI),
        linking_sum,
        self_linking: sl,
        disk_slope,
        identity_defect,
        frame_defect,
    })
}

/// Transverse crossings of a trajectory with the open page, all positive.
pub fn crossing_count(traj: &Trajectory, page: &SectionPage) -> Result<usize> {
    crossing_times(traj, page).map(|t| t.len())
}

/// Times of the crossings counted by [`crossing_count`], refined to 1e-9.
pub fn crossing_times(traj: &Trajectory, page: &SectionPage) -> Result<Vec<f64>> {
    if page.binding_distance(&traj.states[0].z) < 1e-12 {
        return Err(ReebError::InvalidInput("trajectory starts on the binding".into()));
    }
    let f: Vec<f64> = traj.states.iter().map(|s| page.defining_angle(&s.z)).collect();
    let mut out = Vec::new();
    for i in 0..f.len() - 1 {
        let (f0, f1) = (f[i], f[i + 1]);
        // a jump across ±π is the far side of the circle, not the page
        if (f1 - f0).abs() >= PI {
            continue;
        }
        let upward = f0 < 0.0 && f1 >= 0.0;
        let downward = f0 >= 0.0 && f1 < 0.0;
        if !upward && !downward {
            continue;
        }
        let (mut lo, mut hi) = (traj.t_samples[i], traj.t_samples[i + 1]);
        let base = traj.states[i];
        let mut z = traj.states[i + 1];
        while hi - lo > 1e-9 {
            let mid = 0.5 * (lo + hi);
            let zm = flow_to(traj.system(), &base, mid - traj.t_samples[i], &StepControl::default())?;
            if (page.defining_angle(&zm.z) < 0.0) == upward {
                lo = mid;
            } else {
                hi = mid;
            }
            z = zm;
        }
        let t = 0.5 * (lo + hi);
        let rate = page.flow_rate(&z.z);
        if downward || rate < CROSS_TOL {
            return Err(ReebError::NonTransverseCrossing { t, rate });
        }
        out.push(t);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffConfig {
    pub samples: usize,
    pub horizon: f64,
    pub seed: u64,
    /// Start points and closing chords keep this distance from the link.
    pub tube_excl: f64,
    /// Closing times tried per sample before it is flagged.
    pub closing_attempts: usize,
}

impl Default for BirkhoffConfig {
    fn default() -> Self {
        Self {
            samples: 32,
            horizon: 2000.0,
            seed: 0,
            tube_excl: 1e-2,
            closing_attempts: 6,
        }
    }
}

/// One trajectory-generated estimate of `μ·y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffSample {
    pub index: usize,
    pub start: Vec4,
    /// Closing time in `[T/2, T]`.
    pub t_n: f64,
    pub recurrence_distance: f64,
    /// `⟨y, loop⟩`.
    pub pairing: i64,
    /// `⟨y, loop⟩ / T_n`.
    pub estimate: f64,
    /// Same estimate with horizon `T/2`.
    pub half_horizon_estimate: f64,
    pub loop_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffStatistics {
    pub horizon: f64,
    pub samples: Vec<BirkhoffSample>,
    /// Indices of samples without an admissible closing time.
    pub excluded: Vec<usize>,
    pub min: f64,
    pub mean: f64,
    /// Fitted `C` in `|estimate(T) − estimate(T/2)| ≤ C/T`.
    pub cauchy_constant: f64,
}

impl BirkhoffStatistics {
    pub fn write_csv<W: Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "t_n", "estimate"])?;
        for s in &self.samples {
            w.serialize((s.index, s.t_n, s.estimate))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Local minima of `|φ^t(p) − p|` over `[t_lo, t_hi]`, best first, each
/// refined by golden-section search.
fn recurrences(traj: &Trajectory, t_lo: f64, t_hi: f64, count: usize) -> Result<Vec<(f64, f64)>> {
    let p = traj.states[0].z;
    let dt = 0.02;
    let n = ((t_hi - t_lo) / dt).ceil() as usize;
    let dist: Vec<(f64, f64)> = (0..=n)
        .map(|k| {
            let t = (t_lo + k as f64 * dt).min(t_hi);
            (t, (traj.interpolate(t) - p).norm())
        })
        .collect();
    let mut minima: Vec<(f64, f64)> = (0..dist.len())
        .filter(|&k| {
            let left = k == 0 || dist[k - 1].1 >= dist[k].1;
            let right = k + 1 == dist.len() || dist[k + 1].1 > dist[k].1;
            left && right
        })
        .map(|k| dist[k])
        .collect();
    minima.sort_by(|a, b| a.1.total_cmp(&b.1));
    minima.truncate(count);
    minima
        .into_iter()
        .map(|(t, _)| {
            let d = |s: f64| -> Result<f64> { Ok((traj.state_at(s)?.z - p).norm()) };
            let (mut a, mut b) = ((t - dt).max(t_lo), (t + dt).min(t_hi));
            let g = 0.5 * (5f64.sqrt() - 1.0);
            let (mut x1, mut x2) = (b - g * (b - a), a + g * (b - a));
            let (mut f1, mut f2) = (d(x1)?, d(x2)?);
            while b - a > 1e-11 {
                if f1 < f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - g * (b - a);
                    f1 = d(x1)?;
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + g * (b - a);
                    f2 = d(x2)?;
                }
            }
            let t = 0.5 * (a + b);
            Ok((t, d(t)?))
        })
        .collect()
}

/// Straight chord from `from` to `to`, radially projected, with spacing at
/// most `gap`; endpoints excluded.
fn chord(sys: &StarShapedSystem, from: &Vec4, to: &Vec4, gap: f64) -> Vec<Vec4> {
    let m = ((to - from).norm() / gap).ceil() as usize;
    (1..m)
        .map(|k| sys.radial_project(&(from + (to - from) * (k as f64 / m as f64))))
        .collect()
}

/// `⟨y, loop⟩` for the arc `[0, t_n]` closed by a chord, or `None` when the
/// chord enters the excluded tube.
fn close_and_pair(
    traj: &Trajectory,
    y: &LinkingClass,
    link_points: &[Vec4],
    t_n: f64,
    tube_excl: f64,
) -> Result<Option<(i64, f64)>> {
    let sys = traj.system();
    let end = traj.state_at(t_n)?.z;
    let start = traj.states[0].z;
    let probe = chord(sys, &end, &start, tube_excl / 4.0);
    if close_pair(link_points, &probe, tube_excl).is_some() {
        return Ok(None);
    }
    let speed = traj
        .states
        .iter()
        .map(|s| sys.reeb_vector(&s.z).norm())
        .fold(0.0, f64::max);
    let mut gap = 1e-2;
    loop {
        let n = (t_n * speed * 1.2 / gap).ceil() as usize;
        let mut pts: Vec<Vec4> = (0..n).map(|k| traj.interpolate(t_n * k as f64 / n as f64)).collect();
        pts.push(end);
        pts.extend(chord(sys, &end, &start, gap));
        let curve = ClosedCurve::from_loop(pts)?;
        let actual = curve.max_gap();
        // linking needs the loop 10 gaps away from every component
        match close_pair(link_points, curve.points(), 20.0 * actual) {
            Some(d) if gap > 1e-6 => gap = (d / 25.0).min(gap / 2.0),
            Some(d) => {
                return Err(ReebError::CurvesTooClose {
                    distance: d,
                    required: 20.0 * actual,
                })
            }
            None => return Ok(Some((y.evaluate(&curve)?, actual))),
        }
    }
}

/// Samples `⟨y, loop⟩/T_n` over trajectories of nearly recurrent start points.
pub fn birkhoff_intersection(sys: &StarShapedSystem, y: &LinkingClass, cfg: &BirkhoffConfig) -> Result<BirkhoffStatistics> {
    let max_period = y.orbits.iter().map(|o| o.t0).fold(0.0, f64::max);
    if cfg.samples == 0 {
        return Err(ReebError::InvalidInput("need at least one sample".into()));
    }
    if cfg.horizon < 100.0 * max_period {
        return Err(ReebError::InvalidInput(format!(
            "horizon {} is below 100 times the longest link period {max_period}",
            cfg.horizon
        )));
    }
    let link_points: Vec<Vec4> = (0..y.components.len())
        .flat_map(|i| y.curve(i).points().to_vec())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts: Vec<SurfacePoint> = (0..cfg.samples)
        .map(|_| loop {
            let p = random_surface_point(sys, &mut rng);
            if close_pair(&link_points, &[p.z], cfg.tube_excl).is_none() {
                break p;
            }
        })
        .collect();

    let results: Vec<Result<Option<BirkhoffSample>>> = starts
        .par_iter()
        .enumerate()
        .map(|(index, p)| {
            let traj = integrate(sys, p, cfg.horizon, &StepControl::default())?;
            let estimate_over = |t_hi: f64| -> Result<Option<(f64, f64, i64, f64)>> {
                for (t_n, dist) in recurrences(&traj, 0.5 * t_hi, t_hi, cfg.closing_attempts)? {
                    if let Some((pairing, gap)) = close_and_pair(&traj, y, &link_points, t_n, cfg.tube_excl)? {
                        return Ok(Some((t_n, dist, pairing, gap)));
                    }
                }
                Ok(None)
            };
            let (Some(full), Some(half)) = (estimate_over(cfg.horizon)?, estimate_over(0.5 * cfg.horizon)?) else {
                return Ok(None);
            };
            Ok(Some(BirkhoffSample {
                index,
                start: p.z,
                t_n: full.0,
                recurrence_distance: full.1,
                pairing: full.2,
                estimate: full.2 as f64 / full.0,
                half_horizon_estimate: half.2 as f64 / half.0,
                loop_gap: full.3,
            }))
        })
        .collect();
    let mut samples = Vec::new();
    let mut excluded = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r? {
            Some(s) => samples.push(s),
            None => excluded.push(i),
        }
    }
    if samples.is_empty() {
        return Err(ReebError::NoRecurrence {
            sample: excluded.first().copied().unwrap_or(0),
        });
    }
    let min = samples.iter().map(|s| s.estimate).fold(f64::INFINITY, f64::min);
    let mean = samples.iter().map(|s| s.estimate).sum::<f64>() / samples.len() as f64;
    let cauchy_constant = samples
        .iter()
        .map(|s| (s.estimate - s.half_horizon_estimate).abs() * cfg.horizon)
        .fold(0.0, f64::max);
    Ok(BirkhoffStatistics {
        horizon: cfg.horizon,
        samples,
        excluded,
        min,
        mean,
        cauchy_constant,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FriedConfig {
    pub samples: usize,
    pub horizon: f64,
    pub seed: u64,
    pub tube_excl: f64,
    pub rho_tol: f64,
    pub mu_tol: f64,
}

impl Default for FriedConfig {
    fn default() -> Self {
        Self {
            samples: 32,
            horizon: 2000.0,
            seed: 0,
            tube_excl: 1e-2,
            rho_tol: 1e-4,
            mu_tol: 1e-4,
        }
    }
}

/// Lower bound `Σᵢ 1/sup τᵢ − 2/T` on the estimates from explicit pages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnTimeBound {
    pub sup_return_times: Vec<f64>,
    pub bound: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedReport {
    pub link: String,
    pub rotation_numbers: Vec<RotationNumber>,
    pub intersection: BirkhoffStatistics,
    /// Every component rotates positively.
    pub verdict_rotation: bool,
    /// Every sampled estimate is positive.
    pub verdict_intersection: bool,
    pub verdict: bool,
    /// Present on split systems whose link is both axis circles or one of them.
    pub return_time_bound: Option<ReturnTimeBound>,
    pub text: String,
}

const CHAIN_TEXT: &str = "Criterion: (iii) every component has positive rotation number and every \
invariant measure off the link pairs positively with y; then (ii) the link binds a rational \
open book whose pages are global surfaces of section; then (i) the link bounds a global \
surface of section. The intersection condition is checked only on sampled \
trajectory-generated measures: any negative sample refutes it, but positive samples do not \
prove it for all invariant measures.";

/// Certification of a link with coefficient 1 and flow orientation on every
/// component.
pub fn fried_check(sys: &StarShapedSystem, link: &[PeriodicOrbit], cfg: &FriedConfig) -> Result<FriedReport> {
    fried_check_class(sys, &LinkingClass::new(sys, link)?, cfg)
}

/// Certification for an arbitrary class `y`.
pub fn fried_check_class(sys: &StarShapedSystem, y: &LinkingClass, cfg: &FriedConfig) -> Result<FriedReport> {
    let lk = linking_matrix(y)?;
    let rotation_numbers: Vec<RotationNumber> = (0..y.components.len())
        .into_par_iter()
        .map(|i| rotation_with_matrix(sys, y, i, &lk))
        .collect::<Result<_>>()?;
    let intersection = birkhoff_intersection(
        sys,
        y,
        &BirkhoffConfig {
            samples: cfg.samples,
            horizon: cfg.horizon,
            seed: cfg.seed,
            tube_excl: cfg.tube_excl,
            ..BirkhoffConfig::default()
        },
    )?;
    let min_rho = rotation_numbers.iter().map(|r| r.rho).fold(f64::INFINITY, f64::min);
    let verdict_rotation = min_rho > cfg.rho_tol;
    let verdict_intersection = intersection.min > cfg.mu_tol;
    let verdict = verdict_rotation && verdict_intersection;
    let return_time_bound = page_bound(sys, y, &intersection)?;
    let text = format!(
        "link {}: min rotation number {:.6e} ({}), min sampled intersection estimate {:.6e} over {} samples at horizon {} ({}); verdict {}. {}",
        y.description(),
        min_rho,
        if verdict_rotation { "positive" } else { "not positive" },
        intersection.min,
        intersection.samples.len(),
        intersection.horizon,
        if verdict_intersection { "positive" } else { "not positive" },
        verdict,
        CHAIN_TEXT
    );
    Ok(FriedReport {
        link: y.description(),
        rotation_numbers,
        intersection,
        verdict_rotation,
        verdict_intersection,
        verdict,
        return_time_bound,
        text,
    })
}

/// For split systems and links made of flow-oriented axis circles with
/// coefficient 1, compares the estimates with the page return times.
fn page_bound(sys: &StarShapedSystem, y: &LinkingClass, stats: &BirkhoffStatistics) -> Result<Option<ReturnTimeBound>> {
    if sys.split_params().is_none() {
        return Ok(None);
    }
    let mut axes: Vec<Axis> = Vec::new();
    for (o, c) in y.orbits.iter().zip(&y.components) {
        match o.axis {
            Some(axis) if c.coefficient == 1 && c.orientation == 1 && !axes.contains(&axis) => axes.push(axis),
            _ => return Ok(None),
        }
    }
    let sup_return_times = axes
        .iter()
        .map(|&axis| Ok(return_time_bounds(&build_page(sys, axis, 0.0)?, 3, 3)?.sup))
        .collect::<Result<Vec<f64>>>()?;
    let bound = sup_return_times.iter().map(|t| 1.0 / t).sum::<f64>() - 2.0 / stats.horizon;
    Ok(Some(ReturnTimeBound {
        satisfied: stats.min > bound,
        sup_return_times,
        bound,
    }))
}
