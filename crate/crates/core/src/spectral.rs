//! Asymptotic operators along periodic orbits, their spectra with winding
//! numbers, the constrained Conley-Zehnder index, transverse rotation numbers
//! and dynamical convexity.
//!
//! The operator `A = −J₀ d/ds − S(s)` acts on loops `R/Z → R²` in the
//! coordinates of a `dλ`-symplectic frame. It is discretized by a Fourier
//! Galerkin method in the complex basis `{e^{2πims}, i·e^{2πims}}`, which
//! yields a real symmetric matrix whose eigenvalues come in exact pairs for
//! constant coefficients.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{ReebError, Result};
use crate::flow::{frame_coordinates, transverse_angle, Framing, Mat2};
use crate::geometry::{StarShapedSystem, Vec2, Vec4};
use crate::orbits::{find_periodic_orbits, precise_control, OrbitSearchConfig, PeriodicOrbit};

/// Step of the central differences for the frame derivative along the flow.
const FRAME_FD_STEP: f64 = 1e-5;

/// Discretized asymptotic operator of an orbit iterate.
#[derive(Debug, Clone)]
pub struct AsymptoticOperator {
    pub orbit_id: String,
    pub k: u32,
    /// Period `T = k·T0`.
    pub period: f64,
    pub framing: Framing,
    /// Number of Fourier modes; the matrix is `2N × 2N`.
    pub n: usize,
    /// `S(s_j)` at `s_j = j/N`.
    pub coefficients: Vec<Mat2>,
    /// `max_j |S₁₂ − S₂₁|(s_j)`.
    pub symmetry_defect: f64,
    matrix: faer::Mat<f64>,
}

fn j0_2() -> Mat2 {
    Mat2::new(0.0, -1.0, 1.0, 0.0)
}

/// Matrix of `Φ̇Φ⁻¹` at a point of the orbit: `Ċ B + C (J₀ Hess H) B`, where
/// `C` maps a vector to frame coordinates of its `π_λ` projection and
/// `B = [e1 e2]`.
fn generator(sys: &StarShapedSystem, framing: &Framing, z: &Vec4, t: f64) -> Mat2 {
    let frame = framing.frame_at(sys, z, t);
    let x = sys.reeb_vector(z);
    let jac = sys.reeb_jacobian(z);
    let h = FRAME_FD_STEP;
    let (zp, zm) = (z + x * h, z - x * h);
    let mut g = Mat2::zeros();
    for (c, e) in [frame.e1, frame.e2].iter().enumerate() {
        let transport = frame_coordinates(sys, framing, z, t, &(jac * e));
        let dc = (frame_coordinates(sys, framing, &zp, t + h, e)
            - frame_coordinates(sys, framing, &zm, t - h, e))
            / (2.0 * h);
        g.set_column(c, &(transport + dc));
    }
    g
}

/// Fourier coefficients `f̂(k)`, `|k| < N/2`, of samples on the uniform grid,
/// stored at `k mod N`; the Nyquist coefficient is dropped.
fn fourier(samples: &[Complex64]) -> Vec<Complex64> {
    let n = samples.len();
    let mut buf = samples.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    for c in buf.iter_mut() {
        *c /= n as f64;
    }
    buf[n / 2] = Complex64::new(0.0, 0.0);
    buf
}

fn coefficient_at(hat: &[Complex64], k: i64) -> Complex64 {
    let n = hat.len() as i64;
    if k.abs() >= n / 2 {
        Complex64::new(0.0, 0.0)
    } else {
        hat[k.rem_euclid(n) as usize]
    }
}

impl AsymptoticOperator {
    /// Assembles the Galerkin matrix from coefficient samples `S(j/N)`.
    pub fn from_coefficients(coefficients: Vec<Mat2>, period: f64, framing: Framing) -> Result<Self> {
        let n = coefficients.len();
        if n < 8 || !n.is_power_of_two() {
            return Err(ReebError::InvalidInput(format!(
                "discretization size must be a power of two, got {n}"
            )));
        }
        let symmetry_defect = coefficients
            .iter()
            .map(|s| (s[(0, 1)] - s[(1, 0)]).abs())
            .fold(0.0, f64::max);
        if symmetry_defect > 1e-5 {
            return Err(ReebError::NonSymmetricCoefficient {
                defect: symmetry_defect,
            });
        }
        let sa: Vec<Complex64> = coefficients
            .iter()
            .map(|s| Complex64::new(0.5 * (s[(0, 0)] + s[(1, 1)]), 0.0))
            .collect();
        let sb: Vec<Complex64> = coefficients
            .iter()
            .map(|s| {
                Complex64::new(
                    0.5 * (s[(0, 0)] - s[(1, 1)]),
                    0.5 * (s[(0, 1)] + s[(1, 0)]),
                )
            })
            .collect();
        let (a_hat, b_hat) = (fourier(&sa), fourier(&sb));
        let eps = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)];
        let half = n as i64 / 2;
        let matrix = faer::Mat::<f64>::from_fn(2 * n, 2 * n, |row, col| {
            let (m, u) = (row as i64 / 2 - half, row % 2);
            let (q, v) = (col as i64 / 2 - half, col % 2);
            let mut entry = 0.0;
            if row == col {
                entry += 2.0 * PI * q as f64;
            }
            entry -= (eps[u].conj() * eps[v] * coefficient_at(&a_hat, m - q)).re;
            entry -= (eps[u].conj() * eps[v].conj() * coefficient_at(&b_hat, m + q)).re;
            entry
        });
        Ok(Self {
            orbit_id: String::new(),
            k: 1,
            period,
            framing,
            n,
            coefficients,
            symmetry_defect,
            matrix,
        })
    }

    /// Applies the discretized operator to a coefficient vector of length `2N`.
    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        let n2 = 2 * self.n;
        assert_eq!(coeffs.len(), n2, "coefficient vector length");
        (0..n2)
            .map(|i| (0..n2).map(|j| self.matrix.read(i, j) * coeffs[j]).sum())
            .collect()
    }

    pub fn dimension(&self) -> usize {
        2 * self.n
    }
}

/// Asymptotic operator of the `k`-fold cover of `orbit` in `framing`, with
/// `N` Fourier modes.
pub fn build_operator(
    sys: &StarShapedSystem,
    orbit: &PeriodicOrbit,
    k: u32,
    framing: Framing,
    n: usize,
) -> Result<AsymptoticOperator> {
    if k == 0 {
        return Err(ReebError::InvalidInput("covering multiplicity must be positive".into()));
    }
    if n < 128 || !n.is_power_of_two() {
        return Err(ReebError::InvalidInput(format!(
            "discretization size must be a power of two ≥ 128, got {n}"
        )));
    }
    framing.check_applicable(sys, &orbit.marked_point.z)?;
    let period = k as f64 * orbit.t0;
    // one primitive period suffices for the positions
    let steps_per_cover = n / k as usize;
    let positions: Vec<Vec4> = if steps_per_cover * k as usize == n {
        let grid: Vec<f64> = (0..steps_per_cover)
            .map(|j| period * j as f64 / n as f64)
            .collect();
        let one = crate::flow::integrate_on_grid(sys, &orbit.marked_point, &grid, &precise_control())?;
        (0..n).map(|j| one[j % steps_per_cover].z).collect()
    } else {
        let grid: Vec<f64> = (0..n).map(|j| period * j as f64 / n as f64).collect();
        crate::flow::integrate_on_grid(sys, &orbit.marked_point, &grid, &precise_control())?
            .into_iter()
            .map(|p| p.z)
            .collect()
    };
    let minus_j0 = -j0_2();
    let coefficients: Vec<Mat2> = positions
        .par_iter()
        .enumerate()
        .map(|(j, z)| {
            let t = period * j as f64 / n as f64;
            minus_j0 * generator(sys, &framing, z, t) * period
        })
        .collect();
    let mut op = AsymptoticOperator::from_coefficients(coefficients, period, framing)?;
    op.orbit_id = orbit.id.clone();
    op.k = k;
    Ok(op)
}

/// One eigenpair of the asymptotic operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralEntry {
    pub nu: f64,
    pub wind: i64,
    /// Eigensection sampled at `s_j = j/N`.
    pub eigensection: Vec<[f64; 2]>,
    /// `|A v − ν v|` for the unit eigenvector.
    pub residual: f64,
    /// Minimum of `|η|` on the refined grid.
    pub min_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticSpectrum {
    pub orbit_id: String,
    pub k: u32,
    pub framing: Framing,
    pub n: usize,
    /// Entries sorted by `ν`.
    pub entries: Vec<SpectralEntry>,
    pub resolved_window: [f64; 2],
}

impl AsymptoticSpectrum {
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.nu).collect()
    }

    /// Checks two eigenvalues per winding and monotone winding in `ν`.
    pub fn check_structure(&self) -> Result<()> {
        for w in self.entries.windows(2) {
            if w[1].wind < w[0].wind {
                return Err(ReebError::WindowUnresolved(format!(
                    "winding decreases from {} to {} at ν = {}",
                    w[0].wind, w[1].wind, w[1].nu
                )));
            }
        }
        let mut i = 0;
        while i < self.entries.len() {
            let w = self.entries[i].wind;
            let count = self.entries[i..].iter().take_while(|e| e.wind == w).count();
            if count != 2 {
                return Err(ReebError::WindowUnresolved(format!(
                    "winding {w} carries {count} eigenvalues"
                )));
            }
            i += count;
        }
        Ok(())
    }
}

/// Symmetric window `[δ − 2π·16, δ + 2π·16]`.
pub fn default_window(delta: f64) -> [f64; 2] {
    [delta - 32.0 * PI, delta + 32.0 * PI]
}

/// Samples `η(s) = Σ c_m e^{2πims}` on `m_grid` points.
fn eigensection_samples(coeffs: &[Complex64], m_grid: usize) -> Vec<Complex64> {
    let n = coeffs.len();
    let half = n as i64 / 2;
    let mut buf = vec![Complex64::new(0.0, 0.0); m_grid];
    for (idx, c) in coeffs.iter().enumerate() {
        let m = idx as i64 - half;
        buf[m.rem_euclid(m_grid as i64) as usize] += c;
    }
    FftPlanner::new().plan_fft_inverse(m_grid).process(&mut buf);
    buf
}

/// Winding of `η` by angle accumulation, refining until every increment is
/// below π/2.
fn winding(coeffs: &[Complex64]) -> Result<(i64, f64)> {
    let mut m_grid = 4 * coeffs.len();
    loop {
        let samples = eigensection_samples(coeffs, m_grid);
        let min_norm = samples.iter().map(|c| c.norm()).fold(f64::INFINITY, f64::min);
        let mut total = 0.0;
        let mut coarse = false;
        for i in 0..m_grid {
            let d = (samples[(i + 1) % m_grid] / samples[i]).arg();
            if d.abs() >= PI / 2.0 {
                coarse = true;
                break;
            }
            total += d;
        }
        if coarse {
            if m_grid >= 64 * coeffs.len() {
                return Err(ReebError::WindingNotInteger { value: f64::NAN });
            }
            m_grid *= 2;
            continue;
        }
        let value = total / (2.0 * PI);
        let w = value.round();
        if (value - w).abs() > 0.01 {
            return Err(ReebError::WindingNotInteger { value });
        }
        return Ok((w as i64, min_norm));
    }
}

/// Eigenpairs with `ν` in `window`, with windings. Incomplete winding classes
/// at the window edges are trimmed; the structural invariants are enforced.
pub fn spectrum(op: &AsymptoticOperator, window: [f64; 2]) -> Result<AsymptoticSpectrum> {
    if !(window[0] < window[1]) {
        return Err(ReebError::InvalidInput("empty spectral window".into()));
    }
    let eig = op.matrix.selfadjoint_eigendecomposition(faer::Side::Lower);
    let s = eig.s().column_vector();
    let u = eig.u();
    let n = op.n;
    let mut entries: Vec<SpectralEntry> = (0..2 * n)
        .filter(|&i| (window[0]..=window[1]).contains(&s.read(i)))
        .map(|i| {
            let nu = s.read(i);
            let v: Vec<f64> = (0..2 * n).map(|r| u.read(r, i)).collect();
            let av = op.apply(&v);
            let residual = av
                .iter()
                .zip(&v)
                .map(|(a, x)| (a - nu * x).powi(2))
                .sum::<f64>()
                .sqrt();
            let coeffs: Vec<Complex64> = (0..n)
                .map(|m| Complex64::new(v[2 * m], v[2 * m + 1]))
                .collect();
            let (wind, min_norm) = winding(&coeffs)?;
            let section = eigensection_samples(&coeffs, n)
                .into_iter()
                .map(|c| [c.re, c.im])
                .collect();
            Ok(SpectralEntry {
                nu,
                wind,
                eigensection: section,
                residual,
                min_norm,
            })
        })
        .collect::<Result<_>>()?;
    entries.sort_by(|a, b| a.nu.total_cmp(&b.nu));

    // drop winding classes cut by the window edges
    let count = |w: i64, es: &[SpectralEntry]| es.iter().filter(|e| e.wind == w).count();
    while let Some(first) = entries.first() {
        let w = first.wind;
        if count(w, &entries) < 2 {
            entries.retain(|e| e.wind != w);
        } else {
            break;
        }
    }
    while let Some(last) = entries.last() {
        let w = last.wind;
        if count(w, &entries) < 2 {
            entries.retain(|e| e.wind != w);
        } else {
            break;
        }
    }
    if entries.is_empty() {
        return Err(ReebError::WindowUnresolved("no complete winding class in the window".into()));
    }
    let resolved_window = [entries[0].nu, entries.last().unwrap().nu];
    let spec = AsymptoticSpectrum {
        orbit_id: op.orbit_id.clone(),
        k: op.k,
        framing: op.framing,
        n,
        entries,
        resolved_window,
    };
    spec.check_structure()?;
    if let Some(e) = spec.entries.iter().find(|e| e.min_norm <= 0.0) {
        return Err(ReebError::WindowUnresolved(format!(
            "eigensection at ν = {} vanishes on the grid",
            e.nu
        )));
    }
    Ok(spec)
}

/// Constrained Conley-Zehnder index `CZ^δ = 2α^{<δ} + p^δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CzIndex {
    pub cz: i64,
    pub alpha_lt: i64,
    pub alpha_geq: i64,
    pub p: i64,
    pub delta: f64,
    /// Smallest `|ν − δ|` over the spectrum.
    pub gap: f64,
    pub warnings: Vec<String>,
}

/// Default tolerance for eigenvalues counted as sitting on `δ`.
pub const SPEC_TOL: f64 = 1e-6;

pub fn cz_index(spec: &AsymptoticSpectrum, delta: f64) -> Result<CzIndex> {
    let mut warnings = Vec::new();
    let mut below = None::<i64>;
    let mut above = None::<i64>;
    let mut gap = f64::INFINITY;
    for e in &spec.entries {
        gap = gap.min((e.nu - delta).abs());
        let on_delta = (e.nu - delta).abs() <= SPEC_TOL;
        if on_delta {
            warnings.push(format!(
                "eigenvalue {:.3e} lies within {SPEC_TOL:e} of δ = {delta}; counted as ≥ δ",
                e.nu
            ));
        }
        if e.nu < delta && !on_delta {
            below = Some(below.map_or(e.wind, |b| b.max(e.wind)));
        } else {
            above = Some(above.map_or(e.wind, |a| a.min(e.wind)));
        }
    }
    let (Some(alpha_lt), Some(alpha_geq)) = (below, above) else {
        return Err(ReebError::WindowTooNarrow { delta });
    };
    let p = alpha_geq - alpha_lt;
    if !(0..=1).contains(&p) {
        return Err(ReebError::GapStraddle { gap: p });
    }
    Ok(CzIndex {
        cz: 2 * alpha_lt + p,
        alpha_lt,
        alpha_geq,
        p,
        delta,
        gap,
        warnings,
    })
}

/// Index of the `k`-fold cover at `δ` in the given framing.
pub fn cz_of_iterate(
    sys: &StarShapedSystem,
    orbit: &PeriodicOrbit,
    k: u32,
    framing: Framing,
    n: usize,
    delta: f64,
) -> Result<(AsymptoticSpectrum, CzIndex)> {
    let op = build_operator(sys, orbit, k, framing, n)?;
    let spec = spectrum(&op, default_window(delta))?;
    let cz = cz_index(&spec, delta)?;
    Ok((spec, cz))
}

/// Eigenvalue agreement between discretizations `N` and `2N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RichardsonCheck {
    pub n: usize,
    pub compared: usize,
    pub max_difference: f64,
}

/// Compares the in-window eigenvalues at `N` and `2N` winding class by class.
pub fn richardson_check(
    sys: &StarShapedSystem,
    orbit: &PeriodicOrbit,
    k: u32,
    framing: Framing,
    n: usize,
    window: [f64; 2],
) -> Result<RichardsonCheck> {
    let coarse = spectrum(&build_operator(sys, orbit, k, framing, n)?, window)?;
    let fine = spectrum(&build_operator(sys, orbit, k, framing, 2 * n)?, window)?;
    let mut compared = 0;
    let mut max_difference: f64 = 0.0;
    for w in coarse.entries.iter().map(|e| e.wind) {
        let a: Vec<f64> = coarse.entries.iter().filter(|e| e.wind == w).map(|e| e.nu).collect();
        let b: Vec<f64> = fine.entries.iter().filter(|e| e.wind == w).map(|e| e.nu).collect();
        if a.len() == b.len() {
            for (x, y) in a.iter().zip(&b) {
                max_difference = max_difference.max((x - y).abs());
                compared += 1;
            }
        }
    }
    Ok(RichardsonCheck {
        n,
        compared: compared / 2,
        max_difference,
    })
}

/// Transverse rotation number per period: the Cesàro slope of the angle of
/// the linearized flow over `[T/2, T]`, in turns per primitive period.
pub fn rotation_alpha(sys: &StarShapedSystem, orbit: &PeriodicOrbit, framing: Framing) -> Result<f64> {
    rotation_alpha_with(sys, orbit, framing, 50, 1e-4)
}

/// As [`rotation_alpha`], estimating over `periods` and `2·periods` primitive
/// periods and requiring agreement within `tol`.
pub fn rotation_alpha_with(
    sys: &StarShapedSystem,
    orbit: &PeriodicOrbit,
    framing: Framing,
    periods: usize,
    tol: f64,
) -> Result<f64> {
    if periods < 50 {
        return Err(ReebError::InvalidInput("need at least 50 periods".into()));
    }
    framing.check_applicable(sys, &orbit.marked_point.z)?;
    let ctl = crate::flow::StepControl::default();
    let estimate = |p: usize| -> Result<f64> {
        let (_, angle) = transverse_angle(
            sys,
            &orbit.marked_point,
            p as f64 * orbit.t0,
            framing,
            &Vec2::new(1.0, 0.0),
            &ctl,
        )?;
        Ok(angle.tail_slope() * orbit.t0 / (2.0 * PI))
    };
    let first = estimate(periods)?;
    let second = estimate(2 * periods)?;
    if (first - second).abs() > tol {
        return Err(ReebError::SlowConvergence { first, second, tol });
    }
    Ok(second)
}

/// One orbit iterate in a convexity report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityRow {
    pub orbit_id: String,
    pub k: u32,
    pub action: f64,
    pub cz: i64,
    pub alpha_lt: i64,
    pub p: i64,
    /// Distance from δ = 0 to the nearest eigenvalue.
    pub spectral_gap: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub action_cap: f64,
    pub rows: Vec<ConvexityRow>,
    /// All rows have `CZ ≥ 3`.
    pub verdict: bool,
    pub degenerate_flag: bool,
    pub caveat: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvexityConfig {
    pub n: usize,
    pub search: OrbitSearchConfig,
    /// Refuse degenerate systems whose spectrum touches δ = 0.
    pub strict: bool,
}

impl Default for ConvexityConfig {
    fn default() -> Self {
        Self {
            n: 512,
            search: OrbitSearchConfig::default(),
            strict: false,
        }
    }
}

/// `CZ⁰ ≥ 3` for every orbit iterate with action `≤ cap`, global frame.
pub fn convexity_check(sys: &StarShapedSystem, cap: f64, cfg: &ConvexityConfig) -> Result<ConvexityReport> {
    let search = find_periodic_orbits(sys, cap, &cfg.search)?;
    convexity_from_orbits(sys, cap, &search.orbits, search.degenerate_family, &search.note, cfg)
}

/// Convexity rows for a known orbit set.
pub fn convexity_from_orbits(
    sys: &StarShapedSystem,
    cap: f64,
    orbits: &[PeriodicOrbit],
    degenerate_flag: bool,
    search_note: &str,
    cfg: &ConvexityConfig,
) -> Result<ConvexityReport> {
    let jobs: Vec<(&PeriodicOrbit, u32)> = orbits
        .iter()
        .flat_map(|o| {
            let k_max = (cap / o.t0 + 1e-12).floor() as u32;
            (1..=k_max).map(move |k| (o, k))
        })
        .collect();
    let rows: Vec<ConvexityRow> = jobs
        .par_iter()
        .map(|(o, k)| {
            let (_, cz) = cz_of_iterate(sys, o, *k, Framing::Global, cfg.n, 0.0)?;
            Ok(ConvexityRow {
                orbit_id: o.id.clone(),
                k: *k,
                action: *k as f64 * o.t0,
                cz: cz.cz,
                alpha_lt: cz.alpha_lt,
                p: cz.p,
                spectral_gap: cz.gap,
                warnings: cz.warnings,
            })
        })
        .collect::<Result<_>>()?;
    if cfg.strict && degenerate_flag {
        if let Some(r) = rows.iter().find(|r| r.spectral_gap <= SPEC_TOL) {
            return Err(ReebError::DegenerateSystem(format!(
                "orbit {} (k = {}) has an eigenvalue on δ = 0 inside a degenerate family",
                r.orbit_id, r.k
            )));
        }
    }
    let verdict = rows.iter().all(|r| r.cz >= 3);
    let mut caveat = search_note.to_string();
    if degenerate_flag {
        caveat.push_str("; degenerate family of periodic orbits: one representative reported");
    }
    Ok(ConvexityReport {
        action_cap: cap,
        rows,
        verdict,
        degenerate_flag,
        caveat,
    })
}

impl ConvexityReport {
    /// Fixed-column text table.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>3} {:>12} {:>4} {:>8} {:>2} {:>12}\n",
            "orbit", "k", "action", "CZ", "alpha<0", "p", "gap"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<10} {:>3} {:>12.6} {:>4} {:>8} {:>2} {:>12.3e}\n",
                r.orbit_id, r.k, r.action, r.cz, r.alpha_lt, r.p, r.spectral_gap
            ));
        }
        out.push_str(&format!(
            "verdict: {}{}\n",
            if self.verdict { "dynamically convex" } else { "not dynamically convex" },
            if self.degenerate_flag { " (degenerate family)" } else { "" }
        ));
        out
    }
}
