//! Reeb flow integration and the transverse linearized flow.
//!
//! The integrator is the 13-stage Fehlberg 7(8) pair with local
//! extrapolation. After every accepted step the position is pushed back onto
//! Σ radially; by homogeneity this projection is exact and commutes with the
//! flow.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{ReebError, Result};
use crate::geometry::{
    frame_unchecked, xi_coordinates, Axis, ContactFrame, StarShapedSystem, SurfacePoint, Vec2,
    Vec4,
};

pub type Mat2 = Matrix2<f64>;

/// Adaptive step-size control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    /// Local error tolerance per step (mixed absolute/relative).
    pub tol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            h_init: 1e-2,
            h_min: 1e-13,
            h_max: 0.25,
            max_steps: 50_000_000,
        }
    }
}

mod rkf78 {
    pub const STAGES: usize = 13;
    #[cfg_attr(not(test), allow(dead_code))]
    pub const C: [f64; STAGES] = [
        0.0,
        2.0 / 27.0,
        1.0 / 9.0,
        1.0 / 6.0,
        5.0 / 12.0,
        0.5,
        5.0 / 6.0,
        1.0 / 6.0,
        2.0 / 3.0,
        1.0 / 3.0,
        1.0,
        0.0,
        1.0,
    ];
    pub const A: [[f64; 12]; STAGES] = [
        [0.0; 12],
        [2.0 / 27.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [1.0 / 36.0, 1.0 / 12.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [1.0 / 24.0, 0.0, 1.0 / 8.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [5.0 / 12.0, 0.0, -25.0 / 16.0, 25.0 / 16.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [1.0 / 20.0, 0.0, 0.0, 1.0 / 4.0, 1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [-25.0 / 108.0, 0.0, 0.0, 125.0 / 108.0, -65.0 / 27.0, 125.0 / 54.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [31.0 / 300.0, 0.0, 0.0, 0.0, 61.0 / 225.0, -2.0 / 9.0, 13.0 / 900.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [2.0, 0.0, 0.0, -53.0 / 6.0, 704.0 / 45.0, -107.0 / 9.0, 67.0 / 90.0, 3.0, 0.0, 0.0, 0.0, 0.0],
        [-91.0 / 108.0, 0.0, 0.0, 23.0 / 108.0, -976.0 / 135.0, 311.0 / 54.0, -19.0 / 60.0, 17.0 / 6.0, -1.0 / 12.0, 0.0, 0.0, 0.0],
        [2383.0 / 4100.0, 0.0, 0.0, -341.0 / 164.0, 4496.0 / 1025.0, -301.0 / 82.0, 2133.0 / 4100.0, 45.0 / 82.0, 45.0 / 164.0, 18.0 / 41.0, 0.0, 0.0],
        [3.0 / 205.0, 0.0, 0.0, 0.0, 0.0, -6.0 / 41.0, -3.0 / 205.0, -3.0 / 41.0, 3.0 / 41.0, 6.0 / 41.0, 0.0, 0.0],
        [-1777.0 / 4100.0, 0.0, 0.0, -341.0 / 164.0, 4496.0 / 1025.0, -289.0 / 82.0, 2193.0 / 4100.0, 51.0 / 82.0, 33.0 / 164.0, 12.0 / 41.0, 0.0, 1.0],
    ];
    /// Eighth-order weights (used to advance).
    pub const B8: [f64; STAGES] = [
        0.0, 0.0, 0.0, 0.0, 0.0,
        34.0 / 105.0, 9.0 / 35.0, 9.0 / 35.0, 9.0 / 280.0, 9.0 / 280.0,
        0.0, 41.0 / 840.0, 41.0 / 840.0,
    ];
    /// Difference between the seventh- and eighth-order weights.
    pub const ERR: [f64; STAGES] = [
        41.0 / 840.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        41.0 / 840.0, -41.0 / 840.0, -41.0 / 840.0,
    ];
}

/// Adaptive Fehlberg 7(8) integrator for an autonomous system on `[f64; D]`
/// with a projection applied after each accepted step.
pub(crate) struct Rk78<'a, const D: usize> {
    rhs: &'a dyn Fn(&[f64; D]) -> [f64; D],
    project: &'a dyn Fn(&mut [f64; D]),
    ctl: StepControl,
    h: f64,
}

impl<'a, const D: usize> Rk78<'a, D> {
    pub(crate) fn new(
        rhs: &'a dyn Fn(&[f64; D]) -> [f64; D],
        project: &'a dyn Fn(&mut [f64; D]),
        ctl: StepControl,
    ) -> Self {
        Self {
            rhs,
            project,
            ctl,
            h: ctl.h_init.min(ctl.h_max),
        }
    }

    fn trial(&self, y: &[f64; D], h: f64) -> ([f64; D], f64) {
        let mut k = [[0.0; D]; rkf78::STAGES];
        for s in 0..rkf78::STAGES {
            let mut ys = *y;
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = rkf78::A[s][j];
                if a != 0.0 {
                    for i in 0..D {
                        ys[i] += h * a * kj[i];
                    }
                }
            }
            k[s] = (self.rhs)(&ys);
        }
        let mut out = *y;
        let mut err = 0.0f64;
        for i in 0..D {
            let mut incr = 0.0;
            let mut e = 0.0;
            for s in 0..rkf78::STAGES {
                incr += rkf78::B8[s] * k[s][i];
                e += rkf78::ERR[s] * k[s][i];
            }
            out[i] += h * incr;
            let scale = self.ctl.tol * (1.0 + y[i].abs().max(out[i].abs()));
            err = err.max((h * e).abs() / scale);
        }
        (out, err)
    }

    /// Advances `y` from `*t` to exactly `t_end`, calling `on_step` after each
    /// accepted step with the new time and state.
    pub(crate) fn advance(
        &mut self,
        y: &mut [f64; D],
        t: &mut f64,
        t_end: f64,
        mut on_step: impl FnMut(f64, &[f64; D]),
    ) -> Result<()> {
        let mut steps = 0usize;
        while *t < t_end {
            let remaining = t_end - *t;
            let last = self.h >= remaining;
            let h = if last { remaining } else { self.h };
            let (next, err) = self.trial(y, h);
            if !err.is_finite() {
                self.h *= 0.1;
                if self.h < self.ctl.h_min {
                    return Err(ReebError::StepFailure { t: *t, h: self.h });
                }
                continue;
            }
            let factor = if err == 0.0 {
                4.0
            } else {
                (0.9 * err.powf(-1.0 / 8.0)).clamp(0.1, 4.0)
            };
            if err <= 1.0 {
                *y = next;
                (self.project)(y);
                *t = if last { t_end } else { *t + h };
                on_step(*t, y);
                // keep the pre-clip step so stops do not shrink it permanently
                if !last {
                    self.h = (h * factor).min(self.ctl.h_max);
                } else if factor < 1.0 {
                    self.h = (h * factor).min(self.ctl.h_max).max(self.ctl.h_min);
                }
            } else {
                self.h = h * factor;
                if self.h < self.ctl.h_min {
                    return Err(ReebError::StepFailure { t: *t, h: self.h });
                }
            }
            steps += 1;
            if steps > self.ctl.max_steps {
                return Err(ReebError::StepFailure { t: *t, h: self.h });
            }
        }
        Ok(())
    }
}

fn to_array(z: &Vec4) -> [f64; 4] {
    [z[0], z[1], z[2], z[3]]
}

fn from_array(y: &[f64]) -> Vec4 {
    Vec4::new(y[0], y[1], y[2], y[3])
}

fn reeb_rhs(sys: &StarShapedSystem) -> impl Fn(&[f64; 4]) -> [f64; 4] + '_ {
    move |y| to_array(&sys.reeb_vector(&from_array(y)))
}

fn reeb_projection(sys: &StarShapedSystem) -> impl Fn(&mut [f64; 4]) + '_ {
    move |y| {
        let z = sys.radial_project(&from_array(y));
        *y = to_array(&z);
    }
}

/// Variational system: position plus the 4×4 derivative `Dφ^t`, column major.
fn variational_rhs(sys: &StarShapedSystem) -> impl Fn(&[f64; 20]) -> [f64; 20] + '_ {
    move |y| {
        let z = from_array(&y[..4]);
        let x = sys.reeb_vector(&z);
        let a = sys.reeb_jacobian(&z);
        let m = crate::geometry::Mat4::from_column_slice(&y[4..]);
        let dm = a * m;
        let mut out = [0.0; 20];
        out[..4].copy_from_slice(x.as_slice());
        out[4..].copy_from_slice(dm.as_slice());
        out
    }
}

fn variational_projection(sys: &StarShapedSystem) -> impl Fn(&mut [f64; 20]) + '_ {
    move |y| {
        let z = sys.radial_project(&from_array(&y[..4]));
        y[..4].copy_from_slice(z.as_slice());
    }
}

/// Sampled solution of the Reeb flow.
#[derive(Debug, Clone)]
pub struct Trajectory {
    sys: StarShapedSystem,
    ctl: StepControl,
    pub t_samples: Vec<f64>,
    pub states: Vec<SurfacePoint>,
    /// Order of [`Trajectory::interpolate`] (cubic Hermite).
    pub interpolation_order: usize,
    pub max_residual: f64,
}

impl Trajectory {
    pub fn system(&self) -> &StarShapedSystem {
        &self.sys
    }

    pub fn duration(&self) -> f64 {
        *self.t_samples.last().expect("trajectory has samples")
    }

    pub fn end(&self) -> &SurfacePoint {
        self.states.last().expect("trajectory has samples")
    }

    fn bracket(&self, t: f64) -> usize {
        match self
            .t_samples
            .binary_search_by(|s| s.partial_cmp(&t).expect("finite times"))
        {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    /// State at time `t`, re-integrated from the nearest stored sample at
    /// full accuracy.
    pub fn state_at(&self, t: f64) -> Result<SurfacePoint> {
        if !(0.0..=self.duration()).contains(&t) {
            return Err(ReebError::InvalidInput(format!(
                "time {t} outside [0, {}]",
                self.duration()
            )));
        }
        let i = self.bracket(t);
        flow_to(&self.sys, &self.states[i], t - self.t_samples[i], &self.ctl)
    }

    /// Cubic Hermite interpolation between stored samples (derivative from
    /// the Reeb field), radially projected. Cheap; accuracy `O(h⁴)`.
    pub fn interpolate(&self, t: f64) -> Vec4 {
        let t = t.clamp(0.0, self.duration());
        let i = self.bracket(t).min(self.t_samples.len().saturating_sub(2));
        if self.t_samples.len() < 2 {
            return self.states[0].z;
        }
        let (t0, t1) = (self.t_samples[i], self.t_samples[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (p0, p1) = (self.states[i].z, self.states[i + 1].z);
        let (m0, m1) = (
            self.sys.reeb_vector(&p0) * h,
            self.sys.reeb_vector(&p1) * h,
        );
        let s2 = s * s;
        let s3 = s2 * s;
        let z = p0 * (2.0 * s3 - 3.0 * s2 + 1.0)
            + m0 * (s3 - 2.0 * s2 + s)
            + p1 * (-2.0 * s3 + 3.0 * s2)
            + m1 * (s3 - s2);
        self.sys.radial_project(&z)
    }

    /// Writes `t, x0, y0, x1, y1` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x0", "y0", "x1", "y1"])?;
        for (t, p) in self.t_samples.iter().zip(&self.states) {
            w.serialize((t, p.z[0], p.z[1], p.z[2], p.z[3]))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Integrates the Reeb flow from `z0` over `[0, t_end]`, storing every
/// accepted step.
pub fn integrate(
    sys: &StarShapedSystem,
    z0: &SurfacePoint,
    t_end: f64,
    ctl: &StepControl,
) -> Result<Trajectory> {
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(ReebError::InvalidInput(format!(
            "integration time must be nonnegative, got {t_end}"
        )));
    }
    let rhs = reeb_rhs(sys);
    let proj = reeb_projection(sys);
    let mut rk = Rk78::new(&rhs, &proj, *ctl);
    let mut y = to_array(&sys.radial_project(&z0.z));
    let first = SurfacePoint {
        z: from_array(&y),
        residual: (sys.h(&from_array(&y)) - 1.0).abs(),
    };
    let mut t_samples = vec![0.0];
    let mut states = vec![first];
    let mut max_residual = first.residual;
    let mut t = 0.0;
    rk.advance(&mut y, &mut t, t_end, |t, y| {
        let z = from_array(y);
        let residual = (sys.h(&z) - 1.0).abs();
        max_residual = max_residual.max(residual);
        t_samples.push(t);
        states.push(SurfacePoint { z, residual });
    })?;
    Ok(Trajectory {
        sys: sys.clone(),
        ctl: *ctl,
        t_samples,
        states,
        interpolation_order: 3,
        max_residual,
    })
}

/// Endpoint `φ^t(z0)` only.
pub fn flow_to(
    sys: &StarShapedSystem,
    z0: &SurfacePoint,
    t: f64,
    ctl: &StepControl,
) -> Result<SurfacePoint> {
    if !(t >= 0.0) {
        return Err(ReebError::InvalidInput(format!(
            "integration time must be nonnegative, got {t}"
        )));
    }
    let rhs = reeb_rhs(sys);
    let proj = reeb_projection(sys);
    let mut rk = Rk78::new(&rhs, &proj, *ctl);
    let mut y = to_array(&sys.radial_project(&z0.z));
    let mut s = 0.0;
    rk.advance(&mut y, &mut s, t, |_, _| {})?;
    let z = from_array(&y);
    Ok(SurfacePoint {
        z,
        residual: (sys.h(&z) - 1.0).abs(),
    })
}

/// States at the (nondecreasing, nonnegative) times of `grid`, landing
/// exactly on each grid time.
pub fn integrate_on_grid(
    sys: &StarShapedSystem,
    z0: &SurfacePoint,
    grid: &[f64],
    ctl: &StepControl,
) -> Result<Vec<SurfacePoint>> {
    let rhs = reeb_rhs(sys);
    let proj = reeb_projection(sys);
    let mut rk = Rk78::new(&rhs, &proj, *ctl);
    let mut y = to_array(&sys.radial_project(&z0.z));
    let mut t = 0.0;
    let mut out = Vec::with_capacity(grid.len());
    for &g in grid {
        if g < t {
            return Err(ReebError::InvalidInput("grid must be nondecreasing".into()));
        }
        rk.advance(&mut y, &mut t, g, |_, _| {})?;
        let z = from_array(&y);
        out.push(SurfacePoint {
            z,
            residual: (sys.h(&z) - 1.0).abs(),
        });
    }
    Ok(out)
}

/// Positions and full 4×4 derivatives `Dφ^t(z0)` on a time grid.
pub fn variational_on_grid(
    sys: &StarShapedSystem,
    z0: &SurfacePoint,
    grid: &[f64],
    ctl: &StepControl,
) -> Result<Vec<(Vec4, crate::geometry::Mat4)>> {
    let rhs = variational_rhs(sys);
    let proj = variational_projection(sys);
    let mut rk = Rk78::new(&rhs, &proj, *ctl);
    let mut y = [0.0; 20];
    y[..4].copy_from_slice(sys.radial_project(&z0.z).as_slice());
    y[4..].copy_from_slice(crate::geometry::Mat4::identity().as_slice());
    let mut t = 0.0;
    let mut out = Vec::with_capacity(grid.len());
    for &g in grid {
        if g < t {
            return Err(ReebError::InvalidInput("grid must be nondecreasing".into()));
        }
        rk.advance(&mut y, &mut t, g, |_, _| {})?;
        out.push((
            from_array(&y[..4]),
            crate::geometry::Mat4::from_column_slice(&y[4..]),
        ));
    }
    Ok(out)
}

/// Choice of trivialization of ξ along an orbit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Framing {
    /// The global quaternionic frame.
    Global,
    /// Constant coordinate frame of the complementary plane along an axis
    /// circle of a split system (zero-linking pushoff).
    Axis { axis: Axis },
    /// Global frame rotated by `2π·turns·t/period`; coordinates in this frame
    /// have polar angle `θ_global − 2π·turns·t/period`.
    Twisted { turns: i64, period: f64 },
}

impl Framing {
    /// Frame at time `t` at the point `z` (not necessarily on Σ).
    pub fn frame_at(&self, sys: &StarShapedSystem, z: &Vec4, t: f64) -> ContactFrame {
        match *self {
            Framing::Global => frame_unchecked(sys, z).0,
            Framing::Axis { axis: Axis::First } => ContactFrame {
                e1: Vec4::new(0.0, 0.0, 1.0, 0.0),
                e2: Vec4::new(0.0, 0.0, 0.0, 1.0),
            },
            Framing::Axis { axis: Axis::Second } => ContactFrame {
                e1: Vec4::new(1.0, 0.0, 0.0, 0.0),
                e2: Vec4::new(0.0, 1.0, 0.0, 0.0),
            },
            Framing::Twisted { turns, period } => {
                let f = frame_unchecked(sys, z).0;
                let phi = 2.0 * PI * turns as f64 * t / period;
                let (s, c) = phi.sin_cos();
                ContactFrame {
                    e1: f.e1 * c + f.e2 * s,
                    e2: f.e2 * c - f.e1 * s,
                }
            }
        }
    }

    /// Axis framings only make sense on the corresponding axis circle.
    pub(crate) fn check_applicable(&self, sys: &StarShapedSystem, z: &Vec4) -> Result<()> {
        if let Framing::Axis { axis } = self {
            if sys.split_params().is_none() {
                return Err(ReebError::NotSplitSystem);
            }
            let c = axis.vanishing_coordinate();
            let off = (z[2 * c].powi(2) + z[2 * c + 1].powi(2)).sqrt();
            if off > 1e-8 {
                return Err(ReebError::InvalidInput(format!(
                    "axis framing {axis:?} requested at a point {off:e} away from the axis"
                )));
            }
        }
        if let Framing::Twisted { period, .. } = self {
            if !(*period > 0.0) {
                return Err(ReebError::InvalidInput("twisted framing needs a positive period".into()));
            }
        }
        Ok(())
    }
}

/// Coordinates of `π_λ v` in the chosen frame at `(z, t)`.
pub(crate) fn frame_coordinates(
    sys: &StarShapedSystem,
    framing: &Framing,
    z: &Vec4,
    t: f64,
    v: &Vec4,
) -> Vec2 {
    let f = framing.frame_at(sys, z, t);
    xi_coordinates(z, &sys.reeb_vector(z), &f, v)
}

/// Linearized transverse flow `Φ(t)` on a uniform grid over `[0, T]`.
#[derive(Debug, Clone)]
pub struct SymplecticPath {
    pub t_grid: Vec<f64>,
    pub matrices: Vec<Mat2>,
    /// Total time `T`.
    pub total_time: f64,
    pub framing: Framing,
}

impl SymplecticPath {
    pub fn end(&self) -> &Mat2 {
        self.matrices.last().expect("path has samples")
    }

    /// `max_t |det Φ(t) − 1|`.
    pub fn max_det_defect(&self) -> f64 {
        self.matrices
            .iter()
            .map(|m| (m.determinant() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Transverse linearized flow: `Φ(t) = (frame coords) ∘ π_λ ∘ Dφ^t`
/// restricted to ξ at `z0`, sampled at `samples + 1` uniform times.
pub fn transverse_linearized(
    sys: &StarShapedSystem,
    z0: &SurfacePoint,
    total_time: f64,
    framing: Framing,
    samples: usize,
    ctl: &StepControl,
) -> Result<SymplecticPath> {
    if !(total_time > 0.0) {
        return Err(ReebError::InvalidInput(format!(
            "linearization time must be positive, got {total_time}"
        )));
    }
    if samples == 0 {
        return Err(ReebError::InvalidInput("need at least one sample".into()));
    }
    framing.check_applicable(sys, &z0.z)?;
    let grid: Vec<f64> = (0..=samples)
        .map(|i| total_time * i as f64 / samples as f64)
        .collect();
    let sol = variational_on_grid(sys, z0, &grid, ctl)?;
    let start = framing.frame_at(sys, &z0.z, 0.0);
    let matrices = grid
        .iter()
        .zip(&sol)
        .map(|(&t, (z, m))| {
            let c1 = frame_coordinates(sys, &framing, z, t, &(m * start.e1));
            let c2 = frame_coordinates(sys, &framing, z, t, &(m * start.e2));
            Mat2::from_columns(&[c1, c2])
        })
        .collect();
    Ok(SymplecticPath {
        t_grid: grid,
        matrices,
        total_time,
        framing,
    })
}

/// Continuous lift `θ(t)` of the polar angle of `Φ(t)u₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleFunction {
    pub t: Vec<f64>,
    pub theta: Vec<f64>,
}

impl AngleFunction {
    pub fn total_change(&self) -> f64 {
        self.theta.last().unwrap() - self.theta[0]
    }

    /// Least-squares slope of `θ(t)` over the second half of the time range.
    pub fn tail_slope(&self) -> f64 {
        let t_end = *self.t.last().unwrap();
        let pts: Vec<(f64, f64)> = self
            .t
            .iter()
            .zip(&self.theta)
            .filter(|(t, _)| **t >= 0.5 * t_end)
            .map(|(t, th)| (*t, *th))
            .collect();
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let mth = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let num: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mth)).sum();
        let den: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        num / den
    }
}

fn wrap_to_pi(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

/// Lifts the polar angle of `Φ(t)u₀` continuously along the grid.
pub fn polar_angle(path: &SymplecticPath, u0: &Vec2) -> Result<AngleFunction> {
    if u0.norm() == 0.0 {
        return Err(ReebError::InvalidInput("u0 must be nonzero".into()));
    }
    let mut theta = Vec::with_capacity(path.matrices.len());
    let mut prev = u0[1].atan2(u0[0]);
    let mut lifted = prev;
    for (i, m) in path.matrices.iter().enumerate() {
        let w = m * u0;
        let raw = w[1].atan2(w[0]);
        let jump = wrap_to_pi(raw - prev);
        if jump.abs() >= PI / 2.0 {
            return Err(ReebError::GridTooCoarse { index: i, jump });
        }
        lifted += jump;
        prev = raw;
        theta.push(lifted);
    }
    Ok(AngleFunction {
        t: path.t_grid.clone(),
        theta,
    })
}

/// Computes the angle lift of the linearized flow, bisecting the sampling
/// step until every raw increment is below π/2.
pub fn transverse_angle(
    sys: &StarShapedSystem,
    z0: &SurfacePoint,
    total_time: f64,
    framing: Framing,
    u0: &Vec2,
    ctl: &StepControl,
) -> Result<(SymplecticPath, AngleFunction)> {
    let mut samples = ((total_time * 8.0).ceil() as usize).max(16);
    loop {
        let path = transverse_linearized(sys, z0, total_time, framing, samples, ctl)?;
        match polar_angle(&path, u0) {
            Ok(angle) => return Ok((path, angle)),
            Err(ReebError::GridTooCoarse { .. }) if samples < (1 << 24) => samples *= 2,
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{omega, Mat4};
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sp(sys: &StarShapedSystem, z: [f64; 4]) -> SurfacePoint {
        SurfacePoint::project(sys, Vec4::from(z)).unwrap()
    }

    /// Closed form of the split flow: `z_j(t) = e^{2it/a_j} z_j(0)`.
    fn split_exact(a: f64, b: f64, z: &Vec4, t: f64) -> Vec4 {
        let z0 = Complex64::new(z[0], z[1]) * Complex64::from_polar(1.0, 2.0 * t / a);
        let z1 = Complex64::new(z[2], z[3]) * Complex64::from_polar(1.0, 2.0 * t / b);
        Vec4::new(z0.re, z0.im, z1.re, z1.im)
    }

    #[test]
    fn coefficient_consistency() {
        for i in 0..rkf78::STAGES {
            let row: f64 = rkf78::A[i].iter().sum();
            assert!((row - rkf78::C[i]).abs() < 1e-14);
        }
        assert!((rkf78::B8.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(rkf78::ERR.iter().sum::<f64>().abs() < 1e-14);
    }

    #[test]
    fn hopf_period() {
        let sys = StarShapedSystem::hopf();
        let z0 = sp(&sys, [1.0, 0.0, 0.0, 0.0]);
        let end = flow_to(&sys, &z0, PI, &StepControl::default()).unwrap();
        assert_abs_diff_eq!(end.z, z0.z, epsilon = 1e-9);
    }

    #[test]
    fn split_period_and_closed_form() {
        let sys = StarShapedSystem::split(4.0, 1.0).unwrap();
        let z0 = sp(&sys, [2.0, 0.0, 0.0, 0.0]);
        let end = flow_to(&sys, &z0, 4.0 * PI, &StepControl::default()).unwrap();
        assert_abs_diff_eq!(end.z, z0.z, epsilon = 1e-9);

        let (a, b) = (1.0, 2f64.sqrt());
        let sys = StarShapedSystem::split(a, b).unwrap();
        let z0 = sp(&sys, [0.3, -0.5, 0.7, 0.2]);
        let traj = integrate(&sys, &z0, 30.0, &StepControl::default()).unwrap();
        for (t, p) in traj.t_samples.iter().zip(&traj.states) {
            assert_abs_diff_eq!(p.z, split_exact(a, b, &z0.z, *t), epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_time_is_identity() {
        let sys = StarShapedSystem::split(1.0, 2.0).unwrap();
        let z0 = sp(&sys, [0.3, -0.5, 0.7, 0.2]);
        let traj = integrate(&sys, &z0, 0.0, &StepControl::default()).unwrap();
        assert_eq!(traj.states.len(), 1);
        assert_abs_diff_eq!(traj.end().z, z0.z, epsilon = 1e-15);
        let tiny = flow_to(&sys, &z0, 1e-12, &StepControl::default()).unwrap();
        assert_abs_diff_eq!(tiny.z, z0.z, epsilon = 1e-11);
    }

    #[test]
    fn negative_time_is_rejected() {
        let sys = StarShapedSystem::hopf();
        let z0 = sp(&sys, [1.0, 0.0, 0.0, 0.0]);
        assert!(integrate(&sys, &z0, -1.0, &StepControl::default()).is_err());
    }

    #[test]
    fn energy_drift_stays_small() {
        let sys = StarShapedSystem::perturbed_split(1.0, 2f64.sqrt(), 0.3).unwrap();
        let z0 = sp(&sys, [0.3, -0.5, 0.7, 0.2]);
        let traj = integrate(&sys, &z0, 1000.0, &StepControl::default()).unwrap();
        assert!(traj.max_residual <= 1e-9, "{}", traj.max_residual);
        assert!(traj.t_samples.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn flow_property() {
        let sys = StarShapedSystem::perturbed_split(1.0, 2f64.sqrt(), 0.3).unwrap();
        let ctl = StepControl::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let z0 = sp(&sys, [rng.gen(), rng.gen(), rng.gen(), rng.gen()]);
            let (s, t) = (rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0));
            let direct = flow_to(&sys, &z0, s + t, &ctl).unwrap();
            let mid = flow_to(&sys, &z0, s, &ctl).unwrap();
            let composed = flow_to(&sys, &mid, t, &ctl).unwrap();
            assert_abs_diff_eq!(direct.z, composed.z, epsilon = 1e-7);
        }
    }

    #[test]
    fn state_at_and_interpolation_agree_with_closed_form() {
        let (a, b) = (1.0, 2f64.sqrt());
        let sys = StarShapedSystem::split(a, b).unwrap();
        let z0 = sp(&sys, [0.3, -0.5, 0.7, 0.2]);
        let traj = integrate(&sys, &z0, 20.0, &StepControl::default()).unwrap();
        for t in [0.0, 0.37, 5.5, 13.2, 20.0] {
            let exact = split_exact(a, b, &z0.z, t);
            assert_abs_diff_eq!(traj.state_at(t).unwrap().z, exact, epsilon = 1e-9);
            assert_abs_diff_eq!(traj.interpolate(t), exact, epsilon = 1e-4);
        }
    }

    #[test]
    fn variational_matches_finite_differences() {
        // Finite differences along tangent directions (X, e1, e2) through
        // perturbed trajectories re-projected onto Σ.
        let sys = StarShapedSystem::perturbed_split(1.0, 2f64.sqrt(), 0.3).unwrap();
        let ctl = StepControl::default();
        let z0 = sp(&sys, [0.6, 0.1, -0.4, 0.5]);
        let t_end = 10.0;
        let (_, m) = variational_on_grid(&sys, &z0, &[t_end], &ctl).unwrap()[0];
        let f = frame_unchecked(&sys, &z0.z).0;
        let h = 1e-6;
        for v in [sys.reeb_vector(&z0.z), f.e1, f.e2] {
            let plus = flow_to(&sys, &SurfacePoint::project(&sys, z0.z + v * h).unwrap(), t_end, &ctl).unwrap();
            let minus = flow_to(&sys, &SurfacePoint::project(&sys, z0.z - v * h).unwrap(), t_end, &ctl).unwrap();
            let fd = (plus.z - minus.z) / (2.0 * h);
            assert!((fd - m * v).norm() < 1e-5, "{}", (fd - m * v).norm());
        }
    }

    #[test]
    fn linearized_hopf_fiber_rotates_twice() {
        let sys = StarShapedSystem::hopf();
        let z0 = sp(&sys, [1.0, 0.0, 0.0, 0.0]);
        let ctl = StepControl::default();
        let (path, angle) =
            transverse_angle(&sys, &z0, PI, Framing::Global, &Vec2::new(1.0, 0.0), &ctl).unwrap();
        assert_abs_diff_eq!(angle.total_change(), 4.0 * PI, epsilon = 1e-8);
        assert_abs_diff_eq!(*path.end(), Mat2::identity(), epsilon = 1e-8);
        assert!(path.max_det_defect() < 1e-7);
        let (_, disk) = transverse_angle(
            &sys,
            &z0,
            PI,
            Framing::Axis { axis: Axis::First },
            &Vec2::new(1.0, 0.0),
            &ctl,
        )
        .unwrap();
        assert_abs_diff_eq!(disk.total_change(), 2.0 * PI, epsilon = 1e-8);
        // three covers
        let (_, three) =
            transverse_angle(&sys, &z0, 3.0 * PI, Framing::Global, &Vec2::new(0.0, 1.0), &ctl).unwrap();
        assert_abs_diff_eq!(three.total_change(), 12.0 * PI, epsilon = 1e-7);
    }

    #[test]
    fn linearized_split_axis_rotation() {
        // δż₁ = (2i/b) δz₁ along {z₁ = 0}.
        let (a, b) = (1.0, 2.0);
        let sys = StarShapedSystem::split(a, b).unwrap();
        let z0 = sp(&sys, [1.0, 0.0, 0.0, 0.0]);
        let ctl = StepControl::default();
        let framing = Framing::Axis { axis: Axis::First };
        let (path, angle) = transverse_angle(&sys, &z0, PI, framing, &Vec2::new(1.0, 0.0), &ctl).unwrap();
        assert_abs_diff_eq!(angle.total_change(), PI, epsilon = 1e-8);
        let rot = |x: f64| Mat2::new(x.cos(), -x.sin(), x.sin(), x.cos());
        assert_abs_diff_eq!(*path.end(), rot(PI), epsilon = 1e-8);

        let b = 2f64.sqrt();
        let sys = StarShapedSystem::split(a, b).unwrap();
        let path = transverse_linearized(&sys, &z0, PI * a, framing, 64, &ctl).unwrap();
        assert_abs_diff_eq!(*path.end(), rot(2.0 * PI * a / b), epsilon = 1e-8);
        assert!(path.max_det_defect() < 1e-7);
    }

    #[test]
    fn twisted_global_frame_matches_axis_frame() {
        let (a, b) = (1.0, 2f64.sqrt());
        let sys = StarShapedSystem::split(a, b).unwrap();
        let z0 = sp(&sys, [1.0, 0.0, 0.0, 0.0]);
        let ctl = StepControl::default();
        let u = Vec2::new(0.3, 0.8);
        let (_, axis) =
            transverse_angle(&sys, &z0, 5.0 * PI, Framing::Axis { axis: Axis::First }, &u, &ctl).unwrap();
        let (_, twisted) = transverse_angle(
            &sys,
            &z0,
            5.0 * PI,
            Framing::Twisted { turns: 1, period: PI * a },
            &u,
            &ctl,
        )
        .unwrap();
        assert_abs_diff_eq!(axis.total_change(), twisted.total_change(), epsilon = 1e-7);
    }

    #[test]
    fn symplecticity_on_perturbed_system() {
        let sys = StarShapedSystem::perturbed_split(1.0, 2f64.sqrt(), 0.3).unwrap();
        let z0 = sp(&sys, [0.6, 0.1, -0.4, 0.5]);
        let path =
            transverse_linearized(&sys, &z0, 20.0, Framing::Global, 200, &StepControl::default()).unwrap();
        assert!(path.max_det_defect() < 1e-7);
        assert_abs_diff_eq!(path.matrices[0], Mat2::identity(), epsilon = 1e-12);
    }

    #[test]
    fn polar_angle_edge_cases() {
        let path = SymplecticPath {
            t_grid: vec![0.0, 1.0, 2.0],
            matrices: vec![Mat2::identity(); 3],
            total_time: 2.0,
            framing: Framing::Global,
        };
        let a = polar_angle(&path, &Vec2::new(0.0, 2.0)).unwrap();
        assert!(a.theta.iter().all(|t| (*t - PI / 2.0).abs() < 1e-15));
        assert!(polar_angle(&path, &Vec2::zeros()).is_err());
        let rot = |x: f64| Mat2::new(x.cos(), -x.sin(), x.sin(), x.cos());
        let coarse = SymplecticPath {
            t_grid: vec![0.0, 1.0],
            matrices: vec![Mat2::identity(), rot(2.0)],
            total_time: 1.0,
            framing: Framing::Global,
        };
        assert!(matches!(
            polar_angle(&coarse, &Vec2::new(1.0, 0.0)),
            Err(ReebError::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn cesaro_slope_is_cauchy() {
        let sys = StarShapedSystem::perturbed_split(1.0, 2f64.sqrt(), 0.2).unwrap();
        let z0 = sp(&sys, [1.0, 0.0, 0.0, 0.0]);
        let ctl = StepControl::default();
        let slope = |t: f64| {
            transverse_angle(&sys, &z0, t, Framing::Global, &Vec2::new(1.0, 0.0), &ctl)
                .unwrap()
                .1
                .tail_slope()
        };
        let (s1, s2, s3) = (slope(50.0), slope(100.0), slope(200.0));
        assert!((s2 - s3).abs() <= (s1 - s2).abs().max(1e-6) + 1e-3);
        assert!((s2 - s3).abs() < 20.0 / 100.0);
    }

    #[test]
    fn frame_coordinates_are_symplectic_pairing() {
        let sys = StarShapedSystem::split(1.0, 2f64.sqrt()).unwrap();
        let z0 = sp(&sys, [0.6, 0.1, -0.4, 0.5]);
        let f = frame_unchecked(&sys, &z0.z).0;
        let v = f.e1 * 0.7 - f.e2 * 0.2 + sys.reeb_vector(&z0.z) * 3.0;
        let c = frame_coordinates(&sys, &Framing::Global, &z0.z, 0.0, &v);
        assert_abs_diff_eq!(c, Vec2::new(0.7, -0.2), epsilon = 1e-12);
        assert_abs_diff_eq!(omega(&f.e1, &f.e2), 1.0, epsilon = 1e-12);
        let _ = Mat4::identity();
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let sys = StarShapedSystem::hopf();
        let z0 = sp(&sys, [1.0, 0.0, 0.0, 0.0]);
        let traj = integrate(&sys, &z0, 1.0, &StepControl::default()).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x0,y0,x1,y1\n"));
        assert_eq!(text.lines().count(), traj.states.len() + 1);
    }
}
