//! Disk pages of the open book with binding an axis circle of a split
//! system: charts, first-return maps, return times, transversality and
//! contact area.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ReebError, Result};
use crate::flow::{flow_to, StepControl};
use crate::geometry::{omega, Axis, StarShapedSystem, SurfacePoint, Vec4};
use crate::orbits::precise_control;

fn complex(z: &Vec4, j: usize) -> Complex64 {
    Complex64::new(z[2 * j], z[2 * j + 1])
}

fn wrap(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

/// Page `{arg z_c + tilt·arg z_o = θ₀}` of a split system, where `z_c` is the
/// coordinate vanishing on the binding and `z_o` the other one.
#[derive(Debug, Clone)]
pub struct SectionPage {
    sys: StarShapedSystem,
    pub binding: Axis,
    pub theta0: f64,
    /// Zero for the pages of the open book; nonzero only for test pages.
    pub tilt: f64,
    coef_c: f64,
    coef_o: f64,
}

/// Point of a page in chart coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub rho: f64,
    pub phi: f64,
}

impl SectionPage {
    pub fn system(&self) -> &StarShapedSystem {
        &self.sys
    }

    fn c(&self) -> usize {
        self.binding.vanishing_coordinate()
    }

    fn o(&self) -> usize {
        1 - self.c()
    }

    /// Upper end of the radial chart coordinate; there the page meets the
    /// other axis circle.
    pub fn rho_max(&self) -> f64 {
        self.coef_c.sqrt()
    }

    /// Chart `(ρ, φ) ↦ Σ` with `|z_c| = ρ`, `arg z_o = φ`.
    pub fn chart(&self, p: ChartPoint) -> Vec4 {
        let rho = p.rho.clamp(0.0, self.rho_max());
        let zc = Complex64::from_polar(rho, self.theta0 - self.tilt * p.phi);
        // exact zero on the opposite axis circle, where the square root is
        // most sensitive to rounding
        let r = if rho >= self.rho_max() {
            0.0
        } else {
            (self.coef_o * (self.coef_c - rho * rho) / self.coef_c).max(0.0).sqrt()
        };
        let zo = Complex64::from_polar(r, p.phi);
        let mut z = Vec4::zeros();
        let (c, o) = (self.c(), self.o());
        z[2 * c] = zc.re;
        z[2 * c + 1] = zc.im;
        z[2 * o] = zo.re;
        z[2 * o + 1] = zo.im;
        z
    }

    /// Inverse chart of a point on the page.
    pub fn chart_coordinates(&self, z: &Vec4) -> ChartPoint {
        ChartPoint {
            rho: complex(z, self.c()).norm(),
            phi: complex(z, self.o()).arg().rem_euclid(2.0 * PI),
        }
    }

    /// Defining function wrapped to `(−π, π]`; the page is its zero set.
    pub fn defining_angle(&self, z: &Vec4) -> f64 {
        let mut f = complex(z, self.c()).arg() - self.theta0;
        if self.tilt != 0.0 {
            f += self.tilt * complex(z, self.o()).arg();
        }
        wrap(f)
    }

    /// Derivative of the defining function along the Reeb flow.
    pub fn flow_rate(&self, z: &Vec4) -> f64 {
        let x = self.sys.reeb_vector(z);
        let rate = |j: usize| {
            let w = complex(z, j);
            (complex(&x, j) / w).im
        };
        let mut r = rate(self.c());
        if self.tilt != 0.0 {
            r += self.tilt * rate(self.o());
        }
        r
    }

    /// Distance of `z` from the binding, measured by `|z_c|`.
    pub fn binding_distance(&self, z: &Vec4) -> f64 {
        complex(z, self.c()).norm()
    }
}

/// Page of the open book whose binding is the axis circle `binding`.
pub fn build_page(sys: &StarShapedSystem, binding: Axis, theta0: f64) -> Result<SectionPage> {
    build_tilted_page(sys, binding, theta0, 0.0)
}

/// Test page `{arg z_c + tilt·arg z_o = θ₀}`; `tilt = 0` gives [`build_page`].
pub fn build_tilted_page(sys: &StarShapedSystem, binding: Axis, theta0: f64, tilt: f64) -> Result<SectionPage> {
    let (a, b) = sys.split_params().ok_or(ReebError::NotSplitSystem)?;
    let (coef_c, coef_o) = match binding {
        Axis::First => (b, a),
        Axis::Second => (a, b),
    };
    let page = SectionPage {
        sys: sys.clone(),
        binding,
        theta0: theta0.rem_euclid(2.0 * PI),
        tilt,
        coef_c,
        coef_o,
    };
    let scan = transversality_scan(&page, 8, 8);
    if !(scan.min_rate > 0.0) {
        return Err(ReebError::NonTransverseCrossing {
            t: 0.0,
            rate: scan.min_rate,
        });
    }
    Ok(page)
}

/// First return to the page.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnPoint {
    pub point: ChartPoint,
    pub z: Vec4,
    pub tau: f64,
}

/// Time at which the lifted defining angle reaches `target` on
/// `[t_lo, t_hi]`, starting from `z_lo` at `t_lo` with lifted angle `f_lo`.
fn locate_level(
    page: &SectionPage,
    z_lo: &SurfacePoint,
    (t_lo, f_lo): (f64, f64),
    t_hi: f64,
    target: f64,
    ctl: &StepControl,
) -> Result<(f64, SurfacePoint)> {
    let (mut lo, mut hi) = (0.0, t_hi - t_lo);
    let mut t = 0.5 * (lo + hi);
    let mut best = *z_lo;
    for _ in 0..100 {
        let z = flow_to(&page.sys, z_lo, t, ctl)?;
        let f = f_lo + wrap(page.defining_angle(&z.z) - page.defining_angle(&z_lo.z));
        let g = f - target;
        best = z;
        if g.abs() < 1e-14 || hi - lo < 1e-13 {
            break;
        }
        if g < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let rate = page.flow_rate(&z.z);
        let newton = t - g / rate;
        t = if rate > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok((t_lo + t, best))
}

/// Integrates from `z` until the defining angle has advanced by `2π`.
pub fn return_map(page: &SectionPage, p: ChartPoint) -> Result<ReturnPoint> {
    let z0 = SurfacePoint::project(&page.sys, page.chart(p))?;
    return_from(page, &z0)
}

fn return_from(page: &SectionPage, z0: &SurfacePoint) -> Result<ReturnPoint> {
    if page.binding_distance(&z0.z) < 1e-12 {
        return Err(ReebError::InvalidInput("start point lies on the binding".into()));
    }
    let ctl = precise_control();
    let f0 = page.defining_angle(&z0.z);
    let target = f0 + 2.0 * PI;
    let (mut t, mut lifted, mut z) = (0.0, f0, *z0);
    loop {
        let rate = page.flow_rate(&z.z).max(1e-3);
        let dt = (0.5 / rate).min(1.0);
        let next = flow_to(&page.sys, &z, dt, &ctl)?;
        let inc = wrap(page.defining_angle(&next.z) - page.defining_angle(&z.z));
        if lifted + inc >= target {
            let (tau, hit) = locate_level(page, &z, (t, lifted), t + dt, target, &ctl)?;
            return Ok(ReturnPoint {
                point: page.chart_coordinates(&hit.z),
                z: hit.z,
                tau,
            });
        }
        lifted += inc;
        t += dt;
        z = next;
        if t > 1e6 {
            return Err(ReebError::StepFailure { t, h: dt });
        }
    }
}

/// `n` successive returns from `start`, as `(ρ, φ, τ)` rows.
pub fn return_orbit(page: &SectionPage, start: ChartPoint, n: usize) -> Result<Vec<ReturnPoint>> {
    let mut out = Vec::with_capacity(n);
    let mut z = SurfacePoint::project(&page.sys, page.chart(start))?;
    for _ in 0..n {
        let r = return_from(page, &z)?;
        z = SurfacePoint { z: r.z, residual: 0.0 };
        out.push(r);
    }
    Ok(out)
}

pub fn write_return_orbit_csv<W: Write>(rows: &[ReturnPoint], out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iterate", "rho", "phi", "tau"])?;
    for (i, r) in rows.iter().enumerate() {
        w.serialize((i + 1, r.point.rho, r.point.phi, r.tau))?;
    }
    w.flush()?;
    Ok(())
}

/// Chart grid used by scans: interior rows plus the near-binding rows
/// `ρ ∈ {1e-2, 1e-3, 1e-4}`.
pub fn scan_grid(page: &SectionPage, n_rho: usize, n_phi: usize) -> Vec<ChartPoint> {
    let mut rhos: Vec<f64> = (0..n_rho)
        .map(|i| page.rho_max() * (i as f64 + 0.5) / n_rho as f64)
        .collect();
    rhos.extend([1e-2, 1e-3, 1e-4].iter().filter(|r| **r < page.rho_max()));
    let mut out = Vec::new();
    for rho in rhos {
        for j in 0..n_phi {
            out.push(ChartPoint {
                rho,
                phi: 2.0 * PI * j as f64 / n_phi as f64,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnTimeBounds {
    pub inf: f64,
    pub sup: f64,
    pub at_inf: ChartPoint,
    pub at_sup: ChartPoint,
    pub grid_points: usize,
}

/// Extremes of the return time over [`scan_grid`].
pub fn return_time_bounds(page: &SectionPage, n_rho: usize, n_phi: usize) -> Result<ReturnTimeBounds> {
    let grid = scan_grid(page, n_rho, n_phi);
    let taus: Vec<(ChartPoint, f64)> = grid
        .par_iter()
        .map(|p| Ok((*p, return_map(page, *p)?.tau)))
        .collect::<Result<_>>()?;
    let lo = taus.iter().min_by(|x, y| x.1.total_cmp(&y.1)).unwrap();
    let hi = taus.iter().max_by(|x, y| x.1.total_cmp(&y.1)).unwrap();
    Ok(ReturnTimeBounds {
        inf: lo.1,
        sup: hi.1,
        at_inf: lo.0,
        at_sup: hi.0,
        grid_points: taus.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransversalityReport {
    pub min_rate: f64,
    pub at: ChartPoint,
    pub max_rate: f64,
    pub grid_points: usize,
}

/// Minimum over [`scan_grid`] of the flow derivative of the defining function.
pub fn transversality_scan(page: &SectionPage, n_rho: usize, n_phi: usize) -> TransversalityReport {
    let grid = scan_grid(page, n_rho, n_phi);
    let mut report = TransversalityReport {
        min_rate: f64::INFINITY,
        at: grid[0],
        max_rate: f64::NEG_INFINITY,
        grid_points: grid.len(),
    };
    for p in grid {
        let r = page.flow_rate(&page.chart(p));
        if r < report.min_rate {
            report.min_rate = r;
            report.at = p;
        }
        report.max_rate = report.max_rate.max(r);
    }
    report
}

/// Gauss-Legendre nodes and weights on `[0, 1]` (Golub-Welsch).
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i.abs_diff(j) == 1 {
            let k = i.max(j) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let w = 2.0 * eig.eigenvectors[(0, i)].powi(2);
            (0.5 * (x + 1.0), 0.5 * w)
        })
        .collect();
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    nodes
}

/// Both evaluations of `∫_page dλ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PageArea {
    pub quadrature: f64,
    pub stokes: f64,
    pub relative_difference: f64,
}

/// `dλ(∂_φ F, ∂_ρ F)` for a map `F` of the chart, by central differences.
fn area_density(f: &dyn Fn(ChartPoint) -> Result<Vec4>, p: ChartPoint, h: f64) -> Result<f64> {
    let d_phi = (f(ChartPoint { phi: p.phi + h, ..p })? - f(ChartPoint { phi: p.phi - h, ..p })?) / (2.0 * h);
    let d_rho = (f(ChartPoint { rho: p.rho + h, ..p })? - f(ChartPoint { rho: p.rho - h, ..p })?) / (2.0 * h);
    Ok(omega(&d_phi, &d_rho))
}

/// `∫ dλ` over the chart rectangle `[ρ₀, ρ₁] × [φ₀, φ₁]`, pulled back by `f`.
fn rectangle_area(
    f: &(dyn Fn(ChartPoint) -> Result<Vec4> + Sync),
    rho: (f64, f64),
    phi: (f64, f64),
    n_rho: usize,
    n_phi: usize,
    h: f64,
) -> Result<f64> {
    let gl_rho = gauss_legendre(n_rho);
    let gl_phi = gauss_legendre(n_phi);
    let nodes: Vec<(ChartPoint, f64)> = gl_rho
        .iter()
        .flat_map(|(x, wx)| {
            gl_phi.iter().map(move |(y, wy)| {
                (
                    ChartPoint {
                        rho: rho.0 + (rho.1 - rho.0) * x,
                        phi: phi.0 + (phi.1 - phi.0) * y,
                    },
                    wx * wy,
                )
            })
        })
        .collect();
    let sum: f64 = nodes
        .par_iter()
        .map(|(p, w)| Ok(w * area_density(f, *p, h)?))
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum();
    Ok(sum * (rho.1 - rho.0) * (phi.1 - phi.0))
}

/// `∫_page dλ` by quadrature on the chart and by Stokes along the binding.
pub fn page_area(page: &SectionPage) -> Result<PageArea> {
    let chart = |p: ChartPoint| Ok(page.chart(p));
    let rho_max = page.rho_max();
    // the chart derivative is singular only at ρ = ρ_max, a null set
    let quadrature = rectangle_area(&chart, (0.0, rho_max), (0.0, 2.0 * PI), 24, 24, 1e-6 * rho_max)?;
    // ∮ λ over the binding ρ = 0, oriented by increasing φ
    let m = 256;
    let stokes: f64 = (0..m)
        .map(|j| {
            let phi = 2.0 * PI * j as f64 / m as f64;
            let h = 1e-6;
            let z = page.chart(ChartPoint { rho: 0.0, phi });
            let dz = (page.chart(ChartPoint { rho: 0.0, phi: phi + h })
                - page.chart(ChartPoint { rho: 0.0, phi: phi - h }))
                / (2.0 * h);
            0.5 * omega(&z, &dz) * 2.0 * PI / m as f64
        })
        .sum();
    let relative_difference = (quadrature - stokes).abs() / stokes.abs();
    if relative_difference > 1e-5 {
        return Err(ReebError::StokesMismatch { quadrature, stokes });
    }
    Ok(PageArea {
        quadrature,
        stokes,
        relative_difference,
    })
}

/// Area of a chart rectangle and of its image under the return map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaPreservation {
    pub rho: (f64, f64),
    pub phi: (f64, f64),
    pub area: f64,
    pub image_area: f64,
    pub relative_difference: f64,
}

/// Compares `∫_R dλ` with `∫_{P(R)} dλ` for a chart rectangle `R`.
pub fn area_preservation(page: &SectionPage, rho: (f64, f64), phi: (f64, f64)) -> Result<AreaPreservation> {
    let chart = |p: ChartPoint| Ok(page.chart(p));
    let image = |p: ChartPoint| -> Result<Vec4> {
        let z = SurfacePoint::project(&page.sys, page.chart(p))?;
        let r = return_from(page, &z)?;
        Ok(r.z)
    };
    let area = rectangle_area(&chart, rho, phi, 6, 6, 1e-6)?;
    let image_area = rectangle_area(&image, rho, phi, 6, 6, 1e-5)?;
    Ok(AreaPreservation {
        rho,
        phi,
        area,
        image_area,
        relative_difference: (image_area - area).abs() / area.abs(),
    })
}
