//! Linking numbers of closed curves in S³ by signed crossing counts after a
//! stereographic projection, self-linking of orbit knots, and the linking
//! class of a link of periodic orbits.

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::{Matrix4, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ReebError, Result};
use crate::flow::integrate_on_grid;
use crate::geometry::{frame_unchecked, StarShapedSystem, Vec4};
use crate::orbits::{distance_to_orbit, precise_control, PeriodicOrbit};

type V3 = Vector3<f64>;
type V2 = Vector2<f64>;

/// Closed polygon in R⁴∖{0}; the last sample repeats the first.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedCurve {
    points: Vec<Vec4>,
}

impl ClosedCurve {
    /// Requires at least three distinct samples and closure within 1e-8.
    pub fn new(points: Vec<Vec4>) -> Result<Self> {
        if points.len() < 4 {
            return Err(ReebError::InvalidInput("a closed curve needs at least 3 samples".into()));
        }
        let gap = (points[0] - points[points.len() - 1]).norm();
        if gap > 1e-8 {
            return Err(ReebError::InvalidInput(format!("curve is not closed (gap {gap:.3e})")));
        }
        if points.iter().any(|p| p.norm() == 0.0 || !p.iter().all(|c| c.is_finite())) {
            return Err(ReebError::InvalidInput("curve passes through the origin".into()));
        }
        Ok(Self { points })
    }

    /// Closes an open sample list by repeating the first point.
    pub fn from_loop(mut points: Vec<Vec4>) -> Result<Self> {
        if let Some(first) = points.first().copied() {
            points.push(first);
        }
        Self::new(points)
    }

    pub fn points(&self) -> &[Vec4] {
        &self.points
    }

    pub fn segments(&self) -> usize {
        self.points.len() - 1
    }

    pub fn max_gap(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .fold(0.0, f64::max)
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        Self { points }
    }

    /// Orbit trace sampled uniformly in time with `n` segments.
    pub fn from_orbit(sys: &StarShapedSystem, orbit: &PeriodicOrbit, n: usize) -> Result<Self> {
        let mut pts = orbit.trace(sys, n)?;
        let first = pts[0];
        *pts.last_mut().unwrap() = first;
        Self::new(pts)
    }

    /// Orbit trace with consecutive samples at most `gap` apart.
    pub fn from_orbit_with_gap(sys: &StarShapedSystem, orbit: &PeriodicOrbit, gap: f64) -> Result<Self> {
        let coarse = Self::from_orbit(sys, orbit, 256)?;
        let n = ((coarse.length() / gap) * 1.05).ceil() as usize;
        Self::from_orbit(sys, orbit, n.max(256))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x0", "y0", "x1", "y1"])?;
        for p in &self.points {
            w.serialize((p[0], p[1], p[2], p[3]))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut points = Vec::new();
        for row in r.deserialize::<(f64, f64, f64, f64)>() {
            let (a, b, c, d) = row.map_err(|e| ReebError::InvalidInput(e.to_string()))?;
            points.push(Vec4::new(a, b, c, d));
        }
        Self::new(points)
    }

    fn on_sphere(&self) -> Vec<Vec4> {
        self.points.iter().map(|p| p / p.norm()).collect()
    }
}

/// Diagnostics of one linking computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkingComputation {
    pub value: i64,
    /// Signed count over crossings where the first curve is on top.
    pub first_over: i64,
    /// Signed count over crossings where the second curve is on top.
    pub second_over: i64,
    /// Result of the independent second projection.
    pub second_projection: i64,
    pub crossings: usize,
    pub min_distance: f64,
    pub required_distance: f64,
    pub attempts: usize,
}

/// Smallest distance between sample points of two curves, or `None` when it
/// exceeds `r`.
pub(crate) fn close_pair(a: &[Vec4], b: &[Vec4], r: f64) -> Option<f64> {
    let key = |p: &Vec4| -> [i64; 4] { std::array::from_fn(|i| (p[i] / r).floor() as i64) };
    let mut grid: HashMap<[i64; 4], Vec<usize>> = HashMap::new();
    for (i, p) in a.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let mut best: Option<f64> = None;
    for q in b {
        let k = key(q);
        for d in 0..81 {
            let off = [d % 3, (d / 3) % 3, (d / 9) % 3, d / 27];
            let cell: [i64; 4] = std::array::from_fn(|i| k[i] + off[i] as i64 - 1);
            if let Some(ids) = grid.get(&cell) {
                for &i in ids {
                    let dist = (a[i] - q).norm();
                    if dist < r {
                        best = Some(best.map_or(dist, |x: f64| x.min(dist)));
                    }
                }
            }
        }
    }
    best
}

fn subsample(points: &[Vec4], max: usize) -> Vec<Vec4> {
    let step = (points.len() / max).max(1);
    points.iter().step_by(step).copied().collect()
}

fn min_distance_brute(a: &[Vec4], b: &[Vec4]) -> f64 {
    let mut best = f64::INFINITY;
    for p in a {
        for q in b {
            best = best.min((p - q).norm());
        }
    }
    best
}

fn random_unit4(rng: &mut ChaCha8Rng) -> Vec4 {
    loop {
        let v = Vec4::from_fn(|_, _| StandardNormal.sample(rng));
        if v.norm() > 1e-6 {
            return v / v.norm();
        }
    }
}

/// Pole of S³ far from both curves among 64 random candidates.
fn choose_pole(a: &[Vec4], b: &[Vec4], rng: &mut ChaCha8Rng) -> Vec4 {
    let (sa, sb) = (subsample(a, 1500), subsample(b, 1500));
    let mut best = (f64::NEG_INFINITY, Vec4::zeros());
    for _ in 0..64 {
        let p = random_unit4(rng);
        let d = sa
            .iter()
            .chain(sb.iter())
            .map(|q| (q - p).norm())
            .fold(f64::INFINITY, f64::min);
        if d > best.0 {
            best = (d, p);
        }
    }
    best.1
}

/// Orientation-preserving stereographic projection from `pole`.
struct Stereographic {
    pole: Vec4,
    basis: [Vec4; 3],
}

impl Stereographic {
    fn new(pole: Vec4) -> Self {
        // Gram-Schmidt on the coordinate axes, starting from the pole
        let mut basis: Vec<Vec4> = vec![pole];
        for i in 0..4 {
            let mut v = Vec4::zeros();
            v[i] = 1.0;
            for b in &basis {
                v -= b * b.dot(&v);
            }
            if v.norm() > 1e-3 && basis.len() < 4 {
                basis.push(v / v.norm());
            }
        }
        let mut u = [basis[1], basis[2], basis[3]];
        let det = Matrix4::from_columns(&[pole, u[0], u[1], u[2]]).determinant();
        // the image is oriented as S³ when det[P, u1, u2, u3] < 0
        if det > 0.0 {
            u[2] = -u[2];
        }
        Self { pole, basis: u }
    }

    fn map(&self, x: &Vec4) -> V3 {
        let s = 1.0 - x.dot(&self.pole);
        V3::new(
            x.dot(&self.basis[0]) / s,
            x.dot(&self.basis[1]) / s,
            x.dot(&self.basis[2]) / s,
        )
    }
}

fn cross2(a: &V2, b: &V2) -> f64 {
    a.x * b.y - a.y * b.x
}

struct Projected {
    p: Vec<V2>,
    h: Vec<f64>,
}

fn project_curve(points: &[V3], dir: &V3) -> Projected {
    let helper = if dir.x.abs() < 0.9 { V3::x() } else { V3::y() };
    let e1 = (helper - dir * dir.dot(&helper)).normalize();
    let e2 = dir.cross(&e1);
    Projected {
        p: points.iter().map(|y| V2::new(y.dot(&e1), y.dot(&e2))).collect(),
        h: points.iter().map(|y| y.dot(dir)).collect(),
    }
}

/// Signed crossing sums `(first over, second over, crossings)`, or `None`
/// when the projection is not generic.
fn crossing_sums(a: &Projected, b: &Projected) -> Option<(i64, i64, usize)> {
    let seg_len = |c: &Projected| {
        c.p.windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .fold(0.0, f64::max)
    };
    let cell = seg_len(a).max(seg_len(b)).max(1e-12);
    let key = |v: &V2| ((v.x / cell).floor() as i64, (v.y / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
    for i in 0..a.p.len() - 1 {
        let (k0, k1) = (key(&a.p[i]), key(&a.p[i + 1]));
        for x in k0.0.min(k1.0)..=k0.0.max(k1.0) {
            for y in k0.1.min(k1.1)..=k0.1.max(k1.1) {
                grid.entry((x, y)).or_default().push(i as u32);
            }
        }
    }
    let mut stamp = vec![usize::MAX; a.p.len()];
    let (mut first_over, mut second_over, mut count) = (0i64, 0i64, 0usize);
    for j in 0..b.p.len() - 1 {
        let (q0, q1) = (b.p[j], b.p[j + 1]);
        let bd = q1 - q0;
        let (k0, k1) = (key(&q0), key(&q1));
        for x in k0.0.min(k1.0)..=k0.0.max(k1.0) {
            for y in k0.1.min(k1.1)..=k0.1.max(k1.1) {
                let Some(ids) = grid.get(&(x, y)) else { continue };
                for &i in ids {
                    let i = i as usize;
                    if stamp[i] == j {
                        continue;
                    }
                    stamp[i] = j;
                    let (p0, p1) = (a.p[i], a.p[i + 1]);
                    let ad = p1 - p0;
                    let denom = cross2(&ad, &bd);
                    let scale = ad.norm() * bd.norm();
                    let w = q0 - p0;
                    if denom.abs() <= 1e-12 * scale {
                        // parallel: degenerate only if the segments overlap
                        if cross2(&w, &ad).abs() <= 1e-12 * scale {
                            let t0 = w.dot(&ad) / ad.norm_squared();
                            let t1 = (q1 - p0).dot(&ad) / ad.norm_squared();
                            if t0.max(t1) >= 0.0 && t0.min(t1) <= 1.0 {
                                return None;
                            }
                        }
                        continue;
                    }
                    let s = cross2(&w, &bd) / denom;
                    let t = cross2(&w, &ad) / denom;
                    let eps = 1e-10;
                    if s < -eps || s > 1.0 + eps || t < -eps || t > 1.0 + eps {
                        continue;
                    }
                    if s.abs() < eps || (s - 1.0).abs() < eps || t.abs() < eps || (t - 1.0).abs() < eps {
                        return None;
                    }
                    let ha = a.h[i] + s * (a.h[i + 1] - a.h[i]);
                    let hb = b.h[j] + t * (b.h[j + 1] - b.h[j]);
                    if (ha - hb).abs() < 1e-12 {
                        return None;
                    }
                    let sign = denom.signum() as i64;
                    if ha > hb {
                        first_over += sign;
                    } else {
                        second_over -= sign;
                    }
                    count += 1;
                }
            }
        }
    }
    Some((first_over, second_over, count))
}

fn random_direction(rng: &mut ChaCha8Rng) -> V3 {
    loop {
        let v = V3::from_fn(|_, _| StandardNormal.sample(rng));
        if v.norm() > 1e-6 {
            return v.normalize();
        }
    }
}

/// Linking number by signed crossings, checked across two projections.
pub fn linking_number(c1: &ClosedCurve, c2: &ClosedCurve) -> Result<i64> {
    Ok(linking_computation(c1, c2, 0x11)?.value)
}

/// Full linking computation with a deterministic projection seed.
pub fn linking_computation(c1: &ClosedCurve, c2: &ClosedCurve, seed: u64) -> Result<LinkingComputation> {
    let required = 10.0 * c1.max_gap().max(c2.max_gap());
    if let Some(d) = close_pair(c1.points(), c2.points(), required) {
        return Err(ReebError::CurvesTooClose {
            distance: d,
            required,
        });
    }
    let min_distance = min_distance_brute(&subsample(c1.points(), 600), &subsample(c2.points(), 600));
    let (a, b) = (c1.on_sphere(), c2.on_sphere());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pole = choose_pole(&a, &b, &mut rng);
    let st = Stereographic::new(pole);
    let ya: Vec<V3> = a.iter().map(|x| st.map(x)).collect();
    let yb: Vec<V3> = b.iter().map(|x| st.map(x)).collect();
    let attempt_limit = 10;
    let mut attempts = 0;
    let mut results: Vec<(i64, i64, usize)> = Vec::new();
    while results.len() < 2 {
        attempts += 1;
        if attempts > attempt_limit + 1 {
            return Err(ReebError::DegenerateProjection {
                attempts: attempt_limit,
            });
        }
        let dir = random_direction(&mut rng);
        let (pa, pb) = (project_curve(&ya, &dir), project_curve(&yb, &dir));
        match crossing_sums(&pa, &pb) {
            Some(r) if r.0 == r.1 => results.push(r),
            _ => continue,
        }
    }
    let (first, second) = (results[0], results[1]);
    if first.0 != second.0 {
        return Err(ReebError::DegenerateProjection { attempts });
    }
    Ok(LinkingComputation {
        value: first.0,
        first_over: first.0,
        second_over: first.1,
        second_projection: second.0,
        crossings: first.2,
        min_distance,
        required_distance: required,
        attempts,
    })
}

/// Gauss linking integral by midpoint quadrature on the stereographic images
/// (slow reference; `O(n₁·n₂)`).
pub fn gauss_linking_integral(c1: &ClosedCurve, c2: &ClosedCurve) -> f64 {
    let (a, b) = (c1.on_sphere(), c2.on_sphere());
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a55);
    let st = Stereographic::new(choose_pole(&a, &b, &mut rng));
    let ya: Vec<V3> = a.iter().map(|x| st.map(x)).collect();
    let yb: Vec<V3> = b.iter().map(|x| st.map(x)).collect();
    let mids = |y: &[V3]| -> Vec<(V3, V3)> {
        y.windows(2).map(|w| ((w[0] + w[1]) * 0.5, w[1] - w[0])).collect()
    };
    let (ma, mb) = (mids(&ya), mids(&yb));
    let total: f64 = ma
        .iter()
        .map(|(ra, da)| {
            mb.iter()
                .map(|(rb, db)| {
                    let r = ra - rb;
                    r.dot(&da.cross(db)) / r.norm().powi(3)
                })
                .sum::<f64>()
        })
        .sum();
    total / (4.0 * std::f64::consts::PI)
}

/// Self-linking number with its values at both pushoff distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfLinking {
    pub value: i64,
    pub epsilon: f64,
    pub at_eps: i64,
    pub at_half_eps: i64,
}

/// Linking of the orbit with its pushoff along `e1` of the global frame.
pub fn self_linking(sys: &StarShapedSystem, orbit: &PeriodicOrbit) -> Result<SelfLinking> {
    self_linking_with(sys, orbit, 1e-3)
}

pub fn self_linking_with(sys: &StarShapedSystem, orbit: &PeriodicOrbit, epsilon: f64) -> Result<SelfLinking> {
    if orbit.k != 1 {
        return Err(ReebError::InvalidInput("self-linking needs a primitive orbit".into()));
    }
    let coarse = ClosedCurve::from_orbit(sys, orbit, 512)?;
    let min_e1 = coarse
        .points()
        .iter()
        .map(|z| frame_unchecked(sys, z).0.e1.norm())
        .fold(f64::INFINITY, f64::min);
    let at = |eps: f64| -> Result<i64> {
        let gap = eps * min_e1 / 20.0;
        let n = ((coarse.length() / gap) * 1.05).ceil() as usize;
        let grid: Vec<f64> = (0..=n).map(|i| orbit.t0 * i as f64 / n as f64).collect();
        let mut pts: Vec<Vec4> = integrate_on_grid(sys, &orbit.marked_point, &grid, &precise_control())?
            .into_iter()
            .map(|p| p.z)
            .collect();
        pts[n] = pts[0];
        let push: Vec<Vec4> = pts
            .iter()
            .map(|z| sys.radial_project(&(z + frame_unchecked(sys, z).0.e1 * eps)))
            .collect();
        linking_number(&ClosedCurve::new(pts)?, &ClosedCurve::new(push)?)
    };
    let at_eps = at(epsilon)?;
    let at_half_eps = at(epsilon / 2.0)?;
    if at_eps != at_half_eps {
        return Err(ReebError::EpsilonInstability {
            at_eps,
            at_half_eps,
        });
    }
    Ok(SelfLinking {
        value: at_eps,
        epsilon,
        at_eps,
        at_half_eps,
    })
}

/// One knot of a link with its integer weight in the class `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkComponent {
    pub orbit_id: String,
    pub coefficient: i64,
    /// `+1` when the knot is oriented by the flow, `−1` when reversed.
    pub orientation: i64,
    pub period: f64,
}

/// The class `y = Σ cᵢ yᵢ` dual to a link of periodic orbits, where `yᵢ`
/// counts oriented intersections with a Seifert surface of the `i`-th knot.
#[derive(Debug, Clone)]
pub struct LinkingClass {
    pub components: Vec<LinkComponent>,
    pub orbits: Vec<PeriodicOrbit>,
    curves: Vec<ClosedCurve>,
}

/// Sample spacing of link components used for evaluation.
pub const COMPONENT_GAP: f64 = 1e-3;

impl LinkingClass {
    /// Coefficient 1 and flow orientation on every component.
    pub fn new(sys: &StarShapedSystem, link: &[PeriodicOrbit]) -> Result<Self> {
        let spec: Vec<(PeriodicOrbit, i64, i64)> = link.iter().map(|o| (o.clone(), 1, 1)).collect();
        Self::with_coefficients(sys, &spec)
    }

    /// Arbitrary integer coefficients and orientations `±1`.
    pub fn with_coefficients(sys: &StarShapedSystem, link: &[(PeriodicOrbit, i64, i64)]) -> Result<Self> {
        if link.is_empty() {
            return Err(ReebError::InvalidInput("a link needs at least one component".into()));
        }
        for (i, (a, _, sa)) in link.iter().enumerate() {
            if sa.abs() != 1 {
                return Err(ReebError::InvalidInput("orientation must be ±1".into()));
            }
            for (j, (b, _, _)) in link.iter().enumerate().skip(i + 1) {
                if distance_to_orbit(sys, &b.marked_point.z, &a.marked_point, a.t0)? < 1e-6 {
                    return Err(ReebError::ComponentsIntersect {
                        first: i,
                        second: j,
                    });
                }
            }
        }
        let orbits: Vec<PeriodicOrbit> = link
            .iter()
            .map(|(o, _, _)| o.primitive(sys))
            .collect::<Result<_>>()?;
        let curves = orbits
            .iter()
            .zip(link)
            .map(|(o, (_, _, s))| {
                let c = ClosedCurve::from_orbit_with_gap(sys, o, COMPONENT_GAP)?;
                Ok(if *s < 0 { c.reversed() } else { c })
            })
            .collect::<Result<_>>()?;
        let components = orbits
            .iter()
            .zip(link)
            .map(|(o, (_, c, s))| LinkComponent {
                orbit_id: o.id.clone(),
                coefficient: *c,
                orientation: *s,
                period: o.t0,
            })
            .collect();
        Ok(Self {
            components,
            orbits,
            curves,
        })
    }

    /// Oriented knot of component `i`.
    pub fn curve(&self, i: usize) -> &ClosedCurve {
        &self.curves[i]
    }

    /// `⟨y, c⟩ = Σ cᵢ·link(c, Kᵢ)`.
    pub fn evaluate(&self, c: &ClosedCurve) -> Result<i64> {
        let mut total = 0;
        for (comp, curve) in self.components.iter().zip(&self.curves) {
            if comp.coefficient != 0 {
                total += comp.coefficient * linking_number(c, curve)?;
            }
        }
        Ok(total)
    }

    pub fn description(&self) -> String {
        self.components
            .iter()
            .map(|c| {
                format!(
                    "{}{}·y[{}]",
                    if c.orientation < 0 { "-" } else { "" },
                    c.coefficient,
                    c.orbit_id
                )
            })
            .collect::<Vec<_>>()
            .join(" + ")
    }
}

/// Pairwise linking numbers `ℓᵢⱼ` of the flow-oriented components.
pub fn linking_matrix(class: &LinkingClass) -> Result<Vec<Vec<i64>>> {
    let n = class.components.len();
    let oriented: Vec<ClosedCurve> = (0..n)
        .map(|i| {
            if class.components[i].orientation < 0 {
                class.curve(i).reversed()
            } else {
                class.curve(i).clone()
            }
        })
        .collect();
    let mut m = vec![vec![0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let l = linking_number(&oriented[i], &oriented[j])?;
            m[i][j] = l;
            m[j][i] = l;
        }
    }
    Ok(m)
}

/// Small round loop in the plane spanned by `u, v` around `center`, radially
/// projected onto Σ; used as a test loop.
pub fn small_loop(sys: &StarShapedSystem, center: &Vec4, u: &Vec4, v: &Vec4, radius: f64, n: usize) -> Result<ClosedCurve> {
    let pts: Vec<Vec4> = (0..n)
        .map(|i| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            sys.radial_project(&(center + u * (radius * t.cos()) + v * (radius * t.sin())))
        })
        .collect();
    ClosedCurve::from_loop(pts)
}
