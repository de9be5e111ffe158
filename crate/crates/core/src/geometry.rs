//! Star-shaped hypersurfaces in C² ≅ R⁴ and their contact apparatus.
//!
//! Coordinates are ordered `(x₀, y₀, x₁, y₁)` with `z_j = x_j + i y_j`. The
//! hypersurface is the level set `Σ = H⁻¹(1)` of a positively 2-homogeneous
//! Hamiltonian; the contact form is the restriction of the Liouville form
//! `α₀ = ½ Σ (x dy − y dx)` and `dλ` is the restriction of `ω₀ = Σ dx ∧ dy`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{ReebError, Result};

pub type Vec4 = Vector4<f64>;
pub type Mat4 = Matrix4<f64>;
pub type Vec2 = Vector2<f64>;

/// A smooth Hamiltonian on R⁴ \ {0}, expected to be positive and
/// positively homogeneous of degree 2.
pub trait Hamiltonian: Send + Sync + fmt::Debug {
    fn value(&self, z: &Vec4) -> f64;
    fn gradient(&self, z: &Vec4) -> Vec4;
    fn hessian(&self, z: &Vec4) -> Mat4;
}

/// `H(z) = |z₀|²/a + |z₁|²/b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitHamiltonian {
    pub a: f64,
    pub b: f64,
}

impl Hamiltonian for SplitHamiltonian {
    fn value(&self, z: &Vec4) -> f64 {
        (z[0] * z[0] + z[1] * z[1]) / self.a + (z[2] * z[2] + z[3] * z[3]) / self.b
    }

    fn gradient(&self, z: &Vec4) -> Vec4 {
        Vec4::new(
            2.0 * z[0] / self.a,
            2.0 * z[1] / self.a,
            2.0 * z[2] / self.b,
            2.0 * z[3] / self.b,
        )
    }

    fn hessian(&self, _z: &Vec4) -> Mat4 {
        Mat4::from_diagonal(&Vec4::new(
            2.0 / self.a,
            2.0 / self.a,
            2.0 / self.b,
            2.0 / self.b,
        ))
    }
}

/// Split Hamiltonian plus the quartic resonance term
/// `ε · Re(z₀² z̄₁²) / |z|²`, which keeps 2-homogeneity and both axis
/// circles invariant while making the transverse linearization along them
/// time-dependent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbedSplitHamiltonian {
    pub a: f64,
    pub b: f64,
    pub epsilon: f64,
}

impl PerturbedSplitHamiltonian {
    // u + iv = z₀ z̄₁
    fn uv(z: &Vec4) -> (f64, f64) {
        let (x0, y0, x1, y1) = (z[0], z[1], z[2], z[3]);
        (x0 * x1 + y0 * y1, y0 * x1 - x0 * y1)
    }

    fn grad_u(z: &Vec4) -> Vec4 {
        Vec4::new(z[2], z[3], z[0], z[1])
    }

    fn grad_v(z: &Vec4) -> Vec4 {
        Vec4::new(-z[3], z[2], z[1], -z[0])
    }

    fn split(&self) -> SplitHamiltonian {
        SplitHamiltonian { a: self.a, b: self.b }
    }
}

impl Hamiltonian for PerturbedSplitHamiltonian {
    fn value(&self, z: &Vec4) -> f64 {
        let (u, v) = Self::uv(z);
        self.split().value(z) + self.epsilon * (u * u - v * v) / z.norm_squared()
    }

    fn gradient(&self, z: &Vec4) -> Vec4 {
        let (u, v) = Self::uv(z);
        let g = z.norm_squared();
        let f = u * u - v * v;
        let grad_f = Self::grad_u(z) * (2.0 * u) - Self::grad_v(z) * (2.0 * v);
        let grad_p = grad_f / g - z * (2.0 * f / (g * g));
        self.split().gradient(z) + grad_p * self.epsilon
    }

    fn hessian(&self, z: &Vec4) -> Mat4 {
        let (u, v) = Self::uv(z);
        let g = z.norm_squared();
        let f = u * u - v * v;
        let gu = Self::grad_u(z);
        let gv = Self::grad_v(z);
        let grad_f = gu * (2.0 * u) - gv * (2.0 * v);
        let grad_g = z * 2.0;

        let mut hess_u = Mat4::zeros();
        hess_u[(0, 2)] = 1.0;
        hess_u[(2, 0)] = 1.0;
        hess_u[(1, 3)] = 1.0;
        hess_u[(3, 1)] = 1.0;
        let mut hess_v = Mat4::zeros();
        hess_v[(1, 2)] = 1.0;
        hess_v[(2, 1)] = 1.0;
        hess_v[(0, 3)] = -1.0;
        hess_v[(3, 0)] = -1.0;

        let hess_f = gu * gu.transpose() * 2.0 + hess_u * (2.0 * u)
            - gv * gv.transpose() * 2.0
            - hess_v * (2.0 * v);
        let hess_p = hess_f / g
            - (grad_f * grad_g.transpose() + grad_g * grad_f.transpose()) / (g * g)
            - Mat4::identity() * (2.0 * f / (g * g))
            + grad_g * grad_g.transpose() * (2.0 * f / (g * g * g));
        self.split().hessian(z) + hess_p * self.epsilon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemKind {
    Split { a: f64, b: f64 },
    Custom { name: String },
}

/// Numerical tolerances attached to a system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub surface: f64,
    pub frame: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            surface: 1e-10,
            frame: 1e-9,
        }
    }
}

/// A star-shaped energy hypersurface together with its Reeb flow.
#[derive(Clone)]
pub struct StarShapedSystem {
    label: String,
    kind: SystemKind,
    hamiltonian: Arc<dyn Hamiltonian>,
    pub tol: Tolerances,
}

impl fmt::Debug for StarShapedSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StarShapedSystem")
            .field("label", &self.label)
            .field("kind", &self.kind)
            .finish()
    }
}

impl StarShapedSystem {
    pub fn split(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(ReebError::InvalidInput(format!(
                "split system needs a, b > 0 (got a = {a}, b = {b})"
            )));
        }
        Ok(Self {
            label: format!("split({a}, {b})"),
            kind: SystemKind::Split { a, b },
            hamiltonian: Arc::new(SplitHamiltonian { a, b }),
            tol: Tolerances::default(),
        })
    }

    /// The round sphere `|z|² = 1`, whose Reeb flow is the Hopf flow.
    pub fn hopf() -> Self {
        let mut sys = Self::split(1.0, 1.0).expect("valid parameters");
        sys.label = "hopf".into();
        sys
    }

    pub fn perturbed_split(a: f64, b: f64, epsilon: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(ReebError::InvalidInput(format!(
                "perturbed split system needs a, b > 0 (got a = {a}, b = {b})"
            )));
        }
        // |Re(z₀²z̄₁²)|/|z|² ≤ |z|²/4, so positivity needs |ε| < 4·min(1/a, 1/b).
        if epsilon.abs() >= 4.0 * (1.0 / a).min(1.0 / b) {
            return Err(ReebError::InvalidInput(format!(
                "epsilon = {epsilon} breaks positivity of the Hamiltonian"
            )));
        }
        Ok(Self {
            label: format!("split_perturbed({a}, {b}, {epsilon})"),
            kind: SystemKind::Custom {
                name: "split_perturbed".into(),
            },
            hamiltonian: Arc::new(PerturbedSplitHamiltonian { a, b, epsilon }),
            tol: Tolerances::default(),
        })
    }

    /// Wraps a user-provided Hamiltonian. Homogeneity is not checked here;
    /// [`reeb_field`] verifies the defining equations at runtime.
    pub fn custom(label: impl Into<String>, hamiltonian: Arc<dyn Hamiltonian>) -> Self {
        let label = label.into();
        Self {
            kind: SystemKind::Custom {
                name: label.clone(),
            },
            label,
            hamiltonian,
            tol: Tolerances::default(),
        }
    }

    /// Looks up a built-in Hamiltonian by name.
    pub fn from_registry(name: &str, a: f64, b: f64, epsilon: f64) -> Result<Self> {
        match name {
            "split" => Self::split(a, b),
            "hopf" => Ok(Self::hopf()),
            "split_perturbed" => Self::perturbed_split(a, b, epsilon),
            other => Err(ReebError::InvalidInput(format!(
                "unknown Hamiltonian '{other}' (known: split, hopf, split_perturbed)"
            ))),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn kind(&self) -> &SystemKind {
        &self.kind
    }

    /// `(a, b)` for split systems.
    pub fn split_params(&self) -> Option<(f64, f64)> {
        match self.kind {
            SystemKind::Split { a, b } => Some((a, b)),
            SystemKind::Custom { .. } => None,
        }
    }

    pub fn hamiltonian(&self) -> &dyn Hamiltonian {
        self.hamiltonian.as_ref()
    }

    pub fn h(&self, z: &Vec4) -> f64 {
        self.hamiltonian.value(z)
    }

    pub fn grad(&self, z: &Vec4) -> Vec4 {
        self.hamiltonian.gradient(z)
    }

    pub fn hess(&self, z: &Vec4) -> Mat4 {
        self.hamiltonian.hessian(z)
    }

    /// `z ↦ z / √H(z)`: exact projection onto Σ along the radial direction.
    pub fn radial_project(&self, z: &Vec4) -> Vec4 {
        z / self.h(z).sqrt()
    }

    /// Unchecked Reeb vector `J₀∇H(z)`, used inside integrators.
    pub fn reeb_vector(&self, z: &Vec4) -> Vec4 {
        j0(&self.grad(z))
    }

    /// Derivative of the Reeb field, `J₀ · Hess H(z)`.
    pub fn reeb_jacobian(&self, z: &Vec4) -> Mat4 {
        j0_matrix() * self.hess(z)
    }
}

/// The two axis circles of a split system: `First` is `{z₁ = 0}` (period
/// `πa`), `Second` is `{z₀ = 0}` (period `πb`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    First,
    Second,
}

impl Axis {
    pub fn other(self) -> Self {
        match self {
            Axis::First => Axis::Second,
            Axis::Second => Axis::First,
        }
    }

    /// Index of the complex coordinate that vanishes on this circle.
    pub fn vanishing_coordinate(self) -> usize {
        match self {
            Axis::First => 1,
            Axis::Second => 0,
        }
    }

    /// Primitive period of the axis orbit of `split(a, b)`.
    pub fn period(self, a: f64, b: f64) -> f64 {
        match self {
            Axis::First => std::f64::consts::PI * a,
            Axis::Second => std::f64::consts::PI * b,
        }
    }

    /// Point of the axis circle with phase `phase` on `split(a, b)`.
    pub fn point(self, a: f64, b: f64, phase: f64) -> Vec4 {
        match self {
            Axis::First => Vec4::new(a.sqrt() * phase.cos(), a.sqrt() * phase.sin(), 0.0, 0.0),
            Axis::Second => Vec4::new(0.0, 0.0, b.sqrt() * phase.cos(), b.sqrt() * phase.sin()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::First => "gamma1",
            Axis::Second => "gamma2",
        }
    }
}

/// A point of R⁴ carrying its distance from the level set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub z: Vec4,
    pub residual: f64,
}

impl SurfacePoint {
    /// Accepts `z` only if `|H(z) − 1| ≤ surface_tol`.
    pub fn new(sys: &StarShapedSystem, z: Vec4) -> Result<Self> {
        let residual = (sys.h(&z) - 1.0).abs();
        if !(residual <= sys.tol.surface) {
            return Err(ReebError::NotOnSurface { residual });
        }
        Ok(Self { z, residual })
    }

    /// Radially projects any nonzero `z` onto Σ.
    pub fn project(sys: &StarShapedSystem, z: Vec4) -> Result<Self> {
        if z.norm() == 0.0 || !z.iter().all(|c| c.is_finite()) {
            return Err(ReebError::InvalidInput(
                "cannot project the origin onto the hypersurface".into(),
            ));
        }
        let z = sys.radial_project(&z);
        Ok(Self {
            z,
            residual: (sys.h(&z) - 1.0).abs(),
        })
    }

    /// Point with complex coordinates `(z₀, z₁)`, radially projected onto Σ.
    pub fn from_complex(
        sys: &StarShapedSystem,
        z0: num_complex::Complex64,
        z1: num_complex::Complex64,
    ) -> Result<Self> {
        Self::project(sys, Vec4::new(z0.re, z0.im, z1.re, z1.im))
    }

    pub fn z0(&self) -> num_complex::Complex64 {
        num_complex::Complex64::new(self.z[0], self.z[1])
    }

    pub fn z1(&self) -> num_complex::Complex64 {
        num_complex::Complex64::new(self.z[2], self.z[3])
    }
}

/// A `dλ`-symplectic frame of `ξ = ker λ ∩ TΣ` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactFrame {
    pub e1: Vec4,
    pub e2: Vec4,
}

/// Standard complex structure `(x_j, y_j) ↦ (−y_j, x_j)`.
pub fn j0(v: &Vec4) -> Vec4 {
    Vec4::new(-v[1], v[0], -v[3], v[2])
}

pub fn j0_matrix() -> Mat4 {
    Mat4::new(
        0.0, -1.0, 0.0, 0.0, //
        1.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, -1.0, //
        0.0, 0.0, 1.0, 0.0,
    )
}

/// `ω₀(u, v) = Σ (u_x v_y − u_y v_x) = ⟨J₀u, v⟩`; restricted to Σ this is `dλ`.
pub fn omega(u: &Vec4, v: &Vec4) -> f64 {
    u[0] * v[1] - u[1] * v[0] + u[2] * v[3] - u[3] * v[2]
}

/// Quaternionic section `j·z = (−z̄₁, z̄₀)`, tangent to the round sphere and in `ker α₀`.
pub fn quaternion_j(z: &Vec4) -> Vec4 {
    Vec4::new(-z[2], z[3], z[0], -z[1])
}

/// Quaternionic section `k·z = J₀(j·z)`.
pub fn quaternion_k(z: &Vec4) -> Vec4 {
    Vec4::new(-z[3], -z[2], z[1], z[0])
}

/// Evaluates the Liouville form `α₀(z)(v)`.
pub fn contact_eval(z: &SurfacePoint, v: &Vec4) -> f64 {
    liouville(&z.z, v)
}

/// `α₀(z)(v)` for an arbitrary base point.
pub fn liouville(z: &Vec4, v: &Vec4) -> f64 {
    0.5 * omega(z, v)
}

/// Tangential part of `v` at `z`, removing the `∇H` component.
fn tangent_part(sys: &StarShapedSystem, z: &Vec4, v: &Vec4) -> Vec4 {
    let g = sys.grad(z);
    v - g * (g.dot(v) / g.norm_squared())
}

/// Reeb vector field `X = J₀∇H` on Σ, with its defining equations
/// `λ(X) = 1` and `i_X dλ = 0` re-verified at `z`.
pub fn reeb_field(sys: &StarShapedSystem, z: &SurfacePoint) -> Result<Vec4> {
    let g = sys.grad(&z.z);
    let norm = g.norm();
    if norm < 1e-12 {
        return Err(ReebError::DegenerateGradient { norm });
    }
    let x = j0(&g);
    let scale = z.z.norm_squared().max(1.0);
    let mut defect = (liouville(&z.z, &x) - 1.0).abs();
    for w in [quaternion_j(&z.z), quaternion_k(&z.z)] {
        let w = tangent_part(sys, &z.z, &w);
        defect = defect.max(omega(&x, &w).abs() / w.norm().max(1e-300));
    }
    if defect > sys.tol.frame * scale {
        return Err(ReebError::ReebCheckFailed { defect });
    }
    Ok(x)
}

/// Frame fields evaluated at an arbitrary nonzero `z` (used both on Σ and in
/// finite differences just off it). Returns the frame and the pairing before
/// rescaling.
pub(crate) fn frame_unchecked(sys: &StarShapedSystem, z: &Vec4) -> (ContactFrame, f64) {
    let g = sys.grad(z);
    let gz = g.dot(z);
    let radial = |v: Vec4| v - z * (g.dot(&v) / gz);
    let f1 = radial(quaternion_j(z));
    let f2 = radial(quaternion_k(z));
    let pairing = omega(&f1, &f2);
    let s = pairing.abs().sqrt();
    (
        ContactFrame {
            e1: f1 / s,
            e2: f2 / s,
        },
        pairing,
    )
}

/// Global `dλ`-symplectic frame of ξ: the quaternionic fields `jz`, `kz`
/// pushed into TΣ along the radial direction and rescaled to `dλ(e1, e2) = 1`.
pub fn global_frame(sys: &StarShapedSystem, z: &SurfacePoint) -> Result<ContactFrame> {
    let (frame, pairing) = frame_unchecked(sys, &z.z);
    if pairing < 1e-8 {
        return Err(ReebError::FrameDegenerate { pairing });
    }
    Ok(frame)
}

/// Coordinates of `π_λ(v) = v − λ(v)·X` in a frame `(e1, e2)` with
/// `dλ(e1, e2) = 1`. No tangency check.
pub(crate) fn xi_coordinates(z: &Vec4, x: &Vec4, frame: &ContactFrame, v: &Vec4) -> Vec2 {
    let p = v - x * liouville(z, v);
    Vec2::new(omega(&p, &frame.e2), omega(&frame.e1, &p))
}

/// Projection `π_λ` of a tangent vector onto ξ along the Reeb field,
/// expressed in the global frame.
pub fn project_xi(sys: &StarShapedSystem, z: &SurfacePoint, v: &Vec4) -> Result<Vec2> {
    let g = sys.grad(&z.z);
    let dh = g.dot(v);
    if dh.abs() > 1e-8 * v.norm().max(1.0) {
        return Err(ReebError::NotTangent { dh });
    }
    let x = reeb_field(sys, z)?;
    let frame = global_frame(sys, z)?;
    Ok(xi_coordinates(&z.z, &x, &frame, v))
}

/// Full vector `π_λ(v)` in R⁴.
pub fn project_xi_vector(sys: &StarShapedSystem, z: &SurfacePoint, v: &Vec4) -> Vec4 {
    let x = sys.reeb_vector(&z.z);
    v - x * liouville(&z.z, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(sys: &StarShapedSystem, rng: &mut ChaCha8Rng) -> SurfacePoint {
        let z = Vec4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        SurfacePoint::project(sys, z).unwrap()
    }

    fn systems() -> Vec<StarShapedSystem> {
        vec![
            StarShapedSystem::hopf(),
            StarShapedSystem::split(1.0, 2f64.sqrt()).unwrap(),
            StarShapedSystem::split(4.0, 1.0).unwrap(),
            StarShapedSystem::perturbed_split(1.0, 2f64.sqrt(), 0.2).unwrap(),
        ]
    }

    #[test]
    fn contact_eval_examples() {
        let sys = StarShapedSystem::hopf();
        let p = SurfacePoint::new(&sys, Vec4::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(contact_eval(&p, &Vec4::new(0.0, 1.0, 0.0, 0.0)), 0.5);
        assert_eq!(contact_eval(&p, &Vec4::new(1.0, 0.0, 0.0, 0.0)), 0.0);
        let q = SurfacePoint::new(&sys, Vec4::new(0.0, 0.0, 1.0, 0.0)).unwrap();
        assert_eq!(contact_eval(&q, &Vec4::new(0.0, 0.0, 0.0, 2.0)), 1.0);
    }

    #[test]
    fn reeb_field_examples() {
        let hopf = StarShapedSystem::hopf();
        let p = SurfacePoint::new(&hopf, Vec4::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(
            reeb_field(&hopf, &p).unwrap(),
            Vec4::new(0.0, 2.0, 0.0, 0.0),
            epsilon = 1e-15
        );
        let sys = StarShapedSystem::split(4.0, 1.0).unwrap();
        let p = SurfacePoint::new(&sys, Vec4::new(2.0, 0.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(
            reeb_field(&sys, &p).unwrap(),
            Vec4::new(0.0, 1.0, 0.0, 0.0),
            epsilon = 1e-15
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = random_point(&hopf, &mut rng);
            assert_abs_diff_eq!(reeb_field(&hopf, &p).unwrap().norm(), 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn reeb_defining_equations_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for sys in systems() {
            for _ in 0..100 {
                let p = random_point(&sys, &mut rng);
                let x = reeb_field(&sys, &p).unwrap();
                assert_abs_diff_eq!(contact_eval(&p, &x), 1.0, epsilon = 1e-9);
                for _ in 0..3 {
                    let w = Vec4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
                    let w = tangent_part(&sys, &p.z, &w);
                    assert!(omega(&x, &w).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn degenerate_gradient_is_reported() {
        let sys = StarShapedSystem::hopf();
        let p = SurfacePoint {
            z: Vec4::zeros(),
            residual: 1.0,
        };
        assert!(matches!(
            reeb_field(&sys, &p),
            Err(ReebError::DegenerateGradient { .. })
        ));
    }

    #[derive(Debug)]
    struct Quartic;
    impl Hamiltonian for Quartic {
        fn value(&self, z: &Vec4) -> f64 {
            z.norm_squared().powi(2)
        }
        fn gradient(&self, z: &Vec4) -> Vec4 {
            z * (4.0 * z.norm_squared())
        }
        fn hessian(&self, z: &Vec4) -> Mat4 {
            Mat4::identity() * (4.0 * z.norm_squared()) + z * z.transpose() * 8.0
        }
    }

    #[test]
    fn non_homogeneous_hamiltonian_is_caught() {
        let sys = StarShapedSystem::custom("quartic", Arc::new(Quartic));
        let p = SurfacePoint::new(&sys, Vec4::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        assert!(matches!(
            reeb_field(&sys, &p),
            Err(ReebError::ReebCheckFailed { .. })
        ));
    }

    #[test]
    fn global_frame_examples() {
        let hopf = StarShapedSystem::hopf();
        let p = SurfacePoint::new(&hopf, Vec4::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        let f = global_frame(&hopf, &p).unwrap();
        assert_abs_diff_eq!(f.e1, Vec4::new(0.0, 0.0, 1.0, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(f.e2, Vec4::new(0.0, 0.0, 0.0, 1.0), epsilon = 1e-15);
        let p = SurfacePoint::new(&hopf, Vec4::new(0.0, 1.0, 0.0, 0.0)).unwrap();
        let f = global_frame(&hopf, &p).unwrap();
        assert_abs_diff_eq!(f.e1, Vec4::new(0.0, 0.0, 0.0, -1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(f.e2, Vec4::new(0.0, 0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn frame_invariants_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for sys in systems() {
            for _ in 0..100 {
                let p = random_point(&sys, &mut rng);
                let f = global_frame(&sys, &p).unwrap();
                let g = sys.grad(&p.z);
                assert!(contact_eval(&p, &f.e1).abs() < 1e-10);
                assert!(contact_eval(&p, &f.e2).abs() < 1e-10);
                assert_abs_diff_eq!(omega(&f.e1, &f.e2), 1.0, epsilon = 1e-9);
                assert!(g.dot(&f.e1).abs() < 1e-9);
                assert!(g.dot(&f.e2).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn round_sphere_frame_is_quaternionic() {
        let hopf = StarShapedSystem::hopf();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let p = random_point(&hopf, &mut rng);
            let f = global_frame(&hopf, &p).unwrap();
            assert_abs_diff_eq!(f.e1, quaternion_j(&p.z), epsilon = 1e-14);
            assert_abs_diff_eq!(f.e2, quaternion_k(&p.z), epsilon = 1e-14);
        }
    }

    #[test]
    fn frame_is_smooth_along_curves() {
        // Central-difference derivative along a tangent curve: halving the
        // step changes the estimate by O(h²), never by a jump.
        let sys = StarShapedSystem::split(1.0, 2f64.sqrt()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = random_point(&sys, &mut rng);
            let w = tangent_part(&sys, &p.z, &Vec4::from_fn(|_, _| rng.gen_range(-1.0..1.0)));
            let at = |s: f64| {
                let q = SurfacePoint::project(&sys, p.z + w * s).unwrap();
                global_frame(&sys, &q).unwrap()
            };
            let deriv = |h: f64| (at(h).e1 - at(-h).e1) / (2.0 * h);
            let (d1, d2, d3) = (deriv(1e-2), deriv(5e-3), deriv(2.5e-3));
            assert!(d1.norm() < 50.0);
            let ratio = (d1 - d2).norm() / (d2 - d3).norm().max(1e-14);
            assert!((ratio - 4.0).abs() < 0.5 || (d1 - d2).norm() < 1e-9, "ratio {ratio}");
        }
    }

    #[test]
    fn project_xi_examples() {
        let hopf = StarShapedSystem::hopf();
        let p = SurfacePoint::new(&hopf, Vec4::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        let x = reeb_field(&hopf, &p).unwrap();
        assert_abs_diff_eq!(project_xi(&hopf, &p, &x).unwrap(), Vec2::zeros(), epsilon = 1e-15);
        let f = global_frame(&hopf, &p).unwrap();
        assert_abs_diff_eq!(project_xi(&hopf, &p, &f.e1).unwrap(), Vec2::new(1.0, 0.0), epsilon = 1e-15);
        let v = Vec4::new(0.0, 2.0, 0.0, 1.0);
        assert_abs_diff_eq!(project_xi(&hopf, &p, &v).unwrap(), Vec2::new(0.0, 1.0), epsilon = 1e-15);
        assert!(matches!(
            project_xi(&hopf, &p, &Vec4::new(1.0, 0.0, 0.0, 0.0)),
            Err(ReebError::NotTangent { .. })
        ));
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for sys in systems() {
            for _ in 0..50 {
                let p = random_point(&sys, &mut rng);
                let v = tangent_part(&sys, &p.z, &Vec4::from_fn(|_, _| rng.gen_range(-1.0..1.0)));
                let once = project_xi_vector(&sys, &p, &v);
                let twice = project_xi_vector(&sys, &p, &once);
                assert_abs_diff_eq!(once, twice, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn perturbed_derivatives_match_finite_differences() {
        let h = PerturbedSplitHamiltonian {
            a: 1.3,
            b: 0.7,
            epsilon: 0.3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let z = Vec4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let eps = 1e-6;
            let g = h.gradient(&z);
            let hs = h.hessian(&z);
            for i in 0..4 {
                let mut dz = Vec4::zeros();
                dz[i] = eps;
                let fd = (h.value(&(z + dz)) - h.value(&(z - dz))) / (2.0 * eps);
                assert_abs_diff_eq!(fd, g[i], epsilon = 1e-7);
                let fdg = (h.gradient(&(z + dz)) - h.gradient(&(z - dz))) / (2.0 * eps);
                assert_abs_diff_eq!(fdg, hs.column(i).into_owned(), epsilon = 1e-6);
            }
        }
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn homogeneity_and_euler(
            x in prop::array::uniform4(-2.0f64..2.0),
            s in 0.1f64..10.0,
            eps in -0.5f64..0.5,
        ) {
            let z = Vec4::from(x);
            prop_assume!(z.norm() > 1e-3);
            let sys = StarShapedSystem::perturbed_split(1.0, 2f64.sqrt(), eps).unwrap();
            let h = sys.h(&z);
            prop_assert!(h > 0.0);
            prop_assert!(((sys.h(&(z * s)) - s * s * h) / (s * s * h)).abs() <= 1e-10);
            prop_assert!((sys.grad(&z).dot(&z) - 2.0 * h).abs() <= 1e-10 * h.max(1.0));
        }
    }
}
