//! Linking of two Hopf fibers by crossing counts and by the Gauss integral,
//! and self-linking of the Hopf fiber and of the split axis circles.

use reeblab::geometry::{Axis, StarShapedSystem, SurfacePoint, Vec4};
use reeblab::knots::{gauss_linking_integral, linking_computation, self_linking, ClosedCurve};
use reeblab::orbits::{precise_control, PeriodicOrbit};
use std::f64::consts::PI;

fn main() -> reeblab::Result<()> {
    let hopf = StarShapedSystem::hopf();
    let f1 = PeriodicOrbit::axis_orbit(&hopf, Axis::First)?;
    let p = SurfacePoint::project(&hopf, Vec4::new(0.6, 0.0, 0.0, 0.8))?;
    let f2 = PeriodicOrbit::verified(&hopf, p, PI, &precise_control())?;
    let (c1, c2) = (
        ClosedCurve::from_orbit_with_gap(&hopf, &f1, 1e-3)?,
        ClosedCurve::from_orbit_with_gap(&hopf, &f2, 1e-3)?,
    );
    let lc = linking_computation(&c1, &c2, 1)?;
    println!(
        "Hopf fibers: linking {} ({} crossings), Gauss integral {:.6}",
        lc.value,
        lc.crossings,
        gauss_linking_integral(&c1, &c2)
    );
    println!("self-linking of a Hopf fiber: {}", self_linking(&hopf, &f1)?.value);
    let sys = StarShapedSystem::split(1.0, 2f64.sqrt())?;
    for axis in [Axis::First, Axis::Second] {
        let g = PeriodicOrbit::axis_orbit(&sys, axis)?;
        println!("self-linking of {} on split(1, √2): {}", g.id, self_linking(&sys, &g)?.value);
    }
    Ok(())
}
