//! Rotation numbers and Birkhoff intersection estimates for the link of both
//! axis circles of split(1, √2), and the same link with γ₂ reversed.

use reeblab::cycles::{fried_check_class, FriedConfig};
use reeblab::geometry::{Axis, StarShapedSystem};
use reeblab::knots::LinkingClass;
use reeblab::orbits::PeriodicOrbit;
use std::f64::consts::PI;

fn main() -> reeblab::Result<()> {
    let sys = StarShapedSystem::split(1.0, 2f64.sqrt())?;
    let g1 = PeriodicOrbit::axis_orbit(&sys, Axis::First)?;
    let g2 = PeriodicOrbit::axis_orbit(&sys, Axis::Second)?;
    let cfg = FriedConfig {
        samples: 8,
        horizon: 1000.0,
        seed: 1,
        ..FriedConfig::default()
    };
    for (label, orientation) in [("flow-oriented", 1), ("γ₂ reversed", -1)] {
        let y = LinkingClass::with_coefficients(&sys, &[(g1.clone(), 1, 1), (g2.clone(), 1, orientation)])?;
        let report = fried_check_class(&sys, &y, &cfg)?;
        println!("{label}: {}", report.link);
        for r in &report.rotation_numbers {
            println!("  2πρ({}) = {:.8}", r.orbit_id, 2.0 * PI * r.rho);
        }
        println!(
            "  estimates: min {:.8}, mean {:.8} (flow-oriented closed form {:.8})",
            report.intersection.min,
            report.intersection.mean,
            1.0 / PI + 1.0 / (PI * 2f64.sqrt())
        );
        println!("  verdict: {}", report.verdict);
    }
    Ok(())
}
