//! Spectrum of the asymptotic operator of γ₁ on split(1, √2) and the
//! Conley-Zehnder indices of its iterates, against `2k + 2⌊k/√2⌋ + 1`.

use reeblab::flow::Framing;
use reeblab::geometry::{Axis, StarShapedSystem};
use reeblab::orbits::PeriodicOrbit;
use reeblab::spectral::cz_of_iterate;

fn main() -> reeblab::Result<()> {
    let sys = StarShapedSystem::split(1.0, 2f64.sqrt())?;
    let g1 = PeriodicOrbit::axis_orbit(&sys, Axis::First)?;
    let (spec, _) = cz_of_iterate(&sys, &g1, 1, Framing::Global, 512, 0.0)?;
    println!("eigenvalues of γ₁ nearest 0 (ν, winding):");
    let mut near: Vec<_> = spec.entries.iter().filter(|e| e.nu.abs() < 12.0).collect();
    near.sort_by(|a, b| a.nu.total_cmp(&b.nu));
    for e in near {
        println!("  {:>12.8} {:>3}", e.nu, e.wind);
    }
    println!(" k  CZ  formula");
    for k in 1..=6u32 {
        let (_, cz) = cz_of_iterate(&sys, &g1, k, Framing::Global, 512, 0.0)?;
        let formula = 2 * k as i64 + 2 * (k as f64 / 2f64.sqrt()).floor() as i64 + 1;
        println!("{k:>2} {:>3} {formula:>8}", cz.cz);
    }
    Ok(())
}
