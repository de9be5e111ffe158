//! The page of the open book bound by γ₁ on split(1, √2): transversality,
//! return times and the first-return map as a rigid rotation.

use reeblab::geometry::{Axis, StarShapedSystem};
use reeblab::sections::{build_page, return_orbit, return_time_bounds, transversality_scan, ChartPoint};
use std::f64::consts::PI;

fn main() -> reeblab::Result<()> {
    let sys = StarShapedSystem::split(1.0, 2f64.sqrt())?;
    let page = build_page(&sys, Axis::First, 0.0)?;
    let scan = transversality_scan(&page, 8, 8);
    let bounds = return_time_bounds(&page, 6, 6)?;
    println!("min flow rate across the page {:.12} (2/√2 = {:.12})", scan.min_rate, 2f64.sqrt());
    println!("return time in [{:.10}, {:.10}], π√2 = {:.10}", bounds.inf, bounds.sup, PI * 2f64.sqrt());
    let rows = return_orbit(&page, ChartPoint { rho: 0.6, phi: 0.0 }, 5)?;
    for (i, r) in rows.iter().enumerate() {
        let expected = (2.0 * PI * 2f64.sqrt() * (i + 1) as f64).rem_euclid(2.0 * PI);
        println!("  return {}: φ = {:.9} (rotation predicts {:.9}), τ = {:.9}", i + 1, r.point.phi, expected, r.tau);
    }
    Ok(())
}
