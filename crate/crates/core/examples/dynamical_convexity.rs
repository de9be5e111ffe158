//! Dynamical convexity up to action 10 on split(1, √2), and the degenerate
//! Hopf case.

use reeblab::geometry::StarShapedSystem;
use reeblab::spectral::{convexity_check, ConvexityConfig};

fn main() -> reeblab::Result<()> {
    let cfg = ConvexityConfig::default();
    let report = convexity_check(&StarShapedSystem::split(1.0, 2f64.sqrt())?, 10.0, &cfg)?;
    print!("{}", report.table());
    let hopf = convexity_check(&StarShapedSystem::hopf(), 4.0, &cfg)?;
    println!("\nHopf: degenerate family flagged = {}", hopf.degenerate_flag);
    print!("{}", hopf.table());
    Ok(())
}
