//! Finds the primitive periodic orbits of split(1, √2) and of a perturbed
//! split system by multiple shooting, with nondegeneracy of the iterates.

use reeblab::geometry::StarShapedSystem;
use reeblab::orbits::{find_periodic_orbits, nondegenerate_up_to, OrbitSearchConfig};

fn main() -> reeblab::Result<()> {
    let cfg = OrbitSearchConfig::default();
    for sys in [
        StarShapedSystem::split(1.0, 2f64.sqrt())?,
        StarShapedSystem::perturbed_split(1.0, 2f64.sqrt(), 0.05)?,
    ] {
        let search = find_periodic_orbits(&sys, 6.0, &cfg)?;
        println!("{}: {} orbit(s) with T0 ≤ 6", sys.label(), search.orbits.len());
        for o in &search.orbits {
            let ndg = nondegenerate_up_to(&sys, o, 20.0, 1e-6)?;
            println!(
                "  {:<8} T0 = {:.10}  closure {:.1e}  nondegenerate up to action 20: {}",
                o.id, o.t0, o.closure_error, ndg.verdict
            );
        }
    }
    Ok(())
}
