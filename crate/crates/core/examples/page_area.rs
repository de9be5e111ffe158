//! Contact area of disk pages by quadrature and by Stokes, compared with the
//! binding action, and area preservation of the return map.

use reeblab::geometry::{Axis, StarShapedSystem};
use reeblab::sections::{area_preservation, build_page, page_area};

fn main() -> reeblab::Result<()> {
    for (a, b, axis) in [(1.0, 1.0, Axis::First), (1.0, 2f64.sqrt(), Axis::First), (4.0, 1.0, Axis::Second)] {
        let sys = StarShapedSystem::split(a, b)?;
        let page = build_page(&sys, axis, 0.0)?;
        let area = page_area(&page)?;
        println!(
            "split({a}, {b:.4}), page of {}: quadrature {:.9}, Stokes {:.9}, binding action {:.9}",
            axis.name(),
            area.quadrature,
            area.stokes,
            axis.period(a, b)
        );
    }
    let sys = StarShapedSystem::split(1.0, 2f64.sqrt())?;
    let page = build_page(&sys, Axis::First, 0.0)?;
    let check = area_preservation(&page, (0.3, 0.7), (1.0, 2.0))?;
    println!("rectangle area {:.9}, image area {:.9}", check.area, check.image_area);
    Ok(())
}
