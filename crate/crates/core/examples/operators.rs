//! Operator catalog, structure checks and monotone stencils.

use fracvisc::fracops::TimeOrder;
use fracvisc::operators::{
    build_monotone_stencil, cfl_bound, check_degenerate_ellipticity, check_monotonicity,
    check_proper, fixtures, LinearControl,
};
use fracvisc::{DomainGeometry, EllipticOperator, FractionalOrder};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let catalog = [
        EllipticOperator::laplacian(),
        EllipticOperator::Pucci {
            theta_minus: 0.5,
            theta_plus: 2.0,
        },
        EllipticOperator::Eikonal { speed: 1.0 },
        EllipticOperator::Bellman {
            controls: vec![
                LinearControl {
                    diffusion: [1.0, 0.2],
                    drift: [0.5, 0.0],
                    reaction: 0.0,
                    source: 0.0,
                },
                LinearControl {
                    diffusion: [0.2, 1.0],
                    drift: [0.0, -0.5],
                    reaction: 1.0,
                    source: 0.0,
                },
            ],
        },
    ];
    let geom = DomainGeometry::rectangle([1.0, 1.0], [32, 32])?;
    let order = TimeOrder::from(FractionalOrder::new(0.5)?);
    for op in &catalog {
        let stencil = build_monotone_stencil(op, &geom)?;
        println!(
            "{:<40} elliptic {:<5} proper {:<5} monotone {:<5} stencil points {} explicit tau <= {:.3e}",
            op.name(),
            check_degenerate_ellipticity(op, 2, 1000, 1).passed(),
            check_proper(op, 2, 1000, 2).passed(),
            check_monotonicity(&stencil, 1000, 3).passed(),
            stencil.offsets().len(),
            cfl_bound(&stencil, &order).tau_max
        );
    }
    let caught = check_degenerate_ellipticity(&fixtures::AntiLaplacian, 2, 1000, 1);
    println!(
        "F = +tr X flagged in {} of {} samples",
        caught.violations.len(),
        caught.samples
    );
    Ok(())
}
