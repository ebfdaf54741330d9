//! Explicit barriers around the solution and the discrete Perron iteration
//! started from the lower one.

use fracvisc::solver::{
    build_barriers_dirichlet, build_barriers_neumann, perron_iterate, solve, BarrierOptions,
    PerronOptions,
};
use fracvisc::{
    BoundaryKind, DomainGeometry, EllipticOperator, FractionalOrder, ProblemSpec, Stepping,
    TimeGrid,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ProblemSpec::fractional_heat(0.5, 0.1, 40, 32)?;
    let barriers = build_barriers_dirichlet(&spec, &BarrierOptions::default())?;
    let sol = solve(&spec)?;
    let mid = 16;
    println!("Dirichlet heat, x = 0.5:");
    for n in (0..=40).step_by(8) {
        println!(
            "  t = {:.3}: {:>9.5} <= {:>9.5} <= {:>9.5}",
            spec.time.node(n),
            barriers.lower.at(n, mid),
            sol.values.at(n, mid),
            barriers.upper.at(n, mid)
        );
    }
    println!("  report: {:?}", barriers.report);

    let perron = perron_iterate(
        &spec,
        &barriers.lower,
        &barriers.upper,
        &PerronOptions::default(),
    )?;
    println!(
        "Perron: sup distance to solve {:.2e}, refused decreases {}, sweeps at step 1: {}",
        perron.solution.values.max_abs_diff(&sol.values),
        perron.refused_decreases,
        perron.solution.iterations[0]
    );

    let geom = DomainGeometry::interval(1.0, 32)?;
    let neumann = ProblemSpec::new(
        geom,
        TimeGrid::new(0.2, 20)?,
        FractionalOrder::new(0.7)?,
        EllipticOperator::Eikonal { speed: 1.0 },
        geom.sample(|x| (3.0 * x[0]).cos()),
        BoundaryKind::NeumannViscosity,
        Stepping::ImplicitFixedPoint,
    )?;
    let b = build_barriers_neumann(&neumann)?;
    println!(
        "Neumann eikonal: M = {:?}, C = {:?}",
        b.report.m, b.report.c
    );
    Ok(())
}
