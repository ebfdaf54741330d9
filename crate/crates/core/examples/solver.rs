//! Fractional heat equation against its exact Mittag-Leffler solution, then a
//! Pucci problem with a two-term order.

use std::f64::consts::PI;

use fracvisc::oracles::mittag_leffler;
use fracvisc::solver::solve;
use fracvisc::{
    BoundaryKind, DomainGeometry, EllipticOperator, FractionalOrder, MultiTermOrder, ProblemSpec,
    Stepping, TimeGrid,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let alpha = 0.5;
    for (nt, nx) in [(50, 25), (100, 50), (200, 100), (400, 200)] {
        let spec = ProblemSpec::fractional_heat(alpha, 0.1, nt, nx)?;
        let sol = solve(&spec)?;
        let decay = mittag_leffler(FractionalOrder::new(alpha)?, -PI * PI * 0.1f64.powf(alpha))?;
        let err = (0..=nx)
            .map(|i| (sol.final_slice()[i] - decay * (PI * spec.geometry.coords(i)[0]).sin()).abs())
            .fold(0.0, f64::max);
        println!(
            "Nt {nt:>3} Nx {nx:>3}: error {err:.3e}, {} Newton steps, {} factorizations, {:?}",
            sol.iterations.iter().sum::<usize>(),
            sol.factorizations,
            sol.wall_time
        );
    }

    let geom = DomainGeometry::rectangle([1.0, 1.0], [24, 24])?;
    let u0 = geom.sample(|x| (PI * x[0]).sin() * (PI * x[1]).sin());
    let order = MultiTermOrder::new(vec![
        (1.0, FractionalOrder::new(0.4)?),
        (0.5, FractionalOrder::new(0.8)?),
    ])?;
    let spec = ProblemSpec::new(
        geom,
        TimeGrid::new(0.1, 40)?,
        order,
        EllipticOperator::Pucci {
            theta_minus: 0.5,
            theta_plus: 1.0,
        },
        u0,
        BoundaryKind::DirichletStrong,
        Stepping::ImplicitFixedPoint,
    )?;
    let sol = solve(&spec)?;
    let centre = geom.index([12, 12]);
    println!(
        "Pucci, two-term order: u(T, centre) = {:.6}, max step residual {:.1e}",
        sol.final_slice()[centre],
        sol.residuals.iter().copied().fold(0.0, f64::max)
    );
    Ok(())
}
