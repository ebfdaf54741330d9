//! Reference values: power rule, Mittag-Leffler, quadrature of the defining
//! integral and the exact eigenmode solution.

use std::f64::consts::PI;

use fracvisc::oracles::{
    caputo_quadrature, exact_eigen_solution, mittag_leffler, power_rule_caputo, psi_bracket,
    smooth_catalog, EigenMode,
};
use fracvisc::{BoundaryKind, DomainGeometry, FractionalOrder};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let half = FractionalOrder::new(0.5)?;
    for z in [-0.5, -1.0, -5.0, -20.0] {
        println!("E_0.5({z:>5}) = {:.15}", mittag_leffler(half, z)?);
    }
    println!(
        "power rule, beta = 1.5, t = 2: {:.12}",
        power_rule_caputo(half, 1.5, 2.0, 0.0)?
    );

    for f in smooth_catalog().iter().take(4) {
        println!(
            "{:>8}: quadrature at t = 1 -> {:.12}",
            f.name(),
            caputo_quadrature(f, half, 1.0, 1e-12)?
        );
    }

    let geom = DomainGeometry::interval(1.0, 10)?;
    let mode = EigenMode::new(geom, [1, 0], BoundaryKind::DirichletStrong)?;
    println!(
        "eigenvalue {:.6} (pi^2 = {:.6})",
        mode.eigenvalue(),
        PI * PI
    );
    for t in [0.01, 0.1, 1.0] {
        println!(
            "  u(t = {t}, x = 0.5) = {:.10}",
            exact_eigen_solution(&mode, half, t, [0.5, 0.0])?
        );
    }
    for a in [0.1, 0.5, 0.9] {
        println!(
            "Gamma(1+a) - 1/Gamma(1-a) at a = {a}: {:.6}",
            psi_bracket(FractionalOrder::new(a)?)
        );
    }
    Ok(())
}
