//! Viscosity inequalities at touching points, a deliberately broken
//! candidate, the comparison check and the alpha -> 1 study.

use fracvisc::solver::solve;
use fracvisc::verify::{
    alpha_limit_study, calibrate_tolerance, check_comparison, check_viscosity_residuals, Side,
    TestFunctionFamily,
};
use fracvisc::ProblemSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ProblemSpec::fractional_heat(0.6, 0.1, 40, 32)?;
    let sol = solve(&spec)?;
    let family = TestFunctionFamily::sampled(1, 32, 4.0, 20.0, 7);
    let tol = calibrate_tolerance(&spec, &family)?.tol(&spec);
    println!(
        "{}",
        check_viscosity_residuals(&sol.values, &spec, &family, Side::Sub, tol)?
    );
    println!(
        "{}",
        check_viscosity_residuals(&sol.values, &spec, &family, Side::Super, tol)?
    );

    let mut spiked = sol.values.clone();
    spiked.set(20, 16, spiked.at(20, 16) + 0.05);
    let report = check_viscosity_residuals(&spiked, &spec, &family, Side::Sub, tol)?;
    println!(
        "spiked candidate: {} violations, worst {:.3e}",
        report.violations().count(),
        report.worst()
    );
    let broken = check_comparison(&spiked, &sol.values, &spec.order, 1e-12)?;
    println!(
        "spiked <= solution? {} (witness {:?})",
        broken.holds,
        broken.witness.map(|w| (w.step, w.node))
    );

    let table = alpha_limit_study(&spec, &[0.9, 0.99, 0.999], None)?;
    for row in &table.rows {
        println!(
            "alpha {:.3}: distance to classical run {:.3e}",
            row.alpha, row.distance
        );
    }
    Ok(())
}
