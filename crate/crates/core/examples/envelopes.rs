//! Sup- and inf-convolution of a kinked grid function.

use fracvisc::envelopes::{
    envelope_brute, inf_convolution, sup_convolution, EnvelopeKind, SpatialGridFunction,
};
use fracvisc::DomainGeometry;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let geom = DomainGeometry::interval(1.0, 20)?;
    let f =
        SpatialGridFunction::from_fn(geom, |x| -(x[0] - 0.5).abs() + 0.3 * (12.0 * x[0]).sin())?;
    let eps = 0.05;
    let sup = sup_convolution(&f, eps)?;
    let inf = inf_convolution(&f, eps)?;
    let brute = envelope_brute(&f, eps, EnvelopeKind::Sup)?;
    println!("{:>5} {:>9} {:>9} {:>9}", "x", "inf", "f", "sup");
    for node in 0..geom.node_count() {
        println!(
            "{:>5.2} {:>9.5} {:>9.5} {:>9.5}",
            geom.coords(node)[0],
            inf.values()[node],
            f.values()[node],
            sup.values()[node]
        );
    }
    println!("fast == brute force: {}", sup.values() == brute.values());
    Ok(())
}
