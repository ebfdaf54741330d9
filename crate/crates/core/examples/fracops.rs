//! Caputo derivative of sampled time series: L1 scheme, J + K split, Marchaud
//! form and a two-term order.

use fracvisc::fracops::{
    caputo_l1, caputo_multi_term, eval_j, eval_k, gamma, marchaud_eval, rl_integral,
};
use fracvisc::{FractionalOrder, MultiTermOrder, TimeGrid, TimeSeries};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let alpha = FractionalOrder::new(0.5)?;
    let exact = gamma(3.0)? / gamma(2.5)?;
    println!("d^0.5/dt^0.5 t^2 at t = 1, exact {exact:.10}");
    for steps in [50, 100, 200, 400] {
        let s = TimeSeries::from_fn(TimeGrid::new(1.0, steps)?, |t| t * t)?;
        let l1 = caputo_l1(&s, alpha, steps)?;
        let split = eval_j(0.0, 1.0, alpha, 1.0)? + eval_k(&s, alpha, 0.0, 1.0)?;
        let marchaud = marchaud_eval(&s, alpha, steps)?;
        println!(
            "  N = {steps:>4}: L1 {l1:.10} (err {:.2e}), J + K {split:.10}, Marchaud {marchaud:.10}",
            (l1 - exact).abs()
        );
    }

    let grid = TimeGrid::new(2.0, 400)?;
    let s = TimeSeries::from_fn(grid, f64::sin)?;
    let two = MultiTermOrder::new(vec![
        (1.0, FractionalOrder::new(0.3)?),
        (0.5, FractionalOrder::new(0.8)?),
    ])?;
    println!(
        "two-term derivative of sin at t = 2: {:.8}",
        caputo_multi_term(&s, &two, 400)?
    );
    println!(
        "half integral of sin at t = 2: {:.8}",
        rl_integral(&s, alpha, 400)?
    );
    Ok(())
}
