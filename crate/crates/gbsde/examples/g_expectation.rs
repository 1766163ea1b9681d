//! G-expectations of terminal payoffs: the PDE engine against closed forms
//! and against the exhaustive scenario-tree oracle.
//!
//! ```bash
//! cargo run --release -p gbsde --example g_expectation
//! ```

use gbsde::engine::g_expectation;
use gbsde::tree::scenario_supremum;
use gbsde::{GridSpec, Payoff, VolatilityBand};

fn main() -> gbsde::Result<()> {
    let band = VolatilityBand::new(0.25, 1.0)?;
    let grid = GridSpec::centered(0.0, 1.0, 400, 400, &band)?;
    println!(
        "band [{}, {}], grid {} x {}, cfl {:.3}",
        band.sigma_low_sq,
        band.sigma_high_sq,
        grid.n_time,
        grid.n_space,
        grid.cfl_ratio(&band)
    );

    println!("\nclosed forms at the root (t = 0, x = 0):");
    let cases: Vec<(&str, Payoff, f64)> = vec![
        ("E[B_1]", Payoff::linear(1.0, 0.0), 0.0),
        (
            "E[B_1^2]",
            Payoff::quadratic(1.0, 0.0, 0.0),
            band.sigma_high_sq,
        ),
        (
            "E[-B_1^2]",
            Payoff::quadratic(-1.0, 0.0, 0.0),
            -band.sigma_low_sq,
        ),
        (
            "E[B_1^+]",
            Payoff::call(0.0),
            band.sigma_high() / (2.0 * std::f64::consts::PI).sqrt(),
        ),
    ];
    for (name, payoff, target) in &cases {
        let value = g_expectation(payoff, &band, &grid)?;
        println!(
            "  {name:10} = {value:+.6}  (target {target:+.6}, error {:.2e})",
            (value - target).abs()
        );
    }

    println!("\nPDE against the 2^12-control scenario supremum:");
    let payoffs: Vec<(&str, Payoff)> = vec![
        ("convex x^2", Payoff::quadratic(1.0, 0.0, 0.0)),
        ("concave -x^2 + x/2", Payoff::quadratic(-1.0, 0.5, 0.0)),
        (
            "mixed x + min(x^2, 6.25)/4",
            Payoff::custom(|x| x + 0.25 * (x * x).min(6.25), gbsde::GrowthTag::Linear),
        ),
    ];
    for (name, payoff) in &payoffs {
        let pde = g_expectation(payoff, &band, &grid)?;
        let tree = scenario_supremum(payoff, &band, 1.0, 12)?;
        println!(
            "  {name:26} pde {pde:+.6}  tree {tree:+.6}  |diff| {:.2e}",
            (pde - tree).abs()
        );
    }
    Ok(())
}
