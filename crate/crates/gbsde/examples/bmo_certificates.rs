//! BMO-type certificates on the scenario tree: the discrete BMO norm, the
//! reverse-Holder threshold, exponential martingales and the Girsanov tilt.
//!
//! ```bash
//! cargo run --release -p gbsde --example bmo_certificates
//! ```

use gbsde::bmo::{
    bmo_norm_estimate, exponential_martingale, reverse_holder_phi, tilted_expectation,
    IntegrandPath, TreePayoff,
};
use gbsde::tree::Scenario;
use gbsde::{Payoff, VolatilityBand};

fn main() -> gbsde::Result<()> {
    let band = VolatilityBand::new(0.25, 1.0)?;

    println!("discrete BMO norm (squared) over 2^8 controls x grid stopping times:");
    for (name, values) in [
        ("Z = 0", vec![0.0; 8]),
        ("Z = 1", vec![1.0; 8]),
        (
            "Z = 1 on [0, 1/2]",
            vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        ),
    ] {
        let z = IntegrandPath::new((0..=8).map(|k| k as f64 / 8.0).collect(), values)?;
        println!("  {name:18} -> {:.6}", bmo_norm_estimate(&z, &band)?);
    }

    println!("\nreverse-Holder threshold phi(q):");
    for q in [1.5, 2.0, 4.0, 10.0] {
        println!("  phi({q:>4}) = {:.6e}", reverse_holder_phi(q)?);
    }

    let z = IntegrandPath::constant(1.0, 1.0, 8)?;
    let up = Scenario::constant(8, true, true);
    let path = exponential_martingale(&z, &band, &up)?;
    println!(
        "\nexponential martingale along the all-up upper-volatility scenario: end value {:.6}",
        path.last().unwrap()
    );

    let one = Payoff::linear(0.0, 1.0);
    println!(
        "tilted expectation of 1 (unit mass under every control): {:.12}",
        tilted_expectation(TreePayoff::Terminal(&one), &z, &band)?
    );
    let compensated = |dt: f64, xs: &[f64], vols: &[f64]| {
        let compensator: f64 = vols.iter().map(|v| v * dt).sum();
        xs[xs.len() - 1] - compensator
    };
    println!(
        "tilted expectation of B_T - int Z d<B> (walk re-centered by the tilt): {:+.6}",
        tilted_expectation(TreePayoff::Path(&compensated), &z, &band)?
    );
    Ok(())
}
