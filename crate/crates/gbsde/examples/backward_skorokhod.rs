//! Backward Skorokhod problem solved by time reversal: the terminal-anchored
//! decomposition x_t = a + s_T - s_t + k_T - k_t against a closed form.
//!
//! ```bash
//! cargo run --release -p gbsde --example backward_skorokhod
//! ```

use gbsde::skorokhod::{solve_bsp, BoundaryPair, BoundarySide, InputPath};
use gbsde::timefn::LinearFn;

fn main() -> gbsde::Result<()> {
    // Flat input, anchor 0, lower boundary root d(t) = 0.2 (1 - t) and the
    // upper boundary far away: x_t = d(t) and k^r_t = 0.2 t.
    let n = 100;
    let times: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let s = InputPath::new(times.clone(), vec![0.0; n + 1])?.with_anchor(0.0);
    let pair = BoundaryPair {
        l: BoundarySide::Affine {
            slope: 1.0,
            center: LinearFn::constant(50.0),
        },
        r: BoundarySide::Affine {
            slope: 1.0,
            center: LinearFn::from_knots(vec![(0.0, 0.2), (1.0, 0.0)])?,
        },
    };
    let sol = solve_bsp(&s, &pair, 1e-10)?;
    println!("t      x (want 0.2(1-t))   k_r (want 0.2t)");
    let mut worst: f64 = 0.0;
    for i in (0..=n).step_by(20) {
        let t = times[i];
        println!("{t:.2}   {:+.6}            {:+.6}", sol.x[i], sol.k_r[i]);
        worst = worst
            .max((sol.x[i] - 0.2 * (1.0 - t)).abs())
            .max((sol.k_r[i] - 0.2 * t).abs());
    }
    println!("max closed-form error: {worst:.2e}");
    println!(
        "k_0 = {} (zero by definition), k^l = {} throughout",
        sol.k[0],
        sol.k_l.last().unwrap()
    );
    Ok(())
}
