//! Checks the calibration guarantee on synthetic worlds: how often the true
//! activated risk of the calibrated threshold exceeds alpha, and how much
//! coverage the bound gives up against the best threshold for the world.
//!
//! Run with `cargo run --release --example calibration_monte_carlo`.

use selective_evidence::synth::{monte_carlo_calibration_check, MonteCarloConfig};

fn main() -> selective_evidence::Result<()> {
    let mc = MonteCarloConfig::default();
    let t = std::time::Instant::now();
    let report = monte_carlo_calibration_check(&mc)?;
    println!(
        "alpha {} delta {} runs {} calibration units {}",
        mc.alpha, mc.delta, mc.runs, mc.calibration_units
    );
    println!("violation rate   {:.4}", report.violation_rate);
    println!("mean true risk   {:.4}", report.mean_true_risk);
    println!("mean coverage    {:.4}", report.mean_coverage);
    println!("oracle coverage  {:.4}", report.oracle_coverage);
    println!("infeasible runs  {}", report.infeasible_runs);
    println!("elapsed          {:.2?}", t.elapsed());
    Ok(())
}
