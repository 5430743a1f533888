//! Picks a gate threshold from scored calibration units so that the activated
//! subset's risk is bounded with the requested confidence.

use selective_evidence::calibration::{calibrate_threshold, cp_upper, CalibrationInput};

fn main() -> selective_evidence::Result<()> {
    // a loss every 25th unit among the top scores, every 2nd below 0.4
    let mut scores = Vec::new();
    let mut losses = Vec::new();
    for i in 0..300 {
        let s = 1.0 - i as f64 / 300.0;
        scores.push(s);
        losses.push(if s > 0.4 { i % 25 == 24 } else { i % 2 == 0 });
    }
    for k in [0, 1, 5] {
        println!("cp_upper({k}, 50; 0.95) = {:.4}", cp_upper(k, 50, 0.95)?);
    }
    for alpha in [0.05, 0.10, 0.20] {
        let r = calibrate_threshold(&CalibrationInput::new(
            scores.clone(),
            losses.clone(),
            alpha,
            0.05,
        ))?;
        println!(
            "alpha {alpha:.2}: tau {:.4} activates {}/{} with {} errors, bound {:.4}, feasible {}",
            r.tau, r.n, r.calibration_size, r.k, r.cp_upper, r.feasible
        );
    }
    Ok(())
}
