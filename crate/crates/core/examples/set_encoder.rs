//! Encodes an evidence set into one vector and shows that the result does not
//! depend on the order of the set.

use selective_evidence::aggregate::{set_encode, set_encode_with_attention, SetEncoderWeights};

fn main() -> selective_evidence::Result<()> {
    let w = SetEncoderWeights::seeded(6, 2, 12, 42)?;
    let set: Vec<Vec<f64>> = (0..5)
        .map(|i| {
            (0..6)
                .map(|j| ((i * 7 + j * 3) % 5) as f64 / 5.0 - 0.4)
                .collect()
        })
        .collect();
    let z = set_encode(&set, &w)?;
    let mut reversed = set.clone();
    reversed.reverse();
    let z2 = set_encode(&reversed, &w)?;
    let diff = z
        .iter()
        .zip(&z2)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!(
        "z = {:?}",
        z.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
    );
    println!("max |z - z_reversed| = {diff:.2e}");
    let enc = set_encode_with_attention(&set, &w)?;
    for (h, row) in enc.pool_attention.iter().enumerate() {
        println!(
            "head {h} pooling weights: {:?}",
            row.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        );
    }
    Ok(())
}
