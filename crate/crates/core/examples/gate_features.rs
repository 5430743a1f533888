//! Groundability features and gate scores for one query against a handful of
//! global image vectors, then the activation decision at a few thresholds.

use selective_evidence::gate::{
    gate_score, groundability_features, hard_gate, pair_gate, GateModel,
};

fn main() -> selective_evidence::Result<()> {
    let q = [1.0f32, 0.2, 0.0, -0.1];
    let globals = vec![
        vec![0.9f32, 0.1, 0.0, 0.0],
        vec![-1.0, 0.0, 0.1, 0.0],
        vec![0.1, 0.0, 1.0, 0.3],
    ];
    let feats = groundability_features(&q, &globals)?;
    println!(
        "psi_max {:.3} mean {:.3} std {:.3} top2 {:.3}",
        feats.psi_max, feats.mean, feats.std, feats.top2_mean
    );

    let model = GateModel::psi_max_only(4, 8.0, 0.5);
    let h = [0.0; 4];
    let g = gate_score(&model, &h, &feats)?;
    println!("g = {g:.4}");
    for tau in [0.2, 0.5, 0.9, f64::INFINITY] {
        println!("  tau {tau:>4}: activate = {}", hard_gate(g, tau));
    }

    let none = groundability_features(&q, &Vec::<Vec<f32>>::new())?;
    println!(
        "no images: no_image = {}, g = {:.4}",
        none.no_image,
        gate_score(&model, &h, &none)?
    );
    println!("pair gate of (0.3, 0.8) = {}", pair_gate(0.3, 0.8));
    Ok(())
}
