//! Greedy selection of a small, relevant and non-redundant image subset,
//! compared with the exhaustive optimum.

use selective_evidence::selector::{
    brute_force_select, greedy_select, rescale, SimilarityBundle, SisWeights,
};

fn main() -> selective_evidence::Result<()> {
    let r = [0.8, 0.6, -0.6];
    let d = vec![
        vec![1.0, 0.9, -0.4],
        vec![0.9, 1.0, -0.4],
        vec![-0.4, -0.4, 1.0],
    ];
    let b = rescale(&r, &d)?;
    let w = SisWeights::default();
    let sel = greedy_select(&b, &w, 2)?;
    println!(
        "three images, K=2: chose {:?} gains {:?} objective {:.4}",
        sel.chosen, sel.gains, sel.objective
    );

    // two near-duplicates, a weaker distinct image and an opposed one
    let q = [1.0f32, 0.0, 0.0];
    let globals = vec![
        vec![0.9f32, 0.1, 0.0],
        vec![0.9, 0.12, 0.0],
        vec![0.5, 0.0, 0.8],
        vec![-1.0, 0.0, 0.0],
    ];
    let b = SimilarityBundle::from_query(&q, &globals)?;
    for k in 1..=3 {
        let g = greedy_select(&b, &w, k)?;
        let opt = brute_force_select(&b, &w, k)?;
        println!(
            "K={k}: greedy {:?} {:.4}  optimum {:?} {:.4}",
            g.chosen, g.objective, opt.chosen, opt.objective
        );
    }
    Ok(())
}
