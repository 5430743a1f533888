//! Modeled per-sample cost as a function of activation coverage and the
//! per-unit image budget.

use selective_evidence::metrics::{always_on_cost, estimate_cost, CostConfig};

fn main() {
    let cfg = CostConfig::default();
    println!("gamma_bar  K=1     K=2     K=3");
    for i in 0..=4 {
        let g = i as f64 / 4.0;
        let row: Vec<String> = (1..=3)
            .map(|k| format!("{:6.2}", estimate_cost(&cfg, g, k)))
            .collect();
        println!("{g:9.2}  {}", row.join("  "));
    }
    println!("always on, K=2: {}", always_on_cost(&cfg, 2));
}
