//! Risk-coverage curve, AURC and activation coverage for a small set of
//! scored units, plus micro precision/recall/F1.

use selective_evidence::metrics::{act_cov_at, aurc, relation_micro_f1, risk_coverage};

fn main() -> selective_evidence::Result<()> {
    let scores = [0.9, 0.8, 0.7, 0.6];
    let losses = [false, false, true, false];
    let curve = risk_coverage(&scores, &losses)?;
    print!("{}", curve.to_tsv());
    println!("AURC {:.6}", aurc(&curve));
    for alpha in [0.0, 0.1, 0.3, 0.5] {
        println!("ActCov@{alpha} = {}", act_cov_at(&curve, alpha));
    }
    let prf = relation_micro_f1(&[1, 2, 0, 3], &[1, 3, 0, 3], Some(0))?;
    println!(
        "relations: P {:.3} R {:.3} F1 {:.3}",
        prf.precision, prf.recall, prf.f1
    );
    Ok(())
}
