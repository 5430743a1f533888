//! Energy-based span decoding: admissible spans are accepted greedily by
//! total energy without overlaps; relations are the argmin of the relation head.

use selective_evidence::dataset::Span;
use selective_evidence::scoring::{
    ner_decode, re_predict, CandidateSpan, EnergyTable, ScoringHeads,
};

fn cand(a: usize, b: usize, no_entity: f64, entity: f64, types: &[f64]) -> CandidateSpan {
    CandidateSpan {
        span: Span::new(a, b),
        eta: 0.0,
        consis: 0.0,
        energies: EnergyTable {
            no_entity,
            entity,
            types: types.to_vec(),
            unit_term: 0.0,
        },
    }
}

fn main() -> selective_evidence::Result<()> {
    let cands = vec![
        cand(0, 1, 0.0, -1.0, &[-0.5, 0.2]),
        cand(1, 2, 0.0, -2.0, &[0.1, 0.3]),
        cand(4, 4, 0.5, 0.4, &[0.2, 0.0]),
        cand(6, 7, 0.0, -0.3, &[0.0, -0.4]),
    ];
    for c in &cands {
        let (t, e) = c.energies.best_type();
        println!(
            "({}, {}) best type {t} energy {e:.2} admissible {}",
            c.span.start,
            c.span.end,
            c.energies.admissible()
        );
    }
    println!("decoded: {:?}", ner_decode(&cands).entities);

    let heads = ScoringHeads::seeded(2, 2, 4, 5, 3);
    let u = [0.3, -0.2, 0.8, 0.1];
    for (eta, consis) in [(0.0, 0.0), (1.0, 1.0), (0.5, -0.7)] {
        println!(
            "relation at eta {eta}, consis {consis}: {}",
            re_predict(&u, eta, consis, &heads)?
        );
    }
    Ok(())
}
