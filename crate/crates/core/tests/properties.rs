use proptest::collection::vec;
use proptest::prelude::*;

use selective_evidence::aggregate::{
    fuse, set_encode, span_rep, ProjectionHead, SetEncoderWeights,
};
use selective_evidence::calibration::{
    calibrate_threshold, candidate_thresholds, cp_feasible, cp_upper, CalibrationInput,
};
use selective_evidence::dataset::Span;
use selective_evidence::gate::{
    features_from_similarities, gate_score, groundability_features, hard_gate, GateModel,
};
use selective_evidence::matrix::{cosine, read_matrix, write_matrix, EmbeddingMatrix};
use selective_evidence::metrics::{
    act_cov_at, always_on_cost, aurc, entity_counts, estimate_cost, risk_coverage, CostConfig,
};
use selective_evidence::pipeline::{route_dataset, PipelineConfig};
use selective_evidence::scoring::{
    ner_decode, CandidateSpan, EnergyTable, Entity, EntityPrediction,
};
use selective_evidence::selector::{
    greedy_select, rescale, sis_objective, SimilarityBundle, SisWeights,
};
use selective_evidence::synth::{
    generate_world, monte_carlo_calibration_check, world_weights, write_world, MonteCarloConfig,
    WorldConfig,
};

fn finite() -> impl Strategy<Value = f32> {
    any::<u32>()
        .prop_map(f32::from_bits)
        .prop_filter("finite", |x| x.is_finite())
}

fn matrix() -> impl Strategy<Value = EmbeddingMatrix> {
    (0usize..6, 1usize..6).prop_flat_map(|(rows, dim)| {
        vec(finite(), rows * dim)
            .prop_map(move |data| EmbeddingMatrix::new(rows, dim, data).unwrap())
    })
}

fn bundle() -> impl Strategy<Value = SimilarityBundle> {
    (1usize..7).prop_flat_map(|n| {
        (vec(-1.0f64..1.0, n), vec(vec(-1.0f64..1.0, n), n)).prop_map(move |(r, raw)| {
            let mut d = vec![vec![1.0; n]; n];
            for i in 0..n {
                for j in 0..i {
                    d[i][j] = raw[i][j];
                    d[j][i] = raw[i][j];
                }
            }
            rescale(&r, &d).unwrap()
        })
    })
}

fn candidates() -> impl Strategy<Value = Vec<CandidateSpan>> {
    let energy = (-4i32..=4).prop_map(|e| f64::from(e) / 2.0);
    let cand = (
        0usize..10,
        0usize..4,
        energy.clone(),
        energy.clone(),
        vec(energy.clone(), 1..4),
        energy,
    )
        .prop_map(
            |(a, w, no_entity, entity, types, unit_term)| CandidateSpan {
                span: Span::new(a, a + w),
                eta: 0.0,
                consis: 0.0,
                energies: EnergyTable {
                    no_entity,
                    entity,
                    types,
                    unit_term,
                },
            },
        );
    vec(cand, 0..10)
}

fn entities() -> impl Strategy<Value = EntityPrediction> {
    vec((0usize..8, 0usize..2, 0usize..3), 0..6).prop_map(|v| {
        let mut entities: Vec<Entity> = v
            .into_iter()
            .map(|(a, w, t)| Entity::new(a, a + w, t))
            .collect();
        entities.sort();
        entities.dedup();
        EntityPrediction { entities }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matrix_round_trip_is_bit_exact(m in matrix()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        write_matrix(&m, &path).unwrap();
        let back = read_matrix(&path).unwrap();
        prop_assert_eq!(back.to_bytes(), m.to_bytes());
    }

    #[test]
    fn cosine_symmetric_bounded_scale_free(
        pair in (1usize..8).prop_flat_map(|n| (vec(-10.0f64..10.0, n), vec(-10.0f64..10.0, n))),
        c in prop::sample::select(vec![1e-3, 1.0, 1e3]),
    ) {
        let (a, b) = pair;
        let ab = cosine(&a, &b);
        prop_assert_eq!(ab, cosine(&b, &a));
        prop_assert!(ab.abs() <= 1.0 + 1e-7);
        let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
        prop_assert!((cosine(&scaled, &b) - ab).abs() <= 1e-6);
    }

    #[test]
    fn gate_features_ignore_image_order(
        q in vec(-1.0f32..1.0, 4),
        mut globals in vec(vec(-1.0f32..1.0, 4), 1..8),
        seed in any::<u64>(),
    ) {
        let before = groundability_features(&q, &globals).unwrap();
        use rand::{seq::SliceRandom, SeedableRng};
        globals.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(groundability_features(&q, &globals).unwrap(), before);
    }

    #[test]
    fn gate_increases_with_psi_max(
        h in vec(-1.0f64..1.0, 3),
        sims in vec(-0.9f64..0.8, 1..6),
        bump in 0.01f64..0.1,
    ) {
        let model = GateModel::psi_max_only(3, 4.0, 0.0);
        let lo = features_from_similarities(&sims);
        let mut hi = lo;
        hi.psi_max += bump;
        prop_assert!(gate_score(&model, &h, &hi).unwrap() > gate_score(&model, &h, &lo).unwrap());
    }

    #[test]
    fn activation_sets_are_nested(g in vec(0.0f64..1.0, 1..30), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        for &x in &g {
            prop_assert!(!hard_gate(x, hi) || hard_gate(x, lo));
        }
    }

    #[test]
    fn cp_upper_dominates_point_estimate(n in 1u64..60, k_frac in 0.0f64..=1.0, c in 0.5f64..0.999) {
        let k = ((n as f64) * k_frac).floor() as u64;
        let u = cp_upper(k, n, c).unwrap();
        prop_assert!(u >= k as f64 / n as f64);
        if k < n {
            prop_assert!(cp_upper(k + 1, n, c).unwrap() >= u);
        }
        prop_assert!(cp_upper(k, n + 1, c).unwrap() <= u);
    }

    #[test]
    fn calibrated_coverage_is_maximal(
        units in vec((0u8..20, any::<bool>()), 1..60),
        alpha in 0.05f64..0.6,
        delta in 0.01f64..0.2,
    ) {
        let scores: Vec<f64> = units.iter().map(|u| f64::from(u.0) / 20.0).collect();
        let losses: Vec<bool> = units.iter().map(|u| u.1).collect();
        let r = calibrate_threshold(&CalibrationInput::new(scores.clone(), losses.clone(), alpha, delta)).unwrap();
        let best = candidate_thresholds(&scores, &losses)
            .into_iter()
            .filter(|c| cp_feasible(c.k, c.n, alpha, delta))
            .map(|c| c.n)
            .max();
        match best {
            Some(n) => {
                prop_assert!(r.feasible);
                prop_assert_eq!(r.n, n);
                prop_assert!(r.cp_upper <= alpha + 1e-12);
            }
            None => {
                prop_assert!(!r.feasible);
                prop_assert_eq!(r.tau, f64::INFINITY);
            }
        }
    }

    #[test]
    fn sis_monotone_and_submodular(b in bundle(), a_mask in any::<u8>(), extra in any::<u8>(), i in 0usize..7) {
        let n = b.len();
        let w = SisWeights::default();
        let i = i % n;
        let a: Vec<usize> = (0..n).filter(|j| *j != i && a_mask >> j & 1 == 1).collect();
        let bigger: Vec<usize> = (0..n).filter(|j| *j != i && (a.contains(j) || extra >> j & 1 == 1)).collect();
        let f = |s: &[usize]| sis_objective(s, &b, &w).unwrap();
        let with = |s: &[usize]| { let mut v = s.to_vec(); v.push(i); v };
        let gain_a = f(&with(&a)) - f(&a);
        let gain_b = f(&with(&bigger)) - f(&bigger);
        prop_assert!(gain_a >= -1e-12);
        prop_assert!(gain_a + 1e-12 >= gain_b);
    }

    #[test]
    fn greedy_gains_non_increasing(b in bundle(), k in 1usize..5) {
        let sel = greedy_select(&b, &SisWeights::default(), k).unwrap();
        for w in sel.gains.windows(2) {
            prop_assert!(w[0] + 1e-12 >= w[1]);
        }
    }

    #[test]
    fn set_encoder_ignores_order(
        mut set in vec(vec(-2.0f64..2.0, 4), 1..12),
        seed in any::<u64>(),
    ) {
        let w = SetEncoderWeights::seeded(4, 2, 8, 5).unwrap();
        let base = set_encode(&set, &w).unwrap();
        use rand::{seq::SliceRandom, SeedableRng};
        set.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let out = set_encode(&set, &w).unwrap();
        let norm = base.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let diff = base.iter().zip(&out).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assert!(diff / norm <= 1e-5);
    }

    #[test]
    fn span_rep_only_reads_its_rows(
        rows in vec(vec(-1.0f32..1.0, 3), 2..10),
        a in 0usize..10,
        w in 0usize..3,
        noise in vec(-1.0f32..1.0, 3),
    ) {
        let n = rows.len();
        let a = a % n;
        let b = (a + w).min(n - 1);
        let proj = ProjectionHead::block_select(9, 6, 3, 1.0);
        let m = EmbeddingMatrix::from_rows(&rows, None).unwrap();
        let base = span_rep(&m, Span::new(a, b), &proj).unwrap();
        let mut changed = rows.clone();
        for (t, row) in changed.iter_mut().enumerate() {
            if t < a || t > b {
                row.copy_from_slice(&noise);
            }
        }
        let m2 = EmbeddingMatrix::from_rows(&changed, None).unwrap();
        prop_assert_eq!(span_rep(&m2, Span::new(a, b), &proj).unwrap(), base);
    }

    #[test]
    fn fuse_is_affine_in_eta(
        h in vec(-1.0f64..1.0, 3),
        z in vec(-1.0f64..1.0, 2),
        e1 in 0.0f64..=1.0,
        e2 in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        use rand::SeedableRng;
        let head = ProjectionHead::glorot(5, 3, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(fuse(&h, &z, 0.0, &head).unwrap(), h.clone());
        let mid = fuse(&h, &z, (e1 + e2) / 2.0, &head).unwrap();
        let a = fuse(&h, &z, e1, &head).unwrap();
        let b = fuse(&h, &z, e2, &head).unwrap();
        for i in 0..3 {
            prop_assert!((mid[i] - (a[i] + b[i]) / 2.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn decode_is_order_free_and_disjoint(mut c in candidates(), seed in any::<u64>()) {
        let pred = ner_decode(&c);
        for (i, x) in pred.entities.iter().enumerate() {
            for y in &pred.entities[i + 1..] {
                prop_assert!(!x.span().overlaps(&y.span()));
            }
        }
        use rand::{seq::SliceRandom, SeedableRng};
        c.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(ner_decode(&c), pred);
    }

    #[test]
    fn lowering_an_accepted_energy_keeps_it(mut c in candidates(), pick in any::<prop::sample::Index>(), drop in 0.1f64..3.0) {
        let pred = ner_decode(&c);
        prop_assume!(!pred.entities.is_empty());
        let e = pred.entities[pick.index(pred.entities.len())];
        for cand in c.iter_mut().filter(|x| x.span == e.span()) {
            cand.energies.entity -= drop;
        }
        prop_assert!(ner_decode(&c).entities.contains(&e));
    }

    #[test]
    fn aurc_bounds(losses in vec(any::<bool>(), 1..40), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = losses.iter().map(|_| rng.random()).collect();
        let curve = risk_coverage(&scores, &losses).unwrap();
        let a = aurc(&curve);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!(a == 0.0, losses.iter().all(|l| !l));
        prop_assert_eq!(a == 1.0, losses.iter().all(|l| *l));
        let mut prev = 0.0;
        for alpha in [0.0, 0.1, 0.2, 0.4, 0.7, 1.0] {
            let c = act_cov_at(&curve, alpha);
            prop_assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn micro_counts_are_additive(p1 in entities(), g1 in entities(), p2 in entities(), g2 in entities()) {
        // shift the second document so the two sets are disjoint
        let shift = |e: &EntityPrediction| EntityPrediction {
            entities: e.entities.iter().map(|x| Entity::new(x.start + 100, x.end + 100, x.label)).collect(),
        };
        let (p2, g2) = (shift(&p2), shift(&g2));
        let merged = |a: &EntityPrediction, b: &EntityPrediction| EntityPrediction {
            entities: a.entities.iter().chain(&b.entities).copied().collect(),
        };
        let whole = entity_counts(&merged(&p1, &p2), &merged(&g1, &g2));
        prop_assert_eq!(whole, entity_counts(&p1, &g1) + entity_counts(&p2, &g2));
    }

    #[test]
    fn cost_monotone(g1 in 0.0f64..=1.0, g2 in 0.0f64..=1.0, k in 1usize..6) {
        let cfg = CostConfig::default();
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        prop_assert!(estimate_cost(&cfg, lo, k) <= estimate_cost(&cfg, hi, k));
        prop_assert!(estimate_cost(&cfg, lo, k) <= estimate_cost(&cfg, lo, k + 1));
        if lo < 1.0 {
            prop_assert!(estimate_cost(&cfg, lo, k) < always_on_cost(&cfg, k));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn synth_is_deterministic(seed in any::<u64>()) {
        let cfg = WorldConfig { n_samples: 5, seed, ..WorldConfig::default() };
        let dir = tempfile::tempdir().unwrap();
        let mut outputs = Vec::new();
        for run in ["a", "b"] {
            let world = generate_world(&cfg).unwrap();
            let files = write_world(&world, &dir.path().join(run), &serde_json::json!({})).unwrap();
            let mut bytes = Vec::new();
            for p in [files.dataset, files.truth, files.weights] {
                bytes.push(std::fs::read(p).unwrap());
            }
            let mut mats: Vec<_> = std::fs::read_dir(dir.path().join(run).join("mats"))
                .unwrap()
                .map(|e| e.unwrap().path())
                .collect();
            mats.sort();
            bytes.extend(mats.iter().map(|p| std::fs::read(p).unwrap()));
            outputs.push(bytes);
        }
        prop_assert!(outputs[0] == outputs[1]);
    }

    #[test]
    fn routing_is_lazy_nested_and_deterministic(seed in any::<u64>(), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let cfg = WorldConfig { n_samples: 8, seed, ..WorldConfig::default() };
        let world = generate_world(&cfg).unwrap();
        let weights = world_weights(&cfg).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let run = |tau: f64, jobs| {
            let p = PipelineConfig { tau, ..PipelineConfig::default() };
            route_dataset(&world.samples, &weights, &p, jobs).unwrap()
        };
        let low = run(lo, Some(1));
        let high = run(hi, Some(1));
        prop_assert_eq!(&run(lo, Some(3)), &low);
        for (a, b) in low.iter().zip(&high) {
            for (ta, tb) in a.traces.iter().zip(&b.traces) {
                prop_assert!(!tb.gamma || ta.gamma);
                prop_assert!(ta.gamma || ta.region_reads == 0);
            }
            prop_assert_eq!(a.cost, estimate_cost(&PipelineConfig::default().cost, a.gamma_bar, 2));
        }
    }
}

#[test]
fn violation_rate_does_not_grow_with_calibration_size() {
    let rate = |calibration_units| {
        let mc = MonteCarloConfig {
            runs: 300,
            calibration_units,
            population_units: 20_000,
            ..MonteCarloConfig::default()
        };
        monte_carlo_calibration_check(&mc).unwrap().violation_rate
    };
    let rates = [rate(100), rate(200), rate(400)];
    for w in rates.windows(2) {
        assert!(w[1] <= w[0] + 0.02, "violation rates {rates:?}");
    }
}
