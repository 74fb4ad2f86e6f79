use ndarray::Array2;
use proptest::prelude::*;

use sleepcons::harness::make_folds;
use sleepcons::metrics::{acs, classification_scores, confusion_from_indices, ece, ConfusionMatrix};
use sleepcons::model::init_model;
use sleepcons::records::{parse_labels, write_labels, MultiScoredRecord, NcPolicy, SleepStage, NUM_CLASSES};
use sleepcons::synthgen::{diagonal_confusion, generate, mean_soft_agreement, GeneratorSpec};
use sleepcons::viz::band_bounds;

fn stage() -> impl Strategy<Value = SleepStage> {
    prop_oneof![
        4 => (0..NUM_CLASSES).prop_map(|k| SleepStage::from_class_index(k).unwrap()),
        1 => Just(SleepStage::NC),
    ]
}

fn record() -> impl Strategy<Value = MultiScoredRecord> {
    (1usize..6, 1usize..30)
        .prop_flat_map(|(j, t)| prop::collection::vec(prop::collection::vec(stage(), t), j))
        .prop_map(|grid| {
            let ids = (1..=grid.len()).map(|j| format!("scorer_{j}")).collect();
            MultiScoredRecord::from_grid("S001", ids, grid).unwrap()
        })
}

fn stochastic_rows(rows: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(0.0f64..1.0, rows * NUM_CLASSES).prop_map(move |raw| {
        let mut m = Array2::from_shape_vec((rows, NUM_CLASSES), raw).unwrap();
        for mut r in m.rows_mut() {
            r.mapv_inplace(|v| v + 1e-3);
            let s = r.sum();
            r.mapv_inplace(|v| v / s);
        }
        m
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn label_table_round_trips(rec in record()) {
        let mut buf = Vec::new();
        write_labels(std::slice::from_ref(&rec), &mut buf).unwrap();
        let back = parse_labels(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), 1);
        for j in 0..rec.num_scorers() {
            prop_assert_eq!(back[0].scorer_labels(j), rec.scorer_labels(j));
        }
    }

    #[test]
    fn dropping_unclassified_is_idempotent(rec in record()) {
        let once = rec.drop_unclassified(NcPolicy::DropUnanimous);
        let twice = once.drop_unclassified(NcPolicy::DropUnanimous);
        prop_assert_eq!(&once, &twice);
        prop_assert!(once.retained_count() <= once.num_epochs());
        for t in once.retained_epochs() {
            prop_assert!(once.epoch_votes(t).any(|s| s.is_scored()));
        }
    }

    #[test]
    fn acs_is_symmetric_and_self_similar(x in stochastic_rows(12), y in stochastic_rows(12)) {
        prop_assert!((acs(&x, &x).unwrap() - 1.0).abs() <= 1e-12);
        prop_assert_eq!(acs(&x, &y).unwrap(), acs(&y, &x).unwrap());
    }

    #[test]
    fn kappa_is_scale_invariant(
        t in prop::collection::vec(0usize..NUM_CLASSES, 5..200),
        noise in prop::collection::vec(0usize..NUM_CLASSES, 200),
        factor in 2u64..50,
    ) {
        let p: Vec<usize> = t.iter().zip(&noise).map(|(&a, &b)| if b < 2 { b } else { a }).collect();
        let cm = confusion_from_indices(&t, &p).unwrap();
        let a = classification_scores(&cm).unwrap();
        let b = classification_scores(&cm.scaled(factor)).unwrap();
        prop_assert!((a.kappa - b.kappa).abs() <= 1e-12);
    }

    #[test]
    fn full_diagonal_gives_perfect_kappa(diag in prop::array::uniform5(1u64..100)) {
        let mut counts = [[0u64; NUM_CLASSES]; NUM_CLASSES];
        for k in 0..NUM_CLASSES {
            counts[k][k] = diag[k];
        }
        let s = classification_scores(&ConfusionMatrix { counts }).unwrap();
        prop_assert!((s.kappa - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn balanced_truth_makes_weighted_equal_macro(
        per_class in 1usize..20,
        preds in prop::collection::vec(0usize..NUM_CLASSES, 100),
    ) {
        let t: Vec<usize> = (0..NUM_CLASSES * per_class).map(|i| i % NUM_CLASSES).collect();
        let p: Vec<usize> = (0..t.len()).map(|i| preds[i % preds.len()]).collect();
        let s = classification_scores(&confusion_from_indices(&t, &p).unwrap()).unwrap();
        prop_assert!((s.weighted_f1 - s.macro_f1).abs() <= 1e-12);
    }

    #[test]
    fn ece_vanishes_when_confidence_matches_accuracy(bins in 1usize..=10, reps in 1usize..5) {
        // Each bin holds rows of confidence c with exactly a c-fraction correct.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..reps {
            for (conf, correct) in [(0.5, 1usize), (0.75, 3), (1.0, 4)] {
                let n = if conf == 0.5 { 2 } else { 4 };
                for i in 0..n {
                    let rest = (1.0 - conf) / (NUM_CLASSES - 1) as f64;
                    let mut row = [rest; NUM_CLASSES];
                    row[0] = conf;
                    rows.extend_from_slice(&row);
                    labels.push(if i < correct { 0 } else { 1 });
                }
            }
        }
        let probs = Array2::from_shape_vec((labels.len(), NUM_CLASSES), rows).unwrap();
        let (value, _) = ece(&probs, &labels, bins).unwrap();
        prop_assert!(value.abs() <= 1e-12, "ECE {}", value);
    }

    #[test]
    fn predicted_rows_are_stochastic(
        seed in any::<u64>(),
        hidden in prop_oneof![Just(0usize), Just(8), Just(32)],
        scale in 0.1f64..200.0,
        raw in prop::collection::vec(-1.0f64..1.0, 40),
    ) {
        let model = init_model(seed, 4, hidden, 0.3).unwrap();
        let x = Array2::from_shape_vec((10, 4), raw).unwrap() * scale;
        for row in model.predict_proba(&x).unwrap().rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn fold_tests_partition_the_cohort(n in 6usize..60, k in 2usize..6, seed in any::<u64>()) {
        prop_assume!(n >= k + 2);
        let ids: Vec<String> = (0..n).map(|i| format!("P{i}")).collect();
        let test = n / k;
        let plan = make_folds(&ids, k, 1, test, seed).unwrap();
        let mut seen: Vec<&String> = plan.folds.iter().flat_map(|f| &f.test).collect();
        seen.sort();
        let mut expected: Vec<&String> = ids.iter().collect();
        expected.sort();
        prop_assert_eq!(seen, expected);
        for f in &plan.folds {
            for id in &f.test {
                prop_assert!(!f.train.contains(id) && !f.val.contains(id));
            }
            prop_assert_eq!(f.train.len() + f.val.len() + f.test.len(), n);
        }
    }

    #[test]
    fn stacked_bands_fill_the_unit_interval(rows in stochastic_rows(8)) {
        for row in rows.rows() {
            let bounds = band_bounds(&row.to_vec());
            let total: f64 = bounds.iter().map(|(lo, hi)| hi - lo).sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
            let top = bounds.iter().map(|b| b.1).fold(0.0, f64::max);
            prop_assert!((top - 1.0).abs() <= 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generation_is_deterministic(seed in any::<u64>()) {
        let spec = GeneratorSpec { subjects: 3, epochs: 40, seed, ..GeneratorSpec::default() };
        prop_assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }
}

#[test]
fn agreement_increases_with_diagonal_mass() {
    let mut last = 0.0;
    for d in [0.3, 0.45, 0.6, 0.75, 0.9, 1.0] {
        let spec = GeneratorSpec {
            subjects: 6,
            epochs: 400,
            seed: 12,
            ..GeneratorSpec::default()
        }
        .with_shared_confusion(diagonal_confusion(d));
        let records: Vec<MultiScoredRecord> = generate(&spec).unwrap().into_iter().map(|s| s.record).collect();
        let sa = mean_soft_agreement(&records).unwrap();
        assert!(sa > last, "diagonal {d}: SA {sa} not above {last}");
        last = sa;
    }
}
