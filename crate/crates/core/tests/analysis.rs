use gradlex::analysis::{activation_profile, evaluate, predictions, ActivationProfile, DEFAULT_BINS};
use gradlex::data::SyntheticSpec;
use gradlex::nn::Architecture;
use gradlex::seed;

#[test]
fn accuracy_equals_recount_of_predictions() {
    let train = SyntheticSpec::gaussian_blobs(60, 2, 3, 3, 1.5).generate().unwrap();
    let test = SyntheticSpec::gaussian_blobs(75, 2, 3, 3, 1.5)
        .with_split(1)
        .generate()
        .unwrap()
        .with_means(train.means().to_vec())
        .unwrap();
    let model = Architecture::MlpSmall { hidden: 6 }
        .init(&[1, 3, 3], 3, &mut seed::rng(4))
        .unwrap();
    let report = evaluate(&model, &test).unwrap();
    let preds = predictions(&model, &test).unwrap();
    let hits = preds.iter().zip(test.labels()).filter(|(p, y)| p == y).count();
    assert_eq!(report.correct, hits);
    assert_eq!(report.accuracy, hits as f64 / 75.0);
    assert_eq!(report.count, 75);
    assert_eq!(evaluate(&model, &test).unwrap(), report);
}

#[test]
fn single_sample_profile_is_first_row() {
    let ds = SyntheticSpec::gaussian_blobs(120, 3, 2, 8, 1.0).generate().unwrap();
    let model = Architecture::ConvSmall { channels: 3 }
        .init(&[1, 8, 8], 2, &mut seed::rng(1))
        .unwrap();
    let layer = model.final_conv_block().unwrap();
    let full = activation_profile(&model, layer, &ds, 100, DEFAULT_BINS).unwrap();
    let one = activation_profile(&model, layer, &ds, 1, DEFAULT_BINS).unwrap();
    assert_eq!(full.samples, 100);
    assert_eq!(full.channels, 6);
    assert_eq!(one.values, full.row(0));
    assert_eq!(full.histogram.total(), 600);
    assert_eq!(activation_profile(&model, layer, &ds, 100, DEFAULT_BINS).unwrap(), full);
}

#[test]
fn uniform_profile_reaches_maximum_entropy() {
    let bins = 50;
    // Bin centres over [0, 50], one value each, plus the top edge itself.
    let mut values: Vec<f64> = (0..bins).map(|b| b as f64 + 0.5).collect();
    values[bins - 1] = bins as f64;
    let p = ActivationProfile::from_values("synthetic", 0, 1, values, bins).unwrap();
    assert!(p.histogram.counts.iter().all(|&c| c == 1));
    assert!((p.histogram.entropy() - (bins as f64).ln()).abs() < 1e-12);
    assert!((p.histogram.normalized_entropy() - 1.0).abs() < 1e-12);
}
