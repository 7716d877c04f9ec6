use climadapt_core::fusion::{
    gradient_check, init_model, train, Dataset, FeatureRecord, ModelFile, TrainOptions, WideDeepModel,
    MODEL_FORMAT_VERSION,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Evaluates the network by spelling out every sum, without the library's
// layer helpers.
fn straight_line_forward(m: &WideDeepModel, r: &FeatureRecord) -> f64 {
    let mut out = m.head_bias;
    for i in 0..r.wide.len() {
        let x = (r.wide[i] - m.wide_standardizer.mean[i]) / m.wide_standardizer.scale[i];
        out += m.wide_weights[i] * x;
    }
    let mut act: Vec<f64> = (0..r.deep.len())
        .map(|i| (r.deep[i] - m.deep_standardizer.mean[i]) / m.deep_standardizer.scale[i])
        .collect();
    for layer in &m.layers {
        let mut next = Vec::new();
        for j in 0..layer.outputs {
            let mut z = layer.bias[j];
            for i in 0..layer.inputs {
                z += layer.weights[j * layer.inputs + i] * act[i];
            }
            next.push(z.tanh());
        }
        act = next;
    }
    for (w, h) in m.head_weights.iter().zip(&act) {
        out += w * h;
    }
    out
}

fn random_record(rng: &mut ChaCha8Rng, wide: usize, deep: usize) -> FeatureRecord {
    FeatureRecord {
        wide: (0..wide).map(|_| rng.random_range(-2.0..2.0)).collect(),
        deep: (0..deep).map(|_| rng.random_range(-2.0..2.0)).collect(),
        target: rng.random_range(-1.0..1.0),
    }
}

fn planted_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|_| {
            let wide: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let deep: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let target = 0.7 * wide[0] - 1.3 * wide[1] + 0.4 * wide[2] + 2.0;
            FeatureRecord { wide, deep, target }
        })
        .collect();
    Dataset {
        wide_names: vec!["co2".into(), "sst".into(), "precip".into()],
        deep_names: vec!["ugi".into(), "ldi".into(), "canopy".into(), "albedo".into()],
        records,
    }
}

#[test]
fn forward_matches_straight_line_evaluator() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..20 {
        let mut m = init_model(3, 5, &[4, 2], seed).unwrap();
        m.wide_weights = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        m.head_bias = rng.random_range(-1.0..1.0);
        m.wide_standardizer.mean = vec![0.1, -0.2, 0.3];
        m.deep_standardizer.scale = vec![2.0, 0.5, 1.0, 3.0, 1.5];
        let r = random_record(&mut rng, 3, 5);
        let a = m.forward(&r).unwrap();
        let b = straight_line_forward(&m, &r);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn zeroed_deep_path_is_wide_linear_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut m = init_model(3, 4, &[4, 2], 1).unwrap();
    m.wide_weights = vec![0.5, -1.5, 2.0];
    m.head_bias = 0.25;
    m.zero_deep_path();
    for _ in 0..50 {
        let r = random_record(&mut rng, 3, 4);
        let linear = (0.5 * r.wide[0] + -1.5 * r.wide[1] + 2.0 * r.wide[2]) + 0.25;
        assert_eq!(m.forward(&r).unwrap(), linear);
    }
}

#[test]
fn planted_wide_model_is_learned() {
    let train_set = planted_dataset(80, 1);
    let test_set = planted_dataset(40, 2);
    let mut m = init_model(3, 4, &[4, 2], 7).unwrap();
    m.fit_standardization(&train_set).unwrap();
    let opts = TrainOptions {
        epochs: 4000,
        learning_rate: 0.1,
    };
    let (trained, history) = train(&m, &train_set, &opts).unwrap();
    assert_eq!(history.len(), 4000);
    let mse = trained.mse(&test_set).unwrap();
    assert!(mse < 1e-4, "held-out mse {mse}");
    let r = &test_set.records[0];
    assert!(gradient_check(&trained, r).unwrap() < 1e-4);
}

#[test]
fn training_is_deterministic() {
    let data = planted_dataset(20, 4);
    let m = init_model(3, 4, &[4, 2], 5).unwrap();
    let opts = TrainOptions {
        epochs: 50,
        learning_rate: 0.05,
    };
    let (a, ha) = train(&m, &data, &opts).unwrap();
    let (b, hb) = train(&m, &data, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
}

#[test]
fn wide_only_loss_is_nonincreasing() {
    let data = planted_dataset(30, 6);
    let mut m = init_model(3, 4, &[2], 0).unwrap();
    m.zero_deep_path();
    // With zero head and layer weights the deep path stays frozen at zero.
    let (_, history) = train(
        &m,
        &data,
        &TrainOptions {
            epochs: 200,
            learning_rate: 0.01,
        },
    )
    .unwrap();
    assert!(history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn standardization_absorbs_feature_scaling() {
    let data = planted_dataset(30, 9);
    let mut m = init_model(3, 4, &[4, 2], 2).unwrap();
    m.fit_standardization(&data).unwrap();
    let (trained, _) = train(
        &m,
        &data,
        &TrainOptions {
            epochs: 100,
            learning_rate: 0.05,
        },
    )
    .unwrap();
    // Rescale wide column 1 by 3 and refit standardizers: standardized wide
    // inputs are unchanged, and so is every prediction.
    let mut scaled = data.clone();
    scaled.records.iter_mut().for_each(|r| r.wide[1] *= 3.0);
    let mut refit = trained.clone();
    refit.fit_standardization(&scaled).unwrap();
    refit.deep_standardizer = trained.deep_standardizer.clone();
    for (a, b) in data.records.iter().zip(&scaled.records) {
        let pa = trained.forward(a).unwrap();
        let pb = refit.forward(b).unwrap();
        assert!((pa - pb).abs() < 1e-12);
    }
    // Deep features at initialization.
    let mut deep_scaled = data.clone();
    deep_scaled.records.iter_mut().for_each(|r| r.deep[2] = 0.5 * r.deep[2] + 4.0);
    let mut init_refit = m.clone();
    init_refit.fit_standardization(&deep_scaled).unwrap();
    for (a, b) in data.records.iter().zip(&deep_scaled.records) {
        assert!((m.forward(a).unwrap() - init_refit.forward(b).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn gradient_check_over_seeds() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..20 {
        let mut m = init_model(3, 5, &[4, 2], seed).unwrap();
        m.wide_weights = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = random_record(&mut rng, 3, 5);
        let err = gradient_check(&m, &r).unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn model_file_round_trip() {
    let m = init_model(3, 4, &[4, 2], 3).unwrap();
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        wide_names: vec!["a".into(), "b".into(), "c".into()],
        deep_names: vec!["d".into(), "e".into(), "f".into(), "g".into()],
        model: m,
    };
    let text = file.to_json();
    assert!(text.contains("\"format_version\": 1"));
    assert_eq!(ModelFile::from_json(&text).unwrap(), file);
    let bumped = text.replace("\"format_version\": 1", "\"format_version\": 2");
    assert!(ModelFile::from_json(&bumped).is_err());
}
