use atrfas::dataset::{read_dataset, Dataset, Split};
use atrfas::synthgen::{generate_dataset, generate_samples, GeneratorConfig};

fn default_data() -> Dataset {
    generate_samples(&GeneratorConfig::default(), 1).unwrap().0
}

/// Per-frame mean intensity, the only input of the depth-free baseline.
fn mean_features(d: &Dataset, split: Split) -> (Vec<Vec<f64>>, Vec<f64>) {
    d.indices(split)
        .into_iter()
        .map(|i| {
            let s = &d.samples()[i];
            let n0 = s.sequence.frames.shape()[0];
            let per = s.sequence.frames.numel() / n0;
            let feats = s
                .sequence
                .frames
                .data()
                .chunks(per)
                .map(|f| f.iter().map(|&v| v as f64).sum::<f64>() / per as f64)
                .collect();
            (feats, s.cls_label() as f64)
        })
        .unzip()
}

/// Full-batch gradient-descent logistic regression on standardized features.
fn logistic_accuracy(train: &(Vec<Vec<f64>>, Vec<f64>), test: &(Vec<Vec<f64>>, Vec<f64>)) -> (f64, f64) {
    let k = train.0[0].len();
    let n = train.0.len() as f64;
    let mean: Vec<f64> = (0..k).map(|j| train.0.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..k)
        .map(|j| (train.0.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-12))
        .collect();
    let z = |x: &[f64]| -> Vec<f64> { (0..k).map(|j| (x[j] - mean[j]) / std[j]).collect() };
    let (mut w, mut b) = (vec![0.0; k], 0.0);
    let prob = |w: &[f64], b: f64, x: &[f64]| 1.0 / (1.0 + (-(b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())).exp());
    let xs: Vec<Vec<f64>> = train.0.iter().map(|x| z(x)).collect();
    for _ in 0..3000 {
        let (mut gw, mut gb) = (vec![0.0; k], 0.0);
        for (x, &y) in xs.iter().zip(&train.1) {
            let e = prob(&w, b, x) - y;
            gb += e;
            for j in 0..k {
                gw[j] += e * x[j];
            }
        }
        b -= 0.5 * gb / n;
        for j in 0..k {
            w[j] -= 0.5 * gw[j] / n;
        }
    }
    let acc = |set: &(Vec<Vec<f64>>, Vec<f64>)| {
        let hits = set.0.iter().zip(&set.1).filter(|(x, &y)| (prob(&w, b, &z(x)) >= 0.5) == (y == 1.0)).count();
        hits as f64 / set.0.len() as f64
    };
    (acc(train), acc(test))
}

#[test]
fn mean_intensity_baseline_stays_below_seventy_percent() {
    let d = default_data();
    let train = mean_features(&d, Split::Train);
    let test = mean_features(&d, Split::Test);
    let (train_acc, test_acc) = logistic_accuracy(&train, &test);
    eprintln!("mean-intensity baseline: train {train_acc:.3}, test {test_acc:.3}");
    assert!(test_acc < 0.70, "baseline reached {test_acc} (train {train_acc})");
}

#[test]
fn depth_labels_separate_the_classes() {
    let d = default_data();
    for s in d.samples() {
        let v = s.depth_label.data();
        let constant = v.iter().all(|&x| x == v[0]);
        assert_eq!(constant, s.cls_label() == 1, "sample {}", s.id);
        assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}

#[test]
fn gate_labels_are_distributions() {
    for s in default_data().samples() {
        let total: f32 = s.gate_label.iter().sum();
        assert_eq!(total, 1.0, "sample {}", s.id);
    }
}

#[test]
fn parallel_generation_matches_serial() {
    let config = GeneratorConfig {
        size: 16,
        ..GeneratorConfig::default()
    };
    let (a, sa) = generate_samples(&config, 1).unwrap();
    let (b, sb) = generate_samples(&config, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(sa.bins, sb.bins);
    assert_eq!(sa.bins.len(), 8);
}

#[test]
fn written_datasets_read_back_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let config = GeneratorConfig {
        size: 16,
        ..GeneratorConfig::default()
    };
    let (written, _) = generate_dataset(&config, dir.path(), 1).unwrap();
    assert_eq!(read_dataset(dir.path()).unwrap(), written);
}
