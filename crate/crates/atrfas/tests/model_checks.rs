use atrfas::dataset::{PreparedSet, Split};
use atrfas::diffnorm::InputTransform;
use atrfas::net::{AtrFasModel, ModelConfig, Mode};
use atrfas::synthgen::{generate_samples, ClassCounts, GeneratorConfig};
use ndarr_core::{grad_check_with, Estimator, GradCheckOptions, Graph, RngStream, Tensor, Var};

fn small_set() -> PreparedSet {
    let config = GeneratorConfig {
        size: 16,
        train: ClassCounts {
            live: 1,
            print: 1,
            replay: 1,
            mask: 1,
        },
        test: ClassCounts {
            live: 1,
            print: 1,
            replay: 0,
            mask: 0,
        },
        ..GeneratorConfig::default()
    };
    let (d, _) = generate_samples(&config, 1).unwrap();
    PreparedSet::new(&d.subset(&d.indices(Split::Train)), InputTransform::DiffNorm, false).unwrap()
}

fn small_config(mode: Mode) -> ModelConfig {
    ModelConfig {
        mode,
        stem_channels: 4,
        size: 16,
        ..ModelConfig::default()
    }
}

/// Every forward output of the batch, flattened and concatenated, as a
/// function of every parameter tensor and the input (input last).
fn outputs_of(model: &AtrFasModel) -> impl Fn(&mut Graph, &[Var]) -> ndarr_core::Result<Var> + '_ {
    move |g: &mut Graph, v: &[Var]| {
        let (x, p) = v.split_last().unwrap();
        let out = model.forward(g, p, *x, &mut RngStream::new(0)).expect("forward");
        let parts: Vec<Var> = [Some(out.frame_depths), Some(out.depth), out.attention, out.g, Some(out.prob)]
            .into_iter()
            .flatten()
            .map(|t| {
                let n = g.shape(t).iter().product();
                g.reshape(t, &[n])
            })
            .collect::<ndarr_core::Result<_>>()?;
        g.concat(&parts, 0)
    }
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let set = small_set();
    let batch = set.batch(&[0, 1, 2, 3]).unwrap();
    for seed in 0..10 {
        let model = AtrFasModel::new(small_config(Mode::Dgm), seed).unwrap();
        let mut inputs: Vec<Tensor> = model.params().tensors().cloned().collect();
        inputs.push(batch.inputs.clone());
        // Every tensor contributes its two largest-gradient coordinates. The
        // sigmoid and softmax heads bend the outputs too much for one fixed
        // step, so each coordinate gets a Ridders extrapolation started where
        // no single output moves by more than 0.015, restarted from wider and
        // narrower steps when its error table converges poorly. Tensors whose gradient
        // vanishes by symmetry (biases shifting every frame's attention logit
        // alike) are judged against 1% of the largest gradient.
        let opts = GradCheckOptions {
            eps: 0.1,
            estimator: Estimator::Ridders,
            start_change: Some(0.015),
            seed,
            coords_per_input: Some(2),
            global_floor: 1e-2,
            ..GradCheckOptions::default()
        };
        let report = grad_check_with(outputs_of(&model), &inputs, &opts).unwrap();
        assert!(
            report.max_rel_error < 1e-3,
            "seed {seed}: {} at {:?} {:?}",
            report.max_rel_error,
            report.worst,
            report.worst_values
        );
    }
}

#[test]
fn every_mode_produces_finite_outputs_and_gradients() {
    let set = small_set();
    let batch = set.batch(&[0, 1, 2, 3]).unwrap();
    for mode in Mode::ALL {
        let model = AtrFasModel::new(small_config(mode), 3).unwrap();
        let mut g = Graph::new();
        let p = model.bind(&mut g);
        let x = g.constant(batch.inputs.clone());
        let out = model.forward(&mut g, &p, x, &mut RngStream::new(1)).unwrap();
        let prob = g.value(out.prob).clone();
        assert!(prob.data().iter().all(|&v| v.is_finite() && (0.0..=1.0).contains(&v)), "{mode}");
        assert_eq!(g.shape(out.depth), &[4, 4, 4]);
        assert_eq!(out.g.is_some(), matches!(mode, Mode::Rg | Mode::RgAtt | Mode::Tg | Mode::Dgm));
        assert_eq!(out.attention.is_some(), mode.attention());
        let loss = g.mean_all(out.prob).unwrap();
        g.backward(loss).unwrap();
        for v in &p {
            if let Some(grad) = g.grad(*v) {
                assert!(grad.is_finite(), "{mode}");
            }
        }
    }
}

#[test]
fn attention_sums_to_one_over_frames() {
    let set = small_set();
    let batch = set.batch(&[0, 1, 2, 3]).unwrap();
    let model = AtrFasModel::new(small_config(Mode::Dgm), 5).unwrap();
    let mut g = Graph::new();
    let p = model.bind(&mut g);
    let x = g.constant(batch.inputs);
    let out = model.forward(&mut g, &p, x, &mut RngStream::new(0)).unwrap();
    let a = g.value(out.attention.unwrap());
    let (b, n, hw) = (a.shape()[0], a.shape()[1], a.shape()[2] * a.shape()[3]);
    for bi in 0..b {
        for px in 0..hw {
            let s: f64 = (0..n).map(|f| a.data()[(bi * n + f) * hw + px] as f64).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }
}

