use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use projscan::model::{Batch, DropoutPlacement, Model, ModelConfig};
use projscan::nn::{mse_loss, LayerSpec, Mode, Sequential, Tensor};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn seq_loss(net: &mut Sequential<f64>, x: &Tensor<f64>, t: &Tensor<f64>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (y, _) = net.forward(x, Mode::Train, &mut rng).unwrap();
    mse_loss(&y, t).unwrap().0
}

#[test]
fn two_layer_conv_net_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let specs = vec![
        LayerSpec::Conv2d { in_channels: 1, filters: 3, kernel: 3, stride: 1, pad: 1 },
        LayerSpec::Relu,
        LayerSpec::Conv2d { in_channels: 3, filters: 2, kernel: 3, stride: 2, pad: 1 },
        LayerSpec::GlobalAvgPool,
        LayerSpec::Dense { in_features: 2, out_features: 1 },
    ];
    let mut net = Sequential::<f64>::new("net", specs, &mut rng).unwrap();
    let x = random(&mut rng, &[2, 1, 4, 4]);
    let t = random(&mut rng, &[2, 1]);

    net.zero_grad();
    let mut drop = ChaCha8Rng::seed_from_u64(0);
    let (y, caches) = net.forward(&x, Mode::Train, &mut drop).unwrap();
    let (_, g) = mse_loss(&y, &t).unwrap();
    net.backward(&caches, &g).unwrap();

    let h = 1e-3;
    let n = net.params().len();
    for k in 0..n {
        let analytic = net.params()[k].grad.clone();
        let mut fd = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let orig = net.params()[k].value.data()[i];
            net.params_mut()[k].value.data_mut()[i] = orig + h;
            let up = seq_loss(&mut net, &x, &t);
            net.params_mut()[k].value.data_mut()[i] = orig - h;
            let down = seq_loss(&mut net, &x, &t);
            net.params_mut()[k].value.data_mut()[i] = orig;
            fd.push((up - down) / (2.0 * h));
        }
        let diff: f64 = analytic.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-8);
        assert!(diff / scale < 1e-4, "{}: {analytic:?} vs {fd:?}", net.params()[k].name);
    }
}

#[test]
fn whole_model_gradient_with_dense_dropout() {
    let cfg = ModelConfig {
        channels_per_plane: [1, 2, 0],
        conv_layers_per_stack: 2,
        first_filters: 2,
        final_filters: 3,
        head_width: 4,
        dropout: DropoutPlacement::BetweenDense { p: 0.3 },
        seed: 4,
        ..ModelConfig::default()
    };
    let mut m = Model::<f64>::new(cfg, [(6, 6), (6, 5), (0, 0)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = Batch::new(3, [Some(random(&mut rng, &[3, 1, 6, 6])), Some(random(&mut rng, &[3, 2, 6, 5])), None]);
    let t = random(&mut rng, &[3, 1]);
    let loss = |m: &mut Model<f64>| {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let (y, _) = m.forward(&batch, Mode::Train, &mut r).unwrap();
        mse_loss(&y, &t).unwrap().0
    };
    m.zero_grad();
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let (y, tape) = m.forward(&batch, Mode::Train, &mut r).unwrap();
    m.backward(&tape, &mse_loss(&y, &t).unwrap().1).unwrap();

    let n = m.params().len();
    for k in 0..n {
        let len = m.params()[k].len();
        for i in [0, len / 2, len - 1] {
            let a = m.params()[k].grad[i];
            let orig = m.params()[k].value.data()[i];
            m.params_mut()[k].value.data_mut()[i] = orig + 1e-6;
            let up = loss(&mut m);
            m.params_mut()[k].value.data_mut()[i] = orig - 1e-6;
            let down = loss(&mut m);
            m.params_mut()[k].value.data_mut()[i] = orig;
            let fd = (up - down) / 2e-6;
            assert!((a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-6), "{} [{i}]: {a} vs {fd}", m.params()[k].name);
        }
    }
}

#[test]
fn untied_model_is_not_summed() {
    // Two planes fed identical images keep separate gradients unless tied.
    let cfg = ModelConfig {
        channels_per_plane: [1, 1, 1],
        conv_layers_per_stack: 2,
        first_filters: 2,
        final_filters: 2,
        head_width: 3,
        seed: 1,
        ..ModelConfig::default()
    };
    let mut m = Model::<f64>::new(cfg, [(6, 6); 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = random(&mut rng, &[2, 1, 6, 6]);
    let batch = Batch::new(2, [Some(img.clone()), Some(img.clone()), Some(img)]);
    let t = random(&mut rng, &[2, 1]);
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let (y, tape) = m.forward(&batch, Mode::Train, &mut r).unwrap();
    m.backward(&tape, &mse_loss(&y, &t).unwrap().1).unwrap();
    let stack_grads: Vec<&Vec<f64>> = m
        .params()
        .into_iter()
        .filter(|p| p.name.ends_with(".0.weight") && p.name.starts_with("stack."))
        .map(|p| &p.grad)
        .collect();
    assert_eq!(stack_grads.len(), 3);
    assert_ne!(stack_grads[0], stack_grads[1]);
}
