use proptest::prelude::*;

use projscan::harness::{phantom_dataset, AgeHistogram, PhantomParams};
use projscan::model::{Model, ModelConfig};
use projscan::projection::{ChannelSelection, Image2D};
use projscan::train::{
    self, augment_image, regression_metrics, train_with_validator, AugmentParams, Dataset, Predictor, RunConfig,
    TrainingConfig, Transform,
};

fn tiny_model(ds: &Dataset, seed: u64) -> Model<f32> {
    Model::new(
        ModelConfig {
            channels_per_plane: ds.channels_per_plane(),
            conv_layers_per_stack: 3,
            first_filters: 3,
            final_filters: 6,
            head_width: 6,
            seed,
            ..ModelConfig::default()
        },
        ds.input_dims(),
    )
    .unwrap()
}

fn phantoms(n: usize, seed: u64) -> Dataset {
    let params = PhantomParams {
        dims: [16, 16, 12],
        ..PhantomParams::default()
    };
    phantom_dataset(n, &AgeHistogram::uniform(38), seed, &params, &ChannelSelection::mean_std()).unwrap()
}

proptest! {
    #[test]
    fn rmse_never_below_mae(pairs in prop::collection::vec((-100.0f32..100.0, -100.0f32..100.0), 1..50)) {
        let (p, t): (Vec<f32>, Vec<f32>) = pairs.into_iter().unzip();
        let m = regression_metrics(&p, &t).unwrap();
        prop_assert!(m.rmse + 1e-9 >= m.mae);
    }
}

#[test]
fn rotated_bright_pixel_lands_on_rotated_coordinate() {
    let (h, w) = (21, 21);
    let (r0, c0) = (4usize, 14usize);
    let mut data = vec![0.0f32; h * w];
    data[r0 * w + c0] = 1.0;
    let img = Image2D::new(h, w, data).unwrap();
    for deg in [-30.0f64, 12.0, 45.0, 90.0] {
        let out = augment_image(&img, &Transform::rotation(deg));
        let (cy, cx) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);
        let (s, c) = deg.to_radians().sin_cos();
        let (x, y) = (c0 as f64 - cx, r0 as f64 - cy);
        let want = (s * x + c * y + cy, c * x - s * y + cx);
        let d = out.data();
        let mass: f64 = d.iter().map(|&v| v as f64).sum();
        let (mut mr, mut mc) = (0.0, 0.0);
        for (i, &v) in d.iter().enumerate() {
            mr += (i / w) as f64 * v as f64;
            mc += (i % w) as f64 * v as f64;
        }
        let (mr, mc) = (mr / mass, mc / mass);
        assert!(
            (mr - want.0).abs() <= 1.0 && (mc - want.1).abs() <= 1.0,
            "{deg} degrees: peak at ({mr:.2}, {mc:.2}), expected ({:.2}, {:.2})",
            want.0,
            want.1
        );
    }
}

#[test]
fn validating_on_the_training_set_tracks_training_loss() {
    let ds = phantoms(24, 3);
    let (tr, va, _) = ds.split([0.75, 0.25, 0.0]);
    let cfg = TrainingConfig {
        epochs: 12,
        batch_size: 6,
        seed: 2,
        ..TrainingConfig::default()
    };
    let norm = train::Normalizer::fit(&tr).unwrap();
    let labels = train::LabelScaler::fit(&tr.ages()).unwrap();
    let prep = train::Prepared::new(&tr, &norm, &labels).unwrap();
    let ages = tr.ages();
    let mut seen = Vec::new();
    let out = train_with_validator(tiny_model(&tr, 1), &tr, &va, &cfg, &AugmentParams::default(), None, |_, m| {
        let p = train::predict_ages(m, &prep, &labels)?;
        let mse = p.iter().zip(&ages).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>() / ages.len() as f64;
        seen.push(mse);
        Ok(mse)
    })
    .unwrap();
    // the kept epoch is the last one at which the training-set error improved
    let last_improving = (0..seen.len())
        .filter(|&i| seen[..i].iter().all(|&x| seen[i] < x))
        .last()
        .unwrap()
        + 1;
    assert_eq!(out.report.best_epoch, Some(last_improving));
    assert!(out.report.best_val_loss < seen[0]);
    // the kept weights reproduce the best loss
    let p = train::predict_ages(&out.best, &prep, &labels).unwrap();
    let best = p.iter().zip(&ages).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>() / ages.len() as f64;
    assert_eq!(best, out.report.best_val_loss);
}

#[test]
fn overlapping_train_and_validation_rejected() {
    let ds = phantoms(8, 4);
    let cfg = TrainingConfig {
        epochs: 1,
        batch_size: 4,
        ..TrainingConfig::default()
    };
    let err = train::train(tiny_model(&ds, 1), &ds, &ds, &cfg, &AugmentParams::default(), None);
    assert!(err.is_err());
}

#[test]
fn run_writes_artifacts_and_checkpoint_predicts_like_memory() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = phantoms(20, 6);
    let cfg = RunConfig::from_toml_str(
        "[model]\nconv_layers_per_stack = 3\nfirst_filters = 3\nfinal_filters = 6\nhead_width = 6\n\
         [train]\nepochs = 4\nbatch_size = 5\naugment = true\naugment_copies = 1\n\
         [data]\nsplit = [0.6, 0.2, 0.2]\n",
    )
    .unwrap();
    let out = train::run(&cfg, &ds, Some(tmp.path())).unwrap();
    let log = std::fs::read_to_string(tmp.path().join(train::LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(tmp.path().join(train::SUMMARY_FILE).exists());
    let p = Predictor::load(&tmp.path().join(train::CHECKPOINT_FILE)).unwrap();
    let mem = Predictor {
        model: out.train.best.clone(),
        meta: out.train.meta.clone(),
    };
    assert_eq!(p.predict(&ds).unwrap(), mem.predict(&ds).unwrap());
    let test = out.test.unwrap();
    assert!(test.rmse >= test.mae);
    assert_eq!(out.split_sizes.iter().sum::<usize>(), 20);
}
