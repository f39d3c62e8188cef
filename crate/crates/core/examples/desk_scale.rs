//! Trains the six-channel model on synthetic phantoms and compares its test
//! error with the constant mean-age predictor.
//!
//! cargo run --release --example desk_scale -- [subjects] [epochs]

use std::time::Instant;

use projscan::harness::{phantom_dataset, AgeHistogram, PhantomParams};
use projscan::model::{Model, ModelConfig};
use projscan::projection::ChannelSelection;
use projscan::train::{regression_metrics, train, AugmentParams, Predictor, TrainingConfig};

fn main() -> projscan::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(500);
    let epochs = args.get(1).copied().unwrap_or(100);

    let t0 = Instant::now();
    let ds = phantom_dataset(n, &AgeHistogram::uniform(38), 7, &PhantomParams::default(), &ChannelSelection::mean_std())?;
    let (tr, va, te) = ds.split([0.7, 0.15, 0.15]);
    println!("{} subjects ({} / {} / {}) in {:.1}s", n, tr.len(), va.len(), te.len(), t0.elapsed().as_secs_f64());

    let model = Model::new(
        ModelConfig {
            channels_per_plane: ds.channels_per_plane(),
            seed: 1,
            ..ModelConfig::default()
        },
        ds.input_dims(),
    )?;
    println!("{} parameters", model.param_count());
    let cfg = TrainingConfig {
        epochs,
        seed: 1,
        ..TrainingConfig::default()
    };
    let t1 = Instant::now();
    let out = train(model, &tr, &va, &cfg, &AugmentParams::default(), None)?;
    for e in out.report.epochs.iter().filter(|e| e.epoch % 10 == 0 || e.epoch <= 3) {
        println!(
            "epoch {:>3}  train {:>8.3}  val {:>8.3}{}  {:.2}s",
            e.epoch,
            e.train_loss,
            e.val_loss,
            if e.checkpoint { " *" } else { "" },
            e.seconds
        );
    }
    println!("trained in {:.1}s, best epoch {:?}", t1.elapsed().as_secs_f64(), out.report.best_epoch);

    let p = Predictor {
        model: out.best,
        meta: out.meta,
    };
    let m = p.evaluate(&te)?;
    let mean = tr.ages().iter().map(|&a| a as f64).sum::<f64>() / tr.len() as f64;
    let base = regression_metrics(&vec![mean as f32; te.len()], &te.ages())?;
    println!(
        "test MAE {:.3} (RMSE {:.3}); constant predictor MAE {:.3}; ratio {:.3}",
        m.mae,
        m.rmse,
        base.mae,
        m.mae / base.mae
    );
    Ok(())
}
