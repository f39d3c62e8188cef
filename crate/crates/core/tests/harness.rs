use std::fs;

use projscan::harness::phantom::{
    age_fraction, shell_thickness, CAVITY_OFFSET, CAVITY_RADII, HEAD_RADII, INTERIOR_VALUE, SHELL_VALUE,
};
use projscan::harness::{
    ablation_sweep, generate_phantom, marginal_contribution, phantom_dataset, AblationConfig, AgeHistogram,
    PhantomParams,
};
use projscan::model::ModelConfig;
use projscan::projection::ChannelSelection;
use projscan::train::Dataset;

fn sweep_data(n: usize, channels: &str) -> Dataset {
    let params = PhantomParams {
        dims: [10, 10, 8],
        ..PhantomParams::default()
    };
    phantom_dataset(n, &AgeHistogram::uniform(38), 3, &params, &ChannelSelection::parse(channels).unwrap()).unwrap()
}

fn sweep_config() -> AblationConfig {
    AblationConfig {
        epochs: 1,
        batch_size: 4,
        seed: 1,
        model: ModelConfig {
            conv_layers_per_stack: 2,
            first_filters: 2,
            final_filters: 2,
            head_width: 2,
            ..ModelConfig::default()
        },
        split: [0.5, 0.5, 0.0],
        ..AblationConfig::default()
    }
}

#[test]
fn two_channels_one_rate_gives_four_records() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = sweep_data(8, "axial-mean,axial-std");
    let cfg = AblationConfig {
        lrs: vec![0.003],
        ..sweep_config()
    };
    let res = ablation_sweep(&ds, &cfg, tmp.path(), None).unwrap();
    let masks: Vec<u32> = res.results.iter().map(|r| r.subset_bitmask).collect();
    assert_eq!(masks, [0, 1, 2, 3]);
    assert!(res.results.iter().all(|r| r.val_loss.is_finite()));
}

#[test]
fn restart_after_fifty_records_trains_the_other_78() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = sweep_data(8, "mean,std");
    let cfg = sweep_config();
    let first = ablation_sweep(&ds, &cfg, tmp.path(), Some(50)).unwrap();
    assert_eq!((first.trained, first.results.len()), (50, 50));
    let second = ablation_sweep(&ds, &cfg, tmp.path(), None).unwrap();
    assert_eq!((second.trained, second.results.len()), (78, 128));
    let third = ablation_sweep(&ds, &cfg, tmp.path(), None).unwrap();
    assert_eq!(third.trained, 0);
    let csv = fs::read_to_string(&second.results_path).unwrap();
    assert_eq!(csv.lines().count(), 129);

    // the interrupted sweep equals an uninterrupted one
    let fresh = tempfile::tempdir().unwrap();
    let whole = ablation_sweep(&ds, &cfg, fresh.path(), None).unwrap();
    assert_eq!(whole.results, second.results);
    let names: Vec<String> = ds.channel_ids().iter().map(ToString::to_string).collect();
    let rep = marginal_contribution(&second.results, &names).unwrap();
    assert!(rep.channels.iter().all(|c| c.pairs == 64));

    // a different configuration may not reuse the directory
    let other = AblationConfig { epochs: 2, ..cfg };
    assert!(ablation_sweep(&ds, &other, tmp.path(), None).is_err());
}

#[test]
fn noiseless_phantom_matches_closed_form_regions() {
    let params = PhantomParams {
        dims: [30, 26, 22],
        noise: 0.0,
        jitter: false,
        ..PhantomParams::default()
    };
    for age in [44.0f32, 63.0, 82.0] {
        let ph = generate_phantom(age, 5, &params).unwrap();
        let d = params.dims.map(|v| v as f64);
        let centre = d.map(|v| (v - 1.0) / 2.0);
        let u = age_fraction(age);
        let t = shell_thickness(age);
        for z in 0..params.dims[2] {
            for y in 0..params.dims[1] {
                for x in 0..params.dims[0] {
                    let p = [x as f64, y as f64, z as f64];
                    let rho = (0..3).map(|a| ((p[a] - centre[a]) / (HEAD_RADII[a] * d[a])).powi(2)).sum::<f64>().sqrt();
                    let cav = (0..3)
                        .map(|a| ((p[a] - centre[a] - CAVITY_OFFSET[a] * d[a]) / (CAVITY_RADII[a] * d[a] * (0.6 + 0.8 * u))).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    let v = ph.volume.get(x, y, z);
                    if rho > 1.0 {
                        assert_eq!(v, 0.0);
                    } else if rho >= 1.0 - t {
                        assert_eq!(v, SHELL_VALUE);
                    } else if cav < 1.0 {
                        assert_eq!(v, 0.0);
                    } else {
                        // interior texture stays within its amplitude
                        let amp = 0.04 + 0.20 * u;
                        assert!((v as f64 - INTERIOR_VALUE as f64).abs() <= amp + 1e-6, "{v} at {p:?}");
                    }
                }
            }
        }
    }
}

#[test]
fn shell_measured_along_an_axis_thins_with_age() {
    let params = PhantomParams {
        dims: [48, 48, 40],
        noise: 0.0,
        jitter: false,
        ..PhantomParams::default()
    };
    let measure = |age: f32| {
        let v = generate_phantom(age, 9, &params).unwrap().volume;
        (0..48).filter(|&x| v.get(x, 24, 20) == SHELL_VALUE).count()
    };
    let widths: Vec<usize> = [44.0, 57.0, 70.0, 82.0].into_iter().map(measure).collect();
    assert!(widths.windows(2).all(|w| w[0] >= w[1]), "{widths:?}");
    assert!(widths[0] > widths[3], "{widths:?}");
}
