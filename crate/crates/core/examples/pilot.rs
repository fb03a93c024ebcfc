//! Pilot runs on the toy dataset used by the acceptance suite.
//!
//! Usage: `pilot [seeds] [alpha] [joint|baseline|both]`. Prints test metrics
//! per seed plus the first and last training-log rows.
use std::time::Instant;

use pcsem_core::data::{make_dataset, DatasetConfig, Split};
use pcsem_core::experiment::{evaluate_split, train, ExperimentConfig, Mode, Predictor};

fn main() -> pcsem_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let alpha: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e4);
    let modes: Vec<Mode> = match args.get(3).map(String::as_str) {
        Some("joint") => vec![Mode::Joint],
        Some("baseline") => vec![Mode::Baseline],
        _ => vec![Mode::Joint, Mode::Baseline],
    };
    let data = make_dataset(
        &DatasetConfig {
            count: 200,
            n_points: 256,
            train_fraction: 0.75,
            val_fraction: 0.1,
            feature_noise: 0.0,
        },
        2024,
    )?;
    for seed in 0..seeds {
        for &mode in &modes {
            let config = ExperimentConfig {
                mode,
                seed,
                alpha,
                ..ExperimentConfig::default()
            };
            let t = Instant::now();
            let (mut first, mut last) = (String::new(), String::new());
            let trained = train(&config, &data, &mut |r| {
                if r.epoch == 1 {
                    first = r.to_line();
                }
                last = r.to_line();
                Ok(())
            })?;
            let predictor = Predictor::from_trained(&trained, &config);
            let m = evaluate_split(&predictor, &data, Split::Test, mode.name())?
                .summary
                .mean;
            println!(
                "seed {seed} {:<8} alpha {alpha:e} chamfer {:.4} emd {:.4} miou {:.2} ({:.1}s) first [{first}] last [{last}]",
                mode.name(),
                m.chamfer * 100.0,
                m.emd * 100.0,
                m.miou * 100.0,
                t.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
