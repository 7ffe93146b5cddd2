//! Robustness probe: offline-train one autoencoder per climatology index
//! with the given settings and report the decoded-prior band fraction and
//! the encoded-climatology KS statistic for each.
//! Usage: probe_clima <epochs> <batch> <lr> [n_climas] [seed]

use latent_etkf::assimilation::train_climatology_vae_with_restarts;
use latent_etkf::model::{generate_climatology, states_matrix, ModelParams};
use latent_etkf::rng::RngStream;
use latent_etkf::vae::TrainConfig;
use nalgebra::DVector;
use std::time::Instant;

fn ks_vs_standard_normal(samples: &[f64]) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = normal.cdf(x);
        d = d.max((cdf - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - cdf).abs());
    }
    d
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(500);
    let batch: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(64);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let n_climas: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(7);
    let seed: u64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1);
    let frac: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(0.5);
    let restarts: usize = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(1);

    let cfg = TrainConfig {
        epochs,
        batch_size: batch,
        learning_rate: lr,
        sigma_def: 0.05 * 0.05,
        gamma_zero_fraction: frac,
    };
    println!("epochs={epochs} batch={batch} lr={lr} seed={seed} frac={frac} restarts={restarts}");

    let fresh = generate_climatology(&mut RngStream::new(900, 0), &ModelParams::stationary());
    let fresh_data = states_matrix(&fresh);

    for idx in 0..n_climas {
        let t0 = Instant::now();
        let vae = train_climatology_vae_with_restarts(seed, idx, 1, &cfg, restarts).unwrap();
        let dt = t0.elapsed();

        let mut stream = RngStream::new(901, idx);
        let n = 1000;
        let mut in_band = 0usize;
        for _ in 0..n {
            let z = DVector::from_element(1, stream.gaussian(0.0, 1.0));
            let x = vae.decode_sample(&z, &mut stream).unwrap();
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            if (0.8..=1.2).contains(&r) {
                in_band += 1;
            }
        }
        let encoded = vae
            .encode_ensemble(&fresh_data, &mut RngStream::new(902, idx))
            .unwrap();
        let samples: Vec<f64> = encoded.iter().copied().collect();

        // deterministic true-ELBO estimate (gamma = 0) on fresh data
        let mut loss_stream = RngStream::new(903, idx);
        let mut loss = 0.0;
        for _ in 0..4 {
            loss += vae
                .elbo_loss(&fresh_data, &mut loss_stream, 0.0, (0.05f64 * 0.05).ln())
                .0;
        }
        loss /= 4.0;
        // fold detector: minimum decoder-mean radius over the prior range
        let mut min_r = f64::INFINITY;
        for i in 0..=60 {
            let z = -3.0 + i as f64 * 0.1;
            let x = vae.decode_mean(&DVector::from_element(1, z));
            min_r = min_r.min((x[0] * x[0] + x[1] * x[1]).sqrt());
        }
        println!(
            "  clima {idx}: in-band {:>5.1}%  KS {:.4}  loss {loss:>8.3}  min-radius {min_r:.3}  ({dt:.2?})",
            100.0 * in_band as f64 / n as f64,
            ks_vs_standard_normal(&samples)
        );
        print!("    mean radius by z: ");
        for z in [-3.0f64, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0] {
            let x = vae.decode_mean(&DVector::from_element(1, z));
            print!("{z:+.0}:{:.2} ", (x[0] * x[0] + x[1] * x[1]).sqrt());
        }
        print!("\n    dec sigma by z:   ");
        for z in [-3.0f64, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0] {
            let u = (z - vae.rescale_b) / vae.rescale_a;
            let lv = vae.dec_logvar.output_vec(&DVector::from_element(1, u));
            let s = lv.iter().map(|v| (0.5 * v.clamp(-12.0, 4.0)).exp()).sum::<f64>() / 2.0;
            print!("{z:+.0}:{s:.3} ");
        }
        println!();
    }
}
