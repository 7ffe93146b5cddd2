//! Calibration probe for the offline and online training settings.
//! Usage: probe_vae <epochs> <batch> <lr> [transfer_epochs] [transfer_lr]

use latent_etkf::model::{generate_climatology, states_matrix, ModelParams, State};
use latent_etkf::rng::RngStream;
use latent_etkf::vae::{train_logged, transfer_retrain, TrainConfig, VaeParams};
use nalgebra::{DMatrix, DVector};
use std::time::Instant;

fn quantiles(mut xs: Vec<f64>) -> (f64, f64, f64, f64, f64) {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| xs[((xs.len() as f64 - 1.0) * p) as usize];
    (q(0.01), q(0.25), q(0.5), q(0.75), q(0.99))
}

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
    let t_epochs: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(50);
    let t_lr: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(lr);

    let cfg = TrainConfig {
        epochs,
        batch_size: batch,
        learning_rate: lr,
        sigma_def: 0.05 * 0.05,
        gamma_zero_fraction: 0.5,
    };

    let states = generate_climatology(&mut RngStream::new(101, 7), &ModelParams::stationary());
    let data = states_matrix(&states);
    let init = VaeParams::new_random(2, 1, &mut RngStream::new(101, 8));
    let t0 = Instant::now();
    let (vae, curve) = train_logged(init, &data, &cfg, &mut RngStream::new(101, 9)).unwrap();
    let train_time = t0.elapsed();

    println!("== offline: epochs={epochs} batch={batch} lr={lr} ({train_time:.2?})");
    for idx in [0, epochs / 4, epochs / 2, 3 * epochs / 4, epochs - 1] {
        let e = &curve[idx];
        println!("  epoch {:>5}  loss {:>10.4}  gamma {:.3}", e.epoch, e.mean_loss, e.gamma);
    }

    // decoded prior diagnostics
    let mut stream = RngStream::new(102, 0);
    let n = 2000;
    let mut radii = Vec::with_capacity(n);
    let mut in_band = 0usize;
    for _ in 0..n {
        let z = DVector::from_element(1, stream.gaussian(0.0, 1.0));
        let x = vae.decode_sample(&z, &mut stream).unwrap();
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        if (0.8..=1.2).contains(&r) {
            in_band += 1;
        }
        radii.push(r);
    }
    let (q01, q25, q50, q75, q99) = quantiles(radii);
    println!("  prior radii: in-band {:.1}%  q01 {q01:.3} q25 {q25:.3} q50 {q50:.3} q75 {q75:.3} q99 {q99:.3}", 100.0 * in_band as f64 / n as f64);

    // where do out-of-band draws come from? decode means along the latent axis
    print!("  decode_mean radius by z: ");
    for z in [-3.0f64, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0] {
        let x = vae.decode_mean(&DVector::from_element(1, z));
        print!("{z:+.0}:{:.3} ", (x[0] * x[0] + x[1] * x[1]).sqrt());
    }
    println!();
    // decoder conditional std along the latent axis (mean over components)
    print!("  decoder sigma by z:     ");
    for z in [-3.0f64, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0] {
        let u = (z - vae.rescale_b) / vae.rescale_a;
        let lv = vae.dec_logvar.output_vec(&DVector::from_element(1, u));
        let s = lv.iter().map(|v| (0.5 * v.clamp(-12.0, 4.0)).exp()).sum::<f64>() / 2.0;
        print!("{z:+.0}:{s:.3} ");
    }
    println!();

    // encoded climatology diagnostics
    let fresh = generate_climatology(&mut RngStream::new(103, 0), &ModelParams::stationary());
    let fresh_data = states_matrix(&fresh);
    let encoded = vae.encode_ensemble(&fresh_data, &mut RngStream::new(103, 1)).unwrap();
    let samples: Vec<f64> = encoded.iter().copied().collect();
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
    // decompose: spread of the rescaled encoder means vs conditional noise
    let mut cond = 0.0;
    let mut mus = Vec::with_capacity(fresh_data.ncols());
    for c in 0..fresh_data.ncols() {
        let x = DVector::from_column_slice(fresh_data.column(c).as_slice());
        let (mu, v) = vae.encode_moments(&x);
        cond += v[0].sqrt();
        mus.push(mu[0]);
    }
    cond /= fresh_data.ncols() as f64;
    let mu_mean = mus.iter().sum::<f64>() / mus.len() as f64;
    let mu_std = (mus.iter().map(|m| (m - mu_mean).powi(2)).sum::<f64>()
        / (mus.len() - 1) as f64)
        .sqrt();
    println!(
        "  encoded clima: KS {:.4}  mean {mean:+.4}  std {:.4}  | means {mu_mean:+.4}±{mu_std:.4}  mean cond std {cond:.4}",
        ks_vs_standard_normal(&samples),
        var.sqrt()
    );

    // transfer probe: ensemble on radius 1.12
    let tcfg = TrainConfig {
        epochs: t_epochs,
        batch_size: usize::MAX,
        learning_rate: t_lr,
        sigma_def: 0.05 * 0.05,
        gamma_zero_fraction: 0.5,
    };
    let mut estream = RngStream::new(105, 0);
    let members = DMatrix::from_fn(2, 64, |r, c| {
        let angle = (c as f64 / 64.0) * std::f64::consts::TAU + estream.uniform(0.0, 0.01);
        let s = State::on_unit_circle(angle);
        1.12 * if r == 0 { s.x } else { s.y }
    });
    let t1 = Instant::now();
    let retrained = transfer_retrain(&vae, &members, &tcfg, &mut RngStream::new(105, 1)).unwrap();
    let t_time = t1.elapsed();
    let mut pstream = RngStream::new(105, 2);
    let mut near = 0usize;
    let mut tradii = Vec::with_capacity(1000);
    for _ in 0..1000 {
        let z = DVector::from_element(1, pstream.gaussian(0.0, 1.0));
        let x = retrained.decode_sample(&z, &mut pstream).unwrap();
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        if (r - 1.12).abs() <= 0.1 {
            near += 1;
        }
        tradii.push(r);
    }
    let (tq01, tq25, tq50, tq75, tq99) = quantiles(tradii);
    println!(
        "== transfer: epochs={t_epochs} lr={t_lr} ({t_time:.2?})  near-1.12 {:.1}%  q01 {tq01:.3} q25 {tq25:.3} q50 {tq50:.3} q75 {tq75:.3} q99 {tq99:.3}",
        near as f64 / 10.0
    );
}
