//! Throwaway timing probe (not part of the suite; delete after use).

use latent_etkf::assimilation::{
    run_repetitions, train_climatology_vae, ConfigKind, DaConfig, Protocol,
};
use latent_etkf::vae::TrainConfig;
use std::time::Instant;

#[test]
#[ignore]
fn probe_per_repetition_cost() {
    let seed = 4242;
    let t0 = Instant::now();
    let vae = train_climatology_vae(seed, 0, 1, &TrainConfig::offline()).expect("train");
    println!("clima training: {:.1?}", t0.elapsed());
    let climas = vec![vae];
    let protocol = Protocol::reduced(1, 1, seed);
    for kind in ConfigKind::ALL {
        let cfg = DaConfig::new(kind);
        let t = Instant::now();
        let run = run_repetitions(&cfg, &climas, &protocol);
        let ok = run.successes().len();
        println!("{}: {:.2?} ({} ok)", kind.name(), t.elapsed(), ok);
    }
}
