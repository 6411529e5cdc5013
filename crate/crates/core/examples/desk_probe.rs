//! Trains single-domain and joint models on small synthetic domains and
//! prints accuracies and MDL scores.
//!
//! `cargo run --release --example desk_probe -- <size> <train/class> <test/class> <epochs> <width> <joint_epochs>`

use std::time::Instant;

use mdllens::data::{make_synthetic_domain, SyntheticDomainParams};
use mdllens::metrics::{mdl_scores, partition, predict_domain};
use mdllens::model::WidthConfig;
use mdllens::train::{train_joint, train_single, TrainConfig};
use mdllens::weighting::Weighting;

fn main() {
    let a: Vec<f64> = std::env::args().skip(1).map(|s| s.parse().unwrap()).collect();
    let get = |i: usize, d: f64| a.get(i).copied().unwrap_or(d);
    let (size, train, test, epochs, width, jepochs) =
        (get(0, 16.0) as usize, get(1, 50.0) as usize, get(2, 20.0) as usize, get(3, 20.0) as usize, get(4, 0.25), get(5, 0.0) as usize);
    let domains: Vec<_> = [0u64, 1]
        .iter()
        .map(|&s| {
            let mut p = SyntheticDomainParams::new(10, train, test, s);
            p.image_size = size;
            make_synthetic_domain(&p).unwrap().with_task_label(s as u32)
        })
        .collect();
    let w = WidthConfig::new(width).unwrap();
    let batch: usize = std::env::var("BATCH").ok().and_then(|v| v.parse().ok()).unwrap_or(128);
    let lr: f64 = std::env::var("LR").ok().and_then(|v| v.parse().ok()).unwrap_or(0.1);
    let single_cfg = TrainConfig { batch_size: batch, lr, ..TrainConfig::single_domain(epochs, 1) };
    let mut baselines = Vec::new();
    for d in &domains {
        let t = Instant::now();
        let (m, log) = train_single(d, w, &single_cfg).unwrap();
        let accs: Vec<String> = log.evals.iter().map(|e| format!("{:.0}", e.test_acc)).collect();
        println!("{} single: {} ({:.1}s)", d.name(), accs.join(" "), t.elapsed().as_secs_f64());
        baselines.push(predict_domain(&m, d, "base").unwrap());
    }
    if jepochs > 0 {
        for wt in Weighting::ALL {
            let t = Instant::now();
            let (m, log) = train_joint(&domains, w, &TrainConfig { batch_size: batch, lr, ..TrainConfig::joint(jepochs, 1, wt) }).unwrap();
            for (d, b) in domains.iter().zip(&baselines) {
                let r = mdl_scores(&partition(b).unwrap(), &predict_domain(&m, d, "mdl").unwrap()).unwrap();
                println!(
                    "{wt} {}: acc {:.1} vs {:.1} perfgain {:.2} transfer {:.2} interference {:.2} ({:.1}s)",
                    d.name(),
                    log.final_accuracy(d.name()).unwrap(),
                    b.accuracy(),
                    r.perfgain,
                    r.transfer,
                    r.interference,
                    t.elapsed().as_secs_f64()
                );
            }
        }
    }
}
