//! Quick convergence probe: trains one variant on a synthetic set and prints
//! per-epoch accuracy plus wall time.
//! Args: n_per_class epochs variant seed [milestones] [patience]

use std::time::Instant;

use stm_core::network::{BackboneConfig, Network};
use stm_core::synth::{generate_dataset, SynthSpec};
use stm_core::train::{train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_per_class: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(100);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(4);
    let variant = args.get(3).map(String::as_str).unwrap_or("full").to_string();
    let seed: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0);

    let spec = SynthSpec { frames: 16, ..SynthSpec::default() };
    let t0 = Instant::now();
    let sets = generate_dataset(&spec, n_per_class, &[5.0 / 6.0, 1.0 / 6.0]).unwrap();
    let (tr, va) = (&sets[0], &sets[1]);
    println!("data: {} train / {} val in {:.1}s", tr.len(), va.len(), t0.elapsed().as_secs_f64());

    let mut bb = BackboneConfig::stm_tiny(6, 8);
    if variant == "plain" {
        bb = bb.all_plain();
    }
    let milestones: Vec<usize> = args
        .get(5)
        .map(|s| s.split(',').map(|t| t.parse().unwrap()).collect())
        .unwrap_or_default();
    let patience = args.get(6).map(|s| s.parse().unwrap());
    let mut tc = TrainConfig { epochs, milestones, seed, ..TrainConfig::desk() };
    if let Some(p) = patience {
        tc.patience = (p > 0).then_some(p);
    }
    let mut net = Network::build(bb, seed).unwrap();

    let t1 = Instant::now();
    let log = train(&mut net, &tc, tr, va, None).unwrap();
    for e in &log.epochs {
        println!(
            "epoch {:2}  lr {:.4}  loss {:.4}  train {:.3}  val {:.3}  [{:.0}s elapsed]",
            e.epoch,
            e.lr,
            e.train_loss,
            e.train_top1,
            e.val_top1,
            t1.elapsed().as_secs_f64()
        );
    }
    println!(
        "{} variant: best val {:.3} at epoch {}, {:.1}s/epoch",
        variant,
        log.best_val_top1,
        log.best_epoch,
        t1.elapsed().as_secs_f64() / log.epochs.len() as f64
    );
}
