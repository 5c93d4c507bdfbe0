use std::time::Instant;
use stm_core::cost::count_network;
use stm_core::network::{BackboneConfig, Network};
use stm_core::tensor::Tensor;

fn main() {
    let cfg = BackboneConfig::stm_tiny(6, 8);
    let rep = count_network(&cfg, 16, 8, 32, 32).unwrap();
    let fwd_flops = rep.total_flops() as f64;
    println!("tiny fwd flops (batch 16): {:.1} MFLOP", fwd_flops / 1e6);

    let net = Network::<f32>::build(cfg.clone(), 0).unwrap();
    let x = Tensor::<f32>::zeros(vec![16, 8, 3, 32, 32]);

    // eval forward
    let t0 = Instant::now();
    let reps = 3;
    for _ in 0..reps {
        let f = net.forward(&x, false).unwrap();
        std::hint::black_box(f.graph.value(f.logits).data()[0]);
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    println!("forward(batch16): {:.1} ms  -> {:.2} GFLOP/s", dt * 1e3, fwd_flops / dt / 1e9);

    // train forward+backward+step
    let mut net = net;
    let labels: Vec<usize> = (0..16).map(|i| i % 6).collect();
    let mut sgd = stm_core::train::Sgd::new(0.9, 5e-4);
    let t0 = Instant::now();
    for _ in 0..reps {
        let f = net.forward(&x, true).unwrap();
        let mut g = f.graph;
        let l = g.cross_entropy(f.logits, &labels).unwrap();
        g.backward(l).unwrap();
        let grads = g.take_param_grads();
        sgd.step(net.params.entries_mut(), grads, 0.05).unwrap();
        net.commit_stats(f.stats);
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    println!("train step(batch16): {:.1} ms -> {:.2} GFLOP/s (at 3x fwd flops)", dt * 1e3, 3.0 * fwd_flops / dt / 1e9);
}
