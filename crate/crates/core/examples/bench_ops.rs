use std::time::Instant;
use stm_core::graph::Graph;
use stm_core::ops::ConvSpec;
use stm_core::tensor::Tensor;

fn timeit(name: &str, mut f: impl FnMut()) {
    let t0 = Instant::now();
    let mut reps = 0;
    while t0.elapsed().as_secs_f64() < 0.4 {
        f();
        reps += 1;
    }
    println!("{name}: {:.2} ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);
}

fn main() {
    // shapes from stm_tiny stage 2 at batch 16 clips x 8 frames
    let nt = 128;
    let x = Tensor::<f32>::zeros(vec![nt, 16, 32, 32]);
    let w11 = Tensor::<f32>::zeros(vec![64, 16, 1, 1]);
    let w33 = Tensor::<f32>::zeros(vec![16, 16, 3, 3]);

    timeit("conv1x1 16->64 @32^2 x128", || {
        stm_core::ops::conv2d::forward(&x, &w11, None, &ConvSpec::plane(16, 64, 1, 1, 0)).unwrap();
    });
    timeit("conv3x3 16->16 @32^2 x128", || {
        stm_core::ops::conv2d::forward(&x, &w33, None, &ConvSpec::plane(16, 16, 3, 1, 1)).unwrap();
    });

    // batchnorm via graph
    let big = Tensor::<f32>::zeros(vec![nt, 64, 32, 32]);
    timeit("graph bn train [128,64,32,32]", || {
        let mut g = Graph::<f32>::new(true);
        let xid = g.leaf(big.clone());
        let scale = g.leaf(Tensor::full(vec![64], 1.0));
        let shift = g.leaf(Tensor::zeros(vec![64]));
        let _ = g.batch_norm(xid, scale, shift, &Tensor::zeros(vec![64]), &Tensor::full(vec![64], 1.0), stm_core::ops::batchnorm::BnMode::Train, 0.1, 1e-5).unwrap();
    });
    timeit("graph relu [128,64,32,32]", || {
        let mut g = Graph::<f32>::new(true);
        let xid = g.leaf(big.clone());
        let _ = g.relu(xid);
    });
    timeit("tensor clone [128,64,32,32]", || {
        std::hint::black_box(big.clone());
    });

    // temporal conv over [N*H*W, C, T]
    let sites = Tensor::<f32>::zeros(vec![16 * 32 * 32, 16, 8]);
    let wt = Tensor::<f32>::zeros(vec![16, 1, 3]);
    timeit("conv1d channelwise [16384,16,8]", || {
        stm_core::ops::conv1d::forward(&sites, &wt, &ConvSpec::temporal(16, 3, 16)).unwrap();
    });
    // permute [16,8,16,32,32] -> [16,32,32,16,8] style move
    let five = Tensor::<f32>::zeros(vec![16, 8, 16, 32, 32]);
    timeit("graph permute+reshape cstm layout", || {
        let mut g = Graph::<f32>::new(false);
        let xid = g.leaf(five.clone());
        let p = g.permute(xid, &[0, 3, 4, 2, 1]).unwrap();
        let _ = g.reshape(p, &[16 * 32 * 32, 16, 8]).unwrap();
    });
}
