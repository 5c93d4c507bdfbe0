use std::time::Instant;
use stm_core::ops::linalg::{gemm_nn, gemm_nt, gemm_tn, dot};

fn bench(name: &str, flops: f64, mut f: impl FnMut()) {
    let t0 = Instant::now();
    let mut reps = 0;
    while t0.elapsed().as_secs_f64() < 0.5 {
        f();
        reps += 1;
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    println!("{name}: {:.2} ms -> {:.2} GFLOP/s", dt * 1e3, flops / dt / 1e9);
}

fn main() {
    let (m, k, n) = (64usize, 144usize, 1024usize);
    let a = vec![1.0f32; m * k];
    let b = vec![1.0f32; k * n];
    let mut c = vec![0.0f32; m * n];
    let fl = 2.0 * (m * k * n) as f64;
    bench("gemm_nn f32 64x144x1024", fl, || gemm_nn(m, k, n, &a, &b, &mut c));
    let at = vec![1.0f32; k * m];
    bench("gemm_tn f32 144->64x1024", fl, || gemm_tn(m, k, n, &at, &b, &mut c));
    let bt = vec![1.0f32; n * k];
    bench("gemm_nt f32", fl, || gemm_nt(m, k, n, &a, &bt, &mut c));
    let x = vec![1.0f32; 4096];
    let y = vec![1.0f32; 4096];
    bench("dot f32 4096", 2.0 * 4096.0, || { std::hint::black_box(dot(&x, &y)); });
}
