use std::time::Instant;
fn main() {
    let (m, k, n) = (8192usize, 48usize, 64usize);
    let a = vec![0.5f64; m * k];
    let b = vec![0.01f64; k * n];
    let mut c = vec![0.0f64; m * n];
    for it in 0..3 {
        let t0 = Instant::now();
        let reps = 20;
        for _ in 0..reps {
            unsafe {
                matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 0.0, c.as_mut_ptr(), n as isize, 1);
            }
        }
        let dt = t0.elapsed().as_secs_f64();
        println!("dgemm fwd iter {it}: {:.1} Gflop/s", (reps * 2 * m * k * n) as f64 / dt / 1e9);
    }
    let mut g = vec![0.0f64; k * n];
    let dh = vec![0.1f64; m * n];
    for it in 0..3 {
        let t0 = Instant::now();
        let reps = 20;
        for _ in 0..reps {
            unsafe {
                matrixmultiply::dgemm(k, m, n, 1.0, a.as_ptr(), 1, k as isize, dh.as_ptr(), n as isize, 1, 1.0, g.as_mut_ptr(), n as isize, 1);
            }
        }
        let dt = t0.elapsed().as_secs_f64();
        println!("dgemm wgrad iter {it}: {:.1} Gflop/s", (reps * 2 * m * k * n) as f64 / dt / 1e9);
    }
    println!("{} {}", c[0], g[0]);
}
