//! Bin-mean oracle for adaptive pooling over `[n, h]` row-major frames.

pub fn pool_oracle(x: &[f64], n: usize, h: usize, t: usize) -> Vec<f64> {
    let mut y = vec![0.0; t * h];
    for i in 0..t {
        let start = ((i * n) as f64 / t as f64).floor() as usize;
        let end = (((i + 1) * n) as f64 / t as f64).ceil() as usize;
        for j in 0..h {
            let s: f64 = (start..end).map(|f| x[f * h + j]).sum();
            y[i * h + j] = s / (end - start) as f64;
        }
    }
    y
}
