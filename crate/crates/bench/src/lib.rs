//! Input generators shared by the benchmarks.

use ffcs_core::lasso::DesignMatrix;
use ffcs_core::seed;
use rand::Rng;

/// `n` random-walk series of length `len`.
pub fn walks(n: usize, len: usize, master: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(master);
    (0..n)
        .map(|_| {
            let mut x = 0.0;
            (0..len)
                .map(|_| {
                    x += rng.gen_range(-1.0..1.0);
                    x
                })
                .collect()
        })
        .collect()
}

/// Sparse linear model with `p` indicators, the first three active.
pub fn sparse_design(n: usize, p: usize, master: u64) -> DesignMatrix {
    let mut rng = seed::rng(master);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let y = x
        .iter()
        .map(|r| 3.0 * r[0] - 2.0 * r[1] + r[2] + 0.1 * rng.gen_range(-1.0..1.0))
        .collect();
    DesignMatrix::new(
        (0..p).map(|j| format!("x{j}")).collect(),
        (0..n).map(|i| format!("r{i}")).collect(),
        x.into_iter()
            .map(|r| r.into_iter().map(Some).collect())
            .collect(),
        y,
    )
    .expect("valid design")
}

/// Regression rows for the forest: a smooth target plus noise.
pub fn forest_rows(n: usize, p: usize, master: u64) -> (Vec<Vec<f64>>, Vec<f64>, Vec<usize>) {
    let mut rng = seed::rng(master);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.gen_range(0.0..10.0)).collect())
        .collect();
    let y = x
        .iter()
        .map(|r| r[0].sin() * 3.0 + r[1] + rng.gen_range(-0.5..0.5))
        .collect();
    let groups = (0..n).map(|i| i * 5 / n).collect();
    (x, y, groups)
}
