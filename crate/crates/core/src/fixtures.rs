//! Seeded test systems and a Matrix Market writer.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::matrix_io::CsrMatrix;

/// Dense `GᵀG + n·I` with `G` uniform in [-1, 1].
pub fn random_spd(n: usize, seed: u64) -> CsrMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = (0..n).map(|k| g[k][i] * g[k][j]).sum();
            a[i][j] = v;
            a[j][i] = v;
        }
        a[i][i] += n as f64;
    }
    CsrMatrix::from_dense(&a).expect("square dense matrix")
}

/// Seeded vector uniform in [-1, 1].
pub fn random_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Five-point Laplacian on a `k × k` grid.
pub fn laplacian_2d(k: usize) -> CsrMatrix {
    let n = k * k;
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..k {
        for j in 0..k {
            let r = i * k + j;
            rows[r][r] = 4.0;
            if i > 0 {
                rows[r][r - k] = -1.0;
            }
            if i + 1 < k {
                rows[r][r + k] = -1.0;
            }
            if j > 0 {
                rows[r][r - 1] = -1.0;
            }
            if j + 1 < k {
                rows[r][r + 1] = -1.0;
            }
        }
    }
    CsrMatrix::from_dense(&rows).expect("square dense matrix")
}

/// Writes the lower triangle as `coordinate real symmetric`, values in
/// round-trip precision.
pub fn write_matrix_market_symmetric<W: Write>(a: &CsrMatrix, mut w: W) -> io::Result<()> {
    let lower: Vec<(usize, usize, f64)> = (0..a.n())
        .flat_map(|i| a.row(i).filter(move |&(j, _)| j <= i).map(move |(j, v)| (i, j, v)))
        .collect();
    writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
    writeln!(w, "{} {} {}", a.n(), a.n(), lower.len())?;
    for (i, j, v) in lower {
        writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
    }
    Ok(())
}
