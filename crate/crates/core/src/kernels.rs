//! Dense matrix kernels on row-major slices.

use crate::parallel;

const K_BLOCK: usize = 16;

/// `out[r, :] = Σ_k a[r, k] · w[k, :]` for `a: rows×inner`, `w: inner×cols`.
pub fn matmul(a: &[f64], w: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(w.len(), inner * cols);
    let mut out = vec![0.0; rows * cols];
    parallel::for_each_row(&mut out, cols, rows * inner * cols, |r, row| {
        let a_row = &a[r * inner..(r + 1) * inner];
        for (k, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let w_row = &w[k * cols..(k + 1) * cols];
            for (o, &wv) in row.iter_mut().zip(w_row) {
                *o += av * wv;
            }
        }
    });
    out
}

/// `out = g · wᵀ` for `g: rows×cols`, `w: inner×cols`; result is `rows×inner`.
pub fn matmul_nt(g: &[f64], w: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(g.len(), rows * cols);
    debug_assert_eq!(w.len(), inner * cols);
    let mut out = vec![0.0; rows * inner];
    parallel::for_each_row(&mut out, inner, rows * inner * cols, |r, row| {
        let g_row = &g[r * cols..(r + 1) * cols];
        for (k, o) in row.iter_mut().enumerate() {
            let w_row = &w[k * cols..(k + 1) * cols];
            *o = g_row.iter().zip(w_row).map(|(x, y)| x * y).sum();
        }
    });
    out
}

/// `out = aᵀ · g` for `a: rows×inner`, `g: rows×cols`; result is `inner×cols`.
pub fn matmul_tn(a: &[f64], g: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(g.len(), rows * cols);
    let mut out = vec![0.0; inner * cols];
    parallel::for_each_row(&mut out, K_BLOCK * cols, rows * inner * cols, |blk, chunk| {
        let k0 = blk * K_BLOCK;
        let kn = chunk.len() / cols;
        for r in 0..rows {
            let g_row = &g[r * cols..(r + 1) * cols];
            let a_row = &a[r * inner + k0..r * inner + k0 + kn];
            for (dk, &av) in a_row.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let o_row = &mut chunk[dk * cols..(dk + 1) * cols];
                for (o, &gv) in o_row.iter_mut().zip(g_row) {
                    *o += av * gv;
                }
            }
        }
    });
    out
}

/// Transposes a `rows×cols` matrix.
pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}
