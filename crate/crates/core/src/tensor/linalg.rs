use super::Tensor;
use crate::error::{Error, Result};
use crate::exec::Exec;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matmul_with(Exec::default(), a, b)
}

pub fn matmul_with(exec: Exec, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions differ: {m}x{k} times {k2}x{n}"
        )));
    }
    Tensor::new(vec![m, n], gemm_nn(exec, a.data(), b.data(), m, k, n))
}

/// `a[m×k] · b[k×n]`. Each output entry accumulates over `k` in ascending order.
pub fn gemm_nn(exec: Exec, a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0f32; m * n];
    exec.for_work(m * k * n).rows(&mut out, n, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
    out
}

/// `a[m×k] · b[n×k]ᵀ`.
pub fn gemm_nt(exec: Exec, a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![0.0f32; m * n];
    exec.for_work(m * k * n).rows(&mut out, n, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            *o = acc;
        }
    });
    out
}

/// `a[k×m]ᵀ · b[k×n]`.
pub fn gemm_tn(exec: Exec, a: &[f32], b: &[f32], k: usize, m: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0f32; m * n];
    exec.for_work(m * k * n).rows(&mut out, n, |i, row| {
        for p in 0..k {
            let av = a[p * m + i];
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
    out
}
