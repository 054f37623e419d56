//! Small complex-vector helpers on top of `ndarray`.

use ndarray::{Array1, ArrayView1};

use crate::C64;

/// `⟨u, v⟩ = uᴴ v`.
pub fn inner(u: ArrayView1<C64>, v: ArrayView1<C64>) -> C64 {
    match (u.as_slice(), v.as_slice()) {
        (Some(u), Some(v)) => u.iter().zip(v).map(|(a, b)| a.conj() * b).sum(),
        _ => u.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum(),
    }
}

pub fn norm_sqr(u: ArrayView1<C64>) -> f64 {
    u.iter().map(|c| c.norm_sqr()).sum()
}

pub fn norm(u: ArrayView1<C64>) -> f64 {
    norm_sqr(u).sqrt()
}

pub fn scale(u: ArrayView1<C64>, c: C64) -> Array1<C64> {
    u.mapv(|v| v * c)
}
