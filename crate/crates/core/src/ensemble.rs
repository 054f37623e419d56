//! Synthetic BlairComp instances: access matrix, design vectors, ground truth
//! and superposed bilinear measurements.

use std::f64::consts::PI;
use std::io::{Read, Write};

use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::Rng;

use crate::linalg::{norm, norm_sqr};
use crate::rng::complex_normal;
use crate::{Error, Result, C64};

/// Problem dimensions: `s` nodes, channel length `K`, data length `N`, `m` samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub s: usize,
    pub k: usize,
    pub n: usize,
    pub m: usize,
}

impl Dims {
    pub fn new(s: usize, k: usize, n: usize, m: usize) -> Result<Self> {
        let dims = Dims { s, k, n, m };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s == 0 || self.k == 0 || self.n == 0 || self.m == 0 {
            return Err(Error::Dimension(format!(
                "all dimensions must be positive, got s={} K={} N={} m={}",
                self.s, self.k, self.n, self.m
            )));
        }
        Ok(())
    }
}

/// The `m×K` access matrix. Row `j` stores `b_jᴴ`, so `b_jᴴ h` is a row-dot.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrixB {
    rows: Array2<C64>,
}

impl DesignMatrixB {
    pub fn from_rows(rows: Array2<C64>) -> Self {
        DesignMatrixB { rows }
    }

    pub fn m(&self) -> usize {
        self.rows.nrows()
    }

    pub fn k(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &Array2<C64> {
        &self.rows
    }

    /// `b_jᴴ` as stored.
    pub fn row(&self, j: usize) -> ArrayView1<'_, C64> {
        self.rows.row(j)
    }

    /// The access vector `b_j` itself.
    pub fn b(&self, j: usize) -> Array1<C64> {
        self.rows.row(j).mapv(|c| c.conj())
    }

    /// `b_jᴴ h`.
    pub fn apply(&self, j: usize, h: ArrayView1<C64>) -> C64 {
        let row = self.rows.row(j);
        match (row.as_slice(), h.as_slice()) {
            (Some(r), Some(h)) => r.iter().zip(h).map(|(r, v)| r * v).sum(),
            _ => row.iter().zip(h.iter()).map(|(r, v)| r * v).sum(),
        }
    }
}

/// First `K` columns of the `m×m` unitary DFT, `F[j,k] = e^{-2πi jk/m}/√m`.
pub fn generate_partial_dft(m: usize, k: usize) -> Result<DesignMatrixB> {
    if k == 0 || m == 0 {
        return Err(Error::Dimension(format!("need K ≥ 1 and m ≥ 1, got K={k} m={m}")));
    }
    if k > m {
        return Err(Error::Dimension(format!("K={k} exceeds m={m}")));
    }
    let scale = 1.0 / (m as f64).sqrt();
    // B = F[:, :K] and row j of B is b_jᴴ.
    let rows = Array2::from_shape_fn((m, k), |(j, c)| {
        // reduce jk mod m first so the angle stays small for large m
        let phase = ((j * c) % m) as f64 / m as f64;
        C64::from_polar(scale, -2.0 * PI * phase)
    });
    Ok(DesignMatrixB { rows })
}

/// `s×m` design vectors `a_ij ∈ C^N`, stored as an `(s, m, N)` array.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignTensorA {
    data: Array3<C64>,
}

impl DesignTensorA {
    pub fn from_array(data: Array3<C64>) -> Self {
        DesignTensorA { data }
    }

    pub fn s(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn m(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn n(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn vector(&self, i: usize, j: usize) -> ArrayView1<'_, C64> {
        match self.data.as_slice() {
            Some(flat) => {
                let (m, n) = (self.data.dim().1, self.data.dim().2);
                let off = (i * m + j) * n;
                ArrayView1::from(&flat[off..off + n])
            }
            None => self.data.slice(ndarray::s![i, j, ..]),
        }
    }

    pub fn data(&self) -> &Array3<C64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<C64> {
        &mut self.data
    }
}

/// i.i.d. CN(0, 1) entries.
pub fn sample_design_tensor<R: Rng + ?Sized>(
    s: usize,
    m: usize,
    n: usize,
    rng: &mut R,
) -> Result<DesignTensorA> {
    if s == 0 || m == 0 || n == 0 {
        return Err(Error::Dimension(format!("need positive dims, got s={s} m={m} N={n}")));
    }
    let mut data = Array3::zeros((s, m, n));
    for v in data.iter_mut() {
        *v = complex_normal(rng, 1.0);
    }
    Ok(DesignTensorA { data })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub h: Vec<Array1<C64>>,
    pub x: Vec<Array1<C64>>,
    pub q: Vec<f64>,
    pub kappa: f64,
}

impl GroundTruth {
    /// Builds a truth from explicit vectors; `q_i` is taken as `‖x̄_i‖`.
    pub fn from_vectors(h: Vec<Array1<C64>>, x: Vec<Array1<C64>>) -> Result<Self> {
        if h.len() != x.len() || h.is_empty() {
            return Err(Error::Dimension(format!(
                "need matching non-empty channel/data lists, got {} and {}",
                h.len(),
                x.len()
            )));
        }
        let q: Vec<f64> = x.iter().map(|v| norm(v.view())).collect();
        let kappa = condition_number(&q);
        Ok(GroundTruth { h, x, q, kappa })
    }

    pub fn s(&self) -> usize {
        self.h.len()
    }

    /// `d_i = ‖h̄_i‖² + ‖x̄_i‖²`.
    pub fn energy(&self, i: usize) -> f64 {
        norm_sqr(self.h[i].view()) + norm_sqr(self.x[i].view())
    }
}

fn condition_number(q: &[f64]) -> f64 {
    let max = q.iter().cloned().fold(f64::MIN, f64::max);
    let min = q.iter().cloned().fold(f64::MAX, f64::min);
    max / min
}

/// Draws `h̄_i ~ CN(0, K⁻¹I)`, `x̄_i ~ CN(0, N⁻¹I)` and rescales both to norm `q_i`.
pub fn sample_ground_truth<R: Rng + ?Sized>(
    s: usize,
    k: usize,
    n: usize,
    q: &[f64],
    rng: &mut R,
) -> Result<GroundTruth> {
    if s == 0 || k == 0 || n == 0 {
        return Err(Error::Dimension(format!("need positive dims, got s={s} K={k} N={n}")));
    }
    if q.len() != s {
        return Err(Error::Dimension(format!("expected {s} norms, got {}", q.len())));
    }
    if let Some(bad) = q.iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
        return Err(Error::Parameter(format!("node norms must lie in (0, 1], got {bad}")));
    }
    let mut h = Vec::with_capacity(s);
    let mut x = Vec::with_capacity(s);
    for &qi in q {
        h.push(normalized_gaussian(k, qi, rng));
        x.push(normalized_gaussian(n, qi, rng));
    }
    Ok(GroundTruth {
        h,
        x,
        q: q.to_vec(),
        kappa: condition_number(q),
    })
}

fn normalized_gaussian<R: Rng + ?Sized>(len: usize, target: f64, rng: &mut R) -> Array1<C64> {
    loop {
        let v: Array1<C64> = (0..len).map(|_| complex_normal(rng, 1.0 / len as f64)).collect();
        let nv = norm(v.view());
        if nv > 0.0 {
            return v.mapv(|c| c * (target / nv));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub y: Array1<C64>,
    pub noise_variance: f64,
}

/// `y_j = Σ_i b_jᴴ h̄_i x̄_iᴴ a_ij + e_j` with `e_j ~ CN(0, σ²_e)`.
pub fn synthesize_measurements<R: Rng + ?Sized>(
    b: &DesignMatrixB,
    a: &DesignTensorA,
    truth: &GroundTruth,
    noise_variance: f64,
    rng: &mut R,
) -> Result<Measurements> {
    check_shapes(b, a, truth)?;
    if !(noise_variance >= 0.0) {
        return Err(Error::Parameter(format!(
            "noise variance must be non-negative, got {noise_variance}"
        )));
    }
    let mut y = Array1::zeros(b.m());
    for (j, yj) in y.iter_mut().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..truth.s() {
            acc += b.apply(j, truth.h[i].view()) * crate::linalg::inner(truth.x[i].view(), a.vector(i, j));
        }
        *yj = acc;
    }
    if noise_variance > 0.0 {
        for yj in y.iter_mut() {
            *yj += complex_normal(rng, noise_variance);
        }
    }
    Ok(Measurements { y, noise_variance })
}

fn check_shapes(b: &DesignMatrixB, a: &DesignTensorA, truth: &GroundTruth) -> Result<()> {
    let s = truth.s();
    if a.s() != s || a.m() != b.m() {
        return Err(Error::Dimension(format!(
            "design tensor is {}×{}, expected {}×{}",
            a.s(),
            a.m(),
            s,
            b.m()
        )));
    }
    for i in 0..s {
        if truth.h[i].len() != b.k() || truth.x[i].len() != a.n() {
            return Err(Error::Dimension(format!(
                "node {i}: channel length {} / data length {} do not match K={} N={}",
                truth.h[i].len(),
                truth.x[i].len(),
                b.k(),
                a.n()
            )));
        }
    }
    Ok(())
}

/// Entrywise maps used by [`compute_nomographic_target`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NomographicPreset {
    /// `θ̄ = Σ_i x̄_i`.
    Sum,
    /// `θ̄ = (1/s) Σ_i x̄_i`.
    ArithmeticMean,
}

/// `θ̄_ℓ = post(Σ_i pre(x̄_iℓ))`.
pub fn compute_nomographic_target_with(
    truth: &GroundTruth,
    pre: impl Fn(C64) -> C64,
    post: impl Fn(C64) -> C64,
) -> Array1<C64> {
    let n = truth.x.first().map_or(0, |v| v.len());
    let mut acc: Array1<C64> = Array1::zeros(n);
    for x in &truth.x {
        for (a, v) in acc.iter_mut().zip(x.iter()) {
            *a += pre(*v);
        }
    }
    acc.mapv(post)
}

pub fn compute_nomographic_target(truth: &GroundTruth, preset: NomographicPreset) -> Array1<C64> {
    let s = truth.s() as f64;
    match preset {
        NomographicPreset::Sum => compute_nomographic_target_with(truth, |v| v, |v| v),
        NomographicPreset::ArithmeticMean => compute_nomographic_target_with(truth, |v| v, |v| v / s),
    }
}

/// A complete synthetic instance. Immutable once built; share it by reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub dims: Dims,
    pub b: DesignMatrixB,
    pub a: DesignTensorA,
    pub truth: GroundTruth,
    pub measurements: Measurements,
    pub seed: u64,
}

impl ProblemInstance {
    /// Assembles an instance from parts, checking every shape.
    pub fn from_parts(
        b: DesignMatrixB,
        a: DesignTensorA,
        truth: GroundTruth,
        measurements: Measurements,
        seed: u64,
    ) -> Result<Self> {
        check_shapes(&b, &a, &truth)?;
        if measurements.y.len() != b.m() {
            return Err(Error::Dimension(format!(
                "{} measurements for m={}",
                measurements.y.len(),
                b.m()
            )));
        }
        let dims = Dims::new(truth.s(), b.k(), a.n(), b.m())?;
        Ok(ProblemInstance { dims, b, a, truth, measurements, seed })
    }

    /// Draws truth, then designs, then noise, all from `rng`.
    pub fn generate<R: Rng + ?Sized>(
        dims: Dims,
        q: &[f64],
        noise_variance: f64,
        seed: u64,
        rng: &mut R,
    ) -> Result<Self> {
        dims.validate()?;
        let b = generate_partial_dft(dims.m, dims.k)?;
        let truth = sample_ground_truth(dims.s, dims.k, dims.n, q, rng)?;
        let a = sample_design_tensor(dims.s, dims.m, dims.n, rng)?;
        let measurements = synthesize_measurements(&b, &a, &truth, noise_variance, rng)?;
        Self::from_parts(b, a, truth, measurements, seed)
    }

    /// Convenience wrapper seeding a fresh generator from `seed`.
    pub fn generate_seeded(dims: Dims, q: &[f64], noise_variance: f64, seed: u64) -> Result<Self> {
        let mut rng = crate::rng::seeded(seed);
        Self::generate(dims, q, noise_variance, seed, &mut rng)
    }

    /// The plain loss-defining model: every sample, unmodified access vectors.
    pub fn model(&self) -> MeasurementModel<'_> {
        MeasurementModel {
            b: &self.b,
            a: &self.a,
            access_phase: None,
            y: &self.measurements.y,
            excluded: None,
        }
    }

    /// Writes the little-endian binary dump read by [`ProblemInstance::read_dump`].
    ///
    /// Layout: magic `BLRCINS1`; `s K N m seed` as u64; `σ²_e` as f64; `q` (s
    /// f64); then B, h̄, x̄, A, y as (re, im) f64 pairs in row-major order.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        let d = self.dims;
        for v in [d.s as u64, d.k as u64, d.n as u64, d.m as u64, self.seed] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.measurements.noise_variance.to_le_bytes())?;
        for q in &self.truth.q {
            w.write_all(&q.to_le_bytes())?;
        }
        let write_c = |w: &mut W, c: &C64| -> std::io::Result<()> {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())
        };
        for c in self.b.rows.iter() {
            write_c(&mut w, c)?;
        }
        for v in self.truth.h.iter().chain(self.truth.x.iter()) {
            for c in v.iter() {
                write_c(&mut w, c)?;
            }
        }
        for c in self.a.data.iter() {
            write_c(&mut w, c)?;
        }
        for c in self.measurements.y.iter() {
            write_c(&mut w, c)?;
        }
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut header = [0u64; 5];
        for v in header.iter_mut() {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            *v = u64::from_le_bytes(buf);
        }
        let [s, k, n, m, seed] = header;
        let (s, k, n, m) = (s as usize, k as usize, n as usize, m as usize);
        Dims::new(s, k, n, m)?;
        let mut read_f = || -> Result<f64> {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            Ok(f64::from_le_bytes(buf))
        };
        let noise_variance = read_f()?;
        let q = (0..s).map(|_| read_f()).collect::<Result<Vec<_>>>()?;
        let mut read_c = || -> Result<C64> { Ok(C64::new(read_f()?, read_f()?)) };
        let rows = Array2::from_shape_vec((m, k), (0..m * k).map(|_| read_c()).collect::<Result<_>>()?)
            .map_err(|e| Error::Format(e.to_string()))?;
        let h = (0..s)
            .map(|_| (0..k).map(|_| read_c()).collect::<Result<Array1<C64>>>())
            .collect::<Result<Vec<_>>>()?;
        let x = (0..s)
            .map(|_| (0..n).map(|_| read_c()).collect::<Result<Array1<C64>>>())
            .collect::<Result<Vec<_>>>()?;
        let a = Array3::from_shape_vec((s, m, n), (0..s * m * n).map(|_| read_c()).collect::<Result<_>>()?)
            .map_err(|e| Error::Format(e.to_string()))?;
        let y = (0..m).map(|_| read_c()).collect::<Result<Array1<C64>>>()?;
        let kappa = condition_number(&q);
        Self::from_parts(
            DesignMatrixB { rows },
            DesignTensorA { data: a },
            GroundTruth { h, x, q, kappa },
            Measurements { y, noise_variance },
            seed,
        )
    }
}

const DUMP_MAGIC: &[u8; 8] = b"BLRCINS1";

/// The data that defines a least-squares loss: access matrix, design vectors,
/// observations, plus two optional modifications used by the auxiliary runs.
///
/// * `access_phase[(i, j)]` replaces `b_j` by `ξ_ij b_j` for node `i`.
/// * `excluded` drops one sample from the sum.
#[derive(Debug, Clone, Copy)]
pub struct MeasurementModel<'a> {
    pub b: &'a DesignMatrixB,
    pub a: &'a DesignTensorA,
    pub access_phase: Option<&'a Array2<C64>>,
    pub y: &'a Array1<C64>,
    pub excluded: Option<usize>,
}

impl<'a> MeasurementModel<'a> {
    pub fn s(&self) -> usize {
        self.a.s()
    }

    pub fn k(&self) -> usize {
        self.b.k()
    }

    pub fn n(&self) -> usize {
        self.a.n()
    }

    pub fn m(&self) -> usize {
        self.b.m()
    }

    /// The same model with sample `l` (0-based) removed.
    pub fn without_sample(self, l: usize) -> Result<Self> {
        if l >= self.m() {
            return Err(Error::Index { index: l, len: self.m() });
        }
        Ok(MeasurementModel { excluded: Some(l), ..self })
    }

    pub fn is_active(&self, j: usize) -> bool {
        self.excluded != Some(j)
    }

    /// `b_ijᴴ h` for node `i`, sample `j`.
    pub fn access(&self, i: usize, j: usize, h: ArrayView1<C64>) -> C64 {
        let base = self.b.apply(j, h);
        match self.access_phase {
            Some(p) => p[(i, j)].conj() * base,
            None => base,
        }
    }

    /// The access vector `b_ij` for node `i`.
    pub fn access_vector(&self, i: usize, j: usize) -> Array1<C64> {
        let b = self.b.b(j);
        match self.access_phase {
            Some(p) => b.mapv(|c| c * p[(i, j)]),
            None => b,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.a.m() != self.b.m() || self.y.len() != self.b.m() {
            return Err(Error::Dimension(format!(
                "inconsistent sample counts: B has {}, A has {}, y has {}",
                self.b.m(),
                self.a.m(),
                self.y.len()
            )));
        }
        if let Some(p) = self.access_phase {
            if p.dim() != (self.s(), self.m()) {
                return Err(Error::Dimension(format!(
                    "access phases are {:?}, expected ({}, {})",
                    p.dim(),
                    self.s(),
                    self.m()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::inner;
    use crate::rng::seeded;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn gram_error(b: &DesignMatrixB) -> f64 {
        let k = b.k();
        let mut worst: f64 = 0.0;
        for p in 0..k {
            for q in 0..k {
                // (BᴴB)[p,q] = Σ_j conj(B[j,p]) B[j,q]
                let v: C64 = (0..b.m()).map(|j| b.rows[(j, p)].conj() * b.rows[(j, q)]).sum();
                let target = if p == q { 1.0 } else { 0.0 };
                worst = worst.max((v - C64::new(target, 0.0)).norm());
            }
        }
        worst
    }

    #[test]
    fn partial_dft_is_orthonormal_with_flat_rows() {
        for &(m, k) in &[(4, 2), (8, 3), (1, 1), (50, 7), (400, 8)] {
            let b = generate_partial_dft(m, k).unwrap();
            assert!(gram_error(&b) < 1e-12, "m={m} K={k}");
            for j in 0..m {
                assert!(close(norm_sqr(b.row(j)), k as f64 / m as f64, 1e-12));
            }
        }
    }

    #[test]
    fn partial_dft_small_cases() {
        let b = generate_partial_dft(1, 1).unwrap();
        assert!((b.rows[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-15);

        let b = generate_partial_dft(4, 2).unwrap();
        for j in 0..4 {
            assert!(close(norm_sqr(b.row(j)), 0.5, 1e-15));
        }

        let b = generate_partial_dft(8, 3).unwrap();
        let c = 1.0 / 8f64.sqrt();
        for j in 0..8 {
            assert!((b.rows[(j, 0)] - C64::new(c, 0.0)).norm() < 1e-15);
        }
        // direct evaluation of a non-trivial entry: j=3, k=2 → e^{-2πi·6/8}/√8 = i/√8
        assert!((b.rows[(3, 2)] - C64::new(0.0, c)).norm() < 1e-15);
    }

    #[test]
    fn partial_dft_rejects_wide() {
        assert!(matches!(generate_partial_dft(3, 4), Err(Error::Dimension(_))));
        assert!(generate_partial_dft(0, 0).is_err());
    }

    #[test]
    fn ground_truth_normalization_and_kappa() {
        let mut rng = seeded(3);
        let t = sample_ground_truth(1, 5, 7, &[1.0], &mut rng).unwrap();
        assert!(close(norm(t.h[0].view()), 1.0, 1e-12));
        assert!(close(norm(t.x[0].view()), 1.0, 1e-12));

        let t = sample_ground_truth(3, 4, 4, &[1.0, 0.5, 0.25], &mut rng).unwrap();
        assert!(close(t.kappa, 4.0, 1e-15));
        for i in 0..3 {
            assert!(close(norm(t.h[i].view()), t.q[i], 1e-12));
            assert!(close(norm(t.x[i].view()), t.q[i], 1e-12));
        }
    }

    #[test]
    fn ground_truth_rejects_bad_norms() {
        let mut rng = seeded(0);
        for bad in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(
                sample_ground_truth(1, 2, 2, &[bad], &mut rng),
                Err(Error::Parameter(_))
            ));
        }
        assert!(sample_ground_truth(2, 2, 2, &[1.0], &mut rng).is_err());
    }

    #[test]
    fn sampling_is_a_function_of_seed() {
        let t1 = sample_ground_truth(2, 3, 4, &[1.0, 1.0], &mut seeded(42)).unwrap();
        let t2 = sample_ground_truth(2, 3, 4, &[1.0, 1.0], &mut seeded(42)).unwrap();
        assert_eq!(t1, t2);
        let a1 = sample_design_tensor(2, 5, 3, &mut seeded(9)).unwrap();
        let a2 = sample_design_tensor(2, 5, 3, &mut seeded(9)).unwrap();
        assert_eq!(a1, a2);
        let d = Dims::new(2, 4, 4, 40).unwrap();
        let i1 = ProblemInstance::generate_seeded(d, &[1.0, 0.5], 0.01, 5).unwrap();
        let i2 = ProblemInstance::generate_seeded(d, &[1.0, 0.5], 0.01, 5).unwrap();
        assert_eq!(i1, i2);
    }

    #[test]
    fn scalar_design_has_unit_second_moment() {
        // Monte-Carlo oracle: E|a|² = 1 for a ~ CN(0,1)
        let mut rng = seeded(11);
        let draws = 100_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let a = sample_design_tensor(1, 1, 1, &mut rng).unwrap();
            acc += a.data[(0, 0, 0)].norm_sqr();
        }
        let mean = acc / draws as f64;
        assert!((mean - 1.0).abs() < 0.02, "E|a|² ≈ {mean}");
    }

    #[test]
    fn design_tensor_statistics() {
        // s·m·N = 2·1000·8 = 16000 ≥ 10^4
        let a = sample_design_tensor(2, 1000, 8, &mut seeded(1)).unwrap();
        let count = a.data.len() as f64;
        let mean: C64 = a.data.iter().sum::<C64>() / count;
        assert!(mean.norm() <= 5.0 / count.sqrt());
        let var = a.data.iter().map(|c| (c - mean).norm_sqr()).sum::<f64>() / count;
        assert!((var - 1.0).abs() < 0.1);
        let var_re = a.data.iter().map(|c| (c.re - mean.re).powi(2)).sum::<f64>() / count;
        assert!((var_re - 0.5).abs() < 0.05);
    }

    #[test]
    fn first_entry_maximum_obeys_log_bound() {
        let m = 10_000;
        let bound = 5.0 * (m as f64).ln().sqrt();
        let mut hits = 0;
        for seed in 0..100 {
            let a = sample_design_tensor(2, m, 1, &mut seeded(seed)).unwrap();
            let max = (0..m).map(|j| a.data[(0, j, 0)].norm()).fold(0.0, f64::max);
            if max <= bound {
                hits += 1;
            }
        }
        assert!(hits >= 99);
    }

    #[test]
    fn zero_signal_gives_zero_measurements() {
        let mut rng = seeded(2);
        let b = generate_partial_dft(6, 2).unwrap();
        let a = sample_design_tensor(2, 6, 3, &mut rng).unwrap();
        let mut truth = sample_ground_truth(2, 2, 3, &[1.0, 1.0], &mut rng).unwrap();
        for x in truth.x.iter_mut() {
            x.fill(C64::new(0.0, 0.0));
        }
        let meas = synthesize_measurements(&b, &a, &truth, 0.0, &mut rng).unwrap();
        assert!(meas.y.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn scalar_measurement_by_hand() {
        let b = DesignMatrixB::from_rows(Array2::from_elem((1, 1), C64::new(1.0, 0.0)));
        let a = DesignTensorA::from_array(Array3::from_elem((1, 1, 1), C64::new(5.0, 0.0)));
        let truth = GroundTruth::from_vectors(
            vec![Array1::from_elem(1, C64::new(2.0, 0.0))],
            vec![Array1::from_elem(1, C64::new(3.0, 0.0))],
        )
        .unwrap();
        let meas = synthesize_measurements(&b, &a, &truth, 0.0, &mut seeded(0)).unwrap();
        assert!((meas.y[0] - C64::new(30.0, 0.0)).norm() < 1e-15);

        // complex hand case: b=1, h=i, x=1+i, a=2 → i · conj(1+i) · 2 = i(1−i)2 = 2+2i
        let truth = GroundTruth::from_vectors(
            vec![Array1::from_elem(1, C64::new(0.0, 1.0))],
            vec![Array1::from_elem(1, C64::new(1.0, 1.0))],
        )
        .unwrap();
        let a = DesignTensorA::from_array(Array3::from_elem((1, 1, 1), C64::new(2.0, 0.0)));
        let meas = synthesize_measurements(&b, &a, &truth, 0.0, &mut seeded(0)).unwrap();
        assert!((meas.y[0] - C64::new(2.0, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn measurements_match_triple_loop() {
        let d = Dims::new(3, 4, 5, 30).unwrap();
        let inst = ProblemInstance::generate_seeded(d, &[1.0, 0.7, 0.4], 0.0, 17).unwrap();
        // brute force: Σ_i Σ_k Σ_n conj(b_j[k]) h̄_i[k] conj(x̄_i[n]) a_ij[n]
        for j in 0..d.m {
            let bj = inst.b.b(j);
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..d.s {
                for k in 0..d.k {
                    for n in 0..d.n {
                        acc += bj[k].conj()
                            * inst.truth.h[i][k]
                            * inst.truth.x[i][n].conj()
                            * inst.a.vector(i, j)[n];
                    }
                }
            }
            let y = inst.measurements.y[j];
            assert!((acc - y).norm() <= 1e-12 * y.norm().max(1.0));
        }
    }

    #[test]
    fn noise_is_added_with_requested_variance() {
        let d = Dims::new(1, 2, 2, 4000).unwrap();
        let clean = ProblemInstance::generate_seeded(d, &[1.0], 0.0, 8).unwrap();
        let noisy = ProblemInstance::generate_seeded(d, &[1.0], 0.25, 8).unwrap();
        let var = (&noisy.measurements.y - &clean.measurements.y)
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            / d.m as f64;
        assert!((var - 0.25).abs() < 0.025, "{var}");
    }

    #[test]
    fn nomographic_targets() {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let truth = GroundTruth::from_vectors(
            vec![Array1::from_elem(1, one), Array1::from_elem(1, one)],
            vec![Array1::from_vec(vec![one, zero]), Array1::from_vec(vec![zero, one])],
        )
        .unwrap();
        let sum = compute_nomographic_target(&truth, NomographicPreset::Sum);
        assert_eq!(sum.to_vec(), vec![one, one]);
        let mean = compute_nomographic_target(&truth, NomographicPreset::ArithmeticMean);
        assert_eq!(mean.to_vec(), vec![one * 0.5, one * 0.5]);

        let t = sample_ground_truth(3, 4, 6, &[1.0, 0.3, 0.9], &mut seeded(4)).unwrap();
        let theta = compute_nomographic_target(&t, NomographicPreset::Sum);
        for l in 0..6 {
            let direct = t.x[0][l] + t.x[1][l] + t.x[2][l];
            assert!((theta[l] - direct).norm() <= 1e-15);
        }
        // a non-trivial nomographic pair: geometric-style pre/post maps
        let sq = compute_nomographic_target_with(&t, |v| v * v, |v| v * 2.0);
        let direct: C64 = (0..3).map(|i| t.x[i][0] * t.x[i][0]).sum::<C64>() * 2.0;
        assert!((sq[0] - direct).norm() < 1e-15);
    }

    #[test]
    fn dump_round_trips() {
        let d = Dims::new(2, 3, 4, 9).unwrap();
        let inst = ProblemInstance::generate_seeded(d, &[1.0, 0.5], 0.1, 21).unwrap();
        let mut buf = Vec::new();
        inst.write_dump(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 5 * 8 + 8 + 2 * 8 + 16 * (9 * 3 + 2 * 3 + 2 * 4 + 2 * 9 * 4 + 9));
        let back = ProblemInstance::read_dump(buf.as_slice()).unwrap();
        assert_eq!(inst, back);
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(ProblemInstance::read_dump(bad.as_slice()).is_err());
    }

    #[test]
    fn model_index_checks() {
        let d = Dims::new(1, 2, 2, 5).unwrap();
        let inst = ProblemInstance::generate_seeded(d, &[1.0], 0.0, 1).unwrap();
        assert!(matches!(inst.model().without_sample(5), Err(Error::Index { .. })));
        let loo = inst.model().without_sample(2).unwrap();
        assert!(!loo.is_active(2) && loo.is_active(1));
        let h = inst.truth.h[0].view();
        assert!((loo.access(0, 3, h) - inner(inst.b.b(3).view(), h)).norm() < 1e-15);
    }
}
