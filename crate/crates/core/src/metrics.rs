//! Ambiguity alignment and the error metrics built on it.
//!
//! A bilinear pair `(h, x)` is only identifiable up to the gauge
//! `(h, x) ↦ ((ω*)⁻¹h, ωx)`. Every metric here first solves
//!
//! ```text
//! min_ω ‖(ω*)⁻¹hA − hB‖² + ‖ω xA − xB‖²
//! ```
//!
//! For `ω = r·e^{iθ}` the objective is
//! `‖hA‖²/r² + r²‖xA‖² + ‖hB‖² + ‖xB‖² − 2 Re(e^{iθ}·w(r))` with
//! `w(r) = hBᴴhA/r + r·xBᴴxA`, so the phase is `θ = −arg w(r)` and only a 1-D
//! search over the modulus remains.

use ndarray::Array1;
use rand::Rng;

use crate::ensemble::{DesignMatrixB, GroundTruth};
use crate::linalg::{inner, norm, norm_sqr};
use crate::rng::complex_normal;
use crate::solver::Iterate;
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AlignmentResult {
    pub omega: C64,
    pub cost: f64,
}

/// Scalar summary of an alignment problem: everything `g(r)` depends on.
#[derive(Debug, Clone, Copy)]
struct AlignmentProblem {
    ha: f64,
    xa: f64,
    hb_ha: C64,
    xb_xa: C64,
    constant: f64,
}

impl AlignmentProblem {
    fn w(&self, r: f64) -> C64 {
        self.hb_ha / r + self.xb_xa * r
    }

    fn g(&self, r: f64) -> f64 {
        self.ha / (r * r) + r * r * self.xa + self.constant - 2.0 * self.w(r).norm()
    }

    /// `(g'(r), g''(r))`.
    fn derivatives(&self, r: f64) -> (f64, f64) {
        let w = self.w(r);
        let wn = w.norm();
        let w1 = -self.hb_ha / (r * r) + self.xb_xa;
        let w2 = self.hb_ha * (2.0 / (r * r * r));
        let (d1, d2) = if wn > 0.0 {
            let re = (w.conj() * w1).re;
            let d1 = re / wn;
            let d2 = (w1.norm_sqr() + (w.conj() * w2).re) / wn - re * re / (wn * wn * wn);
            (d1, d2)
        } else {
            (0.0, 0.0)
        };
        (
            -2.0 * self.ha / (r * r * r) + 2.0 * self.xa * r - 2.0 * d1,
            6.0 * self.ha / (r * r * r * r) + 2.0 * self.xa - 2.0 * d2,
        )
    }
}

const SCAN_POINTS: usize = 241;
const BRACKET_DECADES: f64 = 6.0;
const GOLDEN_WIDTH: f64 = 1e-10;

/// Globally minimizes the alignment objective between `(hA, xA)` and `(hB, xB)`.
///
/// `g(r)` can have more than one local minimum, so a log-spaced scan over
/// `r ∈ r₀·[1e-6, 1e6]`, `r₀ = (‖hA‖/‖xA‖)^{1/2}`, picks the basin before a
/// golden-section refinement and a guarded Newton polish.
pub fn align_pair(
    h_a: &Array1<C64>,
    x_a: &Array1<C64>,
    h_b: &Array1<C64>,
    x_b: &Array1<C64>,
) -> Result<AlignmentResult> {
    if h_a.len() != h_b.len() || x_a.len() != x_b.len() {
        return Err(Error::Dimension("alignment pair blocks differ in length".into()));
    }
    let prob = AlignmentProblem {
        ha: norm_sqr(h_a.view()),
        xa: norm_sqr(x_a.view()),
        hb_ha: inner(h_b.view(), h_a.view()),
        xb_xa: inner(x_b.view(), x_a.view()),
        constant: norm_sqr(h_b.view()) + norm_sqr(x_b.view()),
    };
    if prob.ha == 0.0 || prob.xa == 0.0 {
        return Err(Error::DegenerateAlignment("zero block in the aligned pair".into()));
    }
    if !(prob.ha.is_finite() && prob.xa.is_finite()) {
        return Err(Error::DegenerateAlignment("non-finite block in the aligned pair".into()));
    }
    let r = minimize_modulus(&prob);
    let w = prob.w(r);
    let phase = if w.norm() > 0.0 { C64::from_polar(1.0, -w.arg()) } else { C64::new(1.0, 0.0) };
    let omega = phase * r;
    // evaluate the objective directly at ω
    let cost = alignment_cost(h_a, x_a, h_b, x_b, omega);
    Ok(AlignmentResult { omega, cost })
}

/// `‖(ω*)⁻¹hA − hB‖² + ‖ω xA − xB‖²`.
pub fn alignment_cost(h_a: &Array1<C64>, x_a: &Array1<C64>, h_b: &Array1<C64>, x_b: &Array1<C64>, omega: C64) -> f64 {
    let inv = C64::new(1.0, 0.0) / omega.conj();
    let dh: f64 = h_a.iter().zip(h_b.iter()).map(|(a, b)| (a * inv - b).norm_sqr()).sum();
    let dx: f64 = x_a.iter().zip(x_b.iter()).map(|(a, b)| (a * omega - b).norm_sqr()).sum();
    dh + dx
}

fn minimize_modulus(prob: &AlignmentProblem) -> f64 {
    let center = (prob.ha / prob.xa).powf(0.25).ln();
    let span = BRACKET_DECADES * std::f64::consts::LN_10;
    let (lo, hi) = (center - span, center + span);
    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let g = |rho: f64| prob.g(rho.exp());

    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for k in 0..SCAN_POINTS {
        let v = g(lo + step * k as f64);
        if v < best_val {
            best_val = v;
            best = k;
        }
    }
    let mut a = lo + step * best.saturating_sub(1) as f64;
    let mut b = lo + step * (best + 1).min(SCAN_POINTS - 1) as f64;

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    while b - a > GOLDEN_WIDTH {
        if gc < gd {
            b = d;
            d = c;
            gd = gc;
            c = b - inv_phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + inv_phi * (b - a);
            gd = g(d);
        }
    }
    let mut r = (0.5 * (a + b)).exp();

    // Newton polish on g'(r); values of g tie at this resolution, so steps
    // are accepted while |g'| keeps shrinking.
    for _ in 0..8 {
        let (d1, d2) = prob.derivatives(r);
        if !(d2 > 0.0) || !d1.is_finite() || d1 == 0.0 {
            break;
        }
        let cand = r - d1 / d2;
        if !(cand > 0.0) || (cand - r).abs() > 1e-3 * r {
            break;
        }
        if prob.derivatives(cand).0.abs() >= d1.abs() {
            break;
        }
        r = cand;
    }
    r
}

/// Aligns every node of `z` to the ground truth.
pub fn align_to_truth(z: &Iterate, truth: &GroundTruth) -> Result<Vec<AlignmentResult>> {
    if z.s() != truth.s() {
        return Err(Error::Dimension(format!("iterate has {} nodes, truth has {}", z.s(), truth.s())));
    }
    z.blocks
        .iter()
        .enumerate()
        .map(|(i, b)| align_pair(&b.h, &b.x, &truth.h[i], &truth.x[i]))
        .collect()
}

/// `dist(z, z̄) = (Σ_i min_ω cost_i(ω) / d_i)^{1/2}` with `d_i = ‖h̄_i‖² + ‖x̄_i‖²`.
pub fn dist(z: &Iterate, truth: &GroundTruth) -> Result<f64> {
    Ok(dist_with(&align_to_truth(z, truth)?, truth))
}

pub(crate) fn dist_with(aligned: &[AlignmentResult], truth: &GroundTruth) -> f64 {
    let total: f64 = aligned
        .iter()
        .enumerate()
        .map(|(i, a)| a.cost / truth.energy(i))
        .sum();
    total.sqrt()
}

/// `‖Σ_i ω_i x_i − Σ_i x̄_i‖ / ‖Σ_i x̄_i‖` with `ω_i` aligned afresh.
pub fn relative_error(z: &Iterate, truth: &GroundTruth) -> Result<f64> {
    let omegas: Vec<C64> = align_to_truth(z, truth)?.iter().map(|a| a.omega).collect();
    relative_error_with(z, truth, &omegas)
}

/// The same error with caller-supplied alignment weights, e.g. noisy estimates.
pub fn relative_error_with(z: &Iterate, truth: &GroundTruth, omegas: &[C64]) -> Result<f64> {
    if omegas.len() != z.s() || z.s() != truth.s() {
        return Err(Error::Dimension("alignment weights do not match node count".into()));
    }
    let n = truth.x[0].len();
    let mut target = Array1::<C64>::zeros(n);
    let mut estimate = Array1::<C64>::zeros(n);
    for (i, b) in z.blocks.iter().enumerate() {
        target = target + &truth.x[i];
        estimate = estimate + &b.x.mapv(|v| v * omegas[i]);
    }
    let denom = norm(target.view());
    if denom == 0.0 {
        return Err(Error::UndefinedMetric("ground-truth sum has zero norm".into()));
    }
    Ok(norm((&estimate - &target).view()) / denom)
}

/// Signal (`α`) and perpendicular (`β`) components of one aligned node.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct NodeComponents {
    pub alpha_h: C64,
    pub beta_h: f64,
    pub alpha_x: C64,
    pub beta_x: f64,
    /// `β_x / ‖x_i‖`.
    pub rmse_x: f64,
}

fn split(truth_vec: &Array1<C64>, aligned: &Array1<C64>) -> (C64, f64) {
    let tn2 = norm_sqr(truth_vec.view());
    let overlap = inner(truth_vec.view(), aligned.view());
    let alpha = overlap / tn2.sqrt();
    let coef = overlap / tn2;
    let perp: f64 = aligned
        .iter()
        .zip(truth_vec.iter())
        .map(|(a, t)| (a - t * coef).norm_sqr())
        .sum();
    (alpha, perp.sqrt())
}

/// Per-node `(α_h, β_h, α_x, β_x, rmse_x)` after aligning each node to the truth.
pub fn decompose(z: &Iterate, truth: &GroundTruth) -> Result<Vec<NodeComponents>> {
    Ok(decompose_with(z, truth, &align_to_truth(z, truth)?))
}

pub(crate) fn decompose_with(z: &Iterate, truth: &GroundTruth, aligned: &[AlignmentResult]) -> Vec<NodeComponents> {
    z.blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let w = aligned[i].omega;
            let ht = b.h.mapv(|v| v / w.conj());
            let xt = b.x.mapv(|v| v * w);
            let (alpha_h, beta_h) = split(&truth.h[i], &ht);
            let (alpha_x, beta_x) = split(&truth.x[i], &xt);
            NodeComponents {
                alpha_h,
                beta_h,
                alpha_x,
                beta_x,
                rmse_x: beta_x / norm(b.x.view()),
            }
        })
        .collect()
}

/// `μ = √m · max_{i,j} |b_jᴴ h̄_i| / ‖h̄_i‖`.
pub fn incoherence(truth: &GroundTruth, b: &DesignMatrixB) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for h in &truth.h {
        let hn = norm(h.view());
        if hn == 0.0 {
            return Err(Error::DegenerateAlignment("zero channel in incoherence".into()));
        }
        for j in 0..b.m() {
            worst = worst.max(b.apply(j, h.view()).norm() / hn);
        }
    }
    Ok((b.m() as f64).sqrt() * worst)
}

/// `ω + e`, `e ~ CN(0, σ_w⁻¹)`.
pub fn perturb_alignment<R: Rng + ?Sized>(omega: C64, sigma_w: f64, rng: &mut R) -> Result<C64> {
    if !(sigma_w > 0.0) {
        return Err(Error::Parameter(format!("σ_w must be positive, got {sigma_w}")));
    }
    Ok(omega + complex_normal(rng, 1.0 / sigma_w))
}
