//! Wirtinger flow for the bilinear least-squares loss
//! `f(z) = Σ_j |Σ_i b_jᴴ h_i x_iᴴ a_ij − y_j|²`.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::ensemble::{GroundTruth, MeasurementModel};
use crate::linalg::{inner, norm_sqr};
use crate::metrics::{self, NodeComponents};
use crate::rng::complex_normal;
use crate::{Error, Result, C64};

/// One node's pair `z_i = (h_i, x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeBlock {
    pub h: Array1<C64>,
    pub x: Array1<C64>,
}

/// Stacked variable `z = (h_1, x_1, …, h_s, x_s)` at iteration `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub blocks: Vec<NodeBlock>,
    pub t: usize,
}

impl Iterate {
    pub fn new(blocks: Vec<NodeBlock>) -> Self {
        Iterate { blocks, t: 0 }
    }

    /// The ground truth viewed as an iterate.
    pub fn from_truth(truth: &GroundTruth) -> Self {
        let blocks = truth
            .h
            .iter()
            .zip(&truth.x)
            .map(|(h, x)| NodeBlock { h: h.clone(), x: x.clone() })
            .collect();
        Iterate::new(blocks)
    }

    pub fn s(&self) -> usize {
        self.blocks.len()
    }

    /// `Σ_i ⟨self_i, other_i⟩` over both blocks.
    pub fn inner(&self, other: &GradientBlocks) -> C64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| inner(a.h.view(), b.h.view()) + inner(a.x.view(), b.x.view()))
            .sum()
    }

    /// `self + c·dir`, blockwise.
    pub fn offset(&self, dir: &Iterate, c: f64) -> Iterate {
        let blocks = self
            .blocks
            .iter()
            .zip(&dir.blocks)
            .map(|(a, d)| NodeBlock {
                h: &a.h + &d.h.mapv(|v| v * c),
                x: &a.x + &d.x.mapv(|v| v * c),
            })
            .collect();
        Iterate { blocks, t: self.t }
    }
}

/// Per-node Wirtinger gradient blocks `(∇_{h_i} f, ∇_{x_i} f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBlocks {
    pub blocks: Vec<NodeBlock>,
}

impl GradientBlocks {
    pub fn zeros_like(z: &Iterate) -> Self {
        GradientBlocks {
            blocks: z
                .blocks
                .iter()
                .map(|b| NodeBlock {
                    h: Array1::zeros(b.h.len()),
                    x: Array1::zeros(b.x.len()),
                })
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.h.iter().chain(b.x.iter()))
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }
}

/// `h_i⁰ ~ CN(0, K⁻¹I)`, `x_i⁰ ~ CN(0, N⁻¹I)`, left unnormalized.
pub fn random_init<R: Rng + ?Sized>(s: usize, k: usize, n: usize, rng: &mut R) -> Iterate {
    let blocks = (0..s)
        .map(|_| NodeBlock {
            h: (0..k).map(|_| complex_normal(rng, 1.0 / k as f64)).collect(),
            x: (0..n).map(|_| complex_normal(rng, 1.0 / n as f64)).collect(),
        })
        .collect();
    Iterate::new(blocks)
}

fn check_iterate(z: &Iterate, model: &MeasurementModel) -> Result<()> {
    model.check()?;
    if z.s() != model.s() {
        return Err(Error::Dimension(format!("iterate has {} nodes, model has {}", z.s(), model.s())));
    }
    for (i, b) in z.blocks.iter().enumerate() {
        if b.h.len() != model.k() || b.x.len() != model.n() {
            return Err(Error::Dimension(format!(
                "node {i}: block lengths ({}, {}) do not match (K={}, N={})",
                b.h.len(),
                b.x.len(),
                model.k(),
                model.n()
            )));
        }
    }
    Ok(())
}

/// Per-node products `b_ijᴴ h_i` and `x_iᴴ a_ij` for every sample, plus the
/// residuals `r_j = Σ_i (b_ijᴴ h_i)(x_iᴴ a_ij) − y_j`. Excluded samples carry
/// a zero residual.
struct Residuals {
    bh: Array2<C64>,
    xa: Array2<C64>,
    r: Array1<C64>,
}

fn residuals(z: &Iterate, model: &MeasurementModel) -> Residuals {
    let (s, m) = (model.s(), model.m());
    let mut bh = Array2::zeros((s, m));
    let mut xa = Array2::zeros((s, m));
    let mut r = Array1::zeros(m);
    for j in 0..m {
        if !model.is_active(j) {
            continue;
        }
        let mut acc = -model.y[j];
        for (i, blk) in z.blocks.iter().enumerate() {
            let u = model.access(i, j, blk.h.view());
            let v = inner(blk.x.view(), model.a.vector(i, j));
            bh[(i, j)] = u;
            xa[(i, j)] = v;
            acc += u * v;
        }
        r[j] = acc;
    }
    Residuals { bh, xa, r }
}

impl Residuals {
    fn loss(&self) -> f64 {
        self.r.iter().map(|c| c.norm_sqr()).sum()
    }
}

pub fn loss(z: &Iterate, model: &MeasurementModel) -> Result<f64> {
    check_iterate(z, model)?;
    Ok(residuals(z, model).loss())
}

/// Wirtinger gradient
///
/// ```text
/// ∇_{h_i} f = Σ_j r_j (a_ijᴴ x_i) b_ij
/// ∇_{x_i} f = Σ_j conj(r_j) (b_ijᴴ h_i) a_ij
/// ```
///
/// with the residuals `r_j` shared across nodes. The first-order expansion is
/// `f(z + εΔ) = f(z) + 2ε·Re⟨Δ, ∇f⟩ + O(ε²)`.
pub fn wirtinger_gradient(z: &Iterate, model: &MeasurementModel) -> Result<GradientBlocks> {
    check_iterate(z, model)?;
    Ok(gradient_from(z, model, &residuals(z, model)))
}

/// `g += c · conj(v)`.
fn axpy_conj(g: &mut [C64], c: C64, v: ndarray::ArrayView1<C64>) {
    match v.as_slice() {
        Some(v) => g.iter_mut().zip(v).for_each(|(gk, bk)| *gk += c * bk.conj()),
        None => g.iter_mut().zip(v).for_each(|(gk, bk)| *gk += c * bk.conj()),
    }
}

fn gradient_from(z: &Iterate, model: &MeasurementModel, res: &Residuals) -> GradientBlocks {
    let mut grad = GradientBlocks::zeros_like(z);
    let brows = model.b.rows();
    for j in 0..model.m() {
        if !model.is_active(j) {
            continue;
        }
        let rj = res.r[j];
        for (i, g) in grad.blocks.iter_mut().enumerate() {
            // b_ij = ξ_ij b_j, and row j of B holds conj(b_j)
            let phase = model.access_phase.map_or(C64::new(1.0, 0.0), |p| p[(i, j)]);
            let ch = rj * res.xa[(i, j)].conj() * phase;
            axpy_conj(g.h.as_slice_mut().expect("contiguous block"), ch, brows.row(j));
            let cx = rj.conj() * res.bh[(i, j)];
            let gx = g.x.as_slice_mut().expect("contiguous block");
            match model.a.vector(i, j).as_slice() {
                Some(a) => gx.iter_mut().zip(a).for_each(|(gn, an)| *gn += cx * an),
                None => gx.iter_mut().zip(model.a.vector(i, j)).for_each(|(gn, an)| *gn += cx * an),
            }
        }
    }
    grad
}

/// Closed-form expectation of the gradient over the design ensemble:
/// `∇_{h_i}F = ‖x_i‖² h_i − (x̄_iᴴ x_i) h̄_i`, `∇_{x_i}F = ‖h_i‖² x_i − (h̄_iᴴ h_i) x̄_i`.
pub fn population_gradient(z: &Iterate, truth: &GroundTruth) -> Result<GradientBlocks> {
    if z.s() != truth.s() {
        return Err(Error::Dimension(format!("iterate has {} nodes, truth has {}", z.s(), truth.s())));
    }
    let blocks = z
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let (hb, xb) = (&truth.h[i], &truth.x[i]);
            let cx = inner(xb.view(), b.x.view());
            let ch = inner(hb.view(), b.h.view());
            NodeBlock {
                h: b.h.mapv(|v| v * norm_sqr(b.x.view())) - hb.mapv(|v| v * cx),
                x: b.x.mapv(|v| v * norm_sqr(b.h.view())) - xb.mapv(|v| v * ch),
            }
        })
        .collect();
    Ok(GradientBlocks { blocks })
}

/// One scaled step: `h_i ← h_i − η/‖x_i‖² ∇_{h_i}f`, `x_i ← x_i − η/‖h_i‖² ∇_{x_i}f`.
pub fn wf_step(z: &Iterate, g: &GradientBlocks, eta: f64) -> Result<Iterate> {
    if g.blocks.len() != z.s() {
        return Err(Error::Dimension(format!(
            "gradient has {} nodes, iterate has {}",
            g.blocks.len(),
            z.s()
        )));
    }
    let mut blocks = Vec::with_capacity(z.s());
    for (i, (b, gb)) in z.blocks.iter().zip(&g.blocks).enumerate() {
        let nx = norm_sqr(b.x.view());
        let nh = norm_sqr(b.h.view());
        if nx == 0.0 {
            return Err(Error::DegenerateIterate { node: i, block: "x" });
        }
        if nh == 0.0 {
            return Err(Error::DegenerateIterate { node: i, block: "h" });
        }
        let (sh, sx) = (eta / nx, eta / nh);
        blocks.push(NodeBlock {
            h: &b.h - &gb.h.mapv(|v| v * sh),
            x: &b.x - &gb.x.mapv(|v| v * sx),
        });
    }
    Ok(Iterate { blocks, t: z.t + 1 })
}

/// Wirtinger Hessian of `f` restricted to `x_i`, ordered as `(x_i, conj(x_i))`.
///
/// `f` depends on `x_i` only through `|·|²` of affine functions of `x_iᴴ a_ij`,
/// so the result is `[D, 0; 0, conj(D)]` with `D = Σ_j |b_jᴴ h_i|² a_ij a_ijᴴ`
/// and `f(x_i + εΔ) = f + 2ε Re⟨Δ, ∇_{x_i} f⟩ + ε² ΔᴴDΔ` exactly.
pub fn wirtinger_hessian_x_block(z: &Iterate, model: &MeasurementModel, i: usize) -> Result<Array2<C64>> {
    check_iterate(z, model)?;
    if i >= z.s() {
        return Err(Error::Index { index: i, len: z.s() });
    }
    let n = model.n();
    let h = z.blocks[i].h.view();
    let mut d = Array2::<C64>::zeros((n, n));
    for j in 0..model.m() {
        if !model.is_active(j) {
            continue;
        }
        let w = model.access(i, j, h).norm_sqr();
        if w == 0.0 {
            continue;
        }
        let a = model.a.vector(i, j);
        for p in 0..n {
            let ap = a[p] * w;
            for q in 0..n {
                d[(p, q)] += ap * a[q].conj();
            }
        }
    }
    let mut out = Array2::zeros((2 * n, 2 * n));
    for p in 0..n {
        for q in 0..n {
            out[(p, q)] = d[(p, q)];
            out[(n + p, n + q)] = d[(p, q)].conj();
        }
    }
    Ok(out)
}

/// Mixed block `E = Σ_j b_j b_jᴴ h_i (a_ij a_ijᴴ x_i)ᵀ = ∂(∇_{h_i} f)/∂conj(x_i)ᵀ`,
/// a `K×N` matrix.
pub fn hx_cross_block(z: &Iterate, model: &MeasurementModel, i: usize) -> Result<Array2<C64>> {
    check_iterate(z, model)?;
    if i >= z.s() {
        return Err(Error::Index { index: i, len: z.s() });
    }
    let (k, n) = (model.k(), model.n());
    let blk = &z.blocks[i];
    let mut e = Array2::<C64>::zeros((k, n));
    for j in 0..model.m() {
        if !model.is_active(j) {
            continue;
        }
        let b = model.access_vector(i, j);
        let bh = model.access(i, j, blk.h.view());
        let a = model.a.vector(i, j);
        let ax = inner(a, blk.x.view());
        for p in 0..k {
            let left = b[p] * bh * ax;
            for q in 0..n {
                e[(p, q)] += left * a[q];
            }
        }
    }
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub eta: f64,
    pub max_iters: usize,
    /// Stop once the aligned relative error falls to this level. Non-finite
    /// or `None` disables the check.
    pub rel_tol: Option<f64>,
    /// Truth-free stop on the loss value.
    pub loss_tol: Option<f64>,
    /// Record metrics and call observers every `cadence` iterations.
    pub cadence: usize,
    /// Abort once the loss exceeds this multiple of its initial value.
    pub divergence_factor: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            eta: 0.1,
            max_iters: 500,
            rel_tol: None,
            loss_tol: None,
            cadence: 1,
            divergence_factor: 1e6,
        }
    }
}

impl SolverSettings {
    /// Step size used by default: 0.1 up to ten nodes, then `1/s`.
    pub fn default_eta(s: usize) -> f64 {
        if s <= 10 {
            0.1
        } else {
            1.0 / s as f64
        }
    }

    /// `η = c/s`.
    pub fn scaled_eta(c: f64, s: usize) -> f64 {
        c / s as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::Parameter(format!("step size must be positive, got {}", self.eta)));
        }
        if self.max_iters == 0 {
            return Err(Error::Parameter("max_iters must be at least 1".into()));
        }
        if self.cadence == 0 {
            return Err(Error::Parameter("logging cadence must be at least 1".into()));
        }
        Ok(())
    }

    fn active_rel_tol(&self) -> Option<f64> {
        self.rel_tol.filter(|v| v.is_finite())
    }
}

/// Callback invoked with `(t, z_t, f(z_t))` at the logging cadence.
pub trait Observer {
    fn observe(&mut self, t: usize, z: &Iterate, loss: f64);
}

impl<F: FnMut(usize, &Iterate, f64)> Observer for F {
    fn observe(&mut self, t: usize, z: &Iterate, loss: f64) {
        self(t, z, loss)
    }
}

/// Keeps a copy of every observed iterate.
#[derive(Debug, Default, Clone)]
pub struct IterateRecorder {
    pub iterates: Vec<Iterate>,
}

impl Observer for IterateRecorder {
    fn observe(&mut self, _t: usize, z: &Iterate, _loss: f64) {
        self.iterates.push(z.clone());
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TraceRecord {
    pub t: usize,
    pub loss: f64,
    pub relative_error: f64,
    pub dist: f64,
    pub nodes: Vec<NodeComponents>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum StopReason {
    MaxIters,
    RelativeError,
    Loss,
}

/// Everything logged by one solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrace {
    pub q: Vec<f64>,
    pub kappa: f64,
    pub m: usize,
    pub eta: f64,
    pub records: Vec<TraceRecord>,
    pub final_iterate: Option<Iterate>,
    pub iterations: usize,
    pub stop: StopReason,
}

impl StateTrace {
    pub fn s(&self) -> usize {
        self.q.len()
    }

    pub fn relative_errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.relative_error).collect()
    }

    pub fn final_relative_error(&self) -> Option<f64> {
        self.records.last().map(|r| r.relative_error)
    }
}

fn record(t: usize, loss: f64, z: &Iterate, truth: &GroundTruth) -> Result<TraceRecord> {
    let aligned = metrics::align_to_truth(z, truth)?;
    let omegas: Vec<C64> = aligned.iter().map(|a| a.omega).collect();
    Ok(TraceRecord {
        t,
        loss,
        relative_error: metrics::relative_error_with(z, truth, &omegas)?,
        dist: metrics::dist_with(&aligned, truth),
        nodes: metrics::decompose_with(z, truth, &aligned),
    })
}

/// Runs Wirtinger flow from `z0` on `model`, logging against `truth`.
pub fn run_wf(
    model: &MeasurementModel,
    truth: &GroundTruth,
    z0: &Iterate,
    settings: &SolverSettings,
    observers: &mut [&mut dyn Observer],
) -> Result<StateTrace> {
    settings.validate()?;
    check_iterate(z0, model)?;
    if truth.s() != z0.s() {
        return Err(Error::Dimension(format!("truth has {} nodes, iterate has {}", truth.s(), z0.s())));
    }
    let rel_tol = settings.active_rel_tol();
    let mut z = z0.clone();
    z.t = 0;
    let mut res = residuals(&z, model);
    let mut f = res.loss();
    if !f.is_finite() {
        return Err(Error::Divergence { iteration: 0, loss: f });
    }
    let f0 = f;
    let mut records = Vec::new();
    let mut stop = StopReason::MaxIters;

    let mut t = 0;
    loop {
        let logged = t % settings.cadence == 0 || t == settings.max_iters;
        let rec = if logged || rel_tol.is_some() { Some(record(t, f, &z, truth)?) } else { None };
        if let Some(tol) = rel_tol {
            if rec.as_ref().map_or(false, |r| r.relative_error <= tol) {
                stop = StopReason::RelativeError;
            }
        }
        if settings.loss_tol.map_or(false, |tol| f <= tol) {
            stop = StopReason::Loss;
        }
        let done = stop != StopReason::MaxIters || t == settings.max_iters;
        if logged || done {
            if let Some(r) = rec.or_else(|| record(t, f, &z, truth).ok()) {
                records.push(r);
            }
            for obs in observers.iter_mut() {
                obs.observe(t, &z, f);
            }
        }
        if done {
            break;
        }
        let g = gradient_from(&z, model, &res);
        z = wf_step(&z, &g, settings.eta)?;
        t += 1;
        res = residuals(&z, model);
        f = res.loss();
        if !f.is_finite() || f > settings.divergence_factor * f0.max(f64::MIN_POSITIVE) {
            return Err(Error::Divergence { iteration: t, loss: f });
        }
    }

    Ok(StateTrace {
        q: truth.q.clone(),
        kappa: truth.kappa,
        m: model.m(),
        eta: settings.eta,
        records,
        final_iterate: Some(z),
        iterations: t,
        stop,
    })
}
