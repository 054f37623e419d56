//! Scalar dynamics of the signal/perpendicular components.
//!
//! With `D_h = α_h² + β_h²`, `D_x = α_x² + β_x²` and `‖h̄_i‖ = ‖x̄_i‖ = q`, one
//! step of Wirtinger flow on the population loss gives exactly
//!
//! ```text
//! α_x⁺ = (1−η)α_x + η q² α_h / D_h      β_x⁺ = (1−η)β_x
//! α_h⁺ = (1−η)α_h + η q² α_x / D_x      β_h⁺ = (1−η)β_h
//! ```
//!
//! whose fixed point is `α = q`, `β = 0`. The finite-sample ("approximate")
//! recursion adds perturbations
//!
//! ```text
//! α_h⁺ = (1−η+ηqψ_h/D_x)α_h + η(1−ρ_h) q² α_x / D_x
//! β_h⁺ = (1−η+ηqφ_h/D_x)β_h
//! ```
//!
//! and symmetrically for `x` with `D_h`.

use crate::metrics::NodeComponents;
use crate::solver::{StateTrace, StopReason, TraceRecord};
use crate::{Error, Result, C64};

/// Real scalar state of one node.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SENode {
    pub alpha_h: f64,
    pub beta_h: f64,
    pub alpha_x: f64,
    pub beta_x: f64,
    pub q: f64,
}

impl SENode {
    fn d_h(&self) -> f64 {
        self.alpha_h * self.alpha_h + self.beta_h * self.beta_h
    }

    fn d_x(&self) -> f64 {
        self.alpha_x * self.alpha_x + self.beta_x * self.beta_x
    }

    /// Magnitudes of a measured decomposition.
    pub fn from_components(c: &NodeComponents, q: f64) -> Self {
        SENode {
            alpha_h: c.alpha_h.norm(),
            beta_h: c.beta_h,
            alpha_x: c.alpha_x.norm(),
            beta_x: c.beta_x,
            q,
        }
    }

    fn components(&self) -> NodeComponents {
        NodeComponents {
            alpha_h: C64::new(self.alpha_h, 0.0),
            beta_h: self.beta_h,
            alpha_x: C64::new(self.alpha_x, 0.0),
            beta_x: self.beta_x,
            rmse_x: self.beta_x / self.d_x().sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SEState {
    pub nodes: Vec<SENode>,
    pub eta: f64,
}

impl SEState {
    pub fn new(nodes: Vec<SENode>, eta: f64) -> Result<Self> {
        let state = SEState { nodes, eta };
        state.validate()?;
        Ok(state)
    }

    /// Every node starts from the same `(α, β)` on both blocks.
    pub fn uniform(q: &[f64], alpha: f64, beta: f64, eta: f64) -> Result<Self> {
        let nodes = q
            .iter()
            .map(|&q| SENode { alpha_h: alpha, beta_h: beta, alpha_x: alpha, beta_x: beta, q })
            .collect();
        SEState::new(nodes, eta)
    }

    pub fn from_record(rec: &TraceRecord, q: &[f64], eta: f64) -> Result<Self> {
        if rec.nodes.len() != q.len() {
            return Err(Error::Dimension(format!("record has {} nodes, q has {}", rec.nodes.len(), q.len())));
        }
        let nodes = rec.nodes.iter().zip(q).map(|(c, &q)| SENode::from_components(c, q)).collect();
        SEState::new(nodes, eta)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Parameter(format!("η must lie in [0, 1], got {}", self.eta)));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !(n.beta_h >= 0.0 && n.beta_x >= 0.0) {
                return Err(Error::Parameter(format!("node {i}: β components must be non-negative")));
            }
        }
        Ok(())
    }
}

/// Perturbation terms injected into one node's step.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct Perturbation {
    pub psi_h: f64,
    pub psi_x: f64,
    pub phi_h: f64,
    pub phi_x: f64,
    pub rho_h: f64,
    pub rho_x: f64,
}

fn denominators(i: usize, n: &SENode) -> Result<(f64, f64)> {
    let (dh, dx) = (n.d_h(), n.d_x());
    if dh == 0.0 {
        return Err(Error::DegenerateIterate { node: i, block: "h" });
    }
    if dx == 0.0 {
        return Err(Error::DegenerateIterate { node: i, block: "x" });
    }
    Ok((dh, dx))
}

/// One synchronous step of the perturbed recursion.
pub fn approximate_se_step(state: &SEState, perturbations: &[Perturbation]) -> Result<SEState> {
    if perturbations.len() != state.nodes.len() {
        return Err(Error::Dimension("one perturbation per node required".into()));
    }
    let eta = state.eta;
    let nodes = state
        .nodes
        .iter()
        .zip(perturbations)
        .enumerate()
        .map(|(i, (n, p))| {
            let (dh, dx) = denominators(i, n)?;
            let q = n.q;
            Ok(SENode {
                alpha_h: (1.0 - eta + eta * q * p.psi_h / dx) * n.alpha_h
                    + eta * (1.0 - p.rho_h) * q * q * n.alpha_x / dx,
                beta_h: (1.0 - eta + eta * q * p.phi_h / dx) * n.beta_h,
                alpha_x: (1.0 - eta + eta * q * p.psi_x / dh) * n.alpha_x
                    + eta * (1.0 - p.rho_x) * q * q * n.alpha_h / dh,
                beta_x: (1.0 - eta + eta * q * p.phi_x / dh) * n.beta_x,
                q,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SEState { nodes, eta })
}

/// One step of the population recursion.
pub fn population_se_step(state: &SEState) -> Result<SEState> {
    approximate_se_step(state, &vec![Perturbation::default(); state.nodes.len()])
}

/// Runs the population recursion for `steps` steps and packages it as a
/// trace so that [`detect_stages`] applies. `m` only feeds the `T_1`
/// threshold; loss and relative error are not defined here and are NaN.
pub fn population_trace(init: &SEState, steps: usize, m: usize) -> Result<StateTrace> {
    let q: Vec<f64> = init.nodes.iter().map(|n| n.q).collect();
    let (qmax, qmin) = q.iter().fold((f64::MIN, f64::MAX), |(a, b), &v| (a.max(v), b.min(v)));
    let mut state = init.clone();
    let mut records = Vec::with_capacity(steps + 1);
    for t in 0..=steps {
        if t > 0 {
            state = population_se_step(&state)?;
        }
        let dist2: f64 = state
            .nodes
            .iter()
            .map(|n| {
                ((n.alpha_h - n.q).powi(2) + n.beta_h.powi(2) + (n.alpha_x - n.q).powi(2) + n.beta_x.powi(2))
                    / (2.0 * n.q * n.q)
            })
            .sum();
        records.push(TraceRecord {
            t,
            loss: f64::NAN,
            relative_error: f64::NAN,
            dist: dist2.sqrt(),
            nodes: state.nodes.iter().map(SENode::components).collect(),
        });
    }
    Ok(StateTrace {
        q,
        kappa: qmax / qmin,
        m,
        eta: init.eta,
        records,
        final_iterate: None,
        iterations: steps,
        stop: StopReason::MaxIters,
    })
}

/// Perturbations recovered from one measured step `t → t+1` of one node.
///
/// `delta_*` is the deviation of the measured `|α⁺|` from the population
/// prediction; `psi_*` is that deviation attributed to the self term given
/// the stated `rho_*`. Entries whose inversion denominator vanishes are `None`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct StepPerturbation {
    pub t: usize,
    pub node: usize,
    pub delta_h: Option<f64>,
    pub delta_x: Option<f64>,
    pub psi_h: Option<f64>,
    pub psi_x: Option<f64>,
    pub phi_h: Option<f64>,
    pub phi_x: Option<f64>,
    pub rho_h: f64,
    pub rho_x: f64,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct PerturbationSeries {
    pub entries: Vec<StepPerturbation>,
}

impl PerturbationSeries {
    /// Largest `|φ_x|` over steps starting at `t ≤ t_max`.
    pub fn max_abs_phi_x(&self, t_max: usize) -> Option<f64> {
        self.entries
            .iter()
            .filter(|e| e.t <= t_max)
            .filter_map(|e| e.phi_x)
            .map(f64::abs)
            .reduce(f64::max)
    }
}

const TINY: f64 = 1e-300;

fn guarded(num: f64, den: f64) -> Option<f64> {
    let v = num / den;
    (den.abs() > TINY && v.is_finite()).then_some(v)
}

/// Inverts one step of the perturbed recursion for a known `ρ`.
pub fn invert_step(prev: &SENode, next: &SENode, eta: f64, rho_h: f64, rho_x: f64) -> (Option<f64>, Option<f64>, Option<f64>, Option<f64>, Option<f64>, Option<f64>) {
    let q = prev.q;
    let (dh, dx) = (prev.d_h(), prev.d_x());
    let pred_h = (1.0 - eta) * prev.alpha_h + eta * q * q * prev.alpha_x / dx;
    let pred_x = (1.0 - eta) * prev.alpha_x + eta * q * q * prev.alpha_h / dh;
    let delta_h = (dx > TINY).then(|| next.alpha_h - pred_h).filter(|v| v.is_finite());
    let delta_x = (dh > TINY).then(|| next.alpha_x - pred_x).filter(|v| v.is_finite());
    let psi_h = delta_h.and_then(|d| guarded((d + eta * rho_h * q * q * prev.alpha_x / dx) * dx, eta * q * prev.alpha_h));
    let psi_x = delta_x.and_then(|d| guarded((d + eta * rho_x * q * q * prev.alpha_h / dh) * dh, eta * q * prev.alpha_x));
    let phi_h = guarded((next.beta_h / prev.beta_h - (1.0 - eta)) * dx, eta * q).filter(|_| prev.beta_h > TINY);
    let phi_x = guarded((next.beta_x / prev.beta_x - (1.0 - eta)) * dh, eta * q).filter(|_| prev.beta_x > TINY);
    (delta_h, delta_x, psi_h, psi_x, phi_h, phi_x)
}

/// Perturbation terms along a trace, under the convention `ρ ≡ 0`.
///
/// Only pairs of records exactly one iteration apart are inverted.
pub fn extract_perturbations(trace: &StateTrace) -> Result<PerturbationSeries> {
    let mut entries = Vec::new();
    for pair in trace.records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.t != a.t + 1 {
            continue;
        }
        if a.nodes.len() != trace.s() || b.nodes.len() != trace.s() {
            return Err(Error::Dimension("trace record node count does not match q".into()));
        }
        for i in 0..trace.s() {
            let prev = SENode::from_components(&a.nodes[i], trace.q[i]);
            let next = SENode::from_components(&b.nodes[i], trace.q[i]);
            let (delta_h, delta_x, psi_h, psi_x, phi_h, phi_x) = invert_step(&prev, &next, trace.eta, 0.0, 0.0);
            entries.push(StepPerturbation {
                t: a.t,
                node: i,
                delta_h,
                delta_x,
                psi_h,
                psi_x,
                phi_h,
                phi_x,
                rho_h: 0.0,
                rho_x: 0.0,
            });
        }
    }
    Ok(PerturbationSeries { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StageThresholds {
    pub gamma: f64,
    /// `T_1` fires once `min_i |α|/q_i ≥ t1_threshold / log⁵ m`.
    pub t1_threshold: f64,
    /// `T_2` fires once `min_i |α|/q_i > t2_threshold`.
    pub t2_threshold: f64,
}

impl Default for StageThresholds {
    fn default() -> Self {
        StageThresholds { gamma: 0.1, t1_threshold: 1.0, t2_threshold: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StageReport {
    pub t_gamma: Option<usize>,
    pub t1: Option<usize>,
    pub t2: Option<usize>,
    pub thresholds: StageThresholds,
    /// Least-squares slope of `log(|α_{h_i}|/β_{h_i})` per iteration over `[0, T_γ]`.
    pub growth_h: Vec<Option<f64>>,
    pub growth_x: Vec<Option<f64>>,
}

impl StageReport {
    /// `T_1 ≤ T_2 ≤ T_γ`, with every index present.
    pub fn ordered(&self) -> bool {
        matches!((self.t1, self.t2, self.t_gamma), (Some(a), Some(b), Some(c)) if a <= b && b <= c)
    }
}

/// Least-squares slope of `y` against `x`; `None` with fewer than two distinct `x`.
pub fn ls_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Scans a trace for `T_γ`, `T_1`, `T_2` and fits the Stage-I ratio growth.
///
/// When `T_γ` is never reached the growth fit uses the whole trace.
pub fn detect_stages(trace: &StateTrace, th: &StageThresholds) -> StageReport {
    let s = trace.s();
    let bound = th.gamma / (2.0 * trace.kappa * (s as f64).sqrt());
    let log5 = (trace.m as f64).ln().powi(5);
    let t1_level = th.t1_threshold / log5;

    let mut t_gamma = None;
    let mut t1 = None;
    let mut t2 = None;
    for rec in &trace.records {
        if rec.nodes.len() != s {
            continue;
        }
        let ratio = |f: fn(&NodeComponents) -> f64| {
            rec.nodes.iter().zip(&trace.q).map(|(c, q)| f(c) / q).fold(f64::INFINITY, f64::min)
        };
        let rh = ratio(|c| c.alpha_h.norm());
        let rx = ratio(|c| c.alpha_x.norm());
        if t1.is_none() && rh >= t1_level && rx >= t1_level {
            t1 = Some(rec.t);
        }
        if t2.is_none() && rh > th.t2_threshold && rx > th.t2_threshold {
            t2 = Some(rec.t);
        }
        if t_gamma.is_none() {
            let close = rec.nodes.iter().zip(&trace.q).all(|(c, &q)| {
                (c.alpha_h.norm() - q).abs() <= bound
                    && c.beta_h <= bound
                    && (c.alpha_x.norm() - q).abs() <= bound
                    && c.beta_x <= bound
            });
            if close {
                t_gamma = Some(rec.t);
            }
        }
    }

    let horizon = t_gamma.unwrap_or(usize::MAX);
    let fit = |f: fn(&NodeComponents) -> (f64, f64), i: usize| {
        let pts: Vec<(f64, f64)> = trace
            .records
            .iter()
            .filter(|r| r.t <= horizon && r.nodes.len() == s)
            .filter_map(|r| {
                let (a, b) = f(&r.nodes[i]);
                let v = (a / b).ln();
                v.is_finite().then_some((r.t as f64, v))
            })
            .collect();
        ls_slope(&pts)
    };
    let growth_h = (0..s).map(|i| fit(|c| (c.alpha_h.norm(), c.beta_h), i)).collect();
    let growth_x = (0..s).map(|i| fit(|c| (c.alpha_x.norm(), c.beta_x), i)).collect();

    StageReport { t_gamma, t1, t2, thresholds: *th, growth_h, growth_x }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn fixed_point_is_stationary() {
        let st = SEState::new(
            vec![
                SENode { alpha_h: 1.0, beta_h: 0.0, alpha_x: 1.0, beta_x: 0.0, q: 1.0 },
                SENode { alpha_h: 0.3, beta_h: 0.0, alpha_x: 0.3, beta_x: 0.0, q: 0.3 },
            ],
            0.1,
        )
        .unwrap();
        let next = population_se_step(&st).unwrap();
        for (a, b) in st.nodes.iter().zip(&next.nodes) {
            assert!(close(a.alpha_h, b.alpha_h, 1e-14) && close(a.alpha_x, b.alpha_x, 1e-14));
            assert_eq!(b.beta_h, 0.0);
        }
    }

    #[test]
    fn beta_contracts_geometrically() {
        let mut st = SEState::uniform(&[1.0], 0.01, 1.0, 0.1).unwrap();
        for _ in 0..10 {
            st = population_se_step(&st).unwrap();
        }
        assert!(close(st.nodes[0].beta_x, 0.348_678_440_1, 1e-10));
        assert!(close(st.nodes[0].beta_h, 0.9f64.powi(10), 1e-15));
    }

    #[test]
    fn zero_step_is_identity() {
        let st = SEState::uniform(&[0.7, 0.2], 0.3, 0.9, 0.0).unwrap();
        assert_eq!(population_se_step(&st).unwrap(), st);
    }

    #[test]
    fn hand_step() {
        // α_x⁺ = 0.9·0.5 + 0.1·1·0.5/(0.25+1) = 0.49
        let st = SEState::uniform(&[1.0], 0.5, 1.0, 0.1).unwrap();
        let n = population_se_step(&st).unwrap().nodes[0];
        assert!(close(n.alpha_x, 0.49, 1e-15) && close(n.alpha_h, 0.49, 1e-15));
        assert!(close(n.beta_x, 0.9, 1e-15));
    }

    #[test]
    fn matches_population_gradient_step() {
        // h = (α_h/q)h̄ + β_h u, x = (α_x/q)x̄ + β_x v with unit u ⊥ h̄, v ⊥ x̄
        use crate::ensemble::sample_ground_truth;
        use crate::linalg::{inner, norm};
        use crate::rng::seeded;
        use crate::solver::{population_gradient, wf_step, Iterate, NodeBlock};
        let q = 0.6;
        let truth = sample_ground_truth(1, 5, 4, &[q], &mut seeded(3)).unwrap();
        let (hb, xb) = (&truth.h[0], &truth.x[0]);
        let perp = |v: &ndarray::Array1<C64>, seed: u64| {
            let mut rng = seeded(seed);
            let w: ndarray::Array1<C64> = (0..v.len()).map(|_| crate::rng::complex_normal(&mut rng, 1.0)).collect();
            let c = inner(v.view(), w.view()) / (q * q);
            let w = &w - &v.mapv(|a| a * c);
            let n = norm(w.view());
            w.mapv(|a| a / n)
        };
        let (u, v) = (perp(hb, 4), perp(xb, 5));
        let st = SEState::new(vec![SENode { alpha_h: 0.2, beta_h: 0.9, alpha_x: 0.35, beta_x: 0.7, q }], 0.1).unwrap();
        let n0 = st.nodes[0];
        let z = Iterate::new(vec![NodeBlock {
            h: &hb.mapv(|a| a * (n0.alpha_h / q)) + &u.mapv(|a| a * n0.beta_h),
            x: &xb.mapv(|a| a * (n0.alpha_x / q)) + &v.mapv(|a| a * n0.beta_x),
        }]);
        let z1 = wf_step(&z, &population_gradient(&z, &truth).unwrap(), 0.1).unwrap();
        let want = population_se_step(&st).unwrap().nodes[0];
        let b = &z1.blocks[0];
        let ah = inner(hb.view(), b.h.view()) / q;
        let ax = inner(xb.view(), b.x.view()) / q;
        let bh = norm((&b.h - &hb.mapv(|c| c * (ah / q))).view());
        let bx = norm((&b.x - &xb.mapv(|c| c * (ax / q))).view());
        assert!((ah - C64::new(want.alpha_h, 0.0)).norm() < 1e-14);
        assert!((ax - C64::new(want.alpha_x, 0.0)).norm() < 1e-14);
        assert!(close(bh, want.beta_h, 1e-14) && close(bx, want.beta_x, 1e-14));
    }

    #[test]
    fn degenerate_and_invalid_states() {
        let st = SEState::uniform(&[1.0], 0.0, 0.0, 0.1).unwrap();
        assert!(matches!(population_se_step(&st), Err(Error::DegenerateIterate { .. })));
        assert!(SEState::uniform(&[1.0], 0.5, -1.0, 0.1).is_err());
        assert!(SEState::uniform(&[1.0], 0.5, 1.0, 1.5).is_err());
    }

    #[test]
    fn population_trace_has_no_perturbation() {
        let init = SEState::uniform(&[1.0, 0.5], 0.05, 1.0, 0.1).unwrap();
        let trace = population_trace(&init, 60, 400).unwrap();
        let series = extract_perturbations(&trace).unwrap();
        assert_eq!(series.entries.len(), 60 * 2);
        for e in &series.entries {
            for v in [e.delta_h, e.delta_x, e.psi_h, e.psi_x, e.phi_h, e.phi_x] {
                assert!(v.unwrap().abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn injected_phi_round_trips() {
        let st = SEState::uniform(&[0.8], 0.2, 0.7, 0.1).unwrap();
        let p = Perturbation { phi_x: 0.01, phi_h: -0.02, ..Default::default() };
        let next = approximate_se_step(&st, &[p]).unwrap();
        let (_, _, _, _, phi_h, phi_x) = invert_step(&st.nodes[0], &next.nodes[0], 0.1, 0.0, 0.0);
        assert!(close(phi_x.unwrap(), 0.01, 1e-12));
        assert!(close(phi_h.unwrap(), -0.02, 1e-12));
    }

    #[test]
    fn injected_psi_and_rho_round_trip_given_rho() {
        let st = SEState::new(
            vec![SENode { alpha_h: 0.3, beta_h: 0.8, alpha_x: 0.25, beta_x: 0.9, q: 0.9 }],
            0.2,
        )
        .unwrap();
        let p = Perturbation { psi_h: 0.03, psi_x: -0.04, phi_h: 0.01, phi_x: 0.02, rho_h: 0.05, rho_x: -0.06 };
        let next = approximate_se_step(&st, &[p]).unwrap();
        let (_, _, psi_h, psi_x, phi_h, phi_x) = invert_step(&st.nodes[0], &next.nodes[0], 0.2, 0.05, -0.06);
        assert!(close(psi_h.unwrap(), 0.03, 1e-12));
        assert!(close(psi_x.unwrap(), -0.04, 1e-12));
        assert!(close(phi_h.unwrap(), 0.01, 1e-12));
        assert!(close(phi_x.unwrap(), 0.02, 1e-12));
    }

    #[test]
    fn zero_beta_leaves_phi_absent() {
        let st = SEState::uniform(&[1.0], 1.0, 0.0, 0.1).unwrap();
        let next = population_se_step(&st).unwrap();
        let (_, _, _, _, phi_h, phi_x) = invert_step(&st.nodes[0], &next.nodes[0], 0.1, 0.0, 0.0);
        assert!(phi_h.is_none() && phi_x.is_none());
    }

    #[test]
    fn population_stages_are_ordered() {
        let k = 8.0f64;
        let a0 = 1.0 / (k * k.ln()).sqrt();
        let init = SEState::uniform(&[1.0], a0, 1.0, 0.1).unwrap();
        let trace = population_trace(&init, 400, 400).unwrap();
        let rep = detect_stages(&trace, &StageThresholds::default());
        assert!(rep.ordered(), "{rep:?}");
        assert!(rep.growth_h[0].unwrap() > 0.0);
    }

    #[test]
    fn huge_gamma_fires_immediately() {
        let init = SEState::uniform(&[1.0, 0.4], 0.01, 1.0, 0.1).unwrap();
        let trace = population_trace(&init, 5, 100).unwrap();
        let rep = detect_stages(&trace, &StageThresholds { gamma: 1e6, ..Default::default() });
        assert_eq!(rep.t_gamma, Some(0));
        assert!(rep.growth_h.iter().all(Option::is_none));
    }

    #[test]
    fn geometric_ratio_growth_is_fitted() {
        let eta: f64 = 0.1;
        let c: f64 = 0.5;
        let rate = 1.0 + c * eta;
        let records = (0..=40)
            .map(|t| {
                let alpha = 0.01 * rate.powi(t);
                TraceRecord {
                    t: t as usize,
                    loss: f64::NAN,
                    relative_error: f64::NAN,
                    dist: f64::NAN,
                    nodes: vec![NodeComponents {
                        alpha_h: C64::new(0.0, alpha),
                        beta_h: 1.0,
                        alpha_x: C64::new(alpha, 0.0),
                        beta_x: 1.0,
                        rmse_x: f64::NAN,
                    }],
                }
            })
            .collect();
        let trace = StateTrace {
            q: vec![1.0],
            kappa: 1.0,
            m: 100,
            eta,
            records,
            final_iterate: None,
            iterations: 40,
            stop: StopReason::MaxIters,
        };
        let rep = detect_stages(&trace, &StageThresholds::default());
        assert_eq!(rep.t_gamma, None);
        let want = rate.ln();
        assert!((rep.growth_h[0].unwrap() - want).abs() <= 0.05 * want);
        assert!((rep.growth_x[0].unwrap() - want).abs() <= 0.05 * want);
    }

    #[test]
    fn slope_cases() {
        assert_eq!(ls_slope(&[(0.0, 1.0)]), None);
        assert_eq!(ls_slope(&[(1.0, 1.0), (1.0, 2.0)]), None);
        assert!(close(ls_slope(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]).unwrap(), 2.0, 1e-15));
    }
}
