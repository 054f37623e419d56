//! Leave-one-out and random-sign auxiliary runs, and the quantities used to
//! check that Wirtinger flow iterates stay nearly independent of each sample.
//!
//! Typical use: [`canonicalize`] an instance so that `x̄_i = q_i e₁`, draw
//! [`SignFlips`], run the base sequence plus auxiliary sequences from one
//! shared start, then [`measure_hypotheses`].

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::ensemble::{DesignTensorA, GroundTruth, MeasurementModel, ProblemInstance};
use crate::linalg::{inner, norm, norm_sqr};
use crate::metrics::{align_pair, align_to_truth, decompose, incoherence};
use crate::rng::unit_phase;
use crate::solver::{run_wf, Iterate, NodeBlock, Observer, SolverSettings, StateTrace};
use crate::{Error, Result, C64};

/// Unitary `U = e^{−iφ}H` with `H` a Householder reflector and `U v = e₁`
/// for a unit vector `v` whose first entry has phase `φ`.
pub fn householder_to_e1(v: &Array1<C64>) -> Result<Array2<C64>> {
    let n = v.len();
    let nv = norm(v.view());
    if n == 0 || nv == 0.0 {
        return Err(Error::DegenerateAlignment("cannot rotate a zero vector onto e₁".into()));
    }
    let v = v.mapv(|c| c / nv);
    let phase = if v[0].norm() > 0.0 { v[0] / v[0].norm() } else { C64::new(1.0, 0.0) };
    let mut w = v.clone();
    w[0] -= phase;
    let ww = norm_sqr(w.view());
    let mut u = Array2::<C64>::eye(n);
    if ww > 1e-30 {
        for p in 0..n {
            for q in 0..n {
                u[(p, q)] -= w[p] * w[q].conj() * (2.0 / ww);
            }
        }
    }
    Ok(u.mapv(|c| c * phase.conj()))
}

/// Rotates each node's data frame so that `x̄_i = q_i e₁`, applying the same
/// unitary to every `a_ij`. Measurements are kept verbatim: `x̄ᴴa` is unchanged.
pub fn canonicalize(inst: &ProblemInstance) -> Result<ProblemInstance> {
    let (s, m, n) = (inst.a.s(), inst.a.m(), inst.a.n());
    let mut a = inst.a.data().clone();
    let mut x = Vec::with_capacity(s);
    for i in 0..s {
        let u = householder_to_e1(&inst.truth.x[i])?;
        for j in 0..m {
            let rotated = u.dot(&inst.a.vector(i, j));
            a.slice_mut(ndarray::s![i, j, ..]).assign(&rotated);
        }
        let mut xi = Array1::<C64>::zeros(n);
        xi[0] = C64::new(inst.truth.q[i], 0.0);
        x.push(xi);
    }
    let truth = GroundTruth::from_vectors(inst.truth.h.clone(), x)?;
    Ok(ProblemInstance {
        dims: inst.dims,
        b: inst.b.clone(),
        a: DesignTensorA::from_array(a),
        truth,
        measurements: inst.measurements.clone(),
        seed: inst.seed,
    })
}

/// Unit-modulus scalars `ξ_ij`, one per node and sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SignFlips {
    pub xi: Array2<C64>,
}

impl SignFlips {
    pub fn sample<R: Rng + ?Sized>(s: usize, m: usize, rng: &mut R) -> Self {
        let mut xi = Array2::zeros((s, m));
        for v in xi.iter_mut() {
            *v = unit_phase(rng);
        }
        SignFlips { xi }
    }

    pub fn identity(s: usize, m: usize) -> Self {
        SignFlips { xi: Array2::from_elem((s, m), C64::new(1.0, 0.0)) }
    }
}

/// Design ensemble with `a_ij,1 ↦ ξ_ij a_ij,1` and `b_ij = ξ_ij b_j`.
#[derive(Debug, Clone)]
pub struct SignFlippedEnsemble {
    pub a: DesignTensorA,
    pub flips: SignFlips,
}

impl SignFlippedEnsemble {
    /// The sign-flipped loss over the original measurements.
    pub fn model<'a>(&'a self, inst: &'a ProblemInstance) -> MeasurementModel<'a> {
        MeasurementModel {
            b: &inst.b,
            a: &self.a,
            access_phase: Some(&self.flips.xi),
            y: &inst.measurements.y,
            excluded: None,
        }
    }
}

pub fn sign_flip_with(inst: &ProblemInstance, flips: SignFlips) -> Result<SignFlippedEnsemble> {
    let (s, m) = (inst.a.s(), inst.a.m());
    if flips.xi.dim() != (s, m) {
        return Err(Error::Dimension(format!("flips are {:?}, expected ({s}, {m})", flips.xi.dim())));
    }
    let mut a = inst.a.data().clone();
    for i in 0..s {
        for j in 0..m {
            a[(i, j, 0)] *= flips.xi[(i, j)];
        }
    }
    Ok(SignFlippedEnsemble { a: DesignTensorA::from_array(a), flips })
}

pub fn sign_flip_ensemble<R: Rng + ?Sized>(inst: &ProblemInstance, rng: &mut R) -> Result<SignFlippedEnsemble> {
    sign_flip_with(inst, SignFlips::sample(inst.a.s(), inst.a.m(), rng))
}

/// `max_{i,j} |b_ijᴴ h̄_i x̄_iᴴ a_ij − b_jᴴ h̄_i x̄_iᴴ a_ij|` between two models
/// sharing the ground truth.
pub fn measurement_gap(original: &MeasurementModel, other: &MeasurementModel, truth: &GroundTruth) -> Result<f64> {
    original.check()?;
    other.check()?;
    if original.s() != other.s() || original.m() != other.m() || truth.s() != original.s() {
        return Err(Error::Dimension("models differ in shape".into()));
    }
    let mut worst: f64 = 0.0;
    for i in 0..original.s() {
        let (h, x) = (truth.h[i].view(), truth.x[i].view());
        for j in 0..original.m() {
            let y0 = original.access(i, j, h) * inner(x, original.a.vector(i, j));
            let y1 = other.access(i, j, h) * inner(x, other.a.vector(i, j));
            worst = worst.max((y0 - y1).norm());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum AuxiliaryKind {
    LeaveOneOut(usize),
    Sign,
    SignLeaveOneOut(usize),
}

/// A solver run together with the iterates seen at the logging cadence.
#[derive(Debug, Clone)]
pub struct RecordedRun {
    pub trace: StateTrace,
    pub iterates: Vec<Iterate>,
}

#[derive(Debug, Clone)]
pub struct AuxiliaryRun {
    pub kind: AuxiliaryKind,
    pub run: RecordedRun,
}

#[derive(Default)]
struct Keep(Vec<Iterate>);

impl Observer for Keep {
    fn observe(&mut self, _t: usize, z: &Iterate, _loss: f64) {
        self.0.push(z.clone());
    }
}

/// Runs WF and keeps every logged iterate. Tolerance stops are disabled so
/// that runs sharing `z0` follow the same schedule.
pub fn recorded_run(
    model: &MeasurementModel,
    truth: &GroundTruth,
    z0: &Iterate,
    settings: &SolverSettings,
) -> Result<RecordedRun> {
    let settings = SolverSettings { rel_tol: None, loss_tol: None, ..*settings };
    let mut keep = Keep::default();
    let trace = run_wf(model, truth, z0, &settings, &mut [&mut keep])?;
    Ok(RecordedRun { trace, iterates: keep.0 })
}

/// WF on the loss with sample `l` (0-based) removed, from the shared `z0`.
pub fn leave_one_out_run(
    model: &MeasurementModel,
    truth: &GroundTruth,
    l: usize,
    z0: &Iterate,
    settings: &SolverSettings,
) -> Result<AuxiliaryRun> {
    let run = recorded_run(&model.without_sample(l)?, truth, z0, settings)?;
    Ok(AuxiliaryRun { kind: AuxiliaryKind::LeaveOneOut(l), run })
}

pub fn sign_run(
    inst: &ProblemInstance,
    ens: &SignFlippedEnsemble,
    z0: &Iterate,
    settings: &SolverSettings,
) -> Result<AuxiliaryRun> {
    let run = recorded_run(&ens.model(inst), &inst.truth, z0, settings)?;
    Ok(AuxiliaryRun { kind: AuxiliaryKind::Sign, run })
}

/// Sign-flipped loss with sample `l` removed.
pub fn sign_leave_one_out_run(
    inst: &ProblemInstance,
    ens: &SignFlippedEnsemble,
    l: usize,
    z0: &Iterate,
    settings: &SolverSettings,
) -> Result<AuxiliaryRun> {
    let model = ens.model(inst).without_sample(l)?;
    let run = recorded_run(&model, &inst.truth, z0, settings)?;
    Ok(AuxiliaryRun { kind: AuxiliaryKind::SignLeaveOneOut(l), run })
}

/// `min(m, count)` distinct sample indices drawn uniformly, sorted.
pub fn sample_loo_indices<R: Rng + ?Sized>(m: usize, count: usize, rng: &mut R) -> Vec<usize> {
    let mut idx = rand::seq::index::sample(rng, m, count.min(m)).into_vec();
    idx.sort_unstable();
    idx
}

/// A measured quantity next to the rate it is compared against (constants 1).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Checked {
    pub value: Option<f64>,
    pub scale: f64,
}

impl Checked {
    fn new(value: Option<f64>, scale: f64) -> Self {
        Checked { value: value.filter(|v| v.is_finite()), scale }
    }
}

/// Hypothesis quantities for one node at one iteration.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct HypothesisRow {
    pub t: usize,
    pub node: usize,
    /// `max_l dist(z_i^{t,(l)}, z̃_i^t)`.
    pub loo_dist: Checked,
    /// `max_l |h̄ᴴ(ĥ^{(l)} − h̃)| / ‖h̄‖`.
    pub loo_signal_h: Checked,
    /// `max_l |x̄ᴴ(x̂^{(l)} − x̃)| / ‖x̄‖`, the first coordinate after canonicalization.
    pub loo_signal_x: Checked,
    /// `‖ȟ^{sgn} − h̃‖`.
    pub sign_h: Checked,
    pub sign_x: Checked,
    /// `max_l ‖h̃ − ĥ^{(l)} − ȟ^{sgn} + ĥ^{sgn,(l)}‖`.
    pub double_h: Checked,
    pub double_x: Checked,
    pub norm_h: f64,
    pub norm_x: f64,
    /// `‖h_i‖` against `5|α_h|√(log⁵ m)`.
    pub relative_norm_h: Checked,
    pub relative_norm_x: Checked,
    /// `max_l |a_ilᴴ x̃_i| / ‖x̃_i‖` against `√(log m)`.
    pub incoherence_a: Checked,
    /// `max_l |b_lᴴ h̃_i| / ‖h̃_i‖` against `μ log² m / √m`.
    pub incoherence_b: Checked,
    /// `max_l |a_il^{sgn,H} x̌_i^{sgn}| / ‖x̌_i^{sgn}‖`.
    pub incoherence_a_sign: Checked,
    /// `max_l |b_il^{sgn,H} ȟ_i^{sgn}| / ‖ȟ_i^{sgn}‖`.
    pub incoherence_b_sign: Checked,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct HypothesisReport {
    pub mu: f64,
    pub rows: Vec<HypothesisRow>,
}

fn at_t(run: &RecordedRun, t: usize) -> Option<&Iterate> {
    run.iterates.iter().find(|z| z.t == t)
}

fn gauged(b: &NodeBlock, w: C64) -> NodeBlock {
    NodeBlock { h: b.h.mapv(|v| v / w.conj()), x: b.x.mapv(|v| v * w) }
}

/// `b` aligned onto `target`, or `None` when the alignment degenerates.
fn aligned_onto(b: &NodeBlock, target: &NodeBlock) -> Option<(NodeBlock, f64)> {
    let a = align_pair(&b.h, &b.x, &target.h, &target.x).ok()?;
    Some((gauged(b, a.omega), a.cost))
}

fn diff_norm(a: &Array1<C64>, b: &Array1<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u - v).norm_sqr()).sum::<f64>().sqrt()
}

fn max_opt(it: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut out: Option<f64> = None;
    for v in it {
        let v = v?;
        out = Some(out.map_or(v, |o| o.max(v)));
    }
    out
}

/// Evaluates the leave-one-out / random-sign hypotheses at every iteration
/// logged by all runs, against the comparison scales with constants set to 1.
///
/// `sign` must be the ensemble the sign runs used; it feeds the sign-flipped
/// incoherence maxima.
pub fn measure_hypotheses(
    base: &RecordedRun,
    aux: &[AuxiliaryRun],
    inst: &ProblemInstance,
    sign: Option<&SignFlippedEnsemble>,
) -> Result<HypothesisReport> {
    let truth = &inst.truth;
    let (s, k, n, m) = (inst.dims.s, inst.dims.k, inst.dims.n, inst.dims.m);
    let mu = incoherence(truth, &inst.b)?;
    let logm = (m as f64).ln();
    let kappa = truth.kappa;
    let sf = s as f64;

    let loo: Vec<(usize, &RecordedRun)> = aux
        .iter()
        .filter_map(|a| match a.kind {
            AuxiliaryKind::LeaveOneOut(l) => Some((l, &a.run)),
            _ => None,
        })
        .collect();
    let sgn_loo: Vec<(usize, &RecordedRun)> = aux
        .iter()
        .filter_map(|a| match a.kind {
            AuxiliaryKind::SignLeaveOneOut(l) => Some((l, &a.run)),
            _ => None,
        })
        .collect();
    let sgn = aux.iter().find(|a| a.kind == AuxiliaryKind::Sign).map(|a| &a.run);

    let mut rows = Vec::new();
    for z in &base.iterates {
        let t = z.t;
        let growth = (1.0 + 1.0 / (sf * logm)).powi(t as i32);
        let Ok(omegas) = align_to_truth(z, truth) else { continue };
        let Ok(parts) = decompose(z, truth) else { continue };
        let sgn_t = sgn.and_then(|r| at_t(r, t));

        for i in 0..s {
            let tilde = gauged(&z.blocks[i], omegas[i].omega);
            let c = parts[i];
            let (ah, ax) = (c.alpha_h.norm(), c.alpha_x.norm());
            let hbar = &truth.h[i];
            let xbar = &truth.x[i];
            let (nhb, nxb) = (norm(hbar.view()), norm(xbar.view()));

            // leave-one-out, each aligned onto z̃_i
            let loo_hat: Vec<(usize, Option<(NodeBlock, f64)>)> = loo
                .iter()
                .map(|(l, r)| (*l, at_t(r, t).and_then(|zl| aligned_onto(&zl.blocks[i], &tilde))))
                .collect();
            let have_loo = !loo_hat.is_empty();
            let pick = |f: &dyn Fn(&(NodeBlock, f64)) -> f64| {
                if have_loo {
                    max_opt(loo_hat.iter().map(|(_, v)| v.as_ref().map(f)))
                } else {
                    None
                }
            };
            let loo_dist = pick(&|(_, cost)| (cost / truth.energy(i)).sqrt());
            let loo_signal_h = pick(&|(b, _)| (inner(hbar.view(), b.h.view()) - inner(hbar.view(), tilde.h.view())).norm() / nhb);
            let loo_signal_x = pick(&|(b, _)| (inner(xbar.view(), b.x.view()) - inner(xbar.view(), tilde.x.view())).norm() / nxb);

            // sign sequence aligned onto z̃_i
            let check = sgn_t.and_then(|zs| aligned_onto(&zs.blocks[i], &tilde)).map(|(b, _)| b);
            let sign_h = check.as_ref().map(|b| diff_norm(&b.h, &tilde.h));
            let sign_x = check.as_ref().map(|b| diff_norm(&b.x, &tilde.x));

            // double differences: sign-leave-one-out aligned onto the aligned sign iterate
            let doubles: Vec<Option<(f64, f64)>> = sgn_loo
                .iter()
                .map(|(l, r)| {
                    let chk = check.as_ref()?;
                    let (hat, _) = loo_hat.iter().find(|(ll, _)| ll == l)?.1.as_ref()?;
                    let zsl = at_t(r, t)?;
                    let (hat_s, _) = aligned_onto(&zsl.blocks[i], chk)?;
                    let dh = &(&(&tilde.h - &hat.h) - &chk.h) + &hat_s.h;
                    let dx = &(&(&tilde.x - &hat.x) - &chk.x) + &hat_s.x;
                    Some((norm(dh.view()), norm(dx.view())))
                })
                .collect();
            let (double_h, double_x) = if doubles.is_empty() {
                (None, None)
            } else {
                (
                    max_opt(doubles.iter().map(|d| d.map(|v| v.0))),
                    max_opt(doubles.iter().map(|d| d.map(|v| v.1))),
                )
            };

            let blk = &z.blocks[i];
            let (norm_h, norm_x) = (norm(blk.h.view()), norm(blk.x.view()));
            let rel_scale = logm.powi(5).sqrt();

            let model = inst.model();
            let (inc_a, inc_b) = incoherence_maxima(&model, i, &tilde);
            let (inc_as, inc_bs) = match (sign, check.as_ref()) {
                (Some(ens), Some(chk)) => {
                    let (a, b) = incoherence_maxima(&ens.model(inst), i, chk);
                    (a, b)
                }
                _ => (None, None),
            };

            let kk = k as f64;
            let nn = n as f64;
            let mm = m as f64;
            let mu2 = mu * mu;
            rows.push(HypothesisRow {
                t,
                node: i,
                loo_dist: Checked::new(
                    loo_dist,
                    (c.beta_h + c.beta_x) * growth * sf * mu2 * kappa * (kk.max(nn) * logm.powi(8)).sqrt() / mm,
                ),
                loo_signal_h: Checked::new(loo_signal_h, ah * growth * sf * mu2 * kappa * (kk * logm.powi(13)).sqrt() / mm),
                loo_signal_x: Checked::new(loo_signal_x, ax * growth * sf * mu2 * kappa * (nn * logm.powi(13)).sqrt() / mm),
                sign_h: Checked::new(sign_h, ah * growth * (sf * mu2 * kappa * kappa * kk * logm.powi(8) / mm).sqrt()),
                sign_x: Checked::new(sign_x, ax * growth * (sf * mu2 * kappa * kappa * nn * logm.powi(8) / mm).sqrt()),
                double_h: Checked::new(double_h, ah * growth * sf * mu2 * (kk * logm.powi(16)).sqrt() / mm),
                double_x: Checked::new(double_x, ax * growth * sf * mu2 * (nn * logm.powi(16)).sqrt() / mm),
                norm_h,
                norm_x,
                relative_norm_h: Checked::new(Some(norm_h), 5.0 * ah * rel_scale),
                relative_norm_x: Checked::new(Some(norm_x), 5.0 * ax * rel_scale),
                incoherence_a: Checked::new(inc_a, logm.sqrt()),
                incoherence_b: Checked::new(inc_b, mu * logm * logm / mm.sqrt()),
                incoherence_a_sign: Checked::new(inc_as, logm.sqrt()),
                incoherence_b_sign: Checked::new(inc_bs, mu * logm * logm / mm.sqrt()),
            });
        }
    }
    Ok(HypothesisReport { mu, rows })
}

/// `(max_l |a_ilᴴ x|/‖x‖, max_l |b_ilᴴ h|/‖h‖)` under `model`.
fn incoherence_maxima(model: &MeasurementModel, i: usize, z: &NodeBlock) -> (Option<f64>, Option<f64>) {
    let (nh, nx) = (norm(z.h.view()), norm(z.x.view()));
    let a = (nx > 0.0).then(|| {
        (0..model.m())
            .map(|l| inner(model.a.vector(i, l), z.x.view()).norm())
            .fold(0.0, f64::max)
            / nx
    });
    let b = (nh > 0.0).then(|| {
        (0..model.m())
            .map(|l| model.access(i, l, z.h.view()).norm())
            .fold(0.0, f64::max)
            / nh
    });
    (a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ConcentrationReport {
    /// `max_{i,j} |a_ij,1|`.
    pub max_first_entry: f64,
    /// `5√(log m)`.
    pub first_entry_bound: f64,
    /// `max_{i,j} ‖a_ij‖`.
    pub max_norm: f64,
    /// `3√N`.
    pub norm_bound: f64,
    pub first_entry_ok: bool,
    pub norm_ok: bool,
    pub mu: f64,
}

pub fn concentration_report(inst: &ProblemInstance) -> Result<ConcentrationReport> {
    let (s, m, n) = (inst.a.s(), inst.a.m(), inst.a.n());
    let mut max_first_entry: f64 = 0.0;
    let mut max_norm: f64 = 0.0;
    for i in 0..s {
        for j in 0..m {
            let v = inst.a.vector(i, j);
            max_first_entry = max_first_entry.max(v[0].norm());
            max_norm = max_norm.max(norm(v));
        }
    }
    let first_entry_bound = 5.0 * (m as f64).ln().sqrt();
    let norm_bound = 3.0 * (n as f64).sqrt();
    Ok(ConcentrationReport {
        max_first_entry,
        first_entry_bound,
        max_norm,
        norm_bound,
        first_entry_ok: max_first_entry <= first_entry_bound,
        norm_ok: max_norm <= norm_bound,
        mu: incoherence(&inst.truth, &inst.b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{Dims, GroundTruth};
    use crate::rng::seeded;
    use crate::solver::{random_init, wirtinger_gradient, GradientBlocks};

    fn instance(s: usize, k: usize, n: usize, m: usize, seed: u64) -> ProblemInstance {
        let q: Vec<f64> = (0..s).map(|i| 1.0 - 0.3 * i as f64 / s as f64).collect();
        ProblemInstance::generate_seeded(Dims::new(s, k, n, m).unwrap(), &q, 0.0, seed).unwrap()
    }

    fn settings(iters: usize) -> SolverSettings {
        SolverSettings { max_iters: iters, ..Default::default() }
    }

    #[test]
    fn householder_is_unitary_and_maps_to_e1() {
        let mut rng = seeded(1);
        for n in [1, 2, 5] {
            let v: Array1<C64> = (0..n).map(|_| crate::rng::complex_normal(&mut rng, 1.0)).collect();
            let u = householder_to_e1(&v).unwrap();
            let uh = u.t().mapv(|c| c.conj());
            let eye = uh.dot(&u);
            for p in 0..n {
                for q in 0..n {
                    let want = if p == q { 1.0 } else { 0.0 };
                    assert!((eye[(p, q)] - C64::new(want, 0.0)).norm() < 1e-13);
                }
            }
            let mapped = u.dot(&v);
            assert!((mapped[0] - C64::new(norm(v.view()), 0.0)).norm() < 1e-12);
            assert!(mapped.iter().skip(1).all(|c| c.norm() < 1e-12));
        }
        // already aligned up to phase
        let mut e = Array1::<C64>::zeros(3);
        e[0] = C64::new(0.0, 2.0);
        let u = householder_to_e1(&e).unwrap();
        assert!((u.dot(&e)[0] - C64::new(2.0, 0.0)).norm() < 1e-15);
        assert!(householder_to_e1(&Array1::zeros(3)).is_err());
    }

    #[test]
    fn canonicalization_keeps_measurements() {
        let inst = instance(2, 4, 5, 30, 3);
        let canon = canonicalize(&inst).unwrap();
        for i in 0..2 {
            assert!((canon.truth.x[i][0] - C64::new(inst.truth.q[i], 0.0)).norm() < 1e-15);
            assert!((canon.truth.q[i] - inst.truth.q[i]).abs() < 1e-15);
        }
        // y recomputed from the rotated ensemble and canonical truth
        for j in 0..30 {
            let mut y = C64::new(0.0, 0.0);
            for i in 0..2 {
                y += canon.b.apply(j, canon.truth.h[i].view()) * inner(canon.truth.x[i].view(), canon.a.vector(i, j));
            }
            assert!((y - inst.measurements.y[j]).norm() < 1e-12);
        }
    }

    #[test]
    fn sign_flips_preserve_measurements_after_canonicalization() {
        let canon = canonicalize(&instance(3, 4, 4, 50, 4)).unwrap();
        let ens = sign_flip_ensemble(&canon, &mut seeded(5)).unwrap();
        assert!(ens.flips.xi.iter().all(|x| (x.norm() - 1.0).abs() < 1e-14));
        let gap = measurement_gap(&canon.model(), &ens.model(&canon), &canon.truth).unwrap();
        assert!(gap <= 1e-12, "{gap}");
    }

    #[test]
    fn sign_flips_break_measurements_without_canonicalization() {
        let inst = instance(1, 4, 4, 50, 6);
        let ens = sign_flip_ensemble(&inst, &mut seeded(7)).unwrap();
        let gap = measurement_gap(&inst.model(), &ens.model(&inst), &inst.truth).unwrap();
        assert!(gap > 1e-3);
    }

    #[test]
    fn sign_flips_are_reproducible() {
        let a = SignFlips::sample(2, 10, &mut seeded(9));
        let b = SignFlips::sample(2, 10, &mut seeded(9));
        assert_eq!(a, b);
    }

    #[test]
    fn identity_flips_reproduce_base_run() {
        let inst = canonicalize(&instance(2, 4, 4, 60, 8)).unwrap();
        let ens = sign_flip_with(&inst, SignFlips::identity(2, 60)).unwrap();
        assert_eq!(ens.a.data(), inst.a.data());
        let z0 = random_init(2, 4, 4, &mut seeded(10));
        let base = recorded_run(&inst.model(), &inst.truth, &z0, &settings(15)).unwrap();
        let aux = sign_run(&inst, &ens, &z0, &settings(15)).unwrap();
        for (a, b) in base.iterates.iter().zip(&aux.run.iterates) {
            for (x, y) in a.blocks.iter().zip(&b.blocks) {
                assert!(diff_norm(&x.h, &y.h) < 1e-12 && diff_norm(&x.x, &y.x) < 1e-12);
            }
        }
    }

    #[test]
    fn wrong_flip_shape_is_rejected() {
        let inst = instance(2, 3, 3, 10, 1);
        assert!(sign_flip_with(&inst, SignFlips::identity(2, 9)).is_err());
    }

    #[test]
    fn leave_one_out_gradient_is_additive() {
        let inst = instance(2, 4, 4, 40, 11);
        let z = random_init(2, 4, 4, &mut seeded(12));
        let full = wirtinger_gradient(&z, &inst.model()).unwrap();
        let l = 17;
        let without = wirtinger_gradient(&z, &inst.model().without_sample(l).unwrap()).unwrap();
        // gradient of sample l alone: residual r_l times its rank-one terms
        let mut only = GradientBlocks::zeros_like(&z);
        let mut r = -inst.measurements.y[l];
        for (i, b) in z.blocks.iter().enumerate() {
            r += inst.b.apply(l, b.h.view()) * inner(b.x.view(), inst.a.vector(i, l));
        }
        for (i, b) in z.blocks.iter().enumerate() {
            let ax = inner(inst.a.vector(i, l), b.x.view());
            only.blocks[i].h = inst.b.b(l).mapv(|v| v * r * ax);
            let bh = inst.b.apply(l, b.h.view());
            only.blocks[i].x = inst.a.vector(i, l).mapv(|v| v * r.conj() * bh);
        }
        for i in 0..2 {
            let dh = &(&without.blocks[i].h + &only.blocks[i].h) - &full.blocks[i].h;
            let dx = &(&without.blocks[i].x + &only.blocks[i].x) - &full.blocks[i].x;
            assert!(norm(dh.view()) < 1e-12 && norm(dx.view()) < 1e-12);
        }
    }

    #[test]
    fn single_sample_leave_one_out_is_frozen() {
        let inst = instance(1, 1, 2, 1, 13);
        let z0 = random_init(1, 1, 2, &mut seeded(14));
        let run = leave_one_out_run(&inst.model(), &inst.truth, 0, &z0, &settings(5)).unwrap();
        assert!(run.run.trace.records.iter().all(|r| r.loss == 0.0));
        let last = run.run.iterates.last().unwrap();
        assert_eq!(last.blocks, z0.blocks);
        assert!(matches!(
            leave_one_out_run(&inst.model(), &inst.truth, 1, &z0, &settings(5)),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn hypotheses_vanish_at_start() {
        let inst = canonicalize(&instance(2, 4, 4, 80, 15)).unwrap();
        let ens = sign_flip_ensemble(&inst, &mut seeded(16)).unwrap();
        let z0 = random_init(2, 4, 4, &mut seeded(17));
        let st = settings(6);
        let base = recorded_run(&inst.model(), &inst.truth, &z0, &st).unwrap();
        let mut aux = vec![sign_run(&inst, &ens, &z0, &st).unwrap()];
        for l in [3, 40] {
            aux.push(leave_one_out_run(&inst.model(), &inst.truth, l, &z0, &st).unwrap());
            aux.push(sign_leave_one_out_run(&inst, &ens, l, &z0, &st).unwrap());
        }
        let rep = measure_hypotheses(&base, &aux, &inst, Some(&ens)).unwrap();
        assert_eq!(rep.rows.len(), 7 * 2);
        for row in rep.rows.iter().filter(|r| r.t == 0) {
            for q in [row.loo_dist, row.loo_signal_h, row.loo_signal_x, row.sign_h, row.sign_x, row.double_h, row.double_x] {
                assert!(q.value.unwrap() < 1e-6, "{row:?}");
            }
        }
        for row in &rep.rows {
            for q in [row.loo_dist, row.sign_h, row.double_x, row.incoherence_a, row.incoherence_b_sign] {
                let v = q.value.unwrap();
                assert!(v.is_finite() && v >= 0.0 && q.scale >= 0.0);
            }
        }
        // later iterates drift apart, but only slightly
        let late = rep.rows.iter().find(|r| r.t == 6).unwrap();
        assert!(late.loo_dist.value.unwrap() > 0.0);
    }

    #[test]
    fn missing_runs_leave_entries_absent() {
        let inst = instance(1, 3, 3, 30, 18);
        let z0 = random_init(1, 3, 3, &mut seeded(19));
        let base = recorded_run(&inst.model(), &inst.truth, &z0, &settings(2)).unwrap();
        let rep = measure_hypotheses(&base, &[], &inst, None).unwrap();
        assert!(rep.rows.iter().all(|r| r.loo_dist.value.is_none() && r.sign_h.value.is_none()));
        assert!(rep.rows.iter().all(|r| r.incoherence_a.value.is_some()));
    }

    #[test]
    fn loo_index_sampling() {
        let idx = sample_loo_indices(100, 8, &mut seeded(1));
        assert_eq!(idx.len(), 8);
        assert!(idx.windows(2).all(|w| w[0] < w[1]) && idx.iter().all(|&i| i < 100));
        assert_eq!(sample_loo_indices(5, 8, &mut seeded(1)), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn concentration_cases() {
        let mut inst = instance(1, 2, 16, 1000, 20);
        let rep = concentration_report(&inst).unwrap();
        assert!((rep.first_entry_bound - 5.0 * 1000f64.ln().sqrt()).abs() < 1e-12);
        assert!((rep.norm_bound - 12.0).abs() < 1e-12);
        assert!(rep.mu >= 1.0 - 1e-12);

        inst.a.data_mut().fill(C64::new(0.0, 0.0));
        let rep = concentration_report(&inst).unwrap();
        assert_eq!((rep.max_first_entry, rep.max_norm), (0.0, 0.0));
        assert!(rep.first_entry_ok && rep.norm_ok);
    }

    #[test]
    fn norm_bound_holds_at_moderate_m() {
        let hits = (0..100)
            .filter(|&seed| {
                let dims = Dims::new(1, 2, 16, 1000).unwrap();
                let inst = ProblemInstance::generate_seeded(dims, &[1.0], 0.0, seed).unwrap();
                concentration_report(&inst).unwrap().norm_ok
            })
            .count();
        assert!(hits >= 99, "{hits}");
    }

    #[test]
    fn canonical_truth_is_valid() {
        let canon = canonicalize(&instance(2, 3, 3, 10, 21)).unwrap();
        let t: &GroundTruth = &canon.truth;
        assert!((t.kappa - t.q[0] / t.q[1]).abs() < 1e-12);
    }
}
