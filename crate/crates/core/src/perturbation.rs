//! The Lipschitz rank-one perturbation that destroys metric regularity.
//!
//! Coderivative witnesses `(x_k, y_k, ε_k, y*_k, x*_k)` are harvested from
//! the `rg⁺` estimator, witnesses sitting on the base point are moved off it
//! by a discrete Ekeland descent, a subsequence with `t_{k+1} < t_k/2` is
//! kept, and one bump
//!
//! ```text
//! f_k(x) = s_k(x)·⟨x*_k, x − x_k⟩·v_k,   s_k(x) = max{1 − (‖x − x_k‖/ρ_k)^{1+1/k}, 0}
//! ```
//!
//! is placed on each ball `B̄_{ρ_k}(x_k)`. The perturbation is `f = −Σ f_k`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{self, Matrix};
use crate::mappings::{Feature, GraphPoint, MappingModel, SampledGraph, VectorField};
use crate::moduli::{
    coderivative_membership, min_coderivative_norm, rg_plus_estimate, ModulusEstimate, ScaleSchedule, ETA,
};
use crate::spaces::{NormKind, NormSpec, ProductNormSpec};

/// Default number of witnesses harvested for a construction.
pub const DEFAULT_K: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WitnessEntry {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub eps: f64,
    pub y_star: Vec<f64>,
    pub x_star: Vec<f64>,
    /// Radius of the neighbourhood the membership certificate covers.
    pub test_radius: f64,
    #[serde(skip)]
    pub sample: Option<Arc<SampledGraph>>,
}

impl WitnessEntry {
    pub fn point(&self) -> GraphPoint {
        GraphPoint::new(self.x.clone(), self.y.clone())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WitnessSequence {
    pub base: GraphPoint,
    pub entries: Vec<WitnessEntry>,
    pub gamma: f64,
    pub target: f64,
}

/// One bump `−s_k(x)·⟨x*_k, x − x_k⟩·v_k` on `B̄_{ρ_k}(x_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpSpec {
    pub center: Vec<f64>,
    pub radius: f64,
    pub slope: Vec<f64>,
    pub direction: Vec<f64>,
    pub exponent: f64,
}

impl BumpSpec {
    /// The label `k` with `exponent = 1 + 1/k`.
    pub fn label(&self) -> usize {
        (1.0 / (self.exponent - 1.0)).round() as usize
    }
}

fn is_two(p: &NormKind) -> bool {
    *p == NormKind::Two
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpPerturbation {
    pub base_point: Vec<f64>,
    pub bumps: Vec<BumpSpec>,
    #[serde(default, skip_serializing_if = "is_two")]
    pub domain_norm: NormKind,
    /// Only needed when there are no bumps to read it from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_dim: Option<usize>,
}

impl BumpPerturbation {
    /// `f ≡ 0` on `ℝⁿ → ℝᵐ`.
    pub fn zero(base_point: Vec<f64>, range_dim: usize, domain_norm: NormKind) -> Self {
        Self {
            base_point,
            bumps: Vec::new(),
            domain_norm,
            range_dim: Some(range_dim),
        }
    }

    /// Center distances `t_k = ‖x_k − x̄‖`.
    pub fn t(&self) -> Vec<f64> {
        let spec = self.domain_spec();
        self.bumps.iter().map(|b| spec.dist(&b.center, &self.base_point)).collect()
    }

    fn domain_spec(&self) -> NormSpec {
        NormSpec::new(self.base_point.len(), self.domain_norm)
    }

    fn out_dim(&self) -> usize {
        self.bumps
            .first()
            .map(|b| b.direction.len())
            .or(self.range_dim)
            .unwrap_or(self.base_point.len())
    }

    /// The `k`-th bump alone, `f_k` (without the leading minus sign).
    pub fn bump_part(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let b = &self.bumps[k];
        let s = bump_value(b, x, self.domain_norm);
        let g = linalg::dot(&b.slope, &linalg::sub(x, &b.center));
        linalg::scale(&b.direction, s * g)
    }
}

/// `s_k(x) = max{1 − (‖x − x_k‖/ρ_k)^{e_k}, 0}`
pub fn bump_value(spec: &BumpSpec, x: &[f64], norm: NormKind) -> f64 {
    let d = norm.eval(&linalg::sub(x, &spec.center));
    if d >= spec.radius {
        return 0.0;
    }
    (1.0 - (d / spec.radius).powf(spec.exponent)).max(0.0)
}

/// `f(x) = −Σ_k s_k(x)·⟨x*_k, x − x_k⟩·v_k`
pub fn perturbation_eval(p: &BumpPerturbation, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.out_dim()];
    for b in &p.bumps {
        let s = bump_value(b, x, p.domain_norm);
        if s == 0.0 {
            continue;
        }
        let g = linalg::dot(&b.slope, &linalg::sub(x, &b.center));
        linalg::axpy(&mut out, -s * g, &b.direction);
    }
    out
}

/// `∇f(x_k) = −v_k x*_kᵀ`
pub fn perturbation_gradient_at_centers(p: &BumpPerturbation, k: usize) -> Matrix {
    let b = &p.bumps[k];
    Matrix::outer(&b.direction, &b.slope).scaled(-1.0)
}

/// A (sub)gradient of `‖z‖` for the three norms; zero at the origin.
fn norm_gradient(z: &[f64], norm: NormKind) -> Vec<f64> {
    let n = norm.eval(z);
    if n == 0.0 {
        return vec![0.0; z.len()];
    }
    match norm {
        NormKind::Two => linalg::scale(z, 1.0 / n),
        NormKind::One => z.iter().map(|a| a.signum() * (*a != 0.0) as i32 as f64).collect(),
        NormKind::Inf => {
            let i = (0..z.len()).fold(0, |m, i| if z[i].abs() > z[m].abs() { i } else { m });
            let mut g = vec![0.0; z.len()];
            g[i] = z[i].signum();
            g
        }
    }
}

impl VectorField for BumpPerturbation {
    fn domain_dim(&self) -> usize {
        self.base_point.len()
    }

    fn range_dim(&self) -> usize {
        self.out_dim()
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        perturbation_eval(self, x)
    }

    fn jacobian(&self, x: &[f64]) -> Option<Matrix> {
        let mut j = Matrix::zeros(self.out_dim(), self.base_point.len());
        for b in &self.bumps {
            let z = linalg::sub(x, &b.center);
            let d = self.domain_norm.eval(&z);
            if d >= b.radius {
                continue;
            }
            let s = 1.0 - (d / b.radius).powf(b.exponent);
            let g = linalg::dot(&b.slope, &z);
            // ∇s = −e (d/ρ)^{e−1}/ρ · ∇‖z‖
            let coef = if d == 0.0 {
                0.0
            } else {
                -b.exponent * (d / b.radius).powf(b.exponent - 1.0) / b.radius
            };
            let dn = norm_gradient(&z, self.domain_norm);
            let grad: Vec<f64> = b.slope.iter().zip(&dn).map(|(xs, dd)| s * xs + g * coef * dd).collect();
            j = j.add(&Matrix::outer(&b.direction, &grad).scaled(-1.0));
        }
        Some(j)
    }

    fn features(&self) -> Vec<Feature> {
        self.bumps
            .iter()
            .map(|b| Feature {
                center: b.center.clone(),
                radius: b.radius,
            })
            .collect()
    }
}

/// Witness sequence from the last `k` scales of an `rg⁺` estimate, with
/// `γ = 1.05·max_k ‖x*_k‖`.
pub fn witness_from_estimate(
    f: &MappingModel,
    est: &ModulusEstimate,
    base: &GraphPoint,
    k: usize,
) -> Result<WitnessSequence> {
    if k < 3 {
        return Err(Error::TooFewWitnesses(k));
    }
    if est.value.is_infinite() {
        return Err(Error::InfiniteEstimate);
    }
    if est.value <= 1e-12 {
        return Err(Error::DegenerateZero);
    }
    if !est.stabilized {
        return Err(Error::NotStabilized);
    }
    if est.witness.len() < k {
        return Err(Error::TooFewWitnesses(est.witness.len()));
    }
    let entries: Vec<WitnessEntry> = est.witness[est.witness.len() - k..]
        .iter()
        .map(|w| WitnessEntry {
            x: w.element.at.x.clone(),
            y: w.element.at.y.clone(),
            eps: w.element.eps,
            y_star: w.element.y_star.clone(),
            x_star: w.element.x_star.clone(),
            test_radius: w.test_radius,
            sample: w.sample.clone(),
        })
        .collect();
    finish_witness(
        f,
        WitnessSequence {
            base: base.clone(),
            entries,
            gamma: 0.0,
            target: est.value,
        },
    )
}

/// `K` witnesses harvested from `rg_plus_estimate`, one per scale.
pub fn extract_witness(f: &MappingModel, base: &GraphPoint, schedule: &ScaleSchedule, k: usize) -> Result<WitnessSequence> {
    let est = rg_plus_estimate(f, base, schedule)?;
    witness_from_estimate(f, &est, base, k)
}

fn finish_witness(f: &MappingModel, mut w: WitnessSequence) -> Result<WitnessSequence> {
    let mut max = 0.0f64;
    for e in &w.entries {
        let n = f.domain.dn(&e.x_star);
        if n <= 1e-12 {
            return Err(Error::DegenerateZero);
        }
        max = max.max(n);
    }
    w.gamma = 1.05 * max;
    Ok(w)
}

/// Result of relocating one witness that sits at the base point.
#[derive(Debug, Clone)]
pub struct Relocation {
    pub entry: WitnessEntry,
    pub start: GraphPoint,
    /// `ς_k`, the `φ_k` infimum over the two smallest shells.
    pub varsigma: f64,
    /// `ε'_k = ε_k + 1/k − ς_k`
    pub eps_prime: f64,
    pub steps: usize,
}

/// Discrete Ekeland descent moving a witness with `x_k = x̄` to a nearby
/// graph point `(x̃_k, ỹ_k)` with `x̃_k ≠ x̄` where `x*_k` is an
/// `ε̃_k`-coderivative element, `ε̃_k = ε_k + ε'_k`.
pub fn relocate_witness_ekeland(
    sample: &SampledGraph,
    base_x: &[f64],
    entry: &WitnessEntry,
    k: usize,
    pair: &ProductNormSpec,
) -> Result<Relocation> {
    if k == 0 {
        return Err(Error::OutOfRange("label k must be positive".into()));
    }
    if pair.left.dist(&entry.x, base_x) > 1e-12 {
        return Err(Error::OutOfRange("witness is not at the base point".into()));
    }
    let anchor = GraphPoint::new(base_x.to_vec(), entry.y.clone());
    let rho = sample.radius;
    let pts: Vec<&GraphPoint> = sample
        .points
        .iter()
        .filter(|p| pair.dist(&p.x, &p.y, &anchor.x, &anchor.y) <= rho)
        .collect();
    let dxn = |p: &GraphPoint| pair.left.dist(&p.x, base_x);
    let off: Vec<&GraphPoint> = pts.iter().copied().filter(|p| dxn(p) > 0.0).collect();
    if off.is_empty() {
        return Err(Error::IsolatedDomainDirection);
    }
    let (xs, ys, eps) = (&entry.x_star, &entry.y_star, entry.eps);
    let quotient = |p: &GraphPoint| {
        let dx = linalg::sub(&p.x, base_x);
        let dy = linalg::sub(&p.y, &entry.y);
        (linalg::dot(xs, &dx) - linalg::dot(ys, &dy) - eps * pair.right.n(&dy)) / pair.left.n(&dx)
    };
    // Dyadic shells r ∈ (ρ·2^{-s-1}, ρ·2^{-s}].
    let shell = |p: &GraphPoint| {
        let r = pair.dist(&p.x, &p.y, &anchor.x, &anchor.y);
        (rho / r).log2().floor().max(0.0) as i64
    };
    let s_max = off.iter().map(|p| shell(p)).max().unwrap();
    let s_next = off.iter().map(|p| shell(p)).filter(|&s| s < s_max).max();
    let phi = |s: i64| {
        off.iter()
            .filter(|p| shell(p) >= s)
            .map(|p| quotient(p))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let phi_small = phi(s_max);
    let varsigma = match s_next {
        Some(s) => {
            let phi_next = phi(s);
            if phi_next < phi_small {
                log::warn!("φ_k not monotone on sampled shells: {phi_next} < {phi_small}");
            }
            phi_small.min(phi_next)
        }
        None => phi_small,
    };
    let start = off
        .iter()
        .filter(|p| shell(p) == s_max)
        .max_by(|a, b| quotient(a).total_cmp(&quotient(b)))
        .map(|p| (*p).clone())
        .unwrap();
    let eps_prime = eps + 1.0 / k as f64 - varsigma;
    if !(eps_prime > 2.0 * ETA) {
        return Err(Error::OutOfRange(format!("ε'_k = {eps_prime} is not positive")));
    }
    let margin = eps_prime - 2.0 * ETA;
    let psi = |p: &GraphPoint| {
        let dx = linalg::sub(&p.x, base_x);
        let dy = linalg::sub(&p.y, &entry.y);
        eps * pair.dist(&p.x, &p.y, &anchor.x, &anchor.y) - linalg::dot(xs, &dx) + linalg::dot(ys, &dy)
    };
    let mut cur = start.clone();
    let mut steps = 0usize;
    loop {
        let pc = psi(&cur);
        let next = pts
            .iter()
            .filter(|p| ***p != cur)
            .map(|p| (psi(p) + margin * pair.dist(&p.x, &p.y, &cur.x, &cur.y), *p))
            .filter(|(v, _)| *v < pc)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        match next {
            Some((_, p)) => {
                cur = p.clone();
                steps += 1;
                if steps > pts.len() {
                    return Err(Error::NoConvergence(steps));
                }
            }
            None => break,
        }
    }
    let relocated = WitnessEntry {
        x: cur.x.clone(),
        y: cur.y.clone(),
        eps: eps + eps_prime,
        y_star: ys.clone(),
        x_star: xs.clone(),
        test_radius: rho,
        sample: Some(Arc::new(sample.clone())),
    };
    Ok(Relocation {
        entry: relocated,
        start,
        varsigma,
        eps_prime,
        steps,
    })
}

/// Radii for the kept subsequence.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusSelection {
    pub kept: Vec<usize>,
    pub t: Vec<f64>,
    pub rho: Vec<f64>,
}

/// Greedy subsequence with `t_{k+1} < t_k/2`. Within each dyadic band the
/// entry with the larger `norms` value wins, then the smaller `eps`, then
/// the larger `t`. `ρ_k = (t_k − t_{k+1})/2` with a virtual
/// `t_{K+1} = t_K/4`.
pub fn select_radii(t: &[f64], norms: &[f64], eps: &[f64]) -> Result<RadiusSelection> {
    if t.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::OutOfRange("all witnesses must lie off the base point".into()));
    }
    let mut kept: Vec<usize> = Vec::new();
    let mut last = f64::INFINITY;
    loop {
        let group: Vec<usize> = (0..t.len()).filter(|&i| t[i] < last / 2.0).collect();
        let Some(tmax) = group.iter().map(|&i| t[i]).reduce(f64::max) else { break };
        let pick = group
            .iter()
            .copied()
            .filter(|&i| t[i] > tmax / 2.0)
            .max_by(|&a, &b| {
                norms[a]
                    .total_cmp(&norms[b])
                    .then(eps[b].total_cmp(&eps[a]))
                    .then(t[a].total_cmp(&t[b]))
                    .then(b.cmp(&a))
            })
            .unwrap();
        kept.push(pick);
        last = t[pick];
    }
    if kept.len() < 2 {
        return Err(Error::TooFewWitnesses(kept.len()));
    }
    let tk: Vec<f64> = kept.iter().map(|&i| t[i]).collect();
    let rho: Vec<f64> = (0..tk.len())
        .map(|i| {
            let next = if i + 1 < tk.len() { tk[i + 1] } else { tk[i] / 4.0 };
            (tk[i] - next) / 2.0
        })
        .collect();
    Ok(RadiusSelection { kept, t: tk, rho })
}

/// Unit `v_k` with `⟨y*_k, v_k⟩ > 1 − 1/k`: `y*_k` itself for `p = 2` and
/// the lexicographically smallest norming vertex for `p ∈ {1, ∞}`.
pub fn choose_direction(y_star: &[f64], k: usize, range: &NormSpec) -> Result<Vec<f64>> {
    let dn = range.dual_norm(y_star)?;
    if (dn - 1.0).abs() > 1e-9 {
        return Err(Error::NotUnit(dn));
    }
    let v = range.norming_vector(y_star);
    let pairing = linalg::dot(y_star, &v);
    debug_assert!(pairing > 1.0 - 1.0 / k.max(1) as f64);
    Ok(v)
}

/// Smallest `k̂` with `(1 + 1/(k̂+1))·max‖x*‖ < γ`; bump labels start at
/// `k̂ + 1`.
pub fn first_label(max_norm: f64, gamma: f64) -> usize {
    let mut k = 1usize;
    while (1.0 + 1.0 / k as f64) * max_norm >= gamma && k < 1_000_000 {
        k += 1;
    }
    k
}

/// Everything produced by [`build_perturbation`].
#[derive(Debug, Clone)]
pub struct Construction {
    pub perturbation: BumpPerturbation,
    /// Witnesses after relocation, in original order.
    pub witness: Option<WitnessSequence>,
    /// Witness index behind each bump.
    pub bump_entries: Vec<usize>,
    pub relocations: Vec<Relocation>,
    pub rg_plus: ModulusEstimate,
}

impl Construction {
    pub fn gamma(&self) -> f64 {
        self.witness.as_ref().map_or(0.0, |w| w.gamma)
    }
}

/// Witness extraction, relocation of witnesses at the base point, radius selection, direction choice
/// and bump assembly. A zero `rg⁺` yields `f ≡ 0`.
pub fn build_perturbation(f: &MappingModel, base: &GraphPoint, schedule: &ScaleSchedule, k: usize) -> Result<Construction> {
    let est = rg_plus_estimate(f, base, schedule)?;
    build_from_estimate(f, base, est, k)
}

pub fn build_from_estimate(f: &MappingModel, base: &GraphPoint, est: ModulusEstimate, k: usize) -> Result<Construction> {
    let zero = || BumpPerturbation::zero(base.x.clone(), f.range.dimension, f.domain.p);
    let w = match witness_from_estimate(f, &est, base, k) {
        Ok(w) => w,
        Err(Error::DegenerateZero) => {
            return Ok(Construction {
                perturbation: zero(),
                witness: None,
                bump_entries: Vec::new(),
                relocations: Vec::new(),
                rg_plus: est,
            })
        }
        Err(e) => return Err(e),
    };
    let pair = f.pair_spec();
    let max_norm = w.entries.iter().map(|e| f.domain.dn(&e.x_star)).fold(0.0, f64::max);
    let k_hat = first_label(max_norm, w.gamma);
    let mut entries = w.entries.clone();
    let mut relocations = Vec::new();
    for (i, e) in entries.iter_mut().enumerate() {
        if f.domain.dist(&e.x, &base.x) > 1e-12 {
            continue;
        }
        let sample = e.sample.clone().ok_or(Error::IsolatedDomainDirection)?;
        let r = relocate_witness_ekeland(&sample, &base.x, e, k_hat + 1 + i, &pair)?;
        *e = r.entry.clone();
        relocations.push(r);
    }
    let t: Vec<f64> = entries.iter().map(|e| f.domain.dist(&e.x, &base.x)).collect();
    let norms: Vec<f64> = entries.iter().map(|e| f.domain.dn(&e.x_star)).collect();
    let eps: Vec<f64> = entries.iter().map(|e| e.eps).collect();
    let sel = select_radii(&t, &norms, &eps)?;
    let mut bumps = Vec::with_capacity(sel.kept.len());
    for (i, &idx) in sel.kept.iter().enumerate() {
        let label = k_hat + 1 + i;
        let e = &entries[idx];
        bumps.push(BumpSpec {
            center: e.x.clone(),
            radius: sel.rho[i],
            slope: e.x_star.clone(),
            direction: choose_direction(&e.y_star, label, &f.range)?,
            exponent: 1.0 + 1.0 / label as f64,
        });
    }
    Ok(Construction {
        perturbation: BumpPerturbation {
            base_point: base.x.clone(),
            bumps,
            domain_norm: f.domain.p,
            range_dim: None,
        },
        witness: Some(WitnessSequence { entries, ..w }),
        bump_entries: sel.kept,
        relocations,
        rg_plus: est,
    })
}

/// `αf`: every slope scaled by `α ∈ [0, 1]`.
pub fn scale_perturbation(p: &BumpPerturbation, alpha: f64) -> Result<BumpPerturbation> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange(format!("alpha {alpha} not in [0, 1]")));
    }
    let mut q = p.clone();
    for b in &mut q.bumps {
        b.slope = linalg::scale(&b.slope, alpha);
    }
    Ok(q)
}

/// Inside ball `k` the value `f(u)` must lie on `span{v_k}`; outside every
/// ball it must vanish. Residuals are Euclidean, tolerance `1e-10`.
pub fn rank_one_structure_check(p: &BumpPerturbation, trials: usize, seed: u64) -> bool {
    let spec = p.domain_spec();
    let n = p.base_point.len();
    let outer = p.t().iter().zip(&p.bumps).map(|(t, b)| t + b.radius).fold(1.0, f64::max);
    let per = trials.div_ceil(p.bumps.len() + 1).max(1);
    let checks: Vec<bool> = exec::map_range(p.bumps.len() + 1, |k| {
        let mut rng = exec::rng(seed, k as u64);
        (0..per).all(|_| {
            if k < p.bumps.len() {
                let b = &p.bumps[k];
                let dir = spec.random_unit(&mut rng);
                let r = b.radius * rng.gen::<f64>();
                let mut u = b.center.clone();
                linalg::axpy(&mut u, r, &dir);
                let fu = perturbation_eval(p, &u);
                let v = &b.direction;
                let vv = linalg::dot(v, v);
                let proj = linalg::dot(&fu, v) / vv;
                let resid: Vec<f64> = fu.iter().zip(v).map(|(a, b)| a - proj * b).collect();
                linalg::euclid(&resid) <= 1e-10
            } else {
                let mut u: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0 * outer..2.0 * outer)).collect();
                linalg::axpy(&mut u, 1.0, &p.base_point);
                let inside = p.bumps.iter().any(|b| spec.dist(&u, &b.center) < b.radius);
                inside || perturbation_eval(p, &u).iter().all(|&a| a == 0.0)
            }
        })
    });
    checks.into_iter().all(|c| c)
}

/// For each bump `k`, checks that `x* − α⟨y*_k, v_k⟩·x*_k` is an
/// `ε'_k`-coderivative element of `F + αf` at `(x_k, y_k)` with
/// `ε'_k = (α‖x*_k‖ + 1)·ε_k`, where `x* ∈ D*_{ε_k/2}F(x_k, y_k)(y*_k)` is
/// certified on a fresh sample small enough for the bump's curvature.
pub fn coderivative_transfer_check(
    f: &MappingModel,
    construction: &Construction,
    alpha: f64,
    seed: u64,
) -> Result<Vec<bool>> {
    let Some(w) = &construction.witness else { return Ok(Vec::new()) };
    let p = scale_perturbation(&construction.perturbation, alpha)?;
    let pair = f.pair_spec();
    let mut out = Vec::new();
    for (k, (&idx, b)) in construction.bump_entries.iter().zip(&construction.perturbation.bumps).enumerate() {
        let e = &w.entries[idx];
        let at = e.point();
        let xn = f.domain.dn(&e.x_star);
        let tr = b.radius * (e.eps / (4.0 * (1.0 + xn))).powf(1.0 / b.exponent);
        let sample = f.sample_graph(&at, tr, 150, exec::derive_seed(seed, k as u64))?;
        let eps_half = 0.5 * e.eps;
        let x_star = if coderivative_membership(&sample, &at, &e.y_star, &e.x_star, eps_half, tr, &pair)? {
            e.x_star.clone()
        } else {
            match min_coderivative_norm(&sample, &at, eps_half, std::slice::from_ref(&e.y_star), tr, &pair, false)?.element {
                Some(el) => el.x_star,
                None => {
                    out.push(false);
                    continue;
                }
            }
        };
        let shifted = SampledGraph {
            base: at.clone(),
            points: sample
                .points
                .iter()
                .map(|q| GraphPoint::new(q.x.clone(), linalg::add(&q.y, &p.eval(&q.x))))
                .collect(),
            radius: sample.radius,
        };
        let shifted_at = GraphPoint::new(at.x.clone(), linalg::add(&at.y, &p.eval(&at.x)));
        let c = alpha * linalg::dot(&e.y_star, &b.direction);
        let mut moved = x_star.clone();
        linalg::axpy(&mut moved, -c, &e.x_star);
        let eps_prime = (alpha * xn + 1.0) * e.eps;
        out.push(coderivative_membership(&shifted, &shifted_at, &e.y_star, &moved, eps_prime, tr, &pair)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_bump() -> BumpPerturbation {
        BumpPerturbation {
            base_point: vec![0.0, 0.0],
            bumps: vec![BumpSpec {
                center: vec![1.0, 0.0],
                radius: 0.2,
                slope: vec![1.0, 0.0],
                direction: vec![0.0, 1.0],
                exponent: 2.0,
            }],
            domain_norm: NormKind::Two,
            range_dim: None,
        }
    }

    #[test]
    fn bump_value_examples() {
        let mut b = one_bump().bumps[0].clone();
        b.radius = 0.25;
        assert_eq!(bump_value(&b, &[1.0, 0.0], NormKind::Two), 1.0);
        assert_eq!(bump_value(&b, &[1.25, 0.0], NormKind::Two), 0.0);
        assert_eq!(bump_value(&b, &[1.0, -0.25], NormKind::Two), 0.0);
        assert_eq!(bump_value(&b, &[1.125, 0.0], NormKind::Two), 0.75);
    }

    #[test]
    fn eval_examples() {
        let p = one_bump();
        let v = perturbation_eval(&p, &[1.1, 0.0]);
        assert_eq!(v[0], 0.0);
        assert!((v[1] + 0.075).abs() < 1e-16);
        assert_eq!(perturbation_eval(&p, &[1.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(perturbation_eval(&p, &[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(perturbation_eval(&p, &[3.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_at_center() {
        let p = one_bump();
        let g = perturbation_gradient_at_centers(&p, 0);
        assert_eq!(g.to_rows(), vec![vec![0.0, 0.0], vec![-1.0, 0.0]]);
        let h = 1e-5 * 0.2;
        let fd = crate::oracles::finite_difference_jacobian(|x| perturbation_eval(&p, x), &[1.0, 0.0], h);
        assert!(fd.max_abs_diff(&g) < 1e-4);
        assert!(p.jacobian(&[1.0, 0.0]).unwrap().max_abs_diff(&g) < 1e-15);
    }

    #[test]
    fn analytic_jacobian_matches_differences_inside_ball() {
        let p = one_bump();
        for x in [[1.05, 0.03], [0.9, -0.1], [1.0, 0.15]] {
            let fd = crate::oracles::finite_difference_jacobian(|u| perturbation_eval(&p, u), &x, 1e-7);
            assert!(p.jacobian(&x).unwrap().max_abs_diff(&fd) < 1e-6, "{x:?}");
        }
    }

    #[test]
    fn select_radii_examples() {
        let s = select_radii(&[1.0, 0.4, 0.1], &[1.0; 3], &[0.1; 3]).unwrap();
        assert_eq!(s.kept, vec![0, 1, 2]);
        for (a, b) in s.rho.iter().zip([0.3, 0.15, 0.0375]) {
            assert!((a - b).abs() < 1e-15);
        }
        let s = select_radii(&[1.0, 0.6, 0.1], &[1.0; 3], &[0.1; 3]).unwrap();
        assert_eq!(s.kept, vec![0, 2]);
        assert_eq!(s.t, vec![1.0, 0.1]);
        assert!(select_radii(&[1.0, 0.9], &[1.0; 2], &[0.1; 2]).is_err());
    }

    #[test]
    fn band_tie_break_prefers_larger_norm() {
        let s = select_radii(&[1.0, 0.6, 0.1], &[0.5, 0.9, 0.5], &[0.1; 3]).unwrap();
        assert_eq!(s.kept, vec![1, 2]);
    }

    #[test]
    fn choose_direction_examples() {
        let two = NormSpec::euclidean(2);
        assert_eq!(choose_direction(&[0.6, 0.8], 5, &two).unwrap(), vec![0.6, 0.8]);
        let one = NormSpec::new(2, NormKind::One);
        assert_eq!(choose_direction(&[1.0, 0.0], 2, &one).unwrap(), vec![1.0, 0.0]);
        assert!(choose_direction(&[2.0, 0.0], 2, &two).is_err());
    }

    #[test]
    fn scaling_examples() {
        let p = one_bump();
        let z = scale_perturbation(&p, 0.0).unwrap();
        assert_eq!(perturbation_eval(&z, &[1.1, 0.05]), vec![0.0, 0.0]);
        assert_eq!(scale_perturbation(&p, 1.0).unwrap(), p);
        assert!(scale_perturbation(&p, 1.5).is_err());
    }

    #[test]
    fn rank_one_on_single_bump() {
        assert!(rank_one_structure_check(&one_bump(), 500, 3));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut p = one_bump();
        p.bumps[0].radius = 0.1 + 0.2;
        p.bumps[0].slope = vec![1.0 / 3.0, -2.0f64.sqrt()];
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.starts_with(r#"{"base_point":[0.0,0.0],"bumps":[{"center""#), "{s}");
        let back: BumpPerturbation = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn first_label_gives_lip_margin() {
        let k = first_label(0.5, 0.525);
        assert!((1.0 + 1.0 / k as f64) * 0.5 < 0.525);
        assert!((1.0 + 1.0 / (k - 1) as f64) * 0.5 >= 0.525);
    }
}
