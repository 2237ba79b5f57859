//! Estimators for `rg F(x̄,ȳ)`, `rg⁺F(x̄,ȳ)` and `lip f(x̄)`, plus the
//! finite-sample ε-normal and ε-coderivative tests they rest on.
//!
//! Every estimator walks a [`ScaleSchedule`] of shrinking neighbourhoods and
//! reports the per-scale extremum. The limit is not extrapolated: the value
//! is the finest-scale figure together with a `stabilized` flag.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{self, Matrix};
use crate::mappings::{root_tolerance, field_jacobian, GraphPoint, MappingModel, SampledGraph, VectorField};
use crate::spaces::{sphere_grid, NormKind, NormSpec, ProductNormSpec};

/// Slack that turns the strict ε-normal inequality into `≤ (ε − η)·r`.
pub const ETA: f64 = 1e-9;

/// Relative agreement of the last two scales required for `stabilized`.
pub const STABLE_REL: f64 = 0.05;

/// Shrinking radii `δ_j` with coupled coderivative parameters `ε_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSchedule {
    pub radii: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub samples_per_scale: usize,
    pub seed: u64,
}

impl Default for ScaleSchedule {
    fn default() -> Self {
        Self::geometric(0.25, 10, 120, 0)
    }
}

impl ScaleSchedule {
    pub fn new(radii: Vec<f64>, epsilons: Vec<f64>, samples_per_scale: usize, seed: u64) -> Result<Self> {
        let s = Self {
            radii,
            epsilons,
            samples_per_scale,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    /// `δ_j = δ_1·2^{1−j}` with `ε_j = δ_j`.
    pub fn geometric(delta1: f64, count: usize, samples_per_scale: usize, seed: u64) -> Self {
        let radii: Vec<f64> = (0..count).map(|j| delta1 * 0.5f64.powi(j as i32)).collect();
        Self {
            epsilons: radii.clone(),
            radii,
            samples_per_scale,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.radii.len() < 3 {
            errs.push(format!("need at least 3 scales, got {}", self.radii.len()));
        }
        if self.radii.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            errs.push("radii must be positive and finite".to_string());
        }
        if self.radii.windows(2).any(|w| !(w[1] < w[0])) {
            errs.push("radii not decreasing".to_string());
        }
        if self.epsilons.len() != self.radii.len() {
            errs.push(format!(
                "epsilons has {} entries but radii has {}",
                self.epsilons.len(),
                self.radii.len()
            ));
        }
        if self.epsilons.iter().any(|&e| !(e >= 0.0) || !e.is_finite()) {
            errs.push("epsilons must be nonnegative and finite".to_string());
        }
        if self.epsilons.windows(2).any(|w| w[1] > w[0]) {
            errs.push("epsilons not nonincreasing".to_string());
        }
        if self.samples_per_scale == 0 {
            errs.push("samples_per_scale must be positive".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSchedule(errs.join("; ")))
        }
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    fn scale_seed(&self, j: usize, stream: u64) -> u64 {
        exec::derive_seed(self.seed, (j as u64) << 16 | stream)
    }
}

/// `x* ∈ D*_ε F(at)(y*)`, certified on the sample it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoderivativeElement {
    pub at: GraphPoint,
    pub y_star: Vec<f64>,
    pub x_star: Vec<f64>,
    pub eps: f64,
}

/// The minimizing coderivative element found at one scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleWitness {
    pub delta: f64,
    pub test_radius: f64,
    pub norm: f64,
    pub element: CoderivativeElement,
    #[serde(skip)]
    pub sample: Option<Arc<SampledGraph>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModulusEstimate {
    #[serde(with = "num")]
    pub value: f64,
    #[serde(with = "num_pairs")]
    pub per_scale: Vec<(f64, f64)>,
    pub stabilized: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub low_confidence: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub witness: Vec<ScaleWitness>,
}

impl ModulusEstimate {
    /// Infimum-type estimate from the raw per-scale infima. Each reported
    /// entry is the infimum over its own sample and all finer ones, which
    /// all lie in the same neighbourhood.
    fn from_infima(radii: &[f64], own: &[f64]) -> Self {
        let mut per_scale = vec![(0.0, 0.0); own.len()];
        let mut run = f64::INFINITY;
        for j in (0..own.len()).rev() {
            run = run.min(own[j]);
            per_scale[j] = (radii[j], run);
        }
        let value = *own.last().unwrap_or(&f64::INFINITY);
        let stabilized = per_scale.len() >= 2 && {
            let a = per_scale[per_scale.len() - 2].1;
            let b = per_scale[per_scale.len() - 1].1;
            a.is_finite() && b.is_finite() && b > 0.0 && (a - b).abs() <= STABLE_REL * a.max(b)
        };
        Self {
            value,
            per_scale,
            stabilized,
            low_confidence: false,
            witness: Vec::new(),
        }
    }

    pub fn is_infinite(&self) -> bool {
        self.value.is_infinite()
    }
}

/// JSON numbers with `"inf"` for `+∞`.
pub mod num {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        N(f64),
        S(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::N(v) => Ok(v),
            Repr::S(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad number {other:?}"))),
            },
        }
    }

    #[derive(serde::Serialize, Deserialize)]
    pub struct Wrap(#[serde(with = "self")] pub f64);
}

/// `[[δ, value], ...]` with `"inf"` allowed in either slot.
pub mod num_pairs {
    use super::num::Wrap;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[(f64, f64)], s: S) -> Result<S::Ok, S::Error> {
        let w: Vec<(Wrap, Wrap)> = v.iter().map(|&(a, b)| (Wrap(a), Wrap(b))).collect();
        w.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(f64, f64)>, D::Error> {
        let w: Vec<(Wrap, Wrap)> = Vec::deserialize(d)?;
        Ok(w.into_iter().map(|(a, b)| (a.0, b.0)).collect())
    }
}

/// Does `w* = (wx, wy)` satisfy `⟨w*, z − at⟩ ≤ (ε − η)·r` for every sample
/// point `z ≠ at` at pair distance `r ≤ test_radius`?
pub fn eps_normal_test(
    sample: &SampledGraph,
    at: &GraphPoint,
    wx: &[f64],
    wy: &[f64],
    eps: f64,
    test_radius: f64,
    pair: &ProductNormSpec,
) -> Result<bool> {
    if sample.index_of(at).is_none() {
        return Err(Error::NotInSample);
    }
    if !(test_radius > 0.0) {
        return Err(Error::OutOfRange(format!("test_radius {test_radius}")));
    }
    Ok(sample.points.iter().filter(|z| *z != at).all(|z| {
        let r = pair.dist(&z.x, &z.y, &at.x, &at.y);
        if r > test_radius || r == 0.0 {
            return true;
        }
        let du = linalg::sub(&z.x, &at.x);
        let dv = linalg::sub(&z.y, &at.y);
        linalg::dot(wx, &du) + linalg::dot(wy, &dv) <= (eps - ETA) * r
    }))
}

/// `x* ∈ D*_ε F(at)(y*)` on the sample, i.e. `(x*, −y*)` is an ε-normal.
pub fn coderivative_membership(
    sample: &SampledGraph,
    at: &GraphPoint,
    y_star: &[f64],
    x_star: &[f64],
    eps: f64,
    test_radius: f64,
    pair: &ProductNormSpec,
) -> Result<bool> {
    let dn = pair.right.dual_norm(y_star)?;
    if (dn - 1.0).abs() > 1e-9 {
        return Err(Error::NotUnit(dn));
    }
    pair.left.check(x_star)?;
    let neg: Vec<f64> = y_star.iter().map(|v| -v).collect();
    eps_normal_test(sample, at, x_star, &neg, eps, test_radius, pair)
}

/// Outcome of [`min_coderivative_norm`].
#[derive(Debug, Clone)]
pub struct CoderivativeMin {
    /// `+∞` when no direction admits any `x*`.
    pub norm: f64,
    pub element: Option<CoderivativeElement>,
    /// Set when `at` has no sample neighbour within `test_radius`.
    pub low_confidence: bool,
}

/// Neighbours of `at` as normalized constraint data `(du/r, dv/r, r)`.
struct Neighbours {
    du: Vec<Vec<f64>>,
    dv: Vec<Vec<f64>>,
}

fn neighbours(sample: &SampledGraph, at: &GraphPoint, test_radius: f64, pair: &ProductNormSpec) -> Neighbours {
    let mut du = Vec::new();
    let mut dv = Vec::new();
    for z in &sample.points {
        if z == at {
            continue;
        }
        let r = pair.dist(&z.x, &z.y, &at.x, &at.y);
        if r > test_radius || r == 0.0 {
            continue;
        }
        du.push(linalg::scale(&linalg::sub(&z.x, &at.x), 1.0 / r));
        dv.push(linalg::scale(&linalg::sub(&z.y, &at.y), 1.0 / r));
    }
    Neighbours { du, dv }
}

/// Minimum-norm `x*` for one direction `y*`, polished until the membership
/// certificate passes; `None` when the constraint family is infeasible.
#[allow(clippy::too_many_arguments)]
fn solve_direction(
    nb: &Neighbours,
    sample: &SampledGraph,
    at: &GraphPoint,
    y_star: &[f64],
    eps: f64,
    test_radius: f64,
    pair: &ProductNormSpec,
) -> Option<Vec<f64>> {
    let n = pair.left.dimension;
    let kind = pair.left.p.dual();
    for tau in [1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4] {
        let rhs: Vec<f64> = nb
            .dv
            .iter()
            .map(|dv| eps - ETA - tau + linalg::dot(y_star, dv))
            .collect();
        let x = crate::solver::min_norm_polyhedron(&nb.du, &rhs, n, kind)?;
        // Interior-point output carries ~1e-7 noise; try the cleaned-up point first.
        let scale = pair.left.dn(&x).max(1.0);
        let snapped: Vec<f64> = x.iter().map(|&v| if v.abs() <= 1e-6 * scale { 0.0 } else { v }).collect();
        for cand in [snapped, x] {
            if coderivative_membership(sample, at, y_star, &cand, eps, test_radius, pair).unwrap_or(false) {
                return Some(cand);
            }
        }
    }
    None
}

fn normalize_dual(v: &[f64], spec: &NormSpec) -> Option<Vec<f64>> {
    let d = spec.dn(v);
    (d > 0.0 && d.is_finite()).then(|| linalg::scale(v, 1.0 / d))
}

/// `min ‖x*‖` over `x* ∈ D*_ε F(at)(y*)` and `y*` ranging over `directions`,
/// followed by a pattern search on `y*` around the best grid direction when
/// the range has dimension ≥ 2.
pub fn min_coderivative_norm(
    sample: &SampledGraph,
    at: &GraphPoint,
    eps: f64,
    directions: &[Vec<f64>],
    test_radius: f64,
    pair: &ProductNormSpec,
    refine: bool,
) -> Result<CoderivativeMin> {
    if directions.is_empty() {
        return Err(Error::OutOfRange("no directions".into()));
    }
    if sample.index_of(at).is_none() {
        return Err(Error::NotInSample);
    }
    let nb = neighbours(sample, at, test_radius, pair);
    let low_confidence = nb.du.is_empty();
    let eval = |ys: &[f64]| -> Option<(f64, Vec<f64>)> {
        solve_direction(&nb, sample, at, ys, eps, test_radius, pair).map(|x| (pair.left.dn(&x), x))
    };
    let results: Vec<Option<(f64, Vec<f64>)>> = directions.iter().map(|d| eval(d)).collect();
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    for (d, r) in directions.iter().zip(results) {
        if let Some((nrm, x)) = r {
            if best.as_ref().map_or(true, |b| nrm < b.0) {
                best = Some((nrm, d.clone(), x));
            }
        }
    }
    let m = pair.right.dimension;
    if refine && m >= 2 {
        if let Some((mut bn, mut by, mut bx)) = best.take() {
            let mut h = 0.25;
            for _ in 0..6 {
                let mut improved = true;
                while improved {
                    improved = false;
                    for i in 0..m {
                        for s in [1.0, -1.0] {
                            let mut c = by.clone();
                            c[i] += s * h;
                            let Some(c) = normalize_dual(&c, &pair.right) else { continue };
                            if let Some((nrm, x)) = eval(&c) {
                                if nrm < bn * (1.0 - 1e-12) {
                                    bn = nrm;
                                    by = c;
                                    bx = x;
                                    improved = true;
                                }
                            }
                        }
                    }
                }
                h *= 0.5;
            }
            best = Some((bn, by, bx));
        }
    }
    Ok(match best {
        Some((norm, y_star, x_star)) => CoderivativeMin {
            norm,
            element: Some(CoderivativeElement {
                at: at.clone(),
                y_star,
                x_star,
                eps,
            }),
            low_confidence,
        },
        None => CoderivativeMin {
            norm: f64::INFINITY,
            element: None,
            low_confidence,
        },
    })
}

/// Number of dual directions used per coderivative minimization.
pub fn direction_count(m: usize) -> usize {
    match m {
        1 => 2,
        2 => 24,
        3 => 64,
        m => 24 * m,
    }
}

/// Candidate graph points for one scale: the base and up to seven sample
/// points at pair distance in `(δ/8, δ/2]`, spread over the sample order.
fn candidates(sample: &SampledGraph, base: &GraphPoint, delta: f64, pair: &ProductNormSpec) -> Vec<GraphPoint> {
    let eligible: Vec<&GraphPoint> = sample
        .points
        .iter()
        .filter(|p| {
            let r = pair.dist(&p.x, &p.y, &base.x, &base.y);
            r > delta / 8.0 && r <= delta / 2.0
        })
        .collect();
    let mut out = vec![base.clone()];
    let want = 7usize.min(eligible.len());
    for i in 0..want {
        out.push(eligible[i * eligible.len() / want].clone());
    }
    out
}

/// `rg⁺F(x̄,ȳ)`: per scale `j`, the least `‖x*‖` over `x* ∈ D*_{ε_j}F(x,y)(S_{Y*})`
/// for graph points `(x,y)` within `δ_j` of the base.
pub fn rg_plus_estimate(f: &MappingModel, base: &GraphPoint, schedule: &ScaleSchedule) -> Result<ModulusEstimate> {
    schedule.validate()?;
    let pair = f.pair_spec();
    let m = f.range.dimension;
    let samples = schedule.samples_per_scale;
    let mut own = Vec::with_capacity(schedule.len());
    let mut witness = Vec::new();
    let mut low = false;
    for (j, (&delta, &eps)) in schedule.radii.iter().zip(&schedule.epsilons).enumerate() {
        let sample = f.sample_graph(base, delta, samples, schedule.scale_seed(j, 0))?;
        let cands = candidates(&sample, base, delta, &pair);
        let dirs = sphere_grid(&f.range, direction_count(m), schedule.scale_seed(j, 1))?;
        let tr = delta / 2.0;
        let results: Vec<Result<(CoderivativeMin, Arc<SampledGraph>)>> = exec::map_range(cands.len(), |c| {
            let local = f.sample_graph(&cands[c], tr, samples, schedule.scale_seed(j, 2 + c as u64))?;
            let r = min_coderivative_norm(&local, &cands[c], eps, &dirs, tr, &pair, true)?;
            Ok((r, Arc::new(local)))
        });
        let results: Vec<(CoderivativeMin, Arc<SampledGraph>)> = results.into_iter().collect::<Result<_>>()?;
        let min = results.iter().fold(f64::INFINITY, |a, r| a.min(r.0.norm));
        // Among near-ties prefer a point off the base, the farther the better.
        let tie = min + 0.02 * min.abs();
        let mut pick: Option<usize> = None;
        for (i, (r, _)) in results.iter().enumerate() {
            if r.norm > tie || r.element.is_none() {
                continue;
            }
            let d = pair.dist(&cands[i].x, &cands[i].y, &base.x, &base.y);
            let better = match pick {
                None => true,
                Some(p) => {
                    let dp = pair.dist(&cands[p].x, &cands[p].y, &base.x, &base.y);
                    let off = f.domain.dist(&cands[i].x, &base.x) > 0.0;
                    let off_p = f.domain.dist(&cands[p].x, &base.x) > 0.0;
                    (off && !off_p) || (off == off_p && d > dp)
                }
            };
            if better {
                pick = Some(i);
            }
        }
        if let Some(i) = pick {
            let (r, local) = &results[i];
            low |= r.low_confidence;
            witness.push(ScaleWitness {
                delta,
                test_radius: tr,
                norm: r.norm,
                element: r.element.clone().unwrap(),
                sample: Some(local.clone()),
            });
        }
        log::debug!("rg+ scale {j}: delta={delta:e} inf={min}");
        own.push(min);
    }
    let mut est = ModulusEstimate::from_infima(&schedule.radii, &own);
    est.low_confidence = low;
    est.witness = witness;
    Ok(est)
}

/// Product sample for the `rg` ratio at one scale.
#[derive(Debug, Clone)]
pub struct RgSample {
    pub base: GraphPoint,
    pub delta: f64,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
}

/// `x` from a graph sample in `B_δ`, `y` from `ȳ` plus a direction grid,
/// and from images of anchor points pushed off by `t·w` for a ladder of
/// small `t`. Perturbation features inside the ball are always anchors.
pub fn rg_sample(f: &MappingModel, base: &GraphPoint, delta: f64, samples: usize, seed: u64) -> Result<RgSample> {
    let g = f.sample_graph(base, delta, samples, seed)?;
    let mut xs: Vec<Vec<f64>> = Vec::new();
    for p in &g.points {
        if !xs.contains(&p.x) {
            xs.push(p.x.clone());
        }
    }
    let m = f.range.dimension;
    let grid: Vec<Vec<f64>> = sphere_grid(&f.range, if m == 1 { 2 } else { 2 * m + 8 * m * (m - 1) }, exec::derive_seed(seed, 7))?
        .into_iter()
        .map(|w| {
            let n = f.range.n(&w);
            linalg::scale(&w, 1.0 / n)
        })
        .collect();
    let mut ys: Vec<Vec<f64>> = vec![base.y.clone()];
    let push = |y: Vec<f64>, ys: &mut Vec<Vec<f64>>| {
        if f.range.dist(&y, &base.y) <= delta && !ys.contains(&y) {
            ys.push(y);
        }
    };
    for w in &grid {
        for lam in [0.5, 0.125] {
            let mut y = base.y.clone();
            linalg::axpy(&mut y, lam * delta, w);
            push(y, &mut ys);
        }
    }
    let mut anchors: Vec<Vec<f64>> = Vec::new();
    for feat in f.features() {
        if xs.contains(&feat.center) && !anchors.contains(&feat.center) {
            anchors.push(feat.center.clone());
        }
    }
    for x in &xs {
        if anchors.len() >= 12 + f.features().len() {
            break;
        }
        if !anchors.contains(x) {
            anchors.push(x.clone());
        }
    }
    for a in &anchors {
        for v in f.images(a) {
            for t in [delta / 16.0, delta * 1e-3, delta * 1e-5] {
                for w in &grid {
                    let mut y = v.clone();
                    linalg::axpy(&mut y, t, w);
                    push(y, &mut ys);
                }
            }
        }
    }
    Ok(RgSample {
        base: base.clone(),
        delta,
        xs,
        ys,
    })
}

/// `inf d(y,F(x)) / d(x,F⁻¹(y))` over the sample. `F⁻¹(y)` is computed once
/// per `y`; ratios with an empty inverse image count as 0.
pub fn rg_on_sample(f: &MappingModel, sample: &RgSample) -> f64 {
    let images: Vec<Vec<Vec<f64>>> = sample.xs.iter().map(|x| f.images(x)).collect();
    let per_y: Vec<f64> = exec::map(&sample.ys, |y| {
        let nums: Vec<f64> = images
            .iter()
            .map(|imgs| imgs.iter().fold(f64::INFINITY, |m, v| m.min(f.range.dist(y, v))))
            .collect();
        let min_num = nums.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
        if !min_num.is_finite() {
            return f64::INFINITY;
        }
        let tol = root_tolerance(y, min_num);
        let pre = f.preimage_in(y, &[&sample.base.x], tol, Some((&sample.base.x, 4.0 * sample.delta)));
        let mut best = f64::INFINITY;
        for (x, &num) in sample.xs.iter().zip(&nums) {
            if !num.is_finite() || num <= 0.0 {
                continue;
            }
            let den = pre.distance(x, &f.domain);
            if den <= 0.0 {
                continue;
            }
            let ratio = if den.is_infinite() { 0.0 } else { num / den };
            best = best.min(ratio);
        }
        best
    });
    per_y.into_iter().fold(f64::INFINITY, f64::min)
}

/// `rg F(x̄,ȳ)`: per scale the infimum of the ratio over sampled pairs in
/// `B_δ(x̄) × B_δ(ȳ)`; `+∞` when no pair has a positive denominator.
pub fn rg_estimate(f: &MappingModel, base: &GraphPoint, schedule: &ScaleSchedule) -> Result<ModulusEstimate> {
    schedule.validate()?;
    let mut own = Vec::with_capacity(schedule.len());
    for (j, &delta) in schedule.radii.iter().enumerate() {
        let s = rg_sample(f, base, delta, schedule.samples_per_scale, schedule.scale_seed(j, 100))?;
        let v = rg_on_sample(f, &s);
        log::debug!("rg scale {j}: delta={delta:e} xs={} ys={} inf={v}", s.xs.len(), s.ys.len());
        own.push(v);
    }
    Ok(ModulusEstimate::from_infima(&schedule.radii, &own))
}

/// Uniform point in `B_r(c)` for the Euclidean geometry of the coordinates
/// (the norm only enters through the radius check).
fn ball_point<R: rand::Rng>(c: &[f64], r: f64, spec: &NormSpec, rng: &mut R) -> Vec<f64> {
    let n = c.len();
    let dir = spec.random_unit(rng);
    let u: f64 = rng.gen::<f64>().powf(1.0 / n as f64);
    let mut x = c.to_vec();
    linalg::axpy(&mut x, r * u, &dir);
    x
}

/// `lip f(x̄)`: per scale the supremum of `‖f(x) − f(x')‖/‖x − x'‖` over
/// sampled pairs in `B_δ(x̄)`, with extra pairs inside perturbation
/// features. The value is the finest-scale supremum.
pub fn lip_estimate(
    field: &dyn VectorField,
    xbar: &[f64],
    schedule: &ScaleSchedule,
    domain: &NormSpec,
    range: &NormSpec,
) -> Result<ModulusEstimate> {
    schedule.validate()?;
    domain.check(xbar)?;
    let feats = field.features();
    let mut per_scale = Vec::with_capacity(schedule.len());
    for (j, &delta) in schedule.radii.iter().enumerate() {
        let seed = schedule.scale_seed(j, 200);
        let n_pts = 4 * schedule.samples_per_scale;
        let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(4 * n_pts);
        let mut rng = exec::rng(seed, 0);
        let mut pts: Vec<Vec<f64>> = (0..n_pts).map(|_| ball_point(xbar, delta, domain, &mut rng)).collect();
        pts.push(xbar.to_vec());
        for i in 0..pts.len() {
            let k = (i * 7 + 3) % pts.len();
            pairs.push((pts[i].clone(), pts[k].clone()));
            let h = delta * 10f64.powi(-(1 + (i % 4) as i32));
            let d = domain.random_unit(&mut rng);
            let mut x2 = pts[i].clone();
            linalg::axpy(&mut x2, h, &d);
            pairs.push((pts[i].clone(), x2));
        }
        for feat in &feats {
            if domain.dist(&feat.center, xbar) > delta + feat.radius {
                continue;
            }
            let mut frng = exec::rng(seed, 1 + pairs.len() as u64);
            for i in 0..n_pts {
                let p = ball_point(&feat.center, feat.radius, domain, &mut frng);
                let h = feat.radius * 10f64.powi(-(1 + (i % 3) as i32));
                let d = domain.random_unit(&mut frng);
                let mut p2 = p.clone();
                linalg::axpy(&mut p2, h, &d);
                pairs.push((p.clone(), p2));
                pairs.push((p, feat.center.clone()));
            }
        }
        let quotients: Vec<f64> = exec::map(&pairs, |(a, b)| {
            if domain.dist(a, xbar) > delta || domain.dist(b, xbar) > delta {
                return 0.0;
            }
            let d = domain.dist(a, b);
            if d == 0.0 {
                return 0.0;
            }
            range.dist(&field.eval(a), &field.eval(b)) / d
        });
        let sup = quotients.into_iter().fold(0.0, f64::max);
        per_scale.push((delta, sup));
    }
    let value = per_scale.last().map(|p| p.1).unwrap_or(0.0);
    let stabilized = per_scale.len() >= 2 && {
        let a = per_scale[per_scale.len() - 2].1;
        let b = value;
        (a == 0.0 && b == 0.0) || (a - b).abs() <= STABLE_REL * a.max(b)
    };
    Ok(ModulusEstimate {
        value,
        per_scale,
        stabilized,
        low_confidence: false,
        witness: Vec::new(),
    })
}

/// Upper bound on the operator norm `‖A‖` from the domain norm to the range
/// norm: exact for `(2,2)`, `(1,·)` and `(∞,·)`, and `‖A‖_{1→q}·√n` otherwise.
pub fn operator_norm_bound(a: &Matrix, domain: &NormSpec, range: &NormSpec) -> Result<f64> {
    let n = a.cols();
    Ok(match (domain.p, range.p) {
        (NormKind::Two, NormKind::Two) => crate::oracles::sigma_min(a)?.sigma_max(),
        (NormKind::One, _) => (0..n)
            .map(|c| range.n(&(0..a.rows()).map(|r| a[(r, c)]).collect::<Vec<_>>()))
            .fold(0.0, f64::max),
        (NormKind::Inf, _) => {
            let mut best = 0.0f64;
            for mask in 0..(1usize << n) {
                let s: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
                best = best.max(range.n(&a.mul_vec(&s)));
            }
            best
        }
        (NormKind::Two, _) => {
            let col_max = (0..n)
                .map(|c| range.n(&(0..a.rows()).map(|r| a[(r, c)]).collect::<Vec<_>>()))
                .fold(0.0, f64::max);
            col_max * (n as f64).sqrt()
        }
    })
}

/// Sum rule for ε-coderivatives under a differentiable perturbation: for
/// sampled `x* ∈ D*_{ε₁}F(x̄,ȳ)(y*)` with `ε₁ = ε/(‖∇f(x̄)‖+1)`, checks
/// `x* + ∇f(x̄)ᵀy* ∈ D*_ε(F+f)(x̄, ȳ+f(x̄))(y*)` on the shifted sample.
pub fn coderivative_shift_check(
    f: &MappingModel,
    field: &dyn VectorField,
    base: &GraphPoint,
    eps: f64,
    trials: usize,
    seed: u64,
) -> Result<bool> {
    if field.domain_dim() != f.domain.dimension || field.range_dim() != f.range.dimension {
        return Err(Error::DimensionMismatch {
            expected: f.domain.dimension,
            got: field.domain_dim(),
        });
    }
    let jac = field_jacobian(field, &base.x);
    if jac.rows() != f.range.dimension || jac.cols() != f.domain.dimension {
        return Err(Error::NotDifferentiable);
    }
    let pair = f.pair_spec();
    let eps1 = eps / (operator_norm_bound(&jac, &f.domain, &f.range)? + 1.0);
    let tr = eps.max(1e-6);
    let sample = f.sample_graph(base, tr, 150, seed)?;
    let shifted = SampledGraph {
        base: GraphPoint::new(base.x.clone(), linalg::add(&base.y, &field.eval(&base.x))),
        points: sample
            .points
            .iter()
            .map(|p| GraphPoint::new(p.x.clone(), linalg::add(&p.y, &field.eval(&p.x))))
            .collect(),
        radius: sample.radius,
    };
    let dirs = sphere_grid(&f.range, trials.max(2 * f.range.dimension), exec::derive_seed(seed, 1))?;
    let mut rng = exec::rng(seed, 2);
    let mut checked = 0usize;
    for y_star in dirs.iter().take(trials.max(1)) {
        let r = min_coderivative_norm(&sample, base, eps1, std::slice::from_ref(y_star), tr, &pair, false)?;
        let Some(el) = r.element else { continue };
        let mut cands = vec![el.x_star.clone()];
        for _ in 0..3 {
            let g = f.domain.random_unit(&mut rng);
            let mut x = el.x_star.clone();
            linalg::axpy(&mut x, 0.1 * eps1, &g);
            cands.push(x);
        }
        for x_star in cands {
            if !coderivative_membership(&sample, base, y_star, &x_star, eps1, tr, &pair)? {
                continue;
            }
            checked += 1;
            let moved = linalg::add(&x_star, &jac.tr_mul_vec(y_star));
            if !coderivative_membership(&shifted, &shifted.base, y_star, &moved, eps, tr, &pair)? {
                return Ok(false);
            }
        }
    }
    Ok(checked > 0 || trials == 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mappings::{Builtin, LinearField, ZeroField};

    fn origin(n: usize) -> GraphPoint {
        GraphPoint::new(vec![0.0; n], vec![0.0; n])
    }

    fn line_sample() -> (MappingModel, SampledGraph) {
        let f = MappingModel::identity(1);
        let s = f.sample_graph(&origin(1), 1.0, 80, 5).unwrap();
        (f, s)
    }

    #[test]
    fn schedule_validation() {
        assert!(ScaleSchedule::default().validate().is_ok());
        let bad = ScaleSchedule {
            radii: vec![0.1, 0.5, 0.01],
            epsilons: vec![0.1, 0.1, 0.01],
            samples_per_scale: 10,
            seed: 0,
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("radii not decreasing"), "{msg}");
        assert!(ScaleSchedule::new(vec![1.0, 0.5], vec![1.0, 0.5], 10, 0).is_err());
    }

    #[test]
    fn eps_normal_examples() {
        let (f, s) = line_sample();
        let pair = f.pair_spec();
        let o = origin(1);
        assert!(eps_normal_test(&s, &o, &[1.0], &[-1.0], 0.01, 1.0, &pair).unwrap());
        assert!(!eps_normal_test(&s, &o, &[1.0], &[1.0], 0.1, 1.0, &pair).unwrap());
        assert!(eps_normal_test(&s, &o, &[0.0], &[0.0], 0.1, 1.0, &pair).unwrap());
        let stranger = GraphPoint::new(vec![9.0], vec![9.0]);
        assert!(matches!(
            eps_normal_test(&s, &stranger, &[0.0], &[0.0], 0.1, 1.0, &pair),
            Err(Error::NotInSample)
        ));
    }

    #[test]
    fn membership_examples() {
        let (f, s) = line_sample();
        let pair = f.pair_spec();
        let o = origin(1);
        assert!(coderivative_membership(&s, &o, &[1.0], &[1.0], 0.05, 1.0, &pair).unwrap());
        assert!(!coderivative_membership(&s, &o, &[1.0], &[0.0], 0.05, 1.0, &pair).unwrap());
        assert!(matches!(
            coderivative_membership(&s, &o, &[2.0], &[0.0], 0.05, 1.0, &pair),
            Err(Error::NotUnit(_))
        ));
        let ab = MappingModel::builtin(Builtin::AbsBranches, 1);
        let s2 = ab.sample_graph(&o, 1.0, 80, 5).unwrap();
        assert!(!coderivative_membership(&s2, &o, &[1.0], &[1.0], 0.05, 1.0, &ab.pair_spec()).unwrap());
    }

    #[test]
    fn min_norm_identity_and_constant() {
        let (f, s) = line_sample();
        let dirs = sphere_grid(&f.range, 2, 0).unwrap();
        let r = min_coderivative_norm(&s, &origin(1), 1e-3, &dirs, 1.0, &f.pair_spec(), true).unwrap();
        assert!((r.norm - 1.0).abs() < 3e-3, "{}", r.norm);
        let z = MappingModel::builtin(Builtin::ConstantZero, 1);
        let s = z.sample_graph(&origin(1), 1.0, 80, 5).unwrap();
        let r = min_coderivative_norm(&s, &origin(1), 1e-3, &dirs, 1.0, &z.pair_spec(), true).unwrap();
        assert_eq!(r.norm, 0.0);
        assert_eq!(r.element.unwrap().x_star, vec![0.0]);
    }

    #[test]
    fn min_norm_diag_matches_sigma_min() {
        let f = MappingModel::linear(Matrix::diag(&[2.0, 0.5]));
        let s = f.sample_graph(&origin(2), 0.1, 200, 1).unwrap();
        let dirs = sphere_grid(&f.range, 24, 1).unwrap();
        let r = min_coderivative_norm(&s, &origin(2), 1e-3, &dirs, 0.1, &f.pair_spec(), true).unwrap();
        assert!((r.norm - 0.5).abs() < 0.01, "{}", r.norm);
        let el = r.element.unwrap();
        assert!(coderivative_membership(&s, &el.at, &el.y_star, &el.x_star, el.eps, 0.1, &f.pair_spec()).unwrap());
    }

    #[test]
    fn enlarging_eps_never_increases_min_norm() {
        let f = MappingModel::linear(Matrix::from_rows(&[vec![1.0, 0.3], vec![-0.2, 0.8]]).unwrap());
        let s = f.sample_graph(&origin(2), 0.2, 120, 9).unwrap();
        let dirs = sphere_grid(&f.range, 16, 3).unwrap();
        let mut prev = f64::INFINITY;
        for eps in [1e-4, 1e-3, 1e-2, 0.05, 0.1] {
            let r = min_coderivative_norm(&s, &origin(2), eps, &dirs, 0.2, &f.pair_spec(), false).unwrap();
            assert!(r.norm <= prev + 1e-7, "{eps}: {} > {prev}", r.norm);
            prev = r.norm;
        }
    }

    #[test]
    fn rg_identity_and_abs() {
        let sch = ScaleSchedule::geometric(0.25, 4, 60, 2);
        let e = rg_estimate(&MappingModel::identity(1), &origin(1), &sch).unwrap();
        assert!((e.value - 1.0).abs() < 0.05 * 1.0, "{}", e.value);
        let ab = MappingModel::builtin(Builtin::AbsBranches, 1);
        let e = rg_estimate(&ab, &origin(1), &sch).unwrap();
        assert!((e.value - 1.0).abs() < 0.1, "{}", e.value);
    }

    #[test]
    fn rg_per_scale_is_monotone() {
        let f = MappingModel::linear(Matrix::diag(&[2.0, 0.5]));
        let sch = ScaleSchedule::geometric(0.25, 4, 60, 2);
        let e = rg_estimate(&f, &origin(2), &sch).unwrap();
        for w in e.per_scale.windows(2) {
            assert!(w[0].1 <= w[1].1);
        }
        assert!((e.value - 0.5).abs() <= 0.05, "{}", e.value);
    }

    #[test]
    fn lip_of_linear_and_square() {
        let sch = ScaleSchedule::geometric(0.25, 5, 60, 4);
        let sp = NormSpec::euclidean(1);
        let e = lip_estimate(&LinearField(Matrix::diag(&[-3.0])), &[0.7], &sch, &sp, &sp).unwrap();
        assert!((e.value - 3.0).abs() <= 0.03, "{}", e.value);
        let sq = crate::mappings::FnField::new(1, 1, |x: &[f64]| vec![x[0] * x[0]]);
        let sch = ScaleSchedule::geometric(0.08, 4, 60, 4);
        let e = lip_estimate(&sq, &[0.0], &sch, &sp, &sp).unwrap();
        assert!(e.value < 0.05, "{}", e.value);
    }

    #[test]
    fn shift_check_examples() {
        let id = MappingModel::identity(1);
        let z = ZeroField { domain: 1, range: 1 };
        assert!(coderivative_shift_check(&id, &z, &origin(1), 0.05, 4, 1).unwrap());
        let lin = LinearField(Matrix::diag(&[0.37]));
        assert!(coderivative_shift_check(&id, &lin, &origin(1), 0.05, 4, 1).unwrap());
        let ab = MappingModel::builtin(Builtin::AbsBranches, 1);
        let p = GraphPoint::new(vec![0.5], vec![-0.5]);
        assert!(coderivative_shift_check(&ab, &lin, &p, 0.05, 4, 1).unwrap());
    }

    #[test]
    fn estimate_json_uses_inf_sentinel() {
        let e = ModulusEstimate {
            value: f64::INFINITY,
            per_scale: vec![(0.5, f64::INFINITY), (0.25, 1.5)],
            stabilized: false,
            low_confidence: false,
            witness: Vec::new(),
        };
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, r#"{"value":"inf","per_scale":[[0.5,"inf"],[0.25,1.5]],"stabilized":false}"#);
        let back: ModulusEstimate = serde_json::from_str(&s).unwrap();
        assert!(back.value.is_infinite());
        assert_eq!(back.per_scale[1], (0.25, 1.5));
    }
}
