//! Radius-level checks: `rg ≤ rad ≤ rg⁺`, destabilization by the bump
//! perturbation, interpolation `rg(F + αf) = rg F − r`, the
//! Lyusternik–Graves lower bound and single-valued localizations.
//!
//! Every check lands in a [`RadiusReport`]. Residuals are signed so that a
//! positive value means the check is violated by that amount.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg;
use crate::mappings::{GraphPoint, MappingModel, Preimage, VectorField};
use crate::moduli::{lip_estimate, num, rg_estimate, rg_plus_estimate, ModulusEstimate, ScaleSchedule};
use crate::perturbation::{build_from_estimate, scale_perturbation, BumpPerturbation, Construction};
use crate::spaces::sphere_grid;

/// Relative tolerance for `rg` against `rg⁺` and for the Lyusternik–Graves bound.
pub const LEMMA_TOL: f64 = 0.05;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RadiusReport {
    pub rg: Option<ModulusEstimate>,
    pub rg_plus: Option<ModulusEstimate>,
    #[serde(with = "num")]
    pub lip_f: f64,
    pub rg_perturbed: Option<ModulusEstimate>,
    #[serde(with = "num")]
    pub r_target: f64,
    pub residuals: BTreeMap<String, f64>,
    pub verdicts: BTreeMap<String, bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<BumpPerturbation>,
}

impl RadiusReport {
    fn check(&mut self, name: &str, residual: f64) {
        self.residuals.insert(name.to_string(), residual);
        self.verdicts.insert(name.to_string(), residual <= 0.0);
    }

    pub fn passed(&self) -> bool {
        self.verdicts.values().all(|&v| v)
    }
}

/// `rg ≤ rg⁺ + 0.05·max(1, rg⁺)`, as a violation-positive residual.
pub fn lemma1_residual(rg: f64, rg_plus: f64) -> f64 {
    if rg_plus.is_infinite() {
        return f64::NEG_INFINITY;
    }
    rg - rg_plus - LEMMA_TOL * rg_plus.max(1.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadiusBounds {
    #[serde(with = "num")]
    pub lower: f64,
    #[serde(with = "num")]
    pub upper: f64,
    /// `|upper − lower| ≤ 10%` relative, when both estimates are stabilized.
    pub near_equal: Option<bool>,
    pub rg: ModulusEstimate,
    pub rg_plus: ModulusEstimate,
}

/// `rg` as the lower and `rg⁺` as the upper bound on the radius.
pub fn radius_bounds(f: &MappingModel, base: &GraphPoint, schedule: &ScaleSchedule) -> Result<RadiusBounds> {
    let rg = rg_estimate(f, base, schedule)?;
    let rg_plus = rg_plus_estimate(f, base, schedule)?;
    let near_equal = (rg.stabilized && rg_plus.stabilized)
        .then(|| (rg_plus.value - rg.value).abs() <= 0.1 * rg.value.max(rg_plus.value));
    Ok(RadiusBounds {
        lower: rg.value,
        upper: rg_plus.value,
        near_equal,
        rg,
        rg_plus,
    })
}

fn perturbed(f: &MappingModel, p: &BumpPerturbation, base: &GraphPoint) -> Result<(MappingModel, GraphPoint)> {
    let field: Arc<dyn VectorField> = Arc::new(p.clone());
    let g = f.add_perturbation(field, 1.0, &base.x)?;
    let shifted = GraphPoint::new(base.x.clone(), linalg::add(&base.y, &p.eval(&base.x)));
    Ok((g, shifted))
}

/// Builds the bump perturbation and checks that it is cheap (`lip f` close
/// to `rg⁺`) and effective (`rg(F + f)` below `10%` of `rg⁺`).
pub fn verify_destabilization(f: &MappingModel, base: &GraphPoint, schedule: &ScaleSchedule, k: usize) -> Result<RadiusReport> {
    let rg = rg_estimate(f, base, schedule)?;
    let est = rg_plus_estimate(f, base, schedule)?;
    let mut report = RadiusReport {
        r_target: est.value,
        ..Default::default()
    };
    if est.value <= 1e-12 {
        // f ≡ 0 already witnesses the failure of regularity.
        report.lip_f = 0.0;
        report.check("lemma1", lemma1_residual(rg.value, est.value));
        report.check("destabilized", rg.value - 0.1 * est.value.max(1e-12));
        report.perturbation = Some(BumpPerturbation::zero(base.x.clone(), f.range.dimension, f.domain.p));
        report.rg_perturbed = Some(rg.clone());
        report.rg = Some(rg);
        report.rg_plus = Some(est);
        return Ok(report);
    }
    let c = build_from_estimate(f, base, est.clone(), schedule_k(k))?;
    let p = c.perturbation.clone();
    let lip = lip_estimate(&p, &base.x, schedule, &f.domain, &f.range)?;
    let (g, gbase) = perturbed(f, &p, base)?;
    let rgp = rg_estimate(&g, &gbase, schedule)?;
    let plus = est.value;
    report.lip_f = lip.value;
    report.check("lemma1", lemma1_residual(rg.value, plus));
    report.check("lip_upper", lip.value - 1.1 * plus);
    report.check("lip_lower", 0.85 * plus - lip.value);
    report.check("destabilized", rgp.value - 0.1 * plus);
    report.perturbation = Some(p);
    report.rg = Some(rg);
    report.rg_plus = Some(est);
    report.rg_perturbed = Some(rgp);
    Ok(report)
}

fn schedule_k(k: usize) -> usize {
    k.max(3)
}

/// `rg(F + αf) ≈ rg F − r` and `lip(αf) ≈ r` with `α = r/rg F`, both within
/// `15%` of `rg F`. For `r = 0` the perturbation is `f ≡ 0`.
pub fn verify_interpolation(
    f: &MappingModel,
    base: &GraphPoint,
    r: f64,
    schedule: &ScaleSchedule,
    k: usize,
) -> Result<RadiusReport> {
    let rg = rg_estimate(f, base, schedule)?;
    if !(r >= 0.0) || !rg.value.is_finite() || r > 1.05 * rg.value {
        return Err(Error::OutOfRange(format!("r = {r} not in [0, rg = {}]", rg.value)));
    }
    let tol = 0.15 * rg.value;
    let mut report = RadiusReport {
        r_target: r,
        ..Default::default()
    };
    let (p, alpha, construction): (BumpPerturbation, f64, Option<Construction>) = if r == 0.0 {
        (BumpPerturbation::zero(base.x.clone(), f.range.dimension, f.domain.p), 0.0, None)
    } else {
        let est = rg_plus_estimate(f, base, schedule)?;
        let c = build_from_estimate(f, base, est, schedule_k(k))?;
        let alpha = (r / rg.value).min(1.0);
        (scale_perturbation(&c.perturbation, alpha)?, alpha, Some(c))
    };
    let (lip, rgp) = if r == 0.0 {
        (0.0, rg.clone())
    } else {
        let lip = lip_estimate(&p, &base.x, schedule, &f.domain, &f.range)?;
        let (g, gbase) = perturbed(f, &p, base)?;
        (lip.value, rg_estimate(&g, &gbase, schedule)?)
    };
    report.lip_f = lip;
    report.alpha = Some(alpha);
    report.check("lip_matches_r", (lip - r).abs() - tol);
    report.check("rg_drops_by_r", (rgp.value - (rg.value - r)).abs() - tol);
    if let Some(c) = construction {
        report.rg_plus = Some(c.rg_plus);
    }
    report.perturbation = Some(p);
    report.rg = Some(rg);
    report.rg_perturbed = Some(rgp);
    Ok(report)
}

/// `rg(F + f) ≥ rg F − lip f(x̄)`: residual `(rg F − lip f) − rg(F + f)`,
/// passing when at most `0.05·max(1, rg F)`.
pub fn verify_lyusternik_graves(
    f: &MappingModel,
    base: &GraphPoint,
    field: Arc<dyn VectorField>,
    schedule: &ScaleSchedule,
) -> Result<RadiusReport> {
    let rg = rg_estimate(f, base, schedule)?;
    let lip = lip_estimate(field.as_ref(), &base.x, schedule, &f.domain, &f.range)?;
    let shifted = GraphPoint::new(base.x.clone(), linalg::add(&base.y, &field.eval(&base.x)));
    let g = f.add_perturbation(field, 1.0, &base.x)?;
    let rgp = rg_estimate(&g, &shifted, schedule)?;
    let residual = (rg.value - lip.value) - rgp.value;
    let mut report = RadiusReport {
        lip_f: lip.value,
        r_target: lip.value,
        ..Default::default()
    };
    report.residuals.insert("lyusternik_graves".into(), residual);
    report
        .verdicts
        .insert("lyusternik_graves".into(), residual <= LEMMA_TOL * rg.value.max(1.0));
    report.rg = Some(rg);
    report.rg_perturbed = Some(rgp);
    Ok(report)
}

/// Does `F⁻¹` have a single-valued localization around `(ȳ, x̄)`? For grid
/// points `y ∈ B_radius(ȳ)` the slice `F⁻¹(y) ∩ B_radius(x̄)` must be empty
/// or one cluster of diameter at most `radius/20`.
pub fn strong_regularity_localization_check(
    f: &MappingModel,
    base: &GraphPoint,
    radius: f64,
    grid: usize,
) -> Result<bool> {
    if !f.on_graph(base) {
        return Err(Error::NotOnGraph(f.distance_to_image(&base.x, &base.y)));
    }
    let cluster_tol = radius / 20.0;
    let dirs = sphere_grid(&f.range, grid.max(2 * f.range.dimension), 17)?;
    let mut ys = vec![base.y.clone()];
    for w in &dirs {
        let w = linalg::scale(w, 1.0 / f.range.n(w));
        for lam in [0.25, 0.5, 0.9] {
            let mut y = base.y.clone();
            linalg::axpy(&mut y, lam * radius, &w);
            ys.push(y);
        }
    }
    let ok: Vec<bool> = exec::map(&ys, |y| {
        let pre = f.preimage_in(y, &[&base.x], 1e-13 * (1.0 + linalg::euclid(y)), Some((&base.x, radius)));
        match pre {
            Preimage::Empty => true,
            Preimage::Everything => false,
            Preimage::Affine(set) => {
                // A line or plane through the ball is never a single point.
                pre_distance(&Preimage::Affine(set), f, &base.x) >= radius
            }
            Preimage::Points(pts) => {
                let inside: Vec<&Vec<f64>> = pts.iter().filter(|p| f.domain.dist(p, &base.x) < radius).collect();
                inside
                    .iter()
                    .all(|a| inside.iter().all(|b| f.domain.dist(a, b) <= cluster_tol))
            }
        }
    });
    Ok(ok.into_iter().all(|v| v))
}

fn pre_distance(p: &Preimage, f: &MappingModel, x: &[f64]) -> f64 {
    p.distance(x, &f.domain)
}
