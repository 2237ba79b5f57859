//! Set-valued mappings `F: ℝⁿ ⇉ ℝᵐ`: linear maps, unions of smooth
//! branches, finite graphs and perturbation sums `F + αf`.
//!
//! Every variant answers the same three queries: `images(x)`,
//! `d(y, F(x))` and `d(x, F⁻¹(y))`. Inverse images of perturbed functional
//! variants are found by multi-start Levenberg–Marquardt on each branch.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, AffineSet, Matrix};
use crate::perturbation::BumpPerturbation;
use crate::spaces::{NormKind, NormSpec, ProductNormSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl GraphPoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { x, y }
    }
}

/// Finite sample of `gph F` around `base`. `points[0]` is the base point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampledGraph {
    pub base: GraphPoint,
    pub points: Vec<GraphPoint>,
    pub radius: f64,
}

impl SampledGraph {
    /// Index of `at` in the sample (bitwise match).
    pub fn index_of(&self, at: &GraphPoint) -> Option<usize> {
        self.points.iter().position(|p| p == at)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A region where a perturbation is active; used to steer sampling and
/// root finding towards the places where the function actually varies.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Single-valued function `f: ℝⁿ → ℝᵐ` usable as a perturbation.
pub trait VectorField: Send + Sync + fmt::Debug {
    fn domain_dim(&self) -> usize;
    fn range_dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Vec<f64>;

    /// Analytic Jacobian when available.
    fn jacobian(&self, _x: &[f64]) -> Option<Matrix> {
        None
    }

    fn features(&self) -> Vec<Feature> {
        Vec::new()
    }
}

/// Jacobian of `f` at `x`, analytic when the field provides it and central
/// differences otherwise.
pub fn field_jacobian(f: &dyn VectorField, x: &[f64]) -> Matrix {
    if let Some(j) = f.jacobian(x) {
        return j;
    }
    let scale = x.iter().fold(1e-3f64, |m, a| m.max(a.abs()));
    crate::oracles::finite_difference_jacobian(|u| f.eval(u), x, 1e-6 * scale)
}

#[derive(Debug, Clone, Copy)]
pub struct ZeroField {
    pub domain: usize,
    pub range: usize,
}

impl VectorField for ZeroField {
    fn domain_dim(&self) -> usize {
        self.domain
    }
    fn range_dim(&self) -> usize {
        self.range
    }
    fn eval(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.range]
    }
    fn jacobian(&self, _x: &[f64]) -> Option<Matrix> {
        Some(Matrix::zeros(self.range, self.domain))
    }
}

/// `f(x) = B x`
#[derive(Debug, Clone)]
pub struct LinearField(pub Matrix);

impl VectorField for LinearField {
    fn domain_dim(&self) -> usize {
        self.0.cols()
    }
    fn range_dim(&self) -> usize {
        self.0.rows()
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.0.mul_vec(x)
    }
    fn jacobian(&self, _x: &[f64]) -> Option<Matrix> {
        Some(self.0.clone())
    }
}

/// `f(x) = B · sin(x)` with `sin` applied coordinatewise. Smooth, vanishes at
/// the origin, `∇f(0) = B`.
#[derive(Debug, Clone)]
pub struct SineField(pub Matrix);

impl VectorField for SineField {
    fn domain_dim(&self) -> usize {
        self.0.cols()
    }
    fn range_dim(&self) -> usize {
        self.0.rows()
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let s: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        self.0.mul_vec(&s)
    }
    fn jacobian(&self, x: &[f64]) -> Option<Matrix> {
        let mut j = self.0.clone();
        for r in 0..j.rows() {
            for c in 0..j.cols() {
                j[(r, c)] *= x[c].cos();
            }
        }
        Some(j)
    }
}

type DynFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Closure-backed field; its Jacobian falls back to finite differences.
#[derive(Clone)]
pub struct FnField {
    domain: usize,
    range: usize,
    f: Arc<DynFn>,
}

impl FnField {
    pub fn new<F>(domain: usize, range: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            domain,
            range,
            f: Arc::new(f),
        }
    }
}

impl fmt::Debug for FnField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnField({} -> {})", self.domain, self.range)
    }
}

impl VectorField for FnField {
    fn domain_dim(&self) -> usize {
        self.domain
    }
    fn range_dim(&self) -> usize {
        self.range
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        (self.f)(x)
    }
}

/// JSON description of a perturbation field.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FieldSpec {
    Zero { domain_dim: usize, range_dim: usize },
    Linear { matrix: Matrix },
    Sine { matrix: Matrix },
    Bump(BumpPerturbation),
}

impl FieldSpec {
    pub fn build(&self) -> Arc<dyn VectorField> {
        match self {
            FieldSpec::Zero {
                domain_dim,
                range_dim,
            } => Arc::new(ZeroField {
                domain: *domain_dim,
                range: *range_dim,
            }),
            FieldSpec::Linear { matrix } => Arc::new(LinearField(matrix.clone())),
            FieldSpec::Sine { matrix } => Arc::new(SineField(matrix.clone())),
            FieldSpec::Bump(b) => Arc::new(b.clone()),
        }
    }
}

/// Built-in smooth multi-branch mappings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Builtin {
    /// `F(x) = {x}`
    Identity,
    /// `F(x) = {x, −x}`
    AbsBranches,
    /// `F(x) = {x²}` (coordinatewise)
    Parabola,
    /// `F(x) = {0}`
    ConstantZero,
}

impl Builtin {
    fn branch_count(self) -> usize {
        match self {
            Builtin::AbsBranches => 2,
            _ => 1,
        }
    }

    fn branch(self, b: usize, x: &[f64]) -> Vec<f64> {
        match (self, b) {
            (Builtin::Identity, _) => x.to_vec(),
            (Builtin::AbsBranches, 0) => x.to_vec(),
            (Builtin::AbsBranches, _) => x.iter().map(|v| -v).collect(),
            (Builtin::Parabola, _) => x.iter().map(|v| v * v).collect(),
            (Builtin::ConstantZero, _) => vec![0.0; x.len()],
        }
    }

    fn branch_jacobian(self, b: usize, x: &[f64]) -> Matrix {
        let n = x.len();
        match (self, b) {
            (Builtin::Identity, _) | (Builtin::AbsBranches, 0) => Matrix::identity(n),
            (Builtin::AbsBranches, _) => Matrix::identity(n).scaled(-1.0),
            (Builtin::Parabola, _) => Matrix::diag(&x.iter().map(|v| 2.0 * v).collect::<Vec<_>>()),
            (Builtin::ConstantZero, _) => Matrix::zeros(n, n),
        }
    }

    fn preimage(self, y: &[f64]) -> Preimage {
        match self {
            Builtin::Identity => Preimage::Points(vec![y.to_vec()]),
            Builtin::AbsBranches => {
                Preimage::Points(vec![y.to_vec(), y.iter().map(|v| -v).collect()])
            }
            Builtin::Parabola => {
                if y.iter().any(|&v| v < 0.0) {
                    return Preimage::Empty;
                }
                let roots: Vec<f64> = y.iter().map(|v| v.sqrt()).collect();
                let n = y.len();
                let mut pts = Vec::with_capacity(1 << n);
                for mask in 0..(1usize << n) {
                    pts.push(
                        (0..n)
                            .map(|i| if mask >> i & 1 == 1 { -roots[i] } else { roots[i] })
                            .collect(),
                    );
                }
                Preimage::Points(pts)
            }
            Builtin::ConstantZero => {
                if y.iter().all(|&v| v == 0.0) {
                    Preimage::Everything
                } else {
                    Preimage::Empty
                }
            }
        }
    }
}

/// `F⁻¹(y)` in one of the shapes the variants produce.
#[derive(Debug, Clone)]
pub enum Preimage {
    Empty,
    Everything,
    Points(Vec<Vec<f64>>),
    Affine(AffineSet),
}

impl Preimage {
    pub fn distance(&self, x: &[f64], spec: &NormSpec) -> f64 {
        match self {
            Preimage::Empty => f64::INFINITY,
            Preimage::Everything => 0.0,
            Preimage::Points(pts) => pts.iter().fold(f64::INFINITY, |m, p| m.min(spec.dist(x, p))),
            Preimage::Affine(set) => match spec.p {
                NormKind::Two => spec.dist(x, &set.project(x)),
                kind => {
                    let z = linalg::sub(x, &set.particular);
                    crate::solver::affine_residual_norm(&z, &set.null_basis, kind)
                }
            },
        }
    }

    /// Finite list of representative points (all points, or the Euclidean
    /// projections of `hints` for affine sets).
    fn representatives(&self, hints: &[&[f64]]) -> Vec<Vec<f64>> {
        match self {
            Preimage::Empty => Vec::new(),
            Preimage::Everything => hints.iter().map(|h| h.to_vec()).collect(),
            Preimage::Points(p) => p.clone(),
            Preimage::Affine(set) => hints.iter().map(|h| set.project(h)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum MappingKind {
    Linear(Matrix),
    Smooth(Builtin),
    FiniteGraph(SampledGraph),
    Perturbed {
        base: Box<MappingModel>,
        field: Arc<dyn VectorField>,
        scale: f64,
    },
}

#[derive(Debug, Clone)]
pub struct MappingModel {
    pub kind: MappingKind,
    pub domain: NormSpec,
    pub range: NormSpec,
}

impl MappingModel {
    pub fn linear(matrix: Matrix) -> Self {
        Self::linear_with_norms(matrix, NormKind::Two, NormKind::Two)
    }

    pub fn linear_with_norms(matrix: Matrix, dp: NormKind, rp: NormKind) -> Self {
        let domain = NormSpec::new(matrix.cols(), dp);
        let range = NormSpec::new(matrix.rows(), rp);
        Self {
            kind: MappingKind::Linear(matrix),
            domain,
            range,
        }
    }

    pub fn builtin(b: Builtin, dim: usize) -> Self {
        Self::builtin_with_norms(b, dim, NormKind::Two, NormKind::Two)
    }

    pub fn builtin_with_norms(b: Builtin, dim: usize, dp: NormKind, rp: NormKind) -> Self {
        Self {
            kind: MappingKind::Smooth(b),
            domain: NormSpec::new(dim, dp),
            range: NormSpec::new(dim, rp),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::builtin(Builtin::Identity, dim)
    }

    pub fn finite_graph(sample: SampledGraph, dp: NormKind, rp: NormKind) -> Self {
        let domain = NormSpec::new(sample.base.x.len(), dp);
        let range = NormSpec::new(sample.base.y.len(), rp);
        Self {
            kind: MappingKind::FiniteGraph(sample),
            domain,
            range,
        }
    }

    pub fn pair_spec(&self) -> ProductNormSpec {
        ProductNormSpec::new(self.domain, self.range)
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, MappingKind::Linear(_))
    }

    fn graph_tol(&self) -> Option<f64> {
        match &self.kind {
            MappingKind::FiniteGraph(s) => Some(1e-9 * (1.0 + s.radius)),
            MappingKind::Perturbed { base, .. } => base.graph_tol(),
            _ => None,
        }
    }

    /// Stored graph points for graph-backed variants (shifted by any
    /// perturbations on top).
    fn stored_points(&self) -> Option<Vec<GraphPoint>> {
        match &self.kind {
            MappingKind::FiniteGraph(s) => Some(s.points.clone()),
            MappingKind::Perturbed { base, field, scale } => base.stored_points().map(|pts| {
                pts.into_iter()
                    .map(|p| {
                        let mut y = p.y.clone();
                        linalg::axpy(&mut y, *scale, &field.eval(&p.x));
                        GraphPoint::new(p.x, y)
                    })
                    .collect()
            }),
            _ => None,
        }
    }

    /// Number of continuous branches of a functional variant.
    fn branch_count(&self) -> Option<usize> {
        match &self.kind {
            MappingKind::Linear(_) => Some(1),
            MappingKind::Smooth(b) => Some(b.branch_count()),
            MappingKind::FiniteGraph(_) => None,
            MappingKind::Perturbed { base, .. } => base.branch_count(),
        }
    }

    fn branch_value(&self, b: usize, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            MappingKind::Linear(a) => a.mul_vec(x),
            MappingKind::Smooth(bi) => bi.branch(b, x),
            MappingKind::FiniteGraph(_) => unreachable!("graph variants have no branches"),
            MappingKind::Perturbed { base, field, scale } => {
                let mut y = base.branch_value(b, x);
                if *scale != 0.0 {
                    linalg::axpy(&mut y, *scale, &field.eval(x));
                }
                y
            }
        }
    }

    fn branch_jacobian(&self, b: usize, x: &[f64]) -> Matrix {
        match &self.kind {
            MappingKind::Linear(a) => a.clone(),
            MappingKind::Smooth(bi) => bi.branch_jacobian(b, x),
            MappingKind::FiniteGraph(_) => unreachable!("graph variants have no branches"),
            MappingKind::Perturbed { base, field, scale } => {
                let j = base.branch_jacobian(b, x);
                if *scale == 0.0 {
                    j
                } else {
                    j.add(&field_jacobian(field.as_ref(), x).scaled(*scale))
                }
            }
        }
    }

    /// Regions where perturbations on top of this mapping are active.
    pub fn features(&self) -> Vec<Feature> {
        match &self.kind {
            MappingKind::Perturbed { base, field, scale } => {
                let mut f = base.features();
                if *scale != 0.0 {
                    f.extend(field.features());
                }
                f
            }
            _ => Vec::new(),
        }
    }

    /// Finite subset of `F(x)`.
    pub fn images(&self, x: &[f64]) -> Vec<Vec<f64>> {
        if let Some(pts) = self.stored_points() {
            let tol = self.graph_tol().unwrap_or(0.0);
            return pts
                .into_iter()
                .filter(|p| self.domain.dist(&p.x, x) <= tol)
                .map(|p| p.y)
                .collect();
        }
        let n = self.branch_count().unwrap_or(0);
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
        for b in 0..n {
            let v = self.branch_value(b, x);
            if !out.contains(&v) {
                out.push(v);
            }
        }
        out
    }

    /// `d(y, F(x))`, `+∞` when `F(x)` is empty.
    pub fn distance_to_image(&self, x: &[f64], y: &[f64]) -> f64 {
        self.images(x)
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(self.range.dist(y, v)))
    }

    /// `F⁻¹(y)`. `hints` seed the root finder of perturbed variants and pick
    /// representatives of affine solution sets; `tol` is the residual
    /// accepted for a root.
    pub fn preimage(&self, y: &[f64], hints: &[&[f64]], tol: f64) -> Preimage {
        self.preimage_in(y, hints, tol, None)
    }

    /// As [`preimage`](Self::preimage), but root finding only starts from
    /// perturbation features whose support meets the ball `focus`.
    pub fn preimage_in(
        &self,
        y: &[f64],
        hints: &[&[f64]],
        tol: f64,
        focus: Option<(&[f64], f64)>,
    ) -> Preimage {
        if let Some(pts) = self.stored_points() {
            let t = self.graph_tol().unwrap_or(0.0);
            return Preimage::Points(
                pts.into_iter()
                    .filter(|p| self.range.dist(&p.y, y) <= t)
                    .map(|p| p.x)
                    .collect(),
            );
        }
        match &self.kind {
            MappingKind::Linear(a) => match a.solve_affine(y) {
                Some(set) if set.null_basis.is_empty() => Preimage::Points(vec![set.particular]),
                Some(set) => Preimage::Affine(set),
                None => Preimage::Empty,
            },
            MappingKind::Smooth(b) => b.preimage(y),
            MappingKind::FiniteGraph(_) => unreachable!(),
            MappingKind::Perturbed { scale, base, .. } if *scale == 0.0 => {
                base.preimage_in(y, hints, tol, focus)
            }
            MappingKind::Perturbed { .. } => {
                let mut starts: Vec<Vec<f64>> = hints.iter().map(|h| h.to_vec()).collect();
                let base_pre = self.unperturbed_root().preimage(y, hints, tol);
                starts.extend(base_pre.representatives(hints));
                let n = self.domain.dimension;
                for f in self.features() {
                    if let Some((c, r)) = focus {
                        if self.domain.dist(&f.center, c) > r + f.radius {
                            continue;
                        }
                    }
                    starts.push(f.center.clone());
                    for frac in [0.5, 0.0625] {
                        for i in 0..n {
                            for s in [1.0, -1.0] {
                                let mut c = f.center.clone();
                                c[i] += s * frac * f.radius;
                                starts.push(c);
                            }
                        }
                    }
                }
                let mut roots: Vec<Vec<f64>> = Vec::new();
                for b in 0..self.branch_count().unwrap_or(0) {
                    for s in &starts {
                        if let Some(r) = self.solve_branch(b, y, s, tol) {
                            if !roots.contains(&r) {
                                roots.push(r);
                            }
                        }
                    }
                }
                if roots.is_empty() {
                    Preimage::Empty
                } else {
                    Preimage::Points(roots)
                }
            }
        }
    }

    /// The innermost unperturbed mapping.
    fn unperturbed_root(&self) -> &MappingModel {
        match &self.kind {
            MappingKind::Perturbed { base, .. } => base.unperturbed_root(),
            _ => self,
        }
    }

    /// Levenberg–Marquardt on `‖G_b(u) − y‖²`.
    fn solve_branch(&self, b: usize, y: &[f64], start: &[f64], tol: f64) -> Option<Vec<f64>> {
        let mut u = start.to_vec();
        let resid = |u: &[f64]| linalg::sub(&self.branch_value(b, u), y);
        let mut r = resid(&u);
        let mut rn = linalg::euclid(&r);
        let mut lambda = 1e-6;
        let n = u.len();
        for _ in 0..200 {
            if rn <= tol {
                return Some(u);
            }
            let j = self.branch_jacobian(b, &u);
            let jtr = j.tr_mul_vec(&r);
            let jtj = j.transpose().matmul(&j);
            let diag_max = (0..n).fold(0.0f64, |m, i| m.max(jtj[(i, i)]));
            let mut improved = false;
            for _ in 0..30 {
                let mut a: Vec<Vec<f64>> = jtj.to_rows();
                for (i, row) in a.iter_mut().enumerate() {
                    row[i] += lambda * (jtj[(i, i)] + 1e-12 * diag_max.max(1e-300));
                }
                let rhs: Vec<f64> = jtr.iter().map(|v| -v).collect();
                let Some(step) = linalg::solve_square(a, rhs) else {
                    lambda *= 10.0;
                    continue;
                };
                let cand = linalg::add(&u, &step);
                let rc = resid(&cand);
                let rcn = linalg::euclid(&rc);
                if rcn < rn {
                    u = cand;
                    r = rc;
                    rn = rcn;
                    lambda = (lambda / 5.0).max(1e-15);
                    improved = true;
                    break;
                }
                lambda *= 8.0;
                if lambda > 1e30 {
                    break;
                }
            }
            if !improved {
                break;
            }
        }
        (rn <= tol).then_some(u)
    }

    /// `d(x, F⁻¹(y))`, `+∞` when `F⁻¹(y)` is empty.
    pub fn inverse_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let num = self.distance_to_image(x, y);
        let tol = root_tolerance(y, num);
        self.preimage(y, &[x], tol).distance(x, &self.domain)
    }

    /// `F + αf`. The perturbation must vanish at `base_x`.
    pub fn add_perturbation(
        &self,
        field: Arc<dyn VectorField>,
        scale: f64,
        base_x: &[f64],
    ) -> Result<MappingModel> {
        if field.domain_dim() != self.domain.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.domain.dimension,
                got: field.domain_dim(),
            });
        }
        if field.range_dim() != self.range.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.range.dimension,
                got: field.range_dim(),
            });
        }
        let at_base = self.range.n(&field.eval(base_x));
        if at_base > 1e-10 {
            return Err(Error::NonzeroAtBase(at_base));
        }
        Ok(MappingModel {
            kind: MappingKind::Perturbed {
                base: Box::new(self.clone()),
                field,
                scale,
            },
            domain: self.domain,
            range: self.range,
        })
    }

    pub fn on_graph(&self, p: &GraphPoint) -> bool {
        self.distance_to_image(&p.x, &p.y) <= 1e-10
    }

    /// Seeded graph sample around `center`: `x` on nested shells of radii
    /// `radius·2⁻ʲ`, paired with every image inside the pair ball. Graph
    /// variants return their stored points inside the ball.
    pub fn sample_graph(
        &self,
        center: &GraphPoint,
        radius: f64,
        budget: usize,
        seed: u64,
    ) -> Result<SampledGraph> {
        self.domain.check(&center.x)?;
        self.range.check(&center.y)?;
        let d = self.distance_to_image(&center.x, &center.y);
        if !(d <= 1e-10) {
            return Err(Error::NotOnGraph(d));
        }
        let pair = self.pair_spec();
        let mut points = vec![center.clone()];
        let push = |p: GraphPoint, points: &mut Vec<GraphPoint>| {
            if pair.dist(&p.x, &p.y, &center.x, &center.y) <= radius && !points.contains(&p) {
                points.push(p);
            }
        };
        if let Some(stored) = self.stored_points() {
            for p in stored {
                push(p, &mut points);
            }
            return Ok(SampledGraph {
                base: center.clone(),
                points,
                radius,
            });
        }
        let n = self.domain.dimension;
        let shells = 6usize;
        let per_shell = budget.max(1).div_ceil(shells);
        let mut xs: Vec<Vec<f64>> = Vec::with_capacity(budget + 64);
        for j in 1..=shells {
            let r = radius * 0.5f64.powi(j as i32);
            let mut rng = crate::exec::rng(seed, j as u64);
            for k in 0..per_shell {
                let dir = if k < 2 * n {
                    let mut e = vec![0.0; n];
                    e[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
                    e
                } else {
                    self.domain.random_unit(&mut rng)
                };
                let lam = if k < 2 * n { 1.0 } else { 1.0 - 0.5 * rng.gen::<f64>() };
                let mut x = center.x.clone();
                linalg::axpy(&mut x, r * lam, &dir);
                xs.push(x);
            }
        }
        for f in self.features() {
            if self.domain.dist(&f.center, &center.x) > radius + f.radius {
                continue;
            }
            xs.push(f.center.clone());
            let mut rng = crate::exec::rng(seed, 0xfea7);
            for frac in [0.5, 0.125, 0.03125] {
                for k in 0..(2 * n + 4) {
                    let dir = if k < 2 * n {
                        let mut e = vec![0.0; n];
                        e[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
                        e
                    } else {
                        self.domain.random_unit(&mut rng)
                    };
                    let mut x = f.center.clone();
                    linalg::axpy(&mut x, frac * f.radius, &dir);
                    xs.push(x);
                }
            }
        }
        for x in xs {
            for y in self.images(&x) {
                push(GraphPoint::new(x.clone(), y), &mut points);
            }
        }
        Ok(SampledGraph {
            base: center.clone(),
            points,
            radius,
        })
    }
}

/// Residual accepted when solving `G(u) = y` for a query whose forward
/// distance is `num`.
pub(crate) fn root_tolerance(y: &[f64], num: f64) -> f64 {
    let floor = 1e-15 * (1.0 + linalg::euclid(y));
    if num.is_finite() {
        floor.max(1e-9 * num)
    } else {
        floor
    }
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

/// JSON description of a mapping.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MappingSpec {
    Linear {
        matrix: Matrix,
    },
    SmoothBuiltin {
        builtin: Builtin,
        #[serde(default = "one")]
        dim: usize,
    },
    Graph {
        points: Vec<GraphPoint>,
        #[serde(default)]
        base: Option<GraphPoint>,
        #[serde(default)]
        radius: Option<f64>,
    },
    Perturbed {
        base: Box<MappingSpec>,
        field: FieldSpec,
        #[serde(default = "one_f")]
        scale: f64,
    },
}

impl MappingSpec {
    pub fn build(&self, dp: NormKind, rp: NormKind, base_x: &[f64]) -> Result<MappingModel> {
        match self {
            MappingSpec::Linear { matrix } => Ok(MappingModel::linear_with_norms(matrix.clone(), dp, rp)),
            MappingSpec::SmoothBuiltin { builtin, dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidMapping("dim must be positive".into()));
                }
                Ok(MappingModel::builtin_with_norms(*builtin, *dim, dp, rp))
            }
            MappingSpec::Graph {
                points,
                base,
                radius,
            } => {
                let base = match base {
                    Some(b) => b.clone(),
                    None => points
                        .first()
                        .cloned()
                        .ok_or_else(|| Error::InvalidMapping("graph has no points".into()))?,
                };
                let (nx, ny) = (base.x.len(), base.y.len());
                if nx == 0 || ny == 0 {
                    return Err(Error::InvalidMapping("empty graph point".into()));
                }
                for p in points {
                    if p.x.len() != nx || p.y.len() != ny {
                        return Err(Error::InvalidMapping("inconsistent graph point dimensions".into()));
                    }
                }
                let pair = ProductNormSpec::new(NormSpec::new(nx, dp), NormSpec::new(ny, rp));
                let r = radius.unwrap_or_else(|| {
                    points
                        .iter()
                        .map(|p| pair.dist(&p.x, &p.y, &base.x, &base.y))
                        .fold(0.0, f64::max)
                });
                let mut pts = vec![base.clone()];
                for p in points {
                    if !pts.contains(p) {
                        pts.push(p.clone());
                    }
                }
                Ok(MappingModel::finite_graph(
                    SampledGraph {
                        base,
                        points: pts,
                        radius: r,
                    },
                    dp,
                    rp,
                ))
            }
            MappingSpec::Perturbed { base, field, scale } => {
                let inner = base.build(dp, rp, base_x)?;
                inner.add_perturbation(field.build(), *scale, base_x)
            }
        }
    }
}
