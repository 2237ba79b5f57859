//! Norms on `ℝⁿ`, their duals, the sum/max product norms, point-to-set
//! distances and seeded discretizations of dual unit spheres.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;

/// Exponent of an `ℓp` norm. Only the three representatives `1`, `2` and
/// `∞` are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum NormKind {
    One,
    #[default]
    Two,
    Inf,
}

impl NormKind {
    /// Conjugate exponent: `1/p + 1/q = 1`.
    pub fn dual(self) -> NormKind {
        match self {
            NormKind::One => NormKind::Inf,
            NormKind::Two => NormKind::Two,
            NormKind::Inf => NormKind::One,
        }
    }

    pub fn eval(self, v: &[f64]) -> f64 {
        match self {
            NormKind::One => v.iter().map(|a| a.abs()).sum(),
            NormKind::Two => v.iter().map(|a| a * a).sum::<f64>().sqrt(),
            NormKind::Inf => v.iter().fold(0.0, |m, a| m.max(a.abs())),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            NormKind::One => "1",
            NormKind::Two => "2",
            NormKind::Inf => "inf",
        }
    }
}

impl Serialize for NormKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NormKind::One => s.serialize_u8(1),
            NormKind::Two => s.serialize_u8(2),
            NormKind::Inf => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for NormKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match &v {
            serde_json::Value::Number(n) if n.as_f64() == Some(1.0) => Ok(NormKind::One),
            serde_json::Value::Number(n) if n.as_f64() == Some(2.0) => Ok(NormKind::Two),
            serde_json::Value::String(s) if s == "inf" || s == "∞" => Ok(NormKind::Inf),
            serde_json::Value::String(s) if s == "1" => Ok(NormKind::One),
            serde_json::Value::String(s) if s == "2" => Ok(NormKind::Two),
            _ => Err(serde::de::Error::custom(format!(
                "norm exponent must be 1, 2 or \"inf\", got {v}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormSpec {
    pub dimension: usize,
    #[serde(default)]
    pub p: NormKind,
}

impl NormSpec {
    pub fn new(dimension: usize, p: NormKind) -> Self {
        assert!(dimension >= 1, "dimension must be positive");
        Self { dimension, p }
    }

    pub fn euclidean(dimension: usize) -> Self {
        Self::new(dimension, NormKind::Two)
    }

    pub fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: v.len(),
            });
        }
        Ok(())
    }

    pub fn norm(&self, v: &[f64]) -> Result<f64> {
        self.check(v)?;
        Ok(self.p.eval(v))
    }

    pub fn dual_norm(&self, v: &[f64]) -> Result<f64> {
        self.check(v)?;
        Ok(self.p.dual().eval(v))
    }

    /// Unchecked primal norm for hot loops.
    #[inline]
    pub fn n(&self, v: &[f64]) -> f64 {
        self.p.eval(v)
    }

    /// Unchecked dual norm for hot loops.
    #[inline]
    pub fn dn(&self, v: &[f64]) -> f64 {
        self.p.dual().eval(v)
    }

    /// `‖a − b‖`, unchecked.
    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.p {
            NormKind::One => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            NormKind::Two => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            NormKind::Inf => a
                .iter()
                .zip(b)
                .fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs())),
        }
    }

    /// Random vector with `‖v‖ = 1` in the primal norm.
    pub fn random_unit<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        normalized_random(self.dimension, self.p, rng)
    }

    /// A unit vector `v` with `⟨y*, v⟩ = ‖y*‖_*`. When several exist
    /// (`p ∈ {1, ∞}`), the lexicographically smallest vertex of the unit
    /// ball is returned.
    pub fn norming_vector(&self, ystar: &[f64]) -> Vec<f64> {
        let n = ystar.len();
        let dn = self.dn(ystar);
        match self.p {
            NormKind::Two => {
                if dn == 0.0 {
                    let mut v = vec![0.0; n];
                    v[0] = 1.0;
                    v
                } else {
                    ystar.iter().map(|a| a / dn).collect()
                }
            }
            NormKind::One => {
                // Vertices ±e_i; the norming ones have |y*_i| maximal.
                let mut best: Option<Vec<f64>> = None;
                for i in 0..n {
                    if ystar[i].abs() < dn {
                        continue;
                    }
                    let signs: &[f64] = if ystar[i] == 0.0 { &[-1.0, 1.0] } else { &[0.0] };
                    for &s in signs {
                        let mut v = vec![0.0; n];
                        v[i] = if ystar[i] == 0.0 { s } else { ystar[i].signum() };
                        if best.as_ref().map_or(true, |b| lex_less(&v, b)) {
                            best = Some(v);
                        }
                    }
                }
                best.expect("some coordinate attains the max")
            }
            NormKind::Inf => ystar
                .iter()
                .map(|&a| if a > 0.0 { 1.0 } else { -1.0 })
                .collect(),
        }
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

fn normalized_random<R: Rng>(dim: usize, p: NormKind, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let n = p.eval(&v);
        if n > 1e-8 {
            return v.into_iter().map(|a| a / n).collect();
        }
    }
}

/// Standard normal draw via Box–Muller.
pub(crate) fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// `X × Y` with `‖(x,y)‖ = ‖x‖ + ‖y‖` and dual `max{‖x*‖, ‖y*‖}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductNormSpec {
    pub left: NormSpec,
    pub right: NormSpec,
}

impl ProductNormSpec {
    pub fn new(left: NormSpec, right: NormSpec) -> Self {
        Self { left, right }
    }

    pub fn pair_norm_primal(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.left.norm(x)? + self.right.norm(y)?)
    }

    pub fn pair_norm_dual(&self, xs: &[f64], ys: &[f64]) -> Result<f64> {
        Ok(self.left.dual_norm(xs)?.max(self.right.dual_norm(ys)?))
    }

    /// Pair distance between `(x1,y1)` and `(x2,y2)`, unchecked.
    #[inline]
    pub fn dist(&self, x1: &[f64], y1: &[f64], x2: &[f64], y2: &[f64]) -> f64 {
        self.left.dist(x1, x2) + self.right.dist(y1, y2)
    }
}

/// `d(y, S)`; `+∞` for an empty set (`inf ∅ = +∞`).
pub fn distance_to_set(y: &[f64], set: &[Vec<f64>], spec: &NormSpec) -> Result<f64> {
    spec.check(y)?;
    let mut best = f64::INFINITY;
    for s in set {
        spec.check(s)?;
        best = best.min(spec.dist(y, s));
    }
    Ok(best)
}

/// Seeded list of `count` vectors with unit dual norm. The first `2·dim`
/// entries are `±e_i`; the rest are normalized Gaussian draws. In dimension
/// one only `±1` exist, so exactly two vectors are returned.
pub fn sphere_grid(spec: &NormSpec, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let n = spec.dimension;
    if count < 2 * n {
        return Err(Error::GridTooSmall {
            min: 2 * n,
            got: count,
        });
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; n];
            e[i] = s;
            out.push(e);
        }
    }
    if n == 1 {
        return Ok(out);
    }
    let mut rng = crate::exec::rng(seed, 0x5f3e);
    let dual = spec.p.dual();
    while out.len() < count {
        out.push(normalized_random(n, dual, &mut rng));
    }
    Ok(out)
}

/// `⟨(x*,y*), (x,y)⟩`
pub fn pair_pairing(xs: &[f64], ys: &[f64], x: &[f64], y: &[f64]) -> f64 {
    dot(xs, x) + dot(ys, y)
}
