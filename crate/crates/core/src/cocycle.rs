//! Potentials, cocycles and modular functions on a free-coordinate groupoid.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relation::FreeCoordinateRelation;
use crate::scalar::{Real, Scalar};
use crate::symbolic::{metric, Alphabet, Cylinder, Point, Symbol};

/// A potential `V` depending on the first `depth` coordinates, stored as a
/// table over the lexicographically ordered depth-`depth` words.
#[derive(Clone, Debug, PartialEq)]
pub struct Potential<S> {
    alphabet: Alphabet,
    depth: usize,
    table: Vec<S>,
}

impl<S: Scalar> Potential<S> {
    pub fn new(alphabet: Alphabet, depth: usize, table: Vec<S>) -> Result<Self> {
        let expected = alphabet.cylinder_count(depth)?;
        if table.len() != expected {
            return Err(Error::LengthMismatch { expected, got: table.len() });
        }
        Ok(Self { alphabet, depth, table })
    }

    pub fn constant(alphabet: Alphabet, value: S) -> Self {
        Self { alphabet, depth: 0, table: vec![value] }
    }

    pub fn zero(alphabet: Alphabet) -> Self {
        Self::constant(alphabet, S::zero())
    }

    pub fn from_fn(alphabet: Alphabet, depth: usize, f: impl Fn(&[Symbol]) -> S) -> Result<Self> {
        let n = alphabet.cylinder_count(depth)?;
        let table = (0..n).map(|i| f(&alphabet.index_word(depth, i))).collect();
        Ok(Self { alphabet, depth, table })
    }

    /// `V(x) = (x_1 - 1)^2 / 4`.
    pub fn quarter_square_first_coord(alphabet: Alphabet) -> Self {
        Self::from_fn(alphabet, 1, |w| {
            let a = S::from_u8(w[0] - 1).expect("small integer");
            a.clone() * a / S::from_u8(4).expect("small integer")
        })
        .expect("depth 1 table fits")
    }

    /// Depth-`depth` truncation of an arbitrary potential, sampled on the
    /// cylinder points with tail 1. For an `α`-Hölder potential with constant
    /// `C` the sup-norm error is at most [`truncation_error_bound`].
    pub fn truncate(alphabet: Alphabet, depth: usize, f: impl Fn(&Point) -> S) -> Result<Self> {
        Self::from_fn(alphabet, depth, |w| f(&Point::from_parts(w.to_vec(), 1)))
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn table(&self) -> &[S] {
        &self.table
    }

    pub fn value(&self, x: &Point) -> S {
        let word = x.word(self.depth);
        self.table[self.alphabet.word_index(&word)].clone()
    }

    /// Value on a word of length at least `depth`.
    pub fn value_word(&self, word: &[Symbol]) -> S {
        self.table[self.alphabet.word_index(&word[..self.depth])].clone()
    }

    /// `self + alpha * other`, tabulated at the larger depth.
    pub fn add_scaled(&self, alpha: S, other: &Self) -> Result<Self> {
        let depth = self.depth.max(other.depth);
        Self::from_fn(self.alphabet, depth, |w| self.value_word(w) + alpha.clone() * other.value_word(w))
    }
}

/// Sup-norm error of truncating an `alpha`-Hölder potential with constant
/// `holder_constant` at `depth`: `C · 2^{-α·depth}`.
pub fn truncation_error_bound<S: Real>(holder_constant: S, alpha: S, depth: usize) -> S {
    holder_constant * S::of(2.0).powf(-alpha * S::of(depth as f64))
}

/// Configuration form of a potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PotentialConfig {
    Builtin { builtin: String },
    Table { depth: usize, table: BTreeMap<String, f64> },
}

impl Potential<f64> {
    pub fn from_config(alphabet: Alphabet, cfg: &PotentialConfig) -> Result<Self> {
        match cfg {
            PotentialConfig::Builtin { builtin } => match builtin.as_str() {
                "quarter_square_first_coord" => Ok(Self::quarter_square_first_coord(alphabet)),
                "zero" => Ok(Self::zero(alphabet)),
                other => Err(Error::Config(format!("unknown builtin potential {other:?}"))),
            },
            PotentialConfig::Table { depth, table } => {
                let n = alphabet.cylinder_count(*depth)?;
                let mut values = vec![None; n];
                for (key, &v) in table {
                    if !v.is_finite() {
                        return Err(Error::Config(format!("potential value for {key:?} is not finite")));
                    }
                    let idx = if *depth == 0 {
                        if !key.trim().is_empty() {
                            return Err(Error::Config("depth-0 potential uses the key \"\"".into()));
                        }
                        0
                    } else {
                        let c = Cylinder::parse(key, &alphabet)?;
                        if c.depth() != *depth {
                            return Err(Error::Config(format!(
                                "potential key {key:?} has depth {} instead of {depth}",
                                c.depth()
                            )));
                        }
                        c.index(&alphabet)
                    };
                    values[idx] = Some(v);
                }
                let values = values
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| {
                        v.ok_or_else(|| {
                            Error::Config(format!(
                                "potential table misses word {}",
                                Cylinder::from_index(&alphabet, *depth, i)
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::new(alphabet, *depth, values)
            }
        }
    }
}

type PairFn<S> = dyn Fn(&Point, &Point) -> S + Send + Sync;

/// A cocycle given by an arbitrary function of the pair, trusted to depend
/// only on the first `depth` coordinates of each argument.
#[derive(Clone)]
pub struct GeneralCocycle<S> {
    depth: usize,
    func: Arc<PairFn<S>>,
}

impl<S> fmt::Debug for GeneralCocycle<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralCocycle").field("depth", &self.depth).finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub enum Cocycle<S> {
    /// `c(x, y) = V(y) - V(x)`.
    Separable(Potential<S>),
    General(GeneralCocycle<S>),
}

impl<S: Scalar> Cocycle<S> {
    pub fn separable(potential: Potential<S>) -> Self {
        Self::Separable(potential)
    }

    pub fn general(depth: usize, func: impl Fn(&Point, &Point) -> S + Send + Sync + 'static) -> Self {
        Self::General(GeneralCocycle { depth, func: Arc::new(func) })
    }

    pub fn depth(&self) -> usize {
        match self {
            Self::Separable(v) => v.depth(),
            Self::General(g) => g.depth,
        }
    }

    pub fn potential(&self) -> Option<&Potential<S>> {
        match self {
            Self::Separable(v) => Some(v),
            Self::General(_) => None,
        }
    }

    /// Value on a pair assumed to be equivalent.
    pub fn value(&self, x: &Point, y: &Point) -> S {
        match self {
            Self::Separable(v) => v.value(y) - v.value(x),
            Self::General(g) => (g.func)(x, y),
        }
    }

    pub fn evaluate(&self, rel: &FreeCoordinateRelation, x: &Point, y: &Point) -> Result<S> {
        if !rel.equivalent(x, y) {
            return Err(Error::NotEquivalent(x.to_string(), y.to_string()));
        }
        Ok(self.value(x, y))
    }

    /// `self + alpha * other` as a general cocycle.
    pub fn linear_combination(&self, alpha: S, other: &Self) -> Self {
        let (a, b) = (self.clone(), other.clone());
        let depth = a.depth().max(b.depth());
        Self::general(depth, move |x, y| a.value(x, y) + alpha.clone() * b.value(x, y))
    }

    /// Spot-check the declared depth: every pair `(w, ψ_a(w))` of words of
    /// length `max(depth, max S)` must give the same value whatever symbols
    /// follow, perturbed identically in both arguments.
    pub fn check_depth(&self, rel: &FreeCoordinateRelation) -> Result<()> {
        let alphabet = rel.alphabet();
        let len = self.depth().max(rel.max_free());
        let n = alphabet.cylinder_count(len)?;
        for i in 0..n {
            let base = alphabet.index_word(len, i);
            for a in 0..rel.class_size() {
                let mut other = base.clone();
                rel.substitute_word(&mut other, a);
                let reference = self.value(&Point::from_parts(base.clone(), 1), &Point::from_parts(other.clone(), 1));
                for extra in alphabet.symbols() {
                    for tail in alphabet.symbols() {
                        let mut x = base.clone();
                        let mut y = other.clone();
                        for w in [&mut x, &mut y] {
                            w.push(extra);
                            w.push(alphabet.size() as Symbol + 1 - extra);
                        }
                        let v = self.value(&Point::from_parts(x, tail), &Point::from_parts(y, tail));
                        if v != reference {
                            return Err(Error::DepthIncompatible(format!(
                                "cocycle value at ({}, …) changes beyond declared depth {}",
                                Cylinder::from_word(base),
                                self.depth()
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// `|c(x,z) - c(x,y) - c(y,z)|` for an equivalent triple.
pub fn cocycle_identity_residual<S: Scalar>(
    c: &Cocycle<S>,
    rel: &FreeCoordinateRelation,
    x: &Point,
    y: &Point,
    z: &Point,
) -> Result<S> {
    let xz = c.evaluate(rel, x, z)?;
    let xy = c.evaluate(rel, x, y)?;
    let yz = c.evaluate(rel, y, z)?;
    Ok((xz - xy - yz).abs())
}

/// Inverse temperature and cocycle; the modular function is `δ(x,y) = e^{-βc(x,y)}`.
#[derive(Clone, Debug)]
pub struct ModularParameters<S> {
    pub beta: S,
    pub cocycle: Cocycle<S>,
}

impl<S: Scalar> ModularParameters<S> {
    pub fn new(beta: S, cocycle: Cocycle<S>) -> Self {
        Self { beta, cocycle }
    }

    pub fn with_beta(&self, beta: S) -> Self {
        Self { beta, cocycle: self.cocycle.clone() }
    }

    /// `-β c(x, y)`.
    pub fn log_modular(&self, x: &Point, y: &Point) -> S {
        -(self.beta.clone() * self.cocycle.value(x, y))
    }
}

impl<S: Real> ModularParameters<S> {
    pub fn modular(&self, x: &Point, y: &Point) -> S {
        self.log_modular(x, y).exp()
    }
}

/// `max |V(x) - V(z)| / d(x, z)^α` over distinct words of length `probe_depth`
/// (tail 1). Depths below the potential's own depth are raised to it.
pub fn holder_estimate<S: Real>(v: &Potential<S>, alpha: S, probe_depth: usize) -> Result<S> {
    if !(alpha > S::zero()) {
        return Err(Error::InvalidParameter("Hölder exponent must be positive".into()));
    }
    let alphabet = v.alphabet();
    let depth = probe_depth.max(v.depth()).max(1);
    let n = alphabet.cylinder_count(depth)?;
    let points: Vec<Point> = (0..n).map(|i| Point::from_parts(alphabet.index_word(depth, i), 1)).collect();
    let values: Vec<S> = points.iter().map(|p| v.value(p)).collect();
    let mut best = S::zero();
    for u in 0..n {
        for w in (u + 1)..n {
            let dist: S = metric(&points[u], &points[w]);
            let ratio = (values[u] - values[w]).abs() / dist.powf(alpha);
            best = best.max(ratio);
        }
    }
    Ok(best)
}

/// Closed-form bound `β · Lip^α / α` on the Dini integral of the weights
/// `e^{-βV(ψ_i(j*x))}` for an `α`-Hölder `V` (Hölder constant 1).
pub fn dini_bound<S: Real>(beta: S, alpha: S, lip: S) -> Result<S> {
    if !(alpha > S::zero()) {
        return Err(Error::InvalidParameter("Hölder exponent must be positive".into()));
    }
    if lip < S::zero() {
        return Err(Error::InvalidParameter("Lipschitz constant must be nonnegative".into()));
    }
    Ok(beta * lip.powf(alpha) / alpha)
}
