//! Haar-Ruelle, Hutchinson-Barnsley and Haar operators on depth-`k` functions.
//!
//! The class maps `x ↦ ψ_i(j*x)` only read the first `k - 1` coordinates of
//! `x` once `max S ≤ k`, so every operator maps depth-`k` functions to depth-`k`
//! functions. An operator compiled at depth `k` is a list of weighted branches
//! per output cylinder, summed in the fixed order `j` outer, `i` inner.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycle::ModularParameters;
use crate::error::{Error, Result};
use crate::relation::FreeCoordinateRelation;
use crate::scalar::{log_sum_exp, Real, Scalar};
use crate::symbolic::{enumerate_cylinders, Alphabet, Cylinder, Point, Symbol};

/// A function `X → ℝ` depending on the first `depth` coordinates, stored
/// over lexicographically ordered cylinders.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthFunction<S> {
    alphabet: Alphabet,
    depth: usize,
    values: Vec<S>,
}

impl<S: Scalar> DepthFunction<S> {
    pub fn new(alphabet: Alphabet, depth: usize, values: Vec<S>) -> Result<Self> {
        if depth == 0 {
            return Err(Error::ZeroDepth);
        }
        let expected = alphabet.cylinder_count(depth)?;
        if values.len() != expected {
            return Err(Error::LengthMismatch { expected, got: values.len() });
        }
        Ok(Self { alphabet, depth, values })
    }

    pub fn constant(alphabet: Alphabet, depth: usize, value: S) -> Result<Self> {
        let n = alphabet.cylinder_count(depth)?;
        Self::new(alphabet, depth, vec![value; n])
    }

    pub fn ones(alphabet: Alphabet, depth: usize) -> Result<Self> {
        Self::constant(alphabet, depth, S::one())
    }

    pub fn indicator(alphabet: Alphabet, cylinder: &Cylinder) -> Result<Self> {
        let mut f = Self::constant(alphabet, cylinder.depth(), S::zero())?;
        f.values[cylinder.index(&alphabet)] = S::one();
        Ok(f)
    }

    pub fn from_fn(alphabet: Alphabet, depth: usize, f: impl Fn(&Cylinder) -> S) -> Result<Self> {
        let values = enumerate_cylinders(&alphabet, depth)?.iter().map(f).collect();
        Self::new(alphabet, depth, values)
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    pub fn value(&self, x: &Point) -> S {
        self.values[self.alphabet.word_index(&x.word(self.depth))].clone()
    }

    pub fn value_word(&self, word: &[Symbol]) -> S {
        self.values[self.alphabet.word_index(&word[..self.depth])].clone()
    }

    /// `alpha * self + other`.
    pub fn axpy(&self, alpha: S, other: &Self) -> Result<Self> {
        if self.depth != other.depth || self.alphabet != other.alphabet {
            return Err(Error::DepthIncompatible("functions of different depths".into()));
        }
        let values =
            self.values.iter().zip(&other.values).map(|(a, b)| alpha.clone() * a.clone() + b.clone()).collect();
        Self::new(self.alphabet, self.depth, values)
    }
}

impl<S: Real> DepthFunction<S> {
    /// CSV with header `cylinder,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["cylinder", "value"])?;
        for (i, v) in self.values.iter().enumerate() {
            let c = Cylinder::from_index(&self.alphabet, self.depth, i);
            w.write_record([c.to_string(), v.as_f64().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read the CSV written by [`DepthFunction::write_csv`]; every cylinder of
    /// one common depth must appear exactly once.
    pub fn read_csv<R: Read>(alphabet: Alphabet, reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut entries = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let (c, v) = match (rec.get(0), rec.get(1)) {
                (Some(c), Some(v)) => (c, v),
                _ => return Err(Error::Parse("expected columns cylinder,value".into())),
            };
            let c = Cylinder::parse(c, &alphabet)?;
            let v: f64 = v.trim().parse().map_err(|_| Error::Parse(format!("bad value {v:?}")))?;
            entries.push((c, v));
        }
        let depth = entries.first().map(|(c, _)| c.depth()).ok_or(Error::ZeroDepth)?;
        let n = alphabet.cylinder_count(depth)?;
        let mut values = vec![None; n];
        for (c, v) in entries {
            if c.depth() != depth {
                return Err(Error::Parse("mixed cylinder depths".into()));
            }
            let slot = &mut values[c.index(&alphabet)];
            if slot.is_some() {
                return Err(Error::Parse(format!("duplicate cylinder {c}")));
            }
            *slot = Some(S::of(v));
        }
        let values =
            values.into_iter().collect::<Option<Vec<_>>>().ok_or_else(|| Error::Parse("missing cylinders".into()))?;
        Self::new(alphabet, depth, values)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorFlavor {
    /// `L_{-βc}(f)(x) = (1/d) Σ_j Σ_i f(ψ_i(j*x)) e^{-βc(j*x, ψ_i(j*x))}`.
    HaarRuelleGeneral,
    /// `L_{-βV}(f)(x) = (1/d) Σ_j Σ_i f(ψ_i(j*x)) e^{-βV(ψ_i(j*x))}`.
    HaarRuelleSeparable,
    /// `B_R = d · L_{-βV}`.
    HutchinsonBarnsley,
    /// `H_{-βc}(f)(x) = (1/K) Σ_t f(ψ_t(x)) e^{-βc(x, ψ_t(x))}`.
    Haar,
    /// `H_{-βc+b}` with `b(x,s) = ln H_{-βc}(1)(s) - ln H_{-βc}(1)(x)`.
    HaarNormalized,
}

impl OperatorFlavor {
    pub fn is_haar_ruelle(self) -> bool {
        matches!(self, Self::HaarRuelleGeneral | Self::HaarRuelleSeparable | Self::HutchinsonBarnsley)
    }

    fn needs_separable(self) -> bool {
        matches!(self, Self::HaarRuelleSeparable | Self::HutchinsonBarnsley)
    }
}

#[derive(Clone, Debug)]
pub struct OperatorSpec<S> {
    pub relation: FreeCoordinateRelation,
    pub params: ModularParameters<S>,
    pub flavor: OperatorFlavor,
}

impl<S: Real> OperatorSpec<S> {
    pub fn new(relation: FreeCoordinateRelation, params: ModularParameters<S>, flavor: OperatorFlavor) -> Result<Self> {
        let spec = Self { relation, params, flavor };
        spec.check_flavor(flavor)?;
        Ok(spec)
    }

    pub fn with_flavor(&self, flavor: OperatorFlavor) -> Result<Self> {
        Self::new(self.relation.clone(), self.params.clone(), flavor)
    }

    pub fn with_beta(&self, beta: S) -> Self {
        Self { params: self.params.with_beta(beta), ..self.clone() }
    }

    pub fn alphabet(&self) -> &Alphabet {
        self.relation.alphabet()
    }

    fn check_flavor(&self, flavor: OperatorFlavor) -> Result<()> {
        if flavor.needs_separable() && self.params.cocycle.potential().is_none() {
            return Err(Error::NotSeparable);
        }
        if let Some(v) = self.params.cocycle.potential() {
            if v.alphabet() != self.relation.alphabet() {
                return Err(Error::InvalidParameter("potential and relation alphabets differ".into()));
            }
        }
        Ok(())
    }

    /// Depth preconditions for applying `flavor` to depth-`k` functions.
    pub fn check_depth(&self, flavor: OperatorFlavor, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::ZeroDepth);
        }
        if self.relation.max_free() > k {
            return Err(Error::DepthIncompatible(format!(
                "free coordinate {} exceeds function depth {k}",
                self.relation.max_free()
            )));
        }
        let allowed = if flavor.is_haar_ruelle() { k + 1 } else { k };
        if self.params.cocycle.depth() > allowed {
            return Err(Error::DepthIncompatible(format!(
                "cocycle depth {} exceeds {allowed} for depth-{k} functions",
                self.params.cocycle.depth()
            )));
        }
        Ok(())
    }

    /// `-β c(j*x, s)` or `-β V(s)` for a Haar-Ruelle branch `s = ψ_i(j*x)`.
    fn branch_log_weight(&self, flavor: OperatorFlavor, jx: &Point, s: &Point) -> S {
        match flavor {
            OperatorFlavor::HaarRuelleGeneral => self.params.log_modular(jx, s),
            _ => {
                let v = self.params.cocycle.potential().expect("checked separable");
                -(self.params.beta * v.value(s))
            }
        }
    }

    /// The `d·K` branches `(ψ_i(j*x), log weight)` of a Haar-Ruelle flavor at
    /// an arbitrary point, `j` outer and `i` inner.
    pub fn branches_at(&self, x: &Point) -> Result<Vec<(Point, S)>> {
        if !self.flavor.is_haar_ruelle() {
            return Err(Error::InvalidParameter(format!("{:?} has no branch expansion", self.flavor)));
        }
        let mut out = Vec::with_capacity(self.alphabet().size() * self.relation.class_size());
        for j in self.alphabet().symbols() {
            let jx = x.prepend(j);
            for a in 0..self.relation.class_size() {
                let s = self.relation.psi0(a, &jx);
                let lw = self.branch_log_weight(self.flavor, &jx, &s);
                out.push((s, lw));
            }
        }
        Ok(out)
    }

    /// Prefactor in front of the branch sum: `1/d`, `1` or `1/K`.
    pub fn prefactor(&self, flavor: OperatorFlavor) -> S {
        match flavor {
            OperatorFlavor::HaarRuelleGeneral | OperatorFlavor::HaarRuelleSeparable => {
                S::one() / S::of(self.alphabet().size() as f64)
            }
            OperatorFlavor::HutchinsonBarnsley => S::one(),
            OperatorFlavor::Haar | OperatorFlavor::HaarNormalized => {
                S::one() / S::of(self.relation.class_size() as f64)
            }
        }
    }

    pub fn compile(&self, k: usize) -> Result<CompiledOperator<S>> {
        self.compile_as(self.flavor, k)
    }

    pub fn compile_as(&self, flavor: OperatorFlavor, k: usize) -> Result<CompiledOperator<S>> {
        self.check_flavor(flavor)?;
        self.check_depth(flavor, k)?;
        let alphabet = *self.alphabet();
        let n = alphabet.cylinder_count(k)?;
        let kk = self.relation.class_size();
        let rows: Vec<Vec<Branch<S>>> = match flavor {
            f if f.is_haar_ruelle() => (0..n)
                .into_par_iter()
                .map(|w| {
                    let word = alphabet.index_word(k, w);
                    let mut row = Vec::with_capacity(alphabet.size() * kk);
                    for j in alphabet.symbols() {
                        let mut jw = Vec::with_capacity(k + 1);
                        jw.push(j);
                        jw.extend_from_slice(&word);
                        let jx = Point::from_parts(jw.clone(), 1);
                        for a in 0..kk {
                            let mut s = jw.clone();
                            self.relation.substitute_word(&mut s, a);
                            let target = alphabet.word_index(&s[..k]);
                            let lw = self.branch_log_weight(f, &jx, &Point::from_parts(s, 1));
                            row.push(Branch::new(target, lw));
                        }
                    }
                    row
                })
                .collect(),
            _ => {
                let mut rows: Vec<Vec<Branch<S>>> =
                    (0..n).into_par_iter().map(|w| self.haar_row(&alphabet, k, w)).collect();
                if flavor == OperatorFlavor::HaarNormalized {
                    let inv_k = S::one() / S::of(kk as f64);
                    let log_h1: Vec<S> =
                        rows.iter().map(|row| log_sum_exp(row.iter().map(|b| b.log_weight)) + inv_k.ln()).collect();
                    for (w, row) in rows.iter_mut().enumerate() {
                        for b in row.iter_mut() {
                            *b = Branch::new(b.target, b.log_weight + log_h1[b.target] - log_h1[w]);
                        }
                    }
                }
                rows
            }
        };
        Ok(CompiledOperator { alphabet, depth: k, prefactor: self.prefactor(flavor), rows })
    }

    fn haar_row(&self, alphabet: &Alphabet, k: usize, w: usize) -> Vec<Branch<S>> {
        let word = alphabet.index_word(k, w);
        let x = Point::from_parts(word.clone(), 1);
        (0..self.relation.class_size())
            .map(|a| {
                let mut s = word.clone();
                self.relation.substitute_word(&mut s, a);
                let target = alphabet.word_index(&s);
                let lw = self.params.log_modular(&x, &Point::from_parts(s, 1));
                Branch::new(target, lw)
            })
            .collect()
    }

    /// `ln H_{-βc}(1)` at depth `k`, the log-normalizer of the Haar operator.
    pub fn haar_log_normalizer(&self, k: usize) -> Result<DepthFunction<S>> {
        let op = self.compile_as(OperatorFlavor::Haar, k)?;
        let ones = vec![S::one(); op.size()];
        let h1 = op.apply(&ones)?;
        DepthFunction::new(op.alphabet, k, h1.into_iter().map(|v| v.ln()).collect())
    }

    /// Apply the spec's own flavor.
    pub fn apply(&self, f: &DepthFunction<S>) -> Result<DepthFunction<S>> {
        apply_flavor(self, self.flavor, f)
    }
}

fn apply_flavor<S: Real>(
    spec: &OperatorSpec<S>,
    flavor: OperatorFlavor,
    f: &DepthFunction<S>,
) -> Result<DepthFunction<S>> {
    if f.alphabet() != spec.alphabet() {
        return Err(Error::InvalidParameter("function and relation alphabets differ".into()));
    }
    let op = spec.compile_as(flavor, f.depth())?;
    DepthFunction::new(*f.alphabet(), f.depth(), op.apply(f.values())?)
}

pub fn apply_haar_ruelle<S: Real>(spec: &OperatorSpec<S>, f: &DepthFunction<S>) -> Result<DepthFunction<S>> {
    apply_flavor(spec, OperatorFlavor::HaarRuelleGeneral, f)
}

pub fn apply_separable_haar_ruelle<S: Real>(spec: &OperatorSpec<S>, f: &DepthFunction<S>) -> Result<DepthFunction<S>> {
    apply_flavor(spec, OperatorFlavor::HaarRuelleSeparable, f)
}

pub fn apply_hutchinson_barnsley<S: Real>(spec: &OperatorSpec<S>, f: &DepthFunction<S>) -> Result<DepthFunction<S>> {
    apply_flavor(spec, OperatorFlavor::HutchinsonBarnsley, f)
}

pub fn apply_haar<S: Real>(spec: &OperatorSpec<S>, f: &DepthFunction<S>) -> Result<DepthFunction<S>> {
    apply_flavor(spec, OperatorFlavor::Haar, f)
}

pub fn apply_normalized_haar<S: Real>(spec: &OperatorSpec<S>, f: &DepthFunction<S>) -> Result<DepthFunction<S>> {
    apply_flavor(spec, OperatorFlavor::HaarNormalized, f)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Branch<S> {
    pub target: usize,
    pub log_weight: S,
    pub weight: S,
}

impl<S: Real> Branch<S> {
    fn new(target: usize, log_weight: S) -> Self {
        Self { target, log_weight, weight: log_weight.exp() }
    }
}

/// An operator restricted to depth-`k` functions.
#[derive(Clone, Debug)]
pub struct CompiledOperator<S> {
    alphabet: Alphabet,
    depth: usize,
    prefactor: S,
    rows: Vec<Vec<Branch<S>>>,
}

impl<S: Real> CompiledOperator<S> {
    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    pub fn prefactor(&self) -> S {
        self.prefactor
    }

    pub fn rows(&self) -> &[Vec<Branch<S>>] {
        &self.rows
    }

    pub fn apply(&self, f: &[S]) -> Result<Vec<S>> {
        if f.len() != self.size() {
            return Err(Error::LengthMismatch { expected: self.size(), got: f.len() });
        }
        Ok(self
            .rows
            .par_iter()
            .map(|row| {
                let mut acc = S::zero();
                for b in row {
                    acc = acc + b.weight * f[b.target];
                }
                self.prefactor * acc
            })
            .collect())
    }

    /// Dual action on a vector of cylinder masses.
    pub fn apply_transpose(&self, m: &[S]) -> Result<Vec<S>> {
        if m.len() != self.size() {
            return Err(Error::LengthMismatch { expected: self.size(), got: m.len() });
        }
        let mut out = vec![S::zero(); self.size()];
        for (row, &mass) in self.rows.iter().zip(m) {
            for b in row {
                out[b.target] = out[b.target] + self.prefactor * b.weight * mass;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cocycle::{Cocycle, Potential};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bin() -> Alphabet {
        Alphabet::new(2).unwrap()
    }

    fn spec(free: &[usize], v: Potential<f64>, beta: f64, flavor: OperatorFlavor) -> OperatorSpec<f64> {
        let rel = FreeCoordinateRelation::new(*v.alphabet(), free.iter().copied()).unwrap();
        OperatorSpec::new(rel, ModularParameters::new(beta, Cocycle::separable(v)), flavor).unwrap()
    }

    fn binary_example(beta: f64, flavor: OperatorFlavor) -> OperatorSpec<f64> {
        spec(&[3], Potential::quarter_square_first_coord(bin()), beta, flavor)
    }

    fn random_fn(rng: &mut ChaCha8Rng, alphabet: Alphabet, k: usize, lo: f64) -> DepthFunction<f64> {
        let n = alphabet.cylinder_count(k).unwrap();
        DepthFunction::new(alphabet, k, (0..n).map(|_| rng.gen_range(lo..1.0)).collect()).unwrap()
    }

    /// Pointwise evaluation straight from the class enumeration, independent
    /// of the compiled word tables.
    fn brute_force(spec: &OperatorSpec<f64>, flavor: OperatorFlavor, f: &DepthFunction<f64>, x: &Point) -> f64 {
        let a = *spec.alphabet();
        let rel = &spec.relation;
        let beta = spec.params.beta;
        let c = &spec.params.cocycle;
        match flavor {
            OperatorFlavor::Haar => {
                let class = rel.class_of(x).members;
                class.iter().map(|s| f.value(s) * (-beta * c.value(x, s)).exp()).sum::<f64>() / class.len() as f64
            }
            OperatorFlavor::HaarNormalized => {
                let h1 = |p: &Point| {
                    let class = rel.class_of(p).members;
                    class.iter().map(|s| (-beta * c.value(p, s)).exp()).sum::<f64>() / class.len() as f64
                };
                let class = rel.class_of(x).members;
                class.iter().map(|s| f.value(s) * (-beta * c.value(x, s)).exp() * h1(s) / h1(x)).sum::<f64>()
                    / class.len() as f64
            }
            _ => {
                let mut total = 0.0;
                for j in a.symbols() {
                    let jx = x.concat(&a, j).unwrap();
                    for s in rel.class_of(&jx).members {
                        let lw = match flavor {
                            OperatorFlavor::HaarRuelleGeneral => -beta * c.value(&jx, &s),
                            _ => -beta * c.potential().unwrap().value(&s),
                        };
                        total += f.value(&s) * lw.exp();
                    }
                }
                if flavor == OperatorFlavor::HutchinsonBarnsley {
                    total
                } else {
                    total / a.size() as f64
                }
            }
        }
    }

    const ALL: [OperatorFlavor; 5] = [
        OperatorFlavor::HaarRuelleGeneral,
        OperatorFlavor::HaarRuelleSeparable,
        OperatorFlavor::HutchinsonBarnsley,
        OperatorFlavor::Haar,
        OperatorFlavor::HaarNormalized,
    ];

    #[test]
    fn compiled_operators_match_pointwise_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a3 = Alphabet::new(3).unwrap();
        let v3 = Potential::from_fn(a3, 2, |w| 0.3 * w[0] as f64 - 0.1 * (w[1] as f64).powi(2)).unwrap();
        let cases = [
            binary_example(1.0, OperatorFlavor::Haar),
            spec(
                &[1],
                Potential::from_fn(bin(), 2, |w| (w[0] * w[1]) as f64 / 3.0).unwrap(),
                0.7,
                OperatorFlavor::Haar,
            ),
            spec(&[1, 3], v3, 1.3, OperatorFlavor::Haar),
        ];
        for base in &cases {
            let k = 4;
            let f = random_fn(&mut rng, *base.alphabet(), k, -1.0);
            for flavor in ALL {
                let out = apply_flavor(base, flavor, &f).unwrap();
                for w in enumerate_cylinders(base.alphabet(), k).unwrap() {
                    for tail in [1, 2] {
                        let x = w.point(tail);
                        let expected = brute_force(base, flavor, &f, &x);
                        let got = out.value(&x);
                        assert!((got - expected).abs() < 1e-12, "{flavor:?} at {x}: {got} vs {expected}");
                    }
                }
            }
        }
    }

    #[test]
    fn classical_general_operator_on_one() {
        let s = spec(&[1], Potential::zero(bin()), 1.0, OperatorFlavor::HaarRuelleGeneral);
        let out = apply_haar_ruelle(&s, &DepthFunction::ones(bin(), 3).unwrap()).unwrap();
        assert!(out.values().iter().all(|&v| v == 2.0));
        let zero = DepthFunction::constant(bin(), 3, 0.0).unwrap();
        assert!(apply_haar_ruelle(&s, &zero).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn separable_examples() {
        let s = spec(&[1], Potential::zero(bin()), 1.0, OperatorFlavor::HaarRuelleSeparable);
        let out = apply_separable_haar_ruelle(&s, &DepthFunction::ones(bin(), 2).unwrap()).unwrap();
        assert!(out.values().iter().all(|&v| v == 2.0));

        let s = binary_example(1.0, OperatorFlavor::HaarRuelleSeparable);
        let out = apply_separable_haar_ruelle(&s, &DepthFunction::ones(bin(), 5).unwrap()).unwrap();
        let x0 = Point::constant(&bin(), 1).unwrap();
        assert!((out.value(&x0) - (1.0 + (-0.25f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn separable_is_hutchinson_barnsley_over_d() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for beta in [0.0, 1.0, 10.0, 30.0] {
            let s = binary_example(beta, OperatorFlavor::HutchinsonBarnsley);
            for _ in 0..20 {
                let f = random_fn(&mut rng, bin(), 5, -1.0);
                let l = apply_separable_haar_ruelle(&s, &f).unwrap();
                let b = apply_hutchinson_barnsley(&s, &f).unwrap();
                for (x, y) in l.values().iter().zip(b.values()) {
                    assert!((x - y / 2.0).abs() <= 1e-15 * y.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn unit_weights_count_branches() {
        let a3 = Alphabet::new(3).unwrap();
        let s = spec(&[1, 3], Potential::zero(a3), 1.0, OperatorFlavor::HutchinsonBarnsley);
        let out = apply_hutchinson_barnsley(&s, &DepthFunction::ones(a3, 3).unwrap()).unwrap();
        assert!(out.values().iter().all(|&v| v == 27.0));
    }

    #[test]
    fn positivity_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = binary_example(1.0, OperatorFlavor::HaarRuelleGeneral);
        for _ in 0..100 {
            let f = random_fn(&mut rng, bin(), 5, 0.0);
            let g = f.axpy(1.0, &random_fn(&mut rng, bin(), 5, 0.0)).unwrap();
            for flavor in ALL {
                let af = apply_flavor(&s, flavor, &f).unwrap();
                let ag = apply_flavor(&s, flavor, &g).unwrap();
                assert!(af.values().iter().all(|&v| v >= 0.0));
                assert!(af.values().iter().zip(ag.values()).all(|(a, b)| a <= b));
            }
        }
    }

    #[test]
    fn linearity_all_flavors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = spec(&[1], Potential::from_fn(bin(), 2, |w| w[1] as f64 * 0.4).unwrap(), 2.0, OperatorFlavor::Haar);
        for _ in 0..20 {
            let f = random_fn(&mut rng, bin(), 4, -1.0);
            let g = random_fn(&mut rng, bin(), 4, -1.0);
            let alpha = rng.gen_range(-3.0..3.0);
            for flavor in ALL {
                let lhs = apply_flavor(&s, flavor, &f.axpy(alpha, &g).unwrap()).unwrap();
                let rhs =
                    apply_flavor(&s, flavor, &f).unwrap().axpy(alpha, &apply_flavor(&s, flavor, &g).unwrap()).unwrap();
                for (a, b) in lhs.values().iter().zip(rhs.values()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn haar_is_an_idempotent_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = Potential::from_fn(bin(), 2, |w| (w[0] as f64 - 1.5) * (1.0 + w[1] as f64)).unwrap();
        let s = spec(&[1], v, 1.5, OperatorFlavor::Haar);
        for _ in 0..100 {
            let f = random_fn(&mut rng, bin(), 4, -1.0);
            let hf = apply_haar(&s, &f).unwrap();
            let hhf = apply_haar(&s, &hf).unwrap();
            for (a, b) in hf.values().iter().zip(hhf.values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let id = spec(&[], Potential::quarter_square_first_coord(bin()), 3.0, OperatorFlavor::Haar);
        let f = random_fn(&mut rng, bin(), 3, -1.0);
        assert_eq!(apply_haar(&id, &f).unwrap(), f);
    }

    #[test]
    fn normalized_haar_maps_one_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = Potential::from_fn(bin(), 3, |w| (w[0] * w[2]) as f64 - 0.5 * w[1] as f64).unwrap();
        for beta in [0.0, 0.5, 4.0] {
            let s = spec(&[1, 3], v.clone(), beta, OperatorFlavor::HaarNormalized);
            let one = apply_normalized_haar(&s, &DepthFunction::ones(bin(), 4).unwrap()).unwrap();
            assert!(one.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
            for _ in 0..50 {
                let f = random_fn(&mut rng, bin(), 4, -1.0);
                let nf = apply_normalized_haar(&s, &f).unwrap();
                let nnf = apply_normalized_haar(&s, &nf).unwrap();
                for (a, b) in nf.values().iter().zip(nnf.values()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
        // β = 0: plain class average
        let s = spec(&[1], v, 0.0, OperatorFlavor::HaarNormalized);
        let f = random_fn(&mut rng, bin(), 3, -1.0);
        let out = apply_normalized_haar(&s, &f).unwrap();
        let avg = apply_haar(&s, &f).unwrap();
        assert_eq!(out, avg);
    }

    #[test]
    fn classical_reduction_matches_textbook_ruelle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v = Potential::from_fn(bin(), 3, |w| 0.2 * w[0] as f64 + 0.05 * (w[1] * w[2]) as f64).unwrap();
        let s = spec(&[1], v.clone(), 1.7, OperatorFlavor::HaarRuelleSeparable);
        let k = 4;
        let mut inputs: Vec<DepthFunction<f64>> = enumerate_cylinders(&bin(), k)
            .unwrap()
            .iter()
            .map(|c| DepthFunction::indicator(bin(), c).unwrap())
            .collect();
        inputs.extend((0..10).map(|_| random_fn(&mut rng, bin(), k, -1.0)));
        for f in &inputs {
            let out = apply_separable_haar_ruelle(&s, f).unwrap();
            for w in enumerate_cylinders(&bin(), k).unwrap() {
                let x = w.point(1);
                let textbook: f64 = bin()
                    .symbols()
                    .map(|i| {
                        let ix = x.concat(&bin(), i).unwrap();
                        f.value(&ix) * (-1.7 * v.value(&ix)).exp()
                    })
                    .sum();
                assert!((out.value(&x) - textbook).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn depth_preconditions() {
        let s = binary_example(1.0, OperatorFlavor::HaarRuelleSeparable);
        let f = DepthFunction::ones(bin(), 2).unwrap();
        assert!(matches!(s.apply(&f), Err(Error::DepthIncompatible(_))));
        let deep = spec(&[1], Potential::from_fn(bin(), 4, |_| 0.0).unwrap(), 1.0, OperatorFlavor::Haar);
        let f3 = DepthFunction::ones(bin(), 3).unwrap();
        assert!(matches!(deep.apply(&f3), Err(Error::DepthIncompatible(_))));
        assert!(apply_haar_ruelle(&deep, &f3).is_ok());

        let rel = FreeCoordinateRelation::new(bin(), [3]).unwrap();
        let general = ModularParameters::new(1.0, Cocycle::general(1, |_: &Point, _: &Point| 0.0));
        assert!(matches!(
            OperatorSpec::new(rel, general, OperatorFlavor::HutchinsonBarnsley),
            Err(Error::NotSeparable)
        ));
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_fn(&mut rng, bin(), 3, -1.0);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("cylinder,value\n\"1,1,1\","));
        assert_eq!(DepthFunction::<f64>::read_csv(bin(), buf.as_slice()).unwrap(), f);
        assert!(DepthFunction::<f64>::read_csv(bin(), "cylinder,value\n\"1,1\",0.5\n".as_bytes()).is_err());
    }
}
