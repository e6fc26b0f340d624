//! Free-coordinate equivalence relations and their ordered class maps.
//!
//! `x ∼ y` iff `x_i = y_i` for every `i` outside a finite free set `S`. The
//! class of `x` is obtained by writing every assignment of symbols into the
//! coordinates of `S`; assignments are ordered lexicographically with the
//! smallest free coordinate most significant, which fixes the class map
//! `ψ_1, …, ψ_K` (`K = d^{|S|}`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::symbolic::{metric, Alphabet, Point, Symbol};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RelationRepr", into = "RelationRepr")]
pub struct FreeCoordinateRelation {
    alphabet: Alphabet,
    free_set: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationRepr {
    d: usize,
    free_set: Vec<usize>,
}

impl TryFrom<RelationRepr> for FreeCoordinateRelation {
    type Error = Error;

    fn try_from(r: RelationRepr) -> Result<Self> {
        Self::new(Alphabet::new(r.d)?, r.free_set)
    }
}

impl From<FreeCoordinateRelation> for RelationRepr {
    fn from(r: FreeCoordinateRelation) -> Self {
        Self { d: r.alphabet.size(), free_set: r.free_set }
    }
}

impl FreeCoordinateRelation {
    pub fn new(alphabet: Alphabet, free_set: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut free_set: Vec<usize> = free_set.into_iter().collect();
        if free_set.contains(&0) {
            return Err(Error::InvalidParameter("free coordinates are 1-based".into()));
        }
        free_set.sort_unstable();
        free_set.dedup();
        alphabet.cylinder_count(free_set.len())?;
        Ok(Self { alphabet, free_set })
    }

    /// `x ∼ y` iff `x = y`.
    pub fn identity(alphabet: Alphabet) -> Self {
        Self { alphabet, free_set: Vec::new() }
    }

    /// `x ∼ y` iff `σx = σy`, i.e. `S = {1}`.
    pub fn first_coordinate_free(alphabet: Alphabet) -> Self {
        Self { alphabet, free_set: vec![1] }
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn free_set(&self) -> &[usize] {
        &self.free_set
    }

    /// Largest free coordinate, `0` for the identity relation.
    pub fn max_free(&self) -> usize {
        self.free_set.last().copied().unwrap_or(0)
    }

    /// Class cardinality `K = d^{|S|}`.
    pub fn class_size(&self) -> usize {
        self.alphabet.size().pow(self.free_set.len() as u32)
    }

    /// Symbols written into the free coordinates by the `a`-th (0-based) class map.
    pub fn assignment(&self, a: usize) -> Vec<Symbol> {
        self.alphabet.index_word(self.free_set.len(), a)
    }

    /// 0-based position of `x` inside its own class.
    pub fn position_in_class(&self, x: &Point) -> usize {
        let own: Vec<Symbol> = self.free_set.iter().map(|&i| x.coord(i)).collect();
        self.alphabet.word_index(&own)
    }

    pub fn equivalent(&self, x: &Point, y: &Point) -> bool {
        let horizon = x.prefix().len().max(y.prefix().len()).max(self.max_free()) + 1;
        (1..=horizon).filter(|k| self.free_set.binary_search(k).is_err()).all(|k| x.coord(k) == y.coord(k))
    }

    /// `ψ_{a+1}(x)` with a 0-based index; `a < K` is the caller's responsibility.
    pub(crate) fn psi0(&self, a: usize, x: &Point) -> Point {
        let symbols = self.assignment(a);
        self.free_set.iter().zip(symbols).fold(x.clone(), |p, (&i, s)| p.with_coord(i, s))
    }

    /// `ψ_a(x)` for `1 ≤ a ≤ K`.
    pub fn psi(&self, a: usize, x: &Point) -> Result<Point> {
        let size = self.class_size();
        if a == 0 || a > size {
            return Err(Error::IndexOutOfRange { index: a, size });
        }
        Ok(self.psi0(a - 1, x))
    }

    /// Word-level class map: overwrite the free coordinates that fall inside `word`.
    pub(crate) fn substitute_word(&self, word: &mut [Symbol], a: usize) {
        let symbols = self.alphabet.index_word(self.free_set.len(), a);
        for (&i, s) in self.free_set.iter().zip(symbols) {
            if i <= word.len() {
                word[i - 1] = s;
            }
        }
    }

    pub fn class_of(&self, x: &Point) -> ClassEnumeration {
        let members = (0..self.class_size()).map(|a| self.psi0(a, x)).collect();
        ClassEnumeration { members, index_of_base: self.position_in_class(x) }
    }
}

/// The ordered class `[x] = {ψ_1(x), …, ψ_K(x)}` with the counting measure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassEnumeration {
    pub members: Vec<Point>,
    /// 0-based position of the enumerated point among `members`.
    pub index_of_base: usize,
}

impl ClassEnumeration {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// An arrow `(source, target)` of the groupoid `G = {(x, y) : x ∼ y}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GroupoidElement {
    source: Point,
    target: Point,
}

impl GroupoidElement {
    pub fn new(rel: &FreeCoordinateRelation, source: Point, target: Point) -> Result<Self> {
        if !rel.equivalent(&source, &target) {
            return Err(Error::NotEquivalent(source.to_string(), target.to_string()));
        }
        Ok(Self { source, target })
    }

    pub fn unit(x: Point) -> Self {
        Self { source: x.clone(), target: x }
    }

    pub fn source(&self) -> &Point {
        &self.source
    }

    pub fn target(&self) -> &Point {
        &self.target
    }
}

/// Worst-case ratio `d(ψ_a(j*x), ψ_a(j*z)) / d(x, z)` over all distinct
/// points whose first `probe_depth` coordinates are free and whose tail is 1.
pub fn lipschitz_estimate<S: Scalar>(
    rel: &FreeCoordinateRelation,
    j: Symbol,
    a: usize,
    probe_depth: usize,
) -> Result<S> {
    let alphabet = rel.alphabet();
    alphabet.check(j as usize)?;
    let size = rel.class_size();
    if a == 0 || a > size {
        return Err(Error::IndexOutOfRange { index: a, size });
    }
    if probe_depth < rel.max_free() + 2 {
        return Err(Error::InvalidParameter(format!(
            "probe depth {probe_depth} must be at least max(S) + 2 = {}",
            rel.max_free() + 2
        )));
    }
    let n = alphabet.cylinder_count(probe_depth)?;
    let points: Vec<Point> = (0..n).map(|i| Point::from_parts(alphabet.index_word(probe_depth, i), 1)).collect();
    let images: Vec<Point> = points.iter().map(|x| rel.psi0(a - 1, &x.prepend(j))).collect();

    let mut best = S::zero();
    for u in 0..n {
        for v in (u + 1)..n {
            let ratio = metric::<S>(&images[u], &images[v]) / metric::<S>(&points[u], &points[v]);
            if ratio > best {
                best = ratio;
            }
        }
    }
    Ok(best)
}

/// Maximum of [`lipschitz_estimate`] over every symbol `j` and class index `a`.
pub fn max_lipschitz_estimate<S: Scalar>(rel: &FreeCoordinateRelation, probe_depth: usize) -> Result<S> {
    let mut best = S::zero();
    for j in rel.alphabet().symbols() {
        for a in 1..=rel.class_size() {
            let v = lipschitz_estimate::<S>(rel, j, a, probe_depth)?;
            if v > best {
                best = v;
            }
        }
    }
    Ok(best)
}
