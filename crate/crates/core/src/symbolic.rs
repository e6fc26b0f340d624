//! Points, cylinders and the metric on the full shift `{1,…,d}^ℕ`.
//!
//! Coordinates are 1-based. A [`Point`] is a finite prefix followed by one
//! symbol repeated forever, kept in canonical form (the prefix never ends in
//! the tail symbol) so that structural equality is equality of sequences.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type Symbol = u8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Alphabet {
    d: u8,
}

impl Alphabet {
    pub fn new(d: usize) -> Result<Self> {
        if !(2..=u8::MAX as usize).contains(&d) {
            return Err(Error::InvalidAlphabet(d));
        }
        Ok(Self { d: d as u8 })
    }

    pub fn size(&self) -> usize {
        self.d as usize
    }

    pub fn symbols(&self) -> impl Iterator<Item = Symbol> + Clone {
        1..=self.d
    }

    pub fn check(&self, symbol: usize) -> Result<Symbol> {
        if symbol >= 1 && symbol <= self.d as usize {
            Ok(symbol as Symbol)
        } else {
            Err(Error::SymbolOutOfRange { symbol, d: self.d })
        }
    }

    /// Number of depth-`k` cylinders, `d^k`.
    pub fn cylinder_count(&self, k: usize) -> Result<usize> {
        u32::try_from(k)
            .ok()
            .and_then(|k| self.size().checked_pow(k))
            .ok_or_else(|| Error::InvalidParameter(format!("d^{k} overflows usize")))
    }

    /// Lexicographic rank of a word (first symbol most significant).
    pub fn word_index(&self, word: &[Symbol]) -> usize {
        word.iter().fold(0, |acc, &s| acc * self.size() + (s as usize - 1))
    }

    /// Inverse of [`Alphabet::word_index`] for words of length `k`.
    pub fn index_word(&self, k: usize, mut index: usize) -> Vec<Symbol> {
        let d = self.size();
        let mut word = vec![1; k];
        for slot in word.iter_mut().rev() {
            *slot = (index % d) as Symbol + 1;
            index /= d;
        }
        word
    }
}

impl TryFrom<usize> for Alphabet {
    type Error = Error;

    fn try_from(d: usize) -> Result<Self> {
        Self::new(d)
    }
}

impl From<Alphabet> for usize {
    fn from(a: Alphabet) -> usize {
        a.size()
    }
}

/// An eventually constant point of `{1,…,d}^ℕ`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point {
    prefix: Vec<Symbol>,
    tail: Symbol,
}

impl Point {
    pub fn new(alphabet: &Alphabet, prefix: Vec<Symbol>, tail: Symbol) -> Result<Self> {
        for &s in prefix.iter().chain(std::iter::once(&tail)) {
            alphabet.check(s as usize)?;
        }
        Ok(Self::from_parts(prefix, tail))
    }

    /// The constant sequence `(s, s, s, …)`.
    pub fn constant(alphabet: &Alphabet, s: Symbol) -> Result<Self> {
        Self::new(alphabet, Vec::new(), s)
    }

    /// Unchecked constructor; callers guarantee symbols are in range.
    pub(crate) fn from_parts(mut prefix: Vec<Symbol>, tail: Symbol) -> Self {
        while prefix.last() == Some(&tail) {
            prefix.pop();
        }
        Self { prefix, tail }
    }

    pub fn prefix(&self) -> &[Symbol] {
        &self.prefix
    }

    pub fn tail(&self) -> Symbol {
        self.tail
    }

    /// Coordinate `k` (1-based). Total for every `k ≥ 1`.
    pub fn coord(&self, k: usize) -> Symbol {
        assert!(k >= 1, "coordinates are 1-based");
        self.prefix.get(k - 1).copied().unwrap_or(self.tail)
    }

    /// The first `k` coordinates.
    pub fn word(&self, k: usize) -> Vec<Symbol> {
        (1..=k).map(|i| self.coord(i)).collect()
    }

    pub fn concat(&self, alphabet: &Alphabet, i: Symbol) -> Result<Self> {
        alphabet.check(i as usize)?;
        Ok(self.prepend(i))
    }

    pub(crate) fn prepend(&self, i: Symbol) -> Self {
        let mut prefix = Vec::with_capacity(self.prefix.len() + 1);
        prefix.push(i);
        prefix.extend_from_slice(&self.prefix);
        Self::from_parts(prefix, self.tail)
    }

    pub fn shift(&self) -> Self {
        match self.prefix.split_first() {
            Some((_, rest)) => Self::from_parts(rest.to_vec(), self.tail),
            None => self.clone(),
        }
    }

    /// Replace coordinate `k` by `s` (unchecked symbol).
    pub(crate) fn with_coord(&self, k: usize, s: Symbol) -> Self {
        let mut prefix = self.prefix.clone();
        if prefix.len() < k {
            prefix.resize(k, self.tail);
        }
        prefix[k - 1] = s;
        Self::from_parts(prefix, self.tail)
    }

    /// Parse the textual form `"1,2|1"`: prefix symbols, a bar, the tail.
    pub fn parse(s: &str, alphabet: &Alphabet) -> Result<Self> {
        let (head, tail) =
            s.split_once('|').ok_or_else(|| Error::Parse(format!("point {s:?} lacks a '|' tail marker")))?;
        let prefix = parse_symbols(head, alphabet, true)?;
        let tail = parse_symbols(tail, alphabet, false)?;
        match tail.as_slice() {
            [t] => Self::new(alphabet, prefix, *t),
            _ => Err(Error::Parse(format!("point {s:?} needs exactly one tail symbol"))),
        }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", join_symbols(&self.prefix), self.tail)
    }
}

/// Smallest `k ≥ 1` with `x_k ≠ z_k`, or `None` when the points coincide.
pub fn first_difference(x: &Point, z: &Point) -> Option<usize> {
    // Past both prefixes the points are constant, so one extra coordinate decides.
    let horizon = x.prefix.len().max(z.prefix.len()) + 1;
    (1..=horizon).find(|&k| x.coord(k) != z.coord(k))
}

/// `d(x, z) = 2^{-m}` with `m` the first differing coordinate, `0` if `x = z`.
pub fn metric<S: Scalar>(x: &Point, z: &Point) -> S {
    first_difference(x, z).map_or_else(S::zero, S::pow2_neg)
}

pub fn concat(alphabet: &Alphabet, i: Symbol, x: &Point) -> Result<Point> {
    x.concat(alphabet, i)
}

pub fn shift(x: &Point) -> Point {
    x.shift()
}

/// The cylinder `{x : x_i = word_i, i ≤ k}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cylinder {
    word: Vec<Symbol>,
}

impl Cylinder {
    pub fn new(alphabet: &Alphabet, word: Vec<Symbol>) -> Result<Self> {
        if word.is_empty() {
            return Err(Error::ZeroDepth);
        }
        for &s in &word {
            alphabet.check(s as usize)?;
        }
        Ok(Self { word })
    }

    pub(crate) fn from_word(word: Vec<Symbol>) -> Self {
        Self { word }
    }

    pub fn from_index(alphabet: &Alphabet, k: usize, index: usize) -> Self {
        Self::from_word(alphabet.index_word(k, index))
    }

    pub fn word(&self) -> &[Symbol] {
        &self.word
    }

    pub fn depth(&self) -> usize {
        self.word.len()
    }

    pub fn index(&self, alphabet: &Alphabet) -> usize {
        alphabet.word_index(&self.word)
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.word.iter().enumerate().all(|(i, &s)| x.coord(i + 1) == s)
    }

    /// The point `(word, tail, tail, …)`.
    pub fn point(&self, tail: Symbol) -> Point {
        Point::from_parts(self.word.clone(), tail)
    }

    pub fn parse(s: &str, alphabet: &Alphabet) -> Result<Self> {
        Self::new(alphabet, parse_symbols(s, alphabet, false)?)
    }
}

impl fmt::Display for Cylinder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&join_symbols(&self.word))
    }
}

/// Histogram abscissa `t = Σ a_i 2^{-(i+1)}`, defined for `d = 2` only.
pub fn t_coordinate<S: Scalar>(alphabet: &Alphabet, c: &Cylinder) -> Result<S> {
    if alphabet.size() != 2 {
        return Err(Error::InvalidParameter(format!("t coordinate is defined for d = 2, got d = {}", alphabet.size())));
    }
    let mut t = S::zero();
    for (i, &a) in c.word.iter().enumerate() {
        let a = S::from_u8(a).expect("small integers are representable");
        t = t + a * S::pow2_neg(i + 2);
    }
    Ok(t)
}

/// All `d^k` depth-`k` cylinders in lexicographic order.
pub fn enumerate_cylinders(alphabet: &Alphabet, k: usize) -> Result<Vec<Cylinder>> {
    if k == 0 {
        return Err(Error::ZeroDepth);
    }
    let n = alphabet.cylinder_count(k)?;
    Ok((0..n).map(|i| Cylinder::from_index(alphabet, k, i)).collect())
}

fn join_symbols(symbols: &[Symbol]) -> String {
    symbols.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_symbols(s: &str, alphabet: &Alphabet, allow_empty: bool) -> Result<Vec<Symbol>> {
    let s = s.trim();
    if s.is_empty() {
        return if allow_empty { Ok(Vec::new()) } else { Err(Error::Parse("empty symbol list".into())) };
    }
    s.split(',')
        .map(|tok| {
            let v: usize = tok.trim().parse().map_err(|_| Error::Parse(format!("bad symbol {tok:?}")))?;
            alphabet.check(v)
        })
        .collect()
}
