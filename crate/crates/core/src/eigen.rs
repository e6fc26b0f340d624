//! Perron eigenpairs of the depth-`k` operator matrices, and the ratio
//! iteration `Bⁿ(f)(x₀) / Bⁿ(1)(x₀) → ∫ f dμ`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{CompiledOperator, DepthFunction, OperatorFlavor, OperatorSpec};
use crate::scalar::Real;
use crate::symbolic::{t_coordinate, Alphabet, Cylinder, Point};

/// Square row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<S> {
    n: usize,
    data: Vec<S>,
}

impl<S: Real> DenseMatrix<S> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![S::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, S::one());
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: row.len() });
            }
            data.extend(row);
        }
        Ok(Self { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn mul_vec(&self, v: &[S]) -> Vec<S> {
        (0..self.n)
            .into_par_iter()
            .map(|i| {
                let mut acc = S::zero();
                for (a, x) in self.row(i).iter().zip(v) {
                    acc = acc + *a * *x;
                }
                acc
            })
            .collect()
    }

    /// `Aᵀ v`.
    pub fn transpose_mul_vec(&self, v: &[S]) -> Vec<S> {
        (0..self.n)
            .into_par_iter()
            .map(|j| {
                let mut acc = S::zero();
                for (i, x) in v.iter().enumerate() {
                    acc = acc + self.get(i, j) * *x;
                }
                acc
            })
            .collect()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&v| v >= S::zero())
    }

    /// Some power of the zero pattern is strictly positive. Uses the Wielandt
    /// exponent `(n-1)^2 + 1`, past which a primitive matrix stays positive.
    pub fn is_primitive(&self) -> bool {
        let n = self.n;
        if n == 0 {
            return false;
        }
        let pattern = BitMatrix::from_fn(n, |i, j| self.get(i, j) > S::zero());
        let wielandt = (n - 1) * (n - 1) + 1;
        let mut power = pattern;
        let mut exponent = 1usize;
        while exponent < wielandt {
            power = power.square();
            exponent *= 2;
        }
        power.all_set()
    }
}

struct BitMatrix {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl BitMatrix {
    fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let words = n.div_ceil(64);
        let mut bits = vec![0u64; n * words];
        for i in 0..n {
            for j in 0..n {
                if f(i, j) {
                    bits[i * words + j / 64] |= 1 << (j % 64);
                }
            }
        }
        Self { n, words, bits }
    }

    fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.words + j / 64] >> (j % 64) & 1 == 1
    }

    fn square(&self) -> Self {
        let (n, words) = (self.n, self.words);
        let bits = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut row = vec![0u64; words];
                for j in 0..n {
                    if self.get(i, j) {
                        for (r, b) in row.iter_mut().zip(&self.bits[j * words..(j + 1) * words]) {
                            *r |= b;
                        }
                    }
                }
                row
            })
            .collect();
        Self { n, words, bits }
    }

    fn all_set(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.get(i, j)))
    }
}

/// Dense matrix `A` with `A · vec(f) = vec(apply(spec, f))` on depth-`k` functions.
pub fn build_matrix<S: Real>(spec: &OperatorSpec<S>, k: usize) -> Result<DenseMatrix<S>> {
    Ok(matrix_of(&spec.compile(k)?))
}

pub fn matrix_of<S: Real>(op: &CompiledOperator<S>) -> DenseMatrix<S> {
    let mut m = DenseMatrix::zeros(op.size());
    for (w, row) in op.rows().iter().enumerate() {
        for b in row {
            let v = m.get(w, b.target) + op.prefactor() * b.weight;
            m.set(w, b.target, v);
        }
    }
    m
}

/// A probability vector over the depth-`k` cylinders.
#[derive(Clone, Debug, PartialEq)]
pub struct CylinderMeasure<S> {
    alphabet: Alphabet,
    depth: usize,
    masses: Vec<S>,
}

impl<S: Real> CylinderMeasure<S> {
    pub fn new(alphabet: Alphabet, depth: usize, masses: Vec<S>) -> Result<Self> {
        let expected = alphabet.cylinder_count(depth)?;
        if depth == 0 {
            return Err(Error::ZeroDepth);
        }
        if masses.len() != expected {
            return Err(Error::LengthMismatch { expected, got: masses.len() });
        }
        if masses.iter().any(|&m| !(m >= S::zero()) || !m.is_finite()) {
            return Err(Error::InvalidParameter("masses must be finite and nonnegative".into()));
        }
        let total: S = masses.iter().copied().sum();
        let tol = S::of(1e-12).max(S::epsilon() * S::of(4.0 * expected as f64));
        if (total - S::one()).abs() > tol {
            return Err(Error::InvalidParameter(format!("masses sum to {total}, not 1")));
        }
        Ok(Self { alphabet, depth, masses })
    }

    /// Normalize nonnegative weights to mass 1.
    pub fn from_weights(alphabet: Alphabet, depth: usize, weights: Vec<S>) -> Result<Self> {
        let total: S = weights.iter().copied().sum();
        if !(total > S::zero()) || !total.is_finite() {
            return Err(Error::InvalidParameter("weights have no positive finite mass".into()));
        }
        Self::new(alphabet, depth, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(alphabet: Alphabet, depth: usize) -> Result<Self> {
        let n = alphabet.cylinder_count(depth)?;
        Self::from_weights(alphabet, depth, vec![S::one(); n])
    }

    pub fn point_mass(alphabet: Alphabet, cylinder: &Cylinder) -> Result<Self> {
        let n = alphabet.cylinder_count(cylinder.depth())?;
        let mut masses = vec![S::zero(); n];
        masses[cylinder.index(&alphabet)] = S::one();
        Self::new(alphabet, cylinder.depth(), masses)
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn masses(&self) -> &[S] {
        &self.masses
    }

    /// Mass of a cylinder of depth at most `self.depth()`.
    pub fn mass(&self, c: &Cylinder) -> Result<S> {
        if c.depth() > self.depth {
            return Err(Error::DepthIncompatible(format!(
                "cylinder of depth {} is finer than the measure (depth {})",
                c.depth(),
                self.depth
            )));
        }
        let block = self.alphabet.cylinder_count(self.depth - c.depth())?;
        let start = c.index(&self.alphabet) * block;
        Ok(self.masses[start..start + block].iter().copied().sum())
    }

    pub fn integrate(&self, f: &DepthFunction<S>) -> Result<S> {
        if f.depth() != self.depth || f.alphabet() != &self.alphabet {
            return Err(Error::DepthIncompatible("function and measure depths differ".into()));
        }
        Ok(f.values().iter().zip(&self.masses).map(|(&a, &b)| a * b).sum())
    }

    pub fn l1_distance(&self, other: &Self) -> Result<S> {
        if other.depth != self.depth {
            return Err(Error::DepthIncompatible("measures of different depths".into()));
        }
        Ok(self.masses.iter().zip(&other.masses).map(|(&a, &b)| (a - b).abs()).sum())
    }

    /// CSV with header `cylinder,mass`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["cylinder", "mass"])?;
        for (i, m) in self.masses.iter().enumerate() {
            let c = Cylinder::from_index(&self.alphabet, self.depth, i);
            w.write_record([c.to_string(), m.as_f64().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-13, max_iter: 100_000 }
    }
}

/// Output of [`perron_pair`] on a bare matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PerronPair<S> {
    pub eigenvalue: S,
    /// Left vector, normalized to sum 1.
    pub left: Vec<S>,
    /// Right vector, scaled so that `Σ left·right = 1`.
    pub right: Vec<S>,
    pub residual: S,
    pub iterations: usize,
    pub primitive: bool,
}

fn power_iterate<S: Real>(
    step: impl Fn(&[S]) -> Vec<S>,
    norm: impl Fn(&[S]) -> S,
    n: usize,
    opts: &SolverOptions,
) -> Result<(Vec<S>, usize)> {
    let tol = S::of(opts.tol);
    let mut v = vec![S::one(); n];
    let s = norm(&v);
    v.iter_mut().for_each(|x| *x = *x / s);
    let mut last_change = S::infinity();
    for it in 1..=opts.max_iter {
        let mut w = step(&v);
        let s = norm(&w);
        if !(s > S::zero()) || !s.is_finite() {
            return Err(Error::InvalidParameter("power iteration collapsed to zero".into()));
        }
        w.iter_mut().for_each(|x| *x = *x / s);
        last_change = w.iter().zip(&v).map(|(&a, &b)| (a - b).abs()).fold(S::zero(), S::max);
        v = w;
        if last_change < tol {
            return Ok((v, it));
        }
    }
    Err(Error::NonConvergence { iterations: opts.max_iter, last_change: last_change.as_f64() })
}

/// Perron eigenvalue with right (eigenfunction) and left (eigenmeasure)
/// vectors of a nonnegative matrix, by power iteration from the all-ones vector.
pub fn perron_pair<S: Real>(a: &DenseMatrix<S>, opts: &SolverOptions) -> Result<PerronPair<S>> {
    if !a.is_nonnegative() {
        return Err(Error::InvalidParameter("matrix has negative entries".into()));
    }
    let n = a.size();
    let sup = |v: &[S]| v.iter().copied().fold(S::zero(), |m, x| m.max(x.abs()));
    let total = |v: &[S]| v.iter().copied().sum::<S>();
    let (right, it_r) = power_iterate(|v| a.mul_vec(v), sup, n, opts)?;
    let (left, it_l) = power_iterate(|v| a.transpose_mul_vec(v), total, n, opts)?;

    let ah = a.mul_vec(&right);
    let dot = |u: &[S], v: &[S]| u.iter().zip(v).map(|(&x, &y)| x * y).sum::<S>();
    let eigenvalue = dot(&left, &ah) / dot(&left, &right);
    let scale = dot(&left, &right);
    let right: Vec<S> = right.into_iter().map(|h| h / scale).collect();

    let ah = a.mul_vec(&right);
    let atm = a.transpose_mul_vec(&left);
    let defect =
        |av: &[S], v: &[S]| av.iter().zip(v).map(|(&x, &y)| (x - eigenvalue * y).abs()).fold(S::zero(), S::max);
    let residual = defect(&ah, &right).max(defect(&atm, &left));
    Ok(PerronPair { eigenvalue, left, right, residual, iterations: it_r.max(it_l), primitive: a.is_primitive() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenResult<S> {
    /// Perron eigenvalue of the matrix of the spec's own flavor.
    pub eigenvalue: S,
    /// Eigenvalue on the Hutchinson-Barnsley scale (`d · λ` for `L` flavors).
    pub rho: S,
    /// Eigenvalue on the Haar-Ruelle scale (`ρ / d`).
    pub lambda: S,
    pub measure: CylinderMeasure<S>,
    /// Right eigenvector, normalized so that `∫ h dμ = 1`.
    pub eigenfunction: DepthFunction<S>,
    pub residual: S,
    pub iterations: usize,
    pub primitive: bool,
}

impl<S: Real> EigenResult<S> {
    /// The Gibbs measure `h · μ`.
    pub fn gibbs(&self) -> Result<CylinderMeasure<S>> {
        let w = self.measure.masses().iter().zip(self.eigenfunction.values()).map(|(&m, &h)| m * h).collect();
        CylinderMeasure::from_weights(*self.measure.alphabet(), self.measure.depth(), w)
    }
}

/// Build the depth-`k` matrix of `spec` and compute its Perron eigenpair.
pub fn solve_eigen<S: Real>(spec: &OperatorSpec<S>, k: usize, opts: &SolverOptions) -> Result<EigenResult<S>> {
    let a = build_matrix(spec, k)?;
    let pair = perron_pair(&a, opts)?;
    let alphabet = *spec.alphabet();
    let d = S::of(alphabet.size() as f64);
    let (rho, lambda) = match spec.flavor {
        OperatorFlavor::HutchinsonBarnsley => (pair.eigenvalue, pair.eigenvalue / d),
        OperatorFlavor::HaarRuelleGeneral | OperatorFlavor::HaarRuelleSeparable => {
            (pair.eigenvalue * d, pair.eigenvalue)
        }
        OperatorFlavor::Haar | OperatorFlavor::HaarNormalized => (pair.eigenvalue, pair.eigenvalue),
    };
    // Power iteration leaves rounding-level negatives at zero entries of μ.
    let masses = pair.left.iter().map(|&m| m.max(S::zero())).collect();
    Ok(EigenResult {
        eigenvalue: pair.eigenvalue,
        rho,
        lambda,
        measure: CylinderMeasure::from_weights(alphabet, k, masses)?,
        eigenfunction: DepthFunction::new(alphabet, k, pair.right)?,
        residual: pair.residual,
        iterations: pair.iterations,
        primitive: pair.primitive,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMethod {
    /// Explicit recursion over the `(d·K)ⁿ` orbit tree.
    Tree,
    /// Tree recursion memoized on (remaining levels, depth-`k` prefix).
    #[default]
    Memoized,
    /// `n` matrix-vector products.
    Matrix,
}

/// `(ratio, ln denominator)`: a node value `Bʳ(f)(x) = ratio · e^{log_den}`
/// with `e^{log_den} = Bʳ(1)(x)`.
#[derive(Clone, Copy, Debug)]
struct RatioNode<S> {
    ratio: S,
    log_den: S,
}

fn combine<S: Real>(children: impl Iterator<Item = (S, RatioNode<S>)>) -> RatioNode<S> {
    let terms: Vec<(S, S)> = children.map(|(lw, c)| (lw + c.log_den, c.ratio)).collect();
    let top = terms.iter().map(|t| t.0).fold(S::neg_infinity(), S::max);
    let mut den = S::zero();
    let mut num = S::zero();
    for &(l, r) in &terms {
        let w = (l - top).exp();
        den = den + w;
        num = num + w * r;
    }
    RatioNode { ratio: num / den, log_den: top + den.ln() }
}

fn check_ratio_inputs<S: Real>(spec: &OperatorSpec<S>, f: &DepthFunction<S>, n: usize) -> Result<()> {
    if !spec.flavor.is_haar_ruelle() {
        return Err(Error::InvalidParameter(format!(
            "ratio iteration needs a Haar-Ruelle flavor, got {:?}",
            spec.flavor
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("ratio iteration needs n ≥ 1".into()));
    }
    if f.alphabet() != spec.alphabet() {
        return Err(Error::InvalidParameter("function and relation alphabets differ".into()));
    }
    Ok(())
}

/// `Bⁿ(f)(x₀) / Bⁿ(1)(x₀)`. The `1/d` prefactor of the `L` flavors cancels.
pub fn ratio_iteration<S: Real>(
    spec: &OperatorSpec<S>,
    f: &DepthFunction<S>,
    x0: &Point,
    n: usize,
    method: RatioMethod,
) -> Result<S> {
    check_ratio_inputs(spec, f, n)?;
    match method {
        RatioMethod::Tree => Ok(tree_node(spec, f, x0, n)?.ratio),
        RatioMethod::Memoized => {
            let op = spec.compile(f.depth())?;
            let start = spec.alphabet().word_index(&x0.word(f.depth()));
            let mut memo = vec![vec![None; op.size()]; n + 1];
            Ok(memo_node(&op, f.values(), start, n, &mut memo).ratio)
        }
        RatioMethod::Matrix => {
            let op = spec.compile(f.depth())?;
            let start = spec.alphabet().word_index(&x0.word(f.depth()));
            let mut num = f.values().to_vec();
            let mut den = vec![S::one(); op.size()];
            for _ in 0..n {
                num = op.apply(&num)?;
                den = op.apply(&den)?;
                let s = den.iter().copied().fold(S::zero(), S::max);
                num.iter_mut().for_each(|v| *v = *v / s);
                den.iter_mut().for_each(|v| *v = *v / s);
            }
            Ok(num[start] / den[start])
        }
    }
}

fn tree_node<S: Real>(spec: &OperatorSpec<S>, f: &DepthFunction<S>, x: &Point, r: usize) -> Result<RatioNode<S>> {
    if r == 0 {
        return Ok(RatioNode { ratio: f.value(x), log_den: S::zero() });
    }
    let children = spec
        .branches_at(x)?
        .into_iter()
        .map(|(y, lw)| Ok((lw, tree_node(spec, f, &y, r - 1)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(combine(children.into_iter()))
}

fn memo_node<S: Real>(
    op: &CompiledOperator<S>,
    f: &[S],
    idx: usize,
    r: usize,
    memo: &mut [Vec<Option<RatioNode<S>>>],
) -> RatioNode<S> {
    if let Some(node) = memo[r][idx] {
        return node;
    }
    let node = if r == 0 {
        RatioNode { ratio: f[idx], log_den: S::zero() }
    } else {
        let children: Vec<(S, RatioNode<S>)> =
            op.rows()[idx].iter().map(|b| (b.log_weight, memo_node(op, f, b.target, r - 1, memo))).collect();
        combine(children.into_iter())
    };
    memo[r][idx] = Some(node);
    node
}

/// Masses `Bⁿ(1_w)(x₀) / Bⁿ(1)(x₀)` of every depth-`k` cylinder `w`, from
/// a single depth-first walk of the orbit tree of `x₀`.
pub fn ratio_distribution_tree<S: Real>(spec: &OperatorSpec<S>, k: usize, x0: &Point, n: usize) -> Result<Vec<S>> {
    let ones = DepthFunction::ones(*spec.alphabet(), k)?;
    check_ratio_inputs(spec, &ones, n)?;
    let alphabet = *spec.alphabet();
    let mut buckets = vec![S::neg_infinity(); alphabet.cylinder_count(k)?];
    walk(spec, k, x0, n, S::zero(), &mut buckets)?;
    let total = crate::scalar::log_sum_exp(buckets.iter().copied());
    Ok(buckets.into_iter().map(|l| (l - total).exp()).collect())
}

fn walk<S: Real>(spec: &OperatorSpec<S>, k: usize, x: &Point, r: usize, log_path: S, buckets: &mut [S]) -> Result<()> {
    if r == 0 {
        let idx = spec.alphabet().word_index(&x.word(k));
        let (a, b) = (buckets[idx], log_path);
        let top = a.max(b);
        buckets[idx] = top + ((a - top).exp() + (b - top).exp()).ln();
        return Ok(());
    }
    for (y, lw) in spec.branches_at(x)? {
        walk(spec, k, &y, r - 1, log_path + lw, buckets)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramRow<S> {
    pub cylinder: Cylinder,
    pub t: Option<S>,
    pub mass_ratio_iteration: S,
    pub mass_oracle: S,
    pub abs_diff: S,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramTable<S> {
    pub beta: S,
    pub rows: Vec<HistogramRow<S>>,
    pub oracle: EigenResult<S>,
}

impl<S: Real> HistogramTable<S> {
    pub fn total_ratio_mass(&self) -> S {
        self.rows.iter().map(|r| r.mass_ratio_iteration).sum()
    }

    pub fn max_abs_diff(&self) -> S {
        self.rows.iter().map(|r| r.abs_diff).fold(S::zero(), S::max)
    }

    /// Columns `beta,cylinder,t,mass_ratio_iteration,mass_oracle,abs_diff`;
    /// the `t` column is dropped when `t` is undefined (`d > 2`).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let with_t = self.rows.iter().all(|r| r.t.is_some());
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["beta", "cylinder"];
        if with_t {
            header.push("t");
        }
        header.extend(["mass_ratio_iteration", "mass_oracle", "abs_diff"]);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![self.beta.as_f64().to_string(), r.cylinder.to_string()];
            if let (true, Some(t)) = (with_t, r.t) {
                rec.push(t.as_f64().to_string());
            }
            rec.extend([r.mass_ratio_iteration, r.mass_oracle, r.abs_diff].map(|v| v.as_f64().to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Plain-text horizontal bar chart, one line per cylinder.
    pub fn bar_plot(&self, width: usize) -> String {
        let top = self.rows.iter().map(|r| r.mass_ratio_iteration).fold(S::zero(), S::max);
        let mut out = format!("beta = {}\n", self.beta);
        for r in &self.rows {
            let frac = if top > S::zero() { (r.mass_ratio_iteration / top).as_f64() } else { 0.0 };
            let bar = "#".repeat((frac * width as f64).round() as usize);
            let label = match r.t {
                Some(t) => format!("t={:<9.6} {}", t.as_f64(), r.cylinder),
                None => r.cylinder.to_string(),
            };
            out.push_str(&format!("{label:<24} |{bar:<width$}| {:.6e}\n", r.mass_ratio_iteration.as_f64()));
        }
        out
    }
}

/// For each `β`, the ratio-iteration masses of all depth-`k` cylinders next
/// to the Perron oracle of the depth-`k` matrix.
pub fn histogram<S: Real>(
    spec: &OperatorSpec<S>,
    k: usize,
    n: usize,
    x0: &Point,
    betas: &[S],
    method: RatioMethod,
    opts: &SolverOptions,
) -> Result<Vec<HistogramTable<S>>> {
    let alphabet = *spec.alphabet();
    let cylinders = crate::symbolic::enumerate_cylinders(&alphabet, k)?;
    betas
        .iter()
        .map(|&beta| {
            let spec_b = spec.with_beta(beta);
            let oracle = solve_eigen(&spec_b, k, opts)?;
            let masses = match method {
                RatioMethod::Tree => ratio_distribution_tree(&spec_b, k, x0, n)?,
                _ => cylinders
                    .par_iter()
                    .map(|c| {
                        let f = DepthFunction::indicator(alphabet, c)?;
                        ratio_iteration(&spec_b, &f, x0, n, method)
                    })
                    .collect::<Result<Vec<_>>>()?,
            };
            let rows = cylinders
                .iter()
                .zip(masses)
                .zip(oracle.measure.masses())
                .map(|((c, m), &o)| HistogramRow {
                    cylinder: c.clone(),
                    t: t_coordinate::<S>(&alphabet, c).ok(),
                    mass_ratio_iteration: m,
                    mass_oracle: o,
                    abs_diff: (m - o).abs(),
                })
                .collect();
            Ok(HistogramTable { beta, rows, oracle })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cocycle::{Cocycle, ModularParameters, Potential};
    use crate::relation::FreeCoordinateRelation;
    use crate::symbolic::enumerate_cylinders;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bin() -> Alphabet {
        Alphabet::new(2).unwrap()
    }

    fn classical(flavor: OperatorFlavor) -> OperatorSpec<f64> {
        let rel = FreeCoordinateRelation::first_coordinate_free(bin());
        OperatorSpec::new(rel, ModularParameters::new(1.0, Cocycle::separable(Potential::zero(bin()))), flavor).unwrap()
    }

    fn binary_example(beta: f64) -> OperatorSpec<f64> {
        let rel = FreeCoordinateRelation::new(bin(), [3]).unwrap();
        let v = Potential::quarter_square_first_coord(bin());
        OperatorSpec::new(rel, ModularParameters::new(beta, Cocycle::separable(v)), OperatorFlavor::HutchinsonBarnsley)
            .unwrap()
    }

    /// `μ(a_1 … a_k) = p(a_1) p(a_2) 2^{-(k-2)}` with `p(a) ∝ e^{-βV(a)}`.
    fn product_form(beta: f64, c: &Cylinder) -> f64 {
        let z = 1.0 + (-beta / 4.0).exp();
        let p = |a: u8| if a == 1 { 1.0 / z } else { (-beta / 4.0).exp() / z };
        p(c.word()[0]) * p(c.word()[1]) * 0.5f64.powi(c.depth() as i32 - 2)
    }

    #[test]
    fn classical_matrix_at_depth_one() {
        let a = build_matrix(&classical(OperatorFlavor::HaarRuelleSeparable), 1).unwrap();
        assert_eq!(a, DenseMatrix::from_rows(vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap());
    }

    #[test]
    fn matrix_reproduces_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = binary_example(1.0);
        let a = build_matrix(&s, 5).unwrap();
        assert!(a.is_nonnegative());
        for _ in 0..100 {
            let f = DepthFunction::new(bin(), 5, (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let direct = s.apply(&f).unwrap();
            assert_eq!(a.mul_vec(f.values()), direct.values());
        }
    }

    #[test]
    fn binary_example_rows_ignore_discarded_coordinates() {
        let a = build_matrix(&binary_example(1.0), 5).unwrap();
        // output rows depend on (x_1, x_3, x_4) only: x_2 and x_5 are discarded
        for w in enumerate_cylinders(&bin(), 5).unwrap() {
            let mut other = w.word().to_vec();
            other[1] = 3 - other[1];
            other[4] = 3 - other[4];
            let v = bin().word_index(&other);
            assert_eq!(a.row(w.index(&bin())), a.row(v));
        }
    }

    #[test]
    fn classical_perron_pair_is_bernoulli() {
        for k in 1..=6 {
            let r = solve_eigen(&classical(OperatorFlavor::HaarRuelleSeparable), k, &SolverOptions::default()).unwrap();
            assert!((r.eigenvalue - 2.0).abs() < 1e-12);
            assert_eq!(r.lambda, r.eigenvalue);
            assert!((r.rho - 4.0).abs() < 1e-12);
            let uniform = 0.5f64.powi(k as i32);
            assert!(r.measure.masses().iter().all(|m| (m - uniform).abs() < 1e-12));
            assert!(r.primitive);
            assert!(r.residual < 1e-12);
        }
    }

    #[test]
    fn identity_matrix_is_not_primitive() {
        let pair = perron_pair(&DenseMatrix::<f64>::identity(4), &SolverOptions::default()).unwrap();
        assert_eq!(pair.eigenvalue, 1.0);
        assert!(!pair.primitive);
        assert!(pair.left.iter().all(|&m| (m - 0.25).abs() < 1e-15));
        let swap = DenseMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(!swap.is_primitive());
        let p = DenseMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(p.is_primitive());
    }

    #[test]
    fn non_convergence_is_reported() {
        let a = DenseMatrix::from_rows(vec![vec![2.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let opts = SolverOptions { tol: 1e-13, max_iter: 2 };
        assert!(matches!(perron_pair(&a, &opts), Err(Error::NonConvergence { .. })));
        let neg = DenseMatrix::from_rows(vec![vec![-1.0]]).unwrap();
        assert!(perron_pair(&neg, &SolverOptions::default()).is_err());
    }

    #[test]
    fn binary_example_eigenpair_matches_closed_forms() {
        for beta in [1.0, 10.0, 30.0] {
            let r = solve_eigen(&binary_example(beta), 5, &SolverOptions::default()).unwrap();
            // every row of B_R sums to Σ_{i,j} e^{-βV(j)}
            let rho = 2.0 * (1.0 + (-beta / 4.0).exp());
            assert!((r.rho - rho).abs() < 1e-12);
            assert!((r.lambda - r.rho / 2.0).abs() < 1e-15);
            for (i, &m) in r.measure.masses().iter().enumerate() {
                let c = Cylinder::from_index(&bin(), 5, i);
                assert!((m - product_form(beta, &c)).abs() < 1e-12, "{c}: {m}");
            }
            assert!(r.eigenfunction.values().iter().all(|&h| (h - 1.0).abs() < 1e-12));
            assert!((r.gibbs().unwrap().l1_distance(&r.measure).unwrap()) < 1e-12);
        }
        let r = solve_eigen(
            &binary_example(1.0).with_flavor(OperatorFlavor::HaarRuelleSeparable).unwrap(),
            5,
            &SolverOptions::default(),
        )
        .unwrap();
        assert!((r.lambda - (1.0 + (-0.25f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn duality_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rel = FreeCoordinateRelation::first_coordinate_free(bin());
        let v = Potential::from_fn(bin(), 3, |w| 0.3 * w[0] as f64 + 0.7 * (w[1] * w[2]) as f64).unwrap();
        let specs = [
            binary_example(10.0),
            OperatorSpec::new(
                rel,
                ModularParameters::new(1.3, Cocycle::separable(v)),
                OperatorFlavor::HaarRuelleGeneral,
            )
            .unwrap(),
        ];
        for s in &specs {
            let r = solve_eigen(s, 5, &SolverOptions::default()).unwrap();
            for _ in 0..100 {
                let f = DepthFunction::new(bin(), 5, (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
                let lhs = r.measure.integrate(&s.apply(&f).unwrap()).unwrap();
                let rhs = r.eigenvalue * r.measure.integrate(&f).unwrap();
                assert!((lhs - rhs).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ratio_iteration_basics() {
        let x0 = Point::constant(&bin(), 1).unwrap();
        let s = binary_example(1.0);
        let one = DepthFunction::ones(bin(), 5).unwrap();
        for method in [RatioMethod::Tree, RatioMethod::Memoized, RatioMethod::Matrix] {
            for n in [1, 3] {
                assert!((ratio_iteration(&s, &one, &x0, n, method).unwrap() - 1.0).abs() < 1e-15);
            }
        }
        let c = classical(OperatorFlavor::HaarRuelleSeparable);
        let ind = DepthFunction::indicator(bin(), &Cylinder::parse("1", &bin()).unwrap()).unwrap();
        for n in 1..=6 {
            for method in [RatioMethod::Tree, RatioMethod::Memoized, RatioMethod::Matrix] {
                assert!((ratio_iteration(&c, &ind, &x0, n, method).unwrap() - 0.5).abs() < 1e-15);
            }
        }
        assert!(ratio_iteration(&s, &one, &x0, 0, RatioMethod::Tree).is_err());
        let haar = s.with_flavor(OperatorFlavor::Haar).unwrap();
        assert!(ratio_iteration(&haar, &one, &x0, 2, RatioMethod::Tree).is_err());
    }

    #[test]
    fn three_ratio_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rel = FreeCoordinateRelation::new(bin(), [1, 2]).unwrap();
        let v = Potential::from_fn(bin(), 3, |w| 0.4 * (w[0] + w[2]) as f64 - 0.2 * w[1] as f64).unwrap();
        let general = OperatorSpec::new(
            rel,
            ModularParameters::new(2.0, Cocycle::separable(v)),
            OperatorFlavor::HaarRuelleGeneral,
        )
        .unwrap();
        for s in [binary_example(30.0), general] {
            let f = DepthFunction::new(bin(), 4, (0..16).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
            let x0 = Point::parse("2,1,2|1", &bin()).unwrap();
            for n in [1, 4, 7] {
                let tree = ratio_iteration(&s, &f, &x0, n, RatioMethod::Tree).unwrap();
                let memo = ratio_iteration(&s, &f, &x0, n, RatioMethod::Memoized).unwrap();
                let mat = ratio_iteration(&s, &f, &x0, n, RatioMethod::Matrix).unwrap();
                assert!((tree - memo).abs() < 1e-12 && (tree - mat).abs() < 1e-12, "{tree} {memo} {mat}");
            }
        }
    }

    #[test]
    fn tree_distribution_matches_indicator_ratios() {
        let s = binary_example(10.0);
        let x0 = Point::constant(&bin(), 1).unwrap();
        let dist = ratio_distribution_tree(&s, 5, &x0, 6).unwrap();
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (i, &m) in dist.iter().enumerate() {
            let f = DepthFunction::indicator(bin(), &Cylinder::from_index(&bin(), 5, i)).unwrap();
            let r = ratio_iteration(&s, &f, &x0, 6, RatioMethod::Memoized).unwrap();
            assert!((m - r).abs() < 1e-12);
        }
    }

    #[test]
    fn ratio_iteration_converges_from_any_base_point() {
        let rel = FreeCoordinateRelation::first_coordinate_free(bin());
        let v = Potential::from_fn(bin(), 2, |w| 0.5 * w[0] as f64 * w[1] as f64).unwrap();
        let s = OperatorSpec::new(
            rel,
            ModularParameters::new(1.0, Cocycle::separable(v)),
            OperatorFlavor::HutchinsonBarnsley,
        )
        .unwrap();
        let oracle = solve_eigen(&s, 4, &SolverOptions::default()).unwrap();
        let f = DepthFunction::from_fn(bin(), 4, |c| c.word().iter().map(|&a| a as f64).product()).unwrap();
        let target = oracle.measure.integrate(&f).unwrap();
        for x0 in ["|1", "|2", "1,2|1", "2,2,1|2", "1,1,2,1|2"] {
            let x0 = Point::parse(x0, &bin()).unwrap();
            let errs: Vec<f64> = [2, 5, 10, 30]
                .iter()
                .map(|&n| (ratio_iteration(&s, &f, &x0, n, RatioMethod::Memoized).unwrap() - target).abs())
                .collect();
            assert!(errs[3] < 1e-8, "{errs:?}");
        }
    }

    #[test]
    fn normalized_iterates_approach_eigenfunction() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let rel = FreeCoordinateRelation::first_coordinate_free(bin());
        let v = Potential::from_fn(bin(), 3, |w| 0.6 * (w[0] * w[1]) as f64 - 0.3 * w[2] as f64).unwrap();
        let s = OperatorSpec::new(
            rel,
            ModularParameters::new(1.0, Cocycle::separable(v)),
            OperatorFlavor::HutchinsonBarnsley,
        )
        .unwrap();
        let r = solve_eigen(&s, 3, &SolverOptions::default()).unwrap();
        let op = s.compile(3).unwrap();
        for _ in 0..10 {
            let f: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
            let fd = DepthFunction::new(bin(), 3, f.clone()).unwrap();
            let mean = r.measure.integrate(&fd).unwrap();
            let mut g = f;
            let mut errs = Vec::new();
            for _ in 0..40 {
                g = op.apply(&g).unwrap().into_iter().map(|x| x / r.rho).collect();
                let e = g.iter().zip(r.eigenfunction.values()).map(|(a, h)| (a - mean * h).abs()).fold(0.0, f64::max);
                errs.push(e);
            }
            assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-13), "{errs:?}");
            assert!(errs[39] < 1e-9);
        }
    }

    #[test]
    fn histogram_examples() {
        let x0 = Point::constant(&bin(), 1).unwrap();
        let tables =
            histogram(&binary_example(1.0), 5, 9, &x0, &[0.0, 1.0, 30.0], RatioMethod::Tree, &SolverOptions::default())
                .unwrap();
        assert_eq!(tables.len(), 3);
        for t in &tables {
            assert_eq!(t.rows.len(), 32);
            assert!((t.total_ratio_mass() - 1.0).abs() < 1e-9);
            assert!(t.max_abs_diff() < 5e-3);
        }
        assert!(tables[0].rows.iter().all(|r| (r.mass_ratio_iteration - 1.0 / 32.0).abs() < 1e-12));
        let prefix = |t: &HistogramTable<f64>| {
            t.rows.iter().filter(|r| r.cylinder.word()[..2] == [1, 1]).map(|r| r.mass_ratio_iteration).sum::<f64>()
        };
        assert!(prefix(&tables[2]) > prefix(&tables[1]));

        let mut buf = Vec::new();
        tables[1].write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(
            text.starts_with("beta,cylinder,t,mass_ratio_iteration,mass_oracle,abs_diff\n1,\"1,1,1,1,1\",0.484375,")
        );
        assert_eq!(tables[1].bar_plot(40).lines().count(), 33);
    }

    #[test]
    fn histogram_without_t_for_larger_alphabets() {
        let a3 = Alphabet::new(3).unwrap();
        let rel = FreeCoordinateRelation::new(a3, [2]).unwrap();
        let v = Potential::from_fn(a3, 1, |w| w[0] as f64 / 3.0).unwrap();
        let s = OperatorSpec::new(
            rel,
            ModularParameters::new(1.0, Cocycle::separable(v)),
            OperatorFlavor::HutchinsonBarnsley,
        )
        .unwrap();
        let x0 = Point::constant(&a3, 1).unwrap();
        let t = &histogram(&s, 2, 4, &x0, &[1.0], RatioMethod::Memoized, &SolverOptions::default()).unwrap()[0];
        assert!(t.rows.iter().all(|r| r.t.is_none()));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("beta,cylinder,mass_ratio_iteration,"));
    }

    #[test]
    fn single_precision_path() {
        let rel = FreeCoordinateRelation::first_coordinate_free(bin());
        let s = OperatorSpec::<f32>::new(
            rel,
            ModularParameters::new(1.0, Cocycle::separable(Potential::zero(bin()))),
            OperatorFlavor::HaarRuelleSeparable,
        )
        .unwrap();
        let r = solve_eigen(&s, 4, &SolverOptions { tol: 1e-6, max_iter: 1000 }).unwrap();
        assert!((r.eigenvalue - 2.0).abs() < 1e-6);
        assert!(r.measure.masses().iter().all(|m| (m - 1.0 / 16.0).abs() < 1e-6));
    }

    #[test]
    fn measure_validation_and_coarse_masses() {
        assert!(CylinderMeasure::new(bin(), 1, vec![0.5, 0.6]).is_err());
        assert!(CylinderMeasure::new(bin(), 1, vec![1.5, -0.5]).is_err());
        let m = CylinderMeasure::from_weights(bin(), 3, (1..=8).map(|i| i as f64).collect()).unwrap();
        let c = Cylinder::parse("2", &bin()).unwrap();
        assert!((m.mass(&c).unwrap() - 26.0 / 36.0).abs() < 1e-15);
        assert!(m.mass(&Cylinder::parse("1,1,1,1", &bin()).unwrap()).is_err());
    }
}
