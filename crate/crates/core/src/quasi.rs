//! Numerical checks of quasi-invariance and of the Haar-operator
//! characterization of quasi-invariant probabilities.
//!
//! For a measure `M` on depth-`k` cylinders the quasi-invariance identity
//!
//! ```text
//! Σ_w M(w) Σ_t h(ψ_t(w), w) = Σ_w M(w) Σ_t h(w, ψ_t(w)) e^{-βc(w, ψ_t(w))}
//! ```
//!
//! is linear in `h`, so checking it on all `d^{2k}` cylinder-pair indicators
//! checks it for every `h` depending on the first `k` coordinates of each
//! argument.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycle::ModularParameters;
use crate::eigen::CylinderMeasure;
use crate::error::{Error, Result};
use crate::operator::{CompiledOperator, DepthFunction, OperatorFlavor, OperatorSpec};
use crate::relation::FreeCoordinateRelation;
use crate::scalar::Real;
use crate::symbolic::{Alphabet, Cylinder};

#[derive(Clone, Debug, PartialEq)]
pub enum PairTestFunction<S> {
    /// `h(x, y) = 1_A(x) · 1_B(y)`.
    CylinderPair(Cylinder, Cylinder),
    /// `h(x, y) = f(x) · g(y)`.
    SeparableProduct(DepthFunction<S>, DepthFunction<S>),
}

impl<S: Real> PairTestFunction<S> {
    pub fn depth(&self) -> usize {
        match self {
            Self::CylinderPair(a, b) => a.depth().max(b.depth()),
            Self::SeparableProduct(f, g) => f.depth().max(g.depth()),
        }
    }

    /// `h` on a pair of depth-`k` cylinders given by index.
    fn eval(&self, alphabet: &Alphabet, k: usize, x: usize, y: usize) -> S {
        let xw = alphabet.index_word(k, x);
        let yw = alphabet.index_word(k, y);
        match self {
            Self::CylinderPair(a, b) => {
                let hit = xw.starts_with(a.word()) && yw.starts_with(b.word());
                if hit {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Self::SeparableProduct(f, g) => f.value_word(&xw) * g.value_word(&yw),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Self::CylinderPair(a, b) => format!("1[{a}] x 1[{b}]"),
            Self::SeparableProduct(f, g) => format!("product of depth-{} and depth-{} functions", f.depth(), g.depth()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiInvarianceReport {
    pub max_abs_residual: f64,
    pub worst_test: String,
    pub tests_run: usize,
}

impl QuasiInvarianceReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_abs_residual <= tol
    }
}

fn haar_operator<S: Real>(
    m: &CylinderMeasure<S>,
    rel: &FreeCoordinateRelation,
    params: &ModularParameters<S>,
    flavor: OperatorFlavor,
) -> Result<CompiledOperator<S>> {
    if m.alphabet() != rel.alphabet() {
        return Err(Error::InvalidParameter("measure and relation alphabets differ".into()));
    }
    OperatorSpec::new(rel.clone(), params.clone(), flavor)?.compile(m.depth())
}

fn residual_with<S: Real>(op: &CompiledOperator<S>, m: &CylinderMeasure<S>, h: &PairTestFunction<S>) -> S {
    let (alphabet, k) = (op.alphabet(), op.depth());
    let mut lhs = S::zero();
    let mut rhs = S::zero();
    for (w, (row, &mass)) in op.rows().iter().zip(m.masses()).enumerate() {
        if mass == S::zero() {
            continue;
        }
        let mut l = S::zero();
        let mut r = S::zero();
        for b in row {
            l = l + h.eval(alphabet, k, b.target, w);
            r = r + h.eval(alphabet, k, w, b.target) * b.weight;
        }
        lhs = lhs + mass * l;
        rhs = rhs + mass * r;
    }
    (lhs - rhs).abs()
}

/// `|LHS - RHS|` of the quasi-invariance identity for one test function.
pub fn quasi_invariance_residual<S: Real>(
    m: &CylinderMeasure<S>,
    rel: &FreeCoordinateRelation,
    params: &ModularParameters<S>,
    h: &PairTestFunction<S>,
) -> Result<S> {
    if h.depth() > m.depth() {
        return Err(Error::DepthIncompatible(format!(
            "test function depth {} exceeds measure depth {}",
            h.depth(),
            m.depth()
        )));
    }
    let op = haar_operator(m, rel, params, OperatorFlavor::Haar)?;
    Ok(residual_with(&op, m, h))
}

/// Exhaustive check over every pair of depth-`k` cylinders.
pub fn quasi_invariance_suite<S: Real>(
    m: &CylinderMeasure<S>,
    rel: &FreeCoordinateRelation,
    params: &ModularParameters<S>,
) -> Result<QuasiInvarianceReport> {
    let op = haar_operator(m, rel, params, OperatorFlavor::Haar)?;
    let (alphabet, k) = (*op.alphabet(), op.depth());
    let n = op.size();
    let residuals: Vec<S> = (0..n * n)
        .into_par_iter()
        .map(|t| {
            let h = PairTestFunction::CylinderPair(
                Cylinder::from_index(&alphabet, k, t / n),
                Cylinder::from_index(&alphabet, k, t % n),
            );
            residual_with(&op, m, &h)
        })
        .collect();
    let (worst, max) =
        residuals.iter().enumerate().fold((0, S::zero()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let worst_test = PairTestFunction::<S>::CylinderPair(
        Cylinder::from_index(&alphabet, k, worst / n),
        Cylinder::from_index(&alphabet, k, worst % n),
    );
    Ok(QuasiInvarianceReport { max_abs_residual: max.as_f64(), worst_test: worst_test.describe(), tests_run: n * n })
}

fn dual_defect<S: Real>(op: &CompiledOperator<S>, m: &CylinderMeasure<S>) -> Result<S> {
    let image = op.apply_transpose(m.masses())?;
    Ok(image.iter().zip(m.masses()).map(|(&a, &b)| (a - b).abs()).fold(S::zero(), S::max))
}

/// `max_w |∫ 1_w dM - ∫ H_{-βc}(1_w) dM|` over the depth-`k` basis indicators.
pub fn haar_fixed_point_residual<S: Real>(m: &CylinderMeasure<S>, spec: &OperatorSpec<S>) -> Result<S> {
    let op = haar_operator(m, &spec.relation, &spec.params, OperatorFlavor::Haar)?;
    dual_defect(&op, m)
}

/// Same check for the normalized operator `H_{-βc+b}`.
pub fn normalized_haar_fixed_point_residual<S: Real>(m: &CylinderMeasure<S>, spec: &OperatorSpec<S>) -> Result<S> {
    let op = haar_operator(m, &spec.relation, &spec.params, OperatorFlavor::HaarNormalized)?;
    dual_defect(&op, m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformDirection {
    /// `dM* ∝ e^{V} dM` with `V = ln H_{-βc}(1)`.
    Forward,
    /// `dM ∝ e^{-V} dM*`.
    Backward,
}

pub fn transform_measure<S: Real>(
    m: &CylinderMeasure<S>,
    spec: &OperatorSpec<S>,
    direction: TransformDirection,
) -> Result<CylinderMeasure<S>> {
    let log_h1 = spec.haar_log_normalizer(m.depth())?;
    let sign = match direction {
        TransformDirection::Forward => S::one(),
        TransformDirection::Backward => -S::one(),
    };
    let weights = m.masses().iter().zip(log_h1.values()).map(|(&mass, &v)| mass * (sign * v).exp()).collect();
    CylinderMeasure::from_weights(*m.alphabet(), m.depth(), weights)
}
