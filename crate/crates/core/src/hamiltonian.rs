//! Hamiltonians: the Cherry benchmark system and polynomial dictionary models.
//!
//! Gradients are ordered `(∂/∂q₁, …, ∂/∂q_d, ∂/∂p₁, …, ∂/∂p_d)` throughout.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical position/momentum pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::invalid("phase state needs at least one degree of freedom"));
        }
        if q.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                got: p.len(),
            });
        }
        if q.iter().chain(&p).any(|v| !v.is_finite()) {
            return Err(Error::invalid("phase state entries must be finite"));
        }
        Ok(Self { q, p })
    }

    /// Splits a stacked `[q, p]` vector in half.
    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len() % 2 != 0 {
            return Err(Error::invalid(format!(
                "stacked state length {} is odd",
                x.len()
            )));
        }
        let d = x.len() / 2;
        Self::new(x[..d].to_vec(), x[d..].to_vec())
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            q: vec![0.0; d],
            p: vec![0.0; d],
        }
    }

    /// Degrees of freedom `d`.
    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.dof());
        v.extend_from_slice(&self.q);
        v.extend_from_slice(&self.p);
        v
    }
}

/// Anything with a value and an analytic gradient on phase space.
pub trait Hamiltonian: Send + Sync {
    /// Degrees of freedom `d` (phase space has dimension `2d`).
    fn dof(&self) -> usize;

    fn value(&self, q: &[f64], p: &[f64]) -> f64;

    /// Writes `∂H/∂q` into `dq` and `∂H/∂p` into `dp`.
    fn gradient(&self, q: &[f64], p: &[f64], dq: &mut [f64], dp: &mut [f64]);

    fn value_at(&self, state: &PhaseState) -> Result<f64> {
        check_dof(self.dof(), state)?;
        Ok(self.value(&state.q, &state.p))
    }

    fn gradient_at(&self, state: &PhaseState) -> Result<Vec<f64>> {
        check_dof(self.dof(), state)?;
        let d = self.dof();
        let mut g = vec![0.0; 2 * d];
        let (dq, dp) = g.split_at_mut(d);
        self.gradient(&state.q, &state.p, dq, dp);
        Ok(g)
    }
}

impl<H: Hamiltonian + ?Sized> Hamiltonian for &H {
    fn dof(&self) -> usize {
        (**self).dof()
    }
    fn value(&self, q: &[f64], p: &[f64]) -> f64 {
        (**self).value(q, p)
    }
    fn gradient(&self, q: &[f64], p: &[f64], dq: &mut [f64], dp: &mut [f64]) {
        (**self).gradient(q, p, dq, dp)
    }
}

impl<H: Hamiltonian + ?Sized> Hamiltonian for Arc<H> {
    fn dof(&self) -> usize {
        (**self).dof()
    }
    fn value(&self, q: &[f64], p: &[f64]) -> f64 {
        (**self).value(q, p)
    }
    fn gradient(&self, q: &[f64], p: &[f64], dq: &mut [f64], dp: &mut [f64]) {
        (**self).gradient(q, p, dq, dp)
    }
}

fn check_dof(expected: usize, state: &PhaseState) -> Result<()> {
    if state.dof() != expected || state.p.len() != expected {
        return Err(Error::DimensionMismatch {
            expected: 2 * expected,
            got: state.q.len() + state.p.len(),
        });
    }
    Ok(())
}

/// `H = ½(q₁²+p₁²) − (q₂²+p₂²) + ½p₂(p₁²−q₁²) − q₁q₂p₁`, which has a negative
/// energy mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CherryHamiltonian;

impl Hamiltonian for CherryHamiltonian {
    fn dof(&self) -> usize {
        2
    }

    fn value(&self, q: &[f64], p: &[f64]) -> f64 {
        let (q1, q2, p1, p2) = (q[0], q[1], p[0], p[1]);
        0.5 * (q1 * q1 + p1 * p1) - (q2 * q2 + p2 * p2) + 0.5 * p2 * (p1 * p1 - q1 * q1)
            - q1 * q2 * p1
    }

    fn gradient(&self, q: &[f64], p: &[f64], dq: &mut [f64], dp: &mut [f64]) {
        let (q1, q2, p1, p2) = (q[0], q[1], p[0], p[1]);
        dq[0] = q1 - p2 * q1 - q2 * p1;
        dq[1] = -2.0 * q2 - q1 * p1;
        dp[0] = p1 + p2 * p1 - q1 * q2;
        dp[1] = -2.0 * p2 + 0.5 * (p1 * p1 - q1 * q1);
    }
}

pub fn cherry_eval(state: &PhaseState) -> Result<f64> {
    CherryHamiltonian.value_at(state)
}

pub fn cherry_gradient(state: &PhaseState) -> Result<Vec<f64>> {
    CherryHamiltonian.gradient_at(state)
}

/// Univariate family used in each coordinate of a tensor-product basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Monomial,
    /// Standard Legendre polynomials on `[-1, 1]`, no domain rescaling.
    Legendre,
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisKind::Monomial => f.write_str("monomial"),
            BasisKind::Legendre => f.write_str("legendre"),
        }
    }
}

impl BasisKind {
    /// Fills `vals[k] = f_k(x)` and `ders[k] = f_k'(x)` for `k = 0..vals.len()`.
    #[inline]
    fn tabulate(self, x: f64, vals: &mut [f64], ders: &mut [f64]) {
        let m = vals.len();
        vals[0] = 1.0;
        ders[0] = 0.0;
        if m == 1 {
            return;
        }
        vals[1] = x;
        ders[1] = 1.0;
        match self {
            BasisKind::Monomial => {
                for k in 2..m {
                    vals[k] = x * vals[k - 1];
                    ders[k] = k as f64 * vals[k - 1];
                }
            }
            BasisKind::Legendre => {
                // (k+1) P_{k+1} = (2k+1) x P_k − k P_{k−1};  P'_{k+1} = P'_{k−1} + (2k+1) P_k
                for k in 1..m - 1 {
                    let kf = k as f64;
                    vals[k + 1] = ((2.0 * kf + 1.0) * x * vals[k] - kf * vals[k - 1]) / (kf + 1.0);
                    ders[k + 1] = ders[k - 1] + (2.0 * kf + 1.0) * vals[k];
                }
            }
        }
    }
}

/// Tensor-product polynomial dictionary, constant term excluded, multi-indices
/// in graded lexicographic order (by total degree, then descending exponent of
/// the first variable, then the second, ...). Variables are ordered
/// `q₁..q_d, p₁..p_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisDictionary {
    kind: BasisKind,
    state_dim: usize,
    max_total_degree: usize,
    /// Flattened exponents, `state_dim` per basis function.
    exponents: Vec<u8>,
}

pub fn build_dictionary(
    kind: BasisKind,
    state_dim: usize,
    max_total_degree: usize,
) -> Result<BasisDictionary> {
    BasisDictionary::new(kind, state_dim, max_total_degree)
}

impl BasisDictionary {
    pub fn new(kind: BasisKind, state_dim: usize, max_total_degree: usize) -> Result<Self> {
        if state_dim < 2 || !state_dim.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "state_dim must be even and at least 2, got {state_dim}"
            )));
        }
        if max_total_degree < 1 || max_total_degree > u8::MAX as usize {
            return Err(Error::invalid(format!(
                "max_total_degree must be in [1, 255], got {max_total_degree}"
            )));
        }
        let mut exponents = Vec::new();
        let mut current = vec![0u8; state_dim];
        for degree in 1..=max_total_degree {
            push_compositions(degree, 0, &mut current, &mut exponents);
        }
        Ok(Self {
            kind,
            state_dim,
            max_total_degree,
            exponents,
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn max_total_degree(&self) -> usize {
        self.max_total_degree
    }

    /// Number of basis functions `N`.
    pub fn len(&self) -> usize {
        self.exponents.len() / self.state_dim
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn multi_index(&self, i: usize) -> &[u8] {
        &self.exponents[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn multi_indices(&self) -> impl Iterator<Item = &[u8]> {
        self.exponents.chunks_exact(self.state_dim)
    }

    /// Position of a multi-index in the ordering, if present.
    pub fn index_of(&self, alpha: &[u8]) -> Option<usize> {
        self.multi_indices().position(|m| m == alpha)
    }

    fn variable_name(&self, j: usize) -> String {
        let d = self.state_dim / 2;
        if j < d {
            format!("q{}", j + 1)
        } else {
            format!("p{}", j - d + 1)
        }
    }

    /// Human-readable label of basis function `i`, e.g. `q1^2*p2` or
    /// `L2(q1)*L1(p2)`.
    pub fn term_name(&self, i: usize) -> String {
        self.multi_index(i)
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(j, &e)| {
                let var = self.variable_name(j);
                match (self.kind, e) {
                    (BasisKind::Monomial, 1) => var,
                    (BasisKind::Monomial, _) => format!("{var}^{e}"),
                    (BasisKind::Legendre, _) => format!("L{e}({var})"),
                }
            })
            .collect::<Vec<_>>()
            .join("*")
    }

    fn tabulate(&self, x: &[f64], vals: &mut [f64], ders: &mut [f64]) {
        let m = self.max_total_degree + 1;
        for (j, &xj) in x.iter().enumerate() {
            self.kind
                .tabulate(xj, &mut vals[j * m..(j + 1) * m], &mut ders[j * m..(j + 1) * m]);
        }
    }

    /// Values of every basis function at the stacked state `x`.
    pub fn eval_all(&self, x: &[f64]) -> Vec<f64> {
        let m = self.max_total_degree + 1;
        let mut vals = vec![0.0; self.state_dim * m];
        let mut ders = vec![0.0; self.state_dim * m];
        self.tabulate(x, &mut vals, &mut ders);
        self.multi_indices()
            .map(|alpha| {
                alpha
                    .iter()
                    .enumerate()
                    .map(|(j, &e)| vals[j * m + e as usize])
                    .product()
            })
            .collect()
    }

    /// Gradients of every basis function at `x`; row `i` is `∇φ_i`.
    pub fn gradients_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n = self.state_dim;
        let m = self.max_total_degree + 1;
        let mut vals = vec![0.0; n * m];
        let mut ders = vec![0.0; n * m];
        self.tabulate(x, &mut vals, &mut ders);
        self.multi_indices()
            .map(|alpha| {
                (0..n)
                    .map(|j| {
                        if alpha[j] == 0 {
                            return 0.0;
                        }
                        alpha
                            .iter()
                            .enumerate()
                            .map(|(l, &e)| {
                                if l == j {
                                    ders[l * m + e as usize]
                                } else {
                                    vals[l * m + e as usize]
                                }
                            })
                            .product()
                    })
                    .collect()
            })
            .collect()
    }
}

fn push_compositions(remaining: usize, pos: usize, current: &mut [u8], out: &mut Vec<u8>) {
    let n = current.len();
    if pos == n - 1 {
        current[pos] = remaining as u8;
        out.extend_from_slice(current);
        current[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e as u8;
        push_compositions(remaining - e, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// `H̃(x) = Φ(x)ᵀθ`, additive constant fixed at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianModel {
    dictionary: Arc<BasisDictionary>,
    coefficients: Vec<f64>,
    /// Nonzero partial-derivative terms, precomputed for `gradient`.
    grad_terms: Vec<GradTerm>,
    /// Table positions multiplied by each term; values occupy the first
    /// `state_dim * (degree + 1)` slots of the table, derivatives the rest.
    grad_index: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct GradTerm {
    coef: f64,
    var: u32,
    start: u32,
    len: u32,
}

fn compile_gradient(dict: &BasisDictionary, coefficients: &[f64]) -> (Vec<GradTerm>, Vec<u32>) {
    let n = dict.state_dim;
    let m = dict.max_total_degree + 1;
    let mut terms = Vec::new();
    let mut index = Vec::new();
    for (alpha, &c) in dict.multi_indices().zip(coefficients) {
        if c == 0.0 {
            continue;
        }
        for j in 0..n {
            if alpha[j] == 0 {
                continue;
            }
            let start = index.len();
            index.push((n * m + j * m + alpha[j] as usize) as u32);
            for (l, &e) in alpha.iter().enumerate() {
                if l != j && e != 0 {
                    index.push((l * m + e as usize) as u32);
                }
            }
            terms.push(GradTerm {
                coef: c,
                var: j as u32,
                start: start as u32,
                len: (index.len() - start) as u32,
            });
        }
    }
    (terms, index)
}

impl HamiltonianModel {
    pub fn new(dictionary: Arc<BasisDictionary>, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != dictionary.len() {
            return Err(Error::DimensionMismatch {
                expected: dictionary.len(),
                got: coefficients.len(),
            });
        }
        let (grad_terms, grad_index) = compile_gradient(&dictionary, &coefficients);
        Ok(Self {
            dictionary,
            coefficients,
            grad_terms,
            grad_index,
        })
    }

    pub fn zeros(dictionary: Arc<BasisDictionary>) -> Self {
        let n = dictionary.len();
        Self {
            dictionary,
            coefficients: vec![0.0; n],
            grad_terms: Vec::new(),
            grad_index: Vec::new(),
        }
    }

    pub fn dictionary(&self) -> &Arc<BasisDictionary> {
        &self.dictionary
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            kind: self.dictionary.kind,
            state_dim: self.dictionary.state_dim,
            max_total_degree: self.dictionary.max_total_degree,
            coefficients: self.coefficients.clone(),
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        let dict = BasisDictionary::new(file.kind, file.state_dim, file.max_total_degree)?;
        Self::new(Arc::new(dict), file.coefficients.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        Self::from_file(&file)
    }
}

/// On-disk form of a coefficient vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub kind: BasisKind,
    pub state_dim: usize,
    pub max_total_degree: usize,
    pub coefficients: Vec<f64>,
}

/// Largest `(max_total_degree + 1) * state_dim` served from the stack.
const STACK_TABLE: usize = 32;

impl Hamiltonian for HamiltonianModel {
    fn dof(&self) -> usize {
        self.dictionary.state_dim / 2
    }

    fn value(&self, q: &[f64], p: &[f64]) -> f64 {
        let dict = &*self.dictionary;
        let n = dict.state_dim;
        let m = dict.max_total_degree + 1;
        let mut vals_buf = [0.0; STACK_TABLE];
        let mut ders_buf = [0.0; STACK_TABLE];
        let mut vals_heap;
        let mut ders_heap;
        let (vals, ders): (&mut [f64], &mut [f64]) = if n * m <= STACK_TABLE {
            (&mut vals_buf[..n * m], &mut ders_buf[..n * m])
        } else {
            vals_heap = vec![0.0; n * m];
            ders_heap = vec![0.0; n * m];
            (&mut vals_heap, &mut ders_heap)
        };
        let d = n / 2;
        for j in 0..d {
            dict.kind.tabulate(q[j], &mut vals[j * m..(j + 1) * m], &mut ders[j * m..(j + 1) * m]);
            dict.kind.tabulate(
                p[j],
                &mut vals[(d + j) * m..(d + j + 1) * m],
                &mut ders[(d + j) * m..(d + j + 1) * m],
            );
        }
        dict.multi_indices()
            .zip(&self.coefficients)
            .filter(|(_, &c)| c != 0.0)
            .map(|(alpha, &c)| {
                c * alpha
                    .iter()
                    .enumerate()
                    .map(|(j, &e)| vals[j * m + e as usize])
                    .product::<f64>()
            })
            .sum()
    }

    fn gradient(&self, q: &[f64], p: &[f64], dq: &mut [f64], dp: &mut [f64]) {
        let dict = &*self.dictionary;
        let n = dict.state_dim;
        let d = n / 2;
        let m = dict.max_total_degree + 1;
        let mut table_buf = [0.0; 2 * STACK_TABLE];
        let mut table_heap;
        let table: &mut [f64] = if n * m <= STACK_TABLE {
            &mut table_buf[..2 * n * m]
        } else {
            table_heap = vec![0.0; 2 * n * m];
            &mut table_heap
        };
        let (vals, ders) = table.split_at_mut(n * m);
        for j in 0..d {
            dict.kind.tabulate(q[j], &mut vals[j * m..(j + 1) * m], &mut ders[j * m..(j + 1) * m]);
            dict.kind.tabulate(
                p[j],
                &mut vals[(d + j) * m..(d + j + 1) * m],
                &mut ders[(d + j) * m..(d + j + 1) * m],
            );
        }
        let table = &*table;
        dq.fill(0.0);
        dp.fill(0.0);
        for t in &self.grad_terms {
            let mut g = t.coef;
            for &i in &self.grad_index[t.start as usize..(t.start + t.len) as usize] {
                g *= table[i as usize];
            }
            let j = t.var as usize;
            if j < d {
                dq[j] += g;
            } else {
                dp[j - d] += g;
            }
        }
    }
}

pub fn eval_model(model: &HamiltonianModel, state: &PhaseState) -> Result<f64> {
    model.value_at(state)
}

pub fn eval_model_gradient(model: &HamiltonianModel, state: &PhaseState) -> Result<Vec<f64>> {
    model.gradient_at(state)
}

/// Cherry Hamiltonian expressed in a monomial dictionary over `(q₁, q₂, p₁, p₂)`.
pub fn cherry_coefficients(dict: &BasisDictionary) -> Result<Vec<f64>> {
    if dict.kind() != BasisKind::Monomial || dict.state_dim() != 4 || dict.max_total_degree() < 3 {
        return Err(Error::invalid(
            "Cherry coefficients need a monomial dictionary on 4 variables of degree >= 3",
        ));
    }
    // exponents over (q1, q2, p1, p2)
    let terms: [([u8; 4], f64); 7] = [
        ([2, 0, 0, 0], 0.5),
        ([0, 0, 2, 0], 0.5),
        ([0, 2, 0, 0], -1.0),
        ([0, 0, 0, 2], -1.0),
        ([0, 0, 2, 1], 0.5),
        ([2, 0, 0, 1], -0.5),
        ([1, 1, 1, 0], -1.0),
    ];
    let mut theta = vec![0.0; dict.len()];
    for (alpha, c) in terms {
        let i = dict
            .index_of(&alpha)
            .expect("degree <= 3 multi-index present");
        theta[i] = c;
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn binom(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    fn state(x: &[f64]) -> PhaseState {
        PhaseState::from_slice(x).unwrap()
    }

    fn harmonic() -> HamiltonianModel {
        let dict = Arc::new(build_dictionary(BasisKind::Monomial, 2, 2).unwrap());
        let mut theta = vec![0.0; dict.len()];
        theta[dict.index_of(&[2, 0]).unwrap()] = 0.5;
        theta[dict.index_of(&[0, 2]).unwrap()] = 0.5;
        HamiltonianModel::new(dict, theta).unwrap()
    }

    #[test]
    fn dictionary_sizes() {
        let d = build_dictionary(BasisKind::Monomial, 4, 3).unwrap();
        assert_eq!(d.len(), 34);
        let d = build_dictionary(BasisKind::Monomial, 2, 1).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.multi_index(0), &[1, 0]);
        assert_eq!(d.multi_index(1), &[0, 1]);
        for n in [2, 4, 6] {
            for deg in 1..=4 {
                let d = build_dictionary(BasisKind::Legendre, n, deg).unwrap();
                assert_eq!(d.len(), binom(n + deg, deg) - 1);
            }
        }
    }

    #[test]
    fn graded_lex_order() {
        let d = build_dictionary(BasisKind::Monomial, 2, 2).unwrap();
        let order: Vec<_> = d.multi_indices().map(|m| m.to_vec()).collect();
        assert_eq!(
            order,
            vec![vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
        assert_eq!(d.term_name(3), "q1*p1");
    }

    #[test]
    fn legendre_and_monomial_share_multi_indices() {
        // independent enumeration: all exponent tuples with 1 <= |alpha| <= 3,
        // sorted by degree then descending lexicographic
        let mut expected = Vec::new();
        for a in 0..=3u8 {
            for b in 0..=3u8 {
                for c in 0..=3u8 {
                    for e in 0..=3u8 {
                        let t = a + b + c + e;
                        if (1..=3).contains(&t) {
                            expected.push([a, b, c, e]);
                        }
                    }
                }
            }
        }
        expected.sort_by(|x, y| {
            let dx: u8 = x.iter().sum();
            let dy: u8 = y.iter().sum();
            dx.cmp(&dy).then_with(|| y.cmp(x))
        });
        let mono = build_dictionary(BasisKind::Monomial, 4, 3).unwrap();
        let leg = build_dictionary(BasisKind::Legendre, 4, 3).unwrap();
        let got: Vec<[u8; 4]> = leg.multi_indices().map(|m| m.try_into().unwrap()).collect();
        assert_eq!(got, expected);
        assert_eq!(mono.len(), 34);
        assert!(mono.multi_indices().eq(leg.multi_indices()));
    }

    #[test]
    fn rejects_odd_state_dim() {
        assert!(build_dictionary(BasisKind::Monomial, 3, 2).is_err());
        assert!(build_dictionary(BasisKind::Monomial, 0, 2).is_err());
        assert!(build_dictionary(BasisKind::Monomial, 4, 0).is_err());
    }

    #[test]
    fn model_values() {
        let dict = Arc::new(build_dictionary(BasisKind::Monomial, 4, 3).unwrap());
        let zero = HamiltonianModel::zeros(dict.clone());
        assert_eq!(eval_model(&zero, &state(&[0.3, 0.2, -0.1, 0.4])).unwrap(), 0.0);
        assert_eq!(
            eval_model_gradient(&zero, &state(&[0.3, 0.2, -0.1, 0.4])).unwrap(),
            vec![0.0; 4]
        );

        let h = harmonic();
        assert_abs_diff_eq!(eval_model(&h, &state(&[1.0, 0.0])).unwrap(), 0.5);
        assert_eq!(eval_model_gradient(&h, &state(&[1.0, 0.0])).unwrap(), vec![1.0, 0.0]);

        let cherry = HamiltonianModel::new(dict.clone(), cherry_coefficients(&dict).unwrap()).unwrap();
        assert_abs_diff_eq!(
            eval_model(&cherry, &state(&[0.15, 0.1, -0.05, 0.1])).unwrap(),
            -0.00775,
            epsilon = 1e-15
        );
        assert!(eval_model(&cherry, &state(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn cherry_closed_form() {
        assert_eq!(cherry_eval(&state(&[0.0; 4])).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cherry_eval(&state(&[0.15, 0.1, -0.05, 0.1])).unwrap(),
            -0.00775,
            epsilon = 1e-15
        );
        assert_eq!(cherry_eval(&state(&[1.0, 0.0, 0.0, 0.0])).unwrap(), 0.5);
        assert_eq!(cherry_gradient(&state(&[0.0; 4])).unwrap(), vec![0.0; 4]);
        let g = cherry_gradient(&state(&[0.15, 0.1, -0.05, 0.1])).unwrap();
        assert_abs_diff_eq!(g[0], 0.14, epsilon = 1e-15);
        // -2 q2 - q1 p1, p1 + p2 p1 - q1 q2, -2 p2 + (p1^2 - q1^2)/2
        assert_abs_diff_eq!(g[1], -0.2 + 0.0075, epsilon = 1e-15);
        assert_abs_diff_eq!(g[2], -0.05 - 0.005 - 0.015, epsilon = 1e-15);
        assert_abs_diff_eq!(g[3], -0.2 + 0.5 * (0.0025 - 0.0225), epsilon = 1e-15);
        assert!(cherry_eval(&state(&[1.0, 2.0])).is_err());
        assert!(cherry_gradient(&state(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn legendre_tabulation_matches_closed_forms() {
        let mut v = [0.0; 4];
        let mut dv = [0.0; 4];
        for &x in &[-0.9, -0.3, 0.0, 0.4, 1.0] {
            BasisKind::Legendre.tabulate(x, &mut v, &mut dv);
            assert_abs_diff_eq!(v[2], 0.5 * (3.0 * x * x - 1.0), epsilon = 1e-15);
            assert_abs_diff_eq!(v[3], 0.5 * (5.0 * x * x * x - 3.0 * x), epsilon = 1e-15);
            assert_abs_diff_eq!(dv[2], 3.0 * x, epsilon = 1e-15);
            assert_abs_diff_eq!(dv[3], 0.5 * (15.0 * x * x - 3.0), epsilon = 1e-15);
        }
    }

    #[test]
    fn model_json_schema() {
        let h = harmonic();
        let json = h.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["kind"], "monomial");
        assert_eq!(v["state_dim"], 2);
        assert_eq!(v["max_total_degree"], 2);
        assert_eq!(v["coefficients"].as_array().unwrap().len(), 5);
        assert_eq!(HamiltonianModel::from_json(&json).unwrap(), h);
    }

    #[test]
    fn phase_state_invariants() {
        assert!(PhaseState::new(vec![1.0], vec![1.0, 2.0]).is_err());
        assert!(PhaseState::new(vec![], vec![]).is_err());
        assert!(PhaseState::new(vec![f64::NAN], vec![0.0]).is_err());
        assert!(PhaseState::from_slice(&[1.0, 2.0, 3.0]).is_err());
    }
}
