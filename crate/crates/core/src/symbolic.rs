//! Exact finite-depth representation of the full shift {0,…,d−1}^ℕ.
//!
//! A *word* x = (x₁,…,x_k) indexes the cylinder [x] of all sequences that
//! begin with it. Cylinders of a fixed depth k are ordered lexicographically,
//! and the lexicographic index of a word is its base-d integer with x₁ the
//! most significant digit. Functions and measures that only depend on the
//! first k symbols are stored as dense value tables of length d^k.

use crate::error::{Error, Result};
use crate::par;

/// Hard guard on table sizes: d^k may not exceed this many cells.
pub const MAX_CELLS: usize = 1 << 24;

/// Default working depth for the binary shift.
pub const DEFAULT_DEPTH: usize = 8;

/// Number of depth-`depth` cylinders, with the size guard applied.
pub fn cell_count(alphabet: usize, depth: usize) -> Result<usize> {
    if alphabet < 2 {
        return Err(Error::AlphabetTooSmall(alphabet));
    }
    let mut n: usize = 1;
    for _ in 0..depth {
        n = n
            .checked_mul(alphabet)
            .filter(|&m| m <= MAX_CELLS)
            .ok_or(Error::DepthCap {
                requested: depth,
                max: MAX_CELLS,
            })?;
    }
    Ok(n)
}

/// A finite word over the alphabet {0,…,d−1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    alphabet: usize,
    symbols: Vec<u8>,
}

impl Word {
    pub fn new(alphabet: usize, symbols: Vec<u8>) -> Result<Self> {
        if alphabet < 2 {
            return Err(Error::AlphabetTooSmall(alphabet));
        }
        for &s in &symbols {
            if (s as usize) >= alphabet {
                return Err(Error::SymbolOutOfRange {
                    symbol: s,
                    alphabet,
                });
            }
        }
        cell_count(alphabet, symbols.len())?;
        Ok(Word { alphabet, symbols })
    }

    pub fn empty(alphabet: usize) -> Result<Self> {
        Word::new(alphabet, Vec::new())
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    /// Lexicographic index: the base-d integer with x₁ most significant.
    pub fn index(&self) -> usize {
        let mut idx = 0usize;
        for &s in &self.symbols {
            idx = idx * self.alphabet + s as usize;
        }
        idx
    }

    /// Inverse of [`Word::index`] at a fixed length.
    pub fn from_index(alphabet: usize, len: usize, mut index: usize) -> Result<Self> {
        let n = cell_count(alphabet, len)?;
        if index >= n {
            return Err(Error::InvalidArgument(format!(
                "index {index} out of range for {len}-letter words"
            )));
        }
        let mut symbols = vec![0u8; len];
        for i in (0..len).rev() {
            symbols[i] = (index % alphabet) as u8;
            index /= alphabet;
        }
        Ok(Word { alphabet, symbols })
    }

    /// The word a·x (prepend one symbol).
    pub fn prepend(&self, symbol: u8) -> Result<Self> {
        if (symbol as usize) >= self.alphabet {
            return Err(Error::SymbolOutOfRange {
                symbol,
                alphabet: self.alphabet,
            });
        }
        let mut symbols = Vec::with_capacity(self.len() + 1);
        symbols.push(symbol);
        symbols.extend_from_slice(&self.symbols);
        Word::new(self.alphabet, symbols)
    }

    /// The word x·a (append one symbol).
    pub fn append(&self, symbol: u8) -> Result<Self> {
        if (symbol as usize) >= self.alphabet {
            return Err(Error::SymbolOutOfRange {
                symbol,
                alphabet: self.alphabet,
            });
        }
        let mut symbols = self.symbols.clone();
        symbols.push(symbol);
        Word::new(self.alphabet, symbols)
    }
}

/// A real function on the shift that depends only on the first `depth`
/// symbols, stored as one value per cylinder in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderFunction {
    alphabet: usize,
    depth: usize,
    values: Vec<f64>,
}

impl CylinderFunction {
    pub fn from_values(alphabet: usize, depth: usize, values: Vec<f64>) -> Result<Self> {
        let n = cell_count(alphabet, depth)?;
        if values.len() != n {
            return Err(Error::LengthMismatch {
                got: values.len(),
                expected: n,
            });
        }
        Ok(CylinderFunction {
            alphabet,
            depth,
            values,
        })
    }

    pub fn constant(alphabet: usize, value: f64) -> Result<Self> {
        CylinderFunction::from_values(alphabet, 0, vec![value])
    }

    /// Indicator of the cylinder [x].
    pub fn indicator(word: &Word) -> Result<Self> {
        let n = cell_count(word.alphabet_size(), word.len())?;
        let mut values = vec![0.0; n];
        values[word.index()] = 1.0;
        CylinderFunction::from_values(word.alphabet_size(), word.len(), values)
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, index: usize) -> f64 {
        self.values[index]
    }

    /// Evaluate on a word of length ≥ depth (only the prefix matters).
    pub fn eval(&self, word: &Word) -> Result<f64> {
        if word.alphabet_size() != self.alphabet {
            return Err(Error::AlphabetMismatch(
                word.alphabet_size(),
                self.alphabet,
            ));
        }
        if word.len() < self.depth {
            return Err(Error::DepthMismatch {
                function: self.depth,
                data: word.len(),
            });
        }
        let shift = cell_count(self.alphabet, word.len() - self.depth)?;
        Ok(self.values[word.index() / shift])
    }

    /// Exact lift to a finer depth; evaluation is unchanged.
    pub fn refine(&self, depth: usize) -> Result<Self> {
        if depth < self.depth {
            return Err(Error::DepthMismatch {
                function: self.depth,
                data: depth,
            });
        }
        if depth == self.depth {
            return Ok(self.clone());
        }
        let n = cell_count(self.alphabet, depth)?;
        let block = cell_count(self.alphabet, depth - self.depth)?;
        let values = par::tabulate(n, |i| self.values[i / block]);
        CylinderFunction::from_values(self.alphabet, depth, values)
    }

    /// Drop trailing depth while sibling cells hold bit-identical values.
    pub fn compress(&self) -> Self {
        let mut current = self.clone();
        while current.depth > 0 {
            let d = current.alphabet;
            let coarse = current.values.len() / d;
            let collapsible = (0..coarse).all(|i| {
                let v0 = current.values[i * d];
                (1..d).all(|a| current.values[i * d + a].to_bits() == v0.to_bits())
            });
            if !collapsible {
                break;
            }
            let values = (0..coarse).map(|i| current.values[i * d]).collect();
            current = CylinderFunction {
                alphabet: d,
                depth: current.depth - 1,
                values,
            };
        }
        current
    }

    /// f∘σ: output depth +1, value at (x₁,…,x_{k+1}) is f(x₂,…,x_{k+1}).
    pub fn compose_shift(&self) -> Result<Self> {
        let n = cell_count(self.alphabet, self.depth)?;
        let total = cell_count(self.alphabet, self.depth + 1)?;
        let values = par::tabulate(total, |i| self.values[i % n]);
        CylinderFunction::from_values(self.alphabet, self.depth + 1, values)
    }

    /// d = 2 only: carry values from the cylinder [0] over to [1], i.e. the
    /// output at (1,x₂,…,x_k) is the input at (0,x₂,…,x_k); zero on [0].
    pub fn mirror_to_one(&self) -> Result<Self> {
        if self.alphabet != 2 {
            return Err(Error::BinaryOnly(self.alphabet));
        }
        if self.depth == 0 {
            return Err(Error::DepthMismatch {
                function: 0,
                data: 1,
            });
        }
        let n = self.values.len();
        let half = n / 2;
        let mut values = vec![0.0; n];
        values[half..].copy_from_slice(&self.values[..half]);
        CylinderFunction::from_values(self.alphabet, self.depth, values)
    }

    /// Swap the roles of [0] and [1]: output(a, x₂…) = input(1−a, x₂…).
    pub fn mirror_swap(&self) -> Result<Self> {
        if self.alphabet != 2 {
            return Err(Error::BinaryOnly(self.alphabet));
        }
        if self.depth == 0 {
            return Ok(self.clone());
        }
        let n = self.values.len();
        let half = n / 2;
        let mut values = vec![0.0; n];
        values[..half].copy_from_slice(&self.values[half..]);
        values[half..].copy_from_slice(&self.values[..half]);
        CylinderFunction::from_values(self.alphabet, self.depth, values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        let values = par::tabulate(self.values.len(), |i| f(self.values[i]));
        CylinderFunction {
            alphabet: self.alphabet,
            depth: self.depth,
            values,
        }
    }

    /// Pointwise combination after lifting both arguments to a common depth.
    pub fn zip_with(
        &self,
        other: &CylinderFunction,
        f: impl Fn(f64, f64) -> f64 + Sync,
    ) -> Result<Self> {
        if self.alphabet != other.alphabet {
            return Err(Error::AlphabetMismatch(self.alphabet, other.alphabet));
        }
        let depth = self.depth.max(other.depth);
        let a = self.refine(depth)?;
        let b = other.refine(depth)?;
        let values = par::tabulate(a.values.len(), |i| f(a.values[i], b.values[i]));
        CylinderFunction::from_values(self.alphabet, depth, values)
    }

    pub fn add(&self, other: &CylinderFunction) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &CylinderFunction) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &CylinderFunction) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn shift_by(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    pub fn exp(&self) -> Self {
        self.map(f64::exp)
    }

    /// Pointwise natural log; errors on a non-positive value.
    pub fn ln(&self) -> Result<Self> {
        for &v in &self.values {
            if v <= 0.0 {
                return Err(Error::NonPositive {
                    context: "log of cylinder function",
                    value: v,
                });
            }
        }
        Ok(self.map(f64::ln))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }
}

/// Probability weights on the depth-k cylinders.
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderMeasure {
    alphabet: usize,
    depth: usize,
    weights: Vec<f64>,
}

impl CylinderMeasure {
    pub fn from_weights(alphabet: usize, depth: usize, weights: Vec<f64>) -> Result<Self> {
        let n = cell_count(alphabet, depth)?;
        if weights.len() != n {
            return Err(Error::LengthMismatch {
                got: weights.len(),
                expected: n,
            });
        }
        for &w in &weights {
            if w < 0.0 {
                return Err(Error::NonPositive {
                    context: "measure weight",
                    value: w,
                });
            }
        }
        let total = par::sum(&weights);
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::NotNormalizedMeasure(total));
        }
        Ok(CylinderMeasure {
            alphabet,
            depth,
            weights,
        })
    }

    pub fn uniform(alphabet: usize, depth: usize) -> Result<Self> {
        let n = cell_count(alphabet, depth)?;
        CylinderMeasure::from_weights(alphabet, depth, vec![1.0 / n as f64; n])
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_at(&self, index: usize) -> f64 {
        self.weights[index]
    }

    pub fn weight_of(&self, word: &Word) -> Result<f64> {
        if word.len() != self.depth {
            return Err(Error::DepthMismatch {
                function: word.len(),
                data: self.depth,
            });
        }
        Ok(self.weights[word.index()])
    }

    pub fn total(&self) -> f64 {
        par::sum(&self.weights)
    }

    /// Coarsen to a smaller depth by summing sibling cells; exact
    /// refinement consistency μ[x] = Σ_a μ[x·a] by construction.
    pub fn marginalize(&self, depth: usize) -> Result<Self> {
        if depth > self.depth {
            return Err(Error::DepthMismatch {
                function: depth,
                data: self.depth,
            });
        }
        let mut weights = self.weights.clone();
        let mut current = self.depth;
        while current > depth {
            let coarse = weights.len() / self.alphabet;
            let mut next = vec![0.0; coarse];
            for (i, slot) in next.iter_mut().enumerate() {
                for a in 0..self.alphabet {
                    *slot += weights[i * self.alphabet + a];
                }
            }
            weights = next;
            current -= 1;
        }
        CylinderMeasure::from_weights(self.alphabet, depth, weights)
    }

    /// ∫ f dμ. The function may be shallower than the measure (it is lifted
    /// exactly); a deeper function cannot be integrated against this table.
    pub fn integrate(&self, f: &CylinderFunction) -> Result<f64> {
        if f.alphabet_size() != self.alphabet {
            return Err(Error::AlphabetMismatch(f.alphabet_size(), self.alphabet));
        }
        if f.depth() > self.depth {
            return Err(Error::DepthMismatch {
                function: f.depth(),
                data: self.depth,
            });
        }
        let lifted = f.refine(self.depth)?;
        Ok(par::dot(lifted.values(), &self.weights))
    }

    /// Worst refinement-consistency violation against a finer table.
    pub fn refinement_error(&self, finer: &CylinderMeasure) -> Result<f64> {
        let coarse = finer.marginalize(self.depth)?;
        let err = self
            .weights
            .iter()
            .zip(coarse.weights())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        Ok(err)
    }
}

/// ∫ f dμ as a free function.
pub fn integrate(f: &CylinderFunction, mu: &CylinderMeasure) -> Result<f64> {
    mu.integrate(f)
}
