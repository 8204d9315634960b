//! Binary inclusion vectors over the design coordinates.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Which regressors a function depends on. Coordinate `i` is included when
/// `bits[i]` is set; the cardinality is cached.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SparsityPattern {
    bits: Vec<bool>,
    cardinality: usize,
}

impl SparsityPattern {
    pub fn empty(dim: usize) -> Self {
        Self { bits: vec![false; dim], cardinality: 0 }
    }

    pub fn full(dim: usize) -> Self {
        Self { bits: vec![true; dim], cardinality: dim }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        let cardinality = bits.iter().filter(|b| **b).count();
        Self { bits, cardinality }
    }

    /// Pattern of length `dim` including exactly `indices`.
    pub fn from_indices(dim: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; dim];
        for &i in indices {
            if i >= dim {
                return domain(format!("coordinate {i} out of range for dimension {dim}"));
            }
            bits[i] = true;
        }
        Ok(Self::from_bits(bits))
    }

    /// The first `size` coordinates of a `dim`-dimensional design.
    pub fn leading(dim: usize, size: usize) -> Self {
        Self::from_bits((0..dim).map(|i| i < size).collect())
    }

    pub fn dim(&self) -> usize {
        self.bits.len()
    }

    pub fn cardinality(&self) -> usize {
        self.cardinality
    }

    pub fn is_empty(&self) -> bool {
        self.cardinality == 0
    }

    pub fn contains(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn set(&mut self, i: usize, on: bool) {
        if self.bits[i] != on {
            self.bits[i] = on;
            if on {
                self.cardinality += 1;
            } else {
                self.cardinality -= 1;
            }
        }
    }

    pub fn toggled(&self, i: usize) -> Self {
        let mut out = self.clone();
        out.set(i, !self.bits[i]);
        out
    }

    pub fn included(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }

    pub fn excluded(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, b)| !**b).map(|(i, _)| i)
    }

    /// Coordinate-wise `self <= other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// Selected sub-vector `x_γ`.
    pub fn select<'a>(&'a self, x: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        self.included().map(move |i| x[i])
    }

    /// Hex encoding with coordinate `i` at bit `i` of the number, most
    /// significant digit first, `ceil(dim / 4)` digits.
    pub fn to_hex(&self) -> String {
        let digits = self.dim().div_ceil(4).max(1);
        let mut out = String::with_capacity(digits);
        for d in (0..digits).rev() {
            let mut nibble = 0u32;
            for b in 0..4 {
                let i = 4 * d + b;
                if i < self.dim() && self.bits[i] {
                    nibble |= 1 << b;
                }
            }
            out.push(char::from_digit(nibble, 16).expect("nibble < 16"));
        }
        out
    }

    pub fn from_hex(hex: &str, dim: usize) -> Result<Self> {
        let mut bits = vec![false; dim];
        for (d, c) in hex.chars().rev().enumerate() {
            let nibble = match c.to_digit(16) {
                Some(v) => v,
                None => return domain(format!("invalid hex digit {c:?} in {hex:?}")),
            };
            for b in 0..4 {
                if nibble & (1 << b) != 0 {
                    let i = 4 * d + b;
                    if i >= dim {
                        return domain(format!("{hex:?} sets bit {i} beyond dimension {dim}"));
                    }
                    bits[i] = true;
                }
            }
        }
        Ok(Self::from_bits(bits))
    }
}

impl fmt::Debug for SparsityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SparsityPattern({self})")
    }
}

impl fmt::Display for SparsityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.bits {
            f.write_str(if *b { "1" } else { "0" })?;
        }
        Ok(())
    }
}
