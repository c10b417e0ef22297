//! Models as binary inclusion vectors over the candidate predictors.
//!
//! Predictor positions are 1-based; the intercept is implicit and always
//! included. The integer encoding `m(γ) = Σ_j 2^(j-1) γ_j` is a bijection onto
//! `0..2^p` and doubles as the key for visit counts and score caches.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of candidate predictors a [`ModelIndicator`] can hold.
pub const MAX_PREDICTORS: usize = 128;

/// Largest model space [`enumerate_all`] will walk (2^20 models).
pub const ENUMERATION_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelIndicator {
    p: u8,
    bits: u128,
}

impl ModelIndicator {
    /// Intercept-only model.
    pub fn empty(p: usize) -> Self {
        assert!(p <= MAX_PREDICTORS, "p = {p} exceeds {MAX_PREDICTORS}");
        ModelIndicator {
            p: p as u8,
            bits: 0,
        }
    }

    pub fn full(p: usize) -> Self {
        let mut m = Self::empty(p);
        m.bits = mask(p);
        m
    }

    pub fn from_encoding(p: usize, encoding: u128) -> Result<Self> {
        if p > MAX_PREDICTORS {
            return Err(Error::TooManyPredictors {
                p,
                limit: MAX_PREDICTORS,
            });
        }
        if encoding & !mask(p) != 0 {
            return Err(Error::Config(format!(
                "encoding {encoding} has bits beyond p = {p}"
            )));
        }
        Ok(ModelIndicator {
            p: p as u8,
            bits: encoding,
        })
    }

    /// Model containing exactly the given 1-based predictor indices.
    pub fn from_indices(p: usize, indices: &[usize]) -> Result<Self> {
        let mut m = Self::empty(p);
        for &j in indices {
            m.check(j)?;
            m.bits |= 1 << (j - 1);
        }
        Ok(m)
    }

    fn check(&self, j: usize) -> Result<()> {
        if j == 0 || j > self.p() {
            Err(Error::IndexOutOfRange {
                index: j,
                p: self.p(),
            })
        } else {
            Ok(())
        }
    }

    pub fn p(&self) -> usize {
        self.p as usize
    }

    /// The integer encoding `m(γ)`.
    pub fn encoding(&self) -> u128 {
        self.bits
    }

    pub fn contains(&self, j: usize) -> bool {
        j >= 1 && j <= self.p() && self.bits >> (j - 1) & 1 == 1
    }

    /// Included predictor indices in increasing order.
    pub fn indices(&self) -> Vec<usize> {
        (1..=self.p()).filter(|&j| self.contains(j)).collect()
    }

    /// Design-matrix columns of the model: 0 for the intercept, then the included predictors.
    pub fn columns(&self) -> Vec<usize> {
        std::iter::once(0).chain(self.indices()).collect()
    }

    /// Number of included predictors, not counting the intercept.
    pub fn size(&self) -> usize {
        self.bits.count_ones() as usize
    }

    /// `d_γ`: included predictors plus the intercept.
    pub fn dimension(&self) -> usize {
        self.size() + 1
    }

    /// `C_γ`, the summed per-observation cost of the included predictors.
    pub fn total_cost(&self, costs: &[f64]) -> f64 {
        debug_assert_eq!(costs.len(), self.p());
        self.indices().into_iter().map(|j| costs[j - 1]).sum()
    }

    /// Copy with predictor `j` toggled.
    pub fn flip(&self, j: usize) -> Result<Self> {
        self.check(j)?;
        Ok(ModelIndicator {
            p: self.p,
            bits: self.bits ^ (1 << (j - 1)),
        })
    }

    pub fn with(&self, j: usize, included: bool) -> Result<Self> {
        self.check(j)?;
        let bit = 1u128 << (j - 1);
        let bits = if included {
            self.bits | bit
        } else {
            self.bits & !bit
        };
        Ok(ModelIndicator { p: self.p, bits })
    }

    /// Report notation using variable names, e.g. `age+bun`; the empty model is `1`.
    pub fn notation_with(&self, names: &[String]) -> String {
        let idx = self.indices();
        if idx.is_empty() {
            return "1".to_string();
        }
        idx.iter()
            .map(|&j| names[j - 1].as_str())
            .collect::<Vec<_>>()
            .join("+")
    }

    /// Parses `X1+X3+X46` style notation. Tokens may also be variable names from `names`.
    /// `X0`, `1` or an empty string denote the intercept-only model.
    pub fn parse(text: &str, names: &[String]) -> Result<Self> {
        let p = names.len();
        let mut m = Self::empty(p);
        for raw in text.split('+') {
            let token = raw.trim();
            if token.is_empty() || token == "1" || token == "X0" {
                continue;
            }
            let j = if let Some(pos) = names.iter().position(|n| n == token) {
                pos + 1
            } else {
                token
                    .strip_prefix('X')
                    .and_then(|s| s.parse::<usize>().ok())
                    .filter(|&j| j >= 1 && j <= p)
                    .ok_or_else(|| Error::Notation {
                        token: token.to_string(),
                    })?
            };
            m.bits |= 1 << (j - 1);
        }
        Ok(m)
    }
}

impl fmt::Display for ModelIndicator {
    /// `X1+X3+X46`; the empty model prints as `X0`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let idx = self.indices();
        if idx.is_empty() {
            return f.write_str("X0");
        }
        for (k, j) in idx.iter().enumerate() {
            if k > 0 {
                f.write_str("+")?;
            }
            write!(f, "X{j}")?;
        }
        Ok(())
    }
}

fn mask(p: usize) -> u128 {
    if p >= 128 {
        u128::MAX
    } else {
        (1u128 << p) - 1
    }
}

pub fn dimension(model: &ModelIndicator) -> usize {
    model.dimension()
}

pub fn total_cost(model: &ModelIndicator, costs: &[f64]) -> f64 {
    model.total_cost(costs)
}

pub fn flip(model: &ModelIndicator, j: usize) -> Result<ModelIndicator> {
    model.flip(j)
}

/// All `2^p` models in encoding order.
pub fn enumerate_all(p: usize) -> Result<ModelEnumeration> {
    if p > ENUMERATION_LIMIT {
        return Err(Error::TooManyPredictors {
            p,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(ModelEnumeration {
        p: p as u8,
        next: 0,
        end: 1 << p,
    })
}

#[derive(Debug, Clone)]
pub struct ModelEnumeration {
    p: u8,
    next: u128,
    end: u128,
}

impl Iterator for ModelEnumeration {
    type Item = ModelIndicator;

    fn next(&mut self) -> Option<ModelIndicator> {
        if self.next >= self.end {
            return None;
        }
        let bits = self.next;
        self.next += 1;
        Some(ModelIndicator { p: self.p, bits })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.end - self.next) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for ModelEnumeration {}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(p: usize, idx: &[usize]) -> ModelIndicator {
        ModelIndicator::from_indices(p, idx).unwrap()
    }

    #[test]
    fn dimension_counts_intercept() {
        assert_eq!(ModelIndicator::empty(5).dimension(), 1);
        assert_eq!(ModelIndicator::full(5).dimension(), 6);
        let best = m(83, &[1, 2, 3, 5, 12, 70, 46, 51, 49, 78]);
        assert_eq!(best.dimension(), 11);
    }

    #[test]
    fn total_cost_of_best_cost_benefit_model() {
        let mut costs = vec![1.0; 83];
        let table = [
            (1, 0.5),
            (2, 0.5),
            (3, 1.5),
            (5, 1.0),
            (12, 0.5),
            (70, 1.0),
            (46, 0.5),
            (51, 0.5),
            (49, 0.5),
            (78, 1.0),
            (48, 10.0),
        ];
        for (j, c) in table {
            costs[j - 1] = c;
        }
        assert_eq!(ModelIndicator::empty(83).total_cost(&costs), 0.0);
        let best = m(83, &[1, 2, 3, 5, 12, 70, 46, 51, 49, 78]);
        assert!((best.total_cost(&costs) - 7.5).abs() < 1e-12);
        assert_eq!(m(83, &[48]).total_cost(&costs), 10.0);
    }

    #[test]
    fn flip_examples() {
        let empty = ModelIndicator::empty(4);
        assert_eq!(empty.flip(3).unwrap(), m(4, &[3]));
        assert_eq!(m(4, &[3]).flip(3).unwrap(), empty);
        assert_eq!(m(4, &[1, 2]).flip(2).unwrap(), m(4, &[1]));
        assert!(matches!(empty.flip(0), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(empty.flip(5), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn enumeration_order_and_guard() {
        let all: Vec<_> = enumerate_all(2).unwrap().collect();
        assert_eq!(all, vec![m(2, &[]), m(2, &[1]), m(2, &[2]), m(2, &[1, 2])]);
        assert_eq!(enumerate_all(10).unwrap().len(), 1024);
        assert!(matches!(
            enumerate_all(21),
            Err(Error::TooManyPredictors { .. })
        ));
    }

    #[test]
    fn notation_round_trip() {
        let names: Vec<String> = (1..=50).map(|j| format!("v{j}")).collect();
        let model = m(50, &[1, 3, 46]);
        assert_eq!(model.to_string(), "X1+X3+X46");
        assert_eq!(ModelIndicator::parse("X1+X3+X46", &names).unwrap(), model);
        assert_eq!(
            ModelIndicator::parse("v1 + v3 + X46", &names).unwrap(),
            model
        );
        assert_eq!(ModelIndicator::parse("X0", &names).unwrap(), m(50, &[]));
        let err = ModelIndicator::parse("X1+bogus", &names).unwrap_err();
        assert!(matches!(err, Error::Notation { token } if token == "bogus"));
        assert!(ModelIndicator::parse("X51", &names).is_err());
    }

    proptest! {
        #[test]
        fn flip_is_involution_and_changes_dimension_by_one(bits in 0u128..(1 << 12), j in 1usize..=12) {
            let g = ModelIndicator::from_encoding(12, bits).unwrap();
            let f = g.flip(j).unwrap();
            prop_assert_eq!(f.flip(j).unwrap(), g);
            prop_assert_eq!((f.dimension() as i64 - g.dimension() as i64).abs(), 1);
        }

        #[test]
        fn cost_is_monotone_and_linear_for_equal_costs(
            bits in 0u128..(1 << 10),
            costs in proptest::collection::vec(0.01f64..20.0, 10),
            c in 0.1f64..5.0,
        ) {
            let g = ModelIndicator::from_encoding(10, bits).unwrap();
            for j in 1..=10 {
                if !g.contains(j) {
                    let bigger = g.flip(j).unwrap();
                    prop_assert!(bigger.total_cost(&costs) >= g.total_cost(&costs));
                }
            }
            let equal = vec![c; 10];
            let expected = c * (g.dimension() - 1) as f64;
            prop_assert!((g.total_cost(&equal) - expected).abs() <= 1e-12 * expected.max(1.0));
        }

        #[test]
        fn encoding_is_bijective(bits in 0u128..(1 << 16)) {
            let g = ModelIndicator::from_encoding(16, bits).unwrap();
            let rebuilt = ModelIndicator::from_indices(16, &g.indices()).unwrap();
            prop_assert_eq!(rebuilt.encoding(), bits);
        }
    }
}
