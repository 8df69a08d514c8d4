//! Token grids and the regional attention mask.

use crate::tensor::{Element, Graph, Tensor};
use crate::{Error, Result};

/// A square grid of feature tokens in row-major order.
#[derive(Debug, Clone)]
pub struct TokenGrid<E: Element> {
    pub side: usize,
    pub tokens: Tensor<E>,
}

impl<E: Element> TokenGrid<E> {
    pub fn new(side: usize, tokens: Tensor<E>) -> Result<Self> {
        if tokens.rows() != side * side {
            return Err(Error::shape(format!(
                "token grid side {side} needs {} rows, got {}",
                side * side,
                tokens.rows()
            )));
        }
        Ok(TokenGrid { side, tokens })
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }
}

/// Value-level 2D average pooling over a [`TokenGrid`].
pub fn avg_pool_grid<E: Element>(grid: &TokenGrid<E>, kernel: usize) -> Result<TokenGrid<E>> {
    let mut g = Graph::new();
    let id = g.leaf(grid.tokens.clone());
    let pooled = g.avg_pool_grid(id, kernel)?;
    TokenGrid::new(grid.side / kernel, g.value(pooled).clone())
}

/// Per-query support sets for windowed cross-attention: query (r, c) may
/// attend to prior-image tokens within a `window x window` box centered on
/// (r, c), clamped at the grid edges.
#[derive(Debug, Clone)]
pub struct RegionalMask {
    pub side: usize,
    pub window: usize,
    support: Vec<Vec<u32>>,
}

/// Build the regional mask for a `side x side` grid.
pub fn build_regional_mask(side: usize, window: usize) -> Result<RegionalMask> {
    if window % 2 == 0 {
        return Err(Error::config(format!("window {window} must be odd")));
    }
    if side == 0 {
        return Err(Error::config("grid side must be positive"));
    }
    if window > 2 * side - 1 {
        return Err(Error::config(format!(
            "window {window} exceeds 2*side-1 = {}",
            2 * side - 1
        )));
    }
    let half = (window - 1) / 2;
    let mut support = Vec::with_capacity(side * side);
    for qr in 0..side {
        for qc in 0..side {
            let r0 = qr.saturating_sub(half);
            let r1 = (qr + half).min(side - 1);
            let c0 = qc.saturating_sub(half);
            let c1 = (qc + half).min(side - 1);
            let mut set = Vec::with_capacity((r1 - r0 + 1) * (c1 - c0 + 1));
            for r in r0..=r1 {
                for c in c0..=c1 {
                    set.push((r * side + c) as u32);
                }
            }
            support.push(set);
        }
    }
    Ok(RegionalMask {
        side,
        window,
        support,
    })
}

impl RegionalMask {
    /// Support set of query token `i` (row-major index).
    pub fn support(&self, i: usize) -> &[u32] {
        &self.support[i]
    }

    pub fn num_queries(&self) -> usize {
        self.support.len()
    }

    /// Additive attention mask: 0 inside the support, -inf outside.
    pub fn additive_tensor<E: Element>(&self) -> Tensor<E> {
        let n = self.support.len();
        let mut data = vec![E::neg_infinity(); n * n];
        for (q, set) in self.support.iter().enumerate() {
            for &k in set {
                data[q * n + k as usize] = E::zero();
            }
        }
        Tensor::from_op(vec![n, n], data)
    }
}

/// Additive causal mask for autoregressive self-attention.
pub fn causal_mask<E: Element>(len: usize) -> Tensor<E> {
    let mut data = vec![E::zero(); len * len];
    for i in 0..len {
        for j in (i + 1)..len {
            data[i * len + j] = E::neg_infinity();
        }
    }
    Tensor::from_op(vec![len, len], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_support_is_window_squared() {
        let m = build_regional_mask(12, 3).unwrap();
        // query at (6, 6) is interior
        assert_eq!(m.support(6 * 12 + 6).len(), 9);
    }

    #[test]
    fn paper_scale_interior_support_is_121() {
        let m = build_regional_mask(48, 11).unwrap();
        assert_eq!(m.support(24 * 48 + 24).len(), 121);
    }

    #[test]
    fn corner_support_is_clamped() {
        let m = build_regional_mask(4, 3).unwrap();
        assert_eq!(m.support(0), &[0, 1, 4, 5]);
    }

    #[test]
    fn full_window_degenerates_to_dense() {
        let side = 5;
        let m = build_regional_mask(side, 2 * side - 1).unwrap();
        for q in 0..side * side {
            assert_eq!(m.support(q).len(), side * side);
        }
    }

    #[test]
    fn even_window_is_rejected() {
        assert!(build_regional_mask(8, 4).is_err());
    }

    #[test]
    fn every_support_set_is_non_empty_and_in_range() {
        for (side, window) in [(5, 3), (7, 5), (12, 3), (9, 17)] {
            let m = build_regional_mask(side, window).unwrap();
            for q in 0..side * side {
                let s = m.support(q);
                assert!(!s.is_empty());
                assert!(s.iter().all(|&k| (k as usize) < side * side));
            }
        }
    }

    #[test]
    fn additive_tensor_matches_support() {
        let m = build_regional_mask(4, 3).unwrap();
        let t = m.additive_tensor::<f64>();
        let n = 16;
        for q in 0..n {
            for k in 0..n {
                let masked = t.data()[q * n + k] == f64::NEG_INFINITY;
                let in_support = m.support(q).contains(&(k as u32));
                assert_eq!(masked, !in_support);
            }
        }
    }
}
