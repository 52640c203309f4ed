use serde::{Deserialize, Serialize};

/// Work done by one prefill or recompute call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PrefillCost {
    /// Query rows processed.
    pub rows: u64,
    /// Elements of the materialized score matrix: rows × resident keys
    /// after the call, causally masked slots included.
    pub score_matrix_elements: u64,
    /// Query·key products actually evaluated under the causal mask.
    pub dot_products: u64,
}

impl std::ops::AddAssign for PrefillCost {
    fn add_assign(&mut self, rhs: Self) {
        self.rows += rhs.rows;
        self.score_matrix_elements += rhs.score_matrix_elements;
        self.dot_products += rhs.dot_products;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionCost {
    pub dense: u128,
    pub sparse: u128,
    pub ratio: f64,
}

/// Score-matrix sizes `N²` vs `(k·m)²`.
pub fn attention_cost(n_dense: u64, k: u64, m: u64) -> AttentionCost {
    let km = u128::from(k * m);
    let n = u128::from(n_dense);
    let ratio = if n == 0 {
        1.0
    } else {
        let r = (k * m) as f64 / n_dense as f64;
        r * r
    };
    AttentionCost {
        dense: n * n,
        sparse: km * km,
        ratio,
    }
}
