//! Node embeddings split into `K` contiguous intent chunks.

use rand::Rng;

use crate::error::{DgcfError, Result};

/// `(N + M) x d` table; users occupy rows `0..N`, items `N..N+M`.
/// Chunk `k` of a row is the slice `[k * d/K, (k + 1) * d/K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkedEmbeddingTable {
    num_users: usize,
    num_items: usize,
    intents: usize,
    chunk_dim: usize,
    values: Vec<f64>,
}

impl ChunkedEmbeddingTable {
    pub fn zeros(num_users: usize, num_items: usize, dim: usize, intents: usize) -> Result<Self> {
        check_layout(dim, intents)?;
        Ok(ChunkedEmbeddingTable {
            num_users,
            num_items,
            intents,
            chunk_dim: dim / intents,
            values: vec![0.0; (num_users + num_items) * dim],
        })
    }

    pub fn from_values(
        num_users: usize,
        num_items: usize,
        dim: usize,
        intents: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        check_layout(dim, intents)?;
        if values.len() != (num_users + num_items) * dim {
            return Err(DgcfError::Contract(format!(
                "expected {} values for {} nodes x {dim}, got {}",
                (num_users + num_items) * dim,
                num_users + num_items,
                values.len()
            )));
        }
        Ok(ChunkedEmbeddingTable {
            num_users,
            num_items,
            intents,
            chunk_dim: dim / intents,
            values,
        })
    }

    /// Same shape, all zeros.
    pub fn zeros_like(&self) -> Self {
        ChunkedEmbeddingTable {
            num_users: self.num_users,
            num_items: self.num_items,
            intents: self.intents,
            chunk_dim: self.chunk_dim,
            values: vec![0.0; self.values.len()],
        }
    }

    /// Xavier-uniform draws with bound `sqrt(6 / (2d))`, every entry
    /// independent.
    pub fn xavier<R: Rng + ?Sized>(
        num_users: usize,
        num_items: usize,
        dim: usize,
        intents: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut table = Self::zeros(num_users, num_items, dim, intents)?;
        let bound = xavier_bound(dim);
        for v in &mut table.values {
            *v = rng.gen_range(-bound..bound);
        }
        Ok(table)
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn intents(&self) -> usize {
        self.intents
    }

    pub fn chunk_dim(&self) -> usize {
        self.chunk_dim
    }

    pub fn dim(&self) -> usize {
        self.intents * self.chunk_dim
    }

    /// Trainable parameter count, `(N + M) * d`.
    pub fn parameter_count(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, node: usize) -> &[f64] {
        let d = self.dim();
        &self.values[node * d..(node + 1) * d]
    }

    pub fn row_mut(&mut self, node: usize) -> &mut [f64] {
        let d = self.dim();
        &mut self.values[node * d..(node + 1) * d]
    }

    pub fn user_row(&self, user: usize) -> &[f64] {
        self.row(user)
    }

    pub fn item_row(&self, item: usize) -> &[f64] {
        self.row(self.num_users + item)
    }

    pub fn item_node(&self, item: usize) -> usize {
        self.num_users + item
    }

    pub fn chunk(&self, node: usize, k: usize) -> &[f64] {
        let start = node * self.dim() + k * self.chunk_dim;
        &self.values[start..start + self.chunk_dim]
    }

    pub fn chunk_mut(&mut self, node: usize, k: usize) -> &mut [f64] {
        let start = node * self.dim() + k * self.chunk_dim;
        let c = self.chunk_dim;
        &mut self.values[start..start + c]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.num_users == other.num_users
            && self.num_items == other.num_items
            && self.intents == other.intents
            && self.chunk_dim == other.chunk_dim
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .map(|pos| pos / self.dim())
    }

    /// Reorder intent chunks: output chunk `k` is input chunk `perm[k]`.
    pub fn permute_intents(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.intents);
        let mut out = self.zeros_like();
        for n in 0..self.num_nodes() {
            for (k, &src) in perm.iter().enumerate() {
                out.chunk_mut(n, k).copy_from_slice(self.chunk(n, src));
            }
        }
        out
    }
}

pub fn xavier_bound(dim: usize) -> f64 {
    (6.0 / (2.0 * dim as f64)).sqrt()
}

fn check_layout(dim: usize, intents: usize) -> Result<()> {
    if intents == 0 {
        return Err(DgcfError::config("K", "number of intents must be at least 1"));
    }
    if dim == 0 {
        return Err(DgcfError::config("d", "embedding size must be at least 1"));
    }
    if !dim.is_multiple_of(intents) {
        return Err(DgcfError::config(
            "d",
            format!("embedding size {dim} is not divisible by K={intents}"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_and_chunks() {
        let mut t = ChunkedEmbeddingTable::zeros(2, 3, 8, 4).unwrap();
        assert_eq!(t.parameter_count(), 5 * 8);
        assert_eq!(t.chunk_dim(), 2);
        t.chunk_mut(3, 2).copy_from_slice(&[1.0, 2.0]);
        assert_eq!(&t.row(3)[4..6], &[1.0, 2.0]);
        assert_eq!(t.item_row(1), t.row(3));
    }

    #[test]
    fn rejects_bad_layout() {
        assert!(matches!(
            ChunkedEmbeddingTable::zeros(1, 1, 64, 3),
            Err(DgcfError::Config { ref field, .. }) if field == "d"
        ));
        assert!(ChunkedEmbeddingTable::zeros(1, 1, 64, 0).is_err());
    }

    #[test]
    fn xavier_bound_and_seeds() {
        let a = ChunkedEmbeddingTable::xavier(10, 20, 16, 4, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let b = ChunkedEmbeddingTable::xavier(10, 20, 16, 4, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let c = ChunkedEmbeddingTable::xavier(10, 20, 16, 4, &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = xavier_bound(16);
        assert!(a.values().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn xavier_mean_is_centered() {
        // 10^6 draws from U(-b, b): sd of the mean is b / sqrt(3 * 10^6).
        let t = ChunkedEmbeddingTable::xavier(
            10_000,
            5_625,
            64,
            4,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        let n = t.values().len() as f64;
        assert_eq!(n, 1_000_000.0);
        let mean = t.values().iter().sum::<f64>() / n;
        let sd = xavier_bound(64) / (3.0 * n).sqrt();
        assert!(mean.abs() < 3.0 * sd, "mean {mean} sd {sd}");
    }

    #[test]
    fn permutation_moves_chunks() {
        let t = ChunkedEmbeddingTable::from_values(1, 0, 4, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.permute_intents(&[1, 0]).values(), &[3.0, 4.0, 1.0, 2.0]);
    }
}
