//! Distance correlation between intent chunks.
//!
//! Uses the V-statistic form: pairwise Euclidean distances, double
//! centering, and means of elementwise products. The independence loss is
//! the sum of `dCor` over all unordered intent pairs.

use rayon::prelude::*;

use crate::embedding::ChunkedEmbeddingTable;
use crate::error::{DgcfError, Result};

/// Guard added under the denominator and used as the degeneracy threshold.
pub const DCOR_EPS: f64 = 1e-10;

/// `n` sampled rows of one intent chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSampleMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ChunkSampleMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows < 2 {
            return Err(DgcfError::Contract(format!(
                "distance correlation needs at least 2 rows, got {rows}"
            )));
        }
        if data.len() != rows * cols {
            return Err(DgcfError::Contract(format!(
                "{rows}x{cols} sample needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(DgcfError::numeric(format!(
                "sample row {} column {}",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(ChunkSampleMatrix { rows, cols, data })
    }

    /// Rows `nodes` of intent chunk `k`.
    pub fn from_table(table: &ChunkedEmbeddingTable, nodes: &[usize], k: usize) -> Result<Self> {
        let c = table.chunk_dim();
        let mut data = Vec::with_capacity(nodes.len() * c);
        for &n in nodes {
            data.extend_from_slice(table.chunk(n, k));
        }
        Self::new(nodes.len(), c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Dense `n x n` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SquareMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    fn mean_product(&self, other: &SquareMatrix) -> f64 {
        let total: f64 = self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum();
        total / (self.n * self.n) as f64
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn pairwise_distances(x: &ChunkSampleMatrix) -> SquareMatrix {
    let n = x.rows;
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            if i != j {
                *v = euclid(x.row(i), x.row(j));
            }
        }
    });
    SquareMatrix { n, data }
}

/// `A_ij = D_ij - mean_i. - mean_.j + mean_..`
pub fn double_center(d: &SquareMatrix) -> SquareMatrix {
    let n = d.n;
    let row_means: Vec<f64> = d
        .data
        .chunks(n)
        .map(|r| r.iter().sum::<f64>() / n as f64)
        .collect();
    let col_means: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| d.data[i * n + j]).sum::<f64>() / n as f64)
        .collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = d.data[i * n + j] - row_means[i] - col_means[j] + grand;
        }
    });
    SquareMatrix { n, data }
}

/// Centered distances plus the distance variance of one sample.
struct Centered {
    a: SquareMatrix,
    dvar2: f64,
}

fn centered(x: &ChunkSampleMatrix) -> Centered {
    let a = double_center(&pairwise_distances(x));
    let dvar2 = a.mean_product(&a);
    Centered { a, dvar2 }
}

/// Value and partial derivatives of `dCor` w.r.t. `(dCov², dVar²_x, dVar²_y)`.
struct DcorParts {
    value: f64,
    d_cov2: f64,
    d_var_x: f64,
    d_var_y: f64,
}

fn dcor_parts(cov2_raw: f64, var_x: f64, var_y: f64) -> DcorParts {
    let zero = DcorParts {
        value: 0.0,
        d_cov2: 0.0,
        d_var_x: 0.0,
        d_var_y: 0.0,
    };
    if var_x <= DCOR_EPS || var_y <= DCOR_EPS {
        return zero;
    }
    let cov2 = cov2_raw.max(0.0);
    if cov2 == 0.0 {
        return zero;
    }
    let num = cov2.sqrt();
    let s = (var_x * var_y).sqrt();
    let den = (s + DCOR_EPS).sqrt();
    let value = num / den;
    let d_den = -num / (2.0 * den * den * den);
    DcorParts {
        value,
        d_cov2: 1.0 / (2.0 * num * den),
        d_var_x: d_den * var_y / (2.0 * s),
        d_var_y: d_den * var_x / (2.0 * s),
    }
}

pub fn distance_correlation(x: &ChunkSampleMatrix, y: &ChunkSampleMatrix) -> Result<f64> {
    if x.rows != y.rows {
        return Err(DgcfError::Contract(format!(
            "distance correlation needs equal sample sizes, got {} and {}",
            x.rows, y.rows
        )));
    }
    let cx = centered(x);
    let cy = centered(y);
    Ok(dcor_parts(cx.a.mean_product(&cy.a), cx.dvar2, cy.dvar2).value)
}

fn check_same_rows(chunks: &[ChunkSampleMatrix]) -> Result<()> {
    if let Some(first) = chunks.first() {
        if chunks.iter().any(|c| c.rows != first.rows) {
            return Err(DgcfError::Contract(
                "all intent samples must have the same number of rows".into(),
            ));
        }
    }
    Ok(())
}

/// Sum of `dCor` over all intent pairs `k < k'`.
pub fn independence_loss(chunks: &[ChunkSampleMatrix]) -> Result<f64> {
    check_same_rows(chunks)?;
    let centered: Vec<Centered> = chunks.iter().map(centered).collect();
    let mut total = 0.0;
    for k in 0..centered.len() {
        for k2 in k + 1..centered.len() {
            let cov2 = centered[k].a.mean_product(&centered[k2].a);
            total += dcor_parts(cov2, centered[k].dvar2, centered[k2].dvar2).value;
        }
    }
    Ok(total)
}

/// Independence loss and its gradient w.r.t. every sample row of every
/// chunk (same layout as the inputs).
pub fn independence_loss_with_grad(chunks: &[ChunkSampleMatrix]) -> Result<(f64, Vec<Vec<f64>>)> {
    check_same_rows(chunks)?;
    let kk = chunks.len();
    let centered: Vec<Centered> = chunks.iter().map(centered).collect();
    // grad of loss w.r.t. D_k is sum_j coef[k][j] * A_j / n²
    let mut coef = vec![vec![0.0; kk]; kk];
    let mut total = 0.0;
    for k in 0..kk {
        for k2 in k + 1..kk {
            let cov2 = centered[k].a.mean_product(&centered[k2].a);
            let parts = dcor_parts(cov2, centered[k].dvar2, centered[k2].dvar2);
            total += parts.value;
            coef[k][k2] += parts.d_cov2;
            coef[k2][k] += parts.d_cov2;
            coef[k][k] += 2.0 * parts.d_var_x;
            coef[k2][k2] += 2.0 * parts.d_var_y;
        }
    }

    let grads = chunks
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let n = x.rows;
            let c = x.cols;
            let scale = 1.0 / (n * n) as f64;
            let active: Vec<(f64, &SquareMatrix)> = coef[k]
                .iter()
                .zip(&centered)
                .filter(|(w, _)| **w != 0.0)
                .map(|(w, cm)| (*w * scale, &cm.a))
                .collect();
            let mut grad = vec![0.0; n * c];
            if active.is_empty() {
                return grad;
            }
            grad.par_chunks_mut(c).enumerate().for_each(|(i, gi)| {
                let xi = x.row(i);
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let xj = x.row(j);
                    let dist = euclid(xi, xj);
                    if dist == 0.0 {
                        continue;
                    }
                    let gd: f64 = active.iter().map(|(w, a)| w * a.get(i, j)).sum();
                    let factor = 2.0 * gd / dist;
                    for ((g, a), b) in gi.iter_mut().zip(xi).zip(xj) {
                        *g += factor * (a - b);
                    }
                }
            });
            grad
        })
        .collect();
    Ok((total, grads))
}

/// Mean pairwise `dCor` over intent pairs, on the rows `sample` of `table`.
/// Returns 0 (with a warning) when there is only one intent.
pub fn measure_table_dcor(table: &ChunkedEmbeddingTable, sample: &[usize]) -> Result<f64> {
    let k = table.intents();
    if k < 2 {
        log::warn!("distance correlation needs at least two intents; reporting 0");
        return Ok(0.0);
    }
    if sample.is_empty() {
        return Err(DgcfError::Contract("empty node sample".into()));
    }
    let chunks = (0..k)
        .map(|c| ChunkSampleMatrix::from_table(table, sample, c))
        .collect::<Result<Vec<_>>>()?;
    let pairs = (k * (k - 1) / 2) as f64;
    Ok(independence_loss(&chunks)? / pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ChunkSampleMatrix {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ChunkSampleMatrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn distances_basic() {
        let same = ChunkSampleMatrix::new(3, 2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        assert!(pairwise_distances(&same).data.iter().all(|&v| v == 0.0));
        let tri = ChunkSampleMatrix::new(2, 2, vec![0.0, 0.0, 3.0, 4.0]).unwrap();
        let d = pairwise_distances(&tri);
        assert_eq!(d.get(0, 1), 5.0);
        assert_eq!(d.get(1, 0), 5.0);
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn distances_match_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(5, 3, &mut rng);
        let d = pairwise_distances(&x);
        for i in 0..5 {
            for j in 0..5 {
                let mut s = 0.0;
                for c in 0..3 {
                    let diff = x.row(i)[c] - x.row(j)[c];
                    s += diff * diff;
                }
                assert_abs_diff_eq!(d.get(i, j), s.sqrt(), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn centering_constant_and_sums() {
        let c = SquareMatrix {
            n: 3,
            data: vec![2.5; 9],
        };
        assert!(double_center(&c).data.iter().all(|v| v.abs() < 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = pairwise_distances(&random(7, 2, &mut rng));
        let a = double_center(&d);
        for i in 0..7 {
            let row: f64 = (0..7).map(|j| a.get(i, j)).sum();
            let col: f64 = (0..7).map(|j| a.get(j, i)).sum();
            assert!(row.abs() < 1e-9 && col.abs() < 1e-9);
        }
    }

    #[test]
    fn centering_hand_matrix() {
        // D = [[0,1,2],[1,0,3],[2,3,0]]; row means 1, 4/3, 5/3; grand 4/3
        let d = SquareMatrix {
            n: 3,
            data: vec![0.0, 1.0, 2.0, 1.0, 0.0, 3.0, 2.0, 3.0, 0.0],
        };
        let a = double_center(&d);
        let m = [1.0, 4.0 / 3.0, 5.0 / 3.0];
        let g = 4.0 / 3.0;
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(a.get(i, j), d.get(i, j) - m[i] - m[j] + g, epsilon = 1e-15);
            }
        }
        assert_abs_diff_eq!(a.get(0, 0), -2.0 + 4.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn self_correlation_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(20, 3, &mut rng);
        assert_abs_diff_eq!(distance_correlation(&x, &x).unwrap(), 1.0, epsilon = 1e-6);
        let c = ChunkSampleMatrix::new(4, 2, vec![0.3; 8]).unwrap();
        assert_eq!(distance_correlation(&c, &x.clone_rows(4)).unwrap(), 0.0);
    }

    #[test]
    fn size_mismatch_is_contract_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(4, 2, &mut rng);
        let b = random(5, 2, &mut rng);
        assert!(matches!(
            distance_correlation(&a, &b),
            Err(DgcfError::Contract(_))
        ));
        assert!(ChunkSampleMatrix::new(1, 2, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn loss_pair_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chunks: Vec<_> = (0..4).map(|_| random(10, 2, &mut rng)).collect();
        assert_eq!(independence_loss(&chunks[..1]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            independence_loss(&chunks[..2]).unwrap(),
            distance_correlation(&chunks[0], &chunks[1]).unwrap(),
            epsilon = 1e-15
        );
        let mut sum = 0.0;
        for a in 0..4 {
            for b in a + 1..4 {
                sum += distance_correlation(&chunks[a], &chunks[b]).unwrap();
            }
        }
        assert_abs_diff_eq!(independence_loss(&chunks).unwrap(), sum, epsilon = 1e-12);
    }

    #[test]
    fn duplicated_chunks_measure_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let half: Vec<f64> = (0..30 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut values = Vec::new();
        for row in half.chunks(2) {
            values.extend_from_slice(row);
            values.extend_from_slice(row);
        }
        let t = ChunkedEmbeddingTable::from_values(10, 20, 4, 2, values).unwrap();
        let sample: Vec<usize> = (0..30).collect();
        assert_abs_diff_eq!(measure_table_dcor(&t, &sample).unwrap(), 1.0, epsilon = 1e-6);

        let t1 = ChunkedEmbeddingTable::from_values(10, 20, 2, 1, half).unwrap();
        assert_eq!(measure_table_dcor(&t1, &sample).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let chunks: Vec<_> = (0..3).map(|_| random(6, 2, &mut rng)).collect();
        let (_, grads) = independence_loss_with_grad(&chunks).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            for idx in 0..12 {
                let mut plus = chunks.clone();
                plus[k].data[idx] += h;
                let mut minus = chunks.clone();
                minus[k].data[idx] -= h;
                let fd = (independence_loss(&plus).unwrap() - independence_loss(&minus).unwrap())
                    / (2.0 * h);
                assert_abs_diff_eq!(grads[k][idx], fd, epsilon = 1e-7);
            }
        }
    }

    impl ChunkSampleMatrix {
        fn clone_rows(&self, rows: usize) -> Self {
            ChunkSampleMatrix::new(rows, self.cols, self.data[..rows * self.cols].to_vec())
                .unwrap()
        }
    }
}
