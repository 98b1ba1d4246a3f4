//! Mixing matrices over sub-networks and the spectral data derived from them.
//!
//! Every stacked dual vector uses the same layout: constraint blocks in
//! order, inside a block the members in ascending agent order, and `S_e`
//! contiguous entries per member. The half Laplacian `½(I − 𝓐)` is block
//! diagonal with blocks `½(I − A_e) ⊗ I_{S_e}`, so its eigendecomposition is
//! computed one small `N_e × N_e` matrix at a time and never materialized.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg;
use crate::topology::SubNetwork;

/// Eigenvalues of `½(I − A_e)` below this are treated as exact zeros.
pub const ZERO_EIGENVALUE: f64 = 1e-10;

/// Tolerance used by [`validate_combination`] for equalities.
pub const VALIDATION_TOL: f64 = 1e-12;

/// A combination matrix `A_e` together with its averaged form `Ā_e = ½(I + A_e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationMatrix {
    pub constraint: usize,
    pub weights: DMatrix<f64>,
    pub averaged: DMatrix<f64>,
}

impl CombinationMatrix {
    pub fn new(constraint: usize, weights: DMatrix<f64>) -> Result<Self> {
        if !weights.is_square() || weights.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "combination matrix for constraint {constraint} is {}×{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        let averaged = averaged_coefficients(&weights);
        Ok(Self {
            constraint,
            weights,
            averaged,
        })
    }

    pub fn size(&self) -> usize {
        self.weights.nrows()
    }

    /// Writes `A_e` as headerless dense CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        for row in self.weights.row_iter() {
            w.write_record(row.iter().map(|v| format!("{v:.17e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Metropolis weights `1 / (1 + max(deg_s, deg_k))` over the induced sub-graph,
/// with the remaining mass on the diagonal.
pub fn metropolis_matrix(sub: &SubNetwork) -> CombinationMatrix {
    let n = sub.size();
    let mut a = DMatrix::zeros(n, n);
    for k in 0..n {
        for &s in sub.local_neighbors(k) {
            a[(k, s)] = 1.0 / (1.0 + sub.local_degree(k).max(sub.local_degree(s)) as f64);
        }
    }
    for k in 0..n {
        let off: f64 = sub.local_neighbors(k).iter().map(|&s| a[(k, s)]).sum();
        a[(k, k)] = 1.0 - off;
    }
    CombinationMatrix::new(sub.constraint(), a).expect("square and nonempty")
}

/// `½(I + A)`.
pub fn averaged_coefficients(a: &DMatrix<f64>) -> DMatrix<f64> {
    (DMatrix::identity(a.nrows(), a.ncols()) + a) * 0.5
}

/// Per-condition outcome of [`validate_combination`].
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ValidationReport {
    pub symmetric: bool,
    pub max_asymmetry: f64,
    pub stochastic: bool,
    /// Worst row/column sum deviation from 1, or magnitude of the most negative entry.
    pub max_stochastic_violation: f64,
    pub sparse: bool,
    /// Largest magnitude placed between members that are not neighbors.
    pub max_sparsity_violation: f64,
    pub primitive: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.symmetric && self.stochastic && self.sparse && self.primitive
    }
}

/// Checks symmetry, double stochasticity, the neighbor sparsity pattern and
/// primitivity of `a` over `sub`.
pub fn validate_combination(a: &DMatrix<f64>, sub: &SubNetwork) -> Result<ValidationReport> {
    let n = sub.size();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}×{} but the sub-network has {n} members",
            a.nrows(),
            a.ncols()
        )));
    }
    let max_asymmetry = linalg::max_asymmetry(a);

    let mut stoch = 0.0_f64;
    for i in 0..n {
        stoch = stoch.max((a.row(i).sum() - 1.0).abs());
        stoch = stoch.max((a.column(i).sum() - 1.0).abs());
    }
    let most_negative = a.iter().copied().fold(0.0_f64, f64::min);
    stoch = stoch.max(-most_negative);

    let mut sparsity = 0.0_f64;
    for k in 0..n {
        let nbrs = sub.local_neighbors(k);
        for s in 0..n {
            if s != k && !nbrs.contains(&s) {
                sparsity = sparsity.max(a[(k, s)].abs());
            }
        }
    }

    let positive_diagonal = (0..n).any(|k| a[(k, k)] > 0.0);
    let primitive = positive_diagonal && positive_graph_connected(a);

    Ok(ValidationReport {
        symmetric: max_asymmetry <= VALIDATION_TOL,
        max_asymmetry,
        stochastic: stoch <= VALIDATION_TOL,
        max_stochastic_violation: stoch,
        sparse: sparsity == 0.0,
        max_sparsity_violation: sparsity,
        primitive,
    })
}

fn positive_graph_connected(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(k) = stack.pop() {
        for s in 0..n {
            if !seen[s] && (a[(k, s)] > 0.0 || a[(s, k)] > 0.0) {
                seen[s] = true;
                stack.push(s);
            }
        }
    }
    seen.into_iter().all(|v| v)
}

/// Second-largest eigenvalue of a symmetric doubly stochastic `Ā`.
/// A `1×1` matrix has no second eigenvalue; its gap is defined as 0.
pub fn spectral_gap(averaged: &DMatrix<f64>) -> Result<f64> {
    let asym = linalg::max_asymmetry(averaged);
    if asym > 1e-10 {
        return Err(Error::NotSymmetric(asym));
    }
    let vals = linalg::sym_eigenvalues(averaged);
    Ok(if vals.len() < 2 {
        0.0
    } else {
        vals[vals.len() - 2]
    })
}

#[derive(Debug, Clone)]
struct SpectralBlock {
    members: usize,
    width: usize,
    offset: usize,
    /// Eigenvectors of `½(I − A_e)` for its nonzero eigenvalues, one per column.
    basis: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    averaged: DMatrix<f64>,
}

/// Eigen-structure of `½(I − 𝓐)` with `𝓐 = blkdiag{A_e ⊗ I_{S_e}}`.
///
/// The reduced coordinate `x = U₁ᵀy` is laid out block by block; inside block
/// `e` it is the `r_e × S_e` matrix `V_eᵀ Y_e` in row-major order, where `Y_e`
/// holds one member's dual vector per row.
#[derive(Debug, Clone)]
pub struct SpectralData {
    blocks: Vec<SpectralBlock>,
    dual_dim: usize,
    sigma: DVector<f64>,
    gaps: Vec<f64>,
}

impl SpectralData {
    pub fn new(matrices: &[CombinationMatrix], block_sizes: &[usize]) -> Result<Self> {
        if matrices.len() != block_sizes.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} combination matrices but {} block sizes",
                matrices.len(),
                block_sizes.len()
            )));
        }
        let mut blocks = Vec::with_capacity(matrices.len());
        let mut gaps = Vec::with_capacity(matrices.len());
        let mut sigma = Vec::new();
        let mut offset = 0;
        for (m, &width) in matrices.iter().zip(block_sizes) {
            if width == 0 {
                return Err(Error::InvalidParameter(format!(
                    "constraint {} has zero rows",
                    m.constraint
                )));
            }
            let n = m.size();
            let half = (DMatrix::identity(n, n) - &m.weights) * 0.5;
            let eig = SymmetricEigen::new(half);
            let mut order: Vec<usize> = (0..n)
                .filter(|&j| eig.eigenvalues[j].abs() >= ZERO_EIGENVALUE)
                .collect();
            order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
            let eigenvalues: Vec<f64> = order.iter().map(|&j| eig.eigenvalues[j]).collect();
            let basis = DMatrix::from_fn(n, order.len(), |i, c| eig.eigenvectors[(i, order[c])]);
            for &l in &eigenvalues {
                sigma.extend(std::iter::repeat_n(l, width));
            }
            gaps.push(spectral_gap(&m.averaged)?);
            blocks.push(SpectralBlock {
                members: n,
                width,
                offset,
                basis,
                eigenvalues,
                averaged: m.averaged.clone(),
            });
            offset += n * width;
        }
        Ok(Self {
            blocks,
            dual_dim: offset,
            sigma: DVector::from_vec(sigma),
            gaps,
        })
    }

    /// `N = Σ_e N_e S_e`.
    pub fn dual_dim(&self) -> usize {
        self.dual_dim
    }

    /// `r`, the rank of `½(I − 𝓐)`.
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// Diagonal of `Σ` in the reduced layout.
    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    /// Smallest nonzero eigenvalue, or `None` when every sub-network is a singleton.
    pub fn lambda_r(&self) -> Option<f64> {
        self.sigma.iter().copied().reduce(f64::min)
    }

    /// `1 − λ_r`, taken as 0 when `r = 0`.
    pub fn one_minus_lambda_r(&self) -> f64 {
        self.lambda_r().map_or(0.0, |l| 1.0 - l)
    }

    /// Second-largest eigenvalue of each `Ā_e`.
    pub fn block_gaps(&self) -> &[f64] {
        &self.gaps
    }

    pub fn max_block_gap(&self) -> f64 {
        self.gaps.iter().copied().fold(0.0, f64::max)
    }

    /// Diagonal of `D = μ_v(Σ − Σ²)`.
    pub fn dual_weight(&self, mu_v: f64) -> DVector<f64> {
        self.sigma.map(|l| mu_v * (l - l * l))
    }

    /// `U₁ᵀ y`.
    pub fn project(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.dual_dim, "dual vector has the wrong length");
        let mut out = DVector::zeros(self.rank());
        let mut at = 0;
        for b in &self.blocks {
            let r = b.eigenvalues.len();
            for j in 0..r {
                for s in 0..b.width {
                    let mut acc = 0.0;
                    for p in 0..b.members {
                        acc += b.basis[(p, j)] * y[b.offset + p * b.width + s];
                    }
                    out[at + j * b.width + s] = acc;
                }
            }
            at += r * b.width;
        }
        out
    }

    /// `U₁ x`.
    pub fn lift(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.rank(), "reduced vector has the wrong length");
        let mut out = DVector::zeros(self.dual_dim);
        let mut at = 0;
        for b in &self.blocks {
            let r = b.eigenvalues.len();
            for p in 0..b.members {
                for s in 0..b.width {
                    let mut acc = 0.0;
                    for j in 0..r {
                        acc += b.basis[(p, j)] * x[at + j * b.width + s];
                    }
                    out[b.offset + p * b.width + s] = acc;
                }
            }
            at += r * b.width;
        }
        out
    }

    /// `𝓐̄ y` evaluated block by block.
    pub fn apply_averaged(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.dual_dim, "dual vector has the wrong length");
        let mut out = DVector::zeros(self.dual_dim);
        for b in &self.blocks {
            for k in 0..b.members {
                for s in 0..b.width {
                    let mut acc = 0.0;
                    for p in 0..b.members {
                        acc += b.averaged[(k, p)] * y[b.offset + p * b.width + s];
                    }
                    out[b.offset + k * b.width + s] = acc;
                }
            }
        }
        out
    }

    /// `‖U₁ᵀy‖`, computed as the distance of `y` from its per-block means.
    pub fn consensus_residual(&self, y: &DVector<f64>) -> f64 {
        self.max_and_norm_deviation(y).1
    }

    /// Largest absolute deviation of any member's dual entry from its block mean.
    pub fn max_consensus_deviation(&self, y: &DVector<f64>) -> f64 {
        self.max_and_norm_deviation(y).0
    }

    fn max_and_norm_deviation(&self, y: &DVector<f64>) -> (f64, f64) {
        let (mut worst, mut sq) = (0.0_f64, 0.0);
        for b in &self.blocks {
            for s in 0..b.width {
                let mean = (0..b.members)
                    .map(|p| y[b.offset + p * b.width + s])
                    .sum::<f64>()
                    / b.members as f64;
                for p in 0..b.members {
                    let d = y[b.offset + p * b.width + s] - mean;
                    worst = worst.max(d.abs());
                    sq += d * d;
                }
            }
        }
        (worst, sq.sqrt())
    }

    /// Dense `U₁`.
    pub fn basis(&self) -> DMatrix<f64> {
        let r = self.rank();
        let mut u = DMatrix::zeros(self.dual_dim, r);
        for c in 0..r {
            let mut e = DVector::zeros(r);
            e[c] = 1.0;
            u.set_column(c, &self.lift(&e));
        }
        u
    }

    /// Dense `𝓐̄ = blkdiag{Ā_e ⊗ I_{S_e}}`.
    pub fn averaged_matrix(&self) -> DMatrix<f64> {
        let parts: Vec<_> = self
            .blocks
            .iter()
            .map(|b| linalg::kron_identity(&b.averaged, b.width))
            .collect();
        linalg::block_diagonal(&parts)
    }

    /// Dense `𝓐 = 2𝓐̄ − I`.
    pub fn mixing_matrix(&self) -> DMatrix<f64> {
        self.averaged_matrix() * 2.0 - DMatrix::identity(self.dual_dim, self.dual_dim)
    }

    /// Dense `½(I − 𝓐) = I − 𝓐̄`.
    pub fn half_laplacian(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dual_dim, self.dual_dim) - self.averaged_matrix()
    }
}

/// The mixing matrices of every constraint and their spectral data.
#[derive(Debug, Clone)]
pub struct CombinationSet {
    pub matrices: Vec<CombinationMatrix>,
    pub spectral: SpectralData,
}

impl CombinationSet {
    /// Metropolis weights on every sub-network.
    pub fn metropolis(subs: &[SubNetwork], block_sizes: &[usize]) -> Result<Self> {
        let matrices: Vec<_> = subs.iter().map(metropolis_matrix).collect();
        Self::from_matrices(matrices, block_sizes)
    }

    pub fn from_matrices(matrices: Vec<CombinationMatrix>, block_sizes: &[usize]) -> Result<Self> {
        let spectral = SpectralData::new(&matrices, block_sizes)?;
        Ok(Self { matrices, spectral })
    }
}
