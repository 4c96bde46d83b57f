//! Dense operator algebra on finite volumes.
//!
//! Every operator lives on a [`Volume`]: an ascending list of sites with
//! their local dimensions. The tensor basis is ordered with the lowest site
//! id as the most significant digit, so an operator `A` on site `1` embedded
//! into the volume `{0, 1}` is `1 ⊗ A`.
//!
//! Functional calculus goes exclusively through [`SpectralData`]: every
//! exponent that shows up in the thermodynamics is Hermitian (or `i` times
//! Hermitian) and the eigenbasis is reused for exact time averages.

use std::fmt;
use std::ops::Range;

use faer::{Mat, MatRef, Side};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Complex scalar used for every matrix in the crate.
#[allow(non_camel_case_types)]
pub type c64 = Complex64;

/// Dense complex matrix.
pub type Matrix = Mat<c64>;

/// Relative gap below which neighbouring eigenvalues share one projection.
pub const DEGENERACY_GAP: f64 = 1e-9;

/// Relative Hermiticity tolerance accepted by [`DenseOperator::spectral`].
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Tolerance on `‖UU† − 1‖_max` for unitary inputs.
pub const UNITARY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpError {
    #[error("support {support:?} is not contained in volume {volume:?}")]
    NotSubset {
        support: Vec<SiteId>,
        volume: Vec<SiteId>,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operators live on different volumes ({left:?} vs {right:?})")]
    VolumeMismatch {
        left: Vec<SiteId>,
        right: Vec<SiteId>,
    },
    #[error("operator is not Hermitian (max |A - A†| = {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("operator is not unitary (max |UU† - 1| = {deviation:e})")]
    NotUnitary { deviation: f64 },
    #[error("function is not finite at eigenvalue {at}")]
    NonFinite { at: f64 },
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("eigendecomposition failed: {0}")]
    Decomposition(String),
}

/// Integer label of a lattice site.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SiteId(pub u32);

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for SiteId {
    fn from(v: u32) -> Self {
        SiteId(v)
    }
}

/// Converts a list of raw labels into site ids.
pub fn sites<I: IntoIterator<Item = u32>>(ids: I) -> Vec<SiteId> {
    ids.into_iter().map(SiteId).collect()
}

/// Ordered finite set of sites together with their local Hilbert space
/// dimensions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Volume {
    sites: Vec<SiteId>,
    dims: Vec<usize>,
}

impl Volume {
    /// Builds a volume from `(site, local_dim)` pairs in any order.
    pub fn new<I: IntoIterator<Item = (SiteId, usize)>>(pairs: I) -> Result<Self, OpError> {
        let mut pairs: Vec<_> = pairs.into_iter().collect();
        pairs.sort_by_key(|&(s, _)| s);
        if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(OpError::InvalidVolume(format!("duplicate site {}", w[0].0)));
        }
        if let Some(&(s, _)) = pairs.iter().find(|&&(_, d)| d == 0) {
            return Err(OpError::InvalidVolume(format!("site {s} has dimension 0")));
        }
        let (sites, dims) = pairs.into_iter().unzip();
        Ok(Volume { sites, dims })
    }

    /// A volume of `n` qubits labelled `0..n`.
    pub fn qubits(n: u32) -> Self {
        Volume {
            sites: (0..n).map(SiteId).collect(),
            dims: vec![2; n as usize],
        }
    }

    pub fn sites(&self) -> &[SiteId] {
        &self.sites
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Dimension of the tensor product Hilbert space.
    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn contains(&self, site: SiteId) -> bool {
        self.sites.binary_search(&site).is_ok()
    }

    pub fn local_dim(&self, site: SiteId) -> Option<usize> {
        self.sites.binary_search(&site).ok().map(|i| self.dims[i])
    }

    /// Whether every site of `self` belongs to `other` with the same local
    /// dimension.
    pub fn is_subvolume_of(&self, other: &Volume) -> bool {
        self.sites
            .iter()
            .zip(&self.dims)
            .all(|(&s, &d)| other.local_dim(s) == Some(d))
    }

    /// The subvolume spanned by `subset`.
    pub fn restrict(&self, subset: &[SiteId]) -> Result<Volume, OpError> {
        let pairs = subset
            .iter()
            .map(|&s| {
                self.local_dim(s).map(|d| (s, d)).ok_or_else(|| OpError::NotSubset {
                    support: subset.to_vec(),
                    volume: self.sites.clone(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Volume::new(pairs)
    }

    /// Union of two volumes; local dimensions must agree on shared sites.
    pub fn union(&self, other: &Volume) -> Result<Volume, OpError> {
        let mut pairs: Vec<(SiteId, usize)> = self.sites.iter().copied().zip(self.dims.iter().copied()).collect();
        for (&s, &d) in other.sites.iter().zip(&other.dims) {
            match self.local_dim(s) {
                Some(e) if e != d => {
                    return Err(OpError::InvalidVolume(format!(
                        "site {s} has dimension {e} and {d}"
                    )))
                }
                Some(_) => {}
                None => pairs.push((s, d)),
            }
        }
        Volume::new(pairs)
    }
}

/// Sorted union of two sorted site lists.
pub(crate) fn merge_sites(a: &[SiteId], b: &[SiteId]) -> Vec<SiteId> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Whether two sorted site lists share an element.
pub(crate) fn intersects(a: &[SiteId], b: &[SiteId]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// A complex matrix acting on the Hilbert space of a [`Volume`].
///
/// Besides its volume, each operator tracks a *support*: a subset of the
/// volume's sites outside of which it acts as the identity. Support is
/// propagated through sums, products and commutators, which lets the
/// derivation only visit interaction terms that can fail to commute.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    volume: Volume,
    support: Vec<SiteId>,
    matrix: Matrix,
}

impl DenseOperator {
    /// Wraps a matrix acting on `volume`; the support is the full volume.
    pub fn new(volume: Volume, matrix: Matrix) -> Result<Self, OpError> {
        let dim = volume.dim();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(OpError::DimensionMismatch {
                expected: dim,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        let support = volume.sites.clone();
        Ok(DenseOperator {
            volume,
            support,
            matrix,
        })
    }

    /// Like [`DenseOperator::new`] but with an explicit (narrower) support.
    /// The caller vouches that the matrix acts trivially off `support`.
    pub fn with_support(
        volume: Volume,
        mut support: Vec<SiteId>,
        matrix: Matrix,
    ) -> Result<Self, OpError> {
        support.sort();
        support.dedup();
        if !support.iter().all(|&s| volume.contains(s)) {
            return Err(OpError::NotSubset {
                support,
                volume: volume.sites.clone(),
            });
        }
        let mut op = DenseOperator::new(volume, matrix)?;
        op.support = support;
        Ok(op)
    }

    /// Builds an operator from row-major nested rows.
    pub fn from_rows(volume: Volume, rows: &[Vec<c64>]) -> Result<Self, OpError> {
        let dim = volume.dim();
        if rows.len() != dim {
            return Err(OpError::DimensionMismatch {
                expected: dim,
                found: rows.len(),
            });
        }
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(OpError::DimensionMismatch {
                expected: dim,
                found: r.len(),
            });
        }
        let matrix = Mat::from_fn(dim, dim, |i, j| rows[i][j]);
        DenseOperator::new(volume, matrix)
    }

    pub fn identity(volume: Volume) -> Self {
        let dim = volume.dim();
        DenseOperator {
            volume,
            support: Vec::new(),
            matrix: Mat::identity(dim, dim),
        }
    }

    pub fn zero(volume: Volume) -> Self {
        let dim = volume.dim();
        DenseOperator {
            volume,
            support: Vec::new(),
            matrix: Mat::zeros(dim, dim),
        }
    }

    pub fn volume(&self) -> &Volume {
        &self.volume
    }

    pub fn support(&self) -> &[SiteId] {
        &self.support
    }

    pub fn matrix(&self) -> MatRef<'_, c64> {
        self.matrix.as_ref()
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> c64 {
        self.matrix[(i, j)]
    }

    fn same_volume(&self, other: &DenseOperator) -> Result<(), OpError> {
        if self.volume != other.volume {
            return Err(OpError::VolumeMismatch {
                left: self.volume.sites.clone(),
                right: other.volume.sites.clone(),
            });
        }
        Ok(())
    }

    fn derived(&self, support: Vec<SiteId>, matrix: Matrix) -> DenseOperator {
        DenseOperator {
            volume: self.volume.clone(),
            support,
            matrix,
        }
    }

    /// Embeds the operator into a larger volume as `A ⊗ 1`.
    ///
    /// The target basis is reindexed directly; no permutation matrices are
    /// formed.
    pub fn embed(&self, target: &Volume) -> Result<DenseOperator, OpError> {
        if !self.volume.is_subvolume_of(target) {
            return Err(OpError::NotSubset {
                support: self.volume.sites.clone(),
                volume: target.sites.clone(),
            });
        }
        if &self.volume == target {
            return Ok(self.clone());
        }
        let dim = target.dim();
        let inner = self.volume.dim();
        let outer = dim / inner;
        // positions[r * inner + y] = target index with rest digits r and
        // inner digits y.
        let mut positions = vec![0usize; dim];
        let in_source: Vec<bool> = target.sites.iter().map(|&s| self.volume.contains(s)).collect();
        let mut digits = vec![0usize; target.len()];
        for idx in 0..dim {
            let (mut y, mut r) = (0usize, 0usize);
            for (k, &d) in digits.iter().enumerate() {
                if in_source[k] {
                    y = y * target.dims[k] + d;
                } else {
                    r = r * target.dims[k] + d;
                }
            }
            positions[r * inner + y] = idx;
            for k in (0..digits.len()).rev() {
                digits[k] += 1;
                if digits[k] < target.dims[k] {
                    break;
                }
                digits[k] = 0;
            }
        }
        let mut out = Mat::<c64>::zeros(dim, dim);
        for r in 0..outer {
            let block = &positions[r * inner..(r + 1) * inner];
            for (b, &col) in block.iter().enumerate() {
                for (a, &row) in block.iter().enumerate() {
                    out[(row, col)] = self.matrix[(a, b)];
                }
            }
        }
        Ok(DenseOperator {
            volume: target.clone(),
            support: self.support.clone(),
            matrix: out,
        })
    }

    /// `A ⊗ B` for operators on disjoint volumes.
    pub fn tensor(&self, other: &DenseOperator) -> Result<DenseOperator, OpError> {
        if intersects(self.volume.sites(), other.volume.sites()) {
            return Err(OpError::InvalidVolume(format!(
                "tensor factors overlap: {:?} and {:?}",
                self.volume.sites, other.volume.sites
            )));
        }
        let joint = self.volume.union(&other.volume)?;
        self.embed(&joint)?.mul(&other.embed(&joint)?)
    }

    /// Partial trace onto `keep`, divided by the traced-out dimension, so
    /// that `(A ⊗ 1).reduce(..) = A`.
    pub fn reduce(&self, keep: &[SiteId]) -> Result<DenseOperator, OpError> {
        let kept = self.volume.restrict(keep)?;
        let inner = kept.dim();
        let outer = self.dim() / inner;
        // Full index = kept part + traced part, each a sum of digit strides.
        let (mut kept_pos, mut rest_pos) = (vec![0usize], vec![0usize]);
        let mut stride = 1;
        for k in (0..self.volume.len()).rev() {
            let d = self.volume.dims[k];
            let target = if kept.contains(self.volume.sites[k]) {
                &mut kept_pos
            } else {
                &mut rest_pos
            };
            let prev = std::mem::take(target);
            *target = (0..d)
                .flat_map(|digit| prev.iter().map(move |&p| p + digit * stride))
                .collect();
            stride *= d;
        }
        // Both lists enumerate with the last site fastest; rebuild them in
        // basis order (lowest site most significant).
        kept_pos.sort_unstable();
        rest_pos.sort_unstable();
        let mut out = Mat::<c64>::zeros(inner, inner);
        for &r in &rest_pos {
            for (b, &cb) in kept_pos.iter().enumerate() {
                for (a, &ca) in kept_pos.iter().enumerate() {
                    out[(a, b)] += self.matrix[(ca + r, cb + r)];
                }
            }
        }
        let support: Vec<SiteId> = self.support.iter().copied().filter(|&s| kept.contains(s)).collect();
        let norm = 1.0 / outer as f64;
        let out = Mat::from_fn(inner, inner, |i, j| out[(i, j)] * norm);
        DenseOperator::with_support(kept, support, out)
    }

    pub fn add(&self, other: &DenseOperator) -> Result<DenseOperator, OpError> {
        self.same_volume(other)?;
        Ok(self.derived(
            merge_sites(&self.support, &other.support),
            &self.matrix + &other.matrix,
        ))
    }

    pub fn sub(&self, other: &DenseOperator) -> Result<DenseOperator, OpError> {
        self.same_volume(other)?;
        Ok(self.derived(
            merge_sites(&self.support, &other.support),
            &self.matrix - &other.matrix,
        ))
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &DenseOperator) -> Result<(), OpError> {
        self.same_volume(other)?;
        self.matrix += &other.matrix;
        self.support = merge_sites(&self.support, &other.support);
        Ok(())
    }

    pub fn scale(&self, factor: c64) -> DenseOperator {
        let matrix = Mat::from_fn(self.dim(), self.dim(), |i, j| self.matrix[(i, j)] * factor);
        self.derived(self.support.clone(), matrix)
    }

    pub fn scale_real(&self, factor: f64) -> DenseOperator {
        self.scale(c64::new(factor, 0.0))
    }

    /// `self + shift·1`.
    pub fn shift(&self, shift: f64) -> DenseOperator {
        let mut matrix = self.matrix.clone();
        for i in 0..self.dim() {
            matrix[(i, i)] += shift;
        }
        self.derived(self.support.clone(), matrix)
    }

    /// Matrix product `self · other`.
    pub fn mul(&self, other: &DenseOperator) -> Result<DenseOperator, OpError> {
        self.same_volume(other)?;
        Ok(self.derived(
            merge_sites(&self.support, &other.support),
            &self.matrix * &other.matrix,
        ))
    }

    pub fn adjoint(&self) -> DenseOperator {
        self.derived(self.support.clone(), self.matrix.adjoint().to_owned())
    }

    pub fn trace(&self) -> c64 {
        (0..self.dim()).map(|i| self.matrix[(i, i)]).sum()
    }

    /// `tr(self · other)` without forming the product.
    pub fn trace_product(&self, other: &DenseOperator) -> Result<c64, OpError> {
        self.same_volume(other)?;
        Ok(trace_of_product(self.matrix.as_ref(), other.matrix.as_ref()))
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        max_abs(self.matrix.as_ref())
    }

    /// `max |A − A†|` entrywise.
    pub fn hermitian_deviation(&self) -> f64 {
        let n = self.dim();
        let mut dev = 0.0f64;
        for j in 0..n {
            for i in 0..=j {
                dev = dev.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        dev
    }

    /// Hermitian to `tol` relative to `max(1, max|A_ij|)`.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation() <= tol * self.max_abs().max(1.0)
    }

    /// `(A + A†) / 2`.
    pub fn hermitian_part(&self) -> DenseOperator {
        let n = self.dim();
        let matrix = Mat::from_fn(n, n, |i, j| {
            (self.matrix[(i, j)] + self.matrix[(j, i)].conj()) * 0.5
        });
        self.derived(self.support.clone(), matrix)
    }

    /// Operator norm, i.e. the largest singular value.
    pub fn op_norm(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        if self.hermitian_deviation() <= 1e-13 * scale {
            let h = self.hermitian_part();
            if let Ok(ev) = h.matrix.self_adjoint_eigenvalues(Side::Lower) {
                return ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            }
        }
        self.matrix
            .singular_values()
            .map(|s| s.first().copied().unwrap_or(0.0))
            .unwrap_or_else(|_| frobenius(self.matrix.as_ref()))
    }

    /// Spectral decomposition of a Hermitian operator.
    pub fn spectral(&self) -> Result<SpectralData, OpError> {
        SpectralData::new(self)
    }

    /// `φ(A) = Σ_j φ(a_j) E_j` for Hermitian `A`.
    pub fn apply_function<F: Fn(f64) -> f64>(&self, phi: F) -> Result<DenseOperator, OpError> {
        self.spectral()?.apply(phi)
    }

    /// `U A U⁻¹` for unitary `U`.
    pub fn unitary_conj(&self, u: &DenseOperator) -> Result<DenseOperator, OpError> {
        self.same_volume(u)?;
        let deviation = unitary_deviation(u.matrix.as_ref());
        if deviation > UNITARY_TOL {
            return Err(OpError::NotUnitary { deviation });
        }
        let m = &(&u.matrix * &self.matrix) * u.matrix.adjoint();
        Ok(self.derived(self.volume.sites.clone(), m))
    }
}

/// `[A, B] = AB − BA`.
pub fn commutator(a: &DenseOperator, b: &DenseOperator) -> Result<DenseOperator, OpError> {
    a.same_volume(b)?;
    let support = merge_sites(&a.support, &b.support);
    if !intersects(&a.support, &b.support) {
        return Ok(DenseOperator {
            volume: a.volume.clone(),
            support: Vec::new(),
            matrix: Mat::zeros(a.dim(), a.dim()),
        });
    }
    let m = &(&a.matrix * &b.matrix) - &(&b.matrix * &a.matrix);
    Ok(a.derived(support, m))
}

/// `i[A, B]`, Hermitian whenever `A` and `B` are.
pub fn i_commutator(a: &DenseOperator, b: &DenseOperator) -> Result<DenseOperator, OpError> {
    Ok(commutator(a, b)?.scale(c64::new(0.0, 1.0)))
}

/// Upper bound `Σ_X ‖A_X‖ e^{λ card X}` on the `λ`-weighted local norm of
/// `Σ_X A_X`, for one particular decomposition. Each entry is an operator
/// on its own support `X`.
pub fn observable_lambda_norm_upper(decomposition: &[DenseOperator], lambda: f64) -> f64 {
    decomposition
        .iter()
        .map(|a| a.op_norm() * (lambda * a.support().len() as f64).exp())
        .sum()
}

pub(crate) fn max_abs(m: MatRef<'_, c64>) -> f64 {
    let mut out = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out = out.max(m[(i, j)].norm());
        }
    }
    out
}

pub(crate) fn frobenius(m: MatRef<'_, c64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            acc += m[(i, j)].norm_sqr();
        }
    }
    acc.sqrt()
}

/// `tr(A B)` in `O(n²)`.
pub(crate) fn trace_of_product(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> c64 {
    let n = a.nrows();
    let mut acc = c64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub(crate) fn unitary_deviation(u: MatRef<'_, c64>) -> f64 {
    let n = u.nrows();
    if u.ncols() != n {
        return f64::INFINITY;
    }
    let p = u * u.adjoint();
    let mut dev = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((p[(i, j)] - target).norm());
        }
    }
    dev
}

/// Eigendecomposition of a Hermitian operator with ascending eigenvalues.
///
/// Eigenvectors are kept as columns of a unitary matrix; the spectral
/// projections `E_j` (one per distinct eigenvalue, after grouping values
/// closer than [`DEGENERACY_GAP`]`·‖A‖`) are materialised on demand only.
#[derive(Clone, Debug)]
pub struct SpectralData {
    volume: Volume,
    values: Vec<f64>,
    vectors: Matrix,
    groups: Vec<Range<usize>>,
}

impl SpectralData {
    pub fn new(op: &DenseOperator) -> Result<Self, OpError> {
        let scale = op.max_abs().max(1.0);
        let deviation = op.hermitian_deviation();
        if deviation > HERMITIAN_TOL * scale {
            return Err(OpError::NotHermitian { deviation });
        }
        let h = op.hermitian_part();
        let evd = h
            .matrix
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| OpError::Decomposition(format!("{e:?}")))?;
        let values: Vec<f64> = (0..op.dim()).map(|i| evd.S()[i].re).collect();
        let vectors = evd.U().to_owned();
        let norm = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut groups = Vec::new();
        let mut start = 0;
        for i in 1..=values.len() {
            if i == values.len() || values[i] - values[i - 1] >= DEGENERACY_GAP * norm {
                groups.push(start..i);
                start = i;
            }
        }
        Ok(SpectralData {
            volume: op.volume.clone(),
            values,
            vectors,
            groups,
        })
    }

    pub fn volume(&self) -> &Volume {
        &self.volume
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Eigenvalues repeated according to multiplicity, ascending.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Unitary matrix whose columns are the eigenvectors.
    pub fn vectors(&self) -> MatRef<'_, c64> {
        self.vectors.as_ref()
    }

    /// Distinct eigenvalues `a_1 < … < a_k` (each the mean of its group).
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| self.values[g.clone()].iter().sum::<f64>() / g.len() as f64)
            .collect()
    }

    pub fn multiplicities(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.len()).collect()
    }

    /// Column ranges of each eigenspace.
    pub fn groups(&self) -> &[Range<usize>] {
        &self.groups
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// Spectral projection onto the `j`-th distinct eigenvalue.
    pub fn projection(&self, j: usize) -> DenseOperator {
        self.range_projection(self.groups[j].clone())
    }

    /// `P_j = E_j + … + E_k`, the projection on eigenvalues `≥ a_j`.
    pub fn upper_projection(&self, j: usize) -> DenseOperator {
        self.range_projection(self.groups[j].start..self.dim())
    }

    /// All distinct-eigenvalue projections. Costs `k` dense matrices.
    pub fn projections(&self) -> Vec<DenseOperator> {
        (0..self.groups.len()).map(|j| self.projection(j)).collect()
    }

    fn range_projection(&self, cols: Range<usize>) -> DenseOperator {
        let v = self.vectors.as_ref().subcols(cols.start, cols.len());
        let m = v * v.adjoint();
        DenseOperator {
            volume: self.volume.clone(),
            support: self.volume.sites.clone(),
            matrix: m,
        }
    }

    /// `V diag(f(a)) V†` for a complex-valued spectral function.
    pub fn apply_complex<F: Fn(f64) -> c64>(&self, f: F) -> Result<DenseOperator, OpError> {
        let n = self.dim();
        let mut weighted = self.vectors.clone();
        for (j, &a) in self.values.iter().enumerate() {
            let w = f(a);
            if !(w.re.is_finite() && w.im.is_finite()) {
                return Err(OpError::NonFinite { at: a });
            }
            for i in 0..n {
                weighted[(i, j)] *= w;
            }
        }
        let m = &weighted * self.vectors.adjoint();
        Ok(DenseOperator {
            volume: self.volume.clone(),
            support: self.volume.sites.clone(),
            matrix: m,
        })
    }

    /// `φ(A) = Σ_j φ(a_j) E_j`, Hermitian by construction.
    pub fn apply<F: Fn(f64) -> f64>(&self, phi: F) -> Result<DenseOperator, OpError> {
        Ok(self.apply_complex(|a| c64::new(phi(a), 0.0))?.hermitian_part())
    }

    /// `e^{itA}`.
    pub fn unitary(&self, t: f64) -> DenseOperator {
        self.apply_complex(|a| c64::from_polar(1.0, t * a))
            .expect("phases are finite")
    }

    /// `V† M V`: coordinates of an operator in the eigenbasis.
    pub fn to_eigenbasis(&self, m: MatRef<'_, c64>) -> Matrix {
        &(self.vectors.adjoint() * m) * &self.vectors
    }

    /// `V M V†`: inverse of [`SpectralData::to_eigenbasis`].
    pub fn from_eigenbasis(&self, m: MatRef<'_, c64>) -> Matrix {
        &(&self.vectors * m) * self.vectors.adjoint()
    }

    /// `Σ_j a_j E_j`.
    pub fn reconstruct(&self) -> DenseOperator {
        self.apply(|a| a).expect("identity is finite")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> c64 {
        c64::new(re, im)
    }

    fn qubit() -> Volume {
        Volume::new([(SiteId(0), 2)]).unwrap()
    }

    fn pauli(which: char) -> DenseOperator {
        let rows = match which {
            'x' => vec![vec![c(0., 0.), c(1., 0.)], vec![c(1., 0.), c(0., 0.)]],
            'y' => vec![vec![c(0., 0.), c(0., -1.)], vec![c(0., 1.), c(0., 0.)]],
            'z' => vec![vec![c(1., 0.), c(0., 0.)], vec![c(0., 0.), c(-1., 0.)]],
            _ => unreachable!(),
        };
        DenseOperator::from_rows(qubit(), &rows).unwrap()
    }

    fn diff(a: &DenseOperator, b: &DenseOperator) -> f64 {
        a.sub(b).unwrap().max_abs()
    }

    #[test]
    fn reduce_inverts_embedding_and_traces_products() {
        let a_vol = Volume::new([(SiteId(0), 3), (SiteId(2), 2)]).unwrap();
        let b_vol = Volume::new([(SiteId(1), 2)]).unwrap();
        let a = DenseOperator::new(a_vol.clone(), Mat::from_fn(6, 6, |i, j| c((i * 7 + j) as f64, i as f64 - j as f64)))
            .unwrap();
        let b = DenseOperator::new(b_vol.clone(), Mat::from_fn(2, 2, |i, j| c(1.0 + i as f64, j as f64))).unwrap();
        let joint = a.tensor(&b).unwrap();
        // tr_B(A ⊗ B) / dim B = A · tr(B) / 2
        let reduced = joint.reduce(a_vol.sites()).unwrap();
        assert!(diff(&reduced, &a.scale(b.trace() * 0.5)) < 1e-12);
        let reduced = joint.reduce(b_vol.sites()).unwrap();
        assert!(diff(&reduced, &b.scale(a.trace() / 6.0)) < 1e-12);
        let full = a.embed(&joint.volume().clone()).unwrap();
        assert!(diff(&full.reduce(a_vol.sites()).unwrap(), &a) < 1e-12);
    }

    #[test]
    fn pauli_commutator() {
        let lhs = commutator(&pauli('z'), &pauli('x')).unwrap();
        let rhs = pauli('y').scale(c(0., 2.));
        assert!(diff(&lhs, &rhs) < 1e-15);
    }

    #[test]
    fn commutator_with_identity_vanishes() {
        let z = pauli('z');
        let one = DenseOperator::new(qubit(), Mat::identity(2, 2)).unwrap();
        assert_eq!(commutator(&z, &one).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn commutator_volume_mismatch() {
        let other = DenseOperator::identity(Volume::new([(SiteId(1), 2)]).unwrap());
        assert!(matches!(
            commutator(&pauli('x'), &other),
            Err(OpError::VolumeMismatch { .. })
        ));
    }

    #[test]
    fn embed_identity_and_kron() {
        let vol = Volume::qubits(2);
        let id = DenseOperator::identity(qubit()).embed(&vol).unwrap();
        assert!(diff(&id, &DenseOperator::identity(vol.clone())) < 1e-15);

        // A on site 1 into {0,1} is 1 ⊗ A: block diagonal.
        let a_vol = Volume::new([(SiteId(1), 2)]).unwrap();
        let a = DenseOperator::from_rows(
            a_vol,
            &[vec![c(1., 0.), c(2., 1.)], vec![c(3., 0.), c(4., -1.)]],
        )
        .unwrap();
        let e = a.embed(&vol).unwrap();
        for blk in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    assert_eq!(e.get(2 * blk + i, 2 * blk + j), a.get(i, j));
                }
            }
        }
        assert_eq!(e.get(0, 2), c(0., 0.));
        assert_eq!(e.support(), &[SiteId(1)]);
    }

    #[test]
    fn embed_rejects_foreign_site() {
        let a = DenseOperator::identity(Volume::new([(SiteId(5), 2)]).unwrap());
        assert!(a.embed(&Volume::qubits(2)).is_err());
        let b = DenseOperator::identity(Volume::new([(SiteId(0), 3)]).unwrap());
        assert!(b.embed(&Volume::qubits(2)).is_err());
    }

    #[test]
    fn spectral_diagonal() {
        let vol = Volume::new([(SiteId(0), 3)]).unwrap();
        let mut m = Mat::<c64>::zeros(3, 3);
        m[(0, 0)] = c(3., 0.);
        m[(1, 1)] = c(1., 0.);
        m[(2, 2)] = c(2., 0.);
        let sd = DenseOperator::new(vol, m).unwrap().spectral().unwrap();
        assert_eq!(sd.eigenvalues().len(), 3);
        for (got, want) in sd.eigenvalues().iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-14);
        }
        // E_1 is the projector on the second coordinate.
        let e1 = sd.projection(0);
        assert!((e1.get(1, 1).re - 1.0).abs() < 1e-14);
        assert!(e1.get(0, 0).norm() < 1e-14);
    }

    #[test]
    fn spectral_pauli_x_closed_form() {
        let x = pauli('x');
        let sd = x.spectral().unwrap();
        assert_eq!(sd.eigenvalues().len(), 2);
        assert!((sd.eigenvalues()[0] + 1.0).abs() < 1e-14);
        let one = DenseOperator::identity(qubit());
        let minus = one.sub(&x).unwrap().scale_real(0.5);
        let plus = one.add(&x).unwrap().scale_real(0.5);
        assert!(diff(&sd.projection(0), &minus) < 1e-14);
        assert!(diff(&sd.projection(1), &plus) < 1e-14);
    }

    #[test]
    fn spectral_groups_scalar_multiple_of_identity() {
        let a = DenseOperator::identity(Volume::qubits(2)).scale_real(2.5);
        let sd = a.spectral().unwrap();
        assert_eq!(sd.eigenvalues(), vec![2.5]);
        assert_eq!(sd.multiplicities(), vec![4]);
        assert!(diff(&sd.projection(0), &DenseOperator::identity(Volume::qubits(2))) < 1e-14);
    }

    #[test]
    fn spectral_rejects_non_hermitian() {
        let rows = vec![vec![c(0., 0.), c(1., 0.)], vec![c(0., 0.), c(0., 0.)]];
        let a = DenseOperator::from_rows(qubit(), &rows).unwrap();
        assert!(matches!(a.spectral(), Err(OpError::NotHermitian { .. })));
    }

    #[test]
    fn apply_function_cases() {
        let x = pauli('x');
        assert!(diff(&x.apply_function(|s| s).unwrap(), &x) < 1e-14);

        let mut m = Mat::<c64>::zeros(2, 2);
        m[(1, 1)] = c(2f64.ln(), 0.);
        let d = DenseOperator::new(qubit(), m).unwrap();
        let e = d.apply_function(f64::exp).unwrap();
        assert!((e.get(0, 0).re - 1.0).abs() < 1e-14);
        assert!((e.get(1, 1).re - 2.0).abs() < 1e-14);

        let err = d.apply_function(|s| 1.0 / s).unwrap_err();
        assert_eq!(err, OpError::NonFinite { at: 0.0 });
    }

    #[test]
    fn exp_matches_power_series() {
        let t = 0.3;
        let a = pauli('x').scale_real(t);
        let spectral = a.apply_function(f64::exp).unwrap();
        // Σ_m A^m / m!
        let mut term = DenseOperator::identity(qubit());
        let mut series = term.clone();
        for m in 1..30 {
            term = term.mul(&a).unwrap().scale_real(1.0 / m as f64);
            series = series.add(&term).unwrap();
        }
        assert!(diff(&spectral, &series) < 1e-10);
    }

    #[test]
    fn norms_and_traces() {
        let mut m = Mat::<c64>::zeros(2, 2);
        m[(0, 0)] = c(1., 0.);
        m[(1, 1)] = c(-3., 0.);
        let d = DenseOperator::new(qubit(), m).unwrap();
        assert!((d.op_norm() - 3.0).abs() < 1e-14);
        assert_eq!(d.trace(), c(-2., 0.));
        // Non-Hermitian input goes through the SVD.
        let rows = vec![vec![c(0., 0.), c(2., 0.)], vec![c(0., 0.), c(0., 0.)]];
        let n = DenseOperator::from_rows(qubit(), &rows).unwrap();
        assert!((n.op_norm() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn unitary_conj_rejects_non_unitary() {
        let x = pauli('x');
        let err = x.unitary_conj(&x.scale_real(2.0)).unwrap_err();
        assert!(matches!(err, OpError::NotUnitary { .. }));
        let conj = pauli('z').unitary_conj(&x).unwrap();
        assert!(diff(&conj, &pauli('z').scale_real(-1.0)) < 1e-15);
    }

    #[test]
    fn lambda_norm_upper_bounds() {
        let z = pauli('z');
        let lam = 1.0;
        assert!((observable_lambda_norm_upper(std::slice::from_ref(&z), lam) - lam.exp()).abs() < 1e-14);
        let half = z.scale_real(0.5);
        let split = observable_lambda_norm_upper(&[half.clone(), half], lam);
        assert!((split - lam.exp()).abs() < 1e-14);

        // 1⊗σz + σz⊗1: two one-site terms beat one two-site term.
        let vol = Volume::qubits(2);
        let z0 = z.clone();
        let z1 = DenseOperator::from_rows(
            Volume::new([(SiteId(1), 2)]).unwrap(),
            &[vec![c(1., 0.), c(0., 0.)], vec![c(0., 0.), c(-1., 0.)]],
        )
        .unwrap();
        let whole = z0.embed(&vol).unwrap().add(&z1.embed(&vol).unwrap()).unwrap();
        let one_term = observable_lambda_norm_upper(std::slice::from_ref(&whole), lam);
        let two_terms = observable_lambda_norm_upper(&[z0, z1], lam);
        assert!((two_terms - 2.0 * lam.exp()).abs() < 1e-12);
        assert!((one_term - 2.0 * (2.0 * lam).exp()).abs() < 1e-12);
        assert!(two_terms < one_term);
    }
}
