//! Finite-dimensional von Neumann algebras `M_{d_1} ⊕ … ⊕ M_{d_m}`.
//!
//! Elements are stored block by block. Block order is part of the algebra's
//! identity; two algebras are isomorphic when their block dimensions agree as
//! multisets, and [`BlockAlgebra::isomorphism`] returns the permutation witness.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::linalg::{self, c, CMat, C64, ONE};

pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockAlgebra {
    dims: Vec<usize>,
}

impl BlockAlgebra {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            bail!(Construction, "block algebra needs at least one block");
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            bail!(Construction, "block {i} has dimension 0");
        }
        Ok(Self { dims })
    }

    /// Algebra with possibly zero blocks, used internally for cut-down corners.
    pub(crate) fn from_dims_unchecked(dims: Vec<usize>) -> Self {
        Self { dims }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_blocks(&self) -> usize {
        self.dims.len()
    }

    /// Σ d_i², the complex dimension.
    pub fn dimension(&self) -> usize {
        self.dims.iter().map(|d| d * d).sum()
    }

    pub fn identity(&self) -> AlgebraElement {
        AlgebraElement::new(self.dims.iter().map(|&d| linalg::identity(d)).collect())
    }

    pub fn zero(&self) -> AlgebraElement {
        AlgebraElement::new(self.dims.iter().map(|&d| linalg::zeros(d)).collect())
    }

    /// Matrix units `(block, a, b)` in block-major order.
    pub fn matrix_unit_labels(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.dimension());
        for (k, &d) in self.dims.iter().enumerate() {
            for a in 0..d {
                for b in 0..d {
                    out.push((k, a, b));
                }
            }
        }
        out
    }

    pub fn matrix_unit(&self, block: usize, a: usize, b: usize) -> AlgebraElement {
        let mut x = self.zero();
        x.blocks[block][(a, b)] = ONE;
        x
    }

    pub fn matrix_units(&self) -> Vec<AlgebraElement> {
        self.matrix_unit_labels()
            .into_iter()
            .map(|(k, a, b)| self.matrix_unit(k, a, b))
            .collect()
    }

    pub fn from_coordinates(&self, v: &[C64]) -> Result<AlgebraElement> {
        if v.len() != self.dimension() {
            bail!(Shape, "expected {} coordinates, got {}", self.dimension(), v.len());
        }
        let mut blocks = Vec::with_capacity(self.dims.len());
        let mut off = 0;
        for &d in &self.dims {
            blocks.push(CMat::from_fn(d, d, |a, b| v[off + a * d + b]));
            off += d * d;
        }
        Ok(AlgebraElement::new(blocks))
    }

    pub fn random_element<R: Rng + ?Sized>(&self, rng: &mut R) -> AlgebraElement {
        AlgebraElement::new(self.dims.iter().map(|&d| linalg::random_matrix(d, d, rng)).collect())
    }

    /// Random element of operator norm at most one.
    pub fn random_ball_element<R: Rng + ?Sized>(&self, rng: &mut R) -> AlgebraElement {
        let x = self.random_element(rng);
        let n = x.op_norm();
        let scale = rng.gen_range(0.0..1.0) / n.max(1e-300);
        x.scale(c(scale, 0.0))
    }

    /// Block permutation `perm` with `other.dims[perm[i]] == self.dims[i]`, if one exists.
    pub fn isomorphism(&self, other: &BlockAlgebra) -> Option<Vec<usize>> {
        if self.dims.len() != other.dims.len() {
            return None;
        }
        let mut used = vec![false; other.dims.len()];
        let mut perm = Vec::with_capacity(self.dims.len());
        for &d in &self.dims {
            let j = (0..other.dims.len()).find(|&j| !used[j] && other.dims[j] == d)?;
            used[j] = true;
            perm.push(j);
        }
        Some(perm)
    }

    pub fn check_element(&self, x: &AlgebraElement) -> Result<()> {
        if x.dims() != self.dims {
            bail!(Shape, "element with blocks {:?} does not belong to algebra {:?}", x.dims(), self.dims);
        }
        Ok(())
    }
}

impl fmt::Display for BlockAlgebra {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| format!("M{d}")).collect();
        write!(f, "{}", parts.join(" ⊕ "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraElement {
    blocks: Vec<CMat>,
}

impl AlgebraElement {
    pub fn new(blocks: Vec<CMat>) -> Self {
        debug_assert!(blocks.iter().all(|b| b.is_square()));
        Self { blocks }
    }

    pub fn blocks(&self) -> &[CMat] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [CMat] {
        &mut self.blocks
    }

    pub fn block(&self, i: usize) -> &CMat {
        &self.blocks[i]
    }

    pub fn into_blocks(self) -> Vec<CMat> {
        self.blocks
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.nrows()).collect()
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            bail!(Shape, "block dimensions {:?} and {:?} differ", self.dims(), other.dims());
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(self.zip(other, |a, b| a + b))
    }

    pub fn checked_sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(self.zip(other, |a, b| a - b))
    }

    pub fn checked_mul(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(self.zip(other, |a, b| a * b))
    }

    fn zip(&self, other: &Self, f: impl Fn(&CMat, &CMat) -> CMat) -> Self {
        Self::new(self.blocks.iter().zip(&other.blocks).map(|(a, b)| f(a, b)).collect())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::new(self.blocks.iter().map(|b| b * s).collect())
    }

    pub fn adjoint(&self) -> Self {
        Self::new(self.blocks.iter().map(|b| b.adjoint()).collect())
    }

    pub fn op_norm(&self) -> f64 {
        self.blocks.iter().map(linalg::op_norm).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().map(linalg::max_abs).fold(0.0, f64::max)
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.max_abs() <= tol
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.dims() == other.dims() && self.zip(other, |a, b| a - b).max_abs() <= tol
    }

    /// Row-major coordinates, block after block.
    pub fn coordinates(&self) -> Vec<C64> {
        let mut v = Vec::new();
        for b in &self.blocks {
            let d = b.nrows();
            for a in 0..d {
                for k in 0..d {
                    v.push(b[(a, k)]);
                }
            }
        }
        v
    }

    pub fn is_projection(&self, tol: f64) -> bool {
        self.approx_eq(&self.adjoint(), tol) && self.approx_eq(&(self * self), tol)
    }

    /// `self ≥ other` for self-adjoint elements: smallest eigenvalue of the difference ≥ -tol.
    pub fn dominates(&self, other: &Self, tol: f64) -> bool {
        self.blocks.iter().zip(&other.blocks).all(|(a, b)| {
            let (vals, _) = linalg::hermitian_eigen(&(a - b));
            vals.first().map_or(true, |v| *v >= -tol)
        })
    }
}

impl Add for &AlgebraElement {
    type Output = AlgebraElement;
    fn add(self, rhs: &AlgebraElement) -> AlgebraElement {
        self.checked_add(rhs).expect("element shapes must agree")
    }
}

impl Sub for &AlgebraElement {
    type Output = AlgebraElement;
    fn sub(self, rhs: &AlgebraElement) -> AlgebraElement {
        self.checked_sub(rhs).expect("element shapes must agree")
    }
}

impl Mul for &AlgebraElement {
    type Output = AlgebraElement;
    fn mul(self, rhs: &AlgebraElement) -> AlgebraElement {
        self.checked_mul(rhs).expect("element shapes must agree")
    }
}

/// Central projection given by a 0/1 mask over blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CentralProjection {
    pub mask: Vec<bool>,
}

impl CentralProjection {
    pub fn to_element(&self, algebra: &BlockAlgebra) -> AlgebraElement {
        AlgebraElement::new(
            algebra
                .dims()
                .iter()
                .zip(&self.mask)
                .map(|(&d, &m)| if m { linalg::identity(d) } else { linalg::zeros(d) })
                .collect(),
        )
    }

    pub fn is_zero(&self) -> bool {
        self.mask.iter().all(|m| !m)
    }

    pub fn leq(&self, other: &Self) -> bool {
        self.mask.iter().zip(&other.mask).all(|(a, b)| !a || *b)
    }
}

/// Normal functional `ρ(x) = Σ_i tr(ρ_i x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalFunctional {
    densities: Vec<CMat>,
}

impl NormalFunctional {
    pub fn new(densities: Vec<CMat>) -> Self {
        Self { densities }
    }

    pub fn zero(algebra: &BlockAlgebra) -> Self {
        Self::new(algebra.dims().iter().map(|&d| linalg::zeros(d)).collect())
    }

    pub fn densities(&self) -> &[CMat] {
        &self.densities
    }

    pub fn dims(&self) -> Vec<usize> {
        self.densities.iter().map(|b| b.nrows()).collect()
    }

    pub fn apply(&self, x: &AlgebraElement) -> Result<C64> {
        if self.dims() != x.dims() {
            bail!(Shape, "functional on {:?} applied to element of {:?}", self.dims(), x.dims());
        }
        Ok(self.densities.iter().zip(x.blocks()).map(|(r, b)| (r * b).trace()).sum())
    }

    /// Σ_i ‖ρ_i‖₁.
    pub fn norm(&self) -> f64 {
        self.densities.iter().map(linalg::trace_norm).sum()
    }

    /// Unit-ball element attaining the norm: from `ρ_i = U Σ V*`, take `x_i = V U*`.
    pub fn norming_element(&self) -> AlgebraElement {
        AlgebraElement::new(
            self.densities
                .iter()
                .map(|r| {
                    let d = r.nrows();
                    if d == 0 {
                        return CMat::zeros(0, 0);
                    }
                    let svd = r.clone().svd(true, true);
                    let u = svd.u.expect("u requested");
                    let vt = svd.v_t.expect("v_t requested");
                    vt.adjoint() * u.adjoint()
                })
                .collect(),
        )
    }

    /// `σ ⊗ ρ` on the algebra with every block tensored by `M_k` on the left.
    pub fn promote(&self, sigma: &CMat) -> NormalFunctional {
        NormalFunctional::new(self.densities.iter().map(|d| linalg::kron(sigma, d)).collect())
    }

    pub fn random<R: Rng + ?Sized>(algebra: &BlockAlgebra, rng: &mut R) -> Self {
        Self::new(algebra.dims().iter().map(|&d| linalg::random_matrix(d, d, rng)).collect())
    }
}

/// A unital *-homomorphism between block algebras in normal form: target block
/// `i` receives `U_i · diag(x_{s_1}, x_{s_2}, …) · U_i*` where `s_k` are its
/// listed source blocks (repetition is multiplicity).
#[derive(Debug, Clone, PartialEq)]
pub struct FinHom {
    pub source: BlockAlgebra,
    pub target: BlockAlgebra,
    pub rules: Vec<FinBlockRule>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinBlockRule {
    pub sources: Vec<usize>,
    pub unitary: CMat,
}

impl FinHom {
    pub fn new(source: BlockAlgebra, target: BlockAlgebra, rules: Vec<FinBlockRule>) -> Result<Self> {
        if rules.len() != target.num_blocks() {
            bail!(Shape, "need one rule per target block ({}), got {}", target.num_blocks(), rules.len());
        }
        for (i, r) in rules.iter().enumerate() {
            let d: usize = r.sources.iter().map(|&s| source.dims().get(s).copied().unwrap_or(usize::MAX / 4)).sum();
            if r.sources.iter().any(|&s| s >= source.num_blocks()) {
                bail!(Shape, "target block {i} references a nonexistent source block");
            }
            if d != target.dims()[i] {
                bail!(Shape, "target block {i} has dimension {} but its sources fill {d}", target.dims()[i]);
            }
            if r.unitary.nrows() != d || r.unitary.ncols() != d {
                bail!(Shape, "unitary for target block {i} must be {d}x{d}");
            }
        }
        Ok(Self { source, target, rules })
    }

    pub fn identity(algebra: &BlockAlgebra) -> Self {
        let rules = algebra
            .dims()
            .iter()
            .enumerate()
            .map(|(i, &d)| FinBlockRule { sources: vec![i], unitary: linalg::identity(d) })
            .collect();
        Self { source: algebra.clone(), target: algebra.clone(), rules }
    }

    /// Canonical multiplicity embedding: target block `i` holds `A[i][j]` copies of
    /// source block `j`, in increasing `j`, conjugated by `unitaries[i]`.
    pub fn from_multiplicities(
        source: BlockAlgebra,
        target: BlockAlgebra,
        mult: &[Vec<usize>],
        unitaries: Option<Vec<CMat>>,
    ) -> Result<Self> {
        if mult.len() != target.num_blocks() || mult.iter().any(|row| row.len() != source.num_blocks()) {
            bail!(Shape, "multiplicity matrix must be {}x{}", target.num_blocks(), source.num_blocks());
        }
        let rules = mult
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let sources: Vec<usize> =
                    row.iter().enumerate().flat_map(|(j, &m)| std::iter::repeat(j).take(m)).collect();
                let unitary = match &unitaries {
                    Some(us) => us[i].clone(),
                    None => linalg::identity(target.dims()[i]),
                };
                FinBlockRule { sources, unitary }
            })
            .collect();
        Self::new(source, target, rules)
    }

    pub fn multiplicity_matrix(&self) -> Vec<Vec<usize>> {
        self.rules
            .iter()
            .map(|r| {
                let mut row = vec![0; self.source.num_blocks()];
                for &s in &r.sources {
                    row[s] += 1;
                }
                row
            })
            .collect()
    }

    pub fn apply(&self, x: &AlgebraElement) -> Result<AlgebraElement> {
        self.source.check_element(x)?;
        Ok(AlgebraElement::new(
            self.rules
                .iter()
                .map(|r| {
                    let diag: Vec<CMat> = r.sources.iter().map(|&s| x.block(s).clone()).collect();
                    &r.unitary * linalg::block_diag(&diag) * r.unitary.adjoint()
                })
                .collect(),
        ))
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &FinHom) -> Result<FinHom> {
        if other.target != self.source {
            bail!(Shape, "cannot compose: {} vs {}", other.target, self.source);
        }
        let rules = self
            .rules
            .iter()
            .map(|r| {
                let mut sources = Vec::new();
                let mut inner = Vec::new();
                for &s in &r.sources {
                    sources.extend_from_slice(&other.rules[s].sources);
                    inner.push(other.rules[s].unitary.clone());
                }
                FinBlockRule { sources, unitary: &r.unitary * linalg::block_diag(&inner) }
            })
            .collect();
        FinHom::new(other.source.clone(), self.target.clone(), rules)
    }

    /// Source blocks referenced by no target block.
    pub fn kernel_mask(&self) -> CentralProjection {
        let mut used = vec![false; self.source.num_blocks()];
        for r in &self.rules {
            for &s in &r.sources {
                used[s] = true;
            }
        }
        CentralProjection { mask: used.into_iter().map(|u| !u).collect() }
    }

    pub fn is_surjective(&self) -> bool {
        let mut count = vec![0usize; self.source.num_blocks()];
        for r in &self.rules {
            if r.sources.len() != 1 {
                return false;
            }
            count[r.sources[0]] += 1;
        }
        count.iter().all(|&k| k <= 1)
    }

    pub fn is_automorphism(&self) -> bool {
        self.source == self.target
            && self.rules.iter().all(|r| r.sources.len() == 1)
            && self.kernel_mask().is_zero()
            && self.is_surjective()
    }

    /// Inverse of a block-bijective homomorphism.
    pub fn inverse(&self) -> Result<FinHom> {
        if !(self.is_surjective() && self.kernel_mask().is_zero()) {
            bail!(Precondition, "homomorphism is not an isomorphism");
        }
        let mut rules = vec![None; self.source.num_blocks()];
        for (t, r) in self.rules.iter().enumerate() {
            rules[r.sources[0]] = Some(FinBlockRule { sources: vec![t], unitary: r.unitary.adjoint() });
        }
        FinHom::new(self.target.clone(), self.source.clone(), rules.into_iter().map(Option::unwrap).collect())
    }

    /// Recover the normal form of a *-homomorphism from the images of the source
    /// matrix units. `image(j, a, b)` must return the image of `e^j_{ab}`.
    ///
    /// For each target block the range of the image of `e^j_{00}` is split into
    /// orthonormal vectors `ξ_r`; the columns `image(e^j_{a0}) ξ_r` then carry the
    /// canonical matrix units, which gives the conjugating unitary.
    pub fn recover(
        source: &BlockAlgebra,
        target: &BlockAlgebra,
        image: impl Fn(usize, usize, usize) -> AlgebraElement,
        tol: f64,
    ) -> Result<FinHom> {
        let mut per_target: Vec<(Vec<usize>, Vec<DVector<C64>>)> =
            target.dims().iter().map(|_| (Vec::new(), Vec::new())).collect();
        for (j, &e) in source.dims().iter().enumerate() {
            let columns: Vec<AlgebraElement> = (0..e).map(|a| image(j, a, 0)).collect();
            let p = &columns[0];
            for (i, slot) in per_target.iter_mut().enumerate() {
                let basis = linalg::range_basis(p.block(i), 0.5);
                for r in 0..basis.ncols() {
                    let xi = basis.column(r).into_owned();
                    slot.0.push(j);
                    for col in &columns {
                        slot.1.push(col.block(i) * &xi);
                    }
                }
            }
        }
        let mut rules = Vec::with_capacity(target.num_blocks());
        for (i, (sources, cols)) in per_target.into_iter().enumerate() {
            let d = target.dims()[i];
            if cols.len() != d {
                bail!(
                    Internal,
                    "recovered {} columns for target block {i} of dimension {d}: map is not unital",
                    cols.len()
                );
            }
            let u = CMat::from_columns(&cols);
            if !linalg::is_unitary(&u, 1e3 * tol.max(1e-12)) {
                bail!(Internal, "recovered frame for target block {i} is not unitary");
            }
            rules.push(FinBlockRule { sources, unitary: u });
        }
        FinHom::new(source.clone(), target.clone(), rules)
    }
}

/// Block structure of a unital *-subalgebra together with a system of matrix
/// units realizing it inside the parent algebra.
#[derive(Debug, Clone)]
pub struct SubalgebraStructure {
    pub algebra: BlockAlgebra,
    /// `units[j][a][b]` is the matrix unit `e^j_{ab}` as an element of the parent.
    pub units: Vec<Vec<Vec<AlgebraElement>>>,
    pub embedding: FinHom,
}

impl SubalgebraStructure {
    pub fn embed(&self, x: &AlgebraElement) -> Result<AlgebraElement> {
        self.embedding.apply(x)
    }

    /// Abstract coordinates of a parent element lying in the subalgebra.
    pub fn coordinates(&self, y: &AlgebraElement) -> AlgebraElement {
        AlgebraElement::new(
            self.units
                .iter()
                .map(|u| {
                    let e = u.len();
                    let mult = hs_inner(&u[0][0], &u[0][0]).re;
                    CMat::from_fn(e, e, |a, b| hs_inner(&u[a][b], y) / mult)
                })
                .collect(),
        )
    }

    pub fn contains(&self, y: &AlgebraElement, tol: f64) -> bool {
        self.embed(&self.coordinates(y)).map(|z| z.approx_eq(y, tol)).unwrap_or(false)
    }
}

/// Hilbert–Schmidt inner product `tr(x* y)`.
fn hs_inner(x: &AlgebraElement, y: &AlgebraElement) -> C64 {
    x.blocks().iter().zip(y.blocks()).map(|(a, b)| (a.adjoint() * b).trace()).sum()
}

struct SpanBasis {
    vectors: Vec<DVector<C64>>,
    elements: Vec<AlgebraElement>,
}

impl SpanBasis {
    fn try_add(&mut self, x: &AlgebraElement, tol: f64) -> bool {
        let mut v = DVector::from_vec(x.coordinates());
        let scale = v.norm();
        if scale <= tol {
            return false;
        }
        for _ in 0..2 {
            for b in &self.vectors {
                let proj = b.dotc(&v);
                v -= b * proj;
            }
        }
        let n = v.norm();
        if n <= 1e-8 * scale.max(1.0) {
            return false;
        }
        self.vectors.push(v / c(n, 0.0));
        self.elements.push(x.clone());
        true
    }
}

/// Block structure and matrix units of the unital *-subalgebra generated by `gens`.
///
/// The generated algebra is found by closing `{1}` under right multiplication
/// by the generators and their adjoints. Minimal central projections are the
/// spectral projections of a random self-adjoint central element; inside each
/// factor summand a random self-adjoint element supplies minimal projections
/// and compressions of a random element supply the off-diagonal units.
pub fn subalgebra_structure(
    parent: &BlockAlgebra,
    gens: &[AlgebraElement],
    seed: u64,
    tol: f64,
) -> Result<SubalgebraStructure> {
    if gens.is_empty() {
        bail!(Precondition, "generating set is empty");
    }
    for g in gens {
        parent.check_element(g)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut letters: Vec<AlgebraElement> = Vec::new();
    for g in gens {
        letters.push(g.clone());
        letters.push(g.adjoint());
    }
    let mut span = SpanBasis { vectors: Vec::new(), elements: Vec::new() };
    span.try_add(&parent.identity(), tol);
    let mut idx = 0;
    while idx < span.elements.len() {
        let b = span.elements[idx].clone();
        for g in &letters {
            span.try_add(&(&b * g), tol);
            if span.elements.len() > parent.dimension() {
                bail!(Internal, "span closure exceeded the parent dimension {}", parent.dimension());
            }
        }
        idx += 1;
    }
    let basis = span.elements;
    let n = basis.len();

    // Center: coefficient vectors c with Σ c_k [b_k, g] = 0 for every letter g.
    let rows_per = parent.dimension();
    let mut sys = CMat::zeros(rows_per * letters.len(), n);
    for (k, b) in basis.iter().enumerate() {
        for (l, g) in letters.iter().enumerate() {
            let comm = &(b * g) - &(g * b);
            for (r, z) in comm.coordinates().into_iter().enumerate() {
                sys[(l * rows_per + r, k)] = z;
            }
        }
    }
    let sys_scale = linalg::max_abs(&sys).max(1.0);
    let center_coeffs = linalg::null_space(&sys, 1e-6 * sys_scale);
    let combine = |coeffs: &[C64]| -> AlgebraElement {
        let mut acc = parent.zero();
        for (k, z) in coeffs.iter().enumerate() {
            if z.norm() > 0.0 {
                acc = &acc + &basis[k].scale(*z);
            }
        }
        acc
    };
    let mut h = parent.zero();
    for col in 0..center_coeffs.ncols() {
        let coeffs: Vec<C64> = center_coeffs.column(col).iter().cloned().collect();
        let z = combine(&coeffs);
        let r = rng.gen_range(-1.0..1.0);
        h = &h + &(&z + &z.adjoint()).scale(c(r, 0.0));
    }
    let central = spectral_projections(&h, None);

    let mut summands = Vec::new();
    for q in central {
        let compressed: Vec<AlgebraElement> = basis.iter().map(|b| &q * b).collect();
        let mut sub_span = SpanBasis { vectors: Vec::new(), elements: Vec::new() };
        for x in &compressed {
            sub_span.try_add(x, tol);
        }
        let dim = sub_span.elements.len();
        let e = (dim as f64).sqrt().round() as usize;
        if e * e != dim {
            bail!(Internal, "central summand has dimension {dim}, not a perfect square");
        }
        let mut hq = parent.zero();
        for x in &compressed {
            let r = rng.gen_range(-1.0..1.0);
            hq = &hq + &(x + &x.adjoint()).scale(c(r, 0.0));
        }
        let minimal = spectral_projections(&hq, Some(&q));
        if minimal.len() != e {
            bail!(Internal, "expected {e} minimal projections in a factor summand, found {}", minimal.len());
        }
        let e11 = minimal[0].clone();
        let mut col = vec![e11.clone()];
        for f in &minimal[1..] {
            let mut found = None;
            for _ in 0..8 {
                let mut g = parent.zero();
                for x in &compressed {
                    g = &g + &x.scale(c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
                }
                let y = &(f * &g) * &e11;
                let nrm = y.op_norm();
                if nrm > 1e-6 {
                    found = Some(y.scale(c(1.0 / nrm, 0.0)));
                    break;
                }
            }
            col.push(found.ok_or_else(|| Error::Internal("could not link minimal projections".into()))?);
        }
        let units: Vec<Vec<AlgebraElement>> =
            (0..e).map(|a| (0..e).map(|b| &col[a] * &col[b].adjoint()).collect()).collect();
        let signature: Vec<usize> = parent
            .dims()
            .iter()
            .enumerate()
            .map(|(i, _)| linalg::trace(units[0][0].block(i)).re.round() as usize)
            .collect();
        summands.push((signature, e, units));
    }
    // Deterministic order independent of the random central element.
    summands.sort_by(|a, b| {
        let first = |s: &Vec<usize>| s.iter().position(|&m| m > 0).unwrap_or(usize::MAX);
        first(&a.0).cmp(&first(&b.0)).then(b.0.cmp(&a.0)).then(a.1.cmp(&b.1))
    });
    let dims: Vec<usize> = summands.iter().map(|s| s.1).collect();
    let units: Vec<Vec<Vec<AlgebraElement>>> = summands.into_iter().map(|s| s.2).collect();
    let algebra = BlockAlgebra::new(dims)?;
    let embedding = FinHom::recover(&algebra, parent, |j, a, b| units[j][a][b].clone(), tol)?;
    let structure = SubalgebraStructure { algebra, units, embedding };
    if structure.algebra.dimension() != n {
        bail!(Internal, "matrix units span {} dimensions, algebra has {n}", structure.algebra.dimension());
    }
    Ok(structure)
}

/// Spectral projections of a self-adjoint element, eigenvalues clustered across
/// blocks. With `within`, only the range of that projection is considered.
fn spectral_projections(h: &AlgebraElement, within: Option<&AlgebraElement>) -> Vec<AlgebraElement> {
    let mut entries: Vec<(f64, usize, DVector<C64>)> = Vec::new();
    for (i, b) in h.blocks().iter().enumerate() {
        let frame = match within {
            Some(q) => linalg::range_basis(q.block(i), 0.5),
            None => linalg::identity(b.nrows()),
        };
        if frame.ncols() == 0 {
            continue;
        }
        let restricted = frame.adjoint() * b * &frame;
        let (vals, vecs) = linalg::hermitian_eigen(&restricted);
        for (k, v) in vals.iter().enumerate() {
            entries.push((*v, i, &frame * vecs.column(k)));
        }
    }
    entries.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let scale = entries.iter().map(|e| e.0.abs()).fold(1.0, f64::max);
    let gap = 1e-7 * scale;
    let mut groups: Vec<Vec<(usize, DVector<C64>)>> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for (v, i, vec) in entries {
        if groups.is_empty() || v - last > gap {
            groups.push(Vec::new());
        }
        last = v;
        groups.last_mut().unwrap().push((i, vec));
    }
    let dims = h.dims();
    groups
        .into_iter()
        .map(|g| {
            let mut blocks: Vec<CMat> = dims.iter().map(|&d| linalg::zeros(d)).collect();
            for (i, v) in g {
                blocks[i] += &v * v.adjoint();
            }
            AlgebraElement::new(blocks)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alg(d: &[usize]) -> BlockAlgebra {
        BlockAlgebra::new(d.to_vec()).unwrap()
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(BlockAlgebra::new(vec![]), Err(Error::Construction(_))));
        assert!(matches!(BlockAlgebra::new(vec![2, 0]), Err(Error::Construction(_))));
    }

    #[test]
    fn dimensions() {
        assert_eq!(alg(&[1, 1]).dimension(), 2);
        assert_eq!(alg(&[2]).dimension(), 4);
        let a = alg(&[2, 3]);
        assert_eq!(a.dimension(), 13);
        assert_eq!(a.matrix_units().len(), 13);
    }

    #[test]
    fn commutative_product() {
        let a = alg(&[1, 1]);
        let x = a.from_coordinates(&[c(2.0, 0.0), c(3.0, 1.0)]).unwrap();
        let y = a.from_coordinates(&[c(5.0, 0.0), c(-1.0, 0.0)]).unwrap();
        let p = &x * &y;
        assert_eq!(p.coordinates(), vec![c(10.0, 0.0), c(-3.0, -1.0)]);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let x = alg(&[1, 1]).identity();
        let y = alg(&[2]).identity();
        assert!(matches!(x.checked_mul(&y), Err(Error::Shape(_))));
        let rho = NormalFunctional::zero(&alg(&[2]));
        assert!(matches!(rho.apply(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn operator_norm_examples() {
        let a = alg(&[1, 1]);
        let x = a.from_coordinates(&[c(3.0, 0.0), c(-4.0, 0.0)]).unwrap();
        assert!((x.op_norm() - 4.0).abs() < 1e-12);
        assert!((alg(&[2, 3]).identity().op_norm() - 1.0).abs() < 1e-12);
        let p = CentralProjection { mask: vec![false, true] }.to_element(&alg(&[2, 3]));
        assert!((p.op_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn functional_norm_examples() {
        let a = alg(&[1, 1]);
        assert_eq!(NormalFunctional::zero(&a).norm(), 0.0);
        let rho = NormalFunctional::new(vec![linalg::identity(1), -linalg::identity(1)]);
        assert!((rho.norm() - 2.0).abs() < 1e-12);
        let x = rho.norming_element();
        assert!((rho.apply(&x).unwrap().re - 2.0).abs() < 1e-12);
    }

    #[test]
    fn multiplicity_composition() {
        let a = alg(&[1, 1]);
        let f = FinHom::from_multiplicities(a.clone(), a.clone(), &[vec![0, 1], vec![0, 1]], None).unwrap();
        let g = f.compose(&f).unwrap();
        assert_eq!(g.multiplicity_matrix(), vec![vec![0, 1], vec![0, 1]]);
        assert_eq!(f.kernel_mask().mask, vec![true, false]);
        assert!(!f.is_surjective());
    }

    #[test]
    fn subalgebra_examples() {
        let a = alg(&[1, 1]);
        let s = subalgebra_structure(&a, &[a.identity()], 1, DEFAULT_TOL).unwrap();
        assert_eq!(s.algebra.dims(), &[1]);
        let diag = a.from_coordinates(&[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let s = subalgebra_structure(&a, &[diag], 1, DEFAULT_TOL).unwrap();
        assert_eq!(s.algebra.dims(), &[1]);
        let m2 = alg(&[2]);
        let s = subalgebra_structure(&m2, &m2.matrix_units(), 1, DEFAULT_TOL).unwrap();
        assert_eq!(s.algebra.dims(), &[2]);
        assert!(matches!(subalgebra_structure(&m2, &[], 1, DEFAULT_TOL), Err(Error::Precondition(_))));
    }

    #[test]
    fn subalgebra_of_diagonal_embedding() {
        // M2 embedded diagonally into M2 ⊕ M2 ⊕ M1 twisted by a unitary in the second block.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = alg(&[2, 1]);
        let tgt = alg(&[2, 2, 1, 3]);
        let u = linalg::random_unitary(3, &mut rng);
        let f = FinHom::from_multiplicities(
            src.clone(),
            tgt.clone(),
            &[vec![1, 0], vec![1, 0], vec![0, 1], vec![1, 1]],
            Some(vec![linalg::identity(2), linalg::random_unitary(2, &mut rng), linalg::identity(1), u]),
        )
        .unwrap();
        let gens: Vec<_> = src.matrix_units().iter().map(|e| f.apply(e).unwrap()).collect();
        let s = subalgebra_structure(&tgt, &gens, 11, DEFAULT_TOL).unwrap();
        let mut d = s.algebra.dims().to_vec();
        d.sort();
        assert_eq!(d, vec![1, 2]);
        for g in &gens {
            assert!(s.contains(g, 1e-9));
        }
        let again: Vec<_> = s.algebra.matrix_units().iter().map(|e| s.embed(e).unwrap()).collect();
        let s2 = subalgebra_structure(&tgt, &again, 3, DEFAULT_TOL).unwrap();
        assert_eq!(s2.algebra.dims(), s.algebra.dims());
    }

    #[test]
    fn recover_matches_original() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let src = alg(&[1, 2]);
        let tgt = alg(&[3, 5]);
        let f = FinHom::from_multiplicities(
            src.clone(),
            tgt.clone(),
            &[vec![1, 1], vec![1, 2]],
            Some(vec![linalg::random_unitary(3, &mut rng), linalg::random_unitary(5, &mut rng)]),
        )
        .unwrap();
        let g = FinHom::recover(&src, &tgt, |j, a, b| f.apply(&src.matrix_unit(j, a, b)).unwrap(), 1e-10).unwrap();
        for _ in 0..5 {
            let x = src.random_element(&mut rng);
            assert!(f.apply(&x).unwrap().approx_eq(&g.apply(&x).unwrap(), 1e-10));
        }
    }
}
