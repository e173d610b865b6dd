//! Dense complex matrix helpers shared by every module.

use nalgebra::DMatrix;
use num_complex::Complex;
use petgraph::unionfind::UnionFind;
use rand::Rng;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;

pub const ZERO: C64 = Complex { re: 0.0, im: 0.0 };
pub const ONE: C64 = Complex { re: 1.0, im: 0.0 };

pub fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

pub fn identity(d: usize) -> CMat {
    CMat::identity(d, d)
}

pub fn zeros(d: usize) -> CMat {
    CMat::zeros(d, d)
}

/// Matrix unit `e_{ab}` of size `d`.
pub fn unit(d: usize, a: usize, b: usize) -> CMat {
    let mut m = zeros(d);
    m[(a, b)] = ONE;
    m
}

pub fn adjoint(m: &CMat) -> CMat {
    m.adjoint()
}

/// Largest singular value.
pub fn op_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Sum of singular values.
pub fn trace_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.iter().sum()
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn trace(m: &CMat) -> C64 {
    m.trace()
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues in ascending order.
/// The input is symmetrized first.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let d = m.nrows();
    if d == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let h = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(d, d);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Orthonormal basis (as columns) of the range of a Hermitian positive matrix,
/// keeping eigenvectors whose eigenvalue exceeds `tol`.
pub fn range_basis(m: &CMat, tol: f64) -> CMat {
    let (values, vectors) = hermitian_eigen(m);
    let keep: Vec<usize> = (0..values.len()).filter(|&i| values[i] > tol).collect();
    let mut out = CMat::zeros(m.nrows(), keep.len());
    for (col, &i) in keep.iter().enumerate() {
        out.set_column(col, &vectors.column(i));
    }
    out
}

/// Orthonormal basis of the null space of a (possibly rectangular) matrix.
pub fn null_space(m: &CMat, tol: f64) -> CMat {
    let cols = m.ncols();
    if m.nrows() == 0 {
        return identity(cols);
    }
    let gram = m.adjoint() * m;
    let (values, vectors) = hermitian_eigen(&gram);
    let keep: Vec<usize> = (0..values.len()).filter(|&i| values[i] <= tol * tol).collect();
    let mut out = CMat::zeros(cols, keep.len());
    for (col, &i) in keep.iter().enumerate() {
        out.set_column(col, &vectors.column(i));
    }
    out
}

/// Numerical rank via singular values above `tol`.
pub fn rank(m: &CMat, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .filter(|s| **s > tol)
        .count()
}

/// Numerical rank of a sparse matrix: columns are grouped into connected
/// components through shared nonzero rows, and the ranks of the components add.
pub fn sparse_rank(m: &CMat, tol: f64) -> usize {
    let (rows, cols) = m.shape();
    let mut uf = UnionFind::<usize>::new(cols);
    let mut owner: Vec<Option<usize>> = vec![None; rows];
    for j in 0..cols {
        for i in 0..rows {
            if m[(i, j)] != ZERO {
                match owner[i] {
                    Some(k) => {
                        uf.union(k, j);
                    }
                    None => owner[i] = Some(j),
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for j in 0..cols {
        groups.entry(uf.find(j)).or_default().push(j);
    }
    groups
        .values()
        .map(|g| {
            let active: Vec<usize> = (0..rows).filter(|&i| g.iter().any(|&j| m[(i, j)] != ZERO)).collect();
            rank(&CMat::from_fn(active.len(), g.len(), |i, j| m[(active[i], g[j])]), tol)
        })
        .sum()
}

pub fn block_diag(blocks: &[CMat]) -> CMat {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMat::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        let d = b.nrows();
        out.view_mut((off, off), (d, d)).copy_from(b);
        off += d;
    }
    out
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn is_unitary(u: &CMat, tol: f64) -> bool {
    u.is_square() && max_abs(&(u.adjoint() * u - identity(u.nrows()))) <= tol
}

pub fn random_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    CMat::from_fn(rows, cols, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

pub fn random_hermitian<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMat {
    let m = random_matrix(d, d, rng);
    (&m + m.adjoint()) * c(0.5, 0.0)
}

/// Unitary obtained from the QR factorization of a random complex matrix,
/// with the phases of R's diagonal absorbed into Q.
pub fn random_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMat {
    if d == 0 {
        return CMat::zeros(0, 0);
    }
    let m = random_matrix(d, d, rng);
    let qr = m.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        let z = r[(j, j)];
        let phase = if z.norm() > 0.0 { z / z.norm() } else { ONE };
        for i in 0..d {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Permutation matrix sending basis vector `j` to basis vector `perm[j]`.
pub fn permutation_matrix(perm: &[usize]) -> CMat {
    let d = perm.len();
    let mut p = CMat::zeros(d, d);
    for (j, &i) in perm.iter().enumerate() {
        p[(i, j)] = ONE;
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sparse_rank_matches_dense_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = CMat::zeros(8, 7);
        m.view_mut((0, 0), (3, 2)).copy_from(&random_matrix(3, 2, &mut rng));
        m.view_mut((3, 2), (2, 3)).copy_from(&random_matrix(2, 3, &mut rng));
        m.view_mut((5, 5), (3, 2)).copy_from(&random_matrix(3, 2, &mut rng));
        let c = m.column(0).into_owned();
        m.set_column(6, &c);
        let m = kron(&permutation_matrix(&[1, 0]), &m);
        assert_eq!(sparse_rank(&m, 1e-10), rank(&m, 1e-10));
        assert_eq!(sparse_rank(&m, 1e-10), 10);
        assert_eq!(sparse_rank(&CMat::zeros(3, 4), 1e-10), 0);
    }

    #[test]
    fn random_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 1..5 {
            assert!(is_unitary(&random_unitary(d, &mut rng), 1e-12));
        }
    }

    #[test]
    fn norms_of_diagonal() {
        let m = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(3.0, 0.0), c(-4.0, 0.0)]));
        assert!((op_norm(&m) - 4.0).abs() < 1e-12);
        assert!((trace_norm(&m) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn null_space_of_shift() {
        let mut m = CMat::zeros(3, 4);
        for i in 0..3 {
            m[(i, i + 1)] = ONE;
        }
        let ns = null_space(&m, 1e-10);
        assert_eq!(ns.ncols(), 1);
        assert!((ns[(0, 0)].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = random_hermitian(4, &mut rng);
        let (vals, vecs) = hermitian_eigen(&h);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let recon = &vecs * CMat::from_diagonal(&nalgebra::DVector::from_iterator(4, vals.iter().map(|v| c(*v, 0.0)))) * vecs.adjoint();
        assert!(max_abs(&(recon - h)) < 1e-10);
    }
}
