//! Unital completely positive maps, compressions of dilation triples and the
//! lift `(Ñ, α̃, pEp)` of the compressed map.

use serde::Serialize;

use crate::algebra::{AlgebraElement, BlockAlgebra, FinHom, NormalFunctional};
use crate::endo::{asymptotic_lift, AsymptoticLift};
use crate::error::{bail, Result};
use crate::linalg::{self, CMat};
use crate::morphism::StructuralMorphism;
use crate::seq::{BlockRef, ComputableAlgebra, Element, Functional, Part, SeqElement, Side};

/// A linear map on a block algebra stored by its values on matrix units.
#[derive(Debug, Clone, PartialEq)]
pub struct UcpMap {
    algebra: BlockAlgebra,
    /// `φ(e^s_{ab})` in the order of `matrix_unit_labels`.
    images: Vec<AlgebraElement>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UcpReport {
    pub unital_defect: f64,
    pub min_choi_eigenvalue: f64,
    pub multiplicative_defect: f64,
    /// Automatic in finite dimensions.
    pub normal: bool,
}

impl UcpReport {
    pub fn is_ucp(&self, tol: f64) -> bool {
        self.unital_defect <= tol && self.min_choi_eigenvalue >= -tol
    }
}

impl UcpMap {
    pub fn new(algebra: &BlockAlgebra, f: impl Fn(&AlgebraElement) -> Result<AlgebraElement>) -> Result<Self> {
        let images = algebra.matrix_units().iter().map(&f).collect::<Result<Vec<_>>>()?;
        for y in &images {
            algebra.check_element(y)?;
        }
        Ok(Self { algebra: algebra.clone(), images })
    }

    pub fn identity(algebra: &BlockAlgebra) -> Self {
        Self { algebra: algebra.clone(), images: algebra.matrix_units() }
    }

    pub fn from_hom(h: &FinHom) -> Result<Self> {
        if h.source != h.target {
            bail!(Shape, "a UCP map acts on a single algebra");
        }
        Self::new(&h.source, |x| h.apply(x))
    }

    /// `x ↦ u* x u` with one unitary per block.
    pub fn conjugation(algebra: &BlockAlgebra, unitaries: &[CMat]) -> Result<Self> {
        if unitaries.len() != algebra.num_blocks() {
            bail!(Shape, "need one unitary per block");
        }
        Self::new(algebra, |x| {
            Ok(AlgebraElement::new(x.blocks().iter().zip(unitaries).map(|(b, u)| u.adjoint() * b * u).collect()))
        })
    }

    /// `x ↦ (tr(x)/d)·1` on `M_d`.
    pub fn trace_average(d: usize) -> Result<Self> {
        let alg = BlockAlgebra::new(vec![d])?;
        Self::new(&alg, |x| Ok(AlgebraElement::new(vec![linalg::identity(d) * (x.block(0).trace() / d as f64)])))
    }

    pub fn algebra(&self) -> &BlockAlgebra {
        &self.algebra
    }

    pub fn apply(&self, x: &AlgebraElement) -> Result<AlgebraElement> {
        self.algebra.check_element(x)?;
        let mut out = self.algebra.zero();
        for (coef, img) in x.coordinates().iter().zip(&self.images) {
            if coef.norm() == 0.0 {
                continue;
            }
            for (o, b) in out.blocks_mut().iter_mut().zip(img.blocks()) {
                *o += b * *coef;
            }
        }
        Ok(out)
    }

    /// `self∘other`.
    pub fn compose(&self, other: &UcpMap) -> Result<UcpMap> {
        if self.algebra != other.algebra {
            bail!(Shape, "maps act on different algebras");
        }
        Ok(Self { algebra: self.algebra.clone(), images: other.images.iter().map(|y| self.apply(y)).collect::<Result<_>>()? })
    }

    /// `Σ_{ab} e_{ab} ⊗ φ(e^s_{ab})_t`.
    pub fn choi(&self, s: usize, t: usize) -> CMat {
        let ds = self.algebra.dims()[s];
        let dt = self.algebra.dims()[t];
        let offset: usize = self.algebra.dims()[..s].iter().map(|d| d * d).sum();
        let mut c = CMat::zeros(ds * dt, ds * dt);
        for a in 0..ds {
            for b in 0..ds {
                let img = self.images[offset + a * ds + b].block(t);
                c.view_mut((a * dt, b * dt), (dt, dt)).copy_from(img);
            }
        }
        c
    }

    /// Inverse of `choi`: blocks indexed `[s][t]`.
    pub fn from_choi(algebra: &BlockAlgebra, choi: &[Vec<CMat>]) -> Result<Self> {
        let dims = algebra.dims();
        if choi.len() != dims.len() || choi.iter().any(|r| r.len() != dims.len()) {
            bail!(Shape, "need a Choi block for every pair of blocks");
        }
        let mut images = Vec::with_capacity(algebra.dimension());
        for (s, &ds) in dims.iter().enumerate() {
            for a in 0..ds {
                for b in 0..ds {
                    let mut blocks = Vec::with_capacity(dims.len());
                    for (t, &dt) in dims.iter().enumerate() {
                        let c = &choi[s][t];
                        if c.nrows() != ds * dt || c.ncols() != ds * dt {
                            bail!(Shape, "Choi block ({s},{t}) must be {0}x{0}", ds * dt);
                        }
                        blocks.push(c.view((a * dt, b * dt), (dt, dt)).into_owned());
                    }
                    images.push(AlgebraElement::new(blocks));
                }
            }
        }
        Ok(Self { algebra: algebra.clone(), images })
    }

    pub fn validate(&self) -> UcpReport {
        let one = self.algebra.identity();
        let unital_defect = self.apply(&one).map(|y| y.checked_sub(&one).map(|d| d.max_abs()).unwrap_or(f64::INFINITY)).unwrap_or(f64::INFINITY);
        let n = self.algebra.num_blocks();
        let mut min_eig = f64::INFINITY;
        for s in 0..n {
            for t in 0..n {
                let c = self.choi(s, t);
                let h = (&c + c.adjoint()) * linalg::c(0.5, 0.0);
                let (vals, _) = linalg::hermitian_eigen(&h);
                min_eig = vals.iter().copied().fold(min_eig, f64::min);
            }
        }
        let units = self.algebra.matrix_units();
        let mut mult: f64 = 0.0;
        for (i, x) in units.iter().enumerate() {
            for (j, y) in units.iter().enumerate() {
                let xy = x.checked_mul(y).expect("same algebra");
                let lhs = &self.images[i].checked_mul(&self.images[j]).expect("same algebra");
                let rhs = self.apply(&xy).expect("same algebra");
                mult = mult.max(lhs.checked_sub(&rhs).expect("same algebra").max_abs());
            }
        }
        UcpReport { unital_defect, min_choi_eigenvalue: min_eig, multiplicative_defect: mult, normal: true }
    }

    pub fn check_ucp(&self, tol: f64) -> Result<UcpReport> {
        let r = self.validate();
        if r.unital_defect > tol {
            bail!(Verification, "map is not unital: ‖φ(1) − 1‖ = {:.3e}", r.unital_defect);
        }
        if r.min_choi_eigenvalue < -tol {
            bail!(Verification, "map is not completely positive: minimum Choi eigenvalue {:.3e}", r.min_choi_eigenvalue);
        }
        Ok(r)
    }

    /// `ρ∘φ`, with `(ρ∘φ)_s[b,a] = ρ(φ(e^s_{ab}))`.
    pub fn predual(&self, rho: &NormalFunctional) -> Result<NormalFunctional> {
        let mut out: Vec<CMat> = self.algebra.dims().iter().map(|&d| linalg::zeros(d)).collect();
        for ((s, a, b), img) in self.algebra.matrix_unit_labels().into_iter().zip(&self.images) {
            out[s][(b, a)] = rho.apply(img)?;
        }
        Ok(NormalFunctional::new(out))
    }

    /// `id_k ⊗ φ` on the algebra with every block tensored by `M_k` on the left.
    pub fn promote(&self, k: usize) -> Result<UcpMap> {
        if k == 0 {
            bail!(Construction, "matrix level must be at least 1");
        }
        let big = BlockAlgebra::new(self.algebra.dims().iter().map(|d| d * k).collect())?;
        let dims = self.algebra.dims().to_vec();
        Self::new(&big, |x| {
            let mut out = big.zero();
            for i in 0..k {
                for j in 0..k {
                    let small = AlgebraElement::new(
                        x.blocks().iter().zip(&dims).map(|(b, &d)| b.view((i * d, j * d), (d, d)).into_owned()).collect(),
                    );
                    let y = self.apply(&small)?;
                    for ((o, yb), &d) in out.blocks_mut().iter_mut().zip(y.blocks()).zip(&dims) {
                        o.view_mut((i * d, j * d), (d, d)).copy_from(yb);
                    }
                }
            }
            Ok(out)
        })
    }
}

/// `1_k ⊗ x` blockwise.
pub fn promote_element(x: &Element, k: usize) -> Result<Element> {
    let lift = |a: &AlgebraElement| AlgebraElement::new(a.blocks().iter().map(|b| linalg::kron(&linalg::identity(k), b)).collect());
    let parts = x
        .parts
        .iter()
        .map(|p| match p {
            Part::Fin(a) => Ok(Part::Fin(lift(a))),
            Part::Seq(s) => {
                let base = BlockAlgebra::new(s.base().dims().iter().map(|d| d * k).collect())?;
                Ok(Part::Seq(SeqElement::from_data(&base, s.data().map(lift))?))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Element::new(parts))
}

/// A triple `(N, α, p)` with `p` a projection, `α(p) ≥ p` and `αⁿ(p) ↑ 1`.
#[derive(Debug, Clone)]
pub struct DilationInstance {
    pub n: ComputableAlgebra,
    pub alpha: StructuralMorphism,
    pub p: Element,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DilationReport {
    pub projection_defect: f64,
    pub domination_defect: f64,
    /// Least `n` with `αⁿ(p) = 1`.
    pub reach: usize,
}

impl DilationInstance {
    pub fn new(alpha: StructuralMorphism, p: Element) -> Result<Self> {
        let n = alpha.source().clone();
        if alpha.target() != &n {
            bail!(Shape, "α must be an endomorphism");
        }
        n.check_element(&p)?;
        Ok(Self { n, alpha, p })
    }

    pub fn validate(&self, horizon: usize, tol: f64) -> Result<DilationReport> {
        let p = &self.p;
        let projection_defect = p.distance(&p.adjoint()).max(p.mul(p)?.distance(p));
        if projection_defect > tol {
            bail!(Precondition, "p is not a projection: defect {projection_defect:.3e}");
        }
        for (j, (part, s)) in p.parts.iter().zip(self.n.summands()).enumerate() {
            let Part::Seq(x) = part else { continue };
            let d = x.data();
            for v in d.left.iter().chain(&d.core).chain(&d.right) {
                for (b, blk) in v.blocks().iter().enumerate() {
                    let full = (blk - linalg::identity(blk.nrows())).iter().all(|z| z.norm() <= tol);
                    let empty = blk.iter().all(|z| z.norm() <= tol);
                    if !(full || empty) {
                        bail!(Precondition, "p must be 0 or 1 on each block of sequence summand {j} (block {b})");
                    }
                }
            }
            if s.side() == Some(Side::TwoSided) && !x.approx_eq(&SeqElement::identity(x.base(), Side::TwoSided), tol) {
                bail!(Precondition, "p must be 1 on the two-sided summand {j}");
            }
        }
        let ap = self.alpha.apply(p)?;
        let domination_defect = ap.mul(p)?.distance(p);
        if domination_defect > tol {
            bail!(Precondition, "α(p) ≥ p fails: ‖α(p)p − p‖ = {domination_defect:.3e}");
        }
        let one = self.n.identity();
        let mut cur = p.clone();
        let mut reach = None;
        for k in 0..=horizon {
            if cur.distance(&one) <= tol {
                reach = Some(k);
                break;
            }
            cur = self.alpha.apply(&cur)?;
        }
        let Some(reach) = reach else {
            bail!(Precondition, "αⁿ(p) does not reach 1 within {horizon} steps");
        };
        Ok(DilationReport { projection_defect, domination_defect, reach })
    }

    pub fn promote(&self, k: usize) -> Result<Self> {
        Self::new(self.alpha.promote(k)?, promote_element(&self.p, k)?)
    }
}

/// The compressed map `φ(x) = pα(x)p` on `M = pNp`. Elements and functionals
/// of `M` are represented inside `N` with support under `p`.
#[derive(Debug, Clone)]
pub struct Compression {
    pub instance: DilationInstance,
    pub report: DilationReport,
}

impl Compression {
    pub fn new(d: &DilationInstance, horizon: usize, tol: f64) -> Result<Self> {
        let report = d.validate(horizon, tol)?;
        let c = Self { instance: d.clone(), report };
        let pap = c.instance.p.mul(&c.instance.alpha.apply(&c.instance.p)?)?;
        if pap.distance(&c.instance.p) > tol {
            bail!(Verification, "pα(p) ≠ p");
        }
        Ok(c)
    }

    pub fn p(&self) -> &Element {
        &self.instance.p
    }

    pub fn compress(&self, y: &Element) -> Result<Element> {
        self.p().mul(y)?.mul(self.p())
    }

    pub fn apply(&self, x: &Element) -> Result<Element> {
        self.compress(&self.instance.alpha.apply(x)?)
    }

    /// `ρ̄(y) = ρ(pyp)`: the density `pρp`.
    pub fn rho_bar(&self, rho: &Functional) -> Functional {
        let n = &self.instance.n;
        let mut out = Functional::zero(n);
        for b in rho.support(n) {
            let d = n.block_dim(&b);
            let pb = self.p().block_value(&b);
            out.accumulate(n, &b, &(&pb * rho.density(&b, d) * &pb));
        }
        out
    }

    /// `ρ∘φ` on `M`: the density `p·α_*(ρ)·p`.
    pub fn phi_predual(&self, rho: &Functional) -> Result<Functional> {
        Ok(self.rho_bar(&self.instance.alpha.predual_compose(rho)?))
    }

    /// Isometry onto the range of `p` in block `b`.
    pub fn isometry(&self, b: &BlockRef) -> CMat {
        linalg::range_basis(&self.p().block_value(b), 0.5)
    }

    /// Block dimensions of `M` at the blocks of `N` inside a window.
    pub fn corner_dims(&self, w: usize) -> Vec<(BlockRef, usize)> {
        self.instance.n.window_blocks(w).into_iter().map(|b| (b, self.isometry(&b).ncols())).filter(|(_, r)| *r > 0).collect()
    }

    /// Unitality on all of `M` and Choi positivity for every pair of blocks of
    /// `M` inside the window.
    pub fn validate_ucp(&self, w: usize) -> Result<UcpReport> {
        let n = &self.instance.n;
        let unital_defect = self.apply(self.p())?.distance(self.p());
        let blocks = self.corner_dims(w);
        let mut min_eig = f64::INFINITY;
        for (s, rs) in &blocks {
            let vs = self.isometry(s);
            let images: Vec<Element> = (0..rs * rs)
                .map(|i| {
                    let (a, b) = (i / rs, i % rs);
                    let e = vs.column(a) * vs.column(b).adjoint();
                    self.apply(&n.block_element(s, e))
                })
                .collect::<Result<_>>()?;
            for (t, rt) in &blocks {
                let vt = self.isometry(t);
                let mut c = CMat::zeros(rs * rt, rs * rt);
                for (i, y) in images.iter().enumerate() {
                    let (a, b) = (i / rs, i % rs);
                    c.view_mut((a * rt, b * rt), (*rt, *rt)).copy_from(&(vt.adjoint() * y.block_value(t) * &vt));
                }
                let h = (&c + c.adjoint()) * linalg::c(0.5, 0.0);
                min_eig = linalg::hermitian_eigen(&h).0.into_iter().fold(min_eig, f64::min);
            }
        }
        Ok(UcpReport { unital_defect, min_choi_eigenvalue: min_eig, multiplicative_defect: f64::NAN, normal: true })
    }

    /// `φ` as a dense map on `M ≅ ⊕ M_{r_i}` when `N` is finite-dimensional,
    /// with the blocks of `N` that `M` meets.
    pub fn dense(&self) -> Result<Option<(UcpMap, Vec<BlockRef>)>> {
        let n = &self.instance.n;
        if !n.is_finite_dimensional() {
            return Ok(None);
        }
        let blocks = self.corner_dims(0);
        let m = BlockAlgebra::new(blocks.iter().map(|(_, r)| *r).collect())?;
        let isos: Vec<CMat> = blocks.iter().map(|(b, _)| self.isometry(b)).collect();
        let embed = |x: &AlgebraElement| -> Element {
            let mut y = n.zero();
            for ((b, _), (v, xb)) in blocks.iter().zip(isos.iter().zip(x.blocks())) {
                y = y.add(&n.block_element(b, v * xb * v.adjoint())).expect("same algebra");
            }
            y
        };
        let phi = UcpMap::new(&m, |x| {
            let y = self.apply(&embed(x))?;
            Ok(AlgebraElement::new(blocks.iter().zip(&isos).map(|((b, _), v)| v.adjoint() * y.block_value(b) * v).collect()))
        })?;
        Ok(Some((phi, blocks.into_iter().map(|(b, _)| b).collect())))
    }

    /// Restrict a functional on `N` (supported under `p`) to `M ≅ ⊕ M_{r_i}`.
    pub fn to_dense_functional(&self, rho: &Functional, blocks: &[BlockRef]) -> NormalFunctional {
        let n = &self.instance.n;
        NormalFunctional::new(
            blocks
                .iter()
                .map(|b| {
                    let v = self.isometry(b);
                    v.adjoint() * rho.density(b, n.block_dim(b)) * v
                })
                .collect(),
        )
    }

    pub fn random_functional<R: rand::Rng + ?Sized>(&self, rng: &mut R, support: usize) -> Functional {
        self.rho_bar(&Functional::random(&self.instance.n, rng, support))
    }
}

/// `(Ñ, α̃, Ẽ)` with `Ẽ(x) = pE(x)p` for the asymptotic lift `(Ñ, α̃, E)` of `α`.
#[derive(Debug, Clone)]
pub struct CompressedLifting {
    pub compression: Compression,
    pub lift: AsymptoticLift,
    pub lifting_defect: f64,
    /// Max of `‖E(x) − α^{n₀}(Ẽ(α̃^{−n₀}x))‖` over window units, `n₀` the reach of `p`.
    pub nondegeneracy_defect: f64,
}

impl CompressedLifting {
    pub fn n_tilde(&self) -> &ComputableAlgebra {
        &self.lift.lifting.n
    }

    pub fn alpha_tilde(&self) -> &StructuralMorphism {
        &self.lift.lifting.beta
    }

    pub fn e_tilde(&self, x: &Element) -> Result<Element> {
        self.compression.compress(&self.lift.lifting.e.apply(x)?)
    }

    /// `ρ∘Ẽ` by evaluating `ρ(pE(e_{ab})p)` on every matrix unit in a window.
    pub fn pullback_by_evaluation(&self, rho: &Functional, w: usize) -> Result<Functional> {
        let n = self.n_tilde();
        let mut out = Functional::zero(n);
        for b in n.window_blocks(w) {
            let d = n.block_dim(&b);
            let mut dens = linalg::zeros(d);
            for i in 0..d {
                for j in 0..d {
                    dens[(j, i)] = rho.apply(&self.e_tilde(&n.matrix_unit(&b, i, j))?)?;
                }
            }
            if dens.iter().any(|z| z.norm() > 0.0) {
                out.accumulate(n, &b, &dens);
            }
        }
        Ok(out)
    }
}

pub fn asymptotic_lift_ucp(d: &DilationInstance, horizon: usize, tol: f64) -> Result<CompressedLifting> {
    let compression = Compression::new(d, horizon, tol)?;
    let lift = asymptotic_lift(&d.alpha, horizon, tol)?;
    let l = &lift.lifting;
    let w = lift.window;
    let mut cl = CompressedLifting { compression, lift: lift.clone(), lifting_defect: 0.0, nondegeneracy_defect: 0.0 };
    let reach = cl.compression.report.reach;
    let back = l.beta_power(-(reach as i64))?;
    let forward = d.alpha.power(reach)?;
    for (b, i, j) in l.n.window_units(w) {
        let x = l.n.matrix_unit(&b, i, j);
        let lhs = cl.compression.apply(&cl.e_tilde(&x)?)?;
        let rhs = cl.e_tilde(&l.beta.apply(&x)?)?;
        cl.lifting_defect = cl.lifting_defect.max(lhs.distance(&rhs));
        let ex = l.e.apply(&x)?;
        let rebuilt = forward.apply(&cl.e_tilde(&back.apply(&x)?)?)?;
        cl.nondegeneracy_defect = cl.nondegeneracy_defect.max(ex.distance(&rebuilt));
    }
    let bound = tol.max(1e-9);
    if cl.lifting_defect > bound {
        bail!(Verification, "φ∘Ẽ ≠ Ẽ∘α̃: defect {:.3e}", cl.lifting_defect);
    }
    if cl.nondegeneracy_defect > bound {
        bail!(Verification, "E is not recovered from Ẽ through α^{reach}: defect {:.3e}", cl.nondegeneracy_defect);
    }
    Ok(cl)
}

/// Both sides of `‖ρ∘φⁿ‖ = ‖ρ̄∘αⁿ‖` and `‖ρ∘Ẽ‖ = ‖ρ̄∘E‖`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormTable {
    pub phi_norms: Vec<f64>,
    pub alpha_norms: Vec<f64>,
    pub lift_phi: f64,
    pub lift_alpha: f64,
    pub max_gap: f64,
    /// First `n` with `|‖ρ∘φⁿ‖ − ‖ρ∘Ẽ‖| < tol`.
    pub converged_at: Option<usize>,
    /// Whether the left-hand sides were computed through the Choi matrix of `φ`.
    pub dense_route: bool,
}

pub fn verify_norm_identities(cl: &CompressedLifting, rho: &Functional, n_max: usize, tol: f64) -> Result<NormTable> {
    let c = &cl.compression;
    let rho = c.rho_bar(rho);
    let alpha = &c.instance.alpha;
    let mut phi_norms = Vec::with_capacity(n_max);
    let dense = c.dense()?;
    match &dense {
        Some((phi, blocks)) => {
            let mut cur = c.to_dense_functional(&rho, blocks);
            for _ in 0..n_max {
                cur = phi.predual(&cur)?;
                phi_norms.push(cur.norm());
            }
        }
        None => {
            let mut cur = rho.clone();
            for _ in 0..n_max {
                cur = c.phi_predual(&cur)?;
                phi_norms.push(cur.norm());
            }
        }
    }
    let mut alpha_norms = Vec::with_capacity(n_max);
    let mut cur = rho.clone();
    for _ in 0..n_max {
        cur = alpha.predual_compose(&cur)?;
        alpha_norms.push(cur.norm());
    }
    let e = &cl.lift.lifting.e;
    let structural = e.predual_compose(&rho)?;
    let lift_alpha = structural.norm();
    let reach = structural.support(e.source()).iter().map(|b| b.coord.unsigned_abs() as usize + 1).max().unwrap_or(0);
    let lift_phi = cl.pullback_by_evaluation(&rho, reach.max(cl.lift.window))?.norm();
    let mut max_gap = (lift_phi - lift_alpha).abs();
    for (n, (a, b)) in phi_norms.iter().zip(&alpha_norms).enumerate() {
        let gap = (a - b).abs();
        max_gap = max_gap.max(gap);
        if gap > tol {
            bail!(Verification, "‖ρ∘φⁿ‖ = {a} but ‖ρ̄∘αⁿ‖ = {b} at n = {}", n + 1);
        }
    }
    if (lift_phi - lift_alpha).abs() > tol {
        bail!(Verification, "‖ρ∘Ẽ‖ = {lift_phi} but ‖ρ̄∘E‖ = {lift_alpha}");
    }
    let mut prev = rho.norm();
    for (n, v) in phi_norms.iter().enumerate() {
        if *v > prev + tol || *v < lift_phi - tol {
            bail!(Verification, "‖ρ∘φⁿ‖ is not monotone towards ‖ρ∘Ẽ‖ at n = {}", n + 1);
        }
        prev = *v;
    }
    let converged_at = phi_norms.iter().position(|v| (v - lift_phi).abs() < tol).map(|i| i + 1);
    Ok(NormTable { phi_norms, alpha_norms, lift_phi, lift_alpha, max_gap, converged_at, dense_route: dense.is_some() })
}
