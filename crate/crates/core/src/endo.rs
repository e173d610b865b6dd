//! Kernel chains, limit projections, the automorphic-summand / backward-shift
//! decomposition of surjective endomorphisms, tail algebras and asymptotic lifts.

use std::collections::HashMap;

use serde::Serialize;

use crate::algebra::{AlgebraElement, BlockAlgebra, FinHom};
use crate::error::{bail, Error, Result};
use crate::linalg::{self, CMat};
use crate::morphism::{BlockRule, SourceRef, StructuralMorphism, SummandRule};
use crate::seq::{
    lcm, BlockRef, CentralMask, ComputableAlgebra, Element, EpSeq, Functional, MaskPart, Part, SeqElement, Side, Summand,
};

/// `c_n = ker αⁿ` for `n = 1..=horizon`, checked to increase; for surjective
/// `α` also checks `α(c_{n+1}) = c_n` on masks and on materialized elements.
pub fn kernel_chain(alpha: &StructuralMorphism, horizon: usize, tol: f64) -> Result<Vec<CentralMask>> {
    if horizon == 0 {
        bail!(Precondition, "horizon must be at least 1");
    }
    if alpha.source() != alpha.target() {
        bail!(Shape, "kernel chains need an endomorphism");
    }
    let m = alpha.source();
    let mut chain = Vec::with_capacity(horizon + 1);
    let mut power = alpha.clone();
    for n in 1..=horizon + 1 {
        chain.push(power.kernel_projection());
        if n <= horizon {
            power = alpha.compose(&power)?;
        }
    }
    for n in 0..horizon {
        if !chain[n].leq(&chain[n + 1]) {
            bail!(Internal, "kernel chain decreases at n = {}", n + 1);
        }
    }
    if alpha.is_surjective() {
        for n in 0..horizon {
            let image = alpha.apply(&chain[n + 1].to_element(m))?;
            let expect = chain[n].to_element(m);
            let d = image.distance(&expect);
            if d > tol {
                bail!(Verification, "α(c_{}) differs from c_{} by {d:.3e}", n + 2, n + 1);
            }
            if mask_of_projection(m, &image, tol)? != chain[n] {
                bail!(Verification, "α(c_{}) and c_{} have different supports", n + 2, n + 1);
            }
        }
    }
    chain.truncate(horizon);
    Ok(chain)
}

/// Support mask of an element whose blocks are each (approximately) `0` or `1`.
pub fn mask_of_projection(algebra: &ComputableAlgebra, x: &Element, tol: f64) -> Result<CentralMask> {
    algebra.check_element(x)?;
    let block_mask = |a: &AlgebraElement| -> Result<Vec<bool>> {
        a.blocks()
            .iter()
            .map(|b| {
                let d = b.nrows();
                if linalg::max_abs(b) <= tol {
                    Ok(false)
                } else if linalg::max_abs(&(b - linalg::identity(d))) <= tol {
                    Ok(true)
                } else {
                    bail!(Verification, "element is not a central projection")
                }
            })
            .collect()
    };
    let parts = x
        .parts
        .iter()
        .map(|p| match p {
            Part::Fin(a) => Ok(MaskPart::Fin(block_mask(a)?)),
            Part::Seq(s) => {
                let d = s.data();
                let conv = |v: &[AlgebraElement]| v.iter().map(block_mask).collect::<Result<Vec<_>>>();
                let mut m = EpSeq { left: conv(&d.left)?, lo: d.lo, core: conv(&d.core)?, right: conv(&d.right)? };
                m.normalize(|a, b| a == b);
                Ok(MaskPart::Seq(m))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CentralMask { parts })
}

/// `c = lim c_n` with the index at which the finite summands stabilize.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitProjection {
    pub mask: CentralMask,
    /// First `n` with `c_n = c` on the finite summands, when within the chain.
    pub fin_stabilization: Option<usize>,
    /// Per summand: `Some(true)` when a sequence summand lies entirely in `c`.
    pub all_coordinates: Vec<Option<bool>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Region {
    Exact(i64),
    Right(i64),
    Left(i64),
}

/// Decides whether a block survives every power of `α`: it does iff an
/// infinite chain `b ← t₁ ← t₂ ← …` of referencing targets exists. Periodic
/// regions are translation invariant, so a chain returning to the same
/// residue class without moving toward the core is infinite.
struct OrbitSolver<'a> {
    alpha: &'a StructuralMorphism,
    q: i64,
    regions: Vec<(i64, i64)>,
    memo: HashMap<BlockRef, bool>,
}

impl<'a> OrbitSolver<'a> {
    fn new(alpha: &'a StructuralMorphism) -> Result<Self> {
        alpha.check_index_law()?;
        let q = alpha.period() as i64;
        let m = alpha.source();
        let regions = (0..m.summands().len())
            .map(|j| {
                let (lo, hi) = alpha.periodic_region(j);
                let (tlo, thi) = match &alpha.rules()[j] {
                    SummandRule::Seq(s) => (s.lo, s.hi()),
                    SummandRule::Fin(_) => (lo, hi),
                };
                (lo.min(tlo) - q, hi.max(thi) + q)
            })
            .collect();
        Ok(Self { alpha, q, regions, memo: HashMap::new() })
    }

    fn region(&self, b: &BlockRef) -> Region {
        match self.alpha.source().summands()[b.summand] {
            Summand::Fin { .. } => Region::Exact(0),
            Summand::Seq { side, .. } => {
                let (lo, hi) = self.regions[b.summand];
                if b.coord >= hi {
                    Region::Right(b.coord.rem_euclid(self.q))
                } else if side == Side::TwoSided && b.coord < lo {
                    Region::Left(b.coord.rem_euclid(self.q))
                } else {
                    Region::Exact(b.coord)
                }
            }
        }
    }

    fn alive(&mut self, b: &BlockRef) -> Result<bool> {
        let mut path = Vec::new();
        self.visit(b, &mut path)
    }

    fn visit(&mut self, b: &BlockRef, path: &mut Vec<(BlockRef, Region)>) -> Result<bool> {
        if let Some(&v) = self.memo.get(b) {
            return Ok(v);
        }
        if path.len() > 100_000 {
            bail!(Internal, "orbit search did not terminate");
        }
        let reg = self.region(b);
        let key = |r: &BlockRef, g: &Region| (r.summand, r.block, *g);
        for (k, (pb, pr)) in path.iter().enumerate().rev() {
            if key(pb, pr) != key(b, &reg) {
                continue;
            }
            let same_region_since = |want: fn(&Region) -> bool| path[k..].iter().all(|(_, g)| want(g));
            let repeats = match reg {
                Region::Exact(_) => pb.coord == b.coord,
                Region::Right(_) => b.coord >= pb.coord && same_region_since(|g| matches!(g, Region::Right(_))),
                Region::Left(_) => b.coord <= pb.coord && same_region_since(|g| matches!(g, Region::Left(_))),
            };
            if repeats {
                return Ok(true);
            }
        }
        path.push((*b, reg));
        let mut alive = false;
        for t in self.alpha.referencing_targets(b) {
            if self.visit(&t, path)? {
                alive = true;
                break;
            }
        }
        path.pop();
        self.memo.insert(*b, alive);
        Ok(alive)
    }
}

/// Limit of the kernel chain, computed from the orbit structure of `α` and
/// cross-checked against the supplied chain.
pub fn limit_projection(alpha: &StructuralMorphism, chain: &[CentralMask], tol: f64) -> Result<LimitProjection> {
    let m = alpha.source();
    let mut solver = OrbitSolver::new(alpha)?;
    let q = solver.q;
    let mut parts = Vec::new();
    let mut all = Vec::new();
    for (j, s) in m.summands().iter().enumerate() {
        let nb = s.blocks().num_blocks();
        match s {
            Summand::Fin { .. } => {
                let mut v = Vec::with_capacity(nb);
                for b in 0..nb {
                    v.push(!solver.alive(&BlockRef { summand: j, coord: 0, block: b })?);
                }
                parts.push(MaskPart::Fin(v));
                all.push(None);
            }
            Summand::Seq { side, .. } => {
                let (lo, hi) = solver.regions[j];
                let lo = if *side == Side::OneSided { 1 } else { lo - q };
                let hi = hi + q;
                let mut cache = HashMap::new();
                let mut killed = |n: i64| -> Result<Vec<bool>> {
                    if let Some(v) = cache.get(&n) {
                        return Ok(Vec::clone(v));
                    }
                    let v = (0..nb)
                        .map(|b| solver.alive(&BlockRef { summand: j, coord: n, block: b }).map(|a| !a))
                        .collect::<Result<Vec<_>>>()?;
                    cache.insert(n, v.clone());
                    Ok(v)
                };
                let sampled: Vec<(i64, Vec<bool>)> =
                    (lo - q..hi + 2 * q).filter(|&n| *side == Side::TwoSided || n >= 1).map(|n| killed(n).map(|v| (n, v))).collect::<Result<_>>()?;
                let at: HashMap<i64, Vec<bool>> = sampled.into_iter().collect();
                for n in hi..hi + q {
                    if at[&n] != at[&(n + q)] {
                        bail!(Internal, "limit mask is not periodic beyond coordinate {hi}");
                    }
                }
                if *side == Side::TwoSided {
                    for n in lo - q..lo {
                        if at[&n] != at[&(n + q)] {
                            bail!(Internal, "limit mask is not periodic below coordinate {lo}");
                        }
                    }
                }
                let mut mask = EpSeq::sample(*side, lo, hi, q as usize, q as usize, |n| at[&n].clone());
                mask.normalize(|a, b| a == b);
                let full = mask.left.iter().chain(&mask.core).chain(&mask.right).all(|v| v.iter().all(|x| *x));
                all.push(Some(full));
                parts.push(MaskPart::Seq(mask));
            }
        }
    }
    let mask = CentralMask { parts };
    for (n, c) in chain.iter().enumerate() {
        if !c.leq(&mask) {
            bail!(Internal, "c_{} is not below the limit projection", n + 1);
        }
    }
    let fin_only = |c: &CentralMask| -> Vec<MaskPart> {
        c.parts.iter().filter(|p| matches!(p, MaskPart::Fin(_))).cloned().collect()
    };
    let fin_stabilization = chain.iter().position(|c| fin_only(c) == fin_only(&mask)).map(|n| n + 1);
    if alpha.is_surjective() {
        let e = mask.to_element(m);
        let d = alpha.apply(&e)?.distance(&e);
        if d > tol {
            bail!(Verification, "α(c) differs from c by {d:.3e}");
        }
    }
    Ok(LimitProjection { mask, fin_stabilization, all_coordinates: all })
}

/// Bounds `(lo, hi)` outside of which a sequence summand of the source of `α`
/// is governed by periodic templates, padded by one period.
fn seq_region(alpha: &StructuralMorphism, j: usize, q: i64) -> (i64, i64) {
    let (lo, hi) = alpha.periodic_region(j);
    let (tlo, thi) = match alpha.rules().get(j) {
        Some(SummandRule::Seq(s)) => (s.lo, s.hi()),
        _ => (lo, hi),
    };
    (lo.min(tlo) - q, hi.max(thi) + q)
}

/// The corner `qM` of a central projection `q` that is constant along every
/// sequence summand, with its block correspondence to `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct Corner {
    pub algebra: ComputableAlgebra,
    /// `(summand, block)` of the corner ↦ `(summand, block)` of `M`.
    pub parent: Vec<Vec<(usize, usize)>>,
}

impl Corner {
    pub fn new(m: &ComputableAlgebra, keep: &CentralMask) -> Result<Self> {
        let mut summands = Vec::new();
        let mut parent = Vec::new();
        for (j, (s, part)) in m.summands().iter().zip(&keep.parts).enumerate() {
            let alive: Vec<bool> = match part {
                MaskPart::Fin(v) => v.clone(),
                MaskPart::Seq(q) => {
                    let v = q.right[0].clone();
                    if q.left.iter().chain(&q.core).chain(&q.right).any(|x| *x != v) {
                        bail!(Precondition, "projection varies along sequence summand {j}; its corner is not a sequence algebra");
                    }
                    v
                }
            };
            let kept: Vec<usize> = (0..alive.len()).filter(|&b| alive[b]).collect();
            if kept.is_empty() {
                continue;
            }
            let dims: Vec<usize> = kept.iter().map(|&b| s.blocks().dims()[b]).collect();
            summands.push(match s {
                Summand::Fin { .. } => Summand::Fin { dims },
                Summand::Seq { side, .. } => Summand::Seq { base: dims, side: *side },
            });
            parent.push(kept.iter().map(|&b| (j, b)).collect());
        }
        Ok(Self { algebra: ComputableAlgebra::new(summands)?, parent })
    }

    pub fn from_parent(&self, j: usize, b: usize) -> Option<(usize, usize)> {
        self.parent
            .iter()
            .enumerate()
            .find_map(|(i, v)| v.iter().position(|&x| x == (j, b)).map(|nb| (i, nb)))
    }

    fn remap(&self, s: SourceRef) -> Option<SourceRef> {
        let r = s.block_ref();
        let (i, b) = self.from_parent(r.summand, r.block)?;
        Some(match s {
            SourceRef::Fin { .. } => SourceRef::Fin { summand: i, block: b },
            SourceRef::Seq { coord, stride, .. } => SourceRef::Seq { summand: i, coord, block: b, stride },
        })
    }

    /// Restrict an endomorphism of `M` that leaves the corner invariant.
    pub fn restrict(&self, alpha: &StructuralMorphism) -> Result<StructuralMorphism> {
        let mut rules = Vec::with_capacity(self.parent.len());
        let mut missing = false;
        let remap_all = |rs: &Vec<BlockRule>, kept: &[usize], missing: &mut bool| -> Vec<BlockRule> {
            kept.iter()
                .map(|&b| {
                    let r = &rs[b];
                    let sources = r
                        .sources
                        .iter()
                        .map(|s| {
                            self.remap(*s).unwrap_or_else(|| {
                                *missing = true;
                                *s
                            })
                        })
                        .collect();
                    BlockRule { sources, unitary: r.unitary.clone() }
                })
                .collect()
        };
        for v in &self.parent {
            let j = v[0].0;
            let kept: Vec<usize> = v.iter().map(|&(_, b)| b).collect();
            rules.push(match &alpha.rules()[j] {
                SummandRule::Fin(rs) => SummandRule::Fin(remap_all(rs, &kept, &mut missing)),
                SummandRule::Seq(s) => {
                    let mut out = Vec::new();
                    for part in [&s.left, &s.core, &s.right] {
                        out.push(part.iter().map(|rs| remap_all(rs, &kept, &mut missing)).collect::<Vec<_>>());
                    }
                    let right = out.pop().unwrap();
                    let core = out.pop().unwrap();
                    let left = out.pop().unwrap();
                    SummandRule::Seq(EpSeq { left, lo: s.lo, core, right })
                }
            });
        }
        if missing {
            bail!(Internal, "the endomorphism does not leave the corner invariant");
        }
        StructuralMorphism::new(self.algebra.clone(), self.algebra.clone(), rules)
    }
}

/// `P = (1 − c)M` and `β = α|_P` for surjective `α`.
pub fn automorphic_summand(alpha: &StructuralMorphism, limit: &LimitProjection) -> Result<(Corner, StructuralMorphism)> {
    if !alpha.is_surjective() {
        bail!(Precondition, "α is not surjective; restrict it to its tail algebra first");
    }
    let corner = Corner::new(alpha.source(), &limit.mask.complement())?;
    let beta = corner.restrict(alpha)?;
    if !beta.is_isomorphism() {
        bail!(Internal, "α restricted to (1 − c)M is not an automorphism");
    }
    Ok((corner, beta))
}

/// Max distance between `f` and `g` on the matrix units of a window, with the
/// worst unit.
pub fn max_defect_on_units(
    f: &StructuralMorphism,
    g: &StructuralMorphism,
    w: usize,
) -> Result<(f64, Option<(BlockRef, usize, usize)>)> {
    if f.source() != g.source() || f.target() != g.target() {
        bail!(Shape, "morphisms have different source or target");
    }
    let mut worst = (0.0, None);
    for u in f.source().window_units(w) {
        let x = f.source().matrix_unit(&u.0, u.1, u.2);
        let d = f.apply(&x)?.distance(&g.apply(&x)?);
        if d > worst.0 || worst.1.is_none() {
            worst = (d.max(worst.0), if d >= worst.0 { Some(u) } else { worst.1 });
        }
    }
    Ok(worst)
}

/// A window covering preperiod + 2·period of every morphism involved.
pub fn spanning_window(fs: &[&StructuralMorphism]) -> usize {
    fs.iter().map(|f| f.min_window()).max().unwrap_or(0).max(3)
}

/// Output of the decomposition of a surjective endomorphism `α` of `M` as
/// `θ∘(β ⊕ σ₊)∘θ⁻¹` on `P ⊕ Seq₊(K)`.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub chain: Vec<CentralMask>,
    pub limit: LimitProjection,
    pub p: Corner,
    pub beta: StructuralMorphism,
    /// Blocks of `ker α`, in the order of the blocks of `K`.
    pub kernel_blocks: Vec<BlockRef>,
    pub k: Option<BlockAlgebra>,
    /// `P ⊕ Seq₊(K)` (the sequence summand is omitted when `K = 0`).
    pub domain: ComputableAlgebra,
    pub model: StructuralMorphism,
    pub theta: StructuralMorphism,
    pub window: usize,
    pub conjugacy_defect: f64,
}

/// Multiples of the period of `α` tried when inferring the rules of `θ`.
const THETA_PERIOD_MULTIPLES: i64 = 16;

fn inference_to_precondition(e: Error) -> Error {
    match e {
        Error::Internal(msg) => Error::Precondition(format!("θ is not eventually periodic in this model: {msg}")),
        other => other,
    }
}

/// `β ⊕ σ₊` on `P ⊕ Seq₊(K)`.
pub fn shift_model(beta: &StructuralMorphism, k: Option<&BlockAlgebra>) -> Result<StructuralMorphism> {
    let mut parts = vec![beta.clone()];
    if let Some(k) = k {
        parts.push(StructuralMorphism::shift(k, Side::OneSided, 1)?);
    }
    StructuralMorphism::direct_sum(&parts)
}

pub fn shift_decomposition(alpha: &StructuralMorphism, horizon: usize, tol: f64) -> Result<Decomposition> {
    if !alpha.is_surjective() {
        bail!(Precondition, "α is not surjective");
    }
    let m = alpha.source().clone();
    let chain = kernel_chain(alpha, horizon, tol)?;
    let limit = limit_projection(alpha, &chain, tol)?;
    let (p, beta) = automorphic_summand(alpha, &limit)?;
    let c1 = alpha.kernel_projection();
    let mut kernel_blocks = Vec::new();
    for (j, part) in c1.parts.iter().enumerate() {
        match part {
            MaskPart::Fin(v) => {
                kernel_blocks.extend(v.iter().enumerate().filter(|(_, k)| **k).map(|(b, _)| BlockRef { summand: j, coord: 0, block: b }))
            }
            MaskPart::Seq(s) => {
                if s.left.iter().chain(&s.right).any(|v| v.iter().any(|k| *k)) {
                    bail!(Precondition, "ker α is infinite-dimensional on summand {j}");
                }
                for (i, v) in s.core.iter().enumerate() {
                    for (b, k) in v.iter().enumerate() {
                        if *k {
                            kernel_blocks.push(BlockRef { summand: j, coord: s.lo + i as i64, block: b });
                        }
                    }
                }
            }
        }
    }
    kernel_blocks.sort();
    let k = if kernel_blocks.is_empty() {
        None
    } else {
        Some(BlockAlgebra::new(kernel_blocks.iter().map(|b| m.block_dim(b)).collect())?)
    };
    let domain = match &k {
        Some(k) => p.algebra.direct_sum(&ComputableAlgebra::seq(k, Side::OneSided)),
        None => p.algebra.clone(),
    };
    let k_summand = p.algebra.summands().len();
    let in_c = |b: &BlockRef| limit.mask.contains(b);
    let rule_for = |t: &BlockRef| -> Result<BlockRule> {
        if !in_c(t) {
            let (i, nb) = p.from_parent(t.summand, t.block).expect("block outside c lies in P");
            let src = match p.algebra.summands()[i] {
                Summand::Fin { .. } => SourceRef::Fin { summand: i, block: nb },
                Summand::Seq { .. } => SourceRef::Seq { summand: i, coord: t.coord, block: nb, stride: 0 },
            };
            return Ok(BlockRule { sources: vec![src], unitary: linalg::identity(m.block_dim(t)) });
        }
        let mut b = *t;
        let mut w = linalg::identity(m.block_dim(t));
        let mut level = 1i64;
        loop {
            let succ = alpha.referencing_targets(&b);
            match succ.as_slice() {
                [] => break,
                [s] => {
                    w = &alpha.rule_at(s).unitary * w;
                    b = *s;
                    level += 1;
                }
                _ => bail!(Internal, "surjective α references block {b:?} twice"),
            }
            if level > 100_000 {
                bail!(Internal, "orbit of {t:?} does not reach ker α");
            }
        }
        let i = kernel_blocks.binary_search(&b).map_err(|_| Error::Internal(format!("orbit of {t:?} ends outside ker α")))?;
        Ok(BlockRule {
            sources: vec![SourceRef::Seq { summand: k_summand, coord: level, block: i, stride: 0 }],
            unitary: w.adjoint(),
        })
    };
    let q = alpha.period() as i64;
    let mut rules = Vec::with_capacity(m.summands().len());
    for (j, s) in m.summands().iter().enumerate() {
        let nb = s.blocks().num_blocks();
        match s {
            Summand::Fin { .. } => rules.push(SummandRule::Fin(
                (0..nb).map(|b| rule_for(&BlockRef { summand: j, coord: 0, block: b })).collect::<Result<_>>()?,
            )),
            Summand::Seq { side, .. } => {
                let (lo, hi) = seq_region(alpha, j, q);
                let failure = std::cell::RefCell::new(None);
                let concrete = |n: i64| -> Vec<BlockRule> {
                    (0..nb)
                        .map(|b| rule_for(&BlockRef { summand: j, coord: n, block: b }))
                        .collect::<Result<Vec<_>>>()
                        .unwrap_or_else(|e| {
                            failure.borrow_mut().get_or_insert(e);
                            Vec::new()
                        })
                };
                // Accumulated unitaries along orbits can repeat with a multiple
                // of the period of α.
                let mut found = None;
                for mult in 1..=THETA_PERIOD_MULTIPLES {
                    let p = q * mult;
                    let seq = crate::morphism::infer_rules(*side, (lo - p, hi + p, p as usize, p as usize), &concrete);
                    if let Some(e) = failure.borrow_mut().take() {
                        return Err(e);
                    }
                    match seq {
                        Ok(seq) => {
                            found = Some(Ok(seq));
                            break;
                        }
                        Err(e) => found = Some(Err(e)),
                    }
                }
                let seq = found.expect("at least one period tried").map_err(inference_to_precondition)?;
                rules.push(SummandRule::Seq(seq));
            }
        }
    }
    let theta = StructuralMorphism::new(domain.clone(), m.clone(), rules)?;
    if !theta.is_isomorphism() {
        bail!(Internal, "θ is not an isomorphism");
    }
    let model = shift_model(&beta, k.as_ref())?;
    let lhs = theta.compose(&model)?;
    let rhs = alpha.compose(&theta)?;
    let window = spanning_window(&[alpha, &theta, &model, &lhs, &rhs]);
    let (defect, witness) = max_defect_on_units(&lhs, &rhs, window)?;
    if defect > tol.max(1e-9) {
        bail!(Verification, "θ∘(β⊕σ₊) ≠ α∘θ: defect {defect:.3e} at unit {witness:?}");
    }
    check_injective_on_window(&theta, window)?;
    Ok(Decomposition { chain, limit, p, beta, kernel_blocks, k, domain, model, theta, window, conjugacy_defect: defect })
}

/// Dense-oracle check: the images of windowed matrix units that the window
/// captures completely are linearly independent.
pub fn check_injective_on_window(f: &StructuralMorphism, w: usize) -> Result<()> {
    let w = w.max(f.min_window());
    let o = f.dense_oracle(w)?;
    let mut cols = Vec::new();
    for (k, (r, a, b)) in o.source_units.iter().enumerate() {
        let y = f.apply(&f.source().matrix_unit(r, *a, *b))?;
        let Some(total) = finite_frobenius_sq(&y) else { continue };
        let seen: f64 = o.matrix.column(k).iter().map(|z| z.norm_sqr()).sum();
        if (total - seen).abs() <= 1e-9 * total.max(1.0) {
            cols.push(k);
        }
    }
    let sub = CMat::from_fn(o.matrix.nrows(), cols.len(), |i, j| o.matrix[(i, cols[j])]);
    let rank = linalg::sparse_rank(&sub, 1e-8);
    if rank != cols.len() {
        bail!(Verification, "dense oracle has rank {rank} on {} captured unit images", cols.len());
    }
    Ok(())
}

/// Squared Frobenius norm summed over all coordinates, when finitely supported.
fn finite_frobenius_sq(y: &Element) -> Option<f64> {
    let frob = |a: &AlgebraElement| a.blocks().iter().map(|b| b.iter().map(|z| z.norm_sqr()).sum::<f64>()).sum::<f64>();
    let mut total = 0.0;
    for p in &y.parts {
        match p {
            Part::Fin(a) => total += frob(a),
            Part::Seq(s) => {
                let d = s.data();
                if d.left.iter().chain(&d.right).any(|a| !a.is_zero(0.0)) {
                    return None;
                }
                total += d.core.iter().map(frob).sum::<f64>();
            }
        }
    }
    Some(total)
}

/// A preimage of a finitely supported `y` under `j`, read off the diagonal
/// blocks of `U* y_t U`; fails when `y` is not in the range of `j`.
pub fn preimage(j: &StructuralMorphism, y: &Element, tol: f64) -> Result<Element> {
    j.target().check_element(y)?;
    let mut found: HashMap<BlockRef, CMat> = HashMap::new();
    for (i, part) in y.parts.iter().enumerate() {
        let targets: Vec<BlockRef> = match part {
            Part::Fin(a) => (0..a.blocks().len()).map(|b| BlockRef { summand: i, coord: 0, block: b }).collect(),
            Part::Seq(s) => {
                let d = s.data();
                if d.left.iter().chain(&d.right).any(|a| !a.is_zero(0.0)) {
                    bail!(Precondition, "preimages are computed for finitely supported elements");
                }
                let nb = s.base().num_blocks();
                (d.lo..d.hi()).flat_map(|n| (0..nb).map(move |b| BlockRef { summand: i, coord: n, block: b })).collect()
            }
        };
        for t in targets {
            let v = part.block_value(t.coord, t.block);
            if v.iter().all(|z| z.norm() == 0.0) {
                continue;
            }
            let rule = j.rule_at(&t);
            let m = rule.unitary.adjoint() * v * &rule.unitary;
            let mut off = 0;
            for s in &rule.sources {
                let r = s.block_ref();
                let d = j.source().block_dim(&r);
                found.entry(r).or_insert_with(|| m.view((off, off), (d, d)).into_owned());
                off += d;
            }
        }
    }
    let mut parts = Vec::with_capacity(j.source().summands().len());
    for (i, s) in j.source().summands().iter().enumerate() {
        let base = s.blocks();
        let block_at = |coord: i64| -> AlgebraElement {
            AlgebraElement::new(
                base.dims()
                    .iter()
                    .enumerate()
                    .map(|(b, &d)| {
                        found.get(&BlockRef { summand: i, coord, block: b }).cloned().unwrap_or_else(|| linalg::zeros(d))
                    })
                    .collect(),
            )
        };
        parts.push(match s {
            Summand::Fin { .. } => Part::Fin(block_at(0)),
            Summand::Seq { side, .. } => {
                let coords: Vec<i64> = found.keys().filter(|r| r.summand == i).map(|r| r.coord).collect();
                let one = if *side == Side::OneSided { 1 } else { 0 };
                let lo = coords.iter().copied().min().unwrap_or(one).min(one);
                let hi = coords.iter().copied().max().unwrap_or(one).max(one);
                let lo = if *side == Side::OneSided { 1 } else { lo };
                let zero = base.zero();
                let left = if *side == Side::OneSided { vec![] } else { vec![zero.clone()] };
                let data = EpSeq { left, lo, core: (lo..=hi).map(block_at).collect(), right: vec![zero] };
                Part::Seq(SeqElement::from_data(&base, data)?)
            }
        });
    }
    let x = Element::new(parts);
    let back = j.apply(&x)?;
    let d = back.distance(y);
    if d > tol {
        bail!(Verification, "element is not in the range: residual {d:.3e}");
    }
    Ok(x)
}

/// `M∞ = ∩ αⁿ(M)` realized as a corner `Q = (1 − c_N)M` of the source with
/// the injective embedding `ι = αᴺ|_Q` and the surjective restriction `α∞`
/// determined by `ι∘α∞ = α∘ι`.
#[derive(Debug, Clone)]
pub struct TailAlgebra {
    pub corner: Corner,
    pub embedding: StructuralMorphism,
    pub restriction: StructuralMorphism,
    /// First `N ≥ 0` with `c_N = c_{N+1}` on the finite summands (`c_0 = 0`).
    pub stabilization: usize,
}

impl TailAlgebra {
    pub fn algebra(&self) -> &ComputableAlgebra {
        &self.corner.algebra
    }
}

fn summand_mask(m: &ComputableAlgebra, fin: bool) -> CentralMask {
    let mut mask = CentralMask::zero(m);
    for (part, s) in mask.parts.iter_mut().zip(m.summands()) {
        let keep = matches!(s, Summand::Fin { .. }) == fin;
        let nb = s.blocks().num_blocks();
        *part = match part {
            MaskPart::Fin(_) => MaskPart::Fin(vec![keep; nb]),
            MaskPart::Seq(q) => MaskPart::Seq(EpSeq::constant(q.side(), vec![keep; nb])),
        };
    }
    mask
}

pub fn tail_algebra(alpha: &StructuralMorphism, tol: f64) -> Result<TailAlgebra> {
    let m = alpha.source().clone();
    if alpha.target() != &m {
        bail!(Shape, "α must be an endomorphism");
    }
    let unsupported = |e: Error| match e {
        Error::Internal(_) => Error::Precondition("tail algebras are computed when α maps finite summands and sequence summands separately".into()),
        other => other,
    };
    let fin = Corner::new(&m, &summand_mask(&m, true))?;
    let seq = Corner::new(&m, &summand_mask(&m, false))?;
    let alpha_f = fin.restrict(alpha).map_err(unsupported)?;
    let alpha_s = seq.restrict(alpha).map_err(unsupported)?;
    if !alpha_s.is_surjective() {
        bail!(Precondition, "α is not surjective on the sequence summands; their tail algebra is outside the model");
    }
    let fin_blocks: usize = fin.algebra.summands().iter().map(|s| s.blocks().num_blocks()).sum();
    let mut n = 0;
    let mut pw = StructuralMorphism::identity(&fin.algebra);
    let mut next = alpha_f.clone();
    while pw.kernel_projection() != next.kernel_projection() {
        n += 1;
        if n > fin_blocks + 1 {
            bail!(Internal, "kernel chain on the finite summands did not stabilize within {fin_blocks} steps");
        }
        pw = next;
        next = alpha_f.compose(&pw)?;
    }
    let c_n = alpha.power(n)?.kernel_projection();
    let mut keep = c_n.complement();
    for (part, s) in keep.parts.iter_mut().zip(m.summands()) {
        if let (MaskPart::Seq(q), Summand::Seq { .. }) = (&*part, s) {
            *part = MaskPart::Seq(EpSeq::constant(q.side(), vec![true; s.blocks().num_blocks()]));
        }
    }
    let corner = Corner::new(&m, &keep)?;
    let power = alpha.power(n)?;
    let identity = StructuralMorphism::identity(&m);
    let mut rules = Vec::with_capacity(m.summands().len());
    let missing = std::cell::Cell::new(false);
    for (j, s) in m.summands().iter().enumerate() {
        let src = match s {
            Summand::Fin { .. } => &power.rules()[j],
            Summand::Seq { .. } => &identity.rules()[j],
        };
        rules.push(crate::morphism::remap_rule(src, &|r: SourceRef| {
            corner.remap(r).unwrap_or_else(|| {
                missing.set(true);
                r
            })
        }));
    }
    if missing.get() {
        bail!(Internal, "αᴺ references blocks it kills");
    }
    let embedding = StructuralMorphism::new(corner.algebra.clone(), m.clone(), rules)?;
    let restriction = corner.restrict(alpha)?;
    if !embedding.is_injective() {
        bail!(Internal, "tail embedding is not injective");
    }
    if !restriction.is_surjective() {
        bail!(Internal, "α restricted to its tail algebra is not surjective");
    }
    let lhs = embedding.compose(&restriction)?;
    let rhs = alpha.compose(&embedding)?;
    let (defect, witness) = max_defect_on_units(&lhs, &rhs, spanning_window(&[&lhs, &rhs]))?;
    if defect > tol {
        bail!(Verification, "ι∘α∞ ≠ α∘ι: defect {defect:.3e} at unit {witness:?}");
    }
    Ok(TailAlgebra { corner, embedding, restriction, stabilization: n })
}

/// A lifting `(N, β, E)` of `α`: `β` an automorphism of `N` and
/// `E∘β = α∘E`.
#[derive(Debug, Clone)]
pub struct Lifting {
    pub n: ComputableAlgebra,
    pub beta: StructuralMorphism,
    pub e: StructuralMorphism,
    pub target: StructuralMorphism,
}

impl Lifting {
    pub fn new(n: ComputableAlgebra, beta: StructuralMorphism, e: StructuralMorphism, target: StructuralMorphism) -> Result<Self> {
        if beta.source() != &n || beta.target() != &n || e.source() != &n || e.target() != target.source() {
            bail!(Shape, "lifting data do not fit together");
        }
        if !beta.is_isomorphism() {
            bail!(Precondition, "β is not an automorphism");
        }
        Ok(Self { n, beta, e, target })
    }

    pub fn window(&self) -> usize {
        spanning_window(&[&self.beta, &self.e, &self.target])
    }

    /// Max defect of `E∘β = α∘E` on the window units.
    pub fn lifting_defect(&self) -> Result<f64> {
        let lhs = self.e.compose(&self.beta)?;
        let rhs = self.target.compose(&self.e)?;
        Ok(max_defect_on_units(&lhs, &rhs, spanning_window(&[&lhs, &rhs, &self.beta, &self.e]))?.0)
    }

    /// `β^k` for any integer `k`.
    pub fn beta_power(&self, k: i64) -> Result<StructuralMorphism> {
        if k >= 0 {
            self.beta.power(k as usize)
        } else {
            self.beta.inverse()?.power(k.unsigned_abs() as usize)
        }
    }

    /// Window blocks `B` of `N` with `E(β^k(1_B)) = 0` for every `|k| ≤ reach`.
    pub fn degenerate_blocks(&self, w: usize, reach: usize, tol: f64) -> Result<Vec<BlockRef>> {
        let powers: Vec<StructuralMorphism> =
            (-(reach as i64)..=reach as i64).map(|k| self.e.compose(&self.beta_power(k)?)).collect::<Result<_>>()?;
        let mut out = Vec::new();
        for b in self.n.window_blocks(w) {
            let one = self.n.block_identity(&b);
            let mut alive = false;
            for f in &powers {
                if !f.apply(&one)?.is_zero(tol) {
                    alive = true;
                    break;
                }
            }
            if !alive {
                out.push(b);
            }
        }
        Ok(out)
    }
}

/// The asymptotic lift `(P ⊕ Seq_ℤ(K), β ⊕ σ, ι∘θ∘(id ⊕ positive part))`
/// with the intermediate data used to build and check it.
#[derive(Debug, Clone)]
pub struct AsymptoticLift {
    pub lifting: Lifting,
    pub tail: TailAlgebra,
    pub decomposition: Decomposition,
    pub window: usize,
    pub lifting_defect: f64,
    /// Largest residual of the explicit preimages proving `E(N) = M∞`.
    pub range_defect: f64,
}

pub fn asymptotic_lift(alpha: &StructuralMorphism, horizon: usize, tol: f64) -> Result<AsymptoticLift> {
    let tail = tail_algebra(alpha, tol)?;
    let d = shift_decomposition(&tail.restriction, horizon, tol)?;
    let p_id = StructuralMorphism::identity(&d.p.algebra);
    let (n, beta, cut) = match &d.k {
        Some(k) => (
            d.p.algebra.direct_sum(&ComputableAlgebra::seq(k, Side::TwoSided)),
            StructuralMorphism::direct_sum(&[d.beta.clone(), StructuralMorphism::shift(k, Side::TwoSided, 1)?])?,
            StructuralMorphism::direct_sum(&[p_id, StructuralMorphism::positive_part(k)?])?,
        ),
        None => (d.p.algebra.clone(), d.beta.clone(), p_id),
    };
    let e = tail.embedding.compose(&d.theta.compose(&cut)?)?;
    let lifting = Lifting::new(n, beta, e, alpha.clone())?;
    let lifting_defect = lifting.lifting_defect()?;
    if lifting_defect > tol.max(1e-9) {
        bail!(Verification, "E∘β ≠ α∘E: defect {lifting_defect:.3e}");
    }
    let window = lifting.window().max(d.window);
    let range_tol = tol.max(1e-10);
    let mut range_defect: f64 = 0.0;
    for (r, a, b) in tail.algebra().window_units(window) {
        let y = tail.embedding.apply(&tail.algebra().matrix_unit(&r, a, b))?;
        let x = preimage(&lifting.e, &y, range_tol)?;
        range_defect = range_defect.max(lifting.e.apply(&x)?.distance(&y));
    }
    for (r, a, b) in lifting.n.window_units(window) {
        let y = lifting.e.apply(&lifting.n.matrix_unit(&r, a, b))?;
        let x = preimage(&tail.embedding, &y, range_tol)?;
        range_defect = range_defect.max(tail.embedding.apply(&x)?.distance(&y));
    }
    let degenerate = lifting.degenerate_blocks(window, 2 * window, tol)?;
    if let Some(b) = degenerate.first() {
        bail!(Verification, "lift is degenerate at block {b:?}");
    }
    Ok(AsymptoticLift { lifting, tail, decomposition: d, window, lifting_defect, range_defect })
}

/// `E(N) ⊆ αⁿ(M)` for `n ≤ horizon`, checked by explicit preimages of the
/// images of window units.
pub fn check_range_containment(l: &Lifting, horizon: usize, w: usize, tol: f64) -> Result<()> {
    let mut pw = l.target.clone();
    for n in 1..=horizon {
        for (r, a, b) in l.n.window_units(w) {
            let y = l.e.apply(&l.n.matrix_unit(&r, a, b))?;
            preimage(&pw, &y, tol).map_err(|e| match e {
                Error::Verification(m) => Error::Verification(format!("E({r:?}) is not in α^{n}(M): {m}")),
                other => other,
            })?;
        }
        pw = l.target.compose(&pw)?;
    }
    Ok(())
}

impl Corner {
    /// `f` restricted to the corner of its source; fails when a rule of `f`
    /// reads a block outside the corner.
    pub fn precompose(&self, f: &StructuralMorphism) -> Result<StructuralMorphism> {
        let missing = std::cell::Cell::new(false);
        let rules = f
            .rules()
            .iter()
            .map(|r| {
                crate::morphism::remap_rule(r, &|s: SourceRef| {
                    self.remap(s).unwrap_or_else(|| {
                        missing.set(true);
                        s
                    })
                })
            })
            .collect();
        if missing.get() {
            bail!(Precondition, "the map reads blocks outside the corner");
        }
        StructuralMorphism::new(self.algebra.clone(), f.target().clone(), rules)
    }
}

/// A nondegenerate lifting obtained by cutting away the degenerate ideal `cN`.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub lifting: Lifting,
    pub degenerate: CentralMask,
    pub corner: Corner,
}

pub fn nondegenerate_reduction(l: &Lifting, window: usize, tol: f64) -> Result<Reduction> {
    let min = l.window();
    if window < min {
        bail!(Precondition, "window {window} is below the minimum {min} required by the data periods");
    }
    let degenerate = l.degenerate_blocks(window, 2 * window, tol)?;
    let mut c = CentralMask::zero(&l.n);
    for (j, (part, s)) in c.parts.iter_mut().zip(l.n.summands()).enumerate() {
        let nb = s.blocks().num_blocks();
        let mut v = vec![false; nb];
        match s {
            Summand::Fin { .. } => {
                for r in degenerate.iter().filter(|r| r.summand == j) {
                    v[r.block] = true;
                }
                *part = MaskPart::Fin(v);
            }
            Summand::Seq { side, .. } => {
                let coords = crate::seq::window_range(*side, window).count();
                for (b, slot) in v.iter_mut().enumerate() {
                    let hits = degenerate.iter().filter(|r| r.summand == j && r.block == b).count();
                    if hits != 0 && hits != coords {
                        bail!(Precondition, "degenerate coordinates of summand {j} block {b} do not form a full orbit");
                    }
                    *slot = hits == coords;
                }
                *part = MaskPart::Seq(EpSeq::constant(*side, v));
            }
        }
    }
    let image = l.beta.apply(&c.to_element(&l.n))?;
    if mask_of_projection(&l.n, &image, tol)? != c {
        bail!(Verification, "the degenerate projection is not β-invariant");
    }
    let corner = Corner::new(&l.n, &c.complement())?;
    let beta = corner.restrict(&l.beta)?;
    let e = corner.precompose(&l.e)?;
    let m = l.target.source();
    if e.apply(&corner.algebra.identity())?.distance(&m.identity()) > tol {
        bail!(Verification, "reduced E is not unital");
    }
    let lifting = Lifting::new(corner.algebra.clone(), beta, e, l.target.clone())?;
    Ok(Reduction { lifting, degenerate: c, corner })
}

/// `‖ρ∘αⁿ‖` for `n = 1..=n_max` against `‖ρ∘E‖`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub norms: Vec<f64>,
    pub limit: f64,
    pub converged_at: Option<usize>,
}

pub fn convergence_table(
    alpha: &StructuralMorphism,
    e: &StructuralMorphism,
    rho: &Functional,
    n_max: usize,
    tol: f64,
) -> Result<ConvergenceTable> {
    let limit = e.predual_compose(rho)?.norm();
    let mut norms = Vec::with_capacity(n_max);
    let mut cur = rho.clone();
    let mut prev = rho.norm();
    for n in 1..=n_max {
        cur = alpha.predual_compose(&cur)?;
        let v = cur.norm();
        if v > prev + tol {
            bail!(Verification, "‖ρ∘αⁿ‖ increased at n = {n}: {prev} → {v}");
        }
        if v < limit - tol {
            bail!(Verification, "‖ρ∘αⁿ‖ = {v} fell below ‖ρ∘E‖ = {limit} at n = {n}");
        }
        norms.push(v);
        prev = v;
    }
    let converged_at = norms.iter().position(|v| (v - limit).abs() < tol).map(|i| i + 1);
    Ok(ConvergenceTable { norms, limit, converged_at })
}

/// The scalar lifting `(ℂ, id, t ↦ t·1)`; its range is `ℂ1`.
pub fn scalar_lift(alpha: &StructuralMorphism) -> Result<Lifting> {
    let m = alpha.source().clone();
    let c = ComputableAlgebra::fin(&BlockAlgebra::new(vec![1])?);
    let one = BlockRule { sources: vec![SourceRef::Fin { summand: 0, block: 0 }], unitary: linalg::identity(1) };
    let rules = m
        .summands()
        .iter()
        .map(|s| {
            let rule_for = |d: usize| BlockRule { sources: vec![one.sources[0]; d], unitary: linalg::identity(d) };
            let dims = s.blocks().dims().to_vec();
            match s {
                Summand::Fin { .. } => SummandRule::Fin(dims.iter().map(|&d| rule_for(d)).collect()),
                Summand::Seq { side, .. } => SummandRule::Seq(EpSeq::constant(*side, dims.iter().map(|&d| rule_for(d)).collect())),
            }
        })
        .collect();
    let e = StructuralMorphism::new(c.clone(), m, rules)?;
    Lifting::new(c.clone(), StructuralMorphism::identity(&c), e, alpha.clone())
}

/// A functional separating the scalar lift from the asymptotic lift: a
/// random `ρ` shifted to `ρ(1) = 0` with `‖ρ∘E‖` bounded away from zero.
/// `None` when no candidate works, which is expected when `M∞ = ℂ1`.
pub fn violating_functional<R: rand::Rng + ?Sized>(
    lift: &AsymptoticLift,
    rng: &mut R,
    attempts: usize,
    tol: f64,
) -> Result<Option<Functional>> {
    let m = lift.lifting.target.source();
    let shrunk = scalar_lift(&lift.lifting.target)?;
    let b = m.window_blocks(1)[0];
    let d = m.block_dim(&b);
    for _ in 0..attempts {
        let mut rho = Functional::random(m, rng, lift.window.max(2));
        let r1 = rho.apply(&m.identity())?;
        rho.accumulate(m, &b, &linalg::identity(d).map(|z| -z * r1 / d as f64));
        let seen = shrunk.e.predual_compose(&rho)?.norm();
        let limit = lift.lifting.e.predual_compose(&rho)?.norm();
        if seen <= tol && limit > 1e-6 {
            return Ok(Some(rho));
        }
    }
    Ok(None)
}

fn support_blocks(alg: &ComputableAlgebra, x: &Element, tol: f64) -> Vec<BlockRef> {
    let mut out = Vec::new();
    for (i, part) in x.parts.iter().enumerate() {
        let nb = alg.summands()[i].blocks().num_blocks();
        let coords: Vec<i64> = match part {
            Part::Fin(_) => vec![0],
            Part::Seq(s) => (s.data().lo..s.data().hi()).collect(),
        };
        for n in coords {
            for b in 0..nb {
                if part.block_value(n, b).iter().any(|z| z.norm() > tol) {
                    out.push(BlockRef { summand: i, coord: n, block: b });
                }
            }
        }
    }
    out
}

/// The isomorphism `Φ = h2⁻¹∘h1` between the sources of two injective maps
/// with the same range, assuming `Φ` maps blocks to blocks.
pub fn recover_isomorphism(h1: &StructuralMorphism, h2: &StructuralMorphism, tol: f64) -> Result<StructuralMorphism> {
    let d1 = h1.source();
    let d2 = h2.source();
    let phi_of = |x: &Element| -> Result<Element> { preimage(h2, &h1.apply(x)?, tol) };
    let rule_for = |t: &BlockRef| -> Result<BlockRule> {
        let back = preimage(h1, &h2.apply(&d2.block_identity(t))?, tol)?;
        let s = match support_blocks(d1, &back, 1e-8).as_slice() {
            [s] => *s,
            other => bail!(Precondition, "block {t:?} does not come from a single block: {other:?}"),
        };
        let d = d1.block_dim(&s);
        if d != d2.block_dim(t) {
            bail!(Internal, "block dimensions disagree between {s:?} and {t:?}");
        }
        let e00 = phi_of(&d1.matrix_unit(&s, 0, 0))?.block_value(t);
        let u0 = linalg::range_basis(&e00, 0.5).column(0).into_owned();
        let mut u = CMat::zeros(d, d);
        for a in 0..d {
            let col = phi_of(&d1.matrix_unit(&s, a, 0))?.block_value(t) * &u0;
            u.set_column(a, &col);
        }
        let src = match d1.summands()[s.summand] {
            Summand::Fin { .. } => SourceRef::Fin { summand: s.summand, block: s.block },
            Summand::Seq { .. } => SourceRef::Seq { summand: s.summand, coord: s.coord, block: s.block, stride: 0 },
        };
        Ok(BlockRule { sources: vec![src], unitary: u })
    };
    let q = lcm(h1.period(), h2.period()) as i64;
    let w = spanning_window(&[h1, h2]) as i64 + 2 * q;
    let mut rules = Vec::with_capacity(d2.summands().len());
    for (j, s) in d2.summands().iter().enumerate() {
        let nb = s.blocks().num_blocks();
        let at_coord = |n: i64| -> Result<Vec<BlockRule>> {
            (0..nb).map(|b| rule_for(&BlockRef { summand: j, coord: n, block: b })).collect()
        };
        match s {
            Summand::Fin { .. } => rules.push(SummandRule::Fin(at_coord(0)?)),
            Summand::Seq { side, .. } => {
                let failure = std::cell::RefCell::new(None);
                let concrete = |n: i64| {
                    at_coord(n).unwrap_or_else(|e| {
                        failure.borrow_mut().get_or_insert(e);
                        Vec::new()
                    })
                };
                let seq = crate::morphism::infer_rules(*side, (-w, w, q as usize, q as usize), concrete);
                if let Some(e) = failure.into_inner() {
                    return Err(e);
                }
                rules.push(SummandRule::Seq(seq.map_err(inference_to_precondition)?));
            }
        }
    }
    let phi = StructuralMorphism::new(d1.clone(), d2.clone(), rules)?;
    if !phi.is_isomorphism() {
        bail!(Verification, "recovered map is not an isomorphism");
    }
    let lhs = h2.compose(&phi)?;
    let (defect, witness) = max_defect_on_units(&lhs, h1, spanning_window(&[&lhs, h1, &phi]))?;
    if defect > tol.max(1e-9) {
        bail!(Verification, "h2∘Φ ≠ h1: defect {defect:.3e} at unit {witness:?}");
    }
    Ok(phi)
}

/// `ι∘θ : P ⊕ Seq₊(K) → M` of an asymptotic lift.
pub fn lift_core(l: &AsymptoticLift) -> Result<StructuralMorphism> {
    l.tail.embedding.compose(&l.decomposition.theta)
}

/// Isomorphism `γ` between two asymptotic lifts of the same endomorphism
/// with `γ∘β₁ = β₂∘γ` and `E₂∘γ = E₁`.
#[derive(Debug, Clone)]
pub struct Connection {
    pub gamma: StructuralMorphism,
    pub intertwining_defect: f64,
    pub lift_defect: f64,
}

/// `second` lifts `g∘α∘g⁻¹` for an automorphism `g` of `M`; it is transported
/// to a lift of `α` by `E₂ ↦ g⁻¹∘E₂` before `γ` is built.
pub fn connecting_isomorphism(
    first: &AsymptoticLift,
    second: &AsymptoticLift,
    g: &StructuralMorphism,
    tol: f64,
) -> Result<Connection> {
    let g_inv = g.inverse()?;
    let h1 = lift_core(first)?;
    let h2 = g_inv.compose(&lift_core(second)?)?;
    let phi = recover_isomorphism(&h1, &h2, tol)?;
    let (d1, d2) = (&first.decomposition, &second.decomposition);
    let np = d2.p.algebra.summands().len();
    if d1.p.algebra.summands().len() != np || d1.k.is_some() != d2.k.is_some() {
        bail!(Verification, "the two lifts have different summand structure");
    }
    let gamma_p = StructuralMorphism::new(d1.p.algebra.clone(), d2.p.algebra.clone(), phi.rules()[..np].to_vec())?;
    let gamma = match (&d1.k, &d2.k) {
        (Some(k1), Some(k2)) => {
            let rules = (0..k2.num_blocks())
                .map(|b| {
                    let r = phi.rule_at(&BlockRef { summand: np, coord: 1, block: b });
                    let sources = r.sources.iter().map(|s| s.block_ref().block).collect();
                    crate::algebra::FinBlockRule { sources, unitary: r.unitary }
                })
                .collect();
            let phi_k = FinHom::new(k1.clone(), k2.clone(), rules)?;
            let shift = StructuralMorphism::coordinate_map(&EpSeq::constant(Side::TwoSided, phi_k))?;
            StructuralMorphism::direct_sum(&[gamma_p, shift])?
        }
        _ => gamma_p,
    };
    let w = spanning_window(&[&gamma, &first.lifting.beta, &second.lifting.beta, &first.lifting.e, &second.lifting.e]);
    let lhs = gamma.compose(&first.lifting.beta)?;
    let rhs = second.lifting.beta.compose(&gamma)?;
    let intertwining_defect = max_defect_on_units(&lhs, &rhs, w)?.0;
    let e2 = g_inv.compose(&second.lifting.e)?.compose(&gamma)?;
    let lift_defect = max_defect_on_units(&e2, &first.lifting.e, w)?.0;
    let bound = tol.max(1e-9);
    if intertwining_defect > bound || lift_defect > bound {
        bail!(Verification, "connecting isomorphism fails: γβ₁ vs β₂γ {intertwining_defect:.3e}, E₂γ vs E₁ {lift_defect:.3e}");
    }
    Ok(Connection { gamma, intertwining_defect, lift_defect })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fin_alg(dims: &[usize]) -> BlockAlgebra {
        BlockAlgebra::new(dims.to_vec()).unwrap()
    }

    fn fin_map(src: &[usize], mult: &[Vec<usize>]) -> StructuralMorphism {
        let s = fin_alg(src);
        let dims: Vec<usize> = mult.iter().map(|r| r.iter().zip(src).map(|(m, d)| m * d).sum()).collect();
        StructuralMorphism::from_fin_hom(&FinHom::from_multiplicities(s, fin_alg(&dims), mult, None).unwrap())
    }

    fn at(summand: usize, coord: i64, block: usize) -> BlockRef {
        BlockRef { summand, coord, block }
    }

    #[test]
    fn shift_kernel_chain_grows_by_one_coordinate() {
        let sigma = StructuralMorphism::shift(&fin_alg(&[1]), Side::OneSided, 1).unwrap();
        let chain = kernel_chain(&sigma, 4, 1e-10).unwrap();
        for (n, c) in chain.iter().enumerate() {
            for m in 1..8 {
                assert_eq!(c.contains(&at(0, m, 0)), m <= n as i64 + 1, "c_{} at {m}", n + 1);
            }
        }
        let lim = limit_projection(&sigma, &chain, 1e-10).unwrap();
        assert!((1..30).all(|m| lim.mask.contains(&at(0, m, 0))));
    }

    #[test]
    fn collapse_chain_stabilizes_at_first_step() {
        let f = fin_map(&[1, 1], &[vec![0, 1], vec![0, 1]]);
        let chain = kernel_chain(&f, 3, 1e-10).unwrap();
        for c in &chain {
            assert!(c.contains(&at(0, 0, 0)) && !c.contains(&at(0, 0, 1)));
        }
        let lim = limit_projection(&f, &chain, 1e-10).unwrap();
        assert_eq!(lim.fin_stabilization, Some(1));
        assert!(!lim.mask.contains(&at(0, 0, 1)));
    }

    #[test]
    fn swap_plus_shift_decomposes() {
        let swap = fin_map(&[1, 1], &[vec![0, 1], vec![1, 0]]);
        let sigma = StructuralMorphism::shift(&fin_alg(&[2]), Side::OneSided, 1).unwrap();
        let alpha = StructuralMorphism::direct_sum(&[swap, sigma]).unwrap();
        let d = shift_decomposition(&alpha, 4, 1e-10).unwrap();
        assert_eq!(d.p.algebra.summands(), &[Summand::Fin { dims: vec![1, 1] }]);
        assert_eq!(d.kernel_blocks, vec![at(1, 1, 0)]);
        assert_eq!(d.k.as_ref().unwrap().dims(), &[2]);
        assert!(d.beta.is_isomorphism());
        assert!(d.conjugacy_defect < 1e-12);
    }

    #[test]
    fn decomposition_of_twisted_shift() {
        // α(x)_n = x_{n+1} on Seq₊(ℂ ⊕ ℂ) followed by swapping the blocks
        // of every odd coordinate: θ must undo the accumulated swaps.
        let k = fin_alg(&[1, 1]);
        let swap = FinHom::from_multiplicities(k.clone(), k.clone(), &[vec![0, 1], vec![1, 0]], None).unwrap();
        let id = FinHom::identity(&k);
        let g = StructuralMorphism::coordinate_map(&EpSeq { left: vec![], lo: 1, core: vec![], right: vec![swap, id] }).unwrap();
        let alpha = g.compose(&StructuralMorphism::shift(&k, Side::OneSided, 1).unwrap()).unwrap();
        let d = shift_decomposition(&alpha, 4, 1e-10).unwrap();
        assert_eq!(d.kernel_blocks, vec![at(0, 1, 0), at(0, 1, 1)]);
        assert!(d.p.algebra.is_zero_algebra());
        assert!(d.theta.is_isomorphism());
        assert!(d.conjugacy_defect < 1e-12);
    }

    #[test]
    fn non_surjective_is_rejected() {
        let f = fin_map(&[1, 1], &[vec![0, 1], vec![0, 1]]);
        assert!(matches!(shift_decomposition(&f, 3, 1e-10), Err(Error::Precondition(_))));
    }

    #[test]
    fn collapse_lifts_to_the_diagonal() {
        let f = fin_map(&[1, 1], &[vec![0, 1], vec![0, 1]]);
        let l = asymptotic_lift(&f, 3, 1e-12).unwrap();
        assert_eq!(l.tail.stabilization, 1);
        assert_eq!(l.lifting.n.summands(), &[Summand::Fin { dims: vec![1] }]);
        assert!(max_defect_on_units(&l.lifting.beta, &StructuralMorphism::identity(&l.lifting.n), 0).unwrap().0 < 1e-12);
        let t = l.lifting.e.apply(&l.lifting.n.identity().scale(linalg::c(2.5, 0.0))).unwrap();
        assert!((t.block_value(&at(0, 0, 0))[(0, 0)].re - 2.5).abs() < 1e-12);
        assert!((t.block_value(&at(0, 0, 1))[(0, 0)].re - 2.5).abs() < 1e-12);
        assert!(l.lifting_defect < 1e-12 && l.range_defect < 1e-12);
        check_range_containment(&l.lifting, 3, 2, 1e-12).unwrap();
    }

    #[test]
    fn three_point_collapse_stabilizes_at_two() {
        let f = fin_map(&[1, 1, 1], &[vec![0, 1, 0], vec![0, 0, 1], vec![0, 0, 1]]);
        let t = tail_algebra(&f, 1e-12).unwrap();
        assert_eq!(t.stabilization, 2);
        assert_eq!(t.algebra().summands(), &[Summand::Fin { dims: vec![1] }]);
        let one = t.embedding.apply(&t.algebra().identity()).unwrap();
        assert!(one.approx_eq(&f.source().identity(), 1e-12));
    }

    #[test]
    fn backward_shift_lifts_to_bilateral_shift() {
        let k = fin_alg(&[1]);
        let sigma = StructuralMorphism::shift(&k, Side::OneSided, 1).unwrap();
        let l = asymptotic_lift(&sigma, 4, 1e-12).unwrap();
        assert!(l.decomposition.p.algebra.is_zero_algebra());
        assert_eq!(l.lifting.n, ComputableAlgebra::seq(&k, Side::TwoSided));
        assert_eq!(l.lifting.beta, StructuralMorphism::shift(&k, Side::TwoSided, 1).unwrap());
        let pp = StructuralMorphism::positive_part(&k).unwrap();
        assert!(max_defect_on_units(&l.lifting.e, &pp, 6).unwrap().0 < 1e-12);
    }

    #[test]
    fn automorphism_lifts_to_itself() {
        let swap = fin_map(&[2, 2], &[vec![0, 1], vec![1, 0]]);
        let l = asymptotic_lift(&swap, 2, 1e-12).unwrap();
        assert_eq!(&l.lifting.n, swap.source());
        assert!(max_defect_on_units(&l.lifting.e, &StructuralMorphism::identity(swap.source()), 0).unwrap().0 < 1e-12);
        assert!(max_defect_on_units(&l.lifting.beta, &swap, 0).unwrap().0 < 1e-12);
    }

    fn fin_functional(values: &[f64]) -> Functional {
        let alg = ComputableAlgebra::fin(&fin_alg(&vec![1; values.len()]));
        let mut f = Functional::zero(&alg);
        for (b, v) in values.iter().enumerate() {
            f.accumulate(&alg, &at(0, 0, b), &CMat::from_element(1, 1, linalg::c(*v, 0.0)));
        }
        f
    }

    #[test]
    fn convergence_tables_for_the_collapse() {
        let f = fin_map(&[1, 1], &[vec![0, 1], vec![0, 1]]);
        let l = asymptotic_lift(&f, 3, 1e-12).unwrap();
        let diff = convergence_table(&f, &l.lifting.e, &fin_functional(&[1.0, -1.0]), 3, 1e-12).unwrap();
        assert_eq!(diff.norms, vec![0.0; 3]);
        assert_eq!((diff.limit, diff.converged_at), (0.0, Some(1)));
        let sum = convergence_table(&f, &l.lifting.e, &fin_functional(&[1.0, 1.0]), 3, 1e-12).unwrap();
        assert!(sum.norms.iter().all(|v| (v - 2.0).abs() < 1e-12));
        assert!((sum.limit - 2.0).abs() < 1e-12);
        // M∞ = ℂ1, so the scalar lift is already the asymptotic lift.
        assert!(violating_functional(&l, &mut rand::thread_rng(), 20, 1e-10).unwrap().is_none());
    }

    #[test]
    fn shift_predual_keeps_norm_and_scalar_lift_is_separated() {
        let k = fin_alg(&[1]);
        let sigma = StructuralMorphism::shift(&k, Side::OneSided, 1).unwrap();
        let l = asymptotic_lift(&sigma, 3, 1e-12).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let rho = Functional::random(sigma.source(), &mut rng, 4);
        let t = convergence_table(&sigma, &l.lifting.e, &rho, 6, 1e-10).unwrap();
        assert!(t.norms.iter().all(|v| (v - rho.norm()).abs() < 1e-10));
        assert_eq!(t.converged_at, Some(1));
        let v = violating_functional(&l, &mut rng, 20, 1e-10).unwrap().expect("M∞ is larger than ℂ1");
        assert!(scalar_lift(&sigma).unwrap().e.predual_compose(&v).unwrap().norm() < 1e-10);
    }

    #[test]
    fn reduction_strips_a_junk_summand() {
        let f = fin_map(&[1, 1], &[vec![0, 1], vec![0, 1]]);
        let l = asymptotic_lift(&f, 3, 1e-12).unwrap().lifting;
        let n = l.n.direct_sum(&ComputableAlgebra::fin(&fin_alg(&[2])));
        let beta = StructuralMorphism::direct_sum(&[l.beta.clone(), StructuralMorphism::identity(&ComputableAlgebra::fin(&fin_alg(&[2])))]).unwrap();
        let e = StructuralMorphism::new(n.clone(), f.source().clone(), l.e.rules().to_vec()).unwrap();
        let junk = Lifting::new(n, beta, e, f.clone()).unwrap();
        let r = nondegenerate_reduction(&junk, junk.window(), 1e-12).unwrap();
        assert!(r.degenerate.contains(&at(1, 0, 0)) && !r.degenerate.contains(&at(0, 0, 0)));
        assert_eq!(r.lifting.n, l.n);
        let again = nondegenerate_reduction(&l, l.window(), 1e-12).unwrap();
        assert!(again.degenerate.is_zero());
        assert!(matches!(nondegenerate_reduction(&l, 0, 1e-12), Err(Error::Precondition(_))));
    }

    #[test]
    fn reduction_finds_a_dead_orbit() {
        let k = fin_alg(&[1]);
        let sigma = StructuralMorphism::shift(&k, Side::OneSided, 1).unwrap();
        let l = asymptotic_lift(&sigma, 3, 1e-12).unwrap().lifting;
        let dead = ComputableAlgebra::seq(&k, Side::TwoSided);
        let n = l.n.direct_sum(&dead);
        let beta = StructuralMorphism::direct_sum(&[l.beta.clone(), StructuralMorphism::shift(&k, Side::TwoSided, 1).unwrap()]).unwrap();
        let e = StructuralMorphism::new(n.clone(), sigma.source().clone(), l.e.rules().to_vec()).unwrap();
        let junk = Lifting::new(n, beta, e, sigma.clone()).unwrap();
        let r = nondegenerate_reduction(&junk, junk.window(), 1e-12).unwrap();
        assert!((-5..5).all(|m| r.degenerate.contains(&at(1, m, 0)) && !r.degenerate.contains(&at(0, m, 0))));
        assert_eq!(r.lifting.n, l.n);
    }

    #[test]
    fn conjugate_presentations_are_connected() {
        let swap = fin_map(&[1, 1], &[vec![0, 1], vec![1, 0]]);
        let k = fin_alg(&[1, 1]);
        let sigma = StructuralMorphism::shift(&k, Side::OneSided, 1).unwrap();
        let alpha = StructuralMorphism::direct_sum(&[swap.clone(), sigma]).unwrap();
        let flip = FinHom::from_multiplicities(k.clone(), k.clone(), &[vec![0, 1], vec![1, 0]], None).unwrap();
        let id = FinHom::identity(&k);
        let g_seq = StructuralMorphism::coordinate_map(&EpSeq { left: vec![], lo: 1, core: vec![flip], right: vec![id] }).unwrap();
        let g = StructuralMorphism::direct_sum(&[swap, g_seq]).unwrap();
        let conj = g.compose(&alpha).unwrap().compose(&g.inverse().unwrap()).unwrap();
        let l1 = asymptotic_lift(&alpha, 4, 1e-12).unwrap();
        let l2 = asymptotic_lift(&conj, 4, 1e-12).unwrap();
        let c = connecting_isomorphism(&l1, &l2, &g, 1e-12).unwrap();
        assert!(c.gamma.is_isomorphism());
        assert!(c.intertwining_defect < 1e-9 && c.lift_defect < 1e-9);
    }
}
