//! Structural normal unital *-homomorphisms between computable algebras.
//!
//! A morphism is stored in normal form: every minimal central projection of the
//! target receives `U · diag(x_{r_1}, …, x_{r_m}) · U*` for listed source blocks
//! `r_k`. On sequence summands the rules are eventually periodic, and a source
//! coordinate referenced from a periodic part advances by a fixed stride per
//! repetition. Shift powers, coordinatewise maps, routing, their composites and
//! inverses all have this form; kernels, images and preduals are read off it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::algebra::{BlockAlgebra, FinBlockRule, FinHom, DEFAULT_TOL};
use crate::error::{bail, Result};
use crate::linalg::{self, CMat};
use crate::seq::{
    lcm, BlockRef, CentralMask, ComputableAlgebra, Element, EpSeq, Functional, FunctionalPart, MaskPart, Part,
    SeqElement, Side, Slot, Summand,
};

/// A source block referenced by a target rule. For sequence sources inside a
/// periodic part of a sequence rule, repetition `t` refers to coordinate
/// `coord + t·stride` (right part) or `coord − t·stride` (left part).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceRef {
    Fin { summand: usize, block: usize },
    Seq { summand: usize, coord: i64, block: usize, stride: i64 },
}

impl SourceRef {
    pub fn summand(&self) -> usize {
        match self {
            SourceRef::Fin { summand, .. } | SourceRef::Seq { summand, .. } => *summand,
        }
    }

    pub fn block_ref(&self) -> BlockRef {
        match *self {
            SourceRef::Fin { summand, block } => BlockRef { summand, coord: 0, block },
            SourceRef::Seq { summand, coord, block, .. } => BlockRef { summand, coord, block },
        }
    }

    fn shifted(&self, reps: i64) -> SourceRef {
        match *self {
            SourceRef::Seq { summand, coord, block, stride } => {
                SourceRef::Seq { summand, coord: coord + reps * stride, block, stride: 0 }
            }
            fin => fin,
        }
    }

    fn stride(&self) -> i64 {
        match self {
            SourceRef::Seq { stride, .. } => *stride,
            SourceRef::Fin { .. } => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockRule {
    pub sources: Vec<SourceRef>,
    pub unitary: CMat,
}

impl BlockRule {
    fn shifted(&self, reps: i64) -> BlockRule {
        BlockRule { sources: self.sources.iter().map(|s| s.shifted(reps)).collect(), unitary: self.unitary.clone() }
    }

    fn same_shape(&self, other: &BlockRule, tol: f64) -> bool {
        self.sources.len() == other.sources.len()
            && self.unitary.shape() == other.unitary.shape()
            && linalg::max_abs(&(&self.unitary - &other.unitary)) <= tol
    }
}

/// Rules for one target summand: one rule per block, per coordinate for
/// sequence summands.
#[derive(Debug, Clone, PartialEq)]
pub enum SummandRule {
    Fin(Vec<BlockRule>),
    Seq(EpSeq<Vec<BlockRule>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralMorphism {
    source: ComputableAlgebra,
    target: ComputableAlgebra,
    rules: Vec<SummandRule>,
}

/// Extent of an eventually periodic object: `(lo, hi, left period, right period)`.
pub(crate) type Bounds = (i64, i64, usize, usize);

fn seq_bounds<T: Clone>(s: &EpSeq<T>) -> Bounds {
    (s.lo, s.hi(), s.left.len(), s.right.len())
}

const RULE_TOL: f64 = 1e-9;

impl StructuralMorphism {
    /// Assemble from rules, checking shapes (dimensions, references, unitaries).
    pub fn new(source: ComputableAlgebra, target: ComputableAlgebra, rules: Vec<SummandRule>) -> Result<Self> {
        let f = Self { source, target, rules };
        f.check_shapes()?;
        Ok(f)
    }

    pub fn source(&self) -> &ComputableAlgebra {
        &self.source
    }

    pub fn target(&self) -> &ComputableAlgebra {
        &self.target
    }

    pub fn rules(&self) -> &[SummandRule] {
        &self.rules
    }

    fn check_shapes(&self) -> Result<()> {
        if self.rules.len() != self.target.summands().len() {
            bail!(Shape, "{} summand rules for {} target summands", self.rules.len(), self.target.summands().len());
        }
        for (i, (rule, summand)) in self.rules.iter().zip(self.target.summands()).enumerate() {
            let dims = summand.blocks().dims().to_vec();
            match (rule, summand) {
                (SummandRule::Fin(rs), Summand::Fin { .. }) => self.check_coord_rules(i, rs, &dims, false)?,
                (SummandRule::Seq(s), Summand::Seq { side, .. }) => {
                    if s.right.is_empty() || s.side() != *side || (*side == Side::OneSided && s.lo != 1) {
                        bail!(Shape, "rule sequence for target summand {i} has the wrong side or layout");
                    }
                    for rs in &s.core {
                        self.check_coord_rules(i, rs, &dims, false)?;
                    }
                    for rs in s.left.iter().chain(&s.right) {
                        self.check_coord_rules(i, rs, &dims, true)?;
                    }
                }
                _ => bail!(Shape, "rule kind for target summand {i} does not match the summand"),
            }
        }
        Ok(())
    }

    fn check_coord_rules(&self, i: usize, rs: &[BlockRule], dims: &[usize], periodic: bool) -> Result<()> {
        if rs.len() != dims.len() {
            bail!(Shape, "target summand {i}: {} block rules for {} blocks", rs.len(), dims.len());
        }
        for (b, r) in rs.iter().enumerate() {
            let mut d = 0;
            for s in &r.sources {
                let Some(summand) = self.source.summands().get(s.summand()) else {
                    bail!(Shape, "target summand {i} block {b} references missing source summand {}", s.summand());
                };
                let (blk, ok) = match (s, summand) {
                    (SourceRef::Fin { block, .. }, Summand::Fin { .. }) => (*block, true),
                    (SourceRef::Seq { coord, block, stride, .. }, Summand::Seq { side, .. }) => {
                        let in_domain = *side == Side::TwoSided || *coord >= 1;
                        (*block, in_domain && *stride >= 0 && (periodic || *stride == 0))
                    }
                    _ => (0, false),
                };
                let sd = summand.blocks().dims().get(blk).copied();
                match (ok, sd) {
                    (true, Some(sd)) => d += sd,
                    _ => bail!(Shape, "target summand {i} block {b} has an invalid source reference {s:?}"),
                }
            }
            if d != dims[b] {
                bail!(Shape, "target summand {i} block {b} has dimension {} but its sources fill {d}", dims[b]);
            }
            if r.unitary.nrows() != d || r.unitary.ncols() != d {
                bail!(Shape, "target summand {i} block {b}: unitary must be {d}x{d}");
            }
        }
        Ok(())
    }

    /// Concrete rule (strides resolved) for a target block.
    pub fn rule_at(&self, r: &BlockRef) -> BlockRule {
        match &self.rules[r.summand] {
            SummandRule::Fin(rs) => rs[r.block].clone(),
            SummandRule::Seq(s) => {
                let slot = s.slot(r.coord).unwrap_or_else(|| panic!("coordinate {} outside the target", r.coord));
                match slot {
                    Slot::Core { pos } => s.core[pos][r.block].clone(),
                    Slot::Right { pos, rep } => s.right[pos][r.block].shifted(rep),
                    Slot::Left { pos, rep } => s.left[pos][r.block].shifted(-rep),
                }
            }
        }
    }

    fn rules_at(&self, summand: usize, n: i64) -> Vec<BlockRule> {
        let nb = self.target.summands()[summand].blocks().num_blocks();
        (0..nb).map(|b| self.rule_at(&BlockRef { summand, coord: n, block: b })).collect()
    }

    /// Bounds beyond which every periodic reference of a sequence rule lands in
    /// the periodic region of its source, given the source bounds.
    fn periodic_bounds(&self, s: &EpSeq<Vec<BlockRule>>, src: &dyn Fn(usize) -> Option<Bounds>) -> Result<Bounds> {
        let (lo, hi, l, r) = seq_bounds(s);
        let mut right_reps = 0i64;
        let mut right_factor = 1usize;
        for rule in s.right.iter().flatten() {
            for sr in &rule.sources {
                let stride = sr.stride();
                if let (SourceRef::Seq { summand, coord, .. }, true) = (sr, stride > 0) {
                    if let Some((_, shi, _, sr_per)) = src(*summand) {
                        right_reps = right_reps.max(div_ceil(shi - coord, stride).max(0));
                        right_factor = lcm(right_factor, sr_per / gcd_i(stride, sr_per));
                    }
                }
            }
        }
        let mut left_reps = 0i64;
        let mut left_factor = 1usize;
        for rule in s.left.iter().flatten() {
            for sr in &rule.sources {
                let stride = sr.stride();
                if let (SourceRef::Seq { summand, coord, .. }, true) = (sr, stride > 0) {
                    match src(*summand) {
                        Some((slo, _, sl, _)) if sl > 0 => {
                            left_reps = left_reps.max(div_ceil(coord - slo + 1, stride).max(0));
                            left_factor = lcm(left_factor, sl / gcd_i(stride, sl));
                        }
                        Some(_) => bail!(Shape, "left periodic reference into a one-sided summand"),
                        None => {}
                    }
                }
            }
        }
        Ok((lo - l as i64 * left_reps, hi + r as i64 * right_reps, l * left_factor, r * right_factor))
    }

    fn eval_rule(rule: &BlockRule, x: &Element) -> CMat {
        let diag: Vec<CMat> = rule.sources.iter().map(|s| x.block_value(&s.block_ref())).collect();
        &rule.unitary * linalg::block_diag(&diag) * rule.unitary.adjoint()
    }

    pub fn apply(&self, x: &Element) -> Result<Element> {
        self.source.check_element(x)?;
        let src = |j: usize| match &x.parts[j] {
            Part::Seq(s) => Some(seq_bounds(s.data())),
            Part::Fin(_) => None,
        };
        let mut parts = Vec::with_capacity(self.rules.len());
        for (i, (rule, summand)) in self.rules.iter().zip(self.target.summands()).enumerate() {
            let base = summand.blocks();
            match rule {
                SummandRule::Fin(rs) => parts.push(Part::Fin(crate::algebra::AlgebraElement::new(
                    rs.iter().map(|r| Self::eval_rule(r, x)).collect(),
                ))),
                SummandRule::Seq(s) => {
                    let (lo, hi, l, r) = self.periodic_bounds(s, &src)?;
                    let side = s.side();
                    let lo = if side == Side::OneSided { 1 } else { lo };
                    parts.push(Part::Seq(SeqElement::sample(&base, side, lo, hi.max(lo), l, r, |n| {
                        crate::algebra::AlgebraElement::new(
                            self.rules_at(i, n).iter().map(|r| Self::eval_rule(r, x)).collect(),
                        )
                    })));
                }
            }
        }
        Ok(Element::new(parts))
    }

    /// `self ∘ g`.
    pub fn compose(&self, g: &StructuralMorphism) -> Result<StructuralMorphism> {
        if g.target != self.source {
            bail!(Shape, "cannot compose: intermediate algebras differ");
        }
        let substitute = |rule: &BlockRule| -> BlockRule {
            let mut sources = Vec::new();
            let mut inner = Vec::new();
            for s in &rule.sources {
                let gr = g.rule_at(&s.block_ref());
                sources.extend(gr.sources);
                inner.push(gr.unitary);
            }
            BlockRule { sources, unitary: &rule.unitary * linalg::block_diag(&inner) }
        };
        let src = |j: usize| match &g.rules[j] {
            SummandRule::Seq(s) => Some(seq_bounds(s)),
            SummandRule::Fin(_) => None,
        };
        let mut rules = Vec::with_capacity(self.rules.len());
        for (i, rule) in self.rules.iter().enumerate() {
            match rule {
                SummandRule::Fin(rs) => rules.push(SummandRule::Fin(rs.iter().map(substitute).collect())),
                SummandRule::Seq(s) => {
                    let bounds = self.periodic_bounds(s, &src)?;
                    let seq = infer_rules(s.side(), bounds, |n| self.rules_at(i, n).iter().map(substitute).collect())?;
                    rules.push(SummandRule::Seq(seq));
                }
            }
        }
        StructuralMorphism::new(g.source.clone(), self.target.clone(), rules)
    }

    /// `self^n` for an endomorphism (`n = 0` gives the identity).
    pub fn power(&self, n: usize) -> Result<StructuralMorphism> {
        if self.source != self.target {
            bail!(Shape, "powers need an endomorphism");
        }
        let mut acc = StructuralMorphism::identity(&self.source);
        for _ in 0..n {
            acc = self.compose(&acc)?;
        }
        Ok(acc)
    }

    /// All target rules, including periodic templates, with their position.
    fn rule_sites(&self) -> Vec<RuleSite<'_>> {
        let mut out = Vec::new();
        for (i, rule) in self.rules.iter().enumerate() {
            match rule {
                SummandRule::Fin(rs) => {
                    for (b, r) in rs.iter().enumerate() {
                        out.push(RuleSite { target: BlockRef { summand: i, coord: 0, block: b }, rule: r, part: 0, period: 0 });
                    }
                }
                SummandRule::Seq(s) => {
                    let hi = s.hi();
                    for (k, rs) in s.core.iter().enumerate() {
                        for (b, r) in rs.iter().enumerate() {
                            let target = BlockRef { summand: i, coord: s.lo + k as i64, block: b };
                            out.push(RuleSite { target, rule: r, part: 0, period: 0 });
                        }
                    }
                    for (k, rs) in s.right.iter().enumerate() {
                        for (b, r) in rs.iter().enumerate() {
                            let target = BlockRef { summand: i, coord: hi + k as i64, block: b };
                            out.push(RuleSite { target, rule: r, part: 1, period: s.right.len() as i64 });
                        }
                    }
                    let l = s.left.len() as i64;
                    for (k, rs) in s.left.iter().enumerate() {
                        for (b, r) in rs.iter().enumerate() {
                            let target = BlockRef { summand: i, coord: s.lo - l + k as i64, block: b };
                            out.push(RuleSite { target, rule: r, part: -1, period: l });
                        }
                    }
                }
            }
        }
        out
    }

    /// Every reference into source summand `j`, as a finite site or a
    /// progression. Stride-0 references from periodic parts are reported with
    /// `infinite = true`.
    fn references_into(&self, j: usize) -> Vec<Reference> {
        let mut out = Vec::new();
        for site in self.rule_sites() {
            for s in &site.rule.sources {
                if s.summand() != j {
                    continue;
                }
                let stride = s.stride();
                let dir = if stride > 0 { site.part } else { 0 };
                out.push(Reference {
                    target: site.target,
                    source: s.block_ref(),
                    stride,
                    dir,
                    target_period: site.period,
                    infinite: site.part != 0 && stride == 0,
                });
            }
        }
        out
    }

    /// Eventually periodic reference counts on a sequence source summand
    /// (`usize::MAX` marks infinitely many).
    fn seq_counts(&self, j: usize, base_blocks: usize, side: Side) -> EpSeq<Vec<usize>> {
        let refs = self.references_into(j);
        let mut hi = i64::MIN;
        let mut lo = i64::MAX;
        let mut rp = 1usize;
        let mut lp = 1usize;
        for r in &refs {
            match r.dir {
                1 => rp = lcm(rp, r.stride as usize),
                -1 => lp = lcm(lp, r.stride as usize),
                _ => {}
            }
            hi = hi.max(r.source.coord + 1);
            lo = lo.min(r.source.coord);
        }
        if refs.is_empty() {
            hi = 1;
            lo = 1;
        }
        let lo = if side == Side::OneSided { 1 } else { lo.min(hi) };
        let hi = hi.max(lo);
        let count = |n: i64| -> Vec<usize> {
            let mut c = vec![0usize; base_blocks];
            for r in &refs {
                if r.source.coord == n || r.hits(n) {
                    let v = &mut c[r.source.block];
                    *v = if r.infinite || *v == usize::MAX { usize::MAX } else { *v + 1 };
                }
            }
            c
        };
        let mut s = EpSeq::sample(side, lo, hi, lp, rp, count);
        s.normalize(|a, b| a == b);
        s
    }

    /// Largest central projection `z` of the source with `f(z) = 0`.
    pub fn kernel_projection(&self) -> CentralMask {
        let parts = self
            .source
            .summands()
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let nb = s.blocks().num_blocks();
                match s {
                    Summand::Fin { .. } => {
                        let mut used = vec![false; nb];
                        for r in self.references_into(j) {
                            used[r.source.block] = true;
                        }
                        MaskPart::Fin(used.into_iter().map(|u| !u).collect())
                    }
                    Summand::Seq { side, .. } => {
                        let mut m = self.seq_counts(j, nb, *side).map(|c| c.iter().map(|&k| k == 0).collect());
                        m.normalize(|a, b| a == b);
                        MaskPart::Seq(m)
                    }
                }
            })
            .collect();
        CentralMask { parts }
    }

    /// True when every target block is a conjugate of a single source block and
    /// no source block is used twice.
    pub fn is_surjective(&self) -> bool {
        if self.rule_sites().iter().any(|s| s.rule.sources.len() != 1) {
            return false;
        }
        self.source.summands().iter().enumerate().all(|(j, s)| {
            let nb = s.blocks().num_blocks();
            match s {
                Summand::Fin { .. } => {
                    let mut c = vec![0usize; nb];
                    for r in self.references_into(j) {
                        c[r.source.block] += 1;
                    }
                    c.iter().all(|&k| k <= 1)
                }
                Summand::Seq { side, .. } => {
                    let c = self.seq_counts(j, nb, *side);
                    c.left.iter().chain(&c.core).chain(&c.right).all(|v| v.iter().all(|&k| k <= 1))
                }
            }
        })
    }

    /// Target blocks whose rule lists source block `b`, once per occurrence.
    /// A reference from a periodic part with stride 0 is reported once.
    pub fn referencing_targets(&self, b: &BlockRef) -> Vec<BlockRef> {
        self.references_into(b.summand)
            .iter()
            .filter(|r| r.source.block == b.block && (r.source.coord == b.coord || r.hits(b.coord)))
            .map(|r| r.target_at(b.coord))
            .collect()
    }

    /// Least common multiple of all rule periods.
    pub fn period(&self) -> usize {
        self.rules.iter().fold(1, |acc, r| match r {
            SummandRule::Fin(_) => acc,
            SummandRule::Seq(s) => lcm(lcm(acc, s.right.len()), s.left.len().max(1)),
        })
    }

    /// Coordinates `≥ hi` (resp. `< lo`) of source summand `j` are reached only
    /// through right (resp. left) periodic templates; returns `(lo, hi)`.
    pub fn periodic_region(&self, j: usize) -> (i64, i64) {
        let refs = self.references_into(j);
        let hi = refs.iter().map(|r| r.source.coord + 1).max().unwrap_or(1);
        let lo = refs.iter().map(|r| r.source.coord).min().unwrap_or(1).min(hi);
        (lo, hi)
    }

    /// Sequence references in periodic parts must advance one period per
    /// repetition (or stay fixed): shift powers composed with coordinatewise
    /// maps. Other index maps are outside the model.
    pub fn check_index_law(&self) -> Result<()> {
        for site in self.rule_sites() {
            for s in &site.rule.sources {
                let stride = s.stride();
                if site.part != 0 && matches!(s, SourceRef::Seq { .. }) && stride != 0 && stride != site.period {
                    bail!(
                        Verification,
                        "target block {:?} reads coordinates with stride {stride} per period {}: not a shift-type index map",
                        site.target,
                        site.period
                    );
                }
            }
        }
        Ok(())
    }

    pub fn is_injective(&self) -> bool {
        self.kernel_projection().is_zero()
    }

    pub fn is_isomorphism(&self) -> bool {
        self.is_injective() && self.is_surjective()
    }

    /// Inverse of an isomorphism, itself in normal form.
    pub fn inverse(&self) -> Result<StructuralMorphism> {
        if !self.is_isomorphism() {
            bail!(Precondition, "morphism is not an isomorphism");
        }
        let mut rules = Vec::with_capacity(self.source.summands().len());
        for (j, s) in self.source.summands().iter().enumerate() {
            let refs = self.references_into(j);
            let pre = |n: i64, block: usize| -> BlockRule {
                let r = refs
                    .iter()
                    .find(|r| r.source.block == block && (r.source.coord == n || r.hits(n)))
                    .expect("isomorphism references every source block");
                let target = r.target_at(n);
                let u = self.rule_at(&target).unitary;
                let src = match self.target.summands()[target.summand] {
                    Summand::Fin { .. } => SourceRef::Fin { summand: target.summand, block: target.block },
                    Summand::Seq { .. } => {
                        SourceRef::Seq { summand: target.summand, coord: target.coord, block: target.block, stride: 0 }
                    }
                };
                BlockRule { sources: vec![src], unitary: u.adjoint() }
            };
            let nb = s.blocks().num_blocks();
            match s {
                Summand::Fin { .. } => rules.push(SummandRule::Fin((0..nb).map(|b| pre(0, b)).collect())),
                Summand::Seq { side, .. } => {
                    let mut hi = i64::MIN;
                    let mut lo = i64::MAX;
                    let mut rp = 1usize;
                    let mut lp = 1usize;
                    for r in &refs {
                        match r.dir {
                            1 => rp = lcm(rp, r.stride as usize),
                            -1 => lp = lcm(lp, r.stride as usize),
                            _ => {}
                        }
                        hi = hi.max(r.source.coord + 1);
                        lo = lo.min(r.source.coord);
                    }
                    let lo = if *side == Side::OneSided { 1 } else { lo.min(hi) };
                    let seq = infer_rules(*side, (lo, hi.max(lo), lp, rp), |n| (0..nb).map(|b| pre(n, b)).collect())?;
                    rules.push(SummandRule::Seq(seq));
                }
            }
        }
        StructuralMorphism::new(self.target.clone(), self.source.clone(), rules)
    }
}

struct RuleSite<'a> {
    target: BlockRef,
    rule: &'a BlockRule,
    /// 0 for Fin and core rules, 1 for right templates, −1 for left templates.
    part: i64,
    period: i64,
}

#[derive(Debug, Clone)]
struct Reference {
    target: BlockRef,
    source: BlockRef,
    stride: i64,
    dir: i64,
    target_period: i64,
    infinite: bool,
}

impl Reference {
    /// Whether repetition `t ≥ 1` of a progression lands on coordinate `n`.
    fn hits(&self, n: i64) -> bool {
        let d = match self.dir {
            1 => n - self.source.coord,
            -1 => self.source.coord - n,
            _ => return false,
        };
        d > 0 && d % self.stride == 0
    }

    fn target_at(&self, n: i64) -> BlockRef {
        let t = if self.dir == 0 { 0 } else { (n - self.source.coord).abs() / self.stride };
        BlockRef { coord: self.target.coord + self.dir * t * self.target_period, ..self.target }
    }
}

fn div_ceil(a: i64, b: i64) -> i64 {
    a.div_euclid(b) + i64::from(a.rem_euclid(b) != 0)
}

fn gcd_i(a: i64, b: usize) -> usize {
    crate::seq::gcd(a as usize, b)
}

/// Recover an eventually periodic rule sequence from concrete rules on the
/// given bounds: strides are read off consecutive repetitions and confirmed on
/// a third one.
pub(crate) fn infer_rules(side: Side, bounds: Bounds, f: impl Fn(i64) -> Vec<BlockRule>) -> Result<EpSeq<Vec<BlockRule>>> {
    let (lo, hi, l, r) = bounds;
    let lo = if side == Side::OneSided { 1 } else { lo };
    let hi = hi.max(lo);
    let template = |n0: i64, period: i64, dir: i64| -> Result<Vec<BlockRule>> {
        let r0 = f(n0);
        let r1 = f(n0 + dir * period);
        let r2 = f(n0 + 2 * dir * period);
        let mut out = Vec::with_capacity(r0.len());
        for ((a, b), c) in r0.iter().zip(&r1).zip(&r2) {
            if !a.same_shape(b, RULE_TOL) || !a.same_shape(c, RULE_TOL) {
                bail!(Internal, "rules are not periodic beyond index {n0}");
            }
            let mut sources = Vec::with_capacity(a.sources.len());
            for ((x, y), z) in a.sources.iter().zip(&b.sources).zip(&c.sources) {
                let s = match (*x, *y, *z) {
                    (SourceRef::Fin { .. }, _, _) if x == y && y == z => *x,
                    (
                        SourceRef::Seq { summand, coord: c0, block, .. },
                        SourceRef::Seq { summand: s1, coord: c1, block: b1, .. },
                        SourceRef::Seq { summand: s2, coord: c2, block: b2, .. },
                    ) if summand == s1 && s1 == s2 && block == b1 && b1 == b2 => {
                        let stride = dir * (c1 - c0);
                        if stride < 0 || dir * (c2 - c1) != stride {
                            bail!(Internal, "source coordinates do not advance linearly beyond index {n0}");
                        }
                        SourceRef::Seq { summand, coord: c0, block, stride }
                    }
                    _ => bail!(Internal, "source blocks change between repetitions beyond index {n0}"),
                };
                sources.push(s);
            }
            out.push(BlockRule { sources, unitary: a.unitary.clone() });
        }
        Ok(out)
    };
    let core: Vec<_> = (lo..hi).map(&f).collect();
    let right = (0..r as i64).map(|k| template(hi + k, r as i64, 1)).collect::<Result<Vec<_>>>()?;
    let left = match side {
        Side::OneSided => Vec::new(),
        Side::TwoSided => (0..l as i64).map(|k| template(lo - l as i64 + k, l as i64, -1)).collect::<Result<Vec<_>>>()?,
    };
    let mut s = EpSeq { left, lo, core, right };
    compact_rules(&mut s);
    Ok(s)
}

fn rules_match(concrete: &[BlockRule], template: &[BlockRule], reps: i64) -> bool {
    concrete.iter().zip(template).all(|(a, t)| {
        let t = t.shifted(reps);
        a.same_shape(&t, RULE_TOL)
            && a.sources.iter().zip(&t.sources).all(|(x, y)| x.block_ref() == y.block_ref() && x.summand() == y.summand())
    })
}

fn with_strides(concrete: &[BlockRule], template: &[BlockRule]) -> Vec<BlockRule> {
    concrete
        .iter()
        .zip(template)
        .map(|(a, t)| BlockRule {
            sources: a
                .sources
                .iter()
                .zip(&t.sources)
                .map(|(x, y)| match (*x, *y) {
                    (SourceRef::Seq { summand, coord, block, .. }, SourceRef::Seq { stride, .. }) => {
                        SourceRef::Seq { summand, coord, block, stride }
                    }
                    (x, _) => x,
                })
                .collect(),
            unitary: a.unitary.clone(),
        })
        .collect()
}

/// Absorb core entries that already follow a periodic template.
fn compact_rules(s: &mut EpSeq<Vec<BlockRule>>) {
    while let Some(last) = s.core.last() {
        let r = s.right.len();
        if !rules_match(last, &s.right[r - 1], -1) {
            break;
        }
        let v = with_strides(last, &s.right[r - 1]);
        s.core.pop();
        s.right.rotate_right(1);
        s.right[0] = v;
    }
    if s.left.is_empty() {
        return;
    }
    while let Some(first) = s.core.first() {
        if !rules_match(first, &s.left[0], 1) {
            break;
        }
        let v = with_strides(first, &s.left[0]);
        s.core.remove(0);
        s.left.rotate_left(1);
        let l = s.left.len();
        s.left[l - 1] = v;
        s.lo += 1;
    }
}

fn identity_rule(summand: &Summand, j: usize) -> SummandRule {
    let dims = summand.blocks().dims().to_vec();
    let rules = |coord: i64, stride: i64| -> Vec<BlockRule> {
        dims.iter()
            .enumerate()
            .map(|(b, &d)| {
                let src = match summand {
                    Summand::Fin { .. } => SourceRef::Fin { summand: j, block: b },
                    Summand::Seq { .. } => SourceRef::Seq { summand: j, coord, block: b, stride },
                };
                BlockRule { sources: vec![src], unitary: linalg::identity(d) }
            })
            .collect()
    };
    match summand {
        Summand::Fin { .. } => SummandRule::Fin(rules(0, 0)),
        Summand::Seq { side: Side::OneSided, .. } => {
            SummandRule::Seq(EpSeq { left: vec![], lo: 1, core: vec![], right: vec![rules(1, 1)] })
        }
        Summand::Seq { side: Side::TwoSided, .. } => {
            SummandRule::Seq(EpSeq { left: vec![rules(-1, 1)], lo: 0, core: vec![], right: vec![rules(0, 1)] })
        }
    }
}

pub(crate) fn remap_rule(rule: &SummandRule, f: &impl Fn(SourceRef) -> SourceRef) -> SummandRule {
    let map = |rs: &Vec<BlockRule>| -> Vec<BlockRule> {
        rs.iter()
            .map(|r| BlockRule { sources: r.sources.iter().map(|s| f(*s)).collect(), unitary: r.unitary.clone() })
            .collect()
    };
    match rule {
        SummandRule::Fin(rs) => SummandRule::Fin(map(rs)),
        SummandRule::Seq(s) => SummandRule::Seq(s.map(map)),
    }
}

fn with_summand(s: SourceRef, summand: usize) -> SourceRef {
    match s {
        SourceRef::Fin { block, .. } => SourceRef::Fin { summand, block },
        SourceRef::Seq { coord, block, stride, .. } => SourceRef::Seq { summand, coord, block, stride },
    }
}

/// Image of a morphism: an algebra isomorphic to the range together with the
/// injective embedding onto it.
#[derive(Debug, Clone)]
pub struct ImageAlgebra {
    pub algebra: ComputableAlgebra,
    pub embedding: StructuralMorphism,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub window: usize,
    pub spanning_elements: usize,
    pub pairs_checked: usize,
    pub unital_defect: f64,
    pub multiplicative_defect: f64,
    pub star_defect: f64,
    pub injective: bool,
    pub surjective: bool,
}

/// Explicit matrix of a morphism between windowed matrix-unit coordinates.
#[derive(Debug, Clone)]
pub struct DenseOracle {
    pub window: usize,
    pub source_units: Vec<(BlockRef, usize, usize)>,
    pub target_units: Vec<(BlockRef, usize, usize)>,
    /// Column `k` holds the target-window coordinates of the image of source unit `k`.
    pub matrix: CMat,
    /// Rows whose value depends only on source coordinates inside the window.
    pub complete: Vec<bool>,
}

impl DenseOracle {
    /// The matrix restricted to complete rows.
    pub fn restricted(&self) -> CMat {
        let rows: Vec<usize> = (0..self.complete.len()).filter(|&i| self.complete[i]).collect();
        CMat::from_fn(rows.len(), self.matrix.ncols(), |i, j| self.matrix[(rows[i], j)])
    }

    pub fn column_of(&self, unit: &(BlockRef, usize, usize)) -> Option<usize> {
        self.source_units.iter().position(|u| u == unit)
    }

    pub fn row_of(&self, unit: &(BlockRef, usize, usize)) -> Option<usize> {
        self.target_units.iter().position(|u| u == unit)
    }
}

impl StructuralMorphism {
    pub fn identity(algebra: &ComputableAlgebra) -> Self {
        let rules = algebra.summands().iter().enumerate().map(|(j, s)| identity_rule(s, j)).collect();
        Self { source: algebra.clone(), target: algebra.clone(), rules }
    }

    /// Morphism between single finite summands.
    pub fn from_fin_hom(h: &FinHom) -> Self {
        let rules = h
            .rules
            .iter()
            .map(|r| BlockRule {
                sources: r.sources.iter().map(|&b| SourceRef::Fin { summand: 0, block: b }).collect(),
                unitary: r.unitary.clone(),
            })
            .collect();
        Self {
            source: ComputableAlgebra::fin(&h.source),
            target: ComputableAlgebra::fin(&h.target),
            rules: vec![SummandRule::Fin(rules)],
        }
    }

    /// Finite-summand view of a morphism between single finite summands.
    pub fn to_fin_hom(&self) -> Result<FinHom> {
        match (self.source.summands(), self.target.summands(), self.rules.as_slice()) {
            ([s @ Summand::Fin { .. }], [t @ Summand::Fin { .. }], [SummandRule::Fin(rs)]) => {
                let rules = rs
                    .iter()
                    .map(|r| FinBlockRule { sources: r.sources.iter().map(|s| s.block_ref().block).collect(), unitary: r.unitary.clone() })
                    .collect();
                FinHom::new(s.blocks(), t.blocks(), rules)
            }
            _ => bail!(Kind, "not a morphism between single finite summands"),
        }
    }

    /// `σ₊^k` on a one-sided sequence algebra, `σ^k` on a two-sided one.
    pub fn shift(base: &BlockAlgebra, side: Side, k: i64) -> Result<Self> {
        let alg = ComputableAlgebra::seq(base, side);
        if side == Side::OneSided && k < 0 {
            bail!(Construction, "backward shift powers must be nonnegative");
        }
        let rules = |coord: i64| -> Vec<BlockRule> {
            base.dims()
                .iter()
                .enumerate()
                .map(|(b, &d)| BlockRule {
                    sources: vec![SourceRef::Seq { summand: 0, coord, block: b, stride: 1 }],
                    unitary: linalg::identity(d),
                })
                .collect()
        };
        let seq = match side {
            Side::OneSided => EpSeq { left: vec![], lo: 1, core: vec![], right: vec![rules(1 + k)] },
            Side::TwoSided => EpSeq { left: vec![rules(k - 1)], lo: 0, core: vec![], right: vec![rules(k)] },
        };
        Self::new(alg.clone(), alg, vec![SummandRule::Seq(seq)])
    }

    /// Restriction `Seq_ℤ(K) → Seq₊(K)` to the coordinates `n ≥ 1`.
    pub fn positive_part(base: &BlockAlgebra) -> Result<Self> {
        let rules: Vec<BlockRule> = base
            .dims()
            .iter()
            .enumerate()
            .map(|(b, &d)| BlockRule {
                sources: vec![SourceRef::Seq { summand: 0, coord: 1, block: b, stride: 1 }],
                unitary: linalg::identity(d),
            })
            .collect();
        let seq = EpSeq { left: vec![], lo: 1, core: vec![], right: vec![rules] };
        Self::new(ComputableAlgebra::seq(base, Side::TwoSided), ComputableAlgebra::seq(base, Side::OneSided), vec![
            SummandRule::Seq(seq),
        ])
    }

    /// Coordinatewise application of an eventually periodic family of
    /// finite-dimensional homomorphisms with common source and target.
    pub fn coordinate_map(family: &EpSeq<FinHom>) -> Result<Self> {
        let first = family.right[0].clone();
        let side = family.side();
        for h in family.left.iter().chain(&family.core).chain(&family.right) {
            if h.source != first.source || h.target != first.target {
                bail!(Shape, "coordinate maps must share source and target");
            }
        }
        let rules = |h: &FinHom, coord: i64, stride: i64| -> Vec<BlockRule> {
            h.rules
                .iter()
                .map(|r| BlockRule {
                    sources: r.sources.iter().map(|&b| SourceRef::Seq { summand: 0, coord, block: b, stride }).collect(),
                    unitary: r.unitary.clone(),
                })
                .collect()
        };
        let hi = family.hi();
        let r = family.right.len() as i64;
        let l = family.left.len() as i64;
        let seq = EpSeq {
            left: family.left.iter().enumerate().map(|(k, h)| rules(h, family.lo - l + k as i64, l)).collect(),
            lo: family.lo,
            core: family.core.iter().enumerate().map(|(k, h)| rules(h, family.lo + k as i64, 0)).collect(),
            right: family.right.iter().enumerate().map(|(k, h)| rules(h, hi + k as i64, r)).collect(),
        };
        Self::new(ComputableAlgebra::seq(&first.source, side), ComputableAlgebra::seq(&first.target, side), vec![
            SummandRule::Seq(seq),
        ])
    }

    /// Summand-wise direct sum `f₁ ⊕ f₂ ⊕ …`.
    pub fn direct_sum(parts: &[StructuralMorphism]) -> Result<Self> {
        let mut source = ComputableAlgebra::zero_algebra();
        let mut target = ComputableAlgebra::zero_algebra();
        let mut rules = Vec::new();
        for f in parts {
            let offset = source.summands().len();
            rules.extend(f.rules.iter().map(|r| remap_rule(r, &|s: SourceRef| with_summand(s, s.summand() + offset))));
            source = source.direct_sum(&f.source);
            target = target.direct_sum(&f.target);
        }
        Self::new(source, target, rules)
    }

    /// Isomorphism moving source summand `j` to target position `perm[j]`.
    pub fn routing(algebra: &ComputableAlgebra, perm: &[usize]) -> Result<Self> {
        let n = algebra.summands().len();
        let mut inv = vec![usize::MAX; n];
        for (j, &p) in perm.iter().enumerate() {
            if p >= n || inv[p] != usize::MAX {
                bail!(Construction, "routing must be a permutation of the {n} summands");
            }
            inv[p] = j;
        }
        if perm.len() != n {
            bail!(Construction, "routing must be a permutation of the {n} summands");
        }
        let summands = inv.iter().map(|&j| algebra.summands()[j].clone()).collect();
        let rules = inv.iter().map(|&j| identity_rule(&algebra.summands()[j], j)).collect();
        Self::new(algebra.clone(), ComputableAlgebra::new(summands)?, rules)
    }

    /// `ρ ↦ ρ∘f`: the target density `ρ_t` contributes the diagonal blocks of
    /// `U* ρ_t U` to the listed source blocks.
    pub fn predual_compose(&self, rho: &Functional) -> Result<Functional> {
        if rho.parts.len() != self.target.summands().len() {
            bail!(Shape, "functional has {} parts, target has {} summands", rho.parts.len(), self.target.summands().len());
        }
        for (p, s) in rho.parts.iter().zip(self.target.summands()) {
            match (p, s) {
                (FunctionalPart::Fin(f), Summand::Fin { dims }) if f.dims() == *dims => {}
                (FunctionalPart::Seq(m), Summand::Seq { base, side }) => {
                    if m.values().any(|v| v.iter().map(|d| d.nrows()).collect::<Vec<_>>() != *base) {
                        bail!(Shape, "sequence functional densities do not match the base");
                    }
                    if *side == Side::OneSided && m.keys().any(|&n| n < 1) {
                        bail!(Shape, "one-sided functional supported below index 1");
                    }
                }
                _ => bail!(Shape, "functional part does not match target summand"),
            }
        }
        let mut out = Functional::zero(&self.source);
        for t in rho.support(&self.target) {
            let d = self.target.block_dim(&t);
            let dens = rho.density(&t, d);
            if linalg::max_abs(&dens) == 0.0 {
                continue;
            }
            let rule = self.rule_at(&t);
            let m = rule.unitary.adjoint() * dens * &rule.unitary;
            let mut off = 0;
            for s in &rule.sources {
                let r = s.block_ref();
                let sd = self.source.block_dim(&r);
                out.accumulate(&self.source, &r, &m.view((off, off), (sd, sd)).into_owned());
                off += sd;
            }
        }
        Ok(out)
    }

    /// The range `f(M) ≅ (1 − z)M` with `z` the kernel projection.
    pub fn image_algebra(&self) -> Result<ImageAlgebra> {
        let kernel = self.kernel_projection();
        let mut summands = Vec::new();
        // (source summand, block) ↦ (image summand, block, coordinate offset)
        let mut remap: BTreeMap<(usize, usize), (usize, usize, i64)> = BTreeMap::new();
        for (j, (s, part)) in self.source.summands().iter().zip(&kernel.parts).enumerate() {
            let dims = s.blocks().dims().to_vec();
            let (alive, offset, side) = match (s, part) {
                (Summand::Fin { .. }, MaskPart::Fin(m)) => (m.iter().map(|k| !k).collect::<Vec<_>>(), 0, None),
                (Summand::Seq { side, .. }, MaskPart::Seq(m)) => {
                    let v = &m.right[0];
                    let uniform_periods = m.right.iter().chain(&m.left).all(|x| x == v);
                    let offset = match side {
                        Side::OneSided if uniform_periods && m.core.iter().all(|x| x.iter().all(|k| *k)) => m.core.len() as i64,
                        Side::TwoSided if uniform_periods && m.core.is_empty() => 0,
                        _ => bail!(Precondition, "kernel of sequence summand {j} is not a shifted constant mask; its image is not a sequence algebra"),
                    };
                    (v.iter().map(|k| !k).collect(), offset, Some(*side))
                }
                _ => bail!(Internal, "kernel mask kinds do not match the source"),
            };
            let kept: Vec<usize> = (0..dims.len()).filter(|&b| alive[b]).collect();
            if kept.is_empty() {
                continue;
            }
            let idx = summands.len();
            for (nb, &b) in kept.iter().enumerate() {
                remap.insert((j, b), (idx, nb, offset));
            }
            let kd: Vec<usize> = kept.iter().map(|&b| dims[b]).collect();
            summands.push(match side {
                None => Summand::Fin { dims: kd },
                Some(side) => Summand::Seq { base: kd, side },
            });
        }
        let algebra = ComputableAlgebra::new(summands)?;
        let map = |s: SourceRef| -> SourceRef {
            let r = s.block_ref();
            let (idx, block, offset) = remap[&(r.summand, r.block)];
            match s {
                SourceRef::Fin { .. } => SourceRef::Fin { summand: idx, block },
                SourceRef::Seq { coord, stride, .. } => SourceRef::Seq { summand: idx, coord: coord - offset, block, stride },
            }
        };
        let rules = self.rules.iter().map(|r| remap_rule(r, &map)).collect();
        let embedding = StructuralMorphism::new(algebra.clone(), self.target.clone(), rules)?;
        if self.source.is_finite_dimensional() && self.target.is_finite_dimensional() && self.target.summands().len() == 1 {
            self.cross_check_image(&algebra)?;
        }
        Ok(ImageAlgebra { algebra, embedding })
    }

    fn cross_check_image(&self, algebra: &ComputableAlgebra) -> Result<()> {
        let parent = self.target.summands()[0].blocks();
        let gens: Vec<_> = self
            .source
            .window_units(0)
            .iter()
            .map(|(r, a, b)| match self.apply(&self.source.matrix_unit(r, *a, *b)) {
                Ok(y) => match &y.parts[0] {
                    Part::Fin(v) => Ok(v.clone()),
                    Part::Seq(_) => bail!(Internal, "finite target produced a sequence"),
                },
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?;
        let sub = crate::algebra::subalgebra_structure(&parent, &gens, 7, DEFAULT_TOL)?;
        let mut a: Vec<usize> = sub.algebra.dims().to_vec();
        let mut b: Vec<usize> = algebra.summands().iter().flat_map(|s| s.blocks().dims().to_vec()).collect();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            bail!(Internal, "structural image dims {b:?} disagree with the span computation {a:?}");
        }
        Ok(())
    }

    /// Smallest window covering preperiod + 2·period of every rule sequence.
    pub fn min_window(&self) -> usize {
        self.rules
            .iter()
            .map(|r| match r {
                SummandRule::Fin(_) => 0,
                SummandRule::Seq(s) => {
                    let extent = s.lo.abs().max(s.hi().abs()) as usize;
                    extent + 2 * s.left.len().max(s.right.len())
                }
            })
            .max()
            .unwrap_or(0)
    }

    fn source_in_window(&self, s: &SourceRef, w: usize) -> bool {
        match s {
            SourceRef::Fin { .. } => true,
            SourceRef::Seq { summand, coord, .. } => {
                let side = self.source.summands()[*summand].side().expect("sequence summand");
                crate::seq::window_range(side, w).contains(coord)
            }
        }
    }

    /// Check unitality, multiplicativity and the *-property on windowed matrix
    /// units. Products of units from different blocks reduce to products of the
    /// diagonal units `e_00`, so cross-block pairs use only those.
    pub fn validate(&self, tol: f64) -> Result<ValidationReport> {
        self.check_index_law()?;
        let w = self.min_window().max(1);
        let one = self.apply(&self.source.identity())?;
        let unital_defect = one.distance(&self.target.identity());
        if unital_defect > tol {
            bail!(Verification, "f(1) differs from 1 by {unital_defect:.3e}");
        }
        for site in self.rule_sites() {
            if !linalg::is_unitary(&site.rule.unitary, tol) {
                bail!(Verification, "conjugating matrix for target block {:?} is not unitary", site.target);
            }
        }
        let units = self.source.window_units(w);
        let mut images = BTreeMap::new();
        for (idx, (r, a, b)) in units.iter().enumerate() {
            images.insert(idx, self.apply(&self.source.matrix_unit(r, *a, *b))?);
        }
        let mut mult: f64 = 0.0;
        let mut star: f64 = 0.0;
        let mut pairs = 0;
        for (i, (r1, a1, b1)) in units.iter().enumerate() {
            let adj = units.iter().position(|u| *u == (*r1, *b1, *a1)).expect("transpose unit in window");
            let s = images[&i].adjoint().distance(&images[&adj]);
            if s > tol {
                bail!(Verification, "f(x*) ≠ f(x)* for x = e_{a1}{b1} on {r1:?} (defect {s:.3e})");
            }
            star = star.max(s);
            for (j, (r2, a2, b2)) in units.iter().enumerate() {
                let same = r1 == r2;
                if !same && !(*a1 == 0 && *b1 == 0 && *a2 == 0 && *b2 == 0) {
                    continue;
                }
                let lhs = images[&i].mul(&images[&j])?;
                let rhs = if same && b1 == a2 {
                    images[&units.iter().position(|u| *u == (*r1, *a1, *b2)).expect("unit in window")].clone()
                } else {
                    self.target.zero()
                };
                let d = lhs.distance(&rhs);
                if d > tol {
                    bail!(Verification, "f(xy) ≠ f(x)f(y) for x = e_{a1}{b1} on {r1:?}, y = e_{a2}{b2} on {r2:?} (defect {d:.3e})");
                }
                mult = mult.max(d);
                pairs += 1;
            }
        }
        Ok(ValidationReport {
            window: w,
            spanning_elements: units.len(),
            pairs_checked: pairs,
            unital_defect,
            multiplicative_defect: mult,
            star_defect: star,
            injective: self.is_injective(),
            surjective: self.is_surjective(),
        })
    }

    /// Explicit matrix of the morphism on windowed matrix units, computed by
    /// applying it to each unit.
    pub fn dense_oracle(&self, w: usize) -> Result<DenseOracle> {
        let need = self.min_window();
        if w < need {
            bail!(Precondition, "window {w} is below the required minimum {need}");
        }
        let source_units = self.source.window_units(w);
        let target_units = self.target.window_units(w);
        let mut matrix = CMat::zeros(target_units.len(), source_units.len());
        for (k, (r, a, b)) in source_units.iter().enumerate() {
            let y = self.apply(&self.source.matrix_unit(r, *a, *b))?;
            for (i, (t, c, d)) in target_units.iter().enumerate() {
                matrix[(i, k)] = y.block_value(t)[(*c, *d)];
            }
        }
        let complete = target_units
            .iter()
            .map(|(t, _, _)| self.rule_at(t).sources.iter().all(|s| self.source_in_window(s, w)))
            .collect();
        Ok(DenseOracle { window: w, source_units, target_units, matrix, complete })
    }

    /// `id_k ⊗ f` on `M_k ⊗ source → M_k ⊗ target`, with `M_k` as the left
    /// tensor factor.
    pub fn promote(&self, k: usize) -> Result<StructuralMorphism> {
        if k == 0 {
            bail!(Construction, "matrix level must be positive");
        }
        let source = self.source.promote(k);
        let target = self.target.promote(k);
        let promote_rule = |r: &BlockRule| -> BlockRule {
            let dims: Vec<usize> = r.sources.iter().map(|s| self.source.block_dim(&s.block_ref())).collect();
            BlockRule { sources: r.sources.clone(), unitary: promote_unitary(&r.unitary, &dims, k) }
        };
        let rules = self
            .rules
            .iter()
            .map(|r| match r {
                SummandRule::Fin(rs) => SummandRule::Fin(rs.iter().map(promote_rule).collect()),
                SummandRule::Seq(s) => SummandRule::Seq(s.map(|rs| rs.iter().map(promote_rule).collect())),
            })
            .collect();
        StructuralMorphism::new(source, target, rules)
    }
}

/// `(I_k ⊗ U) · Π`, where `Π` carries the source-major layout
/// `⊕_l (ℂ^k ⊗ ℂ^{d_l})` onto `ℂ^k ⊗ ⊕_l ℂ^{d_l}`.
pub fn promote_unitary(u: &CMat, dims: &[usize], k: usize) -> CMat {
    let total: usize = dims.iter().sum();
    let mut perm = Vec::with_capacity(k * total);
    let mut inner_off = 0;
    for &d in dims {
        for i in 0..k {
            for a in 0..d {
                perm.push(i * total + inner_off + a);
            }
        }
        inner_off += d;
    }
    linalg::kron(&linalg::identity(k), u) * linalg::permutation_matrix(&perm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{AlgebraElement, NormalFunctional};
    use crate::linalg::c;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cc() -> BlockAlgebra {
        BlockAlgebra::new(vec![1]).unwrap()
    }

    fn swap_bb() -> StructuralMorphism {
        let c2 = BlockAlgebra::new(vec![1, 1]).unwrap();
        StructuralMorphism::from_fin_hom(&FinHom::from_multiplicities(c2.clone(), c2, &[vec![0, 1], vec![0, 1]], None).unwrap())
    }

    fn scalar_seq(vals: &[f64]) -> Element {
        let v: Vec<_> = vals.iter().map(|&x| cc().identity().scale(c(x, 0.0))).collect();
        Element::new(vec![Part::Seq(SeqElement::one_sided(&cc(), v, vec![cc().zero()]).unwrap())])
    }

    fn coords(x: &Element, n: std::ops::RangeInclusive<i64>) -> Vec<f64> {
        n.map(|k| x.block_value(&BlockRef { summand: 0, coord: k, block: 0 })[(0, 0)].re).collect()
    }

    #[test]
    fn identity_is_valid_and_fixes_elements() {
        let alg = ComputableAlgebra::new(vec![
            Summand::Fin { dims: vec![2, 1] },
            Summand::Seq { base: vec![1, 2], side: Side::TwoSided },
        ])
        .unwrap();
        let id = StructuralMorphism::identity(&alg);
        let rep = id.validate(1e-10).unwrap();
        assert!(rep.injective && rep.surjective);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = alg.random_element(&mut rng, 2, 3);
        assert!(id.apply(&x).unwrap().approx_eq(&x, 1e-12));
    }

    #[test]
    fn backward_shift_kernel_and_surjectivity() {
        let s = StructuralMorphism::shift(&cc(), Side::OneSided, 1).unwrap();
        let rep = s.validate(1e-10).unwrap();
        assert!(rep.surjective && !rep.injective);
        let z = s.kernel_projection();
        assert!(z.contains(&BlockRef { summand: 0, coord: 1, block: 0 }));
        assert!(!z.contains(&BlockRef { summand: 0, coord: 2, block: 0 }));
        let MaskPart::Seq(m) = &z.parts[0] else { panic!() };
        assert_eq!(m.core, vec![vec![true]]);
    }

    #[test]
    fn collapse_map_kernel_image_predual() {
        let f = swap_bb();
        let rep = f.validate(1e-10).unwrap();
        assert!(!rep.surjective);
        assert_eq!(f.kernel_projection().parts, vec![MaskPart::Fin(vec![true, false])]);
        let img = f.image_algebra().unwrap();
        assert_eq!(img.algebra.summands(), &[Summand::Fin { dims: vec![1] }]);
        let rho = Functional {
            parts: vec![FunctionalPart::Fin(NormalFunctional::new(vec![
                CMat::from_element(1, 1, c(0.3, 0.0)),
                CMat::from_element(1, 1, c(-0.7, 0.0)),
            ]))],
        };
        let out = f.predual_compose(&rho).unwrap();
        let FunctionalPart::Fin(g) = &out.parts[0] else { panic!() };
        assert!(g.densities()[0][(0, 0)].norm() < 1e-15);
        assert!((g.densities()[1][(0, 0)] - c(-0.4, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn shift_composition() {
        let s = StructuralMorphism::shift(&cc(), Side::OneSided, 1).unwrap();
        let s2 = s.compose(&s).unwrap();
        assert_eq!(s2, StructuralMorphism::shift(&cc(), Side::OneSided, 2).unwrap());
        let x = scalar_seq(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(coords(&s2.apply(&x).unwrap(), 1..=4), vec![3.0, 4.0, 5.0, 0.0]);
        assert_eq!(s.compose(&StructuralMorphism::identity(s.source())).unwrap(), s);
    }

    #[test]
    fn multiplicity_matrices_multiply() {
        let a = BlockAlgebra::new(vec![1, 2]).unwrap();
        let b = BlockAlgebra::new(vec![3, 2]).unwrap();
        let c3 = BlockAlgebra::new(vec![5, 7]).unwrap();
        let g = FinHom::from_multiplicities(a.clone(), b.clone(), &[vec![1, 1], vec![0, 1]], None).unwrap();
        let f = FinHom::from_multiplicities(b, c3, &[vec![1, 1], vec![1, 2]], None).unwrap();
        let fg = StructuralMorphism::from_fin_hom(&f).compose(&StructuralMorphism::from_fin_hom(&g)).unwrap();
        assert_eq!(fg.to_fin_hom().unwrap().multiplicity_matrix(), vec![vec![1, 2], vec![1, 3]]);
        fg.validate(1e-10).unwrap();
    }

    #[test]
    fn shift_moves_functional_support() {
        let s = StructuralMorphism::shift(&cc(), Side::OneSided, 1).unwrap();
        let mut m = BTreeMap::new();
        m.insert(3, vec![CMat::from_element(1, 1, c(0.5, 0.25))]);
        let rho = Functional { parts: vec![FunctionalPart::Seq(m)] };
        let out = s.predual_compose(&rho).unwrap();
        let FunctionalPart::Seq(o) = &out.parts[0] else { panic!() };
        assert_eq!(o.keys().copied().collect::<Vec<_>>(), vec![4]);
        assert_eq!(o[&4][0][(0, 0)], c(0.5, 0.25));
    }

    #[test]
    fn shift_oracle_is_shift_matrix() {
        let s = StructuralMorphism::shift(&cc(), Side::OneSided, 1).unwrap();
        assert!(matches!(s.dense_oracle(2), Err(crate::Error::Precondition(_))));
        let o = s.dense_oracle(4).unwrap();
        let m = o.restricted();
        assert_eq!((m.nrows(), m.ncols()), (3, 4));
        for i in 0..3 {
            for j in 0..4 {
                let expect = if j == i + 1 { 1.0 } else { 0.0 };
                assert_eq!(m[(i, j)], c(expect, 0.0));
            }
        }
        let ns = linalg::null_space(&m, 1e-10);
        assert_eq!(ns.ncols(), 1);
        assert!((ns[(0, 0)].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_embedding_image() {
        let m2 = BlockAlgebra::new(vec![2]).unwrap();
        let t = BlockAlgebra::new(vec![2, 2]).unwrap();
        let f = StructuralMorphism::from_fin_hom(&FinHom::from_multiplicities(m2, t, &[vec![1], vec![1]], None).unwrap());
        let img = f.image_algebra().unwrap();
        assert_eq!(img.algebra.summands(), &[Summand::Fin { dims: vec![2] }]);
        assert_eq!(linalg::rank(&f.dense_oracle(0).unwrap().matrix, 1e-10), 4);
    }

    #[test]
    fn inverses_of_shifts_and_coordinate_maps() {
        let k = BlockAlgebra::new(vec![1, 2]).unwrap();
        let sigma = StructuralMorphism::shift(&k, Side::TwoSided, 1).unwrap();
        let inv = sigma.inverse().unwrap();
        assert_eq!(inv, StructuralMorphism::shift(&k, Side::TwoSided, -1).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fam = EpSeq {
            left: vec![],
            lo: 1,
            core: vec![FinHom::from_multiplicities(k.clone(), k.clone(), &[vec![1, 0], vec![0, 1]], Some(vec![linalg::identity(1), linalg::random_unitary(2, &mut rng)])).unwrap()],
            right: (0..3)
                .map(|_| {
                    FinHom::from_multiplicities(k.clone(), k.clone(), &[vec![1, 0], vec![0, 1]], Some(vec![linalg::random_unitary(1, &mut rng), linalg::random_unitary(2, &mut rng)])).unwrap()
                })
                .collect(),
        };
        let g = StructuralMorphism::coordinate_map(&fam).unwrap();
        let gi = g.inverse().unwrap();
        let alg = g.source().clone();
        let x = alg.random_element(&mut rng, 2, 4);
        assert!(gi.apply(&g.apply(&x).unwrap()).unwrap().approx_eq(&x, 1e-12));
        let h = g.compose(&StructuralMorphism::shift(&k, Side::OneSided, 1).unwrap()).unwrap();
        assert!(!h.is_isomorphism());
        assert!(matches!(h.inverse(), Err(crate::Error::Precondition(_))));
    }

    #[test]
    fn predual_duality_and_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = BlockAlgebra::new(vec![1, 2]).unwrap();
        let f = StructuralMorphism::direct_sum(&[
            swap_bb(),
            StructuralMorphism::shift(&k, Side::OneSided, 2).unwrap(),
            StructuralMorphism::shift(&k, Side::TwoSided, -1).unwrap(),
        ])
        .unwrap();
        f.validate(1e-10).unwrap();
        for _ in 0..20 {
            let rho = Functional::random(f.target(), &mut rng, 5);
            let x = f.source().random_element(&mut rng, 3, 3);
            let lhs = f.predual_compose(&rho).unwrap().apply(&x).unwrap();
            let rhs = rho.apply(&f.apply(&x).unwrap()).unwrap();
            assert!((lhs - rhs).norm() < 1e-10);
            assert!(f.predual_compose(&rho).unwrap().norm() <= rho.norm() + 1e-10);
        }
    }

    #[test]
    fn routing_permutes_summands() {
        let alg = ComputableAlgebra::new(vec![
            Summand::Fin { dims: vec![2] },
            Summand::Seq { base: vec![1], side: Side::OneSided },
        ])
        .unwrap();
        let r = StructuralMorphism::routing(&alg, &[1, 0]).unwrap();
        assert_eq!(r.target().summands()[0], alg.summands()[1]);
        let back = r.inverse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = alg.random_element(&mut rng, 2, 2);
        assert!(back.apply(&r.apply(&x).unwrap()).unwrap().approx_eq(&x, 1e-12));
        assert!(StructuralMorphism::routing(&alg, &[0, 0]).is_err());
    }

    #[test]
    fn promotion_acts_as_id_tensor_f() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = BlockAlgebra::new(vec![1, 2]).unwrap();
        let t = BlockAlgebra::new(vec![3, 2]).unwrap();
        let u = vec![linalg::random_unitary(3, &mut rng), linalg::random_unitary(2, &mut rng)];
        let f = FinHom::from_multiplicities(a.clone(), t, &[vec![1, 1], vec![0, 1]], Some(u)).unwrap();
        let sf = StructuralMorphism::from_fin_hom(&f);
        let k = 2;
        let pf = sf.promote(k).unwrap();
        pf.validate(1e-10).unwrap();
        let m = linalg::random_matrix(k, k, &mut rng);
        let x = a.random_element(&mut rng);
        let fx = f.apply(&x).unwrap();
        let lift = |e: &AlgebraElement| Element::new(vec![Part::Fin(AlgebraElement::new(e.blocks().iter().map(|b| linalg::kron(&m, b)).collect()))]);
        assert!(pf.apply(&lift(&x)).unwrap().approx_eq(&lift(&fx), 1e-12));
    }
}
