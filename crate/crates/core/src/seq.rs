//! Eventually periodic sequences over a block algebra `K`.
//!
//! These model `ℓ∞(ℕ, K)` (one-sided, indices `1, 2, …`) and `ℓ∞(ℤ, K)`
//! (two-sided) by the weak*-dense unital *-subalgebra of sequences that are
//! periodic beyond finitely many indices in each direction. Every operation is
//! exact on this class; it is not weak*-closed.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{AlgebraElement, BlockAlgebra, NormalFunctional, DEFAULT_TOL};
use crate::error::{bail, Result};
use crate::linalg::{self, CMat, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    OneSided,
    TwoSided,
}

/// Integer-indexed eventually periodic data.
///
/// Indices `lo..hi` (with `hi = lo + core.len()`) hold `core`; indices `≥ hi`
/// repeat `right`; indices `< lo` repeat `left` with `left.last()` at `lo - 1`.
/// One-sided sequences have `lo = 1` and an empty `left`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpSeq<T> {
    pub left: Vec<T>,
    pub lo: i64,
    pub core: Vec<T>,
    pub right: Vec<T>,
}

/// Where an index falls, with the repetition count `t` (0 nearest the core).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Left { pos: usize, rep: i64 },
    Core { pos: usize },
    Right { pos: usize, rep: i64 },
}

impl<T: Clone> EpSeq<T> {
    pub fn constant(side: Side, value: T) -> Self {
        match side {
            Side::OneSided => Self { left: vec![], lo: 1, core: vec![], right: vec![value] },
            Side::TwoSided => Self { left: vec![value.clone()], lo: 0, core: vec![], right: vec![value] },
        }
    }

    pub fn side(&self) -> Side {
        if self.left.is_empty() {
            Side::OneSided
        } else {
            Side::TwoSided
        }
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.core.len() as i64
    }

    pub fn first_index(&self) -> Option<i64> {
        match self.side() {
            Side::OneSided => Some(self.lo),
            Side::TwoSided => None,
        }
    }

    pub fn slot(&self, n: i64) -> Option<Slot> {
        let hi = self.hi();
        if n >= hi {
            let r = self.right.len() as i64;
            let k = n - hi;
            Some(Slot::Right { pos: (k % r) as usize, rep: k / r })
        } else if n >= self.lo {
            Some(Slot::Core { pos: (n - self.lo) as usize })
        } else if self.left.is_empty() {
            None
        } else {
            let l = self.left.len() as i64;
            let k = self.lo - 1 - n;
            Some(Slot::Left { pos: (l - 1 - k % l) as usize, rep: k / l })
        }
    }

    pub fn get(&self, n: i64) -> Option<&T> {
        self.slot(n).map(|s| match s {
            Slot::Left { pos, .. } => &self.left[pos],
            Slot::Core { pos } => &self.core[pos],
            Slot::Right { pos, .. } => &self.right[pos],
        })
    }

    pub fn at(&self, n: i64) -> &T {
        self.get(n).unwrap_or_else(|| panic!("index {n} outside a one-sided sequence"))
    }

    /// Sample `f` on `lo..hi` for the core, `hi..hi+right_period` for the right
    /// period and (two-sided) `lo-left_period..lo` for the left period.
    pub fn sample(side: Side, lo: i64, hi: i64, left_period: usize, right_period: usize, f: impl Fn(i64) -> T) -> Self {
        assert!(right_period >= 1 && hi >= lo);
        let (lo, left) = match side {
            Side::OneSided => {
                assert!(lo >= 1);
                (lo, Vec::new())
            }
            Side::TwoSided => {
                assert!(left_period >= 1);
                (lo, (lo - left_period as i64..lo).map(&f).collect())
            }
        };
        let core = (lo..hi).map(&f).collect();
        let right = (hi..hi + right_period as i64).map(&f).collect();
        let mut s = Self { left, lo, core, right };
        if side == Side::OneSided && lo > 1 {
            // One-sided sequences always start at index 1.
            let mut pre: Vec<T> = (1..lo).map(&f).collect();
            pre.append(&mut s.core);
            s.core = pre;
            s.lo = 1;
        }
        s
    }

    pub fn map<U: Clone>(&self, f: impl Fn(&T) -> U) -> EpSeq<U> {
        EpSeq {
            left: self.left.iter().map(&f).collect(),
            lo: self.lo,
            core: self.core.iter().map(&f).collect(),
            right: self.right.iter().map(&f).collect(),
        }
    }

    /// Bring to canonical form under the equivalence `eq`: minimal periods,
    /// minimal core, core anchored at the first index the left period does not
    /// govern; purely periodic two-sided sequences are anchored at `lo = 0`.
    pub fn normalize(&mut self, eq: impl Fn(&T, &T) -> bool) {
        self.right = minimal_period(&self.right, &eq);
        if !self.left.is_empty() {
            self.left = minimal_period(&self.left, &eq);
        }
        // Absorb the core's tail into the right period.
        while let Some(last) = self.core.last() {
            let r = self.right.len();
            if eq(last, &self.right[r - 1]) {
                let v = self.core.pop().unwrap();
                self.right.rotate_right(1);
                self.right[0] = v;
            } else {
                break;
            }
        }
        if self.left.is_empty() {
            return;
        }
        if self.core.is_empty()
            && self.left.len() == self.right.len()
            && self.left.iter().zip(&self.right).all(|(a, b)| eq(a, b))
        {
            // Purely periodic: re-anchor at 0.
            let p = self.right.len() as i64;
            let shift = (-self.lo).rem_euclid(p) as usize;
            let mut period = self.right.clone();
            period.rotate_left(shift);
            self.left = period.clone();
            self.right = period;
            self.lo = 0;
            return;
        }
        // Absorb leading core entries (and, once the core is empty, leading
        // right-period entries) into the left period.
        loop {
            let first = if let Some(v) = self.core.first() { v.clone() } else { self.right[0].clone() };
            if !eq(&first, &self.left[0]) {
                break;
            }
            self.left.rotate_left(1);
            let l = self.left.len();
            self.left[l - 1] = first;
            if !self.core.is_empty() {
                self.core.remove(0);
            } else {
                self.right.rotate_left(1);
            }
            self.lo += 1;
        }
    }
}

impl<T: Clone> EpSeq<T> {
    /// Pointwise combination with both sequences sampled on aligned bounds.
    pub fn zip_with<U: Clone, V: Clone>(&self, other: &EpSeq<U>, f: impl Fn(&T, &U) -> V) -> EpSeq<V> {
        let side = self.side();
        assert_eq!(side, other.side(), "sequence sides differ");
        let lo = self.lo.min(other.lo);
        let hi = self.hi().max(other.hi());
        let r = lcm(self.right.len(), other.right.len());
        let l = lcm(self.left.len(), other.left.len());
        EpSeq::sample(side, lo, hi, l, r, |n| f(self.at(n), other.at(n)))
    }
}

fn minimal_period<T: Clone>(v: &[T], eq: &impl Fn(&T, &T) -> bool) -> Vec<T> {
    let n = v.len();
    for p in 1..=n {
        if n % p == 0 && (p..n).all(|i| eq(&v[i], &v[i - p])) {
            return v[..p].to_vec();
        }
    }
    v.to_vec()
}

pub fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn lcm(a: usize, b: usize) -> usize {
    if a == 0 || b == 0 {
        a.max(b)
    } else {
        a / gcd(a, b) * b
    }
}

/// Eventually periodic sequence of elements of a block algebra.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqElement {
    base: BlockAlgebra,
    data: EpSeq<AlgebraElement>,
}

fn elem_eq(a: &AlgebraElement, b: &AlgebraElement) -> bool {
    a.approx_eq(b, DEFAULT_TOL)
}

impl SeqElement {
    /// Build from raw one-sided data (`preperiod`, `period`).
    pub fn one_sided(base: &BlockAlgebra, preperiod: Vec<AlgebraElement>, period: Vec<AlgebraElement>) -> Result<Self> {
        if period.is_empty() {
            bail!(Construction, "period must be nonempty");
        }
        Self::from_data(base, EpSeq { left: vec![], lo: 1, core: preperiod, right: period })
    }

    /// Build from raw two-sided data; `core[0]` sits at index `lo`.
    pub fn two_sided(
        base: &BlockAlgebra,
        left_period: Vec<AlgebraElement>,
        lo: i64,
        core: Vec<AlgebraElement>,
        right_period: Vec<AlgebraElement>,
    ) -> Result<Self> {
        if left_period.is_empty() || right_period.is_empty() {
            bail!(Construction, "periods must be nonempty");
        }
        Self::from_data(base, EpSeq { left: left_period, lo, core, right: right_period })
    }

    pub fn from_data(base: &BlockAlgebra, mut data: EpSeq<AlgebraElement>) -> Result<Self> {
        if data.right.is_empty() {
            bail!(Construction, "period must be nonempty");
        }
        if data.left.is_empty() && data.lo != 1 {
            bail!(Construction, "one-sided sequences start at index 1");
        }
        for v in data.left.iter().chain(&data.core).chain(&data.right) {
            base.check_element(v)?;
        }
        data.normalize(elem_eq);
        Ok(Self { base: base.clone(), data })
    }

    pub fn sample(
        base: &BlockAlgebra,
        side: Side,
        lo: i64,
        hi: i64,
        left_period: usize,
        right_period: usize,
        f: impl Fn(i64) -> AlgebraElement,
    ) -> Self {
        let mut data = EpSeq::sample(side, lo, hi, left_period, right_period, f);
        data.normalize(elem_eq);
        Self { base: base.clone(), data }
    }

    pub fn constant(base: &BlockAlgebra, side: Side, value: AlgebraElement) -> Self {
        Self { base: base.clone(), data: EpSeq::constant(side, value) }
    }

    pub fn zero(base: &BlockAlgebra, side: Side) -> Self {
        Self::constant(base, side, base.zero())
    }

    pub fn identity(base: &BlockAlgebra, side: Side) -> Self {
        Self::constant(base, side, base.identity())
    }

    /// The sequence equal to `value` at index `n` and zero elsewhere.
    pub fn supported_at(base: &BlockAlgebra, side: Side, n: i64, value: AlgebraElement) -> Self {
        let zero = base.zero();
        let lo = match side {
            Side::OneSided => 1,
            Side::TwoSided => n,
        };
        Self::sample(base, side, lo, n + 1, 1, 1, |k| if k == n { value.clone() } else { zero.clone() })
    }

    pub fn base(&self) -> &BlockAlgebra {
        &self.base
    }

    pub fn side(&self) -> Side {
        self.data.side()
    }

    pub fn data(&self) -> &EpSeq<AlgebraElement> {
        &self.data
    }

    /// Value at index `n`; zero of the base outside a one-sided domain.
    pub fn at(&self, n: i64) -> AlgebraElement {
        self.data.get(n).cloned().unwrap_or_else(|| self.base.zero())
    }

    pub fn lo(&self) -> i64 {
        self.data.lo
    }

    pub fn hi(&self) -> i64 {
        self.data.hi()
    }

    pub fn right_period(&self) -> usize {
        self.data.right.len()
    }

    pub fn left_period(&self) -> usize {
        self.data.left.len()
    }

    fn compatible(&self, other: &Self) -> Result<()> {
        if self.base != other.base {
            bail!(Shape, "sequence bases {} and {} differ", self.base, other.base);
        }
        if self.side() != other.side() {
            bail!(Shape, "cannot combine one-sided and two-sided sequences");
        }
        Ok(())
    }

    /// Pointwise combination after aligning cores (min/max) and periods (lcm).
    pub fn zip_with(&self, other: &Self, f: impl Fn(&AlgebraElement, &AlgebraElement) -> AlgebraElement) -> Result<Self> {
        self.compatible(other)?;
        let lo = self.lo().min(other.lo());
        let hi = self.hi().max(other.hi());
        let r = lcm(self.right_period(), other.right_period());
        let l = lcm(self.left_period(), other.left_period());
        Ok(Self::sample(&self.base, self.side(), lo, hi, l, r, |n| f(&self.at(n), &other.at(n))))
    }

    pub fn map(&self, f: impl Fn(&AlgebraElement) -> AlgebraElement) -> Self {
        let mut data = self.data.map(f);
        data.normalize(elem_eq);
        Self { base: self.base.clone(), data }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, s: C64) -> Self {
        self.map(|a| a.scale(s))
    }

    pub fn adjoint(&self) -> Self {
        self.map(|a| a.adjoint())
    }

    /// Sup-norm: max operator norm over the stored (normalized) entries.
    pub fn norm(&self) -> f64 {
        self.stored().map(|a| a.op_norm()).fold(0.0, f64::max)
    }

    fn stored(&self) -> impl Iterator<Item = &AlgebraElement> {
        self.data.left.iter().chain(&self.data.core).chain(&self.data.right)
    }

    pub fn max_abs(&self) -> f64 {
        self.stored().map(|a| a.max_abs()).fold(0.0, f64::max)
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.max_abs() <= tol
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.compatible(other).is_ok() && self.sub(other).map(|d| d.is_zero(tol)).unwrap_or(false)
    }

    /// Backward shift `σ₊(x₁, x₂, …) = (x₂, x₃, …)`.
    pub fn shift_backward(&self) -> Result<Self> {
        if self.side() != Side::OneSided {
            bail!(Kind, "backward shift acts on one-sided sequences; use shift_bilateral");
        }
        let hi = (self.hi() - 1).max(1);
        Ok(Self::sample(&self.base, Side::OneSided, 1, hi, 0, self.right_period(), |n| self.at(n + 1)))
    }

    /// `σ^k`: index `n` of the output is index `n + k` of the input.
    pub fn shift_bilateral(&self, k: i64) -> Result<Self> {
        if self.side() != Side::TwoSided {
            bail!(Kind, "bilateral shift acts on two-sided sequences");
        }
        let mut data = self.data.clone();
        data.lo -= k;
        data.normalize(elem_eq);
        Ok(Self { base: self.base.clone(), data })
    }

    /// Truncation `(x_n)_{n∈ℤ} ↦ (x_1, x_2, …)`.
    pub fn positive_part(&self) -> Result<Self> {
        if self.side() != Side::TwoSided {
            bail!(Kind, "positive part takes a two-sided sequence");
        }
        let hi = self.hi().max(1);
        Ok(Self::sample(&self.base, Side::OneSided, 1, hi, 0, self.right_period(), |n| self.at(n)))
    }

    /// Two-sided sequence agreeing with `self` on `n ≥ 1` and zero on `n ≤ 0`.
    pub fn extend_by_zero(&self) -> Result<Self> {
        if self.side() != Side::OneSided {
            bail!(Kind, "only one-sided sequences extend by zero");
        }
        let zero = self.base.zero();
        Ok(Self::sample(&self.base, Side::TwoSided, 1, self.hi(), 1, self.right_period(), |n| {
            if n >= 1 {
                self.at(n)
            } else {
                zero.clone()
            }
        }))
    }
}

/// One summand of a [`ComputableAlgebra`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum Summand {
    Fin { dims: Vec<usize> },
    Seq { base: Vec<usize>, side: Side },
}

impl Summand {
    pub fn fin(a: &BlockAlgebra) -> Self {
        Summand::Fin { dims: a.dims().to_vec() }
    }

    pub fn seq(base: &BlockAlgebra, side: Side) -> Self {
        Summand::Seq { base: base.dims().to_vec(), side }
    }

    /// Block algebra of the summand (`Fin`) or of one coordinate (`Seq`).
    pub fn blocks(&self) -> BlockAlgebra {
        match self {
            Summand::Fin { dims } | Summand::Seq { base: dims, .. } => BlockAlgebra::from_dims_unchecked(dims.clone()),
        }
    }

    pub fn side(&self) -> Option<Side> {
        match self {
            Summand::Fin { .. } => None,
            Summand::Seq { side, .. } => Some(*side),
        }
    }
}

/// Finite direct sum of block algebras and eventually periodic sequence algebras.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComputableAlgebra {
    summands: Vec<Summand>,
}

/// Minimal central projection of a computable algebra: a block of a finite
/// summand (`coord = 0`) or a block of one coordinate of a sequence summand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockRef {
    pub summand: usize,
    pub coord: i64,
    pub block: usize,
}

/// Coordinates covered by a finite window: `1..=w` for one-sided summands and
/// `-w..=w` for two-sided ones.
pub fn window_range(side: Side, w: usize) -> std::ops::RangeInclusive<i64> {
    match side {
        Side::OneSided => 1..=w as i64,
        Side::TwoSided => -(w as i64)..=w as i64,
    }
}

impl ComputableAlgebra {
    pub fn new(summands: Vec<Summand>) -> Result<Self> {
        for s in &summands {
            match s {
                Summand::Fin { dims } | Summand::Seq { base: dims, .. } => {
                    BlockAlgebra::new(dims.clone())?;
                }
            }
        }
        Ok(Self { summands })
    }

    pub fn fin(a: &BlockAlgebra) -> Self {
        Self { summands: vec![Summand::fin(a)] }
    }

    pub fn seq(base: &BlockAlgebra, side: Side) -> Self {
        Self { summands: vec![Summand::seq(base, side)] }
    }

    /// The zero algebra (no summands).
    pub fn zero_algebra() -> Self {
        Self { summands: vec![] }
    }

    /// `M_k ⊗ A`: every block dimension multiplied by `k`.
    pub fn promote(&self, k: usize) -> Self {
        let scale = |d: &Vec<usize>| d.iter().map(|x| x * k).collect::<Vec<_>>();
        Self {
            summands: self
                .summands
                .iter()
                .map(|s| match s {
                    Summand::Fin { dims } => Summand::Fin { dims: scale(dims) },
                    Summand::Seq { base, side } => Summand::Seq { base: scale(base), side: *side },
                })
                .collect(),
        }
    }

    pub fn summands(&self) -> &[Summand] {
        &self.summands
    }

    pub fn is_zero_algebra(&self) -> bool {
        self.summands.is_empty()
    }

    pub fn direct_sum(&self, other: &Self) -> Self {
        let mut summands = self.summands.clone();
        summands.extend(other.summands.iter().cloned());
        Self { summands }
    }

    pub fn is_finite_dimensional(&self) -> bool {
        self.summands.iter().all(|s| matches!(s, Summand::Fin { .. }))
    }

    pub fn block_dim(&self, b: &BlockRef) -> usize {
        self.summands[b.summand].blocks().dims()[b.block]
    }

    pub fn identity(&self) -> Element {
        Element::new(
            self.summands
                .iter()
                .map(|s| match s {
                    Summand::Fin { .. } => Part::Fin(s.blocks().identity()),
                    Summand::Seq { side, .. } => Part::Seq(SeqElement::identity(&s.blocks(), *side)),
                })
                .collect(),
        )
    }

    pub fn zero(&self) -> Element {
        Element::new(
            self.summands
                .iter()
                .map(|s| match s {
                    Summand::Fin { .. } => Part::Fin(s.blocks().zero()),
                    Summand::Seq { side, .. } => Part::Seq(SeqElement::zero(&s.blocks(), *side)),
                })
                .collect(),
        )
    }

    pub fn check_element(&self, x: &Element) -> Result<()> {
        if x.parts.len() != self.summands.len() {
            bail!(Shape, "element has {} parts, algebra has {} summands", x.parts.len(), self.summands.len());
        }
        for (i, (p, s)) in x.parts.iter().zip(&self.summands).enumerate() {
            match (p, s) {
                (Part::Fin(a), Summand::Fin { dims }) if a.dims() == *dims => {}
                (Part::Seq(q), Summand::Seq { base, side }) if q.base().dims() == base.as_slice() && q.side() == *side => {}
                _ => bail!(Shape, "part {i} does not match summand {s:?}"),
            }
        }
        Ok(())
    }

    /// Blocks of the algebra inside a window.
    pub fn window_blocks(&self, w: usize) -> Vec<BlockRef> {
        let mut out = Vec::new();
        for (i, s) in self.summands.iter().enumerate() {
            let nb = s.blocks().num_blocks();
            match s {
                Summand::Fin { .. } => out.extend((0..nb).map(|b| BlockRef { summand: i, coord: 0, block: b })),
                Summand::Seq { side, .. } => {
                    for n in window_range(*side, w) {
                        out.extend((0..nb).map(|b| BlockRef { summand: i, coord: n, block: b }));
                    }
                }
            }
        }
        out
    }

    /// Element with `value` on block `r` and zero elsewhere.
    pub fn block_element(&self, r: &BlockRef, value: CMat) -> Element {
        let mut x = self.zero();
        let s = &self.summands[r.summand];
        let mut v = s.blocks().zero();
        v.blocks_mut()[r.block] = value;
        x.parts[r.summand] = match s {
            Summand::Fin { .. } => Part::Fin(v),
            Summand::Seq { side, .. } => Part::Seq(SeqElement::supported_at(&s.blocks(), *side, r.coord, v)),
        };
        x
    }

    pub fn matrix_unit(&self, r: &BlockRef, a: usize, b: usize) -> Element {
        let d = self.block_dim(r);
        self.block_element(r, linalg::unit(d, a, b))
    }

    pub fn block_identity(&self, r: &BlockRef) -> Element {
        self.block_element(r, linalg::identity(self.block_dim(r)))
    }

    /// Matrix units of every block in the window: the spanning set used for
    /// validation and for dense oracles.
    pub fn window_units(&self, w: usize) -> Vec<(BlockRef, usize, usize)> {
        let mut out = Vec::new();
        for r in self.window_blocks(w) {
            let d = self.block_dim(&r);
            for a in 0..d {
                for b in 0..d {
                    out.push((r, a, b));
                }
            }
        }
        out
    }

    /// Random element whose sequence parts have preperiod ≤ `pre` and period ≤ `per`.
    pub fn random_element<R: Rng + ?Sized>(&self, rng: &mut R, pre: usize, per: usize) -> Element {
        Element::new(
            self.summands
                .iter()
                .map(|s| {
                    let k = s.blocks();
                    match s {
                        Summand::Fin { .. } => Part::Fin(k.random_element(rng)),
                        Summand::Seq { side, .. } => {
                            let p = rng.gen_range(1..=per.max(1));
                            let q = rng.gen_range(0..=pre);
                            let right: Vec<_> = (0..p).map(|_| k.random_element(rng)).collect();
                            let core: Vec<_> = (0..q).map(|_| k.random_element(rng)).collect();
                            let data = match side {
                                Side::OneSided => EpSeq { left: vec![], lo: 1, core, right },
                                Side::TwoSided => {
                                    let lp = rng.gen_range(1..=per.max(1));
                                    let left: Vec<_> = (0..lp).map(|_| k.random_element(rng)).collect();
                                    EpSeq { left, lo: rng.gen_range(-2..=2), core, right }
                                }
                            };
                            Part::Seq(SeqElement::from_data(&k, data).expect("well-formed random data"))
                        }
                    }
                })
                .collect(),
        )
    }
}

/// Value of one summand of an [`Element`].
#[derive(Debug, Clone, PartialEq)]
pub enum Part {
    Fin(AlgebraElement),
    Seq(SeqElement),
}

impl Part {
    /// Value of a block (`coord` is ignored for finite parts).
    pub fn block_value(&self, coord: i64, block: usize) -> CMat {
        match self {
            Part::Fin(a) => a.block(block).clone(),
            Part::Seq(s) => s.at(coord).block(block).clone(),
        }
    }

    fn zip(&self, other: &Part, f: impl Fn(&AlgebraElement, &AlgebraElement) -> AlgebraElement) -> Result<Part> {
        match (self, other) {
            (Part::Fin(a), Part::Fin(b)) => {
                if a.dims() != b.dims() {
                    bail!(Shape, "finite parts differ in shape");
                }
                Ok(Part::Fin(f(a, b)))
            }
            (Part::Seq(a), Part::Seq(b)) => Ok(Part::Seq(a.zip_with(b, f)?)),
            _ => bail!(Shape, "summand kinds differ"),
        }
    }

    fn map(&self, f: impl Fn(&AlgebraElement) -> AlgebraElement) -> Part {
        match self {
            Part::Fin(a) => Part::Fin(f(a)),
            Part::Seq(s) => Part::Seq(s.map(f)),
        }
    }

    pub fn norm(&self) -> f64 {
        match self {
            Part::Fin(a) => a.op_norm(),
            Part::Seq(s) => s.norm(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match self {
            Part::Fin(a) => a.max_abs(),
            Part::Seq(s) => s.max_abs(),
        }
    }
}

/// Element of a [`ComputableAlgebra`]: one part per summand.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub parts: Vec<Part>,
}

impl Element {
    pub fn new(parts: Vec<Part>) -> Self {
        Self { parts }
    }

    fn zip(&self, other: &Self, f: impl Fn(&AlgebraElement, &AlgebraElement) -> AlgebraElement + Copy) -> Result<Self> {
        if self.parts.len() != other.parts.len() {
            bail!(Shape, "elements have {} and {} parts", self.parts.len(), other.parts.len());
        }
        Ok(Self::new(self.parts.iter().zip(&other.parts).map(|(a, b)| a.zip(b, f)).collect::<Result<_>>()?))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a * b)
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::new(self.parts.iter().map(|p| p.map(|a| a.scale(s))).collect())
    }

    pub fn adjoint(&self) -> Self {
        Self::new(self.parts.iter().map(|p| p.map(|a| a.adjoint())).collect())
    }

    pub fn norm(&self) -> f64 {
        self.parts.iter().map(Part::norm).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.parts.iter().map(Part::max_abs).fold(0.0, f64::max)
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.max_abs() <= tol
    }

    /// Max entrywise distance; `f64::INFINITY` for incompatible shapes.
    pub fn distance(&self, other: &Self) -> f64 {
        self.sub(other).map(|d| d.max_abs()).unwrap_or(f64::INFINITY)
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.distance(other) <= tol
    }

    pub fn block_value(&self, r: &BlockRef) -> CMat {
        self.parts[r.summand].block_value(r.coord, r.block)
    }
}

/// Normal functional on a computable algebra; sequence parts are finitely
/// supported `(index → densities)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Functional {
    pub parts: Vec<FunctionalPart>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionalPart {
    Fin(NormalFunctional),
    Seq(BTreeMap<i64, Vec<CMat>>),
}

impl Functional {
    pub fn zero(algebra: &ComputableAlgebra) -> Self {
        Self {
            parts: algebra
                .summands()
                .iter()
                .map(|s| match s {
                    Summand::Fin { .. } => FunctionalPart::Fin(NormalFunctional::zero(&s.blocks())),
                    Summand::Seq { .. } => FunctionalPart::Seq(BTreeMap::new()),
                })
                .collect(),
        }
    }

    /// Density of a block (zero matrix when not supported there).
    pub fn density(&self, r: &BlockRef, dim: usize) -> CMat {
        match &self.parts[r.summand] {
            FunctionalPart::Fin(f) => f.densities()[r.block].clone(),
            FunctionalPart::Seq(m) => m.get(&r.coord).map(|v| v[r.block].clone()).unwrap_or_else(|| linalg::zeros(dim)),
        }
    }

    /// Add `rho` to the density of block `r`.
    pub fn accumulate(&mut self, algebra: &ComputableAlgebra, r: &BlockRef, rho: &CMat) {
        match &mut self.parts[r.summand] {
            FunctionalPart::Fin(f) => {
                let mut d = f.densities().to_vec();
                d[r.block] += rho;
                *f = NormalFunctional::new(d);
            }
            FunctionalPart::Seq(m) => {
                let base = algebra.summands()[r.summand].blocks();
                let entry =
                    m.entry(r.coord).or_insert_with(|| base.dims().iter().map(|&d| linalg::zeros(d)).collect());
                entry[r.block] += rho;
            }
        }
    }

    /// Blocks carrying a density (sequence parts: supported coordinates only).
    pub fn support(&self, algebra: &ComputableAlgebra) -> Vec<BlockRef> {
        let mut out = Vec::new();
        for (i, (p, s)) in self.parts.iter().zip(algebra.summands()).enumerate() {
            let nb = s.blocks().num_blocks();
            match p {
                FunctionalPart::Fin(_) => out.extend((0..nb).map(|b| BlockRef { summand: i, coord: 0, block: b })),
                FunctionalPart::Seq(m) => {
                    for n in m.keys() {
                        out.extend((0..nb).map(|b| BlockRef { summand: i, coord: *n, block: b }));
                    }
                }
            }
        }
        out
    }

    pub fn apply(&self, x: &Element) -> Result<C64> {
        if self.parts.len() != x.parts.len() {
            bail!(Shape, "functional has {} parts, element {}", self.parts.len(), x.parts.len());
        }
        let mut acc = C64::new(0.0, 0.0);
        for (f, p) in self.parts.iter().zip(&x.parts) {
            match (f, p) {
                (FunctionalPart::Fin(r), Part::Fin(a)) => acc += r.apply(a)?,
                (FunctionalPart::Seq(m), Part::Seq(s)) => {
                    for (n, dens) in m {
                        let v = s.at(*n);
                        for (r, b) in dens.iter().zip(v.blocks()) {
                            acc += (r * b).trace();
                        }
                    }
                }
                _ => bail!(Shape, "functional part kind does not match element"),
            }
        }
        Ok(acc)
    }

    /// Σ of trace norms of all densities.
    pub fn norm(&self) -> f64 {
        self.parts
            .iter()
            .map(|p| match p {
                FunctionalPart::Fin(f) => f.norm(),
                FunctionalPart::Seq(m) => m.values().flat_map(|v| v.iter()).map(linalg::trace_norm).sum(),
            })
            .sum()
    }

    /// `σ ⊗ ρ` on the promoted algebra.
    pub fn promote(&self, sigma: &CMat) -> Self {
        Self {
            parts: self
                .parts
                .iter()
                .map(|p| match p {
                    FunctionalPart::Fin(f) => FunctionalPart::Fin(f.promote(sigma)),
                    FunctionalPart::Seq(m) => FunctionalPart::Seq(
                        m.iter().map(|(n, v)| (*n, v.iter().map(|d| linalg::kron(sigma, d)).collect())).collect(),
                    ),
                })
                .collect(),
        }
    }

    /// Drop sequence coordinates whose densities vanish.
    pub fn prune(&mut self, tol: f64) {
        for p in &mut self.parts {
            if let FunctionalPart::Seq(m) = p {
                m.retain(|_, v| v.iter().any(|d| linalg::max_abs(d) > tol));
            }
        }
    }

    pub fn distance(&self, other: &Self, algebra: &ComputableAlgebra) -> f64 {
        let mut blocks = self.support(algebra);
        blocks.extend(other.support(algebra));
        blocks
            .iter()
            .map(|r| {
                let d = algebra.block_dim(r);
                linalg::max_abs(&(self.density(r, d) - other.density(r, d)))
            })
            .fold(0.0, f64::max)
    }

    /// Random functional; sequence parts supported on indices within `support`.
    pub fn random<R: Rng + ?Sized>(algebra: &ComputableAlgebra, rng: &mut R, support: usize) -> Self {
        let mut f = Self::zero(algebra);
        for (i, s) in algebra.summands().iter().enumerate() {
            let k = s.blocks();
            match s {
                Summand::Fin { .. } => f.parts[i] = FunctionalPart::Fin(NormalFunctional::random(&k, rng)),
                Summand::Seq { side, .. } => {
                    let mut m = BTreeMap::new();
                    let count = rng.gen_range(1..=support.max(1).min(3));
                    for _ in 0..count {
                        let n = match side {
                            Side::OneSided => rng.gen_range(1..=support.max(1) as i64),
                            Side::TwoSided => rng.gen_range(-(support as i64)..=support as i64),
                        };
                        m.insert(n, k.dims().iter().map(|&d| linalg::random_matrix(d, d, rng)).collect());
                    }
                    f.parts[i] = FunctionalPart::Seq(m);
                }
            }
        }
        f
    }
}

/// Central projection of a computable algebra given by the set of minimal
/// central projections it contains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CentralMask {
    pub parts: Vec<MaskPart>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskPart {
    Fin(Vec<bool>),
    Seq(EpSeq<Vec<bool>>),
}

impl MaskPart {
    fn zip(&self, other: &MaskPart, f: impl Fn(bool, bool) -> bool + Copy) -> MaskPart {
        match (self, other) {
            (MaskPart::Fin(a), MaskPart::Fin(b)) => MaskPart::Fin(a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()),
            (MaskPart::Seq(a), MaskPart::Seq(b)) => {
                let mut z = a.zip_with(b, |x, y| x.iter().zip(y).map(|(p, q)| f(*p, *q)).collect::<Vec<_>>());
                z.normalize(|x, y| x == y);
                MaskPart::Seq(z)
            }
            _ => panic!("mask part kinds differ"),
        }
    }
}

impl CentralMask {
    pub fn constant(algebra: &ComputableAlgebra, value: bool) -> Self {
        Self {
            parts: algebra
                .summands()
                .iter()
                .map(|s| {
                    let nb = s.blocks().num_blocks();
                    match s {
                        Summand::Fin { .. } => MaskPart::Fin(vec![value; nb]),
                        Summand::Seq { side, .. } => MaskPart::Seq(EpSeq::constant(*side, vec![value; nb])),
                    }
                })
                .collect(),
        }
    }

    pub fn zero(algebra: &ComputableAlgebra) -> Self {
        Self::constant(algebra, false)
    }

    pub fn one(algebra: &ComputableAlgebra) -> Self {
        Self::constant(algebra, true)
    }

    pub fn contains(&self, r: &BlockRef) -> bool {
        match &self.parts[r.summand] {
            MaskPart::Fin(m) => m[r.block],
            MaskPart::Seq(s) => s.get(r.coord).map(|v| v[r.block]).unwrap_or(false),
        }
    }

    pub fn and(&self, other: &Self) -> Self {
        Self { parts: self.parts.iter().zip(&other.parts).map(|(a, b)| a.zip(b, |x, y| x && y)).collect() }
    }

    pub fn or(&self, other: &Self) -> Self {
        Self { parts: self.parts.iter().zip(&other.parts).map(|(a, b)| a.zip(b, |x, y| x || y)).collect() }
    }

    pub fn complement(&self) -> Self {
        Self {
            parts: self
                .parts
                .iter()
                .map(|p| match p {
                    MaskPart::Fin(m) => MaskPart::Fin(m.iter().map(|x| !x).collect()),
                    MaskPart::Seq(s) => MaskPart::Seq(s.map(|v| v.iter().map(|x| !x).collect())),
                })
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.parts.iter().all(|p| match p {
            MaskPart::Fin(m) => m.iter().all(|x| !x),
            MaskPart::Seq(s) => s.left.iter().chain(&s.core).chain(&s.right).all(|v| v.iter().all(|x| !x)),
        })
    }

    pub fn leq(&self, other: &Self) -> bool {
        self.and(&other.complement()).is_zero()
    }

    pub fn to_element(&self, algebra: &ComputableAlgebra) -> Element {
        Element::new(
            self.parts
                .iter()
                .zip(algebra.summands())
                .map(|(p, s)| {
                    let k = s.blocks();
                    let proj = |m: &Vec<bool>| {
                        AlgebraElement::new(
                            k.dims()
                                .iter()
                                .zip(m)
                                .map(|(&d, &on)| if on { linalg::identity(d) } else { linalg::zeros(d) })
                                .collect(),
                        )
                    };
                    match p {
                        MaskPart::Fin(m) => Part::Fin(proj(m)),
                        MaskPart::Seq(q) => {
                            let mut data = q.map(proj);
                            data.normalize(elem_eq);
                            Part::Seq(SeqElement { base: k.clone(), data })
                        }
                    }
                })
                .collect(),
        )
    }

    /// Blocks of the mask inside a window.
    pub fn window_blocks(&self, algebra: &ComputableAlgebra, w: usize) -> Vec<BlockRef> {
        algebra.window_blocks(w).into_iter().filter(|r| self.contains(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;

    fn k1() -> BlockAlgebra {
        BlockAlgebra::new(vec![1]).unwrap()
    }

    fn s(v: f64) -> AlgebraElement {
        k1().identity().scale(c(v, 0.0))
    }

    fn values(x: &SeqElement, range: std::ops::RangeInclusive<i64>) -> Vec<f64> {
        range.map(|n| x.at(n).block(0)[(0, 0)].re).collect()
    }

    #[test]
    fn normalize_constant_period() {
        let x = SeqElement::one_sided(&k1(), vec![], vec![s(2.0), s(2.0)]).unwrap();
        assert_eq!(x.data().right.len(), 1);
        assert!(x.data().core.is_empty());
    }

    #[test]
    fn normalize_absorbs_preperiod() {
        let x = SeqElement::one_sided(&k1(), vec![s(1.0), s(5.0)], vec![s(5.0)]).unwrap();
        assert_eq!(x.data().core.len(), 1);
        assert_eq!(values(&x, 1..=4), vec![1.0, 5.0, 5.0, 5.0]);
    }

    #[test]
    fn normalize_two_sided_zero() {
        let z = SeqElement::two_sided(&k1(), vec![s(0.0)], 7, vec![s(0.0), s(0.0)], vec![s(0.0)]).unwrap();
        assert_eq!(z.data().left.len(), 1);
        assert!(z.data().core.is_empty());
        assert_eq!(z.data().right.len(), 1);
        assert_eq!(z, SeqElement::zero(&k1(), Side::TwoSided));
    }

    #[test]
    fn period_lcm_product() {
        let x = SeqElement::one_sided(&k1(), vec![], vec![s(1.0), s(2.0)]).unwrap();
        let y = SeqElement::one_sided(&k1(), vec![], vec![s(3.0), s(5.0), s(7.0)]).unwrap();
        let p = x.mul(&y).unwrap();
        assert_eq!(p.right_period(), 6);
        let expect: Vec<f64> = (1..=6).map(|n| [1.0, 2.0][(n - 1) % 2] * [3.0, 5.0, 7.0][(n - 1) % 3]).collect();
        assert_eq!(values(&p, 1..=6), expect);
    }

    #[test]
    fn unit_law_and_norm() {
        let x = SeqElement::one_sided(&k1(), vec![s(4.0)], vec![s(1.0), s(-2.0)]).unwrap();
        let one = SeqElement::identity(&k1(), Side::OneSided);
        assert!(x.mul(&one).unwrap().approx_eq(&x, 1e-12));
        let alt = SeqElement::one_sided(&k1(), vec![], vec![s(0.0), s(1.0)]).unwrap();
        assert_eq!(alt.norm(), 1.0);
    }

    #[test]
    fn backward_shift_examples() {
        let k = s(3.0);
        let x = SeqElement::supported_at(&k1(), Side::OneSided, 1, k);
        assert!(x.shift_backward().unwrap().is_zero(0.0));
        let c1 = SeqElement::identity(&k1(), Side::OneSided);
        assert_eq!(c1.shift_backward().unwrap(), c1);
        let y = SeqElement::one_sided(&k1(), vec![s(1.0)], vec![s(2.0), s(3.0)]).unwrap();
        let sy = y.shift_backward().unwrap();
        assert!(sy.data().core.is_empty());
        assert_eq!(values(&sy, 1..=4), vec![2.0, 3.0, 2.0, 3.0]);
        let two = SeqElement::zero(&k1(), Side::TwoSided);
        assert!(matches!(two.shift_backward(), Err(crate::Error::Kind(_))));
    }

    #[test]
    fn bilateral_shift_examples() {
        let x = SeqElement::supported_at(&k1(), Side::TwoSided, 1, s(2.0));
        assert_eq!(x.shift_bilateral(0).unwrap(), x);
        let y = x.shift_bilateral(1).unwrap();
        assert_eq!(y.lo(), 0);
        assert_eq!(values(&y, -1..=1), vec![0.0, 2.0, 0.0]);
        assert_eq!(y.shift_bilateral(-1).unwrap(), x);
    }

    #[test]
    fn positive_part_examples() {
        let c2 = SeqElement::identity(&k1(), Side::TwoSided);
        assert_eq!(c2.positive_part().unwrap(), SeqElement::identity(&k1(), Side::OneSided));
        let at0 = SeqElement::supported_at(&k1(), Side::TwoSided, 0, s(1.0));
        assert!(at0.positive_part().unwrap().is_zero(0.0));
        let at1 = SeqElement::supported_at(&k1(), Side::TwoSided, 1, s(1.0));
        assert_eq!(at1.positive_part().unwrap(), SeqElement::supported_at(&k1(), Side::OneSided, 1, s(1.0)));
    }

    #[test]
    fn periodic_two_sided_is_anchored() {
        let a = SeqElement::two_sided(&k1(), vec![s(1.0), s(2.0)], 3, vec![], vec![s(1.0), s(2.0)]).unwrap();
        let b = SeqElement::two_sided(&k1(), vec![s(2.0), s(1.0)], 0, vec![s(2.0)], vec![s(1.0), s(2.0)]).unwrap();
        assert_eq!(values(&a, -3..=3), values(&b, -3..=3));
        assert_eq!(a, b);
    }

    #[test]
    fn central_mask_algebra() {
        let alg = ComputableAlgebra::new(vec![
            Summand::Fin { dims: vec![1, 2] },
            Summand::Seq { base: vec![1], side: Side::OneSided },
        ])
        .unwrap();
        let mut z = CentralMask::zero(&alg);
        z.parts[0] = MaskPart::Fin(vec![true, false]);
        z.parts[1] = MaskPart::Seq(EpSeq { left: vec![], lo: 1, core: vec![vec![true]], right: vec![vec![false]] });
        let e = z.to_element(&alg);
        assert!(e.mul(&e).unwrap().approx_eq(&e, 0.0));
        assert!(z.leq(&CentralMask::one(&alg)));
        assert!(z.and(&z.complement()).is_zero());
        assert_eq!(z.or(&z.complement()), CentralMask::one(&alg));
        assert!(z.contains(&BlockRef { summand: 1, coord: 1, block: 0 }));
        assert!(!z.contains(&BlockRef { summand: 1, coord: 2, block: 0 }));
    }

    #[test]
    fn mismatched_sides_are_shape_errors() {
        let a = SeqElement::zero(&k1(), Side::OneSided);
        let b = SeqElement::zero(&k1(), Side::TwoSided);
        assert!(matches!(a.add(&b), Err(crate::Error::Shape(_))));
        assert!(matches!(SeqElement::one_sided(&k1(), vec![], vec![]), Err(crate::Error::Construction(_))));
    }
}
