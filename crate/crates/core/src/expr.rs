//! Serializable morphism descriptors: atom chains compiled to normal form.

use serde::{Deserialize, Serialize};

use crate::algebra::{BlockAlgebra, FinHom};
use crate::error::{bail, Result};
use crate::linalg::{self, CMat};
use crate::morphism::StructuralMorphism;
use crate::seq::{ComputableAlgebra, EpSeq, Side, Summand};

/// Complex matrix as rows of `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MatrixData(pub Vec<Vec<[f64; 2]>>);

impl MatrixData {
    pub fn from_cmat(m: &CMat) -> Self {
        Self((0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect())
    }

    pub fn to_cmat(&self) -> Result<CMat> {
        let rows = self.0.len();
        let cols = self.0.first().map_or(0, Vec::len);
        if self.0.iter().any(|r| r.len() != cols) {
            bail!(Construction, "ragged matrix rows");
        }
        Ok(CMat::from_fn(rows, cols, |i, j| linalg::c(self.0[i][j][0], self.0[i][j][1])))
    }
}

/// Multiplicity matrix (rows = target blocks) with optional conjugating unitaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinHomData {
    pub multiplicity: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unitaries: Option<Vec<MatrixData>>,
}

impl FinHomData {
    pub fn from_fin_hom(h: &FinHom) -> Self {
        let canonical = h.rules.iter().all(|r| r.sources.windows(2).all(|w| w[0] <= w[1]));
        assert!(canonical, "source blocks must be listed in increasing order");
        Self {
            multiplicity: h.multiplicity_matrix(),
            unitaries: Some(h.rules.iter().map(|r| MatrixData::from_cmat(&r.unitary)).collect()),
        }
    }

    pub fn build(&self, source: &BlockAlgebra) -> Result<FinHom> {
        if self.multiplicity.iter().any(|row| row.len() != source.num_blocks()) {
            bail!(Shape, "multiplicity rows must have {} entries", source.num_blocks());
        }
        let dims: Vec<usize> =
            self.multiplicity.iter().map(|row| row.iter().zip(source.dims()).map(|(m, d)| m * d).sum()).collect();
        let target = BlockAlgebra::new(dims)?;
        let unitaries = match &self.unitaries {
            Some(us) => Some(us.iter().map(MatrixData::to_cmat).collect::<Result<Vec<_>>>()?),
            None => None,
        };
        if unitaries.as_ref().is_some_and(|u| u.len() != target.num_blocks()) {
            bail!(Shape, "need one unitary per target block");
        }
        FinHom::from_multiplicities(source.clone(), target, &self.multiplicity, unitaries)
    }
}

/// A morphism descriptor. `Compose` lists maps outermost first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "atom", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MorphismExpr {
    Identity,
    FinDimHom {
        multiplicity: Vec<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unitaries: Option<Vec<MatrixData>>,
    },
    SeqShift {
        power: i64,
    },
    CoordMap {
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        left_period: Vec<FinHomData>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lo: Option<i64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        preperiod: Vec<FinHomData>,
        period: Vec<FinHomData>,
    },
    DirectSum {
        parts: Vec<MorphismExpr>,
    },
    Routing {
        perm: Vec<usize>,
    },
    Inverse {
        of: Box<MorphismExpr>,
    },
    Compose {
        chain: Vec<MorphismExpr>,
    },
}

fn single(source: &ComputableAlgebra, what: &str) -> Result<Summand> {
    match source.summands() {
        [s] => Ok(s.clone()),
        _ => bail!(Shape, "{what} acts on a single summand, got {}", source.summands().len()),
    }
}

impl MorphismExpr {
    pub fn fin_dim_hom(h: &FinHom) -> Self {
        let hom = FinHomData::from_fin_hom(h);
        MorphismExpr::FinDimHom { multiplicity: hom.multiplicity, unitaries: hom.unitaries }
    }

    pub fn compile(&self, source: &ComputableAlgebra) -> Result<StructuralMorphism> {
        match self {
            MorphismExpr::Identity => Ok(StructuralMorphism::identity(source)),
            MorphismExpr::FinDimHom { multiplicity, unitaries } => match single(source, "fin-dim-hom")? {
                s @ Summand::Fin { .. } => {
                    let hom = FinHomData { multiplicity: multiplicity.clone(), unitaries: unitaries.clone() };
                    Ok(StructuralMorphism::from_fin_hom(&hom.build(&s.blocks())?))
                }
                _ => bail!(Kind, "fin-dim-hom needs a finite summand"),
            },
            MorphismExpr::SeqShift { power } => match single(source, "seq-shift")? {
                s @ Summand::Seq { side, .. } => StructuralMorphism::shift(&s.blocks(), side, *power),
                _ => bail!(Kind, "seq-shift needs a sequence summand"),
            },
            MorphismExpr::CoordMap { left_period, lo, preperiod, period } => {
                let s = single(source, "coord-map")?;
                let Summand::Seq { side, .. } = s else { bail!(Kind, "coord-map needs a sequence summand") };
                if period.is_empty() {
                    bail!(Construction, "coord-map period must be nonempty");
                }
                let base = s.blocks();
                let build = |v: &[FinHomData]| v.iter().map(|h| h.build(&base)).collect::<Result<Vec<_>>>();
                let family = match side {
                    Side::OneSided => {
                        if !left_period.is_empty() || lo.is_some_and(|l| l != 1) {
                            bail!(Construction, "one-sided coord-map has no left period and starts at 1");
                        }
                        EpSeq { left: vec![], lo: 1, core: build(preperiod)?, right: build(period)? }
                    }
                    Side::TwoSided => {
                        if left_period.is_empty() {
                            bail!(Construction, "two-sided coord-map needs a left period");
                        }
                        EpSeq { left: build(left_period)?, lo: lo.unwrap_or(0), core: build(preperiod)?, right: build(period)? }
                    }
                };
                StructuralMorphism::coordinate_map(&family)
            }
            MorphismExpr::DirectSum { parts } => {
                if parts.len() != source.summands().len() {
                    bail!(Shape, "direct-sum has {} parts for {} summands", parts.len(), source.summands().len());
                }
                let compiled = parts
                    .iter()
                    .zip(source.summands())
                    .map(|(p, s)| p.compile(&ComputableAlgebra::new(vec![s.clone()])?))
                    .collect::<Result<Vec<_>>>()?;
                StructuralMorphism::direct_sum(&compiled)
            }
            MorphismExpr::Routing { perm } => StructuralMorphism::routing(source, perm),
            MorphismExpr::Inverse { of } => {
                let f = of.compile(source)?;
                if f.target() != source {
                    bail!(Shape, "inverse is supported for automorphisms of the given algebra");
                }
                f.inverse()
            }
            MorphismExpr::Compose { chain } => {
                let mut acc = StructuralMorphism::identity(source);
                for e in chain.iter().rev() {
                    let f = e.compile(acc.target())?;
                    acc = f.compose(&acc)?;
                }
                Ok(acc)
            }
        }
    }
}
