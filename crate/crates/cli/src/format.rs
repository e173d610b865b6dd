//! Instance, witness and report files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use endolift::algebra::AlgebraElement;
use endolift::expr::{MatrixData, MorphismExpr};
use endolift::seq::{BlockRef, ComputableAlgebra, Element, EpSeq, Functional, Part, SeqElement, Summand};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// One density block of a functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityEntry {
    pub summand: usize,
    #[serde(default)]
    pub coord: i64,
    pub block: usize,
    pub density: MatrixData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalData {
    pub entries: Vec<DensityEntry>,
}

/// One summand of an element. Sequence parts list the blocks of each
/// coordinate in the left period, the core starting at `lo`, and the right
/// period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PartData {
    Fin {
        blocks: Vec<MatrixData>,
    },
    Seq {
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        left: Vec<Vec<MatrixData>>,
        lo: i64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        core: Vec<Vec<MatrixData>>,
        right: Vec<Vec<MatrixData>>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub schema_version: u32,
    pub algebra: Vec<Summand>,
    pub morphism: MorphismExpr,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub functionals: Vec<FunctionalData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<Vec<PartData>>,
    /// Summands appended to the lift with `E = 0` on them, for `reduce`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub junk: Vec<Summand>,
    #[serde(default)]
    pub params: Params,
}

/// Generator data kept out of the instance for oracle comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WitnessFile {
    pub schema_version: u32,
    pub kind: String,
    pub seed: u64,
    /// Block dims of the automorphic summand before obfuscation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub p_summands: Vec<Summand>,
    /// Block dims of `ker α` (empty when `α` is injective).
    #[serde(default)]
    pub k_dims: Vec<usize>,
    /// The automorphism `β` of `P` before obfuscation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<MorphismExpr>,
    /// `g` with `α = g∘(β ⊕ σ₊)∘g⁻¹`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conjugation: Option<MorphismExpr>,
    /// Block dims of `M∞` on the finite summands, from iterated spans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_fin_dims: Option<Vec<usize>>,
    /// An `n` with `αⁿ(p) = 1` used when choosing `p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reach_bound: Option<usize>,
}

pub fn parse_instance(text: &str) -> Result<InstanceFile, CliError> {
    let inst: InstanceFile = serde_json::from_str(text).map_err(|e| CliError::Parse(format!("line {} column {}: {e}", e.line(), e.column())))?;
    if inst.schema_version != SCHEMA_VERSION {
        return Err(CliError::Parse(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", inst.schema_version)));
    }
    Ok(inst)
}

pub fn read_instance(path: &Path) -> Result<InstanceFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    parse_instance(&text).map_err(|e| match e {
        CliError::Parse(m) => CliError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn to_pretty_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report types serialize") + "\n"
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    std::fs::write(path, to_pretty_json(v)).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

impl InstanceFile {
    pub fn new(algebra: &ComputableAlgebra, morphism: MorphismExpr) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            algebra: algebra.summands().to_vec(),
            morphism,
            functionals: Vec::new(),
            projection: None,
            junk: Vec::new(),
            params: Params::default(),
        }
    }

    pub fn algebra(&self) -> endolift::Result<ComputableAlgebra> {
        ComputableAlgebra::new(self.algebra.clone())
    }

    pub fn functionals(&self, algebra: &ComputableAlgebra) -> endolift::Result<Vec<Functional>> {
        self.functionals.iter().map(|f| f.build(algebra)).collect()
    }

    pub fn projection(&self, algebra: &ComputableAlgebra) -> endolift::Result<Option<Element>> {
        self.projection.as_ref().map(|p| element_from_parts(algebra, p)).transpose()
    }
}

impl FunctionalData {
    pub fn from_functional(f: &Functional, algebra: &ComputableAlgebra) -> Self {
        let mut entries = Vec::new();
        for b in f.support(algebra) {
            let d = algebra.block_dim(&b);
            entries.push(DensityEntry { summand: b.summand, coord: b.coord, block: b.block, density: MatrixData::from_cmat(&f.density(&b, d)) });
        }
        Self { entries }
    }

    pub fn build(&self, algebra: &ComputableAlgebra) -> endolift::Result<Functional> {
        let mut f = Functional::zero(algebra);
        for e in &self.entries {
            let Some(s) = algebra.summands().get(e.summand) else {
                return Err(endolift::Error::Shape(format!("functional entry names summand {} of {}", e.summand, algebra.summands().len())));
            };
            let dims = s.blocks().dims().to_vec();
            let Some(&d) = dims.get(e.block) else {
                return Err(endolift::Error::Shape(format!("functional entry names block {} of summand {}", e.block, e.summand)));
            };
            let m = e.density.to_cmat()?;
            if m.nrows() != d || m.ncols() != d {
                return Err(endolift::Error::Shape(format!("density for block {} must be {d}x{d}", e.block)));
            }
            let r = BlockRef { summand: e.summand, coord: e.coord, block: e.block };
            let coord_ok = match s {
                Summand::Fin { .. } => e.coord == 0,
                Summand::Seq { side, .. } => *side == endolift::seq::Side::TwoSided || e.coord >= 1,
            };
            if !coord_ok {
                return Err(endolift::Error::Shape(format!("coordinate {} is outside summand {}", e.coord, e.summand)));
            }
            f.accumulate(algebra, &r, &m);
        }
        Ok(f)
    }
}

fn algebra_element(blocks: &[MatrixData]) -> endolift::Result<AlgebraElement> {
    Ok(AlgebraElement::new(blocks.iter().map(MatrixData::to_cmat).collect::<endolift::Result<Vec<_>>>()?))
}

pub fn element_from_parts(algebra: &ComputableAlgebra, parts: &[PartData]) -> endolift::Result<Element> {
    if parts.len() != algebra.summands().len() {
        return Err(endolift::Error::Shape(format!("element has {} parts for {} summands", parts.len(), algebra.summands().len())));
    }
    let mut out = Vec::with_capacity(parts.len());
    for (p, s) in parts.iter().zip(algebra.summands()) {
        out.push(match (p, s) {
            (PartData::Fin { blocks }, Summand::Fin { .. }) => {
                let a = algebra_element(blocks)?;
                s.blocks().check_element(&a)?;
                Part::Fin(a)
            }
            (PartData::Seq { left, lo, core, right }, Summand::Seq { .. }) => {
                let conv = |v: &Vec<Vec<MatrixData>>| v.iter().map(|b| algebra_element(b)).collect::<endolift::Result<Vec<_>>>();
                let data = EpSeq { left: conv(left)?, lo: *lo, core: conv(core)?, right: conv(right)? };
                Part::Seq(SeqElement::from_data(&s.blocks(), data)?)
            }
            _ => return Err(endolift::Error::Kind("element part kind does not match its summand".into())),
        });
    }
    Ok(Element::new(out))
}

pub fn element_to_parts(x: &Element) -> Vec<PartData> {
    let conv = |a: &AlgebraElement| a.blocks().iter().map(MatrixData::from_cmat).collect::<Vec<_>>();
    x.parts
        .iter()
        .map(|p| match p {
            Part::Fin(a) => PartData::Fin { blocks: conv(a) },
            Part::Seq(s) => {
                let d = s.data();
                PartData::Seq {
                    left: d.left.iter().map(conv).collect(),
                    lo: d.lo,
                    core: d.core.iter().map(conv).collect(),
                    right: d.right.iter().map(conv).collect(),
                }
            }
        })
        .collect()
}

/// Machine-readable result of one command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub verdict: Verdict,
    pub tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub result: serde_json::Value,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Mask of a central projection restricted to a window, as `summand:coord:block` labels.
pub fn mask_labels(mask: &endolift::seq::CentralMask, algebra: &ComputableAlgebra, w: usize) -> Vec<String> {
    mask.window_blocks(algebra, w).iter().map(|b| format!("{}:{}:{}", b.summand, b.coord, b.block)).collect()
}
