//! Seeded instance generators with witness sidecars.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use endolift::algebra::{subalgebra_structure, AlgebraElement, BlockAlgebra, DEFAULT_TOL};
use endolift::endo::kernel_chain;
use endolift::expr::{FinHomData, MatrixData, MorphismExpr};
use endolift::linalg::{self, CMat};
use endolift::seq::{BlockRef, ComputableAlgebra, Element, MaskPart, Part, Side, Summand};

use crate::format::{element_to_parts, InstanceFile, WitnessFile, SCHEMA_VERSION};
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    SurjectiveObfuscated,
    Endomorphism,
    Dilation,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::SurjectiveObfuscated => "surjective-obfuscated",
            Kind::Endomorphism => "endomorphism",
            Kind::Dilation => "dilation",
        }
    }
}

impl std::str::FromStr for Kind {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "surjective-obfuscated" => Ok(Kind::SurjectiveObfuscated),
            "endomorphism" => Ok(Kind::Endomorphism),
            "dilation" => Ok(Kind::Dilation),
            _ => Err(CliError::Parse(format!("unknown generator kind {s:?}"))),
        }
    }
}

/// Optional size overrides; unset fields are drawn from the seed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sizes {
    pub p_dims: Option<Vec<usize>>,
    pub k_dims: Option<Vec<usize>>,
    pub fin_dims: Option<Vec<usize>>,
}

pub const MAX_FIN_DIMENSION: usize = 64;
pub const MAX_BASE_DIM: usize = 3;
pub const MAX_PERIOD: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub instance: InstanceFile,
    pub witness: WitnessFile,
}

fn check_sizes(s: &Sizes) -> CliResult<()> {
    let total = |d: &Vec<usize>| d.iter().map(|x| x * x).sum::<usize>();
    for d in [&s.p_dims, &s.fin_dims].into_iter().flatten() {
        if total(d) > MAX_FIN_DIMENSION || d.contains(&0) {
            return Err(CliError::Core(endolift::Error::Precondition(format!(
                "finite part {d:?} must have positive block dims and total dimension at most {MAX_FIN_DIMENSION}"
            ))));
        }
    }
    if let Some(k) = &s.k_dims {
        if k.is_empty() || k.iter().any(|&d| d == 0 || d > MAX_BASE_DIM) {
            return Err(CliError::Core(endolift::Error::Precondition(format!(
                "sequence base dims {k:?} must be nonempty and each between 1 and {MAX_BASE_DIM}"
            ))));
        }
    }
    Ok(())
}

fn unitaries<R: Rng>(dims: &[usize], rng: &mut R) -> Vec<MatrixData> {
    dims.iter().map(|&d| MatrixData::from_cmat(&linalg::random_unitary(d, rng))).collect()
}

/// Block permutation preserving dims, with random unitaries.
fn automorphism<R: Rng>(dims: &[usize], rng: &mut R) -> FinHomData {
    let n = dims.len();
    let mut multiplicity = vec![vec![0; n]; n];
    let mut by_dim: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &d) in dims.iter().enumerate() {
        by_dim.entry(d).or_default().push(i);
    }
    for idx in by_dim.values() {
        let mut shuffled = idx.clone();
        shuffled.shuffle(rng);
        for (&t, &s) in idx.iter().zip(&shuffled) {
            multiplicity[t][s] = 1;
        }
    }
    FinHomData { multiplicity, unitaries: Some(unitaries(dims, rng)) }
}

/// A unital endomorphism: each target block is filled by randomly chosen
/// source blocks. Needs a block of dimension 1.
fn endomorphism<R: Rng>(dims: &[usize], rng: &mut R) -> FinHomData {
    let n = dims.len();
    let mut multiplicity = vec![vec![0; n]; n];
    for (t, &d) in dims.iter().enumerate() {
        let mut left = d;
        while left > 0 {
            let fits: Vec<usize> = (0..n).filter(|&j| dims[j] <= left).collect();
            let j = *fits.choose(rng).expect("a block of dimension 1 exists");
            multiplicity[t][j] += 1;
            left -= dims[j];
        }
    }
    FinHomData { multiplicity, unitaries: Some(unitaries(dims, rng)) }
}

fn draw_dims<R: Rng>(rng: &mut R, blocks: std::ops::RangeInclusive<usize>, max_dim: usize, with_one: bool) -> Vec<usize> {
    let n = rng.gen_range(blocks);
    let mut dims: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=max_dim)).collect();
    if with_one && !dims.contains(&1) {
        dims[0] = 1;
    }
    dims
}

/// `g∘σ₊∘g⁻¹` on `Seq₊(K)` for a random coordinatewise automorphism `g` with
/// preperiod and period at most `MAX_PERIOD`; returns the map and `g`.
fn obfuscated_shift<R: Rng>(k: &[usize], rng: &mut R) -> (MorphismExpr, MorphismExpr) {
    let pre = rng.gen_range(0..=2);
    let per = rng.gen_range(1..=MAX_PERIOD);
    let g = MorphismExpr::CoordMap {
        left_period: vec![],
        lo: None,
        preperiod: (0..pre).map(|_| automorphism(k, rng)).collect(),
        period: (0..per).map(|_| automorphism(k, rng)).collect(),
    };
    let alpha = MorphismExpr::Compose {
        chain: vec![g.clone(), MorphismExpr::SeqShift { power: 1 }, MorphismExpr::Inverse { of: Box::new(g.clone()) }],
    };
    (alpha, g)
}

fn fin_hom_expr(hom: FinHomData) -> MorphismExpr {
    MorphismExpr::FinDimHom { multiplicity: hom.multiplicity, unitaries: hom.unitaries }
}

fn rng_for(kind: Kind, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ kind as u64)
}

pub fn generate(kind: Kind, seed: u64, sizes: &Sizes) -> CliResult<Generated> {
    check_sizes(sizes)?;
    let mut rng = rng_for(kind, seed);
    match kind {
        Kind::SurjectiveObfuscated => surjective(seed, sizes, &mut rng),
        Kind::Endomorphism => endo(seed, sizes, &mut rng),
        Kind::Dilation => dilation(seed, sizes, &mut rng),
    }
}

fn surjective(seed: u64, sizes: &Sizes, rng: &mut ChaCha8Rng) -> CliResult<Generated> {
    let p = sizes.p_dims.clone().unwrap_or_else(|| draw_dims(rng, 0..=3, 2, false));
    let k = sizes.k_dims.clone().unwrap_or_else(|| draw_dims(rng, 1..=2, MAX_BASE_DIM, false));
    let (shift, g_seq) = obfuscated_shift(&k, rng);
    let k_alg = BlockAlgebra::new(k.clone())?;
    let mut summands = Vec::new();
    let (morphism, conjugation, beta) = if p.is_empty() {
        (shift, g_seq, None)
    } else {
        summands.push(Summand::Fin { dims: p.clone() });
        let beta = fin_hom_expr(automorphism(&p, rng));
        let g_p = fin_hom_expr(automorphism(&p, rng));
        let g = MorphismExpr::DirectSum { parts: vec![g_p, g_seq] };
        let canonical = MorphismExpr::DirectSum { parts: vec![beta.clone(), MorphismExpr::SeqShift { power: 1 }] };
        let alpha = MorphismExpr::Compose {
            chain: vec![g.clone(), canonical, MorphismExpr::Inverse { of: Box::new(g.clone()) }],
        };
        (alpha, g, Some(beta))
    };
    summands.push(Summand::seq(&k_alg, Side::OneSided));
    let algebra = ComputableAlgebra::new(summands)?;
    let mut instance = InstanceFile::new(&algebra, morphism);
    instance.params.seed = Some(seed);
    let witness = WitnessFile {
        schema_version: SCHEMA_VERSION,
        kind: Kind::SurjectiveObfuscated.name().into(),
        seed,
        p_summands: if p.is_empty() { vec![] } else { vec![Summand::Fin { dims: p }] },
        k_dims: k,
        beta,
        conjugation: Some(conjugation),
        tail_fin_dims: None,
        reach_bound: None,
    };
    Ok(Generated { instance, witness })
}

/// Block dims of `∩ αⁿ(F)` from the span of `αᴺ` applied to matrix units,
/// with `N` past the block count.
fn tail_dims_by_span(hom: &FinHomData, dims: &[usize]) -> CliResult<Vec<usize>> {
    let f = BlockAlgebra::new(dims.to_vec())?;
    let h = hom.build(&f)?;
    let mut pw = h.clone();
    for _ in 0..dims.len() {
        pw = h.compose(&pw)?;
    }
    let gens: Vec<AlgebraElement> = f.matrix_units().iter().map(|u| pw.apply(u)).collect::<endolift::Result<_>>()?;
    let sub = subalgebra_structure(&f, &gens, 11, DEFAULT_TOL)?;
    let mut out = sub.algebra.dims().to_vec();
    out.sort_unstable();
    Ok(out)
}

struct EndoParts {
    algebra: ComputableAlgebra,
    morphism: MorphismExpr,
    fin: Vec<usize>,
    k: Vec<usize>,
    tail_fin_dims: Vec<usize>,
    conjugation: Option<MorphismExpr>,
}

fn endo_parts(sizes: &Sizes, rng: &mut ChaCha8Rng) -> CliResult<EndoParts> {
    let fin = sizes.fin_dims.clone().unwrap_or_else(|| draw_dims(rng, 2..=4, 3, true));
    if !fin.contains(&1) {
        return Err(CliError::Core(endolift::Error::Precondition("random endomorphisms need a block of dimension 1".into())));
    }
    let with_seq = sizes.k_dims.is_some() || rng.gen_bool(0.5);
    let hom = endomorphism(&fin, rng);
    let tail_fin_dims = tail_dims_by_span(&hom, &fin)?;
    let fin_expr = fin_hom_expr(hom);
    let mut summands = vec![Summand::Fin { dims: fin.clone() }];
    let (morphism, k, conjugation) = if with_seq {
        let k = sizes.k_dims.clone().unwrap_or_else(|| draw_dims(rng, 1..=2, 2, false));
        let (shift, g) = obfuscated_shift(&k, rng);
        summands.push(Summand::Seq { base: k.clone(), side: Side::OneSided });
        (MorphismExpr::DirectSum { parts: vec![fin_expr, shift] }, k, Some(g))
    } else {
        (fin_expr, vec![], None)
    };
    Ok(EndoParts { algebra: ComputableAlgebra::new(summands)?, morphism, fin, k, tail_fin_dims, conjugation })
}

fn endo(seed: u64, sizes: &Sizes, rng: &mut ChaCha8Rng) -> CliResult<Generated> {
    let parts = endo_parts(sizes, rng)?;
    let mut instance = InstanceFile::new(&parts.algebra, parts.morphism);
    instance.params.seed = Some(seed);
    let witness = WitnessFile {
        schema_version: SCHEMA_VERSION,
        kind: Kind::Endomorphism.name().into(),
        seed,
        p_summands: vec![],
        k_dims: parts.k,
        beta: None,
        conjugation: parts.conjugation,
        tail_fin_dims: Some(parts.tail_fin_dims),
        reach_bound: None,
    };
    let _ = parts.fin;
    Ok(Generated { instance, witness })
}

/// Random rank-`r` projection in `M_d`.
fn random_projection<R: Rng>(d: usize, r: usize, rng: &mut R) -> CMat {
    let u = linalg::random_unitary(d, rng);
    let v = u.columns(0, r).into_owned();
    &v * v.adjoint()
}

fn dilation(seed: u64, sizes: &Sizes, rng: &mut ChaCha8Rng) -> CliResult<Generated> {
    for _ in 0..64 {
        let parts = endo_parts(sizes, rng)?;
        let alpha = parts.morphism.compile(&parts.algebra)?;
        let m = rng.gen_range(1..=2);
        let chain = kernel_chain(&alpha, m, DEFAULT_TOL)?;
        let c_m = &chain[m - 1];
        if c_m.is_zero() {
            continue;
        }
        let prev = if m >= 2 { Some(&chain[m - 2]) } else { None };
        let n = &parts.algebra;
        let whole = c_m.to_element(n);
        let mut q_parts = Vec::new();
        for (j, (s, part)) in n.summands().iter().zip(&c_m.parts).enumerate() {
            match (s, part) {
                (Summand::Fin { dims }, MaskPart::Fin(mask)) => {
                    let blocks = dims
                        .iter()
                        .enumerate()
                        .map(|(b, &d)| {
                            let r = BlockRef { summand: j, coord: 0, block: b };
                            if prev.is_some_and(|c| c.contains(&r)) {
                                linalg::identity(d)
                            } else if mask[b] {
                                let rank = rng.gen_range(0..=d);
                                random_projection(d, rank, rng)
                            } else {
                                linalg::zeros(d)
                            }
                        })
                        .collect();
                    q_parts.push(Part::Fin(AlgebraElement::new(blocks)));
                }
                _ => q_parts.push(whole.parts[j].clone()),
            }
        }
        let q = Element::new(q_parts);
        let p = n.identity().sub(&q)?;
        let mut instance = InstanceFile::new(n, parts.morphism);
        instance.projection = Some(element_to_parts(&p));
        instance.params.seed = Some(seed);
        let witness = WitnessFile {
            schema_version: SCHEMA_VERSION,
            kind: Kind::Dilation.name().into(),
            seed,
            p_summands: vec![],
            k_dims: parts.k,
            beta: None,
            conjugation: parts.conjugation,
            tail_fin_dims: Some(parts.tail_fin_dims),
            reach_bound: Some(m),
        };
        return Ok(Generated { instance, witness });
    }
    Err(CliError::Core(endolift::Error::Internal("no non-injective endomorphism found for the dilation".into())))
}
