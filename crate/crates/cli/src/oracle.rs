//! Dense cross-checks of the structural routines on a finite window.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use endolift::algebra::{subalgebra_structure, AlgebraElement, BlockAlgebra};
use endolift::linalg::{self, CMat};
use endolift::morphism::{DenseOracle, StructuralMorphism};
use endolift::seq::{BlockRef, ComputableAlgebra, Element, Functional, Part, Summand};
use endolift::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub defect: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub window: usize,
    pub checks: Vec<Check>,
}

impl OracleReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    fn push(&mut self, name: &str, defect: f64, pass: bool) {
        self.checks.push(Check { name: name.into(), defect, pass });
    }
}

fn column_mass(m: &CMat, k: usize) -> f64 {
    m.column(k).iter().map(|z| z.norm_sqr()).sum()
}

/// Columns whose full image lies inside the window: their mass agrees with
/// the mass seen through a window twice as wide.
fn captured_columns(small: &DenseOracle, wide: &DenseOracle, tol: f64) -> Vec<usize> {
    (0..small.source_units.len())
        .filter(|&k| {
            let kw = wide.column_of(&small.source_units[k]).expect("wide window contains the small one");
            (column_mass(&small.matrix, k) - column_mass(&wide.matrix, kw)).abs() <= tol
        })
        .collect()
}

fn blocks_of(o: &DenseOracle) -> Vec<BlockRef> {
    let mut out: Vec<BlockRef> = o.source_units.iter().map(|(b, _, _)| *b).collect();
    out.dedup();
    out
}

/// All finite summands flattened into one block algebra.
fn flatten(algebra: &ComputableAlgebra) -> Option<BlockAlgebra> {
    let mut dims = Vec::new();
    for s in algebra.summands() {
        match s {
            Summand::Fin { dims: d } => dims.extend_from_slice(d),
            Summand::Seq { .. } => return None,
        }
    }
    BlockAlgebra::new(dims).ok()
}

fn flatten_element(x: &Element) -> AlgebraElement {
    let mut blocks = Vec::new();
    for p in &x.parts {
        if let Part::Fin(a) = p {
            blocks.extend(a.blocks().iter().cloned());
        }
    }
    AlgebraElement::new(blocks)
}

/// Runs every dense comparison for the endomorphism `alpha`.
pub fn check_morphism(alpha: &StructuralMorphism, seed: u64, tol: f64) -> Result<OracleReport> {
    let w = alpha.min_window().max(3);
    let small = alpha.dense_oracle(w)?;
    let wide = alpha.dense_oracle(2 * w + 2)?;
    let mut report = OracleReport { window: w, checks: Vec::new() };
    let algebra = alpha.source();
    let captured = captured_columns(&small, &wide, tol);

    // Kernel blocks are exactly the blocks whose units map to zero.
    let kernel = alpha.kernel_projection();
    let mut kernel_mismatch = 0usize;
    for b in blocks_of(&small) {
        let unit = algebra.matrix_unit(&b, 0, 0);
        let dead = alpha.apply(&unit)?.is_zero(tol);
        if dead != kernel.contains(&b) {
            kernel_mismatch += 1;
        }
    }
    report.push("kernel-mask", kernel_mismatch as f64, kernel_mismatch == 0);

    // Off the kernel the map is injective on captured units.
    let live: Vec<usize> = captured.iter().copied().filter(|&k| !kernel.contains(&small.source_units[k].0)).collect();
    let sub = CMat::from_fn(small.matrix.nrows(), live.len(), |i, j| small.matrix[(i, live[j])]);
    let rank = linalg::sparse_rank(&sub, 1e-8);
    report.push("rank-off-kernel", (live.len() - rank) as f64, rank == live.len());

    // Composition agrees with the matrix product where both are exact.
    let square = alpha.compose(alpha)?.dense_oracle(w)?;
    let product = &small.matrix * &small.matrix;
    let mut comp = 0.0f64;
    for &k in &captured {
        for i in 0..small.target_units.len() {
            if small.complete[i] {
                comp = comp.max((product[(i, k)] - square.matrix[(i, k)]).norm());
            }
        }
    }
    report.push("composition", comp, comp <= tol);

    // The structural predual agrees with pairing through the dense matrix.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = Functional::random(alpha.target(), &mut rng, w);
    let pulled = alpha.predual_compose(&rho)?;
    let row_values: Vec<_> = small
        .target_units
        .iter()
        .map(|(b, c, d)| rho.apply(&alpha.target().matrix_unit(b, *c, *d)))
        .collect::<Result<_>>()?;
    let mut pred = 0.0f64;
    for &k in &captured {
        let (b, a, c) = &small.source_units[k];
        let structural = pulled.apply(&algebra.matrix_unit(b, *a, *c))?;
        let dense: endolift::linalg::C64 = (0..small.target_units.len()).map(|i| row_values[i] * small.matrix[(i, k)]).sum();
        pred = pred.max((structural - dense).norm());
    }
    report.push("predual", pred, pred <= tol);

    // On finite algebras the image block dims match an independent
    // subalgebra computation.
    if let Some(f) = flatten(algebra) {
        let gens: Vec<AlgebraElement> = algebra
            .window_units(w)
            .iter()
            .map(|(b, a, c)| alpha.apply(&algebra.matrix_unit(b, *a, *c)).map(|y| flatten_element(&y)))
            .collect::<Result<_>>()?;
        let mut expected: Vec<usize> =
            blocks_of(&small).iter().filter(|b| !kernel.contains(b)).map(|b| algebra.block_dim(b)).collect();
        expected.sort_unstable();
        let mut got = subalgebra_structure(&f, &gens, seed, 1e-8)?.algebra.dims().to_vec();
        got.sort_unstable();
        let same = got == expected;
        report.push("image-dims", if same { 0.0 } else { 1.0 }, same);
    }
    Ok(report)
}
