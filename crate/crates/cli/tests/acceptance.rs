//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use endolift::algebra::BlockAlgebra;
use endolift::endo::{
    asymptotic_lift, connecting_isomorphism, convergence_table, kernel_chain, mask_of_projection, max_defect_on_units,
    shift_decomposition, spanning_window, violating_functional, AsymptoticLift,
};
use endolift::expr::MorphismExpr;
use endolift::morphism::StructuralMorphism;
use endolift::seq::{CentralMask, ComputableAlgebra, Functional, Side, Summand};
use endolift::ucp::{asymptotic_lift_ucp, verify_norm_identities, DilationInstance};
use endolift_cli::generate::{generate, Generated, Kind, Sizes};
use endolift_cli::oracle::check_morphism;

type Outcome = Result<String, String>;

const HORIZON: usize = 16;
const TOL: f64 = 1e-10;

struct Case {
    g: Generated,
    alpha: StructuralMorphism,
}

fn corpus(kind: Kind, seeds: std::ops::Range<u64>) -> Vec<Case> {
    seeds
        .map(|seed| {
            let g = generate(kind, seed, &Sizes::default()).expect("generator");
            let alpha = g.instance.morphism.compile(&g.instance.algebra().unwrap()).expect("compile");
            Case { g, alpha }
        })
        .collect()
}

fn surjective() -> Vec<Case> {
    corpus(Kind::SurjectiveObfuscated, 0..50)
}

fn endomorphisms() -> Vec<Case> {
    let mut all = surjective();
    all.extend(corpus(Kind::Endomorphism, 0..50));
    all
}

fn dilations() -> Vec<Case> {
    corpus(Kind::Dilation, 0..25)
}

fn fin_dims(summands: &[Summand]) -> Vec<usize> {
    let mut out: Vec<usize> = summands
        .iter()
        .filter_map(|s| match s {
            Summand::Fin { dims } => Some(dims.clone()),
            Summand::Seq { .. } => None,
        })
        .flatten()
        .collect();
    out.sort_unstable();
    out
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v
}

fn err(seed: u64, what: impl std::fmt::Display) -> String {
    format!("seed {seed}: {what}")
}

fn criterion_1() -> Outcome {
    let mut slowest = Duration::ZERO;
    let mut worst: f64 = 0.0;
    for c in surjective() {
        let seed = c.g.witness.seed;
        let p_dims = fin_dims(&c.g.witness.p_summands);
        if p_dims.iter().map(|d| d * d).sum::<usize>() > 16 || c.g.witness.k_dims.iter().any(|&d| d > 3) {
            return Err(err(seed, "instance exceeds the corpus bounds"));
        }
        let t = Instant::now();
        let d = shift_decomposition(&c.alpha, HORIZON, TOL).map_err(|e| err(seed, e))?;
        let lhs = d.theta.compose(&d.model).map_err(|e| err(seed, e))?;
        let rhs = c.alpha.compose(&d.theta).map_err(|e| err(seed, e))?;
        let (defect, _) = max_defect_on_units(&lhs, &rhs, spanning_window(&[&lhs, &rhs])).map_err(|e| err(seed, e))?;
        slowest = slowest.max(t.elapsed());
        let k = d.k.as_ref().map(|k| sorted(k.dims())).unwrap_or_default();
        if k != sorted(&c.g.witness.k_dims) {
            return Err(err(seed, format!("K dims {k:?} differ from witness {:?}", c.g.witness.k_dims)));
        }
        if fin_dims(d.p.algebra.summands()) != p_dims {
            return Err(err(seed, format!("P {:?} is not the witness {p_dims:?}", d.p.algebra.summands())));
        }
        if defect > 1e-9 {
            return Err(err(seed, format!("conjugacy defect {defect:.3e}")));
        }
        worst = worst.max(defect);
    }
    if slowest >= Duration::from_secs(1) {
        return Err(format!("slowest decomposition took {slowest:?}"));
    }
    Ok(format!("50 instances, max conjugacy defect {worst:.2e}, slowest {slowest:?}"))
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    for c in surjective() {
        let seed = c.g.witness.seed;
        let m = c.alpha.source();
        let chain = kernel_chain(&c.alpha, HORIZON, TOL).map_err(|e| err(seed, e))?;
        let mut lower = CentralMask::zero(m);
        for upper in &chain {
            let image = c.alpha.apply(&upper.to_element(m)).map_err(|e| err(seed, e))?;
            let mask = mask_of_projection(m, &image, TOL).map_err(|e| err(seed, e))?;
            if mask != lower {
                return Err(err(seed, "α(c_{n+1}) and c_n differ as masks"));
            }
            let d = image.distance(&lower.to_element(m));
            if d > 1e-10 {
                return Err(err(seed, format!("α(c_{{n+1}}) − c_n has size {d:.3e}")));
            }
            worst = worst.max(d);
            lower = upper.clone();
        }
    }
    Ok(format!("50 instances, horizon {HORIZON}, max element defect {worst:.2e}"))
}

fn check_lift(c: &Case) -> Result<AsymptoticLift, String> {
    let seed = c.g.witness.seed;
    let l = asymptotic_lift(&c.alpha, HORIZON, TOL).map_err(|e| err(seed, e))?;
    let e = &l.lifting.e;
    let lhs = e.compose(&l.lifting.beta).map_err(|e| err(seed, e))?;
    let rhs = c.alpha.compose(e).map_err(|e| err(seed, e))?;
    let (defect, _) = max_defect_on_units(&lhs, &rhs, l.window).map_err(|e| err(seed, e))?;
    if defect > TOL {
        return Err(err(seed, format!("E∘β − α∘E = {defect:.3e}")));
    }
    if l.range_defect > TOL {
        return Err(err(seed, format!("range defect {:.3e}", l.range_defect)));
    }
    let tail = fin_dims(l.tail.algebra().summands());
    let expected = match &c.g.witness.tail_fin_dims {
        Some(d) => sorted(d),
        None => fin_dims(&c.g.witness.p_summands),
    };
    if tail != expected || fin_dims(l.lifting.n.summands()) != expected {
        return Err(err(seed, format!("tail dims {tail:?}, lift dims {:?}, oracle {expected:?}", l.lifting.n.summands())));
    }
    let dead = l.lifting.degenerate_blocks(l.window, 2 * l.window, TOL).map_err(|e| err(seed, e))?;
    if !dead.is_empty() {
        return Err(err(seed, format!("degenerate at {:?}", dead[0])));
    }
    Ok(l)
}

fn criterion_3() -> Outcome {
    let cases = endomorphisms();
    let non_surjective = cases.iter().filter(|c| !c.alpha.is_surjective()).count();
    for c in &cases {
        check_lift(c)?;
    }
    Ok(format!("{} instances ({non_surjective} non-surjective)", cases.len()))
}

/// Stabilization check and scalar-lift violation for one map.
fn convergence_case(alpha: &StructuralMorphism, seed: u64) -> Result<bool, String> {
    let l = asymptotic_lift(alpha, HORIZON, TOL).map_err(|e| err(seed, e))?;
    let index = l.tail.stabilization.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100 {
        let rho = Functional::random(alpha.source(), &mut rng, l.window);
        let t = convergence_table(alpha, &l.lifting.e, &rho, index.max(4), TOL).map_err(|e| err(seed, e))?;
        let gap = (t.norms[index - 1] - t.limit).abs();
        if gap > 1e-8 {
            return Err(err(seed, format!("‖ρ∘αⁿ‖ misses ‖ρ∘E‖ by {gap:.3e} at n = {index}")));
        }
    }
    let tail = l.tail.algebra();
    let scalar_tail = tail.summands() == [Summand::Fin { dims: vec![1] }];
    let found = violating_functional(&l, &mut rng, 64, 1e-8).map_err(|e| err(seed, e))?.is_some();
    if !scalar_tail && !found {
        return Err(err(seed, "no functional separates the scalar lift"));
    }
    Ok(!scalar_tail)
}

fn criterion_4_at(level: usize) -> Outcome {
    let cases = endomorphisms();
    let mut shrunk = 0;
    for c in &cases {
        let alpha = if level == 1 { c.alpha.clone() } else { c.alpha.promote(level).map_err(|e| err(c.g.witness.seed, e))? };
        if convergence_case(&alpha, c.g.witness.seed)? {
            shrunk += 1;
        }
    }
    Ok(format!("{} instances x 100 functionals, {shrunk} strict scalar lifts separated", cases.len()))
}

fn criterion_5_at(level: usize) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut lifting: f64 = 0.0;
    for c in dilations() {
        let seed = c.g.witness.seed;
        let n = c.g.instance.algebra().unwrap();
        let p = c.g.instance.projection(&n).unwrap().expect("dilation instances carry a projection");
        let mut d = DilationInstance::new(c.alpha.clone(), p).map_err(|e| err(seed, e))?;
        if level > 1 {
            d = d.promote(level).map_err(|e| err(seed, e))?;
        }
        let cl = asymptotic_lift_ucp(&d, HORIZON, TOL).map_err(|e| err(seed, e))?;
        if cl.lifting_defect > 1e-9 {
            return Err(err(seed, format!("φ∘Ẽ − Ẽ∘α̃ = {:.3e}", cl.lifting_defect)));
        }
        lifting = lifting.max(cl.lifting_defect);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let rho = cl.compression.random_functional(&mut rng, cl.lift.window);
            let t = verify_norm_identities(&cl, &rho, 20, 1e-8).map_err(|e| err(seed, e))?;
            if t.max_gap > 1e-8 {
                return Err(err(seed, format!("norm identities differ by {:.3e}", t.max_gap)));
            }
            worst = worst.max(t.max_gap);
        }
    }
    Ok(format!("25 instances x 20 functionals, max gap {worst:.2e}, max lifting defect {lifting:.2e}"))
}

fn criterion_6() -> Outcome {
    let mut lines = Vec::new();
    for k in [2, 3] {
        lines.push(format!("k={k} [{}]", criterion_4_at(k).map_err(|e| format!("k={k} convergence: {e}"))?));
        lines.push(format!("k={k} [{}]", criterion_5_at(k).map_err(|e| format!("k={k} dilation: {e}"))?));
    }
    Ok(lines.join("; "))
}

fn criterion_7() -> Outcome {
    let mut all = endomorphisms();
    all.extend(dilations());
    let mut checks = 0;
    for c in &all {
        let r = check_morphism(&c.alpha, c.g.witness.seed, TOL).map_err(|e| err(c.g.witness.seed, e))?;
        if let Some(bad) = r.checks.iter().find(|x| !x.pass) {
            return Err(err(c.g.witness.seed, format!("{} check fails with defect {:.3e}", bad.name, bad.defect)));
        }
        checks += r.checks.len();
    }
    Ok(format!("{} instances, {checks} oracle comparisons", all.len()))
}

fn fixture_collapse() -> Result<(), String> {
    let m = ComputableAlgebra::fin(&BlockAlgebra::new(vec![1, 1]).unwrap());
    let alpha = MorphismExpr::FinDimHom { multiplicity: vec![vec![0, 1], vec![0, 1]], unitaries: None }.compile(&m).map_err(|e| e.to_string())?;
    let l = asymptotic_lift(&alpha, 4, 1e-12).map_err(|e| e.to_string())?;
    let c = ComputableAlgebra::fin(&BlockAlgebra::new(vec![1]).unwrap());
    if l.tail.algebra() != &c || l.lifting.n != c {
        return Err("collapse: tail or lift is not ℂ".into());
    }
    let one = c.identity();
    if l.lifting.beta.apply(&one).map_err(|e| e.to_string())?.distance(&one) > 1e-12 {
        return Err("collapse: β is not the identity".into());
    }
    if l.lifting.e.apply(&one).map_err(|e| e.to_string())?.distance(&m.identity()) > 1e-12 {
        return Err("collapse: E(t) is not (t, t)".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let rho = Functional::random(&m, &mut rng, 1);
        let t = convergence_table(&alpha, &l.lifting.e, &rho, 5, 1e-12).map_err(|e| e.to_string())?;
        if t.converged_at != Some(1) {
            return Err(format!("collapse: converged at {:?}", t.converged_at));
        }
    }
    Ok(())
}

fn fixture_shift() -> Result<(), String> {
    let k = BlockAlgebra::new(vec![1]).unwrap();
    let m = ComputableAlgebra::seq(&k, Side::OneSided);
    let alpha = MorphismExpr::SeqShift { power: 1 }.compile(&m).map_err(|e| e.to_string())?;
    let d = shift_decomposition(&alpha, 4, 1e-12).map_err(|e| e.to_string())?;
    if d.limit.mask != CentralMask::one(&m) || !d.p.algebra.summands().is_empty() {
        return Err("shift: c ≠ 1 or P ≠ 0".into());
    }
    let l = asymptotic_lift(&alpha, 4, 1e-12).map_err(|e| e.to_string())?;
    if l.lifting.n != ComputableAlgebra::seq(&k, Side::TwoSided) {
        return Err(format!("shift: N = {:?}", l.lifting.n));
    }
    let sigma = StructuralMorphism::shift(&k, Side::TwoSided, 1).map_err(|e| e.to_string())?;
    let positive = StructuralMorphism::positive_part(&k).map_err(|e| e.to_string())?;
    let w = l.window.max(6);
    let (db, _) = max_defect_on_units(&l.lifting.beta, &sigma, w).map_err(|e| e.to_string())?;
    let (de, _) = max_defect_on_units(&l.lifting.e, &positive, w).map_err(|e| e.to_string())?;
    if db > 1e-12 || de > 1e-12 {
        return Err(format!("shift: β defect {db:.2e}, E defect {de:.2e}"));
    }
    Ok(())
}

fn fixture_dilation() -> Result<(), String> {
    let m = ComputableAlgebra::fin(&BlockAlgebra::new(vec![1, 1]).unwrap());
    let alpha = MorphismExpr::FinDimHom { multiplicity: vec![vec![0, 1], vec![0, 1]], unitaries: None }.compile(&m).map_err(|e| e.to_string())?;
    let p = m.block_identity(&endolift::seq::BlockRef { summand: 0, coord: 0, block: 1 });
    let d = DilationInstance::new(alpha, p.clone()).map_err(|e| e.to_string())?;
    let cl = asymptotic_lift_ucp(&d, 4, 1e-12).map_err(|e| e.to_string())?;
    if cl.compression.apply(&p).map_err(|e| e.to_string())?.distance(&p) > 1e-12 {
        return Err("dilation: φ ≠ id on pMp".into());
    }
    let one = cl.n_tilde().identity();
    if cl.n_tilde().summands() != [Summand::Fin { dims: vec![1] }] || cl.e_tilde(&one).map_err(|e| e.to_string())?.distance(&p) > 1e-12 {
        return Err("dilation: Ẽ is not the identity ℂ → pMp".into());
    }
    if cl.lifting_defect > 1e-12 {
        return Err(format!("dilation: lifting defect {:.2e}", cl.lifting_defect));
    }
    Ok(())
}

fn criterion_8() -> Outcome {
    fixture_collapse()?;
    fixture_shift()?;
    fixture_dilation()?;
    Ok("collapse, backward shift and two-point dilation fixtures exact to 1e-12".into())
}

fn criterion_9() -> Outcome {
    let mut worst: f64 = 0.0;
    for c in corpus(Kind::SurjectiveObfuscated, 0..10) {
        let seed = c.g.witness.seed;
        let m = c.alpha.source().clone();
        let g = MorphismExpr::Inverse { of: Box::new(c.g.witness.conjugation.clone().expect("conjugation")) }
            .compile(&m)
            .map_err(|e| err(seed, e))?;
        let second_alpha = g.compose(&c.alpha).and_then(|x| x.compose(&g.inverse()?)).map_err(|e| err(seed, e))?;
        let first = asymptotic_lift(&c.alpha, HORIZON, TOL).map_err(|e| err(seed, e))?;
        let second = asymptotic_lift(&second_alpha, HORIZON, TOL).map_err(|e| err(seed, e))?;
        let conn = connecting_isomorphism(&first, &second, &g, 1e-9).map_err(|e| err(seed, e))?;
        let gamma = &conn.gamma;
        let w = first.window.max(second.window);
        let (d1, _) = max_defect_on_units(
            &gamma.compose(&first.lifting.beta).map_err(|e| err(seed, e))?,
            &second.lifting.beta.compose(gamma).map_err(|e| err(seed, e))?,
            w,
        )
        .map_err(|e| err(seed, e))?;
        let transported = g.inverse().and_then(|gi| gi.compose(&second.lifting.e)).map_err(|e| err(seed, e))?;
        let (d2, _) =
            max_defect_on_units(&transported.compose(gamma).map_err(|e| err(seed, e))?, &first.lifting.e, w).map_err(|e| err(seed, e))?;
        if d1 > 1e-9 || d2 > 1e-9 {
            return Err(err(seed, format!("γ∘β₁ − β₂∘γ = {d1:.3e}, E₂∘γ − E₁ = {d2:.3e}")));
        }
        worst = worst.max(d1).max(d2);
    }
    Ok(format!("10 conjugate pairs, max defect {worst:.2e}"))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("1 decomposition round-trip", criterion_1),
        ("2 kernel chain steps", criterion_2),
        ("3 asymptotic lift", criterion_3),
        ("4 norm convergence", || criterion_4_at(1)),
        ("5 dilation norm identities", || criterion_5_at(1)),
        ("6 matrix levels 2 and 3", criterion_6),
        ("7 dense oracle agreement", criterion_7),
        ("8 hand fixtures", criterion_8),
        ("9 connecting isomorphism", criterion_9),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let results: Vec<(&str, Outcome, Duration)> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .filter(|(name, _)| only.is_empty() || only.iter().any(|o| name.split(' ').next() == Some(o.as_str())))
            .map(|(name, f)| {
                s.spawn(move || {
                    let t = Instant::now();
                    let r = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
                    (*name, r, t.elapsed())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("criterion thread")).collect()
    });
    let mut failed = 0;
    for (name, r, t) in &results {
        match r {
            Ok(detail) => println!("criterion {name}: PASS ({detail}) [{:.1}s]", t.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("criterion {name}: FAIL ({detail}) [{:.1}s]", t.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
