use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use endolift::algebra::{BlockAlgebra, FinHom};
use endolift::endo::{asymptotic_lift, kernel_chain, max_defect_on_units, spanning_window, tail_algebra};
use endolift::expr::MorphismExpr;
use endolift::linalg;
use endolift::morphism::StructuralMorphism;
use endolift::seq::{ComputableAlgebra, Functional, Side};

/// Unital endomorphism of `⊕M_d` with a dimension-1 block so every target
/// block can be filled.
fn random_endo(seed: u64) -> StructuralMorphism {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=3);
    let mut dims: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
    dims[0] = 1;
    let mut mult = vec![vec![0; n]; n];
    for (t, &d) in dims.iter().enumerate() {
        let mut left = d;
        while left > 0 {
            let fits: Vec<usize> = (0..n).filter(|&j| dims[j] <= left).collect();
            let j = fits[rng.gen_range(0..fits.len())];
            mult[t][j] += 1;
            left -= dims[j];
        }
    }
    let us = dims.iter().map(|&d| linalg::random_unitary(d, &mut rng)).collect();
    let a = BlockAlgebra::new(dims).unwrap();
    StructuralMorphism::from_fin_hom(&FinHom::from_multiplicities(a.clone(), a, &mult, Some(us)).unwrap())
}

fn random_automorphism(base: &BlockAlgebra, rng: &mut ChaCha8Rng) -> FinHom {
    let us = base.dims().iter().map(|&d| linalg::random_unitary(d, rng)).collect();
    let n = base.num_blocks();
    let id: Vec<Vec<usize>> = (0..n).map(|i| (0..n).map(|j| usize::from(i == j)).collect()).collect();
    FinHom::from_multiplicities(base.clone(), base.clone(), &id, Some(us)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_chains_increase_and_lifts_intertwine(seed in 0u64..10_000) {
        let alpha = random_endo(seed);
        let chain = kernel_chain(&alpha, 6, 1e-10).unwrap();
        for w in chain.windows(2) {
            prop_assert!(w[0].leq(&w[1]));
        }
        let l = asymptotic_lift(&alpha, 6, 1e-10).unwrap();
        prop_assert!(l.lifting_defect <= 1e-9);
        prop_assert!(l.range_defect <= 1e-10);
        let t = tail_algebra(&alpha, 1e-10).unwrap();
        prop_assert!(t.stabilization <= alpha.source().summands()[0].blocks().num_blocks());
        prop_assert!(t.restriction.is_surjective());
    }

    #[test]
    fn predual_matches_evaluation(seed in 0u64..10_000) {
        let alpha = random_endo(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = Functional::random(alpha.target(), &mut rng, 1);
        let pulled = alpha.predual_compose(&rho).unwrap();
        for (b, i, j) in alpha.source().window_units(1) {
            let x = alpha.source().matrix_unit(&b, i, j);
            let direct = rho.apply(&alpha.apply(&x).unwrap()).unwrap();
            prop_assert!((pulled.apply(&x).unwrap() - direct).norm() <= 1e-10);
        }
    }

    #[test]
    fn promotion_respects_composition(seed in 0u64..10_000, k in 2usize..=3) {
        let f = random_endo(seed);
        let g = f.power(2).unwrap();
        let lhs = g.promote(k).unwrap();
        let rhs = f.promote(k).unwrap().compose(&f.promote(k).unwrap()).unwrap();
        let (d, _) = max_defect_on_units(&lhs, &rhs, 1).unwrap();
        prop_assert!(d <= 1e-10);
    }

    #[test]
    fn coordinate_automorphisms_invert(seed in 0u64..10_000, pre in 0usize..3, per in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = BlockAlgebra::new(vec![1, 2]).unwrap();
        let family = endolift::seq::EpSeq {
            left: vec![],
            lo: 1,
            core: (0..pre).map(|_| random_automorphism(&base, &mut rng)).collect(),
            right: (0..per).map(|_| random_automorphism(&base, &mut rng)).collect(),
        };
        let g = StructuralMorphism::coordinate_map(&family).unwrap();
        let sigma = StructuralMorphism::shift(&base, Side::OneSided, 1).unwrap();
        let conj = g.compose(&sigma).unwrap().compose(&g.inverse().unwrap()).unwrap();
        let id = StructuralMorphism::identity(g.source());
        let round = g.compose(&g.inverse().unwrap()).unwrap();
        let w = spanning_window(&[&round, &conj]);
        prop_assert!(max_defect_on_units(&round, &id, w).unwrap().0 <= 1e-10);
        prop_assert!(conj.is_surjective());
        let l = asymptotic_lift(&conj, 8, 1e-10).unwrap();
        prop_assert!(l.lifting_defect <= 1e-9);
    }
}

#[test]
fn bilateral_shifts_add() {
    let base = BlockAlgebra::new(vec![1, 2]).unwrap();
    let s = |k| StructuralMorphism::shift(&base, Side::TwoSided, k).unwrap();
    let (d, _) = max_defect_on_units(&s(2).compose(&s(-3)).unwrap(), &s(-1), 6).unwrap();
    assert!(d <= 1e-12);
    let (d, _) = max_defect_on_units(&s(3).compose(&s(-3)).unwrap(), &StructuralMorphism::identity(&ComputableAlgebra::seq(&base, Side::TwoSided)), 6).unwrap();
    assert!(d <= 1e-12);
}

#[test]
fn morphism_expressions_survive_json() {
    let expr = MorphismExpr::Compose {
        chain: vec![MorphismExpr::SeqShift { power: 1 }, MorphismExpr::Identity],
    };
    let text = serde_json::to_string(&expr).unwrap();
    assert_eq!(serde_json::from_str::<MorphismExpr>(&text).unwrap(), expr);
    let m = ComputableAlgebra::seq(&BlockAlgebra::new(vec![2]).unwrap(), Side::OneSided);
    let text = serde_json::to_string(m.summands()).unwrap();
    assert_eq!(ComputableAlgebra::new(serde_json::from_str(&text).unwrap()).unwrap(), m);
}
