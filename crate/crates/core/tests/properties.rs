use fockrg_core::feshbach::{kernel_correspondence, smooth_feshbach, DEFAULT_KERNEL_TOL};
use fockrg_core::fock_space::{build_basis, cutoff_op, CutoffPair, Dilation, FrequencyLadder};
use fockrg_core::kernels::{assemble, random_family};
use fockrg_core::linalg::{op_norm, sorted_symmetric_eigen};
use fockrg_core::uniqueness::{telescoping_lhs, telescoping_terms};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cutoff_partition_of_unity(plateau in 0.05f64..0.95, x in 0.0f64..2.0) {
        let pair = CutoffPair::new(plateau).unwrap();
        let s = pair.chi(x).powi(2) + pair.chibar(x).powi(2);
        prop_assert!((s - 1.0).abs() <= 1e-15);
        prop_assert!(pair.chi(x) >= 0.0 && pair.chibar(x) >= 0.0);
    }

    #[test]
    fn telescoping_holds_off_grid(rho in 0.3f64..0.6, n in 0usize..7, lx in -18.0f64..0.0) {
        let pair = CutoffPair::default();
        let x = lx.exp();
        let terms = telescoping_terms(rho, n, x.min(1e-8));
        let lhs = telescoping_lhs(&pair, rho, 0.75, n, terms, x);
        prop_assert!(lhs >= pair.chi_t(x, rho.powi(n as i32)).powi(2));
    }

    #[test]
    fn feshbach_preserves_kernel_dimension(seed in any::<u64>(), scale in 0.001f64..0.05) {
        let ladder = FrequencyLadder::new(0.5, 1.0, 4).unwrap();
        let basis = build_basis(ladder, 3, 2).unwrap().reduced(1e-12).0;
        let n = basis.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let sym = &raw + raw.transpose();
        let w = &sym * (scale / op_norm(&sym));
        let base = DMatrix::from_diagonal(&DVector::from_column_slice(basis.hf_eigs())) + &w;
        let lowest = sorted_symmetric_eigen(&base).0[0];
        let t: Vec<f64> = basis.hf_eigs().iter().map(|e| e - lowest).collect();
        let h = DMatrix::from_diagonal(&DVector::from_column_slice(&t)) + &w;
        let pair = CutoffPair::default();
        let f = smooth_feshbach(&t, &w, &pair, 0.5, &basis).unwrap();
        let (chi, _) = cutoff_op(&basis, &pair, 0.5).unwrap();
        let rep = kernel_correspondence(&h, &f.f.entries, &chi.entries, DEFAULT_KERNEL_TOL);
        prop_assert_eq!(rep.dim_ker_h, 1);
        prop_assert!(rep.dims_match());
        prop_assert!(rep.injectivity_margin.unwrap() > 0.0);
    }

    #[test]
    fn assembled_norm_is_dominated(seed in any::<u64>(), hermitian in any::<bool>()) {
        let ladder = FrequencyLadder::new(0.5, 1.0, 3).unwrap();
        let basis = build_basis(ladder, 2, 2).unwrap().reduced(1e-12).0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_family(&mut rng, ladder, 0.5, 0.5, 2, 1.0, hermitian).unwrap();
        let h = assemble(&f, &basis).unwrap().entries;
        prop_assert!(op_norm(&h) <= (f.family_norm() + f.w00.sup_abs()) * (1.0 + 1e-12));
    }

    #[test]
    fn dilation_round_trip(modes in 3usize..8, rho in prop::sample::select(vec![0.4, 0.5, 0.6])) {
        let ladder = FrequencyLadder::new(rho, 1.0, modes).unwrap();
        let basis = build_basis(ladder, 2, 2).unwrap().reduced(1e-12).0;
        let d = Dilation::new(&basis, rho).unwrap();
        for s in 0..basis.dim() {
            if let Some(t) = d.lower_index(s) {
                prop_assert_eq!(d.raise_index(t), Some(s));
                let ratio = basis.hf_eigs()[t] / basis.hf_eigs()[s].max(f64::MIN_POSITIVE);
                if s != 0 {
                    prop_assert!((ratio - rho).abs() <= 1e-14);
                }
            }
        }
    }
}
