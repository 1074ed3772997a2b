use std::sync::OnceLock;

use proptest::prelude::*;

use hermite_nls::hermite::{to_coeffs, to_grid, BasisTable, HermiteState, C64};
use hermite_nls::lens::{lens_forward, lens_inverse, nls_side_norm};
use hermite_nls::norms::{besov_norm, lp_norm, sobolev_norm, BesovSpec};
use hermite_nls::random::{nu_density, sample_mu0, SampleSeed};

const MODES: usize = 24;

fn basis() -> &'static BasisTable {
    static B: OnceLock<BasisTable> = OnceLock::new();
    B.get_or_init(|| BasisTable::with_oversampling(MODES, 4).unwrap())
}

fn state() -> impl Strategy<Value = HermiteState> {
    prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), MODES)
        .prop_map(|v| HermiteState::new(v.into_iter().map(|(a, b)| C64::new(a, b)).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lens_is_an_l2_isometry(u in state(), t in -0.78f64..0.78) {
        let nls = lens_inverse(&u, t, basis()).unwrap();
        prop_assert!((nls.lp_norm(2.0) - u.l2_norm()).abs() <= 1e-10 * u.l2_norm().max(1.0));
        let back = lens_forward(&nls.values, t, basis().grid()).unwrap();
        let direct = to_grid(&u, basis()).unwrap();
        for (a, b) in back.iter().zip(&direct) {
            prop_assert!((a - b).norm() < 1e-10 * u.l2_norm().max(1.0));
        }
    }

    #[test]
    fn lq_norms_scale_with_the_lens(u in state(), t in -0.78f64..0.78, q in 2.0f64..8.0) {
        let direct = lens_inverse(&u, t, basis()).unwrap().lp_norm(q);
        let scaled = nls_side_norm(&u, t, q, basis()).unwrap();
        prop_assert!((direct - scaled).abs() <= 1e-10 * direct.max(1e-12));
    }

    #[test]
    fn besov_sup_is_below_l2(u in state()) {
        let b = besov_norm(&u, BesovSpec::b0_2_inf(), basis()).unwrap();
        prop_assert!(b <= u.l2_norm() * (1.0 + 1e-12));
    }

    #[test]
    fn sobolev_norm_increases_with_sigma(u in state(), a in -2.0f64..2.0, d in 0.0f64..2.0) {
        prop_assert!(sobolev_norm(&u, a) <= sobolev_norm(&u, a + d) * (1.0 + 1e-12));
    }

    #[test]
    fn parseval_and_round_trip(u in state()) {
        let l2 = lp_norm(&u, 2.0, basis()).unwrap();
        prop_assert!((l2 - u.l2_norm()).abs() <= 1e-10 * u.l2_norm().max(1.0));
        let back = to_coeffs(&to_grid(&u, basis()).unwrap(), basis(), MODES).unwrap();
        prop_assert!(back.sub(&u).l2_norm() <= 1e-10 * u.l2_norm().max(1.0));
    }

    #[test]
    fn linear_flow_is_a_unitary_group(u in state(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let ab = u.linear_flow(a).linear_flow(b);
        prop_assert!(ab.sub(&u.linear_flow(a + b)).l2_norm() < 1e-12 * u.l2_norm().max(1.0));
        prop_assert!((u.linear_flow(a).l2_norm() - u.l2_norm()).abs() < 1e-12 * u.l2_norm().max(1.0));
    }

    #[test]
    fn nu_density_is_a_probability_weight(u in state(), t in -0.7f64..0.7, p in 1.5f64..7.0) {
        let d = nu_density(&u, t, p, Some(MODES - 1), basis()).unwrap();
        prop_assert!(d > 0.0 || u.l2_norm() > 3.0);
        prop_assert!(d <= 1.0);
    }

    #[test]
    fn draws_depend_only_on_the_key(seed in any::<u64>(), index in any::<u64>(), n in 1usize..64) {
        let key = SampleSeed::new(seed, index);
        let a = sample_mu0(n, key);
        let again = sample_mu0(n, key);
        let longer = sample_mu0(n + 5, key);
        prop_assert_eq!(a.coeffs(), again.coeffs());
        prop_assert_eq!(&longer.coeffs()[..n], a.coeffs());
    }
}
