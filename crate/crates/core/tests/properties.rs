use levelcross::crossings::{fano, mean_rate, CrossingMode};
use levelcross::kernels::{
    make_ou_mean_revert, make_rational_quadratic, make_sdho, make_squared_exponential, ou_to_sdho, Autocorrelation,
    Kernel,
};
use levelcross::montecarlo::{count_crossings, simulate_counts, simulate_paths, SimConfig, SimSource};
use levelcross::quadrature::QuadratureSpec;
use proptest::prelude::*;

fn family_kernel() -> impl Strategy<Value = Kernel> {
    prop_oneof![
        (0.1f64..4.0, 0.3f64..3.0, 0.2f64..5.0).prop_map(|(z, w, th)| make_sdho(w, z, th).unwrap()),
        (0.3f64..3.0, 0.1f64..10.0, 0.2f64..5.0).prop_map(|(s, tf, te)| make_ou_mean_revert(s, tf, te).unwrap()),
        (0.3f64..3.0, 0.2f64..5.0, 0.6f64..30.0).prop_map(|(s, t, a)| make_rational_quadratic(s, t, a).unwrap()),
        (0.3f64..3.0, 0.2f64..5.0).prop_map(|(s, t)| make_squared_exponential(s, t).unwrap()),
    ]
}

fn scaled(k: &Kernel, amplitude: f64, time: f64) -> Kernel {
    use levelcross::kernels::KernelFamily::*;
    let f = match k.family() {
        Sdho { omega0, zeta, theta } => Sdho { omega0: omega0 / time, zeta, theta: theta * amplitude * amplitude / (time * time) },
        OuMeanRevert { sigma, tau_f, tau_e } => OuMeanRevert { sigma: sigma * amplitude, tau_f: tau_f * time, tau_e: tau_e * time },
        RationalQuadratic { sigma, tau, alpha } => RationalQuadratic { sigma: sigma * amplitude, tau: tau * time, alpha },
        SquaredExponential { sigma, tau } => SquaredExponential { sigma: sigma * amplitude, tau: tau * time },
    };
    Kernel::from_family(f).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn derivatives_match_finite_differences(k in family_kernel(), s in 0.01f64..8.0) {
        let h = 1e-5 * k.tau_slow();
        let t = s * k.tau_slow();
        let d = k.eval(t).unwrap();
        let (plus, minus) = (k.eval(t + h).unwrap(), k.eval(t - h).unwrap());
        let p_fd = (plus.r - minus.r) / (2.0 * h);
        let q_fd = -(plus.p - minus.p) / (2.0 * h);
        let scale_p = k.r0() / k.tau_slow();
        prop_assert!((p_fd - d.p).abs() <= (1e-6 * scale_p).max(1e-4 * d.p.abs()));
        prop_assert!((q_fd - d.q).abs() <= (1e-6 * k.q0()).max(1e-4 * d.q.abs()));
    }

    #[test]
    fn correlation_stays_below_the_variance(k in family_kernel(), s in 1e-3f64..50.0) {
        let d = k.eval(s * k.tau_slow()).unwrap();
        prop_assert!(d.r.abs() < k.r0());
    }

    #[test]
    fn oscillator_equipartition(w in 0.1f64..10.0, z in 0.05f64..10.0, th in 0.01f64..100.0) {
        let k = make_sdho(w, z, th).unwrap();
        prop_assert_eq!(k.r0(), th / (w * w));
        prop_assert_eq!(k.q0(), th);
    }

    #[test]
    fn ou_kernel_is_an_overdamped_oscillator(s in 0.2f64..5.0, tf in 0.05f64..20.0, te in 0.05f64..20.0, x in 0.0f64..6.0) {
        prop_assume!((tf / te - 1.0).abs() > 1e-3);
        let ou = make_ou_mean_revert(s, tf, te).unwrap();
        let (w, z, th) = ou_to_sdho(s, tf, te);
        prop_assert!(z >= 1.0);
        let sd = make_sdho(w, z, th).unwrap();
        let t = x * tf.max(te);
        let (a, b) = (ou.eval(t).unwrap(), sd.eval(t).unwrap());
        prop_assert!((a.r - b.r).abs() <= 1e-10 * ou.r0());
    }

    #[test]
    fn mean_rate_ignores_damping(w in 0.1f64..10.0, th in 0.1f64..10.0, z1 in 0.05f64..8.0, z2 in 0.05f64..8.0, u in -3.0f64..3.0) {
        let a = make_sdho(w, z1, th).unwrap();
        let b = make_sdho(w, z2, th).unwrap();
        for mode in [CrossingMode::Up, CrossingMode::Total] {
            prop_assert_eq!(mean_rate(&a, u, mode).to_bits(), mean_rate(&b, u, mode).to_bits());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fano_depends_only_on_shape_and_psi(k in family_kernel(), psi in -2.5f64..2.5, amp in 0.2f64..5.0, time in 0.2f64..5.0) {
        let spec = QuadratureSpec::default();
        let u = psi * k.amplitude();
        let base = fano(&k, u, CrossingMode::Up, &spec).unwrap();
        let other = scaled(&k, amp, time);
        let moved = fano(&other, u * amp, CrossingMode::Up, &spec).unwrap();
        prop_assert!((base - moved).abs() <= 1e-7 * base, "{} vs {}", base, moved);
        let mirrored = fano(&k, -u, CrossingMode::Up, &spec).unwrap();
        prop_assert!((base - mirrored).abs() <= 1e-9 * base);
    }

    #[test]
    fn grid_counts_are_consistent(seed in any::<u64>(), u in -1.5f64..1.5) {
        let source = SimSource::Sdho { omega0: 1.0, zeta: 0.7, theta: 1.0 };
        let config = SimConfig::with_slow_step(source, 30.0, 0.01, 4, seed).unwrap();
        let stream = simulate_paths(&config).unwrap();
        for trial in 0..4 {
            let x = stream.path(trial).values;
            let up = count_crossings(&x, u, CrossingMode::Up);
            let down = count_crossings(&x, u, CrossingMode::Down);
            prop_assert_eq!(count_crossings(&x, u, CrossingMode::Total), up + down);
            prop_assert!(up.abs_diff(down) <= 1);
        }
    }

    #[test]
    fn identical_configs_give_identical_counts(seed in any::<u64>(), depth in 0u32..4) {
        let source = SimSource::OuSystem { sigma: 1.0, tau_f: 0.5, tau_e: 1.0 };
        let config = SimConfig { refine_depth: depth, ..SimConfig::with_slow_step(source, 20.0, 0.01, 6, seed).unwrap() };
        let a = simulate_counts(&config, &[0.0, 0.4], CrossingMode::Total).unwrap();
        let b = simulate_counts(&config, &[0.0, 0.4], CrossingMode::Total).unwrap();
        prop_assert_eq!(a, b);
    }
}
