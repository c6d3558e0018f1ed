use chaoslrd::renewal::{self, PathOrigin, ReturnLaw};
use chaoslrd::{rng, stats};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// ζ(s) by a long direct sum plus the integral tail and its first correction.
fn zeta_oracle(s: f64) -> f64 {
    let n = 2_000_000u64;
    let head: f64 = (1..=n).rev().map(|j| (j as f64).powf(-s)).sum();
    let x = n as f64;
    head + x.powf(1.0 - s) / (s - 1.0) - 0.5 * x.powf(-s) + s / 12.0 * x.powf(-s - 1.0)
}

#[test]
fn normalizer_matches_independent_zeta() {
    for &beta in &[0.3, 0.5, 0.8] {
        let law = ReturnLaw::new(beta).unwrap();
        let z = zeta_oracle(1.0 + beta);
        assert!((law.pmf(1) * z - 1.0).abs() < 1e-12, "beta {beta}");
    }
}

#[test]
fn pmf_sums_to_one() {
    for &beta in &[0.2, 0.5, 0.9] {
        let law = ReturnLaw::new(beta).unwrap();
        let m = 100_000u64;
        let head: f64 = (1..=m).rev().map(|j| law.pmf(j)).sum();
        assert!((head + law.survival(m) - 1.0).abs() < 1e-10);
        assert!((law.survival(1) - (1.0 - law.pmf(1))).abs() < 1e-15);
    }
}

#[test]
fn survival_decreasing_with_slope_minus_beta() {
    for &beta in &[0.3, 0.6, 0.8] {
        let law = ReturnLaw::new(beta).unwrap();
        let js: Vec<u64> = (0..=30).map(|i| (1e3 * 10f64.powf(i as f64 / 10.0)).round() as u64).collect();
        for w in js.windows(2) {
            assert!(law.survival(w[1]) < law.survival(w[0]));
        }
        let pairs: Vec<(f64, f64)> = js.iter().map(|&j| (j as f64, law.survival(j))).collect();
        let (slope, _) = stats::scaling_slope(&pairs).unwrap();
        assert!((slope + beta).abs() < 0.02, "beta {beta}: slope {slope}");
    }
}

#[test]
fn small_u_and_w_values() {
    let law = ReturnLaw::new(0.5).unwrap();
    let u = renewal::return_mass_sequence(&law, 3);
    let (f1, f2) = (law.pmf(1), law.pmf(2));
    assert_eq!(u[0], 1.0);
    assert!((u[1] - f1).abs() < 1e-15);
    assert!((u[2] - (f2 + f1 * f1)).abs() < 1e-15);
    let w = renewal::wandering_sequence(&law, 2);
    assert_eq!(w[0], 1.0);
    assert!((w[1] - (2.0 - f1)).abs() < 1e-15);
    assert!((renewal::rate_b(&law, 1) - std::f64::consts::FRAC_PI_2).abs() < 1e-14);
}

#[test]
fn last_renewal_decomposition() {
    // Σ_{k≤n} u_k q_{n−k} = 1: the last renewal before n is at some k.
    let law = ReturnLaw::new(0.6).unwrap();
    let n = 5000;
    let u = renewal::return_mass_sequence(&law, n);
    for m in [1, 10, 999, n] {
        let s: f64 = (0..=m).map(|k| u[k] * if k == m { 1.0 } else { law.survival((m - k) as u64) }).sum();
        assert!((s - 1.0).abs() < 1e-11, "m {m}: {s}");
    }
}

#[test]
fn wandering_identity_matches_direct_sum() {
    let law = ReturnLaw::new(0.4).unwrap();
    let w = renewal::wandering_sequence(&law, 1_000_000);
    for n in [1usize, 2, 17, 1000, 65_536, 1_000_000] {
        let direct = renewal::wandering_direct(&law, n);
        assert!((w[n - 1] / direct - 1.0).abs() < 1e-12, "n {n}");
    }
    assert!(w.windows(2).all(|p| p[1] >= p[0]));
}

#[test]
fn u_times_b_near_one() {
    let law = ReturnLaw::new(0.6).unwrap();
    let n = 100_000;
    let u = renewal::return_mass_sequence(&law, n);
    let ub = u[n] * renewal::rate_b(&law, n);
    assert!((0.8..=1.2).contains(&ub), "{ub}");
    let pairs: Vec<(f64, f64)> =
        (0..=10).map(|i| (1e4 * 10f64.powf(i as f64 / 10.0)).round() as usize).map(|k| (k as f64, u[k])).collect();
    let (slope, _) = stats::scaling_slope(&pairs).unwrap();
    assert!((slope + 0.4).abs() < 0.05, "{slope}");
}

#[test]
fn origin_weights_and_marginal_law() {
    let law = ReturnLaw::new(0.5).unwrap();
    let n = 200;
    let window = law.window(n).unwrap();
    let w = window.wandering();
    let reps = 100_000;
    let ks: Vec<usize> = (1..=10).map(|i| i * n / 10).collect();
    let samples: Vec<(Vec<u8>, PathOrigin)> = rng::replicate(11, reps, |_, r| {
        let p = window.sample_path(r);
        let ind = p.indicators();
        (ks.iter().map(|&k| ind[k - 1]).collect(), p.origin)
    });
    for (i, &k) in ks.iter().enumerate() {
        let v: Vec<f64> = samples.iter().map(|s| s.0[i] as f64).collect();
        let e = stats::mean_estimate(&v);
        assert!((e.value - 1.0 / w).abs() < 5.0 * e.stderr.unwrap(), "k {k}: {} vs {}", e.value, 1.0 / w);
    }
    for j in [1u32, 2, 5] {
        let hits: Vec<f64> =
            samples.iter().map(|s| (s.1 == PathOrigin::InteriorDelay(j)) as u8 as f64).collect();
        let e = stats::mean_estimate(&hits);
        let p = law.survival(j as u64) / w;
        assert!((e.value - p).abs() < 5.0 * e.stderr.unwrap(), "j {j}");
    }
}

#[test]
fn gaps_after_first_renewal_follow_pmf() {
    let law = ReturnLaw::new(0.5).unwrap();
    let n = 1 << 12;
    let window = law.window(n).unwrap();
    let gaps: Vec<u32> = rng::replicate(5, 100_000, |_, r| {
        // One gap per path keeps samples independent; paths with a single
        // renewal are redrawn.
        loop {
            let p = window.sample_path(r);
            if p.renewals.len() >= 2 && p.renewals[0] < 64 {
                return p.renewals[1] - p.renewals[0];
            }
        }
    });
    // Gaps are censored at n − first renewal ≥ n − 64; bins stop well short.
    let bins = 12u32;
    let mut observed = vec![0f64; bins as usize + 1];
    for g in &gaps {
        observed[(*g).min(bins + 1) as usize - 1] += 1.0;
    }
    let total = gaps.len() as f64;
    let mut expected: Vec<f64> = (1..=bins).map(|j| law.pmf(j as u64)).collect();
    expected.push(law.survival(bins as u64));
    // Conditioning on a second renewal inside the window rescales the law.
    let cutoff = (n - 64) as u64;
    let keep = 1.0 - law.survival(cutoff);
    *expected.last_mut().unwrap() -= law.survival(cutoff);
    let chi2: f64 = observed
        .iter()
        .zip(&expected)
        .map(|(o, e)| {
            let e = e / keep * total;
            (o - e).powi(2) / e
        })
        .sum();
    let p = 1.0 - ChiSquared::new(bins as f64).unwrap().cdf(chi2);
    assert!(p > 0.001, "chi2 {chi2}, p {p}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn renewal_identity(beta in 0.05f64..0.95, k in 1usize..10_000) {
        let law = ReturnLaw::new(beta).unwrap();
        let u = renewal::return_mass_sequence(&law, k);
        let rhs: f64 = (1..=k).map(|j| law.pmf(j as u64) * u[k - j]).sum();
        prop_assert!((u[k] - rhs).abs() < 1e-12);
    }

    #[test]
    fn paths_have_a_renewal_and_respect_origin(beta in 0.1f64..0.9, n in 1usize..500, seed in any::<u64>()) {
        let law = ReturnLaw::new(beta).unwrap();
        let window = law.window(n).unwrap();
        let mut r = rng::stream(seed, 0);
        let p = window.sample_path(&mut r);
        prop_assert!(!p.renewals.is_empty());
        prop_assert!(p.renewals.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(*p.renewals.last().unwrap() as usize <= n);
        if let PathOrigin::InteriorDelay(j) = p.origin {
            prop_assert_eq!(p.renewals[0], j);
        }
    }
}
