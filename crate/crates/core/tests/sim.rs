//! Moments of the simulation designs and properties of study results.

use ivcheck_core::mte::propensity::ks_two_sample;
use ivcheck_core::overid::{hansen_j, sargan};
use ivcheck_core::estimators::InstrumentFn;
use ivcheck_core::sim::dgp::{bump, clamp3};
use ivcheck_core::sim::{generate, run_study, DgpFamily, DgpSpec, TestMethod};
use ivcheck_core::{RngSpec, TestConfig};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cov(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / a.len() as f64
}

#[test]
fn linear_iv_design_moments() {
    let ds = generate(&DgpSpec::new(DgpFamily::LinearIvNull, 100_000), RngSpec::new(1)).unwrap();
    let (x, z) = (ds.x_col(0), ds.z_col(0));
    // Var(Z) = 3 for U[−3, 3], so Cov(X, Z) = 3 · 3.
    assert!((cov(&x, &z) - 9.0).abs() < 0.15, "{}", cov(&x, &z));
    let u: Vec<f64> = ds.y().iter().zip(&x).map(|(y, x)| y - 2.0 * x).collect();
    assert!(cov(&u, &z).abs() < 0.03);
    assert!((cov(&u, &x) - 0.5).abs() < 0.03, "{}", cov(&u, &x));
}

#[test]
fn clamped_normal_is_centred_and_bounded() {
    let ds = generate(&DgpSpec::new(DgpFamily::LinearIvPower { l: 0.0, sigma: 1.0 }, 50_000), RngSpec::new(2)).unwrap();
    let u: Vec<f64> = ds.y().iter().zip(ds.x_col(0)).map(|(y, x)| y - 2.0 * x).collect();
    assert!(u.iter().all(|e| e.abs() <= 3.0 + 1e-12));
    assert!(mean(&u).abs() < 0.02);
    assert_eq!(clamp3(4.2), 3.0);
    assert_eq!(clamp3(-7.0), -3.0);
}

#[test]
fn power_design_error_has_the_bump_as_conditional_mean() {
    let (l, sigma) = (1.0, 0.5);
    let ds = generate(&DgpSpec::new(DgpFamily::LinearIvPower { l, sigma }, 200_000), RngSpec::new(3)).unwrap();
    let (x, z) = (ds.x_col(0), ds.z_col(0));
    for centre in [-1.5, 0.0, 0.8] {
        let u: Vec<f64> = (0..ds.n())
            .filter(|&i| (z[i] - centre).abs() < 0.05)
            .map(|i| ds.y()[i] - 2.0 * x[i])
            .collect();
        let target = bump(l, sigma, centre);
        assert!((mean(&u) - target).abs() < 0.05, "z={centre}: {} vs {target}", mean(&u));
    }
}

#[test]
fn zero_height_power_design_matches_the_null_errors() {
    let flat = generate(&DgpSpec::new(DgpFamily::LinearIvPower { l: 0.0, sigma: 0.25 }, 5000), RngSpec::new(4)).unwrap();
    let other = generate(&DgpSpec::new(DgpFamily::LinearIvPower { l: 0.0, sigma: 1.0 }, 5000), RngSpec::new(5)).unwrap();
    let resid = |ds: &ivcheck_core::Dataset| -> Vec<f64> {
        ds.y().iter().zip(ds.x_col(0)).map(|(y, x)| y - 2.0 * x).collect()
    };
    // Critical value of the two-sample KS test at 1% for 5000 + 5000 draws.
    let crit = 1.63 * (2.0 / 5000.0f64).sqrt();
    assert!(ks_two_sample(&resid(&flat), &resid(&other)) < crit);
}

#[test]
fn hansen_and_sargan_agree_under_homoskedasticity() {
    let ds = generate(&DgpSpec::new(DgpFamily::LinearIvNull, 20_000), RngSpec::new(6)).unwrap();
    let poly = InstrumentFn::Polynomial(3);
    let (s, j) = (sargan(&ds, &poly).unwrap(), hansen_j(&ds, &poly).unwrap());
    assert_eq!(s.dof, 2);
    assert!((s.statistic - j.statistic).abs() < 0.1 * (1.0 + s.statistic), "{} vs {}", s.statistic, j.statistic);
}

#[test]
fn studies_do_not_depend_on_the_worker_count() {
    let specs = [DgpSpec::new(DgpFamily::LinearIvNull, 250), DgpSpec::new(DgpFamily::HeteroPower { rho: 0.9 }, 250)];
    let methods = [TestMethod::Cmi, TestMethod::Sargan];
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let result = pool.install(|| run_study(&specs, &methods, 60, &TestConfig::default()).unwrap());
        let mut buf = Vec::new();
        result.write_csv(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert!(one.starts_with("dgp,n,method,alpha,reps,failures,rejections,rate,mc_se"));
    assert_eq!(one.lines().count(), 1 + 2 * 2 * 3);
}
