//! Acceptance checks. Each criterion prints one `PASS`/`FAIL` line with the
//! measured values; the process exits non-zero when any criterion fails.
//! Studies use the default seed.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use ivcheck_core::estimators::{fit_iv, InstrumentFn};
use ivcheck_core::model::{Conditioning, LinearModel};
use ivcheck_core::mte::{
    default_p_grid, estimate_asf, estimate_mte, fit_control_function, fit_propensity, quantile_roundtrip_check,
    AsfEstimate, ControlConfig, PropensityConfig, QuantileRule,
};
use ivcheck_core::npreg::{fit_series, NpregMethod};
use ivcheck_core::overid::{hansen_j, sargan};
use ivcheck_core::sim::{generate, run_study, DgpFamily, DgpSpec, StudyResult, TestMethod};
use ivcheck_core::{clr, moments, Dataset, RngSpec, TestConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn study(specs: &[DgpSpec], methods: &[TestMethod], reps: usize) -> StudyResult {
    run_study(specs, methods, reps, &TestConfig::default()).expect("study runs")
}

fn pct(r: f64) -> String {
    format!("{:.1}%", 100.0 * r)
}

/// `a ≥ b` up to two standard errors of the difference.
fn ge_within_2se(study: &StudyResult, a: &DgpSpec, b: &DgpSpec, method: &str, alpha: f64) -> bool {
    let ca = study.cell(a, method, alpha).unwrap();
    let cb = study.cell(b, method, alpha).unwrap();
    ca.rate + 2.0 * (ca.mc_se.powi(2) + cb.mc_se.powi(2)).sqrt() >= cb.rate
}

fn size_levels() -> Outcome {
    let spec = DgpSpec::new(DgpFamily::LinearIvNull, 3000);
    let s = study(std::slice::from_ref(&spec), &[TestMethod::Cmi], 200);
    let target = [(0.10, 0.080), (0.05, 0.046), (0.01, 0.014)];
    let rates: Vec<f64> = target.iter().map(|&(a, _)| s.rate(&spec, "cmi", a).unwrap()).collect();
    let pass = rates.iter().zip(&target).all(|(r, (_, t))| (r - t).abs() <= 0.045);
    outcome(pass, format!("n=3000 rates {} {} {} vs 8.0% 4.6% 1.4% ± 4.5pp", pct(rates[0]), pct(rates[1]), pct(rates[2])))
}

fn small_n_over_rejection() -> Outcome {
    let small = DgpSpec::new(DgpFamily::LinearIvNull, 200);
    let large = DgpSpec::new(DgpFamily::LinearIvNull, 2000);
    let s = study(&[small.clone(), large.clone()], &[TestMethod::Cmi], 200);
    let (r200, r2000) = (s.rate(&small, "cmi", 0.10).unwrap(), s.rate(&large, "cmi", 0.10).unwrap());
    outcome(r200 >= 0.30 && r2000 < r200, format!("10% level: n=200 {} (need ≥ 30%), n=2000 {}", pct(r200), pct(r2000)))
}

fn power_family(l: f64, sigma: f64) -> DgpSpec {
    DgpSpec::new(DgpFamily::LinearIvPower { l, sigma }, 1000)
}

fn power() -> Outcome {
    let specs = [power_family(0.1, 0.25), power_family(0.5, 0.25), power_family(1.0, 0.25)];
    let s = study(&specs, &[TestMethod::Cmi], 100);
    let main: Vec<f64> = [0.10, 0.05, 0.01].iter().map(|&a| s.rate(&specs[1], "cmi", a).unwrap()).collect();
    let high = main.iter().all(|&r| r >= 0.95);
    let monotone =
        ge_within_2se(&s, &specs[2], &specs[1], "cmi", 0.05) && ge_within_2se(&s, &specs[1], &specs[0], "cmi", 0.05);
    let by_l: Vec<String> = specs.iter().map(|sp| pct(s.rate(sp, "cmi", 0.05).unwrap())).collect();
    outcome(
        high && monotone,
        format!(
            "L=0.5 σ=0.25: {} {} {} (need ≥ 95%); 5% by L=0.1,0.5,1: {} (monotone: {monotone})",
            pct(main[0]),
            pct(main[1]),
            pct(main[2]),
            by_l.join(" ")
        ),
    )
}

fn peakedness() -> Outcome {
    let specs = [power_family(0.5, 1.0), power_family(0.5, 0.5), power_family(0.5, 0.25)];
    let s = study(&specs, &[TestMethod::Cmi], 100);
    let pass = specs.windows(2).all(|w| ge_within_2se(&s, &w[1], &w[0], "cmi", 0.05));
    let rates: Vec<String> = specs.iter().map(|sp| pct(s.rate(sp, "cmi", 0.05).unwrap())).collect();
    outcome(pass, format!("L=0.5, 5% level by σ=1,0.5,0.25: {}", rates.join(" ")))
}

fn heteroskedasticity() -> Outcome {
    let hi = DgpSpec::new(DgpFamily::HeteroPower { rho: 0.9 }, 1000);
    let lo = DgpSpec::new(DgpFamily::HeteroPower { rho: 0.1 }, 1000);
    let s = study(&[hi.clone(), lo.clone()], &[TestMethod::Cmi], 100);
    let (rh, rl) = (s.rate(&hi, "cmi", 0.05).unwrap(), s.rate(&lo, "cmi", 0.05).unwrap());
    outcome(rh >= 0.95 && rl < 0.30, format!("5% level: ρ=0.9 {} (need ≥ 95%), ρ=0.1 {} (need < 30%)", pct(rh), pct(rl)))
}

fn cmi_vs_sargan() -> Outcome {
    let specs: Vec<DgpSpec> =
        [250, 500, 1000].iter().map(|&n| DgpSpec::new(DgpFamily::LinearIvPower { l: 0.5, sigma: 0.25 }, n)).collect();
    let s = study(&specs, &[TestMethod::Cmi, TestMethod::Sargan], 100);
    let mut pass = true;
    let cells: Vec<String> = specs
        .iter()
        .map(|sp| {
            let (c, g) = (s.rate(sp, "cmi", 0.05).unwrap(), s.rate(sp, "sargan", 0.05).unwrap());
            pass &= c >= g;
            format!("n={} cmi {} sargan {}", sp.n, pct(c), pct(g))
        })
        .collect();
    outcome(pass, cells.join("; "))
}

fn boxcox_size() -> Outcome {
    let zero = DgpSpec::new(DgpFamily::BoxCoxIvNull { lambda: 0.0 }, 2000);
    let minus = DgpSpec::new(DgpFamily::BoxCoxIvNull { lambda: -1.0 }, 2000);
    let s = study(&[zero.clone(), minus.clone()], &[TestMethod::Cmi], 100);
    let r0 = s.rate(&zero, "cmi", 0.05).unwrap();
    let (m10, z10) = (s.rate(&minus, "cmi", 0.10).unwrap(), s.rate(&zero, "cmi", 0.10).unwrap());
    outcome(
        r0 <= 0.08 && m10 > z10,
        format!("λ=0 at 5%: {} (need ≤ 8%); 10% level λ=−1 {} vs λ=0 {}", pct(r0), pct(m10), pct(z10)),
    )
}

fn binary_instrument() -> Outcome {
    let spec = DgpSpec::new(DgpFamily::BinaryIvNull, 500);
    let mut worst: f64 = 0.0;
    let mut rejections = 0;
    for r in 0..100u64 {
        let ds = generate(&spec, RngSpec::new(2024).derive(r)).unwrap();
        let cfg = TestConfig { npreg: NpregMethod::CellMeans, rng: RngSpec::new(2024).derive(r).with_stream(1), ..TestConfig::default() };
        let rep = clr::test_model(&ds, &spec.natural_spec(), &cfg).unwrap().report;
        worst = rep.grid.iter().fold(worst, |m, g| m.max(g.theta.abs()));
        rejections += rep.levels.iter().filter(|l| l.reject).count();
    }
    outcome(worst <= 1e-10 && rejections == 0, format!("max |θ̂(v)| = {worst:.1e}, rejections = {rejections}"))
}

/// Raw-power normal equations solved by `nalgebra`'s LU, independent of the
/// library's standardized basis and least-squares path.
fn series_oracle(z: &[f64], w: &[f64], order: usize) -> DVector<f64> {
    let b = DMatrix::from_fn(z.len(), order + 1, |i, j| z[i].powi(j as i32));
    (b.transpose() * &b).lu().solve(&(b.transpose() * DVector::from_column_slice(w))).unwrap()
}

fn oracle_equivalences() -> Outcome {
    let mut rng = RngSpec::new(99).rng();
    let n = 300;
    let z: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let x: Vec<f64> = z.iter().map(|v| 1.5 * v + rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| 0.5 - v + rng.random_range(-1.0..1.0)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let cov = |a: &[f64], b: &[f64]| {
        let (ma, mb) = (mean(a), mean(b));
        a.iter().zip(b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>()
    };
    let ds = Dataset::from_columns(y.clone(), x.clone(), z.clone()).unwrap();
    let iv = fit_iv(&ds, true).unwrap();
    let slope = cov(&z, &y) / cov(&z, &x);
    let iv_err = (iv.beta[1] - slope).abs().max((iv.beta[0] - (mean(&y) - slope * mean(&x))).abs());

    let z10 = [0.5, -1.2, 2.0, 0.3, -0.7, 1.6, -2.1, 0.9, 1.1, -0.4];
    let x10: Vec<f64> = z10.iter().enumerate().map(|(i, v)| 0.8 * v + [0.3, -0.1, 0.2][i % 3]).collect();
    let y10: Vec<f64> = x10.iter().zip(&z10).map(|(x, z)| 1.0 + 2.0 * x + 0.4 * z * z - 0.3).collect();
    let ds10 = Dataset::from_columns(y10.clone(), x10.clone(), z10.to_vec()).unwrap();
    let poly = InstrumentFn::Polynomial(3);
    let stat = sargan(&ds10, &poly).unwrap().statistic;
    let h = DMatrix::from_fn(10, 4, |i, j| z10[i].powi(j as i32));
    let xm = DMatrix::from_fn(10, 2, |i, j| if j == 0 { 1.0 } else { x10[i] });
    let yv = DVector::from_column_slice(&y10);
    let p = &h * (h.transpose() * &h).try_inverse().unwrap() * h.transpose();
    let beta = (xm.transpose() * &p * &xm).try_inverse().unwrap() * xm.transpose() * &p * &yv;
    let u = &yv - &xm * beta;
    let oracle = 10.0 * (u.transpose() * &p * &u)[(0, 0)] / u.norm_squared();
    let sargan_err = (stat - oracle).abs();

    let just = sargan(&ds, &InstrumentFn::Identity).unwrap().statistic.abs()
        + hansen_j(&ds, &InstrumentFn::Identity).unwrap().statistic.abs();

    let w: Vec<f64> = z.iter().map(|v| (1.3 * v).sin() + rng.random_range(-0.5..0.5)).collect();
    let fit = fit_series(&w, &z, 5, None).unwrap();
    let c = series_oracle(&z, &w, 5);
    let series_err = [-1.8f64, -0.6, 0.0, 0.9, 1.7]
        .iter()
        .map(|&v| {
            let o: f64 = c.iter().enumerate().map(|(j, cj)| cj * v.powi(j as i32)).sum();
            (fit.evaluate(v).unwrap().0 - o).abs()
        })
        .fold(0.0, f64::max);
    outcome(
        iv_err <= 1e-10 && sargan_err <= 1e-8 && just == 0.0 && series_err <= 1e-10,
        format!("IV {iv_err:.1e}, Sargan {sargan_err:.1e}, just-identified {just}, series {series_err:.1e}"),
    )
}

fn plug_in_gap(n: usize, r: u64) -> f64 {
    let spec = DgpSpec::new(DgpFamily::LinearIvNull, n);
    let seed = RngSpec::new(77).derive(n as u64).derive(r);
    let ds = generate(&spec, seed).unwrap();
    let cfg = TestConfig { alpha_levels: vec![0.05], rng: seed.with_stream(1), ..TestConfig::default() };
    let plug = clr::test_model(&ds, &spec.natural_spec(), &cfg).unwrap().report.levels[0].theta_corrected;
    let ms = moments::build_parametric_grid(&ds, &LinearModel { k: 1 }, &[0.0, 2.0], Conditioning::OnZ).unwrap();
    let truth = clr::run_test_auto(&ms, &cfg).unwrap().levels[0].theta_corrected;
    (plug - truth).abs()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

fn plug_in_validity() -> Outcome {
    let small = median((0..50).map(|r| plug_in_gap(1000, r)).collect());
    let large = median((0..50).map(|r| plug_in_gap(4000, r)).collect());
    outcome(large < small, format!("median gap n=1000 {small:.4}, n=4000 {large:.4}"))
}

/// `Z ~ U[−1, 1]`, `V ~ U[0, 1]`, `X = Z + V`, `Y = X(1 + V) + ε`.
fn mte_design(n: usize, seed: u64) -> Dataset {
    let mut rng = RngSpec::new(seed).rng();
    let noise = Normal::new(0.0, 0.25).unwrap();
    let (mut y, mut x, mut z) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let zi: f64 = rng.random_range(-1.0..1.0);
        let vi: f64 = rng.random();
        let xi = zi + vi;
        y.push(xi * (1.0 + vi) + noise.sample(&mut rng));
        x.push(xi);
        z.push(zi);
    }
    Dataset::from_columns(y, x, z).unwrap()
}

fn control_function_recovery() -> Outcome {
    let ds = mte_design(5000, 11);
    let pf = fit_propensity(&ds, &PropensityConfig::default()).unwrap();
    let cf = fit_control_function(&ds, &pf, &ControlConfig::default()).unwrap();
    let (x, xp) = (0.3, 0.7);
    let mte_err = (1..=9)
        .map(|k| {
            let p = k as f64 / 10.0;
            (estimate_mte(&cf, p, x, xp).unwrap() - (x - xp) * (1.0 + p)).abs()
        })
        .fold(0.0, f64::max);
    let asf_err = match estimate_asf(&cf, &pf, x, &default_p_grid(), None) {
        Ok(AsfEstimate::Point { value, .. }) => (value - 1.5 * x).abs(),
        _ => f64::INFINITY,
    };
    // Near the top of the regressor's range only large controls are observed.
    let (yl, yu) = (-1.0, 6.0);
    let width_err = match estimate_asf(&cf, &pf, 1.75, &default_p_grid(), Some((yl, yu))) {
        Ok(AsfEstimate::Interval { lower, upper, p_lo, p_hi }) => ((upper - lower) - (yu - yl) * (1.0 - p_hi + p_lo)).abs(),
        _ => f64::INFINITY,
    };
    outcome(
        mte_err <= 0.25 && asf_err <= 0.15 && width_err <= 1e-12,
        format!("max MTE error {mte_err:.3}, ASF error {asf_err:.3}, interval width error {width_err:.1e}"),
    )
}

fn quantile_identity() -> Outcome {
    let mut violations = 0;
    for d in 0..1000u64 {
        let mut rng = RngSpec::new(5).derive(d).rng();
        let n = rng.random_range(20..400);
        let levels = if d % 4 == 0 { 500 } else { rng.random_range(2..8) };
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        // Coarse rounding produces ties in X within and across cells.
        let x: Vec<f64> = z.iter().map(|v| (0.01 * v + rng.random_range(0.0..3.0f64)).round()).collect();
        let ds = Dataset::from_columns(vec![0.0; n], x, z).unwrap();
        violations += quantile_roundtrip_check(&ds, QuantileRule::LeftContinuous);
    }
    outcome(violations == 0, format!("{violations} violations over 1000 datasets"))
}

fn determinism() -> Outcome {
    let specs = [
        DgpSpec::new(DgpFamily::LinearIvNull, 300),
        DgpSpec::new(DgpFamily::HeteroPower { rho: 0.5 }, 300),
        DgpSpec::new(DgpFamily::BoxCoxPower { l: 0.5, sigma: 0.25 }, 300),
    ];
    let methods = [TestMethod::Cmi, TestMethod::Sargan, TestMethod::HansenJ];
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let result = pool.install(|| study(&specs, &methods, 50));
        let mut buf = Vec::new();
        result.write_csv(&mut buf).unwrap();
        buf
    };
    let (one, four) = (run(1), run(4));
    outcome(one == four, format!("{} bytes with 1 worker, {} bytes with 4, identical: {}", one.len(), four.len(), one == four))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("size control at n=3000", size_levels),
        ("small-n over-rejection", small_n_over_rejection),
        ("power and monotonicity in L", power),
        ("peakedness effect", peakedness),
        ("homoskedasticity power", heteroskedasticity),
        ("CMI at least Sargan", cmi_vs_sargan),
        ("Box-Cox size", boxcox_size),
        ("binary-instrument non-rejection", binary_instrument),
        ("oracle equivalences", oracle_equivalences),
        ("plug-in validity", plug_in_validity),
        ("control-function recovery", control_function_recovery),
        ("quantile identity", quantile_identity),
        ("determinism across worker counts", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "{} {:>2} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
