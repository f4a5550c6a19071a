//! One function per subcommand. Each prints a human-readable report to stdout
//! and, where it produces tables, writes them with a manifest.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::{info, warn};
use nalgebra::DMatrix;
use serde_json::json;

use ivcheck_core::clr::{self, profile_boxcox_test, ModelTestReport, ProfileTest};
use ivcheck_core::data::{self, ColumnNames};
use ivcheck_core::estimators::{self, default_lambda_grid, InstrumentFn, ResidualFit};
use ivcheck_core::model::{BoxCoxModel, FunctionalForm, LinearModel, ParametricModel};
use ivcheck_core::mte::{self, propensity::ks_uniform, AsfEstimate, ControlConfig, PropensityConfig, PropensityMethod};
use ivcheck_core::overid::{self, OveridMethod};
use ivcheck_core::sim::{self, presets};
use ivcheck_core::{Assumption, Conditioning, Config, Dataset, Error, ModelSpec, RngSpec, TestConfig};

use crate::args::*;
use crate::error::CliError;
use crate::manifest::{self, Manifest, OutputDir};

/// What the process should report through its exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Done,
    Reject,
}

/// Resolved settings shared by every subcommand.
pub struct Context {
    pub config: Config,
    pub seed: u64,
    pub seed_source: String,
    pub args: Vec<String>,
    pub out: Option<PathBuf>,
    pub started: Instant,
    pub started_unix: u64,
}

impl Context {
    pub fn new(config: Config, seed: u64, seed_source: String, args: Vec<String>, out: Option<PathBuf>) -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Self { config, seed, seed_source, args, out, started: Instant::now(), started_unix }
    }

    fn run_id(&self) -> String {
        manifest::run_id(&self.args, &self.config)
    }

    fn test_config(&self) -> TestConfig {
        let mut cfg = TestConfig::from(&self.config);
        cfg.rng = RngSpec::new(self.seed);
        cfg
    }

    /// Output directory for commands that always write tables.
    fn out_or_cwd(&self) -> Result<OutputDir, CliError> {
        OutputDir::create(self.out.as_deref().unwrap_or(Path::new(".")), self.run_id())
    }

    fn finish(&self, out: OutputDir, command: &str, diagnostics: serde_json::Value) -> Result<(), CliError> {
        let m = Manifest {
            run_id: self.run_id(),
            command: command.to_string(),
            args: self.args.clone(),
            config: self.config.clone(),
            seed: self.seed,
            seed_source: self.seed_source.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: self.started_unix,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            outputs: Vec::new(),
            diagnostics,
        };
        let path = out.finish(m)?;
        info!("manifest written to {}", path.display());
        Ok(())
    }
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn kv(key: impl Into<String>, value: impl ToString) -> Vec<String> {
    vec![key.into(), value.to_string()]
}

/// `lo:hi:count` into `count` evenly spaced points.
pub fn parse_range(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("expected lo:hi:count, got `{text}`"));
    let parts: Vec<&str> = text.split(':').collect();
    let [lo, hi, count] = parts.as_slice() else { return Err(bad()) };
    let (lo, hi): (f64, f64) = (lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?);
    let count: usize = count.trim().parse().map_err(|_| bad())?;
    if count == 0 || !(lo <= hi) || (count == 1 && lo != hi) {
        return Err(bad());
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect())
}

fn load(d: &DataArgs) -> Result<Dataset, CliError> {
    let x: Vec<&str> = d.x.iter().map(String::as_str).collect();
    let z: Vec<&str> = d.z.iter().map(String::as_str).collect();
    if z.is_empty() {
        Ok(data::load_csv(&d.data, &d.y, &x, &x)?)
    } else {
        Ok(data::load_csv(&d.data, &d.y, &x, &z)?)
    }
}

fn conditioning(d: &DataArgs, on: Option<On>) -> Result<Conditioning, CliError> {
    match on {
        Some(On::X) => Ok(Conditioning::OnX),
        Some(On::Z) if d.z.is_empty() => Err(CliError::Usage("conditioning on z needs --z".into())),
        Some(On::Z) => Ok(Conditioning::OnZ),
        None if d.z.is_empty() => Ok(Conditioning::OnX),
        None => Ok(Conditioning::OnZ),
    }
}

fn lambda_grid(text: &Option<String>) -> Result<Vec<f64>, CliError> {
    text.as_deref().map_or_else(|| Ok(default_lambda_grid()), parse_range)
}

fn print_summary(s: &estimators::FitSummary) {
    println!("first step: {}", s.method);
    println!("  {:<16} {:>14} {:>14}", "term", "estimate", "robust s.e.");
    for ((name, c), se) in s.names.iter().zip(&s.coefficients).zip(&s.std_errors) {
        println!("  {name:<16} {c:>14.6} {:>14}", if se.is_nan() { "-".to_string() } else { format!("{se:.6}") });
    }
    for (k, v) in &s.notes {
        println!("  {k}: {v}");
    }
}

pub fn fit(ctx: &Context, a: &FitArgs) -> Result<Decision, CliError> {
    let ds = load(&a.data)?;
    let has_z = !a.data.z.is_empty();
    let method = a.method.unwrap_or(if has_z { FitMethodArg::Iv } else { FitMethodArg::Ols });
    if matches!(method, FitMethodArg::Iv | FitMethodArg::Gmm) && !has_z {
        return Err(CliError::Usage("iv and gmm need --z".into()));
    }
    let summary = match method {
        FitMethodArg::Ols => estimators::fit_ols(&ds, true)?.summary(),
        FitMethodArg::Iv => estimators::fit_iv(&ds, true)?.summary(),
        FitMethodArg::Gmm => estimators::fit_gmm2step(&ds, &InstrumentFn::Identity, true)?.summary(),
        FitMethodArg::Boxcox => estimators::fit_boxcox(&ds, &lambda_grid(&a.lambda_grid)?, has_z)?.summary(),
    };
    print_summary(&summary);
    if ctx.out.is_some() {
        let mut out = ctx.out_or_cwd()?;
        let rows: Vec<Vec<String>> = summary
            .names
            .iter()
            .zip(&summary.coefficients)
            .zip(&summary.std_errors)
            .map(|((n, c), s)| vec![n.clone(), num(*c), num(*s)])
            .collect();
        out.table("fit_coefficients.csv", &["term", "estimate", "robust_se"], &rows)?;
        let notes: Vec<Vec<String>> = summary.notes.iter().map(|(k, v)| kv(k.clone(), v)).collect();
        out.table("fit_notes.csv", &["key", "value"], &notes)?;
        ctx.finish(out, "fit", json!({ "method": summary.method, "n": ds.n() }))?;
    }
    Ok(Decision::Done)
}

pub const LEVELS_HEADER: &[&str] =
    &["alpha", "k_crit", "k_crit_full", "theta_corrected", "argmax", "argmax_coordinate", "argmax_moment", "argmax_v", "reject"];
pub const GRID_HEADER: &[&str] = &["index", "coordinate", "coordinate_name", "moment", "moment_label", "v", "theta", "s", "selected"];
pub const DIAGNOSTICS_HEADER: &[&str] = &["key", "value"];
pub const PROFILE_HEADER: &[&str] = &["lambda", "theta_corrected"];

fn report_tables(out: &mut OutputDir, m: &ModelTestReport) -> Result<(), CliError> {
    let r = &m.report;
    let levels: Vec<Vec<String>> = r
        .levels
        .iter()
        .map(|l| {
            let g = &r.grid[l.argmax];
            vec![
                num(l.alpha),
                num(l.k_crit),
                num(l.k_crit_full),
                num(l.theta_corrected),
                l.argmax.to_string(),
                r.coordinate_names[g.coordinate].clone(),
                r.moment_labels[g.moment].clone(),
                num(g.v),
                l.reject.to_string(),
            ]
        })
        .collect();
    out.table("test_levels.csv", LEVELS_HEADER, &levels)?;
    let grid: Vec<Vec<String>> = r
        .grid
        .iter()
        .enumerate()
        .map(|(i, g)| {
            vec![
                i.to_string(),
                g.coordinate.to_string(),
                r.coordinate_names[g.coordinate].clone(),
                g.moment.to_string(),
                r.moment_labels[g.moment].clone(),
                num(g.v),
                num(g.theta),
                num(g.s),
                g.selected.to_string(),
            ]
        })
        .collect();
    out.table("test_grid.csv", GRID_HEADER, &grid)?;
    let d = &r.diagnostics;
    let mut rows = vec![
        kv("method", &d.method),
        kv("draws", d.draws),
        kv("seed", d.seed),
        kv("stream", d.stream),
        kv("n", d.n),
        kv("gamma_prime", d.gamma_prime),
        kv("kappa", d.kappa),
        kv("requested_grid", d.requested_grid),
        kv("dropped_points", d.dropped_points),
        kv("moments", &m.moments),
        kv("first_step.method", &m.first_step.method),
    ];
    rows.extend(d.smoother.iter().enumerate().map(|(i, s)| kv(format!("smoother.{i}"), s)));
    rows.extend(d.effective_grid.iter().enumerate().map(|(i, s)| kv(format!("effective_grid.{i}"), s)));
    rows.extend(r.moment_labels.iter().zip(&r.selected_set_size).map(|(l, s)| kv(format!("selected_set_size.{l}"), s)));
    let fs = &m.first_step;
    for ((name, c), se) in fs.names.iter().zip(&fs.coefficients).zip(&fs.std_errors) {
        rows.push(kv(format!("first_step.coef.{name}"), num(*c)));
        rows.push(kv(format!("first_step.se.{name}"), num(*se)));
    }
    rows.extend(fs.notes.iter().map(|(k, v)| kv(format!("first_step.note.{k}"), v)));
    rows.extend(d.warnings.iter().enumerate().map(|(i, w)| kv(format!("warning.{i}"), w)));
    out.table("test_diagnostics.csv", DIAGNOSTICS_HEADER, &rows)
}

fn print_report(m: &ModelTestReport) {
    print_summary(&m.first_step);
    let r = &m.report;
    let d = &r.diagnostics;
    println!("moments: {}", m.moments);
    println!("smoother: {} ({})", d.method, d.smoother.join("; "));
    println!("n = {}, draws = {}, gamma' = {:.4}, kappa = {:.4}", d.n, d.draws, d.gamma_prime, d.kappa);
    for (l, s) in r.moment_labels.iter().zip(&r.selected_set_size) {
        println!("  |V_hat| for {l}: {s}");
    }
    println!("  {:>6} {:>10} {:>16}  decision", "alpha", "k", "theta_corrected");
    for l in &r.levels {
        println!(
            "  {:>6} {:>10.4} {:>16.6}  {}",
            l.alpha,
            l.k_crit,
            l.theta_corrected,
            if l.reject { "reject" } else { "do not reject" }
        );
    }
    for w in &d.warnings {
        println!("warning: {w}");
    }
}

fn profile_tables(out: &mut OutputDir, p: &ProfileTest) -> Result<(), CliError> {
    let levels: Vec<Vec<String>> = p
        .levels
        .iter()
        .map(|(a, rej)| {
            let mut row = vec![String::new(); LEVELS_HEADER.len()];
            row[0] = num(*a);
            row[LEVELS_HEADER.len() - 1] = rej.to_string();
            row
        })
        .collect();
    out.table("test_levels.csv", LEVELS_HEADER, &levels)?;
    let evaluated: Vec<Vec<String>> = p.evaluated.iter().map(|(l, t)| vec![num(*l), num(*t)]).collect();
    out.table("test_profile.csv", PROFILE_HEADER, &evaluated)?;
    let rows = vec![
        kv("method", "box-cox profile"),
        kv("lambda_hat", p.lambda_hat),
        kv("accepted_lambda", p.accepted_lambda.map(num).unwrap_or_default()),
        kv("evaluated", p.evaluated.len()),
    ];
    out.table("test_diagnostics.csv", DIAGNOSTICS_HEADER, &rows)
}

pub fn test(ctx: &mut Context, a: &TestArgs) -> Result<Decision, CliError> {
    if !a.alpha.is_empty() {
        ctx.config.test.alpha_levels = a.alpha.clone();
    }
    if let Some(s) = a.smoother {
        ctx.config.npreg.method = match s {
            SmootherArg::Series => ivcheck_core::config::MethodName::Series,
            SmootherArg::LocalLinear => ivcheck_core::config::MethodName::LocalLinear,
            SmootherArg::CellMeans => ivcheck_core::config::MethodName::CellMeans,
        };
    }
    if let Some(o) = a.order {
        ctx.config.npreg.series_order = ivcheck_core::config::AutoOr::Value(o);
    }
    if let Some(h) = a.bandwidth {
        ctx.config.npreg.bandwidth = ivcheck_core::config::AutoOr::Value(h);
    }
    if let Some(g) = a.grid_count {
        ctx.config.grid.count = g;
    }
    if let Some(d) = a.draws {
        ctx.config.sim.multiplier_draws = d;
    }
    ctx.config.validate()?;
    let ds = load(&a.data)?;
    let on = conditioning(&a.data, a.on)?;
    let mut assumptions: Vec<Assumption> = a
        .assume
        .iter()
        .map(|x| match x {
            AssumptionArg::Exogeneity => Assumption::Exogeneity,
            AssumptionArg::Homoskedasticity => Assumption::Homoskedasticity,
        })
        .collect();
    assumptions.dedup();
    let form = match a.form {
        Form::Linear => FunctionalForm::Linear,
        Form::Boxcox => FunctionalForm::BoxCox { lambda_grid: lambda_grid(&a.lambda_grid)? },
    };
    let spec = ModelSpec { form, intercept: true, assumptions, conditioning: on };
    let cfg = ctx.test_config();
    let mut out = ctx.out_or_cwd()?;
    let rejected = if a.form == Form::Boxcox && a.boxcox_route == BoxCoxRoute::Profile {
        if spec.tests(Assumption::Homoskedasticity) {
            return Err(CliError::Usage("the profile route tests exogeneity only".into()));
        }
        let p = profile_boxcox_test(&ds, &lambda_grid(&a.lambda_grid)?, on, &cfg)?;
        println!("Box-Cox profile test: start at lambda_hat = {}", p.lambda_hat);
        for (l, t) in &p.evaluated {
            println!("  lambda = {l:>6}: theta_corrected = {t:.6}");
        }
        for (alpha, rej) in &p.levels {
            println!("  alpha = {alpha}: {}", if *rej { "every lambda rejected" } else { "do not reject" });
        }
        profile_tables(&mut out, &p)?;
        ctx.finish(out, "test", json!({ "route": "profile", "lambda_hat": p.lambda_hat, "accepted_lambda": p.accepted_lambda }))?;
        p.levels.iter().any(|l| l.1)
    } else {
        let m = clr::test_model(&ds, &spec, &cfg)?;
        print_report(&m);
        report_tables(&mut out, &m)?;
        let d = &m.report.diagnostics;
        ctx.finish(
            out,
            "test",
            json!({ "method": d.method, "gamma_prime": d.gamma_prime, "kappa": d.kappa, "selected_set_size": m.report.selected_set_size, "warnings": d.warnings }),
        )?;
        m.report.levels.iter().any(|l| l.reject)
    };
    Ok(if rejected { Decision::Reject } else { Decision::Done })
}

pub fn overid(ctx: &Context, a: &OveridArgs) -> Result<Decision, CliError> {
    if a.data.z.is_empty() {
        return Err(CliError::Usage("overidentification tests need --z".into()));
    }
    let ds = load(&a.data)?;
    let method = match a.method {
        OveridArg::Sargan => OveridMethod::Sargan,
        OveridArg::Hansen => OveridMethod::HansenJ,
    };
    let r = overid::run(method, &ds, &InstrumentFn::Polynomial(a.h_degree))?;
    println!("{:?}: statistic = {:.6}, dof = {}, p-value = {:.6}", r.method, r.statistic, r.dof, r.p_value);
    for alpha in &ctx.config.test.alpha_levels {
        println!("  alpha = {alpha}: {}", if r.reject(*alpha) { "reject" } else { "do not reject" });
    }
    if ctx.out.is_some() {
        let mut out = ctx.out_or_cwd()?;
        let mut header = vec!["method".to_string(), "statistic".into(), "dof".into(), "p_value".into()];
        header.extend((0..r.beta.len()).map(|j| format!("beta_{j}")));
        let mut row = vec![format!("{:?}", r.method), num(r.statistic), r.dof.to_string(), num(r.p_value)];
        row.extend(r.beta.iter().map(|b| num(*b)));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        out.table("overid.csv", &header, &[row])?;
        ctx.finish(out, "overid", json!({ "h_degree": a.h_degree }))?;
    }
    Ok(Decision::Done)
}

fn product(ranges: &[Vec<f64>]) -> Vec<Vec<f64>> {
    ranges.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect()
    })
}

pub fn identified_set(ctx: &mut Context, a: &IdentifiedSetArgs) -> Result<Decision, CliError> {
    if let Some(d) = a.draws {
        ctx.config.sim.multiplier_draws = d;
    }
    ctx.config.validate()?;
    let ds = load(&a.data)?;
    let on = conditioning(&a.data, a.on)?;
    let model: Box<dyn ParametricModel> = match a.model {
        Form::Linear => Box::new(LinearModel { k: ds.kx() }),
        Form::Boxcox => Box::new(BoxCoxModel),
    };
    if a.theta.len() != model.n_params() {
        return Err(CliError::Usage(format!(
            "{} model has {} parameters, got {} --theta ranges",
            model.name(),
            model.n_params(),
            a.theta.len()
        )));
    }
    let ranges = a.theta.iter().map(|t| parse_range(t)).collect::<Result<Vec<_>, _>>()?;
    let grid = product(&ranges);
    let set = clr::identified_set(&ds, model.as_ref(), &grid, on, a.alpha, &ctx.test_config())?;
    println!("{} of {} parameter points not rejected at alpha = {}", set.accepted.len(), grid.len(), a.alpha);
    for j in 0..model.n_params() {
        let vals: Vec<f64> = set.accepted_points().map(|p| p[j]).collect();
        if let (Some(lo), Some(hi)) = (vals.iter().copied().reduce(f64::min), vals.iter().copied().reduce(f64::max)) {
            println!("  theta_{j} in [{lo}, {hi}]");
        }
    }
    if set.empty {
        println!("the identified set is empty: the model is rejected at every grid point");
    }
    let mut out = ctx.out_or_cwd()?;
    let mut header: Vec<String> = (0..model.n_params()).map(|j| format!("theta_{j}")).collect();
    header.extend(["statistic".to_string(), "accepted".to_string()]);
    let rows: Vec<Vec<String>> = grid
        .iter()
        .zip(&set.statistics)
        .map(|(p, s)| {
            let mut row: Vec<String> = p.iter().map(|v| num(*v)).collect();
            row.push(num(*s));
            row.push((*s <= 0.0).to_string());
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.table("identified_set.csv", &header, &rows)?;
    ctx.finish(out, "identified-set", json!({ "model": model.name(), "points": grid.len(), "accepted": set.accepted.len() }))?;
    Ok(Decision::Done)
}

pub fn mte(ctx: &Context, a: &MteArgs) -> Result<Decision, CliError> {
    let mut cols = vec![a.y.as_str(), a.x.as_str(), a.z.as_str()];
    cols.extend(a.controls.iter().map(String::as_str));
    let c = data::read_columns(&a.data, &cols)?;
    let n = c[0].len();
    let names = ColumnNames { y: a.y.clone(), x: vec![a.x.clone()], z: vec![a.z.clone()] };
    let col = |k: usize| DMatrix::from_column_slice(n, 1, &c[k]);
    let mut ds = Dataset::new(c[0].clone(), col(1), col(2), names)?;
    if !a.controls.is_empty() {
        let controls = DMatrix::from_fn(n, a.controls.len(), |i, j| c[3 + j][i]);
        ds = mte::partial_out(&ds, &controls)?;
    }
    let y_bounds = match a.y_bounds.as_slice() {
        [] => None,
        [lo, hi] => Some((*lo, *hi)),
        _ => return Err(CliError::Usage("--y-bounds takes lo,hi".into())),
    };
    let p_grid = if a.p_grid.is_empty() { mte::default_p_grid() } else { a.p_grid.clone() };
    let pcfg = PropensityConfig {
        method: match a.propensity {
            PropensityArg::LocalLinear => PropensityMethod::default(),
            PropensityArg::CellMeans => PropensityMethod::CellMeans,
        },
        ..PropensityConfig::default()
    };
    let pf = mte::fit_propensity(&ds, &pcfg)?;
    let cf = mte::fit_control_function(&ds, &pf, &ControlConfig { bandwidth_scale: a.bandwidth_scale, ..ControlConfig::default() })?;

    let mut out = ctx.out_or_cwd()?;
    let mut surface = Vec::new();
    for &x in &a.x_values {
        for &p in &p_grid {
            let m = cf.cond_mean(x, p).map(num).unwrap_or_default();
            surface.push(vec![num(x), num(p), m, num(cf.effective_n(x, p))]);
        }
    }
    out.table("mte_cond_mean.csv", &["x", "p", "cond_mean", "effective_n"], &surface)?;
    let mut effects = Vec::new();
    for (i, &x) in a.x_values.iter().enumerate() {
        for &xp in &a.x_values[i + 1..] {
            for &p in &p_grid {
                let e = mte::estimate_mte(&cf, p, x, xp).map(num).unwrap_or_default();
                effects.push(vec![num(x), num(xp), num(p), e]);
            }
        }
    }
    out.table("mte_effects.csv", &["x", "x_prime", "p", "mte"], &effects)?;
    let mut asf_rows = Vec::new();
    println!("{:>10} {:>12} {:>12} {:>12} {:>8} {:>8}", "x", "kind", "lower", "upper", "p_lo", "p_hi");
    for &x in &a.x_values {
        let row = match mte::estimate_asf(&cf, &pf, x, &p_grid, y_bounds) {
            Ok(AsfEstimate::Point { value, p_lo, p_hi }) => vec![num(x), "point".into(), num(value), num(value), num(p_lo), num(p_hi)],
            Ok(AsfEstimate::Interval { lower, upper, p_lo, p_hi }) => {
                vec![num(x), "interval".into(), num(lower), num(upper), num(p_lo), num(p_hi)]
            }
            Err(Error::MissingBounds { lo, hi }) => {
                warn!("x = {x}: the control covers [{lo:.3}, {hi:.3}] only; pass --y-bounds for ASF bounds");
                vec![num(x), "needs-bounds".into(), String::new(), String::new(), num(lo), num(hi)]
            }
            Err(e) => {
                warn!("x = {x}: {e}");
                let (lo, hi) = pf.support_p_given_x(x);
                vec![num(x), "unavailable".into(), String::new(), String::new(), num(lo), num(hi)]
            }
        };
        let (lo, hi) = (row[2].parse::<f64>().ok(), row[3].parse::<f64>().ok());
        let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        println!("{:>10} {:>12} {:>12} {:>12} {:>8.4} {:>8.4}", x, row[1], show(lo), show(hi), row[4].parse::<f64>().unwrap_or(f64::NAN), row[5].parse::<f64>().unwrap_or(f64::NAN));
        asf_rows.push(row);
    }
    out.table("mte_asf.csv", &["x", "kind", "lower", "upper", "p_lo", "p_hi"], &asf_rows)?;

    let uni = mte::uniformity_diagnostic(&pf);
    let pit = ks_uniform(&cf.randomized_pit(RngSpec::new(ctx.seed)));
    let cond1 = mte::condition1_diagnostic(&pf, &ds, &mte::Condition1Config::default())?;
    let rows = vec![
        kv("n", ds.n()),
        kv("propensity_bandwidth", pf.bandwidth.map(num).unwrap_or_default()),
        kv("bandwidth_x", cf.bandwidth_x),
        kv("bandwidth_p", cf.bandwidth_p),
        kv("control_ks", uni.overall_ks),
        kv("control_max_bin_ks", uni.max_bin_ks),
        kv("pit_ks", pit),
        kv("max_monotonicity_violation", pf.max_violation_share()),
        kv("injectivity_violations", cond1.injectivity_violations),
        kv("injectivity_message", &cond1.message),
    ];
    println!("control uniformity KS = {:.4}, outcome PIT KS = {pit:.4}", uni.overall_ks);
    println!("{}", cond1.message);
    out.table("mte_diagnostics.csv", DIAGNOSTICS_HEADER, &rows)?;
    ctx.finish(
        out,
        "mte",
        json!({ "bandwidth_x": cf.bandwidth_x, "bandwidth_p": cf.bandwidth_p, "control_ks": uni.overall_ks, "pit_ks": pit }),
    )?;
    Ok(Decision::Done)
}

pub fn simulate(ctx: &mut Context, a: &SimulateArgs) -> Result<Decision, CliError> {
    let plan = presets::resolve(&a.study)?;
    let reps = if a.full { 500 } else { a.reps.or(plan.reps).unwrap_or(ctx.config.sim.replications) };
    if let Some(levels) = &plan.alpha_levels {
        ctx.config.test.alpha_levels = levels.clone();
    }
    ctx.config.sim.replications = reps;
    ctx.config.validate()?;
    info!("study {}: {} designs, {} replications each", plan.name, plan.specs.len(), reps);
    let result = sim::run_study(&plan.specs, &plan.methods, reps, &ctx.test_config())?;
    let mut wide = Vec::new();
    presets::write_wide_csv(&result, &mut wide)?;
    let mut long = Vec::new();
    result.write_csv(&mut long)?;
    print!("{}", String::from_utf8_lossy(&wide));
    for f in &result.failure_examples {
        warn!("{f}");
    }
    let mut out = ctx.out_or_cwd()?;
    out.table_from_csv(&format!("study_{}.csv", plan.name), &wide)?;
    out.table_from_csv(&format!("study_{}_cells.csv", plan.name), &long)?;
    ctx.finish(
        out,
        "simulate",
        json!({
            "study": plan.name,
            "reps": reps,
            "failure_examples": result.failure_examples,
            "seconds": result.runtime.seconds,
            "seconds_per_replication": result.runtime.seconds_per_replication,
        }),
    )?;
    Ok(Decision::Done)
}
