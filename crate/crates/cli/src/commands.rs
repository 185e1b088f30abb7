use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use log::info;

use lgocv::grid::{fit_on_grid, Fit};
use lgocv::io::ModelSpec;
use lgocv::oracle::{lfocv_curve, refit_lgocv, HyperMode, LfocvCurve, OracleReport, Pchip};
use lgocv::quadrature::MAX_ORDER;
use lgocv::simulate::{Scenario, Simulation};
use lgocv::{
    build_groups, compute_lgocv, fit as fit_model, fit_fixed, ComponentKind, CorrelationRows, CorrelationSource,
    EngineConfig, GridConfig, GroupConfig, GroupSpec, LgmModel, LgocvResult, LikelihoodFamily,
};

use crate::inputs::{parse_range, Inputs};
use crate::state;
use crate::{FitArgs, GroupArgs, InputArgs, Source};

pub enum Status {
    Ok,
    VerificationFailed,
}

const FITTED_FILE: &str = "fitted.lgocvfit";

fn grid_config(step: Option<f64>) -> Result<GridConfig> {
    let mut cfg = GridConfig::default();
    if let Some(s) = step {
        if !(s > 0.0 && s.is_finite()) {
            bail!("--theta-grid-step must be a positive number, got {s}");
        }
        cfg.step = s;
    }
    Ok(cfg)
}

fn engine_config(gh_order: Option<usize>) -> Result<EngineConfig> {
    let mut cfg = EngineConfig::default();
    if let Some(k) = gh_order {
        if k == 0 || k > MAX_ORDER {
            bail!("--gh-order must be between 1 and {MAX_ORDER}, got {k}");
        }
        cfg.gh_order = k;
    }
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn targets(range: Option<&str>, n: usize) -> Result<Vec<usize>> {
    match range {
        Some(r) => parse_range(r, n),
        None => Ok((0..n).collect()),
    }
}

fn obtain_fit(inputs: &Inputs, model: &LgmModel, args: &FitArgs) -> Result<Fit> {
    let cfg = grid_config(args.theta_grid_step)?;
    match &args.fitted {
        Some(path) => {
            if args.theta_grid_step.is_some() {
                bail!("--theta-grid-step has no effect with --fitted; refit instead");
            }
            let grid = state::load(path, &inputs.digest)?;
            if grid.points[0].point.theta.len() != model.theta_dim() {
                bail!(
                    "fitted state has {} free hyperparameters, the model has {}",
                    grid.points[0].point.theta.len(),
                    model.theta_dim()
                );
            }
            Ok(fit_on_grid(model, grid, &cfg.mode)?)
        }
        None => Ok(fit_model(model, &cfg)?),
    }
}

fn correlation_source(model: &LgmModel, args: &GroupArgs) -> Result<CorrelationSource> {
    match args.source {
        Source::Posterior => {
            if !args.prior_subset.is_empty() {
                bail!("--prior-subset needs --source prior");
            }
            Ok(CorrelationSource::Posterior)
        }
        Source::Prior if args.prior_subset.is_empty() => Ok(CorrelationSource::Prior(
            (0..model.components().len())
                .filter(|&c| !matches!(model.components()[c].kind, ComponentKind::Fixed { .. }))
                .collect(),
        )),
        Source::Prior => args
            .prior_subset
            .iter()
            .map(|name| {
                model
                    .component_index(name.trim())
                    .with_context(|| format!("--prior-subset: no component named `{name}`"))
            })
            .collect::<Result<Vec<_>>>()
            .map(CorrelationSource::Prior),
    }
}

fn auto_groups(model: &LgmModel, fit: &Fit, args: &GroupArgs, m: usize, targets: &[usize]) -> Result<GroupSpec> {
    if !(args.tie_tol >= 0.0 && args.tie_tol.is_finite()) {
        bail!("--tie-tol must be a non-negative number, got {}", args.tie_tol);
    }
    let source = correlation_source(model, args)?;
    let rows = CorrelationRows::new(model, fit.mode_approximation(), &source)?;
    let cfg = GroupConfig { m, tie_tol: args.tie_tol, ..GroupConfig::default() };
    info!("building groups with m = {m} from the {} correlations", source.describe(model));
    Ok(build_groups(&rows, targets, &cfg, source.describe(model))?)
}

fn read_groups(path: &Path, n: usize, targets: &[usize]) -> Result<GroupSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let groups = GroupSpec::from_text(&text, n).with_context(|| format!("in group file {}", path.display()))?;
    if let Some(i) = targets.iter().find(|&&i| groups.get(i).is_none()) {
        bail!("group file {} has no group for observation {}", path.display(), i + 1);
    }
    Ok(groups)
}

fn write_result(out: &Path, result: &LgocvResult) -> Result<()> {
    let mut csv = Vec::new();
    result.write_csv(&mut csv)?;
    write_file(&out.join("scores.csv"), csv)?;
    write_file(&out.join("summary.txt"), result.summary())
}

pub fn fit(input: &InputArgs, theta_grid_step: Option<f64>, out: &Path) -> Result<Status> {
    let inputs = Inputs::load(&input.model, &input.data, input.graph.as_deref())?;
    let model = inputs.model()?;
    let f = obtain_fit(&inputs, &model, &FitArgs { fitted: None, theta_grid_step })?;
    prepare_out(out)?;

    let mut grid_csv = Vec::new();
    f.grid.write_csv(&mut grid_csv)?;
    write_file(&out.join("theta_grid.csv"), grid_csv)?;

    let mut latent = String::from("index,component,component_index,mean\n");
    for (j, m) in f.latent_mean().iter().enumerate() {
        let c = model.component_of(j);
        let _ = writeln!(latent, "{},{},{},{m:.17e}", j + 1, model.components()[c].name, j - model.offset(c) + 1);
    }
    write_file(&out.join("latent_mean.csv"), latent)?;

    let at_mode = model.natural_values(f.grid.mode());
    let mut means = vec![0.0; at_mode.len()];
    for p in &f.grid.points {
        for (acc, (_, v)) in means.iter_mut().zip(model.natural_values(&p.point)) {
            *acc += p.weight * v;
        }
    }
    let mut hypers = String::from("name,fixed,mode,posterior_mean\n");
    for ((h, (_, mode)), mean) in model.hyperparameters().iter().zip(&at_mode).zip(&means) {
        let _ = writeln!(hypers, "{},{},{mode:.17e},{mean:.17e}", h.name, h.fixed);
    }
    write_file(&out.join("hyperparameters.csv"), hypers)?;

    state::save(&out.join(FITTED_FILE), &f.grid, &inputs.digest)?;

    let summary = format!(
        "hyperparameters = {}\nfree_hyperparameters = {}\ntheta_grid_size = {}\nlog_posterior_at_mode = {:.12}\n",
        model.hyperparameters().len(),
        model.theta_dim(),
        f.grid.len(),
        f.grid.points[f.grid.mode_index].log_posterior
    );
    write_file(&out.join("summary.txt"), summary)?;
    Ok(Status::Ok)
}

pub fn groups(
    input: &InputArgs,
    fit_args: &FitArgs,
    args: &GroupArgs,
    m: usize,
    test_range: Option<&str>,
    groups_out: &Path,
) -> Result<Status> {
    let inputs = Inputs::load(&input.model, &input.data, input.graph.as_deref())?;
    let model = inputs.model()?;
    let targets = targets(test_range, model.n_observations())?;
    let f = obtain_fit(&inputs, &model, fit_args)?;
    let groups = auto_groups(&model, &f, args, m, &targets)?;
    write_file(groups_out, groups.to_text())?;
    Ok(Status::Ok)
}

pub struct CvOptions<'a> {
    pub input: &'a InputArgs,
    pub fit: &'a FitArgs,
    pub groups: &'a GroupArgs,
    pub m: Option<usize>,
    pub groups_in: Option<&'a Path>,
    pub groups_out: Option<&'a Path>,
    pub gh_order: Option<usize>,
    pub test_range: Option<&'a str>,
    pub out: &'a Path,
}

pub fn cv(o: &CvOptions) -> Result<Status> {
    let cfg = engine_config(o.gh_order)?;
    let inputs = Inputs::load(&o.input.model, &o.input.data, o.input.graph.as_deref())?;
    let model = inputs.model()?;
    let n = model.n_observations();
    let targets = targets(o.test_range, n)?;
    let groups = match o.groups_in {
        Some(path) => read_groups(path, n, &targets)?,
        None => GroupSpec::singletons(n, &targets),
    };
    let f = obtain_fit(&inputs, &model, o.fit)?;
    let groups = match o.m {
        Some(m) => auto_groups(&model, &f, o.groups, m, &targets)?,
        None => groups,
    };
    let result = compute_lgocv(&model, &f, &groups, Some(&targets), &cfg)?;
    prepare_out(o.out)?;
    write_result(o.out, &result)?;
    if let Some(path) = o.groups_out {
        write_file(path, groups.to_text())?;
    }
    Ok(Status::Ok)
}

pub struct SimulateOptions<'a> {
    pub scenario: &'a str,
    pub seed: u64,
    pub m: usize,
    pub gh_order: Option<usize>,
    pub theta_grid_step: Option<f64>,
    pub test_range: Option<&'a str>,
    pub out: &'a Path,
}

fn scatter(model: &LgmModel, result: &LgocvResult, groups: &GroupSpec, mode: &HyperMode) -> Result<OracleReport> {
    let targets: Vec<usize> = result.scores.iter().map(|s| s.index).collect();
    let oracle = refit_lgocv(model, groups, &targets, mode)?;
    let mut report = OracleReport::new();
    for s in &result.scores {
        report.push(format!("y{}", s.index + 1), s.density, oracle[s.index].exp(), 0.05);
    }
    Ok(report)
}

fn report_csv(report: &OracleReport) -> Result<Vec<u8>> {
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    Ok(csv)
}

pub fn simulate(o: &SimulateOptions) -> Result<Status> {
    let scenario: Scenario = o.scenario.parse().map_err(|_| {
        let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
        anyhow!("unknown scenario `{}`; expected one of {}", o.scenario, names.join(", "))
    })?;
    let grid_cfg = grid_config(o.theta_grid_step)?;
    let cfg = engine_config(o.gh_order)?;
    let sim = Simulation::generate(scenario, o.seed);
    let spec = ModelSpec::parse(&sim.spec_text)?;
    let model = spec.build(&sim.data, &Default::default())?;
    let n = model.n_observations();
    let test = match (scenario, o.test_range) {
        (Scenario::Ar1Forecast, None) => parse_range("1501-2000", n)?,
        (_, r) => targets(r, n)?,
    };
    prepare_out(o.out)?;
    write_file(&o.out.join("data.csv"), sim.data.to_csv())?;
    write_file(&o.out.join("model.spec"), &sim.spec_text)?;

    let f = fit_model(&model, &grid_cfg)?;
    let mut summary = format!(
        "scenario = {scenario}\nseed = {}\nobservations = {n}\ntest = {}-{}\n",
        o.seed,
        test[0] + 1,
        test[test.len() - 1] + 1
    );
    let _ = writeln!(summary, "theta_grid_size = {}", f.grid.len());

    if scenario == Scenario::Ar1Forecast {
        let u = model.component_index("u").context("ar1 model has no `u` component")?;
        let source = CorrelationSource::Prior(vec![u]);
        let rows = CorrelationRows::new(&model, f.mode_approximation(), &source)?;
        let ks: Vec<usize> = (1..=10).collect();
        info!("LFOCV for k = 1..10 ({} refits)", LfocvCurve::refit_count(&ks, &test));
        let curve = lfocv_curve(&model, &ks, &test, &HyperMode::Fixed(f.grid.mode().clone()))?;
        let xs: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
        let interp = Pchip::new(&xs, &curve.utilities)?;
        let mut lfocv = String::from("k,u_lfocv\n");
        for (k, u) in ks.iter().zip(&curve.utilities) {
            let _ = writeln!(lfocv, "{k},{u:.12}");
        }
        let mut table = String::from("m,u_lgocv,mapped_steps,lgocv_equals_loocv\n");
        for m in 1..=10 {
            let gcfg = GroupConfig { m, ..GroupConfig::default() };
            let groups = build_groups(&rows, &test, &gcfg, source.describe(&model))?;
            let r = compute_lgocv(&model, &f, &groups, Some(&test), &cfg)?;
            let mapped = interp.invert(r.utility).unwrap_or(f64::NAN);
            let _ = writeln!(table, "{m},{:.12},{mapped:.6},{}", r.utility, r.all_singletons);
            if m == 1 {
                let _ = writeln!(summary, "lgocv_equals_loocv = {}", r.all_singletons);
            }
        }
        write_file(&o.out.join("lfocv.csv"), lfocv)?;
        write_file(&o.out.join("correspondence.csv"), table)?;
        let _ = writeln!(summary, "lfocv_refits = {}", LfocvCurve::refit_count(&ks, &test));
    } else {
        let mode = HyperMode::Grid(grid_cfg);
        let loo_groups = GroupSpec::singletons(n, &test);
        let loo = compute_lgocv(&model, &f, &loo_groups, Some(&test), &cfg)?;
        let args =
            GroupArgs { source: Source::Posterior, prior_subset: Vec::new(), tie_tol: GroupConfig::default().tie_tol };
        let groups = auto_groups(&model, &f, &args, o.m, &test)?;
        let lgo = compute_lgocv(&model, &f, &groups, Some(&test), &cfg)?;
        write_file(&o.out.join("groups.txt"), groups.to_text())?;
        for (name, result, g) in [("loocv", &loo, &loo_groups), ("lgocv", &lgo, &groups)] {
            let report = scatter(&model, result, g, &mode)?;
            write_file(&o.out.join(format!("scatter_{name}.csv")), report_csv(&report)?)?;
            let _ = writeln!(summary, "u_{name} = {:.12}", result.utility);
            let _ = writeln!(summary, "{name}_oracle_within_5pct = {:.4}", report.fraction_passing());
            let _ = writeln!(summary, "{name}_oracle_median_rel_err = {:.3e}", report.median_rel_err());
        }
        let _ = writeln!(summary, "m = {}", o.m);
    }
    write_file(&o.out.join("summary.txt"), summary)?;
    Ok(Status::Ok)
}

pub struct VerifyOptions<'a> {
    pub input: &'a InputArgs,
    pub fit: &'a FitArgs,
    pub groups: &'a GroupArgs,
    pub m: Option<usize>,
    pub groups_in: Option<&'a Path>,
    pub fix_theta: bool,
    pub gh_order: Option<usize>,
    pub test_range: Option<&'a str>,
    pub out: &'a Path,
}

/// Exact comparisons must all agree; approximate ones need 95% within tolerance.
fn verdict(report: &OracleReport, skipped: usize, exact: bool) -> bool {
    skipped == 0 && if exact { report.all_pass() } else { report.fraction_passing() >= 0.95 }
}

pub fn verify(o: &VerifyOptions) -> Result<Status> {
    let cfg = engine_config(o.gh_order)?;
    let inputs = Inputs::load(&o.input.model, &o.input.data, o.input.graph.as_deref())?;
    let model = inputs.model()?;
    let n = model.n_observations();
    let targets = targets(o.test_range, n)?;
    let groups_file = match o.groups_in {
        Some(path) => Some(read_groups(path, n, &targets)?),
        None => None,
    };
    let grid_fit = obtain_fit(&inputs, &model, o.fit)?;
    let groups = match (groups_file, o.m) {
        (Some(g), _) => g,
        (None, Some(m)) => auto_groups(&model, &grid_fit, o.groups, m, &targets)?,
        (None, None) => GroupSpec::singletons(n, &targets),
    };
    let fixed = o.fix_theta || model.theta_dim() == 0;
    let (f, mode) = if fixed {
        let point = grid_fit.grid.mode().clone();
        (fit_fixed(&model, &point, &GridConfig::default().mode)?, HyperMode::Fixed(point))
    } else {
        let cfg = grid_config(o.fit.theta_grid_step)?;
        (grid_fit, HyperMode::Grid(cfg))
    };
    let gaussian = model.observations().iter().all(|ob| matches!(ob.family, LikelihoodFamily::Gaussian { .. }));
    let exact = gaussian && fixed;
    let tolerance = if exact { 1e-8 } else { 0.05 };

    let result = compute_lgocv(&model, &f, &groups, Some(&targets), &cfg)?;
    let oracle = refit_lgocv(&model, &groups, &targets, &mode)?;
    let mut report = OracleReport::new();
    for s in &result.scores {
        report.push(format!("y{}", s.index + 1), s.density, oracle[s.index].exp(), tolerance);
    }
    let pass = verdict(&report, result.skipped.len(), exact);

    prepare_out(o.out)?;
    write_file(&o.out.join("verify.csv"), report_csv(&report)?)?;
    let summary = format!(
        "mode = {}\ntolerance = {tolerance:e}\nrequired_fraction = {}\ncompared = {}\nskipped = {}\nfraction_within_tolerance = {:.6}\nmax_rel_err = {:.3e}\nmedian_rel_err = {:.3e}\npass = {pass}\n",
        if exact { "exact" } else { "approximate" },
        if exact { 1.0 } else { 0.95 },
        report.cases.len(),
        result.skipped.len(),
        report.fraction_passing(),
        report.max_rel_err(),
        report.median_rel_err(),
    );
    write_file(&o.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(if pass { Status::Ok } else { Status::VerificationFailed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(fails: usize, total: usize) -> OracleReport {
        let mut r = OracleReport::new();
        for k in 0..total {
            let engine = if k < fails { 2.0 } else { 1.0 };
            r.push(format!("y{k}"), engine, 1.0, 0.05);
        }
        r
    }

    #[test]
    fn verdict_thresholds() {
        assert!(verdict(&report(0, 40), 0, true));
        assert!(!verdict(&report(1, 40), 0, true));
        assert!(verdict(&report(2, 40), 0, false));
        assert!(!verdict(&report(3, 40), 0, false));
        assert!(!verdict(&report(0, 40), 1, false));
    }

    #[test]
    fn option_validation() {
        assert!(grid_config(Some(0.0)).is_err());
        assert!(grid_config(Some(f64::NAN)).is_err());
        assert_eq!(grid_config(Some(0.25)).unwrap().step, 0.25);
        assert!(engine_config(Some(0)).is_err());
        assert!(engine_config(Some(MAX_ORDER + 1)).is_err());
        assert_eq!(engine_config(None).unwrap(), EngineConfig::default());
    }
}
