//! Runs several filters on one simulated path and collects comparison series.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::thread;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::he::{HellingerFilter, PolyExpParams};
use crate::l2nm::{FilterRunState, L2ProjectionFilter, RingModel};
use crate::metrics::{hellinger_residual, l2_residual, levy_residual, particle_bound};
use crate::mixture::{MixtureParams, NormalMixtureFamily};
use crate::reference::{ekf_step, EkfState, ExactFilter, GridDensity, GridGeometry};
use crate::scenario::{
    match_prior_gaussian, match_prior_mixture, prior_on_grid, simulate, ObservationRecord, Scenario, RNG_ALGORITHM,
};

/// Runs failing before this fraction of the horizon mark the scenario as mis-specified.
pub const EARLY_FAILURE_FRACTION: f64 = 0.1;
pub const DEFAULT_SLICES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    L2nm,
    He,
    Exact,
    Ekf,
}

impl FilterKind {
    pub const ALL: [FilterKind; 4] = [FilterKind::L2nm, FilterKind::He, FilterKind::Exact, FilterKind::Ekf];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::L2nm => "l2nm",
            FilterKind::He => "he",
            FilterKind::Exact => "exact",
            FilterKind::Ekf => "ekf",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    /// Parses a comma-separated list, keeping the canonical order.
    pub fn parse_list(csv: &str) -> Result<Vec<FilterKind>> {
        let mut out = Vec::new();
        for part in csv.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let kind: FilterKind = part.parse()?;
            if !out.contains(&kind) {
                out.push(kind);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidParameters("no filters selected".into()));
        }
        out.sort();
        Ok(out)
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameters(format!("unknown filter {s:?}; expected l2nm, he, exact or ekf")))
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub filters: Vec<FilterKind>,
    /// Mixture components for the L² filter.
    pub k: usize,
    /// Exponential family degree; defaults to the prior's degree.
    pub he_degree: Option<usize>,
    /// Slice times; defaults to [`DEFAULT_SLICES`] uniform times.
    pub slices: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn new(scenario: Scenario) -> Self {
        RunConfig {
            scenario,
            filters: FilterKind::ALL.to_vec(),
            k: 2,
            he_degree: None,
            slices: None,
        }
    }

    fn has(&self, kind: FilterKind) -> bool {
        self.filters.contains(&kind)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub filters: Vec<FilterKind>,
    pub k: usize,
    pub he_degree: usize,
    pub grid: GridGeometry,
    pub dt: f64,
    pub slice_times: Vec<f64>,
    pub particle_count: usize,
    pub rng: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct FilterReport {
    pub filter: FilterKind,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Residuals against the exact filter; empty for the exact filter itself.
    pub l2: Vec<f64>,
    pub hellinger: Vec<f64>,
    pub levy: Vec<f64>,
    /// Metric condition number seen while stepping from `times[n]`; projection filters only.
    pub condition: Vec<f64>,
    pub failed_at: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Slice {
    pub t: f64,
    pub index: usize,
    pub densities: BTreeMap<FilterKind, Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EarlyFailure {
    pub filter: FilterKind,
    pub t: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: Scenario,
    pub config: ResolvedConfig,
    pub prior_fit_distance: Option<f64>,
    pub times: Vec<f64>,
    pub true_x: Vec<f64>,
    pub filters: Vec<FilterReport>,
    /// Best Lévy residual of `particle_count` particles against the exact filter.
    pub particle_bound: Vec<f64>,
    pub slices: Vec<Slice>,
    pub early_failure: Option<EarlyFailure>,
}

impl RunReport {
    pub fn filter(&self, kind: FilterKind) -> Option<&FilterReport> {
        self.filters.iter().find(|f| f.filter == kind)
    }
}

/// States visited by one filter, truncated at its failure.
enum Trajectory {
    L2nm(Vec<MixtureParams>),
    He(Vec<(PolyExpParams, f64)>),
    Exact(Vec<GridDensity>),
    Ekf(Vec<EkfState>),
}

struct FilterRun {
    kind: FilterKind,
    trajectory: Trajectory,
    condition: Vec<f64>,
    failed_at: Option<f64>,
    failure: Option<String>,
}

impl FilterRun {
    fn len(&self) -> usize {
        match &self.trajectory {
            Trajectory::L2nm(v) => v.len(),
            Trajectory::He(v) => v.len(),
            Trajectory::Exact(v) => v.len(),
            Trajectory::Ekf(v) => v.len(),
        }
    }

    fn density(&self, n: usize, geometry: GridGeometry) -> Result<GridDensity> {
        match &self.trajectory {
            Trajectory::L2nm(v) => {
                let d = v[n].derive();
                GridDensity::sample(geometry, |x| d.pdf(x))
            }
            Trajectory::He(v) => {
                let (p, log_z) = &v[n];
                GridDensity::sample(geometry, |x| p.pdf(x, *log_z))
            }
            Trajectory::Exact(v) => Ok(v[n].clone()),
            Trajectory::Ekf(v) => {
                let s = v[n];
                let norm = (2.0 * std::f64::consts::PI * s.variance).sqrt();
                GridDensity::sample(geometry, |x| (-(x - s.mean).powi(2) / (2.0 * s.variance)).exp() / norm)
            }
        }
    }

    fn mean_sd(&self, n: usize, density: &GridDensity) -> Result<(f64, f64)> {
        Ok(match &self.trajectory {
            Trajectory::L2nm(v) => {
                let d = v[n].derive();
                (d.mean(), d.variance().sqrt())
            }
            Trajectory::He(v) => {
                let rule = v[n].0.quadrature()?;
                let mean = rule.expect(|x| x);
                (mean, rule.expect(|x| (x - mean) * (x - mean)).sqrt())
            }
            Trajectory::Exact(_) => (density.mean(), density.variance().sqrt()),
            Trajectory::Ekf(v) => (v[n].mean, v[n].variance.sqrt()),
        })
    }
}

fn finish<P>(kind: FilterKind, state: &FilterRunState<P>, trajectory: Trajectory, condition: Vec<f64>) -> FilterRun {
    FilterRun {
        kind,
        trajectory,
        condition,
        failed_at: state.failed_at,
        failure: state.failure.clone(),
    }
}

fn run_l2nm(scenario: &Scenario, record: &ObservationRecord, start: MixtureParams, k: usize) -> FilterRun {
    let model = RingModel::from_polynomials(&scenario.f, &scenario.sigma, &scenario.b);
    let filter = L2ProjectionFilter::new(NormalMixtureFamily { k }, model);
    let dt = scenario.dt();
    let mut state = FilterRunState::new(start, 0.0);
    let mut points = vec![state.point.clone()];
    let mut condition = Vec::with_capacity(record.n_steps());
    for &dy in &record.dy {
        state = filter.heun_step(&state, dt, dy);
        condition.push(state.condition);
        if state.is_failed() {
            break;
        }
        points.push(state.point.clone());
    }
    finish(FilterKind::L2nm, &state, Trajectory::L2nm(points), condition)
}

fn run_he(scenario: &Scenario, record: &ObservationRecord, filter: &HellingerFilter) -> FilterRun {
    let dt = scenario.dt();
    let mut state = FilterRunState::new(scenario.prior.clone(), 0.0);
    let log_z = |p: &PolyExpParams| p.quadrature().map(|r| r.log_normalizer());
    let mut points = Vec::with_capacity(record.n_steps() + 1);
    let mut condition = Vec::with_capacity(record.n_steps());
    match log_z(&state.point) {
        Ok(z) => points.push((state.point.clone(), z)),
        Err(e) => {
            state.failed_at = Some(0.0);
            state.failure = Some(e.to_string());
            return finish(FilterKind::He, &state, Trajectory::He(points), condition);
        }
    }
    for &dy in &record.dy {
        state = filter.step_state(&state, dt, dy);
        condition.push(state.condition);
        if state.is_failed() {
            break;
        }
        match log_z(&state.point) {
            Ok(z) => points.push((state.point.clone(), z)),
            Err(e) => {
                state.failed_at = Some(state.t);
                state.failure = Some(e.to_string());
                break;
            }
        }
    }
    finish(FilterKind::He, &state, Trajectory::He(points), condition)
}

fn run_exact(scenario: &Scenario, record: &ObservationRecord, prior: GridDensity) -> Result<FilterRun> {
    let filter = ExactFilter::new(&scenario.model(), scenario.geometry())?;
    let dt = scenario.dt();
    let mut densities = Vec::with_capacity(record.n_steps() + 1);
    densities.push(prior);
    let mut state = FilterRunState::new((), 0.0);
    for &dy in &record.dy {
        match filter.exact_step(densities.last().unwrap(), dt, dy) {
            Ok(next) => {
                densities.push(next);
                state.t += dt;
            }
            Err(e) => {
                state.failed_at = Some(state.t);
                state.failure = Some(e.to_string());
                break;
            }
        }
    }
    Ok(finish(FilterKind::Exact, &state, Trajectory::Exact(densities), Vec::new()))
}

fn run_ekf(scenario: &Scenario, record: &ObservationRecord, start: EkfState) -> FilterRun {
    let model = scenario.model();
    let dt = scenario.dt();
    let mut states = Vec::with_capacity(record.n_steps() + 1);
    states.push(start);
    for &dy in &record.dy {
        let next = ekf_step(*states.last().unwrap(), dt, dy, &model);
        states.push(next);
    }
    FilterRun {
        kind: FilterKind::Ekf,
        trajectory: Trajectory::Ekf(states),
        condition: Vec::new(),
        failed_at: None,
        failure: None,
    }
}

/// Per-step values, indexed by [`FilterKind::index`].
#[derive(Debug, Clone, Default)]
struct StepRow {
    mean: [Option<f64>; 4],
    sd: [Option<f64>; 4],
    l2: [Option<f64>; 4],
    hellinger: [Option<f64>; 4],
    levy: [Option<f64>; 4],
    particle: Option<f64>,
}

fn step_row(runs: &[FilterRun], n: usize, geometry: GridGeometry, particles: usize) -> Result<StepRow> {
    let mut row = StepRow::default();
    let exact = runs
        .iter()
        .find(|r| r.kind == FilterKind::Exact && n < r.len())
        .map(|r| r.density(n, geometry))
        .transpose()?;
    for run in runs.iter().filter(|r| n < r.len()) {
        let i = run.kind.index();
        let density = run.density(n, geometry)?;
        let (mean, sd) = run.mean_sd(n, &density)?;
        row.mean[i] = Some(mean);
        row.sd[i] = Some(sd);
        if let (Some(e), true) = (&exact, run.kind != FilterKind::Exact) {
            row.l2[i] = Some(l2_residual(e, &density)?);
            row.hellinger[i] = Some(hellinger_residual(e, &density)?);
            row.levy[i] = Some(levy_residual(e, &density)?);
        }
    }
    if let Some(e) = &exact {
        row.particle = Some(particle_bound(e, particles)?);
    }
    Ok(row)
}

fn uniform_slices(horizon: f64) -> Vec<f64> {
    (0..DEFAULT_SLICES)
        .map(|i| horizon * i as f64 / (DEFAULT_SLICES - 1) as f64)
        .collect()
}

/// Simulates the scenario, runs the selected filters on the same path and
/// compares them with the exact filter.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    let scenario = &config.scenario;
    scenario.validate()?;
    if config.k == 0 {
        return Err(Error::InvalidParameters("k must be at least 1".into()));
    }
    let prior_degree = scenario.prior.degree();
    let he_degree = config.he_degree.unwrap_or(prior_degree);
    if config.has(FilterKind::He) && he_degree != prior_degree {
        return Err(Error::InvalidParameters(format!(
            "he degree {he_degree} does not match the prior's degree {prior_degree}"
        )));
    }
    let geometry = scenario.geometry();
    let slice_times = config.slices.clone().unwrap_or_else(|| uniform_slices(scenario.horizon));
    if let Some(t) = slice_times.iter().find(|t| !(**t >= 0.0 && **t <= scenario.horizon)) {
        return Err(Error::InvalidParameters(format!("slice time {t} is outside [0, horizon]")));
    }
    let particle_count = (3 * config.k).div_ceil(2);

    // prepare every prior before any stepping so configuration errors surface first
    let fit = if config.has(FilterKind::L2nm) {
        Some(match_prior_mixture(&scenario.prior, config.k, geometry)?)
    } else {
        None
    };
    let he = if config.has(FilterKind::He) {
        Some(HellingerFilter::new(&scenario.f, &scenario.sigma, &scenario.b)?)
    } else {
        None
    };
    let exact_prior = if config.has(FilterKind::Exact) {
        Some(prior_on_grid(&scenario.prior, geometry)?.normalized()?)
    } else {
        None
    };
    let ekf_prior = if config.has(FilterKind::Ekf) {
        Some(match_prior_gaussian(&scenario.prior)?)
    } else {
        None
    };

    let record = simulate(scenario);
    let runs: Vec<FilterRun> = thread::scope(|s| {
        let record = &record;
        let mut handles = Vec::new();
        if let Some(fit) = &fit {
            handles.push(s.spawn(move || Ok(run_l2nm(scenario, record, fit.params.clone(), config.k))));
        }
        if let Some(he) = &he {
            handles.push(s.spawn(move || Ok(run_he(scenario, record, he))));
        }
        if let Some(prior) = exact_prior {
            handles.push(s.spawn(move || run_exact(scenario, record, prior)));
        }
        if let Some(start) = ekf_prior {
            handles.push(s.spawn(move || Ok(run_ekf(scenario, record, start))));
        }
        handles
            .into_iter()
            .map(|h| h.join().expect("filter thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;

    // report failure times on the observation grid rather than as accumulated sums
    let mut runs = runs;
    for r in runs.iter_mut().filter(|r| r.failed_at.is_some()) {
        r.failed_at = Some(record.times[r.len() - 1]);
    }

    let n_times = record.times.len();
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(n_times);
    let chunk = n_times.div_ceil(workers);
    let rows: Vec<StepRow> = thread::scope(|s| {
        let runs = &runs;
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w * chunk..((w + 1) * chunk).min(n_times))
                        .map(|n| step_row(runs, n, geometry, particle_count))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("metrics thread panicked"))
            .collect::<Result<Vec<Vec<_>>>>()
    })?
    .into_iter()
    .flatten()
    .collect();

    let dt = scenario.dt();
    let slices = slice_times
        .iter()
        .map(|&t| {
            let index = ((t / dt).round() as usize).min(record.n_steps());
            let densities = runs
                .iter()
                .filter(|r| index < r.len())
                .map(|r| Ok((r.kind, r.density(index, geometry)?.values)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            Ok(Slice {
                t: record.times[index],
                index,
                densities,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let column = |pick: fn(&StepRow) -> &[Option<f64>; 4], i: usize| -> Vec<f64> {
        rows.iter().map_while(|r| pick(r)[i]).collect()
    };
    let filters: Vec<FilterReport> = runs
        .iter()
        .map(|run| {
            let i = run.kind.index();
            FilterReport {
                filter: run.kind,
                mean: column(|r| &r.mean, i),
                sd: column(|r| &r.sd, i),
                l2: column(|r| &r.l2, i),
                hellinger: column(|r| &r.hellinger, i),
                levy: column(|r| &r.levy, i),
                condition: run.condition.clone(),
                failed_at: run.failed_at,
                failure: run.failure.clone(),
            }
        })
        .collect();

    let early_failure = filters
        .iter()
        .filter_map(|f| f.failed_at.map(|t| (f.filter, t)))
        .filter(|(_, t)| *t < EARLY_FAILURE_FRACTION * scenario.horizon)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(filter, t)| EarlyFailure { filter, t });

    Ok(RunReport {
        scenario: scenario.clone(),
        config: ResolvedConfig {
            filters: config.filters.clone(),
            k: config.k,
            he_degree,
            grid: geometry,
            dt,
            slice_times,
            particle_count,
            rng: RNG_ALGORITHM,
        },
        prior_fit_distance: fit.map(|f| f.distance),
        times: record.times.clone(),
        true_x: record.x_path.clone(),
        filters,
        particle_bound: rows.iter().map_while(|r| r.particle).collect(),
        slices,
        early_failure,
    })
}

fn cell(out: &mut String, v: Option<f64>) {
    out.push(',');
    if let Some(v) = v {
        write!(out, "{v}").expect("writing to a string");
    }
}

fn series_value(report: &RunReport, kind: FilterKind, pick: fn(&FilterReport) -> &Vec<f64>, n: usize) -> Option<f64> {
    report.filter(kind).and_then(|f| pick(f).get(n).copied())
}

pub fn residuals_csv(report: &RunReport) -> String {
    let mut out = String::from("t,l2_l2nm,l2_he,l2_ekf,levy_l2nm,levy_he,levy_particle_bound\n");
    for (n, t) in report.times.iter().enumerate() {
        write!(out, "{t}").unwrap();
        for kind in [FilterKind::L2nm, FilterKind::He, FilterKind::Ekf] {
            cell(&mut out, series_value(report, kind, |f| &f.l2, n));
        }
        for kind in [FilterKind::L2nm, FilterKind::He] {
            cell(&mut out, series_value(report, kind, |f| &f.levy, n));
        }
        cell(&mut out, report.particle_bound.get(n).copied());
        out.push('\n');
    }
    out
}

pub fn tracks_csv(report: &RunReport) -> String {
    let mut out = String::from("t,true_x");
    for kind in FilterKind::ALL {
        write!(out, ",mean_{kind},sd_{kind}").unwrap();
    }
    out.push('\n');
    for (n, t) in report.times.iter().enumerate() {
        write!(out, "{t},{}", report.true_x[n]).unwrap();
        for kind in FilterKind::ALL {
            cell(&mut out, series_value(report, kind, |f| &f.mean, n));
            cell(&mut out, series_value(report, kind, |f| &f.sd, n));
        }
        out.push('\n');
    }
    out
}

pub fn slices_csv(report: &RunReport) -> String {
    let xs = report.config.grid.xs();
    let mut out = String::from("t,x,p_exact,p_l2nm,p_he,p_ekf\n");
    for slice in &report.slices {
        for (i, x) in xs.iter().enumerate() {
            write!(out, "{},{x}", slice.t).unwrap();
            for kind in [FilterKind::Exact, FilterKind::L2nm, FilterKind::He, FilterKind::Ekf] {
                cell(&mut out, slice.densities.get(&kind).map(|d| d[i]));
            }
            out.push('\n');
        }
    }
    out
}

/// Writes `report.json`, `slices.csv`, `residuals.csv` and `tracks.csv`.
pub fn write_outputs(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    fs::write(dir.join("slices.csv"), slices_csv(report))?;
    fs::write(dir.join("residuals.csv"), residuals_csv(report))?;
    fs::write(dir.join("tracks.csv"), tracks_csv(report))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(name: &str, steps: usize) -> Scenario {
        let mut s = Scenario::builtin(name).unwrap();
        s.horizon = 0.2;
        s.n_steps = steps;
        s
    }

    #[test]
    fn filter_lists_parse() {
        assert_eq!(
            FilterKind::parse_list("ekf, l2nm,ekf").unwrap(),
            vec![FilterKind::L2nm, FilterKind::Ekf]
        );
        assert!(FilterKind::parse_list("l2nm,particle").is_err());
        assert!(FilterKind::parse_list("").is_err());
    }

    #[test]
    fn series_share_the_time_grid() {
        let mut config = RunConfig::new(short("linear", 40));
        config.k = 1;
        let report = run(&config).unwrap();
        assert_eq!(report.times.len(), 41);
        assert_eq!(report.particle_bound.len(), 41);
        for f in &report.filters {
            assert_eq!(f.mean.len(), 41, "{}", f.filter);
            if f.filter != FilterKind::Exact {
                assert_eq!(f.levy.len(), 41);
            }
        }
        assert_eq!(report.slices.len(), DEFAULT_SLICES);
        assert!(report.early_failure.is_none());
    }

    #[test]
    fn csv_layouts() {
        let mut config = RunConfig::new(short("linear", 10));
        config.k = 1;
        config.filters = vec![FilterKind::Exact, FilterKind::Ekf];
        config.slices = Some(vec![0.0, 0.2]);
        let report = run(&config).unwrap();
        let residuals = residuals_csv(&report);
        let mut lines = residuals.lines();
        assert_eq!(lines.next().unwrap(), "t,l2_l2nm,l2_he,l2_ekf,levy_l2nm,levy_he,levy_particle_bound");
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 7);
        assert_eq!(first[0], "0");
        assert!(first[1].is_empty() && !first[3].is_empty());
        assert_eq!(slices_csv(&report).lines().count(), 1 + 2 * 1000);
        assert_eq!(tracks_csv(&report).lines().next().unwrap().split(',').count(), 10);
    }

    #[test]
    fn mismatched_he_degree_is_a_config_error() {
        let mut config = RunConfig::new(short("linear", 10));
        config.he_degree = Some(4);
        assert!(run(&config).is_err());
        config.filters = vec![FilterKind::Ekf];
        assert!(run(&config).is_ok());
    }
}
