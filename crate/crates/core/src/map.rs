//! Stint-time map: the stint problem swept over lap count and charge time,
//! and the two surrogates the race planner is built on.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charge::ChargeTables;
use crate::error::{Error, Result};
use crate::fitting::{
    fit_final_stint, fit_quadratic_form, FeatureMap, FinalStintFit, FitOptions, FitSample,
    QuadFormFit, Sign,
};
use crate::model::{build_stint_grid, StintSpec, TrackData, VehicleModel};
use crate::stint::{default_solve_options, solve_stint_on_grid, Limits};

/// Number of charge times in the default sweep.
pub const DEFAULT_CHARGE_POINTS: usize = 8;
/// Lowest default charge time as a fraction of the longest charge.
pub const DEFAULT_CHARGE_FLOOR: f64 = 0.05;
/// Upper limit on the lap count searched for the feasibility edge.
const MAX_LAPS_SEARCH: usize = 200;

/// One cell of the map. Failed solves keep `t_stint = NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StintSample {
    pub n_laps: usize,
    pub t_charge: f64,
    #[serde(rename = "final")]
    pub is_final: bool,
    pub t_stint: f64,
    pub valid: bool,
    pub status: String,
}

impl StintSample {
    fn key(&self) -> (bool, usize, u64) {
        (self.is_final, self.n_laps, self.t_charge.to_bits())
    }
}

/// Worker count for the sweep; `0` lets rayon decide.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepOptions {
    pub jobs: usize,
}

fn run_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn solve_cell(
    model: &VehicleModel,
    grid: &Result<TrackData>,
    tables: &ChargeTables,
    n_laps: usize,
    t_charge: f64,
    is_final: bool,
) -> StintSample {
    let fail = |status: String| StintSample {
        n_laps,
        t_charge,
        is_final,
        t_stint: f64::NAN,
        valid: false,
        status,
    };
    let grid = match grid {
        Ok(g) => g,
        Err(e) => return fail(format!("error: {e}")),
    };
    let spec = if is_final {
        StintSpec::final_stint(n_laps, &model.params, tables)
    } else {
        StintSpec::regular(n_laps, t_charge, &model.params, tables)
    };
    let res = spec.and_then(|spec| {
        solve_stint_on_grid(&spec, grid, model, Limits::default(), &default_solve_options())
    });
    match res {
        Ok(sol) => StintSample {
            n_laps,
            t_charge,
            is_final,
            t_stint: if sol.trusted { sol.t_stint } else { f64::NAN },
            valid: sol.is_valid(),
            status: if sol.trusted && !sol.is_valid() {
                "Invalid".into()
            } else {
                format!("{:?}", sol.status)
            },
        },
        Err(e) => fail(format!("error: {e}")),
    }
}

fn check_charges(tables: &ChargeTables, t_charges: &[f64]) -> Result<()> {
    for &t in t_charges {
        if !(t > 0.0 && t <= tables.t_charge_max * (1.0 + 1e-12)) {
            return Err(Error::Argument(format!(
                "charge time {t} s outside (0, {}]",
                tables.t_charge_max
            )));
        }
    }
    Ok(())
}

fn grids(track: &TrackData, laps: impl Iterator<Item = usize>) -> BTreeMap<usize, Result<TrackData>> {
    laps.map(|n| (n, build_stint_grid(track, n))).collect()
}

/// Solves every `(N, t_charge)` pair. Each pair is an independent solve, so
/// the result does not depend on the worker count or on scheduling; samples
/// come back sorted by `(N, t_charge)`.
pub fn sweep_stint_times(
    model: &VehicleModel,
    track: &TrackData,
    tables: &ChargeTables,
    n_laps: &[usize],
    t_charges: &[f64],
    opts: SweepOptions,
) -> Result<Vec<StintSample>> {
    if n_laps.is_empty() || t_charges.is_empty() {
        return Err(Error::Argument("sweep needs at least one lap count and one charge time".into()));
    }
    if n_laps.contains(&0) {
        return Err(Error::Argument("lap counts must be positive".into()));
    }
    check_charges(tables, t_charges)?;
    let mut pairs: Vec<(usize, f64)> = n_laps
        .iter()
        .flat_map(|&n| t_charges.iter().map(move |&t| (n, t)))
        .collect();
    pairs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pairs.dedup();
    sweep_pairs(model, track, tables, &pairs, opts)
}

fn sweep_pairs(
    model: &VehicleModel,
    track: &TrackData,
    tables: &ChargeTables,
    pairs: &[(usize, f64)],
    opts: SweepOptions,
) -> Result<Vec<StintSample>> {
    let grids = grids(track, pairs.iter().map(|p| p.0));
    let out = run_pool(opts.jobs, || {
        pairs
            .par_iter()
            .map(|&(n, t)| solve_cell(model, &grids[&n], tables, n, t, false))
            .collect::<Vec<_>>()
    })?;
    log_excluded(&out);
    Ok(out)
}

/// Final stints (charge time fixed at the maximum, battery may be emptied).
pub fn sweep_final_stints(
    model: &VehicleModel,
    track: &TrackData,
    tables: &ChargeTables,
    n_laps: &[usize],
    opts: SweepOptions,
) -> Result<Vec<StintSample>> {
    let mut laps = n_laps.to_vec();
    laps.sort_unstable();
    laps.dedup();
    if laps.is_empty() || laps[0] == 0 {
        return Err(Error::Argument("final stints need positive lap counts".into()));
    }
    let grids = grids(track, laps.iter().copied());
    let t_max = tables.t_charge_max;
    let out = run_pool(opts.jobs, || {
        laps.par_iter()
            .map(|&n| solve_cell(model, &grids[&n], tables, n, t_max, true))
            .collect::<Vec<_>>()
    })?;
    log_excluded(&out);
    Ok(out)
}

fn log_excluded(samples: &[StintSample]) {
    for s in samples.iter().filter(|s| !s.valid) {
        log::info!(
            "excluded from fit: N={} t_c={:.3} final={} ({})",
            s.n_laps,
            s.t_charge,
            s.is_final,
            s.status
        );
    }
}

/// `DEFAULT_CHARGE_POINTS` log-spaced charge times in
/// `(DEFAULT_CHARGE_FLOOR·t_max, t_max]`.
pub fn default_charge_grid(t_max: f64) -> Vec<f64> {
    let k = DEFAULT_CHARGE_POINTS as f64;
    (1..=DEFAULT_CHARGE_POINTS)
        .map(|i| {
            if i == DEFAULT_CHARGE_POINTS {
                t_max
            } else {
                t_max * DEFAULT_CHARGE_FLOOR.powf(1.0 - i as f64 / k)
            }
        })
        .collect()
}

/// Walks up in `N` at the longest charge until a stint stops being valid.
/// Returns the last valid `N` and every sample solved on the way.
pub fn find_max_laps(
    model: &VehicleModel,
    track: &TrackData,
    tables: &ChargeTables,
) -> Result<(usize, Vec<StintSample>)> {
    let t_max = tables.t_charge_max;
    let mut seen = Vec::new();
    for n in 1..=MAX_LAPS_SEARCH {
        let grid = build_stint_grid(track, n);
        let s = solve_cell(model, &grid, tables, n, t_max, false);
        let ok = s.valid;
        seen.push(s);
        if !ok {
            if n == 1 {
                return Err(Error::Infeasible(
                    "a single-lap stint is not feasible even after the longest charge".into(),
                ));
            }
            return Ok((n - 1, seen));
        }
    }
    Err(Error::Argument(format!(
        "stints stay feasible beyond {MAX_LAPS_SEARCH} laps; pass an explicit lap grid"
    )))
}

/// The full map: regular stints on the default grid plus final stints.
#[derive(Debug, Clone, PartialEq)]
pub struct StintMap {
    pub samples: Vec<StintSample>,
    pub n_laps_max: usize,
}

impl StintMap {
    pub fn regular(&self) -> impl Iterator<Item = &StintSample> {
        self.samples.iter().filter(|s| !s.is_final)
    }

    pub fn finals(&self) -> impl Iterator<Item = &StintSample> {
        self.samples.iter().filter(|s| s.is_final)
    }
}

/// Sweeps `N ∈ 1..=N_max+2` against [`default_charge_grid`] and solves final
/// stints for `N ∈ 1..=N_max+2`, where `N_max` comes from [`find_max_laps`]
/// unless given.
pub fn build_map(
    model: &VehicleModel,
    track: &TrackData,
    tables: &ChargeTables,
    n_laps_max: Option<usize>,
    t_charges: Option<Vec<f64>>,
    opts: SweepOptions,
) -> Result<StintMap> {
    let (n_max, mut samples) = match n_laps_max {
        Some(n) if n >= 1 => (n, Vec::new()),
        Some(_) => return Err(Error::Argument("lap count limit must be positive".into())),
        None => find_max_laps(model, track, tables)?,
    };
    let laps: Vec<usize> = (1..=n_max + 2).collect();
    let charges = t_charges.unwrap_or_else(|| default_charge_grid(tables.t_charge_max));
    check_charges(tables, &charges)?;
    // cells solved during the walk are kept, everything else is swept
    samples.retain(|s| charges.iter().any(|t| t.to_bits() == s.t_charge.to_bits()));
    let mut merged: BTreeMap<(bool, usize, u64), StintSample> =
        samples.into_iter().map(|s| (s.key(), s)).collect();
    let pairs: Vec<(usize, f64)> = laps
        .iter()
        .flat_map(|&n| charges.iter().map(move |&t| (n, t)))
        .filter(|&(n, t)| !merged.contains_key(&(false, n, t.to_bits())))
        .collect();
    for s in sweep_pairs(model, track, tables, &pairs, opts)? {
        merged.insert(s.key(), s);
    }
    for s in sweep_final_stints(model, track, tables, &laps, opts)? {
        merged.insert(s.key(), s);
    }
    let mut samples: Vec<StintSample> = merged.into_values().collect();
    sort_samples(&mut samples);
    Ok(StintMap {
        samples,
        n_laps_max: n_max,
    })
}

fn sort_samples(s: &mut [StintSample]) {
    s.sort_by(|a, b| {
        a.is_final
            .cmp(&b.is_final)
            .then(a.n_laps.cmp(&b.n_laps))
            .then(a.t_charge.total_cmp(&b.t_charge))
    });
}

pub fn write_samples_csv(samples: &[StintSample], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<StintSample>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let s: StintSample = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        out.push(s);
    }
    Ok(out)
}

/// PSD stint-time surface `t_stint ≥ x_sᵀ Q_s x_s` over the valid regular
/// samples.
pub fn fit_stint_surface(samples: &[StintSample], opts: &FitOptions) -> Result<QuadFormFit> {
    let used: Vec<&StintSample> = samples
        .iter()
        .filter(|s| !s.is_final && s.valid && s.t_stint.is_finite() && s.t_charge > 0.0)
        .collect();
    let mut laps: Vec<usize> = used.iter().map(|s| s.n_laps).collect();
    laps.sort_unstable();
    laps.dedup();
    let mut charges: Vec<u64> = used.iter().map(|s| s.t_charge.to_bits()).collect();
    charges.sort_unstable();
    charges.dedup();
    if used.len() < 7 || laps.len() < 2 || charges.len() < 2 {
        return Err(Error::Argument(format!(
            "stint surface needs at least 7 valid samples over two lap counts and two charge \
             times, got {} samples, {} lap counts, {} charge times",
            used.len(),
            laps.len(),
            charges.len()
        )));
    }
    let fs: Vec<FitSample> = used
        .iter()
        .map(|s| FitSample::new(vec![s.t_charge, s.n_laps as f64], s.t_stint))
        .collect();
    fit_quadratic_form(&fs, FeatureMap::StintTime, Sign::Psd, opts)
}

/// Quadratic final-stint time over the valid final samples.
pub fn fit_final_surface(samples: &[StintSample]) -> Result<FinalStintFit> {
    let points: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.is_final && s.valid && s.t_stint.is_finite())
        .map(|s| (s.n_laps as f64, s.t_stint))
        .collect();
    fit_final_stint(&points)
}
