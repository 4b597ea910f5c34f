mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pitlane_core::charge::{build_charge_tables, ChargeTables, DEFAULT_DT};
use pitlane_core::fitting::{
    fit_component_models, read_battery_sheet, read_motor_map, read_power_pairs, ComponentData,
    FitOptions,
};
use pitlane_core::map::{
    build_map, fit_final_surface, fit_stint_surface, read_samples_csv, write_samples_csv,
    SweepOptions,
};
use pitlane_core::model::{build_stint_grid, load_track, FitBundle, StintSpec, TrackData, VehicleModel, VehicleParams};
use pitlane_core::race::{
    frontier_alignment, solve_race, solve_race_extending, stint_frontier, write_frontier_csv,
    Formulation, RaceMode, RaceOptions, RaceProblem,
};
use pitlane_core::stint::{solve_stint, StintSummary};
use pitlane_core::validate::{
    battery_limited_scenario, compare_trajectory, flat_out_baseline, read_trajectory_csv,
    thermally_dominated_stint, BatteryLimitedReport, Baseline,
};
use pitlane_core::{synthetic, Error, Result};

use manifest::Recorder;

#[derive(Parser)]
#[command(name = "pitlane", version, about = "Stint maps and race strategies for electric endurance racing")]
struct Cli {
    /// Seed for every randomised step (fit restarts).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Log solver warnings to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Vehicle parameters (TOML).
    #[arg(long, default_value = "data/vehicle.toml")]
    config: PathBuf,
    /// Fitted surrogates (JSON).
    #[arg(long, default_value = "fits.json")]
    fits: PathBuf,
}

#[derive(Args, Clone)]
struct TrackArgs {
    #[arg(long, default_value = "data/track.csv")]
    track: PathBuf,
    /// Grid spacing in metres.
    #[arg(long, default_value_t = 4.0)]
    ds: f64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the synthetic car, component data and circuits to a directory.
    WriteSynthetic {
        #[arg(short, long, default_value = "data")]
        out: PathBuf,
    },
    /// Fit the convex component surrogates.
    FitModels {
        #[arg(long)]
        motor_map: PathBuf,
        /// Battery sheet (energy_j, voltage_v, resistance_ohm); defaults to the config curves.
        #[arg(long)]
        battery: Option<PathBuf>,
        /// Inverter samples (p_ac_w, p_dc_w).
        #[arg(long)]
        inverter: Option<PathBuf>,
        /// Charge-loss samples (p_b_w, p_i_w).
        #[arg(long)]
        charge_loss: Option<PathBuf>,
        #[arg(long, default_value = "data/vehicle.toml")]
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Tabulate recharged energy and boundary temperatures against charge time.
    ChargeTables {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = DEFAULT_DT)]
        dt: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Solve one minimum-time stint and write its trajectories.
    SolveStint {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        track: TrackArgs,
        #[arg(long)]
        tables: Option<PathBuf>,
        #[arg(long)]
        laps: usize,
        /// Charge time after the stint, seconds.
        #[arg(long, required_unless_present = "is_final")]
        charge: Option<f64>,
        /// Last stint of the race: no charge follows.
        #[arg(long = "final")]
        is_final: bool,
        #[arg(short, long)]
        output: PathBuf,
        /// Summary JSON; defaults to the output path with a .json extension.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Sweep stint times over lap counts and charge times.
    BuildMap {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        track: TrackArgs,
        #[arg(long)]
        tables: Option<PathBuf>,
        /// Comma-separated charge times; defaults to a log-spaced grid.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Largest lap count of a valid stint; found by search when omitted.
        #[arg(long)]
        max_laps: Option<usize>,
        /// Worker threads, 0 for all cores.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Fit the stint-time surface and the final-stint curve to a map.
    FitMap {
        #[arg(long)]
        map: PathBuf,
        /// Bundle to extend.
        #[arg(long, default_value = "fits.json")]
        fits: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Plan the stints and charges of a race.
    SolveRace {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        track: TrackArgs,
        #[arg(long)]
        tables: Option<PathBuf>,
        #[arg(long, default_value = "map.csv")]
        map: PathBuf,
        #[arg(long)]
        race_hours: f64,
        /// Force exactly this many stops.
        #[arg(long)]
        fixed_stops: Option<usize>,
        /// Candidate stops; defaults to a bound from the shortest stint.
        #[arg(long)]
        horizon: Option<usize>,
        /// How often to double a saturated horizon.
        #[arg(long, default_value_t = 2)]
        extend: usize,
        /// Return the continuous relaxation.
        #[arg(long)]
        relaxed: bool,
        #[arg(long, value_enum, default_value_t = FormulationArg::Perspective)]
        formulation: FormulationArg,
        #[arg(short, long)]
        output: PathBuf,
        /// Cumulative laps against time.
        #[arg(long)]
        cumulative: Option<PathBuf>,
        /// Average stint velocity against lap count.
        #[arg(long)]
        frontier: Option<PathBuf>,
    },
    /// Replay a stint's inputs through the un-relaxed models.
    Simulate {
        #[arg(long)]
        stint: PathBuf,
        /// Stint summary; defaults to the stint path with a .json extension.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        track: TrackArgs,
        #[arg(short, long)]
        output: PathBuf,
        /// Per-node convex against simulated states.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Run a named check and report it.
    Validate {
        #[arg(long, value_enum)]
        scenario: Scenario,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        track: TrackArgs,
        #[arg(long)]
        tables: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        laps: usize,
        /// Charge time; defaults to the longest charge.
        #[arg(long)]
        charge: Option<f64>,
        /// Divisor applied to battery cooling.
        #[arg(long, default_value_t = 5.0)]
        factor: f64,
        #[arg(long, default_value_t = 2.0)]
        race_hours: f64,
        /// Strategy JSON to compare the baseline against.
        #[arg(long)]
        strategy: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormulationArg {
    Perspective,
    BigM,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Tightness,
    BatteryLimited,
    Baseline,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

fn fail(kind: &str, message: String) {
    let r = ErrorReport {
        error: kind,
        message,
    };
    eprintln!("{}", serde_json::to_string(&r).unwrap_or_default());
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            fail("usage", e.to_string().trim().to_string());
            return ExitCode::from(2);
        }
    };
    let level = if cli.verbose { "warn" } else { "error" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            fail(e.kind(), e.to_string());
            ExitCode::FAILURE
        }
    }
}

fn load_model(m: &ModelArgs, rec: &mut Recorder) -> Result<VehicleModel> {
    rec.input(&m.config);
    rec.input(&m.fits);
    VehicleModel::new(VehicleParams::load(&m.config)?, FitBundle::load(&m.fits)?)
}

fn load_tables(path: Option<&PathBuf>, model: &VehicleModel, rec: &mut Recorder) -> Result<ChargeTables> {
    match path {
        Some(p) => {
            rec.input(p);
            ChargeTables::load(p)
        }
        None => build_charge_tables(&model.params, model.fits.alpha_ch, DEFAULT_DT),
    }
}

fn load_track_args(t: &TrackArgs, rec: &mut Recorder) -> Result<TrackData> {
    rec.input(&t.track);
    load_track(&t.track, t.ds)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn sibling_json(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn command_name(cmd: &Cmd) -> &'static str {
    match cmd {
        Cmd::WriteSynthetic { .. } => "write-synthetic",
        Cmd::FitModels { .. } => "fit-models",
        Cmd::ChargeTables { .. } => "charge-tables",
        Cmd::SolveStint { .. } => "solve-stint",
        Cmd::BuildMap { .. } => "build-map",
        Cmd::FitMap { .. } => "fit-map",
        Cmd::SolveRace { .. } => "solve-race",
        Cmd::Simulate { .. } => "simulate",
        Cmd::Validate { .. } => "validate",
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut rec = Recorder::new(command_name(&cli.cmd), cli.seed);
    let fit_opts = FitOptions {
        seed: cli.seed,
        ..FitOptions::default()
    };
    match cli.cmd {
        Cmd::WriteSynthetic { out } => {
            std::fs::create_dir_all(&out)?;
            for p in write_synthetic(&out)? {
                rec.output(&p);
            }
        }
        Cmd::FitModels {
            motor_map,
            battery,
            inverter,
            charge_loss,
            config,
            output,
        } => {
            rec.input(&config);
            rec.input(&motor_map);
            rec.input_opt(battery.as_ref());
            rec.input_opt(inverter.as_ref());
            rec.input_opt(charge_loss.as_ref());
            let params = VehicleParams::load(&config)?;
            let data = ComponentData {
                motor_map: read_motor_map(&motor_map)?,
                battery_sheet: battery.as_deref().map(read_battery_sheet).transpose()?,
                inverter: inverter
                    .as_deref()
                    .map(|p| read_power_pairs(p, "p_ac_w", "p_dc_w"))
                    .transpose()?,
                charge_loss: charge_loss
                    .as_deref()
                    .map(|p| read_power_pairs(p, "p_b_w", "p_i_w"))
                    .transpose()?,
            };
            let fits = fit_component_models(&params, &data, &fit_opts)?;
            fits.save(&output)?;
            rec.output(&output);
        }
        Cmd::ChargeTables { model, dt, output } => {
            let m = load_model(&model, &mut rec)?;
            build_charge_tables(&m.params, m.fits.alpha_ch, dt)?.save(&output)?;
            rec.output(&output);
        }
        Cmd::SolveStint {
            model,
            track,
            tables,
            laps,
            charge,
            is_final,
            output,
            summary,
        } => {
            let m = load_model(&model, &mut rec)?;
            let tab = load_tables(tables.as_ref(), &m, &mut rec)?;
            let trk = load_track_args(&track, &mut rec)?;
            let spec = if is_final {
                StintSpec::final_stint(laps, &m.params, &tab)?
            } else {
                let t = charge.ok_or_else(|| Error::Argument("--charge is required".into()))?;
                StintSpec::regular(laps, t, &m.params, &tab)?
            };
            let sol = solve_stint(&spec, &trk, &m)?;
            sol.traj.write_csv(&output)?;
            let summary = summary.unwrap_or_else(|| sibling_json(&output));
            sol.write_summary(&summary)?;
            rec.output(&output);
            rec.output(&summary);
            if !sol.trusted {
                rec.finish()?;
                return Err(Error::Solver {
                    status: sol.status,
                    context: format!("stint of {laps} laps"),
                });
            }
        }
        Cmd::BuildMap {
            model,
            track,
            tables,
            grid,
            max_laps,
            jobs,
            output,
        } => {
            let m = load_model(&model, &mut rec)?;
            let tab = load_tables(tables.as_ref(), &m, &mut rec)?;
            let trk = load_track_args(&track, &mut rec)?;
            let map = build_map(&m, &trk, &tab, max_laps, grid, SweepOptions { jobs })?;
            write_samples_csv(&map.samples, &output)?;
            rec.output(&output);
        }
        Cmd::FitMap { map, fits, output } => {
            rec.input(&map);
            rec.input(&fits);
            let samples = read_samples_csv(&map)?;
            let mut bundle = FitBundle::load(&fits)?;
            bundle.q_s = Some(fit_stint_surface(&samples, &fit_opts)?);
            bundle.d_s_f = Some(fit_final_surface(&samples)?);
            bundle.validate()?;
            bundle.save(&output)?;
            rec.output(&output);
        }
        Cmd::SolveRace {
            model,
            track,
            tables,
            map,
            race_hours,
            fixed_stops,
            horizon,
            extend,
            relaxed,
            formulation,
            output,
            cumulative,
            frontier,
        } => {
            if !(race_hours > 0.0 && race_hours.is_finite()) {
                return Err(Error::Argument(format!("race duration must be positive, got {race_hours} h")));
            }
            let m = load_model(&model, &mut rec)?;
            let tab = load_tables(tables.as_ref(), &m, &mut rec)?;
            let trk = load_track_args(&track, &mut rec)?;
            rec.input(&map);
            let samples = read_samples_csv(&map)?;
            let p = RaceProblem::from_map(
                race_hours * 3600.0,
                trk.lap_length,
                tab.t_charge_max,
                &samples,
                &m.fits,
                horizon,
            )?;
            let opts = RaceOptions {
                relaxed,
                formulation: match formulation {
                    FormulationArg::Perspective => Formulation::Perspective,
                    FormulationArg::BigM => Formulation::BigM,
                },
                ..RaceOptions::default()
            };
            let s = match fixed_stops {
                Some(n) => solve_race(&p, RaceMode::FixedStops(n), &opts)?,
                None => solve_race_extending(&p, &opts, extend)?,
            };
            s.save(&output)?;
            rec.output(&output);
            if let Some(c) = cumulative {
                s.write_cumulative_csv(&c)?;
                rec.output(&c);
            }
            if let Some(f) = frontier {
                write_frontier_csv(&stint_frontier(&p), &f)?;
                rec.output(&f);
                let align = sibling_json(&f.with_file_name(format!(
                    "{}_alignment",
                    f.file_stem().and_then(|x| x.to_str()).unwrap_or("frontier")
                )));
                write_json(&frontier_alignment(&p, &s), &align)?;
                rec.output(&align);
            }
        }
        Cmd::Simulate {
            stint,
            summary,
            model,
            track,
            output,
            compare,
        } => {
            let m = load_model(&model, &mut rec)?;
            let trk = load_track_args(&track, &mut rec)?;
            let summary = summary.unwrap_or_else(|| sibling_json(&stint));
            rec.input(&stint);
            rec.input(&summary);
            let sm: StintSummary = serde_json::from_str(&std::fs::read_to_string(&summary)?)?;
            let traj = read_trajectory_csv(&stint)?;
            let grid = build_stint_grid(&trk, sm.n_laps)?;
            let charged = sm.e_b_start - sm.e_b_terminal_bound;
            let cmp = compare_trajectory(&traj, &grid, &m, charged)?;
            cmp.report.save(&output)?;
            rec.output(&output);
            if let Some(c) = compare {
                cmp.write_csv(&c)?;
                rec.output(&c);
            }
        }
        Cmd::Validate {
            scenario,
            model,
            track,
            tables,
            laps,
            charge,
            factor,
            race_hours,
            strategy,
            output,
        } => {
            let m = load_model(&model, &mut rec)?;
            let tab = load_tables(tables.as_ref(), &m, &mut rec)?;
            let trk = load_track_args(&track, &mut rec)?;
            let t_c = charge.unwrap_or(tab.t_charge_max);
            let verdict = match scenario {
                Scenario::Tightness => {
                    let r = tightness_scenario(&m, &trk, &tab, laps, t_c, factor)?;
                    write_json(&r, &output)?;
                    r.verdict()
                }
                Scenario::BatteryLimited => {
                    let r = battery_limited_scenario(&m, &trk, laps, t_c, factor)?;
                    write_json(&r, &output)?;
                    battery_verdict(&r)
                }
                Scenario::Baseline => {
                    let b = flat_out_baseline(&trk, &m, &tab, race_hours * 3600.0)?;
                    let optimal = strategy
                        .as_ref()
                        .map(|p| -> Result<f64> {
                            rec.input(p);
                            let v: serde_json::Value =
                                serde_json::from_str(&std::fs::read_to_string(p)?)?;
                            v["total_laps"].as_f64().ok_or_else(|| {
                                Error::Validation(format!("{} has no total_laps", p.display()))
                            })
                        })
                        .transpose()?;
                    let r = BaselineReport {
                        dominated: optimal.map(|o| b.total_laps < o),
                        optimal_laps: optimal,
                        baseline: b,
                    };
                    write_json(&r, &output)?;
                    match r.dominated {
                        Some(false) => Err(format!(
                            "baseline reaches {:.3} laps, not below {:.3}",
                            r.baseline.total_laps,
                            r.optimal_laps.unwrap_or(f64::NAN)
                        )),
                        _ => Ok(()),
                    }
                }
            };
            rec.output(&output);
            rec.finish()?;
            return verdict.map_err(Error::Validation);
        }
    }
    rec.finish()
}

#[derive(Serialize)]
struct ThermalCheck {
    factor: f64,
    trusted: bool,
    flagged_invalid: bool,
    tightness: Option<pitlane_core::stint::Tightness>,
}

#[derive(Serialize)]
struct TightnessReport {
    stint: StintSummary,
    valid: bool,
    thermally_dominated: ThermalCheck,
}

impl TightnessReport {
    fn verdict(&self) -> std::result::Result<(), String> {
        if !self.valid {
            return Err("energy-limited stint has a loose relaxation".into());
        }
        if !self.thermally_dominated.flagged_invalid {
            return Err("thermally dominated stint was not flagged".into());
        }
        Ok(())
    }
}

fn tightness_scenario(
    m: &VehicleModel,
    trk: &TrackData,
    tab: &ChargeTables,
    laps: usize,
    t_c: f64,
    factor: f64,
) -> Result<TightnessReport> {
    let spec = StintSpec::regular(laps, t_c, &m.params, tab)?;
    let sol = solve_stint(&spec, trk, m)?;
    let hot = thermally_dominated_stint(m, trk, tab, laps, factor)?;
    Ok(TightnessReport {
        stint: sol.summary(),
        valid: sol.is_valid(),
        thermally_dominated: ThermalCheck {
            factor,
            trusted: hot.trusted,
            flagged_invalid: hot.trusted && !hot.is_valid(),
            tightness: hot.tightness,
        },
    })
}

fn battery_verdict(r: &BatteryLimitedReport) -> std::result::Result<(), String> {
    if !r.terminal_active {
        return Err(format!("terminal battery temperature not active (slack {:.3e} K)", r.terminal_slack));
    }
    if !r.gradually_decreasing {
        return Err(format!("battery temperature rises by {:.3} K", r.max_rise));
    }
    Ok(())
}

#[derive(Serialize)]
struct BaselineReport {
    baseline: Baseline,
    optimal_laps: Option<f64>,
    dominated: Option<bool>,
}

fn write_synthetic(dir: &Path) -> Result<Vec<PathBuf>> {
    let p = synthetic::vehicle_params();
    let mut out = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, text)?;
        out.push(path);
        Ok(())
    };
    put("vehicle.toml", p.to_toml_string()?)?;
    put("track.csv", synthetic::race_track_csv())?;
    put("oval.csv", synthetic::reference_oval_csv())?;

    let mut w = csv::Writer::from_writer(Vec::new());
    for r in synthetic::motor_map(&p) {
        w.serialize(r)?;
    }
    put("motor_map.csv", csv_text(w)?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in synthetic::battery_sheet(&p) {
        w.serialize(r)?;
    }
    put("battery.csv", csv_text(w)?)?;
    put("inverter.csv", pairs_csv(("p_ac_w", "p_dc_w"), &synthetic::inverter_samples(&p)))?;
    put("charge_loss.csv", pairs_csv(("p_b_w", "p_i_w"), &synthetic::charge_loss_samples(&p)))?;
    Ok(out)
}

fn csv_text(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

fn pairs_csv(header: (&str, &str), rows: &[(f64, f64)]) -> String {
    let mut s = format!("{},{}\n", header.0, header.1);
    for (a, b) in rows {
        s.push_str(&format!("{a:?},{b:?}\n"));
    }
    s
}
