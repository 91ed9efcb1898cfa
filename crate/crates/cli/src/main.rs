use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use evcity_core::power_grid::{
    dispatch_with_ev, impact_metric, DispatchOptions, GridError, PowerFlowOptions, PowerSystem, QLimitMode,
};
use evcity_core::pricing_game::{provider_profit, solve_bertrand, MarketState};
use evcity_core::qos_sim::simulate_qos;
use evcity_core::scenario::{run_multistage, ReportWriter, Scenario, ScenarioConfig, ScenarioError, Summary};
use evcity_core::sites::{PlacementPolicy, PROVIDERS};

#[derive(Parser)]
#[command(name = "evcity", version, about = "Multi-stage EV charging-station planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Override the scenario's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Report directory for `plan`; output file for the other commands.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Opponent samples per evaluation (`plan`) or replications (`qos`).
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct StageArgs {
    scenario: PathBuf,
    /// 1-based stage whose population is used.
    #[arg(long, default_value_t = 1)]
    stage: usize,
    /// Comma-separated bit strings, one per provider; every allowed site by default.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<PlacementPolicy>>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage and write reports.
    Plan { scenario: PathBuf },
    /// Expected energy per station at given prices.
    Demand {
        #[command(flatten)]
        stage: StageArgs,
        /// Comma-separated retail prices for providers 1..3.
        #[arg(long, value_delimiter = ',', num_args = 1)]
        prices: Vec<f64>,
    },
    /// Bertrand equilibrium prices and profits.
    Equilibrium {
        #[command(flatten)]
        stage: StageArgs,
    },
    /// AC power flow of a bundled case or case file, optionally with EV load.
    PowerFlow {
        case: String,
        /// `BUS:MW` EV load entries.
        #[arg(long = "ev-load", value_delimiter = ',')]
        ev_load: Vec<String>,
        #[arg(long, value_enum, default_value_t = QLimits::Ignore)]
        q_limits: QLimits,
    },
    /// Delay probability and coverage at equilibrium prices.
    Qos {
        #[command(flatten)]
        stage: StageArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum QLimits {
    Ignore,
    Strict,
    Switch,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn config_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: 4,
        message: message.into(),
    }
}

fn solver_failure(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 3,
        message: e.to_string(),
    }
}

fn load_scenario(path: &Path, common: &Common) -> Result<Scenario, Failure> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = common.samples {
        cfg.game.samples = n;
        cfg.game.qos.replications = n;
    }
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    Ok(Scenario::from_config(cfg, base)?)
}

fn stage_policies(sc: &Scenario, args: &StageArgs) -> Result<[PlacementPolicy; PROVIDERS], Failure> {
    let l = sc.candidates.len();
    let Some(list) = &args.policies else {
        return Ok(std::array::from_fn(|k| {
            PlacementPolicy(sc.candidates.iter().map(|c| c.allows(k)).collect())
        }));
    };
    if list.len() != PROVIDERS || list.iter().any(|p| p.len() != l) {
        return Err(config_failure(format!(
            "--policies needs {PROVIDERS} bit strings of length {l}"
        )));
    }
    Ok(std::array::from_fn(|k| list[k].clone()))
}

fn stage_index(sc: &Scenario, args: &StageArgs) -> Result<usize, Failure> {
    if args.stage == 0 || args.stage > sc.stage_count() {
        return Err(config_failure(format!(
            "stage {} outside 1..={}",
            args.stage,
            sc.stage_count()
        )));
    }
    Ok(args.stage - 1)
}

fn emit(common: &Common, json: serde_json::Value, csv: String) -> Result<(), Failure> {
    let text = match common.format {
        Format::Json => serde_json::to_string_pretty(&json).expect("json value") + "\n",
        Format::Csv => csv,
    };
    match &common.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| config_failure(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn plan(scenario: &Path, common: &Common) -> Result<(), Failure> {
    let sc = load_scenario(scenario, common)?;
    let dir = common
        .out
        .clone()
        .or_else(|| sc.output_dir())
        .unwrap_or_else(|| PathBuf::from("reports"));
    let writer = ReportWriter::new(&dir)?;
    let reports = run_multistage(&sc, Some(&writer))?;
    let summary = Summary::new(&sc.config_hash, sc.config.seed, &reports, None);
    let mut csv = String::from("stage,ev_count,level1,level2,level3,cumulative\n");
    for s in &summary.stages {
        let [a, b, c] = s.station_counts;
        let _ = writeln!(csv, "{},{},{a},{b},{c},{}", s.stage, s.ev_count, s.cumulative_stations);
    }
    let text = match common.format {
        Format::Json => serde_json::to_string_pretty(&summary).expect("summary") + "\n",
        Format::Csv => csv,
    };
    print!("{text}");
    Ok(())
}

fn demand(args: &StageArgs, prices: &[f64], common: &Common) -> Result<(), Failure> {
    let sc = load_scenario(&args.scenario, common)?;
    let stage = stage_index(&sc, args)?;
    let policies = stage_policies(&sc, args)?;
    let prices: [f64; PROVIDERS] = prices
        .try_into()
        .map_err(|_| config_failure(format!("--prices needs {PROVIDERS} values")))?;
    let ctx = sc.choice_context(stage)?;
    let state = MarketState::new(&ctx, policies, sc.lmp.clone()).map_err(solver_failure)?;
    let forecast = state.demand(&prices).map_err(solver_failure)?;
    let mut rows = Vec::new();
    let mut csv = String::from("level,candidate,demand_kwh\n");
    for k in 0..PROVIDERS {
        for (&j, &d) in forecast.active[k].iter().zip(&forecast.demand_kwh[k]) {
            let id = sc.candidates[j].id;
            rows.push(json!({"level": k + 1, "candidate": id, "demand_kwh": d}));
            let _ = writeln!(csv, "{},{id},{d}", k + 1);
        }
    }
    let total: f64 = ctx.agents().iter().map(|a| a.demand_kwh).sum();
    emit(
        common,
        json!({"stage": stage + 1, "ev_count": ctx.agents().len(), "prices": prices,
               "population_kwh": total, "stations": rows}),
        csv,
    )
}

fn equilibrium(args: &StageArgs, common: &Common) -> Result<(), Failure> {
    let sc = load_scenario(&args.scenario, common)?;
    let stage = stage_index(&sc, args)?;
    let policies = stage_policies(&sc, args)?;
    let ctx = sc.choice_context(stage)?;
    let state = MarketState::new(&ctx, policies, sc.lmp.clone()).map_err(solver_failure)?;
    let sol = solve_bertrand(&state).map_err(solver_failure)?;
    let profits = provider_profit(&state, &sol.prices.dense(), &sc.game.costs).map_err(solver_failure)?;
    let mut csv = String::from("level,price,revenue,profit\n");
    let providers: Vec<_> = (0..PROVIDERS)
        .map(|k| {
            let price = sol.prices.0[k].map_or(String::new(), |p| p.to_string());
            let _ = writeln!(csv, "{},{price},{},{}", k + 1, profits[k].revenue, profits[k].profit);
            json!({"level": k + 1, "price": sol.prices.0[k], "revenue": profits[k].revenue,
                   "profit": profits[k].profit})
        })
        .collect();
    emit(
        common,
        json!({"stage": stage + 1, "iterations": sol.iterations, "residual": sol.residual,
               "providers": providers}),
        csv,
    )
}

fn parse_ev_load(entries: &[String]) -> Result<Vec<(u32, f64)>, Failure> {
    entries
        .iter()
        .map(|e| {
            let (bus, mw) = e
                .split_once(':')
                .ok_or_else(|| config_failure(format!("EV load `{e}` is not BUS:MW")))?;
            let bus = bus.trim().parse().map_err(|_| config_failure(format!("bad bus in `{e}`")))?;
            let mw = mw.trim().parse().map_err(|_| config_failure(format!("bad MW in `{e}`")))?;
            Ok((bus, mw))
        })
        .collect()
}

fn power_flow(case: &str, ev_load: &[String], q_limits: QLimits, common: &Common) -> Result<(), Failure> {
    let sys = match PowerSystem::bundled(case) {
        Some(s) => s,
        None => PowerSystem::load(Path::new(case)).map_err(|e| config_failure(e.to_string()))?,
    };
    let load = parse_ev_load(ev_load)?;
    let opts = DispatchOptions {
        flow: PowerFlowOptions {
            q_limits: match q_limits {
                QLimits::Ignore => QLimitMode::Ignore,
                QLimits::Strict => QLimitMode::Strict,
                QLimits::Switch => QLimitMode::Switch,
            },
            ..Default::default()
        },
        ..Default::default()
    };
    let (base, ev) = dispatch_with_ev(&sys, &load, &opts).map_err(|e| match e {
        GridError::InvalidEvLoad(_) | GridError::UnknownBus(_) | GridError::InvalidCase(_) => {
            config_failure(e.to_string())
        }
        other => solver_failure(other),
    })?;
    let b = impact_metric(&base, &ev).map_err(solver_failure)?;
    let mut csv = String::from("bus,vm,va_deg\n");
    let buses: Vec<_> = ev
        .bus_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let deg = ev.va[i].to_degrees();
            let _ = writeln!(csv, "{id},{},{deg}", ev.vm[i]);
            json!({"bus": id, "vm": ev.vm[i], "va_deg": deg})
        })
        .collect();
    let generators: Vec<_> = sys
        .generators()
        .iter()
        .enumerate()
        .map(|(g, gen)| json!({"bus": gen.bus, "p_mw": ev.gen_p_mw[g], "q_mvar": ev.gen_q_mvar[g]}))
        .collect();
    emit(
        common,
        json!({"case": sys.name(), "iterations": ev.iterations, "residual": ev.residual,
               "q_limit_violations": ev.q_limit_violations, "buses": buses,
               "generators": generators, "impact": b.b}),
        csv,
    )
}

fn qos(args: &StageArgs, common: &Common) -> Result<(), Failure> {
    let sc = load_scenario(&args.scenario, common)?;
    let stage = stage_index(&sc, args)?;
    let policies = stage_policies(&sc, args)?;
    let ctx = sc.choice_context(stage)?;
    let state = MarketState::new(&ctx, policies.clone(), sc.lmp.clone()).map_err(solver_failure)?;
    let prices = solve_bertrand(&state).map_err(solver_failure)?.prices.dense();
    let game = sc.stage_game(stage);
    let est = simulate_qos(&ctx, &sc.network, &sc.distances, &sc.candidates, &policies, &prices, &game.qos)
        .map_err(ScenarioError::from)?;
    let mut csv = String::from("level,delay_probability,delay_se,coverage,coverage_se,attempts,delayed\n");
    let providers: Vec<_> = (0..PROVIDERS)
        .map(|k| {
            let q = est[k];
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                k + 1,
                q.delay_probability,
                q.delay_se,
                q.coverage,
                q.coverage_se,
                q.attempts,
                q.delayed
            );
            json!({"level": k + 1, "estimate": q})
        })
        .collect();
    emit(common, json!({"stage": stage + 1, "providers": providers}), csv)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let c = &cli.common;
    let result = match &cli.command {
        Command::Plan { scenario } => plan(scenario, c),
        Command::Demand { stage, prices } => demand(stage, prices, c),
        Command::Equilibrium { stage } => equilibrium(stage, c),
        Command::PowerFlow {
            case,
            ev_load,
            q_limits,
        } => power_flow(case, ev_load, *q_limits, c),
        Command::Qos { stage } => qos(stage, c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
