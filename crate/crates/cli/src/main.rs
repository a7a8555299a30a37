mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use inferability::bounds::{
    bound_maxent_from, bound_rational_chernoff_from, bound_rational_from, BoundReport,
};
use inferability::experiments::{
    car_pedestrian_csv, car_pedestrian_experiment, converse_csv, converse_table,
    random_games_experiment, tug_default_grid, tug_of_war_csv, tug_of_war_table,
    CarPedestrianConfig, RandomGamesConfig,
};
use inferability::followers::stackelberg_return;
use inferability::inference::Diagnostics;
use inferability::optimize::{
    full_info_optimal_classifier, full_info_optimal_rational, optimize_regularized, GradConfig,
    Start,
};
use inferability::parametric::TugOfWarGame;
use inferability::simulate::{average_return_curve, run_repeated, SimConfig, SimResult};
use inferability::{BimatrixGame, FollowerModel, MixedStrategy, TieBreak};
use svg::{line_plot, Series};

#[derive(Parser)]
#[command(
    name = "inferability",
    version,
    about = "Stackelberg games with followers that infer the leader's strategy"
)]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full-information optimum and diagnostics of a game.
    Solve(SolveArgs),
    /// Simulate repeated play and write the per-interaction return curve.
    Simulate(SimulateArgs),
    /// Run a preset experiment and write its CSV (and SVG) files.
    Experiment(ExperimentArgs),
    /// Upper bounds on the inferability gap of a strategy.
    Bounds(BoundsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Rational,
    Maxent,
    Classifier,
}

#[derive(Clone, Copy, ValueEnum)]
enum TieBreakArg {
    Worst,
    Favor,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "rational")]
    model: ModelKind,
    /// Rationality of the max-entropy follower.
    #[arg(long, default_value_t = 100.0)]
    lambda: f64,
    #[arg(long, value_enum, default_value = "worst")]
    tiebreak: TieBreakArg,
    /// JSON list of type strategies for the classifier follower.
    #[arg(long)]
    types: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    /// Game file: {"A": [[..]], "B": [[..]]}.
    #[arg(long)]
    game: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Stochasticity penalty for the max-entropy optimizer.
    #[arg(long, default_value_t = 0.0)]
    c: f64,
    /// Also report diagnostics of this strategy (file or comma-separated list).
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    game: PathBuf,
    /// Leader strategy: JSON file or comma-separated probabilities.
    #[arg(long)]
    strategy: String,
    #[command(flatten)]
    model: ModelArgs,
    /// Interactions per trial.
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write an SVG plot of the average-return curve here.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Preset {
    CarPed,
    Tugofwar,
    RandomGames,
    Converse,
    Custom,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, value_enum)]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Write SVG plots next to the CSV files.
    #[arg(long)]
    svg: bool,
    /// Use the published sample sizes instead of the scaled-down defaults.
    #[arg(long)]
    full_scale: bool,
    /// Interactions (or the largest k of a table).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// Number of random games.
    #[arg(long)]
    games: Option<usize>,
    /// Rationality override.
    #[arg(long)]
    lambda: Option<f64>,
    /// Regularization weights (comma-separated) for the random-games sweep.
    #[arg(long, value_delimiter = ',')]
    c: Option<Vec<f64>>,
    /// Strategy offset of the converse example.
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Custom preset: game file.
    #[arg(long)]
    game: Option<PathBuf>,
    /// Custom preset: leader strategy.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long, value_enum, default_value = "maxent")]
    model: ModelKind,
    #[arg(long, value_enum, default_value = "worst")]
    tiebreak: TieBreakArg,
    #[arg(long)]
    types: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    game: PathBuf,
    #[arg(long)]
    strategy: String,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Use the concentrability variant of the rational bound.
    #[arg(long)]
    chernoff: bool,
}

fn exit_code(error: &anyhow::Error) -> u8 {
    for cause in error.chain() {
        if let Some(e) = cause.downcast_ref::<inferability::Error>() {
            return if e.is_input_error() { 1 } else { 2 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Solve(args) => solve(&args),
        Command::Simulate(args) => simulate(&args),
        Command::Experiment(args) => experiment(&args),
        Command::Bounds(args) => bounds(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::from(exit_code(&error))
        }
    }
}

fn read_game(path: &Path) -> anyhow::Result<BimatrixGame> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    BimatrixGame::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

/// A strategy given inline as `0.9,0.1` or as a JSON file.
fn read_strategy(arg: &str) -> anyhow::Result<MixedStrategy> {
    let inline: Option<Vec<f64>> = arg.split(',').map(|s| s.trim().parse().ok()).collect();
    match inline {
        Some(probs) => Ok(MixedStrategy::new(probs)?),
        None => {
            let text = fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?;
            Ok(MixedStrategy::from_json(&text).with_context(|| format!("parsing {arg}"))?)
        }
    }
}

fn tiebreak(arg: TieBreakArg) -> TieBreak {
    match arg {
        TieBreakArg::Worst => TieBreak::WorstCase,
        TieBreakArg::Favor => TieBreak::FavorLeader,
    }
}

fn read_types(path: &Option<PathBuf>) -> anyhow::Result<Vec<MixedStrategy>> {
    let path = path
        .as_ref()
        .ok_or_else(|| anyhow!("the classifier model needs --types"))?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rows: Vec<Vec<f64>> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    rows.into_iter()
        .map(|p| MixedStrategy::new(p).map_err(Into::into))
        .collect()
}

fn build_model(
    kind: ModelKind,
    lambda: f64,
    tie: TieBreakArg,
    types: &Option<PathBuf>,
) -> anyhow::Result<FollowerModel> {
    Ok(match kind {
        ModelKind::Rational => FollowerModel::rational(tiebreak(tie)),
        ModelKind::Maxent => FollowerModel::maxent(lambda)?,
        ModelKind::Classifier => FollowerModel::classifier(read_types(types)?, tiebreak(tie))?,
    })
}

fn model_from(args: &ModelArgs) -> anyhow::Result<FollowerModel> {
    build_model(args.model, args.lambda, args.tiebreak, &args.types)
}

fn check_size(game: &BimatrixGame, x: &MixedStrategy) -> anyhow::Result<()> {
    if x.len() != game.leader_actions() {
        return Err(inferability::Error::DimensionMismatch {
            expected: game.leader_actions(),
            actual: x.len(),
        }
        .into());
    }
    Ok(())
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|p| format!("{p:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn print_diagnostics(d: &Diagnostics) {
    println!("nu: {:.6}", d.stochasticity);
    println!("phi: {:.6}", d.concentrability);
    match d.boundary_distance {
        Some(v) => println!("d: {v:.6}"),
        None => println!("d: n/a"),
    }
}

fn solve(args: &SolveArgs) -> anyhow::Result<()> {
    let game = read_game(&args.game)?;
    let model = model_from(&args.model)?;
    if !game.is_normalized() {
        log::warn!("utilities do not have unit range; gap bounds assume they do");
    }
    let (x, value) = match &model {
        FollowerModel::Rational { .. } => {
            let sol = full_info_optimal_rational(&game)?;
            println!("follower action: {}", sol.follower_action);
            (sol.x, sol.value)
        }
        FollowerModel::Classifier { types, tiebreak } => {
            let sol = full_info_optimal_classifier(&game, types, *tiebreak)?;
            println!("follower action: {}", sol.follower_action);
            (sol.x, sol.value)
        }
        FollowerModel::MaxEnt { lambda } | FollowerModel::MyopicMaxEnt { lambda } => {
            let config = GradConfig {
                c: args.c,
                ..GradConfig::default()
            };
            let sol = optimize_regularized(&game, *lambda, &config, &Start::FromLp)?;
            if !sol.converged {
                log::warn!(
                    "gradient ascent stopped after {} steps without converging",
                    sol.iterations
                );
            }
            let sr = stackelberg_return(&game, &sol.x, &model);
            (sol.x, sr)
        }
    };
    println!("SR: {value:.6}");
    println!("x: {}", fmt_vec(x.probs()));
    print_diagnostics(&Diagnostics::compute(&game, &x, &model)?);
    if let Some(s) = &args.strategy {
        let given = read_strategy(s)?;
        check_size(&game, &given)?;
        println!("given x: {}", fmt_vec(given.probs()));
        println!("given SR: {:.6}", stackelberg_return(&game, &given, &model));
        print_diagnostics(&Diagnostics::compute(&game, &given, &model)?);
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn curve_plot(title: &str, curves: Vec<(String, Vec<f64>)>) -> String {
    let series: Vec<Series> = curves
        .into_iter()
        .map(|(label, ys)| Series {
            label,
            points: ys
                .iter()
                .enumerate()
                .map(|(i, &y)| ((i + 2) as f64, y))
                .collect(),
        })
        .collect();
    line_plot(title, "interaction k", "average return", &series)
}

fn run_custom(
    game: &BimatrixGame,
    x: &MixedStrategy,
    model: &FollowerModel,
    k: usize,
    trials: usize,
    seed: u64,
) -> anyhow::Result<SimResult> {
    check_size(game, x)?;
    Ok(run_repeated(
        game,
        x,
        model,
        &SimConfig::new(k, trials, seed),
    )?)
}

fn simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    let game = read_game(&args.game)?;
    let x = read_strategy(&args.strategy)?;
    let model = model_from(&args.model)?;
    let result = run_custom(&game, &x, &model, args.k, args.trials, args.seed)?;
    let csv = result.to_csv();
    match &args.out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(path) = &args.svg {
        let plot = curve_plot(
            "average return",
            vec![("x".into(), average_return_curve(&result))],
        );
        write_file(path, &plot)?;
    }
    Ok(())
}

fn experiment(args: &ExperimentArgs) -> anyhow::Result<()> {
    let out = &args.out;
    match args.preset {
        Preset::CarPed => {
            let mut config = CarPedestrianConfig {
                seed: args.seed,
                ..CarPedestrianConfig::default()
            };
            if let Some(l) = args.lambda {
                config.lambdas = vec![l];
            }
            if let Some(k) = args.k {
                config.interactions = k;
            }
            if let Some(t) = args.trials {
                config.trials = t;
            }
            let curves = car_pedestrian_experiment(&config)?;
            write_file(&out.join("car_ped.csv"), &car_pedestrian_csv(&curves))?;
            if args.svg {
                for &lambda in &config.lambdas {
                    let series = curves
                        .iter()
                        .filter(|c| c.lambda == lambda)
                        .map(|c| (format!("p = {}", c.stop_prob), c.average.clone()))
                        .collect();
                    let plot =
                        curve_plot(&format!("car and pedestrian, lambda = {lambda}"), series);
                    write_file(&out.join(format!("car_ped_lambda{lambda}.svg")), &plot)?;
                }
            }
        }
        Preset::Tugofwar => {
            let game = TugOfWarGame::standard();
            let grid = tug_default_grid();
            let k_max = args.k.unwrap_or(10) as u64;
            let rows = tug_of_war_table(&game, &grid, k_max)?;
            write_file(&out.join("tugofwar.csv"), &tug_of_war_csv(&rows))?;
            if args.svg {
                let mut keys: Vec<Option<u64>> = (1..=k_max).map(Some).collect();
                keys.push(None);
                let series: Vec<Series> = keys
                    .iter()
                    .map(|&k| Series {
                        label: k.map_or_else(|| "SR".to_string(), |k| format!("k = {k}")),
                        points: rows
                            .iter()
                            .filter(|r| r.k == k)
                            .map(|r| (r.sd, r.ir))
                            .collect(),
                    })
                    .collect();
                let plot = line_plot("tug of war", "leader spread s", "expected return", &series);
                write_file(&out.join("tugofwar.svg"), &plot)?;
            }
        }
        Preset::RandomGames => {
            let mut config = if args.full_scale {
                RandomGamesConfig::full_scale()
            } else {
                RandomGamesConfig::default()
            };
            config.seed = args.seed;
            if let Some(g) = args.games {
                config.games = g;
            }
            if let Some(k) = args.k {
                config.interactions = k;
            }
            if let Some(t) = args.trials {
                config.trials = t;
            }
            if let Some(l) = args.lambda {
                config.lambda = l;
            }
            if let Some(c) = &args.c {
                config.cs = c.clone();
            }
            let result = random_games_experiment(&config)?;
            write_file(&out.join("random_games.csv"), &result.to_csv())?;
            for (i, c) in config.cs.iter().enumerate() {
                log::info!("c = {c}: mean nu = {:.4}", result.mean_stochasticity(i));
            }
            if args.svg {
                let series = config
                    .cs
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (format!("c = {c}"), result.mean_average_curve(i)))
                    .collect();
                write_file(
                    &out.join("random_games.svg"),
                    &curve_plot("random games", series),
                )?;
            }
        }
        Preset::Converse => {
            let rows = converse_table(args.epsilon, args.k)?;
            write_file(&out.join("converse.csv"), &converse_csv(&rows))?;
            if args.svg {
                let series = vec![Series {
                    label: format!("epsilon = {}", args.epsilon),
                    points: rows.iter().map(|r| (r.k as f64, r.gap)).collect(),
                }];
                let plot = line_plot("converse example", "interaction k", "SR - IR", &series);
                write_file(&out.join("converse.svg"), &plot)?;
            }
        }
        Preset::Custom => {
            let path = args
                .game
                .as_ref()
                .ok_or_else(|| anyhow!("the custom preset needs --game"))?;
            let game = read_game(path)?;
            let strategy = args
                .strategy
                .as_ref()
                .ok_or_else(|| anyhow!("the custom preset needs --strategy"))?;
            let x = read_strategy(strategy)?;
            let model = build_model(
                args.model,
                args.lambda.unwrap_or(100.0),
                args.tiebreak,
                &args.types,
            )?;
            let trials = args
                .trials
                .unwrap_or(if args.full_scale { 10_000 } else { 1000 });
            let result = run_custom(&game, &x, &model, args.k.unwrap_or(100), trials, args.seed)?;
            write_file(&out.join("custom.csv"), &result.to_csv())?;
            if args.svg {
                let plot = curve_plot(
                    "average return",
                    vec![("x".into(), average_return_curve(&result))],
                );
                write_file(&out.join("custom.svg"), &plot)?;
            }
        }
    }
    Ok(())
}

fn print_report(name: &str, report: &BoundReport) {
    println!("bound: {name}");
    for (key, value) in &report.inputs {
        println!("  {key} = {value:.6}");
    }
    println!("cumulative: {:.6}", report.cumulative);
    println!("k,bound");
    for (i, v) in report.per_k.iter().enumerate() {
        println!("{},{}", i + 2, v);
    }
}

fn bounds(args: &BoundsArgs) -> anyhow::Result<()> {
    let game = read_game(&args.game)?;
    let x = read_strategy(&args.strategy)?;
    check_size(&game, &x)?;
    let model = model_from(&args.model)?;
    let diag = Diagnostics::compute(&game, &x, &model)?;
    match &model {
        FollowerModel::MaxEnt { lambda } | FollowerModel::MyopicMaxEnt { lambda } => {
            print_report("maxent", &bound_maxent_from(&diag, *lambda, args.k)?);
        }
        FollowerModel::Rational { .. } | FollowerModel::Classifier { .. } => {
            if args.chernoff {
                print_report(
                    "rational-chernoff",
                    &bound_rational_chernoff_from(&diag, args.k)?,
                );
            } else {
                print_report("rational", &bound_rational_from(&diag, args.k)?);
            }
        }
    }
    Ok(())
}
