use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mctou::dynamics::{FactorSimulator, FuturesTable, WealthIncrements};
use mctou::experiments::{
    correlation_overrides, martingale_check, run_ce_grid, run_figure_data, verify_mc_utility,
    FigureConfig, DEFAULT_SEED,
};
use mctou::io::{fmt_f64, write_atomic};
use mctou::strategy::strategy_on_grid;
use mctou::term_structure::{DAYS_PER_MONTH, TRADING_DAYS};
use mctou::{
    build_model, certainty_equivalent, curve, ContractSpec, Dataset, FactorState, Figure,
    MctouError, Measure, ModelMatrices, ModelParams, ParamsDocument, PortfolioSpec, SimulationGrid,
};
use nalgebra::{DVector, Vector3};
use serde_json::{json, Value};

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_USAGE: u8 = 64;

const ONE_MONTH: f64 = DAYS_PER_MONTH as f64 / TRADING_DAYS;

#[derive(Parser, Debug)]
#[command(
    name = "mctou",
    version,
    about = "Multiscale central tendency OU futures model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a parameter file.
    Validate(CommonArgs),
    /// Loadings, intercepts and prices of a futures curve.
    Curve(PriceArgs),
    /// Futures prices only.
    Price(PriceArgs),
    /// Optimal positions on the daily grid.
    Strategy(PortfolioArgs),
    /// Certainty equivalent at t = 0.
    Ce(PortfolioArgs),
    /// Certainty-equivalent grid over the published correlation overrides.
    CeTable(CeTableArgs),
    /// Simulate factor, futures, position and wealth paths.
    Simulate(SimulateArgs),
    /// Monte Carlo check of the value function and the martingale property.
    VerifyMc(VerifyArgs),
    /// Plot-ready figure datasets.
    Figures(FigureArgs),
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// Parameter file (JSON). Defaults to the built-in published parameter set.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Output directory. Without it, results go to stdout and no manifest is written.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug, Clone)]
struct PriceArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated maturities: T1, T2, T3 or year fractions.
    #[arg(long, default_value = "T1,T2,T3")]
    contracts: String,
    /// Valuation time in years.
    #[arg(long, default_value_t = 0.0)]
    t: f64,
    /// Factor state `x1,x2,x3`; defaults to `x0` from the parameter file.
    #[arg(long)]
    x: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct PortfolioArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value = "T1,T2,T3")]
    contracts: String,
    /// Risk aversion.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Trading horizon in years; defaults to one month, capped at the first maturity.
    #[arg(long)]
    horizon: Option<f64>,
    /// Initial wealth.
    #[arg(long, default_value_t = 0.0)]
    w0: f64,
}

#[derive(Args, Debug, Clone)]
struct CeTableArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = ONE_MONTH)]
    horizon: f64,
}

#[derive(Args, Debug, Clone)]
struct SimulateArgs {
    #[command(flatten)]
    portfolio: PortfolioArgs,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    paths: u64,
    #[arg(long, value_enum, default_value_t = MeasureArg::P)]
    measure: MeasureArg,
}

#[derive(Args, Debug, Clone)]
struct VerifyArgs {
    #[command(flatten)]
    portfolio: PortfolioArgs,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 50_000)]
    paths: usize,
}

#[derive(Args, Debug, Clone)]
struct FigureArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// fig1, fig2, fig3, fig4 or all.
    #[arg(long, default_value = "all")]
    which: String,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = ONE_MONTH)]
    horizon: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum MeasureArg {
    P,
    Q,
}

impl From<MeasureArg> for Measure {
    fn from(m: MeasureArg) -> Self {
        match m {
            MeasureArg::P => Measure::P,
            MeasureArg::Q => Measure::Q,
        }
    }
}

enum Payload {
    Table(Dataset),
    Json(Value),
}

/// Everything a command produced, plus what goes into its manifest.
struct Run {
    outputs: Vec<(String, Payload)>,
    seed: Option<u64>,
    config: Value,
    /// Extra line for stderr, e.g. a pass/fail summary.
    note: Option<String>,
}

impl Run {
    fn new(config: Value) -> Self {
        Run {
            outputs: Vec::new(),
            seed: None,
            config,
            note: None,
        }
    }

    fn table(mut self, stem: &str, d: Dataset) -> Self {
        self.outputs.push((stem.into(), Payload::Table(d)));
        self
    }

    fn json(mut self, stem: &str, v: Value) -> Self {
        self.outputs.push((stem.into(), Payload::Json(v)));
        self
    }
}

struct Context {
    doc: ParamsDocument,
    params: ModelParams,
    x0: FactorState,
    model: ModelMatrices,
}

fn load(common: &CommonArgs) -> Result<Context, MctouError> {
    let doc = match &common.params {
        Some(p) => ParamsDocument::load(p)?,
        None => ParamsDocument::table1(),
    };
    let (params, x0) = doc.clone().into_model()?;
    let model = build_model(params)?;
    Ok(Context {
        doc,
        params,
        x0,
        model,
    })
}

fn parse_state(s: &str) -> Result<Vector3<f64>, MctouError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| MctouError::InvalidGrid(format!("--x: {e}")))?;
    if v.len() != 3 {
        return Err(MctouError::DimensionMismatch {
            expected: 3,
            got: v.len(),
        });
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

fn portfolio(args: &PortfolioArgs) -> Result<PortfolioSpec, MctouError> {
    let contracts = ContractSpec::parse_list(&args.contracts)?;
    let first = contracts
        .iter()
        .map(|c| c.maturity)
        .fold(f64::INFINITY, f64::min);
    let horizon = args.horizon.unwrap_or(ONE_MONTH.min(first));
    PortfolioSpec::new(contracts, args.gamma, horizon, args.w0)
}

fn portfolio_config(spec: &PortfolioSpec) -> Value {
    json!({
        "contracts": spec.contracts.iter().map(|c| json!({"label": c.label, "maturity": c.maturity})).collect::<Vec<_>>(),
        "gamma": spec.gamma,
        "horizon": spec.horizon,
        "w0": spec.w0,
    })
}

fn validate(args: &CommonArgs) -> Result<Run, MctouError> {
    let ctx = load(args)?;
    let sd = ctx.params.sigma_diagonal();
    let mut d = Dataset::new(["field", "value"]);
    d.push(vec!["status".into(), "valid".into()]);
    d.push(vec![
        "sigma_convention".into(),
        format!("{:?}", ctx.params.sigma_convention).to_lowercase(),
    ]);
    for (i, v) in sd.iter().enumerate() {
        d.push(vec![format!("sigma_diag{}", i + 1), fmt_f64(*v)]);
    }
    for (i, v) in ctx.params.lambda().iter().enumerate() {
        d.push(vec![format!("lambda{}", i + 1), fmt_f64(*v)]);
    }
    Ok(Run::new(json!({})).table("validate", d))
}

fn price_table(args: &PriceArgs, with_loadings: bool) -> Result<Run, MctouError> {
    let ctx = load(&args.common)?;
    let contracts = ContractSpec::parse_list(&args.contracts)?;
    let x = match &args.x {
        Some(s) => parse_state(s)?,
        None => ctx.x0.x,
    };
    let state = FactorState::new(args.t, x);
    let pts = curve(&ctx.model, &state, &contracts)?;
    let mut d = if with_loadings {
        Dataset::new(["t", "maturity", "a1", "a2", "a3", "beta", "price"])
    } else {
        Dataset::new(["contract", "t", "maturity", "price"])
    };
    for p in &pts {
        let mut row = Vec::new();
        if !with_loadings {
            row.push(p.label.clone());
        }
        row.push(fmt_f64(p.t));
        row.push(fmt_f64(p.maturity));
        if with_loadings {
            row.extend(p.a.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(p.beta));
        }
        row.push(fmt_f64(p.price));
        d.push(row);
    }
    let config = json!({"contracts": args.contracts, "t": args.t, "x": [x[0], x[1], x[2]]});
    Ok(Run::new(config).table(if with_loadings { "curve" } else { "price" }, d))
}

fn strategy(args: &PortfolioArgs) -> Result<Run, MctouError> {
    let ctx = load(&args.common)?;
    let spec = portfolio(args)?;
    let grid = SimulationGrid::daily(spec.horizon, Measure::P, 0)?;
    let points = strategy_on_grid(&ctx.model, &spec, &grid.times())?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=spec.len()).map(|k| format!("pi_{k}")));
    header.extend(["lambda_sq".into(), "cond_number".into()]);
    let mut d = Dataset::new(header);
    for p in points {
        let mut row = vec![fmt_f64(p.t)];
        row.extend(p.pi.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(p.lambda_sq));
        row.push(fmt_f64(p.cond));
        d.push(row);
    }
    Ok(Run::new(portfolio_config(&spec)).table("strategy", d))
}

fn ce(args: &PortfolioArgs) -> Result<Run, MctouError> {
    let ctx = load(&args.common)?;
    let spec = portfolio(args)?;
    let v = certainty_equivalent(&ctx.model, &spec, 0.0, spec.w0)?;
    let mut d = Dataset::new(["contracts", "gamma", "horizon", "w0", "ce", "ce_1e4"]);
    let labels: Vec<&str> = spec.contracts.iter().map(|c| c.label.as_str()).collect();
    d.push(vec![
        labels.join("+"),
        fmt_f64(spec.gamma),
        fmt_f64(spec.horizon),
        fmt_f64(spec.w0),
        fmt_f64(v),
        fmt_f64(v * 1e4),
    ]);
    Ok(Run::new(portfolio_config(&spec)).table("ce", d))
}

fn ce_table(args: &CeTableArgs) -> Result<Run, MctouError> {
    let ctx = load(&args.common)?;
    if !(args.gamma > 0.0 && args.horizon > 0.0 && args.horizon <= 1.0 / 12.0) {
        return Err(MctouError::InvalidPortfolio(format!(
            "need gamma > 0 and 0 < horizon <= 1/12, got gamma {} horizon {}",
            args.gamma, args.horizon
        )));
    }
    let grid = run_ce_grid(
        &ctx.params,
        &correlation_overrides(),
        args.horizon,
        args.gamma,
    );
    let (cmp, ok) = grid.comparison();
    let failed = cmp
        .column("pass")
        .unwrap()
        .iter()
        .filter(|p| **p != "true")
        .count();
    let mut run = Run::new(json!({"gamma": args.gamma, "horizon": args.horizon}))
        .table("ce_table", grid.to_dataset())
        .table("ce_table_comparison", cmp);
    run.note = Some(if ok {
        "comparison: all 63 cells within tolerance".into()
    } else {
        format!("comparison: {failed} of 63 cells outside tolerance")
    });
    Ok(run)
}

fn simulate(args: &SimulateArgs) -> Result<Run, MctouError> {
    let ctx = load(&args.portfolio.common)?;
    let spec = portfolio(&args.portfolio)?;
    if args.paths == 0 {
        return Err(MctouError::InvalidGrid("--paths must be at least 1".into()));
    }
    let measure = Measure::from(args.measure);
    let grid = SimulationGrid::daily(spec.horizon, measure, args.seed)?;
    let times = grid.times();
    let sim = FactorSimulator::new(&ctx.model, &ctx.x0, grid)?;
    let table = FuturesTable::new(&ctx.model, &times, &spec.contracts)?;
    let pis: Vec<DVector<f64>> = strategy_on_grid(&ctx.model, &spec, &times)?
        .into_iter()
        .map(|p| p.pi)
        .collect();
    let inc = WealthIncrements::new(&ctx.model, &times, measure, &spec.contracts, &pis)?;

    let m = spec.len();
    let mut header: Vec<String> = ["path_id", "t", "x1", "x2", "x3"]
        .map(String::from)
        .to_vec();
    header.extend((1..=m).map(|k| format!("F{k}")));
    header.extend((1..=m).map(|k| format!("pi{k}")));
    header.push("wealth".into());
    let mut d = Dataset::new(header);
    for id in 0..args.paths {
        let path = sim.path(id);
        let wealth = inc.path(spec.w0, &path.shocks);
        for (i, &t) in times.iter().enumerate() {
            let x = path.factors[i];
            let mut row = vec![id.to_string(), fmt_f64(t)];
            row.extend(x.iter().map(|v| fmt_f64(*v)));
            row.extend((0..m).map(|k| fmt_f64(table.price(i, k, &x))));
            row.extend(pis[i].iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(wealth[i]));
            d.push(row);
        }
    }
    let mut config = portfolio_config(&spec);
    config["grid"] = json!({
        "t0": grid.t0, "t_end": grid.t_end, "n_steps": grid.n_steps,
        "measure": measure.to_string(), "paths": args.paths,
    });
    let mut run = Run::new(config).table("simulate", d);
    run.seed = Some(args.seed);
    Ok(run)
}

fn verify_mc(args: &VerifyArgs) -> Result<Run, MctouError> {
    let ctx = load(&args.portfolio.common)?;
    let spec = portfolio(&args.portfolio)?;
    let report = verify_mc_utility(&ctx.model, &spec, &ctx.x0, args.paths, args.seed)?;
    let mart = martingale_check(
        &ctx.model,
        &ctx.x0,
        &spec.contracts,
        spec.horizon,
        args.paths,
        args.seed,
    )?;
    let pass = report.pass && report.perturbed_pass != Some(false) && mart.iter().all(|r| r.pass);
    let value = json!({
        "value_function": report,
        "martingale": mart,
        "pass": pass,
    });
    let mut run = Run::new(portfolio_config(&spec)).json("verify_mc", value);
    run.seed = Some(args.seed);
    run.note = Some(format!("verify-mc: {}", if pass { "pass" } else { "FAIL" }));
    Ok(run)
}

fn figures(args: &FigureArgs) -> Result<Run, MctouError> {
    let ctx = load(&args.common)?;
    let which: Vec<Figure> = if args.which.eq_ignore_ascii_case("all") {
        Figure::ALL.to_vec()
    } else {
        args.which
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<_, _>>()?
    };
    let cfg = FigureConfig {
        seed: args.seed,
        gamma: args.gamma,
        horizon: args.horizon,
        ..FigureConfig::default()
    };
    let mut run = Run::new(
        json!({"figures": which.iter().map(|f| f.tag()).collect::<Vec<_>>(), "config": cfg}),
    );
    for f in which {
        run = run.table(f.tag(), run_figure_data(&ctx.params, &ctx.x0, f, &cfg)?);
    }
    run.seed = Some(args.seed);
    Ok(run)
}

fn common(cmd: &Command) -> &CommonArgs {
    match cmd {
        Command::Validate(c) => c,
        Command::Curve(a) | Command::Price(a) => &a.common,
        Command::Strategy(a) | Command::Ce(a) => &a.common,
        Command::CeTable(a) => &a.common,
        Command::Simulate(a) => &a.portfolio.common,
        Command::VerifyMc(a) => &a.portfolio.common,
        Command::Figures(a) => &a.common,
    }
}

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Validate(_) => "validate",
        Command::Curve(_) => "curve",
        Command::Price(_) => "price",
        Command::Strategy(_) => "strategy",
        Command::Ce(_) => "ce",
        Command::CeTable(_) => "ce-table",
        Command::Simulate(_) => "simulate",
        Command::VerifyMc(_) => "verify-mc",
        Command::Figures(_) => "figures",
    }
}

fn render(p: &Payload, format: Format) -> (String, &'static str) {
    match (p, format) {
        (Payload::Table(d), Format::Csv) => (d.to_csv(), "csv"),
        (Payload::Table(d), Format::Json) => (pretty(&d.to_json()), "json"),
        (Payload::Json(v), _) => (pretty(v), "json"),
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

fn write_outputs(cmd: &Command, run: &Run, dir: &Path, format: Format) -> Result<(), MctouError> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (stem, p) in &run.outputs {
        let (body, ext) = render(p, format);
        let file = format!("{stem}.{ext}");
        write_atomic(&dir.join(&file), body.as_bytes())?;
        files.push(file);
    }
    let c = common(cmd);
    let manifest = json!({
        "command": name(cmd),
        "version": env!("CARGO_PKG_VERSION"),
        "created": chrono::Utc::now().to_rfc3339(),
        "params_file": c.params.as_ref().map(|p| p.display().to_string()),
        "params": load(c).map(|ctx| serde_json::to_value(&ctx.doc).expect("plain data")).unwrap_or(Value::Null),
        "seed": run.seed,
        "config": run.config,
        "outputs": files,
    });
    write_atomic(&dir.join("manifest.json"), pretty(&manifest).as_bytes())
}

fn execute(cmd: &Command) -> Result<Run, MctouError> {
    match cmd {
        Command::Validate(a) => validate(a),
        Command::Curve(a) => price_table(a, true),
        Command::Price(a) => price_table(a, false),
        Command::Strategy(a) => strategy(a),
        Command::Ce(a) => ce(a),
        Command::CeTable(a) => ce_table(a),
        Command::Simulate(a) => simulate(a),
        Command::VerifyMc(a) => verify_mc(a),
        Command::Figures(a) => figures(a),
    }
}

fn report(e: &MctouError) -> ExitCode {
    match e {
        MctouError::InvalidParams(v) => {
            eprintln!("error: invalid parameters");
            for p in v {
                eprintln!("  {p}");
            }
        }
        e => eprintln!("error: {e}"),
    }
    ExitCode::from(if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_VALIDATION
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let run = match execute(&cli.command) {
        Ok(r) => r,
        Err(e) => return report(&e),
    };
    let c = common(&cli.command);
    match &c.out {
        Some(dir) => {
            if let Err(e) = write_outputs(&cli.command, &run, dir, c.format) {
                return report(&e);
            }
        }
        None => {
            let bodies: Vec<String> = run
                .outputs
                .iter()
                .map(|(_, p)| render(p, c.format).0)
                .collect();
            print!("{}", bodies.join("\n"));
        }
    }
    if let Some(n) = &run.note {
        eprintln!("{n}");
    }
    ExitCode::SUCCESS
}
