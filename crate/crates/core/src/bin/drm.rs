use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use drm_el::estimators::{drm_quantile_estimate, Method};
use drm_el::nonparametric::{empirical_quantile, kde_density, Ecdf, KdeModel};
use drm_el::parametric::{fit_parametric, parametric_quantile_with, FamilyTag};
use drm_el::pipeline::{ingest_csv, run_resample_study, ColumnSpec, Populations, ResampleStudy, ValueTransform};
use drm_el::sim::{corollary_curve, run_scenario, Generator, RunOptions, Scenario, SimulationTable};
use drm_el::{fit_mele, BasisSpec, Error, QuantileEstimate, SolverOptions, TwoSampleData};

#[derive(Parser)]
#[command(name = "drm", version, about = "Density ratio model quantile estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run Monte Carlo scenarios from a JSON file and write a CSV table.
    Simulate(SimulateArgs),
    /// Quantile estimates with standard errors for one base/target pair.
    Estimate(EstimateArgs),
    /// Gaussian KDE curves (Silverman bandwidth) per group.
    Kde(KdeArgs),
    /// With-replacement resampling study over observed populations.
    Study(StudyArgs),
    /// Limiting DRM quantile variance against the size ratio k.
    Corollary(CorollaryArgs),
}

#[derive(Args, Clone, Copy)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-10)]
    tol_grad: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
}

impl From<SolverArgs> for SolverOptions {
    fn from(a: SolverArgs) -> Self {
        SolverOptions {
            tol_grad: a.tol_grad,
            max_iter: a.max_iter,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    value_col: String,
    #[arg(long)]
    group_col: String,
    #[arg(long, value_enum, default_value_t = TransformArg::None)]
    transform: TransformArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformArg {
    None,
    Log,
}

impl DataArgs {
    fn load(&self) -> Result<Populations, Error> {
        let spec = ColumnSpec {
            value_column: self.value_col.clone(),
            group_column: self.group_col.clone(),
            transform: match self.transform {
                TransformArg::None => ValueTransform::None,
                TransformArg::Log => ValueTransform::Log,
            },
        };
        let pops = ingest_csv(&self.data, &spec)?;
        eprintln!(
            "read {} rows: {} used, {} dropped",
            pops.rows_in, pops.rows_used, pops.rows_dropped
        );
        Ok(pops)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON scenario, or an array of scenarios.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    base: String,
    #[arg(long)]
    target: String,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.5,0.95")]
    levels: Vec<f64>,
    #[arg(long, default_value = "quadratic")]
    basis: BasisSpec,
    #[arg(long)]
    family: Option<FamilyTag>,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct KdeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Groups to include; all when omitted.
    #[arg(long, value_delimiter = ',')]
    groups: Vec<String>,
    #[arg(long, default_value_t = 200)]
    points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    base: String,
    #[arg(long, value_delimiter = ',')]
    targets: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    n0: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 2015)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.5,0.95")]
    levels: Vec<f64>,
    /// One DRM column per basis.
    #[arg(long, value_delimiter = ',', default_value = "linear,quadratic")]
    basis: Vec<BasisSpec>,
    #[arg(long, value_delimiter = ',', default_value = "drm,normal-common,normal,empirical")]
    methods: Vec<Method>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct CorollaryArgs {
    /// `normal` (standard) or `exponential` (mean 1), or a JSON generator.
    #[arg(long, default_value = "normal")]
    generator: String,
    #[arg(long)]
    p: f64,
    #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
    k: Vec<f64>,
}

fn output(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn simulate(args: SimulateArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.scenario)?;
    let scenarios: Vec<Scenario> = match serde_json::from_str::<Vec<Scenario>>(&text) {
        Ok(list) => list,
        Err(_) => vec![serde_json::from_str::<Scenario>(&text)?],
    };
    let run = RunOptions {
        workers: args.workers,
        solver: args.solver.into(),
    };
    let mut table = SimulationTable::default();
    for s in &scenarios {
        table.rows.extend(run_scenario(s, &run)?.rows);
    }
    table.write_csv(output(&args.out)?, false)
}

fn write_estimate(w: &mut csv::Writer<impl Write>, q: &QuantileEstimate, density: Option<f64>) -> Result<(), Error> {
    w.write_record([
        q.method.to_string(),
        q.level.to_string(),
        q.point.to_string(),
        q.std_error.to_string(),
        q.ci_low.to_string(),
        q.ci_high.to_string(),
        density.map_or(String::new(), |d| d.to_string()),
    ])?;
    Ok(())
}

fn estimate(args: EstimateArgs) -> Result<(), Error> {
    let pops = args.data.load()?;
    let data = TwoSampleData::new(pops.get(&args.base)?.to_vec(), pops.get(&args.target)?.to_vec())?;
    let fit = fit_mele(&data, &args.basis, &args.solver.into())?;
    eprintln!(
        "theta_hat = {:?} ({} iterations)",
        fit.theta_hat.as_slice(),
        fit.iterations
    );
    let ecdf = Ecdf::new(data.x1())?;
    let kde = KdeModel::silverman(data.x1())?;
    let family = args.family.map(|f| fit_parametric(&data, f)).transpose()?;

    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["method", "p", "point", "std_error", "ci_low", "ci_high", "density_plugin"])?;
    for &p in &args.levels {
        let (drm, avar) = drm_quantile_estimate(&fit, &data, &args.basis, p, args.confidence)?;
        write_estimate(&mut w, &drm, Some(avar.ingredients.density_at))?;

        let point = empirical_quantile(&ecdf, p)?;
        let density = kde_density(&kde, point);
        let avar = drm_el::nonparametric::empirical_quantile_avar(p, density)?;
        let emp = QuantileEstimate::from_avar(Method::Empirical, p, point, avar, data.n1(), args.confidence)?;
        write_estimate(&mut w, &emp, Some(density))?;

        if let Some(fam) = &family {
            write_estimate(&mut w, &parametric_quantile_with(fam, p, args.confidence)?, None)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn kde(args: KdeArgs) -> Result<(), Error> {
    let pops = args.data.load()?;
    let groups: Vec<String> = if args.groups.is_empty() {
        pops.groups.keys().cloned().collect()
    } else {
        args.groups.clone()
    };
    let mut w = csv::Writer::from_writer(output(&args.out)?);
    w.write_record(["group", "x", "density", "bandwidth"])?;
    for g in &groups {
        let model = KdeModel::silverman(pops.get(g)?)?;
        for (x, d) in model.grid(args.points, 3.0) {
            w.write_record([g.clone(), x.to_string(), d.to_string(), model.bandwidth().to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn study(args: StudyArgs) -> Result<(), Error> {
    let pops = args.data.load()?;
    let study = ResampleStudy {
        base: args.base,
        targets: args.targets,
        n0_grid: args.n0,
        n_grid: args.n,
        reps: args.reps,
        seed: args.seed,
        levels: args.levels,
        methods: args.methods,
        bases: args.basis,
    };
    let run = RunOptions {
        workers: args.workers,
        solver: args.solver.into(),
    };
    run_resample_study(&study, &pops, &run)?.write_csv(output(&args.out)?, true)
}

fn corollary(args: CorollaryArgs) -> Result<(), Error> {
    let gen = match args.generator.as_str() {
        "normal" => Generator::Normal { mu: 0.0, sigma: 1.0 },
        "exponential" => Generator::Exponential { mean: 1.0 },
        json => serde_json::from_str(json)?,
    };
    let curve = corollary_curve(&gen, args.p, &args.k)?;
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["k", "avar"])?;
    for (k, v) in args.k.iter().zip(curve) {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Kde(a) => kde(a),
        Command::Study(a) => study(a),
        Command::Corollary(a) => corollary(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
