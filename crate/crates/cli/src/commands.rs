use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, ValueEnum};

use wpo_score::baselines::{isotropic_kde, EmpiricalScore};
use wpo_score::checks::{parse_suites, run_suites, CheckOptions};
use wpo_score::datasets::{generate, subsample_centers, DatasetName, DatasetSpec};
use wpo_score::io::{format_g17, load_points, save_points, write_json_g17};
use wpo_score::metrics::{
    ellipses as model_ellipses, mmd2_unbiased, nll, nn_median_ratio, write_ellipses_csv, Bandwidth,
    MetricProvenance, MetricReport,
};
use wpo_score::rng::{self, Stream};
use wpo_score::samplers::{
    init_from_moments, init_from_prior, sample_direct, sample_reverse_sde, SdeConfig,
};
use wpo_score::training::{self, OptimizerKind, TrainConfig};
use wpo_score::{KernelModel, Points, PrecisionProvider, ProviderKind};

use crate::Failure;

type CmdResult = Result<(), Failure>;

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{msg}"))
}

fn parse_list<T: std::str::FromStr>(raw: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

fn parse_f64_list(raw: &str) -> Result<Vec<f64>, String> {
    parse_list(raw)
}

fn parse_usize_list(raw: &str) -> Result<Vec<usize>, String> {
    parse_list(raw)
}

fn load(path: &Path) -> Result<Points, Failure> {
    load_points(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::from)
}

fn load_model(path: &Path) -> Result<KernelModel, Failure> {
    KernelModel::load(path)
        .with_context(|| format!("loading model {}", path.display()))
        .map_err(Failure::from)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(Failure::from)
}

fn write_csv_rows(
    path: &Path,
    header: &str,
    rows: impl IntoIterator<Item = Vec<String>>,
) -> CmdResult {
    let mut out = create(path)?;
    let io = |e: std::io::Error| Failure::from(anyhow::Error::from(e));
    writeln!(out, "{header}").map_err(io)?;
    for row in rows {
        writeln!(out, "{}", row.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    /// two_moons, checkerboard, rings, spiral, swissroll2d, swissroll6d or gmm_ground_truth.
    #[arg(long, value_parser = |s: &str| s.parse::<DatasetName>().map_err(|e| e.to_string()))]
    dataset: DatasetName,
    #[arg(long)]
    n: usize,
    /// Standard deviation of the isotropic Gaussian noise added to each point.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Write an `x0,x1,...` header line.
    #[arg(long)]
    header: bool,
}

pub fn datagen(a: DatagenArgs) -> CmdResult {
    let data = generate(&DatasetSpec::new(a.dataset, a.n, a.noise, a.seed))?;
    save_points(&data.points, &a.out, a.header)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training points (CSV).
    #[arg(long)]
    data: PathBuf,
    /// Number of kernel centers, drawn from the training points.
    #[arg(long)]
    centers: usize,
    #[arg(long, default_value = "table", value_parser = |s: &str| s.parse::<ProviderKind>().map_err(|e| e.to_string()))]
    provider: ProviderKind,
    /// Hidden widths of the precision network (comma list).
    #[arg(long, value_parser = parse_usize_list)]
    hidden: Option<::std::vec::Vec<usize>>,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value = "adam", value_parser = |s: &str| s.parse::<OptimizerKind>().map_err(|e| e.to_string()))]
    optimizer: OptimizerKind,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record loss (and held-out NLL) every this many steps; 0 records the end only.
    #[arg(long, default_value_t = 0)]
    eval_every: usize,
    /// Held-out points for the NLL column of the report.
    #[arg(long)]
    heldout: Option<PathBuf>,
    /// Model JSON output.
    #[arg(long)]
    out: PathBuf,
    /// Training report CSV output.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Model JSON written at every record step.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

pub fn train(a: TrainArgs) -> CmdResult {
    let data = load(&a.data)?;
    let heldout = a.heldout.as_deref().map(load).transpose()?;
    let centers = subsample_centers(&data, a.centers, a.seed)?;
    let provider = match (a.provider, &a.hidden) {
        (ProviderKind::Mlp, Some(hidden)) => {
            PrecisionProvider::init_mlp(data.dim(), hidden, a.seed)?
        }
        (ProviderKind::Table, Some(_)) => {
            return Err(usage("--hidden applies to the mlp provider only"))
        }
        (kind, None) => PrecisionProvider::init(kind, data.dim(), a.centers, a.beta, a.seed)?,
    };
    let model = KernelModel::new(centers, provider, a.beta, a.horizon)?;
    let config = TrainConfig {
        steps: a.steps,
        batch_size: a.batch,
        learning_rate: a.lr,
        optimizer: a.optimizer,
        seed: a.seed,
        eval_every: a.eval_every,
        checkpoint_path: a.checkpoint,
    };
    let (model, report) = training::train(model, &data, &config, heldout.as_ref())?;
    model.save(&a.out)?;
    if let Some(path) = &a.report {
        report.save_csv(path)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SampleMode {
    Direct,
    Sde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScoreKind {
    /// The trained kernel model given by --model.
    Kernel,
    /// The memorizing score of the training set given by --train-data.
    Empirical,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ScoreKind::Kernel)]
    score: ScoreKind,
    /// Training points for `--score empirical`.
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// β of the empirical field.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Horizon T of the empirical field.
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value_t = SampleMode::Direct)]
    mode: SampleMode,
    /// Euler–Maruyama steps.
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Noise time at which integration stops.
    #[arg(long, default_value_t = 0.0)]
    eps_stop: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn sample(a: SampleArgs) -> CmdResult {
    let mut init_rng = rng::stream(a.seed, Stream::Prior);
    let sde = SdeConfig {
        n_steps: a.steps,
        eps_stop: a.eps_stop,
        seed: a.seed,
    };
    let points = match a.score {
        ScoreKind::Kernel => {
            let path = a
                .model
                .as_deref()
                .ok_or_else(|| usage("--score kernel needs --model"))?;
            let model = load_model(path)?;
            match a.mode {
                SampleMode::Direct => sample_direct(&model, a.n, &mut init_rng),
                SampleMode::Sde => {
                    let init = init_from_prior(&model, a.n, &mut init_rng)?;
                    sample_reverse_sde(&model, &init, &sde)?
                }
            }
        }
        ScoreKind::Empirical => {
            let path = a
                .train_data
                .as_deref()
                .ok_or_else(|| usage("--score empirical needs --train-data"))?;
            if a.mode == SampleMode::Direct {
                return Err(usage("the empirical field is sampled with --mode sde"));
            }
            let train = load(path)?;
            let field = EmpiricalScore::new(train.clone(), a.beta, a.horizon)?;
            let init = init_from_moments(&train, a.beta, a.horizon, a.n, &mut init_rng)?;
            sample_reverse_sde(&field, &init, &sde)?
        }
    };
    save_points(&points, &a.out, false)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    #[arg(long)]
    model: PathBuf,
    /// `xmin,xmax,ymin,ymax,nx,ny`; densities are taken at cell centers.
    #[arg(long, allow_hyphen_values = true)]
    grid: String,
    /// Noise time of the evaluated density.
    #[arg(long, default_value_t = 0.0)]
    s: f64,
    #[arg(long)]
    out: PathBuf,
}

struct Grid {
    x: (f64, f64),
    y: (f64, f64),
    nx: usize,
    ny: usize,
}

fn parse_grid(raw: &str) -> Result<Grid, Failure> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != 6 {
        return Err(usage(format!(
            "--grid needs xmin,xmax,ymin,ymax,nx,ny, got `{raw}`"
        )));
    }
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|e| usage(format!("--grid `{s}`: {e}")))
    };
    let count = |s: &str| match s.parse::<i64>() {
        Ok(n) if n > 0 => Ok(n as usize),
        _ => Err(usage(format!(
            "--grid counts must be positive integers, got `{s}`"
        ))),
    };
    let grid = Grid {
        x: (num(parts[0])?, num(parts[1])?),
        y: (num(parts[2])?, num(parts[3])?),
        nx: count(parts[4])?,
        ny: count(parts[5])?,
    };
    if !(grid.x.0 < grid.x.1 && grid.y.0 < grid.y.1) {
        return Err(usage("--grid needs xmin < xmax and ymin < ymax"));
    }
    Ok(grid)
}

pub fn density(a: DensityArgs) -> CmdResult {
    let grid = parse_grid(&a.grid)?;
    let model = load_model(&a.model)?;
    if model.dim() != 2 {
        return Err(usage(format!(
            "density grids need a 2-D model, got d={}",
            model.dim()
        )));
    }
    let mixture = model.mixture_at(a.s)?;
    let dx = (grid.x.1 - grid.x.0) / grid.nx as f64;
    let dy = (grid.y.1 - grid.y.0) / grid.ny as f64;
    let mut rows = Vec::with_capacity(grid.nx * grid.ny);
    for j in 0..grid.ny {
        let y = grid.y.0 + (j as f64 + 0.5) * dy;
        for i in 0..grid.nx {
            let x = grid.x.0 + (i as f64 + 0.5) * dx;
            let p = mixture.log_density(&[x, y])?.exp();
            rows.push(vec![format_g17(x), format_g17(y), format_g17(p)]);
        }
    }
    write_csv_rows(&a.out, "x,y,density", rows)
}

#[derive(Debug, Args)]
pub struct EllipsesArgs {
    #[arg(long)]
    model: PathBuf,
    /// Number of centers to export.
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn ellipses(a: EllipsesArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let list = model_ellipses(&model, a.k, a.seed)?;
    let mut out = create(&a.out)?;
    write_ellipses_csv(&list, &mut out)?;
    out.flush()
        .map_err(|e| Failure::from(anyhow::Error::from(e)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    Nll,
    Mmd,
    Nn,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "nll" => Ok(Metric::Nll),
            "mmd" => Ok(Metric::Mmd),
            "nn" => Ok(Metric::Nn),
            other => Err(format!(
                "unknown metric `{other}` (expected nll, mmd or nn)"
            )),
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Held-out true samples.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Training points (reference set of the NN ratio).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Generated samples.
    #[arg(long)]
    gen: Option<PathBuf>,
    /// Comma list of nll, mmd, nn.
    #[arg(long, default_value = "", value_parser = parse_list::<Metric>)]
    metrics: ::std::vec::Vec<Metric>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report JSON output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str, metric: &str) -> Result<&'a Path, Failure> {
    path.as_deref()
        .ok_or_else(|| usage(format!("metric {metric} needs --{flag}")))
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let mut report = MetricReport::default();
    for metric in &a.metrics {
        match metric {
            Metric::Nll => {
                let model = load_model(required(&a.model, "model", "nll")?)?;
                let test = load(required(&a.test, "test", "nll")?)?;
                report.nll = Some(nll(&model, &test)?);
                report.nll_info = Some(MetricProvenance {
                    sizes: vec![test.len()],
                    seed: None,
                });
            }
            Metric::Mmd => {
                let gen = load(required(&a.gen, "gen", "mmd")?)?;
                let test = load(required(&a.test, "test", "mmd")?)?;
                report.mmd2 = Some(mmd2_unbiased(
                    &gen,
                    &test,
                    Bandwidth::Median { seed: a.seed },
                )?);
                report.mmd2_info = Some(MetricProvenance {
                    sizes: vec![gen.len(), test.len()],
                    seed: Some(a.seed),
                });
            }
            Metric::Nn => {
                let gen = load(required(&a.gen, "gen", "nn")?)?;
                let test = load(required(&a.test, "test", "nn")?)?;
                let train = load(required(&a.train, "train", "nn")?)?;
                report.nn_median_ratio = Some(nn_median_ratio(&gen, &test, &train)?);
                report.nn_info = Some(MetricProvenance {
                    sizes: vec![gen.len(), test.len(), train.len()],
                    seed: None,
                });
            }
        }
    }
    match &a.out {
        Some(path) => write_json_g17(&report, path)?,
        None => println!("{}", report.to_json()?),
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Training points; the KDE centers.
    #[arg(long)]
    data: PathBuf,
    /// Held-out true samples.
    #[arg(long)]
    test: PathBuf,
    /// Early-stopping times (comma list).
    #[arg(long, default_value = "0.05,0.1,0.2", value_parser = parse_f64_list)]
    eps: ::std::vec::Vec<f64>,
    /// Trained WPO model; β and T of the KDEs are taken from it.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn compare_earlystop(a: CompareArgs) -> CmdResult {
    if a.eps.is_empty() {
        return Err(usage("--eps needs at least one early-stopping time"));
    }
    let train = load(&a.data)?;
    let test = load(&a.test)?;
    let wpo = load_model(&a.model)?;
    let mut models = Vec::with_capacity(a.eps.len() + 1);
    for &eps in &a.eps {
        models.push((
            "kde",
            format_g17(eps),
            isotropic_kde(train.clone(), wpo.beta(), eps, wpo.horizon())?,
        ));
    }
    models.push(("wpo", String::new(), wpo));
    let mut rows = Vec::with_capacity(models.len());
    for (k, (name, eps, model)) in models.iter().enumerate() {
        let mut sampling = rng::indexed(a.seed, Stream::Sampling, k as u64);
        let samples = sample_direct(model, test.len(), &mut sampling);
        let mmd = mmd2_unbiased(&samples, &test, Bandwidth::Median { seed: a.seed })?;
        rows.push(vec![
            name.to_string(),
            eps.clone(),
            format_g17(nll(model, &test)?),
            format_g17(mmd),
        ]);
    }
    write_csv_rows(&a.out, "model,eps,nll,mmd2", rows)
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Comma list of hjb, gradcheck, equiv, heat or all.
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Negative control: run with a heat flow of the wrong speed.
    #[arg(long, hide = true)]
    corrupt_evolution: bool,
}

pub fn check(a: CheckArgs) -> CmdResult {
    let suites = parse_suites(&a.suite)?;
    let opts = CheckOptions {
        seed: a.seed,
        corrupt_evolution: a.corrupt_evolution,
    };
    let outcomes = run_suites(&suites, &opts)?;
    for o in &outcomes {
        println!("{o}");
    }
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| format!("{}/{}", o.suite, o.property))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Property(failed.join(", ")))
    }
}
