//! `twingee`: fit ACE heritability models to twin data, simulate twin
//! datasets and run Monte Carlo coverage studies.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use twingee::estimators::{
    group_correlations, CovariateFit, FitResult, ProportionInference, Quantity, WaldTest,
};
use twingee::simulate::{AgeFalconerConfig, Scenario, ScenarioConfig};
use twingee::study::{self, fmt_g6, StudyConfig, StudyOutputs};
use twingee::{
    center, fit, fit_with_variance_covariates, read_csv, residualize, write_csv, AceParams, CenterMode, CorrLink,
    CovariateSpec, Error, Estimator, FalconerCount, FitOptions, ReadOptions, TwinDataset, VarianceLink, Zygosity,
};

#[derive(Parser)]
#[command(name = "twingee", version, about = "ACE heritability estimation for twin studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one or all estimators to a twin-pair CSV file.
    Fit(FitArgs),
    /// Simulate a twin dataset and write it as CSV.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo coverage study.
    Study(StudyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Nace,
    Gee2Nace,
    Falconer,
    Gee2Falconer,
    All,
}

impl EstimatorArg {
    fn estimators(self) -> Vec<Estimator> {
        match self {
            EstimatorArg::Nace => vec![Estimator::Nace],
            EstimatorArg::Gee2Nace => vec![Estimator::Gee2Nace],
            EstimatorArg::Falconer => vec![Estimator::Falconer],
            EstimatorArg::Gee2Falconer => vec![Estimator::Gee2Falconer],
            EstimatorArg::All => Estimator::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CenterArg {
    PerZygosity,
    Global,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum VarLinkArg {
    Identity,
    Log,
}

#[derive(Clone, Copy, ValueEnum)]
enum CorrLinkArg {
    Identity,
    FisherZ,
}

#[derive(Clone, Copy, ValueEnum)]
enum FalconerCountArg {
    Pairs,
    Individuals,
}

#[derive(Args)]
struct FitArgs {
    /// Twin-pair CSV file with a header row.
    input: PathBuf,
    /// Columns holding the trait for twin 1 and twin 2.
    #[arg(long, value_delimiter = ',', default_values = ["y1", "y2"])]
    trait_cols: Vec<String>,
    #[arg(long, default_value = "zygosity")]
    zygosity_col: String,
    #[arg(long, value_enum, default_value = "all")]
    estimator: EstimatorArg,
    /// Covariates regressed out of the trait before fitting.
    #[arg(long, value_delimiter = ',')]
    adjust: Vec<String>,
    /// Categorical sex column; recoded to 0/1 and usable as a covariate by name.
    #[arg(long)]
    sex_col: Option<String>,
    /// Label in the sex column coded as 1.
    #[arg(long, default_value = "M", requires = "sex_col")]
    sex_one: String,
    /// Let variance components depend linearly on this covariate.
    #[arg(long, conflicts_with = "age_covariate")]
    var_covariate: Option<String>,
    /// Let variance components depend quadratically on this covariate.
    #[arg(long)]
    age_covariate: Option<String>,
    /// Covariate values at which to report proportions.
    #[arg(long, value_delimiter = ',')]
    levels: Vec<f64>,
    /// Wald test of h² between two reported levels: A,B tests h²(A) − h²(B).
    #[arg(long, value_delimiter = ',')]
    contrast: Vec<f64>,
    #[arg(long, value_enum, default_value = "identity")]
    var_link: VarLinkArg,
    #[arg(long, value_enum, default_value = "identity")]
    corr_link: CorrLinkArg,
    #[arg(long, value_enum, default_value = "per-zygosity")]
    center: CenterArg,
    /// Classical Falconer uses pooled covariance over pooled variance.
    #[arg(long)]
    pooled_corr: bool,
    /// Sample size in the classical Falconer SEs: twin pairs or individuals.
    #[arg(long, value_enum, default_value = "pairs")]
    falconer_count: FalconerCountArg,
    /// Ridge added to the Fisher-scoring system, relative to its mean diagonal.
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Write the fit(s) as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write per-level proportions with intervals as CSV (covariate fits).
    #[arg(long)]
    profile_csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Mvt,
    Blgp,
    UnequalVar,
    Sex,
    Age,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    scenario: ScenarioArg,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// MZ pairs (per sex for the sex scenario).
    #[arg(long)]
    n_mz: Option<usize>,
    #[arg(long)]
    n_dz: Option<usize>,
    /// t degrees of freedom (mvt).
    #[arg(long, default_value_t = 4.5)]
    df: f64,
    /// LGP dispersion (blgp).
    #[arg(long, default_value_t = 0.35, allow_hyphen_values = true)]
    lambda: f64,
    /// Variance components A,C,E (mvt, blgp, DZ group of unequal-var).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    ace: Vec<f64>,
}

#[derive(Args)]
struct StudyArgs {
    /// JSON study configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<ScenarioArg>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    /// Directory for summary.md, summary.csv, replicates.csv and profile.csv.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Study(a) => run_study(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn fit_options(a: &FitArgs) -> FitOptions {
    let mut opts = FitOptions {
        var_link: match a.var_link {
            VarLinkArg::Identity => VarianceLink::Identity,
            VarLinkArg::Log => VarianceLink::Log,
        },
        corr_link: match a.corr_link {
            CorrLinkArg::Identity => CorrLink::Identity,
            CorrLinkArg::FisherZ => CorrLink::FisherZ,
        },
        pooled_corr: a.pooled_corr,
        falconer_count: match a.falconer_count {
            FalconerCountArg::Pairs => FalconerCount::Pairs,
            FalconerCountArg::Individuals => FalconerCount::Individuals,
        },
        ..FitOptions::default()
    };
    opts.solver.ridge = a.ridge;
    opts.solver.max_iter = a.max_iter;
    opts
}

fn expect_count<T>(flag: &str, values: &[T], n: usize) -> twingee::Result<()> {
    if values.is_empty() || values.len() == n {
        Ok(())
    } else {
        Err(Error::Usage(format!("--{flag} takes {n} comma-separated values, got {}", values.len())))
    }
}

/// Loads the CSV, residualizes on `--adjust` columns and centers.
fn prepare(a: &FitArgs) -> twingee::Result<TwinDataset> {
    if a.trait_cols.len() != 2 {
        return Err(Error::Usage("--trait-cols takes two comma-separated column names".into()));
    }
    expect_count("contrast", &a.contrast, 2)?;
    let var_cov = a.var_covariate.as_ref().or(a.age_covariate.as_ref());
    let mut covs: Vec<String> = a.adjust.clone();
    if let Some(v) = var_cov {
        if !covs.contains(v) {
            covs.push(v.clone());
        }
    }
    let mut opts = ReadOptions::new(&a.trait_cols[0], &a.trait_cols[1], &a.zygosity_col).covariates(&covs);
    if let Some(col) = &a.sex_col {
        opts = opts.sex(col, &a.sex_one);
    }
    let mut data = read_csv(&a.input, &opts)?;

    if !a.adjust.is_empty() {
        let idx: Vec<usize> = a
            .adjust
            .iter()
            .map(|c| data.covariate_index(c))
            .collect::<twingee::Result<_>>()?;
        let subset = TwinDataset::new(
            data.pairs
                .iter()
                .map(|p| {
                    let mut q = p.clone();
                    q.covariates = idx.iter().map(|&i| p.covariates[i]).collect();
                    q
                })
                .collect(),
            a.adjust.clone(),
        )?;
        let (resid, _) = residualize(&subset)?;
        for (p, r) in data.pairs.iter_mut().zip(&resid.pairs) {
            p.y1 = r.y1;
            p.y2 = r.y2;
        }
    }
    match a.center {
        CenterArg::PerZygosity => center(&data, CenterMode::PerZygosity),
        CenterArg::Global => center(&data, CenterMode::Global),
        CenterArg::None => Ok(data),
    }
}

fn interval(i: [f64; 2]) -> String {
    format!("[{}, {}]", fmt_g6(i[0]), fmt_g6(i[1]))
}

fn print_inference_header(first: &str) {
    println!(
        "{:<14} {:>10} {:>10} {:>24} {:>10} {:>10} {:>24} {:>10} {:>10}",
        first, "h2", "se", "95% CI", "c2", "se", "95% CI", "e2", "se"
    );
}

fn print_inference(first: &str, i: &ProportionInference) {
    let p = i.proportions;
    println!(
        "{:<14} {:>10} {:>10} {:>24} {:>10} {:>10} {:>24} {:>10} {:>10}",
        first,
        fmt_g6(p.h2),
        fmt_g6(i.se_h2),
        interval(i.ci_h2),
        fmt_g6(p.c2),
        fmt_g6(i.se_c2),
        interval(i.ci_c2),
        fmt_g6(p.e2),
        fmt_g6(i.se_e2)
    );
}

fn warn_diagnostics(label: &str, d: &twingee::estimators::Diagnostics) {
    if !d.converged {
        eprintln!("warning: {label} did not converge after {} iterations", d.iterations);
    }
    if d.negative_components {
        eprintln!("warning: {label} has a negative variance component");
    }
    if d.out_of_range {
        eprintln!("warning: {label} has a proportion outside [0, 1]");
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> twingee::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run_fit(a: FitArgs) -> twingee::Result<ExitCode> {
    let data = prepare(&a)?;
    let opts = fit_options(&a);
    println!("{} MZ pairs, {} DZ pairs", data.n_mz(), data.n_dz());

    let spec = match (&a.var_covariate, &a.age_covariate) {
        (Some(v), _) => Some(CovariateSpec::linear(v)),
        (None, Some(v)) => Some(CovariateSpec::quadratic(v)),
        (None, None) => None,
    };

    let Some(spec) = spec else {
        let mut fits: Vec<FitResult> = Vec::new();
        for e in a.estimator.estimators() {
            fits.push(fit(&data, e, &opts)?);
        }
        print_inference_header("estimator");
        for f in &fits {
            print_inference(f.estimator.name(), &f.inference);
        }
        for f in &fits {
            warn_diagnostics(f.estimator.name(), &f.diagnostics);
        }
        if let Some(path) = &a.json {
            if fits.len() == 1 {
                write_json(path, &fits[0])?;
            } else {
                write_json(path, &fits)?;
            }
        }
        let converged = fits.iter().all(|f| f.diagnostics.converged);
        return Ok(if converged { ExitCode::SUCCESS } else { ExitCode::from(2) });
    };

    let estimators: Vec<Estimator> = match a.estimator {
        EstimatorArg::All => vec![Estimator::Gee2Nace, Estimator::Gee2Falconer],
        other => other.estimators(),
    };
    let levels = (!a.levels.is_empty()).then_some(a.levels.as_slice());
    let mut fits: Vec<CovariateFit> = Vec::new();
    for e in estimators {
        fits.push(fit_with_variance_covariates(&data, e, &spec, levels, &opts)?);
    }
    for f in &fits {
        println!("\n{} with {} dependence", f.estimator, f.covariate);
        print_inference_header(&f.covariate);
        for l in &f.levels {
            print_inference(&fmt_g6(l.value), &l.inference);
        }
        if let [x, y] = a.contrast[..] {
            let find = |v: f64| {
                f.levels
                    .iter()
                    .position(|l| l.value == v)
                    .ok_or_else(|| Error::Usage(format!("contrast level {v} is not a reported level")))
            };
            let t: WaldTest = f.contrast(find(x)?, find(y)?, Quantity::H2)?;
            println!(
                "h2({}) - h2({}) = {} (se {}), z = {}, p = {}",
                fmt_g6(x),
                fmt_g6(y),
                fmt_g6(t.estimate),
                fmt_g6(t.se),
                fmt_g6(t.z),
                fmt_g6(t.p_value)
            );
        }
        warn_diagnostics(f.estimator.name(), &f.diagnostics);
    }
    if let Some(path) = &a.json {
        if fits.len() == 1 {
            write_json(path, &fits[0])?;
        } else {
            write_json(path, &fits)?;
        }
    }
    if let Some(path) = &a.profile_csv {
        let rows: Vec<_> = fits.iter().flat_map(study::fit_profile).collect();
        let file = std::fs::File::create(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        study::write_profile_csv(&rows, file)?;
    }
    let converged = fits.iter().all(|f| f.diagnostics.converged);
    Ok(if converged { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn scenario_from(a: &SimulateArgs) -> twingee::Result<Scenario> {
    expect_count("ace", &a.ace, 3)?;
    let alpha = match a.ace[..] {
        [sa, sc, se] => Some(AceParams::new(sa, sc, se)),
        _ => None,
    };
    let mut s = match a.scenario {
        ScenarioArg::Mvt => Scenario::mvt_default(),
        ScenarioArg::Blgp => Scenario::blgp_default(),
        ScenarioArg::UnequalVar => Scenario::unequal_var_default(),
        ScenarioArg::Sex => Scenario::sex_default(),
        ScenarioArg::Age => Scenario::age_default(),
    };
    match &mut s {
        Scenario::Mvt { n_mz, n_dz, alpha: al, df } => {
            set_sizes(n_mz, n_dz, a);
            *df = a.df;
            if let Some(x) = alpha {
                *al = x;
            }
        }
        Scenario::Blgp {
            n_mz,
            n_dz,
            alpha: al,
            lambda,
        } => {
            set_sizes(n_mz, n_dz, a);
            *lambda = a.lambda;
            if let Some(x) = alpha {
                *al = x;
            }
        }
        Scenario::UnequalVarNormal {
            n_mz,
            n_dz,
            alpha_dz,
            require_equal_proportions,
            ..
        } => {
            set_sizes(n_mz, n_dz, a);
            if let Some(x) = alpha {
                *alpha_dz = x;
                *require_equal_proportions = false;
            }
        }
        Scenario::SexNormal { n_mz, n_dz, .. } => set_sizes(n_mz, n_dz, a),
        Scenario::AgeFalconer(AgeFalconerConfig { n_mz, n_dz, .. }) => set_sizes(n_mz, n_dz, a),
    }
    s.validate()?;
    Ok(s)
}

fn set_sizes(n_mz: &mut usize, n_dz: &mut usize, a: &SimulateArgs) {
    if let Some(n) = a.n_mz {
        *n_mz = n;
    }
    if let Some(n) = a.n_dz {
        *n_dz = n;
    }
}

fn run_simulate(a: SimulateArgs) -> twingee::Result<ExitCode> {
    let cfg = ScenarioConfig::new(scenario_from(&a)?, a.seed);
    let data = cfg.generate()?;
    write_csv(&data, &a.out)?;
    println!("wrote {} pairs to {}", data.len(), a.out.display());
    println!("{:<6} {:>8} {:>12} {:>12} {:>12}", "group", "pairs", "mean", "variance", "corr");
    for z in [Zygosity::Mz, Zygosity::Dz] {
        let group = data.filter(|p| p.zygosity == z);
        let n = group.len();
        let mean = group.pairs.iter().map(|p| p.y1 + p.y2).sum::<f64>() / (2 * n.max(1)) as f64;
        let var = group.sample_variance(z).unwrap_or(f64::NAN);
        let pairs: Vec<(f64, f64)> = group.pairs.iter().map(|p| (p.y1, p.y2)).collect();
        let corr = twingee::estimators::pearson(&pairs).unwrap_or(f64::NAN);
        println!("{:<6} {:>8} {:>12} {:>12} {:>12}", z.as_str(), n, fmt_g6(mean), fmt_g6(var), fmt_g6(corr));
    }
    if let Ok(r) = group_correlations(&data, false) {
        let p = twingee::estimators::falconer_point(&r);
        println!("Falconer h2 {}, c2 {}", fmt_g6(p.h2), fmt_g6(p.c2));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_study(a: StudyArgs) -> twingee::Result<ExitCode> {
    let mut cfg: StudyConfig = match (&a.config, a.preset) {
        (Some(path), _) => StudyConfig::from_json_file(path)?,
        (None, Some(p)) => {
            let name = match p {
                ScenarioArg::Mvt => "mvt",
                ScenarioArg::Blgp => "blgp",
                ScenarioArg::UnequalVar => "unequal-var",
                ScenarioArg::Sex => "sex",
                ScenarioArg::Age => "age",
            };
            study::presets::by_name(name, 1000, 1)?
        }
        (None, None) => return Err(Error::Usage("give either --config or --preset".into())),
    };
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if let Some(s) = a.seed {
        cfg.scenario.seed = s;
    }
    if let Some(t) = a.threads {
        cfg.parallelism = t;
    }
    if let Some(dir) = &a.out_dir {
        cfg.outputs = StudyOutputs {
            summary_md: Some(dir.join("summary.md")),
            summary_csv: Some(dir.join("summary.csv")),
            replicates_csv: Some(dir.join("replicates.csv")),
            profile_csv: cfg
                .estimators
                .iter()
                .any(|e| e.covariate.is_some())
                .then(|| dir.join("profile.csv")),
        };
    }
    let run = study::run_study(&cfg)?;
    study::write_summary_markdown(&run.summary, std::io::stdout().lock())?;
    study::write_outputs(&run, &cfg.outputs)?;
    Ok(ExitCode::SUCCESS)
}
