//! Command-line front end: `infer`, `simulate`, `fit` and `replay`.
//!
//! Every command writes a `manifest.json` recording the resolved arguments,
//! seeds, input hashes and crate version; `replay` re-runs a manifest.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::confidence::{ConfidenceLevel, LcbReport};
use crate::covariate::{CovariateModel, GaussianJointModel};
use crate::data::{split, Dataset};
use crate::error::{FloodgateError, Result};
use crate::mmse::{floodgate_lcb_scale_free, FloodgateConfig};
use crate::regression::{CvConfig, Fitter, WorkingRegression};
use crate::report::write_lcb_csv;
use crate::sim::{focal_model, run_experiment, ExperimentSpec, Method};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const THREADS_ENV: &str = "FLOODGATE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "floodgate",
    version,
    about = "Model-X lower confidence bounds for variable importance"
)]
pub struct Cli {
    /// Worker threads (default: logical cores). FLOODGATE_THREADS overrides.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lower confidence bounds for one or more focal column groups.
    Infer(InferArgs),
    /// Run a simulation spec and write detail and summary CSVs.
    Simulate(SimulateArgs),
    /// Fit a working regression and save it as JSON.
    Fit(FitArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    Mmse,
    MmseScaleFree,
    Macm,
    Cosufficient,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct InferArgs {
    /// CSV with columns y, x1.., z1..
    #[arg(long)]
    pub data: PathBuf,
    /// Covariate model JSON over all covariates `[x | z]`.
    #[arg(long)]
    pub model: PathBuf,
    /// Working regression JSON (all rows are used for inference).
    #[arg(long, conflicts_with = "fit")]
    pub mu: Option<PathBuf>,
    /// Fit the working regression on a split of the data instead.
    #[arg(long)]
    pub fit: Option<String>,
    #[arg(long, value_enum, default_value = "mmse")]
    pub method: MethodName,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Monte Carlo copies (mMSE default 500, 0 = closed form; MACM default 100).
    #[arg(long)]
    pub k: Option<usize>,
    /// MACM copies for the conditional mean (default 4n).
    #[arg(long)]
    pub m: Option<usize>,
    /// MACM: closed-form conditional probabilities.
    #[arg(long)]
    pub exact: bool,
    /// Co-sufficient batch size.
    #[arg(long, default_value_t = 100)]
    pub n2: usize,
    /// Co-sufficient Monte Carlo copies per batch (0 = closed form).
    #[arg(long, default_value_t = 100)]
    pub mc_k: usize,
    /// Use Y rather than Y - E[mu | Z] in the numerator.
    #[arg(long)]
    pub no_center_y: bool,
    /// 1-based columns of `[x | z]`; groups separated by ';', members by ','.
    /// Defaults to one group holding the x block.
    #[arg(long)]
    pub x_cols: Option<String>,
    /// Fraction of rows used for fitting with --fit.
    #[arg(long, default_value_t = 0.5)]
    pub split: f64,
    #[arg(long, default_value_t = 10)]
    pub cv_folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for lcb.csv and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub fitter: String,
    #[arg(long, default_value_t = 10)]
    pub cv_folds: usize,
    /// Fix the penalty instead of cross-validating.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON; the manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Override the recorded output location.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "lowercase")]
pub enum Resolved {
    Infer(InferArgs),
    Simulate(SimulateArgs),
    Fit(FitArgs),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    #[serde(flatten)]
    pub resolved: Resolved,
    /// The fully parsed experiment spec for `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ExperimentSpec>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<InputHash>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn hash_inputs(paths: &[&Path]) -> Result<Vec<InputHash>> {
    paths
        .iter()
        .map(|p| {
            Ok(InputHash {
                path: p.to_path_buf(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

fn read_json_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(FloodgateError::from)
}

/// Parse `"1,2;3"` into `[[1, 2], [3]]`.
pub fn parse_groups(text: &str, ncols: usize) -> Result<Vec<Vec<usize>>> {
    let mut groups = Vec::new();
    for part in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let mut g = Vec::new();
        for tok in part.split(',').map(str::trim) {
            let j: usize = tok.parse().map_err(|_| {
                FloodgateError::validation("x-cols", format!("`{tok}` is not a column number"))
            })?;
            if j == 0 || j > ncols {
                return Err(FloodgateError::validation(
                    "x-cols",
                    format!("column {j} is outside 1..={ncols}"),
                ));
            }
            if g.contains(&j) {
                return Err(FloodgateError::validation(
                    "x-cols",
                    format!("column {j} repeated within a group"),
                ));
            }
            g.push(j);
        }
        groups.push(g);
    }
    if groups.is_empty() {
        return Err(FloodgateError::validation(
            "x-cols",
            "no column groups given",
        ));
    }
    Ok(groups)
}

/// The covariate model with the 1-based `group` as its focal set.
pub fn model_for_group(model: &CovariateModel, group: &[usize]) -> Result<CovariateModel> {
    if let [j] = group {
        return focal_model(model, j - 1);
    }
    match model {
        CovariateModel::GaussianJoint(g) => {
            let mut g = g.clone();
            g.focal = group.to_vec();
            let m = CovariateModel::GaussianJoint(g);
            m.validate()?;
            Ok(m)
        }
        CovariateModel::GaussianLinear(g) => {
            Ok(CovariateModel::GaussianJoint(g.to_joint(group.to_vec())?))
        }
        CovariateModel::Ar1(a) => {
            a.validate()?;
            let cov = a.covariance();
            let m = CovariateModel::GaussianJoint(GaussianJointModel {
                mean: vec![0.0; a.dim],
                cov: (0..a.dim)
                    .map(|i| cov.row(i).iter().copied().collect())
                    .collect(),
                focal: group.to_vec(),
            });
            m.validate()?;
            Ok(m)
        }
        _ => Err(FloodgateError::Unsupported(
            "grouped focal sets need a Gaussian model".into(),
        )),
    }
}

fn group_label(group: &[usize], dx: usize) -> String {
    group
        .iter()
        .map(|&j| {
            if j <= dx {
                format!("x{j}")
            } else {
                format!("z{}", j - dx)
            }
        })
        .collect::<Vec<_>>()
        .join("+")
}

fn parse_fitter(name: &str, field: &str) -> Result<Fitter> {
    Fitter::parse(name).ok_or_else(|| {
        FloodgateError::validation(
            field,
            format!("unknown fitter `{name}` (ols, ridge, lasso, logit_l1, logit_l2)"),
        )
    })
}

/// Group reports for `infer`, in group order.
pub fn infer_reports(
    args: &InferArgs,
    data: &Dataset,
    model: &CovariateModel,
    mu: Option<WorkingRegression>,
) -> Result<Vec<(String, LcbReport)>> {
    let alpha = ConfidenceLevel::new(args.alpha)?;
    let p = data.dx() + data.dz();
    if model.dim() != p {
        return Err(FloodgateError::validation(
            "model",
            format!("describes {} covariates but the data has {p}", model.dim()),
        ));
    }
    let groups = match &args.x_cols {
        Some(t) => parse_groups(t, p)?,
        None => vec![(1..=data.dx()).collect()],
    };
    if groups.iter().any(Vec::is_empty) {
        return Err(FloodgateError::validation(
            "x-cols",
            "the data has no x columns; pass --x-cols",
        ));
    }
    if args.method == MethodName::Cosufficient && !matches!(model, CovariateModel::Dmc(_)) {
        // (1, Z) has p = d_z + 1 columns and the batch statistic needs n2 > p + 2.
        for g in &groups {
            let dz = p - g.len();
            if args.n2 <= dz + 3 {
                return Err(FloodgateError::validation(
                    "n2",
                    format!(
                        "batch size {} violates n2 > p + 2 = {} with p = d_z + 1 = {}",
                        args.n2,
                        dz + 3,
                        dz + 1
                    ),
                ));
            }
        }
    }
    let (infer_data, mu) = match (mu, &args.fit) {
        (Some(mu), None) => (data.clone(), mu),
        (None, Some(name)) => {
            let fitter = parse_fitter(name, "fit")?;
            let parts = split(data, args.split, args.seed)?;
            let cv = CvConfig {
                folds: args.cv_folds,
                ..CvConfig::default()
            };
            (
                parts.infer_part,
                fitter.fit(&parts.fit_part, &cv, args.seed)?,
            )
        }
        _ => {
            return Err(FloodgateError::validation(
                "mu",
                "pass exactly one of --mu or --fit",
            ))
        }
    };
    if mu.dx() + mu.dz() != p {
        return Err(FloodgateError::validation(
            "mu",
            format!(
                "takes {} covariates but the data has {p}",
                mu.dx() + mu.dz()
            ),
        ));
    }
    let center_y = !args.no_center_y;
    let mut out = Vec::with_capacity(groups.len());
    for (gi, g) in groups.iter().enumerate() {
        let focal0: Vec<usize> = g.iter().map(|j| j - 1).collect();
        let d = infer_data.refocus(&focal0)?;
        let m = mu.refocus(&focal0)?;
        let law = model_for_group(model, g)?;
        let seed = crate::rng::derive_seed(args.seed, &[gi as u64]);
        let rep = match args.method {
            MethodName::Mmse => Method::MmseMc {
                k: args.k.unwrap_or(500),
            }
            .run(&d, &m, &law, alpha, center_y, seed)?,
            MethodName::MmseScaleFree => floodgate_lcb_scale_free(
                &d,
                &m,
                &law,
                &FloodgateConfig {
                    alpha,
                    big_k: args.k.unwrap_or(500),
                    center_y,
                    seed,
                },
            )?,
            MethodName::Macm => Method::Macm {
                m: args.m,
                k: args.k.unwrap_or(100),
                exact: args.exact,
            }
            .run(&d, &m, &law, alpha, center_y, seed)?,
            MethodName::Cosufficient => Method::Cosufficient {
                n2: args.n2,
                mc_k: args.mc_k,
            }
            .run(&d, &m, &law, alpha, center_y, seed)?,
        };
        out.push((group_label(g, data.dx()), rep));
    }
    Ok(out)
}

pub fn cmd_infer(args: &InferArgs) -> Result<RunManifest> {
    let data = Dataset::from_csv_path(&args.data)?;
    let model: CovariateModel = serde_json::from_str(&read_json_file(&args.model)?)?;
    model.validate()?;
    let mu = match &args.mu {
        Some(p) => Some(WorkingRegression::from_json(&read_json_file(p)?)?),
        None => None,
    };
    let reports = infer_reports(args, &data, &model, mu)?;
    fs::create_dir_all(&args.out)?;
    let csv_path = args.out.join("lcb.csv");
    write_lcb_csv(fs::File::create(&csv_path)?, &reports, args.seed)?;
    let mut inputs = vec![args.data.as_path(), args.model.as_path()];
    if let Some(p) = &args.mu {
        inputs.push(p);
    }
    let manifest = RunManifest {
        version: VERSION.into(),
        resolved: Resolved::Infer(args.clone()),
        spec: None,
        seeds: vec![args.seed],
        inputs: hash_inputs(&inputs)?,
        outputs: hash_inputs(&[&csv_path])?,
    };
    write_manifest(&args.out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<RunManifest> {
    let spec = ExperimentSpec::from_json(&read_json_file(&args.spec)?)?;
    let result = run_experiment(&spec)?;
    fs::create_dir_all(&args.out_dir)?;
    let detail = args.out_dir.join("detail.csv");
    let summary = args.out_dir.join("summary.csv");
    result.write_detail_csv(fs::File::create(&detail)?)?;
    result.write_summary_csv(fs::File::create(&summary)?)?;
    let manifest = RunManifest {
        version: VERSION.into(),
        resolved: Resolved::Simulate(args.clone()),
        seeds: vec![spec.base_seed],
        spec: Some(spec),
        inputs: hash_inputs(&[&args.spec])?,
        outputs: hash_inputs(&[&detail, &summary])?,
    };
    write_manifest(&args.out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn fit_regression(args: &FitArgs, data: &Dataset) -> Result<WorkingRegression> {
    let fitter = parse_fitter(&args.fitter, "fitter")?;
    let mut cv = CvConfig {
        folds: args.cv_folds,
        ..CvConfig::default()
    };
    if let Some(l) = args.lambda {
        if fitter == Fitter::Ols {
            return Err(FloodgateError::validation("lambda", "OLS has no penalty"));
        }
        if !(l >= 0.0 && l.is_finite()) {
            return Err(FloodgateError::validation(
                "lambda",
                "must be finite and nonnegative",
            ));
        }
        cv.lambda_grid = Some(vec![l]);
    }
    fitter.fit(data, &cv, args.seed)
}

pub fn cmd_fit(args: &FitArgs) -> Result<RunManifest> {
    let data = Dataset::from_csv_path(&args.data)?;
    let mu = fit_regression(args, &data)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&args.out, mu.to_json()? + "\n")?;
    let manifest = RunManifest {
        version: VERSION.into(),
        resolved: Resolved::Fit(args.clone()),
        spec: None,
        seeds: vec![args.seed],
        inputs: hash_inputs(&[&args.data])?,
        outputs: hash_inputs(&[&args.out])?,
    };
    let mut mpath = args.out.clone().into_os_string();
    mpath.push(".manifest.json");
    write_manifest(Path::new(&mpath), &manifest)?;
    Ok(manifest)
}

pub fn cmd_replay(args: &ReplayArgs) -> Result<RunManifest> {
    let manifest: RunManifest = serde_json::from_str(&read_json_file(&args.manifest)?)?;
    for input in &manifest.inputs {
        let now = sha256_file(&input.path)?;
        if now != input.sha256 {
            return Err(FloodgateError::validation(
                "inputs",
                format!(
                    "{} changed since the manifest was written",
                    input.path.display()
                ),
            ));
        }
    }
    match manifest.resolved {
        Resolved::Infer(mut a) => {
            if let Some(o) = &args.out {
                a.out = o.clone();
            }
            cmd_infer(&a)
        }
        Resolved::Simulate(mut a) => {
            if let Some(o) = &args.out {
                a.out_dir = o.clone();
            }
            cmd_simulate(&a)
        }
        Resolved::Fit(mut a) => {
            if let Some(o) = &args.out {
                a.out = o.clone();
            }
            cmd_fit(&a)
        }
    }
}

/// Resolve the worker count: FLOODGATE_THREADS, then --threads.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => Some(v.trim().parse::<usize>().map_err(|_| {
            FloodgateError::validation(THREADS_ENV, format!("`{v}` is not a thread count"))
        })?),
        _ => flag,
    };
    if n == Some(0) {
        return Err(FloodgateError::validation("threads", "must be at least 1"));
    }
    Ok(n)
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = resolve_threads(cli.threads)? {
        // A pool may already exist when embedded; the first one wins.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match &cli.command {
        Command::Infer(a) => cmd_infer(a).map(|_| ()),
        Command::Simulate(a) => cmd_simulate(a).map(|_| ()),
        Command::Fit(a) => cmd_fit(a).map(|_| ()),
        Command::Replay(a) => cmd_replay(a).map(|_| ()),
    }
}

/// Process exit code for a result: 0 success, 3 I/O, 2 anything else.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_io() => 3,
        Err(_) => 2,
    }
}
