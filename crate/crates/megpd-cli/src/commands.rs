//! Subcommand implementations and their argument structs.

use clap::{Args, ValueEnum};
use megpd::dataset::Dataset;
use megpd::diagnostics::{
    bootstrap_envelope, chi_empirical, default_chi_levels, default_qq_probs, qq_model_vs_data,
    BootstrapMode, ChiCurve, QqTarget,
};
use megpd::hybrid::{fit_hybrid, HybridOptions, MomCriterion};
use megpd::model::{self, MegpdParams};
use megpd::nbe::{
    ensemble_estimate, load_model, save_model, train_nbe, EnsembleRule, NbeArchitecture, NbeModel,
    PriorSpec, TrainConfig,
};
use megpd::station::{
    load_station_csv_with, make_pair_dataset, LoadOptions, PairOptions, StationFormat,
};
use megpd::streams::derive_seed;
use megpd::{stats, Error, Tail};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Error carrying the process exit code.
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidParameter(_) | Error::Domain(_) => 2,
            Error::TrainingDiverged(_) => 4,
            Error::FitStage { source, .. } if matches!(**source, Error::TrainingDiverged(_)) => 4,
            _ => 3,
        };
        CliError {
            code,
            message: format!("{e}"),
        }
    }
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

type CliResult = Result<(), CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitMethod {
    Hybrid,
    Nbe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Covariance,
    Moments,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnsembleRuleArg {
    BestValidation,
    PerParameterMedian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    EcaD,
    Plain,
}

fn parse_params(values: &[f64]) -> Result<MegpdParams<f64>, CliError> {
    if values.len() != 6 {
        return Err(CliError::config(format!(
            "--params needs 6 comma-separated values, got {}",
            values.len()
        )));
    }
    let mut arr = [0.0; 6];
    arr.copy_from_slice(values);
    Ok(MegpdParams::from_array(arr)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let mut f = std::fs::File::create(path).map_err(Error::from)?;
    let body = serde_json::to_string_pretty(value).map_err(Error::from)?;
    f.write_all(body.as_bytes()).map_err(Error::from)?;
    f.write_all(b"\n").map_err(Error::from)?;
    Ok(())
}

fn default_manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct SimulateArgs {
    /// kappa,sigma,xi,theta_lower,theta_upper,theta_omega
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub params: Vec<f64>,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path (default: `<out>.manifest.json`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Serialize)]
struct SimulateManifest {
    command: &'static str,
    version: &'static str,
    params: [f64; 6],
    n: usize,
    seed: u64,
    out: PathBuf,
}

pub fn simulate(args: SimulateArgs) -> CliResult {
    let params = parse_params(&args.params)?;
    let data = model::simulate(&params, args.n, args.seed)?;
    data.write_csv(&args.out)?;
    let manifest = SimulateManifest {
        command: "simulate",
        version: env!("CARGO_PKG_VERSION"),
        params: params.to_array(),
        n: args.n,
        seed: args.seed,
        out: args.out.clone(),
    };
    write_json(
        &args
            .manifest
            .unwrap_or_else(|| default_manifest_path(&args.out)),
        &manifest,
    )
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "hybrid")]
    pub method: FitMethod,
    /// Model file(s) for the neural method; repeat for an ensemble.
    #[arg(long)]
    pub model: Vec<PathBuf>,
    /// Radius quantile delimiting the lower-tail angle set.
    #[arg(long, default_value_t = 0.10)]
    pub q_lower: f64,
    /// Radius quantile delimiting the upper-tail angle set.
    #[arg(long, default_value_t = 0.95)]
    pub q_upper: f64,
    /// Simulation count of the method-of-moments stage.
    #[arg(long, default_value_t = 100_000)]
    pub m: usize,
    /// Moment-matching criterion for the weight parameter.
    #[arg(long, value_enum, default_value = "covariance")]
    pub criterion: CriterionArg,
    /// Aggregation across ensemble members.
    #[arg(long, value_enum, default_value = "best-validation")]
    pub ensemble_rule: EnsembleRuleArg,
    /// Parametric-bootstrap replicates for percentile intervals (0 = none).
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct NamedParams {
    kappa: f64,
    sigma: f64,
    xi: f64,
    theta_lower: f64,
    theta_upper: f64,
    theta_omega: f64,
}

impl NamedParams {
    fn from_array(a: [f64; 6]) -> Self {
        NamedParams {
            kappa: a[0],
            sigma: a[1],
            xi: a[2],
            theta_lower: a[3],
            theta_upper: a[4],
            theta_omega: a[5],
        }
    }
}

#[derive(Serialize)]
struct BootstrapIntervals {
    level: f64,
    replicates: usize,
    lower: NamedParams,
    upper: NamedParams,
}

#[derive(Serialize)]
struct FitOutput {
    command: &'static str,
    version: &'static str,
    method: String,
    data: PathBuf,
    n: usize,
    seed: u64,
    estimates: NamedParams,
    hybrid: Option<megpd::hybrid::HybridFit>,
    nbe_members: Option<Vec<PathBuf>>,
    bootstrap: Option<BootstrapIntervals>,
}

fn percentile_params(samples: &[[f64; 6]], p: f64) -> NamedParams {
    let mut arr = [0.0; 6];
    for (j, slot) in arr.iter_mut().enumerate() {
        let col: Vec<f64> = samples.iter().map(|s| s[j]).collect();
        *slot = stats::quantile(&col, p);
    }
    NamedParams::from_array(arr)
}

fn ensemble_rule(arg: EnsembleRuleArg) -> EnsembleRule {
    match arg {
        EnsembleRuleArg::BestValidation => EnsembleRule::BestValidation,
        EnsembleRuleArg::PerParameterMedian => EnsembleRule::PerParameterMedian,
    }
}

pub fn fit(args: FitArgs) -> CliResult {
    let data = Dataset::<f64>::read_csv(&args.data)?;
    let criterion = match args.criterion {
        CriterionArg::Covariance => MomCriterion::Covariance,
        CriterionArg::Moments => MomCriterion::Moments,
    };
    let models: Option<Vec<NbeModel<f64>>> = match args.method {
        FitMethod::Nbe => {
            if args.model.is_empty() {
                return Err(CliError::config(
                    "--method nbe requires at least one --model file",
                ));
            }
            Some(
                args.model
                    .iter()
                    .map(load_model)
                    .collect::<Result<_, _>>()?,
            )
        }
        FitMethod::Hybrid => None,
    };

    let refit = |data: &Dataset<f64>, seed: u64| -> Result<(MegpdParams<f64>, Option<megpd::hybrid::HybridFit>), Error> {
        match args.method {
            FitMethod::Hybrid => {
                let fit = fit_hybrid(
                    data,
                    &HybridOptions {
                        q_lower: args.q_lower,
                        q_upper: args.q_upper,
                        m: args.m,
                        seed,
                        criterion,
                    },
                )?;
                Ok((fit.params, Some(fit)))
            }
            FitMethod::Nbe => {
                let est = ensemble_estimate(
                    models.as_ref().expect("models loaded"),
                    data,
                    ensemble_rule(args.ensemble_rule),
                )?;
                Ok((est, None))
            }
        }
    };

    let (estimates, hybrid_detail) = refit(&data, args.seed)?;

    let bootstrap = if args.bootstrap > 0 {
        let samples: Vec<[f64; 6]> = (0..args.bootstrap)
            .map(|rep| -> Result<[f64; 6], Error> {
                let resim = model::simulate(
                    &estimates,
                    data.n(),
                    derive_seed(args.seed, 7_000 + rep as u64),
                )?;
                let (p, _) = refit(&resim, derive_seed(args.seed, 8_000 + rep as u64))?;
                Ok(p.to_array())
            })
            .collect::<Result<_, _>>()?;
        Some(BootstrapIntervals {
            level: 0.95,
            replicates: args.bootstrap,
            lower: percentile_params(&samples, 0.025),
            upper: percentile_params(&samples, 0.975),
        })
    } else {
        None
    };

    let out = FitOutput {
        command: "fit",
        version: env!("CARGO_PKG_VERSION"),
        method: match args.method {
            FitMethod::Hybrid => "hybrid".into(),
            FitMethod::Nbe => "nbe".into(),
        },
        data: args.data.clone(),
        n: data.n(),
        seed: args.seed,
        estimates: NamedParams::from_array(estimates.to_array()),
        hybrid: hybrid_detail,
        nbe_members: (args.method == FitMethod::Nbe).then(|| args.model.clone()),
        bootstrap,
    };
    write_json(&args.out, &out)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Training-set size (parameter-dataset pairs).
    #[arg(long, default_value_t = 100_000)]
    pub k: usize,
    /// Ensemble members to train.
    #[arg(long, default_value_t = 5)]
    pub members: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 128)]
    pub summary_dim: usize,
    /// Hidden layers in each of the two networks.
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    /// Training scalar: f32 (fast) or f64.
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: PrecisionArg,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Serialize)]
struct TrainManifest {
    command: &'static str,
    version: &'static str,
    k: usize,
    members: usize,
    width: usize,
    summary_dim: usize,
    depth: usize,
    batch_size: usize,
    learning_rate: f64,
    patience: usize,
    max_epochs: usize,
    precision: String,
    seed: u64,
    member_files: Vec<PathBuf>,
}

pub fn train(args: TrainArgs) -> CliResult {
    if args.members == 0 {
        return Err(CliError::config("--members must be at least 1"));
    }
    std::fs::create_dir_all(&args.out_dir).map_err(Error::from)?;
    let prior = PriorSpec::default();
    let arch = NbeArchitecture {
        input_dim: 2,
        psi_widths: vec![args.width; args.depth],
        summary_dim: args.summary_dim,
        phi_widths: vec![args.width; args.depth],
        output_dim: 6,
    };

    let mut log_csv = String::from("member,epoch,train_risk,val_risk\n");
    let mut member_files = Vec::new();
    for member in 0..args.members {
        let cfg = TrainConfig {
            k: args.k,
            batch_size: args.batch_size,
            learning_rate: args.learning_rate,
            patience: args.patience,
            max_epochs: args.max_epochs,
            seed: derive_seed(args.seed, member as u64),
        };
        let path = args.out_dir.join(format!("member_{member:02}.nbe"));
        let training_log = match args.precision {
            PrecisionArg::F32 => {
                let model = train_nbe::<f32>(&prior, &arch, &cfg)?;
                save_model(&model, &path)?;
                model.training_log
            }
            PrecisionArg::F64 => {
                let model = train_nbe::<f64>(&prior, &arch, &cfg)?;
                save_model(&model, &path)?;
                model.training_log
            }
        };
        for e in &training_log.epochs {
            log_csv.push_str(&format!(
                "{member},{},{},{}\n",
                e.epoch, e.train_risk, e.val_risk
            ));
        }
        member_files.push(path);
    }
    std::fs::write(args.out_dir.join("training_log.csv"), log_csv).map_err(Error::from)?;

    let manifest = TrainManifest {
        command: "train",
        version: env!("CARGO_PKG_VERSION"),
        k: args.k,
        members: args.members,
        width: args.width,
        summary_dim: args.summary_dim,
        depth: args.depth,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        patience: args.patience,
        max_epochs: args.max_epochs,
        precision: match args.precision {
            PrecisionArg::F32 => "f32".into(),
            PrecisionArg::F64 => "f64".into(),
        },
        seed: args.seed,
        member_files,
    };
    write_json(&args.out_dir.join("manifest.json"), &manifest)
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

#[derive(Args)]
#[group(id = "param_source", required = true, multiple = false)]
pub struct ParamSource {
    /// kappa,sigma,xi,theta_lower,theta_upper,theta_omega
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub params: Option<Vec<f64>>,
    /// JSON produced by `megpd fit`.
    #[arg(long)]
    pub fit: Option<PathBuf>,
}

#[derive(Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub params: ParamSource,
    /// Bootstrap replicates behind the bands.
    #[arg(long, default_value_t = 400)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Model simulation size as a multiple of the data size.
    #[arg(long, default_value_t = 100)]
    pub sim_factor: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct DiagnoseManifest {
    command: &'static str,
    version: &'static str,
    data: PathBuf,
    params: [f64; 6],
    bootstrap: usize,
    level: f64,
    sim_factor: usize,
    seed: u64,
    outputs: Vec<String>,
}

fn quantile_curve(mut values: Vec<f64>, probs: &[f64]) -> Vec<f64> {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
    probs
        .iter()
        .map(|&p| stats::quantile_sorted(&values, p))
        .collect()
}

fn target_values(target: QqTarget, d: &Dataset<f64>) -> Vec<f64> {
    match target {
        QqTarget::Margin(j) => d.column(j),
        QqTarget::Sum => d.radii(),
    }
}

pub fn diagnose(args: DiagnoseArgs) -> CliResult {
    let data = Dataset::<f64>::read_csv(&args.data)?;
    let params = if let Some(values) = &args.params.params {
        parse_params(values)?
    } else {
        let path = args.params.fit.as_ref().expect("clap group");
        let body = std::fs::read_to_string(path).map_err(Error::from)?;
        let json: serde_json::Value = serde_json::from_str(&body).map_err(Error::from)?;
        let est = json.get("estimates").ok_or_else(|| {
            CliError::config(format!("{} has no `estimates` object", path.display()))
        })?;
        let field = |name: &str| -> Result<f64, CliError> {
            est.get(name)
                .and_then(|v| v.as_f64())
                .ok_or_else(|| CliError::config(format!("missing estimate `{name}`")))
        };
        MegpdParams::from_array([
            field("kappa")?,
            field("sigma")?,
            field("xi")?,
            field("theta_lower")?,
            field("theta_upper")?,
            field("theta_omega")?,
        ])?
    };

    std::fs::create_dir_all(&args.out_dir).map_err(Error::from)?;
    let n = data.n();
    let m = (args.sim_factor.max(1) * n).min(2_000_000);
    let mode = BootstrapMode::Parametric(params);
    let mut outputs = Vec::new();

    // Tail-dependence curves with parametric bands and a model center curve.
    let model_sim = model::simulate(&params, m, derive_seed(args.seed, 1))?;
    for (tail, name) in [(Tail::Upper, "chi_upper.csv"), (Tail::Lower, "chi_lower.csv")] {
        let levels = default_chi_levels(tail);
        let chi_hat = chi_empirical(&data, tail, &levels)?;
        let chi_model = chi_empirical(&model_sim, tail, &levels)?;
        let levels_stat = levels.clone();
        let env = bootstrap_envelope(
            move |d: &Dataset<f64>| chi_empirical(d, tail, &levels_stat).expect("chi on bootstrap"),
            &data,
            &mode,
            args.bootstrap,
            args.level,
            derive_seed(args.seed, 2 + tail as u64),
        )?;
        let curve = ChiCurve {
            levels,
            chi_hat,
            tail,
            chi_model: Some(chi_model),
            pointwise_band: Some(env.pointwise),
            overall_band: Some(env.overall),
            b: args.bootstrap,
        };
        let path = args.out_dir.join(name);
        megpd::diagnostics::chi_to_csv(&curve, &path)?;
        outputs.push(name.to_string());
    }

    // QQ data for both margins and the sum.
    let probs = default_qq_probs();
    for (idx, (target, name)) in [
        (QqTarget::Margin(0), "qq_margin1.csv"),
        (QqTarget::Margin(1), "qq_margin2.csv"),
        (QqTarget::Sum, "qq_sum.csv"),
    ]
    .into_iter()
    .enumerate()
    {
        let mut qq = qq_model_vs_data(
            &data,
            &params,
            target,
            &probs,
            m,
            derive_seed(args.seed, 10 + idx as u64),
        )?;
        let probs_stat = probs.clone();
        let env = bootstrap_envelope(
            move |d: &Dataset<f64>| quantile_curve(target_values(target, d), &probs_stat),
            &data,
            &mode,
            args.bootstrap,
            args.level,
            derive_seed(args.seed, 20 + idx as u64),
        )?;
        qq.pointwise_band = Some(env.pointwise);
        qq.overall_band = Some(env.overall);
        let path = args.out_dir.join(name);
        megpd::diagnostics::qq_to_csv(&qq, &path)?;
        outputs.push(name.to_string());
    }

    let manifest = DiagnoseManifest {
        command: "diagnose",
        version: env!("CARGO_PKG_VERSION"),
        data: args.data.clone(),
        params: params.to_array(),
        bootstrap: args.bootstrap,
        level: args.level,
        sim_factor: args.sim_factor,
        seed: args.seed,
        outputs,
    };
    write_json(&args.out_dir.join("manifest.json"), &manifest)
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub station_a: PathBuf,
    #[arg(long)]
    pub station_b: PathBuf,
    #[arg(long, value_enum, default_value = "eca-d")]
    pub format: FormatArg,
    /// Calendar months retained.
    #[arg(long, value_delimiter = ',', default_values_t = vec![10u32, 11, 12, 1, 2])]
    pub months: Vec<u32>,
    /// Season-year window `start:end`; season s spans Oct(s-1)..Feb(s).
    #[arg(long, default_value = "1999:2024")]
    pub season_years: String,
    /// Keep raw units instead of scaling by the standard deviation.
    #[arg(long)]
    pub no_scale: bool,
    /// Keep suspect-quality rows instead of dropping them.
    #[arg(long)]
    pub keep_suspect: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path (default: `<out>.manifest.json`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Serialize)]
struct IngestManifest {
    command: &'static str,
    version: &'static str,
    station_a: PathBuf,
    station_b: PathBuf,
    format: String,
    months: Vec<u32>,
    season_years: (i32, i32),
    scaled: bool,
    drop_suspect: bool,
    out: PathBuf,
    provenance: megpd::dataset::Provenance,
    scaling_factors: Option<[f64; 2]>,
    warnings: Vec<String>,
}

pub fn ingest(args: IngestArgs) -> CliResult {
    let (start, end) = args
        .season_years
        .split_once(':')
        .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
        .ok_or_else(|| CliError::config("--season-years must look like 1999:2024"))?;
    let format = match args.format {
        FormatArg::EcaD => StationFormat::EcaD,
        FormatArg::Plain => StationFormat::Plain,
    };
    let load_opts = LoadOptions {
        drop_suspect: !args.keep_suspect,
    };
    let a = load_station_csv_with(&args.station_a, format, &load_opts)?;
    let b = load_station_csv_with(&args.station_b, format, &load_opts)?;
    for w in a.warnings.iter().chain(&b.warnings) {
        eprintln!("megpd: warning: {w}");
    }
    let opts = PairOptions {
        months: args.months.clone(),
        season_years: (start, end),
        scale: !args.no_scale,
    };
    let mut dataset = make_pair_dataset(&a, &b, &opts)?;
    // Canonical dataset header; station identities live in the manifest.
    dataset.labels = ["y1".into(), "y2".into()];
    dataset.write_csv(&args.out)?;

    let manifest = IngestManifest {
        command: "ingest",
        version: env!("CARGO_PKG_VERSION"),
        station_a: args.station_a.clone(),
        station_b: args.station_b.clone(),
        format: match args.format {
            FormatArg::EcaD => "eca-d".into(),
            FormatArg::Plain => "plain".into(),
        },
        months: args.months.clone(),
        season_years: (start, end),
        scaled: !args.no_scale,
        drop_suspect: !args.keep_suspect,
        out: args.out.clone(),
        provenance: dataset.provenance.clone().unwrap_or_default(),
        scaling_factors: dataset.scaling_factors,
        warnings: a.warnings.iter().chain(&b.warnings).cloned().collect(),
    };
    write_json(
        &args
            .manifest
            .unwrap_or_else(|| default_manifest_path(&args.out)),
        &manifest,
    )
}
