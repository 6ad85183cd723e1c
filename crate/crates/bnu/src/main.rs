//! Command-line driver: scene simulation, unmixing, evaluation, and the
//! end-to-end Monte Carlo pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use bnu::config::{RunConfig, SweepVariable};
use bnu::error::{Error, Result};
use bnu::io::{load_matrix, save_matrix, save_result};
use bnu::metrics::{self, EvalReport};
use bnu::model::ObservedImage;
use bnu::sampler;
use bnu::simkit::{compose_scene, SceneSpec};

#[derive(Parser)]
#[command(
    name = "bnu",
    about = "Bayesian nonparametric unmixing of hyperspectral images",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and write image + ground truth CSVs.
    Simulate(CommonArgs),
    /// Run the sampler on an image matrix and write the MAP decomposition.
    Unmix(CommonArgs),
    /// Score an estimated decomposition against ground truth.
    Evaluate(CommonArgs),
    /// simulate -> unmix -> evaluate over Monte Carlo runs, with summary.
    Pipeline(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key=value config file; flags override file entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Input image CSV (unmix).
    #[arg(long)]
    input: Option<String>,
    /// Estimated endmembers CSV (evaluate).
    #[arg(long)]
    endmembers: Option<String>,
    /// Estimated abundances CSV (evaluate).
    #[arg(long)]
    abundances: Option<String>,
    /// Ground-truth endmembers CSV.
    #[arg(long)]
    truth_endmembers: Option<String>,
    /// Ground-truth abundances CSV.
    #[arg(long)]
    truth_abundances: Option<String>,

    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    bands: Option<String>,
    #[arg(long)]
    width: Option<String>,
    #[arg(long)]
    height: Option<String>,
    #[arg(long)]
    snr_db: Option<String>,
    #[arg(long)]
    beta_ip: Option<String>,
    #[arg(long)]
    dirichlet_alpha: Option<String>,
    /// Spectral library CSV for scene endmembers ("none" = synthetic).
    #[arg(long)]
    library: Option<String>,

    #[arg(long)]
    gamma_w: Option<String>,
    #[arg(long)]
    h1_alpha_sigma: Option<String>,
    #[arg(long)]
    h2_alpha_sigma: Option<String>,
    #[arg(long)]
    h1_beta_sigma: Option<String>,
    #[arg(long)]
    h2_beta_sigma: Option<String>,
    #[arg(long)]
    h1_alpha_a: Option<String>,
    #[arg(long)]
    h2_alpha_a: Option<String>,
    #[arg(long)]
    h1_beta_a: Option<String>,
    #[arg(long)]
    h2_beta_a: Option<String>,
    #[arg(long)]
    p_plus: Option<String>,
    #[arg(long)]
    t_corr: Option<String>,
    #[arg(long)]
    n_iter: Option<String>,
    #[arg(long)]
    n_chains: Option<String>,
    #[arg(long)]
    ladder_ratio: Option<String>,
    #[arg(long)]
    cooling_factor: Option<String>,
    #[arg(long)]
    swap_period: Option<String>,
    #[arg(long)]
    burn_in: Option<String>,
    #[arg(long)]
    merge_period: Option<String>,
    #[arg(long)]
    runs: Option<String>,
    #[arg(long)]
    sweep_variable: Option<String>,
    #[arg(long)]
    sweep_values: Option<String>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let overrides: [(&str, &Option<String>); 34] = [
            ("input", &self.input),
            ("endmembers", &self.endmembers),
            ("abundances", &self.abundances),
            ("truth_endmembers", &self.truth_endmembers),
            ("truth_abundances", &self.truth_abundances),
            ("k", &self.k),
            ("bands", &self.bands),
            ("width", &self.width),
            ("height", &self.height),
            ("snr_db", &self.snr_db),
            ("beta_ip", &self.beta_ip),
            ("dirichlet_alpha", &self.dirichlet_alpha),
            ("library", &self.library),
            ("gamma_w", &self.gamma_w),
            ("h1_alpha_sigma", &self.h1_alpha_sigma),
            ("h2_alpha_sigma", &self.h2_alpha_sigma),
            ("h1_beta_sigma", &self.h1_beta_sigma),
            ("h2_beta_sigma", &self.h2_beta_sigma),
            ("h1_alpha_a", &self.h1_alpha_a),
            ("h2_alpha_a", &self.h2_alpha_a),
            ("h1_beta_a", &self.h1_beta_a),
            ("h2_beta_a", &self.h2_beta_a),
            ("p_plus", &self.p_plus),
            ("t_corr", &self.t_corr),
            ("n_iter", &self.n_iter),
            ("n_chains", &self.n_chains),
            ("ladder_ratio", &self.ladder_ratio),
            ("cooling_factor", &self.cooling_factor),
            ("swap_period", &self.swap_period),
            ("burn_in", &self.burn_in),
            ("merge_period", &self.merge_period),
            ("runs", &self.runs),
            ("sweep_variable", &self.sweep_variable),
            ("sweep_values", &self.sweep_values),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.apply(key, v)?;
            }
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

type CommandFn = fn(&RunConfig, &Path) -> Result<()>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_thread_pool();
    let (args, run): (&CommonArgs, CommandFn) = match &cli.command {
        Command::Simulate(a) => (a, cmd_simulate),
        Command::Unmix(a) => (a, cmd_unmix),
        Command::Evaluate(a) => (a, cmd_evaluate),
        Command::Pipeline(a) => (a, cmd_pipeline),
    };
    let code = args
        .resolve()
        .and_then(|cfg| {
            fs::create_dir_all(&args.out)?;
            fs::write(args.out.join("config.resolved"), cfg.resolved())?;
            run(&cfg, &args.out)
        })
        .map_or_else(
            |err| {
                eprintln!("error: {err}");
                err.exit_code()
            },
            |_| 0,
        );
    ExitCode::from(code)
}

/// Cap rayon workers via BNU_THREADS when set.
fn init_thread_pool() {
    if let Ok(value) = std::env::var("BNU_THREADS") {
        if let Ok(threads) = value.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.max(1))
                .build_global();
        }
    }
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.scene.validate()?;
    let mut scene = cfg.scene.clone();
    scene.seed = cfg.seed;
    let gt = compose_scene(&scene)?;
    save_matrix(out.join("image.csv"), &gt.z_noisy)?;
    save_matrix(out.join("z_clean.csv"), &gt.z_clean)?;
    save_matrix(out.join("endmembers_true.csv"), &gt.f_true)?;
    save_matrix(out.join("abundances_true.csv"), &gt.s_true)?;
    println!(
        "simulated scene: {} pixels x {} bands, K = {}",
        scene.pixels(),
        scene.bands,
        scene.k
    );
    Ok(())
}

fn load_image(cfg: &RunConfig, path: &Path) -> Result<ObservedImage> {
    let z = load_matrix(path)?;
    let n = z.nrows();
    if cfg.scene.width * cfg.scene.height == n {
        ObservedImage::new(z, cfg.scene.width, cfg.scene.height)
    } else {
        ObservedImage::from_matrix(z)
    }
}

fn cmd_unmix(cfg: &RunConfig, out: &Path) -> Result<()> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Input("unmix requires --input <image.csv>".into()))?;
    let image = load_image(cfg, input)?;
    let result = sampler::run(&image, &cfg.hyper, cfg.seed)?;
    let eval = match (&cfg.truth_endmembers, &cfg.truth_abundances) {
        (Some(fe), Some(se)) => {
            let f_true = load_matrix(fe)?;
            let s_true = load_matrix(se)?;
            Some(metrics::evaluate(
                &result.map_state.endmembers(),
                &result.map_state.s,
                &f_true,
                &s_true,
            )?)
        }
        _ => None,
    };
    save_result(&result, eval.as_ref(), out)?;
    println!(
        "unmixed {} pixels: estimated K = {}, MAP log posterior = {}",
        image.pixels(),
        result.estimated_k,
        result.map_log_posterior
    );
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let need = |name: &str, v: &Option<PathBuf>| -> Result<PathBuf> {
        v.clone()
            .ok_or_else(|| Error::Input(format!("evaluate requires --{name} <csv>")))
    };
    let f_est = load_matrix(need("endmembers", &cfg.endmembers)?)?;
    let s_est = load_matrix(need("abundances", &cfg.abundances)?)?;
    let f_true = load_matrix(need("truth-endmembers", &cfg.truth_endmembers)?)?;
    let s_true = load_matrix(need("truth-abundances", &cfg.truth_abundances)?)?;
    let report = metrics::evaluate(&f_est, &s_est, &f_true, &s_true)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Input(format!("report serialization: {e}")))?;
    fs::write(out.join("report.json"), &json)?;
    println!("{json}");
    Ok(())
}

struct RunOutcome {
    theta_f: f64,
    theta_s: f64,
    mean_sid: f64,
    k_est: usize,
}

fn pipeline_run(
    cfg: &RunConfig,
    scene: &SceneSpec,
    run_seed: u64,
    run_dir: &Path,
) -> Result<RunOutcome> {
    let gt = compose_scene(scene)?;
    let image = ObservedImage::new(gt.z_noisy.clone(), scene.width, scene.height)?;
    let result = sampler::run(&image, &cfg.hyper, run_seed)?;
    let eval: EvalReport = metrics::evaluate(
        &result.map_state.endmembers(),
        &result.map_state.s,
        &gt.f_true,
        &gt.s_true,
    )?;
    save_result(&result, Some(&eval), run_dir)?;
    Ok(RunOutcome {
        theta_f: eval.theta_f,
        theta_s: eval.theta_s,
        mean_sid: eval.mean_sid,
        k_est: eval.k_est,
    })
}

fn cmd_pipeline(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let sweep_points: Vec<Option<f64>> = if cfg.sweep_variable == SweepVariable::None {
        vec![None]
    } else {
        cfg.sweep_values.iter().copied().map(Some).collect()
    };

    let mut summary = String::from("sweep_variable,sweep_value,metric,value\n");
    for (sweep_idx, point) in sweep_points.iter().enumerate() {
        let mut scene = cfg.scene.clone();
        let value_label = match point {
            None => "-".to_string(),
            Some(v) => {
                match cfg.sweep_variable {
                    SweepVariable::K => scene.k = *v as usize,
                    SweepVariable::SnrDb => scene.snr_db = Some(*v),
                    SweepVariable::BetaIp => scene.beta_ip = Some(*v),
                    SweepVariable::None => unreachable!(),
                }
                format!("{v}")
            }
        };

        let runs: Vec<Result<RunOutcome>> = (0..cfg.runs)
            .into_par_iter()
            .map(|run_idx| {
                let run_seed = cfg.seed + 10_000 * sweep_idx as u64 + run_idx as u64;
                let mut run_scene = scene.clone();
                run_scene.seed = run_seed;
                let run_dir = if cfg.sweep_variable == SweepVariable::None {
                    out.join(format!("run_{run_idx:03}"))
                } else {
                    out.join(format!(
                        "{}_{}",
                        cfg.sweep_variable.as_str(),
                        value_label
                    ))
                    .join(format!("run_{run_idx:03}"))
                };
                fs::create_dir_all(&run_dir)?;
                pipeline_run(cfg, &run_scene, run_seed, &run_dir)
            })
            .collect();
        let outcomes: Vec<RunOutcome> = runs.into_iter().collect::<Result<_>>()?;

        let theta_f: Vec<f64> = outcomes.iter().map(|o| o.theta_f).collect();
        let theta_s: Vec<f64> = outcomes.iter().map(|o| o.theta_s).collect();
        let sids: Vec<f64> = outcomes.iter().map(|o| o.mean_sid).collect();
        let k_estimates: Vec<usize> = outcomes.iter().map(|o| o.k_est).collect();
        let (accuracy, rmse_k) = metrics::dimensionality_scores(&k_estimates, scene.k)?;
        for (metric, value) in [
            ("rmse_theta_f", metrics::rmse_over_runs(&theta_f)?),
            ("rmse_theta_s", metrics::rmse_over_runs(&theta_s)?),
            ("rmse_sid", metrics::rmse_over_runs(&sids)?),
            ("accuracy", accuracy),
            ("rmse_k", rmse_k),
        ] {
            summary.push_str(&format!(
                "{},{},{},{}\n",
                cfg.sweep_variable.as_str(),
                value_label,
                metric,
                value
            ));
        }
    }
    fs::write(out.join("summary.csv"), &summary)?;
    println!("{summary}");
    Ok(())
}
