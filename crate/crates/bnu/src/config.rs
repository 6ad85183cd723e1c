//! Run configuration: flat `key=value` config files, override application,
//! and the resolved-config echo that makes every run reproducible from
//! `(config file, seed)` alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::HyperConfig;
use crate::simkit::{EndmemberSource, SceneSpec};

/// Variable swept by the pipeline command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    None,
    K,
    SnrDb,
    BetaIp,
}

impl SweepVariable {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepVariable::None => "none",
            SweepVariable::K => "k",
            SweepVariable::SnrDb => "snr_db",
            SweepVariable::BetaIp => "beta_ip",
        }
    }
}

/// Fully resolved run configuration: scene, sampler, and pipeline controls.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub hyper: HyperConfig,
    pub seed: u64,
    pub runs: usize,
    pub sweep_variable: SweepVariable,
    pub sweep_values: Vec<f64>,
    pub input: Option<PathBuf>,
    pub endmembers: Option<PathBuf>,
    pub abundances: Option<PathBuf>,
    pub truth_endmembers: Option<PathBuf>,
    pub truth_abundances: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            hyper: HyperConfig::default(),
            seed: 0,
            runs: 1,
            sweep_variable: SweepVariable::None,
            sweep_values: Vec::new(),
            input: None,
            endmembers: None,
            abundances: None,
            truth_endmembers: None,
            truth_abundances: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| Error::Input(format!("config key {key}: cannot parse {value:?}")))
}

fn parse_opt_f64(key: &str, value: &str) -> Result<Option<f64>> {
    let v = value.trim();
    if v.eq_ignore_ascii_case("none") || v.is_empty() {
        Ok(None)
    } else {
        Ok(Some(parse_num::<f64>(key, v)?))
    }
}

impl RunConfig {
    /// Apply one `key = value` setting.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "k" => self.scene.k = parse_num(key, v)?,
            "bands" => self.scene.bands = parse_num(key, v)?,
            "width" => self.scene.width = parse_num(key, v)?,
            "height" => self.scene.height = parse_num(key, v)?,
            "snr_db" => self.scene.snr_db = parse_opt_f64(key, v)?,
            "beta_ip" => self.scene.beta_ip = parse_opt_f64(key, v)?,
            "dirichlet_alpha" => self.scene.dirichlet_alpha = parse_opt_f64(key, v)?,
            "library" => {
                self.scene.source = if v.eq_ignore_ascii_case("none") || v.is_empty() {
                    EndmemberSource::Synthetic
                } else {
                    EndmemberSource::Library(PathBuf::from(v))
                }
            }
            "gamma_w" => self.hyper.gamma_w = parse_num(key, v)?,
            "h1_alpha_sigma" => self.hyper.h_alpha_sigma.shape = parse_num(key, v)?,
            "h2_alpha_sigma" => self.hyper.h_alpha_sigma.rate = parse_num(key, v)?,
            "h1_beta_sigma" => self.hyper.h_beta_sigma.shape = parse_num(key, v)?,
            "h2_beta_sigma" => self.hyper.h_beta_sigma.rate = parse_num(key, v)?,
            "h1_alpha_a" => self.hyper.h_alpha_a.shape = parse_num(key, v)?,
            "h2_alpha_a" => self.hyper.h_alpha_a.rate = parse_num(key, v)?,
            "h1_beta_a" => self.hyper.h_beta_a.shape = parse_num(key, v)?,
            "h2_beta_a" => self.hyper.h_beta_a.rate = parse_num(key, v)?,
            "p_plus" => self.hyper.p_plus = parse_num(key, v)?,
            "t_corr" => self.hyper.t_corr = parse_num(key, v)?,
            "n_iter" => self.hyper.n_iter = parse_num(key, v)?,
            "n_chains" => self.hyper.n_chains = parse_num(key, v)?,
            "ladder_ratio" => self.hyper.ladder_ratio = parse_num(key, v)?,
            "cooling_factor" => self.hyper.cooling_factor = parse_num(key, v)?,
            "swap_period" => self.hyper.swap_period = parse_num(key, v)?,
            "burn_in" => self.hyper.burn_in_fraction = parse_num(key, v)?,
            "merge_period" => self.hyper.merge_period = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "runs" => self.runs = parse_num(key, v)?,
            "sweep_variable" => {
                self.sweep_variable = match v.to_ascii_lowercase().as_str() {
                    "none" | "" => SweepVariable::None,
                    "k" => SweepVariable::K,
                    "snr_db" => SweepVariable::SnrDb,
                    "beta_ip" => SweepVariable::BetaIp,
                    other => {
                        return Err(Error::Input(format!(
                            "sweep_variable must be none|k|snr_db|beta_ip, got {other:?}"
                        )))
                    }
                }
            }
            "sweep_values" => {
                self.sweep_values = if v.is_empty() || v.eq_ignore_ascii_case("none") {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|piece| parse_num::<f64>(key, piece))
                        .collect::<Result<_>>()?
                }
            }
            "input" => self.input = path_or_none(v),
            "endmembers" => self.endmembers = path_or_none(v),
            "abundances" => self.abundances = path_or_none(v),
            "truth_endmembers" => self.truth_endmembers = path_or_none(v),
            "truth_abundances" => self.truth_abundances = path_or_none(v),
            other => {
                return Err(Error::Input(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    /// Parse a flat key=value config file ('#' starts a comment).
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
        for (idx, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            self.apply(key.trim(), value.trim())
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    msg: e.to_string(),
                })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.hyper.validate()?;
        if self.runs == 0 {
            return Err(Error::Input("runs must be at least 1".into()));
        }
        if self.sweep_variable != SweepVariable::None && self.sweep_values.is_empty() {
            return Err(Error::Input(
                "sweep_variable set but sweep_values is empty".into(),
            ));
        }
        Ok(())
    }

    /// Deterministic flat echo of every effective setting.
    pub fn resolved(&self) -> String {
        let mut map: BTreeMap<&str, String> = BTreeMap::new();
        map.insert("k", self.scene.k.to_string());
        map.insert("bands", self.scene.bands.to_string());
        map.insert("width", self.scene.width.to_string());
        map.insert("height", self.scene.height.to_string());
        map.insert("snr_db", opt_to_string(self.scene.snr_db));
        map.insert("beta_ip", opt_to_string(self.scene.beta_ip));
        map.insert("dirichlet_alpha", opt_to_string(self.scene.dirichlet_alpha));
        map.insert(
            "library",
            match &self.scene.source {
                EndmemberSource::Synthetic => "none".into(),
                EndmemberSource::Library(p) => p.display().to_string(),
            },
        );
        map.insert("gamma_w", self.hyper.gamma_w.to_string());
        map.insert("h1_alpha_sigma", self.hyper.h_alpha_sigma.shape.to_string());
        map.insert("h2_alpha_sigma", self.hyper.h_alpha_sigma.rate.to_string());
        map.insert("h1_beta_sigma", self.hyper.h_beta_sigma.shape.to_string());
        map.insert("h2_beta_sigma", self.hyper.h_beta_sigma.rate.to_string());
        map.insert("h1_alpha_a", self.hyper.h_alpha_a.shape.to_string());
        map.insert("h2_alpha_a", self.hyper.h_alpha_a.rate.to_string());
        map.insert("h1_beta_a", self.hyper.h_beta_a.shape.to_string());
        map.insert("h2_beta_a", self.hyper.h_beta_a.rate.to_string());
        map.insert("p_plus", self.hyper.p_plus.to_string());
        map.insert("t_corr", self.hyper.t_corr.to_string());
        map.insert("n_iter", self.hyper.n_iter.to_string());
        map.insert("n_chains", self.hyper.n_chains.to_string());
        map.insert("ladder_ratio", self.hyper.ladder_ratio.to_string());
        map.insert("cooling_factor", self.hyper.cooling_factor.to_string());
        map.insert("swap_period", self.hyper.swap_period.to_string());
        map.insert("burn_in", self.hyper.burn_in_fraction.to_string());
        map.insert("merge_period", self.hyper.merge_period.to_string());
        map.insert("seed", self.seed.to_string());
        map.insert("runs", self.runs.to_string());
        map.insert("sweep_variable", self.sweep_variable.as_str().to_string());
        map.insert(
            "sweep_values",
            if self.sweep_values.is_empty() {
                "none".into()
            } else {
                self.sweep_values
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            },
        );
        for (key, value) in [
            ("input", &self.input),
            ("endmembers", &self.endmembers),
            ("abundances", &self.abundances),
            ("truth_endmembers", &self.truth_endmembers),
            ("truth_abundances", &self.truth_abundances),
        ] {
            map.insert(
                key,
                value
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "none".into()),
            );
        }
        let mut out = String::new();
        for (key, value) in map {
            writeln!(out, "{key}={value}").expect("write to string");
        }
        out
    }
}

fn path_or_none(v: &str) -> Option<PathBuf> {
    if v.is_empty() || v.eq_ignore_ascii_case("none") {
        None
    } else {
        Some(PathBuf::from(v))
    }
}

fn opt_to_string(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "none".into())
}
