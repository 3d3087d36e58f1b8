//! Flat JSON experiment configuration, presets and resolution of defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use mkq_core::bench::{ProblemSpec, RaceOptions, SolverSpec};
use mkq_core::distributions::{derive_seed, sample_banana, sample_beta, LinearMapTarget, Sampler};
use mkq_core::sgd::SolverConfig;
use mkq_core::{CostKind, GridSpec, ObservationSet};

/// Failure that exits with status 2: the run never started.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub type ConfigResult<T> = std::result::Result<T, ConfigError>;

pub fn config_err(field: &str, reason: impl fmt::Display) -> ConfigError {
    ConfigError(format!("{field}: {reason}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Fft,
    Semidiscrete,
    Sinkhorn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Solve,
    Map,
    Contour,
    Bench,
    Certify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Map => "map",
            Command::Contour => "contour",
            Command::Bench => "bench",
            Command::Certify => "certify",
        }
    }

    /// Keys a config for this command may carry besides `command`.
    fn keys(self) -> &'static [&'static str] {
        match self {
            Command::Solve => &[
                "solver", "preset", "cost", "epsilon", "gamma", "c_exponent", "alpha", "grid", "iters",
                "record_every", "sample_size", "seed", "output",
            ],
            Command::Map | Command::Certify => &["estimator", "queries", "output"],
            Command::Contour => &[
                "preset", "cost", "epsilon", "gamma", "c_exponent", "alpha", "grid", "iters", "record_every",
                "sample_size", "seed", "output", "estimator", "levels", "angles",
            ],
            Command::Bench => &[
                "preset", "race", "dims", "epsilon", "gamma", "c_exponent", "alpha", "grid", "iters",
                "sample_size", "seed", "output", "threshold", "replicates", "probes", "time_budget_s",
                "shared_seed", "semidiscrete_gamma", "semidiscrete_c_exponent", "sinkhorn_iters",
            ],
        }
    }
}

/// Every setting of every subcommand. Unset keys take preset defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverKind>,
    /// `beta1d`, `banana2d`, `linear_map_<d>` or a path to a CSV of observations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_exponent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
    /// Number of observations `J` drawn from the preset target.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimator: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queries: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angles: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub race: Option<Vec<SolverKind>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_budget_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shared_seed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub semidiscrete_gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub semidiscrete_c_exponent: Option<f64>,
    /// Sweep cap for Sinkhorn in a race; `iters` caps the stochastic solvers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sinkhorn_iters: Option<usize>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($field:ident),* $(,)?) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field.clone(); } )*
    };
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> ConfigResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err("config", format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_err("config", format!("{}: {e}", path.display())))
    }

    /// Values set in `flags` replace those in `self`.
    pub fn overlay(&mut self, flags: &ExperimentConfig) {
        overlay!(self, flags;
            command, solver, preset, cost, epsilon, gamma, c_exponent, alpha, grid, iters, record_every,
            sample_size, seed, output, estimator, queries, levels, angles, race, dims, threshold, replicates,
            probes, time_budget_s, shared_seed, semidiscrete_gamma, semidiscrete_c_exponent, sinkhorn_iters);
    }

    /// Rejects keys that the command does not use, and a mismatched `command`.
    pub fn check_keys(&self, command: Command) -> ConfigResult<()> {
        if let Some(c) = self.command {
            if c != command {
                return Err(config_err(
                    "command",
                    format!("config is for `{}`, not `{}`", c.name(), command.name()),
                ));
            }
        }
        let value = serde_json::to_value(self).expect("config serializes");
        let allowed = command.keys();
        for key in value.as_object().expect("config is an object").keys() {
            if key != "command" && !allowed.contains(&key.as_str()) {
                return Err(config_err(key, format!("does not apply to `{}`", command.name())));
            }
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("mkq-out"))
    }
}

fn positive(field: &str, v: f64) -> ConfigResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(config_err(field, format!("must be positive, got {v}")))
    }
}

fn at_least_one(field: &str, v: usize) -> ConfigResult<usize> {
    if v >= 1 {
        Ok(v)
    } else {
        Err(config_err(field, "must be at least 1"))
    }
}

/// A named target or a user CSV.
#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Beta1d,
    Banana2d,
    LinearMap(usize),
    Csv(PathBuf),
}

impl Preset {
    pub fn parse(s: &str) -> ConfigResult<Self> {
        match s {
            "beta1d" => return Ok(Preset::Beta1d),
            "banana2d" => return Ok(Preset::Banana2d),
            _ => {}
        }
        if let Some(d) = s.strip_prefix("linear_map_") {
            let d: usize = d
                .parse()
                .map_err(|_| config_err("preset", format!("`{s}` needs a dimension, as in linear_map_2")))?;
            return Ok(Preset::LinearMap(at_least_one("preset dimension", d)?));
        }
        let path = PathBuf::from(s);
        if path.is_file() {
            Ok(Preset::Csv(path))
        } else {
            Err(config_err(
                "preset",
                format!("`{s}` is neither beta1d, banana2d, linear_map_<d> nor an existing CSV file"),
            ))
        }
    }

    /// Default grid per dimension of a cube reference.
    fn cube_grid(dim: usize) -> ConfigResult<Vec<usize>> {
        match dim {
            1 => Ok(vec![256]),
            2 => Ok(vec![20; 2]),
            3 => Ok(vec![10; 3]),
            4 => Ok(vec![6; 4]),
            _ => Err(config_err("grid", format!("no default grid for d = {dim}; set it explicitly"))),
        }
    }
}

/// Observations together with the settings of one FFT solver run.
pub struct SolveSetup {
    pub preset: String,
    pub observations: ObservationSet,
    pub solver: SolverConfig,
    pub sample_size: Option<usize>,
    pub seed: u64,
}

impl SolveSetup {
    /// Resolves every solver setting, forcing the polar cost when `polar`.
    pub fn resolve(cfg: &ExperimentConfig, polar: bool) -> ConfigResult<Self> {
        let default_preset = if polar { "banana2d" } else { "beta1d" };
        let name = cfg.preset.clone().unwrap_or_else(|| default_preset.to_string());
        let preset = Preset::parse(&name)?;
        let seed = cfg.seed.unwrap_or(0);

        let cost = match (cfg.cost, polar) {
            (Some(c), true) if c != CostKind::PolarQuadratic => {
                return Err(config_err("cost", "contours need the polar cost"));
            }
            (Some(c), _) => c,
            (None, true) => CostKind::PolarQuadratic,
            (None, false) if preset == Preset::Banana2d => CostKind::PolarQuadratic,
            (None, false) => CostKind::StandardQuadratic,
        };

        let (default_j, default_gamma_factor, default_c) = match preset {
            Preset::Beta1d => (Some(100), 1.0, 0.75),
            Preset::Banana2d => (Some(1000), 1.0, 0.75),
            Preset::LinearMap(_) => (Some(10_000), 2.0, 0.51),
            Preset::Csv(_) => (None, 1.0, 0.75),
        };
        let sample_size = match (&preset, cfg.sample_size) {
            (Preset::Csv(_), Some(_)) => {
                return Err(config_err("sample_size", "does not apply to CSV data"));
            }
            (_, Some(j)) => Some(at_least_one("sample_size", j)?),
            (_, None) => default_j,
        };
        let observations = match &preset {
            Preset::Beta1d => sample_beta(5.0, 5.0, sample_size.unwrap(), derive_seed(seed, 0))
                .map_err(|e| config_err("preset", e))?,
            Preset::Banana2d => sample_banana(sample_size.unwrap(), derive_seed(seed, 0), true),
            Preset::LinearMap(d) => LinearMapTarget::new(*d)
                .map_err(|e| config_err("preset", e))?
                .sample(sample_size.unwrap(), derive_seed(seed, 0))
                .with_label(format!("linear_map_{d}")),
            Preset::Csv(path) => ObservationSet::read_csv(path)
                .map_err(|e| config_err("preset", format!("{}: {e}", path.display())))?,
        };
        if observations.is_empty() {
            return Err(config_err("preset", "no observations"));
        }
        let dim = observations.dim();
        if cost.is_polar() && dim != 2 {
            return Err(config_err("cost", format!("polar cost needs 2D observations, got d = {dim}")));
        }

        let grid = match &cfg.grid {
            Some(g) => g.clone(),
            None if cost.is_polar() => vec![10, 100],
            None => Preset::cube_grid(dim)?,
        };
        if grid.len() != dim {
            return Err(config_err(
                "grid",
                format!("has {} axes but the observations are {dim}-dimensional", grid.len()),
            ));
        }
        let grid = GridSpec::new(grid).map_err(|e| config_err("grid", e))?;

        let epsilon = positive("epsilon", cfg.epsilon.unwrap_or(0.005))?;
        let mut solver = SolverConfig::new(grid, cost, epsilon);
        solver.gamma = cfg.gamma.unwrap_or(default_gamma_factor * epsilon);
        solver.c_exponent = cfg.c_exponent.unwrap_or(default_c);
        if let Some(a) = cfg.alpha {
            solver.alpha = a;
        }
        solver.max_iters = cfg.iters.unwrap_or(100_000);
        solver.record_every = cfg.record_every.unwrap_or((solver.max_iters / 100).max(1));
        solver.seed = derive_seed(seed, 1);
        validate_solver(&solver)?;
        Ok(Self {
            preset: name,
            observations,
            solver,
            sample_size,
            seed,
        })
    }

    /// The config with every solver default written out.
    pub fn resolved(&self, cfg: &ExperimentConfig, command: Command) -> ExperimentConfig {
        let s = &self.solver;
        ExperimentConfig {
            command: Some(command),
            solver: (command == Command::Solve).then_some(SolverKind::Fft),
            preset: Some(self.preset.clone()),
            cost: Some(s.cost_kind),
            epsilon: Some(s.epsilon),
            gamma: Some(s.gamma),
            c_exponent: Some(s.c_exponent),
            alpha: Some(s.alpha),
            grid: Some(s.grid.sizes().to_vec()),
            iters: Some(s.max_iters),
            record_every: Some(s.record_every),
            sample_size: self.sample_size,
            seed: Some(self.seed),
            output: Some(cfg.output_dir()),
            ..Default::default()
        }
    }
}

fn validate_solver(s: &SolverConfig) -> ConfigResult<()> {
    s.validate().map_err(|e| match e {
        mkq_core::Error::InvalidParameter { name, reason } => config_err(name, reason),
        mkq_core::Error::InvalidCost { reason, .. } => config_err("cost", reason),
        other => config_err("config", other),
    })
}

/// Race settings for the bench subcommand.
pub struct BenchSetup {
    pub race: Vec<SolverKind>,
    pub dims: Vec<usize>,
    pub n_obs: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub c_exponent: f64,
    pub alpha: f64,
    pub grid: Option<Vec<usize>>,
    pub semidiscrete_gamma: f64,
    pub semidiscrete_c_exponent: f64,
    pub sinkhorn_iters: usize,
    pub probes: usize,
    pub seed: u64,
    pub options: RaceOptions,
}

impl BenchSetup {
    pub fn resolve(cfg: &ExperimentConfig) -> ConfigResult<Self> {
        let mut dims = cfg.dims.clone();
        if let Some(p) = &cfg.preset {
            match Preset::parse(p)? {
                Preset::LinearMap(d) => match &dims {
                    Some(ds) if ds != &vec![d] => {
                        return Err(config_err("dims", format!("conflicts with preset {p}")));
                    }
                    _ => dims = Some(vec![d]),
                },
                _ => return Err(config_err("preset", "bench races on linear_map_<d> problems only")),
            }
        }
        let dims = dims.unwrap_or_else(|| vec![2]);
        if dims.is_empty() || dims.contains(&0) {
            return Err(config_err("dims", "need at least one positive dimension"));
        }
        if let Some(g) = &cfg.grid {
            if dims.iter().any(|&d| d != g.len()) {
                return Err(config_err("grid", "an explicit grid needs a single matching dimension in dims"));
            }
            GridSpec::new(g.clone()).map_err(|e| config_err("grid", e))?;
        } else {
            for &d in &dims {
                Preset::cube_grid(d)?;
            }
        }
        let race = cfg
            .race
            .clone()
            .unwrap_or_else(|| vec![SolverKind::Fft, SolverKind::Semidiscrete, SolverKind::Sinkhorn]);
        if race.is_empty() {
            return Err(config_err("race", "name at least one solver"));
        }
        let n_obs = at_least_one("sample_size", cfg.sample_size.unwrap_or(10_000))?;
        let epsilon = positive("epsilon", cfg.epsilon.unwrap_or(0.005))?;
        let gamma = positive("gamma", cfg.gamma.unwrap_or(2.0 * epsilon))?;
        let c_exponent = cfg.c_exponent.unwrap_or(0.51);
        let semidiscrete_gamma = positive(
            "semidiscrete_gamma",
            cfg.semidiscrete_gamma.unwrap_or(0.02 * n_obs as f64),
        )?;
        let semidiscrete_c_exponent = cfg.semidiscrete_c_exponent.unwrap_or(0.51);
        for (field, c) in [("c_exponent", c_exponent), ("semidiscrete_c_exponent", semidiscrete_c_exponent)] {
            if !(c > 0.5 && c <= 1.0) {
                return Err(config_err(field, format!("must lie in (0.5, 1], got {c}")));
            }
        }
        let alpha = cfg.alpha.unwrap_or(0.0);
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(config_err("alpha", format!("must be >= 0, got {alpha}")));
        }
        let threshold = positive("threshold", cfg.threshold.unwrap_or(1e-2))?;
        if let Some(t) = cfg.time_budget_s {
            positive("time_budget_s", t)?;
        }
        let options = RaceOptions {
            threshold,
            max_iters: at_least_one("iters", cfg.iters.unwrap_or(200_000))?,
            time_budget_s: cfg.time_budget_s,
            replicates: at_least_one("replicates", cfg.replicates.unwrap_or(10))?,
            shared_seed: cfg.shared_seed.unwrap_or(false),
        };
        Ok(Self {
            race,
            dims,
            n_obs,
            epsilon,
            gamma,
            c_exponent,
            alpha,
            grid: cfg.grid.clone(),
            semidiscrete_gamma,
            semidiscrete_c_exponent,
            sinkhorn_iters: at_least_one("sinkhorn_iters", cfg.sinkhorn_iters.unwrap_or(2000))?,
            probes: at_least_one("probes", cfg.probes.unwrap_or(500))?,
            seed: cfg.seed.unwrap_or(0),
            options,
        })
    }

    pub fn grid_for(&self, dim: usize) -> GridSpec {
        let sizes = self.grid.clone().unwrap_or_else(|| Preset::cube_grid(dim).expect("checked in resolve"));
        GridSpec::new(sizes).expect("checked in resolve")
    }

    pub fn problem(&self, dim: usize) -> ProblemSpec {
        ProblemSpec {
            dim,
            n_obs: self.n_obs,
            probes: self.probes,
            seed: derive_seed(self.seed, dim as u64),
        }
    }

    pub fn solver(&self, kind: SolverKind, dim: usize) -> SolverSpec {
        let grid = self.grid_for(dim);
        match kind {
            SolverKind::Fft => {
                let mut config = SolverConfig::new(grid, CostKind::StandardQuadratic, self.epsilon);
                config.gamma = self.gamma;
                config.c_exponent = self.c_exponent;
                config.alpha = self.alpha;
                config.max_iters = self.options.max_iters;
                SolverSpec::Fft { config }
            }
            SolverKind::Semidiscrete => SolverSpec::Semidiscrete {
                epsilon: self.epsilon,
                gamma: self.semidiscrete_gamma,
                c_exponent: self.semidiscrete_c_exponent,
            },
            SolverKind::Sinkhorn => SolverSpec::Sinkhorn {
                epsilon: self.epsilon,
                grid,
            },
        }
    }

    /// Race options for one solver; Sinkhorn sweeps have their own cap.
    pub fn options_for(&self, kind: SolverKind) -> RaceOptions {
        let mut opts = self.options.clone();
        if kind == SolverKind::Sinkhorn {
            opts.max_iters = self.sinkhorn_iters;
        }
        opts
    }

    pub fn resolved(&self, cfg: &ExperimentConfig) -> ExperimentConfig {
        ExperimentConfig {
            command: Some(Command::Bench),
            race: Some(self.race.clone()),
            dims: Some(self.dims.clone()),
            epsilon: Some(self.epsilon),
            gamma: Some(self.gamma),
            c_exponent: Some(self.c_exponent),
            alpha: Some(self.alpha),
            grid: self.grid.clone(),
            iters: Some(self.options.max_iters),
            sample_size: Some(self.n_obs),
            seed: Some(self.seed),
            output: Some(cfg.output_dir()),
            threshold: Some(self.options.threshold),
            replicates: Some(self.options.replicates),
            probes: Some(self.probes),
            time_budget_s: self.options.time_budget_s,
            shared_seed: Some(self.options.shared_seed),
            semidiscrete_gamma: Some(self.semidiscrete_gamma),
            semidiscrete_c_exponent: Some(self.semidiscrete_c_exponent),
            sinkhorn_iters: Some(self.sinkhorn_iters),
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        assert_eq!(Preset::parse("beta1d").unwrap(), Preset::Beta1d);
        assert_eq!(Preset::parse("linear_map_3").unwrap(), Preset::LinearMap(3));
        assert!(Preset::parse("linear_map_").is_err());
        assert!(Preset::parse("linear_map_0").is_err());
        assert!(Preset::parse("no_such_thing").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"epsilon": 0.1, "epsilom": 0.2}"#).unwrap_err();
        assert!(err.to_string().contains("epsilom"));
    }

    #[test]
    fn irrelevant_keys_rejected() {
        let cfg = ExperimentConfig {
            levels: Some(vec![0.5]),
            ..Default::default()
        };
        assert!(cfg.check_keys(Command::Contour).is_ok());
        let err = cfg.check_keys(Command::Solve).unwrap_err();
        assert!(err.0.starts_with("levels"));
    }

    #[test]
    fn flags_override_file() {
        let mut file = ExperimentConfig {
            epsilon: Some(0.1),
            seed: Some(3),
            ..Default::default()
        };
        let flags = ExperimentConfig {
            epsilon: Some(0.01),
            ..Default::default()
        };
        file.overlay(&flags);
        assert_eq!(file.epsilon, Some(0.01));
        assert_eq!(file.seed, Some(3));
    }

    #[test]
    fn resolved_solve_config_resolves_to_itself() {
        let cfg = ExperimentConfig {
            preset: Some("linear_map_2".into()),
            sample_size: Some(50),
            ..Default::default()
        };
        let setup = SolveSetup::resolve(&cfg, false).unwrap();
        assert_eq!(setup.solver.grid.sizes(), &[20, 20]);
        assert_eq!(setup.solver.gamma, 0.01);
        let resolved = setup.resolved(&cfg, Command::Solve);
        let again = SolveSetup::resolve(&resolved, false).unwrap();
        assert_eq!(again.solver, setup.solver);
        assert_eq!(again.observations, setup.observations);
        assert_eq!(again.resolved(&resolved, Command::Solve), resolved);
    }

    #[test]
    fn bad_values_name_their_field() {
        let cfg = ExperimentConfig {
            c_exponent: Some(0.3),
            ..Default::default()
        };
        let err = SolveSetup::resolve(&cfg, false).err().unwrap();
        assert!(err.0.starts_with("c_exponent"), "{err}");
        let cfg = ExperimentConfig {
            grid: Some(vec![8, 8]),
            ..Default::default()
        };
        assert!(SolveSetup::resolve(&cfg, false).err().unwrap().0.starts_with("grid"));
    }
}
