//! Run configuration: flat `key = value` text with `#` comments.
//!
//! Omitted keys take the defaults listed in [`KEYS`]. Two values are
//! derived when absent: `dt = 0.1 * hx / v0` and
//! `solver_max_iter = 20 * max(nx, ny)`. [`RunConfig::to_resolved`]
//! writes every key explicitly, and parsing that text gives back the
//! same config.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{Axis, Domain, FieldGrid, GridElementGrid};
use crate::orbh::DiffusionParams;
use crate::partition::most_square_factors;
use crate::pic::{SolverOptions, TwoStreamConfig};

/// Load-balancing strategy of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Equal element blocks, never changed.
    StaticUniform,
    /// URB on the initial cost field, never changed.
    StaticUrb,
    /// Recursive coordinate bisection, recomputed on trigger.
    Rcb,
    /// Unbalanced recursive bisection, recomputed from scratch on trigger.
    Urb,
    /// URB that only re-cuts the deep levels of the previous tree.
    UrbLimited,
    /// Strip decomposition with diffusion exchange every step.
    OrbH,
}

impl Strategy {
    pub const ALL: [Strategy; 6] =
        [Strategy::StaticUniform, Strategy::StaticUrb, Strategy::Rcb, Strategy::Urb, Strategy::UrbLimited, Strategy::OrbH];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::StaticUniform => "static_uniform",
            Strategy::StaticUrb => "static_urb",
            Strategy::Rcb => "rcb",
            Strategy::Urb => "urb",
            Strategy::UrbLimited => "urb_limited",
            Strategy::OrbH => "orbh",
        }
    }

    pub fn is_static(self) -> bool {
        matches!(self, Strategy::StaticUniform | Strategy::StaticUrb)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`, expected one of {}", names(Strategy::ALL.map(Strategy::name))))
    }
}

/// Which rank a particle belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OwnershipPolicy {
    /// The rank owning the particle's grid element; particles migrate.
    Eulerian,
    /// The rank that received the particle at start-up, for the whole run.
    Lagrangian,
}

impl OwnershipPolicy {
    pub fn name(self) -> &'static str {
        match self {
            OwnershipPolicy::Eulerian => "eulerian",
            OwnershipPolicy::Lagrangian => "lagrangian",
        }
    }
}

impl fmt::Display for OwnershipPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OwnershipPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "eulerian" => Ok(OwnershipPolicy::Eulerian),
            "lagrangian" => Ok(OwnershipPolicy::Lagrangian),
            _ => Err(format!("unknown policy `{s}`, expected eulerian or lagrangian")),
        }
    }
}

fn names<const N: usize>(list: [&str; N]) -> String {
    list.join(", ")
}

/// Every recognised key with its default (`auto` = derived) and meaning.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("lx", "1.0", "domain length along x"),
    ("ly", "1.0", "domain length along y"),
    ("nx", "64", "field nodes along x"),
    ("ny", "64", "field nodes along y"),
    ("gx", "16", "grid elements along x (must divide nx)"),
    ("gy", "16", "grid elements along y (must divide ny)"),
    ("ranks", "8", "number of virtual ranks"),
    ("strategy", "urb", "static_uniform | static_urb | rcb | urb | urb_limited | orbh"),
    ("policy", "eulerian", "eulerian | lagrangian"),
    ("n_particles", "100000", "macro-particle count (even)"),
    ("v0", "0.2", "beam speed"),
    ("charge", "-36.0", "total particle charge"),
    ("mass", "36.0", "total particle mass"),
    ("eps", "0.01", "initial displacement amplitude"),
    ("k_mode", "2", "mode number of the initial displacement"),
    ("dt", "auto", "time step; auto = 0.1 * hx / v0"),
    ("n_steps", "500", "number of supersteps"),
    ("seed", "1", "random seed for particle placement"),
    ("rebalance_every", "10", "rebalance period K in steps"),
    ("imbalance_threshold", "1.2", "rebalance when imbalance exceeds this"),
    ("beta", "0.0", "weight of finite-element counts in the cost"),
    ("alpha", "0.5", "diffusion exchange coefficient"),
    ("column_period", "4", "ORB-H column exchange period M"),
    ("orbh_columns", "auto", "ORB-H column count; auto = larger most-square factor of ranks"),
    ("adjust_depth_min", "1", "urb_limited re-cuts only nodes at this depth or deeper"),
    ("first_cut", "x", "axis of the root cut in bisection (x | y)"),
    ("solver_tol", "1e-6", "max Poisson residual"),
    ("solver_max_iter", "auto", "Jacobi iteration cap; auto = 20 * max(nx, ny)"),
    ("output_dir", "out", "directory for result files"),
    ("snapshot_every", "50", "partition snapshot period in steps (0 = initial only)"),
];

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    pub gx: usize,
    pub gy: usize,
    pub ranks: usize,
    pub strategy: Strategy,
    pub policy: OwnershipPolicy,
    pub n_particles: usize,
    pub v0: f64,
    pub charge: f64,
    pub mass: f64,
    pub eps: f64,
    pub k_mode: u32,
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub rebalance_every: usize,
    pub imbalance_threshold: f64,
    pub beta: f64,
    pub alpha: f64,
    pub column_period: usize,
    pub orbh_columns: usize,
    pub adjust_depth_min: usize,
    pub first_cut: Axis,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    pub output_dir: String,
    pub snapshot_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        ConfigBuilder::default().build().expect("defaults are valid")
    }
}

impl RunConfig {
    pub fn domain(&self) -> Domain {
        Domain::new(self.lx, self.ly).expect("validated")
    }

    pub fn field_grid(&self) -> FieldGrid {
        FieldGrid::new(self.nx, self.ny).expect("validated")
    }

    pub fn element_grid(&self) -> GridElementGrid {
        GridElementGrid::new(self.gx, self.gy).expect("validated")
    }

    pub fn two_stream(&self) -> TwoStreamConfig {
        TwoStreamConfig {
            n_particles: self.n_particles,
            v0: self.v0,
            charge: self.charge,
            mass: self.mass,
            eps: self.eps,
            k_mode: self.k_mode,
            seed: self.seed,
        }
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions { tol: self.solver_tol, max_iter: self.solver_max_iter }
    }

    pub fn diffusion(&self) -> DiffusionParams {
        DiffusionParams { alpha: self.alpha, column_period: self.column_period, ..DiffusionParams::default() }
    }

    /// Ranks per ORB-H column, spread as evenly as possible.
    pub fn orbh_column_ranks(&self) -> Vec<usize> {
        let c = self.orbh_columns;
        (0..c).map(|k| self.ranks / c + usize::from(k < self.ranks % c)).collect()
    }

    /// Every key with its effective value, one `key = value` per line.
    pub fn to_resolved(&self) -> String {
        let mut s = String::new();
        for (key, _, _) in KEYS {
            s.push_str(key);
            s.push_str(" = ");
            s.push_str(&self.value_of(key));
            s.push('\n');
        }
        s
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "lx" => self.lx.to_string(),
            "ly" => self.ly.to_string(),
            "nx" => self.nx.to_string(),
            "ny" => self.ny.to_string(),
            "gx" => self.gx.to_string(),
            "gy" => self.gy.to_string(),
            "ranks" => self.ranks.to_string(),
            "strategy" => self.strategy.to_string(),
            "policy" => self.policy.to_string(),
            "n_particles" => self.n_particles.to_string(),
            "v0" => self.v0.to_string(),
            "charge" => self.charge.to_string(),
            "mass" => self.mass.to_string(),
            "eps" => self.eps.to_string(),
            "k_mode" => self.k_mode.to_string(),
            "dt" => self.dt.to_string(),
            "n_steps" => self.n_steps.to_string(),
            "seed" => self.seed.to_string(),
            "rebalance_every" => self.rebalance_every.to_string(),
            "imbalance_threshold" => self.imbalance_threshold.to_string(),
            "beta" => self.beta.to_string(),
            "alpha" => self.alpha.to_string(),
            "column_period" => self.column_period.to_string(),
            "orbh_columns" => self.orbh_columns.to_string(),
            "adjust_depth_min" => self.adjust_depth_min.to_string(),
            "first_cut" => self.first_cut.to_string(),
            "solver_tol" => self.solver_tol.to_string(),
            "solver_max_iter" => self.solver_max_iter.to_string(),
            "output_dir" => self.output_dir.clone(),
            "snapshot_every" => self.snapshot_every.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }
}

/// Collects raw `key = value` settings; [`ConfigBuilder::build`] applies
/// defaults, derives the automatic values and validates.
#[derive(Debug, Clone, Default)]
pub struct ConfigBuilder {
    values: BTreeMap<&'static str, String>,
}

impl ConfigBuilder {
    /// Reads config text. A key given twice is an error.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut b = ConfigBuilder::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("line {} is not `key = value`", n + 1)))?;
            let key = key.trim();
            if b.get(key).is_some() {
                return Err(Error::config(key, "given more than once"));
            }
            b.set(key, value.trim())?;
        }
        Ok(b)
    }

    /// Sets (or overrides) one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<&mut Self> {
        let known = KEYS
            .iter()
            .find(|(k, _, _)| *k == key)
            .ok_or_else(|| Error::config(key, "unknown key"))?;
        self.values.insert(known.0, value.to_string());
        Ok(self)
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn raw(&self, key: &'static str) -> &str {
        self.get(key).unwrap_or_else(|| KEYS.iter().find(|(k, _, _)| *k == key).expect("known key").1)
    }

    fn parse<T: FromStr>(&self, key: &'static str, what: &str) -> Result<T> {
        let raw = self.raw(key);
        raw.parse().map_err(|_| Error::config(key, format!("expected {what}, got `{raw}`")))
    }

    fn auto<T: FromStr>(&self, key: &'static str, what: &str) -> Result<Option<T>> {
        if self.raw(key) == "auto" {
            return Ok(None);
        }
        self.parse(key, what).map(Some)
    }

    fn named<T: FromStr<Err = String>>(&self, key: &'static str) -> Result<T> {
        self.raw(key).parse().map_err(|m| Error::config(key, m))
    }

    pub fn build(&self) -> Result<RunConfig> {
        const REAL: &str = "a number";
        const COUNT: &str = "a non-negative integer";
        let nx: usize = self.parse("nx", COUNT)?;
        let ranks: usize = self.parse("ranks", COUNT)?;
        let v0: f64 = self.parse("v0", REAL)?;
        let lx: f64 = self.parse("lx", REAL)?;
        let ny: usize = self.parse("ny", COUNT)?;
        let first_cut = match self.raw("first_cut") {
            "x" => Axis::X,
            "y" => Axis::Y,
            other => return Err(Error::config("first_cut", format!("expected x or y, got `{other}`"))),
        };
        let dt = match self.auto::<f64>("dt", REAL)? {
            Some(dt) => dt,
            None => {
                let hx = lx / nx.max(1) as f64;
                if v0 != 0.0 {
                    0.1 * hx / v0.abs()
                } else {
                    0.1 * hx
                }
            }
        };
        let cfg = RunConfig {
            lx,
            ly: self.parse("ly", REAL)?,
            nx,
            ny,
            gx: self.parse("gx", COUNT)?,
            gy: self.parse("gy", COUNT)?,
            ranks,
            strategy: self.named("strategy")?,
            policy: self.named("policy")?,
            n_particles: self.parse("n_particles", COUNT)?,
            v0,
            charge: self.parse("charge", REAL)?,
            mass: self.parse("mass", REAL)?,
            eps: self.parse("eps", REAL)?,
            k_mode: self.parse("k_mode", COUNT)?,
            dt,
            n_steps: self.parse("n_steps", COUNT)?,
            seed: self.parse("seed", COUNT)?,
            rebalance_every: self.parse("rebalance_every", COUNT)?,
            imbalance_threshold: self.parse("imbalance_threshold", REAL)?,
            beta: self.parse("beta", REAL)?,
            alpha: self.parse("alpha", REAL)?,
            column_period: self.parse("column_period", COUNT)?,
            orbh_columns: self.auto("orbh_columns", COUNT)?.unwrap_or(most_square_factors(ranks.max(1)).0),
            adjust_depth_min: self.parse("adjust_depth_min", COUNT)?,
            first_cut,
            solver_tol: self.parse("solver_tol", REAL)?,
            solver_max_iter: self.auto("solver_max_iter", COUNT)?.unwrap_or(20 * nx.max(ny)),
            output_dir: self.raw("output_dir").to_string(),
            snapshot_every: self.parse("snapshot_every", COUNT)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses and validates config text.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    ConfigBuilder::from_text(text)?.build()
}

impl RunConfig {
    /// Checks every cross-module precondition of a run.
    pub fn validate(&self) -> Result<()> {
        validate(self)
    }
}

fn validate(c: &RunConfig) -> Result<()> {
    let err = |key: &str, msg: String| Err(Error::config(key, msg));
    for (key, v) in [("lx", c.lx), ("ly", c.ly), ("mass", c.mass), ("dt", c.dt), ("solver_tol", c.solver_tol)] {
        if !(v > 0.0 && v.is_finite()) {
            return err(key, format!("must be a positive number, got {v}"));
        }
    }
    for (key, v) in [("v0", c.v0), ("charge", c.charge)] {
        if !v.is_finite() {
            return err(key, format!("must be finite, got {v}"));
        }
    }
    if !(c.eps >= 0.0 && c.eps.is_finite()) {
        return err("eps", format!("must be non-negative, got {}", c.eps));
    }
    if !(c.beta >= 0.0 && c.beta.is_finite()) {
        return err("beta", format!("must be non-negative, got {}", c.beta));
    }
    if c.nx < 2 || c.ny < 2 {
        return err("nx", format!("field grid needs at least 2 nodes per axis, got {}x{}", c.nx, c.ny));
    }
    if c.gx == 0 || c.gy == 0 {
        return err("gx", "grid element counts must be positive".into());
    }
    if !c.nx.is_multiple_of(c.gx) {
        return err("gx", format!("nx = {} is not divisible by gx = {}", c.nx, c.gx));
    }
    if !c.ny.is_multiple_of(c.gy) {
        return err("gy", format!("ny = {} is not divisible by gy = {}", c.ny, c.gy));
    }
    if c.ranks == 0 {
        return err("ranks", "must be at least 1".into());
    }
    if c.ranks > c.gx * c.gy {
        return err("ranks", format!("{} ranks exceed the {} grid elements", c.ranks, c.gx * c.gy));
    }
    if c.strategy == Strategy::Rcb && !c.ranks.is_power_of_two() {
        return err("ranks", format!("strategy rcb needs a power-of-two rank count, got {}; use urb", c.ranks));
    }
    if !c.n_particles.is_multiple_of(2) {
        return err("n_particles", format!("two equal beams need an even count, got {}", c.n_particles));
    }
    if c.rebalance_every == 0 {
        return err("rebalance_every", "must be at least 1".into());
    }
    if c.imbalance_threshold.is_nan() || c.imbalance_threshold < 1.0 {
        return err("imbalance_threshold", format!("must be at least 1, got {}", c.imbalance_threshold));
    }
    if !(0.0..=1.0).contains(&c.alpha) {
        return err("alpha", format!("must lie in [0,1], got {}", c.alpha));
    }
    if c.column_period == 0 {
        return err("column_period", "must be at least 1".into());
    }
    if c.solver_max_iter == 0 {
        return err("solver_max_iter", "must be at least 1".into());
    }
    if c.orbh_columns == 0 || c.orbh_columns > c.ranks || c.orbh_columns > c.gx {
        return err("orbh_columns", format!("must lie in [1, min(ranks, gx)], got {}", c.orbh_columns));
    }
    if c.strategy == Strategy::OrbH && c.ranks.div_ceil(c.orbh_columns) > c.gy {
        return err("orbh_columns", format!("{} columns put more ranks in a column than gy = {}", c.orbh_columns, c.gy));
    }
    if c.output_dir.is_empty() {
        return err("output_dir", "must not be empty".into());
    }
    Ok(())
}
