//! Run configuration: sectioned TOML with dotted-path overrides and a
//! canonical content hash.
//!
//! The hash is computed over the *effective* configuration (file merged with
//! overrides, defaults materialized) re-serialized with sorted keys — two
//! configs hash equal iff every semantic knob matches. Execution resources
//! (`run.workers`) and artifact locations (`run.out`) are excluded so that
//! reruns on different machines or thread counts produce byte-identical,
//! same-hash result bodies.

use std::path::Path;

use nelab::coeff::{presets, CoefficientSpec};
use nelab::{Error, Grid, Result, DENSE_CAP, FOCK_DIM_CAP};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub coeff: Option<CoeffSection>,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub truncation: TruncationSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub fk: FkSection,
    #[serde(default)]
    pub pairpot: PairpotSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Named preset; mutually exclusive with an inline [coeff] section.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_workers")]
    pub workers: usize,
    #[serde(default = "d_out")]
    pub out: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { preset: None, seed: d_seed(), workers: d_workers(), out: d_out() }
    }
}

/// Optional overrides of the preset's lattice.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: Option<usize>,
    pub r: Option<f64>,
}

/// Inline coefficient family, for runs not covered by a named preset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoeffSection {
    /// One of: flat, bump, conformal-bump, power-mass, confining.
    pub kind: String,
    #[serde(default = "d_dim")]
    pub d: usize,
    /// power-mass amplitude and decay exponent.
    #[serde(default = "d_one")]
    pub m0: f64,
    #[serde(default = "d_two")]
    pub mu: f64,
    /// bump ellipticity window.
    #[serde(default = "d_lo")]
    pub lo: f64,
    #[serde(default = "d_hi")]
    pub hi: f64,
    /// confining growth: V >= b0 <x>^(2 delta).
    #[serde(default = "d_one")]
    pub b0: f64,
    #[serde(default = "d_one")]
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    /// Chain step.
    #[serde(default = "d_dt")]
    pub dt: f64,
    /// Horizons T for curve estimates.
    #[serde(default = "d_horizons")]
    pub horizons: Vec<f64>,
    /// Paths per ensemble.
    #[serde(default = "d_paths")]
    pub paths: usize,
    /// Confinement exponent for the escape split; 0 means the midpoint of
    /// the admissible window (1/(delta+1), 1).
    #[serde(default)]
    pub lambda: f64,
    /// Coupling strength; 0 means the preset's own value.
    #[serde(default)]
    pub coupling: f64,
    /// Pair lag (in steps) for the chain law checks.
    #[serde(default = "d_lag")]
    pub lag: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            dt: d_dt(),
            horizons: d_horizons(),
            paths: d_paths(),
            lambda: 0.0,
            coupling: 0.0,
            lag: d_lag(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSection {
    #[serde(default = "d_n_modes")]
    pub n_modes: usize,
    #[serde(default = "d_n_max")]
    pub n_max: u8,
    #[serde(default = "d_n_part")]
    pub n_part: usize,
    #[serde(default = "d_dense_cap")]
    pub dense_cap: usize,
    #[serde(default = "d_fock_cap")]
    pub fock_cap: usize,
}

impl Default for TruncationSection {
    fn default() -> Self {
        TruncationSection {
            n_modes: d_n_modes(),
            n_max: d_n_max(),
            n_part: d_n_part(),
            dense_cap: d_dense_cap(),
            fock_cap: d_fock_cap(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    #[serde(default = "d_t_lo")]
    pub t_lo: f64,
    #[serde(default = "d_t_hi")]
    pub t_hi: f64,
    #[serde(default = "d_t_count")]
    pub t_count: usize,
    /// Time for the product-formula and convexity spot checks.
    #[serde(default = "d_one")]
    pub check_t: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection { t_lo: d_t_lo(), t_hi: d_t_hi(), t_count: d_t_count(), check_t: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FkSection {
    #[serde(default = "d_one")]
    pub t: f64,
    #[serde(default = "d_fk_dt")]
    pub dt: f64,
    #[serde(default = "d_fk_paths")]
    pub paths: usize,
    /// Check nodes with |x| at most this.
    #[serde(default = "d_fk_window")]
    pub window: f64,
}

impl Default for FkSection {
    fn default() -> Self {
        FkSection { t: 1.0, dt: d_fk_dt(), paths: d_fk_paths(), window: d_fk_window() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairpotSection {
    /// Lag grid: lag_count steps of lag_dt starting at zero.
    #[serde(default = "d_dt")]
    pub lag_dt: f64,
    #[serde(default = "d_lag_count")]
    pub lag_count: usize,
    /// Distances r and times t for the continuum closed-form spot checks.
    #[serde(default = "d_winf_times")]
    pub winf_times: Vec<f64>,
    /// Width parameter of the analytic double-time bound check.
    #[serde(default = "d_one")]
    pub bound_a: f64,
    #[serde(default = "d_bound_t_cap")]
    pub bound_t_cap: f64,
}

impl Default for PairpotSection {
    fn default() -> Self {
        PairpotSection {
            lag_dt: d_dt(),
            lag_count: d_lag_count(),
            winf_times: d_winf_times(),
            bound_a: 1.0,
            bound_t_cap: d_bound_t_cap(),
        }
    }
}

fn d_seed() -> u64 {
    42
}
fn d_workers() -> usize {
    1
}
fn d_out() -> String {
    "out".into()
}
fn d_dim() -> usize {
    1
}
fn d_one() -> f64 {
    1.0
}
fn d_two() -> f64 {
    2.0
}
fn d_lo() -> f64 {
    0.8
}
fn d_hi() -> f64 {
    1.25
}
fn d_dt() -> f64 {
    0.125
}
fn d_horizons() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0, 16.0]
}
fn d_paths() -> usize {
    4096
}
fn d_lag() -> usize {
    2
}
fn d_n_modes() -> usize {
    3
}
fn d_n_max() -> u8 {
    4
}
fn d_n_part() -> usize {
    4
}
fn d_dense_cap() -> usize {
    DENSE_CAP
}
fn d_fock_cap() -> usize {
    FOCK_DIM_CAP
}
fn d_t_lo() -> f64 {
    0.05
}
fn d_t_hi() -> f64 {
    5.0
}
fn d_t_count() -> usize {
    6
}
fn d_fk_dt() -> f64 {
    1e-3
}
fn d_fk_paths() -> usize {
    20_000
}
fn d_fk_window() -> f64 {
    3.0
}
fn d_lag_count() -> usize {
    16
}
fn d_winf_times() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}
fn d_bound_t_cap() -> f64 {
    4.0
}

/// Parse a TOML document, apply dotted-path overrides, then deserialize.
/// All failure modes come back as `Error::Config` with the parser's
/// line/field diagnostics included.
pub fn load_config(
    path: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
    workers: Option<usize>,
    out: Option<&str>,
    default_preset: Option<&str>,
) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("config parse failed:\n{e}")))?;

    for set in sets {
        apply_set(&mut doc, set)?;
    }
    if let Some(s) = seed {
        apply_set(&mut doc, &format!("run.seed={s}"))?;
    }
    if let Some(w) = workers {
        apply_set(&mut doc, &format!("run.workers={w}"))?;
    }
    if let Some(o) = out {
        apply_set(&mut doc, &format!("run.out=\"{o}\""))?;
    }

    let mut config: RunConfig = doc
        .try_into()
        .map_err(|e| Error::Config(format!("config field error: {e}")))?;
    if let Some(name) = default_preset {
        if config.run.preset.is_none() && config.coeff.is_none() {
            config.run.preset = Some(name.to_string());
        }
    }
    validate(&config)?;
    Ok(config)
}

/// Apply one `dotted.path=value` override. The value fragment is parsed as
/// TOML (numbers, booleans, arrays, quoted strings); a fragment that fails to
/// parse is taken as a bare string.
fn apply_set(doc: &mut toml::Table, set: &str) -> Result<()> {
    let (path, raw) = set
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {set:?} is not KEY=VALUE")))?;
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override path {path:?} has an empty segment")));
    }
    let mut table = doc;
    for key in &keys[..keys.len() - 1] {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            Error::Config(format!("override path {path:?}: {key} is not a table"))
        })?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn validate(config: &RunConfig) -> Result<()> {
    match (&config.run.preset, &config.coeff) {
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "run.preset and [coeff] are mutually exclusive; pick one".into(),
            ))
        }
        (None, None) => {
            return Err(Error::Config(format!(
                "no coefficients: set run.preset (one of {}) or an inline [coeff] section",
                presets::NAMES.join(", ")
            )))
        }
        _ => {}
    }
    if let Some(name) = &config.run.preset {
        if presets::by_name(name).is_none() {
            return Err(Error::Config(format!(
                "unknown preset {name:?}; shipped presets: {}",
                presets::NAMES.join(", ")
            )));
        }
    }
    if let Some(c) = &config.coeff {
        let known = ["flat", "bump", "conformal-bump", "power-mass", "confining"];
        if !known.contains(&c.kind.as_str()) {
            return Err(Error::Config(format!(
                "coeff.kind {:?} unknown; one of {}",
                c.kind,
                known.join(", ")
            )));
        }
        if !(1..=3).contains(&c.d) {
            return Err(Error::Config(format!("coeff.d = {} outside 1..=3", c.d)));
        }
    }
    if config.run.workers == 0 {
        return Err(Error::Config("run.workers must be at least 1".into()));
    }
    if config.sampler.dt <= 0.0 {
        return Err(Error::Config(format!("sampler.dt = {} must be positive", config.sampler.dt)));
    }
    if config.sampler.horizons.is_empty() {
        return Err(Error::Config("sampler.horizons must be nonempty".into()));
    }
    if config.sampler.horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sampler.horizons must be strictly increasing".into()));
    }
    if config.sampler.paths < 32 {
        return Err(Error::Config("sampler.paths must be at least 32 (batch means)".into()));
    }
    if config.sampler.lambda != 0.0 && !(0.0 < config.sampler.lambda && config.sampler.lambda < 1.0)
    {
        return Err(Error::Config(format!(
            "sampler.lambda = {} outside (0, 1); 0 selects the window midpoint",
            config.sampler.lambda
        )));
    }
    if config.kernel.t_lo <= 0.0 || config.kernel.t_hi <= config.kernel.t_lo {
        return Err(Error::Config("kernel times need 0 < t_lo < t_hi".into()));
    }
    if config.kernel.t_count < 2 {
        return Err(Error::Config("kernel.t_count must be at least 2".into()));
    }
    if config.truncation.n_modes == 0 || config.truncation.n_part == 0 {
        return Err(Error::Config("truncations must be at least 1".into()));
    }
    Ok(())
}

/// A resolved laboratory: lattice, coefficients, effective sampler knobs, and
/// the canonical config hash.
#[derive(Debug, Clone)]
pub struct Lab {
    pub config: RunConfig,
    pub grid: Grid,
    pub spec: CoefficientSpec,
    /// Effective confinement exponent (window midpoint when auto).
    pub lambda: f64,
    /// Effective coupling (preset value when auto).
    pub coupling: f64,
    pub hash: String,
}

/// Resolve a validated config into grid + coefficients, enforce the
/// coefficient gates on the final lattice, and fix λ and q.
pub fn resolve(config: RunConfig) -> Result<Lab> {
    let (mut grid, spec) = match (&config.run.preset, &config.coeff) {
        (Some(name), _) => presets::by_name(name).unwrap(),
        (None, Some(c)) => match c.kind.as_str() {
            "flat" => presets::flat(c.d),
            "bump" => presets::bump(c.d, c.lo, c.hi),
            "conformal-bump" => presets::conformal_bump(c.d),
            "power-mass" => presets::power_mass(c.d, c.m0, c.mu),
            "confining" => presets::confining(c.d, c.b0, c.delta),
            _ => unreachable!("validated"),
        },
        (None, None) => unreachable!("validated"),
    };
    if config.grid.n.is_some() || config.grid.r.is_some() {
        grid = Grid::dirichlet(
            grid.d,
            config.grid.r.unwrap_or(grid.r),
            config.grid.n.unwrap_or(grid.n),
        )?;
    }
    spec.validate(&grid)?;

    let delta = spec.growth.map(|g| g.delta);
    let lambda = if config.sampler.lambda == 0.0 {
        match delta {
            Some(d) => 0.5 * (1.0 / (d + 1.0) + 1.0),
            None => 0.75,
        }
    } else {
        if let Some(d) = delta {
            let lo = 1.0 / (d + 1.0);
            if config.sampler.lambda <= lo {
                return Err(Error::Config(format!(
                    "sampler.lambda = {} at or below the window floor 1/(delta+1) = {lo:.6}",
                    config.sampler.lambda
                )));
            }
        }
        config.sampler.lambda
    };
    let coupling =
        if config.sampler.coupling == 0.0 { spec.coupling } else { config.sampler.coupling };
    if coupling < 0.0 {
        return Err(Error::Config(format!("coupling {coupling} must be nonnegative")));
    }

    let hash = config_hash(&config);
    Ok(Lab { config, grid, spec, lambda, coupling, hash })
}

/// Canonical hash: effective config minus workers/out, re-serialized with
/// sorted keys (TOML tables sort lexicographically), SHA-256, first 8 bytes.
pub fn config_hash(config: &RunConfig) -> String {
    let mut doc = toml::Table::try_from(config).expect("config re-serializes");
    if let Some(run) = doc.get_mut("run").and_then(|v| v.as_table_mut()) {
        run.remove("workers");
        run.remove("out");
    }
    let canonical = toml::to_string(&doc).expect("canonical toml");
    let mut h = Sha256::new();
    h.update(canonical.as_bytes());
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str, sets: &[&str]) -> Result<RunConfig> {
        let dir = std::env::temp_dir();
        let path = dir.join(format!("nelab-cfg-{}-{}.toml", std::process::id(), text.len()));
        std::fs::write(&path, text).unwrap();
        let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
        let out = load_config(Some(&path), &sets, None, None, None);
        std::fs::remove_file(&path).unwrap();
        out
    }

    #[test]
    fn defaults_fill_in_and_preset_resolves() {
        let config = cfg("[run]\npreset = \"tiny-chain\"\n", &[]).unwrap();
        assert_eq!(config.run.seed, 42);
        assert_eq!(config.sampler.paths, 4096);
        let lab = resolve(config).unwrap();
        assert_eq!(lab.grid.len(), 4);
        assert_eq!(lab.coupling, 0.6);
        // tiny-chain has delta = 1: window (1/2, 1), midpoint 3/4.
        assert!((lab.lambda - 0.75).abs() < 1e-12);
    }

    #[test]
    fn dotted_overrides_reach_nested_fields_and_the_hash() {
        let base = cfg("[run]\npreset = \"tiny-chain\"\n", &[]).unwrap();
        let bumped = cfg(
            "[run]\npreset = \"tiny-chain\"\n",
            &["sampler.paths=8192", "truncation.n_max=6", "run.preset=fk-harmonic"],
        )
        .unwrap();
        assert_eq!(bumped.sampler.paths, 8192);
        assert_eq!(bumped.truncation.n_max, 6);
        assert_eq!(bumped.run.preset.as_deref(), Some("fk-harmonic"));
        assert_ne!(config_hash(&base), config_hash(&bumped));
    }

    #[test]
    fn workers_and_out_do_not_change_the_hash() {
        let a = cfg("[run]\npreset = \"tiny-chain\"\n", &[]).unwrap();
        let b = cfg("[run]\npreset = \"tiny-chain\"\nworkers = 7\nout = \"elsewhere\"", &[])
            .unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn unknown_fields_and_bad_values_are_diagnosed() {
        assert!(matches!(
            cfg("[run]\npreset = \"tiny-chain\"\nbogus = 1\n", &[]),
            Err(Error::Config(_))
        ));
        assert!(matches!(cfg("[run]\npreset = \"no-such\"\n", &[]), Err(Error::Config(_))));
        assert!(matches!(
            cfg("[run]\npreset = \"tiny-chain\"\n[sampler]\ndt = -1.0\n", &[]),
            Err(Error::Config(_))
        ));
        assert!(matches!(cfg("", &[]), Err(Error::Config(_))));
        // Both coefficient sources at once.
        assert!(matches!(
            cfg("[run]\npreset = \"flat\"\n[coeff]\nkind = \"flat\"\n", &[]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn inline_coefficients_build_the_analytic_family() {
        let config =
            cfg("[coeff]\nkind = \"power-mass\"\nd = 1\nm0 = 1.0\nmu = 2.0\n", &[]).unwrap();
        let lab = resolve(config).unwrap();
        assert_eq!(lab.spec.name, "power-mass");
        assert!(lab.spec.mass_decay.is_some());
    }

    #[test]
    fn grid_overrides_rebuild_the_lattice() {
        let config =
            cfg("[run]\npreset = \"tiny-chain\"\n[grid]\nn = 10\nr = 3.0\n", &[]).unwrap();
        let lab = resolve(config).unwrap();
        assert_eq!(lab.grid.n, 10);
        assert_eq!(lab.grid.len(), 8);
    }

    #[test]
    fn lambda_window_is_enforced_against_the_growth_certificate() {
        // tiny-chain: delta = 1 => floor 0.5.
        let bad = cfg("[run]\npreset = \"tiny-chain\"\n[sampler]\nlambda = 0.4\n", &[]).unwrap();
        assert!(matches!(resolve(bad), Err(Error::Config(_))));
        let good = cfg("[run]\npreset = \"tiny-chain\"\n[sampler]\nlambda = 0.8\n", &[]).unwrap();
        assert!((resolve(good).unwrap().lambda - 0.8).abs() < 1e-12);
    }

    #[test]
    fn string_overrides_without_quotes_are_accepted() {
        let config = cfg("", &["run.preset=tiny-chain"]).unwrap();
        assert_eq!(config.run.preset.as_deref(), Some("tiny-chain"));
    }
}
