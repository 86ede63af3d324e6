//! Declarative scans: flat key-value configs, CSV rows, growth fits and pass/fail assertions.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decomp::{
    build_exceptional_set, nested_p_universe, stopping_time, verify_energy_estimate, audit_lines, DecompError,
    SpatialSet, StoppingConfig, StoppingInputs, ToyGeometry, DEFAULT_ENERGY_BUDGET, DEFAULT_OMEGA_CONSTANT,
    DEFAULT_TOY_DECAY,
};
use crate::grid::{lr_quasi_norm, ExponentTuple, GridError, GridFunction, GridSpec, SlotKind, C64};
use crate::operators::{apply_bilinear, apply_trilinear, max_discrepancy, OperatorError, OutputGrid, Path};
use crate::symbols::{
    build_mikhlin_symbol, ladder_blowup_family, log_blowup_pair, ladder_blowup_pair,
    log_blowup_symbol, tensor_symbol, LogBlowupParams, Symbol2, SymbolDescriptor, SymbolError, LOG_BLOWUP_EPS,
};
use crate::tiles::{random_rank1_universe, single_scale_universe, Shift, TileError, TriTile, UniverseParams};

/// Largest relative residual of the `sqrt(log N)` fit.
pub const FIT_RESIDUAL_MAX: f64 = 0.15;
/// Largest relative change of the running maximum per doubling of `N`.
pub const MIXED_DRIFT_MAX: f64 = 0.2;
/// Smallest growth of the contrast row across the scanned range.
pub const CONTRAST_GROWTH_MIN: f64 = 0.3;
/// Pointwise floor of each tested block on `[1, N]`.
pub const POINTWISE_FLOOR: f64 = 0.1;
/// Largest max/median spread of a restricted-type ratio column.
pub const RESTRICTED_SPREAD_MAX: f64 = 10.0;
/// Largest admissible `|Omega| / |E_4|`.
pub const OMEGA_FRACTION_MAX: f64 = 0.5;

const ALL_SHIFTS: [Shift; 3] = [Shift::Zero, Shift::Third, Shift::TwoThirds];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing key {0:?}")]
    MissingKey(&'static str),
    #[error("{expected} scan cannot run a {got} config")]
    WrongKind { expected: &'static str, got: ExperimentKind },
    #[error("{0}")]
    BadConfig(String),
    #[error("resolution insufficient for N = {n}")]
    Unresolved { n: u64, source: SymbolError },
    #[error("ratio field {field} is {value}")]
    BadRatio { field: &'static str, value: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Decomp(#[from] DecompError),
    #[error(transparent)]
    Tile(#[from] TileError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Counterexample2,
    Counterexample8,
    MixedRatio,
    RestrictedType,
    OracleEquiv,
    DecompositionAudit,
}

impl ExperimentKind {
    pub const ALL: [Self; 6] = [
        Self::Counterexample2,
        Self::Counterexample8,
        Self::MixedRatio,
        Self::RestrictedType,
        Self::OracleEquiv,
        Self::DecompositionAudit,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Counterexample2 => "counterexample2",
            Self::Counterexample8 => "counterexample8",
            Self::MixedRatio => "mixed_ratio",
            Self::RestrictedType => "restricted_type",
            Self::OracleEquiv => "oracle_equiv",
            Self::DecompositionAudit => "decomposition_audit",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown experiment kind {s:?}"))
    }
}

/// The three extremal sets of restricted-type tuples `(a1, a2, a3, a4)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extremal {
    E0,
    E1,
    E2,
}

impl Extremal {
    pub const ALL: [Self; 3] = [Self::E0, Self::E1, Self::E2];

    pub fn tuples(&self) -> [[f64; 4]; 2] {
        match self {
            Self::E0 => [[0.0, 0.5, 0.5, 0.0], [1.0, 0.5, 0.5, -1.0]],
            Self::E1 => [[1.0, 1.0, 1.0, -1.0], [1.0, 1.0, 0.0, 0.0]],
            Self::E2 => [[0.0, 1.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]],
        }
    }

    /// Each tuple pulled a fraction `eps` toward the midpoint of the pair.
    pub fn near_tuples(&self, eps: f64) -> [[f64; 4]; 2] {
        let [a, b] = self.tuples();
        let mid: [f64; 4] = std::array::from_fn(|i| 0.5 * (a[i] + b[i]));
        [a, b].map(|t| std::array::from_fn(|i| (1.0 - eps) * t[i] + eps * mid[i]))
    }

    fn name(&self) -> &'static str {
        match self {
            Self::E0 => "e0",
            Self::E1 => "e1",
            Self::E2 => "e2",
        }
    }
}

impl fmt::Display for Extremal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Extremal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| format!("unknown extremal set {s:?}"))
    }
}

/// A scan description; see [`ExperimentConfig::from_str`] for the file format.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub grid: GridSpec,
    pub exponents: ExponentTuple,
    pub n_values: Vec<u64>,
    pub seed_start: u64,
    pub seed_count: u64,
    pub symbol: Option<SymbolDescriptor>,
    pub symbol2: Option<SymbolDescriptor>,
    pub output: Option<PathBuf>,
    pub padding: usize,
    pub scale_min: i32,
    pub scale_max: i32,
    pub epsilon: f64,
    pub target: Extremal,
    pub tolerance: f64,
    pub contrast: bool,
    pub universe_size: usize,
}

fn exps(p: &[f64], kinds: &[SlotKind]) -> ExponentTuple {
    ExponentTuple::new(p.to_vec(), kinds.to_vec()).expect("preset exponents are valid")
}

fn grid(points: usize, period: f64) -> GridSpec {
    GridSpec::new(points, period).expect("preset grids are valid")
}

impl ExperimentConfig {
    /// Reference protocol for each kind.
    pub fn preset(kind: ExperimentKind) -> Self {
        use SlotKind::{L, W};
        let base = Self {
            kind,
            grid: grid(1 << 14, 2048.0),
            exponents: exps(&[4.0, 4.0], &[L, L]),
            n_values: vec![16, 32, 64, 128, 256],
            seed_start: 0,
            seed_count: 1,
            symbol: None,
            symbol2: None,
            output: None,
            padding: 1,
            scale_min: 8,
            scale_max: 9,
            epsilon: 0.05,
            target: Extremal::E0,
            tolerance: 1e-9,
            contrast: false,
            universe_size: 500,
        };
        match kind {
            ExperimentKind::Counterexample2 => base,
            ExperimentKind::Counterexample8 => Self { scale_min: 5, scale_max: 8, ..base },
            ExperimentKind::MixedRatio => Self {
                grid: grid(64, 8.0),
                exponents: exps(&[4.0, 4.0, 4.0], &[L, W, L]),
                n_values: vec![64, 128, 256],
                seed_count: 200,
                symbol: Some(SymbolDescriptor::Mikhlin { seed: 1, order: 2 }),
                symbol2: Some(SymbolDescriptor::Mikhlin { seed: 2, order: 2 }),
                padding: 4,
                scale_max: 8,
                contrast: true,
                ..base
            },
            ExperimentKind::RestrictedType => Self {
                grid: grid(2048, 64.0),
                exponents: exps(&[2.0, 2.0, 2.0, 2.0], &[L, L, L, L]),
                n_values: vec![2048],
                seed_count: 50,
                ..base
            },
            ExperimentKind::OracleEquiv => Self {
                grid: grid(64, 8.0),
                exponents: exps(&[2.0, 2.0, 2.0], &[L, L, L]),
                n_values: vec![32, 64],
                seed_count: 20,
                padding: 4,
                ..base
            },
            ExperimentKind::DecompositionAudit => Self {
                grid: grid(2048, 64.0),
                exponents: exps(&[2.0, 2.0, 2.0, 2.0], &[L, L, L, L]),
                n_values: vec![500],
                seed_count: 50,
                ..base
            },
        }
    }

    pub fn seeds(&self) -> std::ops::Range<u64> {
        self.seed_start..self.seed_start + self.seed_count
    }

    /// First 16 hex digits of the SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copy on the smallest grid that represents the counterexample at the largest `N`.
    pub fn resolved(&self) -> Result<Self, ExperimentError> {
        let n_max = self.n_values.iter().copied().max().ok_or(ExperimentError::MissingKey("n_values"))?;
        let grid = resolved_grid(self.kind, n_max, self.scale_max)?;
        Ok(Self { grid, ..self.clone() })
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let num = |v: &str| v.parse::<f64>().map_err(|e| format!("{key}: {e}"));
        let int = |v: &str| v.parse::<u64>().map_err(|e| format!("{key}: {e}"));
        let list = |v: &str| v.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>();
        let optional = |v: &str| (v != "none").then(|| v.to_string());
        match key {
            "kind" => self.kind = value.parse()?,
            "grid.points" => {
                self.grid = GridSpec::new(int(value)? as usize, self.grid.period()).map_err(|e| e.to_string())?
            }
            "grid.period" => {
                self.grid = GridSpec::new(self.grid.num_points(), num(value)?).map_err(|e| e.to_string())?
            }
            "exponents" => {
                let p = list(value).iter().map(|s| num(s)).collect::<Result<Vec<_>, _>>()?;
                let kinds = if p.len() == self.exponents.kinds().len() {
                    self.exponents.kinds().to_vec()
                } else {
                    vec![SlotKind::L; p.len()]
                };
                self.exponents = ExponentTuple::new(p, kinds).map_err(|e| e.to_string())?;
            }
            "slots" => {
                let kinds = list(value)
                    .iter()
                    .map(|s| match s.as_str() {
                        "L" => Ok(SlotKind::L),
                        "W" => Ok(SlotKind::W),
                        other => Err(format!("slot kind must be L or W, got {other:?}")),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                self.exponents = ExponentTuple::new(self.exponents.p().to_vec(), kinds).map_err(|e| e.to_string())?;
            }
            "n_values" => self.n_values = list(value).iter().map(|s| int(s)).collect::<Result<_, _>>()?,
            "seed_start" => self.seed_start = int(value)?,
            "seed_count" => self.seed_count = int(value)?,
            "symbol" | "symbol2" => {
                let d = optional(value)
                    .map(|v| SymbolDescriptor::from_json(&v).map_err(|e| e.to_string()))
                    .transpose()?;
                if key == "symbol" {
                    self.symbol = d;
                } else {
                    self.symbol2 = d;
                }
            }
            "output" => self.output = optional(value).map(PathBuf::from),
            "padding" => self.padding = int(value)? as usize,
            "scale_min" => self.scale_min = value.parse().map_err(|e| format!("{key}: {e}"))?,
            "scale_max" => self.scale_max = value.parse().map_err(|e| format!("{key}: {e}"))?,
            "epsilon" => self.epsilon = num(value)?,
            "target" => self.target = value.parse()?,
            "tolerance" => self.tolerance = num(value)?,
            "contrast" => self.contrast = value.parse().map_err(|e| format!("{key}: {e}"))?,
            "universe_size" => self.universe_size = int(value)? as usize,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    fn check(&self) -> Result<(), String> {
        if self.n_values.is_empty() {
            return Err("n_values must not be empty".into());
        }
        if self.padding == 0 || !self.padding.is_power_of_two() {
            return Err(format!("padding must be a power of two, got {}", self.padding));
        }
        if self.scale_min > self.scale_max {
            return Err(format!("scale_min {} exceeds scale_max {}", self.scale_min, self.scale_max));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(format!("tolerance must be positive, got {}", self.tolerance));
        }
        Ok(())
    }
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let slots: Vec<&str> = self.exponents.kinds().iter().map(|k| if *k == SlotKind::L { "L" } else { "W" }).collect();
        let desc = |d: &Option<SymbolDescriptor>| d.as_ref().map_or("none".to_string(), |d| d.to_json());
        writeln!(f, "kind = {}", self.kind)?;
        writeln!(f, "grid.points = {}", self.grid.num_points())?;
        writeln!(f, "grid.period = {}", self.grid.period())?;
        writeln!(f, "exponents = {}", join(self.exponents.p()))?;
        writeln!(f, "slots = {}", slots.join(","))?;
        writeln!(f, "n_values = {}", join(&self.n_values))?;
        writeln!(f, "seed_start = {}", self.seed_start)?;
        writeln!(f, "seed_count = {}", self.seed_count)?;
        writeln!(f, "symbol = {}", desc(&self.symbol))?;
        writeln!(f, "symbol2 = {}", desc(&self.symbol2))?;
        writeln!(f, "output = {}", self.output.as_ref().map_or("none".to_string(), |p| p.display().to_string()))?;
        writeln!(f, "padding = {}", self.padding)?;
        writeln!(f, "scale_min = {}", self.scale_min)?;
        writeln!(f, "scale_max = {}", self.scale_max)?;
        writeln!(f, "epsilon = {}", self.epsilon)?;
        writeln!(f, "target = {}", self.target)?;
        writeln!(f, "tolerance = {}", self.tolerance)?;
        writeln!(f, "contrast = {}", self.contrast)?;
        writeln!(f, "universe_size = {}", self.universe_size)
    }
}

impl FromStr for ExperimentConfig {
    type Err = ExperimentError;

    /// One `key = value` per line; blank lines and lines starting with `#` are skipped.
    /// Keys absent from the file take the preset value of the declared `kind`.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        let mut seen = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ExperimentError::Parse { line: i + 1, msg: "expected key = value".into() })?;
            let key = key.trim();
            if let Some(first) = seen.insert(key, i + 1) {
                return Err(ExperimentError::Parse { line: i + 1, msg: format!("duplicate key {key:?} (first on line {first})") });
            }
            entries.push((i + 1, key, value.trim()));
        }
        let (kind_line, _, kind) = entries
            .iter()
            .find(|(_, k, _)| *k == "kind")
            .ok_or(ExperimentError::MissingKey("kind"))?;
        let kind: ExperimentKind = kind.parse().map_err(|msg| ExperimentError::Parse { line: *kind_line, msg })?;
        let mut cfg = Self::preset(kind);
        // Points before period so that either order parses, exponents before slots likewise.
        let rank = |k: &str| match k {
            "grid.points" => 0,
            "exponents" => 1,
            _ => 2,
        };
        entries.sort_by_key(|(line, k, _)| (rank(k), *line));
        for (line, key, value) in entries {
            cfg.set(key, value).map_err(|msg| ExperimentError::Parse { line, msg })?;
        }
        cfg.check().map_err(ExperimentError::BadConfig)?;
        Ok(cfg)
    }
}

/// One CSV row. Every ratio field is finite and nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub seed: u64,
    pub n: u64,
    /// Input family, scanned tuple or path label.
    pub label: String,
    pub in_region: bool,
    pub norm1: Option<f64>,
    pub norm2: Option<f64>,
    pub norm3: Option<f64>,
    pub output_norm: f64,
    pub ratio: f64,
    pub square_ratio: Option<f64>,
    pub running_max: Option<f64>,
    pub pointwise_min: Option<f64>,
    pub omega_fraction: Option<f64>,
    pub flagged: bool,
}

impl ExperimentRecord {
    fn new(kind: ExperimentKind, config_hash: &str, seed: u64, n: u64, label: impl Into<String>) -> Self {
        Self {
            kind,
            config_hash: config_hash.to_string(),
            seed,
            n,
            label: label.into(),
            in_region: false,
            norm1: None,
            norm2: None,
            norm3: None,
            output_norm: 0.0,
            ratio: 0.0,
            square_ratio: None,
            running_max: None,
            pointwise_min: None,
            omega_fraction: None,
            flagged: false,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fields = [
            ("ratio", Some(self.ratio)),
            ("square_ratio", self.square_ratio),
            ("running_max", self.running_max),
            ("omega_fraction", self.omega_fraction),
        ];
        for (field, value) in fields {
            if let Some(v) = value {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(ExperimentError::BadRatio { field, value: v });
                }
            }
        }
        Ok(())
    }
}

/// Proportional least-squares fit `R ~ slope * sqrt(ln N)` over the upper half of the range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub slope: f64,
    /// Largest `|R - fit| / R` over the fitted points.
    pub residual: f64,
    /// `(max - min) / mean` of `R / sqrt(ln N)` over the fitted points.
    pub variation: f64,
    pub fitted_n: Vec<u64>,
}

/// Fits `(n, R)` pairs with `n >= 2`; `None` when fewer than two qualify.
pub fn fit_sqrt_log(points: &[(u64, f64)]) -> Option<GrowthFit> {
    let mut pts: Vec<(u64, f64)> = points.iter().copied().filter(|(n, _)| *n >= 2).collect();
    pts.sort_by_key(|p| p.0);
    let upper = &pts[pts.len() / 2..];
    if upper.len() < 2 {
        return None;
    }
    let s: Vec<f64> = upper.iter().map(|(n, _)| (*n as f64).ln().sqrt()).collect();
    let slope = upper.iter().zip(&s).map(|((_, r), s)| r * s).sum::<f64>() / s.iter().map(|s| s * s).sum::<f64>();
    let residual = upper.iter().zip(&s).map(|((_, r), s)| (r - slope * s).abs() / r).fold(0.0, f64::max);
    let normalized: Vec<f64> = upper.iter().zip(&s).map(|((_, r), s)| r / s).collect();
    let mean = normalized.iter().sum::<f64>() / normalized.len() as f64;
    let spread = normalized.iter().copied().fold(f64::NEG_INFINITY, f64::max) - normalized.iter().copied().fold(f64::INFINITY, f64::min);
    Some(GrowthFit { slope, residual, variation: spread / mean, fitted_n: upper.iter().map(|p| p.0).collect() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub rows: Vec<ExperimentRecord>,
    pub fit: Option<GrowthFit>,
    pub assertions: Vec<Assertion>,
    /// One JSON object per extracted tree (decomposition audits only).
    #[serde(skip)]
    pub audit: Vec<String>,
    /// Wall time; kept out of the rows so reruns give identical CSV.
    pub runtime_ms: u128,
}

impl ScanReport {
    fn new(cfg: &ExperimentConfig, mut rows: Vec<ExperimentRecord>) -> Result<Self, ExperimentError> {
        rows.iter().try_for_each(ExperimentRecord::validate)?;
        // Stable, so ties keep generation order.
        rows.sort_by_key(|r| (r.n, r.seed));
        Ok(Self { kind: cfg.kind, config_hash: cfg.hash(), rows, fit: None, assertions: Vec::new(), audit: Vec::new(), runtime_ms: 0 })
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ExperimentError> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> Result<String, ExperimentError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Summary without rows, as one JSON object.
    pub fn summary_json(&self) -> String {
        serde_json::json!({
            "kind": self.kind,
            "config_hash": self.config_hash,
            "rows": self.rows.len(),
            "fit": self.fit,
            "assertions": self.assertions,
            "runtime_ms": self.runtime_ms as u64,
        })
        .to_string()
    }
}

/// Runs the scan named by `cfg.kind`.
pub fn run(cfg: &ExperimentConfig) -> Result<ScanReport, ExperimentError> {
    let start = Instant::now();
    let mut report = match cfg.kind {
        ExperimentKind::Counterexample2 | ExperimentKind::Counterexample8 => run_counterexample_scan(cfg),
        ExperimentKind::MixedRatio => run_mixed_ratio_scan(cfg),
        ExperimentKind::RestrictedType => run_restricted_type_scan(cfg),
        ExperimentKind::OracleEquiv => run_oracle_equivalence(cfg),
        ExperimentKind::DecompositionAudit => run_decomposition_audit(cfg),
    }?;
    report.runtime_ms = start.elapsed().as_millis();
    Ok(report)
}

fn expect_kind(cfg: &ExperimentConfig, ok: &[ExperimentKind], expected: &'static str) -> Result<(), ExperimentError> {
    if ok.contains(&cfg.kind) {
        Ok(())
    } else {
        Err(ExperimentError::WrongKind { expected, got: cfg.kind })
    }
}

/// Time margin and spectral half-width of the counterexample trains.
fn train_geometry(kind: ExperimentKind) -> (f64, f64) {
    match kind {
        ExperimentKind::Counterexample8 => (128.0, 0.125),
        _ => (4.0 / LOG_BLOWUP_EPS, 0.5),
    }
}

/// Smallest grid holding `n_max` packets, their frequencies, and scales up to `scale_max`.
pub fn resolved_grid(kind: ExperimentKind, n_max: u64, scale_max: i32) -> Result<GridSpec, ExperimentError> {
    let (margin, half_width) = train_geometry(kind);
    let span = n_max as f64 + 2.0 * margin;
    let scales = 8.0 * 2f64.powi(scale_max.max(0));
    let period = span.max(scales).ceil() as u64;
    let period = period.next_power_of_two() as f64;
    let points = (2.0 * period * (n_max as f64 + half_width + 1.0)).ceil() as u64;
    Ok(GridSpec::new(points.next_power_of_two() as usize, period)?)
}

/// Largest `|output frequency|` a separable symbol can produce, in lattice units.
fn output_reach(m: &Symbol2) -> i64 {
    m.terms()
        .unwrap_or_default()
        .iter()
        .map(|t| match &t.w {
            Some(w) => w.start().abs().max((w.end() - 1).abs()),
            None => (t.u.start() + t.v.start()).abs().max((t.u.end() + t.v.end() - 2).abs()),
        })
        .max()
        .unwrap_or(0)
}

fn counterexample_pair(kind: ExperimentKind, n: u64, spec: GridSpec) -> Result<(GridFunction, GridFunction), ExperimentError> {
    let pair = match kind {
        ExperimentKind::Counterexample8 => ladder_blowup_pair(n as usize, spec),
        _ => log_blowup_pair(n as usize, spec),
    };
    pair.map_err(|source| ExperimentError::Unresolved { n, source })
}

/// Per-scale symbols: single `k` shells of the square family, or the `k0` blocks.
fn counterexample_scales(cfg: &ExperimentConfig, n_max: u64) -> Result<Vec<(i32, Symbol2)>, ExperimentError> {
    let spec = cfg.grid;
    let unresolved = |source| ExperimentError::Unresolved { n: n_max, source };
    match cfg.kind {
        ExperimentKind::Counterexample8 => {
            let family = ladder_blowup_family(cfg.scale_min..=cfg.scale_max, n_max as usize, spec).map_err(unresolved)?;
            Ok(family.blocks)
        }
        _ => (cfg.scale_min..=cfg.scale_max)
            .map(|k| {
                let params = LogBlowupParams { k_min: k, ..LogBlowupParams::reference() };
                log_blowup_symbol(&params, k, spec).map(|s| (k, s)).map_err(unresolved)
            })
            .collect(),
    }
}

/// `R(N) = ||T(f1^N, f2^N)||_r / (||f1||_p1 ||f2||_p2)` with the square-function variant.
pub fn run_counterexample_scan(cfg: &ExperimentConfig) -> Result<ScanReport, ExperimentError> {
    expect_kind(cfg, &[ExperimentKind::Counterexample2, ExperimentKind::Counterexample8], "counterexample")?;
    if cfg.exponents.p().len() != 2 {
        return Err(ExperimentError::BadConfig("counterexample scans need two exponents".into()));
    }
    let n_max = *cfg.n_values.iter().max().expect("checked nonempty");
    // Fails fast when the largest train does not fit the grid.
    counterexample_pair(cfg.kind, n_max, cfg.grid)?;
    let scales = counterexample_scales(cfg, n_max)?;
    let reach = scales.iter().map(|(_, s)| output_reach(s)).max().unwrap_or(0);
    let out_points = ((2 * reach + 2) as usize).next_power_of_two().max(2) * cfg.padding;
    let grid = OutputGrid::Points(out_points);
    let r = cfg.exponents.holder_target();
    let hash = cfg.hash();
    let mut rows = Vec::new();
    for &n in &cfg.n_values {
        let (f1, f2) = counterexample_pair(cfg.kind, n, cfg.grid)?;
        let n1 = cfg.exponents.slot_norm(0, &f1)?;
        let n2 = cfg.exponents.slot_norm(1, &f2)?;
        let outputs = scales
            .iter()
            .map(|(k, m)| Ok((*k, apply_bilinear(m, &f1, &f2, Path::FftFast, grid)?.output)))
            .collect::<Result<Vec<_>, ExperimentError>>()?;
        let out_spec = grid.spec_for(cfg.grid)?;
        let mut total = GridFunction::zeros(out_spec);
        let mut square = vec![0.0f64; out_points];
        for (_, t) in &outputs {
            total = total.add(t)?;
            square.iter_mut().zip(t.samples()).for_each(|(s, z)| *s += z.norm_sqr());
        }
        let square = GridFunction::new(out_spec, square.into_iter().map(|s| C64::new(s.sqrt(), 0.0)).collect())?;
        let denom = n1 * n2;
        let output_norm = lr_quasi_norm(&total, r)?;
        let mut row = ExperimentRecord::new(cfg.kind, &hash, cfg.seed_start, n, "adversarial_train");
        row.norm1 = Some(n1);
        row.norm2 = Some(n2);
        row.output_norm = output_norm;
        row.ratio = if denom > 0.0 { output_norm / denom } else { 0.0 };
        row.square_ratio = Some(if denom > 0.0 { lr_quasi_norm(&square, r)? / denom } else { 0.0 });
        if cfg.kind == ExperimentKind::Counterexample8 {
            row.pointwise_min = pointwise_floor(&outputs, n, out_spec);
        }
        rows.push(row);
    }
    let mut report = ScanReport::new(cfg, rows)?;
    let series: Vec<(u64, f64)> = report.rows.iter().filter(|r| r.n >= 2).map(|r| (r.n, r.ratio)).collect();
    let monotone = series.windows(2).all(|w| w[1].1 > w[0].1);
    report.assertions.push(Assertion::new(
        "ratio strictly increasing in N",
        monotone,
        series.iter().map(|(n, r)| format!("R({n})={r:.5}")).collect::<Vec<_>>().join(" "),
    ));
    report.fit = fit_sqrt_log(&series);
    let (ok, detail) = match &report.fit {
        Some(f) => (
            f.residual <= FIT_RESIDUAL_MAX,
            format!("slope {:.5}, residual {:.4}, variation {:.4} over N={:?}", f.slope, f.residual, f.variation, f.fitted_n),
        ),
        None => (false, "fewer than two points in the upper half".into()),
    };
    report.assertions.push(Assertion::new("sqrt(log N) fit residual <= 0.15", ok, detail));
    if cfg.kind == ExperimentKind::Counterexample8 {
        let mins: Vec<(u64, f64)> = report.rows.iter().filter_map(|r| r.pointwise_min.map(|m| (r.n, m))).collect();
        report.assertions.push(Assertion::new(
            "|B_k0| >= 0.1 on [1, N] for tested k0",
            !mins.is_empty() && mins.iter().all(|(_, m)| *m >= POINTWISE_FLOOR),
            mins.iter().map(|(n, m)| format!("N={n}: {m:.4}")).collect::<Vec<_>>().join(" "),
        ));
    }
    Ok(report)
}

/// `min |B_k0(x)|` over samples in `[1, N]` and blocks with `2^k0 <= N`.
fn pointwise_floor(outputs: &[(i32, GridFunction)], n: u64, spec: GridSpec) -> Option<f64> {
    let tested: Vec<&GridFunction> = outputs.iter().filter(|(k, _)| 2f64.powi(*k) <= n as f64).map(|(_, t)| t).collect();
    if tested.is_empty() {
        return None;
    }
    let idx: Vec<usize> = (0..spec.num_points()).filter(|&j| (1.0..=n as f64).contains(&spec.x(j))).collect();
    Some(tested.iter().flat_map(|t| idx.iter().map(|&j| t.samples()[j].norm())).fold(f64::INFINITY, f64::min))
}

/// Random test functions used by the mixed-ratio and oracle scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFamily {
    GaussianBumps,
    IndicatorUnion,
    WaveTrain,
}

impl InputFamily {
    pub const ALL: [Self; 3] = [Self::GaussianBumps, Self::IndicatorUnion, Self::WaveTrain];

    pub fn name(&self) -> &'static str {
        match self {
            Self::GaussianBumps => "gaussian_bumps",
            Self::IndicatorUnion => "indicator_union",
            Self::WaveTrain => "wave_train",
        }
    }
}

/// Signed periodic distance `x - c` folded into `[-L/2, L/2)`.
fn wrap(x: f64, c: f64, l: f64) -> f64 {
    (x - c + 0.5 * l).rem_euclid(l) - 0.5 * l
}

/// Draws a function from `family`; the draw depends on `rng` and the period only, not on the sampling.
pub fn random_input(family: InputFamily, spec: GridSpec, rng: &mut impl Rng) -> GridFunction {
    let l = spec.period();
    match family {
        InputFamily::GaussianBumps => {
            let bumps: Vec<(f64, f64, f64, C64)> = (0..rng.gen_range(1..=4))
                .map(|_| {
                    let c = rng.gen_range(0.0..l);
                    let width = rng.gen_range(0.3..1.5);
                    let freq = rng.gen_range(-2.0..2.0);
                    let amp = C64::from_polar(rng.gen_range(0.2..1.0), rng.gen_range(0.0..2.0 * PI));
                    (c, width, freq, amp)
                })
                .collect();
            GridFunction::from_fn(spec, |x| {
                bumps
                    .iter()
                    .map(|&(c, w, nu, a)| {
                        let d = wrap(x, c, l);
                        a * (-(d * d) / (2.0 * w * w)).exp() * C64::from_polar(1.0, 2.0 * PI * nu * d)
                    })
                    .sum()
            })
        }
        InputFamily::IndicatorUnion => {
            let pieces: Vec<(f64, f64)> = (0..rng.gen_range(1..=4)).map(|_| (rng.gen_range(0.0..l), rng.gen_range(0.5..2.0))).collect();
            GridFunction::from_fn(spec, |x| {
                let inside = pieces.iter().any(|&(c, len)| (0.0..len).contains(&(x - c).rem_euclid(l)));
                C64::new(inside as u8 as f64, 0.0)
            })
        }
        InputFamily::WaveTrain => {
            let start = rng.gen_range(0.0..l);
            let count = rng.gen_range(2..=4);
            let step = rng.gen_range(0.25..1.0);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            GridFunction::from_fn(spec, |x| {
                (0..count)
                    .map(|n| {
                        let d = wrap(x, start + n as f64, l);
                        C64::from_polar((-(d * d) / 0.32).exp(), 2.0 * PI * sign * step * n as f64 * d)
                    })
                    .sum()
            })
        }
    }
}

fn trial_rng(seed: u64, slot: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ slot)
}

fn trial_inputs(seed: u64, spec: GridSpec, count: usize) -> (InputFamily, Vec<GridFunction>) {
    let family = InputFamily::ALL[(seed % 3) as usize];
    let fs = (0..count).map(|slot| random_input(family, spec, &mut trial_rng(seed, slot as u64))).collect();
    (family, fs)
}

fn descriptor_or(d: &Option<SymbolDescriptor>, seed: u64) -> SymbolDescriptor {
    d.clone().unwrap_or(SymbolDescriptor::Mikhlin { seed, order: 2 })
}

/// `||B[a1, a2](f)||_r / prod slot norms` over random triples; running max per `N`.
pub fn run_mixed_ratio_scan(cfg: &ExperimentConfig) -> Result<ScanReport, ExperimentError> {
    expect_kind(cfg, &[ExperimentKind::MixedRatio], "mixed_ratio")?;
    if cfg.exponents.p().len() != 3 {
        return Err(ExperimentError::BadConfig("mixed_ratio needs three exponents".into()));
    }
    let hash = cfg.hash();
    let in_region = cfg.exponents.in_trilinear_region();
    let r = cfg.exponents.holder_target();
    let seeds: Vec<u64> = cfg.seeds().collect();
    let mut rows = Vec::new();
    for &n in &cfg.n_values {
        let spec = GridSpec::new(n as usize, cfg.grid.period())?;
        let a1 = descriptor_or(&cfg.symbol, 1).build(spec)?;
        let a2 = descriptor_or(&cfg.symbol2, 2).build(spec)?;
        let m = tensor_symbol(&a1, &a2)?;
        let trials = seeds
            .par_iter()
            .map(|&seed| {
                let (family, fs) = trial_inputs(seed, spec, 3);
                let norms = (0..3).map(|i| cfg.exponents.slot_norm(i, &fs[i])).collect::<Result<Vec<_>, _>>()?;
                let denom: f64 = norms.iter().product();
                if denom == 0.0 {
                    return Ok(None);
                }
                let t = apply_trilinear(&m, &fs[0], &fs[1], &fs[2], Path::FftFast, OutputGrid::Padded(cfg.padding))?;
                let out = lr_quasi_norm(&t.output, r)?;
                let mut row = ExperimentRecord::new(cfg.kind, &hash, seed, n, family.name());
                row.in_region = in_region;
                row.norm1 = Some(norms[0]);
                row.norm2 = Some(norms[1]);
                row.norm3 = Some(norms[2]);
                row.output_norm = out;
                row.ratio = out / denom;
                Ok(Some(row))
            })
            .collect::<Result<Vec<_>, ExperimentError>>()?;
        let mut running = 0.0f64;
        for mut row in trials.into_iter().flatten() {
            running = running.max(row.ratio);
            row.running_max = Some(running);
            rows.push(row);
        }
    }
    let maxima: Vec<(u64, f64)> = cfg
        .n_values
        .iter()
        .map(|&n| (n, rows.iter().filter(|r| r.n == n).map(|r| r.ratio).fold(0.0, f64::max)))
        .collect();
    let mut contrast = Vec::new();
    if cfg.contrast {
        let ce = ExperimentConfig {
            kind: ExperimentKind::Counterexample2,
            exponents: ExponentTuple::new(cfg.exponents.p()[..2].to_vec(), vec![SlotKind::L; 2])?,
            n_values: cfg.n_values.clone(),
            padding: 1,
            scale_min: LogBlowupParams::reference().k_min,
            scale_max: cfg.scale_max,
            ..ExperimentConfig::preset(ExperimentKind::Counterexample2)
        }
        .resolved()?;
        for mut row in run_counterexample_scan(&ce)?.rows {
            row.kind = cfg.kind;
            row.config_hash = hash.clone();
            row.label = "contrast_log_blowup".into();
            contrast.push((row.n, row.ratio));
            rows.push(row);
        }
    }
    let mut report = ScanReport::new(cfg, rows)?;
    let drifts: Vec<f64> = maxima.windows(2).map(|w| (w[1].1 / w[0].1 - 1.0).abs()).collect();
    let worst = drifts.iter().copied().fold(0.0, f64::max);
    let detail = maxima.iter().map(|(n, m)| format!("max({n})={m:.5}")).collect::<Vec<_>>().join(" ");
    report.assertions.push(Assertion::new(
        "running max drift <= 20% per doubling",
        !in_region || (maxima.iter().all(|(_, m)| *m > 0.0) && worst <= MIXED_DRIFT_MAX),
        format!("{detail}; worst drift {worst:.4}; in region {in_region}"),
    ));
    if let (Some(first), Some(last)) = (contrast.first(), contrast.last()) {
        let growth = last.1 / first.1 - 1.0;
        report.assertions.push(Assertion::new(
            "contrast row grows >= 30%",
            growth >= CONTRAST_GROWTH_MIN,
            format!("R({})={:.5} R({})={:.5} growth {growth:.4}", first.0, first.1, last.0, last.1),
        ));
    }
    Ok(report)
}

/// Fixed toy geometry: one scale-2 row of `Q` tiles and their scale-0 `P` children.
fn restricted_geometry(spec: GridSpec) -> Result<ToyGeometry, ExperimentError> {
    let q = single_scale_universe(2, 16, 0, 16, 16, ALL_SHIFTS)?;
    let p = nested_p_universe(&q, 2, ALL_SHIFTS, 0);
    Ok(ToyGeometry::new(spec, &q, &p, 2, DEFAULT_TOY_DECAY)?)
}

fn format_tuple(a: &[f64; 4]) -> String {
    format!("({})", a.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(";"))
}

/// `|Lambda(1_E1, 1_E2, 1_E3, 1_{E4 \ Omega})| / prod |E_i|^{a_i}` near an extremal set.
pub fn run_restricted_type_scan(cfg: &ExperimentConfig) -> Result<ScanReport, ExperimentError> {
    expect_kind(cfg, &[ExperimentKind::RestrictedType], "restricted_type")?;
    let spec = cfg.grid;
    let geometry = restricted_geometry(spec)?;
    let hash = cfg.hash();
    let tuples = cfg.target.near_tuples(cfg.epsilon);
    let seeds: Vec<u64> = cfg.seeds().collect();
    let mut rows = Vec::new();
    for (ti, alpha) in tuples.iter().enumerate() {
        let label = format!("{}:{}", cfg.target, format_tuple(alpha));
        let part = seeds
            .par_iter()
            .map(|&seed| {
                let mut rng = trial_rng(seed, ti as u64);
                let e: Vec<SpatialSet> = (0..4)
                    .map(|_| {
                        let fraction = rng.gen_range(0.2..0.8);
                        SpatialSet::random_union(spec, &mut rng, 16, fraction)
                    })
                    .collect();
                let f2 = e[1].indicator();
                let omega = build_exceptional_set(&e[0], &e[2], &f2, e[3].measure(), DEFAULT_OMEGA_CONSTANT)?;
                let f4 = e[3].minus(&omega.set).indicator();
                let form = geometry.evaluate([&e[0].indicator(), &f2, &e[2].indicator(), &f4])?;
                let weight: f64 = (0..4).map(|i| e[i].measure().powf(alpha[i])).product();
                let mut row = ExperimentRecord::new(cfg.kind, &hash, seed, spec.num_points() as u64, label.clone());
                row.output_norm = form.full;
                row.ratio = form.full / weight;
                row.omega_fraction = Some(omega.measure / omega.reference);
                row.flagged = omega.measure / omega.reference > OMEGA_FRACTION_MAX;
                Ok(row)
            })
            .collect::<Result<Vec<_>, ExperimentError>>()?;
        rows.extend(part);
    }
    let mut report = ScanReport::new(cfg, rows)?;
    for alpha in &tuples {
        let label = format!("{}:{}", cfg.target, format_tuple(alpha));
        let mut col: Vec<f64> = report.rows.iter().filter(|r| r.label == label).map(|r| r.ratio).collect();
        col.sort_by(f64::total_cmp);
        let median = col.get(col.len() / 2).copied().unwrap_or(0.0);
        let spread = col.last().copied().unwrap_or(0.0) / median;
        report.assertions.push(Assertion::new(
            &format!("{label} max/median <= 10"),
            median > 0.0 && spread <= RESTRICTED_SPREAD_MAX,
            format!("max/median {spread:.3} over {} rows", col.len()),
        ));
    }
    let worst = report.rows.iter().filter_map(|r| r.omega_fraction).fold(0.0, f64::max);
    report.assertions.push(Assertion::new(
        "|Omega| <= |E4|/2 in every row",
        report.rows.iter().all(|r| !r.flagged),
        format!("largest |Omega|/|E4| = {worst:.4}"),
    ));
    Ok(report)
}

/// Relative `max |fast - oracle| / max |oracle|` for bilinear and trilinear paths.
pub fn run_oracle_equivalence(cfg: &ExperimentConfig) -> Result<ScanReport, ExperimentError> {
    expect_kind(cfg, &[ExperimentKind::OracleEquiv], "oracle_equiv")?;
    let hash = cfg.hash();
    let grid = OutputGrid::Padded(cfg.padding);
    let relative = |fast: &GridFunction, oracle: &GridFunction| -> Result<f64, ExperimentError> {
        let scale = oracle.max_abs();
        let d = max_discrepancy(fast, oracle)?;
        Ok(if scale > 0.0 { d / scale } else { d })
    };
    let mut rows = Vec::new();
    for &n in &cfg.n_values {
        let spec = GridSpec::new(n as usize, cfg.grid.period())?;
        let part = cfg
            .seeds()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&seed| {
                let (family, fs) = trial_inputs(seed, spec, 3);
                let a1 = build_mikhlin_symbol(seed, 2, spec)?;
                let a2 = build_mikhlin_symbol(seed + 1, 2, spec)?;
                let fast = apply_bilinear(&a1, &fs[0], &fs[1], Path::FftFast, grid)?.output;
                let oracle = apply_bilinear(&a1, &fs[0], &fs[1], Path::Oracle, grid)?.output;
                let mut bi = ExperimentRecord::new(cfg.kind, &hash, seed, n, format!("bilinear/{}", family.name()));
                bi.output_norm = oracle.max_abs();
                bi.ratio = relative(&fast, &oracle)?;
                bi.flagged = bi.ratio > cfg.tolerance;
                let m = tensor_symbol(&a1, &a2)?;
                let fast = apply_trilinear(&m, &fs[0], &fs[1], &fs[2], Path::FftFast, grid)?.output;
                let oracle = apply_trilinear(&m, &fs[0], &fs[1], &fs[2], Path::Oracle, grid)?.output;
                let mut tri = ExperimentRecord::new(cfg.kind, &hash, seed, n, format!("trilinear/{}", family.name()));
                tri.output_norm = oracle.max_abs();
                tri.ratio = relative(&fast, &oracle)?;
                tri.flagged = tri.ratio > cfg.tolerance;
                Ok([bi, tri])
            })
            .collect::<Result<Vec<_>, ExperimentError>>()?;
        rows.extend(part.into_iter().flatten());
    }
    let mut report = ScanReport::new(cfg, rows)?;
    for path in ["bilinear", "trilinear"] {
        let worst = report.rows.iter().filter(|r| r.label.starts_with(path)).map(|r| r.ratio).fold(0.0, f64::max);
        report.assertions.push(Assertion::new(
            &format!("{path} fast path within tolerance"),
            worst <= cfg.tolerance,
            format!("max relative discrepancy {worst:.3e} (tolerance {:.0e})", cfg.tolerance),
        ));
    }
    Ok(report)
}

fn audit_one(
    universe: &[TriTile],
    spec: GridSpec,
    seed: u64,
    kind: ExperimentKind,
    hash: &str,
    label: &str,
) -> Result<(ExperimentRecord, Vec<String>), ExperimentError> {
    let stopping = StoppingConfig::default();
    let mut rng = trial_rng(seed, 0);
    let e = [0; 4].map(|_| SpatialSet::random_union(spec, &mut rng, 6, 0.4));
    let decomp = stopping_time(universe, &StoppingInputs::from_sets(e), &stopping)?;
    let energy = verify_energy_estimate(&decomp, DEFAULT_ENERGY_BUDGET)?;
    let mut recombined = decomp.recombined();
    let mut original = universe.to_vec();
    recombined.sort();
    original.sort();
    let mut row = ExperimentRecord::new(kind, hash, seed, universe.len() as u64, label);
    row.ratio = energy.max_ratio;
    row.omega_fraction = Some(if decomp.omega.reference > 0.0 { decomp.omega.measure / decomp.omega.reference } else { 0.0 });
    row.flagged = recombined != original || !decomp.certificates_valid() || !energy.within_budget;
    let lines = audit_lines(&decomp)
        .into_iter()
        .map(|l| format!("{{\"seed\":{seed},{}", l.trim_start_matches('{')))
        .collect();
    Ok((row, lines))
}

fn audit_assertion(report: &mut ScanReport) {
    let worst = report.rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    report.assertions.push(Assertion::new(
        "decompositions recombine, families disjoint, energy within budget",
        report.rows.iter().all(|r| !r.flagged),
        format!("{} universes, worst energy ratio {worst:.4} (budget {DEFAULT_ENERGY_BUDGET})", report.rows.len()),
    ));
}

/// Stopping-time decompositions of random rank-one universes with JSON-lines audit output.
pub fn run_decomposition_audit(cfg: &ExperimentConfig) -> Result<ScanReport, ExperimentError> {
    expect_kind(cfg, &[ExperimentKind::DecompositionAudit], "decomposition_audit")?;
    let hash = cfg.hash();
    let tiles = StoppingConfig::default().tiles;
    let params = UniverseParams { size: cfg.universe_size, ..UniverseParams::default() };
    let part = cfg
        .seeds()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&seed| audit_one(&random_rank1_universe(seed, &params, &tiles), cfg.grid, seed, cfg.kind, &hash, "random_rank1"))
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let (rows, audit): (Vec<_>, Vec<_>) = part.into_iter().unzip();
    let mut report = ScanReport::new(cfg, rows)?;
    report.audit = audit.into_iter().flatten().collect();
    audit_assertion(&mut report);
    Ok(report)
}

/// Audits a given universe against the random sets drawn from `seed` on `cfg.grid`.
pub fn audit_universe(universe: &[TriTile], cfg: &ExperimentConfig, seed: u64) -> Result<ScanReport, ExperimentError> {
    let hash = cfg.hash();
    let (row, lines) = audit_one(universe, cfg.grid, seed, ExperimentKind::DecompositionAudit, &hash, "given")?;
    let mut report = ScanReport::new(cfg, vec![row])?;
    report.audit = lines;
    audit_assertion(&mut report);
    Ok(report)
}
