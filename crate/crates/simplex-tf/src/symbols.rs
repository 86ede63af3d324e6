//! Multiplier symbols on the discrete frequency lattice.
//!
//! Frequencies are integer lattice indices `k`, the physical frequency being
//! `k / period`. Every symbol is adapted to the line `xi1 + xi2 = 0`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{idft, GridError, GridFunction, GridSpec, SpectralFunction, C64};
use crate::profile::{bump, plateau, smoothstep, unit_mass_bump, unit_mass_bump_hat};

/// Largest lattice side for which dense 2-D materialisation is allowed.
pub const DENSE2_MAX_POINTS: usize = 2048;
/// Largest lattice side for which dense 3-D materialisation is allowed.
pub const DENSE3_MAX_POINTS: usize = 128;
/// Minimum lattice points across the finest resolved frequency scale.
pub const MIN_POINTS_PER_SCALE: f64 = 8.0;
/// Comparability threshold for the trilinear regions, as a power of two.
pub const REGION_RATIO_LOG2: f64 = 5.0;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymbolError {
    #[error("smoothness order {0} is below 2")]
    OrderTooLow(u32),
    #[error("scale 2^-{k} spans {points:.2} lattice points, need at least {needed}")]
    Unresolved { k: i32, points: f64, needed: f64 },
    #[error("frequency {needed} exceeds the lattice range {available}")]
    FrequencyRange { needed: f64, available: f64 },
    #[error("torus of length {period} cannot hold {needed} unit-spaced bumps")]
    TorusTooShort { period: f64, needed: f64 },
    #[error("truncation must be positive, got {0}")]
    BadTruncation(i64),
    #[error("symbols live on different grids")]
    SpecMismatch,
    #[error("unknown region tag {0:?}")]
    UnknownRegion(String),
    #[error("dense evaluation needs N <= {limit}, got {n}")]
    TooLargeForDense { n: usize, limit: usize },
    #[error("invalid symbol descriptor: {0}")]
    Descriptor(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// A compactly supported sequence on consecutive lattice frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    start: i64,
    values: Vec<C64>,
}

impl Band {
    pub fn new(start: i64, values: Vec<C64>) -> Self {
        Self { start, values }
    }

    /// Samples `f` on `lo..=hi`.
    pub fn from_fn(lo: i64, hi: i64, f: impl Fn(i64) -> C64) -> Self {
        if hi < lo {
            return Self::new(lo, Vec::new());
        }
        Self::new(lo, (lo..=hi).map(f).collect())
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    /// One past the last frequency.
    pub fn end(&self) -> i64 {
        self.start + self.values.len() as i64
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn eval(&self, k: i64) -> C64 {
        if k < self.start || k >= self.end() {
            ZERO
        } else {
            self.values[(k - self.start) as usize]
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, C64)> + '_ {
        (self.start..).zip(self.values.iter().copied())
    }

    /// Drops exact zeros at both ends.
    pub fn trimmed(mut self) -> Self {
        while self.values.last().is_some_and(|v| *v == ZERO) {
            self.values.pop();
        }
        let lead = self.values.iter().take_while(|v| **v == ZERO).count();
        self.values.drain(..lead);
        self.start += lead as i64;
        self
    }
}

/// `coeff * u(xi1) * v(xi2) * w(xi1 + xi2)`, with `w` absent meaning one.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableTerm {
    pub coeff: C64,
    pub u: Band,
    pub v: Band,
    pub w: Option<Band>,
}

impl SeparableTerm {
    pub fn eval(&self, k1: i64, k2: i64) -> C64 {
        let base = self.coeff * self.u.eval(k1) * self.v.eval(k2);
        match &self.w {
            Some(w) if base != ZERO => base * w.eval(k1 + k2),
            Some(_) => ZERO,
            None => base,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Symbol2Repr {
    /// Row-major `N x N` values over lattice slots.
    Dense(Vec<C64>),
    Separable(Vec<SeparableTerm>),
    Constant(C64),
    /// `sgn(xi1 + xi2)`, zero on the line.
    SgnSum,
}

/// Constructor record used to rebuild a symbol; never holds dense arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "constructor", rename_all = "snake_case", deny_unknown_fields)]
pub enum SymbolDescriptor {
    Constant { re: f64, im: f64 },
    SgnSum,
    Mikhlin { seed: u64, order: u32 },
    LogBlowup { gamma: f64, k_min: i32, k_lambda: i32, k_max: i32 },
    LadderBlock { k0: i32, ladder: u32 },
    WhitneySeries { base: Box<SymbolDescriptor>, truncation: u32, window: SeriesWindow },
    Sum { parts: Vec<SymbolDescriptor> },
    Custom { label: String },
}

impl SymbolDescriptor {
    /// Parses and validates a JSON descriptor.
    pub fn from_json(text: &str) -> Result<Self, SymbolError> {
        let d: Self = serde_json::from_str(text).map_err(|e| SymbolError::Descriptor(e.to_string()))?;
        d.validate()?;
        Ok(d)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("descriptor serialisation is infallible")
    }

    pub fn validate(&self) -> Result<(), SymbolError> {
        let bad = |m: &str| Err(SymbolError::Descriptor(m.to_string()));
        match self {
            Self::Constant { re, im } if !(re.is_finite() && im.is_finite()) => bad("non-finite constant"),
            Self::Mikhlin { order, .. } if !(2..=6).contains(order) => bad("order must lie in 2..=6"),
            Self::LogBlowup { gamma, k_min, k_lambda, k_max } => {
                if !(gamma.is_finite() && *gamma > 0.0) {
                    bad("gamma must be positive")
                } else if [k_min, k_lambda, k_max].iter().any(|k| !(0..=40).contains(*k)) {
                    bad("scales must lie in 0..=40")
                } else {
                    Ok(())
                }
            }
            Self::LadderBlock { k0, ladder } if !(1..=40).contains(k0) || *ladder > 1 << 20 => bad("ladder block out of range"),
            Self::WhitneySeries { base, truncation, .. } => {
                if *truncation == 0 {
                    bad("truncation must be positive")
                } else {
                    base.validate()
                }
            }
            Self::Sum { parts } => parts.iter().try_for_each(Self::validate),
            _ => Ok(()),
        }
    }

    /// Rebuilds the symbol on `spec`.
    pub fn build(&self, spec: GridSpec) -> Result<Symbol2, SymbolError> {
        self.validate()?;
        match self {
            Self::Constant { re, im } => Ok(Symbol2::constant(spec, C64::new(*re, *im))),
            Self::SgnSum => Ok(Symbol2::sgn_sum(spec)),
            Self::Mikhlin { seed, order } => build_mikhlin_symbol(*seed, *order, spec),
            Self::LogBlowup { gamma, k_min, k_lambda, k_max } => {
                let params = LogBlowupParams { gamma: *gamma, k_min: *k_min, k_lambda: *k_lambda, eps: LOG_BLOWUP_EPS };
                log_blowup_symbol(&params, *k_max, spec)
            }
            Self::LadderBlock { k0, ladder } => {
                let family = ladder_blowup_family(*k0..=*k0, *ladder as usize, spec)?;
                Ok(family.blocks[0].1.clone())
            }
            Self::WhitneySeries { base, truncation, window } => {
                let m = base.build(spec)?;
                let mut squares = whitney_decompose(1, spec);
                squares.extend(whitney_decompose(-1, spec));
                let series = expand_whitney_series(&m, &squares, *truncation as i64, *window)?;
                Ok(series.to_symbol(self.clone()))
            }
            Self::Sum { parts } => {
                let mut acc = Symbol2::constant(spec, ZERO);
                for p in parts {
                    acc = acc.add(&p.build(spec)?)?;
                }
                acc.descriptor = self.clone();
                Ok(acc)
            }
            Self::Custom { label } => Err(SymbolError::Descriptor(format!("custom symbol {label:?} cannot be rebuilt"))),
        }
    }
}

/// Finite-difference evidence for the Mikhlin condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MikhlinCertificate {
    pub max_order: u32,
    /// `(alpha1, alpha2, sup |Delta^alpha m| dist^{|alpha|})`, distance in lattice units.
    pub constants: Vec<(u32, u32, f64)>,
}

impl MikhlinCertificate {
    pub fn constant(&self, a1: u32, a2: u32) -> Option<f64> {
        self.constants.iter().find(|c| c.0 == a1 && c.1 == a2).map(|c| c.2)
    }

    pub fn max_constant(&self) -> f64 {
        self.constants.iter().map(|c| c.2).fold(0.0, f64::max)
    }

    /// Measures all multi-indices with `|alpha| <= order` on the dense lattice.
    pub fn measure(symbol: &Symbol2, order: u32) -> Result<Self, SymbolError> {
        let spec = symbol.spec;
        let n = spec.num_points();
        let values = symbol.dense_values()?;
        let lo = spec.min_freq();
        let mut constants = Vec::new();
        for total in 0..=order {
            for a1 in (0..=total).rev() {
                let a2 = total - a1;
                let weights1 = difference_weights(a1);
                let weights2 = difference_weights(a2);
                let mut sup: f64 = 0.0;
                for s1 in 0..n.saturating_sub(a1 as usize) {
                    for s2 in 0..n.saturating_sub(a2 as usize) {
                        let k1 = lo + s1 as i64;
                        let k2 = lo + s2 as i64;
                        let smin = k1 + k2;
                        let smax = smin + total as i64;
                        if total > 0 && !(smin > 0 || smax < 0) {
                            continue;
                        }
                        let mut acc = ZERO;
                        for (i, w1) in weights1.iter().enumerate() {
                            for (j, w2) in weights2.iter().enumerate() {
                                acc += values[(s1 + i) * n + s2 + j] * (w1 * w2);
                            }
                        }
                        let dist = smin.abs().min(smax.abs()) as f64 / 2f64.sqrt();
                        sup = sup.max(acc.norm() * dist.powi(total as i32));
                    }
                }
                constants.push((a1, a2, sup));
            }
        }
        Ok(Self { max_order: order, constants })
    }
}

fn difference_weights(order: u32) -> Vec<f64> {
    let mut w = vec![1.0];
    for _ in 0..order {
        let mut next = vec![0.0; w.len() + 1];
        for (i, &c) in w.iter().enumerate() {
            next[i + 1] += c;
            next[i] -= c;
        }
        w = next;
    }
    w
}

/// A multiplier on the 2-D frequency lattice adapted to `xi1 + xi2 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Symbol2 {
    spec: GridSpec,
    repr: Symbol2Repr,
    pub descriptor: SymbolDescriptor,
    pub cert: Option<MikhlinCertificate>,
}

impl Symbol2 {
    pub fn new(spec: GridSpec, repr: Symbol2Repr, descriptor: SymbolDescriptor) -> Self {
        Self { spec, repr, descriptor, cert: None }
    }

    pub fn constant(spec: GridSpec, c: C64) -> Self {
        Self::new(spec, Symbol2Repr::Constant(c), SymbolDescriptor::Constant { re: c.re, im: c.im })
    }

    pub fn sgn_sum(spec: GridSpec) -> Self {
        Self::new(spec, Symbol2Repr::SgnSum, SymbolDescriptor::SgnSum)
    }

    /// Dense symbol from a closure over lattice frequencies.
    pub fn from_fn(spec: GridSpec, label: &str, f: impl Fn(i64, i64) -> C64) -> Result<Self, SymbolError> {
        let n = spec.num_points();
        if n > DENSE2_MAX_POINTS {
            return Err(SymbolError::TooLargeForDense { n, limit: DENSE2_MAX_POINTS });
        }
        let values = spec
            .freqs()
            .flat_map(|k1| spec.freqs().map(move |k2| (k1, k2)))
            .map(|(k1, k2)| f(k1, k2))
            .collect();
        Ok(Self::new(spec, Symbol2Repr::Dense(values), SymbolDescriptor::Custom { label: label.to_string() }))
    }

    pub fn separable(spec: GridSpec, terms: Vec<SeparableTerm>, descriptor: SymbolDescriptor) -> Self {
        Self::new(spec, Symbol2Repr::Separable(terms), descriptor)
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn repr(&self) -> &Symbol2Repr {
        &self.repr
    }

    /// Separable terms when the symbol admits a finite factored form.
    pub fn terms(&self) -> Option<Vec<SeparableTerm>> {
        match &self.repr {
            Symbol2Repr::Separable(t) => Some(t.clone()),
            Symbol2Repr::Constant(c) => {
                let lo = self.spec.min_freq();
                let hi = self.spec.max_freq();
                Some(vec![SeparableTerm {
                    coeff: *c,
                    u: Band::from_fn(lo, hi, |_| ONE),
                    v: Band::from_fn(lo, hi, |_| ONE),
                    w: None,
                }])
            }
            _ => None,
        }
    }

    pub fn is_factorable(&self) -> bool {
        matches!(self.repr, Symbol2Repr::Separable(_) | Symbol2Repr::Constant(_))
    }

    pub fn eval(&self, k1: i64, k2: i64) -> C64 {
        match &self.repr {
            Symbol2Repr::Dense(v) => match (self.spec.freq_slot(k1), self.spec.freq_slot(k2)) {
                (Some(a), Some(b)) => v[a * self.spec.num_points() + b],
                _ => ZERO,
            },
            Symbol2Repr::Separable(terms) => terms.iter().map(|t| t.eval(k1, k2)).sum(),
            Symbol2Repr::Constant(c) => *c,
            Symbol2Repr::SgnSum => C64::new((k1 + k2).signum() as f64, 0.0),
        }
    }

    /// Row-major values over lattice slots.
    pub fn dense_values(&self) -> Result<Vec<C64>, SymbolError> {
        let spec = self.spec;
        let n = spec.num_points();
        if n > DENSE2_MAX_POINTS {
            return Err(SymbolError::TooLargeForDense { n, limit: DENSE2_MAX_POINTS });
        }
        match &self.repr {
            Symbol2Repr::Dense(v) => Ok(v.clone()),
            Symbol2Repr::Separable(terms) => {
                let mut out = vec![ZERO; n * n];
                for t in terms {
                    for (k1, a) in t.u.iter() {
                        let Some(s1) = spec.freq_slot(k1) else { continue };
                        if a == ZERO {
                            continue;
                        }
                        for (k2, b) in t.v.iter() {
                            let Some(s2) = spec.freq_slot(k2) else { continue };
                            let w = t.w.as_ref().map_or(ONE, |w| w.eval(k1 + k2));
                            out[s1 * n + s2] += t.coeff * a * b * w;
                        }
                    }
                }
                Ok(out)
            }
            _ => Ok(spec
                .freqs()
                .flat_map(|k1| spec.freqs().map(move |k2| (k1, k2)))
                .map(|(k1, k2)| self.eval(k1, k2))
                .collect()),
        }
    }

    pub fn sup_norm(&self) -> Result<f64, SymbolError> {
        Ok(self.dense_values()?.iter().map(|z| z.norm()).fold(0.0, f64::max))
    }

    pub fn with_certificate(mut self, order: u32) -> Result<Self, SymbolError> {
        self.cert = Some(MikhlinCertificate::measure(&self, order)?);
        Ok(self)
    }

    /// Pointwise sum; separable parts are concatenated, otherwise dense.
    pub fn add(&self, other: &Self) -> Result<Self, SymbolError> {
        if self.spec != other.spec {
            return Err(SymbolError::SpecMismatch);
        }
        let descriptor = SymbolDescriptor::Sum { parts: vec![self.descriptor.clone(), other.descriptor.clone()] };
        let repr = match (&self.repr, &other.repr) {
            (Symbol2Repr::Constant(a), Symbol2Repr::Constant(b)) => Symbol2Repr::Constant(a + b),
            (Symbol2Repr::Constant(a), _) if *a == ZERO => other.repr.clone(),
            (_, Symbol2Repr::Constant(b)) if *b == ZERO => self.repr.clone(),
            (Symbol2Repr::Separable(a), Symbol2Repr::Separable(b)) => {
                Symbol2Repr::Separable(a.iter().chain(b).cloned().collect())
            }
            _ => {
                let a = self.dense_values()?;
                let b = other.dense_values()?;
                Symbol2Repr::Dense(a.iter().zip(&b).map(|(x, y)| x + y).collect())
            }
        };
        Ok(Self::new(self.spec, repr, descriptor))
    }
}

fn hash_u64(parts: &[i64]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Dyadic square of the Whitney family, stored exactly in half-lattice units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WhitneySquare {
    /// Lower-left corner in half-lattice units.
    pub corner: (i64, i64),
    /// Side in half-lattice units (a power of two).
    pub side_units: i64,
    /// `+1` for `xi1 + xi2 > 0`, `-1` for the reflected family.
    pub sign: i8,
}

impl WhitneySquare {
    pub fn side(&self) -> f64 {
        self.side_units as f64 / 2.0
    }

    pub fn center(&self) -> (f64, f64) {
        let h = self.side_units as f64 / 2.0;
        ((self.corner.0 as f64 + h) / 2.0, (self.corner.1 as f64 + h) / 2.0)
    }

    /// `min |xi1 + xi2|` over the closed square, in half-lattice units.
    fn gap_units(&self) -> i64 {
        let s = self.corner.0 + self.corner.1;
        if self.sign > 0 {
            s
        } else {
            -(s + 2 * self.side_units)
        }
    }

    /// Euclidean distance from the closed square to the line, lattice units.
    pub fn distance_to_line(&self) -> f64 {
        self.gap_units() as f64 / 2.0 / 2f64.sqrt()
    }

    /// `side <= dist <= 4 side`, decided in exact integer arithmetic.
    pub fn whitney_exact(&self) -> bool {
        let t = self.gap_units() as i128;
        let s = self.side_units as i128;
        // dist = t / (2 sqrt 2) and side = s / 2 in lattice units.
        t >= 0 && 2 * s * s <= t * t && t * t <= 32 * s * s
    }

    /// Whether lattice point `(k1, k2)` lies in the square (half-open toward the line).
    pub fn contains(&self, k1: i64, k2: i64) -> bool {
        let inside = |p: i64, a: i64| {
            let p = 2 * p;
            if self.sign > 0 {
                a <= p && p < a + self.side_units
            } else {
                a < p && p <= a + self.side_units
            }
        };
        inside(k1, self.corner.0) && inside(k2, self.corner.1)
    }

    /// Lattice frequencies covered by the `dilation`-fold dilate along one axis.
    fn lattice_range(&self, axis: usize, dilation: f64) -> (i64, i64) {
        let c = if axis == 0 { self.center().0 } else { self.center().1 };
        let r = dilation * self.side() / 2.0;
        ((c - r).ceil() as i64, (c + r).floor() as i64)
    }

    /// Lattice points covered by the square itself along one axis.
    fn own_range(&self, axis: usize) -> (i64, i64) {
        let a = if axis == 0 { self.corner.0 } else { self.corner.1 };
        let b = a + self.side_units;
        if self.sign > 0 {
            (a.div_euclid(2) + (a.rem_euclid(2) != 0) as i64, (b - 1).div_euclid(2))
        } else {
            ((a + 1).div_euclid(2) + ((a + 1).rem_euclid(2) != 0) as i64, b.div_euclid(2))
        }
    }
}

/// Smallest square side, in half-lattice units.
const WHITNEY_UNIT: i64 = 1;

/// Gap threshold above which every lattice point is covered, lattice units.
pub const WHITNEY_COVER_THRESHOLD: f64 = 1.75;

/// Dyadic Whitney squares of `{sign (xi1 + xi2) > 0}` meeting the lattice box.
pub fn whitney_decompose(region_sign: i8, spec: GridSpec) -> Vec<WhitneySquare> {
    let b = spec.num_points() as i64; // box half-width N/2 in half-units
    let mut e_max = 0;
    while (WHITNEY_UNIT << e_max) < 2 * b {
        e_max += 1;
    }
    // Selection: gap >= 3/2 side, parent fails; see `whitney_exact` for the bounds.
    let selected = |a: i64, c: i64, s: i64| 2 * (a + c) >= 3 * s;
    let mut out = Vec::new();
    for e in (0..=e_max).rev() {
        let s = WHITNEY_UNIT << e;
        let a_lo = (-b - s).div_euclid(s) * s;
        let mut a = a_lo;
        while a <= b {
            // Candidate second corners with gap in [3s/2, 6s].
            let c_lo = ((3 * s).div_euclid(2) - a).div_euclid(s) * s;
            let mut c = c_lo;
            while c <= 6 * s - a && c <= b {
                if c + s > -b && selected(a, c, s) {
                    let p = 2 * s;
                    let pa = a.div_euclid(p) * p;
                    let pc = c.div_euclid(p) * p;
                    if e == e_max || !selected(pa, pc, p) {
                        out.push(WhitneySquare { corner: (a, c), side_units: s, sign: 1 });
                    }
                }
                c += s;
            }
            a += s;
        }
    }
    if region_sign < 0 {
        for q in &mut out {
            q.corner = (-q.corner.0 - q.side_units, -q.corner.1 - q.side_units);
            q.sign = -1;
        }
    }
    out
}

/// How each square's Fourier series is windowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesWindow {
    /// Period equal to the square: exact for symbols periodic on the square.
    Sharp,
    /// Period twice the square with a smooth cutoff equal to one on the square.
    Smooth,
}

/// Fourier-series data of one square.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareSeries {
    pub square: WhitneySquare,
    /// First lattice frequency of the period box along each axis.
    pub box_start: (i64, i64),
    /// Period in lattice points along each axis.
    pub period: (usize, usize),
    /// Coefficients for `|l1|, |l2| <= K`, indexed `(l1 + K) * (2K + 1) + l2 + K`.
    pub coeffs: Vec<C64>,
}

/// Truncated double Fourier series of a symbol on Whitney squares.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpSeries {
    spec: GridSpec,
    pub truncation: i64,
    pub window: SeriesWindow,
    pub squares: Vec<SquareSeries>,
    /// `max |m - reconstruction|` over lattice points of the union.
    pub reconstruction_error: f64,
    /// `max |coefficient|` with `max(|l1|,|l2|) = r`, for `r = 0..=K`.
    pub decay: Vec<f64>,
}

impl BumpSeries {
    fn basis(l: i64, k: i64, start: i64, period: usize) -> C64 {
        C64::from_polar(1.0, 2.0 * PI * (l * (k - start)) as f64 / period as f64)
    }

    /// Bump pair `(e_{l1} 1_{I1}, e_{l2} 1_{I2})` of a square.
    pub fn bump_pair(&self, sq: &SquareSeries, l1: i64, l2: i64) -> (Band, Band) {
        let (a1, b1) = sq.square.own_range(0);
        let (a2, b2) = sq.square.own_range(1);
        (
            Band::from_fn(a1, b1, |k| Self::basis(l1, k, sq.box_start.0, sq.period.0)),
            Band::from_fn(a2, b2, |k| Self::basis(l2, k, sq.box_start.1, sq.period.1)),
        )
    }

    pub fn to_terms(&self) -> Vec<SeparableTerm> {
        let k = self.truncation;
        let w = (2 * k + 1) as usize;
        let mut terms = Vec::new();
        for sq in &self.squares {
            for l1 in -k..=k {
                for l2 in -k..=k {
                    let c = sq.coeffs[(l1 + k) as usize * w + (l2 + k) as usize];
                    if c == ZERO {
                        continue;
                    }
                    let (u, v) = self.bump_pair(sq, l1, l2);
                    terms.push(SeparableTerm { coeff: c, u, v, w: None });
                }
            }
        }
        terms
    }

    pub fn to_symbol(&self, descriptor: SymbolDescriptor) -> Symbol2 {
        Symbol2::separable(self.spec, self.to_terms(), descriptor)
    }
}

/// Expands `m` on each square as a truncated double Fourier series.
pub fn expand_whitney_series(
    m: &Symbol2,
    squares: &[WhitneySquare],
    truncation: i64,
    window: SeriesWindow,
) -> Result<BumpSeries, SymbolError> {
    if truncation <= 0 {
        return Err(SymbolError::BadTruncation(truncation));
    }
    let spec = m.spec();
    let k = truncation;
    let w = (2 * k + 1) as usize;
    let mut out = Vec::new();
    let mut err: f64 = 0.0;
    let mut decay = vec![0.0f64; k as usize + 1];
    for sq in squares {
        let (r1, r2) = match window {
            SeriesWindow::Sharp => (sq.own_range(0), sq.own_range(1)),
            SeriesWindow::Smooth => (sq.lattice_range(0, 2.0), sq.lattice_range(1, 2.0)),
        };
        let n1 = (r1.1 - r1.0 + 1).max(0) as usize;
        let n2 = (r2.1 - r2.0 + 1).max(0) as usize;
        let (o1, o2) = (sq.own_range(0), sq.own_range(1));
        if n1 == 0 || n2 == 0 || o1.1 < o1.0 || o2.1 < o2.0 {
            continue;
        }
        let (c1, c2) = sq.center();
        let half = sq.side() / 2.0;
        let cutoff = |x: f64, c: f64| match window {
            SeriesWindow::Sharp => 1.0,
            SeriesWindow::Smooth => plateau(x, c - half, c + half, half * 0.9),
        };
        let mut samples = vec![ZERO; n1 * n2];
        for i in 0..n1 {
            let k1 = r1.0 + i as i64;
            let g1 = cutoff(k1 as f64, c1);
            for j in 0..n2 {
                let k2 = r2.0 + j as i64;
                let g = g1 * cutoff(k2 as f64, c2);
                if g != 0.0 {
                    samples[i * n2 + j] = m.eval(k1, k2) * g;
                }
            }
        }
        let full = dft2(&samples, n1, n2);
        let mut coeffs = vec![ZERO; w * w];
        for l1 in -k..=k {
            for l2 in -k..=k {
                if !(alias_free(l1, n1) && alias_free(l2, n2)) {
                    continue;
                }
                let i = l1.rem_euclid(n1 as i64) as usize;
                let j = l2.rem_euclid(n2 as i64) as usize;
                let c = full[i * n2 + j];
                coeffs[(l1 + k) as usize * w + (l2 + k) as usize] = c;
                let r = l1.abs().max(l2.abs()) as usize;
                decay[r] = decay[r].max(c.norm());
            }
        }
        let series = SquareSeries { square: *sq, box_start: (r1.0, r2.0), period: (n1, n2), coeffs };
        for k1 in o1.0..=o1.1 {
            for k2 in o2.0..=o2.1 {
                let mut acc = ZERO;
                for l1 in -k..=k {
                    let e1 = BumpSeries::basis(l1, k1, r1.0, n1);
                    for l2 in -k..=k {
                        let c = series.coeffs[(l1 + k) as usize * w + (l2 + k) as usize];
                        if c != ZERO {
                            acc += c * e1 * BumpSeries::basis(l2, k2, r2.0, n2);
                        }
                    }
                }
                err = err.max((acc - m.eval(k1, k2)).norm());
            }
        }
        out.push(series);
    }
    Ok(BumpSeries { spec, truncation, window, squares: out, reconstruction_error: err, decay })
}

/// Whether frequency `l` is the unique representative of its class mod `n`.
fn alias_free(l: i64, n: usize) -> bool {
    let n = n as i64;
    -(n / 2) <= l && l <= (n - 1) / 2
}

/// Normalised 2-D DFT: `c_l = (1/(n1 n2)) sum g_k e^{-2 pi i l.k/n}`.
fn dft2(samples: &[C64], n1: usize, n2: usize) -> Vec<C64> {
    let mut rows = vec![ZERO; n1 * n2];
    for i in 0..n1 {
        for l2 in 0..n2 {
            let mut acc = ZERO;
            for j in 0..n2 {
                acc += samples[i * n2 + j] * C64::from_polar(1.0, -2.0 * PI * (l2 * j) as f64 / n2 as f64);
            }
            rows[i * n2 + l2] = acc;
        }
    }
    let mut out = vec![ZERO; n1 * n2];
    let norm = (n1 * n2) as f64;
    for l1 in 0..n1 {
        for l2 in 0..n2 {
            let mut acc = ZERO;
            for i in 0..n1 {
                acc += rows[i * n2 + l2] * C64::from_polar(1.0, -2.0 * PI * (l1 * i) as f64 / n1 as f64);
            }
            out[l1 * n2 + l2] = acc / norm;
        }
    }
    out
}

/// Smallest Whitney side (lattice units) carrying a bump in the random symbol.
pub const MIKHLIN_MIN_SIDE: f64 = 2.0;

/// Random Whitney-adapted symbol: a sum of bump pairs on squares of both signs.
pub fn build_mikhlin_symbol(seed: u64, smoothness_order: u32, spec: GridSpec) -> Result<Symbol2, SymbolError> {
    if smoothness_order < 2 {
        return Err(SymbolError::OrderTooLow(smoothness_order));
    }
    let mut squares = whitney_decompose(1, spec);
    squares.extend(whitney_decompose(-1, spec));
    let lo = spec.min_freq();
    let hi = spec.max_freq();
    let mut terms = Vec::new();
    for sq in squares.iter().filter(|q| q.side() >= MIKHLIN_MIN_SIDE) {
        let mut rng = ChaCha8Rng::seed_from_u64(hash_u64(&[
            seed as i64,
            sq.sign as i64,
            sq.corner.0,
            sq.corner.1,
            sq.side_units,
        ]));
        let coeff = C64::from_polar(rng.gen_range(0.0..1.0f64).sqrt(), rng.gen_range(0.0..2.0 * PI));
        let (c1, c2) = sq.center();
        let width = 2.0 * sq.side();
        let factor = |c: f64, range: (i64, i64)| {
            Band::from_fn(range.0.max(lo), range.1.min(hi), |k| C64::new(bump((k as f64 - c) / width), 0.0)).trimmed()
        };
        let u = factor(c1, sq.lattice_range(0, 2.0));
        let v = factor(c2, sq.lattice_range(1, 2.0));
        if !u.is_empty() && !v.is_empty() {
            terms.push(SeparableTerm { coeff, u, v, w: None });
        }
    }
    let sym = Symbol2::separable(spec, terms, SymbolDescriptor::Mikhlin { seed, order: smoothness_order });
    if spec.num_points() <= 512 {
        sym.with_certificate(smoothness_order)
    } else {
        Ok(sym)
    }
}

/// Width of the plateau transition of the wave train profile.
pub const LOG_BLOWUP_EPS: f64 = 0.01;

/// Parameters of the square family `Q_{k,m,lambda}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogBlowupParams {
    /// Modulation shift `Gamma`.
    pub gamma: f64,
    /// Smallest scale index `k`.
    pub k_min: i32,
    /// `|lambda| < 2^{k - k_lambda}`.
    pub k_lambda: i32,
    /// Plateau transition width of the wave-train profile.
    pub eps: f64,
}

impl LogBlowupParams {
    pub const fn reference() -> Self {
        Self { gamma: 100.0, k_min: 8, k_lambda: 8, eps: LOG_BLOWUP_EPS }
    }

    /// `Gamma 2^-k + 2^-k_lambda + 2^-k-1 <= 1/2 - eps`: the paired square stays inside
    /// the plateau of the partner wave packet.
    pub fn containment_holds(&self, k: i32) -> bool {
        self.gamma * 2f64.powi(-k) + 2f64.powi(-self.k_lambda) + 2f64.powi(-k - 1) <= 0.5 - self.eps
    }

    pub fn lambda_range(&self, k: i32) -> std::ops::RangeInclusive<i64> {
        let bound = 2f64.powi(k - self.k_lambda);
        let top = (bound.ceil() as i64 - 1).max(0);
        -top..=top
    }
}

/// One product term `eta1(xi1) eta2(xi2)` of the square pair `(k, m, lambda)`.
pub fn log_blowup_term(params: &LogBlowupParams, k: i32, m: i64, lambda: i64, spec: GridSpec) -> SeparableTerm {
    let l = spec.period();
    let scale = 2f64.powi(-k);
    let c1 = m as f64 + lambda as f64 * scale;
    let c2 = -(m as f64) - lambda as f64 * scale + params.gamma * scale;
    let band = |c: f64| {
        let lo = ((c - scale / 2.0) * l).ceil() as i64;
        let hi = ((c + scale / 2.0) * l).floor() as i64;
        Band::from_fn(lo, hi, |j| C64::new(bump((j as f64 / l - c) / scale), 0.0)).trimmed()
    };
    SeparableTerm {
        coeff: C64::from_polar(1.0, 2.0 * PI * params.gamma * scale * m as f64),
        u: band(c1),
        v: band(c2),
        w: None,
    }
}

/// The blow-up symbol `sum_{k,m,lambda} eta1 eta2` over `k_min <= k <= k_max`.
pub fn log_blowup_symbol(params: &LogBlowupParams, k_max: i32, spec: GridSpec) -> Result<Symbol2, SymbolError> {
    let l = spec.period();
    let descriptor = SymbolDescriptor::LogBlowup {
        gamma: params.gamma,
        k_min: params.k_min,
        k_lambda: params.k_lambda,
        k_max,
    };
    if k_max < params.k_min {
        return Ok(Symbol2::separable(spec, Vec::new(), descriptor));
    }
    let points = 2f64.powi(-k_max) * l;
    if points < MIN_POINTS_PER_SCALE {
        return Err(SymbolError::Unresolved { k: k_max, points, needed: MIN_POINTS_PER_SCALE });
    }
    let xi_lo = spec.min_freq() as f64 / l;
    let xi_hi = spec.max_freq() as f64 / l;
    let mut terms = Vec::new();
    for k in params.k_min..=k_max {
        let scale = 2f64.powi(-k);
        let m_lo = (xi_lo - 1.0).floor() as i64;
        let m_hi = (xi_hi + 1.0).ceil() as i64;
        for m in m_lo..=m_hi {
            for lambda in params.lambda_range(k) {
                let c1 = m as f64 + lambda as f64 * scale;
                let c2 = -(m as f64) - lambda as f64 * scale + params.gamma * scale;
                let fits = |c: f64| c - scale / 2.0 >= xi_lo && c + scale / 2.0 <= xi_hi;
                if !(fits(c1) && fits(c2)) {
                    continue;
                }
                let t = log_blowup_term(params, k, m, lambda, spec);
                if !t.u.is_empty() && !t.v.is_empty() {
                    terms.push(t);
                }
            }
        }
    }
    let sym = Symbol2::separable(spec, terms, descriptor);
    if spec.num_points() <= 512 {
        sym.with_certificate(2)
    } else {
        Ok(sym)
    }
}

/// Fourier transform of the wave-train profile: plateau on `[-1/2+eps, 1/2-eps]`.
pub fn log_blowup_psi_hat(xi: f64, eps: f64) -> f64 {
    plateau(xi, -0.5 + eps, 0.5 - eps, eps)
}

/// Builds `f(x) = sum_n profile(x - n) e^{2 pi i sign n x}` from the profile transform.
fn wave_train(spec: GridSpec, n_wave: usize, sign: f64, half_width: f64, profile_hat: impl Fn(f64) -> f64) -> GridFunction {
    let l = spec.period();
    let mut fhat = SpectralFunction::zeros(spec);
    for n in 1..=n_wave as i64 {
        let centre = sign * n as f64;
        let lo = ((centre - half_width) * l).ceil() as i64;
        let hi = ((centre + half_width) * l).floor() as i64;
        for j in lo..=hi {
            let xi = j as f64 / l;
            let amp = profile_hat(xi - centre);
            if amp != 0.0 {
                let phase = C64::from_polar(amp, -2.0 * PI * (xi - centre) * n as f64);
                let slot = spec.freq_slot(j).expect("range checked by caller");
                fhat.coeffs_mut()[slot] += phase;
            }
        }
    }
    idft(&fhat)
}

fn check_train_fits(spec: GridSpec, n_wave: usize, half_width: f64, time_margin: f64) -> Result<(), SymbolError> {
    let l = spec.period();
    let needed = n_wave as f64 + half_width;
    let available = spec.max_freq() as f64 / l;
    if needed > available {
        return Err(SymbolError::FrequencyRange { needed, available });
    }
    let span = n_wave as f64 + 2.0 * time_margin;
    if span > l {
        return Err(SymbolError::TorusTooShort { period: l, needed: span });
    }
    Ok(())
}

/// The adversarial pair `f1 = sum psi(x-n) e^{2 pi i n x}`, `f2 = sum psi(x-n) e^{-2 pi i n x}`.
pub fn log_blowup_pair(n_wave: usize, spec: GridSpec) -> Result<(GridFunction, GridFunction), SymbolError> {
    let eps = LOG_BLOWUP_EPS;
    let points = eps * spec.period();
    if points < 2.0 {
        return Err(SymbolError::Unresolved { k: 0, points, needed: 2.0 });
    }
    check_train_fits(spec, n_wave, 0.5, 4.0 / eps)?;
    let psi = |xi: f64| log_blowup_psi_hat(xi, eps);
    Ok((wave_train(spec, n_wave, 1.0, 0.5, psi), wave_train(spec, n_wave, -1.0, 0.5, psi)))
}

/// Inner plateau `1_{[7/8,9/8]} <= 1~ <= 1_{[3/4,3/2]}`.
pub fn ladder_window(t: f64) -> f64 {
    smoothstep((t - 0.75) / 0.125) * smoothstep((1.5 - t) / 0.375)
}

/// `chi = c * unit-mass bump` with `c` chosen so that `chi_check >= 1` on `[-1, 1]`.
pub fn ladder_chi(t: f64) -> f64 {
    unit_mass_bump(t) / unit_mass_bump_hat(1.0)
}

/// `chi_check(x)`; nonnegative and at least one on `[-1, 1]`.
pub fn ladder_chi_check(x: f64) -> f64 {
    unit_mass_bump_hat(x) / unit_mass_bump_hat(1.0)
}

/// Skinny peak of unit mass, supported in `[-1/32, 1/32]`.
pub fn ladder_phi1_hat(xi: f64) -> f64 {
    16.0 * unit_mass_bump(16.0 * xi)
}

/// Wide peak equal to one on `[-3/32, 3/32]`, supported in `[-1/8, 1/8]`.
pub fn ladder_phi2_hat(xi: f64) -> f64 {
    plateau(xi, -3.0 / 32.0, 3.0 / 32.0, 1.0 / 32.0)
}

/// Output windows `eta^{-k0}_k` and the ladder pieces of the limited-range counterexample.
#[derive(Debug, Clone)]
pub struct LadderOperator {
    pub spec: GridSpec,
    /// Ladder length: pieces `k = 1..=ladder` at frequencies `a_k = k`.
    pub ladder: usize,
    /// `(k0, B_{k0} symbol)`.
    pub blocks: Vec<(i32, Symbol2)>,
}

impl LadderOperator {
    /// Symbol of the whole operator (sum over blocks).
    pub fn total_symbol(&self) -> Symbol2 {
        let terms = self.blocks.iter().flat_map(|(_, s)| s.terms().unwrap_or_default()).collect();
        let parts = self.blocks.iter().map(|(_, s)| s.descriptor.clone()).collect();
        Symbol2::separable(self.spec, terms, SymbolDescriptor::Sum { parts })
    }

    pub fn block(&self, k0: i32) -> Option<&Symbol2> {
        self.blocks.iter().find(|(k, _)| *k == k0).map(|(_, s)| s)
    }
}

/// `B_{k0} = sum_k [f1 * eta^k  f2 * eta~^k] * eta^{-k0}_k` for each `k0` in range.
pub fn ladder_blowup_family(
    k0_range: std::ops::RangeInclusive<i32>,
    ladder: usize,
    spec: GridSpec,
) -> Result<LadderOperator, SymbolError> {
    let l = spec.period();
    let xi_hi = spec.max_freq() as f64 / l;
    if !k0_range.is_empty() && ladder as f64 + 0.5 > xi_hi {
        return Err(SymbolError::FrequencyRange { needed: ladder as f64 + 0.5, available: xi_hi });
    }
    let mut blocks = Vec::new();
    for k0 in k0_range {
        let scale = 2f64.powi(-k0);
        let points = scale * l;
        if points < MIN_POINTS_PER_SCALE {
            return Err(SymbolError::Unresolved { k: k0, points, needed: MIN_POINTS_PER_SCALE });
        }
        let w_lo = (scale / 2.0 * l).ceil() as i64;
        let w_hi = (1.5 * scale * l).floor() as i64;
        let mut terms = Vec::with_capacity(ladder);
        for k in 1..=ladder as i64 {
            let a = k as f64;
            let piece = |sign: f64| {
                let (lo, hi) = if sign > 0.0 { (a - 0.25, a + 0.5) } else { (-a - 0.5, -a + 0.25) };
                Band::from_fn((lo * l).ceil() as i64, (hi * l).floor() as i64, |j| {
                    C64::new(ladder_window(sign * j as f64 / l - a + 1.0), 0.0)
                })
                .trimmed()
            };
            let w = Band::from_fn(w_lo, w_hi, |j| C64::new(ladder_chi((j as f64 / l - scale) / scale), 0.0)).trimmed();
            terms.push(SeparableTerm {
                coeff: C64::from_polar(1.0, 2.0 * PI * scale * a),
                u: piece(1.0),
                v: piece(-1.0),
                w: Some(w),
            });
        }
        blocks.push((k0, Symbol2::separable(spec, terms, SymbolDescriptor::LadderBlock { k0, ladder: ladder as u32 })));
    }
    Ok(LadderOperator { spec, ladder, blocks })
}

/// Test pair `f1 = sum e^{2 pi i n x} phi1(x-n)`, `f2 = sum e^{-2 pi i n x} phi2(x-n)`.
pub fn ladder_blowup_pair(n_wave: usize, spec: GridSpec) -> Result<(GridFunction, GridFunction), SymbolError> {
    let points = spec.period() / 32.0;
    if points < 2.0 {
        return Err(SymbolError::Unresolved { k: 5, points, needed: 2.0 });
    }
    check_train_fits(spec, n_wave, 0.125, 128.0)?;
    Ok((
        wave_train(spec, n_wave, 1.0, 1.0 / 32.0, ladder_phi1_hat),
        wave_train(spec, n_wave, -1.0, 0.125, ladder_phi2_hat),
    ))
}

/// Label of the twelve trilinear regions `R^{i,j}_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegionTag {
    /// `1`: `xi1 + xi2 > 0`; `2`: `xi1 + xi2 < 0`.
    pub i: u8,
    /// `1`: `xi2 + xi3 < 0`; `2`: `xi2 + xi3 > 0`.
    pub j: u8,
    /// `1`: `|xi1+xi2| << |xi2+xi3|`; `2`: comparable; `3`: `>>`.
    pub k: u8,
}

impl RegionTag {
    pub fn new(i: u8, j: u8, k: u8) -> Result<Self, SymbolError> {
        if (1..=2).contains(&i) && (1..=2).contains(&j) && (1..=3).contains(&k) {
            Ok(Self { i, j, k })
        } else {
            Err(SymbolError::UnknownRegion(format!("{i},{j},{k}")))
        }
    }

    pub fn all() -> impl Iterator<Item = RegionTag> {
        (1..=2).flat_map(|i| (1..=2).flat_map(move |j| (1..=3).map(move |k| RegionTag { i, j, k })))
    }

    /// Image of the tag under the coordinate swap `xi1 <-> xi3`.
    pub fn swapped(&self) -> Self {
        Self { i: 3 - self.j, j: 3 - self.i, k: 4 - self.k }
    }
}

impl fmt::Display for RegionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}{}_{}", self.i, self.j, self.k)
    }
}

impl FromStr for RegionTag {
    type Err = SymbolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || SymbolError::UnknownRegion(s.to_string());
        let body = s.strip_prefix('R').ok_or_else(err)?;
        let (ij, k) = body.split_once('_').ok_or_else(err)?;
        let mut chars = ij.chars();
        let (Some(i), Some(j), None) = (chars.next(), chars.next(), chars.next()) else {
            return Err(err());
        };
        let digit = |c: char| c.to_digit(10).map(|d| d as u8).ok_or_else(err);
        let k: u8 = k.parse().map_err(|_| err())?;
        Self::new(digit(i)?, digit(j)?, k).map_err(|_| err())
    }
}

fn sign_split(t: i64, positive: bool) -> f64 {
    match t.signum() {
        0 => 0.5,
        1 => positive as u8 as f64,
        _ => (!positive) as u8 as f64,
    }
}

/// Smooth comparability weights `(<<, ~, >>)` of `u = log2 |a| / |b|`.
fn comparability(a: i64, b: i64) -> [f64; 3] {
    let u = match (a, b) {
        (0, 0) => 0.0,
        (0, _) => f64::NEG_INFINITY,
        (_, 0) => f64::INFINITY,
        _ => (a.abs() as f64 / b.abs() as f64).log2(),
    };
    let r = REGION_RATIO_LOG2;
    let c1 = 1.0 - smoothstep(u + r + 1.0);
    let c3 = smoothstep(u - r);
    [c1, 1.0 - c1 - c3, c3]
}

/// Value of the smooth region cutoff at a lattice point.
pub fn region_weight(tag: RegionTag, k1: i64, k2: i64, k3: i64) -> f64 {
    let s12 = k1 + k2;
    let s23 = k2 + k3;
    let wi = sign_split(s12, tag.i == 1);
    let wj = sign_split(s23, tag.j == 2);
    wi * wj * comparability(s12, s23)[tag.k as usize - 1]
}

/// Active regions at a point with their weights and the ratio `|xi1+xi2| / |xi2+xi3|`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionReport {
    pub ratio: f64,
    pub active: Vec<(RegionTag, f64)>,
}

pub fn classify_point(k1: i64, k2: i64, k3: i64) -> RegionReport {
    let ratio = (k1 + k2).abs() as f64 / (k2 + k3).abs() as f64;
    let active = RegionTag::all()
        .map(|t| (t, region_weight(t, k1, k2, k3)))
        .filter(|(_, w)| *w > 0.0)
        .collect();
    RegionReport { ratio, active }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Symbol3Repr {
    /// Row-major `N x N x N` values over lattice slots.
    Dense(Vec<C64>),
    Tensor(Box<Symbol2>, Box<Symbol2>),
    Constant(C64),
    Region(RegionTag),
}

/// A multiplier on the 3-D frequency lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Symbol3 {
    spec: GridSpec,
    repr: Symbol3Repr,
    pub region_tag: Option<RegionTag>,
}

impl Symbol3 {
    pub fn constant(spec: GridSpec, c: C64) -> Self {
        Self { spec, repr: Symbol3Repr::Constant(c), region_tag: None }
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(i64, i64, i64) -> C64) -> Result<Self, SymbolError> {
        let n = spec.num_points();
        if n > DENSE3_MAX_POINTS {
            return Err(SymbolError::TooLargeForDense { n, limit: DENSE3_MAX_POINTS });
        }
        let mut values = Vec::with_capacity(n * n * n);
        for k1 in spec.freqs() {
            for k2 in spec.freqs() {
                for k3 in spec.freqs() {
                    values.push(f(k1, k2, k3));
                }
            }
        }
        Ok(Self { spec, repr: Symbol3Repr::Dense(values), region_tag: None })
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn repr(&self) -> &Symbol3Repr {
        &self.repr
    }

    pub fn eval(&self, k1: i64, k2: i64, k3: i64) -> C64 {
        match &self.repr {
            Symbol3Repr::Dense(v) => {
                let n = self.spec.num_points();
                match (self.spec.freq_slot(k1), self.spec.freq_slot(k2), self.spec.freq_slot(k3)) {
                    (Some(a), Some(b), Some(c)) => v[(a * n + b) * n + c],
                    _ => ZERO,
                }
            }
            Symbol3Repr::Tensor(a1, a2) => a1.eval(k1, k2) * a2.eval(k2, k3),
            Symbol3Repr::Constant(c) => *c,
            Symbol3Repr::Region(tag) => C64::new(region_weight(*tag, k1, k2, k3), 0.0),
        }
    }

    /// Dense copy evaluated through `eval`.
    pub fn densified(&self) -> Result<Self, SymbolError> {
        let mut d = Self::from_fn(self.spec, |a, b, c| self.eval(a, b, c))?;
        d.region_tag = self.region_tag;
        Ok(d)
    }

    pub fn tensor_factors(&self) -> Option<(&Symbol2, &Symbol2)> {
        match &self.repr {
            Symbol3Repr::Tensor(a, b) => Some((a, b)),
            _ => None,
        }
    }
}

/// `a1(xi1, xi2) a2(xi2, xi3)` in factored form.
pub fn tensor_symbol(a1: &Symbol2, a2: &Symbol2) -> Result<Symbol3, SymbolError> {
    if a1.spec() != a2.spec() {
        return Err(SymbolError::SpecMismatch);
    }
    Ok(Symbol3 {
        spec: a1.spec(),
        repr: Symbol3Repr::Tensor(Box::new(a1.clone()), Box::new(a2.clone())),
        region_tag: None,
    })
}

/// Smooth cutoff of the region `tag`.
pub fn region_cutoff(tag: RegionTag, spec: GridSpec) -> Symbol3 {
    Symbol3 { spec, repr: Symbol3Repr::Region(tag), region_tag: Some(tag) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{dft, lp_norm, power_sum};

    fn spec(n: usize) -> GridSpec {
        GridSpec::new(n, n as f64).unwrap()
    }

    #[test]
    fn band_eval_and_trim() {
        let b = Band::new(-2, vec![ZERO, ONE, C64::new(2.0, 0.0), ZERO]).trimmed();
        assert_eq!(b.start(), -1);
        assert_eq!(b.len(), 2);
        assert_eq!(b.eval(0), C64::new(2.0, 0.0));
        assert_eq!(b.eval(5), ZERO);
    }

    #[test]
    fn certificate_of_constant_and_sgn() {
        let s = GridSpec::new(32, 1.0).unwrap();
        let c = MikhlinCertificate::measure(&Symbol2::constant(s, ONE), 2).unwrap();
        assert_eq!(c.constant(0, 0), Some(1.0));
        for (a1, a2, v) in &c.constants {
            if a1 + a2 > 0 {
                assert_eq!(*v, 0.0);
            }
        }
        let g = MikhlinCertificate::measure(&Symbol2::sgn_sum(s), 3).unwrap();
        assert_eq!(g.constant(0, 0), Some(1.0));
        assert!(g.constants.iter().filter(|c| c.0 + c.1 > 0).all(|c| c.2 == 0.0));
    }

    #[test]
    fn mikhlin_symbol_requires_order_two() {
        assert_eq!(build_mikhlin_symbol(1, 1, spec(32)), Err(SymbolError::OrderTooLow(1)));
    }

    #[test]
    fn mikhlin_certificate_is_finite_and_subadditive() {
        let s = spec(64);
        let a = build_mikhlin_symbol(3, 2, s).unwrap();
        let b = build_mikhlin_symbol(4, 2, s).unwrap();
        let ca = a.cert.clone().unwrap();
        let cb = b.cert.clone().unwrap();
        assert!(ca.constants.iter().all(|c| c.2.is_finite()));
        let sum = a.add(&b).unwrap().with_certificate(2).unwrap().cert.unwrap();
        for (x, (y, z)) in sum.constants.iter().zip(ca.constants.iter().zip(&cb.constants)) {
            assert!(x.2 <= y.2 + z.2 + 1e-9);
        }
    }

    #[test]
    fn whitney_square_containing_one_one() {
        let sq: Vec<_> = whitney_decompose(1, spec(32)).into_iter().filter(|q| q.contains(1, 1)).collect();
        assert_eq!(sq.len(), 1);
        let q = sq[0];
        assert!([0.5, 1.0, 2.0].contains(&q.side()));
        assert!(q.whitney_exact());
        assert!((q.distance_to_line() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn whitney_partition_and_reflection() {
        let s = spec(64);
        let plus = whitney_decompose(1, s);
        let minus = whitney_decompose(-1, s);
        assert!(plus.iter().chain(&minus).all(WhitneySquare::whitney_exact));
        for k1 in s.freqs() {
            for k2 in s.freqs() {
                let gap = (k1 + k2) as f64;
                let np = plus.iter().filter(|q| q.contains(k1, k2)).count();
                let nm = minus.iter().filter(|q| q.contains(k1, k2)).count();
                if gap > WHITNEY_COVER_THRESHOLD {
                    assert_eq!((np, nm), (1, 0), "({k1},{k2})");
                } else if gap < -WHITNEY_COVER_THRESHOLD {
                    assert_eq!((np, nm), (0, 1), "({k1},{k2})");
                } else {
                    assert!(np + nm <= 1);
                }
            }
        }
        let mut reflected: Vec<_> = plus
            .iter()
            .map(|q| {
                let (a, b) = q.center();
                ((-a * 2.0) as i64, (-b * 2.0) as i64, q.side_units)
            })
            .collect();
        let mut direct: Vec<_> = minus
            .iter()
            .map(|q| ((q.center().0 * 2.0) as i64, (q.center().1 * 2.0) as i64, q.side_units))
            .collect();
        reflected.sort_unstable();
        direct.sort_unstable();
        assert_eq!(reflected, direct);
    }

    #[test]
    fn series_of_constant_on_one_square() {
        let s = spec(64);
        let q = *whitney_decompose(1, s).iter().find(|q| q.side() == 8.0).unwrap();
        let m = Symbol2::constant(s, ONE);
        let series = expand_whitney_series(&m, &[q], 4, SeriesWindow::Sharp).unwrap();
        let c = &series.squares[0].coeffs;
        let w = 9;
        assert!((c[4 * w + 4] - ONE).norm() < 1e-12);
        for (idx, v) in c.iter().enumerate() {
            if idx != 4 * w + 4 {
                assert!(v.norm() <= 1e-12);
            }
        }
        assert!(series.reconstruction_error < 1e-12);
    }

    #[test]
    fn series_of_aligned_exponential() {
        let s = spec(64);
        let q = *whitney_decompose(1, s)
            .iter()
            .find(|q| q.side() == 8.0 && q.center().0.abs() < 20.0 && q.center().1.abs() < 20.0)
            .unwrap();
        let ell = 2i64;
        let m = Symbol2::from_fn(s, "tone", |k1, k2| {
            C64::from_polar(1.0, 2.0 * PI * (ell * k1 + ell * k2) as f64 / 8.0)
        })
        .unwrap();
        let series = expand_whitney_series(&m, &[q], 4, SeriesWindow::Sharp).unwrap();
        let w = 9;
        for l1 in -4i64..=4 {
            for l2 in -4i64..=4 {
                let c = series.squares[0].coeffs[(l1 + 4) as usize * w + (l2 + 4) as usize];
                if l1 == ell && l2 == ell {
                    assert!((c.norm() - 1.0).abs() < 1e-12);
                } else {
                    assert!(c.norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn series_rejects_zero_truncation() {
        let s = spec(16);
        let m = Symbol2::constant(s, ONE);
        assert_eq!(expand_whitney_series(&m, &[], 0, SeriesWindow::Smooth), Err(SymbolError::BadTruncation(0)));
    }

    #[test]
    fn log_blowup_empty_range_is_zero() {
        let s = GridSpec::new(1 << 12, 2048.0).unwrap();
        let sym = log_blowup_symbol(&LogBlowupParams::reference(), 7, s).unwrap();
        assert_eq!(sym.terms().unwrap().len(), 0);
        assert_eq!(sym.eval(3, -3), ZERO);
    }

    #[test]
    fn log_blowup_single_square_pair() {
        let s = GridSpec::new(1 << 13, 2048.0).unwrap();
        let p = LogBlowupParams::reference();
        let t = log_blowup_term(&p, 8, 0, 0, s);
        let l = s.period();
        let half = 2f64.powi(-9);
        for (j, v) in t.u.iter() {
            assert!((j as f64 / l).abs() < half && v.re > 0.0);
        }
        let c2 = p.gamma * 2f64.powi(-8);
        for (j, v) in t.v.iter() {
            assert!((j as f64 / l - c2).abs() < half && v.re > 0.0);
        }
        assert!(p.containment_holds(8));
    }

    #[test]
    fn log_blowup_unresolved_scale_errors() {
        let s = GridSpec::new(1 << 10, 512.0).unwrap();
        assert!(matches!(
            log_blowup_symbol(&LogBlowupParams::reference(), 8, s),
            Err(SymbolError::Unresolved { .. })
        ));
    }

    #[test]
    fn log_blowup_single_train_matches_profile() {
        let s = GridSpec::new(1 << 14, 1024.0).unwrap();
        let (f1, _) = log_blowup_pair(1, s).unwrap();
        let psi = wave_train(s, 1, 0.0, 0.5, |xi| log_blowup_psi_hat(xi, LOG_BLOWUP_EPS));
        let a = lp_norm(&f1, 4.0).unwrap();
        let b = lp_norm(&psi, 4.0).unwrap();
        assert!((a - b).abs() < 1e-10 * b);
    }

    #[test]
    fn log_blowup_pair_l2_norm_is_exact() {
        let s = GridSpec::new(1 << 15, 1024.0).unwrap();
        let (f1, f2) = log_blowup_pair(8, s).unwrap();
        let one = power_sum(&log_blowup_pair(1, s).unwrap().0, 2.0);
        assert!((power_sum(&f1, 2.0) - 8.0 * one).abs() < 1e-9 * one);
        assert!((power_sum(&f2, 2.0) - 8.0 * one).abs() < 1e-9 * one);
    }

    #[test]
    fn ladder_profiles() {
        assert!((ladder_chi_check(1.0) - 1.0).abs() < 1e-14);
        assert!((0..=100).all(|i| ladder_chi_check(i as f64 / 100.0) >= 1.0 - 1e-14));
        assert_eq!(ladder_window(1.0), 1.0);
        assert_eq!(ladder_window(0.74), 0.0);
        assert_eq!(ladder_window(1.51), 0.0);
        // Unit mass of the skinny peak on a fine quadrature.
        let h = 1e-5;
        let mass: f64 = (0..6400).map(|i| ladder_phi1_hat(-1.0 / 32.0 + (i as f64 + 0.5) * h) * h).sum();
        assert!((mass - 1.0).abs() < 1e-8);
    }

    #[test]
    fn ladder_empty_range_is_zero_operator() {
        let s = GridSpec::new(1 << 10, 64.0).unwrap();
        #[allow(clippy::reversed_empty_ranges)]
        let op = ladder_blowup_family(6..=5, 4, s).unwrap();
        assert!(op.blocks.is_empty());
        assert!(op.total_symbol().terms().unwrap().is_empty());
    }

    #[test]
    fn ladder_pair_has_disjoint_bands() {
        let s = GridSpec::new(1 << 13, 512.0).unwrap();
        let (f1, f2) = ladder_blowup_pair(4, s).unwrap();
        let h1 = dft(&f1);
        for (k, c) in h1.iter() {
            let xi = k as f64 / s.period();
            let near = (xi - xi.round()).abs() <= 1.0 / 32.0 && xi.round() >= 1.0 && xi.round() <= 4.0;
            assert!(near || c.norm() < 1e-12);
        }
        let h2 = dft(&f2);
        for (k, c) in h2.iter() {
            let xi = k as f64 / s.period();
            let near = (xi - xi.round()).abs() <= 0.125 && xi.round() <= -1.0 && xi.round() >= -4.0;
            assert!(near || c.norm() < 1e-12);
        }
    }

    #[test]
    fn tensor_values() {
        let s = spec(16);
        let one = Symbol2::constant(s, ONE);
        let t = tensor_symbol(&one, &one).unwrap();
        assert_eq!(t.eval(3, -2, 5), ONE);
        let sg = tensor_symbol(&Symbol2::sgn_sum(s), &Symbol2::sgn_sum(s)).unwrap();
        assert_eq!(sg.eval(1, 2, -3), C64::new(-1.0, 0.0));
        assert!(tensor_symbol(&one, &Symbol2::constant(spec(32), ONE)).is_err());
    }

    #[test]
    fn region_partition_of_unity() {
        let s = spec(16);
        for k1 in s.freqs() {
            for k2 in s.freqs() {
                for k3 in s.freqs() {
                    let total: f64 = RegionTag::all().map(|t| region_weight(t, k1, k2, k3)).sum();
                    assert!((total - 1.0).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn region_classification_example() {
        let r = classify_point(1, 2, -3);
        assert_eq!(r.ratio, 3.0);
        assert_eq!(r.active, vec![(RegionTag { i: 1, j: 1, k: 2 }, 1.0)]);
    }

    #[test]
    fn region_swap_symmetry() {
        let s = spec(32);
        for tag in RegionTag::all() {
            let sw = tag.swapped();
            for k1 in s.freqs().step_by(3) {
                for k2 in s.freqs().step_by(2) {
                    for k3 in s.freqs().step_by(3) {
                        assert_eq!(region_weight(tag, k1, k2, k3), region_weight(sw, k3, k2, k1));
                    }
                }
            }
        }
        assert_eq!(RegionTag { i: 1, j: 1, k: 1 }.swapped(), RegionTag { i: 2, j: 2, k: 3 });
    }

    #[test]
    fn region_tag_parsing() {
        let t: RegionTag = "R12_3".parse().unwrap();
        assert_eq!(t, RegionTag { i: 1, j: 2, k: 3 });
        assert_eq!(t.to_string(), "R12_3");
        for bad in ["R13_1", "R11_4", "11_1", "R1_1", "R11_", ""] {
            assert!(bad.parse::<RegionTag>().is_err(), "{bad}");
        }
    }

    #[test]
    fn descriptor_round_trip() {
        let d = SymbolDescriptor::WhitneySeries {
            base: Box::new(SymbolDescriptor::Mikhlin { seed: 9, order: 2 }),
            truncation: 4,
            window: SeriesWindow::Smooth,
        };
        let text = d.to_json();
        assert_eq!(SymbolDescriptor::from_json(&text).unwrap(), d);
        assert!(SymbolDescriptor::from_json(r#"{"constructor":"mikhlin","seed":1,"order":1}"#).is_err());
        assert!(SymbolDescriptor::from_json(r#"{"constructor":"nope"}"#).is_err());
        let sym = SymbolDescriptor::from_json(r#"{"constructor":"sgn_sum"}"#).unwrap().build(spec(8)).unwrap();
        assert_eq!(sym.eval(1, 1), ONE);
    }
}
