//! Periodic lattice model: sampling, DFT, norms and the maximal function.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("number of points {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("period must be positive and finite, got {0}")]
    BadPeriod(f64),
    #[error("exponent {0} outside the admissible range")]
    BadExponent(f64),
    #[error("expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("grid specs differ: {0:?} vs {1:?}")]
    SpecMismatch(GridSpec, GridSpec),
    #[error("cannot resample between different periods {0} and {1}")]
    PeriodMismatch(f64, f64),
}

/// Uniform periodic grid of `num_points` samples on a torus of length `period`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    num_points: usize,
    period: f64,
}

impl GridSpec {
    pub fn new(num_points: usize, period: f64) -> Result<Self, GridError> {
        if num_points == 0 || !num_points.is_power_of_two() {
            return Err(GridError::NotPowerOfTwo(num_points));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(GridError::BadPeriod(period));
        }
        Ok(Self { num_points, period })
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn dx(&self) -> f64 {
        self.period / self.num_points as f64
    }

    pub fn dxi(&self) -> f64 {
        1.0 / self.period
    }

    pub fn x(&self, j: usize) -> f64 {
        j as f64 * self.dx()
    }

    /// Smallest lattice frequency index, `-N/2`.
    pub fn min_freq(&self) -> i64 {
        -(self.num_points as i64 / 2)
    }

    /// Largest lattice frequency index, `N/2 - 1`.
    pub fn max_freq(&self) -> i64 {
        self.num_points as i64 / 2 - 1
    }

    pub fn freqs(&self) -> impl Iterator<Item = i64> {
        self.min_freq()..=self.max_freq()
    }

    /// Storage slot of integer frequency `k`, if it lies in `[-N/2, N/2)`.
    pub fn freq_slot(&self, k: i64) -> Option<usize> {
        (self.min_freq()..=self.max_freq())
            .contains(&k)
            .then(|| (k - self.min_freq()) as usize)
    }

    pub fn freq_of_slot(&self, slot: usize) -> i64 {
        slot as i64 + self.min_freq()
    }

    /// Reduce an integer frequency modulo `N` into `[-N/2, N/2)`.
    pub fn wrap_freq(&self, k: i64) -> i64 {
        let n = self.num_points as i64;
        (k - self.min_freq()).rem_euclid(n) + self.min_freq()
    }

    /// Same period, `factor` times more points (spectral padding target).
    pub fn refined(&self, factor: usize) -> Result<Self, GridError> {
        Self::new(self.num_points * factor, self.period)
    }
}

/// Complex samples at `x_j = j * period / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    spec: GridSpec,
    samples: Vec<C64>,
}

impl GridFunction {
    pub fn new(spec: GridSpec, samples: Vec<C64>) -> Result<Self, GridError> {
        if samples.len() != spec.num_points {
            return Err(GridError::LengthMismatch {
                expected: spec.num_points,
                got: samples.len(),
            });
        }
        Ok(Self { spec, samples })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            samples: vec![C64::new(0.0, 0.0); spec.num_points],
        }
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(f64) -> C64) -> Self {
        let samples = (0..spec.num_points).map(|j| f(spec.x(j))).collect();
        Self { spec, samples }
    }

    pub fn from_real(spec: GridSpec, values: &[f64]) -> Result<Self, GridError> {
        Self::new(spec, values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    /// The pure tone `e^{2 pi i k x / L}`.
    pub fn tone(spec: GridSpec, k: i64) -> Self {
        let n = spec.num_points as f64;
        Self::from_index_fn(spec, |j| C64::from_polar(1.0, 2.0 * PI * k as f64 * j as f64 / n))
    }

    pub fn from_index_fn(spec: GridSpec, f: impl FnMut(usize) -> C64) -> Self {
        Self {
            spec,
            samples: (0..spec.num_points).map(f).collect(),
        }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn samples(&self) -> &[C64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<C64> {
        self.samples
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        Self {
            spec: self.spec,
            samples: self.samples.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn abs(&self) -> Self {
        self.map(|z| C64::new(z.norm(), 0.0))
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn scale(&self, c: C64) -> Self {
        self.map(|z| z * c)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Result<Self, GridError> {
        if self.spec != other.spec {
            return Err(GridError::SpecMismatch(self.spec, other.spec));
        }
        Ok(Self {
            spec: self.spec,
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self, GridError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, GridError> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self, GridError> {
        self.zip_with(other, |a, b| a * b)
    }

    /// `x -> f(x - h dx)` for an integer lattice shift `h`.
    pub fn translate(&self, h: i64) -> Self {
        let n = self.spec.num_points as i64;
        Self::from_index_fn(self.spec, |j| {
            self.samples[(j as i64 - h).rem_euclid(n) as usize]
        })
    }

    /// `x -> e^{2 pi i k x / L} f(x)`.
    pub fn modulate(&self, k: i64) -> Self {
        let n = self.spec.num_points as f64;
        Self::from_index_fn(self.spec, |j| {
            self.samples[j] * C64::from_polar(1.0, 2.0 * PI * k as f64 * j as f64 / n)
        })
    }

    /// `sum_j f(x_j) dx`.
    pub fn integral(&self) -> C64 {
        self.samples.iter().sum::<C64>() * self.spec.dx()
    }

    /// `sum_j f(x_j) conj(g(x_j)) dx`.
    pub fn inner(&self, other: &Self) -> Result<C64, GridError> {
        if self.spec != other.spec {
            return Err(GridError::SpecMismatch(self.spec, other.spec));
        }
        Ok(self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(&a, &b)| a * b.conj())
            .sum::<C64>()
            * self.spec.dx())
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// DFT coefficients in symmetric order, slot `i` holding frequency `i - N/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFunction {
    spec: GridSpec,
    coeffs: Vec<C64>,
}

impl SpectralFunction {
    pub fn new(spec: GridSpec, coeffs: Vec<C64>) -> Result<Self, GridError> {
        if coeffs.len() != spec.num_points {
            return Err(GridError::LengthMismatch {
                expected: spec.num_points,
                got: coeffs.len(),
            });
        }
        Ok(Self { spec, coeffs })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            coeffs: vec![C64::new(0.0, 0.0); spec.num_points],
        }
    }

    pub fn from_freq_fn(spec: GridSpec, f: impl Fn(i64) -> C64) -> Self {
        Self {
            spec,
            coeffs: spec.freqs().map(f).collect(),
        }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [C64] {
        &mut self.coeffs
    }

    /// Coefficient at integer frequency `k`; zero outside the lattice range.
    pub fn at(&self, k: i64) -> C64 {
        self.spec
            .freq_slot(k)
            .map_or(C64::new(0.0, 0.0), |s| self.coeffs[s])
    }

    pub fn set(&mut self, k: i64, value: C64) {
        if let Some(s) = self.spec.freq_slot(k) {
            self.coeffs[s] = value;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, C64)> + '_ {
        self.spec.freqs().zip(self.coeffs.iter().copied())
    }

    /// Zero-pad or crop onto another grid of the same period.
    pub fn resample(&self, target: GridSpec) -> Result<Self, GridError> {
        if self.spec.period != target.period {
            return Err(GridError::PeriodMismatch(self.spec.period, target.period));
        }
        Ok(Self::from_freq_fn(target, |k| self.at(k)))
    }

    pub fn map_with_freq(&self, f: impl Fn(i64, C64) -> C64) -> Self {
        Self {
            spec: self.spec,
            coeffs: self.iter().map(|(k, c)| f(k, c)).collect(),
        }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn forward_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

pub(crate) fn inverse_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// `f_hat(k) = dx * sum_j f(x_j) e^{-2 pi i k x_j / L}`.
pub fn dft(f: &GridFunction) -> SpectralFunction {
    let spec = f.spec;
    let n = spec.num_points;
    let mut buf = f.samples.clone();
    forward_plan(n).process(&mut buf);
    let dx = spec.dx();
    let half = n / 2;
    let coeffs = (0..n).map(|slot| buf[(slot + half) % n] * dx).collect();
    SpectralFunction { spec, coeffs }
}

/// `f(x_j) = dxi * sum_k f_hat(k) e^{2 pi i k x_j / L}`.
pub fn idft(fhat: &SpectralFunction) -> GridFunction {
    let spec = fhat.spec;
    let n = spec.num_points;
    let half = n / 2;
    let mut buf: Vec<C64> = (0..n).map(|m| fhat.coeffs[(m + half) % n]).collect();
    inverse_plan(n).process(&mut buf);
    let dxi = spec.dxi();
    buf.iter_mut().for_each(|z| *z *= dxi);
    GridFunction { spec, samples: buf }
}

/// `sum_j |f(x_j)|^r dx` for any `r > 0`; callers build quasi-norms from it.
pub fn power_sum(f: &GridFunction, r: f64) -> f64 {
    f.samples.iter().map(|z| z.norm().powf(r)).sum::<f64>() * f.spec.dx()
}

fn check_exponent(p: f64) -> Result<(), GridError> {
    if p.is_nan() || p < 1.0 {
        Err(GridError::BadExponent(p))
    } else {
        Ok(())
    }
}

/// Riemann-sum `L^p` norm, `p` in `[1, inf]`.
pub fn lp_norm(f: &GridFunction, p: f64) -> Result<f64, GridError> {
    check_exponent(p)?;
    if p.is_infinite() {
        return Ok(f.max_abs());
    }
    Ok(power_sum(f, p).powf(1.0 / p))
}

/// `L^r` quantity for `r > 0` (a quasi-norm below one).
pub fn lr_quasi_norm(f: &GridFunction, r: f64) -> Result<f64, GridError> {
    if r.is_nan() || r <= 0.0 {
        return Err(GridError::BadExponent(r));
    }
    if r.is_infinite() {
        return Ok(f.max_abs());
    }
    Ok(power_sum(f, r).powf(1.0 / r))
}

/// `p / (p - 1)`, with `1 <-> inf`.
pub fn conjugate_exponent(p: f64) -> f64 {
    if p.is_infinite() {
        1.0
    } else if p == 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    }
}

/// `L^{p'}` norm of the coefficient sequence weighted by the frequency step.
pub fn spectral_lq_norm(fhat: &SpectralFunction, q: f64) -> Result<f64, GridError> {
    check_exponent(q)?;
    let mags = fhat.coeffs.iter().map(|z| z.norm());
    if q.is_infinite() {
        return Ok(mags.fold(0.0, f64::max));
    }
    Ok((mags.map(|m| m.powf(q)).sum::<f64>() * fhat.spec.dxi()).powf(1.0 / q))
}

/// `||f||_{W_p} = ||f_hat||_{L^{p'}}`.
pub fn wp_norm(f: &GridFunction, p: f64) -> Result<f64, GridError> {
    check_exponent(p)?;
    spectral_lq_norm(&dft(f), conjugate_exponent(p))
}

/// Maximal averages of `|f|` over periodic dyadic windows and their threefold dilates.
pub fn hl_maximal(f: &GridFunction) -> GridFunction {
    let n = f.spec.num_points;
    let mags: Vec<f64> = f.samples.iter().map(|z| z.norm()).collect();
    let mut prefix = vec![0.0; 2 * n + 1];
    for i in 0..2 * n {
        prefix[i + 1] = prefix[i] + mags[i % n];
    }
    let total = prefix[n];
    let mut out = mags.clone();
    let mut w = 1;
    while w <= n {
        for a in (0..n).step_by(w) {
            let mean = (prefix[a + w] - prefix[a]) / w as f64;
            for v in &mut out[a..a + w] {
                *v = v.max(mean);
            }
            if 3 * w >= n {
                continue;
            }
            let start = (a + n - w) % n;
            let mean3 = (prefix[start + 3 * w] - prefix[start]) / (3 * w) as f64;
            for i in 0..3 * w {
                let v = &mut out[(start + i) % n];
                *v = v.max(mean3);
            }
        }
        w *= 2;
    }
    let full = total / n as f64;
    let samples = out
        .into_iter()
        .map(|v| C64::new(v.max(full), 0.0))
        .collect();
    GridFunction { spec: f.spec, samples }
}

/// Whether an input slot carries an `L^p` or a `W_p` norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotKind {
    L,
    W,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentTuple {
    p: Vec<f64>,
    kinds: Vec<SlotKind>,
}

impl ExponentTuple {
    pub fn new(p: Vec<f64>, kinds: Vec<SlotKind>) -> Result<Self, GridError> {
        if p.len() != kinds.len() {
            return Err(GridError::LengthMismatch {
                expected: p.len(),
                got: kinds.len(),
            });
        }
        if let Some(&bad) = p.iter().find(|&&q| q.is_nan() || q <= 1.0) {
            return Err(GridError::BadExponent(bad));
        }
        Ok(Self { p, kinds })
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn kinds(&self) -> &[SlotKind] {
        &self.kinds
    }

    pub fn conjugate(&self, i: usize) -> f64 {
        conjugate_exponent(self.p[i])
    }

    /// Hoelder target `r = 1 / sum 1/p_i`.
    pub fn holder_target(&self) -> f64 {
        1.0 / self.p.iter().map(|q| 1.0 / q).sum::<f64>()
    }

    /// Norm of `f` in slot `i` (`L^p` or `W_p`).
    pub fn slot_norm(&self, i: usize, f: &GridFunction) -> Result<f64, GridError> {
        match self.kinds[i] {
            SlotKind::L => lp_norm(f, self.p[i]),
            SlotKind::W => wp_norm(f, self.p[i]),
        }
    }

    /// Membership in the trilinear region `1/p1+1/p2<1, 1/p2+1/p3<1, 2<p2<inf`.
    pub fn in_trilinear_region(&self) -> bool {
        if self.p.len() != 3 {
            return false;
        }
        let [a, b, c] = [1.0 / self.p[0], 1.0 / self.p[1], 1.0 / self.p[2]];
        a + b < 1.0 && b + c < 1.0 && self.p[1] > 2.0 && self.p[1].is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fn(spec: GridSpec, seed: u64) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GridFunction::from_index_fn(spec, |_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert_eq!(GridSpec::new(12, 1.0), Err(GridError::NotPowerOfTwo(12)));
        assert!(GridSpec::new(8, 0.0).is_err());
    }

    #[test]
    fn constant_has_only_zero_frequency() {
        let spec = GridSpec::new(8, 1.0).unwrap();
        let f = GridFunction::from_fn(spec, |_| C64::new(1.0, 0.0));
        let fhat = dft(&f);
        for (k, c) in fhat.iter() {
            let expected = if k == 0 { 1.0 } else { 0.0 };
            assert!((c - C64::new(expected, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn pure_tone_is_delta() {
        let spec = GridSpec::new(16, 1.0).unwrap();
        let fhat = dft(&GridFunction::tone(spec, 1));
        for (k, c) in fhat.iter() {
            let expected = if k == 1 { 1.0 } else { 0.0 };
            assert!((c - C64::new(expected, 0.0)).norm() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn round_trip() {
        let spec = GridSpec::new(64, 3.0).unwrap();
        let f = random_fn(spec, 7);
        let g = idft(&dft(&f));
        let err = f.sub(&g).unwrap().max_abs() / f.max_abs();
        assert!(err < 1e-12);
    }

    #[test]
    fn lp_norm_examples() {
        let spec = GridSpec::new(8, 8.0).unwrap();
        let f = GridFunction::from_real(spec, &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((lp_norm(&f, 1.0).unwrap() - 4.0).abs() < 1e-14);
        assert_eq!(lp_norm(&f, f64::INFINITY).unwrap(), 1.0);
        assert!(lp_norm(&f, 0.5).is_err());
        let spec = GridSpec::new(32, 2.0).unwrap();
        let tone = GridFunction::tone(spec, 2);
        for p in [1.0, 2.0, 3.5] {
            assert!((lp_norm(&tone, p).unwrap() - 2f64.powf(1.0 / p)).abs() < 1e-12);
        }
    }

    #[test]
    fn wp_norm_examples() {
        let spec = GridSpec::new(8, 1.0).unwrap();
        let one = GridFunction::from_fn(spec, |_| C64::new(1.0, 0.0));
        for p in [1.0, 2.0, 4.0, f64::INFINITY] {
            assert!((wp_norm(&one, p).unwrap() - 1.0).abs() < 1e-13);
        }
        let spec = GridSpec::new(16, 4.0).unwrap();
        let mut fhat = SpectralFunction::zeros(spec);
        fhat.set(1, C64::new(1.0, 0.0));
        fhat.set(3, C64::new(1.0, 0.0));
        let f = idft(&fhat);
        let expected = 2f64.sqrt() * spec.dxi().sqrt();
        assert!((wp_norm(&f, 2.0).unwrap() - expected).abs() < 1e-13);
    }

    #[test]
    fn hausdorff_young_direction_for_p_above_two() {
        // For 1 <= p <= 2 one has ||f_hat||_{p'} <= ||f||_p; for p > 2 the reverse
        // inequality can fail, so only the p <= 2 direction is asserted.
        let spec = GridSpec::new(64, 1.0).unwrap();
        for seed in 0..20 {
            let f = random_fn(spec, seed);
            for p in [1.0, 1.5, 2.0] {
                assert!(wp_norm(&f, p).unwrap() <= lp_norm(&f, p).unwrap() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn maximal_of_constant() {
        let spec = GridSpec::new(16, 1.0).unwrap();
        let f = GridFunction::from_fn(spec, |_| C64::new(0.0, -2.5));
        assert!(hl_maximal(&f).samples().iter().all(|z| (z.re - 2.5).abs() < 1e-14));
    }

    #[test]
    fn maximal_of_single_cell() {
        let spec = GridSpec::new(8, 8.0).unwrap();
        let mut v = [0.0; 8];
        v[3] = 1.0;
        let m = hl_maximal(&GridFunction::from_real(spec, &v).unwrap());
        assert_eq!(m.samples()[3].re, 1.0);
        for j in 0..8i64 {
            let d = (j - 3).abs().min(8 - (j - 3).abs()) as f64;
            assert!(6.0 * (1.0 + d) * m.samples()[j as usize].re >= 1.0, "j={j}");
        }
    }

    #[test]
    fn exponent_tuple_targets() {
        let e = ExponentTuple::new(vec![4.0, 4.0, 4.0], vec![SlotKind::L, SlotKind::W, SlotKind::L]).unwrap();
        assert!((e.holder_target() - 4.0 / 3.0).abs() < 1e-15);
        assert!((e.conjugate(1) - 4.0 / 3.0).abs() < 1e-15);
        assert!(e.in_trilinear_region());
        let bad = ExponentTuple::new(vec![2.0, 2.0, 4.0], vec![SlotKind::L; 3]).unwrap();
        assert!(!bad.in_trilinear_region());
        assert!(ExponentTuple::new(vec![0.5], vec![SlotKind::L]).is_err());
        let inf = ExponentTuple::new(vec![f64::INFINITY, 2.0], vec![SlotKind::L; 2]).unwrap();
        assert_eq!(inf.conjugate(0), 1.0);
        assert!((inf.holder_target() - 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn parseval(seed in 0u64..1000, log_n in 2u32..9, period in 0.5f64..20.0) {
            let spec = GridSpec::new(1 << log_n, period).unwrap();
            let f = random_fn(spec, seed);
            let lhs = power_sum(&f, 2.0);
            let rhs: f64 = dft(&f).coeffs().iter().map(|c| c.norm_sqr()).sum::<f64>() * spec.dxi();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs);
        }

        #[test]
        fn holder(seed in 0u64..1000, p in 1.0f64..8.0, q in 1.0f64..8.0) {
            let spec = GridSpec::new(64, 2.0).unwrap();
            let f = random_fn(spec, seed);
            let g = random_fn(spec, seed + 1);
            let r = 1.0 / (1.0 / p + 1.0 / q);
            let lhs = lr_quasi_norm(&f.mul(&g).unwrap(), r).unwrap();
            let rhs = lp_norm(&f, p).unwrap() * lp_norm(&g, q).unwrap();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12));
        }

        #[test]
        fn maximal_sublinear_and_dominating(seed in 0u64..1000) {
            let spec = GridSpec::new(128, 1.0).unwrap();
            let f = random_fn(spec, seed);
            let g = random_fn(spec, seed ^ 0xabc);
            let mf = hl_maximal(&f);
            let mg = hl_maximal(&g);
            let mfg = hl_maximal(&f.add(&g).unwrap());
            for j in 0..128 {
                prop_assert!(mfg.samples()[j].re <= mf.samples()[j].re + mg.samples()[j].re + 1e-12);
                prop_assert!(mf.samples()[j].re >= f.samples()[j].norm() - 1e-15);
            }
        }

        #[test]
        fn wp_modulation_invariant(seed in 0u64..1000, k in -5i64..5, p in 1.0f64..6.0) {
            let spec = GridSpec::new(32, 1.0).unwrap();
            // Band-limit so that modulation permutes coefficients without wrap.
            let f = random_fn(spec, seed);
            let band = SpectralFunction::from_freq_fn(spec, |m| if m.abs() < 8 { dft(&f).at(m) } else { C64::new(0.0, 0.0) });
            let f = idft(&band);
            let a = wp_norm(&f, p).unwrap();
            let b = wp_norm(&f.modulate(k), p).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        }
    }
}
