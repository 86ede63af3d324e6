//! Bilinear and trilinear multiplier operators with oracle and fast evaluation paths.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{dft, forward_plan, idft, inverse_plan, GridError, GridFunction, GridSpec, SpectralFunction, C64};
use crate::symbols::{SeparableTerm, Symbol2, Symbol3, Symbol3Repr, SymbolError, DENSE3_MAX_POINTS};

/// Default spectral padding of operator outputs.
pub const DEFAULT_PADDING: usize = 4;
/// Largest lattice side accepted by the trilinear oracle.
pub const TRILINEAR_ORACLE_MAX: usize = DENSE3_MAX_POINTS;

const ZERO: C64 = C64::new(0.0, 0.0);
const TERM_CHUNK: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("fast path requested for a non-factorable symbol")]
    NotFactorable,
    #[error("oracle path limited to N <= {limit}, got {n}")]
    OracleTooLarge { n: usize, limit: usize },
    #[error("inputs and symbol live on different grids")]
    SpecMismatch,
    #[error("output grid must have a power-of-two number of points >= 2, got {0}")]
    BadOutputGrid(usize),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Path {
    Oracle,
    FftFast,
}

/// Sampling of operator outputs on the input torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputGrid {
    /// `pad * N` points; `pad = 1` wraps output frequencies periodically.
    Padded(usize),
    /// A fixed number of points; frequencies outside its range wrap.
    Points(usize),
}

impl Default for OutputGrid {
    fn default() -> Self {
        Self::Padded(DEFAULT_PADDING)
    }
}

impl OutputGrid {
    pub fn spec_for(&self, input: GridSpec) -> Result<GridSpec, OperatorError> {
        let n = match *self {
            Self::Padded(p) => p.checked_mul(input.num_points()).ok_or(OperatorError::BadOutputGrid(p))?,
            Self::Points(n) => n,
        };
        GridSpec::new(n, input.period()).map_err(|_| OperatorError::BadOutputGrid(n))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorResult {
    pub output: GridFunction,
    pub path_used: Path,
    pub flop_estimate: u64,
}

fn same_spec(spec: GridSpec, fs: &[&GridFunction]) -> Result<(), OperatorError> {
    if fs.iter().all(|f| f.spec() == spec) {
        Ok(())
    } else {
        Err(OperatorError::SpecMismatch)
    }
}

fn ceil_div(a: i64, b: i64) -> i64 {
    a.div_euclid(b) + (a.rem_euclid(b) != 0) as i64
}

fn out_slot(out: GridSpec, eta: i64) -> usize {
    out.freq_slot(out.wrap_freq(eta)).expect("wrapped frequency lies on the lattice")
}

/// `T_m(f1, f2)` with `T^(eta) = dxi sum_{xi1 + xi2 = eta} m f1^ f2^`.
pub fn apply_bilinear(
    m: &Symbol2,
    f1: &GridFunction,
    f2: &GridFunction,
    path: Path,
    grid: OutputGrid,
) -> Result<OperatorResult, OperatorError> {
    let spec = m.spec();
    same_spec(spec, &[f1, f2])?;
    let out = grid.spec_for(spec)?;
    let h1 = dft(f1);
    let h2 = dft(f2);
    let (coeffs, flops) = match path {
        Path::Oracle => bilinear_oracle(m, &h1, &h2, out)?,
        Path::FftFast => {
            let terms = m.terms().ok_or(OperatorError::NotFactorable)?;
            bilinear_fast(&terms, &h1, &h2, out)
        }
    };
    let output = idft(&SpectralFunction::new(out, coeffs)?);
    Ok(OperatorResult { output, path_used: path, flop_estimate: flops })
}

fn bilinear_oracle(
    m: &Symbol2,
    h1: &SpectralFunction,
    h2: &SpectralFunction,
    out: GridSpec,
) -> Result<(Vec<C64>, u64), OperatorError> {
    let spec = m.spec();
    let n = spec.num_points();
    let values = m.dense_values()?;
    let dxi = spec.dxi();
    let lo = spec.min_freq();
    let n_out = out.num_points() as i64;
    let coeffs = (0..out.num_points())
        .into_par_iter()
        .map(|slot| {
            let eta = out.freq_of_slot(slot);
            let mut acc = ZERO;
            for s1 in 0..n {
                let k1 = lo + s1 as i64;
                let a = h1.coeffs()[s1];
                if a == ZERO {
                    continue;
                }
                // All k2 on the input lattice with k1 + k2 = eta mod n_out.
                let base = eta - k1;
                let mut k2 = base + ceil_div(lo - base, n_out) * n_out;
                while k2 <= spec.max_freq() {
                    let s2 = (k2 - lo) as usize;
                    acc += values[s1 * n + s2] * a * h2.coeffs()[s2];
                    k2 += n_out;
                }
            }
            acc * dxi
        })
        .collect();
    Ok((coeffs, (n * n) as u64 * 8))
}

/// Linear convolution of two short sequences.
fn linear_convolution(a: &[C64], b: &[C64]) -> (Vec<C64>, u64) {
    if a.is_empty() || b.is_empty() {
        return (Vec::new(), 0);
    }
    let len = a.len() + b.len() - 1;
    let direct = (a.len() * b.len()) as u64;
    let size = len.next_power_of_two();
    let fft_cost = 3 * size as u64 * (size.trailing_zeros() as u64 + 1) * 5;
    if direct <= fft_cost {
        let mut out = vec![ZERO; len];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        return (out, direct * 8);
    }
    let mut fa = vec![ZERO; size];
    let mut fb = vec![ZERO; size];
    fa[..a.len()].copy_from_slice(a);
    fb[..b.len()].copy_from_slice(b);
    let fwd = forward_plan(size);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    fa.iter_mut().zip(&fb).for_each(|(x, y)| *x *= y);
    inverse_plan(size).process(&mut fa);
    let scale = 1.0 / size as f64;
    fa.truncate(len);
    fa.iter_mut().for_each(|z| *z *= scale);
    (fa, fft_cost)
}

/// Output band `(start, values)` and flops of one separable term.
fn term_contribution(t: &SeparableTerm, h1: &SpectralFunction, h2: &SpectralFunction) -> (i64, Vec<C64>, u64) {
    let a: Vec<C64> = t.u.iter().map(|(k, x)| x * h1.at(k)).collect();
    let b: Vec<C64> = t.v.iter().map(|(k, x)| x * h2.at(k)).collect();
    let start = t.u.start() + t.v.start();
    if a.iter().all(|z| *z == ZERO) || b.iter().all(|z| *z == ZERO) {
        return (start, Vec::new(), 0);
    }
    match &t.w {
        Some(w) => {
            // Only output frequencies inside the filter band are needed.
            let lo = w.start().max(start);
            let hi = (w.end() - 1).min(start + (a.len() + b.len()) as i64 - 2);
            if hi < lo {
                return (lo, Vec::new(), 0);
            }
            let window_cost = ((hi - lo + 1) as usize * a.len().min(b.len())) as u64;
            let full_cost = linear_convolution_cost(a.len(), b.len());
            let values = if window_cost <= full_cost {
                (lo..=hi)
                    .map(|eta| {
                        let off = (eta - start) as usize;
                        let i_lo = off.saturating_sub(b.len() - 1);
                        let i_hi = off.min(a.len() - 1);
                        let s: C64 = (i_lo..=i_hi).map(|i| a[i] * b[off - i]).sum();
                        s * w.eval(eta) * t.coeff
                    })
                    .collect()
            } else {
                let (c, _) = linear_convolution(&a, &b);
                (lo..=hi).map(|eta| c[(eta - start) as usize] * w.eval(eta) * t.coeff).collect()
            };
            (lo, values, window_cost.min(full_cost) * 8)
        }
        None => {
            let (mut c, flops) = linear_convolution(&a, &b);
            c.iter_mut().for_each(|z| *z *= t.coeff);
            (start, c, flops)
        }
    }
}

fn linear_convolution_cost(la: usize, lb: usize) -> u64 {
    let size = (la + lb).next_power_of_two();
    ((la * lb) as u64).min(3 * size as u64 * (size.trailing_zeros() as u64 + 1) * 5)
}

fn bilinear_fast(terms: &[SeparableTerm], h1: &SpectralFunction, h2: &SpectralFunction, out: GridSpec) -> (Vec<C64>, u64) {
    let dxi = h1.spec().dxi();
    let mut coeffs = vec![ZERO; out.num_points()];
    let mut flops = 0;
    for chunk in terms.chunks(TERM_CHUNK) {
        let parts: Vec<_> = chunk.par_iter().map(|t| term_contribution(t, h1, h2)).collect();
        // Summed in term order so the result does not depend on the schedule.
        for (start, values, f) in parts {
            flops += f;
            for (i, v) in values.into_iter().enumerate() {
                coeffs[out_slot(out, start + i as i64)] += v * dxi;
            }
        }
    }
    (coeffs, flops)
}

/// `T_m(f1, f2, f3)` with `T^(eta) = dxi^2 sum_{xi1 + xi2 + xi3 = eta} m prod f_j^`.
pub fn apply_trilinear(
    m: &Symbol3,
    f1: &GridFunction,
    f2: &GridFunction,
    f3: &GridFunction,
    path: Path,
    grid: OutputGrid,
) -> Result<OperatorResult, OperatorError> {
    let spec = m.spec();
    same_spec(spec, &[f1, f2, f3])?;
    let out = grid.spec_for(spec)?;
    let hs = [dft(f1), dft(f2), dft(f3)];
    let (coeffs, flops) = match path {
        Path::Oracle => trilinear_oracle(m, &hs, out)?,
        Path::FftFast => match m.repr() {
            Symbol3Repr::Tensor(a1, a2) => trilinear_slices(a1, a2, &hs, out)?,
            Symbol3Repr::Constant(c) => {
                let one = Symbol2::constant(spec, *c);
                let unit = Symbol2::constant(spec, C64::new(1.0, 0.0));
                trilinear_slices(&one, &unit, &hs, out)?
            }
            _ => return Err(OperatorError::NotFactorable),
        },
    };
    let output = idft(&SpectralFunction::new(out, coeffs)?);
    Ok(OperatorResult { output, path_used: path, flop_estimate: flops })
}

fn trilinear_oracle(m: &Symbol3, hs: &[SpectralFunction; 3], out: GridSpec) -> Result<(Vec<C64>, u64), OperatorError> {
    let spec = m.spec();
    let n = spec.num_points();
    if n > TRILINEAR_ORACLE_MAX {
        return Err(OperatorError::OracleTooLarge { n, limit: TRILINEAR_ORACLE_MAX });
    }
    let dense = match m.repr() {
        Symbol3Repr::Dense(_) => m.clone(),
        _ => m.densified()?,
    };
    let Symbol3Repr::Dense(values) = dense.repr() else {
        unreachable!("densified symbols are dense")
    };
    let dxi = spec.dxi();
    let lo = spec.min_freq();
    let hi = spec.max_freq();
    let n_out = out.num_points() as i64;
    let coeffs = (0..out.num_points())
        .into_par_iter()
        .map(|slot| {
            let eta = out.freq_of_slot(slot);
            let mut acc = ZERO;
            for s1 in 0..n {
                let a = hs[0].coeffs()[s1];
                if a == ZERO {
                    continue;
                }
                for s2 in 0..n {
                    let b = hs[1].coeffs()[s2];
                    if b == ZERO {
                        continue;
                    }
                    let base = eta - (lo + s1 as i64) - (lo + s2 as i64);
                    let mut k3 = base + ceil_div(lo - base, n_out) * n_out;
                    while k3 <= hi {
                        let s3 = (k3 - lo) as usize;
                        acc += values[(s1 * n + s2) * n + s3] * a * b * hs[2].coeffs()[s3];
                        k3 += n_out;
                    }
                }
            }
            acc * dxi * dxi
        })
        .collect();
    Ok((coeffs, (n * n * n) as u64 * 8))
}

/// Slice path: for each `xi2`, convolve `a1(., xi2) f1^` with `a2(xi2, .) f3^`.
fn trilinear_slices(
    a1: &Symbol2,
    a2: &Symbol2,
    hs: &[SpectralFunction; 3],
    out: GridSpec,
) -> Result<(Vec<C64>, u64), OperatorError> {
    let spec = a1.spec();
    let n = spec.num_points();
    let v1 = a1.dense_values()?;
    let v2 = a2.dense_values()?;
    let lo = spec.min_freq();
    let dxi = spec.dxi();
    let mut coeffs = vec![ZERO; out.num_points()];
    let mut flops = 0;
    let slots: Vec<usize> = (0..n).filter(|&s| hs[1].coeffs()[s] != ZERO).collect();
    for chunk in slots.chunks(TERM_CHUNK) {
        let parts: Vec<_> = chunk
            .par_iter()
            .map(|&s2| {
                let g: Vec<C64> = (0..n).map(|s1| v1[s1 * n + s2] * hs[0].coeffs()[s1]).collect();
                let h: Vec<C64> = (0..n).map(|s3| v2[s2 * n + s3] * hs[2].coeffs()[s3]).collect();
                let (c, f) = linear_convolution(&g, &h);
                (s2, c, f)
            })
            .collect();
        for (s2, c, f) in parts {
            flops += f;
            let k2 = lo + s2 as i64;
            let w = hs[1].coeffs()[s2] * dxi * dxi;
            for (i, v) in c.into_iter().enumerate() {
                coeffs[out_slot(out, 2 * lo + i as i64 + k2)] += v * w;
            }
        }
    }
    Ok((coeffs, flops))
}

/// `sup_c |T_{m 1_{xi2 < xi1 < c}}(f1, f2)(x)|` over half-integer cutoffs `c`.
pub fn apply_maximal_bicarleson(
    m: &Symbol2,
    f1: &GridFunction,
    f2: &GridFunction,
    grid: OutputGrid,
) -> Result<OperatorResult, OperatorError> {
    let spec = m.spec();
    same_spec(spec, &[f1, f2])?;
    let out = grid.spec_for(spec)?;
    let h1 = dft(f1);
    let h2 = dft(f2);
    let dxi = spec.dxi();
    let mut running = vec![ZERO; out.num_points()];
    let mut best = vec![0.0f64; out.num_points()];
    let mut flops = 0u64;
    for k1 in spec.freqs() {
        let a = h1.at(k1);
        if a == ZERO {
            continue;
        }
        let mut row = SpectralFunction::zeros(out);
        let mut any = false;
        for k2 in spec.min_freq()..k1 {
            let b = h2.at(k2);
            if b != ZERO {
                row.coeffs_mut()[out_slot(out, k1 + k2)] += m.eval(k1, k2) * a * b * dxi;
                any = true;
            }
        }
        if !any {
            continue;
        }
        let contribution = idft(&row);
        for ((r, b), c) in running.iter_mut().zip(best.iter_mut()).zip(contribution.samples()) {
            *r += c;
            *b = b.max(r.norm());
        }
        flops += out.num_points() as u64 * 5 * (out.num_points().trailing_zeros() as u64 + 1) + spec.num_points() as u64;
    }
    let output = GridFunction::new(out, best.into_iter().map(|b| C64::new(b, 0.0)).collect())?;
    Ok(OperatorResult { output, path_used: Path::FftFast, flop_estimate: flops })
}

/// `int g f dx` for `g` on the output grid and `f` on the input lattice.
fn pair_with(g: &GridFunction, f: &GridFunction) -> C64 {
    let gh = dft(g);
    let fh = dft(f);
    let dxi = f.spec().dxi();
    fh.iter().map(|(k, c)| c * gh.at(-k)).sum::<C64>() * dxi
}

/// `Lambda(f1, f2, f3) = int T_m(f1, f2) f3 dx`.
pub fn dual_form(m: &Symbol2, f1: &GridFunction, f2: &GridFunction, f3: &GridFunction, path: Path) -> Result<C64, OperatorError> {
    same_spec(m.spec(), &[f3])?;
    let t = apply_bilinear(m, f1, f2, path, OutputGrid::default())?;
    Ok(pair_with(&t.output, f3))
}

/// `Lambda(f1, f2, f3, f4) = int T_m(f1, f2, f3) f4 dx`.
pub fn dual_form_trilinear(
    m: &Symbol3,
    fs: [&GridFunction; 4],
    path: Path,
) -> Result<C64, OperatorError> {
    same_spec(m.spec(), &[fs[3]])?;
    let t = apply_trilinear(m, fs[0], fs[1], fs[2], path, OutputGrid::default())?;
    Ok(pair_with(&t.output, fs[3]))
}

/// Largest pointwise discrepancy between two outputs.
pub fn max_discrepancy(a: &GridFunction, b: &GridFunction) -> Result<f64, OperatorError> {
    Ok(a.sub(b)?.max_abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbols::{build_mikhlin_symbol, tensor_symbol};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(n: usize) -> GridSpec {
        GridSpec::new(n, 1.0).unwrap()
    }

    fn random_poly(spec: GridSpec, seed: u64) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GridFunction::from_index_fn(spec, |_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn constant_symbol_is_pointwise_product() {
        let s = spec(32);
        let f1 = random_poly(s, 1);
        let f2 = random_poly(s, 2);
        let one = Symbol2::constant(s, C64::new(1.0, 0.0));
        for path in [Path::Oracle, Path::FftFast] {
            let t = apply_bilinear(&one, &f1, &f2, path, OutputGrid::Padded(2)).unwrap();
            // Exact product of the two trigonometric polynomials, sampled finer.
            let fine = t.output.spec();
            let up1 = idft(&dft(&f1).resample(fine).unwrap());
            let up2 = idft(&dft(&f2).resample(fine).unwrap());
            let prod = up1.mul(&up2).unwrap();
            assert!(max_discrepancy(&t.output, &prod).unwrap() < 1e-10);
        }
    }

    #[test]
    fn sgn_symbol_on_tones() {
        let s = spec(16);
        let f = GridFunction::tone(s, 1);
        let t = apply_bilinear(&Symbol2::sgn_sum(s), &f, &f, Path::Oracle, OutputGrid::Padded(1)).unwrap();
        let expected = GridFunction::tone(s, 2);
        assert!(max_discrepancy(&t.output, &expected).unwrap() < 1e-12);
        assert_eq!(
            apply_bilinear(&Symbol2::sgn_sum(s), &f, &f, Path::FftFast, OutputGrid::Padded(1)),
            Err(OperatorError::NotFactorable)
        );
    }

    #[test]
    fn fast_matches_oracle_on_mikhlin_symbol() {
        let s = spec(64);
        let m = build_mikhlin_symbol(5, 2, s).unwrap();
        let f1 = random_poly(s, 3);
        let f2 = random_poly(s, 4);
        let a = apply_bilinear(&m, &f1, &f2, Path::Oracle, OutputGrid::default()).unwrap();
        let b = apply_bilinear(&m, &f1, &f2, Path::FftFast, OutputGrid::default()).unwrap();
        assert!(max_discrepancy(&a.output, &b.output).unwrap() < 1e-10);
    }

    #[test]
    fn trilinear_sign_example() {
        let s = spec(16);
        let sg = tensor_symbol(&Symbol2::sgn_sum(s), &Symbol2::sgn_sum(s)).unwrap();
        let (f1, f2, f3) = (GridFunction::tone(s, 1), GridFunction::tone(s, 2), GridFunction::tone(s, -3));
        for path in [Path::Oracle, Path::FftFast] {
            let t = apply_trilinear(&sg, &f1, &f2, &f3, path, OutputGrid::default()).unwrap();
            assert!(t.output.samples().iter().all(|z| (z + 1.0).norm() < 1e-10), "{path:?}");
        }
    }

    #[test]
    fn trilinear_oracle_size_limit() {
        let s = spec(256);
        let f = GridFunction::zeros(s);
        let one = Symbol3::constant(s, C64::new(1.0, 0.0));
        assert!(matches!(
            apply_trilinear(&one, &f, &f, &f, Path::Oracle, OutputGrid::default()),
            Err(OperatorError::OracleTooLarge { .. })
        ));
    }

    #[test]
    fn maximal_examples() {
        let s = spec(16);
        let one = Symbol2::constant(s, C64::new(1.0, 0.0));
        let f1 = GridFunction::tone(s, 3);
        let f2 = GridFunction::tone(s, 1);
        let m = apply_maximal_bicarleson(&one, &f1, &f2, OutputGrid::Padded(2)).unwrap();
        assert!(m.output.samples().iter().all(|z| (z.re - 1.0).abs() < 1e-12));
        let zero = apply_maximal_bicarleson(&one, &f1, &GridFunction::zeros(s), OutputGrid::Padded(2)).unwrap();
        assert!(zero.output.max_abs() == 0.0);
    }

    #[test]
    fn dual_form_orthogonality() {
        let s = spec(16);
        let one = Symbol2::constant(s, C64::new(1.0, 0.0));
        let f = GridFunction::tone(s, 2);
        let lam = dual_form(&one, &f, &f, &GridFunction::tone(s, 1), Path::Oracle).unwrap();
        assert!(lam.norm() < 1e-12);
        let lam = dual_form(&one, &f, &f, &GridFunction::tone(s, -4), Path::Oracle).unwrap();
        assert!((lam - C64::new(1.0, 0.0)).norm() < 1e-12);
    }
}
