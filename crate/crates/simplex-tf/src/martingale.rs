//! Equal-mass dyadic partitions of frequency space and the associated projections.

use std::collections::HashSet;

use thiserror::Error;

use crate::grid::{dft, idft, GridFunction, SpectralFunction, C64};

/// Deepest refinement level accepted by [`martingale_cells`].
pub const MAX_LEVEL: u32 = 40;
/// Coefficients below this fraction of the largest one are transform roundoff.
pub const ROUNDOFF_FLOOR: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MartingaleError {
    #[error("function has no spectral mass")]
    ZeroFunction,
    #[error("mass exponent must be positive and finite, got {0}")]
    BadExponent(f64),
    #[error("refinement level {0} exceeds {MAX_LEVEL}")]
    LevelTooDeep(u32),
    #[error("frequency bands overlap at {0}")]
    OverlappingBands(i64),
}

/// Normalised cumulative `|f^|^q` mass along the frequency axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MassProfile {
    pub source: SpectralFunction,
    pub exponent: f64,
    /// Frequencies carrying positive mass, increasing.
    pub freqs: Vec<i64>,
    /// Normalised mass of each retained frequency.
    pub masses: Vec<f64>,
    /// `cumulative[i]` is the mass strictly below `freqs[i]`; a final entry holds the total.
    pub cumulative: Vec<f64>,
}

impl MassProfile {
    /// Cumulative mass through lattice frequency `k` (inclusive).
    pub fn at(&self, k: i64) -> f64 {
        let idx = self.freqs.partition_point(|&f| f <= k);
        self.cumulative[idx]
    }

    pub fn max_atom(&self) -> f64 {
        self.masses.iter().copied().fold(0.0, f64::max)
    }
}

/// `gamma(k) = sum_{j <= k} |f^(j)|^q / sum_j |f^(j)|^q`; frequencies at roundoff level are dropped.
pub fn distribution_function(f: &GridFunction, mass_exponent: f64) -> Result<MassProfile, MartingaleError> {
    if !(mass_exponent.is_finite() && mass_exponent > 0.0) {
        return Err(MartingaleError::BadExponent(mass_exponent));
    }
    let source = dft(f);
    let floor = ROUNDOFF_FLOOR * source.iter().map(|(_, c)| c.norm()).fold(0.0, f64::max);
    let (freqs, raw): (Vec<i64>, Vec<f64>) = source
        .iter()
        .filter(|(_, c)| c.norm() > floor)
        .map(|(k, c)| (k, c.norm().powf(mass_exponent)))
        .unzip();
    let total: f64 = raw.iter().sum();
    if total == 0.0 || !total.is_finite() {
        return Err(MartingaleError::ZeroFunction);
    }
    let masses: Vec<f64> = raw.iter().map(|m| m / total).collect();
    let mut cumulative = Vec::with_capacity(masses.len() + 1);
    let mut acc = 0.0;
    cumulative.push(0.0);
    for m in &masses {
        acc += m;
        cumulative.push(acc);
    }
    // Pin the last entry against rounding.
    *cumulative.last_mut().expect("nonempty") = 1.0;
    Ok(MassProfile { source, exponent: mass_exponent, freqs, masses, cumulative })
}

/// One cell `E^m_k` with its left and right halves.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub level: u32,
    pub index: u64,
    pub support: Vec<i64>,
    pub left_half: Vec<i64>,
    pub right_half: Vec<i64>,
    pub mass: f64,
    pub left_mass: f64,
    pub right_mass: f64,
}

impl Cell {
    /// Over-refined cell with no atoms.
    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }
}

/// Dyadic cell of an atom: by the cumulative mass at its left end, last cell closed.
fn cell_index(start: f64, level: u32) -> u64 {
    let cells = 1u64 << level;
    ((start * cells as f64).floor() as u64).min(cells - 1)
}

/// The `2^m` cells `gamma^{-1}([2^-m k, 2^-m (k+1)))` with halves from level `m + 1`.
pub fn martingale_cells(profile: &MassProfile, level: u32) -> Result<Vec<Cell>, MartingaleError> {
    if level > MAX_LEVEL {
        return Err(MartingaleError::LevelTooDeep(level));
    }
    let count = 1usize << level;
    let mut cells: Vec<Cell> = (0..count as u64)
        .map(|index| Cell {
            level,
            index,
            support: Vec::new(),
            left_half: Vec::new(),
            right_half: Vec::new(),
            mass: 0.0,
            left_mass: 0.0,
            right_mass: 0.0,
        })
        .collect();
    for (i, (&k, &m)) in profile.freqs.iter().zip(&profile.masses).enumerate() {
        let start = profile.cumulative[i];
        let cell = &mut cells[cell_index(start, level) as usize];
        cell.support.push(k);
        cell.mass += m;
        if cell_index(start, level + 1).is_multiple_of(2) {
            cell.left_half.push(k);
            cell.left_mass += m;
        } else {
            cell.right_half.push(k);
            cell.right_mass += m;
        }
    }
    Ok(cells)
}

/// `f * (1_E)^vee`: exact restriction of the spectrum to `freq_set`.
pub fn cell_project(f: &GridFunction, freq_set: &[i64]) -> GridFunction {
    let h = dft(f);
    let keep: HashSet<i64> = freq_set.iter().copied().collect();
    idft(&h.map_with_freq(|k, c| if keep.contains(&k) { c } else { C64::new(0.0, 0.0) }))
}

/// `(sum_b |f * (1_{E_b})^vee|^2)^{1/2}` over pairwise disjoint bands.
pub fn square_function(f: &GridFunction, bands: &[Vec<i64>]) -> Result<GridFunction, MartingaleError> {
    let mut seen = HashSet::new();
    for band in bands {
        for &k in band {
            if !seen.insert(k) {
                return Err(MartingaleError::OverlappingBands(k));
            }
        }
    }
    let mut acc = vec![0.0f64; f.samples().len()];
    for band in bands {
        let p = cell_project(f, band);
        acc.iter_mut().zip(p.samples()).for_each(|(a, z)| *a += z.norm_sqr());
    }
    Ok(GridFunction::new(f.spec(), acc.into_iter().map(|a| C64::new(a.sqrt(), 0.0)).collect())
        .expect("lengths match"))
}

/// Square function over the level-`m` cells of `profile`.
pub fn cell_square_function(f: &GridFunction, profile: &MassProfile, level: u32) -> Result<GridFunction, MartingaleError> {
    let bands: Vec<Vec<i64>> = martingale_cells(profile, level)?.into_iter().map(|c| c.support).collect();
    square_function(f, &bands)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{lp_norm, GridSpec};

    fn spec() -> GridSpec {
        GridSpec::new(64, 1.0).unwrap()
    }

    #[test]
    fn uniform_band_gives_linear_ramp() {
        let s = spec();
        let hat = SpectralFunction::from_freq_fn(s, |k| if (0..16).contains(&k) { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
        let prof = distribution_function(&idft(&hat), 2.0).unwrap();
        for k in 0..16 {
            assert!((prof.at(k) - (k + 1) as f64 / 16.0).abs() < 1e-12);
        }
        let cells = martingale_cells(&prof, 1).unwrap();
        assert_eq!(cells[0].support, (0..8).collect::<Vec<_>>());
        assert_eq!(cells[1].support, (8..16).collect::<Vec<_>>());
    }

    #[test]
    fn spike_gives_step() {
        let s = spec();
        let prof = distribution_function(&GridFunction::tone(s, 5), 2.0).unwrap();
        assert_eq!(prof.at(4), 0.0);
        assert_eq!(prof.at(5), 1.0);
        let cells = martingale_cells(&prof, 2).unwrap();
        assert_eq!(cells.iter().filter(|c| c.is_empty()).count(), 3);
    }

    #[test]
    fn zero_function_rejected() {
        assert_eq!(distribution_function(&GridFunction::zeros(spec()), 2.0), Err(MartingaleError::ZeroFunction));
    }

    #[test]
    fn level_zero_is_whole_support() {
        let s = spec();
        let f = GridFunction::from_fn(s, |x| C64::new((2.0 * std::f64::consts::PI * x).cos() + 0.3, 0.0));
        let prof = distribution_function(&f, 1.5).unwrap();
        let cells = martingale_cells(&prof, 0).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].support, prof.freqs);
    }

    #[test]
    fn projections_and_square_function() {
        let s = spec();
        let f = GridFunction::from_fn(s, |x| C64::new((6.0 * x).sin(), (3.0 * x).cos()));
        let all: Vec<i64> = s.freqs().collect();
        assert!(cell_project(&f, &all).sub(&f).unwrap().max_abs() < 1e-12);
        let (a, b): (Vec<i64>, Vec<i64>) = all.iter().partition(|k| *k % 3 == 0);
        let sum = cell_project(&f, &a).add(&cell_project(&f, &b)).unwrap();
        assert!(sum.sub(&f).unwrap().max_abs() < 1e-12);
        let sq = square_function(&f, &[a.clone(), b.clone()]).unwrap();
        assert!((lp_norm(&sq, 2.0).unwrap() - lp_norm(&f, 2.0).unwrap()).abs() < 1e-10);
        assert!(square_function(&f, &[a.clone(), a]).is_err());
    }

    #[test]
    fn tone_square_function_is_constant() {
        let s = spec();
        let f = GridFunction::tone(s, 3).scale(C64::new(2.0, 0.0));
        let bands: Vec<Vec<i64>> = s.freqs().map(|k| vec![k]).collect();
        let sq = square_function(&f, &bands).unwrap();
        assert!(sq.samples().iter().all(|z| (z.re - 2.0).abs() < 1e-12));
    }
}
