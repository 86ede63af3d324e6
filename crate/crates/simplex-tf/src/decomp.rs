//! Sizes, energies, maximal intervals, exceptional sets, stopping-time
//! decompositions, model forms and the Taylor split of the main model.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{dft, hl_maximal, GridError, GridFunction, GridSpec, SpectralFunction, C64};
use crate::profile::{bump_deriv, plateau};
use crate::tiles::{
    check_rank1, chi_tilde, packet_spectrum, split_strongly_disjoint, strongly_disjoint_pair, tile_le, top_order,
    DyadicInterval, Shift, TileConfig, TileError, Tree, TriTile,
};

/// Deepest size level before the floor bucket.
pub const DEFAULT_SIZE_LEVELS: i32 = 12;
/// Shallowest size level tried by the stopping time.
pub const MIN_SIZE_LEVEL: i32 = -4;
/// Threshold constant of the exceptional set.
pub const DEFAULT_OMEGA_CONSTANT: f64 = 32.0;
/// Budget for every energy ratio.
pub const DEFAULT_ENERGY_BUDGET: f64 = 64.0;
/// Default truncation `|lambda| <= 32` of the remainder series.
pub const DEFAULT_LAMBDA_TRUNCATION: i64 = 32;
/// Samples per period when computing remainder coefficients.
pub const REMAINDER_SAMPLES: usize = 512;
/// Decay order of the approximate indicators `1~_I`.
pub const DEFAULT_TOY_DECAY: i32 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecompError {
    #[error("universe is empty")]
    EmptyUniverse,
    #[error("size index {0} is not in 1..=4")]
    BadIndex(usize),
    #[error("universe is not rank one: pair ({0}, {1}) breaks clause {2}")]
    NotRankOne(usize, usize, u8),
    #[error("universe mixes time scales; expected all |I| = 1")]
    MixedScales,
    #[error("scale gap {k0} puts time intervals below the grid spacing")]
    TooFine { k0: u32 },
    #[error("lambda truncation {0} must be at least 1")]
    BadTruncation(i64),
    #[error("theta {0:?} outside the admissible region")]
    InadmissibleTheta([f64; 3]),
    #[error("tree family {0} fails strong disjointness")]
    InvalidCertificate(usize),
    #[error("period and spacing must be powers of two for dyadic intervals")]
    NonDyadicGrid,
    #[error("set lives on a different grid")]
    SpecMismatch,
    #[error(transparent)]
    Tile(#[from] TileError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Subset of the spatial lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialSet {
    spec: GridSpec,
    members: Vec<bool>,
}

impl SpatialSet {
    pub fn new(spec: GridSpec, members: Vec<bool>) -> Result<Self, DecompError> {
        if members.len() != spec.num_points() {
            return Err(DecompError::SpecMismatch);
        }
        Ok(Self { spec, members })
    }

    pub fn full(spec: GridSpec) -> Self {
        Self { spec, members: vec![true; spec.num_points()] }
    }

    pub fn empty(spec: GridSpec) -> Self {
        Self { spec, members: vec![false; spec.num_points()] }
    }

    /// Union of half-open periodic intervals `[a, b)`.
    pub fn from_intervals(spec: GridSpec, intervals: &[(f64, f64)]) -> Self {
        let l = spec.period();
        let members = (0..spec.num_points())
            .map(|i| {
                let x = spec.x(i);
                intervals.iter().any(|&(a, b)| (x - a).rem_euclid(l) < b - a)
            })
            .collect();
        Self { spec, members }
    }

    /// Union of `pieces` random intervals covering roughly `fraction` of the torus.
    pub fn random_union(spec: GridSpec, rng: &mut impl Rng, pieces: usize, fraction: f64) -> Self {
        let l = spec.period();
        let len = fraction * l / pieces as f64;
        let intervals: Vec<(f64, f64)> = (0..pieces)
            .map(|_| {
                let a = rng.gen_range(0.0..l);
                (a, a + len)
            })
            .collect();
        let set = Self::from_intervals(spec, &intervals);
        if set.measure() == 0.0 {
            Self::from_intervals(spec, &[(0.0, spec.dx())])
        } else {
            set
        }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members[i]
    }

    pub fn members(&self) -> &[bool] {
        &self.members
    }

    pub fn measure(&self) -> f64 {
        self.members.iter().filter(|&&m| m).count() as f64 * self.spec.dx()
    }

    pub fn indicator(&self) -> GridFunction {
        GridFunction::from_index_fn(self.spec, |i| C64::new(if self.members[i] { 1.0 } else { 0.0 }, 0.0))
    }

    pub fn union(&self, other: &Self) -> Self {
        let members = self.members.iter().zip(&other.members).map(|(a, b)| *a || *b).collect();
        Self { spec: self.spec, members }
    }

    pub fn minus(&self, other: &Self) -> Self {
        let members = self.members.iter().zip(&other.members).map(|(a, b)| *a && !*b).collect();
        Self { spec: self.spec, members }
    }

    /// `f` restricted to the set.
    pub fn restrict(&self, f: &GridFunction) -> GridFunction {
        GridFunction::from_index_fn(self.spec, |i| if self.members[i] { f.samples()[i] } else { C64::new(0.0, 0.0) })
    }

    /// Lattice points where `f` is nonzero.
    pub fn support_of(f: &GridFunction) -> Self {
        Self { spec: f.spec(), members: f.samples().iter().map(|z| z.norm() > 0.0).collect() }
    }
}

/// A function together with its spectrum, paired against packets on the band only.
#[derive(Debug, Clone)]
pub struct Field {
    hat: SpectralFunction,
}

impl Field {
    pub fn new(f: &GridFunction) -> Self {
        Self { hat: dft(f) }
    }

    pub fn spec(&self) -> GridSpec {
        self.hat.spec()
    }

    /// `<f, Phi> = sum f^(k) conj(Phi^(k)) dxi`.
    pub fn pair(&self, packet: &[(i64, C64)]) -> C64 {
        packet.iter().map(|&(k, c)| self.hat.at(k) * c.conj()).sum::<C64>() * self.spec().dxi()
    }

    /// Pairing with the packet on time interval `time` and frequency band centred at `freq_center`.
    pub fn coefficient(&self, time: &DyadicInterval, freq_center: f64) -> Result<C64, DecompError> {
        let spectrum = packet_spectrum(self.spec(), time.center_f64(), time.len_f64(), freq_center, 0)?;
        Ok(self.pair(&spectrum))
    }

    /// `<f, Phi_{P_j}>` for every tri-tile.
    pub fn table(&self, universe: &[TriTile], j: usize) -> Result<Vec<C64>, DecompError> {
        universe
            .par_iter()
            .map(|p| self.coefficient(&p.time, p.freqs[j - 1].center_f64()))
            .collect()
    }

    pub fn hat(&self) -> &SpectralFunction {
        &self.hat
    }
}

/// Tree type used when measuring size `j`: the first slot other than `j`.
pub fn default_tree_type(j: usize) -> usize {
    if j == 1 {
        2
    } else {
        1
    }
}

/// `P <= Q` in slot `t` for every ordered pair, row `p`, column `q`.
#[derive(Debug, Clone)]
pub struct OrderMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl OrderMatrix {
    pub fn new(universe: &[TriTile], t: usize) -> Self {
        let n = universe.len();
        let bits = (0..n * n)
            .into_par_iter()
            .map(|idx| tile_le(&universe[idx / n].component(t), &universe[idx % n].component(t)))
            .collect();
        Self { n, bits }
    }

    pub fn le(&self, p: usize, q: usize) -> bool {
        self.bits[p * self.n + q]
    }
}

/// Sup-over-trees size and the tree achieving it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub j: usize,
    pub value: f64,
    pub tree: Option<Tree>,
}

fn tree_energy(coeffs: &[C64], members: impl Iterator<Item = usize>) -> f64 {
    members.map(|p| coeffs[p].norm_sqr()).sum()
}

/// `(sum_{P in T} |a_P|^2 / |I_T|)^{1/2}` for explicit members.
pub fn tree_functional(coeffs: &[C64], top: &TriTile, members: &[usize]) -> f64 {
    (tree_energy(coeffs, members.iter().copied()) / top.time.len_f64()).sqrt()
}

fn interval_ok(top: &TriTile, constraint: Option<&[DyadicInterval]>) -> bool {
    constraint.is_none_or(|fam| fam.iter().any(|i| top.time.span().subset_of(i.span())))
}

/// Size `j` in `1..=3` by enumerating tops of trees of type `tree_type`, or the
/// averaged size `j = 4` of `|f|` against `1~_I`.
pub fn size_j(
    universe: &[TriTile],
    field: &Field,
    f: &GridFunction,
    j: usize,
    tree_type: usize,
    constraint: Option<&[DyadicInterval]>,
) -> Result<SizeReport, DecompError> {
    if universe.is_empty() {
        return Err(DecompError::EmptyUniverse);
    }
    match j {
        1..=3 => {
            let coeffs = field.table(universe, j)?;
            let order = OrderMatrix::new(universe, tree_type);
            Ok(size_from_table(universe, &coeffs, &order, j, tree_type, constraint))
        }
        4 => {
            let value = universe
                .iter()
                .filter(|p| interval_ok(p, constraint))
                .map(|p| smooth_average(f, &p.time, DEFAULT_TOY_DECAY))
                .fold(0.0, f64::max);
            Ok(SizeReport { j, value, tree: None })
        }
        _ => Err(DecompError::BadIndex(j)),
    }
}

/// Top-enumeration size on precomputed coefficients.
pub fn size_from_table(
    universe: &[TriTile],
    coeffs: &[C64],
    order: &OrderMatrix,
    j: usize,
    tree_type: usize,
    constraint: Option<&[DyadicInterval]>,
) -> SizeReport {
    let mut best: Option<(f64, usize)> = None;
    for t in 0..universe.len() {
        if !interval_ok(&universe[t], constraint) {
            continue;
        }
        let e = tree_energy(coeffs, (0..universe.len()).filter(|&p| order.le(p, t)));
        let v = (e / universe[t].time.len_f64()).sqrt();
        let better = match best {
            None => true,
            Some((bv, bt)) => {
                v > bv || (v == bv && top_order(&universe[t], &universe[bt], tree_type) == std::cmp::Ordering::Less)
            }
        };
        if better {
            best = Some((v, t));
        }
    }
    match best {
        None => SizeReport { j, value: 0.0, tree: None },
        Some((value, t)) => {
            let members = (0..universe.len()).filter(|&p| order.le(p, t)).map(|p| universe[p]).collect();
            SizeReport { j, value, tree: Some(Tree { j: tree_type, top: universe[t], members }) }
        }
    }
}

/// `(1/|I|) int |f| 1~_I` with `1~_I = chi~_I^{-decay}`.
pub fn smooth_average(f: &GridFunction, interval: &DyadicInterval, decay: i32) -> f64 {
    let spec = f.spec();
    let (c, len) = (interval.center_f64(), interval.len_f64());
    f.samples()
        .iter()
        .enumerate()
        .map(|(i, z)| z.norm() * chi_tilde(spec.x(i), c, len, spec.period()).powi(-decay))
        .sum::<f64>()
        * spec.dx()
        / len
}

/// `<1~_I, 1~_J>` on the grid.
pub fn smooth_overlap(spec: GridSpec, a: &DyadicInterval, b: &DyadicInterval, decay: i32) -> f64 {
    let l = spec.period();
    (0..spec.num_points())
        .map(|i| {
            let x = spec.x(i);
            chi_tilde(x, a.center_f64(), a.len_f64(), l).powi(-decay) * chi_tilde(x, b.center_f64(), b.len_f64(), l).powi(-decay)
        })
        .sum::<f64>()
        * spec.dx()
}

fn dyadic_exponent(v: f64) -> Option<i32> {
    let r = v.log2().round();
    ((r - v.log2()).abs() < 1e-12 && v > 0.0).then_some(r as i32)
}

/// Scales usable for dyadic intervals on this grid, finest first.
pub fn dyadic_scales(spec: GridSpec) -> Result<std::ops::RangeInclusive<i32>, DecompError> {
    let lo = dyadic_exponent(spec.dx()).ok_or(DecompError::NonDyadicGrid)?;
    let hi = dyadic_exponent(spec.period()).ok_or(DecompError::NonDyadicGrid)?;
    Ok(lo..=hi)
}

fn interval_average(spec: GridSpec, prefix: &[f64], iv: &DyadicInterval) -> f64 {
    let a = (iv.left_f64() / spec.dx()).round() as usize;
    let b = a + (iv.len_f64() / spec.dx()).round() as usize;
    (prefix[b] - prefix[a]) / (b - a) as f64
}

/// Maximal dyadic intervals with `(1/|I|) int_I |f| >= threshold`, sorted left to right.
pub fn select_maximal_intervals(f: &GridFunction, threshold: f64) -> Result<Vec<DyadicInterval>, DecompError> {
    let spec = f.spec();
    let scales = dyadic_scales(spec)?;
    let mut prefix = vec![0.0];
    for z in f.samples() {
        prefix.push(prefix.last().expect("seeded") + z.norm());
    }
    let mut chosen: Vec<DyadicInterval> = Vec::new();
    for j in scales.rev() {
        let count = (spec.period() / 2f64.powi(j)).round() as i64;
        for k in 0..count {
            let iv = DyadicInterval::new(j, k, Shift::Zero)?;
            if chosen.iter().any(|c| iv.span().subset_of(c.span())) {
                continue;
            }
            if interval_average(spec, &prefix, &iv) >= threshold {
                chosen.push(iv);
            }
        }
    }
    chosen.sort_by_key(|iv| iv.span().lo);
    Ok(chosen)
}

/// Maximal-interval families for thresholds `2^-n`, `n` in `0..=n_max`.
pub fn interval_ladder(f: &GridFunction, n_max: i32) -> Result<BTreeMap<i32, Vec<DyadicInterval>>, DecompError> {
    (0..=n_max)
        .map(|n| Ok((n, select_maximal_intervals(f, 2f64.powi(-n))?)))
        .collect()
}

/// Which superlevel conditions built the set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaCondition {
    pub label: String,
    pub threshold: f64,
    pub measure: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExceptionalSet {
    pub set: SpatialSet,
    pub conditions: Vec<OmegaCondition>,
    pub measure: f64,
    /// `|E_4|`, the normalising measure.
    pub reference: f64,
    /// `|Omega| <= |E_4| / 2`.
    pub admissible: bool,
}

/// `{M1_{E1} >= C|E1|/|E4|} u {M1_{E3} >= C|E3|/|E4|} u {M f2 >= C (|E2|/|E4|)^{1/2}}`,
/// where `E2` is the support of `f2`.
pub fn build_exceptional_set(
    e1: &SpatialSet,
    e3: &SpatialSet,
    f2: &GridFunction,
    e4_measure: f64,
    c: f64,
) -> Result<ExceptionalSet, DecompError> {
    let spec = e1.spec();
    if e3.spec() != spec || f2.spec() != spec {
        return Err(DecompError::SpecMismatch);
    }
    let e2 = SpatialSet::support_of(f2).measure();
    let parts = [
        ("M1_E1", hl_maximal(&e1.indicator()), c * e1.measure() / e4_measure),
        ("M1_E3", hl_maximal(&e3.indicator()), c * e3.measure() / e4_measure),
        ("Mf2", hl_maximal(f2), c * (e2 / e4_measure).sqrt()),
    ];
    let mut set = SpatialSet::empty(spec);
    let mut conditions = Vec::new();
    for (label, m, threshold) in parts {
        let members: Vec<bool> = m.samples().iter().map(|z| z.re >= threshold).collect();
        let part = SpatialSet { spec, members };
        conditions.push(OmegaCondition { label: label.to_string(), threshold, measure: part.measure() });
        set = set.union(&part);
    }
    let measure = set.measure();
    Ok(ExceptionalSet { set, conditions, measure, reference: e4_measure, admissible: measure <= e4_measure / 2.0 })
}

/// `d` with `2^d <= 1 + dist(I, Omega^c)/|I| < 2^{d+1}`, periodic distance.
pub fn omega_depth(omega: &SpatialSet, interval: &DyadicInterval) -> u32 {
    let spec = omega.spec();
    let l = spec.period();
    let span = (interval.left_f64(), interval.left_f64() + interval.len_f64());
    let dist = (0..spec.num_points())
        .filter(|&i| !omega.contains(i))
        .map(|i| {
            let x = spec.x(i);
            let inside = |y: f64| (y - span.0).rem_euclid(l) < span.1 - span.0;
            if inside(x) {
                0.0
            } else {
                let a = (span.0 - x).rem_euclid(l);
                let b = (x - span.1).rem_euclid(l);
                a.min(b)
            }
        })
        .fold(f64::INFINITY, f64::min);
    if !dist.is_finite() {
        return 0;
    }
    (1.0 + dist / interval.len_f64()).log2().floor().max(0.0) as u32
}

/// Extracted tree with its selection level and functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedTree {
    pub tree: Tree,
    pub level: i32,
    pub value: f64,
}

/// Size stopping time: levels `MIN_SIZE_LEVEL..=n_max`, then a floor level `n_max + 1`.
/// A tree chosen at level `n` has functional in `[2^-n, 2^{-n+1})` when `n` exceeds the first level.
pub fn stopping_by_size(
    universe: &[TriTile],
    indices: &[usize],
    coeffs: &[C64],
    order: &OrderMatrix,
    tree_type: usize,
    n_max: i32,
) -> Vec<SelectedTree> {
    let mut alive: Vec<bool> = vec![false; universe.len()];
    indices.iter().for_each(|&i| alive[i] = true);
    let mut candidates: Vec<usize> = indices.to_vec();
    candidates.sort_by(|&a, &b| top_order(&universe[a], &universe[b], tree_type));
    let members_of = |t: usize, alive: &[bool]| -> Vec<usize> {
        indices.iter().copied().filter(|&p| alive[p] && order.le(p, t)).collect()
    };
    let mut out = Vec::new();
    for n in MIN_SIZE_LEVEL..=n_max + 1 {
        for &t in &candidates {
            if !alive[t] {
                continue;
            }
            let members = members_of(t, &alive);
            let len = universe[t].time.len_f64();
            let energy = tree_energy(coeffs, members.iter().copied());
            if n <= n_max && energy < 4f64.powi(-n) * len {
                continue;
            }
            members.iter().for_each(|&p| alive[p] = false);
            out.push(SelectedTree {
                tree: Tree { j: tree_type, top: universe[t], members: members.iter().map(|&p| universe[p]).collect() },
                level: n,
                value: (energy / len).sqrt(),
            });
        }
    }
    out
}

/// A family of pairwise strongly disjoint trees with a content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub trees: Vec<SelectedTree>,
    pub certificate: String,
}

fn certificate_hash(trees: &[SelectedTree]) -> String {
    let mut hasher = Sha256::new();
    for t in trees {
        hasher.update(format!("{:?}|", t.tree.top));
        let mut members: Vec<String> = t.tree.members.iter().map(|m| format!("{m:?}")).collect();
        members.sort();
        hasher.update(members.join(",").as_bytes());
        hasher.update(b";");
    }
    let digest = hasher.finalize();
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Splits selected trees into strongly disjoint families.
pub fn certify(trees: Vec<SelectedTree>, tree_type: usize) -> Vec<Family> {
    let lookup: Vec<Tree> = trees.iter().map(|t| t.tree.clone()).collect();
    let families = split_strongly_disjoint(lookup, tree_type);
    let mut pool: Vec<Option<SelectedTree>> = trees.into_iter().map(Some).collect();
    families
        .into_iter()
        .map(|fam| {
            let chosen: Vec<SelectedTree> = fam
                .iter()
                .map(|tree| {
                    let slot = pool
                        .iter_mut()
                        .find(|s| s.as_ref().is_some_and(|x| &x.tree == tree))
                        .expect("tree came from the pool");
                    slot.take().expect("present")
                })
                .collect();
            let certificate = certificate_hash(&chosen);
            Family { trees: chosen, certificate }
        })
        .collect()
}

/// Whether every pair in the family is strongly disjoint and the hash matches.
pub fn verify_family(family: &Family, tree_type: usize) -> bool {
    let ok = family.trees.iter().enumerate().all(|(a, t)| {
        family.trees[a + 1..]
            .iter()
            .all(|u| strongly_disjoint_pair(&t.tree, &u.tree, tree_type).is_none())
    });
    ok && certificate_hash(&family.trees) == family.certificate
}

/// Key `(d, n1, n4, I, n2, n3)` of a leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LevelKey {
    pub d: u32,
    pub n1: i32,
    pub n4: i32,
    pub interval: DyadicInterval,
    pub n2: i32,
    pub n3: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub key: LevelKey,
    pub families: Vec<Family>,
}

/// Size-2 trees of one `(d, n1, n4, I, n2)` group, for the energy estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyGroup {
    pub d: u32,
    pub n1: i32,
    pub n4: i32,
    pub interval: DyadicInterval,
    pub n2: i32,
    pub families: Vec<Family>,
}

impl EnergyGroup {
    pub fn total_top_length(&self) -> f64 {
        self.families.iter().flat_map(|f| &f.trees).map(|t| t.tree.top.time.len_f64()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingConfig {
    pub n_max: i32,
    pub omega_constant: f64,
    pub tree_type: usize,
    pub tiles: TileConfig,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        Self { n_max: DEFAULT_SIZE_LEVELS, omega_constant: DEFAULT_OMEGA_CONSTANT, tree_type: 1, tiles: TileConfig::default() }
    }
}

/// The four sets and the size-carrying functions of a stopping-time run.
#[derive(Debug, Clone)]
pub struct StoppingInputs {
    pub e: [SpatialSet; 4],
    pub f2: GridFunction,
    pub f3: GridFunction,
}

impl StoppingInputs {
    /// Indicators on `E2`, `E3` as the size-carrying functions.
    pub fn from_sets(e: [SpatialSet; 4]) -> Self {
        let f2 = e[1].indicator();
        let f3 = e[2].indicator();
        Self { e, f2, f3 }
    }

    pub fn measures(&self) -> [f64; 4] {
        [0, 1, 2, 3].map(|i| self.e[i].measure())
    }
}

#[derive(Debug, Clone)]
pub struct StoppingDecomposition {
    pub leaves: Vec<Leaf>,
    pub energy: Vec<EnergyGroup>,
    pub ladder1: BTreeMap<i32, Vec<DyadicInterval>>,
    pub ladder4: BTreeMap<i32, Vec<DyadicInterval>>,
    pub omega: ExceptionalSet,
    pub tree_type: usize,
    pub measures: [f64; 4],
}

impl StoppingDecomposition {
    /// Every tri-tile of every leaf, sorted.
    pub fn recombined(&self) -> Vec<TriTile> {
        let mut all: Vec<TriTile> = self
            .leaves
            .iter()
            .flat_map(|l| &l.families)
            .flat_map(|f| &f.trees)
            .flat_map(|t| t.tree.members.iter().copied())
            .collect();
        all.sort();
        all
    }

    pub fn families(&self) -> impl Iterator<Item = &Family> {
        self.leaves.iter().flat_map(|l| &l.families).chain(self.energy.iter().flat_map(|g| &g.families))
    }

    pub fn certificates_valid(&self) -> bool {
        self.families().all(|f| verify_family(f, self.tree_type))
    }
}

/// Level `n` of a tile in a maximal-interval ladder and the interval containing it.
fn ladder_level(
    ladder: &BTreeMap<i32, Vec<DyadicInterval>>,
    time: &DyadicInterval,
    floor: i32,
) -> (i32, Option<DyadicInterval>) {
    for (&n, fam) in ladder {
        if let Some(iv) = fam.iter().find(|iv| time.span().subset_of(iv.span())) {
            return (n, Some(*iv));
        }
    }
    (floor, None)
}

fn whole_torus(spec: GridSpec) -> Result<DyadicInterval, DecompError> {
    let top = *dyadic_scales(spec)?.end();
    Ok(DyadicInterval::new(top, 0, Shift::Zero)?)
}

/// Nested decomposition by `(d, n1, n4, I)`, then size-2 and size-3 stopping times.
pub fn stopping_time(
    universe: &[TriTile],
    inputs: &StoppingInputs,
    cfg: &StoppingConfig,
) -> Result<StoppingDecomposition, DecompError> {
    let rank = check_rank1(universe, &cfg.tiles);
    if let Some((a, b, c)) = rank.violation {
        return Err(DecompError::NotRankOne(a, b, c));
    }
    let spec = inputs.f2.spec();
    let measures = inputs.measures();
    let omega = build_exceptional_set(&inputs.e[0], &inputs.e[2], &inputs.f2, measures[3], cfg.omega_constant)?;
    let ladder1 = interval_ladder(&inputs.e[0].indicator(), cfg.n_max)?;
    let ladder4 = interval_ladder(&inputs.e[3].indicator(), cfg.n_max)?;
    let torus = whole_torus(spec)?;
    let t = cfg.tree_type;
    let a2 = Field::new(&inputs.f2).table(universe, 2)?;
    let a3 = Field::new(&inputs.f3).table(universe, 3)?;
    let order = OrderMatrix::new(universe, t);

    let mut groups: BTreeMap<(u32, i32, i32, DyadicInterval), Vec<usize>> = BTreeMap::new();
    for (idx, p) in universe.iter().enumerate() {
        let d = omega_depth(&omega.set, &p.time);
        let (n1, i1) = ladder_level(&ladder1, &p.time, cfg.n_max + 1);
        let (n4, i4) = ladder_level(&ladder4, &p.time, cfg.n_max + 1);
        let interval = match (i1, i4) {
            (Some(a), Some(b)) => {
                if a.span().subset_of(b.span()) {
                    a
                } else {
                    b
                }
            }
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => torus,
        };
        groups.entry((d, n1, n4, interval)).or_default().push(idx);
    }

    let mut leaves = Vec::new();
    let mut energy = Vec::new();
    for ((d, n1, n4, interval), idx) in groups {
        let level2 = stopping_by_size(universe, &idx, &a2, &order, t, cfg.n_max);
        let mut by_n2: BTreeMap<i32, Vec<SelectedTree>> = BTreeMap::new();
        for tree in level2 {
            by_n2.entry(tree.level).or_default().push(tree);
        }
        for (n2, trees) in by_n2 {
            let members: Vec<usize> = trees
                .iter()
                .flat_map(|t| &t.tree.members)
                .map(|m| universe.iter().position(|u| u == m).expect("member of universe"))
                .collect();
            let level3 = stopping_by_size(universe, &members, &a3, &order, t, cfg.n_max);
            let mut by_n3: BTreeMap<i32, Vec<SelectedTree>> = BTreeMap::new();
            for tree in level3 {
                by_n3.entry(tree.level).or_default().push(tree);
            }
            for (n3, trees3) in by_n3 {
                let key = LevelKey { d, n1, n4, interval, n2, n3 };
                leaves.push(Leaf { key, families: certify(trees3, t) });
            }
            energy.push(EnergyGroup { d, n1, n4, interval, n2, families: certify(trees, t) });
        }
    }
    Ok(StoppingDecomposition { leaves, energy, ladder1, ladder4, omega, tree_type: t, measures })
}

/// One JSON object per extracted tree.
pub fn audit_lines(decomp: &StoppingDecomposition) -> Vec<String> {
    let mut out = Vec::new();
    for leaf in &decomp.leaves {
        for (fi, fam) in leaf.families.iter().enumerate() {
            for t in &fam.trees {
                let record = serde_json::json!({
                    "d": leaf.key.d,
                    "n1": leaf.key.n1,
                    "n4": leaf.key.n4,
                    "interval": leaf.key.interval.to_string(),
                    "n2": leaf.key.n2,
                    "n3": leaf.key.n3,
                    "top": format!("{} x {:?}", t.tree.top.time, t.tree.top.freqs.map(|w| w.to_string())),
                    "members": t.tree.members.len(),
                    "size": t.value,
                    "family": fi,
                    "certificate": fam.certificate,
                });
                out.push(record.to_string());
            }
        }
    }
    out
}

/// Energy sums against each majorant for one `(d, n1, n4, n2)` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub d: u32,
    pub n1: i32,
    pub n4: i32,
    pub n2: i32,
    pub top_length: f64,
    /// `max_I sum_T |I_T| / (2^{n2} |E2| |I| / |E4|)`.
    pub local_ratio: f64,
    /// `sum |I_T| / (2^{2 n2} |E2|)`.
    pub bessel_ratio: f64,
    /// `sum |I_T| / (2^{n2} |E2|/|E4| min(2^{n1} |E1|, 2^{n4} |E4|))`.
    pub interval_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub rows: Vec<EnergyRow>,
    pub max_ratio: f64,
    pub budget: f64,
    pub within_budget: bool,
}

/// Measures every energy majorant; fails on invalid certificates.
pub fn verify_energy_estimate(decomp: &StoppingDecomposition, budget: f64) -> Result<EnergyReport, DecompError> {
    for (i, f) in decomp.energy.iter().flat_map(|g| &g.families).enumerate() {
        if !verify_family(f, decomp.tree_type) {
            return Err(DecompError::InvalidCertificate(i));
        }
    }
    let [e1, e2, _, e4] = decomp.measures;
    let mut blocks: BTreeMap<(u32, i32, i32, i32), (f64, f64)> = BTreeMap::new();
    for g in &decomp.energy {
        let s = g.total_top_length();
        let local = s / (2f64.powi(g.n2) * e2 * g.interval.len_f64() / e4);
        let entry = blocks.entry((g.d, g.n1, g.n4, g.n2)).or_insert((0.0, 0.0));
        entry.0 += s;
        entry.1 = entry.1.max(local);
    }
    let rows: Vec<EnergyRow> = blocks
        .into_iter()
        .map(|((d, n1, n4, n2), (s, local))| {
            let bessel = s / (4f64.powi(n2) * e2);
            let m = (2f64.powi(n1) * e1).min(2f64.powi(n4) * e4);
            let interval = s / (2f64.powi(n2) * e2 / e4 * m);
            EnergyRow { d, n1, n4, n2, top_length: s, local_ratio: local, bessel_ratio: bessel, interval_ratio: interval }
        })
        .collect();
    let max_ratio = rows
        .iter()
        .flat_map(|r| [r.local_ratio, r.bessel_ratio, r.interval_ratio])
        .fold(0.0, f64::max);
    Ok(EnergyReport { rows, max_ratio, budget, within_budget: max_ratio <= budget })
}

/// Dyadic bracket `n` with `2^-n <= v < 2^{-n+1}`; `None` for zero.
pub fn size_bracket(v: f64) -> Option<i32> {
    if v <= 0.0 || !v.is_finite() {
        return None;
    }
    let mut n = (-v.log2()).ceil() as i32;
    while 2f64.powi(-n) > v {
        n += 1;
    }
    while 2f64.powi(-n + 1) <= v {
        n -= 1;
    }
    Some(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackLevel {
    pub n2: i32,
    pub count: usize,
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackReport {
    pub levels: Vec<StackLevel>,
    /// `||f2^||_1`.
    pub hat_l1: f64,
    pub max_ratio: f64,
}

/// Largest number of same-level tri-tiles over one unit interval, against `2^{n2} ||f2^||_1`.
pub fn stack_count(universe: &[TriTile], f2: &GridFunction) -> Result<StackReport, DecompError> {
    if universe.iter().any(|p| p.time.scale != 0) {
        return Err(DecompError::MixedScales);
    }
    let field = Field::new(f2);
    let coeffs = field.table(universe, 2)?;
    let hat_l1 = field.hat().coeffs().iter().map(|c| c.norm()).sum::<f64>() * f2.spec().dxi();
    let mut stacks: BTreeMap<i32, HashMap<i64, usize>> = BTreeMap::new();
    for (p, a) in universe.iter().zip(&coeffs) {
        if let Some(n) = size_bracket(a.norm()) {
            *stacks.entry(n).or_default().entry(p.time.pos).or_default() += 1;
        }
    }
    let levels: Vec<StackLevel> = stacks
        .into_iter()
        .map(|(n2, per)| {
            let count = per.values().copied().max().unwrap_or(0);
            let bound = 2f64.powi(n2) * hat_l1;
            StackLevel { n2, count, bound, ratio: count as f64 / bound }
        })
        .collect();
    let max_ratio = levels.iter().map(|l| l.ratio).fold(0.0, f64::max);
    Ok(StackReport { levels, hat_l1, max_ratio })
}

/// Value of a model form with its dyadic bucket decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketedForm {
    pub total: C64,
    pub buckets: BTreeMap<[i32; 3], C64>,
}

impl BucketedForm {
    pub fn bucket_sum(&self) -> C64 {
        self.buckets.values().sum()
    }
}

/// `sum_P |I_P|^{-1} <f1, Phi_{P1}> <f2, Phi_{P2}> <f3, Phi_{P3}>` over a unit-scale universe.
pub fn model_form_scale1(
    universe: &[TriTile],
    f1: &GridFunction,
    f2: &GridFunction,
    f3: &GridFunction,
) -> Result<BucketedForm, DecompError> {
    if universe.iter().any(|p| p.time.scale != 0) {
        return Err(DecompError::MixedScales);
    }
    let tables = [f1, f2, f3]
        .iter()
        .enumerate()
        .map(|(j, f)| Field::new(f).table(universe, j + 1))
        .collect::<Result<Vec<_>, _>>()?;
    let mut total = C64::new(0.0, 0.0);
    let mut buckets: BTreeMap<[i32; 3], C64> = BTreeMap::new();
    for i in 0..universe.len() {
        let a = [tables[0][i], tables[1][i], tables[2][i]];
        let term = a[0] * a[1] * a[2] / universe[i].time.len_f64();
        total += term;
        if let [Some(n1), Some(n2), Some(n3)] = a.map(|z| size_bracket(z.norm())) {
            *buckets.entry([n1, n2, n3]).or_default() += term;
        }
    }
    Ok(BucketedForm { total, buckets })
}

/// Summation exponents `theta_1, theta_2, theta_3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta(pub [f64; 3]);

impl Theta {
    pub fn near_corner(eps: f64) -> Self {
        Theta([0.5 - eps, eps, 0.5 - eps])
    }

    /// Nonnegative, summing to at most one, with every geometric series convergent.
    pub fn validate(&self) -> Result<(), DecompError> {
        let [t1, t2, t3] = self.0;
        let ok = self.0.iter().all(|t| t.is_finite() && *t >= 0.0)
            && t1 + t2 + t3 <= 1.0 + 1e-12
            && 2.0 * t1 < 1.0
            && t2 + 2.0 * t3 < 1.0
            && t2 < 1.0;
        if ok {
            Ok(())
        } else {
            Err(DecompError::InadmissibleTheta(self.0))
        }
    }

    /// Decay rates of `n1, n2, n3` in the envelope.
    pub fn rates(&self) -> [f64; 3] {
        let [t1, t2, t3] = self.0;
        [1.0 - 2.0 * t1, 1.0 - t2 - 2.0 * t3, 1.0 - t2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub bound: f64,
    pub measured: f64,
    pub cutoffs: [i32; 3],
}

impl Envelope {
    pub fn ratio(&self) -> f64 {
        if self.measured == 0.0 {
            f64::INFINITY
        } else {
            self.bound / self.measured
        }
    }
}

/// `K sum_{n >= cutoff} 2^{-n1 r1} 2^{-n2 r2} 2^{-n3 r3} |E1|^{t1} |E2|^{t2+t3} |E3|^{t2}`
/// with cutoffs the smallest populated level per index.
pub fn summation_envelope(
    buckets: &BTreeMap<[i32; 3], f64>,
    theta: Theta,
    measures: [f64; 3],
    prefactor: f64,
) -> Result<Envelope, DecompError> {
    theta.validate()?;
    let measured: f64 = buckets.values().map(|v| v.abs()).sum();
    if buckets.is_empty() || measured == 0.0 {
        return Ok(Envelope { bound: 0.0, measured: 0.0, cutoffs: [0; 3] });
    }
    let cutoffs = [0, 1, 2].map(|i| buckets.keys().map(|k| k[i]).min().expect("nonempty"));
    let rates = theta.rates();
    let series: f64 = (0..3)
        .map(|i| 2f64.powf(-(cutoffs[i] as f64) * rates[i]) / (1.0 - 2f64.powf(-rates[i])))
        .product();
    let [t1, t2, t3] = theta.0;
    let weight = measures[0].powf(t1) * measures[1].powf(t2 + t3) * measures[2].powf(t2);
    Ok(Envelope { bound: prefactor * series * weight, measured, cutoffs })
}

/// `omega_{P2}` strongly contains `omega_{Q1}`: `3 omega_{Q1}` inside `omega_{P2}`.
pub fn strongly_contains(outer: &DyadicInterval, inner: &DyadicInterval) -> bool {
    let o = outer.span();
    let i = inner.span();
    let half = i.len() * 3;
    let c = i.lo + i.hi;
    // Doubled coordinates keep the threefold dilate integral.
    2 * o.lo <= c - half && c + half <= 2 * o.hi
}

/// Toy form, restricted form and per-distance contributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyForm {
    pub full: f64,
    pub restricted: f64,
    pub by_distance: BTreeMap<u32, f64>,
    pub pairs: usize,
}

impl ToyForm {
    pub fn tail_fraction(&self) -> f64 {
        if self.full == 0.0 {
            0.0
        } else {
            (self.full - self.restricted) / self.full
        }
    }
}

/// Dyadic distance bucket `l` with `2^l <= 1 + dist(I_P, I_Q)/|I_Q| < 2^{l+1}`.
fn distance_bucket(p: &DyadicInterval, q: &DyadicInterval, period: f64) -> u32 {
    let (a0, a1) = (p.left_f64(), p.left_f64() + p.len_f64());
    let (b0, b1) = (q.left_f64(), q.left_f64() + q.len_f64());
    let gap = |x0: f64, x1: f64, y0: f64| (y0 - x1).rem_euclid(period).min((x0 - y0).rem_euclid(period));
    let dist = if p.span().overlaps(q.span()) { 0.0 } else { gap(a0, a1, b0).min(gap(b0, b1, a0)).min((a0 - b1).rem_euclid(period)) };
    (1.0 + dist / q.len_f64()).log2().floor().max(0.0) as u32
}

/// The pairs `(Q, P)` with `|I_P| = 2^-k0 |I_Q|` and `omega_{P2}` strongly containing `omega_{Q1}`.
pub fn toy_pairs(q_universe: &[TriTile], p_universe: &[TriTile], k0: u32) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (qi, q) in q_universe.iter().enumerate() {
        for (pi, p) in p_universe.iter().enumerate() {
            if p.time.scale == q.time.scale - k0 as i32 && strongly_contains(&p.freqs[1], &q.freqs[0]) {
                out.push((qi, pi));
            }
        }
    }
    out
}

/// Per-tile coefficients entering the toy form.
struct ToyCoefficients {
    p4: Vec<f64>,
    p1: Vec<f64>,
    q2: Vec<f64>,
    q3: Vec<f64>,
}

fn toy_coefficients(
    q_universe: &[TriTile],
    p_universe: &[TriTile],
    fields: &[Field; 4],
) -> Result<ToyCoefficients, DecompError> {
    let p4 = p_universe
        .par_iter()
        .map(|p| Ok(fields[3].coefficient(&p.time, -p.freqs[0].center_f64())?.norm()))
        .collect::<Result<Vec<_>, DecompError>>()?;
    let p1 = fields[0].table(p_universe, 1)?.iter().map(|z| z.norm()).collect();
    let q2 = fields[1].table(q_universe, 1)?.iter().map(|z| z.norm()).collect();
    let q3 = fields[2].table(q_universe, 2)?.iter().map(|z| z.norm()).collect();
    Ok(ToyCoefficients { p4, p1, q2, q3 })
}

fn check_toy_resolution(spec: GridSpec, q_universe: &[TriTile], k0: u32) -> Result<(), DecompError> {
    let finest = q_universe.iter().map(|q| q.time.len_f64()).fold(f64::INFINITY, f64::min);
    if finest.is_finite() && finest * 2f64.powi(-(k0 as i32)) < 2.0 * spec.dx() {
        return Err(DecompError::TooFine { k0 });
    }
    Ok(())
}

/// Function-independent part of the toy form: pairs, overlaps and distance buckets.
#[derive(Debug, Clone)]
pub struct ToyGeometry {
    pub q_universe: Vec<TriTile>,
    pub p_universe: Vec<TriTile>,
    pub k0: u32,
    /// `(q, p, <1~_P, 1~_Q> / (|I_Q| |I_P|), I_P inside I_Q, distance bucket)`.
    pub pairs: Vec<(usize, usize, f64, bool, u32)>,
}

impl ToyGeometry {
    pub fn new(spec: GridSpec, q_universe: &[TriTile], p_universe: &[TriTile], k0: u32, decay: i32) -> Result<Self, DecompError> {
        check_toy_resolution(spec, q_universe, k0)?;
        let pairs = toy_pairs(q_universe, p_universe, k0)
            .par_iter()
            .map(|&(qi, pi)| {
                let (q, p) = (&q_universe[qi], &p_universe[pi]);
                let w = smooth_overlap(spec, &p.time, &q.time, decay) / (q.time.len_f64() * p.time.len_f64());
                (qi, pi, w, p.time.span().subset_of(q.time.span()), distance_bucket(&p.time, &q.time, spec.period()))
            })
            .collect();
        Ok(Self { q_universe: q_universe.to_vec(), p_universe: p_universe.to_vec(), k0, pairs })
    }

    /// `sum_Q sum_P |<f4,Phi_{-P1}><f1,Phi_{P1}><1~_P,1~_Q><f2,Phi_{Q1}><f3,Phi_{Q2}>| / (|I_Q||I_P|)`.
    pub fn evaluate(&self, fs: [&GridFunction; 4]) -> Result<ToyForm, DecompError> {
        let fields = fs.map(Field::new);
        let c = toy_coefficients(&self.q_universe, &self.p_universe, &fields)?;
        let mut by_distance = BTreeMap::new();
        let (mut full, mut restricted) = (0.0, 0.0);
        for &(qi, pi, w, inside, l) in &self.pairs {
            let v = c.p4[pi] * c.p1[pi] * w * c.q2[qi] * c.q3[qi];
            full += v;
            if inside {
                restricted += v;
            }
            *by_distance.entry(l).or_insert(0.0) += v;
        }
        Ok(ToyForm { full, restricted, by_distance, pairs: self.pairs.len() })
    }
}

/// One-shot toy form; see [`ToyGeometry::evaluate`].
pub fn toy_model_form(
    q_universe: &[TriTile],
    p_universe: &[TriTile],
    k0: u32,
    fs: [&GridFunction; 4],
    decay: i32,
) -> Result<ToyForm, DecompError> {
    ToyGeometry::new(fs[0].spec(), q_universe, p_universe, k0, decay)?.evaluate(fs)
}

/// P tri-tiles at scale `j_Q - k0` over `I_Q` and `spread` neighbours each side, with
/// `omega_{P2}` the interval of shift `shifts[1]` around `c(omega_{Q1})`.
pub fn nested_p_universe(q_universe: &[TriTile], k0: u32, shifts: [Shift; 3], spread: i64) -> Vec<TriTile> {
    let mut out = Vec::new();
    for q in q_universe {
        let j = q.time.scale - k0 as i32;
        let per = 1i64 << k0;
        let center = q.freqs[0].center();
        let Ok(w2) = DyadicInterval::containing(-j, shifts[1], center) else { continue };
        if !strongly_contains(&w2, &q.freqs[0]) {
            continue;
        }
        let Ok(w1) = DyadicInterval::new(-j, w2.pos - 2, shifts[0]) else { continue };
        let Ok(w3) = DyadicInterval::new(-j, w2.pos + 2, shifts[2]) else { continue };
        for k in (q.time.pos * per - spread)..(q.time.pos * per + per + spread) {
            let Ok(time) = DyadicInterval::new(j, k, Shift::Zero) else { continue };
            if let Ok(p) = TriTile::new(time, [w1, w2, w3]) {
                if !out.contains(&p) {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Implied constant of a tree estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEstimate {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub within_budget: bool,
}

/// `lhs` against `2^{2 k0} s1 s2 s3 s4 |I_T|`.
pub fn verify_tree_estimate(lhs: f64, sizes: [f64; 4], top_len: f64, k0: u32, budget: f64) -> TreeEstimate {
    let rhs = 4f64.powi(k0 as i32) * sizes.iter().product::<f64>() * top_len;
    let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
    TreeEstimate { lhs, rhs, ratio, within_budget: ratio <= budget }
}

/// Multiplier `eta^_{P2}(xi) = profile((xi - c) / |omega|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EtaProfile {
    Bump,
    /// `a + b u + c u^2` in `u = (xi - c) / |omega|`.
    Quadratic([f64; 3]),
    Constant(f64),
}

impl EtaProfile {
    /// `d`-th derivative in `xi` for a band of centre `c` and width `w`.
    pub fn deriv(&self, d: usize, c: f64, w: f64, xi: f64) -> f64 {
        let u = (xi - c) / w;
        let du = match self {
            EtaProfile::Bump => bump_deriv(d, u),
            EtaProfile::Quadratic([a, b, q]) => match d {
                0 => a + b * u + q * u * u,
                1 => b + 2.0 * q * u,
                2 => 2.0 * q,
                _ => 0.0,
            },
            EtaProfile::Constant(a) => {
                if d == 0 {
                    *a
                } else {
                    0.0
                }
            }
        };
        du / w.powi(d as i32)
    }
}

/// `eta^_omega`: one on `(9/10) omega`, supported in `2 omega`.
pub fn band_cutoff(c: f64, w: f64, xi: f64) -> f64 {
    plateau(xi, c - 0.45 * w, c + 0.45 * w, 0.55 * w)
}

/// Taylor remainder of `eta` about `c_t` times the band cutoff, as a Fourier series on
/// `[c_q - w_q, c_q + w_q)`: coefficients for `lambda = -M/2 .. M/2 - 1`.
pub fn remainder_coefficients(
    eta: EtaProfile,
    omega_p: (f64, f64),
    omega_q: (f64, f64),
    c_t: f64,
    samples: usize,
) -> Vec<(i64, C64)> {
    let (cp, wp) = omega_p;
    let (cq, wq) = omega_q;
    let period = 2.0 * wq;
    let start = cq - wq;
    let h: Vec<C64> = (0..samples)
        .map(|s| {
            let xi = start + period * s as f64 / samples as f64;
            let taylor = (0..3).map(|d| eta.deriv(d, cp, wp, c_t) * (xi - c_t).powi(d as i32) / [1.0, 1.0, 2.0][d]).sum::<f64>();
            let r = eta.deriv(0, cp, wp, xi) - taylor;
            C64::new(r * band_cutoff(cq, wq, xi), 0.0)
        })
        .collect();
    let m = samples as i64;
    (-m / 2..m / 2)
        .map(|lambda| {
            let c = h
                .iter()
                .enumerate()
                .map(|(s, v)| v * C64::from_polar(1.0, -2.0 * std::f64::consts::PI * lambda as f64 * s as f64 / samples as f64))
                .sum::<C64>()
                / samples as f64;
            (lambda, c)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRecord {
    pub scale_ratio: f64,
    pub lambda: i64,
    pub magnitude: f64,
}

/// The Taylor split of a tree form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorSplit {
    pub ia: C64,
    pub ib: [C64; 2],
    pub ic: [C64; 3],
    pub ii: C64,
    pub unsplit: C64,
    pub truncation: i64,
    pub tail_bound: f64,
    pub coefficients: Vec<CoefficientRecord>,
}

impl TaylorSplit {
    pub fn sum(&self) -> C64 {
        self.ia + self.ib.iter().sum::<C64>() + self.ic.iter().sum::<C64>() + self.ii
    }

    pub fn defect(&self) -> f64 {
        (self.sum() - self.unsplit).norm()
    }
}

/// Splits `sum_{Q in T} sum_{P in P(T)} w_{Q,P} <f2 * eta_{P2}, Phi_{Q1}>` about the
/// centre of `omega_{T1}`, recentred at each `omega_{Q1}`.
pub fn taylor_split_tree(
    tree: &Tree,
    p_universe: &[TriTile],
    fs: [&GridFunction; 4],
    eta: EtaProfile,
    truncation: i64,
    decay: i32,
) -> Result<TaylorSplit, DecompError> {
    if truncation < 1 {
        return Err(DecompError::BadTruncation(truncation));
    }
    let spec = fs[0].spec();
    let fields = fs.map(Field::new);
    let c_t = tree.top.freqs[0].center_f64();
    let zero = C64::new(0.0, 0.0);
    let mut split = TaylorSplit {
        ia: zero,
        ib: [zero; 2],
        ic: [zero; 3],
        ii: zero,
        unsplit: zero,
        truncation,
        tail_bound: 0.0,
        coefficients: Vec::new(),
    };
    let l = spec.period();
    for q in &tree.members {
        let wq1 = q.freqs[0];
        let (cq, wq) = (wq1.center_f64(), wq1.len_f64());
        let phi_q1 = packet_spectrum(spec, q.time.center_f64(), q.time.len_f64(), cq, 0)?;
        let g: Vec<(f64, C64)> =
            phi_q1.iter().map(|&(k, c)| (k as f64 / l, fields[1].hat().at(k) * c.conj() / l)).collect();
        let moment = |pw: i32| g.iter().map(|(xi, v)| v * (xi - cq).powi(pw)).sum::<C64>();
        let (m0, m1, m2) = (moment(0), moment(1), moment(2));
        let g_l1: f64 = g.iter().map(|(_, v)| v.norm()).sum();
        let a3 = fields[2].coefficient(&q.time, q.freqs[1].center_f64())?;
        for p in p_universe.iter().filter(|p| strongly_contains(&p.freqs[1], &wq1)) {
            let overlap = smooth_overlap(spec, &p.time, &q.time, decay);
            let a4 = fields[3].coefficient(&p.time, -p.freqs[0].center_f64())?;
            let a1 = fields[0].coefficient(&p.time, p.freqs[0].center_f64())?;
            let w = a4 * a1 * overlap * a3 / (q.time.len_f64() * p.time.len_f64());
            let (cp, wp) = (p.freqs[1].center_f64(), p.freqs[1].len_f64());
            let e0 = eta.deriv(0, cp, wp, c_t);
            let e1 = eta.deriv(1, cp, wp, c_t);
            let e2 = eta.deriv(2, cp, wp, c_t);
            let shift = cq - c_t;
            let unsplit = g.iter().map(|(xi, v)| v * eta.deriv(0, cp, wp, *xi)).sum::<C64>();
            let coeffs = remainder_coefficients(eta, (cp, wp), (cq, wq), c_t, REMAINDER_SAMPLES);
            let kept = coeffs
                .iter()
                .filter(|(lam, _)| lam.abs() <= truncation)
                .map(|&(lam, c)| {
                    c * g
                        .iter()
                        .map(|(xi, v)| v * C64::from_polar(1.0, 2.0 * std::f64::consts::PI * lam as f64 * (xi - (cq - wq)) / (2.0 * wq)))
                        .sum::<C64>()
                })
                .sum::<C64>();
            let tail: f64 = coeffs.iter().filter(|(lam, _)| lam.abs() > truncation).map(|(_, c)| c.norm()).sum();
            split.unsplit += w * unsplit;
            split.ia += w * e0 * m0;
            split.ib[0] += w * e1 * m1;
            split.ib[1] += w * e1 * shift * m0;
            split.ic[0] += w * 0.5 * e2 * m2;
            split.ic[1] += w * e2 * shift * m1;
            split.ic[2] += w * 0.5 * e2 * shift * shift * m0;
            split.ii += w * kept;
            split.tail_bound += w.norm() * 2.0 * tail * g_l1;
            let ratio = p.time.len_f64() / q.time.len_f64();
            split.coefficients.extend(
                coeffs
                    .iter()
                    .filter(|(lam, _)| lam.abs() <= truncation)
                    .map(|&(lambda, c)| CoefficientRecord { scale_ratio: ratio, lambda, magnitude: c.norm() }),
            );
        }
    }
    Ok(split)
}

/// `max |c^lambda| (1 + |lambda|)^decay / ratio^3` over the records.
pub fn remainder_constant(records: &[CoefficientRecord], decay: i32) -> f64 {
    records
        .iter()
        .map(|r| r.magnitude * (1.0 + r.lambda.abs() as f64).powi(decay) / r.scale_ratio.powi(3))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiles::{random_rank1_universe, UniverseParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> GridSpec {
        GridSpec::new(2048, 64.0).unwrap()
    }

    fn iv(j: i32, k: i64) -> DyadicInterval {
        DyadicInterval::new(j, k, Shift::Zero).unwrap()
    }

    fn tri(j: i32, k: i64, w: [i64; 3]) -> TriTile {
        TriTile::new(iv(j, k), w.map(|p| iv(-j, p))).unwrap()
    }

    #[test]
    fn singleton_size_is_scaled_coefficient() {
        let s = spec();
        let u = vec![tri(1, 3, [2, 6, 10])];
        let f = GridFunction::from_fn(s, |x| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * 1.25 * x));
        let field = Field::new(&f);
        let r = size_j(&u, &field, &f, 1, 2, None).unwrap();
        let a = field.coefficient(&u[0].time, u[0].freqs[0].center_f64()).unwrap();
        assert!((r.value - a.norm() / 2f64.sqrt()).abs() < 1e-14);
        let zero = GridFunction::zeros(s);
        assert_eq!(size_j(&u, &Field::new(&zero), &zero, 2, 1, None).unwrap().value, 0.0);
        assert!(matches!(size_j(&[], &field, &f, 1, 2, None), Err(DecompError::EmptyUniverse)));
    }

    #[test]
    fn maximal_intervals_examples() {
        let s = spec();
        let e = SpatialSet::from_intervals(s, &[(8.0, 12.0)]);
        let fam = select_maximal_intervals(&e.indicator(), 0.99).unwrap();
        assert_eq!(fam, vec![iv(2, 2)]);
        assert!(select_maximal_intervals(&e.indicator(), 1.01).unwrap().is_empty());
    }

    #[test]
    fn exceptional_set_extremes() {
        let s = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e1 = SpatialSet::random_union(s, &mut rng, 5, 0.3);
        let e3 = SpatialSet::random_union(s, &mut rng, 5, 0.3);
        let f2 = SpatialSet::random_union(s, &mut rng, 5, 0.3).indicator();
        let big = build_exceptional_set(&e1, &e3, &f2, 64.0, 1e9).unwrap();
        assert_eq!(big.measure, 0.0);
        let full = SpatialSet::full(s);
        let om = build_exceptional_set(&full, &e3, &f2, 64.0, 2.0).unwrap();
        assert_eq!(om.conditions[0].measure, 0.0);
    }

    #[test]
    fn brackets() {
        assert_eq!(size_bracket(1.0), Some(0));
        assert_eq!(size_bracket(0.75), Some(1));
        assert_eq!(size_bracket(0.5), Some(1));
        assert_eq!(size_bracket(3.0), Some(-1));
        assert_eq!(size_bracket(0.0), None);
    }

    #[test]
    fn theta_validation() {
        assert!(Theta::near_corner(0.05).validate().is_ok());
        assert!(Theta([0.6, 0.1, 0.1]).validate().is_err());
        let empty = BTreeMap::new();
        let env = summation_envelope(&empty, Theta::near_corner(0.05), [1.0; 3], 1.0).unwrap();
        assert_eq!(env.bound, 0.0);
    }

    #[test]
    fn single_tile_stopping_time() {
        let s = spec();
        let u = vec![tri(1, 3, [2, 6, 10])];
        let inputs = StoppingInputs::from_sets([
            SpatialSet::from_intervals(s, &[(0.0, 20.0)]),
            SpatialSet::from_intervals(s, &[(4.0, 30.0)]),
            SpatialSet::from_intervals(s, &[(2.0, 9.0)]),
            SpatialSet::full(s),
        ]);
        let d = stopping_time(&u, &inputs, &StoppingConfig::default()).unwrap();
        assert_eq!(d.recombined(), u);
        assert_eq!(d.leaves.len(), 1);
        assert!(d.certificates_valid());
    }

    #[test]
    fn random_stopping_time_recombines() {
        let s = spec();
        let cfg = StoppingConfig::default();
        let u = random_rank1_universe(11, &UniverseParams { size: 80, ..Default::default() }, &cfg.tiles);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = [0; 4].map(|_| SpatialSet::random_union(s, &mut rng, 6, 0.4));
        let d = stopping_time(&u, &StoppingInputs::from_sets(e), &cfg).unwrap();
        let mut sorted = u.clone();
        sorted.sort();
        assert_eq!(d.recombined(), sorted);
        assert!(d.certificates_valid());
        assert_eq!(audit_lines(&d).len(), d.leaves.iter().flat_map(|l| &l.families).map(|f| f.trees.len()).sum::<usize>());
    }

    #[test]
    fn quadratic_eta_has_no_remainder() {
        let c = remainder_coefficients(EtaProfile::Quadratic([0.3, -0.2, 0.7]), (5.0, 4.0), (4.6, 0.5), 4.8, 256);
        assert!(c.iter().all(|(_, v)| v.norm() < 1e-12));
    }
}
