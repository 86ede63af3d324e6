//! Shifted dyadic meshes, tiles, tri-tiles, wave packets, orders and trees.
//!
//! Interval predicates run on exact integer ticks of `2^-TICK_EXP / 3`; no float
//! ever decides an order relation.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{idft, GridFunction, GridSpec, SpectralFunction, C64};
use crate::profile::bump;

/// Exact rational type used at the boundaries (parsing, display).
pub type Q = Ratio<i128>;

/// Largest admissible `|scale|`.
pub const MAX_SCALE: i32 = 40;
const TICK_EXP: i32 = 48;
/// Default stand-in for the huge separation constants.
pub const DEFAULT_DILATION: i128 = 1 << 7;
/// Minimum lattice frequencies across the `9/10` band of a wave packet.
pub const MIN_PACKET_POINTS: f64 = 4.0;
/// Default decay order of wave packets.
pub const DEFAULT_DECAY_ORDER: u32 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TileError {
    #[error("scale {0} outside -{MAX_SCALE}..={MAX_SCALE}")]
    ScaleOutOfRange(i32),
    #[error("tile area is not one: time scale {time}, frequency scale {freq}")]
    AreaNotOne { time: i32, freq: i32 },
    #[error("time intervals must be unshifted")]
    ShiftedTime,
    #[error("frequency band of width {width} spans {points:.2} lattice points, need {MIN_PACKET_POINTS}")]
    Unresolved { width: f64, points: f64 },
    #[error("frequency band [{lo}, {hi}] leaves the lattice range")]
    OutOfBand { lo: f64, hi: f64 },
    #[error("cubes come from different shifted grids")]
    MixedGrids,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("tri-tile universe violates rank one: pair ({0}, {1}), clause {2}")]
    NotRankOne(usize, usize, u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Shift {
    Zero,
    Third,
    TwoThirds,
}

impl Shift {
    pub const ALL: [Shift; 3] = [Shift::Zero, Shift::Third, Shift::TwoThirds];

    /// Shift in thirds.
    pub fn thirds(self) -> i128 {
        match self {
            Shift::Zero => 0,
            Shift::Third => 1,
            Shift::TwoThirds => 2,
        }
    }

    pub fn value(self) -> Q {
        Q::new(self.thirds(), 3)
    }

    fn from_thirds(t: i128) -> Self {
        match t.rem_euclid(3) {
            0 => Shift::Zero,
            1 => Shift::Third,
            _ => Shift::TwoThirds,
        }
    }
}

fn pow2(j: i32) -> Q {
    if j >= 0 {
        Q::from_integer(1i128 << j)
    } else {
        Q::new(1, 1i128 << -j)
    }
}

fn q_to_f64(q: Q) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

/// Half-open span `[lo, hi)` in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub lo: i128,
    pub hi: i128,
}

impl Span {
    /// Dilate by `num/den` about the centre; coordinates are scaled by `2 den`.
    fn dilated(self, num: i128, den: i128) -> Span {
        let c = self.lo + self.hi;
        let half = (self.hi - self.lo) * num;
        Span { lo: c * den - half, hi: c * den + half }
    }

    pub fn subset_of(self, other: Span) -> bool {
        self.lo >= other.lo && self.hi <= other.hi
    }

    pub fn overlaps(self, other: Span) -> bool {
        self.lo < other.hi && other.lo < self.hi
    }

    pub fn len(self) -> i128 {
        self.hi - self.lo
    }

    pub fn is_empty(self) -> bool {
        self.hi <= self.lo
    }
}

/// `c1 A subset_of c2 B` for integer-ratio dilation factors.
fn dilate_subset(a: Span, ca: (i128, i128), b: Span, cb: (i128, i128)) -> bool {
    let den = ca.1 * cb.1;
    a.dilated(ca.0 * cb.1, den).subset_of(b.dilated(cb.0 * ca.1, den))
}

fn dilate_overlap(a: Span, ca: (i128, i128), b: Span, cb: (i128, i128)) -> bool {
    let den = ca.1 * cb.1;
    a.dilated(ca.0 * cb.1, den).overlaps(b.dilated(cb.0 * ca.1, den))
}

/// `2^j (k + [0, 1) + (-1)^j sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicInterval {
    pub scale: i32,
    pub pos: i64,
    pub shift: Shift,
}

impl DyadicInterval {
    pub fn new(scale: i32, pos: i64, shift: Shift) -> Result<Self, TileError> {
        if scale.abs() > MAX_SCALE {
            return Err(TileError::ScaleOutOfRange(scale));
        }
        Ok(Self { scale, pos, shift })
    }

    fn signed_thirds(&self) -> i128 {
        if self.scale.rem_euclid(2) == 0 {
            self.shift.thirds()
        } else {
            -self.shift.thirds()
        }
    }

    pub fn left(&self) -> Q {
        pow2(self.scale) * (Q::from_integer(self.pos as i128) + Q::new(self.signed_thirds(), 3))
    }

    pub fn right(&self) -> Q {
        self.left() + self.len()
    }

    pub fn len(&self) -> Q {
        pow2(self.scale)
    }

    pub fn center(&self) -> Q {
        self.left() + self.len() / Q::from_integer(2)
    }

    /// Exact span in ticks of `2^-TICK_EXP / 3`.
    pub fn span(&self) -> Span {
        let unit = 1i128 << (self.scale + TICK_EXP);
        let lo = unit * (3 * self.pos as i128 + self.signed_thirds());
        Span { lo, hi: lo + 3 * unit }
    }

    pub fn left_f64(&self) -> f64 {
        q_to_f64(self.left())
    }

    pub fn len_f64(&self) -> f64 {
        2f64.powi(self.scale)
    }

    pub fn center_f64(&self) -> f64 {
        self.left_f64() + self.len_f64() / 2.0
    }

    /// The interval of this scale and shift containing point `x`.
    pub fn containing(scale: i32, shift: Shift, x: Q) -> Result<Self, TileError> {
        let probe = Self::new(scale, 0, shift)?;
        let pos = ((x - probe.left()) / probe.len()).floor().to_integer();
        Self::new(scale, pos as i64, shift)
    }

    /// Parent in the same shifted grid.
    pub fn parent(&self) -> Result<Self, TileError> {
        Self::containing(self.scale + 1, self.shift, self.left())
    }
}

impl fmt::Display for DyadicInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.left(), self.right())
    }
}

/// A time-frequency rectangle of area one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tile {
    pub time: DyadicInterval,
    pub freq: DyadicInterval,
}

impl Tile {
    pub fn new(time: DyadicInterval, freq: DyadicInterval) -> Result<Self, TileError> {
        if time.shift != Shift::Zero {
            return Err(TileError::ShiftedTime);
        }
        if time.scale + freq.scale != 0 {
            return Err(TileError::AreaNotOne { time: time.scale, freq: freq.scale });
        }
        Ok(Self { time, freq })
    }

    /// Exact area, always one for a constructed tile.
    pub fn area(&self) -> Q {
        self.time.len() * self.freq.len()
    }
}

/// Three tiles sharing one time interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TriTile {
    pub time: DyadicInterval,
    pub freqs: [DyadicInterval; 3],
}

impl TriTile {
    pub fn new(time: DyadicInterval, freqs: [DyadicInterval; 3]) -> Result<Self, TileError> {
        for f in &freqs {
            Tile::new(time, *f)?;
        }
        Ok(Self { time, freqs })
    }

    /// Component tile `P_i`, `i` in `1..=3`.
    pub fn component(&self, i: usize) -> Tile {
        Tile { time: self.time, freq: self.freqs[i - 1] }
    }

    pub fn shifts(&self) -> [Shift; 3] {
        [self.freqs[0].shift, self.freqs[1].shift, self.freqs[2].shift]
    }

    /// Frequency cube `omega_1 x omega_2 x omega_3`.
    pub fn frequency_cube(&self) -> [(Q, Q); 3] {
        self.freqs.map(|w| (w.left(), w.right()))
    }
}

/// Configurable stand-ins for the order and separation constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileConfig {
    /// Frequency dilation in the `lesssim` relation.
    pub order_dilation: i128,
    /// Scale separation in rank one and sparseness.
    pub separation: i128,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self { order_dilation: DEFAULT_DILATION, separation: DEFAULT_DILATION }
    }
}

/// Relations `P' R P` that hold for an ordered pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Relations {
    pub lt: bool,
    pub le: bool,
    pub lesssim: bool,
    pub lesssim_prime: bool,
}

impl Relations {
    pub fn is_none(&self) -> bool {
        !(self.lt || self.le || self.lesssim || self.lesssim_prime)
    }
}

/// All relations of `p_prime` against `p`.
pub fn tile_order(p_prime: &Tile, p: &Tile, cfg: &TileConfig) -> Relations {
    let it = p_prime.time.span();
    let i = p.time.span();
    let w = p.freq.span();
    let wp = p_prime.freq.span();
    let lt = it.subset_of(i) && it != i && dilate_subset(w, (3, 1), wp, (3, 1));
    let le = lt || p_prime == p;
    let c = cfg.order_dilation;
    let lesssim = it.subset_of(i) && dilate_subset(w, (c, 1), wp, (c, 1));
    Relations { lt, le, lesssim, lesssim_prime: lesssim && !le }
}

/// `a <= b` in the tile order, exact.
pub fn tile_le(a: &Tile, b: &Tile) -> bool {
    if a == b {
        return true;
    }
    let ia = a.time.span();
    let ib = b.time.span();
    ia.subset_of(ib) && ia != ib && dilate_subset(b.freq.span(), (3, 1), a.freq.span(), (3, 1))
}

/// First violation `(index P, index P', clause)` of the rank-one conditions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rank1Report {
    pub ok: bool,
    pub violation: Option<(usize, usize, u8)>,
}

fn rank1_pair(p: &TriTile, pp: &TriTile, cfg: &TileConfig) -> Option<u8> {
    if p != pp && (1..=3).any(|j| p.component(j) == pp.component(j)) {
        return Some(1);
    }
    for j in 1..=3 {
        if !tile_le(&pp.component(j), &p.component(j)) {
            continue;
        }
        for i in 1..=3 {
            let r = tile_order(&pp.component(i), &p.component(i), cfg);
            if !r.lesssim {
                return Some(2);
            }
        }
        // Strongly separated scales force the strict variant off the j-th slot.
        if p.time.span().len() > cfg.separation * pp.time.span().len() {
            for i in (1..=3).filter(|&i| i != j) {
                if !tile_order(&pp.component(i), &p.component(i), cfg).lesssim_prime {
                    return Some(3);
                }
            }
        }
    }
    None
}

pub fn check_rank1(tritiles: &[TriTile], cfg: &TileConfig) -> Rank1Report {
    for (a, p) in tritiles.iter().enumerate() {
        for (b, pp) in tritiles.iter().enumerate() {
            if let Some(clause) = rank1_pair(p, pp, cfg) {
                return Rank1Report { ok: false, violation: Some((a, b, clause)) };
            }
        }
    }
    Rank1Report { ok: true, violation: None }
}

/// Whether `candidate` can join a rank-one family without a violation.
pub fn rank1_compatible(family: &[TriTile], candidate: &TriTile, cfg: &TileConfig) -> bool {
    family
        .iter()
        .all(|p| rank1_pair(p, candidate, cfg).is_none() && rank1_pair(candidate, p, cfg).is_none())
}

/// A `j`-tree: members whose `j`-th tiles sit below the top's.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tree {
    pub j: usize,
    pub top: TriTile,
    pub members: Vec<TriTile>,
}

impl Tree {
    pub fn is_valid(&self) -> bool {
        let top = self.top.component(self.j);
        self.members.iter().all(|p| tile_le(&p.component(self.j), &top))
    }

    pub fn top_span(&self) -> Span {
        self.top.time.span()
    }
}

/// Tie-break for tops: longest interval, then lowest frequency, then leftmost time.
pub fn top_order(a: &TriTile, b: &TriTile, j: usize) -> Ordering {
    b.time
        .scale
        .cmp(&a.time.scale)
        .then_with(|| a.freqs[j - 1].span().lo.cmp(&b.freqs[j - 1].span().lo))
        .then_with(|| a.time.span().lo.cmp(&b.time.span().lo))
}

/// Members of the `j`-tree with top `top` among `pool`.
pub fn tree_members(pool: &[TriTile], top: &TriTile, j: usize) -> Vec<TriTile> {
    let t = top.component(j);
    pool.iter().filter(|p| tile_le(&p.component(j), &t)).copied().collect()
}

/// Greedy partition into `j`-trees with maximal tops.
pub fn build_trees(tritiles: &[TriTile], j: usize) -> Vec<Tree> {
    let mut pool: Vec<TriTile> = tritiles.to_vec();
    let mut trees = Vec::new();
    while !pool.is_empty() {
        let top = *pool.iter().min_by(|a, b| top_order(a, b, j)).expect("nonempty pool");
        let members = tree_members(&pool, &top, j);
        pool.retain(|p| !members.contains(p));
        trees.push(Tree { j, top, members });
    }
    trees
}

/// Strong `j`-disjointness of two trees; `None` or a witness pair.
pub fn strongly_disjoint_pair(t: &Tree, u: &Tree, j: usize) -> Option<(TriTile, TriTile)> {
    for p in &t.members {
        for q in &u.members {
            if p.freqs[j - 1] == q.freqs[j - 1] && p.time == q.time {
                return Some((*p, *q));
            }
            let overlap = dilate_overlap(p.freqs[j - 1].span(), (2, 1), q.freqs[j - 1].span(), (2, 1));
            if overlap && (q.time.span().overlaps(t.top_span()) || p.time.span().overlaps(u.top_span())) {
                return Some((*p, *q));
            }
        }
    }
    None
}

pub fn check_strongly_disjoint(trees: &[Tree], j: usize) -> bool {
    trees
        .iter()
        .enumerate()
        .all(|(a, t)| trees[a + 1..].iter().all(|u| strongly_disjoint_pair(t, u, j).is_none()))
}

/// Greedy colouring of trees into pairwise strongly disjoint families.
pub fn split_strongly_disjoint(trees: Vec<Tree>, j: usize) -> Vec<Vec<Tree>> {
    let mut families: Vec<Vec<Tree>> = Vec::new();
    for t in trees {
        match families
            .iter_mut()
            .find(|fam| fam.iter().all(|u| strongly_disjoint_pair(&t, u, j).is_none()))
        {
            Some(fam) => fam.push(t),
            None => families.push(vec![t]),
        }
    }
    families
}

/// A cube of the shifted mesh `D^n_sigma`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cube {
    pub scale: i32,
    pub pos: Vec<i64>,
    pub shifts: Vec<Shift>,
}

impl Cube {
    pub fn axis(&self, a: usize) -> DyadicInterval {
        DyadicInterval { scale: self.scale, pos: self.pos[a], shift: self.shifts[a] }
    }

    pub fn dim(&self) -> usize {
        self.pos.len()
    }
}

/// All cubes of the shifted mesh with scales in range inside the window `[lo, hi)^n`.
pub fn shifted_mesh(
    shifts: &[Shift],
    scales: std::ops::RangeInclusive<i32>,
    window: (Q, Q),
) -> Result<Vec<Cube>, TileError> {
    let mut out = Vec::new();
    for j in scales {
        let mut axes = Vec::new();
        for &s in shifts {
            let first = DyadicInterval::containing(j, s, window.0)?;
            let mut list = Vec::new();
            let mut pos = first.pos;
            loop {
                let iv = DyadicInterval::new(j, pos, s)?;
                if iv.left() >= window.1 {
                    break;
                }
                if iv.left() >= window.0 && iv.right() <= window.1 {
                    list.push(pos);
                }
                pos += 1;
            }
            axes.push(list);
        }
        let mut combos: Vec<Vec<i64>> = vec![Vec::new()];
        for list in &axes {
            combos = combos
                .into_iter()
                .flat_map(|c| list.iter().map(move |&p| [c.clone(), vec![p]].concat()))
                .collect();
        }
        out.extend(combos.into_iter().map(|pos| Cube { scale: j, pos, shifts: shifts.to_vec() }));
    }
    Ok(out)
}

/// Smallest shifted cube `Q'` with `[lo, lo + side)^n` inside `(7/10) Q'`.
pub fn covering_cube(lo: &[Q], side: Q) -> Result<Cube, TileError> {
    let target = |a: usize| (lo[a], lo[a] + side);
    let mut j = -MAX_SCALE;
    while pow2(j) * Q::new(7, 10) < side {
        j += 1;
    }
    for scale in j..=MAX_SCALE {
        let mut pos = Vec::new();
        let mut shifts = Vec::new();
        for a in 0..lo.len() {
            let (x0, x1) = target(a);
            let found = Shift::ALL.iter().find_map(|&s| {
                let iv = DyadicInterval::containing(scale, s, (x0 + x1) / Q::from_integer(2)).ok()?;
                let margin = iv.len() * Q::new(3, 20);
                (iv.left() + margin <= x0 && x1 <= iv.right() - margin).then_some((iv.pos, s))
            });
            let (p, s) = match found {
                Some(v) => v,
                None => break,
            };
            pos.push(p);
            shifts.push(s);
        }
        if pos.len() == lo.len() {
            return Ok(Cube { scale, pos, shifts });
        }
    }
    Err(TileError::ScaleOutOfRange(MAX_SCALE + 1))
}

fn cubes_conflict(a: &Cube, b: &Cube, c: i128) -> bool {
    match a.scale.cmp(&b.scale) {
        Ordering::Equal => {
            // Equal sizes: the c-dilates must be disjoint.
            (0..a.dim()).all(|ax| dilate_overlap(a.axis(ax).span(), (c, 1), b.axis(ax).span(), (c, 1)))
        }
        _ => {
            let (s, l) = if a.scale < b.scale { (a, b) } else { (b, a) };
            // Different sizes: c |Q| < |Q'| in side length.
            c * s.axis(0).span().len() >= l.axis(0).span().len()
        }
    }
}

/// Whether a family satisfies the sparseness predicate.
pub fn is_sparse(cubes: &[Cube], cfg: &TileConfig) -> bool {
    cubes
        .iter()
        .enumerate()
        .all(|(i, a)| cubes[i + 1..].iter().all(|b| !cubes_conflict(a, b, cfg.separation)))
}

/// Greedy colouring into sparse subfamilies.
pub fn sparse_split(cubes: &[Cube], cfg: &TileConfig) -> Result<Vec<Vec<Cube>>, TileError> {
    if let Some(first) = cubes.first() {
        if cubes.iter().any(|c| c.shifts != first.shifts) {
            return Err(TileError::MixedGrids);
        }
    }
    let mut families: Vec<Vec<Cube>> = Vec::new();
    for c in cubes {
        match families
            .iter_mut()
            .find(|f| f.iter().all(|d| !cubes_conflict(c, d, cfg.separation)))
        {
            Some(f) => f.push(c.clone()),
            None => families.push(vec![c.clone()]),
        }
    }
    Ok(families)
}

/// L2-normalised packet adapted to a tile, sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WavePacket {
    pub tile: Tile,
    pub samples: GridFunction,
    pub decay_order: u32,
    /// `max_x |Phi(x)| |I|^{1/2} chi_I(x)^M`.
    pub decay_constant: f64,
}

/// `(1 + (dist(x, x_I) / |I|)^2)^{1/2}` with periodic distance.
pub fn chi_tilde(x: f64, center: f64, len: f64, period: f64) -> f64 {
    let d = (x - center).rem_euclid(period);
    let d = d.min(period - d);
    (1.0 + (d / len).powi(2)).sqrt()
}

/// Normalised spectrum `bump((xi - c) / (0.9 w)) e^{-2 pi i xi t}` of a packet, nonzero slots only.
pub fn packet_spectrum(
    spec: GridSpec,
    time_center: f64,
    time_len: f64,
    freq_center: f64,
    oscillation: i64,
) -> Result<Vec<(i64, C64)>, TileError> {
    let l = spec.period();
    let width = 1.0 / time_len;
    let band = 0.9 * width;
    let points = band * l;
    if points < MIN_PACKET_POINTS {
        return Err(TileError::Unresolved { width, points });
    }
    let lo = freq_center - band / 2.0;
    let hi = freq_center + band / 2.0;
    if lo * l < spec.min_freq() as f64 || hi * l > spec.max_freq() as f64 {
        return Err(TileError::OutOfBand { lo, hi });
    }
    let shift = time_center + oscillation as f64 * time_len;
    let mut coeffs: Vec<(i64, C64)> = ((lo * l).floor() as i64..=(hi * l).ceil() as i64)
        .filter_map(|k| {
            let xi = k as f64 / l;
            let a = bump((xi - freq_center) / band);
            (a != 0.0).then(|| (k, C64::from_polar(a, -2.0 * PI * xi * shift)))
        })
        .collect();
    let norm = (coeffs.iter().map(|(_, c)| c.norm_sqr()).sum::<f64>() / l).sqrt();
    coeffs.iter_mut().for_each(|(_, c)| *c /= norm);
    Ok(coeffs)
}

/// Samples of the packet described by [`packet_spectrum`].
pub fn packet_at(
    spec: GridSpec,
    time_center: f64,
    time_len: f64,
    freq_center: f64,
    oscillation: i64,
) -> Result<GridFunction, TileError> {
    let mut hat = SpectralFunction::zeros(spec);
    for (k, c) in packet_spectrum(spec, time_center, time_len, freq_center, oscillation)? {
        hat.set(k, c);
    }
    Ok(idft(&hat))
}

/// Wave packet on `tile`; `oscillation` translates by whole multiples of `|I|`.
pub fn make_wave_packet(tile: &Tile, spec: GridSpec, oscillation: i64, decay_order: u32) -> Result<WavePacket, TileError> {
    let len = tile.time.len_f64();
    let center = tile.time.center_f64();
    let samples = packet_at(spec, center, len, tile.freq.center_f64(), oscillation)?;
    let shifted = center + oscillation as f64 * len;
    let decay_constant = (0..spec.num_points())
        .map(|i| {
            let x = spec.x(i);
            samples.samples()[i].norm() * len.sqrt() * chi_tilde(x, shifted, len, spec.period()).powi(decay_order as i32)
        })
        .fold(0.0, f64::max);
    Ok(WavePacket { tile: *tile, samples, decay_order, decay_constant })
}

/// Whether every coefficient of `f` above roundoff lies in `factor * omega`.
pub fn spectral_support_within(f: &GridFunction, omega: &DyadicInterval, factor: Q) -> bool {
    let spec = f.spec();
    let hat = crate::grid::dft(f);
    let c = omega.center();
    let r = omega.len() * factor / Q::from_integer(2);
    let period = Q::from_integer(spec.period().round() as i128);
    let floor = 1e-12 * hat.iter().map(|(_, v)| v.norm()).fold(0.0, f64::max);
    let inside = hat.iter().all(|(k, v)| {
        if v.norm() <= floor {
            return true;
        }
        let xi = Q::new(k as i128, 1) / period;
        xi >= c - r && xi <= c + r
    });
    inside
}

/// Random rank-one universe grown by filtering candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniverseParams {
    pub size: usize,
    /// Time scales `0..=max_scale`.
    pub max_scale: i32,
    /// Time window `[0, 2^time_exp)`.
    pub time_exp: i32,
    /// Frequency centres drawn from `[0, freq_range)`.
    pub freq_range: f64,
    pub shifts: [Shift; 3],
    pub attempts: usize,
}

impl Default for UniverseParams {
    fn default() -> Self {
        Self {
            size: 200,
            max_scale: 3,
            time_exp: 6,
            freq_range: 4.0,
            shifts: [Shift::Zero, Shift::Third, Shift::TwoThirds],
            attempts: 20,
        }
    }
}

/// Grows a rank-one family of tri-tiles along the diagonal frequency line.
pub fn random_rank1_universe(seed: u64, params: &UniverseParams, cfg: &TileConfig) -> Vec<TriTile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut family: Vec<TriTile> = Vec::new();
    let denom = 1i128 << 20;
    for _ in 0..params.size * params.attempts {
        if family.len() >= params.size {
            break;
        }
        let j = rng.gen_range(0..=params.max_scale);
        let k = rng.gen_range(0..(1i64 << (params.time_exp - j).max(0)));
        let Ok(time) = DyadicInterval::new(j, k, Shift::Zero) else { continue };
        let xi = Q::new((rng.gen_range(0.0..params.freq_range) * denom as f64) as i128, denom);
        let step = pow2(-j);
        let freqs: Result<Vec<_>, _> = (0..3)
            .map(|i| DyadicInterval::containing(-j, params.shifts[i], xi + step * Q::from_integer(4 * i as i128)))
            .collect();
        let Ok(freqs) = freqs else { continue };
        let Ok(t) = TriTile::new(time, [freqs[0], freqs[1], freqs[2]]) else { continue };
        if !family.contains(&t) && rank1_compatible(&family, &t, cfg) {
            family.push(t);
        }
    }
    family
}

/// Every tri-tile at time scale `j` over `[0, count 2^j)` whose first frequency interval
/// starts in `[lo, hi)`, the others `gap` intervals apart; rank one by construction.
pub fn single_scale_universe(j: i32, count: i64, lo: i64, hi: i64, gap: i64, shifts: [Shift; 3]) -> Result<Vec<TriTile>, TileError> {
    let mut out = Vec::new();
    for k in 0..count {
        let time = DyadicInterval::new(j, k, Shift::Zero)?;
        for w in lo..hi {
            let freqs = [
                DyadicInterval::new(-j, w, shifts[0])?,
                DyadicInterval::new(-j, w + gap, shifts[1])?,
                DyadicInterval::new(-j, w + 2 * gap, shifts[2])?,
            ];
            out.push(TriTile::new(time, freqs)?);
        }
    }
    Ok(out)
}

fn parse_q(text: &str, line: usize) -> Result<Q, TileError> {
    let err = |msg: &str| TileError::Parse { line, msg: format!("{msg}: {text:?}") };
    let (n, d) = match text.split_once('/') {
        Some((n, d)) => (n, d),
        None => (text, "1"),
    };
    let n: i128 = n.trim().parse().map_err(|_| err("bad numerator"))?;
    let d: i128 = d.trim().parse().map_err(|_| err("bad denominator"))?;
    if d <= 0 || n.unsigned_abs() > 1u128 << 100 || d > 1i128 << 100 {
        return Err(err("denominator must be positive and both parts bounded"));
    }
    Ok(Q::new(n, d))
}

/// Recovers a frequency interval from scale and exact left endpoint.
fn interval_from_left(scale: i32, left: Q, line: usize) -> Result<DyadicInterval, TileError> {
    let units = left / pow2(scale) * Q::from_integer(3);
    if !units.is_integer() {
        return Err(TileError::Parse { line, msg: format!("{left} is not on a shifted grid of scale {scale}") });
    }
    let thirds = units.to_integer();
    let signed = if scale.rem_euclid(2) == 0 { thirds } else { -thirds };
    let shift = Shift::from_thirds(signed);
    let st = if scale.rem_euclid(2) == 0 { shift.thirds() } else { -shift.thirds() };
    let pos = (thirds - st) / 3;
    let pos = i64::try_from(pos).map_err(|_| TileError::Parse { line, msg: "position overflows".into() })?;
    DyadicInterval::new(scale, pos, shift).map_err(|e| TileError::Parse { line, msg: e.to_string() })
}

/// One tri-tile per line: `j k w1 w2 w3` with `w_i` the exact left ends of the frequency intervals.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Universe(pub Vec<TriTile>);

impl FromStr for Universe {
    type Err = TileError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut out = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(TileError::Parse { line, msg: format!("expected 5 fields, got {}", fields.len()) });
            }
            let j: i32 = fields[0].parse().map_err(|_| TileError::Parse { line, msg: "bad scale".into() })?;
            if j.abs() > MAX_SCALE {
                return Err(TileError::Parse { line, msg: format!("scale {j} out of range") });
            }
            let k: i64 = fields[1].parse().map_err(|_| TileError::Parse { line, msg: "bad position".into() })?;
            let time = DyadicInterval::new(j, k, Shift::Zero).map_err(|e| TileError::Parse { line, msg: e.to_string() })?;
            let mut freqs = [time; 3];
            for i in 0..3 {
                freqs[i] = interval_from_left(-j, parse_q(fields[2 + i], line)?, line)?;
            }
            out.push(TriTile::new(time, freqs).map_err(|e| TileError::Parse { line, msg: e.to_string() })?);
        }
        Ok(Universe(out))
    }
}

impl fmt::Display for Universe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.0 {
            write!(f, "{} {}", t.time.scale, t.time.pos)?;
            for w in &t.freqs {
                write!(f, " {}", w.left())?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Exact area-one assertion applied to every tile of a universe.
pub fn assert_area_one(universe: &[TriTile]) -> bool {
    universe
        .iter()
        .all(|t| (1..=3).all(|i| t.component(i).area() == Q::from_integer(1)) && !t.time.len().is_zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::lp_norm;

    fn iv(j: i32, k: i64, s: Shift) -> DyadicInterval {
        DyadicInterval::new(j, k, s).unwrap()
    }

    #[test]
    fn interval_endpoints_and_parity() {
        let a = iv(0, 2, Shift::Third);
        assert_eq!(a.left(), Q::new(7, 3));
        let b = iv(1, 2, Shift::Third);
        assert_eq!(b.left(), Q::new(2 * 5, 3));
        let c = iv(-1, 3, Shift::Zero);
        assert_eq!(c.len(), Q::new(1, 2));
        assert_eq!(c.span().len(), c.len().numer() * 3 * (1i128 << TICK_EXP) / c.len().denom());
    }

    #[test]
    fn order_relations() {
        let cfg = TileConfig::default();
        let p = Tile::new(iv(2, 0, Shift::Zero), iv(-2, 40, Shift::Zero)).unwrap();
        let r = tile_order(&p, &p, &cfg);
        assert!(r.le && r.lesssim && !r.lt && !r.lesssim_prime);
        let child = Tile::new(iv(1, 0, Shift::Zero), iv(-1, 20, Shift::Zero)).unwrap();
        let r = tile_order(&child, &p, &cfg);
        assert!(r.lt && r.le && r.lesssim);
        let far = Tile::new(iv(2, 5, Shift::Zero), iv(-2, 40, Shift::Zero)).unwrap();
        assert!(tile_order(&far, &p, &cfg).is_none());
    }

    #[test]
    fn rank1_clause_one_witness() {
        let cfg = TileConfig::default();
        let t = iv(0, 0, Shift::Zero);
        let a = TriTile::new(t, [iv(0, 1, Shift::Zero), iv(0, 5, Shift::Zero), iv(0, 9, Shift::Zero)]).unwrap();
        let b = TriTile::new(t, [iv(0, 1, Shift::Zero), iv(0, 6, Shift::Zero), iv(0, 10, Shift::Zero)]).unwrap();
        let r = check_rank1(&[a, b], &cfg);
        assert!(!r.ok);
        assert_eq!(r.violation.unwrap().2, 1);
        assert!(check_rank1(&[], &cfg).ok);
    }

    #[test]
    fn generated_universe_is_rank1() {
        let cfg = TileConfig::default();
        let u = random_rank1_universe(7, &UniverseParams { size: 60, ..Default::default() }, &cfg);
        assert!(u.len() > 20);
        assert!(check_rank1(&u, &cfg).ok);
        assert!(assert_area_one(&u));
    }

    #[test]
    fn single_scale_universe_is_rank1() {
        let u = single_scale_universe(1, 8, 0, 6, 3, [Shift::Zero, Shift::Third, Shift::TwoThirds]).unwrap();
        assert_eq!(u.len(), 48);
        assert!(check_rank1(&u, &TileConfig::default()).ok);
    }

    #[test]
    fn lacunary_column_is_one_tree() {
        let top = TriTile::new(
            iv(3, 0, Shift::Zero),
            [iv(-3, 8, Shift::Zero), iv(-3, 20, Shift::Zero), iv(-3, 40, Shift::Zero)],
        )
        .unwrap();
        let mut u = vec![top];
        for j in 0..3 {
            // Children over the left edge whose 3-dilated bands contain the top band.
            let w = DyadicInterval::containing(-j, Shift::Zero, top.freqs[0].center()).unwrap();
            let f2 = iv(-j, 1000 + j as i64, Shift::Zero);
            let f3 = iv(-j, 2000 + j as i64, Shift::Zero);
            u.push(TriTile::new(iv(j, 0, Shift::Zero), [w, f2, f3]).unwrap());
        }
        let trees = build_trees(&u, 1);
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0].members.len(), 4);
        assert!(trees[0].is_valid());
    }

    #[test]
    fn disjoint_columns_are_strongly_disjoint() {
        let a = TriTile::new(iv(0, 0, Shift::Zero), [iv(0, 3, Shift::Zero), iv(0, 7, Shift::Zero), iv(0, 11, Shift::Zero)]).unwrap();
        let b = TriTile::new(iv(0, 4, Shift::Zero), [iv(0, 3, Shift::Zero), iv(0, 7, Shift::Zero), iv(0, 11, Shift::Zero)]).unwrap();
        let trees = build_trees(&[a, b], 2);
        assert_eq!(trees.len(), 2);
        assert!(check_strongly_disjoint(&trees, 2));
    }

    #[test]
    fn mesh_and_covering() {
        let zero = shifted_mesh(&[Shift::Zero], 0..=0, (Q::from_integer(0), Q::from_integer(4))).unwrap();
        assert_eq!(zero.len(), 4);
        assert!(zero.iter().enumerate().all(|(i, c)| c.pos == vec![i as i64]));
        let c = covering_cube(&[Q::from_integer(3)], Q::from_integer(1)).unwrap();
        let iv = c.axis(0);
        let margin = iv.len() * Q::new(3, 20);
        assert!(iv.left() + margin <= Q::from_integer(3) && Q::from_integer(4) <= iv.right() - margin);
    }

    #[test]
    fn sparse_split_examples() {
        let cfg = TileConfig::default();
        let single = vec![Cube { scale: 0, pos: vec![0], shifts: vec![Shift::Zero] }];
        assert_eq!(sparse_split(&single, &cfg).unwrap().len(), 1);
        let pair = vec![single[0].clone(), Cube { scale: 0, pos: vec![1], shifts: vec![Shift::Zero] }];
        assert_eq!(sparse_split(&pair, &cfg).unwrap().len(), 2);
        let mixed = vec![single[0].clone(), Cube { scale: 0, pos: vec![1], shifts: vec![Shift::Third] }];
        assert_eq!(sparse_split(&mixed, &cfg), Err(TileError::MixedGrids));
    }

    #[test]
    fn wave_packet_contract() {
        let spec = GridSpec::new(1024, 64.0).unwrap();
        let tile = Tile::new(iv(0, 10, Shift::Zero), iv(0, 3, Shift::Zero)).unwrap();
        let w = make_wave_packet(&tile, spec, 0, 4).unwrap();
        assert!((lp_norm(&w.samples, 2.0).unwrap() - 1.0).abs() < 1e-10);
        assert!(spectral_support_within(&w.samples, &tile.freq, Q::new(9, 10)));
        assert!(w.decay_constant <= 20.0, "{}", w.decay_constant);
        let coarse = Tile::new(iv(4, 0, Shift::Zero), iv(-4, 0, Shift::Zero)).unwrap();
        assert!(matches!(make_wave_packet(&coarse, spec, 0, 4), Err(TileError::Unresolved { .. })));
    }

    #[test]
    fn packet_dilation_and_base_profile() {
        let spec = GridSpec::new(2048, 64.0).unwrap();
        let unit = Tile::new(iv(0, 0, Shift::Zero), iv(0, 0, Shift::Zero)).unwrap();
        let base = packet_at(spec, 0.5, 1.0, 0.5, 0).unwrap();
        let w = make_wave_packet(&unit, spec, 0, 4).unwrap();
        assert!(w.samples.sub(&base).unwrap().max_abs() < 1e-14);
        let wide = Tile::new(iv(1, 0, Shift::Zero), iv(-1, 0, Shift::Zero)).unwrap();
        let v = make_wave_packet(&wide, spec, 0, 4).unwrap();
        assert!((lp_norm(&v.samples, 2.0).unwrap() - 1.0).abs() < 1e-10);
        let ratio = v.samples.max_abs() / w.samples.max_abs();
        assert!((ratio - 0.5f64.sqrt()).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn universe_text_round_trip() {
        let cfg = TileConfig::default();
        let u = Universe(random_rank1_universe(3, &UniverseParams { size: 20, ..Default::default() }, &cfg));
        let text = u.to_string();
        let back: Universe = text.parse().unwrap();
        assert_eq!(back, u);
        assert!("0 0 1/3 1 2".parse::<Universe>().is_ok());
        assert!("0 0 1/3 1".parse::<Universe>().is_err());
        assert!("0 0 1/5 1 2".parse::<Universe>().is_err());
        assert!("99 0 0 0 0".parse::<Universe>().is_err());
        assert!("# comment only\n\n".parse::<Universe>().unwrap().0.is_empty());
    }
}
