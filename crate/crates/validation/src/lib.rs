//! Acceptance checks over the `simplex-tf` library, one function per criterion.

use std::fmt;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simplex_tf::decomp::{
    nested_p_universe, remainder_constant, stack_count, taylor_split_tree, EtaProfile, SpatialSet,
};
use simplex_tf::experiments::{self, random_input, ExperimentConfig, ExperimentKind, Extremal, InputFamily, ScanReport};
use simplex_tf::grid::{conjugate_exponent, idft, lp_norm, GridFunction, GridSpec, SpectralFunction, C64};
use simplex_tf::martingale::{distribution_function, martingale_cells, Cell};
use simplex_tf::symbols::{whitney_decompose, WhitneySquare, WHITNEY_COVER_THRESHOLD};
use simplex_tf::tiles::{
    build_trees, make_wave_packet, random_rank1_universe, spectral_support_within, DyadicInterval, Shift, Tile, TileConfig, TriTile,
    UniverseParams, Q,
};

/// Oracle runtime ceiling.
pub const ORACLE_RUNTIME: Duration = Duration::from_secs(120);
/// Ceiling for the wave-packet decay constant at `M = 4`.
pub const PACKET_DECAY_MAX: f64 = 20.0;
/// Profile-global remainder constant.
pub const REMAINDER_C: f64 = 1e4;
/// Stack-count constant for random universes.
pub const STACK_C: f64 = 16.0;
/// Constructed stacks must reach the bound within this factor.
pub const STACK_FACTOR: f64 = 4.0;

/// Result of one criterion.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub details: Vec<String>,
}

impl Outcome {
    fn new(id: u8, name: &'static str) -> Self {
        Self { id, name, passed: true, details: Vec::new() }
    }

    fn check(&mut self, ok: bool, detail: impl Into<String>) {
        self.passed &= ok;
        let status = if ok { "ok" } else { "violated" };
        self.details.push(format!("{status}: {}", detail.into()));
    }

    fn note(&mut self, detail: impl Into<String>) {
        self.details.push(detail.into());
    }

    fn absorb(&mut self, label: &str, report: &ScanReport) {
        for a in &report.assertions {
            self.check(a.passed, format!("{label} {}: {}", a.name, a.detail));
        }
    }

    fn fail(&mut self, detail: impl Into<String>) {
        self.passed = false;
        self.details.push(format!("error: {}", detail.into()));
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} [{:>2}] {}", self.id, self.name)?;
        for d in &self.details {
            write!(f, "\n        {d}")?;
        }
        Ok(())
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

/// Runs the literal preset, which decides the criterion, then reports the resolved grid for reference.
fn counterexample(id: u8, name: &'static str, kind: ExperimentKind) -> Outcome {
    let mut out = Outcome::new(id, name);
    let cfg = ExperimentConfig::preset(kind);
    match timed(|| experiments::run(&cfg)) {
        (Ok(report), t) => {
            out.note(format!("literal grid of {} points, {:.1} s", cfg.grid.num_points(), t.as_secs_f64()));
            out.absorb("literal", &report);
        }
        (Err(e), _) => out.fail(format!("literal grid of {} points: {e}", cfg.grid.num_points())),
    }
    match cfg.resolved() {
        Ok(resolved) => match timed(|| experiments::run(&resolved)) {
            (Ok(report), t) => {
                out.note(format!(
                    "reference only, resolved grid of {} points ({:.1} s):",
                    resolved.grid.num_points(),
                    t.as_secs_f64()
                ));
                for row in &report.rows {
                    out.note(format!("  N = {:>3}  R = {:.5}", row.n, row.ratio));
                }
                for a in &report.assertions {
                    out.note(format!("  {} {}: {}", if a.passed { "pass" } else { "fail" }, a.name, a.detail));
                }
            }
            (Err(e), _) => out.note(format!("resolved grid: {e}")),
        },
        Err(e) => out.note(format!("no resolved grid: {e}")),
    }
    out
}

fn preset_scan(id: u8, name: &'static str, kind: ExperimentKind, ceiling: Option<Duration>) -> Outcome {
    let mut out = Outcome::new(id, name);
    let cfg = ExperimentConfig::preset(kind);
    match timed(|| experiments::run(&cfg)) {
        (Ok(report), t) => {
            out.absorb(kind.name(), &report);
            match ceiling {
                Some(c) => out.check(t <= c, format!("runtime {:.1} s (ceiling {} s)", t.as_secs_f64(), c.as_secs())),
                None => out.note(format!("runtime {:.1} s", t.as_secs_f64())),
            }
        }
        (Err(e), _) => out.fail(e.to_string()),
    }
    out
}

pub fn first_counterexample() -> Outcome {
    counterexample(1, "first counterexample: monotone sqrt(log N) growth on the 2^14 grid", ExperimentKind::Counterexample2)
}

pub fn second_counterexample() -> Outcome {
    counterexample(2, "second counterexample: pointwise floor and growth on the 2^14 grid", ExperimentKind::Counterexample8)
}

pub fn mixed_ratio_stability() -> Outcome {
    preset_scan(3, "mixed-estimate stability against the growing contrast row", ExperimentKind::MixedRatio, None)
}

pub fn oracle_equivalence() -> Outcome {
    preset_scan(4, "fast paths agree with brute-force quadrature", ExperimentKind::OracleEquiv, Some(ORACLE_RUNTIME))
}

/// Level-`m` cells against their parents at level `m - 1`.
fn nests(parents: &[Cell], cells: &[Cell]) -> bool {
    parents.iter().enumerate().all(|(k, p)| {
        let (a, b) = (&cells[2 * k], &cells[2 * k + 1]);
        p.left_half == a.support && p.right_half == b.support
    })
}

fn order_separated(a: &[i64], b: &[i64]) -> bool {
    match (a.last(), b.first()) {
        (Some(x), Some(y)) => x < y,
        _ => true,
    }
}

pub fn martingale_equipartition() -> Outcome {
    let mut out = Outcome::new(5, "martingale cells: equal mass up to one atom, ordered halves, nesting");
    let spec = GridSpec::new(256, 16.0).expect("valid grid");
    let q = conjugate_exponent(4.0);
    // Summation roundoff on masses that add to one.
    let roundoff = 64.0 * f64::EPSILON;
    let (mut worst_slack, mut bad_mass, mut bad_order, mut bad_nest, mut bad_cover) = (0.0f64, 0, 0, 0, 0);
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_input(InputFamily::ALL[(seed % 3) as usize], spec, &mut rng);
        let profile = match distribution_function(&f, q) {
            Ok(p) => p,
            Err(e) => {
                out.fail(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let atom = profile.max_atom();
        let mut parents: Option<Vec<Cell>> = None;
        for m in 0..=8u32 {
            let cells = martingale_cells(&profile, m).expect("level within range");
            let target = 0.5f64.powi(m as i32);
            for c in &cells {
                let dev = (c.mass - target).abs();
                worst_slack = worst_slack.max(dev / atom);
                bad_mass += usize::from(dev > atom + roundoff);
                bad_order += usize::from(!order_separated(&c.left_half, &c.right_half));
            }
            bad_order += cells.windows(2).filter(|w| !order_separated(&w[0].support, &w[1].support)).count();
            let union: Vec<i64> = cells.iter().flat_map(|c| c.support.iter().copied()).collect();
            bad_cover += usize::from(union != profile.freqs);
            if let Some(p) = &parents {
                bad_nest += usize::from(!nests(p, &cells));
            }
            parents = Some(cells);
        }
    }
    out.check(bad_mass == 0, format!("{bad_mass} cells exceed the atom slack; worst deviation / largest atom = {worst_slack:.4}"));
    out.check(bad_order == 0, format!("{bad_order} order violations between halves or neighbouring cells"));
    out.check(bad_nest == 0, format!("{bad_nest} levels fail to nest in their parents"));
    out.check(bad_cover == 0, format!("{bad_cover} levels fail to partition the positive-mass support"));
    out
}

/// Open squares overlap, decided on half-lattice corners.
fn squares_overlap(a: &WhitneySquare, b: &WhitneySquare) -> bool {
    let axis = |x: i64, y: i64| x < y + b.side_units && y < x + a.side_units;
    axis(a.corner.0, b.corner.0) && axis(a.corner.1, b.corner.1)
}

pub fn whitney_property() -> Outcome {
    let mut out = Outcome::new(6, "Whitney squares: side <= dist <= 4 side, partition of the clipped half-planes");
    for n in [32usize, 64, 128] {
        let spec = GridSpec::new(n, 1.0).expect("valid grid");
        let plus = whitney_decompose(1, spec);
        let minus = whitney_decompose(-1, spec);
        let inexact = plus.iter().chain(&minus).filter(|q| !q.whitney_exact()).count();
        let overlaps: usize = [&plus, &minus]
            .iter()
            .map(|fam| (0..fam.len()).map(|i| fam[i + 1..].iter().filter(|b| squares_overlap(&fam[i], b)).count()).sum::<usize>())
            .sum();
        let mut miscovered = 0;
        for k1 in spec.freqs() {
            for k2 in spec.freqs() {
                let gap = (k1 + k2) as f64;
                let np = plus.iter().filter(|q| q.contains(k1, k2)).count();
                let nm = minus.iter().filter(|q| q.contains(k1, k2)).count();
                let ok = if gap > WHITNEY_COVER_THRESHOLD {
                    (np, nm) == (1, 0)
                } else if gap < -WHITNEY_COVER_THRESHOLD {
                    (np, nm) == (0, 1)
                } else {
                    np + nm <= 1
                };
                miscovered += usize::from(!ok);
            }
        }
        out.check(
            inexact == 0 && overlaps == 0 && miscovered == 0,
            format!(
                "N = {n}: {} squares, {inexact} inexact, {overlaps} overlapping pairs, {miscovered} lattice points miscovered",
                plus.len() + minus.len()
            ),
        );
    }
    out
}

pub fn wave_packet_contract() -> Outcome {
    let mut out = Outcome::new(7, "wave packets: band inside 9/10 of the tile, unit norm, decay constant at M = 4");
    let spec = GridSpec::new(2048, 64.0).expect("valid grid");
    let (mut worst_norm, mut worst_decay, mut outside, mut count) = (0.0f64, 0.0f64, 0, 0);
    for j in -2..=3 {
        for (pos, w) in [(5i64, 1i64), (20, -3), (41, 2)] {
            for shift in Shift::ALL {
                for osc in [0i64, 2] {
                    let tile = DyadicInterval::new(j, pos % (64 >> j.max(0)), Shift::Zero)
                        .and_then(|t| DyadicInterval::new(-j, w, shift).and_then(|f| Tile::new(t, f)));
                    let packet = match tile.and_then(|t| make_wave_packet(&t, spec, osc, 4)) {
                        Ok(p) => p,
                        Err(e) => {
                            out.fail(format!("j = {j}, w = {w}: {e}"));
                            continue;
                        }
                    };
                    count += 1;
                    let norm = lp_norm(&packet.samples, 2.0).expect("finite exponent");
                    worst_norm = worst_norm.max((norm - 1.0).abs());
                    worst_decay = worst_decay.max(packet.decay_constant);
                    outside += usize::from(!spectral_support_within(&packet.samples, &packet.tile.freq, Q::new(9, 10)));
                }
            }
        }
    }
    out.check(outside == 0, format!("{outside} of {count} packets leave the 9/10 band"));
    out.check(worst_norm <= 1e-10, format!("max | ||Phi||_2 - 1 | = {worst_norm:.2e}"));
    out.check(worst_decay <= PACKET_DECAY_MAX, format!("max decay constant {worst_decay:.3} (ceiling {PACKET_DECAY_MAX})"));
    out
}

pub fn stopping_time_soundness() -> Outcome {
    preset_scan(8, "stopping-time decompositions recombine with disjoint families and bounded energy", ExperimentKind::DecompositionAudit, None)
}

pub fn taylor_split() -> Outcome {
    let mut out = Outcome::new(9, "Taylor split: identity within the tail, one remainder constant");
    let spec = GridSpec::new(2048, 64.0).expect("valid grid");
    let z = Shift::Zero;
    let iv = |j: i32, k: i64| DyadicInterval::new(j, k, z).expect("valid interval");
    for k0 in [2u32, 3, 4] {
        let (mut constant, mut worst, mut runs, mut broken) = (0.0f64, 0.0f64, 0, 0);
        for seed in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q_universe: Vec<TriTile> = (0..4)
                .map(|k| TriTile::new(iv(2, k), [iv(-2, 6 + seed as i64), iv(-2, 10), iv(-2, 14)]).expect("area one"))
                .collect();
            let p_universe = nested_p_universe(&q_universe, k0, [z; 3], 1);
            let fs: Vec<GridFunction> = (0..4).map(|_| SpatialSet::random_union(spec, &mut rng, 6, 0.4).indicator()).collect();
            for tree in build_trees(&q_universe, 1) {
                match taylor_split_tree(&tree, &p_universe, [&fs[0], &fs[1], &fs[2], &fs[3]], EtaProfile::Bump, 32, 4) {
                    Ok(split) => {
                        runs += 1;
                        let slack = split.tail_bound + 64.0 * f64::EPSILON * split.unsplit.norm();
                        broken += usize::from(split.defect() > slack);
                        if split.tail_bound > 0.0 {
                            worst = worst.max(split.defect() / split.tail_bound);
                        }
                        constant = constant.max(remainder_constant(&split.coefficients, 4));
                    }
                    Err(e) => out.fail(format!("k0 = {k0}, seed {seed}: {e}")),
                }
            }
        }
        out.check(broken == 0, format!("k0 = {k0}: {runs} splits, {broken} outside the tail, worst defect / tail = {worst:.3e}"));
        out.check(constant <= REMAINDER_C, format!("k0 = {k0}: remainder constant {constant:.3e} (ceiling {REMAINDER_C:.0e})"));
    }
    out
}

pub fn stack_count_bound() -> Outcome {
    let mut out = Outcome::new(10, "unit-scale stacks: constructed stacks reach the bound, random ones stay below");
    let spec = GridSpec::new(2048, 64.0).expect("valid grid");
    let z = Shift::Zero;
    let iv = |k: i64| DyadicInterval::new(0, k, z).expect("valid interval");
    for height in [4i64, 8] {
        let stack: Vec<TriTile> = (0..height).map(|k| TriTile::new(iv(5), [iv(k + 1); 3]).expect("area one")).collect();
        // Flat spectrum over the stacked bands, phased to peak at the centre of the stack interval.
        let hat = SpectralFunction::from_freq_fn(spec, |k| {
            let xi = k as f64 / spec.period();
            if (1.0..(height + 1) as f64).contains(&xi) {
                C64::from_polar(1.0, -2.0 * std::f64::consts::PI * xi * 5.5)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        match stack_count(&stack, &idft(&hat)) {
            Ok(r) => {
                let level = r.levels.iter().max_by(|a, b| a.ratio.total_cmp(&b.ratio));
                let ok = level.is_some_and(|l| l.ratio >= 1.0 / STACK_FACTOR && l.ratio <= STACK_FACTOR);
                let text = level.map_or("no level".to_string(), |l| format!("count {} against bound {:.2}", l.count, l.bound));
                out.check(ok, format!("constructed stack of {height}: {text}"));
            }
            Err(e) => out.fail(e.to_string()),
        }
    }
    let cfg = TileConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let u = random_rank1_universe(seed, &UniverseParams { size: 300, max_scale: 0, ..Default::default() }, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f2 = SpatialSet::random_union(spec, &mut rng, 8, 0.4).indicator();
        match stack_count(&u, &f2) {
            Ok(r) => worst = worst.max(r.max_ratio),
            Err(e) => out.fail(format!("seed {seed}: {e}")),
        }
    }
    out.check(worst <= STACK_C, format!("20 random universes: max count / bound = {worst:.4} (ceiling {STACK_C})"));
    out
}

pub fn restricted_type_scan() -> Outcome {
    let mut out = Outcome::new(11, "restricted-type scans near the extremal sets: bounded ratios, small exceptional set");
    let base = ExperimentConfig::preset(ExperimentKind::RestrictedType);
    for target in Extremal::ALL {
        let cfg = ExperimentConfig { target, ..base.clone() };
        match experiments::run(&cfg) {
            Ok(report) => out.absorb(&target.to_string(), &report),
            Err(e) => out.fail(format!("{target}: {e}")),
        }
    }
    out
}

/// Every criterion in order.
pub fn all() -> [fn() -> Outcome; 11] {
    [
        first_counterexample,
        second_counterexample,
        mixed_ratio_stability,
        oracle_equivalence,
        martingale_equipartition,
        whitney_property,
        wave_packet_contract,
        stopping_time_soundness,
        taylor_split,
        stack_count_bound,
        restricted_type_scan,
    ]
}
