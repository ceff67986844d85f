//! Simulated annealing over tier assignments with a grid-shaped archive that
//! retains proxy-diverse candidates.
//!
//! The annealer walks single-macro flips under Metropolis acceptance on the
//! weighted proxy objective with geometric cooling. A warmup prefix of the
//! trajectory only observes proxy values to fix the archive's grid bounds;
//! afterwards every visited partition (proposals included, by default) is
//! offered to the archive. Cut bookkeeping is incremental — a flip touches
//! exactly the nets incident to that macro — while the tallies that become
//! candidate features are integers plus macro-ordered area sums, so archived
//! features match a from-scratch recomputation bit for bit.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{features_from, proxy_from, sa_objective, tier_tally, CutStats, FeatureVector, ProxyPoint};
use crate::netlist::{random_partition_with, Netlist, Partition, Tier};

#[derive(Debug, Error, PartialEq)]
pub enum SaConfigError {
    #[error("iterations must be ≥ 1")]
    Iterations,
    #[error("initial_temperature must be positive and finite")]
    Temperature,
    #[error("cooling_rate must lie in (0, 1)")]
    CoolingRate,
    #[error("warmup_fraction must lie in (0, 1)")]
    WarmupFraction,
    #[error("grid_resolution must be ≥ 1")]
    Resolution,
    #[error("proxy weights must be non-negative with a positive sum")]
    Weights,
}

/// Search knobs. Everything is config-exposed; the defaults are the ones the
/// rest of the toolkit assumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaConfig {
    pub iterations: usize,
    pub initial_temperature: f64,
    pub cooling_rate: f64,
    pub w_cut: f64,
    pub w_bal: f64,
    pub warmup_fraction: f64,
    pub grid_resolution: u32,
    pub seed: u64,
    /// Offer every proposed state to the archive (default), or only accepted
    /// ones.
    pub offer_all_proposals: bool,
}

impl Default for SaConfig {
    fn default() -> Self {
        SaConfig {
            iterations: 20_000,
            initial_temperature: 1.0,
            cooling_rate: 0.995,
            w_cut: 0.8,
            w_bal: 0.2,
            warmup_fraction: 0.1,
            grid_resolution: 16,
            seed: 0,
            offer_all_proposals: true,
        }
    }
}

impl SaConfig {
    pub fn validate(&self) -> Result<(), SaConfigError> {
        if self.iterations < 1 {
            return Err(SaConfigError::Iterations);
        }
        if !(self.initial_temperature.is_finite() && self.initial_temperature > 0.0) {
            return Err(SaConfigError::Temperature);
        }
        if !(self.cooling_rate > 0.0 && self.cooling_rate < 1.0) {
            return Err(SaConfigError::CoolingRate);
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(SaConfigError::WarmupFraction);
        }
        if self.grid_resolution < 1 {
            return Err(SaConfigError::Resolution);
        }
        if !(self.w_cut >= 0.0 && self.w_bal >= 0.0 && self.w_cut + self.w_bal > 0.0) {
            return Err(SaConfigError::Weights);
        }
        Ok(())
    }

    /// Warmup prefix length: at least one iteration, and when possible at
    /// least one post-warmup iteration too.
    pub fn warmup_iterations(&self) -> usize {
        let raw = (self.iterations as f64 * self.warmup_fraction).floor() as usize;
        let lo = raw.max(1);
        if self.iterations >= 2 {
            lo.min(self.iterations - 1)
        } else {
            lo.min(self.iterations)
        }
    }
}

/// One retained search point: the partition, its proxy tallies, and φ(c).
/// `uid` is the order in which distinct partitions were first offered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub uid: u64,
    pub partition: Partition,
    pub proxy: ProxyPoint,
    pub features: FeatureVector,
}

/// Maps a proxy point into grid coordinates: per axis log(1+x), min-max
/// scaled against `bounds`, clamped to [0,1], floored into `resolution` bins.
pub fn grid_key(proxy: &ProxyPoint, bounds: &[[f64; 2]; 2], resolution: u32) -> (u32, u32) {
    let axis = |value: f64, [lo, hi]: [f64; 2]| -> u32 {
        let v = value.ln_1p();
        let norm = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
        ((norm * resolution as f64).floor() as u32).min(resolution - 1)
    };
    (
        axis(proxy.cut_size as f64, bounds[0]),
        axis(proxy.area_imbalance, bounds[1]),
    )
}

/// Fixed 2D grid over log-proxy space holding at most one candidate per cell.
#[derive(Debug, Clone)]
pub struct GridArchive {
    resolution: u32,
    bounds: [[f64; 2]; 2],
    cells: BTreeMap<(u32, u32), Candidate>,
}

impl GridArchive {
    pub fn new(resolution: u32, bounds: [[f64; 2]; 2]) -> Self {
        assert!(resolution >= 1);
        GridArchive {
            resolution,
            bounds,
            cells: BTreeMap::new(),
        }
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn bounds(&self) -> &[[f64; 2]; 2] {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn key_of(&self, proxy: &ProxyPoint) -> (u32, u32) {
        grid_key(proxy, &self.bounds, self.resolution)
    }

    /// Offers a candidate. An empty cell stores it; an occupied cell is
    /// replaced only when the newcomer is at least as good on BOTH cut size
    /// and area imbalance (most recent kept on exact ties).
    pub fn insert(&mut self, candidate: Candidate) -> bool {
        let key = self.key_of(&candidate.proxy);
        match self.cells.get(&key) {
            None => {
                self.cells.insert(key, candidate);
                true
            }
            Some(stored) => {
                let better_or_equal = candidate.proxy.cut_size <= stored.proxy.cut_size
                    && candidate.proxy.area_imbalance <= stored.proxy.area_imbalance;
                if better_or_equal {
                    self.cells.insert(key, candidate);
                    true
                } else {
                    false
                }
            }
        }
    }

    /// Archive contents ordered by uid.
    pub fn into_candidates(self) -> Vec<Candidate> {
        let mut out: Vec<Candidate> = self.cells.into_values().collect();
        out.sort_by_key(|c| c.uid);
        out
    }
}

/// Incremental cut bookkeeping. `top_pins[net]` counts pins sitting on the
/// top tier; a net is cut iff that count is neither zero nor the degree.
struct CutTracker {
    top_pins: Vec<u32>,
    cut_size: u64,
    num_nets: u64,
    // degree -> count of cut nets with that degree; keeps exact min/max under
    // removal.
    degree_counts: BTreeMap<u32, u64>,
    degree_sum: u64,
    degree_sumsq: u64,
}

impl CutTracker {
    fn new(netlist: &Netlist, tiers: &[Tier]) -> Self {
        let mut tracker = CutTracker {
            top_pins: vec![0; netlist.nets().len()],
            cut_size: 0,
            num_nets: netlist.nets().len() as u64,
            degree_counts: BTreeMap::new(),
            degree_sum: 0,
            degree_sumsq: 0,
        };
        for (ni, net) in netlist.nets().iter().enumerate() {
            let top = netlist.net_macro_pins()[ni]
                .iter()
                .filter(|&&mp| tiers[mp as usize] == Tier::Top)
                .count() as u32;
            tracker.top_pins[ni] = top;
            if top > 0 && (top as usize) < net.degree() {
                tracker.add_cut(net.degree() as u32);
            }
        }
        tracker
    }

    fn add_cut(&mut self, degree: u32) {
        self.cut_size += 1;
        *self.degree_counts.entry(degree).or_insert(0) += 1;
        self.degree_sum += degree as u64;
        self.degree_sumsq += (degree as u64) * (degree as u64);
    }

    fn remove_cut(&mut self, degree: u32) {
        self.cut_size -= 1;
        let slot = self.degree_counts.get_mut(&degree).expect("degree tracked");
        *slot -= 1;
        if *slot == 0 {
            self.degree_counts.remove(&degree);
        }
        self.degree_sum -= degree as u64;
        self.degree_sumsq -= (degree as u64) * (degree as u64);
    }

    /// Applies one macro flip. `to_top` is the direction of the move.
    fn apply_flip(&mut self, netlist: &Netlist, macro_pos: usize, to_top: bool) {
        for &ni in &netlist.macro_nets()[macro_pos] {
            let degree = netlist.nets()[ni as usize].degree() as u32;
            let old = self.top_pins[ni as usize];
            let new = if to_top { old + 1 } else { old - 1 };
            let was_cut = old > 0 && old < degree;
            let now_cut = new > 0 && new < degree;
            match (was_cut, now_cut) {
                (false, true) => self.add_cut(degree),
                (true, false) => self.remove_cut(degree),
                _ => {}
            }
            self.top_pins[ni as usize] = new;
        }
    }

    fn stats(&self) -> CutStats {
        CutStats {
            cut_size: self.cut_size,
            num_nets: self.num_nets,
            degree_min: self.degree_counts.keys().next().map_or(0, |&d| d as u64),
            degree_max: self.degree_counts.keys().next_back().map_or(0, |&d| d as u64),
            degree_sum: self.degree_sum,
            degree_sumsq: self.degree_sumsq,
        }
    }
}

fn pack_tiers(tiers: &[Tier]) -> Vec<u64> {
    let mut packed = vec![0u64; tiers.len().div_ceil(64)];
    for (i, t) in tiers.iter().enumerate() {
        if *t == Tier::Top {
            packed[i / 64] |= 1 << (i % 64);
        }
    }
    packed
}

/// Runs the search and returns the archive contents ordered by uid. Same
/// (netlist, config) in, byte-identical candidate set out.
pub fn anneal(netlist: &Netlist, config: &SaConfig) -> Vec<Candidate> {
    config.validate().expect("config must satisfy SaConfig invariants");
    let warmup = config.warmup_iterations();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let initial = random_partition_with(netlist, &mut rng);
    let mut tiers = netlist.tier_vec(&initial).expect("fresh partition covers all macros");
    let mut tracker = CutTracker::new(netlist, &tiers);

    let proxy_of = |tracker: &CutTracker, tiers: &[Tier]| -> ProxyPoint {
        proxy_from(&tracker.stats(), &tier_tally(netlist, tiers))
    };

    let initial_proxy = proxy_of(&tracker, &tiers);
    let mut current_obj = sa_objective(&initial_proxy, config.w_cut, config.w_bal);

    // Warmup accumulators in log(1+x) space.
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let observe = |proxy: &ProxyPoint, lo: &mut [f64; 2], hi: &mut [f64; 2]| {
        let axes = [(proxy.cut_size as f64).ln_1p(), proxy.area_imbalance.ln_1p()];
        for (i, v) in axes.into_iter().enumerate() {
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    };
    observe(&initial_proxy, &mut lo, &mut hi);

    let mut archive: Option<GridArchive> = None;
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut next_uid = 0u64;

    let offer = |archive: &mut GridArchive,
                     seen: &mut HashSet<Vec<u64>>,
                     next_uid: &mut u64,
                     tracker: &CutTracker,
                     tiers: &[Tier]| {
        if !seen.insert(pack_tiers(tiers)) {
            return;
        }
        let stats = tracker.stats();
        let tally = tier_tally(netlist, tiers);
        let candidate = Candidate {
            uid: *next_uid,
            partition: netlist.partition_from_tiers(tiers),
            proxy: proxy_from(&stats, &tally),
            features: features_from(netlist, &stats, &tally),
        };
        *next_uid += 1;
        archive.insert(candidate);
    };

    let mut temperature = config.initial_temperature;
    let macro_count = netlist.macro_count();
    for it in 0..config.iterations {
        if it == warmup {
            let bounds = [[lo[0], hi[0]], [lo[1], hi[1]]];
            let mut grid = GridArchive::new(config.grid_resolution, bounds);
            // The state the walk currently occupies is a visited state too.
            offer(&mut grid, &mut seen, &mut next_uid, &tracker, &tiers);
            archive = Some(grid);
        }

        let mp = rng.random_range(0..macro_count);
        let to_top = tiers[mp] == Tier::Bottom;
        tracker.apply_flip(netlist, mp, to_top);
        tiers[mp] = tiers[mp].flipped();

        let proposed = proxy_of(&tracker, &tiers);
        let proposed_obj = sa_objective(&proposed, config.w_cut, config.w_bal);

        match archive.as_mut() {
            None => observe(&proposed, &mut lo, &mut hi),
            Some(grid) => {
                if config.offer_all_proposals {
                    offer(grid, &mut seen, &mut next_uid, &tracker, &tiers);
                }
            }
        }

        let delta = proposed_obj - current_obj;
        let accepted = delta <= 0.0 || rng.random::<f64>() < (-delta / temperature).exp();
        if accepted {
            if let (Some(grid), false) = (archive.as_mut(), config.offer_all_proposals) {
                offer(grid, &mut seen, &mut next_uid, &tracker, &tiers);
            }
            current_obj = proposed_obj;
        } else {
            tracker.apply_flip(netlist, mp, !to_top);
            tiers[mp] = tiers[mp].flipped();
        }

        temperature *= config.cooling_rate;
    }

    archive.map(GridArchive::into_candidates).unwrap_or_default()
}
