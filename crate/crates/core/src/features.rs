//! Proxy objectives and the feature map φ(c).
//!
//! Everything here is derived from integer tallies (cut counts, degree sums,
//! per-cluster macro counts) plus tier area sums accumulated in macro order.
//! The annealer maintains the same tallies incrementally, so features built
//! on either path are bit-identical — archived candidates can always be
//! recomputed from scratch and compared exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{Netlist, Partition, Tier};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("unknown cluster label `{label}`")]
    UnknownCluster { label: String },
}

/// The two cheap objectives the search trades off, plus the raw tallies they
/// came from. `num_nets` rides along so cut_size has its denominator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyPoint {
    pub cut_size: u64,
    pub num_nets: u64,
    pub area_imbalance: f64,
    pub tier_areas: [f64; 2],
    pub macro_counts: [u64; 2],
}

impl ProxyPoint {
    /// Cut size normalized by net count (F1). Zero on a netless design.
    pub fn cut_fraction(&self) -> f64 {
        if self.num_nets == 0 {
            0.0
        } else {
            self.cut_size as f64 / self.num_nets as f64
        }
    }
}

/// φ(c): `[F1..F7, coh(h) for each cluster h in lexicographic label order]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        FeatureVector { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Integer summary of the cut-net population. min/max are 0 when nothing is
/// cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub(crate) struct CutStats {
    pub cut_size: u64,
    pub num_nets: u64,
    pub degree_min: u64,
    pub degree_max: u64,
    pub degree_sum: u64,
    pub degree_sumsq: u64,
}

/// Per-tier tallies plus bottom-tier macro counts per cluster (M_{h,1}).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TierTally {
    pub areas: [f64; 2],
    pub macro_counts: [u64; 2],
    pub cluster_bottom: Vec<u64>,
    pub cluster_macros: Vec<u64>,
}

pub(crate) fn tier_tally(netlist: &Netlist, tiers: &[Tier]) -> TierTally {
    let mut areas = [0.0f64; 2];
    let mut macro_counts = [0u64; 2];
    let mut cluster_bottom = vec![0u64; netlist.clusters().len()];
    let mut cluster_macros = vec![0u64; netlist.clusters().len()];
    for (mp, &ci) in netlist.macro_cells().iter().enumerate() {
        let tier = tiers[mp];
        areas[tier.index()] += netlist.cells()[ci as usize].area;
        macro_counts[tier.index()] += 1;
        let cl = netlist.macro_cluster()[mp] as usize;
        cluster_macros[cl] += 1;
        if tier == Tier::Bottom {
            cluster_bottom[cl] += 1;
        }
    }
    TierTally {
        areas,
        macro_counts,
        cluster_bottom,
        cluster_macros,
    }
}

pub(crate) fn scan_cut_stats(netlist: &Netlist, tiers: &[Tier]) -> CutStats {
    let mut stats = CutStats {
        num_nets: netlist.nets().len() as u64,
        degree_min: u64::MAX,
        ..CutStats::default()
    };
    for (ni, net) in netlist.nets().iter().enumerate() {
        let top = netlist.net_macro_pins()[ni]
            .iter()
            .filter(|&&mp| tiers[mp as usize] == Tier::Top)
            .count();
        let degree = net.degree();
        if top > 0 && top < degree {
            let d = degree as u64;
            stats.cut_size += 1;
            stats.degree_min = stats.degree_min.min(d);
            stats.degree_max = stats.degree_max.max(d);
            stats.degree_sum += d;
            stats.degree_sumsq += d * d;
        }
    }
    if stats.cut_size == 0 {
        stats.degree_min = 0;
    }
    stats
}

pub(crate) fn proxy_from(stats: &CutStats, tally: &TierTally) -> ProxyPoint {
    let [a1, a2] = tally.areas;
    let total = a1 + a2;
    let area_imbalance = if total > 0.0 { (a1 - a2).abs() / total } else { 0.0 };
    ProxyPoint {
        cut_size: stats.cut_size,
        num_nets: stats.num_nets,
        area_imbalance,
        tier_areas: tally.areas,
        macro_counts: tally.macro_counts,
    }
}

fn cohesion_ratio(s_h: u64, m_h: u64, m_bottom: u64) -> f64 {
    let pairs = |n: u64| n * n.saturating_sub(1) / 2;
    let num = s_h * m_bottom + pairs(m_bottom);
    let den = s_h * m_h + pairs(m_h);
    // A macro-free cluster (and the lone-macro, logic-free corner) has no
    // pair to separate: fully cohesive.
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub(crate) fn features_from(netlist: &Netlist, stats: &CutStats, tally: &TierTally) -> FeatureVector {
    let mut values = Vec::with_capacity(7 + netlist.clusters().len());
    let proxy = proxy_from(stats, tally);
    values.push(proxy.cut_fraction());
    values.push(proxy.area_imbalance);
    let [m1, m2] = tally.macro_counts;
    values.push((m1 as f64 - m2 as f64).abs() / (m1 + m2) as f64);
    if stats.cut_size == 0 {
        values.extend_from_slice(&[0.0; 4]);
    } else {
        let n = stats.cut_size as f64;
        let mean = stats.degree_sum as f64 / n;
        let var = (stats.degree_sumsq as f64 / n - mean * mean).max(0.0);
        values.push(stats.degree_min as f64);
        values.push(stats.degree_max as f64);
        values.push(mean);
        values.push(var.sqrt());
    }
    for (h, &s_h) in netlist.logic_per_cluster().iter().enumerate() {
        values.push(cohesion_ratio(s_h, tally.cluster_macros[h], tally.cluster_bottom[h]));
    }
    FeatureVector::new(values)
}

fn tiers_of(netlist: &Netlist, partition: &Partition) -> Vec<Tier> {
    netlist
        .tier_vec(partition)
        .expect("partition must cover exactly the netlist's macros")
}

/// Number of nets with pins on both tiers. Logic pins anchor their net to the
/// bottom tier.
pub fn cut_size(netlist: &Netlist, partition: &Partition) -> u64 {
    scan_cut_stats(netlist, &tiers_of(netlist, partition)).cut_size
}

/// Cut and imbalance tallies for one partition.
pub fn proxy_point(netlist: &Netlist, partition: &Partition) -> ProxyPoint {
    let tiers = tiers_of(netlist, partition);
    proxy_from(&scan_cut_stats(netlist, &tiers), &tier_tally(netlist, &tiers))
}

/// F1–F7 as a fixed-size array.
pub fn proxy_features(netlist: &Netlist, partition: &Partition) -> [f64; 7] {
    let tiers = tiers_of(netlist, partition);
    let fv = features_from(
        netlist,
        &scan_cut_stats(netlist, &tiers),
        &tier_tally(netlist, &tiers),
    );
    fv.as_slice()[..7].try_into().unwrap()
}

/// Bottom-tier cohesion of one cluster:
/// (S_h·M_{h,b} + C(M_{h,b},2)) / (S_h·M_h + C(M_h,2)), where M_{h,b} counts
/// the cluster's macros that stayed on the bottom tier.
pub fn cohesion(netlist: &Netlist, partition: &Partition, cluster: &str) -> Result<f64, FeatureError> {
    let pos = netlist
        .clusters()
        .iter()
        .position(|c| c == cluster)
        .ok_or_else(|| FeatureError::UnknownCluster {
            label: cluster.to_string(),
        })?;
    let tiers = tiers_of(netlist, partition);
    let tally = tier_tally(netlist, &tiers);
    Ok(cohesion_ratio(
        netlist.logic_per_cluster()[pos],
        tally.cluster_macros[pos],
        tally.cluster_bottom[pos],
    ))
}

/// The full feature map φ(c). Dimension is 7 + cluster count, constant per
/// netlist.
pub fn feature_vector(netlist: &Netlist, partition: &Partition) -> FeatureVector {
    let tiers = tiers_of(netlist, partition);
    features_from(
        netlist,
        &scan_cut_stats(netlist, &tiers),
        &tier_tally(netlist, &tiers),
    )
}

/// Search objective: w_cut·F1 + w_bal·F2. Both terms already sit in [0,1].
pub fn sa_objective(proxy: &ProxyPoint, w_cut: f64, w_bal: f64) -> f64 {
    w_cut * proxy.cut_fraction() + w_bal * proxy.area_imbalance
}
