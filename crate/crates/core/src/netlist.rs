//! Hypergraph netlist model and the line-oriented `.nl` interchange format.
//!
//! A netlist is a set of cells (standard logic or macros) connected by nets
//! with two or more pins. Logic stays on the bottom tier; only macros move.
//! Areas are canonicalized to 12 significant decimal digits on construction so
//! that a serialize/parse cycle reproduces the in-memory value exactly.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetlistError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("missing `design` header line")]
    MissingHeader,
    #[error("duplicate cell id `{id}`")]
    DuplicateCell { id: String },
    #[error("duplicate net id `{id}`")]
    DuplicateNet { id: String },
    #[error("net `{net}` references unknown cell `{pin}`")]
    DanglingPin { net: String, pin: String },
    #[error("net `{net}` lists pin `{pin}` more than once")]
    DuplicatePin { net: String, pin: String },
    #[error("net `{net}` has {pins} pin(s); nets need at least 2")]
    NetTooFewPins { net: String, pins: usize },
    #[error("cell `{cell}`: area must be positive and finite")]
    InvalidArea { cell: String },
    #[error("netlist has no macro cells")]
    NoMacros,
    #[error("`{id}` is not a macro of this partition")]
    UnknownMacro { id: String },
    #[error("partition does not cover macro `{id}`")]
    MissingMacro { id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Logic,
    Macro,
}

/// One placeable instance. `cluster` is the hierarchy label used for the
/// cohesion features; logic cells contribute to cluster sizes, macros to the
/// movable set.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: String,
    pub area: f64,
    pub kind: CellKind,
    pub cluster: String,
}

/// A hyperedge. Pins are stored as indices into the owning netlist's cell
/// vector; duplicate pins are rejected at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    pub id: String,
    pins: Vec<u32>,
}

impl Net {
    pub fn pins(&self) -> &[u32] {
        &self.pins
    }

    pub fn degree(&self) -> usize {
        self.pins.len()
    }
}

/// Tier assignment for one macro. Bottom is where all logic lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tier {
    Bottom,
    Top,
}

impl Tier {
    pub fn flipped(self) -> Tier {
        match self {
            Tier::Bottom => Tier::Top,
            Tier::Top => Tier::Bottom,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Tier::Bottom => 0,
            Tier::Top => 1,
        }
    }
}

impl Serialize for Tier {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.index() as u8)
    }
}

impl<'de> Deserialize<'de> for Tier {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(Tier::Bottom),
            1 => Ok(Tier::Top),
            other => Err(D::Error::custom(format!("tier must be 0 or 1, got {other}"))),
        }
    }
}

/// Macro-to-tier assignment. The domain is exactly the macro set of one
/// netlist; logic cells are implicitly on the bottom tier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    assignment: BTreeMap<String, Tier>,
}

impl Partition {
    pub fn new(assignment: BTreeMap<String, Tier>) -> Self {
        Partition { assignment }
    }

    pub fn assignment(&self) -> &BTreeMap<String, Tier> {
        &self.assignment
    }

    pub fn tier_of(&self, macro_id: &str) -> Option<Tier> {
        self.assignment.get(macro_id).copied()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }
}

/// Returns a copy of `partition` with `macro_id` moved to the other tier.
/// The input is left untouched; flipping twice restores the original.
pub fn flip_macro(partition: &Partition, macro_id: &str) -> Result<Partition, NetlistError> {
    let mut next = partition.clone();
    match next.assignment.get_mut(macro_id) {
        Some(tier) => {
            *tier = tier.flipped();
            Ok(next)
        }
        None => Err(NetlistError::UnknownMacro {
            id: macro_id.to_string(),
        }),
    }
}

/// Uniform random tier per macro, reproducible for a given seed.
pub fn random_partition(netlist: &Netlist, seed: u64) -> Partition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_partition_with(netlist, &mut rng)
}

pub(crate) fn random_partition_with(netlist: &Netlist, rng: &mut impl Rng) -> Partition {
    let mut assignment = BTreeMap::new();
    for &ci in netlist.macro_cells() {
        let tier = if rng.random::<bool>() { Tier::Top } else { Tier::Bottom };
        assignment.insert(netlist.cells[ci as usize].id.clone(), tier);
    }
    Partition { assignment }
}

/// Validated hypergraph with the derived lookups the search and feature code
/// lean on. Construction enforces every type invariant, so downstream code
/// can index without checking.
#[derive(Debug, Clone)]
pub struct Netlist {
    name: String,
    cells: Vec<Cell>,
    nets: Vec<Net>,
    // Derived, all deterministic functions of (cells, nets):
    macro_cells: Vec<u32>,            // cell indices of macros, in cell order
    clusters: Vec<String>,            // lexicographically sorted labels
    logic_per_cluster: Vec<u64>,      // S_h aligned with `clusters`
    macro_cluster: Vec<u32>,          // macro position -> cluster position
    net_macro_pins: Vec<Vec<u32>>,    // per net: macro positions among its pins
    net_logic_pins: Vec<u32>,         // per net: count of logic pins
    macro_nets: Vec<Vec<u32>>,        // macro position -> incident net indices
}

impl PartialEq for Netlist {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.cells == other.cells && self.nets == other.nets
    }
}

impl Netlist {
    /// Builds a netlist from raw parts. Net pins are cell ids; areas are
    /// canonicalized to 12 significant digits.
    pub fn new(
        name: &str,
        cells: Vec<Cell>,
        nets: Vec<(String, Vec<String>)>,
    ) -> Result<Netlist, NetlistError> {
        let mut cell_index: HashMap<&str, u32> = HashMap::with_capacity(cells.len());
        for (i, cell) in cells.iter().enumerate() {
            if cell_index.insert(&cell.id, i as u32).is_some() {
                return Err(NetlistError::DuplicateCell { id: cell.id.clone() });
            }
            if !(cell.area.is_finite() && cell.area > 0.0) {
                return Err(NetlistError::InvalidArea { cell: cell.id.clone() });
            }
        }
        let mut resolved = Vec::with_capacity(nets.len());
        let mut net_ids: HashMap<&str, ()> = HashMap::with_capacity(nets.len());
        for (id, pins) in &nets {
            if net_ids.insert(id, ()).is_some() {
                return Err(NetlistError::DuplicateNet { id: id.clone() });
            }
            if pins.len() < 2 {
                return Err(NetlistError::NetTooFewPins {
                    net: id.clone(),
                    pins: pins.len(),
                });
            }
            let mut seen: HashMap<u32, ()> = HashMap::with_capacity(pins.len());
            let mut indices = Vec::with_capacity(pins.len());
            for pin in pins {
                let ci = *cell_index.get(pin.as_str()).ok_or_else(|| NetlistError::DanglingPin {
                    net: id.clone(),
                    pin: pin.clone(),
                })?;
                if seen.insert(ci, ()).is_some() {
                    return Err(NetlistError::DuplicatePin {
                        net: id.clone(),
                        pin: pin.clone(),
                    });
                }
                indices.push(ci);
            }
            resolved.push(Net {
                id: id.clone(),
                pins: indices,
            });
        }

        let mut cells = cells;
        for cell in &mut cells {
            cell.area = canonical_area(cell.area);
        }

        let netlist = Netlist::from_validated(name.to_string(), cells, resolved)?;
        Ok(netlist)
    }

    fn from_validated(name: String, cells: Vec<Cell>, nets: Vec<Net>) -> Result<Netlist, NetlistError> {
        let mut macro_cells = Vec::new();
        let mut macro_index_of_cell = vec![None; cells.len()];
        for (i, cell) in cells.iter().enumerate() {
            if cell.kind == CellKind::Macro {
                macro_index_of_cell[i] = Some(macro_cells.len() as u32);
                macro_cells.push(i as u32);
            }
        }
        if macro_cells.is_empty() {
            return Err(NetlistError::NoMacros);
        }

        let mut clusters: Vec<String> = cells.iter().map(|c| c.cluster.clone()).collect();
        clusters.sort_unstable();
        clusters.dedup();
        let cluster_pos: HashMap<&str, u32> = clusters
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i as u32))
            .collect();

        let mut logic_per_cluster = vec![0u64; clusters.len()];
        let mut macro_cluster = vec![0u32; macro_cells.len()];
        for (i, cell) in cells.iter().enumerate() {
            let cp = cluster_pos[cell.cluster.as_str()];
            match cell.kind {
                CellKind::Logic => logic_per_cluster[cp as usize] += 1,
                CellKind::Macro => {
                    macro_cluster[macro_index_of_cell[i].unwrap() as usize] = cp;
                }
            }
        }

        let mut net_macro_pins = Vec::with_capacity(nets.len());
        let mut net_logic_pins = Vec::with_capacity(nets.len());
        let mut macro_nets = vec![Vec::new(); macro_cells.len()];
        for (ni, net) in nets.iter().enumerate() {
            let mut macro_pins = Vec::new();
            let mut logic_pins = 0u32;
            for &ci in &net.pins {
                match macro_index_of_cell[ci as usize] {
                    Some(mp) => {
                        macro_pins.push(mp);
                        macro_nets[mp as usize].push(ni as u32);
                    }
                    None => logic_pins += 1,
                }
            }
            net_macro_pins.push(macro_pins);
            net_logic_pins.push(logic_pins);
        }

        Ok(Netlist {
            name,
            cells,
            nets,
            macro_cells,
            clusters,
            logic_per_cluster,
            macro_cluster,
            net_macro_pins,
            net_logic_pins,
            macro_nets,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn nets(&self) -> &[Net] {
        &self.nets
    }

    /// Cell indices of the macros, in cell order. A macro's position in this
    /// slice is its "macro position" used throughout the search code.
    pub fn macro_cells(&self) -> &[u32] {
        &self.macro_cells
    }

    pub fn macro_count(&self) -> usize {
        self.macro_cells.len()
    }

    pub fn macro_id(&self, macro_pos: usize) -> &str {
        &self.cells[self.macro_cells[macro_pos] as usize].id
    }

    /// Cluster labels, lexicographically sorted. Feature vectors carry one
    /// cohesion entry per label in exactly this order.
    pub fn clusters(&self) -> &[String] {
        &self.clusters
    }

    /// Logic-cell count per cluster, aligned with `clusters()`.
    pub fn logic_per_cluster(&self) -> &[u64] {
        &self.logic_per_cluster
    }

    /// Cluster position of each macro, aligned with `macro_cells()`.
    pub fn macro_cluster(&self) -> &[u32] {
        &self.macro_cluster
    }

    /// Macro positions appearing among each net's pins.
    pub fn net_macro_pins(&self) -> &[Vec<u32>] {
        &self.net_macro_pins
    }

    /// Logic pin count of each net.
    pub fn net_logic_pins(&self) -> &[u32] {
        &self.net_logic_pins
    }

    /// Incident net indices of each macro position.
    pub fn macro_nets(&self) -> &[Vec<u32>] {
        &self.macro_nets
    }

    /// Checks that `partition` covers exactly this netlist's macro set.
    pub fn check_partition(&self, partition: &Partition) -> Result<(), NetlistError> {
        for &ci in &self.macro_cells {
            let id = &self.cells[ci as usize].id;
            if partition.tier_of(id).is_none() {
                return Err(NetlistError::MissingMacro { id: id.clone() });
            }
        }
        if partition.len() != self.macro_cells.len() {
            for id in partition.assignment.keys() {
                let known = self
                    .cells
                    .iter()
                    .any(|c| c.kind == CellKind::Macro && &c.id == id);
                if !known {
                    return Err(NetlistError::UnknownMacro { id: id.clone() });
                }
            }
        }
        Ok(())
    }

    /// Tier of each macro position under `partition`.
    pub fn tier_vec(&self, partition: &Partition) -> Result<Vec<Tier>, NetlistError> {
        self.check_partition(partition)?;
        Ok(self
            .macro_cells
            .iter()
            .map(|&ci| partition.tier_of(&self.cells[ci as usize].id).unwrap())
            .collect())
    }

    /// Rebuilds a `Partition` from a tier-per-macro-position vector.
    pub(crate) fn partition_from_tiers(&self, tiers: &[Tier]) -> Partition {
        debug_assert_eq!(tiers.len(), self.macro_cells.len());
        let mut assignment = BTreeMap::new();
        for (mp, &ci) in self.macro_cells.iter().enumerate() {
            assignment.insert(self.cells[ci as usize].id.clone(), tiers[mp]);
        }
        Partition { assignment }
    }
}

/// Rounds to 12 significant decimal digits: the canonical on-disk precision.
/// Values produced here survive a serialize/parse cycle bit-exactly because
/// the shortest round-trip rendering of the result never needs more digits
/// than the decimal it was parsed from.
pub fn canonical_area(area: f64) -> f64 {
    format!("{area:.11e}").parse::<f64>().expect("12-digit decimal always parses")
}

struct Token<'a> {
    text: &'a str,
    column: usize, // 1-based byte column
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token {
                    text: &line[s..i],
                    column: s + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &line[s..],
            column: s + 1,
        });
    }
    out
}

fn syntax(line: usize, column: usize, message: impl fmt::Display) -> NetlistError {
    NetlistError::Syntax {
        line,
        column,
        message: message.to_string(),
    }
}

/// Parses the `.nl` format. Record kinds may appear in any order; pins are
/// resolved once the whole document is read. `#` starts a full-line comment.
pub fn parse_netlist(text: &str) -> Result<Netlist, NetlistError> {
    let mut name: Option<String> = None;
    let mut cells: Vec<Cell> = Vec::new();
    let mut nets: Vec<(String, Vec<String>)> = Vec::new();

    for (li, raw) in text.lines().enumerate() {
        let line_no = li + 1;
        let tokens = tokenize(raw);
        match tokens.first() {
            None => continue,
            Some(t) if t.text.starts_with('#') => continue,
            Some(t) => match t.text {
                "design" => {
                    if tokens.len() != 2 {
                        return Err(syntax(line_no, t.column, "expected `design <name>`"));
                    }
                    if name.is_some() {
                        return Err(syntax(line_no, t.column, "second `design` line"));
                    }
                    name = Some(tokens[1].text.to_string());
                }
                "cell" => {
                    if tokens.len() != 5 {
                        return Err(syntax(
                            line_no,
                            t.column,
                            "expected `cell <id> <area> <logic|macro> <cluster>`",
                        ));
                    }
                    let area: f64 = tokens[2].text.parse().map_err(|_| {
                        syntax(line_no, tokens[2].column, "area is not a number")
                    })?;
                    let kind = match tokens[3].text {
                        "logic" => CellKind::Logic,
                        "macro" => CellKind::Macro,
                        other => {
                            return Err(syntax(
                                line_no,
                                tokens[3].column,
                                format!("cell kind must be `logic` or `macro`, got `{other}`"),
                            ))
                        }
                    };
                    cells.push(Cell {
                        id: tokens[1].text.to_string(),
                        area,
                        kind,
                        cluster: tokens[4].text.to_string(),
                    });
                }
                "net" => {
                    if tokens.len() < 2 {
                        return Err(syntax(line_no, t.column, "expected `net <id> <pin...>`"));
                    }
                    let pins = tokens[2..].iter().map(|t| t.text.to_string()).collect();
                    nets.push((tokens[1].text.to_string(), pins));
                }
                other => {
                    return Err(syntax(
                        line_no,
                        t.column,
                        format!("unknown record `{other}`"),
                    ))
                }
            },
        }
    }

    let name = name.ok_or(NetlistError::MissingHeader)?;
    Netlist::new(&name, cells, nets)
}

/// Canonical rendering: header, cells in stored order, nets in stored order.
/// `parse_netlist(serialize_netlist(n)) == n`, and re-serializing the parse
/// reproduces the bytes.
pub fn serialize_netlist(netlist: &Netlist) -> String {
    let mut out = String::new();
    out.push_str("design ");
    out.push_str(&netlist.name);
    out.push('\n');
    for cell in &netlist.cells {
        let kind = match cell.kind {
            CellKind::Logic => "logic",
            CellKind::Macro => "macro",
        };
        out.push_str(&format!(
            "cell {} {} {} {}\n",
            cell.id, cell.area, kind, cell.cluster
        ));
    }
    for net in &netlist.nets {
        out.push_str("net ");
        out.push_str(&net.id);
        for &pin in &net.pins {
            out.push(' ');
            out.push_str(&netlist.cells[pin as usize].id);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc() -> &'static str {
        "# two macros, one logic cell\n\
         design tiny\n\
         cell m0 12.5 macro mem\n\
         cell m1 4.25 macro mem\n\
         cell l0 1.0 logic ctl\n\
         net n0 m0 l0\n\
         net n1 m0 m1 l0\n"
    }

    #[test]
    fn parses_minimal_document() {
        let n = parse_netlist(doc()).unwrap();
        assert_eq!(n.name(), "tiny");
        assert_eq!(n.cells().len(), 3);
        assert_eq!(n.nets().len(), 2);
        assert_eq!(n.macro_count(), 2);
        assert_eq!(n.clusters(), &["ctl".to_string(), "mem".to_string()]);
        assert_eq!(n.logic_per_cluster(), &[1, 0]);
        assert_eq!(n.nets()[1].degree(), 3);
    }

    #[test]
    fn reports_dangling_pin_by_name() {
        let text = "design d\ncell m0 1.0 macro c\ncell l0 1.0 logic c\nnet n0 m0 m9\n";
        let err = parse_netlist(text).unwrap_err();
        assert_eq!(
            err,
            NetlistError::DanglingPin {
                net: "n0".into(),
                pin: "m9".into()
            }
        );
    }

    #[test]
    fn rejects_duplicate_ids_and_short_nets() {
        let dup_cell = "design d\ncell a 1.0 macro c\ncell a 2.0 logic c\nnet n a a\n";
        assert_eq!(
            parse_netlist(dup_cell).unwrap_err(),
            NetlistError::DuplicateCell { id: "a".into() }
        );
        let dup_net = "design d\ncell a 1.0 macro c\ncell b 1.0 logic c\nnet n a b\nnet n b a\n";
        assert_eq!(
            parse_netlist(dup_net).unwrap_err(),
            NetlistError::DuplicateNet { id: "n".into() }
        );
        let short = "design d\ncell a 1.0 macro c\nnet n a\n";
        assert_eq!(
            parse_netlist(short).unwrap_err(),
            NetlistError::NetTooFewPins { net: "n".into(), pins: 1 }
        );
        let dup_pin = "design d\ncell a 1.0 macro c\ncell b 1.0 logic c\nnet n a b a\n";
        assert_eq!(
            parse_netlist(dup_pin).unwrap_err(),
            NetlistError::DuplicatePin { net: "n".into(), pin: "a".into() }
        );
    }

    #[test]
    fn syntax_errors_carry_line_and_column() {
        let text = "design d\ncell m0 oops macro c\n";
        match parse_netlist(text).unwrap_err() {
            NetlistError::Syntax { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, 9);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_macro_free_and_bad_area_netlists() {
        let no_macro = "design d\ncell l0 1.0 logic c\ncell l1 1.0 logic c\nnet n l0 l1\n";
        assert_eq!(parse_netlist(no_macro).unwrap_err(), NetlistError::NoMacros);
        let bad_area = "design d\ncell m0 -3.0 macro c\n";
        assert_eq!(
            parse_netlist(bad_area).unwrap_err(),
            NetlistError::InvalidArea { cell: "m0".into() }
        );
    }

    #[test]
    fn serialize_then_parse_is_identity() {
        let n = parse_netlist(doc()).unwrap();
        let text = serialize_netlist(&n);
        let n2 = parse_netlist(&text).unwrap();
        assert_eq!(n, n2);
        assert_eq!(serialize_netlist(&n2), text);
    }

    #[test]
    fn flip_is_an_involution_and_checks_ids() {
        let n = parse_netlist(doc()).unwrap();
        let p = random_partition(&n, 3);
        let q = flip_macro(&p, "m1").unwrap();
        assert_ne!(p.tier_of("m1"), q.tier_of("m1"));
        assert_eq!(p.tier_of("m0"), q.tier_of("m0"));
        assert_eq!(flip_macro(&q, "m1").unwrap(), p);
        assert_eq!(
            flip_macro(&p, "zz").unwrap_err(),
            NetlistError::UnknownMacro { id: "zz".into() }
        );
    }

    #[test]
    fn random_partition_is_seed_deterministic() {
        let n = parse_netlist(doc()).unwrap();
        assert_eq!(random_partition(&n, 7), random_partition(&n, 7));
    }

    #[test]
    fn random_partition_is_roughly_balanced() {
        let mut cells = vec![];
        let mut nets = vec![];
        for i in 0..1000 {
            cells.push(Cell {
                id: format!("m{i}"),
                area: 1.0,
                kind: CellKind::Macro,
                cluster: "c".into(),
            });
        }
        nets.push(("n0".to_string(), vec!["m0".to_string(), "m1".to_string()]));
        let n = Netlist::new("big", cells, nets).unwrap();
        let p = random_partition(&n, 1);
        let top = p
            .assignment()
            .values()
            .filter(|&&t| t == Tier::Top)
            .count() as f64
            / 1000.0;
        assert!((0.4..=0.6).contains(&top), "top fraction {top}");
    }

    #[test]
    fn per_macro_tier_frequency_is_near_half_over_many_seeds() {
        let mut cells = vec![];
        for i in 0..20 {
            cells.push(Cell {
                id: format!("m{i:02}"),
                area: 1.0,
                kind: CellKind::Macro,
                cluster: "c".into(),
            });
        }
        let nets = vec![("n0".to_string(), vec!["m00".to_string(), "m01".to_string()])];
        let n = Netlist::new("freq", cells, nets).unwrap();
        let mut top_counts = [0u32; 20];
        for seed in 0..10_000u64 {
            let p = random_partition(&n, seed);
            for (mp, (_, tier)) in p.assignment().iter().enumerate() {
                if *tier == Tier::Top {
                    top_counts[mp] += 1;
                }
            }
        }
        for (mp, &c) in top_counts.iter().enumerate() {
            let f = c as f64 / 10_000.0;
            assert!((f - 0.5).abs() <= 0.02, "macro {mp}: top frequency {f}");
        }
    }

    #[test]
    fn check_partition_flags_domain_mismatch() {
        let n = parse_netlist(doc()).unwrap();
        let mut a = BTreeMap::new();
        a.insert("m0".to_string(), Tier::Top);
        assert_eq!(
            n.check_partition(&Partition::new(a.clone())).unwrap_err(),
            NetlistError::MissingMacro { id: "m1".into() }
        );
        a.insert("m1".to_string(), Tier::Bottom);
        a.insert("ghost".to_string(), Tier::Bottom);
        assert_eq!(
            n.check_partition(&Partition::new(a)).unwrap_err(),
            NetlistError::UnknownMacro { id: "ghost".into() }
        );
    }

    fn area_strategy() -> impl Strategy<Value = f64> {
        // Draw positive finite areas spanning many magnitudes; canonicalization
        // makes them representable at the on-disk precision.
        (1i32..=1_000_000_000, -6i32..=6)
            .prop_map(|(mant, exp)| canonical_area(mant as f64 * 10f64.powi(exp)))
    }

    fn netlist_strategy() -> impl Strategy<Value = Netlist> {
        let cell = (area_strategy(), any::<bool>(), 0u8..4);
        proptest::collection::vec(cell, 2..30).prop_flat_map(|specs| {
            let n_cells = specs.len();
            let net = proptest::collection::vec(0..n_cells, 2..5);
            let nets = proptest::collection::vec(net, 1..12);
            (Just(specs), nets).prop_map(|(specs, net_pins)| {
                let mut cells: Vec<Cell> = specs
                    .iter()
                    .enumerate()
                    .map(|(i, (area, is_macro, cluster))| Cell {
                        id: format!("c{i}"),
                        area: *area,
                        kind: if *is_macro { CellKind::Macro } else { CellKind::Logic },
                        cluster: format!("cl{cluster}"),
                    })
                    .collect();
                cells[0].kind = CellKind::Macro; // guarantee a macro
                let nets = net_pins
                    .iter()
                    .enumerate()
                    .map(|(i, pins)| {
                        let mut uniq: Vec<usize> = pins.clone();
                        uniq.sort_unstable();
                        uniq.dedup();
                        if uniq.len() < 2 {
                            uniq = vec![0, 1];
                        }
                        (
                            format!("n{i}"),
                            uniq.iter().map(|&p| format!("c{p}")).collect::<Vec<_>>(),
                        )
                    })
                    .collect();
                Netlist::new("gen", cells, nets).unwrap()
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn round_trip_preserves_netlist(n in netlist_strategy()) {
            let text = serialize_netlist(&n);
            let back = parse_netlist(&text).unwrap();
            prop_assert_eq!(&back, &n);
            prop_assert_eq!(serialize_netlist(&back), text);
        }

        #[test]
        fn flip_twice_is_identity(n in netlist_strategy(), seed in 0u64..1000, pick in 0usize..64) {
            let p = random_partition(&n, seed);
            let id = n.macro_id(pick % n.macro_count()).to_string();
            let q = flip_macro(&flip_macro(&p, &id).unwrap(), &id).unwrap();
            prop_assert_eq!(p, q);
        }
    }
}
