//! Deterministic synthetic netlist generator for tests, benchmarks, and
//! experiments. Counts in the config are exact: the emitted netlist has
//! exactly `macros + logic` cells and `nets` nets.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::netlist::{Cell, CellKind, Netlist};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub macros: usize,
    pub logic: usize,
    pub nets: usize,
    pub clusters: usize,
    pub seed: u64,
    pub min_pins: usize,
    pub max_pins: usize,
    /// Probability that a pin lands on a macro instead of a logic cell.
    pub macro_pin_bias: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            macros: 26,
            logic: 600,
            nets: 800,
            clusters: 18,
            seed: 0,
            min_pins: 2,
            max_pins: 6,
            macro_pin_bias: 0.35,
        }
    }
}

impl SynthConfig {
    pub fn generate(&self) -> Netlist {
        assert!(self.macros >= 1, "need at least one macro");
        assert!(self.macros + self.logic >= 2, "need at least two cells");
        assert!(self.clusters >= 1 && self.nets >= 1);
        assert!(2 <= self.min_pins && self.min_pins <= self.max_pins);
        assert!(self.max_pins <= self.macros + self.logic);

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let cluster_name = |i: usize| format!("cl{i:03}");

        let mut cells = Vec::with_capacity(self.macros + self.logic);
        for i in 0..self.macros {
            cells.push(Cell {
                id: format!("m{i:04}"),
                area: 50.0 + rng.random::<f64>() * 450.0,
                kind: CellKind::Macro,
                cluster: cluster_name(rng.random_range(0..self.clusters)),
            });
        }
        for i in 0..self.logic {
            cells.push(Cell {
                id: format!("l{i:06}"),
                area: 1.0 + rng.random::<f64>() * 3.0,
                kind: CellKind::Logic,
                cluster: cluster_name(i % self.clusters),
            });
        }

        let macro_ids: Vec<&str> = cells[..self.macros].iter().map(|c| c.id.as_str()).collect();
        let logic_ids: Vec<&str> = cells[self.macros..].iter().map(|c| c.id.as_str()).collect();

        let mut nets = Vec::with_capacity(self.nets);
        for ni in 0..self.nets {
            // a net needs `degree` distinct pins, so cap at the cell count
            let degree = rng.random_range(self.min_pins..=self.max_pins).min(cells.len());
            let mut pins: Vec<String> = Vec::with_capacity(degree);
            while pins.len() < degree {
                let pick_macro =
                    !macro_ids.is_empty() && (logic_ids.is_empty() || rng.random::<f64>() < self.macro_pin_bias);
                let id = if pick_macro {
                    macro_ids[rng.random_range(0..macro_ids.len())]
                } else {
                    logic_ids[rng.random_range(0..logic_ids.len())]
                };
                if !pins.iter().any(|p| p == id) {
                    pins.push(id.to_string());
                }
            }
            nets.push((format!("n{ni:06}"), pins));
        }

        Netlist::new(&format!("synth_{}", self.seed), cells, nets)
            .expect("generator output always validates")
    }
}
