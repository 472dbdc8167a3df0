use std::collections::BTreeMap;

use super::genome::{Genome, NodeKind};
use crate::error::{Error, Result};
use crate::task::{Controller, CONTROLLER_INPUTS};

/// A compiled genome.
///
/// Non-input nodes are updated once per activation in a fixed order
/// (topological where the graph allows). A connection from a node later in
/// that order reads the value from the previous activation, which is how
/// recurrent links carry state.
#[derive(Debug, Clone, PartialEq)]
pub struct Phenotype {
    n_inputs: usize,
    slope: f64,
    /// Slots of the non-input nodes in evaluation order.
    order: Vec<usize>,
    /// Incoming `(source slot, weight)` lists, per entry of `order`.
    incoming: Vec<Vec<(usize, f64)>>,
    outputs: Vec<usize>,
    values: Vec<f64>,
}

impl Phenotype {
    pub fn new(g: &Genome, slope: f64) -> Result<Self> {
        g.validate(None)?;
        let slot: BTreeMap<u32, usize> = g.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let computed: Vec<usize> = g
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.kind, NodeKind::Hidden | NodeKind::Output))
            .map(|(i, _)| i)
            .collect();
        let is_computed = |s: usize| matches!(g.nodes[s].kind, NodeKind::Hidden | NodeKind::Output);
        let mut preds: BTreeMap<usize, Vec<usize>> = computed.iter().map(|&s| (s, Vec::new())).collect();
        let mut inc: BTreeMap<usize, Vec<(usize, f64)>> = computed.iter().map(|&s| (s, Vec::new())).collect();
        for c in g.conns.iter().filter(|c| c.enabled) {
            let (src, dst) = (slot[&c.input], slot[&c.output]);
            inc.get_mut(&dst).expect("validated target").push((src, c.weight));
            if is_computed(src) && src != dst {
                preds.get_mut(&dst).expect("validated target").push(src);
            }
        }
        // Kahn's algorithm; on a cycle the lowest remaining id goes next
        let mut order = Vec::with_capacity(computed.len());
        let mut done = vec![false; g.nodes.len()];
        while order.len() < computed.len() {
            let ready = computed
                .iter()
                .copied()
                .find(|&s| !done[s] && preds[&s].iter().all(|&p| done[p]))
                .or_else(|| computed.iter().copied().find(|&s| !done[s]))
                .expect("nodes remain");
            done[ready] = true;
            order.push(ready);
        }
        let incoming = order.iter().map(|s| inc[s].clone()).collect();
        let outputs = g.output_ids().map(|id| slot[&id]).collect();
        let mut p = Phenotype {
            n_inputs: g.n_inputs,
            slope,
            order,
            incoming,
            outputs,
            values: vec![0.0; g.nodes.len()],
        };
        p.reset_state();
        Ok(p)
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    /// Zeroes every remembered activation.
    pub fn reset_state(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
        // the bias slot directly follows the inputs
        self.values[self.n_inputs] = 1.0;
    }

    /// One network tick; returns the outputs.
    pub fn activate(&mut self, inputs: &[f64]) -> Result<Vec<f64>> {
        self.activate_first(inputs)?;
        Ok(self.outputs.iter().map(|&s| self.values[s]).collect())
    }

    /// One network tick; returns the first output.
    pub fn activate_first(&mut self, inputs: &[f64]) -> Result<f64> {
        if inputs.len() != self.n_inputs {
            return Err(Error::Dimension(format!(
                "network takes {} inputs, got {}",
                self.n_inputs,
                inputs.len()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        self.values[..self.n_inputs].copy_from_slice(inputs);
        for (k, &s) in self.order.iter().enumerate() {
            let sum: f64 = self.incoming[k].iter().map(|&(src, w)| w * self.values[src]).sum();
            self.values[s] = 1.0 / (1.0 + (-self.slope * sum).exp());
        }
        Ok(self.values[self.outputs[0]])
    }
}

impl Controller for Phenotype {
    fn reset(&mut self) {
        self.reset_state();
    }

    fn control(&mut self, inputs: &[f64; CONTROLLER_INPUTS]) -> Result<f64> {
        self.activate_first(inputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::LightCondition;
    use crate::neat::genome::{first_hidden_id, ConnGene};
    use crate::neat::innovation::InnovationRegistry;

    fn conn(reg: &mut InnovationRegistry, a: u32, b: u32, w: f64) -> ConnGene {
        ConnGene {
            innovation: reg.connection(a, b),
            input: a,
            output: b,
            weight: w,
            enabled: true,
        }
    }

    #[test]
    fn zero_network_selects_left() {
        let mut reg = InnovationRegistry::new(first_hidden_id(26, 1));
        let mut g = Genome::bare(26, 1);
        g.conns = (0..=26).map(|i| conn(&mut reg, i, 27, 0.0)).collect();
        let mut p = Phenotype::new(&g, 4.9).unwrap();
        let c = p.activate_first(&[0.7; 26]).unwrap();
        assert_eq!(c, 0.5);
        assert_eq!(LightCondition::from_control(c), LightCondition::Left);
    }

    #[test]
    fn strong_positive_link_selects_right() {
        let mut reg = InnovationRegistry::new(first_hidden_id(2, 1));
        let mut g = Genome::bare(2, 1);
        g.conns = vec![conn(&mut reg, 0, 3, 8.0)];
        let mut p = Phenotype::new(&g, 4.9).unwrap();
        let c = p.activate_first(&[1.0, 0.0]).unwrap();
        assert!(c > 0.999);
        assert_eq!(LightCondition::from_control(c), LightCondition::Right);
        let mut q = Phenotype::new(&g, 4.9).unwrap();
        assert_eq!(q.activate_first(&[1.0, 0.0]).unwrap(), c);
    }

    #[test]
    fn hidden_layer_propagates_in_one_tick() {
        let mut reg = InnovationRegistry::new(first_hidden_id(1, 1));
        let mut g = Genome::bare(1, 1);
        g.conns = vec![conn(&mut reg, 0, 2, 1.0)];
        g.split_connection(0, &mut reg);
        let mut p = Phenotype::new(&g, 1.0).unwrap();
        let out = p.activate_first(&[2.0]).unwrap();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        assert_eq!(out, sig(sig(2.0)));
    }

    #[test]
    fn recurrent_link_uses_previous_value() {
        let mut reg = InnovationRegistry::new(first_hidden_id(1, 1));
        let mut g = Genome::bare(1, 1);
        g.conns = vec![conn(&mut reg, 2, 2, 1.0)];
        let mut p = Phenotype::new(&g, 1.0).unwrap();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let first = p.activate_first(&[0.0]).unwrap();
        assert_eq!(first, sig(0.0));
        assert_eq!(p.activate_first(&[0.0]).unwrap(), sig(first));
        p.reset_state();
        assert_eq!(p.activate_first(&[0.0]).unwrap(), first);
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = Genome::bare(2, 1);
        let mut p = Phenotype::new(&g, 4.9).unwrap();
        assert!(p.activate_first(&[1.0]).is_err());
        assert!(p.activate_first(&[1.0, f64::NAN]).is_err());
    }
}
