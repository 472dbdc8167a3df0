use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::innovation::InnovationRegistry;
use super::NeatParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeKind {
    Input,
    Bias,
    Hidden,
    Output,
}

impl NodeKind {
    fn name(self) -> &'static str {
        match self {
            NodeKind::Input => "input",
            NodeKind::Bias => "bias",
            NodeKind::Hidden => "hidden",
            NodeKind::Output => "output",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "input" => NodeKind::Input,
            "bias" => NodeKind::Bias,
            "hidden" => NodeKind::Hidden,
            "output" => NodeKind::Output,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Inputs and bias pass their value through.
    Identity,
    /// `1 / (1 + exp(-slope * x))`.
    Sigmoid,
}

impl Activation {
    fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeGene {
    pub id: u32,
    pub kind: NodeKind,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConnGene {
    pub innovation: u64,
    pub input: u32,
    pub output: u32,
    pub weight: f64,
    pub enabled: bool,
}

/// Node ids: inputs `0..n_inputs`, the bias `n_inputs`, then the outputs.
/// Hidden nodes come after.
#[derive(Debug, Clone, PartialEq)]
pub struct Genome {
    pub n_inputs: usize,
    pub n_outputs: usize,
    /// Sorted by id.
    pub nodes: Vec<NodeGene>,
    /// Sorted by innovation.
    pub conns: Vec<ConnGene>,
    pub fitness: Option<f64>,
}

const GENOME_HEADER: &str = "# stemflow genome v1";

pub fn first_hidden_id(n_inputs: usize, n_outputs: usize) -> u32 {
    (n_inputs + 1 + n_outputs) as u32
}

impl Genome {
    /// Inputs, bias and outputs without connections.
    pub fn bare(n_inputs: usize, n_outputs: usize) -> Self {
        let mut nodes = Vec::with_capacity(n_inputs + 1 + n_outputs);
        for i in 0..n_inputs {
            nodes.push(NodeGene {
                id: i as u32,
                kind: NodeKind::Input,
                activation: Activation::Identity,
            });
        }
        nodes.push(NodeGene {
            id: n_inputs as u32,
            kind: NodeKind::Bias,
            activation: Activation::Identity,
        });
        for k in 0..n_outputs {
            nodes.push(NodeGene {
                id: (n_inputs + 1 + k) as u32,
                kind: NodeKind::Output,
                activation: Activation::Sigmoid,
            });
        }
        Genome {
            n_inputs,
            n_outputs,
            nodes,
            conns: Vec::new(),
            fitness: None,
        }
    }

    pub fn bias_id(&self) -> u32 {
        self.n_inputs as u32
    }

    pub fn output_ids(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.n_outputs).map(|k| (self.n_inputs + 1 + k) as u32)
    }

    /// Every input and the bias wired to every output with `N(0, init_std)`
    /// weights.
    pub fn fully_connected<R: Rng>(
        n_inputs: usize,
        n_outputs: usize,
        init_std: f64,
        reg: &mut InnovationRegistry,
        rng: &mut R,
    ) -> Self {
        let mut g = Genome::bare(n_inputs, n_outputs);
        let normal = Normal::new(0.0, init_std.max(0.0)).expect("finite deviation");
        for o in g.output_ids().collect::<Vec<_>>() {
            for i in 0..=n_inputs as u32 {
                g.conns.push(ConnGene {
                    innovation: reg.connection(i, o),
                    input: i,
                    output: o,
                    weight: normal.sample(rng),
                    enabled: true,
                });
            }
        }
        g.conns.sort_by_key(|c| c.innovation);
        g
    }

    pub fn node(&self, id: u32) -> Option<&NodeGene> {
        self.nodes.binary_search_by_key(&id, |n| n.id).ok().map(|i| &self.nodes[i])
    }

    pub fn has_pair(&self, input: u32, output: u32) -> bool {
        self.conns.iter().any(|c| c.input == input && c.output == output)
    }

    pub fn hidden_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Hidden).count()
    }

    pub fn enabled_count(&self) -> usize {
        self.conns.iter().filter(|c| c.enabled).count()
    }

    fn insert_node(&mut self, id: u32) {
        if let Err(pos) = self.nodes.binary_search_by_key(&id, |n| n.id) {
            self.nodes.insert(
                pos,
                NodeGene {
                    id,
                    kind: NodeKind::Hidden,
                    activation: Activation::Sigmoid,
                },
            );
        }
    }

    fn insert_conn(&mut self, c: ConnGene) {
        let pos = self.conns.partition_point(|x| x.innovation < c.innovation);
        self.conns.insert(pos, c);
    }

    /// At most one of add-node, add-connection or a weight mutation, tried
    /// in that order.
    pub fn mutate<R: Rng>(&mut self, p: &NeatParams, reg: &mut InnovationRegistry, rng: &mut R) {
        if p.add_node_rate > 0.0 && rng.random_bool(p.add_node_rate) {
            self.add_node(reg, rng);
        } else if p.add_conn_rate > 0.0 && rng.random_bool(p.add_conn_rate) {
            self.add_connection(p, reg, rng);
        } else if p.weight_mutation_rate > 0.0 && rng.random_bool(p.weight_mutation_rate) {
            self.mutate_weights(p, rng);
        }
    }

    pub fn mutate_weights<R: Rng>(&mut self, p: &NeatParams, rng: &mut R) {
        let perturb = Normal::new(0.0, p.weight_perturb_power).expect("finite deviation");
        let fresh = Normal::new(0.0, p.weight_init_std).expect("finite deviation");
        for c in &mut self.conns {
            let w = if rng.random_bool(p.weight_perturb_prob) {
                c.weight + perturb.sample(rng)
            } else {
                fresh.sample(rng)
            };
            c.weight = w.clamp(-p.weight_limit, p.weight_limit);
        }
    }

    /// Adds a connection between a random unconnected pair. Targets are
    /// hidden or output nodes; cycles are allowed. Returns false when the
    /// genome is saturated.
    pub fn add_connection<R: Rng>(&mut self, p: &NeatParams, reg: &mut InnovationRegistry, rng: &mut R) -> bool {
        let existing: BTreeSet<(u32, u32)> = self.conns.iter().map(|c| (c.input, c.output)).collect();
        let mut cands = Vec::new();
        for src in &self.nodes {
            for dst in self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Hidden | NodeKind::Output)) {
                if !existing.contains(&(src.id, dst.id)) {
                    cands.push((src.id, dst.id));
                }
            }
        }
        if cands.is_empty() {
            return false;
        }
        let (input, output) = cands[rng.random_range(0..cands.len())];
        let w = Normal::new(0.0, p.weight_init_std).expect("finite deviation").sample(rng);
        self.insert_conn(ConnGene {
            innovation: reg.connection(input, output),
            input,
            output,
            weight: w.clamp(-p.weight_limit, p.weight_limit),
            enabled: true,
        });
        true
    }

    /// Splits a random enabled connection `a -> b` into `a -> h` (weight 1)
    /// and `h -> b` (the old weight), disabling the original.
    pub fn add_node<R: Rng>(&mut self, reg: &mut InnovationRegistry, rng: &mut R) -> bool {
        let enabled: Vec<usize> = (0..self.conns.len()).filter(|&i| self.conns[i].enabled).collect();
        if enabled.is_empty() {
            return false;
        }
        let k = enabled[rng.random_range(0..enabled.len())];
        self.split_connection(k, reg)
    }

    /// Splits connection index `k`; false if the split node already exists
    /// in this genome.
    pub fn split_connection(&mut self, k: usize, reg: &mut InnovationRegistry) -> bool {
        let old = self.conns[k];
        let s = reg.split(old.innovation, old.input, old.output);
        if self.node(s.node).is_some() {
            return false;
        }
        self.conns[k].enabled = false;
        self.insert_node(s.node);
        self.insert_conn(ConnGene {
            innovation: s.in_innovation,
            input: old.input,
            output: s.node,
            weight: 1.0,
            enabled: true,
        });
        self.insert_conn(ConnGene {
            innovation: s.out_innovation,
            input: s.node,
            output: old.output,
            weight: old.weight,
            enabled: true,
        });
        true
    }

    /// Checks the structural invariants, and the innovation numbering when a
    /// registry is given.
    pub fn validate(&self, reg: Option<&InnovationRegistry>) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(format!("genome: {m}")));
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id) {
                return bad(format!("duplicate node id {}", n.id));
            }
        }
        if !self.nodes.windows(2).all(|w| w[0].id < w[1].id) {
            return bad("nodes not sorted by id".into());
        }
        for i in 0..self.n_inputs as u32 {
            if self.node(i).map(|n| n.kind) != Some(NodeKind::Input) {
                return bad(format!("missing input node {i}"));
            }
        }
        if self.node(self.bias_id()).map(|n| n.kind) != Some(NodeKind::Bias) {
            return bad("missing bias node".into());
        }
        for o in self.output_ids() {
            if self.node(o).map(|n| n.kind) != Some(NodeKind::Output) {
                return bad(format!("missing output node {o}"));
            }
        }
        let hidden_from = first_hidden_id(self.n_inputs, self.n_outputs);
        for n in &self.nodes {
            if n.kind == NodeKind::Hidden && n.id < hidden_from {
                return bad(format!("hidden node {} inside the fixed id range", n.id));
            }
            if n.kind != NodeKind::Hidden && n.id >= hidden_from {
                return bad(format!("{} node {} outside the fixed id range", n.kind.name(), n.id));
            }
        }
        let mut pairs = BTreeSet::new();
        let mut innovs = BTreeSet::new();
        for c in &self.conns {
            if !c.weight.is_finite() {
                return bad(format!("non-finite weight on innovation {}", c.innovation));
            }
            if !pairs.insert((c.input, c.output)) {
                return bad(format!("duplicate connection {} -> {}", c.input, c.output));
            }
            if !innovs.insert(c.innovation) {
                return bad(format!("duplicate innovation {}", c.innovation));
            }
            if self.node(c.input).is_none() || self.node(c.output).is_none() {
                return bad(format!("connection {} -> {} references a missing node", c.input, c.output));
            }
            if matches!(self.node(c.output).unwrap().kind, NodeKind::Input | NodeKind::Bias) {
                return bad(format!("connection into input or bias node {}", c.output));
            }
            if let Some(r) = reg {
                if r.lookup(c.input, c.output) != Some(c.innovation) {
                    return bad(format!(
                        "innovation {} for {} -> {} disagrees with the registry",
                        c.innovation, c.input, c.output
                    ));
                }
            }
        }
        if !self.conns.windows(2).all(|w| w[0].innovation < w[1].innovation) {
            return bad("connections not sorted by innovation".into());
        }
        if let Some(f) = self.fitness {
            if !f.is_finite() {
                return bad("non-finite fitness".into());
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{GENOME_HEADER}").unwrap();
        writeln!(out, "inputs {}", self.n_inputs).unwrap();
        writeln!(out, "outputs {}", self.n_outputs).unwrap();
        match self.fitness {
            Some(f) => writeln!(out, "fitness {f}").unwrap(),
            None => writeln!(out, "fitness none").unwrap(),
        }
        for n in &self.nodes {
            writeln!(out, "node {} {} {}", n.id, n.kind.name(), n.activation.name()).unwrap();
        }
        for c in &self.conns {
            writeln!(
                out,
                "conn {} {} {} {} {}",
                c.innovation,
                c.input,
                c.output,
                c.weight,
                u8::from(c.enabled)
            )
            .unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.next() {
            Some((_, h)) if h == GENOME_HEADER => {}
            _ => return Err(Error::parse(1, "missing genome header")),
        }
        let mut n_inputs = None;
        let mut n_outputs = None;
        let mut fitness = None;
        let mut nodes = Vec::new();
        let mut conns = Vec::new();
        for (n, l) in lines {
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = l.split_whitespace().collect();
            let num = |s: &str| -> Result<f64> {
                let v: f64 = s.parse().map_err(|_| Error::parse(n, format!("bad number `{s}`")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::parse(n, format!("non-finite number `{s}`")))
                }
            };
            let int = |s: &str| -> Result<u64> { s.parse().map_err(|_| Error::parse(n, format!("bad integer `{s}`"))) };
            match (f[0], f.len()) {
                ("inputs", 2) => n_inputs = Some(int(f[1])? as usize),
                ("outputs", 2) => n_outputs = Some(int(f[1])? as usize),
                ("fitness", 2) => fitness = if f[1] == "none" { None } else { Some(num(f[1])?) },
                ("node", 4) => {
                    let kind = NodeKind::parse(f[2]).ok_or_else(|| Error::parse(n, format!("bad node kind `{}`", f[2])))?;
                    let activation = match f[3] {
                        "identity" => Activation::Identity,
                        "sigmoid" => Activation::Sigmoid,
                        other => return Err(Error::parse(n, format!("bad activation `{other}`"))),
                    };
                    nodes.push(NodeGene {
                        id: int(f[1])? as u32,
                        kind,
                        activation,
                    });
                }
                ("conn", 6) => conns.push(ConnGene {
                    innovation: int(f[1])?,
                    input: int(f[2])? as u32,
                    output: int(f[3])? as u32,
                    weight: num(f[4])?,
                    enabled: match f[5] {
                        "1" => true,
                        "0" => false,
                        other => return Err(Error::parse(n, format!("bad enabled flag `{other}`"))),
                    },
                }),
                _ => return Err(Error::parse(n, format!("unrecognised genome line `{l}`"))),
            }
        }
        let g = Genome {
            n_inputs: n_inputs.ok_or_else(|| Error::parse(0, "missing `inputs`"))?,
            n_outputs: n_outputs.ok_or_else(|| Error::parse(0, "missing `outputs`"))?,
            nodes,
            conns,
            fitness,
        };
        g.validate(None)?;
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_text(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// NEAT recombination. `a` and `b` must carry fitness. Matching genes are
/// picked per gene; disjoint and excess genes come from the fitter parent,
/// or from both on a tie. A gene disabled in either parent stays disabled
/// with probability `disable_prob`.
pub fn crossover<R: Rng>(a: &Genome, b: &Genome, disable_prob: f64, rng: &mut R) -> Result<Genome> {
    let (fa, fb) = match (a.fitness, b.fitness) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::Invalid("crossover parents need fitness".into())),
    };
    if a.n_inputs != b.n_inputs || a.n_outputs != b.n_outputs {
        return Err(Error::Dimension("crossover parents have different interfaces".into()));
    }
    let (fit, other, tie) = if fb > fa { (b, a, false) } else { (a, b, fa == fb) };
    let om: BTreeMap<u64, &ConnGene> = other.conns.iter().map(|c| (c.innovation, c)).collect();
    let fm: BTreeMap<u64, &ConnGene> = fit.conns.iter().map(|c| (c.innovation, c)).collect();
    let mut child = Genome::bare(a.n_inputs, a.n_outputs);
    let mut conns = Vec::new();
    for c in &fit.conns {
        let gene = match om.get(&c.innovation) {
            Some(o) => {
                let mut g = if rng.random_bool(0.5) { *c } else { **o };
                g.enabled = true;
                if (!c.enabled || !o.enabled) && rng.random_bool(disable_prob) {
                    g.enabled = false;
                }
                g
            }
            None => *c,
        };
        conns.push(gene);
    }
    if tie {
        conns.extend(other.conns.iter().filter(|c| !fm.contains_key(&c.innovation)).copied());
    }
    conns.sort_by_key(|c| c.innovation);
    let mut hidden = BTreeSet::new();
    let first_hidden = first_hidden_id(a.n_inputs, a.n_outputs);
    for c in &conns {
        for id in [c.input, c.output] {
            if id >= first_hidden {
                hidden.insert(id);
            }
        }
    }
    for id in hidden {
        child.insert_node(id);
    }
    child.conns = conns;
    Ok(child)
}
