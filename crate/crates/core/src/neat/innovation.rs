use std::collections::BTreeMap;

/// Hands out innovation numbers and node ids for one run.
///
/// Every `(in, out)` pair keeps a single innovation number for the whole
/// run. Splitting the same connection twice within one generation reuses the
/// node id and both innovation numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationRegistry {
    next_innovation: u64,
    next_node: u32,
    pairs: BTreeMap<(u32, u32), u64>,
    splits: BTreeMap<u64, Split>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Split {
    pub node: u32,
    pub in_innovation: u64,
    pub out_innovation: u64,
}

impl InnovationRegistry {
    /// `first_hidden` is the first id free for hidden nodes.
    pub fn new(first_hidden: u32) -> Self {
        InnovationRegistry {
            next_innovation: 0,
            next_node: first_hidden,
            pairs: BTreeMap::new(),
            splits: BTreeMap::new(),
        }
    }

    pub fn connection(&mut self, input: u32, output: u32) -> u64 {
        if let Some(&i) = self.pairs.get(&(input, output)) {
            return i;
        }
        let i = self.next_innovation;
        self.next_innovation += 1;
        self.pairs.insert((input, output), i);
        i
    }

    /// Node and innovations for splitting the connection `innovation`
    /// running `input -> output`.
    pub fn split(&mut self, innovation: u64, input: u32, output: u32) -> Split {
        if let Some(s) = self.splits.get(&innovation) {
            return *s;
        }
        let node = self.next_node;
        self.next_node += 1;
        let s = Split {
            node,
            in_innovation: self.connection(input, node),
            out_innovation: self.connection(node, output),
        };
        self.splits.insert(innovation, s);
        s
    }

    /// Forgets this generation's splits.
    pub fn next_generation(&mut self) {
        self.splits.clear();
    }

    /// The pair registered under `innovation`, if any.
    pub fn pair_of(&self, innovation: u64) -> Option<(u32, u32)> {
        self.pairs.iter().find(|(_, &i)| i == innovation).map(|(&p, _)| p)
    }

    pub fn lookup(&self, input: u32, output: u32) -> Option<u64> {
        self.pairs.get(&(input, output)).copied()
    }

    pub fn innovation_count(&self) -> u64 {
        self.next_innovation
    }

    pub fn next_node_id(&self) -> u32 {
        self.next_node
    }
}
