use super::genome::Genome;
use super::NeatParams;

#[derive(Debug, Clone, PartialEq)]
pub struct Species {
    pub id: usize,
    pub representative: Genome,
    /// Indices into the current population.
    pub members: Vec<usize>,
    /// Best fitness the species has ever reached.
    pub best_fitness: f64,
    pub last_improved: usize,
}

/// `c1 * E / N + c2 * D / N + c3 * W`, with `N` the larger connection count
/// (1 below 20 genes) and `W` the mean absolute weight difference of the
/// matching genes.
pub fn distance(a: &Genome, b: &Genome, p: &NeatParams) -> f64 {
    let (ca, cb) = (&a.conns, &b.conns);
    let max_a = ca.last().map(|c| c.innovation);
    let max_b = cb.last().map(|c| c.innovation);
    let cutoff = match (max_a, max_b) {
        (Some(x), Some(y)) => x.min(y),
        _ => 0,
    };
    let (mut i, mut j) = (0, 0);
    let (mut excess, mut disjoint, mut matching) = (0usize, 0usize, 0usize);
    let mut wdiff = 0.0;
    let unmatched = |innov: u64, e: &mut usize, d: &mut usize| {
        if (max_a.is_none() || max_b.is_none()) || innov > cutoff {
            *e += 1;
        } else {
            *d += 1;
        }
    };
    while i < ca.len() || j < cb.len() {
        match (ca.get(i), cb.get(j)) {
            (Some(x), Some(y)) if x.innovation == y.innovation => {
                wdiff += (x.weight - y.weight).abs();
                matching += 1;
                i += 1;
                j += 1;
            }
            (Some(x), Some(y)) if x.innovation < y.innovation => {
                unmatched(x.innovation, &mut excess, &mut disjoint);
                i += 1;
            }
            (Some(_), Some(y)) => {
                unmatched(y.innovation, &mut excess, &mut disjoint);
                j += 1;
            }
            (Some(x), None) => {
                unmatched(x.innovation, &mut excess, &mut disjoint);
                i += 1;
            }
            (None, Some(y)) => {
                unmatched(y.innovation, &mut excess, &mut disjoint);
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    let longest = ca.len().max(cb.len());
    let n = if longest < 20 { 1.0 } else { longest as f64 };
    let w = if matching > 0 { wdiff / matching as f64 } else { 0.0 };
    p.c1 * excess as f64 / n + p.c2 * disjoint as f64 / n + p.c3 * w
}

/// Places each genome in the first species (in id order) whose
/// representative lies within the threshold, founding new species as
/// needed. Species left without members are dropped.
pub fn speciate(pop: &[Genome], species: &mut Vec<Species>, p: &NeatParams, generation: usize, next_id: &mut usize) {
    for s in species.iter_mut() {
        s.members.clear();
    }
    for (gi, g) in pop.iter().enumerate() {
        match species
            .iter_mut()
            .find(|s| distance(&s.representative, g, p) < p.compat_threshold)
        {
            Some(s) => s.members.push(gi),
            None => {
                species.push(Species {
                    id: *next_id,
                    representative: g.clone(),
                    members: vec![gi],
                    best_fitness: f64::NEG_INFINITY,
                    last_improved: generation,
                });
                *next_id += 1;
            }
        }
    }
    species.retain(|s| !s.members.is_empty());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neat::genome::{first_hidden_id, ConnGene};
    use crate::neat::innovation::InnovationRegistry;

    fn one_conn(innovation: u64, w: f64) -> Genome {
        let mut g = Genome::bare(2, 1);
        g.conns.push(ConnGene {
            innovation,
            input: 0,
            output: 3,
            weight: w,
            enabled: true,
        });
        g
    }

    #[test]
    fn identical_genomes_share_a_species() {
        let p = NeatParams::default();
        let g = one_conn(0, 0.3);
        assert_eq!(distance(&g, &g, &p), 0.0);
        let mut sp = Vec::new();
        let mut next = 0;
        speciate(&[g.clone(), g.clone(), g], &mut sp, &p, 0, &mut next);
        assert_eq!(sp.len(), 1);
        assert_eq!(sp[0].members, vec![0, 1, 2]);
    }

    #[test]
    fn single_weight_difference() {
        let p = NeatParams::default();
        let d = distance(&one_conn(0, 0.25), &one_conn(0, 1.25), &p);
        assert!((d - 0.4).abs() < 1e-15);
    }

    #[test]
    fn excess_and_disjoint_counts() {
        let p = NeatParams::default();
        let mut reg = InnovationRegistry::new(first_hidden_id(2, 1));
        let mk = |pairs: &[(u32, u32)], reg: &mut InnovationRegistry| {
            let mut g = Genome::bare(2, 1);
            for &(a, b) in pairs {
                g.conns.push(ConnGene {
                    innovation: reg.connection(a, b),
                    input: a,
                    output: b,
                    weight: 0.0,
                    enabled: true,
                });
            }
            g.conns.sort_by_key(|c| c.innovation);
            g
        };
        // innovations: (0,3)=0 (1,3)=1 (2,3)=2 (3,3)=3
        let a = mk(&[(0, 3), (1, 3)], &mut reg);
        let b = mk(&[(0, 3), (2, 3), (3, 3)], &mut reg);
        // a: 0 1; b: 0 2 3 -> 1 is disjoint, 2 and 3 are excess
        let d = distance(&a, &b, &p);
        assert!((d - (2.0 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn far_apart_genomes_each_found_a_species() {
        let p = NeatParams::default();
        // five disjoint innovations each: distance 10 between any two
        let pop: Vec<Genome> = (0..6)
            .map(|k| {
                let mut g = Genome::bare(2, 1);
                for i in 0..5 {
                    g.conns.push(ConnGene {
                        innovation: k * 5 + i,
                        input: 0,
                        output: 3,
                        weight: 0.0,
                        enabled: true,
                    });
                }
                g
            })
            .collect();
        let mut sp = Vec::new();
        let mut next = 0;
        speciate(&pop, &mut sp, &p, 0, &mut next);
        assert_eq!(sp.len(), pop.len());
    }
}
