//! NeuroEvolution of Augmenting Topologies.

pub mod genome;
pub mod innovation;
pub mod network;
pub mod species;

use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use genome::{crossover, first_hidden_id, Activation, ConnGene, Genome, NodeGene, NodeKind};
pub use innovation::InnovationRegistry;
pub use network::Phenotype;
pub use species::{distance, speciate, Species};

use crate::error::{Error, Result};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct NeatParams {
    pub pop_size: usize,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub compat_threshold: f64,
    pub weight_mutation_rate: f64,
    /// Chance a weight is perturbed rather than redrawn.
    pub weight_perturb_prob: f64,
    pub weight_perturb_power: f64,
    pub weight_init_std: f64,
    pub weight_limit: f64,
    pub add_conn_rate: f64,
    pub add_node_rate: f64,
    pub crossover_rate: f64,
    /// Chance an inherited gene disabled in either parent stays disabled.
    pub disable_inherit_prob: f64,
    /// Unchanged copies of each species' best.
    pub elitism: usize,
    /// Fraction of each species allowed to breed.
    pub survival_threshold: f64,
    pub stagnation_limit: usize,
    pub sigmoid_slope: f64,
}

impl Default for NeatParams {
    fn default() -> Self {
        NeatParams {
            pop_size: 50,
            c1: 1.0,
            c2: 1.0,
            c3: 0.4,
            compat_threshold: 3.0,
            weight_mutation_rate: 0.8,
            weight_perturb_prob: 0.9,
            weight_perturb_power: 2.5,
            weight_init_std: 1.0,
            weight_limit: 8.0,
            add_conn_rate: 0.05,
            add_node_rate: 0.03,
            crossover_rate: 0.75,
            disable_inherit_prob: 0.75,
            elitism: 1,
            survival_threshold: 0.2,
            stagnation_limit: 15,
            sigmoid_slope: 4.9,
        }
    }
}

impl NeatParams {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("weight_mutation_rate", self.weight_mutation_rate),
            ("weight_perturb_prob", self.weight_perturb_prob),
            ("add_conn_rate", self.add_conn_rate),
            ("add_node_rate", self.add_node_rate),
            ("crossover_rate", self.crossover_rate),
            ("disable_inherit_prob", self.disable_inherit_prob),
            ("survival_threshold", self.survival_threshold),
        ];
        for (name, v) in rates {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Invalid(format!("{name} = {v} must lie in [0, 1]")));
            }
        }
        if self.pop_size < 2 {
            return Err(Error::Invalid("pop_size must be at least 2".into()));
        }
        let positive = [
            ("compat_threshold", self.compat_threshold),
            ("weight_perturb_power", self.weight_perturb_power),
            ("weight_init_std", self.weight_init_std),
            ("weight_limit", self.weight_limit),
            ("sigmoid_slope", self.sigmoid_slope),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} = {v} must be positive")));
            }
        }
        for (name, v) in [("c1", self.c1), ("c2", self.c2), ("c3", self.c3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} = {v} must be >= 0")));
            }
        }
        if self.stagnation_limit == 0 {
            return Err(Error::Invalid("stagnation_limit must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationStats {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
    pub species: usize,
    /// Genomes actually evaluated (elites keep their fitness).
    pub evaluations: usize,
    pub best_hidden: usize,
    pub best_connections: usize,
}

pub fn stats_csv(history: &[GenerationStats]) -> String {
    let mut out = String::from("generation,best,mean,species,evaluations,best_hidden,best_connections\n");
    for s in history {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.generation, s.best, s.mean, s.species, s.evaluations, s.best_hidden, s.best_connections
        )
        .unwrap();
    }
    out
}

/// A population between generations.
#[derive(Debug, Clone)]
pub struct Population {
    pub params: NeatParams,
    pub genomes: Vec<Genome>,
    pub species: Vec<Species>,
    pub registry: InnovationRegistry,
    pub generation: usize,
    n_inputs: usize,
    n_outputs: usize,
    next_species: usize,
    seed: u64,
    champion: Option<Genome>,
}

impl Population {
    /// Fully connected minimal genomes with random weights.
    pub fn new(n_inputs: usize, n_outputs: usize, params: NeatParams, seed: u64) -> Result<Self> {
        params.validate()?;
        if n_outputs == 0 {
            return Err(Error::Invalid("networks need at least one output".into()));
        }
        let mut registry = InnovationRegistry::new(first_hidden_id(n_inputs, n_outputs));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "neat-init", 0));
        let genomes = (0..params.pop_size)
            .map(|_| Genome::fully_connected(n_inputs, n_outputs, params.weight_init_std, &mut registry, &mut rng))
            .collect();
        Ok(Population {
            params,
            genomes,
            species: Vec::new(),
            registry,
            generation: 0,
            n_inputs,
            n_outputs,
            next_species: 0,
            seed,
            champion: None,
        })
    }

    /// Best genome seen so far.
    pub fn champion(&self) -> Option<&Genome> {
        self.champion.as_ref()
    }

    /// Scores every genome without fitness.
    pub fn evaluate<F>(&mut self, eval: &F) -> Result<GenerationStats>
    where
        F: Fn(&Genome) -> Result<f64> + Sync,
    {
        let generation = self.generation;
        let pending: Vec<usize> = (0..self.genomes.len()).filter(|&i| self.genomes[i].fitness.is_none()).collect();
        let scores: Vec<Result<f64>> = pending
            .par_iter()
            .map(|&i| {
                let f = eval(&self.genomes[i]).map_err(|e| Error::Stage {
                    stage: format!("evaluate generation {generation} genome {i}"),
                    source: Box::new(e),
                })?;
                if f.is_finite() {
                    Ok(f)
                } else {
                    Err(Error::NonFinite(format!("fitness of genome {i} in generation {generation}")))
                }
            })
            .collect();
        for (&i, s) in pending.iter().zip(scores) {
            self.genomes[i].fitness = Some(s?);
        }
        let fit: Vec<f64> = self.genomes.iter().map(|g| g.fitness.expect("evaluated")).collect();
        let bi = best_index(&fit);
        let best = &self.genomes[bi];
        if self.champion.as_ref().is_none_or(|c| fit[bi] > c.fitness.expect("evaluated")) {
            self.champion = Some(best.clone());
        }
        Ok(GenerationStats {
            generation,
            best: fit[bi],
            mean: fit.iter().sum::<f64>() / fit.len() as f64,
            species: self.species.len(),
            evaluations: pending.len(),
            best_hidden: best.hidden_count(),
            best_connections: best.enabled_count(),
        })
    }

    /// Speciates, removes stagnant species, shares fitness and breeds the
    /// next generation.
    pub fn reproduce(&mut self) -> Result<()> {
        let p = self.params.clone();
        let fit: Vec<f64> = self
            .genomes
            .iter()
            .map(|g| g.fitness.ok_or_else(|| Error::Invalid("reproduce before evaluate".into())))
            .collect::<Result<_>>()?;
        let gen = self.generation;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "neat-generation", gen as u64));
        speciate(&self.genomes, &mut self.species, &p, gen, &mut self.next_species);

        let top = best_index(&fit);
        for s in &mut self.species {
            let best = s.members.iter().map(|&m| fit[m]).fold(f64::NEG_INFINITY, f64::max);
            if best > s.best_fitness {
                s.best_fitness = best;
                s.last_improved = gen;
            }
        }
        self.species
            .retain(|s| s.members.contains(&top) || gen - s.last_improved < p.stagnation_limit);

        // shifted so the worst genome still gets a small share
        let floor = self
            .species
            .iter()
            .flat_map(|s| s.members.iter().map(|&m| fit[m]))
            .fold(f64::INFINITY, f64::min);
        let shares: Vec<f64> = self
            .species
            .iter()
            .map(|s| s.members.iter().map(|&m| fit[m] - floor + 1e-6).sum::<f64>() / s.members.len() as f64)
            .collect();
        let top_species = self.species.iter().position(|s| s.members.contains(&top)).expect("champion kept");
        let counts = allot(&shares, p.pop_size, top_species);

        let mut next = Vec::with_capacity(p.pop_size);
        for (s, &n) in self.species.iter().zip(&counts) {
            if n == 0 {
                continue;
            }
            let mut ranked = s.members.clone();
            ranked.sort_by(|&a, &b| fit[b].total_cmp(&fit[a]).then(a.cmp(&b)));
            let elites = p.elitism.min(n);
            for &m in ranked.iter().take(elites) {
                next.push(self.genomes[m].clone());
            }
            let pool_len = ((p.survival_threshold * ranked.len() as f64).ceil() as usize).clamp(1, ranked.len());
            let pool = &ranked[..pool_len];
            for _ in elites..n {
                let mut child = if pool.len() >= 2 && rng.random_bool(p.crossover_rate) {
                    let picks: Vec<&usize> = pool.choose_multiple(&mut rng, 2).collect();
                    crossover(&self.genomes[*picks[0]], &self.genomes[*picks[1]], p.disable_inherit_prob, &mut rng)?
                } else {
                    let &m = pool.choose(&mut rng).expect("pool is nonempty");
                    self.genomes[m].clone()
                };
                child.fitness = None;
                child.mutate(&p, &mut self.registry, &mut rng);
                next.push(child);
            }
        }
        // representatives for the next round come from this generation
        for s in &mut self.species {
            let &m = s.members.choose(&mut rng).expect("species is nonempty");
            s.representative = self.genomes[m].clone();
        }
        self.genomes = next;
        self.registry.next_generation();
        self.generation += 1;
        Ok(())
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }
}

fn best_index(fit: &[f64]) -> usize {
    let mut bi = 0;
    for (i, &f) in fit.iter().enumerate() {
        if f > fit[bi] {
            bi = i;
        }
    }
    bi
}

/// Splits `total` offspring proportionally to `shares` by largest
/// remainder, guaranteeing at least one to species `keep`.
fn allot(shares: &[f64], total: usize, keep: usize) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    if counts[keep] == 0 {
        let donor = (0..counts.len()).max_by_key(|&i| (counts[i], usize::MAX - i)).expect("species exist");
        counts[donor] -= 1;
        counts[keep] = 1;
    }
    counts
}

#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub champion: Genome,
    pub history: Vec<GenerationStats>,
    pub registry: InnovationRegistry,
}

impl EvolutionResult {
    pub fn best_per_generation(&self) -> Vec<f64> {
        self.history.iter().map(|s| s.best).collect()
    }
}

/// Runs `generations` rounds of evaluation, reproducing between them.
/// `inspect` sees every population after evaluation.
pub fn evolve_with<F, I>(
    eval: F,
    n_inputs: usize,
    n_outputs: usize,
    params: &NeatParams,
    generations: usize,
    seed: u64,
    mut inspect: I,
) -> Result<EvolutionResult>
where
    F: Fn(&Genome) -> Result<f64> + Sync,
    I: FnMut(&Population, &GenerationStats) -> Result<()>,
{
    if generations == 0 {
        return Err(Error::Invalid("generations must be at least 1".into()));
    }
    let mut pop = Population::new(n_inputs, n_outputs, params.clone(), seed)?;
    let mut history = Vec::with_capacity(generations);
    for g in 0..generations {
        let stats = pop.evaluate(&eval)?;
        log::debug!("generation {g}: best {:.4} mean {:.4} species {}", stats.best, stats.mean, stats.species);
        inspect(&pop, &stats)?;
        history.push(stats);
        if g + 1 < generations {
            pop.reproduce()?;
        }
    }
    Ok(EvolutionResult {
        champion: pop.champion().expect("at least one generation").clone(),
        history,
        registry: pop.registry,
    })
}

pub fn evolve<F>(
    eval: F,
    n_inputs: usize,
    n_outputs: usize,
    params: &NeatParams,
    generations: usize,
    seed: u64,
) -> Result<EvolutionResult>
where
    F: Fn(&Genome) -> Result<f64> + Sync,
{
    evolve_with(eval, n_inputs, n_outputs, params, generations, seed, |_, _| Ok(()))
}

/// XOR fitness `(4 - Σ|error|)^2 / 16`, state reset before each case.
pub fn xor_fitness(g: &Genome, slope: f64) -> Result<f64> {
    let mut net = Phenotype::new(g, slope)?;
    let mut err = 0.0;
    for (a, b, want) in [(0.0, 0.0, 0.0), (0.0, 1.0, 1.0), (1.0, 0.0, 1.0), (1.0, 1.0, 0.0)] {
        net.reset_state();
        err += (net.activate_first(&[a, b])? - want).abs();
    }
    Ok((4.0 - err).powi(2) / 16.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_fitness_stays_constant() {
        let p = NeatParams {
            pop_size: 20,
            ..NeatParams::default()
        };
        let r = evolve(|_| Ok(0.5), 3, 1, &p, 10, 1).unwrap();
        assert!(r.best_per_generation().iter().all(|&b| b == 0.5));
    }

    #[test]
    fn allotment_sums_and_protects() {
        let c = allot(&[1.0, 1.0, 1.0], 10, 2);
        assert_eq!(c.iter().sum::<usize>(), 10);
        let c = allot(&[100.0, 1e-9], 5, 1);
        assert_eq!(c, vec![4, 1]);
    }

    #[test]
    fn evaluation_errors_name_the_genome() {
        let p = NeatParams {
            pop_size: 4,
            ..NeatParams::default()
        };
        let err = evolve(|_| Err(Error::Invalid("boom".into())), 2, 1, &p, 3, 0).unwrap_err();
        assert!(err.to_string().contains("generation 0"), "{err}");
    }

    #[test]
    fn xor_run_is_reproducible_and_valid() {
        let p = NeatParams {
            pop_size: 150,
            ..NeatParams::default()
        };
        let run = || {
            evolve_with(
                |g| xor_fitness(g, 4.9),
                2,
                1,
                &p,
                40,
                3,
                |pop, _| {
                    for g in &pop.genomes {
                        g.validate(Some(&pop.registry))?;
                    }
                    Ok(())
                },
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.champion.to_text(), b.champion.to_text());
        let best = a.best_per_generation();
        assert!(best.windows(2).all(|w| w[1] >= w[0]));
    }
}
