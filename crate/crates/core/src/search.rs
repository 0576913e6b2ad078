//! Genetic search over a small family of threshold segmentations, scored by a
//! label-invariant distance to a ground truth.
//!
//! A [`Genome`] picks a channel, a threshold, an optional inversion and an
//! optional opening or closing. Lower fitness is better. Every child is bred
//! from its own RNG stream derived from `(seed, generation, index)`, so fitness
//! can be evaluated in parallel without changing the result.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::Evaluation;
use crate::perturb::{morph, MorphOp, MorphSpec};
use crate::raster::{Channel, Raster};
use crate::{Error, LabeledArray, MetricName, MetricResult, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphChoice {
    None,
    Open,
    Close,
}

const MORPH_CHOICES: [MorphChoice; 3] = [MorphChoice::None, MorphChoice::Open, MorphChoice::Close];
const FOOTPRINTS: [u8; 4] = [1, 3, 5, 7];
const GENES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Genome {
    pub channel: Channel,
    pub threshold: u8,
    pub invert: bool,
    pub morph_op: MorphChoice,
    /// Odd, 1 to 7.
    pub footprint_side: u8,
}

impl Genome {
    /// Gray channel, plain threshold, no post-processing.
    pub fn threshold(threshold: u8) -> Self {
        Self {
            channel: Channel::Gray,
            threshold,
            invert: false,
            morph_op: MorphChoice::None,
            footprint_side: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !FOOTPRINTS.contains(&self.footprint_side) {
            return Err(Error::InvalidConfig(format!(
                "footprint side {} not in {FOOTPRINTS:?}",
                self.footprint_side
            )));
        }
        Ok(())
    }

    fn random(rng: &mut impl Rng, channels: &[Channel]) -> Self {
        let mut g = Genome::threshold(0);
        for gene in 0..GENES {
            g.randomize_gene(gene, rng, channels);
        }
        g
    }

    fn randomize_gene(&mut self, gene: usize, rng: &mut impl Rng, channels: &[Channel]) {
        match gene {
            0 => self.channel = channels[rng.random_range(0..channels.len())],
            1 => self.threshold = rng.random(),
            2 => self.invert = rng.random(),
            3 => self.morph_op = MORPH_CHOICES[rng.random_range(0..MORPH_CHOICES.len())],
            _ => self.footprint_side = FOOTPRINTS[rng.random_range(0..FOOTPRINTS.len())],
        }
    }

    /// Genes `0..cut` from `self`, the rest from `other`.
    fn crossover(&self, other: &Genome, cut: usize) -> Genome {
        let mut child = *self;
        if cut <= 1 {
            child.threshold = other.threshold;
        }
        if cut <= 2 {
            child.invert = other.invert;
        }
        if cut <= 3 {
            child.morph_op = other.morph_op;
        }
        if cut <= 4 {
            child.footprint_side = other.footprint_side;
        }
        if cut == 0 {
            child.channel = other.channel;
        }
        child
    }
}

/// Segments `image` with `genome`: pixels above the threshold get label 1.
pub fn apply_genome(genome: &Genome, image: &Raster) -> Result<LabeledArray> {
    genome.validate()?;
    let plane = image.channel(genome.channel)?;
    let labels = plane
        .iter()
        .map(|&v| u32::from((v > genome.threshold) != genome.invert))
        .collect();
    let arr = LabeledArray::new(image.rows(), image.cols(), labels)?;
    let op = match genome.morph_op {
        MorphChoice::None => return Ok(arr),
        MorphChoice::Open => MorphOp::Open,
        MorphChoice::Close => MorphOp::Close,
    };
    morph(
        &arr,
        &MorphSpec::new(op, usize::from(genome.footprint_side)).with_labels(1, 0),
    )
}

/// Distance between the genome's segmentation and `gt`; lower is better.
pub fn fitness(genome: &Genome, image: &Raster, gt: &LabeledArray, metric: MetricName) -> Result<MetricResult> {
    let candidate = apply_genome(genome, image)?;
    Evaluation::new(gt, &candidate)?.metric(metric)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub population: usize,
    pub generations: usize,
    pub metric: MetricName,
    pub seed: u64,
    pub crossover_rate: f64,
    /// Per-gene probability of resampling.
    pub mutation_rate: f64,
    pub elitism: usize,
    pub tournament_size: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            population: 20,
            generations: 50,
            metric: MetricName::Lad,
            seed: 0,
            crossover_rate: 0.7,
            mutation_rate: 0.1,
            elitism: 1,
            tournament_size: 3,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.population < 2 {
            return bad(format!("population must be at least 2, got {}", self.population));
        }
        if self.elitism >= self.population {
            return bad(format!("elitism {} must be below population {}", self.elitism, self.population));
        }
        if self.tournament_size == 0 {
            return bad("tournament size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) || !(0.0..=1.0).contains(&self.mutation_rate) {
            return bad("crossover and mutation rates must lie in [0, 1]".into());
        }
        if !matches!(self.metric, MetricName::Lad | MetricName::Madlad) {
            return bad(format!("fitness metric must be lad or madlad, got {}", self.metric));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
    /// Individuals whose MADLAD mapping was degenerate.
    pub degenerate: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub genome: Genome,
    pub fitness: f64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub best_genome: Genome,
    pub best_fitness: f64,
    pub history: Vec<GenerationStats>,
    /// Final population, best first.
    pub ranked: Vec<Scored>,
}

impl SearchReport {
    pub fn history_csv(&self) -> String {
        let mut out = String::from("generation,best,mean\n");
        for g in &self.history {
            out.push_str(&format!("{},{},{}\n", g.generation, g.best, g.mean));
        }
        out
    }
}

fn stream_rng(seed: u64, generation: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((generation as u64) << 32) | index as u64);
    rng
}

pub fn evolve(config: &SearchConfig, image: &Raster, gt: &LabeledArray) -> Result<SearchReport> {
    evolve_from(config, image, gt, &[])
}

/// Like [`evolve`], with the first individuals of generation 0 taken from `initial`.
pub fn evolve_from(
    config: &SearchConfig,
    image: &Raster,
    gt: &LabeledArray,
    initial: &[Genome],
) -> Result<SearchReport> {
    config.validate()?;
    if (image.rows(), image.cols()) != gt.shape() {
        return Err(Error::ShapeMismatch(image.rows(), image.cols(), gt.rows(), gt.cols()));
    }
    let channels = image.available_channels();
    for g in initial {
        g.validate()?;
        if !channels.contains(&g.channel) {
            return Err(Error::InvalidConfig(format!("channel {:?} unavailable", g.channel)));
        }
    }

    let mut population: Vec<Genome> = (0..config.population)
        .map(|i| match initial.get(i) {
            Some(g) => *g,
            None => Genome::random(&mut stream_rng(config.seed, 0, i), channels),
        })
        .collect();

    let mut cache: HashMap<Genome, MetricResult> = HashMap::new();
    let mut history = Vec::with_capacity(config.generations + 1);
    let mut best: Option<Scored> = None;

    for generation in 0..=config.generations {
        let mut missing: Vec<Genome> = population.iter().filter(|g| !cache.contains_key(g)).copied().collect();
        missing.sort_unstable();
        missing.dedup();
        let fresh = missing
            .par_iter()
            .map(|g| fitness(g, image, gt, config.metric).map(|r| (*g, r)))
            .collect::<Result<Vec<_>>>()?;
        cache.extend(fresh);

        let mut scored: Vec<Scored> = population
            .iter()
            .map(|g| {
                let r = cache[g];
                Scored {
                    genome: *g,
                    fitness: r.value,
                    degenerate: r.degenerate,
                }
            })
            .collect();
        // stable: ties keep population order
        scored.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));

        history.push(GenerationStats {
            generation,
            best: scored[0].fitness,
            mean: scored.iter().map(|s| s.fitness).sum::<f64>() / scored.len() as f64,
            degenerate: scored.iter().filter(|s| s.degenerate).count(),
        });
        if best.as_ref().is_none_or(|b| scored[0].fitness < b.fitness) {
            best = Some(scored[0].clone());
        }

        if generation == config.generations {
            let best = best.expect("at least one generation");
            return Ok(SearchReport {
                best_genome: best.genome,
                best_fitness: best.fitness,
                history,
                ranked: scored,
            });
        }

        let mut next: Vec<Genome> = scored.iter().take(config.elitism).map(|s| s.genome).collect();
        for index in config.elitism..config.population {
            let mut rng = stream_rng(config.seed, generation + 1, index);
            let pick = |rng: &mut ChaCha8Rng| {
                (0..config.tournament_size)
                    .map(|_| rng.random_range(0..scored.len()))
                    .min()
                    .map(|i| scored[i].genome)
                    .expect("tournament size is positive")
            };
            let first = pick(&mut rng);
            let second = pick(&mut rng);
            let mut child = if rng.random_bool(config.crossover_rate) {
                first.crossover(&second, rng.random_range(1..GENES))
            } else {
                first
            };
            for gene in 0..GENES {
                if rng.random_bool(config.mutation_rate) {
                    child.randomize_gene(gene, &mut rng, channels);
                }
            }
            next.push(child);
        }
        population = next;
    }
    unreachable!("loop returns on the last generation")
}
