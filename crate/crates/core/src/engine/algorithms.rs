//! The five scenario-generation strategies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scenario::GeneGroup;

use super::operators::{
    argmin, diagonal, euclidean, gaussian_mutation, masked_mutation, one_point_crossover, tournament, uniform_sample,
};
use super::search::{AlgorithmName, AlgorithmParams, BudgetHint, Observation, SearchAlgorithm, SearchSpace};
use super::surrogate::IdwSurrogate;

/// Global mutation step as a fraction of each gene's range.
pub const GLOBAL_SIGMA: f64 = 0.10;
/// Step used while fuzzing around the best individual.
pub const LOCAL_SIGMA: f64 = 0.025;
const IMPROVEMENT_EPS: f64 = 1e-12;

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------

/// Uniform sampling with no use of feedback.
pub struct RandomSearch {
    rng: ChaCha8Rng,
    space: SearchSpace,
    batch: usize,
}

impl RandomSearch {
    pub fn new(params: &AlgorithmParams, space: SearchSpace, seed: u64) -> Self {
        RandomSearch {
            rng: rng_for(seed),
            space,
            batch: params.population_size.max(1),
        }
    }
}

impl SearchAlgorithm for RandomSearch {
    fn name(&self) -> AlgorithmName {
        AlgorithmName::Random
    }

    fn propose(&mut self) -> Vec<Vec<f64>> {
        (0..self.batch).map(|_| uniform_sample(&self.space.bounds, &mut self.rng)).collect()
    }

    fn observe(&mut self, _: &[(Vec<f64>, Observation)]) {}
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub values: Vec<f64>,
    pub fitness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum LocalEnd {
    Evaluations(usize),
    Deadline(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum GaPhase {
    Init,
    Global,
    Local(LocalEnd),
}

/// Genetic search with a local fuzzing phase around the best individual
/// whenever the best fitness stagnates.
pub struct AvFuzzer {
    rng: ChaCha8Rng,
    space: SearchSpace,
    population_size: usize,
    pm: f64,
    pc: f64,
    stagnation_window: usize,
    local_share: f64,
    local_seconds: f64,
    budget: BudgetHint,
    phase: GaPhase,
    population: Vec<Member>,
    best: Option<Member>,
    stagnant: usize,
    generation_sizes: Vec<usize>,
    local_phases: usize,
}

impl AvFuzzer {
    pub fn new(params: &AlgorithmParams, space: SearchSpace, budget: BudgetHint, seed: u64) -> Self {
        AvFuzzer {
            rng: rng_for(seed),
            space,
            population_size: params.population_size,
            pm: params.pm,
            pc: params.pc,
            stagnation_window: params.extra("stagnation_generations") as usize,
            local_share: params.local_run_hour / params.run_hour,
            local_seconds: params.local_run_hour * 3600.0,
            budget,
            phase: GaPhase::Init,
            population: Vec::new(),
            best: None,
            stagnant: 0,
            generation_sizes: Vec::new(),
            local_phases: 0,
        }
    }

    /// Population size after each completed generation, initial one included.
    pub fn generation_sizes(&self) -> &[usize] {
        &self.generation_sizes
    }

    pub fn population(&self) -> &[Member] {
        &self.population
    }

    pub fn local_phases(&self) -> usize {
        self.local_phases
    }

    fn elite_index(&self) -> usize {
        let f: Vec<f64> = self.population.iter().map(|m| m.fitness).collect();
        argmin(&f).expect("population is non-empty")
    }

    fn offer_best(&mut self, m: &Member) -> bool {
        match &self.best {
            Some(b) if m.fitness >= b.fitness - IMPROVEMENT_EPS => false,
            _ => {
                self.best = Some(m.clone());
                true
            }
        }
    }

    fn children(&mut self) -> Vec<Vec<f64>> {
        let want = self.population_size - 1;
        let fitness: Vec<f64> = self.population.iter().map(|m| m.fitness).collect();
        let mut out = Vec::with_capacity(want);
        while out.len() < want {
            let a = tournament(&fitness, &mut self.rng);
            let b = tournament(&fitness, &mut self.rng);
            let (c1, c2, _) = one_point_crossover(&self.population[a].values, &self.population[b].values, self.pc, &mut self.rng);
            for c in [c1, c2] {
                if out.len() < want {
                    let (m, _) = gaussian_mutation(&c, &self.space.bounds, self.pm, GLOBAL_SIGMA, &mut self.rng);
                    out.push(m);
                }
            }
        }
        out
    }

    fn local_batch(&mut self, end: LocalEnd) -> Vec<Vec<f64>> {
        let n = match end {
            LocalEnd::Evaluations(left) => left.min(self.population_size),
            LocalEnd::Deadline(_) => self.population_size,
        };
        let center = self.best.clone().expect("local phase has a best").values;
        let mask: Vec<usize> = (0..self.space.dim()).collect();
        (0..n.max(1))
            .map(|_| masked_mutation(&center, &self.space.bounds, &mask, self.pm, LOCAL_SIGMA, &mut self.rng))
            .collect()
    }

    fn start_local(&mut self, now: f64) {
        let end = match self.budget.max_evals {
            Some(total) => LocalEnd::Evaluations(((total as f64 * self.local_share).ceil() as usize).max(1)),
            None => LocalEnd::Deadline(now + self.local_seconds),
        };
        self.local_phases += 1;
        self.phase = GaPhase::Local(end);
    }

    fn finish_local(&mut self) {
        let best = self.best.clone().expect("best exists");
        if !self.population.iter().any(|m| m.values == best.values) {
            let f: Vec<f64> = self.population.iter().map(|m| -m.fitness).collect();
            let worst = argmin(&f).expect("population is non-empty");
            self.population[worst] = best;
        }
        self.stagnant = 0;
        self.phase = GaPhase::Global;
    }
}

impl SearchAlgorithm for AvFuzzer {
    fn name(&self) -> AlgorithmName {
        AlgorithmName::Avfuzzer
    }

    fn propose(&mut self) -> Vec<Vec<f64>> {
        match self.phase {
            GaPhase::Init => (0..self.population_size)
                .map(|_| uniform_sample(&self.space.bounds, &mut self.rng))
                .collect(),
            GaPhase::Global => self.children(),
            GaPhase::Local(end) => self.local_batch(end),
        }
    }

    fn observe(&mut self, results: &[(Vec<f64>, Observation)]) {
        let members: Vec<Member> = results
            .iter()
            .map(|(v, o)| Member {
                values: v.clone(),
                fitness: o.fitness,
            })
            .collect();
        let now = results.last().map_or(0.0, |r| r.1.elapsed);
        match self.phase {
            GaPhase::Init => {
                if members.is_empty() {
                    return;
                }
                self.population = members;
                self.generation_sizes.push(self.population.len());
                let elite = self.population[self.elite_index()].clone();
                self.offer_best(&elite);
                self.phase = GaPhase::Global;
            }
            GaPhase::Global => {
                let elite = self.population[self.elite_index()].clone();
                let mut next = vec![elite];
                next.extend(members);
                self.population = next;
                self.generation_sizes.push(self.population.len());
                let gen_best = self.population[self.elite_index()].clone();
                if self.offer_best(&gen_best) {
                    self.stagnant = 0;
                } else {
                    self.stagnant += 1;
                }
                if self.stagnant >= self.stagnation_window && self.local_share > 0.0 {
                    self.start_local(now);
                }
            }
            GaPhase::Local(end) => {
                for m in &members {
                    self.offer_best(m);
                }
                let done = match end {
                    LocalEnd::Evaluations(left) => {
                        let left = left.saturating_sub(members.len());
                        self.phase = GaPhase::Local(LocalEnd::Evaluations(left));
                        left == 0
                    }
                    LocalEnd::Deadline(t) => now >= t,
                };
                if done {
                    self.finish_local();
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Seed {
    pub values: Vec<f64>,
    pub fitness: f64,
    /// Novelty when the seed was admitted.
    pub novelty: f64,
    pub energy: usize,
}

/// Diversity-driven fuzzing over a novelty archive of behavior vectors.
pub struct BehaviorExplorer {
    rng: ChaCha8Rng,
    space: SearchSpace,
    population_size: usize,
    pm: f64,
    threshold: f64,
    energy_cap: usize,
    archive: Vec<Vec<f64>>,
    seeds: Vec<Seed>,
    parents: Vec<Option<usize>>,
    initialized: bool,
}

impl BehaviorExplorer {
    pub fn new(params: &AlgorithmParams, space: SearchSpace, seed: u64) -> Self {
        BehaviorExplorer {
            rng: rng_for(seed),
            space,
            population_size: params.population_size,
            pm: params.pm,
            threshold: params.archive_threshold,
            energy_cap: params.extra("energy_cap") as usize,
            archive: Vec::new(),
            seeds: Vec::new(),
            parents: Vec::new(),
            initialized: false,
        }
    }

    pub fn archive(&self) -> &[Vec<f64>] {
        &self.archive
    }

    pub fn seeds(&self) -> &[Seed] {
        &self.seeds
    }

    /// Distance to the nearest archived behavior; infinite when empty.
    pub fn novelty(&self, behavior: &[f64]) -> f64 {
        self.archive
            .iter()
            .map(|a| euclidean(a, behavior))
            .fold(f64::INFINITY, f64::min)
    }

    /// Seed with the smallest rank sum over (novelty desc, fitness asc)
    /// among those with energy left.
    fn select(&self) -> Option<usize> {
        let eligible: Vec<usize> = (0..self.seeds.len()).filter(|&i| self.seeds[i].energy < self.energy_cap).collect();
        if eligible.is_empty() {
            return None;
        }
        let rank = |key: &dyn Fn(usize) -> f64| {
            let mut order = eligible.clone();
            order.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
            let mut r = vec![0usize; self.seeds.len()];
            for (pos, &i) in order.iter().enumerate() {
                r[i] = pos;
            }
            r
        };
        let by_novelty = rank(&|i| -self.seeds[i].novelty);
        let by_fitness = rank(&|i| self.seeds[i].fitness);
        eligible.into_iter().min_by_key(|&i| (by_novelty[i] + by_fitness[i], i))
    }
}

impl SearchAlgorithm for BehaviorExplorer {
    fn name(&self) -> AlgorithmName {
        AlgorithmName::Behavexplor
    }

    fn propose(&mut self) -> Vec<Vec<f64>> {
        self.parents.clear();
        let mut out = Vec::with_capacity(self.population_size);
        for _ in 0..self.population_size {
            let parent = if self.initialized { self.select() } else { None };
            match parent {
                Some(i) => {
                    self.seeds[i].energy += 1;
                    let (child, _) =
                        gaussian_mutation(&self.seeds[i].values, &self.space.bounds, self.pm, GLOBAL_SIGMA, &mut self.rng);
                    out.push(child);
                }
                None => out.push(uniform_sample(&self.space.bounds, &mut self.rng)),
            }
            self.parents.push(parent);
        }
        out
    }

    fn observe(&mut self, results: &[(Vec<f64>, Observation)]) {
        for (k, (values, obs)) in results.iter().enumerate() {
            let novelty = self.novelty(&obs.behavior);
            let novel = novelty > self.threshold;
            if novel {
                self.archive.push(obs.behavior.clone());
            }
            let parent = self.parents.get(k).copied().flatten();
            let improves = parent.map_or(true, |p| obs.fitness < self.seeds[p].fitness);
            if novel || improves {
                self.seeds.push(Seed {
                    values: values.clone(),
                    fitness: obs.fitness,
                    novelty,
                    energy: 0,
                });
            }
        }
        self.initialized = true;
    }
}

// ---------------------------------------------------------------------------

/// Internal settings of the surrogate optimizer.
pub const SURROGATE_GA_POPULATION: usize = 20;
pub const SURROGATE_GA_GENERATIONS: usize = 25;
/// Minimum spacing between proposals, as a fraction of the space diagonal.
pub const PROPOSAL_SPACING: f64 = 0.05;

/// Surrogate-assisted search: an IDW model of the evaluated data is
/// optimized without simulation and its best distinct minima are evaluated.
pub struct SurrogateSearch {
    rng: ChaCha8Rng,
    space: SearchSpace,
    population_size: usize,
    pool: usize,
    top_k: usize,
    data: Vec<(Vec<f64>, f64)>,
    fallbacks: usize,
}

impl SurrogateSearch {
    pub fn new(params: &AlgorithmParams, space: SearchSpace, seed: u64) -> Self {
        SurrogateSearch {
            rng: rng_for(seed),
            space,
            population_size: params.population_size,
            pool: params.surrogate_pool,
            top_k: params.extra("top_k") as usize,
            data: Vec::new(),
            fallbacks: 0,
        }
    }

    pub fn surrogate(&self) -> IdwSurrogate {
        let (p, v) = self.data.iter().cloned().unzip();
        IdwSurrogate::fit(p, v)
    }

    /// Batches that fell back to random sampling on a degenerate dataset.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    fn optimize_surrogate(&mut self, model: &IdwSurrogate) -> Vec<(Vec<f64>, f64)> {
        let bounds = &self.space.bounds;
        let mut ranked: Vec<(Vec<f64>, f64)> = self.data.clone();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut pop: Vec<Vec<f64>> = ranked.iter().take(SURROGATE_GA_POPULATION / 4).map(|d| d.0.clone()).collect();
        while pop.len() < SURROGATE_GA_POPULATION {
            pop.push(uniform_sample(bounds, &mut self.rng));
        }
        let pm = 1.0 / self.space.dim().max(1) as f64;
        let mut seen: Vec<(Vec<f64>, f64)> = Vec::new();
        for _ in 0..SURROGATE_GA_GENERATIONS {
            let scores: Vec<f64> = pop.iter().map(|x| model.predict(x)).collect();
            seen.extend(pop.iter().cloned().zip(scores.iter().copied()));
            let elite = pop[argmin(&scores).expect("non-empty")].clone();
            let mut next = vec![elite];
            while next.len() < SURROGATE_GA_POPULATION {
                let a = tournament(&scores, &mut self.rng);
                let b = tournament(&scores, &mut self.rng);
                let (c1, c2, _) = one_point_crossover(&pop[a], &pop[b], 0.9, &mut self.rng);
                for c in [c1, c2] {
                    if next.len() < SURROGATE_GA_POPULATION {
                        next.push(gaussian_mutation(&c, bounds, pm, GLOBAL_SIGMA, &mut self.rng).0);
                    }
                }
            }
            pop = next;
        }
        let scores: Vec<f64> = pop.iter().map(|x| model.predict(x)).collect();
        seen.extend(pop.into_iter().zip(scores));
        seen
    }

    fn proposals(&mut self) -> Vec<Vec<f64>> {
        let model = self.surrogate();
        if model.is_degenerate() || diagonal(&self.space.bounds) == 0.0 {
            self.fallbacks += 1;
            return (0..self.population_size)
                .map(|_| uniform_sample(&self.space.bounds, &mut self.rng))
                .collect();
        }
        let min_gap = PROPOSAL_SPACING * diagonal(&self.space.bounds);
        let mut candidates = self.optimize_surrogate(&model);
        candidates.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut picked: Vec<Vec<f64>> = Vec::with_capacity(self.top_k);
        for (x, _) in candidates {
            if picked.len() == self.top_k {
                break;
            }
            let clear = picked.iter().chain(self.data.iter().map(|d| &d.0)).all(|p| euclidean(p, &x) >= min_gap);
            if clear {
                picked.push(x);
            }
        }
        while picked.len() < self.top_k {
            picked.push(uniform_sample(&self.space.bounds, &mut self.rng));
        }
        picked
    }
}

impl SearchAlgorithm for SurrogateSearch {
    fn name(&self) -> AlgorithmName {
        AlgorithmName::Samota
    }

    fn propose(&mut self) -> Vec<Vec<f64>> {
        if self.data.len() < self.pool {
            let n = self.pool - self.data.len();
            return (0..n).map(|_| uniform_sample(&self.space.bounds, &mut self.rng)).collect();
        }
        self.proposals()
    }

    fn observe(&mut self, results: &[(Vec<f64>, Observation)]) {
        self.data.extend(results.iter().map(|(v, o)| (v.clone(), o.fitness)));
    }
}

// ---------------------------------------------------------------------------

pub const GROUP_ROTATION: [GeneGroup; 3] = [GeneGroup::Speeds, GeneGroup::Offsets, GeneGroup::Delays];

/// Quality-guided fuzzing: mutate one gene group at a time and keep a
/// child only when it raises the driving-quality score.
pub struct DriveFuzz {
    rng: ChaCha8Rng,
    space: SearchSpace,
    population_size: usize,
    pm: f64,
    stall_limit: usize,
    current: Option<(Vec<f64>, f64)>,
    stage: usize,
    stall: usize,
    stage_history: Vec<Option<GeneGroup>>,
}

impl DriveFuzz {
    pub fn new(params: &AlgorithmParams, space: SearchSpace, seed: u64) -> Self {
        let groups = GROUP_ROTATION.iter().filter(|g| !space.indices_of(**g).is_empty()).count();
        DriveFuzz {
            rng: rng_for(seed),
            space,
            population_size: params.population_size,
            pm: params.pm,
            stall_limit: params.extra("stall_rotations") as usize * groups.max(1),
            current: None,
            stage: 0,
            stall: 0,
            stage_history: Vec::new(),
        }
    }

    /// Gene group mutated in each batch (`None` for seeding batches).
    pub fn stage_history(&self) -> &[Option<GeneGroup>] {
        &self.stage_history
    }

    pub fn current(&self) -> Option<&(Vec<f64>, f64)> {
        self.current.as_ref()
    }

    fn next_group(&mut self) -> Option<(GeneGroup, Vec<usize>)> {
        for k in 0..GROUP_ROTATION.len() {
            let g = GROUP_ROTATION[(self.stage + k) % GROUP_ROTATION.len()];
            let idx = self.space.indices_of(g);
            if !idx.is_empty() {
                self.stage = (self.stage + k) % GROUP_ROTATION.len();
                return Some((g, idx));
            }
        }
        None
    }
}

impl SearchAlgorithm for DriveFuzz {
    fn name(&self) -> AlgorithmName {
        AlgorithmName::Drivefuzz
    }

    fn propose(&mut self) -> Vec<Vec<f64>> {
        let Some((parent, _)) = self.current.clone() else {
            self.stage_history.push(None);
            return (0..self.population_size)
                .map(|_| uniform_sample(&self.space.bounds, &mut self.rng))
                .collect();
        };
        let Some((group, mask)) = self.next_group() else {
            self.stage_history.push(None);
            return vec![parent; self.population_size];
        };
        self.stage_history.push(Some(group));
        (0..self.population_size)
            .map(|_| masked_mutation(&parent, &self.space.bounds, &mask, self.pm, GLOBAL_SIGMA, &mut self.rng))
            .collect()
    }

    fn observe(&mut self, results: &[(Vec<f64>, Observation)]) {
        let qualities: Vec<f64> = results.iter().map(|r| -r.1.quality).collect();
        let Some(top) = argmin(&qualities) else {
            return;
        };
        let (values, obs) = &results[top];
        match &self.current {
            None => {
                self.current = Some((values.clone(), obs.quality));
                self.stall = 0;
            }
            Some((_, q)) => {
                if obs.quality > *q {
                    self.current = Some((values.clone(), obs.quality));
                    self.stall = 0;
                } else {
                    self.stall += 1;
                }
                self.stage = (self.stage + 1) % GROUP_ROTATION.len();
                if self.stall >= self.stall_limit {
                    // seed exhausted: draw a fresh one
                    self.current = None;
                    self.stall = 0;
                }
            }
        }
    }
}
