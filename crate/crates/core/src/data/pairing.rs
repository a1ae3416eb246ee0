use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::models::{PartitionSpec, TrainBatch};
use crate::tensor::Scalar;

/// Matched input/target rows. Every target shares the classes of
/// `shared_factors` with its input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairBatch {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub shared_factors: Vec<usize>,
    pub partition: usize,
}

impl PairBatch {
    pub fn to_train_batch<T: Scalar>(&self, ds: &Dataset) -> TrainBatch<T> {
        TrainBatch {
            inputs: ds.batch(&self.inputs),
            targets: ds.batch(&self.targets),
            partition: self.partition,
        }
    }
}

/// Images grouped by their classes on one partition's factors.
#[derive(Clone, Debug)]
struct Groups {
    group_of: Vec<u32>,
    members: Vec<Vec<u32>>,
}

impl Groups {
    fn build(ds: &Dataset, shared: &[usize]) -> Self {
        let bases = ds.factors.bases();
        let mut group_of = Vec::with_capacity(ds.len());
        let mut members: Vec<Vec<u32>> = vec![Vec::new(); shared.iter().map(|&f| bases[f]).product()];
        for i in 0..ds.len() {
            let key = shared
                .iter()
                .fold(0usize, |acc, &f| acc * bases[f] + ds.factors.class(i, f) as usize);
            group_of.push(key as u32);
            members[key].push(i as u32);
        }
        Self { group_of, members }
    }
}

/// Draws factor-matched pairs. Inputs and targets come from separate
/// streams so the input sequence does not depend on how targets are chosen.
#[derive(Clone, Debug)]
pub struct PairSampler {
    spec: PartitionSpec,
    groups: Vec<Groups>,
    n: usize,
    num_factors: usize,
    input_rng: ChaCha8Rng,
    target_rng: ChaCha8Rng,
}

impl PairSampler {
    pub fn new(ds: &Dataset, spec: &PartitionSpec, seed: u64) -> Result<Self> {
        spec.validate(ds.factors.num_factors())?;
        if ds.is_empty() {
            return Err(Error::Sampling("cannot sample pairs from an empty dataset".into()));
        }
        let groups = spec.factor_map.iter().map(|shared| Groups::build(ds, shared)).collect();
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        Ok(Self {
            spec: spec.clone(),
            groups,
            n: ds.len(),
            num_factors: ds.factors.num_factors(),
            input_rng: stream(1),
            target_rng: stream(2),
        })
    }

    fn draw_inputs(&mut self, batch: usize) -> Vec<usize> {
        (0..batch).map(|_| self.input_rng.random_range(0..self.n)).collect()
    }

    /// Uniform inputs with replacement; each target uniform over the images
    /// sharing the partition's factor classes with its input.
    pub fn sample(&mut self, partition: usize, batch: usize) -> Result<PairBatch> {
        if partition >= self.groups.len() {
            return Err(Error::Contract(format!(
                "partition {partition} out of range for {} partitions",
                self.groups.len()
            )));
        }
        let inputs = self.draw_inputs(batch);
        let g = &self.groups[partition];
        let mut targets = Vec::with_capacity(batch);
        for &i in &inputs {
            let pool = &g.members[g.group_of[i] as usize];
            if pool.is_empty() {
                return Err(Error::Sampling(format!("no image matches row {i} on partition {partition}")));
            }
            targets.push(pool[self.target_rng.random_range(0..pool.len())] as usize);
        }
        Ok(PairBatch {
            inputs,
            targets,
            shared_factors: self.spec.factor_map[partition].clone(),
            partition,
        })
    }

    /// Self-paired batch (target = input) for ungated training, drawing
    /// inputs from the same stream as [`PairSampler::sample`].
    pub fn sample_self(&mut self, batch: usize) -> PairBatch {
        let inputs = self.draw_inputs(batch);
        PairBatch {
            targets: inputs.clone(),
            inputs,
            shared_factors: (0..self.num_factors).collect(),
            partition: 0,
        }
    }
}

/// Shuffled round-robin over partitions: each run of `P` steps visits every
/// partition once in random order, so counts differ by at most one.
pub fn epoch_schedule<R: Rng + ?Sized>(num_partitions: usize, steps: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(steps);
    let mut round: Vec<usize> = (0..num_partitions).collect();
    while out.len() < steps && num_partitions > 0 {
        round.shuffle(rng);
        let take = (steps - out.len()).min(num_partitions);
        out.extend_from_slice(&round[..take]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_procedural, DESK_BASES};

    fn desk() -> Dataset {
        generate_procedural(&DESK_BASES).unwrap()
    }

    #[test]
    fn every_pair_shares_its_partition_factors() {
        let ds = desk();
        let spec = PartitionSpec::dsprites();
        let mut s = PairSampler::new(&ds, &spec, 3).unwrap();
        for p in 0..4 {
            let mut rows = 0;
            let mut differing = 0;
            while rows < 10_000 {
                let b = s.sample(p, 500).unwrap();
                assert_eq!(b.shared_factors, spec.factor_map[p]);
                for (&i, &t) in b.inputs.iter().zip(&b.targets) {
                    for &f in &b.shared_factors {
                        assert_eq!(ds.factors.class(i, f), ds.factors.class(t, f));
                    }
                    differing += (i != t) as usize;
                }
                rows += 500;
            }
            assert!(differing > 9_000, "partition {p}: targets should rarely equal inputs");
        }
    }

    #[test]
    fn position_partition_matches_both_coordinates() {
        let ds = desk();
        let spec = PartitionSpec::dsprites();
        let mut s = PairSampler::new(&ds, &spec, 4).unwrap();
        let b = s.sample(3, 256).unwrap();
        assert_eq!(b.shared_factors, vec![3, 4]);
        for (&i, &t) in b.inputs.iter().zip(&b.targets) {
            assert_eq!(ds.factors.classes(i)[3..], ds.factors.classes(t)[3..]);
        }
    }

    #[test]
    fn all_factor_partition_forces_identity_targets() {
        let ds = desk();
        let spec = PartitionSpec::single(8, 5);
        let mut s = PairSampler::new(&ds, &spec, 5).unwrap();
        let b = s.sample(0, 300).unwrap();
        assert_eq!(b.inputs, b.targets);

        let mut gated = PairSampler::new(&ds, &spec, 9).unwrap();
        let mut plain = PairSampler::new(&ds, &spec, 9).unwrap();
        for _ in 0..5 {
            let g = gated.sample(0, 64).unwrap();
            let p = plain.sample_self(64);
            assert_eq!(g.inputs, p.inputs);
            assert_eq!(g.targets, p.targets);
        }
    }

    #[test]
    fn sampler_errors() {
        let ds = desk();
        let spec = PartitionSpec::dsprites();
        let mut s = PairSampler::new(&ds, &spec, 1).unwrap();
        assert!(matches!(s.sample(4, 8), Err(Error::Contract(_))));
        let bad = PartitionSpec::new(vec![0, 4, 8], vec![vec![0, 1], vec![2]]).unwrap();
        assert!(PairSampler::new(&ds, &bad, 1).is_err());
    }

    #[test]
    fn inputs_cover_the_dataset_uniformly() {
        let ds = generate_procedural(&[3, 1, 1, 2, 2]).unwrap();
        let mut s = PairSampler::new(&ds, &PartitionSpec::dsprites(), 6).unwrap();
        let mut counts = vec![0usize; ds.len()];
        for _ in 0..100 {
            for i in s.sample(1, 120).unwrap().inputs {
                counts[i] += 1;
            }
        }
        // 12 cells, 12000 draws: expected 1000 each
        assert!(counts.iter().all(|&c| (850..1150).contains(&c)), "{counts:?}");
    }

    #[test]
    fn schedule_is_balanced_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = epoch_schedule(4, 8, &mut rng);
        assert_eq!(s.len(), 8);
        assert!((0..4).all(|p| s.iter().filter(|&&x| x == p).count() == 2));

        let s = epoch_schedule(4, 10, &mut rng);
        let counts: Vec<usize> = (0..4).map(|p| s.iter().filter(|&&x| x == p).count()).collect();
        assert!(counts.iter().all(|c| (2..=3).contains(c)));
        assert_eq!(counts.iter().sum::<usize>(), 10);

        let a = epoch_schedule(4, 37, &mut ChaCha8Rng::seed_from_u64(5));
        let b = epoch_schedule(4, 37, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert_ne!(a, epoch_schedule(4, 37, &mut ChaCha8Rng::seed_from_u64(6)));
    }
}
