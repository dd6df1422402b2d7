use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, MultimodalSample};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const DEFAULT_QUERIES_PER_CLASS: usize = 15;

/// A C-way N-shot task. Support and query rows are grouped by episode class:
/// rows `c*N .. (c+1)*N` of the support belong to class `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub support: Vec<MultimodalSample>,
    pub query: Vec<MultimodalSample>,
    /// `classes[c]` is the dataset label mapped to episode label `c`.
    pub classes: Vec<usize>,
    pub shots: usize,
    pub queries_per_class: usize,
}

impl Episode {
    pub fn way(&self) -> usize {
        self.classes.len()
    }

    pub fn relabel(&self, original: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == original)
    }

    pub fn support_labels(&self) -> Vec<usize> {
        (0..self.support.len()).map(|i| i / self.shots).collect()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        (0..self.query.len()).map(|i| i / self.queries_per_class).collect()
    }

    pub fn support_visual(&self) -> Matrix {
        stack(&self.support, |s| &s.visual)
    }

    pub fn support_text(&self) -> Matrix {
        stack(&self.support, |s| &s.text)
    }

    pub fn query_visual(&self) -> Matrix {
        stack(&self.query, |s| &s.visual)
    }

    pub fn query_text(&self) -> Matrix {
        stack(&self.query, |s| &s.text)
    }
}

fn stack(samples: &[MultimodalSample], f: impl Fn(&MultimodalSample) -> &Vec<f64>) -> Matrix {
    let width = samples.first().map_or(0, |s| f(s).len());
    let data: Vec<f64> = samples.iter().flat_map(|s| f(s).iter().copied()).collect();
    Matrix::new(samples.len(), width, data).expect("dataset widths are uniform")
}

/// SplitMix64 finalizer, used to decorrelate derived seeds.
pub fn mix_seed(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of episode `i` in a run seeded with `base`. The base is scrambled
/// first so that runs with consecutive seeds do not share episodes.
pub fn episode_seed(base: u64, i: u64) -> u64 {
    mix_seed(base) ^ i
}

/// Draws `way` classes uniformly without replacement, then `shots + queries`
/// samples per class without replacement, split into support and query.
pub fn sample_task(ds: &Dataset, way: usize, shots: usize, queries: usize, seed: u64) -> Result<Episode> {
    if way == 0 || shots == 0 || queries == 0 {
        return Err(Error::InvalidArgument(format!(
            "way, shots and queries must be positive (got {way}, {shots}, {queries})"
        )));
    }
    let classes = ds.classes();
    if classes.len() < way {
        return Err(Error::InvalidArgument(format!(
            "{way}-way task needs {way} classes but the dataset has {} ({} short)",
            classes.len(),
            way - classes.len()
        )));
    }
    let need = shots + queries;
    let short = classes
        .iter()
        .map(|&c| (c, ds.class_indices(c).len()))
        .find(|&(_, n)| n < need);
    if let Some((c, have)) = short {
        return Err(Error::InvalidArgument(format!(
            "class {c} has {have} samples but {shots}-shot with {queries} queries needs {need} ({} short)",
            need - have
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<usize> = index::sample(&mut rng, classes.len(), way)
        .into_iter()
        .map(|i| classes[i])
        .collect();
    let mut support = Vec::with_capacity(way * shots);
    let mut query = Vec::with_capacity(way * queries);
    for &label in &picked {
        let members = ds.class_indices(label);
        let draw = index::sample(&mut rng, members.len(), need).into_vec();
        for (k, j) in draw.into_iter().enumerate() {
            let s = ds.samples()[members[j]].clone();
            if k < shots {
                support.push(s);
            } else {
                query.push(s);
            }
        }
    }
    Ok(Episode {
        support,
        query,
        classes: picked,
        shots,
        queries_per_class: queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn toy(classes: usize, per: usize) -> Dataset {
        let mut v = Vec::new();
        for c in 0..classes {
            for i in 0..per {
                v.push(MultimodalSample {
                    id: format!("c{c}-{i}"),
                    label: c * 10,
                    visual: vec![c as f64, i as f64],
                    text: vec![i as f64],
                });
            }
        }
        Dataset::new(v).unwrap()
    }

    #[test]
    fn five_way_five_shot_sizes() {
        let ep = sample_task(&toy(8, 25), 5, 5, 15, 1).unwrap();
        assert_eq!(ep.support.len(), 25);
        assert_eq!(ep.query.len(), 75);
        assert_eq!(ep.support_visual().shape(), (25, 2));
        assert_eq!(ep.query_text().shape(), (75, 1));
        for (s, l) in ep.support.iter().zip(ep.support_labels()) {
            assert_eq!(ep.relabel(s.label), Some(l));
        }
        for (s, l) in ep.query.iter().zip(ep.query_labels()) {
            assert_eq!(ep.relabel(s.label), Some(l));
        }
    }

    #[test]
    fn one_way_one_shot() {
        let ep = sample_task(&toy(1, 2), 1, 1, 1, 0).unwrap();
        assert_eq!((ep.support.len(), ep.query.len()), (1, 1));
        assert_ne!(ep.support[0].id, ep.query[0].id);
    }

    #[test]
    fn deficits_are_reported() {
        let err = sample_task(&toy(3, 30), 5, 1, 1, 0).unwrap_err().to_string();
        assert!(err.contains("2 short"), "{err}");
        let err = sample_task(&toy(5, 10), 5, 5, 15, 0).unwrap_err().to_string();
        assert!(err.contains("10 short"), "{err}");
        assert!(sample_task(&toy(5, 10), 5, 0, 1, 0).is_err());
    }

    #[test]
    fn same_seed_same_episode() {
        let ds = toy(10, 30);
        assert_eq!(sample_task(&ds, 5, 5, 15, 9).unwrap(), sample_task(&ds, 5, 5, 15, 9).unwrap());
        assert_ne!(sample_task(&ds, 5, 5, 15, 9).unwrap(), sample_task(&ds, 5, 5, 15, 10).unwrap());
    }

    #[test]
    fn disjoint_support_and_query() {
        let ds = toy(10, 21);
        for i in 0..200 {
            let ep = sample_task(&ds, 5, 5, 15, episode_seed(3, i)).unwrap();
            let ids: HashSet<_> = ep.support.iter().map(|s| &s.id).collect();
            assert!(ep.query.iter().all(|s| !ids.contains(&s.id)));
        }
    }

    #[test]
    fn episode_seeds_of_neighbouring_runs_differ() {
        let a: HashSet<u64> = (0..600).map(|i| episode_seed(0, i)).collect();
        assert!((0..600).all(|i| !a.contains(&episode_seed(1, i))));
    }
}
