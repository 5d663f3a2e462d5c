use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::rng::Philox;

/// One image with its class and the subject it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub image: ImageTensor,
    pub label: usize,
    pub group_id: String,
}

/// An M-way C-shot task. Samples are referred to by their index in the
/// dataset slice the episode was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub ways: usize,
    pub shots: usize,
    /// Episode classes in ascending id order.
    pub classes: Vec<usize>,
    pub support: BTreeMap<usize, Vec<usize>>,
    /// `(sample index, true class id)`.
    pub queries: Vec<(usize, usize)>,
}

impl Episode {
    /// Position of `class` within [`Episode::classes`].
    pub fn local_index(&self, class: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    /// Checks the structural invariants against `data`.
    pub fn validate(&self, data: &[LabeledSample]) -> Result<()> {
        let support: BTreeSet<usize> = self.support.values().flatten().copied().collect();
        let support_groups: BTreeSet<&str> = support.iter().map(|&i| data[i].group_id.as_str()).collect();
        for (class, members) in &self.support {
            if members.len() != self.shots {
                return Err(Error::EpisodeInfeasible {
                    class: *class,
                    reason: format!("support holds {} samples, expected {}", members.len(), self.shots),
                });
            }
        }
        for &(q, class) in &self.queries {
            if support.contains(&q) || support_groups.contains(data[q].group_id.as_str()) {
                return Err(Error::EpisodeInfeasible {
                    class,
                    reason: format!("query sample {q} shares a sample or group with the support set"),
                });
            }
        }
        Ok(())
    }
}

fn classes_in(data: &[LabeledSample], pool: &[usize]) -> Vec<usize> {
    pool.iter()
        .map(|&i| data[i].label)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn choose_classes(available: &[usize], ways: usize, rng: &mut Philox) -> Result<Vec<usize>> {
    if ways < 2 {
        return Err(Error::InvalidArgument(format!("episodes need at least 2 ways, got {ways}")));
    }
    if available.len() < ways {
        return Err(Error::InvalidArgument(format!(
            "{ways}-way episodes need {ways} classes, dataset has {}",
            available.len()
        )));
    }
    let mut chosen: Vec<usize> = rng
        .choose_indices(available.len(), ways)
        .into_iter()
        .map(|i| available[i])
        .collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Draws an episode from every sample in `data`.
pub fn sample_episode(data: &[LabeledSample], ways: usize, shots: usize, rng: &mut Philox) -> Result<Episode> {
    let pool: Vec<usize> = (0..data.len()).collect();
    sample_episode_from(data, &pool, ways, shots, rng)
}

/// Draws `ways` classes from `pool`, then for each class one query and
/// `shots` support samples from other groups than the query's.
pub fn sample_episode_from(
    data: &[LabeledSample],
    pool: &[usize],
    ways: usize,
    shots: usize,
    rng: &mut Philox,
) -> Result<Episode> {
    if shots == 0 {
        return Err(Error::InvalidArgument("shots must be at least 1".into()));
    }
    let classes = choose_classes(&classes_in(data, pool), ways, rng)?;
    let mut support = BTreeMap::new();
    let mut queries = Vec::with_capacity(ways);
    for &class in &classes {
        let members: Vec<usize> = pool.iter().copied().filter(|&i| data[i].label == class).collect();
        if members.len() < shots + 1 {
            return Err(Error::EpisodeInfeasible {
                class,
                reason: format!("{} samples available, {} needed", members.len(), shots + 1),
            });
        }
        let groups: BTreeSet<&str> = members.iter().map(|&i| data[i].group_id.as_str()).collect();
        if groups.len() < 2 {
            return Err(Error::EpisodeInfeasible {
                class,
                reason: "all samples share one group".into(),
            });
        }
        let outside = |q: usize| -> Vec<usize> {
            members
                .iter()
                .copied()
                .filter(|&i| data[i].group_id != data[q].group_id)
                .collect()
        };
        // Rejection sampling over queries restricted to those that leave
        // enough out-of-group support.
        let feasible: Vec<usize> = members.iter().copied().filter(|&q| outside(q).len() >= shots).collect();
        if feasible.is_empty() {
            return Err(Error::EpisodeInfeasible {
                class,
                reason: format!("no query leaves {shots} support samples from other groups"),
            });
        }
        let query = feasible[rng.below(feasible.len() as u64) as usize];
        let candidates = outside(query);
        let chosen = rng
            .choose_indices(candidates.len(), shots)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
        support.insert(class, chosen);
        queries.push((query, class));
    }
    Ok(Episode {
        ways,
        shots,
        classes,
        support,
        queries,
    })
}

/// Support drawn from `support_pool`, `queries_per_class` queries per class
/// drawn from `query_pool`. Used for evaluation, where queries come from
/// held-out groups.
pub fn sample_split_episode(
    data: &[LabeledSample],
    support_pool: &[usize],
    query_pool: &[usize],
    ways: usize,
    shots: usize,
    queries_per_class: usize,
    rng: &mut Philox,
) -> Result<Episode> {
    if shots == 0 || queries_per_class == 0 {
        return Err(Error::InvalidArgument(
            "shots and queries per class must be at least 1".into(),
        ));
    }
    let query_classes: BTreeSet<usize> = classes_in(data, query_pool).into_iter().collect();
    let available: Vec<usize> = classes_in(data, support_pool)
        .into_iter()
        .filter(|c| query_classes.contains(c))
        .collect();
    let classes = choose_classes(&available, ways, rng)?;
    let mut support = BTreeMap::new();
    let mut queries = Vec::new();
    for &class in &classes {
        let q_members: Vec<usize> = query_pool.iter().copied().filter(|&i| data[i].label == class).collect();
        if q_members.len() < queries_per_class {
            return Err(Error::EpisodeInfeasible {
                class,
                reason: format!("{} held-out samples, {queries_per_class} queries needed", q_members.len()),
            });
        }
        let picked: Vec<usize> = rng
            .choose_indices(q_members.len(), queries_per_class)
            .into_iter()
            .map(|i| q_members[i])
            .collect();
        let q_groups: BTreeSet<&str> = picked.iter().map(|&i| data[i].group_id.as_str()).collect();
        let s_members: Vec<usize> = support_pool
            .iter()
            .copied()
            .filter(|&i| data[i].label == class && !q_groups.contains(data[i].group_id.as_str()))
            .collect();
        if s_members.len() < shots {
            return Err(Error::EpisodeInfeasible {
                class,
                reason: format!("{} support samples outside the query groups, {shots} needed", s_members.len()),
            });
        }
        let chosen = rng
            .choose_indices(s_members.len(), shots)
            .into_iter()
            .map(|i| s_members[i])
            .collect();
        support.insert(class, chosen);
        queries.extend(picked.into_iter().map(|q| (q, class)));
    }
    Ok(Episode {
        ways,
        shots,
        classes,
        support,
        queries,
    })
}
