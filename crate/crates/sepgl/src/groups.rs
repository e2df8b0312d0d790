//! Overlapping group structures and the overlapping-induced partition.
//!
//! A [`GroupStructure`] is a covering family of (possibly overlapping)
//! index groups with positive weights. [`InducedPartition`] is the coarsest
//! partition of the variables such that two variables share a part exactly
//! when they belong to the same set of original groups; each part carries
//! the sum of the weights of the groups containing it.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Validation errors for group structures. The first violation found is
/// reported, scanning groups in order.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum GroupError {
    #[error("group list is empty")]
    NoGroups,
    #[error("variable count p must be positive")]
    ZeroVariables,
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("group {group} contains index {index} outside [0, {p})")]
    IndexOutOfRange { group: usize, index: usize, p: usize },
    #[error("variable {0} is not covered by any group")]
    UncoveredVariable(usize),
    #[error("group {0} has a nonpositive weight")]
    NonpositiveWeight(usize),
    #[error("got {weights} weights for {groups} groups")]
    WeightCountMismatch { groups: usize, weights: usize },
    #[error("got {names} names for {groups} groups")]
    NameCountMismatch { groups: usize, names: usize },
    #[error("groups overlap; not a partition")]
    NotAPartition,
}

/// A collection of `m` index groups over `p` variables, with one positive
/// weight per group. Groups may overlap and may be duplicated; duplicates
/// are kept distinct and contribute separately to induced weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStructure {
    p: usize,
    groups: Vec<Vec<usize>>,
    weights: Vec<f64>,
    names: Option<Vec<String>>,
}

impl GroupStructure {
    /// Builds a validated structure. Members of each group are sorted and
    /// deduplicated; group order is preserved.
    pub fn new(p: usize, groups: Vec<Vec<usize>>, weights: Vec<f64>) -> Result<Self, GroupError> {
        let mut groups = groups;
        for g in &mut groups {
            g.sort_unstable();
            g.dedup();
        }
        validate_parts(p, &groups, &weights)?;
        Ok(Self {
            p,
            groups,
            weights,
            names: None,
        })
    }

    /// Replaces the group weights, keeping members and order.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self, GroupError> {
        validate_parts(self.p, &self.groups, &weights)?;
        self.weights = weights;
        Ok(self)
    }

    /// Attaches one label per group.
    pub fn with_names(mut self, names: Vec<String>) -> Result<Self, GroupError> {
        if names.len() != self.groups.len() {
            return Err(GroupError::NameCountMismatch {
                groups: self.groups.len(),
                names: names.len(),
            });
        }
        self.names = Some(names);
        Ok(self)
    }

    /// Re-checks every invariant; useful after manual deserialization.
    pub fn validate(&self) -> Result<(), GroupError> {
        validate_parts(self.p, &self.groups, &self.weights)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of groups `m`.
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group(&self, g: usize) -> &[usize] {
        &self.groups[g]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn name(&self, g: usize) -> Option<&str> {
        self.names.as_ref().map(|n| n[g].as_str())
    }

    /// Largest group size `d_max`.
    pub fn max_group_size(&self) -> usize {
        self.groups.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Overlap degree of each variable: the number of groups containing it.
    pub fn overlap_degrees(&self) -> Vec<usize> {
        let mut h = vec![0usize; self.p];
        for group in &self.groups {
            for &j in group {
                h[j] += 1;
            }
        }
        h
    }

    /// Per-variable weights `c_j = sum of w_g over groups containing j`,
    /// the weighted-lasso upper-bound weights.
    pub fn lasso_weights(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.p];
        for (group, &w) in self.groups.iter().zip(&self.weights) {
            for &j in group {
                c[j] += w;
            }
        }
        c
    }

    /// True when every pair of groups is either disjoint or nested.
    pub fn is_tree_structured(&self) -> bool {
        let sets: Vec<BitSet> = self.groups.iter().map(|g| BitSet::from_indices(self.p, g)).collect();
        for a in 0..sets.len() {
            for b in (a + 1)..sets.len() {
                let inter = sets[a].intersection_count(&sets[b]);
                if inter == 0 {
                    continue;
                }
                if inter != self.groups[a].len() && inter != self.groups[b].len() {
                    return false;
                }
            }
        }
        true
    }

    /// True when the groups already form a partition of `{0..p-1}`.
    pub fn is_partition(&self) -> bool {
        self.overlap_degrees().iter().all(|&h| h == 1)
    }

    /// Constructs the overlapping-induced partition: variables share a part
    /// exactly when their group-membership columns are identical. Parts are
    /// ordered by first occurrence of their lowest variable index, and each
    /// part's weight is the sum of the weights of the groups containing it.
    pub fn induce_partition(&self) -> InducedPartition {
        let m = self.groups.len();
        let words = m.div_ceil(64);
        // membership column of each variable, packed as bits over groups
        let mut columns = vec![0u64; self.p * words];
        for (g, group) in self.groups.iter().enumerate() {
            let (w, bit) = (g / 64, 1u64 << (g % 64));
            for &j in group {
                columns[j * words + w] |= bit;
            }
        }

        let mut part_of: HashMap<&[u64], usize> = HashMap::new();
        let mut parts: Vec<Vec<usize>> = Vec::new();
        let mut signatures: Vec<Vec<usize>> = Vec::new();
        for j in 0..self.p {
            let col = &columns[j * words..(j + 1) * words];
            match part_of.get(col) {
                Some(&k) => parts[k].push(j),
                None => {
                    part_of.insert(col, parts.len());
                    parts.push(vec![j]);
                    signatures.push(unpack_bits(col));
                }
            }
        }

        let weights = signatures
            .iter()
            .map(|sig| sig.iter().map(|&g| self.weights[g]).sum())
            .collect();
        let degree = signatures.iter().map(Vec::len).collect();
        InducedPartition {
            p: self.p,
            parts,
            weights,
            membership_signature: signatures,
            degree,
        }
    }

    /// Structural ratio `max{induced m, induced d_max} / max{m, d_max}`
    /// comparing the induced partition against the original structure.
    pub fn assumption_ratio(&self, part: &InducedPartition) -> f64 {
        let orig = self.num_groups().max(self.max_group_size());
        let induced = part.num_parts().max(part.max_part_size());
        induced as f64 / orig as f64
    }
}

impl fmt::Display for GroupStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "GroupStructure(p={}, m={}, d_max={})",
            self.p,
            self.num_groups(),
            self.max_group_size()
        )
    }
}

fn validate_parts(p: usize, groups: &[Vec<usize>], weights: &[f64]) -> Result<(), GroupError> {
    if p == 0 {
        return Err(GroupError::ZeroVariables);
    }
    if groups.is_empty() {
        return Err(GroupError::NoGroups);
    }
    if weights.len() != groups.len() {
        return Err(GroupError::WeightCountMismatch {
            groups: groups.len(),
            weights: weights.len(),
        });
    }
    let mut covered = vec![false; p];
    for (g, group) in groups.iter().enumerate() {
        if group.is_empty() {
            return Err(GroupError::EmptyGroup(g));
        }
        for &j in group {
            if j >= p {
                return Err(GroupError::IndexOutOfRange { group: g, index: j, p });
            }
            covered[j] = true;
        }
        if !(weights[g] > 0.0) {
            return Err(GroupError::NonpositiveWeight(g));
        }
    }
    if let Some(j) = covered.iter().position(|&c| !c) {
        return Err(GroupError::UncoveredVariable(j));
    }
    Ok(())
}

fn unpack_bits(words: &[u64]) -> Vec<usize> {
    let mut out = Vec::new();
    for (w, &word) in words.iter().enumerate() {
        let mut bits = word;
        while bits != 0 {
            let b = bits.trailing_zeros() as usize;
            out.push(w * 64 + b);
            bits &= bits - 1;
        }
    }
    out
}

/// Disjoint parts covering `{0..p-1}`, each annotated with the sorted set
/// of original group ids containing it (its membership signature), the
/// signature size (overlap degree), and the induced weight.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedPartition {
    p: usize,
    parts: Vec<Vec<usize>>,
    weights: Vec<f64>,
    membership_signature: Vec<Vec<usize>>,
    degree: Vec<usize>,
}

impl InducedPartition {
    /// Wraps an existing partition of `{0..p-1}` as its own induced
    /// structure: each part is its own signature singleton with degree 1.
    /// Used for penalties defined directly on a partition.
    pub fn from_partition(
        p: usize,
        parts: Vec<Vec<usize>>,
        weights: Vec<f64>,
    ) -> Result<Self, GroupError> {
        let gs = GroupStructure::new(p, parts, weights)?;
        if !gs.is_partition() {
            return Err(GroupError::NotAPartition);
        }
        // signatures are singletons, so the induced weights are the
        // caller's weights matched to the scan order
        Ok(gs.induce_partition())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn num_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn parts(&self) -> &[Vec<usize>] {
        &self.parts
    }

    pub fn part(&self, k: usize) -> &[usize] {
        &self.parts[k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Replaces part weights, e.g. with one of the alternative weighting
    /// schemes. Panics if the count does not match.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), self.parts.len());
        assert!(weights.iter().all(|&w| w > 0.0));
        self.weights = weights;
        self
    }

    /// Sorted original-group ids containing each part.
    pub fn membership_signatures(&self) -> &[Vec<usize>] {
        &self.membership_signature
    }

    /// Overlap degree of each part (signature cardinality).
    pub fn degrees(&self) -> &[usize] {
        &self.degree
    }

    pub fn max_part_size(&self) -> usize {
        self.parts.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn part_sizes(&self) -> Vec<usize> {
        self.parts.iter().map(Vec::len).collect()
    }

    /// Part index of each variable.
    pub fn part_of_variable(&self) -> Vec<usize> {
        let mut owner = vec![0usize; self.p];
        for (k, part) in self.parts.iter().enumerate() {
            for &j in part {
                owner[j] = k;
            }
        }
        owner
    }

    /// Per-variable weight of the owning part; equals the weighted-lasso
    /// weights `c_j` when the partition was induced from a group structure.
    pub fn variable_weights(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.p];
        for (part, &w) in self.parts.iter().zip(&self.weights) {
            for &j in part {
                c[j] = w;
            }
        }
        c
    }

    /// Views the partition as a `GroupStructure` (disjoint groups), which
    /// is how the separable penalty is handed to generic group solvers.
    pub fn as_group_structure(&self) -> GroupStructure {
        GroupStructure::new(self.p, self.parts.clone(), self.weights.clone())
            .expect("a partition is always a valid group structure")
    }
}

impl fmt::Display for InducedPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "InducedPartition(p={}, parts={}, d_max={})",
            self.p,
            self.num_parts(),
            self.max_part_size()
        )
    }
}

/// Fixed-capacity bit set over variable indices.
#[derive(Debug, Clone)]
struct BitSet {
    words: Vec<u64>,
}

impl BitSet {
    fn from_indices(p: usize, indices: &[usize]) -> Self {
        let mut words = vec![0u64; p.div_ceil(64)];
        for &j in indices {
            words[j / 64] |= 1u64 << (j % 64);
        }
        Self { words }
    }

    fn intersection_count(&self, other: &Self) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// G1 = {0,1}, G2 = {0,1,2} with unit weights: the running 3-d example.
    pub(crate) fn toy3() -> GroupStructure {
        GroupStructure::new(3, vec![vec![0, 1], vec![0, 1, 2]], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn validate_accepts_covering_pair() {
        assert!(toy3().validate().is_ok());
    }

    #[test]
    fn validate_rejects_uncovered_variable() {
        let err = GroupStructure::new(3, vec![vec![0, 1]], vec![1.0]).unwrap_err();
        assert_eq!(err, GroupError::UncoveredVariable(2));
    }

    #[test]
    fn validate_rejects_zero_weight() {
        let err = GroupStructure::new(2, vec![vec![0, 1]], vec![0.0]).unwrap_err();
        assert_eq!(err, GroupError::NonpositiveWeight(0));
    }

    #[test]
    fn validate_rejects_out_of_range_and_empty() {
        let err = GroupStructure::new(2, vec![vec![0, 2]], vec![1.0]).unwrap_err();
        assert_eq!(
            err,
            GroupError::IndexOutOfRange {
                group: 0,
                index: 2,
                p: 2
            }
        );
        let err = GroupStructure::new(2, vec![vec![0, 1], vec![]], vec![1.0, 1.0]).unwrap_err();
        assert_eq!(err, GroupError::EmptyGroup(1));
    }

    #[test]
    fn overlap_degrees_count_memberships() {
        assert_eq!(toy3().overlap_degrees(), vec![2, 2, 1]);
        let disjoint =
            GroupStructure::new(4, vec![vec![0, 1], vec![2, 3]], vec![1.0, 2.0]).unwrap();
        assert_eq!(disjoint.overlap_degrees(), vec![1, 1, 1, 1]);
    }

    #[test]
    fn interlocking_overlap_degrees() {
        // m=3, d=10, overlap 2: shared indices are exactly the 2(m-1)=4
        // boundary variables.
        let gs = crate::simgen::interlocking_groups(3, 10, 0.2).unwrap();
        let h = gs.overlap_degrees();
        let shared: Vec<usize> = (0..gs.p()).filter(|&j| h[j] == 2).collect();
        assert_eq!(shared, vec![8, 9, 16, 17]);
        assert!(h.iter().all(|&x| x == 1 || x == 2));
        assert_eq!(h.iter().filter(|&&x| x == 2).count(), 4);
    }

    #[test]
    fn induce_partition_toy3() {
        let part = toy3().induce_partition();
        assert_eq!(part.parts(), &[vec![0, 1], vec![2]]);
        assert_eq!(part.weights(), &[2.0, 1.0]);
        assert_eq!(part.membership_signatures(), &[vec![0, 1], vec![1]]);
        assert_eq!(part.degrees(), &[2, 1]);
    }

    #[test]
    fn induce_partition_disjoint_is_identity() {
        let gs = GroupStructure::new(5, vec![vec![0, 1], vec![2], vec![3, 4]], vec![0.5, 2.0, 1.0])
            .unwrap();
        let part = gs.induce_partition();
        assert_eq!(part.parts(), gs.groups());
        assert_eq!(part.weights(), gs.weights());
        assert!(part.degrees().iter().all(|&h| h == 1));
    }

    #[test]
    fn induce_partition_interlocking_count() {
        for m in [2usize, 3, 5, 8] {
            let gs = crate::simgen::interlocking_groups(m, 10, 0.2).unwrap();
            let part = gs.induce_partition();
            assert_eq!(part.num_parts(), 2 * m - 1);
        }
    }

    #[test]
    fn signature_soundness_exhaustive() {
        // every pair inside a part has identical membership sets
        let gs = GroupStructure::new(
            6,
            vec![vec![0, 1, 2, 3], vec![2, 3, 4], vec![4, 5], vec![0, 5]],
            vec![1.0, 1.0, 1.0, 1.0],
        )
        .unwrap();
        let part = gs.induce_partition();
        let membership = |j: usize| -> Vec<usize> {
            (0..gs.num_groups())
                .filter(|&g| gs.group(g).contains(&j))
                .collect()
        };
        for (k, block) in part.parts().iter().enumerate() {
            for &j in block {
                assert_eq!(membership(j), part.membership_signatures()[k]);
            }
        }
        // distinct parts never share a signature
        for a in 0..part.num_parts() {
            for b in (a + 1)..part.num_parts() {
                assert_ne!(
                    part.membership_signatures()[a],
                    part.membership_signatures()[b]
                );
            }
        }
    }

    #[test]
    fn weight_conservation() {
        let gs = GroupStructure::new(
            6,
            vec![vec![0, 1, 2, 3], vec![2, 3, 4], vec![4, 5], vec![0, 5]],
            vec![0.7, 1.3, 2.0, 0.1],
        )
        .unwrap();
        let part = gs.induce_partition();
        let lhs: f64 = part
            .weights()
            .iter()
            .zip(part.parts())
            .map(|(w, block)| w * block.len() as f64)
            .sum();
        let rhs: f64 = gs
            .weights()
            .iter()
            .zip(gs.groups())
            .map(|(w, g)| w * g.len() as f64)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn degree_matches_overlap_degrees() {
        let gs = GroupStructure::new(
            5,
            vec![vec![0, 1, 2], vec![1, 2, 3], vec![3, 4]],
            vec![1.0, 1.0, 1.0],
        )
        .unwrap();
        let part = gs.induce_partition();
        let h = gs.overlap_degrees();
        for (k, block) in part.parts().iter().enumerate() {
            for &j in block {
                assert_eq!(part.degrees()[k], h[j]);
            }
        }
    }

    #[test]
    fn duplicate_groups_kept_distinct() {
        let gs = GroupStructure::new(2, vec![vec![0, 1], vec![0, 1]], vec![1.0, 2.5]).unwrap();
        let part = gs.induce_partition();
        assert_eq!(part.num_parts(), 1);
        assert_eq!(part.weights(), &[3.5]);
        assert_eq!(part.degrees(), &[2]);
    }

    #[test]
    fn assumption_ratio_cases() {
        let disjoint =
            GroupStructure::new(4, vec![vec![0, 1], vec![2, 3]], vec![1.0, 1.0]).unwrap();
        let part = disjoint.induce_partition();
        assert_eq!(disjoint.assumption_ratio(&part), 1.0);

        let gs = crate::simgen::interlocking_groups(400, 40, 0.2).unwrap();
        let part = gs.induce_partition();
        assert_eq!(part.num_parts(), 799);
        assert_eq!(part.max_part_size(), 32);
        assert!((gs.assumption_ratio(&part) - 1.9975).abs() < 1e-12);

        let nested = crate::simgen::nested_groups(800, 4).unwrap();
        let part = nested.induce_partition();
        assert_eq!(part.num_parts(), 800);
        assert_eq!(part.max_part_size(), 4);
        assert!((nested.assumption_ratio(&part) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn tree_detection() {
        let nested = GroupStructure::new(
            6,
            vec![vec![0, 1], vec![0, 1, 2, 3], vec![0, 1, 2, 3, 4, 5]],
            vec![1.0; 3],
        )
        .unwrap();
        assert!(nested.is_tree_structured());

        let disjoint =
            GroupStructure::new(4, vec![vec![0, 1], vec![2, 3]], vec![1.0, 1.0]).unwrap();
        assert!(disjoint.is_tree_structured());

        let interlocking = crate::simgen::interlocking_groups(3, 10, 0.2).unwrap();
        assert!(!interlocking.is_tree_structured());
    }

    #[test]
    fn idempotence_on_partitions() {
        let parts = vec![vec![0, 3], vec![1, 2], vec![4]];
        let gs = GroupStructure::new(5, parts.clone(), vec![0.2, 5.0, 1.0]).unwrap();
        let induced = gs.induce_partition();
        let mut got: Vec<(Vec<usize>, f64)> = induced
            .parts()
            .iter()
            .cloned()
            .zip(induced.weights().iter().copied())
            .collect();
        let mut want: Vec<(Vec<usize>, f64)> = parts
            .into_iter()
            .zip([0.2, 5.0, 1.0])
            .collect();
        got.sort_by(|a, b| a.0.cmp(&b.0));
        want.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(got, want);
    }

    #[test]
    fn part_count_bound() {
        let gs = GroupStructure::new(
            7,
            vec![vec![0, 1, 2, 3, 4, 5, 6], vec![1, 3, 5], vec![2, 3]],
            vec![1.0; 3],
        )
        .unwrap();
        let part = gs.induce_partition();
        assert!(part.num_parts() <= gs.p().min((1usize << gs.num_groups()) - 1));
    }
}
