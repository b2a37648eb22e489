//! Tree-structured aggregation of per-worker scalars.
//!
//! A [`TreeTopology`] is a binary tree whose leaves are worker ids `1..=q`. Summing
//! over a tree walks it in post-order: at every internal node the merging worker of
//! the right subtree sends its partial sum to the merging worker of the left subtree
//! (the merging worker of a subtree is its leftmost leaf). A sum over `q` leaves thus
//! costs `q - 1` merge messages plus one delivery of the total to the coordinator.
//!
//! [`masked_tree_sum`] hides each contribution behind a uniform random mask: the
//! masked values are summed over `T1`, the masks alone over `T2`, and the
//! coordinator subtracts. When `T1` and `T2` share no proper subtree leaf set
//! ([`is_significantly_different`]), the mask phase never reveals the mask total
//! of any partial sum that travelled in the first phase.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("a tree needs at least one worker")]
    Empty,
    #[error("leaves must be exactly the workers 1..={0}, each once")]
    BadLeaves(usize),
    #[error("trees are over different worker sets")]
    LeafSetMismatch,
    #[error("expected {expected} contributions, got {got}")]
    MissingContribution { expected: usize, got: usize },
    #[error("tree pair is not significantly different; refusing masked aggregation")]
    NotSignificantlyDifferent,
    #[error("need at least two workers, got {0}")]
    TooFewWorkers(usize),
    #[error("mask range must be positive and finite, got {0}")]
    InvalidMaskRange(f64),
    #[error("no significantly different tree pair found for q={0}")]
    NoPairFound(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Leaf(usize),
    Merge(Box<Node>, Box<Node>),
}

impl Node {
    pub fn merge(left: Node, right: Node) -> Node {
        Node::Merge(Box::new(left), Box::new(right))
    }

    /// Leftmost leaf: the worker that holds this subtree's partial sum.
    pub fn merging_worker(&self) -> usize {
        match self {
            Node::Leaf(w) => *w,
            Node::Merge(l, _) => l.merging_worker(),
        }
    }

    fn collect_leaves(&self, out: &mut Vec<usize>) {
        match self {
            Node::Leaf(w) => out.push(*w),
            Node::Merge(l, r) => {
                l.collect_leaves(out);
                r.collect_leaves(out);
            }
        }
    }

    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn depth(&self) -> usize {
        match self {
            Node::Leaf(_) => 0,
            Node::Merge(l, r) => 1 + l.depth().max(r.depth()),
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Leaf(w) => write!(f, "{w}"),
            Node::Merge(l, r) => write!(f, "({l},{r})"),
        }
    }
}

/// Binary reduction tree over workers `1..=q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeTopology {
    root: Node,
    q: usize,
}

impl TreeTopology {
    pub fn new(root: Node) -> Result<Self, TreeError> {
        let mut leaves = root.leaves();
        let q = leaves.len();
        leaves.sort_unstable();
        if leaves.iter().enumerate().any(|(k, &w)| w != k + 1) {
            return Err(TreeError::BadLeaves(q));
        }
        Ok(TreeTopology { root, q })
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn n_leaves(&self) -> usize {
        self.q
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn leaves(&self) -> Vec<usize> {
        self.root.leaves()
    }

    /// Sorted leaf set of every internal node, root included.
    pub fn subtree_leaf_sets(&self) -> Vec<Vec<usize>> {
        fn walk(node: &Node, out: &mut Vec<Vec<usize>>) {
            if let Node::Merge(l, r) = node {
                walk(l, out);
                walk(r, out);
                let mut s = node.leaves();
                s.sort_unstable();
                out.push(s);
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    /// Leaf sets of subtrees with more than one and fewer than `q` leaves.
    pub fn proper_subtree_leaf_sets(&self) -> BTreeSet<Vec<usize>> {
        self.subtree_leaf_sets()
            .into_iter()
            .filter(|s| s.len() > 1 && s.len() < self.q)
            .collect()
    }
}

impl fmt::Display for TreeTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

/// Pairs adjacent entries level by level; an odd trailing entry moves up unpaired.
pub fn build_balanced_tree(workers: &[usize]) -> Result<TreeTopology, TreeError> {
    if workers.is_empty() {
        return Err(TreeError::Empty);
    }
    let mut level: Vec<Node> = workers.iter().map(|&w| Node::Leaf(w)).collect();
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some(left) = it.next() {
            match it.next() {
                Some(right) => next.push(Node::merge(left, right)),
                None => next.push(left),
            }
        }
        level = next;
    }
    TreeTopology::new(level.pop().unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    T1,
    T2,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::T1 => "T1",
            Phase::T2 => "T2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Worker(usize),
    Coordinator,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Worker(w) => write!(f, "{w}"),
            Endpoint::Coordinator => f.write_str("coordinator"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub phase: Phase,
    pub sender: usize,
    pub receiver: Endpoint,
    pub payload: f64,
    /// Workers whose values are summed into `payload`.
    pub covers: Vec<usize>,
}

impl Message {
    pub fn is_merge(&self) -> bool {
        matches!(self.receiver, Endpoint::Worker(_))
    }
}

/// Ordered record of every message sent during one or more tree sums.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub messages: Vec<Message>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.messages.clear();
    }

    pub fn merge_count(&self) -> usize {
        self.messages.iter().filter(|m| m.is_merge()).count()
    }

    pub fn delivery_count(&self) -> usize {
        self.messages.len() - self.merge_count()
    }

    /// One `phase,sender,receiver,payload` line per message.
    pub fn to_log(&self) -> String {
        let mut out = String::from("phase,sender,receiver,payload\n");
        for m in &self.messages {
            out.push_str(&format!("{},{},{},{}\n", m.phase, m.sender, m.receiver, m.payload));
        }
        out
    }
}

fn reduce(
    node: &Node,
    contributions: &[f64],
    phase: Phase,
    transcript: &mut Transcript,
) -> f64 {
    match node {
        Node::Leaf(w) => contributions[w - 1],
        Node::Merge(l, r) => {
            let left = reduce(l, contributions, phase, transcript);
            let right = reduce(r, contributions, phase, transcript);
            transcript.messages.push(Message {
                phase,
                sender: r.merging_worker(),
                receiver: Endpoint::Worker(l.merging_worker()),
                payload: right,
                covers: r.leaves(),
            });
            left + right
        }
    }
}

fn tree_sum_phase(
    topology: &TreeTopology,
    contributions: &[f64],
    phase: Phase,
    transcript: &mut Transcript,
) -> Result<f64, TreeError> {
    if contributions.len() != topology.q {
        return Err(TreeError::MissingContribution {
            expected: topology.q,
            got: contributions.len(),
        });
    }
    let total = reduce(&topology.root, contributions, phase, transcript);
    transcript.messages.push(Message {
        phase,
        sender: topology.root.merging_worker(),
        receiver: Endpoint::Coordinator,
        payload: total,
        covers: topology.leaves(),
    });
    Ok(total)
}

/// Sums `contributions[w - 1]` over the leaves of `topology` in post-order.
pub fn tree_sum(
    topology: &TreeTopology,
    contributions: &[f64],
    transcript: &mut Transcript,
) -> Result<f64, TreeError> {
    tree_sum_phase(topology, contributions, Phase::T1, transcript)
}

/// True iff no subtree of `t1` and no subtree of `t2`, both with more than one and
/// fewer than `q` leaves, cover the same workers.
pub fn is_significantly_different(
    t1: &TreeTopology,
    t2: &TreeTopology,
) -> Result<bool, TreeError> {
    if t1.q != t2.q {
        return Err(TreeError::LeafSetMismatch);
    }
    let a = t1.proper_subtree_leaf_sets();
    let b = t2.proper_subtree_leaf_sets();
    Ok(a.is_disjoint(&b))
}

/// Builds `T1` over `1..=q` in order and `T2` over the odd-then-even interleaving
/// `1,3,5,…,2,4,6,…`. If that ever fails the check, seeded random leaf orders are
/// tried instead.
pub fn generate_significantly_different_pair(
    q: usize,
    seed: u64,
) -> Result<(TreeTopology, TreeTopology), TreeError> {
    if q < 2 {
        return Err(TreeError::TooFewWorkers(q));
    }
    let order: Vec<usize> = (1..=q).collect();
    let t1 = build_balanced_tree(&order)?;
    let interleaved: Vec<usize> = (1..=q).step_by(2).chain((2..=q).step_by(2)).collect();
    let t2 = build_balanced_tree(&interleaved)?;
    if is_significantly_different(&t1, &t2)? {
        return Ok((t1, t2));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm = order;
    for _ in 0..10_000 {
        perm.shuffle(&mut rng);
        let t2 = build_balanced_tree(&perm)?;
        if is_significantly_different(&t1, &t2)? {
            return Ok((t1, t2));
        }
    }
    Err(TreeError::NoPairFound(q))
}

/// Two trees already verified to be significantly different.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreePair {
    t1: TreeTopology,
    t2: TreeTopology,
}

impl TreePair {
    pub fn new(t1: TreeTopology, t2: TreeTopology) -> Result<Self, TreeError> {
        if !is_significantly_different(&t1, &t2)? {
            return Err(TreeError::NotSignificantlyDifferent);
        }
        Ok(TreePair { t1, t2 })
    }

    pub fn generate(q: usize, seed: u64) -> Result<Self, TreeError> {
        let (t1, t2) = generate_significantly_different_pair(q, seed)?;
        Ok(TreePair { t1, t2 })
    }

    pub fn t1(&self) -> &TreeTopology {
        &self.t1
    }

    pub fn t2(&self) -> &TreeTopology {
        &self.t2
    }

    /// Masked sum with caller-chosen masks.
    pub fn sum_with_masks(
        &self,
        contributions: &[f64],
        masks: &[f64],
        transcript: &mut Transcript,
    ) -> Result<f64, TreeError> {
        if masks.len() != self.t1.q {
            return Err(TreeError::MissingContribution {
                expected: self.t1.q,
                got: masks.len(),
            });
        }
        if contributions.len() != self.t1.q {
            return Err(TreeError::MissingContribution {
                expected: self.t1.q,
                got: contributions.len(),
            });
        }
        let masked: Vec<f64> = contributions.iter().zip(masks).map(|(c, b)| c + b).collect();
        let xi = tree_sum_phase(&self.t1, &masked, Phase::T1, transcript)?;
        let b_total = tree_sum_phase(&self.t2, masks, Phase::T2, transcript)?;
        Ok(xi - b_total)
    }

    /// Draws one mask per worker, in worker order, uniformly from `[-range, range]`.
    pub fn sum<R: Rng + ?Sized>(
        &self,
        contributions: &[f64],
        mask_range: f64,
        rng: &mut R,
        transcript: &mut Transcript,
    ) -> Result<f64, TreeError> {
        if !(mask_range > 0.0 && mask_range.is_finite()) {
            return Err(TreeError::InvalidMaskRange(mask_range));
        }
        let masks: Vec<f64> = (0..self.t1.q)
            .map(|_| rng.random_range(-mask_range..=mask_range))
            .collect();
        self.sum_with_masks(contributions, &masks, transcript)
    }
}

/// Masked aggregation: `Σ(c + b)` over `t1` minus `Σ b` over `t2`.
pub fn masked_tree_sum<R: Rng + ?Sized>(
    t1: &TreeTopology,
    t2: &TreeTopology,
    contributions: &[f64],
    mask_range: f64,
    rng: &mut R,
    transcript: &mut Transcript,
) -> Result<f64, TreeError> {
    TreePair::new(t1.clone(), t2.clone())?.sum(contributions, mask_range, rng, transcript)
}

/// Replays a masked-sum transcript and reports the first leak it finds: a
/// first-phase payload equal to some raw contribution, or a second-phase partial
/// mask sum covering the same workers as a proper subtree of `t1`.
pub fn check_masking_property(
    t1: &TreeTopology,
    contributions: &[f64],
    transcript: &Transcript,
) -> Result<(), String> {
    let t1_sets = t1.proper_subtree_leaf_sets();
    for m in transcript.messages.iter().filter(|m| m.is_merge()) {
        match m.phase {
            Phase::T1 => {
                if contributions.contains(&m.payload) {
                    return Err(format!(
                        "T1 message {}->{} carries a raw contribution {}",
                        m.sender, m.receiver, m.payload
                    ));
                }
            }
            Phase::T2 => {
                let mut covers = m.covers.clone();
                covers.sort_unstable();
                if t1_sets.contains(&covers) {
                    return Err(format!(
                        "T2 message {}->{} reveals mask sum of T1 subtree {:?}",
                        m.sender, m.receiver, covers
                    ));
                }
            }
        }
    }
    Ok(())
}
