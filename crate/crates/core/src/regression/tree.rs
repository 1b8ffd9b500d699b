//! A single dynamic-tree particle: a binary tree of axis-aligned splits
//! whose leaves carry conjugate regression models. Each arriving point
//! triggers a local stay/grow/prune move at the leaf that contains it.

use rand::Rng;

use super::leaf::{Evidence, LeafFit, LeafModel, LeafStats};

const NONE: u32 = u32::MAX;

/// Flat row-major store of all points absorbed by an ensemble.
#[derive(Debug, Clone, Default)]
pub(crate) struct Data {
    pub dim: usize,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl Data {
    pub fn new(dim: usize) -> Self {
        Data { dim, xs: Vec::new(), ys: Vec::new() }
    }

    #[inline]
    pub fn x(&self, i: u32) -> &[f64] {
        let i = i as usize;
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn y(&self, i: u32) -> f64 {
        self.ys[i as usize]
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn push(&mut self, x: &[f64], y: f64) -> u32 {
        self.xs.extend_from_slice(x);
        self.ys.push(y);
        (self.ys.len() - 1) as u32
    }
}

/// Split prior `p_split(depth) = alpha (1 + depth)^(-beta)` and the minimum
/// leaf size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct TreePrior {
    pub alpha: f64,
    pub beta: f64,
    pub min_leaf: usize,
    pub evidence: Evidence,
}

impl TreePrior {
    #[inline]
    pub fn p_split(&self, depth: u32) -> f64 {
        self.alpha * (1.0 + depth as f64).powf(-self.beta)
    }

    #[inline]
    fn ln_split(&self, depth: u32) -> f64 {
        self.p_split(depth).ln()
    }

    #[inline]
    fn ln_leaf(&self, depth: u32) -> f64 {
        (1.0 - self.p_split(depth)).ln()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Leaf {
    pub points: Vec<u32>,
    pub stats: LeafStats,
    pub fit: LeafFit,
}

impl Leaf {
    fn from_points(model: LeafModel, data: &Data, points: Vec<u32>, ev: &Evidence) -> Leaf {
        let stats = LeafStats::from_points(model, data.dim, points.iter().map(|&i| (data.x(i), data.y(i))));
        let fit = LeafFit::from_stats(&stats, ev);
        Leaf { points, stats, fit }
    }
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf(Leaf),
    Split { dim: u32, threshold: f64, left: u32, right: u32 },
    Free,
}

#[derive(Debug, Clone)]
struct Node {
    parent: u32,
    depth: u32,
    kind: NodeKind,
}

enum Move {
    Stay(LeafStats, LeafFit),
    Grow { dim: u32, threshold: f64, left: Leaf, right: Leaf },
    Prune(LeafStats),
}

#[derive(Debug, Clone)]
pub(crate) struct TreeParticle {
    model: LeafModel,
    nodes: Vec<Node>,
    free: Vec<u32>,
}

impl TreeParticle {
    pub fn new(model: LeafModel, dim: usize) -> Self {
        let stats = LeafStats::empty(model, &vec![0.0; dim]);
        let fit = LeafFit::from_stats(&stats, &Evidence::default());
        TreeParticle {
            model,
            nodes: vec![Node { parent: NONE, depth: 0, kind: NodeKind::Leaf(Leaf { points: Vec::new(), stats, fit }) }],
            free: Vec::new(),
        }
    }

    #[inline]
    fn find_leaf(&self, x: &[f64]) -> u32 {
        let mut id = 0u32;
        loop {
            match &self.nodes[id as usize].kind {
                NodeKind::Split { dim, threshold, left, right } => {
                    id = if x[*dim as usize] <= *threshold { *left } else { *right };
                }
                _ => return id,
            }
        }
    }

    fn leaf(&self, id: u32) -> &Leaf {
        match &self.nodes[id as usize].kind {
            NodeKind::Leaf(l) => l,
            _ => unreachable!("node {id} is not a leaf"),
        }
    }

    /// Leaf posterior at `x`.
    #[inline]
    pub fn fit_at(&self, x: &[f64]) -> &LeafFit {
        &self.leaf(self.find_leaf(x)).fit
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Leaf(_))).count()
    }

    pub fn max_depth(&self) -> u32 {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Leaf(_))).map(|n| n.depth).max().unwrap_or(0)
    }

    fn alloc(&mut self, node: Node) -> u32 {
        if let Some(id) = self.free.pop() {
            self.nodes[id as usize] = node;
            id
        } else {
            self.nodes.push(node);
            (self.nodes.len() - 1) as u32
        }
    }

    fn subtree_leaves(&self, root: u32, out: &mut Vec<u32>) {
        match &self.nodes[root as usize].kind {
            NodeKind::Leaf(_) => out.push(root),
            NodeKind::Split { left, right, .. } => {
                self.subtree_leaves(*left, out);
                self.subtree_leaves(*right, out);
            }
            NodeKind::Free => {}
        }
    }

    fn subtree_log_prior(&self, root: u32, prior: &TreePrior) -> f64 {
        let node = &self.nodes[root as usize];
        match &node.kind {
            NodeKind::Leaf(_) => prior.ln_leaf(node.depth),
            NodeKind::Split { left, right, .. } => {
                prior.ln_split(node.depth) + self.subtree_log_prior(*left, prior) + self.subtree_log_prior(*right, prior)
            }
            NodeKind::Free => 0.0,
        }
    }

    /// Log prior of the whole tree.
    #[cfg(test)]
    pub fn log_prior(&self, prior: &TreePrior) -> f64 {
        self.subtree_log_prior(0, prior)
    }

    fn free_subtree(&mut self, root: u32) {
        if let NodeKind::Split { left, right, .. } = self.nodes[root as usize].kind {
            self.free_subtree(left);
            self.free_subtree(right);
        }
        self.nodes[root as usize].kind = NodeKind::Free;
        self.free.push(root);
    }

    fn propose_grow<R: Rng + ?Sized>(
        &self,
        data: &Data,
        leaf: &Leaf,
        idx: u32,
        prior: &TreePrior,
        rng: &mut R,
    ) -> Option<(u32, f64, Vec<u32>, Vec<u32>)> {
        let n = leaf.points.len() + 1;
        if n < 2 * prior.min_leaf {
            return None;
        }
        let dim = rng.random_range(0..data.dim);
        let k = rng.random_range(prior.min_leaf..=n - prior.min_leaf);
        let mut vals: Vec<f64> = leaf.points.iter().map(|&i| data.x(i)[dim]).collect();
        vals.push(data.x(idx)[dim]);
        let (lower, kth, _) = vals.select_nth_unstable_by(k, f64::total_cmp);
        let hi = *kth;
        let lo = lower.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(lo < hi) {
            return None;
        }
        let mut threshold = lo + 0.5 * (hi - lo);
        if !(threshold < hi) {
            threshold = lo;
        }
        let (mut left, mut right) = (Vec::with_capacity(k), Vec::with_capacity(n - k));
        for &i in leaf.points.iter().chain(std::iter::once(&idx)) {
            if data.x(i)[dim] <= threshold {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        debug_assert_eq!(left.len(), k);
        Some((dim as u32, threshold, left, right))
    }

    /// Absorb point `idx` of `data`, choosing among stay/grow/prune with
    /// probability proportional to prior times marginal likelihood.
    pub fn absorb<R: Rng + ?Sized>(&mut self, data: &Data, idx: u32, prior: &TreePrior, rng: &mut R) {
        let x = data.x(idx);
        let y = data.y(idx);
        let lid = self.find_leaf(x);
        let (parent, depth) = {
            let n = &self.nodes[lid as usize];
            (n.parent, n.depth)
        };
        let leaf = self.leaf(lid);
        let base = leaf.fit.log_ml;

        let mut moves: Vec<(f64, Move)> = Vec::with_capacity(3);

        let mut stay_stats = if leaf.stats.n() == 0 { LeafStats::empty(self.model, x) } else { leaf.stats.clone() };
        stay_stats.add(x, y);
        let stay_fit = LeafFit::from_stats(&stay_stats, &prior.evidence);
        moves.push((stay_fit.log_ml - base, Move::Stay(stay_stats, stay_fit)));

        if let Some((dim, threshold, lp, rp)) = self.propose_grow(data, leaf, idx, prior, rng) {
            let left = Leaf::from_points(self.model, data, lp, &prior.evidence);
            let right = Leaf::from_points(self.model, data, rp, &prior.evidence);
            let score =
                left.fit.log_ml + right.fit.log_ml - base + prior.ln_split(depth) + 2.0 * prior.ln_leaf(depth + 1) - prior.ln_leaf(depth);
            moves.push((score, Move::Grow { dim, threshold, left, right }));
        }

        if parent != NONE {
            let mut leaves = Vec::new();
            self.subtree_leaves(parent, &mut leaves);
            let mut merged: Option<LeafStats> = None;
            let mut old_ml = 0.0;
            for &l in &leaves {
                let lf = self.leaf(l);
                old_ml += lf.fit.log_ml;
                match merged.as_mut() {
                    None => merged = Some(lf.stats.clone()),
                    Some(m) => m.merge(&lf.stats),
                }
            }
            let mut merged = merged.expect("non-empty subtree");
            merged.add(x, y);
            let merged_ml = LeafFit::from_stats(&merged, &prior.evidence).log_ml;
            let pd = self.nodes[parent as usize].depth;
            let score = merged_ml - old_ml + prior.ln_leaf(pd) - self.subtree_log_prior(parent, prior);
            moves.push((score, Move::Prune(merged)));
        }

        let top = moves.iter().map(|m| m.0).fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = moves.iter().map(|m| (m.0 - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = moves.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        let chosen = moves.swap_remove(pick).1;
        self.apply(data, lid, parent, depth, idx, chosen, &prior.evidence);
    }

    #[allow(clippy::too_many_arguments)]
    fn apply(&mut self, data: &Data, lid: u32, parent: u32, depth: u32, idx: u32, mv: Move, ev: &Evidence) {
        match mv {
            Move::Stay(stats, fit) => {
                if let NodeKind::Leaf(l) = &mut self.nodes[lid as usize].kind {
                    l.points.push(idx);
                    l.stats = stats;
                    l.fit = fit;
                }
            }
            Move::Grow { dim, threshold, left, right } => {
                let lnode = self.alloc(Node { parent: lid, depth: depth + 1, kind: NodeKind::Leaf(left) });
                let rnode = self.alloc(Node { parent: lid, depth: depth + 1, kind: NodeKind::Leaf(right) });
                self.nodes[lid as usize].kind = NodeKind::Split { dim, threshold, left: lnode, right: rnode };
            }
            Move::Prune(stats) => {
                let mut leaves = Vec::new();
                self.subtree_leaves(parent, &mut leaves);
                let mut points = Vec::new();
                for &l in &leaves {
                    points.extend_from_slice(&self.leaf(l).points);
                }
                points.push(idx);
                if let NodeKind::Split { left, right, .. } = self.nodes[parent as usize].kind {
                    self.free_subtree(left);
                    self.free_subtree(right);
                }
                let fit = LeafFit::from_stats(&stats, ev);
                debug_assert_eq!(stats.n(), points.len());
                let _ = data;
                self.nodes[parent as usize].kind = NodeKind::Leaf(Leaf { points, stats, fit });
            }
        }
    }

    /// Verify the structural invariants against the raw data: leaves
    /// partition the absorbed points, each point routes to its own leaf,
    /// leaves hold at least `min_leaf` points (unless the tree is a single
    /// leaf) and cached statistics match a recomputation.
    pub fn check_invariants(&self, data: &Data, prior: &TreePrior, absorbed: usize) -> Result<(), String> {
        let mut seen = vec![false; data.len()];
        let mut leaves = Vec::new();
        self.subtree_leaves(0, &mut leaves);
        let single = leaves.len() == 1;
        let mut total = 0;
        for &l in &leaves {
            let leaf = self.leaf(l);
            if !single && leaf.points.len() < prior.min_leaf {
                return Err(format!("leaf {l} holds {} < {} points", leaf.points.len(), prior.min_leaf));
            }
            for &i in &leaf.points {
                if std::mem::replace(&mut seen[i as usize], true) {
                    return Err(format!("point {i} in two leaves"));
                }
                if self.find_leaf(data.x(i)) != l {
                    return Err(format!("point {i} does not route to its leaf"));
                }
            }
            total += leaf.points.len();
            let fresh = LeafStats::from_points(self.model, data.dim, leaf.points.iter().map(|&i| (data.x(i), data.y(i))));
            let diff = leaf.stats.max_rel_diff(&fresh);
            if diff > 1e-8 {
                return Err(format!("leaf {l} statistics drift {diff:e}"));
            }
            let node = &self.nodes[l as usize];
            if node.parent != NONE && self.nodes[node.parent as usize].depth + 1 != node.depth {
                return Err(format!("leaf {l} has inconsistent depth"));
            }
        }
        if total != absorbed {
            return Err(format!("leaves hold {total} points, absorbed {absorbed}"));
        }
        Ok(())
    }
}
