//! Hierarchical partitions of a feature space.
//!
//! A hierarchical partition is a tree of segments: the root covers the whole
//! space, every internal (divisible) segment is split by its children into
//! disjoint regions whose union is the parent's region, and leaves
//! (indivisible segments) are not split further. Any antichain of segments
//! that covers the space is an *induced partition*; the forecaster in
//! [`crate::hpf`] competes with the best fixed forecaster over every induced
//! partition at once.
//!
//! Two builders are provided: an axis-aligned quad-tree over an integer pixel
//! grid and a randomized halfspace tree. Boundary conventions are pinned so
//! routing is a function: grid rectangles are closed at the lower coordinate
//! and open at the upper, and the non-negative side of a hyperplane goes to
//! child 0.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Index of a segment within its partition.
pub type SegmentId = usize;

/// Default cap on the number of induced partitions an enumeration may visit.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// One linear constraint of a halfspace chain: `side·((aᵀ/‖a‖)x − b) ≥ 0`,
/// with `side = −1` meaning the strict complement `(aᵀ/‖a‖)x − b < 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
    pub side: i8,
}

impl Halfspace {
    fn contains(&self, x: &[f64]) -> bool {
        let v = crate::linalg::dot(&self.normal, x) - self.offset;
        if self.side >= 0 {
            v >= 0.0
        } else {
            v < 0.0
        }
    }
}

/// Membership predicate of a segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentPredicate {
    /// Pixel rectangle `[x0, x1) × [y0, y1)` over integer grid coordinates.
    GridRect { x0: i64, x1: i64, y0: i64, y1: i64 },
    /// Conjunction of halfspace constraints (the chain down from the root).
    HalfspaceChain { constraints: Vec<Halfspace> },
    /// Scalar interval `[lower, upper)`.
    Interval { lower: f64, upper: f64 },
    /// The whole feature space.
    Universal,
}

impl SegmentPredicate {
    /// Does `x` satisfy this predicate?
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            SegmentPredicate::GridRect { x0, x1, y0, y1 } => {
                if x.len() < 2 {
                    return false;
                }
                let (px, py) = (x[0], x[1]);
                px >= *x0 as f64 && px < *x1 as f64 && py >= *y0 as f64 && py < *y1 as f64
            }
            SegmentPredicate::HalfspaceChain { constraints } => {
                constraints.iter().all(|h| h.contains(x))
            }
            SegmentPredicate::Interval { lower, upper } => {
                !x.is_empty() && x[0] >= *lower && x[0] < *upper
            }
            SegmentPredicate::Universal => true,
        }
    }
}

/// One node of a hierarchical partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: SegmentId,
    pub parent: Option<SegmentId>,
    pub children: Vec<SegmentId>,
    pub membership: SegmentPredicate,
}

impl Segment {
    pub fn is_divisible(&self) -> bool {
        !self.children.is_empty()
    }
}

/// A hierarchical partition: a tree of segments rooted at the full space.
///
/// Immutable after construction; safe for concurrent reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalPartition {
    segments: Vec<Segment>,
    root: SegmentId,
}

/// A subset of segments forming a partition of the feature space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InducedPartition {
    /// Sorted, deduplicated member segment ids.
    pub segment_ids: Vec<SegmentId>,
}

impl InducedPartition {
    pub fn new(mut ids: Vec<SegmentId>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        InducedPartition { segment_ids: ids }
    }

    pub fn len(&self) -> usize {
        self.segment_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segment_ids.is_empty()
    }
}

impl HierarchicalPartition {
    /// Build from a segment list; validates the tree structure and the
    /// child-count rule (0 or ≥ 2 children).
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::invalid("partition needs at least one segment"));
        }
        let n = segments.len();
        let mut roots = Vec::new();
        for (i, s) in segments.iter().enumerate() {
            if s.id != i {
                return Err(Error::invalid(format!(
                    "segment ids must be dense and ordered: slot {i} holds id {}",
                    s.id
                )));
            }
            if s.children.len() == 1 {
                return Err(Error::invalid(format!(
                    "segment {i} has exactly one child; splits need n >= 2"
                )));
            }
            match s.parent {
                None => roots.push(i),
                Some(p) => {
                    if p >= n {
                        return Err(Error::invalid(format!(
                            "segment {i} references missing parent {p}"
                        )));
                    }
                    if !segments[p].children.contains(&i) {
                        return Err(Error::invalid(format!(
                            "segment {i} not listed among parent {p}'s children"
                        )));
                    }
                }
            }
            for &c in &s.children {
                if c >= n {
                    return Err(Error::invalid(format!(
                        "segment {i} references missing child {c}"
                    )));
                }
                if segments[c].parent != Some(i) {
                    return Err(Error::invalid(format!(
                        "child {c} of segment {i} does not point back to it"
                    )));
                }
            }
        }
        if roots.len() != 1 {
            return Err(Error::invalid(format!(
                "expected exactly one root, found {}",
                roots.len()
            )));
        }
        let root = roots[0];
        // Reachability: the structure must be a single tree.
        let mut seen = vec![false; n];
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            if seen[i] {
                return Err(Error::invalid(format!("segment {i} reachable twice")));
            }
            seen[i] = true;
            stack.extend(segments[i].children.iter().copied());
        }
        if seen.iter().any(|&v| !v) {
            return Err(Error::invalid("segments detached from the root"));
        }
        Ok(HierarchicalPartition { segments, root })
    }

    pub fn root(&self) -> SegmentId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segment(&self, id: SegmentId) -> &Segment {
        &self.segments[id]
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn divisible_ids(&self) -> impl Iterator<Item = SegmentId> + '_ {
        self.segments
            .iter()
            .filter(|s| s.is_divisible())
            .map(|s| s.id)
    }

    pub fn indivisible_ids(&self) -> impl Iterator<Item = SegmentId> + '_ {
        self.segments
            .iter()
            .filter(|s| !s.is_divisible())
            .map(|s| s.id)
    }

    /// Is `inner` contained in `outer` (`outer ⊇ inner`) as regions? For tree
    /// segments this is the ancestor-or-self relation.
    pub fn is_superset(&self, outer: SegmentId, inner: SegmentId) -> bool {
        let mut cur = Some(inner);
        while let Some(c) = cur {
            if c == outer {
                return true;
            }
            cur = self.segments[c].parent;
        }
        false
    }

    /// Route a feature vector from the root to the leaf containing it.
    ///
    /// Returns the full path (root first). Errors if `x` lies outside the
    /// root region, or if sibling predicates fail to pick a unique child
    /// (malformed hand-built partitions).
    pub fn route(&self, x: &[f64]) -> Result<Vec<SegmentId>> {
        let mut cur = self.root;
        if !self.segments[cur].membership.contains(x) {
            return Err(Error::OutOfDomain(format!(
                "{x:?} not in the root region"
            )));
        }
        let mut path = vec![cur];
        while self.segments[cur].is_divisible() {
            let mut next = None;
            for &c in &self.segments[cur].children {
                if self.segments[c].membership.contains(x) {
                    if next.is_some() {
                        return Err(Error::invalid(format!(
                            "point {x:?} matched two siblings under segment {cur}"
                        )));
                    }
                    next = Some(c);
                }
            }
            match next {
                Some(c) => {
                    path.push(c);
                    cur = c;
                }
                None => {
                    return Err(Error::invalid(format!(
                        "point {x:?} matched no child of segment {cur}"
                    )))
                }
            }
        }
        Ok(path)
    }

    /// Number of induced partitions, by the recursion
    /// `count(S) = 1` if `S` is indivisible, else `1 + Π count(S′)`.
    pub fn count_induced_partitions(&self) -> u128 {
        self.count_from(self.root)
    }

    fn count_from(&self, id: SegmentId) -> u128 {
        let s = &self.segments[id];
        if !s.is_divisible() {
            return 1;
        }
        let mut prod: u128 = 1;
        for &c in &s.children {
            prod = prod.saturating_mul(self.count_from(c));
        }
        prod.saturating_add(1)
    }

    /// Enumerate every induced partition, capped at `cap` results.
    pub fn enumerate_induced_partitions(&self, cap: u128) -> Result<Vec<InducedPartition>> {
        let total = self.count_induced_partitions();
        if total > cap {
            return Err(Error::ResourceLimit(format!(
                "partition has {total} induced partitions, cap is {cap}"
            )));
        }
        let sets = self.enumerate_from(self.root);
        Ok(sets.into_iter().map(InducedPartition::new).collect())
    }

    fn enumerate_from(&self, id: SegmentId) -> Vec<Vec<SegmentId>> {
        let s = &self.segments[id];
        let mut out = vec![vec![id]];
        if s.is_divisible() {
            // Cartesian product of the children's induced partitions.
            let mut acc: Vec<Vec<SegmentId>> = vec![Vec::new()];
            for &c in &s.children {
                let child_sets = self.enumerate_from(c);
                let mut next = Vec::with_capacity(acc.len() * child_sets.len());
                for a in &acc {
                    for cs in &child_sets {
                        let mut merged = a.clone();
                        merged.extend_from_slice(cs);
                        next.push(merged);
                    }
                }
                acc = next;
            }
            out.extend(acc);
        }
        out
    }

    /// Is `p` an induced partition of this hierarchy?
    pub fn is_induced(&self, p: &InducedPartition) -> bool {
        let members: std::collections::HashSet<SegmentId> =
            p.segment_ids.iter().copied().collect();
        if members.len() != p.segment_ids.len() || members.is_empty() {
            return false;
        }
        let mut used = 0usize;
        if !self.covers(self.root, &members, &mut used) {
            return false;
        }
        used == members.len()
    }

    fn covers(
        &self,
        id: SegmentId,
        members: &std::collections::HashSet<SegmentId>,
        used: &mut usize,
    ) -> bool {
        if members.contains(&id) {
            *used += 1;
            return true;
        }
        let s = &self.segments[id];
        s.is_divisible() && s.children.iter().all(|&c| self.covers(c, members, used))
    }

    /// `C_{H,P}`: the number of divisible segments of `H` containing some
    /// member of `P` (including equality).
    pub fn count_divisible_supersets(&self, p: &InducedPartition) -> Result<usize> {
        if !self.is_induced(p) {
            return Err(Error::invalid(
                "segment set is not an induced partition of this hierarchy",
            ));
        }
        Ok(self
            .divisible_ids()
            .filter(|&d| p.segment_ids.iter().any(|&m| self.is_superset(d, m)))
            .count())
    }

    /// Serialize to the structured text form (JSON document).
    ///
    /// Grid partitions round-trip bit-exactly; real coefficients are written
    /// shortest-round-trip, which preserves all 17 significant digits.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("partition serialization cannot fail")
    }

    /// Parse the structured text form, re-validating the tree invariants.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: HierarchicalPartition =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        // Re-run structural validation so hand-edited files cannot smuggle in
        // a malformed tree.
        HierarchicalPartition::from_segments(raw.segments)
    }
}

/// Quad-tree over a `width × height` pixel grid with `levels` levels.
///
/// `levels = 1` is the single-segment partition. Each internal rectangle
/// splits at the floor midpoint of both axes, so odd extents give the
/// low-coordinate half the smaller part and every segment stays non-empty.
pub fn build_quadtree(width: u32, height: u32, levels: u32) -> Result<HierarchicalPartition> {
    if levels < 1 {
        return Err(Error::invalid("levels must be >= 1"));
    }
    let min_extent = 1u64 << (levels - 1);
    if (width as u64) < min_extent || (height as u64) < min_extent {
        return Err(Error::invalid(format!(
            "grid {width}x{height} too small for {levels} levels (needs >= {min_extent} per axis)"
        )));
    }
    let mut segments: Vec<Segment> = Vec::new();
    segments.push(Segment {
        id: 0,
        parent: None,
        children: Vec::new(),
        membership: SegmentPredicate::GridRect {
            x0: 0,
            x1: width as i64,
            y0: 0,
            y1: height as i64,
        },
    });
    let mut frontier = vec![0usize];
    for _ in 1..levels {
        let mut next_frontier = Vec::with_capacity(frontier.len() * 4);
        for &id in &frontier {
            let (x0, x1, y0, y1) = match segments[id].membership {
                SegmentPredicate::GridRect { x0, x1, y0, y1 } => (x0, x1, y0, y1),
                _ => unreachable!("quadtree nodes are rectangles"),
            };
            let mx = x0 + (x1 - x0) / 2;
            let my = y0 + (y1 - y0) / 2;
            let quads = [
                (x0, mx, y0, my),
                (mx, x1, y0, my),
                (x0, mx, my, y1),
                (mx, x1, my, y1),
            ];
            let mut child_ids = Vec::with_capacity(4);
            for &(qx0, qx1, qy0, qy1) in &quads {
                let cid = segments.len();
                segments.push(Segment {
                    id: cid,
                    parent: Some(id),
                    children: Vec::new(),
                    membership: SegmentPredicate::GridRect {
                        x0: qx0,
                        x1: qx1,
                        y0: qy0,
                        y1: qy1,
                    },
                });
                child_ids.push(cid);
            }
            segments[id].children = child_ids.clone();
            next_frontier.extend(child_ids);
        }
        frontier = next_frontier;
    }
    HierarchicalPartition::from_segments(segments)
}

/// Randomized halfspace tree with one `(mu, sigma)` pair per split depth.
///
/// At each internal node a normal `a ~ N(0, I)` is drawn and normalized, an
/// offset `b ~ N(mu_d, sigma_d)` is drawn (`sigma` is the standard
/// deviation), and the children are the two sides of `x ↦ (aᵀ/‖a‖)x − b`.
/// Draws happen in pre-order, so the tree is a pure function of the seed.
pub fn build_random_halfspaces_with(
    dim: usize,
    per_depth: &[(f64, f64)],
    seed: u64,
) -> Result<HierarchicalPartition> {
    if dim < 1 {
        return Err(Error::invalid("dim must be >= 1"));
    }
    for &(_, sigma) in per_depth {
        if sigma < 0.0 {
            return Err(Error::invalid("sigma must be >= 0"));
        }
    }
    let depth = per_depth.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = vec![Segment {
        id: 0,
        parent: None,
        children: Vec::new(),
        membership: SegmentPredicate::Universal,
    }];
    split_halfspace_node(&mut segments, 0, 0, depth, dim, per_depth, &mut rng);
    HierarchicalPartition::from_segments(segments)
}

/// Randomized halfspace tree of a fixed split depth with constant `(mu,
/// sigma)` at every depth.
pub fn build_random_halfspaces(
    dim: usize,
    depth: usize,
    mu: f64,
    sigma: f64,
    seed: u64,
) -> Result<HierarchicalPartition> {
    build_random_halfspaces_with(dim, &vec![(mu, sigma); depth], seed)
}

fn split_halfspace_node(
    segments: &mut Vec<Segment>,
    id: SegmentId,
    level: usize,
    depth: usize,
    dim: usize,
    per_depth: &[(f64, f64)],
    rng: &mut ChaCha8Rng,
) {
    if level >= depth {
        return;
    }
    let (mu, sigma) = per_depth[level];
    let mut normal: Vec<f64>;
    let mut len;
    loop {
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal is valid");
        normal = (0..dim).map(|_| std_normal.sample(rng)).collect();
        len = crate::linalg::norm(&normal);
        if len > 1e-9 {
            break;
        }
    }
    for v in &mut normal {
        *v /= len;
    }
    let offset = if sigma == 0.0 {
        mu
    } else {
        Normal::new(mu, sigma).expect("sigma checked >= 0").sample(rng)
    };
    let parent_chain = match &segments[id].membership {
        SegmentPredicate::HalfspaceChain { constraints } => constraints.clone(),
        SegmentPredicate::Universal => Vec::new(),
        _ => unreachable!("halfspace trees only hold chains"),
    };
    let mut child_ids = Vec::with_capacity(2);
    for side in [1i8, -1i8] {
        let mut chain = parent_chain.clone();
        chain.push(Halfspace {
            normal: normal.clone(),
            offset,
            side,
        });
        let cid = segments.len();
        segments.push(Segment {
            id: cid,
            parent: Some(id),
            children: Vec::new(),
            membership: SegmentPredicate::HalfspaceChain { constraints: chain },
        });
        child_ids.push(cid);
    }
    segments[id].children = child_ids.clone();
    for cid in child_ids {
        split_halfspace_node(segments, cid, level + 1, depth, dim, per_depth, rng);
    }
}

/// Scalar-interval hierarchy builder for hand-specified trees (testing and
/// small demos). `spec` maps each node to its interval and children indices.
pub fn build_interval_tree(
    intervals: &[(f64, f64, Option<usize>)],
) -> Result<HierarchicalPartition> {
    let mut segments: Vec<Segment> = intervals
        .iter()
        .enumerate()
        .map(|(i, &(lower, upper, parent))| Segment {
            id: i,
            parent,
            children: Vec::new(),
            membership: SegmentPredicate::Interval { lower, upper },
        })
        .collect();
    for i in 0..segments.len() {
        if let Some(p) = segments[i].parent {
            segments[p].children.push(i);
        }
    }
    HierarchicalPartition::from_segments(segments)
}
