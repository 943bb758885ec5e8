//! Fusion of forward and backward trajectory sets over the same detections.
//!
//! Trajectories from the two runs are clustered by the detections they share.
//! A cluster with one member passes through unchanged. When the shared boxes
//! of a larger cluster sit in distinct frames they are chained into a single
//! trajectory. Otherwise every member is split at the links the two runs do
//! not agree on: runs of agreed links become guaranteed fragments, and the
//! rest become candidates that are accepted greedily by priority as long as
//! they do not put two boxes of one identity into one frame.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::ScenarioBundle;
use crate::trajectory::{check_frame_exclusivity, DetKey, Observation, Trajectory, TrajectorySet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Side {
    /// Forward run.
    A,
    /// Backward run.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Node {
    pub side: Side,
    pub id: u32,
}

fn keys_of(t: &Trajectory) -> Result<Vec<DetKey>> {
    t.observations
        .iter()
        .map(|o| {
            o.key().ok_or_else(|| {
                Error::invalid(format!("trajectory {} has an observation at frame {} without a detection key", t.id, o.frame))
            })
        })
        .collect()
}

/// Keys present in both trajectories, by a two-pointer merge over their
/// frame-sorted observations.
pub fn common_keys(a: &Trajectory, b: &Trajectory) -> Vec<DetKey> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    let (oa, ob) = (&a.observations, &b.observations);
    while i < oa.len() && j < ob.len() {
        match (oa[i].frame, oa[i].det).cmp(&(ob[j].frame, ob[j].det)) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                if let Some(k) = oa[i].key() {
                    out.push(k);
                }
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Shared keys for every (forward id, backward id) pair that shares any.
pub fn find_common_boxes(ta: &TrajectorySet, tb: &TrajectorySet) -> BTreeMap<(u32, u32), Vec<DetKey>> {
    let mut owner_b: HashMap<DetKey, Vec<usize>> = HashMap::new();
    for (j, t) in tb.trajectories.iter().enumerate() {
        for k in t.observations.iter().filter_map(Observation::key) {
            owner_b.entry(k).or_default().push(j);
        }
    }
    let mut out = BTreeMap::new();
    for a in &ta.trajectories {
        let partners: BTreeSet<usize> = a
            .observations
            .iter()
            .filter_map(Observation::key)
            .filter_map(|k| owner_b.get(&k))
            .flatten()
            .copied()
            .collect();
        for j in partners {
            let b = &tb.trajectories[j];
            let shared = common_keys(a, b);
            if !shared.is_empty() {
                out.insert((a.id, b.id), shared);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cluster {
    pub forward: Vec<u32>,
    pub backward: Vec<u32>,
    /// Union of the keys shared by member pairs, sorted.
    pub shared: Vec<DetKey>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.forward.len() + self.backward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Connected components of the forward/backward sharing graph, found by BFS.
/// Forward nodes precede backward nodes, and clusters are ordered by their
/// smallest node.
pub fn cluster_trajectories(
    ta: &TrajectorySet,
    tb: &TrajectorySet,
    shared: &BTreeMap<(u32, u32), Vec<DetKey>>,
) -> Vec<Cluster> {
    let mut nodes: Vec<Node> = ta
        .trajectories
        .iter()
        .map(|t| Node { side: Side::A, id: t.id })
        .chain(tb.trajectories.iter().map(|t| Node { side: Side::B, id: t.id }))
        .collect();
    nodes.sort();
    nodes.dedup();
    let mut adj: BTreeMap<Node, Vec<Node>> = nodes.iter().map(|n| (*n, Vec::new())).collect();
    for &(a, b) in shared.keys() {
        let (na, nb) = (Node { side: Side::A, id: a }, Node { side: Side::B, id: b });
        adj.entry(na).or_default().push(nb);
        adj.entry(nb).or_default().push(na);
    }

    let mut seen = HashSet::new();
    let mut clusters = Vec::new();
    for start in adj.keys() {
        if !seen.insert(*start) {
            continue;
        }
        let mut members = vec![*start];
        let mut queue = VecDeque::from([*start]);
        while let Some(n) = queue.pop_front() {
            for m in &adj[&n] {
                if seen.insert(*m) {
                    members.push(*m);
                    queue.push_back(*m);
                }
            }
        }
        members.sort();
        let forward: Vec<u32> = members.iter().filter(|n| n.side == Side::A).map(|n| n.id).collect();
        let backward: Vec<u32> = members.iter().filter(|n| n.side == Side::B).map(|n| n.id).collect();
        let mut keys: BTreeSet<DetKey> = BTreeSet::new();
        for a in &forward {
            for b in &backward {
                if let Some(s) = shared.get(&(*a, *b)) {
                    keys.extend(s);
                }
            }
        }
        clusters.push(Cluster {
            forward,
            backward,
            shared: keys.into_iter().collect(),
        });
    }
    clusters
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FragmentKind {
    A,
    B,
    AB,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fragment {
    pub owner: Node,
    pub kind: FragmentKind,
    /// In ascending frame order.
    pub observations: Vec<Observation>,
    /// 1-based index of the fragment's first object in the owner's run order.
    pub n_first: u32,
    /// 1-based index of the fragment's last object in the owner's run order.
    pub n_last: u32,
}

impl Fragment {
    pub fn first_frame(&self) -> u32 {
        self.observations[0].frame
    }

    pub fn keys(&self) -> Vec<DetKey> {
        self.observations.iter().filter_map(Observation::key).collect()
    }

    pub fn frames(&self) -> Vec<u32> {
        self.observations.iter().map(|o| o.frame).collect()
    }
}

/// Guaranteed fragments score `z`; candidates score the larger of their
/// first and last run-order indices.
pub fn fragment_priority(f: &Fragment, z: u64) -> u64 {
    match f.kind {
        FragmentKind::AB => z,
        _ => f.n_first.max(f.n_last) as u64,
    }
}

fn run_index(side: Side, pos: usize, len: usize) -> u32 {
    match side {
        Side::A => pos as u32 + 1,
        Side::B => (len - pos) as u32,
    }
}

fn link_set(trajs: &[&Trajectory]) -> HashSet<(DetKey, DetKey)> {
    trajs
        .iter()
        .flat_map(|t| t.links())
        .map(|l| (l.from, l.to))
        .collect()
}

/// How one member trajectory decomposes: `ab[pos]` is the guaranteed
/// fragment holding that position, if any.
struct Decomposition<'a> {
    node: Node,
    traj: &'a Trajectory,
    ab: Vec<Option<usize>>,
}

/// Splits cluster members at the links the two runs do not share.
///
/// Maximal runs of common links form guaranteed (AB) fragments, reported once
/// with the forward trajectory as owner. Maximal runs of the remaining
/// observations of each member become candidates tagged with its side.
pub fn split_into_fragments(forward: &[&Trajectory], backward: &[&Trajectory]) -> Vec<Fragment> {
    split_impl(forward, backward).0
}

fn split_impl<'a>(forward: &[&'a Trajectory], backward: &[&'a Trajectory]) -> (Vec<Fragment>, Vec<Decomposition<'a>>) {
    let la = link_set(forward);
    let lb = link_set(backward);
    let common: HashSet<(DetKey, DetKey)> = la.intersection(&lb).copied().collect();

    let mut fragments = Vec::new();
    let mut ab_of_key: HashMap<DetKey, usize> = HashMap::new();

    for t in forward {
        let obs = &t.observations;
        let mut pos = 0;
        while pos < obs.len() {
            let mut end = pos;
            while end + 1 < obs.len() {
                match (obs[end].key(), obs[end + 1].key()) {
                    (Some(f), Some(g)) if common.contains(&(f, g)) => end += 1,
                    _ => break,
                }
            }
            if end > pos {
                let idx = fragments.len();
                for o in &obs[pos..=end] {
                    if let Some(k) = o.key() {
                        ab_of_key.insert(k, idx);
                    }
                }
                fragments.push(Fragment {
                    owner: Node { side: Side::A, id: t.id },
                    kind: FragmentKind::AB,
                    observations: obs[pos..=end].to_vec(),
                    n_first: run_index(Side::A, pos, obs.len()),
                    n_last: run_index(Side::A, end, obs.len()),
                });
            }
            pos = end + 1;
        }
    }

    let mut decomps = Vec::new();
    let members = forward
        .iter()
        .map(|t| (Side::A, *t))
        .chain(backward.iter().map(|t| (Side::B, *t)));
    for (side, t) in members {
        let obs = &t.observations;
        let ab: Vec<Option<usize>> = obs
            .iter()
            .map(|o| o.key().and_then(|k| ab_of_key.get(&k).copied()))
            .collect();
        let kind = if side == Side::A { FragmentKind::A } else { FragmentKind::B };
        let mut pos = 0;
        while pos < obs.len() {
            if ab[pos].is_some() {
                pos += 1;
                continue;
            }
            let mut end = pos;
            while end + 1 < obs.len() && ab[end + 1].is_none() {
                end += 1;
            }
            let (i1, i2) = (run_index(side, pos, obs.len()), run_index(side, end, obs.len()));
            fragments.push(Fragment {
                owner: Node { side, id: t.id },
                kind,
                observations: obs[pos..=end].to_vec(),
                n_first: i1.min(i2),
                n_last: i1.max(i2),
            });
            pos = end + 1;
        }
        decomps.push(Decomposition {
            node: Node { side, id: t.id },
            traj: t,
            ab,
        });
    }
    (fragments, decomps)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionCandidate {
    /// Index into [`SelectionProblem::identities`].
    pub identity: usize,
    pub priority: u64,
    pub frames: Vec<u32>,
    pub keys: Vec<DetKey>,
    pub owner: Node,
    pub first_frame: u32,
}

/// The candidate-selection step of one cluster: identities seeded with the
/// frames of their guaranteed fragments, and the candidates to choose from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SelectionProblem {
    pub identities: Vec<BTreeSet<u32>>,
    pub candidates: Vec<SelectionCandidate>,
}

impl SelectionProblem {
    /// Candidate indices in greedy visiting order: priority descending, then
    /// owner id, then first frame, then forward before backward.
    pub fn greedy_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.candidates.len()).collect();
        order.sort_by(|&x, &y| {
            let (a, b) = (&self.candidates[x], &self.candidates[y]);
            b.priority
                .cmp(&a.priority)
                .then(a.owner.id.cmp(&b.owner.id))
                .then(a.first_frame.cmp(&b.first_frame))
                .then(a.owner.side.cmp(&b.owner.side))
                .then(x.cmp(&y))
        });
        order
    }

    pub fn total_priority(&self, chosen: &[usize]) -> u64 {
        chosen.iter().map(|&c| self.candidates[c].priority).sum()
    }
}

/// Accepts candidates in greedy order whenever their frames are free within
/// their identity. Returns accepted indices in acceptance order.
pub fn greedy_select(p: &SelectionProblem) -> Vec<usize> {
    let mut frames = p.identities.clone();
    let mut accepted = Vec::new();
    for c in p.greedy_order() {
        let cand = &p.candidates[c];
        let held = &frames[cand.identity];
        if cand.frames.iter().any(|f| held.contains(f)) {
            continue;
        }
        frames[cand.identity].extend(cand.frames.iter().copied());
        accepted.push(c);
    }
    accepted
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    Singleton,
    Chained,
    Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterReport {
    pub forward: Vec<u32>,
    pub backward: Vec<u32>,
    pub shared: usize,
    pub mode: ClusterMode,
    pub guaranteed: usize,
    pub candidates: usize,
    pub accepted: usize,
    /// Remainder observations left out of a chained cluster because their
    /// frame or detection was already taken.
    pub dropped_remainder: usize,
    /// Observations of accepted candidates left out because an earlier
    /// fragment of another identity already holds their detection.
    pub dropped_shared: usize,
    pub outputs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct FusionReport {
    pub clusters: Vec<ClusterReport>,
}

/// A cluster prepared for candidate selection.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPlan {
    pub fragments: Vec<Fragment>,
    /// Identity of each guaranteed fragment, by fragment index.
    pub guaranteed_identity: BTreeMap<usize, usize>,
    /// Fragment index of each selection candidate.
    pub candidate_fragment: Vec<usize>,
    pub problem: SelectionProblem,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut c = x;
        while self.parent[c] != r {
            let next = self.parent[c];
            self.parent[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

/// Splits a cluster, resolves the identity of every fragment, and builds the
/// selection problem. `z` is the guaranteed-fragment priority.
///
/// Guaranteed fragments that follow each other inside some member are joined
/// into one identity, strongest junction first: junctions seen by both runs
/// rank as `z`, others by the larger run-order index of their two bounding
/// observations. A join needs the earlier fragment to have no successor yet,
/// the later to have no predecessor yet, and the two identities to hold
/// disjoint frames. A candidate takes the identity of the guaranteed fragment
/// before it in its owner's run direction, otherwise the one after it, and
/// starts a new identity when it has neither.
pub fn plan_cluster(forward: &[&Trajectory], backward: &[&Trajectory], z: u64) -> ClusterPlan {
    let (fragments, decomps) = split_impl(forward, backward);
    let ab: Vec<usize> = (0..fragments.len()).filter(|&i| fragments[i].kind == FragmentKind::AB).collect();

    let mut junctions: BTreeMap<(usize, usize), (u64, BTreeSet<Side>)> = BTreeMap::new();
    for d in &decomps {
        let n = d.traj.observations.len();
        let mut prev: Option<(usize, usize)> = None;
        for (pos, f) in d.ab.iter().enumerate() {
            let Some(f) = *f else { continue };
            if let Some((pf, ppos)) = prev {
                if pf != f {
                    let pri = run_index(d.node.side, ppos, n).max(run_index(d.node.side, pos, n)) as u64;
                    let e = junctions.entry((pf, f)).or_insert((0, BTreeSet::new()));
                    e.0 = e.0.max(pri);
                    e.1.insert(d.node.side);
                }
            }
            prev = Some((f, pos));
        }
    }
    let mut order: Vec<((usize, usize), u64)> = junctions
        .into_iter()
        .map(|(k, (p, sides))| (k, if sides.len() == 2 { z } else { p }))
        .collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut uf = UnionFind::new(fragments.len());
    let mut frames: HashMap<usize, BTreeSet<u32>> = ab
        .iter()
        .map(|&i| (i, fragments[i].frames().into_iter().collect()))
        .collect();
    let mut has_succ = HashSet::new();
    let mut has_pred = HashSet::new();
    for ((p, n), _) in order {
        if has_succ.contains(&p) || has_pred.contains(&n) {
            continue;
        }
        let (rp, rn) = (uf.find(p), uf.find(n));
        if rp == rn || !frames[&rp].is_disjoint(&frames[&rn]) {
            continue;
        }
        uf.union(rp, rn);
        let root = uf.find(rp);
        let other = if root == rp { rn } else { rp };
        let moved = frames.remove(&other).unwrap_or_default();
        frames.get_mut(&root).expect("root has frames").extend(moved);
        has_succ.insert(p);
        has_pred.insert(n);
    }

    let mut identity_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut identities: Vec<BTreeSet<u32>> = Vec::new();
    let mut guaranteed_identity = BTreeMap::new();
    for &i in &ab {
        let root = uf.find(i);
        let id = *identity_of_root.entry(root).or_insert_with(|| {
            identities.push(frames[&root].clone());
            identities.len() - 1
        });
        guaranteed_identity.insert(i, id);
    }

    let mut candidates = Vec::new();
    let mut candidate_fragment = Vec::new();
    let mut cursor = 0;
    for (ci, f) in fragments.iter().enumerate() {
        if f.kind == FragmentKind::AB {
            continue;
        }
        while decomps[cursor].node != f.owner {
            cursor += 1;
        }
        let d = &decomps[cursor];
        let first = d
            .traj
            .observations
            .iter()
            .position(|o| o.frame == f.first_frame())
            .expect("fragment comes from its owner");
        let last = first + f.observations.len() - 1;
        let before = first.checked_sub(1).and_then(|p| d.ab[p]);
        let after = d.ab.get(last + 1).copied().flatten();
        let anchor = match f.owner.side {
            Side::A => before.or(after),
            Side::B => after.or(before),
        };
        let identity = match anchor {
            Some(a) => guaranteed_identity[&a],
            None => {
                identities.push(BTreeSet::new());
                identities.len() - 1
            }
        };
        candidates.push(SelectionCandidate {
            identity,
            priority: fragment_priority(f, z),
            frames: f.frames(),
            keys: f.keys(),
            owner: f.owner,
            first_frame: f.first_frame(),
        });
        candidate_fragment.push(ci);
    }

    ClusterPlan {
        fragments,
        guaranteed_identity,
        candidate_fragment,
        problem: SelectionProblem {
            identities,
            candidates,
        },
    }
}

fn fuse_cluster(cluster: &Cluster, ta: &BTreeMap<u32, &Trajectory>, tb: &BTreeMap<u32, &Trajectory>, z: u64) -> (Vec<Vec<Observation>>, ClusterReport) {
    let forward: Vec<&Trajectory> = cluster.forward.iter().map(|id| ta[id]).collect();
    let backward: Vec<&Trajectory> = cluster.backward.iter().map(|id| tb[id]).collect();
    let mut report = ClusterReport {
        forward: cluster.forward.clone(),
        backward: cluster.backward.clone(),
        shared: cluster.shared.len(),
        mode: ClusterMode::Singleton,
        guaranteed: 0,
        candidates: 0,
        accepted: 0,
        dropped_remainder: 0,
        dropped_shared: 0,
        outputs: 1,
    };

    if cluster.len() == 1 {
        let t = forward.first().or(backward.first()).expect("cluster has a member");
        return (vec![t.observations.clone()], report);
    }

    let shared_frames: BTreeSet<u32> = cluster.shared.iter().map(|k| k.frame).collect();
    if shared_frames.len() == cluster.shared.len() {
        report.mode = ClusterMode::Chained;
        let shared: HashSet<DetKey> = cluster.shared.iter().copied().collect();
        let mut used = shared.clone();
        let mut held = shared_frames;
        let mut out: Vec<Observation> = Vec::new();
        for t in forward.iter().chain(&backward) {
            for o in &t.observations {
                let Some(k) = o.key() else { continue };
                if shared.contains(&k) {
                    if !out.iter().any(|x| x.key() == Some(k)) {
                        out.push(o.clone());
                    }
                } else if !held.contains(&o.frame) && !used.contains(&k) {
                    held.insert(o.frame);
                    used.insert(k);
                    out.push(o.clone());
                } else {
                    report.dropped_remainder += 1;
                }
            }
        }
        out.sort_by_key(|o| o.frame);
        return (vec![out], report);
    }

    report.mode = ClusterMode::Split;
    let plan = plan_cluster(&forward, &backward, z);
    let accepted = greedy_select(&plan.problem);
    report.guaranteed = plan.guaranteed_identity.len();
    report.candidates = plan.problem.candidates.len();
    report.accepted = accepted.len();

    let mut groups: Vec<Vec<Observation>> = vec![Vec::new(); plan.problem.identities.len()];
    let mut claimed: HashSet<DetKey> = HashSet::new();
    for (&frag, &id) in &plan.guaranteed_identity {
        claimed.extend(plan.fragments[frag].keys());
        groups[id].extend(plan.fragments[frag].observations.iter().cloned());
    }
    for c in accepted {
        let cand = &plan.problem.candidates[c];
        for o in &plan.fragments[plan.candidate_fragment[c]].observations {
            if o.key().is_some_and(|k| claimed.insert(k)) {
                groups[cand.identity].push(o.clone());
            } else {
                report.dropped_shared += 1;
            }
        }
    }
    let mut out: Vec<Vec<Observation>> = groups
        .into_iter()
        .filter(|g| !g.is_empty())
        .map(|mut g| {
            g.sort_by_key(|o| o.frame);
            g
        })
        .collect();
    out.sort_by_key(|g| (g[0].frame, g[0].det));
    report.outputs = out.len();
    (out, report)
}

/// Fuses forward and backward trajectories. Output ids are assigned
/// `1..=n` in cluster order, then by first frame within a cluster.
pub fn fuse(ta: &TrajectorySet, tb: &TrajectorySet) -> Result<TrajectorySet> {
    fuse_with_report(ta, tb).map(|(t, _)| t)
}

pub fn fuse_with_report(ta: &TrajectorySet, tb: &TrajectorySet) -> Result<(TrajectorySet, FusionReport)> {
    for set in [ta, tb] {
        check_frame_exclusivity(set)?;
        for t in &set.trajectories {
            keys_of(t)?;
        }
    }
    let z = (ta.observation_count() + tb.observation_count() + 1) as u64;
    let shared = find_common_boxes(ta, tb);
    let clusters = cluster_trajectories(ta, tb, &shared);
    let amap: BTreeMap<u32, &Trajectory> = ta.trajectories.iter().map(|t| (t.id, t)).collect();
    let bmap: BTreeMap<u32, &Trajectory> = tb.trajectories.iter().map(|t| (t.id, t)).collect();

    let results: Vec<_> = clusters.par_iter().map(|c| fuse_cluster(c, &amap, &bmap, z)).collect();

    let mut trajectories = Vec::new();
    let mut report = FusionReport::default();
    for (groups, r) in results {
        for g in groups {
            trajectories.push(Trajectory::new(trajectories.len() as u32 + 1, g));
        }
        report.clusters.push(r);
    }
    let out = TrajectorySet::new(trajectories);
    check_frame_exclusivity(&out)?;
    Ok((out, report))
}

/// Like [`fuse`], but first checks that every referenced detection exists in
/// `bundle`.
pub fn fuse_checked(ta: &TrajectorySet, tb: &TrajectorySet, bundle: &ScenarioBundle) -> Result<TrajectorySet> {
    for set in [ta, tb] {
        for t in &set.trajectories {
            for k in keys_of(t)? {
                if bundle.detection(k).is_none() {
                    return Err(Error::invalid(format!("trajectory {} references unknown detection {k}", t.id)));
                }
            }
        }
    }
    fuse(ta, tb)
}
