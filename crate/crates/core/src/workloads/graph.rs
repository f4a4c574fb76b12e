//! Shortest paths over a graph whose nodes are spread across actors.
//!
//! Nodes are passive objects assigned round-robin to partition actors.
//! Edges to nodes of the same partition are local references; edges that
//! cross partitions are bestowed references. The solver runs inside the
//! actor owning the source and reads a node's edges synchronously when it
//! owns the node and through a delegated send otherwise. With the
//! `WhenOwnerIdle` policy it first tries to take the node over.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::WorkloadError;
use crate::runtime::{
    ActorId, ActorRef, BestowedRef, Ctx, FutureValue, Handle, LocalRef, RuntimeError, TransferOutcome,
};

/// A directed graph with non-negative integer weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<(usize, u64)>>,
}

impl Graph {
    pub fn new(nodes: usize) -> Graph {
        Graph { adj: vec![Vec::new(); nodes] }
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn add_edge(&mut self, from: usize, to: usize, weight: u64) {
        self.adj[from].push((to, weight));
    }

    pub fn edges(&self, node: usize) -> &[(usize, u64)] {
        &self.adj[node]
    }

    /// A random tree rooted at node 0 plus `extra` random edges.
    pub fn random(seed: u64, nodes: usize, extra: usize, max_weight: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new(nodes);
        for v in 1..nodes {
            let u = rng.random_range(0..v);
            g.add_edge(u, v, rng.random_range(0..=max_weight));
        }
        if nodes > 1 {
            for _ in 0..extra {
                let u = rng.random_range(0..nodes);
                let v = (u + rng.random_range(1..nodes)) % nodes;
                g.add_edge(u, v, rng.random_range(0..=max_weight));
            }
        }
        g
    }
}

/// Sequential Dijkstra; `None` for unreachable nodes.
pub fn dijkstra(g: &Graph, source: usize) -> Vec<Option<u64>> {
    let mut dist = vec![None; g.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = Some(0);
    heap.push(Reverse((0, source)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if dist[u].is_some_and(|x| x < d) {
            continue;
        }
        for &(v, w) in g.edges(u) {
            let nd = d + w;
            if dist[v].is_none_or(|x| nd < x) {
                dist[v] = Some(nd);
                heap.push(Reverse((nd, v)));
            }
        }
    }
    dist
}

pub enum Link {
    Local(LocalRef<Node>),
    Bestowed(BestowedRef<Node>),
}

pub struct Edge {
    pub to: usize,
    pub link: Link,
    pub weight: u64,
}

pub struct Node {
    id: usize,
    edges: Vec<Edge>,
}

impl Node {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Neighbour identities and weights; all the solver needs.
    pub fn neighbours(&self) -> Vec<(usize, u64)> {
        self.edges.iter().map(|e| (e.to, e.weight)).collect()
    }
}

/// A partition actor's state.
#[derive(Default)]
pub struct Partition {
    nodes: BTreeMap<usize, LocalRef<Node>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PathReport {
    pub source: usize,
    pub distances: Vec<Option<u64>>,
    /// Nodes expanded with synchronous access.
    pub local: usize,
    /// Nodes expanded through a delegated send.
    pub remote: usize,
    pub transferred: usize,
}

/// A graph spread over partition actors.
#[derive(Clone)]
pub struct DistGraph {
    parts: Vec<ActorRef<Partition>>,
    nodes: Arc<Vec<BestowedRef<Node>>>,
}

impl DistGraph {
    /// Places node `i` in partition `i % partitions`. Nodes are transferable
    /// so that the runtime's transfer policy decides whether they move.
    pub fn build(handle: &Handle, g: &Graph, partitions: usize) -> Result<DistGraph, WorkloadError> {
        if partitions == 0 {
            return Err(WorkloadError::InvalidArgument("need at least one partition".into()));
        }
        let parts: Vec<_> = (0..partitions).map(|i| handle.spawn(format!("part{i}"), Partition::default())).collect();
        let mut nodes: Vec<Option<BestowedRef<Node>>> = (0..g.len()).map(|_| None).collect();
        for (p, part) in parts.iter().enumerate() {
            let ids: Vec<usize> = (p..g.len()).step_by(partitions).collect();
            let made = part
                .send(move |st, ctx| {
                    ids.into_iter()
                        .map(|id| {
                            let local = ctx.alloc_transferable(Node { id, edges: Vec::new() });
                            st.nodes.insert(id, local.clone());
                            (id, ctx.bestow(&local))
                        })
                        .collect::<Vec<_>>()
                })
                .get()?;
            for (id, b) in made {
                nodes[id] = Some(b);
            }
        }
        let nodes: Arc<Vec<_>> = Arc::new(nodes.into_iter().map(|n| n.expect("every node placed")).collect());
        for part in &parts {
            let (adj, all) = (g.adj.clone(), nodes.clone());
            part.send(move |st, ctx| {
                for (&id, local) in &st.nodes {
                    let edges = adj[id]
                        .iter()
                        .map(|&(to, weight)| {
                            let link = match st.nodes.get(&to) {
                                Some(l) => Link::Local(l.clone()),
                                None => Link::Bestowed(all[to].clone()),
                            };
                            Edge { to, link, weight }
                        })
                        .collect();
                    ctx.with(local, |n| n.edges = edges)?;
                }
                Ok::<_, RuntimeError>(())
            })
            .get()??;
        }
        Ok(DistGraph { parts, nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn owner_of(&self, node: usize) -> ActorId {
        self.nodes[node].owner()
    }

    /// Runs Dijkstra inside the actor currently owning `source`.
    pub fn shortest_paths(&self, source: usize) -> FutureValue<PathReport> {
        let handle = self.parts[0].handle();
        let owner = self.owner_of(source);
        let Some(part) = self.parts.iter().find(|p| p.id() == owner) else {
            return FutureValue::from_error(handle, RuntimeError::ActorTerminated(owner));
        };
        let (out, fut) = handle.promise();
        let nodes = self.nodes.clone();
        if let Err(e) = part.post(move |_, ctx| out.fulfill(solve(ctx, &nodes, source))) {
            return FutureValue::from_error(handle, e);
        }
        fut
    }
}

fn solve(ctx: &Ctx, nodes: &[BestowedRef<Node>], source: usize) -> Result<PathReport, RuntimeError> {
    let me = ctx.me();
    let mut report =
        PathReport { source, distances: vec![None; nodes.len()], local: 0, remote: 0, transferred: 0 };
    let mut done = vec![false; nodes.len()];
    let mut heap = BinaryHeap::new();
    report.distances[source] = Some(0);
    heap.push(Reverse((0u64, source)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if std::mem::replace(&mut done[u], true) {
            continue;
        }
        let node = &nodes[u];
        if node.owner() != me
            && node.is_transferable()
            && ctx.handle().try_transfer(node, me)? == TransferOutcome::Transferred
        {
            report.transferred += 1;
        }
        let edges = if node.owner() == me {
            report.local += 1;
            ctx.with(node, |n| n.neighbours())?
        } else {
            report.remote += 1;
            node.send(|n, _| n.neighbours()).get()?
        };
        for (v, w) in edges {
            let nd = d + w;
            if !done[v] && report.distances[v].is_none_or(|x| nd < x) {
                report.distances[v] = Some(nd);
                heap.push(Reverse((nd, v)));
            }
        }
    }
    Ok(report)
}
