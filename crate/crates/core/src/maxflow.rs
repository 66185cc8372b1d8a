//! Dual-search-tree augmenting-path max-flow for s-t graphs with terminal
//! edges, as used for binary submodular energy minimization.
//!
//! Two search trees grow from the source and the sink over residual arcs.
//! When they touch, the path is augmented; nodes whose tree arc saturates
//! become orphans and are either re-attached to the same tree or freed.

use std::collections::VecDeque;

const NO_ARC: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Tree {
    Free,
    Source,
    Sink,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Parent {
    None,
    Terminal,
    Orphan,
    /// Arc from this node to its parent.
    Arc(usize),
}

#[derive(Clone, Debug)]
struct Arc {
    head: usize,
    next: usize,
    residual: f64,
}

#[derive(Clone, Debug)]
pub struct MaxFlow {
    first: Vec<usize>,
    arcs: Vec<Arc>,
    /// Positive: residual source→node; negative: residual node→sink.
    terminal: Vec<f64>,
    tree: Vec<Tree>,
    parent: Vec<Parent>,
    flow: f64,
    source_set: Option<Vec<bool>>,
}

#[inline]
fn sister(a: usize) -> usize {
    a ^ 1
}

impl MaxFlow {
    pub fn new(nodes: usize) -> Self {
        MaxFlow {
            first: vec![NO_ARC; nodes],
            arcs: Vec::new(),
            terminal: vec![0.0; nodes],
            tree: vec![Tree::Free; nodes],
            parent: vec![Parent::None; nodes],
            flow: 0.0,
            source_set: None,
        }
    }

    pub fn node_count(&self) -> usize {
        self.first.len()
    }

    /// Adds `to_source` capacity on source→i and `to_sink` on i→sink. The
    /// common part is routed immediately and counted as flow.
    pub fn add_terminal(&mut self, i: usize, to_source: f64, to_sink: f64) {
        debug_assert!(to_source >= 0.0 && to_sink >= 0.0);
        self.flow += to_source.min(to_sink);
        self.terminal[i] += to_source - to_sink;
    }

    /// Adds arc i→j with capacity `cap` and arc j→i with `rev_cap`.
    pub fn add_edge(&mut self, i: usize, j: usize, cap: f64, rev_cap: f64) {
        debug_assert!(i != j && cap >= 0.0 && rev_cap >= 0.0);
        let a = self.arcs.len();
        self.arcs.push(Arc {
            head: j,
            next: self.first[i],
            residual: cap,
        });
        self.first[i] = a;
        self.arcs.push(Arc {
            head: i,
            next: self.first[j],
            residual: rev_cap,
        });
        self.first[j] = a + 1;
    }

    fn arcs_of(&self, i: usize) -> ArcIter<'_> {
        ArcIter {
            arcs: &self.arcs,
            cur: self.first[i],
        }
    }

    /// Runs max-flow and returns the total flow value.
    pub fn solve(&mut self) -> f64 {
        let n = self.node_count();
        let mut active: VecDeque<usize> = VecDeque::new();
        for i in 0..n {
            if self.terminal[i] > 0.0 {
                self.tree[i] = Tree::Source;
                self.parent[i] = Parent::Terminal;
                active.push_back(i);
            } else if self.terminal[i] < 0.0 {
                self.tree[i] = Tree::Sink;
                self.parent[i] = Parent::Terminal;
                active.push_back(i);
            }
        }
        let mut orphans: VecDeque<usize> = VecDeque::new();

        while let Some(i) = active.pop_front() {
            if self.tree[i] == Tree::Free {
                continue;
            }
            // Grow: find a bridging arc oriented source side → sink side.
            let mut bridge = None;
            let mut a = self.first[i];
            while a != NO_ARC {
                let j = self.arcs[a].head;
                match self.tree[i] {
                    Tree::Source if self.arcs[a].residual > 0.0 => match self.tree[j] {
                        Tree::Free => {
                            self.tree[j] = Tree::Source;
                            self.parent[j] = Parent::Arc(sister(a));
                            active.push_back(j);
                        }
                        Tree::Sink => {
                            bridge = Some(a);
                            break;
                        }
                        Tree::Source => {}
                    },
                    Tree::Sink if self.arcs[sister(a)].residual > 0.0 => match self.tree[j] {
                        Tree::Free => {
                            self.tree[j] = Tree::Sink;
                            self.parent[j] = Parent::Arc(sister(a));
                            active.push_back(j);
                        }
                        Tree::Source => {
                            bridge = Some(sister(a));
                            break;
                        }
                        Tree::Sink => {}
                    },
                    _ => {}
                }
                a = self.arcs[a].next;
            }
            let Some(bridge) = bridge else { continue };

            self.augment(bridge, &mut orphans);
            self.adopt(&mut orphans, &mut active);
            // Keep scanning `i` until it has no bridge left.
            if self.tree[i] != Tree::Free {
                active.push_front(i);
            }
        }
        self.source_set = Some(self.residual_source_set());
        self.flow
    }

    fn augment(&mut self, bridge: usize, orphans: &mut VecDeque<usize>) {
        let u = self.arcs[sister(bridge)].head;
        let v = self.arcs[bridge].head;
        let mut bottleneck = self.arcs[bridge].residual;
        let mut x = u;
        while let Parent::Arc(p) = self.parent[x] {
            bottleneck = bottleneck.min(self.arcs[sister(p)].residual);
            x = self.arcs[p].head;
        }
        bottleneck = bottleneck.min(self.terminal[x]);
        let mut x = v;
        while let Parent::Arc(p) = self.parent[x] {
            bottleneck = bottleneck.min(self.arcs[p].residual);
            x = self.arcs[p].head;
        }
        bottleneck = bottleneck.min(-self.terminal[x]);

        self.arcs[bridge].residual -= bottleneck;
        self.arcs[sister(bridge)].residual += bottleneck;

        let mut x = u;
        while let Parent::Arc(p) = self.parent[x] {
            self.arcs[sister(p)].residual -= bottleneck;
            self.arcs[p].residual += bottleneck;
            let next = self.arcs[p].head;
            if self.arcs[sister(p)].residual <= 0.0 {
                self.parent[x] = Parent::Orphan;
                orphans.push_back(x);
            }
            x = next;
        }
        self.terminal[x] -= bottleneck;
        if self.terminal[x] <= 0.0 {
            self.parent[x] = Parent::Orphan;
            orphans.push_back(x);
        }

        let mut x = v;
        while let Parent::Arc(p) = self.parent[x] {
            self.arcs[p].residual -= bottleneck;
            self.arcs[sister(p)].residual += bottleneck;
            let next = self.arcs[p].head;
            if self.arcs[p].residual <= 0.0 {
                self.parent[x] = Parent::Orphan;
                orphans.push_back(x);
            }
            x = next;
        }
        self.terminal[x] += bottleneck;
        if self.terminal[x] >= 0.0 {
            self.parent[x] = Parent::Orphan;
            orphans.push_back(x);
        }

        self.flow += bottleneck;
    }

    /// Whether `j` is still connected to its tree's terminal.
    fn rooted(&self, mut j: usize) -> bool {
        loop {
            match self.parent[j] {
                Parent::Terminal => return true,
                Parent::Arc(p) => j = self.arcs[p].head,
                Parent::Orphan | Parent::None => return false,
            }
        }
    }

    fn adopt(&mut self, orphans: &mut VecDeque<usize>, active: &mut VecDeque<usize>) {
        while let Some(x) = orphans.pop_front() {
            let side = self.tree[x];
            // A new parent must be in the same tree, reachable through a
            // residual arc in the tree's direction, and itself rooted.
            let mut adopted = None;
            for a in self.arcs_of(x) {
                let j = self.arcs[a].head;
                if self.tree[j] != side {
                    continue;
                }
                let residual = match side {
                    Tree::Source => self.arcs[sister(a)].residual,
                    _ => self.arcs[a].residual,
                };
                if residual > 0.0 && self.rooted(j) {
                    adopted = Some(a);
                    break;
                }
            }
            if let Some(a) = adopted {
                self.parent[x] = Parent::Arc(a);
                continue;
            }
            let arcs: Vec<usize> = self.arcs_of(x).collect();
            for a in arcs {
                let j = self.arcs[a].head;
                if self.tree[j] != side {
                    continue;
                }
                let residual = match side {
                    Tree::Source => self.arcs[sister(a)].residual,
                    _ => self.arcs[a].residual,
                };
                if residual > 0.0 {
                    active.push_back(j);
                }
                if let Parent::Arc(p) = self.parent[j] {
                    if self.arcs[p].head == x {
                        self.parent[j] = Parent::Orphan;
                        orphans.push_back(j);
                    }
                }
            }
            self.tree[x] = Tree::Free;
            self.parent[x] = Parent::None;
        }
    }

    /// Nodes reachable from the source in the residual graph.
    fn residual_source_set(&self) -> Vec<bool> {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| self.terminal[i] > 0.0).collect();
        for &i in &queue {
            seen[i] = true;
        }
        while let Some(i) = queue.pop_front() {
            for a in self.arcs_of(i) {
                let j = self.arcs[a].head;
                if !seen[j] && self.arcs[a].residual > 0.0 {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen
    }

    /// After [`MaxFlow::solve`]: whether `i` lies on the source side of the
    /// minimum cut. Nodes not reachable from the source count as sink side,
    /// so ties go to the sink.
    pub fn is_source_side(&self, i: usize) -> bool {
        self.source_set.as_ref().expect("solve() not called")[i]
    }
}

struct ArcIter<'a> {
    arcs: &'a [Arc],
    cur: usize,
}

impl Iterator for ArcIter<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.cur == NO_ARC {
            return None;
        }
        let a = self.cur;
        self.cur = self.arcs[a].next;
        Some(a)
    }
}
