//! Internal branch/node view of a [`GridSpec`] shared by the power-flow
//! engines and the problem builder.
//!
//! Internal node `k` is user node `k + 1`. When the ULTC is split, an
//! auxiliary node with index `n_user` is appended between the ideal
//! transformer and the series impedance of the tapped line.

use std::collections::VecDeque;

use crate::error::{Result, VvoError};
use crate::grid::{GridSpec, Radiality, RadialConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchKind {
    Line,
    /// Ideal transformer primary -> aux with no impedance.
    Transformer,
    /// Tap-changer line primary -> secondary with the ideal transformer
    /// folded in.
    TappedLine,
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub smax: f64,
    pub kind: BranchKind,
    /// Layout line this branch belongs to.
    pub layout: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct UltcSplit {
    pub transformer: usize,
    pub line: usize,
    pub primary: usize,
    pub aux: usize,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub n_user: usize,
    pub n_nodes: usize,
    pub substation: usize,
    pub branches: Vec<Branch>,
    pub ultc: Option<UltcSplit>,
    /// Index of the tapped branch when the ULTC is folded into one branch.
    pub tapped: Option<usize>,
}

impl Network {
    pub fn build(spec: &GridSpec, split_ultc: bool) -> Network {
        let n_user = spec.node_count();
        let ultc = spec.equipment().ultc.as_ref();
        let ultc_line = ultc.and_then(|u| spec.line_index(u.from, u.to));
        let mut branches = Vec::with_capacity(spec.lines().len() + 1);
        let mut split = None;
        let mut tapped = None;
        for (k, l) in spec.lines().iter().enumerate() {
            let line = Branch {
                from: l.from - 1,
                to: l.to - 1,
                r: l.resistance,
                x: l.reactance,
                smax: l.ampacity,
                kind: BranchKind::Line,
                layout: k,
            };
            match (ultc, Some(k) == ultc_line) {
                (Some(u), true) if split_ultc => {
                    let aux = n_user;
                    split = Some(UltcSplit {
                        transformer: branches.len(),
                        line: branches.len() + 1,
                        primary: u.from - 1,
                        aux,
                    });
                    branches.push(Branch {
                        from: u.from - 1,
                        to: aux,
                        r: 0.0,
                        x: 0.0,
                        smax: l.ampacity,
                        kind: BranchKind::Transformer,
                        layout: k,
                    });
                    branches.push(Branch { from: aux, to: u.to - 1, ..line });
                }
                (Some(u), true) => {
                    tapped = Some(branches.len());
                    branches.push(Branch {
                        from: u.from - 1,
                        to: u.to - 1,
                        kind: BranchKind::TappedLine,
                        ..line
                    });
                }
                _ => branches.push(line),
            }
        }
        Network {
            n_user,
            n_nodes: n_user + usize::from(split.is_some()),
            substation: spec.substation() - 1,
            branches,
            ultc: split,
            tapped,
        }
    }

    /// Per-branch closed status derived from a layout configuration.
    pub fn branch_status(&self, config: &RadialConfig) -> Vec<bool> {
        self.branches.iter().map(|b| config.is_closed(b.layout)).collect()
    }

    /// Branch carrying the impedance of layout line `layout` (the
    /// non-transformer part for the tapped line).
    pub fn impedance_branch(&self, layout: usize) -> usize {
        self.branches
            .iter()
            .position(|b| b.layout == layout && b.kind != BranchKind::Transformer)
            .expect("every layout line has an impedance branch")
    }

    /// Branch of layout line `layout` touching internal node `node`.
    pub fn branch_at(&self, layout: usize, node: usize) -> usize {
        self.branches
            .iter()
            .position(|b| b.layout == layout && (b.from == node || b.to == node))
            .expect("layout line touches node")
    }
}

/// Oriented spanning tree rooted at the substation.
#[derive(Debug, Clone)]
pub struct Tree {
    /// Nodes in breadth-first order from the root.
    pub order: Vec<usize>,
    /// For each non-root node: (branch to its parent, whether the branch is
    /// oriented parent -> child).
    pub parent: Vec<Option<(usize, bool)>>,
}

impl Tree {
    pub fn parent_node(&self, net: &Network, node: usize) -> Option<usize> {
        self.parent[node].map(|(b, fwd)| if fwd { net.branches[b].from } else { net.branches[b].to })
    }
}

pub fn spanning_tree(net: &Network, closed: &[bool]) -> Result<Tree> {
    let mut adj = vec![Vec::new(); net.n_nodes];
    let mut count = 0;
    for (k, (b, on)) in net.branches.iter().zip(closed).enumerate() {
        if *on {
            adj[b.from].push((k, b.to, true));
            adj[b.to].push((k, b.from, false));
            count += 1;
        }
    }
    let mut parent = vec![None; net.n_nodes];
    let mut seen = vec![false; net.n_nodes];
    let mut order = Vec::with_capacity(net.n_nodes);
    seen[net.substation] = true;
    let mut queue = VecDeque::from([net.substation]);
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(b, v, fwd) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some((b, fwd));
                queue.push_back(v);
            }
        }
    }
    if order.len() != net.n_nodes {
        let verdict = if count == net.n_nodes - 1 { Radiality::HasCycle } else { Radiality::NotConnected };
        return Err(VvoError::NotRadial(verdict));
    }
    if count != net.n_nodes - 1 {
        return Err(VvoError::NotRadial(Radiality::WrongLineCount));
    }
    Ok(Tree { order, parent })
}
