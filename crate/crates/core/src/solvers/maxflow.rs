//! Dinic's algorithm on a residual graph with `f64` capacities.
//!
//! Augmentation subtracts the path bottleneck from every forward arc, so
//! the bottleneck arc is left at exactly zero and no residual ever becomes
//! negative. With integer-valued capacities every intermediate value is an
//! exact integer and the flow value equals the cut capacity bit for bit.

use std::collections::VecDeque;

#[derive(Clone, Debug, Default)]
pub struct FlowGraph {
    adj: Vec<Vec<u32>>,
    to: Vec<u32>,
    residual: Vec<f64>,
    capacity: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaxFlowResult {
    pub flow_value: f64,
    /// Capacity of the cut between `source_side` and its complement.
    pub cut_capacity: f64,
    /// Nodes reachable from the source in the final residual graph.
    pub source_side: Vec<bool>,
}

impl FlowGraph {
    pub fn new(nodes: usize) -> Self {
        Self {
            adj: vec![Vec::new(); nodes],
            ..Self::default()
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.len()
    }

    /// Arc `u → v` with capacity `cap_uv` and its reverse with `cap_vu`.
    pub fn add_edge(&mut self, u: usize, v: usize, cap_uv: f64, cap_vu: f64) {
        debug_assert!(cap_uv >= 0.0 && cap_vu >= 0.0);
        let id = self.to.len() as u32;
        self.to.push(v as u32);
        self.residual.push(cap_uv);
        self.capacity.push(cap_uv);
        self.to.push(u as u32);
        self.residual.push(cap_vu);
        self.capacity.push(cap_vu);
        self.adj[u].push(id);
        self.adj[v].push(id + 1);
    }

    fn levels(&self, s: usize) -> Vec<i32> {
        let mut level = vec![-1; self.adj.len()];
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &a in &self.adj[v] {
                let w = self.to[a as usize] as usize;
                if level[w] < 0 && self.residual[a as usize] > 0.0 {
                    level[w] = level[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        level
    }

    /// Push one blocking flow along the level graph.
    fn blocking_flow(&mut self, s: usize, t: usize, level: &[i32]) -> f64 {
        let mut next = vec![0usize; self.adj.len()];
        let mut total = 0.0;
        let mut path: Vec<u32> = Vec::new();
        let mut v = s;
        loop {
            if v == t {
                let f = path.iter().map(|&a| self.residual[a as usize]).fold(f64::INFINITY, f64::min);
                let mut cut = path.len();
                for (i, &a) in path.iter().enumerate() {
                    self.residual[a as usize] -= f;
                    self.residual[(a ^ 1) as usize] += f;
                    if self.residual[a as usize] == 0.0 && cut == path.len() {
                        cut = i;
                    }
                }
                total += f;
                path.truncate(cut);
                v = path.last().map_or(s, |&a| self.to[a as usize] as usize);
                continue;
            }
            let mut advanced = false;
            while next[v] < self.adj[v].len() {
                let a = self.adj[v][next[v]];
                let w = self.to[a as usize] as usize;
                if self.residual[a as usize] > 0.0 && level[w] == level[v] + 1 {
                    path.push(a);
                    v = w;
                    advanced = true;
                    break;
                }
                next[v] += 1;
            }
            if advanced {
                continue;
            }
            // dead end: retreat and skip the arc that led here
            match path.pop() {
                None => break,
                Some(a) => {
                    v = self.to[(a ^ 1) as usize] as usize;
                    next[v] += 1;
                }
            }
        }
        total
    }

    pub fn max_flow(&mut self, s: usize, t: usize) -> MaxFlowResult {
        assert_ne!(s, t, "source and sink must differ");
        let mut flow_value = 0.0;
        loop {
            let level = self.levels(s);
            if level[t] < 0 {
                break;
            }
            flow_value += self.blocking_flow(s, t, &level);
        }
        let source_side: Vec<bool> = self.levels(s).iter().map(|&l| l >= 0).collect();
        let mut cut_capacity = 0.0;
        for (u, arcs) in self.adj.iter().enumerate() {
            if !source_side[u] {
                continue;
            }
            for &a in arcs {
                if !source_side[self.to[a as usize] as usize] {
                    cut_capacity += self.capacity[a as usize];
                }
            }
        }
        MaxFlowResult {
            flow_value,
            cut_capacity,
            source_side,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_network() {
        // CLRS figure 26.1: max flow 23
        let mut g = FlowGraph::new(6);
        for (u, v, c) in [
            (0, 1, 16.0),
            (0, 2, 13.0),
            (2, 1, 4.0),
            (1, 3, 12.0),
            (3, 2, 9.0),
            (2, 4, 14.0),
            (4, 3, 7.0),
            (3, 5, 20.0),
            (4, 5, 4.0),
        ] {
            g.add_edge(u, v, c, 0.0);
        }
        let r = g.max_flow(0, 5);
        assert_eq!(r.flow_value, 23.0);
        assert_eq!(r.cut_capacity, 23.0);
        assert!(r.source_side[0] && !r.source_side[5]);
    }

    #[test]
    fn disconnected_sink_has_zero_flow() {
        let mut g = FlowGraph::new(3);
        g.add_edge(0, 1, 5.0, 5.0);
        let r = g.max_flow(0, 2);
        assert_eq!(r.flow_value, 0.0);
        assert_eq!(r.source_side, vec![true, true, false]);
    }
}
