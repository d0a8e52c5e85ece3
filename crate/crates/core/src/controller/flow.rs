//! Integer min-cost flow by successive shortest paths (Bellman-Ford on the
//! residual graph). Sized for transportation problems with a handful of
//! nodes per side, where exactness matters more than asymptotics.

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: i64,
    cost: i128,
}

#[derive(Debug, Clone)]
pub struct MinCostFlow {
    adj: Vec<Vec<usize>>,
    edges: Vec<Edge>,
    original_cap: Vec<i64>,
}

impl MinCostFlow {
    pub fn new(nodes: usize) -> Self {
        Self {
            adj: vec![Vec::new(); nodes],
            edges: Vec::new(),
            original_cap: Vec::new(),
        }
    }

    /// Adds a directed edge and returns its handle for [`MinCostFlow::flow`].
    pub fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: i128) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap, cost });
        self.adj[from].push(id);
        self.edges.push(Edge {
            to: from,
            cap: 0,
            cost: -cost,
        });
        self.adj[to].push(id + 1);
        self.original_cap.push(cap);
        self.original_cap.push(0);
        id
    }

    pub fn flow(&self, edge: usize) -> i64 {
        self.original_cap[edge] - self.edges[edge].cap
    }

    /// Pushes up to `limit` units from `source` to `sink` at minimum cost.
    /// Returns the flow sent and its total cost.
    pub fn run(&mut self, source: usize, sink: usize, limit: i64) -> (i64, i128) {
        let n = self.adj.len();
        let mut sent = 0i64;
        let mut total = 0i128;
        while sent < limit {
            let mut dist: Vec<Option<i128>> = vec![None; n];
            let mut via: Vec<Option<usize>> = vec![None; n];
            dist[source] = Some(0);
            // Bellman-Ford; at most n-1 relaxation rounds.
            for _ in 0..n {
                let mut changed = false;
                for u in 0..n {
                    let Some(du) = dist[u] else { continue };
                    for &e in &self.adj[u] {
                        let edge = &self.edges[e];
                        if edge.cap <= 0 {
                            continue;
                        }
                        let nd = du + edge.cost;
                        if dist[edge.to].is_none_or(|d| nd < d) {
                            dist[edge.to] = Some(nd);
                            via[edge.to] = Some(e);
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            if dist[sink].is_none() {
                break;
            }
            let mut push = limit - sent;
            let mut v = sink;
            while v != source {
                let e = via[v].expect("path edge");
                push = push.min(self.edges[e].cap);
                v = self.edges[e ^ 1].to;
            }
            let mut v = sink;
            while v != source {
                let e = via[v].expect("path edge");
                self.edges[e].cap -= push;
                self.edges[e ^ 1].cap += push;
                v = self.edges[e ^ 1].to;
            }
            sent += push;
            total += push as i128 * dist[sink].expect("reachable");
        }
        (sent, total)
    }
}
