//! Earth mover's distance between two small discrete distributions.

/// Mass below this is treated as zero during augmentation.
const FLOW_EPS: f64 = 1e-15;

struct Arc {
    to: usize,
    cap: f64,
    cost: f64,
}

/// Minimum cost of moving `supply` onto `demand` when a unit of mass moved from
/// atom `i` to atom `j` costs `cost(i, j)`. Both sides must carry the same total.
/// Successive shortest paths with Bellman-Ford; the inputs here have a few dozen atoms.
pub(crate) fn transport_cost(supply: &[f64], demand: &[f64], cost: impl Fn(usize, usize) -> f64) -> f64 {
    let (m, n) = (supply.len(), demand.len());
    let source = m + n;
    let sink = source + 1;
    let mut arcs: Vec<Arc> = Vec::new();
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); m + n + 2];
    let mut add = |arcs: &mut Vec<Arc>, from: usize, to: usize, cap: f64, c: f64| {
        out[from].push(arcs.len());
        arcs.push(Arc { to, cap, cost: c });
        out[to].push(arcs.len());
        arcs.push(Arc { to: from, cap: 0.0, cost: -c });
    };
    for (i, &s) in supply.iter().enumerate() {
        add(&mut arcs, source, i, s, 0.0);
        for j in 0..n {
            add(&mut arcs, i, m + j, f64::INFINITY, cost(i, j));
        }
    }
    for (j, &d) in demand.iter().enumerate() {
        add(&mut arcs, m + j, sink, d, 0.0);
    }

    let nodes = m + n + 2;
    let mut total = 0.0;
    loop {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut via = vec![usize::MAX; nodes];
        dist[source] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                if dist[u].is_infinite() {
                    continue;
                }
                for &e in &out[u] {
                    let arc = &arcs[e];
                    if arc.cap > FLOW_EPS && dist[u] + arc.cost < dist[arc.to] - 1e-15 {
                        dist[arc.to] = dist[u] + arc.cost;
                        via[arc.to] = e;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[sink].is_infinite() {
            return total;
        }
        let mut push = f64::INFINITY;
        let mut v = sink;
        while v != source {
            let e = via[v];
            push = push.min(arcs[e].cap);
            v = arcs[e ^ 1].to;
        }
        let mut v = sink;
        while v != source {
            let e = via[v];
            arcs[e].cap -= push;
            arcs[e ^ 1].cap += push;
            v = arcs[e ^ 1].to;
        }
        total += push * dist[sink];
    }
}
