//! Radius-limited nearest-neighbor graphs between pedestrians.

use crate::geom::Vec2;
use std::cmp::Ordering;

/// Neighbor lists per pedestrian, nearest first, with cached distances.
///
/// Pedestrian neighbors index the pedestrian array; obstacle neighbors index
/// the scene's obstacle array.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborGraph {
    pub neighbors: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
    pub obstacles: Vec<Vec<usize>>,
}

fn nearest(origin: Vec2<f64>, skip: Option<usize>, points: &[Vec2<f64>], ids: &[u64], radius: f64, k_max: usize) -> Vec<(usize, f64)> {
    let mut cand: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip)
        .map(|(j, p)| (j, origin.dist(*p)))
        .filter(|(_, d)| *d <= radius)
        .collect();
    cand.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(ids[a.0].cmp(&ids[b.0])));
    cand.truncate(k_max);
    cand
}

/// Pedestrians within `radius` of each other, keeping the `k_max` nearest;
/// equal distances go to the lower id.
pub fn build_neighbor_graph(positions: &[Vec2<f64>], ids: &[u64], radius: f64, k_max: usize) -> NeighborGraph {
    let mut g = NeighborGraph::default();
    for (i, &p) in positions.iter().enumerate() {
        let near = nearest(p, Some(i), positions, ids, radius, k_max);
        g.neighbors.push(near.iter().map(|n| n.0).collect());
        g.distances.push(near.iter().map(|n| n.1).collect());
        g.obstacles.push(Vec::new());
    }
    g
}

impl NeighborGraph {
    /// Adds up to `k_max` obstacle neighbors within `radius` of each pedestrian.
    pub fn with_obstacles(mut self, positions: &[Vec2<f64>], obstacles: &[Vec2<f64>], radius: f64, k_max: usize) -> Self {
        let ids: Vec<u64> = (0..obstacles.len() as u64).collect();
        for (i, &p) in positions.iter().enumerate() {
            self.obstacles[i] = nearest(p, None, obstacles, &ids, radius, k_max).into_iter().map(|n| n.0).collect();
        }
        self
    }

    /// Directed message edges `(receiver, sender)`; obstacle senders are offset by `n_peds`.
    pub fn edges(&self) -> (Vec<usize>, Vec<usize>) {
        let n_peds = self.neighbors.len();
        let mut recv = Vec::new();
        let mut send = Vec::new();
        for i in 0..n_peds {
            for &j in &self.neighbors[i] {
                recv.push(i);
                send.push(j);
            }
            for &o in &self.obstacles[i] {
                recv.push(i);
                send.push(n_peds + o);
            }
        }
        (recv, send)
    }
}
