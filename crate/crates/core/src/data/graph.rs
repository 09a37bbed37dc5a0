use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};

/// Undirected graph over dataset items, stored as sorted neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphStructure {
    adjacency: Vec<Vec<usize>>,
}

impl GraphStructure {
    /// Build from an edge list. Edges are symmetrized, duplicates and
    /// self-loops dropped.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Graph(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            if u == v {
                continue;
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
            nbrs.dedup();
        }
        Ok(Self { adjacency })
    }

    /// Build from explicit neighbor lists, checking range and symmetry.
    pub fn from_adjacency(adjacency: Vec<Vec<usize>>) -> Result<Self> {
        let n = adjacency.len();
        for (u, nbrs) in adjacency.iter().enumerate() {
            for &v in nbrs {
                if v >= n {
                    return Err(Error::Graph(format!("neighbor {v} of node {u} out of range")));
                }
                if !adjacency[v].contains(&u) {
                    return Err(Error::Graph(format!("edge ({u}, {v}) is not symmetric")));
                }
            }
        }
        let mut adjacency = adjacency;
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
            nbrs.dedup();
        }
        Ok(Self { adjacency })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Unique undirected edges with `u < v`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, nbrs)| nbrs.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
            .collect()
    }

    /// Read a `u,v` edge list (0-indexed; a non-numeric first line is
    /// treated as a header).
    pub fn load_edge_list(path: impl AsRef<Path>, num_nodes: usize) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut edges = Vec::new();
        for (row, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(',').map(str::trim);
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse {
                    row,
                    message: format!("expected 'u,v', got '{line}'"),
                });
            };
            match (a.parse::<usize>(), b.parse::<usize>()) {
                (Ok(u), Ok(v)) => edges.push((u, v)),
                _ if row == 0 => continue,
                _ => {
                    return Err(Error::Parse {
                        row,
                        message: format!("non-integer node id in '{line}'"),
                    })
                }
            }
        }
        Self::from_edges(num_nodes, &edges)
    }

    pub fn save_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("u,v\n");
        for (u, v) in self.edges() {
            out.push_str(&format!("{u},{v}\n"));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetrizes_and_dedups() {
        let g = GraphStructure::from_edges(3, &[(0, 1), (1, 0), (1, 2), (2, 2)]).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.neighbors(2), &[1]);
        assert_eq!(g.num_edges(), 2);
    }

    #[test]
    fn rejects_out_of_range_and_asymmetric() {
        assert!(GraphStructure::from_edges(2, &[(0, 2)]).is_err());
        assert!(GraphStructure::from_adjacency(vec![vec![1], vec![]]).is_err());
        assert!(GraphStructure::from_adjacency(vec![vec![1], vec![0]]).is_ok());
    }

    #[test]
    fn edge_list_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.csv");
        let g = GraphStructure::from_edges(4, &[(0, 1), (2, 3), (1, 3)]).unwrap();
        g.save_edge_list(&path).unwrap();
        assert_eq!(GraphStructure::load_edge_list(&path, 4).unwrap(), g);
    }
}
