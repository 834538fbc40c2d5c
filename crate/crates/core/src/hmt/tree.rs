use crate::error::{Error, Result};
use crate::pyramid::WaveletQuadTree;

/// Observation forest for the HMT recursions.
///
/// Nodes are stored level by level (roots first) so that a reverse sweep is an
/// upward pass and a forward sweep is a downward pass. Every root sits at
/// level 0 and every other node is one level below its parent.
#[derive(Debug, Clone, PartialEq)]
pub struct HmtTree {
    parent: Vec<Option<usize>>,
    level_start: Vec<usize>,
    child_start: Vec<usize>,
    child_list: Vec<usize>,
    obs: Vec<[f64; 3]>,
}

impl HmtTree {
    /// Build from a parent array. Parents must precede their children and
    /// node levels must be non-decreasing in index order.
    pub fn new(parent: Vec<Option<usize>>, obs: Vec<[f64; 3]>) -> Result<Self> {
        let n = parent.len();
        if n == 0 {
            return Err(Error::InvalidTree("no nodes".into()));
        }
        if obs.len() != n {
            return Err(Error::InvalidTree(format!(
                "{} observations for {n} nodes",
                obs.len()
            )));
        }
        let mut level = vec![0usize; n];
        let mut level_start = vec![0];
        for i in 0..n {
            if let Some(p) = parent[i] {
                if p >= i {
                    return Err(Error::InvalidTree(format!(
                        "node {i} has parent {p}, which does not precede it"
                    )));
                }
                level[i] = level[p] + 1;
            }
            if i > 0 {
                match level[i].checked_sub(level[i - 1]) {
                    Some(0) => {}
                    Some(1) => level_start.push(i),
                    _ => {
                        return Err(Error::InvalidTree(format!(
                            "node {i} breaks level ordering"
                        )))
                    }
                }
            }
        }
        level_start.push(n);

        let mut counts = vec![0usize; n + 1];
        for p in parent.iter().flatten() {
            counts[*p + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let child_start = counts.clone();
        let mut fill = counts;
        let mut child_list = vec![0; child_start[n]];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                child_list[fill[p]] = i;
                fill[p] += 1;
            }
        }
        Ok(HmtTree {
            parent,
            level_start,
            child_start,
            child_list,
            obs,
        })
    }

    /// Flatten a wavelet quad-tree: level-major, row-major within a level.
    pub fn from_quadtree(tree: &WaveletQuadTree) -> Self {
        let mut parent = Vec::with_capacity(tree.node_count());
        let mut obs = Vec::with_capacity(tree.node_count());
        let mut offset_prev = 0;
        let mut offset = 0;
        for l in 0..tree.scales() {
            let side = tree.level_side(l);
            for r in 0..side {
                for c in 0..side {
                    parent.push(
                        tree.parent(l, r, c)
                            .map(|(pr, pc)| offset_prev + pr * (side / 2) + pc),
                    );
                }
            }
            obs.extend_from_slice(tree.level(l));
            offset_prev = offset;
            offset += side * side;
        }
        Self::new(parent, obs).expect("quad-tree layout is level ordered")
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// Number of levels.
    pub fn depth(&self) -> usize {
        self.level_start.len() - 1
    }

    pub fn level_range(&self, level: usize) -> std::ops::Range<usize> {
        self.level_start[level]..self.level_start[level + 1]
    }

    pub fn level_of(&self, node: usize) -> usize {
        self.level_start.partition_point(|&s| s <= node) - 1
    }

    pub fn roots(&self) -> std::ops::Range<usize> {
        self.level_range(0)
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.child_list[self.child_start[node]..self.child_start[node + 1]]
    }

    pub fn observation(&self, node: usize) -> &[f64; 3] {
        &self.obs[node]
    }

    pub fn observations(&self) -> &[[f64; 3]] {
        &self.obs
    }

    /// Same topology with new observations.
    pub fn with_observations(&self, obs: Vec<[f64; 3]>) -> Result<Self> {
        if obs.len() != self.len() {
            return Err(Error::InvalidTree(format!(
                "{} observations for {} nodes",
                obs.len(),
                self.len()
            )));
        }
        Ok(HmtTree {
            obs,
            ..self.clone()
        })
    }
}

impl From<&WaveletQuadTree> for HmtTree {
    fn from(tree: &WaveletQuadTree) -> Self {
        HmtTree::from_quadtree(tree)
    }
}
