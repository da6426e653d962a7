use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kinematic tree over skeleton points. The root is its own parent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct SkeletonTopology {
    parent: Vec<usize>,
}

impl SkeletonTopology {
    pub fn new(parent: Vec<usize>) -> Result<Self> {
        let v = parent.len();
        if v == 0 {
            return Err(Error::Validation("topology has no points".into()));
        }
        if let Some(bad) = parent.iter().position(|&p| p >= v) {
            return Err(Error::Validation(format!(
                "point {bad} has parent {} outside 0..{v}",
                parent[bad]
            )));
        }
        let roots = (0..v).filter(|&i| parent[i] == i).count();
        if roots != 1 {
            return Err(Error::Validation(format!("topology has {roots} roots, need exactly 1")));
        }
        // Every chain must hit the root within V steps.
        for start in 0..v {
            let mut cur = start;
            let mut steps = 0;
            while parent[cur] != cur {
                cur = parent[cur];
                steps += 1;
                if steps > v {
                    return Err(Error::Validation(format!("cycle through point {start}")));
                }
            }
        }
        Ok(Self { parent })
    }

    /// Nine-point two-dimensional stick figure:
    /// pelvis, chest, head, left elbow/hand, right elbow/hand, left/right foot.
    pub fn stick_figure() -> Self {
        Self::new(vec![0, 0, 1, 1, 3, 1, 5, 0, 0]).expect("valid built-in topology")
    }

    pub fn points(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self, v: usize) -> usize {
        self.parent[v]
    }

    pub fn parents(&self) -> &[usize] {
        &self.parent
    }

    pub fn root(&self) -> usize {
        (0..self.parent.len())
            .find(|&i| self.parent[i] == i)
            .expect("validated")
    }

    /// `(child, parent)` for every non-root point.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.parent.len())
            .filter(|&i| self.parent[i] != i)
            .map(|i| (i, self.parent[i]))
            .collect()
    }

    /// Points ordered so that every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let depth = |mut v: usize| {
            let mut d = 0;
            while self.parent[v] != v {
                v = self.parent[v];
                d += 1;
            }
            d
        };
        let mut order: Vec<usize> = (0..self.parent.len()).collect();
        order.sort_by_key(|&v| (depth(v), v));
        order
    }
}

impl TryFrom<Vec<usize>> for SkeletonTopology {
    type Error = Error;

    fn try_from(parent: Vec<usize>) -> Result<Self> {
        Self::new(parent)
    }
}

impl From<SkeletonTopology> for Vec<usize> {
    fn from(t: SkeletonTopology) -> Self {
        t.parent
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stick_figure_shape() {
        let t = SkeletonTopology::stick_figure();
        assert_eq!(t.points(), 9);
        assert_eq!(t.root(), 0);
        assert_eq!(t.edges().len(), 8);
        let order = t.topological_order();
        let pos = |v: usize| order.iter().position(|&x| x == v).unwrap();
        for (c, p) in t.edges() {
            assert!(pos(p) < pos(c));
        }
    }

    #[test]
    fn rejects_bad_trees() {
        assert!(SkeletonTopology::new(vec![]).is_err());
        assert!(SkeletonTopology::new(vec![0, 1]).is_err(), "two roots");
        assert!(SkeletonTopology::new(vec![1, 0]).is_err(), "no root");
        assert!(SkeletonTopology::new(vec![0, 2, 1]).is_err(), "cycle");
        assert!(SkeletonTopology::new(vec![0, 5]).is_err(), "out of range");
    }
}
