//! Skeleton topologies and the spatial-configuration partition of their adjacency.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Degree offset that keeps empty rows invertible during normalization.
pub const DEFAULT_ALPHA: f64 = 0.001;

/// NTU RGB+D 25-joint skeleton, 1-based pairs in the ST-GCN convention.
const NTU25_EDGES: [(usize, usize); 24] = [
    (1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7),
    (9, 21), (10, 9), (11, 10), (12, 11), (13, 1), (14, 13), (15, 14), (16, 15),
    (17, 1), (18, 17), (19, 18), (20, 19), (22, 23), (23, 8), (24, 25), (25, 12),
];
/// 1-based spine joint.
const NTU25_CENTER: usize = 21;

/// OpenPose 18-keypoint skeleton used by Kinetics-Skeleton, 0-based.
const KINETICS18_EDGES: [(usize, usize); 17] = [
    (4, 3), (3, 2), (7, 6), (6, 5), (13, 12), (12, 11), (10, 9), (9, 8), (11, 5),
    (8, 2), (5, 1), (2, 1), (0, 1), (15, 0), (14, 0), (17, 15), (16, 14),
];
/// Neck.
const KINETICS18_CENTER: usize = 1;

/// Named skeleton layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TopologyKind {
    Ntu25,
    Kinetics18,
    /// Path `0 – 1 – … – (V−1)` centered at joint 0.
    Chain(usize),
    /// Joint 0 connected to every other joint.
    Star(usize),
}

impl TopologyKind {
    pub fn num_joints(self) -> usize {
        match self {
            TopologyKind::Ntu25 => 25,
            TopologyKind::Kinetics18 => 18,
            TopologyKind::Chain(v) | TopologyKind::Star(v) => v,
        }
    }

    /// Numeric tag stored in dataset headers.
    pub fn code(self) -> u32 {
        match self {
            TopologyKind::Ntu25 => 1,
            TopologyKind::Kinetics18 => 2,
            TopologyKind::Chain(v) => 0x1_0000 | v as u32,
            TopologyKind::Star(v) => 0x2_0000 | v as u32,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        let v = (code & 0xFFFF) as usize;
        match code >> 16 {
            0 if code == 1 => Ok(TopologyKind::Ntu25),
            0 if code == 2 => Ok(TopologyKind::Kinetics18),
            1 if v > 0 => Ok(TopologyKind::Chain(v)),
            2 if v > 0 => Ok(TopologyKind::Star(v)),
            _ => Err(Error::Config(format!("unknown topology code {code:#x}"))),
        }
    }

    pub fn build(self) -> Result<SkeletonTopology> {
        SkeletonTopology::build(self)
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyKind::Ntu25 => f.write_str("ntu25"),
            TopologyKind::Kinetics18 => f.write_str("kinetics18"),
            TopologyKind::Chain(v) => write!(f, "chain:{v}"),
            TopologyKind::Star(v) => write!(f, "star:{v}"),
        }
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse_v = |v: &str| -> Result<usize> {
            match v.parse::<usize>() {
                Ok(n) if (1..=0xFFFF).contains(&n) => Ok(n),
                _ => Err(Error::Config(format!("invalid joint count in topology {s:?}"))),
            }
        };
        match s {
            "ntu25" => Ok(TopologyKind::Ntu25),
            "kinetics18" => Ok(TopologyKind::Kinetics18),
            _ => match s.split_once(':') {
                Some(("chain", v)) => Ok(TopologyKind::Chain(parse_v(v)?)),
                Some(("star", v)) => Ok(TopologyKind::Star(parse_v(v)?)),
                _ => Err(Error::Config(format!(
                    "unknown topology {s:?} (expected ntu25, kinetics18, chain:<V> or star:<V>)"
                ))),
            },
        }
    }
}

impl Serialize for TopologyKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TopologyKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A connected, undirected skeleton graph with a designated center joint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkeletonTopology {
    num_joints: usize,
    edges: Vec<(usize, usize)>,
    center: usize,
}

impl SkeletonTopology {
    /// Validates indices, rejects self-loops and requires connectivity.
    pub fn new(num_joints: usize, edges: Vec<(usize, usize)>, center: usize) -> Result<Self> {
        if num_joints == 0 {
            return Err(Error::Topology("a skeleton needs at least one joint".into()));
        }
        if center >= num_joints {
            return Err(Error::Topology(format!(
                "center joint {center} out of range for {num_joints} joints"
            )));
        }
        for &(a, b) in &edges {
            if a >= num_joints || b >= num_joints {
                return Err(Error::Topology(format!(
                    "edge ({a}, {b}) references a joint outside 0..{num_joints}"
                )));
            }
            if a == b {
                return Err(Error::Topology(format!("self-loop on joint {a}")));
            }
        }
        let topo = SkeletonTopology {
            num_joints,
            edges,
            center,
        };
        topo.hop_distances()?;
        Ok(topo)
    }

    pub fn build(kind: TopologyKind) -> Result<Self> {
        match kind {
            TopologyKind::Ntu25 => Self::new(
                25,
                NTU25_EDGES.iter().map(|&(a, b)| (a - 1, b - 1)).collect(),
                NTU25_CENTER - 1,
            ),
            TopologyKind::Kinetics18 => {
                Self::new(18, KINETICS18_EDGES.to_vec(), KINETICS18_CENTER)
            }
            TopologyKind::Chain(v) => Self::new(v, (1..v).map(|i| (i - 1, i)).collect(), 0),
            TopologyKind::Star(v) => Self::new(v, (1..v).map(|i| (0, i)).collect(), 0),
        }
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn center(&self) -> usize {
        self.center
    }

    /// Symmetric 0/1 adjacency without self-loops.
    pub fn adjacency(&self) -> Tensor<f64> {
        let v = self.num_joints;
        let mut a = Tensor::zeros(&[v, v]);
        for &(i, j) in &self.edges {
            a.set(&[i, j], 1.0);
            a.set(&[j, i], 1.0);
        }
        a
    }

    fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.num_joints];
        for &(a, b) in &self.edges {
            nb[a].push(b);
            nb[b].push(a);
        }
        nb
    }

    /// All-pairs shortest-path lengths by breadth-first search.
    pub fn hop_distances(&self) -> Result<HopDistances> {
        let v = self.num_joints;
        let nb = self.neighbors();
        let mut dist = vec![vec![usize::MAX; v]; v];
        for (src, row) in dist.iter_mut().enumerate() {
            row[src] = 0;
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                for &w in &nb[u] {
                    if row[w] == usize::MAX {
                        row[w] = row[u] + 1;
                        queue.push_back(w);
                    }
                }
            }
        }
        let unreachable: Vec<usize> = (0..v).filter(|&j| dist[0][j] == usize::MAX).collect();
        if !unreachable.is_empty() {
            return Err(Error::Topology(format!(
                "graph is disconnected; joints {unreachable:?} are unreachable from joint 0"
            )));
        }
        Ok(HopDistances { dist })
    }

    /// For every joint, the adjacent joint one hop closer to the center
    /// (lowest index on ties); `None` for the center itself.
    pub fn parents(&self) -> Result<Vec<Option<usize>>> {
        let hops = self.hop_distances()?;
        let nb = self.neighbors();
        let c = self.center;
        Ok((0..self.num_joints)
            .map(|j| {
                let d = hops.get(j, c);
                (d > 0).then(|| {
                    *nb[j]
                        .iter()
                        .filter(|&&p| hops.get(p, c) + 1 == d)
                        .min()
                        .expect("a non-center joint has a neighbor closer to the center")
                })
            })
            .collect())
    }
}

/// Shortest-path hop counts between all joint pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HopDistances {
    dist: Vec<Vec<usize>>,
}

impl HopDistances {
    pub fn get(&self, i: usize, j: usize) -> usize {
        self.dist[i][j]
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.dist
    }
}

/// Neighbor subsets of the spatial-configuration partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subset {
    Root,
    Centripetal,
    Centrifugal,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Root, Subset::Centripetal, Subset::Centrifugal];

    pub fn name(self) -> &'static str {
        match self {
            Subset::Root => "root",
            Subset::Centripetal => "centripetal",
            Subset::Centrifugal => "centrifugal",
        }
    }
}

/// Splits the 1-hop neighborhood (self included) of every root joint into
/// root / centripetal / centrifugal 0-1 matrices.
///
/// Entry `(j, i)` marks neighbor `j` of root `i`, so right-multiplying
/// features by a subset matrix aggregates neighbors into their root.
/// Neighbors as far from the center as the root join the root subset.
pub fn partition_spatial(topo: &SkeletonTopology, hops: &HopDistances) -> [Tensor<f64>; 3] {
    let v = topo.num_joints();
    let c = topo.center();
    let mut subsets = [Tensor::zeros(&[v, v]), Tensor::zeros(&[v, v]), Tensor::zeros(&[v, v])];
    for i in 0..v {
        for j in 0..v {
            if hops.get(i, j) > 1 {
                continue;
            }
            let (dj, di) = (hops.get(j, c), hops.get(i, c));
            let p = if j == i || dj == di {
                0
            } else if dj < di {
                1
            } else {
                2
            };
            subsets[p].set(&[j, i], 1.0);
        }
    }
    subsets
}

/// Degree normalization variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `D^{-1/2} A D^{+1/2}`.
    #[default]
    AsPrinted,
    /// `D^{-1/2} A D^{-1/2}`.
    Symmetric,
}

/// Scales `a` by its row degrees `d_i = Σ_j a_ij + alpha`.
pub fn normalize_adjacency(a: &Tensor<f64>, alpha: f64, variant: Normalization) -> Tensor<f64> {
    let v = a.shape()[0];
    let deg: Vec<f64> = a.data().chunks(v).map(|row| row.iter().sum::<f64>() + alpha).collect();
    let right_exp = match variant {
        Normalization::AsPrinted => 0.5,
        Normalization::Symmetric => -0.5,
    };
    Tensor::from_fn(&[v, v], |ix| {
        let (i, j) = (ix[0], ix[1]);
        deg[i].powf(-0.5) * a.at(&[i, j]) * deg[j].powf(right_exp)
    })
}

/// The three normalized subset adjacencies of a topology.
#[derive(Clone, Debug)]
pub struct PartitionedAdjacency {
    raw: [Tensor<f64>; 3],
    normalized: [Tensor<f64>; 3],
    pub alpha: f64,
    pub normalization: Normalization,
}

impl PartitionedAdjacency {
    pub fn new(topo: &SkeletonTopology, normalization: Normalization) -> Result<Self> {
        Self::with_alpha(topo, normalization, DEFAULT_ALPHA)
    }

    pub fn with_alpha(topo: &SkeletonTopology, normalization: Normalization, alpha: f64) -> Result<Self> {
        let hops = topo.hop_distances()?;
        let raw = partition_spatial(topo, &hops);
        let normalized = raw
            .clone()
            .map(|a| normalize_adjacency(&a, alpha, normalization));
        Ok(PartitionedAdjacency {
            raw,
            normalized,
            alpha,
            normalization,
        })
    }

    pub fn num_joints(&self) -> usize {
        self.raw[0].shape()[0]
    }

    pub fn raw(&self, subset: Subset) -> &Tensor<f64> {
        &self.raw[subset as usize]
    }

    pub fn normalized(&self, subset: Subset) -> &Tensor<f64> {
        &self.normalized[subset as usize]
    }

    pub fn normalized_as<F: Real>(&self, subset: Subset) -> Tensor<F> {
        self.normalized(subset).cast()
    }
}
