//! Vascular graph extraction: skeleton → nodes and branches → radius profiles.

mod edt;
mod skeleton;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{offset, N26};
use crate::volume::Volume;

pub use edt::squared_edt;
pub use skeleton::skeletonize;

pub type Voxel = [usize; 3];

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

/// Default dangling-branch threshold, in multiples of the junction radius.
pub const DEFAULT_PRUNE_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub pos: Voxel,
    pub degree: usize,
    /// Distance-transform radius at `pos`, once radii have been estimated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Skeleton voxels merged into this node (a single voxel for endpoints).
    #[serde(skip)]
    pub voxels: Vec<Voxel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    pub ends: [Option<usize>; 2],
    /// Interior centerline voxels, ordered from `ends[0]` to `ends[1]`.
    pub path: Vec<Voxel>,
    #[serde(default)]
    pub radii: Vec<f64>,
}

impl Branch {
    pub fn touches(&self, node: usize) -> bool {
        self.ends.contains(&Some(node))
    }

    /// Number of voxel steps covered, counting the path plus one step into
    /// each attached node.
    pub fn voxel_length(&self) -> usize {
        self.path.len() + self.ends.iter().filter(|e| e.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VascularGraph {
    #[serde(default = "graph_schema_version")]
    pub schema_version: u32,
    pub nodes: Vec<Node>,
    pub branches: Vec<Branch>,
}

fn graph_schema_version() -> u32 {
    GRAPH_SCHEMA_VERSION
}

/// A degree-3 node split into mother and daughter branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationSite {
    pub node_id: usize,
    pub mother_branch_id: usize,
    pub daughter_branch_ids: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

fn scan_key(p: &Voxel) -> (usize, usize, usize) {
    (p[2], p[1], p[0])
}

fn neighbors(p: Voxel) -> impl Iterator<Item = [i64; 3]> {
    N26.iter().map(move |&d| offset(p, d))
}

fn to_voxel(q: [i64; 3]) -> Voxel {
    [q[0] as usize, q[1] as usize, q[2] as usize]
}

impl VascularGraph {
    pub fn empty() -> Self {
        Self {
            schema_version: GRAPH_SCHEMA_VERSION,
            nodes: Vec::new(),
            branches: Vec::new(),
        }
    }

    pub fn node(&self, id: usize) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn branch(&self, id: usize) -> Option<&Branch> {
        self.branches.iter().find(|b| b.id == id)
    }

    pub fn incident_branches(&self, node: usize) -> impl Iterator<Item = &Branch> {
        self.branches.iter().filter(move |b| b.touches(node))
    }

    pub fn nodes_with_degree(&self, degree: usize) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(move |n| n.degree == degree)
    }

    /// Centerline of a branch including the positions of its end nodes.
    pub fn polyline(&self, branch: &Branch) -> Vec<Voxel> {
        let mut pts = Vec::with_capacity(branch.path.len() + 2);
        if let Some(n) = branch.ends[0].and_then(|id| self.node(id)) {
            pts.push(n.pos);
        }
        pts.extend_from_slice(&branch.path);
        if let Some(n) = branch.ends[1].and_then(|id| self.node(id)) {
            pts.push(n.pos);
        }
        pts
    }

    /// Radii matching [`polyline`](Self::polyline). End nodes contribute
    /// their own radius, falling back to the adjacent path radius.
    pub fn polyline_radii(&self, branch: &Branch) -> Vec<f64> {
        let mut path_radii = branch.radii.clone();
        path_radii.resize(branch.path.len(), 1.0);
        let end_radius = |end: Option<usize>, near: Option<f64>| {
            end.and_then(|id| self.node(id))
                .map(|n| n.radius.or(near).unwrap_or(1.0))
        };
        let mut out = Vec::with_capacity(path_radii.len() + 2);
        out.extend(end_radius(branch.ends[0], path_radii.first().copied()));
        out.extend_from_slice(&path_radii);
        out.extend(end_radius(branch.ends[1], path_radii.last().copied()));
        out
    }

    /// Number of connected components (nodes joined by branches).
    pub fn component_count(&self) -> usize {
        let ids: BTreeMap<usize, usize> = self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let mut parent: Vec<usize> = (0..self.nodes.len()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let mut loose = 0;
        for b in &self.branches {
            match (b.ends[0].and_then(|e| ids.get(&e)), b.ends[1].and_then(|e| ids.get(&e))) {
                (Some(&a), Some(&c)) => {
                    let (ra, rc) = (find(&mut parent, a), find(&mut parent, c));
                    parent[ra] = rc;
                }
                (None, None) => loose += 1,
                _ => {}
            }
        }
        let roots: BTreeSet<usize> = (0..self.nodes.len()).map(|i| find(&mut parent, i)).collect();
        roots.len() + loose
    }

    /// Recomputes degrees, renumbers nodes in (z, y, x) scan order of their
    /// positions, orients every branch from the lower node id, and sorts
    /// branches.
    fn canonicalize(&mut self) {
        self.nodes.sort_by_key(|n| scan_key(&n.pos));
        let remap: HashMap<usize, usize> =
            self.nodes.iter().enumerate().map(|(new, n)| (n.id, new)).collect();
        for (new, n) in self.nodes.iter_mut().enumerate() {
            n.id = new;
        }
        for b in &mut self.branches {
            for e in b.ends.iter_mut() {
                *e = e.map(|id| remap[&id]);
            }
            let flip = match b.ends {
                [Some(a), Some(c)] => a > c || (a == c && b.path.first() > b.path.last()),
                [None, Some(_)] => true,
                _ => false,
            };
            if flip {
                b.ends.swap(0, 1);
                b.path.reverse();
                b.radii.reverse();
            }
        }
        self.branches.sort_by(|a, b| {
            let key = |x: &Branch| (x.ends, x.path.first().map(scan_key), x.path.len());
            key(a).cmp(&key(b))
        });
        for (i, b) in self.branches.iter_mut().enumerate() {
            b.id = i;
        }
        for n in &mut self.nodes {
            n.degree = 0;
        }
        for b in &self.branches {
            for e in b.ends.iter().flatten() {
                self.nodes[*e].degree += 1;
            }
        }
    }
}

fn check_thin(skeleton: &Volume) -> Result<()> {
    let [nx, ny, nz] = skeleton.dims();
    if nx < 2 || ny < 2 || nz < 2 {
        return Ok(());
    }
    for z in 0..nz - 1 {
        for y in 0..ny - 1 {
            for x in 0..nx - 1 {
                let solid = (0..8).all(|k| skeleton.get(x + (k & 1), y + ((k >> 1) & 1), z + (k >> 2)) != 0.0);
                if solid {
                    return Err(Error::Thinness([x, y, z]));
                }
            }
        }
    }
    Ok(())
}

/// Converts a one-voxel-thick skeleton into a graph. Every skeleton voxel ends
/// up in exactly one branch path or one node.
pub fn build_graph(skeleton: &Volume) -> Result<VascularGraph> {
    skeleton.ensure_binary("build_graph")?;
    check_thin(skeleton)?;
    let voxels = skeleton.nonzero_coords();
    let is_set = |q: [i64; 3]| skeleton.get_signed(q).is_some_and(|v| v != 0.0);
    let degree_of = |p: Voxel| neighbors(p).filter(|&q| is_set(q)).count();

    // node_of[voxel] = provisional node index
    let mut node_of: HashMap<Voxel, usize> = HashMap::new();
    let mut nodes: Vec<Node> = Vec::new();
    let mut junction: BTreeSet<Voxel> = BTreeSet::new();
    for &p in &voxels {
        match degree_of(p) {
            2 => {}
            0 | 1 => {
                node_of.insert(p, nodes.len());
                nodes.push(Node {
                    id: nodes.len(),
                    pos: p,
                    degree: 0,
                    radius: None,
                    voxels: vec![p],
                });
            }
            _ => {
                junction.insert(p);
            }
        }
    }
    // Merge 26-adjacent junction voxels into clusters.
    let mut seen: BTreeSet<Voxel> = BTreeSet::new();
    for &start in &junction {
        if !seen.insert(start) {
            continue;
        }
        let mut cluster = vec![start];
        let mut i = 0;
        while i < cluster.len() {
            let p = cluster[i];
            for q in neighbors(p) {
                if is_set(q) {
                    let v = to_voxel(q);
                    if junction.contains(&v) && seen.insert(v) {
                        cluster.push(v);
                    }
                }
            }
            i += 1;
        }
        cluster.sort_by_key(scan_key);
        let n = cluster.len() as f64;
        let centroid: Vec<f64> = (0..3)
            .map(|a| cluster.iter().map(|p| p[a] as f64).sum::<f64>() / n)
            .collect();
        let pos = *cluster
            .iter()
            .min_by(|a, b| {
                let d = |p: &Voxel| (0..3).map(|k| (p[k] as f64 - centroid[k]).powi(2)).sum::<f64>();
                d(a).partial_cmp(&d(b)).unwrap()
            })
            .unwrap();
        let id = nodes.len();
        for &v in &cluster {
            node_of.insert(v, id);
        }
        nodes.push(Node {
            id,
            pos,
            degree: 0,
            radius: None,
            voxels: cluster,
        });
    }

    let mut branches: Vec<Branch> = Vec::new();
    let mut on_path: BTreeSet<Voxel> = BTreeSet::new();
    let mut direct: BTreeSet<(usize, usize)> = BTreeSet::new();

    let walk = |start_node: usize,
                from: Voxel,
                first: Voxel,
                node_of: &HashMap<Voxel, usize>,
                on_path: &mut BTreeSet<Voxel>|
     -> Branch {
        let mut path = vec![first];
        on_path.insert(first);
        let (mut prev, mut cur) = (from, first);
        let mut back_to_start = false;
        let end = loop {
            let mut next_node = None;
            let mut next_free = None;
            for q in neighbors(cur) {
                if !is_set(q) {
                    continue;
                }
                let v = to_voxel(q);
                if v == prev {
                    continue;
                }
                if let Some(&n) = node_of.get(&v) {
                    if n != start_node || path.len() > 1 {
                        next_node.get_or_insert(n);
                    } else {
                        back_to_start = true;
                    }
                } else if !on_path.contains(&v) {
                    next_free.get_or_insert(v);
                }
            }
            if let Some(v) = next_free {
                path.push(v);
                on_path.insert(v);
                prev = cur;
                cur = v;
            } else {
                break next_node.or(back_to_start.then_some(start_node));
            }
        };
        Branch {
            id: 0,
            ends: [Some(start_node), end],
            path,
            radii: Vec::new(),
        }
    };

    for n in 0..nodes.len() {
        let members = nodes[n].voxels.clone();
        for &m in &members {
            for q in neighbors(m) {
                if !is_set(q) {
                    continue;
                }
                let v = to_voxel(q);
                match node_of.get(&v) {
                    Some(&other) if other == n => {}
                    Some(&other) => {
                        let key = (n.min(other), n.max(other));
                        if direct.insert(key) {
                            branches.push(Branch {
                                id: 0,
                                ends: [Some(key.0), Some(key.1)],
                                path: Vec::new(),
                                radii: Vec::new(),
                            });
                        }
                    }
                    None if !on_path.contains(&v) => {
                        let b = walk(n, m, v, &node_of, &mut on_path);
                        branches.push(b);
                    }
                    None => {}
                }
            }
        }
    }
    // Pure cycles: no endpoint or junction anywhere on them.
    for &p in &voxels {
        if node_of.contains_key(&p) || on_path.contains(&p) {
            continue;
        }
        let id = nodes.len();
        node_of.insert(p, id);
        nodes.push(Node {
            id,
            pos: p,
            degree: 0,
            radius: None,
            voxels: vec![p],
        });
        let first = neighbors(p)
            .filter(|&q| is_set(q))
            .map(to_voxel)
            .find(|v| !on_path.contains(v) && !node_of.contains_key(v));
        if let Some(first) = first {
            let mut b = walk(id, p, first, &node_of, &mut on_path);
            if b.ends[1].is_none() {
                b.ends[1] = Some(id);
            }
            branches.push(b);
        }
    }

    // Tiny self-loops are corner voxels hugging a junction cluster; they
    // belong to the node rather than forming a branch.
    branches.retain(|b| {
        if b.ends[0] == b.ends[1] && b.path.len() <= 2 {
            if let Some(n) = b.ends[0] {
                nodes[n].voxels.extend_from_slice(&b.path);
            }
            false
        } else {
            true
        }
    });

    let mut graph = VascularGraph {
        schema_version: GRAPH_SCHEMA_VERSION,
        nodes,
        branches,
    };
    graph.canonicalize();
    Ok(graph)
}

/// Samples the Euclidean distance transform of `mask` along every branch
/// path (and at every node position), taking the largest value in each
/// point's 26-neighborhood.
pub fn estimate_radii(mask: &Volume, graph: &VascularGraph) -> Result<VascularGraph> {
    mask.ensure_binary("estimate_radii")?;
    let d2 = squared_edt(mask);
    let [nx, ny, nz] = mask.dims();
    let cap = 0.5 * ((nx * nx + ny * ny + nz * nz) as f64).sqrt();
    let radius_at = |p: Voxel, what: &str| -> Result<f64> {
        if (0..3).any(|a| p[a] >= mask.dims()[a]) {
            return Err(Error::Consistency(format!("{what} voxel {p:?} lies outside the mask grid")));
        }
        let i = mask.index(p[0], p[1], p[2]);
        if mask.data()[i] == 0.0 {
            return Err(Error::Consistency(format!("{what} voxel {p:?} is outside the mask foreground")));
        }
        // Thinning can leave the centerline up to a voxel off the medial
        // ridge, so take the ridge value from the 26-neighborhood.
        let ridge = N26
            .iter()
            .filter_map(|&d| mask.get_signed(offset(p, d)).filter(|&v| v != 0.0).map(|_| offset(p, d)))
            .map(|q| d2[mask.index(q[0] as usize, q[1] as usize, q[2] as usize)])
            .fold(d2[i], f64::max);
        Ok(ridge.sqrt().min(cap))
    };
    let mut out = graph.clone();
    for b in &mut out.branches {
        b.radii = b
            .path
            .iter()
            .map(|&p| radius_at(p, "branch path"))
            .collect::<Result<_>>()?;
    }
    for n in &mut out.nodes {
        n.radius = Some(radius_at(n.pos, "node")?);
    }
    Ok(out)
}

fn junction_radius(graph: &VascularGraph, node: &Node) -> f64 {
    if let Some(r) = node.radius {
        return r;
    }
    graph
        .incident_branches(node.id)
        .filter_map(|b| {
            if b.ends[0] == Some(node.id) {
                b.radii.first().copied()
            } else {
                b.radii.last().copied()
            }
        })
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))))
        .unwrap_or(1.0)
}

/// Removes dangling branches shorter than `min_len_factor` times the radius
/// at the junction they hang from, then merges junctions left with exactly
/// two branches. Repeats until nothing changes.
pub fn prune_spurs(graph: &VascularGraph, min_len_factor: f64) -> Result<VascularGraph> {
    if !(min_len_factor >= 0.0 && min_len_factor.is_finite()) {
        return Err(Error::Parameter(format!(
            "prune factor must be a finite value >= 0, got {min_len_factor}"
        )));
    }
    let mut g = graph.clone();
    if min_len_factor == 0.0 {
        return Ok(g);
    }
    loop {
        let degree: HashMap<usize, usize> = g.nodes.iter().map(|n| (n.id, n.degree)).collect();
        let mut doomed: BTreeSet<usize> = BTreeSet::new();
        for node in g.nodes.iter().filter(|n| n.degree >= 3) {
            let limit = min_len_factor * junction_radius(&g, node);
            let incident: Vec<&Branch> = g.incident_branches(node.id).collect();
            let mut spurs: Vec<&Branch> = incident
                .iter()
                .copied()
                .filter(|b| {
                    let other = if b.ends[0] == Some(node.id) { b.ends[1] } else { b.ends[0] };
                    let dangling = match other {
                        Some(o) => o != node.id && degree.get(&o) == Some(&1),
                        None => true,
                    };
                    dangling && (b.voxel_length() as f64) < limit
                })
                .collect();
            if spurs.len() == incident.len() {
                // Keep the longest branch so the junction never becomes isolated.
                spurs.sort_by_key(|b| (std::cmp::Reverse(b.voxel_length()), b.id));
                spurs.remove(0);
            }
            doomed.extend(spurs.iter().map(|b| b.id));
        }
        if doomed.is_empty() {
            break;
        }
        let removed_nodes: BTreeSet<usize> = g
            .branches
            .iter()
            .filter(|b| doomed.contains(&b.id))
            .flat_map(|b| b.ends.iter().flatten().copied())
            .filter(|n| degree.get(n) == Some(&1))
            .collect();
        g.branches.retain(|b| !doomed.contains(&b.id));
        g.nodes.retain(|n| !removed_nodes.contains(&n.id));
        g.canonicalize();
        merge_degree_two(&mut g);
        g.canonicalize();
    }
    Ok(g)
}

/// Joins the two branches meeting at every degree-2 node that is not a
/// self-loop anchor.
fn merge_degree_two(g: &mut VascularGraph) {
    loop {
        let Some(node) = g
            .nodes
            .iter()
            .find(|n| {
                n.degree == 2 && g.incident_branches(n.id).count() == 2
            })
            .cloned()
        else {
            return;
        };
        let ids: Vec<usize> = g.incident_branches(node.id).map(|b| b.id).collect();
        let take = |g: &mut VascularGraph, id: usize| {
            let i = g.branches.iter().position(|b| b.id == id).unwrap();
            g.branches.remove(i)
        };
        let mut a = take(g, ids[0]);
        let mut b = take(g, ids[1]);
        // Orient a to end at node, b to start at node.
        if a.ends[1] != Some(node.id) {
            a.ends.swap(0, 1);
            a.path.reverse();
            a.radii.reverse();
        }
        if b.ends[0] != Some(node.id) {
            b.ends.swap(0, 1);
            b.path.reverse();
            b.radii.reverse();
        }
        let has_radii = a.radii.len() == a.path.len() && b.radii.len() == b.path.len() && node.radius.is_some();
        let mut path = a.path;
        path.push(node.pos);
        path.extend(b.path);
        let radii = if has_radii {
            let mut r = a.radii;
            r.push(node.radius.unwrap());
            r.extend(b.radii);
            r
        } else {
            Vec::new()
        };
        g.nodes.retain(|n| n.id != node.id);
        g.branches.push(Branch {
            id: usize::MAX,
            ends: [a.ends[0], b.ends[1]],
            path,
            radii,
        });
        g.canonicalize();
    }
}

/// Splits a degree-3 node into mother (largest mean radius over the five path
/// points nearest the node) and daughters. Ties go to the lowest branch id.
pub fn select_bifurcation(graph: &VascularGraph, node_id: usize) -> Result<BifurcationSite> {
    let node = graph
        .node(node_id)
        .ok_or_else(|| Error::Consistency(format!("no node with id {node_id}")))?;
    let incident: Vec<&Branch> = graph.incident_branches(node_id).collect();
    if node.degree != 3 || incident.len() != 3 {
        return Err(Error::NotABifurcation {
            node: node_id,
            degree: node.degree,
        });
    }
    let near_mean = |b: &Branch| -> f64 {
        let r = &b.radii;
        if r.is_empty() {
            return 0.0;
        }
        let k = r.len().min(5);
        let slice = if b.ends[0] == Some(node_id) { &r[..k] } else { &r[r.len() - k..] };
        slice.iter().sum::<f64>() / k as f64
    };
    let mut ranked: Vec<(f64, usize)> = incident.iter().map(|b| (near_mean(b), b.id)).collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mother = ranked[0].1;
    let mut daughters: Vec<usize> = ranked[1..].iter().map(|x| x.1).collect();
    daughters.sort_unstable();
    Ok(BifurcationSite {
        node_id,
        mother_branch_id: mother,
        daughter_branch_ids: [daughters[0], daughters[1]],
        label: None,
    })
}

/// Full extraction chain on a binary mask: thinning, graph construction,
/// radius estimation and spur pruning with [`DEFAULT_PRUNE_FACTOR`].
pub fn extract_graph(mask: &Volume) -> Result<VascularGraph> {
    mask.ensure_binary("extract_graph")?;
    let skeleton = skeletonize(mask)?;
    let graph = build_graph(&skeleton)?;
    let graph = estimate_radii(mask, &graph)?;
    prune_spurs(&graph, DEFAULT_PRUNE_FACTOR)
}
