//! Time-frequency graph over averaged lattice covariances.
//!
//! Nodes are grouped into band components (theta, mu, beta, gamma). Inside a
//! component with `w` windows per frequency row, node `i` (row `i / w`,
//! position `p = i % w`) links forward in time to `i+1 ..= i+T` with
//! `T = min(w - p - 1, x)`, and up in frequency to `i + w*y ..= i + w*y + T`
//! when that target still lies inside the component. Components never
//! connect to each other, so the adjacency is block diagonal.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{BandGroup, NodeMeta, TfStack};
use crate::spd::{airm_distance, SpdMatrix};

/// Averaged per-node covariances of a training set.
#[derive(Clone, Debug)]
pub struct LatticeVector {
    pub nodes: Vec<SpdMatrix>,
    pub meta: Vec<NodeMeta>,
}

impl LatticeVector {
    /// Arithmetic mean over all trials of the stack, node by node.
    pub fn from_stack(stack: &TfStack) -> Result<Self> {
        let all: Vec<usize> = (0..stack.n_trials()).collect();
        Self::from_trials(stack, &all)
    }

    /// Arithmetic mean over the given trials only.
    pub fn from_trials(stack: &TfStack, trials: &[usize]) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::InvalidParameter("lattice needs at least one training trial".into()));
        }
        let n_nodes = stack.n_nodes();
        let inv = 1.0 / trials.len() as f64;
        let nodes = (0..n_nodes)
            .map(|i| {
                let mut acc = stack.matrices[trials[0]][i].as_matrix().clone();
                for &t in &trials[1..] {
                    acc += stack.matrices[t][i].as_matrix();
                }
                SpdMatrix::new(acc * inv)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            nodes,
            meta: stack.node_meta.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].dim()
    }
}

/// Forward steps per band component, indexed theta, mu, beta, gamma.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDirections {
    pub time: [usize; 4],
    pub freq: [usize; 4],
}

impl GraphDirections {
    pub fn new(time: [usize; 4], freq: [usize; 4]) -> Self {
        Self { time, freq }
    }

    /// No edges at all; the normalized propagation matrix is the identity.
    pub fn none() -> Self {
        Self::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "policy", content = "value")]
pub enum KernelWidth {
    /// Median of squared distances over all candidate edges.
    Median,
    Fixed(f64),
}

impl Default for KernelWidth {
    fn default() -> Self {
        KernelWidth::Median
    }
}

/// A contiguous run of nodes belonging to one band group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Component {
    pub group: BandGroup,
    pub start: usize,
    pub len: usize,
    /// Windows per frequency row.
    pub width: usize,
}

/// Splits node metadata into components, checking the ordering the edge rule relies on.
pub fn components(meta: &[NodeMeta]) -> Result<Vec<Component>> {
    let mut comps: Vec<Component> = Vec::new();
    let mut i = 0;
    while i < meta.len() {
        let group = meta[i].group;
        if comps.iter().any(|c| c.group >= group) {
            return Err(Error::Graph(format!(
                "node {i}: band group {} out of order",
                group.name()
            )));
        }
        let start = i;
        let mut width = None;
        let mut prev_band = None;
        while i < meta.len() && meta[i].group == group {
            let band = meta[i].band;
            if prev_band.is_some_and(|b| band <= b) {
                return Err(Error::Graph(format!("node {i}: frequency rows out of order")));
            }
            let row_start = i;
            while i < meta.len() && meta[i].group == group && meta[i].band == band {
                if meta[i].window != i - row_start {
                    return Err(Error::Graph(format!("node {i}: time windows out of order")));
                }
                i += 1;
            }
            let w = i - row_start;
            if *width.get_or_insert(w) != w {
                return Err(Error::Graph(format!(
                    "band group {}: rows have unequal window counts",
                    group.name()
                )));
            }
            prev_band = Some(band);
        }
        comps.push(Component {
            group,
            start,
            len: i - start,
            width: width.unwrap_or(0),
        });
    }
    Ok(comps)
}

/// Undirected edge list `(i, j)` with `i < j`, in generation order.
pub fn candidate_edges(meta: &[NodeMeta], directions: &GraphDirections) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut push = |a: usize, b: usize, edges: &mut Vec<(usize, usize)>| {
        let e = (a.min(b), a.max(b));
        if a != b && seen.insert(e) {
            edges.push(e);
        }
    };
    for comp in components(meta)? {
        let g = comp.group.index();
        let (x, y) = (directions.time[g], directions.freq[g]);
        let w = comp.width;
        for i in 0..comp.len {
            let reach = (w - (i % w) - 1).min(x);
            for j in (i + 1)..=(i + reach) {
                push(comp.start + i, comp.start + j, &mut edges);
            }
            if y > 0 {
                let base = i + w * y;
                for j in base..=(base + reach) {
                    if j < comp.len {
                        push(comp.start + i, comp.start + j, &mut edges);
                    }
                }
            }
        }
    }
    Ok(edges)
}

/// Weighted time-frequency graph.
#[derive(Clone, Debug)]
pub struct TfGraph {
    /// Symmetric, zero diagonal, weights in `(0, 1]` on edges.
    pub adjacency: DMatrix<f64>,
    pub kernel_width: f64,
    pub edges: Vec<(usize, usize)>,
    pub lattice: LatticeVector,
    pub directions: GraphDirections,
}

impl TfGraph {
    pub fn n_nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn row_normalized(&self) -> DMatrix<f64> {
        row_normalize(&self.adjacency)
    }

    pub fn spectrum_bounds(&self) -> Result<Vec<PerturbationReport>> {
        perturbation_check(&self.lattice.nodes, &self.adjacency)
    }
}

/// Builds the adjacency with Gaussian-kernel weights `exp(-d²/t)` on the AIRM distance.
pub fn gen_adjacency(lattice: &LatticeVector, directions: &GraphDirections, width: KernelWidth) -> Result<TfGraph> {
    if let KernelWidth::Fixed(t) = width {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidParameter(format!("kernel width {t} must be > 0")));
        }
    }
    if lattice.nodes.len() != lattice.meta.len() {
        return Err(Error::Graph("lattice nodes and metadata disagree in length".into()));
    }
    let edges = candidate_edges(&lattice.meta, directions)?;
    let sq: Vec<f64> = edges
        .iter()
        .map(|&(i, j)| airm_distance(&lattice.nodes[i], &lattice.nodes[j]).map(|d| d * d))
        .collect::<Result<_>>()?;
    let t = match width {
        KernelWidth::Fixed(t) => t,
        KernelWidth::Median => median(&sq).filter(|&m| m > 0.0).unwrap_or(1.0),
    };
    let n = lattice.len();
    let mut a = DMatrix::zeros(n, n);
    for (&(i, j), &d2) in edges.iter().zip(&sq) {
        a[(i, j)] = (-d2 / t).exp();
    }
    let a = &a + a.transpose();
    Ok(TfGraph {
        adjacency: a,
        kernel_width: t,
        edges,
        lattice: lattice.clone(),
        directions: *directions,
    })
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[m] } else { 0.5 * (s[m - 1] + s[m]) })
}

/// `D̄⁻¹ Ā` with `Ā = A + I`; every row sums to one.
pub fn row_normalize(adjacency: &DMatrix<f64>) -> DMatrix<f64> {
    let n = adjacency.nrows();
    let mut out = adjacency + DMatrix::identity(n, n);
    for mut row in out.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    out
}

/// Per-node spectrum perturbation bounds for `S̄ᵢ = Sᵢ + Σⱼ aᵢⱼ Sⱼ`.
#[derive(Clone, Debug, Serialize)]
pub struct PerturbationReport {
    pub node: usize,
    /// Number of neighbours `Nᵢ`.
    pub neighbours: usize,
    /// `Cᵢ = max_j λ_max(Sᵢ^{-1/2} Sⱼ Sᵢ^{-1/2})`; zero for isolated nodes.
    pub c: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub satisfied: bool,
}

/// Compares sorted eigenvalues of each perturbed node against the original
/// ones and checks `1 - NᵢCᵢ <= λ_k(S̄ᵢ)/λ_k(Sᵢ) <= 1 + NᵢCᵢ`.
pub fn perturbation_check(nodes: &[SpdMatrix], adjacency: &DMatrix<f64>) -> Result<Vec<PerturbationReport>> {
    let n = nodes.len();
    if adjacency.nrows() != n || adjacency.ncols() != n {
        return Err(Error::Shape(format!(
            "adjacency {}x{} for {n} nodes",
            adjacency.nrows(),
            adjacency.ncols()
        )));
    }
    const SLACK: f64 = 1e-10;
    let mut reports = Vec::with_capacity(n);
    for i in 0..n {
        let si = &nodes[i];
        let mut perturbed = si.as_matrix().clone();
        let mut c = 0.0f64;
        let mut count = 0;
        let inv_root = si.inv_sqrt();
        for j in 0..n {
            let a = adjacency[(i, j)];
            if j == i || a == 0.0 {
                continue;
            }
            count += 1;
            perturbed += nodes[j].as_matrix() * a;
            let rel = crate::spd::symmetrize(&(inv_root.as_matrix() * nodes[j].as_matrix() * inv_root.as_matrix()));
            c = c.max(crate::spd::sym_eig(&rel)?.max_eigenvalue());
        }
        let perturbed = SpdMatrix::new(perturbed)
            .map_err(|e| Error::NumericalBreakdown(format!("perturbed node {i} is not SPD: {e}")))?;
        let before = si.eig().values;
        let after = perturbed.eig().values;
        let ratios: Vec<f64> = after.iter().zip(before.iter()).map(|(a, b)| a / b).collect();
        let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let max_ratio = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let spread = count as f64 * c;
        let (lower_bound, upper_bound) = (1.0 - spread, 1.0 + spread);
        reports.push(PerturbationReport {
            node: i,
            neighbours: count,
            c,
            min_ratio,
            max_ratio,
            lower_bound,
            upper_bound,
            satisfied: min_ratio >= lower_bound - SLACK && max_ratio <= upper_bound + SLACK,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SegmentationPlan;
    use crate::spd::random::{random_spd, rng_from_seed};

    fn single_row_meta(w: usize) -> Vec<NodeMeta> {
        (0..w)
            .map(|k| NodeMeta {
                band: 0,
                window: k,
                group: BandGroup::Theta,
            })
            .collect()
    }

    fn random_lattice(meta: Vec<NodeMeta>, dim: usize, seed: u64) -> LatticeVector {
        let mut rng = rng_from_seed(seed);
        LatticeVector {
            nodes: meta
                .iter()
                .map(|_| SpdMatrix::new(random_spd(&mut rng, dim)).unwrap())
                .collect(),
            meta,
        }
    }

    #[test]
    fn path_graph() {
        let d = GraphDirections::new([1, 0, 0, 0], [0; 4]);
        assert_eq!(candidate_edges(&single_row_meta(4), &d).unwrap(), vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn no_directions_no_edges() {
        let meta = SegmentationPlan::ku().node_meta().unwrap();
        let lattice = random_lattice(meta, 3, 1);
        let g = gen_adjacency(&lattice, &GraphDirections::none(), KernelWidth::Median).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert!(g.adjacency.iter().all(|&v| v == 0.0));
        assert_eq!(g.row_normalized(), DMatrix::identity(60, 60));
    }

    #[test]
    fn frequency_edges_follow_rows() {
        // one component, 3 rows of 4 windows
        let meta: Vec<NodeMeta> = (0..3)
            .flat_map(|b| {
                (0..4).map(move |k| NodeMeta {
                    band: b,
                    window: k,
                    group: BandGroup::Beta,
                })
            })
            .collect();
        let d = GraphDirections::new([0, 0, 1, 0], [0, 0, 1, 0]);
        let edges = candidate_edges(&meta, &d).unwrap();
        // node 0: time -> 1, freq -> 4, 5
        assert!(edges.contains(&(0, 1)) && edges.contains(&(0, 4)) && edges.contains(&(0, 5)));
        // last column has no forward reach: node 3 -> 7 only
        assert!(edges.contains(&(3, 7)) && !edges.contains(&(3, 8)));
        // top row has nowhere to go in frequency
        assert!(!edges.iter().any(|&(i, j)| i >= 8 && j >= 12));
        // y = 3 leaves the component entirely
        let far = GraphDirections::new([0; 4], [0, 0, 3, 0]);
        assert!(candidate_edges(&meta, &far).unwrap().is_empty());
    }

    #[test]
    fn ordering_violations_are_rejected() {
        let mut meta = single_row_meta(4);
        meta.swap(1, 2);
        assert!(candidate_edges(&meta, &GraphDirections::none()).is_err());
        let mut meta = SegmentationPlan::ku().node_meta().unwrap();
        meta.swap(0, 59);
        assert!(candidate_edges(&meta, &GraphDirections::none()).is_err());
    }

    #[test]
    fn weights_and_blocks() {
        let meta = SegmentationPlan::ku().node_meta().unwrap();
        let lattice = random_lattice(meta.clone(), 3, 2);
        let d = GraphDirections::new([2, 2, 2, 4], [1, 1, 1, 1]);
        let g = gen_adjacency(&lattice, &d, KernelWidth::Median).unwrap();
        assert_eq!(g.adjacency, g.adjacency.transpose());
        for i in 0..60 {
            assert_eq!(g.adjacency[(i, i)], 0.0);
            for j in 0..60 {
                let a = g.adjacency[(i, j)];
                assert!((0.0..=1.0).contains(&a));
                if meta[i].group != meta[j].group {
                    assert_eq!(a, 0.0);
                }
            }
        }
        for &(i, j) in &g.edges {
            assert!(g.adjacency[(i, j)] > 0.0);
        }
    }

    #[test]
    fn identical_nodes_have_unit_weight() {
        let meta = single_row_meta(3);
        let s = SpdMatrix::from_diagonal(&[1.0, 2.0]).unwrap();
        let lattice = LatticeVector {
            nodes: vec![s.clone(), s.clone(), s],
            meta,
        };
        let g = gen_adjacency(&lattice, &GraphDirections::new([1, 0, 0, 0], [0; 4]), KernelWidth::Median).unwrap();
        assert_eq!(g.adjacency[(0, 1)], 1.0);
        assert_eq!(g.kernel_width, 1.0);
        assert!(gen_adjacency(&lattice, &GraphDirections::none(), KernelWidth::Fixed(0.0)).is_err());
    }

    #[test]
    fn row_normalization() {
        assert_eq!(row_normalize(&DMatrix::zeros(3, 3)), DMatrix::identity(3, 3));
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(row_normalize(&a), DMatrix::from_element(2, 2, 0.5));
    }

    #[test]
    fn perturbation_bound_examples() {
        let s = SpdMatrix::from_diagonal(&[3.0, 1.0]).unwrap();
        let iso = perturbation_check(&[s.clone()], &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(iso[0].min_ratio, 1.0);
        assert_eq!(iso[0].max_ratio, 1.0);
        assert!(iso[0].satisfied);

        let a = 0.4;
        let adj = DMatrix::from_row_slice(2, 2, &[0.0, a, a, 0.0]);
        let r = perturbation_check(&[s.clone(), s], &adj).unwrap();
        assert!((r[0].max_ratio - (1.0 + a)).abs() < 1e-12);
        assert!((r[0].c - 1.0).abs() < 1e-12);
        assert!(r[0].lower_bound.abs() < 1e-12 && (r[0].upper_bound - 2.0).abs() < 1e-12);
        assert!(r[0].satisfied);
    }

    #[test]
    fn lattice_means() {
        let stack = TfStack {
            matrices: vec![vec![SpdMatrix::from_diagonal(&[1.0, 3.0]).unwrap()], vec![SpdMatrix::from_diagonal(&[3.0, 1.0]).unwrap()]],
            node_meta: single_row_meta(1),
            labels: vec![0, 1],
        };
        let l = LatticeVector::from_stack(&stack).unwrap();
        assert_eq!(*l.nodes[0].as_matrix(), DMatrix::identity(2, 2) * 2.0);
        let one = LatticeVector::from_trials(&stack, &[1]).unwrap();
        assert_eq!(one.nodes[0], stack.matrices[1][0]);
        assert!(LatticeVector::from_trials(&stack, &[]).is_err());
    }
}
