//! Graphs, single-excitation Hamiltonians and noisy-edge operators.
//!
//! Vertices are 1-based (`1..=n`). Matrices act on the `n + 1` dimensional
//! space spanned by the vacuum `|0>` (row/column 0) and the single-excitation
//! states `|k>` (row/column `k`).

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Absolute tolerance for the Hermiticity check of [`HermitianOperator`].
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Coupling entry of the XY Hamiltonian in the single-excitation basis.
pub const COUPLING: f64 = 2.0;

/// A simple undirected graph on vertices `1..=n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    /// Builds a graph, normalising each pair to `(min, max)`.
    ///
    /// Self-loops, duplicate edges and out-of-range endpoints are rejected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("graph needs at least one vertex"));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::invalid(format!("self-loop on vertex {a}")));
            }
            if a == 0 || b == 0 || a > n || b > n {
                return Err(Error::invalid(format!(
                    "edge {{{a},{b}}} has an endpoint outside 1..={n}"
                )));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::invalid(format!("duplicate edge {{{a},{b}}}")));
            }
        }
        Ok(Self { n, edges: set })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// `n x n` adjacency matrix, indexed from 0 for vertex 1.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for &(k, l) in &self.edges {
            a[(k - 1, l - 1)] = 1.0;
            a[(l - 1, k - 1)] = 1.0;
        }
        a
    }
}

/// The complete graph on `n` vertices.
pub fn complete_graph(n: usize) -> Result<Graph> {
    if n == 0 {
        return Err(Error::invalid("complete_graph requires n >= 1"));
    }
    let edges = (1..=n).flat_map(|k| (k + 1..=n).map(move |l| (k, l)));
    Graph::new(n, edges)
}

/// Noise strength: one rate for every noisy edge, or one per edge.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseStrength {
    Uniform(f64),
    PerEdge(BTreeMap<(usize, usize), f64>),
}

/// Noisy vertex subset `W` and the white-noise strength on the edges inside it.
///
/// The noise term couples every pair `k < l` of `W` with an independent
/// white-noise coupling of correlation `2 eta delta(t - t')`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    vertices: Vec<usize>,
    strength: NoiseStrength,
}

impl NoiseSpec {
    /// No noise at all.
    pub fn none() -> Self {
        Self {
            vertices: Vec::new(),
            strength: NoiseStrength::Uniform(0.0),
        }
    }

    pub fn uniform(vertices: impl IntoIterator<Item = usize>, eta: f64) -> Result<Self> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::InvalidNoiseSpec(format!(
                "noise strength must be finite and >= 0, got {eta}"
            )));
        }
        Ok(Self {
            vertices: normalise_vertices(vertices)?,
            strength: NoiseStrength::Uniform(eta),
        })
    }

    /// Per-edge strengths. `rates` must name every pair inside `vertices`
    /// exactly once (in either orientation) and nothing else.
    pub fn per_edge(
        vertices: impl IntoIterator<Item = usize>,
        rates: impl IntoIterator<Item = ((usize, usize), f64)>,
    ) -> Result<Self> {
        let vertices = normalise_vertices(vertices)?;
        let mut map = BTreeMap::new();
        for ((a, b), eta) in rates {
            let key = (a.min(b), a.max(b));
            if !vertices.contains(&a) || !vertices.contains(&b) || a == b {
                return Err(Error::InvalidNoiseSpec(format!(
                    "edge {{{a},{b}}} is not a pair of noisy vertices"
                )));
            }
            if !(eta >= 0.0) || !eta.is_finite() {
                return Err(Error::InvalidNoiseSpec(format!(
                    "strength on edge {{{a},{b}}} must be finite and >= 0, got {eta}"
                )));
            }
            if map.insert(key, eta).is_some() {
                return Err(Error::InvalidNoiseSpec(format!("edge {{{a},{b}}} listed twice")));
            }
        }
        let expected = vertices.len() * vertices.len().saturating_sub(1) / 2;
        if map.len() != expected {
            return Err(Error::InvalidNoiseSpec(format!(
                "per-edge strengths must cover all {expected} noisy pairs, got {}",
                map.len()
            )));
        }
        Ok(Self {
            vertices,
            strength: NoiseStrength::PerEdge(map),
        })
    }

    /// Picks the `m` lowest-numbered vertices that are neither input nor output.
    pub fn auto(n: usize, m: usize, input: usize, output: usize, eta: f64) -> Result<Self> {
        let picked: Vec<usize> = (1..=n).filter(|&v| v != input && v != output).take(m).collect();
        if picked.len() < m {
            return Err(Error::InvalidNoiseSpec(format!(
                "cannot choose {m} noisy vertices among {n} excluding input/output"
            )));
        }
        Self::uniform(picked, eta)
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn m(&self) -> usize {
        self.vertices.len()
    }

    pub fn strength(&self) -> &NoiseStrength {
        &self.strength
    }

    /// Noisy edges `(k, l)` with `k < l` and their strengths.
    pub fn edges(&self) -> Vec<((usize, usize), f64)> {
        let mut out = Vec::new();
        for (i, &k) in self.vertices.iter().enumerate() {
            for &l in &self.vertices[i + 1..] {
                let eta = match &self.strength {
                    NoiseStrength::Uniform(eta) => *eta,
                    NoiseStrength::PerEdge(map) => map[&(k, l)],
                };
                out.push(((k, l), eta));
            }
        }
        out
    }

    /// Largest edge strength, 0 when there are no noisy edges.
    pub fn max_strength(&self) -> f64 {
        self.edges().iter().map(|&(_, e)| e).fold(0.0, f64::max)
    }

    /// True when no edge carries noise.
    pub fn is_noiseless(&self) -> bool {
        self.max_strength() == 0.0
    }

    /// Same vertex set with every strength multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        match &self.strength {
            NoiseStrength::Uniform(eta) => Self::uniform(self.vertices.clone(), eta * factor),
            NoiseStrength::PerEdge(map) => {
                Self::per_edge(self.vertices.clone(), map.iter().map(|(&k, &v)| (k, v * factor)))
            }
        }
    }

    /// Checks this noise specification against a network of `n` vertices with the given
    /// input and output nodes.
    pub fn validate_for(&self, n: usize, input: usize, output: usize) -> Result<()> {
        if let Some(&v) = self.vertices.iter().find(|&&v| v > n) {
            return Err(Error::InvalidNoiseSpec(format!("noisy vertex {v} outside 1..={n}")));
        }
        if self.vertices.contains(&input) || self.vertices.contains(&output) {
            return Err(Error::InvalidNoiseSpec(
                "noisy vertices must not include the input or output node".into(),
            ));
        }
        if self.m() > n.saturating_sub(2) {
            return Err(Error::InvalidNoiseSpec(format!(
                "m = {} exceeds n - 2 = {}",
                self.m(),
                n.saturating_sub(2)
            )));
        }
        Ok(())
    }
}

fn normalise_vertices(vertices: impl IntoIterator<Item = usize>) -> Result<Vec<usize>> {
    let mut v: Vec<usize> = vertices.into_iter().collect();
    if v.contains(&0) {
        return Err(Error::InvalidNoiseSpec("vertices are 1-based".into()));
    }
    let len = v.len();
    v.sort_unstable();
    v.dedup();
    if v.len() != len {
        return Err(Error::InvalidNoiseSpec("duplicate noisy vertex".into()));
    }
    Ok(v)
}

/// A Hermitian matrix. All operators built by this crate are real symmetric;
/// the complex storage keeps the interface general.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    matrix: DMatrix<C64>,
}

impl HermitianOperator {
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::invalid(format!(
                "operator must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let defect = hermiticity_defect(&matrix);
        if defect > HERMITIAN_TOL {
            return Err(Error::invalid(format!(
                "operator is not Hermitian (defect {defect:.3e})"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn from_real(matrix: &DMatrix<f64>) -> Result<Self> {
        Self::new(matrix.map(|x| C64::new(x, 0.0)))
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    /// Real part, if the imaginary part vanishes identically.
    pub fn as_real(&self) -> Option<DMatrix<f64>> {
        if self.matrix.iter().all(|z| z.im == 0.0) {
            Some(self.matrix.map(|z| z.re))
        } else {
            None
        }
    }
}

/// Largest entry of `|A - A^dagger|`.
pub fn hermiticity_defect(a: &DMatrix<C64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// `H_G` on `{|0>, |1>, ..., |n>}`: entry `(k, l)` is 2 on edges, the vacuum
/// row and column are zero.
pub fn single_excitation_hamiltonian(g: &Graph) -> HermitianOperator {
    let dim = g.n() + 1;
    let mut h = DMatrix::<C64>::zeros(dim, dim);
    for (k, l) in g.edges() {
        h[(k, l)] = C64::new(COUPLING, 0.0);
        h[(l, k)] = C64::new(COUPLING, 0.0);
    }
    HermitianOperator { matrix: h }
}

/// `|k><l| + |l><k|` on a space of dimension `dim`.
pub fn edge_operator(dim: usize, k: usize, l: usize) -> HermitianOperator {
    let mut m = DMatrix::<C64>::zeros(dim, dim);
    m[(k, l)] = C64::new(1.0, 0.0);
    m[(l, k)] = C64::new(1.0, 0.0);
    HermitianOperator { matrix: m }
}

/// One hopping operator `L_kl` per noisy pair, paired with its noise strength.
pub fn lindblad_edge_operators(
    g: &Graph,
    spec: &NoiseSpec,
    input: usize,
    output: usize,
) -> Result<Vec<(HermitianOperator, f64)>> {
    spec.validate_for(g.n(), input, output)?;
    let dim = g.n() + 1;
    Ok(spec
        .edges()
        .into_iter()
        .map(|((k, l), eta)| (edge_operator(dim, k, l), eta))
        .collect())
}
