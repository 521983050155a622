use super::{Matrix, TensorError};

/// Undirected edge list with a CSR view that includes one self-loop per
/// node. Drives the sparse propagation primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeIndex {
    n: usize,
    edges: Vec<(usize, usize)>,
    row_ptr: Vec<usize>,
    /// `(column, edge id)`; `None` marks the self-loop.
    entries: Vec<(usize, Option<usize>)>,
    /// Constant degree added per node for edges that are not listed.
    boundary: Vec<f64>,
}

impl EdgeIndex {
    /// `edges` must hold pairs `u < v < n`, each pair once.
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Result<Self, TensorError> {
        let mut adj: Vec<Vec<(usize, Option<usize>)>> = (0..n).map(|i| vec![(i, None)]).collect();
        for (e, &(u, v)) in edges.iter().enumerate() {
            if u >= v || v >= n {
                return Err(TensorError::Usage(format!(
                    "edge ({u},{v}) must satisfy u < v < {n}"
                )));
            }
            adj[u].push((v, Some(e)));
            adj[v].push((u, Some(e)));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut entries = Vec::with_capacity(n + 2 * edges.len());
        row_ptr.push(0);
        for mut row in adj {
            row.sort_by_key(|&(c, _)| c);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(TensorError::Usage("duplicate edge".into()));
            }
            entries.extend(row);
            row_ptr.push(entries.len());
        }
        Ok(Self {
            n,
            edges,
            row_ptr,
            entries,
            boundary: vec![0.0; n],
        })
    }

    /// Adds a fixed count of unlisted incident edges to each node's degree.
    /// A node cut out of a larger graph keeps its original normalization
    /// this way, while only the listed edges carry messages and weights.
    pub fn with_boundary_degrees(mut self, extra: Vec<f64>) -> Result<Self, TensorError> {
        if extra.len() != self.n {
            return Err(TensorError::Usage(format!(
                "{} boundary degrees for {} nodes",
                extra.len(),
                self.n
            )));
        }
        if extra.iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
            return Err(TensorError::Usage("boundary degrees must be finite and >= 0".into()));
        }
        self.boundary = extra;
        Ok(self)
    }

    pub fn boundary_degrees(&self) -> &[f64] {
        &self.boundary
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    fn check_weights(&self, weights: &Matrix) -> Result<(), TensorError> {
        if weights.shape() != (1, self.edges.len()) {
            return Err(TensorError::shape(
                "edge weights",
                (1, self.edges.len()),
                weights.shape(),
            ));
        }
        Ok(())
    }

    /// Dense symmetric matrix holding `weights[e]` at both `(u,v)` and `(v,u)`.
    pub fn scatter(&self, weights: &Matrix) -> Result<Matrix, TensorError> {
        self.check_weights(weights)?;
        let mut out = Matrix::zeros(self.n, self.n);
        for (&(u, v), &w) in self.edges.iter().zip(weights.data()) {
            out.set(u, v, w);
            out.set(v, u, w);
        }
        Ok(out)
    }

    /// `1/sqrt(1 + Σ incident weights + boundary)` per node, summed in
    /// column order.
    fn inv_sqrt_degrees(&self, w: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let row_sum: f64 = self.row(i).iter().map(|&(_, e)| e.map_or(0.0, |e| w[e])).sum();
                1.0 / ((1.0 + row_sum) + self.boundary[i]).sqrt()
            })
            .collect()
    }

    fn row(&self, i: usize) -> &[(usize, Option<usize>)] {
        &self.entries[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    fn coefficient(w: &[f64], s: &[f64], i: usize, j: usize, e: Option<usize>) -> f64 {
        let b = e.map_or(1.0, |e| w[e]);
        b * (s[i] * s[j])
    }

    pub fn propagate(&self, weights: &Matrix, x: &Matrix) -> Result<Matrix, TensorError> {
        self.check_weights(weights)?;
        if x.rows() != self.n {
            return Err(TensorError::shape("propagate", (self.n, self.n), x.shape()));
        }
        let w = weights.data();
        let s = self.inv_sqrt_degrees(w);
        let h = x.cols();
        let mut out = Matrix::zeros(self.n, h);
        let data = out.data_mut();
        for i in 0..self.n {
            let out_row = &mut data[i * h..(i + 1) * h];
            for &(j, e) in self.row(i) {
                let c = Self::coefficient(w, &s, i, j, e);
                if c == 0.0 {
                    continue;
                }
                for (o, xv) in out_row.iter_mut().zip(x.row(j)) {
                    *o += c * xv;
                }
            }
        }
        Ok(out)
    }

    /// Returns `(∂L/∂weights, ∂L/∂x)` given `g = ∂L/∂(Â x)`.
    pub(crate) fn propagate_vjp(&self, weights: &Matrix, x: &Matrix, g: &Matrix) -> (Matrix, Matrix) {
        let w = weights.data();
        let s = self.inv_sqrt_degrees(w);
        let h = x.cols();
        let mut dx = Matrix::zeros(self.n, h);
        // ∂L/∂Â_ij = <g_i, x_j> on the support
        let mut dp = vec![0.0; self.entries.len()];
        for i in 0..self.n {
            for (k, &(j, e)) in self.row(i).iter().enumerate() {
                let slot = self.row_ptr[i] + k;
                dp[slot] = g.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
                let c = Self::coefficient(w, &s, i, j, e);
                if c != 0.0 {
                    let dxd = dx.data_mut();
                    for (d, gv) in dxd[j * h..(j + 1) * h].iter_mut().zip(g.row(i)) {
                        *d += c * gv;
                    }
                }
            }
        }
        // ∂L/∂s_i, then ∂L/∂deg_i
        let mut t = vec![0.0; self.n];
        for i in 0..self.n {
            for (k, &(j, e)) in self.row(i).iter().enumerate() {
                let b = e.map_or(1.0, |e| w[e]);
                let val = dp[self.row_ptr[i] + k] * b;
                t[i] += val * s[j];
                t[j] += val * s[i];
            }
        }
        let dd: Vec<f64> = (0..self.n).map(|i| -0.5 * s[i].powi(3) * t[i]).collect();
        let mut dw = vec![0.0; self.edges.len()];
        for i in 0..self.n {
            for (k, &(j, e)) in self.row(i).iter().enumerate() {
                if let Some(e) = e {
                    // each ordered entry (i,j) of the edge contributes once
                    dw[e] += dp[self.row_ptr[i] + k] * (s[i] * s[j]) + dd[i];
                }
            }
        }
        (Matrix::row_vector(dw), dx)
    }
}
