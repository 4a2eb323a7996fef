//! Time discretisation: Chebyshev grids, interpolation, and quadrature.
//!
//! Objectives and gradients are assembled on a fixed time grid: Chebyshev
//! points of the first kind mapped to `[0, T]` plus the two endpoints.
//! Smooth curves are represented by cubic Hermite interpolants (with exact
//! right-hand-side derivatives at the nodes), sampled data by linear
//! interpolation, and rolling-average style targets by left-closed piecewise
//! constants. Integrals over the grid use a composite Simpson rule
//! generalised to non-uniform spacing.

use std::sync::Arc;

use crate::{Error, Result};

/// Relative slack used when checking whether an evaluation time lies inside
/// the grid span, to absorb floating-point round-off in callers that map
/// times through affine transforms.
const SPAN_SLACK: f64 = 1e-9;

/// How a [`TimeGrid`]'s nodes were generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    /// Chebyshev points of the first kind on the open interval plus the two
    /// endpoints.
    ChebyshevFirstKindPlusEndpoints,
    /// Equally spaced nodes including both endpoints.
    Uniform,
    /// Caller-supplied nodes (for example, measurement times from a data
    /// file).
    Explicit,
}

/// A strictly increasing list of time nodes spanning `[0, T]`.
///
/// Cloning is cheap: the node storage is shared.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Arc<[f64]>,
    kind: GridKind,
}

impl TimeGrid {
    /// Builds a grid from explicit nodes, validating that they are finite,
    /// strictly increasing, start at `0`, and contain at least two nodes.
    pub fn from_nodes(nodes: Vec<f64>, kind: GridKind) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Config("a time grid needs at least two nodes".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::Config(format!(
                "time grids start at 0 (first node is {})",
                nodes[0]
            )));
        }
        for pair in nodes.windows(2) {
            if !pair[1].is_finite() || pair[1] <= pair[0] {
                return Err(Error::Config(format!(
                    "time grid nodes must be finite and strictly increasing ({} then {})",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(Self {
            nodes: nodes.into(),
            kind,
        })
    }

    /// The nodes, strictly increasing, `nodes()[0] == 0.0`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Whether the grid is empty. Always `false` for a constructed grid;
    /// present for clippy-friendliness alongside [`TimeGrid::len`].
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The final node `T`.
    pub fn horizon(&self) -> f64 {
        *self.nodes.last().expect("grids have at least two nodes")
    }

    /// How the grid was generated.
    pub fn kind(&self) -> GridKind {
        self.kind
    }

    /// Index `i` of the segment `[nodes[i], nodes[i+1]]` containing `t`,
    /// assuming `t` lies inside the span; boundary times map to the
    /// adjacent segment.
    pub fn segment_of(&self, t: f64) -> usize {
        let idx = self.nodes.partition_point(|&x| x <= t);
        idx.saturating_sub(1).min(self.nodes.len() - 2)
    }

    /// Checks that `t` lies in `[0, T]` up to round-off slack and returns it
    /// clamped onto the span.
    fn clamp_into_span(&self, t: f64) -> Result<f64> {
        let horizon = self.horizon();
        let slack = SPAN_SLACK * horizon.max(1.0);
        if !t.is_finite() || t < -slack || t > horizon + slack {
            return Err(Error::Config(format!(
                "time {t} lies outside the grid span [0, {horizon}]"
            )));
        }
        Ok(t.clamp(0.0, horizon))
    }
}

/// Builds the fitting grid: `n_interior` Chebyshev points of the first kind
/// mapped from `(-1, 1)` to `(0, T)`, in ascending order, plus the two
/// endpoints `{0, T}` — `n_interior + 2` nodes in total.
///
/// The interior nodes are `(T/2)·(1 + cos((2i+1)π/(2N)))` for
/// `i = 0, …, N−1`, reordered increasingly. They are constructed in
/// symmetric pairs so that `t_i + t_{N+1−i} == T` holds to machine
/// precision.
///
/// # Errors
///
/// `n_interior == 0` or a non-positive/non-finite horizon is a
/// configuration error.
///
/// # Examples
///
/// ```
/// use sirdfit::grid::chebyshev_grid;
///
/// let g = chebyshev_grid(1, 1.0)?;
/// assert_eq!(g.nodes(), &[0.0, 0.5, 1.0]);
/// # Ok::<(), sirdfit::Error>(())
/// ```
pub fn chebyshev_grid(n_interior: usize, horizon: f64) -> Result<TimeGrid> {
    if n_interior == 0 {
        return Err(Error::Config(
            "a Chebyshev grid needs at least one interior point".into(),
        ));
    }
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(Error::Config(format!(
            "grid horizon must be positive and finite (got {horizon})"
        )));
    }
    let n = n_interior;
    let mut nodes = vec![0.0; n + 2];
    nodes[n + 1] = horizon;
    // Fill interior nodes in mirrored pairs: the angle for index i and for
    // index n-1-i are supplementary, so one cosine serves both and the pair
    // sums to exactly `horizon`.
    for i in 0..n / 2 {
        let angle = (2 * i + 1) as f64 * std::f64::consts::PI / (2 * n) as f64;
        let c = angle.cos(); // in (0, 1): angle < π/2 for i < n/2
        let low = 0.5 * horizon * (1.0 - c);
        let high = 0.5 * horizon * (1.0 + c);
        nodes[1 + i] = low;
        nodes[n - i] = high;
    }
    if n % 2 == 1 {
        nodes[1 + n / 2] = 0.5 * horizon;
    }
    TimeGrid::from_nodes(nodes, GridKind::ChebyshevFirstKindPlusEndpoints)
}

/// Builds a uniform grid with `n_nodes` nodes (including both endpoints)
/// over `[0, horizon]`.
pub fn uniform_grid(n_nodes: usize, horizon: f64) -> Result<TimeGrid> {
    if n_nodes < 2 {
        return Err(Error::Config("a uniform grid needs at least two nodes".into()));
    }
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(Error::Config(format!(
            "grid horizon must be positive and finite (got {horizon})"
        )));
    }
    let step = horizon / (n_nodes - 1) as f64;
    let mut nodes: Vec<f64> = (0..n_nodes).map(|i| i as f64 * step).collect();
    nodes[n_nodes - 1] = horizon; // exact endpoint regardless of round-off
    TimeGrid::from_nodes(nodes, GridKind::Uniform)
}

/// Interpolation mode of an [`Interpolant`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpMode {
    /// Piecewise cubic with prescribed values and derivatives at the nodes;
    /// exact on cubic polynomials. Used for smooth simulated curves, whose
    /// node derivatives are free (the ODE right-hand side).
    CubicHermite,
    /// Piecewise linear through the node values; exact on affine functions.
    /// Used for sampled (possibly non-smooth) data.
    LinearLagrange,
    /// Right-continuous piecewise constant: cell `[t_i, t_{i+1})` carries
    /// value `i`, and the right endpoint `t = T` carries the last cell's
    /// value. Used for rolling-average targets.
    PiecewiseConstantLeft,
}

/// Vector-valued function of time represented on a [`TimeGrid`].
///
/// For [`InterpMode::CubicHermite`] and [`InterpMode::LinearLagrange`] the
/// storage holds one `dim`-vector per node and evaluation at a node
/// reproduces the stored value exactly. For
/// [`InterpMode::PiecewiseConstantLeft`] it holds one `dim`-vector per grid
/// *cell* (one fewer than nodes).
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolant {
    grid: TimeGrid,
    /// Node-major (or cell-major) storage: entry `i` occupies
    /// `values[i*dim..(i+1)*dim]`.
    values: Vec<f64>,
    /// Node derivatives for `CubicHermite`, same layout as `values`.
    derivs: Option<Vec<f64>>,
    dim: usize,
    mode: InterpMode,
}

impl Interpolant {
    /// Cubic Hermite interpolant from node values and node derivatives.
    pub fn cubic_hermite(
        grid: TimeGrid,
        values: Vec<f64>,
        derivs: Vec<f64>,
        dim: usize,
    ) -> Result<Self> {
        let expected = grid.len() * dim;
        if dim == 0 || values.len() != expected || derivs.len() != expected {
            return Err(Error::Config(format!(
                "cubic Hermite interpolant needs {} values and derivatives ({} nodes × dim {})",
                expected,
                grid.len(),
                dim
            )));
        }
        Ok(Self {
            grid,
            values,
            derivs: Some(derivs),
            dim,
            mode: InterpMode::CubicHermite,
        })
    }

    /// Piecewise linear interpolant through node values.
    pub fn linear(grid: TimeGrid, values: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || values.len() != grid.len() * dim {
            return Err(Error::Config(format!(
                "linear interpolant needs {} values ({} nodes × dim {})",
                grid.len() * dim,
                grid.len(),
                dim
            )));
        }
        Ok(Self {
            grid,
            values,
            derivs: None,
            dim,
            mode: InterpMode::LinearLagrange,
        })
    }

    /// Right-continuous piecewise constant interpolant from per-cell values;
    /// the grid nodes are the cell edges.
    pub fn piecewise_constant_left(grid: TimeGrid, cell_values: Vec<f64>, dim: usize) -> Result<Self> {
        let cells = grid.len() - 1;
        if dim == 0 || cell_values.len() != cells * dim {
            return Err(Error::Config(format!(
                "piecewise-constant interpolant needs {} values ({} cells × dim {})",
                cells * dim,
                cells,
                dim
            )));
        }
        Ok(Self {
            grid,
            values: cell_values,
            derivs: None,
            dim,
            mode: InterpMode::PiecewiseConstantLeft,
        })
    }

    /// The underlying grid.
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Dimension of the interpolated vectors.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Interpolation mode.
    pub fn mode(&self) -> InterpMode {
        self.mode
    }

    /// Final grid time.
    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    /// The stored value (or cell value) at index `i`.
    pub fn value_at(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Interior times where the represented function jumps. Empty except
    /// for [`InterpMode::PiecewiseConstantLeft`], whose interior cell edges
    /// are discontinuities; integrators restart there rather than stepping
    /// across a jump.
    pub fn discontinuities(&self) -> &[f64] {
        match self.mode {
            InterpMode::PiecewiseConstantLeft => {
                let n = self.grid.len();
                &self.grid.nodes()[1..n - 1]
            }
            _ => &[],
        }
    }

    /// Evaluates the interpolant at `t ∈ [0, T]` into `out`.
    ///
    /// # Errors
    ///
    /// `t` outside the span (beyond round-off slack) is an error.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        assert_eq!(out.len(), self.dim, "output buffer dimension mismatch");
        let t = self.grid.clamp_into_span(t)?;
        let nodes = self.grid.nodes();
        let seg = self.grid.segment_of(t);
        match self.mode {
            InterpMode::PiecewiseConstantLeft => {
                out.copy_from_slice(self.value_at(seg));
            }
            InterpMode::LinearLagrange => {
                let (t0, t1) = (nodes[seg], nodes[seg + 1]);
                let s = (t - t0) / (t1 - t0);
                let v0 = self.value_at(seg);
                let v1 = self.value_at(seg + 1);
                for d in 0..self.dim {
                    out[d] = (1.0 - s) * v0[d] + s * v1[d];
                }
            }
            InterpMode::CubicHermite => {
                let (t0, t1) = (nodes[seg], nodes[seg + 1]);
                let h = t1 - t0;
                let s = (t - t0) / h;
                let derivs = self.derivs.as_ref().expect("Hermite stores derivatives");
                let v0 = self.value_at(seg);
                let v1 = self.value_at(seg + 1);
                let d0 = &derivs[seg * self.dim..(seg + 1) * self.dim];
                let d1 = &derivs[(seg + 1) * self.dim..(seg + 2) * self.dim];
                let s2 = s * s;
                let s3 = s2 * s;
                let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                let h10 = s3 - 2.0 * s2 + s;
                let h01 = -2.0 * s3 + 3.0 * s2;
                let h11 = s3 - s2;
                for d in 0..self.dim {
                    out[d] = h00 * v0[d] + h * h10 * d0[d] + h01 * v1[d] + h * h11 * d1[d];
                }
            }
        }
        Ok(())
    }

    /// Evaluates the interpolant at `t`, allocating the result.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }
}

/// Evaluates an [`Interpolant`] at a single time. Convenience wrapper around
/// [`Interpolant::eval`] mirroring the free-function style of
/// [`simpson_integrate`].
pub fn interpolate(itp: &Interpolant, t: f64) -> Result<Vec<f64>> {
    itp.eval(t)
}

/// Quadrature weights of the composite Simpson rule on a (possibly
/// non-uniform) grid: `∫ f ≈ Σ_i w_i f(t_i)`.
///
/// Consecutive node triples contribute the exact integral of the parabola
/// through their three points; when the interval count is odd, the final
/// interval is closed with a trapezoid. On uniform grids with an even
/// interval count this reduces to the classical composite Simpson rule.
///
/// On strongly graded grids (adjacent spacing ratio above 2, as at the
/// endpoints of a Chebyshev-plus-endpoints grid) a boundary node's weight
/// can be slightly negative; the affected intervals are the tiny ones next
/// to the endpoints, so the effect on smooth integrands is negligible.
///
/// # Errors
///
/// Fewer than three nodes is a configuration error.
pub fn simpson_weights(grid: &TimeGrid) -> Result<Vec<f64>> {
    let nodes = grid.nodes();
    if nodes.len() < 3 {
        return Err(Error::Config(
            "Simpson quadrature needs at least three nodes".into(),
        ));
    }
    let mut w = vec![0.0; nodes.len()];
    let mut i = 0;
    while i + 2 < nodes.len() {
        let h0 = nodes[i + 1] - nodes[i];
        let h1 = nodes[i + 2] - nodes[i + 1];
        let c = (h0 + h1) / 6.0;
        w[i] += c * (2.0 - h1 / h0);
        w[i + 1] += c * (h0 + h1) * (h0 + h1) / (h0 * h1);
        w[i + 2] += c * (2.0 - h0 / h1);
        i += 2;
    }
    if i + 1 < nodes.len() {
        // Odd interval count: close the last interval with a trapezoid.
        let h = nodes[i + 1] - nodes[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    Ok(w)
}

/// Integrates per-node samples over the grid with the composite Simpson
/// rule of [`simpson_weights`].
///
/// # Errors
///
/// Fewer than three nodes, or a sample count different from the node count,
/// is a configuration error.
///
/// # Examples
///
/// ```
/// use sirdfit::grid::{simpson_integrate, uniform_grid};
///
/// let g = uniform_grid(3, 1.0)?;
/// let samples: Vec<f64> = g.nodes().iter().map(|&t| t * t).collect();
/// assert_eq!(simpson_integrate(&g, &samples)?, 1.0 / 3.0);
/// # Ok::<(), sirdfit::Error>(())
/// ```
pub fn simpson_integrate(grid: &TimeGrid, values: &[f64]) -> Result<f64> {
    if values.len() != grid.len() {
        return Err(Error::Config(format!(
            "Simpson quadrature got {} samples for {} nodes",
            values.len(),
            grid.len()
        )));
    }
    let w = simpson_weights(grid)?;
    Ok(w.iter().zip(values).map(|(wi, vi)| wi * vi).sum())
}

/// Mass of each node's piecewise-linear partition-of-unity basis function:
/// half the lengths of the adjacent intervals (the trapezoid quadrature
/// weights). Unlike [`simpson_weights`], these are strictly positive on any
/// grid, so they can serve as a diagonal metric; they also measure how
/// strongly an integral over the grid responds to one nodal sample under
/// linear interpolation.
pub fn node_masses(grid: &TimeGrid) -> Vec<f64> {
    let nodes = grid.nodes();
    let mut m = vec![0.0; nodes.len()];
    for i in 0..nodes.len() - 1 {
        let half = 0.5 * (nodes[i + 1] - nodes[i]);
        m[i] += half;
        m[i + 1] += half;
    }
    m
}

/// Number of sub-intervals per cell used when averaging an interpolant over
/// rolling-average cells. Even, so each cell closes with complete Simpson
/// triples.
const ROLLING_SUBDIVISIONS: usize = 64;

/// Averages a vector-valued function over `k` uniform cells of `[0, T]`,
/// returning the right-continuous piecewise-constant interpolant carrying
/// the cell means. Cell means are computed by Simpson quadrature of `f` on
/// a fine uniform sub-grid.
pub fn rolling_average_fn<F>(f: F, dim: usize, horizon: f64, k: usize) -> Result<Interpolant>
where
    F: Fn(f64, &mut [f64]) -> Result<()>,
{
    if k == 0 {
        return Err(Error::Config("rolling average needs at least one cell".into()));
    }
    if dim == 0 || !horizon.is_finite() || horizon <= 0.0 {
        return Err(Error::Config(
            "rolling average needs a positive horizon and dimension".into(),
        ));
    }
    let cell_width = horizon / k as f64;
    let mut cell_values = vec![0.0; k * dim];
    let mut sample = vec![0.0; dim];
    // Uniform Simpson weights on ROLLING_SUBDIVISIONS intervals, scaled later.
    let m = ROLLING_SUBDIVISIONS;
    let sub_h = cell_width / m as f64;
    for cell in 0..k {
        let left = cell as f64 * cell_width;
        let mut acc = vec![0.0; dim];
        for j in 0..=m {
            // Classical Simpson weights 1,4,2,…,2,4,1 (times h/3).
            let coeff = if j == 0 || j == m {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let t = if j == m {
                // Hit the right edge exactly (and never overshoot T).
                ((cell + 1) as f64 * cell_width).min(horizon)
            } else {
                left + j as f64 * sub_h
            };
            f(t, &mut sample)?;
            for d in 0..dim {
                acc[d] += coeff * sample[d];
            }
        }
        let integral_to_mean = (sub_h / 3.0) / cell_width;
        for d in 0..dim {
            cell_values[cell * dim + d] = acc[d] * integral_to_mean;
        }
    }
    let mut edges: Vec<f64> = (0..=k).map(|i| i as f64 * cell_width).collect();
    edges[k] = horizon;
    let grid = TimeGrid::from_nodes(edges, GridKind::Uniform)?;
    Interpolant::piecewise_constant_left(grid, cell_values, dim)
}

/// Averages an [`Interpolant`] over `k` uniform cells of its span; see
/// [`rolling_average_fn`].
///
/// # Examples
///
/// ```
/// use sirdfit::grid::{rolling_average, uniform_grid, Interpolant};
///
/// // The identity on [0, 1], averaged over two cells, has cell means 1/4 and 3/4.
/// let g = uniform_grid(2, 1.0)?;
/// let itp = Interpolant::linear(g, vec![0.0, 1.0], 1)?;
/// let avg = rolling_average(&itp, 2)?;
/// assert!((avg.eval(0.2)?[0] - 0.25).abs() < 1e-12);
/// assert!((avg.eval(0.7)?[0] - 0.75).abs() < 1e-12);
/// assert!((avg.eval(1.0)?[0] - 0.75).abs() < 1e-12);
/// # Ok::<(), sirdfit::Error>(())
/// ```
pub fn rolling_average(itp: &Interpolant, k: usize) -> Result<Interpolant> {
    rolling_average_fn(
        |t, out| itp.eval_into(t, out),
        itp.dim(),
        itp.horizon(),
        k,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn chebyshev_two_interior_points_match_closed_form() {
        let g = chebyshev_grid(2, 2.0).unwrap();
        let sqrt_half = std::f64::consts::FRAC_1_SQRT_2;
        let expected = [0.0, 1.0 - sqrt_half, 1.0 + sqrt_half, 2.0];
        assert_eq!(g.len(), 4);
        for (node, want) in g.nodes().iter().zip(expected) {
            assert_abs_diff_eq!(node, &want, epsilon = 1e-15);
        }
    }

    #[test]
    fn chebyshev_single_interior_point_is_midpoint() {
        let g = chebyshev_grid(1, 1.0).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn chebyshev_experiment_grid_has_202_nodes() {
        let g = chebyshev_grid(200, 10.0).unwrap();
        assert_eq!(g.len(), 202);
        assert_eq!(g.nodes()[0], 0.0);
        assert_eq!(g.horizon(), 10.0);
        assert_eq!(g.kind(), GridKind::ChebyshevFirstKindPlusEndpoints);
    }

    #[test]
    fn chebyshev_interior_nodes_are_symmetric_about_midpoint() {
        for n in [1usize, 2, 7, 50, 200, 201] {
            let horizon = 10.0;
            let g = chebyshev_grid(n, horizon).unwrap();
            let nodes = g.nodes();
            for i in 1..=n {
                let mirror = nodes[n + 1 - i];
                assert!(
                    (nodes[i] + mirror - horizon).abs() <= 4.0 * f64::EPSILON * horizon,
                    "pair ({}, {}) not symmetric",
                    nodes[i],
                    mirror
                );
            }
        }
    }

    #[test]
    fn zero_interior_points_is_an_error() {
        assert!(chebyshev_grid(0, 1.0).is_err());
    }

    #[test]
    fn hermite_reproduces_cubics_at_midpoints() {
        let g = chebyshev_grid(5, 2.0).unwrap();
        let values: Vec<f64> = g.nodes().iter().map(|&t| t * t * t).collect();
        let derivs: Vec<f64> = g.nodes().iter().map(|&t| 3.0 * t * t).collect();
        let itp = Interpolant::cubic_hermite(g.clone(), values, derivs, 1).unwrap();
        for w in g.nodes().windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            assert_abs_diff_eq!(itp.eval(mid).unwrap()[0], mid * mid * mid, epsilon = 1e-13);
        }
    }

    #[test]
    fn hermite_is_exact_at_nodes() {
        let g = chebyshev_grid(7, 3.0).unwrap();
        let values: Vec<f64> = g.nodes().iter().map(|&t| (1.3 * t).sin()).collect();
        let derivs: Vec<f64> = g.nodes().iter().map(|&t| 1.3 * (1.3 * t).cos()).collect();
        let itp = Interpolant::cubic_hermite(g.clone(), values.clone(), derivs, 1).unwrap();
        for (i, &t) in g.nodes().iter().enumerate() {
            assert_eq!(itp.eval(t).unwrap()[0], values[i]);
        }
    }

    #[test]
    fn linear_mode_reproduces_affine_functions_everywhere() {
        let g = chebyshev_grid(4, 1.0).unwrap();
        let values: Vec<f64> = g.nodes().iter().map(|&t| 2.0 * t + 1.0).collect();
        let itp = Interpolant::linear(g, values, 1).unwrap();
        for t in [0.0, 0.1, 0.33, 0.5, 0.77, 1.0] {
            assert_abs_diff_eq!(itp.eval(t).unwrap()[0], 2.0 * t + 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn piecewise_constant_left_semantics() {
        let g = uniform_grid(3, 1.0).unwrap();
        let itp = Interpolant::piecewise_constant_left(g, vec![10.0, 20.0], 1).unwrap();
        assert_eq!(itp.eval(0.25).unwrap()[0], 10.0);
        assert_eq!(itp.eval(0.75).unwrap()[0], 20.0);
        // Right-continuity at the interior edge, last-cell value at T.
        assert_eq!(itp.eval(0.5).unwrap()[0], 20.0);
        assert_eq!(itp.eval(1.0).unwrap()[0], 20.0);
        assert_eq!(itp.discontinuities(), &[0.5]);
    }

    #[test]
    fn evaluation_outside_span_is_an_error() {
        let g = uniform_grid(3, 1.0).unwrap();
        let itp = Interpolant::linear(g, vec![0.0, 1.0, 2.0], 1).unwrap();
        assert!(itp.eval(-0.5).is_err());
        assert!(itp.eval(1.5).is_err());
    }

    #[test]
    fn simpson_integrates_constants_to_the_horizon() {
        let g = chebyshev_grid(9, 4.0).unwrap();
        let ones = vec![1.0; g.len()];
        assert_abs_diff_eq!(simpson_integrate(&g, &ones).unwrap(), 4.0, epsilon = 1e-13);
    }

    #[test]
    fn simpson_is_exact_on_quadratics() {
        let g = uniform_grid(3, 1.0).unwrap();
        let samples: Vec<f64> = g.nodes().iter().map(|&t| t * t).collect();
        assert_eq!(simpson_integrate(&g, &samples).unwrap(), 1.0 / 3.0);

        // Non-uniform triple: the rule integrates the interpolating parabola
        // exactly, and for quadratic data that parabola is the function.
        let g2 = TimeGrid::from_nodes(vec![0.0, 0.3, 1.0], GridKind::Explicit).unwrap();
        let samples2: Vec<f64> = g2.nodes().iter().map(|&t| t * t).collect();
        assert_abs_diff_eq!(
            simpson_integrate(&g2, &samples2).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn simpson_on_chebyshev_grid_matches_sine_integral() {
        let g = chebyshev_grid(200, 1.0).unwrap();
        let samples: Vec<f64> = g
            .nodes()
            .iter()
            .map(|&t| (std::f64::consts::PI * t).sin())
            .collect();
        let reference = 2.0 / std::f64::consts::PI;
        assert_abs_diff_eq!(
            simpson_integrate(&g, &samples).unwrap(),
            reference,
            epsilon = 1e-8
        );
    }

    #[test]
    fn simpson_needs_three_nodes() {
        let g = uniform_grid(2, 1.0).unwrap();
        assert!(simpson_integrate(&g, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn node_masses_on_a_uniform_grid_are_trapezoid_weights() {
        let g = uniform_grid(5, 2.0).unwrap();
        assert_eq!(node_masses(&g), vec![0.25, 0.5, 0.5, 0.5, 0.25]);
    }

    #[test]
    fn rolling_average_of_constant_is_constant() {
        let g = uniform_grid(5, 2.0).unwrap();
        let itp = Interpolant::linear(g, vec![3.5; 5], 1).unwrap();
        let avg = rolling_average(&itp, 4).unwrap();
        for t in [0.0, 0.3, 1.0, 1.9, 2.0] {
            assert_abs_diff_eq!(avg.eval(t).unwrap()[0], 3.5, epsilon = 1e-13);
        }
    }

    #[test]
    fn rolling_average_of_identity_gives_cell_midpoints() {
        let g = uniform_grid(2, 1.0).unwrap();
        let itp = Interpolant::linear(g, vec![0.0, 1.0], 1).unwrap();
        let avg = rolling_average(&itp, 2).unwrap();
        assert_abs_diff_eq!(avg.value_at(0)[0], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(avg.value_at(1)[0], 0.75, epsilon = 1e-14);
    }

    #[test]
    fn rolling_average_covers_experiment_cell_count() {
        let g = uniform_grid(40, 3.0).unwrap();
        let values: Vec<f64> = g.nodes().iter().map(|&t| t.sin()).collect();
        let itp = Interpolant::linear(g, values, 1).unwrap();
        let avg = rolling_average(&itp, 50).unwrap();
        assert_eq!(avg.grid().len(), 51);
        assert_eq!(avg.horizon(), 3.0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn chebyshev_nodes_stay_inside_and_sorted(
                n in 1usize..64,
                horizon in 0.1f64..100.0,
            ) {
                let g = chebyshev_grid(n, horizon).unwrap();
                prop_assert_eq!(g.len(), n + 2);
                for w in g.nodes().windows(2) {
                    prop_assert!(w[0] < w[1]);
                }
                prop_assert_eq!(g.nodes()[0], 0.0);
                prop_assert_eq!(g.horizon(), horizon);
            }

            #[test]
            fn quadrature_weights_sum_to_the_horizon(
                n in 1usize..40,
                horizon in 0.1f64..50.0,
            ) {
                let g = chebyshev_grid(n, horizon).unwrap();
                let total: f64 = simpson_weights(&g).unwrap().iter().sum();
                prop_assert!((total - horizon).abs() <= 1e-12 * horizon);
            }

            #[test]
            fn node_masses_are_positive_and_sum_to_the_horizon(
                n in 1usize..40,
                horizon in 0.1f64..50.0,
            ) {
                let g = chebyshev_grid(n, horizon).unwrap();
                let m = node_masses(&g);
                for &mi in &m {
                    prop_assert!(mi > 0.0);
                }
                let total: f64 = m.iter().sum();
                prop_assert!((total - horizon).abs() <= 1e-12 * horizon);
            }

            #[test]
            fn quadrature_is_exact_on_affine_data(
                n in 1usize..40,
                horizon in 0.1f64..50.0,
                a in -5.0f64..5.0,
                b in -5.0f64..5.0,
            ) {
                // Each node triple integrates its parabola exactly and the
                // odd-count trapezoid tail is exact on affine data, so
                // a + b·t integrates to a·T + b·T²/2 on any grid.
                let g = chebyshev_grid(n, horizon).unwrap();
                let values: Vec<f64> = g.nodes().iter().map(|&t| a + b * t).collect();
                let integral = simpson_integrate(&g, &values).unwrap();
                let exact = a * horizon + 0.5 * b * horizon * horizon;
                let scale = (a.abs() + b.abs() * horizon) * horizon + 1.0;
                prop_assert!((integral - exact).abs() <= 1e-12 * scale);
            }

            #[test]
            fn uniform_quadrature_of_nonnegative_data_is_essentially_nonnegative(
                n in 3usize..64,
                horizon in 0.1f64..50.0,
                seed in any::<u64>(),
            ) {
                // On uniform grids every weight is positive (1,4,2,…,4,1
                // triples plus a trapezoid tail), so non-negative samples
                // integrate to an essentially non-negative value. Strongly
                // graded grids do not satisfy this: a boundary weight can
                // dip negative when adjacent spacings differ by more than
                // a factor of two.
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let g = uniform_grid(n, horizon).unwrap();
                let values: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(0.0..10.0)).collect();
                let max = values.iter().cloned().fold(0.0, f64::max);
                let integral = simpson_integrate(&g, &values).unwrap();
                prop_assert!(integral >= -1e-14 * horizon * max);
            }

            #[test]
            fn linear_interpolation_is_exact_at_nodes(
                n in 1usize..30,
                horizon in 0.1f64..20.0,
                seed in any::<u64>(),
            ) {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let g = chebyshev_grid(n, horizon).unwrap();
                let values: Vec<f64> = (0..g.len() * 2).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let itp = Interpolant::linear(g.clone(), values.clone(), 2).unwrap();
                for (i, &t) in g.nodes().iter().enumerate() {
                    let v = itp.eval(t).unwrap();
                    prop_assert_eq!(v.as_slice(), &values[2 * i..2 * i + 2]);
                }
            }
        }
    }
}
