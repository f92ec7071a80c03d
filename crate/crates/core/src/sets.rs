//! Box regions, uniform grids, one-step increment set estimation, and the
//! scheduling-parameter embedding used by the grid-based matrix inequalities.

use nalgebra::DVector;

use crate::error::EmbeddingError;
use crate::forms::{FormMatrices, SystemJacobians};
use crate::system::DtSystem;

/// Axis-aligned box given by per-dimension `[lo, hi]` intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, EmbeddingError> {
        assert_eq!(lo.len(), hi.len());
        for (dim, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if l > h {
                return Err(EmbeddingError::BadInterval { dim });
            }
        }
        Ok(BoxRegion { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, d: usize) -> f64 {
        self.hi[d] - self.lo[d]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.iter()
            .enumerate()
            .all(|(d, v)| *v >= self.lo[d] - tol && *v <= self.hi[d] + tol)
    }

    /// Scale the box about its center.
    pub fn inflate(&self, factor: f64) -> BoxRegion {
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for d in 0..self.dim() {
            let c = 0.5 * (self.lo[d] + self.hi[d]);
            let r = 0.5 * (self.hi[d] - self.lo[d]) * factor;
            lo.push(c - r);
            hi.push(c + r);
        }
        BoxRegion { lo, hi }
    }
}

/// Uniform grid over a box: equispaced points per dimension, endpoints
/// included. A degenerate interval gets a single point.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub region: BoxRegion,
    pub counts: Vec<usize>,
}

impl Grid {
    pub fn new(region: BoxRegion, counts: Vec<usize>) -> Self {
        assert_eq!(region.dim(), counts.len());
        let counts = counts
            .iter()
            .enumerate()
            .map(|(d, &c)| {
                if region.width(d) == 0.0 {
                    1
                } else {
                    c.max(2)
                }
            })
            .collect();
        Grid { region, counts }
    }

    /// Same point count in every dimension.
    pub fn uniform(region: BoxRegion, count: usize) -> Self {
        let n = region.dim();
        Grid::new(region, vec![count; n])
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of index `i` along dimension `d`.
    pub fn coord(&self, d: usize, i: usize) -> f64 {
        if self.counts[d] == 1 {
            self.region.lo[d]
        } else {
            self.region.lo[d]
                + self.region.width(d) * (i as f64) / ((self.counts[d] - 1) as f64)
        }
    }

    /// Lexicographic enumeration (last dimension varies fastest).
    pub fn iter(&self) -> GridIter<'_> {
        GridIter {
            grid: self,
            next: 0,
            total: self.len(),
        }
    }

    /// Point at flat lexicographic index `idx`.
    pub fn point(&self, mut idx: usize) -> Vec<f64> {
        let n = self.counts.len();
        let mut out = vec![0.0; n];
        for d in (0..n).rev() {
            let c = self.counts[d];
            out[d] = self.coord(d, idx % c);
            idx /= c;
        }
        out
    }
}

pub struct GridIter<'a> {
    grid: &'a Grid,
    next: usize,
    total: usize,
}

impl Iterator for GridIter<'_> {
    type Item = Vec<f64>;
    fn next(&mut self) -> Option<Vec<f64>> {
        if self.next >= self.total {
            return None;
        }
        let p = self.grid.point(self.next);
        self.next += 1;
        Some(p)
    }
}

/// Componentwise extremes of the one-step increment `f(x, w) - x` over a
/// grid on the region, inflated about the center by `inflation`.
pub fn estimate_dset(
    sys: &DtSystem,
    grid: &Grid,
    inflation: f64,
) -> Result<BoxRegion, EmbeddingError> {
    assert!(inflation >= 1.0, "inflation factor must be >= 1");
    let n_x = sys.vars.n_x();
    let n_w = sys.vars.n_w();
    assert_eq!(grid.region.dim(), n_x + n_w);
    let mut lo = vec![f64::INFINITY; n_x];
    let mut hi = vec![f64::NEG_INFINITY; n_x];
    for pt in grid.iter() {
        let x = DVector::from_column_slice(&pt[..n_x]);
        let w = DVector::from_column_slice(&pt[n_x..]);
        let next = sys.step(&x, &w)?;
        for i in 0..n_x {
            let d = next[i] - x[i];
            if !d.is_finite() {
                return Err(EmbeddingError::NonFiniteAtGrid);
            }
            lo[i] = lo[i].min(d);
            hi[i] = hi[i].max(d);
        }
    }
    Ok(BoxRegion { lo, hi }.inflate(inflation))
}

/// Scheduling map `p = η(x, w)`: a coordinate selection from the stacked
/// variable vector, together with the scheduling box and the rate box for
/// its one-step increments.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingMap {
    /// Selected indices into the stacked `(x, w)` vector.
    pub indices: Vec<usize>,
    /// Whether each scheduling coordinate comes from a state variable.
    pub state_mapped: Vec<bool>,
    /// Image box of the region under the selection.
    pub p_box: BoxRegion,
    /// Rate box for one-step scheduling increments.
    pub rate_box: BoxRegion,
}

impl SchedulingMap {
    pub fn n_p(&self) -> usize {
        self.indices.len()
    }

    /// Evaluate the map at a stacked `(x, w)` point.
    pub fn eval(&self, xw: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| xw[i]).collect()
    }
}

/// A scheduling map together with the machinery to evaluate the embedded
/// matrix functions `A(p) ... D(p)` at scheduling points.
#[derive(Debug, Clone)]
pub struct GridEmbedding {
    pub map: SchedulingMap,
    jac: SystemJacobians,
    /// Stacked (x, w) template: unselected coordinates are frozen at the
    /// region center.
    template: Vec<f64>,
    /// Number of state variables (split point of the stacked vector).
    split: usize,
}

impl GridEmbedding {
    /// Matrix functions evaluated at a scheduling point `p`.
    pub fn matrices_at(&self, p: &[f64]) -> Result<FormMatrices, EmbeddingError> {
        let mut xw = self.template.clone();
        for (k, &i) in self.map.indices.iter().enumerate() {
            xw[i] = p[k];
        }
        let x = DVector::from_column_slice(&xw[..self.split]);
        let w = DVector::from_column_slice(&xw[self.split..]);
        Ok(self.jac.eval(&x, &w)?)
    }
}

/// Build the scheduling map for `sys` on `region` (a box over the stacked
/// `(x, w)` vector).
///
/// `selection` lists the variable names mapped into `p`, in order; pass the
/// full name list (or use [`build_identity_embedding`]) for the identity
/// selection. The rate box uses the estimated increment set for state
/// coordinates and the symmetric input-range width for input coordinates.
pub fn build_embedding(
    sys: &DtSystem,
    region: &BoxRegion,
    selection: &[String],
    dset: &BoxRegion,
) -> Result<GridEmbedding, EmbeddingError> {
    let n_x = sys.vars.n_x();
    let n_all = sys.vars.n_vars();
    assert_eq!(region.dim(), n_all);
    assert_eq!(dset.dim(), n_x);

    let mut indices = Vec::with_capacity(selection.len());
    let mut state_mapped = Vec::with_capacity(selection.len());
    for name in selection {
        let i = sys
            .vars
            .index_of(name)
            .ok_or_else(|| EmbeddingError::UnknownVariable(name.clone()))?;
        indices.push(i);
        state_mapped.push(i < n_x);
    }

    let p_lo: Vec<f64> = indices.iter().map(|&i| region.lo[i]).collect();
    let p_hi: Vec<f64> = indices.iter().map(|&i| region.hi[i]).collect();
    let mut r_lo = Vec::with_capacity(indices.len());
    let mut r_hi = Vec::with_capacity(indices.len());
    for (&i, &is_state) in indices.iter().zip(&state_mapped) {
        if is_state {
            r_lo.push(dset.lo[i]);
            r_hi.push(dset.hi[i]);
        } else {
            // Input-rate coordinates are unbounded in principle; bound them
            // by the symmetric input range width for grid bookkeeping only.
            let width = region.hi[i] - region.lo[i];
            r_lo.push(-width);
            r_hi.push(width);
        }
    }

    let map = SchedulingMap {
        indices,
        state_mapped,
        p_box: BoxRegion::new(p_lo, p_hi)?,
        rate_box: BoxRegion::new(r_lo, r_hi)?,
    };
    Ok(GridEmbedding {
        map,
        jac: SystemJacobians::new(sys),
        template: region.center(),
        split: n_x,
    })
}

/// Identity-selection embedding `p = col(x, w)`.
pub fn build_identity_embedding(
    sys: &DtSystem,
    region: &BoxRegion,
    dset: &BoxRegion,
) -> Result<GridEmbedding, EmbeddingError> {
    let names: Vec<String> = sys.vars.names().to_vec();
    build_embedding(sys, region, &names, dset)
}
