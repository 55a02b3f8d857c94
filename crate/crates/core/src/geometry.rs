//! Planar domains, uniform Cartesian grids with interior/boundary masks,
//! bilinear interpolation, circle averages and grid quadrature.
//!
//! A node is *interior* when it lies strictly inside the domain and all four
//! of its 5-point neighbours are contained in the domain as well. Dirichlet
//! data lives on the first ring of excluded nodes, which by construction are
//! still contained in the domain (every neighbour of an interior node is).
//! Rectangles use closed membership so lattice-aligned edges behave like
//! textbook grids; disks and annuli use strict membership.

use std::fmt;
use std::sync::Arc;

/// A point in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }
}

/// Shape of the computational domain. All lengths are dimensionless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainSpec {
    /// Disk of given radius centred at the origin.
    Disk { radius: f64 },
    /// Axis-aligned rectangle `[0, width] x [0, height]`.
    Rectangle { width: f64, height: f64 },
    /// Annulus centred at the origin.
    Annulus { inner_radius: f64, outer_radius: f64 },
}

impl DomainSpec {
    pub fn disk(radius: f64) -> Self {
        assert!(radius > 0.0, "disk radius must be positive");
        DomainSpec::Disk { radius }
    }

    pub fn rectangle(width: f64, height: f64) -> Self {
        assert!(width > 0.0 && height > 0.0, "rectangle sides must be positive");
        DomainSpec::Rectangle { width, height }
    }

    pub fn annulus(inner_radius: f64, outer_radius: f64) -> Self {
        assert!(
            inner_radius > 0.0 && inner_radius < outer_radius,
            "annulus radii must satisfy 0 < inner < outer"
        );
        DomainSpec::Annulus { inner_radius, outer_radius }
    }

    /// Exact membership test. Strict for disk and annulus, closed for the
    /// rectangle (so that lattice-aligned rectangle edges carry the Dirichlet
    /// ring exactly on the boundary).
    pub fn contains(&self, p: Point) -> bool {
        match *self {
            DomainSpec::Disk { radius } => p.x * p.x + p.y * p.y < radius * radius,
            DomainSpec::Rectangle { width, height } => {
                p.x >= 0.0 && p.x <= width && p.y >= 0.0 && p.y <= height
            }
            DomainSpec::Annulus { inner_radius, outer_radius } => {
                let r2 = p.x * p.x + p.y * p.y;
                r2 > inner_radius * inner_radius && r2 < outer_radius * outer_radius
            }
        }
    }

    /// Distance from `p` to the boundary (negative outside is not needed;
    /// callers only use this for interior points).
    pub fn boundary_distance(&self, p: Point) -> f64 {
        match *self {
            DomainSpec::Disk { radius } => radius - p.norm(),
            DomainSpec::Rectangle { width, height } => {
                let dx = p.x.min(width - p.x);
                let dy = p.y.min(height - p.y);
                dx.min(dy)
            }
            DomainSpec::Annulus { inner_radius, outer_radius } => {
                let r = p.norm();
                (outer_radius - r).min(r - inner_radius)
            }
        }
    }

    /// Bounding box as (lower-left, upper-right).
    pub fn bounding_box(&self) -> (Point, Point) {
        match *self {
            DomainSpec::Disk { radius } => (Point::new(-radius, -radius), Point::new(radius, radius)),
            DomainSpec::Rectangle { width, height } => (Point::new(0.0, 0.0), Point::new(width, height)),
            DomainSpec::Annulus { outer_radius, .. } => (
                Point::new(-outer_radius, -outer_radius),
                Point::new(outer_radius, outer_radius),
            ),
        }
    }

    /// Exact area of the domain.
    pub fn area(&self) -> f64 {
        use std::f64::consts::PI;
        match *self {
            DomainSpec::Disk { radius } => PI * radius * radius,
            DomainSpec::Rectangle { width, height } => width * height,
            DomainSpec::Annulus { inner_radius, outer_radius } => {
                PI * (outer_radius * outer_radius - inner_radius * inner_radius)
            }
        }
    }

    /// Diameter of the bounding circle, used for scale-free defaults.
    pub fn diameter(&self) -> f64 {
        match *self {
            DomainSpec::Disk { radius } => 2.0 * radius,
            DomainSpec::Rectangle { width, height } => (width * width + height * height).sqrt(),
            DomainSpec::Annulus { outer_radius, .. } => 2.0 * outer_radius,
        }
    }

    /// A point well inside the domain, used to seed searches.
    pub fn anchor(&self) -> Point {
        match *self {
            DomainSpec::Disk { .. } => Point::new(0.0, 0.0),
            DomainSpec::Rectangle { width, height } => Point::new(0.5 * width, 0.5 * height),
            DomainSpec::Annulus { inner_radius, outer_radius } => {
                Point::new(0.5 * (inner_radius + outer_radius), 0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeometryError {
    /// No lattice node qualifies as interior at the requested spacing.
    EmptyInterior,
    /// Non-positive grid spacing.
    InvalidSpacing,
    /// A query point (or a circle sample) left the grid or the domain.
    OutOfDomain,
    /// Field or boundary table does not belong to this grid.
    GridMismatch,
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::EmptyInterior => write!(f, "grid has no interior nodes"),
            GeometryError::InvalidSpacing => write!(f, "grid spacing must be positive"),
            GeometryError::OutOfDomain => write!(f, "point outside grid or domain"),
            GeometryError::GridMismatch => write!(f, "field does not match grid"),
        }
    }
}

impl std::error::Error for GeometryError {}

struct GridData {
    domain: DomainSpec,
    origin: Point,
    h: f64,
    nx: usize,
    ny: usize,
    /// Lattice index -> interior slot, -1 when not interior.
    interior_id: Vec<i32>,
    /// Interior slot -> lattice (ix, iy).
    interior_nodes: Vec<(usize, usize)>,
    /// Lattice index -> boundary slot, -1 when not a Dirichlet site.
    boundary_id: Vec<i32>,
    /// Boundary slot -> lattice (ix, iy), row-major order.
    boundary_nodes: Vec<(usize, usize)>,
}

/// Uniform lattice over the domain's bounding box with interior mask.
/// Cheap to clone; all data is shared and immutable.
#[derive(Clone)]
pub struct Grid {
    data: Arc<GridData>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("domain", &self.data.domain)
            .field("h", &self.data.h)
            .field("nx", &self.data.nx)
            .field("ny", &self.data.ny)
            .field("interior", &self.data.interior_nodes.len())
            .finish()
    }
}

/// Builds the uniform grid for `domain` at spacing `h`.
pub fn build_grid(domain: DomainSpec, h: f64) -> Result<Grid, GeometryError> {
    if !(h > 0.0) {
        return Err(GeometryError::InvalidSpacing);
    }
    let (lo, hi) = domain.bounding_box();
    let nx = ((hi.x - lo.x) / h - 1e-9).ceil() as usize + 1;
    let ny = ((hi.y - lo.y) / h - 1e-9).ceil() as usize + 1;

    let node = |ix: usize, iy: usize| Point::new(lo.x + ix as f64 * h, lo.y + iy as f64 * h);
    let mut interior_id = vec![-1i32; nx * ny];
    let mut interior_nodes = Vec::new();
    for iy in 0..ny {
        for ix in 0..nx {
            let p = node(ix, iy);
            let inside = domain.contains(p)
                && domain.contains(Point::new(p.x - h, p.y))
                && domain.contains(Point::new(p.x + h, p.y))
                && domain.contains(Point::new(p.x, p.y - h))
                && domain.contains(Point::new(p.x, p.y + h));
            if inside {
                interior_id[iy * nx + ix] = interior_nodes.len() as i32;
                interior_nodes.push((ix, iy));
            }
        }
    }
    if interior_nodes.is_empty() {
        return Err(GeometryError::EmptyInterior);
    }

    // Dirichlet sites: non-interior nodes with at least one interior 4-neighbour.
    let mut boundary_id = vec![-1i32; nx * ny];
    let mut boundary_nodes = Vec::new();
    for iy in 0..ny {
        for ix in 0..nx {
            if interior_id[iy * nx + ix] >= 0 {
                continue;
            }
            let mut touches = false;
            if ix > 0 && interior_id[iy * nx + ix - 1] >= 0 {
                touches = true;
            }
            if ix + 1 < nx && interior_id[iy * nx + ix + 1] >= 0 {
                touches = true;
            }
            if iy > 0 && interior_id[(iy - 1) * nx + ix] >= 0 {
                touches = true;
            }
            if iy + 1 < ny && interior_id[(iy + 1) * nx + ix] >= 0 {
                touches = true;
            }
            if touches {
                boundary_id[iy * nx + ix] = boundary_nodes.len() as i32;
                boundary_nodes.push((ix, iy));
            }
        }
    }

    Ok(Grid {
        data: Arc::new(GridData {
            domain,
            origin: lo,
            h,
            nx,
            ny,
            interior_id,
            interior_nodes,
            boundary_id,
            boundary_nodes,
        }),
    })
}

impl Grid {
    pub fn domain(&self) -> DomainSpec {
        self.data.domain
    }

    pub fn h(&self) -> f64 {
        self.data.h
    }

    pub fn origin(&self) -> Point {
        self.data.origin
    }

    pub fn nx(&self) -> usize {
        self.data.nx
    }

    pub fn ny(&self) -> usize {
        self.data.ny
    }

    pub fn n_interior(&self) -> usize {
        self.data.interior_nodes.len()
    }

    pub fn n_boundary(&self) -> usize {
        self.data.boundary_nodes.len()
    }

    pub fn node_point(&self, ix: usize, iy: usize) -> Point {
        Point::new(
            self.data.origin.x + ix as f64 * self.data.h,
            self.data.origin.y + iy as f64 * self.data.h,
        )
    }

    /// Lattice coordinates of interior slot `k`.
    pub fn interior_node(&self, k: usize) -> (usize, usize) {
        self.data.interior_nodes[k]
    }

    pub fn interior_point(&self, k: usize) -> Point {
        let (ix, iy) = self.data.interior_nodes[k];
        self.node_point(ix, iy)
    }

    pub fn interior_slot(&self, ix: usize, iy: usize) -> Option<usize> {
        let id = self.data.interior_id[iy * self.data.nx + ix];
        (id >= 0).then_some(id as usize)
    }

    pub fn boundary_slot(&self, ix: usize, iy: usize) -> Option<usize> {
        let id = self.data.boundary_id[iy * self.data.nx + ix];
        (id >= 0).then_some(id as usize)
    }

    pub fn boundary_points(&self) -> impl Iterator<Item = Point> + '_ {
        self.data
            .boundary_nodes
            .iter()
            .map(move |&(ix, iy)| self.node_point(ix, iy))
    }

    pub fn is_interior(&self, ix: usize, iy: usize) -> bool {
        self.data.interior_id[iy * self.data.nx + ix] >= 0
    }

    /// Structural identity; Arc-shared grids are always equal to themselves.
    pub fn same_grid(&self, other: &Grid) -> bool {
        Arc::ptr_eq(&self.data, &other.data)
            || (self.data.domain == other.data.domain
                && self.data.h == other.data.h
                && self.data.nx == other.data.nx
                && self.data.ny == other.data.ny
                && self.data.origin == other.data.origin)
    }

    /// Zero field on this grid.
    pub fn zero_field(&self) -> GridField {
        GridField {
            grid: self.clone(),
            values: vec![0.0; self.n_interior()],
            boundary: None,
        }
    }

    /// Field from a function of the node position.
    pub fn field_from_fn(&self, f: impl Fn(Point) -> f64) -> GridField {
        let values = (0..self.n_interior()).map(|k| f(self.interior_point(k))).collect();
        GridField { grid: self.clone(), values, boundary: None }
    }

    /// Boundary table from a function of the Dirichlet site position.
    pub fn boundary_from_fn(&self, f: impl Fn(Point) -> f64) -> Vec<f64> {
        self.boundary_points().map(f).collect()
    }
}

/// Scalar values on the interior nodes of a grid. The Dirichlet trace is
/// implicitly zero unless a boundary table is attached.
#[derive(Clone, Debug)]
pub struct GridField {
    grid: Grid,
    values: Vec<f64>,
    boundary: Option<Arc<Vec<f64>>>,
}

impl GridField {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self, GeometryError> {
        if values.len() != grid.n_interior() {
            return Err(GeometryError::GridMismatch);
        }
        Ok(GridField { grid: grid.clone(), values, boundary: None })
    }

    pub fn with_boundary(mut self, boundary: Vec<f64>) -> Result<Self, GeometryError> {
        if boundary.len() != self.grid.n_boundary() {
            return Err(GeometryError::GridMismatch);
        }
        self.boundary = Some(Arc::new(boundary));
        Ok(self)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn boundary(&self) -> Option<&[f64]> {
        self.boundary.as_deref().map(|v| v.as_slice())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
            && self.boundary.as_ref().is_none_or(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn all_positive(&self) -> bool {
        self.values.iter().all(|&v| v > 0.0)
    }

    /// Maximum value and its node, ties broken by row-major (lexicographic)
    /// slot order for determinism.
    pub fn argmax(&self) -> (f64, usize) {
        let mut best = f64::NEG_INFINITY;
        let mut slot = 0;
        for (k, &v) in self.values.iter().enumerate() {
            if v > best {
                best = v;
                slot = k;
            }
        }
        (best, slot)
    }

    /// Value of the lattice node (ix, iy) as seen by stencils and sampling:
    /// interior value, attached boundary value, or zero.
    fn lattice_value(&self, ix: usize, iy: usize) -> f64 {
        if let Some(k) = self.grid.interior_slot(ix, iy) {
            return self.values[k];
        }
        if let (Some(b), Some(s)) = (&self.boundary, self.grid.boundary_slot(ix, iy)) {
            return b[s];
        }
        0.0
    }
}

/// Bilinear interpolation of `field` at `point`. Cells touching the excluded
/// ring use the attached boundary value (or zero) at non-interior corners;
/// exact on fields affine in x and y over one cell.
pub fn sample_bilinear(field: &GridField, point: Point) -> Result<f64, GeometryError> {
    let g = field.grid();
    let (nx, ny, h, o) = (g.nx(), g.ny(), g.h(), g.origin());
    let fx = (point.x - o.x) / h;
    let fy = (point.y - o.y) / h;
    if !(fx >= -1e-12 && fx <= (nx - 1) as f64 + 1e-12 && fy >= -1e-12 && fy <= (ny - 1) as f64 + 1e-12)
    {
        return Err(GeometryError::OutOfDomain);
    }
    let cx = (fx.floor() as usize).min(nx - 2);
    let cy = (fy.floor() as usize).min(ny - 2);
    let tx = (fx - cx as f64).clamp(0.0, 1.0);
    let ty = (fy - cy as f64).clamp(0.0, 1.0);
    let v00 = field.lattice_value(cx, cy);
    let v10 = field.lattice_value(cx + 1, cy);
    let v01 = field.lattice_value(cx, cy + 1);
    let v11 = field.lattice_value(cx + 1, cy + 1);
    Ok(v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty + v11 * tx * ty)
}

/// Default angular resolution for circle averages.
pub const N_THETA_DEFAULT: usize = 256;

/// Trapezoidal average of `field` over the circle of radius `r` about
/// `center`, sampled at `n_theta` equispaced angles.
pub fn circle_average(
    field: &GridField,
    center: Point,
    r: f64,
    n_theta: usize,
) -> Result<f64, GeometryError> {
    assert!(n_theta >= 8, "circle_average needs at least 8 angles");
    let domain = field.grid().domain();
    let mut sum = 0.0;
    for k in 0..n_theta {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / n_theta as f64;
        let p = Point::new(center.x + r * theta.cos(), center.y + r * theta.sin());
        if !domain.contains(p) {
            return Err(GeometryError::OutOfDomain);
        }
        sum += sample_bilinear(field, p)?;
    }
    Ok(sum / n_theta as f64)
}

/// Grid quadrature: h^2 times the sum over interior nodes. The Dirichlet
/// ring contributes zero, consistent with homogeneous data.
pub fn quadrature(field: &GridField) -> f64 {
    let h = field.grid().h();
    h * h * field.values().iter().sum::<f64>()
}

/// Plain-text field dump: `nx ny h x0 y0` on the first line, then ny rows of
/// nx values with non-interior nodes written as 0.
pub fn dump_field(field: &GridField) -> String {
    let g = field.grid();
    let mut out = String::new();
    out.push_str(&format!(
        "{} {} {:.15e} {:.15e} {:.15e}\n",
        g.nx(),
        g.ny(),
        g.h(),
        g.origin().x,
        g.origin().y
    ));
    for iy in 0..g.ny() {
        let mut row = String::new();
        for ix in 0..g.nx() {
            if ix > 0 {
                row.push(' ');
            }
            let v = match g.interior_slot(ix, iy) {
                Some(k) => field.values()[k],
                None => 0.0,
            };
            row.push_str(&format!("{:.15e}", v));
        }
        row.push('\n');
        out.push_str(&row);
    }
    out
}
