//! Cartesian triangular background mesh of the unit square, nodal fields, and
//! classification of cells and facets relative to a discrete level-set.
//!
//! Node `(i, j)` sits at `(i/(nx-1), j/(ny-1))` and has flat index `i*ny + j`.
//! Every square cell `(i, j)` is split along its lower-left to upper-right
//! diagonal into
//!
//! * triangle `2c`:     `(i,j) → (i+1,j) → (i+1,j+1)`
//! * triangle `2c + 1`: `(i,j) → (i+1,j+1) → (i,j+1)`
//!
//! with `c = i*(ny-1) + j`. Both are counter-clockwise.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::geometry::ScalarField;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Facet {
    pub vertices: [usize; 2],
    /// Adjacent triangles; `cells[1]` is only meaningful when `n_cells == 2`.
    pub cells: [usize; 2],
    pub n_cells: u8,
}

impl Facet {
    pub fn is_interior(&self) -> bool {
        self.n_cells == 2
    }
}

#[derive(Debug, Clone)]
pub struct BackgroundMesh {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub facets: Vec<Facet>,
    /// For every triangle, the indices of its three facets; facet `k` is
    /// opposite local vertex `k`.
    pub cell_facets: Vec<[usize; 3]>,
}

impl BackgroundMesh {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidArgument(format!(
                "background mesh needs at least 2x2 nodes, got {nx}x{ny}"
            )));
        }
        let dx = 1.0 / (nx - 1) as f64;
        let dy = 1.0 / (ny - 1) as f64;
        let mut vertices = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                vertices.push([i as f64 * dx, j as f64 * dy]);
            }
        }
        let v = |i: usize, j: usize| i * ny + j;
        let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        for i in 0..nx - 1 {
            for j in 0..ny - 1 {
                triangles.push([v(i, j), v(i + 1, j), v(i + 1, j + 1)]);
                triangles.push([v(i, j), v(i + 1, j + 1), v(i, j + 1)]);
            }
        }

        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut facets: Vec<Facet> = Vec::new();
        let mut cell_facets = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let mut local = [0usize; 3];
            for (k, slot) in local.iter_mut().enumerate() {
                let a = tri[(k + 1) % 3];
                let b = tri[(k + 2) % 3];
                let key = (a.min(b), a.max(b));
                let id = *lookup.entry(key).or_insert_with(|| {
                    facets.push(Facet {
                        vertices: [key.0, key.1],
                        cells: [t, usize::MAX],
                        n_cells: 0,
                    });
                    facets.len() - 1
                });
                let f = &mut facets[id];
                if f.n_cells == 1 {
                    f.cells[1] = t;
                }
                f.n_cells += 1;
                *slot = id;
            }
            cell_facets.push(local);
        }

        Ok(Self {
            nx,
            ny,
            dx,
            dy,
            vertices,
            triangles,
            facets,
            cell_facets,
        })
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    pub fn n_vertices(&self) -> usize {
        self.nx * self.ny
    }

    /// Maximum cell diameter, `sqrt(dx² + dy²)`.
    pub fn h(&self) -> f64 {
        (self.dx * self.dx + self.dy * self.dy).sqrt()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }
}

/// Nodal values on the `nx × ny` grid, row-major with flat index `i*ny + j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl FieldGrid {
    pub fn new(nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nx * ny {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {nx}x{ny} grid",
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("grid value at flat index {k}")));
        }
        Ok(Self { nx, ny, values })
    }

    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            values: vec![0.0; nx * ny],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ny + j]
    }

    pub fn same_shape(&self, other: &FieldGrid) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    pub(crate) fn check_same_shape(&self, other: &FieldGrid, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.nx, self.ny, other.nx, other.ny
            )))
        }
    }
}

/// Evaluates `field` at every mesh node.
pub fn interpolate_nodal(field: &ScalarField, mesh: &BackgroundMesh) -> Result<FieldGrid> {
    let values = mesh.vertices.iter().map(|&[x, y]| field.eval(x, y)).collect();
    FieldGrid::new(mesh.nx, mesh.ny, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellClassification {
    /// Triangles with at least one vertex where φ_h < 0, ascending.
    pub active_cells: Vec<usize>,
    /// Active triangles with at least one vertex where φ_h >= 0, ascending.
    pub cut_cells: Vec<usize>,
    /// Interior facets of the active mesh touching a cut cell.
    pub stabilized_facets: Vec<usize>,
    /// Facets with exactly one adjacent active cell.
    pub omega_boundary_facets: Vec<usize>,
    pub is_active: Vec<bool>,
    pub is_cut: Vec<bool>,
}

impl CellClassification {
    /// The active neighbor of a boundary facet of Ω_h.
    pub fn active_side(&self, facet: &Facet) -> usize {
        if self.is_active[facet.cells[0]] {
            facet.cells[0]
        } else {
            facet.cells[1]
        }
    }
}

pub fn classify_cells(mesh: &BackgroundMesh, phi_h: &FieldGrid) -> Result<CellClassification> {
    if phi_h.nx != mesh.nx || phi_h.ny != mesh.ny {
        return Err(Error::ShapeMismatch(format!(
            "level-set {}x{} on a {}x{} mesh",
            phi_h.nx, phi_h.ny, mesh.nx, mesh.ny
        )));
    }
    let nt = mesh.triangles.len();
    let mut is_active = vec![false; nt];
    let mut is_cut = vec![false; nt];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let vals = tri.map(|v| phi_h.values[v]);
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        is_active[t] = min < 0.0;
        is_cut[t] = is_active[t] && max >= 0.0;
    }
    let active_cells: Vec<usize> = (0..nt).filter(|&t| is_active[t]).collect();
    if active_cells.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let cut_cells = (0..nt).filter(|&t| is_cut[t]).collect();

    let mut stabilized_facets = Vec::new();
    let mut omega_boundary_facets = Vec::new();
    for (e, f) in mesh.facets.iter().enumerate() {
        let adj = &f.cells[..f.n_cells as usize];
        let n_active = adj.iter().filter(|&&t| is_active[t]).count();
        if n_active == 1 {
            omega_boundary_facets.push(e);
        } else if n_active == 2 && adj.iter().any(|&t| is_cut[t]) {
            stabilized_facets.push(e);
        }
    }

    Ok(CellClassification {
        active_cells,
        cut_cells,
        stabilized_facets,
        omega_boundary_facets,
        is_active,
        is_cut,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMasks {
    pub nx: usize,
    pub ny: usize,
    /// Vertices of Ω_h.
    pub s0: Vec<bool>,
    /// S0 eroded by one 8-neighborhood layer; grid-border pixels excluded.
    pub s1: Vec<bool>,
}

impl PixelMasks {
    pub fn count_s0(&self) -> usize {
        self.s0.iter().filter(|&&b| b).count()
    }

    pub fn count_s1(&self) -> usize {
        self.s1.iter().filter(|&&b| b).count()
    }
}

/// Vertices incident to at least one active cell.
pub fn active_vertices(mesh: &BackgroundMesh, cls: &CellClassification) -> Vec<bool> {
    let mut s0 = vec![false; mesh.n_vertices()];
    for &t in &cls.active_cells {
        for &v in &mesh.triangles[t] {
            s0[v] = true;
        }
    }
    s0
}

pub fn build_pixel_masks(cls: &CellClassification, mesh: &BackgroundMesh) -> PixelMasks {
    let (nx, ny) = (mesh.nx, mesh.ny);
    let s0 = active_vertices(mesh, cls);
    let mut s1 = vec![false; nx * ny];
    for i in 1..nx.saturating_sub(1) {
        for j in 1..ny.saturating_sub(1) {
            s1[i * ny + j] = (i - 1..=i + 1)
                .all(|a| (j - 1..=j + 1).all(|b| s0[a * ny + b]));
        }
    }
    PixelMasks { nx, ny, s0, s1 }
}

/// Convenience: classification and masks straight from a nodal level-set.
pub fn masks_for(phi_h: &FieldGrid) -> Result<PixelMasks> {
    let mesh = BackgroundMesh::new(phi_h.nx, phi_h.ny)?;
    let cls = classify_cells(&mesh, phi_h)?;
    Ok(build_pixel_masks(&cls, &mesh))
}

/// Points of the discrete zero level-set, found by linear interpolation
/// along horizontal and vertical grid edges where φ_h changes sign.
pub fn zero_level_points(phi_h: &FieldGrid) -> Vec<[f64; 2]> {
    let (nx, ny) = (phi_h.nx, phi_h.ny);
    let dx = 1.0 / (nx - 1) as f64;
    let dy = 1.0 / (ny - 1) as f64;
    let mut pts = Vec::new();
    let mut edge = |pa: [f64; 2], pb: [f64; 2], a: f64, b: f64| {
        if (a < 0.0) != (b < 0.0) {
            let t = a / (a - b);
            pts.push([pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]);
        }
    };
    for i in 0..nx {
        for j in 0..ny {
            let p = [i as f64 * dx, j as f64 * dy];
            let v = phi_h.get(i, j);
            if i + 1 < nx {
                edge(p, [p[0] + dx, p[1]], v, phi_h.get(i + 1, j));
            }
            if j + 1 < ny {
                edge(p, [p[0], p[1] + dy], v, phi_h.get(i, j + 1));
            }
        }
    }
    pts
}
