//! Stabilized φ-FEM for `−Δu = f` in Ω = {φ < 0}, `u = g` on Γ = {φ = 0}.
//!
//! With P1 fields `φ_h, g_h, f_h` on the background mesh, the unknown is the
//! P1 field `w_h` on the active mesh `T_h`, and the solution is
//! `u_h = φ_h w_h + g_h`. Test functions are `v_h = φ_h s_h`. The discrete
//! problem reads
//!
//! ```text
//! ∫_{Ω_h} ∇u·∇v − ∫_{∂Ω_h} ∂_n u v + G_h(u, v) = ∫_{Ω_h} f v + G_h^rhs(v)
//! G_h(u, v)    = σ h Σ_{E ∈ F_h^Γ} ∫_E [∂_n u][∂_n v] + σ h² Σ_{T ∈ T_h^Γ} ∫_T Δu Δv
//! G_h^rhs(v)   = −σ h² Σ_{T ∈ T_h^Γ} ∫_T f Δv
//! ```
//!
//! Every term involving `g_h` is moved to the right-hand side. Products of
//! two P1 factors are quadratic per cell, so cell integrals use a degree-4
//! rule and facet integrals a two-point Gauss rule; both are exact here.

use serde::Serialize;

use crate::exec::Execution;
use crate::geometry::ScalarField;
use crate::linalg::{self, CsrMatrix};
use crate::mesh::{
    self, active_vertices, classify_cells, interpolate_nodal, BackgroundMesh, CellClassification,
    FieldGrid,
};
use crate::{Error, Result};

/// Relative residual every accepted solve must reach.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

// Dunavant degree-4 rule: (barycentric coordinates, weight relative to area).
const TRI_A1: f64 = 0.445_948_490_915_964_886_318_329_253_883_05;
const TRI_W1: f64 = 0.223_381_589_678_011_465_695_007_008_433_12;
const TRI_A2: f64 = 0.091_576_213_509_770_743_459_571_463_402_202;
const TRI_W2: f64 = 0.109_951_743_655_321_867_638_326_324_900_21;

fn triangle_rule() -> [([f64; 3], f64); 6] {
    let b1 = 1.0 - 2.0 * TRI_A1;
    let b2 = 1.0 - 2.0 * TRI_A2;
    [
        ([TRI_A1, TRI_A1, b1], TRI_W1),
        ([TRI_A1, b1, TRI_A1], TRI_W1),
        ([b1, TRI_A1, TRI_A1], TRI_W1),
        ([TRI_A2, TRI_A2, b2], TRI_W2),
        ([TRI_A2, b2, TRI_A2], TRI_W2),
        ([b2, TRI_A2, TRI_A2], TRI_W2),
    ]
}

/// Two-point Gauss on `[0, 1]`: (parameter, weight relative to length).
fn edge_rule() -> [(f64, f64); 2] {
    let d = 0.5 / 3f64.sqrt();
    [(0.5 - d, 0.5), (0.5 + d, 0.5)]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DofMap {
    /// `usize::MAX` for vertices outside Ω_h.
    pub vertex_to_dof: Vec<usize>,
    pub dof_to_vertex: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &BackgroundMesh, cls: &CellClassification) -> Self {
        let used = active_vertices(mesh, cls);
        let mut vertex_to_dof = vec![usize::MAX; used.len()];
        let mut dof_to_vertex = Vec::new();
        for (v, &u) in used.iter().enumerate() {
            if u {
                vertex_to_dof[v] = dof_to_vertex.len();
                dof_to_vertex.push(v);
            }
        }
        Self {
            vertex_to_dof,
            dof_to_vertex,
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.dof_to_vertex.len()
    }

    #[inline]
    pub fn dof(&self, vertex: usize) -> Option<usize> {
        let d = self.vertex_to_dof[vertex];
        (d != usize::MAX).then_some(d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

/// A manufactured problem: `f = −Δu_exact`, `g = u_exact`.
#[derive(Debug, Clone)]
pub struct PoissonCase {
    pub name: String,
    pub f: ScalarField,
    pub g: ScalarField,
    pub u_exact: ScalarField,
}

impl PoissonCase {
    /// `u = sin(πx) sin(πy)`.
    pub fn smooth_sine() -> Self {
        use std::f64::consts::PI;
        let u = ScalarField::new(|x, y| (PI * x).sin() * (PI * y).sin());
        Self {
            name: "smooth".into(),
            f: ScalarField::new(|x, y| 2.0 * PI * PI * (PI * x).sin() * (PI * y).sin()),
            g: u.clone(),
            u_exact: u,
        }
    }

    /// `u = 1 + 2x − y`, reproduced exactly by the scheme.
    pub fn affine() -> Self {
        let u = ScalarField::new(|x, y| 1.0 + 2.0 * x - y);
        Self {
            name: "affine".into(),
            f: ScalarField::constant(0.0),
            g: u.clone(),
            u_exact: u,
        }
    }
}

/// Geometry and nodal data of one triangle.
struct Cell {
    verts: [usize; 3],
    area: f64,
    grad_lambda: [[f64; 2]; 3],
    phi: [f64; 3],
    grad_phi: [f64; 2],
    grad_g: [f64; 2],
    f: [f64; 3],
}

impl Cell {
    fn new(mesh: &BackgroundMesh, t: usize, phi: &FieldGrid, f: &FieldGrid, g: &FieldGrid) -> Result<Self> {
        let verts = mesh.triangles[t];
        let [p0, p1, p2] = verts.map(|v| mesh.vertices[v]);
        let twice = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        if twice.abs() <= f64::EPSILON * (mesh.dx * mesh.dy) {
            return Err(Error::Degenerate(format!("triangle {t} has zero area")));
        }
        let grad_lambda = [
            [(p1[1] - p2[1]) / twice, (p2[0] - p1[0]) / twice],
            [(p2[1] - p0[1]) / twice, (p0[0] - p2[0]) / twice],
            [(p0[1] - p1[1]) / twice, (p1[0] - p0[0]) / twice],
        ];
        let phi_v = verts.map(|v| phi.values[v]);
        let g_v = verts.map(|v| g.values[v]);
        let combine = |vals: [f64; 3]| {
            let mut acc = [0.0; 2];
            for k in 0..3 {
                acc[0] += vals[k] * grad_lambda[k][0];
                acc[1] += vals[k] * grad_lambda[k][1];
            }
            acc
        };
        Ok(Self {
            verts,
            area: 0.5 * twice.abs(),
            grad_lambda,
            phi: phi_v,
            grad_phi: combine(phi_v),
            grad_g: combine(g_v),
            f: verts.map(|v| f.values[v]),
        })
    }

    fn local_index(&self, vertex: usize) -> Option<usize> {
        self.verts.iter().position(|&v| v == vertex)
    }

    fn phi_at(&self, lam: &[f64; 3]) -> f64 {
        self.phi[0] * lam[0] + self.phi[1] * lam[1] + self.phi[2] * lam[2]
    }

    /// Value and gradient of `φ_h λ_k` at barycentric point `lam`.
    fn trial(&self, k: usize, lam: &[f64; 3]) -> (f64, [f64; 2]) {
        let phi = self.phi_at(lam);
        let gl = self.grad_lambda[k];
        (
            phi * lam[k],
            [
                lam[k] * self.grad_phi[0] + phi * gl[0],
                lam[k] * self.grad_phi[1] + phi * gl[1],
            ],
        )
    }

    /// `Δ(φ_h λ_k) = 2 ∇φ_h · ∇λ_k`, constant on the cell.
    fn laplacian(&self, k: usize) -> f64 {
        2.0 * dot(self.grad_phi, self.grad_lambda[k])
    }

    /// Barycentric coordinates of the point `a + s (b − a)` on the edge `(a, b)`.
    fn edge_point(&self, a: usize, b: usize, s: f64) -> [f64; 3] {
        let mut lam = [0.0; 3];
        lam[self.local_index(a).expect("edge vertex in cell")] = 1.0 - s;
        lam[self.local_index(b).expect("edge vertex in cell")] = s;
        lam
    }
}

#[inline]
fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Local contributions of one integration entity, in global dof indices.
#[derive(Default)]
struct Contribution {
    matrix: Vec<(usize, usize, f64)>,
    rhs: Vec<(usize, f64)>,
}

struct Assembler<'a> {
    mesh: &'a BackgroundMesh,
    cls: &'a CellClassification,
    map: &'a DofMap,
    phi: &'a FieldGrid,
    f: &'a FieldGrid,
    g: &'a FieldGrid,
    sigma_d: f64,
    h: f64,
}

impl Assembler<'_> {
    fn cell(&self, t: usize) -> Result<Cell> {
        Cell::new(self.mesh, t, self.phi, self.f, self.g)
    }

    fn dofs(&self, c: &Cell) -> [usize; 3] {
        c.verts.map(|v| self.map.dof(v).expect("vertex of an active cell has a dof"))
    }

    fn volume(&self, t: usize) -> Result<Contribution> {
        let c = self.cell(t)?;
        let dofs = self.dofs(&c);
        let mut a = [[0.0; 3]; 3];
        let mut b = [0.0; 3];
        for (lam, w) in triangle_rule() {
            let wq = w * c.area;
            let f_q = c.f[0] * lam[0] + c.f[1] * lam[1] + c.f[2] * lam[2];
            let trial: [(f64, [f64; 2]); 3] = [0, 1, 2].map(|k| c.trial(k, &lam));
            for i in 0..3 {
                for k in 0..3 {
                    a[i][k] += wq * dot(trial[k].1, trial[i].1);
                }
                b[i] += wq * (f_q * trial[i].0 - dot(c.grad_g, trial[i].1));
            }
        }
        if self.cls.is_cut[t] {
            let s = self.sigma_d * self.h * self.h * c.area;
            let lap = [0, 1, 2].map(|k| c.laplacian(k));
            let f_mean = (c.f[0] + c.f[1] + c.f[2]) / 3.0;
            for i in 0..3 {
                for k in 0..3 {
                    a[i][k] += s * lap[k] * lap[i];
                }
                b[i] -= s * f_mean * lap[i];
            }
        }
        let mut out = Contribution::default();
        for i in 0..3 {
            for k in 0..3 {
                out.matrix.push((dofs[i], dofs[k], a[i][k]));
            }
            out.rhs.push((dofs[i], b[i]));
        }
        Ok(out)
    }

    /// `−∫_E ∂_n u v` on a facet of ∂Ω_h, `n` pointing out of the active cell.
    fn boundary(&self, e: usize) -> Result<Contribution> {
        let facet = &self.mesh.facets[e];
        let t = self.cls.active_side(facet);
        let c = self.cell(t)?;
        let dofs = self.dofs(&c);
        let (n, len) = outward_normal(self.mesh, facet.vertices, &c);
        let [va, vb] = facet.vertices;
        let mut a = [[0.0; 3]; 3];
        let mut b = [0.0; 3];
        for (s, w) in edge_rule() {
            let lam = c.edge_point(va, vb, s);
            let wq = w * len;
            let trial: [(f64, [f64; 2]); 3] = [0, 1, 2].map(|k| c.trial(k, &lam));
            for i in 0..3 {
                for k in 0..3 {
                    a[i][k] -= wq * dot(trial[k].1, n) * trial[i].0;
                }
                b[i] += wq * dot(c.grad_g, n) * trial[i].0;
            }
        }
        let mut out = Contribution::default();
        for i in 0..3 {
            for k in 0..3 {
                out.matrix.push((dofs[i], dofs[k], a[i][k]));
            }
            out.rhs.push((dofs[i], b[i]));
        }
        Ok(out)
    }

    /// `σ h ∫_E [∂_n u][∂_n v]` on an interior facet touching a cut cell.
    fn jump(&self, e: usize) -> Result<Contribution> {
        let facet = &self.mesh.facets[e];
        let c1 = self.cell(facet.cells[0])?;
        let c2 = self.cell(facet.cells[1])?;
        let (n, len) = outward_normal(self.mesh, facet.vertices, &c1);
        let [va, vb] = facet.vertices;
        let mut verts: Vec<usize> = c1.verts.to_vec();
        for v in c2.verts {
            if !verts.contains(&v) {
                verts.push(v);
            }
        }
        let m = verts.len();
        let dofs: Vec<usize> = verts
            .iter()
            .map(|&v| self.map.dof(v).expect("vertex of an active cell has a dof"))
            .collect();
        let jump_g = dot(c1.grad_g, n) - dot(c2.grad_g, n);
        let scale = self.sigma_d * self.h;
        let mut a = vec![vec![0.0; m]; m];
        let mut b = vec![0.0; m];
        for (s, w) in edge_rule() {
            let lam1 = c1.edge_point(va, vb, s);
            let lam2 = c2.edge_point(va, vb, s);
            let jumps: Vec<f64> = verts
                .iter()
                .map(|&v| {
                    let d1 = c1.local_index(v).map_or(0.0, |k| dot(c1.trial(k, &lam1).1, n));
                    let d2 = c2.local_index(v).map_or(0.0, |k| dot(c2.trial(k, &lam2).1, n));
                    d1 - d2
                })
                .collect();
            let wq = scale * w * len;
            for i in 0..m {
                for k in 0..m {
                    a[i][k] += wq * jumps[k] * jumps[i];
                }
                b[i] -= wq * jump_g * jumps[i];
            }
        }
        let mut out = Contribution::default();
        for i in 0..m {
            for k in 0..m {
                out.matrix.push((dofs[i], dofs[k], a[i][k]));
            }
            out.rhs.push((dofs[i], b[i]));
        }
        Ok(out)
    }
}

/// Unit normal of the edge `verts`, pointing away from the third vertex of
/// `cell`, and the edge length.
fn outward_normal(mesh: &BackgroundMesh, verts: [usize; 2], cell: &Cell) -> ([f64; 2], f64) {
    let pa = mesh.vertices[verts[0]];
    let pb = mesh.vertices[verts[1]];
    let third = cell
        .verts
        .iter()
        .copied()
        .find(|v| !verts.contains(v))
        .expect("triangle has a vertex off the edge");
    let pc = mesh.vertices[third];
    let (tx, ty) = (pb[0] - pa[0], pb[1] - pa[1]);
    let len = (tx * tx + ty * ty).sqrt();
    let mut n = [ty / len, -tx / len];
    if dot(n, [pc[0] - pa[0], pc[1] - pa[1]]) > 0.0 {
        n = [-n[0], -n[1]];
    }
    (n, len)
}

/// Assembles the φ-FEM system for the w-unknowns on the active mesh.
#[allow(clippy::too_many_arguments)]
pub fn assemble(
    mesh: &BackgroundMesh,
    cls: &CellClassification,
    phi_h: &FieldGrid,
    f_h: &FieldGrid,
    g_h: &FieldGrid,
    sigma_d: f64,
    exec: Execution,
) -> Result<(SparseSystem, DofMap)> {
    if !(sigma_d > 0.0 && sigma_d.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma_D must be positive, got {sigma_d}")));
    }
    for (grid, name) in [(phi_h, "phi_h"), (f_h, "f_h"), (g_h, "g_h")] {
        if grid.nx != mesh.nx || grid.ny != mesh.ny {
            return Err(Error::ShapeMismatch(format!(
                "{name} is {}x{}, mesh is {}x{}",
                grid.nx, grid.ny, mesh.nx, mesh.ny
            )));
        }
    }
    if cls.active_cells.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let map = DofMap::new(mesh, cls);
    let asm = Assembler {
        mesh,
        cls,
        map: &map,
        phi: phi_h,
        f: f_h,
        g: g_h,
        sigma_d,
        h: mesh.h(),
    };

    // Entities in a fixed order; parallel mode only changes who computes them.
    let volume = exec.map_slice(&cls.active_cells, |&t| asm.volume(t));
    let boundary = exec.map_slice(&cls.omega_boundary_facets, |&e| asm.boundary(e));
    let jumps = exec.map_slice(&cls.stabilized_facets, |&e| asm.jump(e));

    let n = map.n_dofs();
    let mut triplets = Vec::new();
    let mut rhs = vec![0.0; n];
    for contribution in volume.into_iter().chain(boundary).chain(jumps) {
        let c = contribution?;
        triplets.extend(c.matrix);
        for (i, v) in c.rhs {
            rhs[i] += v;
        }
    }
    if let Some(i) = rhs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("right-hand side entry {i}")));
    }
    let matrix = CsrMatrix::from_triplets(n, &triplets)?;
    Ok((SparseSystem { matrix, rhs }, map))
}

/// Solves the assembled system and extends `w_h` by zero outside Ω_h.
pub fn solve(system: &SparseSystem, map: &DofMap, nx: usize, ny: usize) -> Result<FieldGrid> {
    if map.vertex_to_dof.len() != nx * ny {
        return Err(Error::ShapeMismatch(format!(
            "dof map over {} vertices for a {nx}x{ny} grid",
            map.vertex_to_dof.len()
        )));
    }
    let w = linalg::solve(&system.matrix, &system.rhs, SOLVE_TOLERANCE)?;
    let residual = linalg::relative_residual(&system.matrix, &w, &system.rhs);
    if !(residual <= SOLVE_TOLERANCE) {
        return Err(Error::SolverNonConvergence { residual });
    }
    let mut values = vec![0.0; nx * ny];
    for (d, &v) in map.dof_to_vertex.iter().enumerate() {
        values[v] = w[d];
    }
    FieldGrid::new(nx, ny, values)
}

/// `u = φ_h w + g_h`, pointwise.
pub fn reconstruct_u(phi_h: &FieldGrid, w_h: &FieldGrid, g_h: &FieldGrid) -> Result<FieldGrid> {
    phi_h.check_same_shape(w_h, "reconstruct_u")?;
    phi_h.check_same_shape(g_h, "reconstruct_u")?;
    let values = phi_h
        .values
        .iter()
        .zip(&w_h.values)
        .zip(&g_h.values)
        .map(|((p, w), g)| p * w + g)
        .collect();
    Ok(FieldGrid {
        nx: phi_h.nx,
        ny: phi_h.ny,
        values,
    })
}

/// The ground-truth operator `(f_h, φ_h, g_h) ↦ w_h`.
pub fn ground_truth(
    f_h: &FieldGrid,
    phi_h: &FieldGrid,
    g_h: &FieldGrid,
    sigma_d: f64,
    exec: Execution,
) -> Result<FieldGrid> {
    phi_h.check_same_shape(f_h, "ground_truth")?;
    phi_h.check_same_shape(g_h, "ground_truth")?;
    let mesh = BackgroundMesh::new(phi_h.nx, phi_h.ny)?;
    let cls = classify_cells(&mesh, phi_h)?;
    let (system, map) = assemble(&mesh, &cls, phi_h, f_h, g_h, sigma_d, exec)?;
    solve(&system, &map, mesh.nx, mesh.ny)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub error: f64,
    /// Observed order against the previous (coarser) row; `None` on the
    /// first row or when errors sit at round-off level.
    pub order: Option<f64>,
}

/// Errors below this are treated as exact reproduction; no order is reported.
pub const EXACT_ERROR: f64 = 1e-9;

/// Relative nodal L² error on S0 over a ladder of `n × n` resolutions.
pub fn convergence_study(
    case: &PoissonCase,
    domain: &ScalarField,
    resolutions: &[usize],
    sigma_d: f64,
    exec: Execution,
) -> Result<Vec<ConvergenceRow>> {
    if resolutions.len() < 3 {
        return Err(Error::InvalidArgument("convergence study needs at least 3 resolutions".into()));
    }
    if resolutions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("resolutions must be strictly increasing".into()));
    }
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for &n in resolutions {
        let mesh = BackgroundMesh::new(n, n)?;
        let phi = interpolate_nodal(domain, &mesh)?;
        let f = interpolate_nodal(&case.f, &mesh)?;
        let g = interpolate_nodal(&case.g, &mesh)?;
        let exact = interpolate_nodal(&case.u_exact, &mesh)?;
        let cls = classify_cells(&mesh, &phi)?;
        let (system, map) = assemble(&mesh, &cls, &phi, &f, &g, sigma_d, exec)?;
        let w = solve(&system, &map, n, n)?;
        let u = reconstruct_u(&phi, &w, &g)?;
        let s0 = mesh::build_pixel_masks(&cls, &mesh).s0;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..s0.len() {
            if s0[k] {
                num += (u.values[k] - exact.values[k]).powi(2);
                den += exact.values[k].powi(2);
            }
        }
        if den == 0.0 {
            return Err(Error::Degenerate("exact solution vanishes on S0".into()));
        }
        let error = (num / den).sqrt();
        let h = mesh.h();
        let order = rows.last().and_then(|prev| {
            (prev.error > EXACT_ERROR && error > EXACT_ERROR)
                .then(|| (prev.error / error).ln() / (prev.h / h).ln())
        });
        rows.push(ConvergenceRow { n, h, error, order });
    }
    Ok(rows)
}
