#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;

use phifno_core::fno::{self, FnoHyperparams};
use phifno_core::phifem;
use phifno_core::training::{self, LossMode, TrainConfig, TrainSample};
use phifno_core::{Execution, FieldGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn grid(nx: usize, ny: usize, f: impl Fn(f64, f64) -> f64) -> FieldGrid {
    let mut v = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            v.push(f(i as f64 / (nx - 1) as f64, j as f64 / (ny - 1) as f64));
        }
    }
    FieldGrid::new(nx, ny, v).unwrap()
}

/// Radon's 7-point rule, exact to degree 5 (barycentric point, weight / area).
fn radon7() -> Vec<([f64; 3], f64)> {
    let s = 15f64.sqrt();
    let a1 = (6.0 - s) / 21.0;
    let a2 = (6.0 + s) / 21.0;
    let w1 = (155.0 - s) / 1200.0;
    let w2 = (155.0 + s) / 1200.0;
    let mut pts = vec![([1.0 / 3.0; 3], 9.0 / 40.0)];
    for (a, w) in [(a1, w1), (a2, w2)] {
        let b = 1.0 - 2.0 * a;
        pts.push(([a, a, b], w));
        pts.push(([a, b, a], w));
        pts.push(([b, a, a], w));
    }
    pts
}

/// Three-point Gauss-Legendre on [0, 1].
fn gauss3() -> [(f64, f64); 3] {
    let d = 0.5 * (0.6f64).sqrt();
    [(0.5 - d, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + d, 5.0 / 18.0)]
}

struct Tri {
    v: [usize; 3],
    p: [[f64; 2]; 3],
}

impl Tri {
    /// Barycentric coordinates of a Cartesian point and their gradients.
    fn bary(&self, x: [f64; 2]) -> ([f64; 3], [[f64; 2]; 3]) {
        let [a, b, c] = self.p;
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((x[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (x[1] - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (x[1] - a[1]) - (x[0] - a[0]) * (b[1] - a[1])) / det;
        let g1 = [(c[1] - a[1]) / det, -(c[0] - a[0]) / det];
        let g2 = [-(b[1] - a[1]) / det, (b[0] - a[0]) / det];
        ([1.0 - l1 - l2, l1, l2], [[-g1[0] - g2[0], -g1[1] - g2[1]], g1, g2])
    }

    fn area(&self) -> f64 {
        let [a, b, c] = self.p;
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs()
    }

    fn point(&self, lam: [f64; 3]) -> [f64; 2] {
        let mut x = [0.0; 2];
        for k in 0..3 {
            x[0] += lam[k] * self.p[k][0];
            x[1] += lam[k] * self.p[k][1];
        }
        x
    }

    /// Interpolated value and gradient of a nodal field at `x`.
    fn field(&self, vals: &FieldGrid, x: [f64; 2]) -> (f64, [f64; 2]) {
        let (lam, grad) = self.bary(x);
        let mut v = 0.0;
        let mut g = [0.0; 2];
        for k in 0..3 {
            let n = vals.values[self.v[k]];
            v += n * lam[k];
            g[0] += n * grad[k][0];
            g[1] += n * grad[k][1];
        }
        (v, g)
    }

    /// Value and gradient of `φ λ_a` at `x`, zero when `a` is not a vertex.
    fn basis(&self, phi: &FieldGrid, a: usize, x: [f64; 2]) -> (f64, [f64; 2]) {
        let Some(k) = self.v.iter().position(|&v| v == a) else {
            return (0.0, [0.0; 2]);
        };
        let (lam, grad) = self.bary(x);
        let (p, gp) = self.field(phi, x);
        (p * lam[k], [gp[0] * lam[k] + p * grad[k][0], gp[1] * lam[k] + p * grad[k][1]])
    }

    /// Laplacian of `φ λ_a` (both factors linear on the triangle).
    fn basis_laplacian(&self, phi: &FieldGrid, a: usize) -> f64 {
        let Some(k) = self.v.iter().position(|&v| v == a) else {
            return 0.0;
        };
        let c = self.point([1.0 / 3.0; 3]);
        let (_, grad) = self.bary(c);
        let (_, gp) = self.field(phi, c);
        2.0 * (gp[0] * grad[k][0] + gp[1] * grad[k][1])
    }

    fn centroid(&self) -> [f64; 2] {
        self.point([1.0 / 3.0; 3])
    }
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Dense φ-FEM matrix and right-hand side over the dofs (active vertices in
/// ascending order), assembled by looping over all dof pairs.
pub fn dense_assembly(phi: &FieldGrid, f: &FieldGrid, g: &FieldGrid, sigma: f64) -> (Vec<Vec<f64>>, Vec<f64>, Vec<usize>) {
    let (nx, ny) = (phi.nx, phi.ny);
    let (dx, dy) = (1.0 / (nx - 1) as f64, 1.0 / (ny - 1) as f64);
    let h = (dx * dx + dy * dy).sqrt();
    let node = |i: usize, j: usize| i * ny + j;
    let pos = |v: usize| [(v / ny) as f64 * dx, (v % ny) as f64 * dy];
    let mut tris = Vec::new();
    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            for v in [
                [node(i, j), node(i + 1, j), node(i + 1, j + 1)],
                [node(i, j), node(i + 1, j + 1), node(i, j + 1)],
            ] {
                tris.push(Tri { v, p: v.map(pos) });
            }
        }
    }
    let active: Vec<bool> = tris.iter().map(|t| t.v.iter().any(|&v| phi.values[v] < 0.0)).collect();
    let cut: Vec<bool> = tris
        .iter()
        .zip(&active)
        .map(|(t, &a)| a && t.v.iter().any(|&v| phi.values[v] >= 0.0))
        .collect();
    let mut dof_vertices: Vec<usize> = tris
        .iter()
        .zip(&active)
        .filter(|(_, &a)| a)
        .flat_map(|(t, _)| t.v)
        .collect();
    dof_vertices.sort_unstable();
    dof_vertices.dedup();
    let n = dof_vertices.len();
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];

    let mut edges: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (t, tri) in tris.iter().enumerate() {
        for k in 0..3 {
            let (p, q) = (tri.v[k], tri.v[(k + 1) % 3]);
            edges.entry((p.min(q), p.max(q))).or_default().push(t);
        }
    }

    let rule = radon7();
    for (t, tri) in tris.iter().enumerate() {
        if !active[t] {
            continue;
        }
        let area = tri.area();
        for (r, &ar) in dof_vertices.iter().enumerate() {
            for &(lam, w) in &rule {
                let x = tri.point(lam);
                let (vr, gr) = tri.basis(phi, ar, x);
                if vr == 0.0 && gr == [0.0; 2] {
                    continue;
                }
                let (fv, _) = tri.field(f, x);
                let (_, gg) = tri.field(g, x);
                b[r] += w * area * (fv * vr - dot(gg, gr));
                for (c, &ac) in dof_vertices.iter().enumerate() {
                    let (_, gc) = tri.basis(phi, ac, x);
                    a[r][c] += w * area * dot(gc, gr);
                }
            }
            if cut[t] {
                let lr = tri.basis_laplacian(phi, ar);
                let (fc, _) = tri.field(f, tri.centroid());
                b[r] -= sigma * h * h * area * fc * lr;
                for (c, &ac) in dof_vertices.iter().enumerate() {
                    a[r][c] += sigma * h * h * area * tri.basis_laplacian(phi, ac) * lr;
                }
            }
        }
    }

    for (&(p, q), adj) in &edges {
        let on: Vec<usize> = adj.iter().copied().filter(|&t| active[t]).collect();
        let (pa, pb) = (pos(p), pos(q));
        let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
        // Normal pointing away from the opposite vertex of triangle `t`.
        let normal = |t: usize| {
            let third = tris[t].v.iter().copied().find(|&v| v != p && v != q).unwrap();
            let pc = pos(third);
            let mut nv = [(pb[1] - pa[1]) / len, -(pb[0] - pa[0]) / len];
            if dot(nv, [pc[0] - pa[0], pc[1] - pa[1]]) > 0.0 {
                nv = [-nv[0], -nv[1]];
            }
            nv
        };
        if on.len() == 1 {
            let t = on[0];
            let nv = normal(t);
            for (s, w) in gauss3() {
                let x = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
                let (_, gg) = tris[t].field(g, x);
                for (r, &ar) in dof_vertices.iter().enumerate() {
                    let (vr, _) = tris[t].basis(phi, ar, x);
                    b[r] += w * len * dot(gg, nv) * vr;
                    for (c, &ac) in dof_vertices.iter().enumerate() {
                        let (_, gc) = tris[t].basis(phi, ac, x);
                        a[r][c] -= w * len * dot(gc, nv) * vr;
                    }
                }
            }
        } else if on.len() == 2 && (cut[on[0]] || cut[on[1]]) {
            let (t1, t2) = (on[0], on[1]);
            let nv = normal(t1);
            for (s, w) in gauss3() {
                let x = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
                let jg = dot(tris[t1].field(g, x).1, nv) - dot(tris[t2].field(g, x).1, nv);
                let jump = |a: usize| dot(tris[t1].basis(phi, a, x).1, nv) - dot(tris[t2].basis(phi, a, x).1, nv);
                for (r, &ar) in dof_vertices.iter().enumerate() {
                    let jr = jump(ar);
                    b[r] -= sigma * h * w * len * jg * jr;
                    for (c, &ac) in dof_vertices.iter().enumerate() {
                        a[r][c] += sigma * h * w * len * jump(ac) * jr;
                    }
                }
            }
        }
    }
    (a, b, dof_vertices)
}

/// A disk instance with nontrivial smooth data.
pub fn disk_instance(n: usize) -> (FieldGrid, FieldGrid, FieldGrid) {
    let phi = grid(n, n, |x, y| (x - 0.47).powi(2) + (y - 0.52).powi(2) - 0.31 * 0.31);
    let f = grid(n, n, |x, y| 3.0 + x * y - 2.0 * (3.0 * x).sin());
    let g = grid(n, n, |x, y| 0.3 * (x * x - y * y) * (0.7 * y).cos() + 0.1 * x);
    (phi, f, g)
}

/// One training sample on a random disk with solver ground truth.
pub fn disk_sample(n: usize, seed: u64) -> TrainSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.random_range(0.25..0.35);
    let a = rng.random_range(-1.0..1.0);
    let phi = grid(n, n, |x, y| (x - 0.5).powi(2) + (y - 0.5).powi(2) - r * r);
    let f = grid(n, n, |x, y| 20.0 * (-((x - 0.45).powi(2) + (y - 0.55).powi(2)) / 0.05).exp());
    let g = grid(n, n, |x, y| a * (x * x - y * y));
    let w = phifem::ground_truth(&f, &phi, &g, 1.0, Execution::Sequential).unwrap();
    TrainSample::new(f, phi, g, w).unwrap()
}

pub struct GradCheck {
    /// `‖g_tape − g_fd‖ / ‖g_fd‖` over the sampled coordinates.
    pub normwise: f64,
    /// Largest per-coordinate `|g_tape − g_fd| / max(|g_tape|, |g_fd|)`.
    pub worst_coordinate: f64,
    /// Smallest sampled `|g_fd|`.
    pub smallest_gradient: f64,
}

/// Tape gradients of the H¹ loss through the network against central
/// differences on `n_coords` random coordinates.
pub fn end_to_end_gradcheck(n: usize, hyper: FnoHyperparams, n_coords: usize, step: f64, seed: u64) -> GradCheck {
    let sample = disk_sample(n, seed);
    let cfg = TrainConfig { seed, batch_size: 1, ..Default::default() };
    let state = training::initial_state(std::slice::from_ref(&sample), &hyper, &cfg).unwrap();
    let params = state.params;
    let (_, grad) = training::sample_gradient(&params, &sample, LossMode::FullH1).unwrap();
    let flat = params.to_flat();
    let loss_at = |theta: &[f64]| {
        let p = fno::FnoParams::from_flat(params.hyper, params.stats.clone(), theta).unwrap();
        let (_, u) = training::predict(&p, &sample.f, &sample.phi, &sample.g).unwrap();
        training::sample_loss(&sample.u, &u, &sample.masks, LossMode::FullH1).unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst: f64 = 0.0;
    let (mut diff2, mut norm2) = (0.0, 0.0);
    let mut smallest = f64::INFINITY;
    for _ in 0..n_coords {
        let k = rng.random_range(0..flat.len());
        let mut plus = flat.clone();
        let mut minus = flat.clone();
        plus[k] += step;
        minus[k] -= step;
        let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
        let scale = grad[k].abs().max(fd.abs());
        let rel = if scale == 0.0 { 0.0 } else { (grad[k] - fd).abs() / scale };
        worst = worst.max(rel);
        diff2 += (grad[k] - fd).powi(2);
        norm2 += fd * fd;
        smallest = smallest.min(fd.abs());
    }
    GradCheck { normwise: (diff2 / norm2).sqrt(), worst_coordinate: worst, smallest_gradient: smallest }
}
