use rayon::prelude::*;

use super::project::{jacobian, project_one, view_matrix, ProjectedSplat};
use super::{normalize_quat, rotation_matrix, GaussianLevel, SplatGradients, SplatImage};
use crate::math::{Mat3, Rgb, Vec3};
use crate::scene::Camera;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterSettings {
    pub tile_size: usize,
    /// Mahalanobis radius beyond which a splat does not touch a pixel.
    pub sigma_cutoff: f64,
    pub alpha_max: f64,
    /// Compositing stops once transmittance would fall below this.
    pub min_transmittance: f64,
}

impl Default for RasterSettings {
    fn default() -> Self {
        Self { tile_size: 16, sigma_cutoff: 7.0, alpha_max: 0.99, min_transmittance: 1e-4 }
    }
}

/// Everything the backward pass needs from the forward pass of the same frame.
#[derive(Clone, Debug)]
pub struct ForwardState {
    pub width: usize,
    pub height: usize,
    pub settings: RasterSettings,
    pub projected: Vec<Option<ProjectedSplat>>,
    /// Per tile: splat indices sorted front to back.
    pub tile_lists: Vec<Vec<u32>>,
    pub final_t: Vec<f64>,
    /// Per pixel: number of tile-list entries walked before compositing stopped.
    pub n_contrib: Vec<u32>,
}

impl ForwardState {
    fn tiles_x(&self) -> usize {
        self.width.div_ceil(self.settings.tile_size)
    }

    fn tile_pixels(&self, tile: usize) -> impl Iterator<Item = (usize, usize)> {
        let ts = self.settings.tile_size;
        let tx = tile % self.tiles_x();
        let ty = tile / self.tiles_x();
        let (x0, y0) = (tx * ts, ty * ts);
        let (x1, y1) = ((x0 + ts).min(self.width), (y0 + ts).min(self.height));
        (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }
}

/// Alpha of a splat at a pixel center; `None` outside its cutoff ellipse.
#[inline]
fn splat_alpha(p: &ProjectedSplat, opacity: f64, px: f64, py: f64, s: &RasterSettings) -> Option<(f64, f64, f64, f64)> {
    let dx = px - p.mean[0];
    let dy = py - p.mean[1];
    let [a, b, c] = p.conic;
    let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
    if power < -0.5 * s.sigma_cutoff * s.sigma_cutoff {
        return None;
    }
    let g = power.exp();
    Some(((opacity * g).min(s.alpha_max), g, dx, dy))
}

fn bin_tiles(
    projected: &[Option<ProjectedSplat>],
    width: usize,
    height: usize,
    s: &RasterSettings,
) -> Vec<Vec<u32>> {
    let ts = s.tile_size;
    let (tiles_x, tiles_y) = (width.div_ceil(ts), height.div_ceil(ts));
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (i, p) in projected.iter().enumerate() {
        let Some(p) = p else { continue };
        // Semi-axis of the cutoff ellipse bounds its extent along x and y.
        let r = s.sigma_cutoff * p.max_eigenvalue().sqrt();
        let (x0, x1) = (p.mean[0] - r, p.mean[0] + r);
        let (y0, y1) = (p.mean[1] - r, p.mean[1] + r);
        if x1 < 0.0 || y1 < 0.0 || x0 > width as f64 || y0 > height as f64 {
            continue;
        }
        let tx0 = (x0.max(0.0) / ts as f64) as usize;
        let ty0 = (y0.max(0.0) / ts as f64) as usize;
        let tx1 = ((x1 / ts as f64) as usize).min(tiles_x - 1);
        let ty1 = ((y1 / ts as f64) as usize).min(tiles_y - 1);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                lists[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    lists.par_iter_mut().for_each(|l| {
        l.sort_by(|&a, &b| {
            let (da, db) = (projected[a as usize].unwrap().depth, projected[b as usize].unwrap().depth);
            da.total_cmp(&db).then(a.cmp(&b))
        })
    });
    lists
}

pub fn rasterize(level: &GaussianLevel, camera: &Camera) -> SplatImage {
    rasterize_with_state(level, camera, &RasterSettings::default()).0
}

pub fn rasterize_with_state(level: &GaussianLevel, camera: &Camera, settings: &RasterSettings) -> (SplatImage, ForwardState) {
    let (width, height) = camera.resolution;
    let view = view_matrix(camera);
    let projected: Vec<Option<ProjectedSplat>> =
        (0..level.len()).into_par_iter().map(|i| project_one(level, i, camera, &view)).collect();
    let opacity: Vec<f64> = (0..level.len()).map(|i| level.opacity(i)).collect();
    let color: Vec<Rgb> = (0..level.len()).map(|i| level.color(i)).collect();
    let tile_lists = bin_tiles(&projected, width, height, settings);
    let mut state = ForwardState {
        width,
        height,
        settings: *settings,
        projected,
        tile_lists,
        final_t: vec![1.0; width * height],
        n_contrib: vec![0; width * height],
    };
    let s = settings;
    let tiles: Vec<Vec<(usize, Rgb, f64, u32)>> = (0..state.tile_lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &state.tile_lists[tile];
            state
                .tile_pixels(tile)
                .map(|(x, y)| {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let mut t = 1.0;
                    let mut c = Rgb::ZERO;
                    let mut walked = 0u32;
                    for (j, &idx) in list.iter().enumerate() {
                        let idx = idx as usize;
                        let p = state.projected[idx].as_ref().unwrap();
                        let Some((alpha, ..)) = splat_alpha(p, opacity[idx], px, py, s) else { continue };
                        let next_t = t * (1.0 - alpha);
                        if next_t < s.min_transmittance {
                            break;
                        }
                        c += color[idx] * (alpha * t);
                        t = next_t;
                        walked = j as u32 + 1;
                    }
                    (y * width + x, c, t, walked)
                })
                .collect()
        })
        .collect();
    let mut image = SplatImage::filled(width, height, Rgb::ZERO);
    for tile in tiles {
        for (i, c, t, n) in tile {
            image.rgb[i] = c;
            image.transmittance[i] = t;
            state.final_t[i] = t;
            state.n_contrib[i] = n;
        }
    }
    (image, state)
}

/// Screen-space gradient of one splat.
#[derive(Clone, Copy, Debug, Default)]
struct Grad2d {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: Rgb,
}

impl Grad2d {
    fn add(&mut self, o: &Grad2d) {
        self.mean[0] += o.mean[0];
        self.mean[1] += o.mean[1];
        for k in 0..3 {
            self.conic[k] += o.conic[k];
        }
        self.opacity += o.opacity;
        self.color += o.color;
    }
}

/// Exact gradients of `sum(dL/dC * C)` with respect to every splat parameter.
pub fn rasterize_backward(level: &GaussianLevel, camera: &Camera, state: &ForwardState, loss_grad: &[Rgb]) -> SplatGradients {
    assert_eq!(loss_grad.len(), state.width * state.height, "loss gradient image has wrong size");
    let n = level.len();
    let s = &state.settings;
    let opacity: Vec<f64> = (0..n).map(|i| level.opacity(i)).collect();
    let color: Vec<Rgb> = (0..n).map(|i| level.color(i)).collect();

    let per_tile: Vec<Vec<Grad2d>> = (0..state.tile_lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &state.tile_lists[tile];
            let mut acc = vec![Grad2d::default(); list.len()];
            for (x, y) in state.tile_pixels(tile) {
                let pix = y * state.width + x;
                let g = loss_grad[pix];
                if g == Rgb::ZERO {
                    continue;
                }
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut t = state.final_t[pix];
                let mut behind = Rgb::ZERO;
                for j in (0..state.n_contrib[pix] as usize).rev() {
                    let idx = list[j] as usize;
                    let p = state.projected[idx].as_ref().unwrap();
                    let Some((alpha, gauss, dx, dy)) = splat_alpha(p, opacity[idx], px, py, s) else { continue };
                    let t_before = t / (1.0 - alpha);
                    let c = color[idx];
                    let e = &mut acc[j];
                    e.color += g * (alpha * t_before);
                    let d_alpha = t_before * (c - behind).dot(g);
                    behind = c * alpha + behind * (1.0 - alpha);
                    t = t_before;
                    if opacity[idx] * gauss > s.alpha_max {
                        continue;
                    }
                    e.opacity += d_alpha * gauss;
                    let d_power = d_alpha * alpha;
                    let [a, b, cc] = p.conic;
                    e.mean[0] += d_power * (a * dx + b * dy);
                    e.mean[1] += d_power * (b * dx + cc * dy);
                    e.conic[0] += d_power * (-0.5 * dx * dx);
                    e.conic[1] += d_power * (-dx * dy);
                    e.conic[2] += d_power * (-0.5 * dy * dy);
                }
            }
            acc
        })
        .collect();

    let mut screen = vec![Grad2d::default(); n];
    for (tile, acc) in per_tile.iter().enumerate() {
        for (j, e) in acc.iter().enumerate() {
            screen[state.tile_lists[tile][j] as usize].add(e);
        }
    }

    let view = view_matrix(camera);
    let f = camera.focal_px();
    let per_splat: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| match &state.projected[i] {
            Some(p) => splat_param_grads(level, i, p, &screen[i], &view, f, opacity[i]),
            None => (Vec3::ZERO, [0.0; 4], Vec3::ZERO, 0.0, Rgb::ZERO),
        })
        .collect();
    let mut out = SplatGradients::zeros(n);
    for (i, (dp, dq, ds, dop, dc)) in per_splat.into_iter().enumerate() {
        out.positions[i] = dp;
        out.rotations[i] = dq;
        out.log_scales[i] = ds;
        out.opacity_logits[i] = dop;
        let raw = level.colors[i];
        out.colors[i] = Rgb::new(
            if raw.x > 0.0 { dc.x } else { 0.0 },
            if raw.y > 0.0 { dc.y } else { 0.0 },
            if raw.z > 0.0 { dc.z } else { 0.0 },
        );
    }
    out
}

fn outer(a: Vec3, b: Vec3) -> Mat3 {
    Mat3::from_rows(b * a.x, b * a.y, b * a.z)
}

/// Chain rule from screen-space gradients to the 3D parameters of splat `i`.
fn splat_param_grads(
    level: &GaussianLevel,
    i: usize,
    p: &ProjectedSplat,
    g: &Grad2d,
    view: &Mat3,
    f: f64,
    opacity: f64,
) -> (Vec3, [f64; 4], Vec3, f64, Rgb) {
    // conic = inverse([[A, B], [B, C]])
    let [ca, cb, cc] = p.cov;
    let det = ca * cc - cb * cb;
    let det2 = det * det;
    let [ga, gb, gc] = g.conic;
    let d_a = (ga * (-cc * cc) + gb * (cb * cc) + gc * (-cb * cb)) / det2;
    let d_b = (ga * (2.0 * cb * cc) + gb * (-(ca * cc + cb * cb)) + gc * (2.0 * ca * cb)) / det2;
    let d_c = (ga * (-cb * cb) + gb * (ca * cb) + gc * (-ca * ca)) / det2;

    let t = p.cam;
    let j = jacobian(f, t);
    let (j0, j1) = (Vec3::from_array(j[0]), Vec3::from_array(j[1]));

    let q = normalize_quat(level.rotations[i]);
    let r = rotation_matrix(q);
    let scale = level.scale(i);
    let m = r.mul_mat(&Mat3::diag(scale));
    let sigma = m.mul_mat(&m.transpose());
    let v = view.mul_mat(&sigma).mul_mat(&view.transpose());

    // dL/dV for A = j0'Vj0, B = j0'Vj1, C = j1'Vj1.
    let gv = {
        let a = outer(j0, j0);
        let b = outer(j0, j1);
        let c = outer(j1, j1);
        let mut out = [[0.0; 3]; 3];
        for (r_, row) in out.iter_mut().enumerate() {
            for (c_, x) in row.iter_mut().enumerate() {
                *x = d_a * a.0[r_][c_] + d_b * b.0[r_][c_] + d_c * c.0[r_][c_];
            }
        }
        Mat3(out)
    };
    let dj0 = v.mul_vec(j0) * (2.0 * d_a) + v.mul_vec(j1) * d_b;
    let dj1 = v.mul_vec(j0) * d_b + v.mul_vec(j1) * (2.0 * d_c);

    let (x, y, z) = (t.x, t.y, t.z);
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut dt = Vec3::ZERO;
    dt.x += dj0.z * (-f * iz2);
    dt.y += dj1.z * (f * iz2);
    dt.z += dj0.x * (-f * iz2) + dj0.z * (2.0 * f * x * iz3) + dj1.y * (f * iz2) + dj1.z * (-2.0 * f * y * iz3);
    let [gu, gvv] = g.mean;
    dt.x += gu * f * iz;
    dt.z += gu * (-f * x * iz2);
    dt.y += gvv * (-f * iz);
    dt.z += gvv * (f * y * iz2);
    let d_pos = view.transpose().mul_vec(dt);

    // Sigma = M M^T, M = R S.
    let gs = view.transpose().mul_mat(&gv).mul_mat(view);
    let gsym = gs.add(&gs.transpose());
    let dm = gsym.mul_mat(&m);
    let mut dr = [[0.0; 3]; 3];
    let mut d_scale = Vec3::ZERO;
    for row in 0..3 {
        for col in 0..3 {
            dr[row][col] = dm.0[row][col] * scale[col];
        }
    }
    let ds = |col: usize| (0..3).map(|row| dm.0[row][col] * r.0[row][col]).sum::<f64>();
    d_scale.x = ds(0) * scale.x;
    d_scale.y = ds(1) * scale.y;
    d_scale.z = ds(2) * scale.z;

    let [w, qx, qy, qz] = q;
    let dn = [
        // d/dw
        dr[0][1] * (-2.0 * qz) + dr[0][2] * (2.0 * qy) + dr[1][0] * (2.0 * qz) + dr[1][2] * (-2.0 * qx)
            + dr[2][0] * (-2.0 * qy) + dr[2][1] * (2.0 * qx),
        // d/dx
        dr[0][1] * (2.0 * qy) + dr[0][2] * (2.0 * qz) + dr[1][0] * (2.0 * qy) + dr[1][1] * (-4.0 * qx)
            + dr[1][2] * (-2.0 * w) + dr[2][0] * (2.0 * qz) + dr[2][1] * (2.0 * w) + dr[2][2] * (-4.0 * qx),
        // d/dy
        dr[0][0] * (-4.0 * qy) + dr[0][1] * (2.0 * qx) + dr[0][2] * (2.0 * w) + dr[1][0] * (2.0 * qx)
            + dr[1][2] * (2.0 * qz) + dr[2][0] * (-2.0 * w) + dr[2][1] * (2.0 * qz) + dr[2][2] * (-4.0 * qy),
        // d/dz
        dr[0][0] * (-4.0 * qz) + dr[0][1] * (-2.0 * w) + dr[0][2] * (2.0 * qx) + dr[1][0] * (2.0 * w)
            + dr[1][1] * (-4.0 * qz) + dr[1][2] * (2.0 * qy) + dr[2][0] * (2.0 * qx) + dr[2][1] * (2.0 * qy),
    ];
    let raw_q = level.rotations[i];
    let norm = raw_q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let proj: f64 = (0..4).map(|k| q[k] * dn[k]).sum();
    let d_quat = [
        (dn[0] - q[0] * proj) / norm,
        (dn[1] - q[1] * proj) / norm,
        (dn[2] - q[2] * proj) / norm,
        (dn[3] - q[3] * proj) / norm,
    ];

    let d_logit = g.opacity * opacity * (1.0 - opacity);
    (d_pos, d_quat, d_scale, d_logit, g.color)
}
