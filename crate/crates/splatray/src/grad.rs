//! Pixel-color gradient estimation.
//!
//! The derivative of the blended color with respect to a hit's color is its
//! blending weight; the derivative with respect to its opacity compares the
//! hit's color against the blend of everything behind it. Both are
//! estimated without sorting by reusing the forward selection: draw a
//! primary index `I` (probability mass equal to its blending weight), then
//! a secondary index `K` restricted to hits behind `I`, and accumulate
//!
//! ```text
//! d/dcolor[I] += 1          d/dalpha[I] += (c_I - c_K) / alpha_I
//! ```
//!
//! leaving all other components at zero. Averaged over rounds this matches
//! the analytic gradient exactly in expectation while touching a single
//! primitive per round. An alternative estimator (`ssplats_grads`) instead
//! splats `-c_I / (1 - alpha_k)` onto every hit in front of `I`; it is also
//! unbiased but its near-singular `1/(1 - alpha)` terms blow up the
//! variance whenever a high-opacity occluder is present, which is what the
//! variance benchmarks quantify.

use crate::blend::{
    pick_front_lanes, pick_front_lanes_from_list, sorted_blend, Hit, Pick, PickLane,
};
use crate::camera::Ray;
use crate::error::{Error, Result};
use crate::gaussian::{Appearance, Gaussian, ALPHA_MAX};
use crate::math::{quat_to_mat3_partials, vec3, Vec3};
use crate::rng::{phase, RngStream};
use crate::scene::Scene;

/// Sparse per-ray gradient: one entry per touched Gaussian.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RayGrad {
    pub entries: Vec<RayGradEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayGradEntry {
    pub id: u32,
    /// dC/dcolor is the same scalar for every channel; stored once.
    pub d_color: f64,
    /// dC/dalpha per channel.
    pub d_alpha: Vec3,
}

impl RayGrad {
    fn entry_mut(&mut self, id: u32) -> &mut RayGradEntry {
        if let Some(pos) = self.entries.iter().position(|e| e.id == id) {
            return &mut self.entries[pos];
        }
        self.entries.push(RayGradEntry {
            id,
            d_color: 0.0,
            d_alpha: Vec3::ZERO,
        });
        self.entries.last_mut().unwrap()
    }

    pub fn get(&self, id: u32) -> Option<&RayGradEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    fn scale(&mut self, s: f64) {
        for e in &mut self.entries {
            e.d_color *= s;
            e.d_alpha = e.d_alpha * s;
        }
    }

    fn check_finite(&self) -> Result<()> {
        for e in &self.entries {
            if !e.d_color.is_finite() || !e.d_alpha.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient accumulation for gaussian {}",
                    e.id
                )));
            }
        }
        Ok(())
    }
}

/// Indices sampled during the forward pass for one backward round: the
/// primary pick and the pick behind it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRecord {
    pub primary: Pick,
    pub behind: Pick,
}

/// Exact gradients of the sorted blend with respect to every hit's color
/// weight and opacity, including the background term. This is the oracle
/// for both stochastic estimators.
pub fn analytic_grads(
    hits: &[Hit],
    mut color_of: impl FnMut(&Hit) -> Vec3,
    background: Vec3,
) -> RayGrad {
    let mut order: Vec<usize> = (0..hits.len()).collect();
    order.sort_by(|&a, &b| {
        hits[a]
            .depth
            .partial_cmp(&hits[b].depth)
            .unwrap()
            .then(hits[a].id.cmp(&hits[b].id))
    });
    let colors: Vec<Vec3> = order.iter().map(|&i| color_of(&hits[i])).collect();
    let n = order.len();
    // behind[i] = blend of everything strictly behind hit i, background last
    let mut behind = vec![background; n];
    for i in (0..n.saturating_sub(1)).rev() {
        let next = &hits[order[i + 1]];
        behind[i] = colors[i + 1] * next.alpha + behind[i + 1] * (1.0 - next.alpha);
    }
    let mut grad = RayGrad::default();
    let mut trans = 1.0;
    for (rank, &i) in order.iter().enumerate() {
        let h = &hits[i];
        let e = grad.entry_mut(h.id);
        e.d_color = h.alpha * trans;
        e.d_alpha = (colors[rank] - behind[rank]) * trans;
        trans *= 1.0 - h.alpha;
    }
    grad
}

/// Draws the `(I, K)` index pairs for `m_b` backward rounds by streaming
/// the scene. The primary draws share one traversal; the behind draws share
/// a second one restricted to depths beyond each round's primary.
pub fn sample_records(
    scene: &Scene,
    ray: &Ray,
    m_b: u32,
    seed: u64,
    pixel: u64,
) -> Vec<SampleRecord> {
    let mut primary: Vec<PickLane> = (0..m_b)
        .map(|m| PickLane::new(RngStream::new(seed, pixel, m as u64, phase::BACKWARD_I), 0.0))
        .collect();
    pick_front_lanes(scene, ray, &mut primary);
    let mut behind: Vec<PickLane> = primary
        .iter()
        .enumerate()
        .map(|(m, lane)| {
            PickLane::new(
                RngStream::new(seed, pixel, m as u64, phase::BACKWARD_K),
                lane.pick.depth,
            )
        })
        .collect();
    pick_front_lanes(scene, ray, &mut behind);
    primary
        .iter()
        .zip(behind.iter())
        .map(|(p, b)| SampleRecord {
            primary: p.pick,
            behind: b.pick,
        })
        .collect()
}

/// Same draws over a materialized hit list (used by the two-pass training
/// pipeline, where the forward pass already collected the hits). Produces
/// bit-identical records to `sample_records` for the same keys.
pub fn sample_records_from_list(
    hits: &[Hit],
    m_b: u32,
    seed: u64,
    pixel: u64,
) -> Vec<SampleRecord> {
    let mut primary: Vec<PickLane> = (0..m_b)
        .map(|m| PickLane::new(RngStream::new(seed, pixel, m as u64, phase::BACKWARD_I), 0.0))
        .collect();
    pick_front_lanes_from_list(hits, &mut primary);
    let mut behind: Vec<PickLane> = primary
        .iter()
        .enumerate()
        .map(|(m, lane)| {
            PickLane::new(
                RngStream::new(seed, pixel, m as u64, phase::BACKWARD_K),
                lane.pick.depth,
            )
        })
        .collect();
    pick_front_lanes_from_list(hits, &mut behind);
    primary
        .iter()
        .zip(behind.iter())
        .map(|(p, b)| SampleRecord {
            primary: p.pick,
            behind: b.pick,
        })
        .collect()
}

/// Unbiased sparse estimate of the pixel-color gradients over `m_b`
/// rounds. When `records` is supplied the stored indices are replayed
/// instead of resampled; colors are evaluated either way (shading streams
/// are keyed per round, so replay is bit-identical to resampling).
pub fn stochastic_grads(
    scene: &Scene,
    ray: &Ray,
    m_b: u32,
    seed: u64,
    pixel: u64,
    records: Option<&[SampleRecord]>,
    env_samples: u32,
) -> Result<RayGrad> {
    let sampled;
    let records = match records {
        Some(r) => r,
        None => {
            sampled = sample_records(scene, ray, m_b, seed, pixel);
            &sampled
        }
    };
    let mut grad = RayGrad::default();
    for (m, rec) in records.iter().enumerate() {
        let Some(i) = rec.primary.id else { continue };
        let mut rng_i = RngStream::new(seed, pixel, m as u64, phase::SHADE_BACKWARD_I);
        let c_i = crate::relight::surface_color(
            scene,
            i,
            ray.at(rec.primary.depth),
            -ray.dir,
            &mut rng_i,
            env_samples,
        );
        let c_k = match rec.behind.id {
            Some(k) => {
                let mut rng_k = RngStream::new(seed, pixel, m as u64, phase::SHADE_BACKWARD_K);
                crate::relight::surface_color(
                    scene,
                    k,
                    ray.at(rec.behind.depth),
                    -ray.dir,
                    &mut rng_k,
                    env_samples,
                )
            }
            None => scene.background,
        };
        let e = grad.entry_mut(i);
        e.d_color += 1.0;
        e.d_alpha += (c_i - c_k) / rec.primary.alpha;
    }
    grad.scale(1.0 / m_b as f64);
    grad.check_finite()?;
    Ok(grad)
}

/// The dense subtractive estimator: after drawing the primary index it
/// walks every hit in front of it, dividing by `1 - alpha`. Unbiased, but
/// it must materialize the hit list and its variance explodes near opaque
/// occluders. Returns the gradient and a diagnostic count of near-singular
/// (`alpha > 0.99`) front terms encountered.
pub fn ssplats_grads(
    scene: &Scene,
    ray: &Ray,
    m_b: u32,
    seed: u64,
    pixel: u64,
    env_samples: u32,
) -> Result<(RayGrad, u32)> {
    let hits = scene.collect_hits(ray);
    let mut grad = RayGrad::default();
    let mut near_singular = 0u32;
    for m in 0..m_b {
        let mut lane = PickLane::new(
            RngStream::new(seed, pixel, m as u64, phase::BACKWARD_I),
            0.0,
        );
        pick_front_lanes_from_list(&hits, std::slice::from_mut(&mut lane));
        let Some(i) = lane.pick.id else { continue };
        let mut rng_i = RngStream::new(seed, pixel, m as u64, phase::SHADE_BACKWARD_I);
        let c_i = crate::relight::surface_color(
            scene,
            i,
            ray.at(lane.pick.depth),
            -ray.dir,
            &mut rng_i,
            env_samples,
        );
        for h in &hits {
            if h.depth < lane.pick.depth {
                if h.alpha > 0.99 {
                    near_singular += 1;
                }
                // the alpha ceiling keeps 1 - alpha >= 1e-4
                grad.entry_mut(h.id).d_alpha += c_i * (-1.0 / (1.0 - h.alpha));
            }
        }
        let e = grad.entry_mut(i);
        e.d_color += 1.0;
        e.d_alpha += c_i / lane.pick.alpha;
    }
    grad.scale(1.0 / m_b as f64);
    grad.check_finite()?;
    Ok((grad, near_singular))
}

/// Per-Gaussian parameter gradient accumulators. `color` holds the
/// emissive-rgb or albedo slot depending on the appearance; `normal` is
/// populated only for normal-carrying reflectance.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ParamGrad {
    pub mean: Vec3,
    pub quat: [f64; 4],
    pub log_scales: Vec3,
    pub density_logit: f64,
    pub color: Vec3,
    pub normal: Vec3,
}

impl ParamGrad {
    pub fn is_finite(&self) -> bool {
        self.mean.is_finite()
            && self.quat.iter().all(|v| v.is_finite())
            && self.log_scales.is_finite()
            && self.density_logit.is_finite()
            && self.color.is_finite()
            && self.normal.is_finite()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradBuffer {
    pub per_gaussian: Vec<ParamGrad>,
}

impl GradBuffer {
    pub fn zeros(n: usize) -> GradBuffer {
        GradBuffer {
            per_gaussian: vec![ParamGrad::default(); n],
        }
    }

    /// Deterministic merge: always fold buffers in a fixed order.
    pub fn merge(&mut self, other: &GradBuffer) {
        assert_eq!(self.per_gaussian.len(), other.per_gaussian.len());
        for (a, b) in self.per_gaussian.iter_mut().zip(&other.per_gaussian) {
            a.mean += b.mean;
            for c in 0..4 {
                a.quat[c] += b.quat[c];
            }
            a.log_scales += b.log_scales;
            a.density_logit += b.density_logit;
            a.color += b.color;
            a.normal += b.normal;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.per_gaussian {
            g.mean = g.mean * s;
            for c in 0..4 {
                g.quat[c] *= s;
            }
            g.log_scales = g.log_scales * s;
            g.density_logit *= s;
            g.color = g.color * s;
            g.normal = g.normal * s;
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for (id, g) in self.per_gaussian.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!(
                    "parameter gradient for gaussian {id}"
                )));
            }
        }
        Ok(())
    }
}

/// Chains an opacity gradient into the Gaussian's geometry and density
/// parameters and accumulates it.
///
/// The opacity is evaluated at the maximum-response point, which itself
/// moves with the parameters; because that point is a maximizer of the
/// exponent along the ray, the motion term vanishes and the total
/// derivative reduces to the partials at the evaluated point. Finite
/// differences of the full re-maximized opacity confirm this (see tests).
pub fn backprop_to_params(
    g: &Gaussian,
    id: u32,
    ray: &Ray,
    d_alpha: Vec3,
    upstream: Vec3,
    out: &mut GradBuffer,
) -> Result<()> {
    let dl_dalpha = upstream.dot(d_alpha);
    if !dl_dalpha.is_finite() {
        return Err(Error::NonFinite(format!(
            "upstream opacity gradient for gaussian {id}"
        )));
    }
    if dl_dalpha == 0.0 {
        return Ok(());
    }
    let (_, x) = g.max_response(ray);
    let v = x - g.mean;
    let r = g.rotation();
    let u = r.transpose_mul(v);
    let d_inv = vec3(
        (-2.0 * g.log_scales.x).exp(),
        (-2.0 * g.log_scales.y).exp(),
        (-2.0 * g.log_scales.z).exp(),
    );
    let w = u.hadamard(d_inv);
    let exponent = u.dot(w);
    let sigma = g.sigma();
    let alpha_pre = sigma * (-exponent).exp();
    if alpha_pre > ALPHA_MAX {
        // clamped region: opacity is flat in every parameter
        return Ok(());
    }
    let alpha = alpha_pre;

    let acc = &mut out.per_gaussian[id as usize];
    // d alpha / d mean = 2 alpha P v, with P v = R w
    acc.mean += (r * w) * (2.0 * alpha * dl_dalpha);
    // d alpha / d log_scale_k = 2 alpha w_k u_k
    acc.log_scales += w.hadamard(u) * (2.0 * alpha * dl_dalpha);
    // d alpha / d logit = alpha (1 - sigma)
    acc.density_logit += alpha * (1.0 - sigma) * dl_dalpha;
    // d alpha / d quat through R, projected onto the unit-norm constraint
    let parts = quat_to_mat3_partials(g.quat);
    let mut dq = [0.0f64; 4];
    for (d, part) in dq.iter_mut().zip(&parts) {
        *d = -2.0 * alpha * v.dot(*part * w);
    }
    let qdot: f64 = dq.iter().zip(&g.quat).map(|(d, q)| d * q).sum();
    for (c, d) in dq.iter().enumerate() {
        acc.quat[c] += (d - qdot * g.quat[c]) * dl_dalpha;
    }
    Ok(())
}

/// One row of a finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct FdEntry {
    pub gaussian: u32,
    pub param: String,
    pub channel: usize,
    pub analytic: f64,
    pub fd: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
    pub max_rel_err: f64,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Blends a ray through a plain Gaussian list without the acceleration
/// structure; the finite-difference side of the checker stays independent
/// of the traversal code it is checking.
fn blend_brute_force(gaussians: &[Gaussian], ray: &Ray, background: Vec3) -> Vec3 {
    let mut hits = Vec::new();
    for (i, g) in gaussians.iter().enumerate() {
        let (t, x) = g.max_response(ray);
        let alpha = g.opacity_at(x);
        if alpha >= crate::gaussian::ALPHA_MIN {
            hits.push(Hit {
                id: i as u32,
                alpha,
                depth: t,
            });
        }
    }
    let colors: Vec<Vec3> = gaussians
        .iter()
        .map(|g| match &g.appearance {
            Appearance::Emissive { rgb } => *rgb,
            Appearance::Reflective(refl) => refl.albedo(),
        })
        .collect();
    sorted_blend(&hits, |h| colors[h.id as usize], background).0
}

/// Checks the analytic gradient chain (blend derivatives plus parameter
/// backpropagation) against central finite differences of the sorted blend,
/// over every parameter of every Gaussian hit by the ray. Emissive color
/// parameters are included; geometry is checked for all appearances.
pub fn fd_gradcheck(scene: &Scene, ray: &Ray, step: f64) -> Result<FdReport> {
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::Config(format!(
            "finite-difference step {step} outside [1e-7, 1e-3]"
        )));
    }
    let hits = scene.collect_hits(ray);
    let mut report = FdReport::default();
    if hits.is_empty() {
        return Ok(report);
    }
    let colors: Vec<Vec3> = scene
        .gaussians
        .iter()
        .map(|g| match &g.appearance {
            Appearance::Emissive { rgb } => *rgb,
            Appearance::Reflective(refl) => refl.albedo(),
        })
        .collect();

    for ch in 0..3 {
        let upstream = match ch {
            0 => vec3(1.0, 0.0, 0.0),
            1 => vec3(0.0, 1.0, 0.0),
            _ => vec3(0.0, 0.0, 1.0),
        };
        let rg = analytic_grads(&hits, |h| colors[h.id as usize], scene.background);
        let mut chain = GradBuffer::zeros(scene.gaussians.len());
        for e in &rg.entries {
            backprop_to_params(
                &scene.gaussians[e.id as usize],
                e.id,
                ray,
                e.d_alpha,
                upstream,
                &mut chain,
            )?;
            // color chain: per-channel weight
            let mut cg = Vec3::ZERO;
            match ch {
                0 => cg.x = e.d_color,
                1 => cg.y = e.d_color,
                _ => cg.z = e.d_color,
            }
            chain.per_gaussian[e.id as usize].color += cg;
        }

        for h in &hits {
            let id = h.id as usize;
            let params: Vec<(String, f64)> = param_list(&scene.gaussians[id]);
            for (pi, (name, _)) in params.iter().enumerate() {
                let probe = |delta: f64| -> f64 {
                    let mut gs = scene.gaussians.clone();
                    gs[id] = perturbed(&gs[id], pi, delta);
                    blend_brute_force(&gs, ray, scene.background)[ch]
                };
                let fd = (probe(step) - probe(-step)) / (2.0 * step);
                let analytic = param_component(&chain.per_gaussian[id], pi);
                let err = rel_err(analytic, fd);
                report.max_rel_err = report.max_rel_err.max(err);
                report.entries.push(FdEntry {
                    gaussian: h.id,
                    param: name.clone(),
                    channel: ch,
                    analytic,
                    fd,
                    rel_err: err,
                });
            }
        }
    }
    Ok(report)
}

/// Flat parameter naming shared by the checker and the CSV report.
fn param_list(g: &Gaussian) -> Vec<(String, f64)> {
    let mut out = vec![
        ("mean.x".into(), g.mean.x),
        ("mean.y".into(), g.mean.y),
        ("mean.z".into(), g.mean.z),
        ("quat.w".into(), g.quat[0]),
        ("quat.x".into(), g.quat[1]),
        ("quat.y".into(), g.quat[2]),
        ("quat.z".into(), g.quat[3]),
        ("log_scales.x".into(), g.log_scales.x),
        ("log_scales.y".into(), g.log_scales.y),
        ("log_scales.z".into(), g.log_scales.z),
        ("density_logit".into(), g.density_logit),
    ];
    if let Appearance::Emissive { rgb } = &g.appearance {
        out.push(("rgb.r".into(), rgb.x));
        out.push(("rgb.g".into(), rgb.y));
        out.push(("rgb.b".into(), rgb.z));
    }
    out
}

fn perturbed(g: &Gaussian, param: usize, delta: f64) -> Gaussian {
    let mut mean = g.mean;
    let mut quat = g.quat;
    let mut ls = g.log_scales;
    let mut logit = g.density_logit;
    let mut appearance = g.appearance.clone();
    match param {
        0 => mean.x += delta,
        1 => mean.y += delta,
        2 => mean.z += delta,
        3..=6 => quat[param - 3] += delta,
        7 => ls.x += delta,
        8 => ls.y += delta,
        9 => ls.z += delta,
        10 => logit += delta,
        _ => {
            if let Appearance::Emissive { rgb } = &mut appearance {
                match param {
                    11 => rgb.x += delta,
                    12 => rgb.y += delta,
                    _ => rgb.z += delta,
                }
            }
        }
    }
    Gaussian::new(mean, quat, ls, logit, appearance).expect("perturbed gaussian stays valid")
}

fn param_component(p: &ParamGrad, param: usize) -> f64 {
    match param {
        0 => p.mean.x,
        1 => p.mean.y,
        2 => p.mean.z,
        3..=6 => p.quat[param - 3],
        7 => p.log_scales.x,
        8 => p.log_scales.y,
        9 => p.log_scales.z,
        10 => p.density_logit,
        11 => p.color.x,
        12 => p.color.y,
        _ => p.color.z,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::logit;
    use crate::math::quat_from_axis_angle;

    fn hit(id: u32, alpha: f64, depth: f64) -> Hit {
        Hit { id, alpha, depth }
    }

    /// Scene whose hits along +z have exactly the given (alpha, color).
    fn axis_scene(spec: &[(f64, Vec3)], background: Vec3) -> (Scene, Ray) {
        let gaussians: Vec<Gaussian> = spec
            .iter()
            .enumerate()
            .map(|(i, &(a, c))| {
                Gaussian::emissive(vec3(0.0, 0.0, 2.0 + i as f64), Vec3::splat(-1.2), logit(a), c)
            })
            .collect();
        let scene = Scene::new(gaussians, vec![], background, vec![]).unwrap();
        let ray = Ray::unbounded(Vec3::ZERO, vec3(0.0, 0.0, 1.0));
        (scene, ray)
    }

    #[test]
    fn analytic_single_hit() {
        let c = vec3(0.9, 0.1, 0.4);
        let g = analytic_grads(&[hit(0, 0.25, 1.0)], |_| c, Vec3::ZERO);
        let e = g.get(0).unwrap();
        assert!((e.d_color - 0.25).abs() < 1e-15);
        assert!((e.d_alpha - c).abs().max_component() < 1e-15);
    }

    #[test]
    fn analytic_two_hits_by_hand() {
        // front-to-back: d/dalpha_front = c1 - c2 * a2 (black background)
        let c1 = vec3(1.0, 0.5, 0.0);
        let c2 = vec3(0.2, 0.8, 1.0);
        let colors = [c1, c2];
        let g = analytic_grads(
            &[hit(0, 0.5, 1.0), hit(1, 0.4, 2.0)],
            |h| colors[h.id as usize],
            Vec3::ZERO,
        );
        let front = g.get(0).unwrap();
        assert!((front.d_alpha - (c1 - c2 * 0.4)).abs().max_component() < 1e-14);
        let back = g.get(1).unwrap();
        assert!((back.d_color - 0.4 * 0.5).abs() < 1e-15);
        assert!((back.d_alpha - c2 * 0.5).abs().max_component() < 1e-14);
    }

    #[test]
    fn analytic_matches_finite_differences_of_blend() {
        let mut rng = RngStream::new(81, 0, 0, phase::TEST);
        for _ in 0..20 {
            let n = 1 + rng.next_index(8);
            let hits: Vec<Hit> = (0..n as u32)
                .map(|i| hit(i, rng.uniform(0.05, 0.9), rng.uniform(1.0, 9.0)))
                .collect();
            let colors: Vec<Vec3> = (0..n)
                .map(|_| vec3(rng.next_f64(), rng.next_f64(), rng.next_f64()))
                .collect();
            let bg = vec3(rng.next_f64(), rng.next_f64(), rng.next_f64());
            let grads = analytic_grads(&hits, |h| colors[h.id as usize], bg);
            let h = 1e-6;
            for i in 0..n {
                // alpha partials
                let mut plus = hits.clone();
                plus[i].alpha += h;
                let mut minus = hits.clone();
                minus[i].alpha -= h;
                let cp = sorted_blend(&plus, |h| colors[h.id as usize], bg).0;
                let cm = sorted_blend(&minus, |h| colors[h.id as usize], bg).0;
                let fd = (cp - cm) / (2.0 * h);
                let e = grads.get(i as u32).unwrap();
                for ch in 0..3 {
                    assert!(
                        rel_err(e.d_alpha[ch], fd[ch]) < 1e-6,
                        "alpha {i} ch {ch}: {} vs {}",
                        e.d_alpha[ch],
                        fd[ch]
                    );
                }
                // color partials
                let mut cplus = colors.clone();
                cplus[i].x += h;
                let cp = sorted_blend(&hits, |h| cplus[h.id as usize], bg).0;
                let mut cminus = colors.clone();
                cminus[i].x -= h;
                let cm = sorted_blend(&hits, |h| cminus[h.id as usize], bg).0;
                let fd = (cp.x - cm.x) / (2.0 * h);
                assert!(rel_err(e.d_color, fd) < 1e-6, "color {i}: {} vs {fd}", e.d_color);
            }
        }
    }

    #[test]
    fn stochastic_empty_ray_is_zero() {
        let scene = Scene::new(vec![], vec![], Vec3::ZERO, vec![]).unwrap();
        let ray = Ray::unbounded(Vec3::ZERO, vec3(0.0, 0.0, 1.0));
        let g = stochastic_grads(&scene, &ray, 8, 1, 0, None, 1).unwrap();
        assert!(g.entries.is_empty());
    }

    #[test]
    fn stochastic_single_hit_expectation_is_color() {
        // E[d/dalpha_1] = P[I=1] (c - bg)/alpha = c with black background
        let c = vec3(0.7, 0.2, 0.9);
        let (scene, ray) = axis_scene(&[(0.35, c)], Vec3::ZERO);
        let rounds = 200_000u32;
        let mut acc = Vec3::ZERO;
        for t in 0..rounds {
            let g = stochastic_grads(&scene, &ray, 1, 3, t as u64, None, 1).unwrap();
            if let Some(e) = g.entries.first() {
                acc += e.d_alpha;
            }
        }
        let mean = acc / rounds as f64;
        // per-round value is (c/alpha) Bernoulli(alpha):
        // Var = (c/alpha)^2 alpha (1 - alpha)
        for ch in 0..3 {
            let v = (c[ch] / 0.35) * (c[ch] / 0.35) * 0.35 * 0.65;
            let se = (v / rounds as f64).sqrt();
            assert!((mean[ch] - c[ch]).abs() < 4.0 * se, "ch {ch}: {}", mean[ch]);
        }
    }

    #[test]
    fn stochastic_rounds_touch_at_most_one_id() {
        let (scene, ray) = axis_scene(
            &[(0.5, Vec3::ONE), (0.5, Vec3::ONE), (0.5, Vec3::ONE)],
            Vec3::ZERO,
        );
        for t in 0..200 {
            let g = stochastic_grads(&scene, &ray, 1, 5, t, None, 1).unwrap();
            assert!(g.entries.len() <= 1);
        }
    }

    #[test]
    fn record_replay_is_bit_exact() {
        let (scene, ray) = axis_scene(
            &[
                (0.4, vec3(1.0, 0.0, 0.0)),
                (0.6, vec3(0.0, 1.0, 0.0)),
                (0.3, vec3(0.0, 0.0, 1.0)),
                (0.8, vec3(0.5, 0.5, 0.5)),
            ],
            vec3(0.1, 0.1, 0.1),
        );
        let hits = scene.collect_hits(&ray);
        for pixel in 0..50u64 {
            let streamed = sample_records(&scene, &ray, 8, 9, pixel);
            let listed = sample_records_from_list(&hits, 8, 9, pixel);
            assert_eq!(streamed, listed);
            for rec in &streamed {
                if let (Some(_), Some(_)) = (rec.primary.id, rec.behind.id) {
                    assert!(rec.behind.depth > rec.primary.depth);
                }
                if rec.primary.id.is_none() {
                    assert!(rec.behind.id.is_none());
                }
            }
            let replayed =
                stochastic_grads(&scene, &ray, 8, 9, pixel, Some(&streamed), 1).unwrap();
            let resampled = stochastic_grads(&scene, &ray, 8, 9, pixel, None, 1).unwrap();
            assert_eq!(replayed, resampled);
        }
    }

    #[test]
    fn stochastic_matches_analytic_within_exact_se() {
        let mut gen = RngStream::new(91, 0, 0, phase::TEST);
        for scene_idx in 0..5 {
            let n = 2 + gen.next_index(6);
            let spec: Vec<(f64, Vec3)> = (0..n)
                .map(|_| {
                    (
                        gen.uniform(0.05, 0.9),
                        vec3(gen.next_f64(), gen.next_f64(), gen.next_f64()),
                    )
                })
                .collect();
            let bg = vec3(0.2, 0.1, 0.05);
            let (scene, ray) = axis_scene(&spec, bg);
            let hits = scene.collect_hits(&ray);
            let colors: Vec<Vec3> = spec.iter().map(|&(_, c)| c).collect();
            let oracle = analytic_grads(&hits, |h| colors[h.id as usize], bg);
            let (mean, var) = empirical_gradient_moments(&scene, &ray, n, 150_000, scene_idx);
            for i in 0..n {
                let e = oracle.get(i as u32).unwrap();
                for ch in 0..3 {
                    let se = (var[i][ch].max(0.0) / 150_000f64).sqrt();
                    assert!(
                        (mean[i][ch] - e.d_alpha[ch]).abs() <= 4.0 * se + 1e-12,
                        "scene {scene_idx} hit {i} ch {ch}: {} vs {}",
                        mean[i][ch],
                        e.d_alpha[ch]
                    );
                }
            }
        }
    }

    /// Empirical per-component mean and variance of single-round alpha
    /// gradients.
    fn empirical_gradient_moments(
        scene: &Scene,
        ray: &Ray,
        n: usize,
        rounds: u32,
        seed: u64,
    ) -> (Vec<Vec3>, Vec<Vec3>) {
        let mut sum = vec![Vec3::ZERO; n];
        let mut sum2 = vec![Vec3::ZERO; n];
        for t in 0..rounds {
            let g = stochastic_grads(scene, ray, 1, seed.wrapping_add(77), t as u64, None, 1)
                .unwrap();
            let mut round = vec![Vec3::ZERO; n];
            for e in &g.entries {
                round[e.id as usize] = e.d_alpha;
            }
            for i in 0..n {
                sum[i] += round[i];
                sum2[i] += round[i].hadamard(round[i]);
            }
        }
        let mean: Vec<Vec3> = sum.iter().map(|&s| s / rounds as f64).collect();
        let var: Vec<Vec3> = sum2
            .iter()
            .zip(&mean)
            .map(|(&s2, &m)| s2 / rounds as f64 - m.hadamard(m))
            .collect();
        (mean, var)
    }

    #[test]
    fn ssplats_front_term_magnitude_near_opaque() {
        // when the back hit is picked the front component is -c / (1 - 0.99)
        let c_back = vec3(0.5, 0.25, 1.0);
        let (scene, ray) = axis_scene(&[(0.99, vec3(1.0, 1.0, 1.0)), (0.7, c_back)], Vec3::ZERO);
        let mut found = false;
        for t in 0..5_000u64 {
            let (g, _) = ssplats_grads(&scene, &ray, 1, 13, t, 1).unwrap();
            let picked_back = g.get(1).map(|e| e.d_color > 0.0).unwrap_or(false);
            if picked_back {
                let front = g.get(0).unwrap();
                assert!((front.d_alpha - c_back * (-100.0)).abs().max_component() < 1e-9);
                found = true;
                break;
            }
        }
        assert!(found, "back hit never picked");
    }

    #[test]
    fn ssplats_single_hit_identical_to_two_index_estimator() {
        // with nothing in front and a black background the two estimators
        // coincide pointwise under the same draws
        let (scene, ray) = axis_scene(&[(0.45, vec3(0.8, 0.3, 0.6))], Vec3::ZERO);
        for t in 0..500u64 {
            let ours = stochastic_grads(&scene, &ray, 1, 19, t, None, 1).unwrap();
            let (ss, singular) = ssplats_grads(&scene, &ray, 1, 19, t, 1).unwrap();
            assert_eq!(ours, ss);
            assert_eq!(singular, 0);
        }
    }

    #[test]
    fn ssplats_touches_front_set_plus_primary() {
        let (scene, ray) = axis_scene(
            &[(0.3, Vec3::ONE), (0.3, Vec3::ONE), (0.3, Vec3::ONE), (0.3, Vec3::ONE)],
            Vec3::ZERO,
        );
        let hits = scene.collect_hits(&ray);
        assert_eq!(hits.len(), 4);
        for t in 0..200u64 {
            let (g, _) = ssplats_grads(&scene, &ray, 1, 15, t, 1).unwrap();
            let primary = g.entries.iter().find(|e| e.d_color > 0.0);
            if let Some(p) = primary {
                // entries = hits strictly in front of the primary, plus it
                assert_eq!(g.entries.len() as u32, p.id + 1);
            } else {
                assert!(g.entries.is_empty());
            }
        }
    }

    #[test]
    fn ssplats_is_unbiased_but_heavier_tailed() {
        let c = [vec3(1.0, 0.4, 0.1), vec3(0.3, 0.9, 0.7), vec3(0.6, 0.2, 0.8)];
        let (scene, ray) = axis_scene(&[(0.95, c[0]), (0.5, c[1]), (0.4, c[2])], Vec3::ZERO);
        let hits = scene.collect_hits(&ray);
        let oracle = analytic_grads(&hits, |h| c[h.id as usize], Vec3::ZERO);
        let rounds = 100_000u32;
        let mut sum_ours = Vec3::ZERO;
        let mut sum2_ours = Vec3::ZERO;
        let mut sum_ss = Vec3::ZERO;
        let mut sum2_ss = Vec3::ZERO;
        for t in 0..rounds {
            let ours = stochastic_grads(&scene, &ray, 1, 21, t as u64, None, 1).unwrap();
            let v = ours.get(0).map(|e| e.d_alpha).unwrap_or(Vec3::ZERO);
            sum_ours += v;
            sum2_ours += v.hadamard(v);
            let (ss, _) = ssplats_grads(&scene, &ray, 1, 22, t as u64, 1).unwrap();
            let v = ss.get(0).map(|e| e.d_alpha).unwrap_or(Vec3::ZERO);
            sum_ss += v;
            sum2_ss += v.hadamard(v);
        }
        let n = rounds as f64;
        let expect = oracle.get(0).unwrap().d_alpha;
        let mean_ours = sum_ours / n;
        let mean_ss = sum_ss / n;
        let var_ours = sum2_ours / n - mean_ours.hadamard(mean_ours);
        let var_ss = sum2_ss / n - mean_ss.hadamard(mean_ss);
        for ch in 0..3 {
            let se_ours = (var_ours[ch] / n).sqrt();
            let se_ss = (var_ss[ch] / n).sqrt();
            assert!((mean_ours[ch] - expect[ch]).abs() < 4.0 * se_ours);
            assert!((mean_ss[ch] - expect[ch]).abs() < 4.0 * se_ss);
        }
        let tr_ours = var_ours.x + var_ours.y + var_ours.z;
        let tr_ss = var_ss.x + var_ss.y + var_ss.z;
        assert!(
            tr_ss >= 4.0 * tr_ours,
            "variance ratio {} below 4",
            tr_ss / tr_ours
        );
    }

    #[test]
    fn backprop_partials_match_total_finite_differences() {
        // finite differences recompute the max-response point, so this
        // verifies the full (total) derivative
        let mut rng = RngStream::new(33, 0, 0, phase::TEST);
        for _ in 0..20 {
            let g = Gaussian::new(
                vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(3.0, 6.0)),
                quat_from_axis_angle(
                    vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(0.1, 1.0)),
                    rng.uniform(0.0, std::f64::consts::TAU),
                ),
                vec3(rng.uniform(-1.0, 0.5), rng.uniform(-1.0, 0.5), rng.uniform(-1.0, 0.5)),
                rng.uniform(-2.0, 2.0),
                Appearance::Emissive { rgb: Vec3::ONE },
            )
            .unwrap();
            let ray = Ray::unbounded(
                vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 0.0),
                vec3(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), 1.0),
            );
            let (_, x) = g.max_response(&ray);
            if g.opacity_at(x) < 2.0 * crate::gaussian::ALPHA_MIN {
                continue;
            }
            let mut buf = GradBuffer::zeros(1);
            // upstream dot d_alpha = 1: isolate d alpha / d theta
            backprop_to_params(&g, 0, &ray, vec3(1.0, 0.0, 0.0), vec3(1.0, 0.0, 0.0), &mut buf)
                .unwrap();
            let opacity_of = |g: &Gaussian| -> f64 {
                let (_, x) = g.max_response(&ray);
                g.opacity_at(x)
            };
            let h = 1e-5;
            for pi in 0..11 {
                let fd = (opacity_of(&perturbed(&g, pi, h)) - opacity_of(&perturbed(&g, pi, -h)))
                    / (2.0 * h);
                let analytic = param_component(&buf.per_gaussian[0], pi);
                let denom = fd.abs().max(analytic.abs()).max(1e-6);
                assert!(
                    ((fd - analytic) / denom).abs() < 1e-4,
                    "param {pi}: fd {fd} vs analytic {analytic}"
                );
            }
        }
    }

    #[test]
    fn backprop_at_mean_and_logit_rule() {
        let g = Gaussian::emissive(vec3(0.0, 0.0, 4.0), Vec3::ZERO, logit(0.6), Vec3::ONE);
        let ray = Ray::unbounded(Vec3::ZERO, vec3(0.0, 0.0, 1.0));
        let mut buf = GradBuffer::zeros(1);
        backprop_to_params(&g, 0, &ray, Vec3::ONE, vec3(1.0, 0.0, 0.0), &mut buf).unwrap();
        // ray passes through the mean: zero gradient for the mean position
        assert!(buf.per_gaussian[0].mean.length() < 1e-12);
        // logistic chain rule: alpha (1 - sigma) with alpha = sigma here
        let expect = 0.6 * (1.0 - 0.6);
        assert!((buf.per_gaussian[0].density_logit - expect).abs() < 1e-12);
    }

    #[test]
    fn gradcheck_trivial_and_small_scenes() {
        let empty = Scene::new(vec![], vec![], Vec3::ZERO, vec![]).unwrap();
        let ray = Ray::unbounded(Vec3::ZERO, vec3(0.0, 0.0, 1.0));
        let report = fd_gradcheck(&empty, &ray, 1e-5).unwrap();
        assert!(report.entries.is_empty());
        assert_eq!(report.max_rel_err, 0.0);

        let single = Scene::new(
            vec![Gaussian::emissive(
                vec3(0.1, -0.2, 4.0),
                vec3(-0.3, 0.1, -0.5),
                logit(0.55),
                vec3(0.8, 0.3, 0.6),
            )],
            vec![],
            vec3(0.1, 0.2, 0.3),
            vec![],
        )
        .unwrap();
        let report = fd_gradcheck(&single, &ray, 1e-5).unwrap();
        assert!(!report.entries.is_empty());
        assert!(report.max_rel_err <= 1e-4, "max err {}", report.max_rel_err);
    }
}
