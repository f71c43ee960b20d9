//! Pixel color evaluation: the exact sorted oracle and the sorting-free
//! stochastic estimator.
//!
//! The stochastic path visits hits in arbitrary order keeping a single
//! running selection per sample: a hit replaces the selection with
//! probability `alpha` whenever it is closer than the current choice.
//! The selected index lands on Gaussian `i` with probability
//! `alpha_i * prod_{j in front of i} (1 - alpha_j)`, so returning the
//! selected color (or background when nothing was selected) estimates the
//! sorted blend without bias. Shadow rays reuse the same selection: the ray
//! is unoccluded exactly when no Gaussian was selected, which makes the
//! 0/1 indicator an unbiased transmittance estimate.
//!
//! A selection must be offered every hit along the ray. Terminating a
//! traversal early at a near-opaque pick would need depth-ordered
//! traversal to be sound and would distort the selection masses, so no
//! such early-out exists here.

use crate::camera::Ray;
use crate::math::Vec3;
use crate::rng::{phase, RngStream};
use crate::scene::Scene;

/// One ray-Gaussian interaction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub id: u32,
    pub alpha: f64,
    pub depth: f64,
}

/// Outcome of one transparency selection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pick {
    pub id: Option<u32>,
    /// Infinity when nothing was selected.
    pub depth: f64,
    /// 1 when nothing was selected.
    pub alpha: f64,
}

impl Pick {
    pub fn none() -> Pick {
        Pick {
            id: None,
            depth: f64::INFINITY,
            alpha: 1.0,
        }
    }
}

/// Exact alpha blend over the hits, sorted by depth (ties by id). Returns
/// the composited color and the ray transmittance. This is the oracle the
/// stochastic estimators are validated against.
pub fn sorted_blend(
    hits: &[Hit],
    mut color_of: impl FnMut(&Hit) -> Vec3,
    background: Vec3,
) -> (Vec3, f64) {
    let mut order: Vec<usize> = (0..hits.len()).collect();
    order.sort_by(|&a, &b| {
        hits[a]
            .depth
            .partial_cmp(&hits[b].depth)
            .unwrap()
            .then(hits[a].id.cmp(&hits[b].id))
    });
    let mut color = Vec3::ZERO;
    let mut transmittance = 1.0;
    for &i in &order {
        let h = &hits[i];
        color += color_of(h) * (h.alpha * transmittance);
        transmittance *= 1.0 - h.alpha;
    }
    (color + background * transmittance, transmittance)
}

/// One selection in flight. Lanes carry their own stream so any number of
/// independent samples can share a single traversal.
#[derive(Clone, Copy, Debug)]
pub struct PickLane {
    pub rng: RngStream,
    /// Only hits strictly behind this depth participate.
    pub min_depth: f64,
    pub pick: Pick,
}

impl PickLane {
    pub fn new(rng: RngStream, min_depth: f64) -> PickLane {
        PickLane {
            rng,
            min_depth,
            pick: Pick::none(),
        }
    }

    /// Feeds one hit into the running selection. A uniform draw is consumed
    /// for every offered hit, which keeps the stream consumption identical
    /// across traversal and replayed-list code paths.
    #[inline]
    pub fn offer(&mut self, hit: &Hit) {
        let xi = self.rng.next_f64();
        if hit.depth > self.min_depth && xi < hit.alpha && hit.depth < self.pick.depth {
            self.pick = Pick {
                id: Some(hit.id),
                depth: hit.depth,
                alpha: hit.alpha,
            };
        }
    }
}

/// Runs any number of selections in a single streaming traversal.
pub fn pick_front_lanes(scene: &Scene, ray: &Ray, lanes: &mut [PickLane]) {
    scene.for_each_hit(ray, |hit| {
        for lane in lanes.iter_mut() {
            lane.offer(&hit);
        }
    });
}

/// Same selection over an already materialized hit list, in list order.
/// Produces bit-identical picks to `pick_front_lanes` when the list came
/// from the same traversal.
pub fn pick_front_lanes_from_list(hits: &[Hit], lanes: &mut [PickLane]) {
    for hit in hits {
        for lane in lanes.iter_mut() {
            lane.offer(hit);
        }
    }
}

/// Single stochastic-transparency selection over the hits behind
/// `min_depth` (0 for the whole ray).
pub fn pick_front(scene: &Scene, ray: &Ray, rng: &mut RngStream, min_depth: f64) -> Pick {
    let mut lane = PickLane::new(*rng, min_depth);
    pick_front_lanes(scene, ray, std::slice::from_mut(&mut lane));
    *rng = lane.rng;
    lane.pick
}

/// Unbiased Monte Carlo pixel color: the average of `m_f` independent
/// selections, each contributing the color of its selected Gaussian (or
/// the background). All samples share one traversal.
pub fn stochastic_color(
    scene: &Scene,
    ray: &Ray,
    m_f: u32,
    seed: u64,
    pixel: u64,
    env_samples: u32,
) -> Vec3 {
    assert!(m_f >= 1, "stochastic color needs at least one sample");
    let mut lanes: Vec<PickLane> = (0..m_f)
        .map(|m| {
            PickLane::new(
                RngStream::new(seed, pixel, m as u64, phase::FORWARD_PICK),
                0.0,
            )
        })
        .collect();
    pick_front_lanes(scene, ray, &mut lanes);
    let mut acc = Vec3::ZERO;
    for (m, lane) in lanes.iter().enumerate() {
        acc += match lane.pick.id {
            Some(id) => {
                let mut shade_rng =
                    RngStream::new(seed, pixel, m as u64, phase::SHADE_FORWARD);
                crate::relight::surface_color(
                    scene,
                    id,
                    ray.at(lane.pick.depth),
                    -ray.dir,
                    &mut shade_rng,
                    env_samples,
                )
            }
            None => scene.background,
        };
    }
    acc / m_f as f64
}

/// Binary transmittance estimate along a shadow ray: 1 when the stochastic
/// selection stayed empty, 0 otherwise. The expectation equals the product
/// of `(1 - alpha)` over all occluders.
pub fn transmittance_estimate(scene: &Scene, shadow_ray: &Ray, rng: &mut RngStream) -> f64 {
    if pick_front(scene, shadow_ray, rng, 0.0).id.is_none() {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{logit, Gaussian, ALPHA_MAX};
    use crate::math::vec3;

    fn hit(id: u32, alpha: f64, depth: f64) -> Hit {
        Hit { id, alpha, depth }
    }

    /// Scene whose hits along the +z axis have exactly the given
    /// (alpha, color) pairs, ordered by depth.
    pub fn axis_scene(alphas_colors: &[(f64, Vec3)], background: Vec3) -> (Scene, Ray) {
        let gaussians: Vec<Gaussian> = alphas_colors
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
    fn sorted_blend_trivials() {
        let (c, t) = sorted_blend(&[], |_| Vec3::ONE, vec3(0.2, 0.3, 0.4));
        assert_eq!(c, vec3(0.2, 0.3, 0.4));
        assert_eq!(t, 1.0);

        let (c, t) = sorted_blend(
            &[hit(0, 0.5, 1.0)],
            |_| vec3(1.0, 0.0, 0.0),
            Vec3::ZERO,
        );
        assert_eq!(c, vec3(0.5, 0.0, 0.0));
        assert_eq!(t, 0.5);
    }

    #[test]
    fn sorted_blend_two_hits_by_hand() {
        // front (a=.5, c=1), back (a=.5, c=0): C = .5*1 + .5*.5*0 = 0.5
        let colors = [Vec3::ONE, Vec3::ZERO];
        let front_to_back = [hit(0, 0.5, 1.0), hit(1, 0.5, 2.0)];
        let back_to_front = [hit(1, 0.5, 2.0), hit(0, 0.5, 1.0)];
        let (c1, _) = sorted_blend(&front_to_back, |h| colors[h.id as usize], Vec3::ZERO);
        let (c2, _) = sorted_blend(&back_to_front, |h| colors[h.id as usize], Vec3::ZERO);
        assert_eq!(c1, vec3(0.5, 0.5, 0.5));
        assert_eq!(c1, c2);
    }

    #[test]
    fn sorted_blend_is_order_independent_bit_exactly() {
        let mut rng = crate::rng::RngStream::new(71, 0, 0, crate::rng::phase::TEST);
        let hits: Vec<Hit> = (0..12)
            .map(|i| hit(i, rng.uniform(0.01, 0.95), rng.uniform(1.0, 9.0)))
            .collect();
        let colors: Vec<Vec3> = (0..12)
            .map(|_| vec3(rng.next_f64(), rng.next_f64(), rng.next_f64()))
            .collect();
        let bg = vec3(0.1, 0.2, 0.3);
        let reference = sorted_blend(&hits, |h| colors[h.id as usize], bg);
        let mut permuted = hits.clone();
        for k in 0..20 {
            // deterministic shuffle
            permuted.swap(k % 12, (k * 7 + 3) % 12);
            let out = sorted_blend(&permuted, |h| colors[h.id as usize], bg);
            assert_eq!(out.0, reference.0);
            assert_eq!(out.1, reference.1);
        }
    }

    #[test]
    fn pick_front_single_hit_binomial() {
        let (scene, ray) = axis_scene(&[(0.3, Vec3::ONE)], Vec3::ZERO);
        let mut rng = RngStream::new(5, 0, 0, phase::TEST);
        let n = 100_000;
        let mut picked = 0u32;
        for _ in 0..n {
            if pick_front(&scene, &ray, &mut rng, 0.0).id.is_some() {
                picked += 1;
            }
        }
        let p = picked as f64 / n as f64;
        let se = (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((p - 0.3).abs() < 4.0 * se, "p = {p}");
    }

    #[test]
    fn pick_front_near_opaque_front_wins() {
        let (scene, ray) = axis_scene(&[(ALPHA_MAX, Vec3::ONE), (0.9, Vec3::ZERO)], Vec3::ZERO);
        let mut rng = RngStream::new(6, 0, 0, phase::TEST);
        let n = 200_000;
        let mut front = 0u32;
        for _ in 0..n {
            if pick_front(&scene, &ray, &mut rng, 0.0).id == Some(0) {
                front += 1;
            }
        }
        let p = front as f64 / n as f64;
        let se = (ALPHA_MAX * (1.0 - ALPHA_MAX) / n as f64).sqrt();
        assert!((p - ALPHA_MAX).abs() < 4.0 * se + 1e-9, "p = {p}");
    }

    #[test]
    fn pick_front_three_hit_chi_squared() {
        // masses by hand: p1 = .3, p2 = .7*.5 = .35, p3 = .7*.5*.2 = .07,
        // none = .7*.5*.8 = .28
        let (scene, ray) = axis_scene(
            &[(0.3, Vec3::ONE), (0.5, Vec3::ONE), (0.2, Vec3::ONE)],
            Vec3::ZERO,
        );
        let expected = [0.3, 0.35, 0.07, 0.28];
        let mut rng = RngStream::new(7, 0, 0, phase::TEST);
        let n = 100_000usize;
        let mut counts = [0u32; 4];
        for _ in 0..n {
            match pick_front(&scene, &ray, &mut rng, 0.0).id {
                Some(i) => counts[i as usize] += 1,
                None => counts[3] += 1,
            }
        }
        let chi2: f64 = expected
            .iter()
            .zip(counts.iter())
            .map(|(&p, &c)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // chi-squared critical value, 3 dof, p = 0.001
        assert!(chi2 < 16.266, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn pick_front_min_depth_restricts_to_hits_behind() {
        let (scene, ray) = axis_scene(
            &[(0.9, Vec3::ONE), (0.4, Vec3::ONE), (0.6, Vec3::ONE)],
            Vec3::ZERO,
        );
        let mut rng = RngStream::new(8, 0, 0, phase::TEST);
        for _ in 0..5_000 {
            let pick = pick_front(&scene, &ray, &mut rng, 2.5);
            assert_ne!(pick.id, Some(0));
            if let Some(id) = pick.id {
                assert!(pick.depth > 2.5, "id {id} at depth {}", pick.depth);
            }
        }
    }

    #[test]
    fn stochastic_color_trivials() {
        let (scene, ray) = axis_scene(&[(ALPHA_MAX, vec3(0.0, 1.0, 0.0))], Vec3::ZERO);
        let c = stochastic_color(&scene, &ray, 2_000, 1, 0, 1);
        // up to the alpha clamp leak to background
        assert!((c - vec3(0.0, 1.0, 0.0)).abs().max_component() < 5e-3);

        let empty = Scene::new(vec![], vec![], vec3(0.25, 0.5, 0.75), vec![]).unwrap();
        let c = stochastic_color(&empty, &ray, 16, 1, 0, 1);
        assert_eq!(c, vec3(0.25, 0.5, 0.75));
    }

    #[test]
    fn stochastic_color_matches_oracle_within_exact_se() {
        let mut gen = RngStream::new(73, 0, 0, phase::TEST);
        let spec: Vec<(f64, Vec3)> = (0..16)
            .map(|_| {
                (
                    gen.uniform(0.01, 0.97),
                    vec3(gen.next_f64(), gen.next_f64(), gen.next_f64()),
                )
            })
            .collect();
        let bg = vec3(0.1, 0.05, 0.2);
        let (scene, ray) = axis_scene(&spec, bg);
        let hits = scene.collect_hits(&ray);
        assert_eq!(hits.len(), 16);
        let colors: Vec<Vec3> = spec.iter().map(|&(_, c)| c).collect();
        let (oracle, _) = sorted_blend(&hits, |h| colors[h.id as usize], bg);

        // exact per-channel variance of a single selection
        let mut sorted = hits.clone();
        sorted.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap());
        let mut trans = 1.0;
        let mut ex2 = Vec3::ZERO;
        for h in &sorted {
            let p = h.alpha * trans;
            ex2 += colors[h.id as usize].hadamard(colors[h.id as usize]) * p;
            trans *= 1.0 - h.alpha;
        }
        ex2 += bg.hadamard(bg) * trans;
        let var = ex2 - oracle.hadamard(oracle);

        let trials = 200_000u32;
        let mut acc = Vec3::ZERO;
        for t in 0..trials {
            acc += stochastic_color(&scene, &ray, 1, 11, t as u64, 1);
        }
        let mean = acc / trials as f64;
        for ch in 0..3 {
            let se = (var[ch] / trials as f64).sqrt();
            assert!(
                (mean[ch] - oracle[ch]).abs() <= 4.0 * se,
                "channel {ch}: mean {} oracle {} se {se}",
                mean[ch],
                oracle[ch]
            );
        }
    }

    #[test]
    fn transmittance_trivials_and_product_form() {
        let empty = Scene::new(vec![], vec![], Vec3::ZERO, vec![]).unwrap();
        let ray = Ray::new(Vec3::ZERO, vec3(0.0, 0.0, 1.0), 1e-4, 10.0).unwrap();
        let mut rng = RngStream::new(9, 0, 0, phase::TEST);
        for _ in 0..100 {
            assert_eq!(transmittance_estimate(&empty, &ray, &mut rng), 1.0);
        }

        let (scene, ray) = axis_scene(&[(0.3, Vec3::ONE)], Vec3::ZERO);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            acc += transmittance_estimate(&scene, &ray, &mut rng);
        }
        let mean = acc / n as f64;
        let se = (0.7f64 * 0.3 / n as f64).sqrt();
        assert!((mean - 0.7).abs() < 4.0 * se, "mean {mean}");
    }

    #[test]
    fn none_probability_matches_oracle_transmittance() {
        let (scene, ray) = axis_scene(
            &[(0.35, Vec3::ONE), (0.6, Vec3::ONE), (0.15, Vec3::ONE), (0.45, Vec3::ONE)],
            Vec3::ZERO,
        );
        let hits = scene.collect_hits(&ray);
        let (_, t_ray) = sorted_blend(&hits, |_| Vec3::ONE, Vec3::ZERO);
        let mut rng = RngStream::new(10, 0, 0, phase::TEST);
        let n = 200_000;
        let mut none = 0u32;
        for _ in 0..n {
            if pick_front(&scene, &ray, &mut rng, 0.0).id.is_none() {
                none += 1;
            }
        }
        let freq = none as f64 / n as f64;
        let se = (t_ray * (1.0 - t_ray) / n as f64).sqrt();
        assert!((freq - t_ray).abs() < 4.0 * se, "freq {freq} vs T {t_ray}");
    }

    #[test]
    fn lane_and_list_paths_pick_identically() {
        let (scene, ray) = axis_scene(
            &[(0.4, Vec3::ONE), (0.7, Vec3::ONE), (0.2, Vec3::ONE), (0.5, Vec3::ONE)],
            Vec3::ZERO,
        );
        let hits = scene.collect_hits(&ray);
        for m in 0..64u64 {
            let stream = RngStream::new(3, 9, m, phase::FORWARD_PICK);
            let mut a = PickLane::new(stream, 0.0);
            pick_front_lanes(&scene, &ray, std::slice::from_mut(&mut a));
            let mut b = PickLane::new(stream, 0.0);
            pick_front_lanes_from_list(&hits, std::slice::from_mut(&mut b));
            assert_eq!(a.pick, b.pick);
            assert_eq!(a.rng, b.rng);
        }
    }
}
