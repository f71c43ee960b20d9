//! Median-split bounding volume hierarchy over Gaussian bounds.
//!
//! The tree streams candidate primitives to a visitor without sorting or
//! materializing hit lists; the blending and gradient estimators keep O(1)
//! state per ray on top of it. Construction is deterministic: identical
//! input produces bit-identical node arrays.

use crate::camera::Ray;
use crate::gaussian::Gaussian;
use crate::math::{vec3, Vec3};

/// Bounding cutoff in standard deviations. Beyond 3 sigma the response is
/// below `exp(-9) < ALPHA_MIN` for any peak density below one, so no
/// visible hit is ever culled.
pub const K_SIGMA: f64 = 3.0;

const LEAF_SIZE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Aabb {
        Aabb {
            min: Vec3::splat(f64::INFINITY),
            max: Vec3::splat(f64::NEG_INFINITY),
        }
    }

    pub fn union(self, o: Aabb) -> Aabb {
        Aabb {
            min: self.min.min(o.min),
            max: self.max.max(o.max),
        }
    }

    pub fn centroid(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn longest_axis(&self) -> usize {
        let e = self.max - self.min;
        if e.x >= e.y && e.x >= e.z {
            0
        } else if e.y >= e.z {
            1
        } else {
            2
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    /// Slab test against the ray segment `[t_min, t_max]`.
    pub fn intersects(&self, ray: &Ray) -> bool {
        let mut t0 = ray.t_min;
        let mut t1 = ray.t_max;
        for axis in 0..3 {
            let inv = 1.0 / ray.dir[axis];
            let mut near = (self.min[axis] - ray.origin[axis]) * inv;
            let mut far = (self.max[axis] - ray.origin[axis]) * inv;
            if inv < 0.0 {
                std::mem::swap(&mut near, &mut far);
            }
            // f64::max/min drop NaNs from 0 * inf at slab boundaries
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

/// Conservative box around the `k_sigma` ellipsoid of a Gaussian: the
/// half-extent along each world axis is `k * sqrt(Sigma_aa)`.
pub fn gaussian_bounds(g: &Gaussian, k_sigma: f64) -> Aabb {
    debug_assert!(k_sigma > 0.0);
    let cov = g.covariance();
    let half = vec3(
        k_sigma * cov.m[0][0].sqrt(),
        k_sigma * cov.m[1][1].sqrt(),
        k_sigma * cov.m[2][2].sqrt(),
    );
    Aabb {
        min: g.mean - half,
        max: g.mean + half,
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Node {
    aabb: Aabb,
    /// Leaf: index into `order`. Internal: index of the right child (the
    /// left child is always the next node).
    offset: u32,
    /// Number of primitives for a leaf, 0 for internal nodes.
    count: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Bvh {
    nodes: Vec<Node>,
    /// Permutation of Gaussian indices referenced by leaves.
    order: Vec<u32>,
    /// Per-Gaussian bounds, re-tested at the leaves so a visit implies the
    /// ray intersects that primitive's own box, not just the leaf union.
    prim_bounds: Vec<Aabb>,
}

impl Bvh {
    pub fn build(gaussians: &[Gaussian], k_sigma: f64) -> Bvh {
        let bounds: Vec<Aabb> = gaussians
            .iter()
            .map(|g| gaussian_bounds(g, k_sigma))
            .collect();
        let mut order: Vec<u32> = (0..gaussians.len() as u32).collect();
        let mut nodes = Vec::new();
        if !order.is_empty() {
            build_node(&bounds, &mut order, 0, &mut nodes);
        }
        Bvh {
            nodes,
            order,
            prim_bounds: bounds,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Calls `visit` with the index of every Gaussian whose bounds the ray
    /// segment intersects, in deterministic traversal order.
    pub fn traverse(&self, ray: &Ray, mut visit: impl FnMut(u32)) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = Vec::with_capacity(64);
        stack.push(0u32);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if !node.aabb.intersects(ray) {
                continue;
            }
            if node.count > 0 {
                let start = node.offset as usize;
                for &gi in &self.order[start..start + node.count as usize] {
                    if self.prim_bounds[gi as usize].intersects(ray) {
                        visit(gi);
                    }
                }
            } else {
                // right pushed first so the left child (ni + 1) pops first
                stack.push(node.offset);
                stack.push(ni + 1);
            }
        }
    }
}

/// Builds the subtree over `order[..]`, returns its node index.
fn build_node(bounds: &[Aabb], order: &mut [u32], base: u32, nodes: &mut Vec<Node>) -> u32 {
    let aabb = order
        .iter()
        .fold(Aabb::empty(), |acc, &i| acc.union(bounds[i as usize]));
    let idx = nodes.len() as u32;
    if order.len() <= LEAF_SIZE {
        nodes.push(Node {
            aabb,
            offset: base,
            count: order.len() as u32,
        });
        return idx;
    }
    let axis = aabb.longest_axis();
    // stable sort with an index tie-break keeps construction deterministic
    order.sort_by(|&a, &b| {
        let ca = bounds[a as usize].centroid()[axis];
        let cb = bounds[b as usize].centroid()[axis];
        ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
    });
    let mid = order.len() / 2;
    nodes.push(Node {
        aabb,
        offset: 0,
        count: 0,
    });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_node(bounds, lo, base, nodes);
    debug_assert_eq!(left, idx + 1);
    let right = build_node(bounds, hi, base + mid as u32, nodes);
    nodes[idx as usize].offset = right;
    idx
}
