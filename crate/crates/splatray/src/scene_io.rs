//! Scene files, and the on-disk dataset layout used for training.
//!
//! Scenes are JSON documents. Parsing is strict: unknown fields are
//! rejected and every error names the offending document path (for
//! example `gaussians[3].density_logit`). Floats are written in shortest
//! round-trip form, so `write(read(f))` preserves every value exactly.
//!
//! ```json
//! {
//!   "background": [0, 0, 0],
//!   "gaussians": [
//!     { "mean": [0, 0, 5], "quat": [1, 0, 0, 0], "log_scales": [-1, -1, -1],
//!       "density_logit": 0.5, "appearance": { "emissive": [1, 0.5, 0.2] } }
//!   ],
//!   "lights": [
//!     { "point": { "position": [0, 4, 0], "intensity": [30, 30, 30] } },
//!     { "directional": { "dir": [0, -1, 0], "irradiance": [1, 1, 1] } },
//!     { "envmap": { "path": "sky.envf" } }
//!   ],
//!   "cameras": [
//!     { "type": "pinhole", "pose": [1,0,0,0, 0,1,0,0, 0,0,1,-8],
//!       "fov": 0.8, "width": 64, "height": 64 }
//!   ]
//! }
//! ```
//!
//! A reflective appearance is `{ "reflective": { "albedo": [..] } }` for
//! the isotropic model, plus an optional `"normal"` for the cosine lobe.
//!
//! A training dataset directory holds `cameras.json` (the camera array
//! above) and `images/view_0000.csv` float images, one per camera.

use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Map, Value};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{Appearance, Gaussian, Reflectance};
use crate::image::Image;
use crate::math::{quat_norm, vec3, Pose, Vec3};
use crate::relight::EnvironmentMap;
use crate::scene::{Light, Scene};

fn fmt_path(stack: &[String]) -> String {
    if stack.is_empty() {
        "<root>".to_string()
    } else {
        stack.join(".")
    }
}

struct Ctx<'a> {
    stack: Vec<String>,
    /// Directory envmap paths resolve against.
    base_dir: &'a Path,
}

impl<'a> Ctx<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::format(fmt_path(&self.stack), message)
    }

    fn with<T>(&mut self, seg: String, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        self.stack.push(seg);
        let out = f(self);
        self.stack.pop();
        out
    }

    fn obj<'v>(&self, v: &'v Value) -> Result<&'v Map<String, Value>> {
        v.as_object().ok_or_else(|| self.err("expected an object"))
    }

    fn arr<'v>(&self, v: &'v Value) -> Result<&'v Vec<Value>> {
        v.as_array().ok_or_else(|| self.err("expected an array"))
    }

    fn f64(&self, v: &Value) -> Result<f64> {
        v.as_f64()
            .ok_or_else(|| self.err(format!("expected a number, got {v}")))
    }

    fn u32(&self, v: &Value) -> Result<u32> {
        v.as_u64()
            .and_then(|x| u32::try_from(x).ok())
            .ok_or_else(|| self.err(format!("expected an unsigned integer, got {v}")))
    }

    fn str<'v>(&self, v: &'v Value) -> Result<&'v str> {
        v.as_str()
            .ok_or_else(|| self.err(format!("expected a string, got {v}")))
    }

    fn field<'v>(&self, obj: &'v Map<String, Value>, key: &str) -> Result<&'v Value> {
        obj.get(key)
            .ok_or_else(|| self.err(format!("missing field {key:?}")))
    }

    fn reject_unknown(&self, obj: &Map<String, Value>, allowed: &[&str]) -> Result<()> {
        for key in obj.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(self.err(format!("unknown field {key:?}")));
            }
        }
        Ok(())
    }

    fn vec3(&mut self, v: &Value) -> Result<Vec3> {
        let arr = self.arr(v)?;
        if arr.len() != 3 {
            return Err(self.err(format!("expected 3 numbers, got {}", arr.len())));
        }
        Ok(vec3(
            self.f64(&arr[0])?,
            self.f64(&arr[1])?,
            self.f64(&arr[2])?,
        ))
    }
}

fn parse_gaussian(ctx: &mut Ctx, v: &Value) -> Result<Gaussian> {
    let obj = ctx.obj(v)?;
    ctx.reject_unknown(
        obj,
        &["mean", "quat", "log_scales", "density_logit", "appearance"],
    )?;
    let mean = ctx.with("mean".into(), |c| {
        let f = c.field(obj, "mean")?;
        c.vec3(f)
    })?;
    let quat = ctx.with("quat".into(), |c| {
        let arr = c.arr(c.field(obj, "quat")?)?;
        if arr.len() != 4 {
            return Err(c.err(format!("expected 4 numbers, got {}", arr.len())));
        }
        let q = [
            c.f64(&arr[0])?,
            c.f64(&arr[1])?,
            c.f64(&arr[2])?,
            c.f64(&arr[3])?,
        ];
        let n = quat_norm(q);
        if !n.is_finite() || n == 0.0 {
            return Err(c.err("quaternion norm is zero or non-finite"));
        }
        if (n - 1.0).abs() > 1e-6 {
            eprintln!(
                "warning: {}: quaternion norm {n} deviates from 1; renormalizing",
                fmt_path(&c.stack)
            );
        }
        Ok(q)
    })?;
    let log_scales = ctx.with("log_scales".into(), |c| {
        let f = c.field(obj, "log_scales")?;
        c.vec3(f)
    })?;
    let density_logit = ctx.with("density_logit".into(), |c| {
        let f = c.field(obj, "density_logit")?;
        c.f64(f)
    })?;
    let appearance = ctx.with("appearance".into(), |c| {
        let app = c.obj(c.field(obj, "appearance")?)?;
        c.reject_unknown(app, &["emissive", "reflective"])?;
        if let Some(e) = app.get("emissive") {
            if app.len() != 1 {
                return Err(c.err("appearance must have exactly one variant"));
            }
            return c.with("emissive".into(), |c| Ok(Appearance::Emissive { rgb: c.vec3(e)? }));
        }
        if let Some(r) = app.get("reflective") {
            if app.len() != 1 {
                return Err(c.err("appearance must have exactly one variant"));
            }
            return c.with("reflective".into(), |c| {
                let robj = c.obj(r)?;
                c.reject_unknown(robj, &["albedo", "normal"])?;
                let albedo = c.with("albedo".into(), |c| {
                    let f = c.field(robj, "albedo")?;
                    c.vec3(f)
                })?;
                let refl = match robj.get("normal") {
                    Some(n) => Reflectance::LambertNormal {
                        albedo,
                        normal: c.with("normal".into(), |c| c.vec3(n))?,
                    },
                    None => Reflectance::Isotropic { albedo },
                };
                Ok(Appearance::Reflective(refl))
            });
        }
        Err(c.err("appearance needs \"emissive\" or \"reflective\""))
    })?;
    Gaussian::new(mean, quat, log_scales, density_logit, appearance)
        .map_err(|e| ctx.err(e.to_string()))
}

fn parse_light(ctx: &mut Ctx, v: &Value) -> Result<Light> {
    let obj = ctx.obj(v)?;
    ctx.reject_unknown(obj, &["point", "directional", "envmap"])?;
    if obj.len() != 1 {
        return Err(ctx.err("light must have exactly one variant"));
    }
    if let Some(p) = obj.get("point") {
        return ctx.with("point".into(), |c| {
            let pobj = c.obj(p)?;
            c.reject_unknown(pobj, &["position", "intensity"])?;
            let position = c.with("position".into(), |c| {
                let f = c.field(pobj, "position")?;
                c.vec3(f)
            })?;
            let intensity = c.with("intensity".into(), |c| {
                let f = c.field(pobj, "intensity")?;
                let i = c.vec3(f)?;
                if i.min(Vec3::ZERO) != Vec3::ZERO {
                    return Err(c.err("intensity must be nonnegative"));
                }
                Ok(i)
            })?;
            Ok(Light::Point {
                position,
                intensity,
            })
        });
    }
    if let Some(d) = obj.get("directional") {
        return ctx.with("directional".into(), |c| {
            let dobj = c.obj(d)?;
            c.reject_unknown(dobj, &["dir", "irradiance"])?;
            let dir = c.with("dir".into(), |c| {
                let f = c.field(dobj, "dir")?;
                let d = c.vec3(f)?;
                if d.length() == 0.0 {
                    return Err(c.err("direction must be nonzero"));
                }
                Ok(d.normalized())
            })?;
            let irradiance = c.with("irradiance".into(), |c| {
                let f = c.field(dobj, "irradiance")?;
                let i = c.vec3(f)?;
                if i.min(Vec3::ZERO) != Vec3::ZERO {
                    return Err(c.err("irradiance must be nonnegative"));
                }
                Ok(i)
            })?;
            Ok(Light::Directional { dir, irradiance })
        });
    }
    let e = obj.get("envmap").unwrap();
    ctx.with("envmap".into(), |c| {
        let eobj = c.obj(e)?;
        c.reject_unknown(eobj, &["path"])?;
        let rel = c.with("path".into(), |c| {
            let f = c.field(eobj, "path")?;
            Ok(c.str(f)?.to_string())
        })?;
        let full = c.base_dir.join(&rel);
        let map = EnvironmentMap::read(full.to_str().unwrap_or(&rel))?;
        Ok(Light::Envmap {
            map: Arc::new(map),
            path: rel,
        })
    })
}

fn parse_camera(ctx: &mut Ctx, v: &Value) -> Result<Camera> {
    let obj = ctx.obj(v)?;
    ctx.reject_unknown(obj, &["type", "pose", "fov", "width", "height"])?;
    let kind = ctx.with("type".into(), |c| Ok(c.str(c.field(obj, "type")?)?.to_string()))?;
    let pose = ctx.with("pose".into(), |c| {
        let arr = c.arr(c.field(obj, "pose")?)?;
        if arr.len() != 12 {
            return Err(c.err(format!("expected 12 numbers (3x4 row-major), got {}", arr.len())));
        }
        let mut vals = [0.0f64; 12];
        for (i, v) in arr.iter().enumerate() {
            vals[i] = c.f64(v)?;
            if !vals[i].is_finite() {
                return Err(c.err("pose entries must be finite"));
            }
        }
        Ok(Pose::from_rows_3x4(&vals))
    })?;
    let fov = ctx.with("fov".into(), |c| {
        let f = c.field(obj, "fov")?;
        c.f64(f)
    })?;
    let width = ctx.with("width".into(), |c| {
        let f = c.field(obj, "width")?;
        c.u32(f)
    })?;
    let height = ctx.with("height".into(), |c| {
        let f = c.field(obj, "height")?;
        c.u32(f)
    })?;
    let cam = match kind.as_str() {
        "pinhole" => Camera::Pinhole {
            pose,
            fov_y: fov,
            width,
            height,
        },
        "fisheye" => Camera::Fisheye {
            pose,
            fov,
            width,
            height,
        },
        other => {
            return Err(ctx.err(format!(
                "unknown camera type {other:?}, expected pinhole or fisheye"
            )))
        }
    };
    cam.validate().map_err(|e| ctx.err(e.to_string()))?;
    Ok(cam)
}

/// Parses a scene document; `base_dir` anchors relative envmap paths.
pub fn scene_from_json(text: &str, base_dir: &Path) -> Result<Scene> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| Error::format("<root>", format!("malformed JSON: {e}")))?;
    let mut ctx = Ctx {
        stack: Vec::new(),
        base_dir,
    };
    let root = ctx.obj(&value)?;
    ctx.reject_unknown(root, &["background", "gaussians", "lights", "cameras"])?;
    let background = ctx.with("background".into(), |c| {
        let f = c.field(root, "background")?;
        c.vec3(f)
    })?;
    let gaussians = ctx
        .arr(ctx.field(root, "gaussians")?)?
        .iter()
        .enumerate()
        .map(|(i, g)| ctx.with(format!("gaussians[{i}]"), |c| parse_gaussian(c, g)))
        .collect::<Result<Vec<_>>>()?;
    let lights = ctx
        .arr(ctx.field(root, "lights")?)?
        .iter()
        .enumerate()
        .map(|(i, l)| ctx.with(format!("lights[{i}]"), |c| parse_light(c, l)))
        .collect::<Result<Vec<_>>>()?;
    let cameras = ctx
        .arr(ctx.field(root, "cameras")?)?
        .iter()
        .enumerate()
        .map(|(i, cm)| ctx.with(format!("cameras[{i}]"), |c| parse_camera(c, cm)))
        .collect::<Result<Vec<_>>>()?;
    Scene::new(gaussians, lights, background, cameras)
}

pub fn read_scene(path: &str) -> Result<Scene> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = Path::new(path).parent().unwrap_or_else(|| Path::new("."));
    scene_from_json(&text, base)
}

/// Parses a standalone lights document `{"lights": [...]}` with the same
/// light schema as scene files.
pub fn lights_from_json(text: &str, base_dir: &Path) -> Result<Vec<Light>> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| Error::format("<root>", format!("malformed JSON: {e}")))?;
    let mut ctx = Ctx {
        stack: Vec::new(),
        base_dir,
    };
    let root = ctx.obj(&value)?;
    ctx.reject_unknown(root, &["lights"])?;
    ctx.arr(ctx.field(root, "lights")?)?
        .iter()
        .enumerate()
        .map(|(i, l)| ctx.with(format!("lights[{i}]"), |c| parse_light(c, l)))
        .collect()
}

pub fn read_lights(path: &str) -> Result<Vec<Light>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = Path::new(path).parent().unwrap_or_else(|| Path::new("."));
    lights_from_json(&text, base)
}

fn vec3_json(v: Vec3) -> Value {
    json!([v.x, v.y, v.z])
}

pub fn scene_to_json(scene: &Scene) -> Value {
    let gaussians: Vec<Value> = scene
        .gaussians
        .iter()
        .map(|g| {
            let appearance = match &g.appearance {
                Appearance::Emissive { rgb } => json!({ "emissive": vec3_json(*rgb) }),
                Appearance::Reflective(Reflectance::Isotropic { albedo }) => {
                    json!({ "reflective": { "albedo": vec3_json(*albedo) } })
                }
                Appearance::Reflective(Reflectance::LambertNormal { albedo, normal }) => {
                    json!({ "reflective": {
                        "albedo": vec3_json(*albedo),
                        "normal": vec3_json(*normal),
                    }})
                }
            };
            json!({
                "mean": vec3_json(g.mean),
                "quat": [g.quat[0], g.quat[1], g.quat[2], g.quat[3]],
                "log_scales": vec3_json(g.log_scales),
                "density_logit": g.density_logit,
                "appearance": appearance,
            })
        })
        .collect();
    let lights: Vec<Value> = scene
        .lights
        .iter()
        .map(|l| match l {
            Light::Point {
                position,
                intensity,
            } => json!({ "point": {
                "position": vec3_json(*position),
                "intensity": vec3_json(*intensity),
            }}),
            Light::Directional { dir, irradiance } => json!({ "directional": {
                "dir": vec3_json(*dir),
                "irradiance": vec3_json(*irradiance),
            }}),
            Light::Envmap { path, .. } => json!({ "envmap": { "path": path } }),
        })
        .collect();
    let cameras: Vec<Value> = scene
        .cameras
        .iter()
        .map(|c| {
            let (kind, pose, fov, w, h) = match c {
                Camera::Pinhole {
                    pose,
                    fov_y,
                    width,
                    height,
                } => ("pinhole", pose, *fov_y, *width, *height),
                Camera::Fisheye {
                    pose,
                    fov,
                    width,
                    height,
                } => ("fisheye", pose, *fov, *width, *height),
            };
            json!({
                "type": kind,
                "pose": pose.to_rows_3x4().to_vec(),
                "fov": fov,
                "width": w,
                "height": h,
            })
        })
        .collect();
    json!({
        "background": vec3_json(scene.background),
        "gaussians": gaussians,
        "lights": lights,
        "cameras": cameras,
    })
}

pub fn write_scene(scene: &Scene, path: &str) -> Result<()> {
    let text = serde_json::to_string_pretty(&scene_to_json(scene))
        .map_err(|e| Error::format(path, format!("serialization failed: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Reads a training dataset directory: `cameras.json` plus
/// `images/view_0000.csv` (one per camera, zero-padded index).
pub fn read_dataset(dir: &str) -> Result<(Vec<Camera>, Vec<Image>)> {
    let cams_path = Path::new(dir).join("cameras.json");
    let cams_path = cams_path.to_str().unwrap().to_string();
    let text = std::fs::read_to_string(&cams_path).map_err(|e| Error::io(&cams_path, e))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::format(&cams_path, format!("malformed JSON: {e}")))?;
    let mut ctx = Ctx {
        stack: Vec::new(),
        base_dir: Path::new(dir),
    };
    let root = ctx.obj(&value)?;
    ctx.reject_unknown(root, &["cameras"])?;
    let cameras = ctx
        .arr(ctx.field(root, "cameras")?)?
        .iter()
        .enumerate()
        .map(|(i, cm)| ctx.with(format!("cameras[{i}]"), |c| parse_camera(c, cm)))
        .collect::<Result<Vec<_>>>()?;
    let mut images = Vec::with_capacity(cameras.len());
    for (i, cam) in cameras.iter().enumerate() {
        let img_path = Path::new(dir).join("images").join(format!("view_{i:04}.csv"));
        let img = Image::read_csv(img_path.to_str().unwrap())?;
        if img.width != cam.width() || img.height != cam.height() {
            return Err(Error::format(
                img_path.to_str().unwrap(),
                format!(
                    "image is {}x{} but cameras[{i}] is {}x{}",
                    img.width,
                    img.height,
                    cam.width(),
                    cam.height()
                ),
            ));
        }
        images.push(img);
    }
    Ok((cameras, images))
}

/// Writes a dataset directory in the layout `read_dataset` expects.
pub fn write_dataset(dir: &str, cameras: &[Camera], images: &[Image]) -> Result<()> {
    assert_eq!(cameras.len(), images.len());
    let images_dir = Path::new(dir).join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(dir, e))?;
    let cams: Vec<Value> = cameras
        .iter()
        .map(|c| {
            let scene = Scene::new(vec![], vec![], Vec3::ZERO, vec![c.clone()]).unwrap();
            scene_to_json(&scene)["cameras"][0].clone()
        })
        .collect();
    let cams_path = Path::new(dir).join("cameras.json");
    let text = serde_json::to_string_pretty(&json!({ "cameras": cams })).unwrap();
    std::fs::write(&cams_path, text + "\n")
        .map_err(|e| Error::io(cams_path.to_str().unwrap(), e))?;
    for (i, img) in images.iter().enumerate() {
        let p = images_dir.join(format!("view_{i:04}.csv"));
        img.write_csv(p.to_str().unwrap())?;
    }
    Ok(())
}
