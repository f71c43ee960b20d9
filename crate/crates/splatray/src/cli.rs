//! Command-line surface. One thin binary with five subcommands wired
//! straight onto the library:
//!
//! ```text
//! splatray render    --scene s.json --camera 0 --mode sorted|stochastic
//!                    --spp 30 --seed 0 --out out.ppm
//! splatray gradcheck --scene s.json [--tolerance 1e-4] [--step 1e-5]
//!                    [--out report.csv]
//! splatray bench     --scene s.json [--estimator ours|ssplats|both]
//!                    [--mb 8] [--trials 20000] [--pixel i,j] --out out.csv
//! splatray train     (--scene s.json | --random-init N) --dataset dir
//!                    --out-dir dir --iters N [--mb 8] [--mf 30]
//!                    [--mode sorted|stochastic]
//!                    [--backward stochastic|analytic] [--batch single|all|i,j,..]
//!                    [--checkpoint-every K] [--lr-mean auto|x] [...]
//! splatray relight   --scene s.json (--lights l.json | --envmap e.envf)
//!                    --camera 0 --spp 15 --out out.ppm
//! ```
//!
//! Every subcommand accepts `--seed N` and `--threads N`; output is
//! bit-identical for any thread count.

use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grad::{fd_gradcheck, ssplats_grads, stochastic_grads, RayGrad};
use crate::image::Image;
use crate::math::{vec3, Vec3};
use crate::optim::{
    evaluate_psnr, scene_extent, train, BackwardMode, BatchSchedule, LearningRates, TrainConfig,
};
use crate::relight::EnvironmentMap;
use crate::render::{render, RenderMode, RenderOpts};
use crate::scene::{Light, Scene};
use crate::scene_io::{read_dataset, read_lights, read_scene, write_scene};
use crate::scenes::random_init_cloud;

const USAGE: &str = "usage: splatray <command> [--flag value ...]

  render     --scene s.json [--camera 0] [--mode sorted|stochastic]
             [--spp 30] --out out.ppm|out.csv
  gradcheck  --scene s.json [--tolerance 1e-4] [--step 1e-5] [--out report.csv]
  bench      --scene s.json [--estimator ours|ssplats|both] [--mb 8]
             [--trials 20000] [--pixel i,j] --out out.csv
  train      (--scene s.json | --random-init N) --dataset dir --out-dir dir
             --iters N [--mb 8] [--mf 30] [--mode sorted|stochastic]
             [--backward stochastic|analytic] [--batch single|all|i,j,..]
             [--checkpoint-every K] [--lr-mean auto|x] [--lr-rotation ..]
             [--lr-scales ..] [--lr-density ..] [--lr-appearance ..]
  relight    --scene s.json (--lights l.json | --envmap e.envf) [--camera 0]
             [--spp 15] [--env-samples 16] --out out.ppm|out.csv

every command accepts --seed N and --threads N; output is bit-identical
for any thread count";

pub fn run(args: &[String]) -> i32 {
    let Some(command) = args.first() else {
        eprintln!("{USAGE}");
        return 2;
    };
    let rest = &args[1..];
    if rest.iter().any(|a| a == "--help" || a == "-h") {
        println!("{USAGE}");
        return 0;
    }
    let outcome = match command.as_str() {
        "render" => dispatch(rest, RENDER_FLAGS, cmd_render),
        "gradcheck" => dispatch(rest, GRADCHECK_FLAGS, cmd_gradcheck),
        "bench" => dispatch(rest, BENCH_FLAGS, cmd_bench),
        "train" => dispatch(rest, TRAIN_FLAGS, cmd_train),
        "relight" => dispatch(rest, RELIGHT_FLAGS, cmd_relight),
        other => {
            eprintln!("unknown command {other:?}\n{USAGE}");
            return 2;
        }
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Simple `--flag value` parser over a fixed flag list.
struct Flags {
    values: Vec<(String, String)>,
}

impl Flags {
    fn parse(args: &[String], allowed: &[&str]) -> Result<Flags> {
        let mut values = Vec::new();
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let Some(name) = arg.strip_prefix("--") else {
                return Err(Error::Config(format!(
                    "unexpected argument {arg:?}; flags look like --name value"
                )));
            };
            if !allowed.contains(&name) {
                return Err(Error::Config(format!(
                    "unknown flag --{name}; expected one of: {}",
                    allowed
                        .iter()
                        .map(|f| format!("--{f}"))
                        .collect::<Vec<_>>()
                        .join(", ")
                )));
            }
            let value = it
                .next()
                .ok_or_else(|| Error::Config(format!("--{name} needs a value")))?;
            values.push((name.to_string(), value.clone()));
        }
        Ok(Flags { values })
    }

    fn get(&self, name: &str) -> Option<&str> {
        self.values
            .iter()
            .rev()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_str())
    }

    fn require(&self, name: &str) -> Result<&str> {
        self.get(name)
            .ok_or_else(|| Error::Config(format!("missing required flag --{name}")))
    }

    fn parse_or<T: std::str::FromStr>(&self, name: &str, default: T) -> Result<T> {
        match self.get(name) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("bad value for --{name}: {v:?}"))),
        }
    }
}

/// Installs a rayon pool of the requested size around the command body.
fn dispatch(
    args: &[String],
    allowed: &[&str],
    body: fn(&Flags) -> Result<i32>,
) -> Result<i32> {
    let flags = Flags::parse(args, allowed)?;
    let threads: usize = flags.parse_or("threads", 0)?;
    if threads == 0 {
        body(&flags)
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| body(&flags))
    }
}

fn write_image_by_extension(img: &Image, path: &str) -> Result<()> {
    if path.ends_with(".ppm") {
        img.write_ppm(path)
    } else if path.ends_with(".csv") {
        img.write_csv(path)
    } else {
        Err(Error::Config(format!(
            "output {path:?} must end in .ppm or .csv"
        )))
    }
}

const RENDER_FLAGS: &[&str] = &[
    "scene", "camera", "mode", "spp", "seed", "threads", "env-samples", "out",
];

fn cmd_render(flags: &Flags) -> Result<i32> {
    let scene = read_scene(flags.require("scene")?)?;
    let camera: usize = flags.parse_or("camera", 0)?;
    if camera >= scene.cameras.len() {
        return Err(Error::Config(format!(
            "camera {camera} out of range (scene has {})",
            scene.cameras.len()
        )));
    }
    let opts = RenderOpts {
        mode: flags.parse_or("mode", RenderMode::Sorted)?,
        m_f: flags.parse_or("spp", 30)?,
        seed: flags.parse_or("seed", 0)?,
        env_samples: flags.parse_or("env-samples", 16)?,
    };
    let out = flags.require("out")?;
    let img = render(&scene, camera, &opts);
    write_image_by_extension(&img, out)?;
    println!("wrote {out} ({}x{})", img.width, img.height);
    Ok(0)
}

const GRADCHECK_FLAGS: &[&str] = &["scene", "tolerance", "step", "out", "seed", "threads"];

fn cmd_gradcheck(flags: &Flags) -> Result<i32> {
    let scene = read_scene(flags.require("scene")?)?;
    let tolerance: f64 = flags.parse_or("tolerance", 1e-4)?;
    let step: f64 = flags.parse_or("step", 1e-5)?;
    // one ray per Gaussian, aimed straight at it from the first camera's
    // position (or a fixed probe point), so every primitive is covered
    let origin = scene
        .cameras
        .first()
        .map(|c| c.pose().trans)
        .unwrap_or(vec3(0.0, 0.0, -8.0));
    let mut rows = Vec::new();
    let mut max_err = 0.0f64;
    for (i, g) in scene.gaussians.iter().enumerate() {
        let ray = crate::camera::Ray::unbounded(origin, g.mean - origin);
        let report = fd_gradcheck(&scene, &ray, step)?;
        max_err = max_err.max(report.max_rel_err);
        for e in report.entries {
            rows.push(format!(
                "ray{},g{}.{}[{}],{},{},0,{}",
                i,
                e.gaussian,
                e.param,
                ["r", "g", "b"][e.channel],
                e.analytic,
                e.fd,
                e.rel_err
            ));
        }
    }
    if let Some(out) = flags.get("out") {
        let mut f = std::fs::File::create(out).map_err(|e| Error::io(out, e))?;
        writeln!(f, "scene_id,param,analytic,empirical_mean,stderr,ratio")
            .map_err(|e| Error::io(out, e))?;
        for r in &rows {
            writeln!(f, "{r}").map_err(|e| Error::io(out, e))?;
        }
    }
    println!(
        "gradcheck: {} comparisons, max relative error {max_err:.3e} (tolerance {tolerance:.1e})",
        rows.len()
    );
    if max_err <= tolerance {
        println!("gradcheck: PASS");
        Ok(0)
    } else {
        println!("gradcheck: FAIL");
        Ok(1)
    }
}

const BENCH_FLAGS: &[&str] = &[
    "scene",
    "estimator",
    "mb",
    "trials",
    "pixel",
    "seed",
    "threads",
    "out",
];

struct Moments {
    mean: Vec<Vec3>,
    var: Vec<Vec3>,
}

fn estimator_moments(
    scene: &Scene,
    ray: &crate::camera::Ray,
    ours: bool,
    m_b: u32,
    trials: u32,
    seed: u64,
) -> Result<Moments> {
    let n = scene.gaussians.len();
    let mut sum = vec![Vec3::ZERO; n];
    let mut sum2 = vec![Vec3::ZERO; n];
    for t in 0..trials {
        let grad: RayGrad = if ours {
            stochastic_grads(scene, ray, m_b, seed, t as u64, None, 1)?
        } else {
            ssplats_grads(scene, ray, m_b, seed, t as u64, 1)?.0
        };
        let mut round = vec![Vec3::ZERO; n];
        for e in &grad.entries {
            round[e.id as usize] = e.d_alpha;
        }
        for i in 0..n {
            sum[i] += round[i];
            sum2[i] += round[i].hadamard(round[i]);
        }
    }
    let mean: Vec<Vec3> = sum.iter().map(|&s| s / trials as f64).collect();
    let var: Vec<Vec3> = sum2
        .iter()
        .zip(&mean)
        .map(|(&s2, &m)| (s2 / trials as f64 - m.hadamard(m)).max(Vec3::ZERO))
        .collect();
    Ok(Moments { mean, var })
}

fn cmd_bench(flags: &Flags) -> Result<i32> {
    let scene_path = flags.require("scene")?;
    let scene = read_scene(scene_path)?;
    let estimator = flags.get("estimator").unwrap_or("both");
    let m_b: u32 = flags.parse_or("mb", 8)?;
    let trials: u32 = flags.parse_or("trials", 20_000)?;
    let seed: u64 = flags.parse_or("seed", 0)?;
    let out = flags.require("out")?;
    let camera = scene
        .cameras
        .first()
        .ok_or_else(|| Error::Config("bench scene needs a camera".into()))?;
    let (ci, cj) = match flags.get("pixel") {
        None => (camera.width() / 2, camera.height() / 2),
        Some(s) => {
            let (a, b) = s
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("--pixel wants i,j, got {s:?}")))?;
            (
                a.parse()
                    .map_err(|_| Error::Config(format!("bad pixel {s:?}")))?,
                b.parse()
                    .map_err(|_| Error::Config(format!("bad pixel {s:?}")))?,
            )
        }
    };
    let ray = camera
        .generate_ray((ci, cj), (0.5, 0.5))
        .ok_or_else(|| Error::Config(format!("pixel {ci},{cj} is outside the image circle")))?;

    let hits = scene.collect_hits(&ray);
    let colors: Vec<Vec3> = scene
        .gaussians
        .iter()
        .map(|g| match &g.appearance {
            crate::gaussian::Appearance::Emissive { rgb } => *rgb,
            crate::gaussian::Appearance::Reflective(r) => r.albedo(),
        })
        .collect();
    let oracle = crate::grad::analytic_grads(&hits, |h| colors[h.id as usize], scene.background);
    let front = hits
        .iter()
        .min_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap())
        .ok_or_else(|| Error::Config("benchmark ray hits nothing".into()))?;

    let run_ours = estimator == "ours" || estimator == "both";
    let run_ss = estimator == "ssplats" || estimator == "both";
    if !(run_ours || run_ss) {
        return Err(Error::Config(format!(
            "unknown estimator {estimator:?}, expected ours|ssplats|both"
        )));
    }
    let mut file = std::fs::File::create(out).map_err(|e| Error::io(out, e))?;
    writeln!(file, "scene_id,param,analytic,empirical_mean,stderr,ratio")
        .map_err(|e| Error::io(out, e))?;
    let scene_id = Path::new(scene_path)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scene");
    let mut results: Vec<(&str, Moments)> = Vec::new();
    if run_ours {
        results.push(("ours", estimator_moments(&scene, &ray, true, m_b, trials, seed)?));
    }
    if run_ss {
        results.push((
            "ssplats",
            estimator_moments(&scene, &ray, false, m_b, trials, seed.wrapping_add(1))?,
        ));
    }
    for (name, m) in &results {
        for h in &hits {
            let i = h.id as usize;
            let exact = oracle.get(h.id).map(|e| e.d_alpha).unwrap_or(Vec3::ZERO);
            for (ch, tag) in ["r", "g", "b"].iter().enumerate() {
                writeln!(
                    file,
                    "{scene_id},{name}.dalpha[{i}].{tag},{},{},{},0",
                    exact[ch],
                    m.mean[i][ch],
                    (m.var[i][ch] / trials as f64).sqrt()
                )
                .map_err(|e| Error::io(out, e))?;
            }
        }
    }
    if run_ours && run_ss {
        let tr = |v: &Vec<Vec3>, i: usize| v[i].x + v[i].y + v[i].z;
        let var_ours = tr(&results[0].1.var, front.id as usize);
        let var_ss = tr(&results[1].1.var, front.id as usize);
        let ratio = var_ss / var_ours.max(1e-300);
        writeln!(
            file,
            "{scene_id},summary.var_ratio.front,{},{var_ours},{var_ss},{ratio}",
            front.id
        )
        .map_err(|e| Error::io(out, e))?;
        println!(
            "bench: front occluder g{} variance ratio (ssplats/ours) = {ratio:.2} over {trials} trials",
            front.id
        );
    }
    println!("wrote {out}");
    Ok(0)
}

const TRAIN_FLAGS: &[&str] = &[
    "scene",
    "random-init",
    "dataset",
    "out-dir",
    "iters",
    "mb",
    "mf",
    "mode",
    "backward",
    "batch",
    "checkpoint-every",
    "seed",
    "threads",
    "env-samples",
    "lr-mean",
    "lr-rotation",
    "lr-scales",
    "lr-density",
    "lr-appearance",
];

fn parse_batch(s: &str) -> Result<BatchSchedule> {
    match s {
        "single" => Ok(BatchSchedule::Single),
        "all" => Ok(BatchSchedule::All),
        list => {
            let views = list
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<u32>()
                        .map_err(|_| Error::Config(format!("bad --batch entry {t:?}")))
                })
                .collect::<Result<Vec<u32>>>()?;
            if views.is_empty() {
                return Err(Error::Config("--batch list is empty".into()));
            }
            Ok(BatchSchedule::Fixed(views))
        }
    }
}

fn cmd_train(flags: &Flags) -> Result<i32> {
    let dataset_dir = flags.require("dataset")?;
    let out_dir = flags.require("out-dir")?;
    let (cameras, targets) = read_dataset(dataset_dir)?;
    let seed: u64 = flags.parse_or("seed", 0)?;

    let scene0 = match (flags.get("scene"), flags.get("random-init")) {
        (Some(path), None) => {
            let s = read_scene(path)?;
            // dataset cameras drive the optimization
            Scene::new(s.gaussians, s.lights, s.background, cameras)?
        }
        (None, Some(n)) => {
            let count: usize = n
                .parse()
                .map_err(|_| Error::Config(format!("bad --random-init {n:?}")))?;
            Scene::new(
                random_init_cloud(seed, count, 1.2),
                vec![],
                Vec3::ZERO,
                cameras,
            )?
        }
        _ => {
            return Err(Error::Config(
                "train needs exactly one of --scene or --random-init".into(),
            ))
        }
    };

    let extent = scene_extent(&scene0.gaussians);
    let defaults = LearningRates::defaults(extent);
    let lr_of = |flag: &str, default: f64| -> Result<f64> {
        match flags.get(flag) {
            None => Ok(default),
            Some("auto") => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("bad value for --{flag}: {v:?}"))),
        }
    };
    let lr = LearningRates {
        mean: lr_of("lr-mean", defaults.mean)?,
        rotation: lr_of("lr-rotation", defaults.rotation)?,
        log_scales: lr_of("lr-scales", defaults.log_scales)?,
        density_logit: lr_of("lr-density", defaults.density_logit)?,
        appearance: lr_of("lr-appearance", defaults.appearance)?,
    };
    let cfg = TrainConfig {
        iterations: flags.parse_or("iters", 0)?,
        m_f: flags.parse_or("mf", 30)?,
        m_b: flags.parse_or("mb", 8)?,
        lr,
        forward_mode: flags.parse_or("mode", RenderMode::Sorted)?,
        backward_mode: match flags.get("backward").unwrap_or("stochastic") {
            "stochastic" => BackwardMode::Stochastic,
            "analytic" => BackwardMode::Analytic,
            other => {
                return Err(Error::Config(format!(
                    "unknown backward mode {other:?}, expected stochastic|analytic"
                )))
            }
        },
        seed,
        batch: parse_batch(flags.get("batch").unwrap_or("single"))?,
        env_samples: flags.parse_or("env-samples", 16)?,
        checkpoint_every: flags.parse_or("checkpoint-every", 0)?,
    };

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let checkpoint_path =
        |iter: u32| format!("{out_dir}/checkpoint_{iter:06}.json");
    let (trained, reports) = train(&scene0, &targets, &cfg, |iter, scene| {
        if iter < cfg.iterations {
            write_scene(scene, &checkpoint_path(iter))?;
        }
        Ok(())
    })?;
    let final_path = format!("{out_dir}/scene_final.json");
    write_scene(&trained, &final_path)?;

    let loss_path = format!("{out_dir}/loss.csv");
    let mut f = std::fs::File::create(&loss_path).map_err(|e| Error::io(&loss_path, e))?;
    writeln!(f, "iteration,loss,psnr,fwd_ms,bwd_ms,upd_ms").map_err(|e| Error::io(&loss_path, e))?;
    for r in &reports {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            r.iteration, r.loss, r.psnr, r.fwd_ms, r.bwd_ms, r.upd_ms
        )
        .map_err(|e| Error::io(&loss_path, e))?;
    }

    let final_psnr = evaluate_psnr(
        &trained,
        &targets,
        &RenderOpts {
            mode: RenderMode::Sorted,
            seed,
            env_samples: cfg.env_samples,
            ..Default::default()
        },
    )?;
    println!(
        "train: {} iterations, final PSNR {final_psnr:.2} dB, wrote {final_path}",
        reports.len()
    );
    Ok(0)
}

const RELIGHT_FLAGS: &[&str] = &[
    "scene",
    "lights",
    "envmap",
    "camera",
    "spp",
    "seed",
    "threads",
    "env-samples",
    "out",
];

fn cmd_relight(flags: &Flags) -> Result<i32> {
    let scene = read_scene(flags.require("scene")?)?;
    let lights = match (flags.get("lights"), flags.get("envmap")) {
        (Some(path), None) => read_lights(path)?,
        (None, Some(path)) => vec![Light::Envmap {
            map: Arc::new(EnvironmentMap::read(path)?),
            path: path.to_string(),
        }],
        _ => {
            return Err(Error::Config(
                "relight needs exactly one of --lights or --envmap".into(),
            ))
        }
    };
    let scene = Scene::new(scene.gaussians, lights, scene.background, scene.cameras)?;
    let camera: usize = flags.parse_or("camera", 0)?;
    if camera >= scene.cameras.len() {
        return Err(Error::Config(format!(
            "camera {camera} out of range (scene has {})",
            scene.cameras.len()
        )));
    }
    let opts = RenderOpts {
        mode: RenderMode::Stochastic,
        m_f: flags.parse_or("spp", 15)?,
        seed: flags.parse_or("seed", 0)?,
        env_samples: flags.parse_or("env-samples", 16)?,
    };
    let out = flags.require("out")?;
    let img = render(&scene, camera, &opts);
    write_image_by_extension(&img, out)?;
    println!("wrote {out} ({}x{})", img.width, img.height);
    Ok(0)
}
