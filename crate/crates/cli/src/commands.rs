use std::cell::RefCell;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use dynpat::acs::{AcsConfig, Backend};
use dynpat::admm::bench_flow_system;
use dynpat::energy::Weights;
use dynpat::grid::{DataSeq, Grid2D, ImageSeq, MotionSeq, SensorData};
use dynpat::linsolve::{PrecondKind, SolverKind};
use dynpat::outer::FistaConfig;
use dynpat::phantom::{make_dynamic_phantom, simulate_data, PhantomConfig};
use dynpat::recon::{default_alpha_hat, motion_system, run_recipe, Recipe};
use dynpat::sampling::{make_rsp_schedule, SamplingSchedule};
use dynpat::wave::WaveOperator;

use crate::config::{load, relative_to, BenchConfig, ReconstructConfig, SimulateConfig};
use crate::error::{CliError, CliResult};
use crate::render::{render_flow, render_gray, translation_correct};
use crate::volume::{read_volume, write_volume, Sidecar};

pub const MANIFEST: &str = "manifest.json";
pub const SCHEDULE: &str = "schedule.json";
pub const PHANTOM: &str = "phantom.f64";
pub const DATA_FULL: &str = "data_full.f64";
pub const DATA_SUB: &str = "data_sub.f64";

/// Command-line settings that override config values.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub backend_p: Option<Backend>,
    pub backend_v: Option<Backend>,
    pub precond: Option<PrecondKind>,
    pub solver: Option<SolverKind>,
}

fn tool() -> String {
    format!("dynpat {}", env!("CARGO_PKG_VERSION"))
}

fn image_meta(p: &ImageSeq, provenance: serde_json::Value) -> Sidecar {
    Sidecar::new("image", "a.u.", &[p.frames, p.ny, p.nx], &["frame", "y", "x"], provenance)
}

fn motion_meta(v: &MotionSeq, provenance: serde_json::Value) -> Sidecar {
    Sidecar::new(
        "motion",
        "pixel/frame",
        &[v.frames, 2, v.ny, v.nx],
        &["frame", "component", "y", "x"],
        provenance,
    )
}

fn data_meta(d: &DataSeq, provenance: serde_json::Value) -> CliResult<Sidecar> {
    let first = &d.frames[0];
    if d.frames.iter().any(|f| f.n_sensors != first.n_sensors || f.n_tau != first.n_tau) {
        return Err(CliError::config("frames hold different sensor counts"));
    }
    Ok(Sidecar::new(
        "sensor-data",
        "a.u.",
        &[d.n_frames(), first.n_sensors, first.n_tau],
        &["frame", "sensor", "time"],
        provenance,
    ))
}

fn flat_data(d: &DataSeq) -> Vec<f64> {
    d.frames.iter().flat_map(|f| f.values.iter().copied()).collect()
}

fn read_images(path: &Path) -> CliResult<ImageSeq> {
    let (values, meta) = read_volume(path)?;
    match (meta.kind.as_str(), meta.shape.as_slice()) {
        ("image", &[t, ny, nx]) => Ok(ImageSeq::from_vec(nx, ny, t, values)?),
        _ => Err(CliError::config(format!("{} is not an image volume", path.display()))),
    }
}

fn write_csv(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text)?;
    Ok(())
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().cloned().fold(0.0, f64::max)
}

fn write_gray_frames(dir: &Path, prefix: &str, p: &ImageSeq, window_max: f64) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    for (t, frame) in p.frames_iter().enumerate() {
        render_gray(frame, p.nx, p.ny, window_max).save(dir.join(format!("{prefix}_{t:03}.png")))?;
    }
    Ok(())
}

// simulate ---------------------------------------------------------------------

pub fn simulate(config: &Path, out: &Path, ov: &Overrides) -> CliResult<()> {
    let mut cfg: SimulateConfig = load(config)?;
    if let Some(seed) = ov.seed {
        cfg.noise_seed = seed;
    }
    let grid = cfg.grid.unwrap_or_else(Grid2D::phantom_default);
    grid.validate()?;
    let phantom = cfg.phantom.clone().unwrap_or_else(PhantomConfig::default_tracks);
    cfg.grid = Some(grid);
    cfg.phantom = Some(phantom.clone());

    let fwd = WaveOperator::with_boundary_sensors(grid, cfg.sensors)?;
    let sched = make_rsp_schedule(cfg.sensors, cfg.subsampling, cfg.schedule_seed)?;
    let truth = make_dynamic_phantom(grid.nx, grid.ny, &phantom.tracks, phantom.frames)?;
    let start = Instant::now();
    let sim = simulate_data(&truth, &fwd, &sched, cfg.sigma, cfg.noise_seed)?;

    fs::create_dir_all(out)?;
    let prov = json!({ "tool": tool(), "noise_seed": cfg.noise_seed, "schedule_seed": cfg.schedule_seed });
    write_volume(&out.join(PHANTOM), &truth.values, &image_meta(&truth, prov.clone()))?;
    write_volume(&out.join(DATA_FULL), &flat_data(&sim.full), &data_meta(&sim.full, prov.clone())?)?;
    write_volume(&out.join(DATA_SUB), &flat_data(&sim.sub), &data_meta(&sim.sub, prov)?)?;
    fs::write(out.join(SCHEDULE), sched.to_json()?)?;
    let manifest = json!({
        "tool": tool(),
        "config": cfg,
        "snr_db": sim.snr_db,
        "files": { "phantom": PHANTOM, "data_full": DATA_FULL, "data_sub": DATA_SUB, "schedule": SCHEDULE },
    });
    fs::write(out.join(MANIFEST), serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    println!(
        "simulated {} frames, {} sensors ({} per frame), mean SNR {:.2} dB, {:.1} s -> {}",
        truth.frames,
        cfg.sensors,
        sched.sensors_per_frame(),
        sim.snr_db,
        start.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

/// What `simulate` wrote, read back.
pub struct Dataset {
    pub config: SimulateConfig,
    pub grid: Grid2D,
    pub sched: SamplingSchedule,
    pub data: DataSeq,
    pub truth: Option<ImageSeq>,
}

pub fn load_dataset(dir: &Path) -> CliResult<Dataset> {
    let manifest: serde_json::Value = load(&dir.join(MANIFEST))?;
    let config: SimulateConfig = serde_json::from_value(manifest["config"].clone())
        .map_err(|e| CliError::config(format!("{}: {e}", dir.join(MANIFEST).display())))?;
    let grid = config
        .grid
        .ok_or_else(|| CliError::config("manifest lacks the grid"))?;
    let sched_text = fs::read_to_string(dir.join(SCHEDULE)).map_err(|e| CliError::config(format!("{}: {e}", dir.join(SCHEDULE).display())))?;
    let sched = SamplingSchedule::from_json(&sched_text)?;
    let (values, meta) = read_volume(&dir.join(DATA_SUB))?;
    let &[t, m, nt] = meta.shape.as_slice() else {
        return Err(CliError::config("sub-sampled data must have shape [frame, sensor, time]"));
    };
    let frames = values
        .chunks(m * nt)
        .map(|c| SensorData::from_vec(m, nt, c.to_vec()))
        .collect::<dynpat::Result<Vec<_>>>()?;
    debug_assert_eq!(frames.len(), t);
    let truth = if dir.join(PHANTOM).exists() {
        Some(read_images(&dir.join(PHANTOM))?)
    } else {
        None
    };
    Ok(Dataset {
        data: DataSeq {
            frames,
            sigma: config.sigma,
        },
        config,
        grid,
        sched,
        truth,
    })
}

// reconstruct --------------------------------------------------------------------

pub fn acs_config(ov: &Overrides, alternations: Option<usize>) -> AcsConfig {
    let mut acs = AcsConfig::default();
    if let Some(b) = ov.backend_p {
        acs.backend_p = b;
    }
    if let Some(b) = ov.backend_v {
        acs.backend_v = b;
    }
    if let Some(p) = ov.precond {
        acs.admm_v.precond = p;
    }
    if let Some(s) = ov.solver {
        acs.admm_v.solver = s;
    }
    if let Some(a) = alternations {
        acs.alternations = a;
    }
    acs
}

fn recipe_weights(cfg: &ReconstructConfig, subsampling: usize) -> CliResult<Weights> {
    let alpha = || {
        cfg.alpha.or_else(|| default_alpha_hat(subsampling)).ok_or_else(|| {
            CliError::config(format!("no default alpha for sub-sampling factor {subsampling}; set \"alpha\""))
        })
    };
    Ok(match cfg.recipe {
        Recipe::Nnls => Weights {
            alpha: cfg.alpha.unwrap_or(0.0),
            beta: cfg.beta.unwrap_or(0.0),
            gamma: cfg.gamma.unwrap_or(0.0),
        },
        Recipe::TvFbf => Weights {
            alpha: alpha()?,
            beta: cfg.beta.unwrap_or(0.0),
            gamma: cfg.gamma.unwrap_or(0.0),
        },
        Recipe::Tvtvl2 => {
            let a = alpha()?;
            Weights {
                alpha: a,
                beta: cfg.beta.unwrap_or(a),
                gamma: cfg.gamma.unwrap_or(1.0),
            }
        }
    })
}

pub fn reconstruct(config: &Path, out: &Path, ov: &Overrides) -> CliResult<()> {
    let cfg: ReconstructConfig = load(config)?;
    let ds = load_dataset(&relative_to(config, &cfg.data_dir))?;
    let weights = recipe_weights(&cfg, ds.config.subsampling)?;
    let fwd = WaveOperator::with_boundary_sensors(ds.grid, ds.config.sensors)?;
    let acs = acs_config(ov, cfg.alternations);
    let fista = FistaConfig {
        lipschitz_seed: ov.seed.unwrap_or(0),
        ..FistaConfig::with_iters(cfg.iters.unwrap_or_else(|| cfg.recipe.default_iters()))
    };
    log::info!("{}: {weights:?}, {} iterations, {acs:?}", cfg.recipe, fista.iters);
    fs::create_dir_all(out)?;

    let snap_dir = out.join("snapshots");
    let snap_err: RefCell<Option<CliError>> = RefCell::new(None);
    let mut snapshot = |i: usize, p: &ImageSeq, _: &MotionSeq| {
        let Some(every) = cfg.snapshot_every.filter(|&k| k > 0) else { return };
        if i % every != 0 || snap_err.borrow().is_some() {
            return;
        }
        let r = fs::create_dir_all(&snap_dir)
            .map_err(CliError::from)
            .and_then(|_| write_volume(&snap_dir.join(format!("p_iter{i:04}.f64")), &p.values, &image_meta(p, json!({ "iteration": i }))));
        if let Err(e) = r {
            *snap_err.borrow_mut() = Some(e);
        }
    };

    let start = Instant::now();
    let res = run_recipe(cfg.recipe, &ds.data, &ds.sched, &fwd, weights, &acs, &fista, None, ds.truth.as_ref(), Some(&mut snapshot))?;
    let seconds = start.elapsed().as_secs_f64();
    if let Some(e) = snap_err.into_inner() {
        return Err(e);
    }

    let prov = json!({
        "tool": tool(),
        "recipe": cfg.recipe,
        "weights": { "alpha": weights.alpha, "beta": weights.beta, "gamma": weights.gamma },
        "iterations": res.iterations,
        "backend_p": acs.backend_p,
        "backend_v": acs.backend_v,
    });
    write_volume(&out.join("p.f64"), &res.p.values, &image_meta(&res.p, prov.clone()))?;
    if let Some(v) = &res.v {
        write_volume(&out.join("v.f64"), &v.values, &motion_meta(v, prov.clone()))?;
    }
    write_csv(&out.join("energy.csv"), &res.energy.to_csv())?;
    write_csv(&out.join("inner_energy.csv"), &res.inner.to_csv())?;
    let window = ds.truth.as_ref().map_or_else(|| max_of(&res.p.values), |t| max_of(&t.values));
    write_gray_frames(&out.join("png"), "p", &res.p, window)?;
    let metrics = json!({
        "provenance": prov,
        "eta": res.eta,
        "restarts": res.restarts,
        "seconds": seconds,
        "final_energy": res.energy.last_energy(),
        "window_max": window,
        "metrics": res.metrics,
    });
    fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&metrics).expect("metrics serialize"))?;
    match &res.metrics {
        Some(m) => println!(
            "{} finished {} iterations in {seconds:.1} s: mean relative error {:.4}, mean PSNR {:.2} dB -> {}",
            cfg.recipe,
            res.iterations,
            m.mean_rel_error,
            m.mean_psnr_db,
            out.display()
        ),
        None => println!("{} finished {} iterations in {seconds:.1} s -> {}", cfg.recipe, res.iterations, out.display()),
    }
    Ok(())
}

// render ---------------------------------------------------------------------

pub fn render(input: &Path, out: &Path, window_max: Option<f64>, correct: bool, border: usize) -> CliResult<()> {
    let (mut values, meta) = read_volume(input)?;
    fs::create_dir_all(out)?;
    match (meta.kind.as_str(), meta.shape.as_slice()) {
        ("image", &[t, ny, nx]) => {
            let p = ImageSeq::from_vec(nx, ny, t, values)?;
            let window = window_max.unwrap_or_else(|| max_of(&p.values));
            write_gray_frames(out, "frame", &p, window)?;
            println!("rendered {t} image frames with window [0, {window:.4}] -> {}", out.display());
        }
        ("motion", &[t, 2, ny, nx]) => {
            let n = nx * ny;
            if correct {
                translation_correct(&mut values, n);
            }
            // the last frame carries no flow
            for (k, frame) in values.chunks(2 * n).take(t.saturating_sub(1)).enumerate() {
                render_flow(&frame[..n], &frame[n..], nx, ny, border).save(out.join(format!("flow_{k:03}.png")))?;
            }
            println!("rendered {} flow frames -> {}", t.saturating_sub(1), out.display());
        }
        _ => {
            return Err(CliError::config(format!(
                "cannot render a '{}' volume of shape {:?}",
                meta.kind, meta.shape
            )))
        }
    }
    Ok(())
}

pub fn translation_correct_cmd(input: &Path, out: &Path) -> CliResult<PathBuf> {
    let (mut values, mut meta) = read_volume(input)?;
    let &[_, 2, ny, nx] = meta.shape.as_slice() else {
        return Err(CliError::config(format!("{} is not a motion volume", input.display())));
    };
    if meta.kind != "motion" {
        return Err(CliError::config(format!("{} is not a motion volume", input.display())));
    }
    translation_correct(&mut values, nx * ny);
    meta.provenance = json!({ "tool": tool(), "translation_corrected_from": input.display().to_string(), "source": meta.provenance });
    fs::create_dir_all(out)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("v");
    let dest = out.join(format!("{stem}_corrected.f64"));
    write_volume(&dest, &values, &meta)?;
    println!("removed per-frame mean motion -> {}", dest.display());
    Ok(dest)
}

// bench-solvers --------------------------------------------------------------------

pub fn bench_solvers(config: &Path, out: &Path, ov: &Overrides) -> CliResult<()> {
    let cfg: BenchConfig = load(config)?;
    let p = read_images(&relative_to(config, &cfg.images))?;
    let combos: Vec<(SolverKind, PrecondKind)> = if ov.solver.is_some() || ov.precond.is_some() {
        vec![(ov.solver.unwrap_or(SolverKind::Cg), ov.precond.unwrap_or(PrecondKind::None))]
    } else {
        [SolverKind::Cg, SolverKind::Minres]
            .into_iter()
            .flat_map(|s| [PrecondKind::None, PrecondKind::Jacobi, PrecondKind::Ic0].map(|k| (s, k)))
            .collect()
    };
    let mut csv = String::from("frame,solver,precond,iterations,rel_residual,converged,seconds\n");
    let mut history = String::from("frame,solver,precond,iteration,rel_residual,seconds\n");
    for &t in &cfg.frames {
        let (a, rhs) = motion_system(&p, t, cfg.gamma, cfg.rho)?;
        for &(solver, precond) in &combos {
            let start = Instant::now();
            let rep = bench_flow_system(&a, &rhs, precond, solver, cfg.tol, cfg.max_iters)?;
            let secs = start.elapsed().as_secs_f64();
            let (s, k) = (format!("{solver:?}").to_lowercase(), format!("{precond:?}").to_lowercase());
            csv.push_str(&format!("{t},{s},{k},{},{:.6e},{},{secs:.6}\n", rep.iterations, rep.rel_residual, rep.converged));
            for line in rep.history_csv().lines().skip(1) {
                history.push_str(&format!("{t},{s},{k},{line}\n"));
            }
            println!(
                "frame {t:>3}  {s:<6} {k:<6} {:>6} iterations  residual {:.2e}{}  {secs:.3} s",
                rep.iterations,
                rep.rel_residual,
                if rep.converged { "" } else { " (not converged)" }
            );
        }
    }
    fs::create_dir_all(out)?;
    write_csv(&out.join("solver_bench.csv"), &csv)?;
    write_csv(&out.join("solver_history.csv"), &history)?;
    println!("tables -> {}", out.join("solver_bench.csv").display());
    Ok(())
}
