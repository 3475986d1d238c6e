use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use aestylegan::checkpoint::{load_checkpoint, save_checkpoint};
use aestylegan::data::Dataset;
use aestylegan::eval::{evaluate, EvalConfig};
use aestylegan::features::FeatureNet;
use aestylegan::metrics::reconstruction_metrics;
use aestylegan::nn::{parse_index_range, style_mix, Style};
use aestylegan::tensor::{no_grad, Tensor};
use aestylegan::trainer::{sample_z, Model, Trainer};
use aestylegan::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::grid::Grid;
use crate::{Cli, Command, StyleMixArgs};

/// Configuration after applying the file, `--set`, `--seed` and `--out`.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut overrides = cli.set.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("trainer.seed={s}"));
        overrides.push(format!("eval.seed={s}"));
    }
    let mut cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Train { resume } => train(&cfg, resume.as_deref()),
        Command::Sample { checkpoint, n } => sample(&cfg, checkpoint, *n),
        Command::Reconstruct { checkpoint, images, n } => reconstruct(&cfg, checkpoint, images, *n),
        Command::StyleMix(args) => style_mix_grid(&cfg, args),
        Command::Eval { checkpoint, data, report, bypass } => {
            eval(&cfg, checkpoint.as_deref(), data.as_deref(), report.as_deref(), *bypass)
        }
    }
}

fn load_trainer(path: &Path) -> Result<Trainer> {
    if !path.is_file() {
        return Err(Error::Argument(format!("checkpoint {} not found", path.display())));
    }
    Trainer::from_state(load_checkpoint(path)?)
}

fn open_dataset(spec: &str, trainer: &Trainer) -> Result<Dataset> {
    let net = &trainer.config().net;
    let data = Dataset::open(spec, net.resolution)?;
    if data.channels() != net.img_channels {
        return Err(Error::Config(format!("dataset has {} channels, model expects {}", data.channels(), net.img_channels)));
    }
    Ok(data)
}

fn first(data: &Dataset, n: Option<usize>) -> Result<Tensor> {
    let n = n.unwrap_or(data.len()).min(data.len());
    if n == 0 {
        return Err(Error::Argument("need at least one image".into()));
    }
    Ok(data.batch(&(0..n).collect::<Vec<_>>()))
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(&cfg.out_dir)
}

/// Applies `f` to consecutive chunks of at most `batch` images and concatenates.
fn chunked(x: &Tensor, batch: usize, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let mut parts = Vec::new();
    let mut s = 0;
    while s < x.dim(0) {
        let l = batch.max(1).min(x.dim(0) - s);
        parts.push(f(&x.narrow(0, s, l))?);
        s += l;
    }
    Ok(no_grad(|| Tensor::cat(&parts, 0)))
}

fn sample_grid(model: &Model<'_>, z: &Tensor, rows: usize, cols: usize, batch: usize) -> Result<Grid> {
    Grid::fill(rows, cols, &chunked(z, batch, |z| model.sample(z))?)
}

fn recon_grid(model: &Model<'_>, x: &Tensor, batch: usize) -> Result<Grid> {
    let xh = chunked(x, batch, |x| model.reconstruct(x))?;
    let n = x.dim(0);
    let mut g = Grid::new(2, n, x.dim(2));
    for k in 0..n {
        g.put(0, k, x, k)?;
        g.put(1, k, &xh, k)?;
    }
    Ok(g)
}

fn fixed_latents(seed: u64, n: usize, d_z: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_z(&mut rng, n, d_z)
}

fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<()> {
    let out = out_dir(cfg)?;
    let mut trainer = match resume {
        Some(p) => {
            let mut state = load_trainer(p)?.state;
            let mut ours = cfg.trainer.clone();
            ours.total_iterations = state.config.total_iterations;
            if ours != state.config {
                log::warn!("resuming with the checkpoint's training configuration; only total_iterations is taken from the run config");
            }
            state.config.total_iterations = cfg.trainer.total_iterations;
            log::info!("resuming from {} at iteration {}", p.display(), state.iteration);
            Trainer::from_state(state)?
        }
        None => Trainer::new(&cfg.trainer)?,
    };
    let mut effective = cfg.clone();
    effective.trainer = trainer.config().clone();
    fs::write(out.join("config.toml"), effective.to_toml()?)?;

    let data = open_dataset(&cfg.data, &trainer)?;
    let ckpt_dir = out.join("checkpoints");
    let grid_dir = out.join("grids");
    fs::create_dir_all(&ckpt_dir)?;
    if cfg.sample_every > 0 {
        fs::create_dir_all(&grid_dir)?;
    }
    let log_path = out.join("metrics.ndjson");
    let mut log = BufWriter::new(if resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&log_path)?
    } else {
        File::create(&log_path)?
    });
    let mut eval_log = if cfg.metric_every > 0 {
        Some(BufWriter::new(OpenOptions::new().create(true).append(resume.is_some()).write(true).truncate(resume.is_none()).open(out.join("eval.ndjson"))?))
    } else {
        None
    };

    let (rows, cols) = (cfg.grid.rows, cfg.grid.cols);
    let z_grid = fixed_latents(trainer.config().seed, rows * cols, trainer.config().net.d_z);
    let x_grid = first(&data, Some(cols))?;
    let latest = out.join("checkpoint.ckpt");
    let mut last_saved: Option<PathBuf> = resume.map(Path::to_path_buf);
    let total = trainer.config().total_iterations;
    let eval_cfg = cfg.eval.clone();
    let batch = eval_cfg.batch_size;

    let save = |t: &Trainer, last: &mut Option<PathBuf>| -> Result<()> {
        let p = ckpt_dir.join(format!("iter_{:08}.ckpt", t.state.iteration));
        save_checkpoint(&t.state, &p)?;
        save_checkpoint(&t.state, &latest)?;
        *last = Some(p);
        Ok(())
    };

    if cfg.checkpoint_every > 0 && resume.is_none() {
        save(&trainer, &mut last_saved)?;
    }
    let mut tick = Instant::now();
    let result = trainer.train_until(&data, total, &mut |t, rep| {
        if rep.iteration % cfg.log_every == 0 {
            let mut rec = rep.to_record(tick.elapsed().as_secs_f64() * 1e3);
            if !cfg.log_timing {
                rec.as_object_mut().expect("record is an object").remove("wall_ms");
            }
            writeln!(log, "{rec}")?;
        }
        // Cadences count completed iterations.
        let it = t.state.iteration;
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
            log.flush()?;
            save(t, &mut last_saved)?;
        }
        if cfg.sample_every > 0 && it % cfg.sample_every == 0 {
            sample_grid(&t.ema_model(), &z_grid, rows, cols, batch)?.save_png(&grid_dir.join(format!("samples_{it:08}.png")))?;
            recon_grid(&t.live_model(), &x_grid, batch)?.save_png(&grid_dir.join(format!("recon_{it:08}.png")))?;
        }
        if let Some(w) = eval_log.as_mut() {
            if it % cfg.metric_every == 0 {
                let report = evaluate(&t.ema_model(), &t.live_model(), &data, &t.features, &eval_cfg)?;
                let mut rec = serde_json::to_value(&report)?;
                rec.as_object_mut().expect("report is an object").insert("iter".into(), it.into());
                writeln!(w, "{rec}")?;
                w.flush()?;
            }
        }
        tick = Instant::now();
        Ok(())
    });
    log.flush()?;
    if let Err(e) = result {
        if let Error::NonFinite(_) = e {
            match &last_saved {
                Some(p) => log::error!("training diverged; last good checkpoint is {}", p.display()),
                None => log::error!("training diverged before any checkpoint was written"),
            }
        }
        return Err(e);
    }
    save(&trainer, &mut last_saved)?;
    log::info!("finished at iteration {}; checkpoint {}", trainer.state.iteration, latest.display());
    Ok(())
}

fn sample(cfg: &RunConfig, checkpoint: &Path, n: Option<usize>) -> Result<()> {
    let trainer = load_trainer(checkpoint)?;
    let cols = cfg.grid.cols;
    let n = n.unwrap_or(cfg.grid.rows * cols);
    if n == 0 {
        return Err(Error::Argument("--n must be positive".into()));
    }
    let z = fixed_latents(cfg.trainer.seed, n, trainer.config().net.d_z);
    let rows = n.div_ceil(cols);
    let cols = cols.min(n);
    let path = out_dir(cfg)?.join("samples.png");
    sample_grid(&trainer.ema_model(), &z, rows, cols, cfg.eval.batch_size)?.save_png(&path)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn reconstruct(cfg: &RunConfig, checkpoint: &Path, images: &str, n: Option<usize>) -> Result<()> {
    let trainer = load_trainer(checkpoint)?;
    let data = open_dataset(images, &trainer)?;
    let x = first(&data, n)?;
    let model = trainer.live_model();
    let xh = chunked(&x, cfg.eval.batch_size, |x| model.reconstruct(x))?;
    let m = reconstruction_metrics(&x, &xh, &trainer.features)?;
    let out = out_dir(cfg)?;

    let mut g = Grid::new(2, x.dim(0), x.dim(2));
    for k in 0..x.dim(0) {
        g.put(0, k, &x, k)?;
        g.put(1, k, &xh, k)?;
    }
    g.save_png(&out.join("reconstructions.png"))?;

    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_path(out.join("reconstructions.csv")).map_err(csv_err)?;
    w.write_record(["index", "source", "mse", "perceptual"]).map_err(csv_err)?;
    for k in 0..x.dim(0) {
        w.serialize((k, data.source(k), m.per_image_mse[k], m.per_image_perceptual[k])).map_err(csv_err)?;
    }
    w.flush()?;
    log::info!("{} images: mse {:.4}, perceptual {:.6} ({})", x.dim(0), m.mse, m.perceptual, trainer.features.name());
    Ok(())
}

fn style_mix_grid(cfg: &RunConfig, args: &StyleMixArgs) -> Result<()> {
    let trainer = load_trainer(&args.checkpoint)?;
    let n_styles = trainer.config().net.n_styles();
    let copy = parse_index_range(&args.copy_range)?;
    if let Some(&bad) = copy.iter().find(|&&j| j >= n_styles) {
        return Err(Error::Argument(format!("style index {bad} outside [0, {}]", n_styles - 1)));
    }
    let a = first(&open_dataset(&args.sources_a, &trainer)?, args.n_a)?;
    let b = first(&open_dataset(&args.sources_b, &trainer)?, args.n_b)?;
    let model = trainer.live_model();
    let batch = cfg.eval.batch_size;
    let codes = |x: &Tensor| chunked(x, batch, |x| model.encode(x)?.into_wplus(n_styles));
    let (wa, wb) = (codes(&a)?, codes(&b)?);
    let synth = |w: &Tensor| chunked(w, batch, |w| model.synthesize(&Style::WPlus(w.clone())));
    let (na, nb) = (a.dim(0), b.dim(0));

    let mut g = Grid::new(na + 1, nb + 1, a.dim(2));
    let rb = synth(&wb)?;
    for j in 0..nb {
        g.put(0, j + 1, &rb, j)?;
    }
    let ra = synth(&wa)?;
    for i in 0..na {
        g.put(i + 1, 0, &ra, i)?;
        let row = no_grad(|| Tensor::cat(&vec![wa.narrow(0, i, 1); nb], 0));
        let mixed = synth(&style_mix(&row, &wb, &copy)?)?;
        for j in 0..nb {
            g.put(i + 1, j + 1, &mixed, j)?;
        }
    }
    let path = out_dir(cfg)?.join("style_mix.png");
    g.save_png(&path)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn eval(cfg: &RunConfig, checkpoint: Option<&Path>, data: Option<&str>, report: Option<&Path>, bypass: bool) -> Result<()> {
    let trainer = match checkpoint {
        Some(p) => load_trainer(p)?,
        None if bypass => Trainer::new(&cfg.trainer)?,
        None => return Err(Error::Argument("eval needs --checkpoint unless --bypass is given".into())),
    };
    let data = open_dataset(data.unwrap_or(&cfg.data), &trainer)?;
    let ecfg = EvalConfig { bypass: bypass || cfg.eval.bypass, ..cfg.eval.clone() };
    let r = evaluate(&trainer.ema_model(), &trainer.live_model(), &data, &trainer.features, &ecfg)?;
    let json_path = match report {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            p.to_path_buf()
        }
        None => out_dir(cfg)?.join("report.json"),
    };
    let mut json = serde_json::to_string_pretty(&r)?;
    json.push('\n');
    fs::write(&json_path, json)?;
    fs::write(json_path.with_extension("txt"), r.to_table(&trainer.features.name()))?;
    print!("{}", r.to_table(&trainer.features.name()));
    Ok(())
}
