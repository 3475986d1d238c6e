use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use aestylegan::checkpoint::load_checkpoint;
use aestylegan::data::Dataset;
use aestylegan::metrics::reconstruction_metrics;
use aestylegan::nn::Style;
use aestylegan::trainer::{sample_z, Trainer};
use aestylegan_cli::config::RunConfig;
use aestylegan_cli::grid::to_u8;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TINY: &[&str] = &[
    "trainer.net.resolution=16",
    "trainer.net.base_channels=4",
    "trainer.net.max_channels=8",
    "trainer.net.d_z=8",
    "trainer.net.d_w=8",
    "trainer.net.n_mapping_layers=2",
    "trainer.batch_size=4",
    "data=synthetic://blobs?n=32&seed=1",
    "checkpoint_every=0",
    "sample_every=0",
    "grid.rows=2",
    "grid.cols=4",
    "eval.n_samples=16",
    "eval.n_pairs=20",
    "eval.ppl.n_paths=8",
    "eval.batch_size=8",
];

fn run(out: &Path, extra: &[&str], cmd: &[&str]) -> i32 {
    let mut args = vec!["aestylegan".to_string(), "--out".into(), out.display().to_string()];
    for s in TINY.iter().chain(extra) {
        args.push("--set".into());
        args.push(s.to_string());
    }
    args.extend(cmd.iter().map(|s| s.to_string()));
    aestylegan_cli::run(args)
}

fn records(out: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(out.join("metrics.ndjson"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn trained(dir: &Path, iters: u64) -> PathBuf {
    let out = dir.join("train");
    assert_eq!(run(&out, &[&format!("trainer.total_iterations={iters}")], &["train"]), 0);
    out.join("checkpoint.ckpt")
}

#[test]
fn joint_training_logs_every_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let code = run(&out, &["trainer.mode=JOINT", "trainer.total_iterations=200", "sample_every=100", "checkpoint_every=100"], &["train"]);
    assert_eq!(code, 0);
    let recs = records(&out);
    assert_eq!(recs.len(), 200);
    for (i, r) in recs.iter().enumerate() {
        assert_eq!(r["iter"], i as u64);
        assert_eq!(r["e_updates"], 1);
        assert!(r.get("wall_ms").is_none());
        assert!(r["d_loss"].as_f64().unwrap().is_finite());
    }
    for f in ["checkpoint.ckpt", "checkpoints/iter_00000100.ckpt", "checkpoints/iter_00000200.ckpt", "grids/samples_00000200.png", "grids/recon_00000100.png", "config.toml"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let cfg = RunConfig::from_toml(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    assert_eq!(cfg.trainer.total_iterations, 200);
    assert_eq!(cfg.trainer.net.resolution, 16);
}

#[test]
fn decoupled_logs_each_inversion_update() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(run(&out, &["trainer.mode=DECOUPLED", "trainer.e_steps_per_g_step=4", "trainer.total_iterations=3"], &["train"]), 0);
    let recs = records(&out);
    assert_eq!(recs.len(), 3);
    assert!(recs.iter().all(|r| r["e_updates"] == 4));
}

#[test]
fn resume_matches_uninterrupted_run_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let part = dir.path().join("part");
    assert_eq!(run(&full, &["trainer.total_iterations=20"], &["train"]), 0);
    assert_eq!(run(&part, &["trainer.total_iterations=10"], &["train"]), 0);
    let ckpt = part.join("checkpoint.ckpt").display().to_string();
    assert_eq!(run(&part, &["trainer.total_iterations=20"], &["train", "--resume", &ckpt]), 0);
    assert_eq!(fs::read(full.join("checkpoint.ckpt")).unwrap(), fs::read(part.join("checkpoint.ckpt")).unwrap());
    assert_eq!(fs::read(full.join("metrics.ndjson")).unwrap(), fs::read(part.join("metrics.ndjson")).unwrap());
}

#[test]
fn reconstruct_grid_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), 5);
    let out = dir.path().join("rec");
    let uri = "synthetic://blobs?n=8&seed=4";
    assert_eq!(run(&out, &[], &["reconstruct", "--checkpoint", ckpt.to_str().unwrap(), "--images", uri]), 0);

    let png = image::open(out.join("reconstructions.png")).unwrap();
    assert_eq!((png.width(), png.height()), (8 * 16 + 9 * 2, 2 * 16 + 3 * 2));

    let mut rdr = csv::Reader::from_path(out.join("reconstructions.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["index", "source", "mse", "perceptual"]);
    let rows: Vec<(usize, String, f64, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 8);

    // Independent recomputation of the pixel MSE.
    let tr = Trainer::from_state(load_checkpoint(&ckpt).unwrap()).unwrap();
    let data = Dataset::open(uri, 16).unwrap();
    let x = data.batch(&(0..8).collect::<Vec<_>>());
    let xh = tr.live_model().reconstruct(&x).unwrap();
    let per = x.numel() / 8;
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row.0, k);
        let a = &x.data()[k * per..(k + 1) * per];
        let b = &xh.data()[k * per..(k + 1) * per];
        let mse = a.iter().zip(b).map(|(p, q)| (127.5 * (p - q)).powi(2)).sum::<f64>() / per as f64;
        assert!((row.2 - mse).abs() < 1e-6, "row {k}: {} vs {mse}", row.2);
    }
    let m = reconstruction_metrics(&x, &xh, &tr.features).unwrap();
    for (row, p) in rows.iter().zip(&m.per_image_perceptual) {
        assert!((row.3 - p).abs() < 1e-9);
    }
}

#[test]
fn reconstruct_own_samples() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), 3);
    let tr = Trainer::from_state(load_checkpoint(&ckpt).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = tr.ema_model().sample(&sample_z(&mut rng, 4, 8)).unwrap();
    let imgs = dir.path().join("imgs");
    fs::create_dir_all(&imgs).unwrap();
    for k in 0..4 {
        let mut img = image::RgbImage::new(16, 16);
        for (x, y, p) in img.enumerate_pixels_mut() {
            let at = |c: usize| s.data()[((k * 3 + c) * 16 + y as usize) * 16 + x as usize];
            *p = image::Rgb([to_u8(at(0)), to_u8(at(1)), to_u8(at(2))]);
        }
        img.save(imgs.join(format!("{k}.png"))).unwrap();
    }
    let out = dir.path().join("rec");
    assert_eq!(run(&out, &[], &["reconstruct", "--checkpoint", ckpt.to_str().unwrap(), "--images", imgs.to_str().unwrap()]), 0);
    let mut rdr = csv::Reader::from_path(out.join("reconstructions.csv")).unwrap();
    let rows: Vec<(usize, String, f64, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.2.is_finite() && r.3.is_finite() && r.1.ends_with(".png")));
}

fn tile(img: &image::RgbImage, row: u32, col: u32, res: u32) -> Vec<u8> {
    let (x0, y0) = (2 + col * (res + 2), 2 + row * (res + 2));
    let mut v = Vec::new();
    for y in 0..res {
        for x in 0..res {
            v.extend_from_slice(&img.get_pixel(x0 + x, y0 + y).0);
        }
    }
    v
}

fn style_mix(dir: &Path, ckpt: &Path, range: &str, name: &str) -> (i32, PathBuf) {
    let out = dir.join(name);
    let code = run(
        &out,
        &[],
        &[
            "style-mix",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--sources-a",
            "synthetic://blobs?n=3&seed=5",
            "--sources-b",
            "synthetic://blobs?n=4&seed=6",
            "--range",
            range,
        ],
    );
    (code, out.join("style_mix.png"))
}

#[test]
fn style_mix_identities() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), 3);
    let (code, full) = style_mix(dir.path(), &ckpt, "0-5", "full");
    assert_eq!(code, 0);
    let (code, empty) = style_mix(dir.path(), &ckpt, "", "empty");
    assert_eq!(code, 0);
    let full = image::open(full).unwrap().to_rgb8();
    let empty = image::open(empty).unwrap().to_rgb8();
    assert_eq!((full.width(), full.height()), (5 * 16 + 6 * 2, 4 * 16 + 5 * 2));
    for i in 1..=3 {
        for j in 1..=4 {
            assert_eq!(tile(&full, i, j, 16), tile(&full, 0, j, 16), "full copy cell ({i},{j})");
            assert_eq!(tile(&empty, i, j, 16), tile(&empty, i, 0, 16), "empty copy cell ({i},{j})");
        }
    }
    let (code, _) = style_mix(dir.path(), &ckpt, "4-6", "bad");
    assert_eq!(code, 2);
}

#[test]
fn style_mix_paper_recipe_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let big = ["trainer.net.resolution=128", "trainer.net.max_channels=4", "trainer.total_iterations=0"];
    assert_eq!(run(&out, &big, &["train"]), 0);
    let ckpt = out.join("checkpoint.ckpt");
    let mix = dir.path().join("mix");
    let uri = "synthetic://blobs?n=11&seed=2";
    let code = run(&mix, &big, &["style-mix", "--checkpoint", ckpt.to_str().unwrap(), "--sources-a", uri, "--sources-b", uri, "--range", "7-11"]);
    assert_eq!(code, 0);
    let img = image::open(mix.join("style_mix.png")).unwrap();
    assert_eq!(img.width(), 12 * 128 + 13 * 2);
    assert_eq!(img.height(), 12 * 128 + 13 * 2);
}

#[test]
fn eval_bypass_report() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        assert_eq!(run(out, &[], &["eval", "--bypass"]), 0);
    }
    let bytes = fs::read(a.join("report.json")).unwrap();
    assert_eq!(bytes, fs::read(b.join("report.json")).unwrap());
    assert_eq!(fs::read(a.join("report.txt")).unwrap(), fs::read(b.join("report.txt")).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["fid", "lpips_diversity", "n_samples", "ppl_end", "ppl_full", "recon_fid", "recon_mse", "recon_perceptual"]);
    assert!(v["fid"].as_f64().unwrap() < 1e-3);
    assert!(v["recon_mse"].as_f64().unwrap() == 0.0);
}

#[test]
fn eval_from_checkpoint_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), 3);
    let c = ckpt.to_str().unwrap();
    let r1 = dir.path().join("r1.json");
    let r2 = dir.path().join("r2.json");
    assert_eq!(run(dir.path(), &[], &["eval", "--checkpoint", c, "--report", r1.to_str().unwrap()]), 0);
    assert_eq!(run(dir.path(), &[], &["eval", "--checkpoint", c, "--report", r2.to_str().unwrap()]), 0);
    assert_eq!(fs::read(&r1).unwrap(), fs::read(&r2).unwrap());
}

#[test]
fn sample_grid_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), 3);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(run(out, &[], &["sample", "--checkpoint", ckpt.to_str().unwrap(), "--n", "6"]), 0);
    }
    let bytes = fs::read(a.join("samples.png")).unwrap();
    assert_eq!(bytes, fs::read(b.join("samples.png")).unwrap());
    let img = image::load_from_memory(&bytes).unwrap();
    assert_eq!((img.width(), img.height()), (4 * 16 + 5 * 2, 2 * 16 + 3 * 2));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(run(&out, &["trainer.no_such_key=1"], &["train"]), 2);
    assert_eq!(run(&out, &["trainer.batch_size=0"], &["train"]), 2);
    assert_eq!(run(&out, &[], &["sample", "--checkpoint", "/nonexistent/ckpt"]), 2);
    assert_eq!(run(&out, &[], &["reconstruct", "--checkpoint", "/nonexistent/ckpt", "--images", "synthetic://blobs?n=2"]), 2);
    assert_eq!(run(&out, &[], &["eval"]), 2);
    assert_eq!(run(&out, &[], &["frobnicate"]), 2);
    let garbage = dir.path().join("garbage.ckpt");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    assert_eq!(run(&out, &[], &["sample", "--checkpoint", garbage.to_str().unwrap()]), 2);
}

#[test]
fn tiny_eval_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), 1);
    let code = run(dir.path(), &[], &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", "synthetic://blobs?n=1"]);
    assert_eq!(code, 3);
}

#[test]
fn divergence_exits_3_and_keeps_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let code = run(&out, &["trainer.adam.lr=1e200", "trainer.total_iterations=50", "checkpoint_every=1"], &["train"]);
    assert_eq!(code, 3);
    let state = load_checkpoint(&out.join("checkpoint.ckpt")).unwrap();
    assert!(state.iteration < 50);
    let last = out.join("checkpoints").join(format!("iter_{:08}.ckpt", state.iteration));
    assert_eq!(fs::read(last).unwrap(), fs::read(out.join("checkpoint.ckpt")).unwrap());
}

#[test]
fn config_file_round_trip_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    assert_eq!(run(&out, &["trainer.total_iterations=2"], &["train"]), 0);
    let written = fs::read_to_string(out.join("config.toml")).unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    fs::write(&cfg_path, &written).unwrap();
    let out2 = dir.path().join("b");
    let code = aestylegan_cli::run(["aestylegan", "--config", cfg_path.to_str().unwrap(), "--out", out2.to_str().unwrap(), "train"]);
    assert_eq!(code, 0);
    let again = fs::read_to_string(out2.join("config.toml")).unwrap();
    assert_eq!(again.replace(out2.to_str().unwrap(), "OUT"), written.replace(out.to_str().unwrap(), "OUT"));
    assert_eq!(fs::read(out.join("checkpoint.ckpt")).unwrap(), fs::read(out2.join("checkpoint.ckpt")).unwrap());
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_aestylegan");
    let st = Command::new(bin).args(["--set", "bogus=1", "train"]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("bogus"));
    let st = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(st.status.code(), Some(0));
}

#[test]
fn style_rows_match_library_mixing() {
    // Cross-check one mixed cell against a direct library computation.
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), 2);
    let (code, png) = style_mix(dir.path(), &ckpt, "2-3", "mix");
    assert_eq!(code, 0);
    let img = image::open(png).unwrap().to_rgb8();
    let tr = Trainer::from_state(load_checkpoint(&ckpt).unwrap()).unwrap();
    let m = tr.live_model();
    let a = Dataset::open("synthetic://blobs?n=3&seed=5", 16).unwrap().batch(&[1]);
    let b = Dataset::open("synthetic://blobs?n=4&seed=6", 16).unwrap().batch(&[2]);
    let wa = m.encode(&a).unwrap().into_wplus(6).unwrap();
    let wb = m.encode(&b).unwrap().into_wplus(6).unwrap();
    let mixed = m.synthesize(&Style::WPlus(aestylegan::nn::style_mix(&wa, &wb, &[2, 3]).unwrap())).unwrap();
    let mut expect = Vec::new();
    for y in 0..16 {
        for x in 0..16 {
            for c in 0..3 {
                expect.push(to_u8(mixed.data()[(c * 16 + y) * 16 + x]));
            }
        }
    }
    assert_eq!(tile(&img, 2, 3, 16), expect);
}
