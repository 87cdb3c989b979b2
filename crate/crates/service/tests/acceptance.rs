//! Acceptance checks, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always show in `cargo test` output.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use lensbox_core::io::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, preprocess_image, ChannelMode, PreprocessSpec,
    ResizeMode, Scaling,
};
use lensbox_core::layers::{self, Padding};
use lensbox_core::toy::{self, ToyImage, SQUARE, TANK};
use lensbox_core::viz::{occlusion_map, saliency_map, OcclusionSettings, SaliencySettings};
use lensbox_core::{Model, Tensor};
use lensbox_service::VisualizationJobResult;
use lensbox_testkit::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn lensbox() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lensbox"));
    c.env("RUST_LOG", "warn");
    c
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let h = 1e-5;
    let (models, mut coords, mut worst) = (120, 0usize, 0.0f64);
    for seed in 0..models {
        let mut r = rng(1000 + seed);
        let model = random_model(&mut r);
        let x = random_input(&mut r, &model, 1);
        let class = r.gen_range(0..model.class_count);
        let out = model.forward(&x).unwrap();
        let g = model.input_gradient(&out.trace, class).unwrap();
        for i in 0..x.len() {
            if !smooth_at(&model, &x, i, h) {
                continue;
            }
            let fd = central_difference(|t| naive_forward(&model, t).logits.get(&[0, class]), &x, i, h);
            worst = worst.max(relative_error(g.data()[i], fd, 1e-6));
            coords += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-4 && secs < 60.0 && coords > 0,
        format!("{models} models, {coords} coordinates, max relative error {worst:.2e} (≤ 1e-4), {secs:.2}s (< 60s)"),
    )
}

fn layer_oracles() -> Outcome {
    let start = Instant::now();
    let cases = 120;
    let mut worst = [0.0f64; 3];
    let mut r = rng(2000);
    for _ in 0..cases {
        let (h, w) = (r.gen_range(1..=12), r.gen_range(1..=12));
        let (cin, cout) = (r.gen_range(1..=3), r.gen_range(1..=4));
        let n = r.gen_range(1..=2);
        let x = random_tensor(&mut r, vec![n, h, w, cin], -2.0, 2.0);

        let (kh, kw) = (r.gen_range(1..=h.min(5)), r.gen_range(1..=w.min(5)));
        let stride = r.gen_range(1..=3);
        let padding = if r.gen_bool(0.5) { Padding::Same } else { Padding::Valid };
        let k = random_tensor(&mut r, vec![kh, kw, cin, cout], -1.0, 1.0);
        let b = random_tensor(&mut r, vec![cout], -1.0, 1.0);
        let conv = layers::conv2d_forward(&x, &k, &b, stride, padding).unwrap();
        worst[0] = worst[0].max(max_abs_diff(&conv, &naive_conv2d(&x, &k, &b, stride, padding)));

        let window = r.gen_range(1..=h.min(w).min(4));
        let pstride = r.gen_range(1..=3);
        let pool = layers::maxpool2d_forward(&x, window, pstride).unwrap();
        worst[1] = worst[1].max(max_abs_diff(&pool, &naive_maxpool(&x, window, pstride).0));

        let (d, m) = (r.gen_range(1..=64), r.gen_range(1..=10));
        let xd = random_tensor(&mut r, vec![n, d], -2.0, 2.0);
        let wd = random_tensor(&mut r, vec![d, m], -1.0, 1.0);
        let bd = random_tensor(&mut r, vec![m], -1.0, 1.0);
        let dense = layers::dense_forward(&xd, &wd, &bd).unwrap();
        worst[2] = worst[2].max(max_abs_diff(&dense, &naive_dense(&xd, &wd, &bd)));
    }
    let secs = start.elapsed().as_secs_f64();
    let max = worst.iter().cloned().fold(0.0, f64::max);
    outcome(
        max <= 1e-9 && secs < 30.0,
        format!(
            "{cases} shapes each; max abs diff conv {:.1e}, pool {:.1e}, dense {:.1e} (≤ 1e-9), {secs:.2}s (< 30s)",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn occlusion_equivalence() -> Outcome {
    let cases = 60;
    let mut worst = 0.0f64;
    let mut grid_ok = true;
    let mut r = rng(3000);
    for _ in 0..cases {
        let model = random_model(&mut r);
        let [h, w, _] = model.input_shape;
        let window = r.gen_range(1..=h.min(w));
        let stride = r.gen_range(1..=window);
        let fill = r.gen_range(-1.0..1.0);
        let class = r.gen_range(0..model.class_count);
        let x = random_input(&mut r, &model, 1);
        let s = OcclusionSettings { window, stride, occlusion_value: fill };
        let got = occlusion_map(&model, &x, class, &s).unwrap();
        grid_ok &= got.shape() == [(h - window) / stride + 1, (w - window) / stride + 1];
        worst = worst.max(max_abs_diff(&got, &brute_force_occlusion(&model, &x, class, window, stride, fill)));
    }
    let model = linear_model([28, 28, 1], Tensor::zeros(vec![784, 2]));
    let s = OcclusionSettings { window: 7, stride: 7, occlusion_value: 0.5 };
    let grid = occlusion_map(&model, &Tensor::zeros(vec![1, 28, 28, 1]), 0, &s).unwrap();
    let g28 = grid.shape().to_vec();
    grid_ok &= g28 == [4, 4];
    outcome(
        worst <= 1e-12 && grid_ok,
        format!("{cases} cases, max abs diff {worst:.1e} (≤ 1e-12); 28x28 window 7 stride 7 -> {g28:?}"),
    )
}

fn analytic_saliency() -> Outcome {
    let mut r = rng(4000);
    let mut mismatches = 0;
    let mut pixels = 0;
    let models = 40;
    for i in 0..models {
        let (h, w, k) = (r.gen_range(1..=12), r.gen_range(1..=12), r.gen_range(2..=5));
        let c = if i % 2 == 0 { 1 } else { 3 };
        let weight = random_tensor(&mut r, vec![h * w * c, k], -3.0, 3.0);
        let model = linear_model([h, w, c], weight.clone());
        let x = random_input(&mut r, &model, 1);
        let class = r.gen_range(0..k);
        let map = saliency_map(&model, &x, class, &SaliencySettings::default()).unwrap();
        for p in 0..h * w {
            let want = (0..c).map(|ch| weight.get(&[p * c + ch, class]).abs()).fold(0.0, f64::max);
            mismatches += usize::from(map.data()[p] != want);
            pixels += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{models} linear models, {pixels} pixels, {mismatches} differ from |W_c| (exact equality)"),
    )
}

fn covers_square(top: usize, left: usize, window: usize, (r, c): (usize, usize)) -> bool {
    top <= r && r + SQUARE <= top + window && left <= c && c + SQUARE <= left + window
}

fn disjoint_from_square(top: usize, left: usize, window: usize, (r, c): (usize, usize)) -> bool {
    top + window <= r || r + SQUARE <= top || left + window <= c || c + SQUARE <= left
}

fn held_out_tanks() -> Vec<ToyImage> {
    toy::tank_dataset(20, 999).into_iter().filter(|i| i.label == TANK).collect()
}

fn toy_tank(dir: &Path) -> Outcome {
    let ckpt = dir.join("toy.lbx");
    let start = Instant::now();
    let out = lensbox()
        .args(["train-toy", "--seed", "7", "--samples", "400", "--epochs", "12", "-o"])
        .arg(&ckpt)
        .output()
        .unwrap();
    let train_secs = start.elapsed().as_secs_f64();
    if !out.status.success() {
        return outcome(false, format!("train-toy failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let loaded = load_checkpoint(&ckpt).unwrap();
    let model = loaded.model;
    let train_acc = toy::accuracy(&model, &toy::tank_dataset(400, 7)).unwrap();

    // Window 10 / stride 2: the default 7-pixel window cannot cover an 8x8 square.
    let (window, stride, fill) = (10, 2, 0.5);
    let images = held_out_tanks();
    let (mut cover_total, mut cover_ok, mut bg_total, mut bg_ok) = (0, 0, 0, 0);
    let mut min_ratio = f64::INFINITY;
    for img in &images {
        let square = img.square.unwrap();
        let x = preprocess_image(&img.png(), &loaded.preprocess).unwrap();
        let grid = brute_force_occlusion(&model, &x, TANK, window, stride, fill);
        let (rows, cols) = (grid.shape()[0], grid.shape()[1]);
        for i in 0..rows {
            for j in 0..cols {
                let (top, left) = (i * stride, j * stride);
                let p = grid.get(&[i, j]);
                if covers_square(top, left, window, square) {
                    cover_total += 1;
                    cover_ok += usize::from(p < 0.5);
                } else if disjoint_from_square(top, left, window, square) {
                    bg_total += 1;
                    bg_ok += usize::from(p >= 0.8);
                }
            }
        }
        let sal = saliency_map(&model, &x, TANK, &SaliencySettings::default()).unwrap();
        let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0, 0.0, 0);
        for y in 0..toy::SIDE {
            for xx in 0..toy::SIDE {
                let v = sal.get(&[y, xx]);
                if img.in_square(y, xx) {
                    inside += v;
                    n_in += 1;
                } else {
                    outside += v;
                    n_out += 1;
                }
            }
        }
        min_ratio = min_ratio.min((inside / n_in as f64) / (outside / n_out as f64));
    }
    let bg_frac = bg_ok as f64 / bg_total as f64;
    let pass = train_acc >= 0.95
        && train_secs < 60.0
        && cover_total > 0
        && cover_ok == cover_total
        && bg_frac >= 0.9
        && min_ratio >= 3.0;
    outcome(
        pass,
        format!(
            "train acc {:.1}% (≥ 95%) in {train_secs:.1}s (< 60s); {} held-out tanks, window {window} stride {stride} fill {fill}: \
             {cover_ok}/{cover_total} covering windows p(tank) < 0.5, {bg_ok}/{bg_total} = {:.1}% background windows p(tank) ≥ 0.8 (≥ 90%); \
             min saliency inside/outside ratio {min_ratio:.2} (≥ 3)",
            train_acc * 100.0,
            images.len(),
            bg_frac * 100.0
        ),
    )
}

fn checkpoint_round_trip() -> Outcome {
    let mut r = rng(6000);
    let (mut done, mut identical) = (0, 0);
    while done < 60 {
        let model: Model = random_model(&mut r);
        let [h, w, c] = model.input_shape;
        let channels = match c {
            1 => ChannelMode::Grayscale,
            3 => ChannelMode::Rgb,
            _ => continue,
        };
        let spec = PreprocessSpec {
            height: h,
            width: w,
            channels,
            resize: ResizeMode::Bilinear,
            scaling: Scaling::Unit,
        };
        let first = encode_checkpoint(&model, None, &spec).unwrap();
        let loaded = decode_checkpoint(&first).unwrap();
        let second = encode_checkpoint(&loaded.model, None, &loaded.preprocess).unwrap();
        identical += usize::from(first == second);
        done += 1;
    }
    outcome(identical == done, format!("{identical}/{done} random models byte-identical after save -> load -> save"))
}

struct KillOnDrop(Child);

impl Drop for KillOnDrop {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn service_contract(dir: &Path) -> Outcome {
    let ckpt = dir.join("toy.lbx");
    let config = dir.join("lensbox.conf");
    std::fs::write(&config, "checkpoint = toy.lbx\n").unwrap();
    let images: Vec<PathBuf> = held_out_tanks()
        .iter()
        .take(2)
        .enumerate()
        .map(|(i, img)| {
            let p = dir.join(format!("held_out_{i}.png"));
            std::fs::write(&p, img.png()).unwrap();
            p
        })
        .collect();

    let server = KillOnDrop(
        lensbox()
            .args(["serve", "--config"])
            .arg(&config)
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let rt = tokio::runtime::Runtime::new().unwrap();
    let base = "http://127.0.0.1:5000";
    let result = rt.block_on(async {
        let client = reqwest::Client::new();
        let deadline = Instant::now() + Duration::from_secs(20);
        let health: Value = loop {
            match client.get(format!("{base}/api/health")).send().await {
                Ok(r) if r.status().is_success() => break r.json().await.unwrap(),
                _ if Instant::now() < deadline => tokio::time::sleep(Duration::from_millis(100)).await,
                _ => return Err("service did not answer on 127.0.0.1:5000".to_string()),
            }
        };
        let session: Value = client.post(format!("{base}/api/sessions")).send().await.unwrap().json().await.unwrap();
        let session = session["session_id"].as_str().unwrap().to_string();
        let mut ids = Vec::new();
        for p in &images {
            let part = reqwest::multipart::Part::bytes(std::fs::read(p).unwrap()).file_name("img.png");
            let form = reqwest::multipart::Form::new().part("file", part);
            let v: Value = client
                .post(format!("{base}/api/sessions/{session}/images"))
                .multipart(form)
                .send()
                .await
                .unwrap()
                .json()
                .await
                .unwrap();
            ids.push(v["image_id"].as_str().unwrap().to_string());
        }
        let mut runs = Vec::new();
        for _ in 0..2 {
            let job: VisualizationJobResult = client
                .post(format!("{base}/api/sessions/{session}/jobs"))
                .json(&json!({"visualizer": "occlusion", "image_ids": ids}))
                .send()
                .await
                .unwrap()
                .json()
                .await
                .unwrap();
            let mut pngs = Vec::new();
            for entry in &job.entries {
                let mut row = Vec::new();
                for c in &entry.classes {
                    let bytes = client
                        .get(format!("{base}/api/sessions/{session}/artifacts/{}", c.png_id))
                        .send()
                        .await
                        .unwrap()
                        .bytes()
                        .await
                        .unwrap();
                    row.push(bytes.to_vec());
                }
                pngs.push(row);
            }
            runs.push(pngs);
        }
        Ok((health, runs))
    });
    drop(server);
    let (health, runs) = match result {
        Ok(v) => v,
        Err(e) => return outcome(false, e),
    };

    let out = dir.join("cli_out");
    let cli = lensbox()
        .args(["visualize", "--model"])
        .arg(&ckpt)
        .args(["--viz", "occlusion", "-o"])
        .arg(&out)
        .args(&images)
        .output()
        .unwrap();
    if !cli.status.success() {
        return outcome(false, format!("CLI failed: {}", String::from_utf8_lossy(&cli.stderr)));
    }
    let report: VisualizationJobResult =
        serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    let cli_pngs: Vec<Vec<Vec<u8>>> = report
        .entries
        .iter()
        .map(|e| {
            e.classes
                .iter()
                .map(|c| std::fs::read(out.join(format!("{}.png", c.png_id))).unwrap())
                .collect()
        })
        .collect();
    let maps: usize = runs[0].iter().map(|r| r.len()).sum();
    let deterministic = runs[0] == runs[1];
    let cli_identical = runs[0] == cli_pngs;
    outcome(
        deterministic && cli_identical && maps > 0 && health["model"] == "toy",
        format!(
            "default config bound 127.0.0.1:5000; upload -> job -> fetch of {maps} maps; repeat run identical: {deterministic}; \
             CLI PNGs byte-identical: {cli_identical}"
        ),
    )
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    o.pass
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let results = [
        run("1 gradient oracle", gradient_oracle),
        run("2 layer oracles", layer_oracles),
        run("3 occlusion equivalence", occlusion_equivalence),
        run("4 analytic saliency", analytic_saliency),
        run("5 toy tank analogue", || toy_tank(dir.path())),
        run("6 checkpoint round-trip", checkpoint_round_trip),
        run("7 service contract", || service_contract(dir.path())),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
