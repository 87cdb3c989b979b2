//! Headless counterparts of the service: `visualize` and `train-toy`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use lensbox_core::io::save_checkpoint;
use lensbox_core::toy::{self, TrainConfig, TrainReport};
use lensbox_core::viz::CLASS_SELECTION;
use serde_json::Value;

use crate::error::ServiceResult;
use crate::pipeline::{random_hex_id, ClassEntry, Engine, JobEntry, VisualizationJobResult};

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone)]
pub struct VisualizeOptions {
    pub model: PathBuf,
    pub labels: Option<PathBuf>,
    pub visualizer: String,
    /// Raw `key=value` assignments.
    pub set: Vec<String>,
    pub top_k: Option<usize>,
    pub output: PathBuf,
    pub images: Vec<PathBuf>,
}

fn unique_stem(path: &Path, taken: &mut HashSet<String>) -> String {
    let base = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let mut stem = base.clone();
    let mut n = 2;
    while !taken.insert(stem.clone()) {
        stem = format!("{base}_{n}");
        n += 1;
    }
    stem
}

/// Writes one PNG per (image, class) plus `report.json` into the output
/// directory and returns the report.
pub fn visualize(opts: &VisualizeOptions) -> ServiceResult<VisualizationJobResult> {
    let engine = Engine::load(&opts.model, opts.labels.as_deref())?;
    let schema = &engine.registry.get(&opts.visualizer)?.descriptor().settings;
    let mut values = schema.parse_assignments(&opts.set)?;
    if let Some(k) = opts.top_k {
        values.insert(CLASS_SELECTION.into(), Value::from(k));
    }
    let settings = engine.settings(&opts.visualizer, &values)?;
    std::fs::create_dir_all(&opts.output)?;

    let mut taken = HashSet::new();
    let mut entries = Vec::with_capacity(opts.images.len());
    for path in &opts.images {
        let png = std::fs::read(path).map_err(|e| lensbox_core::Error::io(path, e))?;
        let maps = engine.visualize(&opts.visualizer, &settings, &png)?;
        let stem = unique_stem(path, &mut taken);
        let mut classes = Vec::with_capacity(maps.len());
        for (rank, m) in maps.into_iter().enumerate() {
            let png_id = format!("{stem}_top{}", rank + 1);
            std::fs::write(opts.output.join(format!("{png_id}.png")), &m.png)?;
            classes.push(ClassEntry {
                label: m.label,
                class_index: m.class_index,
                probability: m.probability,
                png_id,
            });
        }
        entries.push(JobEntry {
            image_id: path.display().to_string(),
            classes,
        });
    }
    let report = VisualizationJobResult {
        job_id: random_hex_id(64),
        visualizer: opts.visualizer.clone(),
        settings: settings.to_json(),
        entries,
    };
    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    std::fs::write(opts.output.join(REPORT_FILE), json)?;
    Ok(report)
}

/// Trains the bundled toy model and saves it with labels and preprocessing.
pub fn train_toy(config: &TrainConfig, output: &Path) -> ServiceResult<TrainReport> {
    let (model, report) = toy::train_toy(config)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_checkpoint(&model, Some(&toy::labels()), &toy::preprocess_spec(), output)?;
    Ok(report)
}
