use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use radiomap::conditions::ConditionSpec;
use radiomap::dataset::{build_dataset, DatasetFile, Record};
use radiomap::diffusion::{sample_with, train as fit, ModelConfig, TrainConfig};
use radiomap::encoders::ConditionKind;
use radiomap::eval::{baseline_mean_map, error_map, etr_accuracy, EvalReport};
use radiomap::pipeline::generate_for_records;
use radiomap::render::render_heatmap;
use radiomap::scenario::ScenarioParams;
use radiomap::Model32;

use crate::{
    Arch, ConditionArgs, EvalArgs, GenDataArgs, RenderArgs, SampleArgs, SelectArgs, TrainArgs,
};

/// Bad flags or missing inputs; reported before anything is written.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn input(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("input {} does not exist", path.display())));
    }
    Ok(())
}

fn output(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(usage(format!(
            "directory of {} does not exist",
            path.display()
        ))),
        _ => Ok(()),
    }
}

fn check<T>(r: radiomap::Result<T>) -> Result<T> {
    r.map_err(|e| usage(e.to_string()))
}

fn record(data: &DatasetFile, index: usize) -> Result<&Record> {
    data.records.get(index).ok_or_else(|| {
        usage(format!(
            "record {index} out of range (dataset has {})",
            data.len()
        ))
    })
}

impl ConditionArgs {
    fn spec(&self, kind: ConditionKind, k: usize) -> ConditionSpec {
        ConditionSpec {
            kind,
            method: self.method,
            percent: self.percent,
            k,
            n_subareas: self.n_subareas,
        }
    }
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    output(&a.out)?;
    let params = ScenarioParams::for_regime(a.regime);
    let data = build_dataset(a.regime, a.count as usize, a.seed, &params)?;
    data.save(&a.out)?;
    println!("records = {}", data.len());
    println!("min_dbm = {:.6}", data.min_dbm);
    println!("max_dbm = {:.6}", data.max_dbm);
    Ok(())
}

pub fn select_fragments(a: SelectArgs) -> Result<()> {
    input(&a.data)?;
    if let Some(out) = &a.out {
        output(out)?;
    }
    let spec = a.cond.spec(ConditionKind::Fragments, a.k);
    check(spec.budget(32))?;
    let data = DatasetFile::load(&a.data)?;
    let rec = record(&data, a.record)?;
    check(spec.validate(data.grid_n, usize::MAX))?;
    let radiomap::encoders::ConditionSet::Fragments(frags) = spec.build(rec, a.seed)? else {
        unreachable!("fragment spec builds fragments");
    };
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["fragment", "row", "col", "k", "mean_dbm", "values_dbm"])?;
    for (i, f) in frags.iter().enumerate() {
        let mean = f.values_dbm.iter().map(|&v| v as f64).sum::<f64>() / f.values_dbm.len() as f64;
        let values: Vec<String> = f.values_dbm.iter().map(|v| format!("{v:.4}")).collect();
        w.write_record([
            i.to_string(),
            f.origin.0.to_string(),
            f.origin.1.to_string(),
            f.size_k.to_string(),
            format!("{mean:.4}"),
            values.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn architecture(a: &TrainArgs, grid_n: usize) -> ModelConfig {
    let mut c = match a.arch {
        Arch::Full => ModelConfig::new(a.cond, grid_n),
        Arch::Desk => ModelConfig::desk(a.cond, grid_n),
    };
    c.encoder.k = a.k;
    if let Some(v) = a.steps {
        c.steps = v;
    }
    if let Some(v) = a.beta1 {
        c.beta1 = v;
    }
    if let Some(v) = a.beta_t {
        c.beta_t = v;
    }
    if let Some(v) = a.base_channels {
        c.unet.base_channels = v;
    }
    if let Some(v) = a.blocks_per_level {
        c.unet.blocks_per_level = v;
    }
    if let Some(v) = a.capacity {
        c.encoder.capacity = v;
    }
    c
}

pub fn train(a: TrainArgs) -> Result<()> {
    input(&a.data)?;
    output(&a.out)?;
    let cfg = TrainConfig {
        lr: a.lr,
        epochs: a.epochs as usize,
        batch_size: a.batch_size as usize,
        seed: a.seed,
        condition: a.condition.spec(a.cond, a.k),
        lr_decay: a.lr_decay,
    };
    check(cfg.validate())?;
    check(architecture(&a, 32).validate())?;
    let data = DatasetFile::load(&a.data)?;
    let arch = architecture(&a, data.grid_n);
    check(arch.validate())?;
    check(cfg.condition.validate(data.grid_n, arch.encoder.capacity))?;
    let model = fit::<f32>(&data, &cfg, &arch, |epoch, loss| {
        println!("epoch {epoch} loss {loss:.6}");
    })?;
    model.save(&a.out)?;
    Ok(())
}

fn load_pair(ckpt: &Path, data: &Path) -> Result<(Model32, DatasetFile)> {
    let model = Model32::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let data = DatasetFile::load(data).with_context(|| format!("loading {}", data.display()))?;
    if model.grid_n() != data.grid_n {
        return Err(usage(format!(
            "checkpoint grid {} does not match dataset grid {}",
            model.grid_n(),
            data.grid_n
        )));
    }
    Ok((model, data))
}

pub fn sample(a: SampleArgs) -> Result<()> {
    input(&a.ckpt)?;
    input(&a.data)?;
    output(&a.out)?;
    if let Some(v) = &a.values {
        output(v)?;
    }
    let (model, data) = load_pair(&a.ckpt, &a.data)?;
    let rec = record(&data, a.record)?;
    let spec = a.cond.spec(model.kind(), model.config.encoder.k);
    check(spec.validate(data.grid_n, model.config.encoder.capacity))?;
    let cond = spec.build(rec, a.seed)?;
    let map = sample_with(&cond, &model, a.seed, a.sigma)?;
    let values: Vec<f64> = map.values_dbm.iter().map(|&v| v as f64).collect();
    let norm = model.normalizer;
    render_heatmap(&values, map.grid_n, norm.min_dbm, norm.max_dbm, &a.out)?;
    if let Some(path) = &a.values {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["row", "col", "dbm"])?;
        for (i, v) in map.values_dbm.iter().enumerate() {
            w.write_record([
                (i / map.grid_n).to_string(),
                (i % map.grid_n).to_string(),
                format!("{v:.4}"),
            ])?;
        }
        w.flush()?;
    }
    println!(
        "etr_0.10_accuracy = {:.6}",
        etr_accuracy(&rec.map, &map, 0.10)?
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    input(&a.ckpt)?;
    input(&a.data)?;
    output(&a.report)?;
    if let Some(c) = &a.csv {
        output(c)?;
    }
    if !(a.bin_width > 0.0 && a.bin_width.is_finite()) {
        return Err(usage("--bin-width must be positive"));
    }
    if a.limit == Some(0) {
        return Err(usage("--limit must be at least 1"));
    }
    let (model, data) = load_pair(&a.ckpt, &a.data)?;
    let spec = a.cond.spec(model.kind(), model.config.encoder.k);
    check(spec.validate(data.grid_n, model.config.encoder.capacity))?;
    let (train_split, test_split) = data.split();
    let mut records = if a.all { &data.records[..] } else { test_split };
    if let Some(n) = a.limit {
        records = &records[..n.min(records.len())];
    }
    if records.is_empty() {
        return Err(usage("no records to evaluate"));
    }
    let generated = generate_for_records(&model, records, &spec, a.seed, a.sigma)?;
    let truth: Vec<_> = records.iter().map(|r| r.map.clone()).collect();
    let baseline_source: Vec<_> = if train_split.is_empty() {
        &data.records[..]
    } else {
        train_split
    }
    .iter()
    .map(|r| r.map.clone())
    .collect();
    let baseline = baseline_mean_map(&baseline_source)?;

    let mut text = String::new();
    let mut rows = Vec::new();
    for &etr in &a.etr.0 {
        let report = EvalReport::from_pairs(&truth, &generated, etr, a.bin_width)?;
        let base = truth
            .iter()
            .map(|m| etr_accuracy(m, &baseline, etr))
            .sum::<radiomap::Result<f64>>()?
            / truth.len() as f64;
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&report.to_text());
        text.push_str(&format!("baseline_accuracy = {base:.6}\n"));
        println!(
            "etr {etr}: accuracy {:.6} (mean-map baseline {base:.6})",
            report.accuracy
        );
        rows.push([
            etr.to_string(),
            format!("{:.6}", report.accuracy),
            format!("{base:.6}"),
            format!("{:.6}", report.mean_abs_error_dbm),
        ]);
    }
    fs::write(&a.report, text)?;
    if let Some(path) = &a.csv {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["etr", "accuracy", "baseline_accuracy", "mean_abs_error_dbm"])?;
        for r in &rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    if let Some(dir) = &a.render {
        render_all(dir, records, &generated, &model)?;
    }
    Ok(())
}

/// Ground truth, generated and relative-error heatmaps per record. Errors
/// share one scale across all records so images are comparable.
fn render_all(
    dir: &PathBuf,
    records: &[Record],
    generated: &[radiomap::scenario::RadioMap],
    model: &Model32,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let errors = records
        .iter()
        .zip(generated)
        .map(|(r, g)| error_map(&r.map, g))
        .collect::<radiomap::Result<Vec<_>>>()?;
    let worst = errors.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let err_hi = if worst > 0.0 { worst } else { 1.0 };
    let (lo, hi) = (model.normalizer.min_dbm, model.normalizer.max_dbm);
    let as_f64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    for ((r, g), e) in records.iter().zip(generated).zip(&errors) {
        let n = r.map.grid_n;
        let stem = format!("record_{:05}", r.scenario.id);
        render_heatmap(
            &as_f64(&r.map.values_dbm),
            n,
            lo,
            hi,
            dir.join(format!("{stem}_gt.ppm")),
        )?;
        render_heatmap(
            &as_f64(&g.values_dbm),
            n,
            lo,
            hi,
            dir.join(format!("{stem}_gen.ppm")),
        )?;
        render_heatmap(e, n, 0.0, err_hi, dir.join(format!("{stem}_err.ppm")))?;
    }
    Ok(())
}

pub fn render(a: RenderArgs) -> Result<()> {
    input(&a.data)?;
    output(&a.out)?;
    let data = DatasetFile::load(&a.data)?;
    let rec = record(&data, a.record)?;
    let values: Vec<f64> = rec.map.values_dbm.iter().map(|&v| v as f64).collect();
    render_heatmap(&values, rec.map.grid_n, data.min_dbm, data.max_dbm, &a.out)?;
    Ok(())
}
