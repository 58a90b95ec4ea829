use std::collections::HashMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use g3_core::align::{train, vectorize_images, AlignmentModel, TriModalBatch};
use g3_core::data::{
    ingest_metadata, order_by_ids, synthesize_world, write_metadata_csv, EmbeddingFile, MetadataFormat,
    MetadataRecord,
};
use g3_core::geodesy::{haversine_km, GeoPoint, ThresholdReport};
use g3_core::index::{IndexRecord, VectorIndex};
use g3_core::nn::Matrix;
use g3_core::pipeline::{compare_retrieval, database_records, raw_records, run_pipeline, Prediction, Query};
use g3_core::rag::ImagePayload;
use g3_core::{Error, Result};
use serde_json::{json, Value};

use crate::settings::{resolve, Overrides};
use crate::{BuildIndexArgs, Command, CompareArgs, EvaluateArgs, PredictArgs, SynthArgs, TrainArgs};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::BuildIndex(a) => build_index(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::CompareRetrieval(a) => compare(a),
    }
}

fn write_report(path: Option<&Path>, report: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(report).expect("reports serialize") + "\n";
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn load_metadata(path: &Path) -> Result<Vec<MetadataRecord>> {
    let report = ingest_metadata(path, MetadataFormat::from_path(path))?;
    if !report.skipped.is_empty() {
        log::warn!("{}: skipped {} malformed rows", path.display(), report.skipped.len());
    }
    Ok(report.records)
}

/// Embeddings plus their metadata rows, in embedding order.
fn load_database(metadata: &Path, embeddings: &Path) -> Result<(EmbeddingFile, Vec<MetadataRecord>)> {
    let file = EmbeddingFile::load(embeddings)?;
    let records = order_by_ids(file.ids(), load_metadata(metadata)?)?;
    Ok((file, records))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut o = Overrides::default();
    o.set("/world/seed", a.seed)
        .set("/world/n_clusters", a.n_clusters)
        .set("/world/points_per_cluster", a.points_per_cluster)
        .set("/world/embedding_noise_sigma", a.embedding_noise_sigma)
        .set("/world/cluster_radius_km", a.cluster_radius_km)
        .set("/world/image_dim", a.image_dim)
        .set("/world/text_dim", a.text_dim)
        .set("/world/lookalike_group_size", a.lookalike_group_size)
        .set("/world/lookalike_similarity", a.lookalike_similarity)
        .set("/world/min_center_separation_km", a.min_center_separation_km)
        .set("/queries/per_cluster", a.queries_per_cluster)
        .set("/queries/stream", a.query_stream);
    let config = resolve(&o, a.common.config.as_deref())?;
    let world = synthesize_world(&config.world)?;
    let queries = config.queries.sample(&world)?;

    std::fs::create_dir_all(&a.out)?;
    let mut files = serde_json::Map::new();
    for (name, sample) in [("database", &world.database), ("queries", &queries)] {
        let csv = a.out.join(format!("{name}.csv"));
        write_metadata_csv(&sample.records, BufWriter::new(std::fs::File::create(&csv)?))?;
        let image = a.out.join(format!("{name}.image.g3em"));
        sample.image_file()?.save(&image)?;
        let text = a.out.join(format!("{name}.text.g3em"));
        sample.text_file()?.save(&text)?;
        files.insert(
            name.into(),
            json!({"metadata": csv, "image_embeddings": image, "text_embeddings": text, "count": sample.len()}),
        );
    }
    let clusters: Vec<Value> = world
        .clusters
        .iter()
        .map(|c| json!({"lat": c.center.lat(), "lon": c.center.lon(), "group": c.group, "country": c.country}))
        .collect();
    write_report(
        a.common.report.as_deref(),
        &json!({
            "command": "synth",
            "config": {"world": config.world, "queries": config.queries},
            "files": files,
            "clusters": clusters,
        }),
    )
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut o = Overrides::default();
    o.set("/train/seed", a.seed)
        .set("/train/batch_size", a.batch_size)
        .set("/train/lr", a.lr)
        .set("/train/weight_decay", a.weight_decay)
        .set("/train/epochs", a.epochs)
        .set("/train/gamma", a.gamma)
        .set("/train/t_init", a.t_init)
        .set("/train/temperature_lr", a.temperature_lr)
        .set("/train/reduction", a.reduction)
        .set("/train/dims/head_hidden_dim", a.head_hidden_dim)
        .set("/train/dims/text_space_dim", a.text_space_dim);
    let mut config = resolve(&o, a.common.config.as_deref())?.train;

    let (images, records) = load_database(&a.db.metadata, &a.db.image_embeddings)?;
    let texts = EmbeddingFile::load(&a.text_embeddings)?;
    if texts.ids() != images.ids() {
        return Err(Error::Data("image and text embedding files list different ids".into()));
    }
    config.dims.image_dim = images.dim();
    config.dims.text_dim = texts.dim();
    let points = records.iter().map(|r| r.point).collect();
    let batch = TriModalBatch::new(images.vectors().clone(), texts.vectors().clone(), points)?;
    let started = std::time::Instant::now();
    let (model, logs) = train(&batch, &config)?;
    log::info!("trained on {} samples in {:.1}s", batch.len(), started.elapsed().as_secs_f64());
    model.save(&a.out)?;
    write_report(
        a.common.report.as_deref(),
        &json!({
            "command": "train",
            "config": {"train": config},
            "samples": batch.len(),
            "checkpoint": a.out,
            "epochs": logs,
            "temperatures": [model.t_image_text, model.t_image_gps],
        }),
    )
}

fn build_index(a: BuildIndexArgs) -> Result<()> {
    let mut o = Overrides::default();
    o.set("/index/n_clusters", a.ivf_clusters)
        .set("/index/kmeans_iters", a.kmeans_iters)
        .set("/index/nprobe", a.nprobe)
        .set("/index/seed", a.seed);
    let config = resolve(&o, a.common.config.as_deref())?;
    let (images, records) = load_database(&a.db.metadata, &a.db.image_embeddings)?;
    let rows = match &a.model {
        Some(path) if !a.raw => {
            let model = AlignmentModel::load(path)?;
            check_width(images.dim(), model.dims().image_dim, "database embeddings")?;
            database_records(images.vectors(), &records, &model)?
        }
        _ => raw_records(images.vectors(), &records)?,
    };
    let dim = rows.first().map_or(images.dim(), |r| r.vector.len());
    let mut index = VectorIndex::new(dim)?;
    index.add(rows)?;
    if let Some(params) = config.index {
        index.build_ivf(params)?;
    }
    index.save(&a.out)?;
    write_report(
        a.common.report.as_deref(),
        &json!({
            "command": "build-index",
            "config": {"index": config.index, "model": a.model, "raw": a.raw},
            "records": index.len(),
            "dim": index.dim(),
            "out": a.out,
        }),
    )
}

fn check_width(got: usize, want: usize, what: &str) -> Result<()> {
    if got != want {
        return Err(Error::Data(format!("{what} are {got} wide but the model expects {want}")));
    }
    Ok(())
}

fn lmm_overrides(a: &PredictArgs, o: &mut Overrides) {
    let http_flags = a.lmm_url.is_some()
        || a.lmm_model.is_some()
        || a.api_key_env.is_some()
        || a.timeout_secs.is_some()
        || a.retries.is_some();
    let kind = a.lmm.clone().or_else(|| http_flags.then(|| "http".to_owned()));
    match kind.as_deref() {
        Some("http") => {
            let mut section = json!({"kind": "http"});
            let fields = [
                ("url", a.lmm_url.as_ref().map(|v| json!(v))),
                ("model", a.lmm_model.as_ref().map(|v| json!(v))),
                ("api_key_env", a.api_key_env.as_ref().map(|v| json!(v))),
                ("timeout_secs", a.timeout_secs.map(|v| json!(v))),
                ("retries", a.retries.map(|v| json!(v))),
            ];
            for (k, v) in fields {
                if let Some(v) = v {
                    section[k] = v;
                }
            }
            o.replace("/lmm", section);
        }
        Some("mock-centroid") => {
            o.replace("/lmm", json!({"kind": "mock-centroid", "sigma_km": a.mock_sigma_km.unwrap_or(100.0)}));
        }
        Some(other) => {
            o.replace("/lmm", json!({"kind": other}));
        }
        None => {
            o.set("/lmm/sigma_km", a.mock_sigma_km);
        }
    }
}

fn predict(a: PredictArgs) -> Result<()> {
    let mut o = Overrides::default();
    o.set("/pipeline/generation/seed", a.seed)
        .set("/pipeline/generation/prompts/specs", a.prompts.as_ref().map(|p| &p.0))
        .set("/pipeline/generation/prompts/n_generations", a.n_generations)
        .set("/pipeline/generation/prompts/s_retrieved", a.s_retrieved)
        .set("/pipeline/generation/prompts/temperature", a.temperature)
        .set("/pipeline/generation/parallelism", a.parallelism)
        .set("/pipeline/query_workers", a.query_workers)
        .set("/pipeline/negative_seed", a.negative_seed)
        .set("/pipeline/exclude_failed", a.include_failed.then_some(false));
    lmm_overrides(&a, &mut o);
    let config = resolve(&o, a.common.config.as_deref())?;
    config.pipeline.generation.prompts.validate()?;

    let model = AlignmentModel::load(&a.model)?;
    let index = VectorIndex::load(&a.index)?;
    check_width(index.dim(), model.dims().database_dim(), "index vectors")?;
    let file = EmbeddingFile::load(&a.query_embeddings)?;
    check_width(file.dim(), model.dims().image_dim, "query embeddings")?;
    let truths: Option<Vec<MetadataRecord>> = match &a.query_metadata {
        Some(p) => Some(order_by_ids(file.ids(), load_metadata(p)?)?),
        None => None,
    };
    let queries = file
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let image = match &a.images_dir {
                Some(dir) => Some(Arc::new(ImagePayload::from_path(&dir.join(id))?)),
                None => None,
            };
            Ok(Query {
                img_id: id.clone(),
                embedding: file.vectors().row(i).to_vec(),
                truth: truths.as_ref().map(|t| t[i].point),
                image,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let client = config.lmm.build()?;
    let out = run_pipeline(&queries, &model, &index, &*client, &config.pipeline)?;
    let mut w = BufWriter::new(std::fs::File::create(&a.out)?);
    for p in &out.predictions {
        serde_json::to_writer(&mut w, p).expect("predictions serialize");
        w.write_all(b"\n")?;
    }
    w.flush()?;

    write_report(
        a.common.report.as_deref(),
        &json!({
            "command": "predict",
            "config": {"pipeline": config.pipeline, "lmm": config.lmm},
            "model": a.model,
            "index": a.index,
            "queries": queries.len(),
            "predictions": out.predictions.len(),
            "failures": out.failures,
            "report": out.report,
        }),
    )?;
    if out.predictions.is_empty() && !out.failures.is_empty() {
        let f = &out.failures[0];
        let msg = format!("all {} queries failed; first: {}", out.failures.len(), f.error);
        return Err(if out.failures.iter().any(|f| f.transport) { Error::Transport(msg) } else { Error::Data(msg) });
    }
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = vec![];
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
        GeoPoint::new(p.pred_lat, p.pred_lon)?;
        out.push(p);
    }
    Ok(out)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let predictions = read_predictions(&a.predictions)?;
    let truths: HashMap<String, GeoPoint> =
        load_metadata(&a.metadata)?.into_iter().map(|r| (r.img_id, r.point)).collect();
    let mut errors = vec![];
    let mut missing = vec![];
    for p in &predictions {
        match truths.get(&p.img_id) {
            Some(&t) => errors.push(haversine_km(GeoPoint::new(p.pred_lat, p.pred_lon)?, t)),
            None => missing.push(p.img_id.clone()),
        }
    }
    if errors.is_empty() {
        return Err(Error::Data("no prediction has a ground truth".into()));
    }
    if !missing.is_empty() {
        log::warn!("{} predictions have no ground truth", missing.len());
    }
    let report = ThresholdReport::from_errors(&errors)?;
    write_report(
        a.report.as_deref(),
        &json!({
            "command": "evaluate",
            "config": {"predictions": a.predictions, "metadata": a.metadata},
            "scored": errors.len(),
            "missing_truth": missing,
            "report": report,
        }),
    )
}

fn normalized(m: &Matrix<f32>) -> Result<Matrix<f32>> {
    let mut out = m.clone();
    for r in 0..out.rows() {
        g3_core::align::normalize(out.row_mut(r))?;
    }
    Ok(out)
}

fn compare(a: CompareArgs) -> Result<()> {
    if a.top_n.is_empty() || a.top_n.contains(&0) {
        return Err(Error::Usage("--top-n values must be positive".into()));
    }
    let model = AlignmentModel::load(&a.model)?;
    let (images, records) = load_database(&a.db.metadata, &a.db.image_embeddings)?;
    check_width(images.dim(), model.dims().image_dim, "database embeddings")?;
    let (queries, query_records) = load_database(&a.query_metadata, &a.query_embeddings)?;
    check_width(queries.dim(), model.dims().image_dim, "query embeddings")?;

    let index_of = |rows: Vec<IndexRecord>| -> Result<VectorIndex> {
        let mut index = VectorIndex::new(rows[0].vector.len())?;
        index.add(rows)?;
        Ok(index)
    };
    if images.is_empty() || queries.is_empty() {
        return Err(Error::Data("database and queries must be non-empty".into()));
    }
    let raw_index = index_of(raw_records(images.vectors(), &records)?)?;
    let aligned_index = index_of(database_records(images.vectors(), &records, &model)?)?;
    let truths: Vec<GeoPoint> = query_records.iter().map(|r| r.point).collect();
    let rows = compare_retrieval(
        &raw_index,
        &normalized(queries.vectors())?,
        &aligned_index,
        &vectorize_images(queries.vectors(), &model)?,
        &truths,
        &a.top_n,
    )?;
    write_report(
        a.report.as_deref(),
        &json!({
            "command": "compare-retrieval",
            "config": {"top_n": a.top_n, "model": a.model},
            "database": images.len(),
            "queries": queries.len(),
            "rows": rows,
        }),
    )
}
