//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use g3_core::align::{
    contrastive_pair_loss, train, vectorize_images, AlignmentModel, EpochLog, ModelDims, Reduction, TriModalBatch,
};
use g3_core::config::RunConfig;
use g3_core::data::{synthesize_world, SyntheticSample, SyntheticWorld};
use g3_core::geodesy::{
    destination, haversine_km, threshold_accuracy, GeoPoint, Mercator, MEAN_EARTH_RADIUS_KM, MERCATOR_MAX_LAT_DEG,
};
use g3_core::gps::{GpsEncoderConfig, HierarchySpec, Projection};
use g3_core::index::VectorIndex;
use g3_core::nn::Matrix;
use g3_core::pipeline::{compare_retrieval, database_records, raw_records, run_pipeline, PipelineOutput, Query};
use g3_core::rag::{generate_candidates, IndexRetrieval, LmmClient, LmmResponse, MockLmm};
use g3_core::verify::verify;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRAINING_SEEDS: u64 = 5;

fn fixture(name: &str) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let config: RunConfig = toml::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    config.validate().unwrap();
    config
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Counts warnings about dropped generations.
struct DropCounter;

static DROPS_LOGGED: AtomicUsize = AtomicUsize::new(0);

impl log::Log for DropCounter {
    fn enabled(&self, m: &log::Metadata) -> bool {
        m.level() <= log::Level::Warn
    }

    fn log(&self, r: &log::Record) {
        if r.level() == log::Level::Warn && r.args().to_string().starts_with("dropping generation") {
            DROPS_LOGGED.fetch_add(1, Ordering::SeqCst);
        }
    }

    fn flush(&self) {}
}

static LOGGER: DropCounter = DropCounter;

// ---------------------------------------------------------------- gradients

fn grad_dims() -> ModelDims {
    ModelDims {
        image_dim: 6,
        text_dim: 5,
        head_hidden_dim: 7,
        text_space_dim: 4,
        gps: GpsEncoderConfig {
            hierarchy: HierarchySpec { n_hierarchies: 3, sigma_min: 1.0, sigma_max: 16.0 },
            projection: Projection::Mercator,
            rff_rows: 3,
            hidden_dim: 5,
            output_dim: 4,
        },
    }
}

fn random_points(rng: &mut impl Rng, n: usize) -> Vec<GeoPoint> {
    (0..n)
        .map(|_| GeoPoint::new(rng.random_range(-80.0..80.0), rng.random_range(-180.0..180.0)).unwrap())
        .collect()
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Relative errors below this magnitude are judged against the floor, since
/// central differences in f64 carry about 1e-10 absolute rounding noise.
const GRAD_FLOOR: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let dims = grad_dims();
    let (mut worst, mut checked) = (0f64, 0usize);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let t_init = rng.random_range(0.5..4.0);
        let mut model = AlignmentModel::<f64>::init(dims.clone(), t_init, seed, &mut rng).unwrap();
        let n = 6;
        let batch = TriModalBatch::new(
            random_matrix(&mut rng, n, dims.image_dim),
            random_matrix(&mut rng, n, dims.text_dim),
            random_points(&mut rng, n),
        )
        .unwrap();
        let (_, grads) = model.loss_and_grads(&batch, Reduction::Sum).unwrap();
        let mut analytic: Vec<f64> = grads.weights().concat();
        analytic.extend(grads.temperatures());

        let shape: Vec<usize> = model.trainable_mut().iter().map(|s| s.len()).collect();
        assert_eq!(shape.iter().sum::<usize>(), analytic.len());
        let mut flat = 0;
        for (s, &len) in shape.iter().enumerate() {
            for i in 0..len {
                let orig = model.trainable_mut()[s][i];
                model.trainable_mut()[s][i] = orig + GRAD_STEP;
                let up = model.loss(&batch, Reduction::Sum).unwrap().total;
                model.trainable_mut()[s][i] = orig - GRAD_STEP;
                let down = model.loss(&batch, Reduction::Sum).unwrap().total;
                model.trainable_mut()[s][i] = orig;
                let numeric = (up - down) / (2.0 * GRAD_STEP);
                let a = analytic[flat];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
                worst = worst.max(rel);
                flat += 1;
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-5 && elapsed < Duration::from_secs(120),
        format!("{checked} parameters over 20 seeds, max rel err {worst:.2e}, {:.1}s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- loss oracle

fn brute_force_loss(a: &Matrix<f64>, b: &Matrix<f64>, t: f64) -> f64 {
    let unit = |v: &[f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let scale = t.exp().min(100.0);
    let n = a.rows();
    let mut loss = 0.0;
    for i in 0..n {
        let ai = unit(a.row(i));
        let logits: Vec<f64> =
            (0..n).map(|j| scale * ai.iter().zip(unit(b.row(j))).map(|(x, y)| x * y).sum::<f64>()).collect();
        let denom: f64 = logits.iter().map(|l| l.exp()).sum();
        loss -= (logits[i].exp() / denom).ln();
    }
    loss
}

fn loss_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=16);
        let d = rng.random_range(1..=32);
        let a = random_matrix(&mut rng, n, d);
        let b = random_matrix(&mut rng, n, d);
        let t = rng.random_range(-1.0..5.0);
        let got = contrastive_pair_loss(&a, &b, t, Reduction::Sum).unwrap().loss;
        worst = worst.max((got - brute_force_loss(&a, &b, t)).abs());
    }
    let eye = Matrix::<f64>::identity(2);
    let ortho = contrastive_pair_loss(&eye, &eye, 0.0, Reduction::Sum).unwrap().loss;
    let exact = 2.0 * (1.0 + (-1f64).exp()).ln();
    outcome(
        worst < 1e-6 && (ortho - exact).abs() < 1e-12 && (ortho - 0.6265).abs() < 5e-5,
        format!("100 batches max |diff| {worst:.1e}; orthonormal n=2 loss {ortho:.6}"),
    )
}

// ---------------------------------------------------------------- geodesy

fn geodesy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let merc = Mercator::default();
    let mut round_trip = 0f64;
    for _ in 0..10_000 {
        let p = GeoPoint::new(
            rng.random_range(-MERCATOR_MAX_LAT_DEG..=MERCATOR_MAX_LAT_DEG),
            rng.random_range(-180.0..180.0),
        )
        .unwrap();
        let q = merc.unproject(merc.project(p)).unwrap();
        let dlon = (q.lon() - p.lon() + 540.0).rem_euclid(360.0) - 180.0;
        round_trip = round_trip.max((q.lat() - p.lat()).abs()).max(dlon.abs());
    }

    let expected = std::f64::consts::PI * MEAN_EARTH_RADIUS_KM;
    let mut antipodal = 0f64;
    for _ in 0..1000 {
        let p = GeoPoint::new(rng.random_range(-89.0..89.0), rng.random_range(-180.0..180.0)).unwrap();
        let lon = if p.lon() > 0.0 { p.lon() - 180.0 } else { p.lon() + 180.0 };
        let a = GeoPoint::new(-p.lat(), lon).unwrap();
        antipodal = antipodal.max((haversine_km(p, a) - expected).abs());
    }

    let mut monotone = true;
    for _ in 0..1000 {
        let n = rng.random_range(1..50);
        let truths = random_points(&mut rng, n);
        let preds: Vec<GeoPoint> = truths
            .iter()
            .map(|&t| destination(t, rng.random_range(0.0..360.0), 10f64.powf(rng.random_range(-1.0..4.3))))
            .collect();
        let r = threshold_accuracy(&preds, &truths).unwrap();
        monotone &= r.fractions.windows(2).all(|w| w[0] <= w[1])
            && r.fractions.iter().all(|f| (0.0..=1.0).contains(f));
    }
    outcome(
        round_trip < 1e-9 && antipodal < 1e-6 && monotone,
        format!(
            "round trip max {round_trip:.1e} deg, antipodal max |diff| {antipodal:.1e} km, monotone on 1000 sets: {monotone}"
        ),
    )
}

// ---------------------------------------------------------------- trained models

struct Trained {
    seed: u64,
    model: AlignmentModel<f32>,
    logs: Vec<EpochLog>,
    elapsed: Duration,
}

struct Shared {
    config: RunConfig,
    world: SyntheticWorld,
    queries: SyntheticSample,
    trained: Vec<Trained>,
}

fn train_seeds() -> Shared {
    let config = fixture("synthetic-im2gps3k.toml");
    let world = synthesize_world(&config.world).unwrap();
    let queries = config.queries.sample(&world).unwrap();
    let data = world.database.batch().unwrap();
    let trained = (0..TRAINING_SEEDS)
        .map(|seed| {
            let start = Instant::now();
            let cfg = g3_core::align::TrainConfig { seed, ..config.train.clone() };
            let (model, logs) = train(&data, &cfg).unwrap();
            Trained { seed, model, logs, elapsed: start.elapsed() }
        })
        .collect();
    Shared { config, world, queries, trained }
}

fn training_progress(s: &Shared) -> Outcome {
    let mut pass = true;
    let mut parts = vec![];
    for t in &s.trained {
        let (first, last) = (t.logs[0].mean_loss, t.logs[t.logs.len() - 1].mean_loss);
        pass &= t.logs.len() == 10 && last < first && t.elapsed < Duration::from_secs(600);
        parts.push(format!("seed {}: {first:.1} -> {last:.1} ({:.0}s)", t.seed, t.elapsed.as_secs_f64()));
    }
    outcome(pass, parts.join("; "))
}

fn index_of(records: Vec<g3_core::index::IndexRecord>) -> VectorIndex {
    let mut index = VectorIndex::new(records[0].vector.len()).unwrap();
    index.add(records).unwrap();
    index
}

fn normalized(m: &Matrix<f32>) -> Matrix<f32> {
    let mut out = m.clone();
    for r in 0..out.rows() {
        g3_core::align::normalize(out.row_mut(r)).unwrap();
    }
    out
}

fn retrieval_direction(s: &Shared) -> Outcome {
    let db = &s.world.database;
    let raw_index = index_of(raw_records(&db.image, &db.records).unwrap());
    let raw_queries = normalized(&s.queries.image);
    let truths = s.queries.points();
    let mut wins = 0;
    let mut parts = vec![];
    for t in &s.trained {
        let aligned_index = index_of(database_records(&db.image, &db.records, &t.model).unwrap());
        let aligned_queries = vectorize_images(&s.queries.image, &t.model).unwrap();
        let cmp = compare_retrieval(&raw_index, &raw_queries, &aligned_index, &aligned_queries, &truths, &[5])
            .unwrap()[0];
        wins += usize::from(cmp.aligned.avg_km < cmp.raw.avg_km);
        parts.push(format!("seed {}: {:.0} < {:.0}", t.seed, cmp.aligned.avg_km, cmp.raw.avg_km));
    }
    outcome(
        wins == s.trained.len(),
        format!("top-5 avg km aligned < raw on {wins}/{}: {}", s.trained.len(), parts.join(", ")),
    )
}

// ---------------------------------------------------------------- index

fn hits_equal(a: &[g3_core::index::SearchHit], b: &[g3_core::index::SearchHit]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.id == y.id && x.score.to_bits() == y.score.to_bits())
}

fn index_oracle(s: &Shared) -> Outcome {
    let model = &s.trained[0].model;
    let db = &s.world.database;
    let mut index = index_of(database_records(&db.image, &db.records, model).unwrap());
    let params = s.config.index.expect("fixture builds an IVF index");
    index.build_ivf(params).unwrap();
    let queries = vectorize_images(&s.world.queries(125, 2).unwrap().image, model).unwrap();
    assert_eq!(queries.rows(), 1000);

    let k = 10;
    let quarter = params.n_clusters / 4;
    let (mut exact, mut found) = (0usize, 0usize);
    for q in queries.iter_rows() {
        let flat = index.search_flat(q, k).unwrap();
        exact += usize::from(hits_equal(&index.search_ivf(q, k, params.n_clusters).unwrap(), &flat));
        let approx = index.search_ivf(q, k, quarter).unwrap();
        found += approx.iter().filter(|h| flat.iter().any(|f| f.id == h.id)).count();
    }
    let recall = found as f64 / (k * queries.rows()) as f64;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("db.g3ix");
    index.save(&path).unwrap();
    let loaded = VectorIndex::load(&path).unwrap();
    let identical = loaded.ivf_params() == index.ivf_params()
        && queries.iter_rows().all(|q| {
            hits_equal(&loaded.search(q, k).unwrap(), &index.search(q, k).unwrap())
                && hits_equal(&loaded.search_flat(q, k).unwrap(), &index.search_flat(q, k).unwrap())
        });
    outcome(
        exact == queries.rows() && recall >= 0.9 && identical,
        format!(
            "nprobe=all equals flat on {exact}/1000; recall@10 at nprobe={quarter}/{} is {recall:.3}; reload identical: {identical}",
            params.n_clusters
        ),
    )
}

// ---------------------------------------------------------------- pools

fn pipeline_index(config: &RunConfig, world: &SyntheticWorld, model: &AlignmentModel<f32>) -> VectorIndex {
    let db = &world.database;
    let mut index = index_of(database_records(&db.image, &db.records, model).unwrap());
    if let Some(params) = config.index {
        index.build_ivf(params).unwrap();
    }
    index
}

fn pipeline_queries(sample: &SyntheticSample) -> Vec<Query> {
    sample
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| Query {
            img_id: r.img_id.clone(),
            embedding: sample.image.row(i).to_vec(),
            truth: Some(r.point),
            image: None,
        })
        .collect()
}

/// Centroid mock that answers gibberish for every third request.
fn flaky_client() -> impl LmmClient {
    let inner = MockLmm::centroid(100.0).unwrap();
    MockLmm::from_fn(move |req| {
        if (req.seed % 3) == 0 {
            Ok(LmmResponse::ok("somewhere warm"))
        } else {
            inner.complete(req)
        }
    })
}

fn pool_arithmetic(s: &Shared) -> Outcome {
    let model = &s.trained[0].model;
    let mut pass = true;
    let mut parts = vec![];
    for (name, expect) in [("synthetic-im2gps3k.toml", 20), ("synthetic-yfcc4k.toml", 5)] {
        let config = fixture(name);
        let gen = &config.pipeline.generation;
        let p = &gen.prompts;
        let m = p.specs.len() * p.n_generations + p.s_retrieved;
        let index = pipeline_index(&config, &s.world, model);
        let retrieval = IndexRetrieval::new(&index, config.pipeline.negative_seed);
        let queries = vectorize_images(&s.queries.image, model).unwrap();

        let clean = MockLmm::centroid(100.0).unwrap();
        let flaky = flaky_client();
        let (mut exact, mut shrink_ok, mut total_drops) = (true, true, 0usize);
        for (i, q) in queries.iter_rows().take(64).enumerate() {
            let cfg = g3_core::rag::GenerationConfig { seed: i as u64, ..gen.clone() };
            let pool = generate_candidates(&clean, None, q, &cfg, &retrieval).unwrap();
            exact &= pool.len() == m && pool.dropped.is_empty();

            let before = DROPS_LOGGED.load(Ordering::SeqCst);
            let pool = generate_candidates(&flaky, None, q, &cfg, &retrieval).unwrap();
            let logged = DROPS_LOGGED.load(Ordering::SeqCst) - before;
            shrink_ok &= pool.len() == m - logged && pool.dropped.len() == logged;
            total_drops += logged;
        }

        let started = Instant::now();
        let out = run_pipeline(&pipeline_queries(&s.queries), model, &index, &*config.lmm.build().unwrap(), &config.pipeline)
            .unwrap();
        let sizes_ok = out.failures.is_empty() && out.predictions.iter().all(|p| p.pool_size == m && p.dropped == 0);
        let acc = fmt_report(&out);
        pass &= m == expect && exact && shrink_ok && total_drops > 0 && sizes_ok;
        parts.push(format!(
            "{name}: m={m}, clean pools exact: {exact}, {total_drops} logged drops matched: {shrink_ok}, full run of {} queries in {:.1}s {acc}",
            out.predictions.len(),
            started.elapsed().as_secs_f64()
        ));
    }
    outcome(pass, parts.join("; "))
}

fn fmt_report(out: &PipelineOutput) -> String {
    match &out.report {
        Some(r) => format!("{:?}", r.fractions.iter().map(|f| (f * 1000.0).round() / 1000.0).collect::<Vec<_>>()),
        None => "(no report)".into(),
    }
}

// ---------------------------------------------------------------- verify

fn verification_direction(s: &Shared) -> Outcome {
    let model = &s.trained[0].model;
    let config = &s.config;
    let index = pipeline_index(config, &s.world, model);
    let retrieval = IndexRetrieval::new(&index, config.pipeline.negative_seed);
    let client = MockLmm::centroid(100.0).unwrap();
    let queries = vectorize_images(&s.queries.image, model).unwrap();
    let truths = s.queries.points();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let trials = 500;
    let (mut verify_hits, mut random_hits, mut random_expected) = (0usize, 0usize, 0f64);
    for (i, &truth) in truths.iter().enumerate().take(trials) {
        let cfg = g3_core::rag::GenerationConfig { seed: i as u64, ..config.pipeline.generation.clone() };
        let pool = generate_candidates(&client, None, queries.row(i), &cfg, &retrieval).unwrap();
        let d: Vec<f64> = pool.points().iter().map(|&p| haversine_km(p, truth)).collect();
        let best = d.iter().copied().fold(f64::INFINITY, f64::min);
        let nearest = |j: usize| d[j] == best;
        let v = verify(s.queries.image.row(i), &pool.points(), model).unwrap();
        verify_hits += usize::from(nearest(v.chosen_index));
        random_hits += usize::from(nearest(rng.random_range(0..pool.len())));
        random_expected += d.iter().filter(|&&x| x == best).count() as f64 / d.len() as f64;
    }
    let (v, r, e) =
        (verify_hits as f64 / trials as f64, random_hits as f64 / trials as f64, random_expected / trials as f64);
    outcome(v > e && v > r, format!("{trials} trials: verify {v:.3}, random draw {r:.3}, random expectation {e:.3}"))
}

// ---------------------------------------------------------------- closed loop

fn closed_loop(s: &Shared) -> Outcome {
    let config = fixture("closed-loop.toml");
    let trained = s.trained.iter().find(|t| t.seed == config.train.seed).expect("seed was trained");
    assert_eq!(config.world, s.config.world);
    assert_eq!(config.train, s.config.train, "closed loop reuses the shared model");
    let queries = config.queries.sample(&s.world).unwrap();
    let started = Instant::now();
    let index = pipeline_index(&config, &s.world, &trained.model);
    let out = run_pipeline(
        &pipeline_queries(&queries),
        &trained.model,
        &index,
        &*config.lmm.build().unwrap(),
        &config.pipeline,
    )
    .unwrap();
    let elapsed = started.elapsed();
    let fractions = out.report.as_ref().map(|r| r.fractions.clone()).unwrap_or_default();
    outcome(
        queries.len() == 512 && out.failures.is_empty() && fractions == vec![1.0; 5] && elapsed < Duration::from_secs(300),
        format!("{} queries, accuracy {fractions:?}, {:.1}s", queries.len(), elapsed.as_secs_f64()),
    )
}

fn main() {
    log::set_logger(&LOGGER).unwrap();
    log::set_max_level(log::LevelFilter::Warn);

    let mut results: Vec<(&str, Outcome)> = vec![];
    let mut report = |name: &'static str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    report("gradient correctness", gradient_correctness());
    report("contrastive loss oracle", loss_oracle());
    report("geodesy", geodesy());

    let shared = train_seeds();
    report("training progress", training_progress(&shared));
    report("aligned retrieval beats raw", retrieval_direction(&shared));
    report("index oracle", index_oracle(&shared));
    report("pool arithmetic", pool_arithmetic(&shared));
    report("verification beats random", verification_direction(&shared));
    report("closed loop", closed_loop(&shared));

    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!("acceptance: {}/{} passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
