//! File round trips through the public API.

use g3_core::align::{AlignmentModel, ModelDims};
use g3_core::data::{
    ingest_metadata, synthesize_world, write_metadata_csv, EmbeddingFile, MetadataFormat, SyntheticWorldConfig,
};
use g3_core::gps::{GpsEncoderConfig, HierarchySpec, Projection};
use g3_core::index::{IvfParams, VectorIndex};
use g3_core::nn::TensorArchive;
use g3_core::pipeline::database_records;
use g3_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_world() -> g3_core::data::SyntheticWorld {
    synthesize_world(&SyntheticWorldConfig {
        n_clusters: 4,
        points_per_cluster: 32,
        image_dim: 16,
        text_dim: 12,
        ..Default::default()
    })
    .unwrap()
}

fn small_model() -> AlignmentModel<f32> {
    let dims = ModelDims {
        image_dim: 16,
        text_dim: 12,
        head_hidden_dim: 8,
        text_space_dim: 6,
        gps: GpsEncoderConfig {
            hierarchy: HierarchySpec { n_hierarchies: 2, sigma_min: 1.0, sigma_max: 16.0 },
            projection: Projection::Mercator,
            rff_rows: 8,
            hidden_dim: 8,
            output_dim: 5,
        },
    };
    AlignmentModel::init(dims, 3.99, 4, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
}

#[test]
fn synthetic_files_round_trip_on_disk() {
    let world = small_world();
    let dir = tempfile::tempdir().unwrap();
    let emb = dir.path().join("db.g3em");
    world.database.image_file().unwrap().save(&emb).unwrap();
    assert_eq!(EmbeddingFile::load(&emb).unwrap(), world.database.image_file().unwrap());

    let csv = dir.path().join("db.csv");
    write_metadata_csv(&world.database.records, std::fs::File::create(&csv).unwrap()).unwrap();
    let back = ingest_metadata(&csv, MetadataFormat::Csv).unwrap();
    assert!(back.skipped.is_empty());
    assert_eq!(back.records, world.database.records);
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let model = small_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.g3nn");
    model.save(&path).unwrap();
    let loaded = AlignmentModel::<f32>::load(&path).unwrap();
    assert_eq!(loaded, model);
    assert_eq!(TensorArchive::load(&path).unwrap().to_bytes().unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn index_with_ivf_round_trips_and_answers_identically() {
    let world = small_world();
    let model = small_model();
    let records = database_records(&world.database.image, &world.database.records, &model).unwrap();
    let queries: Vec<Vec<f32>> = records.iter().step_by(7).map(|r| r.vector.clone()).collect();
    let mut index = VectorIndex::new(records[0].vector.len()).unwrap();
    index.add(records).unwrap();
    index.build_ivf(IvfParams { n_clusters: 8, kmeans_iters: 10, seed: 1, nprobe: 3 }).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("db.g3ix");
    index.save(&path).unwrap();
    let loaded = VectorIndex::load(&path).unwrap();
    assert_eq!(loaded.ivf_params(), index.ivf_params());
    for q in &queries {
        assert_eq!(loaded.search(q, 5).unwrap(), index.search(q, 5).unwrap());
    }
    assert_eq!(loaded.to_bytes().unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn files_of_the_wrong_kind_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let emb = dir.path().join("x.g3em");
    small_world().database.image_file().unwrap().save(&emb).unwrap();
    assert!(matches!(VectorIndex::load(&emb), Err(Error::Format(_))));
    assert!(matches!(AlignmentModel::<f32>::load(&emb), Err(Error::Format(_))));
    let ckpt = dir.path().join("m.g3nn");
    small_model().save(&ckpt).unwrap();
    assert!(matches!(EmbeddingFile::load(&ckpt), Err(Error::Format(_))));
}
