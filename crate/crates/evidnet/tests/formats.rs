use std::fs;

use evidnet::boxes::{read_slice_boxes, read_vois, write_slice_boxes, write_vois};
use evidnet::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC};
use evidnet::manifest::{load_manifest, write_manifest};
use evidnet::report::{read_predictions, write_predictions, PredictionRow};
use evidnet::volume_io::{read_volume, write_volume};
use evidnet::AppError;
use evidnet_core::data::SubjectRecord;
use evidnet_core::detection::Box2D;
use evidnet_core::evidential::EvidentialOutput;
use evidnet_core::metrics::PredictionRecord;
use evidnet_core::network::{EvidenceActivation, ModelState, NetworkConfig, OptimizerConfig};
use evidnet_core::{Box3D, Volume3D};
use proptest::prelude::*;

fn record(id: &str, label: usize) -> SubjectRecord {
    SubjectRecord {
        id: id.into(),
        label,
        volume_path: format!("v/{id}.json"),
        boxes_path: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn volume_round_trip_is_bit_exact(
        dims in prop::array::uniform3(1usize..6),
        spacing in prop::array::uniform3(0.1f64..5.0),
        seed in any::<u64>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let n: usize = dims.iter().product();
        let values: Vec<f32> = (0..n)
            .map(|i| f32::from_bits((seed.wrapping_mul(i as u64 + 1) >> 40) as u32 | 0x3f00_0000) - 1.0)
            .collect();
        let v = Volume3D::new(dims, spacing, values).unwrap();
        let path = dir.path().join("case.json");
        write_volume(&path, &v).unwrap();
        let back = read_volume(&path).unwrap();
        prop_assert_eq!(back.dims(), v.dims());
        prop_assert_eq!(back.spacing_mm(), v.spacing_mm());
        let bits = |v: &Volume3D| v.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&v));
    }

    #[test]
    fn slice_boxes_round_trip(
        rows in prop::collection::vec((-5i64..40, 0.0f64..50.0, 0.0f64..50.0, 0.0f64..20.0, 0.0f64..20.0, prop::option::of(0.0f64..=1.0)), 0..12),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let any_conf = rows.iter().any(|r| r.5.is_some());
        let boxes: Vec<Box2D> = rows
            .iter()
            .map(|&(z, x, y, w, h, c)| {
                let b = Box2D::new(z, [x, y], [x + w, y + h]).unwrap();
                // A file either has the confidence column or it does not.
                match (any_conf, c) {
                    (true, c) => b.with_confidence(c.unwrap_or(0.5)),
                    (false, _) => b,
                }
            })
            .collect();
        let path = dir.path().join("boxes.csv");
        write_slice_boxes(&path, &boxes).unwrap();
        prop_assert_eq!(read_slice_boxes(&path).unwrap(), boxes);
    }
}

#[test]
fn volume_descriptor_fields_are_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let v = Volume3D::new([2, 1, 1], [0.5, 0.5, 2.5], vec![1.0, -2.0]).unwrap();
    let path = dir.path().join("a.json");
    write_volume(&path, &v).unwrap();
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(
        json,
        serde_json::json!({"dims": [2, 1, 1], "spacing_mm": [0.5, 0.5, 2.5], "dtype": "f32le", "data_file": "a.raw"})
    );
    let raw = fs::read(dir.path().join("a.raw")).unwrap();
    assert_eq!(raw, [1.0f32.to_le_bytes(), (-2.0f32).to_le_bytes()].concat());
}

#[test]
fn truncated_volume_payload_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let v = Volume3D::filled([2, 2, 2], [1.0; 3], 3.0).unwrap();
    let path = dir.path().join("a.json");
    write_volume(&path, &v).unwrap();
    fs::write(dir.path().join("a.raw"), [0u8; 12]).unwrap();
    let err = read_volume(&path).unwrap_err();
    assert!(matches!(err, AppError::Validation(_)), "{err}");
    fs::remove_file(dir.path().join("a.raw")).unwrap();
    assert!(matches!(read_volume(&path).unwrap_err(), AppError::Io { .. }));
}

#[test]
fn manifest_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    let mut records = vec![record("a", 0), record("b", 1), record("c", 2)];
    records[1].boxes_path = Some("b.csv".into());
    write_manifest(&path, &records).unwrap();
    let m = load_manifest(&path).unwrap();
    assert_eq!(m.records, records);
    assert_eq!(m.volume_path(&records[0]), dir.path().join("v/a.json"));

    write_manifest(&path, &[record("a", 0), record("a", 1)]).unwrap();
    let err = load_manifest(&path).unwrap_err().to_string();
    assert!(err.contains("duplicate subject id 'a'"), "{err}");

    fs::write(&path, "{\"id\":\"x\",\"label\":4,\"volume_path\":\"x.json\"}\n").unwrap();
    let err = load_manifest(&path).unwrap_err().to_string();
    assert!(err.contains("'x'") && err.contains("label 4"), "{err}");

    fs::write(&path, "{\"id\":\"x\"\n").unwrap();
    assert!(matches!(load_manifest(&path).unwrap_err(), AppError::Validation(_)));
}

#[test]
fn boxes_header_is_required() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.csv");
    fs::write(&path, "3,10,12,20,25\n").unwrap();
    assert!(matches!(read_slice_boxes(&path).unwrap_err(), AppError::Validation(_)));
    fs::write(&path, "slice_z,x_min,y_min,x_max,y_max\n3,10,12,20,25\n4,9,11,22,24\n").unwrap();
    let boxes = read_slice_boxes(&path).unwrap();
    assert_eq!(boxes.len(), 2);
    assert_eq!(boxes[1].min, [9.0, 11.0]);
    fs::write(&path, "slice_z,x_min,y_min,x_max,y_max,confidence\n3,10,12,20,25,1.5\n").unwrap();
    assert!(read_slice_boxes(&path).unwrap_err().to_string().contains("confidence"));
}

#[test]
fn voi_table_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vois.csv");
    let a = Box3D::new([9, 11, 3], [22, 25, 4]).unwrap();
    let b = Box3D::new([0, 0, 0], [1, 1, 1]).unwrap();
    write_vois(&path, [("s1", &a), ("s2", &b)]).unwrap();
    let back = read_vois(&path).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back["s1"], a);
    assert_eq!(back["s2"], b);
}

fn trained_like_state(seed: u64) -> Checkpoint {
    let config = NetworkConfig {
        input_side: 8,
        stage1_channels: 2,
        block_channels: 3,
        classes: 3,
        activation: EvidenceActivation::Softplus,
    };
    let mut state = ModelState::<f32>::init(config, seed).unwrap();
    state.step = 17;
    for (i, m) in state.first_moment.iter_mut().enumerate() {
        m.iter_mut().enumerate().for_each(|(j, v)| *v = (i * 31 + j) as f32 * 1e-3);
    }
    for (i, m) in state.second_moment.iter_mut().enumerate() {
        m.iter_mut().enumerate().for_each(|(j, v)| *v = (i + j) as f32 * 1e-6);
    }
    Checkpoint {
        state,
        optimizer: OptimizerConfig {
            learning_rate: 3e-4,
            ..OptimizerConfig::default()
        },
        class_counts: vec![71, 19, 30],
    }
}

#[test]
fn checkpoint_round_trip_reproduces_evidence_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fold0.ckpt");
    let ckpt = trained_like_state(3);
    save_checkpoint(&path, &ckpt).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);
    let x: Vec<f32> = (0..512).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
    let bits = |e: Vec<f32>| e.into_iter().map(f32::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(back.state.forward(&x).unwrap()), bits(ckpt.state.forward(&x).unwrap()));
    // Saving again yields the same bytes.
    let again = dir.path().join("again.ckpt");
    save_checkpoint(&again, &back).unwrap();
    assert_eq!(fs::read(&again).unwrap(), bytes);
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    let ckpt = trained_like_state(4);
    let bytes = ckpt.to_bytes().unwrap();
    fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(load_checkpoint(&path).unwrap_err().to_string().contains("payload"));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    fs::write(&path, &bad).unwrap();
    assert!(load_checkpoint(&path).unwrap_err().to_string().contains("magic"));
    let mut nan = bytes;
    let n = nan.len();
    nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&path, &nan).unwrap();
    assert!(matches!(load_checkpoint(&path).unwrap_err(), AppError::Validation(_)));
}

#[test]
fn predictions_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("predictions.csv");
    let rows: Vec<PredictionRow> = [[0.3, 0.0, 7.1], [1e-7, 123.456, 0.0], [0.0, 0.0, 0.0]]
        .iter()
        .enumerate()
        .map(|(i, e)| PredictionRow {
            fold: (i % 2).to_string(),
            record: PredictionRecord::new(format!("s{i}"), i, &EvidentialOutput::from_evidence(e).unwrap()),
        })
        .collect();
    write_predictions(&path, &rows).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("id,fold,true,pred,p0,p1,p2,u,grade\n"));
    assert_eq!(read_predictions(&path).unwrap(), rows);
}
