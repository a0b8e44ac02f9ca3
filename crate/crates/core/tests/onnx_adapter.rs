#![cfg(feature = "onnx")]

use std::path::Path;

use ood_saliency::classifier::{AdapterConfig, Classifier, OnnxClassifier, OnnxConfig};
use ood_saliency::ood::calibrate;
use ood_saliency::{Fill, Image};
use prost::Message;
use tract_onnx::pb;

const FLOAT: i32 = 1;
const ATTR_INT: i32 = 2;

fn value_info(name: &str, dims: &[i64]) -> pb::ValueInfoProto {
    use pb::tensor_shape_proto::{dimension::Value, Dimension};
    pb::ValueInfoProto {
        name: name.into(),
        r#type: Some(pb::TypeProto {
            value: Some(pb::type_proto::Value::TensorType(pb::type_proto::Tensor {
                elem_type: FLOAT,
                shape: Some(pb::TensorShapeProto {
                    dim: dims
                        .iter()
                        .map(|&d| Dimension {
                            value: Some(Value::DimValue(d)),
                            ..Default::default()
                        })
                        .collect(),
                }),
            })),
            ..Default::default()
        }),
        ..Default::default()
    }
}

fn node(op: &str, inputs: &[&str], output: &str, attrs: Vec<pb::AttributeProto>) -> pb::NodeProto {
    pb::NodeProto {
        op_type: op.into(),
        name: output.into(),
        input: inputs.iter().map(|s| s.to_string()).collect(),
        output: vec![output.into()],
        attribute: attrs,
        ..Default::default()
    }
}

fn int_attr(name: &str, i: i64) -> pb::AttributeProto {
    pb::AttributeProto {
        name: name.into(),
        r#type: ATTR_INT,
        i,
        ..Default::default()
    }
}

fn tensor(name: &str, dims: &[i64], data: &[f32]) -> pb::TensorProto {
    pb::TensorProto {
        name: name.into(),
        dims: dims.to_vec(),
        data_type: FLOAT,
        float_data: data.to_vec(),
        ..Default::default()
    }
}

// image [1,1,2,2] -> flatten -> features [1,4] -> Gemm(W^T) + b -> softmax -> probs
fn write_model(path: &Path, weights: &[f32]) {
    let graph = pb::GraphProto {
        name: "toy".into(),
        node: vec![
            node("Flatten", &["image"], "features", vec![int_attr("axis", 1)]),
            node("Gemm", &["features", "W", "b"], "logits", vec![int_attr("transB", 1)]),
            node("Softmax", &["logits"], "probs", vec![int_attr("axis", 1)]),
        ],
        initializer: vec![tensor("W", &[2, 4], weights), tensor("b", &[2], &[0.0, 0.0])],
        input: vec![value_info("image", &[1, 1, 2, 2])],
        output: vec![value_info("probs", &[1, 2])],
        ..Default::default()
    };
    let model = pb::ModelProto {
        ir_version: 8,
        opset_import: vec![pb::OperatorSetIdProto {
            domain: String::new(),
            version: 13,
        }],
        graph: Some(graph),
        ..Default::default()
    };
    std::fs::write(path, model.encode_to_vec()).unwrap();
}

fn config(path: &Path) -> OnnxConfig {
    OnnxConfig {
        model_path: path.to_path_buf(),
        input_name: "image".into(),
        prob_output_name: "probs".into(),
        feature_tensor_name: Some("features".into()),
        weight_tensor_name: Some("W".into()),
        apply_softmax: false,
    }
}

const W: [f32; 8] = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];

#[test]
fn runs_graph_and_exposes_features_and_weights() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.onnx");
    write_model(&path, &W);
    let model = OnnxClassifier::load(&config(&path)).unwrap();
    assert_eq!(model.n_classes(), 2);
    assert_eq!(model.feature_dim(), 4);
    assert!(model.capabilities().ood_capable());

    let image = Image::new(2, 2, 1, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let probs = model.predict(&image).unwrap();
    let e2 = 2f64.exp();
    assert!((probs.as_slice()[0] - e2 / (e2 + 1.0)).abs() < 1e-6);
    assert_eq!(
        model.penultimate_features(&image).unwrap().values(),
        &[1.0, 0.0, 0.0, 1.0]
    );
    let weights = model.class_weights().unwrap();
    assert_eq!(weights.rows()[0], vec![1.0, 0.0, 0.0, 1.0]);
    assert_eq!(weights.rows()[1], vec![0.0, 1.0, 1.0, 0.0]);

    assert_eq!(model.predict(&image).unwrap(), probs);
    let calib = calibrate(&image, &model, &Fill::grey()).unwrap();
    assert!((calib.h_origin - 1.0).abs() < 1e-12);
}

#[test]
fn rejects_mismatched_images_and_names() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.onnx");
    write_model(&path, &W);
    let model = OnnxClassifier::load(&config(&path)).unwrap();
    let wrong = Image::new(3, 3, 1, vec![0.5; 9]).unwrap();
    assert!(model.predict(&wrong).is_err());

    let mut cfg = config(&path);
    cfg.input_name = "pixels".into();
    assert!(OnnxClassifier::load(&cfg).is_err());
    let mut cfg = config(&path);
    cfg.weight_tensor_name = Some("missing".into());
    assert!(OnnxClassifier::load(&cfg).is_err());
}

#[test]
fn without_feature_tensor_is_not_ood_capable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.onnx");
    write_model(&path, &W);
    let mut cfg = config(&path);
    cfg.feature_tensor_name = None;
    cfg.weight_tensor_name = None;
    let model = OnnxClassifier::load(&cfg).unwrap();
    assert!(!model.capabilities().ood_capable());
    assert!(model.class_weights().is_err());
}

#[test]
fn loads_through_adapter_config_file() {
    let dir = tempfile::tempdir().unwrap();
    write_model(&dir.path().join("toy.onnx"), &W);
    let cfg_json = serde_json::json!({
        "model_path": "toy.onnx",
        "input_name": "image",
        "prob_output_name": "probs",
        "feature_tensor_name": "features",
        "weight_tensor_name": "W"
    });
    std::fs::write(dir.path().join("onnx.json"), cfg_json.to_string()).unwrap();
    let adapter: AdapterConfig =
        serde_json::from_value(serde_json::json!({"kind": "onnx_file", "path": "onnx.json"})).unwrap();
    let handle = adapter.load(dir.path()).unwrap();
    assert_eq!(handle.n_classes(), 2);
}
