//! Regenerate the bundled fixtures: `cargo run -p zkinfer --example gen_fixtures`.

use std::collections::BTreeMap;
use std::path::Path;

use zkinfer::bench::{make_depth_model_with, sample_input, DEFAULT_CHANNELS};
use zkinfer::model::{ModelGraph, ModelNode, Op, Tensor, TensorSpec};

pub const LENET_SEED: u64 = 7;
pub const LENET_SIDE: usize = 28;

fn tensor(shape: Vec<usize>, seed: u64, a: f64) -> Tensor {
    let n: usize = shape.iter().product();
    // small deterministic LCG keeps the fixtures independent of rand versions
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let data = (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = (s >> 11) as f64 / (1u64 << 53) as f64;
            ((2.0 * u - 1.0) * a * 256.0).round() / 256.0
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn single_gemm() -> ModelGraph {
    let mut init = BTreeMap::new();
    init.insert("w".to_string(), tensor(vec![4, 3], 1, 0.9));
    init.insert("b".to_string(), tensor(vec![3], 2, 0.2));
    ModelGraph {
        nodes: vec![ModelNode {
            name: "fc".into(),
            op: Op::Gemm { trans_a: false, trans_b: false },
            inputs: vec!["x".into(), "w".into(), "b".into()],
            output: "y".into(),
        }],
        initializers: init,
        input: TensorSpec::new("x", vec![1, 4]).unwrap(),
        output: "y".into(),
    }
}

fn single_conv() -> ModelGraph {
    let mut init = BTreeMap::new();
    init.insert("w".to_string(), tensor(vec![2, 1, 3, 3], 3, 0.4));
    init.insert("b".to_string(), tensor(vec![2], 4, 0.2));
    ModelGraph {
        nodes: vec![ModelNode {
            name: "conv".into(),
            op: Op::Conv2D { stride: [1, 1], padding: [1, 1], kernel_shape: Some([3, 3]) },
            inputs: vec!["x".into(), "w".into(), "b".into()],
            output: "y".into(),
        }],
        initializers: init,
        input: TensorSpec::new("x", vec![1, 1, 4, 4]).unwrap(),
        output: "y".into(),
    }
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::create_dir_all(&dir).unwrap();
    let lenet = make_depth_model_with(2, LENET_SIDE, DEFAULT_CHANNELS, LENET_SEED, false).unwrap();
    for (name, g) in [("lenet", lenet), ("single_gemm", single_gemm()), ("single_conv", single_conv())] {
        g.validate().unwrap();
        std::fs::write(dir.join(format!("{name}.json")), g.to_json()).unwrap();
        std::fs::write(dir.join(format!("{name}_input.json")), sample_input(&g, 11).to_json()).unwrap();
    }
}
