use salienc3d_core::gradcheck::{self, Backwards, ConvGrads};
use salienc3d_core::ops::{self, Kernel3D, Padding};
use salienc3d_core::tensor5::Tensor5;
use salienc3d_core::Result;

fn broken_conv_backward(
    x: &Tensor5<f64>,
    k: &Kernel3D<f64>,
    padding: Padding,
    grad_out: &Tensor5<f64>,
) -> Result<ConvGrads<f64>> {
    let mut g = ops::conv3d_backward(x, k, padding, grad_out)?;
    g.grad_w = g.grad_w.scale(1.01);
    Ok(g)
}

#[test]
fn every_op_matches_finite_differences() {
    let report = gradcheck::run(7, Backwards::default()).unwrap();
    print!("{report}");
    let ops: Vec<_> = report.results.iter().map(|r| r.op).collect();
    assert_eq!(
        ops,
        [
            "conv3d",
            "deconv3d",
            "maxpool3d",
            "unpool3d",
            "batchnorm",
            "relu",
            "sigmoid",
            "mse_loss",
            "micro_model"
        ]
    );
    assert!(report.passed(), "failures: {:?}", report.failures());
    let model = report.results.last().unwrap();
    assert_eq!(model.checked, gradcheck::MODEL_SAMPLES);
}

#[test]
fn broken_conv_backward_is_caught() {
    let backwards = Backwards {
        conv3d: broken_conv_backward,
        ..Backwards::default()
    };
    let report = gradcheck::run(7, backwards).unwrap();
    assert_eq!(report.failures(), vec!["conv3d"]);
}

#[test]
fn other_seeds_pass() {
    for seed in [1, 2] {
        let report = gradcheck::run(seed, Backwards::default()).unwrap();
        assert!(report.passed(), "seed {seed}: {report}");
    }
}

#[test]
fn primitive_ops_meet_tighter_bounds() {
    let report = gradcheck::run(7, Backwards::default()).unwrap();
    for r in &report.results {
        let bound = match r.op {
            "relu" | "sigmoid" => 1e-6,
            "micro_model" => gradcheck::TOLERANCE,
            _ => 1e-5,
        };
        assert!(r.max_rel_err < bound, "{} at {:e}", r.op, r.max_rel_err);
    }
}
