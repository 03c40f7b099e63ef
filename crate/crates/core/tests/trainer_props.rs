mod common;

use inr_amr::inr::ActivationKind;
use inr_amr::trainer::{fit, init_network, Architecture, FitSpec, FourierSpec, Target};
use ndarray::Array2;

#[test]
fn gradients_match_central_differences() {
    for (i, act) in ActivationKind::ALL.iter().enumerate() {
        for fourier in [false, true] {
            common::gradient_check(*act, fourier, 100 + i as u64).unwrap();
        }
    }
}

#[test]
fn identical_specs_give_identical_weight_files() {
    let spec = FitSpec {
        epochs: 300,
        sample_count: 700,
        holdout_count: 300,
        ..FitSpec::new(
            "radial_tanh".parse().unwrap(),
            Architecture {
                depth: 2,
                width: 6,
                activation: ActivationKind::Swish,
                fourier: Some(FourierSpec { features: 4, scale: 0.5 }),
            },
        )
    };
    let a = fit(&spec).unwrap().net.to_json_string().unwrap();
    let b = fit(&spec).unwrap().net.to_json_string().unwrap();
    assert_eq!(a, b);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = pool.install(|| fit(&spec).unwrap().net.to_json_string().unwrap());
    assert_eq!(a, c);
    let other = FitSpec { seed: 1, ..spec };
    assert_ne!(a, fit(&other).unwrap().net.to_json_string().unwrap());
}

#[test]
fn fitted_nets_survive_the_weight_file() {
    let spec = FitSpec {
        epochs: 200,
        sample_count: 256,
        holdout_count: 64,
        ..FitSpec::new(
            Target::Multilinear { a: 0.5, b: -1.0, c: 2.0, d: 0.25 },
            Architecture { depth: 1, width: 5, activation: ActivationKind::Sine, fourier: None },
        )
    };
    let res = fit(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    res.net.save(&path).unwrap();
    let back = inr_amr::load_inr(&path).unwrap();
    let x = Array2::from_shape_fn((20, 2), |(i, j)| (i * 3 + j) as f64 / 61.0);
    assert_eq!(res.net.forward(x.view()).unwrap(), back.forward(x.view()).unwrap());
    assert!(res.final_rmse <= res.initial_rmse);

    let mut log = Vec::new();
    res.write_log(&mut log).unwrap();
    let text = String::from_utf8(log).unwrap();
    assert_eq!(text.lines().next(), Some("epoch,loss"));
    assert_eq!(text.lines().count(), 201);
}

#[test]
fn init_respects_architecture() {
    let spec = FitSpec::new(
        "moving_blob".parse().unwrap(),
        Architecture { depth: 3, width: 7, activation: ActivationKind::Relu, fourier: None },
    );
    let net = init_network(&spec).unwrap();
    assert_eq!(net.hidden_widths(), vec![7, 7, 7]);
    assert_eq!(net.input_dim(), 4);
    assert_eq!(net.layers().last().unwrap().activation, ActivationKind::Identity);
}
