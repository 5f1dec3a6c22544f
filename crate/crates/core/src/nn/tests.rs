use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::*;
use crate::autodiff::{Tape, Tensor};
use crate::error::Error;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

fn randomize(p: &mut ParameterSet<f64>, r: &mut ChaCha8Rng, scale: f64) {
    for i in 0..p.len() {
        for v in p.at_mut(i).data_mut() {
            *v = r.gen_range(-scale..scale);
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Central differences of `f` over every parameter scalar.
fn fd_params(p: &ParameterSet<f64>, f: &dyn Fn(&ParameterSet<f64>) -> f64) -> Vec<Vec<f64>> {
    let h = 1e-6;
    let mut q = p.clone();
    (0..p.len())
        .map(|i| {
            (0..p.at(i).len())
                .map(|j| {
                    let v = p.at(i).data()[j];
                    q.at_mut(i).data_mut()[j] = v + h;
                    let fp = f(&q);
                    q.at_mut(i).data_mut()[j] = v - h;
                    let fm = f(&q);
                    q.at_mut(i).data_mut()[j] = v;
                    (fp - fm) / (2.0 * h)
                })
                .collect()
        })
        .collect()
}

fn micro_generator(seed: u64) -> UNetGenerator<f64> {
    let spec = GeneratorSpec {
        in_channels: 1,
        base_channels: 4,
        depth: 1,
        residual_blocks: 1,
        ..GeneratorSpec::default()
    };
    let mut g = UNetGenerator::new(spec, &mut rng(seed)).unwrap();
    randomize(g.params_mut(), &mut rng(seed + 1), 0.5);
    g
}

fn generator_mean(g: &UNetGenerator<f64>, p: &ParameterSet<f64>, x: &Tensor<f64>) -> f64 {
    let mut tape = Tape::new();
    let pv = p.attach_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let y = g.forward(&mut tape, &pv, xv);
    let m = tape.mean_all(y);
    tape.item(m)
}

#[test]
fn generator_shape_and_range() {
    let spec = GeneratorSpec {
        in_channels: 1,
        ..GeneratorSpec::default()
    };
    let mut g = UNetGenerator::<f32>::new(spec, &mut rng(1)).unwrap();
    let mut r = rng(2);
    for i in 0..g.params().len() {
        for v in g.params_mut().at_mut(i).data_mut() {
            *v = r.gen_range(-1.0..1.0);
        }
    }
    let x = uniform(&mut r, &[1, 1, 64, 64], 0.0, 1.0).cast::<f32>();
    let y = g.apply(&x).unwrap();
    assert_eq!(y.shape(), &[1, 1, 64, 64]);
    assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn generator_init_is_deterministic() {
    let a = UNetGenerator::<f32>::new(GeneratorSpec::default(), &mut rng(7)).unwrap();
    let b = UNetGenerator::<f32>::new(GeneratorSpec::default(), &mut rng(7)).unwrap();
    let c = UNetGenerator::<f32>::new(GeneratorSpec::default(), &mut rng(8)).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
}

#[test]
fn untrained_generator_is_identity() {
    let g = UNetGenerator::<f32>::new(GeneratorSpec::default(), &mut rng(3)).unwrap();
    let x = uniform(&mut rng(4), &[2, 3, 16, 16], 0.0, 1.0).cast::<f32>();
    let y = g.apply(&x).unwrap();
    for (a, b) in x.data().iter().zip(y.data()) {
        assert!((a - b).abs() < 2e-6, "{a} vs {b}");
    }
}

#[test]
fn generator_rejects_indivisible_input() {
    let g = UNetGenerator::<f32>::new(GeneratorSpec::default(), &mut rng(3)).unwrap();
    let x = Tensor::<f32>::zeros(&[1, 3, 30, 32]);
    assert!(matches!(g.apply(&x), Err(Error::ShapeMismatch(_))));
    let x = Tensor::<f32>::zeros(&[1, 1, 32, 32]);
    assert!(matches!(g.apply(&x), Err(Error::ShapeMismatch(_))));
}

#[test]
fn generator_spec_validation() {
    for bad in [
        GeneratorSpec { depth: 0, ..GeneratorSpec::default() },
        GeneratorSpec { base_channels: 3, ..GeneratorSpec::default() },
        GeneratorSpec { in_channels: 2, ..GeneratorSpec::default() },
        GeneratorSpec { eca_gamma: 0.0, ..GeneratorSpec::default() },
    ] {
        assert!(UNetGenerator::<f32>::new(bad, &mut rng(0)).is_err());
    }
}

#[test]
fn generator_parameter_gradients_match_finite_differences() {
    let g = micro_generator(10);
    assert!(g.params().count() <= 5000);
    let x = uniform(&mut rng(12), &[2, 1, 8, 8], 0.05, 0.95);
    let mut tape = Tape::new();
    let pv = g.params().attach(&mut tape);
    let xv = tape.constant(x.clone());
    let y = g.forward(&mut tape, &pv, xv);
    let m = tape.mean_all(y);
    let grads = g.params().gradients(&tape.backward(m), &pv);
    let numeric = fd_params(g.params(), &|p| generator_mean(&g, p, &x));
    let mut worst = 0f64;
    for i in 0..grads.len() {
        for (a, n) in grads.at(i).data().iter().zip(&numeric[i]) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn generator_input_gradient_matches_finite_differences() {
    let g = micro_generator(20);
    let x = uniform(&mut rng(21), &[1, 1, 8, 8], 0.05, 0.95);
    let mut tape = Tape::new();
    let pv = g.params().attach_frozen(&mut tape);
    let xv = tape.leaf(x.clone());
    let y = g.forward(&mut tape, &pv, xv);
    let m = tape.mean_all(y);
    let gx = tape.backward(m).wrt(xv);
    let h = 1e-6;
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let n = (generator_mean(&g, g.params(), &xp) - generator_mean(&g, g.params(), &xm)) / (2.0 * h);
        assert!(rel_err(gx.data()[i], n) < 1e-3);
    }
}

#[test]
fn eca_disabled_equals_unit_gate() {
    let on = GeneratorSpec { in_channels: 1, ..GeneratorSpec::default() };
    let off = GeneratorSpec { eca_enabled: false, ..on.clone() };
    let mut a = UNetGenerator::<f64>::new(on, &mut rng(5)).unwrap();
    let mut b = UNetGenerator::<f64>::new(off, &mut rng(5)).unwrap();
    randomize(a.params_mut(), &mut rng(6), 0.3);
    let shared: Vec<Tensor<f64>> = a
        .params()
        .iter()
        .filter(|(n, _)| !n.contains(".eca."))
        .map(|(_, t)| t.clone())
        .collect();
    assert_eq!(shared.len(), b.params().len());
    for (i, t) in shared.into_iter().enumerate() {
        *b.params_mut().at_mut(i) = t;
    }
    let x = uniform(&mut rng(7), &[2, 1, 16, 16], 0.0, 1.0);
    let mut tape = Tape::new();
    let pa = a.params().attach_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let ya = a.forward_unit_gate(&mut tape, &pa, xv);
    let yb = b.apply(&x).unwrap();
    assert_eq!(tape.value(ya).data(), yb.data());
    let gated = a.apply(&x).unwrap();
    assert_ne!(gated.data(), yb.data());
}

#[test]
fn eca_kernel_sizes() {
    let cases = [(1, 1), (2, 1), (4, 1), (8, 3), (16, 3), (32, 3), (64, 3), (256, 5), (512, 5)];
    for (c, k) in cases {
        assert_eq!(eca_kernel_size(c, 2.0, 1.0), k, "C = {c}");
    }
}

#[test]
fn eca_identical_channels_stay_identical() {
    let mut g = EcaGate::<f64>::new(16, 2.0, 1.0).unwrap();
    g.kernel = vec![0.3, -0.7, 1.1];
    g.bias = 0.2;
    let plane: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
    let data: Vec<f64> = (0..16).flat_map(|_| plane.clone()).collect();
    let x = Tensor::new(vec![16, 4, 5], data).unwrap();
    let y = g.apply(&x).unwrap();
    // Zero padding makes edge channels differ, so compare the interior.
    for c in 2..15 {
        assert_eq!(&y.data()[c * 20..(c + 1) * 20], &y.data()[20..40]);
    }
    let x1 = Tensor::new(vec![4, 2, 2], (0..16).map(|i| (i % 4) as f64).collect()).unwrap();
    let g1 = EcaGate::<f64>::new(4, 2.0, 1.0).unwrap();
    assert_eq!(g1.kernel_size(), 1);
    let y1 = g1.apply(&x1).unwrap();
    for c in 1..4 {
        assert_eq!(&y1.data()[c * 4..(c + 1) * 4], &y1.data()[..4]);
    }
}

#[test]
fn eca_zero_input_gives_zero_output() {
    let mut g = EcaGate::<f64>::new(8, 2.0, 1.0).unwrap();
    g.bias = 1.3;
    let y = g.apply(&Tensor::zeros(&[8, 3, 3])).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn eca_preserves_shape() {
    for c in [4, 16, 64] {
        let g = EcaGate::<f32>::new(c, 2.0, 1.0).unwrap();
        let x = Tensor::full(&[c, 5, 7], 0.5f32);
        assert_eq!(g.apply(&x).unwrap().shape(), &[c, 5, 7]);
        let xb = Tensor::full(&[2, c, 5, 7], 0.5f32);
        assert_eq!(g.apply(&xb).unwrap().shape(), &[2, c, 5, 7]);
    }
    assert!(EcaGate::<f32>::new(0, 2.0, 1.0).is_err());
}

fn micro_critic(seed: u64) -> ConvCritic<f64> {
    let spec = CriticSpec {
        in_channels: 1,
        base_channels: 4,
        conv_layers: 2,
    };
    ConvCritic::new(spec, &mut rng(seed)).unwrap()
}

#[test]
fn critic_emits_one_value_per_image() {
    let c = ConvCritic::<f32>::new(CriticSpec::default(), &mut rng(1)).unwrap();
    let x = uniform(&mut rng(2), &[7, 3, 32, 32], 0.0, 1.0).cast::<f32>();
    assert_eq!(c.evaluate(&x).unwrap().len(), 7);
    assert!(c.evaluate(&Tensor::zeros(&[1, 1, 8, 8])).is_err());
}

#[test]
fn critic_has_no_cross_sample_coupling() {
    let c = micro_critic(3);
    let a = uniform(&mut rng(4), &[1, 1, 12, 12], 0.0, 1.0);
    let b = uniform(&mut rng(5), &[1, 1, 12, 12], 0.0, 1.0);
    let ab = Tensor::stack(&[a.clone().reshaped(&[1, 12, 12]).unwrap(), b.clone().reshaped(&[1, 12, 12]).unwrap()]).unwrap();
    let ba = Tensor::stack(&[b.reshaped(&[1, 12, 12]).unwrap(), a.clone().reshaped(&[1, 12, 12]).unwrap()]).unwrap();
    let aa = Tensor::stack(&[a.clone().reshaped(&[1, 12, 12]).unwrap(), a.reshaped(&[1, 12, 12]).unwrap()]).unwrap();
    let s_ab = c.evaluate(&ab).unwrap();
    let s_ba = c.evaluate(&ba).unwrap();
    let s_aa = c.evaluate(&aa).unwrap();
    assert_eq!(s_aa[0], s_aa[1]);
    assert_eq!(s_ab[0], s_ba[1]);
    assert_eq!(s_ab[1], s_ba[0]);
    assert_eq!(s_ab[0], s_aa[0]);
}

#[test]
fn critic_input_gradient_matches_finite_differences() {
    let c = micro_critic(6);
    let x = uniform(&mut rng(7), &[2, 1, 10, 10], 0.0, 1.0);
    let (_, g) = c.input_gradient(&x).unwrap();
    let h = 1e-6;
    let total = |x: &Tensor<f64>| c.evaluate(x).unwrap().iter().sum::<f64>();
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let n = (total(&xp) - total(&xm)) / (2.0 * h);
        assert!(rel_err(g.data()[i], n) < 1e-3, "elem {i}: {} vs {n}", g.data()[i]);
    }
}

#[test]
fn critic_parameter_gradients_match_finite_differences() {
    let c = micro_critic(8);
    let x = uniform(&mut rng(9), &[3, 1, 10, 10], 0.0, 1.0);
    let mut tape = Tape::new();
    let pv = c.params().attach(&mut tape);
    let xv = tape.constant(x.clone());
    let s = c.score(&mut tape, &pv, xv);
    let m = tape.mean_all(s);
    let grads = c.params().gradients(&tape.backward(m), &pv);
    let mut probe = c.clone();
    let numeric = fd_params(c.params(), &|p| {
        let mut q = probe.clone();
        q.params_mut().assign(p).unwrap();
        let v = q.evaluate(&x).unwrap();
        v.iter().sum::<f64>() / v.len() as f64
    });
    for i in 0..grads.len() {
        for (a, n) in grads.at(i).data().iter().zip(&numeric[i]) {
            assert!(rel_err(*a, *n) < 1e-3);
        }
    }
    probe.params_mut().assign(c.params()).unwrap();
}

#[test]
fn critic_tangent_is_directional_derivative() {
    let c = micro_critic(11);
    let x = uniform(&mut rng(12), &[2, 1, 10, 10], 0.0, 1.0);
    let v = uniform(&mut rng(13), &[2, 1, 10, 10], -1.0, 1.0);
    let mut tape = Tape::new();
    let pv = c.params().attach_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let vv = tape.constant(v.clone());
    let (s, t) = c.score_tangent(&mut tape, &pv, xv, vv);
    assert_eq!(tape.value(s).data(), c.evaluate(&x).unwrap().as_slice());
    let (_, g) = c.input_gradient(&x).unwrap();
    for n in 0..2 {
        let dot: f64 = g.row(n).iter().zip(v.row(n)).map(|(a, b)| a * b).sum();
        assert!((tape.value(t).data()[n] - dot).abs() < 1e-10);
    }
}

#[test]
fn mlp_networks() {
    let spec = MlpSpec { dim: 2, hidden: vec![8, 8], residual: true };
    let g = MlpGenerator::<f64>::new(spec.clone(), &mut rng(1)).unwrap();
    let x = uniform(&mut rng(2), &[5, 2], -3.0, 3.0);
    assert_eq!(g.apply(&x).unwrap(), x);
    let plain = MlpGenerator::<f64>::new(MlpSpec { residual: false, ..spec.clone() }, &mut rng(1)).unwrap();
    assert_ne!(plain.apply(&x).unwrap(), x);

    let c = MlpCritic::<f64>::new(spec, &mut rng(3)).unwrap();
    assert_eq!(c.evaluate(&x).unwrap().len(), 5);
    let v = uniform(&mut rng(4), &[5, 2], -1.0, 1.0);
    let mut tape = Tape::new();
    let pv = c.params().attach_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let vv = tape.constant(v.clone());
    let (_, t) = c.score_tangent(&mut tape, &pv, xv, vv);
    let (_, gx) = c.input_gradient(&x).unwrap();
    for n in 0..5 {
        let dot: f64 = gx.row(n).iter().zip(v.row(n)).map(|(a, b)| a * b).sum();
        assert!((tape.value(t).data()[n] - dot).abs() < 1e-10);
    }
    assert!(c.evaluate(&Tensor::zeros(&[5, 3])).is_err());
}

#[test]
fn classifier_outputs_distributions() {
    let c = ConvClassifier::<f32>::new(ClassifierSpec::default(), &mut rng(1)).unwrap();
    let x = uniform(&mut rng(2), &[4, 3, 32, 32], 0.0, 1.0).cast::<f32>();
    let p = c.predict_proba(&x).unwrap();
    assert_eq!(p.len(), 4);
    for row in p {
        assert_eq!(row.len(), 3);
        assert!(row.iter().all(|&v| v > 0.0));
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn rmsprop_matches_closed_form() {
    let mut p = ParameterSet::<f64>::new();
    p.push("w", Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
    let mut opt = RmsProp::new(&p);
    let mut g = ParameterSet::new();
    g.push("w", Tensor::new(vec![2], vec![0.5, -2.0]).unwrap());
    opt.step(&mut p, &g, 0.01).unwrap();
    // v = 0.01 g^2, so the first step is lr * sign(g) / sqrt(0.01) up to eps.
    let w = p.at(0).data();
    assert!((w[0] - (1.0 - 0.01 * 0.5 / (0.05 + 1e-8))).abs() < 1e-12);
    assert!((w[1] - (-1.0 + 0.01 * 2.0 / (0.2 + 1e-8))).abs() < 1e-12);
    opt.step(&mut p, &g, 0.01).unwrap();
    let v = 0.99 * 0.01 * 0.25 + 0.01 * 0.25;
    assert!((opt.state().at(0).data()[0] - v).abs() < 1e-15);
}

fn sample_container<T: crate::Scalar>() -> Container<T> {
    let g = UNetGenerator::<T>::new(GeneratorSpec::default(), &mut rng(1)).unwrap();
    Container {
        fingerprint: fingerprint(g.spec()),
        metadata: serde_json::json!({ "epoch": 3 }),
        arrays: g.params().clone(),
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.ckpt");
    let c32 = sample_container::<f32>();
    c32.save(&path).unwrap();
    let back = Container::<f32>::load(&path, Some(&c32.fingerprint)).unwrap();
    assert_eq!(back, c32);
    let c64 = sample_container::<f64>();
    c64.save(&path).unwrap();
    let back = Container::<f64>::load(&path, None).unwrap();
    for (a, b) in back.arrays.iter().zip(c64.arrays.iter()) {
        assert_eq!(a.0, b.0);
        let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.1), bits(b.1));
    }
    let params = load_parameters::<f64>(&path, &c64.fingerprint).unwrap();
    assert_eq!(params, c64.arrays);
}

#[test]
fn checkpoint_rejects_wrong_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.ckpt");
    let c = sample_container::<f32>();
    save_parameters(&path, &c.fingerprint, &c.arrays).unwrap();
    let other = fingerprint(&GeneratorSpec { depth: 3, ..GeneratorSpec::default() });
    assert_ne!(other, c.fingerprint);
    let err = load_parameters::<f32>(&path, &other).unwrap_err();
    assert!(matches!(err, Error::FingerprintMismatch { .. }));
}

#[test]
fn checkpoint_checksum_covers_file_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.ckpt");
    let c = sample_container::<f32>();
    c.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let body = &bytes[..bytes.len() - 32];
    let want = Sha256::digest(body);
    assert_eq!(recorded_checksum(&path).unwrap(), hex::encode(want));

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x01;
    std::fs::write(&path, &flipped).unwrap();
    assert!(matches!(Container::<f32>::load(&path, None), Err(Error::CorruptCheckpoint(_))));

    std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
    assert!(matches!(Container::<f32>::load(&path, None), Err(Error::CorruptCheckpoint(_))));
    std::fs::write(&path, b"").unwrap();
    assert!(matches!(Container::<f32>::load(&path, None), Err(Error::CorruptCheckpoint(_))));
}

#[test]
fn prefixed_parameter_sets() {
    let a = micro_critic(1);
    let mut all = ParameterSet::new();
    all.extend_prefixed("critic", a.params());
    all.extend_prefixed("other", a.params());
    assert_eq!(all.len(), 2 * a.params().len());
    assert_eq!(&all.extract_prefixed("critic"), a.params());
}
