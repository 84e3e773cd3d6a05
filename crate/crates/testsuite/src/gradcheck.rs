//! Central finite-difference checks of autograd gradients in double precision.

use candle_core::{Device, Tensor, Var};
use gfd_core::losses::{adversarial_d, adversarial_g, cross_entropy};
use gfd_core::model::composite_batch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fixtures::gradcheck_model;

pub const STEP: f64 = 1e-3;
pub const TOL: f64 = 1e-4;
pub const PROBES: usize = 24;

pub type LossFn<'a> = &'a dyn Fn(&Tensor) -> gfd_core::Result<Tensor>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub checked: usize,
    /// Probes with a ReLU or max-pool kink inside the difference window.
    pub skipped: usize,
    /// Largest relative error among checked probes.
    pub worst: f64,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checked >= PROBES / 2 && self.worst <= TOL
    }
}

pub fn random(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn to_vec(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_vec1().unwrap()
}

fn with_value(base: &[f64], shape: &[usize], i: usize, delta: f64) -> Tensor {
    let mut v = base.to_vec();
    v[i] += delta;
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

/// Compares analytic entries with central differences at `PROBES` random
/// coordinates; `at(i, d)` is the loss with entry `i` moved by `d`. A probe
/// counts only when the differences at `STEP` and `STEP / 2` agree, which
/// rules out kinks inside the window.
pub fn probe(at: &dyn Fn(usize, f64) -> f64, analytic: &[f64], rng: &mut ChaCha8Rng) -> Outcome {
    let scale = analytic.iter().fold(0f64, |m, g| m.max(g.abs()));
    let floor = (1e-6 * scale).max(1e-12);
    let mut out = Outcome {
        checked: 0,
        skipped: 0,
        worst: 0.0,
    };
    for _ in 0..PROBES {
        let i = rng.random_range(0..analytic.len());
        let numeric = (at(i, STEP) - at(i, -STEP)) / (2.0 * STEP);
        let half = (at(i, STEP / 2.0) - at(i, -STEP / 2.0)) / STEP;
        if (numeric - half).abs() > 1e-5 * numeric.abs().max(half.abs()).max(floor) {
            out.skipped += 1;
            continue;
        }
        let denom = analytic[i].abs().max(numeric.abs()).max(floor);
        out.worst = out.worst.max((analytic[i] - numeric).abs() / denom);
        out.checked += 1;
    }
    out
}

/// Gradient of `f` with respect to its tensor argument.
pub fn check_input(f: LossFn, x: &Tensor, rng: &mut ChaCha8Rng) -> Outcome {
    let var = Var::from_tensor(x).unwrap();
    let grads = f(var.as_tensor()).unwrap().backward().unwrap();
    let analytic = to_vec(
        grads
            .get(var.as_tensor())
            .expect("input takes part in the loss"),
    );
    let (base, shape) = (to_vec(x), x.dims().to_vec());
    let eval = |i, d| {
        f(&with_value(&base, &shape, i, d))
            .unwrap()
            .to_scalar::<f64>()
            .unwrap()
    };
    probe(&eval, &analytic, rng)
}

/// Gradient of `loss` with respect to a parameter, perturbed in place.
pub fn check_param(
    loss: &dyn Fn() -> gfd_core::Result<Tensor>,
    var: &Var,
    rng: &mut ChaCha8Rng,
) -> Outcome {
    let original = var.as_tensor().copy().unwrap();
    let grads = loss().unwrap().backward().unwrap();
    let analytic = to_vec(
        grads
            .get(var.as_tensor())
            .expect("parameter takes part in the loss"),
    );
    let (base, shape) = (to_vec(&original), original.dims().to_vec());
    let at = |i: usize, d: f64| {
        var.set(&with_value(&base, &shape, i, d)).unwrap();
        let v = loss().unwrap().to_scalar::<f64>().unwrap();
        var.set(&original).unwrap();
        v
    };
    probe(&at, &analytic, rng)
}

/// Named outcomes of one group of checks.
pub type Report = Vec<(String, Outcome)>;

const LABELS: [usize; 2] = [0, 2];

pub fn cross_entropy_checks() -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let logits = random(&[8, 8], 3.0, &mut rng);
    let labels: Vec<usize> = (0..8).map(|i| (i * 3) % 8).collect();
    vec![(
        "cross_entropy".into(),
        check_input(&|x| cross_entropy(x, &labels), &logits, &mut rng),
    )]
}

pub fn adversarial_checks() -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let real = random(&[2, 1, 8, 8], 4.0, &mut rng);
    let fake = random(&[2, 1, 8, 8], 4.0, &mut rng);
    vec![
        (
            "adversarial_d real side".into(),
            check_input(&|x| adversarial_d(x, &fake), &real, &mut rng),
        ),
        (
            "adversarial_d fingerprinted side".into(),
            check_input(&|x| adversarial_d(&real, x), &fake, &mut rng),
        ),
        (
            "adversarial_g".into(),
            check_input(&adversarial_g, &fake, &mut rng),
        ),
    ]
}

pub fn latent_checks() -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = gradcheck_model();
    let x = random(&[2, 3, 8, 8], 0.9, &mut rng);
    let z = m.generator.encode(&x, true).unwrap();
    vec![
        (
            "latent wrt z".into(),
            check_input(&|z| m.loss_latent_cls(z, &LABELS), &z, &mut rng),
        ),
        (
            "latent wrt image".into(),
            check_input(
                &|x| m.loss_latent_cls(&m.generator.encode(x, true)?, &LABELS),
                &x,
                &mut rng,
            ),
        ),
    ]
}

pub fn generator_side_checks() -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = gradcheck_model();
    let carrier = random(&[2, 3, 8, 8], 0.8, &mut rng);
    let fp = random(&[2, 3, 8, 8], 0.1, &mut rng);
    let x_fp = |f: &Tensor| composite_batch(f, &carrier);
    vec![
        (
            "aux_cls through C".into(),
            check_input(&|f| m.loss_aux_cls_g(&x_fp(f)?, &LABELS), &fp, &mut rng),
        ),
        (
            "perceptual through F".into(),
            check_input(&|f| m.loss_perceptual(&x_fp(f)?, &carrier), &fp, &mut rng),
        ),
    ]
}

pub fn classifier_checks() -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = gradcheck_model();
    // Batch statistics need more than one value per channel at the deepest stage.
    let x = random(&[4, 3, 16, 16], 0.9, &mut rng);
    ["layer4.0.conv3.weight", "layer4.0.bn3.weight", "fc.weight"]
        .into_iter()
        .map(|name| {
            let w = m.classifier.store().get(name).unwrap();
            let o = check_param(&|| m.loss_aux_cls_c(&x, &[0, 1, 2, 1]), &w, &mut rng);
            (format!("aux_cls wrt C {name}"), o)
        })
        .collect()
}

/// The patch discriminator needs 16 pixels per side, its smallest valid input.
pub fn discriminator_checks() -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let m = gradcheck_model();
    let x = random(&[2, 3, 16, 16], 0.9, &mut rng);
    let carrier = random(&[2, 3, 16, 16], 0.8, &mut rng);
    let fp = random(&[2, 3, 16, 16], 0.1, &mut rng);
    let x_fp = composite_batch(&fp, &carrier).unwrap();
    let mut out: Report = vec![(
        "adversarial_g through D".into(),
        check_input(
            &|f| m.loss_adv_g(&composite_batch(f, &carrier)?),
            &fp,
            &mut rng,
        ),
    )];
    for name in ["conv3.weight", "norm3.weight", "out.weight"] {
        let w = m.discriminator.store().get(name).unwrap();
        out.push((
            format!("adversarial_d wrt D {name}"),
            check_param(&|| m.loss_adv_d(&x, &x_fp), &w, &mut rng),
        ));
    }
    out
}

pub fn generator_checks() -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = gradcheck_model();
    let x = random(&[2, 3, 8, 8], 0.9, &mut rng);
    let carrier = random(&[2, 3, 8, 8], 0.5, &mut rng);
    let w = m
        .generator
        .store()
        .named_vars()
        .into_iter()
        .find(|(n, _)| n.starts_with("dec") && n.ends_with("weight"))
        .unwrap()
        .1;
    let loss = || {
        let (fp, _) = m.generator.forward_t(&x, true)?;
        m.loss_perceptual(&composite_batch(&(fp * 0.1)?, &carrier)?, &carrier)
    };
    vec![("perceptual wrt G".into(), check_param(&loss, &w, &mut rng))]
}

/// Every group, in a fixed order.
pub fn all_checks() -> Report {
    [
        cross_entropy_checks,
        adversarial_checks,
        latent_checks,
        generator_side_checks,
        classifier_checks,
        discriminator_checks,
        generator_checks,
    ]
    .iter()
    .flat_map(|f| f())
    .collect()
}
