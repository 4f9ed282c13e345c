mod common;

use std::f64::consts::{LN_2, PI};

use common::{random_tensor, rng};
use leader_core::losses::{
    angular_difference, composite_loss, direction_loss, evaluate_losses, position_loss, type_loss, weight_magnitude,
    LossParts, LossWeights, DEFAULT_EPSILON,
};
use leader_core::model::WeightTensor;
use leader_core::{Tensor, WeightStore};
use rand::seq::SliceRandom;
use rand::Rng;

const EPS: f64 = DEFAULT_EPSILON;

fn t2(v: [f32; 4]) -> Tensor {
    Tensor::from_vec(2, 2, 1, v.to_vec()).unwrap()
}

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b}");
}

#[test]
fn position_loss_by_hand() {
    let p = t2([1.0, 0.0, 0.0, 1.0]);
    let q = t2([0.9, 0.2, 0.5, 0.6]);
    let w = t2([1.0, 0.5, 0.0, 0.3]);
    let terms = [
        1.0 * -(0.9f32 as f64).ln(),
        0.5 * -(1.0 - 0.2f32 as f64).ln(),
        0.0,
        0.3f32 as f64 * -(0.6f32 as f64).ln(),
    ];
    let want = terms.iter().sum::<f64>() / (1.8f32 as f64 + EPS);
    close(position_loss(&p, &q, &w, EPS).unwrap(), want, 1e-7);
    // Clamped logs keep saturated predictions finite.
    let bad = position_loss(&t2([1.0; 4]), &t2([0.0; 4]), &t2([1.0; 4]), EPS).unwrap();
    close(bad, -(1e-7f64).ln() * 4.0 / (4.0 + EPS), 1e-6);
}

#[test]
fn direction_loss_by_hand() {
    let p = t2([1.0, 1.0, 0.0, 0.0]);
    let d = t2([0.0, 1.0, 2.0, 3.0]);
    let dh = t2([0.5, 1.0, -2.0, 0.0]);
    let want = ((0.25f64 + 0.0) / (2.0 + EPS)).sqrt() / PI;
    close(direction_loss(&p, &d, &dh, EPS).unwrap(), want, 1e-7);
    // Opposite directions everywhere give exactly one.
    let all = t2([1.0; 4]);
    let v = direction_loss(&all, &t2([0.0; 4]), &t2([PI as f32; 4]), 0.0).unwrap();
    close(v, PI as f32 as f64 / PI, 1e-7);
    // Differences wrap around the circle.
    let wrap = direction_loss(&all, &t2([3.1; 4]), &t2([-3.1; 4]), 0.0).unwrap();
    close(wrap, (2.0 * PI - 6.2f32 as f64) / PI, 1e-6);
}

#[test]
fn type_loss_by_hand() {
    let p = t2([1.0, 1.0, 1.0, 0.0]);
    let t = t2([1.0, 0.0, 1.0, 1.0]);
    let th = t2([0.5, 0.5, 0.5, 0.01]);
    close(type_loss(&p, &t, &th, 0.0).unwrap(), LN_2, 1e-12);
    let th = t2([0.8, 0.3, 0.6, 0.0]);
    let want = (-(0.8f32 as f64).ln() - (0.7f32 as f64).ln() - (0.6f32 as f64).ln()) / (3.0 + EPS);
    close(type_loss(&p, &t, &th, EPS).unwrap(), want, 1e-6);
}

#[test]
fn empty_positives_give_zero() {
    let z = t2([0.0; 4]);
    let r = t2([0.3, 0.1, 0.7, 0.9]);
    assert_eq!(direction_loss(&z, &r, &z, EPS).unwrap(), 0.0);
    assert_eq!(type_loss(&z, &r, &r, EPS).unwrap(), 0.0);
    assert_eq!(position_loss(&r, &r, &z, EPS).unwrap(), 0.0);
}

#[test]
fn zero_weight_and_off_mask_pixels_are_ignored() {
    let mut r = rng(41);
    let (h, w) = (9, 11);
    let p = Tensor::from_fn(h, w, 1, |_, _, _| if r.random_bool(0.3) { 1.0 } else { 0.0 });
    let wt = Tensor::from_fn(h, w, 1, |y, x, _| if (y + x) % 3 == 0 { 0.0 } else { 0.7 });
    let a = random_tensor(&mut r, h, w, 1, 0.01, 0.99);
    let b = random_tensor(&mut r, h, w, 1, -3.0, 3.0);
    let c = random_tensor(&mut r, h, w, 1, 0.01, 0.99);
    let mut a2 = a.clone();
    let mut b2 = b.clone();
    let mut c2 = c.clone();
    for y in 0..h {
        for x in 0..w {
            if wt.get(y, x, 0) == 0.0 {
                a2.set(y, x, 0, r.random_range(0.0..1.0));
            }
            if p.get(y, x, 0) == 0.0 {
                b2.set(y, x, 0, r.random_range(-3.0..3.0));
                c2.set(y, x, 0, r.random_range(0.0..1.0));
            }
        }
    }
    assert_eq!(position_loss(&p, &a, &wt, EPS).unwrap(), position_loss(&p, &a2, &wt, EPS).unwrap());
    assert_eq!(direction_loss(&p, &b, &b, EPS).unwrap(), direction_loss(&p, &b, &b2, EPS).unwrap());
    assert_eq!(type_loss(&p, &c, &c, EPS).unwrap(), type_loss(&p, &c, &c2, EPS).unwrap());
}

#[test]
fn losses_are_invariant_to_pixel_permutation() {
    let mut r = rng(42);
    let n = 60;
    let maps: Vec<Tensor> = (0..5)
        .map(|i| {
            if i == 0 {
                Tensor::from_fn(1, n, 1, |_, _, _| if r.random_bool(0.4) { 1.0 } else { 0.0 })
            } else {
                random_tensor(&mut r, 1, n, 1, 0.01, 0.99)
            }
        })
        .collect();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut r);
    let shuffled: Vec<Tensor> = maps
        .iter()
        .map(|t| Tensor::from_vec(1, n, 1, perm.iter().map(|&i| t.data()[i]).collect()).unwrap())
        .collect();
    let eval = |m: &[Tensor]| {
        [
            position_loss(&m[0], &m[1], &m[2], EPS).unwrap(),
            direction_loss(&m[0], &m[3], &m[4], EPS).unwrap(),
            type_loss(&m[0], &m[1], &m[3], EPS).unwrap(),
        ]
    };
    for (a, b) in eval(&maps).iter().zip(eval(&shuffled)) {
        close(*a, b, 1e-12);
    }
}

#[test]
fn shape_mismatches_are_rejected() {
    let a = t2([0.5; 4]);
    let b = Tensor::zeros(2, 3, 1);
    assert!(position_loss(&a, &a, &b, EPS).is_err());
    assert!(direction_loss(&a, &b, &a, EPS).is_err());
    assert!(type_loss(&Tensor::zeros(2, 2, 2), &a, &a, EPS).is_err());
}

#[test]
fn composite_weights() {
    let parts = LossParts { position: 1.0, direction: 1.0, kind: 1.0 };
    close(composite_loss(&parts, &LossWeights::default()), 1.0, 1e-12);
    let parts = LossParts { position: 0.2, direction: 0.4, kind: 0.8 };
    close(composite_loss(&parts, &LossWeights::default()), 0.85 * 0.2 + 0.1 * 0.4 + 0.05 * 0.8, 1e-15);

    let mut bad = LossWeights::default();
    bad.alpha_d = -0.1;
    assert!(bad.validate().is_err());
    let zero = LossWeights { alpha_p: 0.0, alpha_d: 0.0, alpha_t: 0.0, epsilon: EPS };
    assert!(zero.validate().is_err());
    let z = t2([0.0; 4]);
    assert!(evaluate_losses(&z, &z, &z, &z, &z, &z, &z, &zero).is_err());

    let p = t2([1.0, 0.0, 1.0, 0.0]);
    let q = t2([0.7, 0.2, 0.6, 0.1]);
    let w = t2([1.0, 0.3, 1.0, 0.3]);
    let d = t2([0.1, 0.0, -1.0, 0.0]);
    let dh = t2([0.3, 0.0, -0.5, 2.0]);
    let rec = evaluate_losses(&p, &w, &d, &p, &q, &dh, &q, &LossWeights::default()).unwrap();
    close(rec.position, position_loss(&p, &q, &w, EPS).unwrap(), 0.0);
    close(rec.direction, direction_loss(&p, &d, &dh, EPS).unwrap(), 0.0);
    close(rec.kind, type_loss(&p, &p, &q, EPS).unwrap(), 0.0);
    close(rec.total, 0.85 * rec.position + 0.1 * rec.direction + 0.05 * rec.kind, 1e-15);
}

#[test]
fn angular_difference_examples() {
    assert_eq!(angular_difference(0.0, PI), -PI);
    assert_eq!(angular_difference(PI, 0.0), -PI);
    close(angular_difference(PI - 0.1, -PI + 0.1), -0.2, 1e-12);
    close(angular_difference(0.3, 0.1), 0.2, 1e-15);
    let mut r = rng(43);
    for _ in 0..1000 {
        let (a, b) = (r.random_range(-20.0..20.0), r.random_range(-20.0..20.0));
        let phi = angular_difference(a, b);
        assert!((-PI..PI).contains(&phi));
        let k = (a - b - phi) / (2.0 * PI);
        close(k, k.round(), 1e-9);
    }
}

#[test]
fn weight_magnitude_is_flat_rms() {
    let mut store = WeightStore::new();
    assert_eq!(weight_magnitude(&store), 0.0);
    store.insert("a", WeightTensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 0.0]).unwrap()).unwrap();
    store.insert("b", WeightTensor::new(vec![2], vec![4.0, -1.0]).unwrap()).unwrap();
    close(weight_magnitude(&store), (31.0f64 / 6.0).sqrt(), 1e-15);
}
