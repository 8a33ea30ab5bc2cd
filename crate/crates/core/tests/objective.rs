//! The poisoned loss reduces to cross entropy at β = 0 and is affine in β.

use basinscope::nn::{Activation, Batch, Matrix, MlpArch, ParamVector};
use basinscope::objective::{cross_entropy, poisoned_loss, reverse_cross_entropy};
use basinscope::rng::Rng;

fn random_batch(rng: &mut Rng, n: usize, dim: usize, classes: usize) -> Batch {
    let data = (0..n * dim).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
    let labels = (0..n).map(|_| rng.below(classes)).collect();
    Batch::new(Matrix::new(n, dim, data).unwrap(), labels).unwrap()
}

struct Case {
    arch: MlpArch,
    params: ParamVector,
    train: Batch,
    poison: Batch,
}

fn random_case(rng: &mut Rng) -> Case {
    let mut widths = vec![1 + rng.below(4)];
    for _ in 0..1 + rng.below(3) {
        widths.push(1 + rng.below(10));
    }
    widths.push(2 + rng.below(3));
    let arch = MlpArch::new(widths, Activation::Tanh).unwrap();
    let scale = rng.uniform_in(0.1, 3.0);
    let params = ParamVector::new((0..arch.param_count()).map(|_| scale * rng.gaussian()).collect());
    let (n_train, n_poison) = (1 + rng.below(20), 1 + rng.below(20));
    let train = random_batch(rng, n_train, arch.input_dim(), arch.num_classes());
    let poison = random_batch(rng, n_poison, arch.input_dim(), arch.num_classes());
    Case {
        arch,
        params,
        train,
        poison,
    }
}

#[test]
fn beta_zero_is_cross_entropy_bit_for_bit() {
    let mut rng = Rng::new(99);
    for _ in 0..1000 {
        let c = random_case(&mut rng);
        let poisoned = poisoned_loss(&c.arch, &c.params, &c.train, &c.poison, 0.0).unwrap();
        let clean = cross_entropy(&c.arch, &c.params, &c.train).unwrap();
        assert_eq!(poisoned.to_bits(), clean.to_bits());
    }
}

#[test]
fn affine_in_beta() {
    let mut rng = Rng::new(5);
    for _ in 0..200 {
        let c = random_case(&mut rng);
        let ce = cross_entropy(&c.arch, &c.params, &c.train).unwrap();
        let rce = reverse_cross_entropy(&c.arch, &c.params, &c.poison).unwrap();
        for beta in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let got = poisoned_loss(&c.arch, &c.params, &c.train, &c.poison, beta).unwrap();
            let want = (1.0 - beta) * ce + beta * rce;
            assert!(
                (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                "beta {beta}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn beta_one_ignores_the_training_set() {
    let mut rng = Rng::new(8);
    let c = random_case(&mut rng);
    let other = random_batch(&mut rng, 7, c.arch.input_dim(), c.arch.num_classes());
    let a = poisoned_loss(&c.arch, &c.params, &c.train, &c.poison, 1.0).unwrap();
    let b = poisoned_loss(&c.arch, &c.params, &other, &c.poison, 1.0).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, reverse_cross_entropy(&c.arch, &c.params, &c.poison).unwrap());
}
