//! Invariants over random inputs.

use basinscope::landscape::{sample_direction, Normalization};
use basinscope::nn::{forward, init_params, Activation, Matrix, MlpArch, ParamVector};
use basinscope::special::log_sum_exp;
use proptest::prelude::*;

fn arch_strategy() -> impl Strategy<Value = MlpArch> {
    (1usize..4, prop::collection::vec(1usize..8, 1..4), 2usize..4).prop_map(|(input, hidden, classes)| {
        let mut widths = vec![input];
        widths.extend(hidden);
        widths.push(classes);
        MlpArch::new(widths, Activation::Tanh).unwrap()
    })
}

proptest! {
    #[test]
    fn probabilities_sum_to_one(arch in arch_strategy(), seed in any::<u64>(), x in -5.0f64..5.0) {
        let params = init_params(&arch, seed);
        let n = 3;
        let inputs = Matrix::new(n, arch.input_dim(), vec![x; n * arch.input_dim()]).unwrap();
        let probs = forward(&arch, &params, &inputs).unwrap();
        for r in 0..n {
            let row = probs.row(r);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flatten_inverts_unflatten(arch in arch_strategy(), seed in any::<u64>()) {
        let params = init_params(&arch, seed);
        let layers = params.unflatten(&arch).unwrap();
        prop_assert_eq!(ParamVector::flatten(&layers), params);
    }

    #[test]
    fn filter_directions_match_block_norms(arch in arch_strategy(), seed in any::<u64>(), index in any::<u64>()) {
        // Glorot init leaves biases at zero; shift them so no block is empty.
        let mut params = init_params(&arch, seed);
        params.as_mut_slice().iter_mut().for_each(|p| *p += 0.01);
        let d = sample_direction(params.as_slice(), Some(&arch), seed, index, Normalization::Filter).unwrap();
        for span in arch.layers() {
            for neuron in 0..span.fan_out {
                let norm = |v: &[f64]| {
                    (v[span.weight_row(neuron)].iter().map(|x| x * x).sum::<f64>() + v[span.bias(neuron)].powi(2)).sqrt()
                };
                let (a, b) = (norm(&d.values), norm(params.as_slice()));
                prop_assert!((a - b).abs() <= 1e-12 * b);
            }
        }
    }

    #[test]
    fn log_sum_exp_is_shift_equivariant(xs in prop::collection::vec(-700.0f64..700.0, 1..20), c in -300.0f64..300.0) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let (a, b) = (log_sum_exp(&xs) + c, log_sum_exp(&shifted));
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(log_sum_exp(&xs) >= max);
        prop_assert!(log_sum_exp(&xs) <= max + (xs.len() as f64).ln() + 1e-12);
    }
}
