//! Property tests over the numeric invariants.

use proptest::prelude::*;

use mixbit_core::netlab::{self, Act, Batch, Network, ParamVector};
use mixbit_core::pareto::{factorial, schedule_space_size};
use mixbit_core::quantizer::{fake_quant, perturbation_norm, quantize, ClipMethod, Granularity, QuantSpec, Scheme};

fn tensor_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 8..64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn minmax_fake_quant_is_idempotent(w in tensor_strategy(), bits in 2u8..=8, symmetric in any::<bool>()) {
        let scheme = if symmetric { Scheme::Symmetric } else { Scheme::Asymmetric };
        let spec = QuantSpec::new(bits, Granularity::PerTensor, scheme, ClipMethod::Minmax);
        let fq = fake_quant(&w, 1, &spec).unwrap();
        let fq2 = fake_quant(&fq, 1, &spec).unwrap();
        prop_assert_eq!(fq, fq2);
    }

    #[test]
    fn rounding_bound_inside_clip_range(w in tensor_strategy(), bits in 2u8..=8) {
        let spec = QuantSpec::new(bits, Granularity::PerTensor, Scheme::Symmetric, ClipMethod::Minmax);
        let q = quantize(&w, 1, &spec).unwrap();
        let fq = fake_quant(&w, 1, &spec).unwrap();
        for (x, y) in w.iter().zip(&fq) {
            prop_assert!((x - y).abs() <= q.scale[0] / 2.0 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn perturbation_monotone_in_bits(w in tensor_strategy()) {
        let p = |bits| perturbation_norm(&w, 1, &QuantSpec::minmax_symmetric(bits)).unwrap();
        prop_assert!(p(2) >= p(4) && p(4) >= p(8));
    }

    #[test]
    fn codes_stay_in_range(w in tensor_strategy(), bits in 2u8..=8, symmetric in any::<bool>()) {
        let scheme = if symmetric { Scheme::Symmetric } else { Scheme::Asymmetric };
        let spec = QuantSpec::new(bits, Granularity::PerTensor, scheme, ClipMethod::Minmax);
        let q = quantize(&w, 1, &spec).unwrap();
        let (lo, hi) = match scheme {
            Scheme::Symmetric => (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1),
            Scheme::Asymmetric => (0, (1i64 << bits) - 1),
        };
        prop_assert!(q.codes.iter().all(|&c| (c as i64) >= lo && (c as i64) <= hi));
        prop_assert!(q.scale.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn fubini_at_least_factorial(n in 1u64..=30) {
        prop_assert!(schedule_space_size(n) >= factorial(n));
    }

    #[test]
    fn hvp_is_linear(
        seed in 0u64..1000,
        alpha in -2.0f64..2.0,
        beta in -2.0f64..2.0,
    ) {
        let net = Network::mlp(4, &[5], 3, Act::Tanh).unwrap();
        let params = net.init_params(seed);
        let batch = Batch::new(
            vec![0.3, -0.1, 0.7, 0.2, -0.5, 0.4, 0.0, 0.9],
            vec![0, 2],
            4,
            3,
        )
        .unwrap();
        let mk = |s: u64| {
            let mut v = ParamVector::zeros(net.layout().clone());
            let mut x = s.wrapping_mul(0x9e3779b97f4a7c15) | 1;
            for e in v.values_mut() {
                x ^= x << 13;
                x ^= x >> 7;
                x ^= x << 17;
                *e = (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            }
            v
        };
        let v1 = mk(seed + 1);
        let v2 = mk(seed + 2);
        let hv1 = netlab::hvp(&net, &params, &batch, &v1).unwrap();
        let hv2 = netlab::hvp(&net, &params, &batch, &v2).unwrap();
        let mut combo = ParamVector::zeros(net.layout().clone());
        for i in 0..combo.len() {
            combo.values_mut()[i] = alpha * v1.values()[i] + beta * v2.values()[i];
        }
        let hc = netlab::hvp(&net, &params, &batch, &combo).unwrap();
        for i in 0..hc.len() {
            let expect = alpha * hv1.values()[i] + beta * hv2.values()[i];
            prop_assert!((hc.values()[i] - expect).abs() <= 1e-8 * (1.0 + expect.abs()));
        }
    }
}
