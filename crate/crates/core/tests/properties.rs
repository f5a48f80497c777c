use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saner_core::diagnostics::{self, HybridKind};
use saner_core::optim::{self, Mode, OptimConfig, OptimizerState};
use saner_core::ParamVector;

fn component() -> impl Strategy<Value = f64> {
    prop_oneof![
        4 => -3.0..3.0f64,
        1 => Just(0.0),
        1 => Just(1.0),
        1 => Just(-1.0),
    ]
}

fn gradient_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..64).prop_flat_map(|d| (prop::collection::vec(component(), d), prop::collection::vec(component(), d)))
}

proptest! {
    #[test]
    fn mask_selects_exactly_the_shrinking_components((g_sgd, g_sam) in gradient_pair(), alpha in 0.0..2.0f64) {
        let ratio = optim::component_ratio(&g_sam, &g_sgd).unwrap();
        let mask = optim::mask_b(&ratio);
        let out = optim::saner_combine(&g_sam, &mask, alpha);
        for i in 0..g_sgd.len() {
            let in_b = g_sgd[i] != 0.0 && {
                let r = g_sam[i] / g_sgd[i];
                (0.0..1.0).contains(&r)
            };
            prop_assert_eq!(mask[i], in_b);
            let expected = if in_b { alpha * g_sam[i] } else { g_sam[i] };
            prop_assert_eq!(out[i].to_bits(), expected.to_bits());
        }
    }

    #[test]
    fn groups_partition_every_index_once((g_sgd, g_sam) in gradient_pair()) {
        let ratio = optim::component_ratio(&g_sam, &g_sgd).unwrap();
        let p = diagnostics::partition_groups(&ratio);
        let mut seen = vec![0u8; ratio.len()];
        for &i in p.set_a.iter().chain(&p.set_b).chain(&p.set_c).chain(&p.undefined) {
            seen[i] += 1;
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        for &i in &p.set_a { prop_assert!(ratio[i].unwrap() >= 1.0); }
        for &i in &p.set_b { let r = ratio[i].unwrap(); prop_assert!((0.0..1.0).contains(&r)); }
        for &i in &p.set_c { prop_assert!(ratio[i].unwrap() < 0.0); }
        for &i in &p.undefined { prop_assert_eq!(g_sgd[i], 0.0); }

        let f = diagnostics::group_fractions(&p, ratio.len()).unwrap();
        prop_assert!((f.a + f.b + f.c + f.undefined - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hybrids_substitute_exactly_one_group((g_sgd, g_sam) in gradient_pair()) {
        let ratio = optim::component_ratio(&g_sam, &g_sgd).unwrap();
        let p = diagnostics::partition_groups(&ratio);
        for (kind, set) in [(HybridKind::SgdGrA, &p.set_a), (HybridKind::SgdGrB, &p.set_b)] {
            let h = diagnostics::hybrid_gradient(&g_sgd, &g_sam, &p, kind);
            for i in 0..g_sgd.len() {
                let expected = if set.contains(&i) { g_sgd[i] } else { g_sam[i] };
                prop_assert_eq!(h[i].to_bits(), expected.to_bits());
            }
        }
    }

    #[test]
    fn scheduler_moves_linearly_between_endpoints(k in 0usize..200, target in 0.0..2.0f64, epoch in 0usize..400) {
        let a = optim::alpha_schedule(epoch, k, target);
        if k == 0 || epoch >= k {
            prop_assert_eq!(a, target);
        } else {
            let lo = target.min(1.0);
            let hi = target.max(1.0);
            prop_assert!(a >= lo - 1e-15 && a <= hi + 1e-15);
            let next = optim::alpha_schedule(epoch + 1, k, target);
            prop_assert!((next - a) * (target - 1.0) >= -1e-15, "moves toward the target");
        }
        if k > 0 {
            prop_assert_eq!(optim::alpha_schedule(0, k, target), 1.0);
        }
    }

    #[test]
    fn additivity_violations_are_reported(
        (g_clean, g_noise) in gradient_pair(),
        idx in any::<prop::sample::Index>(),
    ) {
        let mut g_sgd: Vec<f64> = g_clean.iter().zip(&g_noise).map(|(a, b)| a + b).collect();
        prop_assert!(diagnostics::dominance_sets(&g_clean, &g_noise, &g_sgd).is_ok());
        let i = idx.index(g_sgd.len());
        g_sgd[i] += 0.5;
        prop_assert!(diagnostics::dominance_sets(&g_clean, &g_noise, &g_sgd).is_err());
    }

    #[test]
    fn momentum_update_unrolls(
        grads in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 3), 1..6),
        mu in 0.0..0.99f64,
        lambda in 0.0..0.01f64,
        eta in 0.001..0.5f64,
    ) {
        let config = OptimConfig { momentum: mu, weight_decay: lambda, mode: Mode::Sgd, ..OptimConfig::default() };
        let mut params = ParamVector::from(vec![0.3, -0.2, 1.0]);
        let mut state = OptimizerState::new(3);
        let mut w = [0.3, -0.2, 1.0];
        let mut buf = [0.0; 3];
        for g in &grads {
            optim::apply_update(&mut params, g, &mut state, &config, eta).unwrap();
            for i in 0..3 {
                buf[i] = mu * buf[i] + (g[i] + lambda * w[i]);
                w[i] -= eta * buf[i];
            }
        }
        for i in 0..3 {
            prop_assert!((params[i] - w[i]).abs() < 1e-14);
        }
        prop_assert_eq!(state.iteration, grads.len() as u64);
    }
}

#[test]
fn boundary_ratios_fall_in_the_right_groups() {
    let g_sgd = [2.0, 2.0, 2.0, -2.0, 2.0];
    let g_sam = [0.0, 2.0, -1e-300, -2.0 + 1e-15, 1.999_999_999];
    let ratio = optim::component_ratio(&g_sam, &g_sgd).unwrap();
    let p = diagnostics::partition_groups(&ratio);
    assert_eq!(p.set_b, vec![0, 3, 4]);
    assert_eq!(p.set_a, vec![1]);
    assert_eq!(p.set_c, vec![2]);
}

#[derive(Default, Debug, PartialEq)]
struct BruteSets {
    s_o: Vec<usize>,
    s_c: Vec<usize>,
    s_n: Vec<usize>,
}

fn brute_force(g_clean: &[f64], g_noise: &[f64], g_sgd: &[f64]) -> BruteSets {
    let mut out = BruteSets::default();
    for i in 0..g_clean.len() {
        let opposed = g_clean[i] * g_noise[i] < 0.0;
        if !opposed {
            continue;
        }
        out.s_o.push(i);
        if g_clean[i] * g_sgd[i] > 0.0 {
            out.s_c.push(i);
        }
        if g_noise[i] * g_sgd[i] > 0.0 {
            out.s_n.push(i);
        }
    }
    out
}

#[test]
fn dominance_sets_match_brute_force_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for _ in 0..1000 {
        let d = rng.random_range(1..40);
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            match rng.random_range(0..6) {
                0 => 0.0,
                1 => rng.random_range(-1..=1) as f64,
                _ => rng.random_range(-2.0..2.0),
            }
        };
        let g_clean: Vec<f64> = (0..d).map(|_| draw(&mut rng)).collect();
        let mut g_noise: Vec<f64> = (0..d).map(|_| draw(&mut rng)).collect();
        // exact cancellations exercise the g_sgd = 0 branch
        for i in 0..d {
            if rng.random_bool(0.1) {
                g_noise[i] = -g_clean[i];
            }
        }
        let g_sgd: Vec<f64> = g_clean.iter().zip(&g_noise).map(|(a, b)| a + b).collect();
        let sets = diagnostics::dominance_sets(&g_clean, &g_noise, &g_sgd).unwrap();
        let brute = brute_force(&g_clean, &g_noise, &g_sgd);
        assert_eq!((sets.s_o.clone(), sets.s_c.clone(), sets.s_n.clone()), (brute.s_o, brute.s_c.clone(), brute.s_n.clone()));

        let set_b: Vec<usize> = (0..d).filter(|_| rng.random_bool(0.4)).collect();
        let report = diagnostics::pr_ratio(sets, &set_b);
        let frac = |s: &[usize]| {
            (!s.is_empty()).then(|| s.iter().filter(|i| set_b.contains(i)).count() as f64 / s.len() as f64)
        };
        let (pc, pn) = (frac(&brute.s_c), frac(&brute.s_n));
        assert_eq!(report.p_clean, pc);
        assert_eq!(report.p_noise, pn);
        let pr = match (pc, pn) {
            (Some(c), Some(n)) if c > 0.0 => Some(n / c),
            _ => None,
        };
        assert_eq!(report.pr, pr);
    }
}
