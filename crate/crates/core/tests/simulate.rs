use hc_eqtl::simulate::{numbered_ids, simulate, synthetic_genotypes, SimConfig};
use proptest::prelude::*;

#[test]
fn same_seed_same_draw() {
    let x = synthetic_genotypes(20, 40, 3).unwrap();
    let cfg = SimConfig { n_active_snps: 4, genes_per_snp: 3, seed: 17, ..SimConfig::default() };
    let a = simulate(&x, 15, &cfg).unwrap();
    let b = simulate(&x, 15, &cfg).unwrap();
    assert_eq!(a.expression.values, b.expression.values);
    assert_eq!(a.truth.active_snp_ids, b.truth.active_snp_ids);
    let c = simulate(&x, 15, &SimConfig { seed: 18, ..cfg }).unwrap();
    assert_ne!(a.expression.values, c.expression.values);
    assert_eq!(synthetic_genotypes(20, 40, 3).unwrap().values, x.values);
}

#[test]
fn expression_is_centred_on_the_genetic_signal() {
    // Over replicates Y − XB has mean zero entrywise. Each entry has variance
    // hidden_scale · k_hidden + noise_sd², so the replicate mean has sd √(v/R).
    let x = synthetic_genotypes(12, 30, 4).unwrap();
    let (q, reps) = (8, 200);
    let cfg = SimConfig { n_active_snps: 3, genes_per_snp: 2, ..SimConfig::default() };
    let mut sum = nalgebra::DMatrix::zeros(12, q);
    for seed in 0..reps {
        let sim = simulate(&x, q, &SimConfig { seed, ..cfg }).unwrap();
        sum += &sim.expression.values - &x.values * &sim.truth.b_true.values;
    }
    let mean = sum / reps as f64;
    let v = cfg.hidden_scale * cfg.k_hidden as f64 + cfg.noise_sd.powi(2);
    let sd = (v / reps as f64).sqrt();
    let outside = mean.iter().filter(|m| m.abs() > 3.0 * sd).count();
    // 96 entries at 0.27 % each: more than two beyond 3σ would be surprising.
    assert!(outside <= 2, "{outside} entries beyond 3σ");
    assert!(mean.mean().abs() < 3.0 * sd);
}

#[test]
fn hidden_columns_share_the_factor_covariance() {
    let x = synthetic_genotypes(10, 5, 6).unwrap();
    let cfg = SimConfig { n_active_snps: 1, genes_per_snp: 1, k_hidden: 3, hidden_scale: 0.7, seed: 2, ..SimConfig::default() };
    let q = 20_000;
    let sim = simulate(&x, q, &cfg).unwrap();
    let u = &sim.hidden;
    let sample = u * u.transpose() / q as f64;
    let want = &sim.factor * sim.factor.transpose() * cfg.hidden_scale;
    assert_eq!(sim.factor.shape(), (10, 3));
    let rel = (&sample - &want).norm() / want.norm();
    assert!(rel < 0.05, "relative error {rel}");
}

#[test]
fn invalid_configurations_are_rejected() {
    let x = synthetic_genotypes(10, 5, 1).unwrap();
    let base = SimConfig::default();
    assert!(simulate(&x, 20, &SimConfig { n_active_snps: 6, ..base }).is_err());
    assert!(simulate(&x, 5, &SimConfig { n_active_snps: 2, genes_per_snp: 6, ..base }).is_err());
    assert!(simulate(&x, 20, &SimConfig { n_active_snps: 2, noise_sd: -1.0, ..base }).is_err());
    assert!(synthetic_genotypes(1, 5, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn planted_support_has_the_requested_shape(
        seed in 0u64..1000, active in 1usize..8, genes in 1usize..6, beta in -3.0f64..3.0,
    ) {
        prop_assume!(beta != 0.0);
        let x = synthetic_genotypes(8, 10, seed).unwrap();
        let cfg = SimConfig { n_active_snps: active, genes_per_snp: genes, beta, seed, ..SimConfig::default() };
        let sim = simulate(&x, 9, &cfg).unwrap();
        let b = &sim.truth.b_true.values;
        prop_assert_eq!(b.iter().filter(|v| **v != 0.0).count(), active * genes);
        prop_assert!(b.iter().all(|v| *v == 0.0 || *v == beta));
        prop_assert_eq!(sim.truth.influenced_genes.len(), active);
        for c in x.values.column_iter() {
            prop_assert!(c.iter().any(|v| *v != c[0]));
            prop_assert!(c.iter().all(|v| [0.0, 1.0, 2.0].contains(v)));
        }
    }

    #[test]
    fn numbered_ids_sort_numerically(count in 1usize..2000) {
        let ids = numbered_ids("rs", count);
        let mut sorted = ids.clone();
        sorted.sort();
        prop_assert_eq!(sorted, ids);
    }
}
