use semg::rf_env::{build_environment, EnvConfig};

#[test]
fn shadow_std_matches_configured_sigma_over_many_seeds() {
    let base = EnvConfig::default();
    let n_cells = base.n_cells();
    let seeds = 10_000u64;
    let (mut sum, mut sum_sq) = (vec![0.0; n_cells], vec![0.0; n_cells]);
    for seed in 0..seeds {
        let env = build_environment(&base.with_seed(seed)).unwrap();
        for (i, s) in env.shadow_db.iter().enumerate() {
            sum[i] += s;
            sum_sq[i] += s * s;
        }
    }
    let n = seeds as f64;
    for i in 0..n_cells {
        let mean = sum[i] / n;
        let std = (sum_sq[i] / n - mean * mean).sqrt();
        assert!((std - 6.0).abs() < 0.6, "cell {i}: std {std}");
        assert!(mean.abs() < 0.3, "cell {i}: mean {mean}");
    }
}
