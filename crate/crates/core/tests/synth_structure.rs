use adashare_core::data::Targets;
use adashare_core::synth::{generate_synthetic, SynthBenchConfig, SynthKind};

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn first_column(t: &Targets) -> Vec<f64> {
    match t {
        Targets::Dense(t) => (0..t.shape()[0]).map(|r| t.row(r)[0]).collect(),
        Targets::Classes { .. } => panic!("dense targets expected"),
    }
}

#[test]
fn shared_family_targets_correlate_more_than_independent_ones() {
    for seed in 0..5 {
        let mut cfg = SynthBenchConfig {
            n_train: 10_000,
            n_val: 10,
            n_test: 10,
            seed,
            ..SynthBenchConfig::preset_default()
        };
        for t in &mut cfg.tasks {
            t.kind = SynthKind::Regression;
        }
        let d = generate_synthetic(&cfg).unwrap();
        let a = first_column(&d.train.targets[0]);
        let b = first_column(&d.train.targets[1]);
        let c = first_column(&d.train.targets[2]);
        let (ab, ac) = (pearson(&a, &b).abs(), pearson(&a, &c).abs());
        assert!(ab > ac, "seed {seed}: |corr(A,B)| = {ab}, |corr(A,C)| = {ac}");
    }
}
