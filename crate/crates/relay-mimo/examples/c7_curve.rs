use relay_mimo::grouping::{self, GroupingAlgo};
use relay_mimo::scenario::{derive_seed, generate_topology, sample_channels, ScenarioConfig};
use relay_mimo::solver::{self, SolverOptions};

fn mean_se(m: usize, samples: u64, los_a: f64, los_b: f64) -> (f64, f64) {
    let mut cfg = ScenarioConfig::default();
    cfg.n = 6; cfg.k = 10; cfg.m = m; cfg.alpha = 0.1; cfg.cell_radius = 750.0;
    cfg.pl_los_a = los_a; cfg.pl_los_b = los_b;
    let (mut se_sum, mut ese_sum) = (0.0, 0.0);
    for s in 0..samples {
        let topo = generate_topology(&cfg, derive_seed(cfg.rng_seed, &[0x01, s]));
        let ch = sample_channels(&cfg, &topo, derive_seed(cfg.rng_seed, &[0x02, s]));
        let (_, gs) = grouping::build_group_set(&ch, &cfg, GroupingAlgo::Ocga).unwrap();
        let res = solver::solve_esem(&cfg, &gs, &SolverOptions::default()).unwrap();
        se_sum += res.se; ese_sum += res.ese;
    }
    (se_sum / samples as f64, ese_sum / samples as f64)
}

fn main() {
    let samples = 12;
    println!("default LOS backhaul (100.7 + 23.5 log10 d):");
    let mut prev = 0.0;
    for m in [0usize, 1, 2, 4] {
        let (se, ese) = mean_se(m, samples, 100.7, 23.5);
        let gain = if prev > 0.0 { format!("{:+.2}%", 100.0 * (se / prev - 1.0)) } else { "-".into() };
        println!("  M={m}: SE {se:.4} ({gain}) ESE {ese:.5}");
        prev = se;
    }
    println!("NLOS-grade backhaul (128.1 + 37.6 log10 d):");
    let mut prev = 0.0;
    for m in [0usize, 1, 2, 4] {
        let (se, ese) = mean_se(m, samples, 128.1, 37.6);
        let gain = if prev > 0.0 { format!("{:+.2}%", 100.0 * (se / prev - 1.0)) } else { "-".into() };
        println!("  M={m}: SE {se:.4} ({gain}) ESE {ese:.5}");
        prev = se;
    }
}
