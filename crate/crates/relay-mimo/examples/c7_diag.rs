use relay_mimo::grouping::{self, GroupingAlgo};
use relay_mimo::scenario::{derive_seed, generate_topology, sample_channels, ScenarioConfig};
use relay_mimo::solver::{self, SolverOptions};

fn main() {
    let samples = 20u64;
    let mut means = std::collections::HashMap::new();
    for m in [2usize, 4] {
        let mut cfg = ScenarioConfig::default();
        cfg.n = 6; cfg.k = 10; cfg.m = m; cfg.alpha = 0.1; cfg.cell_radius = 750.0;
        let (mut se_sum, mut ese_sum) = (0.0, 0.0);
        let mut per_sample = Vec::new();
        for s in 0..samples {
            let topo = generate_topology(&cfg, derive_seed(cfg.rng_seed, &[0x01, s]));
            let ch = sample_channels(&cfg, &topo, derive_seed(cfg.rng_seed, &[0x02, s]));
            let (_, gs) = grouping::build_group_set(&ch, &cfg, GroupingAlgo::Ocga).unwrap();
            let res = solver::solve_esem(&cfg, &gs, &SolverOptions::default()).unwrap();
            se_sum += res.se; ese_sum += res.ese;
            per_sample.push(res.se);
        }
        means.insert(m, (se_sum / samples as f64, ese_sum / samples as f64, per_sample));
    }
    let (se2, ese2, p2) = &means[&2];
    let (se4, ese4, p4) = &means[&4];
    println!("M=2: mean SE {se2:.4} ESE {ese2:.5}");
    println!("M=4: mean SE {se4:.4} ESE {ese4:.5}");
    println!("SE delta: {:+.3}%  ESE delta: {:+.1}%", 100.0*(se4/se2-1.0), 100.0*(ese4/ese2-1.0));
    let per: Vec<String> = p2.iter().zip(p4).map(|(a,b)| format!("{:+.2}%", 100.0*(b/a-1.0))).collect();
    println!("per-sample SE deltas: {per:?}");
}
