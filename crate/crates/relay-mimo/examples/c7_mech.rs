use relay_mimo::grouping::{self, GroupingAlgo};
use relay_mimo::scenario::{derive_seed, generate_topology, sample_channels, ScenarioConfig};
use relay_mimo::solver::{self, SolverOptions};

fn mean_se(m: usize, algo: GroupingAlgo, samples: u64) -> f64 {
    let mut cfg = ScenarioConfig::default();
    cfg.n = 6; cfg.k = 2; cfg.m = m; cfg.alpha = 0.1; cfg.cell_radius = 750.0;
    let mut se_sum = 0.0;
    for s in 0..samples {
        let topo = generate_topology(&cfg, derive_seed(cfg.rng_seed, &[0x01, s]));
        let ch = sample_channels(&cfg, &topo, derive_seed(cfg.rng_seed, &[0x02, s]));
        let (_, gs) = grouping::build_group_set(&ch, &cfg, algo).unwrap();
        se_sum += solver::solve_esem(&cfg, &gs, &SolverOptions::default()).unwrap().se;
    }
    se_sum / samples as f64
}

fn main() {
    let samples = 15;
    for (name, algo) in [("ESGA", GroupingAlgo::Esga), ("OCGA", GroupingAlgo::Ocga)] {
        let se2 = mean_se(2, algo, samples);
        let se4 = mean_se(4, algo, samples);
        println!("{name}: K=2 SE M=2 {se2:.4} -> M=4 {se4:.4} ({:+.3}%)", 100.0 * (se4 / se2 - 1.0));
    }
}
