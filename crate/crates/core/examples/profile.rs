use std::time::Instant;
use orbitmin::oracle::{brute_solve, random_instance, DEFAULT_BUDGET};
use orbitmin::solver::solve;
use orbitmin::structures::{henson_k3_free, hypergraph_3, random_graph};

fn main() {
    for g in [random_graph(), henson_k3_free(), hypergraph_3()] {
        let t0 = Instant::now();
        for seed in 0..100u64 {
            let n_vars = 4 + (seed % 3) as usize;
            let i = random_instance(&g, n_vars, 2 + (seed % 6) as usize, seed);
            let _ = solve(&g, &i, 3).unwrap();
            let _ = brute_solve(&i, &g, DEFAULT_BUDGET).unwrap();
        }
        println!("{}: 100 instances solve+brute in {:.2}s", g.name(), t0.elapsed().as_secs_f64());
    }
}
