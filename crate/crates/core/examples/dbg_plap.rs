// temporary debug scaffold
use onelap_core::plap::*;
use onelap_core::*;
use rand::{Rng, SeedableRng};

fn main() {
    let g = Grid::box_domain(&[17, 17], 1.0 / 17.0).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    let mut f1 = ScalarField::zeros(&g);
    for i in 0..g.len() {
        if g.in_domain(i) {
            f1.set(i, rng.gen_range(-1.0..1.0));
        }
    }
    let cfg = PlapConfig { p: 1.05, delta: 1e-6, tol_grad: 1e-11, ..Default::default() };
    let rep = solve(&cfg, &LinearAbsorption(1.0), &f1, None).unwrap();
    println!("converged={} iters={} grad_norm={:.3e}", rep.converged, rep.iterations, rep.grad_norm);
}
