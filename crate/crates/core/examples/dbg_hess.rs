// temporary: finite-difference check of the Newton linearization
use onelap_core::plap::*;
use onelap_core::*;
use rand::{Rng, SeedableRng};

fn el_residual(g: &std::sync::Arc<Grid>, u: &ScalarField, p: f64, delta: f64, law: &dyn Absorption, f: &ScalarField) -> Vec<f64> {
    // independent: compute -div(|grad u|_d^{p-2} grad u) + l - f via public ops
    let gr = gradient(u);
    let n = g.len();
    let mut w = VectorField::zeros(g);
    for i in 0..n {
        if !g.in_domain(i) { continue; }
        let m = (gr.magnitude(i).powi(2) + delta * delta).sqrt();
        let a = m.powf(p - 2.0);
        for d in 0..g.dim() { w.set(d, i, a * gr.get(d, i)); }
    }
    let div = divergence(&w);
    let mut r = vec![0.0; n];
    for &i in g.interior_cells() {
        r[i] = -div.get(i) + law.eval(i, u.get(i)) - f.get(i);
    }
    r
}

fn main() {
    let g = Grid::box_domain(&[9, 9], 1.0 / 9.0).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let mut u = ScalarField::zeros(&g);
    for &i in g.interior_cells() { u.set(i, rng.gen_range(-0.5..0.5)); }
    let f = ScalarField::constant(&g, 1.0);
    let law = LinearAbsorption(1.0);
    let (p, delta) = (1.5, 1e-6);

    // direction
    let mut s = ScalarField::zeros(&g);
    for &i in g.interior_cells() { s.set(i, rng.gen_range(-1.0..1.0)); }

    let eps = 1e-7;
    let mut up = u.clone();
    let mut dn = u.clone();
    for &i in g.interior_cells() {
        up.set(i, u.get(i) + eps * s.get(i));
        dn.set(i, u.get(i) - eps * s.get(i));
    }
    let rp = el_residual(&g, &up, p, delta, &law, &f);
    let rn = el_residual(&g, &dn, p, delta, &law, &f);
    let hs_fd: Vec<f64> = rp.iter().zip(&rn).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
    let hs = debug_hessian_apply(&g, &u, &s, p, delta, &law);
    let mut worst = 0.0f64; let mut scale = 0.0f64;
    for &i in g.interior_cells() {
        worst = worst.max((hs_fd[i] - hs[i]).abs());
        scale = scale.max(hs_fd[i].abs());
    }
    println!("hessian fd check: worst {:.3e} scale {:.3e} rel {:.3e}", worst, scale, worst / scale);
}
