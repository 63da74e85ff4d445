// temporary: radial benchmark accuracy/timing probe
use onelap_core::plap::*;
use onelap_core::*;
use std::time::Instant;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(32);
    let m_load: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(4.0);
    let g = Grid::ball(3, n, 1.0).unwrap();
    println!("grid {}^3, {} domain cells, h={:.4}", n, g.n_domain(), g.spacing());
    let h = g.spacing();
    let f = ScalarField::from_fn(&g, |x| {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt().max(h / 2.0);
        m_load / r
    });
    let cfg = PlapConfig {
        delta: 1e-6,
        tol_grad: 1e-6,
        max_iters: 300,
        continuation: Some(vec![2.0, 1.5, 1.2, 1.1, 1.05]),
        ..Default::default()
    };
    let t0 = Instant::now();
    let rep = solve(&cfg, &LinearAbsorption(1.0), &f, None).unwrap();
    println!("solved in {:.1?}: converged={} iters={} grad_norm={:.2e}", t0.elapsed(), rep.converged, rep.iterations, rep.grad_norm);
    for st in &rep.stages {
        println!("  p={} iters={} resid={:.2e}", st.p, st.iterations, st.grad_norm);
    }
    // relative L2 error vs (M-N+1)/|x| on the shell 0.2 <= |x| <= 0.9
    let mut num = 0.0;
    let mut den = 0.0;
    let mut idx = vec![0usize; 3]; let mut x = vec![0.0; 3];
    for &i in g.interior_cells() {
        g.decode(i, &mut idx);
        g.cell_center(&idx, &mut x);
        let r = (x[0]*x[0]+x[1]*x[1]+x[2]*x[2]).sqrt();
        if (0.2..=0.9).contains(&r) {
            let exact = (m_load - 2.0) / r;
            let e = rep.u.get(i) - exact;
            num += e * e;
            den += exact * exact;
        }
    }
    if den > 0.0 {
        println!("rel L2 error on shell: {:.4}", (num / den).sqrt());
    }
    println!("u_max = {:.4}, u_min = {:.4}", rep.u.max_domain(), rep.u.min_domain());
}
