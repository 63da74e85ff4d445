// temporary: radial error profile by radius bin
use onelap_core::plap::*;
use onelap_core::*;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(32);
    let g = Grid::ball(3, n, 1.0).unwrap();
    let h = g.spacing();
    let f = ScalarField::from_fn(&g, |x| {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt().max(h / 2.0);
        4.0 / r
    });
    let cfg = PlapConfig {
        delta: 1e-6, tol_grad: 1e-6, max_iters: 300,
        continuation: Some(vec![2.0, 1.5, 1.2, 1.1, 1.05]),
        ..Default::default()
    };
    let rep = solve(&cfg, &LinearAbsorption(1.0), &f, None).unwrap();
    let mut idx = vec![0usize; 3]; let mut x = vec![0.0; 3];
    let bins = 18;
    let mut sum = vec![0.0; bins]; let mut cnt = vec![0usize; bins]; let mut esum = vec![0.0; bins];
    for &i in g.interior_cells() {
        g.decode(i, &mut idx);
        g.cell_center(&idx, &mut x);
        let r = (x[0]*x[0]+x[1]*x[1]+x[2]*x[2]).sqrt();
        let b = ((r / 1.0) * bins as f64) as usize;
        if b < bins {
            sum[b] += rep.u.get(i);
            esum[b] += rep.u.get(i) - 2.0 / r;
            cnt[b] += 1;
        }
    }
    for b in 0..bins {
        if cnt[b] > 0 {
            let rmid = (b as f64 + 0.5) / bins as f64;
            println!("r={:.3} mean_u={:8.3} exact={:8.3} mean_err={:+.3}", rmid, sum[b]/cnt[b] as f64, 2.0/rmid, esum[b]/cnt[b] as f64);
        }
    }
}
