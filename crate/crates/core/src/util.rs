//! Small numeric helpers shared across the solvers.

/// Chunked pairwise summation. Bounds rounding growth to O(log n) while
/// keeping the result independent of how callers might batch the input.
pub fn sum(values: &[f64]) -> f64 {
    const CHUNK: usize = 1024;
    if values.len() <= CHUNK {
        return values.iter().sum();
    }
    let partials: Vec<f64> = values.chunks(CHUNK).map(|c| c.iter().sum()).collect();
    sum(&partials)
}

/// Dot product with the same chunked accumulation as [`sum`].
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    const CHUNK: usize = 1024;
    let partials: Vec<f64> = a
        .chunks(CHUNK)
        .zip(b.chunks(CHUNK))
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| x * y).sum())
        .collect();
    sum(&partials)
}

/// Gamma function at integer or half-integer arguments, by the recursion
/// from Gamma(1/2) = sqrt(pi) and Gamma(1) = 1. Exact for unit-ball volumes.
pub fn gamma_half(two_x: u32) -> f64 {
    // argument is two_x / 2
    assert!(two_x >= 1);
    if two_x == 1 {
        return std::f64::consts::PI.sqrt();
    }
    if two_x == 2 {
        return 1.0;
    }
    (two_x as f64 / 2.0 - 1.0) * gamma_half(two_x - 2)
}

/// Volume of the unit ball in R^n: pi^{n/2} / Gamma(n/2 + 1).
pub fn unit_ball_volume(n: usize) -> f64 {
    std::f64::consts::PI.powf(n as f64 / 2.0) / gamma_half(n as u32 + 2)
}

/// Adaptive Simpson quadrature of `f` on [a, b] to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
            + rec(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, m, fm, whole, tol, 40)
}

/// Golden-section search for the maximum of a unimodal `f` on [a, b].
/// Returns (argmax, max).
pub fn golden_max(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + a.abs() + b.abs()) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Run independent closures on up to `threads` worker threads, returning
/// results in task order. `threads` <= 1 runs inline.
pub fn run_tasks<T, F>(threads: usize, tasks: Vec<F>) -> Vec<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    if threads <= 1 || tasks.len() <= 1 {
        return tasks.into_iter().map(|t| t()).collect();
    }
    let n = tasks.len();
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let jobs: std::sync::Mutex<Vec<(usize, F)>> =
        std::sync::Mutex::new(tasks.into_iter().enumerate().rev().collect());
    let slots_ref = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..threads.min(n) {
            scope.spawn(|| loop {
                let job = jobs.lock().unwrap().pop();
                match job {
                    Some((i, task)) => {
                        let out = task();
                        slots_ref.lock().unwrap()[i] = Some(out);
                    }
                    None => break,
                }
            });
        }
    });
    slots.into_iter().map(|s| s.unwrap()).collect()
}

/// Effective worker count: the ONELAP_THREADS environment variable caps the
/// machine's available parallelism.
pub fn thread_cap() -> usize {
    let avail = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match std::env::var("ONELAP_THREADS") {
        Ok(s) => s.trim().parse::<usize>().map(|n| n.clamp(1, avail)).unwrap_or(avail),
        Err(_) => avail,
    }
}
