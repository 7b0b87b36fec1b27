//! Deterministic bounded minimizers on a unit box.

/// Outcome of a minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search on `[a, b]`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, xtol: f64, budget: usize) -> Minimum {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut evals = 2;
    while (b - a).abs() > xtol && evals < budget {
        if fc <= fd {
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
        evals += 1;
    }
    let (x, value) = if fc <= fd { (c, fc) } else { (d, fd) };
    Minimum {
        x: vec![x],
        value,
        evaluations: evals,
    }
}

/// Coarse grid on `[0, 1]` followed by golden section around the best node.
/// Endpoints are evaluated exactly so that boundary optima are found.
pub fn grid_golden<F: FnMut(f64) -> f64>(mut f: F, nodes: usize, xtol: f64, budget: usize) -> Minimum {
    let nodes = nodes.max(3);
    let xs: Vec<f64> = (0..nodes).map(|i| i as f64 / (nodes - 1) as f64).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let best = argmin(&vals);
    let lo = xs[best.saturating_sub(1)];
    let hi = xs[(best + 1).min(nodes - 1)];
    let mut m = golden_section(&mut f, lo, hi, xtol, budget.saturating_sub(nodes));
    m.evaluations += nodes;
    // the interior search never reaches the bracket ends
    for &edge in &[lo, hi] {
        if edge == 0.0 || edge == 1.0 {
            let v = vals[if edge == 0.0 { 0 } else { nodes - 1 }];
            if v <= m.value {
                m.x = vec![edge];
                m.value = v;
            }
        }
    }
    m
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.total_cmp(&v[best]).is_lt() {
            best = i;
        }
    }
    best
}

fn clamp_unit(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Nelder–Mead on the unit box; trial points are clamped into the box.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, start: &[f64], step: f64, xtol: f64, ftol: f64, budget: usize) -> Minimum {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..n {
        let mut p = start.to_vec();
        p[i] = if p[i] + step <= 1.0 { p[i] + step } else { p[i] - step };
        clamp_unit(&mut p);
        simplex.push(p);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
    let mut evals = n + 1;
    while evals < budget {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let size = simplex[1..]
            .iter()
            .map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let spread = (vals[n] - vals[0]).abs();
        if size < xtol && (spread <= ftol * (1.0 + vals[0].abs()) || !spread.is_finite()) {
            break;
        }

        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
        let towards = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (w - c)).collect();
            clamp_unit(&mut p);
            p
        };
        let xr = towards(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < vals[0] {
            let xe = towards(-2.0);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                vals[n] = fe;
            } else {
                simplex[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            simplex[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let p = towards(-0.5);
            let v = f(&p);
            (p, v)
        } else {
            let p = towards(0.5);
            let v = f(&p);
            (p, v)
        };
        evals += 1;
        if fc < vals[n].min(fr) {
            simplex[n] = xc;
            vals[n] = fc;
            continue;
        }
        for i in 1..=n {
            let p: Vec<f64> = simplex[0].iter().zip(&simplex[i]).map(|(b, x)| b + 0.5 * (x - b)).collect();
            vals[i] = f(&p);
            simplex[i] = p;
        }
        evals += n;
    }
    let best = argmin(&vals);
    Minimum {
        x: simplex[best].clone(),
        value: vals[best],
        evaluations: evals,
    }
}

/// Regular grid on the unit square, then Nelder–Mead from the best node.
pub fn grid_simplex<F: FnMut(&[f64]) -> f64>(mut f: F, nodes: usize, xtol: f64, budget: usize) -> Minimum {
    let nodes = nodes.max(2);
    let h = 1.0 / (nodes - 1) as f64;
    let mut best = (vec![0.0, 0.0], f64::INFINITY);
    for i in 0..nodes {
        for j in 0..nodes {
            let p = vec![i as f64 * h, j as f64 * h];
            let v = f(&p);
            if v.total_cmp(&best.1).is_lt() {
                best = (p, v);
            }
        }
    }
    let mut m = nelder_mead(&mut f, &best.0, 0.5 * h, xtol, 1e-15, budget.saturating_sub(nodes * nodes));
    m.evaluations += nodes * nodes;
    if best.1 < m.value {
        m.x = best.0;
        m.value = best.1;
    }
    m
}
