//! Reference computations written without the library's solvers.

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Exact soft-margin linear SVM in two dimensions.
///
/// For fixed `w` the hinge sum is piecewise linear in `b` with breakpoints
/// `y_i - w.x_i`, minimised between the P-th and (P+1)-th smallest (P the
/// number of positives). The remaining objective in `w` is convex and is
/// minimised by nested ternary search.
pub struct SvmReference {
    pub w: [f64; 2],
    pub b: f64,
    pub objective: f64,
}

fn best_bias(x: &[[f64; 2]], y: &[f64], w: [f64; 2], c: f64) -> (f64, f64) {
    let positives = y.iter().filter(|&&t| t > 0.0).count();
    let mut t: Vec<f64> = x.iter().zip(y).map(|(p, &yi)| yi - (w[0] * p[0] + w[1] * p[1])).collect();
    t.sort_by(f64::total_cmp);
    let b = match positives {
        0 => t[0],
        p if p == t.len() => t[p - 1],
        p => 0.5 * (t[p - 1] + t[p]),
    };
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(p, &yi)| (1.0 - yi * (w[0] * p[0] + w[1] * p[1] + b)).max(0.0))
        .sum();
    (0.5 * (w[0] * w[0] + w[1] * w[1]) + c * hinge, b)
}

fn ternary(mut lo: f64, mut hi: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    for _ in 0..90 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    0.5 * (lo + hi)
}

pub fn svm_reference(x: &[[f64; 2]], y: &[f64], c: f64) -> SvmReference {
    // 0.5 |w|^2 <= objective(w = 0) <= c n.
    let r = (2.0 * c * x.len() as f64).sqrt();
    let inner = |w0: f64| ternary(-r, r, |w1| best_bias(x, y, [w0, w1], c).0);
    let w0 = ternary(-r, r, |w0| best_bias(x, y, [w0, inner(w0)], c).0);
    let w1 = inner(w0);
    let (objective, b) = best_bias(x, y, [w0, w1], c);
    SvmReference {
        w: [w0, w1],
        b,
        objective,
    }
}

/// Pooled within-class scatter solved against the mean difference.
pub fn lda_direction(x: &[Vec<f64>], y: &[u8]) -> Vec<f64> {
    let d = x[0].len();
    let mean = |cls: u8| {
        let rows: Vec<&Vec<f64>> = x.iter().zip(y).filter(|(_, &l)| l == cls).map(|(r, _)| r).collect();
        (0..d)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
            .collect::<Vec<f64>>()
    };
    let (m0, m1) = (mean(0), mean(1));
    let mut s = vec![vec![0.0; d]; d];
    for (r, &l) in x.iter().zip(y) {
        let m = if l == 1 { &m1 } else { &m0 };
        for i in 0..d {
            for j in 0..d {
                s[i][j] += (r[i] - m[i]) * (r[j] - m[j]);
            }
        }
    }
    let diff: Vec<f64> = m1.iter().zip(&m0).map(|(a, b)| a - b).collect();
    solve(s, diff)
}

/// Laplace-approximated GP classifier with a logistic likelihood.
///
/// Newton steps use `f <- K (I + W K)^-1 (W f + grad)`, and the predictive
/// variance is `k** - k*' W (I + K W)^-1 k*`.
pub struct GpReference {
    x: Vec<Vec<f64>>,
    sf2: f64,
    ell: f64,
    grad: Vec<f64>,
    w: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl GpReference {
    fn k(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        self.sf2 * (-d2 / (2.0 * self.ell * self.ell)).exp()
    }

    pub fn fit(x: Vec<Vec<f64>>, labels: &[u8], sf2: f64, ell: f64) -> Self {
        let n = x.len();
        let t: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let mut gp = GpReference {
            x,
            sf2,
            ell,
            grad: vec![0.0; n],
            w: vec![0.0; n],
        };
        let kmat: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| gp.k(&gp.x[i], &gp.x[j])).collect()).collect();
        let mut f = vec![0.0; n];
        for _ in 0..500 {
            let pi: Vec<f64> = f.iter().map(|&v| sigmoid(v)).collect();
            let w: Vec<f64> = pi.iter().map(|p| p * (1.0 - p)).collect();
            let grad: Vec<f64> = (0..n).map(|i| (t[i] + 1.0) / 2.0 - pi[i]).collect();
            let rhs: Vec<f64> = (0..n).map(|i| w[i] * f[i] + grad[i]).collect();
            // (I + W K) a = rhs
            let m: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..n).map(|j| f64::from(u8::from(i == j)) + w[i] * kmat[i][j]).collect())
                .collect();
            let a = solve(m, rhs);
            let f_new: Vec<f64> = (0..n).map(|i| dot(&kmat[i], &a)).collect();
            let change = f_new.iter().zip(&f).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            f = f_new;
            if change < 1e-13 {
                break;
            }
        }
        let pi: Vec<f64> = f.iter().map(|&v| sigmoid(v)).collect();
        gp.w = pi.iter().map(|p| p * (1.0 - p)).collect();
        gp.grad = (0..n).map(|i| (t[i] + 1.0) / 2.0 - pi[i]).collect();
        gp
    }

    pub fn probability(&self, q: &[f64]) -> f64 {
        let n = self.x.len();
        let ks: Vec<f64> = self.x.iter().map(|xi| self.k(xi, q)).collect();
        let mean = dot(&ks, &self.grad);
        let kmat: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| self.k(&self.x[i], &self.x[j])).collect()).collect();
        // (I + K W) z = k*
        let m: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| f64::from(u8::from(i == j)) + kmat[i][j] * self.w[j]).collect())
            .collect();
        let z = solve(m, ks.clone());
        let var = self.sf2 - (0..n).map(|i| ks[i] * self.w[i] * z[i]).sum::<f64>();
        sigmoid(mean / (1.0 + std::f64::consts::PI * var / 8.0).sqrt())
    }
}

/// Binomial probability that a strict majority of `m` independent voters
/// with accuracy `p` is correct.
pub fn majority_accuracy(m: u64, p: f64) -> f64 {
    let choose = |n: u64, k: u64| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    (m / 2 + 1..=m)
        .map(|k| choose(m, k) * p.powi(k as i32) * (1.0 - p).powi((m - k) as i32))
        .sum()
}
