//! Small sparse linear algebra: CSR matrices, conjugate gradients and
//! BiCGSTAB with Jacobi preconditioning.

#[derive(Debug, Clone, Default)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Build from unsorted triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Csr {
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            cols.push(c);
            vals.push(v);
            last = Some((r, c));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Csr { n, row_ptr, cols, vals }
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .find(|&k| self.cols[k] == i)
                    .map_or(0.0, |k| self.vals[k])
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveInfo {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Jacobi-preconditioned CG for symmetric positive definite `a`; `x` holds
/// the initial guess. Stops at `‖r‖ ≤ tol·‖b‖`.
pub fn cg(a: &Csr, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> SolveInfo {
    let n = a.n;
    let d: Vec<f64> = a.diagonal().iter().map(|v| if *v > 0.0 { 1.0 / v } else { 1.0 }).collect();
    let mut r = vec![0.0; n];
    a.mul(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let bn = dot(b, b).sqrt().max(f64::MIN_POSITIVE);
    let mut z: Vec<f64> = r.iter().zip(&d).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let rn = dot(&r, &r).sqrt();
        if rn <= tol * bn {
            return SolveInfo { iterations: it, residual: rn / bn, converged: true };
        }
        a.mul(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return SolveInfo { iterations: it, residual: rn / bn, converged: false };
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * d[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rn = dot(&r, &r).sqrt();
    SolveInfo { iterations: max_iter, residual: rn / bn, converged: rn <= tol * bn }
}

/// Jacobi-preconditioned BiCGSTAB for general square `a`.
pub fn bicgstab(a: &Csr, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> SolveInfo {
    let n = a.n;
    let d: Vec<f64> = a.diagonal().iter().map(|v| if *v != 0.0 { 1.0 / v } else { 1.0 }).collect();
    let bn = dot(b, b).sqrt().max(f64::MIN_POSITIVE);
    let mut r = vec![0.0; n];
    a.mul(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 0..max_iter {
        let rn = dot(&r, &r).sqrt();
        if rn <= tol * bn {
            return SolveInfo { iterations: it, residual: rn / bn, converged: true };
        }
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 {
            return SolveInfo { iterations: it, residual: rn / bn, converged: false };
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * d[i];
        }
        a.mul(&y, &mut v);
        alpha = rho / dot(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if dot(&s, &s).sqrt() <= tol * bn {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return SolveInfo { iterations: it + 1, residual: dot(&s, &s).sqrt() / bn, converged: true };
        }
        for i in 0..n {
            z[i] = s[i] * d[i];
        }
        a.mul(&z, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
    }
    let rn = dot(&r, &r).sqrt();
    SolveInfo { iterations: max_iter, residual: rn / bn, converged: rn <= tol * bn }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> Csr {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        Csr::from_triplets(n, t)
    }

    #[test]
    fn cg_solves_laplacian() {
        let a = laplacian_1d(50);
        let b = vec![1.0; 50];
        let mut x = vec![0.0; 50];
        let info = cg(&a, &b, &mut x, 1e-12, 1000);
        assert!(info.converged);
        let mut ax = vec![0.0; 50];
        a.mul(&x, &mut ax);
        assert!(ax.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-9));
    }

    #[test]
    fn bicgstab_solves_nonsymmetric() {
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 3.0));
            if i > 0 {
                t.push((i, i - 1, -1.5));
            }
            if i + 1 < n {
                t.push((i, i + 1, -0.5));
            }
        }
        let a = Csr::from_triplets(n, t);
        let b: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut x = vec![0.0; n];
        assert!(bicgstab(&a, &b, &mut x, 1e-12, 1000).converged);
        let mut ax = vec![0.0; n];
        a.mul(&x, &mut ax);
        assert!(ax.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-8));
    }
}
