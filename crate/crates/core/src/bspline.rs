//! Cubic B-spline bases on an interval with up to second derivatives.
//!
//! Two boundary treatments:
//! - `ClampedTrimmed` — clamped (open) knot vector with the first and last
//!   basis functions dropped, so every retained function vanishes at both
//!   endpoints while keeping full approximation power one knot inside. Used
//!   for the time direction, where test functions must vanish at t ∈ {0, T}.
//! - `Interior` — uniformly extended knots with only the functions fully
//!   supported inside [a, b] retained; these are C² on all of ℝ and vanish
//!   with both derivatives at the endpoints. Used for space, where the
//!   retained span reproduces cubics on the inner region [g₃, g_{m-4}].

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SplineKind {
    ClampedTrimmed,
    Interior,
}

#[derive(Clone, Debug)]
pub struct CubicSplineBasis {
    pub a: f64,
    pub b: f64,
    pub kind: SplineKind,
    grid_n: usize,
    knots: Vec<f64>,
    keep_lo: usize,
    keep_hi: usize,
}

/// The ≤ 4 retained basis functions active at a point: `val[i]`, `d1[i]`,
/// `d2[i]` belong to retained index `start + i`.
#[derive(Clone, Copy, Debug)]
pub struct ActiveSpan {
    pub start: usize,
    pub count: usize,
    pub val: [f64; 4],
    pub d1: [f64; 4],
    pub d2: [f64; 4],
}

impl CubicSplineBasis {
    /// Clamped basis on [a, b] with `n_basis` retained functions
    /// (`n_basis` uniform grid points, first/last clamped spline dropped).
    pub fn clamped_trimmed(a: f64, b: f64, n_basis: usize) -> Self {
        let m = n_basis.max(4);
        let mut knots = Vec::with_capacity(m + 6);
        let h = (b - a) / (m - 1) as f64;
        for _ in 0..4 {
            knots.push(a);
        }
        for i in 1..m - 1 {
            knots.push(a + h * i as f64);
        }
        for _ in 0..4 {
            knots.push(b);
        }
        CubicSplineBasis {
            a,
            b,
            kind: SplineKind::ClampedTrimmed,
            grid_n: m,
            knots,
            keep_lo: 1,
            keep_hi: m,
        }
    }

    /// Interior basis on [a, b] from `n_knots` uniform grid points;
    /// retains the `n_knots − 4` functions supported inside [a, b].
    pub fn interior(a: f64, b: f64, n_knots: usize) -> Self {
        let m = n_knots.max(5);
        let h = (b - a) / (m - 1) as f64;
        let mut knots = Vec::with_capacity(m + 6);
        for i in 0..m + 6 {
            knots.push(a + h * (i as f64 - 3.0));
        }
        CubicSplineBasis {
            a,
            b,
            kind: SplineKind::Interior,
            grid_n: m,
            knots,
            keep_lo: 3,
            keep_hi: m - 2,
        }
    }

    /// Number of retained basis functions.
    pub fn len(&self) -> usize {
        self.keep_hi - self.keep_lo + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid spacing.
    pub fn h(&self) -> f64 {
        (self.b - self.a) / (self.grid_n - 1) as f64
    }

    pub fn grid_points(&self) -> Vec<f64> {
        (0..self.grid_n)
            .map(|i| self.a + self.h() * i as f64)
            .collect()
    }

    /// Inner region on which the retained `Interior` span reproduces cubics.
    pub fn full_power_region(&self) -> (f64, f64) {
        match self.kind {
            SplineKind::ClampedTrimmed => (self.a, self.b),
            SplineKind::Interior => (self.a + 3.0 * self.h(), self.b - 3.0 * self.h()),
        }
    }

    /// Same interval, doubled resolution (old span ⊂ new span).
    pub fn refine_double(&self) -> Self {
        match self.kind {
            SplineKind::ClampedTrimmed => {
                Self::clamped_trimmed(self.a, self.b, 2 * self.grid_n - 1)
            }
            SplineKind::Interior => Self::interior(self.a, self.b, 2 * self.grid_n - 1),
        }
    }

    fn span_of(&self, u: f64) -> usize {
        let i = ((u - self.a) / self.h()).floor() as i64;
        let i = i.clamp(0, self.grid_n as i64 - 2) as usize;
        3 + i
    }

    /// Values and derivatives of all (untrimmed) functions active at u:
    /// full indices k−3..k for the returned span k.
    fn eval_full(&self, u: f64) -> (usize, [f64; 4], [f64; 4], [f64; 4]) {
        let k = self.span_of(u);
        let kn = &self.knots;
        // triangular Cox-de Boor table: tri[p][i] = N_{k-p+i, p}(u)
        let mut tri = [[0.0f64; 4]; 4];
        tri[0][0] = 1.0;
        for p in 1..=3usize {
            for i in 0..=p {
                let j = k + i - p;
                let mut v = 0.0;
                if i > 0 {
                    let d = kn[j + p] - kn[j];
                    if d > 0.0 {
                        v += (u - kn[j]) / d * tri[p - 1][i - 1];
                    }
                }
                if i < p {
                    let d = kn[j + p + 1] - kn[j + 1];
                    if d > 0.0 {
                        v += (kn[j + p + 1] - u) / d * tri[p - 1][i];
                    }
                }
                tri[p][i] = v;
            }
        }
        // row accessor by full basis index
        let row = |p: usize, j: usize| -> f64 {
            let i = j as i64 - k as i64 + p as i64;
            if (0..=p as i64).contains(&i) {
                tri[p][i as usize]
            } else {
                0.0
            }
        };
        let mut val = [0.0; 4];
        let mut d1 = [0.0; 4];
        let mut d2 = [0.0; 4];
        for (o, jn) in (k - 3..=k).enumerate() {
            let j = jn;
            val[o] = tri[3][o];
            // N'_{j,3} = 3 [ N_{j,2}/(τ_{j+3}−τ_j) − N_{j+1,2}/(τ_{j+4}−τ_{j+1}) ]
            let nd2 = |jj: usize| -> f64 {
                // N'_{jj,2} = 2 [ N_{jj,1}/(τ_{jj+2}−τ_jj) − N_{jj+1,1}/(τ_{jj+3}−τ_{jj+1}) ]
                let t1 = {
                    let d = kn[jj + 2] - kn[jj];
                    if d > 0.0 {
                        row(1, jj) / d
                    } else {
                        0.0
                    }
                };
                let t2 = {
                    let d = kn[jj + 3] - kn[jj + 1];
                    if d > 0.0 {
                        row(1, jj + 1) / d
                    } else {
                        0.0
                    }
                };
                2.0 * (t1 - t2)
            };
            let da = kn[j + 3] - kn[j];
            let db = kn[j + 4] - kn[j + 1];
            let f1 = if da > 0.0 { row(2, j) / da } else { 0.0 };
            let f2 = if db > 0.0 { row(2, j + 1) / db } else { 0.0 };
            d1[o] = 3.0 * (f1 - f2);
            let g1 = if da > 0.0 { nd2(j) / da } else { 0.0 };
            let g2 = if db > 0.0 { nd2(j + 1) / db } else { 0.0 };
            d2[o] = 3.0 * (g1 - g2);
        }
        (k, val, d1, d2)
    }

    /// Retained active functions at u; `None` strictly outside [a, b]. At
    /// the endpoints the retained values are exact zeros (the recurrence
    /// produces them), while one-sided derivatives of the clamped kind are
    /// kept — the generator legitimately sees ∂_t w ≠ 0 at t ∈ {0, T}.
    pub fn eval(&self, u: f64) -> Option<ActiveSpan> {
        if !(u >= self.a && u <= self.b) {
            return None;
        }
        let (k, val, d1, d2) = self.eval_full(u);
        let lo_full = (k - 3).max(self.keep_lo);
        let hi_full = k.min(self.keep_hi);
        if lo_full > hi_full {
            return None;
        }
        let mut out = ActiveSpan {
            start: lo_full - self.keep_lo,
            count: hi_full - lo_full + 1,
            val: [0.0; 4],
            d1: [0.0; 4],
            d2: [0.0; 4],
        };
        for (slot, j) in (lo_full..=hi_full).enumerate() {
            let o = j - (k - 3);
            out.val[slot] = val[o];
            out.d1[slot] = d1[o];
            out.d2[slot] = d2[o];
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_retained(basis: &CubicSplineBasis, u: f64, theta: &[f64]) -> (f64, f64, f64) {
        match basis.eval(u) {
            None => (0.0, 0.0, 0.0),
            Some(sp) => {
                let mut v = 0.0;
                let mut d = 0.0;
                let mut dd = 0.0;
                for i in 0..sp.count {
                    v += theta[sp.start + i] * sp.val[i];
                    d += theta[sp.start + i] * sp.d1[i];
                    dd += theta[sp.start + i] * sp.d2[i];
                }
                (v, d, dd)
            }
        }
    }

    #[test]
    fn clamped_full_partition_of_unity() {
        let b = CubicSplineBasis::clamped_trimmed(0.0, 1.0, 9);
        for k in 1..40 {
            let u = k as f64 / 40.0;
            let (_, val, d1, _) = b.eval_full(u);
            let s: f64 = val.iter().sum();
            let sd: f64 = d1.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "u={u}: sum {s}");
            assert!(sd.abs() < 1e-9, "u={u}: deriv sum {sd}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for basis in [
            CubicSplineBasis::clamped_trimmed(0.0, 2.0, 8),
            CubicSplineBasis::interior(-1.0, 3.0, 11),
        ] {
            let n = basis.len();
            let theta: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 5) as f64 - 2.0).collect();
            let h = 1e-6;
            for k in 1..60 {
                let u = basis.a + (basis.b - basis.a) * k as f64 / 60.0;
                if (u - basis.a).abs() < 0.01 || (u - basis.b).abs() < 0.01 {
                    continue;
                }
                let (_, d, dd) = sum_retained(&basis, u, &theta);
                let (vp, dp, _) = sum_retained(&basis, u + h, &theta);
                let (vm, dm, _) = sum_retained(&basis, u - h, &theta);
                let fd1 = (vp - vm) / (2.0 * h);
                let fd2 = (dp - dm) / (2.0 * h);
                assert!((d - fd1).abs() < 1e-5 * (1.0 + d.abs()), "d1 at u={u}");
                assert!((dd - fd2).abs() < 1e-4 * (1.0 + dd.abs()), "d2 at u={u}");
            }
        }
    }

    #[test]
    fn retained_vanish_at_endpoints() {
        let clamped = CubicSplineBasis::clamped_trimmed(0.0, 1.0, 12);
        let interior = CubicSplineBasis::interior(0.0, 1.0, 16);
        for basis in [&clamped, &interior] {
            assert!(basis.eval(-0.2).is_none());
            assert!(basis.eval(1.2).is_none());
            // retained VALUES are exact zeros at both endpoints
            for u in [0.0, 1.0] {
                if let Some(sp) = basis.eval(u) {
                    for i in 0..sp.count {
                        assert_eq!(sp.val[i], 0.0, "u={u}");
                    }
                }
            }
        }
        // the interior kind also has vanishing derivatives at the endpoints
        for u in [0.0, 1.0] {
            if let Some(sp) = interior.eval(u) {
                for i in 0..sp.count {
                    assert_eq!(sp.d1[i], 0.0, "u={u}");
                    assert_eq!(sp.d2[i], 0.0, "u={u}");
                }
            }
        }
        // the clamped kind keeps a one-sided time derivative at the boundary
        let sp0 = clamped.eval(0.0).unwrap();
        assert!(sp0.d1.iter().any(|d| d.abs() > 1.0));
    }

    #[test]
    fn interior_count_and_smoothness() {
        let b = CubicSplineBasis::interior(0.0, 1.0, 16);
        assert_eq!(b.len(), 12);
        let theta: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        // C² across interior knots
        for g in b.grid_points().iter().skip(1).take(13) {
            let e = 1e-9;
            let (vl, dl, ddl) = sum_retained(&b, g - e, &theta);
            let (vr, dr, ddr) = sum_retained(&b, g + e, &theta);
            assert!((vl - vr).abs() < 1e-7);
            assert!((dl - dr).abs() < 1e-5);
            assert!((ddl - ddr).abs() < 1e-3);
        }
    }

    #[test]
    fn interior_reproduces_linear_on_inner_region() {
        // Fit θ by collocation at Greville-like points, then check u ↦ u on
        // the full-power region.
        let b = CubicSplineBasis::interior(0.0, 1.0, 16);
        let n = b.len();
        // Greville abscissae of retained functions: mean of 3 interior knots
        let mut theta = vec![0.0; n];
        for (r, t) in theta.iter_mut().enumerate() {
            let j = r + 3; // full index
            *t = (b.knots[j + 1] + b.knots[j + 2] + b.knots[j + 3]) / 3.0;
        }
        let (lo, hi) = b.full_power_region();
        for k in 0..=50 {
            let u = lo + (hi - lo) * k as f64 / 50.0;
            let (v, d, _) = sum_retained(&b, u.clamp(lo + 1e-12, hi - 1e-12), &theta);
            assert!((v - u).abs() < 1e-10, "u={u}, v={v}");
            assert!((d - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn clamped_len_matches_request() {
        let b = CubicSplineBasis::clamped_trimmed(0.0, 1.0, 12);
        assert_eq!(b.len(), 12);
    }

    #[test]
    fn refine_double_preserves_interval() {
        let b = CubicSplineBasis::interior(0.0, 1.0, 9);
        let f = b.refine_double();
        assert_eq!(f.grid_n, 17);
        assert_eq!(f.a, 0.0);
        assert_eq!(f.b, 1.0);
    }
}
