//! Interpolating cubic splines through the track centerline, parametrized by
//! cumulative chord length. Closed tracks use periodic end conditions, open
//! tracks natural ones.

/// Solves a tridiagonal system in place (Thomas algorithm).
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = diag.to_vec();
    c[0] = sup.first().copied().unwrap_or(0.0) / d[0];
    rhs[0] /= d[0];
    for i in 1..n {
        let m = d[i] - sub[i - 1] * c[i - 1];
        d[i] = m;
        if i < n - 1 {
            c[i] = sup[i] / m;
        }
        rhs[i] = (rhs[i] - sub[i - 1] * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Second derivatives at the knots of a periodic cubic spline.
fn periodic_moments(h: &[f64], values: &[f64]) -> Vec<f64> {
    // knots 0..n with value[n] == value[0]; unknowns M_0..M_{n-1}
    let n = h.len();
    let slope = |i: usize| (values[(i + 1) % n] - values[i]) / h[i];
    let rhs: Vec<f64> = (0..n)
        .map(|i| {
            let prev = (i + n - 1) % n;
            6.0 * (slope(i) - slope(prev))
        })
        .collect();
    let diag: Vec<f64> = (0..n).map(|i| 2.0 * (h[(i + n - 1) % n] + h[i])).collect();
    // Sherman-Morrison on the cyclic tridiagonal system.
    let corner_low = h[n - 1]; // A[0][n-1]
    let corner_high = h[n - 1]; // A[n-1][0]
    let gamma = -diag[0];
    let mut b = diag.clone();
    b[0] -= gamma;
    b[n - 1] -= corner_high * corner_low / gamma;
    let sub: Vec<f64> = (0..n - 1).map(|i| h[i]).collect();
    let sup = sub.clone();
    let mut x = rhs;
    solve_tridiagonal(&sub, &b, &sup, &mut x);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = corner_high;
    solve_tridiagonal(&sub, &b, &sup, &mut u);
    let factor = (x[0] + corner_low * x[n - 1] / gamma) / (1.0 + u[0] + corner_low * u[n - 1] / gamma);
    x.iter().zip(&u).map(|(xi, ui)| xi - factor * ui).collect()
}

fn natural_moments(h: &[f64], values: &[f64]) -> Vec<f64> {
    let n = h.len(); // segments; knots 0..=n
    let mut m = vec![0.0; n + 1];
    if n < 2 {
        return m;
    }
    let mut rhs: Vec<f64> = (1..n)
        .map(|i| 6.0 * ((values[i + 1] - values[i]) / h[i] - (values[i] - values[i - 1]) / h[i - 1]))
        .collect();
    let diag: Vec<f64> = (1..n).map(|i| 2.0 * (h[i - 1] + h[i])).collect();
    let off: Vec<f64> = (1..n - 1).map(|i| h[i]).collect();
    solve_tridiagonal(&off, &diag, &off, &mut rhs);
    m[1..n].copy_from_slice(&rhs);
    m
}

#[derive(Debug, Clone)]
struct Axis {
    values: Vec<f64>,
    moments: Vec<f64>,
}

/// Planar cubic spline `p(u)` with `u` in `[0, length]`.
#[derive(Debug, Clone)]
pub struct CenterlineSpline {
    knots: Vec<f64>,
    steps: Vec<f64>,
    x: Axis,
    y: Axis,
    closed: bool,
}

impl CenterlineSpline {
    pub fn new(points: &[[f64; 2]], closed: bool) -> Self {
        let mut pts: Vec<[f64; 2]> = points.to_vec();
        if closed {
            pts.push(points[0]);
        }
        let steps: Vec<f64> = pts
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .collect();
        let mut knots = Vec::with_capacity(pts.len());
        knots.push(0.0);
        for h in &steps {
            knots.push(knots.last().unwrap() + h);
        }
        let xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p[1]).collect();
        let moments = |v: &[f64]| {
            if closed {
                let mut m = periodic_moments(&steps, &v[..v.len() - 1]);
                m.push(m[0]);
                m
            } else {
                natural_moments(&steps, v)
            }
        };
        Self {
            x: Axis {
                moments: moments(&xs),
                values: xs,
            },
            y: Axis {
                moments: moments(&ys),
                values: ys,
            },
            knots,
            steps,
            closed,
        }
    }

    pub fn length(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    fn locate(&self, u: f64) -> (usize, f64) {
        let u = if self.closed {
            u.rem_euclid(self.length())
        } else {
            u.clamp(0.0, self.length())
        };
        let seg = match self.knots.binary_search_by(|k| k.partial_cmp(&u).unwrap()) {
            Ok(i) => i.min(self.steps.len() - 1),
            Err(i) => (i - 1).min(self.steps.len() - 1),
        };
        (seg, u - self.knots[seg])
    }

    fn eval_axis(&self, axis: &Axis, seg: usize, t: f64) -> (f64, f64) {
        let h = self.steps[seg];
        let (m0, m1) = (axis.moments[seg], axis.moments[seg + 1]);
        let (y0, y1) = (axis.values[seg], axis.values[seg + 1]);
        let a = h - t;
        let value = m0 * a.powi(3) / (6.0 * h)
            + m1 * t.powi(3) / (6.0 * h)
            + (y0 / h - m0 * h / 6.0) * a
            + (y1 / h - m1 * h / 6.0) * t;
        let deriv =
            -m0 * a * a / (2.0 * h) + m1 * t * t / (2.0 * h) - (y0 / h - m0 * h / 6.0) + (y1 / h - m1 * h / 6.0);
        (value, deriv)
    }

    /// Position and tangent direction at parameter `u`.
    pub fn eval(&self, u: f64) -> ([f64; 2], [f64; 2]) {
        let (seg, t) = self.locate(u);
        let (x, dx) = self.eval_axis(&self.x, seg, t);
        let (y, dy) = self.eval_axis(&self.y, seg, t);
        ([x, y], [dx, dy])
    }
}
