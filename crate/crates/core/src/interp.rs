//! Monotone piecewise-cubic Hermite interpolation (Fritsch-Carlson slopes).

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

fn three_point_end(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d.signum() != del0.signum() {
        0.0
    } else if del0.signum() != del1.signum() && d.abs() > 3.0 * del0.abs() {
        3.0 * del0
    } else {
        d
    }
}

impl Pchip {
    /// Build from strictly increasing nodes.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        assert_eq!(x.len(), y.len());
        assert!(!x.is_empty(), "at least one node");
        assert!(x.windows(2).all(|w| w[0] < w[1]), "nodes must increase");
        let n = x.len();
        let d = match n {
            1 => vec![0.0],
            2 => {
                let s = (y[1] - y[0]) / (x[1] - x[0]);
                vec![s, s]
            }
            _ => {
                let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
                let del: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
                let mut d = vec![0.0; n];
                for k in 1..n - 1 {
                    if del[k - 1] * del[k] > 0.0 {
                        let w1 = 2.0 * h[k] + h[k - 1];
                        let w2 = h[k] + 2.0 * h[k - 1];
                        d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
                    }
                }
                d[0] = three_point_end(h[0], h[1], del[0], del[1]);
                d[n - 1] = three_point_end(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
                d
            }
        };
        Self { x, y, d }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn node_derivatives(&self) -> &[f64] {
        &self.d
    }

    fn segment(&self, t: f64) -> usize {
        match self.x.partition_point(|&xi| xi <= t) {
            0 => 0,
            k => (k - 1).min(self.x.len().saturating_sub(2)),
        }
    }

    /// Value; outside the node range the end tangent is extended linearly.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if n == 1 {
            return self.y[0];
        }
        if t <= self.x[0] {
            return self.y[0] + self.d[0] * (t - self.x[0]);
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1] + self.d[n - 1] * (t - self.x[n - 1]);
        }
        let k = self.segment(t);
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let n = self.x.len();
        if n == 1 {
            return 0.0;
        }
        if t <= self.x[0] {
            return self.d[0];
        }
        if t >= self.x[n - 1] {
            return self.d[n - 1];
        }
        let k = self.segment(t);
        let (a, b, c) = self.derivative_coeffs(k);
        let s = (t - self.x[k]) / (self.x[k + 1] - self.x[k]);
        a + b * s + c * s * s
    }

    // derivative on segment k as a + b s + c s^2 with s in [0, 1]
    fn derivative_coeffs(&self, k: usize) -> (f64, f64, f64) {
        let h = self.x[k + 1] - self.x[k];
        let del = (self.y[k + 1] - self.y[k]) / h;
        let (d0, d1) = (self.d[k], self.d[k + 1]);
        let a = d0;
        let b = 6.0 * del - 4.0 * d0 - 2.0 * d1;
        let c = 3.0 * (d0 + d1) - 6.0 * del;
        (a, b, c)
    }

    /// `sup |p'(t) - target|` over `[lo, hi]`, computed exactly per segment.
    pub fn sup_derivative_deviation(&self, target: f64, lo: f64, hi: f64) -> f64 {
        let n = self.x.len();
        if n == 1 {
            return target.abs();
        }
        let mut worst = 0.0f64;
        let mut consider = |v: f64| worst = worst.max((v - target).abs());
        // linear extensions
        if lo < self.x[0] {
            consider(self.d[0]);
        }
        if hi > self.x[n - 1] {
            consider(self.d[n - 1]);
        }
        for k in 0..n - 1 {
            let (x0, x1) = (self.x[k], self.x[k + 1]);
            if x1 < lo || x0 > hi {
                continue;
            }
            let h = x1 - x0;
            let s_lo = ((lo - x0) / h).clamp(0.0, 1.0);
            let s_hi = ((hi - x0) / h).clamp(0.0, 1.0);
            let (a, b, c) = self.derivative_coeffs(k);
            let q = |s: f64| a + b * s + c * s * s;
            consider(q(s_lo));
            consider(q(s_hi));
            if c != 0.0 {
                let vertex = -b / (2.0 * c);
                if vertex > s_lo && vertex < s_hi {
                    consider(q(vertex));
                }
            }
        }
        worst
    }
}
