//! Derivative-free Nelder-Mead minimization inside a box.
//!
//! Candidate vertices are projected onto the box before evaluation, so the
//! objective is only ever called at feasible points.

#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(&hi).all(|(l, h)| l <= h));
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, &l), &h) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(l, h);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMead {
    pub max_iter: usize,
    /// Stop when the spread of simplex values falls to this level...
    pub ftol: f64,
    /// ...and every vertex lies within this distance of the best one.
    pub xtol: f64,
    pub max_restarts: usize,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_iter: 4000,
            ftol: 1e-15,
            xtol: 1e-9,
            max_restarts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best objective value after each iteration; non-increasing.
    pub trace: Vec<f64>,
}

struct Simplex {
    pts: Vec<Vec<f64>>,
    vals: Vec<f64>,
}

impl Simplex {
    fn sort(&mut self) {
        let mut idx: Vec<usize> = (0..self.pts.len()).collect();
        idx.sort_by(|&i, &j| self.vals[i].total_cmp(&self.vals[j]));
        self.pts = idx.iter().map(|&i| self.pts[i].clone()).collect();
        self.vals = idx.iter().map(|&i| self.vals[i]).collect();
    }

    fn spread(&self) -> (f64, f64) {
        let best = &self.pts[0];
        let fs = self.vals[self.vals.len() - 1] - self.vals[0];
        let xs = self.pts[1..]
            .iter()
            .map(|p| p.iter().zip(best).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        (fs, xs)
    }
}

impl NelderMead {
    pub fn minimize<F>(&self, f: F, x0: &[f64], step: &[f64], bounds: &BoxBounds) -> Minimum
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut x = x0.to_vec();
        bounds.project(&mut x);
        let mut trace = Vec::new();
        let mut iterations = 0;
        let mut step = step.to_vec();
        let mut result = self.run(&f, &x, &step, bounds, &mut trace, &mut iterations);
        for _ in 0..self.max_restarts {
            if iterations >= self.max_iter {
                break;
            }
            // restart from the best vertex with a fresh, smaller simplex
            step.iter_mut().for_each(|s| *s *= 0.1);
            let before = result.1;
            let again = self.run(&f, &result.0, &step, bounds, &mut trace, &mut iterations);
            let improved = again.1 < before - self.ftol;
            if again.1 <= before {
                result = again;
            }
            if !improved {
                break;
            }
        }
        Minimum {
            x: result.0,
            fx: result.1,
            iterations,
            converged: result.2,
            trace,
        }
    }

    fn run<F>(
        &self,
        f: &F,
        x0: &[f64],
        step: &[f64],
        bounds: &BoxBounds,
        trace: &mut Vec<f64>,
        iterations: &mut usize,
    ) -> (Vec<f64>, f64, bool)
    where
        F: Fn(&[f64]) -> f64,
    {
        let n = x0.len();
        let mut pts = vec![x0.to_vec()];
        for i in 0..n {
            let mut p = x0.to_vec();
            p[i] += step[i];
            bounds.project(&mut p);
            if (p[i] - x0[i]).abs() < 0.5 * step[i].abs() {
                p[i] = x0[i] - step[i];
                bounds.project(&mut p);
            }
            pts.push(p);
        }
        let vals = pts.iter().map(|p| f(p)).collect();
        let mut s = Simplex { pts, vals };
        s.sort();
        let push = |trace: &mut Vec<f64>, v: f64| {
            let prev = trace.last().copied().unwrap_or(f64::INFINITY);
            trace.push(v.min(prev));
        };
        push(trace, s.vals[0]);

        let mut converged = false;
        while *iterations < self.max_iter {
            let (fs, xs) = s.spread();
            if fs <= self.ftol && xs <= self.xtol {
                converged = true;
                break;
            }
            *iterations += 1;

            let centroid: Vec<f64> = (0..n)
                .map(|j| s.pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
                .collect();
            let toward = |coef: f64| -> Vec<f64> {
                let mut p: Vec<f64> = centroid
                    .iter()
                    .zip(&s.pts[n])
                    .map(|(c, w)| c + coef * (c - w))
                    .collect();
                bounds.project(&mut p);
                p
            };

            let xr = toward(1.0);
            let fr = f(&xr);
            if fr < s.vals[0] {
                let xe = toward(2.0);
                let fe = f(&xe);
                if fe < fr {
                    s.pts[n] = xe;
                    s.vals[n] = fe;
                } else {
                    s.pts[n] = xr;
                    s.vals[n] = fr;
                }
            } else if fr < s.vals[n - 1] {
                s.pts[n] = xr;
                s.vals[n] = fr;
            } else {
                let (xc, fc) = if fr < s.vals[n] {
                    let xc = toward(0.5);
                    let fc = f(&xc);
                    (xc, fc)
                } else {
                    let xc = toward(-0.5);
                    let fc = f(&xc);
                    (xc, fc)
                };
                if fc < s.vals[n].min(fr) {
                    s.pts[n] = xc;
                    s.vals[n] = fc;
                } else {
                    let best = s.pts[0].clone();
                    for i in 1..=n {
                        let mut p: Vec<f64> = s.pts[i]
                            .iter()
                            .zip(&best)
                            .map(|(v, b)| b + 0.5 * (v - b))
                            .collect();
                        bounds.project(&mut p);
                        s.vals[i] = f(&p);
                        s.pts[i] = p;
                    }
                }
            }
            s.sort();
            push(trace, s.vals[0]);
        }
        (s.pts[0].clone(), s.vals[0], converged)
    }
}
