//! Log-barrier path-following solver for the per-target SINR feasibility cone
//! program.
//!
//! With `w_mk = sqrt(p_mk beta_hat_mk)` and everything scaled by `sqrt(rho)`,
//! the SINR of user k becomes
//!
//! ```text
//!   SINR_k = (sum_{m in G_k} h_mk w_mk)^2 / (1 + sum_m d_mk sum_k' w_mk'^2),
//!   h_mk = sqrt(rho beta_hat_mk),  d_mk = rho beta_mk,
//! ```
//!
//! and the power constraint of AP m is `||w_m.||_2 <= 1`. A target `gamma` is
//! feasible iff the optimal value of
//!
//! ```text
//!   maximize t
//!   s.t. (sum_m h_mk w_mk - t) / sqrt(gamma) >= ||[ sqrt(d_mk) w_mk' (all m, k') ; 1 ]||
//!        ||w_m.|| <= 1                                                        (all m)
//! ```
//!
//! is nonnegative. The program always has a strictly feasible point (`w = 0`,
//! very negative `t`), so a primal barrier method needs no phase I. Any iterate
//! whose SINR margin is nonnegative is a feasibility certificate; the barrier
//! duality-gap bound certifies infeasibility once `t + gap < 0`.
//!
//! The Newton system is `B + U C U^T` plus a border for `t`, where `B` is
//! block diagonal over APs (each block diagonal plus rank one) and `U` holds
//! two columns per user. It is solved with the Woodbury identity, which costs
//! O(K^2 n + K^3) per step for n variables. Near the end of the path the
//! update can lose accuracy to cancellation; a step whose residual is too large
//! is recomputed with a dense Cholesky factorization.

use nalgebra::{DMatrix, DVector};

use crate::channel::AccessStats;

/// Outcome class of a feasibility solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeasibilityStatus {
    Feasible,
    Infeasible,
    /// The solver stopped without a certificate either way.
    Indeterminate,
}

pub(crate) struct BarrierResult {
    pub status: FeasibilityStatus,
    /// `w` per variable, valid when feasible.
    pub w: Vec<f64>,
    pub newton_steps: usize,
}

/// One optimization variable `w_mk`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Var {
    pub ap: usize,
    pub user: usize,
    pub h: f64,
}

/// Problem structure shared by every target in one bisection.
pub(crate) struct Structure {
    pub vars: Vec<Var>,
    /// Variable ranges of each AP block (only APs with variables).
    blocks: Vec<(usize, usize)>,
    /// Variable indices of each user.
    user_vars: Vec<Vec<usize>>,
    /// `d[k][j] = rho beta_{ap(j), k}`.
    d: Vec<Vec<f64>>,
    pub num_users: usize,
}

impl Structure {
    pub fn new(groups: &[Vec<usize>], stats: &AccessStats, rho: f64) -> Self {
        let num_aps = stats.num_aps();
        let num_users = stats.num_ues();
        let mut per_ap: Vec<Vec<usize>> = vec![Vec::new(); num_aps];
        for (k, group) in groups.iter().enumerate() {
            for &m in group {
                if stats.beta_hat[(m, k)] > 0.0 {
                    per_ap[m].push(k);
                }
            }
        }
        let mut vars = Vec::new();
        let mut blocks = Vec::new();
        let mut user_vars = vec![Vec::new(); num_users];
        for (m, users) in per_ap.iter_mut().enumerate() {
            if users.is_empty() {
                continue;
            }
            users.sort_unstable();
            users.dedup();
            let start = vars.len();
            for &k in users.iter() {
                user_vars[k].push(vars.len());
                vars.push(Var {
                    ap: m,
                    user: k,
                    h: (rho * stats.beta_hat[(m, k)]).sqrt(),
                });
            }
            blocks.push((start, vars.len()));
        }
        let d = (0..num_users)
            .map(|k| vars.iter().map(|v| rho * stats.beta[(v.ap, k)]).collect())
            .collect();
        Self {
            vars,
            blocks,
            user_vars,
            d,
            num_users,
        }
    }

    pub fn user_has_vars(&self, k: usize) -> bool {
        !self.user_vars[k].is_empty()
    }

    /// Interference-free SINR bound of each user at full per-AP power.
    pub fn interference_free_bound(&self) -> Vec<f64> {
        self.user_vars
            .iter()
            .map(|js| {
                let s: f64 = js.iter().map(|&j| self.vars[j].h).sum();
                s * s
            })
            .collect()
    }

    fn signal(&self, k: usize, w: &[f64]) -> f64 {
        self.user_vars[k].iter().map(|&j| self.vars[j].h * w[j]).sum()
    }

    fn interference(&self, k: usize, w: &[f64]) -> f64 {
        1.0 + self.d[k].iter().zip(w).map(|(d, x)| d * x * x).sum::<f64>()
    }

    /// Smallest SINR margin `signal_k - sqrt(gamma * interference_k)`.
    fn margin(&self, w: &[f64], sqrt_gamma: f64) -> f64 {
        (0..self.num_users)
            .map(|k| self.signal(k, w) - sqrt_gamma * self.interference(k, w).sqrt())
            .fold(f64::INFINITY, f64::min)
    }
}

pub(crate) struct BarrierSettings {
    pub max_newton_steps: usize,
    pub tau_growth: f64,
    pub centering_decrement: f64,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        Self {
            max_newton_steps: 600,
            tau_growth: 12.0,
            centering_decrement: 0.2,
        }
    }
}

/// Per-step quantities at the current point.
struct Local {
    /// Per user: `Delta_k`, `z0_k`.
    delta_u: Vec<f64>,
    z0: Vec<f64>,
    /// Per block: `Delta_m`.
    delta_b: Vec<f64>,
}

struct Solver<'a> {
    st: &'a Structure,
    s: f64,
    n: usize,
}

impl<'a> Solver<'a> {
    fn local(&self, w: &[f64], t: f64) -> Option<Local> {
        let k_users = self.st.num_users;
        let mut delta_u = Vec::with_capacity(k_users);
        let mut z0 = Vec::with_capacity(k_users);
        for k in 0..k_users {
            let z = self.s * (self.st.signal(k, w) - t);
            let delta = z * z - self.st.interference(k, w);
            if !(z > 0.0 && delta > 0.0) {
                return None;
            }
            delta_u.push(delta);
            z0.push(z);
        }
        let mut delta_b = Vec::with_capacity(self.st.blocks.len());
        for &(a, b) in &self.st.blocks {
            let delta = 1.0 - w[a..b].iter().map(|x| x * x).sum::<f64>();
            if !(delta > 0.0) {
                return None;
            }
            delta_b.push(delta);
        }
        Some(Local { delta_u, z0, delta_b })
    }

    fn objective(&self, tau: f64, t: f64, loc: &Local) -> f64 {
        -tau * t
            - loc.delta_u.iter().map(|d| d.ln()).sum::<f64>()
            - loc.delta_b.iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Newton direction for `-tau t + barrier`; returns `(dw, dt, decrement^2)`.
    fn newton(&self, tau: f64, w: &[f64], loc: &Local) -> Option<(Vec<f64>, f64, f64)> {
        let n = self.n;
        let k_users = self.st.num_users;
        let s = self.s;

        // Low-rank columns: a_k then g_k, w-part dense plus t component.
        let r = 2 * k_users;
        let mut cols = vec![vec![0.0; n]; r];
        let mut cols_t = vec![0.0; r];
        let mut coef = vec![0.0; r];
        let mut diag = vec![0.0; n];
        let mut grad = vec![0.0; n];
        let mut grad_t = -tau;

        for k in 0..k_users {
            let delta = loc.delta_u[k];
            let z0 = loc.z0[k];
            let dk = &self.st.d[k];
            {
                let a = &mut cols[k];
                for &j in &self.st.user_vars[k] {
                    a[j] = s * self.st.vars[j].h;
                }
            }
            cols_t[k] = -s;
            coef[k] = -2.0 / delta;
            let (left, right) = cols.split_at_mut(k_users);
            let a = &left[k];
            let g = &mut right[k];
            for j in 0..n {
                g[j] = 2.0 * z0 * a[j] - 2.0 * dk[j] * w[j];
                diag[j] += 2.0 / delta * dk[j];
                grad[j] -= g[j] / delta;
            }
            cols_t[k_users + k] = -2.0 * z0 * s;
            coef[k_users + k] = 1.0 / (delta * delta);
            grad_t -= cols_t[k_users + k] / delta;
        }
        for (bi, &(lo, hi)) in self.st.blocks.iter().enumerate() {
            let delta = loc.delta_b[bi];
            for j in lo..hi {
                diag[j] += 2.0 / delta;
                grad[j] += 2.0 * w[j] / delta;
            }
        }

        let blocks = BlockInverse::new(&self.st.blocks, &loc.delta_b, &diag, w);

        // Z = B^{-1} U, S = C^{-1} + U^T Z.
        let z: Vec<Vec<f64>> = cols.iter().map(|u| blocks.apply(u)).collect();
        let mut cap = DMatrix::<f64>::zeros(r, r);
        for i in 0..r {
            for j in i..r {
                let v = dot(&cols[i], &z[j]);
                cap[(i, j)] = v;
                cap[(j, i)] = v;
            }
            cap[(i, i)] += 1.0 / coef[i];
        }
        let lu = cap.lu();

        let hw_solve = |rhs: &[f64]| -> Option<Vec<f64>> {
            let mut y = blocks.apply(rhs);
            let proj = DVector::from_iterator(r, cols.iter().map(|u| dot(u, &y)));
            let corr = lu.solve(&proj)?;
            for (zi, ci) in z.iter().zip(corr.iter()) {
                for (yj, zj) in y.iter_mut().zip(zi) {
                    *yj -= ci * zj;
                }
            }
            Some(y)
        };

        // Border between w and t.
        let mut h_wt = vec![0.0; n];
        let mut h_tt = 0.0;
        for i in 0..r {
            let c = coef[i] * cols_t[i];
            for (hj, uj) in h_wt.iter_mut().zip(&cols[i]) {
                *hj += c * uj;
            }
            h_tt += coef[i] * cols_t[i] * cols_t[i];
        }

        let hmul = |vw: &[f64], vt: f64| -> (Vec<f64>, f64) {
            let mut out = blocks.forward(vw);
            let mut out_t = 0.0;
            for i in 0..r {
                let p = coef[i] * (dot(&cols[i], vw) + cols_t[i] * vt);
                for (o, u) in out.iter_mut().zip(&cols[i]) {
                    *o += p * u;
                }
                out_t += p * cols_t[i];
            }
            (out, out_t)
        };

        let rhs_w: Vec<f64> = grad.iter().map(|g| -g).collect();
        let rhs_t = -grad_t;
        let structured = || -> Option<(Vec<f64>, f64)> {
            let y_h = hw_solve(&h_wt)?;
            let schur = h_tt - dot(&h_wt, &y_h);
            if !(schur > 0.0) {
                return None;
            }
            let solve = |bw: &[f64], bt: f64| -> Option<(Vec<f64>, f64)> {
                let y_r = hw_solve(bw)?;
                let dt = (bt - dot(&h_wt, &y_r)) / schur;
                let dw: Vec<f64> = y_r.iter().zip(&y_h).map(|(a, b)| a - b * dt).collect();
                Some((dw, dt))
            };
            let (mut dw, mut dt) = solve(&rhs_w, rhs_t)?;
            // One step of iterative refinement against the exact product.
            let (hw, ht) = hmul(&dw, dt);
            let res_w: Vec<f64> = rhs_w.iter().zip(&hw).map(|(a, b)| a - b).collect();
            let (cw, ct) = solve(&res_w, rhs_t - ht)?;
            for (d, c) in dw.iter_mut().zip(&cw) {
                *d += c;
            }
            dt += ct;
            Some((dw, dt))
        };
        let accurate = |dw: &[f64], dt: f64| {
            let (hw, ht) = hmul(dw, dt);
            let res: f64 = rhs_w.iter().zip(&hw).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                + (rhs_t - ht) * (rhs_t - ht);
            let norm: f64 = dot(&rhs_w, &rhs_w) + rhs_t * rhs_t;
            res.is_finite() && res <= 1e-16 * norm
        };
        let (dw, dt) = match structured() {
            Some((dw, dt)) if accurate(&dw, dt) => (dw, dt),
            _ => {
                // Dense fallback when the low-rank update is too ill-conditioned.
                let mut hd = DMatrix::<f64>::zeros(n + 1, n + 1);
                for (bi, &(lo, hi)) in self.st.blocks.iter().enumerate() {
                    for i in lo..hi {
                        hd[(i, i)] += diag[i];
                        for j in lo..hi {
                            hd[(i, j)] += blocks.rank1[bi] * w[i] * w[j];
                        }
                    }
                }
                for i in 0..r {
                    let mut u = DVector::from_column_slice(&cols[i]).insert_row(n, cols_t[i]);
                    u *= coef[i].abs().sqrt();
                    if coef[i] >= 0.0 {
                        hd.ger(1.0, &u, &u, 1.0);
                    } else {
                        hd.ger(-1.0, &u, &u, 1.0);
                    }
                }
                let rhs = DVector::from_column_slice(&rhs_w).insert_row(n, rhs_t);
                let sol = hd.cholesky()?.solve(&rhs);
                (sol.rows(0, n).iter().copied().collect(), sol[n])
            }
        };

        let dec2 = -(dot(&grad, &dw) + grad_t * dt);
        if !dec2.is_finite() {
            return None;
        }
        Some((dw, dt, dec2.max(0.0)))
    }
}

/// Inverse of the block-diagonal part: each AP block is
/// `diag + (4 / Delta_m^2) w_m w_m^T`, inverted by Sherman-Morrison.
struct BlockInverse<'a> {
    blocks: &'a [(usize, usize)],
    diag: &'a [f64],
    w: &'a [f64],
    rank1: Vec<f64>,
    /// `c / (1 + c w^T D^{-1} w)` per block.
    scale: Vec<f64>,
}

impl<'a> BlockInverse<'a> {
    fn new(blocks: &'a [(usize, usize)], delta_b: &[f64], diag: &'a [f64], w: &'a [f64]) -> Self {
        let mut rank1 = Vec::with_capacity(blocks.len());
        let mut scale = Vec::with_capacity(blocks.len());
        for (bi, &(lo, hi)) in blocks.iter().enumerate() {
            let c = 4.0 / (delta_b[bi] * delta_b[bi]);
            let q: f64 = (lo..hi).map(|j| w[j] * w[j] / diag[j]).sum();
            rank1.push(c);
            scale.push(c / (1.0 + c * q));
        }
        Self {
            blocks,
            diag,
            w,
            rank1,
            scale,
        }
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (bi, &(lo, hi)) in self.blocks.iter().enumerate() {
            let mut proj = 0.0;
            for j in lo..hi {
                out[j] = v[j] / self.diag[j];
                proj += self.w[j] * out[j];
            }
            let f = self.scale[bi] * proj;
            for j in lo..hi {
                out[j] -= f * self.w[j] / self.diag[j];
            }
        }
        out
    }

    fn forward(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (bi, &(lo, hi)) in self.blocks.iter().enumerate() {
            let proj: f64 = (lo..hi).map(|j| self.w[j] * v[j]).sum();
            for j in lo..hi {
                out[j] = self.diag[j] * v[j] + self.rank1[bi] * proj * self.w[j];
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Decides whether every user can reach SINR `gamma` (> 0).
pub(crate) fn solve(st: &Structure, gamma: f64, settings: &BarrierSettings) -> BarrierResult {
    let n = st.vars.len();
    let sqrt_gamma = gamma.sqrt();
    let infeasible = |steps| BarrierResult {
        status: FeasibilityStatus::Infeasible,
        w: Vec::new(),
        newton_steps: steps,
    };
    if (0..st.num_users).any(|k| !st.user_has_vars(k)) {
        return infeasible(0);
    }
    let solver = Solver {
        st,
        s: 1.0 / sqrt_gamma,
        n,
    };

    // Interior start: every AP at a quarter of its power, split evenly.
    let mut w = vec![0.0; n];
    for &(lo, hi) in &st.blocks {
        let v = 0.5 / ((hi - lo) as f64).sqrt();
        w[lo..hi].iter_mut().for_each(|x| *x = v);
    }
    let m0 = st.margin(&w, sqrt_gamma);
    if m0 >= 0.0 {
        return BarrierResult {
            status: FeasibilityStatus::Feasible,
            w,
            newton_steps: 0,
        };
    }
    let mut t = m0 - 0.5 * (1.0 + m0.abs());

    let nu = 2.0 * (st.num_users + st.blocks.len()) as f64;
    // Upper bound on t: the signal term at full power.
    let t_upper = (0..st.num_users)
        .map(|k| st.user_vars[k].iter().map(|&j| st.vars[j].h).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let scale = t_upper.max(1.0);
    let mut tau = nu / (t_upper - t).max(1e-12);

    let mut steps = 0;
    let Some(mut loc) = solver.local(&w, t) else {
        return BarrierResult {
            status: FeasibilityStatus::Indeterminate,
            w: Vec::new(),
            newton_steps: 0,
        };
    };
    let mut trial_w = vec![0.0; n];
    loop {
        // Centering.
        let mut dec: f64;
        loop {
            if steps >= settings.max_newton_steps {
                return BarrierResult {
                    status: FeasibilityStatus::Indeterminate,
                    w: Vec::new(),
                    newton_steps: steps,
                };
            }
            let Some((dw, dt, dec2)) = solver.newton(tau, &w, &loc) else {
                return BarrierResult {
                    status: FeasibilityStatus::Indeterminate,
                    w: Vec::new(),
                    newton_steps: steps,
                };
            };
            steps += 1;
            dec = dec2.sqrt();
            if dec <= settings.centering_decrement {
                break;
            }
            let f0 = solver.objective(tau, t, &loc);
            let mut alpha = 1.0;
            let mut accepted = None;
            while alpha > 1e-14 {
                for j in 0..n {
                    trial_w[j] = w[j] + alpha * dw[j];
                }
                let trial_t = t + alpha * dt;
                if let Some(l) = solver.local(&trial_w, trial_t) {
                    let f = solver.objective(tau, trial_t, &l);
                    if f <= f0 - 0.25 * alpha * dec2 {
                        accepted = Some((trial_t, l));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let Some((new_t, new_loc)) = accepted else {
                // No decrease possible at working precision: treat as centered.
                break;
            };
            std::mem::swap(&mut w, &mut trial_w);
            t = new_t;
            loc = new_loc;
            if st.margin(&w, sqrt_gamma) >= 0.0 {
                return BarrierResult {
                    status: FeasibilityStatus::Feasible,
                    w,
                    newton_steps: steps,
                };
            }
        }

        // Suboptimality bound of an approximately centered point.
        let lam = dec.min(0.9);
        let gap = (nu + (lam + nu.sqrt()) * lam / (1.0 - lam)) / tau;
        if t + gap < 0.0 {
            return infeasible(steps);
        }
        if gap < 1e-11 * scale {
            return BarrierResult {
                status: FeasibilityStatus::Indeterminate,
                w: Vec::new(),
                newton_steps: steps,
            };
        }
        tau *= settings.tau_growth;
    }
}
