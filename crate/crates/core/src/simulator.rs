//! Seeded Monte Carlo for the reflected modulated path.
//!
//! Environment sojourns are drawn exactly; inside a sojourn the content moves in Euler steps
//! of at most `dt`, each followed by the one-step reflection at `[a(j), b(j)]`. At a switch
//! the content is clamped into the new state's interval. Replications own independent
//! ChaCha streams keyed by `(seed, replication)` and are merged in index order, so results do
//! not depend on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::MmbmModel;

/// How a step that crosses a barrier is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BarrierScheme {
    /// Clamp the Euler endpoint.
    Projected,
    /// Sample the Brownian-bridge extremes of the step and push by their overshoot.
    #[default]
    Bridge,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub replications: usize,
    pub seed: u64,
    pub z0: f64,
    pub j0: usize,
    pub scheme: BarrierScheme,
    /// Histogram resolution for occupation measures.
    pub bins: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            horizon: 1e3,
            burn_in: 10.0,
            replications: 1,
            seed: 0,
            z0: 0.0,
            j0: 0,
            scheme: BarrierScheme::Bridge,
            bins: 2000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, model: &MmbmModel) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.horizon) {
            return bad(format!("need 0 <= burn_in < horizon, got {} and {}", self.burn_in, self.horizon));
        }
        if self.replications == 0 {
            return bad("replications must be positive".into());
        }
        if self.bins == 0 {
            return bad("bins must be positive".into());
        }
        if self.j0 >= model.n_states() {
            return bad(format!("j0 = {} exceeds the number of states", self.j0 + 1));
        }
        if !self.z0.is_finite() {
            return bad("z0 must be finite".into());
        }
        let width = min_width(model);
        if self.dt > width / 10.0 {
            return bad(format!("dt = {} exceeds a tenth of the narrowest interval ({width})", self.dt));
        }
        Ok(())
    }
}

fn min_width(model: &MmbmModel) -> f64 {
    let p = model.params();
    let mut pts: Vec<f64> = p.a.iter().chain(p.b.iter()).copied().collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// One environment-driven path with per-step reflection.
struct Walker<'a> {
    model: &'a MmbmModel,
    scheme: BarrierScheme,
    rng: ChaCha8Rng,
    z: f64,
    j: usize,
    t: f64,
    next_switch: f64,
}

struct StepOutcome {
    up: f64,
    down: f64,
    /// Lowest point of the unconstrained excursion during the step.
    low: f64,
}

struct SwitchOutcome {
    from: usize,
    pre: f64,
}

impl<'a> Walker<'a> {
    fn new(model: &'a MmbmModel, cfg: &SimConfig, rep: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(rep as u64);
        let j = cfg.j0;
        let z = cfg.z0.clamp(model.a(j), model.b(j));
        let mut w = Walker {
            model,
            scheme: cfg.scheme,
            rng,
            z,
            j,
            t: 0.0,
            next_switch: 0.0,
        };
        w.next_switch = w.sojourn();
        w
    }

    fn sojourn(&mut self) -> f64 {
        let rate = -self.model.q().rate(self.j, self.j);
        if rate > 0.0 {
            let e: f64 = Exp1.sample(&mut self.rng);
            self.t + e / rate
        } else {
            f64::INFINITY
        }
    }

    /// Length of the next step and whether it ends with a switch.
    fn next_step(&self, dt: f64, until: f64) -> (f64, bool) {
        let to_switch = self.next_switch - self.t;
        let to_end = until - self.t;
        if to_switch <= dt && to_switch <= to_end {
            (to_switch, true)
        } else {
            (dt.min(to_end), false)
        }
    }

    fn step(&mut self, h: f64) -> StepOutcome {
        let (mu, sigma) = (self.model.mu(self.j), self.model.sigma(self.j));
        let (a, b) = (self.model.a(self.j), self.model.b(self.j));
        let xi: f64 = if sigma > 0.0 { StandardNormal.sample(&mut self.rng) } else { 0.0 };
        let w = mu * h + sigma * h.sqrt() * xi;
        let z = self.z;
        let (hi, lo) = match self.scheme {
            BarrierScheme::Projected => (w.max(0.0), w.min(0.0)),
            BarrierScheme::Bridge if sigma > 0.0 => {
                let s = 2.0 * sigma * sigma * h;
                let u1 = 1.0 - self.rng.random::<f64>();
                let u2 = 1.0 - self.rng.random::<f64>();
                let max = 0.5 * (w + (w * w - s * u1.ln()).sqrt());
                let min = 0.5 * (w - (w * w - s * u2.ln()).sqrt());
                (max, min)
            }
            BarrierScheme::Bridge => (w.max(0.0), w.min(0.0)),
        };
        let (up, down, end) = match self.scheme {
            BarrierScheme::Projected => {
                let end = z + w;
                ((end - b).max(0.0), (a - end).max(0.0), end)
            }
            BarrierScheme::Bridge => ((z + hi - b).max(0.0), (a - (z + lo)).max(0.0), z + w),
        };
        self.z = (end - up + down).clamp(a, b);
        self.t += h;
        StepOutcome { up, down, low: z + lo }
    }

    /// Environment switch at the current time; returns the clamp adjustment.
    fn switch(&mut self) -> (SwitchOutcome, f64, f64) {
        let from = self.j;
        let rate = -self.model.q().rate(from, from);
        let mut u = self.rng.random::<f64>() * rate;
        let n = self.model.n_states();
        let mut to = (0..n).rev().find(|&k| k != from).unwrap_or(from);
        for k in (0..n).filter(|&k| k != from) {
            u -= self.model.q().rate(from, k);
            if u < 0.0 {
                to = k;
                break;
            }
        }
        let pre = self.z;
        self.j = to;
        let (a, b) = (self.model.a(to), self.model.b(to));
        let up = (pre - b).max(0.0);
        let down = (a - pre).max(0.0);
        self.z = pre.clamp(a, b);
        self.next_switch = self.sojourn();
        (SwitchOutcome { from, pre }, up, down)
    }
}

/// Per-run occupation, regulator and regeneration records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathEstimates {
    pub n_states: usize,
    pub lower: f64,
    pub upper: f64,
    pub bins: usize,
    pub replications: usize,
    /// Post-burn-in time in each state and histogram bin.
    pub occupancy: Vec<Vec<f64>>,
    /// Post-burn-in time spent exactly at `a(i)` / `b(i)`.
    pub atom_lower: Vec<f64>,
    pub atom_upper: Vec<f64>,
    /// Sum over replications of each replication's cumulative fraction at every bin edge.
    cum_sum: Vec<Vec<f64>>,
    cum_sq: Vec<Vec<f64>>,
    pub observed_time: f64,
    /// Total pushing at each state's barriers, continuous and at switches.
    pub regulator_lower: Vec<f64>,
    pub regulator_upper: Vec<f64>,
    /// Pre-jump contents of clamping down-jumps into the first state.
    pub regen_positions: Vec<f64>,
    /// Times between consecutive regenerations within a replication.
    pub regen_intervals: Vec<f64>,
    pub steps: u64,
}

impl PathEstimates {
    fn empty(model: &MmbmModel, bins: usize) -> Self {
        let n = model.n_states();
        let (lower, upper) = model.content_range();
        PathEstimates {
            n_states: n,
            lower,
            upper,
            bins,
            replications: 0,
            occupancy: vec![vec![0.0; bins]; n],
            atom_lower: vec![0.0; n],
            atom_upper: vec![0.0; n],
            cum_sum: vec![vec![0.0; bins + 1]; n],
            cum_sq: vec![vec![0.0; bins + 1]; n],
            observed_time: 0.0,
            regulator_lower: vec![0.0; n],
            regulator_upper: vec![0.0; n],
            regen_positions: Vec::new(),
            regen_intervals: Vec::new(),
            steps: 0,
        }
    }

    fn bin_of(&self, z: f64) -> usize {
        let w = (self.upper - self.lower) / self.bins as f64;
        (((z - self.lower) / w) as usize).min(self.bins - 1)
    }

    pub fn bin_edge(&self, k: usize) -> f64 {
        self.lower + (self.upper - self.lower) * k as f64 / self.bins as f64
    }

    fn absorb(&mut self, other: PathEstimates) {
        for i in 0..self.n_states {
            for (x, y) in self.occupancy[i].iter_mut().zip(&other.occupancy[i]) {
                *x += y;
            }
            for (x, y) in self.cum_sum[i].iter_mut().zip(&other.cum_sum[i]) {
                *x += y;
            }
            for (x, y) in self.cum_sq[i].iter_mut().zip(&other.cum_sq[i]) {
                *x += y;
            }
            self.atom_lower[i] += other.atom_lower[i];
            self.atom_upper[i] += other.atom_upper[i];
            self.regulator_lower[i] += other.regulator_lower[i];
            self.regulator_upper[i] += other.regulator_upper[i];
        }
        self.observed_time += other.observed_time;
        self.replications += other.replications;
        self.regen_positions.extend(other.regen_positions);
        self.regen_intervals.extend(other.regen_intervals);
        self.steps += other.steps;
    }

    /// Unnormalised occupation of `{J = i, Z ≤ edge_k}` at every bin edge.
    fn cumulative(&self, i: usize, model_a: f64, model_b: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.bins + 1);
        let mut acc = 0.0;
        for k in 0..=self.bins {
            let edge = self.bin_edge(k);
            if k > 0 {
                acc += self.occupancy[i][k - 1];
            }
            let mut v = acc;
            if model_a <= edge {
                v += self.atom_lower[i];
            }
            if model_b <= edge {
                v += self.atom_upper[i];
            }
            out.push(v);
        }
        out
    }
}

fn run_replication(model: &MmbmModel, cfg: &SimConfig, rep: usize) -> PathEstimates {
    let mut est = PathEstimates::empty(model, cfg.bins);
    est.replications = 1;
    let mut w = Walker::new(model, cfg, rep);
    let mut last_regen: Option<f64> = None;
    let b0 = model.b(0);
    while w.t < cfg.horizon {
        let (h, switching) = w.next_step(cfg.dt, cfg.horizon);
        let (t0, z0, j) = (w.t, w.z, w.j);
        let weight = (t0 + h).min(cfg.horizon) - t0.max(cfg.burn_in);
        if weight > 0.0 {
            if z0 == model.a(j) {
                est.atom_lower[j] += weight;
            } else if z0 == model.b(j) {
                est.atom_upper[j] += weight;
            } else {
                let k = est.bin_of(z0);
                est.occupancy[j][k] += weight;
            }
        }
        let out = w.step(h);
        est.steps += 1;
        est.regulator_upper[j] += out.up;
        est.regulator_lower[j] += out.down;
        assert!(model.a(j) <= w.z && w.z <= model.b(j), "path left [a, b]");
        if switching {
            let (sw, up, down) = w.switch();
            est.regulator_upper[w.j] += up;
            est.regulator_lower[w.j] += down;
            if w.j == 0 && sw.from != 0 && sw.pre > b0 + 1e-9 && w.t >= cfg.burn_in {
                est.regen_positions.push(sw.pre);
                if let Some(prev) = last_regen {
                    est.regen_intervals.push(w.t - prev);
                }
                last_regen = Some(w.t);
            }
        }
    }
    est.observed_time = cfg.horizon - cfg.burn_in;
    for i in 0..model.n_states() {
        let cum = est.cumulative(i, model.a(i), model.b(i));
        for (k, c) in cum.into_iter().enumerate() {
            let f = c / est.observed_time;
            est.cum_sum[i][k] = f;
            est.cum_sq[i][k] = f * f;
        }
    }
    est
}

/// Runs `cfg.replications` independent paths and merges them in replication order.
pub fn simulate_path(model: &MmbmModel, cfg: &SimConfig) -> Result<PathEstimates> {
    cfg.validate(model)?;
    let runs: Vec<PathEstimates> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replication(model, cfg, r))
        .collect();
    let mut total = PathEstimates::empty(model, cfg.bins);
    for r in runs {
        total.absorb(r);
    }
    Ok(total)
}

/// Switch-by-switch record of a single path, for inspecting clamping behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchRecord {
    pub t: f64,
    pub from: usize,
    pub to: usize,
    pub pre: f64,
    pub post: f64,
}

pub fn trace_switches(model: &MmbmModel, cfg: &SimConfig, max_switches: usize) -> Result<Vec<SwitchRecord>> {
    cfg.validate(model)?;
    let mut w = Walker::new(model, cfg, 0);
    let mut out = Vec::new();
    while w.t < cfg.horizon && out.len() < max_switches {
        let (h, switching) = w.next_step(cfg.dt, cfg.horizon);
        w.step(h);
        if switching {
            let (sw, _, _) = w.switch();
            out.push(SwitchRecord {
                t: w.t,
                from: sw.from,
                to: w.j,
                pre: sw.pre,
                post: w.z,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalCdf {
    pub grid: Vec<f64>,
    /// `cdf[i][p]` is `Π̂_i(grid[p])`.
    pub cdf: Vec<Vec<f64>>,
    /// Histogram density at each grid point.
    pub density: Vec<Vec<f64>>,
    /// Between-replication standard error (zero with a single replication).
    pub std_error: Vec<Vec<f64>>,
}

impl EmpiricalCdf {
    /// `sup_p |Π̂_i(grid[p]) − f(grid[p])|`.
    pub fn sup_distance(&self, i: usize, f: impl Fn(f64) -> f64) -> f64 {
        self.grid
            .iter()
            .zip(&self.cdf[i])
            .map(|(&z, &c)| (c - f(z)).abs())
            .fold(0.0, f64::max)
    }
}

/// Time-average estimate of the joint CDF on `grid`, linear within histogram bins.
pub fn empirical_stationary(model: &MmbmModel, est: &PathEstimates, grid: &[f64]) -> EmpiricalCdf {
    let n = est.n_states;
    let total = est.observed_time;
    let width = (est.upper - est.lower) / est.bins as f64;
    let reps = est.replications as f64;
    let mut cdf = vec![Vec::with_capacity(grid.len()); n];
    let mut density = vec![Vec::with_capacity(grid.len()); n];
    let mut std_error = vec![Vec::with_capacity(grid.len()); n];
    for i in 0..n {
        let cum = est.cumulative(i, model.a(i), model.b(i));
        for &z in grid {
            let (c, d, k) = if z < est.lower {
                (0.0, 0.0, 0)
            } else if z >= est.upper {
                (cum[est.bins], 0.0, est.bins)
            } else {
                let k = est.bin_of(z);
                let frac = ((z - est.bin_edge(k)) / width).clamp(0.0, 1.0);
                let mut c = cum[k] + frac * est.occupancy[i][k];
                // Atoms strictly inside a bin count from their location on.
                if model.a(i) > est.bin_edge(k) && model.a(i) <= z {
                    c += est.atom_lower[i];
                }
                if model.b(i) > est.bin_edge(k) && model.b(i) <= z {
                    c += est.atom_upper[i];
                }
                (c, est.occupancy[i][k] / (width * total), k)
            };
            cdf[i].push(c / total);
            density[i].push(d);
            let se = if est.replications > 1 {
                let m = est.cum_sum[i][k] / reps;
                let var = (est.cum_sq[i][k] / reps - m * m).max(0.0) * reps / (reps - 1.0);
                (var / reps).sqrt()
            } else {
                0.0
            };
            std_error[i].push(se);
        }
    }
    EmpiricalCdf {
        grid: grid.to_vec(),
        cdf,
        density,
        std_error,
    }
}

/// Minimum number of cycles for [`empirical_regeneration`].
pub const MIN_CYCLES: usize = 200;

#[derive(Debug, Clone, Serialize)]
pub struct RegenerationEstimate {
    pub eta: f64,
    /// Half-width of the 95% interval for `η̂`.
    pub eta_half_width: f64,
    pub cycles: usize,
    /// Sorted pre-jump contents.
    pub positions: Vec<f64>,
    /// DKW half-width of the 95% band for `Ĥ`.
    pub h_half_width: f64,
}

impl RegenerationEstimate {
    /// Empirical `P(Z(τ−) ≤ z)`.
    pub fn h(&self, z: f64) -> f64 {
        let n = self.positions.partition_point(|&p| p <= z);
        n as f64 / self.positions.len() as f64
    }
}

pub fn empirical_regeneration(est: &PathEstimates) -> Result<RegenerationEstimate> {
    let cycles = est.regen_positions.len();
    if cycles < MIN_CYCLES {
        return Err(Error::TooFewCycles {
            observed: cycles,
            required: MIN_CYCLES,
        });
    }
    let eta = cycles as f64 / est.observed_time;
    // Renewal CLT: relative error ≈ cv / √n of the cycle lengths.
    let iv = &est.regen_intervals;
    let cv = if iv.len() > 1 {
        let m = iv.iter().sum::<f64>() / iv.len() as f64;
        let var = iv.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (iv.len() - 1) as f64;
        var.sqrt() / m
    } else {
        1.0
    };
    let eta_half_width = 1.96 * eta * cv / (cycles as f64).sqrt();
    let mut positions = est.regen_positions.clone();
    positions.sort_by(f64::total_cmp);
    let h_half_width = ((2.0f64 / 0.05).ln() / (2.0 * cycles as f64)).sqrt();
    Ok(RegenerationEstimate {
        eta,
        eta_half_width,
        cycles,
        positions,
        h_half_width,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DividendEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub ruin_fraction: f64,
    pub replications: usize,
    /// Set when no replication was ruined before the horizon; the mean is then truncated.
    pub no_ruin_observed: bool,
}

fn dividend_replication(model: &MmbmModel, delta: f64, cfg: &SimConfig, rep: usize) -> (f64, bool) {
    if cfg.z0 <= 0.0 {
        return (0.0, true);
    }
    let mut w = Walker::new(model, cfg, rep);
    let mut paid = 0.0;
    while w.t < cfg.horizon {
        let (h, switching) = w.next_step(cfg.dt, cfg.horizon);
        let disc = (-delta * w.t).exp();
        let out = w.step(h);
        let ruined = match cfg.scheme {
            BarrierScheme::Bridge => out.low <= 0.0,
            BarrierScheme::Projected => out.down > 0.0 || w.z <= 0.0,
        };
        if ruined {
            return (paid, true);
        }
        paid += disc * out.up;
        if switching {
            let (_, up, _) = w.switch();
            paid += (-delta * w.t).exp() * up;
        }
    }
    (paid, false)
}

/// Discounted payouts until ruin, averaged over `cfg.replications` paths from `(z0, j0)`.
pub fn empirical_dividend(model: &MmbmModel, delta: f64, cfg: &SimConfig) -> Result<DividendEstimate> {
    if !(delta > 0.0) {
        return Err(Error::ConfigInvalid(format!("delta must be positive, got {delta}")));
    }
    if (0..model.n_states()).any(|i| model.a(i) != 0.0) {
        return Err(Error::ConfigInvalid("dividend simulation needs a = 0".into()));
    }
    cfg.validate(model)?;
    let runs: Vec<(f64, bool)> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| dividend_replication(model, delta, cfg, r))
        .collect();
    let n = runs.len() as f64;
    let mean = runs.iter().map(|r| r.0).sum::<f64>() / n;
    let var = if runs.len() > 1 {
        runs.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let ruined = runs.iter().filter(|r| r.1).count();
    Ok(DividendEstimate {
        mean,
        std_error: (var / n).sqrt(),
        ruin_fraction: ruined as f64 / n,
        replications: runs.len(),
        no_ruin_observed: ruined == 0,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExitEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// `E[e^{−rate·T}]` for the first exit `T` of `μt + σW(t)` from `(−h, h)`.
///
/// Steps of `h²/(400σ²)`; crossings between grid points are caught with the bridge
/// crossing probability of each barrier.
pub fn exit_lst_mc(h: f64, mu: f64, sigma: f64, rate: f64, replications: usize, seed: u64) -> Result<ExitEstimate> {
    if !(h > 0.0 && sigma > 0.0 && rate >= 0.0 && replications > 0) {
        return Err(Error::InvalidArgument(
            "exit transform needs h > 0, sigma > 0, rate >= 0 and replications > 0".into(),
        ));
    }
    let dt = h * h / (400.0 * sigma * sigma);
    let s2dt = sigma * sigma * dt;
    let samples: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let (mut x, mut t) = (0.0f64, 0.0f64);
            loop {
                let xi: f64 = StandardNormal.sample(&mut rng);
                let y = x + mu * dt + sigma * dt.sqrt() * xi;
                t += dt;
                if y.abs() >= h {
                    break;
                }
                let p_up = (-2.0 * (h - x) * (h - y) / s2dt).exp();
                let p_down = (-2.0 * (h + x) * (h + y) / s2dt).exp();
                if rng.random::<f64>() < p_up + p_down {
                    break;
                }
                x = y;
            }
            (-rate * t).exp()
        })
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(ExitEstimate {
        mean,
        std_error: (var / n).sqrt(),
    })
}
