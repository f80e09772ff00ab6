use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::data::{MediatorEvent, OutcomePoint, PatientRecord};
use crate::error::{Error, Result};
use crate::gp::{kl_gaussians, maximize, FitReport, SparseGp};
use crate::linalg::{dot, Matrix};
use crate::mediator::{FeatureMap, History, IntensityComponent, MarkModel, MediatorConfig, MediatorModel};
use crate::quadrature::GaussHermite;

/// Floor on `λ` inside the logarithm of the event term.
const LOG_FLOOR: f64 = 1e-10;

/// A trapezoid node of the compensator integral. The history seen at `tau`
/// is the realised past as of `cut`, a time strictly inside the node's
/// segment, so segment endpoints see the history of the segment interior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureNode {
    pub tau: f64,
    pub weight: f64,
    pub cut: f64,
}

/// Trapezoid nodes over `[start, end]`, split at every event and outcome
/// time so that the history is constant on each segment. Each segment gets
/// at least `nodes_per_day · length / 24` intervals.
pub fn compensator_nodes(
    events: &[MediatorEvent],
    outcomes: &[OutcomePoint],
    start: f64,
    end: f64,
    nodes_per_day: usize,
) -> Vec<QuadratureNode> {
    let mut breaks = vec![start, end];
    breaks.extend(events.iter().map(|e| e.time).filter(|t| *t > start && *t < end));
    breaks.extend(outcomes.iter().map(|o| o.time).filter(|t| *t > start && *t < end));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut nodes = Vec::new();
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(b > a) {
            continue;
        }
        let k = libm::ceil(nodes_per_day as f64 * (b - a) / 24.0).max(1.0) as usize;
        let h = (b - a) / k as f64;
        let cut = 0.5 * (a + b);
        for j in 0..=k {
            let tau = if j == k { b } else { a + h * j as f64 };
            let weight = if j == 0 || j == k { 0.5 * h } else { h };
            nodes.push(QuadratureNode { tau, weight, cut });
        }
    }
    nodes
}

/// `E[log max(s², floor)]` for `s ~ N(mean, var)` and its derivatives with
/// respect to `mean` and `var`.
fn expected_log_square(gh: &GaussHermite, mean: f64, var: f64) -> (f64, f64, f64) {
    let sd = libm::sqrt(var.max(0.0));
    let norm = 1.0 / libm::sqrt(PI);
    let (mut value, mut d_mean, mut d_sd) = (0.0, 0.0, 0.0);
    for (x, w) in gh.nodes.iter().zip(&gh.weights) {
        let z = core::f64::consts::SQRT_2 * x;
        let s = mean + sd * z;
        let sq = s * s;
        if sq > LOG_FLOOR {
            value += w * libm::log(sq);
            let d = 2.0 / s;
            d_mean += w * d;
            d_sd += w * d * z;
        } else {
            value += w * libm::log(LOG_FLOOR);
        }
    }
    let d_var = if sd > 0.0 {
        d_sd * norm / (2.0 * sd)
    } else if mean * mean > LOG_FLOOR {
        -1.0 / (mean * mean)
    } else {
        0.0
    };
    (value * norm, d_mean * norm, d_var)
}

fn cut_history(r: &PatientRecord, cut: f64) -> (&[MediatorEvent], &[OutcomePoint]) {
    let h = History::new(&r.events.events, &r.outcomes.points);
    (h.events_before(cut), h.outcomes_until(cut))
}

/// Time part of the evidence lower bound:
/// `Σ_i E_q[log λ(t_i)] − Σ_nodes w E_q[λ] − Σ_c KL(q_c ‖ p_c)`, with
/// `E_q[λ] = μ² + v` for the latent sum `N(μ, v)`.
pub fn time_elbo(model: &MediatorModel, records: &[PatientRecord], config: &MediatorConfig) -> Result<f64> {
    let gh = GaussHermite::new(config.gauss_hermite_nodes);
    let settings = *model.settings();
    let mut buf = Vec::new();
    let mut total = 0.0;
    for r in records {
        let history = History::new(&r.events.events, &r.outcomes.points);
        for e in &r.events.events {
            let (m, v) = model.latent_moments(e.time, &history);
            total += expected_log_square(&gh, m, v).0;
        }
        for node in compensator_nodes(&r.events.events, &r.outcomes.points, 0.0, r.events.horizon, config.quadrature_nodes_per_day) {
            let (ev, oc) = cut_history(r, node.cut);
            let (m, v) = model.moments_with(|f, out| f.extract_from(ev, oc, node.tau, &settings, out), &mut buf);
            total -= node.weight * (m * m + v);
        }
    }
    for c in model.components() {
        total -= whitened_kl(&c.gp)?;
    }
    Ok(total)
}

/// Time part plus the log density of every observed mark.
pub fn elbo(model: &MediatorModel, records: &[PatientRecord], config: &MediatorConfig) -> Result<f64> {
    let mut total = time_elbo(model, records, config)?;
    for r in records {
        for e in &r.events.events {
            total += model.mark_loglik(e.time, e.mark)?;
        }
    }
    Ok(total)
}

fn whitened_kl(gp: &SparseGp) -> Result<f64> {
    let (mv, sv) = gp.whitened();
    let m = mv.len();
    kl_gaussians(&mv, &sv, &vec![0.0; m], &Matrix::identity(m))
}

/// Optimisation summaries of a mediator fit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MediatorFitReport {
    /// Time-part ELBO after every accepted step.
    pub elbo: FitReport,
    /// Mark-model log marginal likelihood after every accepted step.
    pub marks: FitReport,
}

/// Fits `β₀` and the whitened variational parameters of every component by
/// maximising the time ELBO (kernels and inducing inputs stay fixed), then
/// the mark model by marginal likelihood.
pub fn fit_mediator(records: &[PatientRecord], config: &MediatorConfig) -> Result<(MediatorModel, MediatorFitReport)> {
    if records.is_empty() || records.iter().all(|r| !(r.events.horizon > 0.0)) {
        return Err(Error::EmptyData);
    }
    let init = MediatorModel::initial(config, records)?;
    let stats = Statistics::new(&init, records, config)?;
    let x0 = stats.initial_point(init.beta0());
    let result = maximize(|x| stats.evaluate(x), &x0, &config.optimizer)?;
    let (beta0, components) = stats.unpack(&init, &result.x)?;

    let observations: Vec<(f64, f64)> =
        records.iter().flat_map(|r| r.events.events.iter().map(|e| (e.time, e.mark))).collect();
    let (marks, mark_report) =
        MarkModel::fit(config.mark_kernel()?, config.mark_noise_variance, &observations, &config.mark_optimizer)?;
    let model = MediatorModel::new(beta0, components, *init.settings(), marks)?;
    Ok((model, MediatorFitReport { elbo: FitReport::from(&result), marks: mark_report }))
}

/// Everything the time ELBO needs once kernels and inducing inputs are
/// fixed. With `θ = [β₀, m_v¹, m_v², …]` and `φ(τ) = [1, a¹(τ), a²(τ), …]`
/// (`aᶜ = L_c⁻¹ k_c(Z_c, x)`), the latent mean is `φᵀθ` and the compensator
/// reduces to `θᵀ Φ θ + Σ_c tr(L_sᶜᵀ Φ_cc L_sᶜ) + Σ w c(τ)` with
/// `Φ = Σ_nodes w φ φᵀ`.
struct Statistics {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    dim: usize,
    event_phi: Vec<Vec<f64>>,
    event_c: Vec<f64>,
    phi: Matrix,
    weighted_c: f64,
    gh: GaussHermite,
}

impl Statistics {
    fn new(init: &MediatorModel, records: &[PatientRecord], config: &MediatorConfig) -> Result<Self> {
        let settings = *init.settings();
        let sizes: Vec<usize> = init.components().iter().map(|c| c.gp.num_inducing()).collect();
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut dim = 1;
        for s in &sizes {
            offsets.push(dim);
            dim += s;
        }
        let project = |feature: &dyn Fn(FeatureMap, &mut Vec<f64>)| -> (Vec<f64>, f64) {
            let mut phi = vec![0.0; dim];
            phi[0] = 1.0;
            let mut c = 0.0;
            let mut buf = Vec::new();
            for (k, comp) in init.components().iter().enumerate() {
                feature(comp.feature, &mut buf);
                let p = comp.gp.project(&buf);
                phi[offsets[k]..offsets[k] + sizes[k]].copy_from_slice(&p.a);
                c += p.c.max(0.0);
            }
            (phi, c)
        };

        let mut event_phi = Vec::new();
        let mut event_c = Vec::new();
        let mut phi = Matrix::zeros(dim, dim);
        let mut weighted_c = 0.0;
        for r in records {
            let history = History::new(&r.events.events, &r.outcomes.points);
            for e in &r.events.events {
                let (p, c) = project(&|f, out| f.extract_into(&history, e.time, &settings, out));
                event_phi.push(p);
                event_c.push(c);
            }
            let nodes =
                compensator_nodes(&r.events.events, &r.outcomes.points, 0.0, r.events.horizon, config.quadrature_nodes_per_day);
            for node in nodes {
                let (ev, oc) = cut_history(r, node.cut);
                let (p, c) = project(&|f, out| f.extract_from(ev, oc, node.tau, &settings, out));
                weighted_c += node.weight * c;
                for i in 0..dim {
                    let wi = node.weight * p[i];
                    if wi == 0.0 {
                        continue;
                    }
                    let row = phi.row_mut(i);
                    for j in 0..dim {
                        row[j] += wi * p[j];
                    }
                }
            }
        }
        Ok(Statistics {
            sizes,
            offsets,
            dim,
            event_phi,
            event_c,
            phi,
            weighted_c,
            gh: GaussHermite::new(config.gauss_hermite_nodes),
        })
    }

    /// `β₀`, zero whitened means and `L_s = I` (the prior).
    fn initial_point(&self, beta0: f64) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        x[0] = beta0;
        for &m in &self.sizes {
            x.extend(core::iter::repeat_n(0.0, m * (m + 1) / 2));
        }
        x
    }

    /// Lower-triangular `L_s` per component; diagonal entries are stored as
    /// logarithms.
    fn factors(&self, x: &[f64]) -> Vec<Matrix> {
        let mut at = self.dim;
        self.sizes
            .iter()
            .map(|&m| {
                let mut l = Matrix::zeros(m, m);
                for i in 0..m {
                    for j in 0..i {
                        l[(i, j)] = x[at];
                        at += 1;
                    }
                    l[(i, i)] = libm::exp(x[at]);
                    at += 1;
                }
                l
            })
            .collect()
    }

    fn unpack(&self, init: &MediatorModel, x: &[f64]) -> Result<(f64, Vec<IntensityComponent>)> {
        let factors = self.factors(x);
        let comps = init
            .components()
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let mv = &x[self.offsets[k]..self.offsets[k] + self.sizes[k]];
                let gp = SparseGp::from_whitened(c.gp.kernel().clone(), c.gp.inducing_inputs().to_vec(), mv, &factors[k])?;
                Ok(IntensityComponent { feature: c.feature, gp })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((x[0], comps))
    }

    fn evaluate(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let theta = &x[..self.dim];
        let factors = self.factors(x);
        let mut grad = vec![0.0; x.len()];

        // compensator mean part: θᵀ Φ θ
        let phi_theta = self.phi.matvec(theta);
        let mut value = -dot(theta, &phi_theta);
        for (g, p) in grad.iter_mut().zip(&phi_theta) {
            *g -= 2.0 * p;
        }
        value -= self.weighted_c;

        // per-component weighted outer products of the event projections
        let mut event_outer: Vec<Matrix> = self.sizes.iter().map(|&m| Matrix::zeros(m, m)).collect();
        for (p, c) in self.event_phi.iter().zip(&self.event_c) {
            let mean = dot(p, theta);
            let mut var = *c;
            for (k, l) in factors.iter().enumerate() {
                let a = &p[self.offsets[k]..self.offsets[k] + self.sizes[k]];
                let lta = l.transpose_matvec(a);
                var += dot(&lta, &lta);
            }
            let (v, d_mean, d_var) = expected_log_square(&self.gh, mean, var);
            value += v;
            for (g, pi) in grad[..self.dim].iter_mut().zip(p) {
                *g += d_mean * pi;
            }
            for k in 0..self.sizes.len() {
                let a = &p[self.offsets[k]..self.offsets[k] + self.sizes[k]];
                let outer = &mut event_outer[k];
                for i in 0..a.len() {
                    if a[i] == 0.0 {
                        continue;
                    }
                    let row = outer.row_mut(i);
                    for j in 0..a.len() {
                        row[j] += d_var * a[i] * a[j];
                    }
                }
            }
        }

        let mut at = self.dim;
        for (k, l) in factors.iter().enumerate() {
            let m = self.sizes[k];
            let off = self.offsets[k];
            let block = Matrix::from_fn(m, m, |i, j| self.phi[(off + i, off + j)]);
            // variance part of the compensator: tr(Lᵀ Φ_cc L)
            let bl = block.matmul(l);
            let mut trace = 0.0;
            for i in 0..m {
                for j in 0..m {
                    trace += l[(i, j)] * bl[(i, j)];
                }
            }
            value -= trace;
            // whitened KL to N(0, I)
            let mv = &theta[off..off + m];
            let frob: f64 = l.as_slice().iter().map(|v| v * v).sum();
            let logdet: f64 = (0..m).map(|i| libm::log(l[(i, i)])).sum();
            value -= 0.5 * (frob + dot(mv, mv) - m as f64) - logdet;
            for (g, v) in grad[off..off + m].iter_mut().zip(mv) {
                *g -= v;
            }
            // dL = 2 (Σ_i g_v a aᵀ − Φ_cc) L − L + diag(1/L_ii)
            let mut q = event_outer[k].clone();
            for i in 0..m {
                for j in 0..m {
                    q[(i, j)] -= block[(i, j)];
                }
            }
            let ql = q.matmul(l);
            for i in 0..m {
                for j in 0..i {
                    grad[at] = 2.0 * ql[(i, j)] - l[(i, j)];
                    at += 1;
                }
                let lii = l[(i, i)];
                grad[at] = (2.0 * ql[(i, i)] - lii + 1.0 / lii) * lii;
                at += 1;
            }
        }
        if !value.is_finite() {
            return (f64::NAN, Vec::new());
        }
        (value, grad)
    }
}
