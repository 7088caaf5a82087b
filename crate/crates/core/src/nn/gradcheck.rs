//! Central-difference gradient checking.
//!
//! The module output is scalarized as `L = Σ r·y` with a fixed random `r`;
//! the analytic gradient of `L` is compared against
//! `(L(θ+h) − L(θ−h)) / 2h` at randomly drawn coordinates of the input and
//! of every parameter tensor. A probe whose ±h forwards take a different
//! discrete branch (relu sign, pooling or projection winner) than the base
//! forward is discarded: the function is not differentiable there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::module::Module;
use crate::error::{Error, Result};
use crate::instrument;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub probes: usize,
    pub step: f64,
    pub seed: u64,
    /// Upper bound on drawn coordinates, counting discarded probes.
    pub max_draws: usize,
    /// Also probe the input tensor (not only parameters).
    pub probe_input: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            probes: 100,
            step: 1e-5,
            seed: 0x5eed,
            max_draws: 2000,
            probe_input: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    /// `"input"` or the parameter name.
    pub target: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub probes: usize,
    pub discarded: usize,
    pub worst: Option<ProbeResult>,
}

impl GradcheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance && self.probes > 0
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

fn scalarize(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

pub fn gradcheck<M: Module + ?Sized>(module: &mut M, input: &Tensor, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let (y0, base_sig) = instrument::branch_signature(|| module.forward(input));
    let y0 = y0?;
    let y1 = module.forward(input)?;
    if y0 != y1 {
        return Err(Error::Numerical(
            "non-deterministic forward: two evaluations differ".into(),
        ));
    }
    let r = Tensor::from_vec(y0.shape(), (0..y0.len()).map(|_| rng.random_range(-1.0..1.0)).collect())?;

    module.zero_grad();
    module.forward(input)?;
    let grad_input = module.backward(&r)?;
    let param_grads: Vec<Tensor> = module.params().iter().map(|p| p.grad.clone()).collect();
    let param_names: Vec<String> = module.params().iter().map(|p| p.name.clone()).collect();

    // Slot 0 is the input when probed; slot k+offset is parameter k.
    let offset = usize::from(cfg.probe_input);
    let slots = param_grads.len() + offset;
    if slots == 0 {
        return Err(Error::Numerical("nothing to probe".into()));
    }

    let mut x = input.clone();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        probes: 0,
        discarded: 0,
        worst: None,
    };
    let mut draws = 0;
    while report.probes < cfg.probes && draws < cfg.max_draws {
        draws += 1;
        let slot = rng.random_range(0..slots);
        let (len, analytic_src) = if slot < offset {
            (x.len(), &grad_input)
        } else {
            (param_grads[slot - offset].len(), &param_grads[slot - offset])
        };
        let index = rng.random_range(0..len);
        let analytic = analytic_src.data()[index];

        let eval = |delta: f64, module: &mut M, x: &mut Tensor| -> Result<(f64, u64)> {
            let original;
            if slot < offset {
                original = x.data()[index];
                x.data_mut()[index] = original + delta;
            } else {
                let p = &mut module.params_mut()[slot - offset].value;
                original = p.data()[index];
                p.data_mut()[index] = original + delta;
            }
            let (y, sig) = instrument::branch_signature(|| module.forward(x));
            if slot < offset {
                x.data_mut()[index] = original;
            } else {
                module.params_mut()[slot - offset].value.data_mut()[index] = original;
            }
            Ok((scalarize(&y?, &r), sig))
        };
        let (plus, sig_plus) = eval(cfg.step, module, &mut x)?;
        let (minus, sig_minus) = eval(-cfg.step, module, &mut x)?;
        if sig_plus != base_sig || sig_minus != base_sig {
            report.discarded += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let err = relative_error(analytic, numeric);
        report.probes += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some(ProbeResult {
                target: if slot < offset {
                    "input".into()
                } else {
                    param_names[slot - offset].clone()
                },
                index,
                analytic,
                numeric,
                rel_error: err,
            });
        }
    }
    // Leave the module's caches consistent with the unperturbed input.
    module.forward(input)?;
    Ok(report)
}
