//! Finite-difference gradient checking.
//!
//! Every parameter is nudged by `h = h_rel * max(1, |θ|)` in both directions
//! and the central difference of the scalar loss is compared against the
//! analytic gradient from [`Network::backward`]. Parameters whose nudge flips
//! a ReLU sign or a pooling winner sit on a non-differentiable point; they
//! are counted as excluded rather than compared.

use std::fmt;

use crate::error::{Error, Result};
use crate::layers::Fault;
use crate::losses::Loss;
use crate::network::{Network, Traces, CONV_ACTIVATION};
use crate::tensor::Tensor;

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-8;
/// Gradients smaller than this (on both routes) are judged by absolute error.
pub const NEAR_ZERO: f64 = 1e-6;
/// Absolute agreement required of near-zero gradients.
pub const ABS_TOL: f64 = 1e-9;

pub const DEFAULT_THRESHOLD: f64 = 1e-6;
pub const DEFAULT_H_REL: f64 = 1e-4;

/// `(f(x + h) - f(x - h)) / 2h`.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> Result<f64> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Domain(format!("step must be positive, got {h}")));
    }
    let (up, down) = (f(x + h), f(x - h));
    if !up.is_finite() || !down.is_finite() {
        return Err(Error::Domain(format!("function is not finite around {x}")));
    }
    Ok((up - down) / (2.0 * h))
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub size: usize,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    /// Index within the group of the worst relative error.
    pub argmax: usize,
    /// Near-zero gradients accepted on absolute error instead.
    pub n_near_zero: usize,
    pub max_abs_err_near_zero: f64,
    /// Parameters sitting on a kink or pooling tie.
    pub n_excluded: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub threshold: f64,
    pub h_rel: f64,
    pub groups: Vec<GroupReport>,
}

impl GradReport {
    pub fn pass(&self) -> bool {
        self.groups.iter().all(|g| g.pass)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_rel_err)
            .fold(0.0, f64::max)
    }

    /// The group holding the worst relative error.
    pub fn worst(&self) -> Option<&GroupReport> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    pub fn n_excluded(&self) -> usize {
        self.groups.iter().map(|g| g.n_excluded).sum()
    }

    pub const CSV_HEADER: &'static str = "group,max_rel_err,mean_rel_err,n_excluded,pass";

    /// One machine-readable row per group, matching [`GradReport::CSV_HEADER`].
    pub fn csv_rows(&self) -> Vec<String> {
        self.groups
            .iter()
            .map(|g| {
                format!(
                    "{},{:.6e},{:.6e},{},{}",
                    g.name, g.max_rel_err, g.mean_rel_err, g.n_excluded, g.pass
                )
            })
            .collect()
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>6} {:>13} {:>13} {:>9} {:>9}  result",
            "group", "size", "max_rel_err", "mean_rel_err", "near_zero", "excluded"
        )?;
        for g in &self.groups {
            writeln!(
                f,
                "{:<16} {:>6} {:>13.6e} {:>13.6e} {:>9} {:>9}  {}",
                g.name,
                g.size,
                g.max_rel_err,
                g.mean_rel_err,
                g.n_near_zero,
                g.n_excluded,
                if g.pass { "pass" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "threshold {:.6e}, h_rel {:.6e}: {}",
            self.threshold,
            self.h_rel,
            if self.pass() { "PASS" } else { "FAIL" }
        )
    }
}

/// Which side of every kink and which pooling winner a forward pass landed on.
#[derive(Debug, PartialEq, Eq)]
struct Regime {
    signs: Vec<bool>,
    winners: Vec<usize>,
}

fn regime(net: &Network, traces: &Traces) -> Regime {
    let mut signs = Vec::new();
    if CONV_ACTIVATION.has_kink() {
        signs.extend(traces.conv.preact.data().iter().map(|&z| z >= 0.0));
    }
    for (layer, trace) in net.dense().iter().zip(&traces.dense) {
        if layer.activation().has_kink() {
            signs.extend(trace.preact.data().iter().map(|&z| z >= 0.0));
        }
    }
    Regime {
        signs,
        winners: traces.pool.winners.clone(),
    }
}

pub fn check_network(
    net: &Network,
    image: &Tensor,
    label: &Tensor,
    threshold: f64,
    h_rel: f64,
) -> Result<GradReport> {
    check_network_with(net, image, label, threshold, h_rel, None)
}

/// [`check_network`] against a backward pass with an injected defect.
pub fn check_network_with(
    net: &Network,
    image: &Tensor,
    label: &Tensor,
    threshold: f64,
    h_rel: f64,
    fault: Option<Fault>,
) -> Result<GradReport> {
    if !(h_rel > 0.0 && h_rel <= 1e-3) {
        return Err(Error::Domain(format!(
            "h_rel must lie in (0, 1e-3], got {h_rel}"
        )));
    }
    let (yhat, traces) = net.forward(image)?;
    let base_loss = Loss::CrossEntropy.eval(&yhat, label)?;
    if !base_loss.is_finite() {
        return Err(Error::Domain(
            "loss is not finite at the checked point".into(),
        ));
    }
    let analytic = net.backward_with(&traces, label, fault)?;
    let base_regime = regime(net, &traces);

    let mut scratch = net.clone();
    let mut groups = Vec::new();
    for (group_idx, (name, grads)) in analytic.groups().into_iter().enumerate() {
        let size = grads.len();
        let mut rel_errs = Vec::with_capacity(size);
        let (mut max_rel, mut argmax) = (0.0f64, 0usize);
        let (mut n_near_zero, mut max_abs) = (0usize, 0.0f64);
        let mut n_excluded = 0usize;
        for (k, &a) in grads.iter().enumerate() {
            let theta = scratch.param_groups_mut()[group_idx].1[k];
            let h = h_rel * theta.abs().max(1.0);

            let mut eval = |value: f64| -> Result<(f64, Regime)> {
                scratch.param_groups_mut()[group_idx].1[k] = value;
                let (out, tr) = scratch.forward(image)?;
                let loss = Loss::CrossEntropy.eval(&out, label)?;
                Ok((loss, regime(&scratch, &tr)))
            };
            let up = eval(theta + h);
            let down = eval(theta - h);
            scratch.param_groups_mut()[group_idx].1[k] = theta;
            let ((l_up, r_up), (l_down, r_down)) = (up?, down?);
            if !l_up.is_finite() || !l_down.is_finite() {
                return Err(Error::Domain(format!(
                    "loss not finite perturbing {name}[{k}]"
                )));
            }
            if r_up != base_regime || r_down != base_regime {
                n_excluded += 1;
                continue;
            }
            let numeric = (l_up - l_down) / (2.0 * h);
            if a.abs().max(numeric.abs()) < NEAR_ZERO {
                let abs = (a - numeric).abs();
                if abs <= ABS_TOL {
                    n_near_zero += 1;
                    max_abs = max_abs.max(abs);
                    continue;
                }
            }
            let rel = relative_error(a, numeric);
            if rel > max_rel || rel_errs.is_empty() {
                max_rel = max_rel.max(rel);
                argmax = k;
            }
            rel_errs.push(rel);
        }
        let mean = if rel_errs.is_empty() {
            0.0
        } else {
            rel_errs.iter().sum::<f64>() / rel_errs.len() as f64
        };
        groups.push(GroupReport {
            name,
            size,
            max_rel_err: max_rel,
            mean_rel_err: mean,
            argmax,
            n_near_zero,
            max_abs_err_near_zero: max_abs,
            n_excluded,
            pass: max_rel <= threshold,
        });
    }
    debug_assert_eq!(&scratch, net);
    Ok(GradReport {
        threshold,
        h_rel,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{one_hot, synth_bars};
    use crate::network::Architecture;

    fn fixture(seed: u64) -> (Network, Tensor, Tensor) {
        let arch = Architecture {
            in_c: 1,
            in_h: 8,
            in_w: 8,
            conv_kernels: 2,
            conv_size: 3,
            conv_stride: 1,
            conv_pad: 0,
            pool_window: 2,
            pool_stride: 2,
            dense_widths: vec![8, 2],
        };
        let data = synth_bars(2, 8, 8, seed).unwrap();
        (
            Network::init(&arch, seed).unwrap(),
            data.images()[0].clone(),
            data.labels()[0].clone(),
        )
    }

    #[test]
    fn central_diff_examples() {
        let d = central_diff(|x| x * x, 3.0, 1e-5).unwrap();
        assert!((d - 6.0).abs() <= 1e-9);
        assert_eq!(central_diff(|_| 4.2, 1.0, 1e-3).unwrap(), 0.0);
        let d = central_diff(f64::sin, 0.7, 1e-6).unwrap();
        assert!((d - 0.7f64.cos()).abs() <= 1e-9);
        assert!(central_diff(|x| 1.0 / x, 0.0, 1e-3).is_ok());
        assert!(matches!(
            central_diff(|x| x.ln(), 0.0, 1e-3),
            Err(Error::Domain(_))
        ));
        assert!(central_diff(|x| x, 0.0, 0.0).is_err());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-18);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
    }

    #[test]
    fn correct_backward_passes() {
        for seed in 0..3 {
            let (net, x, y) = fixture(seed);
            let report = check_network(&net, &x, &y, DEFAULT_THRESHOLD, DEFAULT_H_REL).unwrap();
            assert!(report.pass(), "seed {seed}\n{report}");
            assert_eq!(report.groups.len(), 2 + 2 * net.dense().len());
            assert_eq!(report.csv_rows().len(), report.groups.len());
        }
    }

    #[test]
    fn checker_leaves_the_network_untouched() {
        let (net, x, y) = fixture(4);
        let copy = net.clone();
        check_network(&net, &x, &y, DEFAULT_THRESHOLD, DEFAULT_H_REL).unwrap();
        assert_eq!(net, copy);
    }

    #[test]
    fn impossible_threshold_fails() {
        let (net, x, y) = fixture(1);
        assert!(!check_network(&net, &x, &y, 1e-12, DEFAULT_H_REL)
            .unwrap()
            .pass());
    }

    #[test]
    fn rejects_bad_step() {
        let (net, x, y) = fixture(1);
        assert!(check_network(&net, &x, &y, 1e-6, 0.0).is_err());
        assert!(check_network(&net, &x, &y, 1e-6, 1e-2).is_err());
    }

    #[test]
    fn dropped_derivative_is_caught_in_dense_layers() {
        let (net, x, y) = fixture(2);
        let report = check_network_with(
            &net,
            &x,
            &y,
            1e-6,
            DEFAULT_H_REL,
            Some(Fault::DropActivationDerivative),
        )
        .unwrap();
        assert!(!report.pass());
        let last = report
            .groups
            .iter()
            .find(|g| g.name == "dense1.biases")
            .unwrap();
        assert!(!last.pass);
        assert!(report.worst().unwrap().name.starts_with("dense") || !report.groups[4].pass);
    }

    #[test]
    fn every_fault_is_caught() {
        let (net, x, y) = fixture(3);
        for fault in Fault::ALL {
            let report =
                check_network_with(&net, &x, &y, 1e-6, DEFAULT_H_REL, Some(fault)).unwrap();
            assert!(!report.pass(), "{fault:?} slipped through\n{report}");
        }
    }

    #[test]
    fn saturated_fixture_uses_absolute_rule() {
        let (mut net, x, _) = fixture(0);
        for (_, g) in net.param_groups_mut() {
            g.fill(0.0);
        }
        let n = net.param_groups_mut().len();
        net.param_groups_mut()[n - 1]
            .1
            .copy_from_slice(&[-50.0, 50.0]);
        let y = one_hot(1, 2).unwrap();
        let report = check_network(&net, &x, &y, 1e-6, DEFAULT_H_REL).unwrap();
        assert!(report.pass(), "{report}");
        let near_zero: usize = report.groups.iter().map(|g| g.n_near_zero).sum();
        assert!(near_zero > 0);
        assert!(report
            .groups
            .iter()
            .all(|g| g.max_abs_err_near_zero <= ABS_TOL));
    }

    #[test]
    fn report_renders() {
        let (net, x, y) = fixture(0);
        let report = check_network(&net, &x, &y, 1e-6, DEFAULT_H_REL).unwrap();
        let text = report.to_string();
        assert!(text.contains("conv.kernels"));
        assert!(text.ends_with("PASS"));
        assert!(report.csv_rows()[0].starts_with("conv.kernels,"));
    }
}
