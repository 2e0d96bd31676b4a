use serde::{Deserialize, Serialize};

/// Linear warmup from 0 to `peak` over `warmup_steps`, then linear
/// decay to 0 at `total_steps`.
pub fn lr_schedule(step: u64, warmup_steps: u64, total_steps: u64, peak: f64) -> f64 {
    let step = step.min(total_steps);
    if warmup_steps > 0 && step <= warmup_steps {
        return peak * step as f64 / warmup_steps as f64;
    }
    if total_steps <= warmup_steps {
        return peak;
    }
    peak * (total_steps - step) as f64 / (total_steps - warmup_steps) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moment accumulators, one pair per parameter tensor,
/// plus the shared step counter for bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(tensor_lens: &[usize]) -> Self {
        AdamState {
            t: 0,
            m: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam update with decoupled weight decay:
/// param −= rate · m̂ / (√v̂ + ε) + rate · weight_decay · param.
pub fn adam_update(
    params: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    rate: f64,
    h: &AdamHyper,
) {
    debug_assert_eq!(params.len(), grad.len());
    let bc1 = 1.0 - h.beta1.powi(t as i32);
    let bc2 = 1.0 - h.beta2.powi(t as i32);
    for i in 0..params.len() {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * grad[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= rate * m_hat / (v_hat.sqrt() + h.eps) + rate * h.weight_decay * params[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const H: AdamHyper = AdamHyper {
        beta1: 0.9,
        beta2: 0.98,
        eps: 1e-6,
        weight_decay: 0.0,
    };

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_schedule(0, 100, 1000, 1e-4), 0.0);
        assert_eq!(lr_schedule(100, 100, 1000, 1e-4), 1e-4);
        assert_eq!(lr_schedule(1000, 100, 1000, 1e-4), 0.0);
        let mid = lr_schedule(550, 100, 1000, 1e-4);
        assert!((mid - 0.5e-4).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_zero_decay_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let g = vec![0.0, 0.0];
        let mut m = vec![0.0; 2];
        let mut v = vec![0.0; 2];
        adam_update(&mut p, &g, &mut m, &mut v, 1, 1e-3, &H);
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_roughly_rate_against_the_gradient_sign() {
        let mut p = vec![0.0, 0.0];
        let g = vec![3.0, -0.5];
        let mut m = vec![0.0; 2];
        let mut v = vec![0.0; 2];
        adam_update(&mut p, &g, &mut m, &mut v, 1, 1e-3, &H);
        // m̂ = g, v̂ = g² after bias correction: update ≈ −rate · sign(g)
        assert!((p[0] + 1e-3).abs() < 1e-6, "{}", p[0]);
        assert!((p[1] - 1e-3).abs() < 1e-6, "{}", p[1]);
    }

    #[test]
    fn trajectory_matches_independent_scalar_reference() {
        // reference: a from-scratch scalar Adam on f(x) = (x − 3)²
        let h = AdamHyper {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            weight_decay: 0.01,
        };
        let rate = 0.05;
        let mut x_ref = 10.0f64;
        let mut m_ref = 0.0f64;
        let mut v_ref = 0.0f64;
        let mut reference = Vec::new();
        for t in 1..=10u64 {
            let g = 2.0 * (x_ref - 3.0);
            m_ref = 0.9 * m_ref + 0.1 * g;
            v_ref = 0.98 * v_ref + 0.02 * g * g;
            let mh = m_ref / (1.0 - 0.9f64.powi(t as i32));
            let vh = v_ref / (1.0 - 0.98f64.powi(t as i32));
            x_ref -= rate * mh / (vh.sqrt() + 1e-6) + rate * 0.01 * x_ref;
            reference.push(x_ref);
        }

        let mut p = vec![10.0f64];
        let mut m = vec![0.0];
        let mut v = vec![0.0];
        for t in 1..=10u64 {
            let g = vec![2.0 * (p[0] - 3.0)];
            adam_update(&mut p, &g, &mut m, &mut v, t, rate, &h);
            assert!(
                (p[0] - reference[(t - 1) as usize]).abs() < 1e-12,
                "step {t}: {} vs {}",
                p[0],
                reference[(t - 1) as usize]
            );
        }
    }
}
