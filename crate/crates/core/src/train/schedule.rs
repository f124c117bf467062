use std::f64::consts::PI;

/// Learning rate for `epoch`: linear warmup, then cosine annealing to 0 at `t_max`.
pub fn cosine_lr(epoch: usize, base_lr: f64, t_max: usize, warmup: usize) -> f64 {
    if epoch < warmup {
        return base_lr * (epoch + 1) as f64 / warmup as f64;
    }
    if t_max == 0 || epoch >= t_max {
        return 0.0;
    }
    base_lr * (1.0 + (PI * epoch as f64 / t_max as f64).cos()) / 2.0
}
