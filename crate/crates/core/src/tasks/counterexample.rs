/// `f(w) = (w-1)^2/2 + [w-1]_+^2/2`, minimized at `w* = 1`.
pub fn counterexample_loss(w: f64) -> f64 {
    let r = w - 1.0;
    0.5 * r * r + 0.5 * r.max(0.0).powi(2)
}

/// `f'(w) = (w-1) + [w-1]_+`.
pub fn counterexample_grad(w: f64) -> f64 {
    let r = w - 1.0;
    r + r.max(0.0)
}
