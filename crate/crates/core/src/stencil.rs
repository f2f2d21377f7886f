//! Shared pieces of the divergence-form five-point stencil.
//!
//! Diagonal entries of `a` enter through edge conductances, the harmonic
//! mean of the two nodal values. The off-diagonal entry enters per grid
//! cell through the energy `2 a12 g1 g2`, with `g` the cell-averaged
//! gradient; on corners ordered (00, 10, 01, 11) that is the 4x4 block
//! `(a12 / 4) (c1 c2ᵀ + c2 c1ᵀ)`.

pub(crate) const C1: [f64; 4] = [-1.0, 1.0, -1.0, 1.0];
pub(crate) const C2: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];

pub(crate) fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Cell block entry `(r, c)` per unit `a12`.
pub(crate) fn cross_block(r: usize, c: usize) -> f64 {
    0.25 * (C1[r] * C2[c] + C2[r] * C1[c])
}
