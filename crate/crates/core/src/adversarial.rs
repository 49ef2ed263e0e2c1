//! Least-squares GAN objective shared by the face-swap and dubbing trainers.

use avatarkit_tensor::{Scalar, Var};

/// `1/2 E(D(real) - 1)^2 + 1/2 E(D(fake))^2`.
pub fn lsgan_discriminator_loss<'g, T: Scalar>(d_real: Var<'g, T>, d_fake: Var<'g, T>) -> Var<'g, T> {
    (d_real.add_scalar(-1.0).square().mean() + d_fake.square().mean()).scale(0.5)
}

/// `E(D(fake) - 1)^2`.
pub fn lsgan_generator_loss<'g, T: Scalar>(d_fake: Var<'g, T>) -> Var<'g, T> {
    d_fake.add_scalar(-1.0).square().mean()
}

/// `(L_D, L_G)` from discriminator outputs on real and generated samples.
pub fn lsgan_losses<'g, T: Scalar>(d_real: Var<'g, T>, d_fake: Var<'g, T>) -> (Var<'g, T>, Var<'g, T>) {
    (lsgan_discriminator_loss(d_real, d_fake), lsgan_generator_loss(d_fake))
}

#[cfg(test)]
mod tests {
    use super::*;
    use avatarkit_tensor::{Array, Graph64};

    fn values(real: f64, fake: f64) -> (f64, f64) {
        let g = Graph64::new();
        let (d, gen) = lsgan_losses(g.constant(Array::full(&[3], real)), g.constant(Array::full(&[3], fake)));
        (d.item(), gen.item())
    }

    #[test]
    fn closed_forms() {
        assert_eq!(values(1.0, 0.0), (0.0, 1.0));
        assert_eq!(values(0.5, 1.0).1, 0.0);
        assert!((values(0.5, 0.5).0 - 0.25).abs() < 1e-12);
        assert!((values(0.8, 0.3).0 - 0.065).abs() < 1e-12);
    }
}
