//! Special functions: spherical harmonics, spherical Bessel/Hankel
//! functions, radial moment integrals and plane-wave partial sums.

pub mod bessel;
pub mod harmonics;
pub mod plane_wave;
pub mod radial;

pub use bessel::{
    bessel_j, sph_bessel_j, sph_bessel_j_all, sph_bessel_y, sph_bessel_y_all, sph_hankel1,
    sph_hankel1_all,
};
pub use harmonics::{
    flat_index, i_pow, neg_i_pow, num_modes, real_sph_harm_all, sph_harm, sph_harm_all,
    sph_harm_complex, sph_harm_complex_all, ComplexDirection, ModeIndex, TOL_VARIETY,
};
pub use plane_wave::plane_wave_partial_sum;
pub use radial::g_mu_nu;
