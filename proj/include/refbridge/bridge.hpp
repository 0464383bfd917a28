#pragma once

#include <functional>
#include <vector>

#include "refbridge/rng.hpp"
#include "refbridge/tensor.hpp"

namespace refbridge {

struct BridgeCoefficients {
    double alpha, beta, sigma;
};

struct BridgeDerivatives {
    double alpha_dot, beta_dot, sigma_dot;
};

// Mixing schedule for the short restoration bridge on t in [0, t_max]:
//   alpha(t) = (1-t)(t_max-t)/t_max,  beta(t) = (1-t)t/t_max,  sigma(t) = t.
// The three weights sum to 1 everywhere; the endpoints are (1,0,0) at t=0
// (state == clean latent) and (0, 0.8, 0.2) at t=t_max (state == biased
// mixture of the degraded latent and Gaussian noise).
struct BridgeSchedule {
    double t_max = 0.2;

    // Throws std::out_of_range when t lies outside [0, t_max].
    void check_time(double t) const;

    BridgeCoefficients coefficients(double t) const;

    // Closed forms alpha' = 10t-6, beta' = 5-10t, sigma' = 1 (for t_max=0.2);
    // kept generic in t_max and cross-checked against central differences of
    // coefficients() by the test suite before being trusted anywhere else.
    BridgeDerivatives coefficient_derivatives(double t) const;

    // Scalar mixture and its exact time derivative, evaluated entirely in
    // double precision so finite-difference comparisons are limited only by
    // the h^2 truncation term, not by storage rounding.
    double mix_value(double z_hs, double z_ls, double eps, double t) const;
    double velocity_value(double z_hs, double z_ls, double eps, double t) const;
};

// One training draw: the interpolated state z_t and the regression target for
// the velocity field. target_velocity is computed with the SAME eps as z_t;
// the time derivative is taken for a fixed noise draw.
struct BridgeSample {
    double t;
    Tensor z_t;
    Tensor eps;
    Tensor target_velocity;
};

BridgeSample forward_sample(const BridgeSchedule& sched, const Tensor& z_hs,
                            const Tensor& z_ls, double t, const Tensor& eps);

// Velocity field queried by the sampler: v(z, t).
using VelocityFn = std::function<Tensor(const Tensor&, double)>;

// Integrates dz/dt = velocity(z, t) from t_max down to 0 with explicit Euler
// at uniform step h = t_max/steps, starting from z = 0.8*z_ls + 0.2*eps.
// Throws NumericError naming the step if the state goes non-finite.
Tensor sample_bridge(const BridgeSchedule& sched, const VelocityFn& velocity,
                     const Tensor& z_ls, const Tensor& eps, int steps = 6);

// Standard-normal tensor drawn from rng in flat index order.
Tensor sample_noise(const std::vector<int>& shape, Rng& rng);

}  // namespace refbridge
