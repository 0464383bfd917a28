#include "refbridge/bridge.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "refbridge/errors.hpp"

namespace refbridge {

void BridgeSchedule::check_time(double t) const {
    if (!(t >= 0.0 && t <= t_max * (1.0 + 1e-12)))
        throw std::out_of_range("bridge time t=" + std::to_string(t) +
                                " outside [0, " + std::to_string(t_max) + "]");
}

BridgeCoefficients BridgeSchedule::coefficients(double t) const {
    check_time(t);
    // Factored so the endpoints are exact in floating point: t/t_max hits
    // 0 and 1 exactly, and 1 - t_max rounds to the same double as the
    // closed-form endpoint value.
    return {(1.0 - t) * ((t_max - t) / t_max), (1.0 - t) * (t / t_max), t};
}

BridgeDerivatives BridgeSchedule::coefficient_derivatives(double t) const {
    check_time(t);
    const double inv = 1.0 / t_max;
    return {(2.0 * t - 1.0 - t_max) * inv, (1.0 - 2.0 * t) * inv, 1.0};
}

double BridgeSchedule::mix_value(double z_hs, double z_ls, double eps, double t) const {
    const auto c = coefficients(t);
    return c.alpha * z_hs + c.beta * z_ls + c.sigma * eps;
}

double BridgeSchedule::velocity_value(double z_hs, double z_ls, double eps, double t) const {
    const auto d = coefficient_derivatives(t);
    return d.alpha_dot * z_hs + d.beta_dot * z_ls + d.sigma_dot * eps;
}

BridgeSample forward_sample(const BridgeSchedule& sched, const Tensor& z_hs,
                            const Tensor& z_ls, double t, const Tensor& eps) {
    sched.check_time(t);
    if (z_hs.shape() != z_ls.shape() || z_hs.shape() != eps.shape())
        throw ShapeError("forward_sample: shapes differ: z_hs " + shape_str(z_hs.shape()) +
                         ", z_ls " + shape_str(z_ls.shape()) + ", eps " + shape_str(eps.shape()));
    const auto c = sched.coefficients(t);
    const auto d = sched.coefficient_derivatives(t);
    Tensor z_t = add(add(scale(z_hs, static_cast<float>(c.alpha)),
                         scale(z_ls, static_cast<float>(c.beta))),
                     scale(eps, static_cast<float>(c.sigma)));
    Tensor target = add(add(scale(z_hs, static_cast<float>(d.alpha_dot)),
                            scale(z_ls, static_cast<float>(d.beta_dot))),
                        scale(eps, static_cast<float>(d.sigma_dot)));
    return {t, std::move(z_t), eps, std::move(target)};
}

Tensor sample_bridge(const BridgeSchedule& sched, const VelocityFn& velocity,
                     const Tensor& z_ls, const Tensor& eps, int steps) {
    if (steps < 1)
        throw ConfigError("sample_bridge: steps must be >= 1, got " + std::to_string(steps));
    if (z_ls.shape() != eps.shape())
        throw ShapeError("sample_bridge: z_ls " + shape_str(z_ls.shape()) + " vs eps " +
                         shape_str(eps.shape()));
    const auto c_end = sched.coefficients(sched.t_max);
    Tensor z = add(scale(z_ls, static_cast<float>(c_end.beta)),
                   scale(eps, static_cast<float>(c_end.sigma)));
    const double h = sched.t_max / steps;
    for (int k = 0; k < steps; ++k) {
        const double t_k = sched.t_max - k * h;
        Tensor v = velocity(z, t_k);
        if (v.shape() != z.shape())
            throw ShapeError("sample_bridge: velocity returned " + shape_str(v.shape()) +
                             " for state " + shape_str(z.shape()));
        z = sub(z, scale(v, static_cast<float>(h)));
        for (float x : z.data())
            if (!std::isfinite(x))
                throw NumericError("sample_bridge: non-finite state after step " +
                                   std::to_string(k + 1) + " of " + std::to_string(steps));
    }
    return z;
}

Tensor sample_noise(const std::vector<int>& shape, Rng& rng) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    std::vector<float> data(n);
    for (auto& x : data) x = static_cast<float>(rng.normal());
    return Tensor::from_data(shape, std::move(data));
}

}  // namespace refbridge
