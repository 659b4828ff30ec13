#include "blobdrag/schedule.hpp"

#include <cmath>
#include <string>

#include "blobdrag/error.hpp"

namespace blobdrag {

NoiseSchedule::NoiseSchedule(int steps, double beta_start, double beta_end)
    : steps_(steps), beta_start_(beta_start), beta_end_(beta_end) {
  if (steps < 2) throw InvalidArgument("schedule needs at least 2 steps");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw InvalidArgument("schedule requires 0 < beta_start <= beta_end < 1");
  }
  beta_.resize(static_cast<std::size_t>(steps));
  alpha_bar_.resize(static_cast<std::size_t>(steps) + 1);
  alpha_bar_[0] = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(steps - 1);
    beta_[static_cast<std::size_t>(i)] = beta_start + frac * (beta_end - beta_start);
    alpha_bar_[static_cast<std::size_t>(i) + 1] =
        alpha_bar_[static_cast<std::size_t>(i)] * (1.0 - beta_[static_cast<std::size_t>(i)]);
  }
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > steps_) throw InvalidArgument("beta: step out of range");
  return beta_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps_) throw InvalidArgument("alpha_bar: step out of range");
  return alpha_bar_[static_cast<std::size_t>(t)];
}

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
  return NoiseSchedule(steps, beta_start, beta_end);
}

Latent forward_noise(const Latent& x0, int t, const Latent& eps, const NoiseSchedule& s) {
  if (!x0.same_shape(eps)) throw InvalidArgument("forward_noise: eps shape differs from x0");
  if (t < 1 || t > s.steps()) {
    throw InvalidArgument("forward_noise: t=" + std::to_string(t) + " outside [1, T]");
  }
  const double ab = s.alpha_bar(t);
  const double signal = std::sqrt(ab);
  const double noise = std::sqrt(1.0 - ab);
  Latent out(x0.height(), x0.width(), x0.channels());
  auto o = out.data();
  auto a = x0.data();
  auto e = eps.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = signal * a[i] + noise * e[i];
  return out;
}

Latent predict_x0(const Latent& x_t, const Latent& eps_hat, int t, const NoiseSchedule& s) {
  if (!x_t.same_shape(eps_hat)) throw InvalidArgument("predict_x0: shape mismatch");
  const double ab = s.alpha_bar(t);
  const double inv_signal = 1.0 / std::sqrt(ab);
  const double noise = std::sqrt(1.0 - ab);
  Latent out(x_t.height(), x_t.width(), x_t.channels());
  auto o = out.data();
  auto x = x_t.data();
  auto e = eps_hat.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = (x[i] - noise * e[i]) * inv_signal;
  return out;
}

Latent ddim_step(const Latent& x_t, const Latent& eps_hat, int t, int t_prev,
                 const NoiseSchedule& s) {
  if (!(t <= s.steps() && t > t_prev && t_prev >= 0)) {
    throw InvalidArgument("ddim_step requires T >= t > t_prev >= 0");
  }
  Latent x0 = predict_x0(x_t, eps_hat, t, s);
  if (t_prev == 0) return x0;
  const double ab_prev = s.alpha_bar(t_prev);
  const double signal = std::sqrt(ab_prev);
  const double noise = std::sqrt(1.0 - ab_prev);
  auto o = x0.data();
  auto e = eps_hat.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = signal * o[i] + noise * e[i];
  return x0;
}

TimeRatio time_ratio(int t, int steps) {
  if (steps < 1 || t < 1 || t > steps) throw InvalidArgument("time_ratio: t outside [1, T]");
  return {static_cast<double>(t) / static_cast<double>(steps)};
}

}  // namespace blobdrag
