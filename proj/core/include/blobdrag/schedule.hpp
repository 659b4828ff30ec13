#pragma once

#include <vector>

#include "blobdrag/tensor.hpp"

namespace blobdrag {

/// T-step DDPM coefficient table with linearly spaced betas.
///
/// Steps are 1-based: beta(t) and alpha_bar(t) for t in [1, T]. alpha_bar(0)
/// is defined as 1 so that step 0 is the clean sample.
class NoiseSchedule {
 public:
  NoiseSchedule(int steps, double beta_start, double beta_end);

  int steps() const { return steps_; }
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }

  double beta(int t) const;
  double alpha_bar(int t) const;

 private:
  int steps_;
  double beta_start_;
  double beta_end_;
  std::vector<double> beta_;       // index t-1
  std::vector<double> alpha_bar_;  // index t, alpha_bar_[0] == 1
};

inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.02;

NoiseSchedule make_schedule(int steps, double beta_start = kDefaultBetaStart,
                            double beta_end = kDefaultBetaEnd);

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, for t in [1, T].
Latent forward_noise(const Latent& x0, int t, const Latent& eps, const NoiseSchedule& s);

/// Clean-sample estimate implied by a noise prediction at step t.
Latent predict_x0(const Latent& x_t, const Latent& eps_hat, int t, const NoiseSchedule& s);

/// Deterministic DDIM update from t to t_prev (T >= t > t_prev >= 0).
Latent ddim_step(const Latent& x_t, const Latent& eps_hat, int t, int t_prev,
                 const NoiseSchedule& s);

/// f = t / T, t in [1, T].
struct TimeRatio {
  double f = 1.0;
};
TimeRatio time_ratio(int t, int steps);

}  // namespace blobdrag
