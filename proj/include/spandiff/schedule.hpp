#pragma once

// Network-free diffusion algebra over span boundary coordinates.
//
// Timesteps are 1-based: t = 1..T. alpha_bar(0) is defined as 1 so that a
// reverse step landing on t_prev = 0 returns the clean estimate exactly.

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace spandiff {

class ScheduleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ScheduleKind { kLinear, kCosine };

std::string_view to_string(ScheduleKind k);
ScheduleKind parse_schedule_kind(std::string_view s);

class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  /// Builds from explicit betas; alpha_bars are the running product of 1 - beta.
  explicit NoiseSchedule(std::vector<double> betas);

  int steps() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const { return betas_.at(index(t)); }
  double alpha(int t) const { return alphas_.at(index(t)); }
  /// Defined for t in [0, T]; alpha_bar(0) == 1.
  double alpha_bar(int t) const;

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

 private:
  std::size_t index(int t) const;

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

struct LinearScheduleRange {
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

/// Linear betas are interpolated over [beta_start, beta_end]; the cosine
/// schedule uses the squared-cosine cumulative curve with offset 0.008 and
/// betas clipped at 0.999.
NoiseSchedule build_schedule(int steps, ScheduleKind kind, LinearScheduleRange linear = {});

/// Continuous boundary coordinates, one row per slot, columns (start, end).
struct SpanTensor {
  Eigen::MatrixX2d values;
  double lambda = 1.0;
  int sentence_len = 0;

  int slots() const { return static_cast<int>(values.rows()); }
};

/// 0-based inclusive integer span.
struct IntSpan {
  int start = 0;
  int end = 0;
  friend bool operator==(const IntSpan&, const IntSpan&) = default;
};

/// value = lambda * ((index + 1) / |S| - 0.5), with index 0-based.
SpanTensor normalize_spans(const std::vector<IntSpan>& spans, int sentence_len, double lambda);

/// Rounds, clamps into [0, |S|-1] and orders each slot.
std::vector<IntSpan> denormalize_spans(const SpanTensor& x);

/// Closed-form corruption x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
SpanTensor forward_sample(const SpanTensor& x0, int t, const Eigen::MatrixX2d& eps, const NoiseSchedule& sched);

struct DdimPlan {
  std::vector<int> tau;
  std::vector<double> sigma;

  int length() const { return static_cast<int>(tau.size()); }
  /// (t, t_prev) pairs visited from t = T down to the terminal step (t_prev = 0).
  std::vector<std::pair<int, int>> steps() const;
};

/// tau_k = floor(k * T / gamma) for k = 1..gamma.
DdimPlan make_ddim_plan(int steps, int gamma);

/// Deterministic (sigma = 0) DDIM update from t to t_prev using cumulative
/// alpha products.
SpanTensor ddim_step(const SpanTensor& x_t, const SpanTensor& x0_hat, int t, int t_prev, const NoiseSchedule& sched);

/// Posterior standard deviation of the ancestral step at t; 0 at t = 1.
double ddpm_sigma(int t, const NoiseSchedule& sched);

/// Ancestral step t -> t-1: the DDIM mean plus sigma_t * eps.
SpanTensor ddpm_reverse_step(const SpanTensor& x_t, const SpanTensor& x0_hat, int t, const NoiseSchedule& sched,
                             const Eigen::MatrixX2d& eps);

}  // namespace spandiff
