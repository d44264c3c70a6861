#include "spandiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace spandiff {

std::string_view to_string(ScheduleKind k) { return k == ScheduleKind::kLinear ? "linear" : "cosine"; }

ScheduleKind parse_schedule_kind(std::string_view s) {
  if (s == "linear") return ScheduleKind::kLinear;
  if (s == "cosine") return ScheduleKind::kCosine;
  throw ScheduleError("unknown schedule kind '" + std::string(s) + "'");
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) throw ScheduleError("noise schedule needs at least one step");
  alphas_.reserve(betas_.size());
  alpha_bars_.reserve(betas_.size());
  double running = 1.0;
  for (double b : betas_) {
    if (!(b > 0.0 && b < 1.0)) throw ScheduleError("beta must lie in (0, 1), got " + std::to_string(b));
    const double a = 1.0 - b;
    alphas_.push_back(a);
    running *= a;
    alpha_bars_.push_back(running);
  }
}

std::size_t NoiseSchedule::index(int t) const {
  if (t < 1 || t > steps()) {
    throw ScheduleError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  }
  return static_cast<std::size_t>(t - 1);
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  return alpha_bars_.at(index(t));
}

NoiseSchedule build_schedule(int steps, ScheduleKind kind, LinearScheduleRange linear) {
  if (steps < 1) throw ScheduleError("T must be >= 1, got " + std::to_string(steps));
  std::vector<double> betas(static_cast<std::size_t>(steps));
  if (kind == ScheduleKind::kLinear) {
    for (int i = 0; i < steps; ++i) {
      const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
      betas[static_cast<std::size_t>(i)] = linear.beta_start + frac * (linear.beta_end - linear.beta_start);
    }
  } else {
    constexpr double kOffset = 0.008;
    constexpr double kMaxBeta = 0.999;
    auto f = [&](int t) {
      const double c = std::cos((static_cast<double>(t) / steps + kOffset) / (1.0 + kOffset) * std::numbers::pi / 2);
      return c * c;
    };
    const double f0 = f(0);
    for (int t = 1; t <= steps; ++t) {
      const double beta = 1.0 - (f(t) / f0) / (f(t - 1) / f0);
      betas[static_cast<std::size_t>(t - 1)] = std::clamp(beta, 1e-8, kMaxBeta);
    }
  }
  return NoiseSchedule(std::move(betas));
}

SpanTensor normalize_spans(const std::vector<IntSpan>& spans, int sentence_len, double lambda) {
  if (sentence_len <= 0) throw ScheduleError("cannot normalize spans for an empty sentence");
  SpanTensor x;
  x.lambda = lambda;
  x.sentence_len = sentence_len;
  x.values.resize(static_cast<Eigen::Index>(spans.size()), 2);
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto& s = spans[i];
    if (s.start < 0 || s.start > s.end || s.end >= sentence_len) {
      throw ScheduleError("span (" + std::to_string(s.start + 1) + "," + std::to_string(s.end + 1) +
                          ") invalid for sentence length " + std::to_string(sentence_len));
    }
    const auto row = static_cast<Eigen::Index>(i);
    x.values(row, 0) = lambda * (static_cast<double>(s.start + 1) / sentence_len - 0.5);
    x.values(row, 1) = lambda * (static_cast<double>(s.end + 1) / sentence_len - 0.5);
  }
  return x;
}

std::vector<IntSpan> denormalize_spans(const SpanTensor& x) {
  const int n = x.sentence_len;
  auto to_index = [&](double v) {
    const double pos = std::round((v / x.lambda + 0.5) * n);
    const double clamped = std::clamp(pos, 1.0, static_cast<double>(n));
    return static_cast<int>(clamped) - 1;
  };
  std::vector<IntSpan> out;
  out.reserve(static_cast<std::size_t>(x.slots()));
  for (Eigen::Index i = 0; i < x.values.rows(); ++i) {
    int s = to_index(x.values(i, 0));
    int e = to_index(x.values(i, 1));
    if (s > e) std::swap(s, e);
    out.push_back({s, e});
  }
  return out;
}

SpanTensor forward_sample(const SpanTensor& x0, int t, const Eigen::MatrixX2d& eps, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.steps()) throw ScheduleError("timestep " + std::to_string(t) + " out of range");
  if (eps.rows() != x0.values.rows()) throw ScheduleError("noise shape does not match span tensor");
  const double ab = sched.alpha_bar(t);
  SpanTensor xt = x0;
  xt.values = std::sqrt(ab) * x0.values + std::sqrt(1.0 - ab) * eps;
  return xt;
}

std::vector<std::pair<int, int>> DdimPlan::steps() const {
  std::vector<std::pair<int, int>> out;
  for (int k = length() - 1; k >= 0; --k) {
    out.emplace_back(tau[static_cast<std::size_t>(k)], k > 0 ? tau[static_cast<std::size_t>(k - 1)] : 0);
  }
  return out;
}

DdimPlan make_ddim_plan(int steps, int gamma) {
  if (steps < 1) throw ScheduleError("T must be >= 1");
  if (gamma < 1 || gamma > steps) {
    throw ScheduleError("gamma must lie in [1, T]; got gamma=" + std::to_string(gamma) +
                        " T=" + std::to_string(steps));
  }
  DdimPlan plan;
  for (int k = 1; k <= gamma; ++k) {
    plan.tau.push_back(static_cast<int>((static_cast<long long>(k) * steps) / gamma));
  }
  plan.sigma.assign(static_cast<std::size_t>(gamma), 0.0);
  return plan;
}

SpanTensor ddim_step(const SpanTensor& x_t, const SpanTensor& x0_hat, int t, int t_prev, const NoiseSchedule& sched) {
  if (t_prev >= t) {
    throw ScheduleError("ddim_step needs t_prev < t; got t=" + std::to_string(t) + " t_prev=" + std::to_string(t_prev));
  }
  if (t_prev < 0) throw ScheduleError("t_prev must be >= 0");
  const double ab_t = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar(t_prev);
  SpanTensor out = x_t;
  const Eigen::MatrixX2d eps_hat = (x_t.values - std::sqrt(ab_t) * x0_hat.values) / std::sqrt(1.0 - ab_t);
  out.values = std::sqrt(ab_prev) * x0_hat.values + std::sqrt(1.0 - ab_prev) * eps_hat;
  return out;
}

double ddpm_sigma(int t, const NoiseSchedule& sched) {
  const double ab_t = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar(t - 1);
  return std::sqrt((1.0 - ab_prev) / (1.0 - ab_t) * sched.beta(t));
}

SpanTensor ddpm_reverse_step(const SpanTensor& x_t, const SpanTensor& x0_hat, int t, const NoiseSchedule& sched,
                             const Eigen::MatrixX2d& eps) {
  SpanTensor out = ddim_step(x_t, x0_hat, t, t - 1, sched);
  out.values += ddpm_sigma(t, sched) * eps;
  return out;
}

}  // namespace spandiff
