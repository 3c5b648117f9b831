#pragma once

#include <string_view>
#include <utility>

#include "tofvae/tape.hpp"

namespace tofvae {

// Local-statistics window and stabilizing constants for structural similarity.
struct SsimConfig {
  int window_size = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }

  // Gaussian weights, strictly positive, renormalized in T to sum to 1.
  template <typename T>
  Tensor<T> window() const;
};

enum class LossMode { L2, Ssim };

const char* loss_mode_name(LossMode mode);
LossMode parse_loss_mode(std::string_view name);

struct LossConfig {
  LossMode mode = LossMode::L2;
  double ssim_weight = 1000.0;
  double kl_weight = 1.0;
  SsimConfig ssim;
};

// The two addends of the objective; recon + kl == total.
struct LossBreakdown {
  double total = 0;
  double recon = 0;
  double kl = 0;  // already scaled by kl_weight
};

// Sum of squared differences per sample, averaged over the batch dimension.
template <typename T>
typename Tape<T>::Id l2_loss(Tape<T>& tape, typename Tape<T>::Id x,
                             typename Tape<T>::Id y);

// Per-window similarity on the valid grid (h-window+1, w-window+1). Variances
// are floored at 0 before entering the quotient; the floor passes no gradient.
template <typename T>
typename Tape<T>::Id ssim_map(Tape<T>& tape, typename Tape<T>::Id x,
                              typename Tape<T>::Id y, const SsimConfig& cfg);

// weight * (1 - mean(ssim_map(x, y)))
template <typename T>
typename Tape<T>::Id ssim_loss(Tape<T>& tape, typename Tape<T>::Id x,
                               typename Tape<T>::Id y, const SsimConfig& cfg,
                               T weight);

// 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar) / batch
template <typename T>
typename Tape<T>::Id kl_loss(Tape<T>& tape, typename Tape<T>::Id mu,
                             typename Tape<T>::Id logvar);

// Reconstruction term per cfg.mode plus kl_weight-scaled divergence.
template <typename T>
std::pair<typename Tape<T>::Id, LossBreakdown> total_loss(
    Tape<T>& tape, typename Tape<T>::Id target, typename Tape<T>::Id recon,
    typename Tape<T>::Id mu, typename Tape<T>::Id logvar, const LossConfig& cfg);

// Tape-free twin of ssim_map for evaluation paths; same window, same algebra.
template <typename T>
Tensor<T> ssim_map_2d(const Tensor<T>& x, const Tensor<T>& y,
                      const SsimConfig& cfg);

}  // namespace tofvae
