#include "tofvae/losses.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace tofvae {

template <typename T>
Tensor<T> SsimConfig::window() const {
  if (window_size < 1 || sigma <= 0)
    throw Error::data(fmt::format("ssim window: size {} sigma {} invalid",
                                  window_size, sigma));
  const int64_t k = window_size;
  Tensor<T> w({1, 1, k, k});
  const double center = (k - 1) / 2.0;
  const double denom = 2.0 * sigma * sigma;
  for (int64_t i = 0; i < k; ++i)
    for (int64_t j = 0; j < k; ++j) {
      const double d2 = (i - center) * (i - center) + (j - center) * (j - center);
      w.at(0, 0, i, j) = static_cast<T>(std::exp(-d2 / denom));
    }
  T sum = 0;
  for (int64_t i = 0; i < w.numel(); ++i) sum += w.data()[i];
  for (int64_t i = 0; i < w.numel(); ++i) w.data()[i] /= sum;
  return w;
}

template Tensor<float> SsimConfig::window<float>() const;
template Tensor<double> SsimConfig::window<double>() const;
template Tensor<long double> SsimConfig::window<long double>() const;

const char* loss_mode_name(LossMode mode) {
  return mode == LossMode::L2 ? "l2" : "ssim";
}

LossMode parse_loss_mode(std::string_view name) {
  if (name == "l2") return LossMode::L2;
  if (name == "ssim") return LossMode::Ssim;
  throw Error::usage(fmt::format("unknown loss mode '{}', expected l2 or ssim", name));
}

template <typename T>
typename Tape<T>::Id l2_loss(Tape<T>& tape, typename Tape<T>::Id x,
                             typename Tape<T>::Id y) {
  check_same_shape(tape.value(x).shape(), tape.value(y).shape(), "l2_loss");
  const int64_t batch = tape.value(x).shape().n;
  auto d = tape.sub(x, y);
  auto sq = tape.square(d);
  auto s = tape.reduce_sum(sq);
  return tape.mul_scalar(s, T(1) / T(batch));
}

template <typename T>
typename Tape<T>::Id ssim_map(Tape<T>& tape, typename Tape<T>::Id x,
                              typename Tape<T>::Id y, const SsimConfig& cfg) {
  const Shape4 xs = tape.value(x).shape();
  check_same_shape(xs, tape.value(y).shape(), "ssim_map");
  if (xs.h < cfg.window_size || xs.w < cfg.window_size)
    throw Error::data(fmt::format(
        "ssim_map: spatial size {}x{} smaller than window {}", xs.h, xs.w,
        cfg.window_size));
  const Tensor<T> win = cfg.window<T>();
  const T c1 = static_cast<T>(cfg.c1());
  const T c2 = static_cast<T>(cfg.c2());
  const T var_cap = std::numeric_limits<T>::max();

  auto mu_x = tape.fixed_window_mean(x, win);
  auto mu_y = tape.fixed_window_mean(y, win);
  auto mu_x2 = tape.square(mu_x);
  auto mu_y2 = tape.square(mu_y);
  auto mu_xy = tape.mul(mu_x, mu_y);
  auto var_x = tape.clamp(tape.sub(tape.fixed_window_mean(tape.square(x), win), mu_x2),
                          T(0), var_cap);
  auto var_y = tape.clamp(tape.sub(tape.fixed_window_mean(tape.square(y), win), mu_y2),
                          T(0), var_cap);
  auto cov_xy = tape.sub(tape.fixed_window_mean(tape.mul(x, y), win), mu_xy);

  auto num = tape.mul(tape.add_scalar(tape.mul_scalar(mu_xy, T(2)), c1),
                      tape.add_scalar(tape.mul_scalar(cov_xy, T(2)), c2));
  auto den = tape.mul(tape.add_scalar(tape.add(mu_x2, mu_y2), c1),
                      tape.add_scalar(tape.add(var_x, var_y), c2));
  return tape.div(num, den);
}

template <typename T>
typename Tape<T>::Id ssim_loss(Tape<T>& tape, typename Tape<T>::Id x,
                               typename Tape<T>::Id y, const SsimConfig& cfg,
                               T weight) {
  auto map = ssim_map(tape, x, y, cfg);
  auto m = tape.reduce_mean(map);
  auto one = tape.constant(Tensor<T>::scalar(T(1)));
  return tape.mul_scalar(tape.sub(one, m), weight);
}

template <typename T>
typename Tape<T>::Id kl_loss(Tape<T>& tape, typename Tape<T>::Id mu,
                             typename Tape<T>::Id logvar) {
  check_same_shape(tape.value(mu).shape(), tape.value(logvar).shape(), "kl_loss");
  const int64_t batch = tape.value(mu).shape().n;
  auto term = tape.sub(tape.add_scalar(tape.add(tape.square(mu), tape.exp(logvar)), T(-1)),
                       logvar);
  auto s = tape.reduce_sum(term);
  return tape.mul_scalar(s, T(0.5) / T(batch));
}

template <typename T>
std::pair<typename Tape<T>::Id, LossBreakdown> total_loss(
    Tape<T>& tape, typename Tape<T>::Id target, typename Tape<T>::Id recon,
    typename Tape<T>::Id mu, typename Tape<T>::Id logvar, const LossConfig& cfg) {
  typename Tape<T>::Id recon_term;
  if (cfg.mode == LossMode::L2)
    recon_term = l2_loss(tape, recon, target);
  else
    recon_term = ssim_loss(tape, recon, target, cfg.ssim,
                           static_cast<T>(cfg.ssim_weight));
  auto kl_term = tape.mul_scalar(kl_loss(tape, mu, logvar),
                                 static_cast<T>(cfg.kl_weight));
  auto total = tape.add(recon_term, kl_term);
  LossBreakdown parts;
  parts.recon = static_cast<double>(tape.value(recon_term).item());
  parts.kl = static_cast<double>(tape.value(kl_term).item());
  parts.total = static_cast<double>(tape.value(total).item());
  return {total, parts};
}

template <typename T>
Tensor<T> ssim_map_2d(const Tensor<T>& x, const Tensor<T>& y,
                      const SsimConfig& cfg) {
  check_same_shape(x.shape(), y.shape(), "ssim_map_2d");
  if (x.shape().h < cfg.window_size || x.shape().w < cfg.window_size)
    throw Error::data(fmt::format(
        "ssim_map_2d: spatial size {}x{} smaller than window {}", x.shape().h,
        x.shape().w, cfg.window_size));
  const Tensor<T> win = cfg.window<T>();
  const T c1 = static_cast<T>(cfg.c1());
  const T c2 = static_cast<T>(cfg.c2());

  Tensor<T> x2(x.shape()), y2(x.shape()), xy(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) {
    const T a = x.data()[i], b = y.data()[i];
    x2.data()[i] = a * a;
    y2.data()[i] = b * b;
    xy.data()[i] = a * b;
  }
  Tensor<T> mu_x = kernels::window_corr_valid(x, win);
  Tensor<T> mu_y = kernels::window_corr_valid(y, win);
  Tensor<T> ex2 = kernels::window_corr_valid(x2, win);
  Tensor<T> ey2 = kernels::window_corr_valid(y2, win);
  Tensor<T> exy = kernels::window_corr_valid(xy, win);

  Tensor<T> out(mu_x.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    const T mx = mu_x.data()[i], my = mu_y.data()[i];
    const T vx = std::max(T(0), ex2.data()[i] - mx * mx);
    const T vy = std::max(T(0), ey2.data()[i] - my * my);
    const T cxy = exy.data()[i] - mx * my;
    const T num = (T(2) * mx * my + c1) * (T(2) * cxy + c2);
    const T den = (mx * mx + my * my + c1) * (vx + vy + c2);
    out.data()[i] = num / den;
  }
  return out;
}

#define TOFVAE_INSTANTIATE_LOSSES(T)                                              \
  template Tape<T>::Id l2_loss<T>(Tape<T>&, Tape<T>::Id, Tape<T>::Id);            \
  template Tape<T>::Id ssim_map<T>(Tape<T>&, Tape<T>::Id, Tape<T>::Id,            \
                                   const SsimConfig&);                            \
  template Tape<T>::Id ssim_loss<T>(Tape<T>&, Tape<T>::Id, Tape<T>::Id,           \
                                    const SsimConfig&, T);                        \
  template Tape<T>::Id kl_loss<T>(Tape<T>&, Tape<T>::Id, Tape<T>::Id);            \
  template std::pair<Tape<T>::Id, LossBreakdown> total_loss<T>(                   \
      Tape<T>&, Tape<T>::Id, Tape<T>::Id, Tape<T>::Id, Tape<T>::Id,               \
      const LossConfig&);                                                         \
  template Tensor<T> ssim_map_2d<T>(const Tensor<T>&, const Tensor<T>&,           \
                                    const SsimConfig&);

TOFVAE_INSTANTIATE_LOSSES(float)
TOFVAE_INSTANTIATE_LOSSES(double)
TOFVAE_INSTANTIATE_LOSSES(long double)

#undef TOFVAE_INSTANTIATE_LOSSES

}  // namespace tofvae
