#include "tofvae/gradcheck.hpp"

#include <fmt/format.h>

#include <cmath>
#include <unordered_set>

#include "tofvae/losses.hpp"
#include "tofvae/vae.hpp"

namespace tofvae {

Tensor<double> random_tensor(const Shape4& shape, rng::Prng& prng, double lo,
                             double hi) {
  Tensor<double> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = prng.uniform(lo, hi);
  return t;
}

namespace {

double eval_scalar(const GradCheckFn& fn, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Tape<double>::Id> ids;
  ids.reserve(inputs.size());
  for (const auto& t : inputs) ids.push_back(tape.constant(t));
  return tape.value(fn(tape, ids)).item();
}

std::vector<int64_t> pick_coords(int64_t numel, int64_t max_coords,
                                 rng::Prng& prng) {
  std::vector<int64_t> coords;
  if (max_coords <= 0 || max_coords >= numel) {
    coords.resize(numel);
    for (int64_t i = 0; i < numel; ++i) coords[i] = i;
    return coords;
  }
  std::unordered_set<int64_t> seen;
  while (static_cast<int64_t>(coords.size()) < max_coords) {
    const int64_t c = prng.uniform_int(numel);
    if (seen.insert(c).second) coords.push_back(c);
  }
  return coords;
}

}  // namespace

GradCheckResult grad_check(const GradCheckFn& fn,
                           const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& opts) {
  Tape<double> tape;
  std::vector<Tape<double>::Id> ids;
  ids.reserve(inputs.size());
  for (const auto& t : inputs) ids.push_back(tape.leaf(t, true));
  const auto root = fn(tape, ids);
  const double f0 = tape.value(root).item();
  if (!std::isfinite(f0))
    throw Error::numeric(fmt::format("grad_check: non-finite forward value {}", f0));
  auto grads = tape.backward(root);

  rng::Prng pick_rng(opts.subsample_seed);
  GradCheckResult result;
  std::vector<Tensor<double>> work = inputs;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double>* analytic = nullptr;
    if (auto it = grads.find(ids[i]); it != grads.end()) analytic = &it->second;
    const auto coords =
        pick_coords(inputs[i].numel(), opts.max_coords_per_input, pick_rng);
    for (int64_t c : coords) {
      const double orig = work[i].data()[c];
      const double a = analytic ? analytic->data()[c] : 0.0;
      const auto delta_at = [&](double h) {
        work[i].data()[c] = orig + h;
        const double fp = eval_scalar(fn, work);
        work[i].data()[c] = orig - h;
        const double fm = eval_scalar(fn, work);
        work[i].data()[c] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
          throw Error::numeric("grad_check: non-finite perturbed forward value");
        return fp - fm;
      };
      const auto rel_err = [&](double numeric) {
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        return std::abs(a - numeric) / denom;
      };
      double err = rel_err(delta_at(opts.step) / (2.0 * opts.step));
      if (opts.refine_threshold > 0 && err > opts.refine_threshold) {
        for (double scale : {0.1, 10.0, 0.01, 100.0}) {
          const double h = opts.step * scale;
          err = std::min(err, rel_err(delta_at(h) / (2.0 * h)));
          if (err <= opts.refine_threshold) break;
        }
        if (opts.delta_oracle) {
          for (double scale : {1.0, 0.1, 10.0, 0.01, 100.0}) {
            if (err <= opts.refine_threshold) break;
            const double h = opts.step * scale;
            const double numeric = opts.delta_oracle(inputs, i, c, h) / (2.0 * h);
            err = std::min(err, rel_err(numeric));
          }
        }
        // The fourth-order stencil removes the h^2 truncation term, so a
        // large step can resolve coordinates whose small-step difference
        // drowns in evaluation noise. A wrong analytic gradient disagrees
        // with every stencil at every step.
        for (double scale : {100.0, 10.0, 1.0}) {
          if (err <= opts.refine_threshold) break;
          const double h = opts.step * scale;
          const double numeric =
              (8.0 * delta_at(h) - delta_at(2.0 * h)) / (12.0 * h);
          err = std::min(err, rel_err(numeric));
        }
      }
      result.max_rel_err = std::max(result.max_rel_err, err);
      ++result.coords_checked;
    }
  }
  return result;
}

namespace {

// Pushes values out of a band around `center` so finite differences never
// straddle a kink.
Tensor<double> nudge_away(Tensor<double> t, double center, double margin) {
  for (int64_t i = 0; i < t.numel(); ++i) {
    const double d = t.data()[i] - center;
    if (std::abs(d) < margin)
      t.data()[i] = center + (d < 0 ? -margin : margin);
  }
  return t;
}

using Id = Tape<double>::Id;
using Ids = std::vector<Id>;

GradCheckOptions step_opts(double step) {
  GradCheckOptions o;
  o.step = step;
  return o;
}

GradCheckFn project_through(std::function<Id(Tape<double>&, const Ids&)> op,
                            Tensor<double> proj) {
  return [op = std::move(op), proj = std::move(proj)](Tape<double>& t,
                                                      const Ids& in) -> Id {
    return t.reduce_sum(t.mul(op(t, in), t.constant(proj)));
  };
}

struct SuiteCase {
  std::string name;
  double tolerance;
  GradCheckOptions opts;
  std::vector<Tensor<double>> inputs;
  GradCheckFn fn;
};

std::vector<SuiteCase> build_cases(uint64_t seed, bool include_model) {
  std::vector<SuiteCase> cases;
  uint64_t stream = 0;
  auto next_rng = [&] { return rng::Prng(rng::derive(seed, stream++)); };

  {
    auto r = next_rng();
    const Shape4 s{2, 3, 4, 5};
    cases.push_back({"add", 1e-10, step_opts(1e-3),
                     {random_tensor(s, r), random_tensor(s, r)},
                     project_through([](Tape<double>& t, const Ids& in) {
                       return t.add(in[0], in[1]);
                     }, random_tensor(s, r))});
  }
  {
    auto r = next_rng();
    const Shape4 s{2, 3, 4, 5};
    cases.push_back({"sub", 1e-10, step_opts(1e-3),
                     {random_tensor(s, r), random_tensor(s, r)},
                     project_through([](Tape<double>& t, const Ids& in) {
                       return t.sub(in[0], in[1]);
                     }, random_tensor(s, r))});
  }
  {
    auto r = next_rng();
    const Shape4 s{2, 3, 4, 5};
    cases.push_back({"mul", 1e-7, step_opts(1e-5),
                     {random_tensor(s, r), random_tensor(s, r)},
                     project_through([](Tape<double>& t, const Ids& in) {
                       return t.mul(in[0], in[1]);
                     }, random_tensor(s, r))});
  }
  {
    auto r = next_rng();
    const Shape4 s{2, 3, 4, 5};
    Tensor<double> denom = random_tensor(s, r);
    // keep divisors away from zero
    for (int64_t i = 0; i < denom.numel(); ++i)
      denom.data()[i] = 0.5 + 0.5 * std::abs(denom.data()[i]);
    cases.push_back({"div", 1e-7, step_opts(1e-5),
                     {random_tensor(s, r), std::move(denom)},
                     project_through([](Tape<double>& t, const Ids& in) {
                       return t.div(in[0], in[1]);
                     }, random_tensor(s, r))});
  }
  {
    auto r = next_rng();
    const Shape4 s{2, 3, 4, 5};
    cases.push_back({"exp", 1e-7, step_opts(1e-5), {random_tensor(s, r)},
                     project_through([](Tape<double>& t, const Ids& in) {
                       return t.exp(in[0]);
                     }, random_tensor(s, r))});
  }
  {
    auto r = next_rng();
    const Shape4 s{2, 3, 4, 5};
    cases.push_back({"square", 1e-8, step_opts(1e-3), {random_tensor(s, r)},
                     project_through([](Tape<double>& t, const Ids& in) {
                       return t.square(in[0]);
                     }, random_tensor(s, r))});
  }
  {
    auto r = next_rng();
    const Shape4 s{2, 3, 4, 5};
    cases.push_back({"add_scalar", 1e-10, step_opts(1e-3), {random_tensor(s, r)},
                     project_through([](Tape<double>& t, const Ids& in) {
                       return t.add_scalar(in[0], 0.37);
                     }, random_tensor(s, r))});
  }
  {
    auto r = next_rng();
    const Shape4 s{2, 3, 4, 5};
    cases.push_back({"mul_scalar", 1e-10, step_opts(1e-2), {random_tensor(s, r)},
                     project_through([](Tape<double>& t, const Ids& in) {
                       return t.mul_scalar(in[0], -1.7);
                     }, random_tensor(s, r))});
  }
  {
    auto r = next_rng();
    const Shape4 s{2, 3, 4, 5};
    cases.push_back({"leaky_relu", 1e-9, step_opts(1e-3),
                     {nudge_away(random_tensor(s, r), 0.0, 0.05)},
                     project_through([](Tape<double>& t, const Ids& in) {
                       return t.leaky_relu(in[0], 0.01);
                     }, random_tensor(s, r))});
  }
  {
    auto r = next_rng();
    const Shape4 s{2, 3, 4, 5};
    cases.push_back({"sigmoid", 1e-7, step_opts(1e-5), {random_tensor(s, r)},
                     project_through([](Tape<double>& t, const Ids& in) {
                       return t.sigmoid(in[0]);
                     }, random_tensor(s, r))});
  }
  {
    auto r = next_rng();
    const Shape4 s{2, 3, 4, 5};
    Tensor<double> x = random_tensor(s, r);
    x = nudge_away(std::move(x), -0.5, 0.05);
    x = nudge_away(std::move(x), 0.5, 0.05);
    cases.push_back({"clamp", 1e-9, step_opts(1e-3), {std::move(x)},
                     project_through([](Tape<double>& t, const Ids& in) {
                       return t.clamp(in[0], -0.5, 0.5);
                     }, random_tensor(s, r))});
  }
  {
    auto r = next_rng();
    const Shape4 s{2, 3, 4, 5};
    cases.push_back({"reduce_mean", 1e-10, step_opts(1e-3), {random_tensor(s, r)},
                     [](Tape<double>& t, const Ids& in) {
                       return t.reduce_mean(in[0]);
                     }});
  }
  {
    auto r = next_rng();
    const ConvSpec spec{3, 3, 2, 2, 1, 1, 2, 3};
    const Shape4 xs{1, 2, 5, 5};
    cases.push_back({"conv2d", 1e-6, step_opts(1e-3),
                     {random_tensor(xs, r), random_tensor({3, 2, 3, 3}, r),
                      random_tensor({1, 3, 1, 1}, r)},
                     project_through([spec](Tape<double>& t, const Ids& in) {
                       return t.conv2d(in[0], in[1], in[2], spec);
                     }, random_tensor({1, 3, 3, 3}, r))});
  }
  {
    auto r = next_rng();
    const ConvSpec spec{4, 4, 2, 2, 1, 1, 3, 2};
    cases.push_back({"conv_transpose2d", 1e-6, step_opts(1e-5),
                     {random_tensor({1, 3, 4, 4}, r), random_tensor({3, 2, 4, 4}, r),
                      random_tensor({1, 2, 1, 1}, r)},
                     project_through([spec](Tape<double>& t, const Ids& in) {
                       return t.conv_transpose2d(in[0], in[1], in[2], spec);
                     }, random_tensor({1, 2, 8, 8}, r))});
  }
  {
    auto r = next_rng();
    SsimConfig small;
    small.window_size = 5;
    const Tensor<double> win = small.window<double>();
    cases.push_back({"fixed_window_mean", 1e-6, step_opts(1e-5),
                     {random_tensor({1, 2, 9, 9}, r)},
                     project_through([win](Tape<double>& t, const Ids& in) {
                       return t.fixed_window_mean(in[0], win);
                     }, random_tensor({1, 2, 5, 5}, r))});
  }
  {
    auto r = next_rng();
    const Shape4 s{2, 1, 4, 4};
    cases.push_back({"l2_loss", 1e-7, step_opts(1e-5),
                     {random_tensor(s, r), random_tensor(s, r)},
                     [](Tape<double>& t, const Ids& in) {
                       return l2_loss(t, in[0], in[1]);
                     }});
  }
  {
    auto r = next_rng();
    const Shape4 s{1, 1, 13, 13};
    GradCheckOptions opts;
    opts.step = 1e-5;
    opts.delta_oracle = [](const std::vector<Tensor<double>>& in, size_t ii,
                           int64_t cc, double h) {
      const auto eval = [&](double d) {
        Tape<long double> t;
        std::vector<Tape<long double>::Id> ids;
        for (size_t k = 0; k < in.size(); ++k) {
          Tensor<long double> v = in[k].cast<long double>();
          if (k == ii) v.data()[cc] += static_cast<long double>(d);
          ids.push_back(t.constant(v));
        }
        return t.value(ssim_loss(t, ids[0], ids[1], SsimConfig{},
                                 static_cast<long double>(1000.0))).item();
      };
      return static_cast<double>(eval(h) - eval(-h));
    };
    cases.push_back({"ssim_loss", 1e-5, opts,
                     {random_tensor(s, r, 0.1, 0.9), random_tensor(s, r, 0.1, 0.9)},
                     [](Tape<double>& t, const Ids& in) {
                       return ssim_loss(t, in[0], in[1], SsimConfig{}, 1000.0);
                     }});
  }
  {
    auto r = next_rng();
    const Shape4 s{2, 3, 2, 2};
    cases.push_back({"kl_loss", 1e-7, step_opts(1e-5),
                     {random_tensor(s, r), random_tensor(s, r)},
                     [](Tape<double>& t, const Ids& in) {
                       return kl_loss(t, in[0], in[1]);
                     }});
  }

  if (!include_model) return cases;

  for (LossMode mode : {LossMode::L2, LossMode::Ssim}) {
    auto r = next_rng();
    const VaeArchitecture arch = VaeArchitecture::standard();
    const VaeParams<double> params = init_params<double>(arch, rng::derive(seed, 77));
    std::vector<Tensor<double>> inputs;
    for (const auto& e : params.entries) {
      inputs.push_back(e.weight);
      inputs.push_back(e.bias);
    }
    Tensor<double> patch = random_tensor({2, 1, 32, 32}, r, 0.05, 0.95);
    const uint64_t eps_seed = rng::derive(seed, 88);
    LossConfig cfg;
    cfg.mode = mode;
    GradCheckOptions opts;
    opts.step = 1e-5;
    opts.max_coords_per_input = 3;
    opts.subsample_seed = rng::derive(seed, 99);
    opts.delta_oracle = [arch, patch, eps_seed, cfg](
                            const std::vector<Tensor<double>>& in, size_t ii,
                            int64_t cc, double h) {
      const auto eval = [&](double d) {
        Tape<long double> t;
        VaeNodeIds<long double> ids;
        for (size_t k = 0; k + 1 < in.size(); k += 2) {
          Tensor<long double> w = in[k].cast<long double>();
          Tensor<long double> b = in[k + 1].cast<long double>();
          if (k == ii) w.data()[cc] += static_cast<long double>(d);
          if (k + 1 == ii) b.data()[cc] += static_cast<long double>(d);
          ids.layers.push_back({t.constant(w), t.constant(b)});
        }
        auto target = t.constant(patch.cast<long double>());
        auto latent = encode_on_tape(t, arch, ids, target);
        rng::Prng eps_rng(eps_seed);
        auto z = reparameterize_on_tape(t, arch, latent, eps_rng, false);
        auto recon = decode_on_tape(t, arch, ids, z);
        return t.value(
                    total_loss(t, target, recon, latent.mu, latent.logvar, cfg)
                        .first)
            .item();
      };
      return static_cast<double>(eval(h) - eval(-h));
    };
    cases.push_back(
        {fmt::format("total_loss/{}", loss_mode_name(mode)), 1e-5, opts,
         std::move(inputs),
         [arch, patch, eps_seed, cfg](Tape<double>& t, const Ids& in) {
           VaeNodeIds<double> ids;
           for (size_t i = 0; i + 1 < in.size(); i += 2)
             ids.layers.push_back({in[i], in[i + 1]});
           auto target = t.constant(patch);
           auto latent = encode_on_tape(t, arch, ids, target);
           rng::Prng eps_rng(eps_seed);
           auto z = reparameterize_on_tape(t, arch, latent, eps_rng, false);
           auto recon = decode_on_tape(t, arch, ids, z);
           return total_loss(t, target, recon, latent.mu, latent.logvar, cfg).first;
         }});
  }
  return cases;
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(int seeds, bool include_model) {
  std::vector<GradCheckReport> reports;
  for (int s = 0; s < seeds; ++s) {
    auto cases = build_cases(0xC0FFEE + static_cast<uint64_t>(s) * 101, include_model);
    for (size_t i = 0; i < cases.size(); ++i) {
      auto& c = cases[i];
      c.opts.refine_threshold = c.tolerance;
      const GradCheckResult res = grad_check(c.fn, c.inputs, c.opts);
      if (s == 0) {
        GradCheckReport rep;
        rep.op = c.name;
        rep.tolerance = c.tolerance;
        reports.push_back(rep);
      }
      auto& rep = reports[i];
      rep.max_rel_err = std::max(rep.max_rel_err, res.max_rel_err);
      rep.coords_checked += res.coords_checked;
    }
  }
  for (auto& rep : reports) rep.passed = rep.max_rel_err <= rep.tolerance;
  return reports;
}

}  // namespace tofvae
