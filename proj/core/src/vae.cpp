#include "tofvae/vae.hpp"

#include <fmt/format.h>

#include <cmath>

namespace tofvae {

namespace {

LayerSpec conv_layer(std::string name, int64_t in_c, int64_t out_c, int64_t k,
                     int64_t s, int64_t p, Activation act) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::Conv;
  l.conv = ConvSpec{k, k, s, s, p, p, in_c, out_c};
  l.act = act;
  return l;
}

LayerSpec convt_layer(std::string name, int64_t in_c, int64_t out_c, int64_t k,
                      int64_t s, int64_t p, Activation act) {
  LayerSpec l = conv_layer(std::move(name), in_c, out_c, k, s, p, act);
  l.kind = LayerKind::ConvTranspose;
  return l;
}

const char* act_tag(Activation a) {
  switch (a) {
    case Activation::LeakyRelu: return "lrelu";
    case Activation::Sigmoid: return "sigmoid";
    default: return "none";
  }
}

}  // namespace

VaeArchitecture VaeArchitecture::standard() {
  VaeArchitecture arch;
  arch.encoder = {
      conv_layer("enc1", 1, 32, 4, 2, 1, Activation::LeakyRelu),
      conv_layer("enc2", 32, 64, 4, 2, 1, Activation::LeakyRelu),
      conv_layer("enc3", 64, 64, 4, 2, 1, Activation::LeakyRelu),
  };
  arch.mu_head = conv_layer("mu", 64, 32, 3, 1, 1, Activation::None);
  arch.logvar_head = conv_layer("logvar", 64, 32, 3, 1, 1, Activation::None);
  arch.decoder = {
      convt_layer("dec1", 32, 64, 4, 2, 1, Activation::LeakyRelu),
      convt_layer("dec2", 64, 32, 4, 2, 1, Activation::LeakyRelu),
      convt_layer("dec3", 32, 32, 4, 2, 1, Activation::LeakyRelu),
      conv_layer("out", 32, 1, 3, 1, 1, Activation::Sigmoid),
  };
  arch.latent_channels = 32;
  return arch;
}

std::string VaeArchitecture::descriptor() const {
  std::string s;
  for (const LayerSpec* l : all_layers()) {
    const ConvSpec& c = l->conv;
    s += fmt::format("{}={}:{}>{}k{}s{}p{}:{};", l->name,
                     l->kind == LayerKind::Conv ? "c" : "ct", c.in_channels,
                     c.out_channels, c.kh, c.sh, c.ph, act_tag(l->act));
  }
  s += fmt::format("latent{}:slope{}:clamp{}", latent_channels, leaky_slope,
                   logvar_clamp);
  return s;
}

std::vector<const LayerSpec*> VaeArchitecture::all_layers() const {
  std::vector<const LayerSpec*> out;
  for (const auto& l : encoder) out.push_back(&l);
  out.push_back(&mu_head);
  out.push_back(&logvar_head);
  for (const auto& l : decoder) out.push_back(&l);
  return out;
}

template <typename T>
const typename VaeParams<T>::Entry& VaeParams<T>::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw Error::data(fmt::format("params: no layer named '{}'", name));
}

template <typename T>
int64_t VaeParams<T>::count() const {
  int64_t n = 0;
  for (const auto& e : entries) n += e.weight.numel() + e.bias.numel();
  return n;
}

template <typename T>
bool VaeParams<T>::all_finite() const {
  for (const auto& e : entries)
    if (!e.weight.all_finite() || !e.bias.all_finite()) return false;
  return true;
}

Shape4 layer_weight_shape(const LayerSpec& l) {
  const ConvSpec& c = l.conv;
  if (l.kind == LayerKind::Conv) return {c.out_channels, c.in_channels, c.kh, c.kw};
  return {c.in_channels, c.out_channels, c.kh, c.kw};
}

Shape4 layer_bias_shape(const LayerSpec& l) {
  return {1, l.conv.out_channels, 1, 1};
}

template <typename T>
VaeParams<T> init_params(const VaeArchitecture& arch, uint64_t seed) {
  rng::Prng prng(seed);
  VaeParams<T> params;
  for (const LayerSpec* l : arch.all_layers()) {
    const ConvSpec& c = l->conv;
    const double fan_in = double(c.in_channels * c.kh * c.kw);
    const double fan_out = double(c.out_channels * c.kh * c.kw);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    typename VaeParams<T>::Entry e;
    e.name = l->name;
    e.weight = Tensor<T>(layer_weight_shape(*l));
    for (int64_t i = 0; i < e.weight.numel(); ++i)
      e.weight.data()[i] = static_cast<T>(prng.uniform(-bound, bound));
    e.bias = Tensor<T>(layer_bias_shape(*l));
    params.entries.push_back(std::move(e));
  }
  return params;
}

template <typename T>
VaeNodeIds<T> register_params(Tape<T>& tape, const VaeParams<T>& params,
                              bool requires_grad) {
  VaeNodeIds<T> ids;
  for (const auto& e : params.entries)
    ids.layers.push_back({tape.leaf(e.weight, requires_grad),
                          tape.leaf(e.bias, requires_grad)});
  return ids;
}

namespace {

template <typename T>
typename Tape<T>::Id apply_layer(Tape<T>& tape, const VaeArchitecture& arch,
                                 const LayerSpec& layer,
                                 const typename VaeNodeIds<T>::LayerIds& ids,
                                 typename Tape<T>::Id x) {
  typename Tape<T>::Id y =
      layer.kind == LayerKind::Conv
          ? tape.conv2d(x, ids.weight, ids.bias, layer.conv)
          : tape.conv_transpose2d(x, ids.weight, ids.bias, layer.conv);
  switch (layer.act) {
    case Activation::LeakyRelu:
      return tape.leaky_relu(y, static_cast<T>(arch.leaky_slope));
    case Activation::Sigmoid:
      return tape.sigmoid(y);
    default:
      return y;
  }
}

}  // namespace

template <typename T>
LatentNodes<T> encode_on_tape(Tape<T>& tape, const VaeArchitecture& arch,
                              const VaeNodeIds<T>& ids, typename Tape<T>::Id batch) {
  const Shape4 bs = tape.value(batch).shape();
  if (bs.c != 1)
    throw Error::data(fmt::format("encode: expected single-channel input, got {}",
                                  bs.str()));
  if (bs.h < 32 || bs.w < 32 || bs.h % 8 != 0 || bs.w % 8 != 0)
    throw Error::data(fmt::format(
        "encode: spatial size {}x{} must be a multiple of 8 and at least 32; "
        "pad the image first (whole-volume reconstruction pads and crops "
        "automatically)",
        bs.h, bs.w));
  typename Tape<T>::Id x = batch;
  size_t li = 0;
  for (const auto& layer : arch.encoder)
    x = apply_layer<T>(tape, arch, layer, ids.layers[li++], x);
  auto mu = apply_layer<T>(tape, arch, arch.mu_head, ids.layers[li++], x);
  auto lv = apply_layer<T>(tape, arch, arch.logvar_head, ids.layers[li++], x);
  lv = tape.clamp(lv, static_cast<T>(-arch.logvar_clamp),
                  static_cast<T>(arch.logvar_clamp));
  return {mu, lv};
}

template <typename T>
typename Tape<T>::Id reparameterize_on_tape(Tape<T>& tape,
                                            const VaeArchitecture& arch,
                                            const LatentNodes<T>& latent,
                                            rng::Prng& rng, bool deterministic) {
  (void)arch;
  if (deterministic) return latent.mu;
  const Shape4 s = tape.value(latent.mu).shape();
  Tensor<T> eps(s);
  for (int64_t i = 0; i < eps.numel(); ++i)
    eps.data()[i] = static_cast<T>(rng.normal());
  auto sigma = tape.exp(tape.mul_scalar(latent.logvar, T(0.5)));
  return tape.add(latent.mu, tape.mul(sigma, tape.constant(std::move(eps))));
}

template <typename T>
typename Tape<T>::Id decode_on_tape(Tape<T>& tape, const VaeArchitecture& arch,
                                    const VaeNodeIds<T>& ids, typename Tape<T>::Id z) {
  const Shape4 zs = tape.value(z).shape();
  if (zs.c != arch.latent_channels)
    throw Error::data(fmt::format("decode: expected {} latent channels, got {}",
                                  arch.latent_channels, zs.str()));
  typename Tape<T>::Id x = z;
  size_t li = arch.encoder.size() + 2;
  for (const auto& layer : arch.decoder)
    x = apply_layer<T>(tape, arch, layer, ids.layers[li++], x);
  return x;
}

template <typename T>
LatentStats<T> encode(const VaeArchitecture& arch, const VaeParams<T>& params,
                      const Tensor<T>& batch) {
  Tape<T> tape;
  auto ids = register_params(tape, params, false);
  auto b = tape.constant(batch);
  auto latent = encode_on_tape(tape, arch, ids, b);
  return {tape.value(latent.mu), tape.value(latent.logvar)};
}

template <typename T>
Tensor<T> reparameterize(const VaeArchitecture& arch, const LatentStats<T>& stats,
                         rng::Prng& rng, bool deterministic) {
  if (deterministic) return stats.mu;
  check_same_shape(stats.mu.shape(), stats.logvar.shape(), "reparameterize");
  Tensor<T> z(stats.mu.shape());
  for (int64_t i = 0; i < z.numel(); ++i) {
    const T sigma = std::exp(T(0.5) * stats.logvar.data()[i]);
    z.data()[i] = stats.mu.data()[i] + sigma * static_cast<T>(rng.normal());
  }
  (void)arch;
  return z;
}

template <typename T>
Tensor<T> decode(const VaeArchitecture& arch, const VaeParams<T>& params,
                 const Tensor<T>& z) {
  Tape<T> tape;
  auto ids = register_params(tape, params, false);
  auto zid = tape.constant(z);
  return tape.value(decode_on_tape(tape, arch, ids, zid));
}

template <typename T>
std::pair<Tensor<T>, LatentStats<T>> vae_forward(const VaeArchitecture& arch,
                                                 const VaeParams<T>& params,
                                                 const Tensor<T>& batch,
                                                 rng::Prng& rng,
                                                 bool deterministic) {
  Tape<T> tape;
  auto ids = register_params(tape, params, false);
  auto b = tape.constant(batch);
  auto latent = encode_on_tape(tape, arch, ids, b);
  auto z = reparameterize_on_tape(tape, arch, latent, rng, deterministic);
  auto recon = decode_on_tape(tape, arch, ids, z);
  return {tape.value(recon),
          LatentStats<T>{tape.value(latent.mu), tape.value(latent.logvar)}};
}

#define TOFVAE_INSTANTIATE_VAE(T)                                                \
  template struct VaeParams<T>;                                                  \
  template VaeParams<T> init_params<T>(const VaeArchitecture&, uint64_t);        \
  template VaeNodeIds<T> register_params<T>(Tape<T>&, const VaeParams<T>&,       \
                                            bool);                               \
  template LatentNodes<T> encode_on_tape<T>(Tape<T>&, const VaeArchitecture&,    \
                                            const VaeNodeIds<T>&, Tape<T>::Id);  \
  template Tape<T>::Id reparameterize_on_tape<T>(Tape<T>&,                       \
                                                 const VaeArchitecture&,         \
                                                 const LatentNodes<T>&,          \
                                                 rng::Prng&, bool);              \
  template Tape<T>::Id decode_on_tape<T>(Tape<T>&, const VaeArchitecture&,       \
                                         const VaeNodeIds<T>&, Tape<T>::Id);     \
  template LatentStats<T> encode<T>(const VaeArchitecture&, const VaeParams<T>&, \
                                    const Tensor<T>&);                           \
  template Tensor<T> reparameterize<T>(const VaeArchitecture&,                   \
                                       const LatentStats<T>&, rng::Prng&, bool); \
  template Tensor<T> decode<T>(const VaeArchitecture&, const VaeParams<T>&,      \
                               const Tensor<T>&);                                \
  template std::pair<Tensor<T>, LatentStats<T>> vae_forward<T>(                  \
      const VaeArchitecture&, const VaeParams<T>&, const Tensor<T>&,             \
      rng::Prng&, bool);

TOFVAE_INSTANTIATE_VAE(float)
TOFVAE_INSTANTIATE_VAE(double)
TOFVAE_INSTANTIATE_VAE(long double)

#undef TOFVAE_INSTANTIATE_VAE

}  // namespace tofvae
