#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tofvae/rng.hpp"
#include "tofvae/tape.hpp"

namespace tofvae {

enum class LayerKind { Conv, ConvTranspose };
enum class Activation { None, LeakyRelu, Sigmoid };

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  ConvSpec conv;
  Activation act = Activation::None;
};

// Mirrored fully-convolutional stack: three stride-2 encoder stages
// (H,W -> H/8,W/8), spatial latent heads, three stride-2 decoder stages back.
struct VaeArchitecture {
  std::vector<LayerSpec> encoder;
  LayerSpec mu_head;
  LayerSpec logvar_head;
  std::vector<LayerSpec> decoder;
  int64_t latent_channels = 32;
  double leaky_slope = 0.01;
  double logvar_clamp = 10.0;

  static VaeArchitecture standard();

  // Compact signature embedded in checkpoints; any structural change to the
  // stack changes it.
  std::string descriptor() const;

  // encoder layers, mu head, logvar head, decoder layers, in that order
  std::vector<const LayerSpec*> all_layers() const;
};

Shape4 layer_weight_shape(const LayerSpec& layer);
Shape4 layer_bias_shape(const LayerSpec& layer);

template <typename T>
struct VaeParams {
  struct Entry {
    std::string name;
    Tensor<T> weight;
    Tensor<T> bias;
  };
  std::vector<Entry> entries;  // one per architecture layer, fixed order

  const Entry& find(const std::string& name) const;
  int64_t count() const;  // total scalar parameters
  bool all_finite() const;
};

template <typename T>
VaeParams<T> init_params(const VaeArchitecture& arch, uint64_t seed);

template <typename T>
struct LatentStats {
  Tensor<T> mu;
  Tensor<T> logvar;  // clamped to ±arch.logvar_clamp
};

// Node ids of every registered parameter, in VaeParams entry order.
template <typename T>
struct VaeNodeIds {
  struct LayerIds {
    typename Tape<T>::Id weight;
    typename Tape<T>::Id bias;
  };
  std::vector<LayerIds> layers;
};

template <typename T>
VaeNodeIds<T> register_params(Tape<T>& tape, const VaeParams<T>& params,
                              bool requires_grad);

template <typename T>
struct LatentNodes {
  typename Tape<T>::Id mu;
  typename Tape<T>::Id logvar;
};

// batch must be N x 1 x H x W with H, W multiples of 8 and >= 32.
template <typename T>
LatentNodes<T> encode_on_tape(Tape<T>& tape, const VaeArchitecture& arch,
                              const VaeNodeIds<T>& ids, typename Tape<T>::Id batch);

template <typename T>
typename Tape<T>::Id reparameterize_on_tape(Tape<T>& tape,
                                            const VaeArchitecture& arch,
                                            const LatentNodes<T>& latent,
                                            rng::Prng& rng, bool deterministic);

template <typename T>
typename Tape<T>::Id decode_on_tape(Tape<T>& tape, const VaeArchitecture& arch,
                                    const VaeNodeIds<T>& ids, typename Tape<T>::Id z);

// Tape-free convenience wrappers (no gradients kept).
template <typename T>
LatentStats<T> encode(const VaeArchitecture& arch, const VaeParams<T>& params,
                      const Tensor<T>& batch);

template <typename T>
Tensor<T> reparameterize(const VaeArchitecture& arch, const LatentStats<T>& stats,
                         rng::Prng& rng, bool deterministic);

template <typename T>
Tensor<T> decode(const VaeArchitecture& arch, const VaeParams<T>& params,
                 const Tensor<T>& z);

template <typename T>
std::pair<Tensor<T>, LatentStats<T>> vae_forward(const VaeArchitecture& arch,
                                                 const VaeParams<T>& params,
                                                 const Tensor<T>& batch,
                                                 rng::Prng& rng,
                                                 bool deterministic);

}  // namespace tofvae
