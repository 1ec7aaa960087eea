#pragma once

// The three emotion-regression variants:
//
//   A2E    conv blocks -> global average pool -> embedding -> emotions
//   A2B2E  ... -> embedding -> linear bottleneck (n_midlevel) -> emotions
//   A2M2E  same architecture as A2B2E; the bottleneck is additionally
//          supervised with mid-level targets (joint 0.5/0.5 loss)
//
// The bottleneck is purely linear and the emotion head is a single affine
// map of it, so emotions = midlevel * W + b holds exactly.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "merob/container.hpp"
#include "merob/tensor.hpp"

namespace merob {

enum class Variant { kA2E, kA2B2E, kA2M2E };
enum class Activation { kRelu, kLeakyRelu };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view s);
std::string_view to_string(Activation a);
Activation parse_activation(std::string_view s);

struct ConvBlock {
  std::size_t out_channels = 8;
  std::size_t kernel = 3;
  std::size_t pool = 2;  // max-pool window and stride; 0 or 1 disables pooling

  bool operator==(const ConvBlock&) const = default;
};

struct ModelSpec {
  Variant variant = Variant::kA2E;
  std::size_t in_channels = 1;
  std::vector<ConvBlock> conv_blocks = {{8, 3, 2}, {16, 3, 2}, {32, 3, 2}};
  std::size_t embedding_dim = 32;
  std::size_t n_midlevel = 7;
  std::size_t n_emotions = 8;
  Activation activation = Activation::kRelu;

  bool has_bottleneck() const { return variant != Variant::kA2E; }
  /// Throws ConfigError for zero-sized layers.
  void validate() const;
  /// Canonical text form; the digest is FNV-1a over it.
  std::string canonical() const;
  std::uint64_t digest() const;
  /// Spatial size after the conv stack; throws DimensionError when the input
  /// is too small for it.
  std::pair<std::size_t, std::size_t> trunk_output_size(std::size_t f, std::size_t t) const;

  bool operator==(const ModelSpec&) const = default;
};

/// Named parameter tensors in construction order.
template <typename T>
struct ModelParams {
  struct Entry {
    std::string name;
    Tensor<T> tensor;
  };
  std::vector<Entry> layers;
  std::uint64_t seed = 0;

  const Tensor<T>& get(std::string_view name) const;
  Tensor<T>& get(std::string_view name);
  std::size_t parameter_count() const;
  void zero_grad();
  /// Deep copy; the copy shares no storage with this one.
  ModelParams clone() const;
};

template <typename T>
struct ModelOutput {
  Tensor<T> emotions;                 // [B, n_emotions]
  std::optional<Tensor<T>> midlevel;  // [B, n_midlevel] for bottleneck variants
};

/// Expected (name, shape) inventory for a spec, in construction order.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelSpec& spec);

/// Uniform init: U(-sqrt(6/fan_in), sqrt(6/fan_in)) for conv and embedding
/// weights, U(-sqrt(6/(fan_in+fan_out)), ...) for the linear bottleneck and
/// head; biases start at zero.
template <typename T>
ModelParams<T> build_model(const ModelSpec& spec, std::uint64_t seed);

/// x is [B, in_channels, F, T]. With track_param_grads=false the parameters
/// enter the graph as constants (used by the attack, which only needs the
/// input gradient).
template <typename T>
ModelOutput<T> forward(const ModelParams<T>& params, const ModelSpec& spec, const Tensor<T>& x,
                       bool track_param_grads = true);

/// Emotion-only MSE: the training loss of A2E and A2B2E.
template <typename T>
Tensor<T> loss_emotion(const ModelOutput<T>& out, const Tensor<T>& y_emotion);

/// 0.5 * MSE(emotions) + 0.5 * MSE(midlevel). Throws ConfigError when the
/// mid-level output or targets are missing.
template <typename T>
Tensor<T> loss_a2m2e(const ModelOutput<T>& out, const Tensor<T>& y_emotion,
                     const Tensor<T>* y_midlevel);

/// The variant's own training loss.
template <typename T>
Tensor<T> training_loss(const ModelSpec& spec, const ModelOutput<T>& out,
                        const Tensor<T>& y_emotion, const Tensor<T>* y_midlevel);

template <typename T>
std::vector<std::uint8_t> save_params(const ModelParams<T>& params, const ModelSpec& spec);

/// Shape mismatches throw DimensionError naming the layer; a digest mismatch
/// with matching shapes throws FormatError.
template <typename T>
ModelParams<T> load_params(std::span<const std::uint8_t> bytes, const ModelSpec& spec);

}  // namespace merob
