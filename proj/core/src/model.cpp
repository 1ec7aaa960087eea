#include "merob/model.hpp"

#include <cmath>
#include <sstream>

#include "merob/errors.hpp"
#include "merob/ops.hpp"
#include "merob/rng.hpp"

namespace merob {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kA2E:
      return "a2e";
    case Variant::kA2B2E:
      return "a2b2e";
    case Variant::kA2M2E:
      return "a2m2e";
  }
  return "?";
}

Variant parse_variant(std::string_view s) {
  if (s == "a2e" || s == "A2E") return Variant::kA2E;
  if (s == "a2b2e" || s == "A2B2E") return Variant::kA2B2E;
  if (s == "a2m2e" || s == "A2M2E") return Variant::kA2M2E;
  throw ConfigError("unknown model variant '" + std::string(s) + "' (expected a2e, a2b2e, a2m2e)");
}

std::string_view to_string(Activation a) {
  return a == Activation::kRelu ? "relu" : "leaky_relu";
}

Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "leaky_relu") return Activation::kLeakyRelu;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

void ModelSpec::validate() const {
  if (in_channels == 0) throw ConfigError("model spec: in_channels must be positive");
  if (conv_blocks.empty()) throw ConfigError("model spec: at least one conv block is required");
  for (std::size_t i = 0; i < conv_blocks.size(); ++i) {
    const auto& b = conv_blocks[i];
    if (b.out_channels == 0 || b.kernel == 0) {
      throw ConfigError("model spec: conv block " + std::to_string(i) + " has a zero-size layer");
    }
  }
  if (embedding_dim == 0) throw ConfigError("model spec: embedding_dim must be positive");
  if (n_emotions == 0) throw ConfigError("model spec: n_emotions must be positive");
  if (has_bottleneck() && n_midlevel == 0) {
    throw ConfigError("model spec: bottleneck variants need n_midlevel > 0");
  }
}

std::string ModelSpec::canonical() const {
  std::ostringstream os;
  os << "variant=" << to_string(variant) << ";in=" << in_channels << ";blocks=";
  for (const auto& b : conv_blocks) os << b.out_channels << ':' << b.kernel << ':' << b.pool << ',';
  os << ";embed=" << embedding_dim << ";mid=" << n_midlevel << ";emo=" << n_emotions
     << ";act=" << to_string(activation);
  return os.str();
}

std::uint64_t ModelSpec::digest() const { return fnv1a64(canonical()); }

std::pair<std::size_t, std::size_t> ModelSpec::trunk_output_size(std::size_t f,
                                                                 std::size_t t) const {
  for (const auto& b : conv_blocks) {
    const auto conv = conv_output_size(f, t, b.kernel, b.kernel, b.kernel / 2, 1);
    f = conv.out_h;
    t = conv.out_w;
    if (b.pool > 1) {
      if (b.pool > f || b.pool > t) {
        throw DimensionError("input too small: pool window " + std::to_string(b.pool) +
                             " exceeds feature map " + std::to_string(f) + "x" +
                             std::to_string(t));
      }
      const auto pool = conv_output_size(f, t, b.pool, b.pool, 0, b.pool);
      f = pool.out_h;
      t = pool.out_w;
    }
  }
  return {f, t};
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelSpec& spec) {
  spec.validate();
  std::vector<std::pair<std::string, Shape>> shapes;
  std::size_t channels = spec.in_channels;
  for (std::size_t i = 0; i < spec.conv_blocks.size(); ++i) {
    const auto& b = spec.conv_blocks[i];
    const auto prefix = "conv" + std::to_string(i);
    shapes.emplace_back(prefix + ".weight", Shape{b.out_channels, channels, b.kernel, b.kernel});
    shapes.emplace_back(prefix + ".bias", Shape{b.out_channels});
    channels = b.out_channels;
  }
  shapes.emplace_back("embed.weight", Shape{channels, spec.embedding_dim});
  shapes.emplace_back("embed.bias", Shape{spec.embedding_dim});
  if (spec.has_bottleneck()) {
    shapes.emplace_back("bottleneck.weight", Shape{spec.embedding_dim, spec.n_midlevel});
    shapes.emplace_back("bottleneck.bias", Shape{spec.n_midlevel});
    shapes.emplace_back("head.weight", Shape{spec.n_midlevel, spec.n_emotions});
  } else {
    shapes.emplace_back("head.weight", Shape{spec.embedding_dim, spec.n_emotions});
  }
  shapes.emplace_back("head.bias", Shape{spec.n_emotions});
  return shapes;
}

template <typename T>
const Tensor<T>& ModelParams<T>::get(std::string_view name) const {
  for (const auto& e : layers) {
    if (e.name == name) return e.tensor;
  }
  throw UsageError("model has no parameter '" + std::string(name) + "'");
}

template <typename T>
Tensor<T>& ModelParams<T>::get(std::string_view name) {
  return const_cast<Tensor<T>&>(std::as_const(*this).get(name));
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : layers) n += e.tensor.numel();
  return n;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for (auto& e : layers) e.tensor.zero_grad();
}

template <typename T>
ModelParams<T> ModelParams<T>::clone() const {
  ModelParams copy;
  copy.seed = seed;
  for (const auto& e : layers) {
    copy.layers.push_back({e.name, e.tensor.clone(e.tensor.requires_grad())});
  }
  return copy;
}

template <typename T>
ModelParams<T> build_model(const ModelSpec& spec, std::uint64_t seed) {
  ModelParams<T> params;
  params.seed = seed;
  const auto shapes = parameter_shapes(spec);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& [name, shape] = shapes[i];
    std::vector<T> values(shape_numel(shape), T(0));
    const bool is_bias = name.ends_with(".bias");
    if (!is_bias) {
      // conv weights are [out, in, kh, kw], linear weights [in, out].
      const std::size_t fan_in =
          shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape[0];
      // Layers feeding an activation get the ReLU-gain bound; the purely
      // linear bottleneck and head use the fan-averaged one.
      const bool linear_out = name == "bottleneck.weight" || name == "head.weight";
      const double bound = linear_out
                               ? std::sqrt(6.0 / static_cast<double>(fan_in + shape[1]))
                               : std::sqrt(6.0 / static_cast<double>(fan_in));
      Rng rng(mix_seed(seed, i));
      for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
    }
    params.layers.push_back({name, Tensor<T>::from(shape, std::move(values), true)});
  }
  return params;
}

namespace {

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation a) {
  return a == Activation::kRelu ? relu(x) : leaky_relu(x, T(0.01));
}

}  // namespace

template <typename T>
ModelOutput<T> forward(const ModelParams<T>& params, const ModelSpec& spec, const Tensor<T>& x,
                       bool track_param_grads) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != spec.in_channels) {
    throw DimensionError("forward: expected input [B," + std::to_string(spec.in_channels) +
                         ",F,T], got " + shape_str(s));
  }
  spec.trunk_output_size(s[2], s[3]);

  auto p = [&](const std::string& name) {
    const auto& t = params.get(name);
    return track_param_grads ? t : t.detach();
  };

  Tensor<T> h = x;
  for (std::size_t i = 0; i < spec.conv_blocks.size(); ++i) {
    const auto& b = spec.conv_blocks[i];
    const auto prefix = "conv" + std::to_string(i);
    h = conv2d(h, p(prefix + ".weight"), p(prefix + ".bias"), b.kernel / 2, 1);
    h = activate(h, spec.activation);
    if (b.pool > 1) h = maxpool2d(h, b.pool, b.pool);
  }
  h = global_avg_pool(h);
  h = activate(add_bias(matmul(h, p("embed.weight")), p("embed.bias")), spec.activation);

  ModelOutput<T> out;
  if (spec.has_bottleneck()) {
    auto mid = add_bias(matmul(h, p("bottleneck.weight")), p("bottleneck.bias"));
    out.emotions = add_bias(matmul(mid, p("head.weight")), p("head.bias"));
    out.midlevel = std::move(mid);
  } else {
    out.emotions = add_bias(matmul(h, p("head.weight")), p("head.bias"));
  }
  return out;
}

template <typename T>
Tensor<T> loss_emotion(const ModelOutput<T>& out, const Tensor<T>& y_emotion) {
  return mse_loss(out.emotions, y_emotion);
}

template <typename T>
Tensor<T> loss_a2m2e(const ModelOutput<T>& out, const Tensor<T>& y_emotion,
                     const Tensor<T>* y_midlevel) {
  if (!out.midlevel) throw ConfigError("A2M2E loss needs the bottleneck (mid-level) output");
  if (y_midlevel == nullptr || !y_midlevel->defined()) {
    throw ConfigError("A2M2E loss needs mid-level targets");
  }
  auto emo = mse_loss(out.emotions, y_emotion);
  auto mid = mse_loss(*out.midlevel, *y_midlevel);
  return add(mul_scalar(emo, T(0.5)), mul_scalar(mid, T(0.5)));
}

template <typename T>
Tensor<T> training_loss(const ModelSpec& spec, const ModelOutput<T>& out,
                        const Tensor<T>& y_emotion, const Tensor<T>* y_midlevel) {
  if (spec.variant == Variant::kA2M2E) return loss_a2m2e(out, y_emotion, y_midlevel);
  return loss_emotion(out, y_emotion);
}

template <typename T>
std::vector<std::uint8_t> save_params(const ModelParams<T>& params, const ModelSpec& spec) {
  Container c;
  c.digest = spec.digest();
  for (const auto& e : params.layers) c.records.push_back(to_record(e.name, e.tensor));
  return encode_container(c);
}

template <typename T>
ModelParams<T> load_params(std::span<const std::uint8_t> bytes, const ModelSpec& spec) {
  const auto c = decode_container(bytes);
  const auto expected = parameter_shapes(spec);
  if (c.records.size() != expected.size()) {
    // Name the first layer that is missing or unexpected.
    for (std::size_t i = 0; i < std::max(c.records.size(), expected.size()); ++i) {
      if (i >= c.records.size()) {
        throw DimensionError("checkpoint is missing layer '" + expected[i].first + "'");
      }
      if (i >= expected.size() || c.records[i].name != expected[i].first) {
        throw DimensionError("checkpoint layer '" + c.records[i].name +
                             "' does not match the model spec");
      }
    }
  }
  ModelParams<T> params;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& r = c.records[i];
    if (r.name != expected[i].first) {
      throw DimensionError("checkpoint layer '" + r.name + "' where '" + expected[i].first +
                           "' was expected");
    }
    if (r.shape != expected[i].second) {
      throw DimensionError("checkpoint layer '" + r.name + "' has shape " + shape_str(r.shape) +
                           ", spec expects " + shape_str(expected[i].second));
    }
    params.layers.push_back({r.name, from_record<T>(r, true)});
  }
  if (c.digest != spec.digest()) {
    throw FormatError("checkpoint digest does not match the model spec (" + spec.canonical() + ")");
  }
  return params;
}

#define MEROB_INSTANTIATE_MODEL(T)                                                            \
  template struct ModelParams<T>;                                                             \
  template ModelParams<T> build_model<T>(const ModelSpec&, std::uint64_t);                    \
  template ModelOutput<T> forward(const ModelParams<T>&, const ModelSpec&, const Tensor<T>&,  \
                                  bool);                                                      \
  template Tensor<T> loss_emotion(const ModelOutput<T>&, const Tensor<T>&);                   \
  template Tensor<T> loss_a2m2e(const ModelOutput<T>&, const Tensor<T>&, const Tensor<T>*);   \
  template Tensor<T> training_loss(const ModelSpec&, const ModelOutput<T>&, const Tensor<T>&, \
                                   const Tensor<T>*);                                         \
  template std::vector<std::uint8_t> save_params(const ModelParams<T>&, const ModelSpec&);    \
  template ModelParams<T> load_params<T>(std::span<const std::uint8_t>, const ModelSpec&);

MEROB_INSTANTIATE_MODEL(float)
MEROB_INSTANTIATE_MODEL(double)

#undef MEROB_INSTANTIATE_MODEL

}  // namespace merob
