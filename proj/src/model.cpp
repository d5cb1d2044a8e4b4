#include "bvxl/model.h"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bvxl {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'B', 'V', 'X', 'L'};
constexpr std::uint32_t kFormatVersion = 1;

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
  return out;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const std::string& require(const KeyValues& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw DataError("model config: missing key '" + key + "'");
  return it->second;
}

}  // namespace

std::string role_name(ParamRole role) {
  switch (role) {
    case ParamRole::weight:
      return "weight";
    case ParamRole::bias:
      return "bias";
    case ParamRole::mu:
      return "mu";
    case ParamRole::sigma_raw:
      return "sigma_raw";
    case ParamRole::dropout_logit:
      return "dropout_logit";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// MeshNetConfig

MeshNetConfig MeshNetConfig::desk_scale(Method method, std::size_t filters) {
  MeshNetConfig cfg;
  cfg.method = method;
  cfg.num_classes = 8;
  cfg.filters = filters;
  cfg.subvolume_size = 16;
  // Narrow layers tolerate less injected noise: start the posterior near its mean.
  cfg.sigma_init = 0.005;
  cfg.keep_init = 0.99;
  return cfg;
}

void MeshNetConfig::validate() const {
  if (num_classes < 2) throw ConfigError("MeshNet: need at least two classes");
  if (in_channels < 1 || filters < 1) throw ConfigError("MeshNet: channel counts must be positive");
  if (dilations.empty()) throw ConfigError("MeshNet: need at least one 3^3 layer");
  if (paddings.size() != dilations.size() + 1)
    throw ConfigError("MeshNet: " + std::to_string(paddings.size()) + " paddings for " +
                      std::to_string(dilations.size()) + " dilated layers plus the 1^3 classifier (expected " +
                      std::to_string(dilations.size() + 1) + ")");
  for (std::size_t d : dilations)
    if (d == 0) throw ConfigError("MeshNet: dilations must be positive");
  if (!(bd_keep_prob > 0 && bd_keep_prob <= 1)) throw ConfigError("MeshNet: bd keep probability must lie in (0, 1]");
  if (!(temperature > 0)) throw ConfigError("MeshNet: temperature must be positive");
  if (subvolume_size < 1) throw ConfigError("MeshNet: subvolume size must be positive");
  prior.validate();
}

std::vector<ConvSpec> MeshNetConfig::layer_specs() const {
  std::vector<ConvSpec> specs;
  std::size_t cin = in_channels;
  for (std::size_t i = 0; i < dilations.size(); ++i) {
    specs.push_back(ConvSpec{cin, filters, {1, 1, 1}, dilations[i], paddings[i]});
    cin = filters;
  }
  specs.push_back(ConvSpec{cin, num_classes, {0, 0, 0}, 1, paddings.back()});
  return specs;
}

KeyValues MeshNetConfig::to_key_values() const {
  return {
      {"num_classes", std::to_string(num_classes)},
      {"in_channels", std::to_string(in_channels)},
      {"filters", std::to_string(filters)},
      {"dilations", join(dilations)},
      {"paddings", join(paddings)},
      {"method", method_name(method)},
      {"bd_keep_prob", exact(bd_keep_prob)},
      {"p_prior", exact(prior.p_prior)},
      {"mu_prior", exact(prior.mu_prior)},
      {"sigma_prior", exact(prior.sigma_prior)},
      {"temperature", exact(temperature)},
      {"sigma_init", exact(sigma_init)},
      {"keep_init", exact(keep_init)},
      {"subvolume_size", std::to_string(subvolume_size)},
  };
}

MeshNetConfig MeshNetConfig::from_key_values(const KeyValues& kv) {
  MeshNetConfig cfg;
  try {
    cfg.num_classes = std::stoull(require(kv, "num_classes"));
    cfg.in_channels = std::stoull(require(kv, "in_channels"));
    cfg.filters = std::stoull(require(kv, "filters"));
    cfg.dilations = split_sizes(require(kv, "dilations"));
    cfg.paddings = split_sizes(require(kv, "paddings"));
    cfg.method = parse_method(require(kv, "method"));
    cfg.bd_keep_prob = std::stod(require(kv, "bd_keep_prob"));
    cfg.prior.p_prior = std::stod(require(kv, "p_prior"));
    cfg.prior.mu_prior = std::stod(require(kv, "mu_prior"));
    cfg.prior.sigma_prior = std::stod(require(kv, "sigma_prior"));
    cfg.temperature = std::stod(require(kv, "temperature"));
    cfg.sigma_init = std::stod(require(kv, "sigma_init"));
    cfg.keep_init = std::stod(require(kv, "keep_init"));
    cfg.subvolume_size = std::stoull(require(kv, "subvolume_size"));
  } catch (const std::logic_error& e) {
    throw DataError(std::string("model config: malformed value (") + e.what() + ")");
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// MeshNet

template <typename T>
MeshNet<T> MeshNet<T>::build(const MeshNetConfig& cfg, Rng& rng) {
  cfg.validate();
  MeshNet net;
  net.cfg_ = cfg;
  for (const ConvSpec& spec : cfg.layer_specs()) {
    Layer layer;
    layer.spec = spec;
    if (cfg.method == Method::ssd) {
      layer.ssd = SpikeSlabConvParams<T>::initialize(spec, rng, cfg.sigma_init, cfg.keep_init, cfg.temperature);
    } else {
      const double stddev = std::sqrt(2.0 / static_cast<double>(spec.in_channels * spec.taps()));
      std::vector<T> w(shape_numel(spec.weight_shape()));
      for (auto& x : w) x = static_cast<T>(stddev * rng.normal());
      layer.weight = BasicTensor<T>(spec.weight_shape(), std::move(w), true);
      layer.bias = BasicTensor<T>::zeros({spec.out_channels}, true);
    }
    net.layers_.push_back(std::move(layer));
  }
  return net;
}

template <typename T>
BasicTensor<T> MeshNet<T>::forward(const BasicTensor<T>& input, Rng& rng, ForwardMode mode) const {
  const std::size_t s = cfg_.subvolume_size;
  if (input.shape() != Shape{cfg_.in_channels, s, s, s})
    throw ShapeError("MeshNet forward: input " + shape_string(input.shape()) + " expected " +
                     shape_string(Shape{cfg_.in_channels, s, s, s}));
  const bool sample = mode == ForwardMode::sample;
  BasicTensor<T> h = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& layer = layers_[i];
    switch (cfg_.method) {
      case Method::map:
        h = dilated_conv3d(h, layer.weight, layer.bias, layer.spec);
        break;
      case Method::bd:
        // Masks act on the inputs of layers 2..L, after the previous ReLU.
        if (sample && i > 0) h = bernoulli_dropout(h, cfg_.bd_keep_prob, rng);
        h = dilated_conv3d(h, layer.weight, layer.bias, layer.spec);
        break;
      case Method::ssd:
        h = sample ? spike_slab_conv(h, layer.ssd, rng) : dilated_conv3d(h, layer.ssd.mu, layer.ssd.bias, layer.spec);
        break;
    }
    if (i + 1 < layers_.size()) h = relu(h);
  }
  return h;
}

template <typename T>
std::vector<T> MeshNet<T>::predict_mc(const BasicTensor<T>& input, std::size_t n_mc, Rng& rng) const {
  if (n_mc < 1) throw ConfigError("predict_mc: need at least one Monte Carlo sample");
  NoGradGuard no_grad;
  const std::size_t passes = cfg_.method == Method::map ? 1 : n_mc;
  std::vector<double> acc;
  for (std::size_t n = 0; n < passes; ++n) {
    auto probs = softmax_channels(forward(input, rng, ForwardMode::sample));
    if (acc.empty()) acc.assign(probs.size(), 0.0);
    for (std::size_t i = 0; i < probs.size(); ++i) acc[i] += probs[i];
  }
  std::vector<T> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<T>(acc[i] / static_cast<double>(passes));
  return out;
}

template <typename T>
std::vector<NamedParameter<T>> MeshNet<T>::parameters() const {
  std::vector<NamedParameter<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    if (cfg_.method == Method::ssd) {
      out.push_back({i, ParamRole::mu, l.ssd.mu});
      out.push_back({i, ParamRole::sigma_raw, l.ssd.sigma_raw});
      out.push_back({i, ParamRole::dropout_logit, l.ssd.dropout_logit});
      out.push_back({i, ParamRole::bias, l.ssd.bias});
    } else {
      out.push_back({i, ParamRole::weight, l.weight});
      out.push_back({i, ParamRole::bias, l.bias});
    }
  }
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> MeshNet<T>::trainable() const {
  std::vector<BasicTensor<T>> out;
  for (auto& p : parameters()) out.push_back(p.tensor);
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> MeshNet<T>::prior_weights() const {
  std::vector<BasicTensor<T>> out;
  if (cfg_.method == Method::ssd) return out;
  for (const Layer& l : layers_) out.push_back(l.weight);
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> MeshNet<T>::layer_kls() const {
  std::vector<BasicTensor<T>> out;
  if (cfg_.method != Method::ssd) return out;
  for (const Layer& l : layers_) out.push_back(layer_kl(l.ssd, cfg_.prior));
  return out;
}

template <typename T>
ParameterCensus MeshNet<T>::census() const {
  ParameterCensus c;
  for (const Layer& l : layers_) {
    const std::size_t w = shape_numel(l.spec.weight_shape());
    c.weights += w;
    c.biases += l.spec.out_channels;
    if (cfg_.method == Method::ssd) {
      c.sigma_raw += w;
      c.dropout_logits += l.spec.out_channels;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw DataError("checkpoint: unexpected end of file");
  return v;
}

struct Header {
  KeyValues config;
  std::uint64_t seed = 0;
  std::uint8_t scalar_bytes = 0;
  std::uint32_t blobs = 0;
};

Header read_header(std::istream& is, const std::filesystem::path& path) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw DataError("checkpoint " + path.string() + ": bad magic");
  const auto version = get<std::uint32_t>(is);
  if (version != kFormatVersion)
    throw DataError("checkpoint " + path.string() + ": unsupported format version " + std::to_string(version));
  const auto len = get<std::uint32_t>(is);
  std::string block(len, '\0');
  is.read(block.data(), len);
  if (!is) throw DataError("checkpoint: truncated config block");
  Header h;
  std::stringstream ss(block);
  std::string line;
  while (std::getline(ss, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("checkpoint: malformed config line '" + line + "'");
    h.config[line.substr(0, eq)] = line.substr(eq + 1);
  }
  h.seed = get<std::uint64_t>(is);
  h.scalar_bytes = get<std::uint8_t>(is);
  if (h.scalar_bytes != 4 && h.scalar_bytes != 8) throw DataError("checkpoint: unsupported scalar width");
  h.blobs = get<std::uint32_t>(is);
  return h;
}

std::ifstream open_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  return is;
}

}  // namespace

template <typename T>
void MeshNet<T>::save(const std::filesystem::path& path, std::uint64_t seed) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kFormatVersion);
  std::string block;
  for (const auto& [k, v] : cfg_.to_key_values()) block += k + "=" + v + "\n";
  put<std::uint32_t>(os, static_cast<std::uint32_t>(block.size()));
  os.write(block.data(), static_cast<std::streamsize>(block.size()));
  put<std::uint64_t>(os, seed);
  put<std::uint8_t>(os, static_cast<std::uint8_t>(sizeof(T)));
  const auto params = parameters();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.layer));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(p.role));
    const Shape& shape = p.tensor.shape();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) put<std::uint64_t>(os, d);
    auto v = p.tensor.values();
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
  }
  if (!os) throw DataError("error while writing checkpoint " + path.string());
}

template <typename T>
MeshNet<T> MeshNet<T>::load(const std::filesystem::path& path, std::uint64_t* seed) {
  auto is = open_checkpoint(path);
  const Header h = read_header(is, path);
  const MeshNetConfig cfg = MeshNetConfig::from_key_values(h.config);
  Rng scratch(0);
  MeshNet net = build(cfg, scratch);
  auto params = net.parameters();
  if (params.size() != h.blobs)
    throw DataError("checkpoint: " + std::to_string(h.blobs) + " parameter blobs, model expects " +
                    std::to_string(params.size()));
  for (auto& p : params) {
    const auto layer = get<std::uint32_t>(is);
    const auto role = static_cast<ParamRole>(get<std::uint8_t>(is));
    if (layer != p.layer || role != p.role)
      throw DataError("checkpoint: expected layer " + std::to_string(p.layer) + " " + role_name(p.role) + ", found layer " +
                      std::to_string(layer) + " " + role_name(role));
    const auto ndim = get<std::uint32_t>(is);
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is));
    if (shape != p.tensor.shape())
      throw DataError("checkpoint: layer " + std::to_string(layer) + " " + role_name(role) + " has shape " +
                      shape_string(shape) + ", model expects " + shape_string(p.tensor.shape()));
    auto dst = p.tensor.mutable_values();
    if (h.scalar_bytes == sizeof(T)) {
      is.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * sizeof(T)));
    } else if (h.scalar_bytes == 4) {
      std::vector<float> tmp(dst.size());
      is.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(tmp.size() * 4));
      for (std::size_t i = 0; i < tmp.size(); ++i) dst[i] = static_cast<T>(tmp[i]);
    } else {
      std::vector<double> tmp(dst.size());
      is.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(tmp.size() * 8));
      for (std::size_t i = 0; i < tmp.size(); ++i) dst[i] = static_cast<T>(tmp[i]);
    }
    if (!is) throw DataError("checkpoint: truncated parameter blob");
  }
  if (seed) *seed = h.seed;
  return net;
}

std::size_t checkpoint_scalar_bytes(const std::filesystem::path& path) {
  auto is = open_checkpoint(path);
  return read_header(is, path).scalar_bytes;
}

MeshNetConfig checkpoint_config(const std::filesystem::path& path) {
  auto is = open_checkpoint(path);
  return MeshNetConfig::from_key_values(read_header(is, path).config);
}

template class MeshNet<float>;
template class MeshNet<double>;

}  // namespace bvxl
