// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include "core/model.hpp"

#include <cmath>

#include "core/io.hpp"
#include "core/rng.hpp"

namespace locoalign::model {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kCheckpointVersion = 1;

json conv_specs_json(const std::vector<ConvSpec>& layers) {
  json arr = json::array();
  for (const auto& l : layers) arr.push_back({{"out_channels", l.out_channels}, {"kernel", l.kernel}, {"stride", l.stride}});
  return arr;
}

std::vector<ConvSpec> conv_specs_from(const json& arr) {
  std::vector<ConvSpec> out;
  for (const auto& e : arr)
    out.push_back({e.at("out_channels").get<std::size_t>(), e.at("kernel").get<std::size_t>(), e.at("stride").get<std::size_t>()});
  return out;
}

json seq_json(const SeqEncoderConfig& c) {
  return {{"in_channels", c.in_channels}, {"window", c.window},   {"layers", conv_specs_json(c.layers)},
          {"groups", c.groups},           {"hidden", c.hidden},   {"out_dim", c.out_dim},
          {"normalize_input", c.normalize_input}};
}

SeqEncoderConfig seq_from(const json& j) {
  SeqEncoderConfig c;
  c.in_channels = j.at("in_channels").get<std::size_t>();
  c.window = j.at("window").get<std::size_t>();
  c.layers = conv_specs_from(j.at("layers"));
  c.groups = j.at("groups").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.out_dim = j.at("out_dim").get<std::size_t>();
  c.normalize_input = j.at("normalize_input").get<bool>();
  return c;
}

/// Flattened feature count after the observation conv stack.
std::size_t obs_flat_dim(const ObsEncoderConfig& c) {
  std::size_t h = c.height, w = c.width, ch = 1;
  for (const auto& l : c.layers) {
    h = ad::conv_out_len(h, l.kernel, l.stride, l.kernel / 2);
    w = ad::conv_out_len(w, l.kernel, l.stride, l.kernel / 2);
    ch = l.out_channels;
  }
  return h * w * ch;
}

std::size_t seq_head_in(const SeqEncoderConfig& c) {
  const std::size_t last = c.layers.empty() ? c.in_channels : c.layers.back().out_channels;
  return last + (c.normalize_input ? 2 * c.in_channels : 0);
}

void validate_seq(const SeqEncoderConfig& c, const char* name) {
  const std::string n(name);
  require(c.in_channels > 0 && c.window > 0, ErrorKind::Config, n + " encoder: channels and window must be positive");
  require(!c.layers.empty(), ErrorKind::Config, n + " encoder: needs at least one conv layer");
  require(c.hidden > 0 && c.out_dim > 0, ErrorKind::Config, n + " encoder: widths must be positive");
  std::size_t len = c.window;
  for (const auto& l : c.layers) {
    require(l.out_channels > 0 && l.kernel > 0 && l.stride > 0, ErrorKind::Config, n + " encoder: invalid conv layer");
    require(c.groups > 0 && l.out_channels % c.groups == 0, ErrorKind::Config,
            n + " encoder: " + std::to_string(l.out_channels) + " channels not divisible by " + std::to_string(c.groups) + " groups");
    len = ad::conv_out_len(len, l.kernel, l.stride, l.kernel / 2);
  }
}

struct Initializer {
  std::uint64_t seed;
  ParamStore<float>& store;

  void uniform(const std::string& name, ad::Shape shape, std::size_t fan_in, double gain) {
    Rng rng(derive_seed(seed, name));
    const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
    std::vector<float> v(ad::numel_of(shape));
    for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
    store.add(name, ad::Tensor<float>(std::move(shape), std::move(v), true));
  }
  void constant(const std::string& name, ad::Shape shape, float value) {
    store.add(name, ad::Tensor<float>::full(std::move(shape), value, true));
  }
  /// Weight followed by relu gets gain sqrt(2).
  void dense(const std::string& prefix, std::size_t in, std::size_t out, bool relu_after) {
    uniform(prefix + ".weight", {out, in}, in, relu_after ? std::sqrt(2.0) : 1.0);
    constant(prefix + ".bias", {out}, 0.0f);
  }
  void mlp2(const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out) {
    dense(prefix + ".fc0", in, hidden, true);
    dense(prefix + ".fc1", hidden, out, false);
  }
  void seq(const std::string& prefix, const SeqEncoderConfig& c) {
    std::size_t cin = c.in_channels;
    for (std::size_t i = 0; i < c.layers.size(); ++i) {
      const auto& l = c.layers[i];
      const std::string p = prefix + ".conv" + std::to_string(i);
      uniform(p + ".weight", {l.out_channels, cin, l.kernel}, cin * l.kernel, std::sqrt(2.0));
      constant(prefix + ".gn" + std::to_string(i) + ".gamma", {l.out_channels}, 1.0f);
      constant(prefix + ".gn" + std::to_string(i) + ".beta", {l.out_channels}, 0.0f);
      cin = l.out_channels;
    }
    mlp2(prefix + ".head", seq_head_in(c), c.hidden, c.out_dim);
  }
  void obs(const std::string& prefix, const ObsEncoderConfig& c) {
    std::size_t cin = 1;
    for (std::size_t i = 0; i < c.layers.size(); ++i) {
      const auto& l = c.layers[i];
      const std::string p = prefix + ".conv" + std::to_string(i);
      uniform(p + ".weight", {l.out_channels, cin, l.kernel, l.kernel}, cin * l.kernel * l.kernel, std::sqrt(2.0));
      constant(p + ".bias", {l.out_channels}, 0.0f);
      cin = l.out_channels;
    }
    mlp2(prefix + ".head", obs_flat_dim(c), c.hidden, c.out_dim);
  }
};

}  // namespace

ModelConfig ModelConfig::standard(std::size_t image_height, std::size_t image_width, std::size_t loco_channels,
                                  std::size_t window) {
  ModelConfig c;
  c.obs.height = image_height;
  c.obs.width = image_width;
  c.obs.layers = {{8, 3, 2}, {16, 3, 2}, {32, 3, 2}, {32, 3, 2}};
  c.action.in_channels = 2;
  c.action.window = window;
  c.action.layers = {{16, 5, 2}, {16, 5, 2}, {32, 5, 2}, {32, 5, 2}};
  c.loco.in_channels = loco_channels;
  c.loco.window = window;
  c.loco.layers = {{32, 5, 2}, {32, 5, 2}, {64, 5, 2}, {64, 5, 2}};
  c.loco.normalize_input = true;
  return c;
}

ModelConfig ModelConfig::tiny(std::size_t image_height, std::size_t image_width, std::size_t loco_channels, std::size_t window) {
  ModelConfig c;
  c.obs.height = image_height;
  c.obs.width = image_width;
  c.obs.layers = {{4, 3, 2}, {4, 3, 2}, {8, 3, 2}, {8, 3, 2}};
  c.obs.hidden = 8;
  c.obs.out_dim = 8;
  for (auto* s : {&c.action, &c.loco}) {
    s->window = window;
    s->layers = {{4, 5, 2}, {4, 5, 2}, {8, 5, 2}, {8, 5, 2}};
    s->groups = 2;
    s->hidden = 8;
    s->out_dim = 8;
  }
  c.action.in_channels = 2;
  c.loco.in_channels = loco_channels;
  c.loco.normalize_input = true;
  c.fusion_hidden = 8;
  c.proj_hidden = 8;
  c.out_dim = 8;
  return c;
}

void ModelConfig::validate() const {
  validate_seq(action, "action");
  validate_seq(loco, "locomotion");
  require(action.in_channels == 2, ErrorKind::Config, "action encoder must take 2 channels");
  require(obs.height > 0 && obs.width > 0 && !obs.layers.empty(), ErrorKind::Config, "observation encoder: invalid dims");
  for (const auto& l : obs.layers)
    require(l.out_channels > 0 && l.kernel > 0 && l.stride > 0, ErrorKind::Config, "observation encoder: invalid conv layer");
  (void)obs_flat_dim(obs);
  require(obs.out_dim == out_dim && action.out_dim == out_dim && loco.out_dim == out_dim, ErrorKind::Config,
          "all encoders must emit out_dim features");
  require(fusion_hidden > 0 && proj_hidden > 0 && out_dim > 0, ErrorKind::Config, "head widths must be positive");
  require(tau_min > 0 && tau_min <= tau_init && tau_init <= tau_max, ErrorKind::Config, "temperature bounds must bracket tau_init");
}

json ModelConfig::to_json() const {
  return {{"obs",
           {{"height", obs.height},
            {"width", obs.width},
            {"layers", conv_specs_json(obs.layers)},
            {"hidden", obs.hidden},
            {"out_dim", obs.out_dim}}},
          {"action", seq_json(action)},
          {"loco", seq_json(loco)},
          {"fusion_hidden", fusion_hidden},
          {"proj_hidden", proj_hidden},
          {"out_dim", out_dim},
          {"tau_init", tau_init},
          {"tau_min", tau_min},
          {"tau_max", tau_max}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  try {
    const auto& o = j.at("obs");
    c.obs.height = o.at("height").get<std::size_t>();
    c.obs.width = o.at("width").get<std::size_t>();
    c.obs.layers = conv_specs_from(o.at("layers"));
    c.obs.hidden = o.at("hidden").get<std::size_t>();
    c.obs.out_dim = o.at("out_dim").get<std::size_t>();
    c.action = seq_from(j.at("action"));
    c.loco = seq_from(j.at("loco"));
    c.fusion_hidden = j.at("fusion_hidden").get<std::size_t>();
    c.proj_hidden = j.at("proj_hidden").get<std::size_t>();
    c.out_dim = j.at("out_dim").get<std::size_t>();
    c.tau_init = j.at("tau_init").get<double>();
    c.tau_min = j.at("tau_min").get<double>();
    c.tau_max = j.at("tau_max").get<double>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("model config: ") + e.what());
  }
  return c;
}

double Checkpoint::tau() const { return std::exp(-static_cast<double>(params.get("logit_scale").item())); }

Checkpoint init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.seed = seed;
  Initializer init{seed, ckpt.params};
  init.obs("obs", config.obs);
  init.seq("action", config.action);
  init.seq("loco", config.loco);
  init.mlp2("fusion", 2 * config.out_dim, config.fusion_hidden, config.out_dim);
  init.mlp2("proj_s", config.out_dim, config.proj_hidden, config.out_dim);
  init.mlp2("proj_m", config.out_dim, config.proj_hidden, config.out_dim);
  init.constant("logit_scale", {1}, static_cast<float>(std::log(1.0 / config.tau_init)));
  return ckpt;
}

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  io::ensure_dir(dir);
  std::vector<char> blob;
  json tensors = json::array();
  for (const auto& [name, t] : ckpt.params) {
    const std::size_t offset = blob.size();
    io::append_f32(blob, t.data());
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"bytes", t.numel() * 4}});
  }
  json j;
  j["format_version"] = kCheckpointVersion;
  j["seed"] = ckpt.seed;
  j["config"] = ckpt.config.to_json();
  j["tensors"] = std::move(tensors);
  j["total_bytes"] = blob.size();
  io::write_text(dir / "model.bin", std::string(blob.begin(), blob.end()));
  io::write_text(dir / "model.manifest.json", j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const auto manifest_path = dir / "model.manifest.json";
  const auto bin_path = dir / "model.bin";
  if (!fs::exists(manifest_path) || !fs::exists(bin_path))
    fail(ErrorKind::Checkpoint, "checkpoint files missing in " + dir.string());
  json j;
  try {
    j = json::parse(io::read_text(manifest_path));
  } catch (const json::exception& e) {
    fail(ErrorKind::Checkpoint, manifest_path.string() + ": " + e.what());
  }
  Checkpoint ckpt;
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion) fail(ErrorKind::Version, "unsupported checkpoint version " + std::to_string(version));
    ckpt.seed = j.at("seed").get<std::uint64_t>();
    ckpt.config = ModelConfig::from_json(j.at("config"));
    ckpt.config.validate();
    const auto values = io::read_f32(bin_path);
    const std::size_t bin_bytes = values.size() * 4;
    if (bin_bytes != j.at("total_bytes").get<std::size_t>())
      fail(ErrorKind::Checkpoint, "model.bin holds " + std::to_string(bin_bytes) + " bytes, manifest says " +
                                      std::to_string(j.at("total_bytes").get<std::size_t>()));

    // The tensor table must match what the stored config implies, in order.
    const Checkpoint reference = init_params(ckpt.config, 0);
    const auto& table = j.at("tensors");
    if (table.size() != reference.params.size())
      fail(ErrorKind::Checkpoint, "checkpoint lists " + std::to_string(table.size()) + " tensors, config implies " +
                                      std::to_string(reference.params.size()));
    std::size_t expected_offset = 0;
    auto ref = reference.params.begin();
    for (const auto& e : table) {
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<ad::Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto bytes = e.at("bytes").get<std::size_t>();
      if (name != ref->first) fail(ErrorKind::Checkpoint, "unexpected tensor '" + name + "', expected '" + ref->first + "'");
      if (shape != ref->second.shape())
        fail(ErrorKind::Checkpoint, "tensor '" + name + "' has shape " + ad::shape_str(shape) + ", config implies " +
                                        ad::shape_str(ref->second.shape()));
      if (offset != expected_offset || bytes != ad::numel_of(shape) * 4 || offset + bytes > bin_bytes)
        fail(ErrorKind::Checkpoint, "tensor '" + name + "' has an inconsistent byte range");
      const std::size_t first = offset / 4;
      std::vector<float> data(values.begin() + static_cast<std::ptrdiff_t>(first),
                              values.begin() + static_cast<std::ptrdiff_t>(first + bytes / 4));
      ckpt.params.add(name, ad::Tensor<float>(shape, std::move(data), true));
      expected_offset += bytes;
      ++ref;
    }
    if (expected_offset != bin_bytes) fail(ErrorKind::Checkpoint, "model.bin has trailing bytes");
  } catch (const json::exception& e) {
    fail(ErrorKind::Checkpoint, manifest_path.string() + ": " + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Corruption || e.kind() == ErrorKind::Config) fail(ErrorKind::Checkpoint, e.what());
    throw;
  }
  return ckpt;
}

Checkpoint load_checkpoint(const fs::path& dir, const ModelConfig& expected) {
  auto ckpt = load_checkpoint(dir);
  if (!(ckpt.config == expected)) fail(ErrorKind::Checkpoint, "checkpoint config does not match the requested model config");
  return ckpt;
}

// ---------------------------------------------------------------------------

template <typename T>
ad::Tensor<T> Model<T>::mlp2(ad::Tape<T>& tape, const std::string& prefix, const ad::Tensor<T>& x) const {
  auto h = ad::linear(tape, x, p_.get(prefix + ".fc0.weight"), p_.get(prefix + ".fc0.bias"));
  h = ad::relu(tape, h);
  return ad::linear(tape, h, p_.get(prefix + ".fc1.weight"), p_.get(prefix + ".fc1.bias"));
}

template <typename T>
ad::Tensor<T> Model<T>::encode_observation(ad::Tape<T>& tape, const ad::Tensor<T>& images) const {
  const auto& c = cfg_.obs;
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != c.height || images.dim(3) != c.width)
    fail(ErrorKind::Dimension, "observation encoder expects [N,1," + std::to_string(c.height) + "," + std::to_string(c.width) +
                                   "], got " + ad::shape_str(images.shape()));
  ad::Tensor<T> x = images;
  for (std::size_t i = 0; i < c.layers.size(); ++i) {
    const std::string p = "obs.conv" + std::to_string(i);
    x = ad::conv2d(tape, x, p_.get(p + ".weight"), p_.get(p + ".bias"), c.layers[i].stride, c.layers[i].kernel / 2);
    x = ad::relu(tape, x);
  }
  const std::size_t n = x.dim(0);
  x = ad::reshape(tape, x, {n, x.numel() / n});
  return mlp2(tape, "obs.head", x);
}

template <typename T>
ad::Tensor<T> Model<T>::encode_sequence(ad::Tape<T>& tape, const std::string& prefix, const SeqEncoderConfig& c,
                                        const ad::Tensor<T>& x) const {
  if (x.rank() != 3 || x.dim(1) != c.in_channels || x.dim(2) != c.window)
    fail(ErrorKind::Dimension, prefix + " encoder expects [N," + std::to_string(c.in_channels) + "," + std::to_string(c.window) +
                                   "], got " + ad::shape_str(x.shape()));
  ad::Tensor<T> h = c.normalize_input ? ad::instance_norm(tape, x) : x;
  for (std::size_t i = 0; i < c.layers.size(); ++i) {
    const auto& l = c.layers[i];
    const std::string gn = prefix + ".gn" + std::to_string(i);
    h = ad::conv1d(tape, h, p_.get(prefix + ".conv" + std::to_string(i) + ".weight"), l.stride, l.kernel / 2);
    h = ad::group_norm(tape, h, c.groups, p_.get(gn + ".gamma"), p_.get(gn + ".beta"));
    h = ad::relu(tape, h);
  }
  auto pooled = ad::mean_pool(tape, h);
  if (c.normalize_input) pooled = ad::concat_cols(tape, pooled, ad::channel_stats(tape, x));
  return mlp2(tape, prefix + ".head", pooled);
}

template <typename T>
ad::Tensor<T> Model<T>::fuse(ad::Tape<T>& tape, const ad::Tensor<T>& vo, const ad::Tensor<T>& vc) const {
  if (vo.rank() != 2 || vc.rank() != 2 || vo.dim(1) != cfg_.out_dim || vc.dim(1) != cfg_.out_dim || vo.dim(0) != vc.dim(0))
    fail(ErrorKind::Dimension, "fuse expects two [N," + std::to_string(cfg_.out_dim) + "] inputs, got " + ad::shape_str(vo.shape()) +
                                   " and " + ad::shape_str(vc.shape()));
  return mlp2(tape, "fusion", ad::concat_cols(tape, vo, vc));
}

template class Model<float>;
template class Model<double>;

// ---------------------------------------------------------------------------

std::vector<float> replicate_pad(const std::vector<float>& seq, std::size_t frames, std::size_t channels, std::size_t window) {
  require(frames > 0 && seq.size() == frames * channels, ErrorKind::Dimension, "replicate_pad: sequence shape mismatch");
  require(frames <= window, ErrorKind::Dimension, "replicate_pad: sequence longer than window");
  std::vector<float> out(window * channels);
  for (std::size_t t = 0; t < window; ++t)
    std::copy_n(seq.begin() + static_cast<std::ptrdiff_t>((t % frames) * channels), channels,
                out.begin() + static_cast<std::ptrdiff_t>(t * channels));
  return out;
}

template <typename T>
ad::Tensor<T> image_batch(const std::vector<const traj::Image*>& images) {
  require(!images.empty(), ErrorKind::Usage, "image_batch: empty batch");
  const std::size_t h = images.front()->height, w = images.front()->width;
  std::vector<T> data;
  data.reserve(images.size() * h * w);
  for (const auto* img : images) {
    require(img->height == h && img->width == w, ErrorKind::Dimension, "image_batch: inconsistent image sizes");
    data.insert(data.end(), img->pixels.begin(), img->pixels.end());
  }
  return ad::Tensor<T>({images.size(), 1, h, w}, std::move(data));
}

template <typename T>
ad::Tensor<T> sequence_batch(const std::vector<const std::vector<float>*>& seqs, std::size_t window, std::size_t channels) {
  require(!seqs.empty(), ErrorKind::Usage, "sequence_batch: empty batch");
  std::vector<T> data(seqs.size() * channels * window);
  for (std::size_t n = 0; n < seqs.size(); ++n) {
    const auto& s = *seqs[n];
    require(s.size() == window * channels, ErrorKind::Dimension,
            "sequence_batch: expected " + std::to_string(window) + "x" + std::to_string(channels) + " sequence");
    T* dst = data.data() + n * channels * window;
    for (std::size_t t = 0; t < window; ++t)
      for (std::size_t c = 0; c < channels; ++c) dst[c * window + t] = static_cast<T>(s[t * channels + c]);
  }
  return ad::Tensor<T>({seqs.size(), channels, window}, std::move(data));
}

template ad::Tensor<float> image_batch<float>(const std::vector<const traj::Image*>&);
template ad::Tensor<double> image_batch<double>(const std::vector<const traj::Image*>&);
template ad::Tensor<float> sequence_batch<float>(const std::vector<const std::vector<float>*>&, std::size_t, std::size_t);
template ad::Tensor<double> sequence_batch<double>(const std::vector<const std::vector<float>*>&, std::size_t, std::size_t);

}  // namespace locoalign::model
