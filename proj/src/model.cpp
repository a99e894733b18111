#include "ambiseg/model.hpp"

#include <cmath>
#include <string>

#include "ambiseg/ops.hpp"

namespace ambiseg {
namespace {

void check_norm_channels(int c, const std::string& where) {
  const int g = default_groups(static_cast<std::size_t>(c));
  if (c % g != 0) {
    throw ConfigError(where + ": " + std::to_string(c) + " channels not divisible by " +
                      std::to_string(g) + " norm groups");
  }
}

}  // namespace

void DenoiserConfig::validate() const {
  if (channels.empty()) throw ConfigError("denoiser needs at least one resolution");
  if (channels.size() != num_res_blocks.size()) {
    throw ConfigError("channels and num_res_blocks must have the same length");
  }
  for (std::size_t l = 0; l < channels.size(); ++l) {
    if (channels[l] <= 0) throw ConfigError("channel counts must be positive");
    if (num_res_blocks[l] < 1) throw ConfigError("each resolution needs at least one ResBlock");
    check_norm_channels(channels[l], "level " + std::to_string(l));
    check_norm_channels(2 * channels[l], "decoder level " + std::to_string(l));
  }
  if (middle_blocks < 0) throw ConfigError("middle_blocks must be non-negative");
  if (time_embed_dim <= 0 || time_embed_dim % 2 != 0) {
    throw ConfigError("time_embed_dim must be a positive even number");
  }
  if (use_attention) {
    throw ConfigError("attention layers are not available in this build; set use_attention=false");
  }
}

template <typename T>
BasicTensor<T> sinusoidal_embedding(std::span<const double> t, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw ConfigError("embedding dim must be positive and even");
  const int half = dim / 2;
  std::vector<T> out(t.size() * static_cast<std::size_t>(dim));
  for (std::size_t n = 0; n < t.size(); ++n) {
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / half);
      const double arg = 1000.0 * t[n] * freq;
      out[n * dim + k] = static_cast<T>(std::sin(arg));
      out[n * dim + half + k] = static_cast<T>(std::cos(arg));
    }
  }
  return BasicTensor<T>({t.size(), static_cast<std::size_t>(dim)}, std::move(out));
}

// Creates parameters in canonical order and registers them with the model.
template <typename T>
class BasicDenoiserModel<T>::Builder {
 public:
  Builder(BasicDenoiserModel& model, Rng& rng) : model_(model), rng_(rng) {}

  Conv conv(const std::string& name, int in, int out, int k, int stride = 1, bool zero = false) {
    const double bound = zero ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in * k * k));
    Conv c;
    c.weight = param(name + ".weight",
                     {static_cast<std::size_t>(out), static_cast<std::size_t>(in),
                      static_cast<std::size_t>(k), static_cast<std::size_t>(k)},
                     bound, 0.0);
    c.bias = param(name + ".bias", {static_cast<std::size_t>(out)}, bound, 0.0);
    c.stride = stride;
    return c;
  }

  Norm norm(const std::string& name, int channels) {
    Norm n;
    n.scale = param(name + ".scale", {static_cast<std::size_t>(channels)}, 0.0, 1.0);
    n.shift = param(name + ".shift", {static_cast<std::size_t>(channels)}, 0.0, 0.0);
    n.groups = default_groups(static_cast<std::size_t>(channels));
    return n;
  }

  Dense dense(const std::string& name, int in, int out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Dense d;
    d.weight = param(name + ".weight", {static_cast<std::size_t>(out), static_cast<std::size_t>(in)},
                     bound, 0.0);
    d.bias = param(name + ".bias", {static_cast<std::size_t>(out)}, bound, 0.0);
    return d;
  }

  ResBlock res_block(const std::string& name, int in, int out, int temb) {
    ResBlock b;
    b.norm1 = norm(name + ".norm1", in);
    b.conv1 = conv(name + ".conv1", in, out, 3);
    b.time_proj = dense(name + ".time_proj", temb, out);
    b.norm2 = norm(name + ".norm2", out);
    b.conv2 = conv(name + ".conv2", out, out, 3);
    if (in != out) b.skip = conv(name + ".skip", in, out, 1);
    return b;
  }

 private:
  BasicTensor<T> param(const std::string& name, Shape shape, double bound, double fill) {
    BasicTensor<T> t(std::move(shape), static_cast<T>(fill));
    if (bound > 0.0) {
      for (auto& v : t.data()) v = static_cast<T>(rng_.uniform(-bound, bound));
    }
    t.set_requires_grad(true);
    model_.params_.push_back({name, t});
    return t;
  }

  BasicDenoiserModel& model_;
  Rng& rng_;
};

template <typename T>
BasicDenoiserModel<T> BasicDenoiserModel<T>::init(const DenoiserConfig& config, Rng& rng) {
  config.validate();
  BasicDenoiserModel m;
  m.config_ = config;
  Builder b(m, rng);
  const int temb = config.time_embed_dim;
  const auto& ch = config.channels;
  const int levels = static_cast<int>(ch.size());

  m.time1_ = b.dense("time.0", temb, temb);
  m.time2_ = b.dense("time.1", temb, temb);
  m.conv_in_ = b.conv("conv_in", 2, ch[0], 3);
  int cur = ch[0];
  for (int l = 0; l < levels; ++l) {
    Level level;
    for (int k = 0; k < config.num_res_blocks[l]; ++k) {
      level.blocks.push_back(b.res_block("enc." + std::to_string(l) + "." + std::to_string(k), cur, ch[l], temb));
      cur = ch[l];
    }
    if (l + 1 < levels) level.resample = b.conv("enc." + std::to_string(l) + ".down", cur, cur, 3, 2);
    m.encoder_.push_back(std::move(level));
  }
  for (int k = 0; k < config.middle_blocks; ++k) {
    m.middle_.push_back(b.res_block("mid." + std::to_string(k), cur, cur, temb));
  }
  for (int l = levels - 1; l >= 0; --l) {
    Level level;
    for (int k = 0; k < config.num_res_blocks[l]; ++k) {
      level.blocks.push_back(
          b.res_block("dec." + std::to_string(l) + "." + std::to_string(k), cur + ch[l], ch[l], temb));
      cur = ch[l];
    }
    if (l > 0) {
      level.resample = b.conv("dec." + std::to_string(l) + ".up", cur, ch[l - 1], 3);
      cur = ch[l - 1];
    }
    m.decoder_.push_back(std::move(level));
  }
  m.norm_out_ = b.norm("out.norm", cur);
  m.conv_out_ = b.conv("out.conv", cur, 1, 3, 1, /*zero=*/true);
  return m;
}

template <typename T>
BasicDenoiserModel<T> BasicDenoiserModel<T>::from_params(const DenoiserConfig& config,
                                                         std::vector<Param> params) {
  // Build the layout with a throwaway stream, then overwrite the values.
  config.validate();
  Rng dummy(0);
  BasicDenoiserModel shape_model = init(config, dummy);
  if (params.size() != shape_model.params_.size()) {
    throw ConfigError("checkpoint has " + std::to_string(params.size()) +
                      " parameters, config expects " + std::to_string(shape_model.params_.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& expected = shape_model.params_[i];
    if (params[i].name != expected.name || params[i].tensor.shape() != expected.tensor.shape()) {
      throw ConfigError("checkpoint parameter " + params[i].name + " " +
                        shape_to_string(params[i].tensor.shape()) + " does not match expected " +
                        expected.name + " " + shape_to_string(expected.tensor.shape()));
    }
    auto dst = expected.tensor.data();
    auto src = params[i].tensor.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return shape_model;
}

template <typename T>
std::size_t BasicDenoiserModel<T>::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
BasicTensor<T> BasicDenoiserModel<T>::time_embedding(std::span<const double> t) const {
  auto h = sinusoidal_embedding<T>(t, config_.time_embed_dim);
  h = silu(linear(h, time1_.weight, time1_.bias));
  return linear(h, time2_.weight, time2_.bias);
}

template <typename T>
BasicTensor<T> BasicDenoiserModel<T>::run_block(const ResBlock& block, const BasicTensor<T>& x,
                                                const BasicTensor<T>& time_act) const {
  auto h = silu(group_norm(x, block.norm1.groups, block.norm1.scale, block.norm1.shift));
  h = conv2d(h, block.conv1.weight, block.conv1.bias, 1);
  // Added after the norm: with one channel per group the norm would remove
  // a per-channel time offset entirely.
  h = group_norm(h, block.norm2.groups, block.norm2.scale, block.norm2.shift);
  h = silu(add_channel_bias(h, linear(time_act, block.time_proj.weight, block.time_proj.bias)));
  h = conv2d(h, block.conv2.weight, block.conv2.bias, 1);
  const auto residual = block.skip ? conv2d(x, block.skip->weight, block.skip->bias, 1) : x;
  return add(residual, h);
}

template <typename T>
BasicPrediction<T> BasicDenoiserModel<T>::forward(const BasicTensor<T>& x_t,
                                                  const BasicTensor<T>& image,
                                                  std::span<const double> t) const {
  if (x_t.rank() != 4 || x_t.dim(1) != 1 || x_t.shape() != image.shape()) {
    throw ShapeError("denoiser expects x_t and image of shape [N,1,H,W], got " +
                     shape_to_string(x_t.shape()) + " and " + shape_to_string(image.shape()));
  }
  const auto mult = static_cast<std::size_t>(config_.spatial_multiple());
  if (x_t.dim(2) % mult != 0 || x_t.dim(3) % mult != 0) {
    throw ConfigError("spatial dims " + shape_to_string(x_t.shape()) + " must be divisible by " +
                      std::to_string(mult));
  }
  if (t.size() != x_t.dim(0)) throw UsageError("denoiser needs one time per batch element");

  const auto time_act = silu(time_embedding(t));
  auto h = conv2d(concat_channels(x_t, image), conv_in_.weight, conv_in_.bias, 1);
  std::vector<BasicTensor<T>> skips;
  for (const auto& level : encoder_) {
    for (const auto& block : level.blocks) {
      h = run_block(block, h, time_act);
      skips.push_back(h);
    }
    if (level.resample) h = conv2d(h, level.resample->weight, level.resample->bias, 2);
  }
  for (const auto& block : middle_) h = run_block(block, h, time_act);
  for (const auto& level : decoder_) {
    for (const auto& block : level.blocks) {
      h = run_block(block, concat_channels(h, skips.back()), time_act);
      skips.pop_back();
    }
    if (level.resample) {
      h = conv2d(upsample_nearest2x(h), level.resample->weight, level.resample->bias, 1);
    }
  }
  h = silu(group_norm(h, norm_out_.groups, norm_out_.scale, norm_out_.shift));
  h = conv2d(h, conv_out_.weight, conv_out_.bias, 1);
  return {config_.prediction_kind, h};
}

template <typename T>
void BasicDenoiserModel<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
BasicDenoiserModel<T> BasicDenoiserModel<T>::clone() const {
  std::vector<Param> ps;
  for (const auto& p : params_) ps.push_back({p.name, p.tensor.clone()});
  return from_params(config_, std::move(ps));
}

template class BasicDenoiserModel<float>;
template class BasicDenoiserModel<double>;
template BasicTensor<float> sinusoidal_embedding<float>(std::span<const double>, int);
template BasicTensor<double> sinusoidal_embedding<double>(std::span<const double>, int);

Tensor ModelDenoiser::predict(const Tensor& x_t, const Tensor& image,
                              std::span<const double> t) const {
  NoGradGuard no_grad;
  return model_.forward(x_t, image, t).value;
}

}  // namespace ambiseg
