#include "ambiseg/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>

namespace ambiseg {
namespace {

using nlohmann::ordered_json;
using Kind = DataError::Kind;

constexpr char kMagic[8] = {'A', 'M', 'B', 'S', 'E', 'G', 'C', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xffu));
}

std::uint64_t get_le(const unsigned char* p, int bytes) {
  std::uint64_t v = 0;
  for (int k = 0; k < bytes; ++k) v |= static_cast<std::uint64_t>(p[k]) << (8 * k);
  return v;
}

void put_floats(std::string& out, std::span<const float> values) {
  for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

void get_floats(const unsigned char* p, std::span<float> out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(p + 4 * i, 4)));
  }
}

ordered_json config_json(const DenoiserConfig& c) {
  return {{"channels", c.channels},
          {"num_res_blocks", c.num_res_blocks},
          {"middle_blocks", c.middle_blocks},
          {"prediction_kind", std::string(to_string(c.prediction_kind))},
          {"time_embed_dim", c.time_embed_dim},
          {"use_attention", c.use_attention}};
}

DenoiserConfig config_from(const ordered_json& j) {
  DenoiserConfig c;
  c.channels = j.at("channels").get<std::vector<int>>();
  c.num_res_blocks = j.at("num_res_blocks").get<std::vector<int>>();
  c.middle_blocks = j.at("middle_blocks").get<int>();
  c.prediction_kind = parse_prediction_kind(j.at("prediction_kind").get<std::string>());
  c.time_embed_dim = j.at("time_embed_dim").get<int>();
  c.use_attention = j.at("use_attention").get<bool>();
  return c;
}

}  // namespace

std::string denoiser_config_to_json(const DenoiserConfig& config) {
  return config_json(config).dump();
}

DenoiserConfig denoiser_config_from_json(std::string_view text) {
  try {
    return config_from(ordered_json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

std::string serialize_checkpoint(const DenoiserModel& model, const AdamWState& optimizer,
                                 const CheckpointMeta& meta) {
  const auto& params = model.params();
  const bool moments = !optimizer.m.empty();
  if (moments && (optimizer.m.size() != params.size() || optimizer.v.size() != params.size())) {
    throw ShapeError("checkpoint: optimizer state does not match the parameter list");
  }
  ordered_json manifest = ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    manifest.push_back({{"name", p.name},
                        {"shape", p.tensor.shape()},
                        {"offset", offset},
                        {"count", p.tensor.numel()}});
    offset += p.tensor.numel();
  }
  ordered_json experiment;
  try {
    experiment = ordered_json::parse(meta.experiment);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("checkpoint: experiment config is not JSON: ") + e.what());
  }

  ordered_json header;
  header["model"] = config_json(model.config());
  header["params"] = std::move(manifest);
  header["param_floats"] = offset;
  header["optimizer"] = {{"step", optimizer.step},
                         {"lr", optimizer.lr},
                         {"beta1", optimizer.beta1},
                         {"beta2", optimizer.beta2},
                         {"eps", optimizer.eps},
                         {"weight_decay", optimizer.weight_decay},
                         {"moments", moments}};
  header["input_size"] = {meta.input_height, meta.input_width};
  header["experiment"] = std::move(experiment);
  const std::string text = header.dump(2);

  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kCheckpointFormatVersion);
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset * 4 * (moments ? 3 : 1));
  for (const auto& p : params) put_floats(out, p.tensor.data());
  if (moments) {
    for (const auto& m : optimizer.m) put_floats(out, m);
    for (const auto& v : optimizer.v) put_floats(out, v);
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  constexpr std::size_t prefix = sizeof(kMagic) + 4 + 8;
  if (bytes.size() < prefix) throw DataError(Kind::kTruncated, "checkpoint shorter than its preamble");
  if (std::memcmp(p, kMagic, sizeof(kMagic)) != 0) {
    throw DataError(Kind::kCorruptHeader, "not a checkpoint (bad magic)");
  }
  const auto version = static_cast<std::uint32_t>(get_le(p + 8, 4));
  if (version != kCheckpointFormatVersion) {
    throw DataError(Kind::kVersionMismatch, "checkpoint format version " + std::to_string(version) +
                                                ", expected " +
                                                std::to_string(kCheckpointFormatVersion));
  }
  const std::uint64_t header_len = get_le(p + 12, 8);
  if (header_len > bytes.size() - prefix) throw DataError(Kind::kTruncated, "checkpoint header truncated");

  ordered_json header;
  DenoiserConfig config;
  AdamWState opt;
  std::vector<NamedParam> params;
  bool moments = false;
  std::uint64_t total = 0;
  CheckpointMeta meta;
  try {
    header = ordered_json::parse(bytes.substr(prefix, header_len));
    config = config_from(header.at("model"));
    const auto& o = header.at("optimizer");
    opt.step = o.at("step").get<std::int64_t>();
    opt.lr = o.at("lr").get<double>();
    opt.beta1 = o.at("beta1").get<double>();
    opt.beta2 = o.at("beta2").get<double>();
    opt.eps = o.at("eps").get<double>();
    opt.weight_decay = o.at("weight_decay").get<double>();
    moments = o.at("moments").get<bool>();
    total = header.at("param_floats").get<std::uint64_t>();
    std::uint64_t expected_offset = 0;
    for (const auto& entry : header.at("params")) {
      const auto shape = entry.at("shape").get<Shape>();
      const auto count = entry.at("count").get<std::uint64_t>();
      if (entry.at("offset").get<std::uint64_t>() != expected_offset || shape_numel(shape) != count) {
        throw DataError(Kind::kCorruptHeader, "checkpoint manifest is inconsistent at " +
                                                  entry.at("name").get<std::string>());
      }
      expected_offset += count;
      params.push_back({entry.at("name").get<std::string>(), Tensor(shape)});
    }
    if (expected_offset != total) throw DataError(Kind::kCorruptHeader, "checkpoint float count mismatch");
    meta.experiment = header.at("experiment").dump();
    const auto size = header.at("input_size").get<std::array<int, 2>>();
    meta.input_height = size[0];
    meta.input_width = size[1];
  } catch (const nlohmann::json::exception& e) {
    throw DataError(Kind::kCorruptHeader, std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(Kind::kCorruptHeader, std::string("checkpoint header: ") + e.what());
  }

  const std::uint64_t floats = total * (moments ? 3 : 1);
  const std::uint64_t blob_size = bytes.size() - prefix - header_len;
  if (blob_size < floats * 4) throw DataError(Kind::kTruncated, "checkpoint blob truncated");
  if (blob_size > floats * 4) throw DataError(Kind::kCorruptHeader, "checkpoint has trailing bytes");

  const unsigned char* blob = p + prefix + header_len;
  for (auto& prm : params) {
    get_floats(blob, prm.tensor.data());
    blob += 4 * prm.tensor.numel();
  }
  if (moments) {
    for (auto* buffers : {&opt.m, &opt.v}) {
      for (const auto& prm : params) {
        buffers->emplace_back(prm.tensor.numel());
        get_floats(blob, buffers->back());
        blob += 4 * prm.tensor.numel();
      }
    }
  }
  DenoiserModel model = [&] {
    try {
      return DenoiserModel::from_params(config, std::move(params));
    } catch (const Error& e) {
      throw DataError(Kind::kCorruptHeader, std::string("checkpoint parameters: ") + e.what());
    }
  }();
  return {std::move(model), std::move(opt), std::move(meta)};
}

void save_checkpoint(const std::filesystem::path& path, const DenoiserModel& model,
                     const AdamWState& optimizer, const CheckpointMeta& meta) {
  const std::string bytes = serialize_checkpoint(model, optimizer, meta);
  // Write then rename so an interrupted save keeps the previous checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(Kind::kIo, "cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError(Kind::kIo, "cannot move checkpoint into " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(Kind::kIo, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace ambiseg
