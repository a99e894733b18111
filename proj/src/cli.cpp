#include "ambiseg/cli.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "ambiseg/checkpoint.hpp"
#include "ambiseg/format.hpp"
#include "ambiseg/metrics.hpp"

namespace ambiseg {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// Reads a flat JSON object as CLI11 config items keyed by long flag name.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    ordered_json j;
    try {
      j = ordered_json::parse(input);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw UsageError("config file must hold a flat JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar_text(key, v));
      } else {
        item.inputs.push_back(scalar_text(key, value));
      }
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  static std::string scalar_text(const std::string& key, const ordered_json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number() || v.is_boolean()) return v.dump();
    throw UsageError("config key '" + key + "' must be a scalar or a list of scalars");
  }
};

// Option values that need conversion after parsing.
struct RawOptions {
  std::string prediction = "x0";
  std::string weighting = "trunc_snr";
  std::string sampler = "ddim";
  std::string crop = "none";
  std::vector<int> jitter{-2, -1, 1, 2};
};

void add_options(CLI::App& app, ExperimentConfig& c, RawOptions& raw) {
  app.set_config("--config", "", "flat JSON config file; command-line flags take precedence");
  app.config_formatter(std::make_shared<JsonConfig>());
  app.allow_config_extras(CLI::config_extras_mode::error);

  app.add_option("--b", c.schedule.input_scale, "input scaling b in (0, 1]")->capture_default_str()->group("Schedule");
  app.add_option("--t-min", c.t_min, "smallest diffusion time")->capture_default_str()->group("Schedule");

  auto* m = &app;
  m->add_option("--prediction", raw.prediction, "x0, epsilon or v")->capture_default_str()->group("Model");
  m->add_option("--channels", c.model.channels, "channels per resolution")->delimiter(',')->capture_default_str()->group("Model");
  m->add_option("--res-blocks", c.model.num_res_blocks, "ResBlocks per resolution")->delimiter(',')->capture_default_str()->group("Model");
  m->add_option("--middle-blocks", c.model.middle_blocks)->capture_default_str()->group("Model");
  m->add_option("--time-embed-dim", c.model.time_embed_dim)->capture_default_str()->group("Model");
  m->add_flag("--attention", c.model.use_attention, "not supported; rejected")->group("Model");
  m->add_option("--init-seed", c.init_seed, "parameter initialization seed")->capture_default_str()->group("Model");

  m->add_option("--weighting", raw.weighting, "snr, trunc_snr, snr_plus_one, uniform or sigmoid")->capture_default_str()->group("Loss");
  m->add_option("--sigmoid-bias", c.loss.sigmoid_bias)->capture_default_str()->group("Loss");

  m->add_option("--sampler", raw.sampler, "ddim or ddpm")->capture_default_str()->group("Sampler");
  m->add_option("--sampler-steps", c.sampler.steps)->capture_default_str()->group("Sampler");
  m->add_option("--sample-seed", c.sampler.seed)->capture_default_str()->group("Sampler");

  m->add_option("--steps", c.train.steps)->capture_default_str()->group("Training");
  m->add_option("--batch", c.train.batch_size)->capture_default_str()->group("Training");
  m->add_option("--lr", c.train.lr)->capture_default_str()->group("Training");
  m->add_option("--clip", c.train.clip, "gradient norm limit")->capture_default_str()->group("Training");
  m->add_option("--decay-fraction", c.train.decay_fraction, "share of steps with cosine decay")->capture_default_str()->group("Training");
  m->add_option("--train-seed", c.train.seed)->capture_default_str()->group("Training");
  m->add_option("--checkpoint-every", c.train.checkpoint_every, "0 saves only at the end")->capture_default_str()->group("Training");
  m->add_option("--crop", raw.crop, "none, central or random")->capture_default_str()->group("Training");
  m->add_option("--crop-size", c.train.crop_size)->capture_default_str()->group("Training");

  m->add_option("--n", c.num_samples, "number of samples to generate")->capture_default_str()->group("Data");
  m->add_option("--image-size", c.synth.image_size)->capture_default_str()->group("Data");
  m->add_option("--radius-min", c.synth.radius_min)->capture_default_str()->group("Data");
  m->add_option("--radius-max", c.synth.radius_max)->capture_default_str()->group("Data");
  m->add_option("--contrast-min", c.synth.contrast_min)->capture_default_str()->group("Data");
  m->add_option("--contrast-max", c.synth.contrast_max)->capture_default_str()->group("Data");
  m->add_option("--empty-prob-low-contrast", c.synth.empty_prob_at_min_contrast)->capture_default_str()->group("Data");
  m->add_option("--empty-prob-high-contrast", c.synth.empty_prob_at_max_contrast)->capture_default_str()->group("Data");
  m->add_option("--jitter", raw.jitter, "four annotator radius offsets")->delimiter(',')->capture_default_str()->group("Data");
  m->add_option("--noise-std", c.synth.noise_std)->capture_default_str()->group("Data");
  m->add_option("--edge-width", c.synth.edge_width)->capture_default_str()->group("Data");
  m->add_option("--background", c.synth.background)->capture_default_str()->group("Data");
  m->add_option("--data-seed", c.synth.seed)->capture_default_str()->group("Data");

  m->add_option("--data", c.data, "dataset directory")->capture_default_str()->group("Paths");
  m->add_option("--eval-data", c.eval_data, "evaluation dataset directory (sweep)")->capture_default_str()->group("Paths");
  m->add_option("--checkpoint", c.checkpoint, "checkpoint to sample or evaluate")->capture_default_str()->group("Paths");
  m->add_option("--resume", c.resume, "checkpoint to continue training from")->group("Paths");
  m->add_option("--out", c.out, "output path")->group("Paths");

  m->add_option("--n-preds", c.n_preds, "predictions per image")->delimiter(',')->capture_default_str()->group("Evaluation");
  m->add_option("--pp-ratios", c.pp_ratios, "postprocessing ratios r")->delimiter(',')->capture_default_str()->group("Evaluation");
  m->add_option("--workers", c.workers, "evaluation threads; does not change results")->capture_default_str()->group("Evaluation");

  m->add_option("--index", c.sample_index, "dataset sample to segment")->capture_default_str()->group("Sampling");
  m->add_option("--num-masks", c.num_masks, "masks to draw")->capture_default_str()->group("Sampling");

  m->add_option("--points", c.inspect_points, "interior grid points t = i/(points+1)")->capture_default_str()->group("Inspect");

  m->add_option("--sweep-param", c.sweep_param, "b or sigmoid_bias")->capture_default_str()->group("Sweep");
  m->add_option("--sweep-values", c.sweep_values, "comma-separated values")->capture_default_str()->group("Sweep");
}

void resolve(ExperimentConfig& c, const RawOptions& raw) {
  try {
    c.model.prediction_kind = parse_prediction_kind(raw.prediction);
    c.sampler.kind = parse_sampler_kind(raw.sampler);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  c.loss.kind = parse_weighting_kind(raw.weighting);
  c.train.crop = parse_crop_mode(raw.crop);
  if (raw.jitter.size() != kAnnotators) throw ConfigError("--jitter needs exactly four offsets");
  std::copy(raw.jitter.begin(), raw.jitter.end(), c.synth.boundary_jitter.begin());
  c.sampler.t_min = c.t_min;
  c.train.t_min = c.t_min;
  c.schedule.validate();
  if (!std::isfinite(c.loss.sigmoid_bias)) throw ConfigError("--sigmoid-bias must be finite");
  if (c.workers < 1) throw ConfigError("--workers must be >= 1");
}

std::string sampler_label(const SamplerConfig& s) {
  return std::string(to_string(s.kind)) + ":" + std::to_string(s.steps);
}

std::string out_or(const ExperimentConfig& c, const std::string& fallback) {
  return c.out.empty() ? fallback : c.out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f) throw DataError(DataError::Kind::kIo, "cannot write " + path.string());
}

std::string csv_comment(const ExperimentConfig& c) { return "# config: " + config_to_json(c) + "\n"; }

// Prediction kind, schedule and input size come from the checkpoint. A flag
// that contradicts them is an error.
void check_checkpoint(const Checkpoint& ck, ExperimentConfig& c, const CLI::App& app,
                      const Dataset& ds) {
  const PredictionKind trained = ck.model.config().prediction_kind;
  if (app.count("--prediction") > 0 && c.model.prediction_kind != trained) {
    throw ConfigError("checkpoint predicts " + std::string(to_string(trained)) + ", config says " +
                      std::string(to_string(c.model.prediction_kind)));
  }
  c.model = ck.model.config();
  ordered_json exp = ordered_json::parse(ck.meta.experiment);
  auto adopt = [&](const char* key, const char* flag, double& field) {
    if (!exp.contains(key)) return;
    const double v = exp[key].get<double>();
    if (app.count(flag) > 0 && field != v) {
      throw ConfigError(std::string("checkpoint was trained with ") + key + "=" + format_double(v) +
                        ", config says " + format_double(field));
    }
    field = v;
  };
  adopt("b", "--b", c.schedule.input_scale);
  adopt("t-min", "--t-min", c.t_min);
  c.sampler.t_min = c.t_min;
  c.train.t_min = c.t_min;

  if (ds.samples.empty()) throw DataError(DataError::Kind::kCorruptHeader, "dataset is empty");
  const int h = ds.samples.front().height(), w = ds.samples.front().width();
  if (ck.meta.input_height > 0 && (h != ck.meta.input_height || w != ck.meta.input_width)) {
    throw ConfigError("checkpoint was trained on " + std::to_string(ck.meta.input_height) + "x" +
                      std::to_string(ck.meta.input_width) + " inputs, dataset is " +
                      std::to_string(h) + "x" + std::to_string(w));
  }
  if (h % c.model.spatial_multiple() != 0 || w % c.model.spatial_multiple() != 0) {
    throw ConfigError("image size must be divisible by " + std::to_string(c.model.spatial_multiple()));
  }
}

int training_input_size(const ExperimentConfig& c, const Dataset& ds, int dim) {
  if (c.train.crop != CropMode::kNone) return c.train.crop_size;
  return dim == 0 ? ds.samples.front().height() : ds.samples.front().width();
}

std::string loss_csv(const std::vector<TrainLogRow>& rows, bool header, const ExperimentConfig& c) {
  std::string s;
  if (header) s = csv_comment(c) + "step,loss,lr\n";
  for (const auto& r : rows) {
    s += std::to_string(r.step) + "," + format_double(r.loss) + "," + format_double(r.lr) + "\n";
  }
  return s;
}

struct TrainResult {
  DenoiserModel model;
  AdamWState state;
  std::vector<TrainLogRow> log;
};

TrainResult train_model(const ExperimentConfig& c, const Dataset& ds, const fs::path& ckpt_path,
                        const CheckpointMeta& meta) {
  c.model.validate();
  c.train.validate();
  if (ds.samples.empty()) throw DataError(DataError::Kind::kCorruptHeader, "dataset is empty");
  for (int dim = 0; dim < 2; ++dim) {
    if (training_input_size(c, ds, dim) % c.model.spatial_multiple() != 0) {
      throw ConfigError("training inputs must be divisible by " +
                        std::to_string(c.model.spatial_multiple()));
    }
  }

  std::optional<DenoiserModel> model;
  AdamWState state;
  state.lr = c.train.lr;
  if (!c.resume.empty()) {
    auto ck = load_checkpoint(c.resume);
    if (!(ck.model.config() == c.model)) {
      throw ConfigError("model config differs from the checkpoint being resumed");
    }
    model.emplace(std::move(ck.model));
    state = std::move(ck.optimizer);
  } else {
    Rng rng(c.init_seed);
    model.emplace(DenoiserModel::init(c.model, rng));
  }
  auto save = [&](const DenoiserModel& m, const AdamWState& s) { save_checkpoint(ckpt_path, m, s, meta); };
  auto log = train(*model, ds, c.schedule, c.loss, state, c.train, save);
  if (log.empty()) save(*model, state);
  return {std::move(*model), std::move(state), std::move(log)};
}

std::vector<EvalReport> run_evaluation(const DenoiserModel& model, const ExperimentConfig& c,
                                       const Dataset& ds) {
  c.sampler.validate();
  for (double r : c.pp_ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("--pp-ratios entries must lie in [0, 1]");
  }
  ModelDenoiser den(model);
  EvalOptions opts;
  opts.workers = c.workers;
  auto reports = evaluate_grid(diffusion_sampler(den, c.sampler, c.schedule), ds, c.n_preds,
                               c.pp_ratios, opts);
  for (auto& r : reports) {
    r.sampler = sampler_label(c.sampler);
    r.seed = c.sampler.seed;
  }
  return reports;
}

CheckpointMeta make_meta(const ExperimentConfig& c, const Dataset& ds) {
  CheckpointMeta meta;
  meta.experiment = config_to_json(c);
  meta.input_height = training_input_size(c, ds, 0);
  meta.input_width = training_input_size(c, ds, 1);
  return meta;
}

int cmd_generate(ExperimentConfig& c, std::ostream& out) {
  if (c.num_samples < 1) throw UsageError("generate: --n must be >= 1");
  Dataset ds = generate(c.synth, c.num_samples);
  ds.provenance = config_to_json(c);
  const fs::path dir = out_or(c, "dataset");
  write_dataset(ds, dir);
  out << "wrote " << ds.samples.size() << " samples to " << dir.string() << "\n";
  return 0;
}

int cmd_train(ExperimentConfig& c, std::ostream& out) {
  const Dataset ds = read_dataset(c.data);
  const fs::path ckpt = out_or(c, "model.ckpt");
  const auto meta = make_meta(c, ds);
  fs::path csv = ckpt;
  csv += ".loss.csv";
  const bool append = !c.resume.empty() && fs::exists(csv);
  TrainResult res = [&] {
    try {
      return train_model(c, ds, ckpt, meta);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + "; last checkpoint kept at " + ckpt.string(),
                         e.step());
    }
  }();
  if (append) {
    std::ofstream f(csv, std::ios::binary | std::ios::app);
    f << loss_csv(res.log, false, c);
    if (!f) throw DataError(DataError::Kind::kIo, "cannot append to " + csv.string());
  } else {
    write_text(csv, loss_csv(res.log, true, c));
  }
  out << "trained to step " << res.state.step << "; checkpoint " << ckpt.string() << "\n";
  return 0;
}

int cmd_sample(ExperimentConfig& c, const CLI::App& app, std::ostream& out) {
  const Dataset ds = read_dataset(c.data);
  const auto ck = load_checkpoint(c.checkpoint);
  check_checkpoint(ck, c, app, ds);
  c.sampler.validate();
  if (c.sample_index < 0 || static_cast<std::size_t>(c.sample_index) >= ds.samples.size()) {
    throw UsageError("--index out of range");
  }
  if (c.num_masks < 1) throw UsageError("--num-masks must be >= 1");
  ModelDenoiser den(ck.model);
  const auto sampler = diffusion_sampler(den, c.sampler, c.schedule);
  const auto masks = sampler(static_cast<std::size_t>(c.sample_index),
                             ds.samples[static_cast<std::size_t>(c.sample_index)], c.num_masks);
  ordered_json j;
  j["config"] = ordered_json::parse(config_to_json(c));
  j["index"] = c.sample_index;
  j["masks"] = ordered_json::array();
  for (const auto& m : masks) {
    ordered_json rows = ordered_json::array();
    for (int y = 0; y < m.height; ++y) {
      std::string row(static_cast<std::size_t>(m.width), '0');
      for (int x = 0; x < m.width; ++x) row[static_cast<std::size_t>(x)] = m.at(y, x) ? '1' : '0';
      rows.push_back(row);
    }
    j["masks"].push_back(std::move(rows));
  }
  const fs::path path = out_or(c, "samples.json");
  write_text(path, j.dump(2) + "\n");
  out << "wrote " << masks.size() << " masks to " << path.string() << "\n";
  return 0;
}

int cmd_evaluate(ExperimentConfig& c, const CLI::App& app, std::ostream& out) {
  const Dataset ds = read_dataset(c.data);
  const auto ck = load_checkpoint(c.checkpoint);
  check_checkpoint(ck, c, app, ds);
  const auto reports = run_evaluation(ck.model, c, ds);
  const fs::path dir = out_or(c, "eval");
  const std::string echo = config_to_json(c);
  std::string csv = csv_comment(c) + report_csv_header() + "\n";
  for (const auto& r : reports) {
    write_text(dir / ("report_n" + std::to_string(r.n_predictions) + "_r" +
                      format_double(r.pp_ratio) + ".json"),
               report_to_json(r, echo));
    csv += report_csv_row(r) + "\n";
  }
  write_text(dir / "summary.csv", csv);
  out << csv;
  return 0;
}

int cmd_inspect(ExperimentConfig& c, std::ostream& out) {
  if (c.inspect_points < 1) throw UsageError("--points must be >= 1");
  const WeightingKind kinds[] = {WeightingKind::kSnr, WeightingKind::kTruncSnr,
                                 WeightingKind::kSnrPlusOne, WeightingKind::kUniform,
                                 WeightingKind::kSigmoid};
  std::string csv = csv_comment(c) + "t,gamma,snr,log_snr";
  for (auto k : kinds) csv += ",w_" + std::string(to_string(k));
  csv += "\n";
  for (int i = 1; i <= c.inspect_points; ++i) {
    const double t = static_cast<double>(i) / (c.inspect_points + 1);
    csv += format_double(t) + "," + format_double(gamma(c.schedule, t)) + "," +
           format_double(snr(c.schedule, t)) + "," + format_double(log_snr(c.schedule, t));
    for (auto k : kinds) {
      LossWeighting lw{k, c.loss.sigmoid_bias};
      csv += "," + format_double(weight(lw, c.schedule, t));
    }
    csv += "\n";
  }
  if (c.out.empty()) {
    out << csv;
  } else {
    write_text(c.out, csv);
  }
  return 0;
}

int cmd_sweep(ExperimentConfig& c, std::ostream& out) {
  if (c.sweep_param != "b" && c.sweep_param != "sigmoid_bias") {
    throw UsageError("--sweep-param must be b or sigmoid_bias");
  }
  const auto list = parse_sweep_list(c.sweep_values);
  const Dataset train_ds = read_dataset(c.data);
  const Dataset eval_ds = read_dataset(c.eval_data);
  const fs::path dir = out_or(c, "sweep");
  std::string csv = csv_comment(c) + c.sweep_param + "," + report_csv_header() + "\n";
  for (std::size_t i = 0; i < list.values.size(); ++i) {
    ExperimentConfig run = c;
    if (c.sweep_param == "b") {
      run.schedule.input_scale = list.values[i];
      run.schedule.validate();
    } else {
      run.loss.sigmoid_bias = list.values[i];
    }
    const fs::path ckpt = dir / (c.sweep_param + "_" + list.tokens[i] + ".ckpt");
    run.resume.clear();
    const auto res = train_model(run, train_ds, ckpt, make_meta(run, train_ds));
    for (const auto& r : run_evaluation(res.model, run, eval_ds)) {
      csv += list.tokens[i] + "," + report_csv_row(r) + "\n";
    }
  }
  write_text(dir / "sweep.csv", csv);
  out << csv;
  return 0;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["b"] = c.schedule.input_scale;
  j["t-min"] = c.t_min;
  j["prediction"] = to_string(c.model.prediction_kind);
  j["channels"] = c.model.channels;
  j["res-blocks"] = c.model.num_res_blocks;
  j["middle-blocks"] = c.model.middle_blocks;
  j["time-embed-dim"] = c.model.time_embed_dim;
  j["attention"] = c.model.use_attention;
  j["init-seed"] = c.init_seed;
  j["weighting"] = to_string(c.loss.kind);
  j["sigmoid-bias"] = c.loss.sigmoid_bias;
  j["sampler"] = to_string(c.sampler.kind);
  j["sampler-steps"] = c.sampler.steps;
  j["sample-seed"] = c.sampler.seed;
  j["steps"] = c.train.steps;
  j["batch"] = c.train.batch_size;
  j["lr"] = c.train.lr;
  j["clip"] = c.train.clip;
  j["decay-fraction"] = c.train.decay_fraction;
  j["train-seed"] = c.train.seed;
  j["checkpoint-every"] = c.train.checkpoint_every;
  j["crop"] = to_string(c.train.crop);
  j["crop-size"] = c.train.crop_size;
  j["n"] = c.num_samples;
  j["image-size"] = c.synth.image_size;
  j["radius-min"] = c.synth.radius_min;
  j["radius-max"] = c.synth.radius_max;
  j["contrast-min"] = c.synth.contrast_min;
  j["contrast-max"] = c.synth.contrast_max;
  j["empty-prob-low-contrast"] = c.synth.empty_prob_at_min_contrast;
  j["empty-prob-high-contrast"] = c.synth.empty_prob_at_max_contrast;
  j["jitter"] = c.synth.boundary_jitter;
  j["noise-std"] = c.synth.noise_std;
  j["edge-width"] = c.synth.edge_width;
  j["background"] = c.synth.background;
  j["data-seed"] = c.synth.seed;
  j["data"] = c.data;
  j["eval-data"] = c.eval_data;
  j["checkpoint"] = c.checkpoint;
  j["n-preds"] = c.n_preds;
  j["pp-ratios"] = c.pp_ratios;
  j["index"] = c.sample_index;
  j["num-masks"] = c.num_masks;
  j["points"] = c.inspect_points;
  j["sweep-param"] = c.sweep_param;
  j["sweep-values"] = c.sweep_values;
  return j.dump();
}

SweepList parse_sweep_list(const std::string& text) {
  SweepList list;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = text.find(',', start);
    std::string token = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    const auto first = token.find_first_not_of(" \t");
    const auto last = token.find_last_not_of(" \t");
    token = first == std::string::npos ? "" : token.substr(first, last - first + 1);
    if (token.empty()) throw UsageError("sweep list '" + text + "' has an empty entry");
    double v = 0.0;
    const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
    if (res.ec != std::errc() || res.ptr != token.data() + token.size() || !std::isfinite(v)) {
      throw UsageError("sweep list entry '" + token + "' is not a number");
    }
    list.tokens.push_back(token);
    list.values.push_back(v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return list;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diffusion models for ambiguous segmentation", "ambiseg"};
  app.require_subcommand(1);
  app.allow_extras(false);

  ExperimentConfig cfg;
  RawOptions raw;
  struct Sub {
    const char* name;
    const char* help;
    CLI::App* app = nullptr;
  };
  Sub subs[] = {{"generate", "write a synthetic dataset"},
                {"train", "train a denoiser"},
                {"sample", "draw masks for one image"},
                {"evaluate", "GED/dice report over a dataset"},
                {"inspect", "schedule and loss-weighting table"},
                {"sweep", "train and evaluate over a list of b or sigmoid-bias values"}};
  add_options(app, cfg, raw);
  app.fallthrough();
  for (auto& s : subs) {
    s.app = app.add_subcommand(s.name, s.help);
    s.app->footer("Experiment options are listed by `ambiseg --help` and may follow the subcommand.");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    resolve(cfg, raw);
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "generate") return cmd_generate(cfg, out);
    if (name == "train") return cmd_train(cfg, out);
    if (name == "sample") return cmd_sample(cfg, app, out);
    if (name == "evaluate") return cmd_evaluate(cfg, app, out);
    if (name == "inspect") return cmd_inspect(cfg, out);
    return cmd_sweep(cfg, out);
  } catch (const NumericError& e) {
    err << "numeric failure";
    if (e.step() >= 0) err << " at step " << e.step();
    err << ": " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ambiseg
