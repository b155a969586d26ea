#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "zsr/binary_io.hpp"
#include "zsr/data.hpp"
#include "zsr/errors.hpp"
#include "zsr/losses.hpp"
#include "zsr/model.hpp"
#include "zsr/numerics/adam.hpp"
#include "zsr/numerics/graph.hpp"

namespace zsr {

struct TrainConfig {
  // image_dim, sketch_dim and num_classes may be left at 0; train() fills
  // them from the pool and rejects explicit values that disagree.
  ModelDims dims;
  AdamOptions adam;
  std::uint32_t batch_size = 64;
  std::uint32_t epochs = 100;
  std::uint64_t seed = 1;
  LossOptions loss;
  std::vector<std::string> classes;  // seen categories, classifier order

  // Throws on invalid values; returns warnings for legal but unusual setups.
  std::vector<std::string> validate() const {
    if (dims.hidden == 0 || dims.structure_dim == 0 || dims.appearance_dim == 0 ||
        dims.latent_dim == 0) {
      throw ValidationError("train config: network dimensions must be positive");
    }
    if (loss.on(Term::kOr) && dims.structure_dim != dims.appearance_dim) {
      throw ValidationError("train config: l_or compares structure and appearance features, so "
                            "structure_dim must equal appearance_dim");
    }
    if (batch_size == 0) throw ValidationError("train config: batch_size must be positive");
    if (epochs == 0) throw ValidationError("train config: epochs must be positive");
    if (!(adam.learning_rate > 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
        !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.epsilon > 0.0)) {
      throw ValidationError("train config: invalid optimizer hyper-parameters");
    }
    for (double w : loss.weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw ValidationError("train config: loss weights must be finite and >= 0");
      }
    }
    std::vector<std::string> warnings;
    if (!loss.on(Term::kCls)) {
      warnings.emplace_back("l_cls is disabled: the structure space receives no class supervision");
    }
    if (std::none_of(loss.enabled.begin(), loss.enabled.end(), [](bool b) { return b; })) {
      warnings.emplace_back("every loss term is disabled: parameters will not change");
    }
    return warnings;
  }
};

// ---------------------------------------------------------------------------
// key=value text form, used for config files and the checkpoint config block.

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename N>
N parse_number(std::string_view key, std::string_view text) {
  N value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ValidationError("config: bad value '" + std::string(text) + "' for '" +
                          std::string(key) + "'");
  }
  return value;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "1" || text == "true" || text == "on") return true;
  if (text == "0" || text == "false" || text == "off") return false;
  throw ValidationError("config: bad boolean '" + std::string(text) + "' for '" +
                        std::string(key) + "'");
}

}  // namespace detail

inline std::string term_key_suffix(Term t) {
  switch (t) {
    case Term::kCls: return "cls";
    case Term::kOr: return "or";
    case Term::kKl: return "kl";
    case Term::kL2Sketch: return "l2_sk";
    case Term::kL2Image: return "l2_im";
  }
  return "";
}

// Applies one key=value setting. Unknown keys are rejected.
inline void set_config_value(TrainConfig& c, std::string_view key, std::string_view value) {
  using detail::parse_bool;
  using detail::parse_number;
  auto u32 = [&] { return parse_number<std::uint32_t>(key, value); };
  auto f64 = [&] { return parse_number<double>(key, value); };
  if (key == "image_dim") c.dims.image_dim = u32();
  else if (key == "sketch_dim") c.dims.sketch_dim = u32();
  else if (key == "hidden") c.dims.hidden = u32();
  else if (key == "structure_dim") c.dims.structure_dim = u32();
  else if (key == "appearance_dim") c.dims.appearance_dim = u32();
  else if (key == "latent_dim") c.dims.latent_dim = u32();
  else if (key == "num_classes") c.dims.num_classes = u32();
  else if (key == "learning_rate") c.adam.learning_rate = f64();
  else if (key == "beta1") c.adam.beta1 = f64();
  else if (key == "beta2") c.adam.beta2 = f64();
  else if (key == "adam_epsilon") c.adam.epsilon = f64();
  else if (key == "batch_size") c.batch_size = u32();
  else if (key == "epochs") c.epochs = u32();
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "squared_l2") c.loss.squared_l2 = parse_bool(key, value);
  else if (key == "reduction") {
    if (value == "mean") c.loss.reduction = Reduction::kMean;
    else if (value == "sum") c.loss.reduction = Reduction::kSum;
    else throw ValidationError("config: reduction must be 'mean' or 'sum'");
  } else if (key == "class") {
    c.classes.emplace_back(value);
  } else {
    for (Term t : kAllTerms) {
      const auto i = static_cast<std::size_t>(t);
      if (key == "use_" + term_key_suffix(t)) {
        c.loss.enabled[i] = parse_bool(key, value);
        return;
      }
      if (key == "weight_" + term_key_suffix(t)) {
        c.loss.weights[i] = f64();
        return;
      }
    }
    throw ValidationError("config: unknown key '" + std::string(key) + "'");
  }
}

// Lines of key=value; blank lines and "#" comments are skipped. Lines whose
// key starts with "final." are ignored here (they carry checkpoint losses).
inline void apply_config_text(TrainConfig& c, std::string_view text) {
  std::size_t offset = 0;
  while (offset < text.size()) {
    auto end = text.find('\n', offset);
    if (end == std::string_view::npos) end = text.size();
    const std::string line = trim(text.substr(offset, end - offset));
    offset = end + 1;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("config: expected key=value, got '" + line + "'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.starts_with("final.")) continue;
    set_config_value(c, key, value);
  }
}

inline std::string format_config(const TrainConfig& c) {
  using detail::format_double;
  std::string out;
  auto put = [&out](std::string_view k, const std::string& v) {
    out.append(k).append("=").append(v).append("\n");
  };
  put("image_dim", std::to_string(c.dims.image_dim));
  put("sketch_dim", std::to_string(c.dims.sketch_dim));
  put("hidden", std::to_string(c.dims.hidden));
  put("structure_dim", std::to_string(c.dims.structure_dim));
  put("appearance_dim", std::to_string(c.dims.appearance_dim));
  put("latent_dim", std::to_string(c.dims.latent_dim));
  put("num_classes", std::to_string(c.dims.num_classes));
  put("learning_rate", format_double(c.adam.learning_rate));
  put("beta1", format_double(c.adam.beta1));
  put("beta2", format_double(c.adam.beta2));
  put("adam_epsilon", format_double(c.adam.epsilon));
  put("batch_size", std::to_string(c.batch_size));
  put("epochs", std::to_string(c.epochs));
  put("seed", std::to_string(c.seed));
  for (Term t : kAllTerms) put("use_" + term_key_suffix(t), c.loss.on(t) ? "1" : "0");
  for (Term t : kAllTerms) put("weight_" + term_key_suffix(t), format_double(c.loss.weight(t)));
  put("squared_l2", c.loss.squared_l2 ? "1" : "0");
  put("reduction", c.loss.reduction == Reduction::kMean ? "mean" : "sum");
  for (const auto& name : c.classes) put("class", name);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints.

struct Checkpoint {
  TrainConfig config;
  ParameterSet<float> params;
  LossBreakdown final_losses;

  DisentangleModel<float> model() const { return DisentangleModel<float>{config.dims, params}; }
};

inline constexpr std::string_view kCheckpointMagic = "SCK1";

inline std::string checkpoint_config_block(const Checkpoint& ckpt) {
  std::string block = format_config(ckpt.config);
  for (Term t : kAllTerms) {
    block += "final." + std::string(term_name(t)) + "=" +
             detail::format_double(ckpt.final_losses[t]) + "\n";
  }
  block += "final.total=" + detail::format_double(ckpt.final_losses.total) + "\n";
  return block;
}

inline LossBreakdown parse_final_losses(std::string_view text) {
  LossBreakdown b;
  std::size_t offset = 0;
  while (offset < text.size()) {
    auto end = text.find('\n', offset);
    if (end == std::string_view::npos) end = text.size();
    const std::string line = trim(text.substr(offset, end - offset));
    offset = end + 1;
    if (!line.starts_with("final.")) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(6, eq - 6);
    const double v = detail::parse_number<double>(key, std::string_view(line).substr(eq + 1));
    if (key == "total") {
      b.total = v;
      continue;
    }
    for (Term t : kAllTerms) {
      if (key == term_name(t)) b[t] = v;
    }
  }
  return b;
}

inline std::vector<char> encode_checkpoint(const Checkpoint& ckpt) {
  io::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, t] : ckpt.params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u32(d);
    w.f32s(std::span<const float>(t.values.data(), t.size()));
  }
  w.str(checkpoint_config_block(ckpt));
  return w.buffer();
}

inline Checkpoint decode_checkpoint(std::vector<char> bytes) {
  io::ByteReader r(std::move(bytes));
  if (r.bytes(4, "magic") != kCheckpointMagic) {
    throw FormatError("bad magic: not an SCK1 checkpoint", 0);
  }
  Checkpoint ckpt;
  const std::uint32_t count = r.u32("parameter count");
  std::vector<std::uint64_t> offsets;
  for (std::uint32_t i = 0; i < count; ++i) {
    offsets.push_back(r.offset());
    std::string name = r.str("parameter name");
    const std::uint32_t rank = r.u32("parameter rank");
    if (rank < 1 || rank > 2) r.fail("parameter '" + name + "' has unsupported rank " + std::to_string(rank));
    std::vector<std::uint32_t> shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32("parameter shape"));
    Tensor<float> t = Tensor<float>::zeros(shape);
    r.need(std::uint64_t{t.size()} * 4, "parameter values");
    for (std::size_t k = 0; k < t.size(); ++k) t.values.data()[k] = r.f32("parameter values");
    if (!ckpt.params.emplace(std::move(name), std::move(t)).second) {
      throw FormatError("duplicate parameter name", offsets.back());
    }
  }
  const auto config_at = r.offset();
  const std::string block = r.str("config block");
  if (!r.at_end()) r.fail("trailing bytes after config block");
  try {
    apply_config_text(ckpt.config, block);
    ckpt.final_losses = parse_final_losses(block);
  } catch (const ValidationError& e) {
    throw FormatError(std::string("bad config block: ") + e.what(), config_at);
  }
  const auto expected = expected_parameter_shapes(ckpt.config.dims);
  if (expected.size() != ckpt.params.size()) {
    throw FormatError("checkpoint has " + std::to_string(ckpt.params.size()) +
                          " parameters, config implies " + std::to_string(expected.size()),
                      4);
  }
  for (const auto& [name, shape] : expected) {
    const auto it = ckpt.params.find(name);
    if (it == ckpt.params.end()) throw FormatError("missing parameter '" + name + "'", 4);
    if (it->second.shape != shape) {
      throw FormatError("parameter '" + name + "' has a shape inconsistent with the config", 4);
    }
  }
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(io::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

// Loads and additionally requires the stored dimensions to equal `expected`.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelDims& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!(ckpt.config.dims == expected)) {
    throw FormatError(path.string() + ": checkpoint dimensions do not match the requested model",
                      0);
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Training.

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossBreakdown> epoch_means;
  std::vector<std::string> warnings;
};

using EpochCallback = std::function<void(std::uint32_t epoch, const LossBreakdown& mean)>;

// Derived RNG stream for one role (sampling, noise) of a seeded run.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    stream};
  return std::mt19937_64(seq);
}

inline TrainResult train(TrainConfig config, const TrainPool& pool,
                         const EpochCallback& on_epoch = {}) {
  TrainResult result;
  result.warnings = config.validate();
  auto fill = [](std::uint32_t& slot, std::uint32_t actual, std::string_view what) {
    if (slot != 0 && slot != actual) {
      throw ValidationError("train config: " + std::string(what) + "=" + std::to_string(slot) +
                            " but the data has " + std::to_string(actual));
    }
    slot = actual;
  };
  if (pool.images.rows() == 0 || pool.sketches.rows() == 0) {
    throw DataError("training pool is empty");
  }
  fill(config.dims.image_dim, pool.images.dim, "image_dim");
  fill(config.dims.sketch_dim, pool.sketches.dim, "sketch_dim");
  fill(config.dims.num_classes, static_cast<std::uint32_t>(pool.classes.size()), "num_classes");
  if (!config.classes.empty() && config.classes != pool.classes) {
    throw ValidationError("train config: class list differs from the training pool");
  }
  config.classes = pool.classes;

  auto model = DisentangleModel<float>::initialize(config.dims, config.seed);
  auto adam = AdamState<float>::init(model.params, config.adam);
  PairSampler sampler(pool, config.batch_size, stream_rng(config.seed, 1)());
  std::mt19937_64 noise_rng = stream_rng(config.seed, 2);
  std::normal_distribution<float> normal(0.0f, 1.0f);

  LossBreakdown last;
  for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto batches = sampler.next_epoch();
    LossBreakdown sum;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const PairBatch<float> batch = sampler.gather(batches[bi]);
      Matrix<float> eps(static_cast<Eigen::Index>(batch.labels.size()), config.dims.latent_dim);
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(noise_rng);

      Graph<float> graph;
      const ObjectiveNodes nodes =
          build_objective(graph, model.params, config.dims, batch, eps, config.loss);
      const LossBreakdown b = read_breakdown(graph, nodes);
      for (Term t : kAllTerms) {
        if (!std::isfinite(b[t])) {
          throw NumericalError("non-finite " + std::string(term_name(t)) + " at epoch " +
                               std::to_string(epoch + 1) + ", batch " + std::to_string(bi));
        }
      }
      if (!std::isfinite(b.total)) {
        throw NumericalError("non-finite total loss at epoch " + std::to_string(epoch + 1) +
                             ", batch " + std::to_string(bi));
      }
      const Gradients<float> grads = graph.backward(nodes.total);
      adam_step(model.params, grads, adam);
      for (Term t : kAllTerms) sum[t] += b[t];
      sum.total += b.total;
    }
    LossBreakdown mean;
    const double n = static_cast<double>(batches.size());
    for (Term t : kAllTerms) mean[t] = sum[t] / n;
    mean.total = sum.total / n;
    result.epoch_means.push_back(mean);
    if (on_epoch) on_epoch(epoch + 1, mean);
    last = mean;
  }

  result.checkpoint = Checkpoint{config, std::move(model.params), last};
  return result;
}

}  // namespace zsr
