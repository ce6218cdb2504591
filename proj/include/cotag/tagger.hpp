#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cotag/error.hpp"
#include "cotag/io.hpp"
#include "cotag/iob.hpp"
#include "cotag/parallel.hpp"
#include "cotag/random.hpp"
#include "cotag/unicode.hpp"

namespace cotag {

// Sequence tagger: a linear softmax model per token over hashed sparse
// features, trained with AdamW, feature dropout, linear learning-rate decay
// and validation-based early stopping. Ensembles of independently seeded
// members are averaged at prediction time.

inline constexpr std::size_t kFeatureDim = std::size_t{1} << 20;
// Probabilities are floored at this value inside logarithms.
inline constexpr double kProbFloor = 1e-12;

struct TrainConfig {
  int batch_size = 16;
  double dropout = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  // 1e-2 suits this sparse linear model; transformer-style backends would
  // want a fine-tuning rate around 3e-5 instead.
  double initial_lr = 1e-2;
  double weight_decay = 1e-2;
  double adam_epsilon = 1e-8;
  int max_epochs = 10;
  int patience = 2;
  int ensemble_size = 5;
  double validation_fraction = 0.1;
  double init_scale = 0.01;

  void validate() const {
    if (batch_size < 1) throw Error("batch size must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw Error("dropout must be in [0, 1)");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
        !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
      throw Error("Adam betas must be in [0, 1)");
    }
    if (!(initial_lr > 0.0)) throw Error("learning rate must be positive");
    if (weight_decay < 0.0) throw Error("weight decay must be nonnegative");
    if (max_epochs < 1) throw Error("max epochs must be positive");
    if (patience < 1) throw Error("patience must be positive");
    if (ensemble_size < 1) throw Error("ensemble size must be positive");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
      throw Error("validation fraction must be in [0, 1)");
    }
  }
};

// Model parameters. Conceptually the weight matrix is feature_dim x
// num_classes, initialized with small seed-derived noise; only rows touched
// by training are stored, and absent rows are reconstructed from the seed on
// demand. Prediction therefore agrees exactly before and after a
// save/load round trip.
struct TaggerParams {
  std::uint64_t seed = 0;
  std::size_t feature_dim = kFeatureDim;
  std::size_t num_classes = 0;
  double init_scale = 0.01;
  std::vector<double> bias;
  std::map<std::uint32_t, std::vector<double>> weights;
};

// Initial value of an untouched weight: symmetric uniform noise in
// [-scale, scale), a pure function of (seed, feature, class).
inline double initial_weight(std::uint64_t seed, std::uint32_t feature, std::size_t cls,
                             double scale) {
  std::uint64_t h = splitmix64(seed ^ splitmix64(0x5eedf00dull + feature));
  h = splitmix64(h + cls);
  double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return scale * (2.0 * u - 1.0);
}

inline std::vector<double> initial_row(const TaggerParams& p, std::uint32_t feature) {
  std::vector<double> row(p.num_classes);
  for (std::size_t c = 0; c < p.num_classes; ++c) {
    row[c] = initial_weight(p.seed, feature, c, p.init_scale);
  }
  return row;
}

inline TaggerParams make_tagger(std::uint64_t seed, std::size_t num_classes,
                                double init_scale = 0.01) {
  TaggerParams p;
  p.seed = seed;
  p.num_classes = num_classes;
  p.init_scale = init_scale;
  p.bias.assign(num_classes, 0.0);
  return p;
}

namespace feat_detail {

inline char shape_class(char32_t c) {
  if (c >= U'0' && c <= U'9') return 'd';
  if (fold_char(c) != c) return 'X';
  if ((c >= U'a' && c <= U'z') || c >= 0x80) return 'x';
  return 'o';
}

inline std::string token_shape(const std::string& token) {
  std::string shape;
  char prev = 0;
  for (char32_t c : utf8_decode(token)) {
    char cls = shape_class(c);
    if (cls != prev) shape.push_back(cls);
    prev = cls;
  }
  return shape;
}

inline std::uint32_t hash_feature(const std::string& text) {
  return static_cast<std::uint32_t>(fnv1a64(text) % kFeatureDim);
}

}  // namespace feat_detail

// Sparse feature ids for one token position: case-folded token identity in
// a five-token window, prefixes and suffixes up to three code points,
// collapsed character shape, and sentence boundary flags. Ids are hashed
// into the fixed feature space, deduplicated, and sorted.
inline std::vector<std::uint32_t> featurize(const Sentence& sentence, std::size_t pos) {
  const auto& toks = sentence.tokens;
  const std::size_t n = toks.size();
  auto window = [&](std::ptrdiff_t off) -> std::string {
    std::ptrdiff_t i = static_cast<std::ptrdiff_t>(pos) + off;
    if (i < 0) return "<s>";
    if (i >= static_cast<std::ptrdiff_t>(n)) return "</s>";
    return to_lower(toks[static_cast<std::size_t>(i)]);
  };
  std::vector<std::string> feats;
  feats.reserve(14);
  feats.push_back("w0=" + window(0));
  feats.push_back("w-1=" + window(-1));
  feats.push_back("w-2=" + window(-2));
  feats.push_back("w+1=" + window(1));
  feats.push_back("w+2=" + window(2));
  std::u32string folded = fold_utf8(toks[pos]);
  for (std::size_t k = 1; k <= 3 && k <= folded.size(); ++k) {
    feats.push_back("p" + std::to_string(k) + "=" + utf8_encode(folded.substr(0, k)));
    feats.push_back("s" + std::to_string(k) + "=" +
                    utf8_encode(folded.substr(folded.size() - k)));
  }
  feats.push_back("shape=" + feat_detail::token_shape(toks[pos]));
  if (pos == 0) feats.push_back("bos");
  if (pos + 1 == n) feats.push_back("eos");

  std::vector<std::uint32_t> ids;
  ids.reserve(feats.size());
  for (const auto& f : feats) ids.push_back(feat_detail::hash_feature(f));
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

namespace tagger_detail {

inline double weight_at(const TaggerParams& p, std::uint32_t feature, std::size_t cls) {
  auto it = p.weights.find(feature);
  if (it != p.weights.end()) return it->second[cls];
  return initial_weight(p.seed, feature, cls, p.init_scale);
}

// Softmax of bias + sum of active feature rows; `values` holds the per
// feature multipliers (1, or the inverse keep rate under dropout).
inline std::vector<double> token_probs(const TaggerParams& p,
                                       std::span<const std::uint32_t> features,
                                       std::span<const double> values) {
  std::vector<double> z = p.bias;
  for (std::size_t k = 0; k < features.size(); ++k) {
    auto it = p.weights.find(features[k]);
    if (it != p.weights.end()) {
      for (std::size_t c = 0; c < z.size(); ++c) z[c] += values[k] * it->second[c];
    } else {
      for (std::size_t c = 0; c < z.size(); ++c) {
        z[c] += values[k] * initial_weight(p.seed, features[k], c, p.init_scale);
      }
    }
  }
  double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - zmax);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return z;
}

}  // namespace tagger_detail

inline TokenDistributions predict_proba(const TaggerParams& params, const Sentence& sentence) {
  if (params.num_classes == 0) throw Error("tagger has no classes");
  TokenDistributions out;
  out.reserve(sentence.size());
  std::vector<double> ones;
  for (std::size_t m = 0; m < sentence.size(); ++m) {
    std::vector<std::uint32_t> feats = featurize(sentence, m);
    ones.assign(feats.size(), 1.0);
    out.push_back(tagger_detail::token_probs(params, feats, ones));
  }
  return out;
}

// Argmax per row; ties resolve to the lowest class index.
inline std::vector<std::size_t> argmax_classes(const TokenDistributions& dists) {
  std::vector<std::size_t> out;
  out.reserve(dists.size());
  for (const auto& row : dists) {
    out.push_back(static_cast<std::size_t>(
        std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

// Supervision for one sentence: either hard class ids (-1 excludes a token)
// or soft per-token distributions (an empty row excludes a token).
struct SentenceTarget {
  std::vector<int> hard;
  std::vector<std::vector<double>> soft;

  bool is_soft() const { return !soft.empty(); }

  static SentenceTarget hard_target(std::vector<int> classes) {
    SentenceTarget t;
    t.hard = std::move(classes);
    return t;
  }
  static SentenceTarget soft_target(std::vector<std::vector<double>> rows) {
    SentenceTarget t;
    t.soft = std::move(rows);
    return t;
  }

  std::size_t size() const { return is_soft() ? soft.size() : hard.size(); }
  bool included(std::size_t m) const {
    return is_soft() ? !soft[m].empty() : hard[m] >= 0;
  }
};

struct Example {
  const Sentence* sentence = nullptr;
  const SentenceTarget* target = nullptr;
};

struct SparseGrad {
  std::map<std::uint32_t, std::vector<double>> weights;
  std::vector<double> bias;
};

struct BatchLoss {
  double loss = 0.0;
  std::size_t contributing = 0;  // sentences with at least one included token
};

namespace tagger_detail {

// Cross-entropy against hard or soft targets. The loss averages over
// included tokens within a sentence and over contributing sentences within
// the batch; sentences whose tokens are all excluded do not dilute it.
// With `grad`, accumulates d loss / d weights under the same normalization.
// With `dropout_rng`, features are dropped independently with probability
// `dropout` and survivors are scaled by the inverse keep rate; draws occur
// in (sentence, token, feature) order so results are seed-reproducible.
inline BatchLoss forward_backward(const TaggerParams& p, std::span<const Example> batch,
                                  SparseGrad* grad, Rng* dropout_rng, double dropout) {
  BatchLoss result;
  if (grad) grad->bias.assign(p.num_classes, 0.0);
  std::vector<std::uint32_t> feats;
  std::vector<double> values;
  std::vector<std::uint32_t> kept;
  for (const Example& ex : batch) {
    const Sentence& s = *ex.sentence;
    const SentenceTarget& t = *ex.target;
    if (t.size() != s.size()) {
      throw Error("target length mismatch in sentence '" + s.id + "'");
    }
    std::vector<std::size_t> included;
    for (std::size_t m = 0; m < s.size(); ++m) {
      if (t.included(m)) included.push_back(m);
    }
    double sentence_loss = 0.0;
    const double token_norm =
        included.empty() ? 0.0 : 1.0 / static_cast<double>(included.size());
    for (std::size_t m : included) {
      std::vector<std::uint32_t> all = featurize(s, m);
      kept.clear();
      values.clear();
      if (dropout_rng && dropout > 0.0) {
        const double inv_keep = 1.0 / (1.0 - dropout);
        for (std::uint32_t f : all) {
          if (!dropout_rng->bernoulli(dropout)) {
            kept.push_back(f);
            values.push_back(inv_keep);
          }
        }
      } else {
        kept = all;
        values.assign(kept.size(), 1.0);
      }
      std::vector<double> probs = token_probs(p, kept, values);
      if (t.is_soft()) {
        const auto& target_row = t.soft[m];
        if (target_row.size() != p.num_classes) {
          throw Error("soft target width mismatch in sentence '" + s.id + "'");
        }
        for (std::size_t c = 0; c < p.num_classes; ++c) {
          sentence_loss -= target_row[c] * std::log(std::max(probs[c], kProbFloor));
        }
      } else {
        int y = t.hard[m];
        if (y < 0 || static_cast<std::size_t>(y) >= p.num_classes) {
          throw Error("hard target out of range in sentence '" + s.id + "'");
        }
        sentence_loss -= std::log(std::max(probs[static_cast<std::size_t>(y)], kProbFloor));
      }
      if (grad) {
        for (std::size_t c = 0; c < p.num_classes; ++c) {
          double target_c = t.is_soft() ? t.soft[m][c]
                                        : (static_cast<int>(c) == t.hard[m] ? 1.0 : 0.0);
          double dz = (probs[c] - target_c) * token_norm;
          grad->bias[c] += dz;
          for (std::size_t k = 0; k < kept.size(); ++k) {
            auto [it, inserted] = grad->weights.try_emplace(kept[k]);
            if (inserted) it->second.assign(p.num_classes, 0.0);
            it->second[c] += values[k] * dz;
          }
        }
      }
    }
    if (!included.empty()) {
      result.loss += sentence_loss * token_norm;
      ++result.contributing;
    }
  }
  if (result.contributing > 0) {
    const double batch_norm = 1.0 / static_cast<double>(result.contributing);
    result.loss *= batch_norm;
    if (grad) {
      for (double& b : grad->bias) b *= batch_norm;
      for (auto& [f, row] : grad->weights) {
        for (double& w : row) w *= batch_norm;
      }
    }
  }
  return result;
}

}  // namespace tagger_detail

inline BatchLoss batch_loss(const TaggerParams& params, std::span<const Example> batch) {
  return tagger_detail::forward_backward(params, batch, nullptr, nullptr, 0.0);
}

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct FitResult {
  TaggerParams params;
  std::uint64_t seed = 0;  // seed handed to fit, not necessarily params.seed
  std::vector<EpochStats> epochs;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  bool diverged = false;
};

// Trains one model. AdamW on the active rows (weight decay applies to
// weights, not bias), linear learning-rate decay to zero over the epoch
// budget, early stopping on validation loss (train loss when no validation
// sentences contribute). `seed` drives shuffling and dropout; with a warm
// start the parameter seed and untouched-row noise are preserved and the
// optimizer state starts fresh. Non-finite loss raises TrainingError.
inline FitResult fit(std::span<const Example> train, std::span<const Example> validation,
                     std::size_t num_classes, const TrainConfig& config, std::uint64_t seed,
                     const TaggerParams* warm_start = nullptr) {
  config.validate();
  if (train.empty()) throw TrainingError("no training sentences");
  if (num_classes == 0) throw TrainingError("no classes to train");

  TaggerParams params = warm_start ? *warm_start
                                   : make_tagger(seed, num_classes, config.init_scale);
  if (params.num_classes != num_classes) {
    throw TrainingError("warm start class count mismatch");
  }
  Rng shuffle_rng(derive_seed(seed, "shuffle"));
  Rng dropout_rng(derive_seed(seed, "dropout"));

  std::map<std::uint32_t, std::vector<double>> m1, m2;
  std::vector<double> bias_m1(num_classes, 0.0), bias_m2(num_classes, 0.0);
  std::size_t step = 0;
  const std::size_t batches_per_epoch =
      (train.size() + config.batch_size - 1) / static_cast<std::size_t>(config.batch_size);
  const std::size_t total_steps =
      batches_per_epoch * static_cast<std::size_t>(config.max_epochs);

  FitResult result;
  result.seed = seed;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  auto check_finite = [](double v) {
    if (!std::isfinite(v)) {
      throw TrainingError("loss diverged to a non-finite value");
    }
  };

  int epochs_since_best = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t off = 0; off < order.size(); off += config.batch_size) {
      std::size_t hi = std::min(order.size(), off + config.batch_size);
      std::vector<Example> batch;
      batch.reserve(hi - off);
      for (std::size_t i = off; i < hi; ++i) batch.push_back(train[order[i]]);

      SparseGrad grad;
      BatchLoss bl = tagger_detail::forward_backward(params, batch, &grad, &dropout_rng,
                                                     config.dropout);
      check_finite(bl.loss);
      epoch_loss += bl.loss;
      ++epoch_batches;

      const double lr = config.initial_lr *
                        (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
      ++step;
      const double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(step));

      for (auto& [f, grow] : grad.weights) {
        auto wit = params.weights.find(f);
        if (wit == params.weights.end()) {
          wit = params.weights.emplace(f, initial_row(params, f)).first;
        }
        auto m1it = m1.try_emplace(f, std::vector<double>(num_classes, 0.0)).first;
        auto m2it = m2.try_emplace(f, std::vector<double>(num_classes, 0.0)).first;
        for (std::size_t c = 0; c < num_classes; ++c) {
          double g = grow[c];
          double& m = m1it->second[c];
          double& v = m2it->second[c];
          m = config.adam_beta1 * m + (1.0 - config.adam_beta1) * g;
          v = config.adam_beta2 * v + (1.0 - config.adam_beta2) * g * g;
          double update = (m / bc1) / (std::sqrt(v / bc2) + config.adam_epsilon);
          wit->second[c] -= lr * (update + config.weight_decay * wit->second[c]);
        }
      }
      for (std::size_t c = 0; c < num_classes; ++c) {
        double g = grad.bias[c];
        double& m = bias_m1[c];
        double& v = bias_m2[c];
        m = config.adam_beta1 * m + (1.0 - config.adam_beta1) * g;
        v = config.adam_beta2 * v + (1.0 - config.adam_beta2) * g * g;
        params.bias[c] -= lr * (m / bc1) / (std::sqrt(v / bc2) + config.adam_epsilon);
      }
    }
    double train_loss = epoch_batches ? epoch_loss / static_cast<double>(epoch_batches) : 0.0;
    check_finite(train_loss);

    BatchLoss vl = batch_loss(params, validation);
    check_finite(vl.loss);
    double monitored = vl.contributing > 0 ? vl.loss : train_loss;
    result.epochs.push_back({epoch, train_loss, monitored});

    if (monitored < result.best_val_loss) {
      result.best_val_loss = monitored;
      result.best_epoch = epoch;
      result.params = params;
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= config.patience) break;
    }
  }
  return result;
}

// Trains `config.ensemble_size` members with seeds derived from base_seed.
// A member whose training diverges is returned with `diverged` set and no
// parameters; callers decide whether the survivors suffice.
inline std::vector<FitResult> fit_ensemble(std::span<const Example> train,
                                           std::span<const Example> validation,
                                           std::size_t num_classes, const TrainConfig& config,
                                           std::uint64_t base_seed, int workers = 1) {
  std::vector<FitResult> results(config.ensemble_size);
  parallel_for(results.size(), workers, [&](std::size_t k) {
    std::uint64_t seed = derive_seed(base_seed, "member", k);
    try {
      results[k] = fit(train, validation, num_classes, config, seed, nullptr);
    } catch (const TrainingError&) {
      results[k] = FitResult{};
      results[k].seed = seed;
      results[k].diverged = true;
    }
  });
  return results;
}

// Mean of member distributions, token by token.
inline TokenDistributions ensemble_predict(std::span<const TaggerParams> members,
                                           const Sentence& sentence) {
  if (members.empty()) throw Error("cannot predict with an empty ensemble");
  TokenDistributions mean = predict_proba(members[0], sentence);
  for (std::size_t k = 1; k < members.size(); ++k) {
    TokenDistributions d = predict_proba(members[k], sentence);
    for (std::size_t m = 0; m < mean.size(); ++m) {
      for (std::size_t c = 0; c < mean[m].size(); ++c) mean[m][c] += d[m][c];
    }
  }
  const double inv = 1.0 / static_cast<double>(members.size());
  for (auto& row : mean) {
    for (double& v : row) v *= inv;
  }
  return mean;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline void save_tagger(const std::filesystem::path& path, const TaggerParams& params) {
  nlohmann::json j;
  j["format"] = "cotag-tagger";
  j["version"] = 1;
  j["seed"] = params.seed;
  j["feature_dim"] = params.feature_dim;
  j["num_classes"] = params.num_classes;
  j["init_scale"] = params.init_scale;
  j["bias"] = params.bias;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& [f, row] : params.weights) {
    rows.push_back(nlohmann::json::array({f, row}));
  }
  j["weights"] = std::move(rows);
  std::ofstream out = io_detail::open_out(path);
  out << j.dump() << '\n';
}

inline TaggerParams load_tagger(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open checkpoint: " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw LoadError(path.string() + ": checkpoint is not valid JSON");
  }
  if (j.value("format", std::string{}) != "cotag-tagger" || j.value("version", 0) != 1) {
    throw LoadError(path.string() + ": unrecognized checkpoint format");
  }
  TaggerParams p;
  try {
    p.seed = j.at("seed").get<std::uint64_t>();
    p.feature_dim = j.at("feature_dim").get<std::size_t>();
    p.num_classes = j.at("num_classes").get<std::size_t>();
    p.init_scale = j.at("init_scale").get<double>();
    p.bias = j.at("bias").get<std::vector<double>>();
    for (const auto& entry : j.at("weights")) {
      if (!entry.is_array() || entry.size() != 2) {
        throw LoadError(path.string() + ": malformed weight row");
      }
      std::uint32_t f = entry[0].get<std::uint32_t>();
      std::vector<double> row = entry[1].get<std::vector<double>>();
      if (f >= p.feature_dim || row.size() != p.num_classes) {
        throw LoadError(path.string() + ": weight row shape mismatch");
      }
      p.weights.emplace(f, std::move(row));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
  if (p.bias.size() != p.num_classes) {
    throw LoadError(path.string() + ": bias length mismatch");
  }
  return p;
}

}  // namespace cotag
