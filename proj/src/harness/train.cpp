#include <chrono>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "scz/error.hpp"
#include "scz/harness.hpp"
#include "scz/optim.hpp"
#include "scz/rng.hpp"

namespace scz {
namespace {

// Activation tensors are a few MB each; served by mmap they would be faulted
// in from scratch on every batch.
void keep_buffers_in_heap() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    return true;
  }();
  (void)once;
#endif
}

constexpr std::uint64_t kShuffleStream = 0x5348;  // per-epoch shuffle streams start here
constexpr std::size_t kEvalBatch = 32;

void check_images(const std::vector<LabeledItem>& items, const InputSpec& spec, const char* which) {
  for (const auto& it : items) {
    if (static_cast<std::size_t>(it.image.width()) != spec.width ||
        static_cast<std::size_t>(it.image.height()) != spec.height) {
      throw Error(Errc::shape_mismatch, std::string(which) + " image '" + it.source_id + "' is " +
                                            std::to_string(it.image.width()) + "x" +
                                            std::to_string(it.image.height()) + ", expected the canvas size");
    }
  }
}

struct LossAcc {
  double loss = 0.0;
  double acc = 0.0;
};

LossAcc score(const Model& model, const std::vector<LabeledItem>& items) {
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < items.size(); start += kEvalBatch) {
    const std::size_t end = std::min(items.size(), start + kEvalBatch);
    std::vector<const Image*> imgs;
    std::vector<int> labels;
    for (std::size_t i = start; i < end; ++i) {
      imgs.push_back(&items[i].image);
      labels.push_back(static_cast<int>(items[i].label));
    }
    const Tensor logits = model.infer(images_to_batch(imgs));
    loss += softmax_cross_entropy(logits, labels).value * static_cast<double>(end - start);
    const Tensor p = softmax(logits);
    for (std::size_t b = 0; b < labels.size(); ++b) {
      if (static_cast<int>(label_for(p[2 * b + 1])) == labels[b]) ++correct;
    }
  }
  const auto n = static_cast<double>(items.size());
  return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error(Errc::bad_config, "learning_rate must be finite and >= 0");
  }
  if (batch_size < 1) throw Error(Errc::bad_config, "batch_size must be >= 1");
  if (max_epochs < 1) throw Error(Errc::bad_config, "max_epochs must be >= 1");
  if (early_stop_patience < 1 || early_stop_patience > max_epochs) {
    throw Error(Errc::bad_config, "early_stop_patience must lie in [1, max_epochs]");
  }
  preprocess.validate();
  augment.validate();
}

KeyValues TrainConfig::to_kv() const {
  KeyValues kv;
  kv.set("arch", std::string(to_string(arch)));
  kv.set("learning_rate", learning_rate);
  kv.set("batch_size", static_cast<long long>(batch_size));
  kv.set("max_epochs", static_cast<long long>(max_epochs));
  kv.set("early_stop_patience", static_cast<long long>(early_stop_patience));
  kv.set("seed", std::to_string(seed));
  kv.set("deterministic", std::string(deterministic ? "true" : "false"));
  const KeyValues pre = preprocess.to_kv(), aug = augment.to_kv();
  for (const auto& [k, v] : pre.entries()) kv.set("preprocess." + k, v);
  for (const auto& [k, v] : aug.entries()) kv.set("augment." + k, v);
  return kv;
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv) {
  TrainConfig c;
  c.arch = parse_arch(kv.get_string("arch", std::string(to_string(c.arch))));
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.batch_size = static_cast<std::size_t>(kv.get_int("batch_size", static_cast<long long>(c.batch_size)));
  c.max_epochs = static_cast<int>(kv.get_int("max_epochs", c.max_epochs));
  c.early_stop_patience = static_cast<int>(kv.get_int("early_stop_patience", c.early_stop_patience));
  c.seed = kv.get_u64("seed", c.seed);
  const std::string det = kv.get_string("deterministic", "true");
  if (det != "true" && det != "false") throw Error(Errc::bad_config, "deterministic must be true or false");
  c.deterministic = det == "true";
  KeyValues pre, aug;
  for (const auto& [k, v] : kv.entries()) {
    if (k.starts_with("preprocess.")) pre.set(k.substr(11), v);
    if (k.starts_with("augment.")) aug.set(k.substr(8), v);
  }
  c.preprocess = PreprocessConfig::from_kv(pre);
  c.augment = AugmentConfig::from_kv(aug);
  c.validate();
  return c;
}

TrainResult train(const TrainConfig& cfg, const DatasetSplit& split, const EpochObserver& observer) {
  cfg.validate();
  if (split.train.empty()) throw Error(Errc::empty_split, "training split is empty");
  if (split.validation.empty()) throw Error(Errc::empty_split, "validation split is empty");
  const InputSpec spec{1, static_cast<std::size_t>(cfg.preprocess.canvas_h),
                       static_cast<std::size_t>(cfg.preprocess.canvas_w)};
  check_images(split.train, spec, "train");
  check_images(split.validation, spec, "validation");

  const auto started = std::chrono::steady_clock::now();
  keep_buffers_in_heap();
  Model model = Model::build(cfg.arch, cfg.seed, spec);
  {
    std::vector<const Image*> imgs;
    for (const auto& it : split.train) imgs.push_back(&it.image);
    model.set_input_norm(fit_input_norm(imgs));
  }
  AdamState adam;
  adam.config.learning_rate = cfg.learning_rate;

  TrainHistory history;
  std::vector<Tensor> best_weights = model.weights();
  double best_acc = -1.0;
  std::vector<std::size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng rng(cfg.seed, kShuffleStream + static_cast<std::uint64_t>(epoch));
    rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Image*> imgs;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        imgs.push_back(&split.train[order[i]].image);
        labels.push_back(static_cast<int>(split.train[order[i]].label));
      }
      model.zero_grad();
      const Tensor logits = model.forward(images_to_batch(imgs), Mode::train);
      const LossValue loss = softmax_cross_entropy(logits, labels);
      if (!std::isfinite(loss.value)) {
        throw Error(Errc::diverged_loss, "loss became non-finite in epoch " + std::to_string(epoch) +
                                             " at batch starting " + std::to_string(start));
      }
      if (epoch == 1 && start == 0) history.first_batch_loss = loss.value;
      model.backward(loss.gradient);
      auto params = model.params();
      adam_step(params, adam);
      model.round_weights_to_float();

      loss_sum += loss.value * static_cast<double>(end - start);
      for (std::size_t b = 0; b < labels.size(); ++b) {
        if ((logits[2 * b + 1] >= logits[2 * b]) == (labels[b] == 1)) ++correct;
      }
    }

    const LossAcc val = score(model, split.validation);
    const auto n = static_cast<double>(order.size());
    const EpochRecord rec{epoch, loss_sum / n, static_cast<double>(correct) / n, val.loss, val.acc};
    history.records.push_back(rec);
    if (observer) observer(rec);

    if (val.acc > best_acc) {
      best_acc = val.acc;
      history.best_epoch = epoch;
      best_weights = model.weights();
    } else if (epoch - history.best_epoch >= cfg.early_stop_patience) {
      break;
    }
  }
  model.set_weights(best_weights);
  history.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(model), std::move(history)};
}

void write_history(const TrainHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out << "# epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc\n";
  char buf[256];
  for (const auto& r : history.records) {
    std::snprintf(buf, sizeof buf, "%d\t%.17g\t%.17g\t%.17g\t%.17g\n", r.epoch, r.train_loss, r.train_acc, r.val_loss,
                  r.val_acc);
    out << buf;
  }
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

std::vector<EpochRecord> read_history(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::unreadable_file, "cannot open " + path.string());
  std::vector<EpochRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    EpochRecord r;
    if (!(ss >> r.epoch >> r.train_loss >> r.train_acc >> r.val_loss >> r.val_acc)) {
      throw Error(Errc::bad_config, "malformed history line: " + line);
    }
    records.push_back(r);
  }
  return records;
}

}  // namespace scz
