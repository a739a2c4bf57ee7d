#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "scz/augment.hpp"
#include "scz/dataset.hpp"
#include "scz/model.hpp"
#include "scz/preprocess.hpp"

namespace scz {

struct TrainConfig {
  ArchId arch = ArchId::custom_cnn;
  double learning_rate = 1e-4;
  std::size_t batch_size = 16;
  int max_epochs = 60;
  int early_stop_patience = 10;
  std::uint64_t seed = 0;
  bool deterministic = true;
  PreprocessConfig preprocess;
  AugmentConfig augment;

  void validate() const;
  KeyValues to_kv() const;
  static TrainConfig from_kv(const KeyValues& kv);
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
  int best_epoch = 0;
  double first_batch_loss = 0.0;
  double wall_time_s = 0.0;  // measured, so excluded from equality

  bool operator==(const TrainHistory& o) const {
    return records == o.records && best_epoch == o.best_epoch && first_batch_loss == o.first_batch_loss;
  }
};

// Tab-separated: epoch, train_loss, train_acc, val_loss, val_acc.
void write_history(const TrainHistory& history, const std::filesystem::path& path);
std::vector<EpochRecord> read_history(const std::filesystem::path& path);

struct TrainResult {
  Model model;
  TrainHistory history;
};

// Called after every epoch; handy for progress output.
using EpochObserver = std::function<void(const EpochRecord&)>;

// Mini-batch Adam on softmax cross-entropy with a seeded reshuffle each
// epoch. Keeps the weights of the best validation-accuracy epoch (first one
// on ties) and stops after `early_stop_patience` epochs without improvement.
// Errors: empty_split, shape_mismatch (images not at the canvas size),
// diverged_loss (non-finite loss).
TrainResult train(const TrainConfig& cfg, const DatasetSplit& split, const EpochObserver& observer = {});

// -- metrics -------------------------------------------------------------------

// Control is the negative class, patient the positive one.
struct Confusion {
  std::size_t tn = 0, fp = 0, fn = 0, tp = 0;

  std::size_t total() const { return tn + fp + fn + tp; }
  bool operator==(const Confusion&) const = default;
};

struct Metrics {
  Confusion confusion;
  double accuracy = 0.0;
  // Undefined ratios (zero denominators) are reported as 0.
  double precision_control = 0.0, recall_control = 0.0;
  double precision_patient = 0.0, recall_patient = 0.0;

  bool operator==(const Metrics&) const = default;
};

Metrics metrics_from_confusion(const Confusion& c);

// Human-readable block with the 2x2 matrix, followed by one machine-readable
// line starting with "metrics\t".
std::string format_metrics(const Metrics& m);
Metrics parse_metrics_line(const std::string& line);

struct ItemPrediction {
  std::string source_id;
  Provenance provenance;
  Label truth = Label::control;
  Prediction prediction;
};

struct Evaluation {
  Metrics metrics;
  std::vector<ItemPrediction> log;
};

// Errc::empty_eval on an empty item list.
Evaluation evaluate(const Model& model, const std::vector<LabeledItem>& items);

// Tab-separated: source_id, provenance, truth, predicted, p_patient (%.17g).
void write_prediction_log(const std::vector<ItemPrediction>& log, std::ostream& out);
std::vector<ItemPrediction> read_prediction_log(std::istream& in);
Confusion confusion_from_log(const std::vector<ItemPrediction>& log);

// -- experiments ------------------------------------------------------------------

// augment -> split -> preprocess, in that order. With leak_free the split
// unit is the source image, so its three variants land in one split.
DatasetSplit prepare_split(const std::vector<LabeledItem>& raw, const TrainConfig& cfg, bool leak_free,
                           const SplitFractions& fractions = {});

// Preprocesses every item's image in place of the raw one.
std::vector<LabeledItem> preprocess_items(const std::vector<LabeledItem>& items, const PreprocessConfig& cfg);

struct CompareRow {
  ArchId arch;
  Metrics test_metrics;
  TrainHistory history;
  Model model;  // best-epoch weights
};

// Trains every listed architecture on the same data and seed, then sorts by
// test accuracy (descending, stable). Runs architectures on separate threads
// unless cfg.deterministic. Errc::bad_config with fewer than two archs.
std::vector<CompareRow> compare(const std::vector<ArchId>& archs, const TrainConfig& cfg, const DatasetSplit& split,
                                const std::function<void(ArchId, const EpochRecord&)>& observer = {});

std::string format_compare_table(const std::vector<CompareRow>& rows);

}  // namespace scz
