#include <algorithm>
#include <cstdio>
#include <future>

#include "scz/error.hpp"
#include "scz/harness.hpp"

namespace scz {

std::vector<LabeledItem> preprocess_items(const std::vector<LabeledItem>& items, const PreprocessConfig& cfg) {
  std::vector<LabeledItem> out;
  out.reserve(items.size());
  for (const auto& it : items) {
    try {
      out.push_back({preprocess(it.image, cfg), it.label, it.source_id, it.provenance});
    } catch (const Error& e) {
      throw Error(e.code(), it.source_id + " (" + to_string(it.provenance) + "): " + e.what());
    }
  }
  return out;
}

DatasetSplit prepare_split(const std::vector<LabeledItem>& raw, const TrainConfig& cfg, bool leak_free,
                           const SplitFractions& fractions) {
  // The split only looks at labels and source ids, so augmenting first and
  // grouping by source is the same as splitting sources, then augmenting.
  const std::vector<LabeledItem> augmented = augment_items(raw, cfg.augment);
  DatasetSplit split = stratified_split(augmented, fractions, cfg.seed, leak_free);
  split.train = preprocess_items(split.train, cfg.preprocess);
  split.validation = preprocess_items(split.validation, cfg.preprocess);
  split.test = preprocess_items(split.test, cfg.preprocess);
  return split;
}

std::vector<CompareRow> compare(const std::vector<ArchId>& archs, const TrainConfig& cfg, const DatasetSplit& split,
                                const std::function<void(ArchId, const EpochRecord&)>& observer) {
  if (archs.size() < 2) throw Error(Errc::bad_config, "compare needs at least two architectures");
  if (split.test.empty()) throw Error(Errc::empty_split, "test split is empty");

  auto run = [&](ArchId arch) {
    TrainConfig c = cfg;
    c.arch = arch;
    EpochObserver obs;
    if (observer) obs = [&observer, arch](const EpochRecord& r) { observer(arch, r); };
    TrainResult result = train(c, split, obs);
    const Metrics m = evaluate(result.model, split.test).metrics;
    return CompareRow{arch, m, std::move(result.history), std::move(result.model)};
  };

  std::vector<CompareRow> rows;
  if (cfg.deterministic) {
    for (ArchId a : archs) rows.push_back(run(a));
  } else {
    std::vector<std::future<CompareRow>> jobs;
    for (ArchId a : archs) jobs.push_back(std::async(std::launch::async, run, a));
    for (auto& j : jobs) rows.push_back(j.get());
  }
  std::stable_sort(rows.begin(), rows.end(), [](const CompareRow& a, const CompareRow& b) {
    return a.test_metrics.accuracy > b.test_metrics.accuracy;
  });
  return rows;
}

std::string format_compare_table(const std::vector<CompareRow>& rows) {
  std::string out = "rank\tarch\ttest_accuracy\ttn\tfp\tfn\ttp\tbest_epoch\tepochs\n";
  char buf[256];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const auto& c = r.test_metrics.confusion;
    std::snprintf(buf, sizeof buf, "%zu\t%s\t%.6f\t%zu\t%zu\t%zu\t%zu\t%d\t%zu\n", i + 1,
                  std::string(to_string(r.arch)).c_str(), r.test_metrics.accuracy, c.tn, c.fp, c.fn, c.tp,
                  r.history.best_epoch, r.history.records.size());
    out += buf;
  }
  return out;
}

}  // namespace scz
