#include "scz/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "scz/error.hpp"
#include "scz/image_io.hpp"
#include "scz/rng.hpp"

namespace fs = std::filesystem;

namespace scz {
namespace {

void collect_images(const fs::path& dir, const fs::path& root, std::vector<fs::path>& out) {
  std::vector<fs::directory_entry> entries;
  for (const auto& e : fs::directory_iterator(dir)) entries.push_back(e);
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.path().filename().string() < b.path().filename().string(); });
  for (const auto& e : entries) {
    if (e.is_directory()) {
      collect_images(e.path(), root, out);
    } else if (e.is_regular_file() && is_image_path(e.path())) {
      out.push_back(e.path());
    }
  }
}

struct Unit {
  Label label;
  std::vector<std::size_t> items;
};

struct ClassCounts {
  std::size_t train, validation, test;
};

// Splits `val` and `test` between the two classes so that every per-class,
// per-split count is within one of exact proportionality.
std::array<ClassCounts, 2> apportion(std::size_t n0, std::size_t n1, std::size_t val, std::size_t test) {
  const double total = static_cast<double>(n0 + n1);
  const double qv = static_cast<double>(n0) * static_cast<double>(val) / total;
  const double qt = static_cast<double>(n0) * static_cast<double>(test) / total;
  const double v_opts[2] = {std::floor(qv), std::ceil(qv)};
  const double t_opts[2] = {std::floor(qt), std::ceil(qt)};
  double best_cost = 1e300;
  std::size_t best_v = 0, best_t = 0;
  for (double v : v_opts) {
    for (double t : t_opts) {
      const auto v0 = static_cast<std::size_t>(v), t0 = static_cast<std::size_t>(t);
      if (v0 > val || t0 > test || v0 + t0 > n0) continue;
      if ((val - v0) + (test - t0) > n1) continue;
      const double cost = std::max({std::abs(v - qv), std::abs(t - qt), std::abs(v + t - qv - qt)});
      if (cost < best_cost) {
        best_cost = cost;
        best_v = v0;
        best_t = t0;
      }
    }
  }
  ClassCounts c0{n0 - best_v - best_t, best_v, best_t};
  ClassCounts c1{n1 - (val - best_v) - (test - best_t), val - best_v, test - best_t};
  return {c0, c1};
}

std::size_t floor_fraction(std::size_t n, double f) {
  // The small bias keeps products like 240 * 0.1 from flooring to 23.
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * f + 1e-9));
}

}  // namespace

std::vector<LabeledItem> load_dir(const fs::path& root) {
  std::vector<LabeledItem> items;
  for (Label label : {Label::control, Label::patient}) {
    const fs::path dir = root / std::string(to_string(label));
    if (!fs::is_directory(dir)) throw Error(Errc::missing_class_dir, "missing class directory " + dir.string());
    std::vector<fs::path> files;
    collect_images(dir, root, files);
    if (files.empty()) throw Error(Errc::empty_class, "no images under " + dir.string());
    for (const auto& f : files) {
      items.push_back({load_image(f), label, fs::relative(f, root).generic_string(), {}});
    }
  }
  return items;
}

void save_items(const std::vector<LabeledItem>& items, const fs::path& root) {
  for (const auto& item : items) {
    const fs::path p = root / fs::path(item.source_id);
    fs::create_directories(p.parent_path());
    save_image(item.image, p);
  }
}

std::vector<LabeledItem> augment_items(const std::vector<LabeledItem>& items, const AugmentConfig& cfg) {
  std::vector<AugmentInput> inputs;
  inputs.reserve(items.size());
  for (const auto& it : items) inputs.push_back({it.image, it.label});
  std::vector<LabeledItem> out;
  out.reserve(items.size() * 3);
  for (auto& a : augment_dataset(inputs, cfg)) {
    out.push_back({std::move(a.image), a.label, items[a.source_index].source_id, a.provenance});
  }
  return out;
}

DatasetSplit stratified_split(const std::vector<LabeledItem>& items, const SplitFractions& fractions,
                              std::uint64_t seed, bool leak_free) {
  const double fsum = fractions.train + fractions.validation + fractions.test;
  if (std::abs(fsum - 1.0) > 1e-9 || fractions.train < 0 || fractions.validation < 0 || fractions.test < 0) {
    throw Error(Errc::bad_config, "split fractions must be nonnegative and sum to 1");
  }

  std::vector<Unit> units;
  if (leak_free) {
    std::map<std::string, std::size_t> by_source;
    for (std::size_t i = 0; i < items.size(); ++i) {
      auto [it, inserted] = by_source.try_emplace(items[i].source_id, units.size());
      if (inserted) units.push_back({items[i].label, {}});
      Unit& u = units[it->second];
      if (u.label != items[i].label) {
        throw Error(Errc::bad_label, "source '" + items[i].source_id + "' carries two labels");
      }
      u.items.push_back(i);
    }
  } else {
    for (std::size_t i = 0; i < items.size(); ++i) units.push_back({items[i].label, {i}});
  }

  std::array<std::vector<std::size_t>, 2> per_class;
  for (std::size_t u = 0; u < units.size(); ++u) per_class[static_cast<int>(units[u].label)].push_back(u);
  for (int c = 0; c < 2; ++c) {
    if (per_class[c].size() < 10) {
      throw Error(Errc::too_few_items, "class " + std::string(to_string(label_from_index(c))) + " has " +
                                           std::to_string(per_class[c].size()) + " units; at least 10 needed");
    }
  }

  const std::size_t n = units.size();
  const std::size_t val = floor_fraction(n, fractions.validation);
  const std::size_t test = floor_fraction(n, fractions.test);
  const auto counts = apportion(per_class[0].size(), per_class[1].size(), val, test);

  DatasetSplit split;
  split.seed = seed;
  split.leak_free = leak_free;
  for (int c = 0; c < 2; ++c) {
    Rng rng(seed, static_cast<std::uint64_t>(c));
    rng.shuffle(std::span<std::size_t>(per_class[c]));
    const ClassCounts& cc = counts[c];
    for (std::size_t k = 0; k < per_class[c].size(); ++k) {
      std::vector<LabeledItem>& dst = k < cc.train                   ? split.train
                                      : k < cc.train + cc.validation ? split.validation
                                                                     : split.test;
      for (std::size_t i : units[per_class[c][k]].items) dst.push_back(items[i]);
    }
  }
  return split;
}

}  // namespace scz
