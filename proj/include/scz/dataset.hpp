#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scz/augment.hpp"
#include "scz/image.hpp"
#include "scz/kv_config.hpp"
#include "scz/label.hpp"

namespace scz {

struct LabeledItem {
  Image image;
  Label label = Label::control;
  // Stable id of the source image (its path relative to the dataset root);
  // augmented copies keep their source's id.
  std::string source_id;
  Provenance provenance;
};

struct DatasetSplit {
  std::vector<LabeledItem> train;
  std::vector<LabeledItem> validation;
  std::vector<LabeledItem> test;
  std::uint64_t seed = 0;
  bool leak_free = true;
};

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

// Reads root/control and root/patient recursively (depth-first, entries in
// lexicographic order). Errors: missing_class_dir, empty_class.
std::vector<LabeledItem> load_dir(const std::filesystem::path& root);

// Writes every item to root/<source_id> (PNG or PGM by extension).
void save_items(const std::vector<LabeledItem>& items, const std::filesystem::path& root);

// Three copies per item (original, shear, hflip); the shear stream is keyed
// by the item's position in `items`.
std::vector<LabeledItem> augment_items(const std::vector<LabeledItem>& items, const AugmentConfig& cfg);

// Seeded per-class shuffle, then partition. Validation and test sizes are
// floor(n * fraction), train takes the remainder; per-split class counts are
// within one item of exact proportionality. With leak_free, whole source_id
// groups are the unit of assignment, so augmented copies of one source never
// straddle splits. Errc::too_few_items below 10 units per class.
DatasetSplit stratified_split(const std::vector<LabeledItem>& items, const SplitFractions& fractions,
                              std::uint64_t seed, bool leak_free);

// -- synthetic loop traces -----------------------------------------------------

struct ClassStyle {
  double tremor_amplitude;    // px, peak of the high-frequency vertical wobble
  double height_shrink;       // scale on loop height, (0,1]
  double baseline_drift_deg;  // baseline inclination magnitude
};

struct SynthConfig {
  int count_per_class = 120;
  int loops = 4;
  ClassStyle control{0.2, 1.0, 0.5};
  ClassStyle patient{1.5, 0.85, 3.0};
  double stroke_width = 2.0;
  int canvas_w = 192;
  int canvas_h = 128;
  std::uint64_t seed = 0;

  void validate() const;
  KeyValues to_kv() const;
  static SynthConfig from_kv(const KeyValues& kv);
};

// Four connected loops x(t) = x0 + v t + r cos(2 pi k t + phi),
// y(t) = y0 + h shrink sin(2 pi k t) + drift(t) + tremor(t), rasterized with
// an anti-aliased pen onto white paper. Output order: all control items, then
// all patient items; ids are "<label>/NNNN.png". Errc::bad_config on invalid cfg.
std::vector<LabeledItem> synth_generate(const SynthConfig& cfg);

// -- manifest ----------------------------------------------------------------------

// One line per item, tab-separated: source_id, label, provenance, split, path.
struct ManifestRecord {
  std::string source_id;
  Label label = Label::control;
  Provenance provenance;
  std::string split;  // train | validation | test | none
  std::string path;   // image file relative to the manifest's directory

  bool operator==(const ManifestRecord&) const = default;
};

void write_manifest(const std::vector<ManifestRecord>& records, const std::filesystem::path& path);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

}  // namespace scz
