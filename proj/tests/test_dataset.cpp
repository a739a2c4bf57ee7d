#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "oracles.hpp"
#include "scz/error.hpp"
#include "scz/harness.hpp"
#include "scz/image_io.hpp"
#include "support.hpp"

using namespace scz;
namespace fs = std::filesystem;

namespace {

Errc code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no scz::Error thrown");
  return Errc::io_error;
}

void write_tiny(const fs::path& p, double v) {
  fs::create_directories(p.parent_path());
  save_image(Image(4, 3, v), p);
}

// Items with unique source ids and no image content; enough for splitting.
std::vector<LabeledItem> bare_items(int per_class) {
  std::vector<LabeledItem> out;
  for (Label l : {Label::control, Label::patient})
    for (int i = 0; i < per_class; ++i) {
      LabeledItem it;
      it.label = l;
      it.source_id = std::string(to_string(l)) + "/" + std::to_string(i) + ".png";
      out.push_back(std::move(it));
    }
  return out;
}

std::vector<LabeledItem> tripled(const std::vector<LabeledItem>& items) {
  std::vector<LabeledItem> out;
  for (const auto& it : items)
    for (Transform t : {Transform::original, Transform::shear, Transform::hflip}) {
      LabeledItem c = it;
      c.provenance.transform = t;
      out.push_back(std::move(c));
    }
  return out;
}

std::size_t count(const std::vector<LabeledItem>& v, Label l) {
  std::size_t n = 0;
  for (const auto& it : v) n += it.label == l;
  return n;
}

std::set<std::string> ids(const std::vector<LabeledItem>& v) {
  std::set<std::string> s;
  for (const auto& it : v) s.insert(it.source_id);
  return s;
}

bool disjoint(const std::set<std::string>& a, const std::set<std::string>& b) {
  for (const auto& x : a)
    if (b.count(x)) return false;
  return true;
}

// Each split holds each class in proportion to the whole set, within one item.
void check_stratified(const DatasetSplit& s, const std::vector<LabeledItem>& all) {
  const double total = static_cast<double>(all.size());
  for (Label l : {Label::control, Label::patient}) {
    const double share = static_cast<double>(count(all, l)) / total;
    for (const auto* part : {&s.train, &s.validation, &s.test}) {
      CHECK(std::abs(static_cast<double>(count(*part, l)) - share * static_cast<double>(part->size())) <= 1.0 + 1e-9);
    }
  }
}

double centroid_accuracy(const DatasetSplit& s) {
  std::vector<std::pair<const Image*, int>> train, test;
  for (const auto& it : s.train) train.push_back({&it.image, static_cast<int>(it.label)});
  for (const auto& it : s.test) test.push_back({&it.image, static_cast<int>(it.label)});
  return oracle::nearest_centroid(train, test, 16);
}

}  // namespace

TEST_CASE("load_dir reads both classes in lexicographic depth-first order") {
  testing::TempDir root("load");
  write_tiny(root / "control/b.png", 0.2);
  write_tiny(root / "control/a/z.pgm", 0.4);
  write_tiny(root / "control/a/y.png", 0.6);
  write_tiny(root / "patient/x.png", 0.8);
  std::ofstream(root / "control/notes.txt") << "ignored";
  const auto items = load_dir(root.path());
  REQUIRE(items.size() == 4);
  CHECK(items[0].source_id == "control/a/y.png");
  CHECK(items[1].source_id == "control/a/z.pgm");
  CHECK(items[2].source_id == "control/b.png");
  CHECK(items[3].source_id == "patient/x.png");
  CHECK(items[3].label == Label::patient);
  CHECK(items[0].image.at(0, 0) == doctest::Approx(0.6).epsilon(1e-2));
}

TEST_CASE("load_dir errors") {
  testing::TempDir root("load_err");
  write_tiny(root / "control/a.png", 0.1);
  CHECK(code_of([&] { load_dir(root.path()); }) == Errc::missing_class_dir);
  fs::create_directories(root / "patient");
  CHECK(code_of([&] { load_dir(root.path()); }) == Errc::empty_class);
}

TEST_CASE("120 images per class load as 240 items") {
  testing::TempDir root("load240");
  for (const char* c : {"control", "patient"})
    for (int i = 0; i < 120; ++i) write_tiny(root / (std::string(c) + "/" + std::to_string(1000 + i) + ".pgm"), 0.5);
  const auto items = load_dir(root.path());
  CHECK(items.size() == 240);
  CHECK(count(items, Label::control) == 120);
  CHECK(count(items, Label::patient) == 120);
}

TEST_CASE("synth_generate counts, ids and determinism") {
  SynthConfig cfg;
  const auto items = synth_generate(cfg);
  REQUIRE(items.size() == 240);
  CHECK(count(items, Label::control) == 120);
  CHECK(count(items, Label::patient) == 120);
  CHECK(items.front().source_id == "control/0000.png");
  CHECK(items.back().source_id == "patient/0119.png");
  CHECK(items.front().label == Label::control);
  CHECK(ids(items).size() == 240);
  for (const auto& it : items) {
    CHECK(it.image.width() == cfg.canvas_w);
    CHECK(it.image.height() == cfg.canvas_h);
  }
  const auto again = synth_generate(cfg);
  for (std::size_t i = 0; i < items.size(); i += 37) CHECK(again[i].image == items[i].image);

  SynthConfig bad;
  bad.count_per_class = 0;
  CHECK(code_of([&] { synth_generate(bad); }) == Errc::bad_config);
  CHECK(SynthConfig::from_kv(KeyValues::parse(cfg.to_kv().str())).to_kv().str() == cfg.to_kv().str());
}

TEST_CASE("split arithmetic") {
  const SplitFractions f;
  const auto raw = bare_items(120);
  for (bool leak_free : {true, false}) {
    const DatasetSplit s = stratified_split(raw, f, 7, leak_free);
    CHECK(s.train.size() == 192);
    CHECK(s.validation.size() == 24);
    CHECK(s.test.size() == 24);
    check_stratified(s, raw);
  }

  const auto aug = tripled(raw);
  REQUIRE(aug.size() == 720);
  const DatasetSplit mixed = stratified_split(aug, f, 7, false);
  CHECK(mixed.train.size() == 576);
  CHECK(mixed.validation.size() == 72);
  CHECK(mixed.test.size() == 72);
  check_stratified(mixed, aug);

  const DatasetSplit lf = stratified_split(aug, f, 7, true);
  CHECK(lf.train.size() == 576);
  CHECK(lf.validation.size() == 72);
  CHECK(lf.test.size() == 72);
  check_stratified(lf, aug);
  CHECK(disjoint(ids(lf.train), ids(lf.test)));
  CHECK(disjoint(ids(lf.train), ids(lf.validation)));
  CHECK(disjoint(ids(lf.validation), ids(lf.test)));
}

TEST_CASE("split is seeded and uneven classes stay stratified") {
  const auto raw = bare_items(30);
  const auto a = stratified_split(raw, {}, 1, true), b = stratified_split(raw, {}, 1, true),
             c = stratified_split(raw, {}, 2, true);
  CHECK(ids(a.test) == ids(b.test));
  CHECK(ids(a.test) != ids(c.test));

  auto uneven = bare_items(25);
  uneven.resize(25 + 13);  // 25 control, 13 patient
  const SplitFractions f{0.7, 0.15, 0.15};
  const DatasetSplit s = stratified_split(uneven, f, 3, true);
  CHECK(s.train.size() + s.validation.size() + s.test.size() == uneven.size());
  CHECK(s.validation.size() == 5);
  CHECK(s.test.size() == 5);
  check_stratified(s, uneven);

  CHECK(code_of([] { stratified_split(bare_items(9), {}, 0, true); }) == Errc::too_few_items);
}

TEST_CASE("manifest round trip") {
  testing::TempDir dir("manifest");
  std::vector<ManifestRecord> recs{
      {"control/0001.png", Label::control, {}, "train", "control/0001.png"},
      {"patient/0002.png", Label::patient, {Transform::shear, -3.141592653589793}, "test", "patient/0002_shear.png"},
      {"patient/0002.png", Label::patient, {Transform::hflip, 0.0}, "validation", "patient/0002_hflip.png"}};
  write_manifest(recs, dir / "m.tsv");
  CHECK(read_manifest(dir / "m.tsv") == recs);
}

TEST_CASE("save_items and load_dir round trip") {
  testing::TempDir dir("items");
  const auto items = testing::small_synth(3);
  save_items(items, dir.path());
  const auto back = load_dir(dir.path());
  REQUIRE(back.size() == items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    CHECK(back[i].source_id == items[i].source_id);
    CHECK(back[i].label == items[i].label);
  }
}

TEST_CASE("synthetic task is learnable; degenerate styles are not") {
  TrainConfig cfg;
  const DatasetSplit s = prepare_split(synth_generate(SynthConfig{}), cfg, true);
  const double acc = centroid_accuracy(s);
  MESSAGE("nearest-centroid accuracy, default styles: " << acc);
  CHECK(acc >= 0.85);

  // Chance-level accuracy has sampling noise of about 0.5 / sqrt(test size),
  // so this half uses a larger set (200 independent test images) and skips
  // augmentation, which cannot create a class difference.
  SynthConfig flat;
  flat.count_per_class = 1000;
  flat.control = {0.0, 1.0, 0.0};
  flat.patient = {0.0, 1.0, 0.0};
  const DatasetSplit d = stratified_split(preprocess_items(synth_generate(flat), cfg.preprocess), {}, 5, true);
  const double chance = centroid_accuracy(d);
  MESSAGE("nearest-centroid accuracy, identical styles: " << chance);
  CHECK(std::abs(chance - 0.5) <= 0.1);
}
