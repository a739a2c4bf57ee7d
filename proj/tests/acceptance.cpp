// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// fails. Arguments, when given, select criteria whose name contains one of
// them.

#include <httplib.h>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <json.hpp>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "grad_suite.hpp"
#include "oracles.hpp"
#include "scz/augment.hpp"
#include "scz/cli.hpp"
#include "scz/error.hpp"
#include "scz/filters.hpp"
#include "scz/harness.hpp"
#include "scz/image_io.hpp"
#include "scz/service.hpp"
#include "small_task.hpp"
#include "support.hpp"

using namespace scz;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

// Collects the individual checks behind one criterion.
class Verdict {
 public:
  void check(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool pass() const { return failures_.empty(); }
  std::string detail() const {
    std::string out;
    for (const auto& f : failures_) out += (out.empty() ? "" : "; ") + ("failed: " + f);
    for (const auto& n : notes_) out += (out.empty() ? "" : "; ") + n;
    return out;
  }

 private:
  std::vector<std::string> failures_, notes_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// -- shared end-to-end state ---------------------------------------------------------

struct EndToEnd {
  TrainConfig cfg;
  std::vector<LabeledItem> raw;
  DatasetSplit split;
  double centroid = 0;
  const CompareRow* custom = nullptr;
  Evaluation custom_eval;
  std::vector<CompareRow> rows;
  double seconds = 0;
};

EndToEnd& end_to_end() {
  static std::unique_ptr<EndToEnd> e;
  if (e) return *e;
  e = std::make_unique<EndToEnd>();
  const auto t0 = Clock::now();
  e->cfg.seed = 0;
  e->raw = synth_generate(SynthConfig{});
  e->split = prepare_split(e->raw, e->cfg, true);

  std::vector<std::pair<const Image*, int>> tr, te;
  for (const auto& it : e->split.train) tr.push_back({&it.image, static_cast<int>(it.label)});
  for (const auto& it : e->split.test) te.push_back({&it.image, static_cast<int>(it.label)});
  e->centroid = oracle::nearest_centroid(tr, te, 16);

  std::cerr << "[acceptance] compare" << std::endl;
  e->rows = compare({std::begin(kAllArchs), std::end(kAllArchs)}, e->cfg, e->split, [](ArchId a, const EpochRecord& r) {
    std::cerr << "  " << to_string(a) << " epoch " << r.epoch << " val_acc " << r.val_acc << std::endl;
  });
  // The custom_cnn row is the single-architecture training run.
  for (auto& r : e->rows)
    if (r.arch == ArchId::custom_cnn) e->custom = &r;
  e->custom_eval = evaluate(e->custom->model, e->split.test);
  e->seconds = seconds_since(t0);
  return *e;
}

// -- criteria --------------------------------------------------------------------------

Verdict log_identity() {
  Verdict v;
  const auto t0 = Clock::now();
  // Smooth dark blob on white.
  const int n = 64;
  Image blob(n, n, 1.0);
  const double c = (n - 1) / 2.0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      blob.at(x, y) = 1.0 - 0.8 * std::exp(-((x - c) * (x - c) + (y - c) * (y - c)) / (2 * 36.0));
  const FilterMap a = laplacian_of_gaussian(blob, 2.0, 8, BorderPolicy::replicate, LogPath::analytic);
  const FilterMap t = laplacian_of_gaussian(blob, 2.0, 8, BorderPolicy::replicate, LogPath::two_stage);
  double peak = 0, diff = 0;
  for (int y = 9; y < n - 9; ++y)
    for (int x = 9; x < n - 9; ++x) {
      peak = std::max(peak, std::abs(a.at(x, y)));
      diff = std::max(diff, std::abs(a.at(x, y) - t.at(x, y)));
    }
  v.check(diff / peak < 0.05, "analytic vs two-stage LoG within 5% of peak");
  v.note("LoG paths differ by " + fmt("%.3g", diff / peak) + " of peak");

  // (I * G) * L == I * (G * L) with zero borders, on interior pixels.
  Rng rng(3);
  Image img(40, 36);
  for (auto& p : img.values()) p = rng.uniform();
  const Kernel g = gaussian_kernel(2.0, 8), l = log_kernel(1.0, 3);
  const auto gw = std::vector<double>(g.weights().begin(), g.weights().end());
  const auto lw = std::vector<double>(l.weights().begin(), l.weights().end());
  const Kernel gl(11, oracle::full_kernel(gw, 8, lw, 3));
  const FilterMap two = convolve(convolve(img, g, BorderPolicy::zero), l, BorderPolicy::zero);
  const FilterMap one = convolve(img, gl, BorderPolicy::zero);
  double worst = 0;
  for (int y = 11; y < 36 - 11; ++y)
    for (int x = 11; x < 40 - 11; ++x) worst = std::max(worst, std::abs(two.at(x, y) - one.at(x, y)));
  v.check(worst <= 1e-6, "associativity within 1e-6");
  v.note("associativity error " + fmt("%.2g", worst));

  const double s = seconds_since(t0);
  v.check(s < 10, "runtime under 10 s");
  v.note(fmt("%.2f s", s));
  return v;
}

Verdict gradient_suite() {
  Verdict v;
  const auto t0 = Clock::now();
  double worst_ratio = 0;
  std::size_t skipped = 0, checked = 0;
  auto record = [&](const gradsuite::Outcome& o) {
    v.check(o.trials >= 20, o.name + " ran 20 trials");
    v.check(o.pass(), o.name + " worst relative error " + fmt("%.3g", o.worst) + " at " + o.worst_entry +
                          " (limit " + fmt("%.0e", o.tolerance) + ", skipped " + std::to_string(o.skipped) + ")");
    worst_ratio = std::max(worst_ratio, o.worst / o.tolerance);
    skipped += o.skipped;
    checked += o.checked;
  };
  const auto cases = gradsuite::cases();
  for (const auto& c : cases) record(gradsuite::run(c, 20));
  record(gradsuite::run_sigmoid_gate(20));
  const double s = seconds_since(t0);
  v.check(s < 60, "runtime under 60 s");
  v.note(std::to_string(cases.size() + 1) + " layer kinds x 20 trials, " + std::to_string(checked) +
         " entries, worst error/limit " + fmt("%.2g", worst_ratio) + ", kink skips " + std::to_string(skipped) +
         ", " + fmt("%.1f s", s));
  return v;
}

Verdict kernel_properties() {
  Verdict v;
  double gsum = 0, lsum = 0;
  bool symmetric = true;
  for (double sigma : {0.5, 1.0, 2.0, 3.0})
    for (int r : {6, 8, 11}) {
      const Kernel g = gaussian_kernel(sigma, r);
      gsum = std::max(gsum, std::abs(g.sum() - 1.0));
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const double w = g.at(dx, dy);
          symmetric = symmetric && w == g.at(-dx, dy) && w == g.at(dx, -dy) && w == g.at(-dx, -dy) &&
                      w == g.at(dy, dx) && w == g.at(-dy, dx) && w == g.at(dy, -dx) && w == g.at(-dy, -dx);
        }
      lsum = std::max(lsum, std::abs(log_kernel(sigma, r).sum()));
    }
  v.check(gsum <= 1e-9, "Gaussian sums to 1 within 1e-9");
  v.check(symmetric, "Gaussian 8-fold symmetry exact");
  v.check(lsum <= 1e-12, "LoG sums to 0 within 1e-12");

  double flat = 0;
  for (auto border : {BorderPolicy::replicate, BorderPolicy::reflect})
    for (auto path : {LogPath::analytic, LogPath::two_stage}) {
      const FilterMap m = laplacian_of_gaussian(Image(48, 40, 0.61), 2.0, 8, border, path);
      for (double x : m.values()) flat = std::max(flat, std::abs(x));
    }
  const FilterMap z = convolve(Image(48, 40, 0.61), log_kernel(2.0, 8), BorderPolicy::zero);
  for (int y = 8; y < 32; ++y)
    for (int x = 8; x < 40; ++x) flat = std::max(flat, std::abs(z.at(x, y)));
  v.check(flat <= 1e-9, "constant image LoG response within 1e-9");
  v.note("|sum G - 1| " + fmt("%.1e", gsum) + ", |sum LoG| " + fmt("%.1e", lsum) + ", flat response " +
         fmt("%.1e", flat));
  return v;
}

Verdict augmentation_arithmetic() {
  Verdict v;
  std::vector<AugmentInput> in;
  for (auto& it : synth_generate(SynthConfig{})) in.push_back({std::move(it.image), it.label});
  v.check(in.size() == 240, "240 inputs");
  const auto out = augment_dataset(in, AugmentConfig{});
  v.check(out.size() == 720, "720 outputs");
  bool flips = true, identity = true;
  for (const auto& a : in) {
    flips = flips && hflip(hflip(a.image)) == a.image;
    identity = identity && shear(a.image, 0.0) == a.image;
  }
  v.check(flips, "hflip(hflip(x)) == x bit for bit");
  v.check(identity, "shear(x, 0) == x bit for bit");
  v.note(std::to_string(in.size()) + " -> " + std::to_string(out.size()) + ", checked on all inputs");
  return v;
}

Verdict split_arithmetic() {
  Verdict v;
  auto sizes = [](const DatasetSplit& s) {
    return std::to_string(s.train.size()) + "/" + std::to_string(s.validation.size()) + "/" +
           std::to_string(s.test.size());
  };
  auto stratified = [](const DatasetSplit& s, const std::vector<LabeledItem>& all) {
    double worst = 0;
    for (Label l : {Label::control, Label::patient}) {
      const double share =
          static_cast<double>(std::count_if(all.begin(), all.end(), [l](const auto& i) { return i.label == l; })) /
          static_cast<double>(all.size());
      for (const auto* part : {&s.train, &s.validation, &s.test}) {
        const auto n = std::count_if(part->begin(), part->end(), [l](const auto& i) { return i.label == l; });
        worst = std::max(worst, std::abs(static_cast<double>(n) - share * static_cast<double>(part->size())));
      }
    }
    return worst;
  };
  auto overlap = [](const DatasetSplit& s) {
    std::map<std::string, std::set<int>> where;
    const std::vector<LabeledItem>* parts[] = {&s.train, &s.validation, &s.test};
    for (int p = 0; p < 3; ++p)
      for (const auto& it : *parts[p]) where[it.source_id].insert(p);
    std::size_t shared = 0;
    for (const auto& [id, ps] : where) shared += ps.size() > 1;
    return shared;
  };

  std::vector<LabeledItem> raw = synth_generate(SynthConfig{});
  for (auto& it : raw) it.image = Image();  // the split only reads labels and ids
  const DatasetSplit a = stratified_split(raw, {}, 11, true);
  v.check(sizes(a) == "192/24/24", "240 -> 192/24/24 (got " + sizes(a) + ")");

  const std::vector<LabeledItem> aug = augment_items(synth_generate(SynthConfig{}), AugmentConfig{});
  const DatasetSplit mixed = stratified_split(aug, {}, 11, false);
  const DatasetSplit lf = stratified_split(aug, {}, 11, true);
  v.check(sizes(mixed) == "576/72/72", "720 -> 576/72/72 after augmentation (got " + sizes(mixed) + ")");
  v.check(sizes(lf) == "576/72/72", "720 -> 576/72/72 leak-free (got " + sizes(lf) + ")");
  v.check(overlap(lf) == 0, "leak-free splits share no source_id");
  const double worst = std::max({stratified(a, raw), stratified(mixed, aug), stratified(lf, aug)});
  v.check(worst <= 1.0 + 1e-9, "per-split class counts within 1 of proportional");
  v.note("worst stratification deviation " + fmt("%.2f", worst) + " items; ids shared across splits in the "
         "augment-then-split mode: " + std::to_string(overlap(mixed)));
  return v;
}

Verdict end_to_end_task() {
  Verdict v;
  const EndToEnd& e = end_to_end();
  v.check(e.centroid >= 0.85, "nearest-centroid oracle >= 0.85 (got " + fmt("%.4f", e.centroid) + ")");
  const double acc = e.custom_eval.metrics.accuracy;
  v.check(acc >= 0.90, "custom_cnn test accuracy >= 0.90 (got " + fmt("%.4f", acc) + ")");
  v.check(e.custom->history.records.size() <= 60, "custom_cnn within 60 epochs");
  v.check(e.rows.size() == 3, "compare returned three rows");
  std::string table;
  for (const auto& r : e.rows) {
    v.check(r.test_metrics.accuracy >= 0.75,
            std::string(to_string(r.arch)) + " >= 0.75 (got " + fmt("%.4f", r.test_metrics.accuracy) + ")");
    table += std::string(table.empty() ? "" : ", ") + std::string(to_string(r.arch)) + " " +
             fmt("%.4f", r.test_metrics.accuracy) + " (best epoch " + std::to_string(r.history.best_epoch) + ")";
  }
  v.check(e.seconds < 15 * 60, "runtime under 15 minutes");
  v.note("centroid " + fmt("%.4f", e.centroid) + ", custom_cnn " + fmt("%.4f", acc) + " at epoch " +
         std::to_string(e.custom->history.best_epoch) + "/" + std::to_string(e.custom->history.records.size()) +
         "; compare: " + table + "; " + fmt("%.0f s", e.seconds));
  return v;
}

Verdict determinism() {
  Verdict v;
  testing::TempDir dir("accept_det");
  SynthConfig s;
  s.canvas_w = s.canvas_h = 64;
  s.to_kv().write(dir / "synth.cfg");
  testing::small_config(ArchId::custom_cnn, 3).to_kv().write(dir / "train.cfg");
  std::ostringstream out, err;
  const std::string data = (dir / "data").string();
  v.check(run_cli({"scz", "synth", "--out", data, "--per-class", "20", "--config", (dir / "synth.cfg").string()}, out,
                  err) == kExitOk,
          "synth");
  for (ArchId arch : kAllArchs) {
    const std::string name(to_string(arch));
    for (const char* run : {"a", "b"}) {
      const int code = run_cli({"scz", "train", "--deterministic", "--seed", "17", "--arch", name, "--data", data,
                                "--config", (dir / "train.cfg").string(), "--out", (dir / (name + run)).string()},
                               out, err);
      v.check(code == kExitOk, name + " run " + run + " exit code " + std::to_string(code) + ": " + err.str());
    }
    v.check(read_file_bytes(dir / (name + "a") / "model.sczm") == read_file_bytes(dir / (name + "b") / "model.sczm"),
            name + " model files identical");
    v.check(read_file_bytes(dir / (name + "a") / "metrics.txt") == read_file_bytes(dir / (name + "b") / "metrics.txt"),
            name + " metrics identical");
    v.check(read_file_bytes(dir / (name + "a") / "history.tsv") == read_file_bytes(dir / (name + "b") / "history.tsv"),
            name + " histories identical");
  }
  v.note("two `scz train` runs per architecture (64x64 task, 40 sources, 3 epochs), byte-compared");
  return v;
}

Verdict metrics_consistency() {
  Verdict v;
  const EndToEnd& e = end_to_end();
  const Metrics& m = e.custom_eval.metrics;
  const Confusion& c = m.confusion;
  v.check(m == e.custom->test_metrics, "evaluation matches the compare row");
  v.check(c.total() == e.split.test.size(), "confusion sums to test size");
  v.check(m.accuracy == static_cast<double>(c.tn + c.tp) / static_cast<double>(c.total()),
          "accuracy equals (TN+TP)/total exactly");
  std::stringstream log;
  write_prediction_log(e.custom_eval.log, log);
  const auto back = read_prediction_log(log);
  v.check(back.size() == e.split.test.size(), "one log line per test item");
  const Metrics from_log = metrics_from_confusion(confusion_from_log(back));
  v.check(from_log == m, "metrics recomputed from the written log match");
  std::istringstream text(format_metrics(m));
  std::string line, record;
  while (std::getline(text, line))
    if (line.rfind("metrics\t", 0) == 0) record = line;
  v.check(parse_metrics_line(record) == m, "machine-readable metrics record matches");
  for (const auto& r : e.rows) {
    const Confusion& rc = r.test_metrics.confusion;
    v.check(rc.total() == e.split.test.size(), std::string(to_string(r.arch)) + " confusion sums to test size");
    v.check(r.test_metrics.accuracy == static_cast<double>(rc.tn + rc.tp) / static_cast<double>(rc.total()),
            std::string(to_string(r.arch)) + " accuracy from confusion");
  }
  v.note("custom_cnn confusion [[" + std::to_string(c.tn) + "," + std::to_string(c.fp) + "],[" + std::to_string(c.fn) +
         "," + std::to_string(c.tp) + "]] over " + std::to_string(c.total()) + " test images");
  return v;
}

// The trained end-to-end model, saved once for the serialization and service criteria.
const fs::path& saved_model() {
  static testing::TempDir dir("accept_model");
  static const fs::path path = [] {
    save_model(end_to_end().custom->model, dir / "custom_cnn.sczm");
    return dir / "custom_cnn.sczm";
  }();
  return path;
}

Verdict serialization() {
  Verdict v;
  const EndToEnd& e = end_to_end();
  const Model& m = e.custom->model;
  const LoadedModel back = load_model(saved_model());
  const Image& probe = e.split.test.front().image;
  v.check(predict(back.model, probe).p_patient == predict(m, probe).p_patient, "probe prediction bit-identical");
  bool all = true;
  for (const auto& it : e.split.test) all = all && predict(back.model, it.image).p_patient == predict(m, it.image).p_patient;
  v.check(all, "every test prediction bit-identical");
  v.check(back.model.weights() == m.weights(), "weights identical");

  const auto bytes = read_file_bytes(saved_model());
  v.check(back.checksum == oracle::crc32(std::span(bytes).first(bytes.size() - 4)), "stored CRC matches the oracle");
  std::size_t rejected = 0, tried = 0;
  for (std::size_t pos : {std::size_t{5}, bytes.size() / 4, bytes.size() / 2, bytes.size() - 9, bytes.size() - 1}) {
    auto bad = bytes;
    bad[pos] ^= 0x04;
    ++tried;
    try {
      decode_model(bad);
    } catch (const Error& err) {
      rejected += err.code() == Errc::crc_mismatch;
    }
  }
  v.check(rejected == tried, "single-bit corruptions rejected with crc_mismatch");
  v.note(std::to_string(bytes.size()) + " byte file, checksum " + checksum_hex(back.checksum) + ", " +
         std::to_string(rejected) + "/" + std::to_string(tried) + " corruptions rejected");
  return v;
}

Verdict service_contract() {
  Verdict v;
  const EndToEnd& e = end_to_end();
  ServiceConfig cfg;
  cfg.port = 0;
  cfg.model_path = saved_model();
  Service svc(cfg);
  const int port = svc.bind();
  std::thread server([&] { svc.listen(); });
  httplib::Client c("127.0.0.1", port);
  c.set_read_timeout(30, 0);

  const auto health = c.Get("/api/v1/health");
  v.check(health && health->status == 200, "health 200");
  if (health && health->status == 200) {
    const json h = json::parse(health->body);
    v.check(h["status"] == "ok", "health status ok");
    v.check(h["model_checksum"] == checksum_hex(load_model(saved_model()).checksum), "health checksum is the file CRC");
    v.check(h["uptime_seconds"].get<double>() < 5.0, "fresh uptime under 5 s");
  }

  // Raw pages of held-out sources.
  std::map<std::string, const LabeledItem*> raw;
  for (const auto& it : e.raw) raw[it.source_id] = &it;
  std::set<std::string> held_out;
  for (const auto& it : e.split.test) held_out.insert(it.source_id);

  auto post = [&](const std::string& bytes, const std::string& field = "image") {
    return c.Post("/api/v1/predict", httplib::MultipartFormDataItems{{field, bytes, "page.png", "image/png"}});
  };
  auto code_of = [](const httplib::Result& r) {
    return r ? json::parse(r->body)["error"]["code"].get<std::string>() : std::string("no response");
  };

  testing::TempDir dir("accept_svc");
  std::size_t agreed = 0, served = 0, correct = 0;
  bool in_range = true, consistent = true;
  for (const auto& id : held_out) {
    const LabeledItem& it = *raw.at(id);
    const auto png = encode_png(it.image);
    const auto r = post(std::string(png.begin(), png.end()));
    if (!r || r->status != 200) continue;
    ++served;
    const json j = json::parse(r->body);
    const double p = j["probability_patient"].get<double>();
    in_range = in_range && p >= 0.0 && p <= 1.0;
    consistent = consistent && j["label"] == (p >= 0.5 ? "patient" : "control");
    correct += j["label"] == std::string(to_string(it.label));

    const fs::path file = dir / "page.png";
    write_file_bytes(file, png);
    std::ostringstream out, err;
    if (run_cli({"scz", "predict", "--json", "--model", saved_model().string(), file.string()}, out, err) == kExitOk)
      agreed += json::parse(out.str())["probability_patient"].get<double>() == p;
  }
  v.check(served == held_out.size(), "every held-out page served with 200");
  v.check(in_range, "probabilities in [0, 1]");
  v.check(consistent, "labels follow the 0.5 rule");
  v.check(agreed == held_out.size(), "CLI and service probabilities bit-equal");

  const auto blank = encode_png(Image(200, 120, 1.0));
  const auto r400 = post(std::string(blank.begin(), blank.end()));
  v.check(r400 && r400->status == 400 && code_of(r400) == "no_ink", "blank page -> 400 no_ink");
  const auto rjunk = post("GIF89a not really");
  v.check(rjunk && rjunk->status == 400 && code_of(rjunk) == "undecodable_image", "junk -> 400 undecodable_image");
  const auto r413 = post(std::string(6u << 20, '\xff'));
  v.check(r413 && r413->status == 413 && code_of(r413) == "payload_too_large", "6 MiB -> 413 payload_too_large");
  const auto r415 = c.Post("/api/v1/predict", std::string(blank.begin(), blank.end()), "image/png");
  v.check(r415 && r415->status == 415 && code_of(r415) == "unsupported_media_type", "raw body -> 415");
  const auto r422 = post(std::string(blank.begin(), blank.end()), "file");
  v.check(r422 && r422->status == 422 && code_of(r422) == "missing_field", "no image field -> 422");
  const auto pre = c.Options("/api/v1/predict");
  v.check(pre && pre->status == 204 && pre->get_header_value("Access-Control-Allow-Origin") == "*",
          "CORS preflight 204");

  svc.stop();
  server.join();
  v.note(std::to_string(served) + " held-out pages served, " + std::to_string(correct) + " labeled correctly, " +
         std::to_string(agreed) + " bit-equal to the CLI; error paths 400/400/413/415/422 checked");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, Verdict (*)()>> criteria = {
      {"log_identity_and_associativity", log_identity},
      {"gradient_suite", gradient_suite},
      {"kernel_properties", kernel_properties},
      {"augmentation_arithmetic", augmentation_arithmetic},
      {"split_arithmetic", split_arithmetic},
      {"end_to_end_synthetic_task", end_to_end_task},
      {"determinism", determinism},
      {"metrics_self_consistency", metrics_consistency},
      {"serialization", serialization},
      {"service_contract", service_contract},
  };
  std::vector<std::string> filters(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!filters.empty() &&
        std::none_of(filters.begin(), filters.end(), [&](const std::string& f) { return name.find(f) != std::string::npos; }))
      continue;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v.check(false, std::string("exception: ") + e.what());
    }
    failed += !v.pass();
    std::cout << (v.pass() ? "PASS " : "FAIL ") << name << " -- " << v.detail() << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
