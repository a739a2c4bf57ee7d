#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "scz/error.hpp"
#include "scz/harness.hpp"

namespace scz {
namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

constexpr std::size_t kEvalBatch = 32;

}  // namespace

Metrics metrics_from_confusion(const Confusion& c) {
  Metrics m;
  m.confusion = c;
  m.accuracy = ratio(c.tn + c.tp, c.total());
  m.precision_control = ratio(c.tn, c.tn + c.fn);
  m.recall_control = ratio(c.tn, c.tn + c.fp);
  m.precision_patient = ratio(c.tp, c.tp + c.fp);
  m.recall_patient = ratio(c.tp, c.tp + c.fn);
  return m;
}

std::string format_metrics(const Metrics& m) {
  const Confusion& c = m.confusion;
  char buf[1024];
  std::snprintf(buf, sizeof buf,
                "accuracy: %.6f (%zu/%zu)\n"
                "confusion (rows = truth, cols = predicted):\n"
                "             control  patient\n"
                "  control    %7zu  %7zu\n"
                "  patient    %7zu  %7zu\n"
                "control precision %.6f recall %.6f\n"
                "patient precision %.6f recall %.6f\n"
                "metrics\ttn=%zu\tfp=%zu\tfn=%zu\ttp=%zu\taccuracy=%.17g\n",
                m.accuracy, c.tn + c.tp, c.total(), c.tn, c.fp, c.fn, c.tp, m.precision_control, m.recall_control,
                m.precision_patient, m.recall_patient, c.tn, c.fp, c.fn, c.tp, m.accuracy);
  return buf;
}

Metrics parse_metrics_line(const std::string& line) {
  Confusion c;
  double accuracy = -1.0;
  if (std::sscanf(line.c_str(), "metrics\ttn=%zu\tfp=%zu\tfn=%zu\ttp=%zu\taccuracy=%lg", &c.tn, &c.fp, &c.fn, &c.tp,
                  &accuracy) != 5) {
    throw Error(Errc::bad_config, "not a metrics record: " + line);
  }
  Metrics m = metrics_from_confusion(c);
  m.accuracy = accuracy;
  return m;
}

Confusion confusion_from_log(const std::vector<ItemPrediction>& log) {
  Confusion c;
  for (const auto& p : log) {
    const bool truth = p.truth == Label::patient;
    const bool predicted = p.prediction.label == Label::patient;
    if (truth && predicted) ++c.tp;
    if (truth && !predicted) ++c.fn;
    if (!truth && predicted) ++c.fp;
    if (!truth && !predicted) ++c.tn;
  }
  return c;
}

Evaluation evaluate(const Model& model, const std::vector<LabeledItem>& items) {
  if (items.empty()) throw Error(Errc::empty_eval, "nothing to evaluate");
  Evaluation ev;
  for (std::size_t start = 0; start < items.size(); start += kEvalBatch) {
    const std::size_t end = std::min(items.size(), start + kEvalBatch);
    std::vector<const Image*> imgs;
    for (std::size_t i = start; i < end; ++i) imgs.push_back(&items[i].image);
    const auto preds = predict_batch(model, imgs);
    for (std::size_t i = start; i < end; ++i) {
      ev.log.push_back({items[i].source_id, items[i].provenance, items[i].label, preds[i - start]});
    }
  }
  ev.metrics = metrics_from_confusion(confusion_from_log(ev.log));
  return ev;
}

void write_prediction_log(const std::vector<ItemPrediction>& log, std::ostream& out) {
  out << "# source_id\tprovenance\ttruth\tpredicted\tp_patient\n";
  char buf[64];
  for (const auto& p : log) {
    std::snprintf(buf, sizeof buf, "%.17g", p.prediction.p_patient);
    out << p.source_id << '\t' << to_string(p.provenance) << '\t' << to_string(p.truth) << '\t'
        << to_string(p.prediction.label) << '\t' << buf << '\n';
  }
}

std::vector<ItemPrediction> read_prediction_log(std::istream& in) {
  std::vector<ItemPrediction> log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) f.push_back(field);
    if (f.size() != 5) throw Error(Errc::bad_config, "malformed prediction log line: " + line);
    ItemPrediction p;
    p.source_id = f[0];
    p.provenance = parse_provenance(f[1]);
    p.truth = parse_label(f[2]);
    p.prediction.label = parse_label(f[3]);
    p.prediction.p_patient = std::stod(f[4]);
    p.prediction.p_control = 1.0 - p.prediction.p_patient;
    log.push_back(std::move(p));
  }
  return log;
}

}  // namespace scz
