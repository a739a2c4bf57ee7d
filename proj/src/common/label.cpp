#include "scz/label.hpp"

#include <string>

#include "scz/error.hpp"

namespace scz {

std::string_view to_string(Label label) { return label == Label::patient ? "patient" : "control"; }

Label parse_label(std::string_view name) {
  if (name == "control" || name == "0") return Label::control;
  if (name == "patient" || name == "1") return Label::patient;
  throw Error(Errc::bad_label, "unknown label '" + std::string(name) + "'");
}

Label label_from_index(int index) {
  if (index == 0) return Label::control;
  if (index == 1) return Label::patient;
  throw Error(Errc::bad_label, "class index " + std::to_string(index) + " is not 0 or 1");
}

}  // namespace scz
