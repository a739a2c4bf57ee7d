#pragma once

#include <string_view>

namespace scz {

// control is the negative class, patient the positive one.
enum class Label : int { control = 0, patient = 1 };

inline constexpr int kClassCount = 2;

std::string_view to_string(Label label);
Label parse_label(std::string_view name);
Label label_from_index(int index);

}  // namespace scz
