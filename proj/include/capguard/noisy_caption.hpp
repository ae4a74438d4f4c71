#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "capguard/tokenization.hpp"

namespace capguard {

// The four hallucination families.
enum class Category { Color, Spatial, Quantity, Feature };

// "color" | "spatial" | "quantity" | "feature"
std::string_view to_string(Category c);
// Throws ConfigError for an unknown name.
Category parse_category(std::string_view name);

// A caption with ground-truth hallucination labels over one tokenization of
// its (possibly corrupted) text.
struct NoisyCaption {
  Caption caption;
  std::string clean_text;
  std::string tokenizer;
  std::vector<bool> noise_mask;
  std::vector<std::optional<Category>> categories;
  std::uint64_t injection_seed = 0;

  bool operator==(const NoisyCaption&) const = default;
};

}  // namespace capguard
