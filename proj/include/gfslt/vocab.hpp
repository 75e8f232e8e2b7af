#pragma once

#include <string>
#include <vector>

#include "gfslt/errors.hpp"

namespace gfslt {

// Token vocabulary. The five special tokens occupy the first five ids in a
// fixed order; PAD is always id 0.
struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kMask = 3;
  static constexpr int kCls = 4;
  static constexpr int kNumSpecials = 5;

  std::vector<std::string> tokens;

  int size() const { return static_cast<int>(tokens.size()); }

  bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }

  const std::string& text(int id) const {
    if (id < 0 || id >= size())
      throw IndexError("vocabulary: id " + std::to_string(id) + " out of range [0," +
                       std::to_string(size()) + ")");
    return tokens[static_cast<std::size_t>(id)];
  }

  int id_of(const std::string& tok) const {
    for (int i = 0; i < size(); ++i)
      if (tokens[static_cast<std::size_t>(i)] == tok) return i;
    return -1;
  }

  static Vocabulary build(int gesture_count) {
    Vocabulary v;
    v.tokens = {"<pad>", "<bos>", "<eos>", "<mask>", "<cls>"};
    for (int g = 0; g < gesture_count; ++g) {
      std::string name = "g";
      if (g < 10) name += "0";
      name += std::to_string(g);
      v.tokens.push_back(name);
    }
    return v;
  }
};

using TokenSequence = std::vector<int>;

}  // namespace gfslt
