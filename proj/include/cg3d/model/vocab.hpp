#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace cg3d {

class Vocab {
 public:
  static constexpr int kPad = 0, kBos = 1, kEos = 2, kUnk = 3;
  static constexpr int kReserved = 4;

  Vocab();

  // Lowercased whitespace tokens of `texts`, assigned indices in sorted order
  // after the reserved entries.
  static Vocab build(std::span<const std::string> texts);

  int index(std::string_view word) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::map<std::string, int, std::less<>>& tokens() const noexcept { return tokens_; }

  // token -> index map, reserved entries included.
  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);

  friend bool operator==(const Vocab&, const Vocab&) = default;

 private:
  std::map<std::string, int, std::less<>> tokens_;
};

struct TokenSeq {
  std::vector<int> indices;  // BOS, words..., EOS, PAD...
  int eos_pos = 1;
};

std::vector<std::string> split_words(std::string_view text);

// Fixed-length encoding. Overlong input is truncated so EOS sits at
// length - 1; unknown words map to UNK.
TokenSeq tokenize(std::string_view text, const Vocab& vocab, int length = 16);

}  // namespace cg3d
