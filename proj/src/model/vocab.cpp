#include "cg3d/model/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "cg3d/util/error.hpp"

namespace cg3d {

namespace {
constexpr std::string_view kReservedNames[] = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

Vocab::Vocab() {
  for (int i = 0; i < kReserved; ++i) tokens_.emplace(std::string(kReservedNames[i]), i);
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

Vocab Vocab::build(std::span<const std::string> texts) {
  std::set<std::string> words;
  for (const auto& t : texts)
    for (auto& w : split_words(t)) words.insert(std::move(w));
  Vocab v;
  int next = kReserved;
  for (const auto& w : words)
    if (!v.tokens_.contains(w)) v.tokens_.emplace(w, next++);
  return v;
}

int Vocab::index(std::string_view word) const {
  auto it = tokens_.find(word);
  return it == tokens_.end() ? kUnk : it->second;
}

nlohmann::json Vocab::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [w, i] : tokens_) j[w] = i;
  return j;
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("vocab: expected a JSON object");
  Vocab v;
  v.tokens_.clear();
  std::vector<bool> seen(j.size(), false);
  for (const auto& [w, idx] : j.items()) {
    if (!idx.is_number_integer()) throw ConfigError("vocab: index of \"" + w + "\" is not an integer");
    const int i = idx.get<int>();
    if (i < 0 || static_cast<std::size_t>(i) >= j.size() || seen[static_cast<std::size_t>(i)])
      throw ConfigError("vocab: indices must be a permutation of 0..N-1");
    seen[static_cast<std::size_t>(i)] = true;
    v.tokens_.emplace(w, i);
  }
  for (int i = 0; i < kReserved; ++i)
    if (v.index(kReservedNames[i]) != i) throw ConfigError("vocab: reserved token missing or moved");
  return v;
}

TokenSeq tokenize(std::string_view text, const Vocab& vocab, int length) {
  if (length < 2) throw ConfigError("tokenize: length must be >= 2");
  const auto words = split_words(text);
  const std::size_t keep = std::min(words.size(), static_cast<std::size_t>(length - 2));
  TokenSeq seq;
  seq.indices.assign(static_cast<std::size_t>(length), Vocab::kPad);
  seq.indices[0] = Vocab::kBos;
  for (std::size_t i = 0; i < keep; ++i) seq.indices[i + 1] = vocab.index(words[i]);
  seq.eos_pos = static_cast<int>(keep + 1);
  seq.indices[keep + 1] = Vocab::kEos;
  return seq;
}

}  // namespace cg3d
