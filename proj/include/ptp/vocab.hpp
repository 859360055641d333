#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace ptp {

/// Token-string <-> id map with fixed reserved ids. Ids are dense in [0, V).
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kMask = 1;
  static constexpr int kCls = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumReserved = 4;

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  explicit Vocabulary(const std::vector<std::string>& content_words) {
    tokens_ = {"[PAD]", "[MASK]", "[CLS]", "[UNK]"};
    tokens_.insert(tokens_.end(), content_words.begin(), content_words.end());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      auto [it, inserted] = ids_.emplace(tokens_[i], static_cast<int>(i));
      if (!inserted) throw std::invalid_argument("Vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }

  std::size_t size() const { return tokens_.size(); }

  /// Id for a token, [UNK] if absent.
  int id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const { return ids_.count(token) > 0; }

  const std::string& token_of(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw std::out_of_range("Vocabulary: id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }

  static bool is_reserved(int id) { return id >= 0 && id < kNumReserved; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace ptp
