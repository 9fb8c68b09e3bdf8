#pragma once

// Closed 40-token vocabulary shared by prompts and answers.

#include <array>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pami/core.hpp"

namespace pami {

using Token = int;
using TokenSeq = std::vector<Token>;

namespace tok {
inline constexpr Token kPad = 0;
inline constexpr Token kBos = 1;
inline constexpr Token kEos = 2;
inline constexpr Token kUnk = 3;
inline constexpr Token kDoes = 4;
inline constexpr Token kAppear = 5;
inline constexpr Token kBefore = 6;
inline constexpr Token kIs = 7;
inline constexpr Token kPresent = 8;
inline constexpr Token kWhat = 9;
inline constexpr Token kAttribute = 10;
inline constexpr Token kHas = 11;
inline constexpr Token kQuestion = 12;
inline constexpr Token kYes = 13;
inline constexpr Token kNo = 14;
inline constexpr Token kRed = 15;
inline constexpr Token kBlue = 16;
inline constexpr Token kBig = 17;
inline constexpr Token kSmall = 18;
inline constexpr Token kSymbol0 = 19;
inline constexpr int kMaxSymbols = 8;
inline constexpr Token kReserved0 = kSymbol0 + kMaxSymbols;
}  // namespace tok

inline constexpr int kVocabSize = 40;
inline constexpr int kMaxAttributes = 4;

inline Token symbol_token(int symbol) {
  if (symbol < 0 || symbol >= tok::kMaxSymbols) {
    throw InputError("symbol id out of vocabulary range: " + std::to_string(symbol));
  }
  return tok::kSymbol0 + symbol;
}

inline bool is_symbol_token(Token t) {
  return t >= tok::kSymbol0 && t < tok::kSymbol0 + tok::kMaxSymbols;
}

inline int token_symbol(Token t) { return t - tok::kSymbol0; }

/// Attributes render as two tokens: colour then size.
inline std::pair<Token, Token> attribute_tokens(int attribute) {
  if (attribute < 0 || attribute >= kMaxAttributes) {
    throw InputError("attribute id out of vocabulary range: " + std::to_string(attribute));
  }
  return {attribute / 2 == 0 ? tok::kRed : tok::kBlue, attribute % 2 == 0 ? tok::kBig : tok::kSmall};
}

inline std::string token_name(Token t) {
  static const std::array<std::string_view, 19> fixed = {
      "<pad>", "<bos>", "<eos>", "<unk>", "does", "appear", "before", "is", "present", "what",
      "attribute", "has", "?", "yes", "no", "red", "blue", "big", "small"};
  if (t < 0 || t >= kVocabSize) {
    throw InputError("token id out of vocabulary: " + std::to_string(t));
  }
  if (t < static_cast<Token>(fixed.size())) {
    return std::string(fixed[static_cast<std::size_t>(t)]);
  }
  if (is_symbol_token(t)) {
    return "sym" + std::to_string(token_symbol(t));
  }
  return "reserved" + std::to_string(t - tok::kReserved0);
}

inline std::string render_tokens(const TokenSeq& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i > 0) {
      out += ' ';
    }
    out += token_name(seq[i]);
  }
  return out;
}

}  // namespace pami
