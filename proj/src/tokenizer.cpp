#include "trajlens/tokenizer.hpp"
#include "trajlens/hashing.hpp"

#include <cctype>

namespace trajlens {

std::string Tokenizer::join(const std::vector<std::string>& pieces, std::size_t begin,
                            std::size_t end) const {
  std::string out;
  for (std::size_t i = begin; i < end && i < pieces.size(); ++i) {
    if (i > begin) out.push_back(' ');
    out += pieces[i];
  }
  return out;
}

TokenId WhitespaceTokenizer::piece_id(std::string_view piece) {
  if (piece.size() == 1) return static_cast<unsigned char>(piece[0]);
  return static_cast<TokenId>(256 + fnv1a64(piece) % 0x7fff0000ULL);
}

template <typename Fn>
void WhitespaceTokenizer::for_each_piece(std::string_view text, Fn&& fn) const {
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    for (std::size_t p = i; p < j; p += max_piece_bytes_)
      fn(text.substr(p, std::min(max_piece_bytes_, j - p)));
    i = j;
  }
}

std::vector<TokenId> WhitespaceTokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  for_each_piece(text, [&](std::string_view p) { out.push_back(piece_id(p)); });
  return out;
}

std::vector<std::string> WhitespaceTokenizer::pieces(std::string_view text) const {
  std::vector<std::string> out;
  for_each_piece(text, [&](std::string_view p) { out.emplace_back(p); });
  return out;
}

std::size_t WhitespaceTokenizer::token_count(std::string_view text) const {
  std::size_t n = 0;
  for_each_piece(text, [&](std::string_view) { ++n; });
  return n;
}

}  // namespace trajlens
