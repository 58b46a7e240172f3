#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace trajlens {

using TokenId = std::int32_t;

/// Pluggable tokenizer. Implementations must be deterministic and map the
/// empty string to no tokens. `pieces` returns the surface text of each
/// token, aligned with `encode`, so snippets can be rendered back to text.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<TokenId> encode(std::string_view text) const = 0;
  virtual std::vector<std::string> pieces(std::string_view text) const = 0;
  virtual std::size_t token_count(std::string_view text) const { return encode(text).size(); }
  /// Joins pieces back into display text.
  virtual std::string join(const std::vector<std::string>& pieces, std::size_t begin,
                           std::size_t end) const;
};

/// Bundled fallback: whitespace-delimited words are tokens; a word longer
/// than `max_piece_bytes` falls back to byte chunks of that length. Ids are a
/// stable hash of the piece, offset past the 256 byte ids.
class WhitespaceTokenizer final : public Tokenizer {
 public:
  explicit WhitespaceTokenizer(std::size_t max_piece_bytes = 32) : max_piece_bytes_(max_piece_bytes) {}

  std::vector<TokenId> encode(std::string_view text) const override;
  std::vector<std::string> pieces(std::string_view text) const override;
  std::size_t token_count(std::string_view text) const override;

  static TokenId piece_id(std::string_view piece);

 private:
  template <typename Fn>
  void for_each_piece(std::string_view text, Fn&& fn) const;

  std::size_t max_piece_bytes_;
};

}  // namespace trajlens
