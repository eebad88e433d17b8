#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace adaptlm {

using TokenId = std::int32_t;

enum class SpecialToken : std::uint8_t { doc_separator = 0, bos = 1, eos = 2, pad = 3 };

/// Byte-level BPE vocabulary.
///
/// Id layout is dense: 0..255 are raw bytes, 256..259 the special tokens
/// (document separator, begin/end of sequence, pad), and every id from 260 on
/// is produced by exactly one merge, in training order. Specials never take
/// part in merges and decode to nothing.
class BpeVocab {
 public:
  struct Merge {
    TokenId left;
    TokenId right;
    friend bool operator==(const Merge&, const Merge&) = default;
  };

  static constexpr TokenId kByteTokens = 256;
  static constexpr TokenId kSpecialCount = 4;
  static constexpr TokenId kFirstMergeId = kByteTokens + kSpecialCount;
  static constexpr std::array<std::string_view, kSpecialCount> kSpecialNames{
      "<|doc|>", "<s>", "</s>", "<pad>"};

  /// Byte-level identity vocabulary (no merges).
  BpeVocab();
  explicit BpeVocab(std::vector<Merge> merges);

  std::size_t size() const noexcept { return token_bytes_.size(); }
  std::span<const Merge> merges() const noexcept { return merges_; }

  static constexpr TokenId special(SpecialToken which) noexcept {
    return kByteTokens + static_cast<TokenId>(which);
  }
  static constexpr bool is_special(TokenId id) noexcept {
    return id >= kByteTokens && id < kFirstMergeId;
  }

  /// Bytes a token expands to; empty for specials.
  const std::string& token_bytes(TokenId id) const;
  /// Lowest id whose expansion equals `bytes` (distinct merge paths can collide).
  std::optional<TokenId> find(std::string_view bytes) const;

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  std::uint64_t fingerprint() const noexcept { return fingerprint_; }
  std::string fingerprint_hex() const;

  std::string to_text() const;
  static BpeVocab from_text(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static BpeVocab load(const std::filesystem::path& path);

 private:
  static std::uint64_t pair_key(TokenId a, TokenId b) noexcept {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
  }

  std::vector<Merge> merges_;
  std::vector<std::string> token_bytes_;
  std::unordered_map<std::string, TokenId> bytes_to_id_;
  std::unordered_map<std::uint64_t, std::uint32_t> merge_rank_;
  std::uint64_t fingerprint_ = 0;
};

/// Greedy BPE training: repeatedly merge the most frequent adjacent pair
/// (ties go to the lexicographically smaller id pair) until `target_vocab`
/// ids exist or no pair occurs at least twice. Merges never span documents.
BpeVocab train_bpe(std::span<const std::string> documents, std::size_t target_vocab);

}  // namespace adaptlm
