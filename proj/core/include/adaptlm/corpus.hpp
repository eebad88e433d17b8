#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adaptlm/fraction.hpp"
#include "adaptlm/tokenizer.hpp"

namespace adaptlm {

struct ArticleRecord {
  std::string id;
  std::string title;
  std::string abstract_text;
  std::string body;
  std::vector<std::string> fields_of_study;
};

/// Maps record keys onto ArticleRecord fields, for corpora that do not use
/// the default key names.
struct SchemaMapping {
  std::string id = "id";
  std::string title = "title";
  std::string abstract_text = "abstract";
  std::string body = "body";
  std::string fields_of_study = "fields_of_study";
};

/// Keeps a record when any of its fields_of_study equals one of the labels.
class FieldFilter {
 public:
  explicit FieldFilter(std::vector<std::string> labels);
  bool matches(const ArticleRecord& record) const;
  const std::vector<std::string>& labels() const noexcept { return labels_; }

 private:
  std::vector<std::string> labels_;
};

struct LineError {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct ParseStats {
  std::size_t lines = 0;
  std::size_t kept = 0;
  std::size_t filtered_out = 0;
  std::size_t empty_body = 0;
  std::size_t duplicates = 0;
  std::size_t malformed = 0;
};

struct ParseResult {
  std::vector<ArticleRecord> records;
  ParseStats stats;
  std::vector<LineError> errors;
};

/// Parse line-delimited JSON records, keeping those that pass the filter and
/// have a non-empty body. Exact duplicates (by whitespace-normalized body)
/// keep their first occurrence. Malformed lines are reported, never fatal.
ParseResult parse_articles(std::istream& in, const FieldFilter& filter, const SchemaMapping& schema = {},
                           std::size_t workers = 1);
ParseResult parse_articles(const std::filesystem::path& path, const FieldFilter& filter,
                           const SchemaMapping& schema = {}, std::size_t workers = 1);

std::string normalize_whitespace(std::string_view text);

enum class ChunkSource : std::uint8_t { domain = 0, general = 1 };

struct TextChunk {
  std::string article_id;
  std::uint32_t seq_index = 0;
  ChunkSource source = ChunkSource::domain;
  std::vector<TokenId> token_ids;

  std::size_t length() const noexcept { return token_ids.size(); }
  /// Stable identity used for split hygiene and multiset checks.
  std::string key() const;
  friend bool operator==(const TextChunk&, const TextChunk&) = default;
};

/// Split encode(record.body) into consecutive non-overlapping windows.
std::vector<TextChunk> chunk_article(const ArticleRecord& record, const BpeVocab& vocab, std::size_t chunk_window,
                                     ChunkSource source = ChunkSource::domain);

/// Chunk many records; the output order is record order whatever the worker count.
std::vector<TextChunk> chunk_articles(std::span<const ArticleRecord> records, const BpeVocab& vocab,
                                      std::size_t chunk_window, ChunkSource source, std::size_t workers = 1);

struct ShardEntry {
  std::string file;
  std::size_t chunks = 0;
  friend bool operator==(const ShardEntry&, const ShardEntry&) = default;
};

/// Index over shard files. Paths in `shards` are relative to `directory`.
struct CorpusManifest {
  static constexpr int kFormatVersion = 1;
  static constexpr std::size_t kDefaultShardCapacity = std::size_t{1} << 16;

  std::vector<ShardEntry> shards;
  std::size_t domain_chunks = 0;
  std::size_t general_chunks = 0;
  std::size_t chunk_window = 0;
  std::uint64_t seed = 0;
  std::string tokenizer_fingerprint;
  std::filesystem::path directory;

  std::size_t total_chunks() const noexcept { return domain_chunks + general_chunks; }
  std::string to_text() const;
  static CorpusManifest from_text(std::string_view text, std::filesystem::path directory);
};

struct CorpusMeta {
  std::size_t chunk_window = 0;
  std::uint64_t seed = 0;
  std::string tokenizer_fingerprint;
};

/// Write `chunks` as `<name>-NNNNN.shard` files plus `<name>.manifest` under `dir`.
CorpusManifest write_corpus(const std::filesystem::path& dir, const std::string& name,
                            std::span<const TextChunk> chunks, const CorpusMeta& meta,
                            std::size_t shard_capacity = CorpusManifest::kDefaultShardCapacity);
CorpusManifest read_manifest(const std::filesystem::path& manifest_path);
/// Loads every chunk and checks that shard headers and counts agree with the manifest.
std::vector<TextChunk> read_chunks(const CorpusManifest& manifest);

std::vector<std::uint8_t> encode_shard(std::span<const TextChunk> chunks, const CorpusMeta& meta);
std::vector<TextChunk> decode_shard(std::span<const std::uint8_t> bytes, CorpusMeta* meta_out = nullptr);

struct SplitResult {
  std::vector<TextChunk> train;
  std::vector<TextChunk> validation;
};

/// Seeded holdout of floor(fraction * n) chunks; both sides keep input order.
SplitResult split_holdout(std::vector<TextChunk> chunks, Fraction holdout, std::uint64_t seed);

struct MixSpec {
  std::span<const TextChunk> domain;
  std::span<const TextChunk> general;
  Fraction general_fraction;
  std::uint64_t seed = 0;
};

struct MixResult {
  std::vector<TextChunk> chunks;
  std::size_t domain_count = 0;
  std::size_t general_count = 0;
};

/// All domain chunks plus a seeded uniform sample of floor(f * |general|)
/// general chunks, in a seeded global permutation.
MixResult build_mix(const MixSpec& spec);

/// Manifest-level mix: checks tokenizer fingerprint and chunk window agree,
/// then writes the mixed corpus as `<name>` under `out_dir`.
CorpusManifest build_mix(const CorpusManifest& domain, const CorpusManifest& general, Fraction general_fraction,
                         std::uint64_t seed, const std::filesystem::path& out_dir, const std::string& name);

struct PackedBlocks {
  std::size_t block_length = 0;
  std::vector<TokenId> tokens;  // block_count() * block_length
  std::size_t dropped_tokens = 0;

  std::size_t block_count() const noexcept { return block_length ? tokens.size() / block_length : 0; }
  std::span<const TokenId> block(std::size_t i) const {
    return {tokens.data() + i * block_length, block_length};
  }
};

/// Concatenate chunks in order with `separator` between consecutive chunks and
/// cut into blocks of exactly `max_seq_len`; the trailing partial block is dropped.
PackedBlocks pack_sequences(std::span<const TextChunk> chunks, std::size_t max_seq_len,
                            TokenId separator = BpeVocab::special(SpecialToken::doc_separator));

/// Order-independent hash of a chunk multiset.
std::uint64_t multiset_hash(std::span<const TextChunk> chunks);

}  // namespace adaptlm
