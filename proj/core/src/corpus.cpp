#include "adaptlm/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <random>
#include <sstream>
#include <thread>
#include <unordered_set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "adaptlm/binary_io.hpp"
#include "adaptlm/error.hpp"

namespace adaptlm {

namespace {

constexpr std::string_view kShardMagic = "QKSH";
constexpr std::uint32_t kShardVersion = 1;

// Runs fn(begin, end, slot) over `workers` contiguous ranges of [0, n).
template <typename Fn>
void parallel_ranges(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    fn(std::size_t{0}, n, std::size_t{0});
    return;
  }
  std::vector<std::thread> threads;
  const std::size_t per = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const auto begin = std::min(n, w * per);
    const auto end = std::min(n, begin + per);
    threads.emplace_back([&fn, begin, end, w] { fn(begin, end, w); });
  }
  for (auto& t : threads) t.join();
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  return order;
}

std::string text_field(const nlohmann::json& obj, const std::string& key, bool required) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    if (required) throw std::invalid_argument(fmt::format("missing key '{}'", key));
    return {};
  }
  if (!it->is_string()) throw std::invalid_argument(fmt::format("key '{}' is not a string", key));
  return it->get<std::string>();
}

struct LineOutcome {
  enum class Kind : std::uint8_t { kept, filtered, empty_body, malformed } kind;
  ArticleRecord record;
  std::string error;
};

LineOutcome parse_line(const std::string& line, const FieldFilter& filter, const SchemaMapping& schema) {
  LineOutcome out{LineOutcome::Kind::malformed, {}, {}};
  try {
    const auto obj = nlohmann::json::parse(line);
    if (!obj.is_object()) throw std::invalid_argument("record is not an object");
    auto& r = out.record;
    r.id = text_field(obj, schema.id, true);
    if (r.id.empty()) throw std::invalid_argument("empty id");
    r.title = text_field(obj, schema.title, false);
    r.abstract_text = text_field(obj, schema.abstract_text, false);
    r.body = text_field(obj, schema.body, false);
    if (const auto it = obj.find(schema.fields_of_study); it != obj.end() && !it->is_null()) {
      if (it->is_string()) {
        r.fields_of_study.push_back(it->get<std::string>());
      } else if (it->is_array()) {
        for (const auto& v : *it) {
          if (!v.is_string()) throw std::invalid_argument("fields_of_study entry is not a string");
          r.fields_of_study.push_back(v.get<std::string>());
        }
      } else {
        throw std::invalid_argument("fields_of_study is neither a list nor a string");
      }
    }
  } catch (const std::exception& e) {
    out.error = e.what();
    return out;
  }
  if (!filter.matches(out.record)) {
    out.kind = LineOutcome::Kind::filtered;
  } else if (normalize_whitespace(out.record.body).empty()) {
    out.kind = LineOutcome::Kind::empty_body;
  } else {
    out.kind = LineOutcome::Kind::kept;
  }
  return out;
}

std::uint64_t chunk_hash(const TextChunk& c) {
  Fnv1a h;
  h.update(c.article_id);
  h.update_u32(c.seq_index);
  h.update_u32(static_cast<std::uint32_t>(c.source));
  for (const auto t : c.token_ids) h.update_u32(static_cast<std::uint32_t>(t));
  return h.value();
}

std::string shard_name(const std::string& name, std::size_t index) {
  return fmt::format("{}-{:05d}.shard", name, index);
}

}  // namespace

FieldFilter::FieldFilter(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.empty()) throw Error(ErrorCode::invalid_argument, "field filter must name at least one label");
}

bool FieldFilter::matches(const ArticleRecord& record) const {
  return std::any_of(record.fields_of_study.begin(), record.fields_of_study.end(), [&](const std::string& f) {
    return std::find(labels_.begin(), labels_.end(), f) != labels_.end();
  });
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (const char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

ParseResult parse_articles(std::istream& in, const FieldFilter& filter, const SchemaMapping& schema,
                           std::size_t workers) {
  if (!in) throw Error(ErrorCode::io, "article stream is not readable");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
  if (in.bad()) throw Error(ErrorCode::io, "read error on article stream");

  std::vector<LineOutcome> outcomes(lines.size());
  parallel_ranges(lines.size(), workers, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t i = begin; i < end; ++i) {
      if (normalize_whitespace(lines[i]).empty()) {
        outcomes[i].kind = LineOutcome::Kind::filtered;
        outcomes[i].error = "blank";
        continue;
      }
      outcomes[i] = parse_line(lines[i], filter, schema);
    }
  });

  ParseResult result;
  std::unordered_set<std::string> seen_bodies;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    auto& o = outcomes[i];
    if (o.kind == LineOutcome::Kind::filtered && o.error == "blank") continue;
    ++result.stats.lines;
    switch (o.kind) {
      case LineOutcome::Kind::malformed:
        ++result.stats.malformed;
        result.errors.push_back({i + 1, std::move(o.error)});
        break;
      case LineOutcome::Kind::filtered:
        ++result.stats.filtered_out;
        break;
      case LineOutcome::Kind::empty_body:
        ++result.stats.empty_body;
        break;
      case LineOutcome::Kind::kept:
        if (!seen_bodies.insert(normalize_whitespace(o.record.body)).second) {
          ++result.stats.duplicates;
          break;
        }
        ++result.stats.kept;
        result.records.push_back(std::move(o.record));
        break;
    }
  }
  return result;
}

ParseResult parse_articles(const std::filesystem::path& path, const FieldFilter& filter, const SchemaMapping& schema,
                           std::size_t workers) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, fmt::format("cannot open article file '{}'", path.string()));
  return parse_articles(in, filter, schema, workers);
}

std::string TextChunk::key() const {
  return fmt::format("{}:{}#{}", source == ChunkSource::domain ? "d" : "g", article_id, seq_index);
}

std::vector<TextChunk> chunk_article(const ArticleRecord& record, const BpeVocab& vocab, std::size_t chunk_window,
                                     ChunkSource source) {
  if (chunk_window == 0) throw Error(ErrorCode::invalid_argument, "chunk window must be at least 1");
  const auto tokens = vocab.encode(record.body);
  std::vector<TextChunk> chunks;
  chunks.reserve((tokens.size() + chunk_window - 1) / chunk_window);
  for (std::size_t start = 0; start < tokens.size(); start += chunk_window) {
    const auto end = std::min(tokens.size(), start + chunk_window);
    chunks.push_back({record.id, static_cast<std::uint32_t>(chunks.size()), source,
                      std::vector<TokenId>(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                                           tokens.begin() + static_cast<std::ptrdiff_t>(end))});
  }
  return chunks;
}

std::vector<TextChunk> chunk_articles(std::span<const ArticleRecord> records, const BpeVocab& vocab,
                                      std::size_t chunk_window, ChunkSource source, std::size_t workers) {
  std::vector<std::vector<TextChunk>> per_record(records.size());
  parallel_ranges(records.size(), workers, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t i = begin; i < end; ++i) per_record[i] = chunk_article(records[i], vocab, chunk_window, source);
  });
  std::vector<TextChunk> out;
  for (auto& chunks : per_record) {
    for (auto& c : chunks) out.push_back(std::move(c));
  }
  return out;
}

std::string CorpusManifest::to_text() const {
  std::string out = "# adaptlm corpus manifest\n";
  out += fmt::format("format = {}\n", kFormatVersion);
  out += fmt::format("tokenizer = {}\n", tokenizer_fingerprint);
  out += fmt::format("chunk_window = {}\n", chunk_window);
  out += fmt::format("seed = {}\n", seed);
  out += fmt::format("domain_chunks = {}\n", domain_chunks);
  out += fmt::format("general_chunks = {}\n", general_chunks);
  for (const auto& s : shards) out += fmt::format("shard = {} {}\n", s.file, s.chunks);
  return out;
}

CorpusManifest CorpusManifest::from_text(std::string_view text, std::filesystem::path directory) {
  CorpusManifest m;
  m.directory = std::move(directory);
  std::istringstream in{std::string(text)};
  std::size_t line_no = 0;
  bool saw_format = false;
  auto as_u64 = [&](const std::string& v) {
    std::uint64_t x = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc{} || ptr != v.data() + v.size()) {
      throw Error(ErrorCode::format, fmt::format("manifest line {}: bad integer '{}'", line_no, v));
    }
    return x;
  };
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw Error(ErrorCode::format, fmt::format("manifest line {}: expected 'key = value'", line_no));
    const auto key = line.substr(0, eq);
    const auto value = line.substr(eq + 3);
    if (key == "format") {
      if (as_u64(value) != kFormatVersion) throw Error(ErrorCode::format, fmt::format("unsupported manifest format {}", value));
      saw_format = true;
    } else if (key == "tokenizer") {
      m.tokenizer_fingerprint = value;
    } else if (key == "chunk_window") {
      m.chunk_window = as_u64(value);
    } else if (key == "seed") {
      m.seed = as_u64(value);
    } else if (key == "domain_chunks") {
      m.domain_chunks = as_u64(value);
    } else if (key == "general_chunks") {
      m.general_chunks = as_u64(value);
    } else if (key == "shard") {
      const auto sp = value.rfind(' ');
      if (sp == std::string::npos) throw Error(ErrorCode::format, fmt::format("manifest line {}: bad shard entry", line_no));
      m.shards.push_back({value.substr(0, sp), as_u64(value.substr(sp + 1))});
    } else {
      throw Error(ErrorCode::format, fmt::format("manifest line {}: unknown key '{}'", line_no, key));
    }
  }
  if (!saw_format) throw Error(ErrorCode::format, "manifest has no format line");
  std::size_t total = 0;
  for (const auto& s : m.shards) total += s.chunks;
  if (total != m.total_chunks()) {
    throw Error(ErrorCode::format,
                fmt::format("manifest counts ({} + {}) disagree with shard sum {}", m.domain_chunks, m.general_chunks, total));
  }
  return m;
}

std::vector<std::uint8_t> encode_shard(std::span<const TextChunk> chunks, const CorpusMeta& meta) {
  ByteWriter w;
  w.raw(kShardMagic);
  w.u32(kShardVersion);
  w.string(meta.tokenizer_fingerprint);
  w.u32(static_cast<std::uint32_t>(meta.chunk_window));
  w.u64(chunks.size());
  std::vector<std::uint32_t> ids;
  for (const auto& c : chunks) {
    w.string(c.article_id);
    w.u32(c.seq_index);
    w.u8(static_cast<std::uint8_t>(c.source));
    ids.assign(c.token_ids.begin(), c.token_ids.end());
    w.u32(static_cast<std::uint32_t>(ids.size()));
    w.u32_array(ids);
  }
  return w.bytes();
}

std::vector<TextChunk> decode_shard(std::span<const std::uint8_t> bytes, CorpusMeta* meta_out) {
  ByteReader r(bytes);
  if (r.raw(kShardMagic.size()) != kShardMagic) throw FormatError("bad shard magic", 0);
  if (const auto v = r.u32(); v != kShardVersion) throw FormatError(fmt::format("unsupported shard version {}", v), 4);
  CorpusMeta meta;
  meta.tokenizer_fingerprint = r.string();
  meta.chunk_window = r.u32();
  const auto count = r.u64();
  std::vector<TextChunk> chunks;
  chunks.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
  for (std::uint64_t i = 0; i < count; ++i) {
    TextChunk c;
    c.article_id = r.string();
    c.seq_index = r.u32();
    const auto src_offset = r.offset();
    const auto src = r.u8();
    if (src > 1) throw FormatError(fmt::format("bad chunk source tag {}", src), src_offset);
    c.source = static_cast<ChunkSource>(src);
    const auto n = r.u32();
    c.token_ids.resize(n);
    for (auto& t : c.token_ids) t = static_cast<TokenId>(r.u32());
    chunks.push_back(std::move(c));
  }
  if (!r.done()) throw FormatError("trailing bytes after last chunk", r.offset());
  if (meta_out) *meta_out = meta;
  return chunks;
}

CorpusManifest write_corpus(const std::filesystem::path& dir, const std::string& name,
                            std::span<const TextChunk> chunks, const CorpusMeta& meta, std::size_t shard_capacity) {
  if (shard_capacity == 0) throw Error(ErrorCode::invalid_argument, "shard capacity must be positive");
  std::filesystem::create_directories(dir);
  CorpusManifest m;
  m.directory = dir;
  m.chunk_window = meta.chunk_window;
  m.seed = meta.seed;
  m.tokenizer_fingerprint = meta.tokenizer_fingerprint;
  for (const auto& c : chunks) {
    if (c.length() == 0 || c.length() > meta.chunk_window) {
      throw Error(ErrorCode::invalid_argument,
                  fmt::format("chunk {} has length {} outside (0, {}]", c.key(), c.length(), meta.chunk_window));
    }
    (c.source == ChunkSource::domain ? m.domain_chunks : m.general_chunks) += 1;
  }
  for (std::size_t start = 0, index = 0; start < chunks.size(); start += shard_capacity, ++index) {
    const auto piece = chunks.subspan(start, std::min(shard_capacity, chunks.size() - start));
    const auto file = shard_name(name, index);
    write_file_bytes(dir / file, encode_shard(piece, meta));
    m.shards.push_back({file, piece.size()});
  }
  write_text_file(dir / (name + ".manifest"), m.to_text());
  return m;
}

CorpusManifest read_manifest(const std::filesystem::path& manifest_path) {
  return CorpusManifest::from_text(read_text_file(manifest_path), manifest_path.parent_path());
}

std::vector<TextChunk> read_chunks(const CorpusManifest& manifest) {
  std::vector<TextChunk> out;
  out.reserve(manifest.total_chunks());
  for (const auto& s : manifest.shards) {
    CorpusMeta meta;
    auto chunks = decode_shard(read_file_bytes(manifest.directory / s.file), &meta);
    if (meta.tokenizer_fingerprint != manifest.tokenizer_fingerprint) {
      throw Error(ErrorCode::fingerprint_mismatch,
                  fmt::format("shard '{}' tokenizer {} != manifest {}", s.file, meta.tokenizer_fingerprint,
                              manifest.tokenizer_fingerprint));
    }
    if (meta.chunk_window != manifest.chunk_window || chunks.size() != s.chunks) {
      throw Error(ErrorCode::format, fmt::format("shard '{}' header disagrees with manifest", s.file));
    }
    for (auto& c : chunks) out.push_back(std::move(c));
  }
  return out;
}

SplitResult split_holdout(std::vector<TextChunk> chunks, Fraction holdout, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto order = seeded_permutation(chunks.size(), rng);
  const auto n_val = holdout.floor_of(chunks.size());
  std::vector<bool> is_val(chunks.size(), false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  SplitResult out;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    (is_val[i] ? out.validation : out.train).push_back(std::move(chunks[i]));
  }
  return out;
}

MixResult build_mix(const MixSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  const auto pool_order = seeded_permutation(spec.general.size(), rng);
  const auto n_general = spec.general_fraction.floor_of(spec.general.size());
  std::vector<std::size_t> picked(pool_order.begin(), pool_order.begin() + static_cast<std::ptrdiff_t>(n_general));
  std::sort(picked.begin(), picked.end());

  std::vector<const TextChunk*> combined;
  combined.reserve(spec.domain.size() + n_general);
  for (const auto& c : spec.domain) combined.push_back(&c);
  for (const auto i : picked) combined.push_back(&spec.general[i]);

  const auto order = seeded_permutation(combined.size(), rng);
  MixResult out;
  out.chunks.reserve(combined.size());
  for (const auto i : order) out.chunks.push_back(*combined[i]);
  out.domain_count = spec.domain.size();
  out.general_count = n_general;
  return out;
}

CorpusManifest build_mix(const CorpusManifest& domain, const CorpusManifest& general, Fraction general_fraction,
                         std::uint64_t seed, const std::filesystem::path& out_dir, const std::string& name) {
  if (domain.tokenizer_fingerprint != general.tokenizer_fingerprint) {
    throw Error(ErrorCode::fingerprint_mismatch,
                fmt::format("domain tokenizer {} != general tokenizer {}", domain.tokenizer_fingerprint,
                            general.tokenizer_fingerprint));
  }
  if (domain.chunk_window != general.chunk_window) {
    throw Error(ErrorCode::invalid_argument,
                fmt::format("chunk windows differ: domain {} vs general {}", domain.chunk_window, general.chunk_window));
  }
  auto domain_chunks = read_chunks(domain);
  auto general_chunks = read_chunks(general);
  for (auto& c : domain_chunks) c.source = ChunkSource::domain;
  for (auto& c : general_chunks) c.source = ChunkSource::general;
  const auto mixed = build_mix(MixSpec{domain_chunks, general_chunks, general_fraction, seed});
  return write_corpus(out_dir, name, mixed.chunks, {domain.chunk_window, seed, domain.tokenizer_fingerprint});
}

PackedBlocks pack_sequences(std::span<const TextChunk> chunks, std::size_t max_seq_len, TokenId separator) {
  if (max_seq_len < 2) throw Error(ErrorCode::invalid_argument, "max_seq_len must be at least 2");
  PackedBlocks out;
  out.block_length = max_seq_len;
  std::vector<TokenId> stream;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    if (i > 0) stream.push_back(separator);
    stream.insert(stream.end(), chunks[i].token_ids.begin(), chunks[i].token_ids.end());
  }
  const auto n_blocks = stream.size() / max_seq_len;
  out.tokens.assign(stream.begin(), stream.begin() + static_cast<std::ptrdiff_t>(n_blocks * max_seq_len));
  out.dropped_tokens = stream.size() - out.tokens.size();
  return out;
}

std::uint64_t multiset_hash(std::span<const TextChunk> chunks) {
  std::uint64_t sum = 0;
  for (const auto& c : chunks) sum += chunk_hash(c);
  return sum;
}

}  // namespace adaptlm
