#include "adaptlm/tokenizer.hpp"

#include <algorithm>
#include <charconv>
#include <queue>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "adaptlm/binary_io.hpp"
#include "adaptlm/error.hpp"

namespace adaptlm {

namespace {

constexpr std::string_view kVocabMagic = "adaptlm-bpe";
constexpr int kVocabVersion = 1;

}  // namespace

BpeVocab::BpeVocab() : BpeVocab(std::vector<Merge>{}) {}

BpeVocab::BpeVocab(std::vector<Merge> merges) : merges_(std::move(merges)) {
  token_bytes_.reserve(kFirstMergeId + merges_.size());
  for (int b = 0; b < kByteTokens; ++b) token_bytes_.emplace_back(1, static_cast<char>(b));
  for (int s = 0; s < kSpecialCount; ++s) token_bytes_.emplace_back();

  Fnv1a hash;
  hash.update(kVocabMagic);
  for (const auto name : kSpecialNames) hash.update(name);
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    const auto [left, right] = merges_[i];
    const auto next_id = static_cast<TokenId>(token_bytes_.size());
    if (left < 0 || right < 0 || left >= next_id || right >= next_id) {
      throw Error(ErrorCode::format, fmt::format("merge {} references undefined token ({}, {})", i, left, right));
    }
    if (is_special(left) || is_special(right)) {
      throw Error(ErrorCode::format, fmt::format("merge {} references a special token", i));
    }
    if (!merge_rank_.emplace(pair_key(left, right), static_cast<std::uint32_t>(i)).second) {
      throw Error(ErrorCode::format, fmt::format("duplicate merge ({}, {})", left, right));
    }
    token_bytes_.push_back(token_bytes_[left] + token_bytes_[right]);
    hash.update_u32(static_cast<std::uint32_t>(left));
    hash.update_u32(static_cast<std::uint32_t>(right));
  }
  fingerprint_ = hash.value();

  for (std::size_t id = 0; id < token_bytes_.size(); ++id) {
    if (is_special(static_cast<TokenId>(id))) continue;
    bytes_to_id_.emplace(token_bytes_[id], static_cast<TokenId>(id));
  }
}

const std::string& BpeVocab::token_bytes(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= token_bytes_.size()) {
    throw Error(ErrorCode::out_of_range, fmt::format("token id {} not in vocabulary of size {}", id, size()));
  }
  return token_bytes_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> BpeVocab::find(std::string_view bytes) const {
  const auto it = bytes_to_id_.find(std::string(bytes));
  if (it == bytes_to_id_.end()) return std::nullopt;
  return it->second;
}

std::string BpeVocab::fingerprint_hex() const { return to_hex(fingerprint_); }

// Merges are applied lowest rank first, leftmost occurrence first. A merge can
// only create pairs whose rank is higher than its own, so this visits merges in
// exactly training order while touching each position O(log n) times.
std::vector<TokenId> BpeVocab::encode(std::string_view text) const {
  const auto n = text.size();
  std::vector<TokenId> tok(n);
  std::vector<std::int64_t> next(n), prev(n);
  for (std::size_t i = 0; i < n; ++i) {
    tok[i] = static_cast<std::uint8_t>(text[i]);
    next[i] = (i + 1 < n) ? static_cast<std::int64_t>(i + 1) : -1;
    prev[i] = static_cast<std::int64_t>(i) - 1;
  }
  if (merges_.empty() || n < 2) return tok;

  using Entry = std::pair<std::uint32_t, std::int64_t>;  // (rank, left position)
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  auto push_pair = [&](std::int64_t left) {
    if (left < 0 || next[left] < 0) return;
    const auto it = merge_rank_.find(pair_key(tok[left], tok[next[left]]));
    if (it != merge_rank_.end()) heap.emplace(it->second, left);
  };
  for (std::size_t i = 0; i + 1 < n; ++i) push_pair(static_cast<std::int64_t>(i));

  std::vector<bool> alive(n, true);
  while (!heap.empty()) {
    const auto [rank, left] = heap.top();
    heap.pop();
    if (!alive[left] || next[left] < 0) continue;
    const auto right = next[left];
    const auto& merge = merges_[rank];
    if (tok[left] != merge.left || tok[right] != merge.right) continue;

    tok[left] = kFirstMergeId + static_cast<TokenId>(rank);
    alive[right] = false;
    next[left] = next[right];
    if (next[right] >= 0) prev[next[right]] = left;
    push_pair(prev[left]);
    push_pair(left);
  }

  std::vector<TokenId> out;
  for (std::int64_t i = 0; i >= 0; i = next[i]) out.push_back(tok[i]);
  return out;
}

std::string BpeVocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (const auto id : ids) out += token_bytes(id);
  return out;
}

std::string BpeVocab::to_text() const {
  std::string out = fmt::format("{} {} {} {}\n", kVocabMagic, kVocabVersion, merges_.size(), kSpecialCount);
  for (const auto& m : merges_) out += fmt::format("{} {}\n", m.left, m.right);
  for (TokenId s = 0; s < kSpecialCount; ++s) out += fmt::format("{} {}\n", kByteTokens + s, kSpecialNames[s]);
  return out;
}

BpeVocab BpeVocab::from_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string magic;
  int version = 0;
  std::size_t n_merges = 0;
  int n_specials = 0;
  if (!(in >> magic >> version >> n_merges >> n_specials) || magic != kVocabMagic) {
    throw Error(ErrorCode::format, "vocab file: bad header");
  }
  if (version != kVocabVersion) {
    throw Error(ErrorCode::format, fmt::format("vocab file: unsupported version {}", version));
  }
  if (n_specials != kSpecialCount) {
    throw Error(ErrorCode::format, fmt::format("vocab file: expected {} specials, found {}", kSpecialCount, n_specials));
  }
  std::vector<Merge> merges(n_merges);
  for (std::size_t i = 0; i < n_merges; ++i) {
    if (!(in >> merges[i].left >> merges[i].right)) {
      throw Error(ErrorCode::format, fmt::format("vocab file: truncated at merge {}", i));
    }
  }
  for (TokenId s = 0; s < kSpecialCount; ++s) {
    TokenId id = 0;
    std::string name;
    if (!(in >> id >> name) || id != kByteTokens + s || name != kSpecialNames[s]) {
      throw Error(ErrorCode::format, fmt::format("vocab file: bad special token entry {}", s));
    }
  }
  return BpeVocab(std::move(merges));
}

void BpeVocab::save(const std::filesystem::path& path) const { write_text_file(path, to_text()); }

BpeVocab BpeVocab::load(const std::filesystem::path& path) { return from_text(read_text_file(path)); }

namespace {

// Incremental pair statistics over a linked token sequence. Pair counts always
// equal the number of adjacent occurrences in the current sequence; occurrence
// lists may hold stale positions, which are validated when consumed.
class PairTable {
 public:
  static std::uint64_t key(TokenId a, TokenId b) noexcept {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
  }

  void add(std::uint64_t k, std::int64_t pos) {
    auto& c = counts_[k];
    if (c > 0) ranked_.erase({-c, k});
    ++c;
    ranked_.insert({-c, k});
    occurrences_[k].push_back(pos);
  }

  void remove(std::uint64_t k) {
    auto it = counts_.find(k);
    if (it == counts_.end() || it->second == 0) return;
    ranked_.erase({-it->second, k});
    if (--it->second > 0) {
      ranked_.insert({-it->second, k});
    } else {
      counts_.erase(it);
    }
  }

  bool empty() const noexcept { return ranked_.empty(); }
  std::pair<std::int64_t, std::uint64_t> best() const {
    const auto& [neg, k] = *ranked_.begin();
    return {-neg, k};
  }

  std::vector<std::int64_t> take_occurrences(std::uint64_t k) {
    auto it = occurrences_.find(k);
    if (it == occurrences_.end()) return {};
    auto out = std::move(it->second);
    occurrences_.erase(it);
    return out;
  }

  void drop(std::uint64_t k) {
    if (auto it = counts_.find(k); it != counts_.end()) {
      ranked_.erase({-it->second, k});
      counts_.erase(it);
    }
  }

 private:
  std::unordered_map<std::uint64_t, std::int64_t> counts_;
  std::unordered_map<std::uint64_t, std::vector<std::int64_t>> occurrences_;
  // Ordered by descending count, then ascending (left, right).
  std::set<std::pair<std::int64_t, std::uint64_t>> ranked_;
};

}  // namespace

BpeVocab train_bpe(std::span<const std::string> documents, std::size_t target_vocab) {
  const std::size_t base = BpeVocab::kFirstMergeId;
  if (target_vocab < base) {
    throw Error(ErrorCode::invalid_argument,
                fmt::format("target vocab {} is smaller than the {} byte and special tokens", target_vocab, base));
  }
  std::size_t total = 0;
  for (const auto& d : documents) total += d.size();
  if (total == 0) throw Error(ErrorCode::invalid_argument, "cannot train a tokenizer on an empty corpus");

  std::vector<TokenId> tok;
  std::vector<std::int64_t> next, prev;
  tok.reserve(total);
  next.reserve(total);
  prev.reserve(total);
  for (const auto& d : documents) {
    const auto start = static_cast<std::int64_t>(tok.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto pos = start + static_cast<std::int64_t>(i);
      tok.push_back(static_cast<std::uint8_t>(d[i]));
      prev.push_back(i == 0 ? -1 : pos - 1);
      next.push_back(i + 1 < d.size() ? pos + 1 : -1);
    }
  }
  std::vector<bool> alive(tok.size(), true);

  PairTable pairs;
  for (std::size_t i = 0; i < tok.size(); ++i) {
    if (next[i] >= 0) pairs.add(PairTable::key(tok[i], tok[next[i]]), static_cast<std::int64_t>(i));
  }

  std::vector<BpeVocab::Merge> merges;
  while (base + merges.size() < target_vocab && !pairs.empty()) {
    const auto [count, k] = pairs.best();
    if (count < 2) break;
    const auto left_id = static_cast<TokenId>(k >> 32);
    const auto right_id = static_cast<TokenId>(k & 0xffffffffu);
    const auto new_id = static_cast<TokenId>(base + merges.size());
    merges.push_back({left_id, right_id});

    auto positions = pairs.take_occurrences(k);
    std::sort(positions.begin(), positions.end());
    for (const auto p : positions) {
      if (!alive[p] || tok[p] != left_id) continue;
      const auto q = next[p];
      if (q < 0 || tok[q] != right_id) continue;
      const auto before = prev[p];
      const auto after = next[q];
      if (before >= 0) pairs.remove(PairTable::key(tok[before], left_id));
      pairs.remove(k);
      if (after >= 0) pairs.remove(PairTable::key(right_id, tok[after]));

      tok[p] = new_id;
      alive[q] = false;
      next[p] = after;
      if (after >= 0) prev[after] = p;

      if (before >= 0) pairs.add(PairTable::key(tok[before], new_id), before);
      if (after >= 0) pairs.add(PairTable::key(new_id, tok[after]), p);
    }
    pairs.drop(k);
  }
  return BpeVocab(std::move(merges));
}

}  // namespace adaptlm
