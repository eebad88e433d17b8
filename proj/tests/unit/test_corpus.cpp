#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "adaptlm/binary_io.hpp"
#include "adaptlm/corpus.hpp"
#include "adaptlm/error.hpp"
#include "test_util.hpp"

using namespace adaptlm;

namespace {

const FieldFilter kMaterials({"Materials Science"});

TextChunk make_chunk(std::string id, std::uint32_t seq, std::size_t len, ChunkSource src = ChunkSource::domain) {
  TextChunk c{std::move(id), seq, src, {}};
  for (std::size_t i = 0; i < len; ++i) c.token_ids.push_back(static_cast<TokenId>((i * 7 + seq) % 256));
  return c;
}

std::vector<TextChunk> make_chunks(std::string prefix, std::size_t n, ChunkSource src, std::size_t len = 8) {
  std::vector<TextChunk> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_chunk(prefix + std::to_string(i), 0, len, src));
  return out;
}

std::map<std::string, int> key_counts(std::span<const TextChunk> chunks) {
  std::map<std::string, int> m;
  for (const auto& c : chunks) ++m[c.key()];
  return m;
}

}  // namespace

TEST_CASE("parsing keeps matching records and reports the rest") {
  std::istringstream in(
      R"({"id":"1","title":"t","abstract":"a","body":"Steel   is strong.","fields_of_study":["Materials Science"]})"
      "\n"
      R"({"id":"2","body":"Paris","fields_of_study":["History"]})"
      "\n"
      "not json\n"
      "\n"
      R"({"id":"3","body":"   ","fields_of_study":["Materials Science"]})"
      "\n"
      R"({"id":"4","body":"Steel is   strong.","fields_of_study":["Physics","Materials Science"]})"
      "\n"
      R"({"id":"5","body":"Glass flows.","fields_of_study":"Materials Science"})"
      "\n");
  const auto r = parse_articles(in, kMaterials);
  CHECK(r.stats.lines == 6);
  CHECK(r.stats.kept == 2);
  CHECK(r.stats.filtered_out == 1);
  CHECK(r.stats.malformed == 1);
  CHECK(r.stats.empty_body == 1);
  CHECK(r.stats.duplicates == 1);
  REQUIRE(r.records.size() == 2);
  CHECK(r.records[0].id == "1");
  CHECK(r.records[1].id == "5");
  REQUIRE(r.errors.size() == 1);
  CHECK(r.errors[0].line == 3);
}

TEST_CASE("schema mapping renames keys") {
  std::istringstream in(R"({"paper_id":"x","text":"Body here","fos":["Materials Science"]})");
  SchemaMapping schema;
  schema.id = "paper_id";
  schema.body = "text";
  schema.fields_of_study = "fos";
  const auto r = parse_articles(in, kMaterials, schema);
  REQUIRE(r.records.size() == 1);
  CHECK(r.records[0].id == "x");
  CHECK(r.records[0].body == "Body here");
}

TEST_CASE("parse result does not depend on worker count") {
  std::string text;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 500; ++i) {
    const auto field = rng() % 3 == 0 ? "History" : "Materials Science";
    text += fmt::format(R"({{"id":"{}","body":"body {}","fields_of_study":["{}"]}})", i, rng() % 200, field);
    text += "\n";
    if (rng() % 17 == 0) text += "{broken\n";
  }
  std::istringstream a(text), b(text);
  const auto one = parse_articles(a, kMaterials, {}, 1);
  const auto four = parse_articles(b, kMaterials, {}, 4);
  REQUIRE(one.records.size() == four.records.size());
  for (std::size_t i = 0; i < one.records.size(); ++i) CHECK(one.records[i].id == four.records[i].id);
  CHECK(one.stats.duplicates == four.stats.duplicates);
  CHECK(one.errors.size() == four.errors.size());
}

TEST_CASE("an empty filter is an error") { CHECK_THROWS_AS(FieldFilter({}), Error); }

TEST_CASE("12000 tokens in windows of 5120") {
  const BpeVocab vocab;
  ArticleRecord rec{"a", "", "", std::string(12000, 'x'), {}};
  const auto chunks = chunk_article(rec, vocab, 5120);
  REQUIRE(chunks.size() == 3);
  CHECK(chunks[0].length() == 5120);
  CHECK(chunks[1].length() == 5120);
  CHECK(chunks[2].length() == 1760);
  CHECK(chunks[2].seq_index == 2);
  CHECK_THROWS_AS(chunk_article(rec, vocab, 0), Error);
}

TEST_CASE("packing 12000 tokens into 1024-token blocks drops the tail") {
  const std::vector<TextChunk> chunks{make_chunk("a", 0, 12000)};
  const auto packed = pack_sequences(chunks, 1024);
  CHECK(packed.block_count() == 11);
  CHECK(packed.dropped_tokens == 736);
  CHECK_THROWS_AS(pack_sequences(chunks, 1), Error);
}

TEST_CASE("packing inserts a separator between chunks") {
  const std::vector<TextChunk> chunks{make_chunk("a", 0, 3), make_chunk("b", 0, 3)};
  const auto packed = pack_sequences(chunks, 7);
  REQUIRE(packed.block_count() == 1);
  CHECK(packed.tokens[3] == BpeVocab::special(SpecialToken::doc_separator));
}

TEST_CASE("mixing 100 domain and 50 general chunks at 0.1") {
  const auto domain = make_chunks("d", 100, ChunkSource::domain);
  const auto general = make_chunks("g", 50, ChunkSource::general);
  const auto mix = build_mix({domain, general, Fraction::parse("0.1"), 7});
  CHECK(mix.chunks.size() == 105);
  CHECK(mix.general_count == 5);
  const auto again = build_mix({domain, general, Fraction::parse("0.1"), 7});
  CHECK(again.chunks == mix.chunks);
  const auto zero = build_mix({domain, general, Fraction(0, 1), 7});
  CHECK(zero.chunks.size() == 100);
}

TEST_CASE("randomized chunk and mix oracles") {
  std::mt19937_64 rng(99);
  const BpeVocab vocab;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t len = rng() % 300;
    const std::size_t window = rng() % 50 + 1;
    ArticleRecord rec{"a", "", "", std::string(len, 'q'), {}};
    const auto chunks = chunk_article(rec, vocab, window);
    REQUIRE(chunks.size() == (len + window - 1) / window);
    std::size_t total = 0;
    for (const auto& c : chunks) total += c.length();
    REQUIRE(total == len);

    const auto domain = make_chunks("d", rng() % 30, ChunkSource::domain, 3);
    const auto general = make_chunks("g", rng() % 40, ChunkSource::general, 3);
    const Fraction f(rng() % 11, 10);
    const auto mix = build_mix({domain, general, f, rng()});
    const auto expected_general = f.floor_of(general.size());
    REQUIRE(mix.chunks.size() == domain.size() + expected_general);
    const auto counts = key_counts(mix.chunks);
    std::size_t general_seen = 0;
    for (const auto& d : domain) REQUIRE(counts.at(d.key()) == 1);
    for (const auto& g : general) {
      const auto it = counts.find(g.key());
      if (it != counts.end()) {
        REQUIRE(it->second == 1);
        ++general_seen;
      }
    }
    REQUIRE(general_seen == expected_general);
  }
}

TEST_CASE("holdout split is a seeded partition") {
  const auto chunks = make_chunks("c", 57, ChunkSource::domain);
  const auto split = split_holdout(chunks, Fraction::parse("0.1"), 4);
  CHECK(split.validation.size() == 5);
  CHECK(split.train.size() == 52);
  std::vector<TextChunk> all = split.train;
  all.insert(all.end(), split.validation.begin(), split.validation.end());
  CHECK(multiset_hash(all) == multiset_hash(chunks));
  CHECK(key_counts(all) == key_counts(chunks));
  CHECK(split_holdout(chunks, Fraction::parse("0.1"), 4).validation == split.validation);
}

TEST_CASE("multiset hash ignores order") {
  auto chunks = make_chunks("c", 20, ChunkSource::general);
  const auto h = multiset_hash(chunks);
  std::reverse(chunks.begin(), chunks.end());
  CHECK(multiset_hash(chunks) == h);
  chunks.pop_back();
  CHECK(multiset_hash(chunks) != h);
}

TEST_CASE("corpus shards roundtrip through the manifest") {
  testing::TempDir dir("corpus");
  const auto chunks = make_chunks("c", 10, ChunkSource::domain, 5);
  const CorpusMeta meta{8, 3, "feedface"};
  const auto manifest = write_corpus(dir.path(), "dom", chunks, meta, 4);
  CHECK(manifest.shards.size() == 3);
  CHECK(manifest.domain_chunks == 10);
  const auto loaded = read_manifest(dir / "dom.manifest");
  CHECK(loaded.shards == manifest.shards);
  CHECK(read_chunks(loaded) == chunks);

  CHECK_THROWS_AS(write_corpus(dir.path(), "bad", make_chunks("x", 1, ChunkSource::domain, 9), meta), Error);
}

TEST_CASE("manifest-level mix checks tokenizer and window") {
  testing::TempDir dir("mix");
  const auto d = write_corpus(dir / "d", "dom", make_chunks("d", 10, ChunkSource::domain), {8, 0, "aa"});
  const auto g = write_corpus(dir / "g", "gen", make_chunks("g", 20, ChunkSource::general), {8, 0, "aa"});
  const auto g_other = write_corpus(dir / "g2", "gen", make_chunks("g", 20, ChunkSource::general), {8, 0, "bb"});
  const auto g_window = write_corpus(dir / "g3", "gen", make_chunks("g", 20, ChunkSource::general), {16, 0, "aa"});

  const auto m1 = build_mix(d, g, Fraction::parse("0.1"), 7, dir / "m1", "mix");
  const auto m2 = build_mix(d, g, Fraction::parse("0.1"), 7, dir / "m2", "mix");
  CHECK(m1.total_chunks() == 12);
  CHECK(read_text_file(dir / "m1/mix.manifest") == read_text_file(dir / "m2/mix.manifest"));
  CHECK(read_file_bytes(dir / "m1/mix-00000.shard") == read_file_bytes(dir / "m2/mix-00000.shard"));

  try {
    build_mix(d, g_other, Fraction::parse("0.1"), 7, dir / "m3", "mix");
    FAIL("expected mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::fingerprint_mismatch);
  }
  CHECK_THROWS_AS(build_mix(d, g_window, Fraction::parse("0.1"), 7, dir / "m4", "mix"), Error);
}

TEST_CASE("corrupt shards report a byte offset") {
  const auto bytes = encode_shard(make_chunks("c", 2, ChunkSource::domain), {8, 0, "aa"});
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_shard(bad), FormatError);
  std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 3);
  try {
    decode_shard(cut);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() > 0);
  }
}
