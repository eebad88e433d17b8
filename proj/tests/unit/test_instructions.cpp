#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include <fmt/format.h>

#include "adaptlm/binary_io.hpp"
#include "adaptlm/error.hpp"
#include "adaptlm/instructions.hpp"
#include "test_util.hpp"

using namespace adaptlm;

namespace {

std::string record(std::string_view instruction, std::string_view input, std::string_view output) {
  return fmt::format(R"({{"instruction":"{}","input":"{}","output":"{}"}})", instruction, input, output) + "\n";
}

std::string numbered(std::string_view tag, std::size_t n) {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) out += record(fmt::format("{} question {}", tag, i), "", "answer");
  return out;
}

}  // namespace

TEST_CASE("general, domain and identity sets combine to 3344 unique instructions") {
  testing::TempDir dir("instr");
  write_text_file(dir / "general.jsonl", numbered("general", 1030));
  // the domain file repeats ten of its own entries
  write_text_file(dir / "domain.jsonl", numbered("domain", 2307) + numbered("domain", 10));
  write_text_file(dir / "identity.jsonl", numbered("identity", 7));
  const auto set = load_instructions({{dir / "general.jsonl", InstructionSource::general},
                                      {dir / "domain.jsonl", InstructionSource::domain},
                                      {dir / "identity.jsonl", InstructionSource::identity}});
  CHECK(set.examples.size() == 3344);
  CHECK(set.duplicates == 10);
  CHECK(set.count(InstructionSource::general) == 1030);
  CHECK(set.count(InstructionSource::domain) == 2307);
  CHECK(set.count(InstructionSource::identity) == 7);
}

TEST_CASE("duplicates across files count once and loading ignores file order") {
  testing::TempDir dir("instr2");
  write_text_file(dir / "a.jsonl", record("Q1", "", "from a") + record("Q2", "x", "from a"));
  write_text_file(dir / "b.jsonl", record("Q1", "", "from b") + record("Q2", "y", "from b") + "{bad json\n");
  const std::vector<InstructionFile> files{{dir / "a.jsonl", InstructionSource::general},
                                           {dir / "b.jsonl", InstructionSource::domain}};
  auto reversed = files;
  std::reverse(reversed.begin(), reversed.end());
  const auto x = load_instructions(files);
  const auto y = load_instructions(reversed);
  CHECK(x.examples.size() == 3);
  CHECK(x.duplicates == 1);
  CHECK(x.errors.size() == 1);
  REQUIRE(y.examples.size() == x.examples.size());
  for (std::size_t i = 0; i < x.examples.size(); ++i) {
    CHECK(x.examples[i].response == y.examples[i].response);
    CHECK(x.examples[i].source == y.examples[i].source);
  }
  CHECK(x.examples[0].response == "from a");
}

TEST_CASE("no instruction files is an error") { CHECK_THROWS_AS(load_instructions({}), Error); }

TEST_CASE("prompt rendering with and without input") {
  const PromptTemplate t;
  CHECK(t.render_prompt("What is a perovskite?", "") == "### Instruction:\nWhat is a perovskite?\n\n### Response:\n");
  CHECK(t.render_prompt("Summarize.", "Text") == "### Instruction:\nSummarize.\n\n### Input:\nText\n\n### Response:\n");
}

TEST_CASE("mask covers exactly the response and EOS") {
  const BpeVocab vocab;
  const PromptTemplate t;
  const InstructionExample ex{InstructionSource::domain, "What is a perovskite?", "", "A crystal structure."};
  const auto r = render_and_mask(ex, vocab, 512, t);
  REQUIRE(r.has_value());
  const auto prefix = vocab.encode("### Instruction:\nWhat is a perovskite?\n\n### Response:\n");
  CHECK(r->prompt_tokens == prefix.size());
  CHECK(std::equal(prefix.begin(), prefix.end(), r->tokens.begin()));
  for (std::size_t i = 0; i < prefix.size(); ++i) CHECK(r->mask[i] == 0);
  const auto ones = static_cast<std::size_t>(std::count(r->mask.begin(), r->mask.end(), 1));
  CHECK(ones == vocab.encode(ex.response).size() + 1);
  CHECK(r->tokens.back() == BpeVocab::special(SpecialToken::eos));
  CHECK_FALSE(r->truncated);
}

TEST_CASE("mask sum property under a trained vocabulary") {
  std::vector<std::string> docs{"the melting point of steel is high", "what is the band gap of silicon"};
  const auto vocab = train_bpe(docs, 300);
  const PromptTemplate t;
  std::mt19937_64 rng(4);
  for (int i = 0; i < 300; ++i) {
    const InstructionExample ex{InstructionSource::general, testing::random_utf8(rng, 10) + "?",
                                i % 2 ? testing::random_utf8(rng, 5) : "", "x" + testing::random_utf8(rng, 20)};
    const auto r = render_and_mask(ex, vocab, 4096, t);
    REQUIRE(r.has_value());
    const auto ones = static_cast<std::size_t>(std::count(r->mask.begin(), r->mask.end(), 1));
    REQUIRE(ones == vocab.encode(ex.response).size() + 1);
  }
}

TEST_CASE("over-long examples are truncated or skipped") {
  const BpeVocab vocab;
  const PromptTemplate t;
  RenderStats stats;
  const InstructionExample long_response{InstructionSource::general, "Q", "", std::string(100, 'r')};
  const auto r = render_and_mask(long_response, vocab, 40, t, &stats);
  REQUIRE(r.has_value());
  CHECK(r->tokens.size() == 40);
  CHECK(r->truncated);
  const InstructionExample long_prompt{InstructionSource::general, std::string(100, 'q'), "", "r"};
  CHECK_FALSE(render_and_mask(long_prompt, vocab, 40, t, &stats).has_value());
  CHECK(stats.rendered == 1);
  CHECK(stats.truncated == 1);
  CHECK(stats.skipped == 1);
}

TEST_CASE("rendering is injective on distinct instruction/input pairs") {
  const PromptTemplate t;
  std::mt19937_64 rng(12);
  const std::vector<std::string> pieces{"a", "\n", "### Input:", "### Response:", "\\", "\n\n", "b", "###"};
  std::set<std::pair<std::string, std::string>> pairs;
  while (pairs.size() < 1000) {
    std::string i, x;
    for (auto n = rng() % 5 + 1; n > 0; --n) i += pieces[rng() % pieces.size()];
    for (auto n = rng() % 4; n > 0; --n) x += pieces[rng() % pieces.size()];
    pairs.emplace(i, x);
  }
  std::set<std::string> rendered;
  for (const auto& [i, x] : pairs) rendered.insert(t.render_prompt(i, x));
  CHECK(rendered.size() == pairs.size());
}

TEST_CASE("template serialization roundtrips") {
  PromptTemplate t;
  t.stop = "<end>";
  t.input_prefix = "\n\\Input\n";
  CHECK(PromptTemplate::deserialize(t.serialize()) == t);
  CHECK_THROWS_AS(PromptTemplate::deserialize("one line"), Error);
}
