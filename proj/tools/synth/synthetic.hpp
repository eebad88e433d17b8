#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "adaptlm/corpus.hpp"
#include "adaptlm/instructions.hpp"

// Seeded generators for small, structured corpora: a "general" register of
// everyday prose and a "domain" register of materials-science prose with a
// mostly disjoint vocabulary.
namespace adaptlm::synth {

enum class Register { general, domain };

std::string sentence(Register reg, std::mt19937_64& rng);

/// Articles whose bodies add up to roughly `total_bytes`.
std::vector<ArticleRecord> make_articles(Register reg, std::size_t total_bytes, std::uint64_t seed,
                                         std::size_t article_bytes = 2048);

std::string to_jsonl(std::span<const ArticleRecord> records);

/// Question/answer pairs about made-up material properties.
std::vector<InstructionExample> make_instructions(std::size_t n, std::uint64_t seed);

std::string to_jsonl(std::span<const InstructionExample> examples);

}  // namespace adaptlm::synth
