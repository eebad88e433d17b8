#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adaptlm/corpus.hpp"
#include "adaptlm/tokenizer.hpp"

namespace adaptlm::acceptance {

/// Synthetic general and domain corpora run through the real ingest,
/// tokenizer-training and chunking path.
struct DeskCorpus {
  BpeVocab vocab;
  std::vector<TextChunk> general;
  std::vector<TextChunk> domain;
};

struct DeskSpec {
  std::size_t general_bytes = 1 << 20;
  std::size_t domain_bytes = 1 << 20;
  std::size_t vocab_size = 512;
  std::size_t tokenizer_sample_bytes = 200000;
  std::size_t chunk_window = 512;
  std::uint64_t seed = 1;
  std::size_t workers = 2;
};

DeskCorpus build_desk_corpus(const DeskSpec& spec);

}  // namespace adaptlm::acceptance
