#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adaptlm/corpus.hpp"
#include "adaptlm/tokenizer.hpp"

namespace adaptlm {

enum class InstructionSource : std::uint8_t { general = 0, domain = 1, identity = 2 };

std::string_view to_string(InstructionSource source) noexcept;
InstructionSource parse_instruction_source(std::string_view text);

struct InstructionExample {
  InstructionSource source = InstructionSource::general;
  std::string instruction;
  std::string input;
  std::string response;
};

struct InstructionFile {
  std::filesystem::path path;
  InstructionSource source = InstructionSource::general;
};

struct InstructionSet {
  std::vector<InstructionExample> examples;
  std::array<std::size_t, 3> per_source{};
  std::size_t duplicates = 0;
  std::vector<LineError> errors;  // line numbers are per file; message names the file

  std::size_t count(InstructionSource s) const { return per_source[static_cast<std::size_t>(s)]; }
};

/// Loads `{"instruction", "input"?, "output"}` records. Files are visited in a
/// canonical (source, path) order so duplicate resolution, which keeps the first
/// (instruction, input) occurrence, does not depend on argument order.
InstructionSet load_instructions(std::vector<InstructionFile> files);

/// Alpaca-style prompt. Lines of user text that begin with "###" or "\" get a
/// "\" prefix, which keeps rendering injective.
struct PromptTemplate {
  std::string instruction_prefix = "### Instruction:\n";
  std::string input_prefix = "\n\n### Input:\n";
  std::string response_prefix = "\n\n### Response:\n";
  std::string stop = std::string(BpeVocab::kSpecialNames[static_cast<std::size_t>(SpecialToken::eos)]);

  std::string render_prompt(std::string_view instruction, std::string_view input) const;

  std::string serialize() const;
  static PromptTemplate deserialize(std::string_view text);
  friend bool operator==(const PromptTemplate&, const PromptTemplate&) = default;
};

std::string escape_template_text(std::string_view text);

struct RenderedExample {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> mask;  // 1 over response tokens and the trailing EOS
  std::size_t prompt_tokens = 0;
  bool truncated = false;
};

struct RenderStats {
  std::size_t rendered = 0;
  std::size_t truncated = 0;
  std::size_t skipped = 0;
};

/// Tokenizes prompt and response separately, appends EOS, and masks the prompt.
/// Over-long examples lose response tokens from the tail; an example whose
/// prompt alone fills max_seq_len is skipped (nullopt) and counted.
std::optional<RenderedExample> render_and_mask(const InstructionExample& example, const BpeVocab& vocab,
                                               std::size_t max_seq_len, const PromptTemplate& tmpl,
                                               RenderStats* stats = nullptr);

}  // namespace adaptlm
