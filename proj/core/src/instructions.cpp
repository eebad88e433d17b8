#include "adaptlm/instructions.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "adaptlm/error.hpp"

namespace adaptlm {

std::string_view to_string(InstructionSource source) noexcept {
  switch (source) {
    case InstructionSource::general: return "general";
    case InstructionSource::domain: return "domain";
    case InstructionSource::identity: return "identity";
  }
  return "general";
}

InstructionSource parse_instruction_source(std::string_view text) {
  if (text == "general") return InstructionSource::general;
  if (text == "domain") return InstructionSource::domain;
  if (text == "identity") return InstructionSource::identity;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown instruction source '{}'", text));
}

InstructionSet load_instructions(std::vector<InstructionFile> files) {
  if (files.empty()) throw Error(ErrorCode::invalid_argument, "instruction tuning needs at least one data file");
  std::sort(files.begin(), files.end(), [](const InstructionFile& a, const InstructionFile& b) {
    return std::pair(a.source, a.path.string()) < std::pair(b.source, b.path.string());
  });

  InstructionSet out;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& file : files) {
    std::ifstream in(file.path);
    if (!in) throw Error(ErrorCode::io, fmt::format("cannot open instruction file '{}'", file.path.string()));
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      InstructionExample ex;
      ex.source = file.source;
      try {
        const auto obj = nlohmann::json::parse(line);
        if (!obj.is_object()) throw std::invalid_argument("record is not an object");
        auto get = [&](const char* key, bool required) -> std::string {
          const auto it = obj.find(key);
          if (it == obj.end() || it->is_null()) {
            if (required) throw std::invalid_argument(fmt::format("missing key '{}'", key));
            return {};
          }
          if (!it->is_string()) throw std::invalid_argument(fmt::format("key '{}' is not a string", key));
          return it->get<std::string>();
        };
        ex.instruction = get("instruction", true);
        ex.input = get("input", false);
        ex.response = get("output", true);
        if (ex.instruction.empty() || ex.response.empty()) {
          throw std::invalid_argument("instruction and output must be non-empty");
        }
      } catch (const std::exception& e) {
        out.errors.push_back({line_no, fmt::format("{}: {}", file.path.string(), e.what())});
        continue;
      }
      if (!seen.emplace(ex.instruction, ex.input).second) {
        ++out.duplicates;
        continue;
      }
      ++out.per_source[static_cast<std::size_t>(ex.source)];
      out.examples.push_back(std::move(ex));
    }
  }
  return out;
}

std::string escape_template_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool line_start = true;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (line_start && (text[i] == '\\' || text.substr(i).starts_with("###"))) out.push_back('\\');
    out.push_back(text[i]);
    line_start = text[i] == '\n';
  }
  return out;
}

std::string PromptTemplate::render_prompt(std::string_view instruction, std::string_view input) const {
  std::string out = instruction_prefix + escape_template_text(instruction);
  if (!input.empty()) out += input_prefix + escape_template_text(input);
  out += response_prefix;
  return out;
}

namespace {

std::string escape_line(std::string_view s) {
  std::string out;
  for (const char c : s) {
    if (c == '\\') {
      out += "\\\\";
    } else if (c == '\n') {
      out += "\\n";
    } else {
      out.push_back(c);
    }
  }
  return out;
}

std::string unescape_line(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      ++i;
      out.push_back(s[i] == 'n' ? '\n' : s[i]);
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

}  // namespace

std::string PromptTemplate::serialize() const {
  return fmt::format("{}\n{}\n{}\n{}", escape_line(instruction_prefix), escape_line(input_prefix),
                     escape_line(response_prefix), escape_line(stop));
}

PromptTemplate PromptTemplate::deserialize(std::string_view text) {
  std::vector<std::string> parts;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) parts.push_back(unescape_line(line));
  if (parts.size() != 4) throw Error(ErrorCode::format, "prompt template must have four fields");
  return PromptTemplate{parts[0], parts[1], parts[2], parts[3]};
}

std::optional<RenderedExample> render_and_mask(const InstructionExample& example, const BpeVocab& vocab,
                                               std::size_t max_seq_len, const PromptTemplate& tmpl,
                                               RenderStats* stats) {
  if (max_seq_len < 2) throw Error(ErrorCode::invalid_argument, "max_seq_len must be at least 2");
  RenderedExample out;
  out.tokens = vocab.encode(tmpl.render_prompt(example.instruction, example.input));
  out.prompt_tokens = out.tokens.size();
  if (out.prompt_tokens >= max_seq_len) {
    if (stats) ++stats->skipped;
    return std::nullopt;
  }
  const auto response = vocab.encode(example.response);
  out.tokens.insert(out.tokens.end(), response.begin(), response.end());
  out.tokens.push_back(BpeVocab::special(SpecialToken::eos));
  out.mask.assign(out.prompt_tokens, 0);
  out.mask.resize(out.tokens.size(), 1);
  if (out.tokens.size() > max_seq_len) {
    out.tokens.resize(max_seq_len);
    out.mask.resize(max_seq_len);
    out.truncated = true;
    if (stats) ++stats->truncated;
  }
  if (stats) ++stats->rendered;
  return out;
}

}  // namespace adaptlm
