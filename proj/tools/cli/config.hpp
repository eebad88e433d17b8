#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "adaptlm/generation.hpp"
#include "adaptlm/trainer.hpp"

namespace adaptlm::cli {

/// Flat dotted-key settings. Values keep their source text; typed getters
/// parse on access so a snapshot round-trips exactly.
///
/// File syntax is a TOML subset: `key = value` lines, optional `[section]`
/// headers that prefix the following keys, `#` comments, double-quoted
/// strings, bare numbers and booleans.
class Config {
 public:
  /// The desk-scale profile.
  static Config defaults();

  /// Overlay the entries of a config file; unknown keys are an error.
  void merge_file(const std::string& path);
  void merge_text(std::string_view text, std::string_view origin);
  /// `key=value` from the command line.
  void set_override(std::string_view assignment);
  void set(const std::string& key, std::string value);

  bool has(const std::string& key) const { return values_.contains(key); }
  std::string str(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  double real(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::vector<double> real_list(const std::string& key) const;
  std::vector<std::uint64_t> integer_list(const std::string& key) const;

  /// Sorted `key = value` lines; strings quoted.
  std::string to_text() const;

  ModelConfig model(std::size_t vocab_size) const;
  /// `section` is "pretrain" or "finetune".
  TrainConfig train(const std::string& section) const;
  SamplingConfig sampling() const;

 private:
  void assign(const std::string& key, std::string value, std::string_view origin);

  std::map<std::string, std::string> values_;
};

}  // namespace adaptlm::cli
