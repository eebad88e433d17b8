#include "config.hpp"

#include <charconv>
#include <sstream>

#include <fmt/format.h>

#include "adaptlm/binary_io.hpp"
#include "adaptlm/error.hpp"

namespace adaptlm::cli {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// Strips a trailing comment that is not inside a quoted string.
std::string_view strip_comment(std::string_view line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

std::string unquote(std::string_view v, std::string_view origin) {
  if (v.size() < 2 || v.front() != '"' || v.back() != '"') return std::string(v);
  std::string out;
  for (std::size_t i = 1; i + 1 < v.size(); ++i) {
    if (v[i] == '\\' && i + 2 < v.size()) {
      const char e = v[++i];
      out += e == 'n' ? '\n' : e == 't' ? '\t' : e;
    } else if (v[i] == '"') {
      throw Error(ErrorCode::format, fmt::format("{}: stray quote in {}", origin, v));
    } else {
      out += v[i];
    }
  }
  return out;
}

bool looks_numeric_or_bool(std::string_view v) {
  if (v == "true" || v == "false") return true;
  double d = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
  return ec == std::errc{} && p == v.data() + v.size();
}

std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    const auto item = trim(v.substr(0, comma));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

template <class T>
T parse_number(std::string_view text, const std::string& key) {
  T out{};
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc{} || p != text.data() + text.size()) {
    throw Error(ErrorCode::invalid_argument, fmt::format("config key '{}': '{}' is not a valid number", key, text));
  }
  return out;
}

}  // namespace

Config Config::defaults() {
  Config c;
  const std::vector<std::pair<std::string, std::string>> entries{
      {"seed", "0"},
      {"workers", "1"},
      {"corpus.fields", "Materials Science"},
      {"corpus.chunk_window", "512"},
      {"corpus.general_fraction", "0.1"},
      {"corpus.holdout", "0.01"},
      {"corpus.shard_capacity", "65536"},
      {"tokenizer.vocab_size", "512"},
      {"tokenizer.sample_bytes", "1000000"},
      {"model.d_model", "64"},
      {"model.n_layers", "2"},
      {"model.n_heads", "4"},
      {"model.max_seq_len", "128"},
      {"model.mlp_hidden", "256"},
      {"model.rope_base", "10000"},
      {"model.norm_epsilon", "1e-05"},
      {"pretrain.per_device_batch", "8"},
      {"pretrain.grad_accum_steps", "1"},
      {"pretrain.epochs", "1"},
      {"pretrain.max_seq_len", "128"},
      {"pretrain.peak_lr", "0.003"},
      {"pretrain.warmup_ratio", "0.3"},
      {"pretrain.floor_lr", "0"},
      {"pretrain.max_steps", "0"},
      {"pretrain.log_every", "10"},
      {"pretrain.eval_every", "0"},
      {"pretrain.checkpoint_every", "0"},
      {"pretrain.clip_norm", "1"},
      {"pretrain.beta1", "0.9"},
      {"pretrain.beta2", "0.999"},
      {"pretrain.epsilon", "1e-08"},
      {"pretrain.weight_decay", "0"},
      {"finetune.per_device_batch", "1"},
      {"finetune.grad_accum_steps", "1"},
      {"finetune.epochs", "15"},
      {"finetune.max_seq_len", "128"},
      {"finetune.peak_lr", "0.001"},
      {"finetune.warmup_ratio", "0.05"},
      {"finetune.floor_lr", "0"},
      {"finetune.max_steps", "0"},
      {"finetune.log_every", "10"},
      {"finetune.eval_every", "0"},
      {"finetune.checkpoint_every", "0"},
      {"finetune.clip_norm", "1"},
      {"finetune.beta1", "0.9"},
      {"finetune.beta2", "0.999"},
      {"finetune.epsilon", "1e-08"},
      {"finetune.weight_decay", "0"},
      {"collapse.peak_lrs", "0.5, 1, 2"},
      {"collapse.warmup_ratios", "0, 0.3"},
      {"collapse.seeds", "1, 2, 3, 4, 5"},
      {"collapse.max_steps", "150"},
      {"collapse.factor", "3"},
      {"generate.max_new_tokens", "64"},
      {"generate.temperature", "0.8"},
      {"generate.top_k", "40"},
  };
  for (const auto& [k, v] : entries) c.values_[k] = v;
  return c;
}

void Config::assign(const std::string& key, std::string value, std::string_view origin) {
  if (!values_.contains(key)) throw Error(ErrorCode::invalid_argument, fmt::format("{}: unknown config key '{}'", origin, key));
  values_[key] = std::move(value);
}

void Config::merge_file(const std::string& path) { merge_text(read_text_file(path), path); }

void Config::merge_text(std::string_view text, std::string_view origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::string section;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto body = trim(strip_comment(line));
    if (body.empty()) continue;
    const auto where = fmt::format("{}:{}", origin, number);
    if (body.front() == '[') {
      if (body.back() != ']') throw Error(ErrorCode::format, fmt::format("{}: unterminated section header", where));
      section = std::string(trim(body.substr(1, body.size() - 2)));
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw Error(ErrorCode::format, fmt::format("{}: expected key = value", where));
    const auto key = std::string(trim(body.substr(0, eq)));
    const auto raw = trim(body.substr(eq + 1));
    if (key.empty() || raw.empty()) throw Error(ErrorCode::format, fmt::format("{}: empty key or value", where));
    assign(section.empty() ? key : section + "." + key, unquote(raw, where), where);
  }
}

void Config::set_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw Error(ErrorCode::invalid_argument, fmt::format("--set expects key=value, got '{}'", assignment));
  }
  assign(std::string(trim(assignment.substr(0, eq))), unquote(trim(assignment.substr(eq + 1)), "--set"), "--set");
}

void Config::set(const std::string& key, std::string value) { assign(key, std::move(value), "flag"); }

std::string Config::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorCode::invalid_argument, fmt::format("missing config key '{}'", key));
  return it->second;
}

std::int64_t Config::integer(const std::string& key) const { return parse_number<std::int64_t>(str(key), key); }

std::size_t Config::count(const std::string& key) const {
  const auto v = integer(key);
  if (v < 0) throw Error(ErrorCode::invalid_argument, fmt::format("config key '{}' must be non-negative", key));
  return static_cast<std::size_t>(v);
}

double Config::real(const std::string& key) const { return parse_number<double>(str(key), key); }

bool Config::boolean(const std::string& key) const {
  const auto v = str(key);
  if (v == "true") return true;
  if (v == "false") return false;
  throw Error(ErrorCode::invalid_argument, fmt::format("config key '{}': '{}' is not a boolean", key, v));
}

std::vector<double> Config::real_list(const std::string& key) const {
  std::vector<double> out;
  const auto text = str(key);
  for (const auto item : split_list(text)) out.push_back(parse_number<double>(item, key));
  return out;
}

std::vector<std::uint64_t> Config::integer_list(const std::string& key) const {
  std::vector<std::uint64_t> out;
  const auto text = str(key);
  for (const auto item : split_list(text)) out.push_back(parse_number<std::uint64_t>(item, key));
  return out;
}

std::string Config::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) {
    if (looks_numeric_or_bool(v)) {
      out += fmt::format("{} = {}\n", k, v);
    } else {
      std::string escaped;
      for (const char ch : v) {
        if (ch == '"' || ch == '\\') escaped += '\\';
        escaped += ch == '\n' ? std::string("\\n") : std::string(1, ch);
      }
      out += fmt::format("{} = \"{}\"\n", k, escaped);
    }
  }
  return out;
}

ModelConfig Config::model(std::size_t vocab_size) const {
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.d_model = count("model.d_model");
  m.n_layers = count("model.n_layers");
  m.n_heads = count("model.n_heads");
  m.max_seq_len = count("model.max_seq_len");
  m.mlp_hidden = count("model.mlp_hidden");
  m.rope_base = real("model.rope_base");
  m.norm_epsilon = real("model.norm_epsilon");
  m.validate();
  return m;
}

TrainConfig Config::train(const std::string& s) const {
  TrainConfig t;
  t.stage = s == "finetune" ? Stage::finetune : Stage::pretrain;
  t.per_device_batch = count(s + ".per_device_batch");
  t.grad_accum_steps = count(s + ".grad_accum_steps");
  t.epochs = count(s + ".epochs");
  t.max_seq_len = count(s + ".max_seq_len");
  t.schedule.peak_lr = real(s + ".peak_lr");
  t.schedule.warmup_ratio = real(s + ".warmup_ratio");
  t.schedule.floor_lr = real(s + ".floor_lr");
  t.max_steps = integer(s + ".max_steps");
  t.log_every = count(s + ".log_every");
  t.eval_every = count(s + ".eval_every");
  t.checkpoint_every = count(s + ".checkpoint_every");
  t.clip_norm = real(s + ".clip_norm");
  t.adamw.beta1 = real(s + ".beta1");
  t.adamw.beta2 = real(s + ".beta2");
  t.adamw.epsilon = real(s + ".epsilon");
  t.adamw.weight_decay = real(s + ".weight_decay");
  t.seed = static_cast<std::uint64_t>(integer("seed"));
  return t;
}

SamplingConfig Config::sampling() const {
  SamplingConfig s;
  s.max_new_tokens = count("generate.max_new_tokens");
  s.temperature = real("generate.temperature");
  s.top_k = count("generate.top_k");
  s.seed = static_cast<std::uint64_t>(integer("seed"));
  s.validate();
  return s;
}

}  // namespace adaptlm::cli
