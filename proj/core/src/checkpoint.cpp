#include "adaptlm/checkpoint.hpp"

#include <charconv>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "adaptlm/binary_io.hpp"
#include "adaptlm/error.hpp"

namespace adaptlm {

namespace {

constexpr std::string_view kMagic = "QKCK";

std::string escape(std::string_view s) {
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

std::string unescape(std::string_view s) {
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

class ConfigBlock {
 public:
  explicit ConfigBlock(std::string_view text) {
    std::istringstream in{std::string(text)};
    for (std::string line; std::getline(in, line);) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::format, fmt::format("checkpoint config: bad line '{}'", line));
      values_[line.substr(0, eq)] = unescape(line.substr(eq + 1));
    }
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw Error(ErrorCode::format, fmt::format("checkpoint config: missing '{}'", key));
    return it->second;
  }

  template <typename N>
  N num(const std::string& key) const {
    const auto& s = str(key);
    N v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
      throw Error(ErrorCode::format, fmt::format("checkpoint config: bad number for '{}': '{}'", key, s));
    }
    return v;
  }

 private:
  std::map<std::string, std::string> values_;
};

void write_tensor(ByteWriter& w, const std::string& name, const Tensor<float>& t) {
  w.string(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (const auto d : t.shape()) w.u64(d);
  w.f32_array(t.data());
}

Tensor<float> read_tensor(ByteReader& r, const std::string& expected_name, const Shape& expected_shape) {
  const auto at = r.offset();
  const auto name = r.string();
  if (name != expected_name) {
    throw FormatError(fmt::format("expected tensor '{}', found '{}'", expected_name, name), at);
  }
  const auto rank = r.u32();
  Shape shape(rank);
  for (auto& d : shape) d = r.u64();
  if (shape != expected_shape) {
    throw FormatError(fmt::format("tensor '{}' has shape {}, config implies {}", name, shape_string(shape),
                                  shape_string(expected_shape)),
                      at);
  }
  Tensor<float> t(shape);
  r.f32_array(t.data());
  return t;
}

std::string config_text(const Checkpoint& c) {
  std::string s;
  auto kv = [&s](std::string_view k, const auto& v) { s += fmt::format("{}={}\n", k, v); };
  kv("stage", to_string(c.stage));
  kv("model.vocab_size", c.model.vocab_size);
  kv("model.d_model", c.model.d_model);
  kv("model.n_layers", c.model.n_layers);
  kv("model.n_heads", c.model.n_heads);
  kv("model.max_seq_len", c.model.max_seq_len);
  kv("model.mlp_hidden", c.model.mlp_hidden);
  kv("model.rope_base", c.model.rope_base);
  kv("model.norm_epsilon", c.model.norm_epsilon);
  kv("model.init_seed", c.model.init_seed);
  kv("schedule.peak_lr", c.schedule.peak_lr);
  kv("schedule.warmup_ratio", c.schedule.warmup_ratio);
  kv("schedule.total_steps", c.schedule.total_steps);
  kv("schedule.floor_lr", c.schedule.floor_lr);
  kv("adamw.beta1", c.optimizer.config.beta1);
  kv("adamw.beta2", c.optimizer.config.beta2);
  kv("adamw.epsilon", c.optimizer.config.epsilon);
  kv("adamw.weight_decay", c.optimizer.config.weight_decay);
  kv("adamw.step", c.optimizer.step);
  kv("step", c.step);
  kv("tokens_seen", c.tokens_seen);
  kv("seed", c.seed);
  kv("tokenizer", c.tokenizer_fingerprint);
  kv("window_loss_sum", c.window_loss_sum);
  kv("window_steps", c.window_steps);
  if (c.prompt_template) kv("prompt_template", escape(c.prompt_template->serialize()));
  return s;
}

}  // namespace

std::string_view to_string(Stage stage) noexcept { return stage == Stage::pretrain ? "pretrain" : "finetune"; }

Stage parse_stage(std::string_view text) {
  if (text == "pretrain") return Stage::pretrain;
  if (text == "finetune") return Stage::finetune;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown stage '{}'", text));
}

std::string Checkpoint::id() const {
  const auto bytes = encode_checkpoint(*this);
  Fnv1a h;
  h.update({reinterpret_cast<const char*>(bytes.data()), bytes.size()});
  return to_hex(h.value());
}

Checkpoint fresh_checkpoint(const ModelConfig& model, ParameterSet<float> params, std::string tokenizer_fingerprint,
                            Stage stage) {
  model.validate();
  Checkpoint c;
  c.stage = stage;
  c.model = model;
  c.optimizer = AdamWState<float>::init(params);
  c.params = std::move(params);
  c.tokenizer_fingerprint = std::move(tokenizer_fingerprint);
  return c;
}

Checkpoint begin_stage(const Checkpoint& previous, Stage stage) {
  Checkpoint c = fresh_checkpoint(previous.model, previous.params, previous.tokenizer_fingerprint, stage);
  c.optimizer.config = previous.optimizer.config;
  c.prompt_template = previous.prompt_template;
  return c;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  ByteWriter w;
  w.raw(kMagic);
  w.u32(Checkpoint::kFormatVersion);
  w.string(config_text(c));
  w.u32(static_cast<std::uint32_t>(c.params.size()));
  for (std::size_t i = 0; i < c.params.size(); ++i) write_tensor(w, c.params.name(i), c.params[i]);
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    write_tensor(w, "adam.m." + c.params.name(i), c.optimizer.first_moment[i]);
  }
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    write_tensor(w, "adam.v." + c.params.name(i), c.optimizer.second_moment[i]);
  }
  w.string(c.rng_state);
  w.u32(crc32(w.bytes()));
  return w.bytes();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < kMagic.size() || r.raw(kMagic.size()) != kMagic) throw FormatError("not a checkpoint (bad magic)", 0);
  if (const auto v = r.u32(); v != Checkpoint::kFormatVersion) {
    throw FormatError(fmt::format("unsupported checkpoint version {}", v), 4);
  }
  // Verify the checksum before trusting any length field.
  if (bytes.size() < 12) throw FormatError("checkpoint is truncated", bytes.size());
  {
    const auto crc_at = bytes.size() - 4;
    ByteReader tail(bytes.subspan(crc_at));
    const auto stored = tail.u32();
    const auto actual = crc32(bytes.first(crc_at));
    if (stored != actual) {
      throw FormatError(fmt::format("checksum mismatch: stored {:08x}, computed {:08x}", stored, actual), crc_at);
    }
  }
  const ConfigBlock cfg(r.string());

  Checkpoint c;
  c.stage = parse_stage(cfg.str("stage"));
  c.model.vocab_size = cfg.num<std::size_t>("model.vocab_size");
  c.model.d_model = cfg.num<std::size_t>("model.d_model");
  c.model.n_layers = cfg.num<std::size_t>("model.n_layers");
  c.model.n_heads = cfg.num<std::size_t>("model.n_heads");
  c.model.max_seq_len = cfg.num<std::size_t>("model.max_seq_len");
  c.model.mlp_hidden = cfg.num<std::size_t>("model.mlp_hidden");
  c.model.rope_base = cfg.num<double>("model.rope_base");
  c.model.norm_epsilon = cfg.num<double>("model.norm_epsilon");
  c.model.init_seed = cfg.num<std::uint64_t>("model.init_seed");
  c.model.validate();
  c.schedule.peak_lr = cfg.num<double>("schedule.peak_lr");
  c.schedule.warmup_ratio = cfg.num<double>("schedule.warmup_ratio");
  c.schedule.total_steps = cfg.num<std::int64_t>("schedule.total_steps");
  c.schedule.floor_lr = cfg.num<double>("schedule.floor_lr");
  c.optimizer.config.beta1 = cfg.num<double>("adamw.beta1");
  c.optimizer.config.beta2 = cfg.num<double>("adamw.beta2");
  c.optimizer.config.epsilon = cfg.num<double>("adamw.epsilon");
  c.optimizer.config.weight_decay = cfg.num<double>("adamw.weight_decay");
  c.optimizer.step = cfg.num<std::int64_t>("adamw.step");
  c.step = cfg.num<std::int64_t>("step");
  c.tokens_seen = cfg.num<std::int64_t>("tokens_seen");
  c.seed = cfg.num<std::uint64_t>("seed");
  c.tokenizer_fingerprint = cfg.str("tokenizer");
  c.window_loss_sum = cfg.num<double>("window_loss_sum");
  c.window_steps = cfg.num<std::int64_t>("window_steps");
  if (cfg.has("prompt_template")) c.prompt_template = PromptTemplate::deserialize(cfg.str("prompt_template"));

  const auto layout = ParameterSet<float>::zeros_like(c.model);
  const auto count_at = r.offset();
  if (const auto n = r.u32(); n != layout.size()) {
    throw FormatError(fmt::format("checkpoint holds {} tensors, config implies {}", n, layout.size()), count_at);
  }
  for (std::size_t i = 0; i < layout.size(); ++i) c.params.push(layout.name(i), read_tensor(r, layout.name(i), layout[i].shape()));
  c.optimizer.first_moment = layout.zeros();
  c.optimizer.second_moment = layout.zeros();
  for (std::size_t i = 0; i < layout.size(); ++i) {
    c.optimizer.first_moment[i] = read_tensor(r, "adam.m." + layout.name(i), layout[i].shape());
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    c.optimizer.second_moment[i] = read_tensor(r, "adam.v." + layout.name(i), layout[i].shape());
  }
  c.rng_state = r.string();
  if (r.remaining() != 4) throw FormatError("unexpected bytes before checksum", r.offset());
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  write_file_bytes(tmp, encode_checkpoint(ckpt));
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

void require_same_tokenizer(std::string_view expected, std::string_view actual, std::string_view what) {
  if (expected != actual) {
    throw Error(ErrorCode::fingerprint_mismatch,
                fmt::format("{}: tokenizer fingerprint {} does not match {}", what, actual, expected));
  }
}

}  // namespace adaptlm
