#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adaptlm/instructions.hpp"
#include "adaptlm/model.hpp"
#include "adaptlm/optim.hpp"

namespace adaptlm {

enum class Stage : std::uint8_t { pretrain, finetune };

std::string_view to_string(Stage stage) noexcept;
Stage parse_stage(std::string_view text);

/// Everything needed to resume training bit-exactly or to serve generation.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  Stage stage = Stage::pretrain;
  ModelConfig model;
  ParameterSet<float> params;
  AdamWState<float> optimizer;
  ScheduleConfig schedule;
  std::int64_t step = 0;
  std::int64_t tokens_seen = 0;
  std::uint64_t seed = 0;
  std::string rng_state;
  std::string tokenizer_fingerprint;
  /// Set for instruction-tuned checkpoints; generation renders prompts through it.
  std::optional<PromptTemplate> prompt_template;
  /// Partially filled loss-log window, carried across a pause/resume.
  double window_loss_sum = 0.0;
  std::int64_t window_steps = 0;

  /// Content hash of the serialized checkpoint.
  std::string id() const;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// A checkpoint at step 0 with fresh optimizer state.
Checkpoint fresh_checkpoint(const ModelConfig& model, ParameterSet<float> params, std::string tokenizer_fingerprint,
                            Stage stage = Stage::pretrain);

/// Start a new stage from a finished one: keep the weights, reset the optimizer,
/// step counter and loss window.
Checkpoint begin_stage(const Checkpoint& previous, Stage stage);

/// File layout: "QKCK", u32 version, length-prefixed key=value config block,
/// named f32 tensors (parameters, then "adam.m.*" and "adam.v.*" moments),
/// length-prefixed RNG state, trailing CRC-32 of everything before it.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws ErrorCode::fingerprint_mismatch when the two differ.
void require_same_tokenizer(std::string_view expected, std::string_view actual, std::string_view what);

}  // namespace adaptlm
