#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adaptlm/checkpoint.hpp"
#include "adaptlm/corpus.hpp"
#include "adaptlm/error.hpp"
#include "adaptlm/evaluation.hpp"
#include "adaptlm/instructions.hpp"

namespace adaptlm {

/// One training example: tokens plus a per-position target mask (see TokenBatch).
struct TrainingSequence {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> mask;
};

std::vector<TrainingSequence> sequences_from_blocks(const PackedBlocks& blocks);
std::vector<TrainingSequence> sequences_from_examples(std::span<const RenderedExample> examples);

/// Right-pads the selected sequences to the longest one; padding is masked out.
TokenBatch collate(std::span<const TrainingSequence> data, std::span<const std::size_t> indices,
                   TokenId pad = BpeVocab::special(SpecialToken::pad));

struct TrainConfig {
  Stage stage = Stage::pretrain;
  std::size_t per_device_batch = 2;
  std::size_t grad_accum_steps = 1;
  std::size_t epochs = 1;
  std::size_t max_seq_len = 256;
  /// total_steps is derived from data size and epochs unless max_steps caps it.
  ScheduleConfig schedule;
  AdamWConfig adamw;
  std::uint64_t seed = 0;
  /// Rows are written every log_every optimizer steps, averaging the window.
  std::size_t log_every = 100;
  /// Validation perplexity every eval_every steps (0: only at the end).
  std::size_t eval_every = 0;
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
  /// Global-norm gradient clip; <= 0 disables.
  double clip_norm = 1.0;
  std::int64_t max_steps = 0;
  /// Pause after this many completed steps without changing the schedule.
  std::int64_t stop_after = 0;
  /// Permits peak_lr == 0, for control runs.
  bool allow_zero_lr = false;

  void validate() const;
};

struct TrainingPlan {
  std::size_t micro_batches_per_epoch = 0;
  std::int64_t steps_per_epoch = 0;
  std::int64_t total_steps = 0;
};

TrainingPlan plan_training(const TrainConfig& config, std::size_t n_sequences);

struct LossLogRow {
  std::int64_t step = 0;
  std::int64_t tokens_seen = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_ppl;
  friend bool operator==(const LossLogRow&, const LossLogRow&) = default;
};

struct LossLog {
  static constexpr std::string_view kHeader = "step,tokens_seen,lr,train_loss,val_ppl";
  std::vector<LossLogRow> rows;

  std::string to_csv() const;
  static LossLog from_csv(std::string_view text);
  void append(const LossLog& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }
  friend bool operator==(const LossLog&, const LossLog&) = default;
};

struct StepRecord {
  std::int64_t step = 0;  // 0-based index of the optimizer step just taken
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::int64_t tokens = 0;
};

struct TrainHooks {
  /// Called after every optimizer step; returning false stops training.
  std::function<bool(const StepRecord&)> on_step;
  /// Held-out blocks for the val_ppl column.
  const PackedBlocks* validation = nullptr;
};

/// Raised when the loss or an update goes non-finite.
class TrainingCollapse : public NumericError {
 public:
  TrainingCollapse(std::int64_t step, double lr, const std::string& detail);
  std::int64_t step() const noexcept { return step_; }
  double lr() const noexcept { return lr_; }

 private:
  std::int64_t step_;
  double lr_;
};

struct TrainResult {
  Checkpoint checkpoint;
  LossLog log;
  bool completed = false;
};

/// Token-weighted gradient over micro-batches: each micro-batch loss is its
/// masked NLL sum divided by the target count of all micro-batches together,
/// so the summed gradient equals the full-batch gradient.
template <Real T>
LossAndGrad<T> accumulate_gradients(const ModelConfig& config, const ParameterSet<T>& params,
                                    std::span<const TokenBatch> micro_batches);

/// Continues `start` (fresh or mid-run) until the planned step count, a pause
/// point, or an observer stop. Micro-batch order for epoch e is a permutation
/// seeded with seed + e, so resuming reproduces the uninterrupted run exactly.
TrainResult train(const TrainConfig& config, std::span<const TrainingSequence> data, Checkpoint start,
                  const TrainHooks& hooks = {});

struct CollapseStudyConfig {
  std::vector<double> peak_lrs;
  std::vector<double> warmup_ratios;
  std::vector<std::uint64_t> seeds;
  ModelConfig model;
  /// Base training settings; schedule, seed and clipping are set per run.
  TrainConfig train;
  /// A run collapses if its loss goes non-finite or exceeds factor * initial loss.
  double collapse_factor = 3.0;
};

struct CollapseCell {
  double peak_lr = 0.0;
  double warmup_ratio = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<bool> collapsed;
  std::vector<double> final_loss;  // NaN for collapsed runs stopped early

  std::size_t collapsed_count() const;
  std::size_t converged_count() const { return collapsed.size() - collapsed_count(); }
};

struct CollapseReport {
  std::vector<CollapseCell> cells;
  const CollapseCell& cell(double peak_lr, double warmup_ratio) const;
  std::string to_text() const;
};

/// Trains one run per (lr, warmup ratio, seed) with clipping disabled.
CollapseReport run_collapse_study(const CollapseStudyConfig& config, std::span<const TrainingSequence> data,
                                  const std::string& tokenizer_fingerprint = {});

}  // namespace adaptlm
