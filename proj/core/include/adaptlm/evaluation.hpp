#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adaptlm/checkpoint.hpp"
#include "adaptlm/corpus.hpp"

namespace adaptlm {

/// Perplexity = exp(total_nll / token_count), over every next-token target.
struct EvalReport {
  std::string dataset_id;
  std::string checkpoint_id;
  std::int64_t token_count = 0;
  double total_nll = 0.0;

  double perplexity() const;
  double mean_nll() const;
  std::string to_text() const;
};

/// Pools reports by summing NLL and token counts.
EvalReport pool_reports(std::span<const EvalReport> reports, std::string dataset_id = "pooled");

EvalReport perplexity(const ModelConfig& config, const ParameterSet<float>& params, const PackedBlocks& blocks,
                      std::string dataset_id = {}, std::string checkpoint_id = {});
EvalReport perplexity(const Checkpoint& checkpoint, const PackedBlocks& blocks, std::string dataset_id = {});

struct ForgettingArm {
  EvalReport general;
  EvalReport domain;
};

/// General/domain perplexity of a base model and of two adapted models that
/// differ only in how much general data was replayed during adaptation.
struct ForgettingReport {
  ForgettingArm base;
  ForgettingArm with_mix;
  ForgettingArm without_mix;

  double general_delta_with_mix() const { return with_mix.general.perplexity() - base.general.perplexity(); }
  double general_delta_without_mix() const { return without_mix.general.perplexity() - base.general.perplexity(); }
  double domain_delta_with_mix() const { return with_mix.domain.perplexity() - base.domain.perplexity(); }
  double domain_delta_without_mix() const { return without_mix.domain.perplexity() - base.domain.perplexity(); }
  /// True when replay left general perplexity less degraded than no replay.
  bool mixing_reduces_forgetting() const { return general_delta_with_mix() < general_delta_without_mix(); }
  std::string to_text() const;
};

ForgettingReport forgetting_probe(const Checkpoint& base, const Checkpoint& with_mix, const Checkpoint& without_mix,
                                  const PackedBlocks& general_val, const PackedBlocks& domain_val);

}  // namespace adaptlm
