#include "adaptlm/evaluation.hpp"

#include <cmath>

#include <fmt/format.h>

#include "adaptlm/error.hpp"
#include "adaptlm/kernels.hpp"

namespace adaptlm {

double EvalReport::mean_nll() const {
  if (token_count <= 0) throw Error(ErrorCode::invalid_argument, "evaluation report has no tokens");
  return total_nll / static_cast<double>(token_count);
}

double EvalReport::perplexity() const { return std::exp(mean_nll()); }

std::string EvalReport::to_text() const {
  return fmt::format("dataset = {}\ncheckpoint = {}\ntokens = {}\ntotal_nll = {}\nperplexity = {}\n", dataset_id,
                     checkpoint_id, token_count, total_nll, perplexity());
}

EvalReport pool_reports(std::span<const EvalReport> reports, std::string dataset_id) {
  EvalReport out;
  out.dataset_id = std::move(dataset_id);
  for (const auto& r : reports) {
    out.token_count += r.token_count;
    out.total_nll += r.total_nll;
    if (out.checkpoint_id.empty()) out.checkpoint_id = r.checkpoint_id;
  }
  return out;
}

EvalReport perplexity(const ModelConfig& config, const ParameterSet<float>& params, const PackedBlocks& blocks,
                      std::string dataset_id, std::string checkpoint_id) {
  if (blocks.block_count() == 0) throw Error(ErrorCode::invalid_argument, "validation set has no blocks");
  EvalReport report;
  report.dataset_id = std::move(dataset_id);
  report.checkpoint_id = std::move(checkpoint_id);
  const auto len = blocks.block_length;
  const auto vocab = config.vocab_size;
  for (std::size_t b = 0; b < blocks.block_count(); ++b) {
    const auto block = blocks.block(b);
    const auto logits = forward(config, params, block, 1, len);
    for (std::size_t t = 0; t + 1 < len; ++t) {
      const auto target = block[t + 1];
      if (target < 0 || static_cast<std::size_t>(target) >= vocab) {
        throw Error(ErrorCode::out_of_range, fmt::format("target id {} outside vocabulary", target));
      }
      report.total_nll += kernels::row_nll(logits.ptr() + t * vocab, vocab, static_cast<std::size_t>(target));
    }
    report.token_count += static_cast<std::int64_t>(len - 1);
  }
  return report;
}

EvalReport perplexity(const Checkpoint& checkpoint, const PackedBlocks& blocks, std::string dataset_id) {
  return perplexity(checkpoint.model, checkpoint.params, blocks, std::move(dataset_id), checkpoint.id());
}

std::string ForgettingReport::to_text() const {
  std::string s;
  auto arm = [&s](std::string_view name, const ForgettingArm& a) {
    s += fmt::format("{}.general_ppl = {}\n{}.domain_ppl = {}\n", name, a.general.perplexity(), name, a.domain.perplexity());
  };
  arm("base", base);
  arm("with_mix", with_mix);
  arm("without_mix", without_mix);
  s += fmt::format("with_mix.general_delta = {}\n", general_delta_with_mix());
  s += fmt::format("without_mix.general_delta = {}\n", general_delta_without_mix());
  s += fmt::format("with_mix.domain_delta = {}\n", domain_delta_with_mix());
  s += fmt::format("without_mix.domain_delta = {}\n", domain_delta_without_mix());
  s += fmt::format("mixing_reduces_forgetting = {}\n", mixing_reduces_forgetting());
  return s;
}

ForgettingReport forgetting_probe(const Checkpoint& base, const Checkpoint& with_mix, const Checkpoint& without_mix,
                                  const PackedBlocks& general_val, const PackedBlocks& domain_val) {
  require_same_tokenizer(base.tokenizer_fingerprint, with_mix.tokenizer_fingerprint, "with-mix checkpoint");
  require_same_tokenizer(base.tokenizer_fingerprint, without_mix.tokenizer_fingerprint, "without-mix checkpoint");
  auto arm = [&](const Checkpoint& c) {
    return ForgettingArm{perplexity(c, general_val, "general-val"), perplexity(c, domain_val, "domain-val")};
  };
  return ForgettingReport{arm(base), arm(with_mix), arm(without_mix)};
}

}  // namespace adaptlm
