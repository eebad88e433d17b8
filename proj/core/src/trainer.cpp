#include "adaptlm/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include <fmt/format.h>

namespace adaptlm {

std::vector<TrainingSequence> sequences_from_blocks(const PackedBlocks& blocks) {
  std::vector<TrainingSequence> out;
  out.reserve(blocks.block_count());
  for (std::size_t b = 0; b < blocks.block_count(); ++b) {
    const auto block = blocks.block(b);
    out.push_back({std::vector<TokenId>(block.begin(), block.end()), std::vector<std::uint8_t>(block.size(), 1)});
  }
  return out;
}

std::vector<TrainingSequence> sequences_from_examples(std::span<const RenderedExample> examples) {
  std::vector<TrainingSequence> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back({e.tokens, e.mask});
  return out;
}

TokenBatch collate(std::span<const TrainingSequence> data, std::span<const std::size_t> indices, TokenId pad) {
  TokenBatch batch;
  batch.batch = indices.size();
  for (const auto i : indices) batch.seq = std::max(batch.seq, data[i].tokens.size());
  batch.tokens.assign(batch.batch * batch.seq, pad);
  batch.mask.assign(batch.batch * batch.seq, 0);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& s = data[indices[b]];
    std::copy(s.tokens.begin(), s.tokens.end(), batch.tokens.begin() + static_cast<std::ptrdiff_t>(b * batch.seq));
    std::copy(s.mask.begin(), s.mask.end(), batch.mask.begin() + static_cast<std::ptrdiff_t>(b * batch.seq));
  }
  return batch;
}

void TrainConfig::validate() const {
  if (per_device_batch < 1) throw Error(ErrorCode::invalid_argument, "per_device_batch must be at least 1");
  if (grad_accum_steps < 1) throw Error(ErrorCode::invalid_argument, "grad_accum_steps must be at least 1");
  if (epochs < 1) throw Error(ErrorCode::invalid_argument, "epochs must be at least 1");
  if (max_seq_len < 2) throw Error(ErrorCode::invalid_argument, "max_seq_len must be at least 2");
  if (log_every < 1) throw Error(ErrorCode::invalid_argument, "log_every must be at least 1");
  if (max_steps < 0 || stop_after < 0) throw Error(ErrorCode::invalid_argument, "step limits must be non-negative");
}

TrainingPlan plan_training(const TrainConfig& config, std::size_t n_sequences) {
  config.validate();
  if (n_sequences == 0) throw Error(ErrorCode::invalid_argument, "training data is empty");
  TrainingPlan plan;
  plan.micro_batches_per_epoch = (n_sequences + config.per_device_batch - 1) / config.per_device_batch;
  plan.steps_per_epoch =
      static_cast<std::int64_t>((plan.micro_batches_per_epoch + config.grad_accum_steps - 1) / config.grad_accum_steps);
  plan.total_steps = plan.steps_per_epoch * static_cast<std::int64_t>(config.epochs);
  if (config.max_steps > 0) plan.total_steps = std::min(plan.total_steps, config.max_steps);
  return plan;
}

std::string LossLog::to_csv() const {
  std::string out(kHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},", r.step, r.tokens_seen, r.lr, r.train_loss);
    if (r.val_ppl) out += fmt::format("{}", *r.val_ppl);
    out += '\n';
  }
  return out;
}

LossLog LossLog::from_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw Error(ErrorCode::format, "loss log: bad header");
  LossLog log;
  auto num = [](std::string_view s, auto& v) {
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
      throw Error(ErrorCode::format, fmt::format("loss log: bad number '{}'", s));
    }
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        f.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (f.size() != 5) throw Error(ErrorCode::format, fmt::format("loss log: expected 5 fields in '{}'", line));
    LossLogRow r;
    num(f[0], r.step);
    num(f[1], r.tokens_seen);
    num(f[2], r.lr);
    num(f[3], r.train_loss);
    if (!f[4].empty()) {
      double v = 0;
      num(f[4], v);
      r.val_ppl = v;
    }
    log.rows.push_back(r);
  }
  return log;
}

TrainingCollapse::TrainingCollapse(std::int64_t step, double lr, const std::string& detail)
    : NumericError(fmt::format("training collapsed at step {} (lr {}): {}", step, lr, detail)), step_(step), lr_(lr) {}

template <Real T>
LossAndGrad<T> accumulate_gradients(const ModelConfig& config, const ParameterSet<T>& params,
                                    std::span<const TokenBatch> micro_batches) {
  std::size_t total_targets = 0;
  for (const auto& mb : micro_batches) total_targets += mb.target_count();
  if (total_targets == 0) throw Error(ErrorCode::invalid_argument, "optimizer step has no target tokens");
  LossAndGrad<T> out;
  out.grads = params.zeros();
  out.target_count = total_targets;
  for (const auto& mb : micro_batches) {
    if (mb.target_count() == 0) continue;
    const auto part = lm_loss_and_grad(config, params, mb, static_cast<double>(total_targets));
    out.loss += part.loss;
    for (std::size_t i = 0; i < out.grads.size(); ++i) {
      auto dst = out.grads[i].data();
      const auto src = part.grads[i].data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }
  return out;
}

template LossAndGrad<float> accumulate_gradients<float>(const ModelConfig&, const ParameterSet<float>&,
                                                        std::span<const TokenBatch>);
template LossAndGrad<double> accumulate_gradients<double>(const ModelConfig&, const ParameterSet<double>&,
                                                          std::span<const TokenBatch>);

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch, std::string& rng_state) {
  std::mt19937_64 rng(seed + epoch);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  std::ostringstream state;
  state << rng;
  rng_state = state.str();
  return order;
}

}  // namespace

TrainResult train(const TrainConfig& config, std::span<const TrainingSequence> data, Checkpoint start,
                  const TrainHooks& hooks) {
  const auto plan = plan_training(config, data.size());
  ScheduleConfig schedule = config.schedule;
  schedule.total_steps = plan.total_steps;
  if (config.allow_zero_lr && schedule.peak_lr == 0.0) {
    ScheduleConfig probe = schedule;
    probe.peak_lr = 1.0;
    probe.validate();
  } else {
    schedule.validate();
  }
  for (const auto& s : data) {
    if (s.tokens.size() < 2 || s.tokens.size() > std::min(config.max_seq_len, start.model.max_seq_len)) {
      throw Error(ErrorCode::invalid_argument,
                  fmt::format("training sequence of length {} outside [2, {}]", s.tokens.size(),
                              std::min(config.max_seq_len, start.model.max_seq_len)));
    }
    if (s.mask.size() != s.tokens.size()) throw Error(ErrorCode::invalid_argument, "sequence mask length mismatch");
  }

  Checkpoint ckpt = std::move(start);
  if (ckpt.step > 0) {
    if (!(ckpt.schedule == schedule) || ckpt.seed != config.seed || !(ckpt.optimizer.config == config.adamw)) {
      throw Error(ErrorCode::invalid_argument, "resumed checkpoint was trained with a different schedule, seed or optimizer");
    }
  } else {
    ckpt.optimizer = AdamWState<float>::init(ckpt.params, config.adamw);
    ckpt.tokens_seen = 0;
    ckpt.window_loss_sum = 0.0;
    ckpt.window_steps = 0;
  }
  ckpt.schedule = schedule;
  ckpt.seed = config.seed;
  ckpt.stage = config.stage;

  TrainResult result;
  std::optional<std::size_t> cached_epoch;
  std::vector<std::size_t> order;
  const auto batch_size = config.per_device_batch;

  while (ckpt.step < plan.total_steps) {
    if (config.stop_after > 0 && ckpt.step >= config.stop_after) break;
    const auto step = ckpt.step;
    const auto epoch = static_cast<std::size_t>(step / plan.steps_per_epoch);
    const auto step_in_epoch = static_cast<std::size_t>(step % plan.steps_per_epoch);
    if (cached_epoch != epoch) {
      order = epoch_order(data.size(), config.seed, epoch, ckpt.rng_state);
      cached_epoch = epoch;
    }

    std::vector<TokenBatch> micro;
    const auto first_mb = step_in_epoch * config.grad_accum_steps;
    const auto last_mb = std::min(plan.micro_batches_per_epoch, first_mb + config.grad_accum_steps);
    for (auto mb = first_mb; mb < last_mb; ++mb) {
      const auto begin = mb * batch_size;
      const auto end = std::min(order.size(), begin + batch_size);
      micro.push_back(collate(data, std::span(order).subspan(begin, end - begin)));
    }

    const double lr = lr_at(step, schedule);
    LossAndGrad<float> lg;
    double grad_norm = 0.0;
    try {
      lg = accumulate_gradients<float>(ckpt.model, ckpt.params, micro);
      if (!std::isfinite(lg.loss)) throw NumericError("loss is not finite");
      grad_norm = config.clip_norm > 0.0 ? clip_grad_norm(lg.grads, config.clip_norm) : global_norm(lg.grads);
      adamw_step(ckpt.params, lg.grads, ckpt.optimizer, lr);
    } catch (const TrainingCollapse&) {
      throw;
    } catch (const NumericError& e) {
      throw TrainingCollapse(step, lr, e.what());
    }

    ckpt.step = step + 1;
    ckpt.tokens_seen += static_cast<std::int64_t>(lg.target_count);
    ckpt.window_loss_sum += lg.loss;
    ckpt.window_steps += 1;

    bool keep_going = true;
    if (hooks.on_step) {
      keep_going = hooks.on_step({step, lr, lg.loss, grad_norm, static_cast<std::int64_t>(lg.target_count)});
    }

    const bool last = ckpt.step == plan.total_steps;
    if (ckpt.step % static_cast<std::int64_t>(config.log_every) == 0 || last) {
      LossLogRow row{step, ckpt.tokens_seen, lr, ckpt.window_loss_sum / static_cast<double>(ckpt.window_steps), {}};
      const bool eval_due =
          last || (config.eval_every > 0 && ckpt.step % static_cast<std::int64_t>(config.eval_every) == 0);
      if (hooks.validation && eval_due) row.val_ppl = perplexity(ckpt.model, ckpt.params, *hooks.validation).perplexity();
      result.log.rows.push_back(row);
      ckpt.window_loss_sum = 0.0;
      ckpt.window_steps = 0;
    }
    if (config.checkpoint_every > 0 && !config.checkpoint_dir.empty() &&
        ckpt.step % static_cast<std::int64_t>(config.checkpoint_every) == 0) {
      save_checkpoint(ckpt, config.checkpoint_dir / fmt::format("step-{:08d}.ckpt", ckpt.step));
    }
    if (!keep_going) break;
  }

  result.completed = ckpt.step == plan.total_steps;
  result.checkpoint = std::move(ckpt);
  return result;
}

std::size_t CollapseCell::collapsed_count() const {
  return static_cast<std::size_t>(std::count(collapsed.begin(), collapsed.end(), true));
}

const CollapseCell& CollapseReport::cell(double peak_lr, double warmup_ratio) const {
  for (const auto& c : cells) {
    if (c.peak_lr == peak_lr && c.warmup_ratio == warmup_ratio) return c;
  }
  throw Error(ErrorCode::invalid_argument, fmt::format("no collapse-study cell for lr {} warmup {}", peak_lr, warmup_ratio));
}

std::string CollapseReport::to_text() const {
  std::string s = "peak_lr,warmup_ratio,runs,collapsed,converged\n";
  for (const auto& c : cells) {
    s += fmt::format("{},{},{},{},{}\n", c.peak_lr, c.warmup_ratio, c.collapsed.size(), c.collapsed_count(),
                     c.converged_count());
  }
  return s;
}

CollapseReport run_collapse_study(const CollapseStudyConfig& config, std::span<const TrainingSequence> data,
                                  const std::string& tokenizer_fingerprint) {
  if (std::count(config.warmup_ratios.begin(), config.warmup_ratios.end(), 0.0) == 0 ||
      config.warmup_ratios.size() < 2) {
    throw Error(ErrorCode::invalid_argument, "collapse study needs at least two warmup ratios, including 0");
  }
  if (config.peak_lrs.empty() || config.seeds.empty()) {
    throw Error(ErrorCode::invalid_argument, "collapse study needs at least one learning rate and seed");
  }
  CollapseReport report;
  for (const auto lr : config.peak_lrs) {
    for (const auto ratio : config.warmup_ratios) {
      CollapseCell cell;
      cell.peak_lr = lr;
      cell.warmup_ratio = ratio;
      for (const auto seed : config.seeds) {
        TrainConfig tc = config.train;
        tc.seed = seed;
        tc.clip_norm = 0.0;
        tc.schedule.peak_lr = lr;
        tc.schedule.warmup_ratio = ratio;
        tc.allow_zero_lr = true;
        tc.checkpoint_every = 0;

        auto ckpt = fresh_checkpoint(config.model, init_params<float>(config.model, seed), tokenizer_fingerprint);
        double initial = std::numeric_limits<double>::quiet_NaN();
        double final_loss = std::numeric_limits<double>::quiet_NaN();
        bool collapsed = false;
        TrainHooks hooks;
        hooks.on_step = [&](const StepRecord& r) {
          if (std::isnan(initial)) initial = r.loss;
          if (!std::isfinite(r.loss) || r.loss > config.collapse_factor * initial) {
            collapsed = true;
            return false;
          }
          final_loss = r.loss;
          return true;
        };
        try {
          train(tc, data, std::move(ckpt), hooks);
        } catch (const TrainingCollapse&) {
          collapsed = true;
        }
        cell.seeds.push_back(seed);
        cell.collapsed.push_back(collapsed);
        cell.final_loss.push_back(collapsed ? std::numeric_limits<double>::quiet_NaN() : final_loss);
      }
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

}  // namespace adaptlm
