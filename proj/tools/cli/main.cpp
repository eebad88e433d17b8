#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "adaptlm/binary_io.hpp"
#include "adaptlm/checkpoint.hpp"
#include "adaptlm/corpus.hpp"
#include "adaptlm/error.hpp"
#include "adaptlm/evaluation.hpp"
#include "adaptlm/generation.hpp"
#include "adaptlm/instructions.hpp"
#include "adaptlm/trainer.hpp"
#include "config.hpp"
#include "run_dir.hpp"

namespace fs = std::filesystem;
using namespace adaptlm;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string out;
};

cli::Config resolve(const Common& c) {
  auto cfg = cli::Config::defaults();
  if (!c.config_file.empty()) cfg.merge_file(c.config_file);
  for (const auto& o : c.overrides) cfg.set_override(o);
  if (c.seed) cfg.set("seed", std::to_string(*c.seed));
  if (c.workers) cfg.set("workers", std::to_string(*c.workers));
  if (cfg.count("workers") == 0) throw Error(ErrorCode::invalid_argument, "workers must be at least 1");
  return cfg;
}

void add_common(CLI::App* cmd, Common& c, bool needs_out) {
  cmd->add_option("--config", c.config_file, "settings file (flat dotted keys)")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "override one setting, key=value");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--workers", c.workers, "worker threads for ingest and chunking");
  auto* out = cmd->add_option("--out", c.out, "run directory");
  if (needs_out) out->required();
}

std::string records_to_jsonl(std::span<const ArticleRecord> records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::json j{{"id", r.id},
                     {"title", r.title},
                     {"abstract", r.abstract_text},
                     {"body", r.body},
                     {"fields_of_study", r.fields_of_study}};
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<std::string> split_labels(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    auto item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty() || !fs::exists(path)) {
    throw Error(ErrorCode::io, fmt::format("{} '{}' does not exist", what, path));
  }
}

PackedBlocks load_blocks(const std::string& manifest_path, const Checkpoint& ckpt, std::size_t seq) {
  require_file(manifest_path, "manifest");
  const auto manifest = read_manifest(manifest_path);
  require_same_tokenizer(ckpt.tokenizer_fingerprint, manifest.tokenizer_fingerprint, manifest_path);
  return pack_sequences(read_chunks(manifest), std::min(seq, ckpt.model.max_seq_len));
}

TrainHooks logging_hooks(const TrainConfig& tc, const PackedBlocks* validation) {
  TrainHooks hooks;
  hooks.validation = validation;
  hooks.on_step = [every = std::max<std::size_t>(tc.log_every, 1)](const StepRecord& r) {
    if ((r.step + 1) % static_cast<std::int64_t>(every) == 0) {
      spdlog::info("step {} lr {:.3e} loss {:.4f} grad_norm {:.3f}", r.step, r.lr, r.loss, r.grad_norm);
    }
    return true;
  };
  return hooks;
}

void write_training_outputs(const cli::RunDir& run, const TrainResult& result) {
  save_checkpoint(result.checkpoint, run / "last.ckpt");
  write_text_file(run / "loss.csv", result.log.to_csv());
  spdlog::info("wrote {} ({} steps)", (run / "last.ckpt").string(), result.checkpoint.step);
}

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::vector<std::string> inputs;
  std::string fields;
};

int run_ingest(const Common& common, const IngestArgs& a) {
  auto cfg = resolve(common);
  if (!a.fields.empty()) cfg.set("corpus.fields", a.fields);
  cli::RunDir run(common.out, cfg, "ingest");
  const FieldFilter filter(split_labels(cfg.str("corpus.fields")));
  std::vector<ArticleRecord> kept;
  std::string report;
  for (const auto& input : a.inputs) {
    require_file(input, "input");
    const auto parsed = parse_articles(fs::path(input), filter, {}, cfg.count("workers"));
    const auto& s = parsed.stats;
    report += fmt::format("[{}]\nlines = {}\nkept = {}\nfiltered_out = {}\nempty_body = {}\nduplicates = {}\nmalformed = {}\n",
                          input, s.lines, s.kept, s.filtered_out, s.empty_body, s.duplicates, s.malformed);
    for (const auto& e : parsed.errors) spdlog::warn("{}:{}: {}", input, e.line, e.message);
    kept.insert(kept.end(), parsed.records.begin(), parsed.records.end());
    spdlog::info("{}: kept {} of {} lines", input, s.kept, s.lines);
  }
  write_text_file(run / "records.jsonl", records_to_jsonl(kept));
  write_text_file(run / "ingest.txt", report);
  std::printf("%s", report.c_str());
  return 0;
}

struct TokenizerArgs {
  std::vector<std::string> inputs;
};

int run_train_tokenizer(const Common& common, const TokenizerArgs& a) {
  const auto cfg = resolve(common);
  cli::RunDir run(common.out, cfg, "train-tokenizer");
  std::vector<std::vector<ArticleRecord>> per_input;
  for (const auto& input : a.inputs) {
    require_file(input, "input");
    // Records written by ingest already passed a filter; read them all.
    std::ifstream in(input);
    std::vector<ArticleRecord> records;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("body")) throw Error(ErrorCode::format, fmt::format("{}: malformed record", input));
      records.push_back({j.value("id", ""), "", "", j["body"].get<std::string>(), {}});
    }
    per_input.push_back(std::move(records));
  }
  // Round-robin across inputs so every source is represented in the sample.
  const auto budget = cfg.count("tokenizer.sample_bytes");
  std::vector<std::string> sample;
  std::size_t taken = 0;
  for (std::size_t i = 0; taken < budget; ++i) {
    bool any_left = false;
    for (const auto& records : per_input) {
      if (i >= records.size()) continue;
      any_left = true;
      sample.push_back(records[i].body);
      taken += records[i].body.size();
    }
    if (!any_left) break;
  }
  const auto vocab = train_bpe(sample, cfg.count("tokenizer.vocab_size"));
  vocab.save(run / "tokenizer.txt");
  std::printf("vocab_size = %zu\nfingerprint = %s\n", vocab.size(), vocab.fingerprint_hex().c_str());
  return 0;
}

struct ChunkArgs {
  std::string input;
  std::string tokenizer;
  std::string source = "domain";
  std::string name;
};

int run_chunk(const Common& common, const ChunkArgs& a) {
  const auto cfg = resolve(common);
  require_file(a.input, "input");
  require_file(a.tokenizer, "tokenizer");
  const auto vocab = BpeVocab::load(a.tokenizer);
  const auto source = a.source == "general" ? ChunkSource::general : ChunkSource::domain;
  if (a.source != "general" && a.source != "domain") {
    throw Error(ErrorCode::invalid_argument, fmt::format("--source must be domain or general, got '{}'", a.source));
  }
  cli::RunDir run(common.out, cfg, "chunk");
  std::ifstream in(a.input);
  std::vector<ArticleRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("body")) throw Error(ErrorCode::format, fmt::format("{}: malformed record", a.input));
    records.push_back({j.value("id", ""), j.value("title", ""), j.value("abstract", ""), j["body"].get<std::string>(), {}});
  }
  const auto window = cfg.count("corpus.chunk_window");
  const auto chunks = chunk_articles(records, vocab, window, source, cfg.count("workers"));
  const auto name = a.name.empty() ? a.source : a.name;
  const auto manifest = write_corpus(run.path(), name, chunks,
                                     {window, static_cast<std::uint64_t>(cfg.integer("seed")), vocab.fingerprint_hex()},
                                     cfg.count("corpus.shard_capacity"));
  std::printf("%s", manifest.to_text().c_str());
  return 0;
}

struct MixArgs {
  std::string domain;
  std::string general;
  std::string fraction;
  std::string name = "mixed";
};

int run_mix(const Common& common, const MixArgs& a) {
  auto cfg = resolve(common);
  if (!a.fraction.empty()) cfg.set("corpus.general_fraction", a.fraction);
  require_file(a.domain, "domain manifest");
  require_file(a.general, "general manifest");
  cli::RunDir run(common.out, cfg, "mix");
  const auto manifest = build_mix(read_manifest(a.domain), read_manifest(a.general),
                                  Fraction::parse(cfg.str("corpus.general_fraction")),
                                  static_cast<std::uint64_t>(cfg.integer("seed")), run.path(), a.name);
  const auto text = manifest.to_text();
  Fnv1a h;
  h.update(text);
  std::printf("%smanifest_hash = %s\n", text.c_str(), to_hex(h.value()).c_str());
  return 0;
}

struct PretrainArgs {
  std::string data;
  std::string val;
  std::string tokenizer;
  std::string init;
};

int run_pretrain(const Common& common, const PretrainArgs& a) {
  const auto cfg = resolve(common);
  require_file(a.data, "data manifest");
  const auto manifest = read_manifest(a.data);
  auto tc = cfg.train("pretrain");

  Checkpoint start;
  if (!a.init.empty()) {
    require_file(a.init, "checkpoint");
    start = load_checkpoint(a.init);
    // A finished checkpoint starts a new stage; a paused one resumes.
    if (start.step >= start.schedule.total_steps) start = begin_stage(start, Stage::pretrain);
  } else {
    require_file(a.tokenizer, "tokenizer");
    const auto vocab = BpeVocab::load(a.tokenizer);
    const auto model = cfg.model(vocab.size());
    start = fresh_checkpoint(model, init_params<float>(model, tc.seed), vocab.fingerprint_hex());
  }
  require_same_tokenizer(start.tokenizer_fingerprint, manifest.tokenizer_fingerprint, a.data);
  cli::RunDir run(common.out, cfg, "pretrain");

  auto chunks = read_chunks(manifest);
  const auto seq = std::min(tc.max_seq_len, start.model.max_seq_len);
  tc.max_seq_len = seq;
  PackedBlocks validation;
  if (!a.val.empty()) {
    validation = load_blocks(a.val, start, seq);
  } else {
    auto split = split_holdout(std::move(chunks), Fraction::parse(cfg.str("corpus.holdout")), tc.seed);
    chunks = std::move(split.train);
    validation = pack_sequences(split.validation, seq);
  }
  const auto data = sequences_from_blocks(pack_sequences(chunks, seq));
  tc.checkpoint_dir = run / "checkpoints";
  const auto result = train(tc, data, std::move(start), logging_hooks(tc, validation.block_count() ? &validation : nullptr));
  write_training_outputs(run, result);
  if (validation.block_count()) {
    const auto report = perplexity(result.checkpoint, validation, a.val.empty() ? "holdout" : a.val);
    write_text_file(run / "eval.txt", report.to_text());
    std::printf("%s", report.to_text().c_str());
  }
  return 0;
}

struct FinetuneArgs {
  std::string init;
  std::string tokenizer;
  std::vector<std::string> instructions;
};

int run_finetune(const Common& common, const FinetuneArgs& a) {
  const auto cfg = resolve(common);
  require_file(a.init, "checkpoint");
  require_file(a.tokenizer, "tokenizer");
  const auto vocab = BpeVocab::load(a.tokenizer);
  auto start = load_checkpoint(a.init);
  require_same_tokenizer(start.tokenizer_fingerprint, vocab.fingerprint_hex(), a.tokenizer);
  if (start.stage != Stage::finetune || start.step >= start.schedule.total_steps) {
    start = begin_stage(start, Stage::finetune);
  }

  std::vector<InstructionFile> files;
  for (const auto& spec : a.instructions) {
    // path[:source], source one of general, domain, identity
    const auto colon = spec.rfind(':');
    InstructionFile f{spec, InstructionSource::general};
    if (colon != std::string::npos && !fs::exists(spec)) {
      f.path = spec.substr(0, colon);
      f.source = parse_instruction_source(spec.substr(colon + 1));
    }
    require_file(f.path.string(), "instruction file");
    files.push_back(std::move(f));
  }
  auto tc = cfg.train("finetune");
  tc.max_seq_len = std::min(tc.max_seq_len, start.model.max_seq_len);
  cli::RunDir run(common.out, cfg, "finetune");

  const auto set = load_instructions(files);
  for (const auto& e : set.errors) spdlog::warn("line {}: {}", e.line, e.message);
  const PromptTemplate tmpl = start.prompt_template.value_or(PromptTemplate{});
  std::vector<RenderedExample> rendered;
  RenderStats stats;
  for (const auto& e : set.examples) {
    if (auto r = render_and_mask(e, vocab, tc.max_seq_len, tmpl, &stats)) rendered.push_back(std::move(*r));
  }
  spdlog::info("{} instructions ({} duplicates dropped), {} truncated, {} skipped", set.examples.size(),
               set.duplicates, stats.truncated, stats.skipped);
  if (rendered.empty()) throw Error(ErrorCode::invalid_argument, "no instruction fits the context");
  start.prompt_template = tmpl;
  tc.checkpoint_dir = run / "checkpoints";
  const auto result = train(tc, sequences_from_examples(rendered), std::move(start), logging_hooks(tc, nullptr));
  write_training_outputs(run, result);
  write_text_file(run / "instructions.txt",
                  fmt::format("examples = {}\nduplicates = {}\ngeneral = {}\ndomain = {}\nidentity = {}\ntruncated = {}\n"
                              "skipped = {}\n",
                              set.examples.size(), set.duplicates, set.count(InstructionSource::general),
                              set.count(InstructionSource::domain), set.count(InstructionSource::identity),
                              stats.truncated, stats.skipped));
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string val;
};

int run_eval(const Common& common, const EvalArgs& a) {
  const auto cfg = resolve(common);
  require_file(a.ckpt, "checkpoint");
  const auto ckpt = load_checkpoint(a.ckpt);
  const auto blocks = load_blocks(a.val, ckpt, cfg.count("pretrain.max_seq_len"));
  const auto report = perplexity(ckpt, blocks, a.val);
  if (!common.out.empty()) {
    cli::RunDir run(common.out, cfg, "eval");
    write_text_file(run / "eval.txt", report.to_text());
  }
  std::printf("%s", report.to_text().c_str());
  return 0;
}

struct ProbeArgs {
  std::string base;
  std::string with_mix;
  std::string without_mix;
  std::string general_val;
  std::string domain_val;
};

int run_probe(const Common& common, const ProbeArgs& a) {
  const auto cfg = resolve(common);
  for (const auto* p : {&a.base, &a.with_mix, &a.without_mix}) require_file(*p, "checkpoint");
  const auto base = load_checkpoint(a.base);
  const auto seq = cfg.count("pretrain.max_seq_len");
  const auto report = forgetting_probe(base, load_checkpoint(a.with_mix), load_checkpoint(a.without_mix),
                                       load_blocks(a.general_val, base, seq), load_blocks(a.domain_val, base, seq));
  if (!common.out.empty()) {
    cli::RunDir run(common.out, cfg, "probe-forgetting");
    write_text_file(run / "forgetting.txt", report.to_text());
  }
  std::printf("%s", report.to_text().c_str());
  return 0;
}

struct CollapseArgs {
  std::string data;
  std::string tokenizer;
};

int run_collapse(const Common& common, const CollapseArgs& a) {
  const auto cfg = resolve(common);
  require_file(a.data, "data manifest");
  require_file(a.tokenizer, "tokenizer");
  const auto vocab = BpeVocab::load(a.tokenizer);
  const auto manifest = read_manifest(a.data);
  require_same_tokenizer(vocab.fingerprint_hex(), manifest.tokenizer_fingerprint, a.data);
  cli::RunDir run(common.out, cfg, "collapse-study");

  CollapseStudyConfig study;
  study.model = cfg.model(vocab.size());
  study.train = cfg.train("pretrain");
  study.train.max_seq_len = std::min(study.train.max_seq_len, study.model.max_seq_len);
  study.train.max_steps = cfg.integer("collapse.max_steps");
  study.peak_lrs = cfg.real_list("collapse.peak_lrs");
  study.warmup_ratios = cfg.real_list("collapse.warmup_ratios");
  study.seeds = cfg.integer_list("collapse.seeds");
  study.collapse_factor = cfg.real("collapse.factor");
  const auto data = sequences_from_blocks(pack_sequences(read_chunks(manifest), study.train.max_seq_len));
  const auto report = run_collapse_study(study, data, vocab.fingerprint_hex());
  write_text_file(run / "collapse.csv", report.to_text());
  std::printf("%s", report.to_text().c_str());
  return 0;
}

struct GenerateArgs {
  std::string ckpt;
  std::string tokenizer;
  std::string prompt;
  std::string input;
};

int run_generate(const Common& common, const GenerateArgs& a) {
  const auto cfg = resolve(common);
  require_file(a.ckpt, "checkpoint");
  require_file(a.tokenizer, "tokenizer");
  const auto text = generate(load_checkpoint(a.ckpt), BpeVocab::load(a.tokenizer), a.prompt, cfg.sampling(), a.input);
  if (!common.out.empty()) {
    cli::RunDir run(common.out, cfg, "generate");
    write_text_file(run / "generation.txt", text + "\n");
  }
  std::printf("%s\n", text.c_str());
  return 0;
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("adaptlm");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");
  const char* level = std::getenv("ADAPTLM_LOG");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::info);
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Domain-adaptive language model pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ADAPTLM_VERSION);

  Common common;
  IngestArgs ingest;
  TokenizerArgs tok;
  ChunkArgs chunk;
  MixArgs mix;
  PretrainArgs pre;
  FinetuneArgs ft;
  EvalArgs ev;
  ProbeArgs probe;
  CollapseArgs collapse;
  GenerateArgs gen;

  auto* c_ingest = app.add_subcommand("ingest", "filter JSONL articles by field of study");
  add_common(c_ingest, common, true);
  c_ingest->add_option("--input", ingest.inputs, "JSONL article files")->required();
  c_ingest->add_option("--fields", ingest.fields, "comma-separated labels to keep");

  auto* c_tok = app.add_subcommand("train-tokenizer", "train a byte-level BPE vocabulary");
  add_common(c_tok, common, true);
  c_tok->add_option("--input", tok.inputs, "records.jsonl files from ingest")->required();

  auto* c_chunk = app.add_subcommand("chunk", "tokenize records into chunk shards");
  add_common(c_chunk, common, true);
  c_chunk->add_option("--input", chunk.input, "records.jsonl from ingest")->required();
  c_chunk->add_option("--tokenizer", chunk.tokenizer, "tokenizer.txt")->required();
  c_chunk->add_option("--source", chunk.source, "domain or general");
  c_chunk->add_option("--name", chunk.name, "manifest name (default: the source)");

  auto* c_mix = app.add_subcommand("mix", "mix domain chunks with a fraction of general chunks");
  add_common(c_mix, common, true);
  c_mix->add_option("--domain", mix.domain, "domain manifest")->required();
  c_mix->add_option("--general", mix.general, "general manifest")->required();
  c_mix->add_option("--general-fraction", mix.fraction, "fraction of the general pool, e.g. 0.1 or 1/10");
  c_mix->add_option("--name", mix.name, "manifest name");

  auto* c_pre = app.add_subcommand("pretrain", "continued pretraining on a corpus manifest");
  add_common(c_pre, common, true);
  c_pre->add_option("--data", pre.data, "training manifest")->required();
  c_pre->add_option("--val", pre.val, "validation manifest (default: hold out corpus.holdout)");
  c_pre->add_option("--tokenizer", pre.tokenizer, "tokenizer.txt, for a fresh model");
  c_pre->add_option("--init", pre.init, "checkpoint to continue from");

  auto* c_ft = app.add_subcommand("finetune", "instruction tuning with response-only loss");
  add_common(c_ft, common, true);
  c_ft->add_option("--init", ft.init, "pretrained checkpoint")->required();
  c_ft->add_option("--tokenizer", ft.tokenizer, "tokenizer.txt")->required();
  c_ft->add_option("--instructions", ft.instructions, "instruction JSONL, optionally path:source")->required();

  auto* c_eval = app.add_subcommand("eval", "held-out perplexity");
  add_common(c_eval, common, false);
  c_eval->add_option("--ckpt", ev.ckpt, "checkpoint")->required();
  c_eval->add_option("--val", ev.val, "validation manifest")->required();

  auto* c_probe = app.add_subcommand("probe-forgetting", "general/domain perplexity before and after adaptation");
  add_common(c_probe, common, false);
  c_probe->add_option("--base", probe.base, "base checkpoint")->required();
  c_probe->add_option("--with-mix", probe.with_mix, "checkpoint adapted with general replay")->required();
  c_probe->add_option("--without-mix", probe.without_mix, "checkpoint adapted without replay")->required();
  c_probe->add_option("--general-val", probe.general_val, "general validation manifest")->required();
  c_probe->add_option("--domain-val", probe.domain_val, "domain validation manifest")->required();

  auto* c_collapse = app.add_subcommand("collapse-study", "warmup vs no-warmup stability sweep");
  add_common(c_collapse, common, true);
  c_collapse->add_option("--data", collapse.data, "training manifest")->required();
  c_collapse->add_option("--tokenizer", collapse.tokenizer, "tokenizer.txt")->required();

  auto* c_gen = app.add_subcommand("generate", "sample a continuation");
  add_common(c_gen, common, false);
  c_gen->add_option("--ckpt", gen.ckpt, "checkpoint")->required();
  c_gen->add_option("--tokenizer", gen.tokenizer, "tokenizer.txt")->required();
  c_gen->add_option("--prompt", gen.prompt, "prompt or instruction text")->required();
  c_gen->add_option("--input", gen.input, "optional instruction input");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: code=usage message=%s\n", e.what());
    return 2;
  }

  try {
    if (*c_ingest) return run_ingest(common, ingest);
    if (*c_tok) return run_train_tokenizer(common, tok);
    if (*c_chunk) return run_chunk(common, chunk);
    if (*c_mix) return run_mix(common, mix);
    if (*c_pre) return run_pretrain(common, pre);
    if (*c_ft) return run_finetune(common, ft);
    if (*c_eval) return run_eval(common, ev);
    if (*c_probe) return run_probe(common, probe);
    if (*c_collapse) return run_collapse(common, collapse);
    if (*c_gen) return run_generate(common, gen);
  } catch (const TrainingCollapse& e) {
    std::fprintf(stderr, "error: code=collapse step=%lld lr=%.6g message=%s\n", static_cast<long long>(e.step()), e.lr(),
                 e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: code=%s message=%s\n", std::string(to_string(e.code())).c_str(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: code=internal message=%s\n", e.what());
    return 1;
  }
  return 1;
}
