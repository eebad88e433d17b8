#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <string>

#include <fmt/format.h>

#include "adaptlm/binary_io.hpp"
#include "adaptlm/evaluation.hpp"
#include "synthetic.hpp"
#include "test_util.hpp"

using namespace adaptlm;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status = 0;
  std::string out;
};

Run run(const std::string& args, const fs::path& cwd) {
  const auto cmd = fmt::format("cd '{}' && ADAPTLM_LOG=warn '{}' {} 2>&1", cwd.string(), ADAPTLM_CLI, args);
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.out += buf;
  const int status = ::pclose(pipe);
  r.status = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string line_value(const std::string& text, const std::string& key) {
  const auto at = text.find(key + " = ");
  if (at == std::string::npos) return {};
  const auto start = at + key.size() + 3;
  return text.substr(start, text.find('\n', start) - start);
}

// Ingest, tokenizer and chunking for a small synthetic corpus, shared by the cases below.
class Workspace {
 public:
  Workspace() : dir_("cli") {
    write_text_file(dir_ / "domain.jsonl",
                    synth::to_jsonl(synth::make_articles(synth::Register::domain, 60000, 1)));
    write_text_file(dir_ / "general.jsonl",
                    synth::to_jsonl(synth::make_articles(synth::Register::general, 60000, 2)));
    write_text_file(dir_ / "instructions.jsonl", synth::to_jsonl(synth::make_instructions(10, 3)));
    write_text_file(dir_ / "cfg.toml",
                    "seed = 3\n[tokenizer]\nvocab_size = 300\n[corpus]\nchunk_window = 64\n"
                    "[model]\nd_model = 16\nn_layers = 1\nn_heads = 2\nmax_seq_len = 64\nmlp_hidden = 32\n"
                    "[pretrain]\nmax_seq_len = 32\nmax_steps = 12\nlog_every = 4\n"
                    "[finetune]\nmax_seq_len = 64\nepochs = 1\n");
    must("ingest --config cfg.toml --input domain.jsonl --out ing_d");
    must("ingest --config cfg.toml --input general.jsonl --fields History --out ing_g");
    must("train-tokenizer --config cfg.toml --input ing_d/records.jsonl --input ing_g/records.jsonl --out tok");
    must("chunk --config cfg.toml --input ing_d/records.jsonl --tokenizer tok/tokenizer.txt --source domain --out ch_d");
    must("chunk --config cfg.toml --input ing_g/records.jsonl --tokenizer tok/tokenizer.txt --source general --out ch_g");
  }

  std::string must(const std::string& args) const {
    const auto r = run(args, dir_.path());
    INFO(args, "\n", r.out);
    REQUIRE(r.status == 0);
    return r.out;
  }
  Run attempt(const std::string& args) const { return run(args, dir_.path()); }
  fs::path operator/(const std::string& name) const { return dir_ / name; }

 private:
  testing::TempDir dir_;
};

const Workspace& workspace() {
  static const Workspace w;
  return w;
}

}  // namespace

TEST_CASE("mix with the same seed twice gives an identical manifest") {
  const auto& w = workspace();
  const auto a = w.must("mix --config cfg.toml --domain ch_d/domain.manifest --general ch_g/general.manifest "
                        "--general-fraction 0.1 --seed 7 --out mix_a");
  const auto b = w.must("mix --config cfg.toml --domain ch_d/domain.manifest --general ch_g/general.manifest "
                        "--general-fraction 0.1 --seed 7 --out mix_b");
  CHECK(line_value(a, "manifest_hash") == line_value(b, "manifest_hash"));
  CHECK(read_file_bytes(w / "mix_a/mixed-00000.shard") == read_file_bytes(w / "mix_b/mixed-00000.shard"));
  const auto c = w.must("mix --config cfg.toml --domain ch_d/domain.manifest --general ch_g/general.manifest "
                        "--general-fraction 0.1 --seed 8 --out mix_c");
  CHECK(line_value(a, "general_chunks") == line_value(c, "general_chunks"));
}

TEST_CASE("eval prints the library perplexity to the last digit") {
  const auto& w = workspace();
  w.must("pretrain --config cfg.toml --data ch_d/domain.manifest --tokenizer tok/tokenizer.txt --out pre");
  const auto out = w.must("eval --config cfg.toml --ckpt pre/last.ckpt --val ch_g/general.manifest");
  const auto ckpt = load_checkpoint(w / "pre/last.ckpt");
  const auto blocks = pack_sequences(read_chunks(read_manifest(w / "ch_g/general.manifest")), 32);
  CHECK(line_value(out, "perplexity") == fmt::format("{}", perplexity(ckpt, blocks).perplexity()));
}

TEST_CASE("a run replayed from its config snapshot reproduces the loss log") {
  const auto& w = workspace();
  w.must("pretrain --config cfg.toml --set pretrain.peak_lr=0.01 --data ch_d/domain.manifest "
         "--tokenizer tok/tokenizer.txt --out rep_a");
  w.must("pretrain --config rep_a/config.toml --data ch_d/domain.manifest --tokenizer tok/tokenizer.txt --out rep_b");
  CHECK(read_text_file(w / "rep_a/loss.csv") == read_text_file(w / "rep_b/loss.csv"));
  CHECK(read_file_bytes(w / "rep_a/last.ckpt") == read_file_bytes(w / "rep_b/last.ckpt"));
  CHECK(read_text_file(w / "rep_a/config.toml").find("pretrain.peak_lr = 0.01\n") != std::string::npos);
}

TEST_CASE("flags override the config file") {
  const auto& w = workspace();
  w.must("mix --config cfg.toml --seed 11 --workers 2 --domain ch_d/domain.manifest --general ch_g/general.manifest "
         "--out flags");
  const auto snapshot = read_text_file(w / "flags/config.toml");
  CHECK(snapshot.find("seed = 11\n") != std::string::npos);
  CHECK(snapshot.find("workers = 2\n") != std::string::npos);
  CHECK(snapshot.find("corpus.chunk_window = 64\n") != std::string::npos);
  CHECK(read_text_file(w / "flags/env.txt").find("seed = 11") != std::string::npos);
}

TEST_CASE("two-stage pipeline: pretrain, finetune, generate") {
  const auto& w = workspace();
  w.must("pretrain --config cfg.toml --data ch_d/domain.manifest --tokenizer tok/tokenizer.txt --out stage1");
  w.must("finetune --config cfg.toml --init stage1/last.ckpt --tokenizer tok/tokenizer.txt "
         "--instructions instructions.jsonl:domain --out stage2");
  const auto ckpt = load_checkpoint(w / "stage2/last.ckpt");
  CHECK(ckpt.stage == Stage::finetune);
  CHECK(ckpt.prompt_template.has_value());
  CHECK(read_text_file(w / "stage2/instructions.txt").find("domain = 10") != std::string::npos);
  const auto a = w.must("generate --config cfg.toml --seed 4 --ckpt stage2/last.ckpt --tokenizer tok/tokenizer.txt "
                        "--prompt 'What is the density of belmide?'");
  const auto b = w.must("generate --config cfg.toml --seed 4 --ckpt stage2/last.ckpt --tokenizer tok/tokenizer.txt "
                        "--prompt 'What is the density of belmide?'");
  CHECK(a == b);
}

TEST_CASE("failures exit non-zero with a machine-readable error line") {
  const auto& w = workspace();
  auto r = w.attempt("eval --ckpt missing.ckpt --val ch_g/general.manifest");
  CHECK(r.status != 0);
  CHECK(r.out.starts_with("error: code=io message="));

  r = w.attempt("mix --domain ch_d/domain.manifest --general ch_g/general.manifest --out x --frobnicate");
  CHECK(r.status != 0);
  CHECK(r.out.starts_with("error: code=usage"));

  write_text_file(w / "bad.toml", "model.depth = 3\n");
  r = w.attempt("mix --config bad.toml --domain ch_d/domain.manifest --general ch_g/general.manifest --out y");
  CHECK(r.status != 0);
  CHECK(r.out.find("unknown config key 'model.depth'") != std::string::npos);

  // A tokenizer that does not match the corpus.
  w.must("train-tokenizer --config cfg.toml --set tokenizer.vocab_size=280 --input ing_d/records.jsonl --out tok2");
  r = w.attempt("pretrain --config cfg.toml --data ch_d/domain.manifest --tokenizer tok2/tokenizer.txt --out z");
  CHECK(r.status != 0);
  CHECK(r.out.starts_with("error: code=fingerprint_mismatch"));
}

TEST_CASE("a locked run directory is refused") {
  const auto& w = workspace();
  fs::create_directories(w / "busy");
  write_text_file(w / "busy/.lock", "1\n");
  const auto r = w.attempt("mix --domain ch_d/domain.manifest --general ch_g/general.manifest --out busy");
  CHECK(r.status != 0);
  CHECK(r.out.find("locked") != std::string::npos);
  w.must("mix --domain ch_d/domain.manifest --general ch_g/general.manifest --out free");
  CHECK_FALSE(fs::exists(w / "free/.lock"));
}
