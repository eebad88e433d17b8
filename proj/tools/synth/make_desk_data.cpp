// Writes a small synthetic corpus for trying the pipeline end to end:
// general.jsonl, domain.jsonl and instructions.jsonl.

#include <cstdio>
#include <filesystem>

#include <CLI11.hpp>

#include "adaptlm/binary_io.hpp"
#include "synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"synthetic desk-scale corpus"};
  std::string out;
  std::size_t general_bytes = 1 << 20;
  std::size_t domain_bytes = 1 << 20;
  std::size_t instructions = 50;
  std::uint64_t seed = 1;
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--general-bytes", general_bytes, "approximate general text size");
  app.add_option("--domain-bytes", domain_bytes, "approximate domain text size");
  app.add_option("--instructions", instructions, "number of question/answer pairs");
  app.add_option("--seed", seed, "random seed");
  CLI11_PARSE(app, argc, argv);

  using namespace adaptlm;
  std::filesystem::create_directories(out);
  const auto general = synth::make_articles(synth::Register::general, general_bytes, seed);
  const auto domain = synth::make_articles(synth::Register::domain, domain_bytes, seed + 1);
  write_text_file(std::filesystem::path(out) / "general.jsonl", synth::to_jsonl(general));
  write_text_file(std::filesystem::path(out) / "domain.jsonl", synth::to_jsonl(domain));
  write_text_file(std::filesystem::path(out) / "instructions.jsonl",
                  synth::to_jsonl(synth::make_instructions(instructions, seed)));
  std::printf("%zu general and %zu domain articles written to %s\n", general.size(), domain.size(), out.c_str());
  return 0;
}
