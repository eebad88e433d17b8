#include "synthetic.hpp"

#include <array>
#include <string_view>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace adaptlm::synth {
namespace {

template <std::size_t N>
std::string_view pick(const std::array<std::string_view, N>& words, std::mt19937_64& rng) {
  return words[std::uniform_int_distribution<std::size_t>(0, N - 1)(rng)];
}

constexpr std::array<std::string_view, 16> kGeneralSubjects{
    "the farmer", "my neighbour", "the old teacher", "a young girl", "the baker", "our family",
    "the children", "the captain", "a tired traveller", "the mayor", "her brother", "the musician",
    "the shopkeeper", "a quiet boy", "the fisherman", "his grandmother"};
constexpr std::array<std::string_view, 14> kGeneralVerbs{
    "walked to", "painted", "visited", "cleaned", "remembered", "carried", "sold",
    "found", "watched", "repaired", "described", "opened", "left", "built"};
constexpr std::array<std::string_view, 16> kGeneralObjects{
    "the market", "a small boat", "the village church", "the garden gate", "an old letter",
    "the kitchen table", "a basket of apples", "the school", "the bridge", "a red bicycle",
    "the harbour", "the library", "a wooden chair", "the train station", "the orchard", "a warm coat"};
constexpr std::array<std::string_view, 10> kGeneralTails{
    "after lunch", "in the morning", "before the rain", "with a smile", "on sunday",
    "near the river", "during the festival", "last winter", "without a word", "at dusk"};

constexpr std::array<std::string_view, 14> kDomainSubjects{
    "the annealed alloy", "the perovskite film", "the doped silicon", "the polymer matrix",
    "the ceramic coating", "the graphene layer", "the titanium oxide", "the nickel superalloy",
    "the zeolite catalyst", "the amorphous carbon", "the copper interconnect", "the garnet electrolyte",
    "the boron nitride", "the steel weld"};
constexpr std::array<std::string_view, 12> kDomainVerbs{
    "exhibits", "suppresses", "enhances", "reduces", "increases", "stabilizes",
    "degrades", "controls", "limits", "improves", "modifies", "determines"};
constexpr std::array<std::string_view, 14> kDomainObjects{
    "the grain boundary diffusion", "the ionic conductivity", "the fracture toughness",
    "the band gap", "the dislocation density", "the thermal expansion", "the phase transition",
    "the carrier mobility", "the creep resistance", "the surface energy", "the lattice strain",
    "the oxidation rate", "the yield strength", "the dielectric loss"};
constexpr std::array<std::string_view, 10> kDomainTails{
    "at elevated temperature", "under uniaxial strain", "after thermal cycling", "in the bulk phase",
    "near the interface", "at low doping levels", "under vacuum", "in thin films",
    "by several orders of magnitude", "during sintering"};

constexpr std::array<std::string_view, 20> kMaterials{
    "zirconite", "helvaron", "costrium", "belmide", "qarsite", "tovalene", "prendium",
    "ulmoxide", "fenrite", "dastone", "korvium", "lysaline", "marbide", "nexolite",
    "oberine", "palvium", "rinthane", "sorbite", "trevalon", "vermide"};
constexpr std::array<std::string_view, 5> kProperties{"melting point", "density", "band gap", "hardness",
                                                      "thermal conductivity"};
constexpr std::array<std::string_view, 5> kUnits{"K", "g/cm3", "eV", "GPa", "W/mK"};

}  // namespace

std::string sentence(Register reg, std::mt19937_64& rng) {
  std::string s;
  if (reg == Register::general) {
    s = fmt::format("{} {} {}", pick(kGeneralSubjects, rng), pick(kGeneralVerbs, rng), pick(kGeneralObjects, rng));
    if (rng() % 2 == 0) s += fmt::format(" {}", pick(kGeneralTails, rng));
  } else {
    s = fmt::format("{} {} {}", pick(kDomainSubjects, rng), pick(kDomainVerbs, rng), pick(kDomainObjects, rng));
    if (rng() % 2 == 0) s += fmt::format(" {}", pick(kDomainTails, rng));
  }
  s.front() = static_cast<char>(s.front() - 'a' + 'A');
  return s + ".";
}

std::vector<ArticleRecord> make_articles(Register reg, std::size_t total_bytes, std::uint64_t seed,
                                         std::size_t article_bytes) {
  std::mt19937_64 rng(seed);
  std::vector<ArticleRecord> out;
  std::size_t produced = 0;
  const auto prefix = reg == Register::general ? "g" : "d";
  while (produced < total_bytes) {
    ArticleRecord r;
    r.id = fmt::format("{}{:06d}", prefix, out.size());
    r.title = sentence(reg, rng);
    r.fields_of_study = {reg == Register::general ? "History" : "Materials Science"};
    while (r.body.size() < article_bytes) {
      if (!r.body.empty()) r.body += ' ';
      r.body += sentence(reg, rng);
    }
    produced += r.body.size();
    out.push_back(std::move(r));
  }
  return out;
}

std::string to_jsonl(std::span<const ArticleRecord> records) {
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

std::vector<InstructionExample> make_instructions(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<InstructionExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto material = kMaterials[i % kMaterials.size()];
    const auto p = (i / kMaterials.size()) % kProperties.size();
    const auto value = std::uniform_int_distribution<int>(1, 999)(rng);
    InstructionExample e;
    e.source = InstructionSource::domain;
    e.instruction = fmt::format("What is the {} of {}?", kProperties[p], material);
    e.response = fmt::format("The {} of {} is {} {}.", kProperties[p], material, value, kUnits[p]);
    out.push_back(std::move(e));
  }
  return out;
}

std::string to_jsonl(std::span<const InstructionExample> examples) {
  std::string out;
  for (const auto& e : examples) {
    nlohmann::json j{{"instruction", e.instruction}, {"input", e.input}, {"output", e.response}};
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace adaptlm::synth
