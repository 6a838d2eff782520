#pragma once

// Persona and background knowledge elicited from a hosted LLM.
//
// Persona text grammar (one block per persona, blank line between blocks):
//
//   Persona 1:
//   Role: <short role>
//   Stance: Pro | Con | Neutral
//   Argument: <what the persona argues>
//   Characters: <character traits>
//   Intent: <what the persona wants to achieve>

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "common.hpp"
#include "corpus.hpp"
#include "llm_client.hpp"

namespace argpersona {

using nlohmann::json;

enum class Stance { pro, con, neutral };

inline std::string_view stance_name(Stance s) {
  switch (s) {
    case Stance::pro: return "Pro";
    case Stance::con: return "Con";
    case Stance::neutral: return "Neutral";
  }
  return "Neutral";
}

class StanceError : public Error {
 public:
  using Error::Error;
};

class PersonaParseError : public Error {
 public:
  PersonaParseError(const std::string& what, std::size_t persona_index)
      : Error("persona #" + std::to_string(persona_index) + ": " + what), index_(persona_index) {}
  // 1-based position of the offending persona block.
  std::size_t persona_index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

inline constexpr std::string_view kStanceTableVersion = "stance-synonyms/1";

inline Stance normalize_stance(std::string_view word) {
  std::string w = to_lower(trim(word));
  while (!w.empty() && !std::isalpha(static_cast<unsigned char>(w.back()))) w.pop_back();
  while (!w.empty() && !std::isalpha(static_cast<unsigned char>(w.front()))) w.erase(0, 1);
  static const std::map<std::string, Stance, std::less<>> table{
      {"support", Stance::pro}, {"pro", Stance::pro},         {"for", Stance::pro},
      {"agree", Stance::pro},   {"con", Stance::con},         {"against", Stance::con},
      {"oppose", Stance::con},  {"neutral", Stance::neutral}, {"mixed", Stance::neutral},
      {"undecided", Stance::neutral}};
  if (auto it = table.find(w); it != table.end()) return it->second;
  throw StanceError("unrecognized stance '" + std::string(trim(word)) + "'");
}

struct PersonaRecord {
  std::string role;
  Stance stance = Stance::neutral;
  std::string argument;
  std::string characters;
  std::string intent;

  friend bool operator==(const PersonaRecord&, const PersonaRecord&) = default;
};

struct PersonaSet {
  std::string instance_id;
  std::vector<PersonaRecord> personae;  // generation order
  std::string model;
  std::string prompt_hash;

  friend bool operator==(const PersonaSet&, const PersonaSet&) = default;
};

inline std::string format_personae(const std::vector<PersonaRecord>& personae) {
  std::string out;
  for (std::size_t i = 0; i < personae.size(); ++i) {
    const auto& p = personae[i];
    if (i) out += "\n";
    out += "Persona " + std::to_string(i + 1) + ":\n";
    out += "Role: " + p.role + "\n";
    out += "Stance: " + std::string(stance_name(p.stance)) + "\n";
    out += "Argument: " + p.argument + "\n";
    out += "Characters: " + p.characters + "\n";
    out += "Intent: " + p.intent + "\n";
  }
  return out;
}

namespace detail {

// "**Role:** x", "- Role: x", "1. Role: x" -> ("role", "x")
inline std::optional<std::pair<std::string, std::string>> persona_field(std::string_view line) {
  std::string s(trim(line));
  std::string cleaned;
  for (char c : s)
    if (c != '*') cleaned.push_back(c);
  std::string_view v = trim(cleaned);
  while (!v.empty() && (v.front() == '-' || v.front() == '#' || std::isdigit(static_cast<unsigned char>(v.front())) ||
                        v.front() == '.' || v.front() == ')' || v.front() == ' '))
    v.remove_prefix(1);
  static constexpr std::string_view keys[] = {"role", "stance", "argument", "characters", "character", "intent"};
  for (auto key : keys) {
    if (starts_with_ci(v, key)) {
      auto rest = trim(v.substr(key.size()));
      if (rest.empty() || rest.front() != ':') continue;
      std::string k(key);
      if (k == "character") k = "characters";
      return std::pair{k, std::string(trim(rest.substr(1)))};
    }
  }
  return std::nullopt;
}

inline bool is_persona_header(std::string_view line) {
  std::string s;
  for (char c : trim(line))
    if (c != '*' && c != '#') s.push_back(c);
  auto v = trim(s);
  if (!starts_with_ci(v, "persona")) return false;
  v.remove_prefix(7);
  v = trim(v);
  // "Persona 3:" / "Persona 3" / "Persona:"; not "Persona argument: ..."
  std::size_t i = 0;
  while (i < v.size() && std::isdigit(static_cast<unsigned char>(v[i]))) ++i;
  auto tail = trim(v.substr(i));
  return tail.empty() || tail == ":" || tail == "." || (i > 0 && tail.front() == ':');
}

}  // namespace detail

// Raw generation -> personae. Blocks start at a "Persona N" header or, when
// headers are absent, at each "Role:" line. All five fields are required.
inline std::vector<PersonaRecord> parse_personae(std::string_view raw) {
  if (trim(raw).empty()) throw PersonaParseError("empty generation", 1);
  struct Block {
    std::map<std::string, std::string> fields;
  };
  std::vector<Block> blocks;
  bool open = false;
  std::string last_key;
  for (const auto& line : split_lines(raw)) {
    if (trim(line).empty()) {
      last_key.clear();
      continue;
    }
    if (detail::is_persona_header(line)) {
      blocks.emplace_back();
      open = true;
      last_key.clear();
      continue;
    }
    if (auto f = detail::persona_field(line)) {
      if (!open || (f->first == "role" && blocks.back().fields.count("role"))) {
        blocks.emplace_back();
        open = true;
      }
      blocks.back().fields[f->first] = f->second;
      last_key = f->first;
    } else if (open && !last_key.empty()) {
      // continuation of a wrapped field value
      auto& v = blocks.back().fields[last_key];
      v += (v.empty() ? "" : " ") + std::string(trim(line));
    }
  }
  if (blocks.empty()) throw PersonaParseError("no persona blocks found", 1);

  std::vector<PersonaRecord> out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& f = blocks[i].fields;
    const auto get = [&](const char* key) -> std::string {
      auto it = f.find(key);
      if (it == f.end() || trim(it->second).empty())
        throw PersonaParseError(std::string("missing '") + static_cast<char>(std::toupper(key[0])) + (key + 1) +
                                    ":' line",
                                i + 1);
      return std::string(trim(it->second));
    };
    PersonaRecord p;
    p.role = get("role");
    const auto stance = get("stance");
    try {
      p.stance = normalize_stance(stance);
    } catch (const StanceError& e) {
      throw StanceError("persona #" + std::to_string(i + 1) + ": " + e.what());
    }
    p.argument = get("argument");
    p.characters = get("characters");
    p.intent = get("intent");
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persona JSONL
// ---------------------------------------------------------------------------

inline json to_json(const PersonaRecord& p) {
  return json{{"role", p.role},
              {"stance", stance_name(p.stance)},
              {"argument", p.argument},
              {"characters", p.characters},
              {"intent", p.intent}};
}

inline PersonaRecord persona_from_json(const json& j) {
  PersonaRecord p;
  p.role = j.at("role").get<std::string>();
  p.stance = normalize_stance(j.at("stance").get<std::string>());
  p.argument = j.at("argument").get<std::string>();
  p.characters = j.at("characters").get<std::string>();
  p.intent = j.at("intent").get<std::string>();
  if (trim(p.role).empty() || trim(p.argument).empty()) throw Error("persona role and argument must be non-empty");
  return p;
}

inline json to_json(const PersonaSet& s) {
  json personae = json::array();
  for (const auto& p : s.personae) personae.push_back(to_json(p));
  return json{{"instance_id", s.instance_id}, {"personae", personae}, {"model", s.model}, {"prompt_hash", s.prompt_hash}};
}

inline PersonaSet persona_set_from_json(const json& j) {
  PersonaSet s;
  s.instance_id = j.at("instance_id").get<std::string>();
  for (const auto& p : j.at("personae")) s.personae.push_back(persona_from_json(p));
  s.model = j.value("model", "");
  s.prompt_hash = j.value("prompt_hash", "");
  return s;
}

// ---------------------------------------------------------------------------
// Generation prompts
// ---------------------------------------------------------------------------

// One in-context demonstration: an instance and its refined persona text.
struct InContextExample {
  std::vector<std::string> context;
  std::string argument;
  std::string personae;  // grammar text
};

struct PromptPools {
  std::vector<std::string> instructions;
  std::vector<InContextExample> examples;
};

inline const std::vector<std::string>& default_instructions() {
  static const std::vector<std::string> pool{
      "Imagine the audience of this debate. Describe five distinct audience personae who would read the argument "
      "below, each with a role, a stance on the argument, the argument they would make, their characters and their "
      "intent.",
      "List five different audience members of this debate. For each one give their role, whether they are Pro, Con "
      "or Neutral towards the argument, the argument they would raise, their character traits and what they intend "
      "to achieve.",
      "Who might be listening to this debate? Generate five audience personae. Each persona has a role, a stance "
      "(Pro, Con or Neutral), an argument supporting that stance, characters and an intent.",
      "Play the role of five diverse audience members judging the argument in its debate context. For every "
      "persona state the role, stance, argument, characters and intent.",
      "Describe the audience of the following debate as five personae with different backgrounds. Give each "
      "persona's role, stance toward the argument, personal argument, characters and intent.",
  };
  return pool;
}

inline constexpr std::string_view kPersonaFormatInstruction =
    "Answer with one block per persona in exactly this format:\n"
    "Persona N:\nRole: ...\nStance: Pro | Con | Neutral\nArgument: ...\nCharacters: ...\nIntent: ...\n"
    "Do not use offensive or harmful language.";

inline const std::vector<InContextExample>& default_examples() {
  static const std::vector<InContextExample> pool{
      {{"Governments should tax sugary drinks."},
       "A sugar tax hits low-income households hardest.",
       format_personae({{"Public health researcher", Stance::con,
                         "Health gains for low-income groups outweigh the cost of the tax.",
                         "Evidence-driven, pragmatic", "Push for policies that cut diabetes rates"},
                        {"Small shop owner", Stance::pro, "My poorer customers already struggle with prices.",
                         "Practical, worried about margins", "Protect sales and keep customers happy"},
                        {"Economics student", Stance::neutral,
                         "The tax is regressive but revenue could fund targeted subsidies.", "Curious, analytical",
                         "Understand the distributional effects before deciding"}})},
      {{"Homework should be banned in primary schools."},
       "Homework teaches children responsibility.",
       format_personae({{"Primary school teacher", Stance::pro,
                         "Short regular tasks build habits that help later in school.", "Organised, caring",
                         "Prepare pupils for secondary school"},
                        {"Working parent", Stance::con, "Evenings are for family, not worksheets.",
                         "Busy, protective", "Reduce stress at home"},
                        {"Child psychologist", Stance::neutral,
                         "Responsibility can be taught without formal homework.", "Reflective, patient",
                         "Promote healthy development"}})},
      {{"Cities should ban private cars from their centres."},
       "Car bans hurt disabled people who depend on driving.",
       format_personae({{"Wheelchair user", Stance::pro, "Public transport is still not accessible enough for me.",
                         "Independent, determined", "Keep the freedom to move around the city"},
                        {"Urban planner", Stance::con, "Exemptions and accessible transit solve this concern.",
                         "Systematic, forward-looking", "Design a cleaner and safer centre"},
                        {"Taxi driver", Stance::neutral, "It depends on whether taxis are exempted.",
                         "Sociable, pragmatic", "Keep earning a living"}})},
      {{"Social media does more harm than good."},
       "Social media helps activists organise protests.",
       format_personae({{"Human rights activist", Stance::pro,
                         "Movements reach people that traditional media ignores.", "Passionate, idealistic",
                         "Mobilise supporters quickly"},
                        {"Privacy advocate", Stance::con, "The same tools enable mass surveillance of activists.",
                         "Sceptical, principled", "Limit data collection by platforms"},
                        {"Journalist", Stance::neutral, "Organisation is easier but misinformation spreads too.",
                         "Inquisitive, balanced", "Report the full picture"}})},
  };
  return pool;
}

struct GenerationRequest {
  std::string instruction;
  std::vector<InContextExample> in_context_examples;
  std::vector<std::size_t> example_indices;  // positions in the pool, draw order
  std::vector<std::string> context;
  std::string argument;
  std::uint64_t seed = 0;
};

inline std::string format_context_block(const std::vector<std::string>& context) {
  std::string out;
  for (std::size_t i = 0; i < context.size(); ++i) out += "Context " + std::to_string(i) + ": " + context[i] + "\n";
  if (context.empty()) out += "Context: (none)\n";
  return out;
}

// Instruction and examples come from independent substreams of `seed`.
inline GenerationRequest build_persona_prompt(const DebateInstance& instance, const PromptPools& pools, std::size_t k,
                                              std::uint64_t seed) {
  if (pools.instructions.empty()) throw ConfigError("instruction pool is empty");
  if (k > pools.examples.size())
    throw ConfigError("requested " + std::to_string(k) + " in-context examples but the pool holds " +
                      std::to_string(pools.examples.size()));
  GenerationRequest req;
  auto irng = make_rng(seed, "instruction-sampling");
  req.instruction = pools.instructions[uniform_index(irng, pools.instructions.size())];
  auto erng = make_rng(seed, "example-sampling");
  req.example_indices = sample_without_replacement(erng, pools.examples.size(), k);
  for (auto i : req.example_indices) req.in_context_examples.push_back(pools.examples[i]);
  req.context = instance.context.nodes;
  req.argument = instance.argument;
  req.seed = seed;
  return req;
}

inline std::string render_generation_prompt(const GenerationRequest& req) {
  std::string out = req.instruction + "\n" + std::string(kPersonaFormatInstruction) + "\n\n";
  for (std::size_t i = 0; i < req.in_context_examples.size(); ++i) {
    const auto& ex = req.in_context_examples[i];
    out += "### Example " + std::to_string(i + 1) + "\n";
    out += format_context_block(ex.context);
    out += "Argument: " + ex.argument + "\n";
    out += ex.personae + "\n";
  }
  out += "### Now the debate to analyse\n";
  out += format_context_block(req.context);
  out += "Argument: " + req.argument + "\n";
  return out;
}

inline CompletionRequest to_completion(const GenerationRequest& req, const std::string& model,
                                       double temperature = 1.0) {
  CompletionRequest c;
  c.model = model;
  c.prompt = render_generation_prompt(req);
  c.temperature = temperature;
  c.seed = req.seed;
  return c;
}

struct RawGeneration {
  std::string text;
  std::string model;
  std::string prompt_hash;
};

// p_i ~ M(p_i | c_i, a_i): one sampled completion, with provenance.
inline RawGeneration sample_personae(LlmClient& client, const GenerationRequest& req, const std::string& model,
                                     double temperature = 1.0) {
  const auto completion = to_completion(req, model, temperature);
  RawGeneration g{client.complete(completion), model, completion.hash()};
  if (trim(g.text).empty()) throw EmptyGenerationError("model returned an empty generation");
  return g;
}

struct ElicitationConfig {
  std::string model = "gpt-3.5-turbo-0125";
  std::size_t examples_per_request = 3;
  std::size_t max_regenerations = 2;
  double temperature = 1.0;
};

struct ElicitationResult {
  std::optional<PersonaSet> personae;  // nullopt: knowledge-missing
  std::size_t attempts = 0;
  std::vector<std::string> failures;
};

// Per-instance seed for attempt `attempt` under a master seed.
inline std::uint64_t persona_request_seed(std::uint64_t master, const std::string& instance_id, std::size_t attempt) {
  return derive_seed(master, "persona:" + instance_id + "#" + std::to_string(attempt));
}

// Parse failures trigger up to `max_regenerations` fresh requests (new
// instruction and example draw); after that the instance is knowledge-missing.
inline ElicitationResult elicit_personae(LlmClient& client, const DebateInstance& instance, const PromptPools& pools,
                                         const ElicitationConfig& cfg, std::uint64_t master_seed) {
  ElicitationResult result;
  for (std::size_t attempt = 0; attempt <= cfg.max_regenerations; ++attempt) {
    ++result.attempts;
    const auto req = build_persona_prompt(instance, pools, cfg.examples_per_request,
                                          persona_request_seed(master_seed, instance.id, attempt));
    try {
      const auto raw = sample_personae(client, req, cfg.model, cfg.temperature);
      PersonaSet set{instance.id, parse_personae(raw.text), raw.model, raw.prompt_hash};
      result.personae = std::move(set);
      return result;
    } catch (const PersonaParseError& e) {
      result.failures.emplace_back(e.what());
    } catch (const StanceError& e) {
      result.failures.emplace_back(e.what());
    } catch (const EmptyGenerationError& e) {
      result.failures.emplace_back(e.what());
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Background knowledge
// ---------------------------------------------------------------------------

inline constexpr std::string_view kBackgroundInstruction =
    "Please list all relevant background knowledge regarding the argument and context.";

inline CompletionRequest background_request(const DebateInstance& instance, const std::string& model,
                                            double temperature = 1.0) {
  CompletionRequest c;
  c.model = model;
  c.prompt = std::string(kBackgroundInstruction) + "\n\n" + format_context_block(instance.context.nodes) +
             "Argument: " + instance.argument + "\n";
  c.temperature = temperature;
  return c;
}

struct BackgroundKnowledge {
  std::string instance_id;
  std::string text;
  std::string model;
  std::string prompt_hash;
};

inline BackgroundKnowledge generate_background_knowledge(LlmClient& client, const DebateInstance& instance,
                                                         const std::string& model) {
  const auto req = background_request(instance, model);
  BackgroundKnowledge bk{instance.id, client.complete(req), model, req.hash()};
  if (trim(bk.text).empty()) throw EmptyGenerationError("model returned empty background knowledge");
  return bk;
}

// ---------------------------------------------------------------------------
// Offline mock model
// ---------------------------------------------------------------------------

// Deterministic stand-in for a hosted model: answers persona prompts in the
// persona grammar, background prompts with a short paragraph, and anything
// else with "A". Output depends only on the request body.
inline HttpResult mock_completion(const json& request) {
  const std::string prompt = request.at("messages").back().at("content").get<std::string>();
  const std::uint64_t h = fnv1a64(request.dump());
  std::string text;
  if (prompt.find("Persona N:") != std::string::npos) {
    static const char* roles[] = {"Teacher", "Economist", "Student", "Parent", "Journalist",
                                  "Nurse",   "Engineer",  "Retiree", "Lawyer", "Farmer"};
    static const char* traits[] = {"analytical", "empathetic", "sceptical", "pragmatic", "idealistic"};
    std::vector<PersonaRecord> ps;
    Rng rng(h);
    const auto arg_pos = prompt.rfind("Argument: ");
    std::string claim = arg_pos == std::string::npos ? "the claim" : prompt.substr(arg_pos + 10);
    if (auto nl = claim.find('\n'); nl != std::string::npos) claim.resize(nl);
    for (int i = 0; i < 5; ++i) {
      const auto stance = static_cast<Stance>(uniform_index(rng, 3));
      const std::string role = roles[uniform_index(rng, 10)];
      const std::string trait = traits[uniform_index(rng, 5)];
      ps.push_back({role, stance,
                    std::string(stance == Stance::pro   ? "I agree that "
                                : stance == Stance::con ? "I doubt that "
                                                        : "It is unclear whether ") +
                        to_lower(claim.substr(0, std::min<std::size_t>(claim.size(), 80))),
                    trait + " and attentive", "Convince others from the " + to_lower(role) + " perspective"});
    }
    text = format_personae(ps);
  } else if (prompt.rfind(std::string(kBackgroundInstruction), 0) == 0) {
    text = "The argument relates to public policy, individual rights and measurable social outcomes. Prior studies "
           "report mixed evidence (ref " +
           std::to_string(h % 1000) + ").";
  } else {
    text = "A";
  }
  return {200, completion_body(text)};
}

}  // namespace argpersona
