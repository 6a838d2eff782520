#pragma once

// Knowledge-aligned input templates, truncation and the verbalizer.

#include <algorithm>
#include <bitset>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "common.hpp"
#include "corpus.hpp"
#include "knowledge.hpp"

namespace argpersona {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Persona selection
// ---------------------------------------------------------------------------

enum class Dimension : std::size_t { role = 0, stance, argument, characters, intent };

class DimensionSet {
 public:
  constexpr DimensionSet() = default;

  static DimensionSet all() {
    DimensionSet d;
    d.bits_.set();
    return d;
  }

  // Letters from "RSACI": R role, S stance, A argument, C characters, I intent.
  static DimensionSet parse(std::string_view letters) {
    DimensionSet d;
    for (char c : letters) {
      switch (std::toupper(static_cast<unsigned char>(c))) {
        case 'R': d.add(Dimension::role); break;
        case 'S': d.add(Dimension::stance); break;
        case 'A': d.add(Dimension::argument); break;
        case 'C': d.add(Dimension::characters); break;
        case 'I': d.add(Dimension::intent); break;
        case '&': case ',': case ' ': break;
        default: throw ConfigError("unknown persona dimension '" + std::string(1, c) + "'");
      }
    }
    return d;
  }

  void add(Dimension x) { bits_.set(static_cast<std::size_t>(x)); }
  void remove(Dimension x) { bits_.reset(static_cast<std::size_t>(x)); }
  bool has(Dimension x) const { return bits_.test(static_cast<std::size_t>(x)); }
  bool empty() const { return bits_.none(); }

  std::string letters() const {
    std::string out;
    static constexpr char kLetters[] = "RSACI";
    for (std::size_t i = 0; i < 5; ++i)
      if (bits_.test(i)) out.push_back(kLetters[i]);
    return out;
  }

  friend bool operator==(const DimensionSet&, const DimensionSet&) = default;

 private:
  std::bitset<5> bits_;
};

enum class StanceGroup { all, pro, con, neutral };

inline StanceGroup parse_stance_group(std::string_view s) {
  const auto w = to_lower(s);
  if (w == "all" || w.empty()) return StanceGroup::all;
  if (w == "pro") return StanceGroup::pro;
  if (w == "con") return StanceGroup::con;
  if (w == "neutral") return StanceGroup::neutral;
  throw ConfigError("unknown stance group '" + std::string(s) + "'");
}

inline std::string_view stance_group_name(StanceGroup g) {
  switch (g) {
    case StanceGroup::all: return "all";
    case StanceGroup::pro: return "pro";
    case StanceGroup::con: return "con";
    case StanceGroup::neutral: return "neutral";
  }
  return "all";
}

struct PersonaFilter {
  DimensionSet dimensions = DimensionSet::all();
  StanceGroup stance = StanceGroup::all;
  std::optional<std::size_t> count;  // keep the first n after stance filtering
};

// Personae plus the dimensions that will be rendered for them.
struct PersonaKnowledge {
  PersonaSet set;
  DimensionSet dimensions = DimensionSet::all();
};

inline PersonaKnowledge select_personae(const PersonaSet& set, const PersonaFilter& filter) {
  if (filter.dimensions.empty()) throw ConfigError("persona dimension subset is empty");
  if (!filter.dimensions.has(Dimension::role)) throw ConfigError("persona dimension subset must include R (role)");
  PersonaKnowledge out{set, filter.dimensions};
  out.set.personae.clear();
  for (const auto& p : set.personae) {
    const bool keep = filter.stance == StanceGroup::all ||
                      (filter.stance == StanceGroup::pro && p.stance == Stance::pro) ||
                      (filter.stance == StanceGroup::con && p.stance == Stance::con) ||
                      (filter.stance == StanceGroup::neutral && p.stance == Stance::neutral);
    if (keep) out.set.personae.push_back(p);
  }
  if (filter.count && out.set.personae.size() > *filter.count) out.set.personae.resize(*filter.count);
  return out;
}

// none / personae / free text (background paragraph, rendered ConceptNet).
using Knowledge = std::variant<std::monostate, PersonaKnowledge, std::string>;

// ---------------------------------------------------------------------------
// Template specification
// ---------------------------------------------------------------------------

enum class TemplateVariant { optimal, template1, template2, template3, template4 };

inline std::string_view variant_name(TemplateVariant v) {
  switch (v) {
    case TemplateVariant::optimal: return "optimal";
    case TemplateVariant::template1: return "template-1";
    case TemplateVariant::template2: return "template-2";
    case TemplateVariant::template3: return "template-3";
    case TemplateVariant::template4: return "template-4";
  }
  return "optimal";
}

inline TemplateVariant parse_variant(std::string_view s) {
  for (auto v : {TemplateVariant::optimal, TemplateVariant::template1, TemplateVariant::template2,
                 TemplateVariant::template3, TemplateVariant::template4})
    if (variant_name(v) == s) return v;
  throw ConfigError("unknown template variant '" + std::string(s) + "'");
}

enum class Section { background, context, argument, instruction };

struct TemplateSpec {
  TemplateVariant variant = TemplateVariant::optimal;
  std::size_t continuous_slots = 20;
  std::size_t token_budget = 512;
  std::string background_marker = "Background:";
  std::string context_marker = "Context:";
  std::string argument_marker = "Argument:";
  std::string kialo_instruction = "Predict the impact level:";
  std::string ddo_instruction = "Predict the winner:";
  // discrete section order; the answer slot always follows the last section
  std::vector<Section> order{Section::background, Section::context, Section::argument, Section::instruction};

  // Variants 1-4 reorder or reword the optimal layout.
  static TemplateSpec for_variant(TemplateVariant v) {
    TemplateSpec s;
    s.variant = v;
    switch (v) {
      case TemplateVariant::optimal: break;
      case TemplateVariant::template1:
        s.order = {Section::context, Section::background, Section::argument, Section::instruction};
        break;
      case TemplateVariant::template2:
        s.background_marker = "Knowledge:";
        s.context_marker = "Debate history:";
        s.argument_marker = "Claim:";
        s.kialo_instruction = "How impactful is the claim?";
        s.ddo_instruction = "Which side is more persuasive?";
        break;
      case TemplateVariant::template3:
        s.order = {Section::instruction, Section::background, Section::context, Section::argument};
        break;
      case TemplateVariant::template4:
        s.order = {Section::argument, Section::background, Section::context, Section::instruction};
        break;
    }
    return s;
  }

  const std::string& instruction(Task t) const { return t == Task::kialo ? kialo_instruction : ddo_instruction; }

  void validate() const {
    if (continuous_slots == 0) throw ConfigError("template needs at least one continuous slot");
    if (token_budget == 0) throw ConfigError("token budget must be positive");
    for (const auto* m : {&background_marker, &context_marker, &argument_marker, &kialo_instruction, &ddo_instruction})
      if (trim(*m).empty()) throw ConfigError("template marker strings must be non-empty");
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    if (sorted != std::vector<Section>{Section::background, Section::context, Section::argument, Section::instruction})
      throw ConfigError("template section order must list every section once");
  }
};

inline json to_json(const TemplateSpec& s) {
  static const char* names[] = {"background", "context", "argument", "instruction"};
  json order = json::array();
  for (auto sec : s.order) order.push_back(names[static_cast<int>(sec)]);
  return json{{"variant", variant_name(s.variant)},
              {"continuous_slots", s.continuous_slots},
              {"token_budget", s.token_budget},
              {"markers",
               {{"background", s.background_marker},
                {"context", s.context_marker},
                {"argument", s.argument_marker},
                {"kialo_instruction", s.kialo_instruction},
                {"ddo_instruction", s.ddo_instruction}}},
              {"order", order},
              {"answer_slot", "last"}};
}

inline TemplateSpec template_spec_from_json(const json& j) {
  auto s = TemplateSpec::for_variant(parse_variant(j.at("variant").get<std::string>()));
  s.continuous_slots = j.at("continuous_slots").get<std::size_t>();
  s.token_budget = j.value("token_budget", s.token_budget);
  if (j.contains("markers")) {
    const auto& m = j.at("markers");
    s.background_marker = m.value("background", s.background_marker);
    s.context_marker = m.value("context", s.context_marker);
    s.argument_marker = m.value("argument", s.argument_marker);
    s.kialo_instruction = m.value("kialo_instruction", s.kialo_instruction);
    s.ddo_instruction = m.value("ddo_instruction", s.ddo_instruction);
  }
  if (j.contains("order")) {
    s.order.clear();
    for (const auto& name : j.at("order")) {
      const auto n = name.get<std::string>();
      if (n == "background") s.order.push_back(Section::background);
      else if (n == "context") s.order.push_back(Section::context);
      else if (n == "argument") s.order.push_back(Section::argument);
      else if (n == "instruction") s.order.push_back(Section::instruction);
      else throw ConfigError("unknown template section '" + n + "'");
    }
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

struct PersonaLine {
  Dimension dimension;
  std::string text;
};

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive byte offsets into discrete_text
  bool present() const noexcept { return end > begin; }
};

// x~ = T(p, x). The structured parts are authoritative; discrete_text and the
// spans are derived from them by assemble().
struct RenderedPrompt {
  Task task = Task::kialo;
  TemplateSpec spec;
  std::size_t slot_count = 0;
  std::size_t token_budget = 512;
  std::vector<std::vector<PersonaLine>> personae;  // background as personae
  std::vector<std::string> background_lines;       // background as free text
  std::vector<std::string> context;                // C^0 .. C^l
  std::string argument;
  std::string discrete_text;
  Span background_span, context_span, argument_span;

  bool has_background() const { return !personae.empty() || !background_lines.empty(); }
  friend bool operator==(const RenderedPrompt& a, const RenderedPrompt& b) {
    return a.discrete_text == b.discrete_text && a.slot_count == b.slot_count && a.token_budget == b.token_budget;
  }
};

inline std::string_view dimension_label(Dimension d) {
  switch (d) {
    case Dimension::role: return "Role:";
    case Dimension::stance: return "Stance:";
    case Dimension::argument: return "Persona argument:";
    case Dimension::characters: return "Characters:";
    case Dimension::intent: return "Intent:";
  }
  return "";
}

inline void assemble(RenderedPrompt& r) {
  const auto& spec = r.spec;
  std::string out;
  r.background_span = r.context_span = r.argument_span = {};
  const auto newline = [&] {
    if (!out.empty()) out.push_back('\n');
  };
  for (auto sec : spec.order) {
    switch (sec) {
      case Section::background: {
        if (!r.has_background()) break;
        newline();
        r.background_span.begin = out.size();
        out += spec.background_marker;
        for (std::size_t i = 0; i < r.personae.size(); ++i) {
          out += "\nPersona " + std::to_string(i + 1) + ":";
          for (const auto& line : r.personae[i]) {
            out += "\n";
            out += dimension_label(line.dimension);
            out += " " + line.text;
          }
        }
        for (const auto& line : r.background_lines) out += "\n" + line;
        r.background_span.end = out.size();
        break;
      }
      case Section::context: {
        if (r.context.empty()) break;
        newline();
        r.context_span.begin = out.size();
        for (std::size_t i = 0; i < r.context.size(); ++i) {
          if (i) out += "\n";
          out += spec.context_marker + " " + r.context[i];
        }
        r.context_span.end = out.size();
        break;
      }
      case Section::argument:
        newline();
        out += spec.argument_marker + " ";
        r.argument_span.begin = out.size();
        out += r.argument;
        r.argument_span.end = out.size();
        break;
      case Section::instruction:
        newline();
        out += spec.instruction(r.task);
        break;
    }
  }
  r.discrete_text = std::move(out);
}

inline std::vector<PersonaLine> persona_lines(const PersonaRecord& p, const DimensionSet& dims) {
  std::vector<PersonaLine> lines;
  if (dims.has(Dimension::role)) lines.push_back({Dimension::role, p.role});
  if (dims.has(Dimension::stance)) lines.push_back({Dimension::stance, std::string(stance_name(p.stance))});
  if (dims.has(Dimension::argument)) lines.push_back({Dimension::argument, p.argument});
  if (dims.has(Dimension::characters)) lines.push_back({Dimension::characters, p.characters});
  if (dims.has(Dimension::intent)) lines.push_back({Dimension::intent, p.intent});
  return lines;
}

// Continuous slots, background, context, argument and instruction, in the
// configured section order; the answer is produced after the last section.
inline RenderedPrompt render(const DebateInstance& instance, const Knowledge& knowledge, const TemplateSpec& spec) {
  spec.validate();
  RenderedPrompt r;
  r.task = instance.task;
  r.spec = spec;
  r.slot_count = spec.continuous_slots;
  r.token_budget = spec.token_budget;
  if (const auto* pk = std::get_if<PersonaKnowledge>(&knowledge)) {
    for (const auto& p : pk->set.personae) r.personae.push_back(persona_lines(p, pk->dimensions));
  } else if (const auto* text = std::get_if<std::string>(&knowledge)) {
    for (auto& line : split_lines(*text))
      if (!trim(line).empty()) r.background_lines.emplace_back(trim(line));
  }
  r.context = instance.context.nodes;
  r.argument = instance.argument;
  assemble(r);
  return r;
}

// ---------------------------------------------------------------------------
// Truncation
// ---------------------------------------------------------------------------

// Counts tokens of discrete text; continuous slots are added on top.
using TokenCounter = std::function<std::size_t(std::string_view)>;

inline TokenCounter whitespace_counter() {
  return [](std::string_view s) { return whitespace_tokens(s).size(); };
}

class OverBudgetError : public Error {
 public:
  using Error::Error;
};

inline std::size_t prompt_tokens(const RenderedPrompt& r, const TokenCounter& count) {
  return r.slot_count + count(r.discrete_text);
}

// Trim order: context oldest-first down to the parent claim C^l; then the
// background from the last persona (Characters, then Intent, then Argument,
// then the whole persona) or from the last free-text line; then C^l. The
// argument is never cut.
inline RenderedPrompt truncate(RenderedPrompt r, std::size_t budget, const TokenCounter& count) {
  r.token_budget = budget;
  const auto fits = [&] { return prompt_tokens(r, count) <= budget; };
  if (fits()) return r;

  while (r.context.size() > 1 && !fits()) {
    r.context.erase(r.context.begin());
    assemble(r);
  }
  const auto drop_dimension = [](std::vector<PersonaLine>& lines, Dimension d) {
    auto it = std::find_if(lines.begin(), lines.end(), [d](const PersonaLine& l) { return l.dimension == d; });
    if (it == lines.end()) return false;
    lines.erase(it);
    return true;
  };
  while (!r.personae.empty() && !fits()) {
    auto& last = r.personae.back();
    if (!drop_dimension(last, Dimension::characters) && !drop_dimension(last, Dimension::intent) &&
        !drop_dimension(last, Dimension::argument))
      r.personae.pop_back();
    assemble(r);
  }
  while (!r.background_lines.empty() && !fits()) {
    r.background_lines.pop_back();
    assemble(r);
  }
  if (!r.context.empty() && !fits()) {
    r.context.clear();
    assemble(r);
  }
  if (!fits())
    throw OverBudgetError("argument and instruction need " + std::to_string(prompt_tokens(r, count)) +
                          " tokens but the budget is " + std::to_string(budget));
  return r;
}

// ---------------------------------------------------------------------------
// Verbalizer
// ---------------------------------------------------------------------------

class MappingError : public Error {
 public:
  using Error::Error;
};

// Label -> lowercased label text, and back.
class Verbalizer {
 public:
  explicit Verbalizer(Task task) : task_(task) {
    for (const auto& label : label_set(task)) {
      words_.push_back(to_lower(label));
      if (!inverse_.emplace(words_.back(), inverse_.size()).second)
        throw MappingError("verbalizer is not injective on '" + label + "'");
    }
  }

  Task task() const noexcept { return task_; }
  std::size_t size() const noexcept { return words_.size(); }
  const std::vector<std::string>& words() const noexcept { return words_; }

  const std::string& verbalize(const Label& label) const {
    if (label.task != task_ || label.index >= words_.size()) throw MappingError("label outside the verbalizer domain");
    return words_[label.index];
  }

  const std::string& verbalize(std::string_view label_value) const {
    try {
      return verbalize(Label::from_value(task_, label_value));
    } catch (const DomainError&) {
      throw MappingError("no label word for '" + std::string(label_value) + "'");
    }
  }

  Label unverbalize(std::string_view word) const {
    auto it = inverse_.find(std::string(word));
    if (it == inverse_.end()) throw MappingError("'" + std::string(word) + "' is not a label word");
    return Label{task_, it->second};
  }

 private:
  Task task_;
  std::vector<std::string> words_;
  std::map<std::string, std::size_t> inverse_;
};

}  // namespace argpersona
