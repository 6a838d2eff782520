#pragma once

// Debate corpora: canonical instances, Kialo argument trees, DDO debates.

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "common.hpp"

namespace argpersona {

using nlohmann::json;

enum class Task { kialo, ddo };
enum class Split { train, validation, test };

inline std::string_view task_name(Task t) { return t == Task::kialo ? "kialo" : "ddo"; }

inline Task parse_task(std::string_view s) {
  if (s == "kialo") return Task::kialo;
  if (s == "ddo") return Task::ddo;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "validation" || s == "val" || s == "dev") return Split::validation;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

inline constexpr std::array<Split, 3> kAllSplits{Split::train, Split::validation, Split::test};

// Fixed label order per task; a label's canonical index is its position here.
inline const std::vector<std::string>& label_set(Task t) {
  static const std::vector<std::string> kialo{"Impactful", "Medium Impact", "Not Impactful"};
  static const std::vector<std::string> ddo{"Con", "Pro"};
  return t == Task::kialo ? kialo : ddo;
}

struct Label {
  Task task = Task::ddo;
  std::size_t index = 0;

  const std::string& value() const { return label_set(task).at(index); }

  static Label from_value(Task task, std::string_view value) {
    const auto& labels = label_set(task);
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == value) return Label{task, i};
    throw DomainError("label '" + std::string(value) + "' is not in the " + std::string(task_name(task)) +
                      " label set");
  }

  friend bool operator==(const Label&, const Label&) = default;
};

struct DebateNode {
  std::string id;
  std::string text;
  std::optional<std::string> parent_id;
  std::vector<int> votes;
  std::optional<Split> split;
};

// C^0 .. C^l, root first; the last element is the claim's parent.
struct ContextPath {
  std::vector<std::string> nodes;

  std::size_t length() const noexcept { return nodes.size(); }
  bool empty() const noexcept { return nodes.empty(); }
  friend bool operator==(const ContextPath&, const ContextPath&) = default;
};

struct DebateInstance {
  std::string id;
  std::string argument;
  ContextPath context;
  Label label;
  Split split = Split::train;
  Task task = Task::ddo;
};

struct DdoRound {
  std::string pro;
  std::string con;
};

struct DdoDebate {
  std::string id;
  std::vector<DdoRound> rounds;
  int pro_votes = 0;
  int con_votes = 0;
  bool forfeit_pro = false;
  bool forfeit_con = false;
};

// ---------------------------------------------------------------------------
// JSONL records
// ---------------------------------------------------------------------------

namespace detail {

inline const json& require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw Error(std::string("missing field '") + key + "'");
  return *it;
}

inline std::string require_string(const json& j, const char* key) {
  const auto& v = require(j, key);
  if (!v.is_string()) throw Error(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

inline int require_int(const json& j, const char* key) {
  const auto& v = require(j, key);
  if (!v.is_number_integer()) throw Error(std::string("field '") + key + "' must be an integer");
  return v.get<int>();
}

// Calls `fn(record, line_number)` for every non-blank line of a JSONL file.
template <class Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
    }
    try {
      fn(j, lineno);
    } catch (const ParseError&) {
      throw;
    } catch (const StructuralError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(e.what(), lineno);
    } catch (const json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
}

}  // namespace detail

inline json to_json(const DebateInstance& d) {
  return json{{"id", d.id},
              {"argument", d.argument},
              {"context", d.context.nodes},
              {"label", d.label.value()},
              {"split", split_name(d.split)},
              {"task", task_name(d.task)}};
}

inline DebateInstance instance_from_json(const json& j) {
  DebateInstance d;
  d.id = detail::require_string(j, "id");
  d.argument = detail::require_string(j, "argument");
  if (trim(d.argument).empty()) throw Error("argument must be non-empty");
  const auto& ctx = detail::require(j, "context");
  if (!ctx.is_array()) throw Error("field 'context' must be an array");
  for (const auto& c : ctx) {
    if (!c.is_string()) throw Error("context entries must be strings");
    d.context.nodes.push_back(c.get<std::string>());
  }
  d.task = parse_task(detail::require_string(j, "task"));
  d.label = Label::from_value(d.task, detail::require_string(j, "label"));
  d.split = parse_split(detail::require_string(j, "split"));
  return d;
}

inline DebateNode node_from_json(const json& j) {
  DebateNode n;
  n.id = detail::require_string(j, "id");
  n.text = detail::require_string(j, "text");
  if (auto it = j.find("parent_id"); it != j.end() && !it->is_null()) n.parent_id = it->get<std::string>();
  if (auto it = j.find("votes"); it != j.end()) n.votes = it->get<std::vector<int>>();
  if (auto it = j.find("split"); it != j.end() && !it->is_null()) n.split = parse_split(it->get<std::string>());
  return n;
}

inline json to_json(const DdoDebate& d) {
  json rounds = json::array();
  for (const auto& r : d.rounds) rounds.push_back({{"pro", r.pro}, {"con", r.con}});
  return json{{"id", d.id},
              {"rounds", rounds},
              {"pro_votes", d.pro_votes},
              {"con_votes", d.con_votes},
              {"forfeit", {{"pro", d.forfeit_pro}, {"con", d.forfeit_con}}}};
}

inline DdoDebate ddo_from_json(const json& j) {
  DdoDebate d;
  d.id = detail::require_string(j, "id");
  const auto& rounds = detail::require(j, "rounds");
  if (!rounds.is_array() || rounds.empty()) throw Error("a debate needs at least one round");
  for (const auto& r : rounds) d.rounds.push_back({detail::require_string(r, "pro"), detail::require_string(r, "con")});
  d.pro_votes = detail::require_int(j, "pro_votes");
  d.con_votes = detail::require_int(j, "con_votes");
  if (d.pro_votes < 0 || d.con_votes < 0) throw Error("vote counts must be non-negative");
  if (auto it = j.find("forfeit"); it != j.end()) {
    d.forfeit_pro = it->value("pro", false);
    d.forfeit_con = it->value("con", false);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

struct RejectedRecord {
  std::size_t line = 0;
  std::string message;
};

struct LoadReport {
  std::vector<DebateInstance> instances;
  std::vector<RejectedRecord> rejected;
};

// Canonical instance JSONL. Strict mode throws ParseError at the first bad
// line; lenient mode collects rejects and keeps going.
inline LoadReport load_instances(const std::filesystem::path& path, bool strict = true) {
  LoadReport report;
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      report.instances.push_back(instance_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      if (strict) throw ParseError(e.what(), lineno);
      report.rejected.push_back({lineno, e.what()});
    }
  }
  return report;
}

inline void write_instances(const std::filesystem::path& path, const std::vector<DebateInstance>& instances) {
  std::string out;
  for (const auto& d : instances) out += to_json(d).dump() + "\n";
  write_file_atomic(path, out);
}

inline std::vector<DdoDebate> load_ddo(const std::filesystem::path& path) {
  std::vector<DdoDebate> out;
  detail::for_each_jsonl(path, [&](const json& j, std::size_t) { out.push_back(ddo_from_json(j)); });
  return out;
}

// ---------------------------------------------------------------------------
// Kialo argument trees
// ---------------------------------------------------------------------------

class DebateTree {
 public:
  // Throws StructuralError on duplicate ids, dangling parents or cycles.
  explicit DebateTree(std::vector<DebateNode> nodes) : nodes_(std::move(nodes)) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!index_.emplace(nodes_[i].id, i).second) throw StructuralError("duplicate node id", nodes_[i].id);
    }
    for (const auto& n : nodes_) {
      if (n.parent_id && !index_.count(*n.parent_id))
        throw StructuralError("parent '" + *n.parent_id + "' does not exist", n.id);
    }
    // Colour walk: 0 unvisited, 1 on the current chain, 2 known to reach a root.
    std::vector<int> colour(nodes_.size(), 0);
    for (std::size_t start = 0; start < nodes_.size(); ++start) {
      std::vector<std::size_t> chain;
      std::size_t cur = start;
      while (true) {
        if (colour[cur] == 2) break;
        if (colour[cur] == 1) throw StructuralError("parent chain is cyclic", nodes_[cur].id);
        colour[cur] = 1;
        chain.push_back(cur);
        if (!nodes_[cur].parent_id) break;
        cur = index_.at(*nodes_[cur].parent_id);
      }
      for (auto c : chain) colour[c] = 2;
    }
  }

  const std::vector<DebateNode>& nodes() const noexcept { return nodes_; }

  const DebateNode& at(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) throw LookupError("node '" + std::string(id) + "' is not in the tree");
    return nodes_[it->second];
  }

  bool contains(std::string_view id) const { return index_.count(std::string(id)) > 0; }

 private:
  std::vector<DebateNode> nodes_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline DebateTree load_kialo_tree(const std::filesystem::path& path) {
  std::vector<DebateNode> nodes;
  detail::for_each_jsonl(path, [&](const json& j, std::size_t) { nodes.push_back(node_from_json(j)); });
  return DebateTree(std::move(nodes));
}

// Root-to-parent chain above `claim_id`. Root claims get an empty path.
inline ContextPath build_context_path(std::string_view claim_id, const DebateTree& tree) {
  const DebateNode* node = &tree.at(claim_id);
  ContextPath path;
  while (node->parent_id) {
    node = &tree.at(*node->parent_id);
    path.nodes.push_back(node->text);
  }
  std::reverse(path.nodes.begin(), path.nodes.end());
  return path;
}

struct VotePolicy {
  std::size_t min_valid_votes = 3;
  double agreement = 0.6;
};

enum class VoteOutcome { labeled, insufficient_votes, low_agreement };

struct VoteAggregate {
  VoteOutcome outcome = VoteOutcome::insufficient_votes;
  std::optional<Label> label;
};

// Ratings {4,5} -> Impactful, {3} -> Medium Impact, {1,2} -> Not Impactful.
// The winning band must hold at least `agreement` of the votes.
inline VoteAggregate aggregate_impact_votes(const std::vector<int>& votes, const VotePolicy& policy) {
  std::array<std::size_t, 3> band{};
  for (int v : votes) {
    if (v < 1 || v > 5) throw DomainError("impact rating " + std::to_string(v) + " is outside [1, 5]");
    band[v >= 4 ? 0 : (v == 3 ? 1 : 2)]++;
  }
  if (votes.size() < policy.min_valid_votes) return {VoteOutcome::insufficient_votes, std::nullopt};
  const auto best = static_cast<std::size_t>(std::max_element(band.begin(), band.end()) - band.begin());
  const double share = static_cast<double>(band[best]) / static_cast<double>(votes.size());
  if (share < policy.agreement) return {VoteOutcome::low_agreement, std::nullopt};
  return {VoteOutcome::labeled, Label{Task::kialo, best}};
}

struct TreeIngestReport {
  std::vector<DebateInstance> instances;
  std::size_t unvoted = 0;
  std::size_t insufficient_votes = 0;
  std::size_t low_agreement = 0;
};

// Every voted node becomes an instance; unvoted nodes (typically theses)
// only contribute context.
inline TreeIngestReport instances_from_tree(const DebateTree& tree, const VotePolicy& policy) {
  TreeIngestReport report;
  for (const auto& n : tree.nodes()) {
    if (n.votes.empty()) {
      ++report.unvoted;
      continue;
    }
    const auto agg = aggregate_impact_votes(n.votes, policy);
    if (agg.outcome == VoteOutcome::insufficient_votes) {
      ++report.insufficient_votes;
      continue;
    }
    if (agg.outcome == VoteOutcome::low_agreement) {
      ++report.low_agreement;
      continue;
    }
    if (trim(n.text).empty()) throw StructuralError("voted claim has empty text", n.id);
    DebateInstance d;
    d.id = n.id;
    d.argument = n.text;
    d.context = build_context_path(n.id, tree);
    d.label = *agg.label;
    d.split = n.split.value_or(Split::train);
    d.task = Task::kialo;
    report.instances.push_back(std::move(d));
  }
  return report;
}

// ---------------------------------------------------------------------------
// DDO filtering
// ---------------------------------------------------------------------------

// Terminal punctuation (., !, ?) ends a sentence unless the token it closes is
// a known abbreviation.
inline std::size_t count_sentences(std::string_view text) {
  static const std::unordered_set<std::string> abbreviations{
      "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc", "e.g", "i.e", "u.s", "u.k",
      "no", "inc", "ltd", "co", "corp", "fig", "approx", "dept", "est", "gov", "jan", "feb", "mar",
      "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "p.s", "a.m", "p.m"};
  std::size_t count = 0;
  bool pending = false;  // saw non-space content since the last boundary
  std::size_t token_start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      token_start = i + 1;
      continue;
    }
    if (c == '.' || c == '!' || c == '?') {
      std::size_t j = i;
      while (j + 1 < text.size() && (text[j + 1] == '.' || text[j + 1] == '!' || text[j + 1] == '?')) ++j;
      const bool at_boundary = j + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[j + 1])) ||
                               text[j + 1] == '"' || text[j + 1] == '\'' || text[j + 1] == ')';
      if (at_boundary && pending) {
        std::string token = to_lower(text.substr(token_start, i - token_start));
        while (!token.empty() && !std::isalnum(static_cast<unsigned char>(token.front()))) token.erase(0, 1);
        const bool abbrev = c == '.' && j == i && abbreviations.count(token);
        if (!abbrev) {
          ++count;
          pending = false;
        }
      }
      i = j;
      continue;
    }
    pending = true;
  }
  return count + (pending ? 1 : 0);
}

struct DdoFilterRules {
  int min_vote_margin = 2;
  std::size_t max_sentences_per_round = 40;
  bool drop_forfeits = true;
};

enum class DdoElimination { tie, vote_diff_1, forfeit, round_length };

inline std::string_view elimination_name(DdoElimination e) {
  switch (e) {
    case DdoElimination::tie: return "tie";
    case DdoElimination::vote_diff_1: return "vote-diff-1";
    case DdoElimination::forfeit: return "forfeit";
    case DdoElimination::round_length: return "round-length";
  }
  return "?";
}

struct KeptDebate {
  DdoDebate debate;
  Label winner;
};

struct DdoFilterResult {
  std::vector<KeptDebate> kept;
  std::map<std::string, std::size_t> eliminated;  // reason -> count
};

// First failing rule, checked in the order tie, vote margin, forfeit, round length.
inline std::optional<DdoElimination> ddo_elimination(const DdoDebate& d, const DdoFilterRules& rules) {
  const int diff = std::abs(d.pro_votes - d.con_votes);
  if (diff == 0) return DdoElimination::tie;
  if (diff < rules.min_vote_margin) return DdoElimination::vote_diff_1;
  if (rules.drop_forfeits && (d.forfeit_pro || d.forfeit_con)) return DdoElimination::forfeit;
  for (const auto& r : d.rounds) {
    if (count_sentences(r.pro) > rules.max_sentences_per_round ||
        count_sentences(r.con) > rules.max_sentences_per_round)
      return DdoElimination::round_length;
  }
  return std::nullopt;
}

inline DdoFilterResult filter_ddo(const std::vector<DdoDebate>& debates, const DdoFilterRules& rules = {}) {
  DdoFilterResult result;
  for (auto e : {DdoElimination::tie, DdoElimination::vote_diff_1, DdoElimination::forfeit,
                 DdoElimination::round_length})
    result.eliminated[std::string(elimination_name(e))] = 0;
  for (const auto& d : debates) {
    if (auto why = ddo_elimination(d, rules)) {
      ++result.eliminated[std::string(elimination_name(*why))];
      continue;
    }
    result.kept.push_back({d, Label::from_value(Task::ddo, d.pro_votes > d.con_votes ? "Pro" : "Con")});
  }
  return result;
}

// Earlier rounds become the context path; the final round is the argument.
inline DebateInstance ddo_instance(const KeptDebate& k, Split split) {
  DebateInstance d;
  d.id = k.debate.id;
  d.task = Task::ddo;
  d.label = k.winner;
  d.split = split;
  for (std::size_t r = 0; r + 1 < k.debate.rounds.size(); ++r) {
    d.context.nodes.push_back("PRO: " + k.debate.rounds[r].pro);
    d.context.nodes.push_back("CON: " + k.debate.rounds[r].con);
  }
  const auto& last = k.debate.rounds.back();
  d.argument = "PRO: " + last.pro + "\nCON: " + last.con;
  return d;
}

// ---------------------------------------------------------------------------
// Splits and statistics
// ---------------------------------------------------------------------------

// Fold index for every item; fold f receives exactly sizes[f] items.
inline std::vector<std::size_t> split_folds(std::size_t n, const std::vector<std::size_t>& sizes,
                                            std::uint64_t seed) {
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  if (total != n)
    throw ConfigError("fold sizes sum to " + std::to_string(total) + " but the corpus has " + std::to_string(n) +
                      " items");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  auto rng = make_rng(seed, "fold-split");
  seeded_shuffle(order, rng);
  std::vector<std::size_t> fold(n);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < sizes.size(); ++f)
    for (std::size_t k = 0; k < sizes[f]; ++k) fold[order[pos++]] = f;
  return fold;
}

// Near-even sizes, remainder to the leading folds: 2608 -> (870, 869, 869).
inline std::vector<std::size_t> even_fold_sizes(std::size_t n, std::size_t folds) {
  if (folds == 0) throw ConfigError("need at least one fold");
  std::vector<std::size_t> sizes(folds, n / folds);
  for (std::size_t f = 0; f < n % folds; ++f) ++sizes[f];
  return sizes;
}

struct CorpusStats {
  Task task = Task::kialo;
  // split -> per-label counts in canonical order
  std::map<Split, std::vector<std::size_t>> counts;

  std::size_t total(Split s) const {
    std::size_t t = 0;
    for (auto c : counts.at(s)) t += c;
    return t;
  }
  std::size_t count(Split s, std::string_view label) const {
    return counts.at(s).at(Label::from_value(task, label).index);
  }
};

inline CorpusStats corpus_stats(const std::vector<DebateInstance>& instances, Task task) {
  CorpusStats stats;
  stats.task = task;
  for (auto s : kAllSplits) stats.counts[s] = std::vector<std::size_t>(label_set(task).size(), 0);
  for (const auto& d : instances) {
    if (d.task != task) throw ContractError("instance '" + d.id + "' belongs to another task");
    stats.counts[d.split][d.label.index]++;
  }
  return stats;
}

inline json to_json(const CorpusStats& s) {
  json j;
  j["task"] = task_name(s.task);
  for (const auto& [split, counts] : s.counts) {
    json per;
    for (std::size_t i = 0; i < counts.size(); ++i) per[label_set(s.task)[i]] = counts[i];
    per["Total"] = s.total(split);
    j["splits"][std::string(split_name(split))] = per;
  }
  return j;
}

}  // namespace argpersona
