#pragma once

// ConceptNet grounding: match lemmatized n-grams of an instance against a
// concept_ triple store and render the hits as triples or sentences.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "common.hpp"
#include "corpus.hpp"

namespace argpersona {

struct Triple {
  std::string head;
  std::string relation;
  std::string tail;

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

class TemplateMissingError : public Error {
 public:
  using Error::Error;
};

// Suffix rules plus a small irregular table; good enough to match concept
// names, which ConceptNet stores in lemma form.
inline std::string lemmatize(std::string_view word) {
  static const std::unordered_map<std::string, std::string> irregular{
      {"children", "child"}, {"people", "person"}, {"men", "man"},     {"women", "woman"},
      {"mice", "mouse"},     {"feet", "foot"},     {"teeth", "tooth"}, {"geese", "goose"},
      {"is", "be"},          {"are", "be"},        {"was", "be"},      {"were", "be"},
      {"has", "have"},       {"had", "have"},      {"does", "do"},     {"did", "do"}};
  std::string w = to_lower(word);
  if (auto it = irregular.find(w); it != irregular.end()) return it->second;
  const auto ends = [&](std::string_view s) { return w.size() > s.size() && w.ends_with(s); };
  if (w.size() > 4 && ends("ies")) return w.substr(0, w.size() - 3) + "y";
  if (ends("sses")) return w.substr(0, w.size() - 2);
  if (w.size() > 4 && (ends("xes") || ends("ches") || ends("shes") || ends("zes"))) return w.substr(0, w.size() - 2);
  if (w.size() > 3 && ends("s") && !ends("ss") && !ends("us") && !ends("is")) return w.substr(0, w.size() - 1);
  return w;
}

inline const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words{
      "a",     "an",    "the",   "and",   "or",     "but",   "if",    "of",    "at",    "by",    "for",  "with",
      "about", "to",    "from",  "in",    "on",     "off",   "over",  "under", "again", "then",  "once", "here",
      "there", "when",  "where", "why",   "how",    "all",   "any",   "both",  "each",  "few",   "more", "most",
      "other", "some",  "such",  "no",    "nor",    "not",   "only",  "own",   "same",  "so",    "than", "too",
      "very",  "can",   "will",  "just",  "should", "now",   "i",     "me",    "my",    "we",    "our",  "you",
      "your",  "he",    "him",   "his",   "she",    "her",   "it",    "its",   "they",  "them",  "their", "what",
      "which", "who",   "whom",  "this",  "that",   "these", "those", "am",    "be",    "been",  "being", "have",
      "do",    "would", "could", "as",    "until",  "while", "into",  "through", "during", "before", "after",
      "above", "below", "up",    "down",  "out",    "also",  "because", "s",   "t",     "don",   "isn",  "aren"};
  return words;
}

inline std::vector<std::string> concept_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// "operating_systems" / "Operating systems" -> "operating system"
inline std::string normalize_concept(std::string_view concept_) {
  std::string key;
  for (const auto& t : concept_tokens(concept_)) {
    if (!key.empty()) key.push_back(' ');
    key += lemmatize(t);
  }
  return key;
}

// "/c/en/operating_system/n" -> "operating_system"; plain names pass through.
inline std::string strip_concept_uri(std::string_view uri) {
  if (!uri.starts_with("/c/")) return std::string(uri);
  std::vector<std::string_view> parts;
  std::size_t start = 1;
  while (start <= uri.size()) {
    auto end = uri.find('/', start);
    if (end == std::string_view::npos) end = uri.size();
    parts.push_back(uri.substr(start, end - start));
    start = end + 1;
  }
  return parts.size() >= 3 ? std::string(parts[2]) : std::string(uri);
}

class ConceptKb {
 public:
  ConceptKb() = default;
  explicit ConceptKb(std::vector<Triple> triples) : triples_(std::move(triples)) { reindex(); }

  // Accepts "head<TAB>relation<TAB>tail" lines or ConceptNet 5 assertion
  // rows ("/a/...<TAB>/r/Rel<TAB>/c/en/x<TAB>/c/en/y<TAB>{...}"). Non-English
  // assertions are skipped.
  static ConceptKb load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<Triple> triples;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty() || line.front() == '#') continue;
      std::vector<std::string> cols;
      std::size_t start = 0;
      while (true) {
        auto tab = line.find('\t', start);
        cols.emplace_back(trim(std::string_view(line).substr(start, tab - start)));
        if (tab == std::string::npos) break;
        start = tab + 1;
      }
      if (cols.size() >= 4 && cols[0].starts_with("/a/")) {
        if (!cols[2].starts_with("/c/en/") || !cols[3].starts_with("/c/en/")) continue;
        std::string rel = cols[1].starts_with("/r/") ? cols[1].substr(3) : cols[1];
        triples.push_back({strip_concept_uri(cols[2]), rel, strip_concept_uri(cols[3])});
      } else if (cols.size() == 3) {
        triples.push_back({cols[0], cols[1], cols[2]});
      } else {
        throw ParseError("expected 3 tab-separated columns or a ConceptNet assertion row", lineno);
      }
    }
    return ConceptKb(std::move(triples));
  }

  const std::vector<Triple>& triples() const noexcept { return triples_; }

  // kb positions of triples whose head or tail normalizes to `key`, ascending.
  const std::vector<std::size_t>* lookup(const std::string& key) const {
    auto it = index_.find(key);
    return it == index_.end() ? nullptr : &it->second;
  }

  std::size_t max_concept_words() const noexcept { return max_words_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < triples_.size(); ++i) {
      for (const auto* c : {&triples_[i].head, &triples_[i].tail}) {
        const auto key = normalize_concept(*c);
        if (key.empty()) continue;
        auto& v = index_[key];
        if (v.empty() || v.back() != i) v.push_back(i);
        max_words_ = std::max<std::size_t>(max_words_, std::count(key.begin(), key.end(), ' ') + 1);
      }
    }
  }

  std::vector<Triple> triples_;
  std::unordered_map<std::string, std::vector<std::size_t>> index_;
  std::size_t max_words_ = 0;
};

// Token stream scanned for matches: argument first, then C^0 .. C^l.
inline std::vector<std::string> grounding_tokens(const DebateInstance& instance) {
  std::vector<std::string> lemmas;
  const auto add = [&](std::string_view text) {
    for (const auto& t : concept_tokens(text)) lemmas.push_back(lemmatize(t));
  };
  add(instance.argument);
  for (const auto& c : instance.context.nodes) add(c);
  return lemmas;
}

// Triples whose head or tail equals an n-gram (n <= max_n) of the instance.
// N-grams that begin or end with a stopword are skipped. Order: match
// position, then longer n-gram first, then kb order; each triple once.
inline std::vector<Triple> ground_conceptnet(const DebateInstance& instance, const ConceptKb& kb,
                                             std::size_t max_n = 3) {
  const auto tokens = grounding_tokens(instance);
  const auto& stop = stopwords();
  std::vector<Triple> out;
  std::unordered_set<std::size_t> seen;
  for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
    if (stop.count(tokens[pos])) continue;
    for (std::size_t n = std::min(max_n, tokens.size() - pos); n >= 1; --n) {
      if (stop.count(tokens[pos + n - 1])) continue;
      std::string key = tokens[pos];
      for (std::size_t k = 1; k < n; ++k) key += " " + tokens[pos + k];
      if (const auto* hits = kb.lookup(key)) {
        for (auto i : *hits)
          if (seen.insert(i).second) out.push_back(kb.triples()[i]);
      }
    }
  }
  return out;
}

// Sentence frames for the 42 relation types; X is the head, Y the tail.
inline const std::map<std::string, std::string, std::less<>>& relation_templates() {
  static const std::map<std::string, std::string, std::less<>> frames{
      {"RelatedTo", "X is related to Y"},
      {"FormOf", "X is a form of Y"},
      {"IsA", "X is a Y"},
      {"PartOf", "X is part of Y"},
      {"HasA", "X has Y"},
      {"UsedFor", "X is used for Y"},
      {"CapableOf", "X is capable of Y"},
      {"AtLocation", "X is located at Y"},
      {"Causes", "X causes Y"},
      {"HasSubevent", "X has subevent Y"},
      {"HasFirstSubevent", "X begins with Y"},
      {"HasLastSubevent", "X ends with Y"},
      {"HasPrerequisite", "X requires Y"},
      {"HasProperty", "X has the property Y"},
      {"MotivatedByGoal", "X is motivated by Y"},
      {"ObstructedBy", "X is obstructed by Y"},
      {"Desires", "X desires Y"},
      {"CreatedBy", "X is created by Y"},
      {"Synonym", "X is a synonym of Y"},
      {"Antonym", "X is the opposite of Y"},
      {"DistinctFrom", "X is distinct from Y"},
      {"DerivedFrom", "X is derived from Y"},
      {"SymbolOf", "X is a symbol of Y"},
      {"DefinedAs", "X is defined as Y"},
      {"MannerOf", "X is a way of Y"},
      {"LocatedNear", "X is located near Y"},
      {"HasContext", "X is used in the context of Y"},
      {"SimilarTo", "X is similar to Y"},
      {"EtymologicallyRelatedTo", "X is etymologically related to Y"},
      {"EtymologicallyDerivedFrom", "X is etymologically derived from Y"},
      {"CausesDesire", "X makes people want Y"},
      {"MadeOf", "X is made of Y"},
      {"ReceivesAction", "X can be Y"},
      {"InstanceOf", "X is an instance of Y"},
      {"Entails", "X entails Y"},
      {"NotDesires", "X does not desire Y"},
      {"NotUsedFor", "X is not used for Y"},
      {"NotCapableOf", "X is not capable of Y"},
      {"NotHasProperty", "X does not have the property Y"},
      {"ExternalURL", "X has external link Y"},
      {"dbpedia/genre", "X belongs to the genre Y"},
      {"dbpedia/occupation", "X works as Y"},
  };
  return frames;
}

enum class TripleForm { triple, language };

inline TripleForm parse_triple_form(std::string_view s) {
  if (s == "triple") return TripleForm::triple;
  if (s == "language") return TripleForm::language;
  throw ConfigError("unknown knowledge form '" + std::string(s) + "' (expected triple or language)");
}

inline std::string concept_surface(std::string_view concept_) {
  std::string s(concept_);
  std::replace(s.begin(), s.end(), '_', ' ');
  return s;
}

inline std::string render_triples(const std::vector<Triple>& triples, TripleForm form) {
  std::string out;
  for (const auto& t : triples) {
    if (!out.empty()) out += "\n";
    if (form == TripleForm::triple) {
      out += "(" + t.head + ", " + t.relation + ", " + t.tail + ")";
      continue;
    }
    const auto& frames = relation_templates();
    auto it = frames.find(t.relation);
    if (it == frames.end()) throw TemplateMissingError("no sentence frame for relation '" + t.relation + "'");
    std::string s;
    for (char c : it->second) {
      if (c == 'X')
        s += concept_surface(t.head);
      else if (c == 'Y')
        s += concept_surface(t.tail);
      else
        s.push_back(c);
    }
    out += s;
  }
  return out;
}

}  // namespace argpersona
