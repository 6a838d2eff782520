#pragma once

// Knowledge-source JSONL: one record per instance, for persona, background
// or ConceptNet knowledge.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptnet.hpp"
#include "corpus.hpp"
#include "knowledge.hpp"

namespace argpersona {

enum class KnowledgeKind { persona, background, conceptnet };

inline std::string_view kind_name(KnowledgeKind k) {
  switch (k) {
    case KnowledgeKind::persona: return "persona";
    case KnowledgeKind::background: return "background";
    case KnowledgeKind::conceptnet: return "conceptnet";
  }
  return "persona";
}

inline KnowledgeKind parse_kind(std::string_view s) {
  if (s == "persona") return KnowledgeKind::persona;
  if (s == "background") return KnowledgeKind::background;
  if (s == "conceptnet") return KnowledgeKind::conceptnet;
  throw ConfigError("unknown knowledge kind '" + std::string(s) + "'");
}

struct KnowledgeRecord {
  std::string instance_id;
  KnowledgeKind kind = KnowledgeKind::persona;
  PersonaSet personae;         // persona
  std::string text;            // background
  std::vector<Triple> triples;  // conceptnet
  bool missing = false;        // generation failed after all retries
  std::string model;
  std::string prompt_hash;
};

inline json to_json(const KnowledgeRecord& r) {
  switch (r.kind) {
    case KnowledgeKind::persona: {
      json j = to_json(r.personae);
      if (r.missing) j["knowledge_missing"] = true;
      return j;
    }
    case KnowledgeKind::background: {
      json j{{"instance_id", r.instance_id}, {"kind", "background"}, {"text", r.text},
             {"model", r.model},             {"prompt_hash", r.prompt_hash}};
      if (r.missing) j["knowledge_missing"] = true;
      return j;
    }
    case KnowledgeKind::conceptnet: {
      json triples = json::array();
      for (const auto& t : r.triples) triples.push_back({t.head, t.relation, t.tail});
      return json{{"instance_id", r.instance_id}, {"kind", "conceptnet"}, {"triples", triples}};
    }
  }
  return {};
}

inline KnowledgeRecord knowledge_from_json(const json& j) {
  KnowledgeRecord r;
  r.instance_id = j.at("instance_id").get<std::string>();
  r.kind = j.contains("kind") ? parse_kind(j.at("kind").get<std::string>()) : KnowledgeKind::persona;
  r.missing = j.value("knowledge_missing", false);
  r.model = j.value("model", "");
  r.prompt_hash = j.value("prompt_hash", "");
  switch (r.kind) {
    case KnowledgeKind::persona: r.personae = persona_set_from_json(j); break;
    case KnowledgeKind::background: r.text = j.at("text").get<std::string>(); break;
    case KnowledgeKind::conceptnet:
      for (const auto& t : j.at("triples")) r.triples.push_back({t.at(0).get<std::string>(), t.at(1).get<std::string>(), t.at(2).get<std::string>()});
      break;
  }
  return r;
}

class KnowledgeStore {
 public:
  static KnowledgeStore load(const std::filesystem::path& path) {
    KnowledgeStore store;
    detail::for_each_jsonl(path, [&](const json& j, std::size_t) {
      auto rec = knowledge_from_json(j);
      store.records_[rec.instance_id] = std::move(rec);
    });
    return store;
  }

  void add(KnowledgeRecord r) { records_[r.instance_id] = std::move(r); }

  const KnowledgeRecord* find(const std::string& instance_id) const {
    auto it = records_.find(instance_id);
    return it == records_.end() ? nullptr : &it->second;
  }

  std::size_t size() const noexcept { return records_.size(); }

 private:
  std::map<std::string, KnowledgeRecord> records_;
};

// Records in input order, one JSON object per line.
inline std::string knowledge_jsonl(const std::vector<KnowledgeRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

}  // namespace argpersona
