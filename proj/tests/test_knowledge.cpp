#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include <argpersona/conceptnet.hpp>
#include <argpersona/knowledge.hpp>
#include <argpersona/knowledge_store.hpp>
#include <argpersona/llm_client.hpp>

#include "fixtures.hpp"

using namespace argpersona;

namespace {

const char* kFivePersonae = R"(Persona 1:
Role: Teacher
Stance: Support
Argument: Uniforms reduce visible inequality.
Characters: Patient, observant
Intent: Protect students from bullying

**Persona 2:**
**Role:** Student
**Stance:** Against
**Argument:** Uniforms limit self-expression
  and cost families money.
**Characters:** Outspoken
**Intent:** Keep personal freedom

Persona 3:
- Role: Parent
- Stance: mixed
- Argument: It depends on the price.
- Character: Frugal
- Intent: Save money
)";

std::shared_ptr<CallbackTransport> scripted(std::vector<HttpResult> replies, std::atomic<int>* calls = nullptr) {
  auto state = std::make_shared<std::pair<std::mutex, std::vector<HttpResult>>>();
  state->second = std::move(replies);
  return std::make_shared<CallbackTransport>([state, calls](const json&) {
    std::lock_guard lock(state->first);
    if (calls) ++*calls;
    if (state->second.empty()) return HttpResult{500, "exhausted"};
    auto r = state->second.front();
    state->second.erase(state->second.begin());
    return r;
  });
}

CompletionRequest request(std::string prompt) {
  CompletionRequest r;
  r.model = "m";
  r.prompt = std::move(prompt);
  r.temperature = 0.0;
  return r;
}

}  // namespace

TEST(Stance, SynonymTable) {
  EXPECT_EQ(normalize_stance("Support"), Stance::pro);
  EXPECT_EQ(normalize_stance(" PRO."), Stance::pro);
  EXPECT_EQ(normalize_stance("against"), Stance::con);
  EXPECT_EQ(normalize_stance("Oppose"), Stance::con);
  EXPECT_EQ(normalize_stance("Undecided"), Stance::neutral);
  EXPECT_EQ(normalize_stance("mixed"), Stance::neutral);
  EXPECT_THROW(normalize_stance("sort of"), StanceError);
}

TEST(PersonaParser, MixedFormatting) {
  const auto ps = parse_personae(kFivePersonae);
  ASSERT_EQ(ps.size(), 3u);
  EXPECT_EQ(ps[0].role, "Teacher");
  EXPECT_EQ(ps[0].stance, Stance::pro);
  EXPECT_EQ(ps[1].stance, Stance::con);
  EXPECT_EQ(ps[1].argument, "Uniforms limit self-expression and cost families money.");
  EXPECT_EQ(ps[2].characters, "Frugal");
  EXPECT_EQ(ps[2].stance, Stance::neutral);
}

TEST(PersonaParser, FormatRoundTrip) {
  const auto ps = parse_personae(kFivePersonae);
  EXPECT_EQ(parse_personae(format_personae(ps)), ps);
}

TEST(PersonaParser, HeaderlessBlocksSplitOnRole) {
  const auto ps = parse_personae(
      "Role: A\nStance: pro\nArgument: x\nCharacters: y\nIntent: z\n"
      "Role: B\nStance: con\nArgument: x\nCharacters: y\nIntent: z\n");
  ASSERT_EQ(ps.size(), 2u);
  EXPECT_EQ(ps[1].role, "B");
}

TEST(PersonaParser, Failures) {
  EXPECT_THROW(parse_personae("   "), PersonaParseError);
  EXPECT_THROW(parse_personae("I cannot help with that."), PersonaParseError);
  EXPECT_THROW(parse_personae("Persona 1:\nRole: A\nStance: pro\nArgument: x\nIntent: z\n"), PersonaParseError);
  EXPECT_THROW(parse_personae("Persona 1:\nRole: A\nStance: perhaps\nArgument: x\nCharacters: y\nIntent: z\n"),
               StanceError);
}

TEST(PersonaJson, RoundTrip) {
  PersonaSet s{"id1", parse_personae(kFivePersonae), "model-x", "abc"};
  EXPECT_EQ(persona_set_from_json(to_json(s)), s);
}

TEST(PersonaPrompt, SeededSampling) {
  const PromptPools pools{default_instructions(), default_examples()};
  const auto inst = fixtures::kialo_instance("k", "Ban cars downtown.", 0, {"Cities", "Cars"});
  const auto a = build_persona_prompt(inst, pools, 3, 11);
  const auto b = build_persona_prompt(inst, pools, 3, 11);
  EXPECT_EQ(render_generation_prompt(a), render_generation_prompt(b));
  EXPECT_EQ(a.example_indices.size(), 3u);
  std::set<std::size_t> unique(a.example_indices.begin(), a.example_indices.end());
  EXPECT_EQ(unique.size(), 3u);
  bool differs = false;
  for (std::uint64_t s = 12; s < 20 && !differs; ++s)
    differs = render_generation_prompt(build_persona_prompt(inst, pools, 3, s)) != render_generation_prompt(a);
  EXPECT_TRUE(differs);
  EXPECT_NE(render_generation_prompt(a).find("Ban cars downtown."), std::string::npos);
  EXPECT_THROW(build_persona_prompt(inst, pools, pools.examples.size() + 1, 0), ConfigError);
  EXPECT_THROW(build_persona_prompt(inst, PromptPools{{}, pools.examples}, 1, 0), ConfigError);
}

TEST(ResponseCacheTest, StoresAndServes) {
  fixtures::TempDir dir;
  std::atomic<int> calls{0};
  ClientConfig cfg;
  cfg.cache_dir = dir.path();
  LlmClient client(cfg, scripted({{200, completion_body("first")}, {200, completion_body("second")}}, &calls));
  EXPECT_EQ(client.complete(request("p")), "first");
  EXPECT_EQ(client.complete(request("p")), "first");
  EXPECT_EQ(calls, 1);
  EXPECT_EQ(client.network_calls(), 1u);
  EXPECT_EQ(ResponseCache(dir.path()).size(), 1u);

  ClientConfig offline;
  offline.cache_dir = dir.path();
  offline.cache_mode = CacheMode::cache_only;
  LlmClient cached(offline, nullptr);
  EXPECT_EQ(cached.complete(request("p")), "first");
  EXPECT_EQ(cached.network_calls(), 0u);
  EXPECT_THROW(cached.complete(request("other")), CacheMissError);
}

TEST(ResponseCacheTest, KeyCoversEveryRequestField) {
  auto a = request("p");
  auto b = a;
  b.temperature = 0.5;
  auto c = a;
  c.seed = 3;
  auto d = a;
  d.model = "n";
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_NE(a.hash(), d.hash());
  EXPECT_EQ(a.hash(), request("p").hash());
}

TEST(Retry, BacksOffOnRetryableStatus) {
  std::vector<std::chrono::milliseconds> sleeps;
  LlmClient client({}, scripted({{429, "slow down"}, {503, "busy"}, {200, completion_body("ok")}}));
  client.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d); });
  EXPECT_EQ(client.complete(request("p")), "ok");
  ASSERT_EQ(sleeps.size(), 2u);
  EXPECT_EQ(sleeps[0].count(), 500);
  EXPECT_EQ(sleeps[1].count(), 1000);
  EXPECT_EQ(client.network_calls(), 3u);
}

TEST(Retry, GivesUpAndReportsStatus) {
  LlmClient client({}, scripted({{500, "a"}, {500, "b"}, {500, "c"}, {500, "d"}, {200, completion_body("late")}}));
  client.set_sleeper([](auto) {});
  try {
    client.complete(request("p"));
    FAIL() << "expected TransportError";
  } catch (const TransportError& e) {
    EXPECT_EQ(e.status(), 500);
  }
  EXPECT_EQ(client.network_calls(), 4u);
}

TEST(Retry, NonRetryableFailsImmediately) {
  LlmClient client({}, scripted({{401, "bad key"}, {200, completion_body("never")}}));
  client.set_sleeper([](auto) { FAIL() << "should not sleep"; });
  EXPECT_THROW(client.complete(request("p")), TransportError);
  EXPECT_EQ(client.network_calls(), 1u);
}

TEST(Client, ConcurrentIdenticalRequestsShareOneCall) {
  fixtures::TempDir dir;
  std::atomic<int> calls{0};
  auto transport = std::make_shared<CallbackTransport>([&](const json&) {
    ++calls;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    return HttpResult{200, completion_body("shared")};
  });
  ClientConfig cfg;
  cfg.cache_dir = dir.path();
  cfg.max_in_flight = 8;
  LlmClient client(cfg, transport);
  std::vector<std::string> out(6);
  {
    std::vector<std::jthread> threads;
    for (std::size_t i = 0; i < out.size(); ++i) threads.emplace_back([&, i] { out[i] = client.complete(request("same")); });
  }
  for (const auto& s : out) EXPECT_EQ(s, "shared");
  EXPECT_EQ(calls, 1);
}

TEST(Client, Configuration) {
  EXPECT_THROW(LlmClient({}, nullptr), ConfigError);
  ClientConfig cfg;
  cfg.cache_mode = CacheMode::cache_only;
  EXPECT_THROW(LlmClient(cfg, nullptr), ConfigError);
}

TEST(Elicitation, RegeneratesThenMarksMissing) {
  const PromptPools pools{default_instructions(), default_examples()};
  const auto inst = fixtures::kialo_instance("k", "Ban cars.", 0);
  ElicitationConfig cfg;
  {
    LlmClient client({}, scripted({{200, completion_body("nonsense")}, {200, completion_body(kFivePersonae)}}));
    const auto res = elicit_personae(client, inst, pools, cfg, 1);
    ASSERT_TRUE(res.personae);
    EXPECT_EQ(res.attempts, 2u);
    EXPECT_EQ(res.failures.size(), 1u);
    EXPECT_EQ(res.personae->personae.size(), 3u);
  }
  {
    LlmClient client({}, scripted({{200, completion_body("x")}, {200, completion_body("")}, {200, completion_body("y")}}));
    const auto res = elicit_personae(client, inst, pools, cfg, 1);
    EXPECT_FALSE(res.personae);
    EXPECT_EQ(res.attempts, 3u);
  }
}

TEST(Elicitation, MockModelIsDeterministic) {
  const PromptPools pools{default_instructions(), default_examples()};
  const auto inst = fixtures::kialo_instance("k", "Ban cars.", 0, {"Cities"});
  auto run = [&](std::uint64_t seed) {
    LlmClient client({}, std::make_shared<CallbackTransport>(mock_completion));
    KnowledgeRecord rec;
    rec.instance_id = inst.id;
    rec.personae = *elicit_personae(client, inst, pools, {}, seed).personae;
    return to_json(rec).dump();
  };
  EXPECT_EQ(run(4), run(4));
  EXPECT_NE(run(4), run(5));
}

TEST(Background, EmptyGenerationIsAnError) {
  LlmClient client({}, scripted({{200, completion_body("  ")}}));
  EXPECT_THROW(generate_background_knowledge(client, fixtures::kialo_instance("k", "x", 0), "m"), EmptyGenerationError);
}

TEST(KnowledgeStoreTest, JsonlRoundTrip) {
  fixtures::TempDir dir;
  KnowledgeRecord a;
  a.instance_id = "a";
  a.personae = PersonaSet{"a", parse_personae(kFivePersonae), "m", "h"};
  KnowledgeRecord b;
  b.instance_id = "b";
  b.missing = true;
  b.personae.instance_id = "b";
  KnowledgeRecord c;
  c.instance_id = "c";
  c.kind = KnowledgeKind::conceptnet;
  c.triples = {{"school_uniform", "UsedFor", "school"}};
  KnowledgeRecord d;
  d.instance_id = "d";
  d.kind = KnowledgeKind::background;
  d.text = "facts";
  write_file_atomic(dir / "k.jsonl", knowledge_jsonl({a, b, c, d}));
  const auto store = KnowledgeStore::load(dir / "k.jsonl");
  EXPECT_EQ(store.size(), 4u);
  EXPECT_EQ(store.find("a")->personae.personae.size(), 3u);
  EXPECT_TRUE(store.find("b")->missing);
  EXPECT_EQ(store.find("c")->triples.front().tail, "school");
  EXPECT_EQ(store.find("d")->text, "facts");
  EXPECT_EQ(store.find("zzz"), nullptr);
}

TEST(ConceptNet, FortyTwoRelationFrames) {
  EXPECT_EQ(relation_templates().size(), 42u);
  for (const auto& [rel, frame] : relation_templates()) {
    EXPECT_NE(frame.find('X'), std::string::npos) << rel;
    EXPECT_NE(frame.find('Y'), std::string::npos) << rel;
  }
}

TEST(ConceptNet, NormalizationAndLemmas) {
  EXPECT_EQ(lemmatize("Uniforms"), "uniform");
  EXPECT_EQ(lemmatize("policies"), "policy");
  EXPECT_EQ(lemmatize("children"), "child");
  EXPECT_EQ(lemmatize("bus"), "bus");
  EXPECT_EQ(normalize_concept("school_uniforms"), "school uniform");
  EXPECT_EQ(strip_concept_uri("/c/en/school_uniform/n"), "school_uniform");
}

TEST(ConceptNet, GroundingOrderAndDedup) {
  ConceptKb kb({{"school_uniform", "UsedFor", "school"},
                {"school", "RelatedTo", "education"},
                {"uniform", "IsA", "clothing"},
                {"cost", "RelatedTo", "money"},
                {"the", "RelatedTo", "article"}});
  const auto inst = fixtures::kialo_instance("k", "School uniforms cost a lot.", 0, {"Schools matter"});
  const auto triples = ground_conceptnet(inst, kb);
  ASSERT_EQ(triples.size(), 4u);
  // position 0: "school uniform" (longest first) then "school"
  EXPECT_EQ(triples[0].head, "school_uniform");
  EXPECT_EQ(triples[1].head, "school");
  EXPECT_EQ(triples[2].head, "uniform");
  EXPECT_EQ(triples[3].head, "cost");
}

TEST(ConceptNet, RenderForms) {
  const std::vector<Triple> t{{"school_uniform", "UsedFor", "school"}, {"life", "Antonym", "death"}};
  EXPECT_EQ(render_triples(t, TripleForm::triple), "(school_uniform, UsedFor, school)\n(life, Antonym, death)");
  EXPECT_EQ(render_triples(t, TripleForm::language), "school uniform is used for school\nlife is the opposite of death");
  EXPECT_THROW(render_triples({{"a", "Unknown", "b"}}, TripleForm::language), TemplateMissingError);
}

TEST(ConceptNet, LoadsBothFileFormats) {
  fixtures::TempDir dir;
  {
    std::ofstream out(dir / "kb.tsv");
    out << "# comment\nschool\tRelatedTo\teducation\n";
    out << "/a/[x]\t/r/IsA\t/c/en/cat/n\t/c/en/animal\t{}\n";
    out << "/a/[y]\t/r/IsA\t/c/fr/chat\t/c/en/animal\t{}\n";
  }
  const auto kb = ConceptKb::load(dir / "kb.tsv");
  ASSERT_EQ(kb.triples().size(), 2u);
  EXPECT_EQ(kb.triples()[1], (Triple{"cat", "IsA", "animal"}));
  {
    std::ofstream out(dir / "bad.tsv");
    out << "only\ttwo\n";
  }
  EXPECT_THROW(ConceptKb::load(dir / "bad.tsv"), ParseError);
}
