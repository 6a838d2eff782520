#include <gtest/gtest.h>

#include <argpersona/knowledge.hpp>
#include <argpersona/zeroshot.hpp>

#include "fixtures.hpp"

using namespace argpersona;

namespace {

const std::vector<std::size_t> kIdentity3{0, 1, 2};

DebateInstance sample() { return fixtures::kialo_instance("z1", "Uniforms help.", 1, {"Schools should change."}); }

}  // namespace

TEST(McqPartsTest, ParseLetters) {
  EXPECT_EQ(McqParts::parse("kac").letters(), "CAK");
  EXPECT_EQ(McqParts::parse("A").letters(), "A");
  EXPECT_THROW(McqParts::parse("AX"), ConfigError);
}

TEST(McqPrompt, LayoutAndParts) {
  const auto p = build_mcq_prompt(sample(), std::string("Role: Teacher"), McqParts::parse("CAK"), kIdentity3);
  EXPECT_EQ(p.text,
            "Answer the following multiple choice question.\n\n"
            "Knowledge:\nRole: Teacher\n\n"
            "Context:\nSchools should change.\n\n"
            "Argument: Uniforms help.\n\n"
            "Question: How impactful is the argument on the debate?\n"
            "(A) Impactful\n(B) Medium Impact\n(C) Not Impactful\n"
            "Answer with the letter of one option only.");
  const auto a = build_mcq_prompt(sample(), std::string("ignored"), McqParts::parse("A"), kIdentity3);
  EXPECT_EQ(a.text.find("Knowledge:"), std::string::npos);
  EXPECT_EQ(a.text.find("Context:"), std::string::npos);
}

TEST(McqPrompt, OptionOrderAndValidation) {
  const auto p = build_mcq_prompt(sample(), std::nullopt, McqParts::parse("A"), {2, 0, 1});
  EXPECT_NE(p.text.find("(A) Not Impactful\n(B) Impactful\n(C) Medium Impact"), std::string::npos);
  EXPECT_EQ(parse_choice("A", p.options), 2u);
  EXPECT_THROW(build_mcq_prompt(sample(), std::nullopt, McqParts::parse("C"), kIdentity3), ConfigError);
  EXPECT_THROW(build_mcq_prompt(sample(), std::nullopt, McqParts::parse("A"), {0, 0, 1}), ConfigError);
  EXPECT_THROW(build_mcq_prompt(sample(), std::nullopt, McqParts::parse("A"), {0, 1}), ConfigError);
}

TEST(ParseChoice, AcceptedForms) {
  const auto& o = kIdentity3;
  EXPECT_EQ(parse_choice("A", o), 0u);
  EXPECT_EQ(parse_choice(" (b) ", o), 1u);
  EXPECT_EQ(parse_choice("C.", o), 2u);
  EXPECT_EQ(parse_choice("Answer: B", o), 1u);
  EXPECT_EQ(parse_choice("The answer is (C) because it is weak.", o), 2u);
  EXPECT_EQ(parse_choice("**Answer:** A", o), 0u);
  EXPECT_EQ(parse_choice("(A) Impactful", o), 0u);
  EXPECT_EQ(parse_choice("B. Medium Impact", o), 1u);
  EXPECT_EQ(parse_choice("B) it has some impact", o), 1u);
  EXPECT_EQ(parse_choice("After weighing both sides, my choice is C", o), 2u);
}

TEST(ParseChoice, Abstentions) {
  const auto& o = kIdentity3;
  EXPECT_EQ(parse_choice("", o), kAbstain);
  EXPECT_EQ(parse_choice("I cannot decide.", o), kAbstain);
  EXPECT_EQ(parse_choice("D", o), kAbstain);
  EXPECT_EQ(parse_choice("Answer: E", o), kAbstain);
  EXPECT_EQ(parse_choice("A", {}), kAbstain);
  // lowercase "a" inside a sentence is an article, not a choice
  EXPECT_EQ(parse_choice("it is a", o), kAbstain);
}

TEST(OptionOrder, ShuffledIsPerInstanceAndSeeded) {
  ZeroShotConfig cfg;
  cfg.option_order = OptionOrder::shuffled;
  auto a = sample();
  const auto o1 = option_order_for(a, cfg);
  EXPECT_EQ(o1, option_order_for(a, cfg));
  std::set<std::vector<std::size_t>> seen;
  for (int i = 0; i < 30; ++i) {
    a.id = "z" + std::to_string(i);
    auto o = option_order_for(a, cfg);
    std::vector<std::size_t> sorted = o;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, kIdentity3);
    seen.insert(o);
  }
  EXPECT_GT(seen.size(), 1u);
  cfg.option_order = OptionOrder::canonical;
  EXPECT_EQ(option_order_for(a, cfg), kIdentity3);
}

TEST(RunZeroShot, ScoresParsedAnswersAndAbstentions) {
  std::vector<DebateInstance> insts{fixtures::kialo_instance("b", "x", 1), fixtures::kialo_instance("a", "y", 0),
                                    fixtures::kialo_instance("c", "z", 2)};
  auto transport = std::make_shared<CallbackTransport>([](const json& req) {
    const auto prompt = req["messages"].back()["content"].get<std::string>();
    if (prompt.find("Argument: x") != std::string::npos) return HttpResult{200, completion_body("(B)")};
    if (prompt.find("Argument: y") != std::string::npos) return HttpResult{200, completion_body("no idea")};
    return HttpResult{401, "denied"};
  });
  LlmClient client({}, transport);
  ZeroShotConfig cfg;
  cfg.concurrency = 3;
  const auto res = run_zero_shot(client, insts, cfg);
  ASSERT_EQ(res.records.size(), 3u);
  EXPECT_EQ(res.records[0].instance_id, "a");
  EXPECT_FALSE(res.records[0].parsed.has_value());
  EXPECT_EQ(res.records[1].parsed, "Medium Impact");
  EXPECT_TRUE(res.records[2].error.has_value());
  EXPECT_DOUBLE_EQ(res.report.accuracy, 33.33);
  ASSERT_TRUE(res.report.abstain_rate);
  EXPECT_DOUBLE_EQ(*res.report.abstain_rate, 66.67);
  const auto j = to_json(res.records[0]);
  EXPECT_TRUE(j["parsed"].is_null());
  EXPECT_EQ(j["parts"], "A");
  EXPECT_FALSE(j.contains("error"));
  EXPECT_TRUE(to_json(res.records[2]).contains("error"));
}

TEST(RunZeroShot, KnowledgeLookupAndDeterminism) {
  std::vector<DebateInstance> insts;
  for (int i = 0; i < 6; ++i) insts.push_back(fixtures::kialo_instance("i" + std::to_string(i), "arg", i % 3));
  std::atomic<int> with_knowledge{0};
  auto transport = std::make_shared<CallbackTransport>([&](const json& req) {
    if (req["messages"].back()["content"].get<std::string>().find("Knowledge:\nK-") != std::string::npos)
      ++with_knowledge;
    return mock_completion(req);
  });
  LlmClient client({}, transport);
  ZeroShotConfig cfg;
  cfg.parts = McqParts::parse("AK");
  cfg.option_order = OptionOrder::shuffled;
  const KnowledgeLookup lookup = [](const DebateInstance& d) { return std::optional<std::string>("K-" + d.id); };
  const auto a = run_zero_shot(client, insts, cfg, lookup);
  const auto b = run_zero_shot(client, insts, cfg, lookup);
  EXPECT_EQ(with_knowledge, 12);
  for (std::size_t i = 0; i < insts.size(); ++i) {
    EXPECT_EQ(to_json(a.records[i]), to_json(b.records[i]));
    EXPECT_TRUE(a.records[i].parsed.has_value());
  }
}

TEST(RunZeroShot, RejectsBadInput) {
  LlmClient client({}, std::make_shared<CallbackTransport>(mock_completion));
  EXPECT_THROW(run_zero_shot(client, {}, {}), ContractError);
  ZeroShotConfig cfg;
  cfg.parts = McqParts::parse("C");
  EXPECT_THROW(run_zero_shot(client, {sample()}, cfg), ConfigError);
  auto ddo = sample();
  ddo.task = Task::ddo;
  ddo.label = Label{Task::ddo, 0};
  EXPECT_THROW(run_zero_shot(client, {sample(), ddo}, {}), ContractError);
}
