#include <gtest/gtest.h>

#include <argpersona/prompt_template.hpp>

#include "fixtures.hpp"

using namespace argpersona;

namespace {

PersonaSet three_personae() {
  return PersonaSet{"k",
                    {{"Teacher", Stance::pro, "Helps focus", "calm", "teach"},
                     {"Student", Stance::con, "Limits choice", "loud", "dissent"},
                     {"Parent", Stance::neutral, "Costs vary", "frugal", "save"}},
                    "m",
                    "h"};
}

PersonaKnowledge all_of(PersonaSet s) { return PersonaKnowledge{std::move(s), DimensionSet::all()}; }

DebateInstance sample() {
  return fixtures::kialo_instance("k", "Uniforms help.", 0, {"Schools should change.", "Start with dress codes."});
}

}  // namespace

TEST(Dimensions, ParseAndLetters) {
  EXPECT_EQ(DimensionSet::parse("R&A").letters(), "RA");
  EXPECT_EQ(DimensionSet::parse("icsar").letters(), "RSACI");
  EXPECT_EQ(DimensionSet::all().letters(), "RSACI");
  EXPECT_THROW(DimensionSet::parse("RX"), ConfigError);
}

TEST(SelectPersonae, StanceGroupsAndCount) {
  const auto set = three_personae();
  EXPECT_EQ(select_personae(set, {DimensionSet::all(), StanceGroup::pro, {}}).set.personae.size(), 1u);
  EXPECT_EQ(select_personae(set, {DimensionSet::all(), StanceGroup::neutral, {}}).set.personae.front().role, "Parent");
  const auto two = select_personae(set, {DimensionSet::parse("RA"), StanceGroup::all, 2});
  ASSERT_EQ(two.set.personae.size(), 2u);
  EXPECT_EQ(two.set.personae[1].role, "Student");
  EXPECT_EQ(two.dimensions.letters(), "RA");
  EXPECT_THROW(select_personae(set, {DimensionSet::parse("SA"), StanceGroup::all, {}}), ConfigError);
  EXPECT_THROW(select_personae(set, {DimensionSet{}, StanceGroup::all, {}}), ConfigError);
}

TEST(Render, OptimalLayout) {
  PersonaSet one{"k", {three_personae().personae[0]}, "m", "h"};
  const auto r = render(sample(), PersonaKnowledge{one, DimensionSet::parse("RSA")}, TemplateSpec{});
  EXPECT_EQ(r.discrete_text,
            "Background:\nPersona 1:\nRole: Teacher\nStance: Pro\nPersona argument: Helps focus\n"
            "Context: Schools should change.\nContext: Start with dress codes.\n"
            "Argument: Uniforms help.\nPredict the impact level:");
  EXPECT_EQ(r.slot_count, 20u);
  EXPECT_EQ(r.discrete_text.substr(r.argument_span.begin, r.argument_span.end - r.argument_span.begin),
            "Uniforms help.");
}

TEST(Render, NoKnowledgeNoContext) {
  auto inst = sample();
  inst.context.nodes.clear();
  inst.task = Task::ddo;
  inst.label = Label{Task::ddo, 1};
  const auto r = render(inst, std::monostate{}, TemplateSpec{});
  EXPECT_EQ(r.discrete_text, "Argument: Uniforms help.\nPredict the winner:");
}

TEST(Render, FreeTextBackground) {
  const auto r = render(sample(), std::string("line one\n\n  line two  "), TemplateSpec{});
  EXPECT_EQ(r.background_lines, (std::vector<std::string>{"line one", "line two"}));
  EXPECT_EQ(r.discrete_text.rfind("Background:\nline one\nline two\n", 0), 0u);
}

TEST(Render, VariantsDiffer) {
  std::set<std::string> texts;
  for (auto v : {TemplateVariant::optimal, TemplateVariant::template1, TemplateVariant::template2,
                 TemplateVariant::template3, TemplateVariant::template4}) {
    const auto spec = TemplateSpec::for_variant(v);
    const auto r = render(sample(), all_of(three_personae()), spec);
    texts.insert(r.discrete_text);
    EXPECT_NE(r.discrete_text.find("Uniforms help."), std::string::npos);
  }
  EXPECT_EQ(texts.size(), 5u);
  const auto t3 = render(sample(), std::monostate{}, TemplateSpec::for_variant(TemplateVariant::template3));
  EXPECT_EQ(t3.discrete_text.rfind("Predict the impact level:", 0), 0u);
}

TEST(Render, IsDeterministic) {
  EXPECT_EQ(render(sample(), all_of(three_personae()), TemplateSpec{}),
            render(sample(), all_of(three_personae()), TemplateSpec{}));
}

TEST(TemplateSpecTest, ValidationAndJson) {
  TemplateSpec s = TemplateSpec::for_variant(TemplateVariant::template2);
  s.continuous_slots = 7;
  s.token_budget = 128;
  const auto back = template_spec_from_json(to_json(s));
  EXPECT_EQ(back.continuous_slots, 7u);
  EXPECT_EQ(back.token_budget, 128u);
  EXPECT_EQ(back.argument_marker, "Claim:");
  EXPECT_EQ(back.order, s.order);
  TemplateSpec bad;
  bad.continuous_slots = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TemplateSpec{};
  bad.order = {Section::argument, Section::argument, Section::context, Section::instruction};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TemplateSpec{};
  bad.context_marker = " ";
  EXPECT_THROW(render(sample(), std::monostate{}, bad), ConfigError);
}

TEST(Truncate, NoOpWithinBudget) {
  const auto r = render(sample(), all_of(three_personae()), TemplateSpec{});
  const auto t = truncate(r, 512, whitespace_counter());
  EXPECT_EQ(t.discrete_text, r.discrete_text);
}

TEST(Truncate, DropsOldestContextFirst) {
  TemplateSpec spec;
  spec.continuous_slots = 2;
  const auto r = render(sample(), std::monostate{}, spec);
  const auto count = whitespace_counter();
  const std::size_t full = prompt_tokens(r, count);
  const auto t = truncate(r, full - 1, count);
  EXPECT_EQ(t.context, (std::vector<std::string>{"Start with dress codes."}));
}

TEST(Truncate, TrimsLastPersonaFieldByField) {
  TemplateSpec spec;
  spec.continuous_slots = 1;
  auto inst = sample();
  inst.context.nodes = {"Parent claim."};
  const auto r = render(inst, all_of(three_personae()), spec);
  const auto count = whitespace_counter();
  const std::size_t full = prompt_tokens(r, count);
  // one token over: the last persona loses Characters ("Characters: frugal" = 2 tokens)
  const auto t1 = truncate(r, full - 1, count);
  ASSERT_EQ(t1.personae.size(), 3u);
  EXPECT_EQ(t1.personae[2].size(), 4u);
  EXPECT_EQ(t1.personae[2].back().dimension, Dimension::intent);
  // three over: Intent goes too
  const auto t2 = truncate(r, full - 3, count);
  EXPECT_EQ(t2.personae[2].size(), 3u);
  EXPECT_EQ(t2.personae[2].back().dimension, Dimension::argument);
  EXPECT_EQ(t2.context.size(), 1u);
}

TEST(Truncate, FinallyDropsParentButNeverArgument) {
  TemplateSpec spec;
  spec.continuous_slots = 5;
  const auto r = render(sample(), all_of(three_personae()), spec);
  const auto count = whitespace_counter();
  // argument + instruction alone: "Argument: Uniforms help." + "Predict the impact level:" = 7 tokens
  const auto t = truncate(r, 5 + 7, count);
  EXPECT_TRUE(t.personae.empty());
  EXPECT_TRUE(t.context.empty());
  EXPECT_EQ(t.discrete_text, "Argument: Uniforms help.\nPredict the impact level:");
  EXPECT_THROW(truncate(r, 5 + 6, count), OverBudgetError);
}

TEST(Truncate, FreeTextLinesFromTheEnd) {
  TemplateSpec spec;
  spec.continuous_slots = 1;
  auto inst = sample();
  inst.context.nodes = {"p"};
  const auto r = render(inst, std::string("alpha beta\ngamma delta"), spec);
  const auto count = whitespace_counter();
  const auto t = truncate(r, prompt_tokens(r, count) - 1, count);
  EXPECT_EQ(t.background_lines, (std::vector<std::string>{"alpha beta"}));
  EXPECT_EQ(t.context.size(), 1u);
}

TEST(VerbalizerTest, MapsBothWays) {
  const Verbalizer kialo(Task::kialo);
  EXPECT_EQ(kialo.words(), (std::vector<std::string>{"impactful", "medium impact", "not impactful"}));
  EXPECT_EQ(kialo.verbalize(Label{Task::kialo, 2}), "not impactful");
  EXPECT_EQ(kialo.verbalize("Medium Impact"), "medium impact");
  EXPECT_EQ(kialo.unverbalize("impactful").index, 0u);
  EXPECT_THROW(kialo.unverbalize("Impactful"), MappingError);
  EXPECT_THROW(kialo.verbalize(Label{Task::ddo, 0}), MappingError);
  EXPECT_THROW(kialo.verbalize("Pro"), MappingError);
  const Verbalizer ddo(Task::ddo);
  EXPECT_EQ(ddo.words(), (std::vector<std::string>{"con", "pro"}));
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(ddo.unverbalize(ddo.verbalize(Label{Task::ddo, i})).index, i);
}
