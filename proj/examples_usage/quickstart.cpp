// Library walk-through on the bundled sample data: ingest a Kialo-style
// debate tree, elicit personae with the offline mock model, train a soft
// prompt on the toy backbone and report test metrics.
//
//   quickstart [path/to/kialo_tree.jsonl]

#include <iostream>

#include <argpersona/pipeline.hpp>

using namespace argpersona;

int main(int argc, char** argv) {
  const std::filesystem::path tree_path = argc > 1 ? argv[1] : ARGPERSONA_DATA_DIR "/kialo_tree.jsonl";
  try {
    const auto tree = load_kialo_tree(tree_path);
    const auto ingest = instances_from_tree(tree, VotePolicy{});
    const auto& corpus = ingest.instances;
    std::cout << "instances: " << corpus.size() << " (" << ingest.low_agreement << " low agreement, "
              << ingest.insufficient_votes << " with too few votes)\n";

    LlmClient client({}, std::make_shared<CallbackTransport>(mock_completion));
    GenerationOptions gen;
    gen.seed = 7;
    const auto knowledge =
        generate_knowledge(&client, corpus, PromptPools{default_instructions(), default_examples()}, gen);
    KnowledgeStore store;
    for (const auto& r : knowledge.records) store.add(r);
    std::cout << "persona knowledge: " << knowledge.records.size() - knowledge.missing << " of "
              << knowledge.records.size() << " instances\n";

    ExperimentSpec ex;
    ex.train.learning_rate = 0.1;
    ex.train.max_steps = 60;
    ex.train.eval_every = 20;
    ex.train.seed = 1;
    const auto run = run_experiment(corpus, &store, ex);
    std::cout << "best validation " << run.trained.selection_metric << ": "
              << run.trained.best_metric.value_or(0.0) << " at step " << run.trained.best_step << "\n";
    std::cout << to_json(run.evaluation.report).dump(2) << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
