#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include <argpersona/corpus.hpp>
#include <argpersona/common.hpp>

namespace fixtures {

namespace fs = std::filesystem;
using namespace argpersona;

// Self-removing scratch directory.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("argpersona-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const noexcept { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline DebateInstance kialo_instance(std::string id, std::string argument, std::size_t label,
                                     std::vector<std::string> context = {}, Split split = Split::train) {
  DebateInstance d;
  d.id = std::move(id);
  d.argument = std::move(argument);
  d.context.nodes = std::move(context);
  d.label = Label{Task::kialo, label};
  d.split = split;
  d.task = Task::kialo;
  return d;
}

// Labels carried by cue words, so a small backbone can learn them from the
// soft prompt alone.
inline std::vector<DebateInstance> cue_corpus(std::size_t n, Split split, std::uint64_t seed,
                                              const std::string& prefix = "x") {
  static const char* cues[3][3] = {{"decisive", "compelling", "landmark"},
                                   {"moderate", "partial", "arguable"},
                                   {"irrelevant", "trivial", "weak"}};
  static const char* fillers[] = {"policy", "schools", "cities", "people", "budget", "health",
                                  "science", "rights", "markets", "climate", "cars", "voters"};
  auto rng = make_rng(seed, "cue-corpus:" + prefix);
  std::vector<DebateInstance> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 3;
    std::string text = "this";
    for (int w = 0; w < 4; ++w) text += std::string(" ") + fillers[uniform_index(rng, 12)];
    text += std::string(" is ") + cues[label][uniform_index(rng, 3)];
    out.push_back(kialo_instance(prefix + std::to_string(i), text, label, {"should we act on it"}, split));
  }
  return out;
}

inline DdoRound round_of(std::string pro, std::string con) { return DdoRound{std::move(pro), std::move(con)}; }

inline DdoDebate ddo_debate(std::string id, int pro, int con, std::vector<DdoRound> rounds = {}) {
  DdoDebate d;
  d.id = std::move(id);
  d.pro_votes = pro;
  d.con_votes = con;
  d.rounds = rounds.empty() ? std::vector<DdoRound>{round_of("Opening for.", "Opening against."),
                                                    round_of("Closing for.", "Closing against.")}
                            : std::move(rounds);
  return d;
}

inline std::string sentences(std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += "Sentence number " + std::to_string(i) + " is here. ";
  return s;
}

}  // namespace fixtures
