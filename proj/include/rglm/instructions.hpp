#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rglm/config.hpp"
#include "rglm/gnn.hpp"
#include "rglm/lm.hpp"
#include "rglm/ndt.hpp"
#include "rglm/recon.hpp"
#include "rglm/tag.hpp"

namespace rglm {

// Closed word-level vocabulary: prompt template words, yes/no, and the
// class names of the dataset.
class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> class_names);

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  const std::vector<std::string>& class_names() const { return class_names_; }
  bool contains(const std::string& w) const { return ids_.contains(w); }
  std::size_t id(const std::string& w) const;
  const std::string& word(std::size_t id) const;
  // Space-separated words to ids.
  std::vector<std::size_t> encode(const std::string& text) const;
  std::string decode(const std::vector<std::size_t>& ids) const;

 private:
  std::vector<std::string> words_;
  std::vector<std::string> class_names_;
  std::map<std::string, std::size_t> ids_;
};

// Class names of a graph, defaulting to class_<i>.
std::vector<std::string> class_names_of(const Tag& tag);

inline const char* kNodePrompt = "which class is this node ? answer :";
inline const char* kLinkPrompt = "are these two nodes linked ? answer :";

struct Example {
  std::size_t id = 0;
  std::vector<std::size_t> centers;
  GraphTokenSequence seq;
  Instruction ins;
  std::size_t answer = 0;  // class id, or 1 = yes / 0 = no
  Subgraph context;        // h-hop neighbourhood covering every sequence node
  // Rows follow seq.nodes(); edges are row indices.
  GraphTargets targets;
};

struct InstructionSet {
  Task task = Task::NodeClassification;
  Split split = Split::Train;
  std::vector<Example> examples;
  std::size_t num_answers = 0;
};

// One example per labeled node in split (node task), or balanced existing /
// absent pairs whose lower endpoint lies in split (link task). Deterministic
// given seed.
InstructionSet build_instructions(const Tag& tag, Task task, Split split, const NdtConfig& ndt,
                                  const Vocabulary& vocab, std::uint64_t seed);

// Sets targets.latent from a frozen encoder run on each example's context.
void attach_latents(InstructionSet& set, const GnnEncoder& encoder);
// Sets targets.latent to the raw features (no pre-trained encoder).
void attach_raw_latents(InstructionSet& set);

}  // namespace rglm
