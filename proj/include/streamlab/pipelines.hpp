#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "streamlab/model.hpp"

namespace streamlab {

struct ConcatConfig {
  std::optional<int> window = 2;  // nullopt: unbounded
};

/// source -> concat (stateful, non-commutative) -> sink
DataflowGraph concat_pipeline(ConcatConfig cfg = {});

/// source -> tokenize (flat_map) -> index (stateful, partitioned by word) -> sink
DataflowGraph inverted_index_pipeline(int reducer_parallelism = 4);

/// Commutative control: source -> sum (running integer sum) -> sink
DataflowGraph sum_pipeline();

/// source -> sink, both identity maps.
DataflowGraph identity_pipeline();

// Built-in transitions, usable from JSON graph definitions.
Transition identity_transition();
Transition concat_transition(std::optional<int> window);
Transition tokenize_transition();
Transition index_reduce_transition();
Transition sum_transition();

/// Graph from {"operations":[{name,kind,transition,params,commutative,order_sensitive,
/// parallelism,partition_by}],"edges":[[from,to],...]}.
DataflowGraph graph_from_json(const Json& j);
Json graph_to_json(const DataflowGraph& g);

/// Named pipelines: "concat", "index", "sum", "identity".
DataflowGraph pipeline_by_name(const std::string& name, const Json& params = Json::object());

/// Space-separated words with first-occurrence order; one posting per distinct word.
std::vector<WordPosting> tokenize(const Document& doc);

struct CorpusSpec {
  std::uint64_t seed = 1;
  int documents = 10;
  int vocabulary = 100;
  double zipf_exponent = 1.0;
  int min_words = 5;
  int max_words = 15;
};

/// Draws ranks 1..n with P(r) proportional to r^-s.
class ZipfSampler {
 public:
  ZipfSampler(int n, double exponent);
  /// u in [0,1)
  int rank_for(double u) const;

 private:
  std::vector<double> cdf_;
};

std::string vocabulary_word(int rank);

/// Documents with producer_seq 1..n and doc_id == producer_seq.
std::vector<Element> generate_corpus(const CorpusSpec& spec);

using MaterializedIndex = std::map<std::string, std::vector<WordPosting>>;

/// Reference fold over documents in order.
MaterializedIndex batch_index_oracle(const std::vector<Element>& corpus);

struct ReconstructedIndex {
  MaterializedIndex index;
  /// Descriptions of ordinal gaps or conflicting records, empty when consistent.
  std::vector<std::string> problems;
};

/// Applies change records in delivery order: a record replaces the word's entry
/// when its ordinal is the next one. Postings are reported sorted by doc_id.
ReconstructedIndex apply_index_changes(const std::vector<Payload>& records);

/// Sorts each posting list by doc_id.
MaterializedIndex canonical_index(MaterializedIndex idx);

std::vector<Element> read_corpus_jsonl(const std::string& path);
void write_corpus_jsonl(const std::string& path, const std::vector<Element>& corpus);

}  // namespace streamlab
