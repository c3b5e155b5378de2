#include "streamlab/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "streamlab/rng.hpp"

namespace streamlab {

Transition identity_transition() {
  return [](const std::optional<Payload>&, const Payload& in) {
    return TransitionResult{std::nullopt, {in}};
  };
}

Transition concat_transition(std::optional<int> window) {
  return [window](const std::optional<Payload>& state, const Payload& in) {
    TextWindow w = state ? std::get<TextWindow>(*state) : TextWindow{};
    w.items.push_back(std::get<Text>(in).value);
    if (window && static_cast<int>(w.items.size()) > *window)
      w.items.erase(w.items.begin(), w.items.end() - *window);
    std::string joined;
    for (const auto& s : w.items) joined += s;
    return TransitionResult{Payload{w}, {Text{joined}}};
  };
}

std::vector<WordPosting> tokenize(const Document& doc) {
  std::vector<WordPosting> out;
  std::map<std::string, std::size_t> slot;
  std::int64_t pos = 0;
  std::size_t start = 0;
  const auto& t = doc.text;
  while (start <= t.size()) {
    auto end = t.find(' ', start);
    if (end == std::string::npos) end = t.size();
    if (end > start) {
      auto word = t.substr(start, end - start);
      auto [it, fresh] = slot.emplace(word, out.size());
      if (fresh) out.push_back(WordPosting{word, doc.doc_id, {}});
      out[it->second].positions.push_back(pos);
      ++pos;
    }
    start = end + 1;
  }
  return out;
}

Transition tokenize_transition() {
  return [](const std::optional<Payload>&, const Payload& in) {
    TransitionResult r;
    for (auto& wp : tokenize(std::get<Document>(in))) r.outputs.emplace_back(std::move(wp));
    return r;
  };
}

Transition index_reduce_transition() {
  return [](const std::optional<Payload>& state, const Payload& in) {
    const auto& wp = std::get<WordPosting>(in);
    IndexChange next;
    if (state) {
      next = std::get<IndexChange>(*state);
      if (next.word != wp.word) throw Error("index state for '" + next.word + "' got '" + wp.word + "'");
      ++next.ordinal;
    } else {
      next.word = wp.word;
      next.ordinal = 1;
    }
    next.postings.push_back(wp);
    return TransitionResult{Payload{next}, {Payload{next}}};
  };
}

Transition sum_transition() {
  return [](const std::optional<Payload>& state, const Payload& in) {
    std::int64_t total = state ? std::get<Integer>(*state).value : 0;
    total += std::get<Integer>(in).value;
    return TransitionResult{Payload{Integer{total}}, {Integer{total}}};
  };
}

namespace {

OperationSpec identity_op(std::string name) {
  OperationSpec op;
  op.name = std::move(name);
  op.kind = OperationKind::map;
  op.transition = identity_transition();
  op.transition_name = "identity";
  return op;
}

PartitionFn word_partition() {
  return [](const Payload& p) { return std::get<WordPosting>(p).word; };
}

Transition transition_by_name(const std::string& name, const Json& params) {
  if (name == "identity") return identity_transition();
  if (name == "concat") {
    std::optional<int> window;
    if (params.contains("window") && !params.at("window").is_null())
      window = params.at("window").get<int>();
    if (window && *window < 1) throw InvalidGraph("concat window must be >= 1");
    return concat_transition(window);
  }
  if (name == "tokenize") return tokenize_transition();
  if (name == "index_reduce") return index_reduce_transition();
  if (name == "sum") return sum_transition();
  throw InvalidGraph("unknown transition '" + name + "'");
}

PartitionFn partition_by_name(const std::string& name) {
  if (name.empty() || name == "none") return {};
  if (name == "word") return word_partition();
  throw InvalidGraph("unknown partition function '" + name + "'");
}

}  // namespace

DataflowGraph concat_pipeline(ConcatConfig cfg) {
  if (cfg.window && *cfg.window < 1) throw InvalidGraph("concat window must be >= 1");
  OperationSpec concat;
  concat.name = "concat";
  concat.kind = OperationKind::stateful;
  concat.commutative = false;
  concat.order_sensitive = true;
  concat.transition = concat_transition(cfg.window);
  concat.transition_name = "concat";
  concat.params = Json{{"window", cfg.window ? Json(*cfg.window) : Json(nullptr)}};
  std::vector<OperationSpec> ops;
  ops.push_back(identity_op("source"));
  ops.push_back(std::move(concat));
  ops.push_back(identity_op("sink"));
  return build_graph(std::move(ops), {{"source", "concat"}, {"concat", "sink"}});
}

DataflowGraph inverted_index_pipeline(int reducer_parallelism) {
  OperationSpec tok;
  tok.name = "tokenize";
  tok.kind = OperationKind::flat_map;
  tok.transition = tokenize_transition();
  tok.transition_name = "tokenize";

  OperationSpec idx;
  idx.name = "index";
  idx.kind = OperationKind::stateful;
  idx.commutative = false;
  idx.order_sensitive = true;
  idx.transition = index_reduce_transition();
  idx.transition_name = "index_reduce";
  idx.parallelism = reducer_parallelism;
  idx.partition_by = word_partition();
  idx.params = Json{{"partition_by", "word"}};

  std::vector<OperationSpec> ops;
  ops.push_back(identity_op("source"));
  ops.push_back(std::move(tok));
  ops.push_back(std::move(idx));
  ops.push_back(identity_op("sink"));
  return build_graph(std::move(ops),
                     {{"source", "tokenize"}, {"tokenize", "index"}, {"index", "sink"}});
}

DataflowGraph sum_pipeline() {
  OperationSpec sum;
  sum.name = "sum";
  sum.kind = OperationKind::stateful;
  sum.commutative = true;
  sum.order_sensitive = false;
  sum.transition = sum_transition();
  sum.transition_name = "sum";
  std::vector<OperationSpec> ops;
  ops.push_back(identity_op("source"));
  ops.push_back(std::move(sum));
  ops.push_back(identity_op("sink"));
  return build_graph(std::move(ops), {{"source", "sum"}, {"sum", "sink"}});
}

DataflowGraph identity_pipeline() {
  std::vector<OperationSpec> ops;
  ops.push_back(identity_op("source"));
  ops.push_back(identity_op("sink"));
  return build_graph(std::move(ops), {{"source", "sink"}});
}

DataflowGraph graph_from_json(const Json& j) {
  std::vector<OperationSpec> ops;
  for (const auto& o : j.at("operations")) {
    OperationSpec op;
    op.name = o.at("name").get<std::string>();
    op.kind = operation_kind_from_string(o.value("kind", std::string("map")));
    op.transition_name = o.value("transition", std::string("identity"));
    op.params = o.value("params", Json::object());
    op.transition = transition_by_name(op.transition_name, op.params);
    op.commutative = o.value("commutative", true);
    op.order_sensitive = o.value("order_sensitive", !op.commutative);
    op.parallelism = o.value("parallelism", 1);
    const auto part = o.value("partition_by", std::string{});
    op.partition_by = partition_by_name(part);
    if (!part.empty()) op.params["partition_by"] = part;
    ops.push_back(std::move(op));
  }
  std::vector<std::pair<std::string, std::string>> edges;
  for (const auto& e : j.at("edges"))
    edges.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
  return build_graph(std::move(ops), std::move(edges));
}

Json graph_to_json(const DataflowGraph& g) {
  Json ops = Json::array();
  for (const auto& o : g.operations) {
    Json params = o.params;
    Json jo{{"name", o.name},
            {"kind", to_string(o.kind)},
            {"transition", o.transition_name},
            {"commutative", o.commutative},
            {"order_sensitive", o.order_sensitive},
            {"parallelism", o.parallelism}};
    if (params.contains("partition_by")) {
      jo["partition_by"] = params["partition_by"];
      params.erase("partition_by");
    }
    jo["params"] = params;
    ops.push_back(jo);
  }
  Json edges = Json::array();
  for (const auto& [a, b] : g.edges) edges.push_back(Json::array({a, b}));
  return Json{{"operations", ops}, {"edges", edges}};
}

DataflowGraph pipeline_by_name(const std::string& name, const Json& params) {
  if (name == "concat") {
    ConcatConfig cfg;
    if (params.contains("window"))
      cfg.window = params["window"].is_null() ? std::nullopt
                                              : std::optional<int>(params["window"].get<int>());
    return concat_pipeline(cfg);
  }
  if (name == "index") return inverted_index_pipeline(params.value("reducers", 4));
  if (name == "sum") return sum_pipeline();
  if (name == "identity") return identity_pipeline();
  throw InvalidGraph("unknown pipeline '" + name + "'");
}

ZipfSampler::ZipfSampler(int n, double exponent) {
  if (n < 1) throw Error("vocabulary must be positive");
  if (!(exponent > 0.0)) throw Error("zipf exponent must be positive");
  cdf_.reserve(n);
  double acc = 0.0;
  for (int r = 1; r <= n; ++r) {
    acc += std::pow(static_cast<double>(r), -exponent);
    cdf_.push_back(acc);
  }
  for (auto& c : cdf_) c /= acc;
}

int ZipfSampler::rank_for(double u) const {
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  if (it == cdf_.end()) --it;
  return static_cast<int>(it - cdf_.begin()) + 1;
}

std::string vocabulary_word(int rank) { return "w" + std::to_string(rank); }

std::vector<Element> generate_corpus(const CorpusSpec& spec) {
  if (spec.documents < 0) throw Error("document count must be non-negative");
  if (spec.min_words < 0 || spec.max_words < spec.min_words) throw Error("bad words-per-document range");
  ZipfSampler zipf(spec.vocabulary, spec.zipf_exponent);
  RngStream rng(spec.seed, "corpus");
  std::vector<Element> docs;
  for (int d = 1; d <= spec.documents; ++d) {
    const auto words = rng.uniform_int(spec.min_words, spec.max_words);
    std::string text;
    for (std::int64_t w = 0; w < words; ++w) {
      if (w) text += ' ';
      text += vocabulary_word(zipf.rank_for(rng.uniform01()));
    }
    docs.push_back(make_input(static_cast<std::uint64_t>(d), Document{d, text}));
  }
  return docs;
}

MaterializedIndex batch_index_oracle(const std::vector<Element>& corpus) {
  MaterializedIndex idx;
  for (const auto& e : corpus)
    for (auto& wp : tokenize(std::get<Document>(e.payload))) idx[wp.word].push_back(wp);
  return idx;
}

MaterializedIndex canonical_index(MaterializedIndex idx) {
  for (auto& [w, list] : idx)
    std::stable_sort(list.begin(), list.end(),
                     [](const WordPosting& a, const WordPosting& b) { return a.doc_id < b.doc_id; });
  return idx;
}

ReconstructedIndex apply_index_changes(const std::vector<Payload>& records) {
  ReconstructedIndex out;
  std::map<std::string, std::map<std::int64_t, IndexChange>> by_word;
  for (const auto& p : records) {
    const auto* ic = std::get_if<IndexChange>(&p);
    if (!ic) {
      out.problems.push_back("non index_change record " + canonical(p));
      continue;
    }
    auto [it, fresh] = by_word[ic->word].emplace(ic->ordinal, *ic);
    if (!fresh && !(it->second == *ic))
      out.problems.push_back("conflicting records for " + ic->word + " ordinal " +
                             std::to_string(ic->ordinal));
  }
  for (auto& [word, chain] : by_word) {
    std::int64_t expect = 1;
    const IndexChange* prev = nullptr;
    for (const auto& [ord, rec] : chain) {
      if (ord != expect) {
        out.problems.push_back("ordinal gap for " + word + " at " + std::to_string(expect));
        break;
      }
      const auto n = rec.postings.size();
      if (n != static_cast<std::size_t>(ord) ||
          (prev && !std::equal(prev->postings.begin(), prev->postings.end(), rec.postings.begin())))
        out.problems.push_back("record " + std::to_string(ord) + " of " + word +
                               " does not extend its predecessor");
      prev = &rec;
      ++expect;
    }
    if (!chain.empty()) out.index[word] = chain.rbegin()->second.postings;
  }
  out.index = canonical_index(std::move(out.index));
  return out;
}

std::vector<Element> read_corpus_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus file " + path);
  std::vector<Element> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(element_from_json(Json::parse(line)));
  }
  return out;
}

void write_corpus_jsonl(const std::string& path, const std::vector<Element>& corpus) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write corpus file " + path);
  for (const auto& e : corpus) out << element_to_json(e).dump() << '\n';
}

}  // namespace streamlab
