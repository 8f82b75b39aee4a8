#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "aspectemb/corpus.hpp"
#include "aspectemb/vecmath.hpp"

namespace aspectemb {

// Exact cosine index: entries kept sorted by id so iteration (and therefore
// every downstream aggregate) is deterministic.
struct EmbeddingIndex {
  std::vector<std::string> ids;
  std::vector<Vec> vectors;
  std::size_t dim = 0;

  std::size_t size() const { return ids.size(); }
  bool contains(const std::string& id) const;
  const Vec& vector_of(const std::string& id) const;
};

EmbeddingIndex build_index(const std::map<std::string, Vec>& embeddings);

struct Neighbor {
  std::string id;
  double similarity = 0.0;
  std::size_t rank = 0;  // 1-based
};

// Top-k by cosine similarity, ties broken by ascending id. Fewer than k
// results only when the index runs out of candidates.
std::vector<Neighbor> knn(const EmbeddingIndex& index, const std::string& query_id, std::size_t k,
                          bool exclude_self = true);

// True when the two documents share at least one label for the aspect.
// Documents without labels for the aspect (background included) are never
// relevant; callers validate aspect names against the corpus.
bool relevance(const Document& seed, const Document& candidate, const std::string& aspect);

// Fraction of the top k that is relevant; the denominator is k even when
// fewer neighbors exist.
double precision_at_k(const std::vector<bool>& relevant, std::size_t k);

// Fraction of all relevant documents retrieved; 0 when total_relevant is 0
// (evaluate() then skips the query from macro averages).
double recall_at_k(const std::vector<bool>& relevant, std::size_t total_relevant);

enum class MrrMode {
  FirstRelevant,  // reciprocal rank of the first relevant neighbor (standard)
  AllRelevant,    // mean reciprocal rank over every relevant neighbor retrieved
};

double mrr_at_k(const std::vector<bool>& relevant, MrrMode mode = MrrMode::FirstRelevant);

struct QueryRecord {
  std::string seed_id;
  std::vector<Neighbor> neighbors;
  std::vector<bool> relevant;
  std::size_t total_relevant = 0;
  double precision = 0.0;
  double recall = 0.0;
  double reciprocal_rank = 0.0;
};

struct EvalReport {
  std::string aspect;
  std::size_t k = 10;
  double precision = 0.0;
  double recall = 0.0;
  double mrr = 0.0;
  std::size_t skipped_queries = 0;  // seeds with no relevant document in the index
  std::vector<QueryRecord> queries;
};

// Runs knn (exclude_self) for every corpus document labeled for `aspect`, in
// ascending seed-id order, and macro-averages over the queries that have at
// least one relevant document. Every labeled document must be present in the
// index; index entries absent from the corpus count as irrelevant.
EvalReport evaluate(const EmbeddingIndex& index, const Corpus& corpus, const std::string& aspect,
                    std::size_t k = 10, MrrMode mrr_mode = MrrMode::FirstRelevant);

std::string report_to_json(const EvalReport& report);

}  // namespace aspectemb
