#include "aspectemb/retrieval.hpp"

#include <algorithm>
#include <stdexcept>

#include "json.hpp"

#include "aspectemb/training.hpp"

namespace aspectemb {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

// ids are sorted, so membership is a binary search.
std::size_t position_of(const EmbeddingIndex& index, const std::string& id) {
  const auto it = std::lower_bound(index.ids.begin(), index.ids.end(), id);
  if (it == index.ids.end() || *it != id) {
    fail("document id '" + id + "' not in the embedding index");
  }
  return static_cast<std::size_t>(it - index.ids.begin());
}

}  // namespace

bool EmbeddingIndex::contains(const std::string& id) const {
  return std::binary_search(ids.begin(), ids.end(), id);
}

const Vec& EmbeddingIndex::vector_of(const std::string& id) const {
  return vectors[position_of(*this, id)];
}

EmbeddingIndex build_index(const std::map<std::string, Vec>& embeddings) {
  if (embeddings.empty()) fail("cannot build an index from zero embeddings");
  EmbeddingIndex index;
  index.ids.reserve(embeddings.size());
  index.vectors.reserve(embeddings.size());
  for (const auto& [id, vec] : embeddings) {  // std::map iterates in ascending id order
    if (index.dim == 0) {
      index.dim = vec.size();
    } else if (vec.size() != index.dim) {
      fail("embedding for '" + id + "' has dimension " + std::to_string(vec.size()) +
           ", expected " + std::to_string(index.dim));
    }
    index.ids.push_back(id);
    index.vectors.push_back(vec);
  }
  if (index.dim == 0) fail("embeddings must have dimension >= 1");
  return index;
}

std::vector<Neighbor> knn(const EmbeddingIndex& index, const std::string& query_id, std::size_t k,
                          bool exclude_self) {
  if (k < 1) throw std::invalid_argument("knn: k must be >= 1");
  const std::size_t query_pos = position_of(index, query_id);
  const Vec& query = index.vectors[query_pos];

  std::vector<Neighbor> candidates;
  candidates.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (exclude_self && i == query_pos) continue;
    candidates.push_back({index.ids[i], cosine_sim(query, index.vectors[i]), 0});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.id < b.id;
  });
  if (candidates.size() > k) candidates.resize(k);
  for (std::size_t i = 0; i < candidates.size(); ++i) candidates[i].rank = i + 1;
  return candidates;
}

bool relevance(const Document& seed, const Document& candidate, const std::string& aspect) {
  const auto seed_it = seed.labels.find(aspect);
  const auto cand_it = candidate.labels.find(aspect);
  if (seed_it == seed.labels.end() || cand_it == candidate.labels.end()) return false;
  for (const std::string& label : seed_it->second) {
    if (cand_it->second.count(label) > 0) return true;
  }
  return false;
}

double precision_at_k(const std::vector<bool>& relevant, std::size_t k) {
  if (k < 1) throw std::invalid_argument("precision_at_k: k must be >= 1");
  if (relevant.size() > k) throw std::invalid_argument("precision_at_k: more neighbors than k");
  std::size_t hits = 0;
  for (bool r : relevant) hits += r ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(k);
}

double recall_at_k(const std::vector<bool>& relevant, std::size_t total_relevant) {
  if (total_relevant == 0) return 0.0;
  std::size_t hits = 0;
  for (bool r : relevant) hits += r ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(total_relevant);
}

double mrr_at_k(const std::vector<bool>& relevant, MrrMode mode) {
  if (mode == MrrMode::FirstRelevant) {
    for (std::size_t i = 0; i < relevant.size(); ++i) {
      if (relevant[i]) return 1.0 / static_cast<double>(i + 1);
    }
    return 0.0;
  }
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < relevant.size(); ++i) {
    if (relevant[i]) {
      sum += 1.0 / static_cast<double>(i + 1);
      ++hits;
    }
  }
  return hits == 0 ? 0.0 : sum / static_cast<double>(hits);
}

EvalReport evaluate(const EmbeddingIndex& index, const Corpus& corpus, const std::string& aspect,
                    std::size_t k, MrrMode mrr_mode) {
  if (corpus.aspects().count(aspect) == 0) {
    fail("aspect '" + aspect + "' does not occur in the corpus");
  }
  if (k < 1) throw std::invalid_argument("evaluate: k must be >= 1");

  // Seeds: every document labeled for the aspect, visited in ascending id
  // order so macro sums are reproducible bit for bit.
  std::vector<const Document*> seeds;
  for (const Document& doc : corpus.documents()) {
    if (!doc.label_set(aspect).empty()) seeds.push_back(&doc);
  }
  std::sort(seeds.begin(), seeds.end(),
            [](const Document* a, const Document* b) { return a->id < b->id; });

  EvalReport report;
  report.aspect = aspect;
  report.k = k;

  double precision_sum = 0.0;
  double recall_sum = 0.0;
  double mrr_sum = 0.0;
  std::size_t scored = 0;

  for (const Document* seed : seeds) {
    if (!index.contains(seed->id)) {
      fail("no embedding for labeled document '" + seed->id + "'");
    }
    QueryRecord record;
    record.seed_id = seed->id;
    record.neighbors = knn(index, seed->id, k, /*exclude_self=*/true);

    record.relevant.reserve(record.neighbors.size());
    for (const Neighbor& neighbor : record.neighbors) {
      const bool rel = corpus.contains(neighbor.id) &&
                       relevance(*seed, corpus.at(neighbor.id), aspect);
      record.relevant.push_back(rel);
    }
    for (const std::string& id : index.ids) {
      if (id == seed->id || !corpus.contains(id)) continue;
      if (relevance(*seed, corpus.at(id), aspect)) ++record.total_relevant;
    }

    record.precision = precision_at_k(record.relevant, k);
    record.recall = recall_at_k(record.relevant, record.total_relevant);
    record.reciprocal_rank = mrr_at_k(record.relevant, mrr_mode);

    if (record.total_relevant == 0) {
      ++report.skipped_queries;
    } else {
      precision_sum += record.precision;
      recall_sum += record.recall;
      mrr_sum += record.reciprocal_rank;
      ++scored;
    }
    report.queries.push_back(std::move(record));
  }

  if (scored > 0) {
    report.precision = precision_sum / static_cast<double>(scored);
    report.recall = recall_sum / static_cast<double>(scored);
    report.mrr = mrr_sum / static_cast<double>(scored);
  }
  return report;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::json queries = nlohmann::json::array();
  for (const QueryRecord& record : report.queries) {
    nlohmann::json neighbors = nlohmann::json::array();
    for (const Neighbor& n : record.neighbors) {
      neighbors.push_back({{"id", n.id}, {"similarity", n.similarity}, {"rank", n.rank}});
    }
    nlohmann::json relevant = nlohmann::json::array();
    for (bool r : record.relevant) relevant.push_back(r);
    queries.push_back({{"seed", record.seed_id},
                       {"neighbors", std::move(neighbors)},
                       {"relevant", std::move(relevant)},
                       {"total_relevant", record.total_relevant},
                       {"precision", record.precision},
                       {"recall", record.recall},
                       {"reciprocal_rank", record.reciprocal_rank}});
  }
  const nlohmann::json out = {{"aspect", report.aspect},
                              {"k", report.k},
                              {"precision", report.precision},
                              {"recall", report.recall},
                              {"mrr", report.mrr},
                              {"skipped_queries", report.skipped_queries},
                              {"queries", std::move(queries)}};
  return out.dump(2);
}

}  // namespace aspectemb
