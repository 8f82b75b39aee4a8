#include "aspectemb/triplets.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "aspectemb/rng.hpp"
#include "json.hpp"

namespace aspectemb {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

bool sets_intersect(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.size() > b.size()) return sets_intersect(b, a);
  for (const std::string& x : a) {
    if (b.count(x) > 0) return true;
  }
  return false;
}

void check_scheme_shape(const SamplingScheme& scheme) {
  const bool multi =
      scheme.kind == SchemeKind::Intersection || scheme.kind == SchemeKind::Union;
  if (multi) {
    if (scheme.aspects.size() < 2) fail("scheme: multi-aspect schemes need >= 2 aspects");
  } else if (scheme.aspects.size() != 1) {
    fail("scheme: single-aspect schemes need exactly 1 aspect");
  }
  std::set<std::string> uniq(scheme.aspects.begin(), scheme.aspects.end());
  if (uniq.size() != scheme.aspects.size()) fail("scheme: duplicate aspect names");
}

const char* kind_name(SchemeKind kind) {
  switch (kind) {
    case SchemeKind::SingleAspect: return "single_aspect";
    case SchemeKind::Intersection: return "intersection";
    case SchemeKind::Union: return "union";
    case SchemeKind::PairsOnly: return "pairs_only";
  }
  fail("scheme: invalid kind");
}

SchemeKind kind_from_name(const std::string& name) {
  if (name == "single_aspect") return SchemeKind::SingleAspect;
  if (name == "intersection") return SchemeKind::Intersection;
  if (name == "union") return SchemeKind::Union;
  if (name == "pairs_only") return SchemeKind::PairsOnly;
  fail("scheme: unknown kind '" + name + "'");
}

}  // namespace

SamplingScheme SamplingScheme::single(std::string aspect) {
  SamplingScheme s{SchemeKind::SingleAspect, {std::move(aspect)}};
  check_scheme_shape(s);
  return s;
}

SamplingScheme SamplingScheme::intersection(std::vector<std::string> aspects) {
  SamplingScheme s{SchemeKind::Intersection, std::move(aspects)};
  check_scheme_shape(s);
  return s;
}

SamplingScheme SamplingScheme::set_union(std::vector<std::string> aspects) {
  SamplingScheme s{SchemeKind::Union, std::move(aspects)};
  check_scheme_shape(s);
  return s;
}

SamplingScheme SamplingScheme::pairs_only(std::string aspect) {
  SamplingScheme s{SchemeKind::PairsOnly, {std::move(aspect)}};
  check_scheme_shape(s);
  return s;
}

std::string SamplingScheme::to_json() const {
  nlohmann::json j;
  j["kind"] = kind_name(kind);
  j["aspects"] = aspects;
  return j.dump();
}

SamplingScheme SamplingScheme::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  SamplingScheme s;
  s.kind = kind_from_name(j.at("kind").get<std::string>());
  s.aspects = j.at("aspects").get<std::vector<std::string>>();
  check_scheme_shape(s);
  return s;
}

bool is_positive(const Document& a, const Document& b, const SamplingScheme& scheme) {
  check_scheme_shape(scheme);
  switch (scheme.kind) {
    case SchemeKind::SingleAspect:
    case SchemeKind::PairsOnly:
      return sets_intersect(a.label_set(scheme.aspects[0]), b.label_set(scheme.aspects[0]));
    case SchemeKind::Intersection:
      return std::all_of(scheme.aspects.begin(), scheme.aspects.end(),
                         [&](const std::string& aspect) {
                           return sets_intersect(a.label_set(aspect), b.label_set(aspect));
                         });
    case SchemeKind::Union:
      return std::any_of(scheme.aspects.begin(), scheme.aspects.end(),
                         [&](const std::string& aspect) {
                           return sets_intersect(a.label_set(aspect), b.label_set(aspect));
                         });
  }
  return false;
}

bool is_negative(const Document& a, const Document& b, const SamplingScheme& scheme) {
  check_scheme_shape(scheme);
  switch (scheme.kind) {
    case SchemeKind::SingleAspect:
    case SchemeKind::PairsOnly: {
      const auto& anchor_labels = a.label_set(scheme.aspects[0]);
      return !anchor_labels.empty() &&
             !sets_intersect(anchor_labels, b.label_set(scheme.aspects[0]));
    }
    case SchemeKind::Intersection:
    case SchemeKind::Union:
      // Strict reading: disjoint on every aspect of the scheme.
      return std::none_of(scheme.aspects.begin(), scheme.aspects.end(),
                          [&](const std::string& aspect) {
                            return sets_intersect(a.label_set(aspect), b.label_set(aspect));
                          });
  }
  return false;
}

void validate_scheme(const SamplingScheme& scheme, const Corpus& corpus) {
  check_scheme_shape(scheme);
  for (const std::string& aspect : scheme.aspects) {
    if (corpus.aspects().count(aspect) == 0) {
      fail("scheme: unknown aspect '" + aspect + "'");
    }
  }
}

TripletGenResult generate_triplets(const Corpus& corpus, const SamplingScheme& scheme,
                                   const TripletConfig& cfg) {
  validate_scheme(scheme, corpus);
  if (cfg.per_anchor < 1) throw std::invalid_argument("generate_triplets: per_anchor must be >= 1");
  if (cfg.background_negative_fraction < 0.0 || cfg.background_negative_fraction > 1.0) {
    throw std::invalid_argument("generate_triplets: background_negative_fraction must be in [0,1]");
  }

  const auto& docs = corpus.documents();
  std::vector<std::size_t> background_pool;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (docs[i].is_background()) background_pool.push_back(i);
  }

  Rng rng(cfg.seed);
  TripletGenResult result;
  bool any_positive = false;

  for (std::size_t a = 0; a < docs.size(); ++a) {
    const Document& anchor = docs[a];
    if (anchor.is_background()) continue;

    std::vector<std::size_t> positives;
    std::vector<std::size_t> labeled_negatives;
    for (std::size_t b = 0; b < docs.size(); ++b) {
      if (b == a) continue;
      if (is_positive(anchor, docs[b], scheme)) {
        positives.push_back(b);
      } else if (!docs[b].is_background() && is_negative(anchor, docs[b], scheme)) {
        labeled_negatives.push_back(b);
      }
    }
    if (positives.empty()) {
      ++result.anchors_without_positive;
      continue;
    }
    any_positive = true;
    if (labeled_negatives.empty() && background_pool.empty()) {
      ++result.anchors_without_negative;
      continue;
    }

    for (std::size_t t = 0; t < cfg.per_anchor; ++t) {
      const std::size_t p = positives[rng.uniform_index(positives.size())];
      const bool want_background = rng.uniform_real() < cfg.background_negative_fraction;
      const std::vector<std::size_t>* pool =
          want_background ? &background_pool : &labeled_negatives;
      if (pool->empty()) pool = want_background ? &labeled_negatives : &background_pool;
      const std::size_t n = (*pool)[rng.uniform_index(pool->size())];
      result.triplets.push_back({anchor.id, docs[p].id, docs[n].id, scheme});
    }
  }

  if (result.triplets.empty()) {
    if (!any_positive) fail("generate_triplets: no valid positives in the corpus");
    fail("generate_triplets: no valid negatives in the corpus");
  }
  return result;
}

std::vector<Pair> generate_pairs(const Corpus& corpus, const std::string& aspect,
                                 std::uint64_t seed) {
  const SamplingScheme scheme = SamplingScheme::pairs_only(aspect);
  validate_scheme(scheme, corpus);

  const auto& docs = corpus.documents();
  std::vector<Pair> pairs;
  for (std::size_t a = 0; a < docs.size(); ++a) {
    if (docs[a].label_set(aspect).empty()) continue;
    for (std::size_t b = 0; b < docs.size(); ++b) {
      if (b == a) continue;
      if (is_positive(docs[a], docs[b], scheme)) {
        pairs.push_back({docs[a].id, docs[b].id, aspect});
      }
    }
  }
  if (pairs.empty()) fail("generate_pairs: no positive pairs for aspect '" + aspect + "'");
  Rng rng(seed);
  rng.shuffle(pairs);
  return pairs;
}

bool validate_triplet(const Triplet& t, const Corpus& corpus) {
  validate_scheme(t.scheme, corpus);
  const Document& anchor = corpus.at(t.anchor_id);
  const Document& positive = corpus.at(t.positive_id);
  const Document& negative = corpus.at(t.negative_id);
  if (t.anchor_id == t.positive_id || t.anchor_id == t.negative_id ||
      t.positive_id == t.negative_id) {
    return false;
  }
  return is_positive(anchor, positive, t.scheme) && is_negative(anchor, negative, t.scheme);
}

namespace {

using nlohmann::json;

std::vector<json> read_jsonl_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open '" + path + "'");
  std::vector<json> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    try {
      records.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      fail(path + ":" + std::to_string(lineno) + ": parse error: " + e.what());
    }
  }
  return records;
}

}  // namespace

void write_triplets_jsonl(const std::vector<Triplet>& triplets, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open '" + path + "' for writing");
  for (const Triplet& t : triplets) {
    json rec;
    rec["anchor"] = t.anchor_id;
    rec["positive"] = t.positive_id;
    rec["negative"] = t.negative_id;
    rec["scheme"] = json::parse(t.scheme.to_json());
    out << rec.dump() << '\n';
  }
}

std::vector<Triplet> read_triplets_jsonl(const std::string& path) {
  std::vector<Triplet> triplets;
  for (const json& rec : read_jsonl_records(path)) {
    Triplet t;
    t.anchor_id = rec.at("anchor").get<std::string>();
    t.positive_id = rec.at("positive").get<std::string>();
    t.negative_id = rec.at("negative").get<std::string>();
    t.scheme = SamplingScheme::from_json(rec.at("scheme").dump());
    triplets.push_back(std::move(t));
  }
  return triplets;
}

void write_pairs_jsonl(const std::vector<Pair>& pairs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open '" + path + "' for writing");
  for (const Pair& p : pairs) {
    json rec;
    rec["anchor"] = p.anchor_id;
    rec["positive"] = p.positive_id;
    rec["aspect"] = p.aspect;
    out << rec.dump() << '\n';
  }
}

std::vector<Pair> read_pairs_jsonl(const std::string& path) {
  std::vector<Pair> pairs;
  for (const json& rec : read_jsonl_records(path)) {
    Pair p;
    p.anchor_id = rec.at("anchor").get<std::string>();
    p.positive_id = rec.at("positive").get<std::string>();
    p.aspect = rec.at("aspect").get<std::string>();
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace aspectemb
