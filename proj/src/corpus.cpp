#include "aspectemb/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "aspectemb/rng.hpp"
#include "json.hpp"

namespace aspectemb {

namespace {

const std::set<std::string> kEmptyLabelSet;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

}  // namespace

const std::set<std::string>& Document::label_set(const std::string& aspect) const {
  auto it = labels.find(aspect);
  return it == labels.end() ? kEmptyLabelSet : it->second;
}

Corpus::Corpus(std::vector<Document> docs) : docs_(std::move(docs)) {
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    Document& doc = docs_[i];
    if (doc.id.empty()) fail("corpus: document #" + std::to_string(i + 1) + " has an empty id");
    if (!index_.emplace(doc.id, i).second) fail("corpus: duplicate document id '" + doc.id + "'");
    for (auto it = doc.labels.begin(); it != doc.labels.end();) {
      if (it->first.empty()) fail("corpus: document '" + doc.id + "' has an empty aspect name");
      if (it->second.count("") > 0) {
        fail("corpus: document '" + doc.id + "' has an empty label for aspect '" + it->first + "'");
      }
      if (it->second.empty()) {
        it = doc.labels.erase(it);
      } else {
        aspects_.insert(it->first);
        ++it;
      }
    }
  }
}

bool Corpus::contains(const std::string& id) const { return index_.count(id) > 0; }

const Document& Corpus::at(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) fail("corpus: unknown document id '" + id + "'");
  return docs_[it->second];
}

std::size_t utf8_length(const std::string& text) {
  std::size_t n = 0;
  for (unsigned char c : text) {
    if ((c & 0xC0) != 0x80) ++n;  // count non-continuation bytes
  }
  return n;
}

namespace {

using nlohmann::json;

std::map<std::string, std::set<std::string>> parse_label_map(const json& obj,
                                                             const std::string& where) {
  std::map<std::string, std::set<std::string>> labels;
  if (!obj.is_object()) fail(where + ": labels must be an object");
  for (const auto& [aspect, values] : obj.items()) {
    if (aspect.empty()) fail(where + ": empty aspect name");
    if (!values.is_array()) fail(where + ": labels for aspect '" + aspect + "' must be an array");
    std::set<std::string> set;
    for (const auto& v : values) {
      if (!v.is_string()) fail(where + ": non-string label for aspect '" + aspect + "'");
      const std::string label = v.get<std::string>();
      if (label.empty()) fail(where + ": empty label for aspect '" + aspect + "'");
      set.insert(label);
    }
    if (!set.empty()) labels.emplace(aspect, std::move(set));
  }
  return labels;
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    fail(where + ": missing or non-string field '" + std::string(key) + "'");
  }
  return it->get<std::string>();
}

}  // namespace

Corpus parse_jsonl(std::istream& in, const std::string& origin) {
  std::vector<Document> docs;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string where = origin + ":" + std::to_string(lineno);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(where + ": parse error: " + e.what());
    }
    if (!rec.is_object()) fail(where + ": record must be a JSON object");
    Document doc;
    doc.id = require_string(rec, "id", where);
    if (doc.id.empty()) fail(where + ": empty document id");
    doc.text = require_string(rec, "text", where);
    if (auto it = rec.find("labels"); it != rec.end()) {
      doc.labels = parse_label_map(*it, where);
    }
    if (!seen.insert(doc.id).second) fail(where + ": duplicate document id '" + doc.id + "'");
    docs.push_back(std::move(doc));
  }
  return Corpus(std::move(docs));
}

Corpus ingest_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open corpus file '" + path + "'");
  return parse_jsonl(in, path);
}

void write_jsonl(const Corpus& corpus, std::ostream& out) {
  for (const Document& doc : corpus.documents()) {
    json rec;
    rec["id"] = doc.id;
    rec["text"] = doc.text;
    if (!doc.labels.empty()) {
      json labels = json::object();
      for (const auto& [aspect, set] : doc.labels) {
        labels[aspect] = json(set);
      }
      rec["labels"] = std::move(labels);
    }
    out << rec.dump() << '\n';
  }
}

void write_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open '" + path + "' for writing");
  write_jsonl(corpus, out);
  if (!out) fail("write to '" + path + "' failed");
}

std::vector<KgEntityRecord> read_kg_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open KG record file '" + path + "'");
  std::vector<KgEntityRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string where = path + ":" + std::to_string(lineno);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(where + ": parse error: " + e.what());
    }
    if (!rec.is_object()) fail(where + ": record must be a JSON object");
    KgEntityRecord kg;
    kg.entity_id = require_string(rec, "entity_id", where);
    if (kg.entity_id.empty()) fail(where + ": empty entity_id");
    if (auto it = rec.find("article_text"); it != rec.end() && !it->is_null()) {
      if (!it->is_string()) fail(where + ": article_text must be a string");
      kg.article_text = it->get<std::string>();
    }
    if (auto it = rec.find("properties"); it != rec.end()) {
      kg.properties = parse_label_map(*it, where);
    }
    records.push_back(std::move(kg));
  }
  return records;
}

KgBuildResult build_from_kg(const std::vector<KgEntityRecord>& records,
                            const std::map<std::string, std::string>& aspect_properties) {
  if (aspect_properties.empty()) {
    throw std::invalid_argument("build_from_kg: aspect_properties must not be empty");
  }
  KgBuildResult result;
  std::vector<Document> docs;
  for (const KgEntityRecord& rec : records) {
    if (!rec.article_text.has_value()) {
      ++result.dropped_no_article;
      continue;
    }
    Document doc;
    doc.id = rec.entity_id;
    doc.text = *rec.article_text;
    for (const auto& [aspect, property] : aspect_properties) {
      auto it = rec.properties.find(property);
      if (it != rec.properties.end() && !it->second.empty()) {
        doc.labels.emplace(aspect, it->second);
      }
    }
    docs.push_back(std::move(doc));
  }
  result.corpus = Corpus(std::move(docs));
  return result;
}

Corpus filter_corpus(const Corpus& corpus, std::size_t max_label_instances,
                     std::size_t min_chars) {
  if (max_label_instances < 1) {
    throw std::invalid_argument("filter_corpus: max_label_instances must be >= 1");
  }

  // Pass 1: length filter. Instance counts below are taken on the survivors.
  std::vector<Document> kept;
  for (const Document& doc : corpus.documents()) {
    if (utf8_length(doc.text) >= min_chars) kept.push_back(doc);
  }

  std::map<std::pair<std::string, std::string>, std::size_t> counts;
  for (const Document& doc : kept) {
    for (const auto& [aspect, labels] : doc.labels) {
      for (const std::string& label : labels) ++counts[{aspect, label}];
    }
  }

  // Pass 2: strip over-capped labels; drop documents that lose all labels.
  // Documents that entered unlabeled are background and stay.
  std::vector<Document> out;
  for (Document& doc : kept) {
    const bool was_background = doc.is_background();
    for (auto it = doc.labels.begin(); it != doc.labels.end();) {
      std::set<std::string>& labels = it->second;
      for (auto lit = labels.begin(); lit != labels.end();) {
        if (counts[{it->first, *lit}] > max_label_instances) {
          lit = labels.erase(lit);
        } else {
          ++lit;
        }
      }
      it = labels.empty() ? doc.labels.erase(it) : std::next(it);
    }
    if (was_background || !doc.labels.empty()) out.push_back(std::move(doc));
  }
  return Corpus(std::move(out));
}

std::pair<Corpus, Corpus> split(const Corpus& corpus, const SplitSpec& spec) {
  if (corpus.empty()) throw std::invalid_argument("split: corpus is empty");
  if (!(spec.train_ratio > 0.0 && spec.train_ratio < 1.0)) {
    throw std::invalid_argument("split: train_ratio must be in (0,1)");
  }
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(spec.seed);
  rng.shuffle(order);

  const auto n_train = static_cast<std::size_t>(
      static_cast<double>(corpus.size()) * spec.train_ratio);
  std::vector<Document> train_docs, test_docs;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Document& doc = corpus.documents()[order[i]];
    (i < n_train ? train_docs : test_docs).push_back(doc);
  }
  return {Corpus(std::move(train_docs)), Corpus(std::move(test_docs))};
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats stats;
  stats.total_documents = corpus.size();
  std::map<std::string, std::set<std::string>> distinct;
  for (const Document& doc : corpus.documents()) {
    if (doc.is_background()) {
      ++stats.background_documents;
      continue;
    }
    for (const auto& [aspect, labels] : doc.labels) {
      ++stats.per_aspect[aspect].documents;
      distinct[aspect].insert(labels.begin(), labels.end());
    }
  }
  for (const auto& [aspect, labels] : distinct) {
    stats.per_aspect[aspect].distinct_labels = labels.size();
  }
  return stats;
}

std::string stats_to_json(const CorpusStats& stats) {
  nlohmann::json out;
  out["total_documents"] = stats.total_documents;
  out["background_documents"] = stats.background_documents;
  out["aspects"] = nlohmann::json::object();
  for (const auto& [aspect, a] : stats.per_aspect) {
    out["aspects"][aspect] = {{"documents", a.documents},
                              {"labels", a.distinct_labels}};
  }
  return out.dump(2);
}

}  // namespace aspectemb
